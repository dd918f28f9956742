//! Workspace directory layout: all artifacts live under one root so grid
//! sweeps can address hundreds of runs by config id instead of flags.
//!
//! ```text
//! <root>/
//!   workspace.json      tool version + prompt checksum
//!   corpus/             chunked corpus (corpus.meta.json, chunks.jsonl)
//!   indexes/            sparse.json, dense.bin
//!   runs/<config>/      run.jsonl + manifest.json per executed config
//!   evals/<config>.json judge reports
//!   reports/            rank / anova / compare outputs
//! ```

use std::io;
use std::path::{Path, PathBuf};

use grag_core::judge::sanitize_file_stem;
use grag_core::prompts::PromptRegistry;

pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Opens the workspace, creating the layout and manifest if absent.
    pub fn create(root: &Path) -> io::Result<Self> {
        let ws = Workspace {
            root: root.to_path_buf(),
        };
        for dir in [
            ws.corpus_dir(),
            ws.indexes_dir(),
            ws.runs_dir(),
            ws.evals_dir(),
            ws.reports_dir(),
        ] {
            std::fs::create_dir_all(dir)?;
        }
        let manifest = serde_json::json!({
            "tool": "rag",
            "version": env!("CARGO_PKG_VERSION"),
            "prompts_checksum": PromptRegistry::default().checksum(),
        });
        std::fs::write(
            ws.root.join("workspace.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(ws)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn indexes_dir(&self) -> PathBuf {
        self.root.join("indexes")
    }

    pub fn sparse_index_path(&self) -> PathBuf {
        self.indexes_dir().join("sparse.json")
    }

    pub fn dense_index_path(&self) -> PathBuf {
        self.indexes_dir().join("dense.bin")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, config_id: &str) -> PathBuf {
        self.runs_dir().join(sanitize_file_stem(config_id))
    }

    pub fn evals_dir(&self) -> PathBuf {
        self.root.join("evals")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}
