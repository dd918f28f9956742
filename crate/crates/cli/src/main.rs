//! `rag`: the command-line surface for the retrieval lab. Builds indexes,
//! executes single runs and grid sweeps, judges runs, and renders ranking,
//! ANOVA, and comparison reports out of a workspace directory.

mod workspace;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use grag_core::corpus::{
    default_category_profile, ingest_corpus_file, load_qa_collection, sample_category_profile,
    CategoryProfileConfig, ChunkedCorpus,
};
use grag_core::dense::{build_dense_index, DenseIndex, HashEmbedder};
use grag_core::gateway::{ChatGateway, HttpGateway, StubGateway};
use grag_core::judge::{evaluate_run, EvalReport};
use grag_core::pipeline::{run_pipeline, PipelineConfig, PipelineContext, RunResult};
use grag_core::prompts::PromptRegistry;
use grag_core::retrieval::Retriever;
use grag_core::sparse::{build_sparse_index, Bm25Params, SparseIndex};
use grag_core::stats::compare::{pairwise_compare, Metric};
use grag_core::stats::grid::{axis_value, enumerate_grid, rank_configs, GridSpec};
use grag_core::stats::report::{write_anova_json, write_anova_tsv};
use grag_core::stats::{anova, ObservationTable};

use workspace::Workspace;

#[derive(Parser)]
#[command(name = "rag", version, about = "RAG pipeline and evaluation lab")]
struct Cli {
    /// Answer all LLM calls from a scripted stub instead of a live endpoint.
    #[arg(long, global = true, value_name = "FILE")]
    stub_script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk a JSONL corpus and build retrieval indexes into the workspace.
    Index {
        #[arg(long, value_name = "DIR")]
        workspace: PathBuf,
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// Word budget per chunk.
        #[arg(long, default_value_t = 512)]
        max_tokens: usize,
        /// Dimension of the hashing embedder behind the dense index.
        #[arg(long, default_value_t = 256)]
        dense_dim: usize,
        /// Build only the BM25 index.
        #[arg(long, conflicts_with = "dense_only")]
        sparse_only: bool,
        /// Build only the dense index.
        #[arg(long)]
        dense_only: bool,
    },
    /// Execute one pipeline configuration over a QA collection.
    Run {
        #[arg(long, value_name = "DIR")]
        workspace: PathBuf,
        /// Pipeline config JSON; omitted fields take defaults.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "FILE")]
        questions: PathBuf,
    },
    /// Execute every configuration of a grid spec; completed configs are
    /// skipped, so an interrupted sweep resumes where it stopped.
    Grid {
        #[arg(long, value_name = "DIR")]
        workspace: PathBuf,
        /// Grid spec JSON: {"axes": [[name, [values...]], ...], "frozen": {...}}.
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        #[arg(long, value_name = "FILE")]
        questions: PathBuf,
    },
    /// Judge a saved run with the LLM judge and persist the eval report.
    Judge {
        #[arg(long, value_name = "DIR")]
        workspace: PathBuf,
        /// A run directory under runs/ (containing run.jsonl).
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        #[arg(long, value_name = "FILE")]
        qa: PathBuf,
    },
    /// Rank all evaluated configs; the champion prints first.
    Rank {
        #[arg(long, value_name = "DIR")]
        workspace: PathBuf,
    },
    /// N-way ANOVA of the evaluated grid.
    Anova {
        #[arg(long, value_name = "DIR")]
        workspace: PathBuf,
        /// The grid spec the runs were generated from.
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        /// Model terms JSON: a list of factor-name lists. Defaults to all
        /// main effects of the grid's varying axes.
        #[arg(long, value_name = "FILE")]
        terms: Option<PathBuf>,
        /// "relevance" or "faithfulness".
        #[arg(long, default_value = "relevance")]
        metric: String,
    },
    /// Per-question win/tie counts between two eval reports.
    Compare {
        #[arg(long, value_name = "FILE")]
        a: PathBuf,
        #[arg(long, value_name = "FILE")]
        b: PathBuf,
        /// Also write the report under <workspace>/reports/.
        #[arg(long, value_name = "DIR")]
        workspace: Option<PathBuf>,
    },
    /// Draw question-category combinations from a probability profile.
    SampleCategories {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Profile JSON; defaults to the built-in profile.
        #[arg(long, value_name = "FILE")]
        profile: Option<PathBuf>,
    },
}

/// Exit 2 for bad input or configuration, 1 for failures while executing.
enum CliError {
    Usage(String),
    Partial(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Partial(_) => 1,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Partial(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn make_gateway(stub_script: &Option<PathBuf>) -> Result<Box<dyn ChatGateway>, CliError> {
    match stub_script {
        Some(path) => Ok(Box::new(StubGateway::from_script_file(path).map_err(usage)?)),
        None => Ok(Box::new(HttpGateway::from_env().map_err(usage)?)),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

struct LoadedIndexes {
    corpus: ChunkedCorpus,
    sparse: Option<SparseIndex>,
    dense: Option<(DenseIndex, HashEmbedder)>,
}

fn load_indexes(ws: &Workspace) -> Result<LoadedIndexes, CliError> {
    let corpus = ChunkedCorpus::load(&ws.corpus_dir())
        .map_err(|e| usage(format!("no built corpus in workspace (run `rag index`): {e}")))?;
    let sparse = match ws.sparse_index_path() {
        p if p.is_file() => Some(SparseIndex::load(&p).map_err(usage)?),
        _ => None,
    };
    let dense = match ws.dense_index_path() {
        p if p.is_file() => {
            let index = DenseIndex::load(&p).map_err(usage)?;
            let embedder = HashEmbedder::new(index.dim());
            Some((index, embedder))
        }
        _ => None,
    };
    Ok(LoadedIndexes {
        corpus,
        sparse,
        dense,
    })
}

fn execute_run(
    ws: &Workspace,
    config: &PipelineConfig,
    questions: &[grag_core::corpus::QAPair],
    gateway: &dyn ChatGateway,
    indexes: &LoadedIndexes,
    prompts: &PromptRegistry,
) -> Result<RunResult, CliError> {
    let retriever = Retriever::new(
        indexes.sparse.as_ref(),
        indexes
            .dense
            .as_ref()
            .map(|(index, embedder)| (index, embedder as &dyn grag_core::dense::Embedder)),
    );
    let ctx = PipelineContext {
        gateway,
        prompts,
        corpus: &indexes.corpus,
        retriever,
    };
    let result = run_pipeline(config, questions, &ctx)
        .map_err(|e| CliError::Partial(e.to_string()))?;
    let dir = ws.run_dir(&result.config_id);
    result
        .save(&dir)
        .map_err(|e| CliError::Partial(format!("saving run: {e}")))?;
    Ok(result)
}

fn cmd_index(
    workspace: &Path,
    corpus_path: &Path,
    max_tokens: usize,
    dense_dim: usize,
    sparse_only: bool,
    dense_only: bool,
) -> Result<(), CliError> {
    let ws = Workspace::create(workspace).map_err(usage)?;
    let corpus = ingest_corpus_file(corpus_path, max_tokens).map_err(usage)?;
    corpus.save(&ws.corpus_dir()).map_err(usage)?;
    let stats = corpus.stats();
    println!(
        "chunked {} documents into {} chunks",
        stats.doc_count, stats.chunk_count
    );
    if !dense_only {
        let index = build_sparse_index(&corpus, Bm25Params::default()).map_err(usage)?;
        index.save(&ws.sparse_index_path()).map_err(usage)?;
        println!("sparse index -> {}", ws.sparse_index_path().display());
    }
    if !sparse_only {
        let embedder = HashEmbedder::new(dense_dim);
        let index = build_dense_index(&corpus, &embedder).map_err(usage)?;
        index.save(&ws.dense_index_path()).map_err(usage)?;
        println!("dense index ({dense_dim}d) -> {}", ws.dense_index_path().display());
    }
    Ok(())
}

fn cmd_run(
    workspace: &Path,
    config_path: &Path,
    questions_path: &Path,
    stub_script: &Option<PathBuf>,
) -> Result<(), CliError> {
    let ws = Workspace::create(workspace).map_err(usage)?;
    let config: PipelineConfig = read_json(config_path)?;
    let questions = load_qa_collection(questions_path).map_err(usage)?;
    if questions.is_empty() {
        return Err(usage("QA collection is empty"));
    }
    let gateway = make_gateway(stub_script)?;
    let indexes = load_indexes(&ws)?;
    let prompts = PromptRegistry::default();
    let result = execute_run(&ws, &config, &questions, gateway.as_ref(), &indexes, &prompts)?;
    let failed = result.records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "config {}: {} questions, {} failed -> {}",
        result.config_id,
        result.records.len(),
        failed,
        ws.run_dir(&result.config_id).display()
    );
    if failed > 0 {
        return Err(CliError::Partial(format!("{failed} questions failed")));
    }
    Ok(())
}

fn cmd_grid(
    workspace: &Path,
    grid_path: &Path,
    questions_path: &Path,
    stub_script: &Option<PathBuf>,
) -> Result<(), CliError> {
    let ws = Workspace::create(workspace).map_err(usage)?;
    let spec: GridSpec = read_json(grid_path)?;
    let configs = enumerate_grid(&spec).map_err(usage)?;
    let questions = load_qa_collection(questions_path).map_err(usage)?;
    if questions.is_empty() {
        return Err(usage("QA collection is empty"));
    }
    let gateway = make_gateway(stub_script)?;
    let indexes = load_indexes(&ws)?;
    let prompts = PromptRegistry::default();

    let mut statuses: BTreeMap<String, String> = BTreeMap::new();
    let (mut executed, mut skipped, mut failed) = (0usize, 0usize, 0usize);
    for config in &configs {
        let config_id = config.config_id();
        if ws.run_dir(&config_id).join("run.jsonl").is_file() {
            skipped += 1;
            statuses.insert(config_id, "skipped".to_string());
            continue;
        }
        match execute_run(&ws, config, &questions, gateway.as_ref(), &indexes, &prompts) {
            Ok(result) => {
                let errors = result.records.iter().filter(|r| r.error.is_some()).count();
                executed += 1;
                if errors > 0 {
                    failed += 1;
                    statuses.insert(config_id, format!("{errors} questions failed"));
                } else {
                    statuses.insert(config_id, "ok".to_string());
                }
            }
            Err(e) => {
                failed += 1;
                statuses.insert(config_id, e.message().to_string());
            }
        }
    }
    let manifest = serde_json::json!({
        "grid_spec": spec,
        "configs": statuses,
        "executed": executed,
        "skipped": skipped,
        "failed": failed,
    });
    let manifest_path = ws.runs_dir().join("grid-manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).map_err(usage)?,
    )
    .map_err(|e| CliError::Partial(e.to_string()))?;
    println!(
        "{} configs: {executed} executed, {skipped} skipped, {failed} failed -> {}",
        configs.len(),
        manifest_path.display()
    );
    if failed > 0 {
        return Err(CliError::Partial(format!("{failed} configs failed")));
    }
    Ok(())
}

fn cmd_judge(
    workspace: &Path,
    run_dir: &Path,
    qa_path: &Path,
    stub_script: &Option<PathBuf>,
) -> Result<(), CliError> {
    let ws = Workspace::create(workspace).map_err(usage)?;
    let run = RunResult::load(run_dir)
        .map_err(|e| usage(format!("cannot load run {}: {e}", run_dir.display())))?;
    let qa = load_qa_collection(qa_path).map_err(usage)?;
    let gateway = make_gateway(stub_script)?;
    let prompts = PromptRegistry::default();
    let report = evaluate_run(gateway.as_ref(), &prompts, &run, &qa).map_err(usage)?;
    let path = report
        .save(&ws.evals_dir())
        .map_err(|e| CliError::Partial(e.to_string()))?;
    println!(
        "avg relevance {:.4}, avg faithfulness {:.4} -> {}",
        report.avg_relevance,
        report.avg_faithfulness,
        path.display()
    );
    let errored = report
        .per_question
        .values()
        .filter(|s| !s.errors.is_empty())
        .count();
    if errored > 0 {
        return Err(CliError::Partial(format!("{errored} questions not judged")));
    }
    Ok(())
}

fn load_eval_reports(ws: &Workspace) -> Result<BTreeMap<String, EvalReport>, CliError> {
    let mut reports = BTreeMap::new();
    let dir = ws.evals_dir();
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| usage(format!("no evals in workspace ({}): {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(usage)?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let report = EvalReport::load(&path).map_err(usage)?;
            reports.insert(report.config_id.clone(), report);
        }
    }
    Ok(reports)
}

fn cmd_rank(workspace: &Path) -> Result<(), CliError> {
    let ws = Workspace::create(workspace).map_err(usage)?;
    let reports = load_eval_reports(&ws)?;
    let ranked = rank_configs(&reports).map_err(usage)?;
    let mut tsv = String::from("rank\tconfig_id\tavg_relevance\tavg_faithfulness\n");
    for (i, entry) in ranked.iter().enumerate() {
        tsv.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\n",
            i + 1,
            entry.config_id,
            entry.avg_relevance,
            entry.avg_faithfulness
        ));
    }
    print!("{tsv}");
    println!("champion: {}", ranked[0].config_id);
    std::fs::write(ws.reports_dir().join("rank.tsv"), &tsv)
        .map_err(|e| CliError::Partial(e.to_string()))?;
    std::fs::write(
        ws.reports_dir().join("rank.json"),
        serde_json::to_string_pretty(&ranked).map_err(usage)?,
    )
    .map_err(|e| CliError::Partial(e.to_string()))?;
    Ok(())
}

fn cmd_anova(
    workspace: &Path,
    grid_path: &Path,
    terms_path: &Option<PathBuf>,
    metric: &str,
) -> Result<(), CliError> {
    let metric: Metric = metric.parse().map_err(usage)?;
    let ws = Workspace::create(workspace).map_err(usage)?;
    let spec: GridSpec = read_json(grid_path)?;
    let configs = enumerate_grid(&spec).map_err(usage)?;
    let reports = load_eval_reports(&ws)?;

    let mut rows = Vec::with_capacity(configs.len());
    for config in &configs {
        let config_id = config.config_id();
        let report = reports.get(&config_id).ok_or_else(|| {
            usage(format!("config {config_id} has no eval report; judge its run first"))
        })?;
        let response = match metric {
            Metric::Relevance => report.avg_relevance,
            Metric::Faithfulness => report.avg_faithfulness,
        };
        let levels: BTreeMap<String, String> = spec
            .axes
            .iter()
            .map(|(axis, _)| Ok((axis.clone(), axis_value(config, axis).map_err(usage)?)))
            .collect::<Result<_, CliError>>()?;
        rows.push((levels, response));
    }
    let table = ObservationTable::new(rows).map_err(usage)?;
    let terms: Vec<Vec<String>> = match terms_path {
        Some(path) => read_json(path)?,
        None => spec.axes.iter().map(|(axis, _)| vec![axis.clone()]).collect(),
    };
    let result = anova(&table, &terms).map_err(usage)?;

    let mut tsv = Vec::new();
    write_anova_tsv(&result, &mut tsv).map_err(|e| CliError::Partial(e.to_string()))?;
    print!("{}", String::from_utf8_lossy(&tsv));
    std::fs::write(ws.reports_dir().join("anova.tsv"), &tsv)
        .map_err(|e| CliError::Partial(e.to_string()))?;
    let mut json = Vec::new();
    write_anova_json(&result, &mut json).map_err(|e| CliError::Partial(e.to_string()))?;
    std::fs::write(ws.reports_dir().join("anova.json"), &json)
        .map_err(|e| CliError::Partial(e.to_string()))?;
    Ok(())
}

fn cmd_compare(a_path: &Path, b_path: &Path, workspace: &Option<PathBuf>) -> Result<(), CliError> {
    let a = EvalReport::load(a_path).map_err(usage)?;
    let b = EvalReport::load(b_path).map_err(usage)?;
    let relevance = pairwise_compare(&a, &b, Metric::Relevance).map_err(usage)?;
    let faithfulness = pairwise_compare(&a, &b, Metric::Faithfulness).map_err(usage)?;
    println!("metric\twins_a\twins_b\tties\tn");
    for report in [&relevance, &faithfulness] {
        println!(
            "{}\t{}\t{}\t{}\t{}",
            report.metric, report.wins_a, report.wins_b, report.ties, report.n_questions
        );
    }
    if let Some(root) = workspace {
        let ws = Workspace::create(root).map_err(usage)?;
        let doc = serde_json::json!({
            "a": a.config_id,
            "b": b.config_id,
            "relevance": relevance,
            "faithfulness": faithfulness,
        });
        std::fs::write(
            ws.reports_dir().join("compare.json"),
            serde_json::to_string_pretty(&doc).map_err(usage)?,
        )
        .map_err(|e| CliError::Partial(e.to_string()))?;
    }
    Ok(())
}

fn cmd_sample_categories(
    n: usize,
    seed: u64,
    profile_path: &Option<PathBuf>,
) -> Result<(), CliError> {
    let profile: CategoryProfileConfig = match profile_path {
        Some(path) => read_json(path)?,
        None => default_category_profile(),
    };
    for i in 0..n {
        let sample =
            sample_category_profile(&profile, seed.wrapping_add(i as u64)).map_err(usage)?;
        println!("{}", serde_json::to_string(&sample).map_err(usage)?);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Index {
            workspace,
            corpus,
            max_tokens,
            dense_dim,
            sparse_only,
            dense_only,
        } => cmd_index(workspace, corpus, *max_tokens, *dense_dim, *sparse_only, *dense_only),
        Command::Run {
            workspace,
            config,
            questions,
        } => cmd_run(workspace, config, questions, &cli.stub_script),
        Command::Grid {
            workspace,
            grid,
            questions,
        } => cmd_grid(workspace, grid, questions, &cli.stub_script),
        Command::Judge { workspace, run, qa } => {
            cmd_judge(workspace, run, qa, &cli.stub_script)
        }
        Command::Rank { workspace } => cmd_rank(workspace),
        Command::Anova {
            workspace,
            grid,
            terms,
            metric,
        } => cmd_anova(workspace, grid, terms, metric),
        Command::Compare { a, b, workspace } => cmd_compare(a, b, workspace),
        Command::SampleCategories { n, seed, profile } => {
            cmd_sample_categories(*n, *seed, profile)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
