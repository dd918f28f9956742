//! TSV and JSON writers for ANOVA results: one row per model term sorted by
//! sum of squares descending, residual last.

use std::io::Write;

use serde_json::json;

use super::anova::{AnovaResult, AnovaRow};

fn component_name(term: &[String]) -> String {
    term.join(" : ")
}

fn sorted_rows(result: &AnovaResult<f64>) -> Vec<&AnovaRow<f64>> {
    let mut rows: Vec<&AnovaRow<f64>> = result.rows.iter().collect();
    rows.sort_by(|a, b| {
        b.ss.partial_cmp(&a.ss)
            .unwrap()
            .then_with(|| component_name(&a.term).cmp(&component_name(&b.term)))
    });
    rows
}

/// Tab-separated table with a header line; numbers carry four decimals,
/// p-values below 1e-4 print as `< 0.0001`.
pub fn write_anova_tsv(
    result: &AnovaResult<f64>,
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(out, "Component\tSS\tDF\tMS\tF\tPR(>F)\tomega_p2")?;
    for row in sorted_rows(result) {
        let p = if row.p < 1e-4 {
            "< 0.0001".to_string()
        } else {
            format!("{:.4}", row.p)
        };
        writeln!(
            out,
            "{}\t{:.4}\t{}\t{:.4}\t{:.4}\t{}\t{:.4}",
            component_name(&row.term),
            row.ss,
            row.df,
            row.ms,
            row.f,
            p,
            row.omega_p2
        )?;
    }
    writeln!(
        out,
        "Residual\t{:.4}\t{}\t{:.4}\t--\t--\t--",
        result.residual_ss, result.residual_df, result.residual_ms
    )?;
    Ok(())
}

/// Full-precision JSON for machine consumption, same ordering as the TSV.
pub fn write_anova_json(
    result: &AnovaResult<f64>,
    out: &mut impl Write,
) -> std::io::Result<()> {
    let rows: Vec<serde_json::Value> = sorted_rows(result)
        .iter()
        .map(|row| {
            json!({
                "component": component_name(&row.term),
                "term": row.term,
                "ss": row.ss,
                "df": row.df,
                "ms": row.ms,
                "f": row.f,
                "p": row.p,
                "omega_p2": row.omega_p2,
            })
        })
        .collect();
    let doc = json!({
        "rows": rows,
        "residual": {
            "ss": result.residual_ss,
            "df": result.residual_df,
            "ms": result.residual_ms,
        },
        "total_ss": result.total_ss,
        "n": result.n,
    });
    out.write_all(serde_json::to_string_pretty(&doc)?.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}
