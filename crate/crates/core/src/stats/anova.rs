//! Balanced N-way ANOVA by mean contrasts. For balanced full factorials the
//! Type I/II/III decompositions coincide, so sums of squares come straight
//! from inclusion-exclusion over cell means; unbalanced tables are rejected
//! rather than approximated.

use std::collections::BTreeMap;

use num_traits::Float;
use thiserror::Error;

use super::special::{f_upper_tail, SpecialError};

#[derive(Debug, Error)]
pub enum AnovaError {
    #[error("observation table has no rows")]
    EmptyTable,
    #[error("row {0} does not carry the same factor set as the first row")]
    RaggedRow(usize),
    #[error("model term references unknown factor '{0}'")]
    UnknownFactor(String),
    #[error("model term is empty")]
    EmptyTerm,
    #[error("model term repeats factor '{0}'")]
    RepeatedFactor(String),
    #[error("table is not a balanced full factorial: cell {0} appears {1} times, expected {2}")]
    Unbalanced(String, usize, usize),
    #[error("residual degrees of freedom {0} is not positive; drop model terms")]
    ResidualDf(i64),
    #[error("model sums of squares exceed the total (residual SS = {0}); terms are not independent")]
    Inconsistent(f64),
    #[error("partial omega squared denominator is not positive")]
    OmegaDenominator,
    #[error(transparent)]
    Special(#[from] SpecialError),
}

/// Rows of (factor level assignment, response). Factor level lists are kept
/// sorted so output ordering never depends on row order.
#[derive(Debug, Clone)]
pub struct ObservationTable<T> {
    pub factors: BTreeMap<String, Vec<String>>,
    pub rows: Vec<(BTreeMap<String, String>, T)>,
}

impl<T: Float> ObservationTable<T> {
    pub fn new(rows: Vec<(BTreeMap<String, String>, T)>) -> Result<Self, AnovaError> {
        let first = rows.first().ok_or(AnovaError::EmptyTable)?;
        let names: Vec<&String> = first.0.keys().collect();
        let mut factors: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, (levels, _)) in rows.iter().enumerate() {
            if levels.keys().collect::<Vec<_>>() != names {
                return Err(AnovaError::RaggedRow(i));
            }
            for (factor, level) in levels {
                let list = factors.entry(factor.clone()).or_default();
                if !list.contains(level) {
                    list.push(level.clone());
                }
            }
        }
        for list in factors.values_mut() {
            list.sort();
        }
        Ok(ObservationTable { factors, rows })
    }

    /// Every full level combination must appear the same number of times.
    fn check_balanced(&self) -> Result<usize, AnovaError> {
        let cells: usize = self.factors.values().map(Vec::len).product();
        let expected = self.rows.len() / cells;
        if expected == 0 || expected * cells != self.rows.len() {
            return Err(AnovaError::Unbalanced(
                "(cell count does not divide row count)".to_string(),
                self.rows.len(),
                cells,
            ));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for (levels, _) in &self.rows {
            let key = levels
                .iter()
                .map(|(f, l)| format!("{f}={l}"))
                .collect::<Vec<_>>()
                .join(",");
            *counts.entry(key).or_insert(0) += 1;
        }
        if counts.len() != cells {
            return Err(AnovaError::Unbalanced(
                "(missing cells)".to_string(),
                counts.len(),
                cells,
            ));
        }
        for (cell, count) in counts {
            if count != expected {
                return Err(AnovaError::Unbalanced(cell, count, expected));
            }
        }
        Ok(expected)
    }

    /// Mean response over rows matching `assignment` on its factors (the
    /// grand mean for an empty assignment).
    fn cell_mean(&self, assignment: &BTreeMap<&str, &str>) -> T {
        let mut sum = T::zero();
        let mut n = 0usize;
        for (levels, response) in &self.rows {
            if assignment
                .iter()
                .all(|(factor, level)| levels.get(*factor).map(String::as_str) == Some(*level))
            {
                sum = sum + *response;
                n += 1;
            }
        }
        sum / T::from(n).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaRow<T> {
    /// Factor names: one for a main effect, several for an interaction.
    pub term: Vec<String>,
    pub ss: T,
    pub df: usize,
    pub ms: T,
    pub f: T,
    pub p: T,
    pub omega_p2: T,
}

#[derive(Debug, Clone)]
pub struct AnovaResult<T> {
    pub rows: Vec<AnovaRow<T>>,
    pub residual_ss: T,
    pub residual_df: usize,
    pub residual_ms: T,
    pub total_ss: T,
    pub n: usize,
}

/// `(SS − DF·MS_err) / (SS + (N − DF)·MS_err)`. Zero exactly when F = 1,
/// negative exactly when F < 1 (for positive MS_err).
pub fn partial_omega_squared<T: Float>(
    ss: T,
    df: usize,
    ms_err: T,
    n: usize,
) -> Result<T, AnovaError> {
    let df_t = T::from(df).unwrap();
    let denominator = ss + (T::from(n).unwrap() - df_t) * ms_err;
    if denominator <= T::zero() {
        return Err(AnovaError::OmegaDenominator);
    }
    Ok((ss - df_t * ms_err) / denominator)
}

/// Cartesian product over the listed factors' levels.
fn cells<'a>(
    factors: &'a BTreeMap<String, Vec<String>>,
    term: &'a [String],
) -> Vec<BTreeMap<&'a str, &'a str>> {
    let mut out: Vec<BTreeMap<&str, &str>> = vec![BTreeMap::new()];
    for factor in term {
        let levels = &factors[factor];
        let mut next = Vec::with_capacity(out.len() * levels.len());
        for cell in &out {
            for level in levels {
                let mut extended = cell.clone();
                extended.insert(factor.as_str(), level.as_str());
                next.push(extended);
            }
        }
        out = next;
    }
    out
}

fn term_ss_df<T: Float>(
    table: &ObservationTable<T>,
    term: &[String],
) -> (T, usize) {
    let n = table.rows.len();
    let cell_size: usize = n / term
        .iter()
        .map(|f| table.factors[f].len())
        .product::<usize>();
    let mut ss = T::zero();
    for cell in cells(&table.factors, term) {
        // Inclusion-exclusion over subsets of the term's factors: the
        // interaction contrast for this cell.
        let mut contrast = T::zero();
        for mask in 0..(1usize << term.len()) {
            let subset: BTreeMap<&str, &str> = term
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, factor)| (factor.as_str(), cell[factor.as_str()]))
                .collect();
            let sign = if (term.len() - mask.count_ones() as usize) % 2 == 0 {
                T::one()
            } else {
                -T::one()
            };
            contrast = contrast + sign * table.cell_mean(&subset);
        }
        ss = ss + T::from(cell_size).unwrap() * contrast * contrast;
    }
    let df = term.iter().map(|f| table.factors[f].len() - 1).product();
    (ss, df)
}

/// Fits the given model terms to a balanced table. The residual pools every
/// unmodeled contrast, so a single-replicate full factorial with a partial
/// model still has positive residual DF.
pub fn anova<T: Float>(
    table: &ObservationTable<T>,
    model_terms: &[Vec<String>],
) -> Result<AnovaResult<T>, AnovaError> {
    table.check_balanced()?;
    for term in model_terms {
        if term.is_empty() {
            return Err(AnovaError::EmptyTerm);
        }
        for (i, factor) in term.iter().enumerate() {
            if !table.factors.contains_key(factor) {
                return Err(AnovaError::UnknownFactor(factor.clone()));
            }
            if term[..i].contains(factor) {
                return Err(AnovaError::RepeatedFactor(factor.clone()));
            }
        }
    }

    let n = table.rows.len();
    let grand = table.cell_mean(&BTreeMap::new());
    let mut total_ss = T::zero();
    for (_, response) in &table.rows {
        let d = *response - grand;
        total_ss = total_ss + d * d;
    }

    let computed: Vec<(T, usize)> = model_terms
        .iter()
        .map(|term| term_ss_df(table, term))
        .collect();
    let model_ss = computed.iter().fold(T::zero(), |acc, (ss, _)| acc + *ss);
    let model_df: usize = computed.iter().map(|(_, df)| df).sum();

    let residual_df = n as i64 - 1 - model_df as i64;
    if residual_df <= 0 {
        return Err(AnovaError::ResidualDf(residual_df));
    }
    let residual_df = residual_df as usize;
    let residual_ss = total_ss - model_ss;
    if residual_ss < T::from(-1e-9).unwrap() {
        return Err(AnovaError::Inconsistent(residual_ss.to_f64().unwrap_or(f64::NAN)));
    }
    let residual_ss = residual_ss.max(T::zero());
    let residual_ms = residual_ss / T::from(residual_df).unwrap();

    let mut rows = Vec::with_capacity(model_terms.len());
    for (term, (ss, df)) in model_terms.iter().zip(computed) {
        let ms = ss / T::from(df).unwrap();
        let f = ms / residual_ms;
        let p = f_upper_tail(f, df, residual_df)?;
        let omega_p2 = partial_omega_squared(ss, df, residual_ms, n)?;
        rows.push(AnovaRow {
            term: term.clone(),
            ss,
            df,
            ms,
            f,
            p,
            omega_p2,
        });
    }
    Ok(AnovaResult {
        rows,
        residual_ss,
        residual_df,
        residual_ms,
        total_ss,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(pairs: &[(&str, &str)], y: f64) -> (BTreeMap<String, String>, f64) {
        (
            pairs
                .iter()
                .map(|(f, l)| (f.to_string(), l.to_string()))
                .collect(),
            y,
        )
    }

    fn term(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn two_by_two() -> ObservationTable<f64> {
        ObservationTable::new(vec![
            row(&[("A", "a0"), ("B", "b0")], 0.0),
            row(&[("A", "a0"), ("B", "b1")], 0.0),
            row(&[("A", "a1"), ("B", "b0")], 0.0),
            row(&[("A", "a1"), ("B", "b1")], 4.0),
        ])
        .unwrap()
    }

    #[test]
    fn two_by_two_hand_computed_sums_of_squares() {
        // Grand mean 1; SS_A = SS_B = SS_AB = 4, total 12.
        let table = two_by_two();
        let result = anova(&table, &[term(&["A"]), term(&["B"])]).unwrap();
        assert!((result.total_ss - 12.0).abs() < 1e-12);
        for r in &result.rows {
            assert!((r.ss - 4.0).abs() < 1e-12, "{:?}", r.term);
            assert_eq!(r.df, 1);
        }
        // The unmodeled interaction pools into the residual.
        assert!((result.residual_ss - 4.0).abs() < 1e-12);
        assert_eq!(result.residual_df, 1);
    }

    #[test]
    fn saturated_single_replicate_model_has_no_residual_df() {
        let table = two_by_two();
        let full = &[term(&["A"]), term(&["B"]), term(&["A", "B"])];
        assert!(matches!(anova(&table, full), Err(AnovaError::ResidualDf(0))));
    }

    #[test]
    fn interaction_ss_matches_direct_contrast_formula() {
        // Replicated 2x3 with arbitrary responses; SS_AB by the textbook
        // formula sum n_ab (ybar_ab - ybar_a - ybar_b + ybar)^2.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rows = Vec::new();
        for a in ["a0", "a1"] {
            for b in ["b0", "b1", "b2"] {
                for _ in 0..2 {
                    rows.push(row(&[("A", a), ("B", b)], rng.gen_range(0.0..5.0)));
                }
            }
        }
        let table = ObservationTable::new(rows.clone()).unwrap();
        let result = anova(&table, &[term(&["A"]), term(&["B"]), term(&["A", "B"])]).unwrap();

        let mean = |pred: &dyn Fn(&BTreeMap<String, String>) -> bool| {
            let selected: Vec<f64> = rows
                .iter()
                .filter(|(l, _)| pred(l))
                .map(|(_, y)| *y)
                .collect();
            selected.iter().sum::<f64>() / selected.len() as f64
        };
        let grand = mean(&|_| true);
        let mut expected_ab = 0.0;
        for a in ["a0", "a1"] {
            for b in ["b0", "b1", "b2"] {
                let y_ab = mean(&|l| l["A"] == a && l["B"] == b);
                let y_a = mean(&|l| l["A"] == a);
                let y_b = mean(&|l| l["B"] == b);
                expected_ab += 2.0 * (y_ab - y_a - y_b + grand).powi(2);
            }
        }
        let ab = result.rows.iter().find(|r| r.term.len() == 2).unwrap();
        assert!((ab.ss - expected_ab).abs() < 1e-10, "{} vs {expected_ab}", ab.ss);
        assert_eq!(ab.df, 2);

        let mut expected_a = 0.0;
        for a in ["a0", "a1"] {
            expected_a += 6.0 * (mean(&|l| l["A"] == a) - grand).powi(2);
        }
        let a_row = result.rows.iter().find(|r| r.term == term(&["A"])).unwrap();
        assert!((a_row.ss - expected_a).abs() < 1e-10);
    }

    #[test]
    fn full_model_ss_decomposes_the_total() {
        // 3 factors, replicated twice, all 7 terms: sum of term SS plus
        // residual equals total within 1e-9.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = Vec::new();
        for a in ["a0", "a1", "a2"] {
            for b in ["b0", "b1"] {
                for c in ["c0", "c1"] {
                    for _ in 0..2 {
                        rows.push(row(
                            &[("A", a), ("B", b), ("C", c)],
                            rng.gen_range(-1.0..1.0),
                        ));
                    }
                }
            }
        }
        let table = ObservationTable::new(rows).unwrap();
        let terms = vec![
            term(&["A"]),
            term(&["B"]),
            term(&["C"]),
            term(&["A", "B"]),
            term(&["A", "C"]),
            term(&["B", "C"]),
            term(&["A", "B", "C"]),
        ];
        let result = anova(&table, &terms).unwrap();
        let model: f64 = result.rows.iter().map(|r| r.ss).sum();
        assert!((model + result.residual_ss - result.total_ss).abs() < 1e-9);
        let model_df: usize = result.rows.iter().map(|r| r.df).sum();
        assert_eq!(model_df, 2 + 1 + 1 + 2 + 2 + 1 + 2);
        assert_eq!(result.residual_df, 24 - 1 - model_df);
        for r in &result.rows {
            assert!((r.ms - r.ss / r.df as f64).abs() == 0.0);
            assert!(r.ss >= -1e-12);
            // Effect-size sign tracks F relative to 1.
            if result.residual_ms > 0.0 {
                assert_eq!(r.omega_p2 > 0.0, r.f > 1.0, "{:?}", r.term);
            }
        }
    }

    #[test]
    fn result_is_invariant_under_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rows = Vec::new();
        for a in ["a0", "a1"] {
            for b in ["b0", "b1", "b2"] {
                rows.push(row(&[("A", a), ("B", b)], rng.gen_range(0.0..9.0)));
            }
        }
        let forward = anova(&ObservationTable::new(rows.clone()).unwrap(), &[term(&["A"]), term(&["B"])]).unwrap();
        rows.reverse();
        rows.swap(1, 4);
        let shuffled = anova(&ObservationTable::new(rows).unwrap(), &[term(&["A"]), term(&["B"])]).unwrap();
        for (x, y) in forward.rows.iter().zip(&shuffled.rows) {
            assert_eq!(x.term, y.term);
            assert!((x.ss - y.ss).abs() < 1e-12);
            assert!((x.p - y.p).abs() < 1e-12);
        }
    }

    #[test]
    fn unbalanced_tables_are_rejected() {
        let rows = vec![
            row(&[("A", "a0")], 1.0),
            row(&[("A", "a0")], 2.0),
            row(&[("A", "a1")], 3.0),
        ];
        let table = ObservationTable::new(rows).unwrap();
        assert!(matches!(
            anova(&table, &[term(&["A"])]),
            Err(AnovaError::Unbalanced(..))
        ));

        // A missing cell in a two-factor design.
        let rows = vec![
            row(&[("A", "a0"), ("B", "b0")], 1.0),
            row(&[("A", "a0"), ("B", "b1")], 2.0),
            row(&[("A", "a1"), ("B", "b0")], 3.0),
            row(&[("A", "a1"), ("B", "b0")], 4.0),
        ];
        let table = ObservationTable::new(rows).unwrap();
        assert!(matches!(
            anova(&table, &[term(&["A"])]),
            Err(AnovaError::Unbalanced(..))
        ));
    }

    #[test]
    fn unknown_factor_is_named_in_the_error() {
        let table = two_by_two();
        match anova(&table, &[term(&["Z"])]) {
            Err(AnovaError::UnknownFactor(name)) => assert_eq!(name, "Z"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn omega_boundary_at_f_equal_one() {
        // SS = DF * MS_err gives omega exactly 0.
        let omega = partial_omega_squared(0.5, 1, 0.5, 10).unwrap();
        assert_eq!(omega, 0.0);
        assert!(partial_omega_squared(1.0, 1, 0.2, 10).unwrap() > 0.0);
        assert!(partial_omega_squared(0.1, 1, 0.2, 10).unwrap() < 0.0);
        assert!(partial_omega_squared(0.0, 1, 0.0, 10).is_err());
    }

    #[test]
    fn omega_matches_independent_formula_on_random_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let ss = rng.gen_range(0.001..2.0);
            let df = rng.gen_range(1..5usize);
            let ms_err = rng.gen_range(0.001..0.5);
            let n = rng.gen_range(df + 2..200);
            let expected = (ss - df as f64 * ms_err) / (ss + (n - df) as f64 * ms_err);
            let got = partial_omega_squared(ss, df, ms_err, n).unwrap();
            assert!((got - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn works_with_f32_scalars() {
        let rows = vec![
            row(&[("A", "a0")], 1.0),
            row(&[("A", "a1")], 3.0),
            row(&[("A", "a0")], 1.2),
            row(&[("A", "a1")], 2.8),
        ];
        let rows32: Vec<(BTreeMap<String, String>, f32)> =
            rows.into_iter().map(|(l, y)| (l, y as f32)).collect();
        let table = ObservationTable::new(rows32).unwrap();
        let result = anova(&table, &[vec!["A".to_string()]]).unwrap();
        // Cell means 1.1 and 2.9: SS_A = 4 * 0.9^2 = 3.24.
        assert!((result.rows[0].ss - 3.24f32).abs() < 1e-4);
        assert!(result.rows[0].p > 0.0 && result.rows[0].p < 1.0);
    }
}
