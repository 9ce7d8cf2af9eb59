//! Main-effects ANOVA and chi-square tests over the trial factors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};
use std::collections::BTreeSet;
use thiserror::Error;

/// Family-wise significance level.
pub const FAMILY_ALPHA: f64 = 0.05;
/// Per-test threshold: four factors share the family level.
pub const BONFERRONI_P: f64 = FAMILY_ALPHA / 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("contingency table has an empty row or column")]
    DegenerateTable,
    #[error("contingency table needs nonnegative finite counts in at least 2x2 cells")]
    BadTable,
    #[error("no factor has two or more levels")]
    NoFactors,
    #[error("not enough observations: {0}")]
    TooFew(usize),
    #[error("factor columns have unequal lengths")]
    Ragged,
}

/// F test of one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTest {
    pub factor: String,
    pub f: f64,
    pub df_effect: usize,
    pub df_resid: usize,
    pub p: f64,
}

/// Chi-square test of independence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chi2Test {
    pub chi2: f64,
    pub dof: usize,
    pub p: f64,
}

fn design(columns: &[&[String]], skip: Option<usize>, n: usize) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
    for (j, col) in columns.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let levels: BTreeSet<&String> = col.iter().collect();
        for level in levels.iter().skip(1) {
            cols.push(DVector::from_iterator(
                n,
                col.iter().map(|v| if v == *level { 1.0 } else { 0.0 }),
            ));
        }
    }
    DMatrix::from_columns(&cols)
}

// Residual sum of squares and rank of a least-squares fit.
fn fit(x: DMatrix<f64>, y: &DVector<f64>) -> (f64, usize) {
    let svd = x.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    let rank = svd.rank(tol);
    let beta = svd.solve(y, tol).expect("both factors were computed");
    ((y - x * beta).norm_squared(), rank)
}

/// Main-effects ANOVA with Type-II sums of squares. Each column of `factors`
/// holds the level of one factor per observation. Factors with a single
/// level are left out of the model and the result.
pub fn anova_main_effects(
    names: &[&str],
    factors: &[Vec<String>],
    y: &[f64],
) -> Result<Vec<FactorTest>, StatsError> {
    let n = y.len();
    if factors.iter().any(|f| f.len() != n) || names.len() != factors.len() {
        return Err(StatsError::Ragged);
    }
    let active: Vec<usize> = (0..factors.len())
        .filter(|&j| {
            let levels = factors[j].iter().collect::<BTreeSet<_>>().len();
            if levels < 2 {
                log::warn!("factor {} has a single level and is excluded", names[j]);
            }
            levels >= 2
        })
        .collect();
    if active.is_empty() {
        return Err(StatsError::NoFactors);
    }
    let cols: Vec<&[String]> = active.iter().map(|&j| factors[j].as_slice()).collect();
    let yv = DVector::from_column_slice(y);
    let (rss_full, rank_full) = fit(design(&cols, None, n), &yv);
    if n <= rank_full {
        return Err(StatsError::TooFew(n));
    }
    let df_resid = n - rank_full;
    let scale = yv.norm_squared().max(1.0);
    let rss_full = if rss_full < 1e-24 * scale { 0.0 } else { rss_full };
    Ok(active
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            let (rss_red, rank_red) = fit(design(&cols, Some(k), n), &yv);
            let df_effect = rank_full - rank_red;
            let ss = (rss_red - rss_full).max(0.0);
            let ss = if ss < 1e-24 * scale { 0.0 } else { ss };
            let (f, p) = if df_effect == 0 || ss == 0.0 {
                (0.0, 1.0)
            } else if rss_full == 0.0 {
                (f64::INFINITY, 0.0)
            } else {
                let f = (ss / df_effect as f64) / (rss_full / df_resid as f64);
                let dist = FisherSnedecor::new(df_effect as f64, df_resid as f64)
                    .expect("positive degrees of freedom");
                (f, dist.sf(f).clamp(0.0, 1.0))
            };
            FactorTest {
                factor: names[j].to_string(),
                f,
                df_effect,
                df_resid,
                p,
            }
        })
        .collect())
}

/// Four-way main-effects ANOVA over (controller, motion, phantom, side).
pub fn anova4(data: &[([String; 4], f64)]) -> Result<Vec<FactorTest>, StatsError> {
    let factors: Vec<Vec<String>> = (0..4)
        .map(|j| data.iter().map(|(f, _)| f[j].clone()).collect())
        .collect();
    let y: Vec<f64> = data.iter().map(|(_, v)| *v).collect();
    anova_main_effects(&FACTOR_NAMES, &factors, &y)
}

pub const FACTOR_NAMES: [&str; 4] = ["controller", "motion", "phantom", "side"];

/// Pearson chi-square test of independence on a table of counts.
pub fn chi2_independence(table: &[Vec<f64>]) -> Result<Chi2Test, StatsError> {
    let rows = table.len();
    let cols = table.first().map_or(0, Vec::len);
    if rows < 2
        || cols < 2
        || table.iter().any(|r| r.len() != cols || r.iter().any(|c| !(c.is_finite() && *c >= 0.0)))
    {
        return Err(StatsError::BadTable);
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    if row_sums.iter().chain(&col_sums).any(|&m| m <= 0.0) {
        return Err(StatsError::DegenerateTable);
    }
    let total: f64 = row_sums.iter().sum();
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            chi2 += (obs - expected).powi(2) / expected;
        }
    }
    let dof = (rows - 1) * (cols - 1);
    let p = ChiSquared::new(dof as f64)
        .expect("positive dof")
        .sf(chi2)
        .clamp(0.0, 1.0);
    Ok(Chi2Test { chi2, dof, p })
}
