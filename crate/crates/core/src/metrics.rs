//! Rank correlations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("correlation undefined: all values of one input are tied")]
    Degenerate,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew(x.len()));
    }
    Ok(())
}

/// Kendall's tau-b, `(C - D) / sqrt((C + D + Tx)(C + D + Ty))`, by pairwise counting.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check(x, y)?;
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).expect("finite input");
            let dy = y[i].partial_cmp(&y[j]).expect("finite input");
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {}
                (Equal, _) => tie_x += 1,
                (_, Equal) => tie_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let cd = (concordant + discordant) as f64;
    let denom = ((cd + tie_x as f64) * (cd + tie_y as f64)).sqrt();
    if denom == 0.0 {
        return Err(MetricError::Degenerate);
    }
    Ok((concordant as f64 - discordant as f64) / denom)
}

/// Zero-based average ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Degenerate);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    pub n: usize,
    /// Set when either input is constant and the correlations are undefined.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl CorrelationReport {
    pub fn compute(predicted: &[f64], actual: &[f64]) -> Result<Self, MetricError> {
        check(predicted, actual)?;
        let spearman = spearman_rho(predicted, actual);
        let kendall = kendall_tau(predicted, actual);
        let degenerate =
            matches!(spearman, Err(MetricError::Degenerate)) || matches!(kendall, Err(MetricError::Degenerate));
        Ok(CorrelationReport {
            spearman: spearman.ok(),
            kendall: kendall.ok(),
            n: predicted.len(),
            degenerate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kendall_basics() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]), Ok(1.0));
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Ok(-1.0));
        assert_eq!(
            kendall_tau(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]),
            Err(MetricError::Degenerate)
        );
        assert_eq!(kendall_tau(&[1.0], &[1.0]), Err(MetricError::TooFew(1)));
        assert_eq!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1)));
    }

    #[test]
    fn spearman_rank_difference_case() {
        // 1 - 6 * (0 + 1 + 1 + 0) / (4 * 15) = 0.8
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_monotone_transform() {
        let x = [0.3, -1.0, 2.5, 7.0, 0.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp() * 3.0 + 1.0).collect();
        assert!((spearman_rho(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spearman_rho(&x, &[2.0; 5]), Err(MetricError::Degenerate));
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[0.1, 0.4, 0.4, 0.9]), vec![0.0, 1.5, 1.5, 3.0]);
    }

    #[test]
    fn report_marks_degenerate() {
        let r = CorrelationReport::compute(&[1.0, 1.0], &[0.0, 1.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.kendall, None);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"degenerate\":true"));
    }
}
