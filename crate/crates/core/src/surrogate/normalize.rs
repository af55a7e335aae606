//! Per-dataset target normalization before merging datasets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SurrogateError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMethod {
    #[default]
    None,
    #[serde(alias = "min_max")]
    MinMax,
    Percentile,
}

impl std::str::FromStr for NormalizationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "minmax" | "min_max" => Ok(Self::MinMax),
            "percentile" => Ok(Self::Percentile),
            other => Err(format!("unknown normalization `{other}` (none, minmax, percentile)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DatasetStats {
    Seen,
    Range { min: f64, max: f64 },
    Sorted(Vec<f64>),
}

/// Fitted per-dataset statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub method: NormalizationMethod,
    stats: BTreeMap<String, DatasetStats>,
}

impl Normalizer {
    /// Fits statistics from `(dataset_tag, target)` pairs.
    pub fn fit<'a>(
        method: NormalizationMethod,
        rows: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self, SurrogateError> {
        let mut by_tag: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (tag, y) in rows {
            if !y.is_finite() {
                return Err(SurrogateError::InvalidData(format!("non-finite target {y} in `{tag}`")));
            }
            by_tag.entry(tag.to_string()).or_default().push(y);
        }
        let stats = by_tag
            .into_iter()
            .map(|(tag, mut ys)| {
                let s = match method {
                    NormalizationMethod::None => DatasetStats::Seen,
                    NormalizationMethod::MinMax => DatasetStats::Range {
                        min: ys.iter().copied().fold(f64::INFINITY, f64::min),
                        max: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    },
                    NormalizationMethod::Percentile => {
                        ys.sort_by(f64::total_cmp);
                        DatasetStats::Sorted(ys)
                    }
                };
                (tag, s)
            })
            .collect();
        Ok(Normalizer { method, stats })
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.stats.keys().map(String::as_str)
    }

    /// Maps one target of dataset `tag`.
    ///
    /// Percentile: average rank among the dataset's fitted targets scaled by
    /// `1 / (n - 1)`; an unseen value sits halfway between its neighbours.
    pub fn normalize_value(&self, tag: &str, y: f64) -> Result<f64, SurrogateError> {
        let stats = self
            .stats
            .get(tag)
            .ok_or_else(|| SurrogateError::UnknownDataset(tag.to_string()))?;
        Ok(match stats {
            DatasetStats::Seen => y,
            DatasetStats::Range { min, max } => {
                if max > min {
                    (y - min) / (max - min)
                } else {
                    0.5
                }
            }
            DatasetStats::Sorted(sorted) => {
                let n = sorted.len();
                if n == 1 {
                    return Ok(0.5);
                }
                let less = sorted.partition_point(|v| *v < y);
                let equal = sorted[less..].partition_point(|v| *v <= y);
                let rank = less as f64 + (equal as f64 - 1.0) / 2.0;
                rank.clamp(0.0, (n - 1) as f64) / (n - 1) as f64
            }
        })
    }

    pub fn normalize<'a>(&self, rows: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Vec<f64>, SurrogateError> {
        rows.into_iter().map(|(tag, y)| self.normalize_value(tag, y)).collect()
    }
}
