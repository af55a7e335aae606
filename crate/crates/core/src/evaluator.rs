//! Fitness functions standing in for training a network.
//!
//! The synthetic oracles read an architecture only through its graph
//! descriptor, so a tabular model over the same descriptor can learn them.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{graf, Architecture};
use crate::compiler::{compile, TensorShape};
use crate::dataset::{read_dataset, DatasetError};
use crate::features::{graf_schema, FeatureVector};
use crate::grammar::{sample_tree, DerivationTree, Grammar, OpKind, DEFAULT_MAX_DEPTH};

/// Seed of the grammar samples behind the oracle's z-scoring statistics.
pub const REFERENCE_SEED: u64 = 0x0a11_ce5e_ed00;
pub const REFERENCE_SAMPLES: usize = 1000;
/// Standard deviation of the linear oracle's pre-sigmoid score over the reference rows.
pub const SCORE_SCALE: f64 = 0.5;
/// z-scores are clipped to this magnitude, which bounds the attainable score.
pub const Z_CLIP: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    SyntheticLinear {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        /// Multiplies the weight vector; a negative gain gives the mirrored landscape.
        #[serde(default = "one")]
        gain: f64,
        #[serde(default)]
        bias: f64,
    },
    SyntheticDepth {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Replay {
        dataset: PathBuf,
    },
    ExternalCommand {
        command: Vec<String>,
        #[serde(default = "one_usize")]
        max_parallel: usize,
    },
}

fn default_sigma() -> f64 {
    0.02
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl EvaluatorConfig {
    pub fn synthetic_linear(seed: u64, sigma: f64) -> Self {
        EvaluatorConfig::SyntheticLinear {
            seed,
            sigma,
            gain: 1.0,
            bias: 0.0,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, Self::SyntheticLinear { .. } | Self::SyntheticDepth { .. })
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluator config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("`{0}` is not in the replay dataset")]
    LookupMiss(String),
    #[error("evaluation command failed: {0}")]
    Command(String),
    #[error("evaluation command printed `{0}`, expected one number in [0, 1]")]
    BadOutput(String),
}

/// Per-feature mean and standard deviation over reference samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub schema: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub samples: usize,
}

/// Graph descriptors of the compiling trees among `count` samples drawn with `seed`.
pub fn reference_rows(grammar: &Grammar, input_shape: TensorShape, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for _ in 0..count {
        let Ok(t) = sample_tree(grammar, DEFAULT_MAX_DEPTH, &mut rng) else {
            continue;
        };
        if let Ok(g) = compile(grammar, &t, input_shape) {
            rows.push(graf(&g).values);
        }
    }
    rows
}

impl ReferenceStats {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let schema = graf_schema(&OpKind::ALL);
        let d = schema.len();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                std[j] += (r[j] - mean[j]).powi(2) / n;
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
        ReferenceStats {
            schema,
            mean,
            std,
            samples: rows.len(),
        }
    }

    /// Features that vary across the reference samples.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.std.len()).filter(|&j| self.std[j] > 1e-12)
    }

    pub fn zscore(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if self.std[j] > 1e-12 {
                    ((v - self.mean[j]) / self.std[j]).clamp(-Z_CLIP, Z_CLIP)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// `sigmoid(gain * w . z + bias)` plus noise, with `w` drawn from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearOracle {
    pub seed: u64,
    pub sigma: f64,
    pub gain: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub reference: ReferenceStats,
}

impl LinearOracle {
    /// Draws `w` from `seed` and rescales it so that `w . z` has unit standard
    /// deviation over the reference rows.
    pub fn new(seed: u64, sigma: f64, gain: f64, bias: f64, rows: &[Vec<f64>]) -> Self {
        let reference = ReferenceStats::from_rows(rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let active: Vec<bool> = (0..reference.schema.len()).map(|j| reference.std[j] > 1e-12).collect();
        // every column consumes a draw so that one column's weight does not depend on which others vary
        let mut weights: Vec<f64> = active
            .iter()
            .map(|&on| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if on {
                    z
                } else {
                    0.0
                }
            })
            .collect();
        let scores: Vec<f64> = rows.iter().map(|r| dot(&weights, &reference.zscore(r))).collect();
        let n = scores.len().max(1) as f64;
        let m = scores.iter().sum::<f64>() / n;
        let sd = (scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 {
            weights.iter_mut().for_each(|w| *w *= SCORE_SCALE / sd);
        }
        LinearOracle {
            seed,
            sigma,
            gain,
            bias,
            weights,
            reference,
        }
    }

    /// The noiseless score.
    pub fn mean_fitness(&self, graf: &[f64]) -> f64 {
        let z = self.reference.zscore(graf);
        sigmoid(self.gain * dot(&self.weights, &z) + self.bias)
    }
}

/// Path length (edges) at which the depth reward reaches 63% of its range.
pub const DEPTH_SCALE: f64 = 20.0;
pub const NORM_SCALE: f64 = 6.0;

/// Saturating reward for long linear chains, scaled by how many normalizations accompany them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthOracle {
    pub seed: u64,
    pub sigma: f64,
}

impl DepthOracle {
    pub fn mean_fitness(&self, f: &FeatureVector) -> f64 {
        let depth = f.get("max_path:linear").unwrap_or(-1.0).max(0.0);
        let norms = f.get("count:norm").unwrap_or(0.0);
        let reach = 1.0 - (-depth / DEPTH_SCALE).exp();
        let normalized = 1.0 - (-norms / NORM_SCALE).exp();
        0.1 + 0.8 * reach * (0.25 + 0.75 * normalized)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Noise draw keyed by the feature bits, so one architecture always gets the same value.
fn keyed_noise(seed: u64, sigma: f64, values: &[f64]) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in seed
        .to_le_bytes()
        .into_iter()
        .chain(values.iter().flat_map(|v| v.to_bits().to_le_bytes()))
    {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    Normal::new(0.0, sigma).expect("sigma validated").sample(&mut rng)
}

enum Kind {
    Linear(LinearOracle),
    Depth(DepthOracle),
    Replay(HashMap<String, f64>),
    External { command: Vec<String>, max_parallel: usize },
}

/// A configured fitness function. Cheap to clone; the oracle state is shared.
#[derive(Clone)]
pub struct Evaluator {
    kind: Arc<Kind>,
    pub config: EvaluatorConfig,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator").field("config", &self.config).finish()
    }
}

fn check_sigma(sigma: f64) -> Result<(), EvalError> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(EvalError::Config(format!(
            "sigma must be a non-negative number, got {sigma}"
        )))
    }
}

impl Evaluator {
    pub fn new(config: EvaluatorConfig, grammar: &Grammar, input_shape: TensorShape) -> Result<Self, EvalError> {
        let kind = match &config {
            EvaluatorConfig::SyntheticLinear {
                seed,
                sigma,
                gain,
                bias,
            } => {
                check_sigma(*sigma)?;
                if !gain.is_finite() || !bias.is_finite() {
                    return Err(EvalError::Config("gain and bias must be finite".into()));
                }
                let rows = reference_rows(grammar, input_shape, REFERENCE_SAMPLES, REFERENCE_SEED);
                Kind::Linear(LinearOracle::new(*seed, *sigma, *gain, *bias, &rows))
            }
            EvaluatorConfig::SyntheticDepth { seed, sigma } => {
                check_sigma(*sigma)?;
                Kind::Depth(DepthOracle {
                    seed: *seed,
                    sigma: *sigma,
                })
            }
            EvaluatorConfig::Replay { dataset } => {
                let rows = read_dataset(dataset)?;
                Kind::Replay(rows.into_iter().map(|r| (r.encoding, r.accuracy)).collect())
            }
            EvaluatorConfig::ExternalCommand { command, max_parallel } => {
                if command.is_empty() {
                    return Err(EvalError::Config("command must not be empty".into()));
                }
                if *max_parallel == 0 {
                    return Err(EvalError::Config("max_parallel must be at least 1".into()));
                }
                Kind::External {
                    command: command.clone(),
                    max_parallel: *max_parallel,
                }
            }
        };
        Ok(Evaluator {
            kind: Arc::new(kind),
            config,
        })
    }

    /// The fixed oracle parameters, for run manifests.
    pub fn oracle_state(&self) -> serde_json::Value {
        match self.kind.as_ref() {
            Kind::Linear(o) => serde_json::to_value(o).expect("oracle serializes"),
            Kind::Depth(o) => serde_json::to_value(o).expect("oracle serializes"),
            _ => serde_json::Value::Null,
        }
    }

    pub fn linear_oracle(&self) -> Option<&LinearOracle> {
        match self.kind.as_ref() {
            Kind::Linear(o) => Some(o),
            _ => None,
        }
    }

    /// Fitness in [0, 1]; 0 for architectures that do not compile.
    pub fn evaluate(&self, arch: &Architecture) -> Result<f64, EvalError> {
        let Some(features) = arch.features.as_ref().filter(|_| arch.compiles()) else {
            return Ok(0.0);
        };
        let graf_len = OpKind::ALL.len() * crate::features::FEATURES_PER_KIND;
        let graf = &features.values[..graf_len.min(features.len())];
        match self.kind.as_ref() {
            Kind::Linear(o) => Ok((o.mean_fitness(graf) + keyed_noise(o.seed, o.sigma, graf)).clamp(0.0, 1.0)),
            Kind::Depth(o) => Ok((o.mean_fitness(features) + keyed_noise(o.seed, o.sigma, graf)).clamp(0.0, 1.0)),
            Kind::Replay(table) => table
                .get(&arch.encoding)
                .copied()
                .ok_or_else(|| EvalError::LookupMiss(arch.encoding.clone())),
            Kind::External { command, .. } => run_command(command, arch.shaped.as_deref().unwrap_or(&arch.encoding)),
        }
    }

    /// Builds the architecture first; convenience for callers holding a bare tree.
    pub fn evaluate_tree(
        &self,
        grammar: &Grammar,
        tree: &DerivationTree,
        input_shape: TensorShape,
    ) -> Result<f64, EvalError> {
        self.evaluate(&Architecture::build(grammar, tree.clone(), input_shape, None))
    }

    /// Evaluates in order; external commands run up to `max_parallel` at a time.
    pub fn evaluate_batch(&self, archs: &[&Architecture]) -> Vec<Result<f64, EvalError>> {
        let Kind::External { max_parallel, .. } = self.kind.as_ref() else {
            return archs.iter().map(|a| self.evaluate(a)).collect();
        };
        let mut out = Vec::with_capacity(archs.len());
        for chunk in archs.chunks(*max_parallel) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|a| s.spawn(|| self.evaluate(a))).collect();
                out.extend(
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("evaluation thread panicked")),
                );
            });
        }
        out
    }
}

fn run_command(command: &[String], input: &str) -> Result<f64, EvalError> {
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| EvalError::Command(format!("{}: {e}", command[0])))?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let write = stdin.write_all(input.as_bytes()).and_then(|_| stdin.write_all(b"\n"));
    drop(stdin);
    let out = child
        .wait_with_output()
        .map_err(|e| EvalError::Command(e.to_string()))?;
    if !out.status.success() {
        return Err(EvalError::Command(format!(
            "{} ({})",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    write.map_err(|e| EvalError::Command(format!("writing stdin: {e}")))?;
    let text = String::from_utf8_lossy(&out.stdout).trim().to_string();
    match text.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(EvalError::BadOutput(text)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::parse;

    fn shape() -> TensorShape {
        TensorShape::im(3, 32, 32)
    }

    fn arch(g: &Grammar, text: &str) -> Architecture {
        Architecture::build(g, parse(g, text).unwrap(), shape(), None)
    }

    #[test]
    fn linear_is_deterministic_and_bounded() {
        let g = Grammar::mini_einspace();
        let e = Evaluator::new(EvaluatorConfig::synthetic_linear(3, 0.0), &g, shape()).unwrap();
        let a = arch(&g, "routing[im2col(3,2,1), computation<linear(128)>, col2im]");
        let f = e.evaluate(&a).unwrap();
        assert_eq!(f, e.evaluate(&a).unwrap());
        assert!((0.0..=1.0).contains(&f));
        let noisy = Evaluator::new(EvaluatorConfig::synthetic_linear(3, 0.02), &g, shape()).unwrap();
        assert_eq!(noisy.evaluate(&a).unwrap(), noisy.evaluate(&a).unwrap());
        assert_ne!(noisy.evaluate(&a).unwrap(), f);
    }

    #[test]
    fn negated_gain_mirrors() {
        let g = Grammar::mini_einspace();
        let cfg = |gain| EvaluatorConfig::SyntheticLinear {
            seed: 9,
            sigma: 0.0,
            gain,
            bias: 0.0,
        };
        let pos = Evaluator::new(cfg(1.0), &g, shape()).unwrap();
        let neg = Evaluator::new(cfg(-1.0), &g, shape()).unwrap();
        let a = arch(&g, "sequential[computation<relu>, computation<norm>]");
        let sum = pos.evaluate(&a).unwrap() + neg.evaluate(&a).unwrap();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compile_failure_scores_zero() {
        let g = Grammar::mini_einspace();
        let a = arch(
            &g,
            "branching(2)[clone(2), routing[im2col(3,2,1), computation<linear(64)>, col2im], identity, add]",
        );
        for cfg in [
            EvaluatorConfig::synthetic_linear(1, 0.02),
            EvaluatorConfig::SyntheticDepth { seed: 1, sigma: 0.02 },
        ] {
            assert_eq!(Evaluator::new(cfg, &g, shape()).unwrap().evaluate(&a).unwrap(), 0.0);
        }
    }

    #[test]
    fn depth_rewards_long_normalized_chains() {
        let g = Grammar::mini_einspace();
        let e = Evaluator::new(EvaluatorConfig::SyntheticDepth { seed: 0, sigma: 0.0 }, &g, shape()).unwrap();
        let shallow = arch(&g, "routing[im2col(3,2,1), computation<linear(128)>, col2im]");
        let deeper = arch(
            &g,
            "routing[im2col(3,2,1), sequential[computation<linear(128)>, computation<linear(128)>], col2im]",
        );
        let normed = arch(
            &g,
            "sequential[routing[im2col(3,2,1), sequential[computation<linear(128)>, computation<linear(128)>], col2im], computation<norm>]",
        );
        let (s, d, n) = (
            e.evaluate(&shallow).unwrap(),
            e.evaluate(&deeper).unwrap(),
            e.evaluate(&normed).unwrap(),
        );
        assert!(s < d && d < n, "{s} {d} {n}");
    }

    #[test]
    fn replay_lookup() {
        let g = Grammar::mini_einspace();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(
            &path,
            "{\"encoding\":\"identity\",\"accuracy\":0.642,\"dataset\":\"a\"}\n",
        )
        .unwrap();
        let e = Evaluator::new(EvaluatorConfig::Replay { dataset: path }, &g, shape()).unwrap();
        assert_eq!(e.evaluate(&arch(&g, "identity")).unwrap(), 0.642);
        assert!(matches!(
            e.evaluate(&arch(&g, "computation<norm>")),
            Err(EvalError::LookupMiss(_))
        ));
    }

    #[test]
    fn external_command() {
        let g = Grammar::mini_einspace();
        let cmd = |script: &str| EvaluatorConfig::ExternalCommand {
            command: vec!["sh".into(), "-c".into(), script.into()],
            max_parallel: 2,
        };
        let e = Evaluator::new(
            cmd("read line; case \"$line\" in *out_feature_shape*) echo 0.25;; *) echo 0.9;; esac"),
            &g,
            shape(),
        )
        .unwrap();
        let a = arch(&g, "identity");
        let results = e.evaluate_batch(&[&a, &a, &a]);
        assert!(results.iter().all(|r| *r.as_ref().unwrap() == 0.25));
        let bad = Evaluator::new(cmd("cat >/dev/null; echo abc"), &g, shape()).unwrap();
        assert!(matches!(bad.evaluate(&a), Err(EvalError::BadOutput(_))));
        let fails = Evaluator::new(cmd("cat >/dev/null; exit 4"), &g, shape()).unwrap();
        assert!(matches!(fails.evaluate(&a), Err(EvalError::Command(_))));
    }
}
