//! Search configuration files and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gramnas::encoder::Variant;
use gramnas::evaluator::EvaluatorConfig;
use gramnas::evolution::SearchConfig;
use gramnas::surrogate::{BridgeTimeouts, ForestParams, NormalizationMethod};

use crate::CliError;

/// Overrides the external surrogate worker command (whitespace-separated).
pub const BRIDGE_CMD_ENV: &str = "GRAMNAS_BRIDGE_CMD";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub drop_zero_fitness: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestConfig {
            n_trees: p.n_trees,
            min_samples_leaf: p.min_samples_leaf,
            drop_zero_fitness: false,
        }
    }
}

impl ForestConfig {
    pub fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default)]
    pub timeouts: BridgeTimeouts,
}

fn default_variant() -> Variant {
    Variant::WithShapes
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig {
            command: Vec::new(),
            variant: default_variant(),
            timeouts: BridgeTimeouts::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmStartConfig {
    pub datasets: Vec<PathBuf>,
    #[serde(default = "default_normalization")]
    pub normalization: NormalizationMethod,
}

fn default_normalization() -> NormalizationMethod {
    NormalizationMethod::Percentile
}

/// Everything `search` needs. Relative paths are resolved against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub search: SearchConfig,
    pub evaluator: EvaluatorConfig,
    /// Grammar file; the built-in grammar when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar: Option<PathBuf>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<WarmStartConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Written next to every run log; `search --config <manifest>` repeats the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub gramnas_version: String,
    pub config: RunConfig,
    /// Full text of the grammar used.
    pub grammar_text: String,
    /// Fixed parameters of the synthetic oracle, if any.
    pub oracle: serde_json::Value,
    pub started_at_unix: u64,
}

pub enum Loaded {
    Config(Box<RunConfig>),
    Manifest(Box<Manifest>),
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        if let Some(g) = &mut self.grammar {
            resolve(base, g);
        }
        if let Some(w) = &mut self.warm_start {
            w.datasets.iter_mut().for_each(|d| resolve(base, d));
        }
        if let EvaluatorConfig::Replay { dataset } = &mut self.evaluator {
            resolve(base, dataset);
        }
        if let Some(o) = &mut self.out_dir {
            resolve(base, o);
        }
    }
}

/// Reads a config or a manifest. Errors carry the JSON path of the offending field.
pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let is_manifest = value.get("gramnas_version").is_some() && value.get("config").is_some();
    let field_error = |e: serde_path_to_error::Error<serde_json::Error>| {
        CliError::config(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner()))
    };
    if is_manifest {
        let m: Manifest = serde_path_to_error::deserialize(value).map_err(field_error)?;
        Ok(Loaded::Manifest(Box::new(m)))
    } else {
        let mut c: RunConfig = serde_path_to_error::deserialize(value).map_err(field_error)?;
        c.resolve_paths(&base);
        Ok(Loaded::Config(Box::new(c)))
    }
}

/// The worker command: environment override first, then the config.
pub fn bridge_command(cfg: Option<&ExternalConfig>) -> Result<Vec<String>, CliError> {
    if let Ok(cmd) = std::env::var(BRIDGE_CMD_ENV) {
        let parts: Vec<String> = cmd.split_whitespace().map(String::from).collect();
        if !parts.is_empty() {
            return Ok(parts);
        }
    }
    match cfg {
        Some(c) if !c.command.is_empty() => Ok(c.command.clone()),
        _ => Err(CliError::config(format!(
            "external surrogate needs `external.command` or the {BRIDGE_CMD_ENV} environment variable"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_paths_in_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"evaluator":{"kind":"synthetic_linear"},"search":{"k":"five"}}"#).unwrap();
        let Err(e) = load(&p) else { panic!("should fail") };
        assert!(e.to_string().contains("search.k"), "{e}");
        fs::write(&p, r#"{"evaluator":{"kind":"synthetic_linear"},"serch":{}}"#).unwrap();
        let Err(e) = load(&p) else { panic!("should fail") };
        assert!(e.to_string().contains("serch"), "{e}");
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"evaluator":{"kind":"replay","dataset":"d.jsonl"},"out_dir":"out"}"#,
        )
        .unwrap();
        let Ok(Loaded::Config(c)) = load(&p) else { panic!() };
        let c = *c;
        assert_eq!(c.out_dir.unwrap(), dir.path().join("out"));
        assert!(matches!(c.evaluator, EvaluatorConfig::Replay { dataset } if dataset == dir.path().join("d.jsonl")));
    }
}
