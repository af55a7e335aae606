//! Helpers shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use gramnas::compiler::TensorShape;
use gramnas::dataset::{read_dataset, to_training_set, write_atomic, DatasetRow};
use gramnas::encoder::Variant;
use gramnas::grammar::{load_grammar, Grammar, MINI_EINSPACE};
use gramnas::surrogate::{
    BridgeClient, BridgeTimeouts, ExternalSurrogate, ForestParams, ForestSurrogate, Surrogate, SurrogateError,
    SurrogateKind, TrainingSet,
};

use crate::config::{bridge_command, ExternalConfig};
use crate::{CliError, SurrogateArgs};

pub fn parse_variant(s: &str) -> Result<Variant, String> {
    match s {
        "plain" => Ok(Variant::Plain),
        "with-shapes" | "with_shapes" => Ok(Variant::WithShapes),
        other => Err(format!("unknown variant `{other}` (plain, with-shapes)")),
    }
}

pub fn parse_shape(s: &str) -> Result<TensorShape, String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("`{d}`: {e}")))
        .collect::<Result<_, _>>()?;
    TensorShape::from_dims(&dims).ok_or_else(|| format!("`{s}` is not C,H,W or S,D with positive entries"))
}

/// The grammar and its source text; the built-in grammar when `path` is absent.
pub fn grammar(path: Option<&Path>) -> Result<(Grammar, String), CliError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?,
        None => MINI_EINSPACE.to_string(),
    };
    grammar_from_text(&text, path)
}

pub fn grammar_from_text(text: &str, path: Option<&Path>) -> Result<(Grammar, String), CliError> {
    let name = path.map_or_else(|| "built-in grammar".to_string(), |p| p.display().to_string());
    let g = load_grammar(text).map_err(|e| CliError::config(format!("{name}: {e}")))?;
    Ok((g, text.to_string()))
}

pub fn read_rows(path: &Path) -> Result<Vec<DatasetRow>, CliError> {
    read_dataset(path).map_err(|e| CliError::runtime(e.to_string()))
}

/// Reads, parses and featurizes every file, concatenated in order.
pub fn load_training(grammar: &Grammar, paths: &[PathBuf], shape: TensorShape) -> Result<TrainingSet, CliError> {
    let mut set = TrainingSet::default();
    for p in paths {
        let rows = read_rows(p)?;
        let part = to_training_set(grammar, &rows, shape, p).map_err(|e| CliError::runtime(e.to_string()))?;
        set.rows.extend(part.rows);
    }
    Ok(set)
}

pub fn surrogate_error(e: SurrogateError) -> CliError {
    CliError::runtime(format!("surrogate: {e}"))
}

/// A surrogate that may own a worker process.
pub enum Model {
    Forest(ForestSurrogate),
    External(ExternalSurrogate),
}

impl Model {
    pub fn as_dyn(&mut self) -> &mut dyn Surrogate {
        match self {
            Model::Forest(f) => f,
            Model::External(e) => e,
        }
    }

    /// Stops the worker, if any.
    pub fn finish(self) -> Result<(), CliError> {
        match self {
            Model::Forest(_) => Ok(()),
            Model::External(e) => e.shutdown().map_err(surrogate_error),
        }
    }
}

pub fn forest(params: ForestParams, drop_zero_fitness: bool) -> Model {
    let mut f = ForestSurrogate::new(params);
    f.drop_zero_fitness = drop_zero_fitness;
    Model::Forest(f)
}

pub fn external(cmd: &[String], variant: Variant, timeouts: BridgeTimeouts) -> Result<Model, CliError> {
    let client = BridgeClient::spawn(cmd, timeouts).map_err(|e| CliError::runtime(format!("surrogate worker: {e}")))?;
    Ok(Model::External(ExternalSurrogate::new(client, variant)))
}

impl SurrogateArgs {
    pub fn forest_params(&self) -> ForestParams {
        let d = ForestParams::default();
        ForestParams {
            n_trees: self.n_trees.unwrap_or(d.n_trees),
            min_samples_leaf: self.min_samples_leaf.unwrap_or(d.min_samples_leaf),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = self.forest_params();
        if p.n_trees == 0 || p.min_samples_leaf == 0 {
            return Err(CliError::config("--n-trees and --min-samples-leaf must be at least 1"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Model, CliError> {
        self.validate()?;
        match self.surrogate {
            SurrogateKind::None => Err(CliError::config("--surrogate must be forest or external here")),
            SurrogateKind::Forest => Ok(forest(self.forest_params(), self.drop_zero_fitness)),
            SurrogateKind::External => {
                let from_flag = self.worker.as_ref().map(|w| ExternalConfig {
                    command: w.split_whitespace().map(String::from).collect(),
                    ..Default::default()
                });
                let cmd = match &from_flag {
                    Some(c) if !c.command.is_empty() => c.command.clone(),
                    _ => bridge_command(None)?,
                };
                external(&cmd, self.variant, BridgeTimeouts::default())
            }
        }
    }
}

/// Pretty JSON on stdout.
pub fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
    .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
