//! `search`: one evolutionary run, logged to JSONL.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use gramnas::dataset::write_jsonl;
use gramnas::evaluator::Evaluator;
use gramnas::evolution::{
    run_search, warm_start, BestArchitecture, EvaluatedRecord, Incident, IterationRecord, SearchError, SearchMode,
    SearchResult, WarmStart,
};
use gramnas::grammar::Grammar;
use gramnas::surrogate::SurrogateKind;

use crate::common::{self, surrogate_error, Model};
use crate::config::{self, bridge_command, Loaded, Manifest, RunConfig};
use crate::{CliError, SearchArgs};

pub const LOG_FILE: &str = "run_log.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogLine<'a> {
    Initial { evaluated: &'a [EvaluatedRecord] },
    Iteration(&'a IterationRecord),
    Final { evaluated: &'a [EvaluatedRecord] },
    Incident(&'a Incident),
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    surrogate: SurrogateKind,
    mode: SearchMode,
    iterations: usize,
    true_evaluations: usize,
    incidents: usize,
    best: &'a BestArchitecture,
    /// Running best after each iteration.
    best_curve: Vec<f64>,
}

fn log_lines(r: &SearchResult) -> Vec<LogLine<'_>> {
    let mut lines = vec![LogLine::Initial { evaluated: &r.initial }];
    lines.extend(r.iterations.iter().map(LogLine::Iteration));
    if !r.final_evaluations.is_empty() {
        lines.push(LogLine::Final {
            evaluated: &r.final_evaluations,
        });
    }
    lines.extend(r.incidents.iter().map(LogLine::Incident));
    lines
}

fn search_error(e: SearchError) -> CliError {
    match e {
        SearchError::Config(m) => CliError::config(format!("search.{m}")),
        e => CliError::runtime(e.to_string()),
    }
}

fn load_warm_start(cfg: &RunConfig, grammar: &Grammar) -> Result<Option<WarmStart>, CliError> {
    let Some(w) = &cfg.warm_start else {
        return Ok(None);
    };
    let history = common::load_training(grammar, &w.datasets, cfg.search.input_shape)?;
    let nrm = history.fit_normalizer(w.normalization).map_err(surrogate_error)?;
    Ok(Some(warm_start(&history, &nrm).map_err(surrogate_error)?))
}

pub fn run(a: SearchArgs) -> Result<(), CliError> {
    let (mut cfg, grammar_text, stored_oracle) = match config::load(&a.config)? {
        Loaded::Config(c) => {
            let (_, text) = common::grammar(c.grammar.as_deref())?;
            (*c, text, None)
        }
        Loaded::Manifest(m) => {
            let m = *m;
            (m.config, m.grammar_text, Some(m.oracle))
        }
    };
    if let Some(s) = a.seed {
        cfg.search.seed = s;
    }
    if let Some(i) = a.iterations {
        cfg.search.iterations = i;
    }
    if let Some(s) = a.surrogate {
        cfg.search.surrogate = s;
    }
    if let Some(o) = a.out_dir {
        cfg.out_dir = Some(o);
    }
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| CliError::config("out_dir: set it in the config or pass --out-dir"))?;
    cfg.search.validate().map_err(search_error)?;
    let forest_params = cfg.forest.params();
    if forest_params.n_trees == 0 || forest_params.min_samples_leaf == 0 {
        return Err(CliError::config(
            "forest: n_trees and min_samples_leaf must be at least 1",
        ));
    }

    let (grammar, _) = common::grammar_from_text(&grammar_text, cfg.grammar.as_deref())?;
    let evaluator = Evaluator::new(cfg.evaluator.clone(), &grammar, cfg.search.input_shape)
        .map_err(|e| CliError::config(format!("evaluator: {e}")))?;
    let oracle = evaluator.oracle_state();
    if let Some(stored) = &stored_oracle {
        if *stored != oracle {
            return Err(CliError::runtime(
                "the manifest's oracle differs from the one this build derives; the run would not repeat",
            ));
        }
    }
    let warm = load_warm_start(&cfg, &grammar)?;

    let mut model = match cfg.search.surrogate {
        SurrogateKind::None => None,
        SurrogateKind::Forest => Some(common::forest(forest_params, cfg.forest.drop_zero_fitness)),
        SurrogateKind::External => {
            let ext = cfg.external.clone().unwrap_or_default();
            let cmd = bridge_command(Some(&ext))?;
            Some(common::external(&cmd, ext.variant, ext.timeouts)?)
        }
    };

    fs::create_dir_all(&out_dir).map_err(|e| CliError::runtime(format!("{}: {e}", out_dir.display())))?;
    let manifest = Manifest {
        gramnas_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        grammar_text,
        oracle,
        started_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    common::write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;

    let result = run_search(
        &cfg.search,
        &grammar,
        &evaluator,
        model.as_mut().map(Model::as_dyn),
        warm.as_ref(),
    );
    if let Some(m) = model {
        m.finish()?;
    }
    let result = result.map_err(search_error)?;
    write_outputs(&out_dir, &cfg, &result)?;
    eprintln!(
        "best {:.4} after {} true evaluations: {}",
        result.best.fitness, result.true_evaluations, result.best.encoding
    );
    Ok(())
}

fn write_outputs(out_dir: &Path, cfg: &RunConfig, result: &SearchResult) -> Result<(), CliError> {
    let log = out_dir.join(LOG_FILE);
    write_jsonl(&log, log_lines(result)).map_err(|e| CliError::runtime(format!("{}: {e}", log.display())))?;
    let summary = Summary {
        seed: cfg.search.seed,
        surrogate: cfg.search.surrogate,
        mode: cfg.search.mode,
        iterations: result.iterations.len(),
        true_evaluations: result.true_evaluations,
        incidents: result.incidents.len(),
        best: &result.best,
        best_curve: result.iterations.iter().map(|r| r.best).collect(),
    };
    common::write_json(&out_dir.join(SUMMARY_FILE), &summary)
}
