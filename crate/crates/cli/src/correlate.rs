//! `eval-correlation`, `transfer-eval` and `fit-surrogate`.

use std::collections::BTreeSet;
use std::fs;

use serde::Serialize;

use gramnas::arch::Architecture;
use gramnas::metrics::{CorrelationReport, MetricError};
use gramnas::surrogate::{ForestModel, ForestSurrogate, NormalizationMethod, Surrogate, SurrogateKind, TrainingSet};

use crate::common::{self, surrogate_error, Model};
use crate::{CliError, EvalCorrelationArgs, FitSurrogateArgs, TransferEvalArgs};

/// Fits on normalized `train` targets and scores against raw `test` targets.
pub fn fit_and_score(
    model: &mut dyn Surrogate,
    train: &TrainingSet,
    test: &TrainingSet,
    method: NormalizationMethod,
    seed: u64,
) -> Result<CorrelationReport, CliError> {
    if train.is_empty() {
        return Err(CliError::config("training split is empty"));
    }
    let nrm = train.fit_normalizer(method).map_err(surrogate_error)?;
    let train = train.normalized(&nrm).map_err(surrogate_error)?;
    model.fit(&train.pairs(), seed).map_err(surrogate_error)?;
    score(model, test)
}

fn score(model: &mut dyn Surrogate, test: &TrainingSet) -> Result<CorrelationReport, CliError> {
    let archs: Vec<&Architecture> = test.rows.iter().map(|r| &r.arch).collect();
    let predicted = model.predict(&archs).map_err(surrogate_error)?;
    let actual: Vec<f64> = test.rows.iter().map(|r| r.target).collect();
    CorrelationReport::compute(&predicted, &actual).map_err(|e| match e {
        MetricError::TooFew(n) => CliError::config(format!("test split has {n} rows, need at least 2")),
        e => CliError::runtime(e.to_string()),
    })
}

fn slice(set: &TrainingSet, start: usize, len: Option<usize>) -> TrainingSet {
    let end = len.map_or(set.len(), |l| (start + l).min(set.len()));
    TrainingSet {
        rows: set.rows[start.min(end)..end].to_vec(),
    }
}

#[derive(Serialize)]
struct Window {
    start: usize,
    train_rows: usize,
    report: CorrelationReport,
}

#[derive(Serialize)]
struct WindowSummary {
    windows: Vec<Window>,
    mean_spearman: Option<f64>,
    mean_kendall: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn eval_correlation(a: EvalCorrelationArgs) -> Result<(), CliError> {
    let s = &a.surrogate;
    s.validate()?;
    let (grammar, _) = common::grammar(s.grammar.as_deref())?;
    let train = common::load_training(&grammar, &a.train, s.input_shape)?;

    if let Some(path) = &a.model {
        let test_path = a
            .test
            .as_ref()
            .ok_or_else(|| CliError::config("--model needs --test"))?;
        let text = fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let forest =
            ForestModel::from_json(&text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let test = common::load_training(&grammar, std::slice::from_ref(test_path), s.input_shape)?;
        let report = score(
            &mut ForestSurrogate::from_model(forest),
            &slice(&test, 0, a.eval_window),
        )?;
        return common::print_json(&report);
    }

    if let Some(step) = a.refit_every {
        if a.test.is_some() {
            return Err(CliError::config(
                "--refit-every slides over the training file; drop --test",
            ));
        }
        if step == 0 {
            return Err(CliError::config("--refit-every must be at least 1"));
        }
        let first = a.train_prefix.unwrap_or(step);
        if first == 0 || first >= train.len() {
            return Err(CliError::config(format!(
                "--train-prefix {first} leaves no rows to evaluate out of {}",
                train.len()
            )));
        }
        let window = a.eval_window.unwrap_or(step);
        let mut model = s.build()?;
        let mut windows = Vec::new();
        let mut start = first;
        while start < train.len() {
            let test = slice(&train, start, Some(window));
            if test.len() < 2 {
                break;
            }
            let report = fit_and_score(
                model.as_dyn(),
                &slice(&train, 0, Some(start)),
                &test,
                s.normalization,
                s.seed,
            )?;
            windows.push(Window {
                start,
                train_rows: start,
                report,
            });
            start += step;
        }
        model.finish()?;
        let summary = WindowSummary {
            mean_spearman: mean(windows.iter().map(|w| w.report.spearman)),
            mean_kendall: mean(windows.iter().map(|w| w.report.kendall)),
            windows,
        };
        return common::print_json(&summary);
    }

    let (train_part, test) = match &a.test {
        Some(path) => (
            slice(&train, 0, a.train_prefix),
            slice(
                &common::load_training(&grammar, std::slice::from_ref(path), s.input_shape)?,
                0,
                a.eval_window,
            ),
        ),
        None => {
            let m = a
                .train_prefix
                .ok_or_else(|| CliError::config("without --test, --train-prefix selects the training rows"))?;
            (slice(&train, 0, Some(m)), slice(&train, m, a.eval_window))
        }
    };
    let mut model = s.build()?;
    let report = fit_and_score(model.as_dyn(), &train_part, &test, s.normalization, s.seed)?;
    model.finish()?;
    common::print_json(&report)
}

#[derive(Serialize)]
struct Holdout {
    dataset: String,
    train_rows: usize,
    test_rows: usize,
    report: CorrelationReport,
}

#[derive(Serialize)]
struct TransferSummary {
    holdouts: Vec<Holdout>,
    mean_spearman: Option<f64>,
    mean_kendall: Option<f64>,
}

pub fn transfer_eval(a: TransferEvalArgs) -> Result<(), CliError> {
    let s = &a.surrogate;
    s.validate()?;
    let (grammar, _) = common::grammar(s.grammar.as_deref())?;
    let all = common::load_training(&grammar, &a.data, s.input_shape)?;
    let tags: BTreeSet<&str> = all.rows.iter().map(|r| r.dataset.as_str()).collect();
    if tags.len() < 2 {
        return Err(CliError::config(format!(
            "leave-one-out needs at least 2 dataset tags, found {}",
            tags.len()
        )));
    }
    let mut model = s.build()?;
    let mut holdouts = Vec::new();
    for tag in tags {
        let mut train = TrainingSet::default();
        let mut held = TrainingSet::default();
        for r in &all.rows {
            if r.dataset == tag {
                held.rows.push(r.clone());
            } else {
                train.rows.push(r.clone());
            }
        }
        let prefix = a.holdout_prefix.min(held.len());
        train.rows.extend(held.rows[..prefix].iter().cloned());
        let test = slice(&held, prefix, a.eval_window);
        let report = fit_and_score(model.as_dyn(), &train, &test, s.normalization, s.seed)?;
        holdouts.push(Holdout {
            dataset: tag.to_string(),
            train_rows: train.len(),
            test_rows: test.len(),
            report,
        });
    }
    model.finish()?;
    let summary = TransferSummary {
        mean_spearman: mean(holdouts.iter().map(|h| h.report.spearman)),
        mean_kendall: mean(holdouts.iter().map(|h| h.report.kendall)),
        holdouts,
    };
    common::print_json(&summary)
}

pub fn fit_surrogate(a: FitSurrogateArgs) -> Result<(), CliError> {
    let s = &a.surrogate;
    if s.surrogate != SurrogateKind::Forest {
        return Err(CliError::config("fit-surrogate serializes forest models only"));
    }
    let (grammar, _) = common::grammar(s.grammar.as_deref())?;
    let train = common::load_training(&grammar, &a.train, s.input_shape)?;
    if train.is_empty() {
        return Err(CliError::config("training split is empty"));
    }
    let nrm = train.fit_normalizer(s.normalization).map_err(surrogate_error)?;
    let train = train.normalized(&nrm).map_err(surrogate_error)?;
    let Model::Forest(mut forest) = s.build()? else {
        unreachable!("checked above")
    };
    forest.fit(&train.pairs(), s.seed).map_err(surrogate_error)?;
    let json = forest.model().expect("fitted").to_json();
    gramnas::dataset::write_atomic(&a.output, |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")
    })
    .map_err(|e| CliError::runtime(format!("{}: {e}", a.output.display())))
}
