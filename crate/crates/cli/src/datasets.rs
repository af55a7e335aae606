//! `augment` and `encode`.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gramnas::augment::expand_dataset;
use gramnas::compiler::compile;
use gramnas::dataset::{write_atomic, write_jsonl, DatasetRow};
use gramnas::encoder::{encode_plain, encode_with_shapes, parse, Variant};
use gramnas::grammar::sample_tree;

use crate::common;
use crate::{AugmentArgs, CliError, EncodeArgs};

/// Give up after this many samples per requested architecture.
const ENCODE_ATTEMPTS_PER_ROW: usize = 1000;

pub fn augment(a: AugmentArgs) -> Result<(), CliError> {
    let (grammar, _) = common::grammar(a.grammar.as_deref())?;
    let rows = common::read_rows(&a.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = Vec::with_capacity(rows.len() * (a.factor + 1));
    for (i, row) in rows.iter().enumerate() {
        let tree = parse(&grammar, &row.encoding)
            .map_err(|e| CliError::runtime(format!("{}:{}: {e}", a.input.display(), i + 1)))?;
        for s in expand_dataset(&grammar, &[(tree, row.accuracy)], a.factor, &mut rng) {
            out.push(DatasetRow {
                encoding: encode_plain(&grammar, &s.tree).text,
                accuracy: s.accuracy,
                dataset: row.dataset.clone(),
                extra_features: row.extra_features.clone(),
            });
        }
    }
    write_jsonl(&a.output, &out).map_err(|e| CliError::runtime(format!("{}: {e}", a.output.display())))
}

/// Samples until `count` compiling architectures have been found.
pub fn encodings(a: &EncodeArgs, grammar: &gramnas::grammar::Grammar) -> Result<Vec<String>, CliError> {
    if a.max_depth == 0 {
        return Err(CliError::config("--max-depth must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut out = Vec::with_capacity(a.count);
    let budget = a.count.saturating_mul(ENCODE_ATTEMPTS_PER_ROW);
    let mut attempts = 0;
    while out.len() < a.count {
        if attempts == budget {
            return Err(CliError::runtime(format!(
                "only {} of {} sampled architectures compiled after {attempts} attempts",
                out.len(),
                a.count
            )));
        }
        attempts += 1;
        let tree = sample_tree(grammar, a.max_depth, &mut rng).map_err(|e| CliError::runtime(e.to_string()))?;
        let text = match a.variant {
            Variant::Plain if compile(grammar, &tree, a.input_shape).is_ok() => encode_plain(grammar, &tree).text,
            Variant::Plain => continue,
            Variant::WithShapes => match encode_with_shapes(grammar, &tree, a.input_shape) {
                Ok(s) => s.text,
                Err(_) => continue,
            },
        };
        out.push(text);
    }
    Ok(out)
}

pub fn encode(a: EncodeArgs) -> Result<(), CliError> {
    let (grammar, _) = common::grammar(a.grammar.as_deref())?;
    let lines = encodings(&a, &grammar)?;
    let emit = |w: &mut dyn Write| -> io::Result<()> {
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    };
    match &a.output {
        Some(p) => write_atomic(p, emit).map_err(|e| CliError::runtime(format!("{}: {e}", p.display()))),
        None => emit(&mut io::stdout().lock()).map_err(|e| CliError::runtime(e.to_string())),
    }
}
