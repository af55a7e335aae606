//! A dependency-free surrogate worker for exercising the bridge end to end.
//!
//! Each token's score is the mean target of the training encodings that
//! contain it; a prediction averages the scores of its known tokens and falls
//! back to the overall mean.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::Deserialize;
use serde_json::{json, Value};

use gramnas::surrogate::PROTOCOL_VERSION;

use crate::CliError;

#[derive(Deserialize)]
struct FitRow {
    encoding: String,
    target: f64,
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    Hello { version: u32 },
    Fit { rows: Vec<FitRow> },
    Predict { encodings: Vec<String> },
    Shutdown,
}

#[derive(Default)]
struct TokenMean {
    scores: HashMap<String, f64>,
    mean: f64,
}

fn tokens(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| c.is_whitespace() || "[](),<>{}:'".contains(c))
        .filter(|t| !t.is_empty())
}

impl TokenMean {
    fn fit(rows: &[FitRow]) -> Result<Self, String> {
        if rows.is_empty() {
            return Err("fit needs at least one row".into());
        }
        if let Some(r) = rows.iter().find(|r| !r.target.is_finite()) {
            return Err(format!("non-finite target for `{}`", r.encoding));
        }
        let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
        for r in rows {
            let mut seen: Vec<&str> = tokens(&r.encoding).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                let e = sums.entry(t.to_string()).or_default();
                e.0 += r.target;
                e.1 += 1;
            }
        }
        Ok(TokenMean {
            scores: sums.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
            mean: rows.iter().map(|r| r.target).sum::<f64>() / rows.len() as f64,
        })
    }

    fn predict(&self, encoding: &str) -> f64 {
        let known: Vec<f64> = tokens(encoding).filter_map(|t| self.scores.get(t).copied()).collect();
        if known.is_empty() {
            self.mean
        } else {
            known.iter().sum::<f64>() / known.len() as f64
        }
    }
}

fn handle(model: &mut Option<TokenMean>, req: Request) -> (Value, bool) {
    let err = |m: String| json!({"ok": false, "error": m});
    match req {
        Request::Hello { version } if version == PROTOCOL_VERSION => {
            (json!({"ok": true, "version": PROTOCOL_VERSION}), false)
        }
        Request::Hello { version } => (err(format!("unsupported protocol version {version}")), false),
        Request::Fit { rows } => match TokenMean::fit(&rows) {
            Ok(m) => {
                *model = Some(m);
                (json!({"ok": true}), false)
            }
            Err(e) => (err(e), false),
        },
        Request::Predict { encodings } => match model {
            Some(m) => {
                let p: Vec<f64> = encodings.iter().map(|e| m.predict(e)).collect();
                (json!({"ok": true, "predictions": p}), false)
            }
            None => (err("predict before fit".into()), false),
        },
        Request::Shutdown => (json!({"ok": true}), true),
    }
}

/// Serves requests until shutdown or end of input. Bad frames get error replies.
pub fn serve(input: impl BufRead, mut output: impl Write) -> Result<(), CliError> {
    let mut model = None;
    let io_err = |e: std::io::Error| CliError::runtime(format!("worker I/O: {e}"));
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(&mut model, req),
            Err(e) => (json!({"ok": false, "error": format!("bad request: {e}")}), false),
        };
        writeln!(output, "{reply}").map_err(io_err)?;
        output.flush().map_err(io_err)?;
        if stop {
            break;
        }
    }
    Ok(())
}
