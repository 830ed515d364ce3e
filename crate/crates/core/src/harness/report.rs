use super::eval::EvalRow;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::io::Read;

const EVAL_HEADER: [&str; 12] = [
    "method",
    "friction",
    "recovery",
    "alpha",
    "window",
    "horizon",
    "seeds",
    "episodes",
    "success_mean",
    "success_std",
    "mean_steps",
    "reset_rate",
];

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str], what: &str) -> Result<()> {
    let got = rdr.headers()?.clone();
    if got.iter().ne(expected.iter().copied()) {
        return Err(Error::Schema(format!("{what}: expected columns {expected:?}, got {got:?}")));
    }
    Ok(())
}

/// Concatenates evaluation tables and orders rows by method, friction,
/// recovery flag, threshold and window.
pub fn merge_reports<R: Read>(inputs: Vec<R>) -> Result<Vec<EvalRow>> {
    if inputs.is_empty() {
        return Err(Error::Empty("report needs at least one input".into()));
    }
    let mut rows = vec![];
    for (i, input) in inputs.into_iter().enumerate() {
        let mut rdr = csv::Reader::from_reader(input);
        check_header(&mut rdr, &EVAL_HEADER, &format!("report input {}", i + 1))?;
        for row in rdr.deserialize::<EvalRow>() {
            rows.push(row.map_err(|e| Error::Schema(format!("report input {}: {e}", i + 1)))?);
        }
    }
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.friction.total_cmp(&b.friction))
            .then(a.recovery.cmp(&b.recovery))
            .then(a.alpha.unwrap_or(-1.0).total_cmp(&b.alpha.unwrap_or(-1.0)))
            .then(a.window.cmp(&b.window))
    });
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhythmicRow {
    pub label: String,
    pub trial: usize,
    pub consecutive_successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarRow {
    pub label: String,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
    pub max: usize,
}

/// Orders labels so that embedded numbers compare by value ("size-2" before
/// "size-10").
fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut x, mut y) = (a, b);
    loop {
        match (x.is_empty(), y.is_empty()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            _ => {}
        }
        let dx = x.chars().next().unwrap().is_ascii_digit();
        let dy = y.chars().next().unwrap().is_ascii_digit();
        let split = |s: &str, digits: bool| s.find(|c: char| c.is_ascii_digit() != digits).unwrap_or(s.len());
        let (hx, tx) = x.split_at(split(x, dx));
        let (hy, ty) = y.split_at(split(y, dy));
        let ord = if dx && dy {
            let (nx, ny) = (hx.trim_start_matches('0'), hy.trim_start_matches('0'));
            nx.len().cmp(&ny.len()).then(nx.cmp(ny))
        } else {
            hx.cmp(hy)
        };
        if ord != Ordering::Equal {
            return ord;
        }
        x = tx;
        y = ty;
    }
}

/// Per-trial rows sorted by label then trial, plus one summary bar per label.
pub fn rhythmic_bars(mut rows: Vec<RhythmicRow>) -> (Vec<RhythmicRow>, Vec<BarRow>) {
    rows.sort_by(|a, b| natural_cmp(&a.label, &b.label).then(a.trial.cmp(&b.trial)));
    let mut bars: Vec<BarRow> = vec![];
    for group in rows.chunk_by(|a, b| a.label == b.label) {
        let n = group.len() as f64;
        let mean = group.iter().map(|r| r.consecutive_successes as f64).sum::<f64>() / n;
        let var = group.iter().map(|r| (r.consecutive_successes as f64 - mean).powi(2)).sum::<f64>() / n;
        bars.push(BarRow {
            label: group[0].label.clone(),
            trials: group.len(),
            mean,
            std: var.sqrt(),
            max: group.iter().map(|r| r.consecutive_successes).max().unwrap_or(0),
        });
    }
    (rows, bars)
}

pub fn read_rhythmic<R: Read>(input: R) -> Result<Vec<RhythmicRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &["label", "trial", "consecutive_successes"], "rhythmic input")?;
    rdr.deserialize().map(|r| r.map_err(|e| Error::Schema(format!("rhythmic input: {e}")))).collect()
}
