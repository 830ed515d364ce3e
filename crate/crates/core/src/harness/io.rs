//! File formats: trajectories as JSON lines, everything tabular as CSV.

use crate::error::{Error, Result};
use crate::forecast::{Forecaster, TimeOnlyTable};
use crate::nn::{Head, MlpModel};
use crate::policy::{FailureMonitor, Trajectory};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn write_trajectories<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<()> {
    for tr in trajectories {
        serde_json::to_writer(&mut w, tr)?;
        w.write_all(b"\n").map_err(|e| Error::io("<trajectories>", e))?;
    }
    w.flush().map_err(|e| Error::io("<trajectories>", e))
}

pub fn read_trajectories<R: BufRead>(r: R) -> Result<Vec<Trajectory>> {
    let mut out = vec![];
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<trajectories>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("trajectory line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub fn save_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    write_trajectories(create(path)?, trajectories)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    read_trajectories(open(path)?)
}

pub fn write_csv_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv_rows<T: DeserializeOwned>(r: impl std::io::Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Loads a forecaster from a time-only CSV table or a JSON network file.
/// `alpha` and `window` override the values stored with the model.
pub fn load_forecaster(path: &Path, alpha: Option<f64>, window: Option<usize>, default_alpha: f64) -> Result<Forecaster> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let forecaster = if is_csv {
        let table = TimeOnlyTable::read_csv(open(path)?)?;
        Forecaster::TimeOnly { table, alpha: alpha.unwrap_or(default_alpha) }
    } else {
        let model = MlpModel::read_json(open(path)?)?;
        let a = alpha.unwrap_or(model.meta.alpha);
        match model.head {
            Head::Survival { .. } => {
                let w = window.unwrap_or(model.meta.window);
                Forecaster::MovingWindow { model, window: w, alpha: a }
            }
            Head::Classifier => Forecaster::FullTrajectory { model, alpha: a },
            Head::Linear => return Err(Error::Schema("a linear model is not a forecaster".into())),
        }
    };
    if !(0.0..=1.0).contains(&forecaster.alpha()) {
        return Err(Error::Config("alpha must lie in [0, 1]".into()));
    }
    Ok(forecaster)
}
