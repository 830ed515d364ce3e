//! Empirical success-time model: the fraction of training episodes still
//! running at `t` that go on to succeed before the time limit.

use crate::error::{Error, Result};
use crate::sim::Outcome;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeOnlyRow {
    pub t: usize,
    pub alive: usize,
    pub succeeded: usize,
    /// Empty when no training episode was alive at `t`.
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeOnlyTable {
    horizon: usize,
    alive: Vec<usize>,
    succeeded: Vec<usize>,
}

impl TimeOnlyTable {
    /// Counts, for every `t` in `0..=T`, the episodes with `T_S >= t` and how
    /// many of those succeeded.
    pub fn fit<'a, I>(outcomes: I, horizon: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Outcome>,
    {
        // Histogram of success times, then suffix sums.
        let mut ended_at = vec![0usize; horizon + 1];
        let mut success_at = vec![0usize; horizon + 1];
        let mut n = 0usize;
        for o in outcomes {
            let ts = o.success_time.min(horizon);
            ended_at[ts] += 1;
            if o.success && ts < horizon {
                success_at[ts] += 1;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("time-only fit needs at least one episode".into()));
        }
        let mut alive = vec![0usize; horizon + 1];
        let mut succeeded = vec![0usize; horizon + 1];
        let (mut a, mut s) = (0, 0);
        for t in (0..=horizon).rev() {
            a += ended_at[t];
            s += success_at[t];
            alive[t] = a;
            succeeded[t] = s;
        }
        Ok(TimeOnlyTable { horizon, alive, succeeded })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `p[t]`, or `None` when no episode was alive at `t`.
    pub fn predict(&self, t: usize) -> Result<Option<f64>> {
        if t > self.horizon {
            return Err(Error::InvalidArgument(format!("t = {t} exceeds the horizon {}", self.horizon)));
        }
        Ok(self.probability(t))
    }

    fn probability(&self, t: usize) -> Option<f64> {
        match self.alive[t] {
            0 => None,
            a => Some(self.succeeded[t] as f64 / a as f64),
        }
    }

    pub fn rows(&self) -> Vec<TimeOnlyRow> {
        (0..=self.horizon)
            .map(|t| TimeOnlyRow { t, alive: self.alive[t], succeeded: self.succeeded[t], p: self.probability(t) })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.rows() {
            out.serialize(row)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "alive", "succeeded", "p"] {
            return Err(Error::Schema(format!("unexpected time-only header {headers:?}")));
        }
        let mut alive = vec![];
        let mut succeeded = vec![];
        for (i, row) in rdr.deserialize::<TimeOnlyRow>().enumerate() {
            let row = row?;
            if row.t != i || row.succeeded > row.alive {
                return Err(Error::Schema(format!("malformed time-only row {i}")));
            }
            alive.push(row.alive);
            succeeded.push(row.succeeded);
        }
        if alive.is_empty() {
            return Err(Error::Empty("time-only table has no rows".into()));
        }
        Ok(TimeOnlyTable { horizon: alive.len() - 1, alive, succeeded })
    }
}
