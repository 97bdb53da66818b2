//! Per-iteration run history and its CSV form.
//!
//! Header: `iteration,tau,best_cost,mean_cost,spread,beta,gain_norm,l_index,
//! best_param_1..best_param_n`. Row 0 describes the initial ensemble. Floats
//! are written in shortest round-trip form so identical runs give
//! byte-identical files.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub tau: f64,
    pub best_cost: f64,
    pub mean_cost: f64,
    pub spread: f64,
    pub beta: f64,
    pub gain_norm: f64,
    pub l_index: f64,
    pub best_point: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

const FIXED_COLUMNS: [&str; 8] = [
    "iteration",
    "tau",
    "best_cost",
    "mean_cost",
    "spread",
    "beta",
    "gain_norm",
    "l_index",
];

impl Trace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Completed iterations, not counting the initial row.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn best_costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.best_cost)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.records.first().map_or(0, |r| r.best_point.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((1..=dim).map(|k| format!("best_param_{k}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                fmt(r.tau),
                fmt(r.best_cost),
                fmt(r.mean_cost),
                fmt(r.spread),
                fmt(r.beta),
                fmt(r.gain_norm),
                fmt(r.l_index),
            ];
            row.extend(r.best_point.iter().map(|v| fmt(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.len() < FIXED_COLUMNS.len()
            || header.iter().take(FIXED_COLUMNS.len()).ne(FIXED_COLUMNS)
        {
            return Err(Error::Config(format!(
                "{}: unexpected trace header",
                path.display()
            )));
        }
        let mut trace = Trace::default();
        for rec in r.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            };
            trace.push(TraceRecord {
                iteration: rec[0]
                    .parse()
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                tau: num(1)?,
                best_cost: num(2)?,
                mean_cost: num(3)?,
                spread: num(4)?,
                beta: num(5)?,
                gain_norm: num(6)?,
                l_index: num(7)?,
                best_point: (FIXED_COLUMNS.len()..rec.len())
                    .map(num)
                    .collect::<Result<_>>()?,
            });
        }
        Ok(trace)
    }
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}
