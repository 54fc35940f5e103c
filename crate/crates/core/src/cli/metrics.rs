use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PacerError, Result};
use crate::trainer::MetricsRow;

pub const HEADER: [&str; 10] = [
    "step",
    "wall_ms",
    "critic_loss",
    "actor_loss",
    "d_m",
    "v_psi",
    "alpha",
    "beta",
    "eval_return_mean",
    "eval_return_std",
];

/// A parsed CSV line; empty cells are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub wall_ms: u64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub d_m: Option<f64>,
    pub v_psi: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
}

impl From<&MetricsRow> for MetricsRecord {
    fn from(r: &MetricsRow) -> Self {
        let t = r.train;
        MetricsRecord {
            step: r.step,
            wall_ms: r.wall_ms,
            critic_loss: t.map(|m| m.critic_loss),
            actor_loss: t.map(|m| m.actor_loss),
            d_m: t.map(|m| m.d_m),
            v_psi: t.map(|m| m.v_psi),
            alpha: t.map(|m| m.alpha),
            beta: t.map(|m| m.beta),
            eval_return_mean: r.eval.map(|e| e.0),
            eval_return_std: r.eval.map(|e| e.1),
        }
    }
}

/// Append-only metrics file; rows must arrive in increasing step order.
pub struct MetricsLog {
    writer: csv::Writer<BufWriter<File>>,
    last_step: Option<usize>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        writer.write_record(HEADER).map_err(csv_err)?;
        Ok(MetricsLog { writer, last_step: None })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if self.last_step.is_some_and(|s| row.step <= s) {
            return Err(PacerError::Data(format!("metrics step {} does not increase", row.step)));
        }
        self.last_step = Some(row.step);
        self.writer.serialize(MetricsRecord::from(row)).map_err(csv_err)?;
        // keep partial logs on disk if a later step fails
        self.writer.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> PacerError {
    PacerError::Data(e.to_string())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| PacerError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(PacerError::Data(format!("{}: unexpected header", path.display())));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| PacerError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// `(step, mean eval return)` pairs of a metrics file.
pub fn eval_series(records: &[MetricsRecord]) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|r| r.eval_return_mean.map(|m| (r.step as f64, m)))
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
