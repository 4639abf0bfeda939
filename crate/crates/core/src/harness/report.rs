//! Report rows, CSV writers and the space-time norms used by the studies.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{integrate, DomainGrid, Field, Mesh, TimeGrid};
use crate::harness::config::ExperimentConfig;
use crate::orlicz::{luxemburg_norm, DiscreteField, NFunction};

/// One row of the convergence study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub epsilon: f64,
    pub rel_l2: f64,
    pub rel_lux: f64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairingRow {
    pub epsilon: f64,
    pub phi_id: String,
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManufacturedRow {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub max_err: f64,
    pub order_s: Option<f64>,
    pub order_t: Option<f64>,
}

/// Writes serializable rows with a header taken from the field names.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows_to<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    write_rows(rows, fs::File::create(path)?)
}

/// Writes the resolved configuration next to a run's outputs.
pub fn write_resolved_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

/// Drops one named column from CSV text, e.g. wall-clock timings before a
/// reproducibility comparison.
pub fn without_column(csv_text: &str, column: &str) -> Result<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = r.headers()?.clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|i| &headers[*i] != column).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(keep.iter().map(|i| &headers[*i]))?;
    for rec in r.records() {
        let rec = rec?;
        w.write_record(keep.iter().map(|i| &rec[*i]))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// Discrete `L^2(Q)` norm of `states[1..]` with weights `w_i dt`.
pub fn space_time_l2(grid: &DomainGrid, time: &TimeGrid, states: &[Field]) -> Result<f64> {
    let mut acc = 0.0;
    for u in states.iter().skip(1) {
        let sq = Field {
            values: u.values.iter().map(|v| v * v).collect(),
        };
        acc += time.dt() * integrate(&sq, grid)?;
    }
    Ok(acc.sqrt())
}

/// Discrete Luxemburg norm over `Q` of `states[1..]` with weights `w_i dt`.
pub fn space_time_luxemburg(grid: &DomainGrid, time: &TimeGrid, states: &[Field], nf: &NFunction) -> Result<f64> {
    let nn = grid.num_nodes();
    let mut values = Vec::with_capacity(nn * states.len());
    let mut weights = Vec::with_capacity(nn * states.len());
    for u in states.iter().skip(1) {
        u.check(grid)?;
        values.extend_from_slice(&u.values);
        weights.extend((0..nn).map(|i| grid.node_weight(i) * time.dt()));
    }
    luxemburg_norm(&DiscreteField::new(values, weights)?, nf)
}

/// `num / den`, or `num` itself when the reference vanishes.
pub fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Whether a sequence strictly decreases.
pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}
