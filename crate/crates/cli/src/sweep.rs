//! Grid cells and the bounded worker pool that runs them.
//!
//! Cells own their inputs and return everything they produce; nothing is
//! written until every cell has finished, so output order never depends on
//! scheduling. A failing or panicking cell is recorded and the rest continue.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;

use crate::artifacts::PARTIAL_SUFFIX;
use crate::plot::Series;
use crate::{is_numerical, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Ok,
    /// The numerics blew up; partial artifacts are kept.
    Diverged(String),
    /// Anything else, including a panic.
    Failed(String),
}

impl CellStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged(_) => "diverged",
            CellStatus::Failed(_) => "failed",
        }
    }

    pub fn detail(&self) -> Option<String> {
        match self {
            CellStatus::Ok => None,
            CellStatus::Diverged(d) | CellStatus::Failed(d) => Some(d.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub name: String,
    pub status: CellStatus,
    pub artifacts: Vec<Artifact>,
    /// Ordered scalar results; they become the cell's summary record and its
    /// row in `cells.csv`.
    pub metrics: Vec<(String, f64)>,
    /// `(file stem, series)` pairs for plot export.
    pub plots: Vec<(String, Vec<Series>)>,
}

impl CellResult {
    pub fn new(name: impl Into<String>) -> Self {
        CellResult { name: name.into(), status: CellStatus::Ok, artifacts: Vec::new(), metrics: Vec::new(), plots: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.artifacts.push(Artifact { name: name.into(), bytes: bytes.into() });
    }

    pub fn add_partial(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.add(format!("{name}{PARTIAL_SUFFIX}"), bytes);
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.push((key.to_string(), value));
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn fail(&mut self, e: &vqcollapse::Error) {
        self.status = if is_numerical(e) { CellStatus::Diverged(e.to_string()) } else { CellStatus::Failed(e.to_string()) };
    }
}

/// One unit of sweep work.
pub struct Cell {
    pub name: String,
    pub job: Box<dyn FnOnce() -> CellResult + Send>,
}

impl Cell {
    pub fn new(name: impl Into<String>, job: impl FnOnce() -> CellResult + Send + 'static) -> Self {
        Cell { name: name.into(), job: Box::new(job) }
    }
}

/// Runs `cells` on a pool of `workers` threads (0 = available parallelism)
/// and returns their results in input order.
pub fn run_cells(cells: Vec<Cell>, workers: usize) -> Result<Vec<CellResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .into_par_iter()
            .map(|cell| {
                let name = cell.name;
                catch_unwind(AssertUnwindSafe(cell.job)).unwrap_or_else(|panic| {
                    let msg = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "unknown panic".into());
                    let mut r = CellResult::new(name);
                    r.status = CellStatus::Failed(format!("panicked: {msg}"));
                    r
                })
            })
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failing_cells_do_not_stop_the_others() {
        let mut cells = Vec::new();
        for i in 0..6 {
            cells.push(Cell::new(format!("c{i}"), move || {
                if i == 2 {
                    panic!("cell two breaks");
                }
                let mut r = CellResult::new(format!("c{i}"));
                if i == 4 {
                    r.fail(&vqcollapse::Error::Divergence { t: 1.0, detail: "boom".into() });
                    r.add_partial("c4.csv", "t\n");
                }
                r.metric("i", i as f64);
                r
            }));
        }
        let out = run_cells(cells, 2).unwrap();
        let labels: Vec<&str> = out.iter().map(|r| r.status.label()).collect();
        assert_eq!(labels, ["ok", "ok", "failed", "ok", "diverged", "ok"]);
        assert_eq!(out[5].get("i"), Some(5.0));
        assert!(out[2].status.detail().unwrap().contains("cell two breaks"));
        assert_eq!(out[4].artifacts[0].name, "c4.csv.partial");
    }
}
