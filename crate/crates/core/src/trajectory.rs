//! Recorded time series shared by every simulator, plus the common CSV dialect.
//!
//! Floats are written with 17 significant digits so a CSV round-trips
//! losslessly. Count columns (`d_eff`, `active_count`) are written in the
//! shortest exact form, which keeps integers integral and lets medians over
//! an even number of seeds show their half-integer values.

use std::fmt::Write as _;

use crate::error::{invalid, Result};

/// Column layout of a trajectory export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// `t, L_rec, d_eff, r_1 … r_d`
    Ae,
    /// `t, L_rec, L_com, d_eff, active_count, water_level, u_1 … u_d`
    DiagRdae,
    /// `t, L_rec, L_com, d_eff, active_count, water_level, lambda_1 … lambda_d`
    Dense,
    /// Dense layout plus a trailing `utilization` column.
    ToyVq,
}

impl TrajectoryKind {
    fn mode_prefix(self) -> &'static str {
        match self {
            TrajectoryKind::Ae => "r",
            TrajectoryKind::DiagRdae => "u",
            TrajectoryKind::Dense | TrajectoryKind::ToyVq => "lambda",
        }
    }
}

/// One recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub l_rec: f64,
    pub l_com: f64,
    pub d_eff: f64,
    pub active_count: f64,
    pub water_level: f64,
    /// Per-mode activations, encoder weights or latent eigenvalues depending
    /// on the [`TrajectoryKind`].
    pub modes: Vec<f64>,
    pub utilization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn new(kind: TrajectoryKind) -> Self {
        Trajectory { kind, snapshots: Vec::new() }
    }

    pub fn push(&mut self, s: Snapshot) {
        self.snapshots.push(s);
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let d = self.snapshots.first().map_or(0, |s| s.modes.len());
        let mut cols: Vec<String> = match self.kind {
            TrajectoryKind::Ae => vec!["t", "L_rec", "d_eff"],
            _ => vec!["t", "L_rec", "L_com", "d_eff", "active_count", "water_level"],
        }
        .into_iter()
        .map(String::from)
        .collect();
        let prefix = self.kind.mode_prefix();
        cols.extend((1..=d).map(|j| format!("{prefix}_{j}")));
        if self.kind == TrajectoryKind::ToyVq {
            cols.push("utilization".into());
        }
        cols
    }

    /// Renders the trajectory in the shared CSV dialect, header included.
    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for s in &self.snapshots {
            let mut fields: Vec<String> = vec![fmt_float(s.t), fmt_float(s.l_rec)];
            match self.kind {
                TrajectoryKind::Ae => fields.push(fmt_count(s.d_eff)),
                _ => {
                    fields.push(fmt_float(s.l_com));
                    fields.push(fmt_count(s.d_eff));
                    fields.push(fmt_count(s.active_count));
                    fields.push(fmt_float(s.water_level));
                }
            }
            fields.extend(s.modes.iter().map(|&v| fmt_float(v)));
            if self.kind == TrajectoryKind::ToyVq {
                fields.push(fmt_float(s.utilization.unwrap_or(f64::NAN)));
            }
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_count(v: f64) -> String {
    format!("{v}")
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Pointwise median over trajectories recorded on a common time grid.
pub fn median_trajectory(runs: &[&Trajectory]) -> Result<Trajectory> {
    let first = runs.first().ok_or_else(|| invalid("no trajectories to aggregate"))?;
    let n = first.snapshots.len();
    for r in runs {
        if r.kind != first.kind || r.snapshots.len() != n {
            return Err(invalid("trajectories do not share a layout and time grid"));
        }
        if r.snapshots.iter().zip(&first.snapshots).any(|(a, b)| a.t != b.t || a.modes.len() != b.modes.len()) {
            return Err(invalid("trajectories do not share a time grid"));
        }
    }
    let med = |f: &dyn Fn(&Snapshot) -> f64, i: usize| {
        let mut v: Vec<f64> = runs.iter().map(|r| f(&r.snapshots[i])).collect();
        median(&mut v).expect("non-empty")
    };
    let mut out = Trajectory::new(first.kind);
    for i in 0..n {
        let d = first.snapshots[i].modes.len();
        out.push(Snapshot {
            t: first.snapshots[i].t,
            l_rec: med(&|s| s.l_rec, i),
            l_com: med(&|s| s.l_com, i),
            d_eff: med(&|s| s.d_eff, i),
            active_count: med(&|s| s.active_count, i),
            water_level: med(&|s| s.water_level, i),
            modes: (0..d).map(|j| med(&|s| s.modes[j], i)).collect(),
            utilization: first.snapshots[i].utilization.map(|_| med(&|s| s.utilization.unwrap_or(f64::NAN), i)),
        });
    }
    Ok(out)
}
