//! Per-run performance figures and their aggregation.

use serde::Serialize;

use crate::dynamics::Trace;
use crate::model::{psi, AllocationMatrix, Instance, PotentialSpec};

/// Unallocated atoms, moves per atom, potential ratio and mean resources used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub delta: u64,
    pub nu_moves: f64,
    pub psi_ratio: Option<f64>,
    pub degree: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub wall_ms: f64,
}

/// Column means over replicas; `psi_ratio` only when every row has one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanRow {
    pub delta: f64,
    pub nu_moves: f64,
    pub psi_ratio: Option<f64>,
    pub degree: f64,
    pub wall_ms: f64,
}

pub const CSV_HEADER: [&str; 6] = ["seed", "delta", "nu_moves", "psi_ratio", "degree", "wall_ms"];

pub fn compute_metrics(
    inst: &Instance,
    spec: &PotentialSpec,
    trace: &Trace,
    w_t: &AllocationMatrix,
    psi_opt: Option<f64>,
) -> Metrics {
    let n = inst.n();
    let delta = inst.total_alpha() - w_t.total();
    let allocating: Vec<usize> = (0..n).filter(|&x| inst.alpha(x) > 0).collect();
    let nu_moves = if allocating.is_empty() {
        0.0
    } else {
        allocating
            .iter()
            .map(|&x| trace.per_unit_moves[x] as f64 / inst.alpha(x) as f64)
            .sum::<f64>()
            / allocating.len() as f64
    };
    let degree = if n == 0 {
        0.0
    } else {
        (0..n).map(|x| w_t.row_support(x) as f64).sum::<f64>() / n as f64
    };
    Metrics {
        delta,
        nu_moves,
        psi_ratio: psi_opt.map(|opt| psi(inst, spec, w_t) / opt),
        degree,
    }
}

pub fn mean_row(rows: &[MetricsRow]) -> MeanRow {
    let k = rows.len().max(1) as f64;
    let avg = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let psi_ratio = if !rows.is_empty() && rows.iter().all(|r| r.metrics.psi_ratio.is_some()) {
        Some(avg(&|r| r.metrics.psi_ratio.unwrap()))
    } else {
        None
    };
    MeanRow {
        delta: avg(&|r| r.metrics.delta as f64),
        nu_moves: avg(&|r| r.metrics.nu_moves),
        psi_ratio,
        degree: avg(&|r| r.metrics.degree),
        wall_ms: avg(&|r| r.wall_ms),
    }
}

/// Rounds to 12 significant digits.
pub fn round12(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format!("{v:.11e}").parse().expect("formatted float parses")
}

/// Text form with 12 significant digits.
pub fn fmt12(v: f64) -> String {
    round12(v).to_string()
}

fn opt_fmt(v: Option<f64>) -> String {
    v.map(fmt12).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv_record(&self) -> [String; 6] {
        [
            self.seed.to_string(),
            self.metrics.delta.to_string(),
            fmt12(self.metrics.nu_moves),
            opt_fmt(self.metrics.psi_ratio),
            fmt12(self.metrics.degree),
            fmt12(self.wall_ms),
        ]
    }
}

impl MeanRow {
    pub fn csv_record(&self) -> [String; 6] {
        [
            "mean".into(),
            fmt12(self.delta),
            fmt12(self.nu_moves),
            opt_fmt(self.psi_ratio),
            fmt12(self.degree),
            fmt12(self.wall_ms),
        ]
    }
}
