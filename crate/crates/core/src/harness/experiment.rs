//! Seeded Monte Carlo batches and their on-disk outputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Resolved, CONFIG_VERSION};
use super::metrics::{compute_metrics, mean_row, round12, MeanRow, MetricsRow, CSV_HEADER};
use crate::dynamics::{replica_seed, run, DynamicsError, Event, RunOptions, Trace};
use crate::exact::brute_force_optimum;
use crate::feasibility::hall_check_maxflow;
use crate::model::{closed_form_optimum, FunctionalState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumSource {
    ClosedForm,
    BruteForce,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub mean: MeanRow,
    /// Per replica, empty when traces are disabled.
    pub traces: Vec<Trace>,
    pub psi_opt: Option<(f64, OptimumSource)>,
    pub feasible: bool,
}

/// Reference maximum of the potential, when one is available.
pub fn reference_optimum(r: &Resolved) -> Option<(f64, OptimumSource)> {
    if let Some(v) = closed_form_optimum(&r.instance, &r.spec) {
        return Some((v, OptimumSource::ClosedForm));
    }
    brute_force_optimum(&r.instance, &r.spec)
        .ok()
        .map(|o| (o.value, OptimumSource::BruteForce))
}

pub fn run_experiment(r: &Resolved) -> Result<ExperimentResult, DynamicsError> {
    let feasible = hall_check_maxflow(&r.instance).feasible;
    let psi_opt = reference_optimum(r);
    let xi0 = FunctionalState::all_on(r.instance.n());
    let opts = RunOptions {
        record_events: r.traces,
    };
    let outcomes: Vec<Result<(MetricsRow, Trace), DynamicsError>> = (0..r.replicas)
        .into_par_iter()
        .map(|i| {
            let mut cfg = r.sim.clone();
            cfg.seed = replica_seed(r.sim.seed, i as u64);
            let start = Instant::now();
            let out = run(&r.instance, &r.spec, &cfg, &r.initial, &xi0, opts)?;
            let wall_ms = if r.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64() * 1e3
            };
            let metrics = compute_metrics(&r.instance, &r.spec, &out.trace, &out.w, psi_opt.map(|p| p.0));
            Ok((
                MetricsRow {
                    seed: cfg.seed,
                    metrics,
                    wall_ms,
                },
                out.trace,
            ))
        })
        .collect();
    let mut rows = Vec::with_capacity(r.replicas);
    let mut traces = Vec::new();
    for o in outcomes {
        let (row, trace) = o?;
        rows.push(row);
        if r.traces {
            traces.push(trace);
        }
    }
    Ok(ExperimentResult {
        mean: mean_row(&rows),
        rows,
        traces,
        psi_opt,
        feasible,
    })
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    version: u32,
    seed: u64,
    instance_seed: Option<u64>,
    replicas: usize,
    n: usize,
    total_alpha: u64,
    feasible: bool,
    psi_opt: Option<f64>,
    psi_opt_source: Option<OptimumSource>,
    mean: MeanRow,
    rows: &'a [MetricsRow],
}

fn rounded(mut m: MeanRow) -> MeanRow {
    m.delta = round12(m.delta);
    m.nu_moves = round12(m.nu_moves);
    m.psi_ratio = m.psi_ratio.map(round12);
    m.degree = round12(m.degree);
    m.wall_ms = round12(m.wall_ms);
    m
}

fn rounded_row(mut row: MetricsRow) -> MetricsRow {
    row.metrics.nu_moves = round12(row.metrics.nu_moves);
    row.metrics.psi_ratio = row.metrics.psi_ratio.map(round12);
    row.metrics.degree = round12(row.metrics.degree);
    row.wall_ms = round12(row.wall_ms);
    row
}

pub fn trace_jsonl(trace: &Trace) -> String {
    let mut out = String::new();
    for e in &trace.events {
        let e = Event {
            t: round12(e.t),
            psi: round12(e.psi),
            ..e.clone()
        };
        out.push_str(&serde_json::to_string(&e).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn metrics_csv(result: &ExperimentResult) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in &result.rows {
        w.write_record(row.csv_record()).expect("in-memory write");
    }
    w.write_record(result.mean.csv_record()).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Writes `metrics.csv`, `summary.json` and `trace_NNN.jsonl` into `dir`.
pub fn write_outputs(r: &Resolved, result: &ExperimentResult, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: &str| -> std::io::Result<()> {
        let path = dir.join(name);
        std::fs::File::create(&path)?.write_all(body.as_bytes())?;
        written.push(path);
        Ok(())
    };
    put("metrics.csv".into(), &metrics_csv(result))?;
    let rows: Vec<MetricsRow> = result.rows.iter().copied().map(rounded_row).collect();
    let summary = Summary {
        version: CONFIG_VERSION,
        seed: r.sim.seed,
        instance_seed: r.instance_seed,
        replicas: r.replicas,
        n: r.instance.n(),
        total_alpha: r.instance.total_alpha(),
        feasible: result.feasible,
        psi_opt: result.psi_opt.map(|p| round12(p.0)),
        psi_opt_source: result.psi_opt.map(|p| p.1),
        mean: rounded(result.mean),
        rows: &rows,
    };
    put(
        "summary.json".into(),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    for (i, trace) in result.traces.iter().enumerate() {
        put(format!("trace_{i:03}.jsonl"), &trace_jsonl(trace))?;
    }
    Ok(written)
}
