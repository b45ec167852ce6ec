//! Exact analysis of small instances: state enumeration, transition graphs,
//! the generator of the restricted chain, its stationary law, and brute-force
//! equilibrium and optimum checks.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::SimConfig;
use crate::feasibility::hall_check_maxflow;
use crate::model::{psi, utility, utility_delta, AllocationMatrix, FunctionalState, Instance, PotentialSpec, Unit};
use crate::moves::{enumerate_moves, MoveError, MoveFamily};
use crate::sampler::gibbs_distribution;

/// Maximum estimated number of allocation matrices to enumerate.
pub const STATE_GUARD: f64 = 1e6;
/// Maximum number of generator states (dense matrices).
pub const GENERATOR_GUARD: usize = 10_000;
pub const NASH_MAX_ALPHA: u32 = 8;
pub const NASH_MAX_DEGREE: usize = 5;
/// Relative tolerance for utility and potential comparisons.
pub const VALUE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("estimated {estimate:.3e} states exceeds the limit of {limit:.0e}")]
    TooManyStates { estimate: f64, limit: f64 },
    #[error("generator would have {states} states, limit is {limit}")]
    GeneratorTooLarge { states: usize, limit: usize },
    #[error("unit {unit} has alpha {alpha} and out-degree {degree}; row enumeration allows alpha <= {NASH_MAX_ALPHA}, degree <= {NASH_MAX_DEGREE}")]
    RowTooLarge { unit: Unit, alpha: u32, degree: usize },
    #[error("instance admits no complete allocation")]
    Infeasible,
    #[error("generator is reducible; stationary law is not unique")]
    Reducible,
    #[error("initial allocation violates the instance constraints")]
    InvalidStart,
    #[error(transparent)]
    Family(#[from] MoveError),
}

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Upper estimate of the state count ignoring column capacities.
pub fn estimate_state_count(inst: &Instance, complete_only: bool) -> f64 {
    (0..inst.n())
        .map(|x| {
            let a = inst.alpha(x) as u64;
            let d = inst.out_neighbors(x).len() as u64;
            if complete_only {
                if d == 0 {
                    (a == 0) as u64 as f64
                } else {
                    binomial(a + d - 1, d - 1)
                }
            } else {
                binomial(a + d, d)
            }
        })
        .product()
}

fn guard(inst: &Instance, complete_only: bool) -> Result<(), ExactError> {
    let estimate = estimate_state_count(inst, complete_only);
    if estimate > STATE_GUARD {
        return Err(ExactError::TooManyStates {
            estimate,
            limit: STATE_GUARD,
        });
    }
    Ok(())
}

/// Every vector on `support` with entries bounded by `caps`, summing to
/// `total` exactly (if `exact`) or at most `total`.
fn compositions(support: &[Unit], caps: &[u32], total: u32, exact: bool, out: &mut Vec<Vec<u32>>) {
    fn go(
        i: usize,
        support: &[Unit],
        caps: &[u32],
        left: u32,
        exact: bool,
        cur: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
    ) {
        if i == support.len() {
            if !exact || left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let room: u32 = if exact { caps[i + 1..].iter().sum() } else { u32::MAX };
        let hi = left.min(caps[i]);
        for v in 0..=hi {
            if exact && left - v > room {
                continue;
            }
            cur.push(v);
            go(i + 1, support, caps, left - v, exact, cur, out);
            cur.pop();
        }
    }
    go(0, support, caps, total, exact, &mut Vec::with_capacity(support.len()), out);
}

/// All of `W_p` (or only complete allocations) by row-wise search.
pub fn enumerate_states(inst: &Instance, complete_only: bool) -> Result<Vec<AllocationMatrix>, ExactError> {
    guard(inst, complete_only)?;
    let n = inst.n();
    let mut out = Vec::new();
    let mut w = AllocationMatrix::zeros(n);
    fn rec(inst: &Instance, complete_only: bool, x: Unit, w: &mut AllocationMatrix, out: &mut Vec<AllocationMatrix>) {
        if x == inst.n() {
            out.push(w.clone());
            return;
        }
        let support = inst.out_neighbors(x);
        let caps: Vec<u32> = support.iter().map(|&y| inst.beta(y) - w.col_sum(y)).collect();
        let mut rows = Vec::new();
        compositions(support, &caps, inst.alpha(x), complete_only, &mut rows);
        for row in rows {
            for (&y, &v) in support.iter().zip(&row) {
                w.set(x, y, v);
            }
            rec(inst, complete_only, x + 1, w, out);
        }
        for &y in support {
            w.set(x, y, 0);
        }
    }
    rec(inst, complete_only, 0, &mut w, &mut out);
    Ok(out)
}

/// Transition graph induced by the move family with every unit on.
#[derive(Debug, Clone)]
pub struct StateGraph {
    pub nodes: Vec<AllocationMatrix>,
    /// `adjacency[i][x]`: targets reachable when `x` moves from node `i`.
    pub adjacency: Vec<Vec<Vec<usize>>>,
    index: HashMap<AllocationMatrix, usize>,
}

impl StateGraph {
    pub fn index_of(&self, w: &AllocationMatrix) -> Option<usize> {
        self.index.get(w).copied()
    }

    /// Union over actors, sorted.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut all: Vec<usize> = self.adjacency[i].iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn edge_count(&self) -> usize {
        (0..self.nodes.len()).map(|i| self.neighbors(i).len()).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.nodes.len()).all(|i| {
            self.neighbors(i)
                .into_iter()
                .all(|j| self.neighbors(j).binary_search(&i).is_ok())
        })
    }
}

pub fn build_state_graph(
    inst: &Instance,
    family: &MoveFamily,
    complete_only: bool,
) -> Result<StateGraph, ExactError> {
    family.validate_for(inst)?;
    let nodes = enumerate_states(inst, complete_only)?;
    let index: HashMap<AllocationMatrix, usize> = nodes.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
    let on = FunctionalState::all_on(inst.n());
    let adjacency = nodes
        .iter()
        .map(|w| {
            (0..inst.n())
                .map(|x| {
                    enumerate_moves(inst, family, w, &on, x)
                        .iter()
                        .map(|m| index[&m.applied(w)])
                        .collect()
                })
                .collect()
        })
        .collect();
    let graph = StateGraph { nodes, adjacency, index };
    if complete_only {
        assert!(graph.is_symmetric(), "distribution moves must be reversible");
    }
    Ok(graph)
}

/// Shortest path in the partial-allocation graph from `w0` to a complete
/// allocation, excluding `w0` itself. `None` means no complete allocation is
/// reachable.
pub fn reachability_check(
    inst: &Instance,
    family: &MoveFamily,
    w0: &AllocationMatrix,
) -> Result<Option<Vec<AllocationMatrix>>, ExactError> {
    family.validate_for(inst)?;
    if w0.n() != inst.n() || !w0.is_partial(inst) {
        return Err(ExactError::InvalidStart);
    }
    if !hall_check_maxflow(inst).feasible {
        return Err(ExactError::Infeasible);
    }
    guard(inst, false)?;
    let on = FunctionalState::all_on(inst.n());
    let mut parent: HashMap<AllocationMatrix, Option<AllocationMatrix>> = HashMap::new();
    parent.insert(w0.clone(), None);
    let mut queue = VecDeque::from([w0.clone()]);
    while let Some(w) = queue.pop_front() {
        if w.is_complete(inst) {
            let mut path = Vec::new();
            let mut cur = w;
            while let Some(Some(prev)) = parent.get(&cur) {
                let prev = prev.clone();
                path.push(cur);
                cur = prev;
            }
            path.reverse();
            return Ok(Some(path));
        }
        for x in 0..inst.n() {
            for m in enumerate_moves(inst, family, &w, &on, x) {
                let next = m.applied(&w);
                if !parent.contains_key(&next) {
                    parent.insert(next.clone(), Some(w.clone()));
                    queue.push_back(next);
                }
            }
        }
    }
    Ok(None)
}

/// States of `W_p` that cannot reach a complete allocation (empty on every
/// feasible instance).
pub fn unreachable_states(inst: &Instance, family: &MoveFamily) -> Result<Vec<AllocationMatrix>, ExactError> {
    let g = build_state_graph(inst, family, false)?;
    let mut reverse = vec![Vec::new(); g.nodes.len()];
    for i in 0..g.nodes.len() {
        for j in g.neighbors(i) {
            reverse[j].push(i);
        }
    }
    let mut seen = vec![false; g.nodes.len()];
    let mut queue: VecDeque<usize> = (0..g.nodes.len()).filter(|&i| g.nodes[i].is_complete(inst)).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &j in &reverse[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(g.nodes.into_iter().zip(seen).filter(|(_, s)| !s).map(|(w, _)| w).collect())
}

/// Whether the graph on complete allocations is connected (false if empty).
pub fn connectivity_check(inst: &Instance, family: &MoveFamily) -> Result<bool, ExactError> {
    let g = build_state_graph(inst, family, true)?;
    if g.nodes.is_empty() {
        return Ok(false);
    }
    let mut seen = vec![false; g.nodes.len()];
    seen[0] = true;
    let mut queue = VecDeque::from([0]);
    let mut count = 1;
    while let Some(i) = queue.pop_front() {
        for j in g.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                queue.push_back(j);
            }
        }
    }
    Ok(count == g.nodes.len())
}

/// Rate matrix of the chain restricted to complete allocations.
#[derive(Debug, Clone)]
pub struct Generator {
    pub allocations: Vec<AllocationMatrix>,
    /// `(allocation index, functional state)` per generator row.
    pub states: Vec<(usize, FunctionalState)>,
    pub rates: DMatrix<f64>,
}

impl Generator {
    /// `|row sum|` maximum; zero up to rounding.
    pub fn max_row_sum(&self) -> f64 {
        self.rates
            .row_iter()
            .map(|r| r.sum().abs())
            .fold(0.0, f64::max)
    }

    fn strongly_connected(&self) -> bool {
        let k = self.states.len();
        if k == 0 {
            return false;
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; k];
            seen[0] = true;
            let mut stack = vec![0];
            while let Some(i) = stack.pop() {
                for j in 0..k {
                    let r = if forward { self.rates[(i, j)] } else { self.rates[(j, i)] };
                    if i != j && r > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

/// Generator over complete allocations (times on/off states with churn).
pub fn build_generator(
    inst: &Instance,
    spec: &PotentialSpec,
    family: &MoveFamily,
    cfg: &SimConfig,
    gamma: f64,
    include_churn: bool,
) -> Result<Generator, ExactError> {
    family.validate_for(inst)?;
    let n = inst.n();
    let allocations = enumerate_states(inst, true)?;
    let index: HashMap<&AllocationMatrix, usize> = allocations.iter().enumerate().map(|(i, w)| (w, i)).collect();
    let xis: Vec<FunctionalState> = if include_churn {
        (0..1u64 << n).map(|b| FunctionalState::from_bits(n, b)).collect()
    } else {
        vec![FunctionalState::all_on(n)]
    };
    let total = allocations.len() * xis.len();
    if total > GENERATOR_GUARD {
        return Err(ExactError::GeneratorTooLarge {
            states: total,
            limit: GENERATOR_GUARD,
        });
    }
    let id = |w: usize, xi: usize| w * xis.len() + xi;
    let mut states = Vec::with_capacity(total);
    let mut rates = DMatrix::zeros(total, total);
    for (wi, w) in allocations.iter().enumerate() {
        for (ki, xi) in xis.iter().enumerate() {
            states.push((wi, xi.clone()));
            let from = id(wi, ki);
            if include_churn {
                for x in 0..n {
                    let bits = xi.to_bits() ^ (1 << x);
                    let rate = if xi.is_on(x) { cfg.nu_off[x] } else { cfg.nu_on[x] };
                    rates[(from, id(wi, bits as usize))] += rate;
                }
            }
            for x in (0..n).filter(|&x| xi.is_on(x)) {
                let dist = gibbs_distribution(inst, spec, family, w, xi, x, gamma);
                for (m, p) in dist.moves {
                    let to = index[&m.applied(w)];
                    rates[(from, id(to, ki))] += cfg.nu_act[x] * p;
                }
            }
        }
    }
    for i in 0..total {
        let off: f64 = (0..total).filter(|&j| j != i).map(|j| rates[(i, j)]).sum();
        rates[(i, i)] = -off;
    }
    Ok(Generator {
        allocations,
        states,
        rates,
    })
}

/// Solution of `μ Λ = 0`, `Σ μ = 1`.
pub fn stationary_distribution(gen: &Generator) -> Result<Vec<f64>, ExactError> {
    if !gen.strongly_connected() {
        return Err(ExactError::Reducible);
    }
    let k = gen.states.len();
    let mut a = gen.rates.transpose();
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(k);
    b[k - 1] = 1.0;
    let mu = a.lu().solve(&b).ok_or(ExactError::Reducible)?;
    Ok(mu.iter().copied().collect())
}

/// `‖μ Λ‖_∞`.
pub fn stationary_residual(gen: &Generator, mu: &[f64]) -> f64 {
    let v = DVector::from_column_slice(mu).transpose() * &gen.rates;
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Unnormalized log weight `γΨ(W) + Σ_on ln ν^on + Σ_off ln ν^off` per state
/// (rate factors only with churn).
pub fn log_rho(
    inst: &Instance,
    spec: &PotentialSpec,
    cfg: &SimConfig,
    gen: &Generator,
    gamma: f64,
    include_churn: bool,
) -> Vec<f64> {
    gen.states
        .iter()
        .map(|(wi, xi)| {
            let mut v = gamma * psi(inst, spec, &gen.allocations[*wi]);
            if include_churn {
                for x in 0..inst.n() {
                    v += if xi.is_on(x) { cfg.nu_on[x].ln() } else { cfg.nu_off[x].ln() };
                }
            }
            v
        })
        .collect()
}

/// Closed-form stationary law.
pub fn gibbs_measure(
    inst: &Instance,
    spec: &PotentialSpec,
    cfg: &SimConfig,
    gen: &Generator,
    gamma: f64,
    include_churn: bool,
) -> Vec<f64> {
    normalize_log(&log_rho(inst, spec, cfg, gen, gamma, include_churn))
}

pub fn normalize_log(log_w: &[f64]) -> Vec<f64> {
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|v| (v - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceReport {
    /// Unordered state pairs with a positive rate in either direction.
    pub pairs: usize,
    pub max_relative_error: f64,
}

/// Pairwise check of `ρ_i Λ_ij = ρ_j Λ_ji` in log space.
pub fn detailed_balance(gen: &Generator, log_rho: &[f64]) -> BalanceReport {
    let k = gen.states.len();
    let mut pairs = 0;
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (gen.rates[(i, j)], gen.rates[(j, i)]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            pairs += 1;
            if a == 0.0 || b == 0.0 {
                worst = f64::INFINITY;
                continue;
            }
            let lhs = log_rho[i] + a.ln();
            let rhs = log_rho[j] + b.ln();
            worst = worst.max((lhs - rhs).abs().exp_m1());
        }
    }
    BalanceReport {
        pairs,
        max_relative_error: worst,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub actor: Unit,
    pub row: Vec<u32>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashReport {
    pub is_nash: bool,
    pub deviations: Vec<Deviation>,
}

/// Unilateral deviations over every feasible replacement row (rows may shrink).
pub fn nash_check(inst: &Instance, spec: &PotentialSpec, w: &AllocationMatrix) -> Result<NashReport, ExactError> {
    if w.n() != inst.n() || !w.is_partial(inst) {
        return Err(ExactError::InvalidStart);
    }
    for x in 0..inst.n() {
        let degree = inst.out_neighbors(x).len();
        if inst.alpha(x) > NASH_MAX_ALPHA || degree > NASH_MAX_DEGREE {
            return Err(ExactError::RowTooLarge {
                unit: x,
                alpha: inst.alpha(x),
                degree,
            });
        }
    }
    let mut deviations = Vec::new();
    for x in 0..inst.n() {
        let support = inst.out_neighbors(x);
        let caps: Vec<u32> = support
            .iter()
            .map(|&y| inst.beta(y) - (w.col_sum(y) - w.get(x, y)))
            .collect();
        let mut rows = Vec::new();
        compositions(support, &caps, inst.alpha(x), false, &mut rows);
        let base = utility(inst, spec, w, x);
        let tol = VALUE_TOLERANCE * base.abs().max(1.0);
        for row in rows {
            let edit: Vec<(Unit, i64)> = support
                .iter()
                .zip(&row)
                .filter(|(&y, &v)| v != w.get(x, y))
                .map(|(&y, &v)| (y, v as i64 - w.get(x, y) as i64))
                .collect();
            if edit.is_empty() {
                continue;
            }
            let gain = utility_delta(inst, spec, w, x, &edit);
            if gain > tol {
                let mut full = vec![0; inst.n()];
                for (&y, &v) in support.iter().zip(&row) {
                    full[y] = v;
                }
                deviations.push(Deviation { actor: x, row: full, gain });
            }
        }
    }
    Ok(NashReport {
        is_nash: deviations.is_empty(),
        deviations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Optimum {
    pub value: f64,
    pub argmax: Vec<AllocationMatrix>,
}

/// Maximum of `Ψ` over complete allocations, with all maximizers.
pub fn brute_force_optimum(inst: &Instance, spec: &PotentialSpec) -> Result<Optimum, ExactError> {
    let states = enumerate_states(inst, true)?;
    if states.is_empty() {
        return Err(ExactError::Infeasible);
    }
    let values: Vec<f64> = states.iter().map(|w| psi(inst, spec, w)).collect();
    let value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = VALUE_TOLERANCE * value.abs().max(1.0);
    let argmax = states
        .into_iter()
        .zip(values)
        .filter(|(_, v)| value - v <= tol)
        .map(|(w, _)| w)
        .collect();
    Ok(Optimum { value, argmax })
}
