//! Existence of complete allocations (Hall-type conditions) and canonical
//! complete allocations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AllocationMatrix, Instance, Unit};

/// Largest instance the subset scan accepts.
pub const BRUTE_FORCE_MAX_UNITS: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeasibilityError {
    #[error("subset scan supports at most {max} units, instance has {n}")]
    TooLarge { n: usize, max: usize },
    #[error("not applicable: {0}")]
    NotApplicable(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// A complete allocation exists.
    pub feasible: bool,
    /// Some `D` with `Σ_D α > Σ_{N(D)} β`.
    pub witness_violation: Option<Vec<Unit>>,
    /// The strict condition `Σ_A α < Σ_{N(A)} β` holds for every non-empty `A`.
    pub strict: bool,
    /// Some non-empty `A` with `Σ_A α >= Σ_{N(A)} β`.
    pub strict_violation: Option<Vec<Unit>>,
}

/// Scans every subset of units in Gray-code order, maintaining the covered
/// neighborhood incrementally. Among violating subsets the witness is one with
/// the largest excess (and for the strict condition, the smallest slack).
pub fn hall_check_bruteforce(inst: &Instance) -> Result<FeasibilityReport, FeasibilityError> {
    let n = inst.n();
    if n > BRUTE_FORCE_MAX_UNITS {
        return Err(FeasibilityError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_UNITS,
        });
    }
    let mut cover = vec![0u32; n];
    let mut in_set = vec![false; n];
    let mut sum_alpha: i64 = 0;
    let mut sum_beta: i64 = 0;
    let mut mask: u32 = 0;

    // (excess, mask) of the worst Hall violation and the tightest strict slack.
    let mut worst: Option<(i64, u32)> = None;
    let mut tightest: Option<(i64, u32)> = None;

    for i in 1u64..(1u64 << n) {
        let bit = i.trailing_zeros() as usize;
        let adding = !in_set[bit];
        in_set[bit] = adding;
        mask ^= 1 << bit;
        let a = inst.alpha(bit) as i64;
        if adding {
            sum_alpha += a;
            for &y in inst.out_neighbors(bit) {
                if cover[y] == 0 {
                    sum_beta += inst.beta(y) as i64;
                }
                cover[y] += 1;
            }
        } else {
            sum_alpha -= a;
            for &y in inst.out_neighbors(bit) {
                cover[y] -= 1;
                if cover[y] == 0 {
                    sum_beta -= inst.beta(y) as i64;
                }
            }
        }
        let excess = sum_alpha - sum_beta;
        if excess > 0 && worst.is_none_or(|(e, _)| excess > e) {
            worst = Some((excess, mask));
        }
        let slack = -excess;
        if slack <= 0 && tightest.is_none_or(|(s, _)| slack < s) {
            tightest = Some((slack, mask));
        }
    }

    let to_units = |m: u32| (0..n).filter(|&x| m >> x & 1 == 1).collect::<Vec<_>>();
    Ok(FeasibilityReport {
        feasible: worst.is_none(),
        witness_violation: worst.map(|(_, m)| to_units(m)),
        strict: tightest.is_none(),
        strict_violation: tightest.map(|(_, m)| to_units(m)),
    })
}

/// Dinic max-flow on integer capacities.
#[derive(Debug, Clone)]
pub(crate) struct FlowNetwork {
    graph: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<u64>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl FlowNetwork {
    pub(crate) fn new(nodes: usize) -> Self {
        FlowNetwork {
            graph: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
            level: vec![0; nodes],
            iter: vec![0; nodes],
        }
    }

    pub(crate) fn add_edge(&mut self, from: usize, to: usize, cap: u64) {
        self.graph[from].push(self.to.len());
        self.to.push(to);
        self.cap.push(cap);
        self.graph[to].push(self.to.len());
        self.to.push(from);
        self.cap.push(0);
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.graph[v] {
                let u = self.to[e];
                if self.cap[e] > 0 && self.level[u] < 0 {
                    self.level[u] = self.level[v] + 1;
                    queue.push_back(u);
                }
            }
        }
    }

    fn dfs(&mut self, v: usize, t: usize, f: u64) -> u64 {
        if v == t {
            return f;
        }
        while self.iter[v] < self.graph[v].len() {
            let e = self.graph[v][self.iter[v]];
            let u = self.to[e];
            if self.cap[e] > 0 && self.level[v] < self.level[u] {
                let d = self.dfs(u, t, f.min(self.cap[e]));
                if d > 0 {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            self.iter[v] += 1;
        }
        0
    }

    pub(crate) fn max_flow(&mut self, s: usize, t: usize) -> u64 {
        let mut flow = 0;
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return flow;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, u64::MAX);
                if f == 0 {
                    break;
                }
                flow += f;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph (after `max_flow`).
    pub(crate) fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.graph.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &e in &self.graph[v] {
                let u = self.to[e];
                if self.cap[e] > 0 && !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen
    }
}

/// Max-flow with demands `alpha` (possibly bumped) on the user side; returns
/// `None` when all demand is routed, else the source side users of a min cut.
fn flow_violation(inst: &Instance, alpha: &[u32]) -> Option<Vec<Unit>> {
    let n = inst.n();
    let (source, sink) = (2 * n, 2 * n + 1);
    let demand: u64 = alpha.iter().map(|&a| a as u64).sum();
    let mut net = FlowNetwork::new(2 * n + 2);
    for x in 0..n {
        if alpha[x] > 0 {
            net.add_edge(source, x, alpha[x] as u64);
        }
        for &y in inst.out_neighbors(x) {
            net.add_edge(x, n + y, demand + 1);
        }
        if inst.beta(x) > 0 {
            net.add_edge(n + x, sink, inst.beta(x) as u64);
        }
    }
    if net.max_flow(source, sink) == demand {
        return None;
    }
    let side = net.source_side(source);
    Some((0..n).filter(|&x| side[x]).collect())
}

/// Polynomial feasibility check via bipartite max-flow. The strict condition
/// is checked with one extra flow per unit: every non-empty set containing
/// `x` has slack iff the instance with `α_x + 1` is still feasible.
pub fn hall_check_maxflow(inst: &Instance) -> FeasibilityReport {
    let witness = flow_violation(inst, inst.alphas());
    let feasible = witness.is_none();
    let mut strict_violation = None;
    if feasible {
        let mut alpha = inst.alphas().to_vec();
        for x in 0..inst.n() {
            alpha[x] += 1;
            let v = flow_violation(inst, &alpha);
            alpha[x] -= 1;
            if v.is_some() {
                strict_violation = v;
                break;
            }
        }
    } else {
        strict_violation = witness.clone();
    }
    FeasibilityReport {
        feasible,
        strict: strict_violation.is_none(),
        witness_violation: witness,
        strict_violation,
    }
}

/// `max α ≤ (min β) · d_min / d⁻_max`, a sufficient condition for feasibility.
pub fn sufficient_condition(inst: &Instance) -> bool {
    let a = inst.alphas().iter().copied().max().unwrap_or(0) as u64;
    if a == 0 {
        return true;
    }
    let b = inst.betas().iter().copied().min().unwrap_or(0) as u64;
    let d_min = inst.min_out_degree() as u64;
    if d_min == 0 {
        return false;
    }
    a * inst.max_in_degree() as u64 <= b * d_min
}

/// Kuhn's augmenting-path matching; `match_of_user[x] = Some(y)`.
fn perfect_matching(inst: &Instance) -> Option<Vec<Unit>> {
    let n = inst.n();
    let mut owner: Vec<Option<Unit>> = vec![None; n];

    fn augment(
        inst: &Instance,
        x: Unit,
        seen: &mut [bool],
        owner: &mut [Option<Unit>],
    ) -> bool {
        for &y in inst.out_neighbors(x) {
            if seen[y] {
                continue;
            }
            seen[y] = true;
            if owner[y].is_none_or(|other| augment(inst, other, seen, owner)) {
                owner[y] = Some(x);
                return true;
            }
        }
        false
    }

    for x in 0..n {
        let mut seen = vec![false; n];
        if !augment(inst, x, &mut seen, &mut owner) {
            return None;
        }
    }
    let mut sigma = vec![0; n];
    for (y, x) in owner.iter().enumerate() {
        sigma[x.expect("perfect matching covers every resource")] = y;
    }
    Some(sigma)
}

/// Matching allocation `W^σ` (each unit stores all `a` atoms at `σ(x)`).
/// Requires homogeneous demand and capacity.
pub fn matching_allocation(inst: &Instance) -> Result<Option<AllocationMatrix>, FeasibilityError> {
    let (a, b) = inst
        .homogeneous()
        .ok_or(FeasibilityError::NotApplicable("alpha and beta must be homogeneous"))?;
    if a > b {
        return Ok(None);
    }
    let n = inst.n();
    if a == 0 {
        return Ok(Some(AllocationMatrix::zeros(n)));
    }
    Ok(perfect_matching(inst).map(|sigma| {
        let mut w = AllocationMatrix::zeros(n);
        for (x, &y) in sigma.iter().enumerate() {
            w.set(x, y, a);
        }
        w
    }))
}

/// Diffused allocation `W = (a/s) A` on an undirected `s`-regular graph.
pub fn diffused_allocation(inst: &Instance) -> Result<Option<AllocationMatrix>, FeasibilityError> {
    let (a, b) = inst
        .homogeneous()
        .ok_or(FeasibilityError::NotApplicable("alpha and beta must be homogeneous"))?;
    let s = inst
        .regular_degree()
        .ok_or(FeasibilityError::NotApplicable("graph must be undirected and regular"))?;
    if s == 0 || a as usize % s != 0 || a > b {
        return Ok(None);
    }
    let per = a / s as u32;
    let mut w = AllocationMatrix::zeros(inst.n());
    for (x, y) in inst.edges() {
        w.set(x, y, per);
    }
    Ok(Some(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_partial;

    fn star4(a: u32, b: u32) -> Instance {
        Instance::star(4, vec![a; 4], vec![b; 4]).unwrap()
    }

    #[test]
    fn three_unit_boundary_case() {
        let inst = Instance::complete_homogeneous(3, 2, 2);
        let r = hall_check_bruteforce(&inst).unwrap();
        assert!(r.feasible);
        assert_eq!(r.witness_violation, None);
        assert!(!r.strict);
        assert_eq!(r.strict_violation, Some(vec![0, 1, 2]));
        let f = hall_check_maxflow(&inst);
        assert!(f.feasible && !f.strict);
    }

    #[test]
    fn star_infeasible_with_leaf_witness() {
        let inst = star4(3, 6);
        let r = hall_check_bruteforce(&inst).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.witness_violation, Some(vec![1, 2, 3]));
        let f = hall_check_maxflow(&inst);
        assert!(!f.feasible);
        let d = f.witness_violation.unwrap();
        let need: u32 = d.iter().map(|&x| inst.alpha(x)).sum();
        let mut nbhd: Vec<Unit> = d.iter().flat_map(|&x| inst.out_neighbors(x).to_vec()).collect();
        nbhd.sort();
        nbhd.dedup();
        let have: u32 = nbhd.iter().map(|&y| inst.beta(y)).sum();
        assert!(need > have);
    }

    #[test]
    fn zero_demand() {
        let inst = Instance::complete_homogeneous(3, 0, 1);
        let r = hall_check_bruteforce(&inst).unwrap();
        assert!(r.feasible && r.strict);
        let zero_cap = Instance::complete_homogeneous(3, 0, 0);
        let r = hall_check_bruteforce(&zero_cap).unwrap();
        assert!(r.feasible && !r.strict);
        assert!(sufficient_condition(&zero_cap));
    }

    #[test]
    fn maxflow_examples() {
        assert!(hall_check_maxflow(&Instance::complete_homogeneous(10, 45, 50)).feasible);
        let single = Instance::new(1, [], vec![1], vec![5]).unwrap();
        let r = hall_check_maxflow(&single);
        assert!(!r.feasible);
        assert_eq!(r.witness_violation, Some(vec![0]));
    }

    #[test]
    fn brute_force_guard() {
        let inst = Instance::new(25, [], vec![0; 25], vec![0; 25]).unwrap();
        assert!(matches!(
            hall_check_bruteforce(&inst),
            Err(FeasibilityError::TooLarge { n: 25, .. })
        ));
    }

    #[test]
    fn sufficient_condition_examples() {
        assert!(sufficient_condition(&star4(2, 6)));
        assert!(!sufficient_condition(&star4(3, 6)));
        let mut beta = vec![40; 10];
        beta[5..].fill(50);
        let inst = Instance::complete(10, vec![43; 10], beta).unwrap();
        assert!(!sufficient_condition(&inst));
        assert!(hall_check_maxflow(&inst).feasible);
    }

    #[test]
    fn matching_examples() {
        let inst = Instance::complete_homogeneous(3, 2, 2);
        let w = matching_allocation(&inst).unwrap().unwrap();
        assert!(validate_partial(&inst, &w) && w.is_complete(&inst));
        let w1 = AllocationMatrix::from_rows(&[[0, 2, 0], [0, 0, 2], [2, 0, 0]]).unwrap();
        let w2 = AllocationMatrix::from_rows(&[[0, 0, 2], [2, 0, 0], [0, 2, 0]]).unwrap();
        assert!(w == w1 || w == w2);
        assert_eq!(matching_allocation(&Instance::complete_homogeneous(3, 3, 2)).unwrap(), None);
        let hetero = Instance::complete(3, vec![1, 2, 2], vec![2; 3]).unwrap();
        assert!(matching_allocation(&hetero).is_err());
        for x in 0..3 {
            assert_eq!(w.row_support(x), 1);
        }
    }

    #[test]
    fn diffused_examples() {
        let inst = Instance::complete_homogeneous(3, 2, 2);
        let w3 = AllocationMatrix::from_rows(&[[0, 1, 1], [1, 0, 1], [1, 1, 0]]).unwrap();
        assert_eq!(diffused_allocation(&inst).unwrap(), Some(w3));
        let ten = Instance::complete_homogeneous(10, 45, 50);
        let w = diffused_allocation(&ten).unwrap().unwrap();
        for x in 0..10 {
            for y in 0..10 {
                assert_eq!(w.get(x, y), if x == y { 0 } else { 5 });
            }
        }
        assert!(w.is_complete(&ten) && validate_partial(&ten, &w));
        assert_eq!(diffused_allocation(&Instance::complete_homogeneous(3, 3, 4)).unwrap(), None);
        let directed = Instance::new(3, [(0, 1), (1, 2), (2, 0)], vec![1; 3], vec![1; 3]).unwrap();
        assert!(diffused_allocation(&directed).is_err());
    }
}
