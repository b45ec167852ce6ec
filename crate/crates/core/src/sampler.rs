//! Gibbs move-selection measure of an activated unit.
//!
//! Allocation moves are weighted `e^{γ U(W')} / Z(W)`; distribution moves are
//! weighted `e^{γ U(W')} / max{Z(W), Z(W')}` where `Z(V)` sums `e^{γ U}` over
//! the move set available at `V`. The remaining probability is the stay event.
//!
//! Everything is computed in log space relative to the actor's current
//! utility. For the amount-based families the partition function factorizes
//! over resources: a move's utility change is a sum of per-resource terms that
//! depend only on the actor's entry and the column aggregates of that resource,
//! so `Z(W')` for each candidate costs `O(deg · |Q|)` rather than a full
//! enumeration. [`gibbs_distribution_direct`] enumerates instead and serves as
//! the reference for the factorized path (and handles the `Full` family).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{utility_delta, AllocationMatrix, FunctionalState, Instance, PotentialSpec, Unit};
use crate::moves::{enumerate_moves, Move, MoveFamily, MoveKind};

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDistribution {
    pub moves: Vec<(Move, f64)>,
    pub stay_probability: f64,
    pub gamma: f64,
}

impl GibbsDistribution {
    fn finish(moves: Vec<(Move, f64)>, gamma: f64) -> Self {
        let total: f64 = moves.iter().map(|(_, p)| p).sum();
        GibbsDistribution {
            moves,
            stay_probability: (1.0 - total).max(0.0),
            gamma,
        }
    }

    /// Probability assigned to a specific move (0 if absent).
    pub fn probability_of(&self, m: &Move) -> f64 {
        self.moves
            .iter()
            .find(|(c, _)| c == m)
            .map_or(0.0, |(_, p)| *p)
    }
}

/// Outcome of one activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "choice", rename_all = "snake_case")]
pub enum Choice {
    Stay,
    Move(Move),
}

/// One categorical draw over the moves and the residual stay event.
pub fn sample_action<R: Rng + ?Sized>(dist: &GibbsDistribution, rng: &mut R) -> Choice {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (m, p) in &dist.moves {
        acc += p;
        if u < acc {
            return Choice::Move(m.clone());
        }
    }
    Choice::Stay
}

/// Streaming log-sum-exp.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// What the actor sees of one of its resources.
#[derive(Debug, Clone, Copy)]
struct Slot {
    y: Unit,
    held: u32,
    col: u32,
    support: u32,
    beta: u32,
    on: bool,
    /// Resource congestion enters the actor's utility.
    counted: bool,
}

impl Slot {
    fn headroom(&self) -> u32 {
        self.beta - self.col
    }

    fn available(&self) -> bool {
        self.on && self.col < self.beta
    }

    fn shifted(mut self, d: i64) -> Self {
        let old = self.held;
        self.held = (old as i64 + d) as u32;
        self.col = (self.col as i64 + d) as u32;
        self.support = self.support + (self.held > 0) as u32 - (old > 0) as u32;
        self
    }
}

/// Per-resource view of the actor's situation.
#[derive(Debug, Clone)]
struct ActorView {
    slots: Vec<Slot>,
    remaining: u32,
}

impl ActorView {
    fn new(inst: &Instance, w: &AllocationMatrix, xi: &FunctionalState, x: Unit) -> Self {
        let slots = inst
            .out_neighbors(x)
            .iter()
            .map(|&y| Slot {
                y,
                held: w.get(x, y),
                col: w.col_sum(y),
                support: w.col_support(y),
                beta: inst.beta(y),
                on: xi.is_on(y),
                counted: inst.has_edge(y, x),
            })
            .collect();
        ActorView {
            slots,
            remaining: inst.alpha(x) - w.row_sum(x),
        }
    }
}

/// Utility change contributed by changing the actor's entry at `slot` by `d`
/// (allocation reward excluded).
#[inline]
fn slot_term(spec: &PotentialSpec, slot: &Slot, d: i64) -> f64 {
    let old = slot.held as i64;
    let new = old + d;
    let agg = spec.c_agg * (new * new - old * old) as f64;
    if !slot.counted {
        return agg;
    }
    let next = slot.shifted(d);
    agg + spec.congestion_cost(slot.y, next.col as u64, next.support as u64)
        - spec.congestion_cost(slot.y, slot.col as u64, slot.support as u64)
}

/// Amounts the family can ever use for an actor with demand `alpha`.
fn family_amounts(family: &MoveFamily, alpha: u32) -> Vec<u32> {
    match family {
        MoveFamily::Granular { q } => q.iter().copied().take_while(|&n| n <= alpha).collect(),
        MoveFamily::SingleResource => (1..=alpha).collect(),
        MoveFamily::Full => unreachable!("full family uses direct enumeration"),
    }
}

/// Log-weights of one resource for amount `n`.
#[derive(Debug, Clone, Copy)]
struct Terms {
    alloc: f64,
    src: f64,
    dst: f64,
}

#[inline]
fn terms(spec: &PotentialSpec, s: &Slot, remaining: u32, n: u32, gamma: f64) -> Terms {
    let ninf = f64::NEG_INFINITY;
    let room = s.available() && s.headroom() >= n;
    let up = if room { gamma * slot_term(spec, s, n as i64) } else { ninf };
    Terms {
        alloc: if room && n <= remaining { up + gamma * spec.c_all * n as f64 } else { ninf },
        src: if s.on && s.held >= n { gamma * slot_term(spec, s, -(n as i64)) } else { ninf },
        dst: up,
    }
}

/// Sums for one amount, each scaled by its own largest term: allocation
/// terms, sources, destinations and same-resource source-destination products
/// (the latter scaled by both source and destination maxima).
#[derive(Debug, Clone, Copy)]
struct Block {
    n: u32,
    scale: [f64; 3],
    a: f64,
    s: f64,
    t: f64,
    c: f64,
    log_a: f64,
    log_d: f64,
}

/// Distribution mass `ln Σ_{i≠j} e^{src_i + dst_j}` without cancellation:
/// the top destination is excluded exactly, any other from the full sum.
fn robust_log_d(ts: &[Terms]) -> f64 {
    let (top_pos, top) = ts
        .iter()
        .enumerate()
        .fold((usize::MAX, f64::NEG_INFINITY), |b, (k, t)| if t.dst > b.1 { (k, t.dst) } else { b });
    if top_pos == usize::MAX {
        return f64::NEG_INFINITY;
    }
    let full: f64 = ts.iter().map(|t| (t.dst - top).exp()).sum();
    let mut rest = LogSum::new();
    for (k, t) in ts.iter().enumerate() {
        if k != top_pos {
            rest.add(t.dst);
        }
    }
    let log_rest = rest.value();
    let mut acc = LogSum::new();
    for (k, t) in ts.iter().enumerate() {
        if t.src == f64::NEG_INFINITY {
            continue;
        }
        let inner = if k == top_pos {
            log_rest
        } else if t.dst > f64::NEG_INFINITY {
            top + (full - (t.dst - top).exp()).ln()
        } else {
            top + full.ln()
        };
        acc.add(t.src + inner);
    }
    acc.value()
}

fn build_block(spec: &PotentialSpec, slots: &[Slot], remaining: u32, n: u32, gamma: f64) -> Block {
    let ts: Vec<Terms> = slots.iter().map(|s| terms(spec, s, remaining, n, gamma)).collect();
    let top = |f: fn(&Terms) -> f64| ts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let scale = [top(|t| t.alloc), top(|t| t.src), top(|t| t.dst)];
    let mut b = Block {
        n,
        scale,
        a: 0.0,
        s: 0.0,
        t: 0.0,
        c: 0.0,
        log_a: f64::NEG_INFINITY,
        log_d: f64::NEG_INFINITY,
    };
    for t in &ts {
        b.a += scaled(t.alloc, scale[0]);
        b.s += scaled(t.src, scale[1]);
        b.t += scaled(t.dst, scale[2]);
        b.c += scaled(t.src + t.dst, scale[1] + scale[2]);
    }
    if b.a > 0.0 {
        b.log_a = scale[0] + b.a.ln();
    }
    if b.s > 0.0 && b.t > 0.0 {
        b.log_d = robust_log_d(&ts);
    }
    b
}

/// `e^{v - m}`, zero when `v` is `-∞`.
#[inline]
fn scaled(v: f64, m: f64) -> f64 {
    if v == f64::NEG_INFINITY {
        0.0
    } else {
        (v - m).exp()
    }
}

/// `ln Z` relative to the current utility, by blocks of equal amount.
#[derive(Debug, Clone)]
struct Partition {
    blocks: Vec<Block>,
    log_z: f64,
}

impl Partition {
    fn new(spec: &PotentialSpec, amounts: &[u32], view: &ActorView, gamma: f64) -> Self {
        let blocks: Vec<Block> = amounts
            .iter()
            .map(|&n| build_block(spec, &view.slots, view.remaining, n, gamma))
            .collect();
        let mut acc = LogSum::new();
        for b in &blocks {
            acc.add(b.log_a);
            acc.add(b.log_d);
        }
        Partition { blocks, log_z: acc.value() }
    }

    /// `ln Z` after the slots at `i` and `j` of `view` are replaced by `ni`
    /// and `nj`, relative to the utility after the change.
    fn patched(
        &self,
        spec: &PotentialSpec,
        view: &ActorView,
        (i, ni): (usize, Slot),
        (j, nj): (usize, Slot),
        gamma: f64,
    ) -> f64 {
        // Slot terms depend only on their own slot, so only `i` and `j` change.
        let mut acc = LogSum::new();
        for b in &self.blocks {
            let (log_a, log_d) = self
                .patch_block(spec, view, b, (i, ni), (j, nj), gamma)
                .unwrap_or_else(|| {
                    let mut slots = view.slots.clone();
                    slots[i] = ni;
                    slots[j] = nj;
                    let fresh = build_block(spec, &slots, view.remaining, b.n, gamma);
                    (fresh.log_a, fresh.log_d)
                });
            acc.add(log_a);
            acc.add(log_d);
        }
        acc.value()
    }

    fn patch_block(
        &self,
        spec: &PotentialSpec,
        view: &ActorView,
        b: &Block,
        (i, ni): (usize, Slot),
        (j, nj): (usize, Slot),
        gamma: f64,
    ) -> Option<(f64, f64)> {
        // Allowed loss of relative precision before recomputing from scratch.
        const KEEP: f64 = 1e-3;
        let rem = view.remaining;
        let old = [terms(spec, &view.slots[i], rem, b.n, gamma), terms(spec, &view.slots[j], rem, b.n, gamma)];
        let new = [terms(spec, &ni, rem, b.n, gamma), terms(spec, &nj, rem, b.n, gamma)];
        let [ma, ms, mt] = b.scale;
        let fits = |v: f64, m: f64| v == f64::NEG_INFINITY || (m > f64::NEG_INFINITY && v - m <= 300.0);
        if !new.iter().all(|t| fits(t.alloc, ma) && fits(t.src, ms) && fits(t.dst, mt)) {
            return None;
        }
        // `None` on cancellation, including a sum that drops to zero.
        let upd = |sum: f64, f: &dyn Fn(&Terms) -> f64| -> Option<f64> {
            let removed: f64 = old.iter().map(f).sum();
            let added: f64 = new.iter().map(f).sum();
            let v = sum - removed + added;
            if sum + added == 0.0 {
                Some(0.0)
            } else {
                (v >= KEEP * (sum + added) && v > 0.0).then_some(v)
            }
        };
        let a = upd(b.a, &|t| scaled(t.alloc, ma))?;
        let s = upd(b.s, &|t| scaled(t.src, ms))?;
        let t = upd(b.t, &|t| scaled(t.dst, mt))?;
        let c = upd(b.c, &|t| scaled(t.src + t.dst, ms + mt))?;
        let st = s * t;
        let d = st - c;
        let log_d = if st == 0.0 {
            f64::NEG_INFINITY
        } else if d < KEEP * st {
            return None;
        } else {
            ms + mt + d.ln()
        };
        let log_a = if a > 0.0 { ma + a.ln() } else { f64::NEG_INFINITY };
        Some((log_a, log_d))
    }
}

/// Gibbs measure for unit `x` under `(W, ξ)`.
///
/// Uses the factorized partition function for the amount-based families and
/// falls back to direct enumeration for `Full`.
pub fn gibbs_distribution(
    inst: &Instance,
    spec: &PotentialSpec,
    family: &MoveFamily,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
    gamma: f64,
) -> GibbsDistribution {
    if matches!(family, MoveFamily::Full) {
        return gibbs_distribution_direct(inst, spec, family, w, xi, x, gamma);
    }
    let moves = enumerate_moves(inst, family, w, xi, x);
    if moves.is_empty() {
        return GibbsDistribution::finish(Vec::new(), gamma);
    }
    let view = ActorView::new(inst, w, xi, x);
    let mut position = vec![usize::MAX; inst.n()];
    for (k, s) in view.slots.iter().enumerate() {
        position[s.y] = k;
    }
    let amounts = family_amounts(family, inst.alpha(x));
    let part = Partition::new(spec, &amounts, &view, gamma);
    let weighted = moves
        .into_iter()
        .map(|m| {
            let p = match m.kind {
                MoveKind::Allocation { to, amount } => {
                    let s = &view.slots[position[to]];
                    let lw = gamma * (spec.c_all * amount as f64 + slot_term(spec, s, amount as i64));
                    (lw - part.log_z).exp()
                }
                MoveKind::Distribution { from, to, amount } => {
                    let (i, j) = (position[from], position[to]);
                    let (sf, st) = (view.slots[i], view.slots[j]);
                    let lw = gamma * (slot_term(spec, &sf, -(amount as i64)) + slot_term(spec, &st, amount as i64));
                    let shifted = (i, sf.shifted(-(amount as i64)));
                    let moved = (j, st.shifted(amount as i64));
                    let log_z_next = lw + part.patched(spec, &view, shifted, moved, gamma);
                    (lw - part.log_z.max(log_z_next)).exp()
                }
                MoveKind::FullRow { .. } => unreachable!("amount families never produce full rows"),
            };
            (m, p)
        })
        .collect();
    GibbsDistribution::finish(weighted, gamma)
}

/// Log-weights `γ (U(W+m) - U(W))` of every move available at `W`.
fn direct_log_weights(
    inst: &Instance,
    spec: &PotentialSpec,
    family: &MoveFamily,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
    gamma: f64,
) -> Vec<(Move, f64)> {
    enumerate_moves(inst, family, w, xi, x)
        .into_iter()
        .map(|m| {
            let lw = gamma * utility_delta(inst, spec, w, x, &m.edit(w));
            (m, lw)
        })
        .collect()
}

fn log_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = LogSum::new();
    values.for_each(|v| acc.add(v));
    acc.value()
}

/// Gibbs measure by explicit enumeration of `M(W)` and of `M(W')` for every
/// mass-preserving candidate.
pub fn gibbs_distribution_direct(
    inst: &Instance,
    spec: &PotentialSpec,
    family: &MoveFamily,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
    gamma: f64,
) -> GibbsDistribution {
    let weights = direct_log_weights(inst, spec, family, w, xi, x, gamma);
    let log_z = log_sum(weights.iter().map(|(_, lw)| *lw));
    let moves = weights
        .into_iter()
        .map(|(m, lw)| {
            let p = if m.mass_delta(w) > 0 {
                (lw - log_z).exp()
            } else {
                let next = m.applied(w);
                let inner = direct_log_weights(inst, spec, family, &next, xi, x, gamma);
                let log_z_next = lw + log_sum(inner.iter().map(|(_, v)| *v));
                (lw - log_z.max(log_z_next)).exp()
            };
            (m, p)
        })
        .collect();
    GibbsDistribution::finish(moves, gamma)
}

/// `ln Z(W)` relative to `U_x(W)`, by enumeration.
pub fn log_partition_direct(
    inst: &Instance,
    spec: &PotentialSpec,
    family: &MoveFamily,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
    gamma: f64,
) -> f64 {
    log_sum(
        direct_log_weights(inst, spec, family, w, xi, x, gamma)
            .into_iter()
            .map(|(_, v)| v),
    )
}

/// `ln Z(W)` relative to `U_x(W)`, by resource factorization.
pub fn log_partition_factorized(
    inst: &Instance,
    spec: &PotentialSpec,
    family: &MoveFamily,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
    gamma: f64,
) -> f64 {
    if matches!(family, MoveFamily::Full) || !xi.is_on(x) {
        return log_partition_direct(inst, spec, family, w, xi, x, gamma);
    }
    let amounts = family_amounts(family, inst.alpha(x));
    Partition::new(spec, &amounts, &ActorView::new(inst, w, xi, x), gamma).log_z
}
