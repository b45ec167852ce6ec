//! Admissible move families: the action sets available to an activated unit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AllocationMatrix, FunctionalState, Instance, Unit};

/// Limits for enumerating the `Full` family.
pub const FULL_FAMILY_MAX_ALPHA: u32 = 6;
pub const FULL_FAMILY_MAX_DEGREE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MoveError {
    #[error("granularity set must contain 1 and only positive amounts, got {0:?}")]
    InvalidGranularity(Vec<u32>),
    #[error(
        "full move family needs alpha <= {FULL_FAMILY_MAX_ALPHA} and out-degree <= {FULL_FAMILY_MAX_DEGREE}; unit {unit} has alpha {alpha}, degree {degree}"
    )]
    FullFamilyTooLarge { unit: Unit, alpha: u32, degree: usize },
}

/// Which admissible family the activated unit draws from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MoveFamily {
    /// Every row reachable without removing mass.
    Full,
    /// Allocate any amount to one resource, or move any amount between two.
    SingleResource,
    /// As `SingleResource` with amounts restricted to a set containing 1.
    Granular { q: Vec<u32> },
}

impl MoveFamily {
    pub fn granular(q: impl IntoIterator<Item = u32>) -> Result<Self, MoveError> {
        let mut q: Vec<u32> = q.into_iter().collect();
        q.sort_unstable();
        q.dedup();
        if q.first() == Some(&0) || !q.contains(&1) {
            return Err(MoveError::InvalidGranularity(q));
        }
        Ok(MoveFamily::Granular { q })
    }

    /// The single-atom family `Q = {1}`.
    pub fn atomic() -> Self {
        MoveFamily::Granular { q: vec![1] }
    }

    /// Checks the family's own invariants and the `Full` enumeration limits.
    pub fn validate_for(&self, inst: &Instance) -> Result<(), MoveError> {
        match self {
            MoveFamily::Granular { q } => {
                MoveFamily::granular(q.iter().copied())?;
            }
            MoveFamily::Full => {
                for x in 0..inst.n() {
                    let degree = inst.out_neighbors(x).len();
                    if inst.alpha(x) > FULL_FAMILY_MAX_ALPHA || degree > FULL_FAMILY_MAX_DEGREE {
                        return Err(MoveError::FullFamilyTooLarge {
                            unit: x,
                            alpha: inst.alpha(x),
                            degree,
                        });
                    }
                }
            }
            MoveFamily::SingleResource => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MoveKind {
    Allocation { to: Unit, amount: u32 },
    Distribution { from: Unit, to: Unit, amount: u32 },
    FullRow { row: Vec<u32> },
}

/// A change of the actor's row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Move {
    pub actor: Unit,
    pub kind: MoveKind,
}

impl Move {
    /// The row edit as `(resource, delta)` pairs, resources distinct.
    pub fn edit(&self, w: &AllocationMatrix) -> Vec<(Unit, i64)> {
        match &self.kind {
            MoveKind::Allocation { to, amount } => vec![(*to, *amount as i64)],
            MoveKind::Distribution { from, to, amount } => {
                vec![(*from, -(*amount as i64)), (*to, *amount as i64)]
            }
            MoveKind::FullRow { row } => row
                .iter()
                .enumerate()
                .filter_map(|(y, &v)| {
                    let d = v as i64 - w.get(self.actor, y) as i64;
                    (d != 0).then_some((y, d))
                })
                .collect(),
        }
    }

    /// Change of `‖W‖`.
    pub fn mass_delta(&self, w: &AllocationMatrix) -> i64 {
        match &self.kind {
            MoveKind::Allocation { amount, .. } => *amount as i64,
            MoveKind::Distribution { .. } => 0,
            MoveKind::FullRow { row } => {
                row.iter().map(|&v| v as i64).sum::<i64>() - w.row_sum(self.actor) as i64
            }
        }
    }

    /// True for moves that increase the allocated mass.
    pub fn is_allocation(&self, w: &AllocationMatrix) -> bool {
        self.mass_delta(w) > 0
    }

    pub fn apply(&self, w: &mut AllocationMatrix) {
        for (y, d) in self.edit(w) {
            w.add(self.actor, y, d);
        }
    }

    pub fn applied(&self, w: &AllocationMatrix) -> AllocationMatrix {
        let mut next = w.clone();
        self.apply(&mut next);
        next
    }
}

/// Resources `y ∈ N_x` that are on and still have room.
pub fn available_resources(
    inst: &Instance,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
) -> Vec<Unit> {
    inst.out_neighbors(x)
        .iter()
        .copied()
        .filter(|&y| xi.is_on(y) && w.col_sum(y) < inst.beta(y))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitClasses {
    pub fully_allocated: Vec<Unit>,
    pub saturated: Vec<Unit>,
    pub active: Vec<Unit>,
}

impl UnitClasses {
    /// The state is partial and no unfinished unit can act.
    pub fn is_saturated_state(&self) -> bool {
        self.active.is_empty() && !self.saturated.is_empty()
    }
}

/// Splits units into fully allocated, saturated (unfinished with no room in
/// any neighbor) and active.
pub fn classify_units(inst: &Instance, w: &AllocationMatrix) -> UnitClasses {
    let mut classes = UnitClasses {
        fully_allocated: Vec::new(),
        saturated: Vec::new(),
        active: Vec::new(),
    };
    for x in 0..inst.n() {
        if w.row_sum(x) == inst.alpha(x) {
            classes.fully_allocated.push(x);
        } else if inst
            .out_neighbors(x)
            .iter()
            .all(|&y| w.col_sum(y) >= inst.beta(y))
        {
            classes.saturated.push(x);
        } else {
            classes.active.push(x);
        }
    }
    classes
}

fn amount_moves(
    inst: &Instance,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
    amounts: &dyn Fn(u32) -> Vec<u32>,
    out: &mut Vec<Move>,
) {
    let avail = available_resources(inst, w, xi, x);
    let remaining = inst.alpha(x) - w.row_sum(x);
    for &y in &avail {
        let cap = remaining.min(inst.beta(y) - w.col_sum(y));
        for amount in amounts(cap) {
            out.push(Move {
                actor: x,
                kind: MoveKind::Allocation { to: y, amount },
            });
        }
    }
    for &from in inst.out_neighbors(x) {
        let held = w.get(x, from);
        if held == 0 || !xi.is_on(from) {
            continue;
        }
        for &to in &avail {
            if to == from {
                continue;
            }
            let cap = held.min(inst.beta(to) - w.col_sum(to));
            for amount in amounts(cap) {
                out.push(Move {
                    actor: x,
                    kind: MoveKind::Distribution { from, to, amount },
                });
            }
        }
    }
}

fn full_rows(
    inst: &Instance,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
    out: &mut Vec<Move>,
) {
    let free: Vec<Unit> = inst
        .out_neighbors(x)
        .iter()
        .copied()
        .filter(|&y| xi.is_on(y))
        .collect();
    let fixed: u32 = w.row_sum(x) - free.iter().map(|&y| w.get(x, y)).sum::<u32>();
    let caps: Vec<u32> = free
        .iter()
        .map(|&y| inst.beta(y) - (w.col_sum(y) - w.get(x, y)))
        .collect();
    let lo = w.row_sum(x);
    let hi = inst.alpha(x);
    let current = w.row(x).to_vec();
    let mut row = current.clone();

    fn rec(
        i: usize,
        acc: u32,
        free: &[Unit],
        caps: &[u32],
        lo: u32,
        hi: u32,
        row: &mut Vec<u32>,
        current: &[u32],
        x: Unit,
        out: &mut Vec<Move>,
    ) {
        if i == free.len() {
            if acc >= lo && row.as_slice() != current {
                out.push(Move {
                    actor: x,
                    kind: MoveKind::FullRow { row: row.clone() },
                });
            }
            return;
        }
        let y = free[i];
        for v in 0..=caps[i].min(hi - acc) {
            row[y] = v;
            rec(i + 1, acc + v, free, caps, lo, hi, row, current, x, out);
        }
        row[y] = current[y];
    }

    rec(0, fixed, &free, &caps, lo, hi, &mut row, &current, x, out);
}

/// The move set `M_x(W, ξ)` of the chosen family, in a deterministic order.
/// Empty when `x` is off.
///
/// The `Full` family must have passed [`MoveFamily::validate_for`].
pub fn enumerate_moves(
    inst: &Instance,
    family: &MoveFamily,
    w: &AllocationMatrix,
    xi: &FunctionalState,
    x: Unit,
) -> Vec<Move> {
    let mut out = Vec::new();
    if !xi.is_on(x) {
        return out;
    }
    match family {
        MoveFamily::Granular { q } => amount_moves(
            inst,
            w,
            xi,
            x,
            &|cap| q.iter().copied().take_while(|&n| n <= cap).collect(),
            &mut out,
        ),
        MoveFamily::SingleResource => {
            amount_moves(inst, w, xi, x, &|cap| (1..=cap).collect(), &mut out)
        }
        MoveFamily::Full => full_rows(inst, w, xi, x, &mut out),
    }
    out
}
