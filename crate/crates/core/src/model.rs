//! Instances, allocation states, the potential functional and per-unit utilities.
//!
//! Units are identified by their index `0..n`. An [`Instance`] is the directed
//! graph of storage permissions together with the demand vector `alpha` and the
//! capacity vector `beta`. An [`AllocationMatrix`] is an integer matrix `W` where
//! `W[x][y]` counts the atoms unit `x` keeps at resource `y`; it caches row and
//! column aggregates so that utilities of candidate moves can be evaluated in
//! constant time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unit identifier (index into the instance).
pub type Unit = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("edge ({0}, {0}) is a self-loop")]
    SelfLoop(Unit),
    #[error("edge ({from}, {to}) references a unit outside 0..{n}")]
    EdgeOutOfRange { from: Unit, to: Unit, n: usize },
    #[error("{name} has length {got}, expected {expected}")]
    LengthMismatch {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("congestion coefficient for resource {0} must be positive, got {1}")]
    NonPositiveCongestion(Unit, f64),
    #[error("allocation coefficient must be non-negative and finite, got {0}")]
    InvalidAllocationCoefficient(f64),
    #[error("coefficient {0} is not finite")]
    NonFinite(&'static str),
    #[error("matrix is not square: row {row} has {got} entries, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
}

/// The triple (graph, alpha, beta).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRepr", into = "InstanceRepr")]
pub struct Instance {
    n: usize,
    adjacency: Vec<bool>,
    out_nbrs: Vec<Vec<Unit>>,
    in_nbrs: Vec<Vec<Unit>>,
    alpha: Vec<u32>,
    beta: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    n: usize,
    edges: Vec<(Unit, Unit)>,
    alpha: Vec<u32>,
    beta: Vec<u32>,
}

impl TryFrom<InstanceRepr> for Instance {
    type Error = ModelError;

    fn try_from(r: InstanceRepr) -> Result<Self, Self::Error> {
        Instance::new(r.n, r.edges, r.alpha, r.beta)
    }
}

impl From<Instance> for InstanceRepr {
    fn from(inst: Instance) -> Self {
        InstanceRepr {
            n: inst.n,
            edges: inst.edges().collect(),
            alpha: inst.alpha,
            beta: inst.beta,
        }
    }
}

impl Instance {
    /// Builds an instance from directed edges `(x, y)`, meaning `x` may store at `y`.
    /// Duplicate edges are merged.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (Unit, Unit)>,
        alpha: Vec<u32>,
        beta: Vec<u32>,
    ) -> Result<Self, ModelError> {
        if alpha.len() != n {
            return Err(ModelError::LengthMismatch {
                name: "alpha",
                got: alpha.len(),
                expected: n,
            });
        }
        if beta.len() != n {
            return Err(ModelError::LengthMismatch {
                name: "beta",
                got: beta.len(),
                expected: n,
            });
        }
        let mut adjacency = vec![false; n * n];
        for (from, to) in edges {
            if from >= n || to >= n {
                return Err(ModelError::EdgeOutOfRange { from, to, n });
            }
            if from == to {
                return Err(ModelError::SelfLoop(from));
            }
            adjacency[from * n + to] = true;
        }
        let mut out_nbrs = vec![Vec::new(); n];
        let mut in_nbrs = vec![Vec::new(); n];
        for x in 0..n {
            for y in 0..n {
                if adjacency[x * n + y] {
                    out_nbrs[x].push(y);
                    in_nbrs[y].push(x);
                }
            }
        }
        Ok(Instance {
            n,
            adjacency,
            out_nbrs,
            in_nbrs,
            alpha,
            beta,
        })
    }

    /// Builds an instance from undirected edges; each `{x, y}` yields both directions.
    pub fn undirected(
        n: usize,
        edges: impl IntoIterator<Item = (Unit, Unit)>,
        alpha: Vec<u32>,
        beta: Vec<u32>,
    ) -> Result<Self, ModelError> {
        let both: Vec<_> = edges.into_iter().flat_map(|(x, y)| [(x, y), (y, x)]).collect();
        Self::new(n, both, alpha, beta)
    }

    pub fn complete(n: usize, alpha: Vec<u32>, beta: Vec<u32>) -> Result<Self, ModelError> {
        let edges = (0..n).flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y)));
        Self::new(n, edges, alpha, beta)
    }

    /// Homogeneous complete graph with `alpha ≡ a`, `beta ≡ b`.
    pub fn complete_homogeneous(n: usize, a: u32, b: u32) -> Self {
        Self::complete(n, vec![a; n], vec![b; n]).expect("complete graph is well formed")
    }

    /// Undirected cycle `0 - 1 - ... - (n-1) - 0`.
    pub fn cycle(n: usize, alpha: Vec<u32>, beta: Vec<u32>) -> Result<Self, ModelError> {
        let edges: Vec<_> = if n < 3 {
            (1..n).map(|y| (y - 1, y)).collect()
        } else {
            (0..n).map(|x| (x, (x + 1) % n)).collect()
        };
        Self::undirected(n, edges, alpha, beta)
    }

    /// Undirected star: unit 0 is the hub, units `1..n` are leaves.
    pub fn star(n: usize, alpha: Vec<u32>, beta: Vec<u32>) -> Result<Self, ModelError> {
        Self::undirected(n, (1..n).map(|leaf| (0, leaf)), alpha, beta)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self, x: Unit) -> u32 {
        self.alpha[x]
    }

    pub fn beta(&self, y: Unit) -> u32 {
        self.beta[y]
    }

    pub fn alphas(&self) -> &[u32] {
        &self.alpha
    }

    pub fn betas(&self) -> &[u32] {
        &self.beta
    }

    pub fn total_alpha(&self) -> u64 {
        self.alpha.iter().map(|&a| a as u64).sum()
    }

    pub fn has_edge(&self, x: Unit, y: Unit) -> bool {
        self.adjacency[x * self.n + y]
    }

    /// Resources available to `x` (out-neighborhood).
    pub fn out_neighbors(&self, x: Unit) -> &[Unit] {
        &self.out_nbrs[x]
    }

    /// Units with access to resource `y` (in-neighborhood).
    pub fn in_neighbors(&self, y: Unit) -> &[Unit] {
        &self.in_nbrs[y]
    }

    pub fn edges(&self) -> impl Iterator<Item = (Unit, Unit)> + '_ {
        (0..self.n).flat_map(move |x| self.out_nbrs[x].iter().map(move |&y| (x, y)))
    }

    pub fn edge_count(&self) -> usize {
        self.out_nbrs.iter().map(Vec::len).sum()
    }

    /// True when every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(x, y)| self.has_edge(y, x))
    }

    /// Degree `s` when the graph is undirected and `s`-regular.
    pub fn regular_degree(&self) -> Option<usize> {
        if !self.is_symmetric() || self.n == 0 {
            return None;
        }
        let s = self.out_nbrs[0].len();
        self.out_nbrs.iter().all(|v| v.len() == s).then_some(s)
    }

    /// `(a, b)` when `alpha ≡ a` and `beta ≡ b`.
    pub fn homogeneous(&self) -> Option<(u32, u32)> {
        let a = *self.alpha.first()?;
        let b = *self.beta.first()?;
        (self.alpha.iter().all(|&v| v == a) && self.beta.iter().all(|&v| v == b)).then_some((a, b))
    }

    pub fn min_out_degree(&self) -> usize {
        self.out_nbrs.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn max_in_degree(&self) -> usize {
        self.in_nbrs.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Integer allocation matrix with cached aggregates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AllocationMatrix {
    n: usize,
    w: Vec<u32>,
    row_sum: Vec<u32>,
    col_sum: Vec<u32>,
    row_sq: Vec<u64>,
    row_support: Vec<u32>,
    col_support: Vec<u32>,
    total: u64,
}

impl Serialize for AllocationMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for AllocationMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<u32>>::deserialize(d)?;
        AllocationMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl AllocationMatrix {
    pub fn zeros(n: usize) -> Self {
        AllocationMatrix {
            n,
            w: vec![0; n * n],
            row_sum: vec![0; n],
            col_sum: vec![0; n],
            row_sq: vec![0; n],
            row_support: vec![0; n],
            col_support: vec![0; n],
            total: 0,
        }
    }

    pub fn from_rows<R: AsRef<[u32]>>(rows: &[R]) -> Result<Self, ModelError> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (x, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(ModelError::Ragged {
                    row: x,
                    got: row.len(),
                    expected: n,
                });
            }
            for (y, &v) in row.iter().enumerate() {
                m.set(x, y, v);
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, x: Unit, y: Unit) -> u32 {
        self.w[x * self.n + y]
    }

    pub fn row(&self, x: Unit) -> &[u32] {
        &self.w[x * self.n..(x + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        (0..self.n).map(|x| self.row(x).to_vec()).collect()
    }

    /// `W^x`, the atoms of `x` already placed.
    #[inline]
    pub fn row_sum(&self, x: Unit) -> u32 {
        self.row_sum[x]
    }

    /// `W_y`, the atoms stored at resource `y`.
    #[inline]
    pub fn col_sum(&self, y: Unit) -> u32 {
        self.col_sum[y]
    }

    /// Sum of squared entries of row `x`.
    #[inline]
    pub fn row_sq(&self, x: Unit) -> u64 {
        self.row_sq[x]
    }

    /// Number of resources used by `x`.
    #[inline]
    pub fn row_support(&self, x: Unit) -> u32 {
        self.row_support[x]
    }

    /// Number of units using resource `y`.
    #[inline]
    pub fn col_support(&self, y: Unit) -> u32 {
        self.col_support[y]
    }

    /// `‖W‖`, total allocated mass.
    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn set(&mut self, x: Unit, y: Unit, value: u32) {
        let old = self.get(x, y);
        self.add(x, y, value as i64 - old as i64);
    }

    /// Adds `delta` atoms to cell `(x, y)`. Panics if the cell would go negative.
    pub fn add(&mut self, x: Unit, y: Unit, delta: i64) {
        if delta == 0 {
            return;
        }
        let idx = x * self.n + y;
        let old = self.w[idx];
        let new = old as i64 + delta;
        assert!(new >= 0, "cell ({x}, {y}) would become negative");
        let new = new as u32;
        self.w[idx] = new;
        self.row_sum[x] = (self.row_sum[x] as i64 + delta) as u32;
        self.col_sum[y] = (self.col_sum[y] as i64 + delta) as u32;
        self.row_sq[x] = self.row_sq[x] + (new as u64).pow(2) - (old as u64).pow(2);
        self.total = (self.total as i64 + delta) as u64;
        match (old > 0, new > 0) {
            (false, true) => {
                self.row_support[x] += 1;
                self.col_support[y] += 1;
            }
            (true, false) => {
                self.row_support[x] -= 1;
                self.col_support[y] -= 1;
            }
            _ => {}
        }
    }

    /// Replaces row `x` with `row`.
    pub fn set_row(&mut self, x: Unit, row: &[u32]) {
        for (y, &v) in row.iter().enumerate() {
            self.set(x, y, v);
        }
    }

    /// Checks P1 (support on edges), P2 (row sums) and P3 (column sums).
    pub fn is_partial(&self, inst: &Instance) -> bool {
        if self.n != inst.n() {
            return false;
        }
        for x in 0..self.n {
            for y in 0..self.n {
                if self.get(x, y) > 0 && !inst.has_edge(x, y) {
                    return false;
                }
            }
        }
        (0..self.n).all(|x| self.row_sum(x) <= inst.alpha(x))
            && (0..self.n).all(|y| self.col_sum(y) <= inst.beta(y))
    }

    /// Every unit has placed all its atoms (membership in the complete set).
    pub fn is_complete(&self, inst: &Instance) -> bool {
        self.n == inst.n() && (0..self.n).all(|x| self.row_sum(x) == inst.alpha(x))
    }

    /// Recomputes all cached aggregates from the entries; used to cross-check
    /// incremental maintenance.
    pub fn recomputed(&self) -> Self {
        let mut fresh = Self::zeros(self.n);
        for x in 0..self.n {
            for y in 0..self.n {
                fresh.set(x, y, self.get(x, y));
            }
        }
        fresh
    }
}

/// `validate_partial`: P1–P3 all hold.
pub fn validate_partial(inst: &Instance, w: &AllocationMatrix) -> bool {
    w.is_partial(inst)
}

/// Selects the resource congestion term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Congestion {
    /// `g_y = -c_y * (W_y)^2`
    #[default]
    Quadratic,
    /// `g_y = -c_y * |{x : W_xy > 0}|`
    Hamming,
}

/// Coefficients of the potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub c_all: f64,
    pub c_agg: f64,
    pub c_con: Vec<f64>,
    #[serde(default)]
    pub congestion: Congestion,
}

impl PotentialSpec {
    pub fn new(
        c_all: f64,
        c_agg: f64,
        c_con: Vec<f64>,
        congestion: Congestion,
    ) -> Result<Self, ModelError> {
        if !c_all.is_finite() || c_all < 0.0 {
            return Err(ModelError::InvalidAllocationCoefficient(c_all));
        }
        if !c_agg.is_finite() {
            return Err(ModelError::NonFinite("c_agg"));
        }
        for (y, &c) in c_con.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(ModelError::NonPositiveCongestion(y, c));
            }
        }
        Ok(PotentialSpec {
            c_all,
            c_agg,
            c_con,
            congestion,
        })
    }

    /// Same congestion coefficient on every one of `n` resources.
    pub fn uniform(
        n: usize,
        c_all: f64,
        c_agg: f64,
        c_con: f64,
        congestion: Congestion,
    ) -> Result<Self, ModelError> {
        Self::new(c_all, c_agg, vec![c_con; n], congestion)
    }

    /// Checks the coefficient vector against the instance size.
    pub fn check_against(&self, inst: &Instance) -> Result<(), ModelError> {
        if self.c_con.len() != inst.n() {
            return Err(ModelError::LengthMismatch {
                name: "c_con",
                got: self.c_con.len(),
                expected: inst.n(),
            });
        }
        Self::new(self.c_all, self.c_agg, self.c_con.clone(), self.congestion).map(|_| ())
    }

    pub fn c_con_max(&self) -> f64 {
        self.c_con.iter().copied().fold(0.0, f64::max)
    }

    /// `f_x` from the row aggregates.
    #[inline]
    pub fn row_reward(&self, row_sum: u64, row_sq: u64) -> f64 {
        self.c_all * row_sum as f64 + self.c_agg * row_sq as f64
    }

    /// `g_y` from the column aggregates.
    #[inline]
    pub fn congestion_cost(&self, y: Unit, col_sum: u64, col_support: u64) -> f64 {
        match self.congestion {
            Congestion::Quadratic => -self.c_con[y] * (col_sum as f64).powi(2),
            Congestion::Hamming => -self.c_con[y] * col_support as f64,
        }
    }
}

/// Potential `Ψ(W) = Σ_x f_x(W_x·) + Σ_y g_y(W_·y)` from cached aggregates.
pub fn psi(inst: &Instance, spec: &PotentialSpec, w: &AllocationMatrix) -> f64 {
    let n = inst.n();
    let rows: f64 = (0..n)
        .map(|x| spec.row_reward(w.row_sum(x) as u64, w.row_sq(x)))
        .sum();
    let cols: f64 = (0..n)
        .map(|y| spec.congestion_cost(y, w.col_sum(y) as u64, w.col_support(y) as u64))
        .sum();
    rows + cols
}

/// Potential evaluated directly from the matrix entries, ignoring the caches.
pub fn psi_from_entries(inst: &Instance, spec: &PotentialSpec, w: &AllocationMatrix) -> f64 {
    let n = inst.n();
    let mut total = 0.0;
    for x in 0..n {
        let row = w.row(x);
        let s: u64 = row.iter().map(|&v| v as u64).sum();
        let sq: u64 = row.iter().map(|&v| (v as u64).pow(2)).sum();
        total += spec.c_all * s as f64 + spec.c_agg * sq as f64;
    }
    for y in 0..n {
        let col: Vec<u32> = (0..n).map(|x| w.get(x, y)).collect();
        let s: u64 = col.iter().map(|&v| v as u64).sum();
        let h = col.iter().filter(|&&v| v > 0).count() as u64;
        total += spec.congestion_cost(y, s, h);
    }
    total
}

/// Utility of unit `x`: its own row reward plus the congestion of the
/// resources in its in-neighborhood `N⁻_x`.
pub fn utility(inst: &Instance, spec: &PotentialSpec, w: &AllocationMatrix, x: Unit) -> f64 {
    let own = spec.row_reward(w.row_sum(x) as u64, w.row_sq(x));
    let cong: f64 = inst
        .in_neighbors(x)
        .iter()
        .map(|&y| spec.congestion_cost(y, w.col_sum(y) as u64, w.col_support(y) as u64))
        .sum();
    own + cong
}

/// A change of row `actor` given as `(resource, delta)` pairs with distinct resources.
pub type RowEdit<'a> = &'a [(Unit, i64)];

fn cell_terms(
    spec: &PotentialSpec,
    w: &AllocationMatrix,
    actor: Unit,
    y: Unit,
    d: i64,
) -> (f64, f64) {
    let old = w.get(actor, y) as i64;
    let new = old + d;
    debug_assert!(new >= 0);
    let row = spec.c_all * d as f64 + spec.c_agg * (new * new - old * old) as f64;
    let col_old = w.col_sum(y) as i64;
    let col_new = col_old + d;
    let sup_old = w.col_support(y) as i64;
    let sup_new = sup_old + (new > 0) as i64 - (old > 0) as i64;
    let col = spec.congestion_cost(y, col_new as u64, sup_new as u64)
        - spec.congestion_cost(y, col_old as u64, sup_old as u64);
    (row, col)
}

/// `Ψ(W') - Ψ(W)` for a single-row edit.
pub fn psi_delta(spec: &PotentialSpec, w: &AllocationMatrix, actor: Unit, edit: RowEdit) -> f64 {
    edit.iter()
        .map(|&(y, d)| {
            let (r, c) = cell_terms(spec, w, actor, y, d);
            r + c
        })
        .sum()
}

/// `U_actor(W') - U_actor(W)` for a single-row edit.
pub fn utility_delta(
    inst: &Instance,
    spec: &PotentialSpec,
    w: &AllocationMatrix,
    actor: Unit,
    edit: RowEdit,
) -> f64 {
    edit.iter()
        .map(|&(y, d)| {
            let (r, c) = cell_terms(spec, w, actor, y, d);
            if inst.has_edge(y, actor) {
                r + c
            } else {
                r
            }
        })
        .sum()
}

/// Allocation coefficient `3 (‖α‖∞ |C^agg| + ‖β‖∞ C^con_max)`.
pub fn default_c_all(alpha: &[u32], beta: &[u32], c_agg: f64, c_con_max: f64) -> f64 {
    let a = alpha.iter().copied().max().unwrap_or(0) as f64;
    let b = beta.iter().copied().max().unwrap_or(0) as f64;
    3.0 * (a * c_agg.abs() + b * c_con_max)
}

/// Threshold `2 (‖α‖∞ |C^agg| + ‖β‖∞ C^con)` above which utilities are strictly
/// increasing in allocated mass.
pub fn monotonicity_threshold(alpha: &[u32], beta: &[u32], c_agg: f64, c_con_max: f64) -> f64 {
    default_c_all(alpha, beta, c_agg, c_con_max) * 2.0 / 3.0
}

/// Maximum of `Ψ` over complete allocations for undirected `s`-regular graphs
/// with homogeneous demand `a <= b`, quadratic congestion and uniform `C^con`.
/// Returns `None` outside that regime.
pub fn closed_form_optimum(inst: &Instance, spec: &PotentialSpec) -> Option<f64> {
    let s = inst.regular_degree()? as u64;
    let (a, b) = inst.homogeneous()?;
    if a > b || s == 0 || spec.congestion != Congestion::Quadratic {
        return None;
    }
    let c_con = *spec.c_con.first()?;
    if spec.c_con.iter().any(|&c| c != c_con) {
        return None;
    }
    let n = inst.n() as f64;
    let a_f = a as f64;
    let agg_sq = if spec.c_agg >= 0.0 {
        a_f * a_f
    } else {
        let (k, r) = (a as u64 / s, a as u64 % s);
        ((s - r) * k * k + r * (k + 1) * (k + 1)) as f64
    };
    Some(n * (spec.c_all * a_f + spec.c_agg * agg_sq - c_con * a_f * a_f))
}

/// Functional state vector `ξ`: `true` means on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionalState(pub Vec<bool>);

impl FunctionalState {
    pub fn all_on(n: usize) -> Self {
        FunctionalState(vec![true; n])
    }

    #[inline]
    pub fn is_on(&self, x: Unit) -> bool {
        self.0[x]
    }

    pub fn set(&mut self, x: Unit, on: bool) {
        self.0[x] = on;
    }

    /// Encodes as a bitmask (bit `x` set when on); `n <= 64`.
    pub fn to_bits(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &on)| acc | ((on as u64) << i))
    }

    pub fn from_bits(n: usize, bits: u64) -> Self {
        FunctionalState((0..n).map(|i| bits >> i & 1 == 1).collect())
    }
}
