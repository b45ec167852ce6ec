//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use coopstore::model::{default_c_all, AllocationMatrix, Congestion, Instance, PotentialSpec};
use rand::Rng;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn auto_spec(inst: &Instance, c_agg: f64, c_con: f64) -> PotentialSpec {
    let c_all = default_c_all(inst.alphas(), inst.betas(), c_agg, c_con);
    PotentialSpec::uniform(inst.n(), c_all, c_agg, c_con, Congestion::Quadratic).unwrap()
}

/// n=3 complete, α≡1, β≡2: eight complete allocations.
pub fn eight_state() -> (Instance, PotentialSpec) {
    let inst = Instance::complete_homogeneous(3, 1, 2);
    let spec = auto_spec(&inst, 1.0, 1.0);
    (inst, spec)
}

pub fn w1() -> AllocationMatrix {
    AllocationMatrix::from_rows(&[[0, 2, 0], [0, 0, 2], [2, 0, 0]]).unwrap()
}

pub fn w2() -> AllocationMatrix {
    AllocationMatrix::from_rows(&[[0, 0, 2], [2, 0, 0], [0, 2, 0]]).unwrap()
}

pub fn w3() -> AllocationMatrix {
    AllocationMatrix::from_rows(&[[0, 1, 1], [1, 0, 1], [1, 1, 0]]).unwrap()
}

pub fn five_cycle() -> Instance {
    Instance::cycle(5, vec![4; 5], vec![7, 2, 4, 6, 6]).unwrap()
}

/// The displayed matrix with every row sum equal to 4.
pub fn five_cycle_complete() -> AllocationMatrix {
    AllocationMatrix::from_rows(&[
        [0, 0, 0, 0, 4],
        [3, 0, 1, 0, 0],
        [0, 0, 0, 4, 0],
        [0, 0, 3, 0, 1],
        [4, 0, 0, 0, 0],
    ])
    .unwrap()
}

/// The displayed matrix whose second row sums to 3.
pub fn five_cycle_partial() -> AllocationMatrix {
    AllocationMatrix::from_rows(&[
        [0, 0, 0, 0, 4],
        [3, 0, 0, 0, 0],
        [0, 0, 0, 4, 0],
        [0, 0, 4, 0, 0],
        [4, 0, 0, 0, 0],
    ])
    .unwrap()
}

/// Random instance on `n` units; each unordered pair is an edge with
/// probability `p` (both directions), or each ordered pair when `directed`.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    n: usize,
    p: f64,
    directed: bool,
    alpha: (u32, u32),
    beta: (u32, u32),
) -> Instance {
    let mut edges = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if x == y || (!directed && y < x) {
                continue;
            }
            if rng.gen_bool(p) {
                edges.push((x, y));
            }
        }
    }
    let a = (0..n).map(|_| rng.gen_range(alpha.0..=alpha.1)).collect();
    let b = (0..n).map(|_| rng.gen_range(beta.0..=beta.1)).collect();
    if directed {
        Instance::new(n, edges, a, b).unwrap()
    } else {
        Instance::undirected(n, edges, a, b).unwrap()
    }
}

/// Hall's condition over every subset of units, straight from the definition:
/// `(Σ_D α ≤ Σ_{N(D)} β for all D, Σ_A α < Σ_{N(A)} β for all non-empty A)`.
pub fn hall_oracle(inst: &Instance) -> (bool, bool) {
    let n = inst.n();
    let (mut feasible, mut strict) = (true, true);
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|&x| mask >> x & 1 == 1).collect();
        let demand: u64 = members.iter().map(|&x| inst.alpha(x) as u64).sum();
        let supply: u64 = (0..n)
            .filter(|&y| members.iter().any(|&x| inst.has_edge(x, y)))
            .map(|y| inst.beta(y) as u64)
            .sum();
        feasible &= demand <= supply;
        strict &= demand < supply;
    }
    (feasible, strict)
}

/// Feasible undirected instances with `n ∈ [2, 4]`, `α ∈ [1, 2]`, `β ∈ [0, 3]`.
pub fn small_feasible_corpus<R: Rng>(rng: &mut R, count: usize) -> Vec<Instance> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let n = rng.gen_range(2..=4);
        let inst = random_instance(rng, n, 0.7, false, (1, 2), (0, 3));
        if hall_oracle(&inst).0 {
            out.push(inst);
        }
    }
    out
}

/// Ψ from the matrix entries with quadratic congestion.
pub fn psi_oracle(inst: &Instance, spec: &PotentialSpec, w: &AllocationMatrix) -> f64 {
    let n = inst.n();
    let mut total = 0.0;
    for x in 0..n {
        for y in 0..n {
            let v = w.get(x, y) as f64;
            total += spec.c_all * v + spec.c_agg * v * v;
        }
    }
    for y in 0..n {
        let col: f64 = (0..n).map(|x| w.get(x, y) as f64).sum();
        total -= spec.c_con[y] * col * col;
    }
    total
}

/// `U_x` from the matrix entries: own row reward plus congestion of the
/// resources that have an edge into `x`.
pub fn utility_oracle(inst: &Instance, spec: &PotentialSpec, w: &AllocationMatrix, x: usize) -> f64 {
    let n = inst.n();
    let mut u = 0.0;
    for y in 0..n {
        let v = w.get(x, y) as f64;
        u += spec.c_all * v + spec.c_agg * v * v;
    }
    for y in (0..n).filter(|&y| inst.has_edge(y, x)) {
        let col: f64 = (0..n).map(|z| w.get(z, y) as f64).sum();
        u -= spec.c_con[y] * col * col;
    }
    u
}

/// A random partial allocation built by greedy random placement.
pub fn random_partial<R: Rng>(rng: &mut R, inst: &Instance) -> AllocationMatrix {
    let n = inst.n();
    let mut w = AllocationMatrix::zeros(n);
    for x in 0..n {
        let target = rng.gen_range(0..=inst.alpha(x));
        for _ in 0..target {
            let open: Vec<usize> = inst
                .out_neighbors(x)
                .iter()
                .copied()
                .filter(|&y| w.col_sum(y) < inst.beta(y))
                .collect();
            if open.is_empty() {
                break;
            }
            let y = open[rng.gen_range(0..open.len())];
            w.add(x, y, 1);
        }
    }
    w
}

/// A random replacement for row `x` keeping `w` partial.
pub fn random_row<R: Rng>(rng: &mut R, inst: &Instance, w: &AllocationMatrix, x: usize) -> Vec<u32> {
    let n = inst.n();
    let mut row = vec![0u32; n];
    let budget = rng.gen_range(0..=inst.alpha(x));
    let mut used = 0;
    let mut nbrs = inst.out_neighbors(x).to_vec();
    for i in (1..nbrs.len()).rev() {
        nbrs.swap(i, rng.gen_range(0..=i));
    }
    for y in nbrs {
        let others = w.col_sum(y) - w.get(x, y);
        let cap = (inst.beta(y) - others).min(budget - used);
        let v = rng.gen_range(0..=cap);
        row[y] = v;
        used += v;
    }
    row
}
