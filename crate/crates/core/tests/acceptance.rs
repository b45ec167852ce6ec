//! Acceptance criteria, one test each. Every test writes a single
//! `criterion N: PASS|FAIL ...` line to stderr before asserting.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use coopstore::dynamics::{replica_seed, run_discrete, run_discrete_with, RunOptions, SimConfig};
use coopstore::exact::{
    brute_force_optimum, build_generator, connectivity_check, detailed_balance, log_rho, nash_check,
    stationary_distribution, total_variation, unreachable_states, Generator,
};
use coopstore::feasibility::{hall_check_bruteforce, hall_check_maxflow};
use coopstore::harness::config::ExperimentConfig;
use coopstore::harness::experiment::run_experiment;
use coopstore::model::{
    default_c_all, monotonicity_threshold, psi_delta, utility_delta, AllocationMatrix, Congestion, Instance,
    PotentialSpec,
};
use coopstore::moves::MoveFamily;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "criterion {n}: {verdict} {detail}").unwrap();
}

/// Stationary law from the definition: `Π ν factors · e^{γΨ}`, normalized.
fn closed_form(inst: &Instance, spec: &PotentialSpec, cfg: &SimConfig, gen: &Generator, gamma: f64, churn: bool) -> Vec<f64> {
    let logs: Vec<f64> = gen
        .states
        .iter()
        .map(|(wi, xi)| {
            let mut v = gamma * psi_oracle(inst, spec, &gen.allocations[*wi]);
            if churn {
                for x in 0..inst.n() {
                    v += if xi.is_on(x) { cfg.nu_on[x] } else { cfg.nu_off[x] }.ln();
                }
            }
            v
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

#[test]
fn criterion_1_stationary_measure() {
    let (inst, spec) = eight_state();
    let family = MoveFamily::atomic();
    let cfg = SimConfig::continuous(&inst, family.clone(), 1.0, 1.0, 1.0, 1.0, 0);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for gamma in [0.0, 0.3, 1.0, 5.0] {
        for churn in [false, true] {
            let gen = build_generator(&inst, &spec, &family, &cfg, gamma, churn).unwrap();
            sizes.push(gen.states.len());
            let mu = stationary_distribution(&gen).unwrap();
            worst = worst.max(total_variation(&mu, &closed_form(&inst, &spec, &cfg, &gen, gamma, churn)));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && elapsed < Duration::from_secs(1) && sizes.iter().all(|&k| k == 8 || k == 64);
    report(1, pass, &format!("max TV {worst:.3e}, {elapsed:?}, generator sizes {sizes:?}"));
    assert!(pass);
}

#[test]
fn criterion_2_detailed_balance() {
    let (inst, spec) = eight_state();
    let family = MoveFamily::atomic();
    let cfg = SimConfig::continuous(&inst, family.clone(), 1.0, 2.0, 0.7, 1.0, 0);
    let (mut worst, mut lib_worst, mut pairs, mut asymmetric) = (0.0f64, 0.0f64, 0usize, 0usize);
    for gamma in [0.0, 0.3, 1.0, 5.0] {
        for churn in [false, true] {
            let gen = build_generator(&inst, &spec, &family, &cfg, gamma, churn).unwrap();
            let rho = closed_form(&inst, &spec, &cfg, &gen, gamma, churn);
            let k = gen.states.len();
            for i in 0..k {
                for j in i + 1..k {
                    let (a, b) = (gen.rates[(i, j)], gen.rates[(j, i)]);
                    if a == 0.0 && b == 0.0 {
                        continue;
                    }
                    if a == 0.0 || b == 0.0 {
                        asymmetric += 1;
                        continue;
                    }
                    pairs += 1;
                    let (lhs, rhs) = (rho[i] * a, rho[j] * b);
                    worst = worst.max((lhs - rhs).abs() / lhs.max(rhs));
                }
            }
            let lib = detailed_balance(&gen, &log_rho(&inst, &spec, &cfg, &gen, gamma, churn));
            lib_worst = lib_worst.max(lib.max_relative_error);
        }
    }
    let pass = pairs > 0 && asymmetric == 0 && worst <= 1e-9 && lib_worst <= 1e-9;
    report(
        2,
        pass,
        &format!("{pairs} pairs, {asymmetric} one-way, max relative error {worst:.3e} (library {lib_worst:.3e})"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_reachability() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = small_feasible_corpus(&mut rng, 120);
    let mut failures = 0;
    for inst in &corpus {
        for family in [MoveFamily::atomic(), MoveFamily::SingleResource] {
            failures += unreachable_states(inst, &family).unwrap().len();
        }
    }

    let cfg = ExperimentConfig::load(&configs_dir().join("five_cycle.json")).unwrap();
    let r = cfg.resolve(&configs_dir()).unwrap();
    let t = 5.0 * r.instance.total_alpha() as f64;
    let mut sim = r.sim.clone();
    sim.horizon = 10.0 * t;
    let mut stuck = 0;
    for i in 0..1000 {
        sim.seed = replica_seed(r.sim.seed, i);
        let out = run_discrete_with(&r.instance, &r.spec, &sim, &AllocationMatrix::zeros(5), RunOptions { record_events: false })
            .unwrap();
        if !out.w.is_complete(&r.instance) {
            stuck += 1;
        }
    }
    let pass = failures == 0 && stuck == 0;
    report(
        3,
        pass,
        &format!("{} instances, {failures} unreachable states; 5-cycle runs with Delta > 0 after {}: {stuck}/1000", corpus.len(), sim.horizon),
    );
    assert!(pass);
}

#[test]
fn criterion_4_ergodicity_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let corpus = small_feasible_corpus(&mut rng, 200);
    let (mut strict, mut wrong) = (0, 0);
    for inst in &corpus {
        let oracle = hall_oracle(inst).1;
        assert_eq!(hall_check_maxflow(inst).strict, oracle);
        if oracle {
            strict += 1;
            if !connectivity_check(inst, &MoveFamily::atomic()).unwrap() {
                wrong += 1;
            }
        }
    }
    let counter = Instance::complete_homogeneous(3, 2, 2);
    let counter_connected = connectivity_check(&counter, &MoveFamily::atomic()).unwrap();
    let pass = strict > 0 && wrong == 0 && !counter_connected;
    report(
        4,
        pass,
        &format!("{strict} strict instances, {wrong} disconnected; counterexample connected = {counter_connected}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_feasibility_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let (mut disagree, mut feasible) = (0, 0);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=6);
        let p = rng.gen_range(0.1..0.9);
        let inst = random_instance(&mut rng, n, p, true, (0, 4), (0, 4));
        let flow = hall_check_maxflow(&inst);
        let brute = hall_check_bruteforce(&inst).unwrap();
        let oracle = hall_oracle(&inst);
        if flow.feasible != brute.feasible || flow.strict != brute.strict || (flow.feasible, flow.strict) != oracle {
            disagree += 1;
        }
        feasible += flow.feasible as usize;
    }
    let elapsed = start.elapsed();
    let pass = disagree == 0 && elapsed < Duration::from_secs(30);
    report(5, pass, &format!("10000 instances ({feasible} feasible), {disagree} disagreements, {elapsed:?}"));
    assert!(pass);
}

#[test]
fn criterion_6_table_one() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (file, d_range, nu_ref) in [
        ("table1_agg_neg7.json", (8.5, 9.0), 3.1669),
        ("table1_agg_3.json", (1.0, 1.3), 3.2449),
    ] {
        let cfg = ExperimentConfig::load(&configs_dir().join(file)).unwrap();
        let r = cfg.resolve(&configs_dir()).unwrap();
        assert_eq!((r.replicas, r.sim.horizon), (10, 2250.0));
        let res = run_experiment(&r).unwrap();
        let m = res.mean;
        let psi = m.psi_ratio.unwrap();
        let checks = [
            ("delta", m.delta == 0.0),
            ("d", (d_range.0..=d_range.1).contains(&m.degree)),
            ("psi", psi >= 0.99),
            ("nu", (m.nu_moves - nu_ref).abs() <= 0.25 * nu_ref),
        ];
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        pass &= failed.is_empty();
        lines.push(format!(
            "C^agg={}: delta {} d {:.4} psi {:.4} nu {:.4} (ref {nu_ref}) failing {failed:?}",
            r.spec.c_agg, m.delta, m.degree, psi, m.nu_moves
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    report(6, pass, &format!("{}; {elapsed:?}", lines.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_7_maxima() {
    let inst = Instance::complete_homogeneous(3, 2, 3);
    let positive = brute_force_optimum(&inst, &auto_spec(&inst, 1.0, 1.0)).unwrap();
    let negative = brute_force_optimum(&inst, &auto_spec(&inst, -1.0, 1.0)).unwrap();
    let mut got = positive.argmax.clone();
    got.sort_by_key(|w| w.rows());
    let mut want = vec![w1(), w2()];
    want.sort_by_key(|w| w.rows());
    let pass = got == want && negative.argmax == vec![w3()];
    report(
        7,
        pass,
        &format!("C^agg=1 argmax {} states, C^agg=-1 argmax {} states", positive.argmax.len(), negative.argmax.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_8_nash() {
    let mut failures = Vec::new();

    // Stated instance of the window, then a sweep across it.
    let inst = Instance::complete_homogeneous(3, 2, 3);
    let stated = PotentialSpec::uniform(3, 9.0, 0.5, 1.0, Congestion::Quadratic).unwrap();
    let mut cases = vec![(inst.clone(), stated)];
    for b in [3, 4, 6] {
        let inst = Instance::complete_homogeneous(3, 2, b);
        for c_agg in [-6.0, -3.0, -1.0, 0.0, 0.5, 1.0] {
            cases.push((inst.clone(), auto_spec(&inst, c_agg, 1.0)));
        }
    }
    for (inst, spec) in &cases {
        for (name, w) in [("W1", w1()), ("W2", w2()), ("W3", w3())] {
            if !nash_check(inst, spec, &w).unwrap().is_nash {
                failures.push(format!("{name} b={} C^agg={}", inst.beta(0), spec.c_agg));
            }
        }
    }

    let cyc = five_cycle();
    let spec = auto_spec(&cyc, 3.0, 1.0);
    for (name, w) in [("complete", five_cycle_complete()), ("partial", five_cycle_partial())] {
        if !nash_check(&cyc, &spec, &w).unwrap().is_nash {
            failures.push(format!("5-cycle {name}"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let corpus = small_feasible_corpus(&mut rng, 120);
    let mut maxima = 0;
    for inst in &corpus {
        for c_agg in [-1.0, 1.0] {
            let spec = auto_spec(inst, c_agg, 1.0);
            for w in brute_force_optimum(inst, &spec).unwrap().argmax {
                maxima += 1;
                if !nash_check(inst, &spec, &w).unwrap().is_nash {
                    failures.push(format!("maximum {:?}", w.rows()));
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(
        8,
        pass,
        &format!("{} three-unit cases, 2 five-cycle matrices, {maxima} corpus maxima; failures {failures:?}", cases.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_9_empirical_occupation() {
    let (inst, spec) = eight_state();
    let family = MoveFamily::atomic();
    let mut cfg = SimConfig::reproduction(&inst, family.clone(), 0);
    cfg.gamma0 = 1.0;
    cfg.gamma_increment = 0.0;
    let gen = build_generator(&inst, &spec, &family, &cfg, 1.0, false).unwrap();
    let mu = closed_form(&inst, &spec, &cfg, &gen, 1.0, false);

    // Chunks chained through their end states; each chunk is replayed from its events.
    const EVENTS: u64 = 1_000_000;
    const CHUNK: u64 = 20_000;
    cfg.horizon = CHUNK as f64;
    let mut w = AllocationMatrix::from_rows(&[[0, 1, 0], [0, 0, 1], [1, 0, 0]]).unwrap();
    let mut counts = vec![0u64; gen.allocations.len()];
    for c in 0..EVENTS / CHUNK {
        cfg.seed = replica_seed(9, c);
        let out = run_discrete(&inst, &spec, &cfg, &w).unwrap();
        assert_eq!(out.trace.events.len() as u64, CHUNK);
        for e in &out.trace.events {
            if let Some(m) = &e.chosen {
                m.apply(&mut w);
            }
            let i = gen.allocations.iter().position(|a| *a == w).expect("chain stays on complete allocations");
            counts[i] += 1;
        }
        assert_eq!(w, out.w);
    }
    let empirical: Vec<f64> = counts.iter().map(|&k| k as f64 / EVENTS as f64).collect();
    let tv = total_variation(&empirical, &mu);
    let pass = tv <= 0.02;
    report(9, pass, &format!("{EVENTS} activations, TV {tv:.4}"));
    assert!(pass);
}

#[test]
fn criterion_10_potential_identity_and_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut identity, mut library, mut monotone, mut bound, mut shrinks) = (0, 0, 0, 0, 0);
    let mut edits = 0;
    while edits < 100_000 {
        let n = rng.gen_range(2..=5);
        let inst = random_instance(&mut rng, n, 0.6, false, (0, 3), (0, 4));
        let c_agg = rng.gen_range(-5.0..5.0);
        let c_con: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        let c_con_max = c_con.iter().copied().fold(0.0, f64::max);
        let c_all = default_c_all(inst.alphas(), inst.betas(), c_agg, c_con_max);
        let threshold = monotonicity_threshold(inst.alphas(), inst.betas(), c_agg, c_con_max);
        if threshold > 0.0 && c_all <= threshold {
            bound += 1;
        }
        let spec = PotentialSpec::new(c_all, c_agg, c_con, Congestion::Quadratic).unwrap();
        for _ in 0..100 {
            edits += 1;
            let w = random_partial(&mut rng, &inst);
            let x = rng.gen_range(0..n);
            let shrink = rng.gen_bool(0.5);
            let mut next = w.clone();
            if shrink {
                // Entrywise decrease of the row, strict somewhere.
                let held: Vec<usize> = (0..n).filter(|&y| w.get(x, y) > 0).collect();
                if held.is_empty() {
                    continue;
                }
                let y = held[rng.gen_range(0..held.len())];
                next.set(x, y, rng.gen_range(0..w.get(x, y)));
                for &z in &held {
                    if z != y {
                        next.set(x, z, rng.gen_range(0..=w.get(x, z)));
                    }
                }
            } else {
                let row = random_row(&mut rng, &inst, &w, x);
                next.set_row(x, &row);
            }
            assert!(next.is_partial(&inst));
            let du = utility_oracle(&inst, &spec, &next, x) - utility_oracle(&inst, &spec, &w, x);
            let dpsi = psi_oracle(&inst, &spec, &next) - psi_oracle(&inst, &spec, &w);
            let scale = 1.0 + du.abs().max(dpsi.abs());
            if (du - dpsi).abs() > 1e-9 * scale {
                identity += 1;
            }
            let edit: Vec<(usize, i64)> = (0..n)
                .filter(|&y| next.get(x, y) != w.get(x, y))
                .map(|y| (y, next.get(x, y) as i64 - w.get(x, y) as i64))
                .collect();
            let lib_du = utility_delta(&inst, &spec, &w, x, &edit);
            let lib_dpsi = psi_delta(&spec, &w, x, &edit);
            if (lib_du - du).abs() > 1e-9 * scale || (lib_dpsi - dpsi).abs() > 1e-9 * scale {
                library += 1;
            }
            if shrink {
                shrinks += 1;
                if du >= 0.0 {
                    monotone += 1;
                }
            }
        }
    }
    let pass = identity == 0 && library == 0 && monotone == 0 && bound == 0;
    report(
        10,
        pass,
        &format!(
            "{edits} edits ({shrinks} shrinking): identity {identity}, library {library}, monotonicity {monotone}, bound {bound} violations"
        ),
    );
    assert!(pass);
}
