//! Simulation engines for the joint process of allocations and on/off states.
//!
//! The continuous engine runs an exponential race over the Poisson clocks; the
//! discrete engine activates one uniformly drawn unit per step with all units
//! on. Both advance the inverse temperature linearly (per unit of time or per
//! step respectively).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{psi, psi_delta, AllocationMatrix, FunctionalState, Instance, PotentialSpec, Unit};
use crate::moves::{Move, MoveError, MoveFamily};
use crate::sampler::{gibbs_distribution, sample_action, Choice};

pub const DEFAULT_GAMMA0: f64 = 1.0;
pub const DEFAULT_GAMMA_INCREMENT: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("initial allocation violates the instance constraints")]
    InvalidStart,
    #[error("initial state has {got} units, instance has {expected}")]
    StateSize { got: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Family(#[from] MoveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    ContinuousTime,
    #[default]
    DiscreteTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub nu_on: Vec<f64>,
    pub nu_off: Vec<f64>,
    pub nu_act: Vec<f64>,
    pub engine: Engine,
    pub gamma0: f64,
    pub gamma_increment: f64,
    /// Time span (continuous) or number of steps (discrete, rounded).
    pub horizon: f64,
    pub move_family: MoveFamily,
    pub seed: u64,
}

impl SimConfig {
    /// Discrete reproduction regime: `ν_act = 1/n`, no churn,
    /// `T = 5 Σ α`, γ from 1 with increment `1e-5`.
    pub fn reproduction(inst: &Instance, move_family: MoveFamily, seed: u64) -> Self {
        let n = inst.n();
        SimConfig {
            nu_on: vec![0.0; n],
            nu_off: vec![0.0; n],
            nu_act: vec![1.0 / n.max(1) as f64; n],
            engine: Engine::DiscreteTime,
            gamma0: DEFAULT_GAMMA0,
            gamma_increment: DEFAULT_GAMMA_INCREMENT,
            horizon: 5.0 * inst.total_alpha() as f64,
            move_family,
            seed,
        }
    }

    /// Continuous engine with uniform rates.
    pub fn continuous(
        inst: &Instance,
        move_family: MoveFamily,
        nu_on: f64,
        nu_off: f64,
        nu_act: f64,
        horizon: f64,
        seed: u64,
    ) -> Self {
        let n = inst.n();
        SimConfig {
            nu_on: vec![nu_on; n],
            nu_off: vec![nu_off; n],
            nu_act: vec![nu_act; n],
            engine: Engine::ContinuousTime,
            gamma0: DEFAULT_GAMMA0,
            gamma_increment: DEFAULT_GAMMA_INCREMENT,
            horizon,
            move_family,
            seed,
        }
    }

    pub fn validate(&self, inst: &Instance) -> Result<(), DynamicsError> {
        let n = inst.n();
        for (name, rates) in [("nu_on", &self.nu_on), ("nu_off", &self.nu_off), ("nu_act", &self.nu_act)] {
            if rates.len() != n {
                return Err(DynamicsError::Config(format!("{name} has {} entries, expected {n}", rates.len())));
            }
            if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                return Err(DynamicsError::Config(format!("{name} contains invalid rate {r}")));
            }
        }
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return Err(DynamicsError::Config(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        if !(self.gamma_increment.is_finite() && self.gamma_increment >= 0.0) {
            return Err(DynamicsError::Config(format!(
                "gamma_increment must be non-negative, got {}",
                self.gamma_increment
            )));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(DynamicsError::Config(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        self.move_family.validate_for(inst)?;
        Ok(())
    }
}

/// `γ0 + increment · t`.
pub fn gamma_at(cfg: &SimConfig, t: f64) -> f64 {
    cfg.gamma0 + cfg.gamma_increment * t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TurnOn,
    TurnOff,
    Allocation,
    Distribution,
    Stay,
}

/// One trace line; `psi` and `mass` are taken after the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub actor: Unit,
    pub psi: f64,
    pub mass: u64,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "move")]
    pub chosen: Option<Move>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<Event>,
    /// Allocation plus distribution moves per unit.
    pub per_unit_moves: Vec<u64>,
}

impl Trace {
    fn new(n: usize) -> Self {
        Trace {
            events: Vec::new(),
            per_unit_moves: vec![0; n],
        }
    }

    pub fn total_moves(&self) -> u64 {
        self.per_unit_moves.iter().sum()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub trace: Trace,
    pub w: AllocationMatrix,
    pub xi: FunctionalState,
    pub gamma: f64,
    /// Steps (discrete) or events (continuous) executed.
    pub steps: u64,
    pub psi: f64,
}

/// Derive an independent replica seed from a root seed.
pub fn replica_seed(root: u64, replica: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(root ^ mix(replica.wrapping_add(1)))
}

struct State<'a> {
    inst: &'a Instance,
    spec: &'a PotentialSpec,
    family: &'a MoveFamily,
    w: AllocationMatrix,
    xi: FunctionalState,
    psi: f64,
    trace: Trace,
    record: bool,
}

impl<'a> State<'a> {
    fn push(&mut self, t: f64, kind: EventKind, actor: Unit, chosen: Option<Move>) {
        if self.record {
            self.trace.events.push(Event {
                t,
                kind,
                actor,
                psi: self.psi,
                mass: self.w.total(),
                chosen,
            });
        }
    }

    fn activate(&mut self, rng: &mut ChaCha8Rng, t: f64, x: Unit, gamma: f64) {
        let dist = gibbs_distribution(self.inst, self.spec, self.family, &self.w, &self.xi, x, gamma);
        match sample_action(&dist, rng) {
            Choice::Stay => self.push(t, EventKind::Stay, x, None),
            Choice::Move(m) => {
                let edit = m.edit(&self.w);
                let grows = m.is_allocation(&self.w);
                let before = self.w.total();
                self.psi += psi_delta(self.spec, &self.w, x, &edit);
                m.apply(&mut self.w);
                self.trace.per_unit_moves[x] += 1;
                debug_assert!(self.w.is_partial(self.inst));
                debug_assert_eq!(self.w.total() > before, grows);
                let kind = if grows { EventKind::Allocation } else { EventKind::Distribution };
                self.push(t, kind, x, Some(m));
            }
        }
    }
}

fn check_start(inst: &Instance, w0: &AllocationMatrix, xi0: &FunctionalState) -> Result<(), DynamicsError> {
    if w0.n() != inst.n() || !w0.is_partial(inst) {
        return Err(DynamicsError::InvalidStart);
    }
    if xi0.0.len() != inst.n() {
        return Err(DynamicsError::StateSize {
            got: xi0.0.len(),
            expected: inst.n(),
        });
    }
    Ok(())
}

/// Options shared by both engines.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Keep per-event records (the move counters are always kept).
    pub record_events: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { record_events: true }
    }
}

/// Continuous-time simulation until `cfg.horizon`.
pub fn run_continuous(
    inst: &Instance,
    spec: &PotentialSpec,
    cfg: &SimConfig,
    w0: &AllocationMatrix,
    xi0: &FunctionalState,
) -> Result<Run, DynamicsError> {
    run_continuous_with(inst, spec, cfg, w0, xi0, RunOptions::default())
}

pub fn run_continuous_with(
    inst: &Instance,
    spec: &PotentialSpec,
    cfg: &SimConfig,
    w0: &AllocationMatrix,
    xi0: &FunctionalState,
    opts: RunOptions,
) -> Result<Run, DynamicsError> {
    cfg.validate(inst)?;
    check_start(inst, w0, xi0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut st = State {
        inst,
        spec,
        family: &cfg.move_family,
        w: w0.clone(),
        xi: xi0.clone(),
        psi: psi(inst, spec, w0),
        trace: Trace::new(inst.n()),
        record: opts.record_events,
    };
    let n = inst.n();
    let unit_rate = |xi: &FunctionalState, x: Unit| {
        if xi.is_on(x) {
            cfg.nu_off[x] + cfg.nu_act[x]
        } else {
            cfg.nu_on[x]
        }
    };
    let mut t = 0.0;
    let mut steps = 0u64;
    loop {
        let total: f64 = (0..n).map(|x| unit_rate(&st.xi, x)).sum();
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / total;
        if t > cfg.horizon {
            t = cfg.horizon;
            break;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut x = n - 1;
        for y in 0..n {
            let r = unit_rate(&st.xi, y);
            if pick < r {
                x = y;
                break;
            }
            pick -= r;
        }
        // Guard against landing on a zero-rate unit through rounding.
        while unit_rate(&st.xi, x) <= 0.0 {
            x -= 1;
        }
        steps += 1;
        if !st.xi.is_on(x) {
            st.xi.set(x, true);
            st.push(t, EventKind::TurnOn, x, None);
        } else if rng.gen::<f64>() * (cfg.nu_off[x] + cfg.nu_act[x]) < cfg.nu_off[x] {
            st.xi.set(x, false);
            st.push(t, EventKind::TurnOff, x, None);
        } else {
            st.activate(&mut rng, t, x, gamma_at(cfg, t));
        }
    }
    Ok(Run {
        gamma: gamma_at(cfg, t),
        trace: st.trace,
        w: st.w,
        xi: st.xi,
        steps,
        psi: st.psi,
    })
}

/// Discrete-time simulation with all units on.
pub fn run_discrete(
    inst: &Instance,
    spec: &PotentialSpec,
    cfg: &SimConfig,
    w0: &AllocationMatrix,
) -> Result<Run, DynamicsError> {
    run_discrete_with(inst, spec, cfg, w0, RunOptions::default())
}

pub fn run_discrete_with(
    inst: &Instance,
    spec: &PotentialSpec,
    cfg: &SimConfig,
    w0: &AllocationMatrix,
    opts: RunOptions,
) -> Result<Run, DynamicsError> {
    cfg.validate(inst)?;
    let xi = FunctionalState::all_on(inst.n());
    check_start(inst, w0, &xi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut st = State {
        inst,
        spec,
        family: &cfg.move_family,
        w: w0.clone(),
        xi,
        psi: psi(inst, spec, w0),
        trace: Trace::new(inst.n()),
        record: opts.record_events,
    };
    let steps = cfg.horizon.round() as u64;
    let mut gamma = cfg.gamma0;
    if inst.n() > 0 {
        for step in 0..steps {
            let x = rng.gen_range(0..inst.n());
            st.activate(&mut rng, step as f64, x, gamma);
            gamma += cfg.gamma_increment;
        }
    }
    Ok(Run {
        gamma,
        trace: st.trace,
        w: st.w,
        xi: st.xi,
        steps,
        psi: st.psi,
    })
}

/// Dispatch on `cfg.engine`; `xi0` is ignored by the discrete engine.
pub fn run(
    inst: &Instance,
    spec: &PotentialSpec,
    cfg: &SimConfig,
    w0: &AllocationMatrix,
    xi0: &FunctionalState,
    opts: RunOptions,
) -> Result<Run, DynamicsError> {
    match cfg.engine {
        Engine::ContinuousTime => run_continuous_with(inst, spec, cfg, w0, xi0, opts),
        Engine::DiscreteTime => run_discrete_with(inst, spec, cfg, w0, opts),
    }
}
