//! Versioned JSON experiment configuration.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::graphs::{random_regular, read_edge_list, GraphError};
use crate::dynamics::{DynamicsError, Engine, SimConfig, DEFAULT_GAMMA0, DEFAULT_GAMMA_INCREMENT};
use crate::model::{default_c_all, AllocationMatrix, Congestion, Instance, ModelError, PotentialSpec};
use crate::moves::{MoveError, MoveFamily};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("instance: {0}")]
    Graph(#[from] GraphError),
    #[error("instance: {0}")]
    Model(#[from] ModelError),
    #[error("sim.move_family: {0}")]
    Family(#[from] MoveError),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// A single value for every unit, or one per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUnit<T> {
    Uniform(T),
    Each(Vec<T>),
}

impl<T: Copy> PerUnit<T> {
    fn expand(&self, n: usize, field: &'static str) -> Result<Vec<T>, ConfigError> {
        match self {
            PerUnit::Uniform(v) => Ok(vec![*v; n]),
            PerUnit::Each(v) if v.len() == n => Ok(v.clone()),
            PerUnit::Each(v) => Err(invalid(field, format!("has {} entries, expected {n}", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    Inline {
        n: usize,
        edges: Vec<(usize, usize)>,
        alpha: Vec<u32>,
        beta: Vec<u32>,
    },
    Complete {
        n: usize,
        alpha: PerUnit<u32>,
        beta: PerUnit<u32>,
    },
    /// Configuration-model regular graph; `seed` defaults to the run seed.
    Regular {
        n: usize,
        degree: usize,
        #[serde(default)]
        seed: Option<u64>,
        alpha: PerUnit<u32>,
        beta: PerUnit<u32>,
    },
    /// Unit 0 is the hub.
    Star {
        n: usize,
        alpha: PerUnit<u32>,
        beta: PerUnit<u32>,
    },
    Cycle {
        n: usize,
        alpha: PerUnit<u32>,
        beta: PerUnit<u32>,
    },
    /// Relative paths resolve against the config file's directory.
    EdgeList {
        path: PathBuf,
        n: usize,
        #[serde(default = "yes")]
        undirected: bool,
        alpha: PerUnit<u32>,
        beta: PerUnit<u32>,
    },
}

fn yes() -> bool {
    true
}

/// `"auto"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CAll {
    Value(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    #[serde(default = "auto")]
    pub c_all: CAll,
    pub c_agg: f64,
    #[serde(default = "unit_congestion")]
    pub c_con: PerUnit<f64>,
    #[serde(default)]
    pub congestion: Congestion,
}

fn auto() -> CAll {
    CAll::Named("auto".into())
}

fn unit_congestion() -> PerUnit<f64> {
    PerUnit::Uniform(1.0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub gamma0: Option<f64>,
    #[serde(default)]
    pub gamma_increment: Option<f64>,
    /// Defaults to `5 Σ α`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Overrides `granularity` when present.
    #[serde(default)]
    pub move_family: Option<MoveFamily>,
    /// Shorthand for a granular family.
    #[serde(default)]
    pub granularity: Option<Vec<u32>>,
    #[serde(default)]
    pub nu_on: Option<PerUnit<f64>>,
    #[serde(default)]
    pub nu_off: Option<PerUnit<f64>>,
    #[serde(default)]
    pub nu_act: Option<PerUnit<f64>>,
    /// Starting allocation; zeros when absent.
    #[serde(default)]
    pub initial: Option<AllocationMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub instance: InstanceSource,
    pub potential: PotentialConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    /// Write per-replica JSONL traces.
    #[serde(default = "yes")]
    pub traces: bool,
    /// Report `wall_ms` as 0 so outputs are byte-reproducible.
    #[serde(default)]
    pub deterministic: bool,
}

fn default_replicas() -> usize {
    10
}

/// Configuration with every default and generator applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub instance: Instance,
    pub spec: PotentialSpec,
    /// Seed field holds the root seed.
    pub sim: SimConfig,
    pub initial: AllocationMatrix,
    /// Whether `initial` came from the configuration.
    pub initial_given: bool,
    pub replicas: usize,
    /// Seed used for a random topology, if any.
    pub instance_seed: Option<u64>,
    pub traces: bool,
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
            path: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Version(cfg.version));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// `base` is the directory relative edge-list paths resolve against.
    pub fn resolve(&self, base: &Path) -> Result<Resolved, ConfigError> {
        if self.replicas == 0 {
            return Err(invalid("replicas", "must be positive"));
        }
        let (instance, instance_seed) = self.build_instance(base)?;
        let n = instance.n();
        let spec = self.build_spec(&instance)?;
        let sim = self.build_sim(&instance)?;
        sim.validate(&instance).map_err(|e| match e {
            DynamicsError::Family(f) => ConfigError::Family(f),
            other => invalid("sim", other.to_string()),
        })?;
        let initial = match &self.sim.initial {
            Some(w) if w.n() == n && w.is_partial(&instance) => w.clone(),
            Some(_) => return Err(invalid("sim.initial", "violates the instance constraints")),
            None => AllocationMatrix::zeros(n),
        };
        Ok(Resolved {
            instance,
            spec,
            sim,
            initial,
            initial_given: self.sim.initial.is_some(),
            replicas: self.replicas,
            instance_seed,
            traces: self.traces,
            deterministic: self.deterministic,
        })
    }

    fn build_instance(&self, base: &Path) -> Result<(Instance, Option<u64>), ConfigError> {
        let caps = |n: usize, a: &PerUnit<u32>, b: &PerUnit<u32>| -> Result<(Vec<u32>, Vec<u32>), ConfigError> {
            Ok((a.expand(n, "instance.alpha")?, b.expand(n, "instance.beta")?))
        };
        Ok(match &self.instance {
            InstanceSource::Inline { n, edges, alpha, beta } => {
                (Instance::new(*n, edges.clone(), alpha.clone(), beta.clone())?, None)
            }
            InstanceSource::Complete { n, alpha, beta } => {
                let (a, b) = caps(*n, alpha, beta)?;
                (Instance::complete(*n, a, b)?, None)
            }
            InstanceSource::Regular {
                n,
                degree,
                seed,
                alpha,
                beta,
            } => {
                let (a, b) = caps(*n, alpha, beta)?;
                let s = seed.unwrap_or(self.seed);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let edges = random_regular(*n, *degree, &mut rng)?;
                (Instance::undirected(*n, edges, a, b)?, Some(s))
            }
            InstanceSource::Star { n, alpha, beta } => {
                let (a, b) = caps(*n, alpha, beta)?;
                (Instance::star(*n, a, b)?, None)
            }
            InstanceSource::Cycle { n, alpha, beta } => {
                let (a, b) = caps(*n, alpha, beta)?;
                (Instance::cycle(*n, a, b)?, None)
            }
            InstanceSource::EdgeList {
                path,
                n,
                undirected,
                alpha,
                beta,
            } => {
                let (a, b) = caps(*n, alpha, beta)?;
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                let edges = read_edge_list(&full)?;
                let inst = if *undirected {
                    Instance::undirected(*n, edges, a, b)?
                } else {
                    Instance::new(*n, edges, a, b)?
                };
                (inst, None)
            }
        })
    }

    fn build_spec(&self, inst: &Instance) -> Result<PotentialSpec, ConfigError> {
        let p = &self.potential;
        let c_con = p.c_con.expand(inst.n(), "potential.c_con")?;
        let c_con_max = c_con.iter().copied().fold(0.0, f64::max);
        let c_all = match &p.c_all {
            CAll::Value(v) => *v,
            CAll::Named(s) if s == "auto" => default_c_all(inst.alphas(), inst.betas(), p.c_agg, c_con_max),
            CAll::Named(s) => return Err(invalid("potential.c_all", format!("expected a number or \"auto\", got {s:?}"))),
        };
        Ok(PotentialSpec::new(c_all, p.c_agg, c_con, p.congestion)?)
    }

    fn build_sim(&self, inst: &Instance) -> Result<SimConfig, ConfigError> {
        let s = &self.sim;
        let n = inst.n();
        let family = match (&s.move_family, &s.granularity) {
            (Some(f), _) => f.clone(),
            (None, Some(q)) => MoveFamily::granular(q.iter().copied())?,
            (None, None) => MoveFamily::atomic(),
        };
        let mut cfg = match s.engine {
            Engine::DiscreteTime => SimConfig::reproduction(inst, family, self.seed),
            Engine::ContinuousTime => {
                SimConfig::continuous(inst, family, 0.0, 0.0, 1.0, 5.0 * inst.total_alpha() as f64, self.seed)
            }
        };
        cfg.gamma0 = s.gamma0.unwrap_or(DEFAULT_GAMMA0);
        cfg.gamma_increment = s.gamma_increment.unwrap_or(DEFAULT_GAMMA_INCREMENT);
        if let Some(h) = s.horizon {
            cfg.horizon = h;
        }
        if let Some(r) = &s.nu_on {
            cfg.nu_on = r.expand(n, "sim.nu_on")?;
        }
        if let Some(r) = &s.nu_off {
            cfg.nu_off = r.expand(n, "sim.nu_off")?;
        }
        if let Some(r) = &s.nu_act {
            cfg.nu_act = r.expand(n, "sim.nu_act")?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = r#"{
        "version": 1,
        "instance": {"kind": "complete", "n": 10, "alpha": 45, "beta": 50},
        "potential": {"c_all": "auto", "c_agg": 3},
        "sim": {"granularity": [1]},
        "replicas": 10,
        "seed": 7
    }"#;

    #[test]
    fn table_one_config_resolves() {
        let cfg = ExperimentConfig::from_json(TABLE1, "t").unwrap();
        let r = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(r.spec.c_all, 555.0);
        assert_eq!(r.sim.horizon, 2250.0);
        assert_eq!(r.sim.nu_act, vec![0.1; 10]);
        assert_eq!(r.sim.move_family, MoveFamily::atomic());
        assert_eq!(r.replicas, 10);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = ExperimentConfig::from_json("{\n  \"version\": 1,\n  oops\n}", "cfg.json").unwrap_err();
        match err {
            ConfigError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_and_versions_rejected() {
        let bad = TABLE1.replace("\"replicas\"", "\"replica\"");
        assert!(matches!(ExperimentConfig::from_json(&bad, "t"), Err(ConfigError::Syntax { .. })));
        let v2 = TABLE1.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(ExperimentConfig::from_json(&v2, "t"), Err(ConfigError::Version(2))));
    }

    #[test]
    fn bad_c_all_keyword() {
        let cfg = ExperimentConfig::from_json(&TABLE1.replace("\"auto\"", "\"big\""), "t").unwrap();
        assert!(matches!(cfg.resolve(Path::new(".")), Err(ConfigError::Invalid { field: "potential.c_all", .. })));
    }

    #[test]
    fn regular_instance_records_seed() {
        let text = r#"{"version": 1,
            "instance": {"kind": "regular", "n": 12, "degree": 4, "alpha": 3, "beta": 4},
            "potential": {"c_agg": -1}, "seed": 99}"#;
        let r = ExperimentConfig::from_json(text, "t").unwrap().resolve(Path::new(".")).unwrap();
        assert_eq!(r.instance_seed, Some(99));
        assert_eq!(r.instance.regular_degree(), Some(4));
    }

    #[test]
    fn per_unit_length_checked() {
        let text = r#"{"version": 1,
            "instance": {"kind": "cycle", "n": 3, "alpha": [1, 2], "beta": 4},
            "potential": {"c_agg": 1}}"#;
        let err = ExperimentConfig::from_json(text, "t").unwrap().resolve(Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "instance.alpha", .. }));
    }
}
