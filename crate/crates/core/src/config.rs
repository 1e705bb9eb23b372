//! Experiment configuration: a TOML document of nested blocks describing the
//! model, lattice, kernel, integrator, metric, N-sweep and reference solver.
//! Example files live under `configs/`; the full grammar is documented in the
//! README.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Boundary, LatticeConfig, LatticeError, Modifier, WeightKernel};
use crate::meanfield::GridSpec;
use crate::models::{Law, ModelSpec};
use crate::simulate::{EngineChoice, Scheme, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("lattice: {0}")]
    Lattice(#[from] LatticeError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LawBlock {
    Point { values: Vec<f64> },
    Gaussian { means: Vec<f64>, stds: Vec<f64> },
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
}

impl LawBlock {
    pub fn build(&self) -> Law {
        match self {
            LawBlock::Point { values } => Law::point(values),
            LawBlock::Gaussian { means, stds } => Law::gaussian(means, stds),
            LawBlock::Uniform { lo, hi } => Law::uniform(lo, hi),
        }
    }

    fn dim(&self) -> usize {
        match self {
            LawBlock::Point { values } => values.len(),
            LawBlock::Gaussian { means, .. } => means.len(),
            LawBlock::Uniform { lo, .. } => lo.len(),
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let ok = match self {
            LawBlock::Point { values } => !values.is_empty(),
            LawBlock::Gaussian { means, stds } => {
                means.len() == stds.len() && !means.is_empty() && stds.iter().all(|s| *s >= 0.0)
            }
            LawBlock::Uniform { lo, hi } => {
                lo.len() == hi.len() && !lo.is_empty() && lo.iter().zip(hi).all(|(l, h)| l <= h)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("malformed law block"))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// One of "kuramoto", "fhn", "linear".
    pub kind: String,
    /// Kuramoto coupling strength K, or the drift slope for "linear".
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    /// Diffusion amplitude; "fhn" reads two entries (v and w channels),
    /// the scalar models read one.
    #[serde(default = "default_sigma")]
    pub sigma: Vec<f64>,
    pub theta0: Option<LawBlock>,
    pub disorder: Option<LawBlock>,
}

fn default_coupling() -> f64 {
    1.0
}

fn default_sigma() -> Vec<f64> {
    vec![1.0]
}

impl ModelBlock {
    pub fn build(&self) -> Result<ModelSpec, ConfigError> {
        match self.kind.as_str() {
            "kuramoto" => Ok(ModelSpec::kuramoto(self.coupling, self.sigma[0])),
            "fhn" => {
                let sv = self.sigma[0];
                let sw = self.sigma.get(1).copied().unwrap_or(sv);
                Ok(ModelSpec::fitzhugh_nagumo_default(sv, sw))
            }
            "linear" => Ok(ModelSpec::linear_scalar(self.coupling, self.sigma[0])),
            other => Err(invalid(format!("unknown model kind {other:?}"))),
        }
    }

    pub fn theta0_law(&self, model: &ModelSpec) -> Law {
        match &self.theta0 {
            Some(block) => block.build(),
            None => default_theta0(model),
        }
    }

    pub fn disorder_law(&self, model: &ModelSpec) -> Law {
        match &self.disorder {
            Some(block) => block.build(),
            None => default_disorder(model),
        }
    }
}

fn default_theta0(model: &ModelSpec) -> Law {
    if model.circle_state {
        Law::uniform(&[-std::f64::consts::PI], &[std::f64::consts::PI])
    } else {
        Law::gaussian(&vec![0.0; model.state_dim], &vec![1.0; model.state_dim])
    }
}

fn default_disorder(model: &ModelSpec) -> Law {
    match &model.disorder_box {
        Some((lo, hi)) => Law::uniform(lo, hi),
        None => Law::uniform(&vec![-0.5; model.disorder_dim], &vec![0.5; model.disorder_dim]),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub dim: usize,
    pub boundary: Boundary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelBlock {
    /// "pnn" or "powerlaw".
    pub family: String,
    /// P-nearest-neighbour radius.
    pub r: Option<f64>,
    /// Power-law exponent.
    pub alpha: Option<f64>,
    /// ε in γ = α ∨ (d/2 − ε) for the subcritical power-law regime.
    pub epsilon_gamma: Option<f64>,
    /// Optional bounded modifier amplitude (cosine).
    pub cosine_amp: Option<f64>,
}

impl KernelBlock {
    pub fn build(&self, dim: usize) -> Result<WeightKernel, ConfigError> {
        match self.family.as_str() {
            "pnn" => {
                let r = self.r.ok_or_else(|| invalid("pnn kernel needs r"))?;
                Ok(WeightKernel::p_nearest(dim, r)?)
            }
            "powerlaw" => {
                let alpha = self.alpha.ok_or_else(|| invalid("powerlaw kernel needs alpha"))?;
                let eps = self.epsilon_gamma.unwrap_or(0.01);
                let modifier = self.cosine_amp.map(|amp| Modifier::Cosine { amp });
                Ok(WeightKernel::power_law_with(dim, alpha, eps, modifier)?)
            }
            other => Err(invalid(format!("unknown kernel family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_engine")]
    pub engine: EngineChoice,
    pub seed: u64,
    pub replicas: usize,
}

fn default_scheme() -> Scheme {
    Scheme::EulerMaruyama
}

fn default_engine() -> EngineChoice {
    EngineChoice::Auto
}

impl SimBlock {
    pub fn sim_config(&self, replica: u32) -> SimConfig {
        let mut cfg = SimConfig::new(self.dt, self.t_final, self.scheme, self.seed);
        cfg.replica = replica;
        cfg
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    /// Dyadic anchor levels fed to the dictionary.
    pub k_levels: u32,
    pub dictionary_size: usize,
    #[serde(default = "default_p")]
    pub p: u32,
}

fn default_p() -> u32 {
    2
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// Mean-field Picard solution on the dyadic grid.
    Picard,
    /// Largest N in the sweep as surrogate reference, excluded from the fit.
    SelfRef,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceBlock {
    pub mode: ReferenceMode,
    #[serde(default = "default_k_ref")]
    pub k_ref: u32,
    #[serde(default = "default_omega_samples")]
    pub omega_samples: usize,
    #[serde(default = "default_path_samples")]
    pub path_samples: usize,
    #[serde(default = "default_picard_tol")]
    pub tol: f64,
    #[serde(default = "default_picard_iters")]
    pub max_iter: u32,
}

fn default_k_ref() -> u32 {
    16
}

fn default_omega_samples() -> usize {
    1024
}

fn default_path_samples() -> usize {
    64
}

fn default_picard_tol() -> f64 {
    1e-3
}

fn default_picard_iters() -> u32 {
    5
}

impl ReferenceBlock {
    pub fn grid(&self, boundary: Boundary) -> GridSpec {
        GridSpec::new(self.k_ref, self.omega_samples, self.path_samples, boundary)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: Option<PathBuf>,
    pub n_sweep: Vec<usize>,
    pub model: ModelBlock,
    pub lattice: LatticeBlock,
    pub kernel: KernelBlock,
    pub sim: SimBlock,
    pub metric: MetricBlock,
    pub reference: ReferenceBlock,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_sweep.is_empty() {
            return Err(invalid("n_sweep must hold at least one half-width"));
        }
        if self.n_sweep.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("n_sweep must be strictly increasing"));
        }
        if self.sim.replicas < 8 {
            return Err(invalid("replicas must be at least 8"));
        }
        if !(self.sim.dt > 0.0 && self.sim.t_final >= self.sim.dt) {
            return Err(invalid("need 0 < dt <= t_final"));
        }
        if self.lattice.dim == 0 {
            return Err(invalid("lattice dimension must be positive"));
        }
        if self.metric.dictionary_size == 0 || self.metric.k_levels == 0 {
            return Err(invalid("metric block needs k_levels >= 1 and a nonempty dictionary"));
        }
        if self.metric.p == 0 {
            return Err(invalid("metric exponent p must be >= 1"));
        }
        if self.model.sigma.is_empty() || self.model.sigma.iter().any(|s| *s < 0.0) {
            return Err(invalid("sigma entries must be nonnegative"));
        }
        let model = self.model.build()?;
        self.kernel.build(self.lattice.dim)?;
        for (law, dim, what) in [
            (&self.model.theta0, model.state_dim, "theta0"),
            (&self.model.disorder, model.disorder_dim, "disorder"),
        ] {
            if let Some(block) = law {
                block.check()?;
                if block.dim() != dim {
                    return Err(invalid(format!("{what} law dimension mismatch")));
                }
            }
        }
        Ok(())
    }

    pub fn lattice_for(&self, half_width: usize) -> LatticeConfig {
        LatticeConfig {
            dim: self.lattice.dim,
            half_width,
            boundary: self.lattice.boundary,
        }
    }
}
