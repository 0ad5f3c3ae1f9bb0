//! Experiment configuration. JSON documents; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Coupling;
use crate::solvers::Algorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub stepsize: StepsizeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_probs: Option<Vec<f64>>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub dual_decomposition: DualDecompositionSettings,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_algorithm() -> Algorithm {
    Algorithm::VuCondatDelayed
}

fn default_iters() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Makes relative file references relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.problem {
            ProblemConfig::Custom(c) => fix(&mut c.file),
            ProblemConfig::Logistic(LogisticConfig {
                data: LogisticData::File { path, .. },
                ..
            }) => fix(path),
            _ => {}
        }
        if let Some(t) = &mut self.schedule.table {
            fix(t);
        }
        if let ReferenceConfig::File(p) = &mut self.reference {
            fix(p);
        }
    }

    /// Range checks that do not need the problem data.
    pub fn validate(&self) -> Result<()> {
        let s = &self.stepsize;
        if !(s.margin > 0.0 && s.margin <= 1.0) {
            return Err(Error::config(format!("stepsize.margin must lie in (0, 1], got {}", s.margin)));
        }
        if !(s.c_scale > 0.0 && s.c_scale.is_finite()) {
            return Err(Error::config("stepsize.c_scale must be positive"));
        }
        if s.mode == StepsizeMode::Manual && (s.gamma.is_none() || s.sigma.is_none()) {
            return Err(Error::config("manual stepsizes need both gamma and sigma"));
        }
        match self.schedule.kind {
            ScheduleKindConfig::Fixed if self.schedule.age.is_none() => {
                return Err(Error::config("fixed schedule needs an age"))
            }
            ScheduleKindConfig::Custom if self.schedule.table.is_none() => {
                return Err(Error::config("custom schedule needs a table file"))
            }
            _ => {}
        }
        if self.algorithm == Algorithm::AhuRandomized && self.activation_probs.is_none() {
            return Err(Error::config("ahu_randomized needs activation_probs"));
        }
        if let Some(p) = &self.activation_probs {
            if let Some(v) = p.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
                return Err(Error::config(format!("activation probability {v} outside (0, 1]")));
            }
        }
        if !(self.dual_decomposition.alpha > 0.0) {
            return Err(Error::config("dual_decomposition.alpha must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    Formation(FormationConfig),
    Logistic(LogisticConfig),
    ElasticNet(ElasticNetConfig),
    QuadraticSuite(QuadraticSuiteConfig),
    Custom(CustomConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationConfig {
    #[serde(default = "five")]
    pub m: usize,
    #[serde(default = "three")]
    pub horizon: usize,
    #[serde(default = "one")]
    pub dt: f64,
    /// Formation weights `λ_i`; a single entry applies to every agent.
    #[serde(default = "unit_vec")]
    pub lambda: Vec<f64>,
    /// `A_i`; defaults to both ring neighbors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<Vec<Vec<usize>>>,
    /// Target positions; `d_ij = target_i − target_j`. Defaults to an arrow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<[f64; 2]>>,
    /// Arrow spacing when `targets` is absent.
    #[serde(default = "two")]
    pub spacing: f64,
    /// Defaults to a regular polygon of radius `start_radius`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_velocities: Option<Vec<[f64; 2]>>,
    #[serde(default = "ten")]
    pub start_radius: f64,
    /// `Q_i = q_scale · I`.
    #[serde(default = "one")]
    pub q_scale: f64,
    #[serde(default = "hundred")]
    pub state_bound: f64,
    #[serde(default = "five_f")]
    pub input_bound: f64,
}

impl Default for FormationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticConfig {
    pub lambda: f64,
    pub data: LogisticData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LogisticData {
    Synthetic {
        m: usize,
        samples: usize,
        dim: usize,
        seed: u64,
    },
    /// Whitespace-separated rows `label x_1 … x_d`, split evenly over `m` agents.
    File { path: PathBuf, m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElasticNetConfig {
    /// Primal block sizes, one per agent.
    pub dims: Vec<usize>,
    pub samples: usize,
    pub l1: f64,
    pub l2: f64,
    #[serde(default)]
    pub seed: u64,
    /// Multiplies the synthetic data; zero gives an all-zero data set.
    #[serde(default = "one")]
    pub data_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualKind {
    /// `h_i(y) = ‖y − t_i‖²/(2μ_h)`.
    Smooth,
    /// `h_i = δ_{t_i}`.
    Point,
}

fn smooth_kind() -> DualKind {
    DualKind::Smooth
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSuiteConfig {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub coupling: Coupling,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub mu_g: f64,
    #[serde(default = "one")]
    pub mu_h: f64,
    #[serde(default = "smooth_kind")]
    pub h: DualKind,
    /// Weight of the ring coupling in `f`; zero makes `f` vanish.
    #[serde(default = "half")]
    pub f_weight: f64,
    /// Probability that an off-diagonal block of `L` is present.
    #[serde(default = "half")]
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub file: PathBuf,
    #[serde(default = "one")]
    pub mu_g: f64,
    #[serde(default = "one")]
    pub mu_h: f64,
    #[serde(default = "smooth_kind")]
    pub h: DualKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKindConfig {
    #[default]
    None,
    Fixed,
    UniformRandom,
    AdversarialMax,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub kind: ScheduleKindConfig,
    #[serde(default)]
    pub bound: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub monotone: bool,
    /// Defaults to the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeMode {
    /// The convergence stepsize rule of the chosen algorithm.
    #[default]
    Auto,
    /// Stepsizes of the linear-rate certificate.
    Rate,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsizeConfig {
    #[serde(default)]
    pub mode: StepsizeMode,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Dual stepsizes for the partial-coupling rule, or manual σ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    /// Manual γ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    /// Multiplies the certified rate parameter `c`. Values above 1 leave the
    /// certified region and exist for negative controls.
    #[serde(default = "one")]
    pub c_scale: f64,
}

fn default_margin() -> f64 {
    crate::tuning::DEFAULT_MARGIN
}

impl Default for StepsizeConfig {
    fn default() -> Self {
        Self {
            mode: StepsizeMode::Auto,
            margin: default_margin(),
            sigma: None,
            gamma: None,
            c_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopConfig {
    #[default]
    ItersOnly,
    KktTol { tol: f64 },
    DistTol { tol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceConfig {
    /// Exact solve when the problem allows it, polishing otherwise.
    #[default]
    Auto,
    ExactQuadratic,
    SynchronousPolish,
    None,
    /// A cached point written by `oracle`.
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualDecompositionSettings {
    #[serde(default = "one")]
    pub alpha: f64,
}

impl Default for DualDecompositionSettings {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_envelope_tol")]
    pub envelope_tol: f64,
    /// Envelope points whose bound lies below `envelope_floor · d0` are not
    /// checked; the measured distance bottoms out at round-off there.
    #[serde(default = "default_envelope_floor")]
    pub envelope_floor: f64,
    #[serde(default = "default_envelope_tol")]
    pub fejer_tail_tol: f64,
    #[serde(default = "default_ensemble")]
    pub ensemble_seeds: usize,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<usize>,
    #[serde(default = "default_slack")]
    pub ensemble_slack: f64,
}

fn default_envelope_tol() -> f64 {
    1e-8
}

fn default_envelope_floor() -> f64 {
    1e-20
}

fn default_ensemble() -> usize {
    200
}

fn default_checkpoints() -> Vec<usize> {
    vec![10, 50, 100, 250, 500]
}

fn default_slack() -> f64 {
    0.05
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            envelope_tol: default_envelope_tol(),
            envelope_floor: default_envelope_floor(),
            fejer_tail_tol: default_envelope_tol(),
            ensemble_seeds: default_ensemble(),
            checkpoints: default_checkpoints(),
            ensemble_slack: default_slack(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}
fn ten() -> f64 {
    10.0
}
fn hundred() -> f64 {
    100.0
}
fn five_f() -> f64 {
    5.0
}
fn five() -> usize {
    5
}
fn three() -> usize {
    3
}
fn unit_vec() -> Vec<f64> {
    vec![1.0]
}
