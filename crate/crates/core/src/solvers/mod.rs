//! Iteration engines.
//!
//! The driver is iteration-synchronous: at iteration `k` every (active) agent
//! builds its view from the history up to `k`, computes its update, and the
//! assembled `z^{k+1}` is recorded. An iterate becomes visible to other agents
//! from the next iteration on, subject to the schedule's ages.

mod dual_decomposition;

pub use dual_decomposition::{
    run_dual_decomposition, DecomposedProblem, DualDecompositionConfig, DualDecompositionLog,
};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{DiagonalBlockMetric, PointMetric, PrimalDualPoint, SaddleMetricP};
use crate::delay::{local_view, DelaySchedule, HistoryBuffer, LocalView};
use crate::diagnostics::{kkt_residual, ProbeSteps};
use crate::error::{Error, Result};
use crate::problem::{Coupling, CouplingSets, ProblemSpec};
use crate::tuning::StepsizePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Vũ–Condat with delays; partial coupling only.
    VuCondatDelayed,
    /// AHU-type with delays.
    AhuDelayed,
    /// AHU-type with independent random activation.
    AhuRandomized,
    /// Dual subgradient baseline.
    DualDecomposition,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopRule {
    ItersOnly,
    /// Combined prox residual (unit probe steps) at most `ε`.
    KktTol(f64),
    /// `‖z^k − z*‖ ≤ ε`.
    DistTol { tol: f64, reference: PrimalDualPoint },
}

/// What to record per iteration beyond `k` and the step length.
#[derive(Debug, Clone, Default)]
pub struct LogOptions {
    /// Enables the distance columns.
    pub reference: Option<PrimalDualPoint>,
    /// Evaluate the KKT residual every iteration (otherwise only at the end).
    pub kkt_every_iteration: bool,
    pub snapshots: bool,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub plan: StepsizePlan,
    pub schedule: DelaySchedule,
    pub max_iters: usize,
    /// Required for [`Algorithm::AhuRandomized`].
    pub activation_probs: Option<Vec<f64>>,
    pub seed: u64,
    pub stop: StopRule,
    pub log: LogOptions,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, plan: StepsizePlan, schedule: DelaySchedule, max_iters: usize) -> Self {
        Self {
            algorithm,
            plan,
            schedule,
            max_iters,
            activation_probs: None,
            seed: 0,
            stop: StopRule::ItersOnly,
            log: LogOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    /// `‖z^k − z^{k−1}‖`, zero at `k = 0`.
    pub step_norm: f64,
    pub dist_p_sq: Option<f64>,
    pub dist_d_sq: Option<f64>,
    pub dist_m_sq: Option<f64>,
    /// Euclidean distance of the primal part to the reference.
    pub primal_dist: Option<f64>,
    pub kkt: Option<f64>,
    pub active: Option<Vec<bool>>,
    pub snapshot: Option<PrimalDualPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    Tolerance,
}

/// One record per iterate, starting with `k = 0`.
#[derive(Debug, Clone)]
pub struct IterateLog {
    pub records: Vec<IterateRecord>,
    pub final_iterate: PrimalDualPoint,
    pub stop: StopReason,
}

impl IterateLog {
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    /// Total number of local updates performed.
    pub fn activations(&self) -> usize {
        self.records
            .iter()
            .skip(1)
            .map(|r| match &r.active {
                Some(mask) => mask.iter().filter(|&&a| a).count(),
                None => self.final_iterate.x.num_blocks(),
            })
            .sum()
    }
}

fn protocol_check(problem: &ProblemSpec, view: &LocalView) -> Result<()> {
    for &j in &problem.f_dependency()[view.agent()] {
        view.x_block(j)?;
    }
    Ok(())
}

fn check_step(plan: &StepsizePlan, i: usize) -> Result<(f64, f64)> {
    match (plan.gamma.get(i), plan.sigma.get(i)) {
        (Some(&g), Some(&s)) => Ok((g, s)),
        _ => Err(Error::structural(format!("stepsize plan has no entry for agent {i}"))),
    }
}

/// Delayed Vũ–Condat update of agent `i`. The agent's own `x_i`, `u_i` are
/// current; only `x^k[i]` entering `∇_i f` is outdated.
pub fn step_vu_condat(
    problem: &ProblemSpec,
    i: usize,
    z: &PrimalDualPoint,
    view: &LocalView,
    plan: &StepsizePlan,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (gamma, sigma) = check_step(plan, i)?;
    protocol_check(problem, view)?;
    let xi = z.x.block(i);
    let ui = z.u.block(i);
    let mut dir = problem.f().grad_block(i, view.x());
    let lii = problem.l().block(i, i);
    if let Some(lii) = lii {
        dir += lii.tr_mul(ui);
    }
    let x_new = problem.g(i).prox(gamma, &(xi - dir * gamma))?;
    let mut arg = ui.clone();
    if let Some(lii) = lii {
        arg += (lii * (&x_new * 2.0 - xi)) * sigma;
    }
    let u_new = problem.h(i).prox_conjugate(sigma, &arg)?;
    Ok((x_new, u_new))
}

/// Delayed AHU update of agent `i`: `L_{·i}ᵀ` acts on `u^k[i]`, `L_{i·}` on `x^k[i]`.
pub fn step_ahu(
    problem: &ProblemSpec,
    i: usize,
    z: &PrimalDualPoint,
    view: &LocalView,
    plan: &StepsizePlan,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (gamma, sigma) = check_step(plan, i)?;
    protocol_check(problem, view)?;
    let l = problem.l();
    let xi = z.x.block(i);
    let ui = z.u.block(i);
    let mut dir = problem.f().grad_block(i, view.x());
    for j in l.col_support(i) {
        dir += l.block(j, i).expect("supported block").tr_mul(view.u_block(j)?);
    }
    let x_new = problem.g(i).prox(gamma, &(xi - dir * gamma))?;
    let mut arg = ui.clone();
    for j in l.row_support(i) {
        arg += (l.block(i, j).expect("supported block") * view.x_block(j)?) * sigma;
    }
    let u_new = problem.h(i).prox_conjugate(sigma, &arg)?;
    Ok((x_new, u_new))
}

/// Computes `z^{k+1}` from the history. Agents are processed in `order`;
/// inactive agents keep their blocks.
pub fn advance(
    problem: &ProblemSpec,
    coupling: &CouplingSets,
    history: &HistoryBuffer,
    algorithm: Algorithm,
    plan: &StepsizePlan,
    schedule: &DelaySchedule,
    active: &[bool],
    order: &[usize],
) -> Result<PrimalDualPoint> {
    let z = history.latest();
    let mut next = z.clone();
    for &i in order {
        if !active[i] {
            continue;
        }
        let view = local_view(history, schedule, coupling, i)?;
        let (x, u) = match algorithm {
            Algorithm::VuCondatDelayed => step_vu_condat(problem, i, z, &view, plan)?,
            Algorithm::AhuDelayed | Algorithm::AhuRandomized => step_ahu(problem, i, z, &view, plan)?,
            Algorithm::DualDecomposition => {
                return Err(Error::config("dual decomposition has its own driver"))
            }
        };
        next.x.set_block(i, x)?;
        next.u.set_block(i, u)?;
    }
    Ok(next)
}

struct Recorder<'a> {
    opts: &'a LogOptions,
    d: DiagonalBlockMetric,
    m: Option<DiagonalBlockMetric>,
    p: SaddleMetricP<'a>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a ProblemSpec, plan: &StepsizePlan, opts: &'a LogOptions) -> Result<Self> {
        let mu_h = problem.mu_h();
        let m = if mu_h.iter().all(|&v| v > 0.0) {
            Some(DiagonalBlockMetric::m(&problem.mu_g(), &mu_h)?)
        } else {
            None
        };
        Ok(Self {
            opts,
            d: DiagonalBlockMetric::d(&plan.gamma, &plan.sigma)?,
            m,
            p: SaddleMetricP::new(plan.gamma.clone(), plan.sigma.clone(), problem.l())?,
        })
    }

    fn record(
        &self,
        problem: &ProblemSpec,
        k: usize,
        z: &PrimalDualPoint,
        prev: Option<&PrimalDualPoint>,
        active: Option<Vec<bool>>,
        force_kkt: bool,
    ) -> Result<IterateRecord> {
        let step_norm = prev.map_or(0.0, |p| z.sub(p).norm());
        let (mut dp, mut dd, mut dm, mut pd) = (None, None, None, None);
        if let Some(zs) = &self.opts.reference {
            let e = z.sub(zs);
            dp = Some(self.p.norm_sq(&e)?);
            dd = Some(self.d.norm_sq(&e)?);
            dm = match &self.m {
                Some(m) => Some(m.norm_sq(&e)?),
                None => None,
            };
            pd = Some(e.x.norm());
        }
        let kkt = if self.opts.kkt_every_iteration || force_kkt {
            Some(kkt_residual(problem, z, ProbeSteps::default())?.combined)
        } else {
            None
        };
        Ok(IterateRecord {
            k,
            step_norm,
            dist_p_sq: dp,
            dist_d_sq: dd,
            dist_m_sq: dm,
            primal_dist: pd,
            kkt,
            active,
            snapshot: self.opts.snapshots.then(|| z.clone()),
        })
    }
}

/// Checks the configuration against the problem before running.
pub fn validate_config(problem: &ProblemSpec, config: &SolverConfig) -> Result<()> {
    let m = problem.m();
    if config.plan.m() != m || config.plan.sigma.len() != m {
        return Err(Error::structural(format!(
            "stepsize plan covers {} agents, problem has {m}",
            config.plan.m()
        )));
    }
    for i in 0..m {
        let (g, s) = (config.plan.gamma[i], config.plan.sigma[i]);
        if !(g > 0.0 && g.is_finite() && s > 0.0 && s.is_finite()) {
            return Err(Error::config(format!("stepsizes of agent {i} must be positive and finite")));
        }
    }
    match config.algorithm {
        Algorithm::VuCondatDelayed if problem.classify_coupling() == Coupling::Total => {
            return Err(Error::Inapplicable(
                "the delayed Vũ–Condat iteration only uses L_ii and requires partial coupling".into(),
            ))
        }
        Algorithm::AhuRandomized => {
            let p = config
                .activation_probs
                .as_ref()
                .ok_or_else(|| Error::config("randomized activation requires probabilities"))?;
            if p.len() != m {
                return Err(Error::structural("one activation probability per agent required"));
            }
            if let Some(i) = p.iter().position(|&pi| !(pi > 0.0 && pi <= 1.0)) {
                return Err(Error::config(format!(
                    "activation probability of agent {i} must lie in (0, 1], got {}",
                    p[i]
                )));
            }
        }
        Algorithm::DualDecomposition => {
            return Err(Error::config("use run_dual_decomposition for the baseline"))
        }
        _ => {}
    }
    Ok(())
}

/// Runs the configured algorithm from `z0`; the history is initialized
/// entirely at `z0`.
pub fn run(problem: &ProblemSpec, config: &SolverConfig, z0: &PrimalDualPoint) -> Result<IterateLog> {
    validate_config(problem, config)?;
    if !z0.conforms(problem.dims()) {
        return Err(Error::structural("initial point does not match the problem dimensions"));
    }
    let m = problem.m();
    let coupling = problem.coupling_sets();
    let schedule = &config.schedule;
    let mut history = HistoryBuffer::new(z0.clone(), schedule.bound());
    let recorder = Recorder::new(problem, &config.plan, &config.log)?;
    let randomized = config.algorithm == Algorithm::AhuRandomized;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let order: Vec<usize> = (0..m).collect();
    let all = vec![true; m];

    let mut records = vec![recorder.record(problem, 0, z0, None, None, false)?];
    let mut stop = StopReason::MaxIters;
    if stop_reached(problem, &config.stop, z0)? {
        stop = StopReason::Tolerance;
    }
    let mut k = 0;
    while stop == StopReason::MaxIters && k < config.max_iters {
        let active = if randomized {
            let p = config.activation_probs.as_ref().expect("validated");
            Some(p.iter().map(|&pi| rng.gen::<f64>() < pi).collect::<Vec<bool>>())
        } else {
            None
        };
        let mask = active.as_deref().unwrap_or(&all);
        let next = advance(problem, &coupling, &history, config.algorithm, &config.plan, schedule, mask, &order)?;
        k += 1;
        if !next.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                detail: "non-finite entry in the iterate".into(),
            });
        }
        if stop_reached(problem, &config.stop, &next)? {
            stop = StopReason::Tolerance;
        }
        let last = stop == StopReason::Tolerance || k == config.max_iters;
        records.push(recorder.record(problem, k, &next, Some(history.latest()), active, last)?);
        history.record(next);
    }
    if records.len() == 1 {
        records[0] = recorder.record(problem, 0, z0, None, None, true)?;
    }
    Ok(IterateLog {
        records,
        final_iterate: history.latest().clone(),
        stop,
    })
}

fn stop_reached(problem: &ProblemSpec, rule: &StopRule, z: &PrimalDualPoint) -> Result<bool> {
    Ok(match rule {
        StopRule::ItersOnly => false,
        StopRule::KktTol(eps) => kkt_residual(problem, z, ProbeSteps::default())?.combined <= *eps,
        StopRule::DistTol { tol, reference } => z.sub(reference).norm() <= *tol,
    })
}

/// Convenience: a zero initial point for `problem`.
pub fn zero_start(problem: &ProblemSpec) -> PrimalDualPoint {
    PrimalDualPoint::zeros(problem.dims())
}
