//! Experiment orchestration behind the command-line tool: problem builders,
//! stepsize selection, runs, trace replay checks and reference points.

pub mod builders;
pub mod config;
pub mod io;

use std::fmt::Write as _;

use rayon::prelude::*;

pub use builders::BuiltProblem;
pub use config::{ExperimentConfig, ProblemConfig, ReferenceConfig, ScheduleKindConfig, StepsizeMode, StopConfig};
pub use io::{Trace, TraceRow};

use crate::block::{MetricKind, NormOptions, PrimalDualPoint};
use crate::delay::{load_delay_table, make_schedule, DelaySchedule, ScheduleKind};
use crate::diagnostics::{
    envelope_check, envelope_check_ensemble, fejer_excess, reference_solution, DistanceColumn, EnvelopeReport,
    ReferenceMode,
};
use crate::error::{Error, Result};
use crate::problem::{compute_constants, Coupling, ProblemConstants, ProblemSpec};
use crate::solvers::{
    run, run_dual_decomposition, Algorithm, DualDecompositionConfig, IterateLog, LogOptions, SolverConfig,
    StopRule,
};
use crate::tuning::{
    default_dual_steps, rate_constants_deterministic, rate_constants_random, stepsizes_partial, stepsizes_random,
    stepsizes_total, Provenance, RateCertificate, RateDetail, StepsizePlan,
};

pub fn build_problem(cfg: &ProblemConfig) -> Result<BuiltProblem> {
    match cfg {
        ProblemConfig::Formation(c) => builders::build_formation(c),
        ProblemConfig::Logistic(c) => builders::build_logistic(c),
        ProblemConfig::ElasticNet(c) => builders::build_elastic_net(c),
        ProblemConfig::QuadraticSuite(c) => builders::build_quadratic_suite(c),
        ProblemConfig::Custom(c) => builders::build_custom(c),
    }
}

pub fn build_schedule(cfg: &ExperimentConfig) -> Result<DelaySchedule> {
    let s = &cfg.schedule;
    let schedule = match s.kind {
        ScheduleKindConfig::None => make_schedule(ScheduleKind::None, 0)?,
        ScheduleKindConfig::Fixed => make_schedule(ScheduleKind::Fixed(s.age.unwrap_or(0)), s.bound)?,
        ScheduleKindConfig::UniformRandom => make_schedule(
            ScheduleKind::UniformRandom {
                seed: s.seed.unwrap_or(cfg.seed),
            },
            s.bound,
        )?,
        ScheduleKindConfig::AdversarialMax => make_schedule(ScheduleKind::AdversarialMax, s.bound)?,
        ScheduleKindConfig::Custom => {
            let path = s.table.as_ref().ok_or_else(|| Error::config("custom schedule needs a table file"))?;
            let loaded = load_delay_table(path)?;
            if s.bound != 0 && s.bound != loaded.bound() {
                return Err(Error::config(format!(
                    "schedule.bound = {} disagrees with the table's bound {}",
                    s.bound,
                    loaded.bound()
                )));
            }
            loaded
        }
    };
    Ok(if s.monotone { schedule.monotone() } else { schedule })
}

/// Stepsizes chosen for an experiment, with the certificate they come from.
#[derive(Debug, Clone)]
pub struct Tuning {
    pub constants: ProblemConstants,
    pub bound: usize,
    pub plan: StepsizePlan,
    pub certificate: Option<RateCertificate>,
}

fn broadcast(name: &str, v: &[f64], m: usize) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; m]),
        n if n == m => Ok(v.to_vec()),
        n => Err(Error::config(format!("{name} has {n} entries, expected 1 or {m}"))),
    }
}

fn probs(cfg: &ExperimentConfig, m: usize) -> Result<Vec<f64>> {
    let p = cfg
        .activation_probs
        .as_ref()
        .ok_or_else(|| Error::config("randomized activation needs activation_probs"))?;
    broadcast("activation_probs", p, m)
}

/// Rescales the rate parameter of a certificate and its plan.
fn scale_rate(
    k: &ProblemConstants,
    cert: RateCertificate,
    plan: StepsizePlan,
    scale: f64,
    p: Option<&[f64]>,
) -> Result<(RateCertificate, StepsizePlan)> {
    if scale == 1.0 {
        return Ok((cert, plan));
    }
    let c = cert.c * scale;
    let (gamma, sigma, factor, provenance): (Vec<f64>, Vec<f64>, f64, Provenance) = match p {
        None => (
            k.mu_g.iter().map(|mu| c / mu).collect(),
            k.mu_h.iter().map(|mu| c / mu).collect(),
            1.0 / (1.0 + c),
            Provenance::RateDeterministic { c },
        ),
        Some(p) => {
            let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
            if c >= p_min {
                return Err(Error::config(format!(
                    "scaled rate parameter {c} must stay below the smallest activation probability {p_min}"
                )));
            }
            (
                p.iter().zip(&k.mu_g).map(|(pi, mu)| 1.0 / ((pi / c - 1.0) * mu)).collect(),
                p.iter().zip(&k.mu_h).map(|(pi, mu)| 1.0 / ((pi / c - 1.0) * mu)).collect(),
                1.0 - c,
                Provenance::RateRandom { c },
            )
        }
    };
    Ok((
        RateCertificate { c, factor, ..cert },
        StepsizePlan {
            gamma,
            sigma,
            provenance,
            margin: plan.margin,
        },
    ))
}

pub fn tune(cfg: &ExperimentConfig, spec: &ProblemSpec) -> Result<Tuning> {
    let constants = compute_constants(spec, NormOptions::default())?;
    let bound = build_schedule(cfg)?.bound();
    let m = spec.m();
    let s = &cfg.stepsize;
    let (plan, certificate) = match (s.mode, cfg.algorithm) {
        (_, Algorithm::DualDecomposition) => {
            return Err(Error::config("the dual decomposition baseline uses dual_decomposition.alpha, not a stepsize plan"))
        }
        (StepsizeMode::Manual, _) => {
            let gamma = broadcast("stepsize.gamma", s.gamma.as_deref().unwrap_or_default(), m)?;
            let sigma = broadcast("stepsize.sigma", s.sigma.as_deref().unwrap_or_default(), m)?;
            (StepsizePlan::manual(gamma, sigma)?, None)
        }
        (StepsizeMode::Auto, Algorithm::VuCondatDelayed) => {
            let sigma = match &s.sigma {
                Some(v) => broadcast("stepsize.sigma", v, m)?,
                None => default_dual_steps(&constants),
            };
            (stepsizes_partial(&constants, &sigma, bound, s.margin)?, None)
        }
        (StepsizeMode::Auto, Algorithm::AhuDelayed) => (stepsizes_total(&constants, bound, s.margin)?, None),
        (StepsizeMode::Auto, Algorithm::AhuRandomized) => {
            (stepsizes_random(&constants, bound, &probs(cfg, m)?, s.margin)?, None)
        }
        (StepsizeMode::Rate, Algorithm::VuCondatDelayed) => {
            return Err(Error::Inapplicable(
                "linear-rate certificates cover the AHU-type iterations only".into(),
            ))
        }
        (StepsizeMode::Rate, Algorithm::AhuDelayed) => {
            let (cert, plan) = rate_constants_deterministic(&constants, bound, s.margin)?;
            let (cert, plan) = scale_rate(&constants, cert, plan, s.c_scale, None)?;
            (plan, Some(cert))
        }
        (StepsizeMode::Rate, Algorithm::AhuRandomized) => {
            let p = probs(cfg, m)?;
            let (cert, plan) = rate_constants_random(&constants, bound, &p)?;
            let (cert, plan) = scale_rate(&constants, cert, plan, s.c_scale, Some(&p))?;
            (plan, Some(cert))
        }
    };
    Ok(Tuning {
        constants,
        bound,
        plan,
        certificate,
    })
}

/// The reference point `z*` selected by the configuration.
pub fn reference_point(cfg: &ExperimentConfig, spec: &ProblemSpec) -> Result<Option<PrimalDualPoint>> {
    let z = match &cfg.reference {
        ReferenceConfig::None => return Ok(None),
        ReferenceConfig::ExactQuadratic => reference_solution(spec, ReferenceMode::ExactQuadratic)?,
        ReferenceConfig::SynchronousPolish => reference_solution(spec, ReferenceMode::SynchronousPolish)?,
        ReferenceConfig::Auto => match reference_solution(spec, ReferenceMode::ExactQuadratic) {
            Err(Error::Inapplicable(_)) => reference_solution(spec, ReferenceMode::SynchronousPolish)?,
            other => other?,
        },
        ReferenceConfig::File(path) => io::parse_point(&std::fs::read_to_string(path)?)?,
    };
    if !z.conforms(spec.dims()) {
        return Err(Error::structural("reference point does not match the problem dimensions"));
    }
    Ok(Some(z))
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    /// Absent for the dual decomposition baseline.
    pub log: Option<IterateLog>,
    pub tuning: Option<Tuning>,
    pub reference: Option<PrimalDualPoint>,
}

fn solver_config(cfg: &ExperimentConfig, plan: StepsizePlan, schedule: DelaySchedule, m: usize) -> Result<SolverConfig> {
    let mut sc = SolverConfig::new(cfg.algorithm, plan, schedule, cfg.iters);
    sc.seed = cfg.seed;
    if cfg.algorithm == Algorithm::AhuRandomized {
        sc.activation_probs = Some(probs(cfg, m)?);
    }
    Ok(sc)
}

fn stop_rule(cfg: &ExperimentConfig, reference: Option<&PrimalDualPoint>) -> Result<StopRule> {
    Ok(match cfg.stop {
        StopConfig::ItersOnly => StopRule::ItersOnly,
        StopConfig::KktTol { tol } => StopRule::KktTol(tol),
        StopConfig::DistTol { tol } => StopRule::DistTol {
            tol,
            reference: reference
                .cloned()
                .ok_or_else(|| Error::config("distance stopping needs a reference point"))?,
        },
    })
}

fn metric_column(metric: MetricKind) -> Result<DistanceColumn> {
    match metric {
        MetricKind::D => Ok(DistanceColumn::D),
        MetricKind::M => Ok(DistanceColumn::M),
        other => Err(Error::config(format!("no trace column for the {other:?} metric"))),
    }
}

fn column_name(col: DistanceColumn) -> &'static str {
    match col {
        DistanceColumn::P => "dist_P_sq",
        DistanceColumn::D => "dist_D_sq",
        DistanceColumn::M => "dist_M_sq",
    }
}

/// Converts a solver log into trace rows.
pub fn trace_from_log(log: &IterateLog, certificate: Option<&RateCertificate>) -> Result<Trace> {
    let d0 = match certificate {
        Some(cert) => {
            let first = &log.records[0];
            match metric_column(cert.metric)? {
                DistanceColumn::D => first.dist_d_sq,
                DistanceColumn::M => first.dist_m_sq,
                DistanceColumn::P => None,
            }
        }
        None => None,
    };
    let rows = log
        .records
        .iter()
        .map(|r| TraceRow {
            k: r.k,
            step_norm: r.step_norm,
            dist_p_sq: r.dist_p_sq,
            dist_d_sq: r.dist_d_sq,
            dist_m_sq: r.dist_m_sq,
            kkt: r.kkt,
            envelope_bound: d0.zip(certificate).map(|(d0, c)| c.envelope(r.k) * d0),
            active_mask: r.active.as_deref().map(io::mask_string),
        })
        .collect();
    Ok(Trace { rows })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let built = build_problem(&cfg.problem)?;
    let spec = &built.spec;
    let schedule = build_schedule(cfg)?;
    let reference = reference_point(cfg, spec)?;

    if cfg.algorithm == Algorithm::DualDecomposition {
        let dd = built.decomposed.as_ref().ok_or_else(|| {
            Error::Inapplicable("the dual decomposition baseline is only built for formation problems".into())
        })?;
        let mut dc = DualDecompositionConfig::new(cfg.dual_decomposition.alpha, cfg.iters, schedule);
        dc.reference = reference.as_ref().map(|z| z.x.clone());
        let log = run_dual_decomposition(dd, &dc, &built.start.x)?;
        let rows = log
            .records
            .iter()
            .map(|r| TraceRow {
                k: r.k,
                step_norm: r.step_norm,
                dist_p_sq: None,
                dist_d_sq: None,
                dist_m_sq: None,
                kkt: None,
                envelope_bound: None,
                active_mask: None,
            })
            .collect();
        return Ok(RunOutput {
            trace: Trace { rows },
            log: None,
            tuning: None,
            reference,
        });
    }

    let tuning = tune(cfg, spec)?;
    let mut sc = solver_config(cfg, tuning.plan.clone(), schedule, spec.m())?;
    sc.stop = stop_rule(cfg, reference.as_ref())?;
    sc.log = LogOptions {
        reference: reference.clone(),
        kkt_every_iteration: false,
        snapshots: false,
    };
    let log = run(spec, &sc, &built.start)?;
    let trace = trace_from_log(&log, tuning.certificate.as_ref())?;
    Ok(RunOutput {
        trace,
        log: Some(log),
        tuning: Some(tuning),
        reference,
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Human-readable report of the problem constants and every stepsize rule.
///
/// Fails when the rule selected by the configuration does not apply.
pub fn tune_report(cfg: &ExperimentConfig) -> Result<String> {
    let built = build_problem(&cfg.problem)?;
    let spec = &built.spec;
    let mut out = String::new();
    let coupling = spec.classify_coupling();
    let _ = writeln!(out, "agents            {}", spec.m());
    let _ = writeln!(out, "primal dims       {:?}", spec.dims().primal());
    let _ = writeln!(out, "dual dims         {:?}", spec.dims().dual());
    let _ = writeln!(out, "coupling          {coupling:?}");
    let selected = if cfg.algorithm == Algorithm::DualDecomposition {
        let _ = writeln!(out, "algorithm         dual_decomposition (alpha = {})", cfg.dual_decomposition.alpha);
        return Ok(out);
    } else {
        tune(cfg, spec)
    };
    let k = compute_constants(spec, NormOptions::default())?;
    let b = build_schedule(cfg)?.bound();
    let _ = writeln!(out, "delay bound B     {b}");
    let _ = writeln!(out, "beta              {:.6e}", k.beta);
    let _ = writeln!(out, "beta_bar          {}", fmt_vec(&k.beta_bar));
    let _ = writeln!(out, "beta_bar_weighted {:.6e}", k.beta_bar_weighted);
    let _ = writeln!(out, "mu_g              {}", fmt_vec(&k.mu_g));
    let _ = writeln!(out, "mu_h              {}", fmt_vec(&k.mu_h));
    let _ = writeln!(out, "norm L_ii         {}", fmt_vec(&k.norm_l_diag));
    let _ = writeln!(out, "R_s               {:.6e}", k.r_s);
    let _ = writeln!(out, "C_s               {:.6e}", k.c_s);
    let _ = writeln!(out);
    let _ = writeln!(out, "rules (margin {}):", cfg.stepsize.margin);
    let m = spec.m();
    let margin = cfg.stepsize.margin;
    let mut line = |name: &str, r: Result<String>| {
        let _ = match r {
            Ok(s) => writeln!(out, "  {name:<22} {s}"),
            Err(e) => writeln!(out, "  {name:<22} unavailable: {e}"),
        };
    };
    let plan_str = |p: StepsizePlan| format!("gamma {} sigma {}", fmt_vec(&p.gamma), fmt_vec(&p.sigma));
    line(
        "partial",
        if coupling == Coupling::Partial {
            let sigma = match &cfg.stepsize.sigma {
                Some(v) => broadcast("stepsize.sigma", v, m),
                None => Ok(default_dual_steps(&k)),
            };
            sigma.and_then(|s| stepsizes_partial(&k, &s, b, margin)).map(plan_str)
        } else {
            Err(Error::Inapplicable("L is not block-diagonal".into()))
        },
    );
    line("total", stepsizes_total(&k, b, margin).map(plan_str));
    let p = cfg.activation_probs.as_ref().map(|p| broadcast("activation_probs", p, m));
    match &p {
        Some(Ok(p)) => line("random", stepsizes_random(&k, b, p, margin).map(plan_str)),
        Some(Err(e)) => line("random", Err(Error::config(e.to_string()))),
        None => line("random", Err(Error::config("no activation_probs given"))),
    }
    line(
        "rate (deterministic)",
        rate_constants_deterministic(&k, b, margin).map(|(c, _)| match c.detail {
            RateDetail::Deterministic { c2, c_max } => {
                format!("c2 {c2:.6e} c_max {c_max:.6e} c {:.6e} factor {:.12}", c.c, c.factor)
            }
            RateDetail::Random { .. } => unreachable!(),
        }),
    );
    if let Some(Ok(p)) = &p {
        line(
            "rate (random)",
            rate_constants_random(&k, b, p).map(|(c, _)| match c.detail {
                RateDetail::Random { delta1, delta2 } => {
                    format!("delta1 {delta1:.6e} delta2 {delta2:.6e} c {:.6e} factor {:.12}", c.c, c.factor)
                }
                RateDetail::Deterministic { .. } => unreachable!(),
            }),
        );
    }
    let tuning = selected?;
    let _ = writeln!(out);
    let _ = writeln!(out, "selected plan ({:?}, {:?}):", cfg.algorithm, tuning.plan.provenance);
    let _ = writeln!(out, "  gamma {}", fmt_vec(&tuning.plan.gamma));
    let _ = writeln!(out, "  sigma {}", fmt_vec(&tuning.plan.sigma));
    if let Some(c) = &tuning.certificate {
        let _ = writeln!(
            out,
            "certificate: c = {:.12e}, factor = {:.12}, metric {:?}",
            c.c, c.factor, c.metric
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Violation,
    /// No theorem speaks about this configuration.
    NotApplicable,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub verdict: Verdict,
    pub report: String,
    pub envelope: Option<EnvelopeReport>,
}

fn envelope_text(rep: &EnvelopeReport) -> String {
    let worst = rep.points.iter().map(|p| p.ratio).fold(0.0_f64, f64::max);
    match rep.first_violation {
        None => format!(
            "envelope holds at {} points (max ratio {worst:.6e}, tol {:e})",
            rep.points.len(),
            rep.tol
        ),
        Some(k) => format!(
            "envelope violated first at k = {k} (max ratio {worst:.6e}, tol {:e})",
            rep.tol
        ),
    }
}

/// Ensemble of randomized runs with seeds `seed, seed+1, …`, in parallel.
pub fn run_ensemble(
    spec: &ProblemSpec,
    cfg: &ExperimentConfig,
    plan: &StepsizePlan,
    reference: &PrimalDualPoint,
    start: &PrimalDualPoint,
    iters: usize,
    seeds: usize,
) -> Result<Vec<IterateLog>> {
    let schedule = build_schedule(cfg)?;
    (0..seeds as u64)
        .into_par_iter()
        .map(|j| {
            let mut sc = solver_config(cfg, plan.clone(), schedule.clone(), spec.m())?;
            sc.max_iters = iters;
            sc.seed = cfg.seed.wrapping_add(j);
            sc.log.reference = Some(reference.clone());
            run(spec, &sc, start)
        })
        .collect()
}

/// Replays a trace against the theory that covers its configuration.
pub fn check_trace(cfg: &ExperimentConfig, trace: &Trace) -> Result<CheckOutcome> {
    if trace.rows.is_empty() {
        return Err(Error::config("empty trace"));
    }
    if cfg.algorithm == Algorithm::DualDecomposition || cfg.stepsize.mode == StepsizeMode::Manual {
        return Ok(CheckOutcome {
            verdict: Verdict::NotApplicable,
            report: "no convergence theory covers this configuration".into(),
            envelope: None,
        });
    }
    let built = build_problem(&cfg.problem)?;
    let spec = &built.spec;
    let tuning = tune(cfg, spec)?;
    let chk = &cfg.check;
    match (&tuning.certificate, cfg.algorithm) {
        (Some(cert), Algorithm::AhuDelayed) => {
            let col = metric_column(cert.metric)?;
            let mut measured = trace.column(column_name(col))?;
            let floor = chk.envelope_floor * measured[0];
            if let Some(k) = (0..measured.len()).find(|&k| cert.envelope(k) * measured[0] < floor) {
                measured.truncate(k.max(1));
            }
            let rep = envelope_check(&measured, cert, None, chk.envelope_tol)?;
            Ok(CheckOutcome {
                verdict: if rep.holds { Verdict::Pass } else { Verdict::Violation },
                report: format!("deterministic rate 1/(1+c), c = {:.6e}: {}", cert.c, envelope_text(&rep)),
                envelope: Some(rep),
            })
        }
        (Some(cert), _) => {
            let col = metric_column(cert.metric)?;
            let reference =
                reference_point(cfg, spec)?.ok_or_else(|| Error::config("ensemble check needs a reference point"))?;
            let horizon = chk.checkpoints.iter().copied().max().unwrap_or(0).min(cfg.iters);
            let logs = run_ensemble(spec, cfg, &tuning.plan, &reference, &built.start, horizon, chk.ensemble_seeds)?;
            let checkpoints: Vec<usize> = chk.checkpoints.iter().copied().filter(|&k| k <= horizon).collect();
            let rep = envelope_check_ensemble(&logs, cert, col, &checkpoints, chk.ensemble_slack)?;
            Ok(CheckOutcome {
                verdict: if rep.holds { Verdict::Pass } else { Verdict::Violation },
                report: format!(
                    "expected rate 1-c, c = {:.6e}, mean over {} seeds: {}",
                    cert.c,
                    chk.ensemble_seeds,
                    envelope_text(&rep)
                ),
                envelope: Some(rep),
            })
        }
        (None, Algorithm::VuCondatDelayed | Algorithm::AhuDelayed) => {
            let col = if cfg.algorithm == Algorithm::VuCondatDelayed {
                DistanceColumn::P
            } else {
                DistanceColumn::D
            };
            let measured = trace.column(column_name(col))?;
            let rep = fejer_excess(&measured);
            let from = measured.len() / 2;
            let tail = rep.tail_from(from);
            let limit = chk.fejer_tail_tol * rep.initial.max(1.0);
            Ok(CheckOutcome {
                verdict: if tail <= limit { Verdict::Pass } else { Verdict::Violation },
                report: format!(
                    "quasi-Fejér excess in {}: total {:.6e}, tail after k = {from} is {tail:.6e} (limit {limit:.6e})",
                    column_name(col),
                    rep.total
                ),
                envelope: None,
            })
        }
        (None, _) => Ok(CheckOutcome {
            verdict: Verdict::NotApplicable,
            report: "randomized convergence holds almost surely; a single trace cannot be checked".into(),
            envelope: None,
        }),
    }
}

/// Computes the reference point for `oracle`; `reference: none` and file
/// references fall back to the automatic choice.
pub fn oracle(cfg: &ExperimentConfig) -> Result<PrimalDualPoint> {
    let built = build_problem(&cfg.problem)?;
    let mut c = cfg.clone();
    if matches!(c.reference, ReferenceConfig::None | ReferenceConfig::File(_)) {
        c.reference = ReferenceConfig::Auto;
    }
    Ok(reference_point(&c, &built.spec)?.expect("a mode other than none"))
}
