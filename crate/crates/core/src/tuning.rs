//! Stepsize rules and linear-rate certificates.
//!
//! Bounds in the theory are strict; plans use a multiplicative `margin < 1`
//! of the bound. Every plan can be rechecked against its rule with
//! [`recheck`].

use serde::{Deserialize, Serialize};

use crate::block::MetricKind;
use crate::error::{Error, Result};
use crate::problem::ProblemConstants;

pub const DEFAULT_MARGIN: f64 = 0.99;

/// Relative tolerance of the randomized-rate bisection.
pub const RATE_BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Provenance {
    /// Block-diagonal `L`, delayed Vũ–Condat.
    Partial,
    /// General `L`, delayed AHU.
    Total,
    /// General `L`, randomized AHU.
    Random,
    /// Linear rate `1/(1+c)` in the `D` metric.
    RateDeterministic { c: f64 },
    /// Linear rate `1−c` in expectation, `M` metric.
    RateRandom { c: f64 },
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizePlan {
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
    pub provenance: Provenance,
    pub margin: f64,
}

impl StepsizePlan {
    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    /// User-supplied stepsizes; only positivity is checked.
    pub fn manual(gamma: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let plan = Self {
            gamma,
            sigma,
            provenance: Provenance::Manual,
            margin: 1.0,
        };
        plan.check_positive()?;
        Ok(plan)
    }

    fn check_positive(&self) -> Result<()> {
        if self.gamma.len() != self.sigma.len() {
            return Err(Error::structural("γ and σ must have one entry per agent"));
        }
        for (i, (&g, &s)) in self.gamma.iter().zip(&self.sigma).enumerate() {
            if !(g > 0.0 && g.is_finite() && s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!(
                    "stepsizes of agent {i} must be positive and finite (γ = {g}, σ = {s})"
                )));
            }
        }
        Ok(())
    }
}

/// Constants behind a rate certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateDetail {
    Deterministic { c2: f64, c_max: f64 },
    Random { delta1: f64, delta2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub c: f64,
    /// Per-iteration contraction of the squared distance.
    pub factor: f64,
    pub metric: MetricKind,
    pub detail: RateDetail,
}

impl RateCertificate {
    /// `factor^k`.
    pub fn envelope(&self, k: usize) -> f64 {
        self.factor.powi(k as i32)
    }
}

fn check_margin(margin: f64) -> Result<()> {
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(Error::config(format!("margin must lie in (0, 1], got {margin}")));
    }
    Ok(())
}

fn check_len(name: &str, v: &[f64], m: usize) -> Result<()> {
    if v.len() != m {
        return Err(Error::structural(format!("{name} has {} entries, expected {m}", v.len())));
    }
    Ok(())
}

fn check_probs(p: &[f64], m: usize) -> Result<()> {
    check_len("activation probabilities", p, m)?;
    for (i, &pi) in p.iter().enumerate() {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::config(format!("activation probability of agent {i} must lie in (0, 1], got {pi}")));
        }
    }
    Ok(())
}

fn require_smooth_h(k: &ProblemConstants) -> Result<()> {
    let bad = k.nonsmooth_agents();
    if bad.is_empty() {
        return Ok(());
    }
    Err(Error::Inapplicable(format!(
        "h_i not smooth for agents {bad:?}: total-coupling theory requires μ_h^i > 0 (h_i continuously differentiable)"
    )))
}

fn from_bound(bound: f64, margin: f64, what: &str, i: usize) -> Result<f64> {
    if !bound.is_finite() {
        return Err(Error::config(format!(
            "unbounded stepsize {what} for agent {i}, supply manual γ and σ"
        )));
    }
    Ok(margin * bound)
}

/// Dual stepsizes `σ_i = 1/‖L_ii‖` (or 1 when `L_ii = 0`).
pub fn default_dual_steps(k: &ProblemConstants) -> Vec<f64> {
    k.norm_l_diag
        .iter()
        .map(|&n| if n > 0.0 { 1.0 / n } else { 1.0 })
        .collect()
}

/// Strict upper bound on `γ_i` for partial coupling.
pub fn partial_gamma_bound(sigma_i: f64, norm_lii: f64, beta: f64, beta_bar_weighted: f64, b: usize) -> f64 {
    let b = b as f64;
    1.0 / (sigma_i * norm_lii * norm_lii + beta + 0.5 * b * b * beta_bar_weighted)
}

/// Strict upper bounds `(σ, γ)` for total coupling.
pub fn total_bounds(k: &ProblemConstants, b: usize) -> (f64, f64) {
    let b1 = (b + 1) as f64;
    let b = b as f64;
    let sigma = 1.0 / (k.c_s * b1 * b1);
    let gamma = 1.0 / (k.beta + 0.5 * k.r_s * b1 * b1 + b * b * k.beta_bar_weighted);
    (sigma, gamma)
}

/// Strict upper bounds `(σ_i, γ_i)` for randomized activation with probability `p_i`.
pub fn random_bounds(k: &ProblemConstants, b: usize, p_i: f64) -> (f64, f64) {
    let t = (b * b) as f64 * p_i;
    let sigma = 1.0 / (2.0 * k.c_s * (t + 1.0));
    let gamma = 1.0 / (k.beta + k.r_s * (t + 1.0) + k.beta_bar_weighted * t);
    (sigma, gamma)
}

pub fn stepsizes_partial(k: &ProblemConstants, sigma: &[f64], b: usize, margin: f64) -> Result<StepsizePlan> {
    check_margin(margin)?;
    let m = k.m();
    check_len("σ", sigma, m)?;
    let mut gamma = Vec::with_capacity(m);
    for i in 0..m {
        if !(sigma[i] > 0.0 && sigma[i].is_finite()) {
            return Err(Error::config(format!("σ of agent {i} must be positive, got {}", sigma[i])));
        }
        let bound = partial_gamma_bound(sigma[i], k.norm_l_diag[i], k.beta, k.beta_bar_weighted, b);
        gamma.push(from_bound(bound, margin, "γ", i)?);
    }
    Ok(StepsizePlan {
        gamma,
        sigma: sigma.to_vec(),
        provenance: Provenance::Partial,
        margin,
    })
}

pub fn stepsizes_total(k: &ProblemConstants, b: usize, margin: f64) -> Result<StepsizePlan> {
    check_margin(margin)?;
    require_smooth_h(k)?;
    let (sb, gb) = total_bounds(k, b);
    let m = k.m();
    let sigma = from_bound(sb, margin, "σ", 0)?;
    let gamma = from_bound(gb, margin, "γ", 0)?;
    Ok(StepsizePlan {
        gamma: vec![gamma; m],
        sigma: vec![sigma; m],
        provenance: Provenance::Total,
        margin,
    })
}

pub fn stepsizes_random(k: &ProblemConstants, b: usize, p: &[f64], margin: f64) -> Result<StepsizePlan> {
    check_margin(margin)?;
    require_smooth_h(k)?;
    let m = k.m();
    check_probs(p, m)?;
    let mut gamma = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    for (i, &pi) in p.iter().enumerate() {
        let (sb, gb) = random_bounds(k, b, pi);
        sigma.push(from_bound(sb, margin, "σ", i)?);
        gamma.push(from_bound(gb, margin, "γ", i)?);
    }
    Ok(StepsizePlan {
        gamma,
        sigma,
        provenance: Provenance::Random,
        margin,
    })
}

/// `c₂` of the deterministic linear-rate condition.
pub fn deterministic_c2(k: &ProblemConstants, b: usize) -> f64 {
    let bf = b as f64;
    let first = k.mu_g_min() / (2.0 * bf * k.beta_bar_weighted + k.r_s * (bf + 1.0) + k.beta);
    let second = k.mu_h_min() / (2.0 * k.c_s * (bf + 1.0));
    first.min(second)
}

/// Largest admissible `c` for the deterministic rate, `(1+c₂)^{1/(B+1)} − 1`.
pub fn deterministic_c_max(c2: f64, b: usize) -> f64 {
    (c2.ln_1p() / (b + 1) as f64).exp_m1()
}

/// `γ_i = c/μ_g^i`, `σ_i = c/μ_h^i` with `c = margin · c_max`; rate `1/(1+c)` in `D`.
pub fn rate_constants_deterministic(
    k: &ProblemConstants,
    b: usize,
    margin: f64,
) -> Result<(RateCertificate, StepsizePlan)> {
    check_margin(margin)?;
    require_smooth_h(k)?;
    let c2 = deterministic_c2(k, b);
    if !(c2 > 0.0) {
        return Err(Error::Numerical(format!("rate constant c₂ = {c2} is not positive")));
    }
    if !c2.is_finite() {
        return Err(Error::config("rate constant c₂ is unbounded, the problem has no coupling to certify"));
    }
    let c_max = deterministic_c_max(c2, b);
    let c = margin * c_max;
    let plan = StepsizePlan {
        gamma: k.mu_g.iter().map(|mu| c / mu).collect(),
        sigma: k.mu_h.iter().map(|mu| c / mu).collect(),
        provenance: Provenance::RateDeterministic { c },
        margin,
    };
    let cert = RateCertificate {
        c,
        factor: 1.0 / (1.0 + c),
        metric: MetricKind::D,
        detail: RateDetail::Deterministic { c2, c_max },
    };
    Ok((cert, plan))
}

/// `(δ1, δ2)` of the randomized linear-rate condition at rate parameter `c`.
pub fn random_deltas(k: &ProblemConstants, b: usize, p: &[f64], c: f64) -> (f64, f64) {
    let bf = b as f64;
    let min_g = p
        .iter()
        .zip(&k.mu_g)
        .map(|(pi, mu)| (pi - c) * mu)
        .fold(f64::INFINITY, f64::min);
    let min_h = p
        .iter()
        .zip(&k.mu_h)
        .map(|(pi, mu)| (pi - c) * mu)
        .fold(f64::INFINITY, f64::min);
    let d1 = min_g / (2.0 * bf * k.beta_bar_weighted + 2.0 * bf * k.r_s + 2.0 * k.r_s + k.beta);
    let d2 = min_h / (4.0 * k.c_s * (1.0 + bf));
    (d1, d2)
}

/// `1/(1−c)^B + c ≤ 1 + min{δ1, δ2}` with `0 < c < min p`.
pub fn random_rate_feasible(k: &ProblemConstants, b: usize, p: &[f64], c: f64) -> bool {
    let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if !(c > 0.0 && c < p_min) {
        return false;
    }
    let (d1, d2) = random_deltas(k, b, p, c);
    (1.0 - c).powi(-(b as i32)) + c <= 1.0 + d1.min(d2)
}

/// Largest feasible `c` (by bisection), with `γ_i = 1/((p_i/c − 1)μ_g^i)`,
/// `σ_i = 1/((p_i/c − 1)μ_h^i)`; rate `1−c` in expectation in `M`.
pub fn rate_constants_random(
    k: &ProblemConstants,
    b: usize,
    p: &[f64],
) -> Result<(RateCertificate, StepsizePlan)> {
    require_smooth_h(k)?;
    check_probs(p, k.m())?;
    let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
    // The left side grows and the right side shrinks with c, so the feasible
    // set is an interval starting at 0.
    let cap = p_min * (1.0 - 1e-9);
    let c = if random_rate_feasible(k, b, p, cap) {
        cap
    } else {
        let mut lo = 0.0_f64;
        let mut hi = cap;
        let mut probe = cap;
        while probe > 1e-14 && !random_rate_feasible(k, b, p, probe) {
            hi = probe;
            probe *= 0.5;
        }
        if probe <= 1e-14 {
            return Err(Error::Inapplicable(
                "no feasible randomized rate parameter above 1e-14".into(),
            ));
        }
        lo = lo.max(probe);
        while hi - lo > RATE_BISECTION_TOL * lo {
            let mid = 0.5 * (lo + hi);
            if random_rate_feasible(k, b, p, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let (delta1, delta2) = random_deltas(k, b, p, c);
    let plan = StepsizePlan {
        gamma: p.iter().zip(&k.mu_g).map(|(pi, mu)| 1.0 / ((pi / c - 1.0) * mu)).collect(),
        sigma: p.iter().zip(&k.mu_h).map(|(pi, mu)| 1.0 / ((pi / c - 1.0) * mu)).collect(),
        provenance: Provenance::RateRandom { c },
        margin: 1.0,
    };
    let cert = RateCertificate {
        c,
        factor: 1.0 - c,
        metric: MetricKind::M,
        detail: RateDetail::Random { delta1, delta2 },
    };
    Ok((cert, plan))
}

/// Plugs a plan back into the inequality its provenance names.
pub fn recheck(plan: &StepsizePlan, k: &ProblemConstants, b: usize, p: Option<&[f64]>) -> Result<()> {
    plan.check_positive()?;
    let m = k.m();
    check_len("γ", &plan.gamma, m)?;
    let fail = |i: usize, what: &str, got: f64, bound: f64| {
        Err(Error::config(format!(
            "agent {i}: {what} = {got} violates the bound {bound}"
        )))
    };
    match plan.provenance {
        Provenance::Manual => Ok(()),
        Provenance::Partial => {
            for i in 0..m {
                let gb = partial_gamma_bound(plan.sigma[i], k.norm_l_diag[i], k.beta, k.beta_bar_weighted, b);
                if !(plan.gamma[i] < gb) {
                    return fail(i, "γ", plan.gamma[i], gb);
                }
            }
            Ok(())
        }
        Provenance::Total => {
            let (sb, gb) = total_bounds(k, b);
            for i in 0..m {
                if !(plan.sigma[i] < sb) {
                    return fail(i, "σ", plan.sigma[i], sb);
                }
                if !(plan.gamma[i] < gb) {
                    return fail(i, "γ", plan.gamma[i], gb);
                }
            }
            Ok(())
        }
        Provenance::Random => {
            let p = p.ok_or_else(|| Error::config("activation probabilities required"))?;
            check_probs(p, m)?;
            for i in 0..m {
                let (sb, gb) = random_bounds(k, b, p[i]);
                if !(plan.sigma[i] < sb) {
                    return fail(i, "σ", plan.sigma[i], sb);
                }
                if !(plan.gamma[i] < gb) {
                    return fail(i, "γ", plan.gamma[i], gb);
                }
            }
            Ok(())
        }
        Provenance::RateDeterministic { c } => {
            let c_max = deterministic_c_max(deterministic_c2(k, b), b);
            if !(c > 0.0 && c <= c_max) {
                return fail(0, "c", c, c_max);
            }
            Ok(())
        }
        Provenance::RateRandom { c } => {
            let p = p.ok_or_else(|| Error::config("activation probabilities required"))?;
            if !random_rate_feasible(k, b, p, c) {
                return Err(Error::config(format!("c = {c} violates the randomized rate condition")));
            }
            Ok(())
        }
    }
}
