//! Solution certification: KKT residuals, reference solutions, quasi-Fejér
//! excess tracking and linear-rate envelope checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block::{operator_norm_upper, BlockVector, MetricKind, NormOptions, PrimalDualPoint};
use crate::error::{Error, Result};
use crate::functions::AffineForm;
use crate::problem::ProblemSpec;
use crate::solvers::IterateLog;
use crate::tuning::RateCertificate;

/// Probe stepsizes of the prox fixed-point residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSteps {
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for ProbeSteps {
    fn default() -> Self {
        Self { gamma: 1.0, sigma: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖x − prox_{γ̄g}(x − γ̄(∇f(x) + Lᵀu))‖`.
    pub primal: f64,
    /// `‖u − prox_{σ̄h*}(u + σ̄Lx)‖`.
    pub dual: f64,
    pub combined: f64,
    pub probe: ProbeSteps,
}

/// Zero exactly at primal-dual solutions, for any positive probe stepsizes.
pub fn kkt_residual(problem: &ProblemSpec, z: &PrimalDualPoint, probe: ProbeSteps) -> Result<KktReport> {
    if !(probe.gamma > 0.0 && probe.sigma > 0.0) {
        return Err(Error::config("probe stepsizes must be positive"));
    }
    if !z.conforms(problem.dims()) {
        return Err(Error::structural("point does not match the problem dimensions"));
    }
    let l = problem.l();
    let grad = problem.f().grad(&z.x);
    let ltu = l.apply_adjoint(&z.u)?;
    let lx = l.apply(&z.x)?;
    let (mut p, mut d) = (0.0, 0.0);
    for i in 0..problem.m() {
        let xi = z.x.block(i);
        let arg = xi - (grad.block(i) + ltu.block(i)) * probe.gamma;
        p += (xi - problem.g(i).prox(probe.gamma, &arg)?).norm_squared();
        let ui = z.u.block(i);
        let arg = ui + lx.block(i) * probe.sigma;
        d += (ui - problem.h(i).prox_conjugate(probe.sigma, &arg)?).norm_squared();
    }
    Ok(KktReport {
        primal: p.sqrt(),
        dual: d.sqrt(),
        combined: (p + d).sqrt(),
        probe,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Direct solve of the KKT linear system; needs quadratic `f`, `g_i` and
    /// quadratic or point-indicator `h_i`.
    ExactQuadratic,
    /// Synchronous Vũ–Condat until the KKT residual is tiny.
    SynchronousPolish,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolishOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Residual evaluation period.
    pub check_every: usize,
}

impl Default for PolishOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 1_000_000,
            check_every: 10,
        }
    }
}

pub fn reference_solution(problem: &ProblemSpec, mode: ReferenceMode) -> Result<PrimalDualPoint> {
    match mode {
        ReferenceMode::ExactQuadratic => exact_quadratic(problem),
        ReferenceMode::SynchronousPolish => synchronous_polish(problem, PrimalDualPoint::zeros(problem.dims()), PolishOptions::default()),
    }
}

fn not_affine(what: &str) -> Error {
    Error::Inapplicable(format!("exact reference solve needs {what}"))
}

/// Appends the optimality rows of `h` for the dual rows starting at `row0`.
fn dual_rows(
    form: &AffineForm,
    row0: usize,
    n: usize,
    l_dense: &DMatrix<f64>,
    kkt: &mut DMatrix<f64>,
    rhs: &mut DVector<f64>,
) -> Result<usize> {
    match form {
        AffineForm::Smooth { hess, lin } => {
            // u = ∇h(y) = A y + a with y = L_s x
            let r = lin.len();
            let lrows = l_dense.rows(row0, r);
            let coupling = -(hess * lrows);
            kkt.view_mut((n + row0, 0), (r, n)).copy_from(&coupling);
            for t in 0..r {
                kkt[(n + row0 + t, n + row0 + t)] = 1.0;
            }
            rhs.rows_mut(n + row0, r).copy_from(lin);
            Ok(r)
        }
        AffineForm::Point(b) => {
            let r = b.len();
            kkt.view_mut((n + row0, 0), (r, n)).copy_from(&l_dense.rows(row0, r));
            rhs.rows_mut(n + row0, r).copy_from(b);
            Ok(r)
        }
        AffineForm::Stacked(parts) => {
            let mut off = 0;
            for (len, part) in parts {
                let used = dual_rows(part, row0 + off, n, l_dense, kkt, rhs)?;
                if used != *len {
                    return Err(Error::structural("stacked affine form has inconsistent lengths"));
                }
                off += len;
            }
            Ok(off)
        }
    }
}

fn exact_quadratic(problem: &ProblemSpec) -> Result<PrimalDualPoint> {
    let dims = problem.dims();
    let (n, r) = (dims.n(), dims.r());
    let (hess, lin) = problem
        .f()
        .quadratic()
        .ok_or_else(|| not_affine("a quadratic f"))?;
    let l_dense = problem.l().to_dense();
    let mut kkt = DMatrix::zeros(n + r, n + r);
    let mut rhs = DVector::zeros(n + r);
    kkt.view_mut((0, 0), (n, n)).copy_from(&hess.to_dense());
    kkt.view_mut((0, n), (n, r)).copy_from(&l_dense.transpose());
    rhs.rows_mut(0, n).copy_from(&(-lin.to_flat()));
    let mut off = 0;
    for i in 0..problem.m() {
        let ni = dims.primal()[i];
        match problem.g(i).affine_form() {
            Some(AffineForm::Smooth { hess, lin }) => {
                let mut blk = kkt.view_mut((off, off), (ni, ni));
                blk += &hess;
                let mut seg = rhs.rows_mut(off, ni);
                seg -= &lin;
            }
            _ => return Err(not_affine(&format!("a quadratic g_{i}"))),
        }
        off += ni;
    }
    let mut row = 0;
    for i in 0..problem.m() {
        let form = problem
            .h(i)
            .h()
            .affine_form()
            .ok_or_else(|| not_affine(&format!("a quadratic or point-indicator h_{i}")))?;
        let used = dual_rows(&form, row, n, &l_dense, &mut kkt, &mut rhs)?;
        if used != dims.dual()[i] {
            return Err(Error::structural(format!("affine form of h_{i} has the wrong length")));
        }
        row += used;
    }
    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => kkt
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Numerical(format!("KKT system solve failed: {e}")))?,
    };
    let resid = (&kkt * &sol - &rhs).amax();
    if !(resid <= 1e-8 * (1.0 + rhs.amax())) {
        return Err(Error::Numerical(format!("KKT system is inconsistent (residual {resid:e})")));
    }
    PrimalDualPoint::from_flat(dims, &sol)
}

/// Synchronous Vũ–Condat with global stepsizes `σ = 1/‖L‖`,
/// `γ = 0.99/(σ‖L‖² + β)`, started at `z0`.
pub fn synchronous_polish(problem: &ProblemSpec, z0: PrimalDualPoint, opts: PolishOptions) -> Result<PrimalDualPoint> {
    let l = problem.l();
    let norm_l = operator_norm_upper(&l.to_dense(), NormOptions::default())?;
    let sigma = if norm_l > 0.0 { 1.0 / norm_l } else { 1.0 };
    let denom = sigma * norm_l * norm_l + problem.f().beta();
    let gamma = if denom > 0.0 { 0.99 / denom } else { 1.0 };
    let mut z = z0;
    for k in 0..opts.max_iters {
        if k % opts.check_every.max(1) == 0 && kkt_residual(problem, &z, ProbeSteps::default())?.combined <= opts.tol {
            return Ok(z);
        }
        let grad = problem.f().grad(&z.x);
        let ltu = l.apply_adjoint(&z.u)?;
        let mut x = z.x.clone();
        for i in 0..problem.m() {
            let arg = z.x.block(i) - (grad.block(i) + ltu.block(i)) * gamma;
            x.set_block(i, problem.g(i).prox(gamma, &arg)?)?;
        }
        let ext = x.scale(2.0).sub(&z.x);
        let lext = l.apply(&ext)?;
        let mut u = z.u.clone();
        for i in 0..problem.m() {
            let arg = z.u.block(i) + lext.block(i) * sigma;
            u.set_block(i, problem.h(i).prox_conjugate(sigma, &arg)?)?;
        }
        z = PrimalDualPoint { x, u };
        if !z.is_finite() {
            return Err(Error::Numerical(format!("reference iteration diverged at {k}")));
        }
    }
    let res = kkt_residual(problem, &z, ProbeSteps::default())?.combined;
    if res <= opts.tol {
        return Ok(z);
    }
    Err(Error::Numerical(format!(
        "reference iteration stalled at KKT residual {res:e} after {} iterations",
        opts.max_iters
    )))
}

/// Which distance column of a log to analyse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceColumn {
    P,
    D,
    M,
}

impl DistanceColumn {
    fn of(self, r: &crate::solvers::IterateRecord) -> Option<f64> {
        match self {
            DistanceColumn::P => r.dist_p_sq,
            DistanceColumn::D => r.dist_d_sq,
            DistanceColumn::M => r.dist_m_sq,
        }
    }
}

/// Extracts a squared-distance column; errors if it was not recorded.
pub fn distances(log: &IterateLog, column: DistanceColumn) -> Result<Vec<f64>> {
    log.records
        .iter()
        .map(|r| {
            column
                .of(r)
                .ok_or_else(|| Error::config(format!("log has no {column:?} distances (no reference point)")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FejerReport {
    /// `ε^k = [d^{k+1} − d^k]₊`.
    pub excess: Vec<f64>,
    pub total: f64,
    /// `Σ_{j ≥ k} ε^j` for every `k`.
    pub tails: Vec<f64>,
    pub initial: f64,
}

impl FejerReport {
    /// Remaining excess after `k`.
    pub fn tail_from(&self, k: usize) -> f64 {
        self.tails.get(k).copied().unwrap_or(0.0)
    }
}

/// Quasi-Fejér excess of a sequence of squared distances.
pub fn fejer_excess(dist_sq: &[f64]) -> FejerReport {
    let excess: Vec<f64> = dist_sq.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    let mut tails = vec![0.0; excess.len() + 1];
    for k in (0..excess.len()).rev() {
        tails[k] = tails[k + 1] + excess[k];
    }
    FejerReport {
        total: tails[0],
        excess,
        tails,
        initial: dist_sq.first().copied().unwrap_or(0.0),
    }
}

pub fn fejer_track(log: &IterateLog, column: DistanceColumn) -> Result<FejerReport> {
    Ok(fejer_excess(&distances(log, column)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub k: usize,
    pub measured: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub points: Vec<EnvelopePoint>,
    pub holds: bool,
    pub first_violation: Option<usize>,
    pub tol: f64,
}

/// Compares `measured[k]` with `factor^k · measured[0]` at `checkpoints`
/// (every `k` when `None`). Holds iff every ratio is at most `1 + tol`.
pub fn envelope_check(
    measured: &[f64],
    cert: &RateCertificate,
    checkpoints: Option<&[usize]>,
    tol: f64,
) -> Result<EnvelopeReport> {
    let d0 = *measured
        .first()
        .ok_or_else(|| Error::config("envelope check needs at least the initial distance"))?;
    let ks: Vec<usize> = match checkpoints {
        Some(c) => c.iter().copied().filter(|&k| k < measured.len()).collect(),
        None => (0..measured.len()).collect(),
    };
    let mut points = Vec::with_capacity(ks.len());
    let mut first_violation = None;
    for k in ks {
        let bound = cert.envelope(k) * d0;
        let ratio = if k == 0 {
            1.0
        } else if bound > 0.0 {
            measured[k] / bound
        } else if measured[k] == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if !(ratio <= 1.0 + tol) && first_violation.is_none() {
            first_violation = Some(k);
        }
        points.push(EnvelopePoint {
            k,
            measured: measured[k],
            bound,
            ratio,
        });
    }
    Ok(EnvelopeReport {
        holds: first_violation.is_none(),
        points,
        first_violation,
        tol,
    })
}

fn column_for(cert: &RateCertificate, column: DistanceColumn) -> Result<()> {
    let ok = matches!(
        (cert.metric, column),
        (MetricKind::D, DistanceColumn::D) | (MetricKind::M, DistanceColumn::M)
    );
    if !ok {
        return Err(Error::config(format!(
            "certificate is stated in the {:?} metric but {column:?} distances were supplied",
            cert.metric
        )));
    }
    Ok(())
}

/// Envelope check of a single run; the metric must match the certificate.
pub fn envelope_check_log(
    log: &IterateLog,
    cert: &RateCertificate,
    column: DistanceColumn,
    tol: f64,
) -> Result<EnvelopeReport> {
    column_for(cert, column)?;
    envelope_check(&distances(log, column)?, cert, None, tol)
}

/// Ensemble mean of a distance column over runs of equal length.
pub fn ensemble_mean(logs: &[IterateLog], column: DistanceColumn) -> Result<Vec<f64>> {
    let first = logs.first().ok_or_else(|| Error::config("empty ensemble"))?;
    let len = first.records.len();
    let mut mean = vec![0.0; len];
    for log in logs {
        let d = distances(log, column)?;
        if d.len() != len {
            return Err(Error::structural("ensemble runs have different lengths"));
        }
        for (acc, v) in mean.iter_mut().zip(d) {
            *acc += v;
        }
    }
    let count = logs.len() as f64;
    Ok(mean.into_iter().map(|v| v / count).collect())
}

/// Envelope check of an ensemble mean at the given checkpoints.
pub fn envelope_check_ensemble(
    logs: &[IterateLog],
    cert: &RateCertificate,
    column: DistanceColumn,
    checkpoints: &[usize],
    slack: f64,
) -> Result<EnvelopeReport> {
    column_for(cert, column)?;
    envelope_check(&ensemble_mean(logs, column)?, cert, Some(checkpoints), slack)
}

/// `‖x − x*‖` per block, useful for feasibility reporting.
pub fn block_errors(x: &BlockVector, reference: &BlockVector) -> Vec<f64> {
    x.sub(reference).blocks().iter().map(|b| b.norm()).collect()
}
