//! Dual subgradient baseline for problems with local quadratic costs, affine
//! equalities `E_i w_i = b_i` and box constraints.
//!
//! Each iteration every agent minimizes its local Lagrangian over its box,
//! with the neighbor blocks of the quadratic coupling read through the delay
//! schedule, then takes a subgradient step `α/√(k+1)` on its multiplier.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::block::{BlockLinearMap, BlockVector};
use crate::delay::DelaySchedule;
use crate::error::{Error, Result, Side};
use crate::functions::AffineForm;
use crate::problem::ProblemSpec;

use super::IterateRecord;

/// Local data of the baseline, extracted from a [`ProblemSpec`].
#[derive(Debug, Clone)]
pub struct DecomposedProblem {
    q: Vec<DMatrix<f64>>,
    q_lin: Vec<DVector<f64>>,
    e: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    lower: Vec<DVector<f64>>,
    upper: Vec<DVector<f64>>,
    hess: BlockLinearMap,
    lin: BlockVector,
}

impl DecomposedProblem {
    /// `g_i` must be quadratic and `f` must be quadratic; the equalities and
    /// boxes are supplied explicitly.
    pub fn new(
        spec: &ProblemSpec,
        e: Vec<DMatrix<f64>>,
        b: Vec<DVector<f64>>,
        lower: Vec<DVector<f64>>,
        upper: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let m = spec.m();
        if e.len() != m || b.len() != m || lower.len() != m || upper.len() != m {
            return Err(Error::structural("one E_i, b_i and box per agent required"));
        }
        let (hess, lin) = spec
            .f()
            .quadratic()
            .ok_or_else(|| Error::Inapplicable("dual decomposition needs a quadratic coupling term".into()))?;
        let mut q = Vec::with_capacity(m);
        let mut q_lin = Vec::with_capacity(m);
        for i in 0..m {
            let n = spec.dims().primal()[i];
            match spec.g(i).affine_form() {
                Some(AffineForm::Smooth { hess, lin }) => {
                    q.push(hess);
                    q_lin.push(lin);
                }
                _ => {
                    return Err(Error::Inapplicable(format!(
                        "dual decomposition needs a quadratic local cost, g_{i} is not"
                    )))
                }
            }
            if e[i].ncols() != n || e[i].nrows() != b[i].len() || lower[i].len() != n || upper[i].len() != n {
                return Err(Error::structural(format!("constraint data of agent {i} has wrong shape")));
            }
            if lower[i].iter().zip(upper[i].iter()).any(|(lo, hi)| lo > hi) {
                return Err(Error::config(format!("empty box for agent {i}")));
            }
        }
        Ok(Self {
            q,
            q_lin,
            e,
            b,
            lower,
            upper,
            hess: hess.clone(),
            lin: lin.clone(),
        })
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    /// `‖E_i w_i − b_i‖` stacked over agents.
    pub fn constraint_residual(&self, w: &BlockVector) -> f64 {
        (0..self.m())
            .map(|i| (&self.e[i] * w.block(i) - &self.b[i]).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct DualDecompositionConfig {
    /// Base subgradient stepsize.
    pub alpha: f64,
    pub max_iters: usize,
    pub schedule: DelaySchedule,
    /// Enables the distance column.
    pub reference: Option<BlockVector>,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl DualDecompositionConfig {
    pub fn new(alpha: f64, max_iters: usize, schedule: DelaySchedule) -> Self {
        Self {
            alpha,
            max_iters,
            schedule,
            reference: None,
            inner_tol: 1e-10,
            inner_max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualDecompositionLog {
    pub records: Vec<IterateRecord>,
    pub final_primal: BlockVector,
    pub multipliers: BlockVector,
}

/// Projected Gauss–Seidel on `½wᵀAw + cᵀw` over `[lo, hi]`.
fn box_qp(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    w: &mut DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<()> {
    let n = w.len();
    for _ in 0..max_iter {
        let mut change = 0.0_f64;
        for t in 0..n {
            let att = a[(t, t)];
            let g = a.row(t).transpose().dot(w) + c[t];
            let new = (w[t] - g / att).clamp(lo[t], hi[t]);
            change = change.max((new - w[t]).abs());
            w[t] = new;
        }
        if change <= tol {
            return Ok(());
        }
    }
    Err(Error::Numerical(format!("local box QP did not reach {tol} in {max_iter} sweeps")))
}

/// Runs the baseline from primal `w0` and zero multipliers.
pub fn run_dual_decomposition(
    problem: &DecomposedProblem,
    config: &DualDecompositionConfig,
    w0: &BlockVector,
) -> Result<DualDecompositionLog> {
    if !(config.alpha > 0.0 && config.alpha.is_finite()) {
        return Err(Error::config(format!("subgradient stepsize must be positive, got {}", config.alpha)));
    }
    let m = problem.m();
    if w0.num_blocks() != m {
        return Err(Error::structural("initial point has the wrong number of blocks"));
    }
    let bound = config.schedule.bound();
    let mut history: VecDeque<BlockVector> = VecDeque::with_capacity(bound + 1);
    history.push_back(w0.clone());
    let mut nu = BlockVector::from_blocks(problem.b.iter().map(|b| DVector::zeros(b.len())).collect());
    let local_a: Vec<DMatrix<f64>> = (0..m)
        .map(|i| match problem.hess.block(i, i) {
            Some(h) => &problem.q[i] + h,
            None => problem.q[i].clone(),
        })
        .collect();
    for (i, a) in local_a.iter().enumerate() {
        if a.diagonal().iter().any(|&d| !(d > 0.0)) {
            return Err(Error::config(format!("local cost of agent {i} is not strictly convex")));
        }
    }

    let record = |k: usize, w: &BlockVector, prev: Option<&BlockVector>| IterateRecord {
        k,
        step_norm: prev.map_or(0.0, |p| w.sub(p).norm()),
        dist_p_sq: None,
        dist_d_sq: None,
        dist_m_sq: None,
        primal_dist: config.reference.as_ref().map(|r| w.sub(r).norm()),
        kkt: None,
        active: None,
        snapshot: None,
    };
    let mut records = vec![record(0, w0, None)];

    for k in 0..config.max_iters {
        let current = history.back().expect("nonempty").clone();
        let mut next = current.clone();
        for i in 0..m {
            let mut c = &problem.q_lin[i] + problem.lin.block(i) + problem.e[i].tr_mul(nu.block(i));
            for j in problem.hess.row_support(i) {
                if j == i {
                    continue;
                }
                let tau = config.schedule.tau(i, j, k, Side::Primal)?;
                let stored = &history[history.len() - 1 - (k - tau).min(history.len() - 1)];
                c += problem.hess.block(i, j).expect("supported block") * stored.block(j);
            }
            let mut w = current.block(i).clone();
            box_qp(
                &local_a[i],
                &c,
                &problem.lower[i],
                &problem.upper[i],
                &mut w,
                config.inner_tol,
                config.inner_max_iter,
            )?;
            next.set_block(i, w)?;
        }
        let step = config.alpha / ((k + 1) as f64).sqrt();
        for i in 0..m {
            let g = &problem.e[i] * next.block(i) - &problem.b[i];
            let updated = nu.block(i) + g * step;
            nu.set_block(i, updated)?;
        }
        if !next.is_finite() || !nu.is_finite() {
            return Err(Error::Divergence {
                iteration: k + 1,
                detail: "non-finite entry in the baseline iterate".into(),
            });
        }
        records.push(record(k + 1, &next, Some(&current)));
        history.push_back(next);
        while history.len() > bound + 1 {
            history.pop_front();
        }
    }
    Ok(DualDecompositionLog {
        records,
        final_primal: history.back().expect("nonempty").clone(),
        multipliers: nu,
    })
}
