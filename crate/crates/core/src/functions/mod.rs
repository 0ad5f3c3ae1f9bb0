//! Proximal and gradient oracles.
//!
//! Nonsmooth terms (`g_i`, `h_i`) are accessed only through their proximal
//! maps; `h_i*` is never formed, its prox comes from the Moreau identity. The
//! smooth coupling term `f` exposes block gradients together with its global
//! and per-block Lipschitz constants.

mod prox;
mod smooth;

pub use prox::{
    BoxIndicator, ElasticNet, LogisticLoss, PointIndicator, Quadratic, SeparableSum, SquaredLoss,
    SquaredNorm, Zero,
};
pub use smooth::{quadratic_coupling_smooth, CouplingTerm, FnSmooth, QuadraticSmooth, ZeroSmooth};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::block::BlockVector;
use crate::error::{Error, Result};

/// Affine description of the subdifferential, used by the exact KKT oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum AffineForm {
    /// `∇q(v) = hess·v + lin`.
    Smooth { hess: DMatrix<f64>, lin: DVector<f64> },
    /// `q = δ_{b}`.
    Point(DVector<f64>),
    /// Separable sum over consecutive coordinate ranges.
    Stacked(Vec<(usize, AffineForm)>),
}

/// A proper closed convex function accessed through its proximal map
/// `prox_{ρq}(v) = argmin_z q(z) + ‖v − z‖²/(2ρ)`.
pub trait ProxOracle: fmt::Debug + Send + Sync {
    /// Fixed input dimension, if the function carries one.
    fn dim(&self) -> Option<usize>;

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>>;

    /// Strong convexity modulus `μ ≥ 0`.
    fn modulus(&self) -> f64 {
        0.0
    }

    /// Strong convexity modulus of the conjugate, i.e. the reciprocal of the
    /// Lipschitz constant of `∇q`. Zero when `q` is not smooth.
    fn conjugate_modulus(&self) -> f64 {
        0.0
    }

    /// Function value, `+∞` outside the domain. `None` if not available.
    fn eval(&self, _v: &DVector<f64>) -> Option<f64> {
        None
    }

    fn affine_form(&self) -> Option<AffineForm> {
        None
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::config(format!("prox parameter must be positive, got {rho}")));
    }
    Ok(())
}

pub(crate) fn check_len(expected: Option<usize>, v: &DVector<f64>) -> Result<()> {
    match expected {
        Some(n) if n != v.len() => Err(Error::structural(format!(
            "prox input has length {} but the function is defined on R^{n}",
            v.len()
        ))),
        _ => Ok(()),
    }
}

/// `prox_{σh*}(v) = v − σ·prox_{h/σ}(v/σ)`.
pub fn moreau_conjugate_prox(h: &dyn ProxOracle, sigma: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("dual stepsize must be positive, got {sigma}")));
    }
    let inner = h.prox(1.0 / sigma, &(v / sigma))?;
    Ok(v - inner * sigma)
}

/// `h_i` together with the strong convexity modulus `μ_h` of `h_i*`.
#[derive(Debug, Clone)]
pub struct ConjugateProx {
    h: Arc<dyn ProxOracle>,
    mu_h: f64,
}

impl ConjugateProx {
    /// Uses the modulus reported by `h` itself.
    pub fn new(h: Arc<dyn ProxOracle>) -> Self {
        let mu_h = h.conjugate_modulus();
        Self { h, mu_h }
    }

    pub fn with_modulus(h: Arc<dyn ProxOracle>, mu_h: f64) -> Result<Self> {
        if !(mu_h >= 0.0) {
            return Err(Error::config("μ_h must be nonnegative"));
        }
        Ok(Self { h, mu_h })
    }

    pub fn h(&self) -> &dyn ProxOracle {
        &*self.h
    }

    pub fn mu_h(&self) -> f64 {
        self.mu_h
    }

    pub fn prox_conjugate(&self, sigma: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        moreau_conjugate_prox(&*self.h, sigma, v)
    }
}

/// The smooth coupling term `f`.
pub trait SmoothOracle: fmt::Debug + Send + Sync {
    fn eval(&self, x: &BlockVector) -> f64;

    /// `∇_i f(x)`.
    fn grad_block(&self, i: usize, x: &BlockVector) -> DVector<f64>;

    fn grad(&self, x: &BlockVector) -> BlockVector {
        BlockVector::from_blocks((0..x.num_blocks()).map(|i| self.grad_block(i, x)).collect())
    }

    /// Lipschitz constant `β` of `∇f`.
    fn beta(&self) -> f64;

    /// Per-block coupling constants `β̄_i`.
    fn beta_bar(&self) -> &[f64];

    /// For each agent, the blocks that `∇_i f` reads (may include `i`).
    fn dependencies(&self) -> Vec<Vec<usize>>;

    /// `(H, c)` with `f(x) = ½xᵀHx + cᵀx + const`, when `f` is quadratic.
    fn quadratic(&self) -> Option<(&crate::block::BlockLinearMap, &BlockVector)> {
        None
    }
}
