use nalgebra::{DMatrix, DVector};

use super::{check_len, check_rho, AffineForm, ProxOracle};
use crate::error::{Error, Result};

/// `q ≡ 0`.
#[derive(Debug, Clone)]
pub struct Zero {
    pub dim: usize,
}

impl ProxOracle for Zero {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        check_len(Some(self.dim), v)?;
        Ok(v.clone())
    }

    fn eval(&self, _v: &DVector<f64>) -> Option<f64> {
        Some(0.0)
    }

    fn affine_form(&self) -> Option<AffineForm> {
        Some(AffineForm::Smooth {
            hess: DMatrix::zeros(self.dim, self.dim),
            lin: DVector::zeros(self.dim),
        })
    }
}

/// `q(v) = (c/2)‖v‖²`.
#[derive(Debug, Clone)]
pub struct SquaredNorm {
    pub dim: usize,
    pub scale: f64,
}

impl SquaredNorm {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::config("squared norm scale must be nonnegative"));
        }
        Ok(Self { dim, scale })
    }
}

impl ProxOracle for SquaredNorm {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        check_len(Some(self.dim), v)?;
        Ok(v / (1.0 + rho * self.scale))
    }

    fn modulus(&self) -> f64 {
        self.scale
    }

    fn conjugate_modulus(&self) -> f64 {
        if self.scale > 0.0 {
            1.0 / self.scale
        } else {
            0.0
        }
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        Some(0.5 * self.scale * v.norm_squared())
    }

    fn affine_form(&self) -> Option<AffineForm> {
        Some(AffineForm::Smooth {
            hess: DMatrix::identity(self.dim, self.dim) * self.scale,
            lin: DVector::zeros(self.dim),
        })
    }
}

/// `q(v) = ½vᵀQv + cᵀv` with `Q` symmetric positive semidefinite.
///
/// The prox `(I + ρQ)⁻¹v` is evaluated through an eigendecomposition computed
/// once at construction, so any `ρ` costs two dense matvecs.
#[derive(Debug, Clone)]
pub struct Quadratic {
    q: DMatrix<f64>,
    lin: DVector<f64>,
    repr: QuadRepr,
    min_eig: f64,
    max_eig: f64,
}

#[derive(Debug, Clone)]
enum QuadRepr {
    Diagonal(DVector<f64>),
    Eigen { vectors: DMatrix<f64>, values: DVector<f64> },
}

impl Quadratic {
    pub fn diagonal(q: DVector<f64>) -> Result<Self> {
        if let Some(j) = q.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::config(format!("diagonal entry {j} of Q is {}", q[j])));
        }
        let min_eig = q.min();
        let max_eig = q.max();
        Ok(Self {
            lin: DVector::zeros(q.len()),
            q: DMatrix::from_diagonal(&q),
            repr: QuadRepr::Diagonal(q),
            min_eig,
            max_eig,
        })
    }

    pub fn dense(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::structural("Q must be square"));
        }
        let scale = q.amax().max(1.0);
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::config(format!("Q is not symmetric (max asymmetry {asym:e})")));
        }
        let sym = (&q + q.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig < -1e-12 * scale {
            return Err(Error::config(format!("Q is not positive semidefinite (λ_min = {min_eig:e})")));
        }
        let min_eig = min_eig.max(0.0);
        let max_eig = eig.eigenvalues.max();
        Ok(Self {
            lin: DVector::zeros(sym.nrows()),
            q: sym,
            repr: QuadRepr::Eigen {
                vectors: eig.eigenvectors,
                values: eig.eigenvalues.map(|v| v.max(0.0)),
            },
            min_eig,
            max_eig,
        })
    }

    /// Sets the linear term `c`.
    pub fn with_linear(mut self, lin: DVector<f64>) -> Result<Self> {
        if lin.len() != self.q.nrows() {
            return Err(Error::structural("linear term has the wrong length"));
        }
        self.lin = lin;
        Ok(self)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.lin
    }
}

impl ProxOracle for Quadratic {
    fn dim(&self) -> Option<usize> {
        Some(self.q.nrows())
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        check_len(self.dim(), v)?;
        let v = v - &self.lin * rho;
        Ok(match &self.repr {
            QuadRepr::Diagonal(d) => v.zip_map(d, |vj, qj| vj / (1.0 + rho * qj)),
            QuadRepr::Eigen { vectors, values } => {
                let coeff = vectors.tr_mul(&v).zip_map(values, |c, l| c / (1.0 + rho * l));
                vectors * coeff
            }
        })
    }

    fn modulus(&self) -> f64 {
        self.min_eig
    }

    fn conjugate_modulus(&self) -> f64 {
        if self.max_eig > 0.0 {
            1.0 / self.max_eig
        } else {
            0.0
        }
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        Some(0.5 * v.dot(&(&self.q * v)) + self.lin.dot(v))
    }

    fn affine_form(&self) -> Option<AffineForm> {
        Some(AffineForm::Smooth {
            hess: self.q.clone(),
            lin: self.lin.clone(),
        })
    }
}

/// Indicator of the box `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct BoxIndicator {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl BoxIndicator {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::structural("box bounds have different lengths"));
        }
        if let Some(j) = (0..lo.len()).find(|&j| lo[j] > hi[j] || lo[j].is_nan() || hi[j].is_nan()) {
            return Err(Error::config(format!(
                "box coordinate {j} has lo = {} > hi = {}",
                lo[j], hi[j]
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(Some(self.lo.len()), v)?;
        Ok(DVector::from_fn(v.len(), |j, _| v[j].clamp(self.lo[j], self.hi[j])))
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.lo.len()
            && (0..v.len()).all(|j| v[j] >= self.lo[j] - tol && v[j] <= self.hi[j] + tol)
    }
}

impl ProxOracle for BoxIndicator {
    fn dim(&self) -> Option<usize> {
        Some(self.lo.len())
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        self.project(v)
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        Some(if self.contains(v, 0.0) { 0.0 } else { f64::INFINITY })
    }
}

/// Indicator of the single point `b`.
#[derive(Debug, Clone)]
pub struct PointIndicator {
    b: DVector<f64>,
}

impl PointIndicator {
    pub fn new(b: DVector<f64>) -> Self {
        Self { b }
    }

    pub fn point(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(Some(self.b.len()), v)?;
        Ok(self.b.clone())
    }
}

impl ProxOracle for PointIndicator {
    fn dim(&self) -> Option<usize> {
        Some(self.b.len())
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        self.project(v)
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        Some(if *v == self.b { 0.0 } else { f64::INFINITY })
    }

    fn affine_form(&self) -> Option<AffineForm> {
        Some(AffineForm::Point(self.b.clone()))
    }
}

/// `q(v) = Σ_j log(1 + exp(−y_j v_j))` with labels `y_j ∈ {−1, +1}`.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    labels: DVector<f64>,
}

/// Curvature bound of the logistic loss: `∇q` is 1/4-Lipschitz per coordinate.
pub const LOGISTIC_CONJUGATE_MODULUS: f64 = 4.0;

const LOGISTIC_MAX_NEWTON: usize = 100;

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + e^{−t})` without overflow.
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticLoss {
    pub fn new(labels: DVector<f64>) -> Result<Self> {
        if let Some(j) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::config(format!("label {j} is {} (must be ±1)", labels[j])));
        }
        Ok(Self { labels })
    }

    /// Solves `w − ρ·y·s(−y·w) = v` for one coordinate, `s` the logistic
    /// sigmoid. The root lies in `[v − ρ, v + ρ]`; Newton steps that leave the
    /// current bracket, or fail to halve the residual, are replaced by
    /// bisection.
    fn prox_scalar(y: f64, rho: f64, v: f64) -> Result<f64> {
        let residual = |w: f64| w - v - rho * y * logistic(-y * w);
        let tol = 1e-12 * v.abs().max(1.0);
        let (mut lo, mut hi) = (v - rho, v + rho);
        let mut w = v;
        let mut last = f64::INFINITY;
        for _ in 0..LOGISTIC_MAX_NEWTON {
            let r = residual(w);
            if r.abs() <= tol {
                return Ok(w);
            }
            if r > 0.0 {
                hi = w;
            } else {
                lo = w;
            }
            let s = logistic(-y * w);
            let slope = 1.0 + rho * s * (1.0 - s);
            let newton = w - r / slope;
            // large ρ makes Newton ping-pong across the inflection point
            w = if newton > lo && newton < hi && r.abs() <= 0.5 * last {
                newton
            } else {
                0.5 * (lo + hi)
            };
            last = r.abs();
            if hi - lo <= f64::EPSILON * w.abs().max(1.0) {
                return Ok(w);
            }
        }
        let r = residual(w);
        if r.abs() <= tol {
            Ok(w)
        } else {
            Err(Error::Numerical(format!(
                "logistic prox did not converge (v = {v}, ρ = {rho}, residual {r:e})"
            )))
        }
    }
}

impl ProxOracle for LogisticLoss {
    fn dim(&self) -> Option<usize> {
        Some(self.labels.len())
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        check_len(self.dim(), v)?;
        let mut out = DVector::zeros(v.len());
        for j in 0..v.len() {
            out[j] = Self::prox_scalar(self.labels[j], rho, v[j])?;
        }
        Ok(out)
    }

    fn conjugate_modulus(&self) -> f64 {
        LOGISTIC_CONJUGATE_MODULUS
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        Some(v.iter().zip(self.labels.iter()).map(|(v, y)| softplus(-y * v)).sum())
    }
}

/// `q(v) = ½‖v − d‖²`.
#[derive(Debug, Clone)]
pub struct SquaredLoss {
    targets: DVector<f64>,
}

impl SquaredLoss {
    pub fn new(targets: DVector<f64>) -> Self {
        Self { targets }
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }
}

impl ProxOracle for SquaredLoss {
    fn dim(&self) -> Option<usize> {
        Some(self.targets.len())
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        check_len(self.dim(), v)?;
        Ok((v + &self.targets * rho) / (1.0 + rho))
    }

    fn modulus(&self) -> f64 {
        1.0
    }

    fn conjugate_modulus(&self) -> f64 {
        1.0
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        Some(0.5 * (v - &self.targets).norm_squared())
    }

    fn affine_form(&self) -> Option<AffineForm> {
        let n = self.targets.len();
        Some(AffineForm::Smooth {
            hess: DMatrix::identity(n, n),
            lin: -self.targets.clone(),
        })
    }
}

/// `q(v) = λ1‖v‖₁ + λ2‖v‖²`.
#[derive(Debug, Clone)]
pub struct ElasticNet {
    pub dim: usize,
    pub l1: f64,
    pub l2: f64,
}

impl ElasticNet {
    pub fn new(dim: usize, l1: f64, l2: f64) -> Result<Self> {
        if !(l1 >= 0.0 && l1.is_finite()) {
            return Err(Error::config("elastic net λ1 must be nonnegative"));
        }
        if !(l2 >= 0.0 && l2.is_finite()) {
            return Err(Error::config("elastic net λ2 must be nonnegative"));
        }
        Ok(Self { dim, l1, l2 })
    }
}

impl ProxOracle for ElasticNet {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        check_len(Some(self.dim), v)?;
        let t = rho * self.l1;
        let shrink = 1.0 + 2.0 * rho * self.l2;
        Ok(v.map(|vj| (vj.abs() - t).max(0.0) * vj.signum() / shrink))
    }

    fn modulus(&self) -> f64 {
        2.0 * self.l2
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        Some(self.l1 * v.lp_norm(1) + self.l2 * v.norm_squared())
    }

    fn affine_form(&self) -> Option<AffineForm> {
        (self.l1 == 0.0).then(|| AffineForm::Smooth {
            hess: DMatrix::identity(self.dim, self.dim) * (2.0 * self.l2),
            lin: DVector::zeros(self.dim),
        })
    }
}

/// `q(v_1, …, v_p) = Σ_k q_k(v_k)` over consecutive coordinate ranges.
#[derive(Debug, Clone)]
pub struct SeparableSum {
    parts: Vec<std::sync::Arc<dyn ProxOracle>>,
    lens: Vec<usize>,
}

impl SeparableSum {
    pub fn new(parts: Vec<std::sync::Arc<dyn ProxOracle>>) -> Result<Self> {
        let lens = parts
            .iter()
            .enumerate()
            .map(|(k, p)| {
                p.dim()
                    .ok_or_else(|| Error::structural(format!("part {k} of a separable sum needs a fixed dimension")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { parts, lens })
    }

    fn split<'a>(&'a self, v: &'a DVector<f64>) -> impl Iterator<Item = (&'a dyn ProxOracle, DVector<f64>)> + 'a {
        let mut at = 0;
        self.parts.iter().zip(&self.lens).map(move |(p, &n)| {
            let seg = v.rows(at, n).into_owned();
            at += n;
            (&**p, seg)
        })
    }
}

impl ProxOracle for SeparableSum {
    fn dim(&self) -> Option<usize> {
        Some(self.lens.iter().sum())
    }

    fn prox(&self, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_rho(rho)?;
        check_len(self.dim(), v)?;
        let mut out = DVector::zeros(v.len());
        let mut at = 0;
        for (p, seg) in self.split(v) {
            let n = seg.len();
            out.rows_mut(at, n).copy_from(&p.prox(rho, &seg)?);
            at += n;
        }
        Ok(out)
    }

    fn modulus(&self) -> f64 {
        self.parts.iter().map(|p| p.modulus()).fold(f64::INFINITY, f64::min)
    }

    fn conjugate_modulus(&self) -> f64 {
        self.parts
            .iter()
            .map(|p| p.conjugate_modulus())
            .fold(f64::INFINITY, f64::min)
    }

    fn eval(&self, v: &DVector<f64>) -> Option<f64> {
        if v.len() != self.dim()? {
            return None;
        }
        let mut total = 0.0;
        for (p, seg) in self.split(v) {
            total += p.eval(&seg)?;
        }
        Some(total)
    }

    fn affine_form(&self) -> Option<AffineForm> {
        let parts = self
            .parts
            .iter()
            .zip(&self.lens)
            .map(|(p, &n)| p.affine_form().map(|a| (n, a)))
            .collect::<Option<Vec<_>>>()?;
        Some(AffineForm::Stacked(parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::moreau_conjugate_prox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn rvec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-s..s))
    }

    /// Minimizes a convex scalar function on [lo, hi] by ternary search.
    fn ternary(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..300 {
            let a = lo + (hi - lo) / 3.0;
            let b = hi - (hi - lo) / 3.0;
            if f(a) <= f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn conjugate_prox_of_point_indicator_is_shift() {
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let h = PointIndicator::new(b.clone());
        let v = DVector::from_vec(vec![0.3, 0.7]);
        let got = moreau_conjugate_prox(&h, 0.5, &v).unwrap();
        assert!((got - (&v - &b * 0.5)).amax() <= 1e-15);
    }

    #[test]
    fn conjugate_prox_of_half_squared_norm() {
        let h = SquaredNorm::new(3, 1.0).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, -3.0]);
        let got = moreau_conjugate_prox(&h, 0.8, &v).unwrap();
        assert!((got - &v / 1.8).amax() <= 1e-15);
    }

    #[test]
    fn moreau_identity_for_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = BoxIndicator::uniform(4, -1.0, 1.0).unwrap();
        for _ in 0..100 {
            let v = rvec(&mut rng, 4, 5.0);
            let sigma = rng.gen_range(0.1..3.0);
            let conj = moreau_conjugate_prox(&h, sigma, &v).unwrap();
            let direct = h.prox(1.0 / sigma, &(&v / sigma)).unwrap();
            assert!((conj + direct * sigma - &v).norm() <= 1e-14 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn conjugate_prox_rejects_bad_sigma() {
        let h = SquaredNorm::new(1, 1.0).unwrap();
        assert!(matches!(
            moreau_conjugate_prox(&h, 0.0, &DVector::zeros(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn quadratic_prox_cases() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mu = 2.0;
        let q = Quadratic::diagonal(DVector::from_element(3, mu)).unwrap();
        assert!((q.prox(0.3, &v).unwrap() - &v / (1.0 + 0.3 * mu)).amax() <= 1e-15);
        let zero = Quadratic::diagonal(DVector::zeros(3)).unwrap();
        assert_eq!(zero.prox(0.3, &v).unwrap(), v);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
        let dense = Quadratic::dense(spd.clone()).unwrap();
        let v = rvec(&mut rng, 3, 2.0);
        let out = dense.prox(0.7, &v).unwrap();
        let residual = (DMatrix::identity(3, 3) + spd * 0.7) * out - v;
        assert!(residual.amax() <= 1e-12);
    }

    #[test]
    fn quadratic_rejects_bad_matrices() {
        let nonsym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(Quadratic::dense(nonsym), Err(Error::Config(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(Quadratic::dense(indefinite).is_err());
    }

    #[test]
    fn projections() {
        let b = BoxIndicator::uniform(2, -1.0, 1.0).unwrap();
        let inside = DVector::from_vec(vec![0.2, -0.4]);
        assert_eq!(b.project(&inside).unwrap(), inside);
        let out = b.project(&DVector::from_vec(vec![5.0, -5.0])).unwrap();
        assert_eq!(out, DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            BoxIndicator::new(DVector::from_vec(vec![0.0, 2.0]), DVector::from_vec(vec![1.0, 1.0])),
            Err(Error::Config(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let target = DVector::from_vec(vec![3.0, 1.0, -1.0]);
        let p = PointIndicator::new(target.clone());
        for _ in 0..100 {
            assert_eq!(p.project(&rvec(&mut rng, 3, 10.0)).unwrap(), target);
        }
    }

    #[test]
    fn logistic_prox_small_rho_is_identity() {
        let l = LogisticLoss::new(DVector::from_vec(vec![1.0, -1.0, 1.0])).unwrap();
        let v = DVector::from_vec(vec![0.3, -2.0, 4.0]);
        assert!((l.prox(1e-10, &v).unwrap() - &v).amax() <= 1e-8);
    }

    #[test]
    fn logistic_prox_matches_bisection() {
        let l = LogisticLoss::new(DVector::from_element(1, 1.0)).unwrap();
        let w = l.prox(1.0, &DVector::zeros(1)).unwrap()[0];
        let oracle = bisect(|w| w - 1.0 / (1.0 + w.exp()), -1.0, 1.0);
        assert!((w - oracle).abs() <= 1e-12);
        assert!((w - 0.401_058_137_541_547).abs() <= 1e-12);
        assert!((w - 1.0 / (1.0 + w.exp())).abs() <= 1e-12);
    }

    #[test]
    fn logistic_prox_sign_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pos = LogisticLoss::new(DVector::from_element(1, 1.0)).unwrap();
        let neg = LogisticLoss::new(DVector::from_element(1, -1.0)).unwrap();
        for _ in 0..100 {
            let v = rvec(&mut rng, 1, 20.0);
            let rho = rng.gen_range(0.01..10.0);
            let a = neg.prox(rho, &v).unwrap()[0];
            let b = pos.prox(rho, &(-&v)).unwrap()[0];
            assert!((a + b).abs() <= 1e-11 * (1.0 + v[0].abs()));
        }
    }

    #[test]
    fn logistic_prox_extreme_inputs() {
        let l = LogisticLoss::new(DVector::from_vec(vec![1.0, -1.0])).unwrap();
        for &v in &[-1e6, -50.0, 0.0, 50.0, 1e6] {
            for &rho in &[1e-6, 1.0, 1e4] {
                let out = l.prox(rho, &DVector::from_element(2, v)).unwrap();
                assert!(out.iter().all(|w| w.is_finite()));
            }
        }
        assert!(LogisticLoss::new(DVector::from_vec(vec![0.5])).is_err());
    }

    #[test]
    fn squared_loss_prox() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let d = rvec(&mut rng, 4, 3.0);
        let q = SquaredLoss::new(d.clone());
        assert!((q.prox(0.9, &d).unwrap() - &d).amax() <= 1e-15);
        let far = rvec(&mut rng, 4, 100.0);
        assert!((q.prox(1e8, &far).unwrap() - &d).amax() <= 1e-6);
        for _ in 0..50 {
            let v = rvec(&mut rng, 4, 5.0);
            let rho = rng.gen_range(0.01..5.0);
            let w = q.prox(rho, &v).unwrap();
            // 0 = ∇q(w) + (w − v)/ρ
            let grad = (&w - &d) + (&w - &v) / rho;
            assert!(grad.amax() <= 1e-10);
        }
    }

    #[test]
    fn elastic_net_cases() {
        let q = ElasticNet::new(3, 0.0, 0.5).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert!((q.prox(0.4, &v).unwrap() - &v / 1.4).amax() <= 1e-15);

        let q = ElasticNet::new(3, 2.0, 0.5).unwrap();
        let small = DVector::from_vec(vec![0.5, -0.8, 0.0]);
        assert_eq!(q.prox(0.4, &small).unwrap(), DVector::zeros(3));

        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..100 {
            let l1 = rng.gen_range(0.0..2.0);
            let l2 = rng.gen_range(0.01..2.0);
            let rho = rng.gen_range(0.05..3.0);
            let q = ElasticNet::new(1, l1, l2).unwrap();
            let v = rng.gen_range(-5.0..5.0);
            let got = q.prox(rho, &DVector::from_element(1, v)).unwrap()[0];
            let obj = |w: f64| l1 * w.abs() + l2 * w * w + (w - v).powi(2) / (2.0 * rho);
            let oracle = ternary(obj, -10.0, 10.0);
            // ternary search resolves the argmin only to about sqrt(eps)
            assert!((got - oracle).abs() <= 1e-6, "{got} vs {oracle}");
            assert!(obj(got) <= obj(oracle) + 1e-14);
        }
    }

    #[test]
    fn separable_sum_splits() {
        let point = Arc::new(PointIndicator::new(DVector::from_vec(vec![1.0, 2.0])));
        let bx = Arc::new(BoxIndicator::uniform(2, -1.0, 1.0).unwrap());
        let s = SeparableSum::new(vec![point, bx]).unwrap();
        let out = s.prox(1.0, &DVector::from_vec(vec![9.0, 9.0, 0.5, -3.0])).unwrap();
        assert_eq!(out, DVector::from_vec(vec![1.0, 2.0, 0.5, -1.0]));
        assert_eq!(s.conjugate_modulus(), 0.0);
        assert!(s.affine_form().is_none());
    }
}
