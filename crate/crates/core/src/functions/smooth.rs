use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::SmoothOracle;
use crate::block::{operator_norm_upper, BlockLinearMap, BlockVector, NormOptions};
use crate::error::{Error, Result};

/// `f ≡ 0`.
#[derive(Debug, Clone)]
pub struct ZeroSmooth {
    dims: Vec<usize>,
    zeros: Vec<f64>,
    hess: BlockLinearMap,
    lin: BlockVector,
}

impl ZeroSmooth {
    pub fn new(primal_dims: &[usize]) -> Self {
        Self {
            dims: primal_dims.to_vec(),
            zeros: vec![0.0; primal_dims.len()],
            hess: BlockLinearMap::zeros_with(primal_dims.to_vec(), primal_dims.to_vec()),
            lin: BlockVector::zeros(primal_dims),
        }
    }
}

impl SmoothOracle for ZeroSmooth {
    fn eval(&self, _x: &BlockVector) -> f64 {
        0.0
    }

    fn grad_block(&self, i: usize, _x: &BlockVector) -> DVector<f64> {
        DVector::zeros(self.dims[i])
    }

    fn beta(&self) -> f64 {
        0.0
    }

    fn beta_bar(&self) -> &[f64] {
        &self.zeros
    }

    fn dependencies(&self) -> Vec<Vec<usize>> {
        vec![Vec::new(); self.dims.len()]
    }

    fn quadratic(&self) -> Option<(&BlockLinearMap, &BlockVector)> {
        Some((&self.hess, &self.lin))
    }
}

/// `f(x) = ½xᵀHx + cᵀx + κ` with `H` symmetric positive semidefinite and
/// stored with block-level sparsity.
///
/// `β = ‖H‖` and `β̄_i = ‖[H_i1 … 0 … H_im]‖` (row block `i` with its diagonal
/// block removed) are exact for a quadratic, up to the norm estimate's
/// tolerance, which is absorbed by a small upward inflation.
#[derive(Debug, Clone)]
pub struct QuadraticSmooth {
    hess: BlockLinearMap,
    lin: BlockVector,
    constant: f64,
    beta: f64,
    beta_bar: Vec<f64>,
}

impl QuadraticSmooth {
    pub fn new(hess: BlockLinearMap, lin: BlockVector, constant: f64, opts: NormOptions) -> Result<Self> {
        if hess.row_dims() != hess.col_dims() || !lin.conforms(hess.col_dims()) {
            return Err(Error::structural("Hessian blocks and linear term do not match"));
        }
        let dense = hess.to_dense();
        let scale = dense.amax().max(1.0);
        if (&dense - dense.transpose()).amax() > 1e-12 * scale {
            return Err(Error::config("Hessian of f is not symmetric"));
        }
        if dense.nrows() > 0 {
            let min_eig = dense.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-10 * scale {
                return Err(Error::config(format!("f is not convex (Hessian λ_min = {min_eig:e})")));
            }
        }
        let beta = operator_norm_upper(&dense, opts)?;
        let m = hess.num_block_rows();
        let beta_bar = (0..m)
            .map(|i| {
                let mut row = hess.row_operator(i)?;
                let start: usize = hess.col_dims()[..i].iter().sum();
                row.columns_mut(start, hess.col_dims()[i]).fill(0.0);
                operator_norm_upper(&row, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hess,
            lin,
            constant,
            beta,
            beta_bar,
        })
    }

    pub fn hessian(&self) -> &BlockLinearMap {
        &self.hess
    }

    pub fn linear(&self) -> &BlockVector {
        &self.lin
    }
}

impl SmoothOracle for QuadraticSmooth {
    fn eval(&self, x: &BlockVector) -> f64 {
        let hx = self.hess.apply(x).expect("dimension checked by caller");
        0.5 * x.dot(&hx) + self.lin.dot(x) + self.constant
    }

    fn grad_block(&self, i: usize, x: &BlockVector) -> DVector<f64> {
        let mut g = self.lin.block(i).clone();
        for j in self.hess.row_support(i) {
            g.gemv(1.0, self.hess.block(i, j).unwrap(), x.block(j), 1.0);
        }
        g
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn beta_bar(&self) -> &[f64] {
        &self.beta_bar
    }

    fn dependencies(&self) -> Vec<Vec<usize>> {
        (0..self.hess.num_block_rows()).map(|i| self.hess.row_support(i)).collect()
    }

    fn quadratic(&self) -> Option<(&BlockLinearMap, &BlockVector)> {
        Some((&self.hess, &self.lin))
    }
}

/// One term `(λ/2)‖Ĉ(w_i − w_j) − d‖²` of a relative-position cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTerm {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub offset: DVector<f64>,
}

/// Builds `f(w) = Σ (λ/2)‖Ĉ(w_i − w_j) − d_ij‖²` as an exact quadratic.
///
/// Every agent block has the column dimension of `c_hat`. A term couples
/// both endpoints, so `∇_j f` reads `w_i` even when only `j ∈ A_i` is listed.
pub fn quadratic_coupling_smooth(
    m: usize,
    terms: &[CouplingTerm],
    c_hat: &DMatrix<f64>,
    opts: NormOptions,
) -> Result<QuadraticSmooth> {
    let n = c_hat.ncols();
    let dims = vec![n; m];
    let ctc = c_hat.transpose() * c_hat;
    let mut dense_blocks: Vec<Option<DMatrix<f64>>> = vec![None; m * m];
    let mut lin = BlockVector::zeros(&dims);
    let mut constant = 0.0;
    for t in terms {
        if t.i >= m || t.j >= m {
            return Err(Error::structural(format!("coupling term ({}, {}) out of range", t.i, t.j)));
        }
        if t.i == t.j {
            return Err(Error::structural(format!("coupling term ({0}, {0}) is a self-loop", t.i)));
        }
        if t.offset.len() != c_hat.nrows() {
            return Err(Error::structural("coupling offset does not match Ĉ's row dimension"));
        }
        if !(t.weight >= 0.0) {
            return Err(Error::config("coupling weight must be nonnegative"));
        }
        let w = t.weight;
        for (a, b, s) in [(t.i, t.i, w), (t.j, t.j, w), (t.i, t.j, -w), (t.j, t.i, -w)] {
            let slot = &mut dense_blocks[a * m + b];
            let add = &ctc * s;
            *slot = Some(match slot.take() {
                Some(cur) => cur + add,
                None => add,
            });
        }
        let ctd = c_hat.tr_mul(&t.offset) * w;
        *lin.block_mut(t.i) -= &ctd;
        *lin.block_mut(t.j) += &ctd;
        constant += 0.5 * w * t.offset.norm_squared();
    }
    let mut hess = BlockLinearMap::zeros_with(dims.clone(), dims);
    for a in 0..m {
        for b in 0..m {
            if let Some(blk) = dense_blocks[a * m + b].take() {
                hess.set_block(a, b, blk)?;
            }
        }
    }
    QuadraticSmooth::new(hess, lin, constant, opts)
}

type EvalFn = dyn Fn(&BlockVector) -> f64 + Send + Sync;
type GradFn = dyn Fn(usize, &BlockVector) -> DVector<f64> + Send + Sync;

/// A user-supplied smooth term. The constants and the dependency structure
/// are taken on trust: they cannot be recovered reliably by probing.
#[derive(Clone)]
pub struct FnSmooth {
    eval: Arc<EvalFn>,
    grad: Arc<GradFn>,
    beta: f64,
    beta_bar: Vec<f64>,
    deps: Vec<Vec<usize>>,
}

impl FnSmooth {
    pub fn new(
        eval: impl Fn(&BlockVector) -> f64 + Send + Sync + 'static,
        grad: impl Fn(usize, &BlockVector) -> DVector<f64> + Send + Sync + 'static,
        beta: f64,
        beta_bar: Vec<f64>,
        deps: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if !(beta >= 0.0) || beta_bar.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::config("Lipschitz constants must be nonnegative"));
        }
        if beta_bar.len() != deps.len() {
            return Err(Error::structural("β̄ and dependency lists differ in length"));
        }
        Ok(Self {
            eval: Arc::new(eval),
            grad: Arc::new(grad),
            beta,
            beta_bar,
            deps,
        })
    }
}

impl fmt::Debug for FnSmooth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSmooth")
            .field("beta", &self.beta)
            .field("beta_bar", &self.beta_bar)
            .field("deps", &self.deps)
            .finish_non_exhaustive()
    }
}

impl SmoothOracle for FnSmooth {
    fn eval(&self, x: &BlockVector) -> f64 {
        (self.eval)(x)
    }

    fn grad_block(&self, i: usize, x: &BlockVector) -> DVector<f64> {
        (self.grad)(i, x)
    }

    fn beta(&self) -> f64 {
        self.beta
    }

    fn beta_bar(&self) -> &[f64] {
        &self.beta_bar
    }

    fn dependencies(&self) -> Vec<Vec<usize>> {
        self.deps.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_pair() -> QuadraticSmooth {
        let terms = [CouplingTerm {
            i: 0,
            j: 1,
            weight: 1.0,
            offset: DVector::zeros(1),
        }];
        quadratic_coupling_smooth(2, &terms, &DMatrix::identity(1, 1), NormOptions::default()).unwrap()
    }

    #[test]
    fn empty_coupling_is_zero() {
        let f = quadratic_coupling_smooth(3, &[], &DMatrix::identity(2, 2), NormOptions::default()).unwrap();
        assert_eq!(f.beta(), 0.0);
        assert!(f.beta_bar().iter().all(|&b| b == 0.0));
        let x = BlockVector::from_blocks(vec![DVector::from_element(2, 1.0); 3]);
        assert_eq!(f.eval(&x), 0.0);
        assert!(f.dependencies().iter().all(|d| d.is_empty()));
    }

    #[test]
    fn two_agent_scalar_constants() {
        let f = scalar_pair();
        // eigenvalues of [[1, −1], [−1, 1]] are {0, 2}; off-diagonal entries are 1
        assert!((f.beta() - 2.0).abs() <= 2e-5);
        assert!(f.beta() >= 2.0);
        for &b in f.beta_bar() {
            assert!((b - 1.0).abs() <= 1e-5 && b >= 1.0);
        }
        let x = BlockVector::from_blocks(vec![DVector::from_element(1, 3.0), DVector::from_element(1, 1.0)]);
        assert!((f.eval(&x) - 2.0).abs() <= 1e-15);
        assert_eq!(f.dependencies(), vec![vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c_hat = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
        let terms: Vec<_> = [(0, 1), (1, 2), (2, 0), (3, 1)]
            .iter()
            .map(|&(i, j)| CouplingTerm {
                i,
                j,
                weight: rng.gen_range(0.5..2.0),
                offset: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let f = quadratic_coupling_smooth(4, &terms, &c_hat, NormOptions::default()).unwrap();
        let x = BlockVector::from_blocks((0..4).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0))).collect());
        let h = 1e-6;
        for i in 0..4 {
            let g = f.grad_block(i, &x);
            for k in 0..4 {
                let mut xp = x.clone();
                xp.block_mut(i)[k] += h;
                let mut xm = x.clone();
                xm.block_mut(i)[k] -= h;
                let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn rejects_bad_terms() {
        let c = DMatrix::identity(1, 1);
        let bad = CouplingTerm { i: 0, j: 0, weight: 1.0, offset: DVector::zeros(1) };
        assert!(quadratic_coupling_smooth(2, &[bad], &c, NormOptions::default()).is_err());
        let out = CouplingTerm { i: 0, j: 5, weight: 1.0, offset: DVector::zeros(1) };
        assert!(quadratic_coupling_smooth(2, &[out], &c, NormOptions::default()).is_err());
    }

    #[test]
    fn nonconvex_quadratic_rejected() {
        let mut h = BlockLinearMap::zeros_with(vec![1], vec![1]);
        h.set_block(0, 0, DMatrix::from_element(1, 1, -1.0)).unwrap();
        let lin = BlockVector::zeros(&[1]);
        assert!(matches!(
            QuadraticSmooth::new(h, lin, 0.0, NormOptions::default()),
            Err(Error::Config(_))
        ));
    }
}
