//! Block-partitioned vectors and linear maps.
//!
//! A problem with `m` agents splits the primal variable into blocks
//! `x = (x_1, …, x_m)` with `x_i ∈ R^{n_i}` and the dual variable into
//! `u = (u_1, …, u_m)` with `u_i ∈ R^{r_i}`. The linear map `L` is stored as an
//! `m × m` grid of optional dense blocks where block `(i, j)` maps
//! `R^{n_j} → R^{r_i}`, so that row `i` applied to `x` is `Σ_j L_ij x_j`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Block sizes of the primal and dual variables, one entry per agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDims {
    primal: Vec<usize>,
    dual: Vec<usize>,
}

impl BlockDims {
    pub fn new(primal: Vec<usize>, dual: Vec<usize>) -> Result<Self> {
        if primal.is_empty() {
            return Err(Error::structural("at least one agent is required"));
        }
        if primal.len() != dual.len() {
            return Err(Error::structural(format!(
                "{} primal blocks but {} dual blocks",
                primal.len(),
                dual.len()
            )));
        }
        if let Some(i) = primal.iter().position(|&n| n == 0) {
            return Err(Error::structural(format!("primal block {i} has zero size")));
        }
        if let Some(i) = dual.iter().position(|&r| r == 0) {
            return Err(Error::structural(format!("dual block {i} has zero size")));
        }
        Ok(Self { primal, dual })
    }

    /// Number of agents.
    pub fn m(&self) -> usize {
        self.primal.len()
    }

    pub fn primal(&self) -> &[usize] {
        &self.primal
    }

    pub fn dual(&self) -> &[usize] {
        &self.dual
    }

    /// Total primal dimension `n`.
    pub fn n(&self) -> usize {
        self.primal.iter().sum()
    }

    /// Total dual dimension `r`.
    pub fn r(&self) -> usize {
        self.dual.iter().sum()
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    out.push(0);
    for d in dims {
        acc += d;
        out.push(acc);
    }
    out
}

/// A vector split into consecutive dense blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    blocks: Vec<DVector<f64>>,
}

impl BlockVector {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            blocks: dims.iter().map(|&d| DVector::zeros(d)).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<DVector<f64>>) -> Self {
        Self { blocks }
    }

    /// Splits a flat vector according to `dims`.
    pub fn from_flat(dims: &[usize], flat: &DVector<f64>) -> Result<Self> {
        let total: usize = dims.iter().sum();
        if flat.len() != total {
            return Err(Error::structural(format!(
                "flat vector has length {} but blocks sum to {total}",
                flat.len()
            )));
        }
        let off = offsets(dims);
        Ok(Self {
            blocks: dims
                .iter()
                .enumerate()
                .map(|(i, &d)| flat.rows(off[i], d).into_owned())
                .collect(),
        })
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let n = self.len();
        let mut out = DVector::zeros(n);
        let mut at = 0;
        for b in &self.blocks {
            out.rows_mut(at, b.len()).copy_from(b);
            at += b.len();
        }
        out
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn conforms(&self, dims: &[usize]) -> bool {
        self.blocks.len() == dims.len() && self.blocks.iter().zip(dims).all(|(b, &d)| b.len() == d)
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut DVector<f64> {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn set_block(&mut self, i: usize, v: DVector<f64>) -> Result<()> {
        if self.blocks[i].len() != v.len() {
            return Err(Error::structural(format!(
                "block {i} expects length {} but got {}",
                self.blocks[i].len(),
                v.len()
            )));
        }
        self.blocks[i] = v;
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b * alpha).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Stacked primal and dual iterate `z = (x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: BlockVector,
    pub u: BlockVector,
}

impl PrimalDualPoint {
    pub fn zeros(dims: &BlockDims) -> Self {
        Self {
            x: BlockVector::zeros(dims.primal()),
            u: BlockVector::zeros(dims.dual()),
        }
    }

    pub fn new(dims: &BlockDims, x: BlockVector, u: BlockVector) -> Result<Self> {
        if !x.conforms(dims.primal()) || !u.conforms(dims.dual()) {
            return Err(Error::structural("point does not conform to block dimensions"));
        }
        Ok(Self { x, u })
    }

    pub fn conforms(&self, dims: &BlockDims) -> bool {
        self.x.conforms(dims.primal()) && self.u.conforms(dims.dual())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            x: self.x.sub(&other.x),
            u: self.u.sub(&other.u),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.x.norm_sq() + self.u.norm_sq()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.u.is_finite()
    }

    /// Largest absolute entry of `self − other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).x.max_abs().max(self.sub(other).u.max_abs())
    }

    pub fn to_flat(&self) -> DVector<f64> {
        let x = self.x.to_flat();
        let u = self.u.to_flat();
        let mut out = DVector::zeros(x.len() + u.len());
        out.rows_mut(0, x.len()).copy_from(&x);
        out.rows_mut(x.len(), u.len()).copy_from(&u);
        out
    }

    pub fn from_flat(dims: &BlockDims, flat: &DVector<f64>) -> Result<Self> {
        let n = dims.n();
        if flat.len() != n + dims.r() {
            return Err(Error::structural("flat point has wrong length"));
        }
        Ok(Self {
            x: BlockVector::from_flat(dims.primal(), &flat.rows(0, n).into_owned())?,
            u: BlockVector::from_flat(dims.dual(), &flat.rows(n, dims.r()).into_owned())?,
        })
    }
}

/// Block operator with block-level sparsity. Block `(i, j)` has shape
/// `row_dims[i] × col_dims[j]`; an absent block is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLinearMap {
    row_dims: Vec<usize>,
    col_dims: Vec<usize>,
    blocks: Vec<Option<DMatrix<f64>>>,
}

impl BlockLinearMap {
    /// The all-zero map `R^n → R^r` for the given dimensions.
    pub fn zeros(dims: &BlockDims) -> Self {
        Self::zeros_with(dims.dual().to_vec(), dims.primal().to_vec())
    }

    /// General block grid; used for `L` (rows = dual, cols = primal) and
    /// for block Hessians (rows = cols = primal).
    pub fn zeros_with(row_dims: Vec<usize>, col_dims: Vec<usize>) -> Self {
        let m = row_dims.len() * col_dims.len();
        Self {
            row_dims,
            col_dims,
            blocks: vec![None; m],
        }
    }

    /// Block-diagonal map from the given diagonal blocks.
    pub fn block_diagonal(blocks: Vec<DMatrix<f64>>) -> Self {
        let rows = blocks.iter().map(|b| b.nrows()).collect();
        let cols = blocks.iter().map(|b| b.ncols()).collect();
        let mut out = Self::zeros_with(rows, cols);
        for (i, b) in blocks.into_iter().enumerate() {
            let m = out.col_dims.len();
            out.blocks[i * m + i] = Some(b);
        }
        out
    }

    /// Cuts a dense matrix into blocks; all-zero blocks become absent.
    pub fn from_dense(row_dims: Vec<usize>, col_dims: Vec<usize>, dense: &DMatrix<f64>) -> Result<Self> {
        let r: usize = row_dims.iter().sum();
        let n: usize = col_dims.iter().sum();
        if dense.nrows() != r || dense.ncols() != n {
            return Err(Error::structural(format!(
                "dense matrix is {}×{} but blocks need {r}×{n}",
                dense.nrows(),
                dense.ncols()
            )));
        }
        let ro = offsets(&row_dims);
        let co = offsets(&col_dims);
        let mut out = Self::zeros_with(row_dims.clone(), col_dims.clone());
        for i in 0..row_dims.len() {
            for j in 0..col_dims.len() {
                let b = dense.view((ro[i], co[j]), (row_dims[i], col_dims[j])).into_owned();
                if b.iter().any(|&v| v != 0.0) {
                    out.set_block(i, j, b)?;
                }
            }
        }
        Ok(out)
    }

    pub fn num_block_rows(&self) -> usize {
        self.row_dims.len()
    }

    pub fn num_block_cols(&self) -> usize {
        self.col_dims.len()
    }

    pub fn row_dims(&self) -> &[usize] {
        &self.row_dims
    }

    pub fn col_dims(&self) -> &[usize] {
        &self.col_dims
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.col_dims.len() + j
    }

    pub fn set_block(&mut self, i: usize, j: usize, block: DMatrix<f64>) -> Result<()> {
        if i >= self.row_dims.len() || j >= self.col_dims.len() {
            return Err(Error::structural(format!("block ({i}, {j}) out of range")));
        }
        if block.nrows() != self.row_dims[i] || block.ncols() != self.col_dims[j] {
            return Err(Error::structural(format!(
                "block ({i}, {j}) must be {}×{}, got {}×{}",
                self.row_dims[i],
                self.col_dims[j],
                block.nrows(),
                block.ncols()
            )));
        }
        let k = self.idx(i, j);
        self.blocks[k] = Some(block);
        Ok(())
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.blocks[self.idx(i, j)].as_ref()
    }

    pub fn has_block(&self, i: usize, j: usize) -> bool {
        self.blocks[self.idx(i, j)].is_some()
    }

    /// True when every off-diagonal block is absent.
    pub fn is_block_diagonal(&self) -> bool {
        (0..self.row_dims.len())
            .all(|i| (0..self.col_dims.len()).all(|j| i == j || !self.has_block(i, j)))
    }

    /// Indices `j` with block `(i, j)` present.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        (0..self.col_dims.len()).filter(|&j| self.has_block(i, j)).collect()
    }

    /// Indices `j` with block `(j, i)` present.
    pub fn col_support(&self, i: usize) -> Vec<usize> {
        (0..self.row_dims.len()).filter(|&j| self.has_block(j, i)).collect()
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.row_dims.len() {
            return Err(Error::structural(format!(
                "block row {i} out of range (m = {})",
                self.row_dims.len()
            )));
        }
        Ok(())
    }

    fn check_col(&self, i: usize) -> Result<()> {
        if i >= self.col_dims.len() {
            return Err(Error::structural(format!(
                "block column {i} out of range (m = {})",
                self.col_dims.len()
            )));
        }
        Ok(())
    }

    /// `L x`, block row by block row.
    pub fn apply(&self, x: &BlockVector) -> Result<BlockVector> {
        if !x.conforms(&self.col_dims) {
            return Err(Error::structural("input does not match the map's column blocks"));
        }
        let blocks = (0..self.row_dims.len())
            .map(|i| self.apply_row(i, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockVector::from_blocks(blocks))
    }

    /// `L_{i·} x = Σ_j L_ij x_j`.
    pub fn apply_row(&self, i: usize, x: &BlockVector) -> Result<DVector<f64>> {
        self.check_row(i)?;
        if !x.conforms(&self.col_dims) {
            return Err(Error::structural("input does not match the map's column blocks"));
        }
        let mut out = DVector::zeros(self.row_dims[i]);
        for j in 0..self.col_dims.len() {
            if let Some(b) = self.block(i, j) {
                out.gemv(1.0, b, x.block(j), 1.0);
            }
        }
        Ok(out)
    }

    /// `L_{·i}ᵀ u = Σ_j L_jiᵀ u_j`.
    pub fn apply_col_adjoint(&self, i: usize, u: &BlockVector) -> Result<DVector<f64>> {
        self.check_col(i)?;
        if !u.conforms(&self.row_dims) {
            return Err(Error::structural("input does not match the map's row blocks"));
        }
        let mut out = DVector::zeros(self.col_dims[i]);
        for j in 0..self.row_dims.len() {
            if let Some(b) = self.block(j, i) {
                out.gemv_tr(1.0, b, u.block(j), 1.0);
            }
        }
        Ok(out)
    }

    /// `Lᵀ u`.
    pub fn apply_adjoint(&self, u: &BlockVector) -> Result<BlockVector> {
        let blocks = (0..self.col_dims.len())
            .map(|i| self.apply_col_adjoint(i, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlockVector::from_blocks(blocks))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let ro = offsets(&self.row_dims);
        let co = offsets(&self.col_dims);
        let mut out = DMatrix::zeros(ro[self.row_dims.len()], co[self.col_dims.len()]);
        for i in 0..self.row_dims.len() {
            for j in 0..self.col_dims.len() {
                if let Some(b) = self.block(i, j) {
                    out.view_mut((ro[i], co[j]), (b.nrows(), b.ncols())).copy_from(b);
                }
            }
        }
        out
    }

    /// Dense `L_{i·}` of shape `r_i × n`.
    pub fn row_operator(&self, i: usize) -> Result<DMatrix<f64>> {
        self.check_row(i)?;
        let co = offsets(&self.col_dims);
        let mut out = DMatrix::zeros(self.row_dims[i], co[self.col_dims.len()]);
        for j in 0..self.col_dims.len() {
            if let Some(b) = self.block(i, j) {
                out.view_mut((0, co[j]), (b.nrows(), b.ncols())).copy_from(b);
            }
        }
        Ok(out)
    }

    /// Dense `L_{·i}` of shape `r × n_i`.
    pub fn col_operator(&self, i: usize) -> Result<DMatrix<f64>> {
        self.check_col(i)?;
        let ro = offsets(&self.row_dims);
        let mut out = DMatrix::zeros(ro[self.row_dims.len()], self.col_dims[i]);
        for j in 0..self.row_dims.len() {
            if let Some(b) = self.block(j, i) {
                out.view_mut((ro[j], 0), (b.nrows(), b.ncols())).copy_from(b);
            }
        }
        Ok(out)
    }

    /// Diagonal block `L_ii`, or a zero matrix of the right shape when absent.
    pub fn diag_block(&self, i: usize) -> DMatrix<f64> {
        self.block(i, i)
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.row_dims[i], self.col_dims[i]))
    }
}

/// Settings for [`operator_norm`].
#[derive(Debug, Clone, Copy)]
pub struct NormOptions {
    /// Relative tolerance on the returned spectral norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Result of a spectral norm estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `value` is then the best estimate.
    pub converged: bool,
}

/// Relative inflation applied to norm estimates before they enter stepsize bounds.
pub const NORM_SAFETY_INFLATION: f64 = 1e-6;

const NORM_START_SEED: u64 = 0x5eed_0f_a11_0;

/// Largest singular value of `a` by power iteration on `aᵀa`.
///
/// The start vector is all-ones with a small fixed-seed perturbation, so the
/// result is deterministic and the start is not orthogonal to the top singular
/// vector for structured matrices such as graph Laplacians.
pub fn operator_norm(a: &DMatrix<f64>, opts: NormOptions) -> Result<NormEstimate> {
    if !(opts.tol > 0.0) {
        return Err(Error::config("operator_norm tolerance must be positive"));
    }
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 || a.iter().all(|&v| v == 0.0) {
        return Ok(NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(NORM_START_SEED);
    let mut v = DVector::from_fn(n, |_, _| 1.0 + 0.25 * rng.gen_range(-1.0..1.0));
    v /= v.norm();

    // Stop well inside the requested tolerance: the change per step
    // understates the remaining error when the spectral gap is small.
    let stop = opts.tol * 1e-3;
    let mut prev = 0.0_f64;
    let mut av = DVector::zeros(a.nrows());
    let mut w = DVector::zeros(n);
    for it in 1..=opts.max_iter {
        av.gemv(1.0, a, &v, 0.0);
        let est = av.norm();
        w.gemv_tr(1.0, a, &av, 0.0);
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(NormEstimate {
                value: est,
                iterations: it,
                converged: true,
            });
        }
        v.copy_from(&w);
        v /= wn;
        if it > 1 && (est - prev).abs() <= stop * est {
            return Ok(NormEstimate {
                value: est.max(prev),
                iterations: it,
                converged: true,
            });
        }
        prev = est;
    }
    Ok(NormEstimate {
        value: prev,
        iterations: opts.max_iter,
        converged: false,
    })
}

/// Spectral norm estimate inflated by [`NORM_SAFETY_INFLATION`].
pub fn operator_norm_upper(a: &DMatrix<f64>, opts: NormOptions) -> Result<f64> {
    Ok(operator_norm(a, opts)?.value * (1.0 + NORM_SAFETY_INFLATION))
}

/// Which named metric a [`DiagonalBlockMetric`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MetricKind {
    /// `blkdiag(Γ⁻¹, Σ⁻¹)`.
    D,
    /// Strong convexity moduli of the `g_i`.
    Mg,
    /// Strong convexity moduli of the `h_i*`.
    Mh,
    /// `blkdiag(M_g, M_h)`.
    M,
    /// `D` with block weights divided by the activation probabilities.
    PiInvD,
    Custom,
}

/// Metric with one positive weight per block.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalBlockMetric {
    primal: Vec<f64>,
    dual: Vec<f64>,
    kind: MetricKind,
}

impl DiagonalBlockMetric {
    pub fn new(primal: Vec<f64>, dual: Vec<f64>, kind: MetricKind) -> Result<Self> {
        for (side, w) in [("primal", &primal), ("dual", &dual)] {
            if let Some(i) = w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::config(format!(
                    "{side} metric weight {i} is {} (must be positive and finite)",
                    w[i]
                )));
            }
        }
        Ok(Self { primal, dual, kind })
    }

    /// `D = blkdiag(Γ⁻¹, Σ⁻¹)`.
    pub fn d(gamma: &[f64], sigma: &[f64]) -> Result<Self> {
        Self::new(
            gamma.iter().map(|g| 1.0 / g).collect(),
            sigma.iter().map(|s| 1.0 / s).collect(),
            MetricKind::D,
        )
    }

    /// `M = blkdiag(M_g, M_h)`.
    pub fn m(mu_g: &[f64], mu_h: &[f64]) -> Result<Self> {
        Self::new(mu_g.to_vec(), mu_h.to_vec(), MetricKind::M)
    }

    pub fn mg(mu_g: &[f64]) -> Result<Self> {
        Self::new(mu_g.to_vec(), Vec::new(), MetricKind::Mg)
    }

    pub fn mh(mu_h: &[f64]) -> Result<Self> {
        Self::new(Vec::new(), mu_h.to_vec(), MetricKind::Mh)
    }

    pub fn pi_inv_d(gamma: &[f64], sigma: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(
            gamma.iter().zip(p).map(|(g, p)| 1.0 / (g * p)).collect(),
            sigma.iter().zip(p).map(|(s, p)| 1.0 / (s * p)).collect(),
            MetricKind::PiInvD,
        )
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn primal_weights(&self) -> &[f64] {
        &self.primal
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual
    }

    pub fn norm_sq_primal(&self, x: &BlockVector) -> Result<f64> {
        weighted(&self.primal, x, "primal")
    }

    pub fn norm_sq_dual(&self, u: &BlockVector) -> Result<f64> {
        weighted(&self.dual, u, "dual")
    }
}

fn weighted(w: &[f64], v: &BlockVector, side: &str) -> Result<f64> {
    if w.len() != v.num_blocks() {
        return Err(Error::structural(format!(
            "{side} metric has {} weights for {} blocks",
            w.len(),
            v.num_blocks()
        )));
    }
    Ok(w.iter().zip(v.blocks()).map(|(w, b)| w * b.norm_squared()).sum())
}

/// Anything that induces a squared norm on primal-dual points.
pub trait PointMetric {
    fn norm_sq(&self, z: &PrimalDualPoint) -> Result<f64>;
}

impl PointMetric for DiagonalBlockMetric {
    fn norm_sq(&self, z: &PrimalDualPoint) -> Result<f64> {
        Ok(self.norm_sq_primal(&z.x)? + self.norm_sq_dual(&z.u)?)
    }
}

/// Outcome of [`SaddleMetricP::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    PositiveDefinite,
    /// Too large to factor densely; rely on the stepsize condition.
    Unchecked,
}

/// Dimension limit for the dense Schur complement check.
pub const SCHUR_CHECK_LIMIT: usize = 2000;

/// The saddle metric `P = [[Γ⁻¹, −Lᵀ], [−L, Σ⁻¹]]`.
#[derive(Debug, Clone)]
pub struct SaddleMetricP<'a> {
    gamma: Vec<f64>,
    sigma: Vec<f64>,
    l: &'a BlockLinearMap,
}

impl<'a> SaddleMetricP<'a> {
    pub fn new(gamma: Vec<f64>, sigma: Vec<f64>, l: &'a BlockLinearMap) -> Result<Self> {
        if gamma.len() != l.num_block_cols() || sigma.len() != l.num_block_rows() {
            return Err(Error::structural("stepsize count does not match the number of blocks"));
        }
        if gamma.iter().chain(&sigma).any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("stepsizes must be positive and finite"));
        }
        Ok(Self { gamma, sigma, l })
    }

    /// Checks `Γ⁻¹ − LᵀΣL ≻ 0` by dense Cholesky when the problem is small enough.
    pub fn validate(&self) -> Result<Validation> {
        let n: usize = self.l.col_dims().iter().sum();
        let r: usize = self.l.row_dims().iter().sum();
        if n + r > SCHUR_CHECK_LIMIT {
            return Ok(Validation::Unchecked);
        }
        let dense = self.l.to_dense();
        let sigma_diag = expand(&self.sigma, self.l.row_dims());
        let gamma_inv = expand(&self.gamma, self.l.col_dims()).map(|g| 1.0 / g);
        let scaled = DMatrix::from_diagonal(&sigma_diag) * &dense;
        let schur = DMatrix::from_diagonal(&gamma_inv) - dense.transpose() * scaled;
        match schur.cholesky() {
            Some(_) => Ok(Validation::PositiveDefinite),
            None => Err(Error::config(
                "saddle metric P is not positive definite (Γ⁻¹ − LᵀΣL has no Cholesky factor)",
            )),
        }
    }
}

impl PointMetric for SaddleMetricP<'_> {
    fn norm_sq(&self, z: &PrimalDualPoint) -> Result<f64> {
        let lx = self.l.apply(&z.x)?;
        let xs: f64 = self
            .gamma
            .iter()
            .zip(z.x.blocks())
            .map(|(g, b)| b.norm_squared() / g)
            .sum();
        let us: f64 = self
            .sigma
            .iter()
            .zip(z.u.blocks())
            .map(|(s, b)| b.norm_squared() / s)
            .sum();
        Ok(xs + us - 2.0 * lx.dot(&z.u))
    }
}

/// Repeats each per-block scalar over the block's entries.
pub fn expand(per_block: &[f64], dims: &[usize]) -> DVector<f64> {
    DVector::from_iterator(
        dims.iter().sum(),
        per_block
            .iter()
            .zip(dims)
            .flat_map(|(&v, &d)| std::iter::repeat(v).take(d)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn rand_block(rng: &mut ChaCha8Rng, dims: &[usize]) -> BlockVector {
        BlockVector::from_blocks(
            dims.iter()
                .map(|&d| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
                .collect(),
        )
    }

    #[test]
    fn identity_map_is_identity() {
        let l = BlockLinearMap::block_diagonal(vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)]);
        let x = BlockVector::from_blocks(vec![DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)]);
        assert_eq!(l.apply(&x).unwrap(), x);
    }

    #[test]
    fn single_off_diagonal_block() {
        let dims = BlockDims::new(vec![1, 2], vec![1, 1]).unwrap();
        let mut l = BlockLinearMap::zeros(&dims);
        l.set_block(0, 1, DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let x = BlockVector::from_blocks(vec![DVector::from_element(1, 0.0), DVector::from_vec(vec![3.0, 4.0])]);
        let y = l.apply(&x).unwrap();
        assert_eq!(y.block(0)[0], 11.0);
        assert_eq!(y.block(1)[0], 0.0);
    }

    #[test]
    fn blockwise_matches_dense_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = BlockDims::new(vec![2, 3, 2], vec![1, 2, 1]).unwrap();
        let mut l = BlockLinearMap::zeros(&dims);
        for i in 0..3 {
            for j in 0..3 {
                if (i + 2 * j) % 3 != 1 {
                    let b = rand_matrix(&mut rng, dims.dual()[i], dims.primal()[j]);
                    l.set_block(i, j, b).unwrap();
                }
            }
        }
        let x = rand_block(&mut rng, dims.primal());
        let dense = l.to_dense() * x.to_flat();
        let got = l.apply(&x).unwrap().to_flat();
        assert!((dense - got).amax() <= 1e-13);
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let dims = BlockDims::new(vec![2, 2], vec![1, 1]).unwrap();
        let mut l = BlockLinearMap::zeros(&dims);
        assert!(matches!(
            l.set_block(0, 0, DMatrix::zeros(2, 2)),
            Err(Error::Structural(_))
        ));
        let x = BlockVector::zeros(&[2, 3]);
        assert!(l.apply(&x).is_err());
        assert!(l.apply_row(2, &BlockVector::zeros(&[2, 2])).is_err());
        assert!(l.apply_col_adjoint(5, &BlockVector::zeros(&[1, 1])).is_err());
        assert!(BlockDims::new(vec![], vec![]).is_err());
        assert!(BlockDims::new(vec![1, 0], vec![1, 1]).is_err());
    }

    #[test]
    fn block_diagonal_row_is_diagonal_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = BlockLinearMap::block_diagonal(vec![rand_matrix(&mut rng, 2, 3), rand_matrix(&mut rng, 1, 2)]);
        let x = rand_block(&mut rng, &[3, 2]);
        for i in 0..2 {
            assert_eq!(l.apply_row(i, &x).unwrap(), l.block(i, i).unwrap() * x.block(i));
        }
    }

    #[test]
    fn column_adjoint_of_all_ones() {
        let ones = DMatrix::from_element(1, 1, 1.0);
        let dims = BlockDims::new(vec![1, 1], vec![1, 1]).unwrap();
        let mut l = BlockLinearMap::zeros(&dims);
        for i in 0..2 {
            for j in 0..2 {
                l.set_block(i, j, ones.clone()).unwrap();
            }
        }
        let u = BlockVector::from_blocks(vec![DVector::from_element(1, 1.0); 2]);
        assert_eq!(l.apply_col_adjoint(0, &u).unwrap()[0], 2.0);
    }

    #[test]
    fn adjoint_identity_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let dims = BlockDims::new(vec![2, 1, 3], vec![2, 2, 1]).unwrap();
            let mut l = BlockLinearMap::zeros(&dims);
            for i in 0..3 {
                for j in 0..3 {
                    if rng.gen_bool(0.6) {
                        l.set_block(i, j, rand_matrix(&mut rng, dims.dual()[i], dims.primal()[j]))
                            .unwrap();
                    }
                }
            }
            let x = rand_block(&mut rng, dims.primal());
            let u = rand_block(&mut rng, dims.dual());
            let lhs = l.apply(&x).unwrap().dot(&u);
            let rhs: f64 = (0..3)
                .map(|i| x.block(i).dot(&l.apply_col_adjoint(i, &u).unwrap()))
                .sum();
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + x.norm() * u.norm()));
            let y = l.apply(&x).unwrap();
            for i in 0..3 {
                assert_eq!(y.block(i), &l.apply_row(i, &x).unwrap());
            }
        }
    }

    #[test]
    fn identity_metric_is_plain_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = BlockDims::new(vec![2, 1], vec![1, 3]).unwrap();
        let z = PrimalDualPoint::new(
            &dims,
            rand_block(&mut rng, dims.primal()),
            rand_block(&mut rng, dims.dual()),
        )
        .unwrap();
        let d = DiagonalBlockMetric::d(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(d.norm_sq(&z).unwrap(), z.norm_sq(), epsilon = 1e-15);
        assert_eq!(d.norm_sq(&PrimalDualPoint::zeros(&dims)).unwrap(), 0.0);
    }

    #[test]
    fn nonpositive_weights_rejected() {
        assert!(matches!(
            DiagonalBlockMetric::new(vec![1.0, 0.0], vec![1.0], MetricKind::Custom),
            Err(Error::Config(_))
        ));
        assert!(DiagonalBlockMetric::m(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn saddle_metric_positive_when_schur_complement_is() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let blocks: Vec<_> = (0..3).map(|_| rand_matrix(&mut rng, 2, 2)).collect();
        let l = BlockLinearMap::block_diagonal(blocks);
        let sigma = vec![1.0; 3];
        // γ_i < 1 / (σ_i ‖L_ii‖² + β) with β = 0
        let gamma: Vec<f64> = (0..3)
            .map(|i| {
                let n = operator_norm(l.block(i, i).unwrap(), NormOptions::default()).unwrap().value;
                0.99 / (sigma[i] * n * n)
            })
            .collect();
        let p = SaddleMetricP::new(gamma, sigma, &l).unwrap();
        assert_eq!(p.validate().unwrap(), Validation::PositiveDefinite);
        let dims = BlockDims::new(vec![2; 3], vec![2; 3]).unwrap();
        for _ in 0..1000 {
            let z = PrimalDualPoint::new(
                &dims,
                rand_block(&mut rng, dims.primal()),
                rand_block(&mut rng, dims.dual()),
            )
            .unwrap();
            assert!(p.norm_sq(&z).unwrap() > 0.0);
        }
    }

    #[test]
    fn saddle_metric_rejects_large_steps() {
        let l = BlockLinearMap::block_diagonal(vec![DMatrix::identity(1, 1)]);
        let p = SaddleMetricP::new(vec![2.0], vec![1.0], &l).unwrap();
        assert!(p.validate().is_err());
    }

    #[test]
    fn operator_norm_simple_cases() {
        let opts = NormOptions { tol: 1e-9, ..Default::default() };
        let id = operator_norm(&DMatrix::identity(4, 4), opts).unwrap();
        assert!((id.value - 1.0).abs() <= 1e-9);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        assert!((operator_norm(&d, opts).unwrap().value - 3.0).abs() <= 3e-9);
        assert_eq!(operator_norm(&DMatrix::zeros(3, 2), opts).unwrap().value, 0.0);
        // all-ones lies in the kernel of a Laplacian
        let lap = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((operator_norm(&lap, opts).unwrap().value - 2.0).abs() <= 2e-9);
    }

    #[test]
    fn operator_norm_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tol = 1e-8;
        for _ in 0..20 {
            let a = rand_matrix(&mut rng, 5, 7);
            let exact = a.clone().svd(false, false).singular_values.max();
            let est = operator_norm(&a, NormOptions { tol, ..Default::default() }).unwrap();
            assert!(est.converged);
            assert!((est.value - exact).abs() <= tol * exact, "{} vs {}", est.value, exact);
        }
    }

    #[test]
    fn operator_norm_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_matrix(&mut rng, 6, 4);
        let o = NormOptions::default();
        assert_eq!(operator_norm(&a, o).unwrap(), operator_norm(&a, o).unwrap());
    }
}
