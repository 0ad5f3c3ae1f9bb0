//! Validated problem instances `f(x) + Σ_i g_i(x_i) + h_i(L_{i·}x)` and the
//! scalar constants the stepsize rules consume.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::block::{operator_norm_upper, BlockDims, BlockLinearMap, NormOptions};
use crate::error::{Error, Result};
use crate::functions::{ConjugateProx, ProxOracle, SmoothOracle};

/// A multi-agent problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    dims: BlockDims,
    f: Arc<dyn SmoothOracle>,
    g: Vec<Arc<dyn ProxOracle>>,
    h: Vec<ConjugateProx>,
    l: BlockLinearMap,
    f_dependency: Vec<Vec<usize>>,
}

/// How agents are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// Only through `f`; `L` is block-diagonal.
    Partial,
    /// Through off-diagonal blocks of `L` (and possibly `f`).
    Total,
}

impl ProblemSpec {
    /// Assembles a problem; the block dependency structure of `∇f` is taken
    /// from `f.dependencies()`.
    pub fn new(
        dims: BlockDims,
        f: Arc<dyn SmoothOracle>,
        g: Vec<Arc<dyn ProxOracle>>,
        h: Vec<ConjugateProx>,
        l: BlockLinearMap,
    ) -> Result<Self> {
        let deps = f.dependencies();
        Self::with_dependencies(dims, f, g, h, l, deps)
    }

    /// Like [`ProblemSpec::new`] with an explicit declaration of which blocks
    /// each `∇_i f` reads.
    pub fn with_dependencies(
        dims: BlockDims,
        f: Arc<dyn SmoothOracle>,
        g: Vec<Arc<dyn ProxOracle>>,
        h: Vec<ConjugateProx>,
        l: BlockLinearMap,
        f_dependency: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let m = dims.m();
        if g.len() != m || h.len() != m || f_dependency.len() != m {
            return Err(Error::structural(format!(
                "expected {m} agents, got {} g, {} h, {} dependency lists",
                g.len(),
                h.len(),
                f_dependency.len()
            )));
        }
        if l.row_dims() != dims.dual() || l.col_dims() != dims.primal() {
            return Err(Error::structural("L does not match the block dimensions"));
        }
        if f.beta_bar().len() != m {
            return Err(Error::structural("f reports β̄ for the wrong number of agents"));
        }
        for i in 0..m {
            if let Some(d) = g[i].dim() {
                if d != dims.primal()[i] {
                    return Err(Error::structural(format!(
                        "g_{i} acts on R^{d} but block {i} has size {}",
                        dims.primal()[i]
                    )));
                }
            }
            if let Some(d) = h[i].h().dim() {
                if d != dims.dual()[i] {
                    return Err(Error::structural(format!(
                        "h_{i} acts on R^{d} but dual block {i} has size {}",
                        dims.dual()[i]
                    )));
                }
            }
            let mu = g[i].modulus();
            if !(mu > 0.0) {
                return Err(Error::config(format!(
                    "g_{i} must be strongly convex (μ_g = {mu})"
                )));
            }
            if let Some(&j) = f_dependency[i].iter().find(|&&j| j >= m) {
                return Err(Error::structural(format!(
                    "dependency of agent {i} on block {j} is out of range"
                )));
            }
        }
        Ok(Self {
            dims,
            f,
            g,
            h,
            l,
            f_dependency,
        })
    }

    pub fn dims(&self) -> &BlockDims {
        &self.dims
    }

    pub fn m(&self) -> usize {
        self.dims.m()
    }

    pub fn f(&self) -> &dyn SmoothOracle {
        &*self.f
    }

    pub fn g(&self, i: usize) -> &dyn ProxOracle {
        &*self.g[i]
    }

    pub fn h(&self, i: usize) -> &ConjugateProx {
        &self.h[i]
    }

    pub fn l(&self) -> &BlockLinearMap {
        &self.l
    }

    pub fn f_dependency(&self) -> &[Vec<usize>] {
        &self.f_dependency
    }

    pub fn mu_g(&self) -> Vec<f64> {
        self.g.iter().map(|g| g.modulus()).collect()
    }

    pub fn mu_h(&self) -> Vec<f64> {
        self.h.iter().map(|h| h.mu_h()).collect()
    }

    pub fn classify_coupling(&self) -> Coupling {
        if self.l.is_block_diagonal() {
            Coupling::Partial
        } else {
            Coupling::Total
        }
    }

    /// Coupling sets from the declared `f` dependencies.
    pub fn coupling_sets(&self) -> CouplingSets {
        derive_coupling_sets(self, &self.f_dependency).expect("dependencies validated at construction")
    }
}

/// Who talks to whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingSets {
    /// `N_i^in`: blocks `∇_i f` reads, excluding `i`.
    pub n_in: Vec<BTreeSet<usize>>,
    /// `N_i^out = {j : i ∈ N_j^in}`.
    pub n_out: Vec<BTreeSet<usize>>,
    /// `M_i^p = {j ≠ i : L_ji ≠ 0}`: receivers of `x_i` for their dual step.
    pub m_p: Vec<BTreeSet<usize>>,
    /// `M_i^d = {j ≠ i : L_ij ≠ 0}`: receivers of `u_i` for their primal step.
    pub m_d: Vec<BTreeSet<usize>>,
}

impl CouplingSets {
    /// Primal blocks agent `i` must see: itself, `N_i^in`, and every `j`
    /// with `L_ij` present.
    pub fn primal_needs(&self, i: usize) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = self.n_in[i].union(&self.m_d[i]).copied().collect();
        s.insert(i);
        s
    }

    /// Dual blocks agent `i` must see: itself and every `j` with `L_ji` present.
    pub fn dual_needs(&self, i: usize) -> BTreeSet<usize> {
        let mut s = self.m_p[i].clone();
        s.insert(i);
        s
    }
}

/// Derives `N^in`, `N^out`, `M^p`, `M^d`. Self-loops are dropped: an agent
/// always holds its own current blocks.
pub fn derive_coupling_sets(spec: &ProblemSpec, f_dependency: &[Vec<usize>]) -> Result<CouplingSets> {
    let m = spec.m();
    if f_dependency.len() != m {
        return Err(Error::structural("one dependency list per agent is required"));
    }
    let mut n_in = vec![BTreeSet::new(); m];
    for (i, deps) in f_dependency.iter().enumerate() {
        for &j in deps {
            if j >= m {
                return Err(Error::structural(format!(
                    "dependency of agent {i} on block {j} is out of range"
                )));
            }
            if j != i {
                n_in[i].insert(j);
            }
        }
    }
    let mut n_out = vec![BTreeSet::new(); m];
    for (i, set) in n_in.iter().enumerate() {
        for &j in set {
            n_out[j].insert(i);
        }
    }
    let l = spec.l();
    let m_p = (0..m)
        .map(|i| l.col_support(i).into_iter().filter(|&j| j != i).collect())
        .collect();
    let m_d = (0..m)
        .map(|i| l.row_support(i).into_iter().filter(|&j| j != i).collect())
        .collect();
    Ok(CouplingSets { n_in, n_out, m_p, m_d })
}

/// Every scalar the stepsize rules and rate certificates use.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants {
    pub beta: f64,
    pub beta_bar: Vec<f64>,
    pub mu_g: Vec<f64>,
    pub mu_h: Vec<f64>,
    /// `‖L_ii‖`.
    pub norm_l_diag: Vec<f64>,
    /// `‖L_{i·}‖`.
    pub norm_l_row: Vec<f64>,
    /// `‖L_{·i}ᵀ‖`.
    pub norm_l_col: Vec<f64>,
    /// `Σ_i ‖L_{i·}‖²/μ_h^i`; `+∞` when some `μ_h^i = 0`.
    pub r_s: f64,
    /// `Σ_i ‖L_{·i}ᵀ‖²/μ_g^i`.
    pub c_s: f64,
    /// `‖β̄‖²_{M_g⁻¹} = Σ_i β̄_i²/μ_g^i`.
    pub beta_bar_weighted: f64,
}

impl ProblemConstants {
    /// Fills in `R_s`, `C_s` and `‖β̄‖²_{M_g⁻¹}` from the primary quantities.
    pub fn from_parts(
        beta: f64,
        beta_bar: Vec<f64>,
        mu_g: Vec<f64>,
        mu_h: Vec<f64>,
        norm_l_diag: Vec<f64>,
        norm_l_row: Vec<f64>,
        norm_l_col: Vec<f64>,
    ) -> Self {
        let r_s = if mu_h.iter().any(|&mu| !(mu > 0.0)) {
            f64::INFINITY
        } else {
            norm_l_row.iter().zip(&mu_h).map(|(n, mu)| n * n / mu).sum()
        };
        let c_s = norm_l_col.iter().zip(&mu_g).map(|(n, mu)| n * n / mu).sum();
        let beta_bar_weighted = beta_bar.iter().zip(&mu_g).map(|(b, mu)| b * b / mu).sum();
        Self {
            beta,
            beta_bar,
            mu_g,
            mu_h,
            norm_l_diag,
            norm_l_row,
            norm_l_col,
            r_s,
            c_s,
            beta_bar_weighted,
        }
    }

    pub fn m(&self) -> usize {
        self.mu_g.len()
    }

    /// Agents whose `h_i` is not smooth (`μ_h^i = 0`).
    pub fn nonsmooth_agents(&self) -> Vec<usize> {
        (0..self.mu_h.len()).filter(|&i| !(self.mu_h[i] > 0.0)).collect()
    }

    pub fn mu_g_min(&self) -> f64 {
        self.mu_g.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mu_h_min(&self) -> f64 {
        self.mu_h.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Computes all constants of `spec`. Operator norms are power-iteration
/// estimates inflated slightly upward.
pub fn compute_constants(spec: &ProblemSpec, opts: NormOptions) -> Result<ProblemConstants> {
    let l = spec.l();
    let m = spec.m();
    let mut diag = Vec::with_capacity(m);
    let mut row = Vec::with_capacity(m);
    let mut col = Vec::with_capacity(m);
    for i in 0..m {
        diag.push(operator_norm_upper(&l.diag_block(i), opts)?);
        row.push(operator_norm_upper(&l.row_operator(i)?, opts)?);
        col.push(operator_norm_upper(&l.col_operator(i)?, opts)?);
    }
    Ok(ProblemConstants::from_parts(
        spec.f().beta(),
        spec.f().beta_bar().to_vec(),
        spec.mu_g(),
        spec.mu_h(),
        diag,
        row,
        col,
    ))
}
