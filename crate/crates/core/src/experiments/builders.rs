//! Problem instances: formation control, distributed logistic regression and
//! elastic net, random quadratic suites, and file-defined quadratics.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{
    CustomConfig, DualKind, ElasticNetConfig, FormationConfig, LogisticConfig, LogisticData,
    QuadraticSuiteConfig,
};
use super::io::parse_custom_problem;
use crate::block::{BlockDims, BlockLinearMap, NormOptions, PrimalDualPoint};
use crate::error::{Error, Result};
use crate::functions::{
    quadratic_coupling_smooth, BoxIndicator, ConjugateProx, CouplingTerm, ElasticNet, LogisticLoss,
    PointIndicator, ProxOracle, Quadratic, SeparableSum, SmoothOracle, SquaredLoss, SquaredNorm,
    ZeroSmooth,
};
use crate::problem::{Coupling, ProblemSpec};
use crate::solvers::DecomposedProblem;

/// A problem plus what some experiments need beyond the spec.
#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub spec: ProblemSpec,
    /// Local data for the dual decomposition baseline, when applicable.
    pub decomposed: Option<DecomposedProblem>,
    pub start: PrimalDualPoint,
}

impl BuiltProblem {
    fn new(spec: ProblemSpec) -> Self {
        let start = PrimalDualPoint::zeros(spec.dims());
        Self {
            spec,
            decomposed: None,
            start,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Contiguous split of `n` coordinates into `m` nonempty blocks.
fn split_even(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || n < m {
        return Err(Error::config(format!("cannot split {n} coordinates over {m} agents")));
    }
    Ok((0..m).map(|i| n / m + usize::from(i < n % m)).collect())
}

/// `L_{i·} = rows_i` cut into column blocks.
fn row_partitioned(rows: &[DMatrix<f64>], col_dims: &[usize]) -> Result<BlockLinearMap> {
    let row_dims: Vec<usize> = rows.iter().map(|r| r.nrows()).collect();
    let mut l = BlockLinearMap::zeros_with(row_dims, col_dims.to_vec());
    for (i, r) in rows.iter().enumerate() {
        let mut off = 0;
        for (j, &nj) in col_dims.iter().enumerate() {
            let blk = r.columns(off, nj).into_owned();
            if blk.iter().any(|&v| v != 0.0) {
                l.set_block(i, j, blk)?;
            }
            off += nj;
        }
    }
    Ok(l)
}

/// Default arrow: agent 0 at the tip, the rest alternating along two wings.
pub fn arrow_targets(m: usize, spacing: f64) -> Vec<[f64; 2]> {
    (0..m)
        .map(|k| {
            if k == 0 {
                return [0.0, 0.0];
            }
            let rank = ((k + 1) / 2) as f64;
            let side = if k % 2 == 1 { 1.0 } else { -1.0 };
            [-spacing * rank, side * spacing * rank]
        })
        .collect()
}

fn polygon(m: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..m)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / m as f64 + PI / 2.0;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

fn ring(m: usize) -> Vec<Vec<usize>> {
    (0..m)
        .map(|i| {
            let mut n = vec![(i + m - 1) % m, (i + 1) % m];
            n.sort_unstable();
            n.dedup();
            n.retain(|&j| j != i);
            n
        })
        .collect()
}

/// Exact discretization of a planar double integrator, state `(p, v)`.
fn double_integrator(dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    );
    let h = 0.5 * dt * dt;
    let b = DMatrix::from_row_slice(4, 2, &[h, 0.0, 0.0, h, dt, 0.0, 0.0, dt]);
    (a, b)
}

/// Dynamics `E w = b` over the horizon for `w = (s_1, …, s_N, a_0, …, a_{N−1})`.
pub fn formation_dynamics(horizon: usize, dt: f64, s0: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (a, b) = double_integrator(dt);
    let n = 6 * horizon;
    let mut e = DMatrix::zeros(4 * horizon, n);
    let mut rhs = DVector::zeros(4 * horizon);
    for t in 0..horizon {
        let row = 4 * t;
        e.view_mut((row, 4 * t), (4, 4)).copy_from(&DMatrix::identity(4, 4));
        if t == 0 {
            rhs.rows_mut(0, 4).copy_from(&(&a * s0));
        } else {
            e.view_mut((row, 4 * (t - 1)), (4, 4)).copy_from(&(-&a));
        }
        e.view_mut((row, 4 * horizon + 2 * t), (4, 2)).copy_from(&(-&b));
    }
    (e, rhs)
}

/// Extracts the positions `p_1, …, p_N` from `w`.
pub fn position_selector(horizon: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(2 * horizon, 6 * horizon);
    for t in 0..horizon {
        c[(2 * t, 4 * t)] = 1.0;
        c[(2 * t + 1, 4 * t + 1)] = 1.0;
    }
    c
}

pub fn build_formation(cfg: &FormationConfig) -> Result<BuiltProblem> {
    let m = cfg.m;
    let n_h = cfg.horizon;
    if m < 2 {
        return Err(Error::config("formation needs at least two agents"));
    }
    if n_h == 0 || !(cfg.dt > 0.0) {
        return Err(Error::config("formation needs a positive horizon and time step"));
    }
    if !(cfg.q_scale > 0.0) {
        return Err(Error::config(format!(
            "Q_i = {}·I is not positive definite (local costs must be strongly convex)",
            cfg.q_scale
        )));
    }
    if !(cfg.state_bound > 0.0 && cfg.input_bound > 0.0) {
        return Err(Error::config("state and input bounds must be positive"));
    }
    let lambda = match cfg.lambda.len() {
        1 => vec![cfg.lambda[0]; m],
        l if l == m => cfg.lambda.clone(),
        l => return Err(Error::config(format!("lambda has {l} entries for {m} agents"))),
    };
    if lambda.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::config("formation weights must be nonnegative"));
    }
    let neighbors = cfg.neighbors.clone().unwrap_or_else(|| ring(m));
    if neighbors.len() != m {
        return Err(Error::config("one neighbor list per agent required"));
    }
    let targets = cfg.targets.clone().unwrap_or_else(|| arrow_targets(m, cfg.spacing));
    let p0 = cfg.initial_positions.clone().unwrap_or_else(|| polygon(m, cfg.start_radius));
    let v0 = cfg.initial_velocities.clone().unwrap_or_else(|| vec![[0.0, 0.0]; m]);
    if targets.len() != m || p0.len() != m || v0.len() != m {
        return Err(Error::config("targets and initial conditions need one entry per agent"));
    }

    let n = 6 * n_h;
    let c_hat = position_selector(n_h);
    let mut terms = Vec::new();
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            if j >= m || j == i {
                return Err(Error::config(format!("invalid neighbor {j} of agent {i}")));
            }
            let d = [targets[i][0] - targets[j][0], targets[i][1] - targets[j][1]];
            let offset = DVector::from_fn(2 * n_h, |r, _| d[r % 2]);
            terms.push(CouplingTerm {
                i,
                j,
                weight: lambda[i],
                offset,
            });
        }
    }
    let f: Arc<dyn SmoothOracle> = Arc::new(quadratic_coupling_smooth(m, &terms, &c_hat, NormOptions::default())?);

    let mut lo = DVector::from_element(n, -cfg.state_bound);
    let mut hi = DVector::from_element(n, cfg.state_bound);
    lo.rows_mut(4 * n_h, 2 * n_h).fill(-cfg.input_bound);
    hi.rows_mut(4 * n_h, 2 * n_h).fill(cfg.input_bound);

    let mut g: Vec<Arc<dyn ProxOracle>> = Vec::with_capacity(m);
    let mut h = Vec::with_capacity(m);
    let mut l_blocks = Vec::with_capacity(m);
    let (mut es, mut bs) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for i in 0..m {
        let s0 = DVector::from_vec(vec![p0[i][0], p0[i][1], v0[i][0], v0[i][1]]);
        let (e, b) = formation_dynamics(n_h, cfg.dt, &s0);
        let mut lii = DMatrix::zeros(4 * n_h + n, n);
        lii.view_mut((0, 0), (4 * n_h, n)).copy_from(&e);
        lii.view_mut((4 * n_h, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
        l_blocks.push(lii);
        g.push(Arc::new(Quadratic::diagonal(DVector::from_element(n, cfg.q_scale))?));
        let hi_i: Arc<dyn ProxOracle> = Arc::new(SeparableSum::new(vec![
            Arc::new(PointIndicator::new(b.clone())),
            Arc::new(BoxIndicator::new(lo.clone(), hi.clone())?),
        ])?);
        h.push(ConjugateProx::new(hi_i));
        es.push(e);
        bs.push(b);
    }
    let dims = BlockDims::new(vec![n; m], vec![4 * n_h + n; m])?;
    let spec = ProblemSpec::new(dims, f, g, h, BlockLinearMap::block_diagonal(l_blocks))?;
    let decomposed = DecomposedProblem::new(&spec, es, bs, vec![lo; m], vec![hi; m])?;
    let mut built = BuiltProblem::new(spec);
    built.decomposed = Some(decomposed);
    Ok(built)
}

/// Labels and feature rows per agent.
fn logistic_data(data: &LogisticData) -> Result<(Vec<DMatrix<f64>>, Vec<DVector<f64>>)> {
    match data {
        LogisticData::Synthetic { m, samples, dim, seed } => {
            if *samples == 0 {
                return Err(Error::config("every agent needs at least one data row"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let w_true = uniform_vec(&mut rng, *dim);
            let mut xs = Vec::with_capacity(*m);
            let mut ys = Vec::with_capacity(*m);
            for _ in 0..*m {
                let x = uniform(&mut rng, *samples, *dim);
                let y = DVector::from_fn(*samples, |t, _| {
                    let score = x.row(t).transpose().dot(&w_true) + 0.3 * rng.gen_range(-1.0..1.0);
                    if score >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                });
                xs.push(x);
                ys.push(y);
            }
            Ok((xs, ys))
        }
        LogisticData::File { path, m } => {
            let text = std::fs::read_to_string(path)?;
            let rows = super::io::parse_matrix_rows(&text)?;
            if rows.len() < *m || *m == 0 {
                return Err(Error::config(format!(
                    "{} data rows cannot give each of {m} agents a sample",
                    rows.len()
                )));
            }
            let dim = rows[0].len() - 1;
            if dim == 0 {
                return Err(Error::config("data rows need a label and at least one feature"));
            }
            let counts = split_even(rows.len(), *m)?;
            let mut off = 0;
            let mut xs = Vec::with_capacity(*m);
            let mut ys = Vec::with_capacity(*m);
            for c in counts {
                let chunk = &rows[off..off + c];
                xs.push(DMatrix::from_fn(c, dim, |t, j| chunk[t][j + 1]));
                ys.push(DVector::from_fn(c, |t, _| chunk[t][0]));
                off += c;
            }
            Ok((xs, ys))
        }
    }
}

pub fn build_logistic(cfg: &LogisticConfig) -> Result<BuiltProblem> {
    if !(cfg.lambda > 0.0) {
        return Err(Error::config("logistic regularization λ must be positive"));
    }
    let (xs, ys) = logistic_data(&cfg.data)?;
    let m = xs.len();
    let dim = xs[0].ncols();
    if let Some(i) = xs.iter().position(|x| x.nrows() == 0) {
        return Err(Error::config(format!("agent {i} has no data rows")));
    }
    let col_dims = split_even(dim, m)?;
    let l = row_partitioned(&xs, &col_dims)?;
    let g: Vec<Arc<dyn ProxOracle>> = col_dims
        .iter()
        .map(|&n| Ok(Arc::new(SquaredNorm::new(n, 2.0 * cfg.lambda)?) as Arc<dyn ProxOracle>))
        .collect::<Result<_>>()?;
    let h = ys
        .into_iter()
        .map(|y| Ok(ConjugateProx::new(Arc::new(LogisticLoss::new(y)?))))
        .collect::<Result<Vec<_>>>()?;
    let dims = BlockDims::new(col_dims.clone(), xs.iter().map(|x| x.nrows()).collect())?;
    let spec = ProblemSpec::new(dims, Arc::new(ZeroSmooth::new(&col_dims)), g, h, l)?;
    Ok(BuiltProblem::new(spec))
}

pub fn build_elastic_net(cfg: &ElasticNetConfig) -> Result<BuiltProblem> {
    if !(cfg.l2 > 0.0) {
        return Err(Error::config("elastic net needs λ2 > 0 for strong convexity"));
    }
    if cfg.samples == 0 || cfg.dims.is_empty() {
        return Err(Error::config("elastic net needs agents and data rows"));
    }
    let m = cfg.dims.len();
    let n: usize = cfg.dims.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w_true = uniform_vec(&mut rng, n);
    let mut rows = Vec::with_capacity(m);
    let mut h = Vec::with_capacity(m);
    for _ in 0..m {
        let a = uniform(&mut rng, cfg.samples, n) * cfg.data_scale;
        let noise = uniform_vec(&mut rng, cfg.samples) * (0.1 * cfg.data_scale);
        let b = &a * &w_true + noise;
        h.push(ConjugateProx::new(Arc::new(SquaredLoss::new(b))));
        rows.push(a);
    }
    let l = row_partitioned(&rows, &cfg.dims)?;
    let g: Vec<Arc<dyn ProxOracle>> = cfg
        .dims
        .iter()
        .map(|&d| Ok(Arc::new(ElasticNet::new(d, cfg.l1, cfg.l2)?) as Arc<dyn ProxOracle>))
        .collect::<Result<_>>()?;
    let dims = BlockDims::new(cfg.dims.clone(), vec![cfg.samples; m])?;
    let spec = ProblemSpec::new(dims, Arc::new(ZeroSmooth::new(&cfg.dims)), g, h, l)?;
    Ok(BuiltProblem::new(spec))
}

fn dual_term(kind: DualKind, mu_h: f64, target: DVector<f64>) -> Result<ConjugateProx> {
    match kind {
        DualKind::Smooth => {
            if !(mu_h > 0.0) {
                return Err(Error::config("smooth h needs μ_h > 0"));
            }
            let r = target.len();
            let q = Quadratic::diagonal(DVector::from_element(r, 1.0 / mu_h))?.with_linear(-target / mu_h)?;
            Ok(ConjugateProx::new(Arc::new(q)))
        }
        DualKind::Point => Ok(ConjugateProx::new(Arc::new(PointIndicator::new(target)))),
    }
}

/// Random strongly convex quadratic instance with `g_i = (μ_g/2)‖x‖² + aᵀx`,
/// `h_i` smooth quadratic or a point indicator, and a ring coupling in `f`.
pub fn build_quadratic_suite(cfg: &QuadraticSuiteConfig) -> Result<BuiltProblem> {
    let (m, n, r) = (cfg.m, cfg.n, cfg.r);
    if m == 0 || n == 0 || r == 0 {
        return Err(Error::config("quadratic suite needs positive m, n and r"));
    }
    if !(cfg.mu_g > 0.0) {
        return Err(Error::config("quadratic suite needs μ_g > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = BlockDims::new(vec![n; m], vec![r; m])?;
    let scale = 1.0 / (n as f64).sqrt();
    let mut l = BlockLinearMap::zeros(&dims);
    for i in 0..m {
        l.set_block(i, i, uniform(&mut rng, r, n) * scale)?;
        if cfg.coupling == Coupling::Total {
            for j in 0..m {
                let forced = m > 1 && j == (i + 1) % m;
                if j != i && (forced || rng.gen::<f64>() < cfg.density) {
                    l.set_block(i, j, uniform(&mut rng, r, n) * scale)?;
                }
            }
        }
    }
    let mut g: Vec<Arc<dyn ProxOracle>> = Vec::with_capacity(m);
    let mut h = Vec::with_capacity(m);
    for _ in 0..m {
        let lin = uniform_vec(&mut rng, n);
        g.push(Arc::new(Quadratic::diagonal(DVector::from_element(n, cfg.mu_g))?.with_linear(lin)?));
        h.push(dual_term(cfg.h, cfg.mu_h, uniform_vec(&mut rng, r))?);
    }
    let f: Arc<dyn SmoothOracle> = if cfg.f_weight > 0.0 && m > 1 {
        let pairs: Vec<(usize, usize)> = if m == 2 { vec![(0, 1)] } else { (0..m).map(|i| (i, (i + 1) % m)).collect() };
        let terms: Vec<CouplingTerm> = pairs
            .into_iter()
            .map(|(i, j)| CouplingTerm {
                i,
                j,
                weight: cfg.f_weight,
                offset: uniform_vec(&mut rng, n),
            })
            .collect();
        Arc::new(quadratic_coupling_smooth(m, &terms, &DMatrix::identity(n, n), NormOptions::default())?)
    } else {
        Arc::new(ZeroSmooth::new(&vec![n; m]))
    };
    let spec = ProblemSpec::new(dims, f, g, h, l)?;
    Ok(BuiltProblem::new(spec))
}

/// Quadratic problem with `L` and targets read from a file.
pub fn build_custom(cfg: &CustomConfig) -> Result<BuiltProblem> {
    let text = std::fs::read_to_string(&cfg.file)?;
    let data = parse_custom_problem(&text)?;
    if !(cfg.mu_g > 0.0) {
        return Err(Error::config("custom problem needs μ_g > 0"));
    }
    let dims = BlockDims::new(data.primal.clone(), data.dual.clone())?;
    let l = BlockLinearMap::from_dense(data.dual.clone(), data.primal.clone(), &data.l)?;
    let mut g: Vec<Arc<dyn ProxOracle>> = Vec::with_capacity(dims.m());
    let mut h = Vec::with_capacity(dims.m());
    let (mut po, mut ro) = (0, 0);
    for i in 0..dims.m() {
        let (ni, ri) = (data.primal[i], data.dual[i]);
        let lin = data.g_linear.rows(po, ni).into_owned();
        g.push(Arc::new(Quadratic::diagonal(DVector::from_element(ni, cfg.mu_g))?.with_linear(lin)?));
        h.push(dual_term(cfg.h, cfg.mu_h, data.targets.rows(ro, ri).into_owned())?);
        po += ni;
        ro += ri;
    }
    let spec = ProblemSpec::new(dims, Arc::new(ZeroSmooth::new(&data.primal)), g, h, l)?;
    Ok(BuiltProblem::new(spec))
}
