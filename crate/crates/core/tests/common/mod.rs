#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use pdelay::block::{BlockVector, NormOptions, PrimalDualPoint};
use pdelay::delay::{local_view, DelaySchedule, HistoryBuffer};
use pdelay::diagnostics::{reference_solution, ReferenceMode};
use pdelay::experiments::builders::build_quadratic_suite;
use pdelay::experiments::config::{DualKind, QuadraticSuiteConfig};
use pdelay::functions::*;
use pdelay::problem::{Coupling, ProblemSpec};
use pdelay::solvers::{Algorithm, IterateLog};
use pdelay::tuning::StepsizePlan;
use pdelay::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_like(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * (rng.gen::<f64>() - 0.5) * 2.0)
}

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> DVector<f64>>;

/// A library function with a sampler for points in its domain.
pub struct Entry {
    pub name: &'static str,
    pub q: Arc<dyn ProxOracle>,
    pub domain: Sampler,
}

fn whole(n: usize) -> Sampler {
    Box::new(move |r| gaussian_like(r, n, 3.0))
}

/// Every function kind of the library, with fixed random data.
pub fn library() -> Vec<Entry> {
    let mut r = rng(2024);
    let n = 5;
    let lo = DVector::from_vec(vec![-1.0, -2.0, 0.5, -0.1, -3.0]);
    let hi = DVector::from_vec(vec![1.0, -0.5, 2.0, 0.1, 3.0]);
    let b = gaussian_like(&mut r, 3, 1.0);
    let a = DMatrix::from_fn(n, n, |_, _| r.gen::<f64>() - 0.5);
    let dense_q = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    let labels = DVector::from_vec(vec![1.0, -1.0, 1.0, 1.0, -1.0]);
    let targets = gaussian_like(&mut r, n, 2.0);
    let lin = gaussian_like(&mut r, n, 1.0);

    let boxed = BoxIndicator::new(lo.clone(), hi.clone()).unwrap();
    let point = PointIndicator::new(b.clone());
    let in_box = {
        let (lo, hi) = (lo.clone(), hi.clone());
        move |r: &mut ChaCha8Rng| DVector::from_fn(lo.len(), |j, _| lo[j] + r.gen::<f64>() * (hi[j] - lo[j]))
    };
    let b_stacked = b.clone();
    let stacked = SeparableSum::new(vec![Arc::new(point.clone()), Arc::new(boxed.clone())]).unwrap();
    vec![
        Entry { name: "zero", q: Arc::new(Zero { dim: n }), domain: whole(n) },
        Entry { name: "squared_norm", q: Arc::new(SquaredNorm::new(n, 1.0).unwrap()), domain: whole(n) },
        Entry { name: "squared_norm_scaled", q: Arc::new(SquaredNorm::new(n, 2.5).unwrap()), domain: whole(n) },
        Entry {
            name: "quadratic_diagonal",
            q: Arc::new(
                Quadratic::diagonal(DVector::from_vec(vec![0.0, 0.5, 1.0, 2.0, 4.0]))
                    .unwrap()
                    .with_linear(lin.clone())
                    .unwrap(),
            ),
            domain: whole(n),
        },
        Entry { name: "quadratic_dense", q: Arc::new(Quadratic::dense(dense_q).unwrap()), domain: whole(n) },
        Entry { name: "box", q: Arc::new(boxed), domain: Box::new(in_box.clone()) },
        Entry { name: "point", q: Arc::new(point), domain: Box::new(move |_| b.clone()) },
        Entry { name: "logistic", q: Arc::new(LogisticLoss::new(labels).unwrap()), domain: whole(n) },
        Entry { name: "squared_loss", q: Arc::new(SquaredLoss::new(targets)), domain: whole(n) },
        Entry { name: "elastic_net", q: Arc::new(ElasticNet::new(n, 0.7, 0.3).unwrap()), domain: whole(n) },
        Entry { name: "lasso", q: Arc::new(ElasticNet::new(n, 1.3, 0.0).unwrap()), domain: whole(n) },
        Entry {
            name: "point_and_box",
            q: Arc::new(stacked),
            domain: {
                let b = b_stacked;
                Box::new(move |r| {
                    let tail = in_box(r);
                    DVector::from_iterator(8, b.iter().copied().chain(tail.iter().copied()))
                })
            },
        },
    ]
}

/// Largest relative violation of the prox characterization
/// `q(r) − q(p) ≥ ⟨ω − p, r − p⟩/ρ + (μ/2)‖r − p‖²`, `p = prox_{ρq}(ω)`.
pub fn characterization_violation(e: &Entry, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = e.q.dim().unwrap();
    let mu = e.q.modulus();
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let rho = 10f64.powf(r.gen_range(-2.0..1.5));
        let omega = gaussian_like(&mut r, n, 5.0);
        let point = (e.domain)(&mut r);
        let p = e.q.prox(rho, &omega).unwrap();
        let lhs = e.q.eval(&point).unwrap() - e.q.eval(&p).unwrap();
        let d = &point - &p;
        let rhs = (&omega - &p).dot(&d) / rho + 0.5 * mu * d.norm_squared();
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        worst = worst.max((rhs - lhs) / scale);
    }
    worst
}

/// Largest `‖prox_{σh*}(v) + σ·prox_{h/σ}(v/σ) − v‖ / (1 + ‖v‖)`.
pub fn moreau_residual(e: &Entry, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = e.q.dim().unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let sigma = 10f64.powf(r.gen_range(-2.0..1.0));
        let v = gaussian_like(&mut r, n, 4.0);
        let dual = moreau_conjugate_prox(&*e.q, sigma, &v).unwrap();
        let primal = e.q.prox(1.0 / sigma, &(&v / sigma)).unwrap();
        worst = worst.max((dual + primal * sigma - &v).norm() / (1.0 + v.norm()));
    }
    worst
}

/// Largest `‖prox(v) − prox(v′)‖ / ‖v − v′‖`.
pub fn expansion(e: &Entry, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = e.q.dim().unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let rho = 10f64.powf(r.gen_range(-2.0..1.5));
        let v = gaussian_like(&mut r, n, 5.0);
        let spread = 10f64.powf(r.gen_range(-3.0..1.0));
        let w = &v + gaussian_like(&mut r, n, spread);
        let dp = (e.q.prox(rho, &v).unwrap() - e.q.prox(rho, &w).unwrap()).norm();
        worst = worst.max(dp / (&v - &w).norm());
    }
    worst
}

/// Largest relative central-difference gradient error of `f` at random points.
pub fn gradient_error(f: &dyn SmoothOracle, dims: &[usize], samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let x = BlockVector::from_blocks(dims.iter().map(|&n| gaussian_like(&mut r, n, 1.0)).collect());
        let g = f.grad(&x);
        let mut fd = BlockVector::zeros(dims);
        for i in 0..dims.len() {
            for c in 0..dims[i] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.block_mut(i)[c] += h;
                xm.block_mut(i)[c] -= h;
                fd.block_mut(i)[c] = (f.eval(&xp) - f.eval(&xm)) / (2.0 * h);
            }
        }
        worst = worst.max(g.sub(&fd).norm() / g.norm().max(1.0));
    }
    worst
}

/// Largest ratio `‖∇_i f(x) − ∇_i f(x′)‖ / (β̄_i‖x − x′‖)` over pairs with `x_i = x′_i`.
pub fn beta_bar_ratio(f: &dyn SmoothOracle, dims: &[usize], samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0_f64;
    for s in 0..samples {
        let i = s % dims.len();
        let x = BlockVector::from_blocks(dims.iter().map(|&n| gaussian_like(&mut r, n, 2.0)).collect());
        let mut y = BlockVector::from_blocks(dims.iter().map(|&n| gaussian_like(&mut r, n, 2.0)).collect());
        y.set_block(i, x.block(i).clone()).unwrap();
        let num = (f.grad_block(i, &x) - f.grad_block(i, &y)).norm();
        let den = f.beta_bar()[i] * x.sub(&y).norm();
        if num > 0.0 {
            worst = worst.max(num / den);
        }
    }
    worst
}

/// A random ring-coupled quadratic `f` on `m` blocks of size `n`.
pub fn random_coupling(m: usize, n: usize, seed: u64) -> QuadraticSmooth {
    let mut r = rng(seed);
    let c_hat = DMatrix::from_fn(2, n, |_, _| r.gen::<f64>() - 0.5);
    let terms: Vec<CouplingTerm> = (0..m)
        .map(|i| CouplingTerm {
            i,
            j: (i + 1) % m,
            weight: 0.5 + r.gen::<f64>(),
            offset: gaussian_like(&mut r, 2, 1.0),
        })
        .collect();
    quadratic_coupling_smooth(m, &terms, &c_hat, NormOptions::default()).unwrap()
}

pub fn suite_config(coupling: Coupling, seed: u64) -> QuadraticSuiteConfig {
    QuadraticSuiteConfig {
        m: 4,
        n: 3,
        r: 2,
        coupling,
        seed,
        mu_g: 1.0,
        mu_h: 1.0,
        h: DualKind::Smooth,
        f_weight: 0.5,
        density: 0.5,
    }
}

pub fn suite(coupling: Coupling, seed: u64) -> ProblemSpec {
    build_quadratic_suite(&suite_config(coupling, seed)).unwrap().spec
}

pub fn exact(spec: &ProblemSpec) -> PrimalDualPoint {
    reference_solution(spec, ReferenceMode::ExactQuadratic).unwrap()
}

pub fn random_point(spec: &ProblemSpec, seed: u64, scale: f64) -> PrimalDualPoint {
    let mut r = rng(seed);
    let dims = spec.dims();
    let x = BlockVector::from_blocks(dims.primal().iter().map(|&n| gaussian_like(&mut r, n, scale)).collect());
    let u = BlockVector::from_blocks(dims.dual().iter().map(|&n| gaussian_like(&mut r, n, scale)).collect());
    PrimalDualPoint::new(dims, x, u).unwrap()
}

pub fn schedules(bound: usize, seed: u64) -> Vec<(&'static str, DelaySchedule)> {
    vec![
        ("none", DelaySchedule::none()),
        ("fixed", DelaySchedule::fixed(bound, bound).unwrap()),
        ("uniform_random", DelaySchedule::uniform_random(bound, seed)),
        ("adversarial_max", DelaySchedule::adversarial_max(bound)),
    ]
}

pub fn algorithms() -> [Algorithm; 3] {
    [Algorithm::VuCondatDelayed, Algorithm::AhuDelayed, Algorithm::AhuRandomized]
}

/// A history whose every stored entry is `z`.
pub fn constant_history(z: &PrimalDualPoint, bound: usize) -> HistoryBuffer {
    HistoryBuffer::new(z.clone(), bound)
}

/// Dense synchronous iterations written out directly.
pub fn straight_line(spec: &ProblemSpec, plan: &StepsizePlan, z0: &PrimalDualPoint, iters: usize, vu_condat: bool) -> Vec<DVector<f64>> {
    let l = spec.l().to_dense();
    let (h, c) = spec.f().quadratic().expect("quadratic f");
    let (h, c) = (h.to_dense(), c.to_flat());
    let dims = spec.dims();
    let gam = pdelay::block::expand(&plan.gamma, dims.primal());
    let sig = pdelay::block::expand(&plan.sigma, dims.dual());
    let split = |v: &DVector<f64>, sizes: &[usize]| BlockVector::from_flat(sizes, v).unwrap();
    let mut x = z0.x.to_flat();
    let mut u = z0.u.to_flat();
    let mut out = vec![];
    for _ in 0..iters {
        let grad = &h * &x + &c + l.transpose() * &u;
        let arg = split(&(&x - grad.component_mul(&gam)), dims.primal());
        let xn = BlockVector::from_blocks(
            (0..spec.m()).map(|i| spec.g(i).prox(plan.gamma[i], arg.block(i)).unwrap()).collect(),
        )
        .to_flat();
        let dual_in = if vu_condat { &xn * 2.0 - &x } else { x.clone() };
        let arg = split(&(&u + (&l * dual_in).component_mul(&sig)), dims.dual());
        let un = BlockVector::from_blocks(
            (0..spec.m()).map(|i| spec.h(i).prox_conjugate(plan.sigma[i], arg.block(i)).unwrap()).collect(),
        )
        .to_flat();
        x = xn;
        u = un;
        out.push(DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied()));
    }
    out
}

/// Largest relative violation of
/// `‖z^k − z^k[i]‖ ≤ Σ_{t=max(k−B,0)}^{k−1} ‖z^{t+1} − z^t‖` over a trajectory,
/// measured on the blocks agent `i` actually reads.
pub fn staleness_violation(log: &IterateLog, spec: &ProblemSpec, sched: &DelaySchedule) -> f64 {
    let b = sched.bound();
    let snaps: Vec<_> = log.records.iter().map(|r| r.snapshot.clone().unwrap()).collect();
    let steps: Vec<f64> = snaps.windows(2).map(|w| w[1].sub(&w[0]).norm()).collect();
    let sets = spec.coupling_sets();
    let mut hist = HistoryBuffer::new(snaps[0].clone(), b);
    let mut worst = 0.0_f64;
    for k in 0..snaps.len() {
        if k > 0 {
            hist.record(snaps[k].clone());
        }
        let budget: f64 = steps[k.saturating_sub(b)..k].iter().sum();
        for i in 0..spec.m() {
            let view = local_view(&hist, sched, &sets, i).unwrap();
            let mut gap = 0.0;
            for j in 0..spec.m() {
                if view.is_populated(j, Side::Primal) {
                    gap += (snaps[k].x.block(j) - view.x().block(j)).norm_squared();
                }
                if view.is_populated(j, Side::Dual) {
                    gap += (snaps[k].u.block(j) - view.u().block(j)).norm_squared();
                }
            }
            let gap = gap.sqrt();
            if gap > 0.0 {
                worst = worst.max((gap - budget) / budget.max(f64::MIN_POSITIVE));
            }
        }
    }
    worst
}
