//! Bounded-delay message passing, simulated deterministically.
//!
//! Agent `i` reads block `j` of side `s` at iteration `k` with an age
//! `a ∈ [0, B]`, i.e. it sees `z_j^{τ}` with `τ = max(k − a, 0)`. Its own
//! blocks are always current. A [`HistoryBuffer`] keeps the last `B + 1`
//! iterates, which is all a bounded-age read can reach.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{BlockVector, PrimalDualPoint};
use crate::error::{Error, Result, Side};
use crate::problem::CouplingSets;

/// Explicit ages keyed by `(k, receiver, sender, side)`; missing entries mean age 0.
pub type DelayTable = BTreeMap<(usize, usize, usize, Side), usize>;

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// Synchronous: every read is fresh.
    None,
    /// Constant age.
    Fixed(usize),
    /// Independent uniform ages on `{0, …, B}` per `(i, j, k, side)`.
    UniformRandom { seed: u64 },
    /// Always the stalest legal value.
    AdversarialMax,
    Custom(DelayTable),
}

/// Delay pattern satisfying `0 ≤ k − τ_j^i(k) ≤ B` and `τ_i^i(k) = k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySchedule {
    kind: ScheduleKind,
    bound: usize,
    monotone: bool,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn draw_key(seed: u64, i: usize, j: usize, k: usize, side: Side) -> u64 {
    let mut h = mix(seed);
    for part in [i as u64, j as u64, k as u64, side as u64] {
        h = mix(h ^ part);
    }
    h
}

/// Builds a schedule. `kind = None` forces `B = 0`.
pub fn make_schedule(kind: ScheduleKind, bound: usize) -> Result<DelaySchedule> {
    let bound = match &kind {
        ScheduleKind::None => 0,
        ScheduleKind::Fixed(a) if *a > bound => {
            return Err(Error::config(format!("fixed age {a} exceeds the delay bound {bound}")))
        }
        _ => bound,
    };
    Ok(DelaySchedule {
        kind,
        bound,
        monotone: false,
    })
}

impl DelaySchedule {
    pub fn none() -> Self {
        Self {
            kind: ScheduleKind::None,
            bound: 0,
            monotone: false,
        }
    }

    pub fn fixed(age: usize, bound: usize) -> Result<Self> {
        make_schedule(ScheduleKind::Fixed(age), bound)
    }

    pub fn uniform_random(bound: usize, seed: u64) -> Self {
        Self {
            kind: ScheduleKind::UniformRandom { seed },
            bound,
            monotone: false,
        }
    }

    pub fn adversarial_max(bound: usize) -> Self {
        Self {
            kind: ScheduleKind::AdversarialMax,
            bound,
            monotone: false,
        }
    }

    /// A table-driven schedule. Entries are checked when read, so a bad table
    /// surfaces as a protocol error naming the offending `(i, j, k)`.
    pub fn custom(table: DelayTable, bound: usize) -> Self {
        Self {
            kind: ScheduleKind::Custom(table),
            bound,
            monotone: false,
        }
    }

    /// Clamps reads so that `τ_j^i(k)` never decreases in `k`.
    pub fn monotone(mut self) -> Self {
        self.monotone = true;
        self
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    fn raw_age(&self, i: usize, j: usize, k: usize, side: Side) -> usize {
        if i == j {
            if let ScheduleKind::Custom(t) = &self.kind {
                return t.get(&(k, i, j, side)).copied().unwrap_or(0);
            }
            return 0;
        }
        match &self.kind {
            ScheduleKind::None => 0,
            ScheduleKind::Fixed(a) => (*a).min(self.bound),
            ScheduleKind::UniformRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(draw_key(*seed, i, j, k, side));
                rng.gen_range(0..=self.bound)
            }
            ScheduleKind::AdversarialMax => self.bound.min(k),
            ScheduleKind::Custom(t) => t.get(&(k, i, j, side)).copied().unwrap_or(0),
        }
    }

    fn raw_tau(&self, i: usize, j: usize, k: usize, side: Side) -> Result<usize> {
        let a = self.raw_age(i, j, k, side);
        if i == j && a != 0 {
            return Err(Error::Protocol {
                agent: i,
                sender: j,
                iteration: k,
                side,
                detail: format!("own block read with age {a}"),
            });
        }
        if a > self.bound {
            return Err(Error::Protocol {
                agent: i,
                sender: j,
                iteration: k,
                side,
                detail: format!("age {a} exceeds the delay bound {}", self.bound),
            });
        }
        Ok(k.saturating_sub(a))
    }

    /// `τ_j^i(k)`: the iteration whose block `j` agent `i` reads at `k`.
    pub fn tau(&self, i: usize, j: usize, k: usize, side: Side) -> Result<usize> {
        if !self.monotone {
            return self.raw_tau(i, j, k, side);
        }
        // Every τ(k') ≤ k' so only the last B + 1 reads can beat τ(k) ≥ k − B.
        let mut best = 0;
        for kp in k.saturating_sub(self.bound)..=k {
            best = best.max(self.raw_tau(i, j, kp, side)?);
        }
        Ok(best)
    }

    /// `k − τ_j^i(k)`.
    pub fn age(&self, i: usize, j: usize, k: usize, side: Side) -> Result<usize> {
        Ok(k - self.tau(i, j, k, side)?)
    }
}

/// Reads a custom delay table.
///
/// Format, one record per line, `#` starts a comment:
///
/// ```text
/// bound <B>
/// <k> <receiver> <sender> <primal|dual> <age>
/// ```
///
/// The `bound` line must come first. Ages above the bound and duplicate keys
/// are rejected.
pub fn parse_delay_table(text: &str) -> Result<(DelayTable, usize)> {
    let mut bound = None;
    let mut table = DelayTable::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|e| Error::Parse {
                line,
                detail: format!("'{s}': {e}"),
            })
        };
        match (bound, fields.as_slice()) {
            (None, ["bound", b]) => bound = Some(parse_usize(b)?),
            (None, _) => {
                return Err(Error::Parse {
                    line,
                    detail: "expected 'bound <B>' before any record".into(),
                })
            }
            (Some(_), ["bound", _]) => {
                return Err(Error::Parse {
                    line,
                    detail: "duplicate bound line".into(),
                })
            }
            (Some(b), [k, i, j, side, age]) => {
                let side = match *side {
                    "primal" | "p" => Side::Primal,
                    "dual" | "d" => Side::Dual,
                    other => {
                        return Err(Error::Parse {
                            line,
                            detail: format!("unknown side '{other}'"),
                        })
                    }
                };
                let (k, i, j, age) = (parse_usize(k)?, parse_usize(i)?, parse_usize(j)?, parse_usize(age)?);
                if age > b {
                    return Err(Error::Parse {
                        line,
                        detail: format!("age {age} exceeds bound {b}"),
                    });
                }
                if i == j && age != 0 {
                    return Err(Error::Parse {
                        line,
                        detail: format!("agent {i} must read its own block with age 0"),
                    });
                }
                if table.insert((k, i, j, side), age).is_some() {
                    return Err(Error::Parse {
                        line,
                        detail: format!("duplicate entry for (k={k}, i={i}, j={j}, {side})"),
                    });
                }
            }
            (Some(_), _) => {
                return Err(Error::Parse {
                    line,
                    detail: format!("expected 5 fields, got {}", fields.len()),
                })
            }
        }
    }
    let bound = bound.ok_or(Error::Parse {
        line: 0,
        detail: "missing 'bound <B>' line".into(),
    })?;
    Ok((table, bound))
}

pub fn load_delay_table(path: &Path) -> Result<DelaySchedule> {
    let text = std::fs::read_to_string(path)?;
    let (table, bound) = parse_delay_table(&text)?;
    Ok(DelaySchedule::custom(table, bound))
}

/// Rolling window of the last `B + 1` iterates.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    bound: usize,
    entries: VecDeque<PrimalDualPoint>,
    k: usize,
}

impl HistoryBuffer {
    /// Starts the history at iteration 0 with `z0`.
    pub fn new(z0: PrimalDualPoint, bound: usize) -> Self {
        let mut entries = VecDeque::with_capacity(bound + 1);
        entries.push_back(z0);
        Self { bound, entries, k: 0 }
    }

    /// Appends `z^{k+1}`, evicting what falls out of the window.
    pub fn record(&mut self, z: PrimalDualPoint) {
        self.k += 1;
        self.entries.push_back(z);
        while self.entries.len() > self.bound + 1 {
            self.entries.pop_front();
        }
    }

    /// Index of the latest iterate.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> &PrimalDualPoint {
        self.entries.back().expect("history is never empty")
    }

    /// The iterate recorded at iteration `tau`.
    pub fn at(&self, tau: usize) -> Result<&PrimalDualPoint> {
        if tau > self.k || self.k - tau >= self.entries.len() {
            return Err(Error::structural(format!(
                "iterate {tau} is outside the history window ending at {}",
                self.k
            )));
        }
        Ok(&self.entries[self.entries.len() - 1 - (self.k - tau)])
    }

    /// The iterate `age` steps back, clamped at iteration 0.
    pub fn aged(&self, age: usize) -> Result<&PrimalDualPoint> {
        self.at(self.k.saturating_sub(age))
    }

    /// Number of reals currently stored.
    pub fn stored_reals(&self) -> usize {
        self.entries.iter().map(|z| z.x.len() + z.u.len()).sum()
    }
}

/// Agent `i`'s outdated copy `(x^k[i], u^k[i])`.
///
/// Blocks the agent never receives are zero-filled and marked unpopulated;
/// reading them through the accessors is a protocol error.
#[derive(Debug, Clone)]
pub struct LocalView {
    agent: usize,
    k: usize,
    x: BlockVector,
    u: BlockVector,
    x_tau: Vec<Option<usize>>,
    u_tau: Vec<Option<usize>>,
}

impl LocalView {
    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Full primal view; unpopulated blocks are zero.
    pub fn x(&self) -> &BlockVector {
        &self.x
    }

    /// Full dual view; unpopulated blocks are zero.
    pub fn u(&self) -> &BlockVector {
        &self.u
    }

    fn missing(&self, j: usize, side: Side) -> Error {
        Error::Protocol {
            agent: self.agent,
            sender: j,
            iteration: self.k,
            side,
            detail: "block was never delivered to this agent".into(),
        }
    }

    pub fn x_block(&self, j: usize) -> Result<&DVector<f64>> {
        match self.x_tau.get(j) {
            Some(Some(_)) => Ok(self.x.block(j)),
            _ => Err(self.missing(j, Side::Primal)),
        }
    }

    pub fn u_block(&self, j: usize) -> Result<&DVector<f64>> {
        match self.u_tau.get(j) {
            Some(Some(_)) => Ok(self.u.block(j)),
            _ => Err(self.missing(j, Side::Dual)),
        }
    }

    /// Iteration index of block `j` of `side`, if populated.
    pub fn tau(&self, j: usize, side: Side) -> Option<usize> {
        match side {
            Side::Primal => self.x_tau[j],
            Side::Dual => self.u_tau[j],
        }
    }

    pub fn is_populated(&self, j: usize, side: Side) -> bool {
        self.tau(j, side).is_some()
    }
}

/// Assembles agent `i`'s view of the latest recorded iterate.
pub fn local_view(
    buf: &HistoryBuffer,
    schedule: &DelaySchedule,
    coupling: &CouplingSets,
    i: usize,
) -> Result<LocalView> {
    let k = buf.k();
    let current = buf.latest();
    let m = current.x.num_blocks();
    if i >= m {
        return Err(Error::structural(format!("agent {i} out of range (m = {m})")));
    }
    if schedule.bound() > buf.bound() {
        return Err(Error::config(format!(
            "schedule bound {} exceeds the history window {}",
            schedule.bound(),
            buf.bound()
        )));
    }
    let mut x = BlockVector::zeros(&current.x.dims());
    let mut u = BlockVector::zeros(&current.u.dims());
    let mut x_tau = vec![None; m];
    let mut u_tau = vec![None; m];
    for j in coupling.primal_needs(i) {
        let tau = schedule.tau(i, j, k, Side::Primal)?;
        x.set_block(j, buf.at(tau)?.x.block(j).clone())?;
        x_tau[j] = Some(tau);
    }
    for j in coupling.dual_needs(i) {
        let tau = schedule.tau(i, j, k, Side::Dual)?;
        u.set_block(j, buf.at(tau)?.u.block(j).clone())?;
        u_tau[j] = Some(tau);
    }
    Ok(LocalView {
        agent: i,
        k,
        x,
        u,
        x_tau,
        u_tau,
    })
}
