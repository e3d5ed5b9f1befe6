//! Ordering analysis of the 3-node, 1-D PLSOM.
//!
//! Weights `(w0, w1, w2)` with `w0 <= w2 <= w1` and `w0 < w1` form the
//! unordered subspace `U`; every other unordered configuration is a mirror
//! or inversion of one in `U`. The expected update under uniform inputs on
//! `[0, 1]` is computed in closed form with the simplified linear-neighborhood
//! update, and [`verify_unordered_subspace`] sweeps a grid over `U` checking
//! that the expected update moves every point toward an ordered attractor.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, WeightMatrix};
use crate::plsom::{PlsomParams, PlsomTrainer, ThetaVariant};
use crate::rng::{streams, SeedStream};
use crate::som::{SomParams, SomTrainer};
use crate::trainer::Trainer;

/// True iff `w` is strictly increasing or strictly decreasing.
pub fn is_ordered(w: &[f64]) -> bool {
    w.windows(2).all(|p| p[0] < p[1]) || w.windows(2).all(|p| p[0] > p[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightTriple {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
}

impl WeightTriple {
    pub fn new(w0: f64, w1: f64, w2: f64) -> Self {
        WeightTriple { w0, w1, w2 }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w0, self.w1, self.w2]
    }

    pub fn in_unordered_subspace(&self) -> bool {
        let WeightTriple { w0, w1, w2 } = *self;
        w0 <= w2 && w2 <= w1 && w0 < w1 && (0.0..1.0).contains(&w0) && (0.0..=1.0).contains(&w2) && w1 > 0.0 && w1 <= 1.0
    }

    fn require_unordered(&self) -> Result<()> {
        if self.in_unordered_subspace() {
            Ok(())
        } else {
            Err(Error::OutsideUnordered(self.as_array()))
        }
    }
}

/// Single-input update of node `n` when `c` wins:
/// `(|x - w_c| / r) (1 - |c - n| / beta) (x - w_n)`.
pub fn simplified_update(x: f64, w: &WeightTriple, n: usize, c: usize, r: f64, beta: f64) -> f64 {
    let w = w.as_array();
    (x - w[c]).abs() / r * (1.0 - c.abs_diff(n) as f64 / beta) * (x - w[n])
}

/// How the per-winner integrals are weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prefactors {
    /// Plain expectation under the uniform density.
    #[default]
    Plain,
    /// Each winner integral additionally multiplied by its region length,
    /// as in the printed form of the expected update.
    RegionLength,
}

/// Winner resolution on the planes `w0 = w2` and `w2 = w1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    /// Tied nodes resolve to the lower index, as in winner search.
    #[default]
    LowerIndex,
    /// Regions at their limit from the interior of `U`.
    InteriorLimit,
}

/// Winner regions `[start, end]` for nodes 0, 1, 2.
fn winner_regions(w: &WeightTriple, ties: Ties) -> [(f64, f64); 3] {
    let m02 = 0.5 * (w.w0 + w.w2);
    let m21 = 0.5 * (w.w2 + w.w1);
    let mut r = [(0.0, m02), (m21, 1.0), (m02, m21)];
    if ties == Ties::LowerIndex {
        if w.w0 == w.w2 {
            r[0] = (0.0, m21);
            r[2] = (m21, m21);
        } else if w.w2 == w.w1 {
            r[1] = (m02, 1.0);
            r[2] = (m02, m02);
        }
    }
    r
}

/// `\int_a^b |x - wc| (x - wn) dx`, exact for the piecewise quadratic.
fn region_integral(a: f64, b: f64, wc: f64, wn: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // y = x - wc: integrand y (y + wc - wn) with antiderivative p
    let k = wc - wn;
    let p = |y: f64| y * y * (y / 3.0 + 0.5 * k);
    let mut total = 0.0;
    if a < wc {
        let hi = b.min(wc);
        total -= p(hi - wc) - p(a - wc);
    }
    if b > wc {
        let lo = a.max(wc);
        total += p(b - wc) - p(lo - wc);
    }
    total
}

fn update_vector_unchecked(w: &WeightTriple, r: f64, beta: f64, prefactors: Prefactors, ties: Ties) -> [f64; 3] {
    let regions = winner_regions(w, ties);
    let ws = w.as_array();
    let mut u = [0.0; 3];
    for (c, &(a, b)) in regions.iter().enumerate() {
        if b <= a {
            continue;
        }
        let pre = match prefactors {
            Prefactors::Plain => 1.0,
            Prefactors::RegionLength => b - a,
        };
        for (n, un) in u.iter_mut().enumerate() {
            let h = 1.0 - c.abs_diff(n) as f64 / beta;
            *un += pre * h / r * region_integral(a, b, ws[c], ws[n]);
        }
    }
    u
}

/// Expected single-step update `[u0, u1, u2]` of a point of `U` under
/// uniform inputs on `[0, 1]`.
pub fn expected_update_vector(w: &WeightTriple, r: f64, beta: f64) -> Result<[f64; 3]> {
    expected_update_vector_with(w, r, beta, Prefactors::Plain, Ties::LowerIndex)
}

pub fn expected_update_vector_with(
    w: &WeightTriple,
    r: f64,
    beta: f64,
    prefactors: Prefactors,
    ties: Ties,
) -> Result<[f64; 3]> {
    w.require_unordered()?;
    if !(r > 0.0) || !(beta > 0.0) {
        return Err(Error::invalid(format!("r and beta must be > 0, got r={r}, beta={beta}")));
    }
    Ok(update_vector_unchecked(w, r, beta, prefactors, ties))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub attractor: [f64; 3],
    pub spacing: f64,
    /// Largest field value a sample point may take.
    pub threshold: f64,
    /// Upper bound on the gradient length of the field.
    pub gradient_bound: f64,
    pub r: f64,
    pub beta: f64,
    #[serde(default)]
    pub prefactors: Prefactors,
    /// Violations kept in the report (all are counted).
    pub max_reported_violations: usize,
}

pub const COARSE_SPACING: f64 = 5e-3;
pub const FULL_SPACING: f64 = 1.53959e-4;

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            attractor: [377.0 / 1000.0, 121.0 / 200.0, 7.0 / 10.0],
            spacing: COARSE_SPACING,
            threshold: -2.2e-3,
            gradient_bound: 16.5,
            r: 1.0,
            beta: 2.0,
            prefactors: Prefactors::Plain,
            max_reported_violations: 1000,
        }
    }
}

impl VerifierConfig {
    pub fn full_scale() -> Self {
        VerifierConfig { spacing: FULL_SPACING, ..VerifierConfig::default() }
    }

    /// Largest spacing for which every point of the cube is within
    /// `|threshold| / gradient_bound` of a grid point (half the cube
    /// diagonal, `s sqrt(3) / 2`).
    pub fn max_admissible_spacing(&self) -> f64 {
        2.0 * self.threshold.abs() / (3f64.sqrt() * self.gradient_bound)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing <= 1.0) {
            return Err(Error::invalid(format!("spacing must be in (0, 1], got {}", self.spacing)));
        }
        if !(self.threshold < 0.0) {
            return Err(Error::invalid(format!("threshold must be < 0, got {}", self.threshold)));
        }
        if !(self.gradient_bound > 0.0) {
            return Err(Error::invalid(format!("gradient bound must be > 0, got {}", self.gradient_bound)));
        }
        if !(self.r > 0.0) || !(self.beta > 0.0) {
            return Err(Error::invalid("r and beta must be > 0"));
        }
        if !self.attractor.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("attractor {:?} lies outside the unit cube", self.attractor)));
        }
        Ok(())
    }

    /// Axis sample values `k s`, plus 1 when the grid stops short of it.
    fn axis(&self) -> Vec<f64> {
        let k = (1.0 / self.spacing + 1e-9).floor() as usize;
        let mut v: Vec<f64> = (0..=k).map(|i| i as f64 * self.spacing).collect();
        if 1.0 - v[k] > 1e-12 {
            v.push(1.0);
        } else {
            v[k] = 1.0;
        }
        v
    }
}

/// `||w + u - t||_1 - ||w - t||_1`; negative when the expected update moves
/// `w` toward the attractor.
pub fn field_value(w: &WeightTriple, cfg: &VerifierConfig) -> Result<f64> {
    w.require_unordered()?;
    Ok(field_value_with(w, cfg, Ties::LowerIndex))
}

fn field_value_with(w: &WeightTriple, cfg: &VerifierConfig, ties: Ties) -> f64 {
    let u = update_vector_unchecked(w, cfg.r, cfg.beta, cfg.prefactors, ties);
    l1_step(&w.as_array(), &u, &cfg.attractor)
}

fn l1_step(w: &[f64; 3], u: &[f64; 3], t: &[f64; 3]) -> f64 {
    (0..3).map(|k| (w[k] + u[k] - t[k]).abs() - (w[k] - t[k]).abs()).sum()
}

/// Sweep value at a grid point: on a tie plane the interior limit is
/// checked as well, so the covering argument holds from both sides.
fn sweep_value(w: &WeightTriple, cfg: &VerifierConfig) -> f64 {
    let v = field_value_with(w, cfg, Ties::LowerIndex);
    if w.w0 == w.w2 || w.w2 == w.w1 {
        v.max(field_value_with(w, cfg, Ties::InteriorLimit))
    } else {
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub point: WeightTriple,
    pub value: f64,
}

/// Partial sweep result over the `w0` slabs `0..next_slab`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tally {
    points: u64,
    max_value: f64,
    argmax: Option<WeightTriple>,
    violation_count: u64,
    violations: Vec<Violation>,
}

impl Tally {
    fn empty() -> Self {
        Tally { points: 0, max_value: f64::NEG_INFINITY, argmax: None, violation_count: 0, violations: Vec::new() }
    }

    /// Merge `later`, which covers slabs after all of `self`'s.
    fn absorb(&mut self, later: Tally, keep: usize) {
        self.points += later.points;
        if later.max_value > self.max_value {
            self.max_value = later.max_value;
            self.argmax = later.argmax;
        }
        self.violation_count += later.violation_count;
        let room = keep.saturating_sub(self.violations.len());
        self.violations.extend(later.violations.into_iter().take(room));
    }
}

fn sweep_slab(axis: &[f64], i0: usize, cfg: &VerifierConfig) -> Tally {
    let mut t = Tally::empty();
    let w0 = axis[i0];
    if w0 >= 1.0 {
        return t;
    }
    for (i2, &w2) in axis.iter().enumerate().skip(i0) {
        for &w1 in &axis[i2.max(i0 + 1)..] {
            let w = WeightTriple { w0, w1, w2 };
            let v = sweep_value(&w, cfg);
            t.points += 1;
            if v > t.max_value {
                t.max_value = v;
                t.argmax = Some(w);
            }
            if !(v <= cfg.threshold) {
                t.violation_count += 1;
                if t.violations.len() < cfg.max_reported_violations {
                    t.violations.push(Violation { point: w, value: v });
                }
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub config: VerifierConfig,
    pub points_checked: u64,
    pub max_field_value: f64,
    pub argmax: Option<WeightTriple>,
    pub violation_count: u64,
    /// The first violations in sweep order `(w0, w2, w1)`.
    pub violations: Vec<Violation>,
    pub passes: bool,
    pub max_admissible_spacing: f64,
    /// An unordered attractor can serve as a negative control but proves nothing.
    pub attractor_ordered: bool,
    /// Whether passing at this spacing, with an ordered attractor, implies
    /// negativity on all of `U`.
    pub certifies_subspace: bool,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    config: VerifierConfig,
    next_slab: usize,
    tally: Tally,
}

/// Checkpointing for long sweeps.
#[derive(Debug, Clone)]
pub struct SweepCheckpoint {
    pub path: PathBuf,
    /// Points between checkpoint writes.
    pub every: u64,
}

impl SweepCheckpoint {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        SweepCheckpoint { path: path.into(), every: 10_000_000 }
    }
}

fn load_checkpoint(path: &Path, cfg: &VerifierConfig) -> Result<Option<Checkpoint>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if cp.config != *cfg {
        return Err(Error::invalid(format!("checkpoint {} was written for a different configuration", path.display())));
    }
    Ok(Some(cp))
}

fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(cp)?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Sweep the grid of spacing `cfg.spacing` over `U` (boundary included).
/// The result does not depend on the number of worker threads.
pub fn verify_unordered_subspace(cfg: &VerifierConfig) -> Result<VerificationReport> {
    verify_unordered_subspace_with(cfg, None, |_, _| {})
}

/// As [`verify_unordered_subspace`], resuming from and writing to an
/// optional checkpoint and reporting `(points_done, slabs_done)`.
pub fn verify_unordered_subspace_with(
    cfg: &VerifierConfig,
    checkpoint: Option<&SweepCheckpoint>,
    mut progress: impl FnMut(u64, usize),
) -> Result<VerificationReport> {
    cfg.validate()?;
    let start = Instant::now();
    let axis = cfg.axis();
    let n = axis.len();
    let (mut next, mut tally) = match checkpoint.map(|c| load_checkpoint(&c.path, cfg)).transpose()?.flatten() {
        Some(cp) => (cp.next_slab, cp.tally),
        None => (0, Tally::empty()),
    };
    let batch = checkpoint.map_or(10_000_000, |c| c.every.max(1));
    let mut since_save = 0u64;
    while next < n {
        let mut end = next;
        let mut planned = 0u64;
        while end < n && planned < batch {
            let rest = (n - end) as u64;
            planned += rest * (rest + 1) / 2;
            end += 1;
        }
        let parts: Vec<Tally> = (next..end).into_par_iter().map(|i0| sweep_slab(&axis, i0, cfg)).collect();
        for p in parts {
            since_save += p.points;
            tally.absorb(p, cfg.max_reported_violations);
        }
        next = end;
        progress(tally.points, next);
        if let Some(c) = checkpoint {
            if since_save >= c.every || next == n {
                save_checkpoint(&c.path, &Checkpoint { config: cfg.clone(), next_slab: next, tally: tally.clone() })?;
                since_save = 0;
            }
        }
    }
    let passes = tally.violation_count == 0 && tally.max_value <= cfg.threshold;
    let max_admissible_spacing = cfg.max_admissible_spacing();
    Ok(VerificationReport {
        config: cfg.clone(),
        points_checked: tally.points,
        max_field_value: tally.max_value,
        argmax: tally.argmax,
        violation_count: tally.violation_count,
        violations: tally.violations,
        passes,
        max_admissible_spacing,
        attractor_ordered: is_ordered(&cfg.attractor),
        certifies_subspace: passes && is_ordered(&cfg.attractor) && cfg.spacing <= max_admissible_spacing,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Outcome of one randomized lemma suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub lemma: String,
    pub trials: u64,
    pub violations: u64,
    /// The first few counterexamples, verbatim.
    pub counterexamples: Vec<String>,
}

impl LemmaOutcome {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub seed: u64,
    pub outcomes: Vec<LemmaOutcome>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(LemmaOutcome::passed)
    }
}

const KEPT_COUNTEREXAMPLES: usize = 10;
const LEMMA_CHUNK: u64 = 4096;

fn random_plsom_params(rng: &mut SeedStream, beta_lo: f64) -> PlsomParams {
    let variant = [ThetaVariant::Linear, ThetaVariant::Affine, ThetaVariant::Log][rng.index(3)];
    let beta = rng.uniform_range(beta_lo, 12.0);
    let theta_min = rng.uniform_range(0.0, beta.min(2.0));
    PlsomParams::new(beta, theta_min, variant).expect("valid by construction")
}

fn line_lattice(n: usize) -> Lattice {
    Lattice::euclidean(&[n]).expect("n >= 1")
}

/// Lemma 1: no weight component crosses the input, and `|dw| <= |x - w|`.
fn lemma1_trial(rng: &mut SeedStream) -> Result<Option<String>> {
    let nodes = 2 + rng.index(19);
    let dim = 1 + rng.index(3);
    let w: Vec<f64> = (0..nodes * dim).map(|_| rng.uniform()).collect();
    let x: Vec<f64> = (0..dim).map(|_| rng.uniform_range(-0.25, 1.25)).collect();
    let before = WeightMatrix::from_flat(nodes, dim, w)?;
    let lattice = line_lattice(nodes);
    let after = if rng.uniform() < 0.5 {
        let mut t = PlsomTrainer::new(lattice, random_plsom_params(rng, 0.5), before.clone())?;
        if rng.uniform() < 0.8 {
            t.set_r(rng.uniform_range(1e-3, 2.0))?;
        }
        t.step(&x)?;
        t.weights().clone()
    } else {
        let p = SomParams::new(rng.uniform_range(0.0, 1.0), rng.uniform_range(0.1, 10.0), 0.99, 0.99)?;
        let mut t = SomTrainer::new(lattice, p, before.clone())?;
        t.step(&x)?;
        t.weights().clone()
    };
    for i in 0..nodes {
        for k in 0..dim {
            let (b, a) = (before.row(i)[k], after.row(i)[k]);
            let crossed = (b - x[k]) * (a - x[k]) < 0.0;
            if crossed || (a - b).abs() > (x[k] - b).abs() {
                return Ok(Some(format!("node {i} axis {k}: w {b:?} -> {a:?}, x {:?}", x[k])));
            }
        }
    }
    Ok(None)
}

/// Lemma 2: an ordered 1-D map stays ordered after any input.
fn lemma2_trial(rng: &mut SeedStream) -> Result<Option<String>> {
    let nodes = 3 + rng.index(48);
    let mut w: Vec<f64> = (0..nodes).map(|_| rng.uniform()).collect();
    w.sort_by(f64::total_cmp);
    if rng.uniform() < 0.5 {
        w.reverse();
    }
    if !is_ordered(&w) {
        return Ok(None);
    }
    let x = rng.uniform_range(-0.25, 1.25);
    let before = w.clone();
    let mut t = PlsomTrainer::new(line_lattice(nodes), random_plsom_params(rng, 0.5), WeightMatrix::from_flat(nodes, 1, w)?)?;
    if rng.uniform() < 0.8 {
        t.set_r(rng.uniform_range(1e-3, 2.0))?;
    }
    t.step(&[x])?;
    let after = t.weights().as_flat();
    if is_ordered(after) {
        Ok(None)
    } else {
        Ok(Some(format!("x {x:?}: {before:?} -> {after:?}")))
    }
}

/// Lemma 3: a constant map becomes ordered after its first input. Maps are
/// kept short and `|x - a|` away from zero so that neighboring updates stay
/// distinguishable in double precision.
fn lemma3_trial(rng: &mut SeedStream) -> Result<Option<String>> {
    let nodes = 3 + rng.index(6);
    let a = rng.uniform();
    let mut x = rng.uniform();
    if (x - a).abs() < 1e-3 {
        x = if a < 0.5 { a + 0.5 } else { a - 0.5 };
    }
    let params = random_plsom_params(rng, 2.0);
    let mut t = PlsomTrainer::new(line_lattice(nodes), params, WeightMatrix::from_flat(nodes, 1, vec![a; nodes])?)?;
    t.step(&[x])?;
    let after = t.weights().as_flat();
    if is_ordered(after) {
        Ok(None)
    } else {
        Ok(Some(format!("a {a:?}, x {x:?}, {params:?}: -> {after:?}")))
    }
}

fn run_suite(
    name: &str,
    seed: u64,
    suite: u64,
    trials: u64,
    trial: fn(&mut SeedStream) -> Result<Option<String>>,
) -> Result<LemmaOutcome> {
    let chunks = trials.div_ceil(LEMMA_CHUNK);
    let found: Vec<Vec<String>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = SeedStream::new(seed, (streams::PROPERTY << 40) | (suite << 32) | c);
            let count = LEMMA_CHUNK.min(trials - c * LEMMA_CHUNK);
            let mut bad = Vec::new();
            for _ in 0..count {
                if let Some(msg) = trial(&mut rng)? {
                    bad.push(msg);
                }
            }
            Ok(bad)
        })
        .collect::<Result<_>>()?;
    let violations = found.iter().map(|v| v.len() as u64).sum();
    let counterexamples = found.into_iter().flatten().take(KEPT_COUNTEREXAMPLES).collect();
    Ok(LemmaOutcome { lemma: name.to_string(), trials, violations, counterexamples })
}

/// Randomized checks of the no-overshoot, order-preservation and
/// constant-map lemmas. Lemma 1 covers both trainers; 2 and 3 the PLSOM.
pub fn lemma_property_suites(seed: u64, trials: u64) -> Result<LemmaReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    Ok(LemmaReport {
        seed,
        outcomes: vec![
            run_suite("no_overshoot", seed, 1, trials, lemma1_trial)?,
            run_suite("order_preserved", seed, 2, trials, lemma2_trial)?,
            run_suite("constant_map_orders", seed, 3, trials, lemma3_trial)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_examples() {
        assert!(is_ordered(&[0.1, 0.5, 0.9]));
        assert!(is_ordered(&[0.9, 0.5, 0.1]));
        assert!(!is_ordered(&[0.1, 0.9, 0.5]));
        assert!(!is_ordered(&[0.1, 0.1, 0.5]));
    }

    #[test]
    fn simplified_update_examples() {
        let w = WeightTriple::new(0.1, 0.7, 0.4);
        assert_eq!(simplified_update(0.7, &w, 1, 1, 1.0, 2.0), 0.0);
        assert_eq!(simplified_update(0.3, &w, 2, 0, 1.0, 2.0), 0.0);
        let v = simplified_update(0.8, &w, 0, 1, 1.0, 2.0);
        assert!((v - 0.035).abs() < 1e-15);
    }

    #[test]
    fn subspace_membership() {
        assert!(WeightTriple::new(0.2, 0.8, 0.5).in_unordered_subspace());
        assert!(WeightTriple::new(0.0, 1.0, 0.0).in_unordered_subspace());
        assert!(!WeightTriple::new(0.5, 0.5, 0.5).in_unordered_subspace());
        assert!(!WeightTriple::new(0.2, 0.8, 0.9).in_unordered_subspace());
        assert!(expected_update_vector(&WeightTriple::new(0.2, 0.5, 0.8), 1.0, 2.0).is_err());
    }

    #[test]
    fn region_integral_matches_simpson() {
        let cases = [(0.0, 1.0, 0.3, 0.7), (0.2, 0.4, 0.5, 0.1), (0.6, 0.9, 0.5, 0.9), (0.1, 0.1, 0.3, 0.2)];
        for (a, b, wc, wn) in cases {
            let f = |x: f64| (x - wc).abs() * (x - wn);
            // composite Simpson on each side of wc, exact for the quadratic pieces
            let mut pts = vec![a, b];
            if wc > a && wc < b {
                pts.insert(1, wc);
            }
            let simpson: f64 = pts.windows(2).map(|p| (p[1] - p[0]) / 6.0 * (f(p[0]) + 4.0 * f(0.5 * (p[0] + p[1])) + f(p[1]))).sum();
            assert!((region_integral(a, b, wc, wn) - simpson).abs() < 1e-15);
        }
    }

    #[test]
    fn tie_regions_follow_lower_index() {
        let w = WeightTriple::new(0.3, 0.9, 0.3);
        let r = winner_regions(&w, Ties::LowerIndex);
        assert_eq!(r[0], (0.0, 0.6));
        assert!(r[2].1 <= r[2].0);
        let w = WeightTriple::new(0.3, 0.9, 0.9);
        let r = winner_regions(&w, Ties::LowerIndex);
        assert_eq!(r[1], (0.6, 1.0));
        assert!(r[2].1 <= r[2].0);
    }

    #[test]
    fn field_value_examples() {
        let cfg = VerifierConfig::default();
        let w = WeightTriple::new(0.2, 0.8, 0.5);
        let u = expected_update_vector(&w, 1.0, 2.0).unwrap();
        let t = cfg.attractor;
        let expected: f64 = (0..3).map(|k| (w.as_array()[k] + u[k] - t[k]).abs() - (w.as_array()[k] - t[k]).abs()).sum();
        assert_eq!(field_value(&w, &cfg).unwrap(), expected);
        // at the attractor the value is |u|_1 (the attractor itself is ordered,
        // so check the expression directly)
        let ua = [0.01, -0.02, 0.003];
        assert!((l1_step(&t, &ua, &t) - 0.033).abs() < 1e-15);
        assert_eq!(l1_step(&[0.2, 0.8, 0.5], &[0.0; 3], &t), 0.0);
    }

    #[test]
    fn admissible_spacing_reproduces_full_scale_grid() {
        let cfg = VerifierConfig::full_scale();
        assert!((cfg.max_admissible_spacing() / 1.53959e-4 - 1.0).abs() < 1e-5);
        let n = 1.0 / cfg.spacing;
        let u_points = n * n * n / 6.0;
        assert!((u_points / 4.57e10 - 1.0).abs() < 0.01, "{u_points}");
    }

    #[test]
    fn tiny_sweep_is_thread_independent() {
        let cfg = VerifierConfig { spacing: 0.05, ..VerifierConfig::default() };
        let a = verify_unordered_subspace(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| verify_unordered_subspace(&cfg).unwrap());
        assert_eq!(a.points_checked, b.points_checked);
        assert_eq!(a.max_field_value, b.max_field_value);
        assert_eq!(a.violations, b.violations);
        // 21 axis values: pairs and triples in the closure of U minus the diagonal
        let n = 21u64;
        let expected = (0..n - 1).map(|i0| { let m = n - i0; m * (m - 1) / 2 + (m - 1) }).sum::<u64>();
        assert_eq!(a.points_checked, expected);
    }

    #[test]
    fn sweep_resumes_from_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = VerifierConfig { spacing: 0.02, ..VerifierConfig::default() };
        let full = verify_unordered_subspace(&cfg).unwrap();
        let cp = SweepCheckpoint { path: dir.path().join("cp.json"), every: 500 };
        let mut calls = 0;
        let first = verify_unordered_subspace_with(&cfg, Some(&cp), |_, _| calls += 1).unwrap();
        assert!(calls > 1);
        assert_eq!(first.points_checked, full.points_checked);
        // a finished checkpoint resumes to the same report
        let again = verify_unordered_subspace_with(&cfg, Some(&cp), |_, _| {}).unwrap();
        assert_eq!(again.points_checked, full.points_checked);
        assert_eq!(again.max_field_value, full.max_field_value);
        let other = VerifierConfig { spacing: 0.03, ..cfg };
        assert!(verify_unordered_subspace_with(&other, Some(&cp), |_, _| {}).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = VerifierConfig::default();
        for cfg in [
            VerifierConfig { spacing: 0.0, ..base.clone() },
            VerifierConfig { threshold: 0.1, ..base.clone() },
            VerifierConfig { gradient_bound: -1.0, ..base.clone() },
            VerifierConfig { attractor: [0.5, 1.2, 0.9], ..base.clone() },
        ] {
            assert!(verify_unordered_subspace(&cfg).is_err());
        }
    }

    #[test]
    fn unordered_attractor_is_a_negative_control() {
        let cfg = VerifierConfig { attractor: [0.9, 0.1, 0.5], spacing: 0.05, ..VerifierConfig::default() };
        let report = verify_unordered_subspace(&cfg).unwrap();
        assert!(!report.attractor_ordered && !report.certifies_subspace);
        assert!(report.violation_count > 0 && !report.passes);
    }

    #[test]
    fn lemma3_construction() {
        let mut t = PlsomTrainer::new(line_lattice(3), PlsomParams::affine(2.0).unwrap(), WeightMatrix::from_flat(3, 1, vec![0.5; 3]).unwrap()).unwrap();
        t.step(&[0.9]).unwrap();
        assert!(is_ordered(t.weights().as_flat()));
    }
}
