//! Expected weight displacement under an input distribution.
//!
//! Everything here evaluates one hypothetical training step against a
//! frozen trainer state (SOM: current alpha and beta; PLSOM: current r) and
//! never mutates the trainer.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeedStream};
use crate::trainer::{accumulate_displacements, Trainer};

/// Probability that a Gaussian variable lands in `[z1, z2]`, with `z`
/// measured from the mean and `s` the reciprocal standard deviation:
/// `(erf(z2 s / sqrt 2) - erf(z1 s / sqrt 2)) / 2`.
pub fn interval_probability(z1: f64, z2: f64, s: f64) -> Result<f64> {
    if z1 > z2 {
        return Err(Error::invalid(format!("interval bounds out of order: {z1} > {z2}")));
    }
    if z1 == z2 {
        return Ok(0.0);
    }
    let k = s / std::f64::consts::SQRT_2;
    Ok(0.5 * (libm::erf(z2 * k) - libm::erf(z1 * k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionKind {
    UniformBox,
    /// Independent Gaussian per axis, conditioned on the support box.
    ClippedGaussian { mean: Vec<f64>, sd: f64 },
}

/// Input density over an axis-aligned support box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    pub kind: DistributionKind,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(skip)]
    norm: Vec<f64>,
}

impl InputDistribution {
    pub fn uniform(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        InputDistribution::build(DistributionKind::UniformBox, lo, hi)
    }

    pub fn clipped_gaussian(mean: Vec<f64>, sd: f64, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        InputDistribution::build(DistributionKind::ClippedGaussian { mean, sd }, lo, hi)
    }

    /// Uniform over `[lo, hi]^dim`.
    pub fn uniform_cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        InputDistribution::uniform(vec![lo; dim], vec![hi; dim])
    }

    /// The clipped `N(mean, sd^2)` distribution on `[0, 1]^dim`.
    pub fn clipped_gaussian_unit(dim: usize, mean: f64, sd: f64) -> Result<Self> {
        InputDistribution::clipped_gaussian(vec![mean; dim], sd, vec![0.0; dim], vec![1.0; dim])
    }

    fn build(kind: DistributionKind, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::invalid("support box bounds must be non-empty and of equal length"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::invalid(format!("support box {lo:?}..{hi:?} is empty or unbounded")));
        }
        let mut d = InputDistribution { kind, lo, hi, norm: Vec::new() };
        d.normalize()?;
        Ok(d)
    }

    fn normalize(&mut self) -> Result<()> {
        self.norm = match &self.kind {
            DistributionKind::UniformBox => self.lo.iter().zip(&self.hi).map(|(l, h)| 1.0 / (h - l)).collect(),
            DistributionKind::ClippedGaussian { mean, sd } => {
                if mean.len() != self.lo.len() {
                    return Err(Error::DimensionMismatch { expected: self.lo.len(), got: mean.len() });
                }
                if !(*sd > 0.0) {
                    return Err(Error::invalid(format!("sd must be > 0, got {sd}")));
                }
                let mut norm = Vec::with_capacity(mean.len());
                for ((m, l), h) in mean.iter().zip(&self.lo).zip(&self.hi) {
                    let p = interval_probability(l - m, h - m, 1.0 / sd)?;
                    if !(p > 0.0) {
                        return Err(Error::Degenerate("Gaussian has no mass on the support box".into()));
                    }
                    norm.push(1.0 / (sd * (std::f64::consts::TAU).sqrt() * p));
                }
                norm
            }
        };
        Ok(())
    }

    /// Rebuild cached normalizers after deserialization.
    pub fn validated(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn support_volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h)
    }

    /// Probability density at `x`; zero outside the support.
    pub fn density(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim() || !self.contains(x) {
            return 0.0;
        }
        match &self.kind {
            DistributionKind::UniformBox => self.norm.iter().product(),
            DistributionKind::ClippedGaussian { mean, sd } => x
                .iter()
                .zip(mean)
                .zip(&self.norm)
                .map(|((v, m), k)| {
                    let z = (v - m) / sd;
                    k * (-0.5 * z * z).exp()
                })
                .product(),
        }
    }

    /// Draw one input. Gaussian components outside the support are
    /// redrawn, axis by axis.
    pub fn sample(&self, rng: &mut SeedStream, out: &mut [f64]) {
        match &self.kind {
            DistributionKind::UniformBox => {
                for ((o, l), h) in out.iter_mut().zip(&self.lo).zip(&self.hi) {
                    *o = rng.uniform_range(*l, *h);
                }
            }
            DistributionKind::ClippedGaussian { mean, sd } => {
                for (((o, l), h), m) in out.iter_mut().zip(&self.lo).zip(&self.hi).zip(mean) {
                    *o = loop {
                        let v = m + sd * rng.gaussian();
                        if v >= *l && v <= *h {
                            break v;
                        }
                    };
                }
            }
        }
    }
}

/// Axis-aligned 2-D region covered by a displacement map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRegion {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

/// Per-square `|dw(x)| rho(x)` for one node, sampled at square centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementMap {
    pub node: usize,
    pub resolution: usize,
    pub region: GridRegion,
    /// Row-major, `gy` outer.
    pub values: Vec<f64>,
}

impl DisplacementMap {
    pub fn center(&self, gx: usize, gy: usize) -> [f64; 2] {
        let n = self.resolution as f64;
        let r = &self.region;
        [
            r.lo[0] + (gx as f64 + 0.5) * (r.hi[0] - r.lo[0]) / n,
            r.lo[1] + (gy as f64 + 0.5) * (r.hi[1] - r.lo[1]) / n,
        ]
    }

    pub fn value(&self, gx: usize, gy: usize) -> f64 {
        self.values[gy * self.resolution + gx]
    }

    /// CSV `gx,gy,value` with square-center coordinates.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["gx", "gy", "value"])?;
        for gy in 0..self.resolution {
            for gx in 0..self.resolution {
                let c = self.center(gx, gy);
                wtr.write_record([format!("{:?}", c[0]), format!("{:?}", c[1]), format!("{:?}", self.value(gx, gy))])?;
            }
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

fn check_field_inputs<T: Trainer + ?Sized>(trainer: &T, dist: &InputDistribution) -> Result<()> {
    let dim = trainer.weights().input_dim();
    if dist.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: dist.dim() });
    }
    Ok(())
}

/// Expected-displacement map of `node` over an `n x n` grid. The grid
/// covers `region`, or the distribution's support when `None`.
pub fn expected_displacement_map<T: Trainer + ?Sized>(
    trainer: &T,
    node: usize,
    dist: &InputDistribution,
    resolution: usize,
    region: Option<GridRegion>,
) -> Result<DisplacementMap> {
    check_field_inputs(trainer, dist)?;
    if dist.dim() != 2 {
        return Err(Error::invalid("displacement maps need a 2-D input space"));
    }
    if node >= trainer.weights().node_count() {
        return Err(Error::IndexOutOfRange { index: node, len: trainer.weights().node_count() });
    }
    if resolution == 0 {
        return Err(Error::invalid("map resolution must be >= 1"));
    }
    let region = region.unwrap_or(GridRegion { lo: [dist.lo[0], dist.lo[1]], hi: [dist.hi[0], dist.hi[1]] });
    let mut map = DisplacementMap { node, resolution, region, values: Vec::new() };
    let rows: Vec<Vec<f64>> = (0..resolution)
        .into_par_iter()
        .map(|gy| {
            let mut dw = [0.0; 2];
            (0..resolution)
                .map(|gx| {
                    let x = map.center(gx, gy);
                    let rho = dist.density(&x);
                    if rho == 0.0 {
                        return Ok(0.0);
                    }
                    trainer.displacement(&x, node, &mut dw)?;
                    Ok((dw[0] * dw[0] + dw[1] * dw[1]).sqrt() * rho)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    map.values = rows.concat();
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Quadrature {
    /// Midpoint rule with `n` points per axis over the support box.
    Grid { n: usize },
    /// Mean of `dw` over `samples` draws from the distribution.
    MonteCarlo { samples: usize, seed: u64 },
}

pub const MIN_GRID_POINTS: usize = 2;
pub const MIN_MC_SAMPLES: usize = 100;
const MC_CHUNK: usize = 1 << 14;

/// Expected displacement vector of every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedField {
    pub input_dim: usize,
    /// Node-major, `input_dim` components per node.
    pub vectors: Vec<f64>,
    /// Monte Carlo standard errors per component (Monte Carlo only).
    pub std_errors: Option<Vec<f64>>,
}

impl IntegratedField {
    pub fn vector(&self, node: usize) -> &[f64] {
        &self.vectors[node * self.input_dim..(node + 1) * self.input_dim]
    }

    pub fn magnitude(&self, node: usize) -> f64 {
        self.vector(node).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// CSV `node_index,vx,vy` (or `v_0..` beyond two dimensions).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["node_index".to_string()];
        if self.input_dim == 2 {
            header.extend(["vx".to_string(), "vy".to_string()]);
        } else {
            header.extend((0..self.input_dim).map(|k| format!("v_{k}")));
        }
        wtr.write_record(&header)?;
        for (i, v) in self.vectors.chunks_exact(self.input_dim).enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(v.iter().map(|c| format!("{c:?}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Expected displacement `E[dw(x)]` of every node under `dist`, that is the
/// integral of `dw(x) rho(x)` over the support with `rho` normalized on it.
pub fn integrated_expected_displacement<T: Trainer + ?Sized>(
    trainer: &T,
    dist: &InputDistribution,
    quadrature: Quadrature,
) -> Result<IntegratedField> {
    check_field_inputs(trainer, dist)?;
    let dim = dist.dim();
    let len = trainer.weights().node_count() * dim;
    match quadrature {
        Quadrature::Grid { n } => {
            if n < MIN_GRID_POINTS {
                return Err(Error::invalid(format!("grid quadrature needs n >= {MIN_GRID_POINTS}, got {n}")));
            }
            let total = n.checked_pow(dim as u32).ok_or_else(|| Error::invalid("quadrature grid too large"))?;
            let step: Vec<f64> = dist.lo.iter().zip(&dist.hi).map(|(l, h)| (h - l) / n as f64).collect();
            let cell_volume: f64 = step.iter().product();
            let partials: Vec<Vec<f64>> = (0..total)
                .collect::<Vec<_>>()
                .par_chunks(n)
                .map(|chunk| {
                    let mut acc = vec![0.0; len];
                    let mut x = vec![0.0; dim];
                    for &flat in chunk {
                        let mut rem = flat;
                        for k in (0..dim).rev() {
                            x[k] = dist.lo[k] + ((rem % n) as f64 + 0.5) * step[k];
                            rem /= n;
                        }
                        let rho = dist.density(&x);
                        if rho == 0.0 {
                            continue;
                        }
                        let plan = trainer.plan(&x)?;
                        accumulate_displacements(
                            trainer.lattice(),
                            trainer.weights(),
                            &plan,
                            &x,
                            rho * cell_volume,
                            &mut acc,
                        );
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            let mut vectors = vec![0.0; len];
            for p in &partials {
                for (v, q) in vectors.iter_mut().zip(p) {
                    *v += q;
                }
            }
            Ok(IntegratedField { input_dim: dim, vectors, std_errors: None })
        }
        Quadrature::MonteCarlo { samples, seed } => {
            if samples < MIN_MC_SAMPLES {
                return Err(Error::invalid(format!(
                    "Monte Carlo quadrature needs >= {MIN_MC_SAMPLES} samples, got {samples}"
                )));
            }
            let chunks = samples.div_ceil(MC_CHUNK);
            let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = SeedStream::new(seed, (streams::MONTE_CARLO << 32) | c as u64);
                    let count = MC_CHUNK.min(samples - c * MC_CHUNK);
                    let mut sum = vec![0.0; len];
                    let mut sum_sq = vec![0.0; len];
                    let mut one = vec![0.0; len];
                    let mut x = vec![0.0; dim];
                    for _ in 0..count {
                        dist.sample(&mut rng, &mut x);
                        let plan = trainer.plan(&x)?;
                        one.iter_mut().for_each(|v| *v = 0.0);
                        accumulate_displacements(trainer.lattice(), trainer.weights(), &plan, &x, 1.0, &mut one);
                        for ((s, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&one) {
                            *s += v;
                            *q += v * v;
                        }
                    }
                    Ok((sum, sum_sq))
                })
                .collect::<Result<_>>()?;
            let mut sum = vec![0.0; len];
            let mut sum_sq = vec![0.0; len];
            for (s, q) in &partials {
                for k in 0..len {
                    sum[k] += s[k];
                    sum_sq[k] += q[k];
                }
            }
            let n = samples as f64;
            let vectors: Vec<f64> = sum.iter().map(|s| s / n).collect();
            let std_errors = sum_sq
                .iter()
                .zip(&vectors)
                .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
                .collect();
            Ok(IntegratedField { input_dim: dim, vectors, std_errors: Some(std_errors) })
        }
    }
}
