//! Shared update machinery for the SOM and PLSOM trainers.
//!
//! Both trainers move every node by `rate * h(d) * (x - w_i)` with the
//! Gaussian neighborhood `h(d) = exp(-d^2 / width^2)`; they differ only in
//! how `rate` and `width` are chosen for a given input. A trainer therefore
//! exposes [`Trainer::plan`], which decides the update for an input against
//! the frozen state, and [`Trainer::step`], which applies it and advances
//! the state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, WeightMatrix};
use crate::plsom::PlsomTrainer;
use crate::som::SomTrainer;

/// `exp(-d^2 / width^2)`.
pub fn gaussian_neighborhood(d: f64, width: f64) -> Result<f64> {
    if !(width > 0.0) {
        return Err(Error::invalid(format!("neighborhood width must be > 0, got {width}")));
    }
    Ok((-(d * d) / (width * width)).exp())
}

/// The update one input would cause.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdatePlan {
    pub winner: usize,
    pub winner_distance: f64,
    /// Learning rate (SOM) or epsilon (PLSOM).
    pub rate: f64,
    /// Neighborhood width, already floored by the trainer.
    pub width: f64,
}

pub trait Trainer: Send + Sync {
    fn lattice(&self) -> &Lattice;
    fn weights(&self) -> &WeightMatrix;
    fn iteration(&self) -> u64;

    /// Update for `x` against the current state, without changing it.
    fn plan(&self, x: &[f64]) -> Result<UpdatePlan>;

    /// Present `x`, update the weights and advance the state.
    fn step(&mut self, x: &[f64]) -> Result<UpdatePlan>;

    /// Displacement node `node` would receive from `x` under the frozen state.
    fn displacement(&self, x: &[f64], node: usize, out: &mut [f64]) -> Result<()> {
        let plan = self.plan(x)?;
        let f = plan.rate * neighborhood_factor(self.lattice(), &plan, node);
        for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(self.weights().row(node)) {
            *o = f * (xi - wi);
        }
        Ok(())
    }
}

pub(crate) fn check_input(x: &[f64], w: &WeightMatrix) -> Result<()> {
    if x.len() != w.input_dim() {
        return Err(Error::DimensionMismatch { expected: w.input_dim(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input vector"));
    }
    Ok(())
}

#[inline]
fn grid_key(a: &[u32], b: &[u32], manhattan: bool) -> usize {
    if manhattan {
        let s: usize = a.iter().zip(b).map(|(&p, &q)| p.abs_diff(q) as usize).sum();
        s * s
    } else {
        a.iter()
            .zip(b)
            .map(|(&p, &q)| {
                let d = p.abs_diff(q) as usize;
                d * d
            })
            .sum()
    }
}

pub(crate) fn neighborhood_factor(lattice: &Lattice, plan: &UpdatePlan, node: usize) -> f64 {
    let key = grid_key(
        lattice.coords(node),
        lattice.coords(plan.winner),
        lattice.metric() == crate::lattice::GridMetric::Manhattan,
    );
    let inv = 1.0 / (plan.width * plan.width);
    (-(key as f64) * inv).exp()
}

/// Squared grid distances are integers, so `h` is tabulated per step by
/// integer key; entries past the first exact zero stay zero.
fn neighborhood_table(lattice: &Lattice, width: f64) -> Vec<f64> {
    let manhattan = lattice.metric() == crate::lattice::GridMetric::Manhattan;
    let spans = lattice.extents().iter().map(|&e| e - 1);
    let max_key = if manhattan {
        let s: usize = spans.sum();
        s * s
    } else {
        spans.map(|s| s * s).sum()
    };
    let inv = 1.0 / (width * width);
    let mut table = vec![0.0; max_key + 1];
    for (k, slot) in table.iter_mut().enumerate() {
        let h = (-(k as f64) * inv).exp();
        if h == 0.0 {
            break;
        }
        *slot = h;
    }
    table
}

/// Apply `plan` for input `x` to all nodes. A node whose factor is exactly
/// 1 lands on `x`; a factor of exactly 0 leaves it untouched.
pub(crate) fn apply_plan(lattice: &Lattice, weights: &mut WeightMatrix, plan: &UpdatePlan, x: &[f64]) {
    if plan.rate == 0.0 {
        return;
    }
    let table = neighborhood_table(lattice, plan.width);
    let manhattan = lattice.metric() == crate::lattice::GridMetric::Manhattan;
    let wc = lattice.coords(plan.winner);
    for (i, row) in weights.rows_mut().enumerate() {
        let h = table[grid_key(lattice.coords(i), wc, manhattan)];
        let f = plan.rate * h;
        if f == 0.0 {
            continue;
        }
        if f == 1.0 {
            row.copy_from_slice(x);
            continue;
        }
        for (w, &xi) in row.iter_mut().zip(x) {
            *w += f * (xi - *w);
        }
    }
}

/// Add `scale * dw_i` for every node to `acc` (node-major, same layout as
/// the weights) without touching the weights.
pub(crate) fn accumulate_displacements(
    lattice: &Lattice,
    weights: &WeightMatrix,
    plan: &UpdatePlan,
    x: &[f64],
    scale: f64,
    acc: &mut [f64],
) {
    if plan.rate == 0.0 || scale == 0.0 {
        return;
    }
    let table = neighborhood_table(lattice, plan.width);
    let manhattan = lattice.metric() == crate::lattice::GridMetric::Manhattan;
    let wc = lattice.coords(plan.winner);
    let dim = weights.input_dim();
    for (i, (row, out)) in weights.rows().zip(acc.chunks_exact_mut(dim)).enumerate() {
        let f = plan.rate * table[grid_key(lattice.coords(i), wc, manhattan)];
        if f == 0.0 {
            continue;
        }
        let g = scale * f;
        for ((o, &w), &xi) in out.iter_mut().zip(row).zip(x) {
            *o += g * (xi - w);
        }
    }
}

/// Either trainer, for code that handles both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyTrainer {
    Som(SomTrainer),
    Plsom(PlsomTrainer),
}

impl AnyTrainer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AnyTrainer::Som(_) => "som",
            AnyTrainer::Plsom(_) => "plsom",
        }
    }
}

impl Trainer for AnyTrainer {
    fn lattice(&self) -> &Lattice {
        match self {
            AnyTrainer::Som(t) => t.lattice(),
            AnyTrainer::Plsom(t) => t.lattice(),
        }
    }
    fn weights(&self) -> &WeightMatrix {
        match self {
            AnyTrainer::Som(t) => t.weights(),
            AnyTrainer::Plsom(t) => t.weights(),
        }
    }
    fn iteration(&self) -> u64 {
        match self {
            AnyTrainer::Som(t) => t.iteration(),
            AnyTrainer::Plsom(t) => t.iteration(),
        }
    }
    fn plan(&self, x: &[f64]) -> Result<UpdatePlan> {
        match self {
            AnyTrainer::Som(t) => t.plan(x),
            AnyTrainer::Plsom(t) => t.plan(x),
        }
    }
    fn step(&mut self, x: &[f64]) -> Result<UpdatePlan> {
        match self {
            AnyTrainer::Som(t) => t.step(x),
            AnyTrainer::Plsom(t) => t.step(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GridMetric;

    #[test]
    fn neighborhood_values() {
        assert_eq!(gaussian_neighborhood(0.0, 2.0).unwrap(), 1.0);
        let e1 = gaussian_neighborhood(1.5, 1.5).unwrap();
        assert!((e1 - 0.367879441171442).abs() < 1e-12);
        let e9 = gaussian_neighborhood(3.0, 1.0).unwrap();
        assert!((e9 - 1.2340980408667956e-4).abs() < 1e-16);
        assert!(gaussian_neighborhood(1.0, 0.0).is_err());
    }

    #[test]
    fn table_matches_direct_formula() {
        for metric in [GridMetric::Euclidean, GridMetric::Manhattan] {
            let l = Lattice::new(vec![4, 5, 3], metric).unwrap();
            let plan = UpdatePlan { winner: 17, winner_distance: 0.0, rate: 1.0, width: 1.7 };
            let table = neighborhood_table(&l, plan.width);
            for i in 0..l.node_count() {
                let d = l.grid_distance(i, plan.winner).unwrap();
                let direct = gaussian_neighborhood(d, plan.width).unwrap();
                let key = grid_key(l.coords(i), l.coords(plan.winner), metric == GridMetric::Manhattan);
                assert!((table[key] - direct).abs() <= 1e-13 * direct);
                assert_eq!(neighborhood_factor(&l, &plan, i), table[key]);
            }
        }
    }
}
