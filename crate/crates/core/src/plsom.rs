//! The parameter-less SOM.
//!
//! The normalized winner distance `epsilon = |x - w_c| / r` replaces the
//! learning rate, and a function of epsilon (`theta`) replaces the annealed
//! neighborhood size. `r` is the running maximum of winner distances, so
//! the update law has no dependence on the iteration count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{euclidean_distance, winner_unchecked, Lattice, WeightMatrix};
use crate::trainer::{apply_plan, check_input, Trainer, UpdatePlan};

/// Lower bound on the neighborhood width.
pub const THETA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaVariant {
    /// `max(beta * eps, theta_min)`
    Linear,
    /// `(beta - theta_min) * eps + theta_min`
    #[default]
    Affine,
    /// `(beta - theta_min) * ln(1 + eps (e - 1)) + theta_min`
    Log,
}

impl std::str::FromStr for ThetaVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ThetaVariant::Linear),
            "affine" => Ok(ThetaVariant::Affine),
            "log" => Ok(ThetaVariant::Log),
            _ => Err(Error::invalid(format!("unknown theta variant `{s}` (linear|affine|log)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlsomParams {
    pub beta: f64,
    pub theta_min: f64,
    pub variant: ThetaVariant,
}

impl PlsomParams {
    pub fn new(beta: f64, theta_min: f64, variant: ThetaVariant) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be > 0, got {beta}")));
        }
        if !(theta_min >= 0.0) {
            return Err(Error::invalid(format!("theta_min must be >= 0, got {theta_min}")));
        }
        if beta < theta_min {
            return Err(Error::invalid(format!("beta {beta} is below theta_min {theta_min}")));
        }
        Ok(PlsomParams { beta, theta_min, variant })
    }

    /// Affine variant with `theta_min = 1`.
    pub fn affine(beta: f64) -> Result<Self> {
        PlsomParams::new(beta, 1.0, ThetaVariant::Affine)
    }
}

/// `(epsilon, r_new)` for winner distance `dist` and previous normalizer.
pub fn epsilon_from_distance(dist: f64, r_prev: f64) -> (f64, f64) {
    let r_new = dist.max(r_prev);
    let eps = if r_new > 0.0 { dist / r_new } else { 0.0 };
    (eps, r_new)
}

pub fn epsilon_update(x: &[f64], w_c: &[f64], r_prev: f64) -> (f64, f64) {
    epsilon_from_distance(euclidean_distance(x, w_c), r_prev)
}

/// Neighborhood width for a given epsilon. The linear variant clamps at
/// `theta_min`.
pub fn theta(epsilon: f64, params: &PlsomParams) -> f64 {
    let PlsomParams { beta, theta_min, variant } = *params;
    match variant {
        ThetaVariant::Linear => (beta * epsilon).max(theta_min),
        ThetaVariant::Affine => (beta - theta_min) * epsilon + theta_min,
        ThetaVariant::Log => {
            (beta - theta_min) * (1.0 + epsilon * (std::f64::consts::E - 1.0)).ln() + theta_min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsomState {
    pub t: u64,
    pub r: f64,
    pub r_override: Option<f64>,
    pub weights: WeightMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlsomTrainer {
    lattice: Lattice,
    params: PlsomParams,
    state: PlsomState,
}

impl PlsomTrainer {
    pub fn new(lattice: Lattice, params: PlsomParams, weights: WeightMatrix) -> Result<Self> {
        if weights.node_count() != lattice.node_count() {
            return Err(Error::DimensionMismatch { expected: lattice.node_count(), got: weights.node_count() });
        }
        let state = PlsomState { t: 0, r: 0.0, r_override: None, weights };
        Ok(PlsomTrainer { lattice, params, state })
    }

    pub fn params(&self) -> &PlsomParams {
        &self.params
    }

    pub fn state(&self) -> &PlsomState {
        &self.state
    }

    /// Force a fixed normalizer. While set, epsilon is
    /// `min(|x - w_c| / r_override, 1)` and the running maximum is left alone.
    pub fn set_r_override(&mut self, r: Option<f64>) -> Result<()> {
        if let Some(v) = r {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("forced r must be > 0, got {v}")));
            }
        }
        self.state.r_override = r;
        Ok(())
    }

    /// Set the running normalizer, e.g. to evaluate a step from a chosen state.
    pub fn set_r(&mut self, r: f64) -> Result<()> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("r must be >= 0, got {r}")));
        }
        self.state.r = r;
        Ok(())
    }

    fn epsilon(&self, dist: f64) -> (f64, f64) {
        match self.state.r_override {
            Some(forced) => ((dist / forced).min(1.0), self.state.r),
            None => epsilon_from_distance(dist, self.state.r),
        }
    }
}

impl Trainer for PlsomTrainer {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn weights(&self) -> &WeightMatrix {
        &self.state.weights
    }

    fn iteration(&self) -> u64 {
        self.state.t
    }

    fn plan(&self, x: &[f64]) -> Result<UpdatePlan> {
        check_input(x, &self.state.weights)?;
        let (winner, winner_distance) = winner_unchecked(x, &self.state.weights);
        let (eps, _) = self.epsilon(winner_distance);
        Ok(UpdatePlan {
            winner,
            winner_distance,
            rate: eps,
            width: theta(eps, &self.params).max(THETA_FLOOR),
        })
    }

    fn step(&mut self, x: &[f64]) -> Result<UpdatePlan> {
        let plan = self.plan(x)?;
        let (_, r_new) = self.epsilon(plan.winner_distance);
        self.state.r = r_new;
        apply_plan(&self.lattice, &mut self.state.weights, &plan, x);
        self.state.t += 1;
        Ok(plan)
    }
}
