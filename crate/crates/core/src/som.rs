//! The plain SOM: Gaussian neighborhood with exponential annealing of the
//! learning rate and the neighborhood size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{winner_unchecked, Lattice, WeightMatrix};
use crate::trainer::{apply_plan, check_input, Trainer, UpdatePlan};

/// Lower bound applied to the neighborhood size inside the trainer.
pub const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SomParams {
    pub alpha0: f64,
    pub beta0: f64,
    pub delta_alpha: f64,
    pub delta_beta: f64,
}

impl SomParams {
    pub fn new(alpha0: f64, beta0: f64, delta_alpha: f64, delta_beta: f64) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0 <= 1.0) {
            return Err(Error::invalid(format!("alpha0 must lie in (0, 1], got {alpha0}")));
        }
        if !(beta0 > 0.0 && beta0.is_finite()) {
            return Err(Error::invalid(format!("beta0 must be > 0, got {beta0}")));
        }
        for (name, d) in [("delta_alpha", delta_alpha), ("delta_beta", delta_beta)] {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {d}")));
            }
        }
        Ok(SomParams { alpha0, beta0, delta_alpha, delta_beta })
    }

    /// Decay constants chosen so both alpha and beta reach `final_fraction`
    /// of their initial value after `horizon` steps.
    pub fn annealed_over(alpha0: f64, beta0: f64, horizon: u64, final_fraction: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("annealing horizon must be >= 1"));
        }
        if !(final_fraction > 0.0 && final_fraction < 1.0) {
            return Err(Error::invalid(format!("final fraction must lie in (0, 1), got {final_fraction}")));
        }
        let delta = final_fraction.powf(1.0 / horizon as f64);
        SomParams::new(alpha0, beta0, delta, delta)
    }

    /// alpha0 = 0.9, beta0 = half the largest grid extent, both decaying to
    /// 1% of their initial value over `iterations` steps.
    pub fn comparison_default(lattice: &Lattice, iterations: u64) -> Result<Self> {
        let beta0 = *lattice.extents().iter().max().unwrap_or(&1) as f64 / 2.0;
        SomParams::annealed_over(0.9, beta0, iterations, 0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomState {
    pub t: u64,
    pub alpha: f64,
    pub beta: f64,
    pub weights: WeightMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SomTrainer {
    lattice: Lattice,
    params: SomParams,
    state: SomState,
}

impl SomTrainer {
    pub fn new(lattice: Lattice, params: SomParams, weights: WeightMatrix) -> Result<Self> {
        if weights.node_count() != lattice.node_count() {
            return Err(Error::DimensionMismatch { expected: lattice.node_count(), got: weights.node_count() });
        }
        let state = SomState { t: 0, alpha: params.alpha0, beta: params.beta0, weights };
        Ok(SomTrainer { lattice, params, state })
    }

    pub fn params(&self) -> &SomParams {
        &self.params
    }

    pub fn state(&self) -> &SomState {
        &self.state
    }

    /// Overwrite the current annealing position, e.g. to evaluate a single
    /// step at a chosen learning rate.
    pub fn set_rates(&mut self, alpha: f64, beta: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= 1.0) || !(beta > 0.0) {
            return Err(Error::invalid(format!("bad rates alpha={alpha} beta={beta}")));
        }
        self.state.alpha = alpha;
        self.state.beta = beta;
        Ok(())
    }
}

impl Trainer for SomTrainer {
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
        Ok(UpdatePlan {
            winner,
            winner_distance,
            rate: self.state.alpha,
            width: self.state.beta.max(BETA_FLOOR),
        })
    }

    fn step(&mut self, x: &[f64]) -> Result<UpdatePlan> {
        let plan = self.plan(x)?;
        apply_plan(&self.lattice, &mut self.state.weights, &plan, x);
        self.state.alpha *= self.params.delta_alpha;
        self.state.beta *= self.params.delta_beta;
        self.state.t += 1;
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{init_weights, InitScheme};
    use crate::rng::SeedStream;

    fn line(ws: &[f64]) -> (Lattice, WeightMatrix) {
        let l = Lattice::euclidean(&[ws.len()]).unwrap();
        let rows: Vec<[f64; 1]> = ws.iter().map(|&v| [v]).collect();
        (l, WeightMatrix::from_rows(&rows).unwrap())
    }

    #[test]
    fn params_validated() {
        assert!(SomParams::new(0.0, 1.0, 0.5, 0.5).is_err());
        assert!(SomParams::new(1.2, 1.0, 0.5, 0.5).is_err());
        assert!(SomParams::new(0.5, 0.0, 0.5, 0.5).is_err());
        assert!(SomParams::new(0.5, 1.0, 1.0, 0.5).is_err());
        assert!(SomParams::new(1.0, 1.0, 0.5, 0.99).is_ok());
        let p = SomParams::annealed_over(0.9, 10.0, 1000, 0.01).unwrap();
        assert!((p.delta_alpha.powi(1000) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn full_rate_single_node_lands_on_input() {
        let (l, w) = line(&[0.1]);
        let mut t = SomTrainer::new(l, SomParams::new(1.0, 1.0, 0.5, 0.5).unwrap(), w).unwrap();
        t.step(&[0.3]).unwrap();
        assert_eq!(t.weights().row(0), &[0.3]);
    }

    #[test]
    fn far_node_unchanged() {
        let l = Lattice::euclidean(&[60]).unwrap();
        let rows: Vec<[f64; 1]> = (0..60).map(|i| [i as f64 / 59.0]).collect();
        let w = WeightMatrix::from_rows(&rows).unwrap();
        let mut t = SomTrainer::new(l, SomParams::new(0.5, 1.0, 0.9, 0.9).unwrap(), w.clone()).unwrap();
        t.step(&[0.0]).unwrap();
        let before = w.row(59)[0];
        let after = t.weights().row(59)[0];
        assert!((after - before).abs() <= 1e-12 * before.abs());
    }

    #[test]
    fn three_node_step_matches_hand_evaluation() {
        // Independent scalar evaluation: winner is node 2 (|0.65-0.6| smallest),
        // d(i,c) = 2, 1, 0, h = exp(-d^2 / 1), dw = 0.1 h (x - w).
        let (l, w) = line(&[0.2, 0.4, 0.6]);
        let mut t = SomTrainer::new(l, SomParams::new(0.1, 1.0, 0.99, 0.99).unwrap(), w).unwrap();
        let plan = t.step(&[0.65]).unwrap();
        assert_eq!(plan.winner, 2);
        let expected = [
            0.2 + 0.1 * (-4.0f64).exp() * (0.65 - 0.2),
            0.4 + 0.1 * (-1.0f64).exp() * (0.65 - 0.4),
            0.6 + 0.1 * (0.65 - 0.6),
        ];
        for (i, e) in expected.iter().enumerate() {
            assert!((t.weights().row(i)[0] - e).abs() < 1e-15, "node {i}");
        }
        assert!((t.state().alpha - 0.099).abs() < 1e-15);
        assert!((t.state().beta - 0.99).abs() < 1e-15);
        assert_eq!(t.iteration(), 1);
    }

    #[test]
    fn non_finite_input_rejected() {
        let (l, w) = line(&[0.2, 0.4]);
        let mut t = SomTrainer::new(l, SomParams::new(0.5, 1.0, 0.9, 0.9).unwrap(), w).unwrap();
        assert!(t.step(&[f64::NAN]).is_err());
    }

    #[test]
    fn annealing_is_monotone_and_exponential() {
        let l = Lattice::euclidean(&[5, 5]).unwrap();
        let w = init_weights(&l, 2, 1, InitScheme::default()).unwrap();
        let p = SomParams::new(0.9, 2.5, 0.999, 0.998).unwrap();
        let mut t = SomTrainer::new(l, p, w).unwrap();
        let mut rng = SeedStream::new(3, 0);
        let (mut a, mut b) = (t.state().alpha, t.state().beta);
        for _ in 0..500 {
            t.step(&[rng.uniform(), rng.uniform()]).unwrap();
            assert!(t.state().alpha < a && t.state().beta < b);
            a = t.state().alpha;
            b = t.state().beta;
        }
        assert!((a - 0.9 * 0.999f64.powi(500)).abs() < 1e-12);
        assert!((b - 2.5 * 0.998f64.powi(500)).abs() < 1e-12);
    }

    #[test]
    fn ordered_line_stays_ordered() {
        let mut rng = SeedStream::new(77, 0);
        for _ in 0..2000 {
            let n = 3 + rng.index(20);
            let mut ws: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            ws.sort_by(f64::total_cmp);
            let (l, w) = line(&ws);
            let p = SomParams::new(rng.uniform_range(0.01, 1.0), rng.uniform_range(0.1, 10.0), 0.9, 0.9).unwrap();
            let mut t = SomTrainer::new(l, p, w).unwrap();
            t.step(&[rng.uniform()]).unwrap();
            let after: Vec<f64> = t.weights().rows().map(|r| r[0]).collect();
            assert!(after.windows(2).all(|p| p[0] <= p[1]), "{ws:?} -> {after:?}");
        }
    }
}
