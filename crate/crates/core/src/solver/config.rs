use serde::{Deserialize, Serialize};

use crate::error::{Result, TbmError};

use super::Weights;

/// Solver hyperparameters. Defaults are tuned for MRI-scale densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Weight of the mass-preservation penalty.
    pub lambda: f64,
    /// Weight of the curl penalty once activated.
    pub gamma: f64,
    /// The curl penalty switches on when the relative MSE at a scale drops to
    /// this fraction of that scale's initial relative MSE.
    pub gamma_activation_fraction: f64,
    /// Number of pyramid levels, finest included.
    pub scales: usize,
    /// Largest displacement of a single gradient step, in voxels.
    pub max_step_voxels: f64,
    /// A scale terminates once relative MSE reaches this value.
    pub mse_termination: f64,
    /// When set, the finest scale also requires the mean curl magnitude to
    /// reach this value before terminating.
    pub curl_termination: Option<f64>,
    pub max_iters: usize,
    /// Candidates with `min det(Df)` at or below this are pulled back.
    pub diffeo_min_det: f64,
    /// Iterations over which the best objective value must improve by at
    /// least `stagnation_tolerance` times its magnitude.
    pub stagnation_window: usize,
    pub stagnation_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            gamma: 6.5e4,
            gamma_activation_fraction: 0.25,
            scales: 3,
            max_step_voxels: 0.01,
            mse_termination: 0.0055,
            curl_termination: None,
            max_iters: 5000,
            diffeo_min_det: 1e-3,
            stagnation_window: 100,
            stagnation_tolerance: 1e-4,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TbmError::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be >= 0");
        }
        if !(self.mse_termination > 0.0 && self.mse_termination < 1.0) {
            return bad("mse_termination must lie in (0, 1)");
        }
        if let Some(c) = self.curl_termination {
            if !(c > 0.0 && c.is_finite()) {
                return bad("curl_termination must be > 0");
            }
        }
        if self.scales < 1 {
            return bad("scales must be >= 1");
        }
        if !(self.max_step_voxels > 0.0 && self.max_step_voxels.is_finite()) {
            return bad("max_step_voxels must be > 0");
        }
        if !(0.0..=1.0).contains(&self.gamma_activation_fraction) {
            return bad("gamma_activation_fraction must lie in [0, 1]");
        }
        if !self.diffeo_min_det.is_finite() {
            return bad("diffeo_min_det must be finite");
        }
        if !(self.stagnation_tolerance >= 0.0 && self.stagnation_tolerance.is_finite()) {
            return bad("stagnation_tolerance must be >= 0");
        }
        if self.stagnation_window == 0 {
            return bad("stagnation_window must be >= 1");
        }
        Ok(())
    }

    /// Penalty weights with the curl term on or off.
    pub fn weights(&self, gamma_active: bool) -> Weights {
        Weights {
            lambda: self.lambda,
            gamma: if gamma_active { self.gamma } else { 0.0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SolverConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lambda, 100.0);
        assert_eq!(c.gamma, 6.5e4);
        assert_eq!(c.scales, 3);
        assert_eq!(c.max_step_voxels, 0.01);
        assert_eq!(c.mse_termination, 0.0055);
        assert_eq!(c.gamma_activation_fraction, 0.25);
    }

    #[test]
    fn rejects_invalid_values() {
        for c in [
            SolverConfig { lambda: -1.0, ..Default::default() },
            SolverConfig { mse_termination: 1.0, ..Default::default() },
            SolverConfig { scales: 0, ..Default::default() },
            SolverConfig { max_step_voxels: 0.0, ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
