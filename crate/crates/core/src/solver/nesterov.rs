//! Accelerated gradient updates with a fixed maximum displacement per step.

use crate::calculus::{determinant, jacobian, VectorField};

/// Momentum weight `(k - 2) / (k + 1)` of iteration `k`; zero for `k <= 2`.
pub fn momentum_coefficient(k: usize) -> f64 {
    if k <= 2 {
        0.0
    } else {
        (k - 2) as f64 / (k + 1) as f64
    }
}

/// Iterates `f^(k-1)` (`current`) and `f^(k-2)` (`previous`) before update `k`.
#[derive(Clone, Debug)]
pub struct NesterovState {
    pub current: VectorField,
    pub previous: VectorField,
    pub k: usize,
}

impl NesterovState {
    pub fn new(start: VectorField) -> Self {
        Self {
            previous: start.clone(),
            current: start,
            k: 1,
        }
    }

    /// `g^k = f^(k-1) + (k-2)/(k+1) (f^(k-1) - f^(k-2))`, the point where
    /// the gradient of update `k` is evaluated.
    pub fn lookahead(&self) -> VectorField {
        let beta = momentum_coefficient(self.k);
        let mut g = self.current.clone();
        if beta != 0.0 {
            g.scale(1.0 + beta);
            g.add_scaled(-beta, &self.previous);
        }
        g
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: NesterovState,
    /// `alpha_k`, chosen so that `alpha_k * max |grad| = max_displacement`.
    pub step_size: f64,
    /// The gradient vanished; `state` is the input state unchanged.
    pub stationary: bool,
}

/// `f^k = g^k - alpha_k grad(g^k)`, with `alpha_k` fixing the largest
/// per-voxel displacement of the gradient step to `max_displacement`.
pub fn nesterov_step(
    state: &NesterovState,
    lookahead: &VectorField,
    grad: &VectorField,
    max_displacement: f64,
) -> StepOutcome {
    let gmax = grad.max_norm();
    if !(gmax > 0.0) || !gmax.is_finite() {
        return StepOutcome {
            state: state.clone(),
            step_size: 0.0,
            stationary: true,
        };
    }
    let alpha = max_displacement / gmax;
    let mut next = lookahead.clone();
    next.add_scaled(-alpha, grad);
    StepOutcome {
        state: NesterovState {
            previous: state.current.clone(),
            current: next,
            k: state.k + 1,
        },
        step_size: alpha,
        stationary: false,
    }
}

#[derive(Clone, Debug)]
pub struct DiffeoCheck {
    pub field: VectorField,
    /// Number of times the step toward `candidate` was halved.
    pub halvings: usize,
    /// No acceptable fraction of the step was found; `field` is `previous`.
    pub rejected: bool,
    pub min_det: f64,
}

pub const MAX_HALVINGS: usize = 20;

fn min_det(f: &VectorField) -> f64 {
    determinant(&jacobian(f)).into_iter().fold(f64::INFINITY, f64::min)
}

/// Pulls `candidate` back toward `previous` by successive halving until
/// `min det(Df) > min_det`, giving up after [`MAX_HALVINGS`] attempts.
pub fn enforce_diffeomorphism(candidate: &VectorField, previous: &VectorField, min_det_allowed: f64) -> DiffeoCheck {
    let d0 = min_det(candidate);
    if d0 > min_det_allowed || candidate == previous {
        return DiffeoCheck {
            field: candidate.clone(),
            halvings: 0,
            rejected: false,
            min_det: d0,
        };
    }
    let mut step = candidate.clone();
    step.add_scaled(-1.0, previous);
    let mut t = 1.0;
    for halvings in 1..=MAX_HALVINGS {
        t *= 0.5;
        let mut trial = previous.clone();
        trial.add_scaled(t, &step);
        let d = min_det(&trial);
        if d > min_det_allowed {
            return DiffeoCheck {
                field: trial,
                halvings,
                rejected: false,
                min_det: d,
            };
        }
    }
    DiffeoCheck {
        field: previous.clone(),
        halvings: MAX_HALVINGS,
        rejected: true,
        min_det: min_det(previous),
    }
}
