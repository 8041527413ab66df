//! Bonus-based optimistic backward induction.
//!
//! For a model estimate `M` the planner runs
//! `Q_h(s,a) = r(s,a) + phi(s,a)^T M Psi^T V_{h+1} + c ||phi(s,a)||_{Sigma^{-1}}`
//! with `V_h(s) = clip_[0,H](max_a Q_h(s,a))` and `V_{H+1} = 0`. Both agents
//! feed it; they differ only in the model and in the bonus coefficient `c`.

use nalgebra::{DMatrix, DVector};

use crate::env::{FeatureMaps, Values};
use crate::linalg::GramState;

/// Everything needed to plan once per episode: the estimated kernel and the
/// inverse Gram norms are frozen for the episode, so repeated plans with
/// different bonus coefficients only redo the backward pass.
#[derive(Debug, Clone)]
pub struct PlanningModel {
    n_states: usize,
    n_actions: usize,
    /// `Phi M Psi^T`, one row per `(s, a)`. Not necessarily stochastic.
    kernel: DMatrix<f64>,
    /// `||phi(s,a)||_{Sigma^{-1}}` per `(s, a)`.
    norms: DVector<f64>,
    rewards: DMatrix<f64>,
}

impl PlanningModel {
    pub fn new(features: &FeatureMaps, model: &DMatrix<f64>, gram: &GramState, rewards: &DMatrix<f64>) -> Self {
        let phi = features.phi_matrix();
        let norms = DVector::from_fn(phi.nrows(), |i, _| gram.inv_norm(&phi.row(i).transpose()));
        Self::from_parts(features, model, norms, rewards)
    }

    /// Planning model with caller-supplied per-`(s,a)` norms.
    pub fn from_parts(features: &FeatureMaps, model: &DMatrix<f64>, norms: DVector<f64>, rewards: &DMatrix<f64>) -> Self {
        let kernel = features.phi_matrix() * model * features.psi_matrix().transpose();
        Self { n_states: features.n_states(), n_actions: features.n_actions(), kernel, norms, rewards: rewards.clone() }
    }

    pub fn norms(&self) -> &DVector<f64> {
        &self.norms
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// Backward induction with bonus `coef * ||phi||_{Sigma^{-1}}`.
    pub fn plan(&self, coef: f64, horizon: usize) -> Values {
        let (ns, na) = (self.n_states, self.n_actions);
        let cap = horizon as f64;
        let mut v = vec![DVector::zeros(ns); horizon + 1];
        let mut q = vec![DMatrix::zeros(ns, na); horizon];
        for h in (0..horizon).rev() {
            let next = &self.kernel * &v[h + 1];
            for s in 0..ns {
                let mut best = f64::NEG_INFINITY;
                for a in 0..na {
                    let i = s * na + a;
                    let val = self.rewards[(s, a)] + next[i] + coef * self.norms[i];
                    q[h][(s, a)] = val;
                    best = best.max(val);
                }
                v[h][s] = best.clamp(0.0, cap);
            }
        }
        Values { v, q }
    }

    pub fn initial_value(&self, coef: f64, horizon: usize, start: usize) -> f64 {
        self.plan(coef, horizon).v[0][start]
    }
}

/// Greedy action at step `h` (0-based) in state `s`; ties go to the lowest index.
pub fn act(values: &Values, h: usize, s: usize) -> usize {
    crate::env::argmax_row(&values.q[h], s)
}
