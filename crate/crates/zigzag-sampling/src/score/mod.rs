//! Noise-prediction models and classifier-free guidance.
//!
//! Everything the samplers consume is behind the [`ScoreModel`] trait: an
//! exact closed-form oracle over Gaussian mixtures ([`AnalyticMixtureModel`]),
//! a small trainable network fit by denoising score matching ([`ScoreNet`]),
//! and a constant-output model used to isolate the guidance-gap algebra in
//! tests and diagnostics ([`ConstantModel`]).

mod mixture;
mod net;

pub use mixture::{
    analytic_epsilon, finite_difference_epsilon, log_marginal_density, sample_component,
    sample_mixture_dataset, AnalyticMixtureModel, MixtureSpec,
};
pub use net::{train_score_net, ScoreNet, ScoreNetArch, TrainOutcome, TrainingSettings};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Conditioning input: a mixture-component label or the null condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Condition on component `c`.
    Component(usize),
    /// Unconditional branch.
    Null,
}

impl Condition {
    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }

    pub fn label(&self) -> Option<usize> {
        match self {
            Condition::Component(c) => Some(*c),
            Condition::Null => None,
        }
    }
}

/// Conditional and unconditional noise predictions at one evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub u_cond: Vec<f64>,
    pub u_uncond: Vec<f64>,
}

impl ScorePair {
    pub fn dim(&self) -> usize {
        self.u_cond.len()
    }
}

/// Classifier-free guidance in offset form:
/// `eps = (1 + gamma) * u_cond - gamma * u_uncond`.
///
/// `gamma = 0` returns the conditional branch unchanged; `gamma = -1`
/// returns the unconditional branch.
pub fn cfg_epsilon(pair: &ScorePair, gamma: f64) -> Vec<f64> {
    pair.u_cond
        .iter()
        .zip(&pair.u_uncond)
        .map(|(c, u)| (1.0 + gamma) * c - gamma * u)
        .collect()
}

/// A noise predictor exposing conditional and unconditional branches.
///
/// Implementations must be immutable at inference time so trajectories can
/// evaluate them from parallel workers.
pub trait ScoreModel: Send + Sync {
    /// Latent dimension.
    fn dim(&self) -> usize;

    /// Number of mixture components the condition label may range over.
    fn num_components(&self) -> usize;

    /// Noise prediction at `(x, t, cond)`, `t` in `1..=T`.
    fn epsilon(&self, x: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>>;

    /// Both guidance branches at one point. One call to this counts as one
    /// score step in the cost accounting (one conditional plus one
    /// unconditional evaluation).
    fn branches(&self, x: &[f64], t: usize, cond: &Condition) -> Result<ScorePair> {
        Ok(ScorePair {
            u_cond: self.epsilon(x, t, cond)?,
            u_uncond: self.epsilon(x, t, &Condition::Null)?,
        })
    }

    /// Validate a condition label against this model.
    fn check_condition(&self, cond: &Condition) -> Result<()> {
        if let Condition::Component(label) = cond {
            if *label >= self.num_components() {
                return Err(Error::BadCondition {
                    label: *label,
                    num_components: self.num_components(),
                });
            }
        }
        Ok(())
    }

    fn check_latent(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !linalg::all_finite(x) {
            return Err(Error::InvalidConfig("non-finite latent".into()));
        }
        Ok(())
    }
}

/// A model whose predictions do not depend on the latent or the step.
///
/// Because the prediction is constant, inversion is the exact inverse of
/// denoising and the approximation-error term vanishes identically; this is
/// the regime in which the guidance-gap closed form is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantModel {
    pub u_cond: Vec<f64>,
    pub u_uncond: Vec<f64>,
}

impl ConstantModel {
    pub fn new(u_cond: Vec<f64>, u_uncond: Vec<f64>) -> Self {
        assert_eq!(u_cond.len(), u_uncond.len());
        ConstantModel { u_cond, u_uncond }
    }
}

impl ScoreModel for ConstantModel {
    fn dim(&self) -> usize {
        self.u_cond.len()
    }

    fn num_components(&self) -> usize {
        1
    }

    fn epsilon(&self, _x: &[f64], _t: usize, cond: &Condition) -> Result<Vec<f64>> {
        Ok(match cond {
            Condition::Null => self.u_uncond.clone(),
            Condition::Component(_) => self.u_cond.clone(),
        })
    }
}
