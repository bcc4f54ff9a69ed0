//! Exact noise predictions for isotropic Gaussian mixtures.
//!
//! Under variance-preserving forward noising, a mixture component stays
//! Gaussian at every step: `x_t | c ~ N(sqrt(ab_t) * mu_c, (ab_t * sigma2 +
//! 1 - ab_t) * I)` where `ab_t` is the cumulative product. The conditional
//! prediction is therefore a one-line closed form, and the unconditional
//! prediction mixes the conditional ones with the posterior component
//! weights at `(x, t)`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::schedule::NoiseSchedule;

use super::{Condition, ScoreModel};

/// An isotropic Gaussian mixture with shared per-component variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Component means, all of the same dimension.
    pub means: Vec<Vec<f64>>,
    /// Shared isotropic component variance.
    pub sigma2: f64,
    /// Mixture weights; must be positive and sum to 1.
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, sigma2: f64, weights: Vec<f64>) -> Result<Self> {
        let spec = MixtureSpec {
            means,
            sigma2,
            weights,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal-weight mixture.
    pub fn equal_weight(means: Vec<Vec<f64>>, sigma2: f64) -> Result<Self> {
        let k = means.len();
        Self::new(means, sigma2, vec![1.0 / k as f64; k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::InvalidConfig("mixture needs >= 1 component".into()));
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidConfig(
                "mixture means must share a nonzero dimension".into(),
            ));
        }
        if self.sigma2 <= 0.0 || !self.sigma2.is_finite() {
            return Err(Error::InvalidConfig("sigma2 must be positive".into()));
        }
        if self.weights.len() != self.means.len() {
            return Err(Error::InvalidConfig(
                "one weight per component required".into(),
            ));
        }
        if self.weights.iter().any(|w| *w <= 0.0) {
            return Err(Error::InvalidConfig("weights must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "weights sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.means.len()
    }

    /// Index of the component mean nearest to `x`.
    pub fn nearest_component(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, m) in self.means.iter().enumerate() {
            let d = linalg::dist(x, m);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Closed-form noise predictor over a [`MixtureSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMixtureModel {
    spec: MixtureSpec,
    alpha_bars: Vec<f64>,
}

impl AnalyticMixtureModel {
    pub fn new(spec: MixtureSpec, sched: &NoiseSchedule) -> Result<Self> {
        spec.validate()?;
        Ok(AnalyticMixtureModel {
            spec,
            alpha_bars: sched.alpha_bars().to_vec(),
        })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn num_steps(&self) -> usize {
        self.alpha_bars.len() - 1
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: self.num_steps(),
            });
        }
        Ok(())
    }

    /// Noisy marginal parameters of component `c` at step `t`:
    /// mean scale `sqrt(ab_t)` and variance `ab_t * sigma2 + 1 - ab_t`.
    fn marginal(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bars[t];
        (ab.sqrt(), ab * self.spec.sigma2 + 1.0 - ab)
    }

    fn conditional_epsilon(&self, x: &[f64], t: usize, label: usize) -> Vec<f64> {
        let (mean_scale, var) = self.marginal(t);
        let ab = self.alpha_bars[t];
        let coeff = (1.0 - ab).sqrt() / var;
        x.iter()
            .zip(&self.spec.means[label])
            .map(|(xi, mi)| coeff * (xi - mean_scale * mi))
            .collect()
    }

    /// Posterior component weights at `(x, t)`, computed via log-sum-exp.
    pub fn posterior(&self, x: &[f64], t: usize) -> Vec<f64> {
        let (mean_scale, var) = self.marginal(t);
        let logs: Vec<f64> = self
            .spec
            .means
            .iter()
            .zip(&self.spec.weights)
            .map(|(m, w)| {
                let shifted = linalg::scale(m, mean_scale);
                let d2 = linalg::sub(x, &shifted).iter().map(|v| v * v).sum::<f64>();
                w.ln() - 0.5 * d2 / var
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }
}

impl ScoreModel for AnalyticMixtureModel {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn num_components(&self) -> usize {
        self.spec.num_components()
    }

    fn epsilon(&self, x: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        self.check_latent(x)?;
        self.check_t(t)?;
        self.check_condition(cond)?;
        match cond {
            Condition::Component(label) => Ok(self.conditional_epsilon(x, t, *label)),
            Condition::Null => {
                let post = self.posterior(x, t);
                let mut out = vec![0.0; x.len()];
                for (label, p) in post.iter().enumerate() {
                    let eps_c = self.conditional_epsilon(x, t, label);
                    for (o, e) in out.iter_mut().zip(&eps_c) {
                        *o += p * e;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Exact closed-form evaluation of the noise prediction, without
/// constructing a model. `sched` supplies the cumulative products.
pub fn analytic_epsilon(
    spec: &MixtureSpec,
    sched: &NoiseSchedule,
    x: &[f64],
    t: usize,
    cond: &Condition,
) -> Result<Vec<f64>> {
    let model = AnalyticMixtureModel::new(spec.clone(), sched)?;
    model.epsilon(x, t, cond)
}

/// Draw `n` exact samples from component `label`.
pub fn sample_component(spec: &MixtureSpec, label: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let sigma = spec.sigma2.sqrt();
    (0..n)
        .map(|_| {
            spec.means[label]
                .iter()
                .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Draw a labeled training set from the mixture: component chosen by weight,
/// then a Gaussian draw around its mean.
pub fn sample_mixture_dataset(
    spec: &MixtureSpec,
    n: usize,
    seed: u64,
) -> Vec<(Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let sigma = spec.sigma2.sqrt();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            let mut label = spec.num_components() - 1;
            for (i, w) in spec.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    label = i;
                    break;
                }
            }
            let point: Vec<f64> = spec.means[label]
                .iter()
                .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (point, label)
        })
        .collect()
}

/// Log-density of the noisy marginal at `(x, t)`: conditional when `cond`
/// names a component, the weighted mixture otherwise.
///
/// This is a direct density evaluation (no score algebra), kept as the
/// independent route for validating the closed-form predictions by numerical
/// differentiation.
pub fn log_marginal_density(
    spec: &MixtureSpec,
    sched: &NoiseSchedule,
    x: &[f64],
    t: usize,
    cond: &Condition,
) -> Result<f64> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let var = ab * spec.sigma2 + 1.0 - ab;
    let d = spec.dim() as f64;
    let log_norm = -0.5 * d * (2.0 * std::f64::consts::PI * var).ln();
    let log_comp = |label: usize| -> f64 {
        let mut d2 = 0.0;
        for (xi, mi) in x.iter().zip(&spec.means[label]) {
            let diff = xi - ab.sqrt() * mi;
            d2 += diff * diff;
        }
        log_norm - 0.5 * d2 / var
    };
    match cond {
        Condition::Component(label) => {
            if *label >= spec.num_components() {
                return Err(Error::BadCondition {
                    label: *label,
                    num_components: spec.num_components(),
                });
            }
            Ok(log_comp(*label))
        }
        Condition::Null => {
            let logs: Vec<f64> = (0..spec.num_components())
                .map(|c| spec.weights[c].ln() + log_comp(c))
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
        }
    }
}

/// Noise prediction obtained by central finite differences of the
/// log-density: `eps = -sqrt(1 - ab_t) * grad log q_t(x)`.
///
/// Deliberately goes through the density rather than the closed-form score,
/// so it cross-checks the analytic route.
pub fn finite_difference_epsilon(
    spec: &MixtureSpec,
    sched: &NoiseSchedule,
    x: &[f64],
    t: usize,
    cond: &Condition,
) -> Result<Vec<f64>> {
    let ab = sched.alpha_bar(t);
    let coeff = -(1.0 - ab).sqrt();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        let mut hi = x.to_vec();
        hi[i] += h;
        let mut lo = x.to_vec();
        lo[i] -= h;
        let f_hi = log_marginal_density(spec, sched, &hi, t, cond)?;
        let f_lo = log_marginal_density(spec, sched, &lo, t, cond)?;
        out.push(coeff * (f_hi - f_lo) / (2.0 * h));
    }
    Ok(out)
}
