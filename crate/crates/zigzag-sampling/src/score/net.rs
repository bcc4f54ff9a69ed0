//! A small fully connected noise predictor fit by denoising score matching.
//!
//! The network maps `[x, sinusoidal-time-embedding, one-hot condition]`
//! through two SiLU hidden layers to a prediction of the injected noise.
//! Training draws `(x0, label)` from a dataset, noises to a random step,
//! and regresses the added noise; the condition is dropped to the null
//! branch with fixed probability so the unconditional branch is trained,
//! the usual classifier-free guidance recipe.

use std::fs;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

use super::{Condition, ScoreModel};

/// Architecture hyperparameters; recorded in every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreNetArch {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub num_components: usize,
}

impl ScoreNetArch {
    fn input_dim(&self) -> usize {
        self.latent_dim + self.time_embed_dim + self.num_components + 1
    }
}

/// One dense layer with flat row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (2.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Linear {
            w,
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (o, row) in out.iter_mut().zip(self.w.chunks(self.in_dim)) {
            *o += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        out
    }

    /// Accumulate parameter gradients and return the input gradient.
    fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for (j, g) in grad_out.iter().enumerate() {
            grad_b[j] += g;
            let row = &self.w[j * self.in_dim..(j + 1) * self.in_dim];
            let grad_row = &mut grad_w[j * self.in_dim..(j + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grad_row[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }

}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Trained noise predictor. Immutable at inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNet {
    arch: ScoreNetArch,
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

impl ScoreNet {
    pub fn init(arch: ScoreNetArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(4);
        let l1 = Linear::init(arch.input_dim(), arch.hidden_dim, &mut rng);
        let l2 = Linear::init(arch.hidden_dim, arch.hidden_dim, &mut rng);
        let l3 = Linear::init(arch.hidden_dim, arch.latent_dim, &mut rng);
        ScoreNet { arch, l1, l2, l3 }
    }

    pub fn arch(&self) -> &ScoreNetArch {
        &self.arch
    }

    fn embed(&self, x: &[f64], t: usize, cond: &Condition) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.arch.input_dim());
        input.extend_from_slice(x);
        let half = self.arch.time_embed_dim / 2;
        let tf = t as f64;
        for j in 0..half {
            let freq = (-(j as f64) * (10_000f64).ln() / half as f64).exp();
            input.push((tf * freq).sin());
            input.push((tf * freq).cos());
        }
        // one-hot over components, last slot = null condition
        let mut onehot = vec![0.0; self.arch.num_components + 1];
        match cond {
            Condition::Component(c) => onehot[*c] = 1.0,
            Condition::Null => onehot[self.arch.num_components] = 1.0,
        }
        input.extend_from_slice(&onehot);
        input
    }

    fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let z1 = self.l1.forward(input);
        let a1: Vec<f64> = z1.iter().map(|v| silu(*v)).collect();
        let z2 = self.l2.forward(&a1);
        let a2: Vec<f64> = z2.iter().map(|v| silu(*v)).collect();
        let out = self.l3.forward(&a2);
        ForwardCache {
            input: input.to_vec(),
            z1,
            a1,
            z2,
            a2,
            out,
        }
    }

    pub fn forward(&self, x: &[f64], t: usize, cond: &Condition) -> Vec<f64> {
        self.forward_cached(&self.embed(x, t, cond)).out
    }

    /// Serialize to a self-describing checkpoint (architecture plus flat
    /// weight arrays). The encoding round-trips `f64` exactly.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&body).map_err(|e| Error::Serde(e.to_string()))
    }
}

impl ScoreModel for ScoreNet {
    fn dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn num_components(&self) -> usize {
        self.arch.num_components
    }

    fn epsilon(&self, x: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        self.check_latent(x)?;
        self.check_condition(cond)?;
        Ok(self.forward(x, t, cond))
    }
}

struct ForwardCache {
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

/// Hyperparameters for [`train_score_net`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub learning_rate: f64,
    /// Probability of replacing the condition with the null branch.
    pub cond_dropout: f64,
    pub seed: u64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            steps: 2000,
            batch_size: 128,
            hidden_dim: 64,
            time_embed_dim: 16,
            learning_rate: 1e-3,
            cond_dropout: 0.1,
            seed: 0,
        }
    }
}

/// A finished training run: the model plus the recorded per-step losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ScoreNet,
    pub losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - B1.powi(self.step as i32);
        let c2 = 1.0 - B2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Fit a [`ScoreNet`] to a labeled point set by denoising score matching.
///
/// Each step draws a batch, noises every point to a uniformly random step of
/// `sched`, and regresses the injected noise under the (possibly dropped)
/// component condition. Returns the model and the full loss history; errors
/// on an empty dataset or a non-finite loss.
pub fn train_score_net(
    dataset: &[(Vec<f64>, usize)],
    sched: &NoiseSchedule,
    settings: &TrainingSettings,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let latent_dim = dataset[0].0.len();
    let num_components = dataset.iter().map(|(_, l)| l + 1).max().unwrap_or(1);
    let arch = ScoreNetArch {
        latent_dim,
        hidden_dim: settings.hidden_dim,
        time_embed_dim: settings.time_embed_dim,
        num_components,
    };
    let mut net = ScoreNet::init(arch, settings.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(5);

    let mut opt_w1 = Adam::new(net.l1.w.len());
    let mut opt_b1 = Adam::new(net.l1.b.len());
    let mut opt_w2 = Adam::new(net.l2.w.len());
    let mut opt_b2 = Adam::new(net.l2.b.len());
    let mut opt_w3 = Adam::new(net.l3.w.len());
    let mut opt_b3 = Adam::new(net.l3.b.len());

    let mut losses = Vec::with_capacity(settings.steps);
    let t_max = sched.num_steps();

    for step in 0..settings.steps {
        let mut gw1 = vec![0.0; net.l1.w.len()];
        let mut gb1 = vec![0.0; net.l1.b.len()];
        let mut gw2 = vec![0.0; net.l2.w.len()];
        let mut gb2 = vec![0.0; net.l2.b.len()];
        let mut gw3 = vec![0.0; net.l3.w.len()];
        let mut gb3 = vec![0.0; net.l3.b.len()];
        let mut loss = 0.0;

        for _ in 0..settings.batch_size {
            let (x0, label) = &dataset[rng.random_range(0..dataset.len())];
            let t = rng.random_range(1..=t_max);
            let ab = sched.alpha_bar(t);
            let noise: Vec<f64> = (0..latent_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let x_t: Vec<f64> = x0
                .iter()
                .zip(&noise)
                .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
                .collect();
            let cond = if rng.random_range(0.0..1.0) < settings.cond_dropout {
                Condition::Null
            } else {
                Condition::Component(*label)
            };

            let input = net.embed(&x_t, t, &cond);
            let cache = net.forward_cached(&input);
            let scale = 1.0 / (settings.batch_size * latent_dim) as f64;
            let mut grad_out = vec![0.0; latent_dim];
            for i in 0..latent_dim {
                let diff = cache.out[i] - noise[i];
                loss += diff * diff * scale;
                grad_out[i] = 2.0 * diff * scale;
            }

            let g_a2 = net.l3.backward(&cache.a2, &grad_out, &mut gw3, &mut gb3);
            let g_z2: Vec<f64> = g_a2
                .iter()
                .zip(&cache.z2)
                .map(|(g, z)| g * silu_grad(*z))
                .collect();
            let g_a1 = net.l2.backward(&cache.a1, &g_z2, &mut gw2, &mut gb2);
            let g_z1: Vec<f64> = g_a1
                .iter()
                .zip(&cache.z1)
                .map(|(g, z)| g * silu_grad(*z))
                .collect();
            net.l1.backward(&cache.input, &g_z1, &mut gw1, &mut gb1);
        }

        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        losses.push(loss);

        let lr = settings.learning_rate;
        opt_w1.update(&mut net.l1.w, &gw1, lr);
        opt_b1.update(&mut net.l1.b, &gb1, lr);
        opt_w2.update(&mut net.l2.w, &gw2, lr);
        opt_b2.update(&mut net.l2.b, &gb2, lr);
        opt_w3.update(&mut net.l3.w, &gw3, lr);
        opt_b3.update(&mut net.l3.b, &gb3, lr);
    }

    Ok(TrainOutcome { net, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, ScheduleKind};
    use crate::score::{sample_mixture_dataset, MixtureSpec};

    fn toy_setup() -> (Vec<(Vec<f64>, usize)>, NoiseSchedule) {
        let spec =
            MixtureSpec::equal_weight(vec![vec![2.0, 0.0], vec![-2.0, 0.0]], 0.25).unwrap();
        let data = sample_mixture_dataset(&spec, 256, 7);
        let sched = build_schedule(ScheduleKind::Linear, 10, 0.02, 0.4).unwrap();
        (data, sched)
    }

    #[test]
    fn one_step_smoke() {
        let (data, sched) = toy_setup();
        let settings = TrainingSettings {
            steps: 1,
            batch_size: 16,
            ..Default::default()
        };
        let run = train_score_net(&data, &sched, &settings).unwrap();
        assert_eq!(run.losses.len(), 1);
        assert!(run.losses[0].is_finite());
    }

    #[test]
    fn loss_decreases_on_fixed_seed() {
        let (data, sched) = toy_setup();
        let settings = TrainingSettings {
            steps: 400,
            batch_size: 64,
            ..Default::default()
        };
        let run = train_score_net(&data, &sched, &settings).unwrap();
        let head: f64 = run.losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = run.losses[run.losses.len() - 20..].iter().sum::<f64>() / 20.0;
        assert!(
            tail < head,
            "expected loss to fall: first-epoch mean {head}, last-epoch mean {tail}"
        );
    }

    #[test]
    fn checkpoint_encoding_preserves_extreme_floats() {
        // requires serde_json's float_roundtrip parser; the default parser
        // loses an ulp near the subnormal range
        let vals: Vec<f64> =
            vec![0.1, -1.5e-300, std::f64::consts::PI, f64::MIN_POSITIVE, 1.0 / 3.0];
        let s = serde_json::to_string(&vals).unwrap();
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        for (a, b) in vals.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits(), "mismatch {a:?} -> {b:?} in {s}");
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let sched = build_schedule(ScheduleKind::Linear, 4, 0.1, 0.3).unwrap();
        assert!(matches!(
            train_score_net(&[], &sched, &TrainingSettings::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let (data, sched) = toy_setup();
        let settings = TrainingSettings {
            steps: 20,
            batch_size: 16,
            ..Default::default()
        };
        let run = train_score_net(&data, &sched, &settings).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        run.net.save_checkpoint(&path).unwrap();
        let loaded = ScoreNet::load_checkpoint(&path).unwrap();
        assert_eq!(run.net, loaded);
        let x = vec![0.37, -1.2];
        for t in 1..=10 {
            let a = run.net.forward(&x, t, &Condition::Component(1));
            let b = loaded.forward(&x, t, &Condition::Component(1));
            assert_eq!(a, b);
        }
    }
}
