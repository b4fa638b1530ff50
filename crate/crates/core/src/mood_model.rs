//! Bayesian mood network: maps an emotion vector to a preference
//! distribution over the nine mood categories.
//!
//! Every weight has a Gaussian posterior `N(μ, σ²)` with `σ = softplus(ρ)`.
//! Training minimizes the data term `mean KL(o ‖ l)` plus `α` times the KL
//! from the weight posterior to its prior, which is `N(0, 1)` for global
//! pretraining and the global posterior when fine-tuning a group.

use serde::{Deserialize, Serialize};

use crate::dataset::{EmotionVocab, Interaction, MoodDistribution, MOOD_DIM};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{
    categorical_kl_floored, gaussian_kl, gaussian_kl_to_std, sigmoid, softmax_in_place, softplus,
    softplus_inverse, Activation, MlpShape, Optimizer, OptimizerKind, Rng,
};
use crate::par::{map_indexed, Execution};

pub const MOOD_HIDDEN: usize = 64;
/// Initial posterior standard deviation of every weight.
pub const SIGMA_INIT: f64 = 0.05;

/// `input → 64 relu → 64 relu → 9` logits; softmax is applied on top.
pub fn bnn_shape(input_dim: usize) -> MlpShape {
    MlpShape::new(
        &[input_dim, MOOD_HIDDEN, MOOD_HIDDEN, MOOD_DIM],
        Activation::Relu,
        Activation::Identity,
    )
}

/// One training pair: an emotion vector and the mood of the chosen track.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub input: &'a [f64],
    pub target: &'a [f64],
}

/// `(E_tag[e], o_v)` for every record.
pub fn mood_examples<'a>(
    records: &[Interaction],
    vocab: &'a EmotionVocab,
    moods: &'a [MoodDistribution],
) -> Vec<Example<'a>> {
    records
        .iter()
        .map(|r| Example {
            input: vocab.row(r.emotion),
            target: moods[r.music].as_slice(),
        })
        .collect()
}

/// Prior the weight posterior is pulled toward.
#[derive(Clone, Copy, Debug)]
pub enum WeightPrior<'a> {
    StandardNormal,
    Anchor(&'a BnnPosterior),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BnnLoss {
    pub data: f64,
    pub weight_kl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnnGrads {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnnPosterior {
    shape: MlpShape,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl BnnPosterior {
    /// Fan-in uniform means, every σ at [`SIGMA_INIT`].
    pub fn new(input_dim: usize, rng: &mut Rng) -> Self {
        let shape = bnn_shape(input_dim);
        let mu = shape.init_params(rng);
        let rho = vec![softplus_inverse(SIGMA_INIT); mu.len()];
        Self { shape, mu, rho }
    }

    pub fn from_parts(shape: MlpShape, mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        check_dim(shape.num_params(), mu.len())?;
        check_dim(shape.num_params(), rho.len())?;
        if mu.iter().chain(&rho).any(|x| !x.is_finite()) {
            return Err(Error::Domain("posterior parameters must be finite".into()));
        }
        Ok(Self { shape, mu, rho })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn num_weights(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn rho_mut(&mut self) -> &mut [f64] {
        &mut self.rho
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// `μ + σ ∘ ε` for caller-supplied noise.
    pub fn weights_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.rho)
            .zip(eps)
            .map(|((&m, &r), &e)| m + softplus(r) * e)
            .collect()
    }

    pub fn sample_weights(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.normal_vec(self.mu.len());
        self.weights_with(&eps)
    }

    fn mood_with(&self, weights: &[f64], s: &[f64]) -> Result<MoodDistribution> {
        let mut l = self.shape.forward(weights, s)?;
        softmax_in_place(&mut l);
        MoodDistribution::from_slice(&l)
            .map_err(|e| Error::Divergence(format!("mood network output: {e}")))
    }

    /// Mood preference under one fresh weight sample.
    pub fn predict_mood(&self, s: &[f64], rng: &mut Rng) -> Result<MoodDistribution> {
        check_dim(self.input_dim(), s.len())?;
        let w = self.sample_weights(rng);
        self.mood_with(&w, s)
    }

    /// Mood preference under the mean weights.
    pub fn predict_mood_mean(&self, s: &[f64]) -> Result<MoodDistribution> {
        self.mood_with(&self.mu, s)
    }

    /// KL from the weight posterior to `prior`, summed over all weights.
    pub fn weight_kl(&self, prior: WeightPrior<'_>) -> Result<f64> {
        let sigma = self.sigma();
        match prior {
            WeightPrior::StandardNormal => gaussian_kl_to_std(&self.mu, &sigma),
            WeightPrior::Anchor(p) => {
                check_dim(self.num_weights(), p.num_weights())?;
                gaussian_kl(&self.mu, &sigma, &p.mu, &p.sigma())
            }
        }
    }

    /// Accumulate `scale · ∂KL/∂(μ, ρ)` into the gradient buffers.
    pub fn add_weight_kl_grad(&self, prior: WeightPrior<'_>, scale: f64, grads: &mut BnnGrads) {
        for i in 0..self.mu.len() {
            let (m, r) = (self.mu[i], self.rho[i]);
            let s = softplus(r);
            let (dm, ds) = match prior {
                WeightPrior::StandardNormal => (m, s - 1.0 / s),
                WeightPrior::Anchor(p) => {
                    let ps = softplus(p.rho[i]);
                    let pv = ps * ps;
                    ((m - p.mu[i]) / pv, -1.0 / s + s / pv)
                }
            };
            grads.mu[i] += scale * dm;
            grads.rho[i] += scale * ds * sigmoid(r);
        }
    }

    /// Accumulate `scale · ∂KL(self ‖ anchor)/∂(μ, ρ)` of the anchor's
    /// parameters into `grads`.
    pub fn add_anchor_kl_grad(&self, anchor: &BnnPosterior, scale: f64, grads: &mut BnnGrads) {
        for i in 0..self.mu.len() {
            let s = softplus(self.rho[i]);
            let ps = softplus(anchor.rho[i]);
            let diff = self.mu[i] - anchor.mu[i];
            let dm = -diff / (ps * ps);
            let ds = 1.0 / ps - (s * s + diff * diff) / (ps * ps * ps);
            grads.mu[i] += scale * dm;
            grads.rho[i] += scale * ds * sigmoid(anchor.rho[i]);
        }
    }

    /// Minibatch objective `mean KL(o ‖ l) + α · KL(q ‖ prior)` and its
    /// gradient. With `noise = None` the mean weights are used and the weight
    /// term is dropped.
    pub fn objective(
        &self,
        batch: &[Example<'_>],
        prior: WeightPrior<'_>,
        alpha: f64,
        noise: Option<&[f64]>,
    ) -> Result<(BnnLoss, BnnGrads)> {
        let n = self.mu.len();
        let mut grads = BnnGrads {
            mu: vec![0.0; n],
            rho: vec![0.0; n],
        };
        if batch.is_empty() {
            return Err(Error::Domain("empty minibatch".into()));
        }
        let weights = match noise {
            Some(eps) => {
                check_dim(n, eps.len())?;
                self.weights_with(eps)
            }
            None => self.mu.clone(),
        };
        let mut dw = vec![0.0; n];
        let inv_b = 1.0 / batch.len() as f64;
        let mut data = 0.0;
        let mut grad_out = [0.0; MOOD_DIM];
        for ex in batch {
            check_dim(self.input_dim(), ex.input.len())?;
            check_dim(MOOD_DIM, ex.target.len())?;
            let trace = self.shape.forward_traced(&weights, ex.input);
            let mut l = trace.output.clone();
            softmax_in_place(&mut l);
            data += categorical_kl_floored(ex.target, &l);
            for k in 0..MOOD_DIM {
                grad_out[k] = (l[k] - ex.target[k]) * inv_b;
            }
            self.shape.backward(&weights, &trace, &grad_out, &mut dw, None);
        }
        data *= inv_b;
        match noise {
            Some(eps) => {
                for i in 0..n {
                    grads.mu[i] = dw[i];
                    grads.rho[i] = dw[i] * eps[i] * sigmoid(self.rho[i]);
                }
            }
            None => grads.mu = dw,
        }
        let weight_kl = if noise.is_some() {
            self.add_weight_kl_grad(prior, alpha, &mut grads);
            self.weight_kl(prior)?
        } else {
            0.0
        };
        let loss = BnnLoss {
            data,
            weight_kl,
            total: data + alpha * weight_kl,
        };
        Ok((loss, grads))
    }

    /// Mean data term `E[KL(o ‖ l)]` under the mean weights.
    pub fn data_kl(&self, examples: &[Example<'_>]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Domain("no examples".into()));
        }
        let mut acc = 0.0;
        for ex in examples {
            let l = self.predict_mood_mean(ex.input)?;
            acc += categorical_kl_floored(ex.target, l.as_slice());
        }
        Ok(acc / examples.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnnTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub optimizer: OptimizerKind,
    /// Sample weight noise and keep the weight term. Off trains a plain
    /// network on the means.
    pub stochastic: bool,
}

impl BnnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnnEpochLog {
    pub epoch: usize,
    /// Mean minibatch data term over the epoch.
    pub data_kl: f64,
    /// Weight KL at the end of the epoch.
    pub weight_kl: f64,
    pub loss: f64,
}

fn train_loop(
    post: &mut BnnPosterior,
    prior: WeightPrior<'_>,
    examples: &[Example<'_>],
    cfg: &BnnTrainConfig,
    rng: &Rng,
) -> Result<Vec<BnnEpochLog>> {
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        rng.substream_indexed("bnn-shuffle", epoch as u64).shuffle(&mut order);
        let mut data_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let eps = cfg.stochastic.then(|| {
                let key = ((epoch as u64) << 32) | b as u64;
                rng.substream_indexed("bnn-weight-noise", key).normal_vec(post.num_weights())
            });
            let (loss, grads) = post.objective(&batch, prior, cfg.alpha, eps.as_deref())?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "mood network loss is {} at epoch {epoch}, batch {b} (data {}, weight KL {})",
                    loss.total, loss.data, loss.weight_kl
                )));
            }
            data_sum += loss.data * chunk.len() as f64;
            opt.begin_step();
            opt.update(0, &mut post.mu, &grads.mu);
            if cfg.stochastic {
                opt.update(1, &mut post.rho, &grads.rho);
            }
        }
        let data_kl = data_sum / examples.len() as f64;
        let weight_kl = if cfg.stochastic { post.weight_kl(prior)? } else { 0.0 };
        log::debug!("mood epoch {epoch}: data {data_kl:.6} weight-KL {weight_kl:.3}");
        logs.push(BnnEpochLog {
            epoch,
            data_kl,
            weight_kl,
            loss: data_kl + cfg.alpha * weight_kl,
        });
    }
    Ok(logs)
}

/// Train the global posterior on all examples against a `N(0, 1)` prior.
pub fn pretrain(
    input_dim: usize,
    examples: &[Example<'_>],
    cfg: &BnnTrainConfig,
    rng: &Rng,
) -> Result<(BnnPosterior, Vec<BnnEpochLog>)> {
    if examples.is_empty() {
        return Err(Error::Domain("pretraining needs at least one example".into()));
    }
    let mut post = BnnPosterior::new(input_dim, &mut rng.substream("bnn-init"));
    let logs = train_loop(&mut post, WeightPrior::StandardNormal, examples, cfg, rng)?;
    Ok((post, logs))
}

/// Start from the global posterior and fit one group's examples, anchored
/// to the global posterior. An empty group gets a copy of the global model.
pub fn finetune_group(
    global: &BnnPosterior,
    examples: &[Example<'_>],
    cfg: &BnnTrainConfig,
    rng: &Rng,
) -> Result<(BnnPosterior, Vec<BnnEpochLog>)> {
    let mut post = global.clone();
    if examples.is_empty() {
        log::warn!("fine-tuning an empty group; keeping the global mood network");
        return Ok((post, Vec::new()));
    }
    let logs = train_loop(&mut post, WeightPrior::Anchor(global), examples, cfg, rng)?;
    Ok((post, logs))
}

/// The global posterior and one fine-tuned posterior per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupBnnSet {
    pub global: BnnPosterior,
    pub groups: Vec<BnnPosterior>,
}

impl GroupBnnSet {
    /// Every group shares the global posterior.
    pub fn shared(global: BnnPosterior, n_groups: usize) -> Self {
        Self {
            groups: vec![global.clone(); n_groups],
            global,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, g: usize) -> Result<&BnnPosterior> {
        self.groups.get(g).ok_or(Error::UnknownIndex {
            kind: "group",
            index: g,
            len: self.groups.len(),
        })
    }
}

/// Fine-tune every group independently. Group `g` draws its noise from the
/// `g`-th substream of `rng`, so results do not depend on `exec`.
pub fn finetune_all(
    global: &BnnPosterior,
    group_examples: &[Vec<Example<'_>>],
    cfg: &BnnTrainConfig,
    rng: &Rng,
    exec: Execution,
) -> Result<(GroupBnnSet, Vec<Vec<BnnEpochLog>>)> {
    let runs = map_indexed(group_examples.len(), exec, |g| {
        let r = rng.substream_indexed("bnn-finetune", g as u64);
        finetune_group(global, &group_examples[g], cfg, &r)
    });
    let mut groups = Vec::with_capacity(runs.len());
    let mut logs = Vec::with_capacity(runs.len());
    for run in runs {
        let (p, l) = run?;
        groups.push(p);
        logs.push(l);
    }
    Ok((
        GroupBnnSet {
            global: global.clone(),
            groups,
        },
        logs,
    ))
}

const BNN_MAGIC: &[u8; 8] = b"HDBNMOOD";
pub const BNN_CHECKPOINT_VERSION: u32 = 1;

/// A posterior with the configuration and seed that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnnCheckpoint {
    pub posterior: BnnPosterior,
    pub config: BnnTrainConfig,
    pub seed: u64,
}

impl BnnCheckpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::persist::save(path, BNN_MAGIC, BNN_CHECKPOINT_VERSION, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::persist::load(path, BNN_MAGIC, BNN_CHECKPOINT_VERSION)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_predicts_uniform() {
        let shape = bnn_shape(16);
        let n = shape.num_params();
        let post = BnnPosterior::from_parts(shape, vec![0.0; n], vec![-30.0; n]).unwrap();
        let l = post.predict_mood_mean(&[0.0; 16]).unwrap();
        for &p in l.as_slice() {
            assert!((p - 1.0 / 9.0).abs() < 1e-15);
        }
        assert!(post.predict_mood_mean(&[0.0; 3]).is_err());
    }

    #[test]
    fn tiny_sigma_sample_is_the_mean() {
        let mut rng = Rng::new(3);
        let mut post = BnnPosterior::new(16, &mut rng);
        post.rho.iter_mut().for_each(|r| *r = -800.0);
        assert_eq!(post.sample_weights(&mut rng), post.mu);
    }

    #[test]
    fn initial_sigma() {
        let post = BnnPosterior::new(16, &mut Rng::new(0));
        assert!(post.sigma().iter().all(|&s| (s - SIGMA_INIT).abs() < 1e-12));
    }

    #[test]
    fn anchor_kl_to_itself_is_zero() {
        let post = BnnPosterior::new(16, &mut Rng::new(0));
        assert_eq!(post.weight_kl(WeightPrior::Anchor(&post)).unwrap(), 0.0);
    }

    #[test]
    fn empty_group_keeps_global() {
        let global = BnnPosterior::new(16, &mut Rng::new(0));
        let cfg = BnnTrainConfig {
            epochs: 3,
            batch_size: 4,
            lr: 0.1,
            alpha: 1e-5,
            optimizer: OptimizerKind::Sgd,
            stochastic: true,
        };
        let (p, logs) = finetune_group(&global, &[], &cfg, &Rng::new(1)).unwrap();
        assert_eq!(p, global);
        assert!(logs.is_empty());
    }
}
