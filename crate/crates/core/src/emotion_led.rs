//! Latent emotion distributions (LEDs).
//!
//! A user's prior LED `N(μ_u, σ1²)` is inferred from the user embedding by
//! θ1; the per-event posterior LED `N(μ_uv, σ2²)` is inferred from the
//! emotion-tag vector by θ2. φ1 and φ2 reconstruct the embedding and the tag
//! vector from samples of the two LEDs. Four loss terms come out of one
//! forward pass over a minibatch:
//!
//! * `kl1`: mean over batch users of `KL(N(μ_u, σ1²) ‖ N(0, 1))`
//! * `kl2`: mean over records of `KL(N(μ_uv, σ2²) ‖ N(μ_u, σ1²))`
//! * `mse1`: mean over records of `mse(s, φ2(z_uv))`
//! * `mse2`: mean over batch users of `mse(r_u, φ1(z_u))`

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{MoodDistribution, MOOD_NAMES};
use crate::error::{check_dim, Error, Result};
use crate::mood_model::BnnPosterior;
use crate::numerics::{
    gaussian_kl, gaussian_kl_to_std, mse, sigmoid, softplus, Activation, Mlp, MlpShape, Rng, Trace,
};

pub const LED_HIDDEN: usize = 64;
/// Added to every softplus σ head so standard deviations stay positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn from_head(out: &[f64]) -> Self {
        let d = out.len() / 2;
        Self {
            mu: out[..d].to_vec(),
            sigma: out[d..].iter().map(|&x| softplus(x) + SIGMA_FLOOR).collect(),
        }
    }

    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(eps)
            .map(|((m, s), e)| m + s * e)
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim());
        self.sample_with(&eps)
    }
}

/// Gradient on a Gaussian head's raw outputs from gradients on (μ, σ).
fn head_grad(head_out: &[f64], d_mu: &[f64], d_sigma: &[f64]) -> Vec<f64> {
    let d = d_mu.len();
    let mut g = Vec::with_capacity(2 * d);
    g.extend_from_slice(d_mu);
    g.extend(d_sigma.iter().zip(&head_out[d..]).map(|(ds, &x)| ds * sigmoid(x)));
    g
}

/// θ1, θ2, φ1 and φ2: one hidden relu layer each, linear outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceNets {
    pub theta1: Mlp,
    pub theta2: Mlp,
    pub phi1: Mlp,
    pub phi2: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl NetGrads {
    pub fn flatten(&self) -> Vec<f64> {
        [&self.theta1, &self.theta2, &self.phi1, &self.phi2]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }
}

impl InferenceNets {
    /// Fan-in uniform hidden layers; the Gaussian heads of θ1 and θ2 start
    /// at zero so every LED starts as `N(0, softplus(0)²)`.
    pub fn new(emb_dim: usize, emotion_dim: usize, latent_dim: usize, rng: &mut Rng) -> Self {
        let shape = |a: usize, b: usize| MlpShape::new(&[a, LED_HIDDEN, b], Activation::Relu, Activation::Identity);
        let mut theta1 = Mlp::init(shape(emb_dim, 2 * latent_dim), &mut rng.substream("theta1"));
        let mut theta2 = Mlp::init(shape(emotion_dim, 2 * latent_dim), &mut rng.substream("theta2"));
        theta1.shape.zero_last_layer(&mut theta1.params);
        theta2.shape.zero_last_layer(&mut theta2.params);
        let phi1 = Mlp::init(shape(latent_dim, emb_dim), &mut rng.substream("phi1"));
        let phi2 = Mlp::init(shape(latent_dim, emotion_dim), &mut rng.substream("phi2"));
        Self {
            theta1,
            theta2,
            phi1,
            phi2,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.theta1.shape.output_dim() / 2
    }

    pub fn emb_dim(&self) -> usize {
        self.theta1.shape.input_dim()
    }

    pub fn emotion_dim(&self) -> usize {
        self.theta2.shape.input_dim()
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            theta1: self.theta1.zeros_like(),
            theta2: self.theta2.zeros_like(),
            phi1: self.phi1.zeros_like(),
            phi2: self.phi2.zeros_like(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.theta1.params.len() + self.theta2.params.len() + self.phi1.params.len() + self.phi2.params.len()
    }

    pub fn infer_prior(&self, r_u: &[f64]) -> Result<LatentGaussian> {
        Ok(LatentGaussian::from_head(&self.theta1.forward(r_u)?))
    }

    pub fn infer_posterior(&self, s: &[f64]) -> Result<LatentGaussian> {
        Ok(LatentGaussian::from_head(&self.theta2.forward(s)?))
    }

    pub fn reconstruct_embedding(&self, z_u: &[f64]) -> Result<Vec<f64>> {
        self.phi1.forward(z_u)
    }

    pub fn reconstruct_emotion(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.phi2.forward(z)
    }
}

/// Which LED branches are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedOptions {
    /// Anchor the posterior LED to the user's prior LED. Off anchors it to
    /// `N(0, 1)`.
    pub across_users: bool,
    /// Infer a posterior LED per event. Off feeds the tag vector straight
    /// through as the latent, with no posterior terms.
    pub within_user: bool,
}

impl Default for LedOptions {
    fn default() -> Self {
        Self {
            across_users: true,
            within_user: true,
        }
    }
}

/// Standard normal noise for one minibatch: `users[j]` drives `z_u` of batch
/// user `j`, `records[i]` drives `z_uv` of record `i`. `None` uses the means.
#[derive(Clone, Debug, PartialEq)]
pub struct LedNoise {
    pub users: Vec<Vec<f64>>,
    pub records: Vec<Vec<f64>>,
}

impl LedNoise {
    pub fn zeros(n_users: usize, n_records: usize, dim: usize) -> Self {
        Self {
            users: vec![vec![0.0; dim]; n_users],
            records: vec![vec![0.0; dim]; n_records],
        }
    }

    pub fn draw(n_users: usize, n_records: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            users: (0..n_users).map(|_| rng.normal_vec(dim)).collect(),
            records: (0..n_records).map(|_| rng.normal_vec(dim)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedLosses {
    pub kl1: f64,
    pub kl2: f64,
    pub mse1: f64,
    pub mse2: f64,
}

/// Scales applied to each loss term when backpropagating.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LedWeights {
    pub kl1: f64,
    pub kl2: f64,
    pub mse1: f64,
    pub mse2: f64,
}

#[derive(Clone, Debug)]
struct UserPass {
    r_u: Vec<f64>,
    theta1: Trace,
    prior: LatentGaussian,
    eps: Vec<f64>,
    phi1: Trace,
}

#[derive(Clone, Debug)]
struct RecordPass {
    user: usize,
    s: Vec<f64>,
    theta2: Option<Trace>,
    posterior: Option<LatentGaussian>,
    eps: Vec<f64>,
    z: Vec<f64>,
    phi2: Option<Trace>,
}

/// Everything a minibatch forward pass computed, kept for `backward`.
#[derive(Clone, Debug)]
pub struct LedPass {
    users: Vec<UserPass>,
    records: Vec<RecordPass>,
    options: LedOptions,
    pub losses: LedLosses,
}

/// One record of a minibatch: the batch-local user slot and the tag vector.
#[derive(Clone, Copy, Debug)]
pub struct LedRecord<'a> {
    pub user: usize,
    pub s: &'a [f64],
}

impl LedPass {
    /// Latent fed to the mood network for record `i`.
    pub fn z(&self, i: usize) -> &[f64] {
        &self.records[i].z
    }

    pub fn posterior(&self, i: usize) -> Option<&LatentGaussian> {
        self.records[i].posterior.as_ref()
    }

    pub fn prior(&self, j: usize) -> &LatentGaussian {
        &self.users[j].prior
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }
}

/// Forward pass over `users` (batch-local embeddings) and `records`.
pub fn led_forward(
    nets: &InferenceNets,
    users: &[&[f64]],
    records: &[LedRecord<'_>],
    noise: Option<&LedNoise>,
    options: LedOptions,
) -> Result<LedPass> {
    let d = nets.latent_dim();
    if users.is_empty() || records.is_empty() {
        return Err(Error::Domain("LED pass needs at least one user and one record".into()));
    }
    if let Some(n) = noise {
        check_dim(users.len(), n.users.len())?;
        check_dim(records.len(), n.records.len())?;
    }
    let zero = vec![0.0; d];
    let mut losses = LedLosses::default();
    let mut user_passes = Vec::with_capacity(users.len());
    for (j, r_u) in users.iter().enumerate() {
        check_dim(nets.emb_dim(), r_u.len())?;
        let theta1 = nets.theta1.forward_traced(r_u);
        let prior = LatentGaussian::from_head(&theta1.output);
        let eps = noise.map_or(&zero, |n| &n.users[j]).clone();
        check_dim(d, eps.len())?;
        let z_u = prior.sample_with(&eps);
        let phi1 = nets.phi1.forward_traced(&z_u);
        losses.kl1 += gaussian_kl_to_std(&prior.mu, &prior.sigma)?;
        losses.mse2 += mse(r_u, &phi1.output)?;
        user_passes.push(UserPass {
            r_u: r_u.to_vec(),
            theta1,
            prior,
            eps,
            phi1,
        });
    }
    let mut record_passes = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let up = user_passes.get(rec.user).ok_or(Error::UnknownIndex {
            kind: "batch user",
            index: rec.user,
            len: user_passes.len(),
        })?;
        check_dim(nets.emotion_dim(), rec.s.len())?;
        let eps = noise.map_or(&zero, |n| &n.records[i]).clone();
        check_dim(d, eps.len())?;
        if options.within_user {
            let theta2 = nets.theta2.forward_traced(rec.s);
            let post = LatentGaussian::from_head(&theta2.output);
            let z = post.sample_with(&eps);
            let phi2 = nets.phi2.forward_traced(&z);
            losses.kl2 += if options.across_users {
                gaussian_kl(&post.mu, &post.sigma, &up.prior.mu, &up.prior.sigma)?
            } else {
                gaussian_kl_to_std(&post.mu, &post.sigma)?
            };
            losses.mse1 += mse(rec.s, &phi2.output)?;
            record_passes.push(RecordPass {
                user: rec.user,
                s: rec.s.to_vec(),
                theta2: Some(theta2),
                posterior: Some(post),
                eps,
                z,
                phi2: Some(phi2),
            });
        } else {
            check_dim(d, rec.s.len())?;
            record_passes.push(RecordPass {
                user: rec.user,
                s: rec.s.to_vec(),
                theta2: None,
                posterior: None,
                eps,
                z: rec.s.to_vec(),
                phi2: None,
            });
        }
    }
    let nu = users.len() as f64;
    let nr = records.len() as f64;
    losses.kl1 /= nu;
    losses.mse2 /= nu;
    losses.kl2 /= nr;
    losses.mse1 /= nr;
    Ok(LedPass {
        users: user_passes,
        records: record_passes,
        options,
        losses,
    })
}

/// Accumulate gradients of `Σ weights · losses` plus any upstream gradient
/// on the record latents (`dz[i]` for record `i`) into `grads`, and the
/// gradient with respect to each batch user's embedding into `d_users`.
pub fn led_backward(
    nets: &InferenceNets,
    pass: &LedPass,
    weights: LedWeights,
    dz: Option<&[Vec<f64>]>,
    grads: &mut NetGrads,
    d_users: &mut [Vec<f64>],
) {
    let d = nets.latent_dim();
    let nu = pass.users.len() as f64;
    let nr = pass.records.len() as f64;
    let mut d_prior_mu = vec![vec![0.0; d]; pass.users.len()];
    let mut d_prior_sigma = vec![vec![0.0; d]; pass.users.len()];

    for (i, rec) in pass.records.iter().enumerate() {
        let (Some(post), Some(theta2), Some(phi2)) = (&rec.posterior, &rec.theta2, &rec.phi2) else {
            continue;
        };
        let mut dmu = vec![0.0; d];
        let mut dsig = vec![0.0; d];
        let w2 = weights.kl2 / nr;
        if w2 != 0.0 {
            if pass.options.across_users {
                let prior = &pass.users[rec.user].prior;
                for k in 0..d {
                    let (qm, qs, pm, ps) = (post.mu[k], post.sigma[k], prior.mu[k], prior.sigma[k]);
                    let diff = qm - pm;
                    let pv = ps * ps;
                    dmu[k] += w2 * diff / pv;
                    dsig[k] += w2 * (-1.0 / qs + qs / pv);
                    d_prior_mu[rec.user][k] -= w2 * diff / pv;
                    d_prior_sigma[rec.user][k] += w2 * (1.0 / ps - (qs * qs + diff * diff) / (pv * ps));
                }
            } else {
                for k in 0..d {
                    dmu[k] += w2 * post.mu[k];
                    dsig[k] += w2 * (post.sigma[k] - 1.0 / post.sigma[k]);
                }
            }
        }
        let mut dz_i = dz.map_or_else(|| vec![0.0; d], |g| g[i].clone());
        let w1 = weights.mse1 / nr;
        if w1 != 0.0 {
            let n = rec.s.len() as f64;
            let g_out: Vec<f64> = phi2
                .output
                .iter()
                .zip(&rec.s)
                .map(|(o, s)| w1 * 2.0 * (o - s) / n)
                .collect();
            nets.phi2.backward(phi2, &g_out, &mut grads.phi2, Some(&mut dz_i));
        }
        for k in 0..d {
            dmu[k] += dz_i[k];
            dsig[k] += dz_i[k] * rec.eps[k];
        }
        let g_head = head_grad(&theta2.output, &dmu, &dsig);
        nets.theta2.backward(theta2, &g_head, &mut grads.theta2, None);
    }

    for (j, up) in pass.users.iter().enumerate() {
        let mut dmu = std::mem::take(&mut d_prior_mu[j]);
        let mut dsig = std::mem::take(&mut d_prior_sigma[j]);
        let wk = weights.kl1 / nu;
        if wk != 0.0 {
            for k in 0..d {
                dmu[k] += wk * up.prior.mu[k];
                dsig[k] += wk * (up.prior.sigma[k] - 1.0 / up.prior.sigma[k]);
            }
        }
        let wm = weights.mse2 / nu;
        if wm != 0.0 {
            let n = up.r_u.len() as f64;
            let g_out: Vec<f64> = up
                .phi1
                .output
                .iter()
                .zip(&up.r_u)
                .map(|(o, r)| wm * 2.0 * (o - r) / n)
                .collect();
            for (dr, g) in d_users[j].iter_mut().zip(&g_out) {
                *dr -= g;
            }
            let mut dz_u = vec![0.0; d];
            nets.phi1.backward(&up.phi1, &g_out, &mut grads.phi1, Some(&mut dz_u));
            for k in 0..d {
                dmu[k] += dz_u[k];
                dsig[k] += dz_u[k] * up.eps[k];
            }
        }
        let g_head = head_grad(&up.theta1.output, &dmu, &dsig);
        nets.theta1.backward(&up.theta1, &g_head, &mut grads.theta1, Some(&mut d_users[j]));
    }
}

/// Mood curves obtained by sweeping one coordinate of the posterior mean for
/// tag vector `s`, with the other coordinates held at `θ2(s)`'s mean.
pub fn sweep_led_dimension(
    nets: &InferenceNets,
    bnn: &BnnPosterior,
    s: &[f64],
    dim: usize,
    grid: &[f64],
) -> Result<Vec<MoodDistribution>> {
    let post = nets.infer_posterior(s)?;
    if dim >= post.dim() {
        return Err(Error::UnknownIndex {
            kind: "latent dimension",
            index: dim,
            len: post.dim(),
        });
    }
    if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("sweep grid must be finite and strictly ascending".into()));
    }
    let mut mu = post.mu;
    grid.iter()
        .map(|&g| {
            mu[dim] = g;
            bnn.predict_mood_mean(&mu)
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, grid: &[f64], curve: &[MoodDistribution]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::dataset::csv_io)?;
    let mut header = vec!["grid_value".to_string()];
    header.extend(MOOD_NAMES.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(crate::dataset::csv_io)?;
    for (g, m) in grid.iter().zip(curve) {
        let mut row = vec![format!("{g:?}")];
        row.extend(m.as_slice().iter().map(|x| format!("{x:?}")));
        w.write_record(&row).map_err(crate::dataset::csv_io)?;
    }
    w.flush()?;
    Ok(())
}
