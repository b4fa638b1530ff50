//! The end-to-end minibatch objective and its exact gradient.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::model::{match_score_unchecked, HdbnModel};
use super::params::HyperParams;
use crate::dataset::MOOD_DIM;
use crate::emotion_led::{led_backward, led_forward, LedNoise, LedRecord, LedWeights, NetGrads};
use crate::error::{check_dim, Error, Result};
use crate::mood_model::{BnnGrads, Example, WeightPrior};
use crate::numerics::{sigmoid, softmax_in_place, softplus, Rng};

/// One training tuple: user `u` tagged `emotion` on `pos`; `neg` is a
/// sampled track `u` never listened to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tuple {
    pub user: usize,
    pub emotion: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Distinct users of a batch in first-appearance order, and each tuple's
/// slot in that list.
pub fn batch_users(batch: &[Tuple]) -> (Vec<usize>, Vec<usize>) {
    let mut index = HashMap::new();
    let mut users = Vec::new();
    let slots = batch
        .iter()
        .map(|t| {
            *index.entry(t.user).or_insert_with(|| {
                users.push(t.user);
                users.len() - 1
            })
        })
        .collect();
    (users, slots)
}

/// Mood network slot index: groups first, then the global network.
fn slot_index(model: &HdbnModel, group: Option<usize>) -> usize {
    group.unwrap_or(model.bnns.n_groups())
}

/// All the noise one minibatch consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNoise {
    pub led: LedNoise,
    /// Weight noise per mood network slot (groups, then global). `None`
    /// scores with mean weights.
    pub weights: Vec<Option<Vec<f64>>>,
}

impl BatchNoise {
    /// Means everywhere.
    pub fn zeros(model: &HdbnModel, batch: &[Tuple]) -> Self {
        let (users, _) = batch_users(batch);
        Self {
            led: LedNoise::zeros(users.len(), batch.len(), model.hp.latent_dim),
            weights: vec![None; model.bnns.n_groups() + 1],
        }
    }

    /// Latent noise from the `("led-noise", key)` substream of `root`, and
    /// weight noise for each slot from its own substream, so that switching
    /// one kind of noise off leaves the other untouched.
    pub fn draw(model: &HdbnModel, batch: &[Tuple], root: &Rng, key: u64) -> Self {
        let (users, _) = batch_users(batch);
        let led = LedNoise::draw(
            users.len(),
            batch.len(),
            model.hp.latent_dim,
            &mut root.substream_indexed("led-noise", key),
        );
        let mut weights = vec![None; model.bnns.n_groups() + 1];
        if model.hp.ablation.phwu {
            let mut used: Vec<usize> = users.iter().map(|&u| slot_index(model, model.bnn_group(u))).collect();
            if model.hp.joint_bnn {
                used.push(model.bnns.n_groups());
            }
            used.sort_unstable();
            used.dedup();
            for s in used {
                let net = if s == model.bnns.n_groups() {
                    &model.bnns.global
                } else {
                    &model.bnns.groups[s]
                };
                let mut r = root.substream_indexed(&format!("weight-noise-{s}"), key);
                weights[s] = Some(r.normal_vec(net.num_weights()));
            }
        }
        Self { led, weights }
    }
}

/// Scales of the objective's terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub rec: f64,
    pub kl1: f64,
    pub kl2: f64,
    pub mse1: f64,
    pub mse2: f64,
    /// Global mood network loss; only with `joint`.
    pub bnn_global: f64,
    /// Group mood network losses; only with `joint`.
    pub bnn_groups: f64,
    /// Produce gradients for the mood networks.
    pub joint: bool,
}

impl ObjectiveWeights {
    pub fn from_hyper_params(hp: &HyperParams) -> Self {
        Self {
            rec: 1.0,
            kl1: hp.lambda1,
            kl2: hp.lambda2,
            mse1: hp.lambda4,
            mse2: hp.lambda3,
            bnn_global: hp.lambda5,
            bnn_groups: hp.lambda6,
            joint: hp.joint_bnn,
        }
    }

    /// Only the term named `name` (`rec`, `kl1`, `kl2`, `mse1`, `mse2`) at
    /// unit weight.
    pub fn only(name: &str) -> Result<Self> {
        let mut w = Self {
            rec: 0.0,
            kl1: 0.0,
            kl2: 0.0,
            mse1: 0.0,
            mse2: 0.0,
            bnn_global: 0.0,
            bnn_groups: 0.0,
            joint: false,
        };
        match name {
            "rec" => w.rec = 1.0,
            "kl1" => w.kl1 = 1.0,
            "kl2" => w.kl2 = 1.0,
            "mse1" => w.mse1 = 1.0,
            "mse2" => w.mse2 = 1.0,
            other => return Err(Error::Config(format!("unknown objective term {other:?}"))),
        }
        Ok(w)
    }
}

/// Unweighted term values of one minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub rec: f64,
    pub kl1: f64,
    pub kl2: f64,
    pub mse1: f64,
    pub mse2: f64,
    pub bnn_global: f64,
    pub bnn_groups: f64,
    /// Weighted sum.
    pub total: f64,
}

impl ObjectiveTerms {
    pub fn is_finite(&self) -> bool {
        [self.rec, self.kl1, self.kl2, self.mse1, self.mse2, self.bnn_global, self.bnn_groups, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

/// Gradient of the weighted objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveGrads {
    pub nets: NetGrads,
    /// Users touched by the batch, and `∂L/∂R_u` for each.
    pub users: Vec<usize>,
    pub user_grads: Vec<Vec<f64>>,
    /// Tracks touched by the batch, and `∂L/∂R_v` for each.
    pub music: Vec<usize>,
    pub music_grads: Vec<Vec<f64>>,
    /// Per mood network slot, only when the objective is joint.
    pub bnn: Vec<Option<BnnGrads>>,
}

/// Value and gradient of the weighted minibatch objective under `noise`.
pub fn objective(
    model: &HdbnModel,
    batch: &[Tuple],
    noise: &BatchNoise,
    w: ObjectiveWeights,
) -> Result<(ObjectiveTerms, ObjectiveGrads)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty minibatch".into()));
    }
    let n_slots = model.bnns.n_groups() + 1;
    check_dim(n_slots, noise.weights.len())?;
    for t in batch {
        model.check_query(t.user, t.emotion)?;
        model.check_music(t.pos)?;
        model.check_music(t.neg)?;
    }
    let dim = model.emb_dim();
    let (users, user_slot) = batch_users(batch);
    let user_rows: Vec<&[f64]> = users.iter().map(|&u| model.user_row(u)).collect();
    let records: Vec<LedRecord<'_>> = batch
        .iter()
        .zip(&user_slot)
        .map(|(t, &slot)| LedRecord {
            user: slot,
            s: model.vocab.row(t.emotion),
        })
        .collect();
    let pass = led_forward(&model.nets, &user_rows, &records, Some(&noise.led), model.hp.ablation.led_options())?;

    // Concrete weights per mood network slot, built on first use.
    let slot_net = |s: usize| {
        if s == model.bnns.n_groups() {
            &model.bnns.global
        } else {
            &model.bnns.groups[s]
        }
    };
    let mut concrete: Vec<Option<Vec<f64>>> = vec![None; n_slots];
    let mut dw: Vec<Option<Vec<f64>>> = vec![None; n_slots];

    let mut music = Vec::new();
    let mut music_index = HashMap::new();
    let mut music_grads: Vec<Vec<f64>> = Vec::new();
    let mut music_slot = |v: usize, grads: &mut Vec<Vec<f64>>| -> usize {
        *music_index.entry(v).or_insert_with(|| {
            music.push(v);
            grads.push(vec![0.0; dim]);
            grads.len() - 1
        })
    };
    let mut d_users = vec![vec![0.0; dim]; users.len()];
    let mut dz = vec![vec![0.0; model.hp.latent_dim]; batch.len()];
    let inv_b = 1.0 / batch.len() as f64;
    let mut rec = 0.0;
    let mut dl = [0.0; MOOD_DIM];
    let mut dlogit = [0.0; MOOD_DIM];

    for (i, t) in batch.iter().enumerate() {
        let s = slot_index(model, model.bnn_group(t.user));
        let net = slot_net(s);
        if concrete[s].is_none() {
            concrete[s] = Some(match (&noise.weights[s], model.hp.ablation.phwu) {
                (Some(eps), true) => {
                    check_dim(net.num_weights(), eps.len())?;
                    net.weights_with(eps)
                }
                _ => net.mu().to_vec(),
            });
            if w.joint {
                dw[s] = Some(vec![0.0; net.num_weights()]);
            }
        }
        let weights = concrete[s].as_deref().expect("weights built above");
        let trace = net.shape().forward_traced(weights, pass.z(i));
        let mut l = trace.output.clone();
        softmax_in_place(&mut l);

        let r_u = model.user_row(t.user);
        let (o_pos, r_pos) = (model.moods[t.pos].as_slice(), model.music_row(t.pos));
        let (o_neg, r_neg) = (model.moods[t.neg].as_slice(), model.music_row(t.neg));
        let m_pos = match_score_unchecked(&l, r_u, o_pos, r_pos);
        let m_neg = match_score_unchecked(&l, r_u, o_neg, r_neg);
        let delta = m_pos - m_neg;
        rec += softplus(-delta);
        if w.rec == 0.0 {
            continue;
        }
        let g = -sigmoid(-delta) * w.rec * inv_b;
        let (dm_pos, dm_neg) = (g, -g);

        let du = &mut d_users[user_slot[i]];
        for k in 0..dim {
            du[k] += dm_pos * r_pos[k] + dm_neg * r_neg[k];
        }
        let jp = music_slot(t.pos, &mut music_grads);
        for (d, &x) in music_grads[jp].iter_mut().zip(r_u) {
            *d += dm_pos * x;
        }
        let jn = music_slot(t.neg, &mut music_grads);
        for (d, &x) in music_grads[jn].iter_mut().zip(r_u) {
            *d += dm_neg * x;
        }

        for k in 0..MOOD_DIM {
            dl[k] = dm_pos * o_pos[k] + dm_neg * o_neg[k];
        }
        let ldl: f64 = l.iter().zip(&dl).map(|(a, b)| a * b).sum();
        for k in 0..MOOD_DIM {
            dlogit[k] = l[k] * (dl[k] - ldl);
        }
        let mut scratch;
        let grad_params: &mut [f64] = match dw[s].as_mut() {
            Some(buf) => buf,
            None => {
                scratch = vec![0.0; net.num_weights()];
                &mut scratch
            }
        };
        net.shape().backward(weights, &trace, &dlogit, grad_params, Some(&mut dz[i]));
    }
    rec *= inv_b;
    // Touch every track even when `rec` carries no weight, so the gradient
    // layout does not depend on the weights.
    for t in batch {
        music_slot(t.pos, &mut music_grads);
        music_slot(t.neg, &mut music_grads);
    }

    let mut nets = model.nets.zero_grads();
    let led_w = LedWeights {
        kl1: w.kl1,
        kl2: w.kl2,
        mse1: w.mse1,
        mse2: w.mse2,
    };
    let dz_in = model.hp.ablation.ehwu.then_some(dz.as_slice());
    led_backward(&model.nets, &pass, led_w, dz_in, &mut nets, &mut d_users);

    let mut terms = ObjectiveTerms {
        rec,
        kl1: pass.losses.kl1,
        kl2: pass.losses.kl2,
        mse1: pass.losses.mse1,
        mse2: pass.losses.mse2,
        ..Default::default()
    };

    let mut bnn: Vec<Option<BnnGrads>> = vec![None; n_slots];
    if w.joint {
        for s in 0..n_slots {
            let Some(d) = dw[s].take() else { continue };
            let net = slot_net(s);
            let mut g = BnnGrads {
                mu: d.clone(),
                rho: vec![0.0; d.len()],
            };
            if let (Some(eps), true) = (&noise.weights[s], model.hp.ablation.phwu) {
                for (j, r) in net.rho().iter().enumerate() {
                    g.rho[j] = d[j] * eps[j] * sigmoid(*r);
                }
            }
            bnn[s] = Some(g);
        }
        let examples: Vec<(usize, Example<'_>)> = batch
            .iter()
            .map(|t| {
                (
                    slot_index(model, model.bnn_group(t.user)),
                    Example {
                        input: model.vocab.row(t.emotion),
                        target: model.moods[t.pos].as_slice(),
                    },
                )
            })
            .collect();
        let global = model.bnns.n_groups();
        let eps_of = |s: usize| noise.weights[s].as_deref().filter(|_| model.hp.ablation.phwu);
        if w.bnn_global != 0.0 {
            let all: Vec<Example<'_>> = examples.iter().map(|(_, e)| *e).collect();
            let (loss, g) = model
                .bnns
                .global
                .objective(&all, WeightPrior::StandardNormal, model.hp.alpha, eps_of(global))?;
            terms.bnn_global = loss.total;
            add_bnn_grads(&mut bnn[global], &g, w.bnn_global);
        }
        if w.bnn_groups != 0.0 && model.hp.ablation.phau {
            for s in 0..model.bnns.n_groups() {
                let mine: Vec<Example<'_>> = examples.iter().filter(|(k, _)| *k == s).map(|(_, e)| *e).collect();
                if mine.is_empty() {
                    continue;
                }
                let (loss, g) = model.bnns.groups[s].objective(
                    &mine,
                    WeightPrior::Anchor(&model.bnns.global),
                    model.hp.alpha,
                    eps_of(s),
                )?;
                terms.bnn_groups += loss.total;
                add_bnn_grads(&mut bnn[s], &g, w.bnn_groups);
                if eps_of(s).is_some() {
                    let anchor = bnn[global].get_or_insert_with(|| BnnGrads {
                        mu: vec![0.0; g.mu.len()],
                        rho: vec![0.0; g.rho.len()],
                    });
                    model.bnns.groups[s].add_anchor_kl_grad(&model.bnns.global, w.bnn_groups * model.hp.alpha, anchor);
                }
            }
        }
    }

    terms.total = w.rec * terms.rec
        + w.kl1 * terms.kl1
        + w.kl2 * terms.kl2
        + w.mse1 * terms.mse1
        + w.mse2 * terms.mse2
        + w.bnn_global * terms.bnn_global
        + w.bnn_groups * terms.bnn_groups;

    Ok((
        terms,
        ObjectiveGrads {
            nets,
            users,
            user_grads: d_users,
            music,
            music_grads,
            bnn,
        },
    ))
}

fn add_bnn_grads(dst: &mut Option<BnnGrads>, g: &BnnGrads, scale: f64) {
    let d = dst.get_or_insert_with(|| BnnGrads {
        mu: vec![0.0; g.mu.len()],
        rho: vec![0.0; g.rho.len()],
    });
    for (a, b) in d.mu.iter_mut().zip(&g.mu) {
        *a += scale * b;
    }
    for (a, b) in d.rho.iter_mut().zip(&g.rho) {
        *a += scale * b;
    }
}
