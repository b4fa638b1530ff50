use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::HyperParams;
use crate::dataset::{EmotionVocab, ListenedIndex, MoodDistribution, MOOD_DIM};
use crate::emotion_led::{InferenceNets, LatentGaussian};
use crate::error::{check_dim, Error, Result};
use crate::grouping::UserGroups;
use crate::mood_model::{BnnPosterior, GroupBnnSet};
use crate::numerics::{softplus, Rng};

/// `[l, r_u] · [o_v, r_v]`, accumulated in concatenation order.
pub fn match_score(l: &[f64], r_u: &[f64], o_v: &[f64], r_v: &[f64]) -> Result<f64> {
    check_dim(MOOD_DIM, l.len())?;
    check_dim(MOOD_DIM, o_v.len())?;
    check_dim(r_u.len(), r_v.len())?;
    Ok(match_score_unchecked(l, r_u, o_v, r_v))
}

#[inline]
pub(crate) fn match_score_unchecked(l: &[f64], r_u: &[f64], o_v: &[f64], r_v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in l.iter().zip(o_v) {
        acc += a * b;
    }
    for (a, b) in r_u.iter().zip(r_v) {
        acc += a * b;
    }
    acc
}

/// `−ln σ(m_pos − m_neg)`, computed as `softplus(m_neg − m_pos)`.
pub fn bpr_loss(m_pos: f64, m_neg: f64) -> f64 {
    softplus(-(m_pos - m_neg))
}

/// Mean BPR loss over `(m_pos, m_neg)` pairs.
pub fn bpr_loss_mean(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(p, n)| bpr_loss(p, n)).sum::<f64>() / pairs.len() as f64
}

/// Row-major `n × dim` matrix with entries uniform in `±half_width`.
pub fn init_embeddings(n: usize, dim: usize, half_width: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n * dim).map(|_| rng.uniform_range(-half_width, half_width)).collect()
}

/// How a query is scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    /// Mean network weights and latent means.
    #[default]
    Deterministic,
    /// One latent sample and one weight sample per query.
    Stochastic,
}

/// What one forward pass computed on the way to a match score.
#[derive(Clone, Debug, PartialEq)]
pub struct Intermediates {
    pub prior: LatentGaussian,
    /// `None` when per-event latents are switched off.
    pub posterior: Option<LatentGaussian>,
    pub z: Vec<f64>,
    pub preference: MoodDistribution,
    /// Mood network used: a group index, or `None` for the global network.
    pub bnn_group: Option<usize>,
}

/// Top-`T` tracks in descending score, ties broken by ascending track id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Rank `candidates` by `scores[v]` and keep the first `t`.
    pub fn from_scores(scores: &[f64], candidates: impl IntoIterator<Item = usize>, t: usize) -> Result<Self> {
        let mut c: Vec<usize> = candidates.into_iter().collect();
        if let Some(&v) = c.iter().find(|&&v| scores[v].is_nan()) {
            return Err(Error::Divergence(format!("score of track {v} is NaN")));
        }
        c.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        c.truncate(t);
        Ok(Self {
            scores: c.iter().map(|&v| scores[v]).collect(),
            items: c,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Everything needed to score `(user, emotion)` queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdbnModel {
    pub user_emb: Vec<f64>,
    pub music_emb: Vec<f64>,
    pub nets: InferenceNets,
    pub bnns: GroupBnnSet,
    pub groups: UserGroups,
    pub vocab: EmotionVocab,
    pub moods: Vec<MoodDistribution>,
    pub listened: ListenedIndex,
    pub hp: HyperParams,
    pub seed: u64,
}

impl HdbnModel {
    /// Fresh embeddings and inference networks around trained mood networks.
    pub fn new(
        n_users: usize,
        moods: Vec<MoodDistribution>,
        vocab: EmotionVocab,
        groups: UserGroups,
        bnns: GroupBnnSet,
        listened: ListenedIndex,
        hp: HyperParams,
        seed: u64,
    ) -> Result<Self> {
        hp.validate()?;
        check_dim(hp.latent_dim, vocab.dim())?;
        check_dim(hp.latent_dim, bnns.global.input_dim())?;
        check_dim(n_users, groups.group_of.len())?;
        if bnns.n_groups() < groups.n_groups {
            return Err(Error::Validation(format!(
                "{} groups but only {} mood networks",
                groups.n_groups,
                bnns.n_groups()
            )));
        }
        let root = Rng::new(seed);
        let user_emb = init_embeddings(n_users, hp.emb_dim, hp.emb_init, &mut root.substream("user-embeddings"));
        let music_emb = init_embeddings(moods.len(), hp.emb_dim, hp.emb_init, &mut root.substream("music-embeddings"));
        let nets = InferenceNets::new(hp.emb_dim, vocab.dim(), hp.latent_dim, &mut root.substream("inference-nets"));
        Ok(Self {
            user_emb,
            music_emb,
            nets,
            bnns,
            groups,
            vocab,
            moods,
            listened,
            hp,
            seed,
        })
    }

    pub fn n_users(&self) -> usize {
        self.groups.group_of.len()
    }

    pub fn n_music(&self) -> usize {
        self.moods.len()
    }

    pub fn emb_dim(&self) -> usize {
        self.hp.emb_dim
    }

    pub fn user_row(&self, u: usize) -> &[f64] {
        let d = self.hp.emb_dim;
        &self.user_emb[u * d..(u + 1) * d]
    }

    pub fn music_row(&self, v: usize) -> &[f64] {
        let d = self.hp.emb_dim;
        &self.music_emb[v * d..(v + 1) * d]
    }

    pub fn check_query(&self, u: usize, e: usize) -> Result<()> {
        if u >= self.n_users() {
            return Err(Error::UnknownIndex {
                kind: "user",
                index: u,
                len: self.n_users(),
            });
        }
        self.vocab.try_row(e).map(|_| ())
    }

    pub fn check_music(&self, v: usize) -> Result<()> {
        if v >= self.n_music() {
            return Err(Error::UnknownIndex {
                kind: "music",
                index: v,
                len: self.n_music(),
            });
        }
        Ok(())
    }

    /// Mood network slot for `u`: its group, or `None` for the global one.
    pub fn bnn_group(&self, u: usize) -> Option<usize> {
        self.hp.ablation.phau.then(|| self.groups.group_of[u])
    }

    pub fn bnn(&self, group: Option<usize>) -> &BnnPosterior {
        match group {
            Some(g) => &self.bnns.groups[g],
            None => &self.bnns.global,
        }
    }

    /// Full pipeline for `(u, e)`: prior LED, posterior LED, latent and mood
    /// preference. Stochastic mode draws latent noise, then weight noise,
    /// from `rng`; both draws happen whatever the ablation flags.
    pub fn forward_query(&self, u: usize, e: usize, mode: ScoreMode, rng: Option<&mut Rng>) -> Result<Intermediates> {
        self.check_query(u, e)?;
        let s = self.vocab.row(e);
        let group = self.bnn_group(u);
        let bnn = self.bnn(group);
        let d = self.hp.latent_dim;
        let (z_eps, w_eps) = match (mode, rng) {
            (ScoreMode::Stochastic, Some(rng)) => {
                let z = rng.normal_vec(d);
                (Some(z), Some(rng.normal_vec(bnn.num_weights())))
            }
            (ScoreMode::Stochastic, None) => {
                return Err(Error::Config("stochastic scoring needs a random stream".into()))
            }
            (ScoreMode::Deterministic, _) => (None, None),
        };
        let prior = self.nets.infer_prior(self.user_row(u))?;
        let (posterior, z) = if self.hp.ablation.ehwu {
            let post = self.nets.infer_posterior(s)?;
            let z = match &z_eps {
                Some(eps) => post.sample_with(eps),
                None => post.mu.clone(),
            };
            (Some(post), z)
        } else {
            (None, s.to_vec())
        };
        let preference = match (&w_eps, self.hp.ablation.phwu) {
            (Some(eps), true) => {
                let w = bnn.weights_with(eps);
                let mut l = bnn.shape().forward(&w, &z)?;
                crate::numerics::softmax_in_place(&mut l);
                MoodDistribution::from_slice(&l).map_err(|e| Error::Divergence(format!("mood preference: {e}")))?
            }
            _ => bnn.predict_mood_mean(&z)?,
        };
        Ok(Intermediates {
            prior,
            posterior,
            z,
            preference,
            bnn_group: group,
        })
    }

    /// Match score of one `(u, e, v)` triple with its intermediates.
    pub fn forward(&self, u: usize, e: usize, v: usize, mode: ScoreMode, rng: Option<&mut Rng>) -> Result<(f64, Intermediates)> {
        self.check_music(v)?;
        let inter = self.forward_query(u, e, mode, rng)?;
        let m = match_score_unchecked(
            inter.preference.as_slice(),
            self.user_row(u),
            self.moods[v].as_slice(),
            self.music_row(v),
        );
        Ok((m, inter))
    }

    /// Scores of every track for `(u, e)`, written into `out`.
    pub fn score_into(&self, u: usize, e: usize, mode: ScoreMode, rng: Option<&mut Rng>, out: &mut [f64]) -> Result<()> {
        check_dim(self.n_music(), out.len())?;
        let inter = self.forward_query(u, e, mode, rng)?;
        let l = inter.preference.as_slice();
        let r_u = self.user_row(u);
        for (v, o) in out.iter_mut().enumerate() {
            *o = match_score_unchecked(l, r_u, self.moods[v].as_slice(), self.music_row(v));
        }
        Ok(())
    }

    /// Top-`t` tracks for `(u, e)` among tracks `u` has not listened to in
    /// training.
    pub fn rank_top_t(&self, u: usize, e: usize, t: usize, mode: ScoreMode, rng: Option<&mut Rng>) -> Result<RankedList> {
        if t == 0 {
            return Err(Error::Domain("list length T must be at least 1".into()));
        }
        let mut scores = vec![0.0; self.n_music()];
        self.score_into(u, e, mode, rng, &mut scores)?;
        let candidates = (0..self.n_music()).filter(|&v| !self.listened.contains(u, v));
        RankedList::from_scores(&scores, candidates, t)
    }

    /// The mood preference used at evaluation time.
    pub fn preference_mean(&self, u: usize, e: usize) -> Result<MoodDistribution> {
        Ok(self.forward_query(u, e, ScoreMode::Deterministic, None)?.preference)
    }

    pub fn check_finite(&self) -> Result<()> {
        let bad = self.user_emb.iter().chain(&self.music_emb).any(|x| !x.is_finite())
            || [&self.nets.theta1, &self.nets.theta2, &self.nets.phi1, &self.nets.phi2]
                .iter()
                .any(|n| n.params.iter().any(|x| !x.is_finite()));
        if bad {
            return Err(Error::Divergence("model parameters contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::persist::save(path, MODEL_MAGIC, MODEL_CHECKPOINT_VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::persist::load(path, MODEL_MAGIC, MODEL_CHECKPOINT_VERSION)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        crate::persist::encode(MODEL_MAGIC, MODEL_CHECKPOINT_VERSION, self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        crate::persist::decode(MODEL_MAGIC, MODEL_CHECKPOINT_VERSION, bytes)
    }
}

const MODEL_MAGIC: &[u8; 8] = b"HDBNMODL";
pub const MODEL_CHECKPOINT_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn match_score_examples() {
        let z = vec![0.0; 4];
        let mut l = vec![0.0; 9];
        l[2] = 1.0;
        assert_eq!(match_score(&l, &z, &l, &z).unwrap(), 1.0);
        let u = vec![1.0, 2.0, 0.0, 0.0];
        let v = vec![0.5, 0.25, 3.0, 9.0];
        assert_eq!(match_score(&l, &u, &l, &v).unwrap(), 2.0);
        assert!(match_score(&l, &u, &l[..3], &v).is_err());
    }

    #[test]
    fn bpr_examples() {
        assert!((bpr_loss(0.3, 0.3) - 2f64.ln()).abs() < 1e-15);
        assert!(bpr_loss(800.0, 0.0) < 1e-300);
        assert!(bpr_loss(0.0, 800.0).is_finite());
        assert!(bpr_loss(1.0, 0.0) < bpr_loss(0.5, 0.0));
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let scores = vec![0.5, 0.9, 0.5, 0.1, 0.9];
        let r = RankedList::from_scores(&scores, 0..5, 3).unwrap();
        assert_eq!(r.items, vec![1, 4, 0]);
        let r = RankedList::from_scores(&scores, [3, 2], 10).unwrap();
        assert_eq!(r.items, vec![2, 3]);
        assert!(RankedList::from_scores(&[f64::NAN], [0], 1).is_err());
    }
}
