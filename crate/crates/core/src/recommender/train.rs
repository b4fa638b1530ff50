//! Phase I (mood networks) and Phase II (end-to-end) training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::HdbnModel;
use super::objective::{objective, BatchNoise, ObjectiveWeights, Tuple};
use super::params::HyperParams;
use crate::dataset::{negative_sample, EmotionVocab, Interaction, ListenedIndex, MoodDistribution, SplitDataset};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Protocol};
use crate::grouping::UserGroups;
use crate::mood_model::{finetune_all, mood_examples, pretrain, BnnEpochLog, BnnPosterior, Example, GroupBnnSet};
use crate::numerics::{Optimizer, Rng};
use crate::par::Execution;

/// Global mood network trained on every train record.
pub fn pretrain_global(
    train: &[Interaction],
    vocab: &EmotionVocab,
    moods: &[MoodDistribution],
    hp: &HyperParams,
    seed: u64,
) -> Result<(BnnPosterior, Vec<BnnEpochLog>)> {
    let examples = mood_examples(train, vocab, moods);
    pretrain(vocab.dim(), &examples, &hp.pretrain_config(), &Rng::new(seed).substream("phase1-pretrain"))
}

/// One mood network per group, fine-tuned from `global` on that group's
/// records. With group-level networks switched off every group shares
/// `global`.
pub fn finetune_groups(
    global: &BnnPosterior,
    train: &[Interaction],
    vocab: &EmotionVocab,
    moods: &[MoodDistribution],
    groups: &UserGroups,
    hp: &HyperParams,
    seed: u64,
    exec: Execution,
) -> Result<(GroupBnnSet, Vec<Vec<BnnEpochLog>>)> {
    if !hp.ablation.phau {
        return Ok((GroupBnnSet::shared(global.clone(), groups.n_groups), Vec::new()));
    }
    let mut per_group: Vec<Vec<Example<'_>>> = vec![Vec::new(); groups.n_groups];
    for (r, ex) in train.iter().zip(mood_examples(train, vocab, moods)) {
        per_group[groups.group_of[r.user]].push(ex);
    }
    finetune_all(
        global,
        &per_group,
        &hp.finetune_config(),
        &Rng::new(seed).substream("phase1-finetune"),
        exec,
    )
}

/// Training tuples for one epoch: `neg_k` negatives per train record, in a
/// shuffled order. Records whose user has no eligible negative are dropped;
/// the second value counts records that got fewer than `neg_k` negatives.
pub fn epoch_tuples(
    train: &[Interaction],
    listened: &ListenedIndex,
    n_music: usize,
    neg_k: usize,
    root: &Rng,
    epoch: usize,
) -> Result<(Vec<Tuple>, usize)> {
    let mut rng = root.substream_indexed("negatives", epoch as u64);
    let mut tuples = Vec::with_capacity(train.len() * neg_k);
    let mut short = 0;
    for r in train {
        let draw = match negative_sample(listened, n_music, r.user, r.music, neg_k, &mut rng) {
            Ok(d) => d,
            Err(Error::Domain(_)) => {
                short += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        short += usize::from(draw.short);
        tuples.extend(draw.items.into_iter().map(|neg| Tuple {
            user: r.user,
            emotion: r.emotion,
            pos: r.music,
            neg,
        }));
    }
    root.substream_indexed("tuple-order", epoch as u64).shuffle(&mut tuples);
    Ok((tuples, short))
}

/// Key identifying minibatch `batch` of `epoch` in noise substreams.
pub fn batch_key(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64) << 32) | batch as u64
}

/// Patience-based early stopping on a metric where higher is better.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    /// `patience == 0` never stops.
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Record a new value; returns whether it is the best so far.
    pub fn observe(&mut self, value: f64) -> bool {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience > 0 && self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Mean unweighted term values of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub rec: f64,
    pub kl1: f64,
    pub kl2: f64,
    pub mse1: f64,
    pub mse2: f64,
    pub val_hr10: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    /// The best-validation model, or the last one without validation data.
    /// After divergence, the model as it was at the start of the failing
    /// epoch.
    pub model: HdbnModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub diverged: Option<String>,
}

fn apply_grads(model: &mut HdbnModel, opt: &mut Optimizer, grads: &super::objective::ObjectiveGrads) {
    opt.begin_step();
    let d = model.hp.emb_dim;
    opt.update(0, &mut model.nets.theta1.params, &grads.nets.theta1);
    opt.update(1, &mut model.nets.theta2.params, &grads.nets.theta2);
    opt.update(2, &mut model.nets.phi1.params, &grads.nets.phi1);
    opt.update(3, &mut model.nets.phi2.params, &grads.nets.phi2);
    opt.update_rows(4, &mut model.user_emb, d, &grads.users, &grads.user_grads);
    opt.update_rows(5, &mut model.music_emb, d, &grads.music, &grads.music_grads);
    let n_groups = model.bnns.n_groups();
    for (s, g) in grads.bnn.iter().enumerate() {
        let Some(g) = g else { continue };
        let net = if s == n_groups {
            &mut model.bnns.global
        } else {
            &mut model.bnns.groups[s]
        };
        opt.update(6 + 2 * s, net.mu_mut(), &g.mu);
        if model.hp.ablation.phwu {
            opt.update(7 + 2 * s, net.rho_mut(), &g.rho);
        }
    }
}

/// Alternate sampling the latents (E-step, inside the noisy forward pass)
/// and a gradient step on the weighted objective (M-step), one minibatch at
/// a time, for up to `hp.epochs` epochs.
pub fn train(mut model: HdbnModel, split: &SplitDataset, exec: Execution) -> Result<TrainResult> {
    model.hp.validate()?;
    let hp = model.hp.clone();
    let root = Rng::new(model.seed).substream("phase2");
    let weights = ObjectiveWeights::from_hyper_params(&hp);
    let mut opt = Optimizer::new(hp.optimizer, hp.lr);
    let protocol = Protocol::new(&split.listened, model.n_music());
    let validation: Vec<Interaction> = split
        .validation
        .iter()
        .copied()
        .filter(|r| r.user < model.n_users() && split.listened.has_history(r.user))
        .collect();
    let mut stopper = EarlyStopping::new(hp.patience);
    let mut best: Option<(usize, HdbnModel)> = None;
    let mut log = Vec::with_capacity(hp.epochs);
    let mut stopped_early = false;

    for epoch in 0..hp.epochs {
        let snapshot = model.clone();
        let (tuples, short) = epoch_tuples(&split.train, &split.listened, model.n_music(), hp.neg_k, &root, epoch)?;
        if short > 0 {
            log::debug!("epoch {epoch}: {short} records got fewer than {} negatives", hp.neg_k);
        }
        if tuples.is_empty() {
            return Err(Error::Domain("no training tuples".into()));
        }
        let mut sums = [0.0; 5];
        for (b, batch) in tuples.chunks(hp.batch_size).enumerate() {
            let noise = BatchNoise::draw(&model, batch, &root, batch_key(epoch, b));
            let (terms, grads) = objective(&model, batch, &noise, weights)?;
            if !terms.is_finite() {
                let msg = format!("training loss is not finite at epoch {epoch}, batch {b}: {terms:?}");
                log::error!("{msg}");
                return Ok(TrainResult {
                    model: snapshot,
                    log,
                    best_epoch: best.map(|(e, _)| e),
                    stopped_early: false,
                    diverged: Some(msg),
                });
            }
            let n = batch.len() as f64;
            for (acc, v) in sums.iter_mut().zip([terms.rec, terms.kl1, terms.kl2, terms.mse1, terms.mse2]) {
                *acc += v * n;
            }
            apply_grads(&mut model, &mut opt, &grads);
        }
        let n = tuples.len() as f64;
        let val_hr10 = if validation.is_empty() {
            None
        } else {
            let report = evaluate(&model, &validation, &protocol, &[10], exec)?;
            Some(report.hr[0])
        };
        let entry = EpochLog {
            epoch,
            rec: sums[0] / n,
            kl1: sums[1] / n,
            kl2: sums[2] / n,
            mse1: sums[3] / n,
            mse2: sums[4] / n,
            val_hr10,
        };
        log::info!(
            "epoch {epoch}: L_rec {:.5} KL1 {:.4} KL2 {:.4} MSE1 {:.5} MSE2 {:.6} val HR@10 {}",
            entry.rec,
            entry.kl1,
            entry.kl2,
            entry.mse1,
            entry.mse2,
            val_hr10.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        log.push(entry);
        if let Some(hr) = val_hr10 {
            if stopper.observe(hr) {
                best = Some((epoch, model.clone()));
            }
            if stopper.should_stop() {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, model) = match best {
        Some((e, m)) => (Some(e), m),
        None => (None, model),
    };
    Ok(TrainResult {
        model,
        log,
        best_epoch,
        stopped_early,
        diverged: None,
    })
}

/// `epoch,L_rec,L_KL1,L_KL2,L_MSE1,L_MSE2,val_HR@10`; an empty last column
/// means no validation data.
pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(crate::dataset::csv_io)?;
    w.write_record(["epoch", "L_rec", "L_KL1", "L_KL2", "L_MSE1", "L_MSE2", "val_HR@10"])
        .map_err(crate::dataset::csv_io)?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            format!("{:?}", e.rec),
            format!("{:?}", e.kl1),
            format!("{:?}", e.kl2),
            format!("{:?}", e.mse1),
            format!("{:?}", e.mse2),
            e.val_hr10.map_or(String::new(), |v| format!("{v:?}")),
        ])
        .map_err(crate::dataset::csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_waits_for_patience() {
        let mut s = EarlyStopping::new(2);
        assert!(s.observe(0.1));
        assert!(!s.observe(0.1));
        assert!(!s.should_stop());
        assert!(!s.observe(0.05));
        assert!(s.should_stop());
        assert_eq!(s.best(), Some(0.1));
        let mut never = EarlyStopping::new(0);
        never.observe(1.0);
        for _ in 0..10 {
            never.observe(0.0);
        }
        assert!(!never.should_stop());
    }

    #[test]
    fn batch_keys_are_distinct() {
        assert_ne!(batch_key(0, 1), batch_key(1, 0));
    }
}
