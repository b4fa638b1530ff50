use serde::{Deserialize, Serialize};

use crate::dataset::{split_8_1_1, Dataset, EmotionVocab, MoodDistribution, SplitDataset};
use crate::error::{Error, Result};
use crate::evaluation::baselines::{build_baseline, BaselineContext};
use crate::evaluation::{evaluate, MetricsReport, Protocol};
use crate::grouping::{elbow_select, genre_profiles, kmeans_best, ElbowResult, GenreProfile, UserGroups, KMEANS_MAX_ITER, KMEANS_RESTARTS};
use crate::mood_model::{BnnEpochLog, BnnPosterior, GroupBnnSet};
use crate::par::Execution;
use crate::recommender::{finetune_groups, pretrain_global, train, HdbnModel, HyperParams, TrainResult};

/// A validated dataset with its split, tag encoding and genre profiles.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: SplitDataset,
    pub vocab: EmotionVocab,
    pub moods: Vec<MoodDistribution>,
    pub profiles: Vec<GenreProfile>,
}

pub fn prepare(dataset: Dataset, latent_dim: usize, seed: u64) -> Result<Prepared> {
    dataset.validate()?;
    let split = split_8_1_1(&dataset.interactions, seed);
    if split.train.is_empty() {
        return Err(Error::Validation("the train split is empty".into()));
    }
    let vocab = EmotionVocab::new(dataset.tag_names.clone(), latent_dim, seed);
    let moods = dataset.moods();
    let profiles = genre_profiles(&split.train, &dataset.music, dataset.n_genres());
    Ok(Prepared {
        dataset,
        split,
        vocab,
        moods,
        profiles,
    })
}

impl Prepared {
    pub fn n_users(&self) -> usize {
        self.dataset.n_users()
    }

    pub fn n_music(&self) -> usize {
        self.dataset.n_music()
    }

    pub fn protocol(&self) -> Protocol<'_> {
        Protocol::new(&self.split.listened, self.n_music())
    }
}

/// `g` groups from best-of-restarts k-means over genre profiles.
pub fn assign_groups(p: &Prepared, g: usize, seed: u64) -> Result<UserGroups> {
    if g == 0 || g > p.profiles.len() {
        return Err(Error::Config(format!(
            "cannot form {g} groups from {} profiled users",
            p.profiles.len()
        )));
    }
    let a = kmeans_best(&p.profiles, g, seed, KMEANS_RESTARTS, KMEANS_MAX_ITER)?;
    Ok(UserGroups::from_assignment(&p.profiles, &a, p.n_users()))
}

/// Elbow selection over `candidates`, then grouping at the chosen count.
pub fn select_groups(p: &Prepared, candidates: &[usize], seed: u64, exec: Execution) -> Result<(UserGroups, ElbowResult)> {
    let elbow = elbow_select(&p.profiles, candidates, seed, exec)?;
    Ok((assign_groups(p, elbow.best, seed)?, elbow))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoodLogs {
    pub pretrain: Vec<BnnEpochLog>,
    pub finetune: Vec<Vec<BnnEpochLog>>,
}

/// Both mood-network stages.
pub fn fit_mood_models(
    p: &Prepared,
    groups: &UserGroups,
    hp: &HyperParams,
    seed: u64,
    exec: Execution,
) -> Result<(GroupBnnSet, MoodLogs)> {
    let (global, pretrain) = pretrain_global(&p.split.train, &p.vocab, &p.moods, hp, seed)?;
    let (set, finetune) = finetune_groups(&global, &p.split.train, &p.vocab, &p.moods, groups, hp, seed, exec)?;
    Ok((set, MoodLogs { pretrain, finetune }))
}

/// A fresh model around trained mood networks.
pub fn new_model(p: &Prepared, groups: UserGroups, bnns: GroupBnnSet, hp: &HyperParams, seed: u64) -> Result<HdbnModel> {
    HdbnModel::new(
        p.n_users(),
        p.moods.clone(),
        p.vocab.clone(),
        groups,
        bnns,
        p.split.listened.clone(),
        hp.clone(),
        seed,
    )
}

/// Group, fit both mood stages and train end to end.
pub fn fit_all(p: &Prepared, hp: &HyperParams, seed: u64, exec: Execution) -> Result<(TrainResult, MoodLogs)> {
    let groups = assign_groups(p, hp.groups, seed)?;
    let (bnns, logs) = fit_mood_models(p, &groups, hp, seed, exec)?;
    let model = new_model(p, groups, bnns, hp, seed)?;
    Ok((train(model, &p.split, exec)?, logs))
}

/// Global posterior only, for callers that fine-tune separately.
pub fn pretrain_only(p: &Prepared, hp: &HyperParams, seed: u64) -> Result<(BnnPosterior, Vec<BnnEpochLog>)> {
    pretrain_global(&p.split.train, &p.vocab, &p.moods, hp, seed)
}

/// Evaluation settings shared by every method.
#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub cutoffs: Vec<usize>,
    pub neighbors: usize,
    pub blend: f64,
    pub exec: Execution,
}

/// Evaluate each of `methods` on the test split. `"hdbn"` needs `model`.
pub fn evaluate_methods(
    p: &Prepared,
    model: Option<&HdbnModel>,
    methods: &[String],
    hp: &HyperParams,
    seed: u64,
    settings: &EvalSettings,
) -> Result<Vec<MetricsReport>> {
    let protocol = p.protocol();
    let ctx = BaselineContext {
        split: &p.split,
        vocab: &p.vocab,
        n_users: p.n_users(),
        n_music: p.n_music(),
        neighbors: settings.neighbors,
        blend: settings.blend,
        hp,
        seed,
        exec: settings.exec,
    };
    methods
        .iter()
        .map(|m| {
            if m == "hdbn" {
                let model = model.ok_or_else(|| Error::Config("method hdbn needs a trained model".into()))?;
                evaluate(model, &p.split.test, &protocol, &settings.cutoffs, settings.exec)
            } else {
                let scorer = build_baseline(m, &ctx)?;
                evaluate(scorer.as_ref(), &p.split.test, &protocol, &settings.cutoffs, settings.exec)
            }
        })
        .collect()
}
