//! Reference recommenders: random, popularity, neighborhood methods with and
//! without emotion information, and BPR matrix factorization.

use serde::{Deserialize, Serialize};

use super::{evaluate, Protocol, Scorer};
use crate::dataset::{EmotionVocab, Interaction, SplitDataset};
use crate::error::{Error, Result};
use crate::numerics::{cosine, dot, sigmoid, softplus, Optimizer, Rng};
use crate::par::{map_indexed, Execution};
use crate::recommender::train::{epoch_tuples, EarlyStopping, EpochLog};
use crate::recommender::{init_embeddings, HyperParams};

/// Default neighborhood size.
pub const DEFAULT_NEIGHBORS: usize = 50;
/// Default weight of the emotion-profile similarity in the blended methods.
pub const DEFAULT_BLEND: f64 = 0.5;

/// Uniform random scores, reproducible per `(user, emotion)` query.
#[derive(Clone, Debug)]
pub struct RandomScorer {
    seed: u64,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Scorer for RandomScorer {
    fn name(&self) -> String {
        "Random".into()
    }

    fn score(&self, user: usize, emotion: usize, out: &mut [f64]) -> Result<()> {
        let key = ((user as u64) << 32) ^ emotion as u64;
        let mut rng = Rng::new(self.seed).substream_indexed("random-scorer", key);
        for o in out.iter_mut() {
            *o = rng.uniform();
        }
        Ok(())
    }
}

/// Train play counts.
#[derive(Clone, Debug)]
pub struct PopScorer {
    counts: Vec<f64>,
}

impl PopScorer {
    pub fn new(train: &[Interaction], n_music: usize) -> Self {
        let mut counts = vec![0.0; n_music];
        for r in train {
            counts[r.music] += 1.0;
        }
        Self { counts }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }
}

impl Scorer for PopScorer {
    fn name(&self) -> String {
        "Pop".into()
    }

    fn score(&self, _user: usize, _emotion: usize, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.counts);
        Ok(())
    }
}

/// Train interactions indexed both ways, with the mean tag vector of every
/// `(user, track)` pair.
#[derive(Clone, Debug)]
pub struct InteractionIndex {
    /// Per user: `(track, e_{u,v})`, sorted by track.
    by_user: Vec<Vec<(usize, Vec<f64>)>>,
    /// Per track: `(user, e_{u,v})`, sorted by user.
    by_music: Vec<Vec<(usize, Vec<f64>)>>,
    /// Tag counts per user and per track.
    user_tags: Vec<Vec<f64>>,
    music_tags: Vec<Vec<f64>>,
}

impl InteractionIndex {
    /// Repeated `(user, track)` pairs average their tag vectors.
    pub fn build(train: &[Interaction], n_users: usize, n_music: usize, vocab: &EmotionVocab) -> Result<Self> {
        let mut pairs: Vec<&Interaction> = train.iter().collect();
        for r in &pairs {
            if r.user >= n_users || r.music >= n_music {
                return Err(Error::UnknownIndex {
                    kind: if r.user >= n_users { "user" } else { "music" },
                    index: if r.user >= n_users { r.user } else { r.music },
                    len: if r.user >= n_users { n_users } else { n_music },
                });
            }
            vocab.try_row(r.emotion)?;
        }
        pairs.sort_by_key(|r| (r.user, r.music, r.emotion));
        let mut by_user = vec![Vec::new(); n_users];
        let mut by_music: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); n_music];
        let mut user_tags = vec![vec![0.0; vocab.len()]; n_users];
        let mut music_tags = vec![vec![0.0; vocab.len()]; n_music];
        let mut i = 0;
        while i < pairs.len() {
            let (u, v) = (pairs[i].user, pairs[i].music);
            let mut sum = vec![0.0; vocab.dim()];
            let mut n = 0.0;
            while i < pairs.len() && pairs[i].user == u && pairs[i].music == v {
                for (s, x) in sum.iter_mut().zip(vocab.row(pairs[i].emotion)) {
                    *s += x;
                }
                user_tags[u][pairs[i].emotion] += 1.0;
                music_tags[v][pairs[i].emotion] += 1.0;
                n += 1.0;
                i += 1;
            }
            for s in &mut sum {
                *s /= n;
            }
            by_user[u].push((v, sum.clone()));
            by_music[v].push((u, sum));
        }
        Ok(Self {
            by_user,
            by_music,
            user_tags,
            music_tags,
        })
    }

    pub fn n_users(&self) -> usize {
        self.by_user.len()
    }

    pub fn n_music(&self) -> usize {
        self.by_music.len()
    }

    pub fn user_history(&self, u: usize) -> &[(usize, Vec<f64>)] {
        &self.by_user[u]
    }

    pub fn music_listeners(&self, v: usize) -> &[(usize, Vec<f64>)] {
        &self.by_music[v]
    }
}

/// Similarity between two rows of one side of the interaction matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Similarity {
    /// Cosine of binary interaction vectors.
    Binary,
    /// Mean cosine of tag vectors over common partners, normalized by
    /// `√(|A|·|B|)`.
    Emotion,
    /// `(1 − w)` binary cosine plus `w` cosine of tag-frequency profiles.
    Blend(f64),
}

/// Rows are sorted by partner id; `pa`, `pb` are tag-frequency profiles.
fn pair_similarity(a: &[(usize, Vec<f64>)], b: &[(usize, Vec<f64>)], kind: Similarity, pa: &[f64], pb: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let norm = ((a.len() * b.len()) as f64).sqrt();
    let (mut i, mut j) = (0, 0);
    let mut common = 0.0;
    let mut emo = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1.0;
                if kind == Similarity::Emotion {
                    emo += cosine(&a[i].1, &b[j].1);
                }
                i += 1;
                j += 1;
            }
        }
    }
    match kind {
        Similarity::Binary => common / norm,
        Similarity::Emotion => emo / norm,
        Similarity::Blend(w) => (1.0 - w) * (common / norm) + w * cosine(pa, pb),
    }
}

/// `sim(a, b)` for rows `a`, `b` of `rows`.
pub fn similarity(rows: &[Vec<(usize, Vec<f64>)>], profiles: &[Vec<f64>], kind: Similarity, a: usize, b: usize) -> f64 {
    pair_similarity(&rows[a], &rows[b], kind, &profiles[a], &profiles[b])
}

/// Top-`m` neighbors of every row by descending similarity, ties to the
/// lower id. Without blending only rows sharing a partner are eligible.
fn neighbor_lists(
    rows: &[Vec<(usize, Vec<f64>)>],
    partners: &[Vec<(usize, Vec<f64>)>],
    profiles: &[Vec<f64>],
    kind: Similarity,
    m: usize,
    exec: Execution,
) -> Vec<Vec<(usize, f64)>> {
    map_indexed(rows.len(), exec, |a| {
        let candidates: Vec<usize> = match kind {
            Similarity::Blend(_) => (0..rows.len()).filter(|&b| b != a).collect(),
            _ => {
                let mut c: Vec<usize> = rows[a]
                    .iter()
                    .flat_map(|(p, _)| partners[*p].iter().map(|(b, _)| *b))
                    .filter(|&b| b != a)
                    .collect();
                c.sort_unstable();
                c.dedup();
                c
            }
        };
        let mut sims: Vec<(usize, f64)> = candidates
            .into_iter()
            .map(|b| (b, similarity(rows, profiles, kind, a, b)))
            .collect();
        sims.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        sims.truncate(m);
        sims
    })
}

fn check_blend(kind: Similarity) -> Result<()> {
    if let Similarity::Blend(w) = kind {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Config(format!("blend weight must lie in [0, 1], got {w}")));
        }
    }
    Ok(())
}

/// User-based neighborhood scorer. With emotion similarity, each neighbor's
/// contribution is weighted by the cosine between the query tag and the tag
/// the neighbor attached to the track.
#[derive(Clone, Debug)]
pub struct UserKnn {
    kind: Similarity,
    neighbors: Vec<Vec<(usize, f64)>>,
    index: InteractionIndex,
    vocab: EmotionVocab,
}

impl UserKnn {
    pub fn new(index: InteractionIndex, vocab: EmotionVocab, kind: Similarity, m: usize, exec: Execution) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("neighbor count must be at least 1".into()));
        }
        check_blend(kind)?;
        let neighbors = neighbor_lists(&index.by_user, &index.by_music, &index.user_tags, kind, m, exec);
        Ok(Self {
            kind,
            neighbors,
            index,
            vocab,
        })
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.neighbors[u]
    }
}

impl Scorer for UserKnn {
    fn name(&self) -> String {
        match self.kind {
            Similarity::Binary => "UCF".into(),
            Similarity::Emotion => "UCFE".into(),
            Similarity::Blend(_) => "UCF+E".into(),
        }
    }

    fn score(&self, user: usize, emotion: usize, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        if user >= self.neighbors.len() {
            return Ok(());
        }
        let s = self.vocab.try_row(emotion)?;
        for &(n, sim) in &self.neighbors[user] {
            for (v, e) in &self.index.by_user[n] {
                out[*v] += match self.kind {
                    Similarity::Emotion => sim * cosine(s, e),
                    _ => sim,
                };
            }
        }
        Ok(())
    }
}

/// Item-based neighborhood scorer: a candidate earns the similarity of each
/// of its top-`m` neighbors found in the user's history.
#[derive(Clone, Debug)]
pub struct ItemKnn {
    kind: Similarity,
    /// For each track `w`: the tracks listing `w` among their neighbors.
    reverse: Vec<Vec<(usize, f64)>>,
    index: InteractionIndex,
    vocab: EmotionVocab,
}

impl ItemKnn {
    pub fn new(index: InteractionIndex, vocab: EmotionVocab, kind: Similarity, m: usize, exec: Execution) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("neighbor count must be at least 1".into()));
        }
        check_blend(kind)?;
        let lists = neighbor_lists(&index.by_music, &index.by_user, &index.music_tags, kind, m, exec);
        let mut reverse = vec![Vec::new(); lists.len()];
        for (v, list) in lists.iter().enumerate() {
            for &(w, sim) in list {
                reverse[w].push((v, sim));
            }
        }
        Ok(Self {
            kind,
            reverse,
            index,
            vocab,
        })
    }
}

impl Scorer for ItemKnn {
    fn name(&self) -> String {
        match self.kind {
            Similarity::Binary => "ICF".into(),
            Similarity::Emotion => "ICFE".into(),
            Similarity::Blend(_) => "ICF+E".into(),
        }
    }

    fn score(&self, user: usize, emotion: usize, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        if user >= self.index.n_users() {
            return Ok(());
        }
        let s = self.vocab.try_row(emotion)?;
        for (w, e) in &self.index.by_user[user] {
            let c = match self.kind {
                Similarity::Emotion => cosine(s, e),
                _ => 1.0,
            };
            for &(v, sim) in &self.reverse[*w] {
                out[v] += sim * c;
            }
        }
        Ok(())
    }
}

/// Embeddings trained on the pairwise ranking loss alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfBpr {
    pub dim: usize,
    pub user_emb: Vec<f64>,
    pub music_emb: Vec<f64>,
}

impl MfBpr {
    /// Embeddings from the same seeded substreams as the full model.
    pub fn init(n_users: usize, n_music: usize, hp: &HyperParams, seed: u64) -> Self {
        let root = Rng::new(seed);
        Self {
            dim: hp.emb_dim,
            user_emb: init_embeddings(n_users, hp.emb_dim, hp.emb_init, &mut root.substream("user-embeddings")),
            music_emb: init_embeddings(n_music, hp.emb_dim, hp.emb_init, &mut root.substream("music-embeddings")),
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_emb.len() / self.dim
    }

    pub fn user_row(&self, u: usize) -> &[f64] {
        &self.user_emb[u * self.dim..(u + 1) * self.dim]
    }

    pub fn music_row(&self, v: usize) -> &[f64] {
        &self.music_emb[v * self.dim..(v + 1) * self.dim]
    }

    /// Mean pairwise loss and its gradient rows over `batch`.
    pub fn batch_loss(
        &self,
        batch: &[crate::recommender::Tuple],
    ) -> (f64, Vec<usize>, Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
        let d = self.dim;
        let inv_b = 1.0 / batch.len() as f64;
        let mut users = Vec::new();
        let mut user_grads: Vec<Vec<f64>> = Vec::new();
        let mut user_slot = std::collections::HashMap::new();
        let mut music = Vec::new();
        let mut music_grads: Vec<Vec<f64>> = Vec::new();
        let mut music_slot = std::collections::HashMap::new();
        for t in batch {
            user_slot.entry(t.user).or_insert_with(|| {
                users.push(t.user);
                user_grads.push(vec![0.0; d]);
                users.len() - 1
            });
        }
        let mut loss = 0.0;
        for t in batch {
            let r_u = self.user_row(t.user);
            let (r_pos, r_neg) = (self.music_row(t.pos), self.music_row(t.neg));
            let delta = dot(r_u, r_pos) - dot(r_u, r_neg);
            loss += softplus(-delta);
            let g = -sigmoid(-delta) * inv_b;
            let (dm_pos, dm_neg) = (g, -g);
            let du = &mut user_grads[user_slot[&t.user]];
            for k in 0..d {
                du[k] += dm_pos * r_pos[k] + dm_neg * r_neg[k];
            }
            for (v, dm) in [(t.pos, dm_pos), (t.neg, dm_neg)] {
                let j = *music_slot.entry(v).or_insert_with(|| {
                    music.push(v);
                    music_grads.push(vec![0.0; d]);
                    music.len() - 1
                });
                for (x, &r) in music_grads[j].iter_mut().zip(r_u) {
                    *x += dm * r;
                }
            }
        }
        (loss * inv_b, users, user_grads, music, music_grads)
    }
}

impl Scorer for MfBpr {
    fn name(&self) -> String {
        "MF-BPR".into()
    }

    fn score(&self, user: usize, _emotion: usize, out: &mut [f64]) -> Result<()> {
        if user >= self.n_users() {
            return Err(Error::UnknownIndex {
                kind: "user",
                index: user,
                len: self.n_users(),
            });
        }
        let r_u = self.user_row(user);
        for (v, o) in out.iter_mut().enumerate() {
            *o = dot(r_u, self.music_row(v));
        }
        Ok(())
    }
}

/// Train [`MfBpr`] with the tuple construction, minibatch order, optimizer
/// and early stopping of the full model's end-to-end phase.
pub fn train_mf_bpr(
    split: &SplitDataset,
    n_users: usize,
    n_music: usize,
    hp: &HyperParams,
    seed: u64,
    exec: Execution,
) -> Result<(MfBpr, Vec<EpochLog>)> {
    hp.validate()?;
    let mut model = MfBpr::init(n_users, n_music, hp, seed);
    let root = Rng::new(seed).substream("phase2");
    let mut opt = Optimizer::new(hp.optimizer, hp.lr);
    let protocol = Protocol::new(&split.listened, n_music);
    let validation: Vec<Interaction> = split
        .validation
        .iter()
        .copied()
        .filter(|r| r.user < n_users && split.listened.has_history(r.user))
        .collect();
    let mut stopper = EarlyStopping::new(hp.patience);
    let mut best: Option<MfBpr> = None;
    let mut log = Vec::new();
    for epoch in 0..hp.epochs {
        let (tuples, _) = epoch_tuples(&split.train, &split.listened, n_music, hp.neg_k, &root, epoch)?;
        if tuples.is_empty() {
            return Err(Error::Domain("no training tuples".into()));
        }
        let mut sum = 0.0;
        for (b, batch) in tuples.chunks(hp.batch_size).enumerate() {
            let (loss, users, ug, music, mg) = model.batch_loss(batch);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("MF-BPR loss is {loss} at epoch {epoch}, batch {b}")));
            }
            sum += loss * batch.len() as f64;
            opt.begin_step();
            opt.update_rows(4, &mut model.user_emb, hp.emb_dim, &users, &ug);
            opt.update_rows(5, &mut model.music_emb, hp.emb_dim, &music, &mg);
        }
        let val_hr10 = if validation.is_empty() {
            None
        } else {
            Some(evaluate(&model, &validation, &protocol, &[10], exec)?.hr[0])
        };
        log::info!("MF-BPR epoch {epoch}: loss {:.5}", sum / tuples.len() as f64);
        log.push(EpochLog {
            epoch,
            rec: sum / tuples.len() as f64,
            kl1: 0.0,
            kl2: 0.0,
            mse1: 0.0,
            mse2: 0.0,
            val_hr10,
        });
        if let Some(hr) = val_hr10 {
            if stopper.observe(hr) {
                best = Some(model.clone());
            }
            if stopper.should_stop() {
                break;
            }
        }
    }
    Ok((best.unwrap_or(model), log))
}

/// Names accepted by [`build_baseline`].
pub const BASELINE_NAMES: [&str; 9] = ["random", "pop", "ucf", "icf", "mf_bpr", "ucfe", "icfe", "ucf+e", "icf+e"];

/// Settings shared by the baseline constructors.
#[derive(Clone, Debug)]
pub struct BaselineContext<'a> {
    pub split: &'a SplitDataset,
    pub vocab: &'a EmotionVocab,
    pub n_users: usize,
    pub n_music: usize,
    pub neighbors: usize,
    pub blend: f64,
    pub hp: &'a HyperParams,
    pub seed: u64,
    pub exec: Execution,
}

/// Build the baseline called `name`.
pub fn build_baseline(name: &str, ctx: &BaselineContext<'_>) -> Result<Box<dyn Scorer>> {
    let index = || InteractionIndex::build(&ctx.split.train, ctx.n_users, ctx.n_music, ctx.vocab);
    let vocab = ctx.vocab.clone();
    let (m, e) = (ctx.neighbors, ctx.exec);
    Ok(match name {
        "random" => Box::new(RandomScorer::new(ctx.seed)),
        "pop" => Box::new(PopScorer::new(&ctx.split.train, ctx.n_music)),
        "ucf" => Box::new(UserKnn::new(index()?, vocab, Similarity::Binary, m, e)?),
        "icf" => Box::new(ItemKnn::new(index()?, vocab, Similarity::Binary, m, e)?),
        "ucfe" => Box::new(UserKnn::new(index()?, vocab, Similarity::Emotion, m, e)?),
        "icfe" => Box::new(ItemKnn::new(index()?, vocab, Similarity::Emotion, m, e)?),
        "ucf+e" => Box::new(UserKnn::new(index()?, vocab, Similarity::Blend(ctx.blend), m, e)?),
        "icf+e" => Box::new(ItemKnn::new(index()?, vocab, Similarity::Blend(ctx.blend), m, e)?),
        "mf_bpr" => Box::new(train_mf_bpr(ctx.split, ctx.n_users, ctx.n_music, ctx.hp, ctx.seed, e)?.0),
        other => {
            return Err(Error::Config(format!(
                "unknown method {other:?}; expected hdbn or one of {}",
                BASELINE_NAMES.join(", ")
            )))
        }
    })
}

impl InteractionIndex {
    /// Users' tag-frequency profiles.
    pub fn user_profiles(&self) -> &[Vec<f64>] {
        &self.user_tags
    }

    pub fn music_profiles(&self) -> &[Vec<f64>] {
        &self.music_tags
    }

    pub fn user_rows(&self) -> &[Vec<(usize, Vec<f64>)>] {
        &self.by_user
    }

    pub fn music_rows(&self) -> &[Vec<(usize, Vec<f64>)>] {
        &self.by_music
    }
}
