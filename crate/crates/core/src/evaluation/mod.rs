//! Top-T ranking metrics, the shared test protocol, and baseline scorers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, ListenedIndex};
use crate::error::{check_dim, Error, Result};
use crate::par::{map_slice, Execution};
use crate::recommender::{HdbnModel, RankedList, ScoreMode};

pub mod baselines;
mod case_study;

pub use case_study::{case_study_export, CaseStudy, HistoryRow, RecommendationRow};

/// List lengths reported by default.
pub const CUTOFFS: [usize; 4] = [5, 10, 15, 20];

/// Per-record metrics at one list length.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub hr: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

/// Metrics for a target at 1-based position `rank` in the full ranking.
pub fn metrics_at_rank(rank: usize, t: usize) -> RecordMetrics {
    if rank == 0 || rank > t {
        return RecordMetrics::default();
    }
    RecordMetrics {
        hr: 1.0,
        precision: 1.0 / t as f64,
        ndcg: 1.0 / ((rank + 1) as f64).log2(),
        mrr: 1.0 / rank as f64,
    }
}

/// Metrics of `target` against a top-`t` list.
pub fn score_record(ranked: &RankedList, target: usize, t: usize) -> RecordMetrics {
    match ranked.items.iter().take(t).position(|&v| v == target) {
        Some(i) => metrics_at_rank(i + 1, t),
        None => RecordMetrics::default(),
    }
}

/// Anything that scores every track for a `(user, emotion)` query. Scores
/// are compared with [`f64::total_cmp`]; ties go to the lower track id.
pub trait Scorer: Sync {
    fn name(&self) -> String;
    fn score(&self, user: usize, emotion: usize, out: &mut [f64]) -> Result<()>;
}

impl Scorer for HdbnModel {
    fn name(&self) -> String {
        "HDBN".into()
    }

    fn score(&self, user: usize, emotion: usize, out: &mut [f64]) -> Result<()> {
        self.score_into(user, emotion, ScoreMode::Deterministic, None, out)
    }
}

/// Candidate sets shared by every method: all tracks except those the user
/// listened to in train, with the ground-truth track always kept.
#[derive(Clone, Copy, Debug)]
pub struct Protocol<'a> {
    listened: &'a ListenedIndex,
    n_music: usize,
}

impl<'a> Protocol<'a> {
    pub fn new(listened: &'a ListenedIndex, n_music: usize) -> Self {
        Self { listened, n_music }
    }

    pub fn n_music(&self) -> usize {
        self.n_music
    }

    pub fn is_candidate(&self, user: usize, target: usize, v: usize) -> bool {
        v < self.n_music && (v == target || !self.listened.contains(user, v))
    }

    pub fn candidates(&self, user: usize, target: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_music).filter(move |&v| self.is_candidate(user, target, v))
    }

    /// 1-based position of `target` among the candidates, ordered by
    /// descending score and then ascending id.
    pub fn target_rank(&self, scores: &[f64], user: usize, target: usize) -> Result<usize> {
        check_dim(self.n_music, scores.len())?;
        if target >= self.n_music {
            return Err(Error::UnknownIndex {
                kind: "music",
                index: target,
                len: self.n_music,
            });
        }
        let st = scores[target];
        let seen = self.listened.tracks(user);
        let mut next_seen = 0;
        let mut rank = 1;
        for (c, &sc) in scores.iter().enumerate() {
            while next_seen < seen.len() && seen[next_seen] < c {
                next_seen += 1;
            }
            if c == target || (next_seen < seen.len() && seen[next_seen] == c) {
                continue;
            }
            if sc.is_nan() {
                return Err(Error::Divergence(format!("score of track {c} is NaN")));
            }
            match sc.total_cmp(&st) {
                std::cmp::Ordering::Greater => rank += 1,
                std::cmp::Ordering::Equal if c < target => rank += 1,
                _ => {}
            }
        }
        if st.is_nan() {
            return Err(Error::Divergence(format!("score of target {target} is NaN")));
        }
        Ok(rank)
    }

    /// The top-`t` list over this record's candidates.
    pub fn ranked_list(&self, scores: &[f64], user: usize, target: usize, t: usize) -> Result<RankedList> {
        check_dim(self.n_music, scores.len())?;
        RankedList::from_scores(scores, self.candidates(user, target), t)
    }
}

/// Mean metrics of one method over a record set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub cutoffs: Vec<usize>,
    pub hr: Vec<f64>,
    pub precision: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub mrr: Vec<f64>,
    /// Records that contributed to the means.
    pub records: usize,
    /// Records dropped because scoring failed.
    pub skipped: usize,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

impl MetricsReport {
    fn index_of(&self, t: usize) -> Option<usize> {
        self.cutoffs.iter().position(|&c| c == t)
    }

    pub fn hr_at(&self, t: usize) -> Option<f64> {
        self.index_of(t).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, t: usize) -> Option<f64> {
        self.index_of(t).map(|i| self.ndcg[i])
    }

    pub fn precision_at(&self, t: usize) -> Option<f64> {
        self.index_of(t).map(|i| self.precision[i])
    }

    pub fn mrr_at(&self, t: usize) -> Option<f64> {
        self.index_of(t).map(|i| self.mrr[i])
    }

    pub fn with_provenance(mut self, config_hash: &str, seed: u64) -> Self {
        self.config_hash = Some(config_hash.to_string());
        self.seed = Some(seed);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Column names of [`MetricsReport::table_row`].
    pub fn table_header(cutoffs: &[usize]) -> Vec<String> {
        let mut h = vec!["method".to_string()];
        for metric in ["HR", "Precision", "NDCG", "MRR"] {
            h.extend(cutoffs.iter().map(|t| format!("{metric}@{t}")));
        }
        h
    }

    pub fn table_row(&self) -> Vec<String> {
        let mut row = vec![self.method.clone()];
        for col in [&self.hr, &self.precision, &self.ndcg, &self.mrr] {
            row.extend(col.iter().map(|x| format!("{x:.4}")));
        }
        row
    }
}

/// Evaluate `scorer` on `records`. Records whose scoring fails are skipped
/// and counted; an empty or fully skipped record set is an error.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    records: &[Interaction],
    protocol: &Protocol<'_>,
    cutoffs: &[usize],
    exec: Execution,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty record set".into()));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config(format!("list lengths must be positive, got {cutoffs:?}")));
    }
    let n = protocol.n_music();
    let ranks = map_slice(records, exec, |r| -> Result<usize> {
        let mut scores = vec![0.0; n];
        scorer.score(r.user, r.emotion, &mut scores)?;
        protocol.target_rank(&scores, r.user, r.music)
    });
    let k = cutoffs.len();
    let (mut hr, mut precision, mut ndcg, mut mrr) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut used = 0;
    let mut skipped = 0;
    for (r, rank) in records.iter().zip(ranks) {
        let rank = match rank {
            Ok(rank) => rank,
            Err(e) => {
                log::warn!("skipping record {r:?}: {e}");
                skipped += 1;
                continue;
            }
        };
        used += 1;
        for (i, &t) in cutoffs.iter().enumerate() {
            let m = metrics_at_rank(rank, t);
            hr[i] += m.hr;
            precision[i] += m.precision;
            ndcg[i] += m.ndcg;
            mrr[i] += m.mrr;
        }
    }
    if used == 0 {
        return Err(Error::Domain(format!("all {skipped} records failed to score")));
    }
    for col in [&mut hr, &mut precision, &mut ndcg, &mut mrr] {
        for x in col.iter_mut() {
            *x /= used as f64;
        }
    }
    Ok(MetricsReport {
        method: scorer.name(),
        cutoffs: cutoffs.to_vec(),
        hr,
        precision,
        ndcg,
        mrr,
        records: used,
        skipped,
        config_hash: None,
        seed: None,
    })
}

/// One row per report, columns `method`, then HR, Precision, NDCG and MRR at
/// each list length. Reports must share list lengths and provenance.
pub fn write_table_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Domain("no reports to tabulate".into()));
    };
    for r in reports {
        if r.cutoffs != first.cutoffs {
            return Err(Error::Validation(format!(
                "{} uses list lengths {:?}, {} uses {:?}",
                r.method, r.cutoffs, first.method, first.cutoffs
            )));
        }
        if r.config_hash != first.config_hash || r.seed != first.seed {
            return Err(Error::ConfigMismatch {
                path: path.to_path_buf(),
                expected: format!("{:?}/{:?}", first.config_hash, first.seed),
                found: format!("{:?}/{:?}", r.config_hash, r.seed),
            });
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(crate::dataset::csv_io)?;
    w.write_record(MetricsReport::table_header(&first.cutoffs))
        .map_err(crate::dataset::csv_io)?;
    for r in reports {
        w.write_record(r.table_row()).map_err(crate::dataset::csv_io)?;
    }
    w.flush()?;
    Ok(())
}
