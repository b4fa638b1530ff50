use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, MoodDistribution, MOOD_NAMES};
use crate::error::{Error, Result};
use crate::recommender::{HdbnModel, ScoreMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub music: usize,
    pub emotion: usize,
    pub mood: MoodDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRow {
    pub rank: usize,
    pub music: usize,
    pub score: f64,
    pub mood: MoodDistribution,
}

/// A user's train history next to their top-T list, with track moods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub user: usize,
    pub emotion: usize,
    pub history: Vec<HistoryRow>,
    pub recommendations: Vec<RecommendationRow>,
}

/// Case study for `user` queried with `emotion`, or with the user's most
/// frequent train tag (lowest id on ties) when `emotion` is `None`.
pub fn case_study_export(
    model: &HdbnModel,
    train: &[Interaction],
    user: usize,
    emotion: Option<usize>,
    t: usize,
) -> Result<CaseStudy> {
    if user >= model.n_users() {
        return Err(Error::UnknownIndex {
            kind: "user",
            index: user,
            len: model.n_users(),
        });
    }
    let history: Vec<HistoryRow> = train
        .iter()
        .filter(|r| r.user == user)
        .map(|r| HistoryRow {
            music: r.music,
            emotion: r.emotion,
            mood: model.moods[r.music],
        })
        .collect();
    let emotion = match emotion {
        Some(e) => e,
        None => {
            let mut counts = vec![0usize; model.vocab.len()];
            for h in &history {
                counts[h.emotion] += 1;
            }
            counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map_or(0, |(e, _)| e)
        }
    };
    let list = model.rank_top_t(user, emotion, t, ScoreMode::Deterministic, None)?;
    let recommendations = list
        .items
        .iter()
        .zip(&list.scores)
        .enumerate()
        .map(|(i, (&music, &score))| RecommendationRow {
            rank: i + 1,
            music,
            score,
            mood: model.moods[music],
        })
        .collect();
    Ok(CaseStudy {
        user,
        emotion,
        history,
        recommendations,
    })
}

impl CaseStudy {
    /// `section,rank,music,emotion,score,<moods>`; history rows leave rank
    /// and score empty, recommendation rows leave the tag empty.
    pub fn write_csv(&self, path: &Path, music_names: &[String], tag_names: &[String]) -> Result<()> {
        let io = crate::dataset::csv_io;
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["section", "rank", "music", "emotion", "score"];
        header.extend(MOOD_NAMES.iter().copied());
        w.write_record(&header).map_err(io)?;
        let name = |names: &[String], i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
        for h in &self.history {
            let mut row = vec![
                "history".to_string(),
                String::new(),
                name(music_names, h.music),
                name(tag_names, h.emotion),
                String::new(),
            ];
            row.extend(h.mood.as_slice().iter().map(|x| format!("{x:?}")));
            w.write_record(&row).map_err(io)?;
        }
        for r in &self.recommendations {
            let mut row = vec![
                "recommendation".to_string(),
                r.rank.to_string(),
                name(music_names, r.music),
                String::new(),
                format!("{:?}", r.score),
            ];
            row.extend(r.mood.as_slice().iter().map(|x| format!("{x:?}")));
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean mood of the history and of the recommendations, one bar series
    /// each.
    pub fn mood_profiles(&self) -> ([f64; 9], [f64; 9]) {
        fn mean<'a>(moods: impl Iterator<Item = &'a MoodDistribution>) -> [f64; 9] {
            let mut acc = [0.0; 9];
            let mut n = 0.0;
            for m in moods {
                for (a, x) in acc.iter_mut().zip(m.as_slice()) {
                    *a += x;
                }
                n += 1.0;
            }
            if n > 0.0 {
                for a in &mut acc {
                    *a /= n;
                }
            }
            acc
        }
        (
            mean(self.history.iter().map(|h| &h.mood)),
            mean(self.recommendations.iter().map(|r| &r.mood)),
        )
    }
}
