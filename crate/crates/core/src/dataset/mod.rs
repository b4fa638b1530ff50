//! Interaction records, track metadata, emotion-tag encodings and the
//! train/validation/test protocol.

mod io;
mod negative;
mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, SIMPLEX_TOL};

pub(crate) use io::csv_io;
pub use io::{
    load_interactions, load_music_meta, write_interactions_csv, write_music_csv, InteractionTable,
    MetaRow,
};
pub use negative::{negative_sample, NegativeDraw};
pub use split::{split_8_1_1, ListenedIndex, SplitDataset};

/// Number of mood categories attached to every track.
pub const MOOD_DIM: usize = 9;

/// Mood categories in their fixed column order.
pub const MOOD_NAMES: [&str; MOOD_DIM] = [
    "amazement",
    "solemnity",
    "tenderness",
    "nostalgia",
    "calmness",
    "power",
    "joyful_activation",
    "tension",
    "sadness",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(usize)]
pub enum Mood {
    Amazement = 0,
    Solemnity,
    Tenderness,
    Nostalgia,
    Calmness,
    Power,
    JoyfulActivation,
    Tension,
    Sadness,
}

impl Mood {
    pub const ALL: [Mood; MOOD_DIM] = [
        Mood::Amazement,
        Mood::Solemnity,
        Mood::Tenderness,
        Mood::Nostalgia,
        Mood::Calmness,
        Mood::Power,
        Mood::JoyfulActivation,
        Mood::Tension,
        Mood::Sadness,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        MOOD_NAMES[self.index()]
    }
}

/// A probability distribution over the nine mood categories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoodDistribution([f64; MOOD_DIM]);

impl MoodDistribution {
    pub fn new(p: [f64; MOOD_DIM]) -> Result<Self> {
        if let Some(i) = p.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Validation(format!(
                "mood {} has invalid mass {}",
                MOOD_NAMES[i], p[i]
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Validation(format!("mood distribution sums to {sum}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        let arr: [f64; MOOD_DIM] = p
            .try_into()
            .map_err(|_| Error::DimensionMismatch { expected: MOOD_DIM, got: p.len() })?;
        Self::new(arr)
    }

    pub fn corner(mood: Mood) -> Self {
        let mut p = [0.0; MOOD_DIM];
        p[mood.index()] = 1.0;
        Self(p)
    }

    pub fn uniform() -> Self {
        Self([1.0 / MOOD_DIM as f64; MOOD_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn values(&self) -> [f64; MOOD_DIM] {
        self.0
    }

    /// Index of the largest mass, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One `(user, emotion tag, track)` listening event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub emotion: usize,
    pub music: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MusicMeta {
    pub genre: usize,
    pub year: i32,
    pub artist: usize,
    pub mood: MoodDistribution,
}

/// Fixed encoding of emotion tags: one seeded unit-norm row per tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmotionVocab {
    tags: Vec<String>,
    dim: usize,
    table: Vec<f64>,
}

impl EmotionVocab {
    pub fn new(tags: Vec<String>, dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed).substream("emotion-encoding");
        let mut table = Vec::with_capacity(tags.len() * dim);
        for _ in 0..tags.len() {
            let mut row = rng.normal_vec(dim);
            let n = crate::numerics::norm(&row);
            row.iter_mut().for_each(|x| *x /= n);
            table.extend(row);
        }
        Self { tags, dim, table }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn row(&self, tag: usize) -> &[f64] {
        &self.table[tag * self.dim..(tag + 1) * self.dim]
    }

    pub fn try_row(&self, tag: usize) -> Result<&[f64]> {
        if tag >= self.tags.len() {
            return Err(Error::UnknownIndex {
                kind: "emotion tag",
                index: tag,
                len: self.tags.len(),
            });
        }
        Ok(self.row(tag))
    }
}

/// A fully indexed dataset. Users, tags and tracks are dense indices into
/// the name tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub music: Vec<MusicMeta>,
    pub user_names: Vec<String>,
    pub tag_names: Vec<String>,
    pub music_names: Vec<String>,
    pub genre_names: Vec<String>,
    pub artist_names: Vec<String>,
}

/// Counts in the layout of a dataset summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub music: usize,
    pub emotions: usize,
    pub genres: usize,
    pub years: usize,
    pub artists: usize,
    pub interactions: usize,
    pub sparsity: f64,
}

impl Dataset {
    pub fn load(interactions: &std::path::Path, meta: &std::path::Path) -> Result<Self> {
        let table = load_interactions(interactions)?;
        let mut music_names = table.music;
        let meta_rows = load_music_meta(meta, &mut music_names)?;
        let mut genre_names = Vec::new();
        let mut artist_names = Vec::new();
        let mut music: Vec<Option<MusicMeta>> = vec![None; music_names.len()];
        for row in meta_rows {
            let genre = intern(&mut genre_names, &row.genre);
            let artist = intern(&mut artist_names, &row.artist);
            music[row.music] = Some(MusicMeta {
                genre,
                year: row.year,
                artist,
                mood: row.mood,
            });
        }
        let music = music
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                m.ok_or_else(|| {
                    Error::Validation(format!("track '{}' has no metadata row", music_names[i]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset {
            interactions: table.interactions,
            music,
            user_names: table.users,
            tag_names: table.tags,
            music_names,
            genre_names,
            artist_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_users(&self) -> usize {
        self.user_names.len()
    }

    pub fn n_music(&self) -> usize {
        self.music.len()
    }

    pub fn n_tags(&self) -> usize {
        self.tag_names.len()
    }

    pub fn n_genres(&self) -> usize {
        self.genre_names.len()
    }

    pub fn moods(&self) -> Vec<MoodDistribution> {
        self.music.iter().map(|m| m.mood).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.interactions.is_empty() {
            return Err(Error::Validation("dataset has no interactions".into()));
        }
        for (i, r) in self.interactions.iter().enumerate() {
            let bad = |kind: &'static str, index, len| {
                Error::Validation(format!(
                    "interaction {i}: {}",
                    Error::UnknownIndex { kind, index, len }
                ))
            };
            if r.user >= self.n_users() {
                return Err(bad("user", r.user, self.n_users()));
            }
            if r.emotion >= self.n_tags() {
                return Err(bad("emotion tag", r.emotion, self.n_tags()));
            }
            if r.music >= self.n_music() {
                return Err(bad("music", r.music, self.n_music()));
            }
        }
        for (i, m) in self.music.iter().enumerate() {
            MoodDistribution::new(m.mood.values())
                .map_err(|e| Error::Validation(format!("track {}: {e}", self.music_names[i])))?;
            if m.genre >= self.n_genres() {
                return Err(Error::Validation(format!("track {i}: genre index out of range")));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> DatasetStats {
        let mut years: Vec<i32> = self.music.iter().map(|m| m.year).collect();
        years.sort_unstable();
        years.dedup();
        let cells = (self.n_users() * self.n_music()) as f64;
        DatasetStats {
            users: self.n_users(),
            music: self.n_music(),
            emotions: self.n_tags(),
            genres: self.n_genres(),
            years: years.len(),
            artists: self.artist_names.len(),
            interactions: self.interactions.len(),
            sparsity: if cells > 0.0 {
                1.0 - self.interactions.len() as f64 / cells
            } else {
                1.0
            },
        }
    }
}

pub(crate) fn intern(names: &mut Vec<String>, name: &str) -> usize {
    match names.iter().position(|n| n == name) {
        Some(i) => i,
        None => {
            names.push(name.to_string());
            names.len() - 1
        }
    }
}
