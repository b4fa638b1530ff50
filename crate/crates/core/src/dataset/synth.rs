//! Seeded synthetic datasets with controllable heterogeneity.
//!
//! Users belong to latent groups. A group favours a subset of genres and maps
//! each emotion tag to a preferred mood corner. Three knobs perturb that
//! structure: groups diverging from a shared mapping (across users),
//! per-user remapping of tags (user jitter) and per-event mood noise (within
//! a user).

use serde::{Deserialize, Serialize};

use super::{Dataset, Interaction, Mood, MoodDistribution, MusicMeta, MOOD_DIM};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoodMapping {
    /// Group `g` maps tags onto a pair of corners; group 0 gets calmness and
    /// tenderness, group 1 joyful activation and power.
    Polarized,
    /// Every `(group, tag)` gets an independent random corner.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub music: usize,
    pub tags: usize,
    pub groups: usize,
    pub genres: usize,
    pub records_per_user: usize,
    pub mapping: MoodMapping,
    /// Probability that a group's tag uses its own corner rather than the
    /// corner shared by all groups.
    pub across_user_heterogeneity: f64,
    /// Probability that a single event draws a random mood corner.
    pub within_user_heterogeneity: f64,
    /// Probability that a user remaps a tag to a random corner.
    pub user_jitter: f64,
    /// Probability that a listened track comes from the group's genres.
    pub genre_focus: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 400,
            music: 100,
            tags: 8,
            groups: 2,
            genres: 4,
            records_per_user: 20,
            mapping: MoodMapping::Polarized,
            across_user_heterogeneity: 1.0,
            within_user_heterogeneity: 0.1,
            user_jitter: 0.05,
            genre_focus: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.users == 0 || self.music == 0 || self.tags == 0 || self.records_per_user == 0 {
            return bad("synthetic users, music, tags and records_per_user must be positive".into());
        }
        if self.groups == 0 || self.groups > self.users {
            return bad(format!("groups must be in 1..={} (users), got {}", self.users, self.groups));
        }
        if self.genres < self.groups {
            return bad(format!("genres ({}) must be at least groups ({})", self.genres, self.groups));
        }
        if self.genres > self.music {
            return bad(format!("genres ({}) must not exceed music ({})", self.genres, self.music));
        }
        for (name, p) in [
            ("across_user_heterogeneity", self.across_user_heterogeneity),
            ("within_user_heterogeneity", self.within_user_heterogeneity),
            ("user_jitter", self.user_jitter),
            ("genre_focus", self.genre_focus),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Generating structure, for directional tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub seed: u64,
    pub config: SynthConfig,
    pub user_group: Vec<usize>,
    /// `group_mapping[g][e]` is the mood corner group `g` seeks under tag `e`.
    pub group_mapping: Vec<Vec<usize>>,
    /// Per-user mapping after jitter.
    pub user_mapping: Vec<Vec<usize>>,
    pub group_genres: Vec<Vec<usize>>,
    pub track_primary: Vec<usize>,
}

impl SynthTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const CORNER_ORDER: [Mood; MOOD_DIM] = [
    Mood::Calmness,
    Mood::Tenderness,
    Mood::JoyfulActivation,
    Mood::Power,
    Mood::Sadness,
    Mood::Nostalgia,
    Mood::Tension,
    Mood::Amazement,
    Mood::Solemnity,
];

fn group_corners(g: usize) -> [usize; 2] {
    [
        CORNER_ORDER[(2 * g) % MOOD_DIM].index(),
        CORNER_ORDER[(2 * g + 1) % MOOD_DIM].index(),
    ]
}

fn track_mood(rng: &mut Rng) -> (usize, MoodDistribution) {
    let primary = rng.below(MOOD_DIM);
    let mut p = [0.0; MOOD_DIM];
    let main = rng.uniform_range(0.6, 0.9);
    p[primary] = main;
    let mut others: Vec<usize> = (0..MOOD_DIM).filter(|&k| k != primary).collect();
    rng.shuffle(&mut others);
    let split = rng.uniform();
    p[others[0]] = (1.0 - main) * split;
    p[others[1]] = 1.0 - main - p[others[0]];
    let mood = MoodDistribution::new(p).expect("constructed on the simplex");
    (primary, mood)
}

pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<(Dataset, SynthTruth)> {
    config.validate()?;
    let root = Rng::new(seed);
    let (u_n, v_n, m_n, g_n) = (config.users, config.music, config.tags, config.groups);

    let mut rng = root.substream("synth-tracks");
    let mut music = Vec::with_capacity(v_n);
    let mut track_primary = Vec::with_capacity(v_n);
    let n_artists = (v_n / 5).max(1);
    for v in 0..v_n {
        let (primary, mood) = track_mood(&mut rng);
        track_primary.push(primary);
        music.push(MusicMeta {
            genre: v % config.genres,
            year: 1970 + rng.below(50) as i32,
            artist: v % n_artists,
            mood,
        });
    }

    let mut rng = root.substream("synth-mapping");
    let mut group_mapping = vec![vec![0; m_n]; g_n];
    for (g, row) in group_mapping.iter_mut().enumerate() {
        let corners = group_corners(g);
        for (e, c) in row.iter_mut().enumerate() {
            *c = match config.mapping {
                MoodMapping::Polarized => corners[e % 2],
                MoodMapping::Random => rng.below(MOOD_DIM),
            };
        }
    }
    let shared = group_mapping[0].clone();
    for row in group_mapping.iter_mut().skip(1) {
        for (e, c) in row.iter_mut().enumerate() {
            if rng.uniform() >= config.across_user_heterogeneity {
                *c = shared[e];
            }
        }
    }

    let group_genres: Vec<Vec<usize>> = (0..g_n)
        .map(|g| (0..config.genres).filter(|k| k % g_n == g).collect())
        .collect();
    let user_group: Vec<usize> = (0..u_n).map(|u| u % g_n).collect();

    let mut rng = root.substream("synth-users");
    let user_mapping: Vec<Vec<usize>> = user_group
        .iter()
        .map(|&g| {
            group_mapping[g]
                .iter()
                .map(|&c| {
                    if rng.uniform() < config.user_jitter {
                        rng.below(MOOD_DIM)
                    } else {
                        c
                    }
                })
                .collect()
        })
        .collect();

    let by_genre: Vec<Vec<usize>> = (0..config.genres)
        .map(|k| (0..v_n).filter(|&v| music[v].genre == k).collect())
        .collect();
    let all: Vec<usize> = (0..v_n).collect();
    let mut interactions = Vec::with_capacity(u_n * config.records_per_user);
    let mut weights = Vec::with_capacity(v_n);
    for u in 0..u_n {
        let mut rng = root.substream_indexed("synth-events", u as u64);
        let g = user_group[u];
        let focus: Vec<usize> = group_genres[g].iter().flat_map(|&k| by_genre[k].iter().copied()).collect();
        let mut seen = vec![false; v_n];
        for _ in 0..config.records_per_user {
            let e = rng.below(m_n);
            let corner = if rng.uniform() < config.within_user_heterogeneity {
                rng.below(MOOD_DIM)
            } else {
                user_mapping[u][e]
            };
            let pool = if rng.uniform() < config.genre_focus { &focus } else { &all };
            weights.clear();
            weights.extend(pool.iter().map(|&v| {
                let fresh = if seen[v] { 0.05 } else { 1.0 };
                (music[v].mood.as_slice()[corner] + 0.02) * fresh
            }));
            let total: f64 = weights.iter().sum();
            let mut target = rng.uniform() * total;
            let mut pick = pool[pool.len() - 1];
            for (&v, &w) in pool.iter().zip(&weights) {
                if target < w {
                    pick = v;
                    break;
                }
                target -= w;
            }
            seen[pick] = true;
            interactions.push(Interaction {
                user: u,
                emotion: e,
                music: pick,
            });
        }
    }

    let ds = Dataset {
        interactions,
        music,
        user_names: (0..u_n).map(|u| format!("u{u}")).collect(),
        tag_names: (0..m_n).map(|e| format!("t{e}")).collect(),
        music_names: (0..v_n).map(|v| format!("m{v}")).collect(),
        genre_names: (0..config.genres).map(|k| format!("genre{k}")).collect(),
        artist_names: (0..n_artists).map(|a| format!("artist{a}")).collect(),
    };
    let truth = SynthTruth {
        seed,
        config: config.clone(),
        user_group,
        group_mapping,
        user_mapping,
        group_genres,
        track_primary,
    };
    Ok((ds, truth))
}
