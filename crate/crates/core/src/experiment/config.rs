use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::synth::{MoodMapping, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::baselines::{BASELINE_NAMES, DEFAULT_BLEND, DEFAULT_NEIGHBORS};
use crate::evaluation::CUTOFFS;
use crate::numerics::OptimizerKind;
use crate::recommender::{Ablation, HyperParams, Preset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Files { interactions: PathBuf, music: PathBuf },
    Synth(SynthConfig),
}

/// One latent-dimension sweep: which user's group network and which tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub user: usize,
    pub tag: usize,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl SweepSettings {
    pub fn grid(&self) -> Vec<f64> {
        if self.points < 2 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.min + step * i as f64).collect()
    }
}

/// Everything that determines an experiment's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataSource,
    pub hp: HyperParams,
    /// Empty: use `hp.groups` directly instead of elbow selection.
    pub group_candidates: Vec<usize>,
    pub methods: Vec<String>,
    pub cutoffs: Vec<usize>,
    pub neighbors: usize,
    pub blend: f64,
    pub parallel: bool,
    pub sweep: SweepSettings,
    pub case_user: usize,
    pub case_length: usize,
}

impl ExperimentConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            preset,
            seed: 42,
            output: PathBuf::from("out"),
            data: DataSource::Synth(SynthConfig::default()),
            hp: preset.hyper_params(),
            group_candidates: Vec::new(),
            methods: std::iter::once("hdbn")
                .chain(BASELINE_NAMES)
                .map(str::to_string)
                .collect(),
            cutoffs: CUTOFFS.to_vec(),
            neighbors: DEFAULT_NEIGHBORS,
            blend: DEFAULT_BLEND,
            parallel: true,
            sweep: SweepSettings {
                user: 0,
                tag: 0,
                min: -3.0,
                max: 3.0,
                points: 25,
            },
            case_user: 0,
            case_length: 5,
        }
    }

    /// Parse `key = value` lines; `#` starts a comment. A `preset` key is
    /// applied before every other key wherever it appears.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            Some((_, v)) => Preset::parse(v)?,
            None => Preset::EmoMusicLjSmall,
        };
        let mut cfg = Self::from_preset(preset);
        for (k, v) in pairs {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `overrides` (each `key=value`) on top of this configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut pairs = self.to_pairs();
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    fn synth_mut(&mut self) -> &mut SynthConfig {
        if !matches!(self.data, DataSource::Synth(_)) {
            self.data = DataSource::Synth(SynthConfig::default());
        }
        match &mut self.data {
            DataSource::Synth(s) => s,
            DataSource::Files { .. } => unreachable!("replaced above"),
        }
    }

    fn set_path(&mut self, key: &str, value: &str) {
        let (mut interactions, mut music) = match &self.data {
            DataSource::Files { interactions, music } => (interactions.clone(), music.clone()),
            DataSource::Synth(_) => (PathBuf::new(), PathBuf::new()),
        };
        if key == "interactions" {
            interactions = PathBuf::from(value);
        } else {
            music = PathBuf::from(value);
        }
        self.data = DataSource::Files { interactions, music };
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let hp = &mut self.hp;
        match key {
            "seed" => self.seed = num(key, value)?,
            "output" => self.output = PathBuf::from(value),
            "interactions" | "music" => self.set_path(key, value),
            "synth.users" => self.synth_mut().users = num(key, value)?,
            "synth.music" => self.synth_mut().music = num(key, value)?,
            "synth.tags" => self.synth_mut().tags = num(key, value)?,
            "synth.groups" => self.synth_mut().groups = num(key, value)?,
            "synth.genres" => self.synth_mut().genres = num(key, value)?,
            "synth.records_per_user" => self.synth_mut().records_per_user = num(key, value)?,
            "synth.mapping" => {
                self.synth_mut().mapping = match value {
                    "polarized" => MoodMapping::Polarized,
                    "random" => MoodMapping::Random,
                    _ => return Err(Error::Config(format!("synth.mapping must be polarized or random, got {value:?}"))),
                }
            }
            "synth.across" => self.synth_mut().across_user_heterogeneity = num(key, value)?,
            "synth.within" => self.synth_mut().within_user_heterogeneity = num(key, value)?,
            "synth.jitter" => self.synth_mut().user_jitter = num(key, value)?,
            "synth.genre_focus" => self.synth_mut().genre_focus = num(key, value)?,
            "latent_dim" => hp.latent_dim = num(key, value)?,
            "emb_dim" => hp.emb_dim = num(key, value)?,
            "groups" => hp.groups = num(key, value)?,
            "neg_k" => hp.neg_k = num(key, value)?,
            "batch_size" => hp.batch_size = num(key, value)?,
            "lr" => hp.lr = num(key, value)?,
            "optimizer" => hp.optimizer = optimizer(key, value)?,
            "epochs" => hp.epochs = num(key, value)?,
            "patience" => hp.patience = num(key, value)?,
            "emb_init" => hp.emb_init = num(key, value)?,
            "lambda1" => hp.lambda1 = num(key, value)?,
            "lambda2" => hp.lambda2 = num(key, value)?,
            "lambda3" => hp.lambda3 = num(key, value)?,
            "lambda4" => hp.lambda4 = num(key, value)?,
            "lambda5" => hp.lambda5 = num(key, value)?,
            "lambda6" => hp.lambda6 = num(key, value)?,
            "joint_bnn" => hp.joint_bnn = boolean(key, value)?,
            "alpha" => hp.alpha = num(key, value)?,
            "pretrain_lr" => hp.pretrain_lr = num(key, value)?,
            "pretrain_batch" => hp.pretrain_batch = num(key, value)?,
            "pretrain_epochs" => hp.pretrain_epochs = num(key, value)?,
            "finetune_lr" => hp.finetune_lr = num(key, value)?,
            "finetune_batch" => hp.finetune_batch = num(key, value)?,
            "finetune_epochs" => hp.finetune_epochs = num(key, value)?,
            "mood_optimizer" => hp.mood_optimizer = optimizer(key, value)?,
            "disable" => hp.ablation = Ablation::parse_disabled(value)?,
            "group_candidates" => self.group_candidates = list(key, value)?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .map(|s| s.trim().to_lowercase())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "cutoffs" => self.cutoffs = list(key, value)?,
            "neighbors" => self.neighbors = num(key, value)?,
            "blend" => self.blend = num(key, value)?,
            "parallel" => self.parallel = boolean(key, value)?,
            "sweep.user" => self.sweep.user = num(key, value)?,
            "sweep.tag" => self.sweep.tag = num(key, value)?,
            "sweep.min" => self.sweep.min = num(key, value)?,
            "sweep.max" => self.sweep.max = num(key, value)?,
            "sweep.points" => self.sweep.points = num(key, value)?,
            "case.user" => self.case_user = num(key, value)?,
            "case.length" => self.case_length = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        match &self.data {
            DataSource::Synth(s) => s.validate()?,
            DataSource::Files { interactions, music } => {
                if interactions.as_os_str().is_empty() || music.as_os_str().is_empty() {
                    return Err(Error::Config("both interactions and music paths are required".into()));
                }
            }
        }
        for m in &self.methods {
            if m != "hdbn" && !BASELINE_NAMES.contains(&m.as_str()) {
                return Err(Error::Config(format!(
                    "unknown method {m:?}; expected hdbn or one of {}",
                    BASELINE_NAMES.join(", ")
                )));
            }
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::Config("cutoffs must be positive".into()));
        }
        if self.neighbors == 0 {
            return Err(Error::Config("neighbors must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.blend) {
            return Err(Error::Config(format!("blend must be in [0, 1], got {}", self.blend)));
        }
        if !self.group_candidates.is_empty() && self.group_candidates.len() < 3 {
            return Err(Error::Config("group_candidates needs at least 3 values".into()));
        }
        if self.case_length == 0 {
            return Err(Error::Config("case.length must be at least 1".into()));
        }
        Ok(())
    }

    /// Every setting as `key = value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let hp = &self.hp;
        let mut p: Vec<(&str, String)> = vec![
            ("preset", self.preset.name().to_string()),
            ("seed", self.seed.to_string()),
            ("output", self.output.display().to_string()),
        ];
        match &self.data {
            DataSource::Files { interactions, music } => {
                p.push(("interactions", interactions.display().to_string()));
                p.push(("music", music.display().to_string()));
            }
            DataSource::Synth(s) => {
                p.extend([
                    ("synth.users", s.users.to_string()),
                    ("synth.music", s.music.to_string()),
                    ("synth.tags", s.tags.to_string()),
                    ("synth.groups", s.groups.to_string()),
                    ("synth.genres", s.genres.to_string()),
                    ("synth.records_per_user", s.records_per_user.to_string()),
                    (
                        "synth.mapping",
                        match s.mapping {
                            MoodMapping::Polarized => "polarized",
                            MoodMapping::Random => "random",
                        }
                        .to_string(),
                    ),
                    ("synth.across", fmt_f(s.across_user_heterogeneity)),
                    ("synth.within", fmt_f(s.within_user_heterogeneity)),
                    ("synth.jitter", fmt_f(s.user_jitter)),
                    ("synth.genre_focus", fmt_f(s.genre_focus)),
                ]);
            }
        }
        p.extend([
            ("latent_dim", hp.latent_dim.to_string()),
            ("emb_dim", hp.emb_dim.to_string()),
            ("groups", hp.groups.to_string()),
            ("neg_k", hp.neg_k.to_string()),
            ("batch_size", hp.batch_size.to_string()),
            ("lr", fmt_f(hp.lr)),
            ("optimizer", hp.optimizer.name().to_string()),
            ("epochs", hp.epochs.to_string()),
            ("patience", hp.patience.to_string()),
            ("emb_init", fmt_f(hp.emb_init)),
            ("lambda1", fmt_f(hp.lambda1)),
            ("lambda2", fmt_f(hp.lambda2)),
            ("lambda3", fmt_f(hp.lambda3)),
            ("lambda4", fmt_f(hp.lambda4)),
            ("lambda5", fmt_f(hp.lambda5)),
            ("lambda6", fmt_f(hp.lambda6)),
            ("joint_bnn", hp.joint_bnn.to_string()),
            ("alpha", fmt_f(hp.alpha)),
            ("pretrain_lr", fmt_f(hp.pretrain_lr)),
            ("pretrain_batch", hp.pretrain_batch.to_string()),
            ("pretrain_epochs", hp.pretrain_epochs.to_string()),
            ("finetune_lr", fmt_f(hp.finetune_lr)),
            ("finetune_batch", hp.finetune_batch.to_string()),
            ("finetune_epochs", hp.finetune_epochs.to_string()),
            ("mood_optimizer", hp.mood_optimizer.name().to_string()),
            ("disable", hp.ablation.disabled_list()),
            ("group_candidates", join(&self.group_candidates)),
            ("methods", self.methods.join(",")),
            ("cutoffs", join(&self.cutoffs)),
            ("neighbors", self.neighbors.to_string()),
            ("blend", fmt_f(self.blend)),
            ("parallel", self.parallel.to_string()),
            ("sweep.user", self.sweep.user.to_string()),
            ("sweep.tag", self.sweep.tag.to_string()),
            ("sweep.min", fmt_f(self.sweep.min)),
            ("sweep.max", fmt_f(self.sweep.max)),
            ("sweep.points", self.sweep.points.to_string()),
            ("case.user", self.case_user.to_string()),
            ("case.length", self.case_length.to_string()),
        ]);
        p.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The configuration as a file [`ExperimentConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over the crate version and every setting that can change an
    /// output. The output directory and the execution mode are excluded:
    /// parallel and sequential runs produce identical results.
    pub fn hash(&self) -> String {
        let canonical: BTreeMap<String, String> = self
            .to_pairs()
            .into_iter()
            .filter(|(k, _)| k != "output" && k != "parallel")
            .collect();
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        for (k, v) in canonical {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, found {raw:?}", i + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn optimizer(key: &str, value: &str) -> Result<OptimizerKind> {
    OptimizerKind::parse(value).ok_or_else(|| Error::Config(format!("{key}: unknown optimizer {value:?}")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Shortest form that parses back to the same value.
fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}
