use serde::{Deserialize, Serialize};

use super::artifacts::ArtifactDir;
use super::config::{DataSource, ExperimentConfig};
use super::pipeline::{assign_groups, evaluate_methods, new_model, prepare, select_groups, EvalSettings, Prepared};
use crate::dataset::synth::{synth_generate, SynthTruth};
use crate::dataset::{Dataset, DatasetStats, MOOD_NAMES};
use crate::emotion_led::sweep_led_dimension;
use crate::error::{Error, Result};
use crate::evaluation::{case_study_export, evaluate, write_table_csv, CaseStudy, MetricsReport};
use crate::grouping::{write_assignment_csv, ElbowResult, UserGroups};
use crate::mood_model::{BnnEpochLog, BnnPosterior, GroupBnnSet};
use crate::par::Execution;
use crate::recommender::{finetune_groups, pretrain_global, train, write_log_csv, Ablation, HdbnModel, ScoreMode};

const HINT_DATA_SYNTH: &str = "run `hdbn synth` with this configuration first";
const HINT_DATA_FILES: &str = "run `hdbn ingest` with this configuration first";
const HINT_GROUP: &str = "run `hdbn group` first";
const HINT_PRETRAIN: &str = "run `hdbn pretrain` first";
const HINT_FINETUNE: &str = "run `hdbn finetune` first";
const HINT_TRAIN: &str = "run `hdbn train` first";

/// A configuration bound to its output directory.
#[derive(Clone, Debug)]
pub struct Session {
    pub cfg: ExperimentConfig,
    pub dir: ArtifactDir,
}

impl Session {
    pub fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = ArtifactDir::open(&cfg)?;
        Ok(Self { cfg, dir })
    }

    pub fn exec(&self) -> Execution {
        if self.cfg.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match &self.cfg.data {
            DataSource::Synth(_) => self.dir.read_bin("synth.bin", HINT_DATA_SYNTH),
            DataSource::Files { .. } => self.dir.read_bin("ingest.bin", HINT_DATA_FILES),
        }
    }

    pub fn prepared(&self) -> Result<Prepared> {
        prepare(self.dataset()?, self.cfg.hp.latent_dim, self.seed())
    }

    pub fn groups(&self) -> Result<UserGroups> {
        Ok(self.dir.read_json::<GroupReport>("group.json", HINT_GROUP)?.groups)
    }

    pub fn model(&self) -> Result<HdbnModel> {
        self.dir.read_bin("train.bin", HINT_TRAIN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataReport {
    pub stats: DatasetStats,
    pub truth: Option<SynthTruth>,
}

/// Load CSVs, validate, and store the canonical dataset.
pub fn cmd_ingest(s: &Session) -> Result<DatasetStats> {
    let DataSource::Files { interactions, music } = &s.cfg.data else {
        return Err(Error::Config("ingest needs `interactions` and `music` paths".into()));
    };
    let ds = Dataset::load(interactions, music)?;
    ds.validate()?;
    let stats = ds.stats();
    s.dir.write_bin("ingest.bin", &ds)?;
    s.dir.write_json(
        "ingest.json",
        &DataReport {
            stats: stats.clone(),
            truth: None,
        },
    )?;
    Ok(stats)
}

/// Generate the configured synthetic dataset.
pub fn cmd_synth(s: &Session) -> Result<DatasetStats> {
    let DataSource::Synth(cfg) = &s.cfg.data else {
        return Err(Error::Config("synth needs a synthetic data source (synth.* keys)".into()));
    };
    let (ds, truth) = synth_generate(cfg, s.seed())?;
    let stats = ds.stats();
    s.dir.write_bin("synth.bin", &ds)?;
    s.dir.write_json(
        "synth.json",
        &DataReport {
            stats: stats.clone(),
            truth: Some(truth),
        },
    )?;
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub groups: UserGroups,
    pub sizes: Vec<usize>,
    pub elbow: Option<ElbowResult>,
}

/// Cluster users by genre profile, choosing the group count by elbow when
/// candidates are configured.
pub fn cmd_group(s: &Session) -> Result<GroupReport> {
    let p = s.prepared()?;
    let (groups, elbow) = if s.cfg.group_candidates.is_empty() {
        (assign_groups(&p, s.cfg.hp.groups, s.seed())?, None)
    } else {
        let (g, e) = select_groups(&p, &s.cfg.group_candidates, s.seed(), s.exec())?;
        (g, Some(e))
    };
    let sizes = (0..groups.n_groups).map(|g| groups.members(g).len()).collect();
    let report = GroupReport { groups, sizes, elbow };
    s.dir.write_json("group.json", &report)?;
    s.dir
        .write_with("group.csv", |path| write_assignment_csv(path, &report.groups, &p.dataset.user_names))?;
    Ok(report)
}

fn write_bnn_log(path: &std::path::Path, rows: &[(Option<usize>, BnnEpochLog)]) -> Result<()> {
    let io = crate::dataset::csv_io;
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["group", "epoch", "data_kl", "weight_kl", "loss"]).map_err(io)?;
    for (g, l) in rows {
        w.write_record([
            g.map_or("global".to_string(), |g| g.to_string()),
            l.epoch.to_string(),
            format!("{:?}", l.data_kl),
            format!("{:?}", l.weight_kl),
            format!("{:?}", l.loss),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Train the global mood network.
pub fn cmd_pretrain(s: &Session) -> Result<Vec<BnnEpochLog>> {
    let p = s.prepared()?;
    let (post, log) = pretrain_global(&p.split.train, &p.vocab, &p.moods, &s.cfg.hp, s.seed())?;
    s.dir.write_bin("pretrain.bin", &post)?;
    let rows: Vec<_> = log.iter().map(|l| (None, *l)).collect();
    s.dir.write_with("pretrain.csv", |path| write_bnn_log(path, &rows))?;
    Ok(log)
}

/// Fine-tune one mood network per group.
pub fn cmd_finetune(s: &Session) -> Result<GroupBnnSet> {
    let p = s.prepared()?;
    let groups = s.groups()?;
    let global: BnnPosterior = s.dir.read_bin("pretrain.bin", HINT_PRETRAIN)?;
    let (set, logs) = finetune_groups(&global, &p.split.train, &p.vocab, &p.moods, &groups, &s.cfg.hp, s.seed(), s.exec())?;
    s.dir.write_bin("finetune.bin", &set)?;
    let rows: Vec<_> = logs
        .iter()
        .enumerate()
        .flat_map(|(g, ls)| ls.iter().map(move |l| (Some(g), *l)))
        .collect();
    s.dir.write_with("finetune.csv", |path| write_bnn_log(path, &rows))?;
    Ok(set)
}

/// End-to-end training. On divergence the last good model is still saved
/// and the divergence is returned as the error.
pub fn cmd_train(s: &Session) -> Result<HdbnModel> {
    let p = s.prepared()?;
    let groups = s.groups()?;
    let bnns: GroupBnnSet = s.dir.read_bin("finetune.bin", HINT_FINETUNE)?;
    let model = new_model(&p, groups, bnns, &s.cfg.hp, s.seed())?;
    let result = train(model, &p.split, s.exec())?;
    s.dir.write_bin("train.bin", &result.model)?;
    s.dir.write_with("train.csv", |path| write_log_csv(path, &result.log))?;
    if let Some(msg) = result.diverged {
        return Err(Error::Divergence(format!(
            "{msg}; last good model saved to {}",
            s.dir.path("train.bin").display()
        )));
    }
    Ok(result.model)
}

fn eval_settings(s: &Session) -> EvalSettings {
    EvalSettings {
        cutoffs: s.cfg.cutoffs.clone(),
        neighbors: s.cfg.neighbors,
        blend: s.cfg.blend,
        exec: s.exec(),
    }
}

/// Evaluate every configured method on the test split.
pub fn cmd_evaluate(s: &Session) -> Result<Vec<MetricsReport>> {
    let p = s.prepared()?;
    let model = if s.cfg.methods.iter().any(|m| m == "hdbn") {
        Some(s.model()?)
    } else {
        None
    };
    let reports: Vec<MetricsReport> = evaluate_methods(&p, model.as_ref(), &s.cfg.methods, &s.cfg.hp, s.seed(), &eval_settings(s))?
        .into_iter()
        .map(|r| r.with_provenance(s.dir.config_hash(), s.seed()))
        .collect();
    s.dir.write_json("evaluate.json", &reports)?;
    s.dir.write_with("evaluate.csv", |path| write_table_csv(path, &reports))?;
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub user: String,
    pub emotion: String,
    pub items: Vec<(String, f64)>,
}

/// Top-`t` tracks for a user and tag given by name. Nothing is written.
pub fn cmd_recommend(s: &Session, user: &str, emotion: &str, t: usize) -> Result<Recommendation> {
    let ds = s.dataset()?;
    let model = s.model()?;
    let find = |names: &[String], name: &str, kind: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("unknown {kind} {name:?}")))
    };
    let u = find(&ds.user_names, user, "user")?;
    let e = find(&ds.tag_names, emotion, "emotion tag")?;
    let list = model.rank_top_t(u, e, t, ScoreMode::Deterministic, None)?;
    Ok(Recommendation {
        user: user.to_string(),
        emotion: emotion.to_string(),
        items: list
            .items
            .iter()
            .zip(&list.scores)
            .map(|(&v, &sc)| (ds.music_names[v].clone(), sc))
            .collect(),
    })
}

/// Train and evaluate the full model and each single-switch ablation from
/// the shared group assignment and global mood network.
pub fn cmd_ablate(s: &Session) -> Result<Vec<MetricsReport>> {
    let p = s.prepared()?;
    let groups = s.groups()?;
    let global: BnnPosterior = s.dir.read_bin("pretrain.bin", HINT_PRETRAIN)?;
    let mut reports = Vec::new();
    for (label, ablation) in Ablation::VARIANTS {
        let report = ablation_run(&p, &groups, &global, s, ablation)?;
        reports.push(MetricsReport {
            method: label.to_string(),
            ..report
        });
    }
    let reports: Vec<MetricsReport> = reports
        .into_iter()
        .map(|r| r.with_provenance(s.dir.config_hash(), s.seed()))
        .collect();
    s.dir.write_json("ablate.json", &reports)?;
    s.dir.write_with("ablate.csv", |path| write_table_csv(path, &reports))?;
    Ok(reports)
}

fn ablation_run(p: &Prepared, groups: &UserGroups, global: &BnnPosterior, s: &Session, ablation: Ablation) -> Result<MetricsReport> {
    let mut hp = s.cfg.hp.clone();
    hp.ablation = ablation;
    let (bnns, _) = finetune_groups(global, &p.split.train, &p.vocab, &p.moods, groups, &hp, s.seed(), s.exec())?;
    let model = new_model(p, groups.clone(), bnns, &hp, s.seed())?;
    let result = train(model, &p.split, s.exec())?;
    if let Some(msg) = result.diverged {
        return Err(Error::Divergence(format!("{} variant: {msg}", ablation.disabled_list())));
    }
    evaluate(&result.model, &p.split.test, &p.protocol(), &s.cfg.cutoffs, s.exec())
}

/// Mood curves along every latent dimension for the configured user and
/// tag: `dimension,grid_value,<moods>`.
pub fn cmd_sweep_led(s: &Session) -> Result<usize> {
    let model = s.model()?;
    let sw = &s.cfg.sweep;
    model.check_query(sw.user, sw.tag)?;
    let grid = sw.grid();
    let bnn = model.bnn(model.bnn_group(sw.user));
    let curves = (0..model.hp.latent_dim)
        .map(|d| sweep_led_dimension(&model.nets, bnn, model.vocab.row(sw.tag), d, &grid))
        .collect::<Result<Vec<_>>>()?;
    s.dir.write_with("sweep_led.csv", |path| {
        let io = crate::dataset::csv_io;
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["dimension".to_string(), "grid_value".to_string()];
        header.extend(MOOD_NAMES.iter().map(|m| m.to_string()));
        w.write_record(&header).map_err(io)?;
        for (d, curve) in curves.iter().enumerate() {
            for (g, m) in grid.iter().zip(curve) {
                let mut row = vec![d.to_string(), format!("{g:?}")];
                row.extend(m.as_slice().iter().map(|x| format!("{x:?}")));
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(curves.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub study: CaseStudy,
    pub history_mood: Vec<f64>,
    pub recommendation_mood: Vec<f64>,
}

/// History and top-T moods of the configured user.
pub fn cmd_case_study(s: &Session) -> Result<CaseStudyReport> {
    let p = s.prepared()?;
    let model = s.model()?;
    let study = case_study_export(&model, &p.split.train, s.cfg.case_user, None, s.cfg.case_length)?;
    let (h, r) = study.mood_profiles();
    let report = CaseStudyReport {
        study,
        history_mood: h.to_vec(),
        recommendation_mood: r.to_vec(),
    };
    s.dir.write_json("case_study.json", &report)?;
    s.dir.write_with("case_study.csv", |path| {
        report
            .study
            .write_csv(path, &p.dataset.music_names, &p.dataset.tag_names)
    })?;
    Ok(report)
}

/// Data, grouping, both mood stages, training and evaluation in one go.
pub fn cmd_pipeline(s: &Session) -> Result<Vec<MetricsReport>> {
    match s.cfg.data {
        DataSource::Synth(_) => cmd_synth(s)?,
        DataSource::Files { .. } => cmd_ingest(s)?,
    };
    cmd_group(s)?;
    cmd_pretrain(s)?;
    cmd_finetune(s)?;
    cmd_train(s)?;
    cmd_evaluate(s)
}
