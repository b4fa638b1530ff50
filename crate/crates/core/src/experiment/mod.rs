//! Reproducible experiment plumbing: the pipeline stages, flat key-value
//! configuration, write-once artifact directories and the commands the CLI
//! exposes.

mod artifacts;
mod commands;
mod config;
mod pipeline;

pub use artifacts::{ArtifactDir, Stamped, ARTIFACT_VERSION};
pub use commands::{
    cmd_ablate, cmd_case_study, cmd_evaluate, cmd_finetune, cmd_group, cmd_ingest, cmd_pipeline, cmd_pretrain,
    cmd_recommend, cmd_sweep_led, cmd_synth, cmd_train, CaseStudyReport, DataReport, GroupReport, Recommendation,
    Session,
};
pub use config::{DataSource, ExperimentConfig, SweepSettings};
pub use pipeline::{
    assign_groups, evaluate_methods, fit_all, fit_mood_models, new_model, prepare, pretrain_only, select_groups,
    EvalSettings, MoodLogs, Prepared,
};
