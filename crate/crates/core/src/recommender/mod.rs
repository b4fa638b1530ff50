//! The end-to-end model: embeddings, matching score, pairwise loss, the
//! combined training objective, ranking and persistence.

mod model;
mod objective;
mod params;
pub mod train;

pub use model::{
    bpr_loss, bpr_loss_mean, init_embeddings, match_score, HdbnModel, Intermediates, RankedList,
    ScoreMode, MODEL_CHECKPOINT_VERSION,
};
pub use objective::{batch_users, objective, BatchNoise, ObjectiveGrads, ObjectiveTerms, ObjectiveWeights, Tuple};
pub use params::{Ablation, HyperParams, Preset};
pub use train::{finetune_groups, pretrain_global, train, write_log_csv, EpochLog, TrainResult};
