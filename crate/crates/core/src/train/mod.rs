//! Masked-language-model pre-training, domain adaptation and supervised
//! fine-tuning.

mod masking;
mod optim;
mod pipeline;
mod stage;

pub use masking::{MaskAction, MaskedBatch, MaskingPolicy};
pub use optim::{AdamWConfig, OptimizerState};
pub use pipeline::{
    encode_corpus, encode_labeled, mlm_loss_on, predict, run_adapt, run_finetune, run_pretrain,
    AdaptOutcome, FinetuneData, FinetuneOutcome, PretrainOutcome, FINETUNE_LR_WARNING,
};
pub use stage::{
    train_stage, EarlyStopping, Objective, ObjectiveKind, Observation, StageConfig, StageData,
    StageKind, StageRole, TrainReport, Validation,
};

use thiserror::Error;

use crate::model::Stage;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient {value} in parameter block {block}")]
    NonFiniteGradient { block: String, value: f64 },
    #[error("training diverged after {} epochs (loss history {:?})", .0.epochs_run, .0.train_loss)]
    Diverged(Box<TrainReport>),
    #[error("checkpoint stage {found} is not accepted here (expected one of {allowed:?})")]
    StageOrder { found: Stage, allowed: Vec<Stage> },
    #[error("incompatible objective: {0}")]
    Incompatible(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

impl TrainError {
    /// Divergence or non-finite values, as opposed to usage errors.
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::NonFiniteGradient { .. } | TrainError::Diverged(_))
    }
}
