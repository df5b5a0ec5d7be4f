use super::masking::MaskingPolicy;
use super::stage::{train_stage, Objective, StageConfig, StageData, StageKind, TrainReport, Validation};
use super::TrainError;
use crate::corpus::{encode, encode_for_task, Corpus, EncodedExample, Task, Vocabulary};
use crate::eval::{summarize, ConfusionMatrix, MetricsReport};
use crate::model::{
    init_params, Batch, Checkpoint, CheckpointMeta, EncoderConfig, HeadKind, Mode, Model, Stage,
    TaskHead,
};
use crate::seed;
use crate::tensor::Tape;
use crate::Scalar;

/// Learning rates above this are flagged during fine-tuning.
pub const FINETUNE_LR_WARNING: f64 = 1e-4;

pub fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedExample>, TrainError> {
    corpus
        .documents
        .iter()
        .map(|d| encode(d, vocab, max_len).map_err(|e| TrainError::Config(e.to_string())))
        .collect()
}

/// Labeled examples for `task`; documents without that label are skipped.
pub fn encode_labeled(
    corpus: &Corpus,
    vocab: &Vocabulary,
    max_len: usize,
    task: Task,
) -> Result<Vec<EncodedExample>, TrainError> {
    corpus
        .documents
        .iter()
        .filter(|d| d.label(task).is_some())
        .map(|d| encode_for_task(d, vocab, max_len, task).map_err(|e| TrainError::Config(e.to_string())))
        .collect()
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<T: Scalar = f64> {
    pub checkpoint: Checkpoint<T>,
    pub report: TrainReport,
}

/// Stage 1: MLM training of a freshly initialized encoder.
pub fn run_pretrain<T: Scalar>(
    data: StageData<'_>,
    encoder: &EncoderConfig,
    stage: &StageConfig,
    policy: &MaskingPolicy,
) -> Result<PretrainOutcome<T>, TrainError> {
    let params = init_params::<T>(encoder, seed::derive(stage.seed, "pretrain-init"))?;
    let head = TaskHead::mlm(&params, seed::derive(stage.seed, "mlm-head"));
    let model = Model::new(params, head)?;
    let (model, report) = train_stage(model, data, &Objective::source(*policy), StageKind::Pretrain, stage)?;
    Ok(PretrainOutcome {
        checkpoint: checkpoint(model, Stage::Pretrained, stage.seed, &report),
        report,
    })
}

fn checkpoint<T: Scalar>(model: Model<T>, stage: Stage, seed: u64, report: &TrainReport) -> Checkpoint<T> {
    Checkpoint {
        stage,
        meta: CheckpointMeta {
            seed,
            epochs_run: report.epochs_run,
            final_val_loss: report.best_val_loss,
            notes: Default::default(),
        },
        encoder: model.encoder,
        head: Some(model.head),
    }
}

fn check_input<T: Scalar>(
    ckpt: &Checkpoint<T>,
    allowed: &[Stage],
    expected: Option<&EncoderConfig>,
) -> Result<(), TrainError> {
    if !allowed.contains(&ckpt.stage) {
        return Err(TrainError::StageOrder {
            found: ckpt.stage,
            allowed: allowed.to_vec(),
        });
    }
    if let Some(want) = expected {
        let mut have = ckpt.encoder.config.clone();
        have.dropout = want.dropout;
        if &have != want {
            return Err(TrainError::Model(crate::model::ModelError::Architecture(format!(
                "checkpoint encoder {:?} differs from configured {:?}",
                ckpt.encoder.config, want
            ))));
        }
    }
    ckpt.encoder.validate()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome<T: Scalar = f64> {
    pub checkpoint: Checkpoint<T>,
    pub report: TrainReport,
    /// In-domain validation MLM loss before and after adaptation.
    pub val_loss_before: f64,
    pub val_loss_after: f64,
}

/// Stage 2: continued MLM training on in-domain text with the same objective
/// and an unchanged architecture.
pub fn run_adapt<T: Scalar>(
    ckpt: Checkpoint<T>,
    data: StageData<'_>,
    expected: Option<&EncoderConfig>,
    stage: &StageConfig,
    policy: &MaskingPolicy,
) -> Result<AdaptOutcome<T>, TrainError> {
    check_input(&ckpt, &[Stage::Pretrained, Stage::Adapted], expected)?;
    let head = match ckpt.head {
        Some(h) if matches!(h.kind, HeadKind::Mlm { .. }) => h,
        _ => TaskHead::mlm(&ckpt.encoder, seed::derive(stage.seed, "mlm-head")),
    };
    let model = Model::new(ckpt.encoder, head)?;
    let count = model.encoder.param_count();
    let (model, report) = train_stage(model, data, &Objective::adaptation(*policy), StageKind::Adapt, stage)?;
    debug_assert_eq!(count, model.encoder.param_count());
    let val_loss_before = report.initial_val_loss;
    let val_loss_after = report.best_val_loss.unwrap_or(val_loss_before);
    Ok(AdaptOutcome {
        checkpoint: checkpoint(model, Stage::Adapted, stage.seed, &report),
        report,
        val_loss_before,
        val_loss_after,
    })
}

/// Mean MLM loss on `examples` under corruption fixed by `seed`.
pub fn mlm_loss_on<T: Scalar>(
    ckpt: &Checkpoint<T>,
    examples: &[EncodedExample],
    policy: &MaskingPolicy,
    seed: u64,
) -> Result<f64, TrainError> {
    let head = match &ckpt.head {
        Some(h) if matches!(h.kind, HeadKind::Mlm { .. }) => h.clone(),
        _ => {
            return Err(TrainError::Incompatible(
                "checkpoint has no MLM head to score masked tokens".into(),
            ))
        }
    };
    let model = Model::new(ckpt.encoder.clone(), head)?;
    let objective = Objective::adaptation(*policy);
    Validation::new(examples, &objective, ckpt.encoder.config.vocab_size, seed).loss(&model, 64)
}

/// Argmax class per example.
pub fn predict<T: Scalar>(model: &Model<T>, examples: &[EncodedExample]) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(64) {
        let batch = Batch::from_examples(chunk)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let logits = model.classify_logits(&mut tape, &bound, &batch, Mode::Eval)?;
        let c = tape.shape(logits)[1];
        for row in tape.value(logits).chunks(c) {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneData<'a> {
    pub train: &'a [EncodedExample],
    pub val: &'a [EncodedExample],
    pub test: &'a [EncodedExample],
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T: Scalar = f64> {
    pub checkpoint: Checkpoint<T>,
    pub report: TrainReport,
    pub metrics: MetricsReport,
    pub predictions: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Stage 3: a fresh classifier head trained end-to-end with the encoder.
pub fn run_finetune<T: Scalar>(
    ckpt: Checkpoint<T>,
    data: &FinetuneData<'_>,
    task: Task,
    stage: &StageConfig,
) -> Result<FinetuneOutcome<T>, TrainError> {
    check_input(&ckpt, &[Stage::Pretrained, Stage::Adapted], None)?;
    let mut warnings = Vec::new();
    if stage.lr > FINETUNE_LR_WARNING {
        let w = format!(
            "fine-tuning learning rate {} is above {FINETUNE_LR_WARNING}; training may not settle",
            stage.lr
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let head = TaskHead::classifier(task, ckpt.encoder.config.hidden, seed::derive(stage.seed, "classifier"));
    let model = Model::new(ckpt.encoder, head)?;
    let split = StageData {
        train: data.train,
        val: data.val,
    };
    let (model, report) = train_stage(model, split, &Objective::target(task), StageKind::Finetune, stage)?;
    let predictions = predict(&model, data.test)?;
    let truth = super::stage::labels_of(data.test)?;
    let cm = ConfusionMatrix::from_indices(&truth, &predictions, task.classes())
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let metrics = summarize(&cm).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut ckpt = checkpoint(model, Stage::Finetuned, stage.seed, &report);
    ckpt.meta.notes.insert("task".into(), task.name().into());
    Ok(FinetuneOutcome {
        checkpoint: ckpt,
        report,
        metrics,
        predictions,
        warnings,
    })
}
