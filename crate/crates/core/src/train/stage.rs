use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::masking::MaskingPolicy;
use super::optim::{AdamWConfig, OptimizerState};
use super::TrainError;
use crate::corpus::{EncodedExample, Task};
use crate::model::{Batch, HeadKind, Mode, Model, ModelError};
use crate::seed;
use crate::tensor::{Tape, TensorError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Pretrain,
    Adapt,
    Finetune,
}

/// Hyperparameters for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
    /// Stop after this many validations without improvement; `None` runs all epochs.
    pub patience: Option<usize>,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub dropout: Option<f64>,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 10,
            batch_size: 32,
            eval_every: 1,
            patience: None,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            dropout: None,
            seed: 0,
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be positive".to_string());
        }
        if self.patience == Some(0) {
            problems.push("patience must be positive when set".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(problems.join("; ")))
        }
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageRole {
    Source,
    Adaptation,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Mlm(MaskingPolicy),
    Classification(Task),
}

/// What a stage optimizes. Source and adaptation stages share the MLM objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub role: StageRole,
}

impl Objective {
    pub fn source(policy: MaskingPolicy) -> Self {
        Self {
            kind: ObjectiveKind::Mlm(policy),
            role: StageRole::Source,
        }
    }

    pub fn adaptation(policy: MaskingPolicy) -> Self {
        Self {
            kind: ObjectiveKind::Mlm(policy),
            role: StageRole::Adaptation,
        }
    }

    pub fn target(task: Task) -> Self {
        Self {
            kind: ObjectiveKind::Classification(task),
            role: StageRole::Target,
        }
    }

    fn check<T: Scalar>(&self, model: &Model<T>) -> Result<(), TrainError> {
        match (self.kind, model.head.kind) {
            (ObjectiveKind::Mlm(p), HeadKind::Mlm { .. }) => p.validate(),
            (ObjectiveKind::Classification(t), HeadKind::Classifier { task, .. }) if t == task => Ok(()),
            (kind, head) => Err(TrainError::Incompatible(format!(
                "objective {kind:?} cannot train a {head:?} head"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

/// Tracks the best validation loss and the patience budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: Option<usize>,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        let improved = self.best.is_none_or(|(_, b)| loss < b);
        if improved {
            self.best = Some((epoch, loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation {
            improved,
            stop: self.patience.is_some_and(|p| self.since_best >= p),
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Per-epoch history of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: StageKind,
    pub train_loss: Vec<f64>,
    /// `(epoch, loss)` for every validation pass.
    pub val_loss: Vec<(usize, f64)>,
    /// 1-based epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    /// Validation loss of the parameters the stage started from.
    pub initial_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub step_losses: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Equality of everything except timing.
    pub fn same_history(&self, other: &Self) -> bool {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        } == Self {
            wall_clock_secs: 0.0,
            ..other.clone()
        }
    }
}

/// Training and validation examples for a stage.
#[derive(Debug, Clone, Copy)]
pub struct StageData<'a> {
    pub train: &'a [EncodedExample],
    pub val: &'a [EncodedExample],
}

/// Validation inputs with MLM corruption fixed once so epochs are comparable.
pub struct Validation {
    examples: Vec<EncodedExample>,
    targets: Option<Vec<Vec<usize>>>,
}

impl Validation {
    pub fn new(val: &[EncodedExample], objective: &Objective, vocab_size: usize, seed: u64) -> Self {
        match objective.kind {
            ObjectiveKind::Mlm(policy) => {
                let mut rng = seed::rng(seed, "validation-masks");
                let mut examples = Vec::with_capacity(val.len());
                let mut targets = Vec::with_capacity(val.len());
                for e in val {
                    let m = policy.apply(&e.ids, &e.attention, vocab_size, &mut rng);
                    examples.push(EncodedExample {
                        ids: m.ids,
                        ..e.clone()
                    });
                    targets.push(m.targets);
                }
                Self {
                    examples,
                    targets: Some(targets),
                }
            }
            ObjectiveKind::Classification(_) => Self {
                examples: val.to_vec(),
                targets: None,
            },
        }
    }

    /// Mean loss over masked positions (MLM) or examples (classification).
    pub fn loss<T: Scalar>(&self, model: &Model<T>, batch_size: usize) -> Result<f64, TrainError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for (start, chunk) in (0..self.examples.len())
            .step_by(batch_size.max(1))
            .map(|s| (s, &self.examples[s..(s + batch_size.max(1)).min(self.examples.len())]))
        {
            let batch = Batch::from_examples(chunk)?;
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            match &self.targets {
                Some(all) => {
                    let targets: Vec<usize> = all[start..start + chunk.len()]
                        .iter()
                        .flat_map(|t| t[..batch.len].iter().copied())
                        .collect();
                    let n = targets
                        .iter()
                        .filter(|&&t| t != crate::tensor::IGNORE_INDEX)
                        .count();
                    if n == 0 {
                        continue;
                    }
                    let loss = model.mlm_loss(&mut tape, &bound, &batch, &targets, Mode::Eval)?;
                    total += tape.value(loss)[0].as_f64() * n as f64;
                    count += n;
                }
                None => {
                    let labels = labels_of(chunk)?;
                    let logits = model.classify_logits(&mut tape, &bound, &batch, Mode::Eval)?;
                    let loss = tape.cross_entropy(logits, &labels, None).map_err(ModelError::from)?;
                    total += tape.value(loss)[0].as_f64() * chunk.len() as f64;
                    count += chunk.len();
                }
            }
        }
        if count == 0 {
            return Err(TrainError::Config("validation set yields no loss terms".into()));
        }
        Ok(total / count as f64)
    }
}

pub(crate) fn labels_of(examples: &[EncodedExample]) -> Result<Vec<usize>, TrainError> {
    examples
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| TrainError::Config("classification example without a label".into()))
        })
        .collect()
}

/// One step's loss and gradient update.
fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut OptimizerState<T>,
    chunk: &[&EncodedExample],
    objective: &Objective,
    vocab_size: usize,
    mask_rng: &mut dyn rand::RngCore,
    dropout_rng: &mut dyn rand::RngCore,
) -> Result<Option<f64>, TrainError> {
    let mut batch = Batch::new(chunk)?;
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let loss = match objective.kind {
        ObjectiveKind::Mlm(policy) => {
            let masked = policy.apply(&batch.ids, &batch.attention, vocab_size, mask_rng);
            if masked.selected() == 0 {
                return Ok(None);
            }
            batch.ids = masked.ids;
            model.mlm_loss(&mut tape, &bound, &batch, &masked.targets, Mode::Train(dropout_rng))?
        }
        ObjectiveKind::Classification(_) => {
            let owned: Vec<EncodedExample> = chunk.iter().map(|e| (*e).clone()).collect();
            let labels = labels_of(&owned)?;
            let logits = model.classify_logits(&mut tape, &bound, &batch, Mode::Train(dropout_rng))?;
            tape.cross_entropy(logits, &labels, None)
                .map_err(ModelError::from)?
        }
    };
    let value = tape.value(loss)[0].as_f64();
    if !value.is_finite() {
        return Ok(Some(value));
    }
    let mut grads = tape.backward(loss).map_err(|e: TensorError| TrainError::Model(e.into()))?;
    let mut g = model.encoder.set.collect_grads(&bound.encoder, &mut grads);
    g.extend(model.head.params.collect_grads(&bound.head, &mut grads));
    let mut blocks: Vec<_> = model
        .encoder
        .set
        .blocks
        .iter_mut()
        .chain(model.head.params.blocks.iter_mut())
        .collect();
    opt.step(&mut blocks, &mut g)?;
    Ok(Some(value))
}

/// Batches this many at a time are drawn from a window sorted by length.
const BUCKET_WINDOW: usize = 16;

/// Shuffles, groups similar lengths within windows to limit padding, then
/// shuffles the batch order.
fn bucketed_batches<R: rand::Rng>(
    order: &mut [usize],
    lengths: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    order.shuffle(rng);
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for window in order.chunks_mut(batch_size * BUCKET_WINDOW) {
        window.sort_by_key(|&i| lengths[i]);
        batches.extend(window.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Seeded mini-batch training with per-epoch validation, best-model
/// retention and optional early stopping.
pub fn train_stage<T: Scalar>(
    mut model: Model<T>,
    data: StageData<'_>,
    objective: &Objective,
    stage: StageKind,
    config: &StageConfig,
) -> Result<(Model<T>, TrainReport), TrainError> {
    config.validate()?;
    objective.check(&model)?;
    if let Some(p) = config.dropout {
        model.encoder.config.dropout = p;
    }
    let vocab_size = model.encoder.config.vocab_size;
    let start = Instant::now();
    let validation = Validation::new(data.val, objective, vocab_size, config.seed);
    let initial_val_loss = validation.loss(&model, config.batch_size.max(64))?;
    let mut report = TrainReport {
        stage,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: Some(initial_val_loss),
        initial_val_loss,
        epochs_run: 0,
        stopped_early: false,
        step_losses: Vec::new(),
        wall_clock_secs: 0.0,
    };
    let mut stopper = EarlyStopping::new(config.patience);
    stopper.observe(0, initial_val_loss);
    let mut best = model.clone();
    let mut opt = OptimizerState::new(
        config.optimizer(),
        model.encoder.set.blocks.iter().chain(&model.head.params.blocks),
    );
    let mut shuffle_rng = seed::rng(config.seed, "shuffle");
    let mut mask_rng = seed::rng(config.seed, "train-masks");
    let mut dropout_rng = seed::rng(config.seed, "dropout");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let lengths: Vec<usize> = data.train.iter().map(|e| e.real_len()).collect();

    for epoch in 1..=config.max_epochs {
        let batches = bucketed_batches(&mut order, &lengths, config.batch_size, &mut shuffle_rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for idx in &batches {
            let chunk: Vec<&EncodedExample> = idx.iter().map(|&i| &data.train[i]).collect();
            let Some(loss) = train_step(
                &mut model,
                &mut opt,
                &chunk,
                objective,
                vocab_size,
                &mut mask_rng,
                &mut dropout_rng,
            )?
            else {
                continue;
            };
            report.step_losses.push(loss);
            if !loss.is_finite() {
                report.train_loss.push(loss);
                report.epochs_run = epoch;
                report.wall_clock_secs = start.elapsed().as_secs_f64();
                return Err(TrainError::Diverged(Box::new(report)));
            }
            sum += loss;
            n += 1;
        }
        report.train_loss.push(if n > 0 { sum / n as f64 } else { f64::NAN });
        report.epochs_run = epoch;
        if epoch % config.eval_every != 0 && epoch != config.max_epochs {
            continue;
        }
        let val = validation.loss(&model, config.batch_size.max(64))?;
        report.val_loss.push((epoch, val));
        if !val.is_finite() {
            report.wall_clock_secs = start.elapsed().as_secs_f64();
            return Err(TrainError::Diverged(Box::new(report)));
        }
        let obs = stopper.observe(epoch, val);
        if obs.improved {
            best = model.clone();
        }
        if obs.stop {
            report.stopped_early = epoch < config.max_epochs;
            break;
        }
    }
    let (best_epoch, best_loss) = stopper.best().expect("initial loss observed");
    report.best_epoch = best_epoch;
    report.best_val_loss = Some(best_loss);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok((best, report))
}
