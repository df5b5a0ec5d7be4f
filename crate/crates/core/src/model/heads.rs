use serde::{Deserialize, Serialize};

use super::encoder::{encode_batch, Batch, EncoderOutput, EncoderParams, Mode, INIT_STD};
use super::params::truncated_normal;
use super::{ModelError, ParamSet};
use crate::corpus::Task;
use crate::seed;
use crate::tensor::{Tape, Tensor, Var, IGNORE_INDEX};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadKind {
    Mlm { tied: bool },
    Classifier { task: Task, classes: usize },
}

/// Task-specific parameters on top of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead<T: Scalar = f64> {
    pub kind: HeadKind,
    pub params: ParamSet<T>,
}

impl<T: Scalar> TaskHead<T> {
    /// Output bias only when tied; an `H × V` projection otherwise.
    pub fn mlm(encoder: &EncoderParams<T>, seed: u64) -> Self {
        let c = &encoder.config;
        let mut params = ParamSet::new();
        if !c.tie_embeddings {
            let mut rng = seed::rng(seed, "mlm-head");
            params.push(
                "mlm.weight",
                truncated_normal(vec![c.hidden, c.vocab_size], INIT_STD, &mut rng),
                true,
            );
        }
        params.push("mlm.bias", Tensor::zeros(vec![c.vocab_size]), false);
        Self {
            kind: HeadKind::Mlm {
                tied: c.tie_embeddings,
            },
            params,
        }
    }

    /// Fresh `H × C` classifier for `task`.
    pub fn classifier(task: Task, hidden: usize, seed: u64) -> Self {
        let classes = task.num_classes();
        let mut rng = seed::rng(seed, &format!("classifier-{task}"));
        let mut params = ParamSet::new();
        params.push(
            "classifier.weight",
            truncated_normal(vec![hidden, classes], INIT_STD, &mut rng),
            true,
        );
        params.push("classifier.bias", Tensor::zeros(vec![classes]), false);
        Self {
            kind: HeadKind::Classifier { task, classes },
            params,
        }
    }

    pub fn task(&self) -> Option<Task> {
        match self.kind {
            HeadKind::Classifier { task, .. } => Some(task),
            HeadKind::Mlm { .. } => None,
        }
    }

    /// The output projection: the token embedding table itself when tied.
    pub fn output_weight<'a>(&'a self, encoder: &'a EncoderParams<T>) -> &'a Tensor<T> {
        match self.kind {
            HeadKind::Mlm { tied: true } => encoder.token_embeddings(),
            _ => &self.params.blocks[0].tensor,
        }
    }

    /// Checks the head's shapes against the encoder and, for classifiers, the task.
    pub fn validate(&self, encoder: &EncoderParams<T>) -> Result<(), ModelError> {
        let c = &encoder.config;
        let shapes: Vec<&[usize]> = self.params.blocks.iter().map(|b| b.tensor.shape()).collect();
        let ok = match self.kind {
            HeadKind::Mlm { tied } => {
                if tied != c.tie_embeddings {
                    false
                } else if tied {
                    shapes == [&[c.vocab_size][..]]
                } else {
                    shapes == [&[c.hidden, c.vocab_size][..], &[c.vocab_size][..]]
                }
            }
            HeadKind::Classifier { task, classes } => {
                if classes != task.num_classes() {
                    return Err(ModelError::HeadMismatch(format!(
                        "{task} has {} classes but the head has {classes}",
                        task.num_classes()
                    )));
                }
                shapes == [&[c.hidden, classes][..], &[classes][..]]
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::HeadMismatch(format!(
                "head {:?} with blocks {shapes:?} does not fit the encoder",
                self.kind
            )))
        }
    }
}

/// Encoder and head trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f64> {
    pub encoder: EncoderParams<T>,
    pub head: TaskHead<T>,
}

/// Tape handles for every parameter of a [`Model`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<Var>,
    pub head: Vec<Var>,
}

impl<T: Scalar> Model<T> {
    pub fn new(encoder: EncoderParams<T>, head: TaskHead<T>) -> Result<Self, ModelError> {
        head.validate(&encoder)?;
        Ok(Self { encoder, head })
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.head.params.param_count()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundModel {
        BoundModel {
            encoder: self.encoder.set.bind(tape),
            head: self.head.params.bind(tape),
        }
    }

    pub fn encode(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        batch: &Batch,
        mode: Mode<'_>,
    ) -> Result<EncoderOutput, ModelError> {
        encode_batch(tape, &self.encoder, &bound.encoder, batch, mode)
    }

    /// Vocabulary logits for the given rows of the flattened hidden states.
    pub fn mlm_logits(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        hidden_rows: Var,
    ) -> Result<Var, ModelError> {
        let weight = match self.head.kind {
            HeadKind::Mlm { tied: true } => tape.transpose(bound.encoder[0])?,
            HeadKind::Mlm { tied: false } => bound.head[0],
            HeadKind::Classifier { .. } => {
                return Err(ModelError::HeadMismatch(
                    "masked-token prediction needs an MLM head".into(),
                ))
            }
        };
        let bias = *bound.head.last().unwrap();
        let logits = tape.matmul(hidden_rows, weight)?;
        Ok(tape.add_row(logits, bias)?)
    }

    /// Mean cross-entropy over positions whose target is not [`IGNORE_INDEX`].
    ///
    /// Only the selected rows are projected onto the vocabulary.
    pub fn mlm_loss(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        batch: &Batch,
        targets: &[usize],
        mode: Mode<'_>,
    ) -> Result<Var, ModelError> {
        let out = self.encode(tape, bound, batch, mode)?;
        let rows: Vec<usize> = (0..targets.len())
            .filter(|&i| targets[i] != IGNORE_INDEX)
            .collect();
        if rows.is_empty() {
            return Err(crate::tensor::TensorError::EmptyLossSet.into());
        }
        let picked: Vec<usize> = rows.iter().map(|&i| targets[i]).collect();
        let hidden = tape.gather_rows(out.flat, &rows)?;
        let logits = self.mlm_logits(tape, bound, hidden)?;
        Ok(tape.cross_entropy(logits, &picked, None)?)
    }

    /// Classifier logits `[B × C]` from the first position of each sequence.
    pub fn classify_logits(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundModel,
        batch: &Batch,
        mode: Mode<'_>,
    ) -> Result<Var, ModelError> {
        if self.head.task().is_none() {
            return Err(ModelError::HeadMismatch(
                "classification needs a classifier head".into(),
            ));
        }
        let out = self.encode(tape, bound, batch, mode)?;
        let cls = tape.gather_rows(out.flat, &batch.cls_rows())?;
        let logits = tape.matmul(cls, bound.head[0])?;
        Ok(tape.add_row(logits, bound.head[1])?)
    }
}

/// Per-position vocabulary logits `[B × T × V]`.
pub fn forward_mlm<T: Scalar>(
    encoder: &EncoderParams<T>,
    head: &TaskHead<T>,
    batch: &Batch,
) -> Result<Tensor<T>, ModelError> {
    if !matches!(head.kind, HeadKind::Mlm { .. }) {
        return Err(ModelError::HeadMismatch(
            "masked-token prediction needs an MLM head".into(),
        ));
    }
    head.validate(encoder)?;
    let model = Model {
        encoder: encoder.clone(),
        head: head.clone(),
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = model.encode(&mut tape, &bound, batch, Mode::Eval)?;
    let logits = model.mlm_logits(&mut tape, &bound, out.flat)?;
    let logits = tape.reshape(logits, &[batch.size, batch.len, encoder.config.vocab_size])?;
    Ok(tape.tensor(logits))
}

/// Classifier logits `[B × C]`.
pub fn forward_classify<T: Scalar>(
    encoder: &EncoderParams<T>,
    head: &TaskHead<T>,
    batch: &Batch,
) -> Result<Tensor<T>, ModelError> {
    head.validate(encoder)?;
    let model = Model {
        encoder: encoder.clone(),
        head: head.clone(),
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let logits = model.classify_logits(&mut tape, &bound, batch, Mode::Eval)?;
    Ok(tape.tensor(logits))
}
