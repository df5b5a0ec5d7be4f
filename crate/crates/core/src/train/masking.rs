use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::{MASK, SPECIAL_TOKENS};
use crate::tensor::IGNORE_INDEX;

/// Token corruption for masked-language-model training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskingPolicy {
    pub mask_prob: f64,
    pub mask_token: f64,
    pub random_token: f64,
    pub keep: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            mask_token: 0.8,
            random_token: 0.1,
            keep: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

/// Corrupted ids plus targets holding the original id at selected positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub ids: Vec<usize>,
    pub targets: Vec<usize>,
    pub actions: Vec<Option<MaskAction>>,
}

impl MaskedBatch {
    pub fn selected(&self) -> usize {
        self.actions.iter().filter(|a| a.is_some()).count()
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<(), TrainError> {
        let split = self.mask_token + self.random_token + self.keep;
        let parts = [self.mask_prob, self.mask_token, self.random_token, self.keep];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (split - 1.0).abs() > 1e-9 {
            return Err(TrainError::Config(format!(
                "masking probabilities must lie in [0, 1] and the replacement split must sum to 1 (got {split})"
            )));
        }
        Ok(())
    }

    /// Special tokens and padding are never selected.
    pub fn is_eligible(id: usize, attended: bool) -> bool {
        attended && id >= SPECIAL_TOKENS.len()
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        ids: &[usize],
        attention: &[bool],
        vocab_size: usize,
        rng: &mut R,
    ) -> MaskedBatch {
        let mut out = MaskedBatch {
            ids: ids.to_vec(),
            targets: vec![IGNORE_INDEX; ids.len()],
            actions: vec![None; ids.len()],
        };
        let first_word = SPECIAL_TOKENS.len();
        for (i, (&id, &att)) in ids.iter().zip(attention).enumerate() {
            if !Self::is_eligible(id, att) || !rng.random_bool(self.mask_prob) {
                continue;
            }
            out.targets[i] = id;
            let u: f64 = rng.random();
            let action = if u < self.mask_token {
                out.ids[i] = MASK;
                MaskAction::Mask
            } else if u < self.mask_token + self.random_token && vocab_size > first_word {
                out.ids[i] = rng.random_range(first_word..vocab_size);
                MaskAction::Random
            } else {
                MaskAction::Keep
            };
            out.actions[i] = Some(action);
        }
        out
    }
}
