use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
}

/// Transformer encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub activation: Activation,
    /// Share the MLM output projection with the token embeddings.
    pub tie_embeddings: bool,
}

impl EncoderConfig {
    pub fn head_size(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        if self.layers == 0 || self.hidden == 0 || self.heads == 0 || self.ff == 0 {
            problems.push("layers, hidden, heads and ff must be positive".to_string());
        } else if self.hidden % self.heads != 0 {
            problems.push(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.max_len < 2 {
            problems.push(format!("max_len {} < 2", self.max_len));
        }
        if self.vocab_size <= crate::corpus::SPECIAL_TOKENS.len() {
            problems.push(format!("vocab_size {} leaves no room for words", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Config(problems.join("; ")))
        }
    }

    /// Closed-form size of the encoder parameters (heads excluded).
    pub fn encoder_param_count(&self) -> usize {
        let (v, t, h, f, l) = (self.vocab_size, self.max_len, self.hidden, self.ff, self.layers);
        v * h + t * h + 2 * h + l * (4 * h * h + 2 * h * f + 4 * h)
    }

    /// Desk-scale configuration used by the experiments.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            ff: 256,
            max_len: 32,
            vocab_size,
            dropout: 0.1,
            activation: Activation::Gelu,
            tie_embeddings: true,
        }
    }

    /// Named presets. Full-size checkpoints are valid configurations but are
    /// far beyond what the experiments train.
    pub fn preset(name: &str, vocab_size: usize) -> Option<Self> {
        let (layers, hidden, heads) = match name {
            "toy" => return Some(Self::toy(vocab_size)),
            "tiny" => (1, 32, 2),
            "distilbert" => (6, 768, 12),
            "bert-base" | "roberta-base" => (12, 768, 12),
            "bert-large" | "roberta-large" => (24, 1024, 16),
            _ => return None,
        };
        Some(Self {
            layers,
            hidden,
            heads,
            ff: 4 * hidden,
            max_len: if hidden > 64 { 512 } else { 32 },
            vocab_size,
            dropout: 0.1,
            activation: Activation::Gelu,
            tie_embeddings: true,
        })
    }

    pub const PRESETS: [&'static str; 7] = [
        "toy",
        "tiny",
        "distilbert",
        "bert-base",
        "bert-large",
        "roberta-base",
        "roberta-large",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hidden_must_divide_by_heads() {
        let mut c = EncoderConfig::toy(100);
        c.validate().unwrap();
        assert_eq!(c.head_size(), 16);
        c.heads = 5;
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
    }

    #[test]
    fn presets_follow_published_shapes() {
        let d = EncoderConfig::preset("distilbert", 30522).unwrap();
        assert_eq!((d.layers, d.hidden, d.heads, d.head_size()), (6, 768, 12, 64));
        let b = EncoderConfig::preset("bert-large", 30522).unwrap();
        assert_eq!((b.layers, b.hidden, b.heads), (24, 1024, 16));
        for p in EncoderConfig::PRESETS {
            EncoderConfig::preset(p, 30522).unwrap().validate().unwrap();
        }
        assert!(EncoderConfig::preset("gpt", 10).is_none());
    }

    #[test]
    fn bert_base_is_about_110m_with_its_vocabulary() {
        // 12 layers of 768 with a 30,522-word vocabulary; the usual 110M
        // also counts projection biases and the pooler, which this encoder omits.
        let b = EncoderConfig::preset("bert-base", 30522).unwrap();
        let n = b.encoder_param_count() as f64;
        assert!((100e6..112e6).contains(&n), "{n}");
    }
}
