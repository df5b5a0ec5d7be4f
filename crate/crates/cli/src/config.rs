use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use reqadapt::corpus::{CorpusSpec, Fractions, Task};
use reqadapt::eval::Metric;
use reqadapt::model::{Activation, EncoderConfig, ProbeConfig};
use reqadapt::train::{MaskingPolicy, StageConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// A named preset with optional per-field overrides. The vocabulary size
/// always comes from the generated vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub ff: Option<usize>,
    pub max_len: Option<usize>,
    pub dropout: Option<f64>,
    pub activation: Option<Activation>,
    pub tie_embeddings: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: "toy".into(),
            layers: None,
            hidden: None,
            heads: None,
            ff: None,
            max_len: None,
            dropout: None,
            activation: None,
            tie_embeddings: None,
        }
    }
}

impl ModelSection {
    pub fn encoder_config(&self, vocab_size: usize) -> Result<EncoderConfig, String> {
        let mut c = EncoderConfig::preset(&self.preset, vocab_size)
            .ok_or_else(|| format!("unknown model preset {:?}", self.preset))?;
        c.layers = self.layers.unwrap_or(c.layers);
        c.hidden = self.hidden.unwrap_or(c.hidden);
        c.heads = self.heads.unwrap_or(c.heads);
        c.ff = self.ff.unwrap_or(c.ff);
        c.max_len = self.max_len.unwrap_or(c.max_len);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.activation = self.activation.unwrap_or(c.activation);
        c.tie_embeddings = self.tie_embeddings.unwrap_or(c.tie_embeddings);
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub majority: bool,
    pub pooling: bool,
    pub frozen_sentence: bool,
    /// Width of each of the two static embedding sets.
    pub embedding_width: usize,
    pub embedding_epochs: usize,
    pub probe: ProbeConfig,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            majority: true,
            pooling: true,
            frozen_sentence: true,
            embedding_width: 50,
            embedding_epochs: 5,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Run the 5x2cv F-test between the vanilla and adapted encoders.
    pub significance: bool,
    pub alpha: f64,
    pub metric: Metric,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            significance: true,
            alpha: 0.05,
            metric: Metric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lrs: Vec<f64>,
    pub task: Task,
    /// Final smoothed loss may exceed the smoothed minimum by this fraction
    /// and still count as converged.
    pub tolerance: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lrs: vec![1e-5, 2e-5, 3e-5, 5e-5, 1e-4],
            task: Task::Type,
            tolerance: 0.05,
        }
    }
}

/// Everything a run needs. Sub-component seeds are derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub tasks: Vec<Task>,
    pub metrics: Vec<Metric>,
    /// Three-stage runs when true; two-stage (no adaptation) otherwise.
    pub adaptation: bool,
    /// Adapt on every in-domain text, test split included.
    pub paper_faithful_adaptation_pool: bool,
    pub precision: Precision,
    pub min_frequency: usize,
    /// Share of the generic and adaptation corpora held out for MLM validation.
    pub mlm_holdout: f64,
    pub corpus: CorpusSpec,
    pub split: Fractions,
    pub model: ModelSection,
    pub masking: MaskingPolicy,
    pub pretrain: StageConfig,
    pub adapt: StageConfig,
    pub finetune: StageConfig,
    pub baselines: BaselineSection,
    pub compare: CompareSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("runs/toy"),
            tasks: vec![Task::Priority, Task::Severity, Task::Type],
            metrics: vec![Metric::Accuracy, Metric::MacroF1, Metric::WeightedF1],
            adaptation: true,
            paper_faithful_adaptation_pool: false,
            precision: Precision::F32,
            min_frequency: 1,
            mlm_holdout: 0.1,
            corpus: CorpusSpec {
                n_labeled: 2000,
                n_unlabeled: 2500,
                n_generic: 3000,
                ..CorpusSpec::default()
            },
            split: Fractions::default(),
            model: ModelSection::default(),
            masking: MaskingPolicy::default(),
            pretrain: StageConfig {
                lr: 1e-3,
                max_epochs: 8,
                batch_size: 32,
                ..StageConfig::default()
            },
            adapt: StageConfig {
                lr: 5e-4,
                max_epochs: 8,
                batch_size: 32,
                patience: Some(5),
                ..StageConfig::default()
            },
            finetune: StageConfig {
                lr: 1e-4,
                max_epochs: 5,
                batch_size: 16,
                ..StageConfig::default()
            },
            baselines: BaselineSection::default(),
            compare: CompareSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Keys absent from `text` keep their values from `Default`, including
    /// keys inside partially given sections.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut merged: toml::Table = toml::from_str(&Self::default().to_toml()).expect("defaults parse");
        merge(&mut merged, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingArtifact(path.to_path_buf()))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization, first 16 digits. The
    /// output directory is left out so that reruns elsewhere compare equal.
    pub fn hash(&self) -> String {
        let canonical = Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Collects every problem before failing.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        let mut note = |r: Result<(), String>| {
            if let Err(e) = r {
                problems.push(e);
            }
        };
        note(self.corpus.validate().map_err(|e| e.to_string()));
        note(self.split.validate().map_err(|e| e.to_string()));
        note(self.masking.validate().map_err(|e| e.to_string()));
        for (name, stage) in [
            ("pretrain", &self.pretrain),
            ("adapt", &self.adapt),
            ("finetune", &self.finetune),
        ] {
            note(stage.validate().map_err(|e| format!("[{name}] {e}")));
        }
        note(
            self.model
                .encoder_config(1000)
                .and_then(|c| c.validate().map_err(|e| e.to_string())),
        );
        if self.adaptation && self.finetune.lr >= self.adapt.lr {
            problems.push(format!(
                "fine-tuning learning rate {} must be below the adaptation rate {}",
                self.finetune.lr, self.adapt.lr
            ));
        }
        if self.tasks.is_empty() {
            problems.push("tasks must not be empty".into());
        }
        if self.tasks.iter().collect::<BTreeSet<_>>().len() != self.tasks.len() {
            problems.push("tasks must not repeat".into());
        }
        if self.metrics.is_empty() {
            problems.push("metrics must not be empty".into());
        }
        if !(self.mlm_holdout > 0.0 && self.mlm_holdout < 1.0) {
            problems.push(format!("mlm_holdout {} must lie in (0, 1)", self.mlm_holdout));
        }
        if self.baselines.embedding_width == 0 {
            problems.push("baselines.embedding_width must be positive".into());
        }
        if !(self.compare.alpha > 0.0 && self.compare.alpha < 1.0) {
            problems.push(format!("compare.alpha {} must lie in (0, 1)", self.compare.alpha));
        }
        if self.sweep.lrs.is_empty() || self.sweep.lrs.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            problems.push("sweep.lrs must be a non-empty list of positive rates".into());
        }
        if !(self.sweep.tolerance >= 0.0) {
            problems.push("sweep.tolerance must be non-negative".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = ExperimentConfig::from_toml("sed = 3").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        let err = ExperimentConfig::from_toml("[pretrain]\nlearning_rate = 1e-3").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn problems_are_reported_together() {
        let text = "tasks = []\n[finetune]\nlr = 1e-3\n[model]\npreset = \"huge\"\n";
        let msg = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        for part in ["tasks must not be empty", "below the adaptation rate", "unknown model preset"] {
            assert!(msg.contains(part), "{msg}");
        }
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let c = ExperimentConfig::from_toml("seed = 9\ntasks = [\"type\"]\n[model]\nlayers = 1\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.tasks, vec![Task::Type]);
        assert_eq!(c.model.encoder_config(100).unwrap().layers, 1);
        assert_eq!(c.pretrain, ExperimentConfig::default().pretrain);
        let c = ExperimentConfig::from_toml("[finetune]\nmax_epochs = 1\n").unwrap();
        assert_eq!(c.finetune.max_epochs, 1);
        assert_eq!(c.finetune.lr, ExperimentConfig::default().finetune.lr);
        assert_ne!(c.hash(), ExperimentConfig::default().hash());
        let moved = ExperimentConfig {
            out_dir: "elsewhere".into(),
            ..c.clone()
        };
        assert_eq!(moved.hash(), c.hash());
    }
}
