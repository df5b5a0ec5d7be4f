use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use reqadapt::corpus::{
    generate_generic_corpus, generate_srs_corpus, read_corpus, split_indices, write_corpus, Corpus, LabelSchema, Task,
    Vocabulary,
};
use reqadapt::seed;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Config hash and master seed carried by every structured output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        }
    }
}

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn labeled(&self) -> PathBuf {
        self.root.join("data/labeled.jsonl")
    }

    pub fn unlabeled(&self) -> PathBuf {
        self.root.join("data/unlabeled.jsonl")
    }

    pub fn generic(&self) -> PathBuf {
        self.root.join("data/generic.jsonl")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("data/vocab.txt")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("data/splits.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("data/manifest.json")
    }

    pub fn pretrained(&self) -> PathBuf {
        self.root.join("checkpoints/pretrained.ckpt")
    }

    pub fn adapted(&self) -> PathBuf {
        self.root.join("checkpoints/adapted.ckpt")
    }

    pub fn finetuned(&self, variant: &str, task: Task) -> PathBuf {
        self.root
            .join(format!("checkpoints/finetuned-{variant}-{}.ckpt", task.name().to_lowercase()))
    }

    pub fn predictions(&self, variant: &str, task: Task) -> PathBuf {
        self.root
            .join(format!("predictions/{variant}-{}.jsonl", task.name().to_lowercase()))
    }

    pub fn train_report(&self, name: &str) -> PathBuf {
        self.root.join(format!("reports/train-{name}.json"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.txt")
    }

    pub fn run_record(&self) -> PathBuf {
        self.root.join("run_record.json")
    }

    pub fn sweep(&self, file: &str) -> PathBuf {
        self.root.join("sweep").join(file)
    }
}

pub fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.to_path_buf()))
    }
}

/// Creates the parent directory and writes `bytes`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Indices into the labeled corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub stamp: Stamp,
    pub stratified_by: Task,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// The three corpora, their vocabulary and the labeled split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub labeled: Corpus,
    pub unlabeled: Corpus,
    pub generic: Corpus,
    pub vocab: Vocabulary,
    pub splits: Splits,
}

/// Task used to stratify the single shared train/val/test split.
pub const SPLIT_TASK: Task = Task::Type;

impl Dataset {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let mut spec = cfg.corpus.clone();
        spec.seed = seed::derive(cfg.seed, "corpus");
        let srs = generate_srs_corpus(&spec, &LabelSchema::DOORS)?;
        let generic = generate_generic_corpus(&spec)?;
        let (labeled, unlabeled) = (srs.labeled(), srs.unlabeled());
        let vocab = Vocabulary::build(&[&generic, &labeled, &unlabeled], cfg.min_frequency);
        let strata: Vec<Option<usize>> = labeled.documents.iter().map(|d| d.label_index(SPLIT_TASK)).collect();
        let [train, val, test] = split_indices(&strata, cfg.split, seed::derive(cfg.seed, "split"))?;
        Ok(Self {
            labeled,
            unlabeled,
            generic,
            vocab,
            splits: Splits {
                stamp: Stamp::of(cfg),
                stratified_by: SPLIT_TASK,
                train,
                val,
                test,
            },
        })
    }

    pub fn save(&self, layout: &Layout) -> Result<(), CliError> {
        fs::create_dir_all(layout.root.join("data"))?;
        write_corpus(&layout.labeled(), &self.labeled)?;
        write_corpus(&layout.unlabeled(), &self.unlabeled)?;
        write_corpus(&layout.generic(), &self.generic)?;
        self.vocab.save(&layout.vocab())?;
        write_json(&layout.splits(), &self.splits)?;
        // Line-oriented files cannot carry the stamp themselves.
        let manifest = serde_json::json!({
            "config_hash": self.splits.stamp.config_hash,
            "seed": self.splits.stamp.seed,
            "files": ["labeled.jsonl", "unlabeled.jsonl", "generic.jsonl", "vocab.txt", "splits.json"],
            "documents": {
                "labeled": self.labeled.len(),
                "unlabeled": self.unlabeled.len(),
                "generic": self.generic.len(),
            },
            "vocab_size": self.vocab.len(),
        });
        write_json(&layout.manifest(), &manifest)
    }

    pub fn load(layout: &Layout) -> Result<Self, CliError> {
        for p in [layout.labeled(), layout.unlabeled(), layout.generic(), layout.vocab(), layout.splits()] {
            require(&p)?;
        }
        let splits: Splits = serde_json::from_str(&fs::read_to_string(layout.splits())?)?;
        Ok(Self {
            labeled: read_corpus(&layout.labeled())?,
            unlabeled: read_corpus(&layout.unlabeled())?,
            generic: read_corpus(&layout.generic())?,
            vocab: Vocabulary::load(&layout.vocab())?,
            splits,
        })
    }

    pub fn labeled_subset(&self, idx: &[usize]) -> Corpus {
        self.labeled.subset(idx)
    }

    /// In-domain texts for stage 2: unlabeled plus train and validation
    /// texts, or every text when `everything` is set.
    pub fn adaptation_pool(&self, everything: bool) -> Corpus {
        let mut docs = self.unlabeled.documents.clone();
        if everything {
            docs.extend(self.labeled.documents.iter().cloned());
        } else {
            let mut idx: Vec<usize> = self.splits.train.iter().chain(&self.splits.val).copied().collect();
            idx.sort_unstable();
            docs.extend(idx.iter().map(|&i| self.labeled.documents[i].clone()));
        }
        Corpus::new(docs)
    }
}

/// Seeded holdout: `(train, val)` with `fraction` of the items in `val`.
pub fn holdout<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut seed::rng(seed, "mlm-holdout"));
    let n_val = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len().saturating_sub(1).max(1));
    let val = order[..n_val].iter().map(|&i| items[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| items[i].clone()).collect();
    (train, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.corpus.n_labeled = 200;
        c.corpus.n_unlabeled = 50;
        c.corpus.n_generic = 60;
        c
    }

    #[test]
    fn generate_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let d = Dataset::generate(&small()).unwrap();
        d.save(&layout).unwrap();
        let back = Dataset::load(&layout).unwrap();
        assert_eq!(back.labeled, d.labeled);
        assert_eq!(back.unlabeled, d.unlabeled);
        assert_eq!(back.vocab, d.vocab);
        assert_eq!(back.splits, d.splits);
        let n = d.splits.train.len() + d.splits.val.len() + d.splits.test.len();
        assert_eq!(n, 200);
    }

    #[test]
    fn missing_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::load(&Layout::new(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("labeled.jsonl"), "{err}");
    }

    #[test]
    fn adaptation_pool_excludes_test_texts_by_default() {
        let d = Dataset::generate(&small()).unwrap();
        let pool = d.adaptation_pool(false);
        let test_ids: Vec<&str> = d.splits.test.iter().map(|&i| d.labeled.documents[i].id.as_str()).collect();
        assert!(pool.documents.iter().all(|doc| !test_ids.contains(&doc.id.as_str())));
        assert_eq!(pool.len(), 50 + 200 - test_ids.len());
        assert_eq!(d.adaptation_pool(true).len(), 250);
    }

    #[test]
    fn holdout_is_seeded_and_disjoint() {
        let items: Vec<usize> = (0..50).collect();
        let (a, b) = holdout(&items, 0.1, 3);
        assert_eq!(b.len(), 5);
        assert_eq!(holdout(&items, 0.1, 3), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }
}
