use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::encoder::{extract_sentence_embedding, Batch, EncoderParams};
use super::params::truncated_normal;
use super::{ModelError, ParamSet};
use crate::corpus::{tokenize, Corpus, EncodedExample};
use crate::seed;
use crate::tensor::{Tape, Tensor};
use crate::train::{AdamWConfig, OptimizerState};

const WINDOW: usize = 2;
const NEGATIVES: usize = 5;

/// Frozen word vectors: two independently trained sets, concatenated.
///
/// Row 0 is the unknown-word vector (the mean of all word rows).
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEmbeddings {
    words: Vec<String>,
    index: HashMap<String, usize>,
    widths: Vec<usize>,
    table: Vec<f64>,
}

impl StaticEmbeddings {
    /// Builds the table from per-set matrices, each `[words × width]`.
    pub fn from_sets(words: Vec<String>, sets: &[(usize, Vec<f64>)]) -> Self {
        let n = words.len();
        let widths: Vec<usize> = sets.iter().map(|s| s.0).collect();
        let dim: usize = widths.iter().sum();
        let mut table = vec![0.0; (n + 1) * dim];
        let mut off = 0;
        for (w, m) in sets {
            assert_eq!(m.len(), n * w, "set shape");
            for r in 0..n {
                table[(r + 1) * dim + off..(r + 1) * dim + off + w].copy_from_slice(&m[r * w..(r + 1) * w]);
            }
            off += w;
        }
        if n > 0 {
            for c in 0..dim {
                table[c] = (1..=n).map(|r| table[r * dim + c]).sum::<f64>() / n as f64;
            }
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 1)).collect();
        Self {
            words,
            index,
            widths,
            table,
        }
    }

    pub fn dim(&self) -> usize {
        self.widths.iter().sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// The word's vector, or the unknown-word vector.
    pub fn vector(&self, word: &str) -> &[f64] {
        let d = self.dim();
        let r = self.index.get(word).copied().unwrap_or(0);
        &self.table[r * d..(r + 1) * d]
    }

    /// Mean of the word vectors; the unknown-word vector for an empty text.
    pub fn document_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        if tokens.is_empty() {
            return self.vector("").to_vec();
        }
        let mut v = vec![0.0; self.dim()];
        for t in tokens {
            for (a, b) in v.iter_mut().zip(self.vector(t.as_ref())) {
                *a += b;
            }
        }
        let n = tokens.len() as f64;
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    pub fn checksum(&self) -> u64 {
        let mut p = ParamSet::<f64>::new();
        p.push("table", Tensor::new(vec![self.table.len()], self.table.clone()).unwrap(), false);
        p.checksum()
    }
}

/// Trains a count-based set (PPMI with a random projection) and a predictive
/// set (CBOW with negative sampling), each `width` wide.
pub fn train_static_embeddings(corpora: &[&Corpus], width: usize, epochs: usize, seed: u64) -> StaticEmbeddings {
    let sentences: Vec<Vec<String>> = corpora
        .iter()
        .flat_map(|c| c.documents.iter().map(|d| tokenize(&d.summary)))
        .collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &sentences {
        for w in s {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut words: Vec<&str> = counts.keys().copied().collect();
    words.sort_unstable();
    let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let ids: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().map(|w| index[w.as_str()]).collect())
        .collect();
    let freq: Vec<f64> = words.iter().map(|w| counts[w] as f64).collect();

    let ppmi = ppmi_projection(&ids, words.len(), width, seed);
    let cbow = cbow(&ids, &freq, width, epochs, seed);
    StaticEmbeddings::from_sets(
        words.iter().map(|w| w.to_string()).collect(),
        &[(width, ppmi), (width, cbow)],
    )
}

fn normalize_rows(m: &mut [f64], width: usize) {
    for row in m.chunks_mut(width) {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

fn ppmi_projection(ids: &[Vec<usize>], n: usize, width: usize, seed: u64) -> Vec<f64> {
    let mut co: HashMap<(usize, usize), f64> = HashMap::new();
    for s in ids {
        for (i, &a) in s.iter().enumerate() {
            for &b in &s[i + 1..(i + 1 + WINDOW).min(s.len())] {
                *co.entry((a, b)).or_default() += 1.0;
                *co.entry((b, a)).or_default() += 1.0;
            }
        }
    }
    let mut row_sum = vec![0.0; n];
    for (&(a, _), &c) in &co {
        row_sum[a] += c;
    }
    let total: f64 = row_sum.iter().sum();
    let mut rng = seed::rng(seed, "ppmi-projection");
    let scale = 1.0 / (width as f64).sqrt();
    let proj: Vec<f64> = (0..n * width)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect();
    let mut out = vec![0.0; n * width];
    let mut entries: Vec<_> = co.into_iter().collect();
    entries.sort_unstable_by_key(|e| e.0);
    for ((a, b), c) in entries {
        let pmi = (c * total / (row_sum[a] * row_sum[b])).ln();
        if pmi > 0.0 {
            for k in 0..width {
                out[a * width + k] += pmi * proj[b * width + k];
            }
        }
    }
    normalize_rows(&mut out, width);
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cbow(ids: &[Vec<usize>], freq: &[f64], width: usize, epochs: usize, seed: u64) -> Vec<f64> {
    let n = freq.len();
    let mut rng = seed::rng(seed, "cbow");
    let mut input: Vec<f64> = (0..n * width)
        .map(|_| (rng.random::<f64>() - 0.5) / width as f64)
        .collect();
    let mut output = vec![0.0; n * width];
    if n == 0 {
        return input;
    }
    let noise = WeightedIndex::new(freq.iter().map(|f| f.powf(0.75))).expect("positive counts");
    let lr = 0.05;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let mut h = vec![0.0; width];
    let mut grad = vec![0.0; width];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &si in &order {
            let s = &ids[si];
            for (i, &center) in s.iter().enumerate() {
                let ctx: Vec<usize> = (i.saturating_sub(WINDOW)..(i + WINDOW + 1).min(s.len()))
                    .filter(|&j| j != i)
                    .map(|j| s[j])
                    .collect();
                if ctx.is_empty() {
                    continue;
                }
                h.iter_mut().for_each(|x| *x = 0.0);
                for &c in &ctx {
                    for k in 0..width {
                        h[k] += input[c * width + k];
                    }
                }
                h.iter_mut().for_each(|x| *x /= ctx.len() as f64);
                grad.iter_mut().for_each(|x| *x = 0.0);
                for t in 0..=NEGATIVES {
                    let (target, label) = if t == 0 {
                        (center, 1.0)
                    } else {
                        let w = noise.sample(&mut rng);
                        if w == center {
                            continue;
                        }
                        (w, 0.0)
                    };
                    let o = &mut output[target * width..(target + 1) * width];
                    let score: f64 = o.iter().zip(&h).map(|(a, b)| a * b).sum();
                    let g = lr * (label - sigmoid(score));
                    for k in 0..width {
                        grad[k] += g * o[k];
                        o[k] += g * h[k];
                    }
                }
                for &c in &ctx {
                    for k in 0..width {
                        input[c * width + k] += grad[k];
                    }
                }
            }
        }
    }
    normalize_rows(&mut input, width);
    input
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            lr: 1e-2,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Softmax regression over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub params: ParamSet<f64>,
}

impl LinearProbe {
    /// `features` is `[N × D]` row-major.
    pub fn fit(
        features: &[f64],
        dim: usize,
        labels: &[usize],
        classes: usize,
        config: &ProbeConfig,
    ) -> Result<Self, ModelError> {
        let n = labels.len();
        if n == 0 || features.len() != n * dim {
            return Err(ModelError::EmptyBatch);
        }
        let mut mean = vec![0.0; dim];
        for row in features.chunks(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n as f64;
            }
        }
        let mut scale = vec![0.0; dim];
        for row in features.chunks(dim) {
            for ((s, x), m) in scale.iter_mut().zip(row).zip(&mean) {
                *s += (x - m).powi(2) / n as f64;
            }
        }
        scale.iter_mut().for_each(|s| *s = 1.0 / s.sqrt().max(1e-8));
        let mut rng = seed::rng(config.seed, "probe");
        let mut params = ParamSet::new();
        params.push("probe.weight", truncated_normal(vec![dim, classes], 0.02, &mut rng), true);
        params.push("probe.bias", Tensor::zeros(vec![classes]), false);
        let mut probe = Self { mean, scale, params };
        let x = probe.standardize(features);
        let adam = AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            clip_norm: None,
            ..AdamWConfig::default()
        };
        let mut opt = OptimizerState::new(adam, &probe.params.blocks);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size.max(1)) {
                let rows: Vec<f64> = chunk.iter().flat_map(|&i| x[i * dim..(i + 1) * dim].iter().copied()).collect();
                let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let mut tape = Tape::new();
                let vars = probe.params.bind(&mut tape);
                let input = tape.constant(vec![chunk.len(), dim], rows)?;
                let logits = tape.matmul(input, vars[0])?;
                let logits = tape.add_row(logits, vars[1])?;
                let loss = tape.cross_entropy(logits, &y, None)?;
                let mut grads = tape.backward(loss)?;
                let mut g = probe.params.collect_grads(&vars, &mut grads);
                let mut blocks: Vec<_> = probe.params.blocks.iter_mut().collect();
                opt.step(&mut blocks, &mut g)
                    .map_err(|e| ModelError::Optimizer(e.to_string()))?;
            }
        }
        Ok(probe)
    }

    fn standardize(&self, features: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        features
            .chunks(d)
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((x, m), s)| (x - m) * s)
            })
            .collect()
    }

    /// Logits `[N × C]` row-major.
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let x = self.standardize(features);
        let w = &self.params.blocks[0].tensor;
        let (d, c) = (w.shape()[0], w.shape()[1]);
        let b = self.params.blocks[1].tensor.data();
        let mut out = Vec::with_capacity(x.len() / d * c);
        for row in x.chunks(d) {
            for j in 0..c {
                out.push(b[j] + (0..d).map(|k| row[k] * w.data()[k * c + j]).sum::<f64>());
            }
        }
        out
    }

    pub fn classes(&self) -> usize {
        self.params.blocks[1].tensor.numel()
    }

    pub fn predict(&self, features: &[f64]) -> Vec<usize> {
        argmax_rows(&self.logits(features), self.classes())
    }
}

pub(crate) fn argmax_rows(logits: &[f64], c: usize) -> Vec<usize> {
    logits
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Mean-pooled static word vectors feeding a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingBaseline {
    pub embeddings: StaticEmbeddings,
    pub probe: LinearProbe,
}

impl PoolingBaseline {
    pub fn fit<S: AsRef<str>>(
        embeddings: StaticEmbeddings,
        docs: &[Vec<S>],
        labels: &[usize],
        classes: usize,
        config: &ProbeConfig,
    ) -> Result<Self, ModelError> {
        let features: Vec<f64> = docs.iter().flat_map(|d| embeddings.document_vector(d)).collect();
        let probe = LinearProbe::fit(&features, embeddings.dim(), labels, classes, config)?;
        Ok(Self { embeddings, probe })
    }

    /// Class logits for one tokenized document.
    pub fn classify<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        self.probe.logits(&self.embeddings.document_vector(tokens))
    }

    pub fn predict<S: AsRef<str>>(&self, docs: &[Vec<S>]) -> Vec<usize> {
        let features: Vec<f64> = docs.iter().flat_map(|d| self.embeddings.document_vector(d)).collect();
        self.probe.predict(&features)
    }
}

/// Frozen encoder mean-pooled features feeding a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSentenceBaseline {
    pub encoder: EncoderParams<f64>,
    pub probe: LinearProbe,
}

impl FrozenSentenceBaseline {
    pub fn features(encoder: &EncoderParams<f64>, examples: &[EncodedExample]) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(examples.len() * encoder.config.hidden);
        for chunk in examples.chunks(64) {
            let batch = Batch::from_examples(chunk)?;
            out.extend_from_slice(extract_sentence_embedding(encoder, &batch)?.data());
        }
        Ok(out)
    }

    pub fn fit(
        encoder: EncoderParams<f64>,
        examples: &[EncodedExample],
        labels: &[usize],
        classes: usize,
        config: &ProbeConfig,
    ) -> Result<Self, ModelError> {
        let features = Self::features(&encoder, examples)?;
        let probe = LinearProbe::fit(&features, encoder.config.hidden, labels, classes, config)?;
        Ok(Self { encoder, probe })
    }

    pub fn predict(&self, examples: &[EncodedExample]) -> Result<Vec<usize>, ModelError> {
        Ok(self.probe.predict(&Self::features(&self.encoder, examples)?))
    }
}
