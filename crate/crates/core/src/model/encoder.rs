use rand::RngCore;

use super::{EncoderConfig, ModelError, ParamSet};
use crate::corpus::EncodedExample;
use crate::model::params::truncated_normal;
use crate::seed;
use crate::tensor::{Tape, Tensor, Var};
use crate::Scalar;

pub(crate) const INIT_STD: f64 = 0.02;
pub(crate) const LN_EPS: f64 = 1e-5;
const MASK_VALUE: f64 = -1e9;

const TOKEN: usize = 0;
const POSITION: usize = 1;
const EMB_NORM: usize = 2;
const PER_LAYER: usize = 10;

/// Encoder weights plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T: Scalar = f64> {
    pub config: EncoderConfig,
    pub set: ParamSet<T>,
}

struct LayerIdx {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
    attn_norm: usize,
    ff_in: usize,
    ff_out: usize,
    ff_norm: usize,
}

fn layer_idx(l: usize) -> LayerIdx {
    let b = 4 + PER_LAYER * l;
    LayerIdx {
        q: b,
        k: b + 1,
        v: b + 2,
        o: b + 3,
        attn_norm: b + 4,
        ff_in: b + 6,
        ff_out: b + 7,
        ff_norm: b + 8,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Init {
    Weight,
    Gain,
    Bias,
}

/// Block names, shapes and initializers in storage order.
fn block_specs(config: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (h, f) = (config.hidden, config.ff);
    let mut specs = vec![
        ("embeddings.token".to_string(), vec![config.vocab_size, h], Init::Weight),
        ("embeddings.position".to_string(), vec![config.max_len, h], Init::Weight),
        ("embeddings.norm.gain".to_string(), vec![h], Init::Gain),
        ("embeddings.norm.bias".to_string(), vec![h], Init::Bias),
    ];
    for l in 0..config.layers {
        for (part, shape, init) in [
            ("attn.query", vec![h, h], Init::Weight),
            ("attn.key", vec![h, h], Init::Weight),
            ("attn.value", vec![h, h], Init::Weight),
            ("attn.output", vec![h, h], Init::Weight),
            ("attn_norm.gain", vec![h], Init::Gain),
            ("attn_norm.bias", vec![h], Init::Bias),
            ("ff.in", vec![h, f], Init::Weight),
            ("ff.out", vec![f, h], Init::Weight),
            ("ff_norm.gain", vec![h], Init::Gain),
            ("ff_norm.bias", vec![h], Init::Bias),
        ] {
            specs.push((format!("layer{l}.{part}"), shape, init));
        }
    }
    specs
}

/// Truncated-normal weights, zero biases and unit layer-norm gains.
pub fn init_params<T: Scalar>(config: &EncoderConfig, seed: u64) -> Result<EncoderParams<T>, ModelError> {
    config.validate()?;
    let mut rng = seed::rng(seed, "encoder-init");
    let mut set = ParamSet::new();
    for (name, shape, init) in block_specs(config) {
        let tensor = match init {
            Init::Weight => truncated_normal(shape, INIT_STD, &mut rng),
            Init::Gain => Tensor::filled(shape, T::one()),
            Init::Bias => Tensor::zeros(shape),
        };
        set.push(name, tensor, init == Init::Weight);
    }
    Ok(EncoderParams {
        config: config.clone(),
        set,
    })
}

impl<T: Scalar> EncoderParams<T> {
    pub fn param_count(&self) -> usize {
        self.set.param_count()
    }

    /// Same parameters at another precision.
    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            config: self.config.clone(),
            set: self.set.cast(),
        }
    }

    pub fn token_embeddings(&self) -> &Tensor<T> {
        &self.set.blocks[TOKEN].tensor
    }

    /// Checks block names and shapes against the configuration.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        let specs = block_specs(&self.config);
        if specs.len() != self.set.blocks.len() {
            return Err(ModelError::Architecture(format!(
                "expected {} parameter blocks, found {}",
                specs.len(),
                self.set.blocks.len()
            )));
        }
        for ((name, shape, _), got) in specs.iter().zip(&self.set.blocks) {
            if *name != got.name || shape.as_slice() != got.tensor.shape() {
                return Err(ModelError::Architecture(format!(
                    "block {} {:?} does not match expected {} {:?}",
                    got.name,
                    got.tensor.shape(),
                    name,
                    shape
                )));
            }
        }
        Ok(())
    }
}

/// A padded batch trimmed to its longest real sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub attention: Vec<bool>,
    pub size: usize,
    pub len: usize,
}

impl Batch {
    pub fn new(examples: &[&EncodedExample]) -> Result<Self, ModelError> {
        let len = examples.iter().map(|e| e.real_len()).max().unwrap_or(0);
        Self::with_len(examples, len)
    }

    /// Pads or truncates each example to exactly `len` positions.
    pub fn with_len(examples: &[&EncodedExample], len: usize) -> Result<Self, ModelError> {
        if examples.is_empty() || len == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let mut ids = Vec::with_capacity(examples.len() * len);
        let mut attention = Vec::with_capacity(examples.len() * len);
        for e in examples {
            if e.real_len() > len {
                return Err(ModelError::SequenceTooLong {
                    len: e.real_len(),
                    max: len,
                });
            }
            for t in 0..len {
                ids.push(e.ids.get(t).copied().unwrap_or(crate::corpus::PAD));
                attention.push(e.attention.get(t).copied().unwrap_or(false));
            }
        }
        Ok(Self {
            ids,
            attention,
            size: examples.len(),
            len,
        })
    }

    pub fn from_examples(examples: &[EncodedExample]) -> Result<Self, ModelError> {
        let refs: Vec<&EncodedExample> = examples.iter().collect();
        Self::new(&refs)
    }

    /// Flat row index of the first position of each sequence.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.size).map(|b| b * self.len).collect()
    }
}

/// Dropout is active only in training mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    fn dropout<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var, p: f64) -> Var {
        match self {
            Mode::Eval => x,
            Mode::Train(rng) => tape.dropout(x, p, *rng),
        }
    }
}

/// Handles to the tape nodes produced by one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[B × T × H]`
    pub hidden: Var,
    /// `[(B·T) × H]` view of the same values.
    pub flat: Var,
    /// Per layer, `[B × A × T × T]` attention probabilities.
    pub attention: Vec<Var>,
}

/// Post-norm transformer stack with learned positions and a padding mask.
pub fn encode_batch<T: Scalar>(
    tape: &mut Tape<T>,
    params: &EncoderParams<T>,
    vars: &[Var],
    batch: &Batch,
    mut mode: Mode<'_>,
) -> Result<EncoderOutput, ModelError> {
    let c = &params.config;
    let (b, t, h, a) = (batch.size, batch.len, c.hidden, c.heads);
    let d = c.head_size();
    if t > c.max_len {
        return Err(ModelError::SequenceTooLong { len: t, max: c.max_len });
    }
    if let Some(&bad) = batch.ids.iter().find(|&&id| id >= c.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id: bad,
            vocab: c.vocab_size,
        });
    }
    let eps = T::lit(LN_EPS);

    let tok = tape.embedding_lookup(vars[TOKEN], &batch.ids)?;
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
    let pos = tape.embedding_lookup(vars[POSITION], &positions)?;
    let x = tape.add(tok, pos)?;
    let x = tape.layer_norm(x, vars[EMB_NORM], vars[EMB_NORM + 1], eps)?;
    let mut x = mode.dropout(tape, x, c.dropout);

    let mut mask = Vec::with_capacity(b * a * t * t);
    for bi in 0..b {
        let keys = &batch.attention[bi * t..(bi + 1) * t];
        for _ in 0..a * t {
            mask.extend(
                keys.iter()
                    .map(|&on| if on { T::zero() } else { T::lit(MASK_VALUE) }),
            );
        }
    }
    let mask = tape.constant(vec![b, a, t, t], mask)?;
    let scale = T::lit(1.0 / (d as f64).sqrt());

    let mut attention = Vec::with_capacity(c.layers);
    for l in 0..c.layers {
        let li = layer_idx(l);
        let heads = |tape: &mut Tape<T>, w: usize, axes: &[usize]| -> Result<Var, ModelError> {
            let p = tape.matmul(x, vars[w])?;
            let p = tape.reshape(p, &[b, t, a, d])?;
            Ok(tape.permute(p, axes)?)
        };
        let q = heads(tape, li.q, &[0, 2, 1, 3])?;
        let k = heads(tape, li.k, &[0, 2, 3, 1])?;
        let v = heads(tape, li.v, &[0, 2, 1, 3])?;
        let scores = tape.matmul(q, k)?;
        let scores = tape.scale(scores, scale);
        let scores = tape.add(scores, mask)?;
        let probs = tape.softmax(scores);
        attention.push(probs);
        let ctx = tape.matmul(probs, v)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b * t, h])?;
        let out = tape.matmul(ctx, vars[li.o])?;
        let out = mode.dropout(tape, out, c.dropout);
        let res = tape.add(x, out)?;
        x = tape.layer_norm(res, vars[li.attn_norm], vars[li.attn_norm + 1], eps)?;

        let f = tape.matmul(x, vars[li.ff_in])?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, vars[li.ff_out])?;
        let f = mode.dropout(tape, f, c.dropout);
        let res = tape.add(x, f)?;
        x = tape.layer_norm(res, vars[li.ff_norm], vars[li.ff_norm + 1], eps)?;
    }
    let hidden = tape.reshape(x, &[b, t, h])?;
    Ok(EncoderOutput {
        hidden,
        flat: x,
        attention,
    })
}

/// Final hidden states `[B × T × H]` in evaluation mode.
pub fn forward_encoder<T: Scalar>(params: &EncoderParams<T>, batch: &Batch) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let vars = params.set.bind(&mut tape);
    let out = encode_batch(&mut tape, params, &vars, batch, Mode::Eval)?;
    Ok(tape.tensor(out.hidden))
}

/// Mask-aware mean of the final hidden states, `[B × H]`.
pub fn extract_sentence_embedding<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &Batch,
) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let vars = params.set.bind(&mut tape);
    let out = encode_batch(&mut tape, params, &vars, batch, Mode::Eval)?;
    let (b, t) = (batch.size, batch.len);
    let mut pool = vec![T::zero(); b * b * t];
    for bi in 0..b {
        let row = &batch.attention[bi * t..(bi + 1) * t];
        let n = row.iter().filter(|&&on| on).count().max(1);
        let w = T::one() / T::from_usize(n).unwrap();
        for (ti, &on) in row.iter().enumerate() {
            if on {
                pool[bi * b * t + bi * t + ti] = w;
            }
        }
    }
    let pool = tape.constant(vec![b, b * t], pool)?;
    let pooled = tape.matmul(pool, out.flat)?;
    Ok(tape.tensor(pooled))
}
