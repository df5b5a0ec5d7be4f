use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::Scalar;

/// A named parameter tensor. `decay` marks blocks that take weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<T: Scalar = f64> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub decay: bool,
}

/// Ordered collection of parameter blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T: Scalar = f64> {
    pub blocks: Vec<ParamBlock<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { blocks: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>, decay: bool) -> usize {
        self.blocks.push(ParamBlock {
            name: name.into(),
            tensor: tensor.tracked(),
            decay,
        });
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &b.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.tensor.numel()).sum()
    }

    /// Records every block on `tape`, in order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.blocks.iter().map(|b| tape.leaf(&b.tensor)).collect()
    }

    /// Gradients for the bound vars, zero-filled where nothing flowed.
    pub fn collect_grads(&self, vars: &[Var], grads: &mut Gradients<T>) -> Vec<Vec<T>> {
        self.blocks
            .iter()
            .zip(vars)
            .map(|(b, &v)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| vec![T::zero(); b.tensor.numel()])
            })
            .collect()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for b in &mut self.blocks {
            b.tensor.set_track_grad(trainable);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.tensor.all_finite())
    }

    /// Order-sensitive hash of names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for b in &self.blocks {
            for c in b.name.bytes() {
                eat(c as u64);
            }
            for &d in b.tensor.shape() {
                eat(d as u64);
            }
            for &x in b.tensor.data() {
                eat(x.as_f64().to_bits());
            }
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    let mut t = b.tensor.map(|x| U::lit(x.as_f64()));
                    t.set_track_grad(b.tensor.track_grad());
                    ParamBlock {
                        name: b.name.clone(),
                        tensor: t,
                        decay: b.decay,
                    }
                })
                .collect(),
        }
    }
}

/// Normal(0, std) truncated at two standard deviations.
pub fn truncated_normal<T: Scalar, R: Rng + ?Sized>(
    shape: Vec<usize>,
    std: f64,
    rng: &mut R,
) -> Tensor<T> {
    let n = crate::tensor::numel(&shape);
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::lit(z * std);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}
