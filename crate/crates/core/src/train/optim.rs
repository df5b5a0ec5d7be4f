use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ParamBlock;
use crate::Scalar;

/// AdamW hyperparameters. The learning rate is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale the gradients so their global L2 norm is at most this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// Moment accumulators, one pair per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Scalar = f64> {
    pub config: AdamWConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new<'a>(config: AdamWConfig, blocks: impl IntoIterator<Item = &'a ParamBlock<T>>) -> Self {
        let sizes: Vec<usize> = blocks.into_iter().map(|b| b.tensor.numel()).collect();
        Self {
            config,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected AdamW update with decoupled weight decay.
    ///
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, blocks: &mut [&mut ParamBlock<T>], grads: &mut [Vec<T>]) -> Result<f64, TrainError> {
        if blocks.len() != self.m.len() || grads.len() != blocks.len() {
            return Err(TrainError::Optimizer(format!(
                "{} blocks and {} gradients for an optimizer over {} blocks",
                blocks.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let mut sq = 0.0f64;
        for (b, g) in blocks.iter().zip(grads.iter()) {
            if g.len() != b.tensor.numel() {
                return Err(TrainError::Optimizer(format!(
                    "gradient for {} has {} values, expected {}",
                    b.name,
                    g.len(),
                    b.tensor.numel()
                )));
            }
            if let Some(x) = g.iter().find(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    block: b.name.clone(),
                    value: x.as_f64(),
                });
            }
            sq += g.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>();
        }
        let norm = sq.sqrt();
        let c = self.config;
        if let Some(max) = c.clip_norm {
            if norm > max {
                let s = T::lit(max / norm);
                for g in grads.iter_mut() {
                    g.iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let one = T::one();
        for (i, (b, g)) in blocks.iter_mut().zip(grads.iter()).enumerate() {
            let shrink = if b.decay {
                one - lr * T::lit(c.weight_decay)
            } else {
                one
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in b.tensor.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p = *p * shrink - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn block(v: f64, decay: bool) -> ParamBlock {
        ParamBlock {
            name: "w".into(),
            tensor: Tensor::filled(vec![3], v),
            decay,
        }
    }

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            clip_norm: None,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut b = block(1.0, true);
        let mut st = OptimizerState::new(cfg(0.1, 0.0), [&b]);
        st.step(&mut [&mut b], &mut [vec![1.0; 3]]).unwrap();
        // bias-corrected moments are g and g², so the step is lr·g/(|g|+eps)
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!(b.tensor.data().iter().all(|p| (p - want).abs() < 1e-12));
        assert!(b.tensor.data().iter().all(|p| (p - 0.9).abs() < 1e-6));
    }

    #[test]
    fn decay_is_decoupled() {
        let mut b = block(2.0, true);
        let mut st = OptimizerState::new(cfg(0.1, 0.5), [&b]);
        for k in 1..=3 {
            st.step(&mut [&mut b], &mut [vec![0.0; 3]]).unwrap();
            let want = 2.0 * (1.0f64 - 0.05).powi(k);
            assert!((b.tensor.data()[0] - want).abs() < 1e-12);
        }
        assert!(st.m[0].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut b = block(0.7, true);
        let mut st = OptimizerState::new(cfg(0.1, 0.0), [&b]);
        st.step(&mut [&mut b], &mut [vec![0.0; 3]]).unwrap();
        assert_eq!(b.tensor.data(), &[0.7; 3]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut b = block(1.0, true);
        b.name = "layer0.ff.in".into();
        let mut st = OptimizerState::new(cfg(0.1, 0.0), [&b]);
        let err = st
            .step(&mut [&mut b], &mut [vec![0.0, f64::NAN, 0.0]])
            .unwrap_err();
        assert!(err.to_string().contains("layer0.ff.in"), "{err}");
        assert_eq!(b.tensor.data(), &[1.0; 3]);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut b = block(0.0, false);
        let mut st = OptimizerState::new(
            AdamWConfig {
                clip_norm: Some(1.0),
                ..cfg(0.1, 0.0)
            },
            [&b],
        );
        let mut g = [vec![3.0, 4.0, 0.0]];
        let norm = st.step(&mut [&mut b], &mut g).unwrap();
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[0][1] - 0.8).abs() < 1e-12);
    }
}
