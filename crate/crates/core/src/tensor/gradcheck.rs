//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates forward values, so it shares no
//! code path with [`Tape::backward`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Tape, Tensor, TensorError, Var};

/// Largest relative discrepancy between tape gradients and central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that two near-zero
/// gradients compare as equal.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Random tensor with standard-normal entries, marked as tracked.
pub fn random_input<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap().tracked()
}

/// Checks `build` at `inputs` with step `h`.
///
/// `build` maps the recorded inputs to any output; the checked scalar is
/// `Σ out ⊙ w` for a fixed random `w` so that every output element matters.
pub fn check<R, F>(inputs: &[Tensor<f64>], h: f64, rng: &mut R, build: F) -> Result<GradCheck, TensorError>
where
    R: Rng + ?Sized,
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let weights = random_input(&probe, rng).into_data();

    let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t)).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars)?;
    let w = tape.constant(probe.clone(), weights.clone())?;
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut xs = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        if !inputs[i].track_grad() {
            continue;
        }
        let zeros = vec![0.0; inputs[i].numel()];
        let analytic = grads.get(*v).unwrap_or(&zeros).to_vec();
        for j in 0..inputs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_error(analytic[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}

type Inputs = fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor<f64>>;
type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>;

/// One differentiable operation together with a random-input generator.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
}

fn dim(rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    rng.random_range(1..=8)
}

fn targets_for(rows: usize, classes: usize, salt: usize) -> Vec<usize> {
    (0..rows)
        .map(|i| {
            if (i + salt) % 3 == 2 {
                super::IGNORE_INDEX
            } else {
                (i * 7 + salt) % classes
            }
        })
        .collect()
}

/// Every differentiable tape operation, each with random shapes of at most
/// eight per axis.
pub fn differentiable_ops() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            inputs: |r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![random_input(&[m, k], r), random_input(&[k, n], r)]
            },
            build: |t, v| t.matmul(v[0], v[1]),
        },
        OpCase {
            name: "batched_matmul",
            inputs: |r| {
                let (b, m, k, n) = (dim(r).min(3), dim(r), dim(r), dim(r));
                vec![random_input(&[b, m, k], r), random_input(&[b, k, n], r)]
            },
            build: |t, v| t.matmul(v[0], v[1]),
        },
        OpCase {
            name: "add",
            inputs: |r| {
                let s = [dim(r), dim(r)];
                vec![random_input(&s, r), random_input(&s, r)]
            },
            build: |t, v| t.add(v[0], v[1]),
        },
        OpCase {
            name: "add_row",
            inputs: |r| {
                let (m, n) = (dim(r), dim(r));
                vec![random_input(&[m, n], r), random_input(&[n], r)]
            },
            build: |t, v| t.add_row(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            inputs: |r| {
                let s = [dim(r), dim(r)];
                vec![random_input(&s, r), random_input(&s, r)]
            },
            build: |t, v| t.mul(v[0], v[1]),
        },
        OpCase {
            name: "scale",
            inputs: |r| vec![random_input(&[dim(r), dim(r)], r)],
            build: |t, v| Ok(t.scale(v[0], -1.7)),
        },
        OpCase {
            name: "permute",
            inputs: |r| vec![random_input(&[dim(r).min(4), dim(r).min(4), dim(r).min(4)], r)],
            build: |t, v| t.permute(v[0], &[2, 0, 1]),
        },
        OpCase {
            name: "transpose",
            inputs: |r| vec![random_input(&[dim(r), dim(r)], r)],
            build: |t, v| t.transpose(v[0]),
        },
        OpCase {
            name: "reshape",
            inputs: |r| vec![random_input(&[dim(r), 2, dim(r)], r)],
            build: |t, v| {
                let s = t.shape(v[0]).to_vec();
                t.reshape(v[0], &[s[0] * 2, s[2]])
            },
        },
        OpCase {
            name: "gelu",
            inputs: |r| vec![random_input(&[dim(r), dim(r)], r)],
            build: |t, v| Ok(t.gelu(v[0])),
        },
        OpCase {
            name: "layer_norm",
            inputs: |r| {
                let (m, h) = (dim(r), dim(r).max(2));
                vec![random_input(&[m, h], r), random_input(&[h], r), random_input(&[h], r)]
            },
            build: |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
        },
        OpCase {
            name: "softmax",
            inputs: |r| vec![random_input(&[dim(r), dim(r)], r)],
            build: |t, v| Ok(t.softmax(v[0])),
        },
        OpCase {
            name: "embedding_lookup",
            inputs: |r| vec![random_input(&[dim(r) + 1, dim(r)], r)],
            build: |t, v| {
                let rows = t.shape(v[0])[0];
                // Repeated ids exercise scatter-add accumulation.
                let ids: Vec<usize> = (0..rows + 3).map(|i| (i * 5) % rows).collect();
                t.embedding_lookup(v[0], &ids)
            },
        },
        OpCase {
            name: "dropout",
            inputs: |r| vec![random_input(&[dim(r), dim(r)], r)],
            build: |t, v| {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
                Ok(t.dropout(v[0], 0.3, &mut rng))
            },
        },
        OpCase {
            name: "sum",
            inputs: |r| vec![random_input(&[dim(r), dim(r)], r)],
            build: |t, v| Ok(t.sum(v[0])),
        },
        OpCase {
            name: "mean",
            inputs: |r| vec![random_input(&[dim(r), dim(r)], r)],
            build: |t, v| Ok(t.mean(v[0])),
        },
        OpCase {
            name: "softmax_cross_entropy",
            inputs: |r| vec![random_input(&[dim(r) + 1, dim(r) + 1], r)],
            build: |t, v| {
                let s = t.shape(v[0]).to_vec();
                let targets = targets_for(s[0], s[1], 0);
                t.cross_entropy(v[0], &targets, Some(super::IGNORE_INDEX))
            },
        },
        OpCase {
            name: "reuse_accumulation",
            inputs: |r| {
                let (m, n) = (dim(r), dim(r));
                vec![random_input(&[m, n], r), random_input(&[n, n], r)]
            },
            build: |t, v| {
                // x feeds three consumers: x·W, gelu(x) and x ⊙ x.
                let xw = t.matmul(v[0], v[1])?;
                let g = t.gelu(v[0]);
                let sq = t.mul(v[0], v[0])?;
                let a = t.add(xw, g)?;
                t.add(a, sq)
            },
        },
    ]
}
