use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{numel, Tensor, TensorError};
use crate::scalar::Scalar;

/// Target value excluded from [`Tape::cross_entropy`].
pub const IGNORE_INDEX: usize = usize::MAX;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Wengert list of forward operations.
///
/// Nodes are appended in execution order, so reverse index order is a valid
/// reverse topological order for the backward sweep.
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every recorded node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the node does not influence the loss through a tracked leaf.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(data[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn phi<T: Scalar>(x: T) -> T {
    (-(x * x) * T::lit(0.5)).exp() * T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies a node's value out as an untracked tensor.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Records a leaf; it receives gradients iff the tensor is tracked.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.track_grad())
    }

    /// Records an untracked leaf.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var, TensorError> {
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Add(a, b), ng))
    }

    /// `x[..., n] + row[n]`, broadcasting the row over all leading positions.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(row) != [n] {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row);
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|c| c.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let ng = self.needs(x) || self.needs(row);
        Ok(self.push(self.shape(x).to_vec(), value, Op::AddRow(x, row), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).iter().map(|&v| v * c).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), value, Op::Scale(x, c), ng)
    }

    /// Matrix product over the last two axes.
    ///
    /// `a: [..., m, k]` times either a shared `b: [k, n]` or a batched
    /// `b: [..., k, n]` with identical leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || TensorError::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(err());
        }
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && lead != &sb[..sb.len() - 2] {
            return Err(err());
        }
        let batch = numel(lead);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            if shared_rhs {
                gemm_nn(av, bv, &mut out, batch * m, k, n);
            } else {
                for i in 0..batch {
                    gemm_nn(
                        &av[i * m * k..(i + 1) * m * k],
                        &bv[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            shape,
            out,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            ng,
        ))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&a| a < seen.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::Shape {
                op: "permute",
                lhs: shape,
                rhs: axes.to_vec(),
            });
        }
        let (value, out_shape) = permute_data(self.value(x), &shape, axes);
        let ng = self.needs(x);
        Ok(self.push(
            out_shape,
            value,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            ng,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                lhs: self.shape(x).to_vec(),
                rhs: vec![],
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        if numel(shape) != self.value(x).len() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.value(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), ng))
    }

    /// Exact-erf GELU: `0.5 x (1 + erf(x / √2))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let value = self
            .value(x)
            .iter()
            .map(|&v| half * v * (T::one() + (v * inv_sqrt2).erf()))
            .collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), value, Op::Gelu(x), ng)
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, TensorError> {
        let h = *self.shape(x).last().unwrap_or(&0);
        for p in [gain, bias] {
            if self.shape(p) != [h] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let hs = T::from_usize(h).expect("width fits scalar");
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let rows = xv.len() / h.max(1);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(h) {
            let mean = row.iter().copied().sum::<T>() / hs;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hs;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let z = (v - mean) * inv;
                xhat.push(z);
                out.push(z * g[j] + b[j]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Row-wise softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().unwrap_or(&1);
        let mut out = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut z = T::zero();
            for &v in row {
                let e = (v - mx).exp();
                z += e;
                out.push(e);
            }
            for o in &mut out[start..] {
                *o /= z;
            }
        }
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), ng)
    }

    /// Gathers rows of `table` (viewed as `[rows × last_dim]`).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(table);
        if shape.len() < 2 {
            return Err(TensorError::Shape {
                op: "gather_rows",
                lhs: shape.to_vec(),
                rhs: vec![rows.len()],
            });
        }
        let h = shape[shape.len() - 1];
        let bound = self.value(table).len() / h.max(1);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(rows.len() * h);
        for &r in rows {
            if r >= bound {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: r,
                    bound,
                });
            }
            out.extend_from_slice(&tv[r * h..(r + 1) * h]);
        }
        let ng = self.needs(table);
        Ok(self.push(
            vec![rows.len(), h],
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Token-embedding lookup: one row of `table` per id.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        self.gather_rows(table, ids)
    }

    /// Inverted dropout. Returns `x` unchanged when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = T::lit(1.0 / keep);
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let value = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), value, Op::Dropout { x, mask }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let ng = self.needs(x);
        self.push(Vec::new(), vec![s], Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().copied().sum::<T>() / T::from_usize(v.len().max(1)).unwrap();
        let ng = self.needs(x);
        self.push(Vec::new(), vec![s], Op::Mean(x), ng)
    }

    /// Mean negative log-softmax of the target classes.
    ///
    /// `logits` is `[N × C]`; targets equal to `ignore_index` are skipped.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_index: Option<usize>,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let c = shape[1];
        let lv = self.value(logits);
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = T::zero();
        let mut count = 0usize;
        let mut active = Vec::with_capacity(targets.len());
        for (i, &t) in targets.iter().enumerate() {
            if Some(t) == ignore_index {
                active.push(None);
                continue;
            }
            active.push(Some(t));
            if t >= c {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    bound: c,
                });
            }
            let row = &lv[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[t];
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
            count += 1;
        }
        if count == 0 {
            return Err(TensorError::EmptyLossSet);
        }
        let loss = total / T::from_usize(count).unwrap();
        let ng = self.needs(logits);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: active,
                probs,
                count,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        for (d, &x) in slot(grads, v, g.len()).iter_mut().zip(g) {
                            *d += x;
                        }
                    }
                }
            }
            Op::AddRow(x, row) => {
                if self.needs(*x) {
                    for (d, &gv) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if self.needs(*row) {
                    let n = self.shape(*row)[0];
                    let d = slot(grads, *row, n);
                    for chunk in g.chunks(n) {
                        for (dv, &gv) in d.iter_mut().zip(chunk) {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if self.needs(*b) {
                    let d = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.needs(*x) {
                    for (d, &gv) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                        *d += gv * *c;
                    }
                }
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = slot(grads, *a, av.len());
                    if *shared_rhs {
                        gemm_nt(g, bv, d, batch * m, k, n);
                    } else {
                        for i in 0..batch {
                            gemm_nt(
                                &g[i * m * n..(i + 1) * m * n],
                                &bv[i * k * n..(i + 1) * k * n],
                                &mut d[i * m * k..(i + 1) * m * k],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                }
                if self.needs(*b) {
                    let d = slot(grads, *b, bv.len());
                    if *shared_rhs {
                        gemm_tn(av, g, d, batch * m, k, n);
                    } else {
                        for i in 0..batch {
                            gemm_tn(
                                &av[i * m * k..(i + 1) * m * k],
                                &g[i * m * n..(i + 1) * m * n],
                                &mut d[i * k * n..(i + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                }
            }
            Op::Permute { x, axes } => {
                if self.needs(*x) {
                    let mut inv = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inv[a] = i;
                    }
                    let (back, _) = permute_data(g, &node.shape, &inv);
                    for (d, v) in slot(grads, *x, g.len()).iter_mut().zip(back) {
                        *d += v;
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    for (d, &gv) in slot(grads, *x, g.len()).iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Gelu(x) => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let half = T::lit(0.5);
                    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                    let d = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        let v = xv[i];
                        let dv = half * (T::one() + (v * inv_sqrt2).erf()) + v * phi(v);
                        d[i] += g[i] * dv;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let h = self.shape(*gain)[0];
                let gv = self.value(*gain);
                if self.needs(*gain) {
                    let d = slot(grads, *gain, h);
                    for (grow, zrow) in g.chunks(h).zip(xhat.chunks(h)) {
                        for j in 0..h {
                            d[j] += grow[j] * zrow[j];
                        }
                    }
                }
                if self.needs(*bias) {
                    let d = slot(grads, *bias, h);
                    for grow in g.chunks(h) {
                        for j in 0..h {
                            d[j] += grow[j];
                        }
                    }
                }
                if self.needs(*x) {
                    let hs = T::from_usize(h).unwrap();
                    let d = slot(grads, *x, g.len());
                    let mut dz = vec![T::zero(); h];
                    for (r, (grow, zrow)) in g.chunks(h).zip(xhat.chunks(h)).enumerate() {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..h {
                            dz[j] = grow[j] * gv[j];
                            s1 += dz[j];
                            s2 += dz[j] * zrow[j];
                        }
                        let inv = inv_std[r] / hs;
                        let drow = &mut d[r * h..(r + 1) * h];
                        for j in 0..h {
                            drow[j] += inv * (hs * dz[j] - s1 - zrow[j] * s2);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let n = *node.shape.last().unwrap_or(&1);
                    let y = &node.value;
                    let d = slot(grads, *x, g.len());
                    for ((drow, grow), yrow) in d.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::Gather { table, rows } => {
                if self.needs(*table) {
                    let h = node.shape[1];
                    let len = self.value(*table).len();
                    let d = slot(grads, *table, len);
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..h {
                            d[r * h + j] += g[i * h + j];
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    let d = slot(grads, *x, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * mask[i];
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let len = self.value(*x).len();
                    for d in slot(grads, *x, len).iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if self.needs(*x) {
                    let len = self.value(*x).len();
                    let s = g[0] / T::from_usize(len.max(1)).unwrap();
                    for d in slot(grads, *x, len).iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if self.needs(*logits) {
                    let c = self.shape(*logits)[1];
                    let s = g[0] / T::from_usize(*count).unwrap();
                    let d = slot(grads, *logits, probs.len());
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            d[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.leaf(&t(&[1, 2], &[1.0, 2.0]));
        let b = tape.leaf(&t(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[11.0]);
        assert_eq!(tape.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(&Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn gelu_fixed_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&t(&[4], &[0.0, 6.0, 8.0, 12.0]));
        let y = tape.gelu(x);
        let v = tape.value(y);
        assert_eq!(v[0], 0.0);
        for (&out, &inp) in v[1..].iter().zip(&[6.0, 8.0, 12.0]) {
            assert!((out - inp).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut tape = Tape::<f64>::new();
        let confident = tape.leaf(&t(&[1, 2], &[10.0, -10.0]));
        let l = tape.cross_entropy(confident, &[0], None).unwrap();
        assert!(tape.value(l)[0] < 1e-4);

        let flat = tape.leaf(&t(&[1, 2], &[0.0, 0.0]));
        let l = tape.cross_entropy(flat, &[0], None).unwrap();
        assert!((tape.value(l)[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_all_ignored_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&t(&[2, 2], &[0.0; 4]));
        let err = tape
            .cross_entropy(x, &[IGNORE_INDEX, IGNORE_INDEX], Some(IGNORE_INDEX))
            .unwrap_err();
        assert_eq!(err, TensorError::EmptyLossSet);
        assert!(tape.cross_entropy(x, &[0, 2], None).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(&t(&[1, 4], &[3.0; 4]));
        let g = tape.leaf(&Tensor::filled(vec![4], 1.0));
        let b = tape.leaf(&Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permute_roundtrip() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.leaf(&t(&[2, 3, 4], &data));
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        // out[k][i][j] = in[i][j][k]
        assert_eq!(tape.value(p)[1 * 6 + 1 * 3 + 2], data[1 * 12 + 2 * 4 + 1]);
        let back = tape.permute(p, &[1, 2, 0]).unwrap();
        assert_eq!(tape.value(back), &data[..]);
        assert!(tape.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn untracked_leaves_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(&t(&[2], &[1.0, 2.0]).tracked());
        let c = tape.leaf(&t(&[2], &[3.0, 4.0]));
        let y = tape.mul(w, c).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w), Some(&[3.0, 4.0][..]));
        assert!(g.get(c).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(&t(&[2], &[1.0, 2.0]).tracked());
        assert!(matches!(
            tape.backward(w),
            Err(TensorError::NonScalarLoss(_))
        ));
    }
}
