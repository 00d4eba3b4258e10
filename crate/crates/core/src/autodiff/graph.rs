use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{mm, mm_nt, mm_tn, sigmoid};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dimensions of an LSTM weight set. Gates are packed column-wise in the
/// order `[input, forget, cell-candidate, output]`:
///
/// * `w_ih`: `[in × 4·hid]`
/// * `w_hh`: `[hid × 4·hid]`
/// * `bias`: `[4·hid]`
#[derive(Debug, Clone, Copy)]
struct LstmDims {
    batch: usize,
    input: usize,
    hidden: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Elementwise map with a caller-supplied derivative, stored per element.
    Map {
        input: Var,
        deriv: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SliceLast {
        input: Var,
        start: usize,
        len: usize,
    },
    Conv1d {
        input: Var,
        kernels: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        input: Var,
        argmax: Vec<usize>,
    },
    MeanTime(Var),
    SelectTime {
        input: Var,
        t: usize,
    },
    RepeatTime {
        input: Var,
        steps: usize,
    },
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        dims: LstmDims,
        /// Activated gates `[B × 4·hid]`.
        gates: Vec<f64>,
    },
    LstmSeq {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        dims: LstmDims,
        steps: usize,
        /// Activated gates, time-major `[T × B × 4·hid]`.
        gates: Vec<f64>,
        /// Cell states, time-major `[T × B × hid]`.
        cells: Vec<f64>,
        /// Hidden states, time-major `[T × B × hid]`.
        hidden: Vec<f64>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Map { .. } => "map",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::SliceLast { .. } => "slice_last",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool1d { .. } => "max_pool1d",
            Op::MeanTime(_) => "mean_time",
            Op::SelectTime { .. } => "select_time",
            Op::RepeatTime { .. } => "repeat_time",
            Op::LstmCell { .. } => "lstm_cell",
            Op::LstmSeq { .. } => "lstm_seq",
            Op::Dropout { .. } => "dropout",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse(..) => "mse",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in execution order, which
/// is a topological order; `backward` walks it in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`]. Every leaf created with
/// [`Graph::param`] has an entry, zero-filled when the root does not depend
/// on it.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter leaf. Panics if `var` is not a parameter.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.get(var)
            .unwrap_or_else(|| panic!("no gradient recorded for node {}", var.0))
    }
}

fn batch_rows(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

fn seq_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::Dimension(format!(
            "{what} expects [T×C] or [B×T×C], got {shape:?}"
        ))),
    }
}

fn axpy(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that does not receive a gradient (inputs, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "{} produced a non-finite value",
                op.name()
            )));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `a[..., k] · b[k × n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::Dimension(format!("matmul: {sa:?} × {sb:?}")));
        }
        let (m, k, n) = (batch_rows(sa), sb[0], sb[1]);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; m * n];
        mm(m, k, n, self.data(a), self.data(b), &mut out, false);
        self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), &[a, b])
    }

    /// Adds a bias vector to every row (last axis) of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx[sx.len() - 1] != sb[0] {
            return Err(Error::Dimension(format!("add_bias: {sx:?} + {sb:?}")));
        }
        let n = sb[0];
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(n) {
            axpy(row, b);
        }
        let shape = sx.to_vec();
        self.push(Tensor::from_parts(shape, out), Op::AddBias(x, bias), &[x, bias])
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn map_unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out: Vec<f64> = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), op, &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.map_unary(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map_unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// Elementwise `f` with derivative `df`, both supplied by the caller.
    pub fn map(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
    ) -> Result<Var> {
        let deriv: Vec<f64> = self.data(a).iter().map(|&x| df(x)).collect();
        self.map_unary(a, Op::Map { input: a, deriv }, f)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.sum() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), &[a])
    }

    /// Columns `[start, start+len)` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a);
        let n = sa[sa.len() - 1];
        if len == 0 || start + len > n {
            return Err(Error::Dimension(format!(
                "slice_last: [{start}, {}) outside last axis {n}",
                start + len
            )));
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = len;
        let out: Vec<f64> = self
            .data(a)
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        self.push(
            Tensor::from_parts(shape, out),
            Op::SliceLast { input: a, start, len },
            &[a],
        )
    }

    /// 1-D cross-correlation over time. `input` is `[T×C]` or `[B×T×C]`,
    /// `kernels` is `[K×C×width]`; the result is `[T'×K]` or `[B×T'×K]` with
    /// `T' = (T + 2·padding − width)/stride + 1`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let (b, t, c) = seq_dims(&si, "conv1d")?;
        let sk = self.shape(kernels);
        if sk.len() != 3 || sk[1] != c {
            return Err(Error::Dimension(format!(
                "conv1d: kernels {sk:?} incompatible with {c} input channels"
            )));
        }
        let (k, width) = (sk[0], sk[2]);
        if stride == 0 {
            return Err(Error::Dimension("conv1d: stride must be ≥ 1".into()));
        }
        if width > t + 2 * padding {
            return Err(Error::Dimension(format!(
                "conv1d: kernel width {width} exceeds padded input length {}",
                t + 2 * padding
            )));
        }
        let t_out = (t + 2 * padding - width) / stride + 1;
        let cols = im2col(self.data(input), b, t, c, width, stride, padding, t_out);
        let mut out = vec![0.0; b * t_out * k];
        mm_nt(b * t_out, c * width, k, &cols, self.data(kernels), &mut out, false);
        let shape = if si.len() == 2 {
            vec![t_out, k]
        } else {
            vec![b, t_out, k]
        };
        self.push(
            Tensor::from_parts(shape, out),
            Op::Conv1d {
                input,
                kernels,
                stride,
                padding,
            },
            &[input, kernels],
        )
    }

    /// Non-overlapping max pooling over time; a trailing partial window is
    /// dropped. Ties resolve to the earliest time step.
    pub fn max_pool1d(&mut self, input: Var, size: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let (b, t, c) = seq_dims(&si, "max_pool1d")?;
        if size == 0 || size > t {
            return Err(Error::Dimension(format!(
                "max_pool1d: pool size {size} invalid for length {t}"
            )));
        }
        let t_out = t / size;
        let x = self.data(input);
        let mut out = Vec::with_capacity(b * t_out * c);
        let mut argmax = Vec::with_capacity(b * t_out * c);
        for bi in 0..b {
            for p in 0..t_out {
                for ci in 0..c {
                    let mut best = (bi * t + p * size) * c + ci;
                    for s in 1..size {
                        let idx = (bi * t + p * size + s) * c + ci;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let mut shape = si;
        let axis = shape.len() - 2;
        shape[axis] = t_out;
        self.push(
            Tensor::from_parts(shape, out),
            Op::MaxPool1d { input, argmax },
            &[input],
        )
    }

    /// Average over the time axis: `[B×T×C] → [B×C]`.
    pub fn mean_time(&mut self, input: Var) -> Result<Var> {
        let (b, t, c) = seq_dims(self.shape(input), "mean_time")?;
        let x = self.data(input);
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            let dst = &mut out[bi * c..(bi + 1) * c];
            for ti in 0..t {
                axpy(dst, &x[(bi * t + ti) * c..(bi * t + ti + 1) * c]);
            }
            for v in dst.iter_mut() {
                *v /= t as f64;
            }
        }
        self.push(Tensor::from_parts(vec![b, c], out), Op::MeanTime(input), &[input])
    }

    /// Time step `t` of a `[B×T×C]` sequence as `[B×C]`.
    pub fn select_time(&mut self, input: Var, t: usize) -> Result<Var> {
        let (b, steps, c) = seq_dims(self.shape(input), "select_time")?;
        if t >= steps {
            return Err(Error::Dimension(format!(
                "select_time: step {t} out of range {steps}"
            )));
        }
        let x = self.data(input);
        let out: Vec<f64> = (0..b)
            .flat_map(|bi| x[(bi * steps + t) * c..(bi * steps + t + 1) * c].iter().copied())
            .collect();
        self.push(
            Tensor::from_parts(vec![b, c], out),
            Op::SelectTime { input, t },
            &[input],
        )
    }

    /// Repeats a `[B×C]` vector along a new time axis: `[B×steps×C]`.
    pub fn repeat_time(&mut self, input: Var, steps: usize) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 2 || steps == 0 {
            return Err(Error::Dimension(format!(
                "repeat_time: expects [B×C] and steps ≥ 1, got {s:?}"
            )));
        }
        let (b, c) = (s[0], s[1]);
        let x = self.data(input);
        let mut out = Vec::with_capacity(b * steps * c);
        for bi in 0..b {
            for _ in 0..steps {
                out.extend_from_slice(&x[bi * c..(bi + 1) * c]);
            }
        }
        self.push(
            Tensor::from_parts(vec![b, steps, c], out),
            Op::RepeatTime { input, steps },
            &[input],
        )
    }

    fn lstm_weight_dims(&self, input: usize, w_ih: Var, w_hh: Var, bias: Var) -> Result<usize> {
        let (si, sh, sb) = (self.shape(w_ih), self.shape(w_hh), self.shape(bias));
        let ok = si.len() == 2
            && sh.len() == 2
            && sb.len() == 1
            && si[0] == input
            && si[1] % 4 == 0
            && sh[0] * 4 == si[1]
            && sh[1] == si[1]
            && sb[0] == si[1];
        if !ok {
            return Err(Error::Dimension(format!(
                "lstm weights w_ih {si:?}, w_hh {sh:?}, bias {sb:?} inconsistent with input width {input}"
            )));
        }
        Ok(sh[0])
    }

    /// One LSTM step. `x` is `[in]` or `[B×in]`, `h` and `c` match with
    /// `hid` columns. Returns `(h', c')`.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<(Var, Var)> {
        let sx = self.shape(x).to_vec();
        let (batch, input) = match *sx.as_slice() {
            [i] => (1, i),
            [b, i] => (b, i),
            _ => return Err(Error::Dimension(format!("lstm_cell: x {sx:?}"))),
        };
        let hidden = self.lstm_weight_dims(input, w_ih, w_hh, bias)?;
        let state_shape: Vec<usize> = if sx.len() == 1 {
            vec![hidden]
        } else {
            vec![batch, hidden]
        };
        if self.shape(h) != state_shape.as_slice() || self.shape(c) != state_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "lstm_cell: h {:?} / c {:?}, expected {state_shape:?}",
                self.shape(h),
                self.shape(c)
            )));
        }
        let g4 = 4 * hidden;
        let mut z = vec![0.0; batch * g4];
        mm(batch, input, g4, self.data(x), self.data(w_ih), &mut z, false);
        mm(batch, hidden, g4, self.data(h), self.data(w_hh), &mut z, true);
        let b = self.data(bias);
        for row in z.chunks_mut(g4) {
            axpy(row, b);
            activate_gates(row, hidden);
        }
        let c_prev = self.data(c);
        let mut out = vec![0.0; batch * 2 * hidden];
        for bi in 0..batch {
            let g = &z[bi * g4..(bi + 1) * g4];
            let cp = &c_prev[bi * hidden..(bi + 1) * hidden];
            let row = &mut out[bi * 2 * hidden..(bi + 1) * 2 * hidden];
            for j in 0..hidden {
                let cn = g[hidden + j] * cp[j] + g[j] * g[2 * hidden + j];
                row[hidden + j] = cn;
                row[j] = g[3 * hidden + j] * cn.tanh();
            }
        }
        let mut shape = state_shape.clone();
        *shape.last_mut().unwrap() = 2 * hidden;
        let both = self.push(
            Tensor::from_parts(shape, out),
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                bias,
                dims: LstmDims {
                    batch,
                    input,
                    hidden,
                },
                gates: z,
            },
            &[x, h, c, w_ih, w_hh, bias],
        )?;
        let h_next = self.slice_last(both, 0, hidden)?;
        let c_next = self.slice_last(both, hidden, hidden)?;
        Ok((h_next, c_next))
    }

    /// Full LSTM layer over `[B×T×in]` from zero initial state; returns every
    /// hidden state as `[B×T×hid]`. Numerically identical to unrolling
    /// [`Graph::lstm_cell`] over time, but recorded as a single node.
    pub fn lstm_seq(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let (batch, steps, input) = match *sx.as_slice() {
            [b, t, i] => (b, t, i),
            _ => return Err(Error::Dimension(format!("lstm_seq: x {sx:?}"))),
        };
        let hidden = self.lstm_weight_dims(input, w_ih, w_hh, bias)?;
        let g4 = 4 * hidden;
        let bh = batch * hidden;

        // Input projection for all steps at once, batch-major rows (b·T + t).
        let mut xw = vec![0.0; batch * steps * g4];
        mm(batch * steps, input, g4, self.data(x), self.data(w_ih), &mut xw, false);

        let w_hh_data = self.data(w_hh);
        let bias_data = self.data(bias);
        let mut gates = vec![0.0; steps * batch * g4];
        let mut cells = vec![0.0; steps * bh];
        let mut hidden_seq = vec![0.0; steps * bh];
        for t in 0..steps {
            let z = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            if t > 0 {
                let h_prev = &hidden_seq[(t - 1) * bh..t * bh];
                mm(batch, hidden, g4, h_prev, w_hh_data, z, false);
            }
            for bi in 0..batch {
                let row = &mut z[bi * g4..(bi + 1) * g4];
                axpy(row, &xw[(bi * steps + t) * g4..(bi * steps + t + 1) * g4]);
                axpy(row, bias_data);
                activate_gates(row, hidden);
            }
            for bi in 0..batch {
                let g = &gates[(t * batch + bi) * g4..(t * batch + bi + 1) * g4];
                for j in 0..hidden {
                    let cp = if t > 0 {
                        cells[(t - 1) * bh + bi * hidden + j]
                    } else {
                        0.0
                    };
                    let cn = g[hidden + j] * cp + g[j] * g[2 * hidden + j];
                    cells[t * bh + bi * hidden + j] = cn;
                    hidden_seq[t * bh + bi * hidden + j] = g[3 * hidden + j] * cn.tanh();
                }
            }
        }
        let mut out = vec![0.0; batch * steps * hidden];
        for t in 0..steps {
            for bi in 0..batch {
                out[(bi * steps + t) * hidden..(bi * steps + t + 1) * hidden]
                    .copy_from_slice(&hidden_seq[t * bh + bi * hidden..t * bh + (bi + 1) * hidden]);
            }
        }
        self.push(
            Tensor::from_parts(vec![batch, steps, hidden], out),
            Op::LstmSeq {
                x,
                w_ih,
                w_hh,
                bias,
                dims: LstmDims {
                    batch,
                    input,
                    hidden,
                },
                steps,
                gates,
                cells,
                hidden: hidden_seq,
            },
            &[x, w_ih, w_hh, bias],
        )
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1/(1−rate)`. The mask is drawn from `seed`.
    pub fn dropout(&mut self, input: Var, rate: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 - rate;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..self.value(input).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let out: Vec<f64> = self.data(input).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.shape(input).to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Dropout { input, mask },
            &[input],
        )
    }

    /// Mean cross-entropy of raw logits `[n]` or `[B×n]` against class
    /// indices, softmax applied internally with log-sum-exp stabilisation.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        let (rows, n) = match *s {
            [n] => (1, n),
            [b, n] => (b, n),
            _ => return Err(Error::Dimension(format!("cross_entropy: logits {s:?}"))),
        };
        if targets.len() != rows {
            return Err(Error::Dimension(format!(
                "cross_entropy: {rows} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Label(format!(
                "target class {bad} out of range for {n} classes"
            )));
        }
        let x = self.data(logits);
        let mut probs = vec![0.0; rows * n];
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            let row = &x[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + denom.ln();
            total += lse - row[target];
            for (p, v) in probs[r * n..(r + 1) * n].iter_mut().zip(row) {
                *p = (v - max).exp() / denom;
            }
        }
        self.push(
            Tensor::scalar(total / rows as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean squared difference of two same-shape tensors.
    pub fn mse(&mut self, prediction: Var, target: Var) -> Result<Var> {
        self.same_shape(prediction, target, "mse")?;
        let a = self.data(prediction);
        let b = self.data(target);
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let n = a.len() as f64;
        self.push(
            Tensor::scalar(s / n),
            Op::Mse(prediction, target),
            &[prediction, target],
        )
    }

    /// Reverse-mode accumulation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Contract(format!("unknown root node {}", root.0)));
        }
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        // Returns the gradient buffer of `v`, or None when it needs no gradient.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sb = self.shape(*b);
                let (m, k, n) = (batch_rows(self.shape(*a)), sb[0], sb[1]);
                if let Some(ga) = slot!(*a) {
                    mm_nt(m, n, k, g, self.data(*b), ga, true);
                }
                if let Some(gb) = slot!(*b) {
                    mm_tn(k, m, n, self.data(*a), g, gb, true);
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = slot!(*x) {
                    axpy(gx, g);
                }
                let n = self.value(*bias).len();
                if let Some(gb) = slot!(*bias) {
                    for row in g.chunks(n) {
                        axpy(gb, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, g);
                }
                if let Some(gb) = slot!(*b) {
                    axpy(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, g);
                }
                if let Some(gb) = slot!(*b) {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if let Some(ga) = slot!(*a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(db) {
                        *d += s * y;
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(da) {
                        *d += s * x;
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = slot!(*a) {
                    for (d, s) in ga.iter_mut().zip(g) {
                        *d += s * f;
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                if let Some(ga) = slot!(*a) {
                    for ((d, s), &xi) in ga.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(ga) = slot!(*a) {
                    for ((d, s), yi) in ga.iter_mut().zip(g).zip(y) {
                        *d += s * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = slot!(*a) {
                    for ((d, s), yi) in ga.iter_mut().zip(g).zip(y) {
                        *d += s * yi * (1.0 - yi);
                    }
                }
            }
            Op::Map { input, deriv } => {
                if let Some(ga) = slot!(*input) {
                    for ((d, s), di) in ga.iter_mut().zip(g).zip(deriv) {
                        *d += s * di;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot!(*a) {
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                if let Some(ga) = slot!(*a) {
                    for d in ga.iter_mut() {
                        *d += g[0] / n;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot!(*a) {
                    axpy(ga, g);
                }
            }
            Op::SliceLast { input, start, len } => {
                let sa = self.shape(*input);
                let n = sa[sa.len() - 1];
                if let Some(ga) = slot!(*input) {
                    for (dst, src) in ga.chunks_mut(n).zip(g.chunks(*len)) {
                        axpy(&mut dst[*start..start + len], src);
                    }
                }
            }
            Op::Conv1d {
                input,
                kernels,
                stride,
                padding,
            } => {
                let (b, t, c) = seq_dims(self.shape(*input), "conv1d").expect("validated");
                let sk = self.shape(*kernels);
                let (k, width) = (sk[0], sk[2]);
                let t_out = (t + 2 * padding - width) / stride + 1;
                let rows = b * t_out;
                let cw = c * width;
                if self.nodes[kernels.0].requires_grad {
                    let cols = im2col(self.data(*input), b, t, c, width, *stride, *padding, t_out);
                    let gk = slot!(*kernels).unwrap();
                    mm_tn(k, rows, cw, g, &cols, gk, true);
                }
                if let Some(gi) = slot!(*input) {
                    let mut dcols = vec![0.0; rows * cw];
                    mm(rows, k, cw, g, self.data(*kernels), &mut dcols, false);
                    col2im(&dcols, gi, b, t, c, width, *stride, *padding, t_out);
                }
            }
            Op::MaxPool1d { input, argmax } => {
                if let Some(gi) = slot!(*input) {
                    for (s, &idx) in g.iter().zip(argmax) {
                        gi[idx] += s;
                    }
                }
            }
            Op::MeanTime(input) => {
                let (b, t, c) = seq_dims(self.shape(*input), "mean_time").expect("validated");
                if let Some(gi) = slot!(*input) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let dst = &mut gi[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                            for (d, s) in dst.iter_mut().zip(&g[bi * c..(bi + 1) * c]) {
                                *d += s / t as f64;
                            }
                        }
                    }
                }
            }
            Op::SelectTime { input, t } => {
                let (b, steps, c) = seq_dims(self.shape(*input), "select_time").expect("validated");
                if let Some(gi) = slot!(*input) {
                    for bi in 0..b {
                        axpy(
                            &mut gi[(bi * steps + t) * c..(bi * steps + t + 1) * c],
                            &g[bi * c..(bi + 1) * c],
                        );
                    }
                }
            }
            Op::RepeatTime { input, steps } => {
                let c = self.shape(*input)[1];
                if let Some(gi) = slot!(*input) {
                    for (bi, dst) in gi.chunks_mut(c).enumerate() {
                        for s in 0..*steps {
                            axpy(dst, &g[(bi * steps + s) * c..(bi * steps + s + 1) * c]);
                        }
                    }
                }
            }
            Op::LstmCell {
                x,
                h,
                c,
                w_ih,
                w_hh,
                bias,
                dims,
                gates,
            } => self.lstm_cell_backward(
                node, g, grads, [*x, *h, *c, *w_ih, *w_hh, *bias], *dims, gates,
            ),
            Op::LstmSeq {
                x,
                w_ih,
                w_hh,
                bias,
                dims,
                steps,
                gates,
                cells,
                hidden,
            } => self.lstm_seq_backward(
                g,
                grads,
                [*x, *w_ih, *w_hh, *bias],
                *dims,
                *steps,
                gates,
                cells,
                hidden,
            ),
            Op::Dropout { input, mask } => {
                if let Some(gi) = slot!(*input) {
                    for ((d, s), m) in gi.iter_mut().zip(g).zip(mask) {
                        *d += s * m;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let rows = targets.len();
                let n = probs.len() / rows;
                let scale = g[0] / rows as f64;
                if let Some(gl) = slot!(*logits) {
                    for (r, &target) in targets.iter().enumerate() {
                        for j in 0..n {
                            let onehot = if j == target { 1.0 } else { 0.0 };
                            gl[r * n + j] += scale * (probs[r * n + j] - onehot);
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                let scale = 2.0 * g[0] / da.len() as f64;
                if let Some(ga) = slot!(*a) {
                    for ((d, x), y) in ga.iter_mut().zip(da).zip(db) {
                        *d += scale * (x - y);
                    }
                }
                if let Some(gb) = slot!(*b) {
                    for ((d, x), y) in gb.iter_mut().zip(da).zip(db) {
                        *d -= scale * (x - y);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_cell_backward(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        [x, h, c, w_ih, w_hh, bias]: [Var; 6],
        dims: LstmDims,
        gates: &[f64],
    ) {
        let LstmDims {
            batch,
            input,
            hidden,
        } = dims;
        let g4 = 4 * hidden;
        let out = node.value.data();
        let c_prev = self.data(c);
        let mut dz = vec![0.0; batch * g4];
        let mut dc_prev = vec![0.0; batch * hidden];
        for bi in 0..batch {
            let gt = &gates[bi * g4..(bi + 1) * g4];
            let row = &out[bi * 2 * hidden..(bi + 1) * 2 * hidden];
            let grow = &g[bi * 2 * hidden..(bi + 1) * 2 * hidden];
            let dzr = &mut dz[bi * g4..(bi + 1) * g4];
            for j in 0..hidden {
                let (gi, gf, gg, go) = (gt[j], gt[hidden + j], gt[2 * hidden + j], gt[3 * hidden + j]);
                let tc = row[hidden + j].tanh();
                let dh = grow[j];
                let dc = grow[hidden + j] + dh * go * (1.0 - tc * tc);
                let cp = c_prev[bi * hidden + j];
                dzr[j] = dc * gg * gi * (1.0 - gi);
                dzr[hidden + j] = dc * cp * gf * (1.0 - gf);
                dzr[2 * hidden + j] = dc * gi * (1.0 - gg * gg);
                dzr[3 * hidden + j] = dh * tc * go * (1.0 - go);
                dc_prev[bi * hidden + j] = dc * gf;
            }
        }
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if need(v) {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(buf);
            }
        };
        acc(c, &mut |gc| axpy(gc, &dc_prev));
        acc(x, &mut |gx| mm_nt(batch, g4, input, &dz, self.data(w_ih), gx, true));
        acc(h, &mut |gh| mm_nt(batch, g4, hidden, &dz, self.data(w_hh), gh, true));
        acc(w_ih, &mut |gw| mm_tn(input, batch, g4, self.data(x), &dz, gw, true));
        acc(w_hh, &mut |gw| mm_tn(hidden, batch, g4, self.data(h), &dz, gw, true));
        acc(bias, &mut |gb| {
            for row in dz.chunks(g4) {
                axpy(gb, row);
            }
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_seq_backward(
        &self,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        [x, w_ih, w_hh, bias]: [Var; 4],
        dims: LstmDims,
        steps: usize,
        gates: &[f64],
        cells: &[f64],
        hidden_seq: &[f64],
    ) {
        let LstmDims {
            batch,
            input,
            hidden,
        } = dims;
        let g4 = 4 * hidden;
        let bh = batch * hidden;
        let w_hh_data = self.data(w_hh);

        // dz time-major [T × B × 4hid]
        let mut dz = vec![0.0; steps * batch * g4];
        let mut dh_next = vec![0.0; bh];
        let mut dc_next = vec![0.0; bh];
        for t in (0..steps).rev() {
            for bi in 0..batch {
                let gt = &gates[(t * batch + bi) * g4..(t * batch + bi + 1) * g4];
                let dzr = &mut dz[(t * batch + bi) * g4..(t * batch + bi + 1) * g4];
                for j in 0..hidden {
                    let (gi, gf, gg, go) =
                        (gt[j], gt[hidden + j], gt[2 * hidden + j], gt[3 * hidden + j]);
                    let s = bi * hidden + j;
                    let tc = cells[t * bh + s].tanh();
                    let dh = g[(bi * steps + t) * hidden + j] + dh_next[s];
                    let dc = dc_next[s] + dh * go * (1.0 - tc * tc);
                    let cp = if t > 0 { cells[(t - 1) * bh + s] } else { 0.0 };
                    dzr[j] = dc * gg * gi * (1.0 - gi);
                    dzr[hidden + j] = dc * cp * gf * (1.0 - gf);
                    dzr[2 * hidden + j] = dc * gi * (1.0 - gg * gg);
                    dzr[3 * hidden + j] = dh * tc * go * (1.0 - go);
                    dc_next[s] = dc * gf;
                }
            }
            if t > 0 {
                let dzt = &dz[t * batch * g4..(t + 1) * batch * g4];
                mm_nt(batch, g4, hidden, dzt, w_hh_data, &mut dh_next, false);
            }
        }

        let need = |v: Var| self.nodes[v.0].requires_grad;
        if need(w_hh) && steps > 1 {
            let gw = grads[w_hh.0].get_or_insert_with(|| vec![0.0; hidden * g4]);
            let rows = (steps - 1) * batch;
            mm_tn(hidden, rows, g4, &hidden_seq[..rows * hidden], &dz[batch * g4..], gw, true);
        }
        if need(bias) {
            let gb = grads[bias.0].get_or_insert_with(|| vec![0.0; g4]);
            for row in dz.chunks(g4) {
                axpy(gb, row);
            }
        }
        if need(w_ih) || need(x) {
            // batch-major copy of dz to line up with the rows of x
            let mut dzb = vec![0.0; batch * steps * g4];
            for t in 0..steps {
                for bi in 0..batch {
                    dzb[(bi * steps + t) * g4..(bi * steps + t + 1) * g4]
                        .copy_from_slice(&dz[(t * batch + bi) * g4..(t * batch + bi + 1) * g4]);
                }
            }
            if need(w_ih) {
                let gw = grads[w_ih.0].get_or_insert_with(|| vec![0.0; input * g4]);
                mm_tn(input, batch * steps, g4, self.data(x), &dzb, gw, true);
            }
            if need(x) {
                let gx = grads[x.0].get_or_insert_with(|| vec![0.0; batch * steps * input]);
                mm_nt(batch * steps, g4, input, &dzb, self.data(w_ih), gx, true);
            }
        }
    }
}

/// Applies sigmoid to the i, f, o blocks and tanh to the candidate block.
fn activate_gates(row: &mut [f64], hidden: usize) {
    for (k, v) in row.iter_mut().enumerate() {
        *v = if k / hidden == 2 { v.tanh() } else { sigmoid(*v) };
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    b: usize,
    t: usize,
    c: usize,
    width: usize,
    stride: usize,
    padding: usize,
    t_out: usize,
) -> Vec<f64> {
    let cw = c * width;
    let mut cols = vec![0.0; b * t_out * cw];
    for bi in 0..b {
        for p in 0..t_out {
            let row = &mut cols[(bi * t_out + p) * cw..(bi * t_out + p + 1) * cw];
            for w in 0..width {
                let pos = (p * stride + w) as isize - padding as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let src = &x[(bi * t + pos as usize) * c..(bi * t + pos as usize + 1) * c];
                for ci in 0..c {
                    row[ci * width + w] = src[ci];
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &[f64],
    dx: &mut [f64],
    b: usize,
    t: usize,
    c: usize,
    width: usize,
    stride: usize,
    padding: usize,
    t_out: usize,
) {
    let cw = c * width;
    for bi in 0..b {
        for p in 0..t_out {
            let row = &dcols[(bi * t_out + p) * cw..(bi * t_out + p + 1) * cw];
            for w in 0..width {
                let pos = (p * stride + w) as isize - padding as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let dst = &mut dx[(bi * t + pos as usize) * c..(bi * t + pos as usize + 1) * c];
                for ci in 0..c {
                    dst[ci] += row[ci * width + w];
                }
            }
        }
    }
}

/// Softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
