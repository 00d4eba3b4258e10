//! The six compared architectures, built from [`crate::autodiff`] operations.
//!
//! Inputs are `B × W × C` feature batches; every model emits `B × n_classes`
//! logits and the LSTM autoencoder additionally reconstructs its input.
//!
//! Default topologies (all widths overridable through [`ModelSpec`]):
//!
//! | kind       | layers                                                                 |
//! |------------|------------------------------------------------------------------------|
//! | `DNN`      | flatten → dense 256 → 128 → 64 → logits                                |
//! | `CNN`      | conv(64, w5) → pool2 → conv(128, w3) → pool2 → mean over time → dense 64 → logits |
//! | `CNN_LSTM` | conv(64, w5) → pool2 → LSTM(128) → last hidden → logits                |
//! | `LSTM_CNN` | LSTM(128) → conv(64, w3) → mean over time → logits                     |
//! | `LSTM`     | LSTM(128) → LSTM(128) → last hidden → logits                           |
//! | `LSTM_AE`  | encoder LSTM 176 → 128 → 64 (latent) → logits; decoder LSTM 64 → 128 → 176 → per-step linear |
//!
//! Hidden layers use ReLU; dropout sits in front of the classifier head (and
//! after every hidden dense layer of the DNN). Convolutions are stride 1
//! without padding.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax, Checkpoint, Graph, NamedTensor, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "DNN")]
    Dnn,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "CNN_LSTM")]
    CnnLstm,
    #[serde(rename = "LSTM_CNN")]
    LstmCnn,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "LSTM_AE")]
    LstmAe,
}

impl ArchKind {
    pub const ALL: [ArchKind; 6] = [
        ArchKind::Dnn,
        ArchKind::Cnn,
        ArchKind::CnnLstm,
        ArchKind::LstmCnn,
        ArchKind::Lstm,
        ArchKind::LstmAe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Dnn => "DNN",
            ArchKind::Cnn => "CNN",
            ArchKind::CnnLstm => "CNN_LSTM",
            ArchKind::LstmCnn => "LSTM_CNN",
            ArchKind::Lstm => "LSTM",
            ArchKind::LstmAe => "LSTM_AE",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ArchKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown architecture '{s}'")))
    }
}

/// Architecture hyper-parameters. `widths` is interpreted per kind:
///
/// * `DNN`: hidden dense widths
/// * `CNN`: `[conv1 filters, conv2 filters, dense width]`
/// * `CNN_LSTM`: `[conv filters, lstm hidden]`
/// * `LSTM_CNN`: `[lstm hidden, conv filters]`
/// * `LSTM`: stacked LSTM hidden widths
/// * `LSTM_AE`: encoder widths before the latent layer; the decoder mirrors
///   `widths ++ [latent]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ArchKind,
    pub input_len: usize,
    pub input_channels: usize,
    pub n_classes: usize,
    pub widths: Vec<usize>,
    pub kernel_widths: Vec<usize>,
    pub pool: usize,
    pub dropout: f64,
    pub latent: usize,
    pub recon_weight: f64,
}

/// Largest width, length or class count a spec may declare.
pub const MAX_DIM: usize = 1 << 20;

impl ModelSpec {
    pub fn default_for(kind: ArchKind, input_len: usize, input_channels: usize, n_classes: usize) -> Self {
        let (widths, kernel_widths): (Vec<usize>, Vec<usize>) = match kind {
            ArchKind::Dnn => (vec![256, 128, 64], vec![]),
            ArchKind::Cnn => (vec![64, 128, 64], vec![5, 3]),
            ArchKind::CnnLstm => (vec![64, 128], vec![5]),
            ArchKind::LstmCnn => (vec![128, 64], vec![3]),
            ArchKind::Lstm => (vec![128, 128], vec![]),
            ArchKind::LstmAe => (vec![176, 128], vec![]),
        };
        ModelSpec {
            kind,
            input_len,
            input_channels,
            n_classes,
            widths,
            kernel_widths,
            pool: 2,
            dropout: 0.2,
            latent: if kind == ArchKind::LstmAe { 64 } else { 0 },
            recon_weight: if kind == ArchKind::LstmAe { 1.0 } else { 0.0 },
        }
    }

    /// Small widths for gradient checks and smoke tests.
    pub fn toy(kind: ArchKind, input_len: usize, input_channels: usize, n_classes: usize) -> Self {
        let mut s = Self::default_for(kind, input_len, input_channels, n_classes);
        s.widths = match kind {
            ArchKind::Dnn => vec![6, 5],
            ArchKind::Cnn => vec![4, 5, 4],
            ArchKind::CnnLstm => vec![4, 3],
            ArchKind::LstmCnn => vec![4, 3],
            ArchKind::Lstm => vec![4, 3],
            ArchKind::LstmAe => vec![5, 4],
        };
        s.kernel_widths = match kind {
            ArchKind::Cnn => vec![3, 2],
            ArchKind::CnnLstm | ArchKind::LstmCnn => vec![3],
            _ => vec![],
        };
        if kind == ArchKind::LstmAe {
            s.latent = 3;
        }
        s
    }

    /// Recurrent layers in the model.
    pub fn recurrent_layers(&self) -> usize {
        match self.kind {
            ArchKind::Dnn | ArchKind::Cnn => 0,
            ArchKind::CnnLstm | ArchKind::LstmCnn => 1,
            ArchKind::Lstm => self.widths.len(),
            ArchKind::LstmAe => 2 * (self.widths.len() + 1),
        }
    }

    fn encoder_widths(&self) -> Vec<usize> {
        let mut w = self.widths.clone();
        w.push(self.latent);
        w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(format!("{}: {m}", self.kind)));
        if self.input_len == 0 || self.input_channels == 0 || self.n_classes == 0 {
            return bad("input shape and class count must be positive".into());
        }
        if self.widths.contains(&0) || self.kernel_widths.contains(&0) {
            return bad("zero-width layer".into());
        }
        let dims = [self.input_len, self.input_channels, self.n_classes, self.latent, self.pool];
        if dims.iter().chain(&self.widths).chain(&self.kernel_widths).any(|&d| d > MAX_DIM) {
            return bad(format!("dimension above {MAX_DIM}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.recon_weight >= 0.0 && self.recon_weight.is_finite()) {
            return bad(format!("reconstruction weight {}", self.recon_weight));
        }
        let (n_widths, n_kernels): (Option<usize>, usize) = match self.kind {
            ArchKind::Dnn => (None, 0),
            ArchKind::Cnn => (Some(3), 2),
            ArchKind::CnnLstm | ArchKind::LstmCnn => (Some(2), 1),
            ArchKind::Lstm => (None, 0),
            ArchKind::LstmAe => (None, 0),
        };
        if let Some(n) = n_widths {
            if self.widths.len() != n {
                return bad(format!("expects {n} widths, got {}", self.widths.len()));
            }
        } else if self.widths.is_empty() && self.kind != ArchKind::LstmAe {
            return bad("needs at least one width".into());
        }
        if self.kernel_widths.len() != n_kernels {
            return bad(format!(
                "expects {n_kernels} kernel widths, got {}",
                self.kernel_widths.len()
            ));
        }
        if self.kind == ArchKind::LstmAe && self.latent == 0 {
            return bad("latent size must be positive".into());
        }
        if matches!(self.kind, ArchKind::Cnn | ArchKind::CnnLstm) && self.pool == 0 {
            return bad("pool size must be positive".into());
        }
        // Sequence length through the convolutional stages.
        let mut t = self.input_len;
        for (i, &k) in self.kernel_widths.iter().enumerate() {
            if k > t {
                return bad(format!("kernel width {k} exceeds sequence length {t}"));
            }
            t = t - k + 1;
            if matches!(self.kind, ArchKind::Cnn | ArchKind::CnnLstm) {
                if self.pool > t {
                    return bad(format!("pool {} exceeds sequence length {t} after conv {i}", self.pool));
                }
                t /= self.pool;
            }
        }
        Ok(())
    }

    /// Parameter shapes in declaration order. This is also the checkpoint
    /// order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let dense = |out: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize| {
            out.push((format!("{name}.weight"), vec![i, o]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        let lstm = |out: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, h: usize| {
            out.push((format!("{name}.w_ih"), vec![i, 4 * h]));
            out.push((format!("{name}.w_hh"), vec![h, 4 * h]));
            out.push((format!("{name}.bias"), vec![4 * h]));
        };
        let conv = |out: &mut Vec<(String, Vec<usize>)>, name: &str, c: usize, k: usize, w: usize| {
            out.push((format!("{name}.kernels"), vec![k, c, w]));
            out.push((format!("{name}.bias"), vec![k]));
        };
        let (c, n) = (self.input_channels, self.n_classes);
        match self.kind {
            ArchKind::Dnn => {
                let mut prev = self.input_len * c;
                for (i, &w) in self.widths.iter().enumerate() {
                    dense(&mut out, &format!("dense{i}"), prev, w);
                    prev = w;
                }
                dense(&mut out, "head", prev, n);
            }
            ArchKind::Cnn => {
                let (f1, f2, d) = (self.widths[0], self.widths[1], self.widths[2]);
                conv(&mut out, "conv0", c, f1, self.kernel_widths[0]);
                conv(&mut out, "conv1", f1, f2, self.kernel_widths[1]);
                dense(&mut out, "dense0", f2, d);
                dense(&mut out, "head", d, n);
            }
            ArchKind::CnnLstm => {
                let (f, h) = (self.widths[0], self.widths[1]);
                conv(&mut out, "conv0", c, f, self.kernel_widths[0]);
                lstm(&mut out, "lstm0", f, h);
                dense(&mut out, "head", h, n);
            }
            ArchKind::LstmCnn => {
                let (h, f) = (self.widths[0], self.widths[1]);
                lstm(&mut out, "lstm0", c, h);
                conv(&mut out, "conv0", h, f, self.kernel_widths[0]);
                dense(&mut out, "head", f, n);
            }
            ArchKind::Lstm => {
                let mut prev = c;
                for (i, &h) in self.widths.iter().enumerate() {
                    lstm(&mut out, &format!("lstm{i}"), prev, h);
                    prev = h;
                }
                dense(&mut out, "head", prev, n);
            }
            ArchKind::LstmAe => {
                let enc = self.encoder_widths();
                let mut prev = c;
                for (i, &h) in enc.iter().enumerate() {
                    lstm(&mut out, &format!("encoder{i}"), prev, h);
                    prev = h;
                }
                dense(&mut out, "head", self.latent, n);
                for (i, &h) in enc.iter().rev().enumerate() {
                    lstm(&mut out, &format!("decoder{i}"), prev, h);
                    prev = h;
                }
                dense(&mut out, "reconstruct", prev, c);
            }
        }
        out
    }
}

/// Training or evaluation behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks derived from `dropout_seed`.
    Train { dropout_seed: u64 },
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    pub logits: Var,
    pub reconstruction: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<NamedTensor>,
}

fn init_bound(name: &str, shape: &[usize]) -> f64 {
    // LSTM tensors use the hidden width as fan-in; dense weights their input
    // width; convolutions channels × kernel width.
    let fan_in = if name.ends_with("w_ih") || name.ends_with("w_hh") {
        shape[shape.len() - 1] / 4
    } else if name.ends_with("kernels") {
        shape[1] * shape[2]
    } else if name.ends_with("weight") {
        shape[0]
    } else {
        0
    };
    if fan_in > 0 {
        1.0 / (fan_in as f64).sqrt()
    } else {
        1.0
    }
}

fn mix(seed: u64, site: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ site.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds a model with seeded `U(−1/√fan_in, 1/√fan_in)` parameters.
pub fn build(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = spec.param_shapes();
    // Bias bounds follow the weight of the same layer.
    let mut params = Vec::with_capacity(shapes.len());
    let mut bound = 1.0;
    for (name, shape) in shapes {
        if !name.ends_with("bias") {
            bound = init_bound(&name, &shape);
        }
        let tensor = Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound));
        params.push(NamedTensor { name, tensor });
    }
    Ok(Model {
        spec: spec.clone(),
        params,
    })
}

/// Closed-form parameter count of a spec, from layer arithmetic alone.
pub fn expected_param_count(spec: &ModelSpec) -> usize {
    let dense = |i: usize, o: usize| i * o + o;
    let lstm = |i: usize, h: usize| 4 * (h * (i + h) + h);
    let conv = |c: usize, k: usize, w: usize| k * c * w + k;
    let (c, n) = (spec.input_channels, spec.n_classes);
    match spec.kind {
        ArchKind::Dnn => {
            let mut dims = vec![spec.input_len * c];
            dims.extend(&spec.widths);
            dims.push(n);
            dims.windows(2).map(|w| dense(w[0], w[1])).sum()
        }
        ArchKind::Cnn => {
            let w = &spec.widths;
            conv(c, w[0], spec.kernel_widths[0])
                + conv(w[0], w[1], spec.kernel_widths[1])
                + dense(w[1], w[2])
                + dense(w[2], n)
        }
        ArchKind::CnnLstm => {
            conv(c, spec.widths[0], spec.kernel_widths[0])
                + lstm(spec.widths[0], spec.widths[1])
                + dense(spec.widths[1], n)
        }
        ArchKind::LstmCnn => {
            lstm(c, spec.widths[0])
                + conv(spec.widths[0], spec.widths[1], spec.kernel_widths[0])
                + dense(spec.widths[1], n)
        }
        ArchKind::Lstm => {
            let mut dims = vec![c];
            dims.extend(&spec.widths);
            dims.windows(2).map(|w| lstm(w[0], w[1])).sum::<usize>() + dense(*dims.last().unwrap(), n)
        }
        ArchKind::LstmAe => {
            let mut enc = vec![c];
            enc.extend(&spec.widths);
            enc.push(spec.latent);
            let encoder: usize = enc.windows(2).map(|w| lstm(w[0], w[1])).sum();
            let mut dec = vec![spec.latent];
            dec.extend(enc[1..].iter().rev());
            let decoder: usize = dec.windows(2).map(|w| lstm(w[0], w[1])).sum();
            encoder + dense(spec.latent, n) + decoder + dense(*dec.last().unwrap(), c)
        }
    }
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Sets every parameter to `value`.
    pub fn fill(&mut self, value: f64) {
        for p in &mut self.params {
            p.tensor.data_mut().iter_mut().for_each(|v| *v = value);
        }
    }

    /// Registers the parameters as gradient-receiving leaves of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| graph.param(p.tensor.clone())).collect()
    }

    fn check_input(&self, graph: &Graph, input: Var) -> Result<usize> {
        let s = graph.shape(input);
        match *s {
            [b, t, c] if t == self.spec.input_len && c == self.spec.input_channels => Ok(b),
            _ => Err(Error::Dimension(format!(
                "{} expects [B×{}×{}] input, got {s:?}",
                self.spec.kind, self.spec.input_len, self.spec.input_channels
            ))),
        }
    }

    /// Full forward pass; the LSTM autoencoder also returns its reconstruction.
    pub fn forward(&self, graph: &mut Graph, params: &[Var], input: Var, mode: Mode) -> Result<ModelOutput> {
        self.forward_with(graph, params, input, mode, true)
    }

    /// Forward pass with the reconstruction branch optional.
    pub fn forward_with(
        &self,
        graph: &mut Graph,
        params: &[Var],
        input: Var,
        mode: Mode,
        reconstruct: bool,
    ) -> Result<ModelOutput> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameter handles for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        let batch = self.check_input(graph, input)?;
        let spec = &self.spec;
        let mut p = params.iter().copied();
        let mut next = || p.next().expect("parameter list matches spec");
        let mut site = 0u64;
        let mut dropout = |g: &mut Graph, x: Var| -> Result<Var> {
            site += 1;
            match mode {
                Mode::Train { dropout_seed } if spec.dropout > 0.0 => {
                    g.dropout(x, spec.dropout, mix(dropout_seed, site))
                }
                _ => Ok(x),
            }
        };
        fn dense(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
            let y = g.matmul(x, w)?;
            g.add_bias(y, b)
        }
        fn conv(g: &mut Graph, x: Var, k: Var, b: Var) -> Result<Var> {
            let y = g.conv1d(x, k, 1, 0)?;
            let y = g.add_bias(y, b)?;
            g.relu(y)
        }
        fn last_step(g: &mut Graph, x: Var) -> Result<Var> {
            let t = g.shape(x)[1];
            g.select_time(x, t - 1)
        }

        let t = spec.input_len;
        let mut reconstruction = None;
        let logits = match spec.kind {
            ArchKind::Dnn => {
                let mut h = graph.reshape(input, &[batch, t * spec.input_channels])?;
                for _ in &spec.widths {
                    let (w, b) = (next(), next());
                    h = dense(graph, h, w, b)?;
                    h = graph.relu(h)?;
                    h = dropout(graph, h)?;
                }
                let (w, b) = (next(), next());
                dense(graph, h, w, b)?
            }
            ArchKind::Cnn => {
                let (k0, b0, k1, b1) = (next(), next(), next(), next());
                let h = conv(graph, input, k0, b0)?;
                let h = graph.max_pool1d(h, spec.pool)?;
                let h = conv(graph, h, k1, b1)?;
                let h = graph.max_pool1d(h, spec.pool)?;
                let h = graph.mean_time(h)?;
                let (w, b) = (next(), next());
                let h = dense(graph, h, w, b)?;
                let h = graph.relu(h)?;
                let h = dropout(graph, h)?;
                let (w, b) = (next(), next());
                dense(graph, h, w, b)?
            }
            ArchKind::CnnLstm => {
                let (k0, b0) = (next(), next());
                let h = conv(graph, input, k0, b0)?;
                let h = graph.max_pool1d(h, spec.pool)?;
                let (wi, wh, bl) = (next(), next(), next());
                let h = graph.lstm_seq(h, wi, wh, bl)?;
                let h = last_step(graph, h)?;
                let h = dropout(graph, h)?;
                let (w, b) = (next(), next());
                dense(graph, h, w, b)?
            }
            ArchKind::LstmCnn => {
                let (wi, wh, bl) = (next(), next(), next());
                let h = graph.lstm_seq(input, wi, wh, bl)?;
                let (k0, b0) = (next(), next());
                let h = conv(graph, h, k0, b0)?;
                let h = graph.mean_time(h)?;
                let h = dropout(graph, h)?;
                let (w, b) = (next(), next());
                dense(graph, h, w, b)?
            }
            ArchKind::Lstm => {
                let mut h = input;
                for _ in &spec.widths {
                    let (wi, wh, bl) = (next(), next(), next());
                    h = graph.lstm_seq(h, wi, wh, bl)?;
                }
                let h = last_step(graph, h)?;
                let h = dropout(graph, h)?;
                let (w, b) = (next(), next());
                dense(graph, h, w, b)?
            }
            ArchKind::LstmAe => {
                let layers = spec.widths.len() + 1;
                let mut h = input;
                for _ in 0..layers {
                    let (wi, wh, bl) = (next(), next(), next());
                    h = graph.lstm_seq(h, wi, wh, bl)?;
                }
                let latent = last_step(graph, h)?;
                let z = dropout(graph, latent)?;
                let (w, b) = (next(), next());
                let logits = dense(graph, z, w, b)?;
                if reconstruct {
                    let mut d = graph.repeat_time(latent, t)?;
                    for _ in 0..layers {
                        let (wi, wh, bl) = (next(), next(), next());
                        d = graph.lstm_seq(d, wi, wh, bl)?;
                    }
                    let (w, b) = (next(), next());
                    reconstruction = Some(dense(graph, d, w, b)?);
                }
                logits
            }
        };
        Ok(ModelOutput {
            logits,
            reconstruction,
        })
    }

    /// Training objective: mean cross-entropy, plus `λ·mse(reconstruction,
    /// input)` for the LSTM autoencoder.
    pub fn loss(&self, graph: &mut Graph, out: &ModelOutput, input: Var, labels: &[usize]) -> Result<Var> {
        let ce = graph.cross_entropy(out.logits, labels)?;
        match out.reconstruction {
            Some(r) if self.spec.kind == ArchKind::LstmAe => {
                let mse = graph.mse(r, input)?;
                let weighted = graph.scale(mse, self.spec.recon_weight)?;
                graph.add(ce, weighted)
            }
            _ => Ok(ce),
        }
    }

    /// Evaluation-mode logits, one row per batch entry.
    pub fn logits(&self, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.tensor.clone())).collect();
        let x = g.constant(batch.clone());
        let out = self.forward_with(&mut g, &params, x, Mode::Eval, false)?;
        let n = self.spec.n_classes;
        Ok(g.value(out.logits).data().chunks(n).map(<[f64]>::to_vec).collect())
    }

    /// Predicted class per row (argmax, lowest index on ties).
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(batch)?.iter().map(|r| argmax(r)).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: serde_json::to_string(&self.spec).expect("spec serializes"),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(&ck.header)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != ck.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, spec declares {}",
                ck.params.len(),
                shapes.len()
            )));
        }
        for ((name, shape), p) in shapes.iter().zip(&ck.params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match declared {name} {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Model {
            spec,
            params: ck.params,
        })
    }
}
