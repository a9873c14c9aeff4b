//! Model building blocks and the architecture composer.
//!
//! A model is a left-to-right pipeline of stages over a `T×D` feature
//! sequence: spatial attention (SA) mixes the 3 SP tokens inside each
//! frame, a recurrent stage (`lstm` or bidirectional `bi`) encodes the
//! frame sequence, temporal attention (TA) mixes frames across the
//! sequence, and a frame-wise linear classifier emits 3 logits per
//! frame. [`compose`] instantiates any of the twelve studied stage
//! orderings from its architecture string.

use crate::engine::{Graph, Var};
use crate::{DasError, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// The twelve supported architecture strings.
pub const ARCHITECTURES: [&str; 12] = [
    "lstm", "bi", "bi-TA", "TA-bi", "bi-SA", "SA-bi", "SA-bi-TA", "TA-bi-SA", "SA-TA-bi",
    "TA-SA-bi", "bi-SA-TA", "bi-TA-SA",
];

/// Number of SP tokens a spatial-attention stage splits its input into.
pub const SPATIAL_TOKENS: usize = 3;

/// Declarative model description.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub arch: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Attention key dimensionality; `None` = min(d_model, 128).
    pub d_k: Option<usize>,
    pub num_classes: usize,
    /// Add the stage input back onto each attention output.
    pub residual: bool,
}

impl ModelSpec {
    pub fn new(arch: &str, input_dim: usize, hidden: usize, layers: usize) -> Self {
        ModelSpec {
            arch: arch.to_string(),
            input_dim,
            hidden,
            layers,
            dropout: 0.0,
            d_k: None,
            num_classes: 3,
            residual: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum StageKind {
    Recurrent { bidirectional: bool },
    SpatialAttention { d_k: usize },
    TemporalAttention { d_k: usize },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageDef {
    pub kind: StageKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Index range of this stage's tensors in `Model::params`.
    pub param_start: usize,
    pub param_len: usize,
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Array2<f64>,
}

/// A composed, initialized model.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub stages: Vec<StageDef>,
    pub params: Vec<NamedTensor>,
    pub init_seed: u64,
}

/// Attention weights recorded during a forward pass.
#[derive(Debug, Clone)]
pub enum AttentionWeights {
    /// Row-stochastic `T×T` map (queries × keys).
    Temporal(Array2<f64>),
    /// One row-stochastic `3×3` map per frame.
    Spatial(Vec<Array2<f64>>),
}

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub stage: usize,
    pub weights: AttentionWeights,
}

/// Handles produced by [`Model::forward`].
pub struct ForwardPass {
    pub logits: Var,
    /// Graph leaf per parameter, aligned with `Model::params`.
    pub param_vars: Vec<Var>,
    pub attention: Vec<AttentionTrace>,
}

fn gate_dim(hidden: usize) -> usize {
    4 * hidden
}

fn d_k_for(spec: &ModelSpec, d_model: usize) -> usize {
    spec.d_k.unwrap_or_else(|| d_model.min(128)).max(1)
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Parse an architecture string into stage tokens, rejecting anything
/// outside the twelve studied configurations.
fn parse_arch(arch: &str) -> Result<Vec<&str>> {
    if !ARCHITECTURES.contains(&arch) {
        return Err(DasError::Config(format!(
            "unsupported architecture '{arch}' (expected one of {ARCHITECTURES:?})"
        )));
    }
    Ok(arch.split('-').collect())
}

/// Instantiate and initialize a model from its spec.
///
/// When spatial attention follows the recurrent stage, the hidden size
/// is rounded up until the recurrent output width divides into the 3
/// hidden chunks; the returned model's spec carries the effective size.
pub fn compose(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let tokens = parse_arch(&spec.arch)?;
    if spec.input_dim == 0 || spec.hidden == 0 || spec.layers == 0 {
        return Err(DasError::Config(
            "input_dim, hidden and layers must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&spec.dropout) {
        return Err(DasError::Config(format!(
            "dropout must be in [0,1), got {}",
            spec.dropout
        )));
    }
    if spec.num_classes < 2 {
        return Err(DasError::Config("need at least 2 classes".into()));
    }

    let mut spec = spec.clone();
    // hidden rounding for SA stages fed by the recurrent output
    let recur_pos = tokens
        .iter()
        .position(|t| *t == "bi" || *t == "lstm")
        .expect("whitelisted arch has a recurrent stage");
    let dirs = if tokens[recur_pos] == "bi" { 2 } else { 1 };
    let sa_after_recurrent = tokens
        .iter()
        .enumerate()
        .any(|(i, t)| *t == "SA" && i > recur_pos);
    if sa_after_recurrent {
        while (dirs * spec.hidden) % SPATIAL_TOKENS != 0 {
            spec.hidden += 1;
        }
    }

    let mut rng = crate::rng::stream(seed, "init");
    let mut params: Vec<NamedTensor> = Vec::new();
    let mut stages = Vec::new();
    let mut width = spec.input_dim;

    for (si, token) in tokens.iter().enumerate() {
        let param_start = params.len();
        match *token {
            "SA" => {
                if width % SPATIAL_TOKENS != 0 {
                    return Err(DasError::Config(format!(
                        "spatial attention needs a width divisible by {SPATIAL_TOKENS}, got {width}"
                    )));
                }
                let d_sp = width / SPATIAL_TOKENS;
                let d_k = d_k_for(&spec, d_sp);
                for name in ["w_q", "w_k", "w_v"] {
                    params.push(NamedTensor {
                        name: format!("s{si}.sa.{name}"),
                        value: uniform_init(&mut rng, d_sp, d_k, d_sp),
                    });
                }
                params.push(NamedTensor {
                    name: format!("s{si}.sa.w_o"),
                    value: uniform_init(&mut rng, d_k, d_sp, d_k),
                });
                stages.push(StageDef {
                    kind: StageKind::SpatialAttention { d_k },
                    in_dim: width,
                    out_dim: width,
                    param_start,
                    param_len: 4,
                });
            }
            "TA" => {
                let d_k = d_k_for(&spec, width);
                for name in ["w_q", "w_k", "w_v"] {
                    params.push(NamedTensor {
                        name: format!("s{si}.ta.{name}"),
                        value: uniform_init(&mut rng, width, d_k, width),
                    });
                }
                params.push(NamedTensor {
                    name: format!("s{si}.ta.w_o"),
                    value: uniform_init(&mut rng, d_k, width, d_k),
                });
                stages.push(StageDef {
                    kind: StageKind::TemporalAttention { d_k },
                    in_dim: width,
                    out_dim: width,
                    param_start,
                    param_len: 4,
                });
            }
            "bi" | "lstm" => {
                let bidirectional = *token == "bi";
                let dirs = if bidirectional { 2 } else { 1 };
                let h = spec.hidden;
                for layer in 0..spec.layers {
                    let d_in = if layer == 0 { width } else { dirs * h };
                    for dir in 0..dirs {
                        let tag = if dir == 0 { "fwd" } else { "bwd" };
                        params.push(NamedTensor {
                            name: format!("s{si}.rnn.l{layer}.{tag}.w_ih"),
                            value: uniform_init(&mut rng, d_in, gate_dim(h), d_in),
                        });
                        params.push(NamedTensor {
                            name: format!("s{si}.rnn.l{layer}.{tag}.w_hh"),
                            value: uniform_init(&mut rng, h, gate_dim(h), h),
                        });
                        // forget-gate block starts at 1
                        let mut bias = Array2::zeros((1, gate_dim(h)));
                        bias.slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
                        params.push(NamedTensor {
                            name: format!("s{si}.rnn.l{layer}.{tag}.bias"),
                            value: bias,
                        });
                    }
                }
                stages.push(StageDef {
                    kind: StageKind::Recurrent { bidirectional },
                    in_dim: width,
                    out_dim: dirs * h,
                    param_start,
                    param_len: params.len() - param_start,
                });
                width = dirs * h;
            }
            other => {
                return Err(DasError::Config(format!("unknown stage token '{other}'")));
            }
        }
    }

    params.push(NamedTensor {
        name: "clf.w".into(),
        value: uniform_init(&mut rng, width, spec.num_classes, width),
    });
    params.push(NamedTensor {
        name: "clf.b".into(),
        value: Array2::zeros((1, spec.num_classes)),
    });

    Ok(Model {
        spec,
        stages,
        params,
        init_seed: seed,
    })
}

/// One LSTM step. `x_t`, `h_prev`, `c_prev` are `1×d_in` / `1×h` rows;
/// gate order along the `4h` axis is (i, f, g, o).
pub fn lstm_cell(
    g: &mut Graph,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
) -> Result<(Var, Var)> {
    let xw = g.matmul(x_t, w_ih)?;
    let hw = g.matmul(h_prev, w_hh)?;
    let pre = g.add(xw, hw)?;
    let gates = g.add(pre, bias)?;
    step_from_gates(g, gates, c_prev)
}

/// Shared tail of the cell: split pre-activations, update the state.
fn step_from_gates(g: &mut Graph, gates: Var, c_prev: Var) -> Result<(Var, Var)> {
    let h = g.shape(gates).1 / 4;
    let i_in = g.slice_cols(gates, 0, h)?;
    let f_in = g.slice_cols(gates, h, h)?;
    let g_in = g.slice_cols(gates, 2 * h, h)?;
    let o_in = g.slice_cols(gates, 3 * h, h)?;
    let i = g.sigmoid(i_in)?;
    let f = g.sigmoid(f_in)?;
    let gg = g.tanh(g_in)?;
    let o = g.sigmoid(o_in)?;
    let fc = g.mul(f, c_prev)?;
    let ig = g.mul(i, gg)?;
    let c = g.add(fc, ig)?;
    let tc = g.tanh(c)?;
    let h_t = g.mul(o, tc)?;
    Ok((h_t, c))
}

/// Run one direction over the whole sequence. The input projection
/// `seq·w_ih` is done in a single matmul; only the recurrence is
/// stepped. Returns per-frame hidden rows in forward time order.
fn run_direction(
    g: &mut Graph,
    seq: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let t = g.shape(seq).0;
    let xw = g.matmul(seq, w_ih)?;
    let mut h_prev = g.leaf(Array2::zeros((1, hidden)), false)?;
    let mut c_prev = g.leaf(Array2::zeros((1, hidden)), false)?;
    let mut rows = Vec::with_capacity(t);
    for step in 0..t {
        let idx = if reverse { t - 1 - step } else { step };
        let x_row = g.slice_rows(xw, idx, 1)?;
        let hw = g.matmul(h_prev, w_hh)?;
        let pre = g.add(x_row, hw)?;
        let gates = g.add(pre, bias)?;
        let (h_t, c_t) = step_from_gates(g, gates, c_prev)?;
        rows.push(h_t);
        h_prev = h_t;
        c_prev = c_t;
    }
    if reverse {
        rows.reverse();
    }
    Ok(rows)
}

/// Multi-layer (bi)LSTM over `seq`, with inter-layer dropout.
///
/// `stage_params[layer][dir] = (w_ih, w_hh, bias)`.
pub fn bilstm(
    g: &mut Graph,
    seq: Var,
    stage_params: &[Vec<(Var, Var, Var)>],
    hidden: usize,
    dropout: f64,
) -> Result<Var> {
    let mut current = seq;
    let layers = stage_params.len();
    for (layer, dirs) in stage_params.iter().enumerate() {
        let mut outs = Vec::with_capacity(dirs.len());
        for (dir, &(w_ih, w_hh, bias)) in dirs.iter().enumerate() {
            let rows = run_direction(g, current, w_ih, w_hh, bias, hidden, dir == 1)?;
            outs.push(g.concat_rows(&rows)?);
        }
        let mut out = if outs.len() == 2 {
            g.concat_cols(&outs)?
        } else {
            outs[0]
        };
        if layer + 1 < layers {
            out = g.dropout(out, dropout)?;
        }
        current = out;
    }
    Ok(current)
}

/// Scaled dot-product self-attention across frames.
///
/// Returns the re-projected context and the `T×T` weight matrix node.
pub fn temporal_attention(
    g: &mut Graph,
    f: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Var,
    d_k: usize,
) -> Result<(Var, Var)> {
    let q = g.matmul(f, w_q)?;
    let k = g.matmul(f, w_k)?;
    let v = g.matmul(f, w_v)?;
    let scores = g.matmul_nt(q, k)?;
    let scaled = g.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let a = g.softmax_rows(scaled)?;
    let ctx = g.matmul(a, v)?;
    let out = g.matmul(ctx, w_o)?;
    Ok((out, a))
}

/// Scaled dot-product self-attention across the 3 SP tokens of every
/// frame (projections shared across frames).
///
/// Returns the re-flattened output and one `3×3` weight node per frame.
pub fn spatial_attention(
    g: &mut Graph,
    f: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Var,
    d_k: usize,
) -> Result<(Var, Vec<Var>)> {
    let (t, width) = g.shape(f);
    if width % SPATIAL_TOKENS != 0 {
        return Err(DasError::Shape(format!(
            "spatial attention width {width} not divisible by {SPATIAL_TOKENS}"
        )));
    }
    let d_sp = width / SPATIAL_TOKENS;
    // row-major [T × 3d] reinterpreted as [3T × d] keeps tokens intact
    let tokens = g.reshape(f, SPATIAL_TOKENS * t, d_sp)?;
    let q = g.matmul(tokens, w_q)?;
    let k = g.matmul(tokens, w_k)?;
    let v = g.matmul(tokens, w_v)?;
    let inv_sqrt = 1.0 / (d_k as f64).sqrt();
    let mut rows = Vec::with_capacity(t);
    let mut weights = Vec::with_capacity(t);
    for frame in 0..t {
        let qt = g.slice_rows(q, SPATIAL_TOKENS * frame, SPATIAL_TOKENS)?;
        let kt = g.slice_rows(k, SPATIAL_TOKENS * frame, SPATIAL_TOKENS)?;
        let vt = g.slice_rows(v, SPATIAL_TOKENS * frame, SPATIAL_TOKENS)?;
        let scores = g.matmul_nt(qt, kt)?;
        let scaled = g.scale(scores, inv_sqrt)?;
        let a = g.softmax_rows(scaled)?;
        let ctx = g.matmul(a, vt)?;
        let out = g.matmul(ctx, w_o)?;
        rows.push(g.reshape(out, 1, width)?);
        weights.push(a);
    }
    let out = g.concat_rows(&rows)?;
    Ok((out, weights))
}

impl Model {
    /// Run the stage pipeline over a `T×D` input inside `g`.
    ///
    /// `record_attention` clones every attention weight matrix out of
    /// the graph (skip it in training loops).
    pub fn forward(
        &self,
        g: &mut Graph,
        input: &Array2<f64>,
        record_attention: bool,
    ) -> Result<ForwardPass> {
        if input.ncols() != self.spec.input_dim {
            return Err(DasError::Shape(format!(
                "input width {} does not match model input_dim {}",
                input.ncols(),
                self.spec.input_dim
            )));
        }
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), true))
            .collect::<Result<_>>()?;

        let mut x = g.leaf(input.clone(), false)?;
        let mut attention = Vec::new();
        for (si, stage) in self.stages.iter().enumerate() {
            let pv = &param_vars[stage.param_start..stage.param_start + stage.param_len];
            match stage.kind {
                StageKind::SpatialAttention { d_k } => {
                    let (out, ws) = spatial_attention(g, x, pv[0], pv[1], pv[2], pv[3], d_k)?;
                    let out = if self.spec.residual { g.add(out, x)? } else { out };
                    if record_attention {
                        attention.push(AttentionTrace {
                            stage: si,
                            weights: AttentionWeights::Spatial(
                                ws.iter().map(|w| g.value(*w).clone()).collect(),
                            ),
                        });
                    }
                    x = out;
                }
                StageKind::TemporalAttention { d_k } => {
                    let (out, a) = temporal_attention(g, x, pv[0], pv[1], pv[2], pv[3], d_k)?;
                    let out = if self.spec.residual { g.add(out, x)? } else { out };
                    if record_attention {
                        attention.push(AttentionTrace {
                            stage: si,
                            weights: AttentionWeights::Temporal(g.value(a).clone()),
                        });
                    }
                    x = out;
                }
                StageKind::Recurrent { bidirectional } => {
                    let dirs = if bidirectional { 2 } else { 1 };
                    let mut layers = Vec::with_capacity(self.spec.layers);
                    let mut cursor = 0;
                    for _ in 0..self.spec.layers {
                        let mut per_dir = Vec::with_capacity(dirs);
                        for _ in 0..dirs {
                            per_dir.push((pv[cursor], pv[cursor + 1], pv[cursor + 2]));
                            cursor += 3;
                        }
                        layers.push(per_dir);
                    }
                    x = bilstm(g, x, &layers, self.spec.hidden, self.spec.dropout)?;
                }
            }
        }
        let clf_w = param_vars[param_vars.len() - 2];
        let clf_b = param_vars[param_vars.len() - 1];
        let proj = g.matmul(x, clf_w)?;
        let logits = g.add_row(proj, clf_b)?;
        Ok(ForwardPass {
            logits,
            param_vars,
            attention,
        })
    }

    /// Frame-wise class probabilities and argmax predictions.
    pub fn predict(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Vec<usize>)> {
        let mut g = Graph::new();
        let pass = self.forward(&mut g, input, false)?;
        let probs = g.softmax_rows(pass.logits)?;
        let probs = g.value(probs).clone();
        let preds = probs
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                        if v > bv {
                            (i, v)
                        } else {
                            (bi, bv)
                        }
                    })
                    .0
            })
            .collect();
        Ok((probs, preds))
    }

    /// Closed-form trainable parameter count (cross-checked in tests
    /// against the instantiated tensor sizes).
    pub fn count_params(&self) -> usize {
        let spec = &self.spec;
        let mut total = 0usize;
        let mut width = spec.input_dim;
        for stage in &self.stages {
            match stage.kind {
                StageKind::SpatialAttention { d_k } => {
                    let d_sp = width / SPATIAL_TOKENS;
                    total += 4 * d_sp * d_k;
                }
                StageKind::TemporalAttention { d_k } => {
                    total += 4 * width * d_k;
                }
                StageKind::Recurrent { bidirectional } => {
                    let dirs = if bidirectional { 2 } else { 1 };
                    let h = spec.hidden;
                    for layer in 0..spec.layers {
                        let d_in = if layer == 0 { width } else { dirs * h };
                        total += dirs * 4 * (d_in * h + h * h + h);
                    }
                    width = dirs * h;
                }
            }
        }
        total + width * spec.num_classes + spec.num_classes
    }

    /// True when at least one stage is an attention stage.
    pub fn has_attention(&self) -> bool {
        self.stages
            .iter()
            .any(|s| !matches!(s.kind, StageKind::Recurrent { .. }))
    }
}
