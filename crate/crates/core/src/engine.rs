//! Dense-matrix autodiff core.
//!
//! A [`Graph`] is a tape of matrix ops built during one forward pass;
//! [`Graph::backward`] runs reverse-mode accumulation over that tape.
//! Everything is `f64`, shapes are explicit `rows x cols` matrices, and
//! the only broadcast is the bias-row add: backward rules stay small
//! enough to audit by hand and are cross-checked against central
//! differences by [`grad_check`].
//!
//! Every op validates output finiteness; a NaN/Inf anywhere trips a
//! `Numeric` error instead of propagating silently.

use crate::{DasError, Result};
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// a · b
    Matmul(Var, Var),
    /// a · bᵀ
    MatmulNT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// x [m×n] + row bias [1×n]
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    /// mask entries are 0 or 1/(1-p); applied multiplicatively.
    Dropout { x: Var, mask: Array2<f64> },
    SliceRows { x: Var, start: usize, len: usize },
    SliceCols { x: Var, start: usize, len: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    SumAll(Var),
    /// mean over rows of -log softmax(logits)[label]; caches the row
    /// softmax for the backward rule.
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape over `f64` matrices.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
    training: bool,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Graph {
    /// Inference-mode graph (dropout is the identity).
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: false,
            dropout_rng: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            training: true,
            dropout_rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.iter().all(|x| x.is_finite()) {
            return Err(DasError::Numeric(
                "non-finite value produced by graph op".into(),
            ));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Insert a leaf holding `value`.
    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(DasError::Shape(format!(
                "matmul: {m}x{ka} . {kb}x{n} inner dims differ"
            )));
        }
        let value = dot(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Matmul(a, b), rg)
    }

    /// a · bᵀ without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, ka) = self.shape(a);
        let (_, kb) = self.shape(b);
        if ka != kb {
            return Err(DasError::Shape(format!(
                "matmul_nt: inner dims differ ({ka} vs {kb})"
            )));
        }
        let value = dot_nt(&self.nodes[a.0].value, &self.nodes[b.0].value);
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::MatmulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(DasError::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(DasError::Shape(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.nodes[x.0].value.mapv(|v| v * c);
        let rg = self.needs(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// Broadcast-add a `1×n` bias row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.shape(x);
        let (bm, bn) = self.shape(bias);
        if bm != 1 || bn != n {
            return Err(DasError::Shape(format!(
                "add_row: bias must be 1x{n}, got {bm}x{bn}"
            )));
        }
        let value = &self.nodes[x.0].value + &self.nodes[bias.0].value;
        let rg = self.needs(x) || self.needs(bias);
        self.push(value, Op::AddRow(x, bias), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.mapv(sigmoid_scalar);
        let rg = self.needs(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.mapv(f64::tanh);
        let rg = self.needs(x);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Row-wise softmax with max subtraction; rows sum to 1.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows_value(&self.nodes[x.0].value);
        let rg = self.needs(x);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity at `p = 0` or in inference mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(DasError::Config(format!(
                "dropout probability must be in [0,1), got {p}"
            )));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let rng = self
            .dropout_rng
            .as_mut()
            .ok_or_else(|| DasError::Config("training graph without dropout rng".into()))?;
        let keep = 1.0 / (1.0 - p);
        let dim = self.nodes[x.0].value.dim();
        let mask = Array2::from_shape_fn(dim, |_| {
            if rng.gen::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        let value = &self.nodes[x.0].value * &mask;
        let rg = self.needs(x);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, _) = self.shape(x);
        if start + len > m {
            return Err(DasError::Shape(format!(
                "slice_rows: {start}+{len} out of {m} rows"
            )));
        }
        let value = self.nodes[x.0]
            .value
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        let rg = self.needs(x);
        self.push(value, Op::SliceRows { x, start, len }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (_, n) = self.shape(x);
        if start + len > n {
            return Err(DasError::Shape(format!(
                "slice_cols: {start}+{len} out of {n} cols"
            )));
        }
        let value = self.nodes[x.0]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        let rg = self.needs(x);
        self.push(value, Op::SliceCols { x, start, len }, rg)
    }

    /// Stack inputs vertically (all must share the column count).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(DasError::Shape("concat_rows: empty input".into()));
        }
        let n = self.shape(parts[0]).1;
        let m: usize = parts.iter().map(|v| self.shape(*v).0).sum();
        let mut value = Array2::zeros((m, n));
        let mut at = 0;
        for v in parts {
            let (pm, pn) = self.shape(*v);
            if pn != n {
                return Err(DasError::Shape(format!(
                    "concat_rows: col mismatch {pn} vs {n}"
                )));
            }
            value
                .slice_mut(ndarray::s![at..at + pm, ..])
                .assign(&self.nodes[v.0].value);
            at += pm;
        }
        let rg = parts.iter().any(|v| self.needs(*v));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Stack inputs horizontally (all must share the row count).
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(DasError::Shape("concat_cols: empty input".into()));
        }
        let m = self.shape(parts[0]).0;
        let n: usize = parts.iter().map(|v| self.shape(*v).1).sum();
        let mut value = Array2::zeros((m, n));
        let mut at = 0;
        for v in parts {
            let (pm, pn) = self.shape(*v);
            if pm != m {
                return Err(DasError::Shape(format!(
                    "concat_cols: row mismatch {pm} vs {m}"
                )));
            }
            value
                .slice_mut(ndarray::s![.., at..at + pn])
                .assign(&self.nodes[v.0].value);
            at += pn;
        }
        let rg = parts.iter().any(|v| self.needs(*v));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Reinterpret a row-major `m×n` matrix as `rows×cols`
    /// (`m·n = rows·cols`).
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.shape(x);
        if m * n != rows * cols {
            return Err(DasError::Shape(format!(
                "reshape: {m}x{n} -> {rows}x{cols} element count differs"
            )));
        }
        let value = self.nodes[x.0]
            .value
            .clone()
            .into_shape_with_order((rows, cols))
            .map_err(|e| DasError::Shape(format!("reshape: {e}")))?;
        let rg = self.needs(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Sum of all entries, as a `1×1` matrix.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.sum();
        let rg = self.needs(x);
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(x), rg)
    }

    /// Mean over rows of `-log softmax(logits)[label]`, as `1×1`.
    ///
    /// Computed with log-sum-exp stabilization.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (t, c) = self.shape(logits);
        if labels.len() != t {
            return Err(DasError::Shape(format!(
                "cross_entropy: {t} logit rows vs {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(DasError::Config(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let lv = &self.nodes[logits.0].value;
        let probs = softmax_rows_value(lv);
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[label];
        }
        loss /= t as f64;
        let rg = self.needs(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Reverse-mode accumulation from a `1×1` loss node.
    ///
    /// Gradients from any previous call are discarded first, so repeated
    /// calls yield identical results.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(DasError::Shape(format!(
                "backward: loss must be 1x1, got {:?}",
                self.shape(loss)
            )));
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        self.grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &Array2<f64>) -> Result<()> {
        enum Rule {
            None,
            One(Var, Array2<f64>),
            Two(Var, Array2<f64>, Var, Array2<f64>),
            Many(Vec<(Var, Array2<f64>)>),
        }
        let rule = match &self.nodes[i].op {
            Op::Leaf => Rule::None,
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let da = dot_nt(g, &self.nodes[b.0].value);
                let db = dot_tn(&self.nodes[a.0].value, g);
                Rule::Two(a, da, b, db)
            }
            Op::MatmulNT(a, b) => {
                let (a, b) = (*a, *b);
                let da = dot(g, &self.nodes[b.0].value);
                let db = dot_tn(g, &self.nodes[a.0].value);
                Rule::Two(a, da, b, db)
            }
            Op::Add(a, b) => Rule::Two(*a, g.clone(), *b, g.clone()),
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da = g * &self.nodes[b.0].value;
                let db = g * &self.nodes[a.0].value;
                Rule::Two(a, da, b, db)
            }
            Op::Scale(x, c) => Rule::One(*x, g.mapv(|v| v * c)),
            Op::AddRow(x, bias) => {
                let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                Rule::Two(*x, g.clone(), *bias, db)
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                Rule::One(*x, g * &y.mapv(|v| v * (1.0 - v)))
            }
            Op::Tanh(x) => {
                let y = &self.nodes[i].value;
                Rule::One(*x, g * &y.mapv(|v| 1.0 - v * v))
            }
            Op::Relu(x) => {
                let y = &self.nodes[i].value;
                Rule::One(*x, g * &y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[i].value;
                let mut dx = g * y;
                for (mut dxr, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = dxr.iter().sum();
                    ndarray::Zip::from(&mut dxr).and(&yr).for_each(|d, &yv| {
                        *d -= dot * yv;
                    });
                }
                Rule::One(*x, dx)
            }
            Op::Dropout { x, mask } => Rule::One(*x, g * mask),
            Op::SliceRows { x, start, len } => {
                let (m, n) = self.nodes[x.0].value.dim();
                let mut dx = Array2::zeros((m, n));
                dx.slice_mut(ndarray::s![*start..*start + *len, ..]).assign(g);
                Rule::One(*x, dx)
            }
            Op::SliceCols { x, start, len } => {
                let (m, n) = self.nodes[x.0].value.dim();
                let mut dx = Array2::zeros((m, n));
                dx.slice_mut(ndarray::s![.., *start..*start + *len]).assign(g);
                Rule::One(*x, dx)
            }
            Op::ConcatRows(parts) => {
                let mut deltas = Vec::with_capacity(parts.len());
                let mut at = 0;
                for v in parts {
                    let pm = self.nodes[v.0].value.dim().0;
                    deltas.push((*v, g.slice(ndarray::s![at..at + pm, ..]).to_owned()));
                    at += pm;
                }
                Rule::Many(deltas)
            }
            Op::ConcatCols(parts) => {
                let mut deltas = Vec::with_capacity(parts.len());
                let mut at = 0;
                for v in parts {
                    let pn = self.nodes[v.0].value.dim().1;
                    deltas.push((*v, g.slice(ndarray::s![.., at..at + pn]).to_owned()));
                    at += pn;
                }
                Rule::Many(deltas)
            }
            Op::Reshape(x) => {
                let dim = self.nodes[x.0].value.dim();
                let dx = g
                    .clone()
                    .into_shape_with_order(dim)
                    .map_err(|e| DasError::Shape(format!("reshape backward: {e}")))?;
                Rule::One(*x, dx)
            }
            Op::SumAll(x) => {
                let dim = self.nodes[x.0].value.dim();
                Rule::One(*x, Array2::from_elem(dim, g[[0, 0]]))
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let t = labels.len() as f64;
                let mut dl = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    dl[[i, label]] -= 1.0;
                }
                dl.mapv_inplace(|v| v * g[[0, 0]] / t);
                Rule::One(*logits, dl)
            }
        };
        match rule {
            Rule::None => {}
            Rule::One(v, d) => self.accumulate(v, d),
            Rule::Two(a, da, b, db) => {
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Rule::Many(deltas) => {
                for (v, d) in deltas {
                    self.accumulate(v, d);
                }
            }
        }
        Ok(())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows_value(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// `a · b`. Thin row/column shapes take hand loops: the recurrent path
/// issues thousands of `1×k · k×n` products per sequence and the
/// general GEMM's packing overhead dominates at those sizes.
pub fn dot(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (_, n) = b.dim();
    if m == 1 {
        if let (Some(av), Some(bv)) = (a.as_slice(), b.as_slice()) {
            let mut y = vec![0.0; n];
            for (kk, &x) in av.iter().enumerate() {
                if x != 0.0 {
                    let brow = &bv[kk * n..(kk + 1) * n];
                    for (yj, &bj) in y.iter_mut().zip(brow) {
                        *yj += x * bj;
                    }
                }
            }
            return Array2::from_shape_vec((1, n), y).unwrap();
        }
    }
    if k == 1 {
        if let (Some(av), Some(bv)) = (a.as_slice(), b.as_slice()) {
            let mut y = Vec::with_capacity(m * n);
            for &x in av {
                y.extend(bv.iter().map(|&bj| x * bj));
            }
            return Array2::from_shape_vec((m, n), y).unwrap();
        }
    }
    a.dot(b)
}

/// `a · bᵀ` for row-major operands.
pub fn dot_nt(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, _) = a.dim();
    let (n, _) = b.dim();
    if m <= 4 || n <= 4 {
        if let (Some(av), Some(bv)) = (a.as_slice(), b.as_slice()) {
            let k = a.dim().1;
            let mut y = Vec::with_capacity(m * n);
            for i in 0..m {
                let ar = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let br = &bv[j * k..(j + 1) * k];
                    y.push(ar.iter().zip(br).map(|(&x, &z)| x * z).sum());
                }
            }
            return Array2::from_shape_vec((m, n), y).unwrap();
        }
    }
    a.dot(&b.t())
}

/// `aᵀ · b` for row-major operands.
pub fn dot_tn(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (_, n) = b.dim();
    if m == 1 {
        // outer product: k×1 . 1×n
        if let (Some(av), Some(bv)) = (a.as_slice(), b.as_slice()) {
            let mut y = Vec::with_capacity(k * n);
            for &x in av {
                y.extend(bv.iter().map(|&bj| x * bj));
            }
            return Array2::from_shape_vec((k, n), y).unwrap();
        }
    }
    a.t().dot(b)
}

/// Max relative error between analytic gradients and central
/// differences.
///
/// `f` returns the scalar objective and its analytic gradients for the
/// given parameter values. Every coordinate is probed when the total
/// parameter count does not exceed `max_probes`; otherwise `max_probes`
/// coordinates are sampled (seeded) across the parameter list.
pub fn grad_check<F>(mut f: F, theta: &[Array2<f64>], h: f64, max_probes: usize, seed: u64) -> f64
where
    F: FnMut(&[Array2<f64>]) -> (f64, Vec<Array2<f64>>),
{
    let (_, analytic) = f(theta);
    assert_eq!(analytic.len(), theta.len(), "gradient count mismatch");
    for (g, t) in analytic.iter().zip(theta) {
        assert_eq!(g.dim(), t.dim(), "gradient shape mismatch");
    }

    let total: usize = theta.iter().map(|t| t.len()).sum();
    let coords: Vec<(usize, usize)> = if total <= max_probes {
        theta
            .iter()
            .enumerate()
            .flat_map(|(pi, t)| (0..t.len()).map(move |ci| (pi, ci)))
            .collect()
    } else {
        let mut rng = crate::rng::from_seed(seed);
        (0..max_probes)
            .map(|_| {
                let mut flat = rng.gen_range(0..total);
                for (pi, t) in theta.iter().enumerate() {
                    if flat < t.len() {
                        return (pi, flat);
                    }
                    flat -= t.len();
                }
                (theta.len() - 1, 0)
            })
            .collect()
    };

    let mut max_rel = 0.0f64;
    let mut work: Vec<Array2<f64>> = theta.to_vec();
    for (pi, ci) in coords {
        let orig = work[pi].as_slice().unwrap()[ci];
        work[pi].as_slice_mut().unwrap()[ci] = orig + h;
        let (fp, _) = f(&work);
        work[pi].as_slice_mut().unwrap()[ci] = orig - h;
        let (fm, _) = f(&work);
        work[pi].as_slice_mut().unwrap()[ci] = orig;

        let numeric = (fp - fm) / (2.0 * h);
        let exact = analytic[pi].as_slice().unwrap()[ci];
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}
