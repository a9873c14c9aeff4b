//! Sequence training and hyperparameter search.
//!
//! One training run feeds whole segments through per-segment graphs,
//! accumulates gradients over a batch of segments, and applies Adam
//! with an L2 term folded into the gradient. Validation loss drives
//! early stopping; the best-validation snapshot is what comes back.
//! The search harness is a seeded random sweep over the studied
//! hyperparameter box, scored by k-fold cross-validation.

use crate::engine::Graph;
use crate::eval::{confusion, metrics, ConfusionMatrix};
use crate::features::FeatureSequence;
use crate::layers::{compose, Model, ModelSpec, NamedTensor};
use crate::{DasError, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Hyperparameters and protocol knobs for one training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub l2: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub batch_segments: usize,
    pub seed: u64,
    /// Stop as soon as validation accuracy reaches this target.
    pub stop_at_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            layers: 1,
            hidden: 128,
            dropout: 0.1,
            l2: 1e-5,
            epochs_max: 200,
            patience: 10,
            batch_segments: 16,
            seed: 0,
            stop_at_val_acc: None,
        }
    }
}

impl TrainConfig {
    /// Materialize a model spec for `arch` over `input_dim`-wide frames.
    pub fn to_spec(&self, arch: &str, input_dim: usize) -> ModelSpec {
        ModelSpec {
            arch: arch.to_string(),
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            dropout: self.dropout,
            d_k: None,
            num_classes: 3,
            residual: false,
        }
    }
}

/// Mean over frames of `-log softmax(logits)[label]`, log-sum-exp
/// stabilized.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let (t, c) = logits.dim();
    if labels.len() != t {
        return Err(DasError::Shape(format!(
            "{t} logit rows vs {} labels",
            labels.len()
        )));
    }
    let mut loss = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        if label >= c {
            return Err(DasError::Config(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += lse - row[label];
    }
    Ok(loss / t as f64)
}

/// Adam moment buffers, one slot per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[NamedTensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Array2::zeros(p.value.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.value.dim())).collect(),
            step: 0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam update with the L2 term added to the gradient first.
pub fn adam_step(
    params: &mut [NamedTensor],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    lr: f64,
    l2: f64,
) {
    assert_eq!(params.len(), grads.len(), "gradient count mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        ndarray::Zip::from(&mut p.value)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|theta, &graw, m, v| {
                let g = graw + l2 * *theta;
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *theta -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            });
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn labels_as_usize(seq: &FeatureSequence) -> Vec<usize> {
    seq.labels.iter().map(|l| l.index()).collect()
}

/// Validation loss, confusion matrix and frame accuracy.
fn evaluate(model: &Model, segments: &[&FeatureSequence]) -> Result<(f64, ConfusionMatrix, f64)> {
    let mut loss = 0.0;
    let mut cm = ConfusionMatrix::new();
    for seg in segments {
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &seg.features, false)?;
        let labels = labels_as_usize(seg);
        let l = g.cross_entropy(pass.logits, &labels)?;
        loss += g.value(l)[[0, 0]];
        let logits = g.value(pass.logits);
        for (row, &truth) in logits.rows().into_iter().zip(&labels) {
            let pred = row
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            cm.add(truth, pred);
        }
    }
    let (acc, _) = metrics(&cm)?;
    Ok((loss / segments.len() as f64, cm, acc / 100.0))
}

/// Train `spec` on the train split, early-stopping on the validation
/// split, and return the best-validation snapshot plus the history.
pub fn train_model(
    spec: &ModelSpec,
    train_segs: &[&FeatureSequence],
    val_segs: &[&FeatureSequence],
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    if train_segs.is_empty() || val_segs.is_empty() {
        return Err(DasError::Train("empty train or validation split".into()));
    }
    if config.patience == 0 {
        return Err(DasError::Config("patience must be >= 1".into()));
    }
    let mut model = compose(spec, crate::rng::substream_seed(config.seed, "init"))?;
    let mut state = AdamState::new(&model.params);
    let mut shuffle_rng = crate::rng::stream(config.seed, "shuffle");
    let mut dropout_rng = crate::rng::stream(config.seed, "dropout");

    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<NamedTensor>> = None;
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs_max {
        let mut order: Vec<usize> = (0..train_segs.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_segments.max(1)) {
            let mut acc_grads: Vec<Array2<f64>> = model
                .params
                .iter()
                .map(|p| Array2::zeros(p.value.dim()))
                .collect();
            let mut batch_loss = 0.0;
            for &si in batch {
                let seg = train_segs[si];
                let seg_seed: u64 = dropout_rng.gen();
                let mut g = Graph::training(crate::rng::from_seed(seg_seed));
                let pass = model.forward(&mut g, &seg.features, false)?;
                let labels = labels_as_usize(seg);
                let loss = g.cross_entropy(pass.logits, &labels)?;
                g.backward(loss)?;
                batch_loss += g.value(loss)[[0, 0]];
                for (slot, var) in acc_grads.iter_mut().zip(&pass.param_vars) {
                    if let Some(grad) = g.grad(*var) {
                        *slot += grad;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for gslot in &mut acc_grads {
                gslot.mapv_inplace(|v| v * scale);
            }
            adam_step(&mut model.params, &acc_grads, &mut state, config.lr, config.l2);
            train_loss += batch_loss * scale;
            batches += 1;
        }
        train_loss /= batches.max(1) as f64;

        let (val_loss, _, val_acc) = evaluate(&model, val_segs)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_params = Some(model.params.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
        if let Some(target) = config.stop_at_val_acc {
            if val_acc >= target {
                history.stopped_early = true;
                break;
            }
        }
    }

    if let Some(best) = best_params {
        model.params = best;
    }
    Ok((model, history))
}

/// One fold: validation ids and the complementary train ids.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Segment-level cross-validation plan.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<FoldSplit>,
}

/// Seeded shuffle, then a contiguous partition into `k` near-equal
/// folds (the remainder spreads over the first folds).
pub fn kfold(segment_ids: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(DasError::Config("k-fold needs k >= 2".into()));
    }
    if segment_ids.len() < k {
        return Err(DasError::Config(format!(
            "{} segments cannot fill {k} folds",
            segment_ids.len()
        )));
    }
    let mut ids = segment_ids.to_vec();
    let mut rng = crate::rng::stream(seed, "folds");
    ids.shuffle(&mut rng);

    let n = ids.len();
    let base = n / k;
    let rem = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let len = base + usize::from(i < rem);
        let val: Vec<usize> = ids[at..at + len].to_vec();
        let train: Vec<usize> = ids[..at].iter().chain(&ids[at + len..]).cloned().collect();
        folds.push(FoldSplit { train, val });
        at += len;
    }
    Ok(FoldPlan { k, folds })
}

/// Hyperparameter box for the random search.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub layers: Vec<usize>,
    pub hidden: (usize, usize),
    pub dropout: (f64, f64),
    pub l2: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: (1e-5, 1e-4),
            layers: vec![1, 2, 3],
            hidden: (64, 256),
            dropout: (0.1, 0.3),
            l2: (1e-6, 1e-3),
        }
    }
}

impl SearchSpace {
    /// Draw one configuration: uniform over layers/hidden/dropout,
    /// log-uniform over lr and l2.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, usize, usize, f64, f64) {
        let log_uniform = |(lo, hi): (f64, f64), rng: &mut ChaCha8Rng| {
            (rng.gen_range(lo.ln()..=hi.ln())).exp()
        };
        let lr = log_uniform(self.lr, rng);
        let layers = self.layers[rng.gen_range(0..self.layers.len())];
        let hidden = rng.gen_range(self.hidden.0..=self.hidden.1);
        let dropout = rng.gen_range(self.dropout.0..=self.dropout.1);
        let l2 = log_uniform(self.l2, rng);
        (lr, layers, hidden, dropout, l2)
    }
}

/// Search protocol: budget and the per-run training knobs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchProtocol {
    pub trials: usize,
    pub folds: usize,
    pub epochs_max: usize,
    pub patience: usize,
    pub batch_segments: usize,
    pub seed: u64,
}

impl Default for SearchProtocol {
    fn default() -> Self {
        SearchProtocol {
            trials: 50,
            folds: 5,
            epochs_max: 200,
            patience: 10,
            batch_segments: 16,
            seed: 0,
        }
    }
}

/// One scored trial.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub lr: f64,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub l2: f64,
    pub fold_acc: Vec<f64>,
    pub fold_f1: Vec<f64>,
    pub fold_macro_f1: Vec<f64>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_macro_f1: f64,
    pub params: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Seeded random search over `space`, scored by mean k-fold validation
/// accuracy. Ties break toward fewer parameters, then the lower trial
/// index. Returns the best index plus every record.
pub fn hyper_search(
    arch: &str,
    segments: &[FeatureSequence],
    space: &SearchSpace,
    protocol: &SearchProtocol,
) -> Result<(usize, Vec<TrialRecord>)> {
    if protocol.trials == 0 {
        return Err(DasError::Config("search needs at least 1 trial".into()));
    }
    let ids: Vec<usize> = (0..segments.len()).collect();
    let plan = kfold(&ids, protocol.folds, protocol.seed)?;
    let input_dim = segments[0].dim();

    // all draws happen up front so trial evaluation order cannot
    // perturb the sampled sequence
    let mut sample_rng = crate::rng::stream(protocol.seed, "search");
    let configs: Vec<(f64, usize, usize, f64, f64)> = (0..protocol.trials)
        .map(|_| space.sample(&mut sample_rng))
        .collect();

    let records: Vec<TrialRecord> = configs
        .par_iter()
        .enumerate()
        .map(|(trial, &(lr, layers, hidden, dropout, l2))| -> Result<TrialRecord> {
            let mut fold_acc = Vec::with_capacity(plan.k);
            let mut fold_f1 = Vec::with_capacity(plan.k);
            let mut fold_macro_f1 = Vec::with_capacity(plan.k);
            let mut params = 0usize;
            for (fi, fold) in plan.folds.iter().enumerate() {
                let config = TrainConfig {
                    lr,
                    layers,
                    hidden,
                    dropout,
                    l2,
                    epochs_max: protocol.epochs_max,
                    patience: protocol.patience,
                    batch_segments: protocol.batch_segments,
                    seed: crate::rng::substream_seed(
                        protocol.seed,
                        &format!("trial{trial}/fold{fi}"),
                    ),
                    stop_at_val_acc: None,
                };
                let spec = config.to_spec(arch, input_dim);
                let train: Vec<&FeatureSequence> =
                    fold.train.iter().map(|&i| &segments[i]).collect();
                let val: Vec<&FeatureSequence> = fold.val.iter().map(|&i| &segments[i]).collect();
                let (model, _) = train_model(&spec, &train, &val, &config)?;
                params = model.count_params();
                let preds: Vec<Vec<usize>> = val
                    .iter()
                    .map(|seg| Ok(model.predict(&seg.features)?.1))
                    .collect::<Result<_>>()?;
                let truths: Vec<Vec<usize>> = val.iter().map(|seg| labels_as_usize(seg)).collect();
                let cm = confusion(&preds, &truths)?;
                let (acc, f1) = metrics(&cm)?;
                fold_acc.push(acc);
                fold_f1.push(f1);
                fold_macro_f1.push(cm.macro_f1());
            }
            let (mean_acc, std_acc) = mean_std(&fold_acc);
            let (mean_f1, std_f1) = mean_std(&fold_f1);
            let (mean_macro_f1, _) = mean_std(&fold_macro_f1);
            Ok(TrialRecord {
                trial,
                lr,
                layers,
                hidden,
                dropout,
                l2,
                fold_acc,
                fold_f1,
                fold_macro_f1,
                mean_acc,
                std_acc,
                mean_f1,
                std_f1,
                mean_macro_f1,
                params,
            })
        })
        .collect::<Result<_>>()?;

    let mut best = 0usize;
    for i in 1..records.len() {
        let a = &records[i];
        let b = &records[best];
        let better = a.mean_acc > b.mean_acc
            || (a.mean_acc == b.mean_acc && a.params < b.params);
        if better {
            best = i;
        }
    }
    Ok((best, records))
}
