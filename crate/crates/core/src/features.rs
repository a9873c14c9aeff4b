//! Handcrafted window features and sequence assembly.
//!
//! Each Hamming-weighted frame becomes a fixed 36-feature vector:
//! 18 time-domain descriptors (moments, zero crossings, Hjorth
//! parameters, percentiles) and 18 spectral descriptors computed from
//! the magnitude spectrum of the weighted window. First/second
//! temporal derivatives triple the width to 108, and concatenating a
//! target SP with its two neighbors triples again to 324. Frames are
//! finally packed into fixed-length segments for sequence models.

use crate::dsp::{WindowFrame, WindowGrid};
use crate::sim::{EventAnnotation, EventClass};
use crate::{DasError, Result};
use ndarray::Array2;
use rustfft::{num_complex::Complex64, FftPlanner};
use std::cell::RefCell;

/// Width of the base feature vector.
pub const FEATURE_DIM: usize = 36;

/// Guard for logs and divisions.
pub const EPS: f64 = 1e-12;

/// Stable column order of the base feature vector.
pub const FEATURE_LAYOUT: [&str; FEATURE_DIM] = [
    // time domain
    "mean",
    "std",
    "rms",
    "peak_to_peak",
    "skewness",
    "kurtosis",
    "zero_crossing_rate",
    "log_energy",
    "amplitude_entropy",
    "hjorth_activity",
    "hjorth_mobility",
    "hjorth_complexity",
    "p5",
    "p25",
    "p50",
    "p75",
    "p95",
    "iqr",
    // frequency domain
    "spectral_centroid",
    "spectral_bandwidth",
    "rolloff_85",
    "spectral_flatness",
    "spectral_entropy",
    "dominant_freq",
    "dominant_mag",
    "band_rel_0p1_5",
    "band_rel_5_10",
    "band_rel_10_15",
    "band_rel_15_20",
    "band_rel_20_25",
    "band_rel_25_30",
    "log_spectral_energy",
    "spectral_skewness",
    "spectral_kurtosis",
    "spectral_crest",
    "bandwidth_90",
];

/// Per-frame labels aligned with a feature matrix.
pub type LabelSequence = Vec<EventClass>;

/// One model-input segment: `T×D` features plus aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub segment_id: usize,
    pub sp: usize,
    pub features: Array2<f64>,
    pub labels: LabelSequence,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

thread_local! {
    static FFT_PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Linear-interpolated percentile of an already sorted slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

fn variance(x: &[f64], mean: f64) -> f64 {
    x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64
}

/// Extract the 36 features from a Hamming-weighted frame.
pub fn featurize_window(frame: &WindowFrame, fs: f64) -> Result<Vec<f64>> {
    featurize_samples(&frame.samples, fs)
}

/// Same as [`featurize_window`] but on a bare sample slice.
pub fn featurize_samples(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 4 {
        return Err(DasError::Config(format!(
            "invalid window: {n} samples (need at least 4)"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DasError::Config("invalid window: non-finite sample".into()));
    }
    let nf = n as f64;
    let mut out = Vec::with_capacity(FEATURE_DIM);

    // --- time domain ---
    let mean = x.iter().sum::<f64>() / nf;
    let var = variance(x, mean);
    let std = var.sqrt();
    let rms = (x.iter().map(|&v| v * v).sum::<f64>() / nf).sqrt();
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ptp = max - min;

    let (skew, kurt) = if std > EPS {
        let m3 = x.iter().map(|&v| (v - mean).powi(3)).sum::<f64>() / nf;
        let m4 = x.iter().map(|&v| (v - mean).powi(4)).sum::<f64>() / nf;
        (m3 / std.powi(3), m4 / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };

    let crossings = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let zcr = crossings as f64 / (nf - 1.0);

    let energy = x.iter().map(|&v| v * v).sum::<f64>();
    let log_energy = (energy + EPS).ln();

    // 20-bin amplitude histogram entropy
    let amp_entropy = if ptp > EPS {
        let bins = 20usize;
        let mut counts = vec![0usize; bins];
        for &v in x {
            let mut b = ((v - min) / ptp * bins as f64) as usize;
            if b >= bins {
                b = bins - 1;
            }
            counts[b] += 1;
        }
        -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                p * p.ln()
            })
            .sum::<f64>()
    } else {
        0.0
    };

    // Hjorth parameters over the first difference
    let activity = var;
    let (mobility, complexity) = if var > EPS {
        let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let dmean = dx.iter().sum::<f64>() / dx.len() as f64;
        let dvar = variance(&dx, dmean);
        let mobility = (dvar / var).sqrt();
        let complexity = if dvar > EPS {
            let ddx: Vec<f64> = dx.windows(2).map(|w| w[1] - w[0]).collect();
            let ddmean = ddx.iter().sum::<f64>() / ddx.len() as f64;
            let ddvar = variance(&ddx, ddmean);
            let dmob = (ddvar / dvar).sqrt();
            if mobility > EPS {
                dmob / mobility
            } else {
                0.0
            }
        } else {
            0.0
        };
        (mobility, complexity)
    } else {
        (0.0, 0.0)
    };

    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p5 = percentile_sorted(&sorted, 5.0);
    let p25 = percentile_sorted(&sorted, 25.0);
    let p50 = percentile_sorted(&sorted, 50.0);
    let p75 = percentile_sorted(&sorted, 75.0);
    let p95 = percentile_sorted(&sorted, 95.0);

    out.extend_from_slice(&[
        mean,
        std,
        rms,
        ptp,
        skew,
        kurt,
        zcr,
        log_energy,
        amp_entropy,
        activity,
        mobility,
        complexity,
        p5,
        p25,
        p50,
        p75,
        p95,
        p75 - p25,
    ]);

    // --- frequency domain ---
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FFT_PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(n);
        fft.process(&mut buf);
    });
    let k_bins = n / 2 + 1;
    let mags: Vec<f64> = buf[..k_bins].iter().map(|c| c.norm()).collect();
    let power: Vec<f64> = mags.iter().map(|&m| m * m).collect();
    let freqs: Vec<f64> = (0..k_bins).map(|k| k as f64 * fs / nf).collect();
    let total_power: f64 = power.iter().sum();

    if total_power <= EPS {
        // degenerate-window convention: spectral block is all zeros
        out.extend_from_slice(&[0.0; 18]);
        return Ok(out);
    }

    let centroid = freqs
        .iter()
        .zip(&power)
        .map(|(&f, &p)| f * p)
        .sum::<f64>()
        / total_power;
    let bandwidth = (freqs
        .iter()
        .zip(&power)
        .map(|(&f, &p)| (f - centroid) * (f - centroid) * p)
        .sum::<f64>()
        / total_power)
        .sqrt();

    let rolloff_85 = {
        let mut cum = 0.0;
        let mut f85 = freqs[k_bins - 1];
        for (k, &p) in power.iter().enumerate() {
            cum += p;
            if cum >= 0.85 * total_power {
                f85 = freqs[k];
                break;
            }
        }
        f85
    };

    // magnitude flatness: geometric over arithmetic mean
    let mean_mag = mags.iter().sum::<f64>() / k_bins as f64;
    let flatness = if mean_mag > EPS {
        let log_gm = mags.iter().map(|&m| (m + EPS).ln()).sum::<f64>() / k_bins as f64;
        (log_gm.exp() / mean_mag).min(1.0)
    } else {
        0.0
    };

    let spec_entropy = {
        let h: f64 = -power
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| {
                let q = p / total_power;
                q * q.ln()
            })
            .sum::<f64>();
        h / (k_bins as f64).ln()
    };

    let (dom_k, dom_mag) = mags
        .iter()
        .enumerate()
        .fold((0usize, 0.0f64), |(bk, bm), (k, &m)| {
            if m > bm {
                (k, m)
            } else {
                (bk, bm)
            }
        });
    let dom_freq = freqs[dom_k];

    const BANDS: [(f64, f64); 6] = [
        (0.1, 5.0),
        (5.0, 10.0),
        (10.0, 15.0),
        (15.0, 20.0),
        (20.0, 25.0),
        (25.0, 30.0),
    ];
    let mut band_rel = [0.0f64; 6];
    for (i, &(lo, hi)) in BANDS.iter().enumerate() {
        let inclusive_hi = i == BANDS.len() - 1;
        let e: f64 = freqs
            .iter()
            .zip(&power)
            .filter(|(&f, _)| f >= lo && (f < hi || (inclusive_hi && f <= hi)))
            .map(|(_, &p)| p)
            .sum();
        band_rel[i] = e / total_power;
    }

    let log_spec_energy = (total_power + EPS).ln();

    let (spec_skew, spec_kurt) = if bandwidth > EPS {
        let m3 = freqs
            .iter()
            .zip(&power)
            .map(|(&f, &p)| (f - centroid).powi(3) * p)
            .sum::<f64>()
            / total_power;
        let m4 = freqs
            .iter()
            .zip(&power)
            .map(|(&f, &p)| (f - centroid).powi(4) * p)
            .sum::<f64>()
            / total_power;
        (m3 / bandwidth.powi(3), m4 / bandwidth.powi(4))
    } else {
        (0.0, 0.0)
    };

    let crest = if mean_mag > EPS {
        dom_mag / mean_mag
    } else {
        0.0
    };

    let bandwidth_90 = {
        let mut cum = 0.0;
        let mut f_lo = freqs[0];
        let mut f_hi = freqs[k_bins - 1];
        let mut lo_found = false;
        for (k, &p) in power.iter().enumerate() {
            cum += p;
            if !lo_found && cum >= 0.05 * total_power {
                f_lo = freqs[k];
                lo_found = true;
            }
            if cum >= 0.95 * total_power {
                f_hi = freqs[k];
                break;
            }
        }
        f_hi - f_lo
    };

    out.extend_from_slice(&[
        centroid,
        bandwidth,
        rolloff_85,
        flatness,
        spec_entropy,
        dom_freq,
        dom_mag,
        band_rel[0],
        band_rel[1],
        band_rel[2],
        band_rel[3],
        band_rel[4],
        band_rel[5],
        log_spec_energy,
        spec_skew,
        spec_kurt,
        crest,
        bandwidth_90,
    ]);
    Ok(out)
}

/// Append first- and second-order temporal derivatives columnwise:
/// `[f | Δf | ΔΔf]`, with `Δf_t = (f_{t+1} - f_{t-1})/2` under edge
/// replication.
pub fn append_deltas(seq: &Array2<f64>) -> Array2<f64> {
    let (t, d) = seq.dim();
    let delta_of = |m: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((t, d));
        for ti in 0..t {
            let prev = if ti == 0 { 0 } else { ti - 1 };
            let next = if ti + 1 >= t { t - 1 } else { ti + 1 };
            for di in 0..d {
                out[[ti, di]] = (m[[next, di]] - m[[prev, di]]) / 2.0;
            }
        }
        out
    };
    let d1 = delta_of(seq);
    let d2 = delta_of(&d1);
    let mut out = Array2::zeros((t, 3 * d));
    out.slice_mut(ndarray::s![.., 0..d]).assign(seq);
    out.slice_mut(ndarray::s![.., d..2 * d]).assign(&d1);
    out.slice_mut(ndarray::s![.., 2 * d..3 * d]).assign(&d2);
    out
}

/// Neighbor handling for [`spatial_concat`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborPolicy {
    /// Edge SPs copy the target into the missing slot.
    Replicate,
    /// Missing neighbors are an error.
    Strict,
}

/// Concatenate `[left | target | right]` feature matrices per frame,
/// where neighbors are the SPs adjacent to `target` in `per_sp`.
pub fn spatial_concat(
    per_sp: &[Array2<f64>],
    target: usize,
    policy: NeighborPolicy,
) -> Result<Array2<f64>> {
    if target >= per_sp.len() {
        return Err(DasError::Config(format!(
            "target SP {target} out of range ({} SPs)",
            per_sp.len()
        )));
    }
    let (t, d) = per_sp[target].dim();
    for (sp, m) in per_sp.iter().enumerate() {
        if m.dim() != (t, d) {
            return Err(DasError::Shape(format!(
                "SP {sp} matrix is {:?}, expected {:?}",
                m.dim(),
                (t, d)
            )));
        }
    }
    let pick = |idx: Option<usize>| -> Result<&Array2<f64>> {
        match idx {
            Some(i) => Ok(&per_sp[i]),
            None => match policy {
                NeighborPolicy::Replicate => Ok(&per_sp[target]),
                NeighborPolicy::Strict => Err(DasError::Config(format!(
                    "SP {target} has no neighbor on one side and replication is disabled"
                ))),
            },
        }
    };
    let left = pick(target.checked_sub(1))?;
    let right = pick(if target + 1 < per_sp.len() {
        Some(target + 1)
    } else {
        None
    })?;

    let mut out = Array2::zeros((t, 3 * d));
    out.slice_mut(ndarray::s![.., 0..d]).assign(left);
    out.slice_mut(ndarray::s![.., d..2 * d]).assign(&per_sp[target]);
    out.slice_mut(ndarray::s![.., 2 * d..3 * d]).assign(right);
    Ok(out)
}

/// Majority vote with ties resolved in favor of rarer classes
/// (Bus > Car > Noise). `counts` is indexed by [`EventClass::index`].
pub fn majority_label(counts: [usize; 3]) -> EventClass {
    let mut best = EventClass::Bus;
    let mut best_count = counts[EventClass::Bus.index()];
    for class in [EventClass::Car, EventClass::Noise] {
        if counts[class.index()] > best_count {
            best = class;
            best_count = counts[class.index()];
        }
    }
    best
}

/// Class of the sample at global index `k`, honoring the Bus > Car
/// priority where annotations overlap.
fn sample_class(k: usize, fs: f64, annotations: &[&EventAnnotation]) -> EventClass {
    let t = k as f64 / fs;
    let mut found = EventClass::Noise;
    for a in annotations {
        if a.start_s <= t && t < a.end_s {
            match a.class {
                EventClass::Bus => return EventClass::Bus,
                EventClass::Car => found = EventClass::Car,
                EventClass::Noise => {}
            }
        }
    }
    found
}

/// Label every frame of the grid over `[0, total_s]` by per-sample
/// majority vote against the annotations.
pub fn align_labels(
    annotations: &[EventAnnotation],
    grid: &WindowGrid,
    total_s: f64,
) -> LabelSequence {
    let n = (total_s * grid.fs).round() as usize;
    let count = grid.frame_count(n);
    let mut labels = Vec::with_capacity(count);
    for index in 0..count {
        let off = index * grid.n_shift;
        let frame_start = off as f64 / grid.fs;
        let frame_end = (off + grid.n_win) as f64 / grid.fs;
        // only annotations that can touch this frame
        let touching: Vec<&EventAnnotation> = annotations
            .iter()
            .filter(|a| a.end_s > frame_start && a.start_s < frame_end)
            .collect();
        if touching.is_empty() {
            labels.push(EventClass::Noise);
            continue;
        }
        let mut counts = [0usize; 3];
        for k in off..off + grid.n_win {
            counts[sample_class(k, grid.fs, &touching).index()] += 1;
        }
        labels.push(majority_label(counts));
    }
    labels
}

/// Cut a frame stream into consecutive non-overlapping fixed-length
/// segments; a trailing partial block is dropped.
pub fn pack_segments(
    features: &Array2<f64>,
    labels: &LabelSequence,
    grid: &WindowGrid,
    segment_s: f64,
    sp: usize,
) -> Result<Vec<FeatureSequence>> {
    let (t, _) = features.dim();
    if labels.len() != t {
        return Err(DasError::Shape(format!(
            "{t} feature rows vs {} labels",
            labels.len()
        )));
    }
    let per_seg = grid.frames_per_segment(segment_s);
    if per_seg == 0 || t < per_seg {
        return Err(DasError::Config(format!(
            "need at least {per_seg} frames for one {segment_s}s segment, got {t}"
        )));
    }
    let count = t / per_seg;
    let mut out = Vec::with_capacity(count);
    for seg in 0..count {
        let lo = seg * per_seg;
        let hi = lo + per_seg;
        out.push(FeatureSequence {
            segment_id: seg,
            sp,
            features: features.slice(ndarray::s![lo..hi, ..]).to_owned(),
            labels: labels[lo..hi].to_vec(),
        });
    }
    Ok(out)
}

/// Which feature variant a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureSet {
    /// Spatial concat of the 36 base features (108 columns).
    Base,
    /// Spatial concat of base + derivatives (324 columns).
    WithDeltas,
}

impl FeatureSet {
    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::Base => "X",
            FeatureSet::WithDeltas => "X+d",
        }
    }

    pub fn width(self) -> usize {
        match self {
            FeatureSet::Base => 3 * FEATURE_DIM,
            FeatureSet::WithDeltas => 9 * FEATURE_DIM,
        }
    }

    pub fn from_width(width: usize) -> Result<Self> {
        if width == FeatureSet::Base.width() {
            Ok(FeatureSet::Base)
        } else if width == FeatureSet::WithDeltas.width() {
            Ok(FeatureSet::WithDeltas)
        } else {
            Err(DasError::Config(format!(
                "width {width} is neither {} (base) nor {} (with derivatives)",
                FeatureSet::Base.width(),
                FeatureSet::WithDeltas.width()
            )))
        }
    }
}

/// Per-SP base features for a whole scene plus the shared labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub site: String,
    pub grid: WindowGrid,
    /// One `T_total×36` matrix per SP.
    pub sp_features: Vec<Array2<f64>>,
    pub labels: LabelSequence,
}

impl FeatureStore {
    /// Featurize every SP row of a (preprocessed) strain matrix and
    /// align labels from the annotations.
    pub fn build(
        site: &str,
        matrix: &crate::sim::StrainMatrix,
        annotations: &[EventAnnotation],
        grid: &WindowGrid,
    ) -> Result<Self> {
        let mut sp_features = Vec::with_capacity(matrix.num_sps());
        for sp in 0..matrix.num_sps() {
            let row = matrix.data.row(sp).to_vec();
            let frames = crate::dsp::segment_windows(&row, grid, sp)?;
            let mut mat = Array2::zeros((frames.len(), FEATURE_DIM));
            for (i, frame) in frames.iter().enumerate() {
                let f = featurize_window(frame, grid.fs)?;
                for (j, v) in f.into_iter().enumerate() {
                    mat[[i, j]] = v;
                }
            }
            sp_features.push(mat);
        }
        let labels = align_labels(annotations, grid, matrix.duration_s());
        let t = sp_features[0].nrows();
        if labels.len() != t {
            return Err(DasError::Shape(format!(
                "{} labels vs {t} frames",
                labels.len()
            )));
        }
        Ok(FeatureStore {
            site: site.to_string(),
            grid: grid.clone(),
            sp_features,
            labels,
        })
    }

    pub fn num_sps(&self) -> usize {
        self.sp_features.len()
    }

    pub fn num_frames(&self) -> usize {
        self.sp_features.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// Full-stream feature matrix for `set` centered on `target`:
    /// optional derivative augmentation per SP, then `[left|target|right]`
    /// concatenation.
    pub fn variant(&self, target: usize, set: FeatureSet) -> Result<Array2<f64>> {
        let per_sp: Vec<Array2<f64>> = match set {
            FeatureSet::Base => self.sp_features.clone(),
            FeatureSet::WithDeltas => self.sp_features.iter().map(append_deltas).collect(),
        };
        spatial_concat(&per_sp, target, NeighborPolicy::Replicate)
    }

    /// Packed segments of the `set` variant around `target`.
    pub fn segments(
        &self,
        target: usize,
        set: FeatureSet,
        segment_s: f64,
    ) -> Result<Vec<FeatureSequence>> {
        let stream = self.variant(target, set)?;
        pack_segments(&stream, &self.labels, &self.grid, segment_s, target)
    }

    /// Default target SP: the middle of the array.
    pub fn center_sp(&self) -> usize {
        self.num_sps() / 2
    }
}
