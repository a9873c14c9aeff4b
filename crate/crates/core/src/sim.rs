//! Synthetic strain-rate scenes.
//!
//! Generates spatio-temporal records statistically matched to the
//! observed traffic mix: vehicles arrive per lane with exponential
//! gaps, each event couples into every sensing point (SP) through the
//! lane's gain profile, and pink-ish background noise covers the rest.
//! Everything is a pure function of (site, duration, seed).

use crate::dsp::BandpassFilter;
use crate::{DasError, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Event categories, in label order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum EventClass {
    Noise,
    Car,
    Bus,
}

impl EventClass {
    pub const ALL: [EventClass; 3] = [EventClass::Noise, EventClass::Car, EventClass::Bus];

    pub fn index(self) -> usize {
        match self {
            EventClass::Noise => 0,
            EventClass::Car => 1,
            EventClass::Bus => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<EventClass> {
        match i {
            0 => Some(EventClass::Noise),
            1 => Some(EventClass::Car),
            2 => Some(EventClass::Bus),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventClass::Noise => "Noise",
            EventClass::Car => "Car",
            EventClass::Bus => "Bus",
        }
    }
}

/// A labeled event interval.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EventAnnotation {
    pub class: EventClass,
    pub start_s: f64,
    pub end_s: f64,
    pub lane: usize,
}

/// Spatio-temporal strain-rate record: one row per SP.
#[derive(Debug, Clone)]
pub struct StrainMatrix {
    pub data: Array2<f64>,
    pub fs: f64,
    pub sp_ids: Vec<usize>,
}

impl StrainMatrix {
    pub fn num_sps(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.fs
    }
}

// erf approximation, Abramowitz & Stegun 7.1.26 (|error| < 1.5e-7)
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Mean of N(location, std) truncated below at `floor`.
fn truncated_mean(location: f64, std: f64, floor: f64) -> f64 {
    if std == 0.0 {
        return location.max(floor);
    }
    let alpha = (floor - location) / std;
    let tail = 1.0 - normal_cdf(alpha);
    if tail < 1e-300 {
        return floor;
    }
    location + std * normal_pdf(alpha) / tail
}

/// Truncated-normal event duration model for one class.
///
/// `mean_s`/`std_s` are the target statistics of the drawn durations;
/// the underlying normal's location is solved (bisection) so that the
/// below-`min_s` truncation leaves the empirical mean on target.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DurationModel {
    pub mean_s: f64,
    pub std_s: f64,
    pub min_s: f64,
    location: f64,
}

impl DurationModel {
    pub fn new(mean_s: f64, std_s: f64, min_s: f64) -> Result<Self> {
        if !(mean_s > 0.0) || !(std_s >= 0.0) || !(min_s > 0.0) {
            return Err(DasError::Config(format!(
                "invalid duration model: mean {mean_s}, std {std_s}, min {min_s}"
            )));
        }
        if std_s > 0.0 && mean_s <= min_s {
            return Err(DasError::Config(format!(
                "duration mean {mean_s}s must exceed the {min_s}s floor"
            )));
        }
        let location = if std_s == 0.0 {
            mean_s
        } else {
            // truncated_mean is increasing in the location parameter
            let mut lo = min_s - 12.0 * std_s - 1.0;
            let mut hi = mean_s;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if truncated_mean(mid, std_s, min_s) < mean_s {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        Ok(DurationModel {
            mean_s,
            std_s,
            min_s,
            location,
        })
    }

    /// Default model for `class` (observed traffic statistics).
    pub fn for_class(class: EventClass) -> Self {
        let (mean, std) = match class {
            EventClass::Noise => (11.73, 12.70),
            EventClass::Car => (5.72, 3.05),
            EventClass::Bus => (15.86, 6.07),
        };
        DurationModel::new(mean, std, 1.0).expect("default duration models are valid")
    }
}

/// Draw one duration: resample N(location, std) until it clears the
/// floor, giving up after 1000 attempts (then return the floor).
pub fn sample_duration(model: &DurationModel, rng: &mut ChaCha8Rng) -> f64 {
    if model.std_s == 0.0 {
        return model.mean_s.max(model.min_s);
    }
    let dist = Normal::new(model.location, model.std_s).expect("validated std");
    for _ in 0..1000 {
        let d = dist.sample(rng);
        if d >= model.min_s {
            return d;
        }
    }
    model.min_s
}

/// Per-lane class mix (probabilities sum to 1).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassMix {
    pub car: f64,
    pub bus: f64,
}

/// Sensing-site geometry and traffic statistics.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SiteConfig {
    pub name: String,
    pub num_sps: usize,
    pub num_lanes: usize,
    /// Coupling gain of each lane into each SP, `[lane][sp]`, in `[0,1]`.
    pub lane_gain: Vec<Vec<f64>>,
    pub lane_class_mix: Vec<ClassMix>,
    pub fs: f64,
    pub background_sigma: f64,
    /// Mean exponential gap between consecutive events, seconds.
    pub mean_gap_s: f64,
    /// Probability of a pedestrian burst inside an eligible gap.
    pub pedestrian_rate: f64,
    /// Allow events on different lanes to overlap in time.
    pub allow_overlap: bool,
    pub durations: [DurationModel; 3],
}

impl SiteConfig {
    /// Two-lane site with 3 SPs; buses run almost exclusively on the
    /// lane coupled strongest into SP 2.
    pub fn palacio() -> Self {
        SiteConfig {
            name: "palacio".into(),
            num_sps: 3,
            num_lanes: 2,
            lane_gain: vec![vec![1.0, 0.45, 0.12], vec![0.12, 0.50, 1.0]],
            lane_class_mix: vec![
                ClassMix { car: 0.97, bus: 0.03 },
                ClassMix { car: 0.55, bus: 0.45 },
            ],
            fs: 250.0,
            background_sigma: 0.05,
            mean_gap_s: 8.0,
            pedestrian_rate: 0.3,
            allow_overlap: false,
            durations: [
                DurationModel::for_class(EventClass::Noise),
                DurationModel::for_class(EventClass::Car),
                DurationModel::for_class(EventClass::Bus),
            ],
        }
    }

    /// Four-lane site with 7 SPs; lane gains peak at SPs 1, 2, 4 and 6
    /// so the SP groups A(0-2), B(2-4), C(4-6) are physically distinct.
    pub fn acera() -> Self {
        SiteConfig {
            name: "acera".into(),
            num_sps: 7,
            num_lanes: 4,
            lane_gain: vec![
                vec![0.55, 1.0, 0.50, 0.22, 0.10, 0.05, 0.02],
                vec![0.30, 0.55, 1.0, 0.50, 0.20, 0.08, 0.03],
                vec![0.03, 0.08, 0.22, 0.55, 1.0, 0.50, 0.20],
                vec![0.02, 0.04, 0.08, 0.20, 0.45, 0.55, 1.0],
            ],
            lane_class_mix: vec![
                ClassMix { car: 0.90, bus: 0.10 },
                ClassMix { car: 0.50, bus: 0.50 },
                ClassMix { car: 0.80, bus: 0.20 },
                ClassMix { car: 0.60, bus: 0.40 },
            ],
            fs: 250.0,
            background_sigma: 0.08,
            mean_gap_s: 8.0,
            pedestrian_rate: 0.3,
            allow_overlap: false,
            durations: [
                DurationModel::for_class(EventClass::Noise),
                DurationModel::for_class(EventClass::Car),
                DurationModel::for_class(EventClass::Bus),
            ],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "palacio" => Ok(SiteConfig::palacio()),
            "acera" => Ok(SiteConfig::acera()),
            other => Err(DasError::Config(format!(
                "unknown site '{other}' (expected 'palacio' or 'acera')"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sps == 0 || self.num_lanes == 0 {
            return Err(DasError::Config(
                "site needs at least 1 SP and 1 lane".into(),
            ));
        }
        if !(self.fs > 0.0) {
            return Err(DasError::Config(format!(
                "fs must be positive, got {}",
                self.fs
            )));
        }
        if !(self.mean_gap_s > 0.0) {
            return Err(DasError::Config("mean gap must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.pedestrian_rate) {
            return Err(DasError::Config("pedestrian rate must be in [0,1]".into()));
        }
        if self.lane_gain.len() != self.num_lanes || self.lane_class_mix.len() != self.num_lanes {
            return Err(DasError::Config(
                "per-lane tables must cover every lane".into(),
            ));
        }
        for (lane, gains) in self.lane_gain.iter().enumerate() {
            if gains.len() != self.num_sps {
                return Err(DasError::Config(format!(
                    "lane {lane} gain row has {} entries for {} SPs",
                    gains.len(),
                    self.num_sps
                )));
            }
            if gains.iter().any(|g| !(0.0..=1.0).contains(g)) {
                return Err(DasError::Config(format!("lane {lane} gains outside [0,1]")));
            }
            let max = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if gains.iter().filter(|&&g| g == max).count() != 1 {
                return Err(DasError::Config(format!(
                    "lane {lane} must have a unique strongest SP"
                )));
            }
        }
        for (lane, mix) in self.lane_class_mix.iter().enumerate() {
            if mix.car < 0.0 || mix.bus < 0.0 || (mix.car + mix.bus - 1.0).abs() > 1e-9 {
                return Err(DasError::Config(format!(
                    "lane {lane} class mix must be a probability pair summing to 1"
                )));
            }
        }
        Ok(())
    }

    pub fn duration_model(&self, class: EventClass) -> &DurationModel {
        &self.durations[class.index()]
    }
}

/// Class-specific synthesis constants.
struct Signature {
    band: (f64, f64),
    peak_amp: f64,
}

fn signature(class: EventClass) -> Signature {
    match class {
        // pedestrian burst
        EventClass::Noise => Signature {
            band: (2.0, 8.0),
            peak_amp: 0.1,
        },
        EventClass::Car => Signature {
            band: (8.0, 20.0),
            peak_amp: 1.0,
        },
        EventClass::Bus => Signature {
            band: (1.0, 12.0),
            peak_amp: 2.5,
        },
    }
}

/// Deterministic amplitude envelope for `class` (independent of rng).
pub fn event_envelope(class: EventClass, duration_s: f64, fs: f64) -> Vec<f64> {
    let n = ((duration_s * fs).round() as usize).max(1);
    let nf = n as f64;
    match class {
        EventClass::Car => {
            // Gaussian bump centered on the crossing instant
            let center = (nf - 1.0) / 2.0;
            let sigma = nf / 6.0;
            (0..n)
                .map(|i| {
                    let d = (i as f64 - center) / sigma;
                    (-0.5 * d * d).exp()
                })
                .collect()
        }
        EventClass::Bus => {
            // flat-top plateau with raised-cosine ramps plus a second
            // axle bump at 30% of the duration
            let ramp = (0.1 * nf).max(1.0);
            let axle_center = 0.30 * nf;
            let axle_sigma = (0.125 * fs).max(1.0);
            (0..n)
                .map(|i| {
                    let i = i as f64;
                    let mut env = if i < ramp {
                        0.5 - 0.5 * (std::f64::consts::PI * (1.0 + i / ramp)).cos()
                    } else if i > nf - 1.0 - ramp {
                        let d = nf - 1.0 - i;
                        0.5 - 0.5 * (std::f64::consts::PI * (1.0 + d / ramp)).cos()
                    } else {
                        1.0
                    };
                    let da = (i - axle_center) / axle_sigma;
                    env += 0.8 * (-0.5 * da * da).exp();
                    env
                })
                .collect()
        }
        EventClass::Noise => {
            // brief 0.5 s footstep burst in the middle of the interval
            let center = (nf - 1.0) / 2.0;
            let sigma = (0.125 * fs).max(1.0);
            (0..n)
                .map(|i| {
                    let d = (i as f64 - center) / sigma;
                    (-0.5 * d * d).exp()
                })
                .collect()
        }
    }
}

/// Synthesize one event footprint: band-limited noise shaped by the
/// class envelope, normalized to the class peak amplitude.
pub fn event_waveform(
    class: EventClass,
    duration_s: f64,
    fs: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = (duration_s * fs).round() as usize;
    if n < 2 {
        return Err(DasError::Config(format!(
            "degenerate event: {duration_s}s at {fs} Hz is under 2 samples"
        )));
    }
    let sig = signature(class);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let white: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let filter = BandpassFilter::design(4, sig.band.0, sig.band.1, fs)?;
    let colored = filter.filtfilt(&white);
    let env = event_envelope(class, duration_s, fs);
    let mut wave: Vec<f64> = colored.iter().zip(&env).map(|(&x, &e)| x * e).collect();
    let peak = wave.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = sig.peak_amp / peak;
        for v in &mut wave {
            *v *= scale;
        }
    }
    Ok(wave)
}

// Paul Kellet's economy pinking filter over white input, then rescaled
// to the requested sigma.
fn pink_noise(n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut b0 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = normal.sample(rng);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std > 0.0 {
        let scale = sigma / std;
        for v in &mut out {
            *v = (*v - mean) * scale;
        }
    }
    out
}

struct PlacedEvent {
    class: EventClass,
    lane: usize,
    start_s: f64,
    duration_s: f64,
    annotate: bool,
}

fn draw_class(mix: &ClassMix, rng: &mut ChaCha8Rng) -> EventClass {
    if rng.gen::<f64>() < mix.car {
        EventClass::Car
    } else {
        EventClass::Bus
    }
}

/// Lay out one sequential event stream over `[0, duration_s]`.
///
/// `lane_filter` restricts lane draws (used by the overlap mode, which
/// runs one independent stream per lane).
fn layout_stream(
    site: &SiteConfig,
    duration_s: f64,
    lane_filter: Option<usize>,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<PlacedEvent>,
) -> Result<()> {
    let gap_dist = Exp::new(1.0 / site.mean_gap_s)
        .map_err(|_| DasError::Config("invalid mean gap".into()))?;
    let mut cursor = 0.0f64;
    loop {
        let gap: f64 = gap_dist.sample(rng);
        // pedestrian bursts live inside gaps and stay unannotated noise
        if gap >= 3.0 && rng.gen::<f64>() < site.pedestrian_rate {
            let model = site.duration_model(EventClass::Noise);
            let mut ped = sample_duration(model, rng);
            ped = ped.min(gap - 1.0).max(model.min_s);
            let start = cursor + (gap - ped) / 2.0;
            if start + ped < duration_s {
                let lane = match lane_filter {
                    Some(l) => l,
                    None => rng.gen_range(0..site.num_lanes),
                };
                out.push(PlacedEvent {
                    class: EventClass::Noise,
                    lane,
                    start_s: start,
                    duration_s: ped,
                    annotate: false,
                });
            }
        }
        let start = cursor + gap;
        let lane = match lane_filter {
            Some(l) => l,
            None => rng.gen_range(0..site.num_lanes),
        };
        let class = draw_class(&site.lane_class_mix[lane], rng);
        let dur = sample_duration(site.duration_model(class), rng);
        if start + dur > duration_s {
            break;
        }
        out.push(PlacedEvent {
            class,
            lane,
            start_s: start,
            duration_s: dur,
            annotate: true,
        });
        cursor = start + dur;
    }
    Ok(())
}

/// Generate a scene: strain-rate matrix plus ground-truth annotations
/// sorted by start time. Identical `(site, duration_s, seed)` give
/// bit-identical output.
pub fn generate_scene(
    site: &SiteConfig,
    duration_s: f64,
    seed: u64,
) -> Result<(StrainMatrix, Vec<EventAnnotation>)> {
    site.validate()?;
    if duration_s < 90.0 {
        return Err(DasError::Config(format!(
            "scene must cover at least one 90 s segment, got {duration_s}s"
        )));
    }
    let mut rng = crate::rng::from_seed(seed);
    let n = (duration_s * site.fs).round() as usize;
    let mut data = Array2::<f64>::zeros((site.num_sps, n));

    let mut placed = Vec::new();
    if site.allow_overlap {
        for lane in 0..site.num_lanes {
            layout_stream(site, duration_s, Some(lane), &mut rng, &mut placed)?;
        }
    } else {
        layout_stream(site, duration_s, None, &mut rng, &mut placed)?;
    }

    let mut annotations = Vec::new();
    for ev in &placed {
        let wave = event_waveform(ev.class, ev.duration_s, site.fs, &mut rng)?;
        let start_idx = (ev.start_s * site.fs).round() as usize;
        let span = wave.len().min(n.saturating_sub(start_idx));
        for sp in 0..site.num_sps {
            let gain = site.lane_gain[ev.lane][sp];
            if gain == 0.0 {
                continue;
            }
            let mut row = data.row_mut(sp);
            for (k, &w) in wave[..span].iter().enumerate() {
                row[start_idx + k] += gain * w;
            }
        }
        if ev.annotate {
            annotations.push(EventAnnotation {
                class: ev.class,
                start_s: ev.start_s,
                end_s: ev.start_s + ev.duration_s,
                lane: ev.lane,
            });
        }
    }

    for sp in 0..site.num_sps {
        let noise = pink_noise(n, site.background_sigma, &mut rng);
        let mut row = data.row_mut(sp);
        for (v, w) in row.iter_mut().zip(noise) {
            *v += w;
        }
    }

    annotations.sort_by(|a, b| a.start_s.partial_cmp(&b.start_s).unwrap());
    if !data.iter().all(|v| v.is_finite()) {
        return Err(DasError::Numeric(
            "non-finite sample in generated scene".into(),
        ));
    }
    Ok((
        StrainMatrix {
            data,
            fs: site.fs,
            sp_ids: (0..site.num_sps).collect(),
        },
        annotations,
    ))
}
