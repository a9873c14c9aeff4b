//! Signal conditioning and windowing.
//!
//! Strain-rate rows are detrended, band-passed with a zero-phase
//! order-4 Butterworth cascade, then cut into overlapping
//! Hamming-weighted frames on a fixed [`WindowGrid`].

use crate::{DasError, Result};
use rustfft::num_complex::Complex64;

/// Frame geometry: window/shift lengths in seconds and samples.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowGrid {
    pub win_s: f64,
    pub shift_s: f64,
    pub fs: f64,
    pub n_win: usize,
    pub n_shift: usize,
}

impl WindowGrid {
    pub fn new(win_s: f64, shift_s: f64, fs: f64) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(DasError::Config(format!("fs must be positive, got {fs}")));
        }
        let n_win = (win_s * fs).round() as usize;
        let n_shift = (shift_s * fs).round() as usize;
        if n_win < 1 || n_shift < 1 {
            return Err(DasError::Config(format!(
                "window {win_s}s / shift {shift_s}s too short at fs {fs}"
            )));
        }
        if n_shift > n_win {
            return Err(DasError::Config(format!(
                "shift ({n_shift}) must not exceed window ({n_win})"
            )));
        }
        Ok(WindowGrid {
            win_s,
            shift_s,
            fs,
            n_win,
            n_shift,
        })
    }

    /// 2 s window, 0.5 s shift.
    pub fn defaults(fs: f64) -> Self {
        WindowGrid::new(2.0, 0.5, fs).expect("default grid is valid")
    }

    /// Number of whole frames in a signal of `n` samples.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.n_win {
            0
        } else {
            (n - self.n_win) / self.n_shift + 1
        }
    }

    /// Frames per packing block of `segment_s` seconds.
    pub fn frames_per_segment(&self, segment_s: f64) -> usize {
        self.frame_count((segment_s * self.fs).round() as usize)
    }
}

/// One Hamming-weighted window slice of a single SP row.
#[derive(Debug, Clone)]
pub struct WindowFrame {
    pub sp: usize,
    pub index: usize,
    pub samples: Vec<f64>,
    pub t_start_s: f64,
}

fn line_fit(x: &[f64]) -> (f64, f64) {
    // least squares x[i] ~ a + b*i
    let n = x.len() as f64;
    let mean_i = (n - 1.0) / 2.0;
    let mean_x = x.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let di = i as f64 - mean_i;
        num += di * (v - mean_x);
        den += di * di;
    }
    let b = if den > 0.0 { num / den } else { 0.0 };
    let a = mean_x - b * mean_i;
    (a, b)
}

/// Subtract the least-squares straight line; the result has zero mean
/// and zero linear trend.
pub fn detrend(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(DasError::Config(format!(
            "detrend needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let (a, b) = line_fit(x);
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| v - (a + b * i as f64))
        .collect())
}

/// Hamming window `w[k] = 0.54 - 0.46 cos(2πk/(n-1))`; `[1]` for n = 1.
pub fn hamming(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(DasError::Config("hamming window length must be >= 1".into()));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / denom).cos())
        .collect())
}

/// One second-order section, coefficients in z⁻¹ form with a0 = 1.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn filter_in_place(&self, x: &mut [f64]) {
        // transposed direct form II
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b[0] * xin + z1;
            z1 = self.b[1] * xin - self.a[1] * y + z2;
            z2 = self.b[2] * xin - self.a[2] * y;
            *v = y;
        }
    }
}

/// Butterworth band-pass designed as a cascade of biquads.
#[derive(Debug, Clone)]
pub struct BandpassFilter {
    pub order: usize,
    pub lo: f64,
    pub hi: f64,
    pub fs: f64,
    pub sections: Vec<Biquad>,
}

impl BandpassFilter {
    /// Design an order-`order` Butterworth band-pass (2·order poles)
    /// for the band `lo..hi` Hz at sampling rate `fs`.
    ///
    /// Analog prototype poles are band-transformed and mapped with the
    /// bilinear transform; each section carries one zero at z=+1 and
    /// one at z=-1, and the cascade is normalized to unit gain at the
    /// warped center frequency.
    pub fn design(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(DasError::Config("filter order must be >= 1".into()));
        }
        if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
            return Err(DasError::Config(format!(
                "invalid band {lo}..{hi} Hz at fs {fs} (need 0 < lo < hi < fs/2)"
            )));
        }
        let fs2 = 2.0 * fs;
        let w1 = fs2 * (std::f64::consts::PI * lo / fs).tan();
        let w2 = fs2 * (std::f64::consts::PI * hi / fs).tan();
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        // analog low-pass prototype poles on the unit circle
        let n = order;
        let mut bp_poles: Vec<Complex64> = Vec::with_capacity(2 * n);
        for k in 1..=n {
            let theta = std::f64::consts::PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
            let p = Complex64::new(theta.cos(), theta.sin());
            // low-pass -> band-pass: s = (bw*p ± sqrt((bw*p)^2 - 4 w0^2)) / 2
            let bp = p * bw;
            let disc = (bp * bp - 4.0 * w0 * w0).sqrt();
            bp_poles.push((bp + disc) / 2.0);
            bp_poles.push((bp - disc) / 2.0);
        }
        // bilinear transform
        let z_poles: Vec<Complex64> = bp_poles
            .iter()
            .map(|s| (Complex64::new(fs2, 0.0) + s) / (Complex64::new(fs2, 0.0) - s))
            .collect();

        // pair conjugates into real second-order denominators
        let mut remaining = z_poles;
        let mut sections = Vec::with_capacity(n);
        while let Some(p) = remaining.pop() {
            let conj_idx = remaining
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - p.conj())
                        .norm()
                        .partial_cmp(&(*b - p.conj()).norm())
                        .unwrap()
                })
                .map(|(i, _)| i)
                .ok_or_else(|| DasError::Numeric("unpaired filter pole".into()))?;
            let q = remaining.swap_remove(conj_idx);
            // (z - p)(z - q) = z^2 - (p+q) z + p q ; real by conjugacy
            let a1 = -(p + q).re;
            let a2 = (p * q).re;
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, a1, a2],
            });
        }

        // unit gain at the warped center frequency
        let theta0 = 2.0 * (w0 / fs2).atan();
        let mut filter = BandpassFilter {
            order,
            lo,
            hi,
            fs,
            sections,
        };
        let g = filter.response_at(theta0 * fs / (2.0 * std::f64::consts::PI)).norm();
        if !(g.is_finite() && g > 0.0) {
            return Err(DasError::Numeric("degenerate band-pass gain".into()));
        }
        for c in filter.sections[0].b.iter_mut() {
            *c /= g;
        }
        Ok(filter)
    }

    /// Complex frequency response at `freq_hz` (single pass).
    pub fn response_at(&self, freq_hz: f64) -> Complex64 {
        let omega = 2.0 * std::f64::consts::PI * freq_hz / self.fs;
        let z1 = Complex64::new(omega.cos(), -omega.sin()); // z^-1
        let z2 = z1 * z1;
        let mut h = Complex64::new(1.0, 0.0);
        for s in &self.sections {
            let num = s.b[0] + s.b[1] * z1 + s.b[2] * z2;
            let den = s.a[0] + s.a[1] * z1 + s.a[2] * z2;
            h *= num / den;
        }
        h
    }

    fn forward(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.filter_in_place(x);
        }
    }

    /// Zero-phase application: odd-reflection padding of `3·order`
    /// samples, then forward and time-reversed passes.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (3 * self.order).min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        self.forward(&mut ext);
        ext.reverse();
        self.forward(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase order-4 Butterworth band-pass of `x`.
pub fn bandpass(x: &[f64], fs: f64, lo: f64, hi: f64) -> Result<Vec<f64>> {
    let filter = BandpassFilter::design(4, lo, hi, fs)?;
    Ok(filter.filtfilt(x))
}

/// Detrend and band-pass every SP row of a strain matrix.
pub fn preprocess_matrix(
    m: &crate::sim::StrainMatrix,
    lo: f64,
    hi: f64,
) -> Result<crate::sim::StrainMatrix> {
    let filter = BandpassFilter::design(4, lo, hi, m.fs)?;
    let mut data = m.data.clone();
    for mut row in data.rows_mut() {
        let cleaned = detrend(row.as_slice().expect("row-major strain matrix"))?;
        let filtered = filter.filtfilt(&cleaned);
        for (v, f) in row.iter_mut().zip(filtered) {
            *v = f;
        }
    }
    Ok(crate::sim::StrainMatrix {
        data,
        fs: m.fs,
        sp_ids: m.sp_ids.clone(),
    })
}

/// Cut `x` into Hamming-weighted frames on `grid`, tagged with `sp`.
///
/// Frames start at offsets `0, n_shift, 2·n_shift, ...`; a trailing
/// stretch shorter than one window is dropped.
pub fn segment_windows(x: &[f64], grid: &WindowGrid, sp: usize) -> Result<Vec<WindowFrame>> {
    if x.len() < grid.n_win {
        return Err(DasError::Config(format!(
            "signal too short: {} samples < one {}-sample window",
            x.len(),
            grid.n_win
        )));
    }
    let w = hamming(grid.n_win)?;
    let count = grid.frame_count(x.len());
    let mut frames = Vec::with_capacity(count);
    for index in 0..count {
        let off = index * grid.n_shift;
        let samples: Vec<f64> = x[off..off + grid.n_win]
            .iter()
            .zip(&w)
            .map(|(&v, &wk)| v * wk)
            .collect();
        frames.push(WindowFrame {
            sp,
            index,
            samples,
            t_start_s: index as f64 * grid.shift_s,
        });
    }
    Ok(frames)
}
