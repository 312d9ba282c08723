//! Windowing and spectral feature extraction.
//!
//! Two features are computed per window:
//!
//! * **Feature I**: the first `D_L/2` FFT magnitudes of every channel
//!   (DC bin included), concatenated channel-major and clipped to `[0, 10]`.
//! * **Feature II**: per channel, the normalized frequencies at which the
//!   cumulative periodogram crosses 25 %, 50 % and 75 % of the total energy.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Upper bound applied to every Feature I entry.
pub const FEATURE_CAP: f64 = 10.0;

/// Cumulative-energy levels reported by Feature II.
pub const ENERGY_LEVELS: [f64; 3] = [0.25, 0.50, 0.75];

/// A multichannel acceleration record, stored channel-major (`N × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct RawStream {
    sample_rate_hz: f64,
    samples: Array2<f64>,
}

impl RawStream {
    pub fn new(sample_rate_hz: f64, samples: Array2<f64>) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.nrows() == 0 {
            return Err(Error::invalid("stream needs at least one channel"));
        }
        Ok(Self {
            sample_rate_hz,
            samples,
        })
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }
}

/// One detection unit: `N` channels by `D_L` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    pub index: usize,
    data: Array2<f64>,
}

impl TimeSeriesWindow {
    pub fn new(index: usize, data: Array2<f64>) -> Result<Self> {
        let d_l = data.ncols();
        if d_l < 4 || d_l % 2 != 0 {
            return Err(Error::invalid(format!(
                "window length must be even and >= 4, got {d_l}"
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::invalid("window needs at least one channel"));
        }
        Ok(Self { index, data })
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }
}

/// Splits a stream into `⌊M / d_l⌋` contiguous, non-overlapping windows.
/// The trailing remainder is dropped.
pub fn make_windows(stream: &RawStream, d_l: usize) -> Result<Vec<TimeSeriesWindow>> {
    if d_l == 0 || d_l % 2 != 0 {
        return Err(Error::invalid(format!(
            "window length must be even and non-zero, got {d_l}"
        )));
    }
    if stream.len() < d_l {
        return Err(Error::InsufficientData {
            needed: d_l,
            available: stream.len(),
        });
    }
    let count = stream.len() / d_l;
    (0..count)
        .map(|w| {
            let data = stream
                .samples
                .slice(ndarray::s![.., w * d_l..(w + 1) * d_l])
                .to_owned();
            TimeSeriesWindow::new(w, data)
        })
        .collect()
}

/// High-dimensional feature: capped half-spectrum magnitudes, length `N·D_L/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureI(Vec<f64>);

/// Low-dimensional feature: three energy quartiles per channel, length `3N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureII(Vec<f64>);

macro_rules! feature_vec {
    ($t:ty) => {
        impl $t {
            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }
    };
}

feature_vec!(FeatureI);
feature_vec!(FeatureII);

impl FeatureI {
    /// Wraps an already-capped vector. Entries outside `[0, 10]` or non-finite
    /// are rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=FEATURE_CAP).contains(*v)))
        {
            return Err(Error::InvalidData(format!(
                "feature I entry {v} outside [0, {FEATURE_CAP}]"
            )));
        }
        Ok(Self(values))
    }
}

impl FeatureII {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// FFT plan for a fixed window length. Cheap to share across threads.
#[derive(Clone)]
pub struct SpectralExtractor {
    d_l: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralExtractor")
            .field("d_l", &self.d_l)
            .finish()
    }
}

impl SpectralExtractor {
    pub fn new(d_l: usize) -> Result<Self> {
        if d_l < 4 || d_l % 2 != 0 {
            return Err(Error::invalid(format!(
                "window length must be even and >= 4, got {d_l}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(d_l);
        Ok(Self { d_l, fft })
    }

    pub fn window_len(&self) -> usize {
        self.d_l
    }

    /// Full complex DFT of one channel, unnormalized.
    pub fn spectrum(&self, channel: ArrayView1<'_, f64>) -> Result<Vec<Complex<f64>>> {
        if channel.len() != self.d_l {
            return Err(Error::invalid(format!(
                "channel has {} samples, expected {}",
                channel.len(),
                self.d_l
            )));
        }
        let mut buf = Vec::with_capacity(self.d_l);
        for &x in channel.iter() {
            if !x.is_finite() {
                return Err(Error::InvalidData(format!("non-finite sample {x}")));
            }
            buf.push(Complex::new(x, 0.0));
        }
        self.fft.process(&mut buf);
        Ok(buf)
    }

    /// `N × D_L/2` matrix of magnitudes for bins `0 .. D_L/2`.
    pub fn half_magnitudes(&self, window: &TimeSeriesWindow) -> Result<Array2<f64>> {
        if window.len() != self.d_l {
            return Err(Error::invalid(format!(
                "window has {} samples, extractor built for {}",
                window.len(),
                self.d_l
            )));
        }
        let half = self.d_l / 2;
        let mut out = Array2::zeros((window.channels(), half));
        for (ch, row) in window.data.axis_iter(Axis(0)).enumerate() {
            let spec = self.spectrum(row)?;
            for (dst, c) in out.row_mut(ch).iter_mut().zip(&spec[..half]) {
                *dst = c.norm();
            }
        }
        Ok(out)
    }

    pub fn feature_i(&self, window: &TimeSeriesWindow) -> Result<FeatureI> {
        Ok(cap_magnitudes(&self.half_magnitudes(window)?))
    }

    pub fn feature_ii(&self, window: &TimeSeriesWindow) -> Result<FeatureII> {
        quartiles_from_magnitudes(self.half_magnitudes(window)?.view())
    }

    /// Both features from a single FFT pass. Feature II uses the unclipped
    /// magnitudes.
    pub fn features(&self, window: &TimeSeriesWindow) -> Result<(FeatureI, FeatureII)> {
        let mags = self.half_magnitudes(window)?;
        let f2 = quartiles_from_magnitudes(mags.view())?;
        Ok((cap_magnitudes(&mags), f2))
    }
}

fn cap_magnitudes(mags: &Array2<f64>) -> FeatureI {
    FeatureI(mags.iter().map(|&m| m.clamp(0.0, FEATURE_CAP)).collect())
}

fn quartiles_from_magnitudes(mags: ArrayView2<'_, f64>) -> Result<FeatureII> {
    let mut out = Vec::with_capacity(3 * mags.nrows());
    for (ch, row) in mags.axis_iter(Axis(0)).enumerate() {
        let psd = periodogram(row.as_slice().unwrap_or(&row.to_vec()))
            .map_err(|_| Error::DegenerateSpectrum { channel: ch })?;
        out.extend_from_slice(&energy_quartiles(&psd));
    }
    Ok(FeatureII(out))
}

pub fn fft_half_magnitudes(window: &TimeSeriesWindow) -> Result<Array2<f64>> {
    SpectralExtractor::new(window.len())?.half_magnitudes(window)
}

pub fn extract_feature_i(window: &TimeSeriesWindow) -> Result<FeatureI> {
    SpectralExtractor::new(window.len())?.feature_i(window)
}

pub fn extract_feature_ii(window: &TimeSeriesWindow) -> Result<FeatureII> {
    SpectralExtractor::new(window.len())?.feature_ii(window)
}

/// Normalized periodogram: squared magnitudes divided by their sum.
pub fn periodogram(magnitudes: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = magnitudes.iter().map(|m| m * m).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateSpectrum { channel: 0 });
    }
    Ok(magnitudes.iter().map(|m| m * m / total).collect())
}

/// Normalized frequencies (fraction of Nyquist) where the cumulative `psd`
/// first reaches 25 %, 50 % and 75 %.
///
/// Bin `j` is taken to span `[j, j + 1)`; the cumulative curve is piecewise
/// linear through `(0, 0), (1, c_0), …, (H, c_{H-1})` and the crossing
/// position is divided by `H = psd.len()`.
pub fn energy_quartiles(psd: &[f64]) -> [f64; 3] {
    let h = psd.len();
    let mut out = [1.0; 3];
    let mut level = 0;
    let mut prev = 0.0;
    for (j, &p) in psd.iter().enumerate() {
        let cum = prev + p;
        while level < 3 && cum >= ENERGY_LEVELS[level] {
            let frac = if p > 0.0 {
                ((ENERGY_LEVELS[level] - prev) / p).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out[level] = (j as f64 + frac) / h as f64;
            level += 1;
        }
        if level == 3 {
            break;
        }
        prev = cum;
    }
    out
}

/// Rebuilds Feature II from a (possibly generated) Feature I vector of
/// `n` channels of `d_l / 2` capped magnitudes.
pub fn feature_ii_from_feature_i(f1: &[f64], n: usize, d_l: usize) -> Result<FeatureII> {
    let half = d_l / 2;
    if n == 0 || half == 0 || f1.len() != n * half {
        return Err(Error::invalid(format!(
            "feature I length {} does not match {n} channels x {half} bins",
            f1.len()
        )));
    }
    let mut out = Vec::with_capacity(3 * n);
    for (ch, chunk) in f1.chunks_exact(half).enumerate() {
        let psd = periodogram(chunk).map_err(|_| Error::DegenerateSpectrum { channel: ch })?;
        out.extend_from_slice(&energy_quartiles(&psd));
    }
    Ok(FeatureII(out))
}
