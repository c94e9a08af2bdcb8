//! Signal-analysis substrate shared by the feature extractors.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }

    /// Normalised magnitude response at a fractional bin offset `x`, with
    /// `response(0) == 1`.
    fn response(self, x: f64) -> f64 {
        if x.abs() < 1e-12 {
            return 1.0;
        }
        let s = (PI * x).sin() / (PI * x);
        match self {
            Window::Hann => s / (1.0 - x * x),
            Window::Rectangular => s,
        }
    }
}

/// Number of frames `frame_signal` produces for `len` samples.
pub fn frame_count(len: usize, frame_size: usize, hop: usize) -> usize {
    if len < frame_size {
        0
    } else {
        (len - frame_size).div_ceil(hop) + 1
    }
}

fn check_framing(len: usize, frame_size: usize, hop: usize) -> Result<()> {
    if hop == 0 || hop > frame_size {
        return Err(Error::Config(format!(
            "hop must satisfy 0 < hop <= frame_size, got hop {hop}, frame {frame_size}"
        )));
    }
    if frame_size > len {
        return Err(Error::InputTooShort {
            needed: frame_size,
            available: len,
        });
    }
    Ok(())
}

/// Copy frame `k` into `buf`, zero-padding past the end of the signal.
pub fn fill_frame(samples: &[f64], k: usize, hop: usize, buf: &mut [f64]) {
    let start = k * hop;
    let end = (start + buf.len()).min(samples.len());
    let n = end.saturating_sub(start);
    buf[..n].copy_from_slice(&samples[start..end]);
    buf[n..].fill(0.0);
}

/// Split a signal into overlapping frames; the last frame is zero-padded.
pub fn frame_signal(samples: &[f64], frame_size: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    check_framing(samples.len(), frame_size, hop)?;
    let count = frame_count(samples.len(), frame_size, hop);
    Ok((0..count)
        .map(|k| {
            let mut buf = vec![0.0; frame_size];
            fill_frame(samples, k, hop, &mut buf);
            buf
        })
        .collect())
}

/// One-sided magnitude spectrum of a windowed frame, scaled by `2 / Σw` so a
/// sinusoid centred on a bin reports its amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bin_freqs: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub frame_index: usize,
    pub window: Window,
    /// Equivalent noise bandwidth of the window, in bins.
    pub enbw: f64,
}

impl Spectrum {
    pub fn frame_size(&self) -> usize {
        2 * (self.magnitudes.len() - 1)
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_freqs[1] - self.bin_freqs[0]
    }

    pub fn nyquist(&self) -> f64 {
        *self.bin_freqs.last().unwrap()
    }

    /// Total energy on the same scale as squared sinusoid amplitudes: a sine
    /// of amplitude `A` contributes `A²`, stationary noise of variance `σ²`
    /// contributes `2σ²`.
    pub fn energy(&self) -> f64 {
        let last = self.magnitudes.len() - 1;
        let sum: f64 = self
            .magnitudes
            .iter()
            .enumerate()
            .map(|(k, m)| if k == 0 || k == last { 0.5 * m * m } else { m * m })
            .sum();
        sum / self.enbw
    }

    /// Energy above `cutoff` Hz (bins strictly above), same scale as `energy`.
    pub fn energy_above(&self, cutoff: f64) -> f64 {
        let last = self.magnitudes.len() - 1;
        let sum: f64 = self
            .bin_freqs
            .iter()
            .zip(&self.magnitudes)
            .enumerate()
            .filter(|(_, (f, _))| **f > cutoff)
            .map(|(k, (_, m))| if k == last { 0.5 * m * m } else { m * m })
            .sum();
        sum / self.enbw
    }

    /// Frame RMS estimated from the spectrum.
    pub fn rms(&self) -> f64 {
        (self.energy() / 2.0).sqrt()
    }

    fn magnitude_at(&self, bin: f64) -> f64 {
        let lo = bin.floor() as usize;
        let hi = lo + 1;
        let m = &self.magnitudes;
        match (m.get(lo), m.get(hi)) {
            (Some(a), Some(b)) => a.max(*b),
            (Some(a), None) => *a,
            _ => 0.0,
        }
    }

    /// Sub-bin refinement of the peak at bin `k`: returns (fractional bin,
    /// amplitude). Uses the closed-form three-bin estimator for Hann and a
    /// log-parabolic fit otherwise.
    pub fn refine_peak(&self, k: usize) -> (f64, f64) {
        let m = &self.magnitudes;
        if k == 0 || k + 1 >= m.len() {
            return (k as f64, m[k]);
        }
        let (a, b, c) = (m[k - 1], m[k], m[k + 1]);
        let delta = match self.window {
            Window::Hann => {
                let denom = a + 2.0 * b + c;
                if denom > 0.0 {
                    (2.0 * (c - a) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            }
            Window::Rectangular => {
                let floor = f64::MIN_POSITIVE;
                let (la, lb, lc) = (a.max(floor).ln(), b.max(floor).ln(), c.max(floor).ln());
                let denom = la - 2.0 * lb + lc;
                if denom < 0.0 {
                    (0.5 * (la - lc) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            }
        };
        (k as f64 + delta, b / self.window.response(delta))
    }
}

/// Reusable FFT plan plus window for a fixed frame size.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Window,
    coefficients: Vec<f64>,
    scale: f64,
    enbw: f64,
    bin_freqs: Vec<f64>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("frame_size", &self.coefficients.len())
            .field("window", &self.window)
            .finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(frame_size: usize, window: Window, sample_rate: u32) -> Result<Self> {
        if frame_size < 4 || !frame_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "frame size must be a power of two >= 4, got {frame_size}"
            )));
        }
        let coefficients = window.coefficients(frame_size);
        let sum: f64 = coefficients.iter().sum();
        let sum_sq: f64 = coefficients.iter().map(|w| w * w).sum();
        let bin = sample_rate as f64 / frame_size as f64;
        Ok(SpectrumAnalyzer {
            fft: FftPlanner::new().plan_fft_forward(frame_size),
            window,
            scale: 2.0 / sum,
            enbw: frame_size as f64 * sum_sq / (sum * sum),
            bin_freqs: (0..=frame_size / 2).map(|k| k as f64 * bin).collect(),
            coefficients,
        })
    }

    pub fn frame_size(&self) -> usize {
        self.coefficients.len()
    }

    pub fn spectrum(&self, frame: &[f64], frame_index: usize) -> Result<Spectrum> {
        if frame.len() != self.frame_size() {
            return Err(Error::Config(format!(
                "frame length {} does not match analyzer size {}",
                frame.len(),
                self.frame_size()
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.coefficients)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        let magnitudes = buf[..=self.frame_size() / 2]
            .iter()
            .map(|c| c.norm() * self.scale)
            .collect();
        Ok(Spectrum {
            bin_freqs: self.bin_freqs.clone(),
            magnitudes,
            frame_index,
            window: self.window,
            enbw: self.enbw,
        })
    }
}

/// Convenience wrapper that plans a transform for a single frame.
pub fn magnitude_spectrum(frame: &[f64], window: Window, sample_rate: u32) -> Result<Spectrum> {
    SpectrumAnalyzer::new(frame.len(), window, sample_rate)?.spectrum(frame, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pitch {
    Voiced(f64),
    Unvoiced,
}

impl Pitch {
    pub fn hz(self) -> Option<f64> {
        match self {
            Pitch::Voiced(f) => Some(f),
            Pitch::Unvoiced => None,
        }
    }
}

/// Parameters of the harmonic-product-spectrum pitch estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Search {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Number of downsampled spectra multiplied together.
    pub order: usize,
    /// Frames quieter than this RMS level (dBFS) are unvoiced.
    pub silence_db: f64,
    /// Minimum HPS peak height above the median HPS value, in dB per factor.
    pub salience_db: f64,
    /// Harmonics used in the least-squares refinement.
    pub partials: PartialSearch,
}

impl Default for F0Search {
    fn default() -> Self {
        F0Search {
            min_hz: 40.0,
            max_hz: 500.0,
            order: 5,
            silence_db: -60.0,
            salience_db: 10.0,
            partials: PartialSearch::default(),
        }
    }
}

/// Harmonic-product-spectrum pitch estimate with a harmonic least-squares
/// refinement. Silence or low salience yields `Pitch::Unvoiced`.
pub fn estimate_f0(spectrum: &Spectrum, search: &F0Search) -> Pitch {
    let rms = spectrum.rms();
    if !(rms > 0.0) || 20.0 * rms.log10() < search.silence_db {
        return Pitch::Unvoiced;
    }
    let bin = spectrum.bin_width();
    let order = search.order.max(1);
    let max_mag = spectrum.magnitudes.iter().cloned().fold(0.0, f64::max);
    let floor = (max_mag * 1e-3).max(f64::MIN_POSITIVE);
    let top_bin = (spectrum.magnitudes.len() - 1) as f64;

    let step = 0.1; // bins
    let lo = (search.min_hz / bin).max(step);
    let hi = (search.max_hz / bin).min(top_bin / order as f64);
    if hi <= lo {
        return Pitch::Unvoiced;
    }
    let n_grid = ((hi - lo) / step).floor() as usize + 1;
    let hps: Vec<f64> = (0..n_grid)
        .map(|i| {
            let b = lo + i as f64 * step;
            (1..=order)
                .map(|r| spectrum.magnitude_at(b * r as f64).max(floor).ln())
                .sum::<f64>()
                / order as f64
        })
        .collect();
    let (peak, &peak_val) = hps
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
    let mut sorted = hps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let salience_db = 20.0 / std::f64::consts::LN_10 * (peak_val - median);
    if salience_db < search.salience_db {
        return Pitch::Unvoiced;
    }
    let refine_grid = |i: usize| -> f64 {
        let mut pos = i as f64;
        if i > 0 && i + 1 < hps.len() {
            let (a, b, c) = (hps[i - 1], hps[i], hps[i + 1]);
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                pos += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            }
        }
        (lo + pos * step) * bin
    };

    // HPS local maxima within 3 dB/factor of the best seed the candidate list;
    // their integer multiples and submultiples are added because HPS scores
    // f0/r (pure tones) and 2·f0 (flat spectra) about as high as f0.
    let margin = 3.0 * std::f64::consts::LN_10 / 20.0;
    let mut candidates: Vec<f64> = Vec::new();
    for i in 0..hps.len() {
        let is_max = (i == 0 || hps[i] >= hps[i - 1]) && (i + 1 == hps.len() || hps[i] > hps[i + 1]);
        if is_max && hps[i] >= peak_val - margin {
            let f = refine_grid(i);
            for r in 1..=order {
                candidates.push(f * r as f64);
                candidates.push(f / r as f64);
            }
        }
    }
    let peaks = spectral_peaks(spectrum, &search.partials, search.min_hz * (1.0 - search.partials.tolerance), search.max_hz * order as f64);
    // Dark tones can leave the true f0 off the HPS maxima; the strongest
    // peaks and their submultiples cover that case.
    let mut strongest = peaks.clone();
    strongest.sort_by(|a, b| b.1.total_cmp(&a.1));
    for &(f, _) in strongest.iter().take(3) {
        for r in 1..=order {
            candidates.push(f / r as f64);
        }
    }
    candidates.retain(|&f| f >= search.min_hz && f <= search.max_hz);
    let mut f0 = candidates
        .into_iter()
        .map(|c| (harmonic_match(&peaks, c, search.partials.tolerance, bin), c))
        .fold((f64::NEG_INFINITY, refine_grid(peak)), |best, cur| if cur.0 > best.0 + 1e-9 { cur } else { best })
        .1;
    if let Some(snapped) = fit_to_peaks(&peaks, f0, search.partials.tolerance, bin) {
        f0 = snapped;
    }
    for _ in 0..2 {
        match refine_f0(spectrum, f0, &search.partials) {
            Some(refined) => f0 = refined,
            None => break,
        }
    }
    Pitch::Voiced(f0)
}

/// Significant spectral peaks `(frequency, energy)` inside `[lo, hi]` Hz.
fn spectral_peaks(spectrum: &Spectrum, params: &PartialSearch, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mags = &spectrum.magnitudes;
    let floor = noise_floor(mags, params);
    let bin = spectrum.bin_width();
    (1..mags.len() - 1)
        .filter(|&k| mags[k] >= mags[k - 1] && mags[k] > mags[k + 1] && mags[k] > floor)
        .map(|k| {
            let (pos, amp) = spectrum.refine_peak(k);
            (pos * bin, amp * amp)
        })
        .filter(|(f, _)| *f >= lo && *f <= hi)
        .collect()
}

fn on_grid(f: f64, f0: f64, tolerance: f64, bin: f64) -> Option<f64> {
    let h = (f / f0).round().max(1.0);
    ((f - h * f0).abs() <= (tolerance * h * f0).max(bin)).then_some(h)
}

/// Least-squares `f0` over the peaks that sit on the grid of `f0`.
fn fit_to_peaks(peaks: &[(f64, f64)], f0: f64, tolerance: f64, bin: f64) -> Option<f64> {
    let (num, den) = peaks.iter().fold((0.0, 0.0), |(n, d), &(f, e)| match on_grid(f, f0, tolerance, bin) {
        Some(h) => (n + e * h * f, d + e * h * h),
        None => (n, d),
    });
    (den > 0.0).then(|| num / den)
}

/// Fraction of peak energy lying on the harmonic grid of `f0`, minus half the
/// fraction of grid positions (up to the highest peak) left empty. Peaks more
/// than 30 dB below the strongest one are ignored.
fn harmonic_match(peaks: &[(f64, f64)], f0: f64, tolerance: f64, bin: f64) -> f64 {
    let strongest = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
    let peaks: Vec<(f64, f64)> = peaks.iter().copied().filter(|p| p.1 >= 1e-3 * strongest).collect();
    let peaks = &peaks[..];
    let total: f64 = peaks.iter().map(|p| p.1).sum();
    let top = peaks.iter().map(|p| p.0).fold(0.0, f64::max);
    if total <= 0.0 || top <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let width = |h: f64| (tolerance * h * f0).max(bin);
    let explained: f64 = peaks
        .iter()
        .filter(|(f, _)| on_grid(*f, f0, tolerance, bin).is_some())
        .map(|p| p.1)
        .sum();
    let predicted = ((top + width(top / f0)) / f0).floor().max(1.0) as usize;
    let missing = (1..=predicted)
        .filter(|&h| {
            let c = h as f64 * f0;
            !peaks.iter().any(|(f, _)| (f - c).abs() <= width(h as f64))
        })
        .count();
    explained / total - 0.5 * missing as f64 / predicted as f64
}

/// Energy-weighted least-squares fit of `f_h ≈ h·f0` over detected partials.
fn refine_f0(spectrum: &Spectrum, f0: f64, params: &PartialSearch) -> Option<f64> {
    let set = extract_partials(spectrum, f0, params).ok()?;
    let (num, den) = set.partials.iter().fold((0.0, 0.0), |(n, d), p| {
        let e = p.amplitude * p.amplitude;
        let h = p.harmonic as f64;
        (n + e * h * p.frequency, d + e * h * h)
    });
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partial {
    pub harmonic: usize,
    pub frequency: f64,
    pub amplitude: f64,
}

/// Harmonic partials detected in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialSet {
    pub f0: f64,
    pub partials: Vec<Partial>,
}

impl PartialSet {
    pub fn len(&self) -> usize {
        self.partials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partials.is_empty()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.partials.iter().map(|p| p.amplitude).collect()
    }

    pub fn energy(&self) -> f64 {
        self.partials.iter().map(|p| p.amplitude * p.amplitude).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialSearch {
    pub max_harmonics: usize,
    /// Half-width of the search band around `h·f0`, as a fraction.
    pub tolerance: f64,
    /// Peaks below this level relative to the frame maximum are ignored (dB).
    pub relative_floor_db: f64,
    /// Peaks must also exceed this multiple of the median magnitude.
    pub median_factor: f64,
}

impl Default for PartialSearch {
    fn default() -> Self {
        PartialSearch {
            max_harmonics: 20,
            tolerance: 0.03,
            relative_floor_db: -60.0,
            median_factor: 4.0,
        }
    }
}

fn noise_floor(mags: &[f64], params: &PartialSearch) -> f64 {
    let max_mag = mags.iter().cloned().fold(0.0, f64::max);
    let mut sorted = mags.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    (max_mag * 10f64.powf(params.relative_floor_db / 20.0)).max(median * params.median_factor)
}

/// Pick the strongest peak near each harmonic `h·f0`, refined to sub-bin
/// precision. Harmonics beyond Nyquist or without a peak above the noise
/// floor are omitted.
pub fn extract_partials(spectrum: &Spectrum, f0: f64, params: &PartialSearch) -> Result<PartialSet> {
    if !(f0 > 0.0) {
        return Err(Error::Domain(format!("f0 must be positive, got {f0}")));
    }
    if !(params.tolerance > 0.0 && params.tolerance < 0.5) {
        return Err(Error::Domain(format!(
            "tolerance must lie in (0, 0.5), got {}",
            params.tolerance
        )));
    }
    let mags = &spectrum.magnitudes;
    let bin = spectrum.bin_width();
    let nyquist = spectrum.nyquist();
    let floor = noise_floor(mags, params);

    let mut partials = Vec::new();
    for h in 1..=params.max_harmonics {
        let centre = h as f64 * f0;
        let (lo_hz, hi_hz) = (centre * (1.0 - params.tolerance), centre * (1.0 + params.tolerance));
        if hi_hz >= nyquist {
            break;
        }
        let k_lo = ((lo_hz / bin).floor() as usize).saturating_sub(1).max(1);
        let k_hi = ((hi_hz / bin).ceil() as usize + 1).min(mags.len() - 2);
        let mut best: Option<Partial> = None;
        for k in k_lo..=k_hi {
            if !(mags[k] >= mags[k - 1] && mags[k] > mags[k + 1]) || mags[k] <= floor {
                continue;
            }
            let (pos, amplitude) = spectrum.refine_peak(k);
            let frequency = pos * bin;
            if frequency < lo_hz || frequency > hi_hz {
                continue;
            }
            if best.is_none_or(|b| amplitude > b.amplitude) {
                best = Some(Partial {
                    harmonic: h,
                    frequency,
                    amplitude,
                });
            }
        }
        partials.extend(best);
    }
    Ok(PartialSet { f0, partials })
}

/// Smoothed RMS amplitude envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Envelope {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hop_seconds(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    /// Index of the envelope point nearest to time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let hop = self.hop_seconds();
        if hop <= 0.0 || self.values.is_empty() {
            return 0;
        }
        (((t - self.times[0]) / hop).round().max(0.0) as usize).min(self.values.len() - 1)
    }
}

/// Per-hop RMS over a centred window of `2·hop` samples, then a one-pole
/// low-pass with time constant `smooth` seconds.
pub fn amplitude_envelope(samples: &[f64], sample_rate: u32, hop: usize, smooth: f64) -> Result<Envelope> {
    if hop == 0 {
        return Err(Error::Config("envelope hop must be positive".into()));
    }
    let n = samples.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &s in samples {
        acc += s * s;
        prefix.push(acc);
    }
    let count = n.div_ceil(hop).max(1);
    let sr = sample_rate as f64;
    let alpha = if smooth > 0.0 {
        1.0 - (-(hop as f64) / (sr * smooth)).exp()
    } else {
        1.0
    };
    let mut y = 0.0;
    let mut times = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let centre = k * hop;
        let start = centre.saturating_sub(hop);
        let end = (centre + hop).min(n);
        let energy = (prefix[end] - prefix[start]).max(0.0);
        let rms = (energy / (2 * hop) as f64).sqrt();
        y += alpha * (rms - y);
        times.push(centre as f64 / sr);
        values.push(y.max(0.0));
    }
    Ok(Envelope { times, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetList {
    pub onsets: Vec<f64>,
}

impl OnsetList {
    pub fn len(&self) -> usize {
        self.onsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetParams {
    /// Multiplier on the median absolute deviation in the adaptive threshold.
    pub k: f64,
    /// Length of the context window for the adaptive threshold, seconds.
    pub context: f64,
    /// Minimum separation between reported onsets, seconds.
    pub min_gap: f64,
    /// Minimum log-envelope rise per hop for a peak to count.
    pub min_rise: f64,
    /// Envelope floor added before taking logs.
    pub floor: f64,
}

impl Default for OnsetParams {
    fn default() -> Self {
        OnsetParams {
            k: 3.0,
            context: 1.0,
            min_gap: 0.080,
            min_rise: 0.1,
            floor: 1e-3,
        }
    }
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Onsets at peaks of the half-wave rectified log-envelope derivative that
/// clear an adaptive median + k·MAD threshold.
pub fn detect_onsets(env: &Envelope, params: &OnsetParams) -> OnsetList {
    let n = env.len();
    if n < 3 {
        return OnsetList { onsets: Vec::new() };
    }
    let hop = env.hop_seconds();
    let logs: Vec<f64> = env.values.iter().map(|v| (v + params.floor).ln()).collect();
    let mut novelty = vec![0.0; n];
    for k in 1..n {
        novelty[k] = (logs[k] - logs[k - 1]).max(0.0);
    }
    let half = ((params.context / 2.0) / hop).round().max(1.0) as usize;
    let mut scratch = Vec::with_capacity(2 * half + 1);
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    for k in 1..n - 1 {
        let o = novelty[k];
        if o < params.min_rise || o < novelty[k - 1] || o <= novelty[k + 1] {
            continue;
        }
        let lo = k.saturating_sub(half);
        let hi = (k + half + 1).min(n);
        scratch.clear();
        scratch.extend_from_slice(&novelty[lo..hi]);
        let med = median_of(&mut scratch);
        for v in scratch.iter_mut() {
            *v = (*v - med).abs();
        }
        let mad = median_of(&mut scratch);
        if o > med + params.k * mad {
            // the rise happens between points k-1 and k
            candidates.push((env.times[k] - 0.5 * hop, o));
        }
    }
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for c in candidates {
        match kept.last_mut() {
            Some(last) if c.0 - last.0 < params.min_gap => {
                if c.1 > last.1 {
                    *last = c;
                }
            }
            _ => kept.push(c),
        }
    }
    OnsetList {
        onsets: kept.into_iter().map(|(t, _)| t.max(0.0)).collect(),
    }
}
