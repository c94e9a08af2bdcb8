//! Per-recording feature extraction: four global scalars plus frame- or
//! note-level tracks that are collapsed to median and IQR.

use serde::{Deserialize, Serialize};

use crate::audio::{active_region, normalize_silence, AudioClip, SilenceRule};
use crate::config::AnalysisConfig;
use crate::dataset::summarize_track;
use crate::dsp::{
    amplitude_envelope, detect_onsets, estimate_f0, extract_partials, fill_frame, frame_count, Envelope,
    OnsetList, PartialSet, Spectrum, SpectrumAnalyzer,
};
use crate::error::{Error, Result};

/// Tracked feature families in canonical order. `T2` is only part of the
/// vector in the 28-feature mode.
pub const TRACKS: [&str; 12] = [
    "ATK", "HAE", "NOE", "NSN", "HRD", "EBF", "T1", "T2", "T3", "INH", "ROH", "OER",
];

pub const GLOBALS: [&str; 4] = ["BPM", "BPM_nn", "RMS", "LOW"];

/// Ordered feature names: 26 by default, 28 with `include_t2`.
pub fn feature_names(include_t2: bool) -> Vec<String> {
    let mut names: Vec<String> = GLOBALS.iter().map(|s| s.to_string()).collect();
    for t in TRACKS {
        if t == "T2" && !include_t2 {
            continue;
        }
        names.push(format!("{t}_M"));
        names.push(format!("{t}_IQR"));
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub feature: String,
    pub values: Vec<f64>,
    /// Frame index (or note index for ATK) each value came from.
    pub frame_indices: Vec<usize>,
}

impl FeatureTrack {
    pub fn new(feature: impl Into<String>) -> Self {
        FeatureTrack {
            feature: feature.into(),
            values: Vec::new(),
            frame_indices: Vec::new(),
        }
    }

    pub fn push(&mut self, index: usize, value: f64) {
        self.values.push(value);
        self.frame_indices.push(index);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Named feature scalars for one recording, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }
}

/// Tempo from the median inter-onset interval, clamped to [30, 300] BPM.
pub fn bpm(onsets: &OnsetList) -> Result<f64> {
    if onsets.len() < 3 {
        return Err(Error::InsufficientOnsets { found: onsets.len() });
    }
    let mut iois: Vec<f64> = onsets.onsets.windows(2).map(|w| w[1] - w[0]).collect();
    let ioi = median(&mut iois);
    if !(ioi > 0.0) {
        return Ok(300.0);
    }
    Ok((60.0 / ioi).clamp(30.0, 300.0))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Samples from the first to the last one above threshold inside the
/// active region.
fn active<'a>(clip: &'a AudioClip, rule: &SilenceRule) -> Result<&'a [f64]> {
    let (a, b) = active_region(clip, rule)?;
    let s = &clip.samples()[a..=b];
    let thr = rule.threshold_amplitude();
    match (s.iter().position(|x| x.abs() >= thr), s.iter().rposition(|x| x.abs() >= thr)) {
        (Some(i), Some(j)) => Ok(&s[i..=j]),
        _ => Ok(s),
    }
}

/// RMS over the non-silent part of the clip.
pub fn rms_global(clip: &AudioClip, rule: &SilenceRule) -> Result<f64> {
    let s = active(clip, rule)?;
    Ok((s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt())
}

/// Fraction of non-overlapping frames whose RMS is strictly below the mean
/// frame RMS, over the non-silent part of the clip.
pub fn low_energy(clip: &AudioClip, frame: f64, rule: &SilenceRule) -> Result<f64> {
    if !(frame > 0.0) {
        return Err(Error::Domain(format!("frame length must be positive, got {frame}")));
    }
    let s = active(clip, rule)?;
    let n = ((frame * clip.sample_rate() as f64).round() as usize).max(1);
    let rms: Vec<f64> = if s.len() < n {
        vec![(s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt()]
    } else {
        s.chunks_exact(n)
            .map(|c| (c.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt())
            .collect()
    };
    Ok(low_energy_fraction(&rms))
}

/// The LOW rule applied to a list of frame RMS values. Values within a
/// relative 1e-9 of the mean count as ties, not as below.
pub fn low_energy_fraction(frame_rms: &[f64]) -> f64 {
    if frame_rms.is_empty() {
        return 0.0;
    }
    let mean = frame_rms.iter().sum::<f64>() / frame_rms.len() as f64;
    let limit = mean - 1e-9 * mean.abs();
    frame_rms.iter().filter(|&&r| r < limit).count() as f64 / frame_rms.len() as f64
}

fn is_local_min(v: &[f64], i: usize) -> bool {
    let left = i == 0 || v[i] <= v[i - 1];
    let right = i + 1 >= v.len() || v[i] < v[i + 1];
    left && right
}

fn is_local_max(v: &[f64], i: usize) -> bool {
    let left = i == 0 || v[i] >= v[i - 1];
    let right = i + 1 >= v.len() || v[i] > v[i + 1];
    left && right
}

/// Envelope rise from the last local minimum at or before each onset to the
/// first local maximum at or after it.
pub fn attack_leaps(env: &Envelope, onsets: &OnsetList) -> FeatureTrack {
    let mut track = FeatureTrack::new("ATK");
    let v = &env.values;
    if v.is_empty() {
        return track;
    }
    for (note, &t) in onsets.onsets.iter().enumerate() {
        let k = env.index_at(t);
        let start = (0..=k).rev().find(|&i| is_local_min(v, i)).unwrap_or(0);
        let end = (k..v.len()).find(|&i| is_local_max(v, i)).unwrap_or(v.len() - 1);
        track.push(note, (v[end] - v[start]).max(0.0));
    }
    track
}

/// Harmonic energy, residual (noise) energy and noise fraction of a frame.
pub fn harmonic_noise_split(spectrum: &Spectrum, partials: &PartialSet) -> Option<(f64, f64, f64)> {
    if partials.is_empty() {
        return None;
    }
    let total = spectrum.energy();
    if !(total > 0.0) {
        return None;
    }
    let hae = partials.energy();
    let noe = (total - hae).max(0.0);
    Some((hae, noe, (noe / total).clamp(0.0, 1.0)))
}

/// Mean absolute deviation of partial amplitudes from their 3-point
/// smoothed envelope (2-point at the ends).
pub fn harmonic_spectral_deviation(partials: &PartialSet) -> Option<f64> {
    let a = partials.amplitudes();
    let n = a.len();
    if n < 3 {
        return None;
    }
    let mut sum = 0.0;
    for h in 0..n {
        let se = if h == 0 {
            (a[0] + a[1]) / 2.0
        } else if h == n - 1 {
            (a[n - 2] + a[n - 1]) / 2.0
        } else {
            (a[h - 1] + a[h] + a[h + 1]) / 3.0
        };
        sum += (a[h] - se).abs();
    }
    Some(sum / n as f64)
}

/// Fraction of spectral energy strictly above `cutoff` Hz.
pub fn brightness(spectrum: &Spectrum, cutoff: f64) -> Result<Option<f64>> {
    if !(cutoff > 0.0 && cutoff < spectrum.nyquist()) {
        return Err(Error::Domain(format!(
            "brightness cutoff must lie in (0, {}), got {cutoff}",
            spectrum.nyquist()
        )));
    }
    let total = spectrum.energy();
    if !(total > 0.0) {
        return Ok(None);
    }
    Ok(Some((spectrum.energy_above(cutoff) / total).clamp(0.0, 1.0)))
}

/// Energy shares of harmonic 1, harmonics 2–4 and harmonics 5 and up.
pub fn tristimulus(partials: &PartialSet) -> Option<(f64, f64, f64)> {
    let (mut e1, mut e2, mut e3) = (0.0, 0.0, 0.0);
    for p in &partials.partials {
        let e = p.amplitude * p.amplitude;
        match p.harmonic {
            1 => e1 += e,
            2..=4 => e2 += e,
            _ => e3 += e,
        }
    }
    let total = e1 + e2 + e3;
    if !(total > 0.0) {
        return None;
    }
    Some((e1 / total, e2 / total, e3 / total))
}

/// Energy-weighted deviation of partials from `h·f0`, relative to `f0 / 2`.
pub fn inharmonicity(partials: &PartialSet) -> Option<f64> {
    let f0 = partials.f0;
    if partials.len() < 2 || !(f0 > 0.0) {
        return None;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for p in &partials.partials {
        let e = p.amplitude * p.amplitude;
        num += e * (p.frequency - p.harmonic as f64 * f0).abs();
        den += e;
    }
    (den > 0.0).then(|| 2.0 / f0 * num / den)
}

/// Plomp–Levelt dissonance of two unit-amplitude partials.
pub fn pair_dissonance(f1: f64, f2: f64) -> f64 {
    const B1: f64 = 3.5;
    const B2: f64 = 5.75;
    let s = 0.24 / (0.0207 * f1.min(f2) + 18.96);
    let df = (f1 - f2).abs();
    (-B1 * s * df).exp() - (-B2 * s * df).exp()
}

/// Sum of amplitude-weighted pair dissonances; `normalized` divides by the
/// total partial energy, making the value independent of level.
pub fn roughness(partials: &PartialSet, normalized: bool) -> f64 {
    let p = &partials.partials;
    let mut sum = 0.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            sum += p[i].amplitude * p[j].amplitude * pair_dissonance(p[i].frequency, p[j].frequency);
        }
    }
    if normalized {
        let e = partials.energy();
        if e > 0.0 {
            return sum / e;
        }
    }
    sum
}

/// Odd-to-even harmonic energy ratio, clamped to `[1/cap, cap]`.
pub fn odd_even_ratio(partials: &PartialSet, cap: f64) -> Option<f64> {
    if partials.len() < 2 {
        return None;
    }
    let (mut odd, mut even) = (0.0, 0.0);
    for p in &partials.partials {
        let e = p.amplitude * p.amplitude;
        if p.harmonic % 2 == 1 {
            odd += e;
        } else {
            even += e;
        }
    }
    let ratio = if even > 0.0 { odd / even } else { cap };
    Some(ratio.clamp(1.0 / cap, cap))
}

/// All per-frame tracks of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTracks {
    pub hae: FeatureTrack,
    pub noe: FeatureTrack,
    pub nsn: FeatureTrack,
    pub hrd: FeatureTrack,
    pub ebf: FeatureTrack,
    pub t1: FeatureTrack,
    pub t2: FeatureTrack,
    pub t3: FeatureTrack,
    pub inh: FeatureTrack,
    pub roh: FeatureTrack,
    pub oer: FeatureTrack,
}

/// Spectral tracks over the frames of an already silence-normalized clip.
/// EBF uses every frame above the silence threshold; harmonic features use
/// voiced frames only.
pub fn frame_tracks(clip: &AudioClip, config: &AnalysisConfig) -> Result<FrameTracks> {
    let samples = clip.samples();
    let n = config.frame_size;
    if samples.len() < n {
        return Err(Error::InputTooShort {
            needed: n,
            available: samples.len(),
        });
    }
    let analyzer = SpectrumAnalyzer::new(n, config.window, clip.sample_rate())?;
    let f0_search = config.f0_search();
    let partial_search = config.partial_search();
    let silence = 10f64.powf(config.silence_threshold_db / 20.0);
    let mut t = FrameTracks {
        hae: FeatureTrack::new("HAE"),
        noe: FeatureTrack::new("NOE"),
        nsn: FeatureTrack::new("NSN"),
        hrd: FeatureTrack::new("HRD"),
        ebf: FeatureTrack::new("EBF"),
        t1: FeatureTrack::new("T1"),
        t2: FeatureTrack::new("T2"),
        t3: FeatureTrack::new("T3"),
        inh: FeatureTrack::new("INH"),
        roh: FeatureTrack::new("ROH"),
        oer: FeatureTrack::new("OER"),
    };
    let mut buf = vec![0.0; n];
    for k in 0..frame_count(samples.len(), n, config.hop) {
        fill_frame(samples, k, config.hop, &mut buf);
        let spectrum = analyzer.spectrum(&buf, k)?;
        if spectrum.rms() < silence {
            continue;
        }
        if let Some(b) = brightness(&spectrum, config.brightness_cutoff)? {
            t.ebf.push(k, b);
        }
        let Some(f0) = estimate_f0(&spectrum, &f0_search).hz() else {
            continue;
        };
        let partials = extract_partials(&spectrum, f0, &partial_search)?;
        if let Some((hae, noe, nsn)) = harmonic_noise_split(&spectrum, &partials) {
            t.hae.push(k, hae);
            t.noe.push(k, noe);
            t.nsn.push(k, nsn);
        }
        if let Some(v) = harmonic_spectral_deviation(&partials) {
            t.hrd.push(k, v);
        }
        if let Some((a, b, c)) = tristimulus(&partials) {
            t.t1.push(k, a);
            t.t2.push(k, b);
            t.t3.push(k, c);
        }
        if let Some(v) = inharmonicity(&partials) {
            t.inh.push(k, v);
        }
        if !partials.is_empty() {
            t.roh.push(k, roughness(&partials, config.roughness_normalized));
        }
        if let Some(v) = odd_even_ratio(&partials, config.oer_cap) {
            t.oer.push(k, v);
        }
    }
    Ok(t)
}

/// Full per-recording chain: silence normalization, onsets and tempo,
/// global level features, spectral tracks, and median/IQR collapse.
pub fn extract_features(clip: &AudioClip, config: &AnalysisConfig) -> Result<FeatureVector> {
    config.validate()?;
    let rule = config.silence_rule();
    let clip = normalize_silence(clip, config.silence_pad, &rule)?;

    let env = amplitude_envelope(
        clip.samples(),
        clip.sample_rate(),
        config.envelope_hop,
        config.envelope_smoothing,
    )?;
    let onsets = detect_onsets(&env, &config.onset_params());
    let tempo = bpm(&onsets)?;
    let rms = rms_global(&clip, &rule)?;
    let low = low_energy(&clip, config.low_energy_frame, &rule)?;
    let atk = attack_leaps(&env, &onsets);
    let tracks = frame_tracks(&clip, config)?;

    let mut names = Vec::with_capacity(28);
    let mut values = Vec::with_capacity(28);
    for (name, v) in GLOBALS.iter().zip([tempo, tempo, rms, low]) {
        names.push(name.to_string());
        values.push(v);
    }
    let ordered = [
        &atk,
        &tracks.hae,
        &tracks.noe,
        &tracks.nsn,
        &tracks.hrd,
        &tracks.ebf,
        &tracks.t1,
        &tracks.t2,
        &tracks.t3,
        &tracks.inh,
        &tracks.roh,
        &tracks.oer,
    ];
    for track in ordered {
        if track.feature == "T2" && !config.include_t2 {
            continue;
        }
        let (m, iqr) = summarize_track(track)?;
        names.push(format!("{}_M", track.feature));
        values.push(m);
        names.push(format!("{}_IQR", track.feature));
        values.push(iqr);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::FeatureUndefined(names[i].clone()));
    }
    Ok(FeatureVector { names, values })
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::dsp::{magnitude_spectrum, Partial, Window};
    use proptest::prelude::*;

    fn partials(f0: f64, amps: &[f64], detune: &[f64]) -> PartialSet {
        PartialSet {
            f0,
            partials: amps
                .iter()
                .zip(detune)
                .enumerate()
                .map(|(i, (&a, &d))| Partial {
                    harmonic: i + 1,
                    frequency: f0 * (i + 1) as f64 * (1.0 + d),
                    amplitude: a,
                })
                .collect(),
        }
    }

    proptest! {
        #[test]
        fn partial_features_are_in_range(
            f0 in 50.0f64..500.0,
            amps in prop::collection::vec(0.0f64..1.0, 1..20),
            detune in prop::collection::vec(-0.03f64..0.03, 20),
        ) {
            let set = partials(f0, &amps, &detune);
            if let Some((t1, t2, t3)) = tristimulus(&set) {
                prop_assert!((t1 + t2 + t3 - 1.0).abs() <= 1e-9);
                for t in [t1, t2, t3] {
                    prop_assert!((0.0..=1.0).contains(&t));
                }
            }
            if let Some(v) = inharmonicity(&set) {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
            if let Some(v) = odd_even_ratio(&set, 100.0) {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
            if let Some(v) = harmonic_spectral_deviation(&set) {
                prop_assert!(v.is_finite() && v >= 0.0);
            }
            for normalized in [false, true] {
                let r = roughness(&set, normalized);
                prop_assert!(r.is_finite() && r >= 0.0);
            }
        }

        #[test]
        fn noise_split_is_a_fraction(
            f0 in 80.0f64..300.0,
            amps in prop::collection::vec(0.0f64..0.2, 1..10),
            noise in prop::collection::vec(-0.05f64..0.05, 2048),
        ) {
            let frame: Vec<f64> = (0..2048)
                .map(|i| {
                    let t = i as f64 / 44100.0;
                    noise[i] + amps
                        .iter()
                        .enumerate()
                        .map(|(j, a)| a * (2.0 * std::f64::consts::PI * f0 * (j + 1) as f64 * t).sin())
                        .sum::<f64>()
                })
                .collect();
            let spec = magnitude_spectrum(&frame, Window::Hann, 44100).unwrap();
            let set = crate::dsp::extract_partials(&spec, f0, &Default::default()).unwrap();
            if let Some((hae, noe, nsn)) = harmonic_noise_split(&spec, &set) {
                prop_assert!(hae >= 0.0 && noe >= 0.0);
                prop_assert!((0.0..=1.0).contains(&nsn));
            }
            if let Some(b) = brightness(&spec, 1000.0).unwrap() {
                prop_assert!((0.0..=1.0).contains(&b));
            }
        }

        #[test]
        fn low_energy_is_a_fraction(rms in prop::collection::vec(0.0f64..1.0, 1..200)) {
            let v = low_energy_fraction(&rms);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn bpm_is_clamped(iois in prop::collection::vec(0.001f64..5.0, 2..30)) {
            let mut t = 0.0;
            let mut onsets = vec![0.0];
            for d in iois {
                t += d;
                onsets.push(t);
            }
            let v = bpm(&OnsetList { onsets }).unwrap();
            prop_assert!((30.0..=300.0).contains(&v));
        }
    }
}
