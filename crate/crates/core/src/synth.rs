//! Additive-synthesis performances with known ground truth.
//!
//! All randomness flows from ChaCha8 generators seeded with `u64` values,
//! so a corpus is reproducible from its master seed on any platform.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{write_atomic, write_manifest, write_wav, AudioClip, RecordingMeta, SampleFormat};
use crate::emotion::Emotion;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
pub const PAD: f64 = 0.5;
/// Release tail length in multiples of the release time constant.
const TAIL: f64 = 6.0;
/// Largest fractional detune, well inside the default partial tolerance.
pub const MAX_DETUNE: f64 = 0.015;
/// Features whose per-recording spread the default corpus draws
/// independently of the emotion.
pub const NULL_FEATURES: [&str; 2] = ["ATK_IQR", "T1_IQR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TonePreset {
    pub f0: f64,
    pub harmonic_amps: Vec<f64>,
    /// Fractional frequency offset per harmonic: `f_h = h·f0·(1 + detune_h)`.
    pub detune: Vec<f64>,
    /// Share of the note energy carried by white noise.
    pub noise_mix: f64,
    pub attack: f64,
    /// Time constant of the exponential release, seconds.
    pub release: f64,
    /// Time constant of the decay after the attack; 0 keeps the level flat.
    pub decay: f64,
}

impl TonePreset {
    pub fn harmonic(f0: f64, amps: &[f64]) -> Self {
        TonePreset {
            f0,
            harmonic_amps: amps.to_vec(),
            detune: vec![0.0; amps.len()],
            noise_mix: 0.0,
            attack: 0.01,
            release: 0.02,
            decay: 0.0,
        }
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq = sample_rate as f64 / 2.0;
        if !(self.f0 > 0.0) {
            return Err(Error::Domain(format!("f0 must be positive, got {}", self.f0)));
        }
        if self.harmonic_amps.iter().any(|a| !(*a >= 0.0)) || !self.harmonic_amps.iter().any(|a| *a > 0.0) {
            return Err(Error::Domain("harmonic amplitudes must be >= 0 with one positive".into()));
        }
        if !(0.0..1.0).contains(&self.noise_mix) {
            return Err(Error::Domain(format!("noise_mix must lie in [0, 1), got {}", self.noise_mix)));
        }
        if self.attack < 0.0 || self.release <= 0.0 || self.decay < 0.0 {
            return Err(Error::Domain("attack, decay must be >= 0 and release > 0".into()));
        }
        for (i, _) in self.harmonic_amps.iter().enumerate().filter(|(_, a)| **a > 0.0) {
            let h = (i + 1) as f64;
            let f = h * self.f0 * (1.0 + self.detune.get(i).copied().unwrap_or(0.0));
            if f >= nyq {
                return Err(Error::Domain(format!(
                    "harmonic {} at {f:.1} Hz is at or above Nyquist ({nyq} Hz)",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Harmonic power `Σ a_h² / 2`.
    fn harmonic_power(&self) -> f64 {
        self.harmonic_amps.iter().map(|a| a * a / 2.0).sum()
    }

    fn noise_sd(&self) -> f64 {
        let p = self.harmonic_power();
        (p * self.noise_mix / (1.0 - self.noise_mix)).sqrt()
    }

    /// Scale amplitudes so the sustained note has RMS `rms`.
    fn with_rms(mut self, rms: f64) -> Self {
        let total = self.harmonic_power() / (1.0 - self.noise_mix);
        let g = rms / total.sqrt();
        self.harmonic_amps.iter_mut().for_each(|a| *a *= g);
        self
    }
}

/// Exact content of one synthesized note at full envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneTruth {
    pub f0: f64,
    pub partials: Vec<crate::dsp::Partial>,
    /// Power of the harmonic part, `Σ a_h² / 2`.
    pub harmonic_power: f64,
    pub noise_power: f64,
}

impl ToneTruth {
    fn of(preset: &TonePreset) -> Self {
        let partials = preset
            .harmonic_amps
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(i, &a)| crate::dsp::Partial {
                harmonic: i + 1,
                frequency: (i + 1) as f64 * preset.f0 * (1.0 + preset.detune.get(i).copied().unwrap_or(0.0)),
                amplitude: a,
            })
            .collect();
        let sd = preset.noise_sd();
        ToneTruth {
            f0: preset.f0,
            partials,
            harmonic_power: preset.harmonic_power(),
            noise_power: sd * sd,
        }
    }
}

fn envelope_at(t: f64, hold: f64, p: &TonePreset) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let level_at = |t: f64| {
        let rise = if p.attack > 0.0 { (t / p.attack).min(1.0) } else { 1.0 };
        let fall = if p.decay > 0.0 && t > p.attack {
            (-(t - p.attack) / p.decay).exp()
        } else {
            1.0
        };
        rise * fall
    };
    if t <= hold {
        level_at(t)
    } else {
        level_at(hold) * (-(t - hold) / p.release).exp()
    }
}

/// Add one note starting at sample `start`, held for `hold` seconds before
/// the release.
fn render_note(out: &mut [f64], start: usize, hold: f64, p: &TonePreset, sr: u32, rng: &mut ChaCha8Rng) {
    let sr_f = sr as f64;
    let len = ((hold + TAIL * p.release) * sr_f).ceil() as usize;
    let n_h = p.harmonic_amps.len();
    let omegas: Vec<f64> = (0..n_h)
        .map(|i| 2.0 * PI * (i + 1) as f64 * p.f0 * (1.0 + p.detune.get(i).copied().unwrap_or(0.0)) / sr_f)
        .collect();
    // Schroeder phases keep the crest factor low.
    let phases: Vec<f64> = (0..n_h).map(|i| PI * (i * (i + 1)) as f64 / n_h as f64).collect();
    let sd = p.noise_sd();
    for i in 0..len.min(out.len().saturating_sub(start)) {
        let env = envelope_at(i as f64 / sr_f, hold, p);
        let mut s = 0.0;
        for h in 0..n_h {
            s += p.harmonic_amps[h] * (omegas[h] * i as f64 + phases[h]).cos();
        }
        if sd > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            s += sd * z;
        }
        out[start + i] += env * s;
    }
}

fn peak_check(samples: &[f64]) -> Result<()> {
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 1.0 {
        return Err(Error::Domain(format!("synthesized peak {peak:.3} exceeds full scale")));
    }
    Ok(())
}

/// A single held tone of `duration` seconds followed by its release tail.
pub fn synth_tone(preset: &TonePreset, duration: f64, sample_rate: u32, seed: u64) -> Result<(AudioClip, ToneTruth)> {
    preset.validate(sample_rate)?;
    if !(duration > 0.0) {
        return Err(Error::Domain(format!("duration must be positive, got {duration}")));
    }
    let len = ((duration + TAIL * preset.release) * sample_rate as f64).ceil() as usize;
    let mut out = vec![0.0; len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    render_note(&mut out, 0, duration, preset, sample_rate, &mut rng);
    peak_check(&out)?;
    Ok((AudioClip::new(out, sample_rate)?, ToneTruth::of(preset)))
}

/// Spectral shape of a note: `u_h = h^(−tilt)` for `h ≥ 2`, even harmonics
/// scaled by `even_gain`, and the fundamental sized to carry `fundamental`
/// of the harmonic energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    pub fundamental: f64,
    pub tilt: f64,
    pub even_gain: f64,
    pub noise_mix: f64,
    /// Target inharmonicity as measured by the features module.
    pub inharmonicity: f64,
}

/// Random spreads applied per recording (ranges) or per note (sds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Onset timing sd as a fraction of the inter-onset interval.
    pub timing: f64,
    /// Half-width of the additive per-note level jitter, drawn per
    /// recording from this range (absolute RMS units).
    pub accent: (f64, f64),
    /// Per-note sd of the tilt exponent.
    pub tilt: f64,
    /// Per-note sd of `ln(noise_mix)`.
    pub noise: f64,
    /// Per-note sd of `ln(even_gain)`.
    pub even: f64,
    /// Per-note inharmonicity sd.
    pub inharmonicity: f64,
    /// Half-width of the per-note fundamental energy share jitter, drawn
    /// per recording from this range.
    pub fundamental: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformancePreset {
    pub label: Emotion,
    pub bpm: f64,
    /// Sustained RMS of a note.
    pub level: f64,
    /// Fraction of the inter-onset interval a note is held.
    pub legato: f64,
    pub f0: f64,
    pub timbre: Timbre,
    pub attack: f64,
    pub release: f64,
    pub decay: f64,
    pub jitter: Jitter,
    pub seed: u64,
}

impl PerformancePreset {
    fn validate(&self) -> Result<()> {
        if !(30.0..=300.0).contains(&self.bpm) {
            return Err(Error::Domain(format!("bpm must lie in [30, 300], got {}", self.bpm)));
        }
        if !(self.level > 0.0 && self.level <= 1.0) {
            return Err(Error::Domain(format!("level must lie in (0, 1], got {}", self.level)));
        }
        if !(self.legato > 0.0 && self.legato <= 1.0) {
            return Err(Error::Domain(format!("legato must lie in (0, 1], got {}", self.legato)));
        }
        Ok(())
    }
}

/// Number of harmonics the features module can see at `f0` (band top below
/// Nyquist, at most 20).
fn visible_harmonics(f0: f64, sample_rate: u32) -> usize {
    let nyq = sample_rate as f64 / 2.0;
    (1..=20).take_while(|&h| h as f64 * f0 * 1.03 < nyq).count()
}

/// Harmonic amplitudes (unit scale) and detune that give the requested
/// timbre. Harmonics up to a split index are flat and the rest sharp by the
/// same fraction (at most [`MAX_DETUNE`]); the split is the one needing the
/// least detune. The detune is solved in closed form against the
/// energy-weighted least-squares f0 the analysis uses.
pub fn timbre_partials(f0: f64, timbre: &Timbre, sample_rate: u32) -> (Vec<f64>, Vec<f64>) {
    let n = visible_harmonics(f0, sample_rate);
    let mut amps: Vec<f64> = (1..=n)
        .map(|h| {
            let a = (h as f64).powf(-timbre.tilt);
            if h % 2 == 0 {
                a * timbre.even_gain
            } else {
                a
            }
        })
        .collect();
    let rest: f64 = amps[1..].iter().map(|a| a * a).sum();
    let t1 = timbre.fundamental.clamp(0.01, 0.99);
    amps[0] = (t1 * rest / (1.0 - t1)).sqrt();
    let e: Vec<f64> = amps.iter().map(|a| a * a).collect();
    let etot: f64 = e.iter().sum();
    let eh2: f64 = e.iter().enumerate().map(|(i, e)| e * ((i + 1) as f64).powi(2)).sum();
    // With f_h = h·f0·(1 + β·s_h) the fitted f0 is f0·(1 + β·q̄) and the
    // measured inharmonicity is 2βS / (1 + βq̄).
    let sensitivity = |split: usize| {
        let sign = |h: usize| if h <= split { -1.0 } else { 1.0 };
        let qbar = e
            .iter()
            .enumerate()
            .map(|(i, e)| e * ((i + 1) as f64).powi(2) * sign(i + 1))
            .sum::<f64>()
            / eh2;
        let s = e
            .iter()
            .enumerate()
            .map(|(i, e)| e * (i + 1) as f64 * (sign(i + 1) - qbar).abs())
            .sum::<f64>()
            / etot;
        (s, qbar)
    };
    let (split, (s, qbar)) = (1..n.max(2))
        .map(|m| (m, sensitivity(m)))
        .fold((1, (0.0, 0.0)), |best, cur| if cur.1 .0 > best.1 .0 { cur } else { best });
    let iota = timbre.inharmonicity.max(0.0);
    let beta = if s > 0.0 { (iota / (2.0 * s - iota * qbar)).min(MAX_DETUNE) } else { 0.0 };
    let detune = (1..=n).map(|h| if h <= split { -beta } else { beta }).collect();
    (amps, detune)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteTruth {
    pub onset: f64,
    pub hold: f64,
    /// Sustained RMS.
    pub level: f64,
    pub timbre: Timbre,
    pub tone: ToneTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTruth {
    pub label: Emotion,
    pub bpm: f64,
    pub notes: Vec<NoteTruth>,
    /// Per-recording accent and fundamental-share half-widths.
    pub accent_width: f64,
    pub fundamental_width: f64,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Render `n_notes` notes at `60 / bpm` spacing, padded with 0.5 s of
/// silence on both sides.
pub fn synth_performance(preset: &PerformancePreset, n_notes: usize) -> Result<(AudioClip, PerformanceTruth)> {
    preset.validate()?;
    if n_notes < 2 {
        return Err(Error::Domain(format!("need at least 2 notes, got {n_notes}")));
    }
    let sr = SAMPLE_RATE;
    let mut rng = ChaCha8Rng::seed_from_u64(preset.seed);
    let j = &preset.jitter;
    let ioi = 60.0 / preset.bpm;
    let hold = preset.legato * ioi;
    let accent_width = rng.random_range(j.accent.0..=j.accent.1);
    let t1_width = rng.random_range(j.fundamental.0..=j.fundamental.1);

    let mut notes = Vec::with_capacity(n_notes);
    for k in 0..n_notes {
        let shift = if k == 0 {
            0.0
        } else {
            (j.timing * ioi * gauss(&mut rng)).clamp(-0.25 * ioi, 0.25 * ioi)
        };
        let onset = PAD + k as f64 * ioi + shift;
        let level = (preset.level + accent_width * rng.random_range(-1.0..=1.0)).max(0.2 * preset.level);
        let t = &preset.timbre;
        let timbre = Timbre {
            fundamental: t.fundamental + t1_width * rng.random_range(-1.0..=1.0),
            tilt: t.tilt + j.tilt * gauss(&mut rng),
            even_gain: t.even_gain * (j.even * gauss(&mut rng)).exp(),
            noise_mix: (t.noise_mix * (j.noise * gauss(&mut rng)).exp()).min(0.9),
            inharmonicity: (t.inharmonicity + j.inharmonicity * 3f64.sqrt() * rng.random_range(-1.0..=1.0)).max(0.0),
        };
        let (amps, detune) = timbre_partials(preset.f0, &timbre, sr);
        let tone = TonePreset {
            f0: preset.f0,
            harmonic_amps: amps,
            detune,
            noise_mix: timbre.noise_mix,
            attack: preset.attack.min(hold),
            release: preset.release,
            decay: preset.decay,
        }
        .with_rms(level);
        tone.validate(sr)?;
        notes.push((onset, tone, level, timbre));
    }

    let last = notes.last().map_or(0.0, |n| n.0);
    let len = ((last + hold + TAIL * preset.release + PAD) * sr as f64).ceil() as usize;
    let mut out = vec![0.0; len];
    let mut truth = Vec::with_capacity(n_notes);
    for (onset, tone, level, timbre) in notes {
        let start = (onset * sr as f64).round() as usize;
        render_note(&mut out, start, hold, &tone, sr, &mut rng);
        truth.push(NoteTruth {
            onset: start as f64 / sr as f64,
            hold,
            level,
            timbre,
            tone: ToneTruth::of(&tone),
        });
    }
    peak_check(&out)?;
    Ok((
        AudioClip::with_bit_depth(out, sr, 24)?,
        PerformanceTruth {
            label: preset.label,
            bpm: preset.bpm,
            notes: truth,
            accent_width,
            fundamental_width: t1_width,
        },
    ))
}

fn default_jitter() -> Jitter {
    Jitter {
        timing: 0.01,
        accent: (0.015, 0.03),
        tilt: 0.05,
        noise: 0.1,
        even: 0.05,
        inharmonicity: 0.0008,
        fundamental: (0.08, 0.16),
    }
}

/// Default emotion archetypes. These are fixtures chosen to make every
/// emotion pair distinguishable, not measurements of real performances.
pub fn archetypes() -> Vec<PerformancePreset> {
    let base = default_jitter();
    #[allow(clippy::too_many_arguments)]
    let p = |label, bpm, level, legato, t1, tilt, even_gain, noise_mix, inh, attack, spread: f64, timing| PerformancePreset {
        label,
        bpm,
        level,
        legato,
        f0: 116.54,
        timbre: Timbre {
            fundamental: t1,
            tilt,
            even_gain,
            noise_mix,
            inharmonicity: inh,
        },
        attack,
        release: 0.02,
        decay: 0.5,
        jitter: Jitter {
            timing,
            tilt: base.tilt * spread,
            noise: base.noise * spread,
            even: base.even * spread,
            inharmonicity: base.inharmonicity * spread,
            ..base
        },
        seed: 0,
    };
    use Emotion::*;
    vec![
        // fast, loud, noisy, bright
        p(Anger, 132.0, 0.17, 0.55, 0.30, 0.7, 1.0, 0.10, 0.026, 0.008, 3.0, 0.01),
        // detuned, rough, dull
        p(Disgust, 76.0, 0.11, 0.70, 0.45, 1.1, 0.5, 0.04, 0.020, 0.025, 2.0, 0.01),
        // soft, irregular
        p(Fear, 108.0, 0.07, 0.35, 0.60, 1.5, 0.8, 0.06, 0.016, 0.015, 6.0, 0.05),
        // fast, bright, staccato
        p(Happiness, 124.0, 0.14, 0.30, 0.35, 0.9, 1.3, 0.015, 0.022, 0.010, 2.5, 0.01),
        // slow, soft, legato, dark
        p(Sadness, 58.0, 0.06, 0.95, 0.75, 1.6, 0.6, 0.025, 0.013, 0.030, 1.0, 0.01),
        // bright even partials, sudden attacks
        p(Surprise, 100.0, 0.13, 0.45, 0.40, 1.0, 1.6, 0.05, 0.030, 0.004, 4.5, 0.02),
        // moderate everything
        p(Neutral, 85.0, 0.10, 0.75, 0.55, 1.3, 1.0, 0.01, 0.014, 0.015, 1.5, 0.01),
    ]
}

/// Systematic per-performer deviations applied to all seven clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformerOffsets {
    pub level_scale: f64,
    pub bpm_scale: f64,
    pub tilt_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub meta: RecordingMeta,
    pub seed: u64,
    pub truth: PerformanceTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTruth {
    pub master_seed: u64,
    pub n_notes: usize,
    pub null_features: Vec<String>,
    pub performers: Vec<(String, PerformerOffsets)>,
    pub recordings: Vec<CorpusEntry>,
}

/// Synthesize a corpus in memory: every performer plays every preset.
pub fn generate_corpus(
    presets: &[PerformancePreset],
    n_performers: usize,
    n_notes: usize,
    master_seed: u64,
) -> Result<(CorpusTruth, Vec<AudioClip>)> {
    let mut labels: Vec<Emotion> = presets.iter().map(|p| p.label).collect();
    labels.sort();
    let n = labels.len();
    labels.dedup();
    if labels.len() != n {
        return Err(Error::Config("each emotion label may appear in only one preset".into()));
    }
    if n_performers == 0 {
        return Err(Error::Config("need at least one performer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut performers = Vec::with_capacity(n_performers);
    let mut jobs = Vec::with_capacity(n_performers * presets.len());
    for i in 0..n_performers {
        let id = format!("p{:02}", i + 1);
        let off = PerformerOffsets {
            level_scale: rng.random_range(0.8..=1.25),
            bpm_scale: rng.random_range(0.94..=1.06),
            tilt_shift: rng.random_range(-0.2..=0.2),
        };
        for p in presets {
            let mut q = p.clone();
            q.level = (q.level * off.level_scale).min(1.0);
            q.bpm = (q.bpm * off.bpm_scale).clamp(30.0, 300.0);
            q.timbre.tilt += off.tilt_shift;
            q.seed = rng.random();
            let meta = RecordingMeta {
                path: format!("{id}_{}.wav", q.label).into(),
                performer: id.clone(),
                emotion: q.label,
            };
            jobs.push((meta, q));
        }
        performers.push((id, off));
    }
    let rendered: Vec<(CorpusEntry, AudioClip)> = jobs
        .into_par_iter()
        .map(|(meta, q)| {
            let (clip, truth) = synth_performance(&q, n_notes)?;
            Ok((
                CorpusEntry {
                    meta,
                    seed: q.seed,
                    truth,
                },
                clip,
            ))
        })
        .collect::<Result<_>>()?;
    let (recordings, clips) = rendered.into_iter().unzip();
    Ok((
        CorpusTruth {
            master_seed,
            n_notes,
            null_features: NULL_FEATURES.iter().map(|s| s.to_string()).collect(),
            performers,
            recordings,
        },
        clips,
    ))
}

/// Write WAV files (24-bit), `manifest.csv` and `truth.json` into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, truth: &CorpusTruth, clips: &[AudioClip]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (entry, clip) in truth.recordings.iter().zip(clips) {
        write_wav(dir.join(&entry.meta.path), clip, SampleFormat::Int24)?;
    }
    let metas: Vec<RecordingMeta> = truth.recordings.iter().map(|e| e.meta.clone()).collect();
    write_manifest(dir.join("manifest.csv"), &metas)?;
    let json = serde_json::to_string_pretty(truth)?;
    write_atomic(dir.join("truth.json"), json.as_bytes())
}

/// Generate and write a corpus; returns the truth table.
pub fn synth_corpus(
    presets: &[PerformancePreset],
    n_performers: usize,
    n_notes: usize,
    master_seed: u64,
    dir: impl AsRef<Path>,
) -> Result<CorpusTruth> {
    let (truth, clips) = generate_corpus(presets, n_performers, n_notes, master_seed)?;
    write_corpus(dir, &truth, &clips)?;
    Ok(truth)
}
