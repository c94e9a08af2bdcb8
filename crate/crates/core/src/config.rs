//! The resolved set of pipeline tunables.
//!
//! The struct is flat so it maps one-to-one onto the `key = value` config
//! file; unknown keys are rejected when deserializing.

use serde::{Deserialize, Serialize};

use crate::audio::SilenceRule;
use crate::dsp::{F0Search, OnsetParams, PartialSearch, Window};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "expressive-config/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PostHoc {
    /// Pairwise Welch t-tests, no multiplicity correction.
    #[default]
    Welch,
    /// Welch t-tests with p-values multiplied by the 21 comparisons.
    Bonferroni,
    /// Tukey honestly-significant-difference test on the pooled variance.
    Tukey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Quantile {
    /// Linear interpolation of order statistics at position p·(n−1).
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub schema: String,

    // audio
    pub silence_pad: f64,
    pub silence_threshold_db: f64,
    pub silence_window: f64,

    // spectral analysis
    pub frame_size: usize,
    pub hop: usize,
    pub window: Window,
    pub f0_min: f64,
    pub f0_max: f64,
    pub hps_order: usize,
    pub voicing_salience_db: f64,
    pub max_harmonics: usize,
    pub harmonic_tolerance: f64,
    pub partial_floor_db: f64,
    pub partial_median_factor: f64,

    // envelope and onsets
    pub envelope_hop: usize,
    pub envelope_smoothing: f64,
    pub onset_k: f64,
    pub onset_context: f64,
    pub onset_min_gap: f64,
    pub onset_min_rise: f64,

    // features
    pub low_energy_frame: f64,
    pub brightness_cutoff: f64,
    pub oer_cap: f64,
    pub roughness_normalized: bool,
    pub include_t2: bool,
    pub quantile: Quantile,

    // statistics
    pub alpha: f64,
    pub posthoc: PostHoc,

    // classification
    pub svm_c: f64,
    pub kernel: Kernel,
    pub rbf_gamma: f64,
    pub svm_tolerance: f64,
    pub svm_max_iter: usize,
    pub pca_refit: bool,
    pub bpm_nn_in_subsets: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            schema: SCHEMA.to_string(),
            silence_pad: 0.5,
            silence_threshold_db: -60.0,
            silence_window: 0.010,
            frame_size: 2048,
            hop: 512,
            window: Window::Hann,
            f0_min: 40.0,
            f0_max: 500.0,
            hps_order: 5,
            voicing_salience_db: 10.0,
            max_harmonics: 20,
            harmonic_tolerance: 0.03,
            partial_floor_db: -60.0,
            partial_median_factor: 4.0,
            envelope_hop: 256,
            envelope_smoothing: 0.020,
            onset_k: 3.0,
            onset_context: 1.0,
            onset_min_gap: 0.080,
            onset_min_rise: 0.1,
            low_energy_frame: 0.050,
            brightness_cutoff: 1000.0,
            oer_cap: 100.0,
            roughness_normalized: false,
            include_t2: false,
            quantile: Quantile::Linear,
            alpha: 0.05,
            posthoc: PostHoc::Welch,
            svm_c: 1.0,
            kernel: Kernel::Linear,
            rbf_gamma: 0.05,
            svm_tolerance: 1e-6,
            svm_max_iter: 100_000,
            pca_refit: true,
            bpm_nn_in_subsets: false,
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.schema == SCHEMA, || {
            format!("unsupported schema {:?}, expected {SCHEMA:?}", self.schema)
        })?;
        ensure(self.silence_pad >= 0.0, || "silence_pad must be >= 0".into())?;
        ensure(self.silence_window > 0.0, || "silence_window must be > 0".into())?;
        ensure(self.frame_size >= 4 && self.frame_size.is_power_of_two(), || {
            format!("frame_size must be a power of two, got {}", self.frame_size)
        })?;
        ensure(self.hop > 0 && self.hop <= self.frame_size, || {
            "hop must satisfy 0 < hop <= frame_size".into()
        })?;
        ensure(self.f0_min > 20.0 && self.f0_max > self.f0_min, || {
            "f0 search range must satisfy 20 < f0_min < f0_max".into()
        })?;
        ensure(self.hps_order >= 1, || "hps_order must be >= 1".into())?;
        ensure(self.max_harmonics >= 1, || "max_harmonics must be >= 1".into())?;
        ensure(self.harmonic_tolerance > 0.0 && self.harmonic_tolerance < 0.5, || {
            "harmonic_tolerance must lie in (0, 0.5)".into()
        })?;
        ensure(self.envelope_hop > 0, || "envelope_hop must be > 0".into())?;
        ensure(self.envelope_smoothing >= 0.0, || "envelope_smoothing must be >= 0".into())?;
        ensure(self.onset_min_gap >= 0.0 && self.onset_context > 0.0, || {
            "onset_min_gap must be >= 0 and onset_context > 0".into()
        })?;
        ensure(self.low_energy_frame > 0.0, || "low_energy_frame must be > 0".into())?;
        ensure(self.brightness_cutoff > 0.0, || "brightness_cutoff must be > 0".into())?;
        ensure(self.oer_cap >= 1.0, || "oer_cap must be >= 1".into())?;
        ensure(self.alpha > 0.0 && self.alpha <= 1.0, || "alpha must lie in (0, 1]".into())?;
        ensure(self.svm_c > 0.0, || "svm_c must be > 0".into())?;
        ensure(self.rbf_gamma > 0.0, || "rbf_gamma must be > 0".into())?;
        ensure(self.svm_tolerance > 0.0 && self.svm_max_iter > 0, || {
            "svm_tolerance and svm_max_iter must be positive".into()
        })?;
        Ok(())
    }

    pub fn silence_rule(&self) -> SilenceRule {
        SilenceRule {
            threshold_db: self.silence_threshold_db,
            window: self.silence_window,
        }
    }

    pub fn partial_search(&self) -> PartialSearch {
        PartialSearch {
            max_harmonics: self.max_harmonics,
            tolerance: self.harmonic_tolerance,
            relative_floor_db: self.partial_floor_db,
            median_factor: self.partial_median_factor,
        }
    }

    pub fn f0_search(&self) -> F0Search {
        F0Search {
            min_hz: self.f0_min,
            max_hz: self.f0_max,
            order: self.hps_order,
            silence_db: self.silence_threshold_db,
            salience_db: self.voicing_salience_db,
            partials: self.partial_search(),
        }
    }

    pub fn onset_params(&self) -> OnsetParams {
        OnsetParams {
            k: self.onset_k,
            context: self.onset_context,
            min_gap: self.onset_min_gap,
            min_rise: self.onset_min_rise,
            floor: 10f64.powf(self.silence_threshold_db / 20.0),
        }
    }
}
