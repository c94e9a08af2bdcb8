//! Whole-corpus stages: extraction over a manifest, the statistical
//! analysis bundle, and the classifier comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{decode_wav, RecordingMeta};
use crate::classify::{default_sets, run_comparison, ComparisonTable, LooOptions, SetSpec, SvmParams};
use crate::config::AnalysisConfig;
use crate::dataset::{normalize, LabeledMatrix, NormalizedMatrix};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::stats::{gate_features, pairwise_separation, pc_anova, pca_fit, AnovaResult, PcaModel, SeparationMatrix};

pub struct Extraction {
    /// Successful recordings, in manifest order.
    pub rows: Vec<(RecordingMeta, FeatureVector)>,
    pub failures: Vec<(PathBuf, Error)>,
}

/// Decode and extract every manifest entry on the current rayon pool.
/// Relative paths resolve against `base`. `progress` sees each finished
/// file with its manifest index.
pub fn extract_recordings<F>(records: &[RecordingMeta], base: &Path, config: &AnalysisConfig, progress: F) -> Extraction
where
    F: Fn(usize, &Path, std::result::Result<(), &Error>) + Sync,
{
    let results: Vec<Result<FeatureVector>> = records
        .par_iter()
        .enumerate()
        .map(|(i, meta)| {
            let path = base.join(&meta.path);
            let out = decode_wav(&path).and_then(|clip| extract_features(&clip, config));
            progress(i, &path, out.as_ref().map(|_| ()));
            out
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (meta, r) in records.iter().zip(results) {
        match r {
            Ok(v) => rows.push((meta.clone(), v)),
            Err(e) => failures.push((base.join(&meta.path), e)),
        }
    }
    Extraction { rows, failures }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub normalized: NormalizedMatrix,
    pub anova: Vec<AnovaResult>,
    pub kept: Vec<String>,
    pub discarded: Vec<String>,
    pub separation: SeparationMatrix,
    pub pca: PcaModel,
    pub pc_anova: Vec<AnovaResult>,
}

/// Normalize, gate at `config.alpha`, then run the post-hoc separation and
/// the PCA on the kept features.
pub fn analyze(matrix: &LabeledMatrix, config: &AnalysisConfig) -> Result<Analysis> {
    config.validate()?;
    let normalized = normalize(matrix)?;
    let (kept, anova) = gate_features(&normalized.matrix, config.alpha)?;
    if kept.is_empty() {
        return Err(Error::InsufficientData(format!("no feature is significant at alpha = {}", config.alpha)));
    }
    let discarded = matrix
        .feature_names
        .iter()
        .filter(|f| !kept.contains(f))
        .cloned()
        .collect();
    let separation = pairwise_separation(&normalized.matrix.select(&kept)?, config.alpha, config.posthoc)?;
    let pca = pca_fit(&normalized.matrix, &kept)?;
    let pc_anova = pc_anova(&pca, &normalized.matrix)?;
    Ok(Analysis {
        normalized,
        anova,
        kept,
        discarded,
        separation,
        pca,
        pc_anova,
    })
}

/// Leave-one-out comparison of the default sets followed by `extra`.
pub fn compare(analysis: &Analysis, config: &AnalysisConfig, extra: &[SetSpec]) -> Result<ComparisonTable> {
    let mut sets = default_sets();
    for s in extra {
        if sets.iter().any(|d| d.name == s.name) {
            return Err(Error::Subset(format!("set name {} is already in use", s.name)));
        }
        sets.push(s.clone());
    }
    let opts = LooOptions {
        params: SvmParams::from_config(config),
        pca_refit: config.pca_refit,
    };
    run_comparison(
        &analysis.normalized.matrix,
        &analysis.kept,
        &analysis.pca,
        &sets,
        &opts,
        config.bpm_nn_in_subsets,
    )
}

/// Human-readable digest of an analysis.
pub fn analysis_summary(a: &Analysis, config: &AnalysisConfig) -> String {
    let m = &a.normalized.matrix;
    let mut s = String::new();
    let _ = writeln!(s, "recordings: {}", m.n_rows());
    let _ = writeln!(s, "features: {}", m.n_features());
    let _ = writeln!(s, "alpha: {}", config.alpha);
    let _ = writeln!(s, "kept features: {}", a.kept.len());
    if a.discarded.is_empty() {
        let _ = writeln!(s, "discarded features: none");
    } else {
        let _ = writeln!(s, "discarded features: {}", a.discarded.join(", "));
        for f in &a.discarded {
            if let Some(r) = a.anova.iter().find(|r| &r.feature == f) {
                let _ = writeln!(s, "  {f}: F = {:.4}, p = {:.4}", r.f, r.p);
            }
        }
    }
    let degenerate: Vec<String> = a
        .normalized
        .normalization_audit
        .iter()
        .filter(|e| e.degenerate)
        .map(|e| format!("{} ({})", e.feature, e.scope))
        .collect();
    if !degenerate.is_empty() {
        let _ = writeln!(s, "degenerate normalization groups: {}", degenerate.join(", "));
    }
    let covered = a.separation.covered_pairs();
    let _ = writeln!(s, "emotion pairs separated: {}/21", covered.len());
    let missing: Vec<String> = crate::emotion::Emotion::pairs()
        .into_iter()
        .filter(|p| !covered.contains(p))
        .map(|(x, y)| format!("{x}-{y}"))
        .collect();
    if !missing.is_empty() {
        let _ = writeln!(s, "pairs without a separating feature: {}", missing.join(", "));
    }
    let _ = writeln!(s, "pca components (eigenvalue > 1): {}", a.pca.n_kaiser);
    let shown: Vec<String> = a
        .pca
        .explained
        .iter()
        .take(7)
        .enumerate()
        .map(|(i, e)| format!("PC{} {:.4}", i + 1, e))
        .collect();
    let _ = writeln!(s, "cumulative explained variance: {}", shown.join(", "));
    let sig: Vec<&str> = a
        .pc_anova
        .iter()
        .filter(|r| r.p < config.alpha)
        .map(|r| r.feature.as_str())
        .collect();
    let _ = writeln!(
        s,
        "significant components: {}",
        if sig.is_empty() { "none".to_string() } else { sig.join(", ") }
    );
    s
}

pub fn comparison_summary(table: &ComparisonTable) -> String {
    let mut s = String::new();
    for e in &table.entries {
        let _ = writeln!(
            s,
            "{:>6}: macro F1 {:.4}, accuracy {:.4}",
            e.set,
            e.report.macro_f1,
            e.confusion.accuracy()
        );
    }
    s
}
