//! Track collapse, corpus matrix assembly, per-performer normalization and
//! matrix file formats.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::RecordingMeta;
use crate::emotion::Emotion;
use crate::error::{Error, Result};
use crate::features::{FeatureTrack, FeatureVector};

/// Name of the feature normalized over all rows instead of per performer.
pub const GLOBAL_FEATURE: &str = "BPM_nn";

/// Quantile by linear interpolation of order statistics at `p·(n−1)`.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and interquartile range of a track.
pub fn summarize_track(track: &FeatureTrack) -> Result<(f64, f64)> {
    if track.values.is_empty() {
        return Err(Error::FeatureUndefined(track.feature.clone()));
    }
    let mut v = track.values.clone();
    v.sort_by(f64::total_cmp);
    let median = quantile(&v, 0.5);
    Ok((median, quantile(&v, 0.75) - quantile(&v, 0.25)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub performer: String,
    pub emotion: Emotion,
    pub values: Vec<f64>,
}

/// Recordings × features, rows ordered by performer then emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub feature_names: Vec<String>,
    pub rows: Vec<Row>,
}

impl LabeledMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    pub fn labels(&self) -> Vec<Emotion> {
        self.rows.iter().map(|r| r.emotion).collect()
    }

    /// Distinct performers in row order.
    pub fn performers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if out.last() != Some(&r.performer) && !out.contains(&r.performer) {
                out.push(r.performer.clone());
            }
        }
        out
    }

    /// Copy restricted to the named features, in the given order.
    pub fn select(&self, names: &[String]) -> Result<LabeledMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| Error::Schema(format!("unknown feature {n:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(LabeledMatrix {
            feature_names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| Row {
                    performer: r.performer.clone(),
                    emotion: r.emotion,
                    values: idx.iter().map(|&j| r.values[j]).collect(),
                })
                .collect(),
        })
    }

    fn sort_rows(&mut self) {
        self.rows
            .sort_by(|a, b| a.performer.cmp(&b.performer).then(a.emotion.cmp(&b.emotion)));
    }
}

/// Stack per-recording vectors into a matrix with deterministic row order.
pub fn assemble_matrix(vectors: &[(RecordingMeta, FeatureVector)]) -> Result<LabeledMatrix> {
    let Some((_, first)) = vectors.first() else {
        return Err(Error::InsufficientData("no feature vectors to assemble".into()));
    };
    let names = first.names.clone();
    let mut rows = Vec::with_capacity(vectors.len());
    for (meta, v) in vectors {
        if v.names != names {
            return Err(Error::Schema(format!(
                "{}: feature names differ from the first recording",
                meta.path.display()
            )));
        }
        rows.push(Row {
            performer: meta.performer.clone(),
            emotion: meta.emotion,
            values: v.values.clone(),
        });
    }
    let mut m = LabeledMatrix {
        feature_names: names,
        rows,
    };
    m.sort_rows();
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub feature: String,
    /// Performer id, or `"*"` for the all-rows scope.
    pub scope: String,
    pub mean: f64,
    pub sd: f64,
    /// True when sd was zero and the column was mapped to zeros.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub matrix: LabeledMatrix,
    pub normalization_audit: Vec<AuditEntry>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Z-score every feature within each performer (sample sd); `BPM_nn` over
/// all rows. Constant columns become zeros and are flagged in the audit.
pub fn normalize(matrix: &LabeledMatrix) -> Result<NormalizedMatrix> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in matrix.rows.iter().enumerate() {
        groups.entry(r.performer.as_str()).or_default().push(i);
    }
    if let Some((p, _)) = groups.iter().find(|(_, rows)| rows.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "performer {p:?} has a single recording; per-performer normalization needs at least 2"
        )));
    }
    let mut out = matrix.clone();
    let mut audit = Vec::new();
    let all: Vec<usize> = (0..matrix.n_rows()).collect();
    for (j, name) in matrix.feature_names.iter().enumerate() {
        let scopes: Vec<(&str, &[usize])> = if name == GLOBAL_FEATURE {
            if all.len() < 2 {
                return Err(Error::InsufficientData("need at least 2 rows".into()));
            }
            vec![("*", &all[..])]
        } else {
            groups.iter().map(|(p, r)| (*p, &r[..])).collect()
        };
        for (scope, rows) in scopes {
            let vals: Vec<f64> = rows.iter().map(|&i| matrix.rows[i].values[j]).collect();
            let (mean, sd) = mean_sd(&vals);
            let degenerate = !(sd > 1e-12 * mean.abs().max(1e-300));
            for (&i, &v) in rows.iter().zip(&vals) {
                out.rows[i].values[j] = if degenerate { 0.0 } else { (v - mean) / sd };
            }
            audit.push(AuditEntry {
                feature: name.clone(),
                scope: scope.to_string(),
                mean,
                sd: if degenerate { 0.0 } else { sd },
                degenerate,
            });
        }
    }
    Ok(NormalizedMatrix {
        matrix: out,
        normalization_audit: audit,
    })
}

/// `v` rounded to 9 significant digits, printed in shortest form.
pub fn format_value(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

pub fn matrix_to_csv(matrix: &LabeledMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["performer".to_string(), "emotion".to_string()];
    header.extend(matrix.feature_names.iter().cloned());
    w.write_record(&header)?;
    for r in &matrix.rows {
        let mut rec = vec![r.performer.clone(), r.emotion.name().to_string()];
        rec.extend(r.values.iter().map(|&v| format_value(v)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_matrix_csv(text: &str) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "performer" || &header[1] != "emotion" {
        return Err(Error::Schema(
            "matrix header must start with performer,emotion and name at least one feature".into(),
        ));
    }
    let feature_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!("row {row}: expected {} fields", header.len())));
        }
        let emotion = rec[1].parse().map_err(|_| Error::Label {
            row,
            label: rec[1].to_string(),
        })?;
        let values = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Schema(format!("row {row}: bad value {s:?}")))
            })
            .collect::<Result<_>>()?;
        rows.push(Row {
            performer: rec[0].to_string(),
            emotion,
            values,
        });
    }
    let mut m = LabeledMatrix { feature_names, rows };
    m.sort_rows();
    Ok(m)
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<LabeledMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text)
}

pub fn normalized_to_json(m: &NormalizedMatrix) -> Result<String> {
    Ok(serde_json::to_string_pretty(m)?)
}
