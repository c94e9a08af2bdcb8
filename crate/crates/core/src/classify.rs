//! One-vs-one soft-margin SVM, leave-one-out evaluation and F-scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, Kernel};
use crate::dataset::{format_value, LabeledMatrix};
use crate::emotion::Emotion;
use crate::error::{Error, Result};
use crate::stats::{pca_fit_rows, project_values, PcaModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            kernel: Kernel::Linear,
            gamma: 0.05,
            tolerance: 1e-6,
            max_iter: 100_000,
        }
    }
}

impl SvmParams {
    pub fn from_config(cfg: &AnalysisConfig) -> Self {
        SvmParams {
            c: cfg.svm_c,
            kernel: cfg.kernel,
            gamma: cfg.rbf_gamma,
            tolerance: cfg.svm_tolerance,
            max_iter: cfg.svm_max_iter,
        }
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kernel {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf => (-self.gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp(),
        }
    }
}

/// Binary machine: `f(x) = Σ coef_i K(sv_i, x) − rho`, positive side is the
/// first class of the pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub positive: Emotion,
    pub negative: Emotion,
    /// Primal weights (linear kernel only).
    pub weights: Option<Vec<f64>>,
    pub bias: f64,
    pub support: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective `½ αᵀQα − Σα` at the solution.
    pub objective: f64,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64], params: &SvmParams) -> f64 {
        match &self.weights {
            Some(w) => w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias,
            None => {
                self.support
                    .iter()
                    .zip(&self.coef)
                    .map(|(s, c)| c * params.kernel(s, x))
                    .sum::<f64>()
                    + self.bias
            }
        }
    }
}

/// Dual solution of one binary problem.
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// SMO with second-order working-set selection on
/// `min ½ αᵀQα − eᵀα, 0 ≤ α ≤ C, yᵀα = 0`, `Q_ij = y_i y_j K_ij`.
pub fn solve_dual(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> DualSolution {
    const TAU: f64 = 1e-12;
    let n = x.len();
    let c = params.c;
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| params.kernel(&x[i], &x[j])).collect())
        .collect();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i][j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (k[i][i] + k[t][t] - 2.0 * k[i][t]).max(TAU);
                let score = -b * b / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < params.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let quad = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            let (mut ni, mut nj) = (ai + delta, aj + delta);
            if diff > 0.0 {
                if nj < 0.0 {
                    nj = 0.0;
                    ni = diff;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = -diff;
            }
            if diff > 0.0 {
                if ni > c {
                    ni = c;
                    nj = c - diff;
                }
            } else if nj > c {
                nj = c;
                ni = c + diff;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            let (mut ni, mut nj) = (ai - delta, aj + delta);
            if sum > c {
                if ni > c {
                    ni = c;
                    nj = sum - c;
                }
            } else if nj < 0.0 {
                nj = 0.0;
                ni = sum;
            }
            if sum > c {
                if nj > c {
                    nj = c;
                    ni = sum - c;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = sum;
            }
            alpha[i] = ni;
            alpha[j] = nj;
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // rho from free vectors, else midpoint of the feasible interval
    let (mut sum, mut nfree) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            nfree += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if nfree > 0 {
        sum / nfree as f64
    } else {
        0.5 * (ub + lb)
    };
    let objective = 0.5 * (0..n).map(|t| alpha[t] * (grad[t] - 1.0)).sum::<f64>();
    DualSolution {
        alpha,
        rho,
        iterations,
        converged,
        objective,
    }
}

fn train_binary(x: &[Vec<f64>], y: &[f64], pos: Emotion, neg: Emotion, params: &SvmParams) -> BinarySvm {
    let sol = solve_dual(x, y, params);
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for ((xi, yi), a) in x.iter().zip(y).zip(&sol.alpha) {
        if *a > 0.0 {
            support.push(xi.clone());
            coef.push(a * yi);
        }
    }
    let weights = (params.kernel == Kernel::Linear).then(|| {
        let dim = x.first().map_or(0, Vec::len);
        let mut w = vec![0.0; dim];
        for (s, c) in support.iter().zip(&coef) {
            for (wk, sk) in w.iter_mut().zip(s) {
                *wk += c * sk;
            }
        }
        w
    });
    BinarySvm {
        positive: pos,
        negative: neg,
        weights,
        bias: -sol.rho,
        support,
        coef,
        iterations: sol.iterations,
        converged: sol.converged,
        objective: sol.objective,
    }
}

/// One binary machine per unordered class pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: Vec<Emotion>,
    pub machines: Vec<BinarySvm>,
    pub params: SvmParams,
    /// Pairs whose solver hit the iteration cap.
    pub convergence_warnings: Vec<(Emotion, Emotion)>,
}

impl SvmModel {
    /// Pairwise vote; ties go to the class earliest in canonical order.
    pub fn predict(&self, x: &[f64]) -> Emotion {
        let mut votes = [0usize; Emotion::COUNT];
        for m in &self.machines {
            let winner = if m.decision(x, &self.params) >= 0.0 {
                m.positive
            } else {
                m.negative
            };
            votes[winner.index()] += 1;
        }
        let mut best = self.classes[0];
        for &c in &self.classes {
            if votes[c.index()] > votes[best.index()] {
                best = c;
            }
        }
        best
    }
}

/// Train a one-vs-one model. Every class in `classes` must have rows.
pub fn train_svm(x: &[Vec<f64>], labels: &[Emotion], classes: &[Emotion], params: &SvmParams) -> Result<SvmModel> {
    if !(params.c > 0.0) {
        return Err(Error::Config(format!("C must be positive, got {}", params.c)));
    }
    let mut classes = classes.to_vec();
    classes.sort();
    classes.dedup();
    for &c in &classes {
        if !labels.contains(&c) {
            return Err(Error::MissingClass(c.to_string()));
        }
    }
    let mut machines = Vec::new();
    let mut warnings = Vec::new();
    for (a, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a + 1..] {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (xi, &l) in x.iter().zip(labels) {
                if l == pos || l == neg {
                    xs.push(xi.clone());
                    ys.push(if l == pos { 1.0 } else { -1.0 });
                }
            }
            let m = train_binary(&xs, &ys, pos, neg, params);
            if !m.converged {
                warnings.push((pos, neg));
            }
            machines.push(m);
        }
    }
    Ok(SvmModel {
        classes,
        machines,
        params: *params,
        convergence_warnings: warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<Emotion>,
    /// `counts[true][predicted]`, indexed by position in `classes`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<Emotion>) -> Self {
        let n = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn add(&mut self, truth: Emotion, predicted: Emotion) {
        let pos = |e: Emotion| self.classes.iter().position(|&c| c == e);
        if let (Some(t), Some(p)) = (pos(truth), pos(predicted)) {
            self.counts[t][p] += 1;
        }
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> usize {
        self.row_sums().iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: Emotion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FScoreReport {
    pub classes: Vec<ClassScore>,
    pub macro_f1: f64,
}

pub fn f_scores(cm: &ConfusionMatrix) -> Result<FScoreReport> {
    let n = cm.classes.len();
    let rows = cm.row_sums();
    let mut classes = Vec::with_capacity(n);
    for c in 0..n {
        if rows[c] == 0 {
            return Err(Error::Domain(format!("class {} has no true instances", cm.classes[c])));
        }
        let tp = cm.counts[c][c] as f64;
        let col: usize = (0..n).map(|r| cm.counts[r][c]).sum();
        let precision = if col > 0 { tp / col as f64 } else { 0.0 };
        let recall = tp / rows[c] as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        classes.push(ClassScore {
            class: cm.classes[c],
            precision,
            recall,
            f1,
        });
    }
    let macro_f1 = classes.iter().map(|s| s.f1).sum::<f64>() / n as f64;
    Ok(FScoreReport { classes, macro_f1 })
}

/// Inputs of one classifier: named features or leading principal
/// components of a feature list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureSet {
    Features(Vec<String>),
    Components { features: Vec<String>, k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LooOptions {
    pub params: SvmParams,
    /// Refit PCA on each fold's training rows; otherwise use `full_pca`.
    pub pca_refit: bool,
}

fn columns(matrix: &LabeledMatrix, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            matrix
                .feature_index(n)
                .ok_or_else(|| Error::Subset(format!("feature {n:?} is not in the matrix")))
        })
        .collect()
}

fn raw_rows(matrix: &LabeledMatrix, idx: &[usize]) -> Vec<Vec<f64>> {
    matrix
        .rows
        .iter()
        .map(|r| idx.iter().map(|&j| r.values[j]).collect())
        .collect()
}

/// Prediction for held-out row `i`.
fn loo_fold(
    matrix: &LabeledMatrix,
    set: &FeatureSet,
    opts: &LooOptions,
    full_pca: Option<&PcaModel>,
    classes: &[Emotion],
    i: usize,
) -> Result<Emotion> {
    let train: Vec<usize> = (0..matrix.n_rows()).filter(|&r| r != i).collect();
    let labels: Vec<Emotion> = train.iter().map(|&r| matrix.rows[r].emotion).collect();
    let (xs, test) = match set {
        FeatureSet::Features(names) => {
            let idx = columns(matrix, names)?;
            let all = raw_rows(matrix, &idx);
            (train.iter().map(|&r| all[r].clone()).collect::<Vec<_>>(), all[i].clone())
        }
        FeatureSet::Components { features, k } => {
            let idx = columns(matrix, features)?;
            let all = raw_rows(matrix, &idx);
            let fitted;
            let model = if opts.pca_refit {
                fitted = pca_fit_rows(matrix, features, &train)?;
                &fitted
            } else {
                full_pca.ok_or_else(|| Error::Config("full-data PCA required when pca_refit is off".into()))?
            };
            if *k == 0 || *k > model.n_components() {
                return Err(Error::Domain(format!(
                    "component count {k} outside 1..={}",
                    model.n_components()
                )));
            }
            let xs = train.iter().map(|&r| project_values(model, &all[r], *k)).collect();
            (xs, project_values(model, &all[i], *k))
        }
    };
    let model = train_svm(&xs, &labels, classes, &opts.params)?;
    Ok(model.predict(&test))
}

/// Leave-one-out confusion matrix. Folds run on the current rayon pool and
/// are accumulated in row order.
pub fn leave_one_out(
    matrix: &LabeledMatrix,
    set: &FeatureSet,
    opts: &LooOptions,
    full_pca: Option<&PcaModel>,
) -> Result<ConfusionMatrix> {
    let mut classes: Vec<Emotion> = matrix.labels();
    classes.sort();
    classes.dedup();
    for &c in &classes {
        if matrix.rows.iter().filter(|r| r.emotion == c).count() < 2 {
            return Err(Error::MissingClass(format!(
                "{c} (leaving out its only row empties the class)"
            )));
        }
    }
    let predictions: Vec<Emotion> = (0..matrix.n_rows())
        .into_par_iter()
        .map(|i| loo_fold(matrix, set, opts, full_pca, &classes, i))
        .collect::<Result<_>>()?;
    let mut cm = ConfusionMatrix::new(classes);
    for (row, p) in matrix.rows.iter().zip(predictions) {
        cm.add(row.emotion, p);
    }
    Ok(cm)
}

/// A named classifier input definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSpec {
    pub name: String,
    pub kind: SetKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SetKind {
    /// Every feature that survived the ANOVA gate.
    AllKept,
    Components(usize),
    Features(Vec<String>),
}

pub fn default_sets() -> Vec<SetSpec> {
    let f = |names: &[&str]| SetKind::Features(names.iter().map(|s| s.to_string()).collect());
    vec![
        SetSpec {
            name: "24F".into(),
            kind: SetKind::AllKept,
        },
        SetSpec {
            name: "7PC".into(),
            kind: SetKind::Components(7),
        },
        SetSpec {
            name: "4PC".into(),
            kind: SetKind::Components(4),
        },
        SetSpec {
            name: "3PC".into(),
            kind: SetKind::Components(3),
        },
        SetSpec {
            name: "7F".into(),
            kind: f(&["BPM", "LOW", "RMS", "ROH_M", "ROH_IQR", "HAE_M", "OER_M"]),
        },
        SetSpec {
            name: "4F".into(),
            kind: f(&["BPM", "EBF_IQR", "EBF_M", "HRD_M"]),
        },
        SetSpec {
            name: "3F".into(),
            kind: f(&["NSN_IQR", "NOE_M", "T3_M"]),
        },
    ]
}

/// Parse `name=feat,feat,...` into a feature set, dropping duplicates.
/// Returns the set and one warning per dropped duplicate.
pub fn parse_custom_set(text: &str) -> Result<(SetSpec, Vec<String>)> {
    let (name, list) = text
        .split_once([':', '='])
        .ok_or_else(|| Error::Subset(format!("expected NAME:feature,feature,... got {text:?}")))?;
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::Subset("set name is empty".into()));
    }
    let mut features: Vec<String> = Vec::new();
    let mut warnings = Vec::new();
    for f in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if features.iter().any(|g| g == f) {
            warnings.push(format!("set {name}: duplicate feature {f} ignored"));
        } else {
            features.push(f.to_string());
        }
    }
    if features.is_empty() {
        return Err(Error::Subset(format!("set {name} lists no features")));
    }
    Ok((
        SetSpec {
            name: name.to_string(),
            kind: SetKind::Features(features),
        },
        warnings,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub set: String,
    pub inputs: FeatureSet,
    pub confusion: ConfusionMatrix,
    pub report: FScoreReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub entries: Vec<ComparisonEntry>,
}

/// Resolve a set specification against the gated feature list.
pub fn resolve_set(spec: &SetSpec, kept: &[String], bpm_nn: bool) -> Result<FeatureSet> {
    Ok(match &spec.kind {
        SetKind::AllKept => FeatureSet::Features(kept.to_vec()),
        SetKind::Components(k) => FeatureSet::Components {
            features: kept.to_vec(),
            k: *k,
        },
        SetKind::Features(names) => {
            let mut out: Vec<String> = Vec::new();
            for n in names {
                let n = if bpm_nn && n == "BPM" { "BPM_nn" } else { n.as_str() };
                if !kept.iter().any(|k| k == n) {
                    return Err(Error::Subset(format!(
                        "set {}: feature {n} is not among the kept features",
                        spec.name
                    )));
                }
                if !out.iter().any(|o| o == n) {
                    out.push(n.to_string());
                }
            }
            FeatureSet::Features(out)
        }
    })
}

/// Leave-one-out evaluation of every set on the gated matrix.
pub fn run_comparison(
    matrix: &LabeledMatrix,
    kept: &[String],
    pca: &PcaModel,
    sets: &[SetSpec],
    opts: &LooOptions,
    bpm_nn: bool,
) -> Result<ComparisonTable> {
    let resolved: Vec<(String, FeatureSet)> = sets
        .iter()
        .map(|s| Ok((s.name.clone(), resolve_set(s, kept, bpm_nn)?)))
        .collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(resolved.len());
    for (name, inputs) in resolved {
        let confusion = leave_one_out(matrix, &inputs, opts, Some(pca))?;
        let report = f_scores(&confusion)?;
        entries.push(ComparisonEntry {
            set: name,
            inputs,
            confusion,
            report,
        });
    }
    Ok(ComparisonTable { entries })
}

pub fn comparison_to_csv(table: &ComparisonTable) -> String {
    let mut out = String::from("set,class,precision,recall,f1\n");
    for e in &table.entries {
        for c in &e.report.classes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.set,
                c.class,
                format_value(c.precision),
                format_value(c.recall),
                format_value(c.f1)
            ));
        }
        out.push_str(&format!("{},macro,,,{}\n", e.set, format_value(e.report.macro_f1)));
    }
    out
}
