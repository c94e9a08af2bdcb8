//! ANOVA feature gate, pairwise emotion separation and correlation PCA.

use serde::{Deserialize, Serialize};

use crate::config::PostHoc;
use crate::dataset::{format_value, LabeledMatrix};
use crate::emotion::Emotion;
use crate::error::{Error, Result};

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Upper tail `P(F > f)` of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if !(f > 0.0) {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Two-sided `P(|T| > |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// `P(range of k standard normals ≤ w)`.
fn range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let v = k as f64 * simpson(-8.0, 8.0, 400, |z| {
        phi(z) * (norm_cdf(z) - norm_cdf(z - w)).max(0.0).powi(k as i32 - 1)
    });
    v.clamp(0.0, 1.0)
}

/// Upper tail of the studentized range distribution for `k` groups and
/// `df` error degrees of freedom.
pub fn studentized_range_sf(q: f64, k: usize, df: f64) -> f64 {
    if !(q > 0.0) {
        return 1.0;
    }
    let half = df / 2.0;
    let ln_c = std::f64::consts::LN_2 + half * half.ln() - ln_gamma(half);
    let spread = 12.0 / (2.0 * df).sqrt();
    let (lo, hi) = ((1.0 - spread).max(0.0), 1.0 + spread);
    let cdf = simpson(lo, hi, 400, |s| {
        if s <= 0.0 {
            return 0.0;
        }
        let dens = (ln_c + (df - 1.0) * s.ln() - half * s * s).exp();
        dens * range_cdf(q * s, k)
    });
    (1.0 - cdf).clamp(0.0, 1.0)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Classical one-way ANOVA. Returns `(F, p)`.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<(f64, f64)> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData("ANOVA needs at least 2 groups".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "ANOVA group with {} value(s); need at least 2",
            g.len()
        )));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let (mut ssb, mut ssw) = (0.0, 0.0);
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    if !(ssw > 0.0) {
        return Err(Error::DegenerateGroups);
    }
    let df_b = (groups.len() - 1) as f64;
    let df_w = (n - groups.len()) as f64;
    let f = (ssb / df_b) / (ssw / df_w);
    Ok((f, f_sf(f, df_b, df_w)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub feature: String,
    #[serde(rename = "F")]
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// Values of column `j` grouped by emotion, for the emotions present, in
/// canonical order.
pub fn emotion_groups(matrix: &LabeledMatrix, j: usize) -> Vec<(Emotion, Vec<f64>)> {
    Emotion::ALL
        .iter()
        .filter_map(|&e| {
            let v: Vec<f64> = matrix
                .rows
                .iter()
                .filter(|r| r.emotion == e)
                .map(|r| r.values[j])
                .collect();
            (!v.is_empty()).then_some((e, v))
        })
        .collect()
}

fn anova_column(matrix: &LabeledMatrix, j: usize, name: &str) -> Result<AnovaResult> {
    let groups: Vec<Vec<f64>> = emotion_groups(matrix, j).into_iter().map(|(_, g)| g).collect();
    let (f, p) = one_way_anova(&groups)?;
    let n: usize = groups.iter().map(Vec::len).sum();
    Ok(AnovaResult {
        feature: name.to_string(),
        f,
        p,
        df_between: groups.len() - 1,
        df_within: n - groups.len(),
    })
}

/// ANOVA per feature; features with `p < alpha` are kept, in matrix order.
pub fn gate_features(matrix: &LabeledMatrix, alpha: f64) -> Result<(Vec<String>, Vec<AnovaResult>)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let table = matrix
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| anova_column(matrix, j, name))
        .collect::<Result<Vec<_>>>()?;
    let kept = table.iter().filter(|r| r.p < alpha).map(|r| r.feature.clone()).collect();
    Ok((kept, table))
}

/// Welch two-sample t-test, two-sided p. When both groups have zero
/// variance the result is 0 for different means and 1 otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return if ma != mb { 0.0 } else { 1.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    t_two_sided(t, df)
}

/// Per feature, which of the 21 emotion pairs differ at level `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationMatrix {
    pub features: Vec<String>,
    pub pairs: Vec<(Emotion, Emotion)>,
    /// `p_values[feature][pair]`.
    pub p_values: Vec<Vec<f64>>,
    pub flags: Vec<Vec<bool>>,
}

impl SeparationMatrix {
    pub fn pair_set(&self, feature: &str) -> Vec<(Emotion, Emotion)> {
        let Some(i) = self.features.iter().position(|f| f == feature) else {
            return Vec::new();
        };
        self.pairs
            .iter()
            .zip(&self.flags[i])
            .filter(|(_, &f)| f)
            .map(|(p, _)| *p)
            .collect()
    }

    /// Pairs flagged by at least one feature.
    pub fn covered_pairs(&self) -> Vec<(Emotion, Emotion)> {
        self.pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| self.flags.iter().any(|f| f[*k]))
            .map(|(_, p)| *p)
            .collect()
    }
}

/// Pairwise post-hoc tests for every feature and emotion pair.
pub fn pairwise_separation(matrix: &LabeledMatrix, alpha: f64, method: PostHoc) -> Result<SeparationMatrix> {
    let pairs = Emotion::pairs();
    let mut p_values = Vec::with_capacity(matrix.n_features());
    let mut flags = Vec::with_capacity(matrix.n_features());
    for j in 0..matrix.n_features() {
        let groups = emotion_groups(matrix, j);
        if let Some((e, _)) = groups.iter().find(|(_, g)| g.len() < 2) {
            return Err(Error::InsufficientData(format!("emotion {e} has fewer than 2 rows")));
        }
        let get = |e: Emotion| groups.iter().find(|(g, _)| *g == e).map(|(_, v)| v.as_slice());
        // pooled within-group variance for Tukey
        let n: usize = groups.iter().map(|(_, g)| g.len()).sum();
        let df_w = (n - groups.len()) as f64;
        let ssw: f64 = groups
            .iter()
            .map(|(_, g)| {
                let (m, _) = mean_var(g);
                g.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            })
            .sum();
        let msw = ssw / df_w;
        let mut row_p = Vec::with_capacity(pairs.len());
        for &(a, b) in &pairs {
            let p = match (get(a), get(b)) {
                (Some(x), Some(y)) => match method {
                    PostHoc::Welch => welch_t_test(x, y),
                    PostHoc::Bonferroni => (welch_t_test(x, y) * pairs.len() as f64).min(1.0),
                    PostHoc::Tukey => {
                        let (mx, _) = mean_var(x);
                        let (my, _) = mean_var(y);
                        let se = (msw / 2.0 * (1.0 / x.len() as f64 + 1.0 / y.len() as f64)).sqrt();
                        if se > 0.0 {
                            studentized_range_sf((mx - my).abs() / se, groups.len(), df_w)
                        } else if mx != my {
                            0.0
                        } else {
                            1.0
                        }
                    }
                },
                _ => 1.0,
            };
            row_p.push(p);
        }
        flags.push(row_p.iter().map(|&p| p < alpha).collect());
        p_values.push(row_p);
    }
    Ok(SeparationMatrix {
        features: matrix.feature_names.clone(),
        pairs,
        p_values,
        flags,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors (as columns of the second value,
/// stored row-major `v[i][k]`), unsorted.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off < 1e-12 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub features: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// One unit-length component per entry, in descending eigenvalue order.
    pub loadings: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Cumulative explained-variance fractions.
    pub explained: Vec<f64>,
    pub n_kaiser: usize,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Smallest number of components whose cumulative share reaches `frac`.
    pub fn components_for(&self, frac: f64) -> usize {
        self.explained.iter().position(|&e| e >= frac - 1e-12).map_or(self.n_components(), |i| i + 1)
    }

    fn standardize(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }
}

fn column_indices(matrix: &LabeledMatrix, features: &[String]) -> Result<Vec<usize>> {
    features
        .iter()
        .map(|f| {
            matrix
                .feature_index(f)
                .ok_or_else(|| Error::Schema(format!("matrix has no feature {f:?}")))
        })
        .collect()
}

/// Correlation-matrix PCA over the named features.
pub fn pca_fit(matrix: &LabeledMatrix, features: &[String]) -> Result<PcaModel> {
    pca_fit_rows(matrix, features, &(0..matrix.n_rows()).collect::<Vec<_>>())
}

/// PCA fitted on a subset of rows only.
pub fn pca_fit_rows(matrix: &LabeledMatrix, features: &[String], rows: &[usize]) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData("PCA needs at least 2 rows".into()));
    }
    if features.len() < 2 {
        return Err(Error::InsufficientData("PCA needs at least 2 features".into()));
    }
    let idx = column_indices(matrix, features)?;
    let p = idx.len();
    let n = rows.len() as f64;
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    let mut z = vec![vec![0.0; p]; rows.len()];
    for (c, &j) in idx.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|&i| matrix.rows[i].values[j]).collect();
        let (m, var) = mean_var(&col);
        let sd = var.sqrt();
        means[c] = m;
        sds[c] = if sd > 1e-12 * m.abs().max(1e-300) { sd } else { 0.0 };
        for (r, v) in col.iter().enumerate() {
            z[r][c] = if sds[c] > 0.0 { (v - m) / sds[c] } else { 0.0 };
        }
    }
    let mut corr = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            let v = if a == b {
                1.0
            } else {
                z.iter().map(|r| r[a] * r[b]).sum::<f64>() / (n - 1.0)
            };
            corr[a][b] = v;
            corr[b][a] = v;
        }
    }
    let (vals, vecs) = jacobi_eigen(&corr);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let mut eigenvalues = Vec::with_capacity(p);
    let mut loadings = Vec::with_capacity(p);
    for &k in &order {
        let mut comp: Vec<f64> = (0..p).map(|i| vecs[i][k]).collect();
        let big = comp
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map_or(1.0, |(_, v)| v);
        if big < 0.0 {
            comp.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues.push(vals[k].max(0.0));
        loadings.push(comp);
    }
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    let explained = eigenvalues
        .iter()
        .map(|e| {
            acc += e;
            (acc / total).min(1.0)
        })
        .collect();
    let n_kaiser = eigenvalues.iter().filter(|&&e| e > 1.0).count();
    Ok(PcaModel {
        features: features.to_vec(),
        means,
        sds,
        loadings,
        eigenvalues,
        explained,
        n_kaiser,
    })
}

/// Scores of every matrix row on the first `k` components.
pub fn pca_project(model: &PcaModel, matrix: &LabeledMatrix, k: usize) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > model.n_components() {
        return Err(Error::Domain(format!(
            "component count {k} outside 1..={}",
            model.n_components()
        )));
    }
    let idx = column_indices(matrix, &model.features)?;
    Ok(matrix
        .rows
        .iter()
        .map(|r| {
            let raw: Vec<f64> = idx.iter().map(|&j| r.values[j]).collect();
            project_values(model, &raw, k)
        })
        .collect())
}

/// Scores of one raw feature vector (in model feature order).
pub fn project_values(model: &PcaModel, values: &[f64], k: usize) -> Vec<f64> {
    let z = model.standardize(values);
    model.loadings[..k]
        .iter()
        .map(|l| l.iter().zip(&z).map(|(a, b)| a * b).sum())
        .collect()
}

/// ANOVA of each component's scores across emotions. Components with a
/// zero eigenvalue are omitted.
pub fn pc_anova(model: &PcaModel, matrix: &LabeledMatrix) -> Result<Vec<AnovaResult>> {
    let k = model.n_components();
    let scores = pca_project(model, matrix, k)?;
    let names: Vec<String> = (1..=k).map(|i| format!("PC{i}")).collect();
    let pcs = LabeledMatrix {
        feature_names: names.clone(),
        rows: matrix
            .rows
            .iter()
            .zip(scores)
            .map(|(r, s)| crate::dataset::Row {
                performer: r.performer.clone(),
                emotion: r.emotion,
                values: s,
            })
            .collect(),
    };
    (0..k)
        .filter(|&c| model.eigenvalues[c] > 1e-9)
        .map(|c| anova_column(&pcs, c, &names[c]))
        .collect()
}

pub fn anova_to_csv(table: &[AnovaResult], kept: &[String]) -> String {
    let mut out = String::from("feature,F,p,kept\n");
    for r in table {
        let k = kept.contains(&r.feature);
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.feature,
            format_value(r.f),
            format_value(r.p),
            k
        ));
    }
    out
}

pub fn separation_to_csv(sep: &SeparationMatrix) -> String {
    let mut out = String::from("feature,pair,flag\n");
    for (f, flags) in sep.features.iter().zip(&sep.flags) {
        for ((a, b), flag) in sep.pairs.iter().zip(flags) {
            out.push_str(&format!("{f},{}-{},{}\n", a.code(), b.code(), u8::from(*flag)));
        }
    }
    out
}
