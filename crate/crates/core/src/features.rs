//! Horizon-aware design matrices.
//!
//! A design row predicts the class of one country-month. Covariates enter
//! with a lag that depends on their role: slow-moving columns are taken from
//! `target - horizon` (the month the prediction would have been issued),
//! conflict-forecast columns from the target month itself, since they are
//! forecasts made for that month. After lagging, the preprocessing chain
//! imputes training medians, standardizes, and projects onto principal
//! components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{ClassLabel, PanelLabels};
use crate::matrix::DenseMatrix;
use crate::num::Real;
use crate::panel::{CountryMonthKey, FlowPanel};

/// How a covariate column is aligned relative to the target month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    /// Lagged by the full prediction horizon.
    SlowMoving,
    /// A forecast for the target month; enters at lag zero.
    ConflictForecast,
}

/// Ordered column-name patterns assigning a role to every covariate.
///
/// A pattern is either a literal name or a prefix ending in `*`. The first
/// matching rule wins, so specific patterns belong before catch-alls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleMap {
    rules: Vec<(String, ColumnRole)>,
}

impl RoleMap {
    pub fn new(rules: Vec<(String, ColumnRole)>) -> Self {
        RoleMap { rules }
    }

    /// `conflict*` columns are forecasts, everything else is slow-moving.
    pub fn defaults() -> Self {
        RoleMap::new(vec![
            ("conflict*".into(), ColumnRole::ConflictForecast),
            ("*".into(), ColumnRole::SlowMoving),
        ])
    }

    pub fn role_of(&self, name: &str) -> Result<ColumnRole> {
        self.rules
            .iter()
            .find(|(pattern, _)| pattern_matches(pattern, name))
            .map(|&(_, role)| role)
            .ok_or_else(|| Error::UnmappedColumn(name.to_owned()))
    }
}

fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => pattern == name,
    }
}

/// Months between prediction issuance and the target month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Horizon(u32);

/// Horizons the engine is normally run at.
pub const DEFAULT_HORIZONS: [u32; 3] = [1, 3, 6];

impl Horizon {
    pub fn new(months_ahead: u32) -> Result<Self> {
        if months_ahead == 0 || months_ahead > 24 {
            return Err(Error::ConfigInvalid(format!(
                "horizon must be between 1 and 24 months, got {months_ahead}"
            )));
        }
        Ok(Horizon(months_ahead))
    }

    pub fn months_ahead(self) -> usize {
        self.0 as usize
    }

    pub fn raw(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Provenance of one design-matrix column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub source_name: String,
    pub source_index: usize,
    pub role: ColumnRole,
    pub lag: usize,
}

/// Supervised dataset for one (threshold, horizon) cell: one row per
/// country-month that has enough history, raw (unimputed) covariate values,
/// and the class label of the target month.
#[derive(Debug, Clone)]
pub struct DesignMatrix<T> {
    pub keys: Vec<CountryMonthKey>,
    pub x: DenseMatrix<T>,
    pub y: Vec<ClassLabel>,
    pub columns: Vec<DesignColumn>,
}

impl<T: Real> DesignMatrix<T> {
    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.source_name.clone()).collect()
    }
}

/// Assembles the design matrix for one horizon.
///
/// Rows are emitted country-major in month order. Target months whose
/// slow-moving lag would fall before the panel start are dropped rather
/// than padded.
pub fn build_design<T: Real>(
    panel: &FlowPanel<T>,
    labels: &PanelLabels<T>,
    horizon: Horizon,
    roles: &RoleMap,
) -> Result<DesignMatrix<T>> {
    let h = horizon.months_ahead();
    let p = panel.n_features();
    let columns: Vec<DesignColumn> = panel
        .feature_names()
        .iter()
        .enumerate()
        .map(|(fi, name)| {
            let role = roles.role_of(name)?;
            let lag = match role {
                ColumnRole::SlowMoving => h,
                ColumnRole::ConflictForecast => 0,
            };
            Ok(DesignColumn { source_name: name.clone(), source_index: fi, role, lag })
        })
        .collect::<Result<_>>()?;

    if panel.n_months() <= h {
        return Err(Error::InsufficientHistory { horizon: horizon.raw() });
    }
    let n_rows = panel.n_countries() * (panel.n_months() - h);
    let mut keys = Vec::with_capacity(n_rows);
    let mut y = Vec::with_capacity(n_rows);
    let mut data = Vec::with_capacity(n_rows * p);
    for ci in 0..panel.n_countries() {
        for mi in h..panel.n_months() {
            let key = CountryMonthKey {
                country_id: panel.countries()[ci].clone(),
                month: panel.month_at(mi),
            };
            let record = labels.get(&key).ok_or_else(|| {
                Error::DegenerateLabels(format!("no label for {} {}", key.country_id, key.month))
            })?;
            for col in &columns {
                data.push(panel.feature(ci, mi - col.lag, col.source_index));
            }
            keys.push(key);
            y.push(record.class);
        }
    }
    if keys.is_empty() {
        return Err(Error::InsufficientHistory { horizon: horizon.raw() });
    }
    let x = DenseMatrix::from_vec(keys.len(), p, data)?;
    Ok(DesignMatrix { keys, x, y, columns })
}

/// Confirms every design cell equals the panel value at the month its role
/// dictates. A failure means a row could see information that would not
/// have existed at prediction time.
pub fn audit_no_leakage<T: Real>(
    design: &DesignMatrix<T>,
    panel: &FlowPanel<T>,
    horizon: Horizon,
) -> Result<()> {
    for (ci_col, col) in design.columns.iter().enumerate() {
        let expected_lag = match col.role {
            ColumnRole::SlowMoving => horizon.months_ahead(),
            ColumnRole::ConflictForecast => 0,
        };
        if col.lag != expected_lag {
            return Err(Error::LeakageDetected {
                row: 0,
                column: col.source_name.clone(),
                detail: format!("declared lag {} but role requires {expected_lag}", col.lag),
            });
        }
        for (r, key) in design.keys.iter().enumerate() {
            let country = panel.country_pos(&key.country_id)?;
            let target = panel.month_pos(key.month).ok_or(Error::LeakageDetected {
                row: r,
                column: col.source_name.clone(),
                detail: format!("target month {} outside the panel", key.month),
            })?;
            if target < expected_lag {
                return Err(Error::LeakageDetected {
                    row: r,
                    column: col.source_name.clone(),
                    detail: "lag reaches before the panel start".into(),
                });
            }
            let want = panel.feature(country, target - expected_lag, col.source_index);
            let got = design.x.get(r, ci_col);
            let equal = got == want || (got.is_nan() && want.is_nan());
            if !equal {
                return Err(Error::LeakageDetected {
                    row: r,
                    column: col.source_name.clone(),
                    detail: format!(
                        "cell {:?} does not match the panel value {:?} at lag {expected_lag}",
                        got.to_f64(),
                        want.to_f64()
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Per-column training medians; missing cells (NaN) are replaced and, for
/// columns missing in more than 1% of training rows, a 0/1 missingness
/// indicator column is appended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Imputer<T> {
    medians: Vec<T>,
    indicator_for: Vec<usize>,
}

impl<T: Real> Imputer<T> {
    pub fn fit(x: &DenseMatrix<T>, names: &[String]) -> Result<Self> {
        if x.n_rows() == 0 {
            return Err(Error::TooFewRows { rows: 0, min_rows: 1 });
        }
        let mut medians = Vec::with_capacity(x.n_cols());
        let mut indicator_for = Vec::new();
        for c in 0..x.n_cols() {
            let mut present: Vec<T> =
                (0..x.n_rows()).map(|r| x.get(r, c)).filter(|v| v.is_finite()).collect();
            if present.is_empty() {
                let name = names.get(c).cloned().unwrap_or_else(|| format!("column {c}"));
                return Err(Error::AllMissingColumn(name));
            }
            present.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            let mid = present.len() / 2;
            let median = if present.len() % 2 == 1 {
                present[mid]
            } else {
                (present[mid - 1] + present[mid]) / T::of(2.0)
            };
            medians.push(median);
            let missing = x.n_rows() - present.len();
            if T::of_usize(missing) / T::of_usize(x.n_rows()) > T::of(0.01) {
                indicator_for.push(c);
            }
        }
        Ok(Imputer { medians, indicator_for })
    }

    pub fn apply(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x.n_cols() != self.medians.len() {
            return Err(Error::WidthMismatch { expected: self.medians.len(), got: x.n_cols() });
        }
        let mut out = DenseMatrix::zeros(x.n_rows(), x.n_cols() + self.indicator_for.len());
        for r in 0..x.n_rows() {
            for c in 0..x.n_cols() {
                let v = x.get(r, c);
                out.set(r, c, if v.is_finite() { v } else { self.medians[c] });
            }
            for (k, &c) in self.indicator_for.iter().enumerate() {
                let flag = if x.get(r, c).is_finite() { T::zero() } else { T::one() };
                out.set(r, x.n_cols() + k, flag);
            }
        }
        Ok(out)
    }

    pub fn output_width(&self) -> usize {
        self.medians.len() + self.indicator_for.len()
    }

    pub fn indicator_sources(&self) -> &[usize] {
        &self.indicator_for
    }
}

/// Per-column centering and unit-variance scaling fitted on training rows.
/// Zero-variance columns are dropped and recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer<T> {
    input_width: usize,
    retained: Vec<usize>,
    means: Vec<T>,
    sds: Vec<T>,
    dropped: Vec<usize>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(x: &DenseMatrix<T>) -> Result<Self> {
        if x.n_rows() == 0 {
            return Err(Error::TooFewRows { rows: 0, min_rows: 1 });
        }
        let n = T::of_usize(x.n_rows());
        let mut retained = Vec::new();
        let mut means = Vec::new();
        let mut sds = Vec::new();
        let mut dropped = Vec::new();
        for c in 0..x.n_cols() {
            let mut sum = T::zero();
            for r in 0..x.n_rows() {
                let v = x.get(r, c);
                if !v.is_finite() {
                    return Err(Error::NumericalFailure(format!(
                        "standardizer input has a non-finite cell in column {c}; impute first"
                    )));
                }
                sum = sum + v;
            }
            let mean = sum / n;
            let mut ss = T::zero();
            for r in 0..x.n_rows() {
                let d = x.get(r, c) - mean;
                ss = ss + d * d;
            }
            let sd = (ss / n).sqrt();
            if sd > T::zero() {
                retained.push(c);
                means.push(mean);
                sds.push(sd);
            } else {
                dropped.push(c);
            }
        }
        Ok(Standardizer { input_width: x.n_cols(), retained, means, sds, dropped })
    }

    pub fn apply(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if x.n_cols() != self.input_width {
            return Err(Error::WidthMismatch { expected: self.input_width, got: x.n_cols() });
        }
        let mut out = DenseMatrix::zeros(x.n_rows(), self.retained.len());
        for r in 0..x.n_rows() {
            for (k, &c) in self.retained.iter().enumerate() {
                out.set(r, k, (x.get(r, c) - self.means[k]) / self.sds[k]);
            }
        }
        Ok(out)
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    pub fn output_width(&self) -> usize {
        self.retained.len()
    }
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    /// Keep exactly this many components (fewer if the data has lower rank).
    FixedK(usize),
    /// Keep the smallest count whose cumulative explained variance reaches
    /// the target fraction.
    VarianceTarget(f64),
}

impl Default for KPolicy {
    fn default() -> Self {
        KPolicy::FixedK(5)
    }
}

/// Principal-component loadings fitted on standardized training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel<T> {
    loadings: DenseMatrix<T>,
    eigenvalues: Vec<T>,
    k: usize,
    reduced_from: Option<usize>,
}

impl<T: Real> PcaModel<T> {
    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn input_width(&self) -> usize {
        self.loadings.n_cols()
    }

    /// Rows are the retained component loading vectors.
    pub fn loadings(&self) -> &DenseMatrix<T> {
        &self.loadings
    }

    /// Requested component count when rank deficiency forced a reduction.
    pub fn reduced_from(&self) -> Option<usize> {
        self.reduced_from
    }

    /// Variance fractions of every possible component, in non-increasing
    /// order; they sum to one.
    pub fn variance_ratios(&self) -> Vec<T> {
        let total: T = self.eigenvalues.iter().copied().sum();
        self.eigenvalues.iter().map(|&v| v / total).collect()
    }

    /// Variance fractions of the retained components only.
    pub fn explained_variance_ratio(&self) -> Vec<T> {
        let mut r = self.variance_ratios();
        r.truncate(self.k);
        r
    }

    pub fn project(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        x.mul_transpose(&self.loadings)
    }

    /// Maps scores back into the standardized feature space.
    pub fn project_back(&self, scores: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        scores.mul_transpose(&self.loadings.transpose())
    }
}

/// Fits a PCA on already-standardized data via a cyclic Jacobi eigensolver
/// on the covariance matrix.
///
/// Component signs are fixed by making each loading vector's
/// largest-magnitude entry positive. If the data's rank is below the
/// requested component count, the count is reduced and
/// [`PcaModel::reduced_from`] records the request.
pub fn fit_pca<T: Real>(x: &DenseMatrix<T>, policy: KPolicy) -> Result<PcaModel<T>> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n == 0 {
        return Err(Error::TooFewRows { rows: 0, min_rows: 1 });
    }
    if p == 0 {
        return Err(Error::DegenerateFeatures);
    }
    let xt = x.transpose();
    let mut cov = xt.mul_transpose(&xt)?;
    let inv_n = T::one() / T::of_usize(n);
    for a in 0..p {
        for b in 0..p {
            cov.set(a, b, cov.get(a, b) * inv_n);
        }
    }
    let (mut vals, vecs) = jacobi_eigen(&cov)?;
    for v in vals.iter_mut() {
        *v = v.max(T::zero());
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).expect("finite eigenvalues"));
    let sorted_vals: Vec<T> = order.iter().map(|&i| vals[i]).collect();
    let total: T = sorted_vals.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::DegenerateFeatures);
    }
    let rank =
        sorted_vals.iter().filter(|&&v| v > sorted_vals[0] * T::of(1e-10)).count().max(1);

    let requested = match policy {
        KPolicy::FixedK(k) => k.max(1),
        KPolicy::VarianceTarget(t) => {
            let target = T::of(t.clamp(0.0, 1.0));
            let mut cum = T::zero();
            let mut k = p;
            for (i, &v) in sorted_vals.iter().enumerate() {
                cum = cum + v / total;
                if cum >= target {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let k = requested.min(rank);
    let reduced_from = (k < requested).then_some(requested);

    let mut loadings = DenseMatrix::zeros(k, p);
    for (row, &src) in order.iter().take(k).enumerate() {
        let mut best = 0usize;
        for i in 1..p {
            if vecs.get(i, src).abs() > vecs.get(best, src).abs() {
                best = i;
            }
        }
        let flip = vecs.get(best, src) < T::zero();
        for i in 0..p {
            let v = vecs.get(i, src);
            loadings.set(row, i, if flip { -v } else { v });
        }
    }
    Ok(PcaModel { loadings, eigenvalues: sorted_vals, k, reduced_from })
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and an orthogonal matrix whose columns are the
/// matching eigenvectors.
fn jacobi_eigen<T: Real>(m: &DenseMatrix<T>) -> Result<(Vec<T>, DenseMatrix<T>)> {
    let p = m.n_rows();
    let mut a = m.clone();
    let mut v = DenseMatrix::zeros(p, p);
    for i in 0..p {
        v.set(i, i, T::one());
    }
    let mut frob = T::zero();
    for i in 0..p {
        for j in 0..p {
            frob = frob + a.get(i, j) * a.get(i, j);
        }
    }
    let tol = T::of(1e-14) * frob.sqrt();
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..p {
            for j in (i + 1)..p {
                off = off + a.get(i, j) * a.get(i, j);
            }
        }
        if (off + off).sqrt() <= tol {
            let vals = (0..p).map(|i| a.get(i, i)).collect();
            return Ok((vals, v));
        }
        for i in 0..(p.saturating_sub(1)) {
            for j in (i + 1)..p {
                let apq = a.get(i, j);
                if apq == T::zero() {
                    continue;
                }
                let theta = (a.get(j, j) - a.get(i, i)) / (T::of(2.0) * apq);
                let t = {
                    let sign = if theta < T::zero() { -T::one() } else { T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..p {
                    let aki = a.get(k, i);
                    let akj = a.get(k, j);
                    a.set(k, i, c * aki - s * akj);
                    a.set(k, j, s * aki + c * akj);
                }
                for k in 0..p {
                    let aik = a.get(i, k);
                    let ajk = a.get(j, k);
                    a.set(i, k, c * aik - s * ajk);
                    a.set(j, k, s * aik + c * ajk);
                }
                for k in 0..p {
                    let vki = v.get(k, i);
                    let vkj = v.get(k, j);
                    v.set(k, i, c * vki - s * vkj);
                    v.set(k, j, s * vki + c * vkj);
                }
            }
        }
    }
    Err(Error::NumericalFailure("Jacobi eigensolver did not converge in 100 sweeps".into()))
}

/// Fitted preprocessing chain: impute, standardize, project.
///
/// Conflict-forecast columns can bypass the projection and pass through
/// standardized, controlled by the `include_conflict` switch at fit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureTransform<T> {
    imputer: Imputer<T>,
    standardizer: Standardizer<T>,
    pca: Option<PcaModel<T>>,
    pca_cols: Vec<usize>,
    pass_cols: Vec<usize>,
}

impl<T: Real> FeatureTransform<T> {
    /// Fits the chain on training rows and returns it with the transformed
    /// training matrix.
    pub fn fit(
        x: &DenseMatrix<T>,
        columns: &[DesignColumn],
        policy: KPolicy,
        include_conflict: bool,
    ) -> Result<(Self, DenseMatrix<T>)> {
        let names: Vec<String> = columns.iter().map(|c| c.source_name.clone()).collect();
        let imputer = Imputer::fit(x, &names)?;
        let xi = imputer.apply(x)?;
        let standardizer = Standardizer::fit(&xi)?;
        let xs = standardizer.apply(&xi)?;

        let mut imputed_roles: Vec<ColumnRole> = columns.iter().map(|c| c.role).collect();
        for &src in imputer.indicator_sources() {
            imputed_roles.push(columns[src].role);
        }
        let mut pca_cols = Vec::new();
        let mut pass_cols = Vec::new();
        for (pos, &src) in standardizer.retained().iter().enumerate() {
            if include_conflict || imputed_roles[src] == ColumnRole::SlowMoving {
                pca_cols.push(pos);
            } else {
                pass_cols.push(pos);
            }
        }
        if pca_cols.is_empty() && pass_cols.is_empty() {
            return Err(Error::DegenerateFeatures);
        }
        let pca = if pca_cols.is_empty() {
            None
        } else {
            Some(fit_pca(&xs.select_cols(&pca_cols), policy)?)
        };
        let transform = FeatureTransform { imputer, standardizer, pca, pca_cols, pass_cols };
        let transformed = transform.finish(&xs)?;
        Ok((transform, transformed))
    }

    /// Applies the fitted chain to raw design rows.
    pub fn apply(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let xi = self.imputer.apply(x)?;
        let xs = self.standardizer.apply(&xi)?;
        self.finish(&xs)
    }

    fn finish(&self, xs: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let passed = xs.select_cols(&self.pass_cols);
        match &self.pca {
            Some(pca) => {
                let scores = pca.project(&xs.select_cols(&self.pca_cols))?;
                scores.hcat(&passed)
            }
            None => Ok(passed),
        }
    }

    pub fn output_width(&self) -> usize {
        self.pca.as_ref().map_or(0, |p| p.n_components()) + self.pass_cols.len()
    }

    pub fn pca(&self) -> Option<&PcaModel<T>> {
        self.pca.as_ref()
    }
}
