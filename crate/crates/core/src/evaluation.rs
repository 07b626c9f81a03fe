//! Benchmark protocols, metrics, splits, and the synthetic-data oracle.
//!
//! The column-mask protocol hides one assay column entirely and scores its
//! completion against the held truth; the group-mask protocol hides whole
//! co-measured groups at once. Scores are squared Pearson correlations, with
//! an explicit `Undefined` flag (never a silent zero) when either vector is
//! constant. The synthetic generator draws rows from the exact model family
//! and doubles as the brute-force conditioning oracle (explicit inverse and
//! determinant) the main code path is tested against.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::completion::complete_row;
use crate::error::{QcompError, Result};
use crate::model::ModelParams;
use crate::schema::{AssaySchema, Dataset, SparseRow};

/// A squared Pearson correlation, or an explicit flag when the statistic
/// does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum R2 {
    Defined(f64),
    /// One of the vectors was constant (or too short after filtering).
    Undefined,
}

impl R2 {
    pub fn value(&self) -> Option<f64> {
        match self {
            R2::Defined(v) => Some(*v),
            R2::Undefined => None,
        }
    }
}

impl std::fmt::Display for R2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            R2::Defined(v) => write!(f, "{v:.6}"),
            R2::Undefined => write!(f, "undefined"),
        }
    }
}

/// Square of the sample Pearson correlation between two equal-length
/// vectors.
pub fn pearson_r2(pred: &[f64], truth: &[f64]) -> Result<R2> {
    if pred.len() != truth.len() {
        return Err(QcompError::InvalidInput(
            "pearson_r2: length mismatch".into(),
        ));
    }
    if pred.len() < 2 {
        return Err(QcompError::InvalidInput(
            "pearson_r2 needs at least 2 points".into(),
        ));
    }
    let n = pred.len() as f64;
    let mean_p = pred.iter().sum::<f64>() / n;
    let mean_t = truth.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let dp = p - mean_p;
        let dt = t - mean_t;
        cov += dp * dt;
        var_p += dp * dp;
        var_t += dt * dt;
    }
    if var_p == 0.0 || var_t == 0.0 {
        return Ok(R2::Undefined);
    }
    Ok(R2::Defined((cov * cov) / (var_p * var_t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    ColumnMask,
    GroupMask,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::ColumnMask => write!(f, "column-mask"),
            Protocol::GroupMask => write!(f, "group-mask"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssayScore {
    pub assay: String,
    pub evaluated_rows: usize,
    pub qcomp: R2,
    pub base: R2,
    pub mean_imputer: R2,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub protocol: Protocol,
    pub scores: Vec<AssayScore>,
}

impl BenchmarkReport {
    /// Mean over defined entries; `(mean, excluded_count)`. The mean of an
    /// all-undefined column is reported as 0.0 with everything excluded.
    pub fn mean_r2(&self, pick: impl Fn(&AssayScore) -> R2) -> (f64, usize) {
        let defined: Vec<f64> = self
            .scores
            .iter()
            .filter(|s| !s.skipped)
            .filter_map(|s| pick(s).value())
            .collect();
        let excluded = self.scores.len() - defined.len();
        if defined.is_empty() {
            (0.0, excluded)
        } else {
            (defined.iter().sum::<f64>() / defined.len() as f64, excluded)
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "assay",
            "evaluated_rows",
            "qcomp_r2",
            "base_r2",
            "mean_imputer_r2",
            "protocol",
        ])?;
        for s in &self.scores {
            w.write_record([
                s.assay.clone(),
                s.evaluated_rows.to_string(),
                s.qcomp.to_string(),
                s.base.to_string(),
                s.mean_imputer.to_string(),
                self.protocol.to_string(),
            ])?;
        }
        w.flush()
            .map_err(|e| QcompError::InvalidInput(format!("write report: {e}")))?;
        Ok(())
    }

    pub fn format_table(&self) -> String {
        let mut out = format!(
            "protocol: {}\n{:<25} {:>6} {:>12} {:>12} {:>14}\n",
            self.protocol, "assay", "rows", "qcomp_r2", "base_r2", "mean_imp_r2"
        );
        for s in &self.scores {
            out.push_str(&format!(
                "{:<25} {:>6} {:>12} {:>12} {:>14}{}\n",
                s.assay,
                s.evaluated_rows,
                s.qcomp.to_string(),
                s.base.to_string(),
                s.mean_imputer.to_string(),
                if s.skipped { "  (skipped)" } else { "" }
            ));
        }
        let (qc, qx) = self.mean_r2(|s| s.qcomp);
        let (bm, bx) = self.mean_r2(|s| s.base);
        let (mi, mx) = self.mean_r2(|s| s.mean_imputer);
        out.push_str(&format!(
            "mean r2: qcomp {qc:.6} ({qx} excluded), base {bm:.6} ({bx} excluded), mean-imputer {mi:.6} ({mx} excluded)\n"
        ));
        out
    }
}

fn benchmark_with_mask_rule(
    params: &ModelParams,
    test: &Dataset,
    protocol: Protocol,
    mask_for_target: impl Fn(usize) -> Vec<usize> + Sync,
    train_means: Option<&[f64]>,
) -> Result<BenchmarkReport> {
    params.verify_schema(&test.schema)?;
    let p = test.schema.p();
    let scores: Vec<AssayScore> = (0..p)
        .into_par_iter()
        .map(|target| -> Result<AssayScore> {
            let masked: Vec<usize> = mask_for_target(target);
            let mut preds = Vec::new();
            let mut bases = Vec::new();
            let mut truths = Vec::new();
            for row in &test.rows {
                let Some(truth) = row.y[target] else { continue };
                let mut hidden = row.clone();
                for &j in &masked {
                    hidden.y[j] = None;
                }
                hidden.y[target] = None;
                let res = complete_row(params, &hidden)?;
                let pos = res
                    .partition
                    .missing_idx()
                    .iter()
                    .position(|&j| j == target)
                    .expect("target was masked");
                preds.push(res.mu_tilde[pos]);
                bases.push(row.f[target]);
                truths.push(truth);
            }
            let name = test.schema.names()[target].clone();
            if truths.len() < 2 {
                eprintln!(
                    "warning: assay `{name}` has {} truth value(s); skipped",
                    truths.len()
                );
                return Ok(AssayScore {
                    assay: name,
                    evaluated_rows: truths.len(),
                    qcomp: R2::Undefined,
                    base: R2::Undefined,
                    mean_imputer: R2::Undefined,
                    skipped: true,
                });
            }
            // Mean imputation predicts a constant, so its Pearson r2 is
            // undefined by construction; computed anyway for the report.
            let mean_value = match train_means {
                Some(m) => m[target],
                None => truths.iter().sum::<f64>() / truths.len() as f64,
            };
            let mean_preds = vec![mean_value; truths.len()];
            Ok(AssayScore {
                assay: name,
                evaluated_rows: truths.len(),
                qcomp: pearson_r2(&preds, &truths)?,
                base: pearson_r2(&bases, &truths)?,
                mean_imputer: pearson_r2(&mean_preds, &truths)?,
                skipped: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport { protocol, scores })
}

/// Hide each assay column entirely, complete it from the rest, and score
/// completed-vs-true alongside the raw base prediction and a mean imputer.
pub fn column_mask_benchmark(
    params: &ModelParams,
    test: &Dataset,
    train_means: Option<&[f64]>,
) -> Result<BenchmarkReport> {
    benchmark_with_mask_rule(params, test, Protocol::ColumnMask, |_| Vec::new(), train_means)
}

/// Like the column-mask protocol, but for a target inside one of `groups`
/// the whole group is hidden together.
pub fn group_mask_benchmark(
    params: &ModelParams,
    test: &Dataset,
    groups: &[Vec<usize>],
    train_means: Option<&[f64]>,
) -> Result<BenchmarkReport> {
    let p = test.schema.p();
    let mut seen = vec![false; p];
    for group in groups {
        for &j in group {
            if j >= p {
                return Err(QcompError::InvalidInput(format!(
                    "group assay index {j} out of range"
                )));
            }
            if seen[j] {
                return Err(QcompError::InvalidInput(format!(
                    "assay index {j} appears in more than one group"
                )));
            }
            seen[j] = true;
        }
    }
    benchmark_with_mask_rule(
        params,
        test,
        Protocol::GroupMask,
        |target| {
            groups
                .iter()
                .find(|g| g.contains(&target))
                .cloned()
                .unwrap_or_default()
        },
        train_means,
    )
}

/// How synthetic rows lose entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Missingness {
    /// Every cell is hidden independently with this probability.
    Uniform(f64),
    /// Per-assay hide probabilities.
    PerAssay(Vec<f64>),
    /// Assays in the same group are hidden together (one coin per group per
    /// row); ungrouped assays use `rate` independently.
    Grouped { groups: Vec<Vec<usize>>, rate: f64 },
}

/// Ground-truth generator configuration. `sigma` must be positive definite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub assays: Option<Vec<String>>,
    #[serde(default)]
    pub b_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub missing: Missingness,
    /// Constant per-assay base-prediction stds; enables `.std` columns.
    #[serde(default)]
    pub sigma_f: Option<Vec<f64>>,
}

impl SyntheticSpec {
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QcompError::io(path.display().to_string(), e))?;
        toml::from_str(&text)
            .map_err(|e| QcompError::InvalidInput(format!("synthetic spec: {e}")))
    }

    pub fn schema(&self) -> Result<AssaySchema> {
        let names = match &self.assays {
            Some(names) => names.clone(),
            None => (0..self.p).map(|j| format!("a{j}")).collect(),
        };
        AssaySchema::new(names)
    }

    fn matrices(&self) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
        let p = self.p;
        let b = match &self.b_matrix {
            Some(rows) => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(QcompError::InvalidInput("b_matrix must be p x p".into()));
                }
                DMatrix::from_fn(p, p, |i, j| rows[i][j])
            }
            None => DMatrix::identity(p, p),
        };
        let offset = match &self.offset {
            Some(v) => {
                if v.len() != p {
                    return Err(QcompError::InvalidInput("offset must have length p".into()));
                }
                DVector::from_vec(v.clone())
            }
            None => DVector::zeros(p),
        };
        if self.sigma.len() != p || self.sigma.iter().any(|r| r.len() != p) {
            return Err(QcompError::InvalidInput("sigma must be p x p".into()));
        }
        let sigma = DMatrix::from_fn(p, p, |i, j| self.sigma[i][j]);
        Ok((b, offset, sigma))
    }

    fn validate_missing(&self) -> Result<()> {
        let ok = |r: f64| (0.0..1.0).contains(&r);
        match &self.missing {
            Missingness::Uniform(r) if ok(*r) => Ok(()),
            Missingness::PerAssay(rates)
                if rates.len() == self.p && rates.iter().all(|r| ok(*r)) =>
            {
                Ok(())
            }
            Missingness::Grouped { groups, rate } if ok(*rate) => {
                let mut seen = vec![false; self.p];
                for g in groups {
                    for &j in g {
                        if j >= self.p || seen[j] {
                            return Err(QcompError::InvalidInput(
                                "grouped missingness: overlapping or out-of-range index".into(),
                            ));
                        }
                        seen[j] = true;
                    }
                }
                Ok(())
            }
            _ => Err(QcompError::InvalidInput(
                "missing rates must lie in [0, 1)".into(),
            )),
        }
    }
}

/// Exact per-row reference computed with explicit inverse and determinant,
/// independent of the Cholesky-solve path used by the library.
#[derive(Debug, Clone)]
pub struct RowOracle {
    /// The full activity vector before masking.
    pub y_true: Vec<f64>,
    pub missing_idx: Vec<usize>,
    pub cond_mean: Vec<f64>,
    pub cond_cov: DMatrix<f64>,
    pub marginal_loglik: Option<f64>,
}

/// Draw a dataset from the exact model family and return the brute-force
/// conditional for every row. Deterministic under the generator seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Vec<RowOracle>)> {
    spec.validate_missing()?;
    let schema = spec.schema()?;
    let (b, offset, sigma) = spec.matrices()?;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| QcompError::InvalidInput("sigma is not positive definite".into()))?;
    let l = chol.l();
    let p = spec.p;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;

    let mut rows = Vec::with_capacity(spec.n);
    let mut oracles = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let f = DVector::from_fn(p, |_, _| normal.sample(&mut rng));
        let z = DVector::from_fn(p, |_, _| normal.sample(&mut rng));
        let mu = b.transpose() * &f + &offset;
        let y_true = &mu + &l * z;

        use rand::Rng;
        let mut hidden = vec![false; p];
        match &spec.missing {
            Missingness::Uniform(rate) => {
                for h in hidden.iter_mut() {
                    *h = rng.random_bool(*rate);
                }
            }
            Missingness::PerAssay(rates) => {
                for (j, h) in hidden.iter_mut().enumerate() {
                    *h = rng.random_bool(rates[j]);
                }
            }
            Missingness::Grouped { groups, rate } => {
                let mut grouped = vec![false; p];
                for g in groups {
                    let hide = rng.random_bool(*rate);
                    for &j in g {
                        grouped[j] = true;
                        hidden[j] = hide;
                    }
                }
                for j in 0..p {
                    if !grouped[j] {
                        hidden[j] = rng.random_bool(*rate);
                    }
                }
            }
        }

        let y: Vec<Option<f64>> = (0..p)
            .map(|j| if hidden[j] { None } else { Some(y_true[j]) })
            .collect();
        oracles.push(brute_force_oracle(&mu, &sigma, &y, &y_true));
        rows.push(SparseRow {
            compound_id: format!("s{i}"),
            y,
            f: f.iter().copied().collect(),
            sigma_f: spec.sigma_f.clone(),
        });
    }
    Ok((Dataset::new(schema, rows)?, oracles))
}

fn brute_force_oracle(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    y: &[Option<f64>],
    y_true: &DVector<f64>,
) -> RowOracle {
    let p = y.len();
    let obs: Vec<usize> = (0..p).filter(|&j| y[j].is_some()).collect();
    let mis: Vec<usize> = (0..p).filter(|&j| y[j].is_none()).collect();
    let gather = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| sigma[(rows[a], cols[b])])
    };
    let sigma_mm = gather(&mis, &mis);
    let mu_m = DVector::from_iterator(mis.len(), mis.iter().map(|&j| mu[j]));
    if obs.is_empty() {
        return RowOracle {
            y_true: y_true.iter().copied().collect(),
            missing_idx: mis,
            cond_mean: mu_m.iter().copied().collect(),
            cond_cov: sigma_mm,
            marginal_loglik: None,
        };
    }
    let sigma_oo = gather(&obs, &obs);
    let sigma_mo = gather(&mis, &obs);
    let inv = sigma_oo
        .clone()
        .try_inverse()
        .expect("synthetic observed block is invertible");
    let r = DVector::from_iterator(obs.len(), obs.iter().map(|&j| y[j].unwrap() - mu[j]));
    let cond_mean = &mu_m + &sigma_mo * &inv * &r;
    let cond_cov = &sigma_mm - &sigma_mo * &inv * sigma_mo.transpose();
    let det = sigma_oo.determinant();
    let quad = (r.transpose() * &inv * &r)[(0, 0)];
    let loglik =
        -0.5 * (quad + det.ln() + obs.len() as f64 * crate::gaussian::LN_2PI);
    RowOracle {
        y_true: y_true.iter().copied().collect(),
        missing_idx: mis,
        cond_mean: cond_mean.iter().copied().collect(),
        cond_cov,
        marginal_loglik: Some(loglik),
    }
}

/// Seeded random split by compound; returns `(train, test)`.
pub fn random_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(QcompError::InvalidInput(
            "test fraction must lie in [0, 1)".into(),
        ));
    }
    let n = data.rows.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let test_set: std::collections::HashSet<usize> = indices[..n_test].iter().copied().collect();
    split_by(data, |i| test_set.contains(&i))
}

/// Temporal split on the declared date column: the most recent
/// `test_fraction` of rows (lexicographic date order, ISO-style dates
/// expected) become the test set.
pub fn temporal_split(data: &Dataset, test_fraction: f64) -> Result<(Dataset, Dataset)> {
    let dates = data.dates.as_ref().ok_or_else(|| {
        QcompError::InvalidInput(
            "temporal split needs a date column declared in the schema config".into(),
        )
    })?;
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(QcompError::InvalidInput(
            "test fraction must lie in [0, 1)".into(),
        ));
    }
    let n = data.rows.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dates[a].cmp(&dates[b]).then(a.cmp(&b)));
    let test_set: std::collections::HashSet<usize> =
        order[n.saturating_sub(n_test)..].iter().copied().collect();
    split_by(data, |i| test_set.contains(&i))
}

fn split_by(data: &Dataset, is_test: impl Fn(usize) -> bool) -> Result<(Dataset, Dataset)> {
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut train_dates = Vec::new();
    let mut test_dates = Vec::new();
    for (i, row) in data.rows.iter().enumerate() {
        let date = data.dates.as_ref().map(|d| d[i].clone());
        if is_test(i) {
            test_rows.push(row.clone());
            if let Some(d) = date {
                test_dates.push(d);
            }
        } else {
            train_rows.push(row.clone());
            if let Some(d) = date {
                train_dates.push(d);
            }
        }
    }
    let mut train = Dataset::new(data.schema.clone(), train_rows)?;
    let mut test = Dataset::new(data.schema.clone(), test_rows)?;
    if data.dates.is_some() {
        train.dates = Some(train_dates);
        test.dates = Some(test_dates);
    }
    Ok((train, test))
}

/// Dataset CSV in the loader's column convention, plus an oracle sidecar
/// (per missing cell: brute-force conditional mean and variance).
pub fn write_synthetic_csv<W: std::io::Write>(
    data: &Dataset,
    writer: W,
) -> Result<()> {
    let p = data.schema.p();
    let have_std = data.rows.iter().any(|r| r.sigma_f.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["compound_id".to_string()];
    for name in data.schema.names() {
        header.push(name.clone());
        header.push(format!("{name}.pred"));
        if have_std {
            header.push(format!("{name}.std"));
        }
    }
    w.write_record(&header)?;
    for row in &data.rows {
        let mut record = vec![row.compound_id.clone()];
        for j in 0..p {
            record.push(match row.y[j] {
                Some(v) => format!("{v}"),
                None => "NA".into(),
            });
            record.push(format!("{}", row.f[j]));
            if have_std {
                record.push(match &row.sigma_f {
                    Some(s) => format!("{}", s[j]),
                    None => String::new(),
                });
            }
        }
        w.write_record(&record)?;
    }
    w.flush()
        .map_err(|e| QcompError::InvalidInput(format!("write synthetic data: {e}")))?;
    Ok(())
}

pub fn write_oracle_csv<W: std::io::Write>(
    data: &Dataset,
    oracles: &[RowOracle],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["compound_id", "assay", "true_value", "cond_mean", "cond_var"])?;
    for (row, oracle) in data.rows.iter().zip(oracles) {
        for (a, &j) in oracle.missing_idx.iter().enumerate() {
            w.write_record([
                row.compound_id.clone(),
                data.schema.names()[j].clone(),
                format!("{}", oracle.y_true[j]),
                format!("{}", oracle.cond_mean[a]),
                format!("{}", oracle.cond_cov[(a, a)]),
            ])?;
        }
    }
    w.flush()
        .map_err(|e| QcompError::InvalidInput(format!("write oracle: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_linear_relation() {
        let r2 = pearson_r2(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r2, R2::Defined(1.0));
    }

    #[test]
    fn anticorrelation_squares_to_one() {
        let r2 = pearson_r2(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        match r2 {
            R2::Defined(v) => assert!((v - 1.0).abs() < 1e-12),
            R2::Undefined => panic!("should be defined"),
        }
    }

    #[test]
    fn constant_prediction_is_undefined() {
        let r2 = pearson_r2(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r2, R2::Undefined);
    }

    #[test]
    fn r2_is_affine_invariant() {
        let pred = [0.3, -1.2, 2.5, 0.9];
        let truth = [1.0, 0.5, 3.0, 1.5];
        let base = pearson_r2(&pred, &truth).unwrap().value().unwrap();
        let scaled: Vec<f64> = pred.iter().map(|v| -2.5 * v + 7.0).collect();
        let same = pearson_r2(&scaled, &truth).unwrap().value().unwrap();
        assert!((base - same).abs() < 1e-12);
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            p: 2,
            n: 20,
            seed: 42,
            assays: None,
            b_matrix: None,
            offset: None,
            sigma: vec![vec![1.0, 0.8], vec![0.8, 1.0]],
            missing: Missingness::Uniform(0.3),
            sigma_f: None,
        }
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let spec = small_spec();
        let (a, _) = generate_synthetic(&spec).unwrap();
        let (b, _) = generate_synthetic(&spec).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn zero_missing_rate_gives_dense_data() {
        let mut spec = small_spec();
        spec.missing = Missingness::Uniform(0.0);
        let (data, _) = generate_synthetic(&spec).unwrap();
        assert!(data.rows.iter().all(|r| r.observed_count() == 2));
    }

    #[test]
    fn empty_spec_gives_empty_dataset() {
        let mut spec = small_spec();
        spec.n = 0;
        let (data, oracles) = generate_synthetic(&spec).unwrap();
        assert!(data.is_empty());
        assert!(oracles.is_empty());
    }

    #[test]
    fn grouped_missingness_hides_groups_together() {
        let mut spec = small_spec();
        spec.p = 3;
        spec.sigma = vec![
            vec![1.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        spec.n = 200;
        spec.missing = Missingness::Grouped {
            groups: vec![vec![0, 1]],
            rate: 0.5,
        };
        let (data, _) = generate_synthetic(&spec).unwrap();
        for row in &data.rows {
            assert_eq!(row.y[0].is_some(), row.y[1].is_some());
        }
    }

    #[test]
    fn random_split_partitions_rows() {
        let (data, _) = generate_synthetic(&small_spec()).unwrap();
        let (train, test) = random_split(&data, 0.25, 1).unwrap();
        assert_eq!(train.len() + test.len(), data.len());
        assert_eq!(test.len(), 5);
    }

    #[test]
    fn temporal_split_takes_latest_rows() {
        let (mut data, _) = generate_synthetic(&small_spec()).unwrap();
        data.dates = Some(
            (0..data.len())
                .map(|i| format!("2024-01-{:02}", i + 1))
                .collect(),
        );
        let (train, test) = temporal_split(&data, 0.25).unwrap();
        assert_eq!(test.len(), 5);
        let latest_train = train.dates.as_ref().unwrap().iter().max().unwrap().clone();
        let earliest_test = test.dates.as_ref().unwrap().iter().min().unwrap().clone();
        assert!(latest_train < earliest_test);
    }

    #[test]
    fn temporal_split_without_dates_errors() {
        let (data, _) = generate_synthetic(&small_spec()).unwrap();
        assert!(temporal_split(&data, 0.25).is_err());
    }
}
