//! Residual diagnostics: does the observed data look jointly Gaussian
//! around the calibrated predictions?
//!
//! Residuals are computed on the standardized scale as `y - calibrate(f)`
//! over observed cells. The Gaussian-plausible flag uses screening
//! thresholds (|skewness| < 0.5, |excess kurtosis| < 1.0); they are
//! heuristics, not hypothesis tests.

use nalgebra::DVector;

use crate::error::Result;
use crate::model::ModelParams;
use crate::schema::Dataset;

pub const HISTOGRAM_BINS: usize = 40;
/// Histogram spans mean +/- 4 sample stds; outliers land in the edge bins so
/// counts always sum to the observation count.
pub const HISTOGRAM_SPAN_STDS: f64 = 4.0;

pub const SKEWNESS_THRESHOLD: f64 = 0.5;
pub const EXCESS_KURTOSIS_THRESHOLD: f64 = 1.0;

/// Pairs with fewer co-observations than this are reported as missing.
pub const MIN_CO_OBSERVATIONS: usize = 10;

#[derive(Debug, Clone)]
pub struct AssayResiduals {
    pub assay: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub gaussian_plausible: bool,
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ResidualDiagnostics {
    pub per_assay: Vec<AssayResiduals>,
    /// Pairwise residual correlations over co-observed rows; `None` when a
    /// pair has too few co-observations.
    pub correlation: Vec<Vec<Option<f64>>>,
}

fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let std = (m2 * n / (n - 1.0)).sqrt();
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let exkurt = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    (mean, std, skew, exkurt)
}

/// Compute residual histograms, shape statistics, and the pairwise residual
/// correlation matrix. Pure function of `(params, data)`.
pub fn residual_report(params: &ModelParams, data: &Dataset) -> Result<ResidualDiagnostics> {
    params.verify_schema(&data.schema)?;
    let p = params.p();
    let stats = &params.standardization;

    // standardized residuals per assay, plus a per-row residual table for
    // the pairwise pass
    let mut residual_rows: Vec<Vec<Option<f64>>> = Vec::with_capacity(data.rows.len());
    for row in &data.rows {
        let f_std = DVector::from_iterator(
            p,
            (0..p).map(|j| (row.f[j] - stats.means[j]) / stats.stds[j]),
        );
        let mu = params.calibrate(&f_std)?;
        residual_rows.push(
            (0..p)
                .map(|j| {
                    row.y[j].map(|v| (v - stats.means[j]) / stats.stds[j] - mu[j])
                })
                .collect(),
        );
    }

    let mut per_assay = Vec::with_capacity(p);
    for j in 0..p {
        let values: Vec<f64> = residual_rows.iter().filter_map(|r| r[j]).collect();
        let assay = data.schema.names()[j].clone();
        if values.len() < 2 {
            per_assay.push(AssayResiduals {
                assay,
                count: values.len(),
                mean: 0.0,
                std: 0.0,
                skewness: 0.0,
                excess_kurtosis: 0.0,
                gaussian_plausible: false,
                bin_edges: Vec::new(),
                bin_counts: Vec::new(),
            });
            continue;
        }
        let (mean, std, skew, exkurt) = moments(&values);
        let span = if std > 0.0 { HISTOGRAM_SPAN_STDS * std } else { 1.0 };
        let lo = mean - span;
        let hi = mean + span;
        let width = (hi - lo) / HISTOGRAM_BINS as f64;
        let bin_edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|k| lo + k as f64 * width).collect();
        let mut bin_counts = vec![0usize; HISTOGRAM_BINS];
        for &v in &values {
            let k = ((v - lo) / width).floor() as i64;
            let k = k.clamp(0, HISTOGRAM_BINS as i64 - 1) as usize;
            bin_counts[k] += 1;
        }
        per_assay.push(AssayResiduals {
            assay,
            count: values.len(),
            mean,
            std,
            skewness: skew,
            excess_kurtosis: exkurt,
            gaussian_plausible: skew.abs() < SKEWNESS_THRESHOLD
                && exkurt.abs() < EXCESS_KURTOSIS_THRESHOLD,
            bin_edges,
            bin_counts,
        });
    }

    let mut correlation = vec![vec![None; p]; p];
    for a in 0..p {
        correlation[a][a] = if per_assay[a].count >= MIN_CO_OBSERVATIONS {
            Some(1.0)
        } else {
            None
        };
        for b in 0..a {
            let pairs: Vec<(f64, f64)> = residual_rows
                .iter()
                .filter_map(|r| match (r[a], r[b]) {
                    (Some(x), Some(y)) => Some((x, y)),
                    _ => None,
                })
                .collect();
            let corr = if pairs.len() < MIN_CO_OBSERVATIONS {
                None
            } else {
                let n = pairs.len() as f64;
                let ma = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
                let mb = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
                let mut cov = 0.0;
                let mut va = 0.0;
                let mut vb = 0.0;
                for (x, y) in &pairs {
                    cov += (x - ma) * (y - mb);
                    va += (x - ma).powi(2);
                    vb += (y - mb).powi(2);
                }
                if va > 0.0 && vb > 0.0 {
                    Some(cov / (va * vb).sqrt())
                } else {
                    None
                }
            };
            correlation[a][b] = corr;
            correlation[b][a] = corr;
        }
    }

    Ok(ResidualDiagnostics {
        per_assay,
        correlation,
    })
}

/// Summary CSV: one line per assay with shape statistics and the flag.
pub fn write_diagnostics_csv<W: std::io::Write>(
    report: &ResidualDiagnostics,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "assay",
        "count",
        "mean",
        "std",
        "skewness",
        "excess_kurtosis",
        "gaussian_plausible",
    ])?;
    for a in &report.per_assay {
        w.write_record([
            a.assay.clone(),
            a.count.to_string(),
            format!("{}", a.mean),
            format!("{}", a.std),
            format!("{}", a.skewness),
            format!("{}", a.excess_kurtosis),
            a.gaussian_plausible.to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| crate::error::QcompError::InvalidInput(format!("write diagnostics: {e}")))?;
    Ok(())
}

/// Histogram bins for external plotting: assay, bin_lo, bin_hi, count.
pub fn write_histograms_csv<W: std::io::Write>(
    report: &ResidualDiagnostics,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["assay", "bin_lo", "bin_hi", "count"])?;
    for a in &report.per_assay {
        for k in 0..a.bin_counts.len() {
            w.write_record([
                a.assay.clone(),
                format!("{}", a.bin_edges[k]),
                format!("{}", a.bin_edges[k + 1]),
                a.bin_counts[k].to_string(),
            ])?;
        }
    }
    w.flush()
        .map_err(|e| crate::error::QcompError::InvalidInput(format!("write histograms: {e}")))?;
    Ok(())
}

/// Correlation matrix CSV; missing pairs are left blank.
pub fn write_correlation_csv<W: std::io::Write>(
    report: &ResidualDiagnostics,
    names: &[String],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["assay".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (a, name) in names.iter().enumerate() {
        let mut record = vec![name.clone()];
        for b in 0..names.len() {
            record.push(match report.correlation[a][b] {
                Some(c) => format!("{c}"),
                None => String::new(),
            });
        }
        w.write_record(&record)?;
    }
    w.flush()
        .map_err(|e| crate::error::QcompError::InvalidInput(format!("write correlation: {e}")))?;
    Ok(())
}
