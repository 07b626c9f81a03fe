//! One-shot completion of missing assays, gain of certainty, and composite
//! uncertainty.
//!
//! All Gaussian arithmetic happens on the standardized scale the model was
//! fitted on; completed means and variances are mapped back to data units
//! before they are returned (means shift by the assay mean, variances scale
//! by the squared std). Gain of certainty stays in standardized units: it
//! depends only on the missingness pattern, never on the values.
//!
//! Composite uncertainty treats the base-model ensemble stds as independent
//! across assays and propagates them through the calibration and the
//! conditional-mean weights only; it is a practical estimate, not a full
//! posterior.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{QcompError, Result};
use crate::gaussian::{certainty_gain, cholesky_with_jitter, conditional, extract_blocks};
use crate::model::ModelParams;
use crate::schema::{partition_row, Dataset, MaskPartition, SparseRow};

/// Completion output for one row. Vectors are indexed like
/// `partition.missing_idx()`.
#[derive(Debug, Clone)]
pub struct ConditionalResult {
    pub partition: MaskPartition,
    /// Completed values in data units.
    pub mu_tilde: Vec<f64>,
    /// Conditional covariance in data units.
    pub sigma_tilde: DMatrix<f64>,
    /// Conditional variances on the standardized scale.
    pub cond_var_std: Vec<f64>,
    /// Gain of certainty, standardized units.
    pub goc: Vec<f64>,
    /// Composite variances in data units, when the row carries `sigma_f`.
    pub composite_var: Option<Vec<f64>>,
    /// True when the observed block needed the jitter retry.
    pub jittered: bool,
}

fn standardized_row(params: &ModelParams, row: &SparseRow) -> Result<(Vec<Option<f64>>, DVector<f64>)> {
    let p = params.p();
    if row.y.len() != p || row.f.len() != p {
        return Err(QcompError::SchemaMismatch(format!(
            "row `{}` does not match the model's {} assays",
            row.compound_id, p
        )));
    }
    let stats = &params.standardization;
    let y = (0..p)
        .map(|j| row.y[j].map(|v| (v - stats.means[j]) / stats.stds[j]))
        .collect();
    let f = DVector::from_iterator(p, (0..p).map(|j| (row.f[j] - stats.means[j]) / stats.stds[j]));
    Ok((y, f))
}

/// Complete one row: condition the calibrated Gaussian on the observed
/// activities and return de-standardized summaries.
///
/// With nothing observed the result is the calibrated prior; with nothing
/// missing it is empty.
pub fn complete_row(params: &ModelParams, row: &SparseRow) -> Result<ConditionalResult> {
    let (y_std, f_std) = standardized_row(params, row)?;
    let mu = params.calibrate(&f_std)?;
    let part = partition_row(row);
    let sigma = params.cov.materialize();
    let pg = extract_blocks(&mu, &sigma, &part);

    let p_o = part.p_observed();
    let y_o = DVector::from_iterator(
        p_o,
        part.observed_idx().iter().map(|&j| y_std[j].unwrap()),
    );
    let (mu_t, sigma_t) = conditional(&pg, &y_o)?;
    let (goc, jittered) = certainty_gain(&pg)?;

    let stats = &params.standardization;
    let mis = part.missing_idx();
    let mu_tilde: Vec<f64> = mis
        .iter()
        .enumerate()
        .map(|(a, &j)| mu_t[a] * stats.stds[j] + stats.means[j])
        .collect();
    let sigma_tilde = DMatrix::from_fn(mis.len(), mis.len(), |a, b| {
        sigma_t[(a, b)] * stats.stds[mis[a]] * stats.stds[mis[b]]
    });
    let cond_var_std: Vec<f64> = (0..mis.len()).map(|a| sigma_t[(a, a)]).collect();

    let mut result = ConditionalResult {
        partition: part,
        mu_tilde,
        sigma_tilde,
        cond_var_std,
        goc: goc.iter().copied().collect(),
        composite_var: None,
        jittered,
    };
    if row.sigma_f.is_some() {
        result.composite_var = Some(composite_uncertainty(params, row, &result)?);
    }
    Ok(result)
}

/// Gain of certainty for every missing assay of a mask pattern, in
/// standardized units. Depends only on the pattern.
pub fn gain_of_certainty(params: &ModelParams, part: &MaskPartition) -> Result<Vec<f64>> {
    if part.p() != params.p() {
        return Err(QcompError::SchemaMismatch(
            "mask partition size does not match the model".into(),
        ));
    }
    let sigma = params.cov.materialize();
    let mu = DVector::zeros(params.p());
    let pg = extract_blocks(&mu, &sigma, part);
    let (goc, _) = certainty_gain(&pg)?;
    Ok(goc.iter().copied().collect())
}

/// Composite variance per missing assay: conditional variance plus the
/// base-model ensemble variance propagated through the calibration and the
/// conditional-mean weights. Returned in data units.
pub fn composite_uncertainty(
    params: &ModelParams,
    row: &SparseRow,
    cond: &ConditionalResult,
) -> Result<Vec<f64>> {
    let sigma_f = row.sigma_f.as_ref().ok_or_else(|| {
        QcompError::InvalidInput(format!(
            "row `{}` has no prediction stds; composite uncertainty needs `.std` columns",
            row.compound_id
        ))
    })?;
    let p = params.p();
    let stats = &params.standardization;
    // diag of Sigma_mu = B^T diag(sigma_f^2) B, standardized scale
    let sigma_mu_diag: Vec<f64> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| {
                    let s = sigma_f[k] / stats.stds[k];
                    params.b_matrix[(k, j)].powi(2) * s * s
                })
                .sum()
        })
        .collect();

    let part = &cond.partition;
    let obs = part.observed_idx();
    let mis = part.missing_idx();
    let sigma = params.cov.materialize();

    // D = Sigma_MO * Sigma_OO^-1
    let d = if obs.is_empty() {
        DMatrix::zeros(mis.len(), 0)
    } else {
        let sigma_oo = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma[(obs[a], obs[b])]);
        let sigma_mo = DMatrix::from_fn(mis.len(), obs.len(), |a, b| sigma[(mis[a], obs[b])]);
        let (chol, _) = cholesky_with_jitter(&sigma_oo)?;
        chol.solve(&sigma_mo.transpose()).transpose()
    };

    let mut out = Vec::with_capacity(mis.len());
    for (a, &j) in mis.iter().enumerate() {
        let mut var_mu = sigma_mu_diag[j];
        for (b, &k) in obs.iter().enumerate() {
            var_mu += d[(a, b)].powi(2) * sigma_mu_diag[k];
        }
        let composite_std_scale = var_mu + cond.cond_var_std[a];
        out.push(composite_std_scale * stats.stds[j] * stats.stds[j]);
    }
    Ok(out)
}

/// Complete every row of a dataset in parallel. Output order matches input
/// order regardless of thread count.
pub fn complete_dataset(params: &ModelParams, data: &Dataset) -> Result<Vec<ConditionalResult>> {
    params.verify_schema(&data.schema)?;
    data.rows
        .par_iter()
        .map(|row| complete_row(params, row))
        .collect()
}

/// Completion table: per assay, the observed or completed value, a
/// `.source` marker, and std columns when available.
pub fn write_completions_csv<W: std::io::Write>(
    data: &Dataset,
    results: &[ConditionalResult],
    writer: W,
) -> Result<()> {
    let p = data.schema.p();
    let have_composite = results.iter().any(|r| r.composite_var.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["compound_id".to_string()];
    for name in data.schema.names() {
        header.push(name.clone());
        header.push(format!("{name}.source"));
        header.push(format!("{name}.condstd"));
        if have_composite {
            header.push(format!("{name}.compstd"));
        }
    }
    w.write_record(&header)?;

    for (row, res) in data.rows.iter().zip(results) {
        let mut record = vec![row.compound_id.clone()];
        let mis = res.partition.missing_idx();
        for j in 0..p {
            match row.y[j] {
                Some(v) => {
                    record.push(format!("{v}"));
                    record.push("observed".into());
                    record.push(String::new());
                    if have_composite {
                        record.push(String::new());
                    }
                }
                None => {
                    let a = mis.iter().position(|&m| m == j).expect("missing index");
                    record.push(format!("{}", res.mu_tilde[a]));
                    record.push("completed".into());
                    record.push(format!("{}", res.sigma_tilde[(a, a)].max(0.0).sqrt()));
                    if have_composite {
                        match &res.composite_var {
                            Some(cv) => record.push(format!("{}", cv[a].max(0.0).sqrt())),
                            None => record.push(String::new()),
                        }
                    }
                }
            }
        }
        w.write_record(&record)?;
    }
    w.flush()
        .map_err(|e| QcompError::InvalidInput(format!("write completions: {e}")))?;
    Ok(())
}
