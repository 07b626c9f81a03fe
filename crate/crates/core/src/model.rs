//! Trainable parameters (calibration matrix, offset, covariance factor) and
//! model persistence.
//!
//! Models are stored as versioned JSON. Floats survive the round trip
//! losslessly (shortest-representation encoding), and the file carries the
//! schema fingerprint so a model cannot be applied to a reordered assay list.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QcompError, Result};
use crate::gaussian::CovarianceFactor;
use crate::schema::{AssaySchema, Dataset, Standardization};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// How the covariance factor is initialized before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// L = I.
    Identity,
    /// Diagonal L from per-assay residual stds, zero off-diagonal.
    Residual,
    /// Residual diagonal plus small seeded uniform off-diagonal entries.
    Random,
}

impl std::str::FromStr for InitMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "identity" => Ok(InitMode::Identity),
            "residual" => Ok(InitMode::Residual),
            "random" => Ok(InitMode::Random),
            other => Err(format!("unknown init mode `{other}`")),
        }
    }
}

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    pub final_loss: f64,
}

/// Full parameter set theta = (B, b, Sigma) plus standardization stats and
/// the schema fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub assay_names: Vec<String>,
    pub b_matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: CovarianceFactor,
    pub standardization: Standardization,
    pub meta: TrainingMeta,
}

impl ModelParams {
    pub fn p(&self) -> usize {
        self.offset.len()
    }

    pub fn schema(&self) -> Result<AssaySchema> {
        AssaySchema::new(self.assay_names.clone())
    }

    pub fn fingerprint(&self) -> String {
        AssaySchema::new(self.assay_names.clone())
            .expect("model holds a valid schema")
            .fingerprint()
    }

    /// Calibrated mean mu = f B + b (row-vector convention:
    /// mu_j = sum_k f_k B_kj + b_j). `f` must be on the same scale the model
    /// was trained on.
    pub fn calibrate(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        if f.len() != self.p() {
            return Err(QcompError::SchemaMismatch(format!(
                "prediction vector length {} != p {}",
                f.len(),
                self.p()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(QcompError::InvalidInput(
                "non-finite base prediction".into(),
            ));
        }
        Ok(self.b_matrix.transpose() * f + &self.offset)
    }

    pub fn verify_schema(&self, schema: &AssaySchema) -> Result<()> {
        if self.fingerprint() != schema.fingerprint() {
            return Err(QcompError::SchemaMismatch(
                "model schema fingerprint does not match the dataset schema".into(),
            ));
        }
        Ok(())
    }
}

/// Initialize parameters on (already standardized) training data.
///
/// B is the identity and b zero in all modes; only the covariance init
/// differs. Assays with no observed residuals fall back to a unit diagonal
/// and produce a warning on stderr.
pub fn init_params(data: &Dataset, seed: u64, mode: InitMode) -> Result<ModelParams> {
    init_params_with_stats(data, seed, mode, Standardization::identity(data.schema.p()))
}

pub fn init_params_with_stats(
    data: &Dataset,
    seed: u64,
    mode: InitMode,
    stats: Standardization,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(QcompError::InvalidInput(
            "cannot initialize a model from an empty dataset".into(),
        ));
    }
    let p = data.schema.p();
    let mut cov = CovarianceFactor::identity(p);
    if matches!(mode, InitMode::Residual | InitMode::Random) {
        for j in 0..p {
            let residuals: Vec<f64> = data
                .rows
                .iter()
                .filter_map(|r| r.y[j].map(|y| y - r.f[j]))
                .collect();
            if residuals.len() < 2 {
                eprintln!(
                    "warning: assay `{}` has no usable residuals; init diagonal falls back to 1.0",
                    data.schema.names()[j]
                );
                continue;
            }
            let n = residuals.len() as f64;
            let mean = residuals.iter().sum::<f64>() / n;
            let var = residuals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if var > 0.0 {
                cov.log_diag[j] = var.sqrt().ln();
            } else {
                eprintln!(
                    "warning: assay `{}` residuals are constant; init diagonal falls back to 1.0",
                    data.schema.names()[j]
                );
            }
        }
    }
    if mode == InitMode::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in cov.strict_lower.iter_mut() {
            *v = rng.random_range(-0.01..0.01);
        }
    }
    Ok(ModelParams {
        assay_names: data.schema.names().to_vec(),
        b_matrix: DMatrix::identity(p, p),
        offset: DVector::zeros(p),
        cov,
        standardization: stats,
        meta: TrainingMeta::default(),
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    schema_fingerprint: String,
    assay_names: Vec<String>,
    p: usize,
    b_row_major: Vec<f64>,
    b_offset: Vec<f64>,
    log_diag: Vec<f64>,
    strict_lower: Vec<f64>,
    standardization: Standardization,
    meta: TrainingMeta,
}

pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let p = params.p();
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        schema_fingerprint: params.fingerprint(),
        assay_names: params.assay_names.clone(),
        p,
        b_row_major: (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .map(|(i, j)| params.b_matrix[(i, j)])
            .collect(),
        b_offset: params.offset.iter().copied().collect(),
        log_diag: params.cov.log_diag.clone(),
        strict_lower: params.cov.strict_lower.clone(),
        standardization: params.standardization.clone(),
        meta: params.meta.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| QcompError::ModelFile(format!("serialize: {e}")))?;
    std::fs::write(path, json).map_err(|e| QcompError::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text =
        std::fs::read_to_string(path).map_err(|e| QcompError::io(path.display().to_string(), e))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| QcompError::ModelFile(format!("{}: corrupt model file: {e}", path.display())))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(QcompError::ModelFile(format!(
            "unsupported model format version {} (expected {})",
            file.format_version, MODEL_FORMAT_VERSION
        )));
    }
    let p = file.p;
    if file.assay_names.len() != p
        || file.b_row_major.len() != p * p
        || file.b_offset.len() != p
        || file.log_diag.len() != p
        || file.strict_lower.len() != CovarianceFactor::strict_lower_len(p)
        || file.standardization.means.len() != p
        || file.standardization.stds.len() != p
    {
        return Err(QcompError::ModelFile(format!(
            "{}: corrupt model file: inconsistent dimensions",
            path.display()
        )));
    }
    let schema = AssaySchema::new(file.assay_names.clone())?;
    if schema.fingerprint() != file.schema_fingerprint {
        return Err(QcompError::ModelFile(
            "schema fingerprint does not match stored assay names".into(),
        ));
    }
    Ok(ModelParams {
        assay_names: file.assay_names,
        b_matrix: DMatrix::from_row_slice(p, p, &file.b_row_major),
        offset: DVector::from_vec(file.b_offset),
        cov: CovarianceFactor {
            log_diag: file.log_diag,
            strict_lower: file.strict_lower,
        },
        standardization: file.standardization,
        meta: file.meta,
    })
}
