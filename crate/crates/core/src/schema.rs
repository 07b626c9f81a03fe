//! Assay schema, sparse activity rows, and CSV ingestion.
//!
//! Data files are plain CSV with a header row. For a schema assay `X` the
//! file carries a data column `X`, a dense prediction column `X.pred`, and
//! optionally an ensemble-std column `X.std`. Missing activities are written
//! as one of the configured missing tokens (`NA`, `NaN`, or an empty cell by
//! default); prediction columns must be fully dense.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QcompError, Result};

/// Ordered collection of assay names defining the column layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssaySchema {
    names: Vec<String>,
}

impl AssaySchema {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(QcompError::InvalidInput(
                "schema must declare at least one assay".into(),
            ));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(QcompError::InvalidInput("empty assay name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(QcompError::InvalidInput(format!("duplicate assay name `{n}`")));
            }
        }
        Ok(AssaySchema { names })
    }

    /// Number of assays p.
    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Order-sensitive hash of the assay names, stored in model files so a
    /// model cannot silently be applied to a reordered schema.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for n in &self.names {
            hasher.update(n.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One compound: partially observed activities `y`, dense base predictions
/// `f`, and optional per-assay prediction stds.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub compound_id: String,
    pub y: Vec<Option<f64>>,
    pub f: Vec<f64>,
    pub sigma_f: Option<Vec<f64>>,
}

impl SparseRow {
    pub fn p(&self) -> usize {
        self.f.len()
    }

    pub fn observed_count(&self) -> usize {
        self.y.iter().filter(|v| v.is_some()).count()
    }
}

/// Index bookkeeping between global assay indices and the observed/missing
/// sub-vector positions of one row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskPartition {
    observed_idx: Vec<usize>,
    missing_idx: Vec<usize>,
}

impl MaskPartition {
    /// Build from an explicit observation mask (`true` = observed).
    pub fn from_mask(mask: &[bool]) -> Self {
        let observed_idx = (0..mask.len()).filter(|&j| mask[j]).collect();
        let missing_idx = (0..mask.len()).filter(|&j| !mask[j]).collect();
        MaskPartition {
            observed_idx,
            missing_idx,
        }
    }

    pub fn observed_idx(&self) -> &[usize] {
        &self.observed_idx
    }

    pub fn missing_idx(&self) -> &[usize] {
        &self.missing_idx
    }

    pub fn p(&self) -> usize {
        self.observed_idx.len() + self.missing_idx.len()
    }

    pub fn p_observed(&self) -> usize {
        self.observed_idx.len()
    }

    pub fn p_missing(&self) -> usize {
        self.missing_idx.len()
    }
}

/// Collect the non-missing positions of a row, in increasing order.
pub fn partition_row(row: &SparseRow) -> MaskPartition {
    let mask: Vec<bool> = row.y.iter().map(|v| v.is_some()).collect();
    MaskPartition::from_mask(&mask)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: AssaySchema,
    pub rows: Vec<SparseRow>,
    /// Per-row measurement dates, present only when the schema config
    /// declares a date column. Needed for temporal splitting.
    pub dates: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(schema: AssaySchema, rows: Vec<SparseRow>) -> Result<Self> {
        let p = schema.p();
        let mut ids = HashSet::new();
        for row in &rows {
            if row.y.len() != p || row.f.len() != p {
                return Err(QcompError::SchemaMismatch(format!(
                    "row `{}` has {} assay slots, schema has {}",
                    row.compound_id,
                    row.y.len(),
                    p
                )));
            }
            if let Some(s) = &row.sigma_f {
                if s.len() != p {
                    return Err(QcompError::SchemaMismatch(format!(
                        "row `{}` std vector length {} != p {}",
                        row.compound_id,
                        s.len(),
                        p
                    )));
                }
                if s.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(QcompError::InvalidInput(format!(
                        "row `{}` has a negative or non-finite prediction std",
                        row.compound_id
                    )));
                }
            }
            if row.f.iter().any(|v| !v.is_finite()) {
                return Err(QcompError::InvalidInput(format!(
                    "row `{}` has a non-finite prediction",
                    row.compound_id
                )));
            }
            if row.y.iter().flatten().any(|v| !v.is_finite()) {
                return Err(QcompError::InvalidInput(format!(
                    "row `{}` has a non-finite activity",
                    row.compound_id
                )));
            }
            if !ids.insert(row.compound_id.clone()) {
                return Err(QcompError::InvalidInput(format!(
                    "duplicate compound_id `{}`",
                    row.compound_id
                )));
            }
        }
        Ok(Dataset {
            schema,
            rows,
            dates: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn default_missing_tokens() -> Vec<String> {
    vec!["NA".into(), "NaN".into(), String::new()]
}

fn default_standardize() -> bool {
    true
}

/// Schema configuration file (TOML): assay order, standardization switch,
/// missing-token list, and optional training defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub assays: Vec<String>,
    #[serde(default = "default_standardize")]
    pub standardize: bool,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    #[serde(default)]
    pub date_column: Option<String>,
    #[serde(default)]
    pub train: Option<crate::train::TrainConfigFile>,
}

impl SchemaConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QcompError::io(path.display().to_string(), e))?;
        toml::from_str(&text)
            .map_err(|e| QcompError::InvalidInput(format!("schema config: {e}")))
    }

    pub fn schema(&self) -> Result<AssaySchema> {
        AssaySchema::new(self.assays.clone())
    }
}

fn parse_cell(
    raw: &str,
    missing_tokens: &[String],
    col: &str,
    line: usize,
) -> Result<Option<f64>> {
    let trimmed = raw.trim();
    if missing_tokens.iter().any(|t| t == trimmed) {
        return Ok(None);
    }
    let v: f64 = trimmed.parse().map_err(|_| {
        QcompError::InvalidInput(format!(
            "record {line}, column `{col}`: cannot parse `{trimmed}` as a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(QcompError::InvalidInput(format!(
            "record {line}, column `{col}`: non-finite value"
        )));
    }
    Ok(Some(v))
}

/// Load a CSV activity table against a schema config.
///
/// Required columns: `compound_id`, then `X` and `X.pred` per assay `X`.
/// `X.std` columns are picked up when present (all-or-none per file).
pub fn load_dataset(path: &Path, config: &SchemaConfig) -> Result<Dataset> {
    let schema = config.schema()?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| QcompError::InvalidInput(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let find = |name: &str| -> Option<usize> { headers.iter().position(|h| h == name) };
    let id_col = find("compound_id").ok_or_else(|| {
        QcompError::SchemaMismatch(format!("{}: missing `compound_id` column", path.display()))
    })?;

    let p = schema.p();
    let mut y_cols = Vec::with_capacity(p);
    let mut pred_cols = Vec::with_capacity(p);
    let mut std_cols = Vec::with_capacity(p);
    for name in schema.names() {
        y_cols.push(find(name).ok_or_else(|| {
            QcompError::SchemaMismatch(format!("{}: missing data column `{name}`", path.display()))
        })?);
        let pred = format!("{name}.pred");
        pred_cols.push(find(&pred).ok_or_else(|| {
            QcompError::SchemaMismatch(format!(
                "{}: missing prediction column `{pred}`",
                path.display()
            ))
        })?);
        std_cols.push(find(&format!("{name}.std")));
    }
    let have_std = std_cols.iter().all(|c| c.is_some());
    if !have_std && std_cols.iter().any(|c| c.is_some()) {
        return Err(QcompError::SchemaMismatch(format!(
            "{}: `.std` columns must be present for all assays or none",
            path.display()
        )));
    }

    let date_col = match &config.date_column {
        Some(name) => Some(find(name).ok_or_else(|| {
            QcompError::SchemaMismatch(format!(
                "{}: declared date column `{name}` not found",
                path.display()
            ))
        })?),
        None => None,
    };

    let mut rows = Vec::new();
    let mut dates = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let line = line + 2; // 1-based, after header
        let compound_id = record
            .get(id_col)
            .unwrap_or_default()
            .trim()
            .to_string();
        let mut y = Vec::with_capacity(p);
        let mut f = Vec::with_capacity(p);
        let mut sigma = if have_std { Some(Vec::with_capacity(p)) } else { None };
        for j in 0..p {
            let name = &schema.names()[j];
            y.push(parse_cell(
                record.get(y_cols[j]).unwrap_or_default(),
                &config.missing_tokens,
                name,
                line,
            )?);
            let pred = parse_cell(
                record.get(pred_cols[j]).unwrap_or_default(),
                &config.missing_tokens,
                &format!("{name}.pred"),
                line,
            )?;
            match pred {
                Some(v) => f.push(v),
                None => {
                    return Err(QcompError::InvalidInput(format!(
                        "record {line}, column `{name}.pred`: dense prediction required"
                    )))
                }
            }
            if let Some(sig) = sigma.as_mut() {
                let col = std_cols[j].unwrap();
                let v = parse_cell(
                    record.get(col).unwrap_or_default(),
                    &config.missing_tokens,
                    &format!("{name}.std"),
                    line,
                )?
                .ok_or_else(|| {
                    QcompError::InvalidInput(format!(
                        "record {line}, column `{name}.std`: dense std required"
                    ))
                })?;
                sig.push(v);
            }
        }
        if let Some(col) = date_col {
            dates.push(record.get(col).unwrap_or_default().trim().to_string());
        }
        rows.push(SparseRow {
            compound_id,
            y,
            f,
            sigma_f: sigma,
        });
    }
    let mut data = Dataset::new(schema, rows)?;
    if date_col.is_some() {
        data.dates = Some(dates);
    }
    Ok(data)
}

/// Per-assay shift/scale used to put activities on zero-mean unit-std scale.
///
/// The identity transform (`mean = 0`, `std = 1`) is used when
/// standardization is disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Standardization {
            means: vec![0.0; p],
            stds: vec![1.0; p],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.means.iter().all(|m| *m == 0.0) && self.stds.iter().all(|s| *s == 1.0)
    }
}

/// Compute per-assay stats from observed activities and rescale both `y` and
/// `f` (and `sigma_f`, scale only). Missing entries are left untouched.
pub fn standardize(data: &Dataset) -> Result<(Dataset, Standardization)> {
    let p = data.schema.p();
    let mut means = vec![0.0; p];
    let mut stds = vec![1.0; p];
    for j in 0..p {
        let values: Vec<f64> = data.rows.iter().filter_map(|r| r.y[j]).collect();
        if values.len() < 2 {
            return Err(QcompError::InvalidInput(format!(
                "assay `{}` has {} observed value(s); need at least 2 to standardize",
                data.schema.names()[j],
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        // n-1 denominator
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(QcompError::InvalidInput(format!(
                "assay `{}` has zero variance; cannot standardize",
                data.schema.names()[j]
            )));
        }
        means[j] = mean;
        stds[j] = var.sqrt();
    }
    let stats = Standardization { means, stds };
    let transformed = apply_standardization(data, &stats)?;
    Ok((transformed, stats))
}

/// Apply existing stats to a dataset (forward transform).
pub fn apply_standardization(data: &Dataset, stats: &Standardization) -> Result<Dataset> {
    let p = data.schema.p();
    if stats.means.len() != p {
        return Err(QcompError::SchemaMismatch(
            "standardization stats length does not match schema".into(),
        ));
    }
    let rows = data
        .rows
        .iter()
        .map(|r| SparseRow {
            compound_id: r.compound_id.clone(),
            y: (0..p)
                .map(|j| r.y[j].map(|v| (v - stats.means[j]) / stats.stds[j]))
                .collect(),
            f: (0..p)
                .map(|j| (r.f[j] - stats.means[j]) / stats.stds[j])
                .collect(),
            sigma_f: r
                .sigma_f
                .as_ref()
                .map(|s| (0..p).map(|j| s[j] / stats.stds[j]).collect()),
        })
        .collect();
    Dataset::new(data.schema.clone(), rows)
}

/// Undo `apply_standardization`.
pub fn inverse_standardization(data: &Dataset, stats: &Standardization) -> Result<Dataset> {
    let p = data.schema.p();
    let rows = data
        .rows
        .iter()
        .map(|r| SparseRow {
            compound_id: r.compound_id.clone(),
            y: (0..p)
                .map(|j| r.y[j].map(|v| v * stats.stds[j] + stats.means[j]))
                .collect(),
            f: (0..p)
                .map(|j| r.f[j] * stats.stds[j] + stats.means[j])
                .collect(),
            sigma_f: r
                .sigma_f
                .as_ref()
                .map(|s| (0..p).map(|j| s[j] * stats.stds[j]).collect()),
        })
        .collect();
    Dataset::new(data.schema.clone(), rows)
}
