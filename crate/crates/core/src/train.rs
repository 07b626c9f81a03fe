//! Mini-batch gradient descent on the summed negative log marginal
//! likelihood.
//!
//! Gradients are analytic: the chain rule runs through the calibration map,
//! the observed-block gather, the Cholesky solve, and the log-determinant,
//! down to the unconstrained factor parameters (`log_diag`, `strict_lower`).
//! Central finite differences stay available as a runtime check
//! (`grad_check`) and as the test oracle.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QcompError, Result};
use crate::gaussian::{cholesky_with_jitter, CovarianceFactor, LN_2PI};
use crate::model::{ModelParams, TrainingMeta};
use crate::schema::{partition_row, Dataset, SparseRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Per-parameter first/second-moment adaptation (decay 0.9/0.999,
    /// epsilon 1e-8).
    AdaptiveMoment,
    PlainSgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive-moment" | "adam" => Ok(OptimizerKind::AdaptiveMoment),
            "plain-sgd" | "sgd" => Ok(OptimizerKind::PlainSgd),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub decay_every_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub grad_check: bool,
}

impl Default for TrainConfig {
    /// The large-dataset recipe: 4 epochs, batch 5000, lr 0.003 halved every
    /// epoch.
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            batch_size: 5000,
            initial_lr: 0.003,
            lr_decay_factor: 0.5,
            decay_every_epochs: 1,
            seed: 0,
            optimizer: OptimizerKind::AdaptiveMoment,
            grad_check: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(QcompError::InvalidInput("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(QcompError::InvalidInput("batch_size must be >= 1".into()));
        }
        if self.initial_lr <= 0.0 || self.initial_lr.is_nan() {
            return Err(QcompError::InvalidInput("initial_lr must be > 0".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(QcompError::InvalidInput(
                "lr_decay_factor must be in (0, 1]".into(),
            ));
        }
        if self.decay_every_epochs < 1 {
            return Err(QcompError::InvalidInput(
                "decay_every_epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Optional `[train]` table of the schema config file. Every field is
/// overridable from the CLI.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainConfigFile {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub initial_lr: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub decay_every_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub optimizer: Option<OptimizerKind>,
    pub grad_check: Option<bool>,
}

impl TrainConfigFile {
    pub fn merge_into(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            initial_lr: self.initial_lr.unwrap_or(base.initial_lr),
            lr_decay_factor: self.lr_decay_factor.unwrap_or(base.lr_decay_factor),
            decay_every_epochs: self.decay_every_epochs.unwrap_or(base.decay_every_epochs),
            seed: self.seed.unwrap_or(base.seed),
            optimizer: self.optimizer.unwrap_or(base.optimizer),
            grad_check: self.grad_check.unwrap_or(base.grad_check),
        }
    }
}

/// Number of free parameters for p assays: B (p^2) + b (p) + log_diag (p) +
/// strict_lower (p(p-1)/2).
pub fn param_count(p: usize) -> usize {
    p * p + 2 * p + CovarianceFactor::strict_lower_len(p)
}

/// Flatten theta into a single vector: B row-major, b, log_diag,
/// strict_lower.
pub fn flatten_params(params: &ModelParams) -> Vec<f64> {
    let p = params.p();
    let mut out = Vec::with_capacity(param_count(p));
    for i in 0..p {
        for j in 0..p {
            out.push(params.b_matrix[(i, j)]);
        }
    }
    out.extend(params.offset.iter());
    out.extend(&params.cov.log_diag);
    out.extend(&params.cov.strict_lower);
    out
}

/// Write a flat parameter vector back into a model.
pub fn unflatten_params(params: &mut ModelParams, flat: &[f64]) {
    let p = params.p();
    assert_eq!(flat.len(), param_count(p));
    let mut k = 0;
    for i in 0..p {
        for j in 0..p {
            params.b_matrix[(i, j)] = flat[k];
            k += 1;
        }
    }
    for j in 0..p {
        params.offset[j] = flat[k];
        k += 1;
    }
    for j in 0..p {
        params.cov.log_diag[j] = flat[k];
        k += 1;
    }
    params.cov.strict_lower.copy_from_slice(&flat[k..]);
}

struct PatternEntry {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    inverse: DMatrix<f64>,
    log_det: f64,
}

/// Per-batch cache of factorizations keyed by the observed index pattern.
/// Valid only while the parameters are fixed.
struct PatternCache<'a> {
    sigma: &'a DMatrix<f64>,
    entries: HashMap<Vec<usize>, PatternEntry>,
}

impl<'a> PatternCache<'a> {
    fn new(sigma: &'a DMatrix<f64>) -> Self {
        PatternCache {
            sigma,
            entries: HashMap::new(),
        }
    }

    fn get(&mut self, observed: &[usize]) -> Result<&PatternEntry> {
        if !self.entries.contains_key(observed) {
            let n = observed.len();
            let block = DMatrix::from_fn(n, n, |a, b| self.sigma[(observed[a], observed[b])]);
            let (chol, _) = cholesky_with_jitter(&block)?;
            let l = chol.l_dirty();
            let log_det = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            let inverse = chol.inverse();
            self.entries.insert(
                observed.to_vec(),
                PatternEntry {
                    chol,
                    inverse,
                    log_det,
                },
            );
        }
        Ok(self.entries.get(observed).unwrap())
    }
}

/// Summed negative log marginal likelihood over a batch. Rows without any
/// observation contribute zero.
pub fn loss(params: &ModelParams, batch: &[&SparseRow]) -> Result<f64> {
    let sigma = params.cov.materialize();
    let mut cache = PatternCache::new(&sigma);
    let mut total = 0.0;
    for row in batch {
        let part = partition_row(row);
        let p_o = part.p_observed();
        if p_o == 0 {
            continue;
        }
        let f = DVector::from_column_slice(&row.f);
        let mu = params.calibrate(&f)?;
        let entry = cache.get(part.observed_idx())?;
        let r = DVector::from_iterator(
            p_o,
            part.observed_idx()
                .iter()
                .map(|&j| row.y[j].unwrap() - mu[j]),
        );
        let alpha = entry.chol.solve(&r);
        total += 0.5 * (r.dot(&alpha) + entry.log_det + p_o as f64 * LN_2PI);
    }
    Ok(total)
}

/// Analytic gradient of [`loss`] with respect to the flattened parameters.
/// Returns `(loss, gradient)`.
pub fn loss_gradient(params: &ModelParams, batch: &[&SparseRow]) -> Result<(f64, Vec<f64>)> {
    let p = params.p();
    let sigma = params.cov.materialize();
    let mut cache = PatternCache::new(&sigma);

    let mut total = 0.0;
    let mut grad_b_matrix = DMatrix::zeros(p, p);
    let mut grad_offset = DVector::zeros(p);
    // accumulated d loss / d Sigma, scattered back to global indices
    let mut grad_sigma = DMatrix::zeros(p, p);

    for row in batch {
        let part = partition_row(row);
        let p_o = part.p_observed();
        if p_o == 0 {
            continue;
        }
        let f = DVector::from_column_slice(&row.f);
        let mu = params.calibrate(&f)?;
        let obs = part.observed_idx();
        let entry = cache.get(obs)?;
        let r = DVector::from_iterator(p_o, obs.iter().map(|&j| row.y[j].unwrap() - mu[j]));
        let alpha = entry.chol.solve(&r);
        total += 0.5 * (r.dot(&alpha) + entry.log_det + p_o as f64 * LN_2PI);

        // d loss / d mu_O = -alpha, scattered to global positions
        for (a, &j) in obs.iter().enumerate() {
            let d_mu = -alpha[a];
            grad_offset[j] += d_mu;
            for k in 0..p {
                grad_b_matrix[(k, j)] += f[k] * d_mu;
            }
        }

        // d loss / d Sigma_OO = (S^-1 - alpha alpha^T) / 2
        for (a, &ja) in obs.iter().enumerate() {
            for (b, &jb) in obs.iter().enumerate() {
                grad_sigma[(ja, jb)] += 0.5 * (entry.inverse[(a, b)] - alpha[a] * alpha[b]);
            }
        }
    }

    // Chain through Sigma = L L^T: dL = 2 * G * L for symmetric G, taking
    // only the lower triangle as free parameters.
    let l = params.cov.lower();
    let grad_l: DMatrix<f64> = 2.0 * &grad_sigma * &l;
    let mut grad = Vec::with_capacity(param_count(p));
    for i in 0..p {
        for j in 0..p {
            grad.push(grad_b_matrix[(i, j)]);
        }
    }
    grad.extend(grad_offset.iter());
    for i in 0..p {
        // diagonal is exp-parameterized
        grad.push(grad_l[(i, i)] * l[(i, i)]);
    }
    for i in 0..p {
        for j in 0..i {
            grad.push(grad_l[(i, j)]);
        }
    }
    Ok((total, grad))
}

/// Central finite-difference gradient of [`loss`], used by `grad_check` and
/// as an independent oracle in tests.
pub fn finite_difference_gradient(
    params: &ModelParams,
    batch: &[&SparseRow],
    h: f64,
) -> Result<Vec<f64>> {
    let mut work = params.clone();
    let base = flatten_params(params);
    let mut grad = vec![0.0; base.len()];
    let mut flat = base.clone();
    for k in 0..base.len() {
        flat[k] = base[k] + h;
        unflatten_params(&mut work, &flat);
        let up = loss(&work, batch)?;
        flat[k] = base[k] - h;
        unflatten_params(&mut work, &flat);
        let down = loss(&work, batch)?;
        flat[k] = base[k];
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, flat: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..flat.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            flat[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Fit theta on an (already standardized) dataset.
///
/// Rows are shuffled each epoch by a seeded generator, the last partial
/// batch is kept, and the whole run is deterministic given
/// `(data, config, init)`. Returns the final parameters and the per-epoch
/// mean loss (per contributing row).
pub fn train(
    data: &Dataset,
    config: &TrainConfig,
    init: &ModelParams,
) -> Result<(ModelParams, Vec<f64>)> {
    config.validate()?;
    let usable = data.rows.iter().filter(|r| r.observed_count() > 0).count();
    if usable == 0 {
        return Err(QcompError::InvalidInput(
            "training data has no row with an observed activity".into(),
        ));
    }

    let mut params = init.clone();
    let mut flat = flatten_params(&params);
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..data.rows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    if config.grad_check {
        let n = data.rows.len().min(config.batch_size).min(64);
        let batch: Vec<&SparseRow> = data.rows[..n].iter().collect();
        let (_, analytic) = loss_gradient(&params, &batch)?;
        let numeric = finite_difference_gradient(&params, &batch, 1e-5)?;
        let scale = analytic
            .iter()
            .map(|g| g.abs())
            .fold(1.0_f64, f64::max);
        for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / scale;
            if rel > 1e-4 {
                return Err(QcompError::Numerical(format!(
                    "gradient check failed at parameter {k}: analytic {a}, numeric {n}"
                )));
            }
        }
    }

    for epoch in 0..config.epochs {
        let lr = config.initial_lr
            * config
                .lr_decay_factor
                .powi((epoch / config.decay_every_epochs) as i32);
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SparseRow> = chunk.iter().map(|&i| &data.rows[i]).collect();
            let (batch_loss, grad) = loss_gradient(&params, &batch)?;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(QcompError::Numerical(format!(
                    "non-finite loss or gradient in epoch {epoch}, batch {batch_idx}"
                )));
            }
            epoch_loss += batch_loss;
            match config.optimizer {
                OptimizerKind::AdaptiveMoment => adam.step(&mut flat, &grad, lr),
                OptimizerKind::PlainSgd => {
                    for k in 0..flat.len() {
                        flat[k] -= lr * grad[k];
                    }
                }
            }
            unflatten_params(&mut params, &flat);
        }
        history.push(epoch_loss / usable as f64);
    }

    params.meta = TrainingMeta {
        epochs: config.epochs,
        seed: config.seed,
        final_loss: *history.last().unwrap(),
    };
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, InitMode};
    use crate::schema::{AssaySchema, SparseRow};

    fn single_row_dataset() -> Dataset {
        let schema = AssaySchema::new(vec!["a".into()]).unwrap();
        let rows = vec![SparseRow {
            compound_id: "c1".into(),
            y: vec![Some(0.0)],
            f: vec![0.0],
            sigma_f: None,
        }];
        Dataset::new(schema, rows).unwrap()
    }

    #[test]
    fn loss_of_standard_normal_at_mean() {
        let data = single_row_dataset();
        let params = init_params(&data, 0, InitMode::Identity).unwrap();
        let batch: Vec<&SparseRow> = data.rows.iter().collect();
        let l = loss(&params, &batch).unwrap();
        assert!((l - 0.5 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn loss_is_additive_over_rows() {
        let schema = AssaySchema::new(vec!["a".into()]).unwrap();
        let row = SparseRow {
            compound_id: "c1".into(),
            y: vec![Some(0.7)],
            f: vec![0.2],
            sigma_f: None,
        };
        let mut row2 = row.clone();
        row2.compound_id = "c2".into();
        let data = Dataset::new(schema, vec![row.clone(), row2.clone()]).unwrap();
        let params = init_params(&data, 0, InitMode::Identity).unwrap();
        let single = loss(&params, &[&row]).unwrap();
        let double = loss(&params, &[&row, &row2]).unwrap();
        assert!((double - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn all_missing_row_contributes_zero() {
        let schema = AssaySchema::new(vec!["a".into()]).unwrap();
        let empty = SparseRow {
            compound_id: "c1".into(),
            y: vec![None],
            f: vec![0.3],
            sigma_f: None,
        };
        let data = Dataset::new(schema, vec![empty.clone()]).unwrap();
        let params = init_params(&data, 0, InitMode::Identity).unwrap();
        assert_eq!(loss(&params, &[&empty]).unwrap(), 0.0);
    }

    #[test]
    fn offset_gradient_one_dim() {
        // single row, y - mu = r, Sigma = s^2: d loss / d b0 = -r / s^2
        let schema = AssaySchema::new(vec!["a".into()]).unwrap();
        let row = SparseRow {
            compound_id: "c1".into(),
            y: vec![Some(1.5)],
            f: vec![0.0],
            sigma_f: None,
        };
        let data = Dataset::new(schema, vec![row.clone()]).unwrap();
        let mut params = init_params(&data, 0, InitMode::Identity).unwrap();
        params.cov.log_diag[0] = 0.5_f64.ln(); // s = 0.5, s^2 = 0.25
        let (_, grad) = loss_gradient(&params, &[&row]).unwrap();
        // layout: [B(1), b(1), log_diag(1)]
        let db = grad[1];
        assert!((db - (-1.5 / 0.25)).abs() < 1e-10, "{db}");

        // stationary in the mean at the data
        let mut at_mean = row.clone();
        at_mean.y[0] = Some(0.0);
        let (_, grad0) = loss_gradient(&params, &[&at_mean]).unwrap();
        assert!(grad0[1].abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        use rand::Rng;
        let p = 4;
        let schema =
            AssaySchema::new((0..p).map(|j| format!("a{j}")).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<SparseRow> = (0..12)
            .map(|i| SparseRow {
                compound_id: format!("c{i}"),
                y: (0..p)
                    .map(|_| {
                        if rng.random_bool(0.7) {
                            Some(rng.random_range(-2.0..2.0))
                        } else {
                            None
                        }
                    })
                    .collect(),
                f: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                sigma_f: None,
            })
            .collect();
        let data = Dataset::new(schema, rows).unwrap();
        let mut params = init_params(&data, 5, InitMode::Random).unwrap();
        for v in params.cov.strict_lower.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        let batch: Vec<&SparseRow> = data.rows.iter().collect();
        let (_, analytic) = loss_gradient(&params, &batch).unwrap();
        let numeric = finite_difference_gradient(&params, &batch, 1e-5).unwrap();
        let scale = analytic.iter().map(|g| g.abs()).fold(1.0_f64, f64::max);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(
                (a - n).abs() / scale < 1e-5,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let data = single_row_dataset();
        let params = init_params(&data, 0, InitMode::Identity).unwrap();
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&data, &config, &params).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let schema = AssaySchema::new(vec!["a".into(), "b".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let rows: Vec<SparseRow> = (0..40)
            .map(|i| SparseRow {
                compound_id: format!("c{i}"),
                y: vec![
                    Some(rng.random_range(-1.0..1.0)),
                    if i % 3 == 0 {
                        None
                    } else {
                        Some(rng.random_range(-1.0..1.0))
                    },
                ],
                f: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                sigma_f: None,
            })
            .collect();
        let data = Dataset::new(schema, rows).unwrap();
        let init = init_params(&data, 1, InitMode::Random).unwrap();
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let (pa, ha) = train(&data, &config, &init).unwrap();
        let (pb, hb) = train(&data, &config, &init).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(pa, pb);
    }
}
