//! Release gate: ten numbered checks covering oracle equivalence, gradient
//! correctness, parameter recovery, variance bookkeeping, calibration,
//! benchmark direction, planner behavior, composite uncertainty, and CLI
//! determinism. Each test prints a `criterion N ... PASS` line; tolerances
//! and runtime bounds are pinned here.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qcomp::completion::{complete_row, gain_of_certainty};
use qcomp::evaluation::{
    column_mask_benchmark, generate_synthetic, group_mask_benchmark, Missingness, SyntheticSpec,
};
use qcomp::gaussian::{conditional, extract_blocks, CovarianceFactor};
use qcomp::model::{ModelParams, TrainingMeta};
use qcomp::planner::greedy_plan;
use qcomp::schema::{MaskPartition, SparseRow, Standardization};
use qcomp::train::{
    finite_difference_gradient, flatten_params, loss_gradient, train, unflatten_params,
    TrainConfig,
};

/// Well-conditioned random covariance: A Aᵀ / p + I/2 scaled to unit-ish
/// diagonal spread.
fn random_covariance(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5
}

fn exact_model(spec: &SyntheticSpec) -> ModelParams {
    let p = spec.p;
    let names = match &spec.assays {
        Some(n) => n.clone(),
        None => (0..p).map(|j| format!("a{j}")).collect(),
    };
    let b = match &spec.b_matrix {
        Some(rows) => DMatrix::from_fn(p, p, |i, j| rows[i][j]),
        None => DMatrix::identity(p, p),
    };
    let offset = match &spec.offset {
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::zeros(p),
    };
    let sigma = DMatrix::from_fn(p, p, |i, j| spec.sigma[i][j]);
    ModelParams {
        assay_names: names,
        b_matrix: b,
        offset,
        cov: CovarianceFactor::from_covariance(&sigma).unwrap(),
        standardization: Standardization::identity(p),
        meta: TrainingMeta {
            epochs: 0,
            seed: spec.seed,
            final_loss: 0.0,
        },
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rel_err(actual: f64, reference: f64) -> f64 {
    (actual - reference).abs() / reference.abs().max(1.0)
}

#[test]
fn criterion_01_oracle_equivalence() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rows_checked = 0usize;
    for p in 2..=6usize {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + p as u64);
        let sigma = random_covariance(p, &mut rng);
        let spec = SyntheticSpec {
            p,
            n: 200,
            seed: 7 * p as u64,
            assays: None,
            b_matrix: None,
            offset: Some((0..p).map(|j| 0.1 * j as f64).collect()),
            sigma: to_rows(&sigma),
            missing: Missingness::Uniform(0.4),
            sigma_f: None,
        };
        let (data, oracles) = generate_synthetic(&spec).unwrap();
        let params = exact_model(&spec);
        for (row, oracle) in data.rows.iter().zip(&oracles) {
            rows_checked += 1;
            let res = complete_row(&params, row).unwrap();
            assert_eq!(res.partition.missing_idx(), &oracle.missing_idx[..]);
            for a in 0..oracle.missing_idx.len() {
                worst = worst.max(rel_err(res.mu_tilde[a], oracle.cond_mean[a]));
                for b in 0..oracle.missing_idx.len() {
                    worst =
                        worst.max(rel_err(res.sigma_tilde[(a, b)], oracle.cond_cov[(a, b)]));
                }
            }
        }
    }
    assert_eq!(rows_checked, 1000);
    assert!(worst < 1e-8, "worst relative deviation {worst:e}");
    assert!(start.elapsed() < Duration::from_secs(10));
    println!("criterion 1 (oracle equivalence): PASS (worst rel err {worst:.2e})");
}

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for p in [2usize, 3, 5] {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * p as u64 + seed);
            let sigma = random_covariance(p, &mut rng);
            let spec = SyntheticSpec {
                p,
                n: 8,
                seed: 31 + seed,
                assays: None,
                b_matrix: None,
                offset: None,
                sigma: to_rows(&sigma),
                missing: Missingness::Uniform(0.3),
                sigma_f: None,
            };
            let (data, _) = generate_synthetic(&spec).unwrap();
            let mut params = exact_model(&spec);
            // move off the generating point so no gradient component vanishes
            let mut flat = flatten_params(&params);
            for v in flat.iter_mut() {
                *v += rng.random_range(-0.05..0.05);
            }
            unflatten_params(&mut params, &flat);

            let batch: Vec<&SparseRow> = data.rows.iter().collect();
            let (_, analytic) = loss_gradient(&params, &batch).unwrap();
            let numeric = finite_difference_gradient(&params, &batch, 1e-5).unwrap();
            for (a, n) in analytic.iter().zip(&numeric) {
                worst = worst.max(rel_err(*a, *n));
            }
        }
    }
    assert!(worst < 1e-5, "worst gradient relative error {worst:e}");
    assert!(start.elapsed() < Duration::from_secs(60));
    println!("criterion 2 (gradient correctness): PASS (worst rel err {worst:.2e})");
}

#[test]
fn criterion_03_parameter_recovery() {
    let start = Instant::now();
    let p = 4usize;
    let b_true = DMatrix::from_row_slice(
        p,
        p,
        &[
            1.0, 0.15, 0.0, 0.0, //
            0.0, 1.0, -0.15, 0.0, //
            0.0, 0.0, 1.0, 0.1, //
            0.1, 0.0, 0.0, 1.0,
        ],
    );
    let sigma_true = DMatrix::from_row_slice(
        p,
        p,
        &[
            1.0, 0.5, 0.3, 0.2, //
            0.5, 1.2, 0.4, 0.3, //
            0.3, 0.4, 0.9, 0.25, //
            0.2, 0.3, 0.25, 1.1,
        ],
    );
    let spec = SyntheticSpec {
        p,
        n: 50_000,
        seed: 42,
        assays: None,
        b_matrix: Some(to_rows(&b_true)),
        offset: Some(vec![0.2, -0.1, 0.3, 0.0]),
        sigma: to_rows(&sigma_true),
        missing: Missingness::Uniform(0.4),
        sigma_f: None,
    };
    let (data, _) = generate_synthetic(&spec).unwrap();

    // the small-dataset recipe: enough optimizer steps to actually converge
    let config = TrainConfig {
        epochs: 50,
        batch_size: 1024,
        initial_lr: 0.01,
        lr_decay_factor: 0.5,
        decay_every_epochs: 20,
        seed: 9,
        ..TrainConfig::default()
    };
    let init = qcomp::model::init_params(&data, config.seed, qcomp::model::InitMode::Random)
        .unwrap();
    let (fitted, _history) = train(&data, &config, &init).unwrap();

    let sigma_hat = fitted.cov.materialize();
    let frob = (&sigma_hat - &sigma_true).norm() / sigma_true.norm();
    let b_err = (&fitted.b_matrix - &b_true).amax();
    assert!(frob <= 0.05, "covariance Frobenius error {frob:.4}");
    assert!(b_err <= 0.1, "calibration matrix max-abs error {b_err:.4}");
    assert!(start.elapsed() < Duration::from_secs(300));
    println!(
        "criterion 3 (parameter recovery): PASS (sigma frob {frob:.4}, B max-abs {b_err:.4})"
    );
}

#[test]
fn criterion_04_variance_decomposition() {
    let p = 8usize;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let sigma = random_covariance(p, &mut rng);
    let cov = CovarianceFactor::from_covariance(&sigma).unwrap();
    let sigma = cov.materialize();
    let mu = DVector::zeros(p);
    let spec = SyntheticSpec {
        p,
        n: 1,
        seed: 0,
        assays: None,
        b_matrix: None,
        offset: None,
        sigma: to_rows(&sigma),
        missing: Missingness::Uniform(0.0),
        sigma_f: None,
    };
    let params = exact_model(&spec);

    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let mask: Vec<bool> = (0..p).map(|_| rng.random_range(0.0..1.0) < 0.5).collect();
        let part = MaskPartition::from_mask(&mask);
        if part.p_missing() == 0 {
            continue;
        }
        let goc = gain_of_certainty(&params, &part).unwrap();
        let pg = extract_blocks(&mu, &sigma, &part);
        let y_o = DVector::zeros(part.p_observed());
        let (_, cond_cov) = conditional(&pg, &y_o).unwrap();
        for (a, &j) in part.missing_idx().iter().enumerate() {
            worst = worst.max((goc[a] + cond_cov[(a, a)] - sigma[(j, j)]).abs());
        }
    }
    assert!(worst < 1e-10, "worst decomposition residual {worst:e}");
    println!("criterion 4 (variance decomposition): PASS (worst abs err {worst:.2e})");
}

#[test]
fn criterion_05_uncertainty_calibration() {
    let p = 4usize;
    let sigma = DMatrix::from_row_slice(
        p,
        p,
        &[
            1.0, 0.6, 0.3, 0.2, //
            0.6, 1.0, 0.4, 0.3, //
            0.3, 0.4, 1.0, 0.5, //
            0.2, 0.3, 0.5, 1.0,
        ],
    );
    let spec = SyntheticSpec {
        p,
        n: 10_000,
        seed: 55,
        assays: None,
        b_matrix: None,
        offset: None,
        sigma: to_rows(&sigma),
        missing: Missingness::Uniform(0.0),
        sigma_f: None,
    };
    let (data, oracles) = generate_synthetic(&spec).unwrap();
    let params = exact_model(&spec);

    // fixed pattern: assays 0 and 1 hidden, 2 and 3 observed
    let hidden = [0usize, 1];
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); hidden.len()];
    let mut predicted_var = vec![0.0f64; hidden.len()];
    for (row, oracle) in data.rows.iter().zip(&oracles) {
        let mut masked = row.clone();
        for &j in &hidden {
            masked.y[j] = None;
        }
        let res = complete_row(&params, &masked).unwrap();
        for (a, &j) in hidden.iter().enumerate() {
            residuals[a].push(oracle.y_true[j] - res.mu_tilde[a]);
            predicted_var[a] = res.sigma_tilde[(a, a)];
        }
    }
    for (a, sample) in residuals.iter().enumerate() {
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        let var = sample.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let rel = (var - predicted_var[a]).abs() / predicted_var[a];
        assert!(
            rel < 0.05,
            "assay {a}: empirical {var:.4} vs predicted {:.4}",
            predicted_var[a]
        );
    }
    println!("criterion 5 (uncertainty calibration): PASS");
}

#[test]
fn criterion_06_benchmark_direction() {
    let p = 4usize;
    let mut sigma = DMatrix::from_element(p, p, 0.6);
    sigma.fill_diagonal(1.0);
    let spec = SyntheticSpec {
        p,
        n: 4000,
        seed: 66,
        assays: None,
        b_matrix: None,
        offset: None,
        sigma: to_rows(&sigma),
        missing: Missingness::Uniform(0.3),
        sigma_f: None,
    };
    let (data, _) = generate_synthetic(&spec).unwrap();
    let params = exact_model(&spec);
    let report = column_mask_benchmark(&params, &data, None).unwrap();

    let mut qcomp_sum = 0.0;
    let mut base_sum = 0.0;
    for score in &report.scores {
        let q = score.qcomp.value().expect("qcomp r2 defined");
        let b = score.base.value().expect("base r2 defined");
        assert!(
            q >= b - 0.01,
            "{}: qcomp {q:.4} fell more than 0.01 below base {b:.4}",
            score.assay
        );
        qcomp_sum += q;
        base_sum += b;
    }
    assert!(
        qcomp_sum > base_sum,
        "mean qcomp r2 not above base ({qcomp_sum:.4} vs {base_sum:.4})"
    );
    println!(
        "criterion 6 (benchmark direction): PASS (mean qcomp {:.4} vs base {:.4})",
        qcomp_sum / p as f64,
        base_sum / p as f64
    );
}

#[test]
fn criterion_07_group_mask_degradation() {
    let p = 4usize;
    // assays 0 and 1 nearly redundant; everything else weakly coupled
    let sigma = DMatrix::from_row_slice(
        p,
        p,
        &[
            1.0, 0.95, 0.2, 0.2, //
            0.95, 1.0, 0.2, 0.2, //
            0.2, 0.2, 1.0, 0.2, //
            0.2, 0.2, 0.2, 1.0,
        ],
    );
    let zero_b = vec![vec![0.0; p]; p];
    let spec = SyntheticSpec {
        p,
        n: 4000,
        seed: 77,
        assays: None,
        b_matrix: Some(zero_b),
        offset: None,
        sigma: to_rows(&sigma),
        missing: Missingness::Uniform(0.0),
        sigma_f: None,
    };
    let (data, _) = generate_synthetic(&spec).unwrap();
    let params = exact_model(&spec);

    let column = column_mask_benchmark(&params, &data, None).unwrap();
    let grouped = group_mask_benchmark(&params, &data, &[vec![0, 1]], None).unwrap();
    let col_r2 = column.scores[0].qcomp.value().unwrap();
    let grp_r2 = grouped.scores[0].qcomp.value().unwrap();
    assert!(
        col_r2 - grp_r2 >= 0.1,
        "degradation only {:.4} (column {col_r2:.4}, group {grp_r2:.4})",
        col_r2 - grp_r2
    );
    println!(
        "criterion 7 (group-mask degradation): PASS (column {col_r2:.4} vs group {grp_r2:.4})"
    );
}

#[test]
fn criterion_08_planner_correctness() {
    let p = 8usize;
    let target = 0usize;
    let candidates: Vec<usize> = (1..p).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_gap = 0.0f64;
    for trial in 0..100 {
        let sigma = random_covariance(p, &mut rng);
        let spec = SyntheticSpec {
            p,
            n: 1,
            seed: trial,
            assays: None,
            b_matrix: None,
            offset: None,
            sigma: to_rows(&sigma),
            missing: Missingness::Uniform(0.0),
            sigma_f: None,
        };
        let params = exact_model(&spec);

        // brute-force single-step argmax
        let mut best_j = usize::MAX;
        let mut best_goc = f64::NEG_INFINITY;
        for &j in &candidates {
            let mut mask = vec![false; p];
            mask[j] = true;
            let part = MaskPartition::from_mask(&mask);
            let goc = gain_of_certainty(&params, &part).unwrap();
            let pos = part.missing_idx().iter().position(|&m| m == target).unwrap();
            if goc[pos] > best_goc {
                best_goc = goc[pos];
                best_j = j;
            }
        }

        let plan = greedy_plan(&params, target, &candidates, &[], 0.0).unwrap();
        assert_eq!(plan[0].assay_index, best_j, "trial {trial}: first pick");

        // telescoping: accumulated GOC equals the all-candidates GOC
        let mut mask = vec![false; p];
        for &j in &candidates {
            mask[j] = true;
        }
        let part = MaskPartition::from_mask(&mask);
        let full = gain_of_certainty(&params, &part).unwrap()[0];
        let acc = plan.last().unwrap().accumulated_goc;
        worst_gap = worst_gap.max((acc - full).abs());
    }
    assert!(worst_gap < 1e-10, "telescoping gap {worst_gap:e}");
    println!("criterion 8 (planner correctness): PASS (worst telescoping gap {worst_gap:.2e})");
}

#[test]
fn criterion_09_composite_uncertainty() {
    // bivariate hand example: B = I, b = 0, unit variances, rho = 0.8,
    // sigma_f = (0.5, 0), assay 1 observed -> composite variance 0.61
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
    let spec = SyntheticSpec {
        p: 2,
        n: 1,
        seed: 0,
        assays: None,
        b_matrix: None,
        offset: None,
        sigma: to_rows(&sigma),
        missing: Missingness::Uniform(0.0),
        sigma_f: None,
    };
    let params = exact_model(&spec);
    let row = SparseRow {
        compound_id: "c".into(),
        y: vec![None, Some(0.3)],
        f: vec![0.1, -0.2],
        sigma_f: Some(vec![0.5, 0.0]),
    };
    let res = complete_row(&params, &row).unwrap();
    let composite = res.composite_var.as_ref().expect("composite variance")[0];
    assert!(
        (composite - 0.61).abs() < 1e-12,
        "composite variance {composite} != 0.61"
    );
    println!("criterion 9 (composite uncertainty): PASS ({composite})");
}

#[test]
fn criterion_10_cli_determinism() {
    use std::process::Command;

    let bin = env!("CARGO_BIN_EXE_qcomp");
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);

    let spec_toml = r#"
p = 3
n = 400
seed = 12
sigma = [[1.0, 0.5, 0.3], [0.5, 1.0, 0.4], [0.3, 0.4, 1.0]]

[missing]
uniform = 0.3
"#;
    std::fs::write(path("spec.toml"), spec_toml).unwrap();

    let run = |threads: &str| {
        let suffix = format!("t{threads}");
        let ok = |out: std::process::Output, what: &str| {
            assert!(
                out.status.success(),
                "{what} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        };
        ok(
            Command::new(bin)
                .args(["--threads", threads, "synth"])
                .arg("--spec")
                .arg(path("spec.toml"))
                .arg("--out")
                .arg(path(&format!("data_{suffix}.csv")))
                .arg("--oracle")
                .arg(path(&format!("oracle_{suffix}.csv")))
                .arg("--schema-out")
                .arg(path(&format!("schema_{suffix}.toml")))
                .output()
                .unwrap(),
            "synth",
        );
        ok(
            Command::new(bin)
                .args(["--threads", threads, "train", "--seed", "3"])
                .args(["--epochs", "3", "--batch-size", "100"])
                .arg("--data")
                .arg(path(&format!("data_{suffix}.csv")))
                .arg("--schema")
                .arg(path(&format!("schema_{suffix}.toml")))
                .arg("--out")
                .arg(path(&format!("model_{suffix}.json")))
                .output()
                .unwrap(),
            "train",
        );
        ok(
            Command::new(bin)
                .args(["--threads", threads, "complete"])
                .arg("--model")
                .arg(path(&format!("model_{suffix}.json")))
                .arg("--data")
                .arg(path(&format!("data_{suffix}.csv")))
                .arg("--schema")
                .arg(path(&format!("schema_{suffix}.toml")))
                .arg("--out")
                .arg(path(&format!("completed_{suffix}.csv")))
                .output()
                .unwrap(),
            "complete",
        );
        ok(
            Command::new(bin)
                .args(["--threads", threads, "plan", "--target", "a0"])
                .arg("--model")
                .arg(path(&format!("model_{suffix}.json")))
                .arg("--out")
                .arg(path(&format!("plan_{suffix}.csv")))
                .output()
                .unwrap(),
            "plan",
        );
    };
    run("1");
    run("4");

    for artifact in ["data", "oracle", "schema", "model", "completed", "plan"] {
        let ext = if artifact == "model" {
            "json"
        } else if artifact == "schema" {
            "toml"
        } else {
            "csv"
        };
        let a = std::fs::read(path(&format!("{artifact}_t1.{ext}"))).unwrap();
        let b = std::fs::read(path(&format!("{artifact}_t4.{ext}"))).unwrap();
        assert_eq!(a, b, "{artifact} artifact differs between thread counts");
    }
    println!("criterion 10 (cli determinism): PASS");
}
