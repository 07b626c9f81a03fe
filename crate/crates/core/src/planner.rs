//! Greedy experiment sequencing: order candidate assays so each step buys
//! the largest gain of certainty for the target assay.

use crate::completion::gain_of_certainty;
use crate::error::{QcompError, Result};
use crate::model::ModelParams;
use crate::schema::MaskPartition;

/// One greedy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub assay_index: usize,
    pub assay_name: String,
    /// GOC added by this measurement, standardized units.
    pub marginal_goc: f64,
    /// Running total along the plan.
    pub accumulated_goc: f64,
}

fn goc_of_target(params: &ModelParams, target: usize, observed: &[bool]) -> Result<f64> {
    let part = MaskPartition::from_mask(observed);
    let goc = gain_of_certainty(params, &part)?;
    let pos = part
        .missing_idx()
        .iter()
        .position(|&j| j == target)
        .expect("target stays missing");
    Ok(goc[pos])
}

/// Build the greedy measurement sequence for `target`.
///
/// Each step picks the remaining candidate whose addition to the observed
/// set maximizes the target's GOC; ties within 1e-12 go to the lowest assay
/// index. The plan stops when the best marginal gain falls below
/// `stop_threshold` or the candidates run out.
pub fn greedy_plan(
    params: &ModelParams,
    target: usize,
    candidates: &[usize],
    already_observed: &[usize],
    stop_threshold: f64,
) -> Result<Vec<PlanStep>> {
    let p = params.p();
    if target >= p {
        return Err(QcompError::InvalidInput(format!(
            "target index {target} out of range (p = {p})"
        )));
    }
    if already_observed.contains(&target) {
        return Err(QcompError::InvalidInput(
            "target assay is already observed".into(),
        ));
    }
    if candidates.contains(&target) {
        return Err(QcompError::InvalidInput(
            "target assay cannot be a candidate".into(),
        ));
    }
    if candidates.iter().any(|c| already_observed.contains(c)) {
        return Err(QcompError::InvalidInput(
            "candidates and already-observed sets overlap".into(),
        ));
    }
    if candidates.iter().chain(already_observed).any(|&j| j >= p) {
        return Err(QcompError::InvalidInput("assay index out of range".into()));
    }
    if stop_threshold < 0.0 {
        return Err(QcompError::InvalidInput(
            "stop_threshold must be >= 0".into(),
        ));
    }

    let mut observed = vec![false; p];
    for &j in already_observed {
        observed[j] = true;
    }
    // sorted working copy so the outcome cannot depend on input order
    let mut remaining: Vec<usize> = candidates.to_vec();
    remaining.sort_unstable();
    remaining.dedup();

    let mut current = goc_of_target(params, target, &observed)?;
    let mut plan = Vec::new();

    while !remaining.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for &cand in &remaining {
            observed[cand] = true;
            let goc = goc_of_target(params, target, &observed)?;
            observed[cand] = false;
            let improves = match best {
                None => true,
                Some((_, best_goc)) => goc > best_goc + 1e-12,
            };
            if improves {
                best = Some((cand, goc));
            }
        }
        let (chosen, new_goc) = best.expect("non-empty candidate set");
        let marginal = new_goc - current;
        if marginal < stop_threshold {
            break;
        }
        observed[chosen] = true;
        remaining.retain(|&c| c != chosen);
        current = new_goc;
        // accumulated_goc is relative to the starting observed set
        let acc = plan
            .last()
            .map(|s: &PlanStep| s.accumulated_goc)
            .unwrap_or(0.0)
            + marginal;
        plan.push(PlanStep {
            assay_index: chosen,
            assay_name: params.assay_names[chosen].clone(),
            marginal_goc: marginal,
            accumulated_goc: acc,
        });
    }
    Ok(plan)
}

/// Plan as CSV: rank, assay, marginal and accumulated GOC, and a blank cost
/// column for downstream tooling.
pub fn write_plan_csv<W: std::io::Write>(plan: &[PlanStep], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "assay", "marginal_goc", "accumulated_goc", "cost"])?;
    for (rank, step) in plan.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            step.assay_name.clone(),
            format!("{}", step.marginal_goc),
            format!("{}", step.accumulated_goc),
            String::new(),
        ])?;
    }
    w.flush()
        .map_err(|e| QcompError::InvalidInput(format!("write plan: {e}")))?;
    Ok(())
}

/// Human-readable table.
pub fn format_plan(plan: &[PlanStep]) -> String {
    let mut out = String::from("rank  assay                     marginal_goc  accumulated_goc\n");
    for (rank, step) in plan.iter().enumerate() {
        out.push_str(&format!(
            "{:<5} {:<25} {:>12.6}  {:>15.6}\n",
            rank + 1,
            step.assay_name,
            step.marginal_goc,
            step.accumulated_goc
        ));
    }
    if plan.is_empty() {
        out.push_str("(empty plan: no candidate clears the threshold)\n");
    }
    out
}
