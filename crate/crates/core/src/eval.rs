//! Trial evaluation: equal error rate, minimum detection cost
//! (normalized old NIST DCF), and DET operating points. The decision
//! rule is accept iff score >= threshold.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::vectorstore::{ScoreSet, Trial, TrialLabel};

/// Detection-cost parameters. Defaults: C_miss = 10, C_FA = 1,
/// P_target = 0.01.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            c_miss: 10.0,
            c_fa: 1.0,
            p_target: 0.01,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_miss > 0.0) || !(self.c_fa > 0.0) {
            return Err(Error::invalid("costs must be positive"));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::invalid("p_target must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Summary metrics over one trial set.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub min_dcf_threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// One threshold with its miss and false-alarm rates.
#[derive(Debug, Clone, Copy)]
struct OperatingPoint {
    threshold: f64,
    p_miss: f64,
    p_fa: f64,
}

/// Operating points at every distinct score plus one threshold above the
/// maximum (reject-all). The lowest threshold is accept-all.
fn operating_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<OperatingPoint>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::invalid(
            "need at least one target and one nontarget trial",
        ));
    }
    if targets
        .iter()
        .chain(nontargets.iter())
        .any(|s| !s.is_finite())
    {
        return Err(Error::invalid("scores must be finite"));
    }
    let mut sorted_t = targets.to_vec();
    let mut sorted_n = nontargets.to_vec();
    sorted_t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted_n.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<f64> = sorted_t.iter().chain(sorted_n.iter()).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    thresholds.push(thresholds[thresholds.len() - 1] + 1.0);

    let points = thresholds
        .into_iter()
        .map(|t| {
            let missed = sorted_t.partition_point(|&s| s < t);
            let accepted_nt = sorted_n.len() - sorted_n.partition_point(|&s| s < t);
            OperatingPoint {
                threshold: t,
                p_miss: missed as f64 / sorted_t.len() as f64,
                p_fa: accepted_nt as f64 / sorted_n.len() as f64,
            }
        })
        .collect();
    Ok(points)
}

/// Equal error rate with linear interpolation between the two operating
/// points bracketing the miss/false-alarm crossing. Returns (eer,
/// threshold).
pub fn compute_eer(targets: &[f64], nontargets: &[f64]) -> Result<(f64, f64)> {
    let points = operating_points(targets, nontargets)?;
    // p_miss - p_fa is nondecreasing in the threshold, from -p_fa(min) < 0
    // to +1 at reject-all.
    let cross = points
        .iter()
        .position(|p| p.p_miss - p.p_fa >= 0.0)
        .expect("sweep always reaches p_miss = 1, p_fa = 0");
    let hi = points[cross];
    if hi.p_miss - hi.p_fa == 0.0 {
        return Ok((hi.p_miss, hi.threshold));
    }
    let lo = points[cross - 1];
    let d0 = lo.p_fa - lo.p_miss;
    let d1 = hi.p_fa - hi.p_miss;
    let alpha = d0 / (d0 - d1);
    let eer = lo.p_miss + alpha * (hi.p_miss - lo.p_miss);
    let threshold = lo.threshold + alpha * (hi.threshold - lo.threshold);
    Ok((eer, threshold))
}

/// Minimum normalized detection cost over all thresholds, ties broken
/// toward the lower threshold. Returns (min_dcf, threshold).
pub fn compute_min_dcf(
    targets: &[f64],
    nontargets: &[f64],
    params: &CostParams,
) -> Result<(f64, f64)> {
    params.validate()?;
    let points = operating_points(targets, nontargets)?;
    let norm = (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
    let mut best: Option<(f64, f64)> = None;
    for p in &points {
        let cost = params.c_miss * params.p_target * p.p_miss
            + params.c_fa * (1.0 - params.p_target) * p.p_fa;
        let normalized = cost / norm;
        if best.map(|(b, _)| normalized < b).unwrap_or(true) {
            best = Some((normalized, p.threshold));
        }
    }
    Ok(best.expect("at least one operating point"))
}

/// Distinct (P_fa, P_miss) operating points, P_fa nonincreasing as the
/// threshold rises.
pub fn det_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<(f64, f64)>> {
    let points = operating_points(targets, nontargets)?;
    let mut out: Vec<(f64, f64)> = points.iter().map(|p| (p.p_fa, p.p_miss)).collect();
    out.dedup();
    Ok(out)
}

/// Joins scores with trial labels. Unlabeled trials and label/score
/// mismatches are rejected.
pub fn split_by_label(scores: &ScoreSet, trials: &[Trial]) -> Result<(Vec<f64>, Vec<f64>)> {
    use std::collections::HashMap;
    let mut by_pair: HashMap<(&str, &str), f64> = HashMap::new();
    for (e, t, s) in scores.entries() {
        by_pair.insert((e.as_str(), t.as_str()), *s);
    }
    let mut targets = Vec::new();
    let mut nontargets = Vec::new();
    for trial in trials {
        let score = by_pair
            .get(&(trial.enrol_id.as_str(), trial.test_id.as_str()))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no score for trial ({}, {})",
                    trial.enrol_id, trial.test_id
                ))
            })?;
        match trial.label {
            TrialLabel::Target => targets.push(*score),
            TrialLabel::Nontarget => nontargets.push(*score),
            TrialLabel::Unknown => {
                return Err(Error::invalid(format!(
                    "trial ({}, {}) has no label",
                    trial.enrol_id, trial.test_id
                )))
            }
        }
    }
    Ok((targets, nontargets))
}

/// Full evaluation of a score set against labeled trials.
pub fn evaluate(scores: &ScoreSet, trials: &[Trial], params: &CostParams) -> Result<EvalReport> {
    let (targets, nontargets) = split_by_label(scores, trials)?;
    let (eer, eer_threshold) = compute_eer(&targets, &nontargets)?;
    let (min_dcf, min_dcf_threshold) = compute_min_dcf(&targets, &nontargets, params)?;
    Ok(EvalReport {
        eer,
        eer_threshold,
        min_dcf,
        min_dcf_threshold,
        n_target: targets.len(),
        n_nontarget: nontargets.len(),
    })
}

/// Brute-force reference used by tests and the acceptance suite:
/// evaluates miss/false-alarm by direct counting at every candidate
/// threshold, independent of the sweep above.
pub mod oracle {
    use super::CostParams;

    fn rates_at(targets: &[f64], nontargets: &[f64], t: f64) -> (f64, f64) {
        let miss = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        let fa = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        (miss, fa)
    }

    fn candidate_thresholds(targets: &[f64], nontargets: &[f64]) -> Vec<f64> {
        let mut ts: Vec<f64> = targets.iter().chain(nontargets.iter()).copied().collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup();
        let last = ts[ts.len() - 1] + 1.0;
        ts.push(last);
        ts
    }

    pub fn eer(targets: &[f64], nontargets: &[f64]) -> f64 {
        let ts = candidate_thresholds(targets, nontargets);
        let mut prev: Option<(f64, f64)> = None;
        for &t in &ts {
            let (m, f) = rates_at(targets, nontargets, t);
            if m - f >= 0.0 {
                if m - f == 0.0 {
                    return m;
                }
                let (m0, f0) = prev.expect("first point always has p_miss < p_fa");
                let d0 = f0 - m0;
                let d1 = f - m;
                let alpha = d0 / (d0 - d1);
                return m0 + alpha * (m - m0);
            }
            prev = Some((m, f));
        }
        unreachable!("sweep reaches p_miss = 1, p_fa = 0")
    }

    pub fn min_dcf(targets: &[f64], nontargets: &[f64], params: &CostParams) -> f64 {
        let norm = (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
        candidate_thresholds(targets, nontargets)
            .iter()
            .map(|&t| {
                let (m, f) = rates_at(targets, nontargets, t);
                (params.c_miss * params.p_target * m + params.c_fa * (1.0 - params.p_target) * f)
                    / norm
            })
            .fold(f64::INFINITY, f64::min)
    }
}
