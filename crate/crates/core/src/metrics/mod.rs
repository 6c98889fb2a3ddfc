//! Benchmark metrics and the overhead table.

pub mod stats;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::{TransformArtifact, TransformOutcome};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction and gold id sets differ: {0}")]
    IdMismatch(String),
    #[error("{0}")]
    Sample(String),
}

/// `2PR/(P+R)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl DetectionMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        DetectionMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
            tp,
            fp,
            fn_,
            tn,
        }
    }
}

/// Confusion-matrix metrics over `id -> is sensitive` maps with equal key sets.
pub fn compute_detection_metrics(
    predictions: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
) -> Result<DetectionMetrics, MetricsError> {
    let missing: Vec<&str> = gold
        .keys()
        .filter(|k| !predictions.contains_key(*k))
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = predictions
        .keys()
        .filter(|k| !gold.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(MetricsError::IdMismatch(format!(
            "missing [{}], unexpected [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (id, &truth) in gold {
        match (predictions[id], truth) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(DetectionMetrics::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMetrics {
    pub n_sensitive: usize,
    pub n_direct: usize,
    /// Successful transformations, DIRECT included.
    pub n_equivalent: usize,
    /// Mean iterations over EQUIVALENT (non-direct) successes.
    pub avg_iterations: Option<f64>,
}

impl TransformMetrics {
    pub fn avg_display(&self) -> String {
        match self.avg_iterations {
            Some(a) => format!("{a:.1}"),
            None => "\u{2013}".into(),
        }
    }
}

pub fn compute_transform_metrics(artifacts: &[TransformArtifact]) -> TransformMetrics {
    let n_direct = artifacts
        .iter()
        .filter(|a| a.outcome == TransformOutcome::Direct)
        .count();
    let refined: Vec<u32> = artifacts
        .iter()
        .filter(|a| a.outcome == TransformOutcome::Equivalent)
        .map(|a| a.iterations)
        .collect();
    TransformMetrics {
        n_sensitive: artifacts.len(),
        n_direct,
        n_equivalent: n_direct + refined.len(),
        avg_iterations: (!refined.is_empty())
            .then(|| refined.iter().map(|&i| i as f64).sum::<f64>() / refined.len() as f64),
    }
}

/// One row of the overhead table. Costs are means of `runs` samples; the
/// multiple is always derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub case_name: String,
    pub uses_external_lib: bool,
    pub ori_cost_ms: f64,
    pub tee_cost_ms: f64,
    pub runs: usize,
    /// Set when the case could not be measured; costs are then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<String>,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl OverheadRow {
    /// Build a row from raw per-run timings; both sides need exactly `repeat` samples.
    pub fn from_samples(
        case_name: &str,
        uses_external_lib: bool,
        ori_ms: &[f64],
        tee_ms: &[f64],
        repeat: usize,
    ) -> Result<Self, MetricsError> {
        if repeat == 0 || ori_ms.len() != repeat || tee_ms.len() != repeat {
            return Err(MetricsError::Sample(format!(
                "{case_name}: expected {repeat} runs per side, got {} and {}",
                ori_ms.len(),
                tee_ms.len()
            )));
        }
        Ok(OverheadRow {
            case_name: case_name.into(),
            uses_external_lib,
            ori_cost_ms: mean(ori_ms),
            tee_cost_ms: mean(tee_ms),
            runs: repeat,
            excluded: None,
        })
    }

    pub fn excluded(case_name: &str, uses_external_lib: bool, reason: String) -> Self {
        OverheadRow {
            case_name: case_name.into(),
            uses_external_lib,
            ori_cost_ms: 0.0,
            tee_cost_ms: 0.0,
            runs: 0,
            excluded: Some(reason),
        }
    }

    pub fn multiple(&self) -> Option<f64> {
        (self.excluded.is_none() && self.ori_cost_ms > 0.0)
            .then(|| round1(self.tee_cost_ms / self.ori_cost_ms))
    }
}

/// Plain-text overhead table.
pub struct OverheadTable<'a>(pub &'a [OverheadRow]);

impl fmt::Display for OverheadTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<40} {:>8} {:>12} {:>12} {:>9}  note",
            "case", "ext.lib", "oriCost(ms)", "teeCost(ms)", "multiple"
        )?;
        for r in self.0 {
            match (&r.excluded, r.multiple()) {
                (Some(why), _) => writeln!(
                    f,
                    "{:<40} {:>8} {:>12} {:>12} {:>9}  excluded: {why}",
                    r.case_name,
                    yes_no(r.uses_external_lib),
                    "-",
                    "-",
                    "-"
                )?,
                (None, m) => writeln!(
                    f,
                    "{:<40} {:>8} {:>12.3} {:>12.3} {:>9}",
                    r.case_name,
                    yes_no(r.uses_external_lib),
                    r.ori_cost_ms,
                    r.tee_cost_ms,
                    m.map(|m| format!("{m:.1}")).unwrap_or_else(|| "-".into())
                )?,
            }
        }
        Ok(())
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_precision_is_zero() {
        let m = DetectionMetrics::from_counts(0, 0, 3, 5);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let all = DetectionMetrics::from_counts(4, 0, 0, 2);
        assert_eq!((all.precision, all.recall, all.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn id_sets_must_match() {
        let p = BTreeMap::from([("a".to_string(), true)]);
        let g = BTreeMap::from([("b".to_string(), true)]);
        assert!(matches!(
            compute_detection_metrics(&p, &g),
            Err(MetricsError::IdMismatch(_))
        ));
    }

    #[test]
    fn overhead_rows_need_exact_run_counts() {
        assert!(OverheadRow::from_samples("x", false, &[1.0; 4], &[2.0; 5], 5).is_err());
        let r = OverheadRow::from_samples("x", false, &[1.0, 2.0, 3.0, 4.0, 5.0], &[10.0; 5], 5)
            .unwrap();
        assert_eq!(r.ori_cost_ms, 3.0);
        assert_eq!(r.multiple(), Some(3.3));
    }
}
