//! Learning curves and rank statistics over sweep records.
//!
//! Two correlations are reported, both with percentile bootstrap intervals
//! over run-level accuracies:
//!
//! - rank consistency: across label sets, zero-shot accuracy vs. mean N-shot
//!   accuracy at a fixed N;
//! - slope: along one label set's curve, N vs. mean N-shot accuracy.

mod report;
mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::AccuracyRecord;

pub use report::{export_report, ReportConfig, ReportLabelSet, ReportSummary};
pub use stats::{
    average_ranks, bootstrap_correlation, percentile_sorted, smooth, spearman, summarize_draws,
    BootstrapOptions, CorrelationStat, DEFAULT_BOOTSTRAP, DEFAULT_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_shots: usize,
    pub mean: f64,
    /// Accuracies ordered by run index.
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub label_set_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// Collects one label set's records into points sorted by N.
    pub fn from_records(records: &[AccuracyRecord], label_set_id: &str) -> Result<Self> {
        let mut by_n: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        let mut k = None;
        for r in records.iter().filter(|r| r.label_set_id == label_set_id) {
            k.get_or_insert(r.k);
            by_n.entry(r.n_shots).or_default().push((r.run, r.accuracy));
        }
        let k = k.ok_or_else(|| {
            Error::Incomplete(vec![format!("no records for label set {label_set_id}")])
        })?;
        let points = by_n
            .into_iter()
            .map(|(n_shots, mut runs)| {
                runs.sort_by_key(|&(run, _)| run);
                if runs.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(Error::InvalidArgument(format!(
                        "duplicate run for label set {label_set_id} at N={n_shots}"
                    )));
                }
                let runs: Vec<f64> = runs.into_iter().map(|(_, a)| a).collect();
                Ok(CurvePoint {
                    n_shots,
                    mean: stats::mean(&runs),
                    runs,
                })
            })
            .collect::<Result<_>>()?;
        Ok(LearningCurve {
            label_set_id: label_set_id.to_string(),
            k,
            points,
        })
    }

    pub fn point(&self, n: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.n_shots == n)
    }

    pub fn ns(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n_shots).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }
}

/// A point estimate plus its bootstrap summary; either may be undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub point: Option<f64>,
    pub stat: Option<CorrelationStat>,
}

/// Label set ids in order of first appearance.
pub fn label_set_ids(records: &[AccuracyRecord]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for r in records {
        if !ids.contains(&r.label_set_id) {
            ids.push(r.label_set_id.clone());
        }
    }
    ids
}

/// Rank consistency between zero-shot accuracy and N-shot accuracy across the
/// given label sets. Zero-shot values stay fixed in the bootstrap.
pub fn rank_consistency_for(
    records: &[AccuracyRecord],
    ids: &[String],
    n: usize,
    opts: &BootstrapOptions,
) -> Result<CorrelationEstimate> {
    let mut missing = Vec::new();
    let mut zero = Vec::with_capacity(ids.len());
    let mut groups = Vec::with_capacity(ids.len());
    for id in ids {
        let curve = LearningCurve::from_records(records, id);
        let curve = match curve {
            Ok(c) => c,
            Err(_) => {
                missing.push(format!("label set {id}: no records"));
                continue;
            }
        };
        match curve.point(0) {
            Some(p) => zero.push(p.mean),
            None => missing.push(format!("label set {id}: missing N=0")),
        }
        match curve.point(n) {
            Some(p) => groups.push(p.runs.clone()),
            None => missing.push(format!("label set {id}: missing N={n}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Incomplete(missing));
    }
    let means: Vec<f64> = groups.iter().map(|g| stats::mean(g)).collect();
    let point = spearman(&zero, &means)?;
    let draws = bootstrap_correlation(&zero, &groups, opts)?;
    Ok(CorrelationEstimate {
        point,
        stat: summarize_draws(&draws),
    })
}

pub fn rank_consistency(
    records: &[AccuracyRecord],
    n: usize,
    opts: &BootstrapOptions,
) -> Result<CorrelationEstimate> {
    rank_consistency_for(records, &label_set_ids(records), n, opts)
}

/// Correlation between N and mean accuracy along one curve.
pub fn slope_correlation(
    curve: &LearningCurve,
    ns: &[usize],
    opts: &BootstrapOptions,
) -> Result<CorrelationEstimate> {
    let mut groups = Vec::with_capacity(ns.len());
    let mut missing = Vec::new();
    for &n in ns {
        match curve.point(n) {
            Some(p) => groups.push(p.runs.clone()),
            None => missing.push(format!("label set {}: missing N={n}", curve.label_set_id)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Incomplete(missing));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let means: Vec<f64> = groups.iter().map(|g| stats::mean(g)).collect();
    let point = spearman(&xs, &means)?;
    let draws = bootstrap_correlation(&xs, &groups, opts)?;
    Ok(CorrelationEstimate {
        point,
        stat: summarize_draws(&draws),
    })
}
