//! Report files:
//!
//! - `curves/<label_set_id>.csv`: raw and smoothed mean accuracy per N
//! - `rank_consistency.csv`: one row per N
//! - `slope_correlation.csv`: one row per reported label set
//! - `curves.json`: curves and correlations for plotting
//! - `manifest.json`: input hash, source manifest and per-file checksums
//!
//! Label sets with identical labels at adjacent K are reported once, under
//! the larger K.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    rank_consistency_for, slope_correlation, smooth, BootstrapOptions, CorrelationEstimate,
    CorrelationStat, LearningCurve, DEFAULT_BOOTSTRAP, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::eval::AccuracyRecord;
use crate::util::sha256_hex;

const TABLE_COLUMNS: &str = "Mean Corr.,Std Corr.,Median Corr.,CI 2.5%,CI 97.5%";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLabelSet {
    pub id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub label_sets: Vec<ReportLabelSet>,
    /// Correlation tables use N >= min_n (N > 0 always).
    pub min_n: usize,
    pub n_boot: usize,
    pub seed: u64,
    pub window: usize,
    /// Identifier of the sweep these records came from, copied into the manifest.
    #[serde(default)]
    pub source_manifest: Option<String>,
}

impl ReportConfig {
    pub fn new(label_sets: Vec<ReportLabelSet>, min_n: usize) -> Self {
        ReportConfig {
            label_sets,
            min_n,
            n_boot: DEFAULT_BOOTSTRAP,
            seed: 0,
            window: DEFAULT_WINDOW,
            source_manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedLabelSet {
    pub id: String,
    #[serde(rename = "K")]
    pub k: usize,
    /// Every K that produced this same label set.
    pub merged_k: Vec<usize>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub n_shots: usize,
    #[serde(flatten)]
    pub estimate: CorrelationEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub label_set_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub zero_shot: f64,
    #[serde(flatten)]
    pub estimate: CorrelationEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlotCurve {
    label_set: ReportedLabelSet,
    points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlotPoint {
    n_shots: usize,
    mean: f64,
    smoothed: f64,
    runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlotData {
    curves: Vec<PlotCurve>,
    rank_consistency: Vec<RankRow>,
    slope_correlation: Vec<SlopeRow>,
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub label_sets: Vec<ReportedLabelSet>,
    pub rank_consistency: Vec<RankRow>,
    pub slope_correlation: Vec<SlopeRow>,
    pub files: Vec<PathBuf>,
}

/// Groups label sets sorted by K; runs of identical labels keep the largest K.
pub fn dedup_label_sets(sets: &[ReportLabelSet]) -> Vec<ReportedLabelSet> {
    let mut sorted: Vec<&ReportLabelSet> = sets.iter().collect();
    sorted.sort_by(|a, b| a.k.cmp(&b.k).then_with(|| a.id.cmp(&b.id)));
    let mut out: Vec<ReportedLabelSet> = Vec::new();
    for s in sorted {
        match out.last_mut() {
            Some(prev) if prev.labels == s.labels => {
                prev.id = s.id.clone();
                prev.k = s.k;
                prev.merged_k.push(s.k);
            }
            _ => out.push(ReportedLabelSet {
                id: s.id.clone(),
                k: s.k,
                merged_k: vec![s.k],
                labels: s.labels.clone(),
            }),
        }
    }
    out
}

fn fmt4(v: f64) -> String {
    // avoid "-0.0000"
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

fn table_cells(stat: &Option<CorrelationStat>) -> String {
    match stat {
        Some(s) => [s.mean, s.std, s.median, s.ci_lo, s.ci_hi]
            .map(fmt4)
            .join(","),
        None => "NA,NA,NA,NA,NA".into(),
    }
}

fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn export_report(
    records: &[AccuracyRecord],
    config: &ReportConfig,
    out_dir: &Path,
) -> Result<ReportSummary> {
    if records.is_empty() {
        return Err(Error::Incomplete(vec!["no accuracy records".into()]));
    }
    if config.label_sets.is_empty() {
        return Err(Error::Incomplete(vec!["no label sets configured".into()]));
    }
    if config.window < 1 {
        return Err(Error::InvalidArgument(
            "smoothing window must be at least 1".into(),
        ));
    }
    let reported = dedup_label_sets(&config.label_sets);

    let all_ns: BTreeSet<usize> = records.iter().map(|r| r.n_shots).collect();
    let mut curves = Vec::new();
    let mut missing = Vec::new();
    for ls in &reported {
        match LearningCurve::from_records(records, &ls.id) {
            Ok(c) => {
                for n in &all_ns {
                    if c.point(*n).is_none() {
                        missing.push(format!("label set {}: missing N={n}", ls.id));
                    }
                }
                curves.push(c);
            }
            Err(_) => missing.push(format!("label set {}: no records", ls.id)),
        }
    }
    if !all_ns.contains(&0) {
        missing.push("no zero-shot (N=0) records".into());
    }
    if !missing.is_empty() {
        return Err(Error::Incomplete(missing));
    }

    let table_ns: Vec<usize> = all_ns
        .iter()
        .copied()
        .filter(|&n| n > 0 && n >= config.min_n)
        .collect();
    let opts = BootstrapOptions {
        n_boot: config.n_boot,
        seed: config.seed,
    };
    let ids: Vec<String> = reported.iter().map(|r| r.id.clone()).collect();
    let undefined = CorrelationEstimate {
        point: None,
        stat: None,
    };

    let rank_rows: Vec<RankRow> = table_ns
        .iter()
        .map(|&n| {
            let estimate = if ids.len() >= 2 {
                rank_consistency_for(records, &ids, n, &opts)?
            } else {
                undefined
            };
            Ok(RankRow {
                n_shots: n,
                estimate,
            })
        })
        .collect::<Result<_>>()?;

    let slope_rows: Vec<SlopeRow> = curves
        .iter()
        .map(|c| {
            let estimate = if table_ns.len() >= 2 {
                slope_correlation(c, &table_ns, &opts)?
            } else {
                undefined
            };
            Ok(SlopeRow {
                label_set_id: c.label_set_id.clone(),
                k: reported
                    .iter()
                    .find(|r| r.id == c.label_set_id)
                    .map_or(c.k, |r| r.k),
                zero_shot: c.point(0).map_or(f64::NAN, |p| p.mean),
                estimate,
            })
        })
        .collect::<Result<_>>()?;

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut plot_curves = Vec::new();
    for (ls, c) in reported.iter().zip(&curves) {
        let means = c.means();
        let smoothed = smooth(&means, config.window)?;
        let mut csv = String::from("n_shots,mean_accuracy,smoothed_accuracy,n_runs\n");
        let mut points = Vec::new();
        for ((p, m), s) in c.points.iter().zip(&means).zip(&smoothed) {
            writeln!(csv, "{},{},{},{}", p.n_shots, m, s, p.runs.len()).unwrap();
            points.push(PlotPoint {
                n_shots: p.n_shots,
                mean: *m,
                smoothed: *s,
                runs: p.runs.clone(),
            });
        }
        files.push((
            PathBuf::from("curves").join(format!("{}.csv", safe_file_stem(&ls.id))),
            csv.into_bytes(),
        ));
        plot_curves.push(PlotCurve {
            label_set: ls.clone(),
            points,
        });
    }

    let mut rank_csv = format!("n_demo,{TABLE_COLUMNS}\n");
    for r in &rank_rows {
        writeln!(rank_csv, "{},{}", r.n_shots, table_cells(&r.estimate.stat)).unwrap();
    }
    files.push((PathBuf::from("rank_consistency.csv"), rank_csv.into_bytes()));

    let mut slope_csv = format!("K,{TABLE_COLUMNS}\n");
    for r in &slope_rows {
        writeln!(slope_csv, "{},{}", r.k, table_cells(&r.estimate.stat)).unwrap();
    }
    files.push((
        PathBuf::from("slope_correlation.csv"),
        slope_csv.into_bytes(),
    ));

    let plot = PlotData {
        curves: plot_curves,
        rank_consistency: rank_rows.clone(),
        slope_correlation: slope_rows.clone(),
    };
    let mut plot_json = serde_json::to_vec_pretty(&plot)?;
    plot_json.push(b'\n');
    files.push((PathBuf::from("curves.json"), plot_json));

    #[derive(Serialize)]
    struct FileEntry {
        path: String,
        sha256: String,
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        records_sha256: String,
        source_manifest: &'a Option<String>,
        config: &'a ReportConfig,
        files: Vec<FileEntry>,
    }
    let records_json = serde_json::to_vec(records)?;
    let manifest = Manifest {
        records_sha256: sha256_hex(&records_json),
        source_manifest: &config.source_manifest,
        config,
        files: files
            .iter()
            .map(|(p, b)| FileEntry {
                path: p.to_string_lossy().replace('\\', "/"),
                sha256: sha256_hex(b),
            })
            .collect(),
    };
    let mut mbytes = serde_json::to_vec_pretty(&manifest)?;
    mbytes.push(b'\n');
    files.push((PathBuf::from("manifest.json"), mbytes));

    let mut written = Vec::new();
    for (rel, bytes) in files {
        let path = out_dir.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(ReportSummary {
        label_sets: reported,
        rank_consistency: rank_rows,
        slope_correlation: slope_rows,
        files: written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(id: &str, k: usize, labels: &[&str]) -> ReportLabelSet {
        ReportLabelSet {
            id: id.into(),
            k,
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn adjacent_duplicates_collapse_to_higher_k() {
        let sets = vec![
            ls("K90", 90, &["fear", "angry", "happy"]),
            ls("K70", 70, &["panic", "rage", "cheers"]),
            ls("K100", 100, &["fear", "angry", "happy"]),
            ls("K80", 80, &["fear", "angry", "happy"]),
        ];
        let out = dedup_label_sets(&sets);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].id, "K100");
        assert_eq!(out[1].merged_k, vec![80, 90, 100]);
    }

    #[test]
    fn non_adjacent_duplicates_stay_separate() {
        let sets = vec![
            ls("a", 10, &["x", "y"]),
            ls("b", 20, &["u", "v"]),
            ls("c", 30, &["x", "y"]),
        ];
        assert_eq!(dedup_label_sets(&sets).len(), 3);
    }

    #[test]
    fn empty_records_fail() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ReportConfig::new(vec![ls("a", 10, &["x", "y"])], 2);
        assert!(matches!(
            export_report(&[], &cfg, dir.path()),
            Err(Error::Incomplete(_))
        ));
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(fmt4(-0.00001), "0.0000");
        assert_eq!(fmt4(0.54861), "0.5486");
    }
}
