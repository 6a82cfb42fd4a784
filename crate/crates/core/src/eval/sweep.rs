//! Resumable accuracy sweeps over label sets × N × runs.
//!
//! Records are appended to a JSONL file as each cell finishes. A rerun reads
//! the file, skips finished cells and, once every cell is present, rewrites
//! the file in canonical cell order so interrupted and uninterrupted sweeps
//! end up byte-identical.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate_nshot, AccuracyRecord, LabelSet, PromptTemplate, ShotSpec};
use crate::dataset::LabeledSentence;
use crate::error::{Error, Result};
use crate::gateway::{CandidateVocabulary, LogitProvider};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPlan {
    /// Ascending shot counts.
    pub ns: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() {
            return Err(Error::InvalidArgument("no shot counts in sweep".into()));
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "shot counts must be strictly ascending".into(),
            ));
        }
        if self.runs < 1 {
            return Err(Error::InvalidArgument("runs must be at least 1".into()));
        }
        Ok(())
    }

    /// Runs for a given N; zero-shot has nothing to resample.
    pub fn runs_for(&self, n: usize) -> usize {
        if n == 0 {
            1
        } else {
            self.runs
        }
    }

    /// `(n, run)` cells for one label set, in sweep order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.ns
            .iter()
            .flat_map(|&n| (0..self.runs_for(n)).map(move |r| (n, r)))
            .collect()
    }
}

/// Identity of a sweep; a results file may only be resumed under the same one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub seed: u64,
    pub template_fingerprint: String,
    pub vocab_fingerprint: String,
    pub model_id: String,
    pub ns: Vec<usize>,
    pub runs: usize,
    pub label_sets: Vec<ManifestLabelSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLabelSet {
    pub id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub labels: Vec<String>,
}

impl SweepManifest {
    pub fn new(
        plan: &SweepPlan,
        label_sets: &[LabelSet],
        vocab: &CandidateVocabulary,
        template: &PromptTemplate,
        model_id: &str,
    ) -> Self {
        SweepManifest {
            seed: plan.seed,
            template_fingerprint: template.fingerprint().to_string(),
            vocab_fingerprint: vocab.fingerprint().to_string(),
            model_id: model_id.to_string(),
            ns: plan.ns.clone(),
            runs: plan.runs,
            label_sets: label_sets
                .iter()
                .map(|ls| ManifestLabelSet {
                    id: ls.id.clone(),
                    k: ls.k,
                    labels: ls
                        .assignment
                        .labels()
                        .iter()
                        .map(|&l| vocab.tokens()[l].text.clone())
                        .collect(),
                })
                .collect(),
        }
    }
}

type CellKey = (String, usize, usize);

fn key(r: &AccuracyRecord) -> CellKey {
    (r.label_set_id.clone(), r.n_shots, r.run)
}

/// JSONL results file plus its manifest.
pub struct ResultsStore {
    path: PathBuf,
    done: HashMap<CellKey, AccuracyRecord>,
}

impl ResultsStore {
    pub fn manifest_path(results_path: &Path) -> PathBuf {
        results_path.with_file_name("manifest.json")
    }

    /// Opens or creates the store. An existing manifest must equal `manifest`.
    /// A torn final line from an interrupted write is dropped.
    pub fn open(path: &Path, manifest: &SweepManifest) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mpath = Self::manifest_path(path);
        let mbytes = serde_json::to_vec_pretty(manifest)?;
        match fs::read(&mpath) {
            Ok(existing) => {
                let old: SweepManifest = serde_json::from_slice(&existing)?;
                if &old != manifest {
                    return Err(Error::FingerprintMismatch {
                        what: "sweep manifest",
                        expected: format!("{manifest:?}"),
                        found: format!("{old:?}"),
                    });
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                fs::write(&mpath, &mbytes).map_err(|e| Error::io(&mpath, e))?;
            }
            Err(e) => return Err(Error::io(&mpath, e)),
        }

        let mut done = HashMap::new();
        match fs::read_to_string(path) {
            Ok(body) => {
                let complete = body.rfind('\n').map_or(0, |i| i + 1);
                for (i, line) in body[..complete].lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: AccuracyRecord =
                        serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                            line: i + 1,
                            reason: e.to_string(),
                        })?;
                    done.insert(key(&rec), rec);
                }
                if complete < body.len() {
                    let f = OpenOptions::new()
                        .write(true)
                        .open(path)
                        .map_err(|e| Error::io(path, e))?;
                    f.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(path, e)),
        }
        Ok(ResultsStore {
            path: path.to_path_buf(),
            done,
        })
    }

    pub fn get(&self, label_set_id: &str, n: usize, run: usize) -> Option<&AccuracyRecord> {
        self.done.get(&(label_set_id.to_string(), n, run))
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    pub fn append(&mut self, rec: AccuracyRecord) -> Result<()> {
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        f.flush().map_err(|e| Error::io(&self.path, e))?;
        self.done.insert(key(&rec), rec);
        Ok(())
    }

    /// Rewrites the file with exactly `records`, in the given order.
    pub fn rewrite(&self, records: &[AccuracyRecord]) -> Result<()> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        let tmp = self.path.with_extension("jsonl.tmp");
        fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &self.path).map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a results JSONL file.
pub fn read_records(path: &Path) -> Result<Vec<AccuracyRecord>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub label_set_id: String,
    pub n_shots: usize,
    pub run: usize,
    pub error: String,
    pub provider_error: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Every record of the sweep that exists, in cell order.
    pub records: Vec<AccuracyRecord>,
    pub failures: Vec<CellFailure>,
    /// Cells evaluated by this call (as opposed to loaded from the store).
    pub evaluated: usize,
    /// Cells skipped because the cell limit was reached.
    pub pending: usize,
}

impl SweepOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.pending == 0
    }
}

/// Evaluates every (label set, N, run) cell not already in `store`. Failed
/// cells are reported and left for the next run. `cell_limit` caps how many
/// new cells are evaluated in this call.
#[allow(clippy::too_many_arguments)]
pub fn run_sweep<P: LogitProvider + ?Sized>(
    provider: &P,
    label_sets: &[LabelSet],
    vocab: &CandidateVocabulary,
    demo_split: &[&LabeledSentence],
    test_split: &[&LabeledSentence],
    plan: &SweepPlan,
    template: &PromptTemplate,
    store: &mut ResultsStore,
    cell_limit: Option<usize>,
) -> Result<SweepOutcome> {
    plan.validate()?;
    if let Some(&max_n) = plan.ns.last() {
        if max_n > demo_split.len() {
            return Err(Error::SampleSize {
                requested: max_n,
                available: demo_split.len(),
            });
        }
    }
    let mut ids = std::collections::HashSet::new();
    for ls in label_sets {
        if !ids.insert(ls.id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate label set id {:?}",
                ls.id
            )));
        }
        ls.assignment.check_vocab(vocab)?;
    }

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut evaluated = 0;
    let mut pending = 0;
    for ls in label_sets {
        for (n, run) in plan.cells() {
            if let Some(r) = store.get(&ls.id, n, run) {
                records.push(r.clone());
                continue;
            }
            if cell_limit.is_some_and(|lim| evaluated >= lim) {
                pending += 1;
                continue;
            }
            let spec = ShotSpec {
                n_shots: n,
                run_index: run,
                seed: plan.seed,
            };
            evaluated += 1;
            match evaluate_nshot(provider, ls, vocab, demo_split, test_split, &spec, template) {
                Ok(rec) => {
                    store.append(rec.clone())?;
                    records.push(rec);
                }
                Err(e) => failures.push(CellFailure {
                    label_set_id: ls.id.clone(),
                    n_shots: n,
                    run,
                    provider_error: e.is_provider_error(),
                    error: e.to_string(),
                }),
            }
        }
    }
    if failures.is_empty() && pending == 0 {
        store.rewrite(&records)?;
    }
    Ok(SweepOutcome {
        records,
        failures,
        evaluated,
        pending,
    })
}
