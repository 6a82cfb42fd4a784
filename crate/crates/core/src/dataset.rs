//! Classification datasets: loading, stratified splitting, class subsetting
//! and nested labeling samples.
//!
//! Records are one JSON object per line (`{"text": ..., "class": 1}`) or a CSV
//! file with a `text,class` header. Class ids are 1-based.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeling,
    Demo,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Labeling => "labeling",
            Split::Demo => "demo",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub text: String,
    pub class_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Guesses the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    sentences: Vec<LabeledSentence>,
    num_classes: usize,
    gold_labels: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    class: i64,
}

impl Dataset {
    /// Builds a dataset, checking that classes are exactly `1..=C` with `C >= 2`.
    pub fn new(sentences: Vec<LabeledSentence>, gold_labels: Option<Vec<String>>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, s) in sentences.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "sentence {i} has empty text"
                )));
            }
            if s.class_id == 0 {
                return Err(Error::InvalidDataset(format!(
                    "sentence {i} has class id 0"
                )));
            }
        }
        let num_classes = sentences.iter().map(|s| s.class_id).max().unwrap_or(0);
        if num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, found {num_classes}"
            )));
        }
        let mut seen = vec![false; num_classes];
        for s in &sentences {
            seen[s.class_id - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|&x| !x) {
            return Err(Error::InvalidDataset(format!(
                "class {} has no sentences",
                missing + 1
            )));
        }
        if let Some(g) = &gold_labels {
            if g.len() != num_classes {
                return Err(Error::InvalidDataset(format!(
                    "{} gold labels for {num_classes} classes",
                    g.len()
                )));
            }
        }
        Ok(Dataset {
            sentences,
            num_classes,
            gold_labels,
        })
    }

    pub fn sentences(&self) -> &[LabeledSentence] {
        &self.sentences
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn gold_labels(&self) -> Option<&[String]> {
        self.gold_labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.sentences {
            counts[s.class_id - 1] += 1;
        }
        counts
    }

    /// Indices of sentences carrying `split`, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_sentences(&self, split: Split) -> Vec<&LabeledSentence> {
        self.sentences.iter().filter(|s| s.split == split).collect()
    }

    /// Per-class `[labeling, demo, test]` counts.
    pub fn split_counts(&self) -> Vec<[usize; 3]> {
        let mut counts = vec![[0; 3]; self.num_classes];
        for s in &self.sentences {
            let slot = match s.split {
                Split::Labeling => 0,
                Split::Demo => 1,
                Split::Test => 2,
                Split::Unassigned => continue,
            };
            counts[s.class_id - 1][slot] += 1;
        }
        counts
    }

    /// Writes `{"index": i, "split": "..."}` per sentence.
    pub fn write_split_manifest(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            index: usize,
            split: &'a str,
        }
        let mut buf = Vec::new();
        for (index, s) in self.sentences.iter().enumerate() {
            serde_json::to_writer(
                &mut buf,
                &Row {
                    index,
                    split: s.split.as_str(),
                },
            )?;
            buf.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&body, format)
}

pub fn parse_dataset(body: &str, format: DatasetFormat) -> Result<Dataset> {
    let raw = match format {
        DatasetFormat::Jsonl => parse_jsonl(body)?,
        DatasetFormat::Csv => parse_csv(body)?,
    };
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sentences = Vec::with_capacity(raw.len());
    for (line, rec) in raw {
        if rec.class < 1 {
            return Err(Error::MalformedRecord {
                line,
                reason: format!("class id {} is below 1", rec.class),
            });
        }
        let text = rec.text.trim();
        if text.is_empty() {
            return Err(Error::MalformedRecord {
                line,
                reason: "empty text".into(),
            });
        }
        sentences.push(LabeledSentence {
            text: text.to_string(),
            class_id: rec.class as usize,
            split: Split::Unassigned,
        });
    }
    Dataset::new(sentences, None)
}

fn parse_jsonl(body: &str) -> Result<Vec<(usize, RawRecord)>> {
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn parse_csv(body: &str) -> Result<Vec<(usize, RawRecord)>> {
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<RawRecord>().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRecord {
            line,
            reason: e.to_string(),
        })?;
        out.push((line, rec));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// (labeling, demo, test)
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: [f64; 3], seed: u64) -> Result<Self> {
        let spec = SplitSpec { fractions, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for f in self.fractions {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidSplit(format!(
                    "fraction {f} is not in (0, 1)"
                )));
            }
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Smallest class size for which every part receives at least one member.
    pub fn min_class_size(&self) -> usize {
        let min = self.fractions.iter().cloned().fold(f64::INFINITY, f64::min);
        (1.0 / min - 1e-9).ceil() as usize
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.25, 0.25, 0.5],
            seed: 0,
        }
    }
}

/// Largest-remainder apportionment of `n` items; remainder ties go to the
/// earlier part.
pub fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Assigns split tags stratified by class. Each class is shuffled with its own
/// seeded stream and cut into labeling/demo/test blocks.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<Dataset> {
    spec.validate()?;
    let needed = spec.min_class_size();
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.sentences.iter().enumerate() {
        by_class.entry(s.class_id).or_default().push(i);
    }
    let mut out = ds.clone();
    for (&class_id, members) in &by_class {
        if members.len() < needed {
            return Err(Error::ClassTooSmall {
                class_id,
                size: members.len(),
                needed,
            });
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng_for(spec.seed, &[class_id as u64]));
        let [n_lab, n_demo, _] = largest_remainder(shuffled.len(), &spec.fractions);
        for (pos, &idx) in shuffled.iter().enumerate() {
            out.sentences[idx].split = if pos < n_lab {
                Split::Labeling
            } else if pos < n_lab + n_demo {
                Split::Demo
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Keeps the listed classes, renumbering them `1..=keep.len()` in `keep` order.
pub fn subset_classes(ds: &Dataset, keep: &[usize]) -> Result<Dataset> {
    if keep.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes to keep, got {}",
            keep.len()
        )));
    }
    let mut remap = vec![0usize; ds.num_classes + 1];
    for (new, &old) in keep.iter().enumerate() {
        if old == 0 || old > ds.num_classes {
            return Err(Error::UnknownClass(old));
        }
        if remap[old] != 0 {
            return Err(Error::InvalidArgument(format!("class {old} listed twice")));
        }
        remap[old] = new + 1;
    }
    let sentences = ds
        .sentences
        .iter()
        .filter(|s| remap[s.class_id] != 0)
        .map(|s| LabeledSentence {
            class_id: remap[s.class_id],
            ..s.clone()
        })
        .collect();
    let gold = ds
        .gold_labels
        .as_ref()
        .map(|g| keep.iter().map(|&c| g[c - 1].clone()).collect());
    Dataset::new(sentences, gold)
}

/// Dataset indices of the first `k` items of a seeded shuffle of the labeling
/// split. Samples for the same seed are nested across `k`.
pub fn sample_labeling_indices(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut pool = ds.split_indices(Split::Labeling);
    if k < 1 || k > pool.len() {
        return Err(Error::SampleSize {
            requested: k,
            available: pool.len(),
        });
    }
    pool.shuffle(&mut rng_for(seed, &[]));
    pool.truncate(k);
    Ok(pool)
}

pub fn sample_labeling(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<LabeledSentence>> {
    Ok(sample_labeling_indices(ds, k, seed)?
        .into_iter()
        .map(|i| ds.sentences[i].clone())
        .collect())
}
