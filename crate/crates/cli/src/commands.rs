use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use labelforge_core::analytics::{export_report, ReportConfig, ReportLabelSet, ReportSummary};
use labelforge_core::cache::{build_logit_matrix, cache_path, load_cache, save_cache};
use labelforge_core::dataset::{load_dataset, sample_labeling_indices, split_dataset};
use labelforge_core::eval::{
    read_records, run_sweep, CellFailure, ResultsStore, SweepManifest, SweepPlan,
};
use labelforge_core::gateway::{
    fetch_vocabulary, score_label_position, HttpOptions, HttpProvider, SyntheticProvider,
};
use labelforge_core::labelopt::{optimize_labels, LabelSetFile};
use labelforge_core::util::sha256_hex;
use labelforge_core::{
    CandidateVocabulary, Dataset, Error as CoreError, LabelSet, LogitMatrix, LogitProvider,
    OptimizeOptions, ProviderCapabilities, Split, TokenEntry,
};
use serde::{Deserialize, Serialize};

use crate::config::{ProviderKind, RunConfig};

/// Sweep cells failed on provider errors. Maps to exit code 3.
#[derive(Debug)]
pub struct ProviderFailure(pub String);

impl std::fmt::Display for ProviderFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ProviderFailure {}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn labelset_path(&self, k: usize) -> PathBuf {
        self.root.join("labelsets").join(format!("K{k}.json"))
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join("results").join("results.jsonl")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn split_path(&self) -> PathBuf {
        self.root.join("split.json")
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RunManifest {
    stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageEntry {
    config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab_fingerprint: Option<String>,
    template_fingerprint: String,
    /// Relative path to SHA-256.
    files: BTreeMap<String, String>,
}

fn record_stage(
    run: &RunDir,
    cfg: &RunConfig,
    stage: &str,
    vocab: Option<(&str, &CandidateVocabulary)>,
    files: &[PathBuf],
) -> Result<()> {
    let path = run.manifest_path();
    let mut manifest: RunManifest = fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_default();
    let mut hashes = BTreeMap::new();
    for f in files {
        let bytes = fs::read(f).with_context(|| format!("hashing {}", f.display()))?;
        hashes.insert(run.relative(f), sha256_hex(&bytes));
    }
    manifest.stages.insert(
        stage.to_string(),
        StageEntry {
            config_hash: cfg.hash(),
            model_id: vocab.map(|(m, _)| m.to_string()),
            vocab_fingerprint: vocab.map(|(_, v)| v.fingerprint().to_string()),
            template_fingerprint: cfg.template.fingerprint().to_string(),
            files: hashes,
        },
    );
    write_json(&path, &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Lowers the advertised concurrency of the wrapped provider.
struct Capped<P> {
    inner: P,
    cap: usize,
}

impl<P: LogitProvider> LogitProvider for Capped<P> {
    fn capabilities(&self) -> ProviderCapabilities {
        let mut caps = self.inner.capabilities();
        caps.max_concurrency = caps.max_concurrency.min(self.cap).max(1);
        caps
    }
    fn list_tokens(&self, prefix: &str) -> labelforge_core::Result<Vec<TokenEntry>> {
        self.inner.list_tokens(prefix)
    }
    fn score(&self, prompt: &str, candidates: &[TokenEntry]) -> labelforge_core::Result<Vec<f64>> {
        self.inner.score(prompt, candidates)
    }
}

/// Loads and splits the configured dataset.
pub fn load_split(cfg: &RunConfig) -> Result<Dataset> {
    let format = cfg.dataset_format()?;
    let ds = load_dataset(&cfg.dataset.path, format)
        .with_context(|| format!("dataset: loading {}", cfg.dataset.path.display()))?;
    split_dataset(&ds, &cfg.split_spec()).context("dataset: splitting")
}

/// The synthetic provider learns every sentence's class from `ds`.
pub fn make_provider(cfg: &RunConfig, ds: &Dataset) -> Result<Box<dyn LogitProvider>> {
    let p = &cfg.provider;
    let provider: Box<dyn LogitProvider> = match p.kind {
        ProviderKind::Synthetic => {
            let sc = p
                .synthetic
                .clone()
                .ok_or_else(|| anyhow!("synthetic provider is not configured"))?;
            if sc.num_classes != ds.num_classes() {
                bail!(crate::ConfigError(format!(
                    "synthetic provider has {} classes, dataset has {}",
                    sc.num_classes,
                    ds.num_classes()
                )));
            }
            let sp = SyntheticProvider::new(
                sc,
                ds.sentences().iter().map(|s| (s.text.clone(), s.class_id)),
            )
            .context("provider: synthetic")?
            .with_template(cfg.template.clone());
            Box::new(sp)
        }
        ProviderKind::Http => {
            let endpoint = p.endpoint.as_deref().unwrap_or_default();
            let opts = HttpOptions {
                timeout: Duration::from_secs(p.timeout_secs),
                ..HttpOptions::default()
            };
            Box::new(
                HttpProvider::connect(endpoint, opts)
                    .with_context(|| format!("provider: connecting to {endpoint}"))?,
            )
        }
    };
    Ok(match p.max_concurrency {
        Some(cap) => Box::new(Capped {
            inner: provider,
            cap,
        }),
        None => provider,
    })
}

fn vocabulary(cfg: &RunConfig, provider: &dyn LogitProvider) -> Result<CandidateVocabulary> {
    fetch_vocabulary(provider, &cfg.provider.boundary_marker)
        .context("provider: fetching candidate vocabulary")
}

/// One fitted label set.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub k: usize,
    pub labels: Vec<String>,
    pub objective: f64,
    /// Smaller adjacent K that produced the same labels.
    pub same_as: Option<usize>,
    pub path: PathBuf,
}

/// Loads a cached matrix if it exists and was built from `indices`.
fn cached_matrix(
    path: &Path,
    vocab: &CandidateVocabulary,
    cfg: &RunConfig,
    indices: &[usize],
) -> Option<LogitMatrix> {
    if !path.exists() {
        return None;
    }
    match load_cache(path, vocab.fingerprint(), cfg.template.fingerprint()) {
        Ok(m) if m.sentence_index() == indices => Some(m),
        _ => None,
    }
}

pub fn fit_labels(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<FitRow>> {
    let run = RunDir::new(&cfg.output_dir);
    let ds = load_split(cfg)?;
    fs::create_dir_all(run.root()).with_context(|| format!("creating {}", run.root().display()))?;
    ds.write_split_manifest(&run.split_path())
        .context("dataset: writing split manifest")?;
    let provider = make_provider(cfg, &ds)?;
    let model_id = provider.capabilities().model_id;
    let vocab = vocabulary(cfg, provider.as_ref())?;
    if vocab.len() < ds.num_classes() {
        bail!(
            "vocabulary: {} candidate tokens cannot label {} classes",
            vocab.len(),
            ds.num_classes()
        );
    }

    let max_k = *cfg.fit.ks.last().expect("validated non-empty");
    let indices = sample_labeling_indices(&ds, max_k, cfg.seeds.labeling)
        .context("fit-labels: sampling labeling set")?;
    let (vfp, tfp) = (vocab.fingerprint(), cfg.template.fingerprint());
    let full_path = cache_path(run.root(), vfp, tfp, max_k);
    let full = match cached_matrix(&full_path, &vocab, cfg, &indices) {
        Some(m) => m,
        None => {
            let m = build_logit_matrix(provider.as_ref(), &ds, &indices, &cfg.template, &vocab)
                .context("fit-labels: scoring labeling sentences")?;
            save_cache(&m, &full_path).context("fit-labels: saving logit cache")?;
            m
        }
    };

    let opts = OptimizeOptions {
        restarts: cfg.fit.restarts,
        seed: cfg.seeds.optimizer,
        max_iterations: cfg.fit.max_iterations,
    };
    let mut rows: Vec<FitRow> = Vec::new();
    let mut written = vec![run.split_path(), full_path.clone()];
    for &k in &cfg.fit.ks {
        let m = full.prefix(k)?;
        let cpath = cache_path(run.root(), vfp, tfp, k);
        if cpath != full_path && cached_matrix(&cpath, &vocab, cfg, &indices[..k]).is_none() {
            save_cache(&m, &cpath)
                .with_context(|| format!("fit-labels: saving cache for K={k}"))?;
        }
        if cpath != full_path {
            written.push(cpath);
        }
        let classes: Vec<usize> = indices[..k]
            .iter()
            .map(|&i| ds.sentences()[i].class_id)
            .collect();
        let fit = optimize_labels(&m, &classes, ds.num_classes(), &opts)
            .with_context(|| format!("fit-labels: optimizing K={k}"))?;
        let file = LabelSetFile::from_fit(&fit, &vocab, k);
        let path = run.labelset_path(k);
        write_json(&path, &file)?;
        written.push(path.clone());
        let same_as = rows
            .last()
            .filter(|prev| prev.labels == file.labels)
            .map(|prev| prev.k);
        rows.push(FitRow {
            k,
            labels: file.labels,
            objective: fit.objective,
            same_as,
            path,
        });
    }
    record_stage(&run, cfg, "fit-labels", Some((&model_id, &vocab)), &written)?;

    writeln!(out, "{:>6}  {:>14}  labels", "K", "objective")?;
    for r in &rows {
        let shown: Vec<&str> = r
            .labels
            .iter()
            .map(|l| l.strip_prefix(vocab.boundary_marker()).unwrap_or(l))
            .collect();
        let note = r
            .same_as
            .map(|k| format!("  (same as K={k})"))
            .unwrap_or_default();
        writeln!(
            out,
            "{:>6}  {:>14.6}  {}{note}",
            r.k,
            r.objective,
            shown.join(" | ")
        )?;
    }
    Ok(rows)
}

/// Reads `labelsets/K<k>.json` for every configured K.
pub fn load_label_sets(cfg: &RunConfig, vocab: &CandidateVocabulary) -> Result<Vec<LabelSet>> {
    let run = RunDir::new(&cfg.output_dir);
    cfg.fit
        .ks
        .iter()
        .map(|&k| {
            let path = run.labelset_path(k);
            let bytes = fs::read(&path).with_context(|| {
                format!(
                    "eval: label set {} is missing; run fit-labels first",
                    path.display()
                )
            })?;
            let file: LabelSetFile = serde_json::from_slice(&bytes)
                .with_context(|| format!("eval: parsing {}", path.display()))?;
            let assignment = file.assignment(vocab).with_context(|| {
                format!(
                    "eval: label set {} does not match the vocabulary",
                    path.display()
                )
            })?;
            Ok(LabelSet {
                id: format!("K{k}"),
                k,
                assignment,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    /// Cells evaluated by this invocation.
    pub evaluated: usize,
    /// Cells present in the results file afterwards.
    pub done: usize,
    pub expected: usize,
    pub failures: Vec<CellFailure>,
}

impl EvalSummary {
    pub fn is_complete(&self) -> bool {
        self.done == self.expected
    }
}

/// Runs or resumes the sweep. `cell_limit` stops after that many new cells.
pub fn eval(
    cfg: &RunConfig,
    cell_limit: Option<usize>,
    out: &mut dyn Write,
) -> Result<EvalSummary> {
    let run = RunDir::new(&cfg.output_dir);
    let ds = load_split(cfg)?;
    let provider = make_provider(cfg, &ds)?;
    let model_id = provider.capabilities().model_id;
    let vocab = vocabulary(cfg, provider.as_ref())?;
    let label_sets = load_label_sets(cfg, &vocab)?;
    let plan = SweepPlan {
        ns: cfg.eval.ns.clone(),
        runs: cfg.eval.runs,
        seed: cfg.seeds.sweep,
    };
    let manifest = SweepManifest::new(&plan, &label_sets, &vocab, &cfg.template, &model_id);
    let results = run.results_path();
    let mut store = ResultsStore::open(&results, &manifest).context("eval: opening results")?;
    let demo = ds.split_sentences(Split::Demo);
    let test = ds.split_sentences(Split::Test);
    let outcome = run_sweep(
        provider.as_ref(),
        &label_sets,
        &vocab,
        &demo,
        &test,
        &plan,
        &cfg.template,
        &mut store,
        cell_limit,
    )
    .context("eval: sweep")?;
    let expected = label_sets.len() * plan.cells().len();
    let summary = EvalSummary {
        evaluated: outcome.evaluated,
        done: outcome.records.len(),
        expected,
        failures: outcome.failures,
    };
    record_stage(
        &run,
        cfg,
        "eval",
        Some((&model_id, &vocab)),
        &[results.clone(), ResultsStore::manifest_path(&results)],
    )?;

    writeln!(
        out,
        "evaluated {} cells; {}/{} complete in {}",
        summary.evaluated,
        summary.done,
        summary.expected,
        results.display()
    )?;
    if !summary.failures.is_empty() {
        for f in &summary.failures {
            writeln!(
                out,
                "failed: {} N={} run={}: {}",
                f.label_set_id, f.n_shots, f.run, f.error
            )?;
        }
        let msg = format!(
            "eval: {} cells failed and were left for the next run",
            summary.failures.len()
        );
        if summary.failures.iter().any(|f| f.provider_error) {
            return Err(ProviderFailure(msg).into());
        }
        bail!(msg);
    }
    if !summary.is_complete() {
        writeln!(out, "stopped early; run eval again to resume")?;
    }
    Ok(summary)
}

/// Lists cells of the sweep that have no record, one entry per label set.
fn missing_cells(
    manifest: &SweepManifest,
    records: &[labelforge_core::AccuracyRecord],
) -> Vec<String> {
    let plan = SweepPlan {
        ns: manifest.ns.clone(),
        runs: manifest.runs,
        seed: manifest.seed,
    };
    let have: std::collections::HashSet<(&str, usize, usize)> = records
        .iter()
        .map(|r| (r.label_set_id.as_str(), r.n_shots, r.run))
        .collect();
    let cells = plan.cells();
    let mut out = Vec::new();
    for ls in &manifest.label_sets {
        let absent: Vec<&(usize, usize)> = cells
            .iter()
            .filter(|(n, r)| !have.contains(&(ls.id.as_str(), *n, *r)))
            .collect();
        if let Some((n, r)) = absent.first() {
            out.push(format!(
                "label set {}: {} of {} cells missing (first: N={n} run={r})",
                ls.id,
                absent.len(),
                cells.len()
            ));
        }
    }
    out
}

pub fn report(cfg: &RunConfig, out: &mut dyn Write) -> Result<ReportSummary> {
    let run = RunDir::new(&cfg.output_dir);
    let results = run.results_path();
    let mpath = ResultsStore::manifest_path(&results);
    let mbytes = match fs::read(&mpath) {
        Ok(b) => b,
        Err(_) => {
            return Err(anyhow::Error::new(CoreError::Incomplete(vec![format!(
                "no sweep manifest at {}; run eval first",
                mpath.display()
            )]))
            .context("report"))
        }
    };
    let manifest: SweepManifest =
        serde_json::from_slice(&mbytes).context("report: parsing sweep manifest")?;
    let records = if results.exists() {
        read_records(&results).context("report: reading results")?
    } else {
        Vec::new()
    };
    let missing = missing_cells(&manifest, &records);
    if !missing.is_empty() {
        return Err(anyhow::Error::new(CoreError::Incomplete(missing)).context("report"));
    }
    let rc = ReportConfig {
        label_sets: manifest
            .label_sets
            .iter()
            .map(|l| ReportLabelSet {
                id: l.id.clone(),
                k: l.k,
                labels: l.labels.clone(),
            })
            .collect(),
        min_n: cfg.report.min_n,
        n_boot: cfg.report.n_boot,
        seed: cfg.seeds.bootstrap,
        window: cfg.report.window,
        source_manifest: Some(sha256_hex(&mbytes)),
    };
    let dir = run.report_dir();
    let summary = export_report(&records, &rc, &dir).context("report")?;
    record_stage(&run, cfg, "report", None, &summary.files)?;

    for ls in &summary.label_sets {
        if ls.merged_k.len() > 1 {
            let ks: Vec<String> = ls.merged_k.iter().map(|k| k.to_string()).collect();
            writeln!(
                out,
                "label sets for K={} are identical; reported as K={}",
                ks.join(","),
                ls.k
            )?;
        }
    }
    for name in ["rank_consistency.csv", "slope_correlation.csv"] {
        let text = fs::read_to_string(dir.join(name))?;
        writeln!(out, "{name}\n{text}")?;
    }
    writeln!(out, "report written to {}", dir.display())?;
    Ok(summary)
}

/// Prints `id<TAB>text` for every candidate token.
pub fn vocab(cfg: &RunConfig, out: &mut dyn Write) -> Result<CandidateVocabulary> {
    let ds = load_split(cfg)?;
    let provider = make_provider(cfg, &ds)?;
    let v = vocabulary(cfg, provider.as_ref())?;
    for t in v.tokens() {
        writeln!(out, "{}\t{}", t.token_id, t.text)?;
    }
    writeln!(out, "# {} tokens, fingerprint {}", v.len(), v.fingerprint())?;
    Ok(v)
}

/// Scores `labels` (token texts, marker optional) after `prompt` and prints one logit per label.
pub fn score(
    cfg: &RunConfig,
    prompt: &str,
    labels: &[String],
    out: &mut dyn Write,
) -> Result<Vec<f64>> {
    if labels.is_empty() {
        bail!(crate::ConfigError(
            "score: at least one label is required".into()
        ));
    }
    let ds = load_split(cfg)?;
    let provider = make_provider(cfg, &ds)?;
    let v = vocabulary(cfg, provider.as_ref())?;
    let tokens: Vec<TokenEntry> = labels
        .iter()
        .map(|l| {
            v.index_of(l)
                .or_else(|| v.index_of(&format!("{}{l}", v.boundary_marker())))
                .map(|i| v.tokens()[i].clone())
                .ok_or_else(|| anyhow!("score: {l:?} is not in the candidate vocabulary"))
        })
        .collect::<Result<_>>()?;
    let logits = score_label_position(provider.as_ref(), prompt, &tokens).context("score")?;
    for (t, l) in tokens.iter().zip(&logits) {
        writeln!(out, "{}\t{l}", t.text)?;
    }
    Ok(logits)
}
