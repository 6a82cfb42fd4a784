use std::fmt;
use std::path::{Path, PathBuf};

use labelforge_core::dataset::DatasetFormat;
use labelforge_core::gateway::{SyntheticConfig, DEFAULT_BOUNDARY_MARKER, ENDPOINT_ENV};
use labelforge_core::labelopt::{DEFAULT_MAX_ITERATIONS, DEFAULT_RESTARTS};
use labelforge_core::{PromptTemplate, SplitSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Invalid or unreadable configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub seeds: Seeds,
    pub fit: FitConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub template: PromptTemplate,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub report: ReportSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// `jsonl` or `csv`; inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Labeling, demonstration and test fractions.
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: SplitSpec::default().fractions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub labeling: u64,
    pub optimizer: u64,
    pub sweep: u64,
    pub bootstrap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub ks: Vec<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}
fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub ns: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
}

fn default_runs() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Synthetic,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_marker")]
    pub boundary_marker: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Caps concurrent requests below what the provider advertises.
    #[serde(default)]
    pub max_concurrency: Option<usize>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

fn default_marker() -> String {
    DEFAULT_BOUNDARY_MARKER.to_string()
}
fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSettings {
    /// Smallest N included in the correlation tables.
    #[serde(default = "default_min_n")]
    pub min_n: usize,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_min_n() -> usize {
    1
}
fn default_n_boot() -> usize {
    labelforge_core::analytics::DEFAULT_BOOTSTRAP
}
fn default_window() -> usize {
    labelforge_core::analytics::DEFAULT_WINDOW
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings {
            min_n: default_min_n(),
            n_boot: default_n_boot(),
            window: default_window(),
        }
    }
}

/// Command-line values that replace config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub ks: Option<Vec<usize>>,
    pub ns: Option<Vec<usize>>,
    pub runs: Option<usize>,
    pub restarts: Option<usize>,
    pub max_iterations: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    /// Reads the config, resolves relative paths against its directory, then
    /// applies the endpoint variable and command-line overrides in that order.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset.path = base.join(&cfg.dataset.path);
        cfg.output_dir = base.join(&cfg.output_dir);
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.is_empty() {
                cfg.provider.endpoint = Some(endpoint);
            }
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.endpoint {
            self.provider.endpoint = Some(v.clone());
        }
        if let Some(v) = &o.ks {
            self.fit.ks = v.clone();
        }
        if let Some(v) = &o.ns {
            self.eval.ns = v.clone();
        }
        if let Some(v) = o.runs {
            self.eval.runs = v;
        }
        if let Some(v) = o.restarts {
            self.fit.restarts = v;
        }
        if let Some(v) = o.max_iterations {
            self.fit.max_iterations = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.fit.ks.is_empty() || self.fit.ks.contains(&0) {
            return config_err("fit.ks must be a non-empty list of positive sizes");
        }
        if !strictly_increasing(&self.fit.ks) {
            return config_err("fit.ks must be sorted ascending without repeats");
        }
        if self.eval.ns.is_empty() || !strictly_increasing(&self.eval.ns) {
            return config_err("eval.ns must be a non-empty list sorted ascending without repeats");
        }
        if self.eval.runs == 0 {
            return config_err("eval.runs must be at least 1");
        }
        if self.fit.restarts == 0 || self.fit.max_iterations == 0 {
            return config_err("fit.restarts and fit.max_iterations must be at least 1");
        }
        self.split_spec()
            .validate()
            .map_err(|e| ConfigError(format!("split: {e}")))?;
        self.dataset_format()?;
        if self.report.window == 0 || self.report.n_boot == 0 {
            return config_err("report.window and report.n_boot must be at least 1");
        }
        let p = &self.provider;
        if p.boundary_marker.is_empty() {
            return config_err("provider.boundary_marker must be non-empty");
        }
        if p.max_concurrency == Some(0) || p.timeout_secs == 0 {
            return config_err(
                "provider.max_concurrency and provider.timeout_secs must be positive",
            );
        }
        match p.kind {
            ProviderKind::Http => {
                if p.endpoint.as_deref().is_none_or(str::is_empty) {
                    return config_err(format!(
                        "http provider needs provider.endpoint or {ENDPOINT_ENV}"
                    ));
                }
            }
            ProviderKind::Synthetic => {
                let Some(s) = &p.synthetic else {
                    return config_err("synthetic provider needs a [provider.synthetic] section");
                };
                s.validate().map_err(|e| ConfigError(e.to_string()))?;
                if s.boundary_marker != p.boundary_marker {
                    return config_err(
                        "provider.synthetic.boundary_marker differs from provider.boundary_marker",
                    );
                }
            }
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            fractions: self.split.fractions,
            seed: self.seeds.split,
        }
    }

    pub fn dataset_format(&self) -> Result<DatasetFormat, ConfigError> {
        match &self.dataset.format {
            Some(f) => f
                .parse()
                .map_err(|e| ConfigError(format!("dataset.format: {e}"))),
            None => Ok(DatasetFormat::from_path(&self.dataset.path)),
        }
    }

    /// SHA-256 of the experiment settings. Output location and endpoint are
    /// excluded so the same experiment hashes equally wherever it runs.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.provider.endpoint = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn strictly_increasing(xs: &[usize]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}
