use std::fs;
use std::path::{Path, PathBuf};

use labelforge_cli::{exit_code, run, EXIT_CONFIG, EXIT_INCOMPLETE, EXIT_PROVIDER};
use labelforge_core::eval::read_records;
use labelforge_core::labelopt::LabelSetFile;

struct Project {
    dir: tempfile::TempDir,
}

impl Project {
    /// `per_class` sentences for each of 3 classes and a config built from
    /// the `fit` and `eval` TOML fragments.
    fn new(per_class: usize, fractions: &str, noise: f64, fit: &str, eval: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut data = String::new();
        for i in 0..per_class * 3 {
            data.push_str(&format!(
                "{{\"text\": \"item {i} of the fixture\", \"class\": {}}}\n",
                i % 3 + 1
            ));
        }
        fs::write(dir.path().join("data.jsonl"), data).unwrap();
        let config = format!(
            r#"output_dir = "run"

[dataset]
path = "data.jsonl"

[split]
fractions = {fractions}

[seeds]
split = 1
labeling = 2
optimizer = 3
sweep = 4
bootstrap = 5

[fit]
{fit}

[eval]
{eval}

[provider]
kind = "synthetic"

[provider.synthetic]
num_classes = 3
vocab_size = 30
planted_gold = [4, 11, 25]
signal_strength = 1.0
noise_scale = {noise}
seed = 8
demo_strength = 1.0

[report]
n_boot = 200
"#
        );
        fs::write(dir.path().join("labelforge.toml"), config).unwrap();
        Project { dir }
    }

    fn small() -> Self {
        Self::new(
            40,
            "[0.25, 0.25, 0.5]",
            0.45,
            "ks = [10, 20, 30]",
            "ns = [0, 2, 4]\nruns = 3",
        )
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("labelforge.toml")
    }

    fn run_dir(&self) -> PathBuf {
        self.dir.path().join("run")
    }

    fn cmd(&self, args: &[&str]) -> (anyhow::Result<()>, String) {
        let config = self.config();
        let mut full = vec!["labelforge", "--config", config.to_str().unwrap()];
        full.extend_from_slice(args);
        let mut out = Vec::new();
        let r = run(full, &mut out);
        (r, String::from_utf8(out).unwrap())
    }

    fn ok(&self, args: &[&str]) -> String {
        let (r, out) = self.cmd(args);
        if let Err(e) = r {
            panic!("{args:?} failed: {e:#}");
        }
        out
    }

    fn label_set(&self, k: usize) -> LabelSetFile {
        let path = self.run_dir().join("labelsets").join(format!("K{k}.json"));
        serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
    }

    fn results(&self) -> PathBuf {
        self.run_dir().join("results").join("results.jsonl")
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn noise_free_fit_recovers_gold_at_every_k() {
    let p = Project::new(
        100,
        "[0.5, 0.25, 0.25]",
        0.0,
        "ks = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]",
        "ns = [0]",
    );
    let out = p.ok(&["fit-labels"]);
    for k in (10..=100).step_by(10) {
        let f = p.label_set(k);
        assert_eq!(f.labels, vec!["Ġtok4", "Ġtok11", "Ġtok25"], "K={k}");
        assert_eq!(f.k, k);
        assert_eq!(f.restarts, 10);
    }
    assert_eq!(out.matches("(same as K=").count(), 9, "{out}");
}

#[test]
fn single_k_writes_one_file_and_a_manifest() {
    let p = Project::small();
    p.ok(&["--ks", "20", "fit-labels"]);
    let files: Vec<_> = fs::read_dir(p.run_dir().join("labelsets"))
        .unwrap()
        .collect();
    assert_eq!(files.len(), 1);
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&p.run_dir().join("manifest.json"))).unwrap();
    let stage = &manifest["stages"]["fit-labels"];
    assert_eq!(stage["config_hash"].as_str().unwrap().len(), 64);
    assert!(stage["files"]["labelsets/K20.json"].is_string());
    assert!(p.run_dir().join("split.json").exists());
}

#[test]
fn zero_shot_smoke_gives_one_record_per_set() {
    let p = Project::small();
    p.ok(&["fit-labels"]);
    p.ok(&["--ns", "0", "eval"]);
    let records = read_records(&p.results()).unwrap();
    assert_eq!(records.len(), 3);
    let ids: Vec<&str> = records.iter().map(|r| r.label_set_id.as_str()).collect();
    assert_eq!(ids, ["K10", "K20", "K30"]);
}

#[test]
fn full_grid_has_expected_record_counts() {
    // 108 labeling, 63 demonstration and 9 test sentences
    let p = Project::new(
        60,
        "[0.6, 0.35, 0.05]",
        0.45,
        "ks = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]\nrestarts = 2",
        "ns = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 33, 34, 35, 36, 37, 38, 39, 40]\nruns = 10",
    );
    p.ok(&["fit-labels"]);
    p.ok(&["eval"]);
    let records = read_records(&p.results()).unwrap();
    assert_eq!(records.len(), 10 * (1 + 40 * 10));
    for k in (10..=100).step_by(10) {
        let id = format!("K{k}");
        assert_eq!(
            records.iter().filter(|r| r.label_set_id == id).count(),
            1 + 40 * 10
        );
    }
    assert!(records.iter().all(|r| r.n_test == 9));
}

#[test]
fn interrupted_eval_resumes_to_identical_results() {
    let a = Project::small();
    a.ok(&["fit-labels"]);
    a.ok(&["eval"]);

    let b = Project::small();
    b.ok(&["fit-labels"]);
    let out = b.ok(&["eval", "--cell-limit", "10"]);
    assert!(out.contains("run eval again to resume"), "{out}");
    let (r, _) = b.cmd(&["report"]);
    assert_eq!(exit_code(&r.unwrap_err()), EXIT_INCOMPLETE);
    b.ok(&["eval", "--cell-limit", "4"]);
    b.ok(&["eval"]);
    assert_eq!(read(&a.results()), read(&b.results()));
}

#[test]
fn changed_sweep_settings_refuse_to_resume() {
    let p = Project::small();
    p.ok(&["fit-labels"]);
    p.ok(&["eval", "--cell-limit", "3"]);
    let (r, _) = p.cmd(&["--runs", "4", "eval"]);
    assert_eq!(exit_code(&r.unwrap_err()), EXIT_CONFIG);
}

#[test]
fn report_tables_have_fixed_headers_and_reproduce() {
    let p = Project::small();
    p.ok(&["fit-labels"]);
    p.ok(&["eval"]);
    p.ok(&["report"]);
    let dir = p.run_dir().join("report");
    let rank = String::from_utf8(read(&dir.join("rank_consistency.csv"))).unwrap();
    let slope = String::from_utf8(read(&dir.join("slope_correlation.csv"))).unwrap();
    assert_eq!(
        rank.lines().next().unwrap(),
        "n_demo,Mean Corr.,Std Corr.,Median Corr.,CI 2.5%,CI 97.5%"
    );
    assert_eq!(
        slope.lines().next().unwrap(),
        "K,Mean Corr.,Std Corr.,Median Corr.,CI 2.5%,CI 97.5%"
    );
    assert_eq!(rank.lines().count(), 1 + 2);
    assert!(dir.join("curves.json").exists());
    assert!(dir.join("manifest.json").exists());

    let before: Vec<Vec<u8>> = [
        "rank_consistency.csv",
        "slope_correlation.csv",
        "curves.json",
        "manifest.json",
    ]
    .iter()
    .map(|f| read(&dir.join(f)))
    .collect();
    p.ok(&["report"]);
    let after: Vec<Vec<u8>> = [
        "rank_consistency.csv",
        "slope_correlation.csv",
        "curves.json",
        "manifest.json",
    ]
    .iter()
    .map(|f| read(&dir.join(f)))
    .collect();
    assert_eq!(before, after);
}

#[test]
fn report_without_results_is_incomplete() {
    let p = Project::small();
    p.ok(&["fit-labels"]);
    let (r, _) = p.cmd(&["report"]);
    assert_eq!(exit_code(&r.unwrap_err()), EXIT_INCOMPLETE);

    p.ok(&["--ns", "0", "eval"]);
    fs::write(p.results(), "").unwrap();
    let (r, _) = p.cmd(&["--ns", "0", "report"]);
    let err = r.unwrap_err();
    assert_eq!(exit_code(&err), EXIT_INCOMPLETE);
    assert!(format!("{err:#}").contains("label set K10"), "{err:#}");
}

#[test]
fn eval_before_fit_fails() {
    let p = Project::small();
    let (r, _) = p.cmd(&["eval"]);
    assert!(format!("{:#}", r.unwrap_err()).contains("run fit-labels first"));
}

#[test]
fn config_errors_exit_with_two() {
    let p = Project::small();
    for args in [
        &["--ks", "30,10", "fit-labels"][..],
        &["--runs", "0", "eval"],
        &["--bogus-flag", "eval"],
    ] {
        let (r, _) = p.cmd(args);
        assert_eq!(exit_code(&r.unwrap_err()), EXIT_CONFIG, "{args:?}");
    }
    let r = run(
        [
            "labelforge",
            "--config",
            "/nonexistent/labelforge.toml",
            "vocab",
        ],
        &mut Vec::new(),
    );
    assert_eq!(exit_code(&r.unwrap_err()), EXIT_CONFIG);
}

#[test]
fn unreachable_endpoint_exits_with_three() {
    let p = Project::small();
    let text = fs::read_to_string(p.config())
        .unwrap()
        .replace("kind = \"synthetic\"", "kind = \"http\"");
    fs::write(p.config(), text).unwrap();
    let closed = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let (r, _) = p.cmd(&["--endpoint", &format!("http://{closed}"), "vocab"]);
    assert_eq!(exit_code(&r.unwrap_err()), EXIT_PROVIDER);
}

#[test]
fn endpoint_variable_fills_missing_endpoint() {
    let p = Project::small();
    let text = fs::read_to_string(p.config())
        .unwrap()
        .replace("kind = \"synthetic\"", "kind = \"http\"");
    fs::write(p.config(), text).unwrap();
    let (r, _) = p.cmd(&["vocab"]);
    assert_eq!(exit_code(&r.unwrap_err()), EXIT_CONFIG);

    let closed = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    std::env::set_var("LABELFORGE_ENDPOINT", format!("http://{closed}"));
    let (r, _) = p.cmd(&["vocab"]);
    std::env::remove_var("LABELFORGE_ENDPOINT");
    assert_eq!(exit_code(&r.unwrap_err()), EXIT_PROVIDER);
}

#[test]
fn vocab_and_score_print_tokens_and_logits() {
    let p = Project::small();
    let out = p.ok(&["vocab"]);
    assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 30);
    assert!(out.starts_with("0\tĠtok0\n"));

    let prompt = "Sentence: item 0 of the fixture\nCategory:";
    let out = p.ok(&["score", "--prompt", prompt, "--labels", "tok4,Ġtok11"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("Ġtok4\t") && lines[1].starts_with("Ġtok11\t"));
    let (r, _) = p.cmd(&["score", "--prompt", prompt, "--labels", "nope"]);
    assert!(r.is_err());
}
