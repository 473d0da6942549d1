use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "seed = 3\nqueries_per_iteration = 5\ncandidates = 3\ntest_queries = 2\nwarmup = 2\n[drift]\niterations = 4\nperiod = 2\n";
const SCHEMA: &str = "a_0,300000\na_1,200000\na_2,100000\n";
const PLAN: &str = "AGG(NL(HJ(SS[a_0],IS[a_1]),SS[a_2])){agg}\n";

fn limao(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limao")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = limao(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json_lines(text: &str) -> Vec<serde_json::Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        std::fs::write(dir.path().join("schema.txt"), SCHEMA).unwrap();
        std::fs::write(dir.path().join("plan.txt"), PLAN).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, out: &str, seed: Option<&str>) -> String {
        let config = self.path("small.toml");
        let out = self.path(out);
        let mut args = vec!["run", "--config", p(&config), "--out", p(&out)];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        ok(&args)
    }
}

#[test]
fn run_writes_outputs_and_resume_reproduces_them() {
    let f = Fixture::new();
    let stdout = f.run("r1", None);
    assert!(stdout.contains("limao") && stdout.contains("baseline"), "{stdout}");
    for file in ["iterations.csv", "summary.json", "manifest.json", "checkpoint.lmck"] {
        assert!(f.path("r1").join(file).exists(), "{file}");
    }
    let csv = std::fs::read_to_string(f.path("r1/iterations.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);

    // Resuming a finished run replays nothing and rewrites the same files.
    let out = f.path("r1");
    ok(&["run", "--resume", "--out", p(&out)]);
    assert_eq!(std::fs::read_to_string(f.path("r1/iterations.csv")).unwrap(), csv);
}

#[test]
fn compare_and_plot_data_read_run_directories() {
    let f = Fixture::new();
    f.run("r1", None);
    f.run("r2", Some("4"));
    let (a, b) = (f.path("r1"), f.path("r2"));
    let cmp = ok(&["compare", "--a", p(&a), "--b", p(&b)]);
    assert!(cmp.contains("total latency"), "{cmp}");

    let tidy = ok(&["plot-data", "--run", p(&a)]);
    assert_eq!(tidy.lines().next().unwrap(), "system,iteration,metric,value");
    assert!(tidy.lines().skip(1).all(|l| l.split(',').count() == 4));
    let dest = f.path("tidy.csv");
    ok(&["plot-data", "--run", p(&a), "--out", p(&dest)]);
    assert_eq!(std::fs::read_to_string(dest).unwrap(), tidy);
}

#[test]
fn decompose_lists_remainder_then_break_tasks() {
    let f = Fixture::new();
    let (schema, plan) = (f.path("schema.txt"), f.path("plan.txt"));
    let lines = json_lines(&ok(&["decompose", "--schema", p(&schema), "--plan", p(&plan)]));
    let kinds: Vec<&str> = lines.iter().map(|t| t["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["OTH", "HJ", "NL"]);
    assert_eq!(lines[0]["subtree"], "AGG(CUT){agg}");
}

#[test]
fn encode_emits_features_of_the_schema_width() {
    let f = Fixture::new();
    let (schema, plan) = (f.path("schema.txt"), f.path("plan.txt"));
    let lines = json_lines(&ok(&["encode", "--schema", p(&schema), "--plan", p(&plan), "--sel", "a_0=0.25"]));
    assert_eq!(lines.len(), 3);
    for t in &lines {
        assert_eq!(t["a"].as_array().unwrap().len(), 3);
        assert_eq!(t["b"].as_array().unwrap().len(), 3 + 2 * 3);
        assert_eq!(t["d"].as_array().unwrap().len(), 4);
    }
    assert_eq!(lines[0]["a"][0].as_f64(), Some(0.25));
}

#[test]
fn predict_uses_the_final_checkpoint() {
    let f = Fixture::new();
    f.run("r1", None);
    let (run, plan) = (f.path("r1"), f.path("plan.txt"));
    for system in ["limao", "baseline"] {
        let lines = json_lines(&ok(&["predict", "--run", p(&run), "--system", system, "--plan", p(&plan)]));
        let latency = lines[0]["latency"].as_f64().unwrap();
        assert!(latency.is_finite() && latency > 0.0, "{system}: {latency}");
    }
}

#[test]
fn check_passes_on_a_small_sample() {
    let stdout = ok(&["check", "--seed", "1", "--plans", "60"]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 5, "{stdout}");
}

#[test]
fn invalid_inputs_exit_nonzero() {
    let f = Fixture::new();
    let bad = f.path("bad.toml");
    std::fs::write(&bad, "candidates = 0\n").unwrap();
    let out = f.path("never");
    assert!(!limao(&["run", "--config", p(&bad), "--out", p(&out)]).status.success());

    let (schema, plan) = (f.path("schema.txt"), f.path("plan.txt"));
    let unknown = limao(&["encode", "--schema", p(&schema), "--plan", p(&plan), "--sel", "zzz=0.5"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("zzz"));
}
