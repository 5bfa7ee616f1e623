use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fairsynth(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairsynth"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const CONFIG: &str = r#"
version = 1
output_dir = "out"
seeds = [1, 2]

[dataset]
path = "data.csv"
label = "y"
protected = "g"
columns = [
  { name = "x", kind = "numeric" },
  { name = "g", kind = "categorical" },
  { name = "y", kind = "numeric" },
]

[protected]
group_a = "a"
group_b = "b"

[model]
n_trees = 5
max_depth = 4
max_features = "all"

[synthetic]
source = "surrogate"
size = 300
nnaa_sample = 100

[mitigation]
techniques = ["eo_threshold", "reweigh"]
"#;

/// Deterministic two-group data with an informative `x`.
fn data() -> String {
    let mut s = String::from("x,g,y\n");
    for i in 0..400u32 {
        let g = if i % 2 == 0 { "a" } else { "b" };
        let y = u32::from((i * 7919) % 10 < 4 + (i % 2));
        let x = f64::from(y) + f64::from((i * 104_729) % 97) / 60.0;
        s.push_str(&format!("{x},{g},{y}\n"));
    }
    s
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), data()).unwrap();
    fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = setup();
    let ok = fairsynth(&["validate", "config.toml"], dir.path());
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("2 seeds"));

    fs::write(dir.path().join("bad.toml"), CONFIG.replace("version = 1", "version = 2")).unwrap();
    assert_eq!(code(&fairsynth(&["validate", "bad.toml"], dir.path())), 1);
    assert_eq!(code(&fairsynth(&["validate", "missing.toml"], dir.path())), 1);
}

#[test]
fn run_then_report() {
    let dir = setup();
    let run = fairsynth(&["run", "config.toml", "--seed-subset", "2", "--output", "o2"], dir.path());
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let out = dir.path().join("o2");
    for f in [
        "report.json",
        "prevalence.csv",
        "significance.csv",
        "scatter_real_vs_synth.csv",
        "boxplot_mitigation.csv",
        "tradeoff_scatter.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let before = fs::read(out.join("report.json")).unwrap();
    let report = fairsynth(&["report", "o2"], dir.path());
    assert_eq!(code(&report), 0, "{}", String::from_utf8_lossy(&report.stderr));
    assert_eq!(fs::read(out.join("report.json")).unwrap(), before);

    assert_eq!(code(&fairsynth(&["run", "config.toml", "--seed-subset", "9"], dir.path())), 1);
    assert_eq!(code(&fairsynth(&["report", "nowhere"], dir.path())), 2);
}

#[test]
fn bad_data_and_usage_errors() {
    let dir = setup();
    fs::write(dir.path().join("data.csv"), "x,g,y\nnot-a-number,a,1\n").unwrap();
    assert_eq!(code(&fairsynth(&["run", "config.toml"], dir.path())), 2);
    assert_eq!(code(&fairsynth(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&fairsynth(&["--help"], dir.path())), 0);
}
