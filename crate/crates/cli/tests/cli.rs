use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ONE_TRADER: &str = r#"
name = "one-trader"

[[class]]
name = "traders"
kind = "trader"
base = true
terms = [
  { constant = true, value = 0.4 },
  { attribute = "time_horizon", transform = "linear", value = -0.6 },
  { attribute = "levy", transform = "linear", value = -1.2 },
]
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lclogit"))
        .args(args)
        .current_dir(dir)
        .env("LCLOGIT_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Simulated single-trader data in `dir/data`.
fn one_trader_data(dir: &Path, respondents: &str) {
    std::fs::write(dir.join("one.spec"), ONE_TRADER).unwrap();
    let o = run(
        dir,
        &["simulate", "--seed", "5", "--out", "data", "--respondents", respondents, "--spec", "one.spec"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn estimate_args<'a>(out: &'a str) -> Vec<&'a str> {
    vec![
        "estimate",
        "--out",
        out,
        "--observations",
        "data/observations.csv",
        "--respondent-file",
        "data/respondents.csv",
        "--spec",
        "one.spec",
    ]
}

#[test]
fn design_succeeds_and_rejects_bad_task_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["design", "--seed", "42", "--out", "d"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path().join("d/design.csv"));
    assert_eq!(csv.lines().count(), 49);
    assert!(dir.path().join("d/design_diagnostics.toml").exists());
    assert!(read(dir.path().join("d/config.toml")).contains("seed = 42"));

    let o = run(dir.path(), &["design", "--tasks", "47", "--out", "bad"]);
    assert_eq!(code(&o), 1);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn design_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&run(dir.path(), &["design", "--seed", "9", "--out", out])), 0);
    }
    let a = std::fs::read(dir.path().join("a/design.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/design.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_writes_the_survey_sized_sample() {
    let dir = tempfile::tempdir().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let spec = root.join("specs/table4_recovery.spec");
    let covs = root.join("specs/shiraz_covariates.spec");
    let o = run(
        dir.path(),
        &[
            "simulate",
            "--seed",
            "1",
            "--out",
            "s",
            "--respondents",
            "489",
            "--spec",
            spec.to_str().unwrap(),
            "--covariates",
            covs.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let obs = read(dir.path().join("s/observations.csv"));
    assert_eq!(obs.lines().count(), 2934 + 1);
    assert_eq!(read(dir.path().join("s/respondents.csv")).lines().count(), 489 + 1);
    assert!(dir.path().join("s/observations.truth.csv").exists());

    let o = run(dir.path(), &["simulate", "--respondents", "0", "--spec", spec.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn estimate_reports_a_converged_fit() {
    let dir = tempfile::tempdir().unwrap();
    one_trader_data(dir.path(), "300");
    let o = run(dir.path(), &estimate_args("fit"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: toml::Value = toml::from_str(&read(dir.path().join("fit/summary.toml"))).unwrap();
    assert!(summary["log_likelihood"].as_float().unwrap() < 0.0);
    assert_eq!(summary["n_params"].as_integer(), Some(3));
    assert!(summary["aic"].as_float().is_some() && summary["bic"].as_float().is_some());
    assert_eq!(summary["converged"].as_bool(), Some(true));
    let params = read(dir.path().join("fit/parameters.csv"));
    assert!(params.starts_with("parameter,value,std_err,t_test,p_value"));
    assert_eq!(params.lines().count(), 4);

    // the WTP step reads the artifact back; shares of one class are trivially 1
    let o = run(
        dir.path(),
        &[
            "wtp",
            "--out",
            "w",
            "--fit",
            "fit/fit.toml",
            "--observations",
            "data/observations.csv",
            "--respondent-file",
            "data/respondents.csv",
            "--spec",
            "one.spec",
        ],
    );
    assert!(code(&o) == 0 || code(&o) == 2, "{}", String::from_utf8_lossy(&o.stderr));
    let shares = read(dir.path().join("w/shares.csv"));
    for line in shares.lines().skip(1) {
        let total: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() <= 1e-8, "{line}");
    }
}

#[test]
fn iteration_cap_exits_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    one_trader_data(dir.path(), "200");
    std::fs::write(dir.path().join("capped.toml"), "[fit]\nmax_iter = 1\nstarts = 1\n").unwrap();
    let mut args = vec!["--config", "capped.toml"];
    args.extend(estimate_args("capped"));
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(dir.path().join("capped/summary.toml"));
    assert!(summary.contains("converged = false"), "{summary}");
    assert!(read(dir.path().join("capped/config.toml")).contains("max_iter = 1"));
}

#[test]
fn malformed_observations_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    one_trader_data(dir.path(), "20");
    let path = dir.path().join("data/observations.csv");
    let text = read(path.clone());
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let vote = header.iter().position(|h| *h == "vote").unwrap();
    let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
    fields[vote] = "maybe".into();
    lines[3] = fields.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = run(dir.path(), &estimate_args("broken"));
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row"), "{err}");
}

const SURVEY_ARTIFACT: &str = r#"
classes = ["yea_sayers", "nay_sayers", "historical_site_yea_sayers", "religious_site_nay_sayers", "traders"]
categories = ["historical", "religious", "gardens"]

[shares]
yea_sayers = 0.227
nay_sayers = 0.139
historical_site_yea_sayers = 0.074
religious_site_nay_sayers = 0.368
traders = 0.192

[segment_wtp.yea_sayers]
historical = 2500000.0
religious = 2500000.0
gardens = 2500000.0

[segment_wtp.nay_sayers]
historical = "NW"
religious = "NW"
gardens = "NW"

[segment_wtp.historical_site_yea_sayers]
historical = 904170.0
religious = "NW"
gardens = "NW"

[segment_wtp.religious_site_nay_sayers]
historical = 940170.0
religious = "NW"
gardens = 572090.0

[segment_wtp.traders]
historical = 987700.0
religious = 747050.0
gardens = 550930.0
"#;

#[test]
fn survey_segment_values_aggregate_to_household_averages() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("segments.toml"), SURVEY_ARTIFACT).unwrap();
    let o = run(dir.path(), &["wtp", "--fit", "segments.toml", "--out", "w"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let wtp = read(dir.path().join("w/wtp.csv"));
    let want = [("historical", 1_170_030.0), ("religious", 710_934.0), ("gardens", 883_808.0)];
    for (line, (cat, value)) in wtp.lines().skip(1).zip(want) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], cat);
        let got: f64 = fields[1].parse().unwrap();
        assert!((got - value).abs() <= 2.0, "{cat}: {got}");
    }
    assert!(wtp.lines().nth(2).unwrap().contains("NW"));
    let shares = read(dir.path().join("w/shares.csv"));
    let row = shares.lines().nth(1).unwrap();
    let total: f64 = row.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() <= 1e-8);
}

#[test]
fn unknown_commands_and_missing_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&run(dir.path(), &["estimate"])), 1);
    assert_eq!(code(&run(dir.path(), &["wtp", "--fit", "missing.toml"])), 1);
}
