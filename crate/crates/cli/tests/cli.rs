use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hdmean(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdmean"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn one_line_stderr(out: &Output) {
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

const SIM: &str = r#"
seed = 3
histogram_bins = 4

[sweep]
n = 8
b_list = [5, 10]
norms = [2.0, "sup"]
trials = 20
mc_draws = 100
covariance = { kind = "ar1", variance = 1.0, phi = 0.5 }
"#;

fn data_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("flat.csv"), "g1,g2,g3\n1,2,3\n1,2,3\n1,2,3\n1,2,3\n").unwrap();
    fs::write(p.join("mu.csv"), "1,2,3\n").unwrap();
    fs::write(
        p.join("a.csv"),
        "0.1,-0.4,1.2\n-0.3,0.8,NA\n0.5,,0.2\n-1.1,0.3,-0.6\n0.7,-0.2,0.9\n",
    )
    .unwrap();
    fs::write(p.join("b.csv"), "3.1,-0.1,0.4\n2.6,0.2,-0.8\n3.9,NA,0.1\n2.2,0.6,0.3\n").unwrap();
    fs::write(p.join("ragged.csv"), "1,2\n3\n").unwrap();
    fs::write(p.join("sim.toml"), SIM).unwrap();
    dir
}

#[test]
fn data_at_the_null_mean() {
    let dir = data_dir();
    let out = hdmean(
        &["test", "--one-sample", "flat.csv", "--null-mean", "mu.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["statistic"], 0.0);
    assert_eq!(r["p_value"], 1.0);
    assert_eq!(r["reject"], false);
}

#[test]
fn report_has_the_fixed_key_set() {
    let dir = data_dir();
    let out = hdmean(
        &["test", "--one-sample", "a.csv", "--norm", "4", "--target", "diag"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let keys: Vec<String> = json(&out).as_object().unwrap().keys().cloned().collect();
    let mut expected = [
        "statistic",
        "critical_value",
        "p_value",
        "reject",
        "lambda",
        "psd_repaired",
        "norm",
        "normalizer",
        "n",
        "dim",
        "seed",
        "config",
    ]
    .map(String::from)
    .to_vec();
    expected.sort();
    let mut keys = keys;
    keys.sort();
    assert_eq!(keys, expected);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"norm\": \"4\""), "{text}");
}

#[test]
fn two_sample_with_outputs() {
    let dir = data_dir();
    let out = hdmean(
        &[
            "test",
            "--two-sample",
            "a.csv",
            "b.csv",
            "--mc-draws",
            "500",
            "--json-out",
            "r.json",
            "--density-out",
            "d.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["n"], serde_json::json!([5, 4]));
    assert_eq!(r["lambda"].as_array().unwrap().len(), 2);
    let density = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert!(density.starts_with("x,density\n"));
    assert_eq!(density.lines().count(), 513);
}

#[test]
fn input_errors_exit_two() {
    let dir = data_dir();
    let cases: [&[&str]; 8] = [
        &["test", "--one-sample", "missing.csv"],
        &["test", "--one-sample", "ragged.csv"],
        &["test", "--one-sample", "a.csv", "--alpha", "1.5"],
        &["test", "--one-sample", "a.csv", "--norm", "1"],
        &["test", "--one-sample", "a.csv", "--null-mean", "b.csv"],
        &["test"],
        &["verify", "--suite", "everything"],
        &["simulate", "--config", "missing.toml"],
    ];
    for args in cases {
        let out = hdmean(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        one_line_stderr(&out);
    }
    let out = hdmean(&["test", "--one-sample", "ragged.csv"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn simulate_writes_tables() {
    let dir = data_dir();
    let out = hdmean(
        &[
            "simulate",
            "--config",
            "sim.toml",
            "--csv-out",
            "t.csv",
            "--histogram-out",
            "h.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "b,norm,rejections,trials,rate,std_error");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("5,2,"));
    let hist = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 4 * 4);
    let r = json(&out);
    assert_eq!(r["cells"].as_array().unwrap().len(), 4);
    assert_eq!(r["config"]["seed"], 3);
}

#[test]
fn simulate_single_cell_and_bad_configs() {
    let dir = data_dir();
    let one = SIM
        .replace("b_list = [5, 10]", "b_list = [5]")
        .replace("norms = [2.0, \"sup\"]", "norms = [\"sup\"]");
    fs::write(dir.path().join("one.toml"), one).unwrap();
    let out = hdmean(&["simulate", "--config", "one.toml"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["cells"].as_array().unwrap().len(), 1);

    for (name, text) in [
        ("zero.toml", SIM.replace("trials = 20", "trials = 0")),
        ("unknown.toml", format!("{SIM}\ncolour = 1\n")),
        ("syntax.toml", "seed = \n".to_string()),
    ] {
        fs::write(dir.path().join(name), text).unwrap();
        let out = hdmean(&["simulate", "--config", name], dir.path());
        assert_eq!(out.status.code(), Some(2), "{name}");
        one_line_stderr(&out);
    }
}

#[test]
fn verify_exit_codes() {
    let dir = data_dir();
    let out = hdmean(&["verify", "--suite", "lemma74"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["passed"], true);

    fs::write(dir.path().join("wrong.toml"), "bound_scale = 0.5\n").unwrap();
    let out = hdmean(&["verify", "--suite", "lemma74", "--config", "wrong.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["passed"], false);

    fs::write(dir.path().join("bad.toml"), "bound_scale = 0.0\n").unwrap();
    let out = hdmean(&["verify", "--suite", "lemma74", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_same_bytes() {
    let dir = data_dir();
    let args = ["test", "--one-sample", "a.csv", "--seed", "17", "--mc-draws", "300"];
    let first = hdmean(&args, dir.path());
    let second = hdmean(&args, dir.path());
    assert_eq!(first.stdout, second.stdout);
    let other = hdmean(
        &["test", "--one-sample", "a.csv", "--seed", "18", "--mc-draws", "300"],
        dir.path(),
    );
    assert_ne!(first.stdout, other.stdout);
}
