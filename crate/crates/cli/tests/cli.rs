use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nakasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nakasim")).args(args).env_remove("NAKASIM_OUT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn traces_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(traces_under(&p));
        } else if p.extension().is_some_and(|e| e == "jsonl") {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn lists_all_presets() {
    let o = nakasim(&["presets"]);
    assert!(o.status.success());
    let text = stdout(&o);
    // Wrapped descriptions continue on indented lines.
    let names: Vec<&str> =
        text.lines().filter(|l| !l.starts_with(' ')).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names.len(), 9, "{text}");
    for want in ["prop1_rental_doublespend", "thm1_stubborn_unbounded", "thm4_split_brain", "bounds_montecarlo"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
}

#[test]
fn shows_preset_source() {
    let o = nakasim(&["presets", "--show", "thm3_recovery"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("name = \"thm3_recovery\""));
    let o = nakasim(&["presets", "--show", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_report_and_traces_that_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nakasim(&["run", "--preset", "prop1_rental_doublespend", "--trials", "12", "--traces", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"], "prop1_rental_doublespend");
    assert_eq!(report["variants"][0]["trials"], 12);

    let traces = traces_under(&dir.path().join("traces"));
    assert_eq!(traces.len(), 12);
    // Successful double spends are consistency violations, so verification fails.
    let args: Vec<&str> = ["verify", "--property", "consistency", "--property", "consistency_bruteforce"]
        .into_iter()
        .chain(traces.iter().map(|p| p.to_str().unwrap()))
        .collect();
    let o = nakasim(&args);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 24);
    assert!(text.contains("\"pass\":false") && text.contains("conflicting blocks"));
}

#[test]
fn stubborn_traces_verify_clean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nakasim(&["run", "--preset", "thm3_recovery", "--trials", "3", "--traces", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let traces = traces_under(&dir.path().join("traces"));
    let mut args = vec![
        "verify",
        "-p",
        "consistency",
        "-p",
        "recovery_lemma",
        "-p",
        "liveness",
        "--t-conf",
        "400",
        "--since",
        "410",
    ];
    args.extend(traces.iter().map(|p| p.to_str().unwrap()));
    let o = nakasim(&args);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("\"pass\":false"));
}

#[test]
fn thm1_preset_passes() {
    let o = nakasim(&["run", "--preset", "thm1_stubborn_unbounded", "--verify-only"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("all gates pass"));
}

#[test]
fn failing_gate_exits_one() {
    let o = nakasim(&[
        "run",
        "--preset",
        "thm2_liveness",
        "--trials",
        "5",
        "--override",
        "liveness.t_conf=1",
        "--verify-only",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("[FAIL] liveness"));
}

#[test]
fn verify_only_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = nakasim(&[
        "run",
        "--preset",
        "partition_na_sa",
        "--trials",
        "2",
        "--verify-only",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn malformed_scenario_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "version = 1\nname = \"bad\"\ndelta = \"two\"\n").unwrap();
    let o = nakasim(&["run", "--scenario", path.to_str().unwrap(), "--verify-only"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&path, "version = 1\nname = \"bad\"\np = [\n").unwrap();
    let o = nakasim(&["run", "--scenario", path.to_str().unwrap(), "--verify-only"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn unknown_property_is_an_error() {
    let o = nakasim(&["verify", "--property", "safety", "whatever.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("safety") && err.contains("recovery_lemma"), "{err}");
}

#[test]
fn report_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |jobs: &str| {
        let out = dir.path().join(jobs);
        let o = nakasim(&[
            "run",
            "--preset",
            "thm4_split_brain",
            "--trials",
            "6",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.code().is_some_and(|c| c < 2), "{}", stderr(&o));
        fs::read_to_string(out.join("report.json")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn overrides_and_seed_apply() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nakasim(&[
        "run",
        "--preset",
        "prop1_rental_doublespend",
        "--trials",
        "3",
        "--seed",
        "77",
        "--override",
        "k=4",
        "--out",
        out,
    ]);
    assert!(o.status.code().is_some_and(|c| c < 2), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 77);
    let o = nakasim(&["run", "--preset", "prop1_rental_doublespend", "--override", "no_equals_sign", "--verify-only"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stored_traces_reproduce_run_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = nakasim(&["run", "--preset", "history_rewrite", "--trials", "4", "--traces", "--out", out]);
    assert!(o.status.code().is_some_and(|c| c < 2), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let mut compared = 0;
    for v in report["variants"].as_array().unwrap() {
        for t in v["trial_results"].as_array().unwrap() {
            let label: String =
                v["label"].as_str().unwrap().chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
            let path = dir.path().join("traces").join(label).join(format!("trial-{:05}.jsonl", t["trial"].as_u64().unwrap()));
            let o = nakasim(&["verify", "-p", "consistency", path.to_str().unwrap()]);
            let line = stdout(&o);
            let verdict: serde_json::Value = serde_json::from_str(line.split_once(' ').unwrap().1.trim()).unwrap();
            assert_eq!(verdict, t["consistency"], "{}", path.display());
            compared += 1;
        }
    }
    assert_eq!(compared, 8);
}

#[test]
fn overrides_equal_edited_files() {
    let dir = tempfile::tempdir().unwrap();
    let src = stdout(&nakasim(&["presets", "--show", "prop1_rental_doublespend"]));
    assert!(src.contains("\nk = 6\n"));
    let edited = dir.path().join("edited.toml");
    fs::write(&edited, src.replacen("\nk = 6\n", "\nk = 4\n", 1)).unwrap();

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    nakasim(&["run", "--scenario", edited.to_str().unwrap(), "--trials", "5", "--out", a.to_str().unwrap()]);
    let o = nakasim(&[
        "run",
        "--preset",
        "prop1_rental_doublespend",
        "--override",
        "k=4",
        "--trials",
        "5",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.code().is_some_and(|c| c < 2), "{}", stderr(&o));
    let ra = fs::read_to_string(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read_to_string(b.join("report.json")).unwrap());
}
