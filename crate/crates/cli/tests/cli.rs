use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clinicsim_core::domain::Ontology;
use clinicsim_core::eval::cases::load_cases;

fn clinicsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clinicsim"))
        .args(args)
        .env_remove("CLINICSIM_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = clinicsim(args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_bundle(dir: &Path) {
    ok(&["fixtures", "--n-train", "6", "--n-test", "4", "--seed", "5", "--out", s(dir)]);
}

#[test]
fn fixtures_default_split_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let msg = ok(&["fixtures", "--out", s(a.path())]);
    assert!(msg.contains("100 train and 132 test"), "{msg}");
    ok(&["fixtures", "--out", s(b.path())]);
    for f in ["cases-train.json", "cases-test.json", "script.json", "run.toml"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let train = load_cases(&a.path().join("cases-train.json"), &Ontology::default()).unwrap();
    let test = load_cases(&a.path().join("cases-test.json"), &Ontology::default()).unwrap();
    assert_eq!((train.len(), test.len()), (100, 132));
}

#[test]
fn fixtures_reject_empty_split() {
    let d = tempfile::tempdir().unwrap();
    let out = clinicsim(&["fixtures", "--n-train", "0", "--out", s(d.path())]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("n-train"), "{}", stderr(&out));
}

#[test]
fn run_writes_reports_and_reruns_identically() {
    let d = tempfile::tempdir().unwrap();
    small_bundle(d.path());
    let cfg = d.path().join("run.toml");
    let first = d.path().join("out1");
    let second = d.path().join("out2");
    let text = ok(&["run", "--config", s(&cfg), "--out", s(&first)]);
    assert!(text.contains("Accuracy by memory variant"), "{text}");
    ok(&["run", "--config", s(&cfg), "--out", s(&second)]);
    for f in ["report.json", "report.txt", "manifest.json", "config.toml"] {
        assert!(first.join(f).is_file(), "missing {f}");
    }
    for f in ["report.json", "report.txt"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    // the bundle's run file uses the fixture seed
    assert!(first.join("sd-quiz-both/seed-5/memory-after.json").is_file());

    // report rebuilds the same tables from the metrics files
    let rebuilt = d.path().join("rebuilt");
    ok(&["report", s(&first), "--out", s(&rebuilt)]);
    assert_eq!(fs::read(first.join("report.txt")).unwrap(), fs::read(rebuilt.join("report.txt")).unwrap());
}

#[test]
fn run_filters_by_memory_and_plugin() {
    let d = tempfile::tempdir().unwrap();
    small_bundle(d.path());
    let out = d.path().join("out");
    ok(&[
        "run",
        "--config",
        s(&d.path().join("run.toml")),
        "--memory",
        "both",
        "--no-plugin",
        "--out",
        s(&out),
    ]);
    let mut dirs: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["sd-exam-both-noplugin", "sd-quiz-both-noplugin"]);
}

#[test]
fn malformed_config_reports_the_field() {
    let d = tempfile::tempdir().unwrap();
    small_bundle(d.path());
    let cfg = d.path().join("run.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    let broken = text.replacen("vote_k = 5", "vote_k = \"five\"", 1);
    assert_ne!(broken, text);
    fs::write(&cfg, broken).unwrap();
    let out = clinicsim(&["run", "--config", s(&cfg), "--out", s(&d.path().join("out"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("run.vote_k"), "{}", stderr(&out));
}

#[test]
fn session_with_unknown_case_fails() {
    let d = tempfile::tempdir().unwrap();
    small_bundle(d.path());
    let out = clinicsim(&["session", "nobody-001", "--config", s(&d.path().join("run.toml"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nobody-001"), "{}", stderr(&out));
}

#[test]
fn original_scenario_prints_the_recorded_dialogue() {
    let d = tempfile::tempdir().unwrap();
    small_bundle(d.path());
    let case = &load_cases(&d.path().join("cases-train.json"), &Ontology::default()).unwrap()[0];
    let text = ok(&[
        "session",
        &case.case_id,
        "--config",
        s(&d.path().join("run.toml")),
        "--scenario",
        "original",
    ]);
    let expected: Vec<String> = case
        .original_dialogue
        .utterances
        .iter()
        .map(|u| format!("{:>3} {}: {}", u.turn_index, u.speaker.label(), u.text))
        .collect();
    let printed: Vec<&str> = text
        .lines()
        .filter(|l| l.contains("Psychiatrist: ") || l.contains("Patient: "))
        .collect();
    assert_eq!(printed, expected);
    assert!(text.contains("attempt 1:"));
}

#[test]
fn plugin_off_session_prints_no_instructions() {
    let d = tempfile::tempdir().unwrap();
    small_bundle(d.path());
    let cfg = d.path().join("run.toml");
    let on = ok(&["session", "train-001", "--config", s(&cfg)]);
    assert!(on.contains("[instruction]"));
    let off = ok(&["session", "train-001", "--config", s(&cfg), "--no-plugin"]);
    assert!(!off.contains("[instruction]"));
    assert!(off.contains("Psychiatrist: "));
}
