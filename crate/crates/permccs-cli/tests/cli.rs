use std::path::PathBuf;
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn permccs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_permccs")).args(args).env_remove("PERMCCS_BUDGET").output().expect("binary runs")
}

fn with_files(cmd: &str, files: &[&str], extra: &[&str]) -> Output {
    let paths: Vec<String> = files.iter().map(|f| data(f).display().to_string()).collect();
    let mut args = vec![cmd];
    args.extend(paths.iter().map(String::as_str));
    args.extend(extra);
    permccs(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("permccs-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_prints_the_unique_result() {
    let o = with_files("run", &["prg.proc"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "c1!(2, 4) | c4!()");
    let o = with_files("run", &["nil.proc"], &[]);
    assert_eq!((o.status.code(), stdout(&o).trim().to_string()), (Some(0), "0".to_string()));
}

#[test]
fn run_flags_races() {
    let o = with_files("run", &["race.proc"], &[]);
    assert_eq!(o.status.code(), Some(10));
    let out = stdout(&o);
    assert!(out.contains("c1!(1, 2) | c1!(3) | c4!()"), "{out}");
    assert!(out.contains("c1!(1) | c1!(3, 6) | c4!()"), "{out}");
}

#[test]
fn run_with_trace_starts_from_the_input() {
    let o = with_files("run", &["prg.proc"], &["--trace", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["trace"][0]["rule"], "init");
    assert!(v["trace"].as_array().unwrap().len() > 5);
}

#[test]
fn certify_reports_narratives_and_violations() {
    let o = with_files("certify", &["prg_split.sys"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("certified: c1!(2, 4) | c4!()"));
    let o = with_files("certify", &["bare_output.sys"], &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("lacks c!"), "{}", stdout(&o));
    let o = with_files("certify", &["qsort4.sys"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("certified: a_1!(1) | a_2!(2) | a_3!(3) | a_4!(4) | r!()"));
}

#[test]
fn satisfy_reports_verdicts_and_classes() {
    let o = with_files("satisfy", &["prg_split.sys", "prg_result.frm", "prg.env"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("sat"));
    let o = with_files("satisfy", &["prg_env_obligation.sys", "prg_result.frm", "prg.env"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).trim(), "unsat (EnvObligation)");
    let o = with_files("satisfy", &["unit.sys", "emp.frm", "empty.env"], &[]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn prove_accepts_scripts_and_localizes_rejections() {
    for f in ["prg_le9.proof", "prg_gt9.proof", "nil.proof"] {
        let o = with_files("prove", &[f], &[]);
        assert_eq!(o.status.code(), Some(0), "{f}: {}", stdout(&o));
    }
    let text = std::fs::read_to_string(data("prg_le9.proof")).unwrap();
    let bad = scratch("mutant.proof", &text.replacen("(lIn :seq", "(lOut :seq", 1));
    let o = permccs(&["prove", bad.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(11));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["accepted"], false);
    assert!(v["paths"][0].as_str().unwrap().starts_with("root."));
}

#[test]
fn oracle_suites_pass() {
    for s in ["confluence", "locality", "merging"] {
        let o = permccs(&["oracle", s, "--seed", "7", "--systems", "80"]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        assert!(stdout(&o).starts_with("pass"));
    }
    assert_eq!(permccs(&["oracle", "nope"]).status.code(), Some(2));
}

#[test]
fn parse_errors_and_budgets_have_their_exit_codes() {
    let bad = scratch("bad.proc", "c!(1");
    assert_eq!(permccs(&["run", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(permccs(&["run", "/nonexistent/file.proc"]).status.code(), Some(2));
    let o = with_files("run", &["prg.proc"], &["--budget", "3"]);
    assert_eq!(o.status.code(), Some(3));
    let o = Command::new(env!("CARGO_BIN_EXE_permccs"))
        .arg("certify")
        .arg(data("prg_split.sys"))
        .env("PERMCCS_BUDGET", "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn json_output_is_byte_identical_across_runs() {
    for args in [vec!["certify", "prg_split.sys", "--json"], vec!["run", "race.proc", "--json", "--trace"]] {
        let a = with_files(args[0], &[args[1]], &args[2..]);
        let b = with_files(args[0], &[args[1]], &args[2..]);
        assert_eq!(a.stdout, b.stdout);
        assert!(!a.stdout.is_empty());
    }
    let a = permccs(&["oracle", "all", "--systems", "15", "--seed", "3", "--json"]);
    let b = permccs(&["oracle", "all", "--systems", "15", "--seed", "3", "--json"]);
    assert_eq!(a.stdout, b.stdout);
}
