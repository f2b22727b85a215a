use std::process::Command;

fn brwlab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_brwlab"));
    c.env_remove("BRWLAB_THREADS");
    c
}

#[test]
fn tail_without_law_fails_with_key() {
    let out = brwlab().args(["tail", "--n", "8", "--y", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("law.kind"), "{err}");
}

#[test]
fn calibrate_prints_a_law_fragment() {
    let out = brwlab().args(["calibrate", "--values", "1,0,-2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("law.kind = lattice"));
    assert!(text.contains("law.params.probs = 0.071783945862572973,"));
}

#[test]
fn threads_env_does_not_change_payload() {
    let run = |threads: &str| {
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("tail.csv");
        let st = brwlab()
            .env("BRWLAB_THREADS", threads)
            .args(["tail", "--law", "lattice3", "--n", "8,16", "--y", "0,1,2", "--reps", "300"])
            .args(["--prune", "window:12", "--seed", "4", "--no-certify", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(st.code() == Some(0) || st.code() == Some(2));
        (
            std::fs::read(&path).unwrap(),
            std::fs::read(d.path().join("tail.manifest.json")).unwrap(),
        )
    };
    assert_eq!(run("1"), run("2"));
}

#[test]
fn bad_threads_env_is_an_error() {
    let out = brwlab()
        .env("BRWLAB_THREADS", "zero")
        .args(["simulate", "--law", "lattice3", "--n", "4", "--reps", "10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn print_config_round_trips() {
    let out = brwlab()
        .args(["frontier", "--law", "lattice3", "--n", "64", "--y", "0,2", "--margin", "30", "--print-config"])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    let c = brwlab::cli::ExperimentConfig::from_text(&text).unwrap();
    assert_eq!(c.n, vec![64]);
    assert_eq!(c.option("margin"), Some("30"));
}
