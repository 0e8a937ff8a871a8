use std::process::{Command, Output};

fn rcqueue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcqueue")).args(args).output().unwrap()
}

#[test]
fn oracle_table_lists_every_suite() {
    let out = rcqueue(&["oracle", "--instances", "20"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("suite,instances,failures,status"));
    let suites: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(suites, ["expand_v", "expand_upsilon", "gronwall", "fwlln"]);
}

#[test]
fn simulate_rows_cover_every_rep() {
    let out = rcqueue(&["simulate", "--n", "10", "--reps", "2", "--seed", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    // header, then (nT + 1) nodes per rep at the default T = 2
    assert_eq!(text.lines().count(), 1 + 2 * 21);
    assert!(text.starts_with("rep,t,value\n"));
}

#[test]
fn fclt_rejects_case_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "mu = 1.0\nT = 1.0\n[theta]\nfamily = \"normal\"\nparams = [1.0, 1.0]\n[x]\nfamily = \"normal\"\nparams = [0.0, 1.0]\n",
    )
    .unwrap();
    let out = rcqueue(&["fclt", "--case", "ii", "--config", cfg.to_str().unwrap(), "--n", "50"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("case"));
}

#[test]
fn unstable_start_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "mu = -1.0\nw0 = 2.0\nT = 1.0\n[theta]\nfamily = \"point\"\nparams = [-1.0]\n[x]\nfamily = \"normal\"\nparams = [0.0, 1.0]\n",
    )
    .unwrap();
    let out = rcqueue(&["simulate", "--config", cfg.to_str().unwrap(), "--n", "20"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("w0 < mu/theta"));
}
