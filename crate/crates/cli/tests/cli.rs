use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reihom(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reihom"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn cell_writes_both_correctors() {
    let dir = tempfile::tempdir().unwrap();
    let o = reihom(&["cell", "--xi", "-0.5", "--tau", "0.25"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.resolved.toml", "outer_corrector.csv", "outer_trace.csv", "inner_corrector.csv", "inner_trace.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout.lines().find(|l| l.starts_with("y-average")).unwrap();
    let v: f64 = line.rsplit('[').next().unwrap().trim_end_matches(']').parse().unwrap();
    assert!((v + 1.5).abs() < 1e-10, "{stdout}");
}

#[test]
fn effective_table_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let o = reihom(&["effective"], dir.path());
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("q_table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 18);
    assert!(dir.path().join("q_table.json").exists());
}

#[test]
fn convergence_csv_has_the_expected_header() {
    let dir = tempfile::tempdir().unwrap();
    let o = reihom(&["convergence"], dir.path());
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epsilon,rel_l2,rel_lux,runtime_s"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "epsilons = [0.25, 0.125]\n[operator]\nkind = \"identity\"\n").unwrap();
    let o = reihom(&["macro", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("identity"), "{resolved}");
    assert!(dir.path().join("macro_history.csv").exists());
}

#[test]
fn manufactured_passes_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = reihom(&["manufactured"], dir.path());
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("manufactured.csv")).unwrap();
    assert!(text.starts_with("n,M,max_err,order_s,order_t"));
}

#[test]
fn verify_axioms_passes_for_the_default_operator() {
    let dir = tempfile::tempdir().unwrap();
    let o = reihom(&["verify-axioms", "--samples", "500"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(dir.path().join("axioms.csv")).unwrap().contains("monotonicity,true"));
}

#[test]
fn invalid_input_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&reihom(&["cell", "--xi", "1,2"], dir.path())), 4);
    assert_eq!(code(&reihom(&["macro", "--bogus"], dir.path())), 4);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[grid]\nsteps = 16\n").unwrap();
    assert_eq!(code(&reihom(&["fine", "--epsilon", "0.25", "--config", cfg.to_str().unwrap()], dir.path())), 4);
    assert_eq!(code(&reihom(&["macro", "--config", "/nonexistent/x.toml"], dir.path())), 4);
}

#[test]
fn failed_orders_exit_with_code_two_after_writing_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    // time steps do not refine, so the temporal order collapses
    fs::write(&cfg, "[manufactured]\nladder = [[16, 4], [32, 5]]\n").unwrap();
    let o = reihom(&["manufactured", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("manufactured.csv").exists());
}
