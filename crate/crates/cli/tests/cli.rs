use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TCP_ONE: &str = r#"
[model.flow]
variant = "additive"
c = 1.0

[model.f]
kappa = 0.5

[model.rate]
variant = "power"
exponent = 0.0

[experiment]
n = 100
n_values = [100]
replicates = 2

[io]
record_timing = false
"#;

const BACTERIAL_SQUARE: &str = r#"
[model.flow]
variant = "exponential"
c = 1.0

[model.rate]
variant = "power"
exponent = 2.0
"#;

fn pdmp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdmp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field(summary: &str, key: &str) -> f64 {
    summary
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {summary}"))
        .parse()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn simulate_writes_replayable_chain() {
    let dir = setup(TCP_ONE);
    let a = pdmp(dir.path(), &["--config", "run.toml", "--seed", "7", "--out", "a", "simulate", "--n", "100"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = pdmp(dir.path(), &["--config", "run.toml", "--seed", "7", "--out", "b", "simulate", "--n", "100"]);
    assert!(b.status.success());
    let chain_a = fs::read_to_string(dir.path().join("a/chain.tsv")).unwrap();
    let chain_b = fs::read_to_string(dir.path().join("b/chain.tsv")).unwrap();
    assert_eq!(chain_a, chain_b);
    let states = chain_a.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(states, 101);
    assert_eq!(field(&stdout(&a), "n"), 100.0);
    // stdout carries the summary line only
    assert_eq!(stdout(&a).lines().count(), 1);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = setup(TCP_ONE);
    let a = pdmp(dir.path(), &["--config", "run.toml", "--seed", "1", "--out", "a", "simulate"]);
    let b = pdmp(dir.path(), &["--config", "run.toml", "--seed", "2", "--out", "b", "simulate"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(
        fs::read_to_string(dir.path().join("a/chain.tsv")).unwrap(),
        fs::read_to_string(dir.path().join("b/chain.tsv")).unwrap()
    );
}

#[test]
fn invalid_kappa_is_a_config_error() {
    let dir = setup(&TCP_ONE.replace("kappa = 0.5", "kappa = 1.5"));
    let o = pdmp(dir.path(), &["--config", "run.toml", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.f.kappa"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn even_grid_points_flag_is_rejected() {
    let dir = setup(TCP_ONE);
    let o = pdmp(dir.path(), &["--config", "run.toml", "--grid-points", "512", "estimate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pdmp(dir.path(), &["--config", "absent.toml", "simulate"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bacterial_square_summary_has_finite_time() {
    let dir = setup(BACTERIAL_SQUARE);
    let o = pdmp(dir.path(), &["--config", "run.toml", "--out", "o", "simulate", "--n", "10000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t_n = field(&stdout(&o), "T_n");
    assert!(t_n.is_finite() && t_n > 0.0, "{t_n}");
    assert!(field(&stdout(&o), "min_z") > 0.0);
}

#[test]
fn estimate_rejects_short_chain() {
    let dir = setup(TCP_ONE);
    let s = pdmp(dir.path(), &["--config", "run.toml", "--out", "o", "simulate", "--n", "8"]);
    assert!(s.status.success());
    let o = pdmp(dir.path(), &["--config", "run.toml", "--out", "o", "estimate", "--chain", "o/chain.tsv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("n too small for threshold") || stderr(&o).contains("too small for threshold"));
}

#[test]
fn estimate_grid_has_truth_column_and_replays() {
    let dir = setup(TCP_ONE);
    let s = pdmp(dir.path(), &["--config", "run.toml", "--out", "c", "simulate", "--n", "2000"]);
    assert!(s.status.success());
    let run = |out: &str| {
        let o = pdmp(dir.path(), &["--config", "run.toml", "--out", out, "estimate", "--chain", "c/chain.tsv"]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            fs::read_to_string(dir.path().join(out).join("grid.tsv")).unwrap(),
            fs::read_to_string(dir.path().join(out).join("fit.txt")).unwrap(),
        )
    };
    let (grid, fit) = run("e1");
    let header: Vec<&str> = grid.lines().next().unwrap().split('\t').collect();
    assert_eq!(header, ["y", "lambda_hat", "lambda_true", "nu_hat_of_f", "d_hat"]);
    assert_eq!(grid.lines().count(), 1 + 513);
    assert_eq!(run("e2"), (grid, fit));
}

#[test]
fn estimate_without_truth_drops_column() {
    let dir = setup(TCP_ONE);
    let o = pdmp(dir.path(), &["--config", "run.toml", "--out", "o", "--grid-points", "257", "estimate", "--no-truth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let grid = fs::read_to_string(dir.path().join("o/grid.tsv")).unwrap();
    assert!(!grid.lines().next().unwrap().contains("lambda_true"));
    assert_eq!(grid.lines().count(), 1 + 257);
}

#[test]
fn bench_smoke_is_byte_identical() {
    let dir = setup(TCP_ONE);
    let a = pdmp(dir.path(), &["--config", "run.toml", "--out", "a", "bench"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = pdmp(dir.path(), &["--config", "run.toml", "--out", "b", "--threads", "1", "bench"]);
    assert!(b.status.success());
    let csv = |d: &str| {
        let entries: Vec<_> = fs::read_dir(dir.path().join(d))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        assert_eq!(entries.len(), 1);
        fs::read(&entries[0]).unwrap()
    };
    let (ca, cb) = (csv("a"), csv("b"));
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("n,mean_D_mhat,mean_D_mopt,mean_risk,oracle,mean_time_s"));
}

#[test]
fn effective_config_round_trips() {
    let dir = setup(TCP_ONE);
    let o = pdmp(dir.path(), &["--config", "effective.toml", "simulate"]);
    assert_eq!(o.status.code(), Some(4));
    let o = pdmp(dir.path(), &["--config", "run.toml", "--out", "a", "simulate"]);
    assert!(o.status.success());
    fs::copy(dir.path().join("a/effective_config.toml"), dir.path().join("effective.toml")).unwrap();
    let o = pdmp(dir.path(), &["--config", "effective.toml", "--out", "b", "simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(dir.path().join("a/effective_config.toml")).unwrap(),
        fs::read_to_string(dir.path().join("b/effective_config.toml")).unwrap().replace("\"b\"", "\"a\"")
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("a/chain.tsv")).unwrap(),
        fs::read_to_string(dir.path().join("b/chain.tsv")).unwrap()
    );
}

#[test]
fn diagnose_flags_slow_bacterial_rate() {
    let dir = setup(&BACTERIAL_SQUARE.replace("exponent = 2.0", "exponent = 0.5"));
    let o = pdmp(dir.path(), &["--config", "run.toml", "--out", "o", "diagnose"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("tail_condition\tViolated"), "{out}");
    assert!(out.lines().any(|l| l.starts_with("warning\t")));
    assert_eq!(out, fs::read_to_string(dir.path().join("o/diagnose.tsv")).unwrap());
}
