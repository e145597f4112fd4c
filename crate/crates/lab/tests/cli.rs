use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmc-kappa"))
        .args(args)
        .env("HMC_KAPPA_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn kappa_of_sigmas() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["kappa", "--sigmas", "1,1,1,1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("kappa=1.41421"), "{text}");
    assert!(text.contains("nu=1.41421"), "{text}");
    assert!(dir.path().join("kappa.json").exists());
    assert!(dir.path().join("kappa.manifest.json").exists());
}

#[test]
fn kappa_of_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cov.txt");
    fs::write(&path, "# diagonal\n4, 0\n0 1\n").unwrap();
    let o = cli(dir.path(), &["kappa", "--matrix", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let expected = (1.0f64 + 16.0).powf(0.25);
    assert!(stdout(&o).contains(&format!("kappa={expected:.5}")), "{}", stdout(&o));
}

#[test]
fn burnin_plan_prints_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(
        dir.path(),
        &["burnin", "plan", "--kappa0-ratio", "10", "--dim", "50", "--final-ratio", "40"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{key}="))).expect(key);
        line[key.len() + 1..].trim().parse().unwrap()
    };
    assert!((3.5..=4.5).contains(&value("s_star_ratio")), "{text}");
    assert!((2.8..=3.5).contains(&value("speedup")), "{text}");
}

#[test]
fn usage_error_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["kappa", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn runtime_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["kappa", "--sigmas", "1,-2"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: kind="), "{err}");
    assert!(err.contains("message="), "{err}");
}

fn same_outputs(args: &[&str], id: &str) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = cli(dir.path(), args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for suffix in ["csv", "summary.json"] {
        let name = format!("{id}.{suffix}");
        let x = fs::read(a.path().join(&name)).unwrap();
        let y = fs::read(b.path().join(&name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between runs");
    }
    assert!(a.path().join(format!("{id}.manifest.json")).exists());
}

#[test]
fn precond_compare_is_reproducible() {
    same_outputs(&["precond", "compare", "--dim", "20", "--trials", "10", "--seed", "3"], "precond_compare");
}

#[test]
fn kappa_infer_is_reproducible() {
    same_outputs(&["kappa", "infer", "--dims", "32", "--spectra", "2", "--seed", "4"], "kappa_inference");
}

#[test]
fn out_flag_overrides_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let o = cli(
        env_dir.path(),
        &["--out", flag_dir.path().to_str().unwrap(), "precond", "blocks", "--points", "5"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(flag_dir.path().join("precond_blocks.csv").exists());
    assert!(!env_dir.path().join("precond_blocks.csv").exists());
}
