use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn agepop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agepop"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn missing_source_is_a_usage_error() {
    let o = agepop(&["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config") || stderr(&o).contains("--preset"));
    let o = agepop(&["simulate", "--preset", "reference", "--config", "x.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(agepop(&[]).status.code(), Some(2));
}

#[test]
fn bad_configurations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[model]\npreset = \"reference\"\n[estimation]\nc_starr = 0.1\n").unwrap();
    let out = dir.path().join("out");
    let o = agepop(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("c_starr"), "{}", stderr(&o));

    let o = agepop(&["solve", "--preset", "nonesuch", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    fs::write(&cfg, "[model]\npreset = \"reference\"\n[estimation]\nc_star = -1.0\n").unwrap();
    let o = agepop(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_estimate_select_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj");
    let t = traj.to_str().unwrap();
    let o = agepop(&["simulate", "--preset", "reference", "--seed", "3", "--scale", "1000", "--out", t]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["events.csv", "snapshots.csv", "trajectory.toml", "manifest.toml", "config.toml"] {
        assert!(traj.join(f).exists(), "{f}");
    }

    let est = dir.path().join("est");
    let o = agepop(&[
        "estimate", "--preset", "reference", "--trajectory", t, "--point", "16.08,20.82", "--out",
        est.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&est.join("estimates.csv"));
    assert_eq!(rows[0], ["t", "a", "estimator", "bandwidth_1", "bandwidth_2", "value"]);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[2].as_str()).collect();
    assert_eq!(names[..2], ["density", "death_intensity"]);
    assert_eq!(names.len(), 4);
    let g: f64 = rows[1][5].parse().unwrap();
    assert!(g > 0.0 && g.is_finite());

    let sel = dir.path().join("sel");
    let o = agepop(&["select", "--preset", "reference", "--trajectory", t, "--out", sel.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&sel.join("selection.csv"));
    let selected = rows[1..].iter().filter(|r| r[8] == "1").count();
    // One selection per estimator at each of the four tracked points.
    assert_eq!(selected, 8);

    let diag = dir.path().join("diag");
    let o = agepop(&["diagnose", "--preset", "reference", "--trajectory", t, "--out", diag.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&diag.join("discrepancy.csv"));
    assert!(rows.len() > 20);
    assert!(rows[1..].iter().all(|r| r[1].parse::<f64>().unwrap() >= 0.0));

    let o = agepop(&[
        "estimate", "--preset", "reference", "--trajectory", t, "--point", "30,10", "--out",
        est.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solve_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = agepop(&["solve", "--preset", "reference", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = csv_rows(&dir.path().join("birth_density.csv"));
    assert_eq!(b.len(), 2002);
    let lattice = csv_rows(&dir.path().join("lattice.csv"));
    assert_eq!(lattice.len(), 1 + 20 * 600);
}
