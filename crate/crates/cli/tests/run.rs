use std::fs;
use std::time::Instant;

use cascade_cli::run::{run, RunOptions, RESULTS_FILE};
use cascade_cli::scenario::parse_scenario;
use cascade_core::fluctuations::sweep_phase_space;
use tempfile::tempdir;

const GRID: &str = r#"name = "grid"

[model]
modes = 2
gamma = 0.2
kerr = 0.2

[solver]
kind = "linearized"

[sweep]
n_last = { from = 1e-3, to = 1.0, points = 12, spacing = "log" }
delta = { from = -0.3, to = 0.3, points = 7 }

[outputs]
quantities = ["populations", "g2", "duan"]
"#;

fn opts(dir: &std::path::Path) -> RunOptions {
    RunOptions { out: Some(dir.to_path_buf()), seed: None, render: false }
}

fn table(dir: &std::path::Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(dir.join(RESULTS_FILE)).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn single_point_smoke_run() {
    let text = GRID
        .replace("{ from = 1e-3, to = 1.0, points = 12, spacing = \"log\" }", "[0.05]")
        .replace("{ from = -0.3, to = 0.3, points = 7 }", "[0.0]");
    let s = parse_scenario(&text, "x").unwrap();
    let tmp = tempdir().unwrap();
    let t = Instant::now();
    let sum = run(&s, &opts(tmp.path())).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0);
    assert_eq!((sum.total, sum.ok), (1, 1));
    let rows = table(tmp.path());
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][4], "ok");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["points"]["ok"], 1);
}

#[test]
fn reruns_are_byte_identical() {
    let s = parse_scenario(GRID, "x").unwrap();
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    run(&s, &opts(a.path())).unwrap();
    run(&s, &opts(b.path())).unwrap();
    let ra = fs::read(a.path().join(RESULTS_FILE)).unwrap();
    let rb = fs::read(b.path().join(RESULTS_FILE)).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn interrupted_runs_resume_without_recomputing() {
    let s = parse_scenario(GRID, "x").unwrap();
    let full = tempdir().unwrap();
    run(&s, &opts(full.path())).unwrap();
    let reference = fs::read_to_string(full.path().join(RESULTS_FILE)).unwrap();

    // keep the header and the first 30 rows, plus a torn line
    let part = tempdir().unwrap();
    run(&s, &opts(part.path())).unwrap();
    let kept: Vec<&str> = reference.lines().take(31).collect();
    let torn = &reference.lines().nth(31).unwrap()[..10];
    fs::write(part.path().join(RESULTS_FILE), format!("{}\n{torn}", kept.join("\n"))).unwrap();

    let sum = run(&s, &opts(part.path())).unwrap();
    assert_eq!(sum.resumed, 30);
    assert_eq!(sum.total, 84);
    assert_eq!(fs::read_to_string(part.path().join(RESULTS_FILE)).unwrap(), reference);
}

#[test]
fn changed_scenario_starts_over() {
    let s = parse_scenario(GRID, "x").unwrap();
    let dir = tempdir().unwrap();
    run(&s, &opts(dir.path())).unwrap();
    let other = parse_scenario(&GRID.replace("kerr = 0.2", "kerr = 0.3"), "x").unwrap();
    let sum = run(&other, &opts(dir.path())).unwrap();
    assert_eq!(sum.resumed, 0);
}

#[test]
fn table_matches_library_sweep() {
    let s = parse_scenario(GRID, "x").unwrap();
    let dir = tempdir().unwrap();
    run(&s, &opts(dir.path())).unwrap();
    let rows = table(dir.path());
    let lib = sweep_phase_space(&s.sweep.values, &s.sweep.delta, &s.params, Some((0, 1))).unwrap();
    let nx = s.sweep.values.len();
    let mut checked = 0;
    for row in &rows {
        let i: usize = row[0].parse().unwrap();
        let p = lib.point(i / nx, i % nx);
        match &p.outcome {
            Ok(v) => {
                assert_eq!(&row[4], "ok");
                let g2_2: f64 = row[9].parse().unwrap();
                assert_eq!(g2_2, v.g2[1]);
                let duan: f64 = row[10].parse().unwrap();
                assert_eq!(Some(duan), v.duan);
                checked += 1;
            }
            Err(_) => assert_eq!(&row[4], "missing"),
        }
    }
    assert!(checked > 0);
}

#[test]
fn drive_axis_flags_multistable_points() {
    let text = r#"[model]
modes = 2
gamma = 0.5
kerr = 0.05
delta = -1.7320508075688772

[solver]
kind = "linearized"

[sweep]
drive = { from = 0.0, to = 25.0, points = 101 }

[outputs]
quantities = ["populations", "g2", "bistability"]
"#;
    let s = parse_scenario(text, "x").unwrap();
    let dir = tempdir().unwrap();
    let sum = run(&s, &opts(dir.path())).unwrap();
    let rows = table(dir.path());
    assert!(rows.iter().any(|r| r[5].starts_with("multistable")));
    assert!(sum.ok > 20 && sum.missing > 20);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["bistability"][0]["folds"][0], 1);
    assert!(dir.path().join("bistability.csv").exists());
}

#[test]
fn full_quantum_point_with_convergence_check() {
    let text = r#"[model]
modes = 1
gamma = 0.5
kerr = 1.0

[solver]
kind = "full-quantum-steady"
truncation = 6

[sweep]
drive = [0.2]

[outputs]
quantities = ["populations", "g2", "fidelity", "wigner"]
wigner_points = 21
"#;
    let s = parse_scenario(text, "x").unwrap();
    let dir = tempdir().unwrap();
    run(&s, &RunOptions { out: Some(dir.path().into()), seed: None, render: true }).unwrap();
    let rows = table(dir.path());
    assert_eq!(&rows[0][4], "ok");
    assert_eq!(&rows[0][rows[0].len() - 2], "true");
    let g2: f64 = rows[0][7].parse().unwrap();
    assert!(g2 < 1.0, "strong Kerr antibunches, got {g2}");
    assert!(dir.path().join("wigner/point_00000_mode_1.csv").exists());
    assert!(dir.path().join("wigner/point_00000_mode_1.png").exists());
}

#[test]
fn numbers_round_trip_through_text() {
    use cascade_cli::run::fmt_f64;
    for x in [0.0, -0.0, 1.0, 0.1 + 0.2, 2.0919077581282863e-10, -7.5e-5, 1e-4, 123456.789, 3.2e7, f64::MIN_POSITIVE] {
        let t = fmt_f64(x);
        assert_eq!(t.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{t}");
    }
    assert_eq!(fmt_f64(2.5e-10), "2.5e-10");
    assert_eq!(fmt_f64(0.25), "0.25");
}

fn shipped(name: &str) -> cascade_cli::scenario::Scenario {
    let ex = cascade_cli::examples::find(name).unwrap();
    parse_scenario(ex.text, name).unwrap()
}

fn column_min(rows: &[csv::StringRecord], header: &csv::StringRecord, name: &str) -> f64 {
    let col = header.iter().position(|h| h == name).unwrap();
    rows.iter().filter_map(|r| r[col].parse::<f64>().ok()).fold(f64::INFINITY, f64::min)
}

#[test]
fn two_mode_map_reaches_strong_antibunching_in_second_mode() {
    let s = shipped("two_mode_antibunching");
    let dir = tempdir().unwrap();
    run(&s, &opts(dir.path())).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join(RESULTS_FILE)).unwrap();
    let header = rdr.headers().unwrap().clone();
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    let min = column_min(&rows, &header, "g2_2");
    assert!((min - 0.2).abs() <= 0.05, "min g2_2 = {min}, expected 0.2 +- 0.05");
}

#[test]
fn bistability_scenario_has_two_jumps_in_second_mode() {
    let s = shipped("bistability");
    let dir = tempdir().unwrap();
    run(&s, &opts(dir.path())).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let b = &manifest["bistability"][0];
    assert_eq!(b["folds"][1], 2, "{b}");
    assert_eq!(b["fold_drives"][1].as_array().unwrap().len(), 2);
    let mut rdr = csv::Reader::from_path(dir.path().join("bistability.csv")).unwrap();
    assert!(rdr.records().count() > s.sweep.values.len());
}
