//! Sweep execution and result files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use cascade_core::fluctuations::{duan_witness_linearized, duan_witness_moments, g2_linearized, linearize};
use cascade_core::fock::{partial_trace, DensityMatrix, FockDims};
use cascade_core::linalg::C64;
use cascade_core::liouvillian::{
    build_cascade_liouvillian, lindblad_recast, mcwf_ensemble, steady_state_auto, ChainParams, McwfOptions,
};
use cascade_core::meanfield::{bistability_scan, chain_fixed_points, fixed_point_from_last, ClassicalFixedPoint};
use cascade_core::observables::{
    default_phase_grid, duan_witness_from_rho, fidelity_single_photon, g2_from_rho, population, wigner, PhaseSpaceGrid,
    WIGNER_CONVENTION,
};
use rayon::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::render;
use crate::scenario::{AxisKind, Scenario, SolverKind};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BISTABILITY_FILE: &str = "bistability.csv";
/// Largest observable shift between truncation `d` and `d + 2` that still counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("results table {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Fatal(String),
    #[error("all {total} grid points failed; first reason: {reason}")]
    TotalFailure { total: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub render: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub total: usize,
    pub resumed: usize,
    pub ok: usize,
    pub missing: usize,
}

/// Observable column names in table order.
pub fn observable_columns(s: &Scenario) -> Vec<String> {
    let n = s.n_modes();
    let mut cols = Vec::new();
    if s.outputs.populations {
        cols.extend((1..=n).map(|m| format!("n_{m}")));
    }
    if s.outputs.g2 {
        cols.extend((1..=n).map(|m| format!("g2_{m}")));
    }
    if s.outputs.duan.is_some() {
        cols.push("duan".into());
        cols.push("duan_phase".into());
    }
    if s.outputs.fidelity {
        cols.extend((1..=n).map(|m| format!("fidelity_{m}")));
    }
    if s.outputs.wigner.is_some() {
        cols.extend((1..=n).map(|m| format!("wigner_min_{m}")));
        cols.extend((1..=n).map(|m| format!("wigner_negativity_{m}")));
    }
    cols
}

pub fn header(s: &Scenario) -> Vec<String> {
    let mut h: Vec<String> = ["index", "delta", "drive", "n_last", "status", "reason"].iter().map(|x| x.to_string()).collect();
    h.extend(observable_columns(s));
    h.push("converged".into());
    h.push("convergence_shift".into());
    h
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub index: usize,
    pub delta: f64,
    pub drive: Option<f64>,
    pub n_last: Option<f64>,
    pub values: BTreeMap<String, f64>,
    pub missing: Option<String>,
    /// Remark on an ok point, written to the `reason` column.
    pub note: Option<String>,
    pub converged: Option<bool>,
    pub shift: Option<f64>,
}

/// Shortest round-trip text; scientific outside `[1e-4, 1e6)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) || !a.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl PointRecord {
    fn row(&self, cols: &[String]) -> Vec<String> {
        let mut r = vec![
            self.index.to_string(),
            fmt_f64(self.delta),
            fmt_opt(self.drive),
            fmt_opt(self.n_last),
            if self.missing.is_some() { "missing" } else { "ok" }.to_string(),
            self.missing.clone().or_else(|| self.note.clone()).unwrap_or_default(),
        ];
        r.extend(cols.iter().map(|c| fmt_opt(self.values.get(c).copied())));
        r.push(self.converged.map(|c| c.to_string()).unwrap_or_default());
        r.push(fmt_opt(self.shift));
        r
    }
}

/// Observables computed at one point: named values plus optional Wigner grids.
struct Evaluation {
    values: BTreeMap<String, f64>,
    n_last: f64,
    drive: f64,
    wigner: Vec<PhaseSpaceGrid>,
}

fn distinct_stable(points: Vec<ClassicalFixedPoint>) -> Vec<ClassicalFixedPoint> {
    let mut out: Vec<ClassicalFixedPoint> = Vec::new();
    for p in points.into_iter().filter(|p| p.is_stable()) {
        let dup = out.iter().any(|q| q.populations.iter().zip(&p.populations).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1e-12)));
        if !dup {
            out.push(p);
        }
    }
    out
}

fn evaluate_linearized(s: &Scenario, params: &ChainParams, axis: f64) -> Result<Evaluation, String> {
    let n = s.n_modes();
    let (fp, drive) = match s.sweep.kind {
        AxisKind::NLast => fixed_point_from_last(axis, params).map_err(|e| e.to_string())?,
        AxisKind::Drive => {
            let p = params.with_drive(axis);
            let mut stable = distinct_stable(chain_fixed_points(&p).map_err(|e| e.to_string())?);
            match stable.len() {
                0 => return Err("no stable fixed point".into()),
                1 => (stable.remove(0), axis),
                k => return Err(format!("multistable: {k} stable branches")),
            }
        }
    };
    let mut values = BTreeMap::new();
    if s.outputs.populations {
        for m in 0..n {
            values.insert(format!("n_{}", m + 1), fp.populations[m]);
        }
    }
    let needs_fluct = s.outputs.g2 || s.outputs.duan.is_some();
    if needs_fluct {
        let model = linearize(&fp, &params.with_drive(drive)).map_err(|e| e.to_string())?;
        if s.outputs.g2 {
            for m in 0..n {
                values.insert(format!("g2_{}", m + 1), g2_linearized(&model, m).map_err(|e| e.to_string())?);
            }
        }
        if let Some(pair) = s.outputs.duan {
            values.insert("duan".into(), duan_witness_linearized(&model, pair).map_err(|e| e.to_string())?);
            values.insert("duan_phase".into(), duan_witness_moments(&model, pair).map_err(|e| e.to_string())?.1);
        }
    }
    Ok(Evaluation { values, n_last: fp.populations[n - 1], drive, wigner: Vec::new() })
}

fn full_quantum_state(s: &Scenario, params: &ChainParams, dims: &FockDims, seed: u64) -> Result<DensityMatrix, String> {
    match s.solver {
        SolverKind::FullQuantumSteady => {
            let l = build_cascade_liouvillian(params, dims).map_err(|e| e.to_string())?;
            steady_state_auto(&l).map_err(|e| e.to_string())
        }
        SolverKind::FullQuantumMcwf => {
            let lf = lindblad_recast(params, dims).map_err(|e| e.to_string())?;
            let mut psi0 = vec![C64::new(0.0, 0.0); dims.total()];
            psi0[0] = C64::new(1.0, 0.0);
            mcwf_ensemble(&lf, &psi0, s.t_final, s.trajectories, seed, &McwfOptions::default())
                .and_then(|e| e.density_matrix())
                .map_err(|e| e.to_string())
        }
        SolverKind::Linearized => unreachable!("linearized points are not full-quantum"),
    }
}

fn evaluate_full(s: &Scenario, params: &ChainParams, axis: f64, dims: &FockDims, seed: u64) -> Result<Evaluation, String> {
    let n = s.n_modes();
    let drive = match s.sweep.kind {
        AxisKind::NLast => fixed_point_from_last(axis, params).map_err(|e| format!("mean-field drive: {e}"))?.1,
        AxisKind::Drive => axis,
    };
    let p = params.with_drive(drive);
    let rho = full_quantum_state(s, &p, dims, seed)?;
    let mut values = BTreeMap::new();
    let pops: Vec<f64> = (0..n).map(|m| population(&rho, m)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    if s.outputs.populations {
        for m in 0..n {
            values.insert(format!("n_{}", m + 1), pops[m]);
        }
    }
    if s.outputs.g2 {
        for m in 0..n {
            values.insert(format!("g2_{}", m + 1), g2_from_rho(&rho, m).map_err(|e| e.to_string())?);
        }
    }
    if let Some(pair) = s.outputs.duan {
        let (e, phi) = duan_witness_from_rho(&rho, pair, &default_phase_grid()).map_err(|e| e.to_string())?;
        values.insert("duan".into(), e);
        values.insert("duan_phase".into(), phi);
    }
    let mut grids = Vec::new();
    if s.outputs.fidelity || s.outputs.wigner.is_some() {
        for m in 0..n {
            let r = partial_trace(&rho, m).map_err(|e| e.to_string())?;
            if s.outputs.fidelity {
                values.insert(format!("fidelity_{}", m + 1), fidelity_single_photon(&r).map_err(|e| e.to_string())?);
            }
            if let Some(w) = s.outputs.wigner {
                let g = wigner(&r, (-w.extent, w.extent), (-w.extent, w.extent), w.points, w.points).map_err(|e| e.to_string())?;
                values.insert(format!("wigner_min_{}", m + 1), g.min());
                values.insert(format!("wigner_negativity_{}", m + 1), g.negativity_volume());
                grids.push(g);
            }
        }
    }
    Ok(Evaluation { values, n_last: pops[n - 1], drive, wigner: grids })
}

/// Seed of grid point `index`; trajectories within the point use `seed + i`.
pub fn point_seed(seed: u64, index: usize, trajectories: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(trajectories as u64 + 1))
}

fn evaluate_point(s: &Scenario, index: usize) -> (PointRecord, Vec<PhaseSpaceGrid>) {
    let (delta, axis) = s.sweep.point(index);
    let params = s.params.with_delta(delta);
    let mut rec = PointRecord {
        index,
        delta,
        drive: (s.sweep.kind == AxisKind::Drive).then_some(axis),
        n_last: (s.sweep.kind == AxisKind::NLast).then_some(axis),
        values: BTreeMap::new(),
        missing: None,
        note: None,
        converged: None,
        shift: None,
    };
    let seed = point_seed(s.seed, index, s.trajectories);
    let result = if s.solver.is_full_quantum() {
        let dims = s.truncation.as_ref().expect("validated full-quantum scenario has a truncation");
        evaluate_full(s, &params, axis, dims, seed).map(|ev| {
            let check = s.convergence_check.then(|| evaluate_full(s, &params, axis, &dims.enlarged(2), seed));
            (ev, check)
        })
    } else {
        evaluate_linearized(s, &params, axis).map(|ev| (ev, None))
    };
    match result {
        Ok((ev, check)) => {
            rec.drive = Some(ev.drive);
            rec.n_last = Some(ev.n_last);
            if let Some(check) = check {
                match check {
                    Ok(big) => {
                        let shift = ev
                            .values
                            .iter()
                            .filter(|(k, _)| k.as_str() != "duan_phase")
                            .map(|(k, v)| big.values.get(k).map_or(f64::INFINITY, |b| (b - v).abs()))
                            .fold(0.0, f64::max);
                        rec.converged = Some(shift < CONVERGENCE_TOL);
                        rec.shift = Some(shift);
                    }
                    Err(e) => {
                        rec.converged = Some(false);
                        rec.note = Some(format!("convergence check failed: {e}"));
                    }
                }
            }
            rec.values = ev.values;
            (rec, ev.wigner)
        }
        Err(reason) => {
            rec.missing = Some(reason);
            (rec, Vec::new())
        }
    }
}

fn fingerprint(s: &Scenario) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update(s.to_toml().as_bytes());
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Indices already present in an existing results table with a matching header.
fn completed_indices(path: &Path, header: &[String]) -> Result<Option<BTreeSet<usize>>, RunError> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|source| RunError::Csv { path: path.into(), source })?;
    let found: Vec<String> = rdr.headers().map_err(|source| RunError::Csv { path: path.into(), source })?.iter().map(String::from).collect();
    if found != header {
        return Ok(None);
    }
    let mut done = BTreeSet::new();
    for row in rdr.records() {
        // a torn final line from an interrupted run is dropped and recomputed
        let Ok(row) = row else { continue };
        if row.len() != header.len() {
            continue;
        }
        if let Some(i) = row.get(0).and_then(|x| x.parse().ok()) {
            done.insert(i);
        }
    }
    Ok(Some(done))
}

/// Cut a trailing unterminated line so appended rows start on a fresh line.
fn drop_partial_line(path: &Path) -> Result<(), RunError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(keep as u64).map_err(io_err(path))?;
    }
    Ok(())
}

fn read_manifest_fingerprint(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("fingerprint")?.as_str().map(String::from)
}

fn write_manifest(path: &Path, body: &serde_json::Value) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(body).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_wigner(dir: &Path, index: usize, grids: &[PhaseSpaceGrid], render_png: bool) -> Result<(), RunError> {
    for (m, g) in grids.iter().enumerate() {
        let path = dir.join(format!("point_{index:05}_mode_{}.csv", m + 1));
        let mut w = csv::Writer::from_path(&path).map_err(|source| RunError::Csv { path: path.clone(), source })?;
        w.write_record(["x", "p", "w"]).map_err(|source| RunError::Csv { path: path.clone(), source })?;
        for (ip, p) in g.p_values.iter().enumerate() {
            for (ix, x) in g.x_values.iter().enumerate() {
                w.write_record([fmt_f64(*x), fmt_f64(*p), fmt_f64(g.get(ix, ip))])
                    .map_err(|source| RunError::Csv { path: path.clone(), source })?;
            }
        }
        w.flush().map_err(io_err(&path))?;
        if render_png {
            let png = dir.join(format!("point_{index:05}_mode_{}.png", m + 1));
            render::wigner_png(g, &png).map_err(|e| RunError::Fatal(format!("{}: {e}", png.display())))?;
        }
    }
    Ok(())
}

fn write_bistability(s: &Scenario, path: &Path) -> Result<serde_json::Value, RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|source| RunError::Csv { path: path.into(), source })?;
    let mut header = vec!["delta".to_string(), "drive".to_string(), "branch".to_string(), "stable".to_string()];
    header.extend((1..=s.n_modes()).map(|m| format!("n_{m}")));
    w.write_record(&header).map_err(|source| RunError::Csv { path: path.into(), source })?;
    let mut summary = Vec::new();
    for &delta in &s.sweep.delta {
        let table = bistability_scan(&s.sweep.values, &s.params.with_delta(delta)).map_err(|e| RunError::Fatal(e.to_string()))?;
        for row in &table.rows {
            for (b, branch) in row.branches.iter().enumerate() {
                let mut rec = vec![fmt_f64(delta), fmt_f64(row.drive), b.to_string(), branch.is_stable().to_string()];
                rec.extend(branch.populations.iter().map(|&p| fmt_f64(p)));
                w.write_record(&rec).map_err(|source| RunError::Csv { path: path.into(), source })?;
            }
        }
        let folds: Vec<usize> = (0..s.n_modes()).map(|m| table.fold_count(m)).collect();
        let fold_drives: Vec<Vec<f64>> = (0..s.n_modes())
            .map(|m| table.jumps(m, cascade_core::meanfield::SweepDirection::Up).iter().map(|&i| s.sweep.values[i]).collect())
            .collect();
        summary.push(json!({ "delta": delta, "folds": folds, "fold_drives": fold_drives }));
    }
    w.flush().map_err(io_err(path))?;
    Ok(json!(summary))
}

/// Execute a validated scenario. Completed rows of a previous interrupted
/// run with the same resolved scenario are kept and not recomputed.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let started = Instant::now();
    let mut s = scenario.clone();
    if let Some(seed) = opts.seed {
        s.seed = seed;
        s.resolved.seed = Some(seed);
    }
    if let Some(out) = &opts.out {
        s.output_dir = out.clone();
        s.resolved.output_dir = Some(out.to_string_lossy().into_owned());
    }
    let dir = s.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_resolved(&s, &dir)?;
    let results = dir.join(RESULTS_FILE);
    let manifest = dir.join(MANIFEST_FILE);
    let wigner_dir = dir.join("wigner");
    if s.outputs.wigner.is_some() {
        fs::create_dir_all(&wigner_dir).map_err(io_err(&wigner_dir))?;
    }

    let header = header(&s);
    let cols = observable_columns(&s);
    let fp = fingerprint(&s);
    let same_scenario = read_manifest_fingerprint(&manifest).as_deref() == Some(fp.as_str());
    let done = if same_scenario { completed_indices(&results, &header)?.unwrap_or_default() } else { BTreeSet::new() };

    let base_manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "tool": "cascade",
        "version": env!("CARGO_PKG_VERSION"),
        "fingerprint": fp,
        "seed": s.seed,
        "solver": s.solver.label(),
        "scenario": s.resolved,
        "columns": header,
        "conventions": {
            "wigner": WIGNER_CONVENTION,
            "quadratures": "x = (a + a^dag)/2, p = (a - a^dag)/(2i); separability bound of the Duan witness is 1",
            "duan": "V(x_1 + x_2) + V(p_1 - p_2) minimized over a phase on the second mode",
        },
    });
    let mut running = base_manifest.clone();
    running["status"] = json!("running");
    write_manifest(&manifest, &running)?;

    let file = if done.is_empty() {
        File::create(&results).map_err(io_err(&results))?
    } else {
        drop_partial_line(&results)?;
        OpenOptions::new().append(true).open(&results).map_err(io_err(&results))?
    };
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if done.is_empty() {
        writer.write_record(&header).map_err(|source| RunError::Csv { path: results.clone(), source })?;
        writer.flush().map_err(io_err(&results))?;
    }
    let writer = Mutex::new(writer);

    let todo: Vec<usize> = (0..s.sweep.len()).filter(|i| !done.contains(i)).collect();
    let outcome: Result<Vec<()>, RunError> = todo
        .par_iter()
        .map(|&i| {
            let (rec, grids) = evaluate_point(&s, i);
            if !grids.is_empty() {
                write_wigner(&wigner_dir, i, &grids, opts.render)?;
            }
            let mut w = writer.lock().expect("writer lock");
            w.write_record(rec.row(&cols)).map_err(|source| RunError::Csv { path: results.clone(), source })?;
            w.flush().map_err(io_err(&results))
        })
        .collect();
    outcome?;
    drop(writer);

    // rewrite in grid order so the table is independent of scheduling
    let mut rows = read_rows(&results, header.len())?;
    rows.sort_by_key(|r| r[0].parse::<usize>().unwrap_or(usize::MAX));
    rows.dedup_by(|a, b| a[0] == b[0]);
    let tmp = dir.join(format!("{RESULTS_FILE}.tmp"));
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|source| RunError::Csv { path: tmp.clone(), source })?;
        w.write_record(&header).map_err(|source| RunError::Csv { path: tmp.clone(), source })?;
        for r in &rows {
            w.write_record(r).map_err(|source| RunError::Csv { path: tmp.clone(), source })?;
        }
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &results).map_err(io_err(&results))?;

    let ok = rows.iter().filter(|r| r[4] == "ok").count();
    let missing = rows.len() - ok;
    let bistability = if s.outputs.bistability { Some(write_bistability(&s, &dir.join(BISTABILITY_FILE))?) } else { None };
    if opts.render {
        render::heatmaps(&s, &header, &rows, &dir).map_err(|e| RunError::Fatal(format!("rendering: {e}")))?;
    }

    let mut body = base_manifest;
    body["status"] = json!("complete");
    body["points"] = json!({ "total": rows.len(), "ok": ok, "missing": missing, "resumed": done.len() });
    body["wall_time_s"] = json!(started.elapsed().as_secs_f64());
    if let Some(b) = bistability {
        body["bistability"] = b;
    }
    write_manifest(&manifest, &body)?;

    let summary = RunSummary { out_dir: dir, total: rows.len(), resumed: done.len(), ok, missing };
    if ok == 0 && !rows.is_empty() && !s.outputs.bistability {
        let reason = rows.first().map(|r| r[5].clone()).unwrap_or_default();
        return Err(RunError::TotalFailure { total: rows.len(), reason });
    }
    Ok(summary)
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<String>>, RunError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|source| RunError::Csv { path: path.into(), source })?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let Ok(rec) = rec else { continue };
        if rec.len() == width {
            rows.push(rec.iter().map(String::from).collect());
        }
    }
    Ok(rows)
}

/// Resolved scenario text next to the results.
fn write_resolved(s: &Scenario, dir: &Path) -> Result<(), RunError> {
    let path = dir.join("scenario.toml");
    let mut f = File::create(&path).map_err(io_err(&path))?;
    f.write_all(s.to_toml().as_bytes()).map_err(io_err(&path))
}
