//! Classical fixed points of the cascade chain.
//!
//! Each mode sees its upstream neighbour as a fixed coherent drive, so the
//! steady state is a sequence of cubic problems
//! `n (gamma^2 + (delta + k n)^2) = F^2`
//! with `F = f` for the first mode and `F = sqrt(eta) gamma |S_{m-1}|` after it.

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::liouvillian::ChainParams;
use crate::linalg::C64;

/// Real roots closer than this (relative) are treated as a fold and dropped.
const FOLD_TOL: f64 = 1e-7;
const IMAG_TOL: f64 = 1e-9;
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Mean-field amplitudes of (part of) the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalFixedPoint {
    pub amplitudes: Vec<C64>,
    pub populations: Vec<f64>,
    pub stable: Vec<bool>,
}

impl ClassicalFixedPoint {
    pub fn new(amplitudes: Vec<C64>, stable: Vec<bool>) -> Self {
        let populations = amplitudes.iter().map(|s| s.norm_sqr()).collect();
        Self { amplitudes, populations, stable }
    }

    pub fn n_modes(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_stable(&self) -> bool {
        self.stable.iter().all(|&s| s)
    }

    /// Append one downstream mode.
    pub fn extended(&self, next: &ClassicalFixedPoint) -> Self {
        let mut out = self.clone();
        out.amplitudes.extend_from_slice(&next.amplitudes);
        out.populations.extend_from_slice(&next.populations);
        out.stable.extend_from_slice(&next.stable);
        out
    }
}

/// Effective detuning `delta + k n`.
fn shifted(params: &ChainParams, n: f64) -> f64 {
    params.delta + params.kerr * n
}

/// `d(F^2)/dn = gamma^2 + (delta + k n)(delta + 3 k n)`; positive on stable branches.
pub fn stability_margin(params: &ChainParams, n: f64) -> f64 {
    let g = params.gamma;
    g * g + shifted(params, n) * (params.delta + 3.0 * params.kerr * n)
}

fn cubic_lhs(params: &ChainParams, n: f64) -> f64 {
    let g = params.gamma;
    let s = shifted(params, n);
    n * (g * g + s * s)
}

/// Residual of the population cubic, relative to the drive strength.
pub fn cubic_residual(params: &ChainParams, n: f64, drive_sq: f64) -> f64 {
    (cubic_lhs(params, n) - drive_sq).abs() / drive_sq.max(1.0)
}

/// All admissible real roots of `n (gamma^2 + (delta + k n)^2) = drive_sq`.
pub fn population_roots(params: &ChainParams, drive_sq: f64) -> Result<Vec<f64>> {
    params.validate()?;
    if drive_sq < 0.0 || !drive_sq.is_finite() {
        return Err(Error::InvalidParams(format!("squared drive must be non-negative, got {drive_sq}")));
    }
    let (g, d, k) = (params.gamma, params.delta, params.kerr);
    if drive_sq == 0.0 {
        return Ok(vec![0.0]);
    }
    if k == 0.0 {
        return Ok(vec![drive_sq / (g * g + d * d)]);
    }
    // monic cubic n^3 + a n^2 + b n + c
    let (a, b, c) = (2.0 * d / k, (g * g + d * d) / (k * k), -drive_sq / (k * k));
    let mut companion = Mat::<f64>::zeros(3, 3);
    companion[(1, 0)] = 1.0;
    companion[(2, 1)] = 1.0;
    companion[(0, 2)] = -c;
    companion[(1, 2)] = -b;
    companion[(2, 2)] = -a;
    let eig = companion.eigenvalues().map_err(|e| Error::LinearAlgebra(format!("companion eigenvalues: {e:?}")))?;
    let mut roots: Vec<f64> = eig
        .iter()
        .filter(|z| z.im.abs() < IMAG_TOL * z.re.abs().max(1.0))
        .map(|z| polish(params, z.re, drive_sq))
        .filter(|n| *n > 0.0)
        .collect();
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());

    // drop coincident pairs: those sit exactly on a fold
    let mut kept = Vec::with_capacity(roots.len());
    let mut i = 0;
    while i < roots.len() {
        if i + 1 < roots.len() && (roots[i + 1] - roots[i]).abs() <= FOLD_TOL * roots[i].abs().max(1e-300) {
            i += 2;
            continue;
        }
        kept.push(roots[i]);
        i += 1;
    }
    if kept.is_empty() {
        // numerically at a fold with nothing else: fall back to the largest root
        if let Some(&last) = roots.last() {
            kept.push(last);
        }
    }
    for &n in &kept {
        let r = cubic_residual(params, n, drive_sq);
        if r >= RESIDUAL_TOL {
            return Err(Error::NotConverged { residual: r, tolerance: RESIDUAL_TOL });
        }
    }
    Ok(kept)
}

fn polish(params: &ChainParams, mut n: f64, drive_sq: f64) -> f64 {
    for _ in 0..50 {
        let f = cubic_lhs(params, n) - drive_sq;
        let df = stability_margin(params, n);
        if df == 0.0 {
            break;
        }
        let step = f / df;
        n -= step;
        if step.abs() <= 1e-16 * n.abs().max(1e-300) {
            break;
        }
    }
    n
}

/// Branches of the driven first mode: `S_1 = -i f / (gamma + i(delta + k n_1))`.
pub fn solve_first_mode(f: f64, params: &ChainParams) -> Result<Vec<ClassicalFixedPoint>> {
    if f < 0.0 {
        return Err(Error::InvalidParams(format!("drive must be non-negative, got {f}")));
    }
    let g = params.gamma;
    population_roots(params, f * f)?
        .into_iter()
        .map(|n| {
            let s = C64::new(0.0, -f) / C64::new(g, shifted(params, n));
            Ok(ClassicalFixedPoint::new(vec![s], vec![stability_margin(params, n) > 0.0]))
        })
        .collect()
}

/// Branches of a mode driven by the upstream amplitude `s_prev` through a
/// link of efficiency `eta`: `S = sqrt(eta) gamma s_prev / (gamma + i(delta + k n))`.
pub fn solve_next_mode_with_eta(s_prev: C64, eta: f64, params: &ChainParams) -> Result<Vec<ClassicalFixedPoint>> {
    let g = params.gamma;
    let c = eta.sqrt() * g;
    population_roots(params, c * c * s_prev.norm_sqr())?
        .into_iter()
        .map(|n| {
            let s = s_prev * c / C64::new(g, shifted(params, n));
            Ok(ClassicalFixedPoint::new(vec![s], vec![stability_margin(params, n) > 0.0]))
        })
        .collect()
}

/// Branches of a mode driven by its perfectly coupled upstream neighbour.
pub fn solve_next_mode(s_prev: C64, params: &ChainParams) -> Result<Vec<ClassicalFixedPoint>> {
    solve_next_mode_with_eta(s_prev, 1.0, params)
}

/// Every branch combination of the full chain at the drive in `params`.
pub fn chain_fixed_points(params: &ChainParams) -> Result<Vec<ClassicalFixedPoint>> {
    let mut points = solve_first_mode(params.drive, params)?;
    for m in 1..params.n_modes {
        let mut next = Vec::new();
        for p in &points {
            let s_prev = p.amplitudes[m - 1];
            for b in solve_next_mode_with_eta(s_prev, params.link_eta(m - 1), params)? {
                next.push(p.extended(&b));
            }
        }
        points = next;
    }
    Ok(points)
}

/// Populations `[n_1, ..., n_N]` given the last one, walking upstream with
/// `n_{m-1} = n_m (gamma^2 + (delta + k n_m)^2) / (eta gamma^2)`.
pub fn population_chain(n_last: f64, params: &ChainParams, n_modes: usize) -> Result<Vec<f64>> {
    if n_last < 0.0 || !n_last.is_finite() {
        return Err(Error::InvalidParams(format!("population must be non-negative, got {n_last}")));
    }
    if n_modes == 0 {
        return Err(Error::InvalidParams("need at least one mode".into()));
    }
    let g2 = params.gamma * params.gamma;
    let mut pops = vec![0.0; n_modes];
    pops[n_modes - 1] = n_last;
    for m in (1..n_modes).rev() {
        let eta = if m < params.n_modes { params.link_eta(m - 1) } else { 1.0 };
        if eta == 0.0 {
            return Err(Error::SingularParameters(format!("link {} -> {m} is uncoupled", m - 1)));
        }
        let n = pops[m];
        let s = shifted(params, n);
        pops[m - 1] = n * (g2 + s * s) / (eta * g2);
    }
    Ok(pops)
}

/// Fixed point reached with a real drive such that the last mode holds
/// `n_last` photons. Returns the point and the drive amplitude.
pub fn fixed_point_from_last(n_last: f64, params: &ChainParams) -> Result<(ClassicalFixedPoint, f64)> {
    params.validate()?;
    let pops = population_chain(n_last, params, params.n_modes)?;
    let g = params.gamma;
    let f = cubic_lhs(params, pops[0]).sqrt();
    let mut amps = Vec::with_capacity(params.n_modes);
    amps.push(C64::new(0.0, -f) / C64::new(g, shifted(params, pops[0])));
    for m in 1..params.n_modes {
        let c = params.link_eta(m - 1).sqrt() * g;
        let prev = amps[m - 1];
        amps.push(prev * c / C64::new(g, shifted(params, pops[m])));
    }
    let stable = pops.iter().map(|&n| stability_margin(params, n) > 0.0).collect();
    Ok((ClassicalFixedPoint::new(amps, stable), f))
}

/// All fixed points at one drive value.
#[derive(Debug, Clone, PartialEq)]
pub struct BistabilityRow {
    pub drive: f64,
    pub branches: Vec<ClassicalFixedPoint>,
}

/// Fixed points along a drive grid, rows in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct BistabilityTable {
    pub n_modes: usize,
    pub rows: Vec<BistabilityRow>,
}

/// Direction of a quasi-static drive sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    Up,
    Down,
}

/// Solve every grid point (parallel map, order preserved).
pub fn bistability_scan(f_grid: &[f64], params: &ChainParams) -> Result<BistabilityTable> {
    if f_grid.is_empty() {
        return Err(Error::EmptyGrid("drive grid"));
    }
    if let Some(f) = f_grid.iter().find(|f| !(**f >= 0.0)) {
        return Err(Error::InvalidParams(format!("drive grid entries must be non-negative, got {f}")));
    }
    let rows = f_grid
        .par_iter()
        .map(|&f| {
            let branches = chain_fixed_points(&params.with_drive(f))?;
            Ok(BistabilityRow { drive: f, branches })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BistabilityTable { n_modes: params.n_modes, rows })
}

impl BistabilityTable {
    /// Number of distinct stable population values of `mode` per row.
    pub fn stable_counts(&self, mode: usize) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| {
                let mut vals: Vec<f64> =
                    r.branches.iter().filter(|b| b.stable[..=mode].iter().all(|&s| s)).map(|b| b.populations[mode]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1e-12));
                vals.len()
            })
            .collect()
    }

    /// Populations along a quasi-static sweep that stays on a stable branch
    /// as long as it exists (nearest stable combination at each step).
    /// Rows are returned in grid order regardless of direction.
    pub fn follow(&self, direction: SweepDirection) -> Vec<Vec<f64>> {
        let order: Vec<usize> = match direction {
            SweepDirection::Up => (0..self.rows.len()).collect(),
            SweepDirection::Down => (0..self.rows.len()).rev().collect(),
        };
        let mut path = vec![Vec::new(); self.rows.len()];
        let mut prev: Option<Vec<f64>> = None;
        for i in order {
            let stable: Vec<&ClassicalFixedPoint> = self.rows[i].branches.iter().filter(|b| b.is_stable()).collect();
            let pool: Vec<&ClassicalFixedPoint> =
                if stable.is_empty() { self.rows[i].branches.iter().collect() } else { stable };
            let pick = match &prev {
                None => match direction {
                    SweepDirection::Up => pool.iter().min_by(|a, b| total(a).partial_cmp(&total(b)).unwrap()),
                    SweepDirection::Down => pool.iter().max_by(|a, b| total(a).partial_cmp(&total(b)).unwrap()),
                },
                Some(p) => pool.iter().min_by(|a, b| distance(a, p).partial_cmp(&distance(b, p)).unwrap()),
            };
            let chosen = pick.map(|b| b.populations.clone()).unwrap_or_default();
            prev = Some(chosen.clone());
            path[i] = chosen;
        }
        path
    }

    /// Discontinuities of `mode` along a sweep, as grid indices `i` where the
    /// population jumps between rows `i - 1` and `i`.
    ///
    /// A jump is a first difference that is at least 5% of the population and
    /// ten times larger than both neighbouring differences.
    pub fn jumps(&self, mode: usize, direction: SweepDirection) -> Vec<usize> {
        let path = self.follow(direction);
        let n: Vec<f64> = path.iter().map(|p| p[mode]).collect();
        let diffs: Vec<f64> = n.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let mut out = Vec::new();
        for (j, &d) in diffs.iter().enumerate() {
            let left = if j > 0 { diffs[j - 1] } else { 0.0 };
            let right = diffs.get(j + 1).copied().unwrap_or(0.0);
            let scale = n[j].max(n[j + 1]);
            if d > 0.05 * scale && d > 10.0 * left && d > 10.0 * right {
                out.push(j + 1);
            }
        }
        out
    }

    /// Fold count of `mode`: jumps on an upward sweep.
    pub fn fold_count(&self, mode: usize) -> usize {
        self.jumps(mode, SweepDirection::Up).len()
    }

    /// Whether any row has more than one stable value for `mode`.
    pub fn has_multistability(&self, mode: usize) -> bool {
        self.stable_counts(mode).iter().any(|&c| c > 1)
    }
}

fn total(p: &ClassicalFixedPoint) -> f64 {
    p.populations.iter().sum()
}

fn distance(p: &ClassicalFixedPoint, prev: &[f64]) -> f64 {
    p.populations.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(n: usize, g: f64, k: f64, d: f64) -> ChainParams {
        ChainParams::new(n, g, k, d, 0.0)
    }

    #[test]
    fn linear_cavity_single_branch() {
        let p = params(1, 0.3, 0.0, 0.2);
        let b = solve_first_mode(0.4, &p).unwrap();
        assert_eq!(b.len(), 1);
        assert_abs_diff_eq!(b[0].populations[0], 0.16 / (0.09 + 0.04), epsilon = 1e-14);
        let expected = C64::new(0.0, -0.4) / C64::new(0.3, 0.2);
        assert!((b[0].amplitudes[0] - expected).norm() < 1e-14);
    }

    #[test]
    fn three_branches_beyond_threshold() {
        let g = 0.5;
        let p = params(1, g, 0.05, -2.0 * 3f64.sqrt() * g);
        let counts: Vec<usize> =
            (0..400).map(|i| solve_first_mode(i as f64 * 0.02, &p).unwrap().len()).collect();
        assert!(counts.iter().any(|&c| c == 3));
        assert!(counts.iter().all(|&c| c == 1 || c == 3));
    }

    #[test]
    fn single_branch_below_threshold() {
        let g = 0.5;
        for &d in &[0.5 * 3f64.sqrt() * g, -0.5 * 3f64.sqrt() * g, 0.0, -0.99 * 3f64.sqrt() * g] {
            let p = params(1, g, 0.05, d);
            for i in 0..400 {
                assert_eq!(solve_first_mode(i as f64 * 0.05, &p).unwrap().len(), 1);
            }
        }
    }

    #[test]
    fn next_mode_examples() {
        let p = params(2, 0.3, 0.2, 0.1);
        let b = solve_next_mode(C64::new(0.0, 0.0), &p).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].amplitudes[0], C64::new(0.0, 0.0));

        let lin = params(2, 0.3, 0.0, 0.0);
        let s = C64::new(0.2, -0.7);
        let b = solve_next_mode(s, &lin).unwrap();
        assert!((b[0].amplitudes[0] - s).norm() < 1e-14);
        let lin_d = params(2, 0.3, 0.0, 0.4);
        let b = solve_next_mode(s, &lin_d).unwrap();
        assert_abs_diff_eq!(b[0].populations[0], 0.09 * s.norm_sqr() / (0.09 + 0.16), epsilon = 1e-14);
    }

    #[test]
    fn population_chain_examples() {
        let p = params(2, 1.0, 1.0, 0.0);
        assert_eq!(population_chain(0.0, &p, 3).unwrap(), vec![0.0, 0.0, 0.0]);
        let pops = population_chain(0.1, &p, 2).unwrap();
        assert_abs_diff_eq!(pops[0], 0.101, epsilon = 1e-15);
    }

    #[test]
    fn fixed_point_from_last_round_trips() {
        let p = ChainParams::new(3, 0.2, 0.2, 0.05, 0.0);
        let (fp, f) = fixed_point_from_last(0.3, &p).unwrap();
        assert_abs_diff_eq!(fp.populations[2], 0.3, epsilon = 1e-12);
        let solved = chain_fixed_points(&p.with_drive(f)).unwrap();
        assert!(solved.iter().any(|s| s.amplitudes.iter().zip(&fp.amplitudes).all(|(a, b)| (a - b).norm() < 1e-9)));
    }

    #[test]
    fn scan_of_linear_chain_is_smooth() {
        let p = params(2, 0.3, 0.0, 0.1);
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let t = bistability_scan(&grid, &p).unwrap();
        for r in &t.rows {
            assert_eq!(r.branches.len(), 1);
            assert_abs_diff_eq!(r.branches[0].populations[0], r.drive * r.drive / (0.09 + 0.01), epsilon = 1e-12);
        }
        assert_eq!(t.fold_count(0), 0);
        assert_eq!(t.fold_count(1), 0);
        assert!(bistability_scan(&[], &p).is_err());
    }

    #[test]
    fn middle_branch_is_unstable() {
        let g = 0.5;
        let p = params(1, g, 0.05, -2.0 * 3f64.sqrt() * g);
        let grid: Vec<f64> = (0..300).map(|i| i as f64 * 0.02).collect();
        let t = bistability_scan(&grid, &p).unwrap();
        for r in &t.rows {
            if r.branches.len() == 3 {
                let mut b = r.branches.clone();
                b.sort_by(|x, y| x.populations[0].partial_cmp(&y.populations[0]).unwrap());
                assert_eq!(b.iter().map(|x| x.stable[0]).collect::<Vec<_>>(), vec![true, false, true]);
            }
        }
        assert!(t.stable_counts(0).iter().all(|&c| c == 1 || c == 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn roots_satisfy_cubic(g in 0.05f64..1.0, k in -1.0f64..1.0, d in -2.0f64..2.0, f in 0.0f64..3.0) {
            let p = params(1, g, k, d);
            let roots = population_roots(&p, f * f).unwrap();
            prop_assert!(roots.len() == 1 || roots.len() == 3);
            for n in roots {
                prop_assert!(cubic_residual(&p, n, f * f) < RESIDUAL_TOL);
            }
        }

        #[test]
        fn chain_relation_is_monotone(g in 0.05f64..1.0, k in -1.0f64..1.0, d in -1.0f64..1.0, n in 0.0f64..3.0) {
            let p = params(3, g, k, d);
            let pops = population_chain(n, &p, 3).unwrap();
            for w in pops.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn linear_populations_even_in_detuning(g in 0.05f64..1.0, d in -1.0f64..1.0, f in 0.0f64..2.0) {
            let a = chain_fixed_points(&ChainParams::new(2, g, 0.0, d, f)).unwrap();
            let b = chain_fixed_points(&ChainParams::new(2, g, 0.0, -d, f)).unwrap();
            for m in 0..2 {
                prop_assert!((a[0].populations[m] - b[0].populations[m]).abs() <= 1e-12 * a[0].populations[m].max(1.0));
            }
        }

        #[test]
        fn chain_round_trip(g in 0.05f64..1.0, k in 0.0f64..1.0, d in 0.0f64..1.0, f in 0.01f64..2.0) {
            // k, d >= 0 keeps every mode single-valued
            let p = ChainParams::new(2, g, k, d, f);
            let pts = chain_fixed_points(&p).unwrap();
            prop_assert_eq!(pts.len(), 1);
            let pops = population_chain(pts[0].populations[1], &p, 2).unwrap();
            prop_assert!((pops[0] - pts[0].populations[0]).abs() <= 1e-10 * pops[0].max(1.0));
        }
    }
}
