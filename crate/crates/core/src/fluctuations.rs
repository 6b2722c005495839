//! Linearized quantum fluctuations around a mean-field fixed point.
//!
//! Fluctuations are scaled by the classical amplitude and written in polar
//! form, `alpha_m = S_m (1 + i_m - i theta_m)` and
//! `beta_m = S_m^* (1 + i_m + i theta_m)`. The state vector is ordered
//! `[i_1, theta_1, i_2, theta_2, ...]`; use [`i_index`] and [`theta_index`]
//! rather than raw arithmetic.
//!
//! For mode `m` with `a_m = delta + k n_m` and `b_m = delta + 3 k n_m` the
//! drift has diagonal block `[[-gamma, -a_m], [b_m, -gamma]]`. The upstream
//! mode enters through `r = sqrt(eta) gamma S_{m-1} / S_m` as
//! `[[Re r, Im r], [-Im r, Re r]]`. Only the Kerr term is noisy, with
//! `D = [[0, k/2], [k/2, 0]]` on each mode block.

use faer::prelude::Solve;
use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::liouvillian::ChainParams;
use crate::linalg::C64;
use crate::meanfield::{fixed_point_from_last, ClassicalFixedPoint};

pub const LYAPUNOV_TOL: f64 = 1e-10;

#[inline]
pub fn i_index(mode: usize) -> usize {
    2 * mode
}

#[inline]
pub fn theta_index(mode: usize) -> usize {
    2 * mode + 1
}

/// Small dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    n: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self { n, data: rows.iter().flatten().copied().collect() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Largest real part among the eigenvalues.
    pub fn spectral_abscissa(&self) -> Result<f64> {
        let m = Mat::<f64>::from_fn(self.n, self.n, |i, j| self[(i, j)]);
        let eig = m.eigenvalues().map_err(|e| Error::LinearAlgebra(format!("drift eigenvalues: {e:?}")))?;
        Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    }
}

impl std::ops::Index<(usize, usize)> for RealMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// `max |A sigma + sigma A^T + D|`
pub fn lyapunov_residual(a: &RealMatrix, d: &RealMatrix, sigma: &RealMatrix) -> f64 {
    let lhs = a.matmul(sigma);
    let rhs = sigma.matmul(&a.transpose());
    let mut worst: f64 = 0.0;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            worst = worst.max((lhs[(i, j)] + rhs[(i, j)] + d[(i, j)]).abs());
        }
    }
    worst
}

/// Unique solution of `A sigma + sigma A^T + D = 0` for Hurwitz `A`.
pub fn lyapunov_solve(a: &RealMatrix, d: &RealMatrix) -> Result<RealMatrix> {
    let n = a.dim();
    if d.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: d.dim() });
    }
    if !d.is_symmetric(1e-12 * d.max_abs().max(1.0)) {
        return Err(Error::InvalidParams("diffusion matrix must be symmetric".into()));
    }
    let max_real = a.spectral_abscissa()?;
    if !(max_real < 0.0) {
        return Err(Error::UnstablePoint { max_real });
    }
    // row-major vec: (A ⊗ I + I ⊗ A) vec(sigma) = -vec(D)
    let nn = n * n;
    let k = Mat::<f64>::from_fn(nn, nn, |r, c| {
        let (i, j) = (r / n, r % n);
        let (p, q) = (c / n, c % n);
        let mut v = 0.0;
        if q == j {
            v += a[(i, p)];
        }
        if p == i {
            v += a[(j, q)];
        }
        v
    });
    let mut rhs = Mat::<f64>::from_fn(nn, 1, |r, _| -d.data[r]);
    k.partial_piv_lu().solve_in_place(rhs.as_mut());
    let mut sigma = RealMatrix { n, data: (0..nn).map(|r| rhs[(r, 0)]).collect() };
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = s;
            sigma[(j, i)] = s;
        }
    }
    let residual = lyapunov_residual(a, d, &sigma);
    if !(residual < LYAPUNOV_TOL) {
        return Err(Error::NotConverged { residual, tolerance: LYAPUNOV_TOL });
    }
    Ok(sigma)
}

/// Drift, diffusion and stationary covariance of the polar fluctuations.
#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationModel {
    pub point: ClassicalFixedPoint,
    pub drift: RealMatrix,
    pub diffusion: RealMatrix,
    pub covariance: RealMatrix,
}

/// Drift and diffusion matrices without solving for the covariance.
pub fn drift_and_diffusion(point: &ClassicalFixedPoint, params: &ChainParams) -> Result<(RealMatrix, RealMatrix)> {
    params.validate()?;
    let n = point.n_modes();
    if n != params.n_modes {
        return Err(Error::DimensionMismatch { expected: params.n_modes, found: n });
    }
    if let Some(mode) = point.populations.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::DegenerateExpansion { mode });
    }
    let (g, d, k) = (params.gamma, params.delta, params.kerr);
    let mut a = RealMatrix::zeros(2 * n);
    let mut diff = RealMatrix::zeros(2 * n);
    for m in 0..n {
        let (im, tm) = (i_index(m), theta_index(m));
        let nm = point.populations[m];
        a[(im, im)] = -g;
        a[(im, tm)] = -(d + k * nm);
        a[(tm, im)] = d + 3.0 * k * nm;
        a[(tm, tm)] = -g;
        diff[(im, tm)] = 0.5 * k;
        diff[(tm, im)] = 0.5 * k;
        if m > 0 {
            let c = params.link_eta(m - 1).sqrt() * g;
            let r: C64 = point.amplitudes[m - 1] * c / point.amplitudes[m];
            let (ip, tp) = (i_index(m - 1), theta_index(m - 1));
            a[(im, ip)] = r.re;
            a[(im, tp)] = r.im;
            a[(tm, ip)] = -r.im;
            a[(tm, tp)] = r.re;
        }
    }
    Ok((a, diff))
}

/// Linearize about `point` and solve for the stationary covariance.
pub fn linearize(point: &ClassicalFixedPoint, params: &ChainParams) -> Result<FluctuationModel> {
    let (drift, diffusion) = drift_and_diffusion(point, params)?;
    let covariance = lyapunov_solve(&drift, &diffusion)?;
    Ok(FluctuationModel { point: point.clone(), drift, diffusion, covariance })
}

impl FluctuationModel {
    pub fn n_modes(&self) -> usize {
        self.point.n_modes()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes() {
            return Err(Error::ModeOutOfRange { mode, n_modes: self.n_modes() });
        }
        Ok(())
    }

    /// `<x y>` for two entries of the polar state vector.
    pub fn cov(&self, x: usize, y: usize) -> f64 {
        self.covariance[(x, y)]
    }

    /// Normally ordered fluctuation number `<delta a^† delta a> = n (<i^2> + <theta^2>)`.
    pub fn fluctuation_number(&self, mode: usize) -> Result<f64> {
        self.check_mode(mode)?;
        let (i, t) = (i_index(mode), theta_index(mode));
        Ok(self.point.populations[mode] * (self.cov(i, i) + self.cov(t, t)))
    }

    /// `<delta a_p delta a_q> = S_p S_q <(i_p - i theta_p)(i_q - i theta_q)>`.
    pub fn anomalous_correlation(&self, p: usize, q: usize) -> Result<C64> {
        self.check_mode(p)?;
        self.check_mode(q)?;
        let (ip, tp, iq, tq) = (i_index(p), theta_index(p), i_index(q), theta_index(q));
        let reduced = C64::new(self.cov(ip, iq) - self.cov(tp, tq), -(self.cov(ip, tq) + self.cov(tp, iq)));
        Ok(self.point.amplitudes[p] * self.point.amplitudes[q] * reduced)
    }
}

/// `g2(0) = 1 + 4 <i_m^2>`
pub fn g2_linearized(model: &FluctuationModel, mode: usize) -> Result<f64> {
    model.check_mode(mode)?;
    Ok(1.0 + 4.0 * model.cov(i_index(mode), i_index(mode)))
}

/// Closed form for a single driven mode:
/// `1 - k (delta + k n) / (gamma^2 + (delta + k n)(delta + 3 k n))`.
pub fn g2_single_mode_analytic(n1: f64, delta: f64, gamma: f64, kerr: f64) -> Result<f64> {
    let s = delta + kerr * n1;
    let den = gamma * gamma + s * (delta + 3.0 * kerr * n1);
    if den.abs() < 1e-12 {
        return Err(Error::SingularParameters(format!("g2 denominator vanishes ({den:.3e})")));
    }
    Ok(1.0 - kerr * s / den)
}

/// Duan witness from moments at mixing phase `phi` (mode `q` rotated by `e^{i phi}`):
/// `1 + N_p + N_q + 2 Re(e^{i phi} C)`.
pub fn duan_at_phase(n_p: f64, n_q: f64, c: C64, phi: f64) -> f64 {
    1.0 + n_p + n_q + 2.0 * (C64::from_polar(1.0, phi) * c).re
}

/// Minimum over the mixing phase: `1 + N_p + N_q - 2|C|`, attained at `phi = pi - arg C`.
pub fn duan_from_moments(n_p: f64, n_q: f64, c: C64) -> (f64, f64) {
    let phi = (std::f64::consts::PI - c.arg()).rem_euclid(2.0 * std::f64::consts::PI);
    (1.0 + n_p + n_q - 2.0 * c.norm(), phi)
}

fn check_pair(model: &FluctuationModel, modes: (usize, usize)) -> Result<()> {
    if modes.0 == modes.1 {
        return Err(Error::SameModeTwice(modes.0));
    }
    model.check_mode(modes.0)?;
    model.check_mode(modes.1)
}

/// Phase-minimized Duan witness in polar variables:
/// `1 + n_p(<i_p^2> + <th_p^2>) + n_q(<i_q^2> + <th_q^2>)
///  - 2 sqrt(n_p n_q) sqrt((<i_p i_q> - <th_p th_q>)^2 + (<i_p th_q> + <i_q th_p>)^2)`.
pub fn duan_witness_linearized(model: &FluctuationModel, modes: (usize, usize)) -> Result<f64> {
    check_pair(model, modes)?;
    let (p, q) = modes;
    let (ip, tp, iq, tq) = (i_index(p), theta_index(p), i_index(q), theta_index(q));
    let (np, nq) = (model.point.populations[p], model.point.populations[q]);
    let s = model.covariance.clone();
    let cross = ((s[(ip, iq)] - s[(tp, tq)]).powi(2) + (s[(ip, tq)] + s[(iq, tp)]).powi(2)).sqrt();
    Ok(1.0 + np * (s[(ip, ip)] + s[(tp, tp)]) + nq * (s[(iq, iq)] + s[(tq, tq)]) - 2.0 * (np * nq).sqrt() * cross)
}

/// Same witness evaluated from the operator moments `N_p`, `N_q`, `C`.
/// Returns the minimum and the minimizing phase.
pub fn duan_witness_moments(model: &FluctuationModel, modes: (usize, usize)) -> Result<(f64, f64)> {
    check_pair(model, modes)?;
    let (p, q) = modes;
    Ok(duan_from_moments(model.fluctuation_number(p)?, model.fluctuation_number(q)?, model.anomalous_correlation(p, q)?))
}

/// Observables at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepValues {
    pub g2: Vec<f64>,
    pub duan: Option<f64>,
}

/// One point of a phase-space sweep. Failures are kept with their reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub n_last: f64,
    pub delta: f64,
    pub drive: f64,
    pub populations: Vec<f64>,
    pub outcome: std::result::Result<SweepValues, String>,
}

/// Grid of sweep points, `delta` varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceSweep {
    pub n_last_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

impl PhaseSpaceSweep {
    pub fn point(&self, delta_idx: usize, n_idx: usize) -> &SweepPoint {
        &self.points[delta_idx * self.n_last_grid.len() + n_idx]
    }

    /// Smallest `g2` of `mode` over all valid points, with its point.
    pub fn min_g2(&self, mode: usize) -> Option<(f64, &SweepPoint)> {
        self.min_by(|v| v.g2.get(mode).copied())
    }

    pub fn min_duan(&self) -> Option<(f64, &SweepPoint)> {
        self.min_by(|v| v.duan)
    }

    fn min_by(&self, f: impl Fn(&SweepValues) -> Option<f64>) -> Option<(f64, &SweepPoint)> {
        self.points
            .iter()
            .filter_map(|p| p.outcome.as_ref().ok().and_then(&f).map(|v| (v, p)))
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
    }

    pub fn missing(&self) -> usize {
        self.points.iter().filter(|p| p.outcome.is_err()).count()
    }
}

/// Observables at the fixed point where the last mode holds `n_last`.
pub fn evaluate_point(n_last: f64, params: &ChainParams, duan_pair: Option<(usize, usize)>) -> Result<(f64, Vec<f64>, SweepValues)> {
    let (point, drive) = fixed_point_from_last(n_last, params)?;
    let pops = point.populations.clone();
    let model = linearize(&point, params)?;
    let g2 = (0..params.n_modes).map(|m| g2_linearized(&model, m)).collect::<Result<Vec<_>>>()?;
    let duan = duan_pair.map(|pair| duan_witness_linearized(&model, pair)).transpose()?;
    Ok((drive, pops, SweepValues { g2, duan }))
}

/// Sweep over the last mode's population and the detuning, with the drive
/// eliminated through the population chain. Runs as a parallel map.
pub fn sweep_phase_space(
    n_last_grid: &[f64],
    delta_grid: &[f64],
    params: &ChainParams,
    duan_pair: Option<(usize, usize)>,
) -> Result<PhaseSpaceSweep> {
    if n_last_grid.is_empty() {
        return Err(Error::EmptyGrid("population grid"));
    }
    if delta_grid.is_empty() {
        return Err(Error::EmptyGrid("detuning grid"));
    }
    if let Some(n) = n_last_grid.iter().find(|n| !(**n >= 0.0)) {
        return Err(Error::InvalidParams(format!("populations must be non-negative, got {n}")));
    }
    params.validate()?;
    let cells: Vec<(f64, f64)> = delta_grid.iter().flat_map(|&d| n_last_grid.iter().map(move |&n| (d, n))).collect();
    let points = cells
        .par_iter()
        .map(|&(delta, n_last)| {
            let p = params.with_delta(delta);
            match evaluate_point(n_last, &p, duan_pair) {
                Ok((drive, populations, values)) => SweepPoint { n_last, delta, drive, populations, outcome: Ok(values) },
                Err(e) => {
                    let (drive, populations) = match fixed_point_from_last(n_last, &p) {
                        Ok((fp, f)) => (f, fp.populations),
                        Err(_) => (f64::NAN, Vec::new()),
                    };
                    SweepPoint { n_last, delta, drive, populations, outcome: Err(e.to_string()) }
                }
            }
        })
        .collect();
    Ok(PhaseSpaceSweep { n_last_grid: n_last_grid.to_vec(), delta_grid: delta_grid.to_vec(), points })
}

/// `count` points from `lo` to `hi`, geometrically spaced.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// `count` points from `lo` to `hi`, evenly spaced.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}
