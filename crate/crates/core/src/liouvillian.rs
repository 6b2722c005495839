//! Cascade master equation: Hamiltonian, superoperator, explicit Lindblad
//! form, and the three full-quantum solvers (direct steady state, time
//! evolution, Monte Carlo wave functions).
//!
//! Conventions, in the frame rotating at the pump frequency:
//!
//! ```text
//! H = sum_m [ delta a_m^† a_m + (k/2) a_m^† a_m^† a_m a_m ] + f (a_1 + a_1^†)
//! L[rho] = -i[H, rho] + sum_m gamma (2 a_m rho a_m^† - {a_m^† a_m, rho})
//!        + sum_m sqrt(eta_{m,m+1}) gamma ([a_{m+1}^†, a_m rho] + [rho a_m^†, a_{m+1}])
//! ```
//!
//! With these normalizations the mean field obeys
//! `dS_m/dt = -(gamma + i delta) S_m - i k |S_m|^2 S_m + gamma S_{m-1}`.

use faer::prelude::Solve;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{destroy_on, DensityMatrix, FockDims, FockOperator};
use crate::linalg::{norm_sqr, CsrMatrix, DenseMatrix, C64, ONE, ZERO};

/// Physical description of an N-mode cascade chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainParams {
    pub n_modes: usize,
    /// Detuning from the pump, shared by all modes.
    pub delta: f64,
    /// Amplitude decay rate per mode.
    pub gamma: f64,
    pub kerr: f64,
    /// Pump amplitude on mode 0.
    pub drive: f64,
    /// Coupling efficiencies `eta[m][j]`; only the superdiagonal `eta[m][m+1]` is used.
    pub eta: Vec<Vec<f64>>,
}

impl ChainParams {
    /// Identical modes with perfect chain coupling.
    pub fn new(n_modes: usize, gamma: f64, kerr: f64, delta: f64, drive: f64) -> Self {
        let mut eta = vec![vec![0.0; n_modes]; n_modes];
        for m in 0..n_modes.saturating_sub(1) {
            eta[m][m + 1] = 1.0;
        }
        Self { n_modes, delta, gamma, kerr, drive, eta }
    }

    pub fn with_drive(&self, drive: f64) -> Self {
        Self { drive, ..self.clone() }
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }

    pub fn with_kerr(&self, kerr: f64) -> Self {
        Self { kerr, ..self.clone() }
    }

    /// Efficiency of the link feeding mode `m + 1` from mode `m`.
    pub fn link_eta(&self, m: usize) -> f64 {
        self.eta[m][m + 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::InvalidParams("chain needs at least one mode".into()));
        }
        let finite = [self.delta, self.gamma, self.kerr, self.drive].iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.drive < 0.0 {
            return Err(Error::InvalidParams(format!("drive must be non-negative, got {}", self.drive)));
        }
        if self.eta.len() != self.n_modes || self.eta.iter().any(|r| r.len() != self.n_modes) {
            return Err(Error::InvalidParams("eta must be an n_modes x n_modes matrix".into()));
        }
        if self.eta.iter().flatten().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidParams("eta entries must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn check_dims(&self, dims: &FockDims) -> Result<()> {
        self.validate()?;
        if dims.n_modes() != self.n_modes {
            return Err(Error::DimensionMismatch { expected: self.n_modes, found: dims.n_modes() });
        }
        Ok(())
    }
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Chain Hamiltonian in the rotating frame.
pub fn build_hamiltonian(params: &ChainParams, dims: &FockDims) -> Result<FockOperator> {
    params.check_dims(dims)?;
    let t = dims.total();
    let mut h = CsrMatrix::zeros(t, t);
    for m in 0..params.n_modes {
        let a = destroy_on(dims, m)?;
        let ad = a.adjoint();
        let n = ad.matrix().matmul(a.matrix());
        let kerr = ad.matrix().matmul(&n).matmul(a.matrix());
        h = h.axpby(ONE, &n, re(params.delta)).axpby(ONE, &kerr, re(0.5 * params.kerr));
        if m == 0 && params.drive != 0.0 {
            h = h.axpby(ONE, &a.matrix().add(ad.matrix()), re(params.drive));
        }
    }
    FockOperator::new(dims.clone(), h)
}

/// Linear map on column-stacked density matrices: `vec(rho)[i + j*T] = rho[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOperator {
    dims: FockDims,
    matrix: CsrMatrix,
}

impl SuperOperator {
    pub fn new(dims: FockDims, matrix: CsrMatrix) -> Result<Self> {
        let t2 = dims.total() * dims.total();
        if matrix.nrows() != t2 || matrix.ncols() != t2 {
            return Err(Error::DimensionMismatch { expected: t2, found: matrix.nrows() });
        }
        Ok(Self { dims, matrix })
    }

    pub fn dims(&self) -> &FockDims {
        &self.dims
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// `L[rho]` as a matrix.
    pub fn apply(&self, rho: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::unvectorize(&self.matrix.mul_vec(&rho.vectorize()), self.dims.total())
    }

    /// Superoperator of `rho -> A rho B`.
    pub fn sandwich(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
        b.transpose().kron(a)
    }

    /// Superoperator of `rho -> G rho + rho G^† + sum_k A_k rho B_k`.
    fn from_parts(dims: &FockDims, g: &CsrMatrix, sandwiches: &[(CsrMatrix, CsrMatrix, C64)]) -> Result<Self> {
        let id = CsrMatrix::identity(dims.total());
        let mut l = id.kron(g).add(&g.adjoint().transpose().kron(&id));
        for (a, b, c) in sandwiches {
            l = l.axpby(ONE, &Self::sandwich(a, b), *c);
        }
        Self::new(dims.clone(), l)
    }
}

/// Direct construction of the cascade master equation.
pub fn build_cascade_liouvillian(params: &ChainParams, dims: &FockDims) -> Result<SuperOperator> {
    let h = build_hamiltonian(params, dims)?;
    let t = dims.total();
    let gamma = params.gamma;
    let a: Vec<CsrMatrix> = (0..params.n_modes)
        .map(|m| destroy_on(dims, m).map(|op| op.matrix().clone()))
        .collect::<Result<_>>()?;
    let ad: Vec<CsrMatrix> = a.iter().map(CsrMatrix::adjoint).collect();

    // G = -iH - gamma sum n_m + c a_{m+1}^† a_m
    let mut g = h.matrix().scale(C64::new(0.0, -1.0));
    let mut sandwiches = Vec::new();
    for m in 0..params.n_modes {
        g = g.axpby(ONE, &ad[m].matmul(&a[m]), re(-gamma));
        sandwiches.push((a[m].clone(), ad[m].clone(), re(2.0 * gamma)));
    }
    for m in 0..params.n_modes.saturating_sub(1) {
        let c = params.link_eta(m).sqrt() * gamma;
        if c == 0.0 {
            continue;
        }
        g = g.axpby(ONE, &ad[m + 1].matmul(&a[m]), re(c));
        sandwiches.push((a[m].clone(), ad[m + 1].clone(), re(-c)));
        sandwiches.push((a[m + 1].clone(), ad[m].clone(), re(-c)));
    }
    debug_assert_eq!(g.nrows(), t);
    SuperOperator::from_parts(dims, &g, &sandwiches)
}

/// Completely positive form `-i[h_eff, rho] + sum_c (c rho c^† - {c^† c, rho}/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladForm {
    pub h_eff: FockOperator,
    pub jumps: Vec<FockOperator>,
}

impl LindbladForm {
    pub fn dims(&self) -> &FockDims {
        self.h_eff.dims()
    }

    /// `h_eff - (i/2) sum_c c^† c`, the generator of the no-jump evolution.
    pub fn non_hermitian_hamiltonian(&self) -> CsrMatrix {
        let mut h = self.h_eff.matrix().clone();
        for c in &self.jumps {
            h = h.axpby(ONE, &c.matrix().adjoint().matmul(c.matrix()), C64::new(0.0, -0.5));
        }
        h
    }

    pub fn to_superoperator(&self) -> Result<SuperOperator> {
        let g = self.non_hermitian_hamiltonian().scale(C64::new(0.0, -1.0));
        let sandwiches: Vec<_> =
            self.jumps.iter().map(|c| (c.matrix().clone(), c.matrix().adjoint(), ONE)).collect();
        SuperOperator::from_parts(self.dims(), &g, &sandwiches)
    }
}

/// Rewrite the perfect-coupling cascade in explicit Lindblad form.
///
/// The dissipative part has Kossakowski matrix `K` with `2 gamma` on the
/// diagonal and `-gamma` next to it. Its eigenvectors are the discrete sine
/// modes, which give one jump operator per mode.
pub fn lindblad_recast(params: &ChainParams, dims: &FockDims) -> Result<LindbladForm> {
    params.check_dims(dims)?;
    let n = params.n_modes;
    for m in 0..n.saturating_sub(1) {
        if params.link_eta(m) != 1.0 {
            return Err(Error::UnsupportedConfiguration(format!(
                "Lindblad recast needs perfect coupling, but link {m}->{} has eta = {}",
                m + 1,
                params.link_eta(m)
            )));
        }
    }
    let gamma = params.gamma;
    let mut h_eff = build_hamiltonian(params, dims)?;
    let a: Vec<FockOperator> = (0..n).map(|m| destroy_on(dims, m)).collect::<Result<_>>()?;
    for m in 0..n.saturating_sub(1) {
        let fwd = a[m].mul(&a[m + 1].adjoint())?;
        let back = a[m].adjoint().mul(&a[m + 1])?;
        h_eff = h_eff.add(&fwd.sub(&back)?.scale(C64::new(0.0, 0.5 * gamma)))?;
    }
    let np1 = (n + 1) as f64;
    let mut jumps = Vec::with_capacity(n);
    for j in 1..=n {
        let theta = j as f64 * std::f64::consts::PI / np1;
        let lambda = 2.0 * gamma * (1.0 - theta.cos());
        let mut c = FockOperator::new(dims.clone(), CsrMatrix::zeros(dims.total(), dims.total()))?;
        for (m, am) in a.iter().enumerate() {
            let v = (2.0 / np1).sqrt() * ((m + 1) as f64 * theta).sin();
            c = c.add(&am.scale(re(lambda.sqrt() * v)))?;
        }
        jumps.push(c);
    }
    Ok(LindbladForm { h_eff, jumps })
}

/// Residual tolerance of the steady-state solve.
pub const STEADY_STATE_TOL: f64 = 1e-8;

/// Null vector of `L` normalized to unit trace.
///
/// The row of the `rho_00` equation is replaced by the trace constraint and
/// the resulting system is solved by sparse LU with iterative refinement.
pub fn steady_state(l: &SuperOperator) -> Result<DensityMatrix> {
    let t = l.dims().total();
    let n = t * t;
    let mut triplets: Vec<_> = l.matrix().iter().filter(|&(i, _, _)| i != 0).map(|(i, j, v)| faer::sparse::Triplet::new(i, j, v)).collect();
    for i in 0..t {
        triplets.push(faer::sparse::Triplet::new(0, i + i * t, ONE));
    }
    let a = faer::sparse::SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::AmbiguousSteadyState(format!("LU failed: {e:?}")))?;

    let mut rhs = Mat::<C64>::zeros(n, 1);
    rhs[(0, 0)] = ONE;
    let mut x = rhs.clone();
    lu.solve_in_place(x.as_mut());
    let ambiguous = |x: &Mat<C64>| (0..n).any(|i| !x[(i, 0)].re.is_finite() || !x[(i, 0)].im.is_finite() || x[(i, 0)].norm() > 1e6);
    if ambiguous(&x) {
        return Err(Error::AmbiguousSteadyState("trace-constrained system is singular".into()));
    }

    let residual_of = |x: &Mat<C64>| {
        let v: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
        l.matrix().mul_vec(&v).iter().map(|z| z.norm()).fold(0.0, f64::max)
    };
    let mut residual = residual_of(&x);
    for _ in 0..3 {
        if residual < 0.01 * STEADY_STATE_TOL {
            break;
        }
        let mut r = &rhs - &a * &x;
        lu.solve_in_place(r.as_mut());
        x += &r;
        residual = residual_of(&x);
    }
    if ambiguous(&x) {
        return Err(Error::AmbiguousSteadyState("refinement diverged".into()));
    }
    if residual >= STEADY_STATE_TOL {
        return Err(Error::NotConverged { residual, tolerance: STEADY_STATE_TOL });
    }
    let v: Vec<C64> = (0..n).map(|i| x[(i, 0)]).collect();
    DensityMatrix::from_approximate(l.dims().clone(), DenseMatrix::unvectorize(&v, t))
}

/// Largest Liouville-space dimension handed to the direct solver. Three
/// modes at d = 5 (15625) need about 1.5 GB; three modes at d = 6 (46656)
/// exhaust a 5 GB machine.
pub const DIRECT_SOLVE_LIMIT: usize = 25_000;

/// Controls for [`relax_to_steady_state`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxOptions {
    /// Evolution time between residual checks.
    pub chunk: f64,
    pub max_time: f64,
    /// Bound on `max |L[rho]|` relative to the largest entry of `L`.
    pub tol: f64,
    /// Integrator tolerances; the reachable residual is limited by these.
    pub integrator: EvolveOptions,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            chunk: 20.0,
            max_time: 5000.0,
            tol: 1e-9,
            integrator: EvolveOptions { rtol: 1e-10, atol: 1e-12, ..EvolveOptions::default() },
        }
    }
}

/// Steady state by integrating from `rho0` until `max |L[rho]| < tol * max |L_ij|`.
/// The integrator's residual floor grows with the operator norm, which for
/// Kerr terms grows as the square of the truncation.
pub fn relax_to_steady_state(l: &SuperOperator, rho0: &DensityMatrix, opts: &RelaxOptions) -> Result<DensityMatrix> {
    if !(opts.chunk > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidParams("relaxation chunk and tolerance must be positive".into()));
    }
    let scale = l.matrix().iter().map(|(_, _, v)| v.norm()).fold(1.0, f64::max);
    let bound = opts.tol * scale;
    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut residual = f64::INFINITY;
    while t < opts.max_time {
        rho = evolve_with(l, &rho, opts.chunk, 0.05, &opts.integrator)?;
        t += opts.chunk;
        residual = l.apply(rho.matrix()).max_abs();
        if residual < bound {
            return Ok(rho);
        }
    }
    Err(Error::NotConverged { residual, tolerance: bound })
}

/// Direct solve for small systems, relaxation from the vacuum otherwise.
pub fn steady_state_auto(l: &SuperOperator) -> Result<DensityMatrix> {
    let t = l.dims().total();
    if t * t <= DIRECT_SOLVE_LIMIT {
        steady_state(l)
    } else {
        relax_to_steady_state(l, &DensityMatrix::vacuum(l.dims()), &RelaxOptions::default())
    }
}

/// Error control of the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest step accepted before giving up.
    pub min_step: f64,
    pub trace_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, min_step: 1e-12, trace_tol: 1e-8 }
    }
}

/// `rho(t_final)` under `d rho/dt = L[rho]`, with `dt` as the initial step.
pub fn evolve(l: &SuperOperator, rho0: &DensityMatrix, t_final: f64, dt: f64) -> Result<DensityMatrix> {
    evolve_with(l, rho0, t_final, dt, &EvolveOptions::default())
}

/// Dormand-Prince 5(4) with the Hermitian part re-symmetrized after every step.
pub fn evolve_with(
    l: &SuperOperator,
    rho0: &DensityMatrix,
    t_final: f64,
    dt: f64,
    opts: &EvolveOptions,
) -> Result<DensityMatrix> {
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::InvalidParams(format!("need dt > 0 and t_final >= 0 (dt = {dt}, t_final = {t_final})")));
    }
    if rho0.dims() != l.dims() {
        return Err(Error::DimensionMismatch { expected: l.dims().total(), found: rho0.dims().total() });
    }
    if t_final == 0.0 {
        return Ok(rho0.clone());
    }
    let tdim = l.dims().total();
    let n = tdim * tdim;
    let mut y = rho0.matrix().vectorize();
    let trace0 = rho0.matrix().trace();

    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let _ = C;

    let mut k: Vec<Vec<C64>> = vec![vec![ZERO; n]; 7];
    let mut stage = vec![ZERO; n];
    l.matrix().mul_vec_into(&y, &mut k[0]);
    let mut t = 0.0;
    let mut h = dt.min(t_final);
    while t < t_final {
        if t + h > t_final {
            h = t_final - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (r, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += k[r][i] * (h * a);
                    }
                }
                stage[i] = acc;
            }
            let (_, rest) = k.split_at_mut(s);
            l.matrix().mul_vec_into(&stage, &mut rest[0]);
        }
        // stage now holds the 5th-order solution (row 6 of A equals the weights)
        let mut err_sq = 0.0;
        for i in 0..n {
            let mut e = ZERO;
            for (r, w) in E.iter().enumerate() {
                if *w != 0.0 {
                    e += k[r][i] * *w;
                }
            }
            let scale = opts.atol + opts.rtol * y[i].norm().max(stage[i].norm());
            err_sq += (h * e.norm() / scale).powi(2);
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::StepUnderflow { t });
        }
        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut stage);
            hermitize_vec(&mut y, tdim);
            l.matrix().mul_vec_into(&y, &mut k[0]);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < opts.min_step && t < t_final {
            return Err(Error::StepUnderflow { t });
        }
    }
    let rho = DenseMatrix::unvectorize(&y, tdim);
    let drift = (rho.trace() - trace0).norm();
    if drift > opts.trace_tol {
        return Err(Error::TraceDrift { drift });
    }
    DensityMatrix::new(l.dims().clone(), rho)
        .or_else(|_| DensityMatrix::from_approximate(l.dims().clone(), DenseMatrix::unvectorize(&y, tdim)))
}

fn hermitize_vec(v: &mut [C64], t: usize) {
    for i in 0..t {
        v[i + i * t].im = 0.0;
        for j in (i + 1)..t {
            let avg = 0.5 * (v[i + j * t] + v[j + i * t].conj());
            v[i + j * t] = avg;
            v[j + i * t] = avg.conj();
        }
    }
}

/// Integration controls for quantum trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McwfOptions {
    /// Fixed RK4 step for the no-jump evolution.
    pub dt: f64,
    /// Relative tolerance on the norm threshold when locating a jump time.
    pub jump_tol: f64,
}

impl Default for McwfOptions {
    fn default() -> Self {
        Self { dt: 0.01, jump_tol: 1e-6 }
    }
}

/// Final normalized states of an ensemble of trajectories, in trajectory order.
#[derive(Debug, Clone)]
pub struct McwfEnsemble {
    dims: FockDims,
    states: Vec<Vec<C64>>,
    jump_counts: Vec<usize>,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McwfEnsemble {
    pub fn dims(&self) -> &FockDims {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<C64>] {
        &self.states
    }

    pub fn jump_counts(&self) -> &[usize] {
        &self.jump_counts
    }

    /// Trajectory-averaged density matrix, summed in trajectory order.
    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        let t = self.dims.total();
        let mut rho = DenseMatrix::zeros(t, t);
        for psi in &self.states {
            for i in 0..t {
                if psi[i] == ZERO {
                    continue;
                }
                for j in 0..t {
                    rho[(i, j)] += psi[i] * psi[j].conj();
                }
            }
        }
        let rho = rho.scale(re(1.0 / self.states.len() as f64));
        DensityMatrix::from_approximate(self.dims.clone(), rho)
    }

    /// Per-trajectory values of `<psi|op|psi>` (real part).
    pub fn samples(&self, op: &FockOperator) -> Vec<f64> {
        self.states.iter().map(|psi| crate::linalg::inner(psi, &op.apply(psi)).re).collect()
    }

    /// Ensemble mean of a Hermitian observable.
    pub fn estimate(&self, op: &FockOperator) -> Estimate {
        let s = self.samples(op);
        let (mean, var) = mean_var(&s);
        Estimate { mean, stderr: (var / s.len() as f64).sqrt() }
    }

    /// `g2` of `mode` with a delta-method standard error.
    pub fn g2(&self, mode: usize) -> Result<Estimate> {
        let a = destroy_on(&self.dims, mode)?;
        let n_op = a.adjoint().mul(&a)?;
        let num_op = a.adjoint().mul(&n_op)?.mul(&a)?;
        let x = self.samples(&num_op);
        let y = self.samples(&n_op);
        let len = x.len() as f64;
        let (mx, vx) = mean_var(&x);
        let (my, vy) = mean_var(&y);
        if my <= 1e-12 {
            return Err(Error::UndefinedG2 { population: my });
        }
        let cov = if x.len() > 1 {
            x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (len - 1.0)
        } else {
            0.0
        };
        let g = mx / (my * my);
        // gradient of x / y^2
        let (dx, dy) = (1.0 / (my * my), -2.0 * mx / (my * my * my));
        let var = (dx * dx * vx + dy * dy * vy + 2.0 * dx * dy * cov) / len;
        Ok(Estimate { mean: g, stderr: var.max(0.0).sqrt() })
    }
}

fn mean_var(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = if s.len() > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Trajectory-averaged state at `t_final`.
pub fn mcwf_run(lf: &LindbladForm, psi0: &[C64], t_final: f64, n_traj: usize, seed: u64) -> Result<DensityMatrix> {
    mcwf_ensemble(lf, psi0, t_final, n_traj, seed, &McwfOptions::default())?.density_matrix()
}

/// Run `n_traj` trajectories; trajectory `i` uses seed `seed + i`.
pub fn mcwf_ensemble(
    lf: &LindbladForm,
    psi0: &[C64],
    t_final: f64,
    n_traj: usize,
    seed: u64,
    opts: &McwfOptions,
) -> Result<McwfEnsemble> {
    let dims = lf.dims().clone();
    if psi0.len() != dims.total() {
        return Err(Error::DimensionMismatch { expected: dims.total(), found: psi0.len() });
    }
    if n_traj == 0 {
        return Err(Error::InvalidParams("need at least one trajectory".into()));
    }
    if !(opts.dt > 0.0) || !(t_final >= 0.0) {
        return Err(Error::InvalidParams("need dt > 0 and t_final >= 0".into()));
    }
    for c in &lf.jumps {
        if c.dims() != &dims {
            return Err(Error::DimensionMismatch { expected: dims.total(), found: c.dims().total() });
        }
    }
    let norm0 = norm_sqr(psi0).sqrt();
    if norm0 == 0.0 {
        return Err(Error::InvalidParams("zero initial state".into()));
    }
    let psi0: Vec<C64> = psi0.iter().map(|x| x / norm0).collect();
    let gen = lf.non_hermitian_hamiltonian().scale(C64::new(0.0, -1.0));
    let jumps: Vec<&CsrMatrix> = lf.jumps.iter().map(|c| c.matrix()).collect();

    let results: Vec<Result<(Vec<C64>, usize)>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            trajectory(&gen, &jumps, &psi0, t_final, opts, &mut rng)
        })
        .collect();
    let mut states = Vec::with_capacity(n_traj);
    let mut jump_counts = Vec::with_capacity(n_traj);
    for r in results {
        let (psi, jumps) = r?;
        states.push(psi);
        jump_counts.push(jumps);
    }
    Ok(McwfEnsemble { dims, states, jump_counts })
}

struct Rk4Work {
    k: [Vec<C64>; 4],
    tmp: Vec<C64>,
}

fn rk4_step(gen: &CsrMatrix, psi: &[C64], h: f64, w: &mut Rk4Work, out: &mut [C64]) {
    let n = psi.len();
    gen.mul_vec_into(psi, &mut w.k[0]);
    for s in 1..4 {
        let c = if s == 3 { h } else { 0.5 * h };
        for i in 0..n {
            w.tmp[i] = psi[i] + w.k[s - 1][i] * c;
        }
        let (_, rest) = w.k.split_at_mut(s);
        gen.mul_vec_into(&w.tmp, &mut rest[0]);
    }
    for i in 0..n {
        out[i] = psi[i] + (w.k[0][i] + 2.0 * w.k[1][i] + 2.0 * w.k[2][i] + w.k[3][i]) * (h / 6.0);
    }
}

fn trajectory(
    gen: &CsrMatrix,
    jumps: &[&CsrMatrix],
    psi0: &[C64],
    t_final: f64,
    opts: &McwfOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<C64>, usize)> {
    let n = psi0.len();
    let mut w = Rk4Work { k: std::array::from_fn(|_| vec![ZERO; n]), tmp: vec![ZERO; n] };
    let mut psi = psi0.to_vec();
    let mut next = vec![ZERO; n];
    let mut threshold: f64 = rng.gen();
    let mut t = 0.0;
    let mut n_jumps = 0;
    while t < t_final {
        let h = opts.dt.min(t_final - t);
        rk4_step(gen, &psi, h, &mut w, &mut next);
        let norm = norm_sqr(&next);
        if norm > threshold {
            std::mem::swap(&mut psi, &mut next);
            t += h;
            continue;
        }
        // norm crossed the threshold inside this step: bisect the crossing time
        let (mut lo, mut hi) = (0.0, h);
        let mut tau = h;
        for _ in 0..100 {
            tau = 0.5 * (lo + hi);
            rk4_step(gen, &psi, tau, &mut w, &mut next);
            let nrm = norm_sqr(&next);
            if ((nrm - threshold) / threshold).abs() <= opts.jump_tol {
                break;
            }
            if nrm > threshold {
                lo = tau;
            } else {
                hi = tau;
            }
        }
        let weights: Vec<(Vec<C64>, f64)> = jumps
            .iter()
            .map(|c| {
                let v = c.mul_vec(&next);
                let w = norm_sqr(&v);
                (v, w)
            })
            .collect();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if !(total > 1e-300) {
            if norm_sqr(&next) < 1e-12 {
                return Err(Error::IntegratorFailure(format!("norm collapsed at t = {} with no jump channel open", t + tau)));
            }
            // no channel can fire; keep evolving from the crossing point
            std::mem::swap(&mut psi, &mut next);
            t += tau;
            threshold = rng.gen();
            continue;
        }
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (idx, (_, w)) in weights.iter().enumerate() {
            if pick < *w {
                chosen = idx;
                break;
            }
            pick -= w;
        }
        let (v, wsum) = &weights[chosen];
        let s = wsum.sqrt();
        psi = v.iter().map(|x| x / s).collect();
        n_jumps += 1;
        t += tau;
        threshold = rng.gen();
    }
    let s = norm_sqr(&psi).sqrt();
    if s < 1e-12 {
        return Err(Error::IntegratorFailure("state norm collapsed".into()));
    }
    Ok((psi.iter().map(|x| x / s).collect(), n_jumps))
}
