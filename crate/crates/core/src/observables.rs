//! Observables evaluated on density matrices.
//!
//! Quadratures follow `x = (a + a^†)/2`, `p = (a - a^†)/(2i)`, so the vacuum
//! has `V(x) = V(p) = 1/4` and the Duan witness separability bound is 1.
//! The Wigner function uses the displaced-parity convention
//! `W(alpha) = (2/pi) Tr[rho D(alpha) P D(alpha)^†]` over `(x, p) = (Re alpha, Im alpha)`,
//! so `W(0) = 2/pi` for the vacuum and `W` integrates to 1.

use std::f64::consts::{FRAC_2_PI, PI};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fluctuations::duan_from_moments;
use crate::fock::{destroy_on, expect, number_on, DensityMatrix, FockOperator};
use crate::linalg::C64;

pub const WIGNER_CONVENTION: &str = "W(x+ip) = (2/pi) Tr[rho D P D^dag], x = Re alpha, p = Im alpha";
pub const DUAN_ROUTE_TOL: f64 = 1e-8;
pub const PHASE_SCAN_POINTS: usize = 181;

/// `<a^† a^† a a> / <a^† a>^2` for one mode.
pub fn g2_from_rho(rho: &DensityMatrix, mode: usize) -> Result<f64> {
    let a = destroy_on(rho.dims(), mode)?;
    let n = number_on(rho.dims(), mode)?;
    let pop = expect(rho, &n)?.re;
    if !(pop > 1e-12) {
        return Err(Error::UndefinedG2 { population: pop });
    }
    let ad = a.adjoint();
    let pairs = ad.mul(&ad)?.mul(&a)?.mul(&a)?;
    Ok((expect(rho, &pairs)?.re / (pop * pop)).max(0.0))
}

/// `<a^† a>` for one mode.
pub fn population(rho: &DensityMatrix, mode: usize) -> Result<f64> {
    Ok(expect(rho, &number_on(rho.dims(), mode)?)?.re)
}

/// Overlap with the one-photon Fock state. Since the target is pure the
/// Uhlmann fidelity reduces to `<1|rho|1>`.
pub fn fidelity_single_photon(rho: &DensityMatrix) -> Result<f64> {
    single_mode(rho)?;
    Ok(rho.matrix()[(1, 1)].re.clamp(0.0, 1.0))
}

/// `(V(x), V(p))` for one mode.
pub fn quadrature_variances(rho: &DensityMatrix, mode: usize) -> Result<(f64, f64)> {
    let a = destroy_on(rho.dims(), mode)?;
    let x = a.add(&a.adjoint())?.scale(C64::new(0.5, 0.0));
    let p = a.sub(&a.adjoint())?.scale(C64::new(0.0, -0.5));
    Ok((variance(rho, &x)?, variance(rho, &p)?))
}

fn variance(rho: &DensityMatrix, op: &FockOperator) -> Result<f64> {
    let mean = expect(rho, op)?.re;
    Ok(expect(rho, &op.mul(op)?)?.re - mean * mean)
}

fn single_mode(rho: &DensityMatrix) -> Result<usize> {
    let n = rho.dims().n_modes();
    if n != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: n });
    }
    Ok(rho.dims().per_mode()[0])
}

/// Real function sampled on an `(x, p)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceGrid {
    pub x_values: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Row-major with `p` as the row index.
    pub values: Vec<f64>,
}

impl PhaseSpaceGrid {
    pub fn get(&self, ix: usize, ip: usize) -> f64 {
        self.values[ip * self.x_values.len() + ix]
    }

    fn step(v: &[f64]) -> f64 {
        if v.len() < 2 {
            1.0
        } else {
            (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
        }
    }

    pub fn cell_area(&self) -> f64 {
        Self::step(&self.x_values) * Self::step(&self.p_values)
    }

    pub fn riemann_sum(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum over W < 0 of |W| dx dp`
    pub fn negativity_volume(&self) -> f64 {
        self.values.iter().filter(|w| **w < 0.0).fold(0.0, |acc, w| acc - w) * self.cell_area()
    }
}

/// Generalized Laguerre polynomials `L_m^(alpha)(x)` for `m = 0..=max`.
fn laguerre_all(max: usize, alpha: f64, x: f64) -> Vec<f64> {
    let mut l = Vec::with_capacity(max + 1);
    l.push(1.0);
    if max >= 1 {
        l.push(1.0 + alpha - x);
    }
    for k in 1..max {
        let next = ((2.0 * k as f64 + 1.0 + alpha - x) * l[k] - (k as f64 + alpha) * l[k - 1]) / (k as f64 + 1.0);
        l.push(next);
    }
    l
}

/// Wigner function at a single point via the closed-form matrix elements of
/// the displaced parity operator in the Fock basis.
pub fn wigner_at(rho: &DensityMatrix, alpha: C64) -> Result<f64> {
    let d = single_mode(rho)?;
    Ok(wigner_point(rho, d, &ln_factorials(d), alpha))
}

fn ln_factorials(d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    for n in 1..d {
        v[n] = v[n - 1] + (n as f64).ln();
    }
    v
}

fn wigner_point(rho: &DensityMatrix, d: usize, lnf: &[f64], alpha: C64) -> f64 {
    let m = rho.matrix();
    let b = 4.0 * alpha.norm_sqr();
    let two_a = 2.0 * alpha;
    let mut acc = 0.0;
    // off-diagonal index gap q = n - m
    let mut power = C64::new(1.0, 0.0);
    for q in 0..d {
        let lag = laguerre_all(d - 1 - q, q as f64, b);
        let mut term = C64::new(0.0, 0.0);
        for mm in 0..d - q {
            let n = mm + q;
            let sign = if mm % 2 == 0 { 1.0 } else { -1.0 };
            let norm = (0.5 * (lnf[mm] - lnf[n])).exp();
            term += m[(mm, n)] * (sign * norm * lag[mm]);
        }
        let contrib = (term * power).re;
        acc += if q == 0 { contrib } else { 2.0 * contrib };
        power *= two_a;
    }
    FRAC_2_PI * (-0.5 * b).exp() * acc
}

/// Wigner function of a single-mode state on a rectangular grid.
pub fn wigner(rho: &DensityMatrix, x_range: (f64, f64), p_range: (f64, f64), nx: usize, np: usize) -> Result<PhaseSpaceGrid> {
    let d = single_mode(rho)?;
    if nx == 0 || np == 0 {
        return Err(Error::EmptyGrid("wigner grid"));
    }
    let axis = |(lo, hi): (f64, f64), n: usize| -> Vec<f64> {
        if n == 1 {
            vec![lo]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    };
    let x_values = axis(x_range, nx);
    let p_values = axis(p_range, np);
    let lnf = ln_factorials(d);
    let values = p_values
        .par_iter()
        .flat_map_iter(|&p| {
            let lnf = &lnf;
            x_values.iter().map(move |&x| wigner_point(rho, d, lnf, C64::new(x, p)))
        })
        .collect();
    Ok(PhaseSpaceGrid { x_values, p_values, values })
}

/// Connected moments entering the Duan witness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuanMoments {
    /// `<delta a_1^† delta a_1>`
    pub n1: f64,
    /// `<delta a_2^† delta a_2>`
    pub n2: f64,
    /// `<delta a_1 delta a_2>`
    pub c: C64,
    /// `(<[a_1, a_1^†]> + <[a_2, a_2^†]>) / 2`, which is 1 unless the state
    /// reaches the truncation edge.
    pub commutator: f64,
}

impl DuanMoments {
    /// `commutator + N_1 + N_2 + 2 Re(e^{i phi} C)`
    pub fn at_phase(&self, phi: f64) -> f64 {
        crate::fluctuations::duan_at_phase(self.n1, self.n2, self.c, phi) - 1.0 + self.commutator
    }

    /// Minimum over the phase and its location.
    pub fn minimum(&self) -> (f64, f64) {
        let (e, phi) = duan_from_moments(self.n1, self.n2, self.c);
        (e - 1.0 + self.commutator, phi)
    }
}

pub fn duan_moments(rho: &DensityMatrix, modes: (usize, usize)) -> Result<DuanMoments> {
    if modes.0 == modes.1 {
        return Err(Error::SameModeTwice(modes.0));
    }
    let dims = rho.dims();
    let a1 = destroy_on(dims, modes.0)?;
    let a2 = destroy_on(dims, modes.1)?;
    let m1 = expect(rho, &a1)?;
    let m2 = expect(rho, &a2)?;
    let n1 = expect(rho, &a1.adjoint().mul(&a1)?)?.re - m1.norm_sqr();
    let n2 = expect(rho, &a2.adjoint().mul(&a2)?)?.re - m2.norm_sqr();
    let c = expect(rho, &a1.mul(&a2)?)? - m1 * m2;
    let ccr = |a: &FockOperator| -> Result<f64> { Ok(expect(rho, &a.mul(&a.adjoint())?.sub(&a.adjoint().mul(a)?)?)?.re) };
    let commutator = 0.5 * (ccr(&a1)? + ccr(&a2)?);
    Ok(DuanMoments { n1, n2, c, commutator })
}

/// Variance-route evaluator for `V(x_1 + x_2) + V(p_1 - p_2)` with mode 2 rotated by `e^{i phi}`.
pub struct DuanVariance<'a> {
    rho: &'a DensityMatrix,
    a1: FockOperator,
    a2: FockOperator,
}

impl<'a> DuanVariance<'a> {
    pub fn new(rho: &'a DensityMatrix, modes: (usize, usize)) -> Result<Self> {
        if modes.0 == modes.1 {
            return Err(Error::SameModeTwice(modes.0));
        }
        Ok(Self { rho, a1: destroy_on(rho.dims(), modes.0)?, a2: destroy_on(rho.dims(), modes.1)? })
    }

    pub fn eval(&self, phi: f64) -> Result<f64> {
        let b = self.a2.scale(C64::from_polar(1.0, phi));
        let half = C64::new(0.5, 0.0);
        let x1 = self.a1.add(&self.a1.adjoint())?.scale(half);
        let x2 = b.add(&b.adjoint())?.scale(half);
        let mhalf_i = C64::new(0.0, -0.5);
        let p1 = self.a1.sub(&self.a1.adjoint())?.scale(mhalf_i);
        let p2 = b.sub(&b.adjoint())?.scale(mhalf_i);
        Ok(variance(self.rho, &x1.add(&x2)?)? + variance(self.rho, &p1.sub(&p2)?)?)
    }
}

/// Evenly spaced phases on `[0, 2 pi)`.
pub fn default_phase_grid() -> Vec<f64> {
    (0..PHASE_SCAN_POINTS).map(|i| 2.0 * PI * i as f64 / PHASE_SCAN_POINTS as f64).collect()
}

fn golden_section(f: impl Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok((f(x)?, x))
}

/// Duan witness minimized over the mixing phase. The grid scan is refined
/// by golden-section search around the best grid point, and the result is
/// checked against the closed-form moment minimum. The moment route takes
/// the commutators from the truncated space, so the two routes agree at any
/// truncation.
///
/// Returns `(E_min, phi_min)` with `phi_min` in `[0, 2 pi)`.
pub fn duan_witness_from_rho(rho: &DensityMatrix, modes: (usize, usize), phi_grid: &[f64]) -> Result<(f64, f64)> {
    if phi_grid.is_empty() {
        return Err(Error::EmptyGrid("phase grid"));
    }
    let route = DuanVariance::new(rho, modes)?;
    let scan = phi_grid.par_iter().map(|&phi| route.eval(phi).map(|e| (e, phi))).collect::<Result<Vec<_>>>()?;
    let (best_idx, _) = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
        .expect("non-empty scan");
    let step = if phi_grid.len() > 1 { 2.0 * PI / phi_grid.len() as f64 } else { PI };
    let centre = scan[best_idx].1;
    let (e_min, phi_min) = golden_section(|phi| route.eval(phi), centre - step, centre + step, 1e-9)?;
    let (e_min, phi_min) = if e_min <= scan[best_idx].0 { (e_min, phi_min) } else { (scan[best_idx].0, centre) };

    let m = duan_moments(rho, modes)?;
    let (e_moments, _) = m.minimum();
    let at_phi = m.at_phase(phi_min);
    let gap = (at_phi - e_min).abs().max((e_moments - e_min).abs());
    if gap > DUAN_ROUTE_TOL {
        return Err(Error::RouteDisagreement(format!(
            "variance route {e_min:.12} vs moment route {e_moments:.12} (phi = {phi_min:.6})"
        )));
    }
    Ok((e_min, phi_min.rem_euclid(2.0 * PI)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_vector, FockDims};
    use crate::linalg::DenseMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn g2_examples() {
        let one = DensityMatrix::fock(6, 1).unwrap();
        assert_eq!(g2_from_rho(&one, 0).unwrap(), 0.0);
        let coh = DensityMatrix::coherent(30, C64::new(0.8, 0.3)).unwrap();
        assert!((g2_from_rho(&coh, 0).unwrap() - 1.0).abs() < 1e-8);
        let th = DensityMatrix::thermal(30, 0.2).unwrap();
        assert!((g2_from_rho(&th, 0).unwrap() - 2.0).abs() < 1e-3);
        let vac = DensityMatrix::fock(4, 0).unwrap();
        assert!(matches!(g2_from_rho(&vac, 0), Err(Error::UndefinedG2 { .. })));
    }

    #[test]
    fn fidelity_examples() {
        assert_eq!(fidelity_single_photon(&DensityMatrix::fock(5, 1).unwrap()).unwrap(), 1.0);
        assert_eq!(fidelity_single_photon(&DensityMatrix::fock(5, 0).unwrap()).unwrap(), 0.0);
        let coh = DensityMatrix::coherent(30, c(1.0)).unwrap();
        assert!((fidelity_single_photon(&coh).unwrap() - (-1f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn wigner_examples() {
        let vac = DensityMatrix::fock(8, 0).unwrap();
        assert_abs_diff_eq!(wigner_at(&vac, c(0.0)).unwrap(), FRAC_2_PI, epsilon = 1e-14);
        let one = DensityMatrix::fock(8, 1).unwrap();
        assert_abs_diff_eq!(wigner_at(&one, c(0.0)).unwrap(), -FRAC_2_PI, epsilon = 1e-14);

        let a0 = C64::new(0.7, -0.4);
        let coh = DensityMatrix::coherent(30, a0).unwrap();
        let grid = wigner(&coh, (-1.3, 2.7), (-2.4, 1.6), 81, 81).unwrap();
        assert!((grid.max() - FRAC_2_PI).abs() < 1e-3);
        assert!((wigner_at(&coh, a0).unwrap() - FRAC_2_PI).abs() < 1e-10);
        assert!((grid.riemann_sum() - 1.0).abs() < 0.02);
        assert!(grid.negativity_volume() < 1e-10);
    }

    #[test]
    fn wigner_of_vacuum_is_gaussian() {
        let vac = DensityMatrix::fock(4, 0).unwrap();
        for (x, p) in [(0.3f64, 0.1f64), (-0.5, 0.7), (1.0, -1.0)] {
            let expected = FRAC_2_PI * (-2.0f64 * (x * x + p * p)).exp();
            assert_abs_diff_eq!(wigner_at(&vac, C64::new(x, p)).unwrap(), expected, epsilon = 1e-14);
        }
    }

    /// `exp(M)` by scaling and squaring with a Taylor kernel.
    fn expm(m: &DenseMatrix) -> DenseMatrix {
        let norm = m.max_abs() * m.nrows() as f64;
        let s = norm.log2().ceil().max(0.0) as i32 + 1;
        let scaled = m.scale(c(0.5f64.powi(s)));
        let mut out = DenseMatrix::identity(m.nrows());
        let mut term = DenseMatrix::identity(m.nrows());
        for k in 1..30 {
            term = term.matmul(&scaled).scale(c(1.0 / k as f64));
            out = out.add(&term);
        }
        for _ in 0..s {
            out = out.matmul(&out);
        }
        out
    }

    #[test]
    fn closed_form_matches_displaced_parity() {
        // displacement by matrix exponential on an enlarged space, then truncated
        let (d, big) = (5, 60);
        let mut rho_small = DenseMatrix::zeros(d, d);
        let psi: Vec<C64> = vec![c(0.5), C64::new(0.3, 0.4), c(-0.2), C64::new(0.0, 0.6), c(0.1)];
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for i in 0..d {
            for j in 0..d {
                rho_small.as_mut_slice()[i * d + j] = psi[i] * psi[j].conj() / (norm * norm);
            }
        }
        let rho = DensityMatrix::new(FockDims::new(vec![d]).unwrap(), rho_small.clone()).unwrap();
        let a = crate::fock::destroy(big).unwrap().to_dense();
        for alpha in [C64::new(0.4, -0.2), C64::new(-0.9, 0.5)] {
            let gen = a.adjoint().scale(alpha).sub(&a.scale(alpha.conj()));
            let disp = expm(&gen);
            let parity = DenseMatrix::from_fn(big, big, |i, j| if i == j { c(if i % 2 == 0 { 1.0 } else { -1.0 }) } else { c(0.0) });
            let op = disp.matmul(&parity).matmul(&disp.adjoint());
            let mut tr = c(0.0);
            for i in 0..d {
                for j in 0..d {
                    tr += rho_small[(i, j)] * op[(j, i)];
                }
            }
            let direct = FRAC_2_PI * tr.re;
            assert!((wigner_at(&rho, alpha).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn wigner_rejects_bad_input() {
        let rho = DensityMatrix::fock(3, 0).unwrap();
        assert!(matches!(wigner(&rho, (-1.0, 1.0), (-1.0, 1.0), 0, 5), Err(Error::EmptyGrid(_))));
        let two = rho.kron(&rho).unwrap();
        assert!(wigner(&two, (-1.0, 1.0), (-1.0, 1.0), 3, 3).is_err());
    }

    fn diagonal_state(weights: &[f64]) -> DensityMatrix {
        let total: f64 = weights.iter().sum();
        let d = weights.len();
        let m = DenseMatrix::from_fn(d, d, |i, j| if i == j { c(weights[i] / total) } else { c(0.0) });
        DensityMatrix::new(FockDims::new(vec![d]).unwrap(), m).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fock_diagonal_states_are_rotationally_symmetric(
            w in proptest::collection::vec(0.01f64..1.0, 2..8),
            r in 0.0f64..2.0,
        ) {
            let rho = diagonal_state(&w);
            let vals: Vec<f64> = (0..16)
                .map(|k| wigner_at(&rho, C64::from_polar(r, 2.0 * PI * k as f64 / 16.0)).unwrap())
                .collect();
            let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(spread < 1e-6);
        }

        #[test]
        fn fidelity_is_bounded(w in proptest::collection::vec(0.0f64..1.0, 3..6)) {
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let f = fidelity_single_photon(&diagonal_state(&w)).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn wigner_of_fock_states_normalizes() {
        for n in 0..4 {
            let rho = DensityMatrix::fock(8, n).unwrap();
            let g = wigner(&rho, (-4.0, 4.0), (-4.0, 4.0), 121, 121).unwrap();
            assert!((g.riemann_sum() - 1.0).abs() < 0.02, "n = {n}: {}", g.riemann_sum());
        }
    }

    #[test]
    fn quadrature_variances_of_vacuum() {
        let (vx, vp) = quadrature_variances(&DensityMatrix::fock(5, 0).unwrap(), 0).unwrap();
        assert_abs_diff_eq!(vx, 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(vp, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn duan_on_product_states() {
        let vac = DensityMatrix::vacuum(&FockDims::uniform(2, 4).unwrap());
        let route = DuanVariance::new(&vac, (0, 1)).unwrap();
        for phi in [0.0, 1.0, 2.5] {
            assert_abs_diff_eq!(route.eval(phi).unwrap(), 1.0, epsilon = 1e-12);
        }
        let a = DensityMatrix::coherent(25, C64::new(0.6, 0.2)).unwrap();
        let b = DensityMatrix::coherent(25, C64::new(-0.3, 0.5)).unwrap();
        let prod = a.kron(&b).unwrap();
        let (e, _) = duan_witness_from_rho(&prod, (0, 1), &default_phase_grid()).unwrap();
        assert!((e - 1.0).abs() < 1e-8);
        assert!(matches!(duan_witness_from_rho(&prod, (1, 1), &default_phase_grid()), Err(Error::SameModeTwice(1))));
    }

    #[test]
    fn duan_detects_two_mode_squeezing() {
        // |psi> ∝ sum_n t^n e^{i n chi} |n, n>, truncated; <a1 a2> has phase chi
        let d = 12;
        let (t, chi) = (0.3f64, 0.8f64);
        let dims = FockDims::uniform(2, d).unwrap();
        let mut psi = vec![c(0.0); d * d];
        for n in 0..d {
            psi[dims.index_of(&[n, n]).unwrap()] = C64::from_polar(t.powi(n as i32), chi * n as f64);
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|z| *z /= norm);
        let rho = DensityMatrix::from_pure(dims, &psi).unwrap();
        let (e, phi) = duan_witness_from_rho(&rho, (0, 1), &default_phase_grid()).unwrap();
        // ideal two-mode squeezed vacuum with tanh r = t: E = e^{-2r}
        let r = t.atanh();
        assert!((e - (-2.0 * r).exp()).abs() < 1e-6, "{e}");
        let gap = (phi - (PI - chi)).rem_euclid(2.0 * PI);
        assert!(gap.min(2.0 * PI - gap) < 1e-6, "phi = {phi}");
    }

    #[test]
    fn routes_agree_at_the_truncation_edge() {
        // coherent states cut hard at d = 4 put weight on the top level
        let a = DensityMatrix::coherent(4, C64::new(0.9, 0.3)).unwrap();
        let b = DensityMatrix::coherent(4, C64::new(0.2, -0.7)).unwrap();
        let rho = a.kron(&b).unwrap();
        let m = duan_moments(&rho, (0, 1)).unwrap();
        assert!((m.commutator - 1.0).abs() > 1e-3);
        let route = DuanVariance::new(&rho, (0, 1)).unwrap();
        for phi in [0.0, 0.4, 2.0, 5.5] {
            assert!((route.eval(phi).unwrap() - m.at_phase(phi)).abs() < 1e-12);
        }
        assert!(duan_witness_from_rho(&rho, (0, 1), &default_phase_grid()).is_ok());
    }

    #[test]
    fn moments_of_product_coherent_vanish() {
        let d = 20;
        let psi1 = coherent_vector(d, c(0.5));
        let dims = FockDims::uniform(2, d).unwrap();
        let psi: Vec<C64> = (0..d * d).map(|i| psi1[i / d] * psi1[i % d]).collect();
        let rho = DensityMatrix::from_pure(dims, &psi).unwrap();
        let m = duan_moments(&rho, (0, 1)).unwrap();
        assert!(m.n1.abs() < 1e-10 && m.n2.abs() < 1e-10 && m.c.norm() < 1e-10);
    }
}
