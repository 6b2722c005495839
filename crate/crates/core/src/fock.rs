//! Truncated multimode Fock space.
//!
//! Tensor ordering: mode 0 is the slowest-varying (leftmost) factor, so the
//! basis index of `|n_0, n_1, ..., n_{N-1}>` is
//! `((n_0 * d_1 + n_1) * d_2 + n_2) ...`.

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix, C64, ONE, ZERO};

/// Per-mode truncation dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FockDims {
    per_mode: Vec<usize>,
    total: usize,
}

impl FockDims {
    pub fn new(per_mode: Vec<usize>) -> Result<Self> {
        if per_mode.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if let Some(&d) = per_mode.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension(d));
        }
        let total = per_mode.iter().product();
        Ok(Self { per_mode, total })
    }

    /// `n_modes` modes, each truncated at `d`.
    pub fn uniform(n_modes: usize, d: usize) -> Result<Self> {
        Self::new(vec![d; n_modes])
    }

    pub fn per_mode(&self) -> &[usize] {
        &self.per_mode
    }

    pub fn n_modes(&self) -> usize {
        self.per_mode.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn dim(&self, mode: usize) -> Result<usize> {
        self.per_mode.get(mode).copied().ok_or(Error::ModeOutOfRange { mode, n_modes: self.n_modes() })
    }

    /// Dimensions with every truncation increased by `extra`.
    pub fn enlarged(&self, extra: usize) -> Self {
        Self::new(self.per_mode.iter().map(|d| d + extra).collect()).expect("enlarging keeps d >= 2")
    }

    /// Occupation numbers of a flat basis index.
    pub fn occupations(&self, mut index: usize) -> Vec<usize> {
        let mut occ = vec![0; self.n_modes()];
        for (m, &d) in self.per_mode.iter().enumerate().rev() {
            occ[m] = index % d;
            index /= d;
        }
        occ
    }

    /// Flat basis index of an occupation pattern.
    pub fn index_of(&self, occ: &[usize]) -> Result<usize> {
        if occ.len() != self.n_modes() {
            return Err(Error::DimensionMismatch { expected: self.n_modes(), found: occ.len() });
        }
        let mut idx = 0;
        for (&n, &d) in occ.iter().zip(&self.per_mode) {
            if n >= d {
                return Err(Error::DimensionMismatch { expected: d, found: n + 1 });
            }
            idx = idx * d + n;
        }
        Ok(idx)
    }
}

/// Operator on a truncated Fock space (sparse storage).
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    dims: FockDims,
    matrix: CsrMatrix,
}

impl FockOperator {
    pub fn new(dims: FockDims, matrix: CsrMatrix) -> Result<Self> {
        let t = dims.total();
        if matrix.nrows() != t || matrix.ncols() != t {
            return Err(Error::DimensionMismatch { expected: t, found: matrix.nrows().max(matrix.ncols()) });
        }
        Ok(Self { dims, matrix })
    }

    pub fn from_dense(dims: FockDims, m: &DenseMatrix) -> Result<Self> {
        Self::new(dims, CsrMatrix::from_dense(m))
    }

    pub fn dims(&self) -> &FockDims {
        &self.dims
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.matrix.to_dense()
    }

    pub fn adjoint(&self) -> Self {
        Self { dims: self.dims.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { dims: self.dims.clone(), matrix: self.matrix.scale(c) }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self { dims: self.dims.clone(), matrix: self.matrix.add(&other.matrix) })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self { dims: self.dims.clone(), matrix: self.matrix.sub(&other.matrix) })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self { dims: self.dims.clone(), matrix: self.matrix.matmul(&other.matrix) })
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        self.matrix.mul_vec(psi)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch { expected: self.dims.total(), found: other.dims.total() });
        }
        Ok(())
    }
}

fn single_mode_dims(d: usize) -> Result<FockDims> {
    FockDims::new(vec![d])
}

/// Single-mode annihilation operator with `<n-1|a|n> = sqrt(n)`.
pub fn destroy(d: usize) -> Result<FockOperator> {
    let dims = single_mode_dims(d)?;
    let t = (1..d).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))).collect();
    FockOperator::new(dims, CsrMatrix::from_triplets(d, d, t))
}

pub fn identity(d: usize) -> Result<FockOperator> {
    FockOperator::new(single_mode_dims(d)?, CsrMatrix::identity(d))
}

/// Single-mode number operator `a^dagger a`.
pub fn number(d: usize) -> Result<FockOperator> {
    let diag: Vec<C64> = (0..d).map(|n| C64::new(n as f64, 0.0)).collect();
    FockOperator::new(single_mode_dims(d)?, CsrMatrix::from_diagonal(&diag))
}

/// Place a single-mode operator into slot `mode` of a multimode space.
pub fn embed(op: &FockOperator, mode: usize, dims: &FockDims) -> Result<FockOperator> {
    let d = dims.dim(mode)?;
    if op.dims().n_modes() != 1 || op.dims().total() != d {
        return Err(Error::DimensionMismatch { expected: d, found: op.dims().total() });
    }
    let left: usize = dims.per_mode()[..mode].iter().product();
    let right: usize = dims.per_mode()[mode + 1..].iter().product();
    let m = CsrMatrix::identity(left).kron(op.matrix()).kron(&CsrMatrix::identity(right));
    FockOperator::new(dims.clone(), m)
}

/// Annihilation operator of `mode` on the full space.
pub fn destroy_on(dims: &FockDims, mode: usize) -> Result<FockOperator> {
    embed(&destroy(dims.dim(mode)?)?, mode, dims)
}

/// Number operator of `mode` on the full space.
pub fn number_on(dims: &FockDims, mode: usize) -> Result<FockOperator> {
    embed(&number(dims.dim(mode)?)?, mode, dims)
}

/// Tolerances for accepting a matrix as a density matrix.
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Validated density matrix (dense storage).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: FockDims,
    matrix: DenseMatrix,
}

impl DensityMatrix {
    /// Validate Hermiticity, unit trace and numerical positivity.
    pub fn new(dims: FockDims, matrix: DenseMatrix) -> Result<Self> {
        let rho = Self::new_unchecked(dims, matrix)?;
        let herm = rho.matrix.hermiticity_defect();
        if herm > HERMITICITY_TOL {
            return Err(Error::InvalidParams(format!("density matrix is not Hermitian (defect {herm:.3e})")));
        }
        let tr = rho.matrix.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidParams(format!("density matrix trace is {tr}, expected 1")));
        }
        let min_eig = rho.min_eigenvalue()?;
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidParams(format!("density matrix has eigenvalue {min_eig:.3e}")));
        }
        Ok(rho)
    }

    /// Shape check only. Used by solvers that validate separately.
    pub(crate) fn new_unchecked(dims: FockDims, matrix: DenseMatrix) -> Result<Self> {
        let t = dims.total();
        if matrix.nrows() != t || matrix.ncols() != t {
            return Err(Error::DimensionMismatch { expected: t, found: matrix.nrows() });
        }
        Ok(Self { dims, matrix })
    }

    /// Hermitize and renormalize before validating.
    pub fn from_approximate(dims: FockDims, mut matrix: DenseMatrix) -> Result<Self> {
        matrix.hermitize();
        let tr = matrix.trace().re;
        if tr.abs() < 1e-300 {
            return Err(Error::InvalidParams("density matrix has zero trace".into()));
        }
        let matrix = matrix.scale(C64::new(1.0 / tr, 0.0));
        Self::new(dims, matrix)
    }

    /// Pure state `|psi><psi|` (normalized internally).
    pub fn from_pure(dims: FockDims, psi: &[C64]) -> Result<Self> {
        if psi.len() != dims.total() {
            return Err(Error::DimensionMismatch { expected: dims.total(), found: psi.len() });
        }
        let norm = crate::linalg::norm_sqr(psi).sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidParams("zero state vector".into()));
        }
        let v: Vec<C64> = psi.iter().map(|x| x / norm).collect();
        Self::new(dims, DenseMatrix::outer(&v, &v))
    }

    pub fn dims(&self) -> &FockDims {
        &self.dims
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.matrix.hermitian_eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    /// `<n|rho|n>` for a flat basis index.
    pub fn population(&self, index: usize) -> f64 {
        self.matrix[(index, index)].re
    }

    /// Tensor product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        let mut per_mode = self.dims.per_mode().to_vec();
        per_mode.extend_from_slice(other.dims.per_mode());
        Self::new_unchecked(FockDims::new(per_mode)?, self.matrix.kron(&other.matrix))
    }

    /// Vacuum on every mode.
    pub fn vacuum(dims: &FockDims) -> Self {
        let mut m = DenseMatrix::zeros(dims.total(), dims.total());
        m[(0, 0)] = ONE;
        Self { dims: dims.clone(), matrix: m }
    }

    /// Single-mode Fock state `|n><n|`.
    pub fn fock(d: usize, n: usize) -> Result<Self> {
        if n >= d {
            return Err(Error::DimensionMismatch { expected: d, found: n + 1 });
        }
        let dims = single_mode_dims(d)?;
        let mut m = DenseMatrix::zeros(d, d);
        m[(n, n)] = ONE;
        Ok(Self { dims, matrix: m })
    }

    /// Single-mode coherent state, series truncated at `d` and renormalized.
    pub fn coherent(d: usize, alpha: C64) -> Result<Self> {
        Self::from_pure(single_mode_dims(d)?, &coherent_vector(d, alpha))
    }

    /// Single-mode thermal state with Boltzmann ratio `x`, renormalized on `d` levels.
    pub fn thermal(d: usize, x: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::InvalidParams(format!("thermal ratio {x} outside [0, 1)")));
        }
        let w: Vec<f64> = (0..d).map(|n| x.powi(n as i32)).collect();
        let z: f64 = w.iter().sum();
        let diag: Vec<C64> = w.iter().map(|v| C64::new(v / z, 0.0)).collect();
        Self::new(single_mode_dims(d)?, CsrMatrix::from_diagonal(&diag).to_dense())
    }
}

/// Coherent-state amplitudes `e^{-|a|^2/2} a^n / sqrt(n!)` for `n < d` (unnormalized after truncation).
pub fn coherent_vector(d: usize, alpha: C64) -> Vec<C64> {
    let mut v = Vec::with_capacity(d);
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..d {
        if n > 0 {
            c *= alpha / (n as f64).sqrt();
        }
        v.push(c);
    }
    v
}

/// `Tr(rho * op)`
pub fn expect(rho: &DensityMatrix, op: &FockOperator) -> Result<C64> {
    if rho.dims() != op.dims() {
        return Err(Error::DimensionMismatch { expected: rho.dims().total(), found: op.dims().total() });
    }
    // Tr(rho A) = sum_ij rho_ji A_ij
    Ok(op.matrix().iter().map(|(i, j, a)| rho.matrix()[(j, i)] * a).sum())
}

/// Reduced single-mode state of `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<DensityMatrix> {
    let dims = rho.dims();
    let d = dims.dim(keep)?;
    let left: usize = dims.per_mode()[..keep].iter().product();
    let right: usize = dims.per_mode()[keep + 1..].iter().product();
    let m = rho.matrix();
    let mut out = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut s = ZERO;
            for l in 0..left {
                for r in 0..right {
                    s += m[((l * d + i) * right + r, (l * d + j) * right + r)];
                }
            }
            out[(i, j)] = s;
        }
    }
    DensityMatrix::new_unchecked(single_mode_dims(d)?, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn destroy_examples() {
        let a = destroy(2).unwrap().to_dense();
        assert_eq!(a, DenseMatrix::from_fn(2, 2, |i, j| if (i, j) == (0, 1) { ONE } else { ZERO }));
        let a3 = destroy(3).unwrap();
        assert_eq!(a3.matrix().nnz(), 2);
        assert_eq!(a3.matrix().get(0, 1), ONE);
        assert_abs_diff_eq!(a3.matrix().get(1, 2).re, 2f64.sqrt(), epsilon = 1e-15);
        let a4 = destroy(4).unwrap();
        let n = a4.adjoint().mul(&a4).unwrap();
        assert!(n.matrix().max_abs_diff(number(4).unwrap().matrix()) < 1e-15);
        assert_eq!(destroy(1), Err(Error::InvalidDimension(1)));
    }

    #[test]
    fn canonical_commutator_below_truncation() {
        let a = destroy(6).unwrap();
        let comm = a.commutator(&a.adjoint()).unwrap();
        for n in 0..5 {
            assert_abs_diff_eq!(comm.matrix().get(n, n).re, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(comm.matrix().get(5, 5).re, -5.0, epsilon = 1e-12);
    }

    #[test]
    fn embed_examples() {
        let dims = FockDims::new(vec![2, 2]).unwrap();
        let n1 = embed(&number(2).unwrap(), 1, &dims).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| n1.matrix().get(i, i).re).collect();
        assert_eq!(diag, vec![0.0, 1.0, 0.0, 1.0]);

        let dims3 = FockDims::new(vec![3, 3]).unwrap();
        for mode in 0..2 {
            let id = embed(&identity(3).unwrap(), mode, &dims3).unwrap();
            assert_eq!(id.matrix(), &CsrMatrix::identity(9));
        }
        let a0 = destroy_on(&dims3, 0).unwrap();
        let a1 = destroy_on(&dims3, 1).unwrap();
        assert_eq!(a0.commutator(&a1.adjoint()).unwrap().matrix().max_abs(), 0.0);

        assert!(matches!(embed(&number(3).unwrap(), 2, &dims3), Err(Error::ModeOutOfRange { .. })));
        assert!(matches!(embed(&number(4).unwrap(), 0, &dims3), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn basis_index_convention() {
        let dims = FockDims::new(vec![2, 3, 4]).unwrap();
        assert_eq!(dims.total(), 24);
        assert_eq!(dims.index_of(&[1, 2, 3]).unwrap(), 23);
        assert_eq!(dims.occupations(13), vec![1, 0, 1]);
        // mode 0 slowest: a_0 maps |1,0,0> (index 12) to |0,0,0>
        let a0 = destroy_on(&dims, 0).unwrap();
        assert_eq!(a0.matrix().get(0, 12), ONE);
    }

    #[test]
    fn expect_examples() {
        let vac = DensityMatrix::fock(4, 0).unwrap();
        assert_eq!(expect(&vac, &number(4).unwrap()).unwrap(), ZERO);
        let two = DensityMatrix::fock(4, 2).unwrap();
        assert_eq!(expect(&two, &number(4).unwrap()).unwrap(), c(2.0, 0.0));
        let coh = DensityMatrix::coherent(20, c(0.3, 0.0)).unwrap();
        let a = expect(&coh, &destroy(20).unwrap()).unwrap();
        assert!((a - c(0.3, 0.0)).norm() < 1e-8);
        assert!(expect(&coh, &number(5).unwrap()).is_err());
    }

    #[test]
    fn partial_trace_examples() {
        let ra = DensityMatrix::coherent(3, c(0.2, 0.1)).unwrap();
        let rb = DensityMatrix::thermal(2, 0.3).unwrap();
        let prod = ra.kron(&rb).unwrap();
        assert!(partial_trace(&prod, 0).unwrap().matrix().max_abs_diff(ra.matrix()) < 1e-12);
        assert!(partial_trace(&prod, 1).unwrap().matrix().max_abs_diff(rb.matrix()) < 1e-12);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let dims = FockDims::new(vec![2, 2]).unwrap();
        let bell = DensityMatrix::from_pure(dims, &[c(s, 0.0), ZERO, ZERO, c(s, 0.0)]).unwrap();
        let red = partial_trace(&bell, 0).unwrap();
        assert!(red.matrix().max_abs_diff(&CsrMatrix::from_diagonal(&[c(0.5, 0.0); 2]).to_dense()) < 1e-15);
        assert!(partial_trace(&bell, 2).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let dims = FockDims::new(vec![2]).unwrap();
        let bad_trace = DenseMatrix::identity(2);
        assert!(DensityMatrix::new(dims.clone(), bad_trace).is_err());
        let non_herm = DenseMatrix::from_fn(2, 2, |i, j| if i == j { c(0.5, 0.0) } else if i < j { c(0.1, 0.0) } else { ZERO });
        assert!(DensityMatrix::new(dims.clone(), non_herm).is_err());
        let negative = DenseMatrix::from_fn(2, 2, |i, j| if i == j { c(0.5, 0.0) } else { c(0.9, 0.0) });
        assert!(DensityMatrix::new(dims, negative).is_err());
        assert_eq!(FockDims::new(vec![3, 1]), Err(Error::InvalidDimension(1)));
    }

    fn small_matrix(d: usize) -> impl Strategy<Value = DenseMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), d * d).prop_map(move |v| {
            let data = v.into_iter().map(|(a, b)| c(a, b)).collect();
            DenseMatrix::from_row_major(d, d, data).unwrap()
        })
    }

    fn random_state(d: usize) -> impl Strategy<Value = DensityMatrix> {
        small_matrix(d).prop_map(move |g| {
            let m = g.matmul(&g.adjoint());
            DensityMatrix::from_approximate(FockDims::new(vec![d]).unwrap(), m).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn embed_is_a_homomorphism(a in small_matrix(3), b in small_matrix(3), mode in 0usize..2) {
            let dims = FockDims::new(vec![3, 3]).unwrap();
            let single = FockDims::new(vec![3]).unwrap();
            let oa = FockOperator::from_dense(single.clone(), &a).unwrap();
            let ob = FockOperator::from_dense(single, &b).unwrap();
            let lhs = embed(&oa.mul(&ob).unwrap(), mode, &dims).unwrap();
            let rhs = embed(&oa, mode, &dims).unwrap().mul(&embed(&ob, mode, &dims).unwrap()).unwrap();
            prop_assert!(lhs.matrix().max_abs_diff(rhs.matrix()) < 1e-12);
        }

        #[test]
        fn partial_trace_recovers_factors(ra in random_state(3), rb in random_state(4)) {
            let prod = ra.kron(&rb).unwrap();
            let r0 = partial_trace(&prod, 0).unwrap();
            let r1 = partial_trace(&prod, 1).unwrap();
            prop_assert!(r0.matrix().max_abs_diff(ra.matrix()) < 1e-12);
            prop_assert!(r1.matrix().max_abs_diff(rb.matrix()) < 1e-12);
            prop_assert!((r0.matrix().trace() - ONE).norm() < 1e-12);
        }

        #[test]
        fn sparse_and_dense_paths_agree(a in small_matrix(4), b in small_matrix(4), rho in random_state(4)) {
            let dims = FockDims::new(vec![4]).unwrap();
            let sa = CsrMatrix::from_dense(&a);
            let sb = CsrMatrix::from_dense(&b);
            prop_assert!(sa.matmul(&sb).to_dense().max_abs_diff(&a.matmul(&b)) < 1e-12);
            prop_assert!(sa.kron(&sb).to_dense().max_abs_diff(&a.kron(&b)) < 1e-12);
            prop_assert_eq!(sa.to_dense(), a.clone());
            let op = FockOperator::from_dense(dims, &a).unwrap();
            let dense_expect = rho.matrix().matmul(&a).trace();
            prop_assert!((expect(&rho, &op).unwrap() - dense_expect).norm() < 1e-12);
        }
    }
}
