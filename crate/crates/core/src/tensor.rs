//! Dense complex linear algebra over small multi-factor Hilbert spaces.
//!
//! Every object carries the ordered list of its tensor-factor dimensions.
//! Composite indices are row-major in that list: the first factor is the most
//! significant digit, matching the Kronecker product convention. By
//! convention system qubits come first and bath factors last.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Matrix = DMatrix<C64>;
pub type Vector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Tolerance for Hermiticity checks on inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance for normalization of pure states and traces.
pub const NORM_TOL: f64 = 1e-10;

/// Largest entrywise modulus of `a`.
pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

fn check_factor_dims(dims: &[usize], n: usize) -> Result<()> {
    let total: usize = dims.iter().product();
    if total != n || dims.contains(&0) {
        return Err(Error::DimensionMismatch {
            expected: total,
            found: n,
        });
    }
    Ok(())
}

/// A square matrix with declared tensor-factor structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dims: Vec<usize>,
    mat: Matrix,
}

impl Operator {
    pub fn new(dims: Vec<usize>, mat: Matrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        check_factor_dims(&dims, mat.nrows())?;
        Ok(Self { dims, mat })
    }

    /// Single-factor operator.
    pub fn from_matrix(mat: Matrix) -> Result<Self> {
        let n = mat.nrows();
        Self::new(vec![n], mat)
    }

    pub fn identity(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            mat: Matrix::identity(n, n),
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            mat: Matrix::zeros(n, n),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }

    pub fn adjoint(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            mat: self.mat.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            dims: self.dims.clone(),
            mat: &self.mat * c,
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            mat: &self.mat + &other.mat,
        })
    }

    pub fn sub(&self, other: &Operator) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            mat: &self.mat - &other.mat,
        })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            mat: &self.mat * &other.mat,
        })
    }

    fn same_shape(&self, other: &Operator) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    /// max |A - A^H|.
    pub fn hermitian_deviation(&self) -> f64 {
        max_abs_diff(&self.mat, &self.mat.adjoint())
    }

    /// max |U^H U - I|.
    pub fn unitary_deviation(&self) -> f64 {
        let n = self.dim();
        max_abs_diff(&(self.mat.adjoint() * &self.mat), &Matrix::identity(n, n))
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_deviation() <= HERMITIAN_TOL
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitary_deviation() <= tol
    }

    /// Embed an operator acting on `factors` of a space with `dims` into the
    /// full space, with identity on every other factor.
    pub fn embed(&self, dims: &[usize], factors: &[usize]) -> Result<Operator> {
        let n: usize = dims.iter().product();
        let mut mat = Matrix::zeros(n, n);
        let cols: Vec<Vector> = (0..n)
            .map(|j| {
                let mut e = Vector::zeros(n);
                e[j] = ONE;
                apply_local(dims, &e, &self.mat, factors)
            })
            .collect::<Result<_>>()?;
        for (j, c) in cols.into_iter().enumerate() {
            mat.set_column(j, &c);
        }
        Ok(Operator {
            dims: dims.to_vec(),
            mat,
        })
    }
}

/// Kronecker product; factor dims are concatenated.
pub fn kron(a: &Operator, b: &Operator) -> Operator {
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    Operator {
        dims,
        mat: a.mat.kronecker(&b.mat),
    }
}

/// Kronecker product of a sequence of operators.
pub fn kron_all<'a>(ops: impl IntoIterator<Item = &'a Operator>) -> Operator {
    let mut iter = ops.into_iter();
    let first = iter.next().cloned().unwrap_or_else(|| Operator::identity(vec![1]));
    iter.fold(first, |acc, op| kron(&acc, op))
}

/// Eigendecomposition of a Hermitian operator, reusable for many times `t`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    dims: Vec<usize>,
    values: Vec<f64>,
    vectors: Matrix,
}

impl HermitianEigen {
    pub fn new(h: &Operator) -> Result<Self> {
        let dev = h.hermitian_deviation();
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        // Symmetrize so round-off in the input cannot leak into the solver.
        let sym = (&h.mat + h.mat.adjoint()) * C64::new(0.5, 0.0);
        let eig = sym.symmetric_eigen();
        Ok(Self {
            dims: h.dims.clone(),
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    /// exp(-i h t).
    pub fn propagator(&self, t: f64) -> Operator {
        let mut scaled = self.vectors.clone();
        for (j, &e) in self.values.iter().enumerate() {
            let phase = C64::from_polar(1.0, -e * t);
            for z in scaled.column_mut(j).iter_mut() {
                *z *= phase;
            }
        }
        Operator {
            dims: self.dims.clone(),
            mat: scaled * self.vectors.adjoint(),
        }
    }
}

/// U = exp(-i h t), computed from the eigendecomposition of `h`.
pub fn propagator(h: &Operator, t: f64) -> Result<Operator> {
    Ok(HermitianEigen::new(h)?.propagator(t))
}

/// Normalized state vector over a multi-factor space.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    dims: Vec<usize>,
    amps: Vector,
}

impl PureState {
    /// Builds a state, rejecting vectors whose norm is not 1 within 1e-10.
    pub fn new(dims: Vec<usize>, amps: Vector) -> Result<Self> {
        check_factor_dims(&dims, amps.len())?;
        let norm = amps.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { dims, amps })
    }

    /// Builds a state after rescaling to unit norm.
    pub fn normalized(dims: Vec<usize>, amps: Vector) -> Result<Self> {
        check_factor_dims(&dims, amps.len())?;
        let norm = amps.norm();
        if norm == 0.0 {
            return Err(Error::NotNormalized(0.0));
        }
        Ok(Self {
            dims,
            amps: amps / C64::new(norm, 0.0),
        })
    }

    /// Computational basis state with the given digit per factor.
    pub fn basis(dims: Vec<usize>, digits: &[usize]) -> Result<Self> {
        if digits.len() != dims.len() || digits.iter().zip(&dims).any(|(d, n)| d >= n) {
            return Err(Error::InvalidFactors {
                factors: digits.to_vec(),
                dims,
            });
        }
        let n: usize = dims.iter().product();
        let idx = digits.iter().zip(&dims).fold(0, |acc, (d, n)| acc * n + d);
        let mut amps = Vector::zeros(n);
        amps[idx] = ONE;
        Ok(Self { dims, amps })
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, amps: Vector) -> Self {
        Self { dims, amps }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &Vector {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vector {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps.dotc(&other.amps)
    }

    /// |self> (x) |other>.
    pub fn tensor(&self, other: &PureState) -> PureState {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        PureState {
            dims,
            amps: self.amps.kronecker(&other.amps),
        }
    }

    /// Reduced density matrix on the factors in `keep` (sorted ascending).
    pub fn reduced(&self, keep: &[usize]) -> Result<DensityMatrix> {
        let split = FactorSplit::new(&self.dims, keep)?;
        let nk = split.keep_offsets.len();
        let mut out = Matrix::zeros(nk, nk);
        for (i, &oi) in split.keep_offsets.iter().enumerate() {
            for (j, &oj) in split.keep_offsets.iter().enumerate().skip(i) {
                let s: C64 = split
                    .traced_offsets
                    .iter()
                    .map(|&t| self.amps[oi + t] * self.amps[oj + t].conj())
                    .sum();
                out[(i, j)] = s;
                out[(j, i)] = s.conj();
            }
        }
        Ok(DensityMatrix {
            dims: split.keep_dims,
            mat: out,
        })
    }
}

/// u |s>; the norm is preserved when `u` is unitary.
pub fn apply(u: &Operator, s: &PureState) -> Result<PureState> {
    if u.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: s.dim(),
        });
    }
    Ok(PureState {
        dims: s.dims.clone(),
        amps: &u.mat * &s.amps,
    })
}

/// Unit-trace positive semidefinite Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dims: Vec<usize>,
    mat: Matrix,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-12), unit trace (1e-10) and positivity (-1e-9).
    pub fn new(dims: Vec<usize>, mat: Matrix) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        check_factor_dims(&dims, mat.nrows())?;
        let herm = max_abs_diff(&mat, &mat.adjoint());
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!("not Hermitian ({herm:.3e})")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr}")));
        }
        let min_eig = mat
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &e| m.min(e));
        if min_eig < -1e-9 {
            return Err(Error::InvalidDensityMatrix(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { dims, mat })
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, mat: Matrix) -> Self {
        Self { dims, mat }
    }

    pub fn from_pure(s: &PureState) -> Self {
        Self {
            dims: s.dims.clone(),
            mat: &s.amps * s.amps.adjoint(),
        }
    }

    /// I/d over the given factors.
    pub fn maximally_mixed(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        let mat = Matrix::identity(n, n) * C64::new(1.0 / n as f64, 0.0);
        Self { dims, mat }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn kron(&self, other: &DensityMatrix) -> DensityMatrix {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        DensityMatrix {
            dims,
            mat: self.mat.kronecker(&other.mat),
        }
    }

    /// Expectation value Tr(rho A).
    pub fn expectation(&self, a: &Operator) -> Result<C64> {
        if a.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: a.dim(),
            });
        }
        Ok((&self.mat * &a.mat).trace())
    }

    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix> {
        partial_trace(self, keep)
    }
}

/// Offsets splitting a composite index into kept and traced-out digits.
struct FactorSplit {
    keep_dims: Vec<usize>,
    keep_offsets: Vec<usize>,
    traced_offsets: Vec<usize>,
}

impl FactorSplit {
    fn new(dims: &[usize], keep: &[usize]) -> Result<Self> {
        let valid = !keep.is_empty() && keep.iter().all(|&k| k < dims.len()) && keep.windows(2).all(|w| w[0] < w[1]);
        if !valid {
            return Err(Error::InvalidFactors {
                factors: keep.to_vec(),
                dims: dims.to_vec(),
            });
        }
        let strides = strides(dims);
        let traced: Vec<usize> = (0..dims.len()).filter(|f| !keep.contains(f)).collect();
        Ok(Self {
            keep_dims: keep.iter().map(|&k| dims[k]).collect(),
            keep_offsets: sub_offsets(dims, &strides, keep),
            traced_offsets: sub_offsets(dims, &strides, &traced),
        })
    }
}

/// Row-major strides: the first factor is the most significant digit.
pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Full-space offsets for every joint value of `factors`, enumerated with the
/// first listed factor most significant.
pub(crate) fn sub_offsets(dims: &[usize], strides: &[usize], factors: &[usize]) -> Vec<usize> {
    let mut offs = vec![0usize];
    for &f in factors {
        offs = offs
            .iter()
            .flat_map(|&o| (0..dims[f]).map(move |d| o + d * strides[f]))
            .collect();
    }
    offs
}

/// Reduced density matrix over the factors in `keep` (strictly increasing).
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let split = FactorSplit::new(&rho.dims, keep)?;
    let nk = split.keep_offsets.len();
    let mut out = Matrix::zeros(nk, nk);
    for (i, &oi) in split.keep_offsets.iter().enumerate() {
        for (j, &oj) in split.keep_offsets.iter().enumerate() {
            out[(i, j)] = split.traced_offsets.iter().map(|&t| rho.mat[(oi + t, oj + t)]).sum();
        }
    }
    Ok(DensityMatrix {
        dims: split.keep_dims,
        mat: out,
    })
}

/// <target| rho |target>.
pub fn fidelity(target: &PureState, rho: &DensityMatrix) -> Result<f64> {
    if target.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: target.dim(),
        });
    }
    let v = target.amps.dotc(&(&rho.mat * &target.amps));
    Ok(v.re.clamp(0.0, 1.0))
}

/// Gather/scatter offsets for an operator acting on a subset of factors.
struct LocalIndex {
    offs: Vec<usize>,
    bases: Vec<usize>,
}

impl LocalIndex {
    fn new(dims: &[usize], op: &Matrix, factors: &[usize], len: usize) -> Result<Self> {
        let n: usize = dims.iter().product();
        let valid =
            factors.iter().all(|&f| f < dims.len()) && (1..factors.len()).all(|i| !factors[..i].contains(&factors[i]));
        if !valid {
            return Err(Error::InvalidFactors {
                factors: factors.to_vec(),
                dims: dims.to_vec(),
            });
        }
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: len,
            });
        }
        let local: usize = factors.iter().map(|&f| dims[f]).product();
        if op.nrows() != local || op.ncols() != local {
            return Err(Error::DimensionMismatch {
                expected: local,
                found: op.nrows(),
            });
        }
        let st = strides(dims);
        let rest: Vec<usize> = (0..dims.len()).filter(|f| !factors.contains(f)).collect();
        Ok(Self {
            offs: sub_offsets(dims, &st, factors),
            bases: sub_offsets(dims, &st, &rest),
        })
    }
}

/// Apply `op`, acting on the listed factors (first listed = most significant),
/// to a vector over `dims`, leaving every other factor untouched.
pub fn apply_local(dims: &[usize], v: &Vector, op: &Matrix, factors: &[usize]) -> Result<Vector> {
    let idx = LocalIndex::new(dims, op, factors, v.len())?;
    let mut out = Vector::zeros(v.len());
    let mut gathered = Vector::zeros(idx.offs.len());
    for &b in &idx.bases {
        for (k, &o) in idx.offs.iter().enumerate() {
            gathered[k] = v[b + o];
        }
        let y = op * &gathered;
        for (k, &o) in idx.offs.iter().enumerate() {
            out[b + o] = y[k];
        }
    }
    Ok(out)
}

/// `op * m` with `op` acting on the listed factors of the row index of `m`.
pub fn apply_local_left(dims: &[usize], m: &Matrix, op: &Matrix, factors: &[usize]) -> Result<Matrix> {
    let idx = LocalIndex::new(dims, op, factors, m.nrows())?;
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    let mut gathered = Matrix::zeros(idx.offs.len(), m.ncols());
    for &b in &idx.bases {
        for (k, &o) in idx.offs.iter().enumerate() {
            gathered.set_row(k, &m.row(b + o));
        }
        let y = op * &gathered;
        for (k, &o) in idx.offs.iter().enumerate() {
            out.set_row(b + o, &y.row(k));
        }
    }
    Ok(out)
}

/// op rho op^H with `op` acting on the listed factors only.
pub fn conjugate_local(dims: &[usize], rho: &Matrix, op: &Matrix, factors: &[usize]) -> Result<Matrix> {
    let left = apply_local_left(dims, rho, op, factors)?;
    // (op (op rho)^H)^H = op rho op^H
    Ok(apply_local_left(dims, &left.adjoint(), op, factors)?.adjoint())
}

/// Single-qubit operators in the computational basis |0> = (1,0)^T.
pub mod qubit {
    use super::{Matrix, C64, I, ONE, ZERO};

    pub fn identity() -> Matrix {
        Matrix::identity(2, 2)
    }

    pub fn sigma_x() -> Matrix {
        Matrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn sigma_y() -> Matrix {
        Matrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
    }

    pub fn sigma_z() -> Matrix {
        Matrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    /// (sigma_x + i sigma_y)/2 = |0><1|: raises the sigma_z eigenvalue from -1
    /// to +1, so sigma_plus |1> = |0> and sigma_plus |0> = 0.
    pub fn sigma_plus() -> Matrix {
        Matrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
    }

    /// Adjoint of [`sigma_plus`]: |1><0|.
    pub fn sigma_minus() -> Matrix {
        sigma_plus().adjoint()
    }

    pub fn ket0() -> [C64; 2] {
        [ONE, ZERO]
    }

    pub fn ket1() -> [C64; 2] {
        [ZERO, ONE]
    }
}
