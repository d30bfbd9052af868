//! Encodings: the two-qubit decoherence-free subspace, the phase-flip
//! repetition code and the two-block phase-detection code built on top of it,
//! and the Duan-Guo comparison encoding.
//!
//! A DFS block is a qubit pair whose code space is `Span{|01>, |10>}`. On a
//! block the logical operators are
//!
//! * `Z~ = |01><01| - |10><10|`, realized physically as `sigma_z` on the
//!   block's first qubit;
//! * `X~ = |01><10| + |10><01|`, realized as `sigma_x (x) sigma_x`, which
//!   agrees with `X~` on the code space and squares to the identity on the
//!   full block, so stabilizers built from it are proper +-1 observables.
//!
//! Outer codes are written over block states `|+~> = (|01> + |10>)/sqrt(2)`
//! and `|-~> = (|01> - |10>)/sqrt(2)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{apply_local, qubit, DensityMatrix, Matrix, PureState, Vector, C64, ONE, ZERO};

/// Logical amplitudes of `alpha|0> + beta|1>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicalQubit {
    pub alpha: C64,
    pub beta: C64,
}

impl LogicalQubit {
    pub const NORM_TOL: f64 = 1e-12;

    pub fn new(alpha: C64, beta: C64) -> Result<Self> {
        let q = Self { alpha, beta };
        q.validate()?;
        Ok(q)
    }

    pub fn normalized(alpha: C64, beta: C64) -> Result<Self> {
        let n = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::NotNormalized(n));
        }
        Ok(Self {
            alpha: alpha / n,
            beta: beta / n,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alpha.norm_sqr() + self.beta.norm_sqr();
        if (n - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::NotNormalized(n.sqrt()));
        }
        Ok(())
    }

    pub fn zero() -> Self {
        Self { alpha: ONE, beta: ZERO }
    }

    pub fn one() -> Self {
        Self { alpha: ZERO, beta: ONE }
    }

    pub fn plus() -> Self {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { alpha: s, beta: s }
    }

    pub fn minus() -> Self {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { alpha: s, beta: -s }
    }

    /// Haar-random logical state.
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut g = || -> f64 { rng.sample(StandardNormal) };
        let v = [g(), g(), g(), g()];
        Self::normalized(C64::new(v[0], v[1]), C64::new(v[2], v[3])).expect("nonzero gaussian vector")
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_vec(vec![self.alpha, self.beta])
    }

    /// A unit vector orthogonal to this one.
    pub fn orthogonal(&self) -> Self {
        Self {
            alpha: -self.beta.conj(),
            beta: self.alpha.conj(),
        }
    }

    pub fn overlap(&self, other: &LogicalQubit) -> C64 {
        self.alpha.conj() * other.alpha + self.beta.conj() * other.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Unencoded qubit.
    Bare,
    /// Two-qubit DFS, no measurements.
    Dfs,
    /// Two-qubit DFS with Zeno leakage measurements.
    DfsZeno,
    /// DFS + Zeno blocks concatenated with the three-block phase-flip code.
    DfsZenoXQecc3,
    /// DFS + Zeno blocks concatenated with the two-block detection code,
    /// itself protected by repeated stabilizer measurement.
    DfsZenoXDetect2Zeno,
    /// Duan-Guo encoding with Zeno measurements onto its code space.
    DuanGuo,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Bare,
        Scheme::Dfs,
        Scheme::DfsZeno,
        Scheme::DfsZenoXQecc3,
        Scheme::DfsZenoXDetect2Zeno,
        Scheme::DuanGuo,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Bare => "bare",
            Scheme::Dfs => "dfs",
            Scheme::DfsZeno => "dfs_zeno",
            Scheme::DfsZenoXQecc3 => "dfs_zeno_x_qecc3",
            Scheme::DfsZenoXDetect2Zeno => "dfs_zeno_x_detect2_zeno",
            Scheme::DuanGuo => "duan_guo",
        }
    }

    pub fn n_physical(&self) -> usize {
        match self {
            Scheme::Bare => 1,
            Scheme::Dfs | Scheme::DfsZeno | Scheme::DuanGuo => 2,
            Scheme::DfsZenoXQecc3 => 6,
            Scheme::DfsZenoXDetect2Zeno => 4,
        }
    }

    /// Whether leakage measurements are made every Zeno interval.
    pub fn zeno_measured(&self) -> bool {
        !matches!(self, Scheme::Bare | Scheme::Dfs)
    }

    pub fn uses_dfs_blocks(&self) -> bool {
        !matches!(self, Scheme::Bare | Scheme::DuanGuo)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme '{s}'")))
    }
}

/// Physical qubit assignment of a scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeLayout {
    pub scheme: Scheme,
    pub n_physical: usize,
    /// Physical qubit indices of each block (a pair, or one qubit for BARE).
    pub block_map: Vec<Vec<usize>>,
}

impl CodeLayout {
    pub fn new(scheme: Scheme) -> Self {
        let n_physical = scheme.n_physical();
        let block_map = if scheme == Scheme::Bare {
            vec![vec![0]]
        } else {
            (0..n_physical / 2).map(|b| vec![2 * b, 2 * b + 1]).collect()
        };
        Self {
            scheme,
            n_physical,
            block_map,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.block_map.len()
    }

    pub fn logical_basis(&self) -> LogicalBasis {
        match self.scheme {
            Scheme::Bare => LogicalBasis::bare(),
            Scheme::Dfs | Scheme::DfsZeno => LogicalBasis::dfs(),
            Scheme::DfsZenoXQecc3 => LogicalBasis::qecc3(),
            Scheme::DfsZenoXDetect2Zeno => LogicalBasis::detect2(),
            Scheme::DuanGuo => LogicalBasis::duan_guo(),
        }
    }

    /// Projector onto the per-block code space (4x4), if blocks are measured.
    pub fn block_code_projector(&self) -> Option<Matrix> {
        match self.scheme {
            Scheme::Bare => None,
            Scheme::DuanGuo => Some(duan_guo_block_projector()),
            _ => Some(dfs_block_projector()),
        }
    }
}

/// Code-space basis `|0_L>, |1_L>` of an encoding over `n` physical qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalBasis {
    dims: Vec<usize>,
    zero: Vector,
    one: Vector,
}

/// Logical content of a decoded state.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicalDecode {
    /// Renormalized logical density matrix; `None` when nothing remains in
    /// the code space.
    pub logical: Option<DensityMatrix>,
    /// Weight inside the code space, `<0_L|rho|0_L> + <1_L|rho|1_L>`.
    pub code_weight: f64,
    /// `1 - code_weight`.
    pub leak_weight: f64,
}

fn basis_vec(n: usize, idx: usize) -> Vector {
    let mut v = Vector::zeros(n);
    v[idx] = ONE;
    v
}

impl LogicalBasis {
    pub fn bare() -> Self {
        Self {
            dims: vec![2],
            zero: basis_vec(2, 0),
            one: basis_vec(2, 1),
        }
    }

    /// `|0_L> = |01>`, `|1_L> = |10>`.
    pub fn dfs() -> Self {
        Self {
            dims: vec![2, 2],
            zero: basis_vec(4, 1),
            one: basis_vec(4, 2),
        }
    }

    /// Phase-flip repetition code over three DFS blocks.
    pub fn qecc3() -> Self {
        let (p, m) = (block_plus(), block_minus());
        Self {
            dims: vec![2; 6],
            zero: p.kronecker(&p).kronecker(&p),
            one: m.kronecker(&m).kronecker(&m),
        }
    }

    /// Two-block detection code `|0_L> = |+~+~>`, `|1_L> = |-~-~>`.
    pub fn detect2() -> Self {
        let (p, m) = (block_plus(), block_minus());
        Self {
            dims: vec![2; 4],
            zero: p.kronecker(&p),
            one: m.kronecker(&m),
        }
    }

    /// `|0_L> = |+->`, `|1_L> = |-+>` with `|+-> = (|0> +- |1>)/sqrt(2)`.
    pub fn duan_guo() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = Vector::from_vec(vec![C64::new(s, 0.0), C64::new(s, 0.0)]);
        let minus = Vector::from_vec(vec![C64::new(s, 0.0), C64::new(-s, 0.0)]);
        Self {
            dims: vec![2, 2],
            zero: plus.kronecker(&minus),
            one: minus.kronecker(&plus),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_qubits(&self) -> usize {
        self.dims.len()
    }

    pub fn zero(&self) -> &Vector {
        &self.zero
    }

    pub fn one(&self) -> &Vector {
        &self.one
    }

    pub fn encode(&self, q: &LogicalQubit) -> PureState {
        let v = &self.zero * q.alpha + &self.one * q.beta;
        PureState::from_parts_unchecked(self.dims.clone(), v)
    }

    /// Projector onto the two-dimensional code space.
    pub fn projector(&self) -> Matrix {
        &self.zero * self.zero.adjoint() + &self.one * self.one.adjoint()
    }

    /// Unnormalized logical density matrix `V^H rho V` (2x2), where `V` maps
    /// logical amplitudes into the code space.
    pub fn logical_block(&self, rho: &Matrix) -> Matrix {
        let basis = [&self.zero, &self.one];
        Matrix::from_fn(2, 2, |i, j| basis[i].dotc(&(rho * basis[j])))
    }

    pub fn decode_density(&self, rho: &DensityMatrix) -> Result<LogicalDecode> {
        if rho.dims() != self.dims.as_slice() {
            return Err(Error::DimensionMismatch {
                expected: self.zero.len(),
                found: rho.dim(),
            });
        }
        let block = self.logical_block(rho.matrix());
        let code_weight = block.trace().re.clamp(0.0, 1.0);
        let logical = if code_weight <= f64::EPSILON {
            None
        } else {
            Some(DensityMatrix::from_parts_unchecked(
                vec![2],
                block / C64::new(code_weight, 0.0),
            ))
        };
        Ok(LogicalDecode {
            logical,
            code_weight,
            leak_weight: (1.0 - code_weight).max(0.0),
        })
    }
}

/// `(|01> + |10>)/sqrt(2)` as a 4-vector.
pub fn block_plus() -> Vector {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Vector::from_vec(vec![ZERO, s, s, ZERO])
}

/// `(|01> - |10>)/sqrt(2)` as a 4-vector.
pub fn block_minus() -> Vector {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Vector::from_vec(vec![ZERO, s, -s, ZERO])
}

/// `|01><01| + |10><10|`.
pub fn dfs_block_projector() -> Matrix {
    Matrix::from_diagonal(&Vector::from_vec(vec![ZERO, ONE, ONE, ZERO]))
}

/// `|00><00| + |11><11|`.
pub fn dfs_block_leak_projector() -> Matrix {
    Matrix::from_diagonal(&Vector::from_vec(vec![ONE, ZERO, ZERO, ONE]))
}

pub fn duan_guo_block_projector() -> Matrix {
    LogicalBasis::duan_guo().projector()
}

/// Logical Z~ on a DFS block: `sigma_z` on its first qubit.
pub fn block_logical_z() -> Matrix {
    qubit::sigma_z().kronecker(&qubit::identity())
}

/// Logical X~ on a DFS block, as the full-block observable `sigma_x (x) sigma_x`.
pub fn block_logical_x() -> Matrix {
    qubit::sigma_x().kronecker(&qubit::sigma_x())
}

pub fn dfs_encode(q: &LogicalQubit) -> PureState {
    LogicalBasis::dfs().encode(q)
}

/// Result of projecting a two-qubit state onto the DFS code space.
#[derive(Debug, Clone, PartialEq)]
pub struct DfsDecoded {
    /// Renormalized logical content; `None` if the state is fully leaked.
    pub logical: Option<LogicalQubit>,
    pub leak_weight: f64,
}

pub fn dfs_decode(s: &PureState) -> Result<DfsDecoded> {
    if s.dims() != [2, 2] {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: s.dim(),
        });
    }
    let a = s.amplitudes();
    let code = a[1].norm_sqr() + a[2].norm_sqr();
    let total = a.norm_squared();
    let leak_weight = ((total - code) / total).clamp(0.0, 1.0);
    let logical = if code <= f64::EPSILON * total {
        None
    } else {
        LogicalQubit::normalized(a[1], a[2]).ok()
    };
    Ok(DfsDecoded { logical, leak_weight })
}

pub fn dfs_decode_density(rho: &DensityMatrix) -> Result<LogicalDecode> {
    LogicalBasis::dfs().decode_density(rho)
}

pub fn qecc3_encode(q: &LogicalQubit) -> PureState {
    LogicalBasis::qecc3().encode(q)
}

pub fn detect2_encode(q: &LogicalQubit) -> PureState {
    LogicalBasis::detect2().encode(q)
}

pub fn duan_guo_encode(q: &LogicalQubit) -> PureState {
    LogicalBasis::duan_guo().encode(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qecc3Syndrome {
    NoError,
    ZOnBlock1,
    ZOnBlock2,
    ZOnBlock3,
}

impl Qecc3Syndrome {
    pub const ALL: [Qecc3Syndrome; 4] = [
        Qecc3Syndrome::NoError,
        Qecc3Syndrome::ZOnBlock1,
        Qecc3Syndrome::ZOnBlock2,
        Qecc3Syndrome::ZOnBlock3,
    ];

    /// Eigenvalues of (X~X~I, IX~X~) that signal this syndrome.
    fn signs(self) -> (f64, f64) {
        match self {
            Qecc3Syndrome::NoError => (1.0, 1.0),
            Qecc3Syndrome::ZOnBlock1 => (-1.0, 1.0),
            Qecc3Syndrome::ZOnBlock2 => (-1.0, -1.0),
            Qecc3Syndrome::ZOnBlock3 => (1.0, -1.0),
        }
    }

    /// Block that receives the Z~ correction.
    pub fn block(self) -> Option<usize> {
        match self {
            Qecc3Syndrome::NoError => None,
            Qecc3Syndrome::ZOnBlock1 => Some(0),
            Qecc3Syndrome::ZOnBlock2 => Some(1),
            Qecc3Syndrome::ZOnBlock3 => Some(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detect2Outcome {
    Pass,
    ErrorDetected,
}

/// One outcome branch of a projective measurement: the (unnormalized)
/// post-measurement vector and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub outcome: T,
    pub probability: f64,
    pub vector: Vector,
}

fn check_leading_qubits(dims: &[usize], n: usize) -> Result<()> {
    if dims.len() < n || dims[..n].iter().any(|&d| d != 2) {
        return Err(Error::InvalidFactors {
            factors: (0..n).collect(),
            dims: dims.to_vec(),
        });
    }
    Ok(())
}

/// Apply `X~` to blocks `blocks` (block `b` = qubits `2b, 2b+1`).
fn apply_block_x(dims: &[usize], v: &Vector, blocks: &[usize]) -> Result<Vector> {
    let x = block_logical_x();
    blocks
        .iter()
        .try_fold(v.clone(), |acc, &b| apply_local(dims, &acc, &x, &[2 * b, 2 * b + 1]))
}

pub(crate) fn apply_block_z(dims: &[usize], v: &Vector, block: usize) -> Result<Vector> {
    apply_local(dims, v, &qubit::sigma_z(), &[2 * block])
}

/// All four syndrome branches of the phase-flip code, each already corrected.
/// `dims` must start with the six code qubits; further factors (baths) ride along.
pub fn qecc3_branches(dims: &[usize], v: &Vector) -> Result<Vec<Branch<Qecc3Syndrome>>> {
    check_leading_qubits(dims, 6)?;
    let s1 = apply_block_x(dims, v, &[0, 1])?;
    let s2 = apply_block_x(dims, v, &[1, 2])?;
    let s12 = apply_block_x(dims, &s1, &[1, 2])?;
    Qecc3Syndrome::ALL
        .iter()
        .map(|&syn| {
            let (a, b) = syn.signs();
            let projected = (v + &s1 * C64::new(a, 0.0) + &s2 * C64::new(b, 0.0) + &s12 * C64::new(a * b, 0.0))
                * C64::new(0.25, 0.0);
            let probability = projected.norm_squared();
            let vector = match syn.block() {
                Some(block) => apply_block_z(dims, &projected, block)?,
                None => projected,
            };
            Ok(Branch {
                outcome: syn,
                probability,
                vector,
            })
        })
        .collect()
}

pub(crate) fn sample_branch<T: Copy>(branches: Vec<Branch<T>>, rng: &mut impl Rng) -> Result<(Vector, T)> {
    let total: f64 = branches.iter().map(|b| b.probability).sum();
    let mut r = rng.random::<f64>() * total;
    let mut chosen = None;
    for b in branches.iter().filter(|b| b.probability > 0.0) {
        chosen = Some(b);
        if r < b.probability {
            break;
        }
        r -= b.probability;
    }
    let b = chosen.ok_or(Error::NotNormalized(0.0))?;
    Ok((&b.vector / C64::new(b.probability.sqrt(), 0.0), b.outcome))
}

/// Measure both phase-flip stabilizers, sample an outcome and apply the
/// indicated Z~ correction.
pub fn qecc3_syndrome_correct(s: &PureState, rng: &mut impl Rng) -> Result<(PureState, Qecc3Syndrome)> {
    let branches = qecc3_branches(s.dims(), s.amplitudes())?;
    let (v, syn) = sample_branch(branches, rng)?;
    Ok((PureState::from_parts_unchecked(s.dims().to_vec(), v), syn))
}

/// Non-selective syndrome measurement and correction of a density matrix:
/// `sum_s C_s P_s rho P_s C_s^H`.
pub fn qecc3_correct_density(dims: &[usize], rho: &Matrix) -> Result<Matrix> {
    check_leading_qubits(dims, 6)?;
    let n = rho.nrows();
    // Each column of rho picks up the branch map from the left, then the
    // right via adjoint; linearity lets us reuse qecc3_branches per column.
    let mut left = vec![Matrix::zeros(n, n); 4];
    for j in 0..n {
        for (k, b) in qecc3_branches(dims, &rho.column(j).into_owned())?
            .into_iter()
            .enumerate()
        {
            left[k].set_column(j, &b.vector);
        }
    }
    let mut out = Matrix::zeros(n, n);
    for (k, l) in left.into_iter().enumerate() {
        let lh = l.adjoint();
        let mut both = Matrix::zeros(n, n);
        for j in 0..n {
            let b = qecc3_branches(dims, &lh.column(j).into_owned())?.swap_remove(k);
            both.set_column(j, &b.vector);
        }
        out += both.adjoint();
    }
    Ok(out)
}

/// Both outcome branches of the detection code's `X~X~` stabilizer.
/// `dims` must start with the four code qubits.
pub fn detect2_branches(dims: &[usize], v: &Vector) -> Result<Vec<Branch<Detect2Outcome>>> {
    check_leading_qubits(dims, 4)?;
    let sv = apply_block_x(dims, v, &[0, 1])?;
    Ok([(Detect2Outcome::Pass, 1.0), (Detect2Outcome::ErrorDetected, -1.0)]
        .into_iter()
        .map(|(outcome, sign)| {
            let vector = (v + &sv * C64::new(sign, 0.0)) * C64::new(0.5, 0.0);
            Branch {
                outcome,
                probability: vector.norm_squared(),
                vector,
            }
        })
        .collect())
}

/// Measure the detection stabilizer and sample the outcome.
pub fn detect2_check(s: &PureState, rng: &mut impl Rng) -> Result<(PureState, Detect2Outcome)> {
    let (v, outcome) = sample_branch(detect2_branches(s.dims(), s.amplitudes())?, rng)?;
    Ok((PureState::from_parts_unchecked(s.dims().to_vec(), v), outcome))
}

/// Probability that the detection stabilizer reads -1.
pub fn detect2_detection_probability(s: &PureState) -> Result<f64> {
    let b = detect2_branches(s.dims(), s.amplitudes())?;
    Ok(b[1].probability / s.amplitudes().norm_squared())
}

/// Apply logical Z~ to the listed DFS blocks of a state whose leading
/// factors are qubits.
pub fn logical_z_on_blocks(s: &PureState, blocks: &[usize]) -> Result<PureState> {
    let v = blocks
        .iter()
        .try_fold(s.amplitudes().clone(), |acc, &b| apply_block_z(s.dims(), &acc, b))?;
    Ok(PureState::from_parts_unchecked(s.dims().to_vec(), v))
}
