//! Zeno dynamics: exact evolution over `T0 / N` interleaved with code-space
//! measurements on every block, run end to end for each scheme.
//!
//! The joint Hilbert space of a run is ordered as the scheme's physical
//! qubits followed by one bath factor per block, `[2; n] ++ [M; blocks]`.
//! Baths are never reset or measured; only the qubits are.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{
    detect2_branches, qecc3_branches, qecc3_correct_density, sample_branch, Branch, CodeLayout, Detect2Outcome,
    LogicalBasis, LogicalQubit, Scheme,
};
use crate::error::{Error, Result};
use crate::model::{build_bath, Model};
use crate::tensor::{
    apply_local, apply_local_left, conjugate_local, propagator, qubit, strides, sub_offsets, DensityMatrix, Matrix,
    Operator, PureState, Vector, C64, NORM_TOL, ONE,
};

/// Largest joint dimension simulated as a full density matrix in
/// non-selective mode. Larger runs without joint mid-run operations use the
/// per-block transfer-map route instead.
pub const DIRECT_DENSITY_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Nonselective,
    Trajectory,
    Postselect,
}

impl RunMode {
    pub fn name(&self) -> &'static str {
        match self {
            RunMode::Nonselective => "nonselective",
            RunMode::Trajectory => "trajectory",
            RunMode::Postselect => "postselect",
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [RunMode::Nonselective, RunMode::Trajectory, RunMode::Postselect]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode '{s}'")))
    }
}

/// How the per-block leakage measurement is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementImpl {
    /// Direct projectors onto the block code and leak spaces.
    #[default]
    Projector,
    /// Two CNOTs into a fresh ancilla followed by an ancilla readout.
    AncillaXor,
}

/// Order of the two measurement layers within a step of the detection scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilizerOrder {
    #[default]
    LeakFirst,
    StabilizerFirst,
}

fn default_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Total evolution time `T0`.
    pub total_time: f64,
    /// Number of Zeno intervals `N`.
    pub zeno_count: usize,
    /// Stabilizer measurements of the detection scheme per run, `N2`.
    /// `None` means every step; `Some(0)` disables the second layer.
    #[serde(default)]
    pub inner_zeno_count: Option<usize>,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub measurement_impl: MeasurementImpl,
    #[serde(default)]
    pub stabilizer_order: StabilizerOrder,
    /// Syndrome correction every k steps for the phase-flip scheme
    /// (trajectory mode only). The final correction always happens.
    #[serde(default)]
    pub correction_interval: Option<usize>,
    /// Blocks that receive a logical Z at the final time, before correction.
    #[serde(default)]
    pub inject_logical_z: Vec<usize>,
    #[serde(default)]
    pub record_wall_time: bool,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, total_time: f64, zeno_count: usize) -> Self {
        Self {
            scheme,
            total_time,
            zeno_count,
            inner_zeno_count: None,
            mode: RunMode::Nonselective,
            samples: default_samples(),
            seed: 0,
            measurement_impl: MeasurementImpl::Projector,
            stabilizer_order: StabilizerOrder::LeakFirst,
            correction_interval: None,
            inject_logical_z: Vec::new(),
            record_wall_time: false,
        }
    }

    pub fn with_mode(mut self, mode: RunMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn layout(&self) -> CodeLayout {
        CodeLayout::new(self.scheme)
    }

    pub fn step_time(&self) -> f64 {
        self.total_time / self.zeno_count as f64
    }

    /// Effective `N2`: zero for every scheme but the detection scheme.
    pub fn inner_count(&self) -> usize {
        match self.scheme {
            Scheme::DfsZenoXDetect2Zeno => self.inner_zeno_count.unwrap_or(self.zeno_count),
            _ => 0,
        }
    }

    /// Whether the stabilizer layer fires at step `n` (1-based): `N2`
    /// measurements spread evenly over the `N` steps.
    pub fn stabilizer_due(&self, n: usize) -> bool {
        let (inner, outer) = (self.inner_count(), self.zeno_count);
        inner > 0 && n * inner / outer > (n - 1) * inner / outer
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.zeno_count < 1 {
            return fail(format!(
                "zeno_count: constraint N ≥ 1 violated (got {})",
                self.zeno_count
            ));
        }
        if !(self.total_time.is_finite() && self.total_time > 0.0) {
            return fail(format!("total_time: must be finite and > 0 (got {})", self.total_time));
        }
        if self.mode == RunMode::Trajectory && self.samples < 1 {
            return fail("samples: constraint samples ≥ 1 violated in trajectory mode".into());
        }
        if let Some(n2) = self.inner_zeno_count {
            if n2 > 0 && self.scheme != Scheme::DfsZenoXDetect2Zeno {
                return fail(format!(
                    "inner_zeno_count: only valid for {}",
                    Scheme::DfsZenoXDetect2Zeno
                ));
            }
            if n2 > self.zeno_count {
                return fail(format!(
                    "inner_zeno_count: constraint N2 ≤ N violated ({n2} > {})",
                    self.zeno_count
                ));
            }
        }
        if self.scheme == Scheme::DuanGuo && self.measurement_impl == MeasurementImpl::AncillaXor {
            return fail("measurement_impl: ancilla parity readout does not measure the Duan-Guo code space".into());
        }
        if let Some(k) = self.correction_interval {
            if self.scheme != Scheme::DfsZenoXQecc3 {
                return fail(format!("correction_interval: only valid for {}", Scheme::DfsZenoXQecc3));
            }
            if self.mode != RunMode::Trajectory {
                return fail("correction_interval: periodic correction requires trajectory mode".into());
            }
            if k < 1 {
                return fail("correction_interval: must be ≥ 1".into());
            }
        }
        let blocks = self.layout().n_blocks();
        if let Some(&b) = self.inject_logical_z.iter().find(|&&b| b >= blocks) {
            return fail(format!(
                "inject_logical_z: block {b} out of range for {} blocks",
                blocks
            ));
        }
        Ok(())
    }
}

/// Outcome of one block's leakage measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakOutcome {
    Code,
    Leak,
}

/// Code and leak projectors of one block on its qubit pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockProjectors {
    pub qubits: Vec<usize>,
    pub p_code: Operator,
    pub p_leak: Operator,
}

impl BlockProjectors {
    /// Both projectors with the identity on every other factor of `dims`.
    pub fn embedded(&self, dims: &[usize]) -> Result<(Operator, Operator)> {
        Ok((
            self.p_code.embed(dims, &self.qubits)?,
            self.p_leak.embed(dims, &self.qubits)?,
        ))
    }
}

/// Per-block code/leak projectors of a layout with measured blocks.
pub fn code_projectors(layout: &CodeLayout) -> Result<Vec<BlockProjectors>> {
    let p = layout
        .block_code_projector()
        .ok_or_else(|| Error::InvalidConfig(format!("scheme {} has no code blocks", layout.scheme)))?;
    let leak = Matrix::identity(4, 4) - &p;
    layout
        .block_map
        .iter()
        .map(|qubits| {
            Ok(BlockProjectors {
                qubits: qubits.clone(),
                p_code: Operator::new(vec![2, 2], p.clone())?,
                p_leak: Operator::new(vec![2, 2], leak.clone())?,
            })
        })
        .collect()
}

fn cnot() -> Matrix {
    let mut m = Matrix::zeros(4, 4);
    for (i, j) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
        m[(i, j)] = ONE;
    }
    m
}

fn ket_projector(k: usize) -> Matrix {
    let mut m = Matrix::zeros(2, 2);
    m[(k, k)] = ONE;
    m
}

/// Branches of the ancilla parity readout of `qubits` (a pair): CNOT from
/// each qubit into `ancilla`, read the ancilla, reset it to `|0>`. Odd parity
/// (ancilla 1) is the code outcome.
pub fn ancilla_xor_branches(
    dims: &[usize],
    v: &Vector,
    qubits: [usize; 2],
    ancilla: usize,
) -> Result<Vec<Branch<LeakOutcome>>> {
    let involved = [qubits[0], qubits[1], ancilla];
    if involved.iter().any(|&f| f >= dims.len() || dims[f] != 2) {
        return Err(Error::InvalidFactors {
            factors: involved.to_vec(),
            dims: dims.to_vec(),
        });
    }
    let excited = apply_local(dims, v, &ket_projector(1), &[ancilla])?.norm_squared();
    if excited > 1e-12 * v.norm_squared().max(f64::MIN_POSITIVE) {
        return Err(Error::AncillaNotReset);
    }
    let w = apply_local(dims, v, &cnot(), &[qubits[0], ancilla])?;
    let w = apply_local(dims, &w, &cnot(), &[qubits[1], ancilla])?;
    let odd = apply_local(dims, &w, &ket_projector(1), &[ancilla])?;
    let odd = apply_local(dims, &odd, &qubit::sigma_x(), &[ancilla])?;
    let even = apply_local(dims, &w, &ket_projector(0), &[ancilla])?;
    Ok(vec![
        Branch {
            outcome: LeakOutcome::Code,
            probability: odd.norm_squared(),
            vector: odd,
        },
        Branch {
            outcome: LeakOutcome::Leak,
            probability: even.norm_squared(),
            vector: even,
        },
    ])
}

/// Sample the ancilla parity readout; the returned state is normalized and
/// has its ancilla back in `|0>`.
pub fn ancilla_xor_measure(
    s: &PureState,
    qubits: [usize; 2],
    ancilla: usize,
    rng: &mut impl Rng,
) -> Result<(LeakOutcome, PureState)> {
    let branches = ancilla_xor_branches(s.dims(), s.amplitudes(), qubits, ancilla)?;
    let (v, outcome) = sample_branch(branches, rng)?;
    Ok((outcome, PureState::normalized(s.dims().to_vec(), v)?))
}

/// Block Kraus operators `[K_code, K_leak]` obtained by running the ancilla
/// circuit on each basis state of a pair.
fn ancilla_kraus() -> Result<[Matrix; 2]> {
    let dims = [2, 2, 2];
    let mut k = [Matrix::zeros(4, 4), Matrix::zeros(4, 4)];
    for j in 0..4 {
        let mut e = Vector::zeros(8);
        e[2 * j] = ONE;
        for (slot, b) in ancilla_xor_branches(&dims, &e, [0, 1], 2)?.into_iter().enumerate() {
            for i in 0..4 {
                k[slot][(i, j)] = b.vector[2 * i];
            }
        }
    }
    Ok(k)
}

/// Weight of the logical state orthogonal to `q` in a system density matrix
/// (baths already traced out).
pub fn residual_phase_error(rho_sys: &DensityMatrix, layout: &CodeLayout, q: &LogicalQubit) -> Result<f64> {
    let target = layout.logical_basis().encode(&q.orthogonal());
    crate::tensor::fidelity(&target, rho_sys)
}

/// Everything a run needs that does not change between steps.
#[derive(Debug, Clone)]
pub struct Setup {
    layout: CodeLayout,
    basis: LogicalBasis,
    dims: Vec<usize>,
    n_qubits: usize,
    /// Factors touched by each block's step unitary: its qubits then its bath.
    block_factors: Vec<Vec<usize>>,
    step: Matrix,
    /// Per-block code projector used to report leak weight.
    code_projector: Option<Matrix>,
    /// Measurement Kraus operators `[K_code, K_leak]`, if blocks are measured.
    kraus: Option<[Matrix; 2]>,
    bath_psi0: Vector,
    bath_levels: usize,
    /// Entrywise factor implementing the non-selective leak measurement on a
    /// density matrix, when every Kraus operator is diagonal.
    dephasing_mask: Option<Matrix>,
    /// Index permutation of `X~X~` (all four qubits flipped), present when
    /// the detection stabilizer is measured.
    stabilizer_flip: Option<Vec<usize>>,
}

impl Setup {
    pub fn new(model: &Model, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        let layout = cfg.layout();
        let bath = build_bath(model.bath_spec())?;
        let m = model.bath_spec().levels;
        let n_qubits = layout.n_physical;
        let n_blocks = layout.n_blocks();
        let mut dims = vec![2; n_qubits];
        dims.extend(std::iter::repeat_n(m, n_blocks));
        let h = match cfg.scheme {
            Scheme::Bare => model.single_qubit_hamiltonian()?,
            _ => model.pair_hamiltonian()?,
        };
        let step = propagator(&h, cfg.step_time())?.into_matrix();
        let block_factors = layout
            .block_map
            .iter()
            .enumerate()
            .map(|(b, qs)| qs.iter().copied().chain([n_qubits + b]).collect())
            .collect();
        let kraus = if cfg.scheme.zeno_measured() {
            Some(match cfg.measurement_impl {
                MeasurementImpl::Projector => {
                    let bp = &code_projectors(&layout)?[0];
                    [bp.p_code.matrix().clone(), bp.p_leak.matrix().clone()]
                }
                MeasurementImpl::AncillaXor => ancilla_kraus()?,
            })
        } else {
            None
        };
        let st = strides(&dims);
        let n: usize = dims.iter().product();
        let digit = |i: usize, f: usize| (i / st[f]) % dims[f];
        let stabilizer_flip = (cfg.inner_count() > 0).then(|| {
            (0..n)
                .map(|i| (0..4).fold(i, |j, f| if digit(i, f) == 0 { j + st[f] } else { j - st[f] }))
                .collect()
        });
        let diagonal = |k: &Matrix| (0..4).all(|i| (0..4).all(|j| i == j || k[(i, j)] == C64::new(0.0, 0.0)));
        let dephasing_mask = match &kraus {
            Some(ks) if cfg.mode == RunMode::Nonselective && n <= DIRECT_DENSITY_LIMIT && ks.iter().all(diagonal) => {
                let w = Matrix::from_fn(4, 4, |i, j| ks.iter().map(|k| k[(i, i)] * k[(j, j)].conj()).sum());
                let local: Vec<Vec<usize>> = layout
                    .block_map
                    .iter()
                    .map(|qs| {
                        (0..n)
                            .map(|i| qs.iter().fold(0, |acc, &q| 2 * acc + digit(i, q)))
                            .collect()
                    })
                    .collect();
                Some(Matrix::from_fn(n, n, |i, j| {
                    local.iter().map(|l| w[(l[i], l[j])]).product()
                }))
            }
            _ => None,
        };
        Ok(Self {
            basis: layout.logical_basis(),
            code_projector: layout.block_code_projector(),
            layout,
            dims,
            n_qubits,
            block_factors,
            step,
            kraus,
            bath_psi0: bath.psi0.into_amplitudes(),
            bath_levels: m,
            dephasing_mask,
            stabilizer_flip,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layout(&self) -> &CodeLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    fn qubit_factors(&self) -> Vec<usize> {
        (0..self.n_qubits).collect()
    }

    fn n_blocks(&self) -> usize {
        self.block_factors.len()
    }

    /// Encoded `q` with every bath in its initial state.
    pub fn initial_state(&self, q: &LogicalQubit) -> PureState {
        let mut v = self.basis.encode(q).into_amplitudes();
        for _ in 0..self.n_blocks() {
            v = v.kronecker(&self.bath_psi0);
        }
        PureState::from_parts_unchecked(self.dims.clone(), v)
    }

    fn evolve_pure(&self, v: &Vector) -> Result<Vector> {
        self.block_factors
            .iter()
            .try_fold(v.clone(), |acc, f| apply_local(&self.dims, &acc, &self.step, f))
    }

    fn evolve_density(&self, rho: &Matrix) -> Result<Matrix> {
        self.block_factors
            .iter()
            .try_fold(rho.clone(), |acc, f| conjugate_local(&self.dims, &acc, &self.step, f))
    }

    fn block_qubits(&self, b: usize) -> &[usize] {
        let f = &self.block_factors[b];
        &f[..f.len() - 1]
    }

    /// Weight inside every block's code space.
    fn code_weight_pure(&self, v: &Vector) -> Result<f64> {
        let Some(p) = &self.code_projector else {
            return Ok(v.norm_squared());
        };
        let projected = (0..self.n_blocks()).try_fold(v.clone(), |acc, b| {
            apply_local(&self.dims, &acc, p, self.block_qubits(b))
        })?;
        Ok(projected.norm_squared())
    }

    fn code_weight_density(&self, rho: &Matrix) -> Result<f64> {
        let Some(p) = &self.code_projector else {
            return Ok(rho.trace().re);
        };
        let projected = (0..self.n_blocks()).try_fold(rho.clone(), |acc, b| {
            apply_local_left(&self.dims, &acc, p, self.block_qubits(b))
        })?;
        Ok(projected.trace().re)
    }

    /// Logical Z on block `b` as (operator, qubit it acts on).
    fn logical_z(&self, b: usize) -> (Matrix, usize) {
        let q = self.layout.block_map[b][0];
        match self.layout.scheme {
            // |0_L> = |+->, |1_L> = |-+>: sigma_x on the first qubit.
            Scheme::DuanGuo => (qubit::sigma_x(), q),
            _ => (qubit::sigma_z(), q),
        }
    }
}

/// Evolving state of a single run.
#[derive(Debug, Clone, PartialEq)]
pub enum ZenoState {
    /// State vector with the probability that every post-selection so far
    /// succeeded.
    Pure {
        v: Vector,
        survival: f64,
    },
    Density(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Weight outside the code space after the step's measurements.
    pub leak_weight: f64,
    /// Probability that every block read "code" (post-selection factor).
    pub code_probability: f64,
    pub outcomes: Vec<LeakOutcome>,
    pub detection: Option<Detect2Outcome>,
    pub detection_probability: Option<f64>,
}

fn check_drift(step: usize, norm: f64) -> Result<()> {
    let drift = (norm - 1.0).abs();
    if drift > NORM_TOL {
        return Err(Error::NormDrift { step, drift });
    }
    Ok(())
}

fn leak_layer(
    setup: &Setup,
    state: &mut ZenoState,
    mode: RunMode,
    step: usize,
    rng: &mut impl Rng,
    rec: &mut StepRecord,
) -> Result<()> {
    let Some([kc, kl]) = &setup.kraus else { return Ok(()) };
    if let (ZenoState::Density(rho), Some(mask)) = (&mut *state, &setup.dephasing_mask) {
        rho.component_mul_assign(mask);
        return Ok(());
    }
    for b in 0..setup.n_blocks() {
        let qs = setup.block_qubits(b);
        match state {
            ZenoState::Density(rho) => {
                let c = conjugate_local(&setup.dims, rho, kc, qs)?;
                let l = conjugate_local(&setup.dims, rho, kl, qs)?;
                *rho = c + l;
            }
            ZenoState::Pure { v, survival } => {
                let code = apply_local(&setup.dims, v, kc, qs)?;
                let p = code.norm_squared();
                if mode == RunMode::Postselect {
                    if p <= 0.0 {
                        return Err(Error::ZeroSurvival { step });
                    }
                    *v = code / C64::new(p.sqrt(), 0.0);
                    *survival *= p;
                    rec.code_probability *= p;
                    rec.outcomes.push(LeakOutcome::Code);
                } else {
                    let leak = apply_local(&setup.dims, v, kl, qs)?;
                    let branches = vec![
                        Branch {
                            outcome: LeakOutcome::Code,
                            probability: p,
                            vector: code,
                        },
                        Branch {
                            outcome: LeakOutcome::Leak,
                            probability: leak.norm_squared(),
                            vector: leak,
                        },
                    ];
                    let (nv, outcome) = sample_branch(branches, rng)?;
                    *v = nv;
                    rec.code_probability *= p;
                    rec.outcomes.push(outcome);
                }
            }
        }
    }
    Ok(())
}

fn stabilizer_layer(
    setup: &Setup,
    state: &mut ZenoState,
    mode: RunMode,
    step: usize,
    rng: &mut impl Rng,
    rec: &mut StepRecord,
) -> Result<()> {
    let Some(flip) = &setup.stabilizer_flip else {
        return Ok(());
    };
    match state {
        ZenoState::Density(rho) => {
            // P+ rho P+ + P- rho P- = (rho + X rho X) / 2 with X = X~X~;
            // tr(P- rho) = (1 - tr(X rho)) / 2.
            let x_trace: f64 = (0..rho.nrows()).map(|i| rho[(flip[i], i)].re).sum();
            rec.detection_probability = Some(((1.0 - x_trace) / 2.0).clamp(0.0, 1.0));
            let flipped = Matrix::from_fn(rho.nrows(), rho.ncols(), |i, j| rho[(flip[i], flip[j])]);
            *rho = (&*rho + flipped) * C64::new(0.5, 0.0);
        }
        ZenoState::Pure { v, survival } => {
            let branches = detect2_branches(&setup.dims, v)?;
            rec.detection_probability = Some(branches[1].probability.clamp(0.0, 1.0));
            if mode == RunMode::Postselect {
                let p = branches[0].probability;
                if p <= 0.0 {
                    return Err(Error::ZeroSurvival { step });
                }
                *v = &branches[0].vector / C64::new(p.sqrt(), 0.0);
                *survival *= p;
                rec.code_probability *= p;
                rec.detection = Some(Detect2Outcome::Pass);
            } else {
                let (nv, outcome) = sample_branch(branches, rng)?;
                *v = nv;
                rec.detection = Some(outcome);
            }
        }
    }
    Ok(())
}

/// One Zeno interval: evolve for `T0 / N`, then measure every block (and the
/// detection stabilizer when it is due). `step` is 1-based.
pub fn zeno_step(
    setup: &Setup,
    cfg: &SchemeConfig,
    state: &mut ZenoState,
    step: usize,
    rng: &mut impl Rng,
) -> Result<StepRecord> {
    let mode = cfg.mode;
    match (&*state, mode) {
        (ZenoState::Density(_), RunMode::Nonselective)
        | (ZenoState::Pure { .. }, RunMode::Trajectory | RunMode::Postselect) => {}
        _ => {
            return Err(Error::InvalidConfig(format!(
                "state representation does not match mode {mode}"
            )))
        }
    }
    match state {
        ZenoState::Density(rho) => {
            *rho = setup.evolve_density(rho)?;
            check_drift(step, rho.trace().re)?;
        }
        ZenoState::Pure { v, .. } => {
            *v = setup.evolve_pure(v)?;
            check_drift(step, v.norm_squared())?;
        }
    }
    let mut rec = StepRecord {
        step,
        leak_weight: 0.0,
        code_probability: 1.0,
        outcomes: Vec::new(),
        detection: None,
        detection_probability: None,
    };
    let stabilize = cfg.stabilizer_due(step);
    if stabilize && cfg.stabilizer_order == StabilizerOrder::StabilizerFirst {
        stabilizer_layer(setup, state, mode, step, rng, &mut rec)?;
    }
    leak_layer(setup, state, mode, step, rng, &mut rec)?;
    if stabilize && cfg.stabilizer_order == StabilizerOrder::LeakFirst {
        stabilizer_layer(setup, state, mode, step, rng, &mut rec)?;
    }
    let code = match state {
        ZenoState::Density(rho) => setup.code_weight_density(rho)?,
        ZenoState::Pure { v, .. } => setup.code_weight_pure(v)?,
    };
    rec.leak_weight = (1.0 - code).clamp(0.0, 1.0);
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizerRecord {
    pub step: usize,
    /// Probability (or observed frequency) of the error-detected outcome.
    pub detection_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scheme: Scheme,
    pub mode: RunMode,
    pub zeno_count: usize,
    /// Trajectories averaged (1 for deterministic modes).
    pub samples: usize,
    /// `<enc(q)| rho_sys |enc(q)>` after decoding; leaked weight counts as loss.
    pub final_fidelity: f64,
    pub fidelity_stderr: Option<f64>,
    pub final_leak_weight: f64,
    pub leak_stderr: Option<f64>,
    /// Leak weight after each step. In post-selected mode, the cumulative
    /// weight discarded so far, `1 - survival`.
    pub leak_weight_series: Vec<f64>,
    pub survival_probability: f64,
    /// Weight on the orthogonal logical state `enc(q_perp)`.
    pub logical_phase_error: f64,
    /// Error-detected stabilizer outcomes summed over all trajectories.
    pub detect_flags: u64,
    /// Expected number of error-detected outcomes per run.
    pub expected_detections: f64,
    pub stabilizer_series: Vec<StabilizerRecord>,
    /// Seconds since the start of the run at the end of each step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_record: Option<Vec<f64>>,
}

/// End-of-run system state and the bookkeeping needed to fill a result.
struct Finished {
    rho_sys: Matrix,
    leak_series: Vec<f64>,
    survival: f64,
    detections: u64,
    detection_series: Vec<StabilizerRecord>,
    wall: Option<Vec<f64>>,
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn inject_density(setup: &Setup, cfg: &SchemeConfig, rho_sys: Matrix) -> Result<Matrix> {
    let dims = vec![2; setup.n_qubits];
    cfg.inject_logical_z.iter().try_fold(rho_sys, |acc, &b| {
        let (op, q) = setup.logical_z(b);
        conjugate_local(&dims, &acc, &op, &[q])
    })
}

fn correct_density(setup: &Setup, rho_sys: Matrix) -> Result<Matrix> {
    match setup.layout.scheme {
        Scheme::DfsZenoXQecc3 => qecc3_correct_density(&[2; 6], &rho_sys),
        _ => Ok(rho_sys),
    }
}

/// Fidelity and phase error of a decoded system state.
fn score(setup: &Setup, q: &LogicalQubit, rho_sys: &Matrix) -> Result<(f64, f64)> {
    let rho = DensityMatrix::from_parts_unchecked(vec![2; setup.n_qubits], rho_sys.clone());
    let f = crate::tensor::fidelity(&setup.basis.encode(q), &rho)?;
    let e = residual_phase_error(&rho, &setup.layout, q)?;
    Ok((f, e))
}

fn trace_baths(setup: &Setup, rho: Matrix) -> Result<Matrix> {
    let full = DensityMatrix::from_parts_unchecked(setup.dims.clone(), rho);
    Ok(full.partial_trace(&setup.qubit_factors())?.matrix().clone())
}

fn run_direct_density(setup: &Setup, cfg: &SchemeConfig, q: &LogicalQubit) -> Result<Finished> {
    let psi = setup.initial_state(q);
    let a = psi.amplitudes();
    let mut state = ZenoState::Density(a * a.adjoint());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut fin = Finished {
        rho_sys: Matrix::zeros(0, 0),
        leak_series: Vec::with_capacity(cfg.zeno_count),
        survival: 1.0,
        detections: 0,
        detection_series: Vec::new(),
        wall: cfg.record_wall_time.then(Vec::new),
    };
    for n in 1..=cfg.zeno_count {
        let rec = zeno_step(setup, cfg, &mut state, n, &mut rng)?;
        fin.leak_series.push(rec.leak_weight);
        if let Some(p) = rec.detection_probability {
            fin.detection_series.push(StabilizerRecord {
                step: n,
                detection_probability: p,
            });
        }
        if let Some(w) = &mut fin.wall {
            w.push(start.elapsed().as_secs_f64());
        }
    }
    let ZenoState::Density(rho) = state else {
        unreachable!("density run keeps a density state")
    };
    fin.rho_sys = trace_baths(setup, rho)?;
    Ok(fin)
}

/// `vec(X) -> vec(T(X))` applied to the pair `factors` of a system density
/// matrix, with `vec` row-major over the 4x4 block.
fn apply_block_channel(dims: &[usize], rho: &Matrix, t: &Matrix, factors: &[usize]) -> Matrix {
    let st = strides(dims);
    let offs = sub_offsets(dims, &st, factors);
    let rest: Vec<usize> = (0..dims.len()).filter(|f| !factors.contains(f)).collect();
    let bases = sub_offsets(dims, &st, &rest);
    let k = offs.len();
    let mut out = Matrix::zeros(rho.nrows(), rho.ncols());
    let mut x = Vector::zeros(k * k);
    for &r in &bases {
        for &s in &bases {
            for i in 0..k {
                for j in 0..k {
                    x[i * k + j] = rho[(r + offs[i], s + offs[j])];
                }
            }
            let y = t * &x;
            for i in 0..k {
                for j in 0..k {
                    out[(r + offs[i], s + offs[j])] = y[i * k + j];
                }
            }
        }
    }
    out
}

/// Non-selective run through per-block transfer maps. Blocks evolve under
/// identical, independent channels and no operation couples them before the
/// final time, so the system state after `n` steps is `T_n^{(x) blocks}`
/// applied to the encoded state.
fn run_factorized(setup: &Setup, cfg: &SchemeConfig, q: &LogicalQubit) -> Result<Finished> {
    if setup.layout.scheme == Scheme::Bare || cfg.inner_count() > 0 {
        return Err(Error::InvalidConfig(
            "transfer-map route needs independent pair blocks".into(),
        ));
    }
    let m = setup.bath_levels;
    let local_dims = [2, 2, m];
    let bath_rho = &setup.bath_psi0 * setup.bath_psi0.adjoint();
    let kraus_full = setup.kraus.as_ref().map(|[kc, kl]| {
        let id = Matrix::identity(m, m);
        [kc.kronecker(&id), kl.kronecker(&id)]
    });
    let mut images: Vec<Matrix> = (0..16)
        .map(|k| {
            let mut e = Matrix::zeros(4, 4);
            e[(k / 4, k % 4)] = ONE;
            e.kronecker(&bath_rho)
        })
        .collect();
    let sys_dims = vec![2; setup.n_qubits];
    let enc = setup.basis.encode(q).into_amplitudes();
    let rho0 = &enc * enc.adjoint();
    let u = &setup.step;
    let u_h = u.adjoint();
    let start = Instant::now();
    let mut fin = Finished {
        rho_sys: Matrix::zeros(0, 0),
        leak_series: Vec::with_capacity(cfg.zeno_count),
        survival: 1.0,
        detections: 0,
        detection_series: Vec::new(),
        wall: cfg.record_wall_time.then(Vec::new),
    };
    let mut rho_sys = rho0.clone();
    for n in 1..=cfg.zeno_count {
        for x in images.iter_mut() {
            let evolved = u * &*x * &u_h;
            *x = match &kraus_full {
                Some([kc, kl]) => kc * &evolved * kc.adjoint() + kl * &evolved * kl.adjoint(),
                None => evolved,
            };
        }
        let mut t = Matrix::zeros(16, 16);
        for (k, x) in images.iter().enumerate() {
            let reduced = DensityMatrix::from_parts_unchecked(local_dims.to_vec(), x.clone()).partial_trace(&[0, 1])?;
            for i in 0..4 {
                for j in 0..4 {
                    t[(i * 4 + j, k)] = reduced.matrix()[(i, j)];
                }
            }
        }
        rho_sys = (0..setup.n_blocks()).fold(rho0.clone(), |acc, b| {
            apply_block_channel(&sys_dims, &acc, &t, setup.block_qubits(b))
        });
        check_drift(n, rho_sys.trace().re)?;
        let code = match &setup.code_projector {
            Some(p) => {
                (0..setup.n_blocks())
                    .try_fold(rho_sys.clone(), |acc, b| {
                        apply_local_left(&sys_dims, &acc, p, setup.block_qubits(b))
                    })?
                    .trace()
                    .re
            }
            None => rho_sys.trace().re,
        };
        fin.leak_series.push(clamp01(1.0 - code));
        if let Some(w) = &mut fin.wall {
            w.push(start.elapsed().as_secs_f64());
        }
    }
    fin.rho_sys = rho_sys;
    Ok(fin)
}

fn run_postselect(setup: &Setup, cfg: &SchemeConfig, q: &LogicalQubit) -> Result<Finished> {
    let mut state = ZenoState::Pure {
        v: setup.initial_state(q).into_amplitudes(),
        survival: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut fin = Finished {
        rho_sys: Matrix::zeros(0, 0),
        leak_series: Vec::with_capacity(cfg.zeno_count),
        survival: 1.0,
        detections: 0,
        detection_series: Vec::new(),
        wall: cfg.record_wall_time.then(Vec::new),
    };
    for n in 1..=cfg.zeno_count {
        let rec = zeno_step(setup, cfg, &mut state, n, &mut rng)?;
        let ZenoState::Pure { survival, .. } = &state else {
            unreachable!("post-selected run keeps a pure state")
        };
        fin.leak_series.push(clamp01(1.0 - survival));
        if let Some(p) = rec.detection_probability {
            fin.detection_series.push(StabilizerRecord {
                step: n,
                detection_probability: p,
            });
        }
        if let Some(w) = &mut fin.wall {
            w.push(start.elapsed().as_secs_f64());
        }
    }
    let ZenoState::Pure { v, survival } = state else {
        unreachable!("post-selected run keeps a pure state")
    };
    fin.survival = survival;
    fin.rho_sys = PureState::from_parts_unchecked(setup.dims.clone(), v)
        .reduced(&setup.qubit_factors())?
        .matrix()
        .clone();
    Ok(fin)
}

/// One trajectory, scored immediately.
struct Sample {
    fidelity: f64,
    phase_error: f64,
    leak_series: Vec<f64>,
    detections: Vec<(usize, bool)>,
    wall: Option<Vec<f64>>,
}

fn run_trajectory(setup: &Setup, cfg: &SchemeConfig, q: &LogicalQubit, index: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let mut state = ZenoState::Pure {
        v: setup.initial_state(q).into_amplitudes(),
        survival: 1.0,
    };
    let start = Instant::now();
    let mut wall = (cfg.record_wall_time && index == 0).then(Vec::new);
    let mut leak_series = Vec::with_capacity(cfg.zeno_count);
    let mut detections = Vec::new();
    let qecc3 = setup.layout.scheme == Scheme::DfsZenoXQecc3;
    let correct = |v: &Vector, rng: &mut ChaCha8Rng| -> Result<Vector> {
        Ok(sample_branch(qecc3_branches(&setup.dims, v)?, rng)?.0)
    };
    for n in 1..=cfg.zeno_count {
        let rec = zeno_step(setup, cfg, &mut state, n, &mut rng)?;
        if let Some(d) = rec.detection {
            detections.push((n, d == Detect2Outcome::ErrorDetected));
        }
        if let (true, Some(k), ZenoState::Pure { v, .. }) = (qecc3, cfg.correction_interval, &mut state) {
            if n % k == 0 && n < cfg.zeno_count {
                *v = correct(v, &mut rng)?;
            }
        }
        leak_series.push(rec.leak_weight);
        if let Some(w) = &mut wall {
            w.push(start.elapsed().as_secs_f64());
        }
    }
    let ZenoState::Pure { mut v, .. } = state else {
        unreachable!("trajectory keeps a pure state")
    };
    for &b in &cfg.inject_logical_z {
        let (op, qb) = setup.logical_z(b);
        v = apply_local(&setup.dims, &v, &op, &[qb])?;
    }
    if qecc3 {
        v = correct(&v, &mut rng)?;
    }
    let rho_sys = PureState::from_parts_unchecked(setup.dims.clone(), v).reduced(&setup.qubit_factors())?;
    let (fidelity, phase_error) = score(setup, q, rho_sys.matrix())?;
    Ok(Sample {
        fidelity,
        phase_error,
        leak_series,
        detections,
        wall,
    })
}

fn mean_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn run_trajectories(setup: &Setup, cfg: &SchemeConfig, q: &LogicalQubit) -> Result<RunResult> {
    let stochastic = cfg.scheme.zeno_measured();
    let n_samples = if stochastic { cfg.samples } else { 1 };
    let samples: Vec<Sample> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| run_trajectory(setup, cfg, q, i))
        .collect::<Result<_>>()?;
    let (fidelity, f_err) = mean_stderr(samples.iter().map(|s| s.fidelity));
    let (phase, _) = mean_stderr(samples.iter().map(|s| s.phase_error));
    let (leak, l_err) = mean_stderr(samples.iter().map(|s| *s.leak_series.last().unwrap_or(&0.0)));
    let leak_series = (0..cfg.zeno_count)
        .map(|n| samples.iter().map(|s| s.leak_series[n]).sum::<f64>() / n_samples as f64)
        .collect();
    let detect_flags = samples.iter().flat_map(|s| &s.detections).filter(|(_, d)| *d).count() as u64;
    let stabilizer_series = samples
        .first()
        .map(|s0| {
            (0..s0.detections.len())
                .map(|k| StabilizerRecord {
                    step: s0.detections[k].0,
                    detection_probability: samples.iter().filter(|s| s.detections[k].1).count() as f64
                        / n_samples as f64,
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(RunResult {
        scheme: cfg.scheme,
        mode: cfg.mode,
        zeno_count: cfg.zeno_count,
        samples: cfg.samples,
        final_fidelity: clamp01(fidelity),
        fidelity_stderr: Some(f_err),
        final_leak_weight: clamp01(leak),
        leak_stderr: Some(l_err),
        leak_weight_series: leak_series,
        survival_probability: 1.0,
        logical_phase_error: clamp01(phase),
        detect_flags,
        expected_detections: detect_flags as f64 / n_samples as f64,
        stabilizer_series,
        wall_record: samples.into_iter().next().and_then(|s| s.wall),
    })
}

/// Which non-selective route a configuration takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Route {
    Direct,
    Factorized,
}

pub(crate) fn nonselective_route(setup: &Setup, cfg: &SchemeConfig) -> Route {
    if cfg.inner_count() > 0 || setup.dim() <= DIRECT_DENSITY_LIMIT {
        Route::Direct
    } else {
        Route::Factorized
    }
}

pub(crate) fn run_with_route(
    q: &LogicalQubit,
    model: &Model,
    cfg: &SchemeConfig,
    route: Option<Route>,
) -> Result<RunResult> {
    q.validate()?;
    let setup = Setup::new(model, cfg)?;
    let fin = match cfg.mode {
        RunMode::Trajectory => return run_trajectories(&setup, cfg, q),
        RunMode::Postselect => run_postselect(&setup, cfg, q)?,
        RunMode::Nonselective => match route.unwrap_or_else(|| nonselective_route(&setup, cfg)) {
            Route::Direct => run_direct_density(&setup, cfg, q)?,
            Route::Factorized => run_factorized(&setup, cfg, q)?,
        },
    };
    let rho_sys = correct_density(&setup, inject_density(&setup, cfg, fin.rho_sys)?)?;
    let (fidelity, phase) = score(&setup, q, &rho_sys)?;
    let expected_detections = fin
        .detection_series
        .iter()
        .fold(0.0, |acc, r| acc + r.detection_probability);
    Ok(RunResult {
        scheme: cfg.scheme,
        mode: cfg.mode,
        zeno_count: cfg.zeno_count,
        samples: 1,
        final_fidelity: fidelity,
        fidelity_stderr: None,
        final_leak_weight: *fin.leak_series.last().unwrap_or(&0.0),
        leak_stderr: None,
        leak_weight_series: fin.leak_series,
        survival_probability: clamp01(fin.survival),
        logical_phase_error: phase,
        detect_flags: fin.detections,
        expected_detections,
        stabilizer_series: fin.detection_series,
        wall_record: fin.wall,
    })
}

/// Encode `q`, attach one bath per block, run `N` Zeno intervals in the
/// configured mode, apply any final correction and decode.
pub fn run_scheme(q: &LogicalQubit, model: &Model, cfg: &SchemeConfig) -> Result<RunResult> {
    run_with_route(q, model, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{dfs_encode, logical_z_on_blocks};
    use crate::model::{build_model_b, ModelAParams, ModelBParams};
    use crate::tensor::max_abs_diff;

    fn model_a() -> Model {
        Model::A(ModelAParams::default())
    }

    fn model_b() -> Model {
        Model::B(ModelBParams::default())
    }

    fn random_vector(n: usize, rng: &mut impl Rng) -> Vector {
        let v = Vector::from_fn(n, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let norm = v.norm();
        v / C64::new(norm, 0.0)
    }

    #[test]
    fn projectors_are_complete_idempotent_and_hermitian() {
        for scheme in [Scheme::DfsZeno, Scheme::DfsZenoXQecc3, Scheme::DuanGuo] {
            for bp in code_projectors(&CodeLayout::new(scheme)).unwrap() {
                let (c, l) = (bp.p_code.matrix(), bp.p_leak.matrix());
                assert!(max_abs_diff(&(c + l), &Matrix::identity(4, 4)) < 1e-15);
                assert!(max_abs_diff(&(c * c), c) < 1e-15);
                assert!(max_abs_diff(&(l * l), l) < 1e-15);
                assert!(bp.p_code.is_hermitian() && bp.p_leak.is_hermitian());
            }
        }
        assert!(code_projectors(&CodeLayout::new(Scheme::Bare)).is_err());
    }

    #[test]
    fn code_projector_fixes_encoded_states_with_any_bath() {
        let bp = &code_projectors(&CodeLayout::new(Scheme::DfsZeno)).unwrap()[0];
        let (pc, _) = bp.embedded(&[2, 2, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let q = LogicalQubit::random(&mut rng);
            let psi = dfs_encode(&q).into_amplitudes().kronecker(&random_vector(4, &mut rng));
            assert!((pc.matrix() * &psi - &psi).norm() < 1e-15);
        }
        let ket00 = PureState::basis(vec![2, 2], &[0, 0]).unwrap();
        assert_eq!((bp.p_code.matrix() * ket00.amplitudes()).norm(), 0.0);
    }

    #[test]
    fn ancilla_readout_of_basis_states_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = vec![2, 2, 3, 2];
        let b = random_vector(3, &mut rng);
        for (digits, want) in [
            ([0, 1], LeakOutcome::Code),
            ([1, 0], LeakOutcome::Code),
            ([0, 0], LeakOutcome::Leak),
            ([1, 1], LeakOutcome::Leak),
        ] {
            let block = PureState::basis(vec![2, 2], &digits).unwrap().into_amplitudes();
            let v = block
                .kronecker(&b)
                .kronecker(&Vector::from_vec(vec![ONE, C64::new(0.0, 0.0)]));
            let s = PureState::new(dims.clone(), v.clone()).unwrap();
            let (outcome, post) = ancilla_xor_measure(&s, [0, 1], 3, &mut rng).unwrap();
            assert_eq!(outcome, want);
            assert!((post.amplitudes() - &v).norm() < 1e-15);
        }
    }

    #[test]
    fn ancilla_must_start_in_zero() {
        let s = PureState::basis(vec![2, 2, 2], &[0, 1, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            ancilla_xor_measure(&s, [0, 1], 2, &mut rng).unwrap_err(),
            Error::AncillaNotReset
        );
        assert!(ancilla_xor_branches(&[2, 2, 3], s.amplitudes(), [0, 1], 2).is_err());
    }

    #[test]
    fn ancilla_readout_matches_projectors_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = vec![2, 2, 4, 2];
        let bp = &code_projectors(&CodeLayout::new(Scheme::DfsZeno)).unwrap()[0];
        let zero_anc = Vector::from_vec(vec![ONE, C64::new(0.0, 0.0)]);
        for _ in 0..100 {
            let psi = random_vector(16, &mut rng);
            let v = psi.kronecker(&zero_anc);
            let branches = ancilla_xor_branches(&dims, &v, [0, 1], 3).unwrap();
            for (b, p) in branches.iter().zip([bp.p_code.matrix(), bp.p_leak.matrix()]) {
                let direct = apply_local(&[2, 2, 4], &psi, p, &[0, 1]).unwrap();
                assert!((b.probability - direct.norm_squared()).abs() <= 1e-12);
                assert!((&b.vector - direct.kronecker(&zero_anc)).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn ancilla_circuit_kraus_equals_projectors() {
        let [kc, kl] = ancilla_kraus().unwrap();
        let bp = &code_projectors(&CodeLayout::new(Scheme::DfsZeno)).unwrap()[0];
        assert!(max_abs_diff(&kc, bp.p_code.matrix()) < 1e-15);
        assert!(max_abs_diff(&kl, bp.p_leak.matrix()) < 1e-15);
    }

    #[test]
    fn model_a_never_leaks_in_any_mode() {
        let q = LogicalQubit::random(&mut ChaCha8Rng::seed_from_u64(5));
        for mode in [RunMode::Nonselective, RunMode::Trajectory, RunMode::Postselect] {
            let cfg = SchemeConfig::new(Scheme::DfsZeno, 10.0, 16).with_mode(mode);
            let setup = Setup::new(&model_a(), &cfg).unwrap();
            let psi = setup.initial_state(&q).into_amplitudes();
            let mut state = match mode {
                RunMode::Nonselective => ZenoState::Density(&psi * psi.adjoint()),
                _ => ZenoState::Pure { v: psi, survival: 1.0 },
            };
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            for n in 1..=16 {
                let rec = zeno_step(&setup, &cfg, &mut state, n, &mut rng).unwrap();
                assert!(rec.leak_weight < 1e-13);
                assert!(rec.outcomes.iter().all(|o| *o == LeakOutcome::Code));
                assert!((rec.code_probability - 1.0).abs() < 1e-12 || mode == RunMode::Nonselective);
            }
        }
    }

    #[test]
    fn nonselective_steps_preserve_trace() {
        let cfg = SchemeConfig::new(Scheme::DfsZeno, 5.0, 10);
        let model = Model::B(
            ModelBParams::default()
                .with_lambda_plus(C64::new(0.1, 0.05))
                .with_delta_lambda_z(0.03),
        );
        let setup = Setup::new(&model, &cfg).unwrap();
        let psi = setup.initial_state(&LogicalQubit::plus()).into_amplitudes();
        let mut state = ZenoState::Density(&psi * psi.adjoint());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=10 {
            zeno_step(&setup, &cfg, &mut state, n, &mut rng).unwrap();
            let ZenoState::Density(rho) = &state else {
                unreachable!()
            };
            assert!((rho.trace().re - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_step_leak_follows_second_order_expansion() {
        let p = ModelBParams::default().with_lambda_plus(C64::new(0.03, 0.01));
        let h = build_model_b(&p).unwrap();
        let q = LogicalQubit::normalized(C64::new(0.8, 0.1), C64::new(0.3, -0.5)).unwrap();
        for t in [1e-2, 1e-3] {
            let cfg = SchemeConfig::new(Scheme::DfsZeno, t, 1);
            let setup = Setup::new(&Model::B(p.clone()), &cfg).unwrap();
            let psi0 = setup.initial_state(&q).into_amplitudes();
            let mut state = ZenoState::Density(&psi0 * psi0.adjoint());
            let rec = zeno_step(&setup, &cfg, &mut state, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            // Leading order: t^2 |P_leak H psi0|^2.
            let h_psi = h.matrix() * &psi0;
            let leak_part = apply_local(&[2, 2, 4], &h_psi, &crate::code::dfs_block_leak_projector(), &[0, 1]).unwrap();
            let oracle = t * t * leak_part.norm_squared();
            assert!(
                ((rec.leak_weight - oracle) / oracle).abs() < 5.0 * t,
                "t={t}: {} vs {oracle}",
                rec.leak_weight
            );
        }
    }

    #[test]
    fn state_and_mode_must_agree() {
        let cfg = SchemeConfig::new(Scheme::DfsZeno, 1.0, 2);
        let setup = Setup::new(&model_b(), &cfg).unwrap();
        let mut state = ZenoState::Pure {
            v: setup.initial_state(&LogicalQubit::zero()).into_amplitudes(),
            survival: 1.0,
        };
        assert!(zeno_step(&setup, &cfg, &mut state, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn postselection_on_a_fully_leaked_state_aborts() {
        let cfg = SchemeConfig::new(Scheme::DfsZeno, 1.0, 2).with_mode(RunMode::Postselect);
        let setup = Setup::new(&model_a(), &cfg).unwrap();
        let v = PureState::basis(vec![2, 2, 4], &[0, 0, 0]).unwrap().into_amplitudes();
        let mut state = ZenoState::Pure { v, survival: 1.0 };
        let err = zeno_step(&setup, &cfg, &mut state, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err, Error::ZeroSurvival { step: 1 });
    }

    #[test]
    fn survival_is_product_of_step_code_weights() {
        let model = Model::B(ModelBParams::default().with_lambda_plus(C64::new(0.1, 0.0)));
        let cfg = SchemeConfig::new(Scheme::DfsZeno, 4.0, 20).with_mode(RunMode::Postselect);
        let setup = Setup::new(&model, &cfg).unwrap();
        let mut state = ZenoState::Pure {
            v: setup.initial_state(&LogicalQubit::plus()).into_amplitudes(),
            survival: 1.0,
        };
        let mut product = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..=20 {
            product *= zeno_step(&setup, &cfg, &mut state, n, &mut rng)
                .unwrap()
                .code_probability;
        }
        let ZenoState::Pure { survival, .. } = state else {
            unreachable!()
        };
        assert!((survival - product).abs() <= 1e-12);
        let r = run_scheme(&LogicalQubit::plus(), &model, &cfg).unwrap();
        assert!((r.survival_probability - product).abs() <= 1e-12);
        assert!((r.final_leak_weight - (1.0 - product)).abs() <= 1e-12);
    }

    #[test]
    fn dfs_is_exact_under_model_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1, 7, 32] {
            let q = LogicalQubit::random(&mut rng);
            for scheme in [Scheme::Dfs, Scheme::DfsZeno] {
                let r = run_scheme(&q, &model_a(), &SchemeConfig::new(scheme, 10.0, n)).unwrap();
                assert!(
                    (r.final_fidelity - 1.0).abs() <= 1e-10,
                    "{scheme} N={n}: {}",
                    r.final_fidelity
                );
                assert_eq!(r.leak_weight_series.len(), n);
            }
        }
    }

    #[test]
    fn zeno_leak_scales_inversely_with_n_in_the_zeno_regime() {
        // T0 = 1 keeps T0/N well below the inverse leak-channel detuning.
        let leak = |n| {
            run_scheme(
                &LogicalQubit::plus(),
                &model_b(),
                &SchemeConfig::new(Scheme::DfsZeno, 1.0, n),
            )
            .unwrap()
            .final_leak_weight
        };
        let ratio = leak(64) / leak(8);
        assert!(ratio > 1.0 / 8.0 / 1.3 && ratio < 1.3 / 8.0, "{ratio}");
    }

    #[test]
    fn bare_qubit_does_worse_than_dfs() {
        let q = LogicalQubit::plus();
        let cfg = |s| SchemeConfig::new(s, 10.0, 32);
        let bare = run_scheme(&q, &model_b(), &cfg(Scheme::Bare)).unwrap();
        let dfs = run_scheme(&q, &model_b(), &cfg(Scheme::Dfs)).unwrap();
        assert!(bare.final_fidelity < dfs.final_fidelity);
        assert_eq!(bare.final_leak_weight, 0.0);
    }

    #[test]
    fn residual_phase_error_of_fresh_and_flipped_states() {
        let layout = CodeLayout::new(Scheme::DfsZeno);
        let e = dfs_encode(&LogicalQubit::plus());
        let fresh = DensityMatrix::from_pure(&e);
        assert!(residual_phase_error(&fresh, &layout, &LogicalQubit::plus()).unwrap() < 1e-15);
        let flipped = DensityMatrix::from_pure(&logical_z_on_blocks(&e, &[0]).unwrap());
        assert!((residual_phase_error(&flipped, &layout, &LogicalQubit::plus()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_dephasing_produces_phase_error_without_leakage() {
        let model = Model::B(
            ModelBParams::default()
                .with_lambda_plus(C64::new(0.0, 0.0))
                .with_delta_lambda_z(0.05),
        );
        let r = run_scheme(
            &LogicalQubit::plus(),
            &model,
            &SchemeConfig::new(Scheme::DfsZeno, 20.0, 256),
        )
        .unwrap();
        assert!(r.final_leak_weight < 1e-12);
        assert!(r.logical_phase_error > 1e-4, "{}", r.logical_phase_error);
    }

    #[test]
    fn transfer_map_route_matches_direct_density() {
        let mut p = ModelBParams::default()
            .with_lambda_plus(C64::new(0.05, 0.02))
            .with_delta_lambda_z(0.03);
        p.bath.levels = 2;
        let model = Model::B(p);
        let q = LogicalQubit::random(&mut ChaCha8Rng::seed_from_u64(9));
        for scheme in [Scheme::DfsZenoXQecc3, Scheme::DfsZenoXDetect2Zeno] {
            let mut cfg = SchemeConfig::new(scheme, 3.0, 6);
            cfg.inner_zeno_count = Some(0);
            cfg.inject_logical_z = vec![1];
            let direct = run_with_route(&q, &model, &cfg, Some(Route::Direct)).unwrap();
            let factored = run_with_route(&q, &model, &cfg, Some(Route::Factorized)).unwrap();
            assert!((direct.final_fidelity - factored.final_fidelity).abs() < 1e-12);
            assert!((direct.logical_phase_error - factored.logical_phase_error).abs() < 1e-12);
            for (a, b) in direct.leak_weight_series.iter().zip(&factored.leak_weight_series) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qecc3_uses_transfer_maps_at_default_bath_size() {
        let cfg = SchemeConfig::new(Scheme::DfsZenoXQecc3, 1.0, 4);
        let setup = Setup::new(&model_b(), &cfg).unwrap();
        assert_eq!(setup.dim(), 4096);
        assert_eq!(nonselective_route(&setup, &cfg), Route::Factorized);
        let mut detect = SchemeConfig::new(Scheme::DfsZenoXDetect2Zeno, 1.0, 4);
        assert_eq!(
            nonselective_route(&Setup::new(&model_b(), &detect).unwrap(), &detect),
            Route::Direct
        );
        detect.inner_zeno_count = Some(0);
        assert_eq!(detect.inner_count(), 0);
    }

    #[test]
    fn density_fast_paths_match_explicit_conjugation() {
        let mut cfg = SchemeConfig::new(Scheme::DfsZenoXDetect2Zeno, 1.0, 4);
        cfg.inner_zeno_count = Some(4);
        let mut p = ModelBParams::default();
        p.bath.levels = 2;
        let setup = Setup::new(&Model::B(p), &cfg).unwrap();
        assert!(setup.dephasing_mask.is_some() && setup.stabilizer_flip.is_some());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let psi = random_vector(setup.dim(), &mut rng);
        let rho = &psi * psi.adjoint();

        let mut state = ZenoState::Density(rho.clone());
        let mut rec = StepRecord {
            step: 1,
            leak_weight: 0.0,
            code_probability: 1.0,
            outcomes: vec![],
            detection: None,
            detection_probability: None,
        };
        leak_layer(&setup, &mut state, RunMode::Nonselective, 1, &mut rng, &mut rec).unwrap();
        let [kc, kl] = setup.kraus.clone().unwrap();
        let expected = (0..2).fold(rho.clone(), |acc, b| {
            let qs = setup.block_qubits(b);
            conjugate_local(setup.dims(), &acc, &kc, qs).unwrap()
                + conjugate_local(setup.dims(), &acc, &kl, qs).unwrap()
        });
        let ZenoState::Density(got) = &state else {
            unreachable!()
        };
        assert!(max_abs_diff(got, &expected) < 1e-15);

        let mut state = ZenoState::Density(rho.clone());
        stabilizer_layer(&setup, &mut state, RunMode::Nonselective, 1, &mut rng, &mut rec).unwrap();
        let x4 = crate::code::block_logical_x().kronecker(&crate::code::block_logical_x());
        let half = C64::new(0.5, 0.0);
        let (pp, pm) = (
            (Matrix::identity(16, 16) + &x4) * half,
            (Matrix::identity(16, 16) - &x4) * half,
        );
        let qs = [0, 1, 2, 3];
        let minus = conjugate_local(setup.dims(), &rho, &pm, &qs).unwrap();
        let expected = conjugate_local(setup.dims(), &rho, &pp, &qs).unwrap() + &minus;
        let ZenoState::Density(got) = &state else {
            unreachable!()
        };
        assert!(max_abs_diff(got, &expected) < 1e-15);
        assert!((rec.detection_probability.unwrap() - minus.trace().re).abs() < 1e-14);
    }

    #[test]
    fn stabilizer_schedule_spreads_n2_measurements() {
        let mut cfg = SchemeConfig::new(Scheme::DfsZenoXDetect2Zeno, 1.0, 12);
        for n2 in [0, 1, 3, 5, 12] {
            cfg.inner_zeno_count = Some(n2);
            assert_eq!((1..=12).filter(|&n| cfg.stabilizer_due(n)).count(), n2);
        }
        cfg.inner_zeno_count = None;
        assert!((1..=12).all(|n| cfg.stabilizer_due(n)));
        assert!(!SchemeConfig::new(Scheme::DfsZeno, 1.0, 4).stabilizer_due(1));
    }

    #[test]
    fn detection_scheme_never_flags_under_model_a() {
        let model = model_a();
        let mut cfg = SchemeConfig::new(Scheme::DfsZenoXDetect2Zeno, 1.0, 2)
            .with_mode(RunMode::Trajectory)
            .with_samples(8);
        cfg.inner_zeno_count = Some(2);
        let r = run_scheme(&LogicalQubit::plus(), &model, &cfg).unwrap();
        assert_eq!(r.detect_flags, 0);
        assert_eq!(r.stabilizer_series.len(), 2);
        assert!((r.final_fidelity - 1.0).abs() < 1e-10);
    }

    #[test]
    fn qecc3_recovers_injected_phase_error_dfs_zeno_does_not() {
        let q = LogicalQubit::plus();
        let model = model_b();
        let mut cfg = SchemeConfig::new(Scheme::DfsZenoXQecc3, 2.0, 8);
        cfg.inject_logical_z = vec![1];
        let corrected = run_scheme(&q, &model, &cfg).unwrap();
        cfg.inject_logical_z.clear();
        let clean = run_scheme(&q, &model, &cfg).unwrap();
        assert!((corrected.final_fidelity - clean.final_fidelity).abs() < 1e-12);
        let mut single = SchemeConfig::new(Scheme::DfsZeno, 2.0, 8);
        single.inject_logical_z = vec![0];
        let r = run_scheme(&q, &model, &single).unwrap();
        assert!(r.final_fidelity < 0.01 && r.logical_phase_error > 0.99);
    }

    #[test]
    fn trajectories_are_reproducible_and_seed_dependent() {
        let model = Model::B(ModelBParams::default().with_lambda_plus(C64::new(0.1, 0.0)));
        let cfg = SchemeConfig::new(Scheme::DfsZeno, 10.0, 8)
            .with_mode(RunMode::Trajectory)
            .with_samples(200)
            .with_seed(42);
        let a = run_scheme(&LogicalQubit::plus(), &model, &cfg).unwrap();
        let b = run_scheme(&LogicalQubit::plus(), &model, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_scheme(&LogicalQubit::plus(), &model, &cfg.clone().with_seed(43)).unwrap();
        assert_ne!(a.leak_weight_series, c.leak_weight_series);
    }

    #[test]
    fn ancilla_and_projector_runs_agree() {
        let model = Model::B(ModelBParams::default().with_lambda_plus(C64::new(0.05, 0.0)));
        let mut cfg = SchemeConfig::new(Scheme::DfsZeno, 5.0, 16);
        let a = run_scheme(&LogicalQubit::plus(), &model, &cfg).unwrap();
        cfg.measurement_impl = MeasurementImpl::AncillaXor;
        let b = run_scheme(&LogicalQubit::plus(), &model, &cfg).unwrap();
        assert!((a.final_fidelity - b.final_fidelity).abs() < 1e-14);
    }

    #[test]
    fn degenerate_single_step_is_evolve_then_measure() {
        let model = Model::B(ModelBParams::default().with_lambda_plus(C64::new(0.05, 0.0)));
        let q = LogicalQubit::plus();
        let r = run_scheme(&q, &model, &SchemeConfig::new(Scheme::DfsZeno, 2.0, 1)).unwrap();
        let plain = run_scheme(&q, &model, &SchemeConfig::new(Scheme::Dfs, 2.0, 1)).unwrap();
        // A final measurement does not change populations of the code space.
        assert!((r.final_leak_weight - plain.final_leak_weight).abs() < 1e-13);
        assert!((r.final_fidelity - plain.final_fidelity).abs() < 1e-13);
    }

    #[test]
    fn config_validation() {
        let ok = SchemeConfig::new(Scheme::DfsZeno, 1.0, 4);
        assert!(ok.validate().is_ok());
        let msg = SchemeConfig::new(Scheme::DfsZeno, 1.0, 0)
            .validate()
            .unwrap_err()
            .to_string();
        assert!(msg.contains("zeno_count") && msg.contains("N ≥ 1"), "{msg}");
        assert!(SchemeConfig::new(Scheme::DfsZeno, 0.0, 4).validate().is_err());
        assert!(ok
            .clone()
            .with_mode(RunMode::Trajectory)
            .with_samples(0)
            .validate()
            .is_err());
        let mut c = ok.clone();
        c.inner_zeno_count = Some(2);
        assert!(c.validate().is_err());
        let mut c = SchemeConfig::new(Scheme::DfsZenoXDetect2Zeno, 1.0, 4);
        c.inner_zeno_count = Some(5);
        assert!(c.validate().is_err());
        let mut c = SchemeConfig::new(Scheme::DuanGuo, 1.0, 4);
        c.measurement_impl = MeasurementImpl::AncillaXor;
        assert!(c.validate().is_err());
        let mut c = SchemeConfig::new(Scheme::DfsZenoXQecc3, 1.0, 4);
        c.correction_interval = Some(2);
        assert!(c.validate().is_err());
        c.mode = RunMode::Trajectory;
        assert!(c.validate().is_ok());
        let mut c = ok;
        c.inject_logical_z = vec![1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = SchemeConfig::new(Scheme::DfsZenoXDetect2Zeno, 3.5, 12)
            .with_mode(RunMode::Postselect)
            .with_seed(9);
        cfg.inner_zeno_count = Some(3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SchemeConfig>(&text).unwrap(), cfg);
        assert!(
            serde_json::from_str::<SchemeConfig>(r#"{"scheme":"dfs","total_time":1,"zeno_count":2,"zeno":3}"#).is_err()
        );
    }
}
