//! System-bath Hamiltonians for collective dephasing.
//!
//! Model A is the ideal collective-dephasing Hamiltonian
//! `H = eps (Z1 + Z2) + lambda (Z1 + Z2) (x) Vz + H_B`. Model B lets both qubits
//! carry their own energies and dephasing couplings and adds transverse
//! couplings `lambda_i^+ sigma_i^+ (x) V+` plus their Hermitian conjugates.
//!
//! The bath is a single truncated bosonic mode with `H_B = omega n`.
//! Factor order is always system qubits first, bath last.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kron, kron_all, qubit, Matrix, Operator, PureState, Vector, C64, ONE, ZERO};

/// Which bath operator couples to the collective sigma_z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingForm {
    /// Vz = a + a^dagger
    Position,
    /// Vz = n
    Number,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BathInitial {
    Ground,
    /// Truncated coherent state, renormalized within the kept levels.
    Coherent {
        alpha: C64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathSpec {
    pub levels: usize,
    pub omega: f64,
    pub coupling_form: CouplingForm,
    pub initial_state: BathInitial,
}

impl Default for BathSpec {
    fn default() -> Self {
        Self {
            levels: 4,
            omega: 1.0,
            coupling_form: CouplingForm::Position,
            initial_state: BathInitial::Ground,
        }
    }
}

impl BathSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("bath.levels must be >= 1".into()));
        }
        if !self.omega.is_finite() {
            return Err(Error::InvalidConfig("bath.omega must be finite".into()));
        }
        if let BathInitial::Coherent { alpha } = self.initial_state {
            if !alpha.re.is_finite() || !alpha.im.is_finite() {
                return Err(Error::InvalidConfig("bath coherent amplitude must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Bath Hamiltonian, coupling operators and initial bath state.
#[derive(Debug, Clone)]
pub struct Bath {
    pub hb: Operator,
    pub vz: Operator,
    pub vplus: Operator,
    pub vminus: Operator,
    pub psi0: PureState,
}

/// Truncated annihilation operator: a|k> = sqrt(k)|k-1>.
pub fn annihilation(levels: usize) -> Matrix {
    let mut a = Matrix::zeros(levels, levels);
    for k in 1..levels {
        a[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    a
}

pub fn number(levels: usize) -> Matrix {
    Matrix::from_diagonal(&Vector::from_fn(levels, |k, _| C64::new(k as f64, 0.0)))
}

pub fn build_bath(spec: &BathSpec) -> Result<Bath> {
    spec.validate()?;
    let m = spec.levels;
    let a = annihilation(m);
    let n = number(m);
    let hb = &n * C64::new(spec.omega, 0.0);
    let vz = match spec.coupling_form {
        CouplingForm::Position => &a + a.adjoint(),
        CouplingForm::Number => n,
    };
    let psi0 = match spec.initial_state {
        BathInitial::Ground => PureState::basis(vec![m], &[0])?,
        BathInitial::Coherent { alpha } => {
            let mut amp = ONE;
            let v = Vector::from_fn(m, |k, _| {
                if k > 0 {
                    amp = amp * alpha / (k as f64).sqrt();
                }
                amp
            });
            PureState::normalized(vec![m], v)?
        }
    };
    let single = |mat: Matrix| Operator::new(vec![m], mat);
    Ok(Bath {
        hb: single(hb)?,
        vz: single(vz)?,
        vplus: single(a.clone())?,
        vminus: single(a.adjoint())?,
        psi0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelAParams {
    pub epsilon: f64,
    pub lambda_z: f64,
    pub bath: BathSpec,
}

impl Default for ModelAParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            lambda_z: 0.2,
            bath: BathSpec::default(),
        }
    }
}

/// Imperfect collective dephasing. The lowering couplings are stored
/// implicitly: `lambda_i^- = conj(lambda_i^+)` and `V- = V+^dagger`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBParams {
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub lambda1_z: f64,
    pub lambda2_z: f64,
    pub lambda1_plus: C64,
    pub lambda2_plus: C64,
    pub bath: BathSpec,
}

impl Default for ModelBParams {
    fn default() -> Self {
        Self {
            epsilon1: 1.0,
            epsilon2: 1.0,
            lambda1_z: 0.2,
            lambda2_z: 0.2,
            lambda1_plus: C64::new(0.02, 0.0),
            lambda2_plus: C64::new(0.02, 0.0),
            bath: BathSpec::default(),
        }
    }
}

impl ModelBParams {
    pub fn delta_epsilon(&self) -> f64 {
        self.epsilon2 - self.epsilon1
    }

    pub fn delta_lambda_z(&self) -> f64 {
        self.lambda2_z - self.lambda1_z
    }

    pub fn lambda1_minus(&self) -> C64 {
        self.lambda1_plus.conj()
    }

    pub fn lambda2_minus(&self) -> C64 {
        self.lambda2_plus.conj()
    }

    pub fn with_delta_epsilon(mut self, d: f64) -> Self {
        self.epsilon2 = self.epsilon1 + d;
        self
    }

    pub fn with_delta_lambda_z(mut self, d: f64) -> Self {
        self.lambda2_z = self.lambda1_z + d;
        self
    }

    /// Sets both transverse couplings to the same value.
    pub fn with_lambda_plus(mut self, l: C64) -> Self {
        self.lambda1_plus = l;
        self.lambda2_plus = l;
        self
    }

    /// Model B parameters that reproduce Model A exactly.
    pub fn from_model_a(a: &ModelAParams) -> Self {
        Self {
            epsilon1: a.epsilon,
            epsilon2: a.epsilon,
            lambda1_z: a.lambda_z,
            lambda2_z: a.lambda_z,
            lambda1_plus: ZERO,
            lambda2_plus: ZERO,
            bath: a.bath.clone(),
        }
    }
}

/// Either decoherence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    A(ModelAParams),
    B(ModelBParams),
}

impl Model {
    pub fn bath_spec(&self) -> &BathSpec {
        match self {
            Model::A(p) => &p.bath,
            Model::B(p) => &p.bath,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match self {
            Model::A(p) => p.epsilon.is_finite() && p.lambda_z.is_finite(),
            Model::B(p) => [p.epsilon1, p.epsilon2, p.lambda1_z, p.lambda2_z]
                .iter()
                .chain(
                    [
                        p.lambda1_plus.re,
                        p.lambda1_plus.im,
                        p.lambda2_plus.re,
                        p.lambda2_plus.im,
                    ]
                    .iter(),
                )
                .all(|x| x.is_finite()),
        };
        if !finite {
            return Err(Error::InvalidConfig("model coefficients must be finite".into()));
        }
        self.bath_spec().validate()
    }

    /// Hamiltonian of one qubit pair with its own bath, dims `[2, 2, M]`.
    pub fn pair_hamiltonian(&self) -> Result<Operator> {
        match self {
            Model::A(p) => build_model_a(p, 1),
            Model::B(p) => build_model_b(p),
        }
    }

    /// Hamiltonian of an unencoded qubit exposed to the first qubit's
    /// couplings, dims `[2, M]`.
    pub fn single_qubit_hamiltonian(&self) -> Result<Operator> {
        let b = match self {
            Model::A(p) => ModelBParams::from_model_a(p),
            Model::B(p) => p.clone(),
        };
        let bath = build_bath(&b.bath)?;
        let z = q(qubit::sigma_z());
        let sp = q(qubit::sigma_plus());
        let sm = q(qubit::sigma_minus());
        let id_b = Operator::identity(vec![b.bath.levels]);
        let terms = [
            kron(&z.scale(re(b.epsilon1)), &id_b),
            kron(&z.scale(re(b.lambda1_z)), &bath.vz),
            kron(&sp.scale(b.lambda1_plus), &bath.vplus),
            kron(&sm.scale(b.lambda1_minus()), &bath.vminus),
            kron(&Operator::identity(vec![2]), &bath.hb),
        ];
        sum(&terms)
    }
}

fn q(m: Matrix) -> Operator {
    Operator::new(vec![2], m).expect("2x2 qubit operator")
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn sum(terms: &[Operator]) -> Result<Operator> {
    let (first, rest) = terms.split_first().expect("at least one term");
    rest.iter().try_fold(first.clone(), |acc, t| acc.add(t))
}

/// `op` on qubit `k` of `n` qubits, identity elsewhere (no bath factor).
fn on_qubit(op: &Matrix, k: usize, n: usize) -> Operator {
    let factors: Vec<Operator> = (0..n)
        .map(|i| {
            if i == k {
                q(op.clone())
            } else {
                Operator::identity(vec![2])
            }
        })
        .collect();
    kron_all(&factors)
}

/// Model A over `n_pairs` qubit pairs sharing one bath factor; dims
/// `[2; 2 * n_pairs] ++ [M]`.
pub fn build_model_a(p: &ModelAParams, n_pairs: usize) -> Result<Operator> {
    if n_pairs == 0 {
        return Err(Error::InvalidConfig("n_pairs must be >= 1".into()));
    }
    let bath = build_bath(&p.bath)?;
    let n = 2 * n_pairs;
    let id_b = Operator::identity(vec![p.bath.levels]);
    let id_s = Operator::identity(vec![2; n]);
    let collective_z = sum(&(0..n).map(|k| on_qubit(&qubit::sigma_z(), k, n)).collect::<Vec<_>>())?;
    let terms = [
        kron(&collective_z.scale(re(p.epsilon)), &id_b),
        kron(&collective_z.scale(re(p.lambda_z)), &bath.vz),
        kron(&id_s, &bath.hb),
    ];
    sum(&terms)
}

/// Model B for one qubit pair and its bath; dims `[2, 2, M]`.
pub fn build_model_b(p: &ModelBParams) -> Result<Operator> {
    let bath = build_bath(&p.bath)?;
    let id_b = Operator::identity(vec![p.bath.levels]);
    let z = [on_qubit(&qubit::sigma_z(), 0, 2), on_qubit(&qubit::sigma_z(), 1, 2)];
    let sp = [
        on_qubit(&qubit::sigma_plus(), 0, 2),
        on_qubit(&qubit::sigma_plus(), 1, 2),
    ];
    let sm = [
        on_qubit(&qubit::sigma_minus(), 0, 2),
        on_qubit(&qubit::sigma_minus(), 1, 2),
    ];
    let system = z[0].scale(re(p.epsilon1)).add(&z[1].scale(re(p.epsilon2)))?;
    let dephasing = z[0].scale(re(p.lambda1_z)).add(&z[1].scale(re(p.lambda2_z)))?;
    let raising = sp[0].scale(p.lambda1_plus).add(&sp[1].scale(p.lambda2_plus))?;
    let lowering = sm[0].scale(p.lambda1_minus()).add(&sm[1].scale(p.lambda2_minus()))?;
    let terms = [
        kron(&system, &id_b),
        kron(&dephasing, &bath.vz),
        kron(&raising, &bath.vplus),
        kron(&lowering, &bath.vminus),
        kron(&Operator::identity(vec![2, 2]), &bath.hb),
    ];
    sum(&terms)
}

/// First-order leakage of `alpha|01> + beta|10>` (x) `bath_state` under Model
/// B: the bath vectors multiplying `|00>` and `|11>` in `-i t H |psi>`, with
/// the common factor `-i t` removed.
///
/// `|00>`: `(lambda1^+ beta + lambda2^+ alpha) V+ |b>`,
/// `|11>`: `(lambda1^- alpha + lambda2^- beta) V- |b>`.
pub fn first_order_leakage(
    p: &ModelBParams,
    alpha: C64,
    beta: C64,
    bath_state: &PureState,
) -> Result<(Vector, Vector)> {
    let bath = build_bath(&p.bath)?;
    let b = bath_state.amplitudes();
    let up = bath.vplus.matrix() * b * (p.lambda1_plus * beta + p.lambda2_plus * alpha);
    let down = bath.vminus.matrix() * b * (p.lambda1_minus() * alpha + p.lambda2_minus() * beta);
    Ok((up, down))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{max_abs_diff, HermitianEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair_state(alpha: C64, beta: C64, bath: &Vector) -> Vector {
        let mut sys = Vector::zeros(4);
        sys[1] = alpha;
        sys[2] = beta;
        sys.kronecker(bath)
    }

    fn random_model_b(rng: &mut impl Rng) -> ModelBParams {
        let mut c = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let (l1, l2) = (c(), c());
        ModelBParams {
            epsilon1: l1.re,
            epsilon2: l1.im,
            lambda1_z: l2.re,
            lambda2_z: l2.im,
            lambda1_plus: c(),
            lambda2_plus: c(),
            bath: BathSpec {
                levels: 3,
                ..BathSpec::default()
            },
        }
    }

    #[test]
    fn one_level_bath_is_frozen() {
        let bath = build_bath(&BathSpec {
            levels: 1,
            ..BathSpec::default()
        })
        .unwrap();
        assert_eq!(bath.hb.matrix()[(0, 0)], ZERO);
        assert_eq!(bath.vz.matrix()[(0, 0)], ZERO);
        assert_eq!(bath.vplus.matrix()[(0, 0)], ZERO);
        assert_eq!(bath.vminus.matrix()[(0, 0)], ZERO);
    }

    #[test]
    fn position_coupling_has_sqrt_k_off_diagonals() {
        let bath = build_bath(&BathSpec::default()).unwrap();
        let vz = bath.vz.matrix();
        for k in 1..4 {
            let s = (k as f64).sqrt();
            assert_eq!(vz[(k - 1, k)], C64::new(s, 0.0));
            assert_eq!(vz[(k, k - 1)], C64::new(s, 0.0));
        }
        assert_eq!(vz[(0, 0)], ZERO);
        assert_eq!(vz[(0, 2)], ZERO);
        assert_eq!(bath.vminus, bath.vplus.adjoint());
        assert!(bath.hb.is_hermitian());
    }

    #[test]
    fn ground_initial_state() {
        let bath = build_bath(&BathSpec::default()).unwrap();
        assert_eq!(bath.psi0, PureState::basis(vec![4], &[0]).unwrap());
    }

    #[test]
    fn coherent_initial_state_is_normalized() {
        let spec = BathSpec {
            levels: 6,
            initial_state: BathInitial::Coherent {
                alpha: C64::new(0.5, 0.2),
            },
            ..BathSpec::default()
        };
        let bath = build_bath(&spec).unwrap();
        assert!((bath.psi0.norm() - 1.0).abs() < 1e-14);
        let a = bath.psi0.amplitudes();
        assert!((a[1] / a[0] - C64::new(0.5, 0.2)).norm() < 1e-14);
    }

    #[test]
    fn model_a_annihilates_code_space_up_to_bath_hamiltonian() {
        let p = ModelAParams::default();
        let h = build_model_a(&p, 1).unwrap();
        let bath = build_bath(&p.bath).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let b = Vector::from_fn(4, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let (alpha, beta) = (C64::new(0.6, 0.0), C64::new(0.0, 0.8));
            let psi = pair_state(alpha, beta, &b);
            let expected = pair_state(alpha, beta, &(bath.hb.matrix() * &b));
            assert!((h.matrix() * &psi - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn model_a_with_zero_couplings_is_bath_only() {
        let p = ModelAParams {
            epsilon: 0.0,
            lambda_z: 0.0,
            ..ModelAParams::default()
        };
        let h = build_model_a(&p, 1).unwrap();
        let bath = build_bath(&p.bath).unwrap();
        let expected = kron(&Operator::identity(vec![2, 2]), &bath.hb);
        assert_eq!(h, expected);
    }

    #[test]
    fn model_a_on_00_sees_collective_eigenvalue_two() {
        let p = ModelAParams::default();
        let h = build_model_a(&p, 1).unwrap();
        let bath = build_bath(&p.bath).unwrap();
        let b = Vector::from_vec(vec![C64::new(0.3, 0.0), C64::new(0.1, 0.4), ZERO, C64::new(-0.2, 0.0)]);
        let mut sys = Vector::zeros(4);
        sys[0] = ONE;
        let psi = sys.kronecker(&b);
        let bath_part = &b * C64::new(2.0 * p.epsilon, 0.0)
            + bath.vz.matrix() * &b * C64::new(2.0 * p.lambda_z, 0.0)
            + bath.hb.matrix() * &b;
        assert!(((h.matrix() * psi) - sys.kronecker(&bath_part)).norm() < 1e-15);
    }

    #[test]
    fn model_a_multi_pair_dimensions() {
        let h = build_model_a(&ModelAParams::default(), 2).unwrap();
        assert_eq!(h.dims(), &[2, 2, 2, 2, 4]);
        assert!(h.is_hermitian());
        assert!(build_model_a(&ModelAParams::default(), 0).is_err());
    }

    #[test]
    fn model_b_reduces_to_model_a() {
        let a = ModelAParams::default();
        let b = ModelBParams::from_model_a(&a);
        let ha = build_model_a(&a, 1).unwrap();
        let hb = build_model_b(&b).unwrap();
        assert!(max_abs_diff(ha.matrix(), hb.matrix()) <= 1e-14);
    }

    #[test]
    fn model_b_continuity_in_imperfections() {
        let a = ModelAParams::default();
        let ha = build_model_a(&a, 1).unwrap();
        let mut last = f64::INFINITY;
        for s in [1e-1, 1e-2, 1e-3, 1e-4] {
            let b = ModelBParams::from_model_a(&a)
                .with_delta_epsilon(s)
                .with_delta_lambda_z(s)
                .with_lambda_plus(C64::new(s, s));
            let d = max_abs_diff(ha.matrix(), build_model_b(&b).unwrap().matrix());
            assert!(d < last);
            // Largest entry of a + a^dag on four levels is sqrt(3); |s + is| = sqrt(2) s.
            assert!(d <= (2.0f64 * 3.0).sqrt() * s + 1e-15);
            last = d;
        }
    }

    #[test]
    fn model_b_raising_term_acts_on_qubit_one() {
        let p = ModelBParams {
            epsilon1: 0.0,
            epsilon2: 0.0,
            lambda1_z: 0.0,
            lambda2_z: 0.0,
            lambda1_plus: ONE,
            lambda2_plus: ZERO,
            bath: BathSpec {
                levels: 2,
                omega: 0.0,
                ..BathSpec::default()
            },
        };
        let h = build_model_b(&p).unwrap();
        // |0 q> (x) |1>: sigma_plus annihilates |0>, only sigma_minus acts,
        // taking qubit 1 to |1> while raising the bath.
        let psi = PureState::basis(vec![2, 2, 2], &[0, 1, 0]).unwrap();
        let out = h.matrix() * psi.amplitudes();
        let expected = PureState::basis(vec![2, 2, 2], &[1, 1, 1]).unwrap();
        assert!((out - expected.amplitudes()).norm() < 1e-15);
        // |1 q> (x) |1>: sigma_plus raises qubit 1 to |0> while lowering the bath.
        let psi = PureState::basis(vec![2, 2, 2], &[1, 0, 1]).unwrap();
        let out = h.matrix() * psi.amplitudes();
        let expected = PureState::basis(vec![2, 2, 2], &[0, 0, 0]).unwrap();
        assert!((out - expected.amplitudes()).norm() < 1e-15);
    }

    #[test]
    fn random_model_b_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h = build_model_b(&random_model_b(&mut rng)).unwrap();
            assert!(h.hermitian_deviation() <= 1e-14);
        }
    }

    #[test]
    fn derived_asymmetries() {
        let p = ModelBParams::default()
            .with_delta_epsilon(0.05)
            .with_delta_lambda_z(-0.01);
        assert!((p.delta_epsilon() - 0.05).abs() < 1e-15);
        assert!((p.delta_lambda_z() + 0.01).abs() < 1e-15);
        let p = ModelBParams {
            lambda1_plus: C64::new(0.1, 0.2),
            ..p
        };
        assert_eq!(p.lambda1_minus(), C64::new(0.1, -0.2));
    }

    #[test]
    fn first_order_leak_matches_hamiltonian_matrix_elements() {
        // Matrix elements of H between code and leak sectors are exactly the
        // closed-form first-order amplitudes.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_model_b(&mut rng);
        let h = build_model_b(&p).unwrap();
        let (alpha, beta) = (C64::new(0.6, 0.0), C64::new(0.0, 0.8));
        let b = Vector::from_vec(vec![C64::new(0.5, 0.1), C64::new(0.5, 0.0), C64::new(0.0, -0.7)]);
        let b = &b / C64::new(b.norm(), 0.0);
        let state = PureState::new(vec![3], b.clone()).unwrap();
        let (up, down) = first_order_leakage(&p, alpha, beta, &state).unwrap();
        let out = h.matrix() * pair_state(alpha, beta, &b);
        let m = 3;
        let sector = |s: usize| Vector::from_fn(m, |k, _| out[s * m + k]);
        assert!((sector(0) - up).norm() < 1e-14);
        assert!((sector(3) - down).norm() < 1e-14);
    }

    #[test]
    fn single_qubit_hamiltonian_is_hermitian() {
        let h = Model::B(ModelBParams::default()).single_qubit_hamiltonian().unwrap();
        assert_eq!(h.dims(), &[2, 4]);
        assert!(h.is_hermitian());
        assert!(HermitianEigen::new(&h).is_ok());
    }
}
