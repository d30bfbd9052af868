//! Built-in property suite behind `dfszeno verify`.

use std::io::Write;
use std::time::Instant;

use dfszeno::code::{
    detect2_detection_probability, dfs_encode, logical_z_on_blocks, qecc3_correct_density, LogicalBasis,
};
use dfszeno::model::ModelBParams;
use dfszeno::tensor::{apply_local, fidelity, max_abs_diff};
use dfszeno::zeno::{ancilla_xor_branches, code_projectors};
use dfszeno::{
    run_scheme, CodeLayout, DensityMatrix, LogicalQubit, Matrix, Model, ModelAParams, PureState, RunMode, Scheme,
    SchemeConfig, Vector, C64,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

/// Deliberate corruptions used to check that the suite can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    pub projector: bool,
}

pub struct Property {
    pub name: &'static str,
    check: fn(&Faults) -> Result<(), String>,
}

pub const PROPERTIES: [Property; 5] = [
    Property {
        name: "dfs_exactness",
        check: dfs_exactness,
    },
    Property {
        name: "projector_completeness",
        check: projector_completeness,
    },
    Property {
        name: "ancilla_xor_equivalence",
        check: ancilla_xor_equivalence,
    },
    Property {
        name: "code_round_trips",
        check: code_round_trips,
    },
    Property {
        name: "model_reduction",
        check: model_reduction,
    },
];

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub failure: Option<String>,
    pub seconds: f64,
}

/// Run every property, printing one line each. Fails with the names of the
/// properties that did not hold.
pub fn run(faults: &Faults, out: &mut dyn Write) -> Result<Vec<Outcome>, CliError> {
    let mut outcomes = Vec::new();
    for p in &PROPERTIES {
        let start = Instant::now();
        let failure = (p.check)(faults).err();
        let seconds = start.elapsed().as_secs_f64();
        match &failure {
            None => writeln!(out, "PASS {} ({seconds:.2}s)", p.name)?,
            Some(why) => writeln!(out, "FAIL {}: {why}", p.name)?,
        }
        outcomes.push(Outcome {
            name: p.name,
            failure,
            seconds,
        });
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| o.failure.is_some())
        .map(|o| o.name.to_string())
        .collect();
    if failed.is_empty() {
        Ok(outcomes)
    } else {
        Err(CliError::VerifyFailed(failed))
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_vector(n: usize, rng: &mut impl Rng) -> Vector {
    let v = Vector::from_fn(n, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let norm = v.norm();
    v / C64::new(norm, 0.0)
}

fn dfs_exactness(_: &Faults) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = Model::A(ModelAParams::default());
    for _ in 0..4 {
        let q = LogicalQubit::random(&mut rng);
        for scheme in [Scheme::Dfs, Scheme::DfsZeno] {
            let r = run_scheme(&q, &model, &SchemeConfig::new(scheme, 10.0, 32)).map_err(|e| e.to_string())?;
            ensure(r.final_fidelity >= 1.0 - 1e-10, || {
                format!("{scheme} fidelity {} under collective dephasing", r.final_fidelity)
            })?;
            ensure(r.final_leak_weight <= 1e-12, || {
                format!("{scheme} leaked {}", r.final_leak_weight)
            })?;
        }
    }
    Ok(())
}

fn projector_completeness(faults: &Faults) -> Result<(), String> {
    let id = Matrix::identity(4, 4);
    for scheme in [
        Scheme::DfsZeno,
        Scheme::DfsZenoXQecc3,
        Scheme::DfsZenoXDetect2Zeno,
        Scheme::DuanGuo,
    ] {
        for bp in code_projectors(&CodeLayout::new(scheme)).map_err(|e| e.to_string())? {
            let mut c = bp.p_code.matrix().clone();
            let l = bp.p_leak.matrix();
            if faults.projector {
                c[(1, 1)] += C64::new(1e-3, 0.0);
            }
            let checks = [
                ("P_code + P_leak = I", max_abs_diff(&(&c + l), &id)),
                ("P_code^2 = P_code", max_abs_diff(&(&c * &c), &c)),
                ("P_leak^2 = P_leak", max_abs_diff(&(l * l), l)),
                ("P_code P_leak = 0", max_abs_diff(&(&c * l), &Matrix::zeros(4, 4))),
                ("P_code Hermitian", max_abs_diff(&c, &c.adjoint())),
            ];
            for (what, dev) in checks {
                ensure(dev <= 1e-12, || {
                    format!("{scheme} block {:?}: {what} violated by {dev:.3e}", bp.qubits)
                })?;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let bp = &code_projectors(&CodeLayout::new(Scheme::DfsZeno)).map_err(|e| e.to_string())?[0];
    for _ in 0..10 {
        let psi = dfs_encode(&LogicalQubit::random(&mut rng)).into_amplitudes();
        let dev = (bp.p_code.matrix() * &psi - &psi).norm();
        ensure(dev <= 1e-12, || {
            format!("code projector moves an encoded state by {dev:.3e}")
        })?;
    }
    Ok(())
}

fn ancilla_xor_equivalence(_: &Faults) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dims = [2, 2, 4, 2];
    let bp = &code_projectors(&CodeLayout::new(Scheme::DfsZeno)).map_err(|e| e.to_string())?[0];
    let zero_anc = Vector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
    for i in 0..100 {
        let psi = random_vector(16, &mut rng);
        let v = psi.kronecker(&zero_anc);
        let branches = ancilla_xor_branches(&dims, &v, [0, 1], 3).map_err(|e| e.to_string())?;
        let mut tv = 0.0;
        for (b, p) in branches.iter().zip([bp.p_code.matrix(), bp.p_leak.matrix()]) {
            let direct = apply_local(&dims[..3], &psi, p, &[0, 1]).map_err(|e| e.to_string())?;
            tv += 0.5 * (b.probability - direct.norm_squared()).abs();
            let dev = (&b.vector - direct.kronecker(&zero_anc)).norm();
            ensure(dev <= 1e-10, || {
                format!("state {i}: post-measurement states differ by {dev:.3e}")
            })?;
        }
        ensure(tv <= 1e-10, || {
            format!("state {i}: outcome distributions differ by {tv:.3e}")
        })?;
    }
    Ok(())
}

fn code_round_trips(_: &Faults) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let bases = [
        ("bare", LogicalBasis::bare()),
        ("dfs", LogicalBasis::dfs()),
        ("qecc3", LogicalBasis::qecc3()),
        ("detect2", LogicalBasis::detect2()),
        ("duan_guo", LogicalBasis::duan_guo()),
    ];
    for _ in 0..5 {
        let q = LogicalQubit::random(&mut rng);
        let target = PureState::new(vec![2], q.to_vector()).map_err(|e| e.to_string())?;
        for (name, basis) in &bases {
            let rho = DensityMatrix::from_pure(&basis.encode(&q));
            let d = basis.decode_density(&rho).map_err(|e| e.to_string())?;
            let logical = d
                .logical
                .ok_or_else(|| format!("{name}: encoded state decoded as fully leaked"))?;
            let f = fidelity(&target, &logical).map_err(|e| e.to_string())?;
            ensure((f - 1.0).abs() <= 1e-12 && d.leak_weight.abs() <= 1e-12, || {
                format!("{name}: round trip fidelity {f}, leak {}", d.leak_weight)
            })?;
        }
        let enc = LogicalBasis::qecc3().encode(&q);
        let clean = DensityMatrix::from_pure(&enc);
        for block in 0..3 {
            let hit = logical_z_on_blocks(&enc, &[block]).map_err(|e| e.to_string())?;
            let rho = DensityMatrix::from_pure(&hit);
            let fixed = qecc3_correct_density(rho.dims(), rho.matrix()).map_err(|e| e.to_string())?;
            let dev = max_abs_diff(&fixed, clean.matrix());
            ensure(dev <= 1e-12, || {
                format!("qecc3: phase error on block {block} left residue {dev:.3e}")
            })?;
        }
        let enc = LogicalBasis::detect2().encode(&q);
        let p0 = detect2_detection_probability(&enc).map_err(|e| e.to_string())?;
        ensure(p0.abs() <= 1e-12, || {
            format!("detect2: clean state flagged with probability {p0}")
        })?;
        for block in 0..2 {
            let hit = logical_z_on_blocks(&enc, &[block]).map_err(|e| e.to_string())?;
            let p = detect2_detection_probability(&hit).map_err(|e| e.to_string())?;
            ensure((p - 1.0).abs() <= 1e-12, || {
                format!("detect2: error on block {block} flagged with probability {p}")
            })?;
        }
    }
    Ok(())
}

fn model_reduction(_: &Faults) -> Result<(), String> {
    let a = ModelAParams::default();
    let b = ModelBParams::from_model_a(&a);
    let q = LogicalQubit::random(&mut ChaCha8Rng::seed_from_u64(15));
    for mode in [RunMode::Nonselective, RunMode::Postselect] {
        let cfg = SchemeConfig::new(Scheme::DfsZeno, 5.0, 16).with_mode(mode);
        let ra = run_scheme(&q, &Model::A(a.clone()), &cfg).map_err(|e| e.to_string())?;
        let rb = run_scheme(&q, &Model::B(b.clone()), &cfg).map_err(|e| e.to_string())?;
        let dev = (ra.final_fidelity - rb.final_fidelity).abs();
        ensure(dev <= 1e-12, || {
            format!("{mode}: symmetric imperfect model differs from collective model by {dev:.3e}")
        })?;
    }
    Ok(())
}
