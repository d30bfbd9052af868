//! Simulation of a qubit pair in a decoherence-free subspace, protected
//! against leakage by frequent code-space measurements, and of two codes
//! concatenated on top of such pairs.

pub mod code;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod zeno;

pub use code::{CodeLayout, LogicalQubit, Scheme};
pub use error::{Error, Result};
pub use metrics::{
    compare_schemes, fit_power_law, rank_schemes, sweep, FitResult, SchemeRow, SweepSpec, SweepTable, SweepVariable,
};
pub use model::{BathInitial, BathSpec, CouplingForm, Model, ModelAParams, ModelBParams};
pub use tensor::{DensityMatrix, Matrix, Operator, PureState, Vector, C64};
pub use zeno::{run_scheme, MeasurementImpl, RunMode, RunResult, SchemeConfig, StabilizerOrder};
