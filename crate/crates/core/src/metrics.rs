//! Parameter sweeps, power-law fits and side-by-side scheme comparisons.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{LogicalQubit, Scheme};
use crate::error::{Error, Result};
use crate::model::{Model, ModelBParams};
use crate::tensor::C64;
use crate::zeno::{run_scheme, RunResult, SchemeConfig};

/// Leak values below this are treated as numerical zero when fitting.
pub const LEAK_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Zeno count `N`.
    N,
    DeltaEps,
    DeltaLambdaZ,
    /// Common value of both transverse couplings (real).
    LambdaPlus,
    /// Total time `T0`.
    T0,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::N => "n",
            SweepVariable::DeltaEps => "delta_eps",
            SweepVariable::DeltaLambdaZ => "delta_lambda_z",
            SweepVariable::LambdaPlus => "lambda_plus",
            SweepVariable::T0 => "t0",
        }
    }
}

fn default_logical() -> LogicalQubit {
    LogicalQubit::plus()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub base_model: Model,
    pub base_cfg: SchemeConfig,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_logical")]
    pub logical: LogicalQubit,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.values.is_empty() {
            return fail("sweep.values: must be nonempty".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return fail("sweep.values: must be finite".into());
        }
        let increasing = self.values.windows(2).all(|w| w[0] < w[1]);
        let decreasing = self.values.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return fail("sweep.values: must be strictly monotone".into());
        }
        if self.variable == SweepVariable::N && self.values.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
            return fail("sweep.values: N values must be integers ≥ 1".into());
        }
        if self.schemes.is_empty() {
            return fail("sweep.schemes: must be nonempty".into());
        }
        self.logical.validate()?;
        self.base_model.validate()
    }

    /// Model and configuration of one sweep point.
    pub fn point(&self, scheme: Scheme, value: f64) -> (Model, SchemeConfig) {
        let mut cfg = for_scheme(&self.base_cfg, scheme);
        let as_b = |m: &Model| match m {
            Model::A(a) => ModelBParams::from_model_a(a),
            Model::B(b) => b.clone(),
        };
        let model = match self.variable {
            SweepVariable::N => {
                cfg.zeno_count = value as usize;
                self.base_model.clone()
            }
            SweepVariable::T0 => {
                cfg.total_time = value;
                self.base_model.clone()
            }
            SweepVariable::DeltaEps => Model::B(as_b(&self.base_model).with_delta_epsilon(value)),
            SweepVariable::DeltaLambdaZ => Model::B(as_b(&self.base_model).with_delta_lambda_z(value)),
            SweepVariable::LambdaPlus => Model::B(as_b(&self.base_model).with_lambda_plus(C64::new(value, 0.0))),
        };
        (model, cfg)
    }
}

/// `cfg` retargeted at `scheme`, dropping options that only apply to other
/// schemes.
pub fn for_scheme(cfg: &SchemeConfig, scheme: Scheme) -> SchemeConfig {
    let mut c = cfg.clone();
    c.scheme = scheme;
    if scheme != Scheme::DfsZenoXDetect2Zeno {
        c.inner_zeno_count = None;
    }
    if scheme != Scheme::DfsZenoXQecc3 {
        c.correction_interval = None;
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub value: f64,
    /// The run, or the reason it aborted.
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Completed `(value, result)` pairs of one scheme, in sweep order.
    pub fn series(&self, scheme: Scheme) -> Vec<(f64, &RunResult)> {
        self.rows
            .iter()
            .filter(|r| r.scheme == scheme)
            .filter_map(|r| r.result.as_ref().ok().map(|res| (r.value, res)))
            .collect()
    }

    pub fn aborted(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.result.is_err())
    }
}

/// One run per (scheme, value), scheme-major. Points run in parallel;
/// the table order does not depend on completion order.
pub fn sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let keys: Vec<(Scheme, f64)> = spec
        .schemes
        .iter()
        .flat_map(|&s| spec.values.iter().map(move |&v| (s, v)))
        .collect();
    let rows = keys
        .into_par_iter()
        .map(|(scheme, value)| {
            let (model, cfg) = spec.point(scheme, value);
            let result = run_scheme(&spec.logical, &model, &cfg).map_err(|e| e.to_string());
            SweepRow { scheme, value, result }
        })
        .collect();
    Ok(SweepTable {
        variable: spec.variable,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Slope of `ln y` against `ln x`.
    pub exponent: f64,
    /// `ln y` at `x = 1`.
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
    /// Points below [`LEAK_FLOOR`], left out of the fit.
    pub excluded: Vec<(f64, f64)>,
}

/// Least-squares fit of `y = c x^p` in log-log coordinates.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<FitResult> {
    let fail = |msg: String| Err(Error::InvalidFit(msg));
    if let Some(&(x, _)) = points.iter().find(|(x, _)| !(x.is_finite() && *x > 0.0)) {
        return fail(format!("abscissa {x} is not positive"));
    }
    if let Some(&(x, y)) = points.iter().find(|(_, y)| !(y.is_finite() && *y > 0.0)) {
        return fail(format!("value {y} at x = {x} is not positive"));
    }
    let (used, excluded): (Vec<_>, Vec<_>) = points.iter().copied().partition(|&(_, y)| y >= LEAK_FLOOR);
    if used.len() < 4 {
        return fail(format!(
            "need at least 4 points above {LEAK_FLOOR:e}, got {}",
            used.len()
        ));
    }
    let n = used.len() as f64;
    let lx: Vec<f64> = used.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return fail("all abscissae are equal".into());
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - exponent * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        exponent,
        intercept,
        r_squared,
        points: used,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    /// 1-based position by decreasing fidelity; aborted runs come last.
    pub rank: usize,
    pub scheme: Scheme,
    pub qubit_cost: usize,
    pub final_fidelity: Option<f64>,
    pub leak: Option<f64>,
    pub residual_phase_error: Option<f64>,
    pub error: Option<String>,
}

/// Run every scheme on the same model, logical state and seed, ranked by
/// final fidelity.
pub fn compare_schemes(
    q: &LogicalQubit,
    model: &Model,
    cfg: &SchemeConfig,
    schemes: &[Scheme],
) -> Result<Vec<SchemeRow>> {
    model.validate()?;
    q.validate()?;
    let runs: Vec<(Scheme, Result<RunResult>)> = schemes
        .par_iter()
        .map(|&scheme| (scheme, run_scheme(q, model, &for_scheme(cfg, scheme))))
        .collect();
    Ok(rank_schemes(
        runs.iter().map(|(s, r)| (*s, r.as_ref().map_err(|e| e.to_string()))),
    ))
}

/// Rank finished runs by final fidelity, best first. Ties go to the
/// cheaper-listed scheme.
pub fn rank_schemes<'a, E: std::fmt::Display>(
    runs: impl IntoIterator<Item = (Scheme, std::result::Result<&'a RunResult, E>)>,
) -> Vec<SchemeRow> {
    let mut rows: Vec<SchemeRow> = runs
        .into_iter()
        .map(|(scheme, run)| {
            let (f, l, e, err) = match run {
                Ok(r) => (
                    Some(r.final_fidelity),
                    Some(r.final_leak_weight),
                    Some(r.logical_phase_error),
                    None,
                ),
                Err(e) => (None, None, None, Some(e.to_string())),
            };
            SchemeRow {
                rank: 0,
                scheme,
                qubit_cost: scheme.n_physical(),
                final_fidelity: f,
                leak: l,
                residual_phase_error: e,
                error: err,
            }
        })
        .collect();
    let key = |r: &SchemeRow| r.final_fidelity.unwrap_or(f64::NEG_INFINITY);
    rows.sort_by(|a, b| key(b).total_cmp(&key(a)).then(a.scheme.cmp(&b.scheme)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

impl SweepTable {
    /// Per swept value, the schemes ranked as in [`rank_schemes`].
    pub fn rankings(&self) -> Vec<(f64, Vec<SchemeRow>)> {
        let mut values: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !values.contains(&r.value) {
                values.push(r.value);
            }
        }
        values
            .into_iter()
            .map(|v| {
                let runs = self
                    .rows
                    .iter()
                    .filter(|r| r.value == v)
                    .map(|r| (r.scheme, r.result.as_ref()));
                (v, rank_schemes(runs))
            })
            .collect()
    }
}
