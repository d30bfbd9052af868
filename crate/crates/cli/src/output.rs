use std::io::Write;
use std::path::{Path, PathBuf};

use dfszeno::{FitResult, RunResult, Scheme, SchemeRow, SweepTable};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Write `bytes` to `path` through a temporary file in the same directory,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Self-describing output of `run`: feeding `config` back in reproduces
/// `result` bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub version: String,
    pub config: ExperimentConfig,
    pub result: RunResult,
    /// Per-step wall-clock seconds, only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<Vec<f64>>,
}

impl ResultRecord {
    pub fn new(config: ExperimentConfig, mut result: RunResult) -> Self {
        let wall_time = result.wall_record.take();
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            result,
            wall_time,
        }
    }
}

const RESULT_COLUMNS: [&str; 12] = [
    "scheme",
    "mode",
    "zeno_count",
    "samples",
    "final_fidelity",
    "fidelity_stderr",
    "final_leak_weight",
    "leak_stderr",
    "survival_probability",
    "logical_phase_error",
    "detect_flags",
    "expected_detections",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn result_fields(r: &RunResult) -> Vec<String> {
    vec![
        r.scheme.to_string(),
        r.mode.to_string(),
        r.zeno_count.to_string(),
        r.samples.to_string(),
        r.final_fidelity.to_string(),
        opt(r.fidelity_stderr),
        r.final_leak_weight.to_string(),
        opt(r.leak_stderr),
        r.survival_probability.to_string(),
        r.logical_phase_error.to_string(),
        r.detect_flags.to_string(),
        r.expected_detections.to_string(),
    ]
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Write the run record in the configured format; returns the path.
pub fn write_run(record: &ResultRecord) -> Result<PathBuf, CliError> {
    let out = &record.config.output;
    let (name, bytes) = match out.format {
        crate::config::OutputFormat::Json => {
            let mut b = serde_json::to_vec_pretty(record).map_err(|e| CliError::Io(e.to_string()))?;
            b.push(b'\n');
            ("result.json", b)
        }
        crate::config::OutputFormat::Csv => {
            let mut header = RESULT_COLUMNS.to_vec();
            header.push("config_json");
            let mut row = result_fields(&record.result);
            row.push(serde_json::to_string(&record.config).map_err(|e| CliError::Io(e.to_string()))?);
            ("result.csv", csv_bytes(&header, [row])?)
        }
    };
    let path = out.dir.join(name);
    write_atomic(&path, &bytes)?;
    Ok(path)
}

/// The config that reproduces one sweep point as a standalone `run`.
pub fn point_config(base: &ExperimentConfig, scheme: Scheme, value: f64) -> ExperimentConfig {
    let spec = base.sweep_spec().expect("sweep section present");
    let (model, scheme_cfg) = spec.point(scheme, value);
    ExperimentConfig {
        model,
        scheme: scheme_cfg,
        sweep: None,
        ..base.clone()
    }
}

pub fn sweep_csv(base: &ExperimentConfig, table: &SweepTable) -> Result<Vec<u8>, CliError> {
    let mut header = vec!["variable", "value", "status", "error"];
    header.extend(RESULT_COLUMNS);
    header.push("config_json");
    let mut rows = Vec::new();
    for row in &table.rows {
        let mut fields = vec![table.variable.name().to_string(), row.value.to_string()];
        match &row.result {
            Ok(r) => {
                fields.extend(["ok".to_string(), String::new()]);
                fields.extend(result_fields(r));
            }
            Err(e) => {
                fields.extend(["aborted".to_string(), e.clone(), row.scheme.to_string()]);
                fields.extend(std::iter::repeat_n(String::new(), RESULT_COLUMNS.len() - 1));
            }
        }
        let cfg = point_config(base, row.scheme, row.value);
        fields.push(serde_json::to_string(&cfg).map_err(|e| CliError::Io(e.to_string()))?);
        rows.push(fields);
    }
    csv_bytes(&header, rows)
}

/// Long-format leak time series of every completed point.
pub fn series_csv(table: &SweepTable) -> Result<Vec<u8>, CliError> {
    let mut rows = Vec::new();
    for row in &table.rows {
        if let Ok(r) = &row.result {
            let dt = 1.0 / r.zeno_count as f64;
            for (k, w) in r.leak_weight_series.iter().enumerate() {
                rows.push(vec![
                    row.scheme.to_string(),
                    row.value.to_string(),
                    (k + 1).to_string(),
                    ((k + 1) as f64 * dt).to_string(),
                    w.to_string(),
                ]);
            }
        }
    }
    csv_bytes(&["scheme", "value", "step", "time_fraction", "leak_weight"], rows)
}

pub fn ranking_csv(variable: &str, rankings: &[(f64, Vec<SchemeRow>)]) -> Result<Vec<u8>, CliError> {
    let header = [
        variable,
        "rank",
        "scheme",
        "qubit_cost",
        "final_fidelity",
        "leak",
        "residual_phase_error",
        "error",
    ];
    let rows = rankings.iter().flat_map(|(v, rows)| {
        rows.iter().map(move |r| {
            vec![
                v.to_string(),
                r.rank.to_string(),
                r.scheme.to_string(),
                r.qubit_cost.to_string(),
                opt(r.final_fidelity),
                opt(r.leak),
                opt(r.residual_phase_error),
                r.error.clone().unwrap_or_default(),
            ]
        })
    });
    csv_bytes(&header, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub scheme: Scheme,
    pub variable: String,
    pub fit: FitResult,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/a.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        let leftovers: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn csv_quotes_embedded_json() {
        let b = csv_bytes(&["a", "b"], [vec!["1".into(), "{\"x\": 1, \"y\": 2}".into()]]).unwrap();
        let mut r = csv::Reader::from_reader(&b[..]);
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(&rec[1], "{\"x\": 1, \"y\": 2}");
    }
}
