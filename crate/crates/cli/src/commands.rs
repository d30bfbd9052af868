use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dfszeno::{fit_power_law, run_scheme, RunMode, SweepVariable};

use crate::config::{self, ExperimentConfig, Overrides};
use crate::output::{self, FitRecord, ResultRecord};
use crate::verify::{self, Faults};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "dfszeno",
    version,
    about = "Simulate leakage-suppressed encoded qubits under collective dephasing"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Suppress the human-readable summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scheme and write a self-describing result record.
    Run(RunArgs),
    /// Run a parameter sweep, writing tables, fits and a scheme ranking.
    Sweep(RunArgs),
    /// Check the built-in physical properties.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RNG seed (overrides the config file and SIM_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<RunMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    Projector,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, hide = true)]
    pub inject_fault: Vec<Fault>,
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    s.parse().map_err(|e: dfszeno::Error| e.to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let loaded = config::load(&self.config)?;
        let ov = Overrides {
            seed: self.seed,
            mode: self.mode,
            out: self.out.clone(),
        };
        let env = std::env::var(config::SEED_ENV).ok();
        ExperimentConfig::resolve(loaded, &ov, env.as_deref())
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let work = |say: &mut Vec<u8>| match &cli.command {
        Command::Run(a) => cmd_run(&a.resolve()?, say).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(&a.resolve()?, say).map(|_| ()),
        Command::Verify(a) => {
            let faults = Faults {
                projector: a.inject_fault.contains(&Fault::Projector),
            };
            verify::run(&faults, say).map(|_| ())
        }
    };
    let mut summary = Vec::new();
    let result = match cli.jobs {
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(|| work(&mut summary)),
        None => work(&mut summary),
    };
    if !cli.quiet {
        out.write_all(&summary)?;
    }
    result
}

/// Run the configured scheme and write the result record.
pub fn cmd_run(cfg: &ExperimentConfig, say: &mut dyn Write) -> Result<ResultRecord, CliError> {
    let q = cfg.logical.qubit();
    let result = run_scheme(&q, &cfg.model, &cfg.scheme)?;
    let record = ResultRecord::new(cfg.clone(), result);
    let path = output::write_run(&record)?;
    let r = &record.result;
    writeln!(
        say,
        "scheme {} ({} mode, N = {}, seed {})",
        r.scheme, r.mode, r.zeno_count, cfg.scheme.seed
    )?;
    writeln!(say, "  fidelity        {:.6}", r.final_fidelity)?;
    writeln!(say, "  leak weight     {:.3e}", r.final_leak_weight)?;
    writeln!(say, "  phase error     {:.3e}", r.logical_phase_error)?;
    writeln!(say, "  survival        {:.6}", r.survival_probability)?;
    writeln!(say, "wrote {}", path.display())?;
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct SweepOutputs {
    pub table: PathBuf,
    pub series: PathBuf,
    pub ranking: Option<PathBuf>,
    pub fits: Vec<PathBuf>,
}

/// Run the sweep section. Aborted points stay in the table; the command
/// still reports them as a numerical failure once everything is written.
pub fn cmd_sweep(cfg: &ExperimentConfig, say: &mut dyn Write) -> Result<SweepOutputs, CliError> {
    let spec = cfg
        .sweep_spec()
        .ok_or_else(|| CliError::Config("sweep section is missing".into()))?;
    let table = dfszeno::sweep(&spec)?;
    let dir = &cfg.output.dir;

    let table_path = dir.join("sweep.csv");
    output::write_atomic(&table_path, &output::sweep_csv(cfg, &table)?)?;
    let series_path = dir.join("sweep_series.csv");
    output::write_atomic(&series_path, &output::series_csv(&table)?)?;
    writeln!(
        say,
        "sweep over {} with {} points",
        spec.variable.name(),
        table.rows.len()
    )?;

    let mut fits = Vec::new();
    if cfg.fit_enabled() {
        for &scheme in &spec.schemes {
            let points: Vec<(f64, f64)> = table
                .series(scheme)
                .iter()
                .map(|(v, r)| (*v, r.final_leak_weight))
                .collect();
            match fit_power_law(&points) {
                Ok(fit) => {
                    writeln!(
                        say,
                        "  {scheme}: leak ~ {}^{:.3} (r^2 = {:.4})",
                        spec.variable.name(),
                        fit.exponent,
                        fit.r_squared
                    )?;
                    let rec = FitRecord {
                        scheme,
                        variable: spec.variable.name().to_string(),
                        fit,
                    };
                    let path = dir.join(format!("fit_{scheme}.json"));
                    let mut bytes = serde_json::to_vec_pretty(&rec).map_err(|e| CliError::Io(e.to_string()))?;
                    bytes.push(b'\n');
                    output::write_atomic(&path, &bytes)?;
                    fits.push(path);
                }
                Err(e) => writeln!(say, "  {scheme}: no fit ({e})")?,
            }
        }
    }

    let ranking = if spec.schemes.len() > 1 {
        let rankings = table.rankings();
        for (v, rows) in &rankings {
            writeln!(say, "  {} = {v}:", spec.variable.name())?;
            for r in rows {
                let f = r
                    .final_fidelity
                    .map(|f| format!("{f:.6}"))
                    .unwrap_or_else(|| "aborted".into());
                writeln!(
                    say,
                    "    {}. {:<24} {} qubits  fidelity {f}",
                    r.rank,
                    r.scheme.name(),
                    r.qubit_cost
                )?;
            }
        }
        let path = dir.join("ranking.csv");
        output::write_atomic(&path, &output::ranking_csv(spec.variable.name(), &rankings)?)?;
        Some(path)
    } else {
        None
    };
    writeln!(say, "wrote {}", dir.display())?;

    let aborted: Vec<String> = table
        .aborted()
        .map(|r| {
            format!(
                "{} at {} = {}: {}",
                r.scheme,
                spec.variable.name(),
                r.value,
                r.result.as_ref().unwrap_err()
            )
        })
        .collect();
    if !aborted.is_empty() {
        return Err(CliError::Numerical(aborted.join("; ")));
    }
    if spec.variable == SweepVariable::N && fits.is_empty() && cfg.fit_enabled() {
        writeln!(say, "no series could be fitted")?;
    }
    Ok(SweepOutputs {
        table: table_path,
        series: series_path,
        ranking,
        fits,
    })
}
