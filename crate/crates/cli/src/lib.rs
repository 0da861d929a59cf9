//! Scenario presets, config resolution and result files behind the `ddfl`
//! binary.

pub mod config;
pub mod output;
pub mod presets;
pub mod svg;

use std::path::PathBuf;

use ddfl_core::numerics::{build_hankel, numeric_rank, SignalWindow};
use ddfl_core::{run_experiment, sweep, Error, IoLog, RunMetrics, SweepRow};

pub use config::{resolve, ConfigError, Overrides, ScenarioSpec};
pub use output::{read_trajectory_csv, IoFailure, RunReport, SweepReport};
pub use presets::{Command, FitTarget, Preset, SweepPlan};

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_PE: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;
pub const EXIT_IO: u8 = 5;

/// Maps a failure to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<IoFailure>() || cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.root() {
                Error::PeViolation { .. } => EXIT_PE,
                Error::IntegrationDiverged { .. } | Error::ModelEvaluation(_) => EXIT_DIVERGED,
                Error::InvalidArgument(_) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            };
        }
    }
    EXIT_OTHER
}

pub struct RunOutcome {
    pub log: IoLog,
    pub metrics: RunMetrics,
    pub files: Vec<PathBuf>,
}

/// Runs the scenario and writes its files; nothing is written on failure.
pub fn execute_run(spec: &ScenarioSpec) -> anyhow::Result<RunOutcome> {
    let (log, metrics) = run_experiment(&spec.config)?;
    let files = output::emit_run(spec, &log, &metrics)?;
    Ok(RunOutcome {
        log,
        metrics,
        files,
    })
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub report: SweepReport,
    pub files: Vec<PathBuf>,
}

pub fn execute_sweep(spec: &ScenarioSpec) -> anyhow::Result<SweepOutcome> {
    let plan = spec
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError("scenario has no sweep section".into()))?;
    let rows = sweep(&spec.config, &plan.grid, &plan.options())?;
    let report = output::sweep_report(spec, &rows);
    let files = output::emit_sweep(spec, &rows, &report)?;
    Ok(SweepOutcome {
        rows,
        report,
        files,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeCheck {
    pub rank: usize,
    pub required: usize,
    /// A constant signal of the same length must fail the same gate.
    pub constant_rejected: bool,
}

impl PeCheck {
    pub fn passed(&self) -> bool {
        self.rank == self.required && self.constant_rejected
    }
}

/// Checks that the configured excitation batch is persistently exciting of
/// order `2 rho + 2`.
pub fn pe_self_test(spec: &ScenarioSpec) -> anyhow::Result<PeCheck> {
    let cfg = &spec.config;
    let rho = cfg.rho();
    let required = 2 * rho + 2;
    let batch = cfg.excitation_config().batch(rho);
    let rank_of = |v: &[f64]| -> anyhow::Result<usize> {
        let h = build_hankel(&SignalWindow::scalar(v, 0)?, required)?;
        Ok(numeric_rank(&h, cfg.rank_tol)?)
    };
    let constant = vec![1.0; batch.len()];
    Ok(PeCheck {
        rank: rank_of(&batch)?,
        required,
        constant_rejected: rank_of(&constant)? < required,
    })
}
