use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ddfl_cli::{
    execute_run, execute_sweep, exit_code, pe_self_test, presets, resolve, Command, Overrides,
    EXIT_PE,
};

#[derive(Parser)]
#[command(
    name = "ddfl",
    version,
    about = "Data-driven feedback linearization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one closed-loop scenario.
    Run(Common),
    /// Sweep the sampling time and fit error slopes.
    Sweep(Common),
    /// List the built-in scenarios.
    Presets,
    /// Check that the configured excitation is persistently exciting.
    Check(Common),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Common {
    /// Built-in scenario name (see `ddfl presets`).
    #[arg(long)]
    preset: Option<String>,
    /// JSON file whose keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Excitation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling time in seconds.
    #[arg(long = "T")]
    sampling_time: Option<f64>,
    /// Simulated horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// Output noise amplitude.
    #[arg(long)]
    noise: Option<f64>,
}

impl Common {
    fn resolve(&self, command: Command) -> anyhow::Result<ddfl_cli::ScenarioSpec> {
        let overrides = Overrides {
            seed: self.seed,
            sampling_time: self.sampling_time,
            horizon: self.horizon,
            noise: self.noise,
        };
        Ok(resolve(
            command,
            self.preset.as_deref(),
            self.config.as_deref(),
            &overrides,
            self.out.clone(),
        )?)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Cmd::Presets => {
            for p in presets::all() {
                let kind = match p.command {
                    Command::Run => "run",
                    Command::Sweep => "sweep",
                };
                println!("{:<22} {:<6} {}", p.name, kind, p.summary);
            }
        }
        Cmd::Run(args) => {
            let spec = args.resolve(Command::Run)?;
            let out = execute_run(&spec).with_context(|| format!("scenario {}", spec.name))?;
            let m = &out.metrics;
            println!("beta_hat      {}", fmt_opt(m.beta_hat));
            println!("e_beta        {}", fmt_opt(m.e_beta));
            println!("sup_exi       {:.6}", m.sup_exi);
            println!("xi_tail_norm  {:.3e}", m.xi_tail_norm);
            println!("eta bounds    [{:.4}, {:.4}]", m.c1_est, m.c2_est);
            println!(
                "wrote {} files to {}",
                out.files.len(),
                spec.output_dir.display()
            );
        }
        Cmd::Sweep(args) => {
            let spec = args.resolve(Command::Sweep)?;
            let out = execute_sweep(&spec).with_context(|| format!("scenario {}", spec.name))?;
            println!("{:>10} {:>14} {:>14}", "T", "e_beta", "sup_exi");
            for r in &out.rows {
                println!(
                    "{:>10} {:>14.6e} {:>14.6e}",
                    r.sampling_time, r.e_beta, r.sup_exi
                );
            }
            println!("slope_fit     {}", fmt_opt(out.report.slope_fit));
            println!(
                "wrote {} files to {}",
                out.files.len(),
                spec.output_dir.display()
            );
        }
        Cmd::Check(args) => {
            let command = args
                .preset
                .as_deref()
                .and_then(presets::find)
                .map_or(Command::Run, |p| p.command);
            let spec = args.resolve(command)?;
            let check = pe_self_test(&spec)?;
            println!(
                "excitation rank {} of {} (seed {}), constant signal rejected: {}",
                check.rank, check.required, spec.config.excitation.seed, check.constant_rejected
            );
            if !check.passed() {
                println!("FAIL");
                return Ok(EXIT_PE);
            }
            println!("ok");
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
