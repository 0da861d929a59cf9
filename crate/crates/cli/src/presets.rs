//! Built-in scenarios.

use ddfl_core::numerics::DEFAULT_RANK_TOL;
use ddfl_core::simloop::{
    ExcitationSettings, FeedbackSpec, InitialState, NoiseConfig, NoiseDistribution, PlantConfig,
};
use ddfl_core::{ExperimentConfig, RunMode, SweepOptions};
use serde::{Deserialize, Serialize};

/// Sampling times used by the error-scaling sweeps.
pub const SCALING_GRID: [f64; 5] = [0.04, 0.02, 0.01, 0.005, 0.0025];

/// Wider grid for the noisy sweep: the noise term only dominates at the
/// small end, the truncation term only at the large end.
pub const NOISE_GRID: [f64; 8] = [0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005, 0.0025];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    EBeta,
    SupExi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub grid: Vec<f64>,
    /// Column whose log-log slope is reported as `slope_fit`.
    #[serde(default = "default_fit")]
    pub fit: FitTarget,
    #[serde(default)]
    pub fresh_seeds: bool,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn default_fit() -> FitTarget {
    FitTarget::EBeta
}

fn one() -> usize {
    1
}

impl SweepPlan {
    pub fn options(&self) -> SweepOptions {
        SweepOptions {
            fresh_seeds: self.fresh_seeds,
            repeats: self.repeats,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
}

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub command: Command,
    /// `None` only for `custom`, which takes everything from `--config`.
    pub config: Option<ExperimentConfig>,
    pub sweep: Option<SweepPlan>,
}

fn base(coupling: u8, perturbation_gain: f64) -> ExperimentConfig {
    ExperimentConfig {
        plant: PlantConfig {
            kind: "vdp-demo".into(),
            coupling,
            perturbation_gain,
        },
        sampling_time: 0.02,
        horizon: 15.0,
        initial_state: InitialState {
            eta: vec![1.0, 0.0],
            xi: vec![2.5, 0.0],
        },
        l: 8,
        m: 3,
        feedback: FeedbackSpec::Gain(vec![-20.0, -10.0]),
        excitation: ExcitationSettings {
            amplitude: 1.0,
            seed: 1,
        },
        substeps: None,
        noise: NoiseConfig::default(),
        rank_tol: DEFAULT_RANK_TOL,
        mode: RunMode::ClosedLoop,
        transient_cut: 0.4,
        tail_fraction: 0.2,
    }
}

fn scaling_sweep(coupling: u8, gain: f64, fit: FitTarget) -> (ExperimentConfig, SweepPlan) {
    let mut cfg = base(coupling, gain);
    cfg.horizon = 4.0;
    let plan = SweepPlan {
        grid: SCALING_GRID.to_vec(),
        fit,
        fresh_seeds: false,
        repeats: 1,
    };
    (cfg, plan)
}

pub fn all() -> Vec<Preset> {
    let (beta_cfg, beta_plan) = scaling_sweep(1, 0.0, FitTarget::EBeta);
    let (pert_cfg, pert_plan) = scaling_sweep(1, 0.3, FitTarget::EBeta);
    let (xi_cfg, xi_plan) = scaling_sweep(1, 0.0, FitTarget::SupExi);

    let mut noise_cfg = base(0, 0.0);
    noise_cfg.horizon = 4.0;
    noise_cfg.mode = RunMode::IdentifyOnly;
    noise_cfg.noise = NoiseConfig {
        amplitude: 1e-3,
        distribution: NoiseDistribution::Uniform,
    };
    let noise_plan = SweepPlan {
        grid: NOISE_GRID.to_vec(),
        fit: FitTarget::EBeta,
        fresh_seeds: false,
        repeats: 16,
    };

    let mut zero = base(0, 0.0);
    zero.horizon = 30.0;
    zero.initial_state.xi = vec![0.0, 0.0];
    zero.mode = RunMode::ZeroInput;

    vec![
        Preset {
            name: "case1",
            summary: "coupled plant with input-gain perturbation 0.3 sin(xi1), T = 0.02",
            command: Command::Run,
            config: Some(base(1, 0.3)),
            sweep: None,
        },
        Preset {
            name: "case2",
            summary: "decoupled plant, exact input gain, T = 0.02",
            command: Command::Run,
            config: Some(base(0, 0.0)),
            sweep: None,
        },
        Preset {
            name: "sweep-beta",
            summary: "input-gain error against T, exact input gain",
            command: Command::Sweep,
            config: Some(beta_cfg),
            sweep: Some(beta_plan),
        },
        Preset {
            name: "sweep-beta-perturbed",
            summary: "input-gain error against T with perturbation 0.3 sin(xi1)",
            command: Command::Sweep,
            config: Some(pert_cfg),
            sweep: Some(pert_plan),
        },
        Preset {
            name: "sweep-xi",
            summary: "extended-state reconstruction error against T",
            command: Command::Sweep,
            config: Some(xi_cfg),
            sweep: Some(xi_plan),
        },
        Preset {
            name: "sweep-noise",
            summary: "input-gain error against T with uniform output noise 1e-3",
            command: Command::Sweep,
            config: Some(noise_cfg),
            sweep: Some(noise_plan),
        },
        Preset {
            name: "zero-dynamics",
            summary: "unforced plant from xi = 0: the Van der Pol orbit",
            command: Command::Run,
            config: Some(zero),
            sweep: None,
        },
        Preset {
            name: "custom",
            summary: "everything from --config",
            command: Command::Run,
            config: None,
            sweep: None,
        },
    ]
}

pub fn find(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}
