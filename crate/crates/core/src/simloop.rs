//! Sampled-data closed loop: plant integrated under a zero-order hold,
//! an excitation batch for identifying `beta`, then reconstruction and
//! feedback-linearizing control at every sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{control, design_gain, ExcitationConfig, GainVector};
use crate::error::{Error, Result};
use crate::estimator::{identify_beta, BetaEstimate, EstimatorState};
use crate::numerics::{rk4_hold_step, SignalWindow, DEFAULT_RANK_TOL};
use crate::plant::{build_extended_model, make_vdp_demo, FullState, PlantModel};
use nalgebra::Complex;

/// Target RK4 substep length when `substeps` is left unset.
pub const DEFAULT_SUBSTEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// Only the Van der Pol demo family is built in.
    #[serde(default = "default_plant_kind")]
    pub kind: String,
    /// Coupling flag: 1 puts `eta_1^2` into the chain drift.
    pub coupling: u8,
    #[serde(default)]
    pub perturbation_gain: f64,
}

fn default_plant_kind() -> String {
    "vdp-demo".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSpec {
    /// Gain `K` given directly.
    Gain(Vec<f64>),
    /// Desired closed-loop poles as `[re, im]` pairs.
    Poles(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSettings {
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    /// Uniform on `[-amplitude, amplitude]`.
    #[default]
    Uniform,
    /// Zero-mean Gaussian with standard deviation `amplitude`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub distribution: NoiseDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Excitation batch, identification, then feedback until the horizon.
    #[default]
    ClosedLoop,
    /// Stop right after `beta` has been identified.
    IdentifyOnly,
    /// Apply `u = 0` throughout; no identification.
    ZeroInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    #[serde(rename = "T")]
    pub sampling_time: f64,
    pub horizon: f64,
    pub initial_state: InitialState,
    pub l: usize,
    pub m: usize,
    pub feedback: FeedbackSpec,
    pub excitation: ExcitationSettings,
    /// RK4 substeps per sampling interval; `None` means `ceil(T / 1e-4)`.
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default)]
    pub mode: RunMode,
    /// Leading fraction of the horizon ignored by the `eta` bound estimate.
    #[serde(default = "default_transient_cut")]
    pub transient_cut: f64,
    /// Trailing fraction of the horizon used for the convergence metric.
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

fn default_transient_cut() -> f64 {
    0.4
}

fn default_tail_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn rho(&self) -> usize {
        self.initial_state.xi.len()
    }

    pub fn substeps(&self) -> usize {
        self.substeps.unwrap_or_else(|| {
            ((self.sampling_time / DEFAULT_SUBSTEP) - 1e-9)
                .ceil()
                .max(1.0) as usize
        })
    }

    /// Number of samples `k = 0 .. steps - 1` in the run.
    pub fn steps(&self) -> usize {
        let n = (self.horizon / self.sampling_time + 1e-9).floor() as usize;
        match self.mode {
            RunMode::IdentifyOnly => self.batch_len(),
            _ => n,
        }
    }

    /// Length of the excitation phase, `l + rho + 1`.
    pub fn batch_len(&self) -> usize {
        self.l + self.rho() + 1
    }

    pub fn excitation_config(&self) -> ExcitationConfig {
        ExcitationConfig {
            length_l: self.l,
            amplitude: self.excitation.amplitude,
            seed: self.excitation.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.sampling_time;
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::invalid(format!(
                "sampling time T must be positive, got {t}"
            )));
        }
        if self.plant.kind != "vdp-demo" {
            return Err(Error::invalid(format!(
                "unknown plant kind '{}'",
                self.plant.kind
            )));
        }
        if self.plant.coupling > 1 {
            return Err(Error::invalid("plant coupling must be 0 or 1"));
        }
        if !self.plant.perturbation_gain.is_finite() || self.plant.perturbation_gain.abs() >= 2.0 {
            return Err(Error::invalid(
                "perturbation gain must be finite with |gain| < 2",
            ));
        }
        let rho = self.rho();
        if rho != 2 || self.initial_state.eta.len() != 2 {
            return Err(Error::invalid(
                "the demo plant needs initial_state.eta and initial_state.xi of length 2",
            ));
        }
        if self
            .initial_state
            .eta
            .iter()
            .chain(&self.initial_state.xi)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("initial state must be finite"));
        }
        if self.l < 2 * rho + 2 {
            return Err(Error::invalid(format!(
                "l must be >= 2 rho + 2 = {}",
                2 * rho + 2
            )));
        }
        if self.m < rho + 1 || self.m > self.l {
            return Err(Error::invalid(format!(
                "m must satisfy rho + 1 <= m <= l, got m = {}",
                self.m
            )));
        }
        if !(self.horizon.is_finite()) || self.horizon + 1e-9 * t < self.batch_len() as f64 * t {
            return Err(Error::invalid(format!(
                "horizon {} shorter than the excitation phase ({} samples of T = {t})",
                self.horizon,
                self.batch_len()
            )));
        }
        if !self.excitation.amplitude.is_finite() || self.excitation.amplitude < 0.0 {
            return Err(Error::invalid(
                "excitation amplitude must be finite and >= 0",
            ));
        }
        if !self.noise.amplitude.is_finite() || self.noise.amplitude < 0.0 {
            return Err(Error::invalid("noise amplitude must be finite and >= 0"));
        }
        if self.substeps == Some(0) {
            return Err(Error::invalid("substeps must be >= 1"));
        }
        if self.rank_tol.is_nan() || self.rank_tol <= 0.0 {
            return Err(Error::invalid("rank_tol must be positive"));
        }
        if !(0.0..1.0).contains(&self.transient_cut)
            || !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0)
        {
            return Err(Error::invalid(
                "transient_cut must lie in [0, 1) and tail_fraction in (0, 1]",
            ));
        }
        self.gain()?;
        Ok(())
    }

    pub fn gain(&self) -> Result<GainVector> {
        match &self.feedback {
            FeedbackSpec::Gain(k) => {
                if k.len() != self.rho() {
                    return Err(Error::invalid(format!(
                        "gain has {} entries, need {}",
                        k.len(),
                        self.rho()
                    )));
                }
                GainVector::new(k.clone())
            }
            FeedbackSpec::Poles(p) => {
                let poles: Vec<Complex<f64>> =
                    p.iter().map(|[re, im]| Complex::new(*re, *im)).collect();
                design_gain(self.rho(), &poles)
            }
        }
    }

    pub fn build_plant(&self) -> PlantModel {
        make_vdp_demo(self.plant.coupling == 1, self.plant.perturbation_gain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Excite,
    Control,
    Unforced,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Excite => "excite",
            Phase::Control => "control",
            Phase::Unforced => "unforced",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s {
            "excite" => Some(Phase::Excite),
            "control" => Some(Phase::Control),
            "unforced" => Some(Phase::Unforced),
            _ => None,
        }
    }
}

/// State and signals at sample `k`, before `u(k)` is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub phase: Phase,
    pub u: f64,
    /// Measured output, including any injected noise.
    pub y: f64,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub xi_hat: Option<Vec<f64>>,
    pub alpha_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoLog {
    pub records: Vec<StepRecord>,
    pub beta_hat: Option<f64>,
    pub e_beta: Option<f64>,
    pub seed: u64,
    pub sampling_time: f64,
}

impl IoLog {
    pub fn eta_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.eta.len())
    }

    pub fn rho(&self) -> usize {
        self.records.first().map_or(0, |r| r.xi.len())
    }

    pub fn xi_norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| norm(&r.xi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub beta_hat: Option<f64>,
    pub e_beta: Option<f64>,
    /// Largest reconstruction error of the extended state over the control phase.
    pub sup_exi: f64,
    /// Largest `|xi|` over the trailing `tail_fraction` of the run.
    pub xi_tail_norm: f64,
    pub c1_est: f64,
    pub c2_est: f64,
    pub seed: u64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn draw_noise(cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> f64 {
    if cfg.amplitude == 0.0 {
        return 0.0;
    }
    match cfg.distribution {
        NoiseDistribution::Uniform => cfg.amplitude * rng.random_range(-1.0..=1.0),
        NoiseDistribution::Gaussian => {
            let z: f64 = rng.sample(StandardNormal);
            cfg.amplitude * z
        }
    }
}

/// Runs one experiment and returns its log and summary metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(IoLog, RunMetrics)> {
    cfg.validate()?;
    let plant = cfg.build_plant();
    let gain = cfg.gain()?;
    let rho = plant.rho();
    let eta_dim = plant.eta_dim();
    let t_s = cfg.sampling_time;
    let model = build_extended_model(rho, t_s)?;
    let substeps = cfg.substeps();
    let steps = cfg.steps();
    let batch = cfg.batch_len();

    let exc = cfg.excitation_config();
    let mut exc_rng = exc.rng();
    let mut noise = noise_rng(cfg.excitation.seed);

    let mut x = FullState::new(
        cfg.initial_state.eta.clone(),
        cfg.initial_state.xi.clone(),
        0.0,
    )
    .packed();
    let mut records = Vec::with_capacity(steps);
    let mut y_batch = Vec::with_capacity(batch);
    let mut u_batch = Vec::with_capacity(batch);
    let mut beta: Option<BetaEstimate> = None;
    let mut estimator: Option<EstimatorState> = None;
    let mut sup_exi: f64 = 0.0;
    let mut u_prev = 0.0;

    for k in 0..steps {
        let t = k as f64 * t_s;
        let state = FullState::from_packed(&x, eta_dim, t);
        let y = state.output() + draw_noise(&cfg.noise, &mut noise);

        let (phase, u, estimate) = if cfg.mode == RunMode::ZeroInput {
            (Phase::Unforced, 0.0, None)
        } else if k < batch {
            let u = crate::controller::excitation_input(&exc, k, &mut exc_rng);
            y_batch.push(y);
            u_batch.push(u);
            if k + 1 == batch {
                let est = identify_beta(
                    &SignalWindow::scalar(&y_batch, 0)?,
                    &SignalWindow::scalar(&u_batch, 0)?,
                    rho,
                    cfg.l,
                    t_s,
                    cfg.rank_tol,
                )?;
                let mut window = EstimatorState::new(model.clone(), est.beta_hat, cfg.m)?;
                for j in (batch - cfg.m)..batch {
                    let before = if j == 0 { 0.0 } else { u_batch[j - 1] };
                    window.push_sample(y_batch[j], before);
                }
                estimator = Some(window);
                beta = Some(est);
            }
            (Phase::Excite, u, None)
        } else {
            let window = estimator
                .as_mut()
                .expect("estimator exists after the batch");
            window.push_sample(y, u_prev);
            let e = window.reconstruct(k as i64)?;
            let u = control(&e.xi_hat, e.alpha_hat, window.beta_hat(), &gain)?;
            let mut truth = state.xi.clone();
            truth.push(plant.true_alpha(&state));
            let err: Vec<f64> = truth.iter().zip(e.extended()).map(|(a, b)| a - b).collect();
            sup_exi = sup_exi.max(norm(&err));
            (Phase::Control, u, Some(e))
        };

        records.push(StepRecord {
            k,
            t,
            phase,
            u,
            y,
            eta: state.eta.clone(),
            xi: state.xi.clone(),
            xi_hat: estimate.as_ref().map(|e| e.xi_hat.clone()),
            alpha_hat: estimate.map(|e| e.alpha_hat),
        });
        u_prev = u;

        if k + 1 < steps {
            x = rk4_hold_step(
                |s, u, _, out| plant.derivative_into(s, u, out),
                &x,
                u,
                t,
                t_s,
                substeps,
            )?;
        }
    }

    let beta_hat = beta.as_ref().map(|b| b.beta_hat);
    let e_beta = beta_hat.map(|b| (plant.beta0() - b).abs());
    let log = IoLog {
        records,
        beta_hat,
        e_beta,
        seed: cfg.excitation.seed,
        sampling_time: t_s,
    };

    let tail_start = ((1.0 - cfg.tail_fraction) * log.records.len() as f64).floor() as usize;
    let xi_tail_norm = log.records[tail_start.min(log.records.len() - 1)..]
        .iter()
        .map(|r| norm(&r.xi))
        .fold(0.0, f64::max);
    let (c1_est, c2_est) = measure_eta_bounds(&log, cfg.transient_cut)?;
    let metrics = RunMetrics {
        beta_hat,
        e_beta,
        sup_exi,
        xi_tail_norm,
        c1_est,
        c2_est,
        seed: cfg.excitation.seed,
    };
    Ok((log, metrics))
}

/// Smallest and largest `|eta|` after discarding the leading `transient_cut`
/// fraction of the samples.
pub fn measure_eta_bounds(log: &IoLog, transient_cut: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&transient_cut) {
        return Err(Error::invalid("transient cut must lie in [0, 1)"));
    }
    let start = (transient_cut * log.records.len() as f64).floor() as usize;
    let kept = &log.records[start.min(log.records.len())..];
    if kept.is_empty() {
        return Err(Error::invalid("no samples left after the transient cut"));
    }
    Ok(kept
        .iter()
        .map(|r| norm(&r.eta))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
            (lo.min(n), hi.max(n))
        }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Draw a different seed for every grid point instead of reusing one.
    pub fresh_seeds: bool,
    /// Runs averaged per grid point, with seeds `seed, seed + 1, ...`.
    pub repeats: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            fresh_seeds: false,
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub sampling_time: f64,
    /// Mean of `e_beta` over the repeats.
    pub e_beta: f64,
    /// Mean of `sup_exi` over the repeats.
    pub sup_exi: f64,
}

fn point_seed(base: u64, grid_index: usize, repeat: usize, opts: &SweepOptions) -> u64 {
    let offset = if opts.fresh_seeds {
        (grid_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    } else {
        0
    };
    base.wrapping_add(offset).wrapping_add(repeat as u64)
}

/// One row per sampling time, sorted by `T` ascending. Runs execute in
/// parallel; results do not depend on scheduling.
pub fn sweep(base: &ExperimentConfig, grid: &[f64], opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    if opts.repeats == 0 {
        return Err(Error::invalid("sweep repeats must be >= 1"));
    }
    if base.mode == RunMode::ZeroInput {
        return Err(Error::invalid(
            "sweeps need identification; zero-input mode has none",
        ));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|i| (0..opts.repeats).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<(usize, RunMetrics)>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let mut cfg = base.clone();
            cfg.sampling_time = grid[i];
            // substep count follows each T
            cfg.substeps = None;
            cfg.excitation.seed = point_seed(base.excitation.seed, i, r, opts);
            run_experiment(&cfg)
                .map(|(_, m)| (i, m))
                .map_err(|e| Error::SweepPoint {
                    sampling_time: grid[i],
                    source: Box::new(e),
                })
        })
        .collect();

    let mut sums = vec![(0.0, 0.0); grid.len()];
    for res in results {
        let (i, m) = res?;
        sums[i].0 += m.e_beta.expect("identification ran");
        sums[i].1 += m.sup_exi;
    }
    let n = opts.repeats as f64;
    Ok(grid
        .iter()
        .zip(sums)
        .map(|(&t, (eb, ex))| SweepRow {
            sampling_time: t,
            e_beta: eb / n,
            sup_exi: ex / n,
        })
        .collect())
}
