//! Data-driven feedback linearization for sampled nonlinear plants in
//! normal form whose zero dynamics settle on a periodic orbit.
//!
//! The pieces, bottom up:
//!
//! * [`numerics`]: Hankel matrices, rank, pseudo-inverse, RK4 under a
//!   zero-order hold.
//! * [`plant`]: normal-form plants, the Van der Pol demo system, and the
//!   extended sampled model.
//! * [`estimator`]: one-shot identification of the input gain from an
//!   excitation batch, then per-step reconstruction of the extended state.
//! * [`controller`]: the feedback-linearizing law and pole placement.
//! * [`simloop`]: the closed loop, metrics and sampling-time sweeps.

pub mod controller;
pub mod error;
pub mod estimator;
pub mod numerics;
pub mod plant;
pub mod simloop;

pub use controller::{control, design_gain, excitation_input, ExcitationConfig, GainVector};
pub use error::{Error, Result};
pub use estimator::{
    build_reconstruction_matrices, build_z_matrices, estimate_beta, identify_beta, BetaEstimate,
    EstimatorState, ExtendedStateEstimate,
};
pub use nalgebra::Complex;
pub use numerics::{
    build_hankel, check_pe, loglog_slope, numeric_rank, pinv, rk4_hold_step, Matrix, SignalWindow,
};
pub use plant::{
    build_extended_model, make_vdp_demo, ExtendedDiscreteModel, FullState, PlantModel,
};
pub use simloop::{
    measure_eta_bounds, run_experiment, sweep, ExperimentConfig, IoLog, Phase, RunMetrics, RunMode,
    StepRecord, SweepOptions, SweepRow,
};
