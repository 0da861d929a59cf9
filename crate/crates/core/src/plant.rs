//! Normal-form plants and their sampled-data matrices.
//!
//! A plant is given directly in normal form: internal states `eta` with
//! dynamics `f0(eta, xi)`, and a chain of `rho` integrators `xi` whose last
//! link is driven by `alpha(xi, eta) + beta(xi, eta) * u`. The measured
//! output is `xi[0]`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `f0(eta, xi, out)` writes the internal-state derivative into `out`.
pub type InternalField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Scalar map evaluated at `(xi, eta)`.
pub type ScalarField = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct PlantModel {
    rho: usize,
    eta_dim: usize,
    f0: InternalField,
    alpha: ScalarField,
    beta0: f64,
    delta_beta: Option<ScalarField>,
    coupled: Option<bool>,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("rho", &self.rho)
            .field("eta_dim", &self.eta_dim)
            .field("beta0", &self.beta0)
            .field("perturbed", &self.delta_beta.is_some())
            .field("coupled", &self.coupled)
            .finish_non_exhaustive()
    }
}

impl PlantModel {
    pub fn new(
        rho: usize,
        eta_dim: usize,
        f0: InternalField,
        alpha: ScalarField,
        beta0: f64,
    ) -> Result<Self> {
        if rho == 0 {
            return Err(Error::invalid("relative degree must be >= 1"));
        }
        if beta0 == 0.0 || !beta0.is_finite() {
            return Err(Error::invalid("nominal beta must be finite and nonzero"));
        }
        Ok(PlantModel {
            rho,
            eta_dim,
            f0,
            alpha,
            beta0,
            delta_beta: None,
            coupled: None,
        })
    }

    /// Adds a state-dependent perturbation to the input gain.
    pub fn with_delta_beta(mut self, delta_beta: ScalarField) -> Self {
        self.delta_beta = Some(delta_beta);
        self
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn eta_dim(&self) -> usize {
        self.eta_dim
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    /// Coupling flag of the demo plant, `None` for user-defined plants.
    pub fn coupled(&self) -> Option<bool> {
        self.coupled
    }

    pub fn state_dim(&self) -> usize {
        self.eta_dim + self.rho
    }

    fn beta_at(&self, xi: &[f64], eta: &[f64]) -> f64 {
        self.beta0 + self.delta_beta.as_ref().map_or(0.0, |d| d(xi, eta))
    }

    /// Writes the derivative of the packed state `x = eta ++ xi` into `out`.
    pub fn derivative_into(&self, x: &[f64], u: f64, out: &mut [f64]) {
        let (eta, xi) = x.split_at(self.eta_dim);
        let (d_eta, d_xi) = out.split_at_mut(self.eta_dim);
        (self.f0)(eta, xi, d_eta);
        d_xi[..self.rho - 1].copy_from_slice(&xi[1..]);
        d_xi[self.rho - 1] = (self.alpha)(xi, eta) + self.beta_at(xi, eta) * u;
    }

    /// `eta_dot ++ xi_dot` at the given state and input.
    pub fn derivative(&self, s: &FullState, u: f64) -> Result<Vec<f64>> {
        self.check_dims(s)?;
        let x = s.packed();
        let mut out = vec![0.0; x.len()];
        self.derivative_into(&x, u, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation(format!(
                "derivative at t = {} is {out:?}",
                s.t
            )));
        }
        Ok(out)
    }

    /// Oracle accessor for error metrics; never fed to the controller.
    pub fn true_alpha(&self, s: &FullState) -> f64 {
        (self.alpha)(&s.xi, &s.eta)
    }

    /// Oracle accessor for error metrics; never fed to the controller.
    pub fn true_beta(&self, s: &FullState) -> f64 {
        self.beta_at(&s.xi, &s.eta)
    }

    fn check_dims(&self, s: &FullState) -> Result<()> {
        if s.eta.len() != self.eta_dim || s.xi.len() != self.rho {
            return Err(Error::invalid(format!(
                "state dims (eta {}, xi {}) do not match plant (eta {}, xi {})",
                s.eta.len(),
                s.xi.len(),
                self.eta_dim,
                self.rho
            )));
        }
        Ok(())
    }
}

/// Van der Pol internal dynamics driven by `xi_1`, with a relative-degree-two
/// chain whose drift is `-sin(xi_1) + 2 xi_2 + delta * eta_1^2` and whose input
/// gain is `2 + gain * sin(xi_1)`.
pub fn make_vdp_demo(coupled: bool, perturbation_gain: f64) -> PlantModel {
    let delta = if coupled { 1.0 } else { 0.0 };
    let f0: InternalField = Arc::new(|eta, xi, out| {
        out[0] = eta[1];
        out[1] = -eta[0] + 0.5 * (1.0 - eta[0] * eta[0]) * eta[1] + xi[0];
    });
    let alpha: ScalarField =
        Arc::new(move |xi, eta| -xi[0].sin() + 2.0 * xi[1] + delta * eta[0] * eta[0]);
    let mut plant = PlantModel::new(2, 2, f0, alpha, 2.0).expect("demo plant is well formed");
    if perturbation_gain != 0.0 {
        plant = plant.with_delta_beta(Arc::new(move |xi, _| perturbation_gain * xi[0].sin()));
    }
    plant.coupled = Some(coupled);
    plant
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub t: f64,
}

impl FullState {
    pub fn new(eta: Vec<f64>, xi: Vec<f64>, t: f64) -> Self {
        FullState { eta, xi, t }
    }

    /// Packs into the integrator layout `eta ++ xi`.
    pub fn packed(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.eta.len() + self.xi.len());
        x.extend_from_slice(&self.eta);
        x.extend_from_slice(&self.xi);
        x
    }

    pub fn from_packed(x: &[f64], eta_dim: usize, t: f64) -> Self {
        FullState {
            eta: x[..eta_dim].to_vec(),
            xi: x[eta_dim..].to_vec(),
            t,
        }
    }

    pub fn output(&self) -> f64 {
        self.xi[0]
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Extended sampled model `xi_bar(k+1) = Abar xi_bar(k) + Bbar beta u(k)`,
/// `y = Cbar xi_bar`, where the last extended state stands for `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDiscreteModel {
    pub abar: Matrix,
    pub bbar: Matrix,
    pub cbar: Matrix,
    pub sampling_time: f64,
    pub rho: usize,
}

/// Upper-triangular Taylor matrix with entry `(i, j) = t^(j-i) / (j-i)!`.
/// Valid for any sign of `t`; a negative `t` yields the inverse.
pub(crate) fn taylor_shift(dim: usize, t: f64) -> Matrix {
    Matrix::from_fn(dim, dim, |i, j| {
        if j >= i {
            t.powi((j - i) as i32) / factorial(j - i)
        } else {
            0.0
        }
    })
}

pub fn build_extended_model(rho: usize, sampling_time: f64) -> Result<ExtendedDiscreteModel> {
    if rho == 0 {
        return Err(Error::invalid("relative degree must be >= 1"));
    }
    if !sampling_time.is_finite() || sampling_time <= 0.0 {
        return Err(Error::invalid(format!(
            "sampling time must be positive, got {sampling_time}"
        )));
    }
    let n = rho + 1;
    let bbar = Matrix::from_fn(n, 1, |i, _| {
        if i < rho {
            sampling_time.powi((rho - i) as i32) / factorial(rho - i)
        } else {
            0.0
        }
    });
    let cbar = Matrix::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { 0.0 });
    Ok(ExtendedDiscreteModel {
        abar: taylor_shift(n, sampling_time),
        bbar,
        cbar,
        sampling_time,
        rho,
    })
}

impl ExtendedDiscreteModel {
    /// `Abar^-1`, formed exactly as the Taylor matrix at `-T`.
    pub fn abar_inverse(&self) -> Matrix {
        taylor_shift(self.rho + 1, -self.sampling_time)
    }

    /// The `rho x rho` chain matrix `A` of the non-extended sampled model.
    pub fn chain_a(&self) -> Matrix {
        self.abar.view((0, 0), (self.rho, self.rho)).into_owned()
    }

    /// The `rho x 1` chain input matrix `B` of the non-extended sampled model.
    pub fn chain_b(&self) -> Matrix {
        self.bbar.view((0, 0), (self.rho, 1)).into_owned()
    }
}
