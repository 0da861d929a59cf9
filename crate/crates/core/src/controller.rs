//! Feedback-linearizing control law, gain design on the integrator chain,
//! and the seeded excitation used during identification.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// State-feedback gain `v = K xi` for a chain of `rho` integrators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GainVector(Vec<f64>);

impl GainVector {
    /// Accepts a gain only if the closed-loop chain `A1 + B1 K` is Hurwitz.
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() || k.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gain must be a nonempty finite vector"));
        }
        let gain = GainVector(k);
        let poles = gain.closed_loop_poles();
        if let Some(p) = poles.iter().find(|p| p.re >= 0.0) {
            return Err(Error::invalid(format!(
                "gain {:?} leaves closed-loop pole {p} outside the open left half-plane",
                gain.0
            )));
        }
        Ok(gain)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn rho(&self) -> usize {
        self.0.len()
    }

    /// `A1 + B1 K`: superdiagonal shift with `K` as its last row.
    pub fn closed_loop_matrix(&self) -> Matrix {
        let rho = self.0.len();
        Matrix::from_fn(rho, rho, |i, j| {
            if i == rho - 1 {
                self.0[j]
            } else if j == i + 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn closed_loop_poles(&self) -> Vec<Complex<f64>> {
        self.closed_loop_matrix()
            .complex_eigenvalues()
            .iter()
            .copied()
            .collect()
    }

    fn dot(&self, xi: &[f64]) -> f64 {
        self.0.iter().zip(xi).map(|(k, x)| k * x).sum()
    }
}

/// Pole placement on the chain: the closed-loop characteristic polynomial is
/// `s^rho - k_rho s^(rho-1) - ... - k_1`, so `K` is read off the coefficients
/// of `prod (s - p_i)`.
pub fn design_gain(rho: usize, poles: &[Complex<f64>]) -> Result<GainVector> {
    if rho == 0 || poles.len() != rho {
        return Err(Error::invalid(format!(
            "need exactly rho = {rho} poles, got {}",
            poles.len()
        )));
    }
    if let Some(p) = poles
        .iter()
        .find(|p| p.re.is_nan() || p.re >= 0.0 || !p.im.is_finite())
    {
        return Err(Error::invalid(format!(
            "pole {p} is not in the open left half-plane"
        )));
    }
    let scale = poles.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let mut unmatched: Vec<Complex<f64>> = poles.to_vec();
    while let Some(p) = unmatched.pop() {
        if p.im.abs() <= 1e-12 * scale {
            continue;
        }
        let partner = unmatched
            .iter()
            .position(|q| (q - p.conj()).norm() <= 1e-9 * scale)
            .ok_or_else(|| Error::invalid(format!("pole {p} has no conjugate partner")))?;
        unmatched.swap_remove(partner);
    }

    // coeffs[i] multiplies s^i; monic
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i + 1] += c;
            next[i] -= c * p;
        }
        coeffs = next;
    }
    GainVector::new(coeffs[..rho].iter().map(|c| -c.re).collect())
}

/// `u = (-alpha_hat + K xi_hat) / beta_hat`.
pub fn control(xi_hat: &[f64], alpha_hat: f64, beta_hat: f64, gain: &GainVector) -> Result<f64> {
    if beta_hat == 0.0 || !beta_hat.is_finite() {
        return Err(Error::invalid("beta estimate must be finite and nonzero"));
    }
    if xi_hat.len() != gain.rho() {
        return Err(Error::invalid(format!(
            "state estimate has {} entries, gain has {}",
            xi_hat.len(),
            gain.rho()
        )));
    }
    Ok((-alpha_hat + gain.dot(xi_hat)) / beta_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    pub length_l: usize,
    pub amplitude: f64,
    pub seed: u64,
}

impl ExcitationConfig {
    /// Independent generator for the excitation stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Number of excitation steps for relative degree `rho`.
    pub fn batch_len(&self, rho: usize) -> usize {
        self.length_l + rho + 1
    }

    /// The whole excitation batch for relative degree `rho`.
    pub fn batch(&self, rho: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..self.batch_len(rho))
            .map(|k| excitation_input(self, k, &mut rng))
            .collect()
    }
}

/// One excitation sample: `amplitude` times a standard normal draw. Index
/// `k` is carried for logging only; the draw order defines the sequence.
pub fn excitation_input<R: Rng + ?Sized>(cfg: &ExcitationConfig, _k: usize, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    cfg.amplitude * z
}
