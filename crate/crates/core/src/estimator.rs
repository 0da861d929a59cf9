//! Two-part data-driven estimator.
//!
//! 1. `beta` is identified once from an excitation batch: stacked Hankel
//!    matrices of outputs and inputs, `Z0`, and their one-step shift, `Z1`,
//!    give the data-based system representation `Z1 * pinv(Z0)`. Its entry
//!    coupling the newest input to the next output equals `C B beta`.
//! 2. At every later step the extended state, including `alpha` as the last
//!    component, is reconstructed from the last `m` outputs and `m - 1`
//!    inputs by inverting the extended model backwards in time.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::{
    build_hankel, check_pe_with_tol, numeric_rank, pinv, Matrix, SignalWindow, DEFAULT_RANK_TOL,
};
use crate::plant::ExtendedDiscreteModel;

#[derive(Debug, Clone, PartialEq)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    /// Full data-based representation `Z1 * pinv(Z0)`, kept for diagnostics.
    pub a_cal: Matrix,
    pub rank_z0: usize,
}

/// Output of one reconstruction step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedStateEstimate {
    pub xi_hat: Vec<f64>,
    pub alpha_hat: f64,
    pub k: i64,
}

impl ExtendedStateEstimate {
    /// `xi_hat ++ [alpha_hat]`.
    pub fn extended(&self) -> Vec<f64> {
        let mut v = self.xi_hat.clone();
        v.push(self.alpha_hat);
        v
    }
}

/// Number of samples each stream must supply for a batch of width `l`.
pub fn batch_len(rho: usize, l: usize) -> usize {
    l + rho + 1
}

/// Builds `Z0` and its one-step shift `Z1`, each `(2 rho + 2) x l`: a depth
/// `rho + 1` Hankel of `y` stacked over one of `u`.
pub fn build_z_matrices(
    y: &SignalWindow,
    u: &SignalWindow,
    rho: usize,
    l: usize,
) -> Result<(Matrix, Matrix)> {
    if rho == 0 {
        return Err(Error::invalid("relative degree must be >= 1"));
    }
    if l < 2 * rho + 2 {
        return Err(Error::invalid(format!(
            "batch width l = {l} must be >= 2 rho + 2 = {}",
            2 * rho + 2
        )));
    }
    if y.dim() != 1 || u.dim() != 1 {
        return Err(Error::invalid(
            "only scalar input and output streams are supported",
        ));
    }
    let need = batch_len(rho, l);
    if y.len() < need || u.len() < need {
        return Err(Error::invalid(format!(
            "need {need} samples per stream, got y: {}, u: {}",
            y.len(),
            u.len()
        )));
    }
    let depth = rho + 1;
    let stack = |offset: usize| -> Result<Matrix> {
        let hy = build_hankel(&y.slice(offset, l + rho)?, depth)?;
        let hu = build_hankel(&u.slice(offset, l + rho)?, depth)?;
        let mut z = Matrix::zeros(2 * depth, l);
        z.view_mut((0, 0), (depth, l)).copy_from(&hy);
        z.view_mut((depth, 0), (depth, l)).copy_from(&hu);
        Ok(z)
    };
    Ok((stack(0)?, stack(1)?))
}

pub fn estimate_beta(
    z0: &Matrix,
    z1: &Matrix,
    rho: usize,
    sampling_time: f64,
) -> Result<BetaEstimate> {
    estimate_beta_with_tol(z0, z1, rho, sampling_time, DEFAULT_RANK_TOL)
}

/// Reads `beta` off `Z1 * pinv(Z0)` after checking that `Z0` has full row
/// rank `2 rho + 2`.
pub fn estimate_beta_with_tol(
    z0: &Matrix,
    z1: &Matrix,
    rho: usize,
    sampling_time: f64,
    rank_tol: f64,
) -> Result<BetaEstimate> {
    let rows = 2 * rho + 2;
    if z0.nrows() != rows || z1.shape() != z0.shape() {
        return Err(Error::invalid(format!(
            "Z0 {:?} and Z1 {:?} must both have {rows} rows",
            z0.shape(),
            z1.shape()
        )));
    }
    if sampling_time.is_nan() || sampling_time <= 0.0 {
        return Err(Error::invalid("sampling time must be positive"));
    }
    // Output rows of Z0 are nearly equal for small T. Row-equivalent scaled
    // differences keep the exact rank but lift sigma_min well above round-off.
    let scale_rows = difference_scaling(rho, sampling_time);
    let scaled = &scale_rows * z0;
    let rank_z0 = numeric_rank(&scaled, rank_tol)?;
    if rank_z0 != rows {
        return Err(Error::PeViolation {
            achieved: rank_z0,
            required: rows,
        });
    }
    // Z0 has full row rank, so pinv(Z0) = pinv(S Z0) S.
    let a_cal = z1 * pinv(&scaled) * scale_rows;
    // last output row against last input column
    let entry = a_cal[(rho, 2 * rho + 1)];
    let scale: f64 = (1..=rho).map(|i| i as f64).product::<f64>() / sampling_time.powi(rho as i32);
    let beta_hat = entry * scale;
    if !beta_hat.is_finite() || beta_hat == 0.0 {
        return Err(Error::PeViolation {
            achieved: rank_z0,
            required: rows,
        });
    }
    Ok(BetaEstimate {
        beta_hat,
        a_cal,
        rank_z0,
    })
}

/// Block-diagonal row operator: the output block becomes forward differences
/// `Delta^i y(j) / T^i`, the input block is left unchanged. Invertible for
/// every `T > 0`.
pub(crate) fn difference_scaling(rho: usize, sampling_time: f64) -> Matrix {
    let depth = rho + 1;
    let mut s = Matrix::identity(2 * depth, 2 * depth);
    for i in 0..depth {
        let scale = sampling_time.powi(-(i as i32));
        let mut binom = 1.0;
        for j in 0..=i {
            // Delta^i y(0) = sum_j (-1)^(i-j) C(i, j) y(j)
            let sign = if (i - j) % 2 == 0 { 1.0 } else { -1.0 };
            s[(i, j)] = sign * binom * scale;
            binom = binom * (i - j) as f64 / (j + 1) as f64;
        }
    }
    s
}

/// Full identification from raw streams: excitation check on `u` (when the
/// batch is long enough to judge order `2 rho + 2`), then the rank-gated
/// estimate.
pub fn identify_beta(
    y: &SignalWindow,
    u: &SignalWindow,
    rho: usize,
    l: usize,
    sampling_time: f64,
    rank_tol: f64,
) -> Result<BetaEstimate> {
    let order = 2 * rho + 2;
    let u_batch = u.slice(0, batch_len(rho, l).min(u.len()))?;
    if u_batch.len() >= 2 * order - 1 && !check_pe_with_tol(&u_batch, order, rank_tol)? {
        let h = build_hankel(&u_batch, order)?;
        return Err(Error::PeViolation {
            achieved: numeric_rank(&h, rank_tol)?,
            required: order,
        });
    }
    let (z0, z1) = build_z_matrices(y, u, rho, l)?;
    estimate_beta_with_tol(&z0, &z1, rho, sampling_time, rank_tol)
}

/// Observability stack `O` (rows `C Abar^-j`, `j = 0..m-1`) and the input
/// map `M` with entries `C Abar^-(i-j+1) B` for `1 <= j <= i`.
pub fn build_reconstruction_matrices(
    model: &ExtendedDiscreteModel,
    m: usize,
) -> Result<(Matrix, Matrix)> {
    let n = model.rho + 1;
    if m < n {
        return Err(Error::invalid(format!(
            "window m = {m} must be >= rho + 1 = {n}"
        )));
    }
    reconstruction_matrices_unchecked(model, m)
}

fn reconstruction_matrices_unchecked(
    model: &ExtendedDiscreteModel,
    m: usize,
) -> Result<(Matrix, Matrix)> {
    let n = model.rho + 1;
    let a_inv = model.abar_inverse();
    // powers[j] = C Abar^-j
    let mut powers = Vec::with_capacity(m);
    let mut row = model.cbar.clone();
    for _ in 0..m {
        powers.push(row.clone());
        row = &row * &a_inv;
    }
    let o = Matrix::from_fn(m, n, |i, j| powers[i][(0, j)]);
    let markov: Vec<f64> = (0..m).map(|p| (&powers[p] * &model.bbar)[(0, 0)]).collect();
    let mm = Matrix::from_fn(m, m, |i, j| {
        if j >= 1 && j <= i {
            markov[i - j + 1]
        } else {
            0.0
        }
    });
    Ok((o, mm))
}

/// Rolling reconstruction window with the frozen `beta_hat`.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    model: ExtendedDiscreteModel,
    beta_hat: f64,
    o_mat: Matrix,
    m_mat: Matrix,
    o_pinv: Matrix,
    m: usize,
    /// Newest first: `y(k), y(k-1), ...`.
    window_y: VecDeque<f64>,
    /// Newest first: `u(k-1), u(k-2), ...`.
    window_u: VecDeque<f64>,
}

impl EstimatorState {
    pub fn new(model: ExtendedDiscreteModel, beta_hat: f64, m: usize) -> Result<Self> {
        if beta_hat == 0.0 || !beta_hat.is_finite() {
            return Err(Error::invalid("beta estimate must be finite and nonzero"));
        }
        let (o_mat, m_mat) = build_reconstruction_matrices(&model, m)?;
        let n = model.rho + 1;
        if numeric_rank(&o_mat, DEFAULT_RANK_TOL)? != n {
            return Err(Error::invalid(
                "observability stack lost column rank at this sampling time",
            ));
        }
        let o_pinv = pinv(&o_mat);
        Ok(EstimatorState {
            model,
            beta_hat,
            o_mat,
            m_mat,
            o_pinv,
            m,
            window_y: VecDeque::with_capacity(m),
            window_u: VecDeque::with_capacity(m),
        })
    }

    pub fn beta_hat(&self) -> f64 {
        self.beta_hat
    }

    pub fn window_len(&self) -> usize {
        self.m
    }

    pub fn model(&self) -> &ExtendedDiscreteModel {
        &self.model
    }

    pub fn o_mat(&self) -> &Matrix {
        &self.o_mat
    }

    pub fn m_mat(&self) -> &Matrix {
        &self.m_mat
    }

    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.window_y.iter().copied()
    }

    pub fn inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.window_u.iter().copied()
    }

    /// Records `y(k)` together with the input `u(k-1)` applied just before it.
    pub fn push_sample(&mut self, y: f64, u_prev: f64) {
        self.window_y.push_front(y);
        self.window_y.truncate(self.m);
        // u(k-m) would pair with y(k-m), which has left the window
        if self.window_y.len() > 1 {
            self.window_u.push_front(u_prev);
            self.window_u.truncate(self.m - 1);
        }
    }

    pub fn is_ready(&self) -> bool {
        self.window_y.len() == self.m && self.window_u.len() == self.m - 1
    }

    pub fn reconstruct(&self, k: i64) -> Result<ExtendedStateEstimate> {
        if !self.is_ready() {
            return Err(Error::NotReady {
                have: self.window_y.len(),
                need: self.m,
            });
        }
        let y = Matrix::from_iterator(self.m, 1, self.window_y.iter().copied());
        let u = Matrix::from_iterator(
            self.m,
            1,
            std::iter::once(0.0).chain(self.window_u.iter().copied()),
        );
        let rhs = y + &self.m_mat * u * self.beta_hat;
        let est = &self.o_pinv * rhs;
        let rho = self.model.rho;
        let xi_hat: Vec<f64> = est.iter().take(rho).copied().collect();
        let alpha_hat = est[rho];
        if !alpha_hat.is_finite() || xi_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::ModelEvaluation(format!(
                "non-finite reconstruction at k = {k}"
            )));
        }
        Ok(ExtendedStateEstimate {
            xi_hat,
            alpha_hat,
            k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::build_extended_model;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reconstruction_matrices_rho2_t1() {
        let model = build_extended_model(2, 1.0).unwrap();
        let (o, _) = build_reconstruction_matrices(&model, 3).unwrap();
        let expect = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.5, 1.0, -2.0, 2.0]);
        assert_abs_diff_eq!(o, expect, epsilon = 1e-14);

        // m = 2 is below the public minimum of rho + 1; the band entry still
        // equals C Abar^-1 B = T^2 / 2 - T^2
        assert!(build_reconstruction_matrices(&model, 2).is_err());
        let (_, m2) = reconstruction_matrices_unchecked(&model, 2).unwrap();
        assert_abs_diff_eq!(
            m2,
            Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -0.5]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn reconstruction_matrices_m1_is_output_row() {
        let model = build_extended_model(2, 0.3).unwrap();
        let (o, m) = reconstruction_matrices_unchecked(&model, 1).unwrap();
        assert_eq!(o, model.cbar);
        assert_eq!(m, Matrix::zeros(1, 1));
    }

    #[test]
    fn reconstruction_matrices_reject_short_window() {
        let model = build_extended_model(2, 0.3).unwrap();
        assert!(matches!(
            build_reconstruction_matrices(&model, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn m_matrix_band_structure() {
        let model = build_extended_model(3, 0.2).unwrap();
        let (_, m) = build_reconstruction_matrices(&model, 6).unwrap();
        for i in 0..6 {
            assert_eq!(m[(0, i)], 0.0);
            assert_eq!(m[(i, 0)], 0.0);
            for j in (i + 1)..6 {
                assert_eq!(m[(i, j)], 0.0);
            }
        }
        // constant along each sub-diagonal
        for d in 0..5 {
            for i in (d + 1)..6 {
                assert_eq!(m[(i, i - d)], m[(d + 1, 1)]);
            }
        }
    }

    #[test]
    fn difference_scaling_rho2() {
        let s = difference_scaling(2, 0.5);
        let top = s.view((0, 0), (3, 3)).into_owned();
        let expect = Matrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -2.0, 2.0, 0.0, 4.0, -8.0, 4.0]);
        assert_eq!(top, expect);
        assert_eq!(s.view((3, 3), (3, 3)).into_owned(), Matrix::identity(3, 3));
        assert_eq!(s[(0, 3)], 0.0);
    }

    #[test]
    fn z_matrices_shapes_and_zero_data() {
        let y = SignalWindow::scalar(&[0.0; 11], 0).unwrap();
        let u = SignalWindow::scalar(&[0.0; 11], 0).unwrap();
        let (z0, z1) = build_z_matrices(&y, &u, 2, 8).unwrap();
        assert_eq!(z0.shape(), (6, 8));
        assert_eq!(z1.shape(), (6, 8));
        assert_eq!(z0, Matrix::zeros(6, 8));
        assert!(matches!(
            estimate_beta(&z0, &z1, 2, 0.02),
            Err(Error::PeViolation {
                achieved: 0,
                required: 6
            })
        ));
    }

    #[test]
    fn z_matrices_reject_short_streams() {
        let y = SignalWindow::scalar(&[1.0; 10], 0).unwrap();
        let u = SignalWindow::scalar(&[1.0; 10], 0).unwrap();
        assert!(matches!(
            build_z_matrices(&y, &u, 2, 8),
            Err(Error::InvalidArgument(_))
        ));
        let y = SignalWindow::scalar(&[1.0; 20], 0).unwrap();
        let u = SignalWindow::scalar(&[1.0; 20], 0).unwrap();
        assert!(build_z_matrices(&y, &u, 2, 5).is_err());
    }

    #[test]
    fn z_matrix_layout() {
        let yv: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let uv: Vec<f64> = (0..11).map(|i| 100.0 + i as f64).collect();
        let y = SignalWindow::scalar(&yv, 0).unwrap();
        let u = SignalWindow::scalar(&uv, 0).unwrap();
        let (z0, z1) = build_z_matrices(&y, &u, 2, 8).unwrap();
        assert_eq!(
            z0.column(3).as_slice(),
            &[3.0, 4.0, 5.0, 103.0, 104.0, 105.0]
        );
        assert_eq!(
            z1.column(7).as_slice(),
            &[8.0, 9.0, 10.0, 108.0, 109.0, 110.0]
        );
    }

    #[test]
    fn estimator_window_fills_and_rolls() {
        let model = build_extended_model(2, 0.1).unwrap();
        let mut est = EstimatorState::new(model, 2.0, 3).unwrap();
        assert!(matches!(
            est.reconstruct(0),
            Err(Error::NotReady { have: 0, need: 3 })
        ));
        est.push_sample(1.0, 0.0);
        est.push_sample(2.0, 10.0);
        assert!(!est.is_ready());
        est.push_sample(3.0, 20.0);
        assert!(est.is_ready());
        assert_eq!(est.outputs().collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);
        assert_eq!(est.inputs().collect::<Vec<_>>(), vec![20.0, 10.0]);
        est.push_sample(4.0, 30.0);
        assert_eq!(est.outputs().collect::<Vec<_>>(), vec![4.0, 3.0, 2.0]);
        assert_eq!(est.inputs().collect::<Vec<_>>(), vec![30.0, 20.0]);
    }

    #[test]
    fn estimator_rejects_zero_beta() {
        let model = build_extended_model(2, 0.1).unwrap();
        assert!(EstimatorState::new(model, 0.0, 3).is_err());
    }

    #[test]
    fn pure_chain_gives_zero_alpha() {
        // y(k) = c0 + c1 k T + c2 (k T)^2 / 2 is a zero-input double integrator
        let t = 0.05;
        let model = build_extended_model(2, t).unwrap();
        let mut est = EstimatorState::new(model, 2.0, 4).unwrap();
        for k in 0..6 {
            let s = k as f64 * t;
            est.push_sample(0.3 - 1.1 * s + 0.0 * s * s, 0.0);
        }
        let e = est.reconstruct(5).unwrap();
        assert_abs_diff_eq!(e.alpha_hat, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.xi_hat[1], -1.1, epsilon = 1e-9);
    }
}
