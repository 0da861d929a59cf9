//! Dense numerical kernels: Hankel matrices, numeric rank, pseudo-inverse
//! and a fixed-step RK4 integrator with a zero-order-hold input.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense real matrix. Problem sizes here are at most a few dozen rows.
pub type Matrix = DMatrix<f64>;

/// Relative singular-value threshold used when judging rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// A run of consecutive vector samples starting at time index `start_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    samples: Vec<Vec<f64>>,
    dim: usize,
    start_index: i64,
}

impl SignalWindow {
    pub fn new(samples: Vec<Vec<f64>>, start_index: i64) -> Result<Self> {
        let dim = samples.first().map_or(1, Vec::len);
        if dim == 0 {
            return Err(Error::invalid("signal samples must have dimension >= 1"));
        }
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("signal samples must share one dimension"));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("signal samples must be finite"));
        }
        Ok(SignalWindow {
            samples,
            dim,
            start_index,
        })
    }

    /// Scalar signal convenience constructor.
    pub fn scalar(values: &[f64], start_index: i64) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect(), start_index)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Sub-window of `len` samples beginning `offset` samples in.
    pub fn slice(&self, offset: usize, len: usize) -> Result<SignalWindow> {
        if offset + len > self.samples.len() {
            return Err(Error::invalid(format!(
                "slice {offset}..{} exceeds signal length {}",
                offset + len,
                self.samples.len()
            )));
        }
        Ok(SignalWindow {
            samples: self.samples[offset..offset + len].to_vec(),
            dim: self.dim,
            start_index: self.start_index + offset as i64,
        })
    }
}

/// Block Hankel matrix with `depth` block rows; column `j` stacks samples
/// `j .. j + depth - 1`.
pub fn build_hankel(signal: &SignalWindow, depth: usize) -> Result<Matrix> {
    if depth == 0 {
        return Err(Error::invalid("Hankel depth must be >= 1"));
    }
    if signal.len() < depth {
        return Err(Error::invalid(format!(
            "signal of length {} is shorter than Hankel depth {depth}",
            signal.len()
        )));
    }
    let n = signal.dim();
    let cols = signal.len() - depth + 1;
    Ok(Matrix::from_fn(n * depth, cols, |r, c| {
        signal.samples[c + r / n][r % n]
    }))
}

fn singular_values(m: &Matrix) -> Vec<f64> {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Number of singular values above `tol * sigma_max`.
pub fn numeric_rank(m: &Matrix, tol: f64) -> Result<usize> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::invalid("rank of an empty matrix"));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("rank tolerance must be positive"));
    }
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}

/// Persistency of excitation of order `order`: the depth-`order` Hankel
/// matrix has full row rank.
pub fn check_pe(signal: &SignalWindow, order: usize) -> Result<bool> {
    check_pe_with_tol(signal, order, DEFAULT_RANK_TOL)
}

pub fn check_pe_with_tol(signal: &SignalWindow, order: usize, tol: f64) -> Result<bool> {
    if order == 0 {
        return Err(Error::invalid("excitation order must be >= 1"));
    }
    let n = signal.dim();
    let min_len = (n + 1) * order - 1;
    if signal.len() < min_len {
        return Err(Error::invalid(format!(
            "signal of length {} too short for excitation order {order} (need {min_len})",
            signal.len()
        )));
    }
    let h = build_hankel(signal, order)?;
    Ok(numeric_rank(&h, tol)? == n * order)
}

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// `max(rows, cols) * eps * sigma_max` are treated as zero.
pub fn pinv(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * smax;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut out = Matrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += v_t.row(i).transpose() * u.column(i).transpose() * (1.0 / s);
        }
    }
    out
}

/// Classical RK4 over `dt`, split into `substeps` equal steps, with the
/// input `u` held constant. `deriv(x, u, t, out)` writes dx/dt into `out`.
pub fn rk4_hold_step<F>(
    deriv: F,
    state: &[f64],
    u: f64,
    t0: f64,
    dt: f64,
    substeps: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64, f64, &mut [f64]),
{
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::invalid(format!(
            "step duration must be positive, got {dt}"
        )));
    }
    if substeps == 0 {
        return Err(Error::invalid("substeps must be >= 1"));
    }
    let n = state.len();
    let h = dt / substeps as f64;
    let mut x = state.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    for step in 0..substeps {
        let t = t0 + step as f64 * h;
        deriv(&x, u, t, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, u, t + 0.5 * h, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, u, t + 0.5 * h, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        deriv(&tmp, u, t + h, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged {
                time: t + h,
                state: x,
            });
        }
    }
    Ok(x)
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("slope fit needs at least two paired points"));
    }
    if x.iter().chain(y).any(|&v| !v.is_finite() || v <= 0.0) {
        return Err(Error::invalid("log-log fit needs positive finite values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs distinct abscissae"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(v: &[f64]) -> SignalWindow {
        SignalWindow::scalar(v, 0).unwrap()
    }

    #[test]
    fn hankel_small_example() {
        let h = build_hankel(&scalar(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(
            h,
            Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0])
        );
    }

    #[test]
    fn hankel_shape_and_vector_samples() {
        let sig =
            SignalWindow::new((0..7).map(|i| vec![i as f64, -(i as f64)]).collect(), 3).unwrap();
        let h = build_hankel(&sig, 3).unwrap();
        assert_eq!(h.shape(), (6, 5));
        // column 1 stacks samples 1, 2, 3
        assert_eq!(h.column(1).as_slice(), &[1.0, -1.0, 2.0, -2.0, 3.0, -3.0]);
    }

    #[test]
    fn hankel_rejects_short_signal() {
        assert!(matches!(
            build_hankel(&scalar(&[1.0]), 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(
            numeric_rank(&Matrix::identity(3, 3), DEFAULT_RANK_TOL).unwrap(),
            3
        );
        assert_eq!(
            numeric_rank(&Matrix::zeros(3, 4), DEFAULT_RANK_TOL).unwrap(),
            0
        );
        // rows of a ramp Hankel differ by the constant row [1, 1, 1, 1]
        let ramp = build_hankel(&scalar(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), 3).unwrap();
        assert_eq!(numeric_rank(&ramp, DEFAULT_RANK_TOL).unwrap(), 2);
        let constant = build_hankel(&scalar(&[3.0; 4]), 2).unwrap();
        assert_eq!(numeric_rank(&constant, DEFAULT_RANK_TOL).unwrap(), 1);
    }

    #[test]
    fn rank_rejects_empty() {
        assert!(numeric_rank(&Matrix::zeros(0, 0), DEFAULT_RANK_TOL).is_err());
        assert!(numeric_rank(&Matrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn pe_rejects_degenerate_signals() {
        assert!(!check_pe(&scalar(&[0.0; 15]), 6).unwrap());
        assert!(!check_pe(&scalar(&[1.5; 4]), 2).unwrap());
        // (n + 1) G - 1 = 11 samples needed for G = 6
        assert!(matches!(
            check_pe(&scalar(&[1.0; 10]), 6),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn pinv_examples() {
        assert_eq!(pinv(&Matrix::identity(3, 3)), Matrix::identity(3, 3));
        let p = pinv(&Matrix::from_row_slice(2, 1, &[1.0, 1.0]));
        assert_abs_diff_eq!(
            p,
            Matrix::from_row_slice(1, 2, &[0.5, 0.5]),
            epsilon = 1e-15
        );
        assert_eq!(pinv(&Matrix::zeros(2, 3)), Matrix::zeros(3, 2));
    }

    #[test]
    fn pinv_near_singular_stays_finite() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-17]);
        assert!(pinv(&m).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rk4_constant_field() {
        let x = rk4_hold_step(|_, _, _, out| out.fill(0.0), &[3.5], 1.0, 0.0, 0.1, 4).unwrap();
        assert_eq!(x, vec![3.5]);
    }

    #[test]
    fn rk4_exponential_local_error() {
        let x0 = 2.0;
        let x = rk4_hold_step(|x, _, _, out| out[0] = -x[0], &[x0], 0.0, 0.0, 0.1, 1).unwrap();
        let err = (x[0] - (-0.1f64).exp() * x0).abs();
        assert!(err <= 0.1f64.powi(5) / 120.0 * x0, "err = {err}");
    }

    #[test]
    fn rk4_double_integrator_is_exact() {
        let (p0, v0, u, t) = (0.3, -1.2, 2.5, 0.7);
        let x = rk4_hold_step(
            |x, u, _, out| {
                out[0] = x[1];
                out[1] = u;
            },
            &[p0, v0],
            u,
            0.0,
            t,
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(x[0], p0 + v0 * t + 0.5 * u * t * t, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], v0 + u * t, epsilon = 1e-14);
    }

    #[test]
    fn rk4_reports_divergence_time() {
        let err = rk4_hold_step(
            |x, _, _, out| out[0] = x[0] * x[0],
            &[1.0],
            0.0,
            0.0,
            2.0,
            200,
        )
        .unwrap_err();
        match err {
            Error::IntegrationDiverged { time, .. } => assert!(time > 0.9 && time <= 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rk4_rejects_bad_arguments() {
        let f = |_: &[f64], _: f64, _: f64, out: &mut [f64]| out.fill(0.0);
        assert!(rk4_hold_step(f, &[1.0], 0.0, 0.0, 0.0, 1).is_err());
        assert!(rk4_hold_step(f, &[1.0], 0.0, 0.0, 0.1, 0).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.2, 0.4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert_abs_diff_eq!(loglog_slope(&x, &y).unwrap(), 2.0, epsilon = 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }
}
