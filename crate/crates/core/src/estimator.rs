//! Steady-state Kalman predictor and residual generation.
//!
//! The predictor is `x̂⁺ = A x̂ + B u + L (y − C x̂)` with the innovation gain
//! `L = P Cᵀ (C P Cᵀ + R)⁻¹` fixed from the Riccati solution, so the
//! estimation error obeys `e⁺ = (A − LC) e` in the absence of noise.
//!
//! A robot can feed the update and the residual from different signals: the
//! attack monitor advances its estimate on the robot's own sensor while
//! scoring the measurement that was actually delivered, which keeps the
//! residual at `C e + α` under a constant bias instead of letting the filter
//! absorb it.

use thiserror::Error;

use crate::numerics::{invert, solve_dare, Matrix, NumericsError, DARE_MAX_ITER};
use crate::plant::RobotModel;

/// Riccati tolerance used when building estimators, relative to `‖Q‖_F`.
pub const ESTIMATOR_DARE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("estimator diverged: {0:?}")]
    Diverged(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: Vec<f64>,
    pub gain: Matrix,
    pub covariance: Matrix,
}

/// Steady-state covariance and gain for a model.
///
/// The gain only depends on the ratio of the noise covariances, so a model
/// with no noise at all gets the gain of identity-scaled covariances (and a
/// zero covariance).
pub fn steady_state_gain(m: &RobotModel) -> Result<(Matrix, Matrix), EstimatorError> {
    let noiseless = m.qw.frobenius_norm() == 0.0 && m.rv.frobenius_norm() == 0.0;
    let (qw, rv) = if noiseless {
        (Matrix::identity(m.state_dim()), Matrix::identity(m.output_dim()))
    } else {
        (m.qw.clone(), m.rv.clone())
    };
    let tol = ESTIMATOR_DARE_RTOL * qw.frobenius_norm().max(f64::MIN_POSITIVE);
    let p = solve_dare(&m.a, &m.c, &qw, &rv, tol, DARE_MAX_ITER)?;
    let ct = m.c.transpose();
    let pct = &p * &ct;
    let s = &(&m.c * &pct) + &rv;
    let gain = &pct * &invert(&s)?;
    if noiseless {
        return Ok((Matrix::zeros(p.rows(), p.cols()), gain));
    }
    Ok((p, gain))
}

pub fn make_estimator(m: &RobotModel, x0: Vec<f64>) -> Result<EstimatorState, EstimatorError> {
    let (covariance, gain) = steady_state_gain(m)?;
    Ok(EstimatorState {
        x_hat: x0,
        gain,
        covariance,
    })
}

impl EstimatorState {
    /// Estimator sharing an already computed gain.
    pub fn with_gain(x0: Vec<f64>, gain: Matrix, covariance: Matrix) -> Self {
        Self {
            x_hat: x0,
            gain,
            covariance,
        }
    }

    /// `ŷ = C x̂`.
    pub fn predicted_output(&self, m: &RobotModel) -> Vec<f64> {
        m.c.mul_vec(&self.x_hat)
    }

    /// `y − C x̂` against the current (pre-update) estimate.
    pub fn residual(&self, m: &RobotModel, y: &[f64]) -> Vec<f64> {
        self.predicted_output(m)
            .iter()
            .zip(y)
            .map(|(yh, y)| y - yh)
            .collect()
    }

    /// Advances the estimate with measurement `y`.
    pub fn update(&mut self, m: &RobotModel, u: &[f64], y: &[f64]) -> Result<(), EstimatorError> {
        let innovation = self.residual(m, y);
        let ax = m.a.mul_vec(&self.x_hat);
        let bu = m.b.mul_vec(u);
        let li = self.gain.mul_vec(&innovation);
        let next: Vec<f64> = ax.iter().zip(&bu).zip(&li).map(|((a, b), l)| a + b + l).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::Diverged(next));
        }
        self.x_hat = next;
        Ok(())
    }

    /// Single-channel step: residual of `y_received` against the current
    /// prediction, then the update with that same measurement.
    pub fn predict_update(
        &mut self,
        m: &RobotModel,
        u: &[f64],
        y_received: &[f64],
    ) -> Result<Vec<f64>, EstimatorError> {
        let r = self.residual(m, y_received);
        self.update(m, u, y_received)?;
        Ok(r)
    }

    /// Residual on `y_received`, update on `y_sensor`.
    pub fn monitor_step(
        &mut self,
        m: &RobotModel,
        u: &[f64],
        y_sensor: &[f64],
        y_received: &[f64],
    ) -> Result<Vec<f64>, EstimatorError> {
        let r = self.residual(m, y_received);
        self.update(m, u, y_sensor)?;
        Ok(r)
    }

    /// `A − L C`, the noiseless error propagation matrix.
    pub fn error_dynamics(&self, m: &RobotModel) -> Matrix {
        &m.a - &(&self.gain * &m.c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::spectral_radius;
    use crate::plant::{measure, step_dynamics, RobotState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(r: f64) -> RobotModel {
        RobotModel::new(
            Matrix::scalar(1.0),
            Matrix::scalar(0.033),
            Matrix::scalar(1.0),
            Matrix::scalar(1e-4),
            Matrix::scalar(r),
            0.033,
        )
        .unwrap()
    }

    /// Scalar DARE root and the resulting gain P / (P + r).
    fn scalar_gain_oracle(q: f64, r: f64) -> f64 {
        let p = (q + (q * q + 4.0 * q * r).sqrt()) / 2.0;
        p / (p + r)
    }

    #[test]
    fn scalar_gain() {
        let e = make_estimator(&scalar_model(1e-2), vec![0.0]).unwrap();
        let expected = scalar_gain_oracle(1e-4, 1e-2);
        assert!((expected - 0.095125).abs() < 1e-5);
        assert!((e.gain[(0, 0)] - expected).abs() < 1e-10);
    }

    #[test]
    fn gain_vanishes_with_uninformative_measurements() {
        let gains: Vec<f64> = [1e-2, 1.0, 1e2]
            .iter()
            .map(|&r| make_estimator(&scalar_model(r), vec![0.0]).unwrap().gain[(0, 0)])
            .collect();
        assert!(gains.windows(2).all(|w| w[1] < w[0]), "{gains:?}");
        assert!(gains[2] < 2e-3);
    }

    #[test]
    fn decoupled_planar_gain() {
        let m = RobotModel::single_integrator(0.033, 1e-4, 1e-2).unwrap();
        let e = make_estimator(&m, vec![0.0, 0.0]).unwrap();
        let g = scalar_gain_oracle(1e-4, 1e-2);
        assert!(e.gain.max_abs_diff(&Matrix::identity(2).scale(g)) < 1e-10);
        assert!(spectral_radius(&e.error_dynamics(&m), 1e-12).unwrap() < 1.0);
    }

    #[test]
    fn zero_innovation_is_pure_prediction() {
        let m = RobotModel::single_integrator(0.033, 1e-4, 1e-2).unwrap();
        let mut e = make_estimator(&m, vec![0.2, 0.4]).unwrap();
        let y = e.predicted_output(&m);
        let r = e.predict_update(&m, &[1.0, -1.0], &y).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        assert!((e.x_hat[0] - 0.233).abs() < 1e-15);
        assert!((e.x_hat[1] - 0.367).abs() < 1e-15);
    }

    #[test]
    fn innovation_covariance_matches_theory() {
        let m = RobotModel::single_integrator(0.033, 1e-4, 1e-2).unwrap();
        let mut e = make_estimator(&m, vec![0.0, 0.0]).unwrap();
        let mut s = RobotState::new(&m, vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 10_000;
        let mut rs = Vec::with_capacity(t);
        for _ in 0..t {
            let y = measure(&m, &s, &mut rng).unwrap();
            rs.push(e.predict_update(&m, &[0.0, 0.0], &y).unwrap()[0]);
            s = step_dynamics(&m, &s, &[0.0, 0.0], &mut rng).unwrap();
        }
        let mean = rs.iter().sum::<f64>() / t as f64;
        let var = rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
        let theory = e.covariance[(0, 0)] + 1e-2;
        assert!((var - theory).abs() < 0.2 * theory, "{var} vs {theory}");
        assert!(mean.abs() < 4.0 * var.sqrt() / (t as f64).sqrt());
    }

    #[test]
    fn monitor_residual_tracks_constant_bias() {
        // Noiseless scalar model: e⁺ = (1 − L) e and r = e + α, so the mean
        // residual converges to α from any initial error.
        let m = RobotModel::new(
            Matrix::scalar(1.0),
            Matrix::scalar(0.033),
            Matrix::scalar(1.0),
            Matrix::scalar(1e-4),
            Matrix::scalar(1e-2),
            0.033,
        )
        .unwrap();
        let mut e = make_estimator(&m, vec![0.3]).unwrap();
        let l = e.gain[(0, 0)];
        let alpha = 0.4;
        let x = 0.0;
        let mut err = x - e.x_hat[0];
        for _ in 0..200 {
            let r = e.monitor_step(&m, &[0.0], &[x], &[x + alpha]).unwrap()[0];
            assert!((r - (err + alpha)).abs() < 1e-12);
            err *= 1.0 - l;
        }
        let r = e.residual(&m, &[x + alpha])[0];
        assert!((r - alpha).abs() < 1e-6);
    }
}
