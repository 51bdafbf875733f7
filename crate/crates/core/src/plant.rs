//! Robot dynamics, sensing, and the attacked measurement channel.
//!
//! Every robot is the same discrete-time LTI system
//! `x⁺ = A x + B u + w`, `y = C x + v` with Gaussian `w`, `v`. The channel
//! between a robot's sensor and everything downstream of it (its own
//! controller, its neighbors) can be corrupted by
//!
//! ```text
//! yᵅ_k = (1 − p_k) y_k + p_k y_{k−1} + α_k
//! ```
//!
//! where a deception attack sets a constant `α ≠ 0` with `p ≡ 0` and a
//! denial-of-service attack sets `α ≡ 0` with Bernoulli `p_k`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{cholesky_psd, Matrix, NumericsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("state diverged at {what}: {values:?}")]
    StateDiverged { what: &'static str, values: Vec<f64> },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Identical model shared by every robot in a team.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub qw: Matrix,
    pub rv: Matrix,
    pub dt: f64,
    qw_chol: Matrix,
    rv_chol: Matrix,
}

/// Default process noise variance per axis.
pub const DEFAULT_QW: f64 = 1e-4;
/// Default measurement noise variance per axis.
pub const DEFAULT_RV: f64 = 1e-2;
/// Default control period, seconds.
pub const DEFAULT_DT: f64 = 0.033;

impl RobotModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, qw: Matrix, rv: Matrix, dt: f64) -> Result<Self, PlantError> {
        let n = a.rows();
        let shape_ok = a.is_square()
            && b.rows() == n
            && c.cols() == n
            && qw.rows() == n
            && qw.cols() == n
            && rv.rows() == c.rows()
            && rv.cols() == c.rows();
        if !shape_ok {
            return Err(PlantError::InvalidModel(format!(
                "A {}x{}, B {}x{}, C {}x{}, Qw {}x{}, Rv {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols(),
                c.rows(),
                c.cols(),
                qw.rows(),
                qw.cols(),
                rv.rows(),
                rv.cols()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PlantError::InvalidModel(format!("dt must be positive, got {dt}")));
        }
        if qw.max_abs_diff(&qw.transpose()) > 1e-12 || rv.max_abs_diff(&rv.transpose()) > 1e-12 {
            return Err(PlantError::InvalidModel(
                "noise covariances must be symmetric".into(),
            ));
        }
        let qw_chol = cholesky_psd(&qw)?;
        let rv_chol = cholesky_psd(&rv)?;
        Ok(Self {
            a,
            b,
            c,
            qw,
            rv,
            dt,
            qw_chol,
            rv_chol,
        })
    }

    /// Planar single integrator: `A = I₂`, `B = dt·I₂`, `C = I₂`, diagonal
    /// noise with the given per-axis variances.
    pub fn single_integrator(dt: f64, qw: f64, rv: f64) -> Result<Self, PlantError> {
        let i2 = Matrix::identity(2);
        Self::new(
            i2.clone(),
            i2.scale(dt),
            i2.clone(),
            i2.scale(qw),
            i2.scale(rv),
            dt,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    /// Continuous-time counterparts `((A − I)/dt, B/dt)` used where a law is
    /// stated in continuous time and realized by forward Euler.
    pub fn continuous(&self) -> (Matrix, Matrix) {
        let n = self.state_dim();
        let ac = (&self.a - &Matrix::identity(n)).scale(1.0 / self.dt);
        let bc = self.b.scale(1.0 / self.dt);
        (ac, bc)
    }

    /// Sample from `𝒩(0, Qw)`.
    pub fn process_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        gaussian(&self.qw_chol, rng)
    }

    /// Sample from `𝒩(0, Rv)`.
    pub fn measurement_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        gaussian(&self.rv_chol, rng)
    }
}

fn gaussian<R: Rng + ?Sized>(chol: &Matrix, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..chol.cols()).map(|_| StandardNormal.sample(rng)).collect();
    chol.mul_vec(&z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub x: Vec<f64>,
    /// Previous noisy measurement `y_{k−1}` from the robot's own sensor.
    pub last_y: Vec<f64>,
}

impl RobotState {
    /// `last_y` starts at the noiseless `C x₀`.
    pub fn new(m: &RobotModel, x0: Vec<f64>) -> Self {
        let last_y = m.c.mul_vec(&x0);
        Self { x: x0, last_y }
    }
}

/// `x⁺ = A x + B u + w`, `w ~ 𝒩(0, Qw)`.
pub fn step_dynamics<R: Rng + ?Sized>(
    m: &RobotModel,
    s: &RobotState,
    u: &[f64],
    rng: &mut R,
) -> Result<RobotState, PlantError> {
    let ax = m.a.mul_vec(&s.x);
    let bu = m.b.mul_vec(u);
    let w = m.process_noise(rng);
    let x: Vec<f64> = ax.iter().zip(&bu).zip(&w).map(|((a, b), w)| a + b + w).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::StateDiverged {
            what: "dynamics",
            values: x,
        });
    }
    Ok(RobotState {
        x,
        last_y: s.last_y.clone(),
    })
}

/// `y = C x + v`, `v ~ 𝒩(0, Rv)`.
pub fn measure<R: Rng + ?Sized>(m: &RobotModel, s: &RobotState, rng: &mut R) -> Result<Vec<f64>, PlantError> {
    let v = m.measurement_noise(rng);
    let y: Vec<f64> = m.c.mul_vec(&s.x).iter().zip(&v).map(|(a, b)| a + b).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::StateDiverged {
            what: "measurement",
            values: y,
        });
    }
    Ok(y)
}

/// Attack family and its parameters. Exactly one family per spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackKind {
    /// Additive bias. Each axis of `α` gets a magnitude uniform in
    /// `alpha_bounds` and a uniformly random sign, unless `alpha` pins it.
    Deception {
        alpha_bounds: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<Vec<f64>>,
    },
    /// Bernoulli hold of the previously delivered measurement.
    Dos { delay_prob: f64 },
}

impl AttackKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::Deception { .. } => "deception",
            AttackKind::Dos { .. } => "dos",
        }
    }
}

/// Attack specification with its injection step resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub targets: Vec<usize>,
    pub start_step: u64,
}

impl AttackSpec {
    /// Draws the time-invariant per-target bias (deception only).
    pub fn realize<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> RealizedAttack {
        let alpha = match &self.kind {
            AttackKind::Deception { alpha: Some(a), .. } => vec![a.clone(); self.targets.len()],
            AttackKind::Deception {
                alpha_bounds: [lo, hi],
                alpha: None,
            } => self
                .targets
                .iter()
                .map(|_| {
                    (0..dim)
                        .map(|_| {
                            let mag = if hi > lo { rng.random_range(*lo..=*hi) } else { *lo };
                            if rng.random_bool(0.5) {
                                mag
                            } else {
                                -mag
                            }
                        })
                        .collect()
                })
                .collect(),
            AttackKind::Dos { .. } => Vec::new(),
        };
        RealizedAttack {
            spec: self.clone(),
            alpha,
        }
    }
}

/// An [`AttackSpec`] with its random bias drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedAttack {
    pub spec: AttackSpec,
    /// Per-target bias, aligned with `spec.targets`. Empty for DoS.
    pub alpha: Vec<Vec<f64>>,
}

impl RealizedAttack {
    pub fn alpha_for(&self, robot: usize) -> Option<&[f64]> {
        let pos = self.spec.targets.iter().position(|&t| t == robot)?;
        self.alpha.get(pos).map(Vec::as_slice)
    }

    pub fn targets_robot(&self, robot: usize) -> bool {
        self.spec.targets.contains(&robot)
    }

    pub fn active(&self, robot: usize, k: u64) -> bool {
        k >= self.spec.start_step && self.targets_robot(robot)
    }
}

/// Passes `y_k` through the attack channel.
///
/// `y_prev` is the measurement delivered on the previous step; a DoS hold
/// re-delivers it, so consecutive holds replay the same stale value. The
/// Bernoulli draw for `p_k` only happens while the attack is active on this
/// robot.
pub fn attack_channel<R: Rng + ?Sized>(
    y: &[f64],
    y_prev: &[f64],
    k: u64,
    attack: Option<&RealizedAttack>,
    robot: usize,
    rng: &mut R,
) -> Vec<f64> {
    let Some(attack) = attack else {
        return y.to_vec();
    };
    if !attack.active(robot, k) {
        return y.to_vec();
    }
    match &attack.spec.kind {
        AttackKind::Deception { .. } => {
            let alpha = attack.alpha_for(robot).expect("bias drawn for every target");
            y.iter().zip(alpha).map(|(a, b)| a + b).collect()
        }
        AttackKind::Dos { delay_prob } => {
            if rng.random_bool(delay_prob.clamp(0.0, 1.0)) {
                y_prev.to_vec()
            } else {
                y.to_vec()
            }
        }
    }
}
