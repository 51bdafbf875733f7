//! Consensus control laws and their gains.
//!
//! Three protocols share the same shape: robot `i` sums relative terms over
//! its proximity neighbors and saturates the result per axis.
//!
//! * baseline: `u_i = K Σ a_ij (x̂_j − x̂_i)` on shared estimates;
//! * weighted bearing: `u_i = (g/|N_i|) Σ w_ij (p_j − p_i)` with
//!   `w_ij = 1/(γ_ij − γ_τ)` from received signal strength;
//! * leader-follower: followers run an internal controller state `v`,
//!   `v̇ = (A + BF) v + cL Σ a_ij [C(v_i − v_j) − (y_i − y_j)]`, `u = F v`,
//!   integrated by forward Euler.
//!
//! The continuous-time pieces use `Ac = (A − I)/dt`, `Bc = B/dt`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{eigenvalues, invert, spectral_radius, Matrix, NumericsError};
use crate::plant::RobotModel;
use crate::topology::{LeaderFollowerPartition, Topology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid gain: {0}")]
    Config(String),
    #[error("LMI not satisfied by Q = I (largest eigenvalue {max_eig:e})")]
    LmiInfeasible { max_eig: f64 },
    #[error("follower gain does not stabilize A + BF (spectral radius {rho})")]
    UnstableFollowerGain { rho: f64 },
    #[error("coupling gain infeasible: L1 eigenvalue {eigenvalue} gives spectral radius {rho}")]
    CouplingInfeasible { eigenvalue: f64, rho: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Orientation of the relative terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `x_j − x_i`: neighbors attract.
    #[default]
    Attractive,
    /// `x_i − x_j`, as the laws are usually printed. Repulsive for a single
    /// integrator.
    Literal,
}

impl SignConvention {
    fn factor(self) -> f64 {
        match self {
            SignConvention::Attractive => 1.0,
            SignConvention::Literal => -1.0,
        }
    }
}

/// Prefactor of the weighted-bearing sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BearingNormalization {
    /// `1/|N_i|`.
    #[default]
    Neighbors,
    /// `1/N` over the whole team.
    Team,
}

/// Scalar gain settings, as they appear in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    /// Baseline gain, `K = k_p I`.
    pub k_p: f64,
    /// Follower gain, `F = −k_f Bcᵀ`.
    pub k_f: f64,
    /// Follower coupling `c`.
    pub c: f64,
    /// Scale applied to the RSS weights.
    pub bearing_gain: f64,
    /// Per-axis actuator limit (m/s).
    pub u_max: f64,
    pub sign: SignConvention,
    pub bearing_normalization: BearingNormalization,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            k_p: 1.0,
            k_f: 1.0,
            c: 1.0,
            bearing_gain: 30.0,
            u_max: 0.2,
            sign: SignConvention::Attractive,
            bearing_normalization: BearingNormalization::Neighbors,
        }
    }
}

/// Realized gains for one robot model.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k: Matrix,
    pub f: Matrix,
    pub l_obs: Matrix,
    pub q_lmi: Matrix,
    pub c: f64,
    pub bearing_gain: f64,
    pub u_max: f64,
    pub sign: SignConvention,
    pub bearing_normalization: BearingNormalization,
}

/// Log-distance path loss, `γ(d) = γ₀ − 10 n log₁₀(d/d₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssModel {
    pub gamma0: f64,
    pub d0: f64,
    pub path_exponent: f64,
    pub gamma_tau: f64,
}

impl Default for RssModel {
    fn default() -> Self {
        Self {
            gamma0: -40.0,
            d0: 1.0,
            path_exponent: 2.0,
            gamma_tau: -70.0,
        }
    }
}

impl RssModel {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(ControlError::Config(format!(
                "rss.d0 must be positive, got {}",
                self.d0
            )));
        }
        if !(self.path_exponent >= 2.0 && self.path_exponent.is_finite()) {
            return Err(ControlError::Config(format!(
                "rss.path_exponent must be at least 2, got {}",
                self.path_exponent
            )));
        }
        if !(self.gamma0.is_finite() && self.gamma_tau.is_finite()) {
            return Err(ControlError::Config("rss levels must be finite".into()));
        }
        Ok(())
    }

    /// Largest distance whose strength still exceeds `γ_τ`.
    pub fn max_range(&self) -> f64 {
        self.d0 * 10f64.powf((self.gamma0 - self.gamma_tau) / (10.0 * self.path_exponent))
    }
}

/// Received strength at distance `d`. Non-positive distances are clamped
/// to `d₀/100`.
pub fn rss(model: &RssModel, d: f64) -> f64 {
    let d = if d > 0.0 { d } else { model.d0 / 100.0 };
    model.gamma0 - 10.0 * model.path_exponent * (d / model.d0).log10()
}

/// `1/(γ − γ_τ)`, or `None` when the link is at or below the threshold.
pub fn rss_weight(model: &RssModel, d: f64) -> Option<f64> {
    let margin = rss(model, d) - model.gamma_tau;
    (margin > 0.0).then(|| 1.0 / margin)
}

/// Clamps every component to `[−u_max, u_max]`.
pub fn saturate(u: &mut [f64], u_max: f64) {
    for v in u {
        *v = v.clamp(-u_max, u_max);
    }
}

fn check_config(cfg: &GainConfig) -> Result<(), ControlError> {
    let positive = [
        ("k_p", cfg.k_p),
        ("k_f", cfg.k_f),
        ("c", cfg.c),
        ("bearing_gain", cfg.bearing_gain),
        ("u_max", cfg.u_max),
    ];
    for (name, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(ControlError::Config(format!(
                "gains.{name} must be positive, got {v}"
            )));
        }
    }
    Ok(())
}

/// Builds the gain matrices without any stability check.
pub fn gains_unchecked(m: &RobotModel, cfg: &GainConfig) -> Result<GainSet, ControlError> {
    check_config(cfg)?;
    let (_, bc) = m.continuous();
    let q_lmi = Matrix::identity(m.state_dim());
    let l_obs = (&invert(&q_lmi)? * &m.c.transpose()).scale(-1.0);
    Ok(GainSet {
        k: Matrix::identity(m.input_dim()).scale(cfg.k_p),
        f: bc.transpose().scale(-cfg.k_f),
        l_obs,
        q_lmi,
        c: cfg.c,
        bearing_gain: cfg.bearing_gain,
        u_max: cfg.u_max,
        sign: cfg.sign,
        bearing_normalization: cfg.bearing_normalization,
    })
}

/// `AcᵀQ + QAc − 2CᵀC` for the chosen `Q`.
pub fn lmi_matrix(m: &RobotModel, q: &Matrix) -> Matrix {
    let (ac, _) = m.continuous();
    let ctc = &m.c.transpose() * &m.c;
    &(&(&ac.transpose() * q) + &(q * &ac)) - &ctc.scale(2.0)
}

/// Spectral radius of the discrete `A + BF`.
pub fn follower_closed_loop_radius(m: &RobotModel, g: &GainSet) -> Result<f64, ControlError> {
    Ok(spectral_radius(&(&m.a + &(&m.b * &g.f)), 1e-13)?)
}

/// Gains for `m`, checking the LMI at `Q = I` and stability of `A + BF`.
pub fn design_gains(m: &RobotModel, cfg: &GainConfig) -> Result<GainSet, ControlError> {
    let g = gains_unchecked(m, cfg)?;
    let max_eig = eigenvalues(&lmi_matrix(m, &g.q_lmi), 1e-13)?
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_eig >= 0.0 {
        return Err(ControlError::LmiInfeasible { max_eig });
    }
    let rho = follower_closed_loop_radius(m, &g)?;
    if rho >= 1.0 {
        return Err(ControlError::UnstableFollowerGain { rho });
    }
    Ok(g)
}

fn relative<'a>(own: &'a [f64], other: &'a [f64], sign: SignConvention) -> impl Iterator<Item = f64> + 'a {
    let s = sign.factor();
    own.iter().zip(other).map(move |(a, b)| s * (b - a))
}

/// Baseline law on shared estimates.
pub fn baseline_consensus(i: usize, estimates: &[Vec<f64>], t: &Topology, g: &GainSet) -> Vec<f64> {
    let mut sum = vec![0.0; estimates[i].len()];
    for j in t.neighbors(i) {
        for (acc, d) in sum.iter_mut().zip(relative(&estimates[i], &estimates[j], g.sign)) {
            *acc += d;
        }
    }
    let mut u = g.k.mul_vec(&sum);
    saturate(&mut u, g.u_max);
    u
}

/// RSS-weighted law. `positions[j]` is robot `j`'s position as sensed by
/// robot `i`; only differences enter. Neighbors whose strength is at or
/// below `γ_τ` are skipped.
pub fn weighted_bearing(
    i: usize,
    positions: &[Vec<f64>],
    rssm: &RssModel,
    t: &Topology,
    g: &GainSet,
) -> Vec<f64> {
    let mut sum = vec![0.0; positions[i].len()];
    let mut used = 0usize;
    for j in t.neighbors(i) {
        let d = positions[i]
            .iter()
            .zip(&positions[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let Some(w) = rss_weight(rssm, d) else {
            continue;
        };
        used += 1;
        for (acc, diff) in sum.iter_mut().zip(relative(&positions[i], &positions[j], g.sign)) {
            *acc += w * diff;
        }
    }
    let denom = match g.bearing_normalization {
        BearingNormalization::Neighbors => used,
        BearingNormalization::Team => t.n(),
    };
    if used == 0 || denom == 0 {
        return vec![0.0; sum.len()];
    }
    let mut u: Vec<f64> = sum.iter().map(|s| g.bearing_gain * s / denom as f64).collect();
    saturate(&mut u, g.u_max);
    u
}

/// Controller state of a follower.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerInternalState {
    pub x_internal: Vec<f64>,
    /// Last applied input, held while the follower is isolated.
    pub last_u: Vec<f64>,
}

impl FollowerInternalState {
    pub fn new(x_internal: Vec<f64>, input_dim: usize) -> Self {
        Self {
            x_internal,
            last_u: vec![0.0; input_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerStep {
    pub state: FollowerInternalState,
    pub u: Vec<f64>,
    /// No neighbors this step; the previous input was held.
    pub stranded: bool,
}

/// One Euler step of the follower controller.
///
/// `internal[j]` is robot `j`'s controller state (zero for leaders) and
/// `relative_outputs[j]` holds `y_i − y_j` as sensed by robot `i`.
pub fn follower_control(
    fs: &FollowerInternalState,
    i: usize,
    internal: &[Vec<f64>],
    relative_outputs: &[Vec<f64>],
    t: &Topology,
    g: &GainSet,
    m: &RobotModel,
) -> FollowerStep {
    if t.degree(i) == 0 {
        return FollowerStep {
            state: fs.clone(),
            u: fs.last_u.clone(),
            stranded: true,
        };
    }
    let (ac, bc) = m.continuous();
    let v = &fs.x_internal;
    let mut coupling = vec![0.0; m.output_dim()];
    for j in t.neighbors(i) {
        let dv: Vec<f64> = v.iter().zip(&internal[j]).map(|(a, b)| a - b).collect();
        let cdv = m.c.mul_vec(&dv);
        for ((acc, c), y) in coupling.iter_mut().zip(cdv).zip(&relative_outputs[j]) {
            *acc += c - y;
        }
    }
    let drift = (&ac + &(&bc * &g.f)).mul_vec(v);
    let inject = g.l_obs.mul_vec(&coupling);
    let next: Vec<f64> = v
        .iter()
        .zip(drift.iter().zip(&inject))
        .map(|(x, (d, l))| x + m.dt * (d + g.c * l))
        .collect();
    let mut u = g.f.mul_vec(v);
    saturate(&mut u, g.u_max);
    FollowerStep {
        state: FollowerInternalState {
            x_internal: next,
            last_u: u.clone(),
        },
        u,
        stranded: false,
    }
}

/// Continuous error matrix `I_M ⊗ W1 + c L1 ⊗ W2` with
/// `W1 = [[Ac, BcF], [0, Ac + BcF]]` and `W2 = [[0, 0], [−LC, LC]]`.
pub fn error_dynamics_matrix(
    p: &LeaderFollowerPartition,
    g: &GainSet,
    m: &RobotModel,
) -> Result<Matrix, ControlError> {
    let (w1, w2) = error_blocks(g, m)?;
    let mm = p.l1.rows();
    Ok(&Matrix::identity(mm).kron(&w1) + &p.l1.scale(g.c).kron(&w2))
}

fn error_blocks(g: &GainSet, m: &RobotModel) -> Result<(Matrix, Matrix), ControlError> {
    let n = m.state_dim();
    let (ac, bc) = m.continuous();
    let bf = bc.try_mul(&g.f)?;
    let w1 = Matrix::block2(&ac, &bf, &Matrix::zeros(n, n), &(&ac + &bf))?;
    let lc = g.l_obs.try_mul(&m.c)?;
    let w2 = Matrix::block2(&Matrix::zeros(n, n), &Matrix::zeros(n, n), &lc.scale(-1.0), &lc)?;
    Ok((w1, w2))
}

/// Forward-Euler discretization `I + dt M`.
pub fn discretize(m: &Matrix, dt: f64) -> Matrix {
    &Matrix::identity(m.rows()) + &m.scale(dt)
}

/// Spectral radius of the discretized error dynamics for a partition.
///
/// Fails with the offending `L1` eigenvalue when the radius reaches one.
pub fn check_coupling(p: &LeaderFollowerPartition, g: &GainSet, m: &RobotModel) -> Result<f64, ControlError> {
    let rho = spectral_radius(&discretize(&error_dynamics_matrix(p, g, m)?, m.dt), 1e-12)?;
    if rho < 1.0 {
        return Ok(rho);
    }
    let (w1, w2) = error_blocks(g, m)?;
    let mut worst = (f64::NAN, 0.0);
    for lambda in eigenvalues(&p.l1, 1e-13)? {
        let block = &w1 + &w2.scale(g.c * lambda.re);
        let r = spectral_radius(&discretize(&block, m.dt), 1e-12)?;
        if r > worst.1 {
            worst = (lambda.re, r);
        }
    }
    Err(ControlError::CouplingInfeasible {
        eigenvalue: worst.0,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::partition;

    fn model() -> RobotModel {
        RobotModel::single_integrator(0.033, 1e-4, 1e-2).unwrap()
    }

    fn gains() -> GainSet {
        design_gains(&model(), &GainConfig::default()).unwrap()
    }

    fn line(points: &[f64]) -> Vec<Vec<f64>> {
        points.iter().map(|&x| vec![x, 0.0]).collect()
    }

    #[test]
    fn baseline_pair_is_antisymmetric() {
        let g = GainSet {
            u_max: 10.0,
            ..gains()
        };
        let t = Topology::from_edges(2, &[(0, 1)]);
        let x = line(&[0.0, 1.0]);
        assert_eq!(baseline_consensus(0, &x, &t, &g), vec![1.0, 0.0]);
        assert_eq!(baseline_consensus(1, &x, &t, &g), vec![-1.0, 0.0]);
    }

    #[test]
    fn baseline_isolated_and_equilibrium() {
        let g = gains();
        let t = Topology::from_edges(3, &[(0, 1)]);
        let x = line(&[0.0, 1.0, 5.0]);
        assert_eq!(baseline_consensus(2, &x, &t, &g), vec![0.0, 0.0]);
        let t = Topology::from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let same = vec![vec![0.3, -0.2]; 3];
        for i in 0..3 {
            assert_eq!(baseline_consensus(i, &same, &t, &g), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn literal_sign_repels() {
        let g = GainSet {
            sign: SignConvention::Literal,
            ..gains()
        };
        let t = Topology::from_edges(2, &[(0, 1)]);
        let u = baseline_consensus(0, &line(&[0.0, 0.1]), &t, &g);
        assert!(u[0] < 0.0);
    }

    #[test]
    fn saturation_bounds_each_axis() {
        let g = gains();
        let t = Topology::from_edges(2, &[(0, 1)]);
        let u = baseline_consensus(0, &[vec![0.0, 0.0], vec![3.0, -3.0]], &t, &g);
        assert_eq!(u, vec![0.2, -0.2]);
    }

    #[test]
    fn path_loss_values() {
        let m = RssModel::default();
        assert_eq!(rss(&m, 1.0), -40.0);
        assert!((rss(&m, 10.0) + 60.0).abs() < 1e-12);
        assert!(rss(&m, 0.5) > rss(&m, 0.6));
        assert_eq!(rss(&m, 0.0), rss(&m, 0.01));
        assert!((m.max_range() - 10f64.powf(1.5)).abs() < 1e-9);
    }

    #[test]
    fn weights_by_hand() {
        let m = RssModel::default();
        let w1 = rss_weight(&m, 1.0).unwrap();
        let w2 = rss_weight(&m, 2.0).unwrap();
        assert!((w1 - 1.0 / 30.0).abs() < 1e-15);
        // −40 − 20 log₁₀ 2 = −46.0206, margin 23.9794.
        assert!((w2 - 1.0 / 23.979_400_086_720_376).abs() < 1e-12);
        assert!(rss_weight(&m, 40.0).is_none());
    }

    #[test]
    fn collinear_weighted_bearing() {
        let g = GainSet {
            bearing_gain: 1.0,
            ..gains()
        };
        let t = Topology::from_edges(3, &[(0, 1), (1, 2)]);
        let u = weighted_bearing(1, &line(&[0.0, 1.0, 3.0]), &RssModel::default(), &t, &g);
        // (1/2)(−1/30 + 2/23.9794)
        let expected = 0.5 * (-1.0 / 30.0 + 2.0 / 23.979_400_086_720_376);
        assert!((u[0] - expected).abs() < 1e-12, "{u:?}");
        assert_eq!(u[1], 0.0);
    }

    #[test]
    fn weighted_bearing_normalization() {
        let mut g = gains();
        g.bearing_gain = 1.0;
        let t = Topology::from_edges(4, &[(0, 1)]);
        let x = line(&[0.0, 1.0, 5.0, 9.0]);
        let rssm = RssModel::default();
        let own = weighted_bearing(0, &x, &rssm, &t, &g);
        g.bearing_normalization = BearingNormalization::Team;
        let team = weighted_bearing(0, &x, &rssm, &t, &g);
        assert!((own[0] - 4.0 * team[0]).abs() < 1e-15);
        assert_eq!(weighted_bearing(2, &x, &rssm, &t, &g), vec![0.0, 0.0]);
    }

    #[test]
    fn lmi_and_follower_gain() {
        let m = model();
        let g = gains();
        assert_eq!(lmi_matrix(&m, &g.q_lmi), Matrix::identity(2).scale(-2.0));
        assert_eq!(g.l_obs, Matrix::identity(2).scale(-1.0));
        let rho = follower_closed_loop_radius(&m, &g).unwrap();
        assert!((rho - 0.967).abs() < 1e-12);
    }

    #[test]
    fn unstable_follower_gain_rejected() {
        let cfg = GainConfig {
            k_f: 70.0,
            ..Default::default()
        };
        assert!(matches!(
            design_gains(&model(), &cfg),
            Err(ControlError::UnstableFollowerGain { .. })
        ));
        assert!(design_gains(
            &model(),
            &GainConfig {
                c: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn single_follower_block_by_hand() {
        // M = 1, L1 = [λ]: [[Ac, BcF], [−cλLC, Ac + BcF + cλLC]].
        let m = model();
        let g = GainSet { c: 0.7, ..gains() };
        let t = Topology::from_edges(3, &[(0, 1), (0, 2)]);
        let p = partition(&t, &[0]).unwrap();
        assert_eq!(p.l1, Matrix::scalar(2.0));
        let e = error_dynamics_matrix(&p, &g, &m).unwrap();
        let cl = 0.7 * 2.0;
        let i2 = Matrix::identity(2);
        let expected = Matrix::block2(
            &Matrix::zeros(2, 2),
            &i2.scale(-1.0),
            &i2.scale(cl),
            &i2.scale(-1.0 - cl),
        )
        .unwrap();
        assert!(e.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn decoupled_error_is_block_triangular() {
        let m = model();
        let g = GainSet { c: 0.0, ..gains() };
        let t = Topology::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let p = partition(&t, &[0, 1]).unwrap();
        let e = error_dynamics_matrix(&p, &g, &m).unwrap();
        assert_eq!(e.rows(), 8);
        for r in 0..8 {
            for c in 0..8 {
                let same_robot = r / 4 == c / 4;
                let lower_left = (r % 4) >= 2 && (c % 4) < 2;
                if !same_robot || lower_left {
                    assert_eq!(e[(r, c)], 0.0, "({r}, {c})");
                }
            }
        }
    }

    #[test]
    fn path_graph_coupling_is_stable() {
        // Followers 0, 1 on the path 0–1–2 with leader 2.
        let m = model();
        let g = gains();
        let t = Topology::from_edges(3, &[(0, 1), (1, 2)]);
        let p = partition(&t, &[0, 1]).unwrap();
        let rho = check_coupling(&p, &g, &m).unwrap();
        assert!(rho < 1.0);
        let eigs = eigenvalues(&error_dynamics_matrix(&p, &g, &m).unwrap(), 1e-13).unwrap();
        assert!(eigs.iter().all(|e| e.re < 0.0));
    }

    #[test]
    fn oversized_coupling_is_reported() {
        let m = model();
        let g = GainSet { c: 100.0, ..gains() };
        let t = Topology::from_edges(2, &[(0, 1)]);
        let p = partition(&t, &[0]).unwrap();
        match check_coupling(&p, &g, &m) {
            Err(ControlError::CouplingInfeasible { eigenvalue, rho }) => {
                assert!((eigenvalue - 1.0).abs() < 1e-9);
                assert!(rho > 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn follower_without_coupling_only_stabilizes() {
        let m = model();
        let g = GainSet { c: 0.0, ..gains() };
        let t = Topology::from_edges(2, &[(0, 1)]);
        let fs = FollowerInternalState::new(vec![0.5, -0.5], 2);
        let internal = vec![vec![0.5, -0.5], vec![9.0, 9.0]];
        let rel = vec![vec![0.0; 2], vec![4.0, 4.0]];
        let step = follower_control(&fs, 0, &internal, &rel, &t, &g, &m);
        assert!((step.state.x_internal[0] - 0.5 * 0.967).abs() < 1e-15);
        assert!((step.u[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn isolated_follower_holds_input() {
        let m = model();
        let g = gains();
        let t = Topology::from_edges(2, &[]);
        let mut fs = FollowerInternalState::new(vec![0.1, 0.1], 2);
        fs.last_u = vec![0.05, 0.0];
        let step = follower_control(
            &fs,
            0,
            &[vec![0.0; 2], vec![0.0; 2]],
            &[vec![0.0; 2], vec![0.0; 2]],
            &t,
            &g,
            &m,
        );
        assert!(step.stranded);
        assert_eq!(step.u, vec![0.05, 0.0]);
        assert_eq!(step.state, fs);
    }

    #[test]
    fn follower_reaches_static_leader() {
        let m = model();
        let g = gains();
        let t = Topology::from_edges(2, &[(0, 1)]);
        let leader = [0.4f64, -0.1];
        let mut x = [0.0f64, 0.3];
        let mut fs = FollowerInternalState::new(vec![0.0, 0.0], 2);
        let zero = vec![0.0, 0.0];
        let mut steps = 0;
        while ((x[0] - leader[0]).powi(2) + (x[1] - leader[1]).powi(2)).sqrt() >= 1e-3 {
            let rel = vec![zero.clone(), vec![x[0] - leader[0], x[1] - leader[1]]];
            let step = follower_control(&fs, 0, &[fs.x_internal.clone(), zero.clone()], &rel, &t, &g, &m);
            x[0] += m.dt * step.u[0];
            x[1] += m.dt * step.u[1];
            fs = step.state;
            steps += 1;
            assert!(steps < 5000, "no convergence");
        }
    }
}
