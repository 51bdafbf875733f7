//! The per-step simulation loop.
//!
//! Each step runs, for every robot: measure, attack channel, residual,
//! detectors, then the team supervisor, control, the collision clamp,
//! estimator updates and the plant. The proximity graph is rebuilt from the
//! true positions afterwards.
//!
//! Every robot carries two estimators with the same gain. The monitor
//! advances on the robot's own sensor and scores the delivered measurement,
//! so its residual exposes a bias. The tracker is driven by the delivered
//! measurement and its estimate is what the robot shares with its
//! neighbors. Relative quantities used by the countermeasure laws come from
//! onboard relative sensing, which the attack channel does not touch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::control::{
    baseline_consensus, check_coupling, design_gains, follower_control, weighted_bearing,
    FollowerInternalState, GainSet,
};
use crate::detector::{staleness_indicator, Alarm, AttackType, DetectorState};
use crate::estimator::{steady_state_gain, EstimatorState};
use crate::plant::{
    attack_channel, measure, step_dynamics, AttackKind, RealizedAttack, RobotModel, RobotState,
};
use crate::supervisor::{
    centroid, collision_clamp, consensus_reached, max_pairwise_distance, performance_phi, step_supervisor,
    ControlMode, Protocol, Role, TeamStatus, Transition,
};
use crate::topology::{partition, Topology};

use super::config::{seconds_to_steps, ScenarioConfig};
use super::SimError;

const PLACEMENT_ATTEMPTS: usize = 10_000;
const STREAM_PLACEMENT: u64 = 0;
const STREAM_ATTACK_DRAW: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_CHANNEL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep per-step records; summaries are always produced.
    pub record: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record: true }
    }
}

/// One robot at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub time_s: f64,
    pub robot: usize,
    pub x: [f64; 2],
    pub x_hat: [f64; 2],
    pub y_recv: [f64; 2],
    pub res_norm: f64,
    pub s_dec: f64,
    pub s_dos: f64,
    pub mode: ControlMode,
    /// Alarm kind on the step it latched.
    pub alarm: Option<AttackType>,
    pub u: [f64; 2],
    pub phi: f64,
}

/// Detection outcome for one attacked robot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub robot: usize,
    pub expected: AttackType,
    pub start_step: u64,
    pub alarm: Option<Alarm>,
    /// `k_α − start_step` for an alarm at or after the start.
    pub latency_steps: Option<u64>,
}

impl DetectionRecord {
    pub fn detected(&self) -> bool {
        self.latency_steps.is_some()
    }

    pub fn correctly_classified(&self) -> bool {
        self.detected() && self.alarm.is_some_and(|a| a.kind == self.expected)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_robots: usize,
    pub steps: u64,
    pub dt: f64,
    /// Consensus held at the last simulated step.
    pub consensus: bool,
    /// First step of the final uninterrupted consensus interval.
    pub consensus_step: Option<u64>,
    /// Consensus step, pushed back to the last alarm when that came later.
    pub resilient_consensus_step: Option<u64>,
    pub final_spread: f64,
    pub alarms: Vec<Option<Alarm>>,
    pub detections: Vec<DetectionRecord>,
    /// Robots never attacked that raised an alarm.
    pub false_alarms: Vec<usize>,
    pub initially_connected: bool,
    pub connected_throughout: bool,
    /// While leader-follower was active, every follower reached a leader
    /// and the leaders were connected among themselves.
    pub interaction_rooted_throughout: bool,
    pub stranded: bool,
    /// Discrete error-dynamics spectral radius at each accepted switch.
    pub coupling_radii: Vec<f64>,
    pub coupling_failures: usize,
    pub min_pair_distance: f64,
    pub transitions: usize,
    pub failure: Option<String>,
}

impl RunSummary {
    pub fn all_detected(&self) -> bool {
        self.detections.iter().all(DetectionRecord::detected)
    }

    pub fn all_classified(&self) -> bool {
        self.detections.iter().all(DetectionRecord::correctly_classified)
    }

    pub fn consensus_time_s(&self) -> Option<f64> {
        self.resilient_consensus_step.map(|k| k as f64 * self.dt)
    }

    /// `key=value` line for logs and the CLI.
    pub fn to_line(&self) -> String {
        let opt = |v: Option<u64>| v.map_or("none".to_string(), |k| k.to_string());
        let latencies: Vec<String> = self
            .detections
            .iter()
            .map(|d| format!("{}:{}", d.robot, opt(d.latency_steps)))
            .collect();
        format!(
            "seed={} steps={} consensus={} consensus_step={} resilient_consensus_step={} \
             final_spread={:.4} latencies={} false_alarms={} connected={} stranded={} failure={}",
            self.seed,
            self.steps,
            self.consensus,
            opt(self.consensus_step),
            opt(self.resilient_consensus_step),
            self.final_spread,
            if latencies.is_empty() {
                "-".into()
            } else {
                latencies.join(",")
            },
            self.false_alarms.len(),
            self.connected_throughout,
            self.stranded,
            self.failure.as_deref().unwrap_or("none"),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
    pub transitions: Vec<Transition>,
    pub summary: RunSummary,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform placement in the arena, rejected until every pair is at least
/// `min_dist` apart and every robot has a neighbor (and, if asked, the graph
/// is connected).
pub fn place_robots<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<[f64; 2]>, SimError> {
    let [w, h] = cfg.arena;
    let n = cfg.n_robots;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
        let mut tries = 0;
        while pts.len() < n && tries < 100 * n {
            tries += 1;
            let p = [
                rng.random_range(-w / 2.0..=w / 2.0),
                rng.random_range(-h / 2.0..=h / 2.0),
            ];
            if pts
                .iter()
                .all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= cfg.min_dist)
            {
                pts.push(p);
            }
        }
        if pts.len() < n {
            continue;
        }
        let t = Topology::from_positions(&pts, cfg.sensor_range);
        if !t.isolated().is_empty() {
            continue;
        }
        if cfg.require_connected_start && !t.is_connected() {
            continue;
        }
        return Ok(pts);
    }
    Err(SimError::Placement {
        attempts: PLACEMENT_ATTEMPTS,
    })
}

fn to2(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

fn leader_subgraph(t: &Topology, followers: &[usize]) -> Topology {
    let edges: Vec<(usize, usize)> = t
        .edges()
        .into_iter()
        .filter(|(i, j)| followers.binary_search(i).is_err() && followers.binary_search(j).is_err())
        .collect();
    Topology::from_edges(t.n(), &edges)
}

struct Team {
    model: RobotModel,
    gains: GainSet,
    states: Vec<RobotState>,
    monitors: Vec<EstimatorState>,
    trackers: Vec<EstimatorState>,
    detectors: Vec<DetectorState>,
    delivered: Vec<Vec<f64>>,
    internal: Vec<FollowerInternalState>,
}

fn model_error(e: impl std::fmt::Display) -> SimError {
    SimError::Model(e.to_string())
}

/// Simulates one scenario. Same configuration, same log.
pub fn run_scenario(cfg: &ScenarioConfig, opts: RunOptions) -> Result<TrajectoryLog, SimError> {
    cfg.validate()?;
    let n = cfg.n_robots;
    let model = RobotModel::single_integrator(cfg.dt, cfg.process_noise, cfg.measurement_noise)
        .map_err(model_error)?;
    let gains = design_gains(&model, &cfg.gains).map_err(|e| SimError::Invalid {
        field: "gains".into(),
        msg: e.to_string(),
    })?;
    let (covariance, gain) = steady_state_gain(&model).map_err(model_error)?;

    let positions0 = match &cfg.initial_positions {
        Some(p) => p.clone(),
        None => place_robots(cfg, &mut rng_stream(cfg.seed, STREAM_PLACEMENT))?,
    };
    let mut attack_rng = rng_stream(cfg.seed, STREAM_ATTACK_DRAW);
    let attacks: Vec<RealizedAttack> = cfg
        .attacks
        .iter()
        .map(|a| a.to_spec(cfg.dt).realize(2, &mut attack_rng))
        .collect();
    let mut noise = rng_stream(cfg.seed, STREAM_NOISE);
    let mut channel_rng = rng_stream(cfg.seed, STREAM_CHANNEL);

    let states: Vec<RobotState> = positions0
        .iter()
        .map(|p| RobotState::new(&model, p.to_vec()))
        .collect();
    // Estimators start from one noisy look at the initial pose.
    let mut first = Vec::with_capacity(n);
    for s in &states {
        first.push(measure(&model, s, &mut noise).map_err(model_error)?);
    }
    let mut team = Team {
        monitors: first
            .iter()
            .map(|y| EstimatorState::with_gain(y.clone(), gain.clone(), covariance.clone()))
            .collect(),
        trackers: first
            .iter()
            .map(|y| EstimatorState::with_gain(y.clone(), gain.clone(), covariance.clone()))
            .collect(),
        detectors: vec![DetectorState::new(cfg.detector.clone()); n],
        delivered: first,
        internal: vec![FollowerInternalState::new(vec![0.0; 2], 2); n],
        states,
        model,
        gains,
    };

    let desired = centroid(&positions0);
    let mut positions = positions0;
    let mut topology = Topology::from_positions(&positions, cfg.sensor_range);
    let mut status = TeamStatus::new(n);
    let mut records = Vec::new();

    let last_start = attacks.iter().map(|a| a.spec.start_step).max().unwrap_or(0);
    let settle = seconds_to_steps(cfg.settle_s, cfg.dt);
    let hold = seconds_to_steps(cfg.hold_s, cfg.dt);
    let warmup = seconds_to_steps(cfg.detector_warmup_s, cfg.dt);
    let total = cfg.steps();

    let mut summary = RunSummary {
        seed: cfg.seed,
        n_robots: n,
        steps: 0,
        dt: cfg.dt,
        consensus: false,
        consensus_step: None,
        resilient_consensus_step: None,
        final_spread: 0.0,
        alarms: vec![None; n],
        detections: Vec::new(),
        false_alarms: Vec::new(),
        initially_connected: topology.is_connected(),
        connected_throughout: true,
        interaction_rooted_throughout: true,
        stranded: false,
        coupling_radii: Vec::new(),
        coupling_failures: 0,
        min_pair_distance: f64::INFINITY,
        transitions: 0,
        failure: None,
    };
    let mut consensus_since: Option<u64> = None;

    for k in 0..total {
        summary.steps = k + 1;
        let spread = max_pairwise_distance(&positions);
        summary.final_spread = spread;
        if consensus_reached(&positions, cfg.consensus_threshold) {
            consensus_since.get_or_insert(k);
        } else {
            consensus_since = None;
        }
        summary.connected_throughout &= topology.is_connected();
        summary.min_pair_distance = summary.min_pair_distance.min(min_pair(&positions));

        // Sensing, attack channel, residuals and detectors.
        let mut y = Vec::with_capacity(n);
        let mut y_recv = Vec::with_capacity(n);
        let mut res_norm = vec![0.0; n];
        let mut events: Vec<Option<AttackType>> = vec![None; n];
        for i in 0..n {
            let yi = match measure(&team.model, &team.states[i], &mut noise) {
                Ok(v) => v,
                Err(e) => {
                    summary.failure = Some(e.to_string());
                    break;
                }
            };
            let mut yr = yi.clone();
            for a in attacks.iter().filter(|a| a.targets_robot(i)) {
                yr = attack_channel(&yr, &team.delivered[i], k, Some(a), i, &mut channel_rng);
            }
            let r = team.monitors[i].residual(&team.model, &yr);
            res_norm[i] = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let stale = staleness_indicator(&yr, &team.delivered[i], team.detectors[i].params.stale_tol);
            let before = team.detectors[i].classify();
            if k >= warmup {
                team.detectors[i].cusum_update(&r, k);
                team.detectors[i].bernoulli_cusum_update(stale, k);
            }
            let after = team.detectors[i].classify();
            if before.is_none() {
                events[i] = after.map(|a| a.kind);
            }
            summary.alarms[i] = after;
            y.push(yi);
            y_recv.push(yr);
        }
        if summary.failure.is_some() {
            break;
        }

        // Supervisor.
        let previous_followers = status.followers.clone();
        let update = step_supervisor(&mut status, &summary.alarms, &topology, k);
        if update.repartitioned {
            // New followers start their controller from rest.
            for &f in &status.followers {
                if previous_followers.binary_search(&f).is_err() {
                    team.internal[f] = FollowerInternalState::new(vec![0.0; 2], 2);
                }
            }
            check_switch(&topology, &status, &team, &mut summary);
        }
        if status.leader_follower_active() {
            summary.interaction_rooted_throughout &= topology.follower_has_leader_path(&status.followers)
                && topology.leaders_connected(&status.followers);
        }

        // Control.
        let estimates: Vec<Vec<f64>> = team.trackers.iter().map(|e| e.x_hat.clone()).collect();
        let leader_graph = status
            .leader_follower_active()
            .then(|| leader_subgraph(&topology, &status.followers));
        let internal_all: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                if status.modes[j].is_follower() {
                    team.internal[j].x_internal.clone()
                } else {
                    vec![0.0; 2]
                }
            })
            .collect();
        let mut proposed = Vec::with_capacity(n);
        for i in 0..n {
            let u = match status.modes[i] {
                ControlMode::Baseline => baseline_consensus(i, &estimates, &topology, &team.gains),
                ControlMode::WeightedBearing => weighted_bearing(i, &y, &cfg.rss, &topology, &team.gains),
                ControlMode::LeaderFollower {
                    role: Role::Leader,
                    protocol,
                } => {
                    let lg = leader_graph
                        .as_ref()
                        .expect("leader graph while leader-follower is active");
                    match protocol {
                        Protocol::Baseline => baseline_consensus(i, &estimates, lg, &team.gains),
                        Protocol::WeightedBearing => weighted_bearing(i, &y, &cfg.rss, lg, &team.gains),
                    }
                }
                ControlMode::LeaderFollower {
                    role: Role::Follower, ..
                } => {
                    let rel: Vec<Vec<f64>> = y
                        .iter()
                        .map(|yj| vec![y[i][0] - yj[0], y[i][1] - yj[1]])
                        .collect();
                    let step = follower_control(
                        &team.internal[i],
                        i,
                        &internal_all,
                        &rel,
                        &topology,
                        &team.gains,
                        &team.model,
                    );
                    summary.stranded |= step.stranded;
                    team.internal[i] = step.state;
                    step.u
                }
            };
            proposed.push(to2(&u));
        }
        summary.stranded |= status.stranded;
        let applied = if cfg.collision_avoidance {
            collision_clamp(&positions, &proposed, cfg.min_dist, cfg.dt)
        } else {
            proposed
        };

        if opts.record {
            let phi = performance_phi(
                &estimates.iter().map(|e| to2(e)).collect::<Vec<_>>(),
                &positions,
                desired,
            );
            for i in 0..n {
                records.push(TrajectoryRecord {
                    step: k,
                    time_s: k as f64 * cfg.dt,
                    robot: i,
                    x: positions[i],
                    x_hat: to2(&estimates[i]),
                    y_recv: to2(&y_recv[i]),
                    res_norm: res_norm[i],
                    s_dec: team.detectors[i].s_dec,
                    s_dos: team.detectors[i].s_dos,
                    mode: status.modes[i],
                    alarm: events[i],
                    u: applied[i],
                    phi: phi[i],
                });
            }
        }

        // Estimators and plant.
        for i in 0..n {
            let u = applied[i];
            let step = team.monitors[i]
                .update(&team.model, &u, &y[i])
                .and_then(|_| team.trackers[i].update(&team.model, &u, &y_recv[i]));
            if let Err(e) = step {
                summary.failure = Some(e.to_string());
                break;
            }
            match step_dynamics(&team.model, &team.states[i], &u, &mut noise) {
                Ok(s) => team.states[i] = s,
                Err(e) => {
                    summary.failure = Some(e.to_string());
                    break;
                }
            }
            positions[i] = to2(&team.states[i].x);
        }
        team.delivered = y_recv;
        if summary.failure.is_some() {
            break;
        }
        topology = Topology::from_positions(&positions, cfg.sensor_range);

        let held = consensus_since.map_or(0, |s| k + 1 - s);
        if k >= last_start + settle && held >= hold {
            break;
        }
    }

    summary.consensus = consensus_since.is_some() && summary.failure.is_none();
    summary.consensus_step = consensus_since.filter(|_| summary.consensus);
    let last_alarm = summary.alarms.iter().flatten().map(|a| a.k_alpha).max();
    summary.resilient_consensus_step = summary.consensus_step.map(|c| last_alarm.map_or(c, |a| a.max(c)));
    summary.transitions = status.transitions.len();
    fill_detections(&attacks, &mut summary);

    Ok(TrajectoryLog {
        records,
        transitions: status.transitions,
        summary,
    })
}

/// Partition check when the follower set changes. Only partitions in which
/// every follower reaches a leader are accepted.
fn check_switch(topology: &Topology, status: &TeamStatus, team: &Team, summary: &mut RunSummary) {
    if status.followers.len() == topology.n() || !topology.follower_has_leader_path(&status.followers) {
        return;
    }
    let Ok(p) = partition(topology, &status.followers) else {
        return;
    };
    match check_coupling(&p, &team.gains, &team.model) {
        Ok(rho) => summary.coupling_radii.push(rho),
        Err(_) => summary.coupling_failures += 1,
    }
}

fn min_pair(p: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            best = best.min((p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]));
        }
    }
    best
}

fn fill_detections(attacks: &[RealizedAttack], summary: &mut RunSummary) {
    let mut attacked = vec![false; summary.n_robots];
    for a in attacks {
        let expected = match a.spec.kind {
            AttackKind::Deception { .. } => AttackType::Deception,
            AttackKind::Dos { .. } => AttackType::Dos,
        };
        for &t in &a.spec.targets {
            attacked[t] = true;
            let alarm = summary.alarms[t];
            let latency_steps = alarm
                .filter(|al| al.k_alpha >= a.spec.start_step)
                .map(|al| al.k_alpha - a.spec.start_step);
            summary.detections.push(DetectionRecord {
                robot: t,
                expected,
                start_step: a.spec.start_step,
                alarm,
                latency_steps,
            });
        }
    }
    summary.false_alarms = (0..summary.n_robots)
        .filter(|&i| !attacked[i] && summary.alarms[i].is_some())
        .collect();
}
