//! Switching logic from detector alarms to control protocols, plus the
//! collision clamp and the team-level metrics.
//!
//! Deception alarms are global: the first one moves every robot to the
//! weighted-bearing law. DoS alarms are local: alarmed robots become
//! followers and the rest lead. Leaders keep running the team protocol
//! (baseline or weighted bearing) among themselves, so a deception alarm
//! after the leader-follower split still reaches them. Nothing ever
//! switches back.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detector::{Alarm, AttackType};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Baseline,
    WeightedBearing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Baseline,
    WeightedBearing,
    /// `protocol` is what a leader runs among the other leaders.
    LeaderFollower {
        role: Role,
        protocol: Protocol,
    },
}

impl ControlMode {
    pub fn label(self) -> &'static str {
        use Protocol::{Baseline as B, WeightedBearing as W};
        match self {
            ControlMode::Baseline => "baseline",
            ControlMode::WeightedBearing => "weighted_bearing",
            ControlMode::LeaderFollower {
                role: Role::Leader,
                protocol: B,
            } => "leader",
            ControlMode::LeaderFollower {
                role: Role::Follower,
                protocol: B,
            } => "follower",
            ControlMode::LeaderFollower {
                role: Role::Leader,
                protocol: W,
            } => "leader_weighted",
            ControlMode::LeaderFollower {
                role: Role::Follower,
                protocol: W,
            } => "follower_weighted",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        let lf = |role, protocol| ControlMode::LeaderFollower { role, protocol };
        Some(match label {
            "baseline" => ControlMode::Baseline,
            "weighted_bearing" => ControlMode::WeightedBearing,
            "leader" => lf(Role::Leader, Protocol::Baseline),
            "follower" => lf(Role::Follower, Protocol::Baseline),
            "leader_weighted" => lf(Role::Leader, Protocol::WeightedBearing),
            "follower_weighted" => lf(Role::Follower, Protocol::WeightedBearing),
            _ => return None,
        })
    }

    /// Position in the one-way switching order.
    pub fn rank(self) -> u8 {
        match self {
            ControlMode::Baseline => 0,
            ControlMode::WeightedBearing => 1,
            ControlMode::LeaderFollower {
                protocol: Protocol::Baseline,
                ..
            } => 2,
            ControlMode::LeaderFollower {
                protocol: Protocol::WeightedBearing,
                ..
            } => 3,
        }
    }

    pub fn is_follower(self) -> bool {
        matches!(
            self,
            ControlMode::LeaderFollower {
                role: Role::Follower,
                ..
            }
        )
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub step: u64,
    pub robot: usize,
    pub from: ControlMode,
    pub to: ControlMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamStatus {
    pub modes: Vec<ControlMode>,
    /// Robots with any alarm, in alarm order.
    pub compromised: Vec<usize>,
    /// Robots with a DoS alarm, ascending.
    pub followers: Vec<usize>,
    pub team_protocol: Protocol,
    pub consensus_reached: bool,
    pub phi: Vec<f64>,
    /// Some follower has no path to a leader in the current topology.
    pub stranded: bool,
    pub transitions: Vec<Transition>,
}

impl TeamStatus {
    pub fn new(n: usize) -> Self {
        Self {
            modes: vec![ControlMode::Baseline; n],
            compromised: Vec::new(),
            followers: Vec::new(),
            team_protocol: Protocol::Baseline,
            consensus_reached: false,
            phi: vec![0.0; n],
            stranded: false,
            transitions: Vec::new(),
        }
    }

    pub fn leader_follower_active(&self) -> bool {
        !self.followers.is_empty()
    }
}

/// What a supervisor step changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SupervisorUpdate {
    /// The follower set grew; the partition must be rechecked.
    pub repartitioned: bool,
    pub any_transition: bool,
}

/// Applies this step's alarms (latched, one per robot) to the team.
pub fn step_supervisor(
    status: &mut TeamStatus,
    alarms: &[Option<Alarm>],
    t: &Topology,
    step: u64,
) -> SupervisorUpdate {
    let mut update = SupervisorUpdate::default();
    for (i, alarm) in alarms.iter().enumerate() {
        let Some(alarm) = alarm else { continue };
        if status.compromised.contains(&i) {
            continue;
        }
        status.compromised.push(i);
        match alarm.kind {
            AttackType::Deception => status.team_protocol = Protocol::WeightedBearing,
            AttackType::Dos => {
                if let Err(pos) = status.followers.binary_search(&i) {
                    status.followers.insert(pos, i);
                    update.repartitioned = true;
                }
            }
        }
    }

    for i in 0..status.modes.len() {
        let next = if status.followers.is_empty() {
            match status.team_protocol {
                Protocol::Baseline => ControlMode::Baseline,
                Protocol::WeightedBearing => ControlMode::WeightedBearing,
            }
        } else {
            let role = if status.followers.binary_search(&i).is_ok() {
                Role::Follower
            } else {
                Role::Leader
            };
            ControlMode::LeaderFollower {
                role,
                protocol: status.team_protocol,
            }
        };
        if next != status.modes[i] {
            status.transitions.push(Transition {
                step,
                robot: i,
                from: status.modes[i],
                to: next,
            });
            status.modes[i] = next;
            update.any_transition = true;
        }
    }

    status.stranded = status.leader_follower_active()
        && status.followers.len() < t.n()
        && !t.follower_has_leader_path(&status.followers);
    update
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Zeroes the approach component of both inputs for every pair whose
/// predicted distance after one step would fall below `min_dist` while
/// shrinking, repeating until nothing changes (at most `N²` passes).
pub fn collision_clamp(
    positions: &[[f64; 2]],
    proposed: &[[f64; 2]],
    min_dist: f64,
    dt: f64,
) -> Vec<[f64; 2]> {
    let n = positions.len();
    let mut u = proposed.to_vec();
    let next = |u: &[[f64; 2]], i: usize| [positions[i][0] + dt * u[i][0], positions[i][1] + dt * u[i][1]];
    for _ in 0..(n * n).max(1) {
        let mut changed = false;
        for i in 0..n {
            for j in i + 1..n {
                let now = dist(positions[i], positions[j]);
                let then = dist(next(&u, i), next(&u, j));
                if then >= min_dist || then >= now || now == 0.0 {
                    continue;
                }
                let e = [
                    (positions[j][0] - positions[i][0]) / now,
                    (positions[j][1] - positions[i][1]) / now,
                ];
                let toward_j = u[i][0] * e[0] + u[i][1] * e[1];
                if toward_j > 0.0 {
                    u[i] = [u[i][0] - toward_j * e[0], u[i][1] - toward_j * e[1]];
                    changed = true;
                }
                let toward_i = -(u[j][0] * e[0] + u[j][1] * e[1]);
                if toward_i > 0.0 {
                    u[j] = [u[j][0] + toward_i * e[0], u[j][1] + toward_i * e[1]];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    u
}

pub fn max_pairwise_distance(positions: &[[f64; 2]]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            best = best.max(dist(*a, *b));
        }
    }
    best
}

pub fn consensus_reached(positions: &[[f64; 2]], threshold: f64) -> bool {
    max_pairwise_distance(positions) <= threshold
}

pub fn centroid(positions: &[[f64; 2]]) -> [f64; 2] {
    let n = positions.len().max(1) as f64;
    let (sx, sy) = positions
        .iter()
        .fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// The two terms of the performance function.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTerms {
    /// `(1/N) Σ_j ‖x̂_j − x_j‖`, shared by every robot.
    pub estimation: f64,
    /// `‖x^d − x_i‖` per robot.
    pub tracking: Vec<f64>,
}

impl PhiTerms {
    pub fn phi(&self) -> Vec<f64> {
        self.tracking.iter().map(|t| self.estimation + t).collect()
    }
}

pub fn performance_terms(estimates: &[[f64; 2]], states: &[[f64; 2]], desired: [f64; 2]) -> PhiTerms {
    let n = states.len().max(1) as f64;
    let estimation = estimates
        .iter()
        .zip(states)
        .map(|(e, x)| dist(*e, *x))
        .sum::<f64>()
        / n;
    PhiTerms {
        estimation,
        tracking: states.iter().map(|x| dist(desired, *x)).collect(),
    }
}

/// `φ_i = (1/N) Σ_j ‖x̂_j − x_j‖ + ‖x^d − x_i‖`.
pub fn performance_phi(estimates: &[[f64; 2]], states: &[[f64; 2]], desired: [f64; 2]) -> Vec<f64> {
    performance_terms(estimates, states, desired).phi()
}
