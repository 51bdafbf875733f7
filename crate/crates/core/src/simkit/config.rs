//! Scenario files.
//!
//! A scenario is a JSON object; every field except `seed` has a default and
//! unknown fields are rejected. Times are in seconds and converted to steps
//! with `round(t / dt)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{GainConfig, RssModel};
use crate::detector::DetectorParams;
use crate::plant::{AttackKind, AttackSpec, DEFAULT_DT, DEFAULT_QW, DEFAULT_RV};

use super::SimError;

/// One scripted attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackConfig {
    Deception {
        targets: Vec<usize>,
        start_s: f64,
        #[serde(default = "default_alpha_bounds")]
        alpha_bounds: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<Vec<f64>>,
    },
    Dos {
        targets: Vec<usize>,
        start_s: f64,
        #[serde(default = "default_delay_prob")]
        delay_prob: f64,
    },
}

fn default_alpha_bounds() -> [f64; 2] {
    [0.2, 0.5]
}

fn default_delay_prob() -> f64 {
    0.95
}

impl AttackConfig {
    pub fn targets(&self) -> &[usize] {
        match self {
            AttackConfig::Deception { targets, .. } | AttackConfig::Dos { targets, .. } => targets,
        }
    }

    pub fn start_s(&self) -> f64 {
        match self {
            AttackConfig::Deception { start_s, .. } | AttackConfig::Dos { start_s, .. } => *start_s,
        }
    }

    pub fn to_spec(&self, dt: f64) -> AttackSpec {
        let kind = match self {
            AttackConfig::Deception {
                alpha_bounds, alpha, ..
            } => AttackKind::Deception {
                alpha_bounds: *alpha_bounds,
                alpha: alpha.clone(),
            },
            AttackConfig::Dos { delay_prob, .. } => AttackKind::Dos {
                delay_prob: *delay_prob,
            },
        };
        AttackSpec {
            kind,
            targets: self.targets().to_vec(),
            start_step: seconds_to_steps(self.start_s(), dt),
        }
    }
}

pub fn seconds_to_steps(t: f64, dt: f64) -> u64 {
    (t / dt).round().max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_robots: usize,
    /// Width and height of the arena, centered on the origin.
    pub arena: [f64; 2],
    pub sensor_range: f64,
    pub dt: f64,
    pub max_duration: f64,
    /// Per-axis process noise variance.
    pub process_noise: f64,
    /// Per-axis measurement noise variance.
    pub measurement_noise: f64,
    pub attacks: Vec<AttackConfig>,
    pub gains: GainConfig,
    pub rss: RssModel,
    pub detector: DetectorParams,
    pub consensus_threshold: f64,
    pub min_dist: f64,
    pub collision_avoidance: bool,
    /// Also require a connected proximity graph when drawing initial poses.
    pub require_connected_start: bool,
    /// Fixed initial positions instead of random placement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_positions: Option<Vec<[f64; 2]>>,
    /// Detectors stay idle this long while the estimators lose their
    /// initial error.
    pub detector_warmup_s: f64,
    /// The run may stop early only this long after the last attack starts.
    pub settle_s: f64,
    /// ... and once consensus has held this long.
    pub hold_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_robots: 8,
            arena: [1.6, 1.0],
            sensor_range: 0.8,
            dt: DEFAULT_DT,
            max_duration: 120.0,
            process_noise: DEFAULT_QW,
            measurement_noise: DEFAULT_RV,
            attacks: Vec::new(),
            gains: GainConfig::default(),
            rss: RssModel::default(),
            detector: DetectorParams::default(),
            consensus_threshold: 0.4,
            min_dist: 0.1,
            collision_avoidance: true,
            require_connected_start: false,
            initial_positions: None,
            detector_warmup_s: 1.5,
            settle_s: 5.0,
            hold_s: 2.0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn steps(&self) -> u64 {
        seconds_to_steps(self.max_duration, self.dt)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |field: &str, msg: String| {
            Err(SimError::Invalid {
                field: field.to_string(),
                msg,
            })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.n_robots < 2 {
            return invalid(
                "n_robots",
                format!("need at least 2 robots, got {}", self.n_robots),
            );
        }
        if !(positive(self.arena[0]) && positive(self.arena[1])) {
            return invalid(
                "arena",
                format!("dimensions must be positive, got {:?}", self.arena),
            );
        }
        for (field, v) in [
            ("sensor_range", self.sensor_range),
            ("dt", self.dt),
            ("max_duration", self.max_duration),
            ("consensus_threshold", self.consensus_threshold),
            ("min_dist", self.min_dist),
        ] {
            if !positive(v) {
                return invalid(field, format!("must be positive, got {v}"));
            }
        }
        for (field, v) in [
            ("process_noise", self.process_noise),
            ("measurement_noise", self.measurement_noise),
            ("settle_s", self.settle_s),
            ("detector_warmup_s", self.detector_warmup_s),
            ("hold_s", self.hold_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(field, format!("must be finite and >= 0, got {v}"));
            }
        }
        if self.min_dist >= self.sensor_range {
            return invalid("min_dist", "must be below sensor_range".into());
        }
        self.rss.validate().map_err(|e| SimError::Invalid {
            field: "rss".into(),
            msg: e.to_string(),
        })?;
        if self.rss.max_range() <= self.sensor_range {
            return invalid(
                "rss",
                format!(
                    "signal falls to gamma_tau at {:.3} m, inside sensor_range",
                    self.rss.max_range()
                ),
            );
        }
        self.detector.validate().map_err(|e| SimError::Invalid {
            field: "detector".into(),
            msg: e.to_string(),
        })?;

        let mut attacked = vec![false; self.n_robots];
        for (a, attack) in self.attacks.iter().enumerate() {
            let field = format!("attacks[{a}]");
            if attack.targets().is_empty() {
                return invalid(&field, "no targets".into());
            }
            for &t in attack.targets() {
                if t >= self.n_robots {
                    return invalid(
                        &format!("{field}.targets"),
                        format!("robot {t} out of range for {} robots", self.n_robots),
                    );
                }
                if attacked[t] {
                    return invalid(&format!("{field}.targets"), format!("robot {t} attacked twice"));
                }
                attacked[t] = true;
            }
            let start = attack.start_s();
            if !(start.is_finite() && start >= 0.0 && start < self.max_duration) {
                return invalid(
                    &format!("{field}.start_s"),
                    format!("must lie in [0, max_duration), got {start}"),
                );
            }
            match attack {
                AttackConfig::Deception {
                    alpha_bounds: [lo, hi],
                    alpha,
                    ..
                } => {
                    if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo <= hi) {
                        return invalid(
                            &format!("{field}.alpha_bounds"),
                            format!("need 0 <= lo <= hi, got [{lo}, {hi}]"),
                        );
                    }
                    if let Some(alpha) = alpha {
                        if alpha.len() != 2 || alpha.iter().any(|v| !v.is_finite()) {
                            return invalid(&format!("{field}.alpha"), "need two finite components".into());
                        }
                    }
                }
                AttackConfig::Dos { delay_prob, .. } => {
                    if !(0.0..=1.0).contains(delay_prob) {
                        return invalid(
                            &format!("{field}.delay_prob"),
                            format!("must lie in [0, 1], got {delay_prob}"),
                        );
                    }
                }
            }
        }

        if let Some(p) = &self.initial_positions {
            if p.len() != self.n_robots {
                return invalid(
                    "initial_positions",
                    format!("{} positions for {} robots", p.len(), self.n_robots),
                );
            }
            if p.iter().flatten().any(|v| !v.is_finite()) {
                return invalid("initial_positions", "non-finite coordinate".into());
            }
            for i in 0..p.len() {
                for j in i + 1..p.len() {
                    let d = (p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]);
                    if d < self.min_dist {
                        return invalid(
                            "initial_positions",
                            format!("robots {i} and {j} are {d:.4} m apart, below min_dist"),
                        );
                    }
                }
            }
            for i in 0..p.len() {
                let isolated = (0..p.len())
                    .all(|j| j == i || (p[i][0] - p[j][0]).hypot(p[i][1] - p[j][1]) > self.sensor_range);
                if isolated {
                    return invalid("initial_positions", format!("robot {i} has no neighbor in range"));
                }
            }
        }
        Ok(())
    }
}
