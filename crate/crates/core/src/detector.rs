//! Per-robot attack detection.
//!
//! Two change detectors run side by side on each robot's own channel:
//!
//! * a CUSUM on the residual norm, `S ← max(0, S + ‖r‖ − ν)`, which latches a
//!   deception alarm the first time `S > τ`;
//! * a Bernoulli log-likelihood-ratio CUSUM on a staleness indicator `z`
//!   (`z = 1` when the delivered measurement repeats the previous one), which
//!   latches a DoS alarm when its statistic crosses `tau_dos`.
//!
//! With `ν = 0` the residual recursion is the plain accumulate-and-reset
//! rule; the drift exists so that pure noise does not eventually alarm.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::estimator::{make_estimator, EstimatorError};
use crate::plant::{measure, step_dynamics, PlantError, RobotModel, RobotState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("invalid detector parameter: {0}")]
    Config(String),
    #[error("calibration needs at least {min} runs, got {got}")]
    InsufficientRuns { min: usize, got: usize },
    #[error("calibration fragment line {line}: {msg}")]
    Fragment { line: usize, msg: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackType {
    Deception,
    Dos,
}

impl AttackType {
    pub fn label(self) -> &'static str {
        match self {
            AttackType::Deception => "deception",
            AttackType::Dos => "dos",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A latched alarm: attack type and the step `k_α` at which it fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub kind: AttackType,
    pub k_alpha: u64,
}

/// Thresholds and model constants for both detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    /// Residual CUSUM threshold `τ`.
    pub tau_dec: f64,
    /// Residual CUSUM drift `ν`.
    pub drift: f64,
    /// Staleness LLR-CUSUM threshold.
    pub tau_dos: f64,
    /// Staleness rate with no attack.
    pub mu0: f64,
    /// Staleness rate under attack.
    pub mu1: f64,
    /// Norm below which two consecutive deliveries count as a repeat.
    pub stale_tol: f64,
}

impl Default for DetectorParams {
    /// Output of `rcsim calibrate --seed 2024` on the default planar model:
    /// 120 s horizon, per-robot false-alarm target 0.005, 400 runs, drift
    /// one standard deviation above the mean residual norm.
    fn default() -> Self {
        Self {
            tau_dec: 0.616_160_524_582_541_2,
            drift: 0.200_586_831_394_025_56,
            tau_dos: 8.0,
            mu0: 3.437_841_420_626_086e-7,
            mu1: 0.95,
            stale_tol: 1e-6,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::Config(m));
        if !(self.tau_dec >= 0.0 && self.tau_dec.is_finite()) {
            return bad(format!("tau_dec must be finite and >= 0, got {}", self.tau_dec));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return bad(format!("drift must be finite and >= 0, got {}", self.drift));
        }
        if !(self.tau_dos >= 0.0 && self.tau_dos.is_finite()) {
            return bad(format!("tau_dos must be finite and >= 0, got {}", self.tau_dos));
        }
        if !(self.mu0 > 0.0 && self.mu0 < 1.0) || !(self.mu1 > 0.0 && self.mu1 < 1.0) {
            return bad(format!(
                "mu0 and mu1 must lie in (0, 1), got {} and {}",
                self.mu0, self.mu1
            ));
        }
        if self.mu0 >= self.mu1 {
            return bad(format!("mu0 ({}) must be below mu1 ({})", self.mu0, self.mu1));
        }
        if !(self.stale_tol >= 0.0 && self.stale_tol.is_finite()) {
            return bad(format!(
                "stale_tol must be finite and >= 0, got {}",
                self.stale_tol
            ));
        }
        Ok(())
    }

    /// `ln f₁(z)/f₀(z)` for a Bernoulli observation.
    pub fn llr(&self, stale: bool) -> f64 {
        if stale {
            (self.mu1 / self.mu0).ln()
        } else {
            ((1.0 - self.mu1) / (1.0 - self.mu0)).ln()
        }
    }

    /// Serializes as the `key = value` calibration fragment.
    pub fn to_fragment(&self) -> String {
        format!(
            "# detector calibration\n\
             tau_dec = {}\n\
             drift = {}\n\
             tau_dos = {}\n\
             mu0 = {:e}\n\
             mu1 = {}\n\
             stale_tol = {:e}\n",
            self.tau_dec, self.drift, self.tau_dos, self.mu0, self.mu1, self.stale_tol
        )
    }

    /// Parses a calibration fragment. Keys missing from the fragment keep
    /// their default; unknown or repeated keys are rejected.
    pub fn from_fragment(text: &str) -> Result<Self, DetectorError> {
        let mut p = Self::default();
        let mut seen: Vec<&'static str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| DetectorError::Fragment { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|e| err(format!("bad number for `{key}`: {e}")))?;
            let (name, slot): (&'static str, &mut f64) = match key {
                "tau_dec" => ("tau_dec", &mut p.tau_dec),
                "drift" => ("drift", &mut p.drift),
                "tau_dos" => ("tau_dos", &mut p.tau_dos),
                "mu0" => ("mu0", &mut p.mu0),
                "mu1" => ("mu1", &mut p.mu1),
                "stale_tol" => ("stale_tol", &mut p.stale_tol),
                other => return Err(err(format!("unknown key `{other}`"))),
            };
            if seen.contains(&name) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(name);
            *slot = value;
        }
        p.validate()?;
        Ok(p)
    }
}

impl FromStr for DetectorParams {
    type Err = DetectorError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_fragment(s)
    }
}

/// Running detector statistics for one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    pub params: DetectorParams,
    /// Residual CUSUM statistic, always `>= 0`.
    pub s_dec: f64,
    /// Staleness LLR-CUSUM statistic, always `>= 0`.
    pub s_dos: f64,
    pub deception_alarm: Option<u64>,
    pub dos_alarm: Option<u64>,
}

impl DetectorState {
    pub fn new(params: DetectorParams) -> Self {
        Self {
            params,
            s_dec: 0.0,
            s_dos: 0.0,
            deception_alarm: None,
            dos_alarm: None,
        }
    }

    /// Residual CUSUM step with `‖r‖` the Euclidean norm. A no-op once the
    /// deception alarm has latched.
    pub fn cusum_update(&mut self, residual: &[f64], k: u64) {
        if self.deception_alarm.is_some() {
            return;
        }
        let norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.s_dec = (self.s_dec + norm - self.params.drift).max(0.0);
        if self.s_dec > self.params.tau_dec {
            self.deception_alarm = Some(k);
            self.s_dec = 0.0;
        }
    }

    /// Bernoulli LLR-CUSUM step. A no-op once the DoS alarm has latched.
    pub fn bernoulli_cusum_update(&mut self, stale: bool, k: u64) {
        if self.dos_alarm.is_some() {
            return;
        }
        self.s_dos = (self.s_dos + self.params.llr(stale)).max(0.0);
        if self.s_dos > self.params.tau_dos {
            self.dos_alarm = Some(k);
            self.s_dos = 0.0;
        }
    }

    /// First latched alarm; a DoS alarm wins a same-step tie.
    pub fn classify(&self) -> Option<Alarm> {
        match (self.deception_alarm, self.dos_alarm) {
            (None, None) => None,
            (Some(k), None) => Some(Alarm {
                kind: AttackType::Deception,
                k_alpha: k,
            }),
            (None, Some(k)) => Some(Alarm {
                kind: AttackType::Dos,
                k_alpha: k,
            }),
            (Some(kd), Some(ks)) => Some(if ks <= kd {
                Alarm {
                    kind: AttackType::Dos,
                    k_alpha: ks,
                }
            } else {
                Alarm {
                    kind: AttackType::Deception,
                    k_alpha: kd,
                }
            }),
        }
    }
}

/// `true` when two consecutive deliveries are within `tol` of each other.
pub fn staleness_indicator(y: &[f64], y_prev: &[f64], tol: f64) -> bool {
    let d2: f64 = y.iter().zip(y_prev).map(|(a, b)| (a - b) * (a - b)).sum();
    d2.sqrt() <= tol
}

/// Settings for [`calibrate_thresholds`].
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    /// Steps per simulated attack-free run.
    pub horizon: usize,
    /// Allowed fraction of runs with a false deception alarm.
    pub target_far: f64,
    pub runs: usize,
    /// `ν = mean(‖r‖) + drift_sigmas · std(‖r‖)`.
    pub drift_sigmas: f64,
    pub stale_tol: f64,
    /// Kept from the base parameters.
    pub tau_dos: f64,
    pub mu1: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            horizon: 3637,
            target_far: 0.005,
            runs: 400,
            drift_sigmas: 1.0,
            stale_tol: 1e-6,
            tau_dos: 8.0,
            mu1: 0.95,
        }
    }
}

pub const MIN_CALIBRATION_RUNS: usize = 30;

/// Summary statistics behind a calibration, for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub params: DetectorParams,
    pub residual_mean: f64,
    pub residual_std: f64,
    pub allowed_exceedances: usize,
    pub stale_count: u64,
    pub samples: u64,
}

/// One-sided 95% Clopper-Pearson upper bound on a binomial rate.
pub fn binomial_upper_bound(successes: usize, trials: usize, confidence: f64) -> f64 {
    if successes >= trials {
        return 1.0;
    }
    let beta = Beta::new(successes as f64 + 1.0, (trials - successes) as f64).expect("valid beta");
    beta.inverse_cdf(confidence)
}

/// Two-sided Clopper-Pearson interval.
pub fn binomial_interval(successes: usize, trials: usize, confidence: f64) -> (f64, f64) {
    let a = 1.0 - confidence;
    let lo = if successes == 0 {
        0.0
    } else {
        Beta::new(successes as f64, (trials - successes) as f64 + 1.0)
            .expect("valid beta")
            .inverse_cdf(a / 2.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        Beta::new(successes as f64 + 1.0, (trials - successes) as f64)
            .expect("valid beta")
            .inverse_cdf(1.0 - a / 2.0)
    };
    (lo, hi)
}

/// Derives detector thresholds from simulated attack-free runs of one
/// robot.
///
/// The residual drift is set from the pooled residual norms. The threshold
/// is the smallest per-run CUSUM maximum that leaves at most `j` runs above
/// it, where `j` is the largest exceedance count whose 95% upper
/// confidence bound still meets `target_far`; with too few runs for any
/// slack it is the overall maximum.
pub fn calibrate_thresholds<R: Rng + ?Sized>(
    m: &RobotModel,
    opts: &CalibrationOptions,
    rng: &mut R,
) -> Result<CalibrationReport, DetectorError> {
    if opts.runs < MIN_CALIBRATION_RUNS {
        return Err(DetectorError::InsufficientRuns {
            min: MIN_CALIBRATION_RUNS,
            got: opts.runs,
        });
    }
    if !(opts.target_far > 0.0 && opts.target_far < 1.0) {
        return Err(DetectorError::Config(format!(
            "target_far must lie in (0, 1), got {}",
            opts.target_far
        )));
    }
    let n = m.state_dim();
    let zero_u = vec![0.0; m.input_dim()];
    let mut norms: Vec<Vec<f64>> = Vec::with_capacity(opts.runs);
    let mut stale_count = 0u64;
    let mut samples = 0u64;
    for _ in 0..opts.runs {
        let mut state = RobotState::new(m, vec![0.0; n]);
        let mut est = make_estimator(m, vec![0.0; n])?;
        let mut prev = state.last_y.clone();
        let mut run = Vec::with_capacity(opts.horizon);
        for _ in 0..opts.horizon {
            let y = measure(m, &state, rng)?;
            let r = est.predict_update(m, &zero_u, &y)?;
            run.push(r.iter().map(|v| v * v).sum::<f64>().sqrt());
            if staleness_indicator(&y, &prev, opts.stale_tol) {
                stale_count += 1;
            }
            samples += 1;
            prev = y;
            state = step_dynamics(m, &state, &zero_u, rng)?;
        }
        norms.push(run);
    }

    let total = norms.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = norms.iter().flatten().sum::<f64>() / total;
    let var = norms.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / (total - 1.0).max(1.0);
    let std = var.sqrt();
    let drift = mean + opts.drift_sigmas * std;

    let mut maxima: Vec<f64> = norms
        .iter()
        .map(|run| {
            let mut s: f64 = 0.0;
            let mut best: f64 = 0.0;
            for r in run {
                s = (s + r - drift).max(0.0);
                best = best.max(s);
            }
            best
        })
        .collect();
    maxima.sort_by(|a, b| b.total_cmp(a));

    let allowed = (0..opts.runs)
        .take_while(|&j| binomial_upper_bound(j, opts.runs, 0.95) <= opts.target_far)
        .last()
        .unwrap_or(0);
    // `allowed` runs strictly exceed maxima[allowed].
    let tau_dec = maxima[allowed].max(1e-9);

    // A sensor that repeats itself as often as a held channel leaves the
    // staleness test blind; the cap only keeps the LLR well defined.
    let mu0 = ((stale_count as f64 + 0.5) / (samples as f64 + 1.0)).min(opts.mu1 / 2.0);
    let params = DetectorParams {
        tau_dec,
        drift,
        tau_dos: opts.tau_dos,
        mu0,
        mu1: opts.mu1,
        stale_tol: opts.stale_tol,
    };
    params.validate()?;
    Ok(CalibrationReport {
        params,
        residual_mean: mean,
        residual_std: std,
        allowed_exceedances: allowed,
        stale_count,
        samples,
    })
}
