//! Structural checks on a scenario's model, gains and detector settings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{check_coupling, follower_closed_loop_radius, gains_unchecked, lmi_matrix, rss_weight};
use crate::estimator::steady_state_gain;
use crate::numerics::{dare_residual, eigenvalues, spectral_radius};
use crate::plant::RobotModel;
use crate::topology::{partition, verify_partition, Topology};

use super::config::ScenarioConfig;

/// Outcome of one check with the numbers behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub evidence: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, evidence: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            evidence: evidence.into(),
        }
    }
}

/// Erdős–Rényi graph on `n` nodes with edge probability `p`, redrawn until
/// connected.
pub fn random_connected_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Topology {
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    edges.push((i, j));
                }
            }
        }
        let t = Topology::from_edges(n, &edges);
        if t.is_connected() {
            return t;
        }
    }
}

/// A connected graph on 2..=`max_n` nodes and a follower set leaving at
/// least one leader.
pub fn random_partition_case<R: Rng + ?Sized>(max_n: usize, rng: &mut R) -> (Topology, Vec<usize>) {
    let n = rng.random_range(2..=max_n.max(2));
    let t = random_connected_graph(n, rng.random_range(0.2..0.9), rng);
    let m = rng.random_range(1..n);
    let followers = rand::seq::index::sample(rng, n, m).into_vec();
    (t, followers)
}

pub const PARTITION_CASES: usize = 200;

/// Runs every check. None of them stops the others.
pub fn verify_scenario(cfg: &ScenarioConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    let model = match RobotModel::single_integrator(cfg.dt, cfg.process_noise, cfg.measurement_noise) {
        Ok(m) => m,
        Err(e) => return vec![Check::new("model", false, e.to_string())],
    };

    match steady_state_gain(&model) {
        Ok((p, l)) => {
            let residual = dare_residual(&p, &model.a, &model.c, &model.qw, &model.rv).unwrap_or(f64::NAN);
            checks.push(Check::new(
                "dare_residual",
                residual < 1e-10,
                format!("residual={residual:.3e}"),
            ));
            let rho = spectral_radius(&(&model.a - &(&l * &model.c)), 1e-13).unwrap_or(f64::NAN);
            checks.push(Check::new(
                "estimator_stable",
                rho < 1.0,
                format!("rho(A-LC)={rho:.6}"),
            ));
        }
        Err(e) => checks.push(Check::new("dare_residual", false, e.to_string())),
    }

    let gains = match gains_unchecked(&model, &cfg.gains) {
        Ok(g) => g,
        Err(e) => {
            checks.push(Check::new("gains", false, e.to_string()));
            return checks;
        }
    };
    let max_eig = eigenvalues(&lmi_matrix(&model, &gains.q_lmi), 1e-13)
        .map(|e| e.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max))
        .unwrap_or(f64::NAN);
    checks.push(Check::new("lmi", max_eig < 0.0, format!("max_eig={max_eig:.6}")));

    let rho = follower_closed_loop_radius(&model, &gains).unwrap_or(f64::NAN);
    checks.push(Check::new(
        "follower_gain",
        rho < 1.0,
        format!("rho(A+BF)={rho:.6}"),
    ));

    // Largest Laplacian eigenvalue a team of n can reach is n.
    let worst = (1.0 - cfg.dt * cfg.gains.k_p * cfg.n_robots as f64).abs();
    checks.push(Check::new(
        "baseline_step",
        worst < 1.0,
        format!("max|1-dt*k_p*lambda|={worst:.6}"),
    ));

    let margin = rss_weight(&cfg.rss, cfg.sensor_range);
    checks.push(Check::new(
        "rss_in_range",
        margin.is_some(),
        format!(
            "w(sensor_range)={}",
            margin.map_or("none".into(), |w| format!("{w:.6}"))
        ),
    ));

    checks.push(match cfg.detector.validate() {
        Ok(()) => Check::new(
            "detector_params",
            true,
            cfg.detector.to_fragment().trim().replace('\n', "; "),
        ),
        Err(e) => Check::new("detector_params", false, e.to_string()),
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut partition_bad = 0;
    let mut coupling_bad = 0;
    let mut worst_rho: f64 = 0.0;
    for _ in 0..PARTITION_CASES {
        let (t, followers) = random_partition_case(12, &mut rng);
        let Ok(p) = partition(&t, &followers) else {
            partition_bad += 1;
            continue;
        };
        if !verify_partition(&p).all_ok() {
            partition_bad += 1;
        }
        match check_coupling(&p, &gains, &model) {
            Ok(r) => worst_rho = worst_rho.max(r),
            Err(_) => coupling_bad += 1,
        }
    }
    checks.push(Check::new(
        "partitions",
        partition_bad == 0,
        format!("{partition_bad} of {PARTITION_CASES} random partitions failed"),
    ));
    checks.push(Check::new(
        "coupling",
        coupling_bad == 0,
        format!("{coupling_bad} of {PARTITION_CASES} failed, max rho={worst_rho:.6}"),
    ));
    checks
}
