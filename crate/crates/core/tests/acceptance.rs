//! Acceptance gates, one line per criterion.
//!
//! Runs without the libtest harness so the PASS/FAIL lines always reach the
//! output; the process exits non-zero when any gate fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resilient_consensus::control::{design_gains, follower_control, FollowerInternalState, GainConfig};
use resilient_consensus::detector::{AttackType, DetectorParams, DetectorState};
use resilient_consensus::estimator::{make_estimator, steady_state_gain};
use resilient_consensus::numerics::{dare_residual, solve_dare, Matrix};
use resilient_consensus::plant::{measure, step_dynamics, RobotModel, RobotState};
use resilient_consensus::simkit::verify::random_partition_case;
use resilient_consensus::simkit::{
    monte_carlo, run_scenario, write_records, AttackChoice, Grid, RunOptions, RunSummary, ScenarioConfig,
    TrajectoryLog,
};
use resilient_consensus::topology::{partition, Topology};

struct Gate {
    passed: bool,
    evidence: String,
}

fn gate(passed: bool, evidence: impl Into<String>) -> Gate {
    Gate {
        passed,
        evidence: evidence.into(),
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run_seeds(base: &ScenarioConfig, seeds: std::ops::Range<u64>, record: bool) -> Vec<TrajectoryLog> {
    seeds
        .map(|seed| {
            let cfg = ScenarioConfig { seed, ..base.clone() };
            run_scenario(&cfg, RunOptions { record }).unwrap_or_else(|e| panic!("seed {seed}: {e}"))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn model() -> RobotModel {
    RobotModel::single_integrator(0.033, 1e-4, 1e-2).unwrap()
}

/// Final mode of every robot, from the last recorded step.
fn final_followers(log: &TrajectoryLog) -> Vec<usize> {
    let last = log.records.last().map_or(0, |r| r.step);
    let mut f: Vec<usize> = log
        .records
        .iter()
        .filter(|r| r.step == last && r.mode.is_follower())
        .map(|r| r.robot)
        .collect();
    f.sort_unstable();
    f
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn c1_dare() -> Gate {
    let t0 = Instant::now();
    let (q, r) = (1e-4, 1e-2);
    let p = solve_dare(
        &Matrix::scalar(1.0),
        &Matrix::scalar(1.0),
        &Matrix::scalar(q),
        &Matrix::scalar(r),
        1e-16,
        100_000,
    )
    .unwrap();
    // P² − qP − qr = 0.
    let closed = 0.5 * (q + (q * q + 4.0 * q * r).sqrt());
    let scalar_err = (p.as_slice()[0] - closed).abs();
    let m = model();
    let (p2, _) = steady_state_gain(&m).unwrap();
    let residual = dare_residual(&p2, &m.a, &m.c, &m.qw, &m.rv).unwrap();
    let el = t0.elapsed();
    gate(
        scalar_err < 1e-12 && residual < 1e-10 && within(el, 1.0),
        format!(
            "P={:.8e} closed={closed:.8e} err={scalar_err:.2e} residual2d={residual:.2e} t={el:.2?}",
            p.as_slice()[0]
        ),
    )
}

fn c2_no_attack() -> Gate {
    let t0 = Instant::now();
    let logs = run_seeds(&scenario("no_attack.json"), 0..100, false);
    let reached: Vec<&RunSummary> = logs
        .iter()
        .map(|l| &l.summary)
        .filter(|s| s.consensus && s.consensus_time_s().is_some_and(|t| t < 60.0))
        .collect();
    let quiet = reached.iter().filter(|s| s.transitions == 0).count();
    let el = t0.elapsed();
    gate(
        reached.len() >= 95 && quiet >= 95 && within(el, 60.0),
        format!(
            "consensus<60s={}/100 no_switch={quiet}/{} t={el:.2?}",
            reached.len(),
            reached.len()
        ),
    )
}

struct ScenarioStats {
    connected: usize,
    successes: usize,
    consensus_times: Vec<f64>,
    radii: Vec<f64>,
    coupling_failures: usize,
}

fn c3_deception() -> (Gate, ScenarioStats) {
    let t0 = Instant::now();
    let cfg = scenario("deception_8robots.json");
    let logs = run_seeds(&cfg, 0..100, false);
    let mut st = ScenarioStats {
        connected: 0,
        successes: 0,
        consensus_times: Vec::new(),
        radii: Vec::new(),
        coupling_failures: 0,
    };
    let mut worst_latency: f64 = 0.0;
    for s in logs.iter().map(|l| &l.summary) {
        if !s.connected_throughout {
            continue;
        }
        st.connected += 1;
        let latencies: Vec<Option<f64>> = s
            .detections
            .iter()
            .map(|d| match (d.alarm, d.latency_steps) {
                (Some(a), Some(l)) if a.kind == AttackType::Deception => Some(l as f64 * cfg.dt),
                _ => None,
            })
            .collect();
        let detected = latencies.iter().all(|l| l.is_some_and(|t| t <= 3.0));
        for t in latencies.iter().flatten() {
            worst_latency = worst_latency.max(*t);
        }
        if detected && s.false_alarms.is_empty() && s.consensus {
            st.successes += 1;
        }
        if s.consensus {
            st.consensus_times.extend(s.consensus_time_s());
        }
    }
    let el = t0.elapsed();
    let ok = st.connected > 0 && st.successes * 10 >= st.connected * 9 && within(el, 120.0);
    let g = gate(
        ok,
        format!(
            "success={}/{} connected runs, max_latency={worst_latency:.3}s median_time={:.3}s t={el:.2?}",
            st.successes,
            st.connected,
            median(st.consensus_times.clone()).unwrap_or(f64::NAN)
        ),
    );
    (g, st)
}

fn c4_dos() -> (Gate, ScenarioStats) {
    let t0 = Instant::now();
    let cfg = scenario("dos_8robots.json");
    let mut attacked: Vec<usize> = cfg.attacks.iter().flat_map(|a| a.targets().to_vec()).collect();
    attacked.sort_unstable();
    let logs = run_seeds(&cfg, 0..100, true);
    let mut st = ScenarioStats {
        connected: 0,
        successes: 0,
        consensus_times: Vec::new(),
        radii: Vec::new(),
        coupling_failures: 0,
    };
    let mut role_mismatch = 0;
    for log in &logs {
        let s = &log.summary;
        st.radii.extend(&s.coupling_radii);
        st.coupling_failures += s.coupling_failures;
        if !s.connected_throughout {
            continue;
        }
        st.connected += 1;
        let dos_alarms = s
            .detections
            .iter()
            .all(|d| d.latency_steps.is_some() && d.alarm.is_some_and(|a| a.kind == AttackType::Dos));
        let roles = final_followers(log) == attacked;
        role_mismatch += usize::from(!roles);
        if dos_alarms && roles && s.false_alarms.is_empty() && s.consensus {
            st.successes += 1;
        }
        if s.consensus {
            st.consensus_times.extend(s.consensus_time_s());
        }
    }
    let el = t0.elapsed();
    let ok = st.connected > 0 && st.successes * 10 >= st.connected * 9;
    let g = gate(
        ok,
        format!(
            "success={}/{} connected runs, role_mismatch={role_mismatch} median_time={:.3}s t={el:.2?}",
            st.successes,
            st.connected,
            median(st.consensus_times.clone()).unwrap_or(f64::NAN)
        ),
    );
    (g, st)
}

fn c5_sequential(c3: &ScenarioStats, c4: &ScenarioStats) -> (Gate, ScenarioStats) {
    let t0 = Instant::now();
    let cfg = scenario("sequential_8robots.json");
    let logs = run_seeds(&cfg, 0..50, false);
    let mut st = ScenarioStats {
        connected: 0,
        successes: 0,
        consensus_times: Vec::new(),
        radii: Vec::new(),
        coupling_failures: 0,
    };
    for s in logs.iter().map(|l| &l.summary) {
        st.radii.extend(&s.coupling_radii);
        st.coupling_failures += s.coupling_failures;
        if s.consensus {
            st.consensus_times.extend(s.consensus_time_s());
        }
        let steps = |kind: AttackType| -> Vec<u64> {
            s.detections
                .iter()
                .filter(|d| d.expected == kind)
                .filter_map(|d| {
                    d.alarm
                        .filter(|a| a.kind == kind && d.latency_steps.is_some())
                        .map(|a| a.k_alpha)
                })
                .collect()
        };
        let dec = steps(AttackType::Deception);
        let dos = steps(AttackType::Dos);
        let expected = |kind| s.detections.iter().filter(|d| d.expected == kind).count();
        let in_order = dec.len() == expected(AttackType::Deception)
            && dos.len() == expected(AttackType::Dos)
            && dec.iter().max() < dos.iter().min();
        st.successes += usize::from(in_order);
    }
    let m5 = median(st.consensus_times.clone()).unwrap_or(f64::NAN);
    let m3 = median(c3.consensus_times.clone()).unwrap_or(f64::NAN);
    let m4 = median(c4.consensus_times.clone()).unwrap_or(f64::NAN);
    let el = t0.elapsed();
    let g = gate(
        st.successes == logs.len() && m5 > m3 && m5 > m4,
        format!(
            "detected_in_order={}/{} median={m5:.3}s vs deception={m3:.3}s dos={m4:.3}s t={el:.2?}",
            st.successes,
            logs.len()
        ),
    );
    (g, st)
}

fn c6_monte_carlo() -> (Gate, ScenarioStats) {
    let t0 = Instant::now();
    let base = scenario("sweep_base.json");
    let grid = Grid::default();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let stats = monte_carlo(&base, &grid, 100, jobs).unwrap();
    let mut st = ScenarioStats {
        connected: 0,
        successes: 0,
        consensus_times: Vec::new(),
        radii: Vec::new(),
        coupling_failures: 0,
    };
    let mut applicable = 0;
    let mut violations = 0;
    let mut partial = 0;
    let mut misfiled = 0;
    let mut errors = 0;
    for o in &stats.outcomes {
        let Some(s) = &o.summary else {
            errors += 1;
            continue;
        };
        st.radii.extend(&s.coupling_radii);
        st.coupling_failures += s.coupling_failures;
        let applies = s.all_detected() && s.connected_throughout && s.failure.is_none();
        // A run that lost connectivity must never enter the property count.
        misfiled += usize::from(!s.connected_throughout && o.property_applies());
        if applies {
            applicable += 1;
            violations += usize::from(!s.consensus);
        }
        if !s.connected_throughout && !s.consensus {
            partial += 1;
        }
    }
    let reported_partial: usize = stats.cells.iter().map(|c| c.partial).sum();
    let el = t0.elapsed();
    let g = gate(
        violations == 0
            && applicable > 0
            && errors == 0
            && misfiled == 0
            && reported_partial == partial
            && stats.property_violations() == 0
            && stats.cells.len() == 30
            && within(el, 600.0),
        format!(
            "cells={} runs={} applicable={applicable} violations={violations} partial={partial} errors={errors} t={el:.2?}",
            stats.cells.len(),
            stats.outcomes.len()
        ),
    );
    (g, st)
}

fn c7_partitions() -> Gate {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = 250;
    let mut bad = 0;
    let (mut min_re, mut min_entry, mut max_dev) = (f64::INFINITY, f64::INFINITY, 0.0_f64);
    for _ in 0..cases {
        let (t, followers) = random_partition_case(12, &mut rng);
        let p = partition(&t, &followers).unwrap();
        // Oracle: rebuild the blocks from the edge list with nalgebra.
        let n = t.n();
        let mut lap = DMatrix::<f64>::zeros(n, n);
        for (i, j) in t.edges() {
            lap[(i, j)] -= 1.0;
            lap[(j, i)] -= 1.0;
            lap[(i, i)] += 1.0;
            lap[(j, j)] += 1.0;
        }
        let fs = &p.followers;
        let ls = &p.leaders;
        let l1 = DMatrix::from_fn(fs.len(), fs.len(), |a, b| lap[(fs[a], fs[b])]);
        let l2 = DMatrix::from_fn(fs.len(), ls.len(), |a, b| lap[(fs[a], ls[b])]);
        let re = l1.clone().symmetric_eigen().eigenvalues.min();
        let h = -(l1.try_inverse().expect("L1 invertible") * l2);
        let entry = h.min();
        let dev = h.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
        let ours = resilient_consensus::topology::verify_partition(&p);
        if !(re > 0.0 && entry >= -1e-9 && dev <= 1e-9 && ours.all_ok()) {
            bad += 1;
        }
        min_re = min_re.min(re);
        min_entry = min_entry.min(entry);
        max_dev = max_dev.max(dev);
    }
    let el = t0.elapsed();
    gate(
        bad == 0 && within(el, 10.0),
        format!("graphs={cases} bad={bad} min_re={min_re:.3e} min_entry={min_entry:.3e} max_rowsum_dev={max_dev:.3e} t={el:.2?}"),
    )
}

fn c8_error_dynamics(groups: &[&ScenarioStats]) -> Gate {
    let t0 = Instant::now();
    let radii: Vec<f64> = groups.iter().flat_map(|g| g.radii.iter().copied()).collect();
    let failures: usize = groups.iter().map(|g| g.coupling_failures).sum();
    let worst = radii.iter().copied().fold(0.0, f64::max);

    // Leader at the origin, follower offset; noiseless channel.
    let m = RobotModel::single_integrator(0.033, 0.0, 0.0).unwrap();
    let g = design_gains(&m, &GainConfig::default()).unwrap();
    let t = Topology::from_edges(2, &[(0, 1)]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let leader = RobotState::new(&m, vec![0.0, 0.0]);
    let mut follower = RobotState::new(&m, vec![0.5, -0.3]);
    let mut fs = FollowerInternalState::new(vec![0.0, 0.0], 2);
    let horizon = (60.0 / m.dt).round() as usize;
    let mut settled_at = None;
    for k in 0..horizon {
        let e: Vec<f64> = follower.x.iter().zip(&leader.x).map(|(a, b)| a - b).collect();
        let norm = e.iter().chain(&fs.x_internal).map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-3 {
            settled_at = Some(k as f64 * m.dt);
            break;
        }
        let yl = measure(&m, &leader, &mut rng).unwrap();
        let yf = measure(&m, &follower, &mut rng).unwrap();
        // Entry j holds y_follower − y_j; only the leader is a neighbor.
        let rel = vec![yf.iter().zip(&yl).map(|(a, b)| a - b).collect(), vec![0.0; 2]];
        let internal = vec![vec![0.0; 2], fs.x_internal.clone()];
        let stepped = follower_control(&fs, 1, &internal, &rel, &t, &g, &m);
        follower = step_dynamics(&m, &follower, &stepped.u, &mut rng).unwrap();
        fs = stepped.state;
    }
    let el = t0.elapsed();
    gate(
        !radii.is_empty() && worst < 1.0 && failures == 0 && settled_at.is_some(),
        format!(
            "switches={} max_rho={worst:.6} rejected={failures} two_robot_settle={} t={el:.2?}",
            radii.len(),
            settled_at.map_or("never".into(), |s| format!("{s:.2}s"))
        ),
    )
}

/// Straight re-implementation of both recurrences.
fn brute_force(
    params: &DetectorParams,
    residuals: &[[f64; 2]],
    stale: &[bool],
) -> Vec<(f64, f64, Option<u64>, Option<u64>)> {
    let (mut s, mut b) = (0.0_f64, 0.0_f64);
    let (mut da, mut sa) = (None, None);
    let mut out = Vec::with_capacity(residuals.len());
    for (k, (r, &z)) in residuals.iter().zip(stale).enumerate() {
        let k = k as u64;
        if da.is_none() {
            s = (s + (r[0] * r[0] + r[1] * r[1]).sqrt() - params.drift).max(0.0);
            if s > params.tau_dec {
                da = Some(k);
                s = 0.0;
            }
        }
        if sa.is_none() {
            let llr = if z {
                (params.mu1 / params.mu0).ln()
            } else {
                ((1.0 - params.mu1) / (1.0 - params.mu0)).ln()
            };
            b = (b + llr).max(0.0);
            if b > params.tau_dos {
                sa = Some(k);
                b = 0.0;
            }
        }
        out.push((s, b, da, sa));
    }
    out
}

fn c9_detector() -> Gate {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    let streams = 20;
    for _ in 0..streams {
        let params = DetectorParams {
            tau_dec: rng.random_range(1.0..200.0),
            drift: rng.random_range(0.0..0.5),
            tau_dos: rng.random_range(2.0..50.0),
            mu0: rng.random_range(0.01..0.2),
            mu1: rng.random_range(0.5..0.99),
            stale_tol: 1e-6,
        };
        let bias = rng.random_range(0.0..0.4);
        let p_stale = rng.random_range(0.0..0.4);
        let len = 10_000;
        let residuals: Vec<[f64; 2]> = (0..len)
            .map(|_| [rng.random_range(-0.3..0.3) + bias, rng.random_range(-0.3..0.3)])
            .collect();
        let stale: Vec<bool> = (0..len).map(|_| rng.random_bool(p_stale)).collect();
        let oracle = brute_force(&params, &residuals, &stale);
        let mut d = DetectorState::new(params.clone());
        for (k, ((r, &z), want)) in residuals.iter().zip(&stale).zip(&oracle).enumerate() {
            d.cusum_update(r, k as u64);
            d.bernoulli_cusum_update(z, k as u64);
            let got = (d.s_dec, d.s_dos, d.deception_alarm, d.dos_alarm);
            if got.0.to_bits() != want.0.to_bits()
                || got.1.to_bits() != want.1.to_bits()
                || got.2 != want.2
                || got.3 != want.3
            {
                mismatches += 1;
            }
        }
    }

    // Fresh seeds, disjoint from the calibration seed.
    let m = model();
    let params = DetectorParams::default();
    let horizon = (120.0 / m.dt).round() as usize;
    let per_seed = 40;
    let mut alarms = 0usize;
    let zero = [0.0, 0.0];
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + seed);
        for _ in 0..per_seed {
            let mut state = RobotState::new(&m, vec![0.0, 0.0]);
            let mut est = make_estimator(&m, vec![0.0, 0.0]).unwrap();
            let mut det = DetectorState::new(params.clone());
            let mut prev = state.last_y.clone();
            for k in 0..horizon {
                let y = measure(&m, &state, &mut rng).unwrap();
                let r = est.predict_update(&m, &zero, &y).unwrap();
                det.cusum_update(&r, k as u64);
                let d2: f64 = y.iter().zip(&prev).map(|(a, b)| (a - b) * (a - b)).sum();
                det.bernoulli_cusum_update(d2.sqrt() <= params.stale_tol, k as u64);
                prev = y;
                state = step_dynamics(&m, &state, &zero, &mut rng).unwrap();
            }
            alarms += usize::from(det.classify().is_some());
        }
    }
    let far = alarms as f64 / (100 * per_seed) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut bound_violations = 0;
    for _ in 0..50 {
        let tau = rng.random_range(0.05..5.0);
        let nu = rng.random_range(0.0..1.0);
        let a = nu + rng.random_range(0.01..2.0);
        let mut d = DetectorState::new(DetectorParams {
            tau_dec: tau,
            drift: nu,
            ..DetectorParams::default()
        });
        let bound = (tau / (a - nu)).ceil() as u64;
        let mut updates = 0;
        while d.deception_alarm.is_none() && updates <= bound + 1 {
            d.cusum_update(&[a, 0.0], updates);
            updates += 1;
        }
        bound_violations += usize::from(updates > bound);
    }
    let el = t0.elapsed();
    gate(
        mismatches == 0 && far <= 2.0 * 0.005 && bound_violations == 0,
        format!(
            "streams={streams}x10^4 mismatches={mismatches} far={far:.4} ({alarms}/{}) target=0.005 latency_bound_violations={bound_violations}/50 t={el:.2?}",
            100 * per_seed
        ),
    )
}

fn c10_determinism() -> Gate {
    let t0 = Instant::now();
    let names = [
        "no_attack.json",
        "deception_8robots.json",
        "dos_8robots.json",
        "sequential_8robots.json",
        "extreme_24robots.json",
    ];
    let mut differing = Vec::new();
    for name in names {
        let cfg = scenario(name);
        let bytes = || {
            let log = run_scenario(&cfg, RunOptions { record: true }).unwrap();
            let mut buf = Vec::new();
            write_records(&log.records, &mut buf).unwrap();
            buf
        };
        if bytes() != bytes() {
            differing.push(name);
        }
    }
    let base = scenario("sweep_base.json");
    let grid = Grid {
        n: vec![8, 12],
        fractions: vec![0.5],
        kinds: vec![
            AttackChoice::Deception,
            AttackChoice::Dos,
            AttackChoice::Sequential,
        ],
        ..Grid::default()
    };
    let a = monte_carlo(&base, &grid, 6, 1).unwrap();
    let b = monte_carlo(&base, &grid, 6, 4).unwrap();
    let same_mc = serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
    let el = t0.elapsed();
    gate(
        differing.is_empty() && same_mc,
        format!(
            "scenarios={} differing={differing:?} jobs_invariant={same_mc} t={el:.2?}",
            names.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Gate)> = Vec::new();
    let mut report = |id: u32, name: &'static str, g: Gate| {
        println!(
            "criterion {id:>2} {name:<22} {} {}",
            if g.passed { "PASS" } else { "FAIL" },
            g.evidence
        );
        results.push((id, name, g));
    };
    report(1, "dare", c1_dare());
    report(2, "no_attack_baseline", c2_no_attack());
    let (g3, s3) = c3_deception();
    report(3, "deception", g3);
    let (g4, s4) = c4_dos();
    report(4, "dos", g4);
    let (g5, s5) = c5_sequential(&s3, &s4);
    report(5, "sequential", g5);
    let (g6, s6) = c6_monte_carlo();
    report(6, "monte_carlo_property", g6);
    report(7, "partition_invariants", c7_partitions());
    report(8, "error_dynamics", c8_error_dynamics(&[&s4, &s5, &s6]));
    report(9, "detector_fidelity", c9_detector());
    report(10, "determinism", c10_determinism());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
