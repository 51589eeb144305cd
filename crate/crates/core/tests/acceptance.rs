//! Acceptance suite. Runs as a plain binary and prints one line per criterion.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fovtopo_core::adaptive::{GainState, NetworkEval, EPS_ALPHA};
use fovtopo_core::config::ConfigFile;
use fovtopo_core::gradcheck::{self, GradcheckOptions};
use fovtopo_core::graph::{self, build_incidence, edge_laplacian};
use fovtopo_core::resilience::{self, sofb, HinfGains};
use fovtopo_core::sim::{self, Leader, LeaderProfile, Mode, RunOutput, Scenario};
use fovtopo_core::{FovParams, Pose, Topology};
use nalgebra::{DMatrix, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;
const SAMPLES: usize = 100;

const GRAD_REL_TOL: f64 = 1e-4;
const HESS_MIN_EIG: f64 = -1e-9;
const HESS_RANK_TOL: f64 = 1e-9;
const HESS_FD_STEP: f64 = 0.5;
const PROJ_TOL: f64 = 1e-12;
const VDOT_TOL: f64 = 1e-8;
const V_STEP_SLACK: f64 = 1e-6;
const ATTENUATION_MARGIN: f64 = 0.05;
const FINAL_COST_BOUND: f64 = 1e-1;
const TREND_SLACK: f64 = 1e-12;
const LOGGED_D_TOL: f64 = 1e-12;
/// Floor on the replay tolerance where the step-doubling estimate reaches rounding.
const REPLAY_FLOOR: f64 = 1e-11;
const REPLAY_HORIZON: f64 = 20.0;
const NESTING_HORIZON: f64 = 10.0;
const SOFB_TOL: f64 = 1e-10;
const MAX_GRAPH_N: usize = 5;
const MAX_GRAPH_EDGES: usize = 10;

type Verdict = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Option<Duration>,
    check: fn() -> Verdict,
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str, overrides: &[&str]) -> Scenario {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ConfigFile::load(&scenario_path(name), &overrides)
        .and_then(|c| c.scenario())
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn outcome_text(out: &RunOutput) -> String {
    format!("{:?} at t={:.3}s", out.summary.outcome, out.summary.t_final)
}

fn c1_gradients() -> Verdict {
    let report = gradcheck::run(&GradcheckOptions {
        seed: SEED,
        samples: SAMPLES,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let worst = report
        .quantities
        .iter()
        .map(|q| format!("{}={:.1e}", q.name, q.worst_rel_err))
        .collect::<Vec<_>>()
        .join(" ");
    let all = report.quantities.iter().all(|q| q.worst_rel_err < GRAD_REL_TOL);
    ensure(all && report.passed(), worst)
}

fn c2_hessian() -> Verdict {
    let fov = FovParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut min_eig, mut max_rank, mut worst_fd) = (f64::INFINITY, 0usize, 0.0f64);
    for _ in 0..SAMPLES {
        let n = rng.random_range(2..=6);
        let cfg = gradcheck::random_config(&mut rng, n, &fov);
        let net = NetworkEval::new(&cfg.poses, &cfg.gains, &cfg.topology, &fov).map_err(|e| e.to_string())?;
        for e in 0..cfg.topology.edge_count() {
            let cert = net.hessian_k_certificate(e).map_err(|e| e.to_string())?;
            let scale = cert.eigs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            min_eig = min_eig.min(cert.eigs.first().copied().unwrap_or(0.0));
            max_rank = max_rank.max(cert.eigs.iter().filter(|v| v.abs() > HESS_RANK_TOL * scale).count());

            // F_e is quadratic in k, so second differences are exact up to rounding
            let m = cfg.topology.edge_count();
            let cost = |k: &[f64]| {
                NetworkEval::new(&cfg.poses, &GainState { k: k.to_vec() }, &cfg.topology, &fov)
                    .expect("valid configuration")
                    .edge_cost(e)
            };
            let h = HESS_FD_STEP;
            let mut fd = DMatrix::zeros(m, m);
            for a in 0..m {
                for b in 0..m {
                    let mut k = cfg.gains.k.clone();
                    let mut at = |da: f64, db: f64| {
                        k.copy_from_slice(&cfg.gains.k);
                        k[a] += da;
                        k[b] += db;
                        cost(&k)
                    };
                    fd[(a, b)] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
                }
            }
            worst_fd = worst_fd.max(gradcheck::entrywise_relative_error(&cert.hessian, &fd));
        }
    }
    ensure(
        min_eig >= HESS_MIN_EIG && max_rank <= 1 && worst_fd < GRAD_REL_TOL,
        format!("min_eig={min_eig:.2e} max_rank={max_rank} fd_rel_err={worst_fd:.1e}"),
    )
}

fn c3_projection() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..SAMPLES {
        let r = 10f64.powf(rng.random_range(-3.0..3.0));
        let phi: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let p = Vector2::new(r * phi.cos(), r * phi.sin());
        let a = fovtopo_core::adaptive::projection_matrix(&p).map_err(|e| e.to_string())?;
        let mut eig: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        worst = worst.max(eig[0].abs()).max((eig[1] - 1.0).abs());
    }
    ensure(worst <= PROJ_TOL, format!("worst_eig_dev={worst:.1e}"))
}

fn c4_vdot_identity() -> Verdict {
    let fov = FovParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let (mut worst_gap, mut worst_sign, mut certified) = (0.0f64, f64::NEG_INFINITY, 0usize);
    for _ in 0..SAMPLES {
        let n = rng.random_range(2..=6);
        let cfg = gradcheck::random_config(&mut rng, n, &fov);
        let net = NetworkEval::new(&cfg.poses, &cfg.gains, &cfg.topology, &fov).map_err(|e| e.to_string())?;
        let pack = build_incidence(&cfg.topology);
        let (k_rates, w) = net.gain_rates(EPS_ALPHA);
        if w.iter().any(|t| t.clamped) {
            continue;
        }
        let chain = net.vdot_chain(net.controls(), &k_rates);
        let closed = net.vdot_quadratic(&pack);
        let scale = chain.abs().max(closed.abs()).max(1.0);
        worst_gap = worst_gap.max((chain - closed).abs() / scale);
        let t1 = graph::theorem1_certificate(&pack, graph::DEFAULT_EIG_TOL).map_err(|e| e.to_string())?;
        if t1.psd {
            certified += 1;
            worst_sign = worst_sign.max(chain);
        }
    }
    ensure(
        worst_gap <= VDOT_TOL && worst_sign <= VDOT_TOL,
        format!("max_rel_gap={worst_gap:.1e} max_vdot_certified={worst_sign:.1e} certified_states={certified}"),
    )
}

fn c5_monotonic() -> Verdict {
    let sc = load("fault_free_adaptive.cfg", &["log_every=1"]);
    let out = sim::run(&sc).map_err(|e| e.to_string())?;
    let worst = out
        .trace
        .windows(2)
        .map(|w| w[1].lyapunov.v - w[0].lyapunov.v)
        .fold(f64::NEG_INFINITY, f64::max);
    let ok = out.summary.outcome.is_completed() && out.summary.containment_preserved && worst <= V_STEP_SLACK;
    ensure(
        ok,
        format!(
            "{} max_step_increase={worst:.2e} min_margin={:.3e}",
            outcome_text(&out),
            out.summary.min_margin
        ),
    )
}

fn sup_e_tilde(out: &RunOutput, from: f64, to: f64) -> f64 {
    out.trace
        .iter()
        .filter(|r| r.t >= from && r.t <= to)
        .map(|r| r.max_e_tilde())
        .fold(0.0, f64::max)
}

fn mean_cost(out: &RunOutput, robot: usize, from: f64, to: f64) -> f64 {
    let vals: Vec<f64> = out
        .trace
        .iter()
        .filter(|r| r.t >= from && r.t <= to)
        .map(|r| r.robot_costs[robot])
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

fn c6_fault_scenario() -> Verdict {
    let sc = load("scenario_paper_sec6.cfg", &[]);
    let out = sim::run(&sc).map_err(|e| e.to_string())?;
    let horizon = sc.horizon;
    let completed = out.summary.outcome.is_completed();
    let a = completed && out.summary.containment_preserved;

    let w = 0.2 * horizon;
    let early = sup_e_tilde(&out, 0.0, w);
    let late = sup_e_tilde(&out, horizon - w, horizon);
    let b = completed && late.is_finite() && late < early + ATTENUATION_MARGIN;

    let finals = &out.summary.final_robot_costs;
    let trend_ok = (0..sc.n()).all(|i| mean_cost(&out, i, horizon - w, horizon) <= mean_cost(&out, i, 0.0, w) + TREND_SLACK);
    let c = completed && finals.iter().all(|&f| f < FINAL_COST_BOUND) && trend_ok;

    let max_final = finals.iter().copied().fold(0.0, f64::max);
    ensure(
        a && b && c,
        format!(
            "(a)={} (b)={} (c)={} {} sup_e_first={early:.3e} sup_e_last={late:.3e} max_final_F={max_final:.3e}",
            a, b, c,
            outcome_text(&out)
        ),
    )
}

/// Collinear chain whose offsets stay on the line of sight, so every mode completes.
fn collinear_chain(mode: Mode, freeze: bool) -> Scenario {
    let topo = Topology::new(3, [(0, 1), (1, 2)]).expect("valid topology");
    let poses = vec![
        Pose::new(0.0, 0.0, 0.0),
        Pose::new(2.3, 0.0, 0.0),
        Pose::new(4.1, 0.0, 0.0),
    ];
    let mut sc = Scenario::new(topo, poses);
    sc.mode = mode;
    sc.freeze_gains = freeze;
    sc.observer = HinfGains::zero();
    sc.horizon = NESTING_HORIZON;
    sc.leader = Some(Leader {
        index: 0,
        profile: LeaderProfile::Constant(Vector2::zeros()),
        override_control: false,
    });
    sc
}

fn same_bits(a: &RunOutput, b: &RunOutput) -> bool {
    a.trace.len() == b.trace.len()
        && a.trace.iter().zip(&b.trace).all(|(x, y)| {
            x.t.to_bits() == y.t.to_bits()
                && x.poses.iter().zip(&y.poses).all(|(p, q)| {
                    [p.x, p.y, p.theta]
                        .iter()
                        .zip([q.x, q.y, q.theta])
                        .all(|(u, v)| u.to_bits() == v.to_bits())
                })
                && x.gains.iter().zip(&y.gains).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

fn c7_mode_nesting() -> Verdict {
    let run = |mode, freeze| sim::run(&collinear_chain(mode, freeze)).expect("collinear chain runs");
    let resilient = run(Mode::Resilient, false);
    let adaptive = run(Mode::Adaptive, false);
    let resilient_frozen = run(Mode::Resilient, true);
    let adaptive_frozen = run(Mode::Adaptive, true);
    let baseline = run(Mode::Baseline, false);
    let all_completed = [&resilient, &adaptive, &resilient_frozen, &adaptive_frozen, &baseline]
        .iter()
        .all(|o| o.summary.outcome.is_completed());
    let r_a = same_bits(&resilient, &adaptive);
    let rf_af = same_bits(&resilient_frozen, &adaptive_frozen);
    let af_b = same_bits(&adaptive_frozen, &baseline);
    let a_b = same_bits(&adaptive, &baseline);
    ensure(
        all_completed && r_a && rf_af && af_b && a_b,
        format!(
            "steps={} resilient==adaptive:{r_a} frozen resilient==adaptive:{rf_af} frozen adaptive==baseline:{af_b} adaptive==baseline:{a_b}",
            adaptive.trace.len()
        ),
    )
}

fn rk4_replay(a: &Matrix4<f64>, x0: Vector4<f64>, d: impl Fn(f64) -> Vector4<f64>, dt: f64, steps: usize) -> Vec<Vector4<f64>> {
    let f = |t: f64, x: &Vector4<f64>| a * x + d(t);
    let mut xs = vec![x0];
    let mut x = x0;
    for s in 0..steps {
        let t = s as f64 * dt;
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * dt, &(x + 0.5 * dt * k1));
        let k3 = f(t + 0.5 * dt, &(x + 0.5 * dt * k2));
        let k4 = f(t + dt, &(x + dt * k3));
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        xs.push(x);
    }
    xs
}

fn c8_linear_replay() -> Verdict {
    // frozen gains keep the faulted run alive; the error system ignores the controller
    let horizon = format!("horizon={REPLAY_HORIZON}");
    let sc = load("scenario_paper_sec6.cfg", &["log_every=1", "gains.freeze=true", &horizon]);
    let out = sim::run(&sc).map_err(|e| e.to_string())?;
    let steps = out.trace.len() - 1;
    if steps < 10 {
        return Err(format!("faulted run too short: {}", outcome_text(&out)));
    }
    let a = resilience::error_dynamics_matrix(&sc.observer).a_f1;
    let (mut worst, mut worst_richardson, mut worst_logged_d) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..sc.n() {
        for r in &out.trace {
            let exact = resilience::disturbance(&sc.faults, i, r.t);
            worst_logged_d = worst_logged_d.max((r.disturbance[i] - exact).amax());
        }
        let x0 = out.trace[0].error_sample().x[i];
        let d = |t| resilience::disturbance(&sc.faults, i, t);
        let coarse = rk4_replay(&a, x0, d, sc.dt, steps);
        let fine = rk4_replay(&a, x0, d, 0.5 * sc.dt, 2 * steps);
        for (s, rec) in out.trace.iter().enumerate() {
            let logged = rec.error_sample().x[i];
            worst = worst.max((logged - coarse[s]).amax());
            worst_richardson = worst_richardson.max((coarse[s] - fine[2 * s]).amax() * 16.0 / 15.0);
        }
    }
    let tol = 10.0 * worst_richardson.max(REPLAY_FLOOR);
    ensure(
        worst <= tol && worst_logged_d <= LOGGED_D_TOL,
        format!(
            "steps={steps} max_dev={worst:.2e} tol={tol:.2e} integrator_err={worst_richardson:.2e} logged_d_err={worst_logged_d:.1e}"
        ),
    )
}

fn c9_sofb() -> Verdict {
    let gains = HinfGains::default();
    let cert = resilience::verify_sofb(&gains).map_err(|e| e.to_string())?;
    let prob = sofb::SofbProblem::from_gains(&gains);
    let (g, r) = resilience::sofb_residuals(&prob, &cert.p_bar, &cert.m).map_err(|e| e.to_string())?;
    let dg = (g - cert.residual_gain).abs();
    let dr = (r - cert.residual_riccati).abs();
    ensure(
        dg <= SOFB_TOL && dr <= SOFB_TOL,
        format!("gain_residual_gap={dg:.1e} riccati_residual_gap={dr:.1e} satisfied={}", cert.satisfied),
    )
}

fn c10_graph_oracle() -> Verdict {
    let mut graphs = 0usize;
    for n in 1..=MAX_GRAPH_N {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let mut subset: Vec<usize> = Vec::new();
        let mut mismatch = None;
        enumerate_subsets(pairs.len(), MAX_GRAPH_EDGES, &mut subset, &mut |s| {
            if mismatch.is_some() {
                return;
            }
            graphs += 1;
            let topo = Topology::new(n, s.iter().map(|&p| pairs[p])).expect("simple graph");
            if let Err(e) = compare_incidence(&topo) {
                mismatch = Some(e);
            }
        });
        if let Some(e) = mismatch {
            return Err(format!("n={n}: {e}"));
        }
    }
    Ok(format!("graphs={graphs}"))
}

fn enumerate_subsets(universe: usize, max: usize, current: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    visit(current);
    if current.len() == max {
        return;
    }
    let start = current.last().map_or(0, |&l| l + 1);
    for next in start..universe {
        current.push(next);
        enumerate_subsets(universe, max, current, visit);
        current.pop();
    }
}

fn compare_incidence(topo: &Topology) -> Result<(), String> {
    let pack = build_incidence(topo);
    let lap = edge_laplacian(&pack);
    let edges = topo.edges();
    for i in 0..topo.n() {
        for (e, er) in edges.iter().enumerate() {
            let b = i64::from(er.tail == i) - i64::from(er.head == i);
            let bp = i64::from(er.tail == i);
            if pack.b[(i, e)] != b || pack.b_plus[(i, e)] != bp {
                return Err(format!("incidence differs at robot {i}, edge {er}"));
            }
        }
    }
    for (e, ee) in edges.iter().enumerate() {
        for (f, ef) in edges.iter().enumerate() {
            let want = i64::from(ee.tail == ef.tail) - i64::from(ee.head == ef.tail);
            if lap[(e, f)] != want {
                return Err(format!("edge Laplacian differs at ({ee}, {ef})"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "gradient fidelity", budget: Some(Duration::from_secs(10)), check: c1_gradients },
        Criterion { id: 2, name: "gain Hessian certificate", budget: None, check: c2_hessian },
        Criterion { id: 3, name: "projection spectrum", budget: None, check: c3_projection },
        Criterion { id: 4, name: "Lyapunov derivative identity", budget: None, check: c4_vdot_identity },
        Criterion { id: 5, name: "fault-free monotonic V", budget: Some(Duration::from_secs(60)), check: c5_monotonic },
        Criterion { id: 6, name: "faulted six-robot scenario", budget: Some(Duration::from_secs(300)), check: c6_fault_scenario },
        Criterion { id: 7, name: "mode nesting", budget: None, check: c7_mode_nesting },
        Criterion { id: 8, name: "linear error replay", budget: None, check: c8_linear_replay },
        Criterion { id: 9, name: "SOFB residual reproduction", budget: None, check: c9_sofb },
        Criterion { id: 10, name: "graph oracle", budget: Some(Duration::from_secs(30)), check: c10_graph_oracle },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let (ok, detail) = match verdict {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d} over budget")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:>2} {}: {} [{:.2}s]",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
