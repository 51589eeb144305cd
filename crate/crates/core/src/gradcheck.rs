//! Finite-difference validation of every analytic gradient.
//!
//! Random configurations are grown as trees: each new robot is dropped
//! inside the triangle of an earlier one, then any other pair that happens
//! to satisfy containment is added as an extra edge with some probability.
//! Points within `SEAM_CLEARANCE` of the barrier seam are rejected since the
//! barrier Hessian jumps there.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptive::{GainState, NetworkEval};
use crate::error::Result;
use crate::fov::{self, FovParams, Pose};
use crate::graph::Topology;

pub const FD_STEP: f64 = 1e-6;
/// Step for the second difference in `k`. `F` is quadratic in `k`, so a
/// large step has no truncation error and keeps rounding small.
pub const FD_STEP_HESSIAN: f64 = 0.5;
pub const SEAM_CLEARANCE: f64 = 1e-3;
/// Minimum side distance of sampled neighbours (m).
pub const MIN_SIDE_DISTANCE: f64 = 0.05;
/// Absolute floor in the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

pub const QUANTITIES: [&str; 9] = [
    "grad_phi",
    "grad_psi",
    "grad_vbar",
    "nominal_model",
    "grad_k_F",
    "grad_p_F",
    "grad_theta_F",
    "grad_k_Vhat",
    "hessian_k",
];

#[derive(Debug, Clone)]
pub struct RandomConfig {
    pub topology: Topology,
    pub poses: Vec<Pose>,
    pub gains: GainState,
}

fn clear_of_seam(d: &[f64; 3], fov: &FovParams) -> bool {
    d.iter()
        .all(|&v| v > MIN_SIDE_DISTANCE && (v - fov.barrier_margin).abs() > SEAM_CLEARANCE)
}

/// Uniform sample inside the body-frame triangle, away from the barrier seam.
fn sample_inside(rng: &mut impl Rng, fov: &FovParams) -> Vector2<f64> {
    let [a, b, c] = fov.body_vertices();
    loop {
        let (mut s, mut t): (f64, f64) = (rng.random(), rng.random());
        if s + t > 1.0 {
            s = 1.0 - s;
            t = 1.0 - t;
        }
        let e = a + s * (b - a) + t * (c - a);
        if clear_of_seam(&fov.body_side_distances(&e), fov) {
            return e;
        }
    }
}

/// A random valid configuration with `n` robots.
pub fn random_config(rng: &mut impl Rng, n: usize, fov: &FovParams) -> RandomConfig {
    assert!(n >= 2, "need at least two robots");
    let mut poses = vec![Pose::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-PI..PI),
    )];
    let mut edges = Vec::new();
    for h in 1..n {
        let tail = rng.random_range(0..h);
        let e = sample_inside(rng, fov);
        let p = poses[tail].position() + nalgebra::Rotation2::new(poses[tail].theta) * e;
        poses.push(Pose::new(p.x, p.y, rng.random_range(-PI..PI)));
        edges.push((tail, h));
    }
    for i in 0..n {
        for j in 0..n {
            if i == j || edges.contains(&(i, j)) {
                continue;
            }
            let d = fov::side_distances(&poses[i], &poses[j].position(), fov);
            if clear_of_seam(&d, fov) && rng.random_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    let topology = Topology::new(n, edges).expect("generated topology is valid");
    let gains = GainState {
        k: (0..topology.edge_count())
            .map(|_| rng.random_range(0.5..2.0))
            .collect(),
    };
    RandomConfig {
        topology,
        poses,
        gains,
    }
}

/// `‖a - b‖∞ / max(‖a‖∞, ‖b‖∞, REL_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a
        .iter()
        .chain(b)
        .map(|v| v.abs())
        .fold(REL_FLOOR, f64::max);
    diff / scale
}

/// Worst entrywise `|a - b| / max(|a|, |b|, floor)` with `floor` scaled to the matrix.
pub fn entrywise_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.iter().chain(b.iter()).map(|v| v.abs()).fold(1.0, f64::max);
    let floor = REL_FLOOR * scale;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` around `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|idx| {
            buf[idx] = x[idx] + h;
            let up = f(&buf);
            buf[idx] = x[idx] - h;
            let down = f(&buf);
            buf[idx] = x[idx];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn flatten(poses: &[Pose]) -> Vec<f64> {
    poses.iter().flat_map(|p| [p.x, p.y, p.theta]).collect()
}

fn unflatten(s: &[f64]) -> Vec<Pose> {
    s.chunks(3).map(|c| Pose::new(c[0], c[1], c[2])).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantityReport {
    pub name: String,
    pub worst_rel_err: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub samples: usize,
    pub threshold: f64,
    pub quantities: Vec<QuantityReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.quantities.iter().all(|q| q.worst_rel_err < self.threshold)
    }

    pub fn failing(&self) -> impl Iterator<Item = &QuantityReport> {
        self.quantities
            .iter()
            .filter(|q| !(q.worst_rel_err < self.threshold))
    }

    pub fn worst(&self, name: &str) -> Option<f64> {
        self.quantities
            .iter()
            .find(|q| q.name == name)
            .map(|q| q.worst_rel_err)
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub samples: usize,
    /// Test hook: scale this quantity's analytic value by `1 + 1e-2`.
    pub perturb: Option<String>,
    pub fov: FovParams,
}

struct Tally {
    worst: Vec<f64>,
    count: Vec<usize>,
    perturb: Option<usize>,
}

impl Tally {
    fn record(&mut self, q: usize, analytic: &[f64], numeric: &[f64]) {
        let err = if self.perturb == Some(q) {
            let bumped: Vec<f64> = analytic.iter().map(|v| v * (1.0 + 1e-2)).collect();
            relative_error(&bumped, numeric)
        } else {
            relative_error(analytic, numeric)
        };
        self.record_err(q, err);
    }

    fn record_err(&mut self, q: usize, err: f64) {
        // NaN must count as a failure
        self.worst[q] = if err.is_nan() || self.worst[q].is_nan() {
            f64::NAN
        } else {
            self.worst[q].max(err)
        };
        self.count[q] += 1;
    }
}

fn index_of(name: &str) -> usize {
    QUANTITIES.iter().position(|&q| q == name).expect("known quantity")
}

/// Compare every analytic gradient with central differences on `samples`
/// random configurations.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let perturb = match &opts.perturb {
        Some(name) => Some(QUANTITIES.iter().position(|q| q == name).ok_or_else(|| {
            crate::Error::invalid("perturb", format!("unknown quantity `{name}`"))
        })?),
        None => None,
    };
    let mut tally = Tally {
        worst: vec![0.0; QUANTITIES.len()],
        count: vec![0; QUANTITIES.len()],
        perturb,
    };
    let fov = &opts.fov;
    fov.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.samples {
        let n = rng.random_range(2..=6);
        let cfg = random_config(&mut rng, n, fov);
        check_pairs(&cfg, fov, &mut tally)?;
        check_network(&cfg, fov, &mut tally)?;
    }
    Ok(GradcheckReport {
        seed: opts.seed,
        samples: opts.samples,
        threshold: DEFAULT_THRESHOLD,
        quantities: QUANTITIES
            .iter()
            .enumerate()
            .map(|(q, name)| QuantityReport {
                name: name.to_string(),
                worst_rel_err: tally.worst[q],
                evaluations: tally.count[q],
            })
            .collect(),
    })
}

fn check_pairs(cfg: &RandomConfig, fov: &FovParams, tally: &mut Tally) -> Result<()> {
    for e in cfg.topology.edges() {
        let pi = cfg.poses[e.tail];
        let pj = cfg.poses[e.head];
        let x = [pi.x, pi.y, pi.theta, pj.x, pj.y];
        let split = |v: &[f64]| (Pose::new(v[0], v[1], v[2]), Pose::new(v[3], v[4], 0.0));

        let g = fov::grad_phi(&pi, &pj, fov)?;
        let fd = central_difference(&x, FD_STEP, |v| {
            let (a, b) = split(v);
            fov::phi(&a, &b, fov).unwrap_or(f64::NAN)
        });
        tally.record(index_of("grad_phi"), &pair_vec(&g.wrt_i, &g.wrt_j), &fd);

        let g = fov::grad_psi(&pi, &pj, fov);
        let fd = central_difference(&x, FD_STEP, |v| {
            let (a, b) = split(v);
            fov::psi(&a, &b, fov)
        });
        tally.record(index_of("grad_psi"), &pair_vec(&g.wrt_i, &g.wrt_j), &fd);

        let ev = fov::pair_eval(&pi, &pj, fov)?;
        let fd = central_difference(&x, FD_STEP, |v| {
            let (a, b) = split(v);
            fov::pair_eval(&a, &b, fov).map_or(f64::NAN, |r| r.vbar)
        });
        tally.record(index_of("grad_vbar"), &pair_vec(&ev.grad_i, &ev.grad_j_xy), &fd);

        let m = crate::adaptive::nominal_model(&pi, &pj, fov)?;
        let fd: Vec<f64> = fd[..2].iter().map(|v| -v).collect();
        tally.record(index_of("nominal_model"), m.as_slice(), &fd);
    }
    Ok(())
}

fn pair_vec(i: &nalgebra::Vector3<f64>, j: &Vector2<f64>) -> Vec<f64> {
    vec![i.x, i.y, i.z, j.x, j.y]
}

fn check_network(cfg: &RandomConfig, fov: &FovParams, tally: &mut Tally) -> Result<()> {
    let topo = &cfg.topology;
    let eval = NetworkEval::new(&cfg.poses, &cfg.gains, topo, fov)?;
    let k0 = cfg.gains.k.clone();
    let s0 = flatten(&cfg.poses);

    let cost_at_k = |k: &[f64]| {
        NetworkEval::new(&cfg.poses, &GainState { k: k.to_vec() }, topo, fov)
            .map_or(f64::NAN, |e| e.cost())
    };
    let vhat_at_k = |k: &[f64]| {
        NetworkEval::new(&cfg.poses, &GainState { k: k.to_vec() }, topo, fov)
            .map_or(f64::NAN, |e| e.vhat())
    };
    let cost_at_s = |s: &[f64]| {
        NetworkEval::new(&unflatten(s), &cfg.gains, topo, fov).map_or(f64::NAN, |e| e.cost())
    };

    let fd = central_difference(&k0, FD_STEP, cost_at_k);
    tally.record(index_of("grad_k_F"), eval.grad_k_f().as_slice(), &fd);

    let fd = central_difference(&k0, FD_STEP, vhat_at_k);
    tally.record(index_of("grad_k_Vhat"), eval.grad_k_vhat().as_slice(), &fd);

    let fd = central_difference(&s0, FD_STEP, cost_at_s);
    let fd_p: Vec<f64> = fd.chunks(3).flat_map(|c| [c[0], c[1]]).collect();
    let fd_th: Vec<f64> = fd.chunks(3).map(|c| c[2]).collect();
    tally.record(index_of("grad_p_F"), eval.grad_p_f().as_slice(), &fd_p);
    tally.record(index_of("grad_theta_F"), eval.grad_theta_f().as_slice(), &fd_th);

    for idx in 0..topo.edge_count() {
        let cert = eval.hessian_k_certificate(idx)?;
        let fd = fd_hessian(&k0, FD_STEP_HESSIAN, |k| {
            NetworkEval::new(&cfg.poses, &GainState { k: k.to_vec() }, topo, fov)
                .map_or(f64::NAN, |e| e.edge_cost(idx))
        });
        let analytic = if tally.perturb == Some(index_of("hessian_k")) {
            &cert.hessian * (1.0 + 1e-2)
        } else {
            cert.hessian.clone()
        };
        tally.record_err(index_of("hessian_k"), entrywise_relative_error(&analytic, &fd));
    }
    Ok(())
}

/// Second differences `[f(+a+b) - f(+a-b) - f(-a+b) + f(-a-b)] / 4h²`.
pub fn fd_hessian(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    let mut buf = x.to_vec();
    for a in 0..n {
        for b in a..n {
            let mut eval = |sa: f64, sb: f64| {
                buf.copy_from_slice(x);
                buf[a] += sa * h;
                buf[b] += sb * h;
                f(&buf)
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h * h);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}
