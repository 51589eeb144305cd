use std::collections::BTreeSet;

use fovtopo_core::adaptive::{projection_matrix, GainState, NetworkEval, EPS_ALPHA};
use fovtopo_core::gradcheck::{central_difference, random_config, relative_error, RandomConfig};
use fovtopo_core::{FovParams, Pose, Topology};
use nalgebra::Vector2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(seed: u64, n: usize) -> RandomConfig {
    random_config(&mut ChaCha8Rng::seed_from_u64(seed), n, &FovParams::default())
}

fn eval(cfg: &RandomConfig) -> NetworkEval<'_> {
    NetworkEval::new(&cfg.poses, &cfg.gains, &cfg.topology, &FovParams::default()).unwrap()
}

/// Robots within two undirected hops of edge `e`'s endpoints.
fn two_hop(topo: &Topology, e: usize) -> BTreeSet<usize> {
    let edge = topo.edge(e);
    let mut set: BTreeSet<usize> = [edge.tail, edge.head].into();
    for _ in 0..2 {
        let grown: Vec<usize> = topo
            .edges()
            .iter()
            .filter(|f| set.contains(&f.tail) || set.contains(&f.head))
            .flat_map(|f| [f.tail, f.head])
            .collect();
        set.extend(grown);
    }
    set
}

proptest! {
    #[test]
    fn projection_is_an_orthogonal_projector(r in 1e-3..1e3f64, phi in -3.2..3.2f64) {
        let p = Vector2::new(r * phi.cos(), r * phi.sin());
        let a = projection_matrix(&p).unwrap();
        prop_assert!((a - a.transpose()).amax() == 0.0);
        prop_assert!((a * a - a).amax() < 1e-12);
        prop_assert!((a * p - p).norm() < 1e-12 * r);
    }

    #[test]
    fn cost_matches_matrix_form(seed in any::<u64>(), n in 2usize..7) {
        let cfg = config(seed, n);
        let net = eval(&cfg);
        let mut by_robot = 0.0;
        for i in 0..n {
            by_robot += net.robot_cost(i);
        }
        for e in 0..cfg.topology.edge_count() {
            let mf = net.matrix_form(e);
            prop_assert!(net.edge_cost(e) >= 0.0);
            prop_assert!((mf.f_ij - net.edge_cost(e)).abs() <= 1e-10 * (1.0 + mf.f_ij));
        }
        prop_assert!((by_robot - net.cost()).abs() <= 1e-10 * (1.0 + by_robot));
    }

    #[test]
    fn unclamped_w_has_the_closed_form(seed in any::<u64>(), n in 2usize..7) {
        let cfg = config(seed, n);
        let net = eval(&cfg);
        let topo = &cfg.topology;
        let (rates, w) = net.gain_rates(EPS_ALPHA);
        let gk = net.grad_k_f();
        for (idx, t) in w.iter().enumerate() {
            prop_assume!(!t.clamped);
            let e = topo.edge(idx);
            prop_assert_eq!(t.alpha_ij, net.vbar(idx) + gk[idx]);
            let num = t.gamma_ij + t.beta_i / topo.degree(e.tail) as f64 + t.beta_j / topo.degree(e.head) as f64;
            prop_assert_eq!(t.w_ij, num / t.alpha_ij);
            prop_assert_eq!(rates[idx], t.w_ij - gk[idx]);
        }
    }

    #[test]
    fn gradient_step_opposes_grad_k_f(seed in any::<u64>()) {
        // single edge: -∇_k F matches a finite difference of F and points downhill
        let cfg = config(seed, 2);
        let fov = FovParams::default();
        let net = eval(&cfg);
        let fd = central_difference(&cfg.gains.k, 1e-6, |k| {
            NetworkEval::new(&cfg.poses, &GainState { k: k.to_vec() }, &cfg.topology, &fov).unwrap().cost()
        });
        let gk = net.grad_k_f();
        prop_assert!(relative_error(gk.as_slice(), &fd) < 1e-4);
        if fd[0].abs() > 1e-6 * gk.amax() {
            prop_assert!((-gk[0]).signum() != fd[0].signum());
        }
    }

    #[test]
    fn gain_rate_ignores_robots_beyond_two_hops(seed in any::<u64>(), n in 4usize..9, bump in 1e-7..1e-5f64) {
        let cfg = config(seed, n);
        let fov = FovParams::default();
        let base = eval(&cfg).gain_rates(EPS_ALPHA).0;
        for e in 0..cfg.topology.edge_count() {
            let near = two_hop(&cfg.topology, e);
            for r in (0..n).filter(|r| !near.contains(r)) {
                let mut poses = cfg.poses.clone();
                poses[r] = Pose::new(poses[r].x + bump, poses[r].y - bump, poses[r].theta + bump);
                let Ok(moved) = NetworkEval::new(&poses, &cfg.gains, &cfg.topology, &fov) else { continue };
                prop_assert_eq!(moved.gain_rates(EPS_ALPHA).0[e], base[e], "edge {} robot {}", e, r);
            }
        }
    }

    #[test]
    fn relabeling_permutes_gain_rates(seed in any::<u64>(), n in 2usize..7, shift in 1usize..6) {
        let cfg = config(seed, n);
        let fov = FovParams::default();
        let relabel = |i: usize| (i + shift) % n;
        let topo = &cfg.topology;
        let moved_topo = Topology::new(n, topo.edges().iter().map(|e| (relabel(e.tail), relabel(e.head)))).unwrap();
        let mut moved_poses = cfg.poses.clone();
        for (i, p) in cfg.poses.iter().enumerate() {
            moved_poses[relabel(i)] = *p;
        }
        let mut moved_k = vec![0.0; topo.edge_count()];
        for (idx, e) in topo.edges().iter().enumerate() {
            moved_k[moved_topo.edge_index(relabel(e.tail), relabel(e.head)).unwrap()] = cfg.gains.k[idx];
        }
        let a = eval(&cfg).gain_rates(EPS_ALPHA).0;
        let b = NetworkEval::new(&moved_poses, &GainState { k: moved_k }, &moved_topo, &fov)
            .unwrap()
            .gain_rates(EPS_ALPHA)
            .0;
        for (idx, e) in topo.edges().iter().enumerate() {
            let j = moved_topo.edge_index(relabel(e.tail), relabel(e.head)).unwrap();
            prop_assert!((a[idx] - b[j]).abs() <= 1e-9 * (1.0 + a[idx].abs()), "{} vs {}", a[idx], b[j]);
        }
    }
}

#[test]
fn fitted_gain_has_no_drift() {
    // collinear pair at unit gain: F = 0 and its gradient vanishes
    let topo = Topology::new(2, [(0, 1)]).unwrap();
    let poses = [Pose::new(0.0, 0.0, 0.0), Pose::new(2.4, 0.0, 0.0)];
    let net = NetworkEval::new(&poses, &GainState::uniform(1, 1.0), &topo, &FovParams::default()).unwrap();
    assert_eq!(net.cost(), 0.0);
    assert_eq!(net.grad_k_f()[0], 0.0);
}
