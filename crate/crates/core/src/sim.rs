//! Fixed-step simulation of the coupled pose, gain and observer dynamics.
//!
//! Modes:
//! - `baseline`: ungained law, gains held at their initial values.
//! - `adaptive`: gained law plus the gain flow `k̇ = -∇_k F + w`.
//! - `resilient`: adaptive law evaluated on the observer estimates `p̄`.
//!   The robot moves with `ṗ = ū + δ^u`, the estimate with
//!   `ṗ̄ = ū + (F1 + F2) ẽ`, so the error `[ẽ; δ̃]` obeys the linear model
//!   of [`error_dynamics_matrix`](crate::resilience::error_dynamics_matrix).
//!
//! Outside resilient mode the controller acts on the faulted measurement
//! `p̂ = p + δ^p` directly.

use std::io::Write;

use nalgebra::{DVector, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::adaptive::{self, Fovs, GainState, NetworkEval, WTermBreakdown};
use crate::error::{EdgeRef, Error, Result};
use crate::fov::{self, FovParams, Pose};
use crate::graph::{self, IncidencePack, Theorem1Certificate, Topology};
use crate::resilience::{
    self, ErrorSample, FaultSchedule, HinfGains, L2Accumulator, L2GainReport, ObserverOutput,
    ObserverState, SofbCertificate, UubStatus,
};

/// Margin below which a containment near-violation is flagged, as a
/// fraction of the barrier margin.
pub const NEAR_VIOLATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Adaptive,
    Resilient,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Adaptive => "adaptive",
            Mode::Resilient => "resilient",
        })
    }
}

/// Exogenous velocity of the leader as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum LeaderProfile {
    Constant(Vector2<f64>),
    /// Piecewise-linear path from the leader's initial position through the
    /// waypoints at constant speed, then at rest.
    Waypoints { points: Vec<Vector2<f64>>, speed: f64 },
}

impl LeaderProfile {
    pub fn velocity(&self, t: f64, start: &Vector2<f64>) -> Vector2<f64> {
        match self {
            LeaderProfile::Constant(v) => *v,
            LeaderProfile::Waypoints { points, speed } => {
                let mut travelled = speed * t;
                let mut from = *start;
                for p in points {
                    let seg = p - from;
                    let len = seg.norm();
                    if len > 0.0 {
                        if travelled < len {
                            return seg * (speed / len);
                        }
                        travelled -= len;
                    }
                    from = *p;
                }
                Vector2::zeros()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leader {
    pub index: usize,
    pub profile: LeaderProfile,
    /// Replace the leader's own control instead of adding to it.
    pub override_control: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub initial_poses: Vec<Pose>,
    /// One entry per robot.
    pub fov: Vec<FovParams>,
    /// One entry per edge.
    pub gain_init: Vec<f64>,
    /// Lower bound enforced on the gain flow, if any.
    pub gain_floor: Option<f64>,
    /// Hold gains at their initial values in adaptive mode.
    pub freeze_gains: bool,
    pub eps_alpha: f64,
    pub faults: FaultSchedule,
    pub observer: HinfGains,
    pub leader: Option<Leader>,
    pub dt: f64,
    pub horizon: f64,
    pub log_every: usize,
    pub mode: Mode,
}

impl Scenario {
    /// Defaults around a topology and initial poses.
    pub fn new(topology: Topology, initial_poses: Vec<Pose>) -> Self {
        let n = topology.n();
        let m = topology.edge_count();
        Self {
            topology,
            initial_poses,
            fov: vec![FovParams::default(); n],
            gain_init: vec![1.0; m],
            gain_floor: None,
            freeze_gains: false,
            eps_alpha: adaptive::EPS_ALPHA,
            faults: FaultSchedule::none(n),
            observer: HinfGains::default(),
            leader: None,
            dt: 0.01,
            horizon: 10.0,
            log_every: 1,
            mode: Mode::Adaptive,
        }
    }

    pub fn n(&self) -> usize {
        self.topology.n()
    }

    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(field, reason))
            }
        };
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", "must be positive and finite")?;
        check(
            self.horizon >= 0.0 && self.horizon.is_finite(),
            "horizon",
            "must be nonnegative and finite",
        )?;
        check(self.log_every >= 1, "log_every", "must be at least 1")?;
        check(self.initial_poses.len() == n, "initial_poses", "need one pose per robot")?;
        check(
            self.initial_poses
                .iter()
                .all(|p| p.x.is_finite() && p.y.is_finite() && p.theta.is_finite()),
            "initial_poses",
            "must be finite",
        )?;
        check(self.fov.len() == n, "fov", "need one entry per robot")?;
        for f in &self.fov {
            f.validate()?;
        }
        check(
            self.gain_init.len() == self.topology.edge_count(),
            "gains.init",
            "need one gain per edge",
        )?;
        check(
            self.gain_init.iter().all(|k| k.is_finite()),
            "gains.init",
            "must be finite",
        )?;
        if let Some(floor) = self.gain_floor {
            check(floor.is_finite(), "gains.floor", "must be finite")?;
        }
        check(
            self.eps_alpha >= 0.0 && self.eps_alpha.is_finite(),
            "gains.eps_alpha",
            "must be nonnegative",
        )?;
        check(
            self.faults.sensor.len() == n && self.faults.actuator.len() == n,
            "faults",
            "need one entry per robot",
        )?;
        self.observer.validate()?;
        if let Some(leader) = &self.leader {
            check(leader.index < n, "leader.index", "out of range")?;
            if let LeaderProfile::Waypoints { speed, .. } = &leader.profile {
                check(*speed > 0.0 && speed.is_finite(), "leader.speed", "must be positive")?;
            }
        }
        for (idx, e) in self.topology.edges().iter().enumerate() {
            let d = fov::side_distances(
                &self.initial_poses[e.tail],
                &self.initial_poses[e.head].position(),
                &self.fov[e.tail],
            );
            let (side, &dist) = d
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("three sides");
            if !(dist > 0.0) {
                return Err(Error::ContainmentViolation {
                    edge: Some(self.topology.edge(idx)),
                    side,
                    distance: dist,
                });
            }
        }
        if self.mode == Mode::Resilient {
            let root = self.leader.as_ref().map(|l| l.index).ok_or_else(|| {
                Error::invalid("leader", "resilient mode needs a leader")
            })?;
            check(
                self.topology.has_rooted_spanning_tree(root),
                "topology.edges",
                "no spanning tree rooted at the leader",
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: u64,
    pub poses: Vec<Pose>,
    pub gains: Vec<f64>,
    /// Present in resilient mode.
    pub observer: Option<ObserverState>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEval {
    pub v: f64,
    pub vhat: f64,
    pub f: f64,
    /// `∇_s V · ṡ + ∇_k V · k̇` with the actual closed-loop rates.
    pub vdot_assembled: f64,
    /// `-ξ_kᵀ L̄⁺ ξ_k - ‖∇_k F‖²`.
    pub vdot_quadratic: f64,
    /// Terms outside the closed form: observer injection, leader input,
    /// actuator faults, clamped `w`, gain floor and frozen gains.
    pub vdot_exogenous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentReport {
    /// Minimum signed side distance per edge.
    pub margins: Vec<f64>,
    pub ok: bool,
    pub min_margin: f64,
}

/// Per-edge margins `min_l d_l` from side distances, never failing.
pub fn containment_margins(topology: &Topology, poses: &[Pose], fovs: &[FovParams]) -> ContainmentReport {
    let margins: Vec<f64> = topology
        .edges()
        .iter()
        .map(|e| {
            fov::side_distances(&poses[e.tail], &poses[e.head].position(), &fovs[e.tail])
                .into_iter()
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let min_margin = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    ContainmentReport {
        ok: margins.iter().all(|&m| m > 0.0),
        margins,
        min_margin,
    }
}

/// Margins of the poses the controller acts on.
pub fn containment_check(state: &SimState, scenario: &Scenario) -> ContainmentReport {
    let ctrl = controller_poses(scenario, state.t, &state.poses, state.observer.as_ref());
    containment_margins(&scenario.topology, &ctrl, &scenario.fov)
}

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    pub t: f64,
    /// True poses.
    pub poses: Vec<Pose>,
    /// Positions the controller acts on (`p̄` in resilient mode, `p̂` otherwise).
    pub controller_positions: Vec<Vector2<f64>>,
    pub gains: Vec<f64>,
    pub robot_costs: Vec<f64>,
    pub lyapunov: LyapunovEval,
    pub e_tilde: Vec<Vector2<f64>>,
    pub delta_hat: Vec<Vector2<f64>>,
    /// `δ^p - δ̂`.
    pub delta_tilde: Vec<Vector2<f64>>,
    pub disturbance: Vec<Vector4<f64>>,
    pub margins: Vec<f64>,
    pub true_margins: Vec<f64>,
    pub clamped_edges: usize,
    pub near_violation: bool,
    pub negative_gain: bool,
    pub uub: Option<UubStatus>,
}

impl TraceRecord {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_e_tilde(&self) -> f64 {
        self.e_tilde.iter().map(|e| e.norm()).fold(0.0, f64::max)
    }

    pub fn error_sample(&self) -> ErrorSample {
        ErrorSample {
            t: self.t,
            x: self
                .e_tilde
                .iter()
                .zip(&self.delta_tilde)
                .map(|(e, d)| Vector4::new(e.x, e.y, d.x, d.y))
                .collect(),
            d: self.disturbance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    ContainmentViolation {
        /// 1-based `(tail, head)`.
        edge: Option<[usize; 2]>,
        side: usize,
        distance: f64,
        t: f64,
    },
    Blowup {
        t: f64,
        reason: String,
    },
}

impl Outcome {
    fn from_error(err: Error, t: f64) -> Self {
        match err {
            Error::ContainmentViolation {
                edge,
                side,
                distance,
            } => Outcome::ContainmentViolation {
                edge: edge.map(|e| [e.tail + 1, e.head + 1]),
                side,
                distance,
                t,
            },
            other => Outcome::Blowup {
                t,
                reason: other.to_string(),
            },
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Outcome::Completed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub outcome: Outcome,
    pub steps: u64,
    pub t_final: f64,
    pub initial_v: f64,
    pub final_v: f64,
    pub final_vhat: f64,
    pub final_f: f64,
    pub final_robot_costs: Vec<f64>,
    pub final_gains: Vec<f64>,
    pub max_e_tilde: f64,
    pub containment_preserved: bool,
    pub min_margin: f64,
    pub min_true_margin: f64,
    /// `max ‖p - p_controller‖` over the run.
    pub max_estimate_divergence: f64,
    pub max_vdot: f64,
    /// Largest `V(t+dt) - V(t)` over consecutive steps.
    pub max_v_increase: f64,
    pub clamp_events: u64,
    pub negative_gain_seen: bool,
    pub theorem1: Theorem1Certificate,
    pub sofb: Option<SofbCertificate>,
    pub l2: Option<L2GainReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
    pub final_state: SimState,
}

/// Offsets into the flat state vector `[poses | k | p̄ | δ̂]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    m: usize,
    resilient: bool,
}

impl Layout {
    fn len(&self) -> usize {
        3 * self.n + self.m + if self.resilient { 4 * self.n } else { 0 }
    }
    fn k(&self) -> usize {
        3 * self.n
    }
    fn p_bar(&self) -> usize {
        3 * self.n + self.m
    }
    fn delta_hat(&self) -> usize {
        5 * self.n + self.m
    }

    fn pack(&self, s: &SimState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for p in &s.poses {
            v.extend([p.x, p.y, p.theta]);
        }
        v.extend(&s.gains);
        if let Some(obs) = &s.observer {
            for p in &obs.p_bar {
                v.extend([p.x, p.y]);
            }
            for d in &obs.delta_hat {
                v.extend([d.x, d.y]);
            }
        }
        v
    }

    fn unpack(&self, v: &[f64], t: f64, step: u64) -> SimState {
        let poses = v[..3 * self.n]
            .chunks(3)
            .map(|c| Pose::new(c[0], c[1], c[2]))
            .collect();
        let gains = v[self.k()..self.k() + self.m].to_vec();
        let observer = self.resilient.then(|| {
            let pairs = |off: usize| {
                v[off..off + 2 * self.n]
                    .chunks(2)
                    .map(|c| Vector2::new(c[0], c[1]))
                    .collect()
            };
            ObserverState {
                p_bar: pairs(self.p_bar()),
                delta_hat: pairs(self.delta_hat()),
            }
        });
        SimState {
            t,
            step,
            poses,
            gains,
            observer,
        }
    }
}

fn controller_poses(
    scenario: &Scenario,
    t: f64,
    poses: &[Pose],
    observer: Option<&ObserverState>,
) -> Vec<Pose> {
    match observer {
        Some(obs) => poses
            .iter()
            .zip(&obs.p_bar)
            .map(|(p, pb)| Pose {
                x: pb.x,
                y: pb.y,
                theta: p.theta,
            })
            .collect(),
        None => poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let ph = p.position() + scenario.faults.sensor_fault(i, t);
                Pose {
                    x: ph.x,
                    y: ph.y,
                    theta: p.theta,
                }
            })
            .collect(),
    }
}

/// Everything derived from one state evaluation.
struct Evaluation<'t> {
    rates: Vec<f64>,
    network: NetworkEval<'t>,
    ctrl_poses: Vec<Pose>,
    /// Rates of the controller states `(p_ctrl, θ)`.
    ctrl_rates: Vec<Vector3<f64>>,
    /// Nominal closed-loop rates `ū`.
    law_rates: Vec<Vector3<f64>>,
    k_rates: DVector<f64>,
    law_k_rates: DVector<f64>,
    w: Vec<WTermBreakdown>,
    observer: Option<ObserverOutput>,
}

pub struct Simulator<'s> {
    scenario: &'s Scenario,
    pack: IncidencePack,
    layout: Layout,
    leader_start: Vector2<f64>,
}

impl<'s> Simulator<'s> {
    pub fn new(scenario: &'s Scenario) -> Result<Self> {
        scenario.validate()?;
        let leader_start = scenario
            .leader
            .as_ref()
            .map_or(Vector2::zeros(), |l| scenario.initial_poses[l.index].position());
        Ok(Self {
            scenario,
            pack: graph::build_incidence(&scenario.topology),
            layout: Layout {
                n: scenario.n(),
                m: scenario.topology.edge_count(),
                resilient: scenario.mode == Mode::Resilient,
            },
            leader_start,
        })
    }

    pub fn incidence(&self) -> &IncidencePack {
        &self.pack
    }

    pub fn initial_state(&self) -> SimState {
        let sc = self.scenario;
        let observer = (sc.mode == Mode::Resilient).then(|| {
            let p_hat: Vec<Vector2<f64>> = sc
                .initial_poses
                .iter()
                .enumerate()
                .map(|(i, p)| p.position() + sc.faults.sensor_fault(i, 0.0))
                .collect();
            ObserverState::from_measurements(&p_hat)
        });
        SimState {
            t: 0.0,
            step: 0,
            poses: sc.initial_poses.clone(),
            gains: sc.gain_init.clone(),
            observer,
        }
    }

    fn fovs(&self) -> Fovs<'s> {
        Fovs::PerRobot(&self.scenario.fov)
    }

    fn evaluate(&self, state: &SimState) -> Result<Evaluation<'s>> {
        let sc = self.scenario;
        let topo = &sc.topology;
        let n = sc.n();
        let t = state.t;
        let ctrl_poses = controller_poses(sc, t, &state.poses, state.observer.as_ref());
        let gains = GainState {
            k: state.gains.clone(),
        };
        let network = NetworkEval::new(&ctrl_poses, &gains, topo, self.fovs())?;

        let mut law: Vec<Vector3<f64>> = match sc.mode {
            Mode::Baseline => (0..n)
                .map(|i| adaptive::baseline_control_u(i, &ctrl_poses, topo, self.fovs()))
                .collect::<Result<_>>()?,
            _ => network.controls().to_vec(),
        };
        let law_rates = law.clone();
        if let Some(leader) = &sc.leader {
            let v = leader.profile.velocity(t, &self.leader_start);
            let u = &mut law[leader.index];
            if leader.override_control {
                *u = Vector3::new(v.x, v.y, 0.0);
            } else {
                u.x += v.x;
                u.y += v.y;
            }
        }

        let (law_k_rates, w) = network.gain_rates(sc.eps_alpha);
        let k_rates = match sc.mode {
            Mode::Baseline => DVector::zeros(law_k_rates.len()),
            _ if sc.freeze_gains => DVector::zeros(law_k_rates.len()),
            _ => {
                let mut r = law_k_rates.clone();
                if let Some(floor) = sc.gain_floor {
                    for (rate, &k) in r.iter_mut().zip(&state.gains) {
                        if k <= floor && *rate < 0.0 {
                            *rate = 0.0;
                        }
                    }
                }
                r
            }
        };

        let mut rates = vec![0.0; self.layout.len()];
        let mut ctrl_rates = Vec::with_capacity(n);
        let observer = match &state.observer {
            Some(obs) => {
                let p_hat: Vec<Vector2<f64>> = state
                    .poses
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p.position() + sc.faults.sensor_fault(i, t))
                    .collect();
                let u_p: Vec<Vector2<f64>> = law.iter().map(|u| u.xy()).collect();
                let out = resilience::observer_step(&p_hat, obs, &u_p, &sc.observer);
                for i in 0..n {
                    let pb = out.p_bar_rate[i];
                    let dh = out.delta_hat_rate[i];
                    let off = self.layout.p_bar() + 2 * i;
                    rates[off] = pb.x;
                    rates[off + 1] = pb.y;
                    let off = self.layout.delta_hat() + 2 * i;
                    rates[off] = dh.x;
                    rates[off + 1] = dh.y;
                    ctrl_rates.push(Vector3::new(pb.x, pb.y, law[i].z));
                }
                Some(out)
            }
            None => None,
        };
        for i in 0..n {
            let du = sc.faults.actuator_fault(i, t);
            let u = law[i];
            rates[3 * i] = u.x + du.x;
            rates[3 * i + 1] = u.y + du.y;
            rates[3 * i + 2] = u.z;
            if observer.is_none() {
                // the controller sees p̂ = p + δ^p
                let ds = sc.faults.sensor_fault_rate(i, t);
                ctrl_rates.push(Vector3::new(u.x + du.x + ds.x, u.y + du.y + ds.y, u.z));
            }
        }
        let k_off = self.layout.k();
        rates[k_off..k_off + k_rates.len()].copy_from_slice(k_rates.as_slice());

        Ok(Evaluation {
            rates,
            network,
            ctrl_poses,
            ctrl_rates,
            law_rates,
            k_rates,
            law_k_rates,
            w,
            observer,
        })
    }

    fn lyapunov_from(&self, ev: &Evaluation<'_>) -> LyapunovEval {
        let net = &ev.network;
        let topo = &self.scenario.topology;
        let vdot_assembled = net.vdot_chain(&ev.ctrl_rates, &ev.k_rates);
        let vdot_quadratic = net.vdot_quadratic(&self.pack);

        // the closed form assumes ṡ = ū and k̇ = -∇_k F + w with w at equality
        let gs: Vec<Vector3<f64>> = net
            .grad_s_vhat()
            .iter()
            .zip(net.grad_s_f())
            .map(|(a, b)| a + b)
            .collect();
        let mut exo = 0.0;
        for ((g, r), u) in gs.iter().zip(&ev.ctrl_rates).zip(&ev.law_rates) {
            exo += g.dot(&(r - u));
        }
        for (idx, w) in ev.w.iter().enumerate() {
            exo += w.alpha_ij * (ev.k_rates[idx] - ev.law_k_rates[idx]);
            if w.clamped {
                let e = topo.edge(idx);
                let num = w.gamma_ij
                    + w.beta_i / topo.degree(e.tail) as f64
                    + w.beta_j / topo.degree(e.head) as f64;
                exo -= num;
            }
        }
        LyapunovEval {
            v: net.lyapunov(),
            vhat: net.vhat(),
            f: net.cost(),
            vdot_assembled,
            vdot_quadratic,
            vdot_exogenous: exo,
        }
    }

    pub fn lyapunov_eval(&self, state: &SimState) -> Result<LyapunovEval> {
        Ok(self.lyapunov_from(&self.evaluate(state)?))
    }

    fn record_from(&self, state: &SimState, ev: &Evaluation<'_>) -> TraceRecord {
        let sc = self.scenario;
        let n = sc.n();
        let t = state.t;
        let net = &ev.network;
        let margins = containment_margins(&sc.topology, &ev.ctrl_poses, &sc.fov).margins;
        let true_margins = containment_margins(&sc.topology, &state.poses, &sc.fov).margins;
        let (e_tilde, delta_hat) = match (&ev.observer, &state.observer) {
            (Some(out), Some(obs)) => (out.e_tilde.clone(), obs.delta_hat.clone()),
            _ => (vec![Vector2::zeros(); n], vec![Vector2::zeros(); n]),
        };
        let delta_tilde = (0..n)
            .map(|i| sc.faults.sensor_fault(i, t) - delta_hat[i])
            .collect();
        let disturbance = (0..n)
            .map(|i| resilience::disturbance(&sc.faults, i, t))
            .collect();
        let uub = ev.observer.as_ref().map(|out| {
            let gp: Vec<Vector2<f64>> = net
                .grad_s_vhat()
                .iter()
                .zip(net.grad_s_f())
                .map(|(a, b)| (a + b).xy())
                .collect();
            resilience::uub_bound_monitor(&net.grad_k_f(), &gp, &out.e_tilde, &sc.observer)
        });
        let near = margins.iter().enumerate().any(|(idx, &m)| {
            let tail = sc.topology.edge(idx).tail;
            m < NEAR_VIOLATION_FRACTION * sc.fov[tail].barrier_margin
        });
        TraceRecord {
            step: state.step,
            t,
            poses: state.poses.clone(),
            controller_positions: ev.ctrl_poses.iter().map(|p| p.position()).collect(),
            gains: state.gains.clone(),
            robot_costs: (0..n).map(|i| net.robot_cost(i)).collect(),
            lyapunov: self.lyapunov_from(ev),
            e_tilde,
            delta_hat,
            delta_tilde,
            disturbance,
            margins,
            true_margins,
            clamped_edges: ev.w.iter().filter(|w| w.clamped).count(),
            near_violation: near,
            negative_gain: state.gains.iter().any(|&k| k < 0.0),
            uub,
        }
    }

    /// Trace record for an arbitrary state.
    pub fn record(&self, state: &SimState) -> Result<TraceRecord> {
        let ev = self.evaluate(state)?;
        Ok(self.record_from(state, &ev))
    }

    fn advance(&self, state: &SimState, k1: &[f64]) -> Result<SimState> {
        let h = self.scenario.dt;
        let y0 = self.layout.pack(state);
        let stage = |coef: f64, k: &[f64], t: f64| -> Result<Vec<f64>> {
            let y: Vec<f64> = y0.iter().zip(k).map(|(y, k)| y + coef * k).collect();
            let s = self.layout.unpack(&y, t, state.step);
            Ok(self.evaluate(&s)?.rates)
        };
        let k2 = stage(0.5 * h, k1, state.t + 0.5 * h)?;
        let k3 = stage(0.5 * h, &k2, state.t + 0.5 * h)?;
        let k4 = stage(h, &k3, state.t + h)?;
        let y: Vec<f64> = (0..y0.len())
            .map(|i| y0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("state", format!("non-finite entry {bad}")));
        }
        let step = state.step + 1;
        Ok(self.layout.unpack(&y, step as f64 * h, step))
    }

    /// One RK4 step and the record of the new state.
    pub fn step(&self, state: &SimState) -> Result<(SimState, TraceRecord)> {
        let ev = self.evaluate(state)?;
        let next = self.advance(state, &ev.rates)?;
        let ev_next = self.evaluate(&next)?;
        let rec = self.record_from(&next, &ev_next);
        Ok((next, rec))
    }
}

struct Stats {
    max_e_tilde: f64,
    min_margin: f64,
    min_true_margin: f64,
    max_div: f64,
    max_vdot: f64,
    max_v_increase: f64,
    clamp_events: u64,
    negative_gain: bool,
    last_v: f64,
    l2: Option<L2Accumulator>,
}

impl Stats {
    fn push(&mut self, rec: &TraceRecord) {
        self.max_e_tilde = self.max_e_tilde.max(rec.max_e_tilde());
        self.min_margin = self.min_margin.min(rec.min_margin());
        self.min_true_margin = rec.true_margins.iter().cloned().fold(self.min_true_margin, f64::min);
        for (p, c) in rec.poses.iter().zip(&rec.controller_positions) {
            self.max_div = self.max_div.max((p.position() - c).norm());
        }
        self.max_vdot = self.max_vdot.max(rec.lyapunov.vdot_assembled);
        self.clamp_events += rec.clamped_edges as u64;
        self.negative_gain |= rec.negative_gain;
        if let Some(acc) = &mut self.l2 {
            acc.push(&rec.error_sample());
        }
    }

    fn push_v(&mut self, v: f64) {
        self.max_v_increase = self.max_v_increase.max(v - self.last_v);
        self.last_v = v;
    }
}

/// Run the scenario to its horizon or to the first violation.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    let sim = Simulator::new(scenario)?;
    let theorem1 = graph::theorem1_certificate(&sim.pack, graph::DEFAULT_EIG_TOL)?;
    let sofb = match scenario.mode {
        Mode::Resilient => Some(resilience::verify_sofb(&scenario.observer)?),
        _ => None,
    };
    let mut state = sim.initial_state();
    let mut ev = sim.evaluate(&state)?;
    let rec0 = sim.record_from(&state, &ev);
    let mut stats = Stats {
        max_e_tilde: 0.0,
        min_margin: f64::INFINITY,
        min_true_margin: f64::INFINITY,
        max_div: 0.0,
        max_vdot: f64::NEG_INFINITY,
        max_v_increase: f64::NEG_INFINITY,
        clamp_events: 0,
        negative_gain: false,
        last_v: rec0.lyapunov.v,
        l2: (scenario.mode == Mode::Resilient).then(|| L2Accumulator::new(&scenario.observer)),
    };
    stats.push(&rec0);
    let initial_v = rec0.lyapunov.v;
    let mut trace = vec![rec0.clone()];
    let mut last = rec0;
    let mut outcome = Outcome::Completed;

    for _ in 0..scenario.steps() {
        let stepped = sim
            .advance(&state, &ev.rates)
            .and_then(|next| sim.evaluate(&next).map(|e| (next, e)));
        let (next, next_ev) = match stepped {
            Ok(v) => v,
            Err(err) => {
                outcome = Outcome::from_error(err, state.t + scenario.dt);
                break;
            }
        };
        let rec = sim.record_from(&next, &next_ev);
        stats.push(&rec);
        stats.push_v(rec.lyapunov.v);
        if next.step % scenario.log_every as u64 == 0 {
            trace.push(rec.clone());
        }
        last = rec;
        state = next;
        ev = next_ev;
    }

    let summary = RunSummary {
        mode: scenario.mode,
        containment_preserved: outcome.is_completed() && stats.min_margin > 0.0,
        outcome,
        steps: state.step,
        t_final: state.t,
        initial_v,
        final_v: last.lyapunov.v,
        final_vhat: last.lyapunov.vhat,
        final_f: last.lyapunov.f,
        final_robot_costs: last.robot_costs.clone(),
        final_gains: last.gains.clone(),
        max_e_tilde: stats.max_e_tilde,
        min_margin: stats.min_margin,
        min_true_margin: stats.min_true_margin,
        max_estimate_divergence: stats.max_div,
        max_vdot: stats.max_vdot,
        max_v_increase: stats.max_v_increase,
        clamp_events: stats.clamp_events,
        negative_gain_seen: stats.negative_gain,
        theorem1,
        sofb,
        l2: stats.l2.as_ref().map(|a| a.report()),
    };
    Ok(RunOutput {
        trace,
        summary,
        final_state: state,
    })
}

fn edge_label(e: &EdgeRef) -> String {
    format!("{}_{}", e.tail + 1, e.head + 1)
}

/// CSV header; see the README for the column order.
pub fn csv_header(topology: &Topology) -> Vec<String> {
    let n = topology.n();
    let mut h: Vec<String> = [
        "step", "t", "V", "Vhat", "F", "Vdot", "Vdot_quad", "Vdot_exo", "min_margin",
        "clamped_edges", "near_violation", "negative_gain",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 1..=n {
        h.extend([format!("x_{i}"), format!("y_{i}"), format!("theta_{i}")]);
    }
    for i in 1..=n {
        h.extend([format!("xc_{i}"), format!("yc_{i}")]);
    }
    for e in topology.edges() {
        h.push(format!("k_{}", edge_label(e)));
    }
    for i in 1..=n {
        h.push(format!("F_{i}"));
    }
    for i in 1..=n {
        h.extend([format!("etilde_x_{i}"), format!("etilde_y_{i}")]);
    }
    for i in 1..=n {
        h.extend([format!("dhat_x_{i}"), format!("dhat_y_{i}")]);
    }
    for e in topology.edges() {
        h.push(format!("margin_{}", edge_label(e)));
    }
    for e in topology.edges() {
        h.push(format!("true_margin_{}", edge_label(e)));
    }
    h
}

pub fn write_trace_csv<W: Write>(mut w: W, topology: &Topology, trace: &[TraceRecord]) -> Result<()> {
    writeln!(w, "{}", csv_header(topology).join(","))?;
    for r in trace {
        let l = &r.lyapunov;
        let mut row: Vec<String> = vec![
            r.step.to_string(),
            r.t.to_string(),
            l.v.to_string(),
            l.vhat.to_string(),
            l.f.to_string(),
            l.vdot_assembled.to_string(),
            l.vdot_quadratic.to_string(),
            l.vdot_exogenous.to_string(),
            r.min_margin().to_string(),
            r.clamped_edges.to_string(),
            u8::from(r.near_violation).to_string(),
            u8::from(r.negative_gain).to_string(),
        ];
        for p in &r.poses {
            row.extend([p.x.to_string(), p.y.to_string(), p.theta.to_string()]);
        }
        for p in &r.controller_positions {
            row.extend([p.x.to_string(), p.y.to_string()]);
        }
        row.extend(r.gains.iter().map(|v| v.to_string()));
        row.extend(r.robot_costs.iter().map(|v| v.to_string()));
        for e in &r.e_tilde {
            row.extend([e.x.to_string(), e.y.to_string()]);
        }
        for d in &r.delta_hat {
            row.extend([d.x.to_string(), d.y.to_string()]);
        }
        row.extend(r.margins.iter().map(|v| v.to_string()));
        row.extend(r.true_margins.iter().map(|v| v.to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_summary_json<W: Write>(w: W, summary: &RunSummary) -> Result<()> {
    serde_json::to_writer_pretty(w, summary).map_err(|e| Error::Config(e.to_string()))
}
