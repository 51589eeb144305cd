//! Fault injection and the observer protocol.

use nalgebra::{Matrix2, Matrix4, Vector2};
use serde::{Deserialize, Serialize};

use super::signal::PlanarSignal;
use crate::error::{Error, Result};

/// Sensor and actuator faults per robot, indexed 0-based.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FaultSchedule {
    pub sensor: Vec<PlanarSignal>,
    pub actuator: Vec<PlanarSignal>,
}

/// An assumption check failure on one robot's fault channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultViolation {
    pub robot: usize,
    pub channel: &'static str,
    pub reason: &'static str,
}

impl FaultSchedule {
    pub fn none(n: usize) -> Self {
        Self {
            sensor: vec![PlanarSignal::default(); n],
            actuator: vec![PlanarSignal::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.sensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor.is_empty()
    }

    pub fn is_fault_free(&self) -> bool {
        self.sensor.iter().chain(&self.actuator).all(|s| s.is_zero())
    }

    pub fn sensor_fault(&self, i: usize, t: f64) -> Vector2<f64> {
        self.sensor[i].eval(t)
    }

    pub fn sensor_fault_rate(&self, i: usize, t: f64) -> Vector2<f64> {
        self.sensor[i].derivative(t)
    }

    pub fn actuator_fault(&self, i: usize, t: f64) -> Vector2<f64> {
        self.actuator[i].eval(t)
    }

    /// Actuator faults must be bounded; sensor faults need a bounded derivative.
    pub fn fault_bound_violations(&self) -> Vec<FaultViolation> {
        let mut out = Vec::new();
        for (robot, s) in self.actuator.iter().enumerate() {
            if !s.is_bounded() {
                out.push(FaultViolation {
                    robot,
                    channel: "actuator",
                    reason: "unbounded actuator fault",
                });
            }
        }
        for (robot, s) in self.sensor.iter().enumerate() {
            if !s.has_bounded_derivative() {
                out.push(FaultViolation {
                    robot,
                    channel: "sensor",
                    reason: "sensor fault derivative is unbounded",
                });
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            sensor: self.sensor.iter().map(|s| s.scaled(c)).collect(),
            actuator: self.actuator.iter().map(|s| s.scaled(c)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultedSignals {
    pub p_hat: Vec<Vector2<f64>>,
    pub u_hat: Vec<Vector2<f64>>,
}

/// `p̂ = p + δ^p`, `û = u + δ^u`. Headings are never faulted.
pub fn apply_faults(
    t: f64,
    positions: &[Vector2<f64>],
    control: &[Vector2<f64>],
    schedule: &FaultSchedule,
) -> FaultedSignals {
    FaultedSignals {
        p_hat: positions
            .iter()
            .enumerate()
            .map(|(i, p)| p + schedule.sensor_fault(i, t))
            .collect(),
        u_hat: control
            .iter()
            .enumerate()
            .map(|(i, u)| u + schedule.actuator_fault(i, t))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    /// Estimate of the uncorrupted position.
    pub p_bar: Vec<Vector2<f64>>,
    /// Estimate of the sensor fault.
    pub delta_hat: Vec<Vector2<f64>>,
}

impl ObserverState {
    /// `p̄(0) = p̂(0)`, `δ̂(0) = 0`, so `ẽ(0) = 0`.
    pub fn from_measurements(p_hat: &[Vector2<f64>]) -> Self {
        Self {
            p_bar: p_hat.to_vec(),
            delta_hat: vec![Vector2::zeros(); p_hat.len()],
        }
    }

    /// `ẽ_i = p̂_i - p̄_i - δ̂_i`.
    pub fn error(&self, i: usize, p_hat: &Vector2<f64>) -> Vector2<f64> {
        p_hat - self.p_bar[i] - self.delta_hat[i]
    }
}

/// Observer gains and the weights used to certify them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HinfGains {
    /// Row-major 2x2.
    pub f1: [[f64; 2]; 2],
    pub f2: [[f64; 2]; 2],
    pub gamma: f64,
    /// Weight on the error state `[ẽ; δ̃]`, row-major 4x4.
    pub q_bar: [[f64; 4]; 4],
    /// Weight on the feedback input, row-major 4x4.
    pub r_bar: [[f64; 4]; 4],
    /// Drift matrix of the error model; zero for single integrators.
    pub a: [[f64; 2]; 2],
}

fn eye<const N: usize>(s: f64) -> [[f64; N]; N] {
    let mut m = [[0.0; N]; N];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = s;
    }
    m
}

impl Default for HinfGains {
    fn default() -> Self {
        Self {
            f1: eye(1.0),
            f2: eye(2.0),
            gamma: 10.0,
            q_bar: eye(1.0),
            r_bar: eye(1.0),
            a: eye(0.0),
        }
    }
}

pub(crate) fn m2(rows: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1])
}

pub(crate) fn m4(rows: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| rows[r][c])
}

impl HinfGains {
    pub fn zero() -> Self {
        Self {
            f1: eye(0.0),
            f2: eye(0.0),
            ..Self::default()
        }
    }

    pub fn f1(&self) -> Matrix2<f64> {
        m2(&self.f1)
    }

    pub fn f2(&self) -> Matrix2<f64> {
        m2(&self.f2)
    }

    pub fn a(&self) -> Matrix2<f64> {
        m2(&self.a)
    }

    pub fn q_bar(&self) -> Matrix4<f64> {
        m4(&self.q_bar)
    }

    pub fn r_bar(&self) -> Matrix4<f64> {
        m4(&self.r_bar)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .f1
            .iter()
            .chain(&self.f2)
            .chain(&self.a)
            .flatten()
            .chain(self.q_bar.iter().chain(&self.r_bar).flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observer", "entries must be finite"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("observer.gamma", "must be positive and finite"));
        }
        Ok(())
    }

    /// Smallest eigenvalue of the symmetric part of `F2`.
    pub fn f2_sym_min_eig(&self) -> f64 {
        let f2 = self.f2();
        let sym = 0.5 * (f2 + f2.transpose());
        sym.symmetric_eigenvalues().min()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverOutput {
    pub e_tilde: Vec<Vector2<f64>>,
    /// Corrected command `ū + (F1 + F2) ẽ`.
    pub u_tilde: Vec<Vector2<f64>>,
    pub p_bar_rate: Vec<Vector2<f64>>,
    pub delta_hat_rate: Vec<Vector2<f64>>,
}

/// One evaluation of the observer protocol.
pub fn observer_step(
    p_hat: &[Vector2<f64>],
    observer: &ObserverState,
    u_bar_p: &[Vector2<f64>],
    gains: &HinfGains,
) -> ObserverOutput {
    let f1 = gains.f1();
    let f12 = f1 + gains.f2();
    let n = p_hat.len();
    let mut out = ObserverOutput {
        e_tilde: Vec::with_capacity(n),
        u_tilde: Vec::with_capacity(n),
        p_bar_rate: Vec::with_capacity(n),
        delta_hat_rate: Vec::with_capacity(n),
    };
    for i in 0..n {
        let e = observer.error(i, &p_hat[i]);
        let u = u_bar_p[i] + f12 * e;
        out.e_tilde.push(e);
        out.u_tilde.push(u);
        out.p_bar_rate.push(u);
        out.delta_hat_rate.push(-(f1 * e));
    }
    out
}

/// Per-robot linear error model `ẋ = A_F1 x + d` with `x = [ẽ; δ̃]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDynamics {
    pub a_f1: Matrix4<f64>,
    /// Identity: `d = [δ^u + δ̇^p; δ̇^p]` enters every state.
    pub disturbance_map: Matrix4<f64>,
}

pub fn error_dynamics_matrix(gains: &HinfGains) -> ErrorDynamics {
    let a = gains.a();
    let blocks = [[a - gains.f2(), -a], [gains.f1(), Matrix2::zeros()]];
    let mut a_f1 = Matrix4::zeros();
    for (br, row) in blocks.iter().enumerate() {
        for (bc, blk) in row.iter().enumerate() {
            a_f1.fixed_view_mut::<2, 2>(2 * br, 2 * bc).copy_from(blk);
        }
    }
    ErrorDynamics {
        a_f1,
        disturbance_map: Matrix4::identity(),
    }
}

/// `d_i = [δ^u_i + δ̇^p_i; δ̇^p_i]`, stacked as a 4-vector.
pub fn disturbance(
    schedule: &FaultSchedule,
    i: usize,
    t: f64,
) -> nalgebra::Vector4<f64> {
    let ddp = schedule.sensor_fault_rate(i, t);
    let du = schedule.actuator_fault(i, t);
    nalgebra::Vector4::new(du.x + ddp.x, du.y + ddp.y, ddp.x, ddp.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resilience::signal::Signal;

    fn sig(s: &str) -> PlanarSignal {
        PlanarSignal::both(s.parse::<Signal>().unwrap())
    }

    #[test]
    fn zero_schedule_is_identity() {
        let p = vec![Vector2::new(1.0, 2.0), Vector2::new(-3.0, 0.5)];
        let u = vec![Vector2::new(0.1, 0.2), Vector2::new(0.0, -1.0)];
        let out = apply_faults(7.0, &p, &u, &FaultSchedule::none(2));
        assert_eq!(out.p_hat, p);
        assert_eq!(out.u_hat, u);
    }

    #[test]
    fn scenario_faults() {
        let mut sched = FaultSchedule::none(6);
        sched.sensor[2] = sig("ramp:0.2");
        for i in [0, 1, 2, 4, 5] {
            sched.actuator[i] = sig("sin:amp=1.5,freq=1.0");
        }
        let p = vec![Vector2::zeros(); 6];
        let out = apply_faults(10.0, &p, &p, &sched);
        assert!((out.p_hat[2] - Vector2::new(2.0, 2.0)).norm() < 1e-12);
        assert_eq!(out.p_hat[3], Vector2::zeros());
        let out = apply_faults(0.25, &p, &p, &sched);
        assert!((out.u_hat[0] - Vector2::new(1.5, 1.5)).norm() < 1e-12);
        assert_eq!(out.u_hat[3], Vector2::zeros());
        assert!(sched.fault_bound_violations().is_empty());
    }

    #[test]
    fn unbounded_actuator_fault_violates_assumption() {
        let mut sched = FaultSchedule::none(2);
        sched.actuator[1] = sig("ramp:1.0");
        let v = sched.fault_bound_violations();
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].robot, v[0].channel), (1, "actuator"));
    }

    #[test]
    fn quiescent_observer() {
        let p_hat = vec![Vector2::new(1.0, -1.0)];
        let obs = ObserverState::from_measurements(&p_hat);
        let u = vec![Vector2::new(0.3, 0.4)];
        let out = observer_step(&p_hat, &obs, &u, &HinfGains::default());
        assert_eq!(out.e_tilde[0], Vector2::zeros());
        assert_eq!(out.u_tilde[0], u[0]);
        assert_eq!(out.delta_hat_rate[0], Vector2::zeros());
    }

    #[test]
    fn zero_f1_freezes_fault_estimate() {
        let gains = HinfGains {
            f1: [[0.0; 2]; 2],
            ..HinfGains::default()
        };
        let obs = ObserverState {
            p_bar: vec![Vector2::new(0.0, 0.0)],
            delta_hat: vec![Vector2::new(0.1, 0.0)],
        };
        let p_hat = vec![Vector2::new(0.5, 0.2)];
        let u = vec![Vector2::new(1.0, 1.0)];
        let out = observer_step(&p_hat, &obs, &u, &gains);
        let e = Vector2::new(0.4, 0.2);
        assert!((out.e_tilde[0] - e).norm() < 1e-15);
        assert_eq!(out.delta_hat_rate[0], Vector2::zeros());
        assert!((out.u_tilde[0] - (u[0] + 2.0 * e)).norm() < 1e-15);
    }

    #[test]
    fn observer_identity_holds() {
        let p_hat = vec![Vector2::new(0.7, -0.2), Vector2::new(3.0, 1.0)];
        let obs = ObserverState {
            p_bar: vec![Vector2::new(0.1, 0.1), Vector2::new(2.0, 2.0)],
            delta_hat: vec![Vector2::new(0.3, -0.4), Vector2::new(0.5, 0.0)],
        };
        let out = observer_step(&p_hat, &obs, &[Vector2::zeros(); 2], &HinfGains::default());
        for i in 0..2 {
            let lhs = out.e_tilde[i] + obs.delta_hat[i] + obs.p_bar[i];
            assert!((lhs - p_hat[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn error_matrix_blocks_and_spectrum() {
        assert_eq!(error_dynamics_matrix(&HinfGains::zero()).a_f1, Matrix4::zeros());
        let (f, g) = (2.5, 0.7);
        let gains = HinfGains {
            f1: eye(g),
            f2: eye(f),
            ..HinfGains::default()
        };
        let a = error_dynamics_matrix(&gains).a_f1;
        // per axis the block is [[-f, 0], [g, 0]]: eigenvalues -f and 0
        let mut eig: Vec<f64> = a
            .complex_eigenvalues()
            .iter()
            .map(|c| {
                assert!(c.im.abs() < 1e-12);
                c.re
            })
            .collect();
        eig.sort_by(f64::total_cmp);
        let expected = [-f, -f, 0.0, 0.0];
        for (x, y) in eig.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// One robot, constant sensor fault `c`, still robot, scalar gains per
    /// axis. With `x = [ẽ; δ̃]` the error model is `ẽ' = -f ẽ`, `δ̃' = g ẽ`,
    /// so `ẽ(t) = ẽ0 e^{-ft}` and `δ̃(t) = δ̃0 + (g/f) ẽ0 (1 - e^{-ft})`.
    fn constant_fault_run(f: f64, g: f64) {
        let gains = HinfGains {
            f1: eye(g),
            f2: eye(f),
            ..HinfGains::default()
        };
        let c = Vector2::new(0.5, -0.3);
        let p = Vector2::new(1.0, 1.0);
        // observer starts at the true position with no fault estimate
        let mut obs = ObserverState {
            p_bar: vec![p],
            delta_hat: vec![Vector2::zeros()],
        };
        let (e0, dtil0) = (c, c);
        let dt = 1e-3;
        let rates = |o: &ObserverState| observer_step(&[p + c], o, &[Vector2::zeros()], &gains);
        for step in 1..=8000 {
            let k1 = rates(&obs);
            let mid = ObserverState {
                p_bar: vec![obs.p_bar[0] + 0.5 * dt * k1.p_bar_rate[0]],
                delta_hat: vec![obs.delta_hat[0] + 0.5 * dt * k1.delta_hat_rate[0]],
            };
            let k2 = rates(&mid);
            obs.p_bar[0] += dt * k2.p_bar_rate[0];
            obs.delta_hat[0] += dt * k2.delta_hat_rate[0];
            let t = step as f64 * dt;
            let decay = (-f * t).exp();
            let e = obs.error(0, &(p + c));
            assert!((e - e0 * decay).norm() < 1e-6);
            let dtil = c - obs.delta_hat[0];
            assert!((dtil - (dtil0 + (g / f) * e0 * (1.0 - decay))).norm() < 1e-6);
        }
    }

    #[test]
    fn constant_fault_closed_form() {
        constant_fault_run(2.0, 0.7);
    }

    #[test]
    fn fault_estimate_converges_when_f1_cancels() {
        // δ̃(∞) = δ̃0 + ẽ0 = 0 for g = -f when ẽ0 = δ̃0
        constant_fault_run(2.0, -2.0);
    }
}
