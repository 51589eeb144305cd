//! Fault injection, the observer protocol and its diagnostics.

pub mod observer;
pub mod signal;
pub mod sofb;

use nalgebra::{DVector, Vector2, Vector4};
use serde::Serialize;

pub use observer::{
    apply_faults, disturbance, error_dynamics_matrix, observer_step, ErrorDynamics,
    FaultSchedule, FaultViolation, FaultedSignals, HinfGains, ObserverOutput, ObserverState,
};
pub use signal::{PlanarSignal, Signal, SignalTerm};
pub use sofb::{sofb_residuals, verify_sofb, SofbCertificate, SofbProblem};

/// Disturbance energy below which the L2 ratio is undefined.
pub const MIN_DISTURBANCE_ENERGY: f64 = 1e-12;
/// Denominator below which `Ω` is reported as infinite.
pub const MIN_UUB_DENOMINATOR: f64 = 1e-12;

/// Error-system state `x = [ẽ; δ̃]` and disturbance `d` of every robot at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub t: f64,
    pub x: Vec<Vector4<f64>>,
    pub d: Vec<Vector4<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L2GainReport {
    /// `∫ xᵀQ̄x + u_Tᵀ R̄ u_T dt` with `u_T = -K̄C̄x`.
    pub output_energy: f64,
    pub disturbance_energy: f64,
    /// `None` when the disturbance energy vanishes.
    pub ratio: Option<f64>,
    pub gamma_sq: f64,
}

/// Running trapezoidal integrals for [`L2GainReport`].
#[derive(Debug, Clone)]
pub struct L2Accumulator {
    kc: nalgebra::DMatrix<f64>,
    q: nalgebra::Matrix4<f64>,
    r: nalgebra::Matrix4<f64>,
    gamma: f64,
    last: Option<(f64, f64, f64)>,
    output_energy: f64,
    disturbance_energy: f64,
}

impl L2Accumulator {
    pub fn new(gains: &HinfGains) -> Self {
        let prob = SofbProblem::from_gains(gains);
        Self {
            kc: &prob.k * &prob.c,
            q: gains.q_bar(),
            r: gains.r_bar(),
            gamma: gains.gamma,
            last: None,
            output_energy: 0.0,
            disturbance_energy: 0.0,
        }
    }

    /// `xᵀQ̄x + u_Tᵀ R̄ u_T` summed over robots, with `u_T = -K̄C̄x`.
    fn output_power(&self, s: &ErrorSample) -> f64 {
        s.x.iter()
            .map(|x| {
                let u = -(&self.kc * DVector::from_column_slice(x.as_slice()));
                let u = Vector4::from_column_slice(u.as_slice());
                x.dot(&(self.q * x)) + u.dot(&(self.r * u))
            })
            .sum()
    }

    pub fn push(&mut self, s: &ErrorSample) {
        let out = self.output_power(s);
        let dist: f64 = s.d.iter().map(|d| d.norm_squared()).sum();
        if let Some((t0, out0, dist0)) = self.last {
            let h = s.t - t0;
            self.output_energy += 0.5 * h * (out0 + out);
            self.disturbance_energy += 0.5 * h * (dist0 + dist);
        }
        self.last = Some((s.t, out, dist));
    }

    pub fn report(&self) -> L2GainReport {
        L2GainReport {
            output_energy: self.output_energy,
            disturbance_energy: self.disturbance_energy,
            ratio: (self.disturbance_energy > MIN_DISTURBANCE_ENERGY)
                .then(|| self.output_energy / self.disturbance_energy),
            gamma_sq: self.gamma * self.gamma,
        }
    }
}

/// Trapezoidal energy ratio of performance output to disturbance.
pub fn l2_gain_report(samples: &[ErrorSample], gains: &HinfGains) -> L2GainReport {
    let mut acc = L2Accumulator::new(gains);
    for s in samples {
        acc.push(s);
    }
    acc.report()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UubStatus {
    /// `‖∇_k F‖² / (‖∇_p̄(V̂ + F)‖ ‖F1 + F2‖)`; `+∞` when the denominator vanishes.
    pub omega: f64,
    pub omega_infinite: bool,
    pub e_norm: f64,
    /// `‖ẽ‖ < Ω`, so the perturbation term cannot outweigh `-‖∇_k F‖²`.
    pub vdot_negative_guaranteed: bool,
    /// Outside the certified-decrease region.
    pub inside_ultimate_set: bool,
}

/// Compare the observer error with the radius below which `V̇ < 0` is certified.
pub fn uub_bound_monitor(
    grad_k_f: &DVector<f64>,
    grad_pbar_v: &[Vector2<f64>],
    e_tilde: &[Vector2<f64>],
    gains: &HinfGains,
) -> UubStatus {
    let num = grad_k_f.norm_squared();
    let gv = grad_pbar_v.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
    // ‖I ⊗ (F1 + F2)‖₂ = ‖F1 + F2‖₂
    let op = (gains.f1() + gains.f2()).singular_values().max();
    let e_norm = e_tilde.iter().map(|e| e.norm_squared()).sum::<f64>().sqrt();
    let den = gv * op;
    let (omega, omega_infinite) = if den < MIN_UUB_DENOMINATOR {
        (f64::INFINITY, true)
    } else {
        (num / den, false)
    };
    let guaranteed = num > 0.0 && e_norm < omega;
    UubStatus {
        omega,
        omega_infinite,
        e_norm,
        vdot_negative_guaranteed: guaranteed,
        inside_ultimate_set: !guaranteed,
    }
}
