//! Triangular field-of-view geometry and the pairwise potentials.
//!
//! Every pairwise quantity is a function of the neighbour position expressed
//! in the observer's body frame, `e = R(-θ_i)(p_j - p_i)`. The containment
//! barrier `Φ` and the interaction-quality term `Ψ` are written in that
//! frame together with their first and second derivatives; world-frame
//! gradients follow by the chain rule.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar pose of one robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, kept in `(-π, π]` by [`Pose::new`].
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn with_position(&self, p: Vector2<f64>) -> Self {
        Self {
            x: p.x,
            y: p.y,
            theta: self.theta,
        }
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Field-of-view triangle and potential shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FovParams {
    /// Apex distance ahead of the robot origin along the heading (m).
    pub apex_offset: f64,
    /// Half aperture of the triangle (rad).
    pub half_angle: f64,
    /// Distance from the apex to each far vertex (m).
    pub range: f64,
    /// Desired neighbour location in the body frame (m).
    pub goal_point: [f64; 2],
    /// Gaussian standard deviations (m).
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Side distance beyond which the barrier contributes nothing (m).
    pub barrier_margin: f64,
}

impl Default for FovParams {
    fn default() -> Self {
        Self {
            apex_offset: 0.0,
            half_angle: PI / 6.0,
            range: 4.0,
            goal_point: [2.0, 0.0],
            sigma_x: 0.5,
            sigma_y: 0.5,
            barrier_margin: 0.3,
        }
    }
}

impl FovParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.apex_offset,
            self.half_angle,
            self.range,
            self.goal_point[0],
            self.goal_point[1],
            self.sigma_x,
            self.sigma_y,
            self.barrier_margin,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("fov", "all parameters must be finite"));
        }
        if !(self.half_angle > 0.0 && self.half_angle < FRAC_PI_2) {
            return Err(Error::invalid("fov.half_angle", "must lie in (0, π/2)"));
        }
        if self.range <= 0.0 {
            return Err(Error::invalid("fov.range", "must be positive"));
        }
        if self.sigma_x <= 0.0 || self.sigma_y <= 0.0 {
            return Err(Error::invalid("fov.sigma_x/sigma_y", "must be positive"));
        }
        if self.barrier_margin <= 0.0 {
            return Err(Error::invalid("fov.barrier_margin", "must be positive"));
        }
        let goal = Vector2::from(self.goal_point);
        if self.body_side_distances(&goal).iter().any(|&d| d <= 0.0) {
            return Err(Error::invalid(
                "fov.goal_point",
                "must lie strictly inside the triangle",
            ));
        }
        Ok(())
    }

    fn apex(&self) -> Vector2<f64> {
        Vector2::new(self.apex_offset, 0.0)
    }

    /// Inward unit normals and offsets: `d_l(e) = n_l·e + c_l`.
    ///
    /// Side 0 runs apex → left far vertex, side 1 is the far side, side 2
    /// runs right far vertex → apex.
    fn side_lines(&self) -> [(Vector2<f64>, f64); 3] {
        let (s, c) = self.half_angle.sin_cos();
        let apex = self.apex();
        let n0 = Vector2::new(s, -c);
        let n1 = Vector2::new(-1.0, 0.0);
        let n2 = Vector2::new(s, c);
        [
            (n0, -n0.dot(&apex)),
            (n1, self.apex_offset + self.range * c),
            (n2, -n2.dot(&apex)),
        ]
    }

    pub(crate) fn body_side_distances(&self, e: &Vector2<f64>) -> [f64; 3] {
        self.side_lines().map(|(n, c)| n.dot(e) + c)
    }

    pub(crate) fn body_vertices(&self) -> [Vector2<f64>; 3] {
        let (s, c) = self.half_angle.sin_cos();
        let apex = self.apex();
        [
            apex,
            apex + self.range * Vector2::new(c, s),
            apex + self.range * Vector2::new(c, -s),
        ]
    }
}

/// Value, body-frame gradient and body-frame Hessian of a pairwise term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BodyTerm {
    pub value: f64,
    pub grad: Vector2<f64>,
    pub hess: Matrix2<f64>,
}

impl std::ops::Add for BodyTerm {
    type Output = BodyTerm;
    fn add(self, o: BodyTerm) -> BodyTerm {
        BodyTerm {
            value: self.value + o.value,
            grad: self.grad + o.grad,
            hess: self.hess + o.hess,
        }
    }
}

fn body_phi(e: &Vector2<f64>, fov: &FovParams) -> Result<BodyTerm> {
    let margin = fov.barrier_margin;
    let mut term = BodyTerm {
        value: 0.0,
        grad: Vector2::zeros(),
        hess: Matrix2::zeros(),
    };
    for (side, (n, c)) in fov.side_lines().into_iter().enumerate() {
        let d = n.dot(e) + c;
        if !(d > 0.0) {
            return Err(Error::ContainmentViolation {
                edge: None,
                side,
                distance: d,
            });
        }
        if d >= margin {
            continue;
        }
        // ½(1/d - 1/m)², C¹ at d = m
        let gap = 1.0 / d - 1.0 / margin;
        let d2 = d * d;
        let dphi = -gap / d2;
        let ddphi = 3.0 / (d2 * d2) - 2.0 / (margin * d2 * d);
        term.value += 0.5 * gap * gap;
        term.grad += dphi * n;
        term.hess += ddphi * n * n.transpose();
    }
    Ok(term)
}

fn body_psi(e: &Vector2<f64>, fov: &FovParams) -> BodyTerm {
    let vx = 1.0 / (fov.sigma_x * fov.sigma_x);
    let vy = 1.0 / (fov.sigma_y * fov.sigma_y);
    let dx = e.x - fov.goal_point[0];
    let dy = e.y - fov.goal_point[1];
    let q = 0.5 * (dx * dx * vx + dy * dy * vy);
    let g = (-q).exp();
    let dq = Vector2::new(dx * vx, dy * vy);
    BodyTerm {
        value: -(-q).exp_m1(),
        grad: g * dq,
        hess: g * (Matrix2::new(vx, 0.0, 0.0, vy) - dq * dq.transpose()),
    }
}

/// A pairwise term evaluated in the body frame, plus the data needed to map
/// its derivatives back to world coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalPair {
    /// Neighbour position in the observer's body frame.
    pub e: Vector2<f64>,
    /// `R(θ_i)`.
    pub rot: Rotation2<f64>,
    pub term: BodyTerm,
}

impl LocalPair {
    fn new(pose_i: &Pose, term: BodyTerm, e: Vector2<f64>) -> Self {
        Self {
            e,
            rot: Rotation2::new(pose_i.theta),
            term,
        }
    }

    /// `∂/∂p_j` in world coordinates.
    pub fn grad_head(&self) -> Vector2<f64> {
        self.rot * self.term.grad
    }

    /// `∂/∂θ_i`.
    pub fn grad_theta(&self) -> f64 {
        let g = self.term.grad;
        g.x * self.e.y - g.y * self.e.x
    }

    /// `(∂/∂x_i, ∂/∂y_i, ∂/∂θ_i)`.
    pub fn grad_tail(&self) -> Vector3<f64> {
        let gp = -self.grad_head();
        Vector3::new(gp.x, gp.y, self.grad_theta())
    }

    /// World-frame Hessian with respect to the head position, `R H Rᵀ`.
    pub fn hess_head(&self) -> Matrix2<f64> {
        let r = self.rot.matrix();
        r * self.term.hess * r.transpose()
    }

    /// `∂/∂θ_i` of the head-position gradient `R g(e)`.
    pub fn dgrad_head_dtheta(&self) -> Vector2<f64> {
        let g = self.term.grad;
        let jg = Vector2::new(-g.y, g.x);
        let de = Vector2::new(self.e.y, -self.e.x);
        self.rot * (jg + self.term.hess * de)
    }
}

pub(crate) fn body_frame(pose_i: &Pose, p_j: &Vector2<f64>) -> Vector2<f64> {
    Rotation2::new(pose_i.theta).inverse() * (p_j - pose_i.position())
}

pub(crate) fn local_phi(pose_i: &Pose, p_j: &Vector2<f64>, fov: &FovParams) -> Result<LocalPair> {
    let e = body_frame(pose_i, p_j);
    Ok(LocalPair::new(pose_i, body_phi(&e, fov)?, e))
}

pub(crate) fn local_psi(pose_i: &Pose, p_j: &Vector2<f64>, fov: &FovParams) -> LocalPair {
    let e = body_frame(pose_i, p_j);
    LocalPair::new(pose_i, body_psi(&e, fov), e)
}

/// `Φ + Ψ` in the body frame.
pub(crate) fn local_vbar(pose_i: &Pose, p_j: &Vector2<f64>, fov: &FovParams) -> Result<LocalPair> {
    let e = body_frame(pose_i, p_j);
    let term = body_phi(&e, fov)? + body_psi(&e, fov);
    Ok(LocalPair::new(pose_i, term, e))
}

/// Triangle vertices in world coordinates: apex, left far vertex, right far vertex.
pub fn triangle_vertices(pose: &Pose, fov: &FovParams) -> [Vector2<f64>; 3] {
    let rot = Rotation2::new(pose.theta);
    let origin = pose.position();
    fov.body_vertices().map(|v| origin + rot * v)
}

/// Signed distances from `p_j` to the three side lines of `T_i`, positive inside.
pub fn side_distances(pose_i: &Pose, p_j: &Vector2<f64>, fov: &FovParams) -> [f64; 3] {
    fov.body_side_distances(&body_frame(pose_i, p_j))
}

/// Gradient of a pairwise term: with respect to `(x_i, y_i, θ_i)` and `(x_j, y_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGradient {
    pub wrt_i: Vector3<f64>,
    pub wrt_j: Vector2<f64>,
}

impl From<&LocalPair> for PairGradient {
    fn from(l: &LocalPair) -> Self {
        Self {
            wrt_i: l.grad_tail(),
            wrt_j: l.grad_head(),
        }
    }
}

pub fn phi(pose_i: &Pose, pose_j: &Pose, fov: &FovParams) -> Result<f64> {
    Ok(local_phi(pose_i, &pose_j.position(), fov)?.term.value)
}

pub fn grad_phi(pose_i: &Pose, pose_j: &Pose, fov: &FovParams) -> Result<PairGradient> {
    Ok((&local_phi(pose_i, &pose_j.position(), fov)?).into())
}

pub fn psi(pose_i: &Pose, pose_j: &Pose, fov: &FovParams) -> f64 {
    local_psi(pose_i, &pose_j.position(), fov).term.value
}

pub fn grad_psi(pose_i: &Pose, pose_j: &Pose, fov: &FovParams) -> PairGradient {
    (&local_psi(pose_i, &pose_j.position(), fov)).into()
}

/// Combined pairwise potential `V̄_ij = Φ_ij + Ψ_ij` and its gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPotentialEval {
    pub phi: f64,
    pub psi: f64,
    pub vbar: f64,
    pub grad_i: Vector3<f64>,
    pub grad_j_xy: Vector2<f64>,
}

pub fn pair_eval(pose_i: &Pose, pose_j: &Pose, fov: &FovParams) -> Result<PairPotentialEval> {
    let p_j = pose_j.position();
    let ph = local_phi(pose_i, &p_j, fov)?;
    let ps = local_psi(pose_i, &p_j, fov);
    let both = LocalPair::new(pose_i, ph.term + ps.term, ph.e);
    Ok(PairPotentialEval {
        phi: ph.term.value,
        psi: ps.term.value,
        vbar: both.term.value,
        grad_i: both.grad_tail(),
        grad_j_xy: both.grad_head(),
    })
}
