//! Adaptive per-edge gain tuning.
//!
//! Each robot runs the gained law `ū_i = -Σ_{j∈N_i^+} k_ij ∇_{s_i} V̄_ij`.
//! The gains follow `k̇ = -∇_k F + w`, where `F` sums the pairwise model-fit
//! costs `F_ij = ½‖A_ij ū_{p_i} - m_ij‖²` and `w` cancels the cross terms of
//! the Lyapunov derivative of `V = Σ k_ij V̄_ij + F`.
//!
//! [`NetworkEval`] evaluates every per-edge quantity once for a given state
//! and derives the costs, gradients and gain rates from that cache. The free
//! functions are thin conveniences over it.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{EdgeRef, Error, Result};
use crate::fov::{self, FovParams, LocalPair, Pose};
use crate::graph::{IncidencePack, Topology};

/// Minimum line-of-sight length for the projection (m).
pub const EPS_POS: f64 = 1e-6;
/// `|α_ij|` below which `w_ij` is clamped to zero.
pub const EPS_ALPHA: f64 = 1e-8;
/// Threshold on the smallest Hessian eigenvalue for the convexity flag.
pub const CONVEXITY_TOL: f64 = 1e-9;

/// Field-of-view parameters for every robot, shared or individual.
#[derive(Debug, Clone, Copy)]
pub enum Fovs<'a> {
    Uniform(&'a FovParams),
    PerRobot(&'a [FovParams]),
}

impl<'a> Fovs<'a> {
    pub fn get(&self, robot: usize) -> &'a FovParams {
        match *self {
            Fovs::Uniform(f) => f,
            Fovs::PerRobot(v) => &v[robot],
        }
    }
}

impl<'a> From<&'a FovParams> for Fovs<'a> {
    fn from(f: &'a FovParams) -> Self {
        Fovs::Uniform(f)
    }
}

impl<'a> From<&'a [FovParams]> for Fovs<'a> {
    fn from(v: &'a [FovParams]) -> Self {
        Fovs::PerRobot(v)
    }
}

impl<'a> From<&'a Vec<FovParams>> for Fovs<'a> {
    fn from(v: &'a Vec<FovParams>) -> Self {
        Fovs::PerRobot(v)
    }
}

/// Stacked per-edge gains, ordered by edge index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainState {
    pub k: Vec<f64>,
}

impl GainState {
    pub fn uniform(edge_count: usize, value: f64) -> Self {
        Self {
            k: vec![value; edge_count],
        }
    }
}

/// Matrix form of one edge's model-fit term.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeControlTerms {
    /// Nominal model `m_ij = -∇_{p_i} V̄_ij`.
    pub m_ij: Vector2<f64>,
    /// Line-of-sight projector `A_ij`.
    pub a_ij: Matrix2<f64>,
    /// `A_ij B_i k`, the projected control.
    pub p_ij_u: Vector2<f64>,
    pub f_ij: f64,
    /// `2 x |E|`; column `g(i,h)` holds `m_ih` for each out-neighbour `h`.
    pub b_i: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WTermBreakdown {
    pub alpha_ij: f64,
    pub gamma_ij: f64,
    pub beta_i: f64,
    pub beta_j: f64,
    pub w_ij: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianCertificate {
    /// Eigenvalues of `H_k`, ascending.
    pub eigs: Vec<f64>,
    pub convex: bool,
    /// The single nonzero eigenvalue predicted from `Y = Q B_i`.
    pub rank1_value: f64,
    pub hessian: DMatrix<f64>,
}

/// `A = p pᵀ / ‖p‖²`.
pub fn projection_matrix(p_ij: &Vector2<f64>) -> Result<Matrix2<f64>> {
    let n2 = p_ij.norm_squared();
    if n2.sqrt() <= EPS_POS {
        return Err(Error::DegenerateGeometry {
            edge: None,
            separation: n2.sqrt(),
        });
    }
    Ok(p_ij * p_ij.transpose() / n2)
}

/// Projection of `u` on the line spanned by `p_ij`.
pub fn projection(p_ij: &Vector2<f64>, u: &Vector2<f64>) -> Result<Vector2<f64>> {
    let n2 = p_ij.norm_squared();
    if n2.sqrt() <= EPS_POS {
        return Err(Error::DegenerateGeometry {
            edge: None,
            separation: n2.sqrt(),
        });
    }
    Ok(p_ij * (p_ij.dot(u) / n2))
}

/// Cached derivatives of `V̄_e` for one edge.
#[derive(Debug, Clone, Copy)]
struct EdgeTerms {
    vbar: f64,
    /// `∇_{s_i} V̄_e` for the tail robot.
    grad_tail: Vector3<f64>,
    /// `m_e = ∇_{p_j} V̄_e = -∇_{p_i} V̄_e`.
    m: Vector2<f64>,
    /// `∂m_e/∂p_j`.
    dm_dhead: Matrix2<f64>,
    /// `∂m_e/∂θ_i`.
    dm_dtheta: Vector2<f64>,
    /// `p_j - p_i`.
    los: Vector2<f64>,
    a: Matrix2<f64>,
}

impl EdgeTerms {
    fn new(local: &LocalPair, los: Vector2<f64>) -> Result<Self> {
        Ok(Self {
            vbar: local.term.value,
            grad_tail: local.grad_tail(),
            m: local.grad_head(),
            dm_dhead: local.hess_head(),
            dm_dtheta: local.dgrad_head_dtheta(),
            los,
            a: projection_matrix(&los)?,
        })
    }
}

/// Every per-edge and per-robot quantity of the adaptive law at one state.
#[derive(Debug, Clone)]
pub struct NetworkEval<'t> {
    topology: &'t Topology,
    k: Vec<f64>,
    edges: Vec<EdgeTerms>,
    /// Gained control `[ū_p; ū_θ]` per robot.
    control: Vec<Vector3<f64>>,
    /// `A_e ū_i - m_e` per edge.
    residual: Vec<Vector2<f64>>,
}

impl<'t> NetworkEval<'t> {
    pub fn new<'f>(
        poses: &[Pose],
        gains: &GainState,
        topology: &'t Topology,
        fovs: impl Into<Fovs<'f>>,
    ) -> Result<Self> {
        let fovs = fovs.into();
        if poses.len() != topology.n() {
            return Err(Error::invalid(
                "poses",
                format!("expected {} poses, got {}", topology.n(), poses.len()),
            ));
        }
        if gains.k.len() != topology.edge_count() {
            return Err(Error::invalid(
                "gains",
                format!(
                    "expected {} gains, got {}",
                    topology.edge_count(),
                    gains.k.len()
                ),
            ));
        }
        let edges = topology
            .edges()
            .iter()
            .map(|&e| {
                let pose_i = &poses[e.tail];
                let p_j = poses[e.head].position();
                let local = fov::local_vbar(pose_i, &p_j, fovs.get(e.tail))?;
                EdgeTerms::new(&local, p_j - pose_i.position())
            })
            .enumerate()
            .map(|(idx, r)| r.map_err(|err| err.on_edge(topology.edge(idx))))
            .collect::<Result<Vec<_>>>()?;

        let k = gains.k.clone();
        let control: Vec<Vector3<f64>> = (0..topology.n())
            .map(|i| {
                let mut acc = Vector3::zeros();
                for &e in topology.out_edges(i) {
                    acc += k[e] * edges[e].grad_tail;
                }
                -acc
            })
            .collect();

        let residual = topology
            .edges()
            .iter()
            .zip(&edges)
            .map(|(e, t)| t.a * control[e.tail].xy() - t.m)
            .collect();

        Ok(Self {
            topology,
            k,
            edges,
            control,
            residual,
        })
    }

    pub fn topology(&self) -> &Topology {
        self.topology
    }

    pub fn gains(&self) -> &[f64] {
        &self.k
    }

    /// Gained control `ū_i = [ū_{p_i}; ū_{θ_i}]`.
    pub fn control(&self, i: usize) -> Vector3<f64> {
        self.control[i]
    }

    pub fn controls(&self) -> &[Vector3<f64>] {
        &self.control
    }

    pub fn vbar(&self, e: usize) -> f64 {
        self.edges[e].vbar
    }

    pub fn nominal_model(&self, e: usize) -> Vector2<f64> {
        self.edges[e].m
    }

    pub fn projection_matrix(&self, e: usize) -> Matrix2<f64> {
        self.edges[e].a
    }

    /// `∇_{s_i} V̄_e` for the tail robot of edge `e`.
    pub fn grad_tail(&self, e: usize) -> Vector3<f64> {
        self.edges[e].grad_tail
    }

    /// `V̄ = Σ V̄_e`.
    pub fn vbar_total(&self) -> f64 {
        self.edges.iter().map(|t| t.vbar).sum()
    }

    /// `V̂ = Σ k_e V̄_e`.
    pub fn vhat(&self) -> f64 {
        self.edges
            .iter()
            .zip(&self.k)
            .map(|(t, k)| k * t.vbar)
            .sum()
    }

    pub fn edge_cost(&self, e: usize) -> f64 {
        0.5 * self.residual[e].norm_squared()
    }

    /// `F_i = Σ_{j∈N_i^+} F_ij`.
    pub fn robot_cost(&self, i: usize) -> f64 {
        self.topology
            .out_edges(i)
            .iter()
            .map(|&e| self.edge_cost(e))
            .sum()
    }

    pub fn cost(&self) -> f64 {
        (0..self.edges.len()).map(|e| self.edge_cost(e)).sum()
    }

    /// `V = V̂ + F`.
    pub fn lyapunov(&self) -> f64 {
        self.vhat() + self.cost()
    }

    /// `∇_k V̂`: entry `e` equals `V̄_e`.
    pub fn grad_k_vhat(&self) -> DVector<f64> {
        DVector::from_iterator(self.edges.len(), self.edges.iter().map(|t| t.vbar))
    }

    /// `∇_k F`; only edges sharing the tail of `e` contribute to entry `e`.
    pub fn grad_k_f(&self) -> DVector<f64> {
        let topo = self.topology;
        let mut out = DVector::zeros(self.edges.len());
        for (idx, e) in topo.edges().iter().enumerate() {
            let m = self.edges[idx].m;
            let mut acc = 0.0;
            for &f in topo.out_edges(e.tail) {
                acc += (self.edges[f].a * self.residual[f]).dot(&m);
            }
            out[idx] = acc;
        }
        out
    }

    /// `∇_s F` per robot as `(∂/∂x, ∂/∂y, ∂/∂θ)`.
    ///
    /// `F_ij` depends on `p_i`, `θ_i` and the positions of every
    /// out-neighbour of `i` through `ū_{p_i}`.
    pub fn grad_s_f(&self) -> Vec<Vector3<f64>> {
        let topo = self.topology;
        let mut grad = vec![Vector3::<f64>::zeros(); topo.n()];
        for i in 0..topo.n() {
            let out = topo.out_edges(i);
            if out.is_empty() {
                continue;
            }
            let u = self.control[i].xy();
            let mut sum_kt = Vector2::zeros();
            for &f in out {
                sum_kt += self.k[f] * self.edges[f].dm_dtheta;
            }
            for &e in out {
                let t = &self.edges[e];
                let r = self.residual[e];
                let j = topo.edge(e).head;
                let ar = t.a * r;
                let g_a = los_gradient(&t.los, &r, &u);
                let mr = t.dm_dhead * r;

                let tail_xy = -g_a + mr;
                grad[i].x += tail_xy.x;
                grad[i].y += tail_xy.y;
                let head_xy = g_a - mr;
                grad[j].x += head_xy.x;
                grad[j].y += head_xy.y;
                // ū_{p_i} depends on every out-neighbour position
                for &f in out {
                    let h = topo.edge(f).head;
                    let c = self.k[f] * (self.edges[f].dm_dhead * ar);
                    grad[h].x += c.x;
                    grad[h].y += c.y;
                    grad[i].x -= c.x;
                    grad[i].y -= c.y;
                }
                grad[i].z += ar.dot(&sum_kt) - r.dot(&t.dm_dtheta);
            }
        }
        grad
    }

    /// Position block of [`grad_s_f`](Self::grad_s_f), stacked `[x_1, y_1, …]`.
    pub fn grad_p_f(&self) -> DVector<f64> {
        stack_xy(&self.grad_s_f())
    }

    /// Heading block of [`grad_s_f`](Self::grad_s_f).
    pub fn grad_theta_f(&self) -> DVector<f64> {
        let g = self.grad_s_f();
        DVector::from_iterator(g.len(), g.iter().map(|v| v.z))
    }

    /// Full `∇_s V̂`, including the head contributions of each edge.
    pub fn grad_s_vhat(&self) -> Vec<Vector3<f64>> {
        let topo = self.topology;
        let mut grad = vec![Vector3::<f64>::zeros(); topo.n()];
        for (idx, e) in topo.edges().iter().enumerate() {
            let t = &self.edges[idx];
            let k = self.k[idx];
            grad[e.tail] += k * t.grad_tail;
            grad[e.head].x += k * t.m.x;
            grad[e.head].y += k * t.m.y;
        }
        grad
    }

    /// `∇_{s+} V̂`: outgoing contributions only, equal to `-ū_i`.
    pub fn grad_s_plus_vhat(&self) -> Vec<Vector3<f64>> {
        self.control.iter().map(|u| -u).collect()
    }

    /// `β_i = ∇_{s_i}F · ∇_{s_i+}V̂` per robot.
    ///
    /// The heading channel is included: `m_ij` depends on `θ_i`, so `F`
    /// does too, and the cancellation in `V̇` needs it.
    pub fn betas(&self) -> Vec<f64> {
        self.grad_s_f()
            .iter()
            .zip(&self.control)
            .map(|(g, u)| -g.dot(u))
            .collect()
    }

    /// `w_ij` and its ingredients for every edge, with the `|α| < eps_alpha` clamp.
    pub fn w_terms(&self, eps_alpha: f64) -> Vec<WTermBreakdown> {
        let gk = self.grad_k_f();
        self.w_terms_from(&gk, &self.betas(), eps_alpha)
    }

    fn w_terms_from(&self, gk: &DVector<f64>, betas: &[f64], eps_alpha: f64) -> Vec<WTermBreakdown> {
        let topo = self.topology;
        topo.edges()
            .iter()
            .enumerate()
            .map(|(idx, e)| {
                let vk = self.edges[idx].vbar;
                let fk = gk[idx];
                let alpha = vk + fk;
                let gamma = vk * fk;
                let beta_i = betas[e.tail];
                let beta_j = betas[e.head];
                let num = gamma
                    + beta_i / topo.degree(e.tail) as f64
                    + beta_j / topo.degree(e.head) as f64;
                let clamped = alpha.abs() < eps_alpha;
                WTermBreakdown {
                    alpha_ij: alpha,
                    gamma_ij: gamma,
                    beta_i,
                    beta_j,
                    w_ij: if clamped { 0.0 } else { num / alpha },
                    clamped,
                }
            })
            .collect()
    }

    /// `k̇ = -∇_k F + w` together with the `w` breakdown.
    pub fn gain_rates(&self, eps_alpha: f64) -> (DVector<f64>, Vec<WTermBreakdown>) {
        let gk = self.grad_k_f();
        let w = self.w_terms_from(&gk, &self.betas(), eps_alpha);
        let rates = DVector::from_iterator(gk.len(), gk.iter().zip(&w).map(|(g, w)| w.w_ij - g));
        (rates, w)
    }

    /// `ξ_k = [ξ_xy; ξ_θ]` with each edge's tail gradient scaled by its gain.
    pub fn xi_k(&self) -> DVector<f64> {
        let m = self.edges.len();
        let mut xi = DVector::zeros(3 * m);
        for (idx, t) in self.edges.iter().enumerate() {
            let g = self.k[idx] * t.grad_tail;
            xi[2 * idx] = g.x;
            xi[2 * idx + 1] = g.y;
            xi[2 * m + idx] = g.z;
        }
        xi
    }

    /// `-ξ_kᵀ L̄⁺ ξ_k - ‖∇_k F‖²`.
    pub fn vdot_quadratic(&self, pack: &IncidencePack) -> f64 {
        let xi = self.xi_k();
        let gk = self.grad_k_f();
        -(xi.transpose() * &pack.lbar_sym * &xi)[(0, 0)] - gk.norm_squared()
    }

    /// `∇_s V · ṡ + ∇_k V · k̇` for arbitrary state rates.
    pub fn vdot_chain(&self, s_rates: &[Vector3<f64>], k_rates: &DVector<f64>) -> f64 {
        let gs_v = self.grad_s_vhat();
        let gs_f = self.grad_s_f();
        let mut acc = 0.0;
        for ((a, b), r) in gs_v.iter().zip(&gs_f).zip(s_rates) {
            acc += (a + b).dot(r);
        }
        let gk_v = self.grad_k_vhat();
        let gk_f = self.grad_k_f();
        acc + (gk_v + gk_f).dot(k_rates)
    }

    /// The matrix form `½‖A_ij B_i k - m_ij‖²` of edge `e`.
    pub fn matrix_form(&self, e: usize) -> EdgeControlTerms {
        let topo = self.topology;
        let tail = topo.edge(e).tail;
        let mut b_i = DMatrix::zeros(2, self.edges.len());
        for &f in topo.out_edges(tail) {
            b_i.set_column(f, &self.edges[f].m);
        }
        let t = &self.edges[e];
        let k = DVector::from_column_slice(&self.k);
        let bk = &b_i * k;
        let p_ij_u = t.a * Vector2::new(bk[0], bk[1]);
        let f_ij = 0.5 * (p_ij_u - t.m).norm_squared();
        EdgeControlTerms {
            m_ij: t.m,
            a_ij: t.a,
            p_ij_u,
            f_ij,
            b_i,
        }
    }

    /// Hessian of `F_e` in `k`, `B_iᵀ A² B_i`, and its spectrum.
    pub fn hessian_k_certificate(&self, e: usize) -> Result<HessianCertificate> {
        let terms = self.matrix_form(e);
        let a2 = terms.a_ij * terms.a_ij;
        let a2_dyn = DMatrix::from_column_slice(2, 2, a2.as_slice());
        let hessian = terms.b_i.transpose() * &a2_dyn * &terms.b_i;
        // A is a symmetric projection, so H = (A B_i)ᵀ(A B_i); squared singular
        // values of the factor keep the zero eigenvalues at rounding level even
        // when ‖H‖ is large, which a dense eigensolver on H does not.
        let a_dyn = DMatrix::from_column_slice(2, 2, terms.a_ij.as_slice());
        let factor = a_dyn * &terms.b_i;
        let mut eigs: Vec<f64> = vec![0.0; hessian.nrows().saturating_sub(2)];
        if hessian.nrows() > 0 {
            eigs.extend(factor.singular_values().iter().map(|s| s * s));
        }
        eigs.sort_by(f64::total_cmp);

        // A² = Qᵀ Λ Q with Λ = diag(0, 1): the nonzero eigenvalue of H is
        // the squared norm of the row of Y = Q B_i selected by Λ.
        let decomposition = SymmetricEigen::new(a2);
        let unit = if decomposition.eigenvalues[0] > decomposition.eigenvalues[1] {
            0
        } else {
            1
        };
        let q_row = decomposition.eigenvectors.column(unit).transpose();
        let y = q_row * &terms.b_i.fixed_rows::<2>(0);
        let rank1_value = decomposition.eigenvalues[unit] * y.norm_squared();

        let convex = eigs.first().is_none_or(|&v| v >= -CONVEXITY_TOL);
        Ok(HessianCertificate {
            eigs,
            convex,
            rank1_value,
            hessian,
        })
    }
}

/// Gradient of `rᵀ A(u) ū` with respect to the line of sight `u`, `r` and `ū` fixed.
fn los_gradient(u: &Vector2<f64>, r: &Vector2<f64>, ubar: &Vector2<f64>) -> Vector2<f64> {
    let n2 = u.norm_squared();
    let uu = u.dot(ubar);
    let ru = r.dot(u);
    (uu * r + ru * ubar) / n2 - (2.0 * ru * uu / (n2 * n2)) * u
}

fn stack_xy(v: &[Vector3<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(2 * v.len());
    for (i, g) in v.iter().enumerate() {
        out[2 * i] = g.x;
        out[2 * i + 1] = g.y;
    }
    out
}

fn edge_of(topology: &Topology, i: usize, j: usize) -> Result<usize> {
    for index in [i, j] {
        if index >= topology.n() {
            return Err(Error::RobotOutOfRange {
                index,
                n: topology.n(),
            });
        }
    }
    topology.edge_index(i, j).ok_or_else(|| {
        Error::invalid(
            "edge",
            format!("{} is not in the topology", EdgeRef { tail: i, head: j }),
        )
    })
}

/// Gained control of robot `i`.
pub fn control_u<'f>(
    i: usize,
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<Vector3<f64>> {
    if i >= topology.n() {
        return Err(Error::RobotOutOfRange {
            index: i,
            n: topology.n(),
        });
    }
    Ok(NetworkEval::new(poses, gains, topology, fovs)?.control(i))
}

/// The ungained law `-Σ_{j∈N_i^+} ∇_{s_i}(Φ_ij + Ψ_ij)`.
pub fn baseline_control_u<'f>(
    i: usize,
    poses: &[Pose],
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<Vector3<f64>> {
    let fovs = fovs.into();
    let mut acc = Vector3::zeros();
    for &e in topology.out_edges(i) {
        let edge = topology.edge(e);
        let ev = fov::pair_eval(&poses[i], &poses[edge.head], fovs.get(i))
            .map_err(|err| err.on_edge(edge))?;
        acc += ev.grad_i;
    }
    Ok(-acc)
}

/// `m_ij = -∇_{p_i} V̄_ij`.
pub fn nominal_model(pose_i: &Pose, pose_j: &Pose, fov: &FovParams) -> Result<Vector2<f64>> {
    let ev = fov::pair_eval(pose_i, pose_j, fov)?;
    Ok(-ev.grad_i.xy())
}

/// `F_ij` through the projection of the gained control on the line of sight.
pub fn pairwise_cost<'f>(
    i: usize,
    j: usize,
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<f64> {
    let fovs = fovs.into();
    let e = edge_of(topology, i, j)?;
    let edge = topology.edge(e);
    let u = control_u(i, poses, gains, topology, fovs)?;
    let los = poses[j].position() - poses[i].position();
    let proj = projection(&los, &u.xy()).map_err(|err| err.on_edge(edge))?;
    let m = nominal_model(&poses[i], &poses[j], fovs.get(i)).map_err(|err| err.on_edge(edge))?;
    Ok(0.5 * (proj - m).norm_squared())
}

/// `F_ij` and its ingredients through `½‖A_ij B_i k - m_ij‖²`.
pub fn matrix_form<'f>(
    i: usize,
    j: usize,
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<EdgeControlTerms> {
    let e = edge_of(topology, i, j)?;
    Ok(NetworkEval::new(poses, gains, topology, fovs)?.matrix_form(e))
}

pub fn grad_k_f<'f>(
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<DVector<f64>> {
    Ok(NetworkEval::new(poses, gains, topology, fovs)?.grad_k_f())
}

pub fn grad_p_f<'f>(
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<DVector<f64>> {
    Ok(NetworkEval::new(poses, gains, topology, fovs)?.grad_p_f())
}

pub fn grad_k_vhat<'f>(
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<DVector<f64>> {
    Ok(NetworkEval::new(poses, gains, topology, fovs)?.grad_k_vhat())
}

pub fn w_term<'f>(
    i: usize,
    j: usize,
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
    eps_alpha: f64,
) -> Result<WTermBreakdown> {
    let e = edge_of(topology, i, j)?;
    Ok(NetworkEval::new(poses, gains, topology, fovs)?.w_terms(eps_alpha)[e])
}

/// `k̇ = -∇_k F + w` with the default `α` clamp.
pub fn gain_update<'f>(
    poses: &[Pose],
    gains: &GainState,
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<DVector<f64>> {
    Ok(NetworkEval::new(poses, gains, topology, fovs)?
        .gain_rates(EPS_ALPHA)
        .0)
}

/// Convexity certificate of `F_ij` in `k`. The Hessian does not depend on `k`.
pub fn hessian_k_certificate<'f>(
    i: usize,
    j: usize,
    poses: &[Pose],
    topology: &Topology,
    fovs: impl Into<Fovs<'f>>,
) -> Result<HessianCertificate> {
    let e = edge_of(topology, i, j)?;
    let gains = GainState::uniform(topology.edge_count(), 1.0);
    NetworkEval::new(poses, &gains, topology, fovs)?.hessian_k_certificate(e)
}
