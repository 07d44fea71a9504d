//! Joint refinement of absolute camera poses over the pose graph with a
//! robust point-to-plane objective.
//!
//! Each camera `i` carries a pose `θ_i` taking its scene coordinates into
//! the model frame. For an edge `(h, k)` points of view `h` are carried into
//! view `k` by `θ_k⁻¹ ∘ θ_h` and compared against the tangent plane of their
//! nearest neighbour there. Updates are applied on the right,
//! `θ ← θ ∘ exp(δ)`, so the Jacobians only depend on relative poses and the
//! problem is invariant to a common change of the model frame. One pose is
//! held fixed to remove that freedom.

use nalgebra::{DMatrix, DVector, SVector};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::geometry::{exp_se3, pose_rows, KdIndex, OrientedPointCloud, Pose, Vec3};
use crate::par;
use crate::pose_graph::PoseGraph;

/// Signed distance of `R p + t` from the plane through `q` with normal `n_q`.
pub fn point_to_plane(p: &Vec3, q: &Vec3, n_q: &Vec3, pose: &Pose) -> f64 {
    (pose.apply(p) - q).dot(n_q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Huber,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub scale: f64,
}

impl Kernel {
    pub fn huber(scale: f64) -> Self {
        Self {
            kind: KernelKind::Huber,
            scale,
        }
    }

    pub fn quadratic() -> Self {
        Self {
            kind: KernelKind::Quadratic,
            scale: 1.0,
        }
    }

    /// ρ as a function of the squared residual.
    pub fn rho(&self, s: f64) -> f64 {
        match self.kind {
            KernelKind::Quadratic => s,
            KernelKind::Huber => {
                let c = self.scale;
                if s <= c * c {
                    s
                } else {
                    2.0 * c * s.sqrt() - c * c
                }
            }
        }
    }

    /// dρ/ds, the IRLS weight.
    pub fn weight(&self, s: f64) -> f64 {
        match self.kind {
            KernelKind::Quadratic => 1.0,
            KernelKind::Huber => {
                let c = self.scale;
                if s <= c * c {
                    1.0
                } else {
                    c / s.sqrt()
                }
            }
        }
    }
}

/// Correspondences of one directed edge: points of view `h` paired with
/// oriented points of view `k`, both in their own scene coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub h: usize,
    pub k: usize,
    pub p: Vec<Vec3>,
    pub q: Vec<Vec3>,
    pub n_q: Vec<Vec3>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Σ ρ(r²) with residuals taken in frame `k`.
pub fn pair_energy(theta_h: &Pose, theta_k: &Pose, corr: &CorrespondenceSet, kernel: &Kernel) -> f64 {
    let rel = theta_k.inverse().compose(theta_h);
    corr.p
        .iter()
        .zip(&corr.q)
        .zip(&corr.n_q)
        .map(|((p, q), n)| kernel.rho(point_to_plane(p, q, n, &rel).powi(2)))
        .sum()
}

/// Gradient of one residual with respect to `(δw_h, δt_h, δw_k, δt_k)`.
/// Blocks of fixed poses are zero.
pub fn analytic_jacobian(
    p: &Vec3,
    n_q: &Vec3,
    theta_h: &Pose,
    theta_k: &Pose,
    h_fixed: bool,
    k_fixed: bool,
) -> SVector<f64, 12> {
    let rel = theta_k.inverse().compose(theta_h);
    let y = rel.apply(p);
    let a = rel.rotation.transpose() * n_q;
    let mut j = SVector::<f64, 12>::zeros();
    if !h_fixed {
        j.fixed_rows_mut::<3>(0).copy_from(&p.cross(&a));
        j.fixed_rows_mut::<3>(3).copy_from(&a);
    }
    if !k_fixed {
        j.fixed_rows_mut::<3>(6).copy_from(&(-y.cross(n_q)));
        j.fixed_rows_mut::<3>(9).copy_from(&(-n_q));
    }
    j
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedFrame {
    /// The camera whose segment holds the most points.
    Auto,
    Camera(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    pub kernel: KernelKind,
    /// Expected sensor noise; `None` means 0.2% of the model diameter.
    pub noise_sigma: Option<f64>,
    /// Huber scale; `None` means three times the noise.
    pub kernel_scale: Option<f64>,
    /// `None` means the larger of ten times the noise and 2% of the model
    /// diameter.
    pub reject_dist: Option<f64>,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub fixed_frame: FixedFrame,
    /// Per-view point budget; larger segments are strided down.
    pub max_points: usize,
    /// Stop once an outer iteration lowers the energy by less than this
    /// fraction.
    pub convergence_tol: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Huber,
            noise_sigma: None,
            kernel_scale: None,
            reject_dist: None,
            outer_iters: 20,
            inner_iters: 10,
            lambda_init: 1e-4,
            lambda_factor: 10.0,
            fixed_frame: FixedFrame::Auto,
            max_points: 20_000,
            convergence_tol: 1e-4,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |o: Option<f64>| o.is_none_or(|v| v > 0.0);
        if !pos(self.noise_sigma) || !pos(self.kernel_scale) || !pos(self.reject_dist) {
            return Err(Error::Config(
                "noise_sigma, kernel_scale and reject_dist must be positive".into(),
            ));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 || self.max_points == 0 {
            return Err(Error::Config("iteration counts and max_points must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be non-negative".into()));
        }
        if !(self.lambda_init > 0.0 && self.lambda_factor > 1.0) {
            return Err(Error::Config(
                "lambda_init must be positive and lambda_factor > 1".into(),
            ));
        }
        Ok(())
    }

    pub fn resolved_kernel(&self, diameter: f64) -> Kernel {
        let sigma = self.noise_sigma.unwrap_or(0.002 * diameter);
        match self.kernel {
            KernelKind::Quadratic => Kernel::quadratic(),
            KernelKind::Huber => Kernel::huber(self.kernel_scale.unwrap_or(3.0 * sigma)),
        }
    }

    pub fn resolved_reject(&self, diameter: f64) -> f64 {
        let sigma = self.noise_sigma.unwrap_or(0.002 * diameter);
        self.reject_dist.unwrap_or((10.0 * sigma).max(0.02 * diameter))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCount {
    pub h: usize,
    pub k: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub energy_start: f64,
    pub energy_end: f64,
    /// Energy after every accepted damped step.
    pub accepted_energies: Vec<f64>,
    pub rejected_steps: usize,
    pub correspondences: Vec<EdgeCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodePose {
    pub id: usize,
    #[serde(with = "pose_rows")]
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub fixed_frame: usize,
    pub iterations: Vec<OuterIteration>,
    pub kd_builds: usize,
    pub damping_retries: usize,
    pub final_poses: Vec<NodePose>,
}

/// One index per cloud, returning how many were built.
fn build_indices(clouds: &[OrientedPointCloud]) -> (Vec<KdIndex>, usize) {
    let built = AtomicUsize::new(0);
    let trees = par::map(clouds, |c| {
        built.fetch_add(1, Ordering::Relaxed);
        KdIndex::new(&c.points)
    });
    (trees, built.into_inner())
}

fn directed_edges(graph: &PoseGraph) -> Result<Vec<(usize, usize)>> {
    let pos: std::collections::HashMap<usize, usize> = graph.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
    let mut out = Vec::with_capacity(graph.edges.len() * 2);
    for e in &graph.edges {
        let (Some(&a), Some(&b)) = (pos.get(&e.i), pos.get(&e.j)) else {
            return Err(Error::InvalidArgument(format!(
                "edge ({}, {}) references a missing node",
                e.i, e.j
            )));
        };
        out.push((a, b));
        out.push((b, a));
    }
    Ok(out)
}

fn correspond(
    h: usize,
    k: usize,
    poses: &[Pose],
    clouds: &[OrientedPointCloud],
    trees: &[KdIndex],
    reject: f64,
) -> CorrespondenceSet {
    let rel = poses[k].inverse().compose(&poses[h]);
    let r2 = reject * reject;
    let mut c = CorrespondenceSet {
        h,
        k,
        ..Default::default()
    };
    for p in &clouds[h].points {
        if let Some((j, d2)) = trees[k].nearest(&rel.apply(p)) {
            if d2 <= r2 {
                c.p.push(*p);
                c.q.push(clouds[k].points[j]);
                c.n_q.push(clouds[k].normals[j]);
            }
        }
    }
    c
}

fn build_correspondences(
    edges: &[(usize, usize)],
    poses: &[Pose],
    clouds: &[OrientedPointCloud],
    trees: &[KdIndex],
    reject: f64,
) -> Vec<CorrespondenceSet> {
    par::map(edges, |&(h, k)| correspond(h, k, poses, clouds, trees, reject))
}

fn energy_of(poses: &[Pose], corr: &[CorrespondenceSet], kernel: &Kernel) -> f64 {
    corr.iter()
        .map(|c| pair_energy(&poses[c.h], &poses[c.k], c, kernel))
        .sum()
}

/// Sum over both directions of every edge, with fresh
/// nearest-neighbour correspondences at the given poses.
pub fn total_energy(
    poses: &[Pose],
    graph: &PoseGraph,
    clouds: &[OrientedPointCloud],
    kernel: &Kernel,
    reject: f64,
) -> Result<f64> {
    let edges = directed_edges(graph)?;
    let trees: Vec<KdIndex> = clouds.iter().map(|c| KdIndex::new(&c.points)).collect();
    let corr = build_correspondences(&edges, poses, clouds, &trees, reject);
    Ok(energy_of(poses, &corr, kernel))
}

/// Node position of the fixed frame.
pub fn fixed_frame_index(graph: &PoseGraph, clouds: &[OrientedPointCloud], fixed: FixedFrame) -> Result<usize> {
    match fixed {
        FixedFrame::Camera(id) => graph
            .nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("fixed frame {id} is not a graph node"))),
        FixedFrame::Auto => Ok((0..graph.nodes.len())
            .max_by(|&a, &b| {
                clouds[a]
                    .len()
                    .cmp(&clouds[b].len())
                    .then(graph.nodes[b].id.cmp(&graph.nodes[a].id))
            })
            .unwrap_or(0)),
    }
}

/// Strides a cloud down to at most `budget` points.
pub fn to_budget(cloud: &OrientedPointCloud, budget: usize) -> OrientedPointCloud {
    if cloud.len() <= budget {
        cloud.clone()
    } else {
        cloud.strided(cloud.len().div_ceil(budget))
    }
}

/// Refines the node poses of `graph`. `clouds[i]` is the segment of
/// `graph.nodes[i]` in its scene coordinates.
pub fn refine(
    graph: &PoseGraph,
    clouds: &[OrientedPointCloud],
    params: &RefineParams,
    model_diameter: f64,
) -> Result<(Vec<Pose>, RefineReport)> {
    params.validate()?;
    if clouds.len() != graph.nodes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} clouds for {} graph nodes",
            clouds.len(),
            graph.nodes.len()
        )));
    }
    if !graph.is_connected() {
        return Err(Error::DisconnectedGraph);
    }
    let clouds: Vec<OrientedPointCloud> = clouds.iter().map(|c| to_budget(c, params.max_points)).collect();
    let n = graph.nodes.len();
    let fixed = fixed_frame_index(graph, &clouds, params.fixed_frame)?;
    let kernel = params.resolved_kernel(model_diameter);
    let reject = params.resolved_reject(model_diameter);
    let edges = directed_edges(graph)?;
    let (trees, kd_builds) = build_indices(&clouds);

    let mut poses: Vec<Pose> = graph.nodes.iter().map(|n| n.pose).collect();
    let free: Vec<usize> = (0..n).filter(|&i| i != fixed).collect();
    let col = |i: usize| free.iter().position(|&f| f == i).map(|p| 6 * p);
    let dim = 6 * free.len();
    let mut report = RefineReport {
        fixed_frame: graph.nodes[fixed].id,
        iterations: Vec::new(),
        kd_builds,
        damping_retries: 0,
        final_poses: Vec::new(),
    };
    let mut lambda = params.lambda_init;
    let mut previous_end = f64::INFINITY;

    for _ in 0..params.outer_iters {
        if dim == 0 {
            break;
        }
        let corr = build_correspondences(&edges, &poses, &clouds, &trees, reject);
        let mut energy = energy_of(&poses, &corr, &kernel);
        let mut it = OuterIteration {
            energy_start: energy,
            energy_end: energy,
            accepted_energies: Vec::new(),
            rejected_steps: 0,
            correspondences: corr
                .iter()
                .map(|c| EdgeCount {
                    h: graph.nodes[c.h].id,
                    k: graph.nodes[c.k].id,
                    count: c.len(),
                })
                .collect(),
        };
        for _ in 0..params.inner_iters {
            let (h_mat, g_vec) = normal_equations(&poses, &corr, &kernel, fixed, &col, dim);
            let mut step = None;
            let mut retries = 0;
            while step.is_none() {
                let mut a = h_mat.clone();
                for d in 0..dim {
                    a[(d, d)] += lambda * h_mat[(d, d)].max(1e-12);
                }
                step = a.cholesky().map(|c| c.solve(&(-&g_vec)));
                if step.is_none() {
                    retries += 1;
                    report.damping_retries += 1;
                    lambda *= params.lambda_factor;
                    if retries > 12 {
                        return Err(Error::SingularNormalEquations { retries });
                    }
                }
            }
            let delta = step.expect("loop exits with a step");
            let cand: Vec<Pose> = (0..n)
                .map(|i| match col(i) {
                    Some(c) => {
                        let w = Vec3::new(delta[c], delta[c + 1], delta[c + 2]);
                        let t = Vec3::new(delta[c + 3], delta[c + 4], delta[c + 5]);
                        poses[i].compose(&exp_se3(&w, &t))
                    }
                    None => poses[i],
                })
                .collect();
            let e = energy_of(&cand, &corr, &kernel);
            if e < energy {
                let rel = (energy - e) / energy.max(f64::MIN_POSITIVE);
                poses = cand;
                energy = e;
                it.accepted_energies.push(e);
                lambda = (lambda / params.lambda_factor).max(1e-12);
                if rel < 1e-6 {
                    break;
                }
            } else {
                it.rejected_steps += 1;
                lambda *= params.lambda_factor;
                if lambda > 1e12 {
                    break;
                }
            }
        }
        it.energy_end = energy;
        let start = it.energy_start;
        report.iterations.push(it);
        let settled =
            previous_end.is_finite() && (previous_end - energy).abs() <= 1e-6 * previous_end.max(f64::MIN_POSITIVE);
        previous_end = energy;
        if settled || start <= 0.0 || start - energy <= params.convergence_tol * start {
            break;
        }
    }
    report.final_poses = graph
        .nodes
        .iter()
        .zip(&poses)
        .map(|(n, p)| NodePose { id: n.id, pose: *p })
        .collect();
    Ok((poses, report))
}

fn normal_equations(
    poses: &[Pose],
    corr: &[CorrespondenceSet],
    kernel: &Kernel,
    fixed: usize,
    col: &dyn Fn(usize) -> Option<usize>,
    dim: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for c in corr {
        let (ch, ck) = (col(c.h), col(c.k));
        let rel = poses[c.k].inverse().compose(&poses[c.h]);
        for ((p, q), nq) in c.p.iter().zip(&c.q).zip(&c.n_q) {
            let r = point_to_plane(p, q, nq, &rel);
            let w = kernel.weight(r * r);
            let j = analytic_jacobian(p, nq, &poses[c.h], &poses[c.k], c.h == fixed, c.k == fixed);
            let blocks = [(ch, 0usize), (ck, 6usize)];
            for &(ca, oa) in &blocks {
                let Some(ca) = ca else { continue };
                let ja = j.fixed_rows::<6>(oa);
                let mut gv = g.rows_mut(ca, 6);
                gv += ja * (w * r);
                for &(cb, ob) in &blocks {
                    let Some(cb) = cb else { continue };
                    let jb = j.fixed_rows::<6>(ob);
                    let mut hv = h.view_mut((ca, cb), (6, 6));
                    hv += ja * jb.transpose() * w;
                }
            }
        }
    }
    (h, g)
}
