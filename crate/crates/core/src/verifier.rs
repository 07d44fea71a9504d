//! Hypothesis verification: coarse-to-fine registration of each pose
//! cluster, visibility scoring and a final normal agreement check.

use nalgebra::{Matrix3x6, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::detector::PoseCluster;
use crate::error::{Error, Result};
use crate::geometry::{exp_se3, pose_rows, skew, KdIndex, OrientedPointCloud, Pose, Vec3, VoxelGrid};
use crate::par;

const NO_SAMPLE: u32 = u32::MAX;

/// Nearest-sample field over the padded bounding box of the model samples.
#[derive(Clone, Debug)]
pub struct DistanceField {
    grid: VoxelGrid<(f32, u32)>,
    samples: Vec<Vec3>,
}

impl DistanceField {
    /// Seeds each voxel with the samples it contains, then propagates nearest
    /// indices with alternating forward and backward raster sweeps.
    pub fn build(samples: &[Vec3], voxel_size: f64) -> Result<Self> {
        let (lo, hi) = crate::geometry::bounds(samples).ok_or(Error::EmptyCloud)?;
        if !(voxel_size > 0.0) {
            return Err(Error::InvalidArgument(format!("voxel size {voxel_size}")));
        }
        let pad = 0.1 * (hi - lo).max();
        let mut grid = VoxelGrid::covering(&lo, &hi, pad.max(voxel_size), voxel_size, (f32::INFINITY, NO_SAMPLE));
        for (i, s) in samples.iter().enumerate() {
            let v = grid.voxel_clamped(s);
            let d = (grid.center(v) - s).norm() as f32;
            let li = grid.linear(v);
            if d < grid.cells[li].0 {
                grid.cells[li] = (d, i as u32);
            }
        }
        let mut field = Self {
            grid,
            samples: samples.to_vec(),
        };
        // each pass reads already-updated neighbours, so a handful of
        // alternating passes settles the field
        for pass in 0..16 {
            if !field.sweep(pass % 2 == 0) {
                break;
            }
        }
        Ok(field)
    }

    fn sweep(&mut self, forward: bool) -> bool {
        let [nx, ny, nz] = self.grid.dims;
        let n = self.grid.len();
        let mut changed = false;
        for k in 0..n {
            let li = if forward { k } else { n - 1 - k };
            let [x, y, z] = self.grid.unlinear(li);
            let c = self.grid.center([x, y, z]);
            let mut best = self.grid.cells[li];
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (qx, qy, qz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if qx < 0 || qy < 0 || qz < 0 || qx >= nx as i64 || qy >= ny as i64 || qz >= nz as i64 {
                            continue;
                        }
                        let idx = self.grid.cells[self.grid.linear([qx as usize, qy as usize, qz as usize])].1;
                        if idx == NO_SAMPLE || idx == best.1 {
                            continue;
                        }
                        let d = (c - self.samples[idx as usize]).norm() as f32;
                        if d < best.0 || (d == best.0 && idx < best.1) {
                            best = (d, idx);
                        }
                    }
                }
            }
            if best != self.grid.cells[li] {
                self.grid.cells[li] = best;
                changed = true;
            }
        }
        changed
    }

    pub fn voxel_size(&self) -> f64 {
        self.grid.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    /// Stored `(distance from voxel centre, nearest sample)` of the voxel
    /// holding `p`, snapping outside points to the boundary.
    pub fn lookup(&self, p: &Vec3) -> (f64, usize) {
        let (d, i) = self.grid.cells[self.grid.linear(self.grid.voxel_clamped(p))];
        (d as f64, i as usize)
    }

    /// The voxel's nearest sample and its exact distance to `p`.
    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let (_, i) = self.lookup(p);
        (i, (self.samples[i] - p).norm())
    }

    pub fn voxel_center(&self, p: &Vec3) -> Vec3 {
        self.grid.center(self.grid.voxel_clamped(p))
    }

    pub fn sample(&self, i: usize) -> &Vec3 {
        &self.samples[i]
    }
}

/// Model-side lookup structures shared by all hypotheses of a model.
#[derive(Clone, Debug)]
pub struct ModelIndex {
    pub samples: OrientedPointCloud,
    /// Finer samples used by the final point-to-plane fit.
    pub dense: OrientedPointCloud,
    pub kd: KdIndex,
    pub field: DistanceField,
    pub diameter: f64,
    /// Sample spacing, used as the tangential tolerance when segmenting.
    pub spacing: f64,
}

impl ModelIndex {
    /// Field voxels are half the sample spacing.
    pub fn new(samples: OrientedPointCloud, diameter: f64, spacing: f64) -> Result<Self> {
        let field = DistanceField::build(&samples.points, spacing / 2.0)?;
        Ok(Self {
            kd: KdIndex::new(&samples.points),
            field,
            dense: samples.clone(),
            samples,
            diameter,
            spacing,
        })
    }

    pub fn from_codebook(cb: &crate::codebook::Codebook) -> Result<Self> {
        Ok(Self::new(cb.sampled_model.clone(), cb.model_diameter, cb.dist_step())?.with_dense(cb.dense_model.clone()))
    }

    pub fn with_dense(mut self, dense: OrientedPointCloud) -> Self {
        self.dense = dense;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierParams {
    /// Inlier distance; `None` means 1.5% of the model diameter.
    pub tau_theta: Option<f64>,
    pub score_threshold: f64,
    pub normal_threshold: f64,
    /// Radians.
    pub normal_angle_max: f64,
    pub pyramid_levels: usize,
    pub level_sample_factors: Vec<f64>,
    pub icp_max_iters: usize,
    pub lm_lambda_init: f64,
    pub lm_lambda_factor: f64,
    /// Residuals beyond this multiple of τ_θ are truncated.
    pub truncation_factor: f64,
    /// Only the heaviest clusters are verified.
    pub max_hypotheses: usize,
    /// Radians; poses this close to a better one are dropped.
    pub dedup_rot: f64,
    /// Fraction of the model diameter.
    pub dedup_trans: f64,
}

impl Default for VerifierParams {
    fn default() -> Self {
        Self {
            tau_theta: None,
            score_threshold: 0.25,
            normal_threshold: 0.6,
            normal_angle_max: 30f64.to_radians(),
            pyramid_levels: 3,
            level_sample_factors: vec![0.25, 0.5, 1.0],
            icp_max_iters: 30,
            lm_lambda_init: 1e-3,
            lm_lambda_factor: 10.0,
            truncation_factor: 3.0,
            max_hypotheses: 40,
            dedup_rot: 5f64.to_radians(),
            dedup_trans: 0.05,
        }
    }
}

impl VerifierParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if self.tau_theta.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("tau_theta must be positive".into()));
        }
        if !unit(self.score_threshold) || !unit(self.normal_threshold) {
            return Err(Error::Config("score and normal thresholds must lie in (0, 1]".into()));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::Config("pyramid_levels must be at least 1".into()));
        }
        if self.level_sample_factors.len() != self.pyramid_levels || !self.level_sample_factors.iter().all(|&f| unit(f))
        {
            return Err(Error::Config(
                "level_sample_factors needs one factor in (0, 1] per pyramid level".into(),
            ));
        }
        if !(self.normal_angle_max > 0.0) || !(self.lm_lambda_init > 0.0) || !(self.lm_lambda_factor > 1.0) {
            return Err(Error::Config(
                "normal_angle_max and lm_lambda_init must be positive, lm_lambda_factor > 1".into(),
            ));
        }
        if !(self.truncation_factor > 0.0) || self.max_hypotheses == 0 {
            return Err(Error::Config(
                "truncation_factor and max_hypotheses must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn tau(&self, model_diameter: f64) -> f64 {
        self.tau_theta.unwrap_or(0.015 * model_diameter)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifiedPose {
    /// Model to scene.
    #[serde(with = "pose_rows")]
    pub pose: Pose,
    pub score: f64,
    pub normal_consistency: f64,
    pub accepted: bool,
}

struct Normal {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    cost: f64,
}

impl Normal {
    fn zero() -> Self {
        Self {
            h: Matrix6::zeros(),
            g: Vector6::zeros(),
            cost: 0.0,
        }
    }
}

struct LmSettings {
    max_iters: usize,
    lambda_init: f64,
    lambda_factor: f64,
}

/// Levenberg-Marquardt over a left perturbation `exp(δ) ∘ pose`; `eval`
/// re-derives correspondences at every pose it is handed.
fn lm(init: Pose, eval: impl Fn(&Pose) -> Normal, s: &LmSettings) -> (Pose, f64, f64) {
    let mut pose = init;
    let mut cur = eval(&pose);
    let initial = cur.cost;
    let mut lambda = s.lambda_init;
    for _ in 0..s.max_iters {
        let mut a = cur.h;
        for i in 0..6 {
            a[(i, i)] += lambda * cur.h[(i, i)].max(1e-12);
        }
        let Some(delta) = a.cholesky().map(|c| c.solve(&-cur.g)) else {
            lambda *= s.lambda_factor;
            continue;
        };
        let dw = Vec3::new(delta[0], delta[1], delta[2]);
        let dt = Vec3::new(delta[3], delta[4], delta[5]);
        let cand = exp_se3(&dw, &dt).compose(&pose);
        let next = eval(&cand);
        if next.cost < cur.cost {
            pose = cand;
            cur = next;
            lambda = (lambda / s.lambda_factor).max(1e-12);
            if delta.norm() < 1e-7 {
                break;
            }
        } else {
            lambda *= s.lambda_factor;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (pose, initial, cur.cost)
}

fn settings(params: &VerifierParams) -> LmSettings {
    LmSettings {
        max_iters: params.icp_max_iters,
        lambda_init: params.lm_lambda_init,
        lambda_factor: params.lm_lambda_factor,
    }
}

/// Point-to-point registration of scene samples against the model's
/// distance field. `init` and the result map model into scene.
pub fn sparse_lm_icp(
    scene_points: &[Vec3],
    init: &Pose,
    field: &DistanceField,
    truncation: f64,
    params: &VerifierParams,
) -> Result<Pose> {
    if scene_points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let t2 = truncation * truncation;
    let eval = |p: &Pose| {
        let mut n = Normal::zero();
        for s in scene_points {
            let x = p.apply(s);
            let (i, d) = field.nearest(&x);
            if d >= truncation {
                n.cost += t2;
                continue;
            }
            let e = x - field.sample(i);
            n.cost += e.norm_squared();
            let mut j = Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&x)));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
            n.h += j.transpose() * j;
            n.g += j.transpose() * e;
        }
        n
    };
    let (scene_to_model, initial, last) = lm(init.inverse(), eval, &settings(params));
    let m = scene_points.len() as f64;
    if last / m > 2.0 * initial / m {
        return Err(Error::Diverged {
            initial: initial / m,
            last: last / m,
        });
    }
    Ok(scene_to_model.inverse())
}

/// Point-to-plane registration of every model sample against its exact
/// nearest scene point. Pairs whose normals disagree by more than
/// `normal_angle_max` are treated as outliers, which keeps back-facing and
/// occluded model samples from pulling on visible scene surface.
pub fn dense_icp(
    model: &OrientedPointCloud,
    scene: &OrientedPointCloud,
    scene_index: &KdIndex,
    init: &Pose,
    truncation: f64,
    params: &VerifierParams,
) -> Pose {
    let t2 = truncation * truncation;
    let cos_max = params.normal_angle_max.cos();
    let eval = |p: &Pose| {
        let mut n = Normal::zero();
        for (m, nm) in model.points.iter().zip(&model.normals) {
            let x = p.apply(m);
            let Some((k, d2)) = scene_index.nearest(&x) else {
                continue;
            };
            if d2 >= t2 || p.rotate(nm).dot(&scene.normals[k]) < cos_max {
                n.cost += t2;
                continue;
            }
            let ns = &scene.normals[k];
            let r = (x - scene.points[k]).dot(ns);
            n.cost += r * r;
            let mut j = Vector6::zeros();
            j.fixed_rows_mut::<3>(0).copy_from(&x.cross(ns));
            j.fixed_rows_mut::<3>(3).copy_from(ns);
            n.h += j * j.transpose();
            n.g += j * r;
        }
        n
    };
    lm(*init, eval, &settings(params)).0
}

/// Fraction of model samples whose image under `pose` lies within `tau` of
/// an indexed scene point.
pub fn score(pose: &Pose, model_samples: &[Vec3], scene_index: &KdIndex, tau: f64) -> f64 {
    if model_samples.is_empty() {
        return 0.0;
    }
    let t2 = tau * tau;
    let hits = model_samples
        .iter()
        .filter(|m| scene_index.nearest(&pose.apply(m)).is_some_and(|(_, d2)| d2 < t2))
        .count();
    hits as f64 / model_samples.len() as f64
}

/// Fraction of segment points whose normal, taken into the model frame,
/// is within `angle_max` of the nearest model sample's normal.
pub fn normal_consistency(pose: &Pose, segment: &OrientedPointCloud, model: &ModelIndex, angle_max: f64) -> f64 {
    if segment.is_empty() {
        return 0.0;
    }
    let inv = pose.inverse();
    let cos_max = angle_max.cos();
    let agree = segment
        .points
        .iter()
        .zip(&segment.normals)
        .filter(|(p, n)| {
            let (j, _) = model.kd.nearest(&inv.apply(p)).expect("model index is non-empty");
            inv.rotate(n).dot(&model.samples.normals[j]) >= cos_max
        })
        .count();
    agree as f64 / segment.len() as f64
}

/// Indices of scene points explained by the model at `pose`: within `tau`
/// of the nearest sample's tangent plane and no further than one sample
/// spacing along it.
pub fn segment_indices(pose: &Pose, scene: &OrientedPointCloud, model: &ModelIndex, tau: f64) -> Vec<usize> {
    let inv = pose.inverse();
    let keep = par::map(&scene.points, |p| {
        let x = inv.apply(p);
        let (j, _) = model.kd.nearest(&x).expect("model index is non-empty");
        let e = x - model.samples.points[j];
        let n = &model.samples.normals[j];
        let along = e.dot(n);
        along.abs() < tau && (e - n * along).norm() <= model.spacing
    });
    keep.iter().enumerate().filter_map(|(i, &k)| k.then_some(i)).collect()
}

/// Runs the pyramid on the heaviest clusters. `scene` should already be
/// sampled; the result is sorted by score with near-duplicates removed.
pub fn verify_all(
    clusters: &[PoseCluster],
    scene: &OrientedPointCloud,
    model: &ModelIndex,
    params: &VerifierParams,
) -> Result<Vec<VerifiedPose>> {
    params.validate()?;
    if scene.is_empty() || clusters.is_empty() {
        return Ok(Vec::new());
    }
    let tau = params.tau(model.diameter);
    let scene_index = KdIndex::new(&scene.points);
    let mut poses: Vec<Pose> = clusters.iter().take(params.max_hypotheses).map(|c| c.pose).collect();
    let levels = params.pyramid_levels;
    for (l, factor) in params.level_sample_factors.iter().enumerate() {
        let stride = (1.0 / factor).round().max(1.0) as usize;
        let pts: Vec<Vec3> = scene.points.iter().step_by(stride).copied().collect();
        let cut = params.score_threshold * (0.5 + 0.5 * (l + 1) as f64 / levels as f64);
        let refined = par::map(&poses, |p| {
            let q = sparse_lm_icp(&pts, p, &model.field, params.truncation_factor * tau, params).ok()?;
            let xi = score(&q, &model.samples.points, &scene_index, tau);
            (xi >= cut).then_some((q, xi))
        });
        let mut kept: Vec<(Pose, f64)> = refined.into_iter().flatten().collect();
        kept.sort_by(|a, b| b.1.total_cmp(&a.1));
        poses = kept.into_iter().map(|k| k.0).collect();
    }
    let finals = par::map(&poses, |p| {
        let q = dense_icp(
            &model.dense,
            scene,
            &scene_index,
            p,
            params.truncation_factor * tau,
            params,
        );
        let xi = score(&q, &model.samples.points, &scene_index, tau);
        let seg = scene.select(&segment_indices(&q, scene, model, tau));
        let nc = normal_consistency(&q, &seg, model, params.normal_angle_max);
        VerifiedPose {
            pose: q,
            score: xi,
            normal_consistency: nc,
            accepted: xi >= params.score_threshold && nc >= params.normal_threshold,
        }
    });
    Ok(dedup(finals, params.dedup_rot, params.dedup_trans * model.diameter))
}

fn dedup(mut poses: Vec<VerifiedPose>, rot: f64, trans: f64) -> Vec<VerifiedPose> {
    poses.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.normal_consistency.total_cmp(&a.normal_consistency))
    });
    let mut out: Vec<VerifiedPose> = Vec::with_capacity(poses.len());
    for p in poses {
        if !out
            .iter()
            .any(|q| q.pose.rotation_distance(&p.pose) < rot && q.pose.translation_distance(&p.pose) < trans)
        {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::sample_model;
    use crate::geometry::shapes::lumpy_ellipsoid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(spacing: f64) -> ModelIndex {
        let samples = sample_model(&lumpy_ellipsoid(3, 0.3), spacing).unwrap();
        ModelIndex::new(samples, 0.3, spacing).unwrap()
    }

    fn gt() -> Pose {
        Pose::from_angle_axis(Vec3::new(0.3, -0.8, 0.5), Vec3::new(0.1, -0.2, 0.6))
    }

    #[test]
    fn field_is_zero_at_a_sample_and_grows_outward() {
        let s = vec![Vec3::zeros(), Vec3::repeat(1.0)];
        let f = DistanceField::build(&s, 0.1).unwrap();
        let (d0, i0) = f.lookup(&Vec3::zeros());
        assert_eq!(i0, 0);
        assert!(d0 < 0.1);
        let mut last = d0;
        for k in 1..4 {
            let (d, _) = f.lookup(&Vec3::new(0.1 * k as f64, 0.0, 0.0));
            assert!(d > last);
            last = d;
        }
    }

    #[test]
    fn field_agrees_with_exact_nearest() {
        let m = model(0.01);
        let f = &m.field;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agree = 0;
        // the field stores the nearest sample of each voxel centre
        for _ in 0..100 {
            let q = Vec3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.12..0.12),
            );
            let (_, d2) = m.kd.nearest(&q).unwrap();
            let (i, d) = f.nearest(&q);
            if Some(i) == m.kd.nearest(&f.voxel_center(&q)).map(|n| n.0) {
                agree += 1;
            }
            assert!(d - d2.sqrt() < f.voxel_size(), "{d} vs {}", d2.sqrt());
        }
        assert!(agree >= 95, "{agree}");
        for s in m.samples.points.iter().step_by(17) {
            assert!(f.nearest(s).1 < f.voxel_size());
        }
    }

    #[test]
    fn score_full_none_half() {
        let m = model(0.01);
        let p = gt();
        let scene: Vec<Vec3> = m.samples.points.iter().map(|x| p.apply(x)).collect();
        let tau = 0.003;
        assert_eq!(score(&p, &m.samples.points, &KdIndex::new(&scene), tau), 1.0);
        let far: Vec<Vec3> = scene.iter().map(|x| x + Vec3::new(10.0, 0.0, 0.0)).collect();
        assert_eq!(score(&p, &m.samples.points, &KdIndex::new(&far), tau), 0.0);
        let half: Vec<Vec3> = scene.iter().step_by(2).copied().collect();
        let n = m.samples.len() as f64;
        let xi = score(&p, &m.samples.points, &KdIndex::new(&half), tau);
        assert!((xi - 0.5).abs() <= 1.0 / n, "{xi}");
    }

    #[test]
    fn score_prefers_ground_truth() {
        let m = model(0.012);
        let p = gt();
        let idx = KdIndex::new(&m.samples.transformed(&p).points);
        let off = p.compose(&Pose::from_angle_axis(
            Vec3::new(0.0, 0.0, 10f64.to_radians()),
            Vec3::zeros(),
        ));
        let tau = 0.004;
        assert!(score(&p, &m.samples.points, &idx, tau) >= score(&off, &m.samples.points, &idx, tau));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn score_is_monotone_in_tau(t1 in 0.0005f64..0.02, dt in 0.0f64..0.02, rz in -0.3f64..0.3) {
            let m = model(0.02);
            let p = gt();
            let idx = KdIndex::new(&m.samples.transformed(&p).points);
            let q = p.compose(&Pose::from_angle_axis(Vec3::new(0.0, 0.0, rz), Vec3::zeros()));
            prop_assert!(score(&q, &m.samples.points, &idx, t1 + dt) >= score(&q, &m.samples.points, &idx, t1));
        }
    }

    #[test]
    fn normal_consistency_cases() {
        let m = model(0.012);
        let p = gt();
        let seg = m.samples.transformed(&p);
        assert_eq!(normal_consistency(&p, &seg, &m, 0.5), 1.0);
        let flipped = OrientedPointCloud::new(seg.points.clone(), seg.normals.iter().map(|n| -n).collect());
        assert_eq!(normal_consistency(&p, &flipped, &m, 0.5), 0.0);
    }

    #[test]
    fn normal_consistency_with_random_normals() {
        let m = model(0.008);
        let p = gt();
        let mut seg = m.samples.transformed(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = rand_distr::StandardNormal;
        let mut randomized = 0;
        for n in seg.normals.iter_mut() {
            if rng.random::<f64>() < 0.3 {
                let v: Vec3 = Vec3::new(rng.sample(normal), rng.sample(normal), rng.sample(normal));
                *n = v.normalize();
                randomized += 1;
            }
        }
        let angle: f64 = 30f64.to_radians();
        let frac = randomized as f64 / seg.len() as f64;
        // a uniform direction lands in a cap of half-angle a with probability (1 - cos a) / 2
        let expect = (1.0 - frac) + frac * (1.0 - angle.cos()) / 2.0;
        let got = normal_consistency(&p, &seg, &m, angle);
        assert!((got - expect).abs() < 0.05, "{got} vs {expect}");
    }

    #[test]
    fn sparse_icp_fixed_point_and_recovery() {
        let m = model(0.006);
        let p = gt();
        let scene = m.samples.transformed(&p);
        let params = VerifierParams::default();
        let out = sparse_lm_icp(&scene.points, &p, &m.field, 0.0135, &params).unwrap();
        assert!(out.max_abs_diff(&p) < 1e-6);

        let dense = lumpy_ellipsoid(3, 0.3).sample_surface(0.002).transformed(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let axis = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let dir = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let init = Pose::from_angle_axis(axis * 5f64.to_radians(), dir * 0.05 * 0.3).compose(&p);
            let refined = sparse_lm_icp(&dense.points, &init, &m.field, 0.05, &params).unwrap();
            assert!(
                refined.rotation_distance(&p) < 0.5f64.to_radians(),
                "{}",
                refined.rotation_distance(&p).to_degrees()
            );
            assert!(refined.translation_distance(&p) < 0.005 * 0.3);
            let fine = dense_icp(
                &m.samples,
                &dense,
                &KdIndex::new(&dense.points),
                &refined,
                0.01,
                &params,
            );
            assert!(fine.rotation_distance(&p) < refined.rotation_distance(&p).max(0.1f64.to_radians()));
        }
    }

    #[test]
    fn duplicates_collapse_to_the_best() {
        let m = model(0.012);
        let p = gt();
        let scene = lumpy_ellipsoid(3, 0.3).sample_surface(0.004).transformed(&p);
        let c = PoseCluster {
            pose: p.compose(&Pose::from_angle_axis(Vec3::new(0.02, 0.0, 0.0), Vec3::zeros())),
            total_mass: 1.0,
            member_count: 1,
        };
        let out = verify_all(&[c.clone(), c], &scene, &m, &VerifierParams::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].accepted);
        assert!(out[0].score > 0.95);
    }
}
