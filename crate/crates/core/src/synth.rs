//! Deterministic synthetic scans of a mesh: partial views with sensor noise,
//! a contiguous occluded patch, box and plane clutter, and ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::shapes::cuboid;
use crate::geometry::{pose_rows, KdIndex, OrientedPointCloud, Pose, TriMesh, TriangleIndex, Vec3};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Mesh to scan, resolved relative to the spec file by the CLI.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<String>,
    pub n_views: usize,
    pub noise_sigma: f64,
    /// Fraction of each scene's points that are clutter.
    pub clutter_ratio: f64,
    /// Fraction of the visible object surface removed as one patch.
    pub occlusion_ratio: f64,
    /// Re-randomize the clutter layout for every view.
    pub dynamic: bool,
    pub seed: u64,
    /// Surface sampling spacing; `None` means 1% of the mesh diameter.
    pub spacing: Option<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            mesh: None,
            n_views: 8,
            noise_sigma: 0.0,
            clutter_ratio: 0.0,
            occlusion_ratio: 0.0,
            dynamic: false,
            seed: 0,
            spacing: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.clutter_ratio) || !(0.0..1.0).contains(&self.occlusion_ratio) {
            return Err(Error::Config(
                "clutter_ratio and occlusion_ratio must lie in [0, 1)".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || self.spacing.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config(
                "noise_sigma must be non-negative and spacing positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    #[serde(skip)]
    pub cloud: OrientedPointCloud,
    /// Model to scene.
    #[serde(with = "pose_rows")]
    pub gt_pose: Pose,
    /// The first `object_points` points of the cloud come from the mesh,
    /// the rest are clutter.
    pub object_points: usize,
    #[serde(skip)]
    pub visibility_mask: Vec<bool>,
    pub camera_dir: Vec3,
}

/// Oriented surface samples of a mesh that all views draw from.
#[derive(Clone, Debug)]
pub struct SurfaceSamples {
    pub cloud: OrientedPointCloud,
    pub center: Vec3,
    pub diameter: f64,
    pub spacing: f64,
}

impl SurfaceSamples {
    pub fn new(mesh: &TriMesh, spacing: Option<f64>) -> Result<Self> {
        let diameter = mesh.diameter()?;
        let spacing = spacing.unwrap_or(0.01 * diameter);
        let (lo, hi) = mesh.bounds().ok_or(Error::EmptyMesh)?;
        Ok(Self {
            cloud: mesh.sample_surface(spacing),
            center: (lo + hi) / 2.0,
            diameter,
            spacing,
        })
    }
}

/// `n` quasi-uniform unit directions.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn unit_perpendicular(d: &Vec3) -> Vec3 {
    let a = if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    d.cross(&a).normalize()
}

/// Camera looking along `dir` at `center` from `distance`, rolled by `roll`.
/// Maps model coordinates into camera coordinates.
pub fn camera_pose(center: &Vec3, dir: &Vec3, distance: f64, roll: f64) -> Pose {
    let z = dir.normalize();
    let x0 = unit_perpendicular(&z);
    let y0 = z.cross(&x0);
    let x = x0 * roll.cos() + y0 * roll.sin();
    let y = z.cross(&x);
    let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let eye = center - z * distance;
    Pose::new(r, -(r * eye))
}

/// Box and plane surfaces around an object of the given size, none of
/// them reaching into its bounding sphere.
pub fn clutter_layout(rng: &mut ChaCha8Rng, center: &Vec3, diameter: f64) -> Vec<TriMesh> {
    let mut out = Vec::new();
    let n_boxes = rng.random_range(3..6);
    for _ in 0..n_boxes {
        let dir: Vec3 = Vec3::from_fn(|_, _| StandardNormal.sample(rng)).normalize();
        let ext = Vec3::from_fn(|_, _| rng.random_range(0.15..0.5) * diameter);
        let dist = 0.55 * diameter + ext.norm() / 2.0 + rng.random_range(0.0..0.4) * diameter;
        let c = center + dir * dist;
        out.push(cuboid(c - ext / 2.0, c + ext / 2.0));
    }
    // a slab under the object
    let half = diameter * rng.random_range(0.9..1.4);
    let z = center.z - 0.55 * diameter;
    out.push(cuboid(
        Vec3::new(center.x - half, center.y - half, z - 0.02 * diameter),
        Vec3::new(center.x + half, center.y + half, z),
    ));
    out
}

fn visible_samples(mesh: &TriMesh, spacing: f64, dir: &Vec3) -> OrientedPointCloud {
    let all = mesh.sample_surface(spacing);
    let keep: Vec<usize> = (0..all.len()).filter(|&i| all.normals[i].dot(dir) < 0.0).collect();
    all.select(&keep)
}

/// `count` clutter points drawn from the camera-facing surfaces of `layout`.
pub fn clutter_points(
    rng: &mut ChaCha8Rng,
    layout: &[TriMesh],
    dir: &Vec3,
    spacing: f64,
    count: usize,
) -> OrientedPointCloud {
    let mut pool = OrientedPointCloud::default();
    for m in layout {
        pool.extend(&visible_samples(m, spacing, dir));
    }
    let mut out = OrientedPointCloud::default();
    if pool.is_empty() {
        return out;
    }
    for _ in 0..count {
        let i = rng.random_range(0..pool.len());
        out.push(pool.points[i], pool.normals[i]);
    }
    out
}

fn add_normal_noise(rng: &mut ChaCha8Rng, cloud: &mut OrientedPointCloud, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma is positive");
    for (p, n) in cloud.points.iter_mut().zip(&cloud.normals) {
        *p += n * dist.sample(rng);
    }
}

/// One view seen from `camera_dir` (pointing from the camera towards the
/// object), with the given clutter layout in model coordinates.
pub fn synth_view(
    surface: &SurfaceSamples,
    camera_dir: &Vec3,
    spec: &SynthSpec,
    layout: &[TriMesh],
    rng: &mut ChaCha8Rng,
) -> SynthScene {
    let dir = camera_dir.normalize();
    let s = &surface.cloud;
    let mut visible: Vec<bool> = s.normals.iter().map(|n| n.dot(&dir) < 0.0).collect();
    let front: Vec<usize> = (0..s.len()).filter(|&i| visible[i]).collect();
    let remove = (spec.occlusion_ratio * front.len() as f64).round() as usize;
    if remove > 0 && !front.is_empty() {
        let seed = front[rng.random_range(0..front.len())];
        let pts: Vec<Vec3> = front.iter().map(|&i| s.points[i]).collect();
        for (j, _) in KdIndex::new(&pts).knn(&s.points[seed], remove) {
            visible[front[j]] = false;
        }
    }
    let keep: Vec<usize> = (0..s.len()).filter(|&i| visible[i]).collect();
    let mut cloud = s.select(&keep);
    let object_points = cloud.len();
    let n_clutter = if spec.clutter_ratio > 0.0 {
        (spec.clutter_ratio / (1.0 - spec.clutter_ratio) * object_points as f64).round() as usize
    } else {
        0
    };
    cloud.extend(&clutter_points(rng, layout, &dir, surface.spacing, n_clutter));
    add_normal_noise(rng, &mut cloud, spec.noise_sigma);
    let roll = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let gt_pose = camera_pose(&surface.center, &dir, 2.0 * surface.diameter, roll);
    SynthScene {
        cloud: cloud.transformed(&gt_pose),
        gt_pose,
        object_points,
        visibility_mask: visible,
        camera_dir: dir,
    }
}

/// Views from a Fibonacci sphere of directions. Views are independent
/// given the seed, so they are generated in parallel.
pub fn synth_dataset(mesh: &TriMesh, spec: &SynthSpec) -> Result<Vec<SynthScene>> {
    spec.validate()?;
    if spec.n_views < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_views = {}, need at least 2",
            spec.n_views
        )));
    }
    let surface = SurfaceSamples::new(mesh, spec.spacing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared = clutter_layout(&mut rng, &surface.center, surface.diameter);
    let dirs = fibonacci_sphere(spec.n_views);
    let jobs: Vec<(Vec3, u64)> = dirs.into_iter().map(|d| (d, rng.random())).collect();
    Ok(par::map(&jobs, |(dir, seed)| {
        let mut r = ChaCha8Rng::seed_from_u64(*seed);
        let layout = if spec.dynamic {
            clutter_layout(&mut r, &surface.center, surface.diameter)
        } else {
            shared.clone()
        };
        synth_view(&surface, dir, spec, &layout, &mut r)
    }))
}

/// A scene of clutter only, framed like a view of an object of the given
/// diameter.
pub fn clutter_scene(diameter: f64, n_points: usize, spacing: f64, seed: u64) -> OrientedPointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Vec3::zeros();
    let layout = clutter_layout(&mut rng, &center, diameter);
    let dir: Vec3 = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng)).normalize();
    let mut cloud = clutter_points(&mut rng, &layout, &dir, spacing, n_points);
    let roll = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    add_normal_noise(&mut rng, &mut cloud, 0.002 * diameter);
    cloud.transformed(&camera_pose(&center, &dir, 2.0 * diameter, roll))
}

/// Object points of every scene mapped back into the model frame.
pub fn stitch_ground_truth(scenes: &[SynthScene]) -> OrientedPointCloud {
    let mut out = OrientedPointCloud::default();
    for s in scenes {
        let inv = s.gt_pose.inverse();
        let idx: Vec<usize> = (0..s.object_points).collect();
        out.extend(&s.cloud.select(&idx).transformed(&inv));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub stddev: f64,
    pub rms: f64,
    pub count: usize,
}

/// Point-to-surface distances of a model-frame reconstruction.
pub fn eval_reconstruction(recon: &[Vec3], mesh: &TriMesh) -> Result<EvalStats> {
    if recon.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let index = TriangleIndex::new(mesh);
    let d = par::map(recon, |p| index.distance(p));
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let rms = (d.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    Ok(EvalStats {
        mean,
        stddev: var.sqrt(),
        rms,
        count: d.len(),
    })
}
