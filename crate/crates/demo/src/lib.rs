//! Browser demo: three small interactive views onto the pipeline. Every
//! entry point returns JSON for the page script to draw.

use cadrecon::codebook::{train, Codebook};
use cadrecon::detector::{extract_local_max, vote_reference, SoftBins};
use cadrecon::geometry::exp_se3;
use cadrecon::geometry::shapes::lumpy_ellipsoid;
use cadrecon::pose_graph::{GraphEdge, GraphNode, GraphParams, IncrementalGraph, PoseGraph};
use cadrecon::refine::{refine, FixedFrame, RefineParams};
use cadrecon::{OrientedPointCloud, Pose, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn rand_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

// ---------------------------------------------------------------- graph

pub const RING_CAMERAS: usize = 10;
const RING_CELLS: usize = 60;

#[derive(Debug, Serialize)]
pub struct GraphView {
    pub cameras: usize,
    /// `[i, j, shared voxels]`
    pub overlaps: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 3]>,
    pub connected: bool,
    pub alpha_l: f64,
    pub alpha_h: f64,
}

/// Views placed around a ring of cells, each covering an arc of random
/// length, so neighbours share anywhere from nothing to most of their arc.
fn ring_views(seed: u64) -> Vec<Vec<Vec3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = RING_CELLS / RING_CAMERAS;
    (0..RING_CAMERAS)
        .map(|c| {
            let len = rng.random_range(step - 1..3 * step);
            let mut pts = Vec::new();
            for k in 0..len {
                let x = ((c * step + k) % RING_CELLS) as f64 + 0.5;
                for y in 0..3 {
                    pts.push(Vec3::new(x, y as f64 + 0.5, 0.5));
                }
            }
            pts
        })
        .collect()
}

/// Hysteresis edge selection on a seeded ring layout. Thresholds are
/// fractions of the smallest view's voxel count.
pub fn graph_view(alpha_l: f64, alpha_h: f64, seed: u64) -> Result<GraphView, String> {
    let params = GraphParams {
        alpha_l,
        alpha_h,
        relative: true,
        voxel_size: None,
    };
    let mut g = IncrementalGraph::new(params.clone(), 1.0).map_err(|e| e.to_string())?;
    for (c, pts) in ring_views(seed).iter().enumerate() {
        g.insert_view(c, pts).map_err(|e| e.to_string())?;
    }
    let (al, ah) = params.resolve(g.index());
    Ok(GraphView {
        cameras: RING_CAMERAS,
        overlaps: g.hpo().iter().map(|(&(i, j), &c)| [i, j, c]).collect(),
        edges: g.edges().iter().map(|e| [e.0, e.1, e.2]).collect(),
        connected: g.connected(),
        alpha_l: al,
        alpha_h: ah,
    })
}

#[wasm_bindgen]
pub fn pose_graph(alpha_l: f64, alpha_h: f64, seed: u32) -> Result<String, JsError> {
    graph_view(alpha_l, alpha_h, seed as u64)
        .map(|v| json(&v))
        .map_err(|e| JsError::new(&e))
}

// ---------------------------------------------------------------- votes

#[derive(Debug, Serialize)]
pub struct VoteView {
    pub rows: usize,
    pub cols: usize,
    /// Row-major vote mass.
    pub data: Vec<f32>,
    pub peak_row: usize,
    pub peak_alpha: f64,
    pub truth: usize,
}

/// Self-match voting: the scene is the codebook's own samples with points
/// and normals perturbed by a fraction of a bin.
#[wasm_bindgen]
pub struct VoteDemo {
    codebook: Codebook,
    scene: OrientedPointCloud,
}

impl VoteDemo {
    pub fn build(jitter_bins: f64, seed: u64) -> Result<Self, String> {
        let mesh = lumpy_ellipsoid(3, 0.3);
        let codebook = train(&mesh, 0.05, 12f64.to_radians()).map_err(|e| e.to_string())?;
        let q = codebook.quantizer;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = OrientedPointCloud::default();
        for (p, n) in codebook
            .sampled_model
            .points
            .iter()
            .zip(&codebook.sampled_model.normals)
        {
            let dp = rand_unit(&mut rng) * 0.5 * jitter_bins * q.dist_step;
            let axis = n.cross(&rand_unit(&mut rng)).normalize();
            let tilt = exp_se3(&(axis * 0.5 * jitter_bins * q.angle_step), &Vec3::zeros());
            scene.push(p + dp, tilt.rotate(n));
        }
        Ok(Self { codebook, scene })
    }

    pub fn view(&self, reference: usize, k: usize) -> Result<VoteView, String> {
        if reference >= self.scene.len() {
            return Err(format!("reference {reference} out of range"));
        }
        let space = vote_reference(&self.scene, reference, &self.codebook, SoftBins::new(k.clamp(1, 5)), 30);
        let (peak_row, peak_alpha, _) = extract_local_max(&space).map_err(|e| e.to_string())?;
        Ok(VoteView {
            rows: space.rows,
            cols: space.cols,
            data: space.data.iter().map(|&v| v as f32).collect(),
            peak_row,
            peak_alpha,
            truth: reference,
        })
    }

    /// Fraction of references whose vote peak lands on their own sample.
    pub fn rate(&self, k: usize) -> f64 {
        let n = self.scene.len();
        let hits = (0..n)
            .filter(|&r| {
                extract_local_max(&vote_reference(
                    &self.scene,
                    r,
                    &self.codebook,
                    SoftBins::new(k.clamp(1, 5)),
                    30,
                ))
                .is_ok_and(|m| m.0 == r)
            })
            .count();
        hits as f64 / n as f64
    }
}

#[wasm_bindgen]
impl VoteDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(jitter_bins: f64, seed: u32) -> Result<VoteDemo, JsError> {
        Self::build(jitter_bins, seed as u64).map_err(|e| JsError::new(&e))
    }

    pub fn references(&self) -> usize {
        self.scene.len()
    }

    pub fn votes(&self, reference: usize, k: usize) -> Result<String, JsError> {
        self.view(reference, k).map(|v| json(&v)).map_err(|e| JsError::new(&e))
    }

    pub fn argmax_rate(&self, k: usize) -> f64 {
        self.rate(k)
    }
}

// ---------------------------------------------------------------- refine

#[derive(Debug, Serialize)]
pub struct RefineView {
    /// Energy before the first step and after every accepted step.
    pub energies: Vec<f64>,
    /// Index into `energies` where each outer iteration starts.
    pub outer_starts: Vec<usize>,
    /// Largest rotation error in degrees relative to camera 0, before and
    /// after.
    pub error_before: f64,
    pub error_after: f64,
}

fn wavy_surface(rng: &mut ChaCha8Rng, n: usize) -> OrientedPointCloud {
    let mut c = OrientedPointCloud::default();
    for _ in 0..n {
        let (x, y): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let z = 0.3 * (2.0 * x).sin() * (1.5 * y).cos() + 0.1 * x * y;
        let dzdx = 0.6 * (2.0 * x).cos() * (1.5 * y).cos() + 0.1 * y;
        let dzdy = -0.45 * (2.0 * x).sin() * (1.5 * y).sin() + 0.1 * x;
        c.push(Vec3::new(x, y, z), Vec3::new(-dzdx, -dzdy, 1.0).normalize());
    }
    c
}

fn worst_rotation_error(poses: &[Pose], gt: &[Pose]) -> f64 {
    let (p0, g0) = (poses[0].inverse(), gt[0].inverse());
    poses
        .iter()
        .zip(gt)
        .map(|(p, g)| p0.compose(p).rotation_distance(&g0.compose(g)).to_degrees())
        .fold(0.0, f64::max)
}

/// Joint refinement of four views of a wavy surface whose poses are
/// disturbed by up to `perturb_deg` degrees and a matching translation.
pub fn refine_view(perturb_deg: f64, seed: u64) -> Result<RefineView, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = wavy_surface(&mut rng, 1500);
    let gt: Vec<Pose> = (0..4)
        .map(|_| {
            Pose::from_angle_axis(
                rand_unit(&mut rng) * rng.random_range(0.0..0.5),
                rand_unit(&mut rng) * 0.3,
            )
        })
        .collect();
    let clouds: Vec<OrientedPointCloud> = gt.iter().map(|g| world.transformed(&g.inverse())).collect();
    let rad = perturb_deg.to_radians();
    let init: Vec<Pose> = gt
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if i == 0 {
                *g
            } else {
                g.compose(&Pose::from_angle_axis(
                    rand_unit(&mut rng) * rad,
                    rand_unit(&mut rng) * rad,
                ))
            }
        })
        .collect();
    let graph = PoseGraph {
        nodes: init
            .iter()
            .enumerate()
            .map(|(i, p)| GraphNode {
                id: i,
                pose: *p,
                scene: None,
                segment: Vec::new(),
            })
            .collect(),
        edges: (1..init.len())
            .map(|j| GraphEdge {
                i: j - 1,
                j,
                overlap: 1,
                relative: init[j - 1].inverse().compose(&init[j]),
            })
            .collect(),
        coverage: 1.0,
        uncovered_samples: 0,
        connected: true,
    };
    let params = RefineParams {
        fixed_frame: FixedFrame::Camera(0),
        ..Default::default()
    };
    let (out, report) = refine(&graph, &clouds, &params, 2.0).map_err(|e| e.to_string())?;
    let mut energies = Vec::new();
    let mut outer_starts = Vec::new();
    for it in &report.iterations {
        outer_starts.push(energies.len());
        energies.push(it.energy_start);
        energies.extend(&it.accepted_energies);
    }
    Ok(RefineView {
        energies,
        outer_starts,
        error_before: worst_rotation_error(&init, &gt),
        error_after: worst_rotation_error(&out, &gt),
    })
}

#[wasm_bindgen]
pub fn refine_curve(perturb_deg: f64, seed: u32) -> Result<String, JsError> {
    refine_view(perturb_deg, seed as u64)
        .map(|v| json(&v))
        .map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_high_threshold_links_more() {
        let strict = graph_view(0.0, 0.9, 1).unwrap();
        let loose = graph_view(0.0, 0.05, 1).unwrap();
        assert!(loose.edges.len() >= strict.edges.len());
        assert!(strict.edges.iter().all(|e| e[2] as f64 >= strict.alpha_l));
        assert!(graph_view(0.5, 0.1, 1).is_err());
    }

    #[test]
    fn clean_self_match_peaks_at_the_reference() {
        let demo = VoteDemo::build(0.0, 1).unwrap();
        let v = demo.view(5, 1).unwrap();
        assert_eq!(v.data.len(), v.rows * v.cols);
        assert_eq!(v.peak_row, 5);
        assert!(demo.view(demo.scene.len(), 1).is_err());
    }

    #[test]
    fn refinement_curve_descends_and_fixes_the_poses() {
        let v = refine_view(2.0, 3).unwrap();
        assert!(v.energies.last().unwrap() < v.energies.first().unwrap());
        assert!(v.error_after < 1e-3 && v.error_before > 0.1);
    }
}
