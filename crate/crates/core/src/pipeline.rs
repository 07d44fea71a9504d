//! The stages strung together: train, detect, verify, segment, graph,
//! refine and reconstruct. Each stage is also exposed on its own so the CLI
//! can persist intermediate artifacts.

use serde::{Deserialize, Serialize};

use crate::codebook::{train as train_codebook, Codebook};
use crate::config::PipelineConfig;
use crate::detector::{detect, PoseCluster};
use crate::error::{Error, Result};
use crate::geometry::{pose_rows, sample_uniform, KdIndex, OrientedPointCloud, Pose, TriMesh};
use crate::par;
use crate::pose_graph::{build_pose_graph, PoseGraph, ViewInput};
use crate::refine::{refine as refine_graph, RefineReport};
use crate::verifier::{dense_icp, segment_indices, verify_all, ModelIndex, VerifiedPose};

pub fn train(mesh: &TriMesh, cfg: &PipelineConfig) -> Result<Codebook> {
    cfg.validate()?;
    train_codebook(mesh, cfg.tau, cfg.angle_step)
}

/// Pose clusters of one scene, heaviest first. A scene in which no
/// reference point gathers votes yields no clusters rather than an error.
pub fn detect_scene(scene: &OrientedPointCloud, cb: &Codebook, cfg: &PipelineConfig) -> Result<Vec<PoseCluster>> {
    match detect(scene, cb, &cfg.detector) {
        Err(Error::NoHypotheses) => Ok(Vec::new()),
        r => r,
    }
}

pub fn verify_scene(
    scene: &OrientedPointCloud,
    clusters: &[PoseCluster],
    model: &ModelIndex,
    cb: &Codebook,
    cfg: &PipelineConfig,
) -> Result<Vec<VerifiedPose>> {
    let thinned = sample_uniform(scene, cb.dist_step() * cfg.verify_sample_factor);
    verify_all(clusters, &thinned, model, &cfg.verifier)
}

/// The accepted pose with the highest score.
pub fn best_accepted(verified: &[VerifiedPose]) -> Option<&VerifiedPose> {
    verified
        .iter()
        .filter(|v| v.accepted)
        .max_by(|a, b| a.score.total_cmp(&b.score))
}

/// Scene points explained by the model at `pose` (model to scene).
pub fn segment(scene: &OrientedPointCloud, pose: &Pose, model: &ModelIndex, cfg: &PipelineConfig) -> Vec<usize> {
    segment_indices(pose, scene, model, cfg.verifier.tau(model.diameter))
}

/// Graph input for one scene; `pose` maps model to scene.
pub fn view_input(
    id: usize,
    scene: &OrientedPointCloud,
    pose: &Pose,
    model: &ModelIndex,
    cfg: &PipelineConfig,
    scene_name: Option<String>,
) -> ViewInput {
    let seg = segment(scene, pose, model, cfg);
    ViewInput {
        id,
        pose: pose.inverse(),
        segment_points: seg.iter().map(|&i| scene.points[i]).collect(),
        segment: seg,
        scene: scene_name,
    }
}

pub fn graph_voxel_size(cb: &Codebook, cfg: &PipelineConfig) -> f64 {
    cfg.graph.voxel_size.unwrap_or(2.0 * cb.dist_step())
}

pub fn build_graph(views: &[ViewInput], cb: &Codebook, cfg: &PipelineConfig) -> Result<PoseGraph> {
    if views.is_empty() {
        return Err(Error::NoAcceptedPose);
    }
    build_pose_graph(views, &cfg.graph, graph_voxel_size(cb, cfg), &cb.sampled_model.points)
}

/// Segments of the graph nodes, in node order.
pub fn node_segments(graph: &PoseGraph, scenes: &[OrientedPointCloud]) -> Vec<OrientedPointCloud> {
    graph
        .nodes
        .iter()
        .zip(scenes)
        .map(|(n, s)| s.select(&n.segment))
        .collect()
}

/// Joint refinement; a single-node graph is returned unchanged.
pub fn refine(
    graph: &PoseGraph,
    segments: &[OrientedPointCloud],
    model_diameter: f64,
    cfg: &PipelineConfig,
) -> Result<(Vec<Pose>, Option<RefineReport>)> {
    if graph.nodes.len() < 2 {
        return Ok((graph.nodes.iter().map(|n| n.pose).collect(), None));
    }
    let (poses, report) = refine_graph(graph, segments, &cfg.refine, model_diameter)?;
    Ok((poses, Some(report)))
}

/// Rigid correction that places the refined union on the model.
///
/// Refinement holds one camera fixed, so the union inherits that camera's
/// detection error as a whole. Registering the model samples against the
/// union spreads the placement over every view; the result maps the current
/// model frame onto the corrected one and is applied as `anchor ∘ θ_i`.
pub fn anchor_to_model(
    poses: &[Pose],
    segments: &[OrientedPointCloud],
    model: &ModelIndex,
    cfg: &PipelineConfig,
) -> Result<Pose> {
    let union = reconstruct(poses, segments)?;
    if union.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let index = KdIndex::new(&union.points);
    let trunc = cfg.verifier.truncation_factor * cfg.verifier.tau(model.diameter);
    let model_to_union = dense_icp(&model.dense, &union, &index, &Pose::identity(), trunc, &cfg.verifier);
    Ok(model_to_union.inverse())
}

/// A scene's final scene-to-model pose together with its segment, enough to
/// rebuild its share of the reconstruction from the scene file alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePose {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(with = "pose_rows")]
    pub pose: Pose,
    pub segment: Vec<usize>,
}

/// Union of the segments mapped into the model frame.
pub fn reconstruct(poses: &[Pose], segments: &[OrientedPointCloud]) -> Result<OrientedPointCloud> {
    if poses.is_empty() {
        return Err(Error::NoAcceptedPose);
    }
    let mut out = OrientedPointCloud::default();
    for (pose, seg) in poses.iter().zip(segments) {
        out.extend(&seg.transformed(pose));
    }
    Ok(out)
}

/// Everything a full run produces.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub codebook: Codebook,
    pub clusters: Vec<Vec<PoseCluster>>,
    pub verified: Vec<Vec<VerifiedPose>>,
    pub graph: PoseGraph,
    /// Scene index of each graph node.
    pub node_scenes: Vec<usize>,
    pub segments: Vec<OrientedPointCloud>,
    pub initial_poses: Vec<Pose>,
    /// Anchored when the configuration asks for it.
    pub refined_poses: Vec<Pose>,
    pub anchor: Pose,
    pub report: Option<RefineReport>,
    pub initial_reconstruction: OrientedPointCloud,
    pub reconstruction: OrientedPointCloud,
}

/// Runs every stage; scenes are detected and verified in parallel.
pub fn run(mesh: &TriMesh, scenes: &[OrientedPointCloud], cfg: &PipelineConfig) -> Result<PipelineRun> {
    let codebook = train(mesh, cfg)?;
    let model = ModelIndex::from_codebook(&codebook)?;
    let per_scene = par::map(scenes, |s| -> Result<(Vec<PoseCluster>, Vec<VerifiedPose>)> {
        let clusters = detect_scene(s, &codebook, cfg)?;
        let verified = verify_scene(s, &clusters, &model, &codebook, cfg)?;
        Ok((clusters, verified))
    });
    let mut clusters = Vec::with_capacity(scenes.len());
    let mut verified = Vec::with_capacity(scenes.len());
    for r in per_scene {
        let (c, v) = r?;
        clusters.push(c);
        verified.push(v);
    }
    let views: Vec<ViewInput> = verified
        .iter()
        .enumerate()
        .filter_map(|(i, v)| best_accepted(v).map(|b| view_input(i, &scenes[i], &b.pose, &model, cfg, None)))
        .collect();
    let graph = build_graph(&views, &codebook, cfg)?;
    let node_scenes: Vec<usize> = graph.nodes.iter().map(|n| n.id).collect();
    let node_clouds: Vec<OrientedPointCloud> = node_scenes.iter().map(|&i| scenes[i].clone()).collect();
    let segments = node_segments(&graph, &node_clouds);
    let initial_poses: Vec<Pose> = graph.nodes.iter().map(|n| n.pose).collect();
    let (mut refined_poses, report) = refine(&graph, &segments, codebook.model_diameter, cfg)?;
    let anchor = if cfg.anchor && report.is_some() {
        anchor_to_model(&refined_poses, &segments, &model, cfg)?
    } else {
        Pose::identity()
    };
    for p in &mut refined_poses {
        *p = anchor.compose(p);
    }
    let initial_reconstruction = reconstruct(&initial_poses, &segments)?;
    let reconstruction = reconstruct(&refined_poses, &segments)?;
    Ok(PipelineRun {
        codebook,
        clusters,
        verified,
        graph,
        node_scenes,
        segments,
        initial_poses,
        refined_poses,
        anchor,
        report,
        initial_reconstruction,
        reconstruction,
    })
}
