//! `cadrecon`: reconstruct an object instance from cluttered scans with a
//! CAD model as a proxy.
//!
//! Exit codes: 0 success, 1 usage, 2 bad input data, 3 pipeline failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cadrecon::codebook::Codebook;
use cadrecon::config::PipelineConfig;
use cadrecon::detector::PoseCluster;
use cadrecon::io::{self, load_cloud, load_mesh, read_json, save_cloud, write_atomic, write_json};
use cadrecon::pipeline::{self, ScenePose};
use cadrecon::pose_graph::{PoseGraph, ViewInput};
use cadrecon::synth::{eval_reconstruction, synth_dataset, SynthSpec};
use cadrecon::verifier::{ModelIndex, VerifiedPose};
use cadrecon::{Error, OrientedPointCloud, TriMesh};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cadrecon",
    version,
    about = "CAD-prior instance reconstruction from cluttered scans"
)]
struct Cli {
    /// JSON pipeline configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the CAD model and build its codebook.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampling distance as a fraction of the model diameter.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Vote for model poses in one scene.
    Detect {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine and score pose hypotheses; only accepted poses are written.
    Verify {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the camera pose graph from verified scenes.
    Graph {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Holds `<scene stem>.json` for each scene.
        #[arg(long)]
        verified: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Jointly refine all camera poses of a graph.
    Refine {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Re-register the refined union to this model's samples.
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Merge the segmented scenes in the model frame.
    Reconstruct {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic dataset from a mesh.
    Synth {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distances from a reconstruction to a mesh.
    Eval {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        /// Also write the statistics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure of a command, mapped onto the exit code.
enum Failure {
    Data(String),
    Pipeline(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoHypotheses
            | Error::NoAcceptedPose
            | Error::EmptySpace
            | Error::Diverged { .. }
            | Error::DisconnectedGraph
            | Error::SingularNormalEquations { .. } => Failure::Pipeline(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(m)) => {
            eprintln!("pipeline failure: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Train { model, out, tau } => {
            if let Some(t) = tau {
                cfg.tau = t;
            }
            cfg.validate()?;
            train(&model, &out, &cfg)
        }
        Command::Detect { codebook, scene, out } => detect(&codebook, &scene, &out, &cfg),
        Command::Verify {
            codebook,
            scene,
            hyps,
            out,
        } => verify(&codebook, &scene, &hyps, &out, &cfg),
        Command::Graph {
            codebook,
            scenes,
            verified,
            out,
        } => graph(&codebook, &scenes, &verified, &out, &cfg),
        Command::Refine {
            graph,
            scenes,
            out,
            report,
            codebook,
        } => refine(&graph, &scenes, &out, report.as_deref(), codebook.as_deref(), &cfg),
        Command::Reconstruct { poses, scenes, out } => reconstruct(&poses, &scenes, &out, &cfg),
        Command::Synth { mesh, spec, out } => synth(&mesh, &spec, &out, &cfg),
        Command::Eval { recon, mesh, out } => eval(&recon, &mesh, out.as_deref(), &cfg),
    }
}

fn read_mesh(path: &Path, cfg: &PipelineConfig) -> Result<TriMesh, Failure> {
    let mesh = load_mesh(path)?;
    Ok(if cfg.unit_scale == 1.0 {
        mesh
    } else {
        mesh.scaled(cfg.unit_scale)
    })
}

fn read_scene(path: &Path, cfg: &PipelineConfig) -> Result<OrientedPointCloud, Failure> {
    let loaded = load_cloud(path)?;
    if let Some(v) = loaded.viewpoint {
        eprintln!(
            "{}: normals estimated towards viewpoint ({}, {}, {}), {} degenerate",
            path.display(),
            v.x,
            v.y,
            v.z,
            loaded.degenerate_normals
        );
    }
    let mut cloud = loaded.cloud;
    if cfg.unit_scale != 1.0 {
        for p in &mut cloud.points {
            *p *= cfg.unit_scale;
        }
    }
    Ok(cloud)
}

fn read_codebook(path: &Path) -> Result<Codebook, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(Codebook::read_from(bytes.as_slice())?)
}

/// `*.ply` files of a directory in name order.
fn scene_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Data(format!("{}: no .ply scenes", dir.display())));
    }
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn train(model: &Path, out: &Path, cfg: &PipelineConfig) -> CmdResult {
    let mesh = read_mesh(model, cfg)?;
    let cb = pipeline::train(&mesh, cfg)?;
    eprintln!(
        "trained: diameter {:.6}, {} samples, {} buckets, {} entries",
        cb.model_diameter,
        cb.sampled_model.len(),
        cb.n_buckets(),
        cb.total_entries()
    );
    Ok(write_atomic(out, &cb.to_bytes())?)
}

fn detect(codebook: &Path, scene: &Path, out: &Path, cfg: &PipelineConfig) -> CmdResult {
    let cb = read_codebook(codebook)?;
    let cloud = read_scene(scene, cfg)?;
    let clusters = pipeline::detect_scene(&cloud, &cb, cfg)?;
    eprintln!("{}: {} pose clusters", scene.display(), clusters.len());
    Ok(write_json(out, &clusters)?)
}

fn verify(codebook: &Path, scene: &Path, hyps: &Path, out: &Path, cfg: &PipelineConfig) -> CmdResult {
    let cb = read_codebook(codebook)?;
    let cloud = read_scene(scene, cfg)?;
    let clusters: Vec<PoseCluster> = read_json(hyps)?;
    let model = ModelIndex::from_codebook(&cb)?;
    let all = pipeline::verify_scene(&cloud, &clusters, &model, &cb, cfg)?;
    let accepted: Vec<VerifiedPose> = all.iter().filter(|v| v.accepted).cloned().collect();
    eprintln!(
        "{}: {} hypotheses, {} survived refinement, {} accepted",
        scene.display(),
        clusters.len(),
        all.len(),
        accepted.len()
    );
    Ok(write_json(out, &accepted)?)
}

fn graph(codebook: &Path, scenes: &Path, verified: &Path, out: &Path, cfg: &PipelineConfig) -> CmdResult {
    let cb = read_codebook(codebook)?;
    let model = ModelIndex::from_codebook(&cb)?;
    let mut views: Vec<ViewInput> = Vec::new();
    for (id, path) in scene_files(scenes)?.iter().enumerate() {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let vpath = verified.join(format!("{stem}.json"));
        if !vpath.exists() {
            eprintln!("{}: no verified poses, skipped", path.display());
            continue;
        }
        let poses: Vec<VerifiedPose> = read_json(&vpath)?;
        let Some(best) = pipeline::best_accepted(&poses) else {
            eprintln!("{}: no accepted pose, skipped", path.display());
            continue;
        };
        let cloud = read_scene(path, cfg)?;
        views.push(pipeline::view_input(
            id,
            &cloud,
            &best.pose,
            &model,
            cfg,
            Some(file_name(path)),
        ));
    }
    let g = pipeline::build_graph(&views, &cb, cfg)?;
    eprintln!(
        "graph: {} of {} views, {} edges, connected before fallback: {}",
        g.nodes.len(),
        views.len(),
        g.edges.len(),
        g.connected
    );
    eprintln!(
        "coverage {:.4}, unscanned model samples {}",
        g.coverage, g.uncovered_samples
    );
    Ok(write_json(out, &g)?)
}

fn node_segments(g: &PoseGraph, scenes: &Path, cfg: &PipelineConfig) -> Result<Vec<OrientedPointCloud>, Failure> {
    g.nodes
        .iter()
        .map(|n| {
            let name = n
                .scene
                .as_ref()
                .ok_or_else(|| Failure::Data(format!("graph node {} names no scene", n.id)))?;
            let cloud = read_scene(&scenes.join(name), cfg)?;
            check_segment(&n.segment, cloud.len(), name)?;
            Ok(cloud.select(&n.segment))
        })
        .collect()
}

fn check_segment(segment: &[usize], n: usize, name: &str) -> Result<(), Failure> {
    match segment.iter().find(|&&i| i >= n) {
        Some(i) => Err(Failure::Data(format!("{name}: segment index {i} beyond {n} points"))),
        None => Ok(()),
    }
}

fn refine(
    graph_path: &Path,
    scenes: &Path,
    out: &Path,
    report_path: Option<&Path>,
    codebook: Option<&Path>,
    cfg: &PipelineConfig,
) -> CmdResult {
    let g: PoseGraph = read_json(graph_path)?;
    let segments = node_segments(&g, scenes, cfg)?;
    let cb = match codebook {
        Some(p) => Some(read_codebook(p)?),
        None => None,
    };
    let model_diameter = cb
        .as_ref()
        .map_or_else(|| bounds_diameter(&segments), |c| c.model_diameter);
    let (mut poses, report) = pipeline::refine(&g, &segments, model_diameter, cfg)?;
    if let Some(r) = &report {
        let first = r.iterations.first().map_or(0.0, |i| i.energy_start);
        let last = r.iterations.last().map_or(0.0, |i| i.energy_end);
        eprintln!(
            "refined {} views in {} outer iterations, energy {first:.6e} -> {last:.6e}, fixed camera {}",
            poses.len(),
            r.iterations.len(),
            r.fixed_frame
        );
    }
    match &cb {
        Some(cb) if cfg.anchor && report.is_some() => {
            let model = ModelIndex::from_codebook(cb)?;
            let anchor = pipeline::anchor_to_model(&poses, &segments, &model, cfg)?;
            for p in &mut poses {
                *p = anchor.compose(p);
            }
            eprintln!(
                "anchored to model, correction {:.4} deg",
                anchor.angle_axis().angle().to_degrees()
            );
        }
        None if cfg.anchor => {
            eprintln!("no codebook given, refined poses keep the fixed camera's placement")
        }
        _ => {}
    }
    let out_poses: Vec<ScenePose> = g
        .nodes
        .iter()
        .zip(&poses)
        .map(|(n, p)| ScenePose {
            id: n.id,
            scene: n.scene.clone(),
            pose: *p,
            segment: n.segment.clone(),
        })
        .collect();
    write_json(out, &out_poses)?;
    if let (Some(path), Some(r)) = (report_path, &report) {
        write_json(path, r)?;
    }
    Ok(())
}

/// Fallback scale when no model is at hand: the bounding-box diagonal of
/// the first segment.
fn bounds_diameter(segments: &[OrientedPointCloud]) -> f64 {
    segments
        .iter()
        .find_map(|s| s.bounds())
        .map_or(1.0, |(lo, hi)| (hi - lo).norm())
}

fn reconstruct(poses_path: &Path, scenes: &Path, out: &Path, cfg: &PipelineConfig) -> CmdResult {
    let entries: Vec<ScenePose> = read_json(poses_path)?;
    let mut poses = Vec::with_capacity(entries.len());
    let mut segments = Vec::with_capacity(entries.len());
    for e in &entries {
        let name = e
            .scene
            .as_ref()
            .ok_or_else(|| Failure::Data(format!("pose {} names no scene", e.id)))?;
        let cloud = read_scene(&scenes.join(name), cfg)?;
        check_segment(&e.segment, cloud.len(), name)?;
        poses.push(e.pose);
        segments.push(cloud.select(&e.segment));
    }
    let recon = pipeline::reconstruct(&poses, &segments)?;
    eprintln!("reconstruction: {} points from {} views", recon.len(), entries.len());
    Ok(save_cloud(out, &recon)?)
}

fn synth(mesh_path: &Path, spec_path: &Path, out: &Path, cfg: &PipelineConfig) -> CmdResult {
    let spec: SynthSpec = read_json(spec_path)?;
    let mesh = read_mesh(mesh_path, cfg)?;
    let scenes = synth_dataset(&mesh, &spec)?;
    fs::create_dir_all(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    for (i, s) in scenes.iter().enumerate() {
        save_cloud(&out.join(format!("scene_{i:03}.ply")), &s.cloud)?;
    }
    write_json(&out.join("ground_truth.json"), &scenes)?;
    eprintln!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

fn eval(recon: &Path, mesh_path: &Path, out: Option<&Path>, cfg: &PipelineConfig) -> CmdResult {
    let cloud = io::parse_ply(&fs::read(recon).map_err(|e| Failure::Data(format!("{}: {e}", recon.display())))?)?;
    let mesh = read_mesh(mesh_path, cfg)?;
    let stats = eval_reconstruction(&cloud.vertices, &mesh)?;
    println!("{:<8}{:>14}", "points", stats.count);
    println!("{:<8}{:>14.6e}", "mean", stats.mean);
    println!("{:<8}{:>14.6e}", "stddev", stats.stddev);
    println!("{:<8}{:>14.6e}", "rms", stats.rms);
    if let Some(p) = out {
        write_json(p, &stats)?;
    }
    Ok(())
}
