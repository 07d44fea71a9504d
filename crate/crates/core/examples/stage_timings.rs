//! Times every stage on the reference synthetic dataset and prints the
//! reconstruction error before and after joint refinement.
//!
//! `cargo run --release --example stage_timings [cad_subdivisions]`
//!
//! The scans always come from a level-4 lumpy ellipsoid; a lower argument
//! trains on a coarser tessellation of the same surface.

use std::time::Instant;

use cadrecon::config::PipelineConfig;
use cadrecon::geometry::shapes::lumpy_ellipsoid;
use cadrecon::pipeline::{best_accepted, detect_scene, run, train, verify_scene};
use cadrecon::synth::{eval_reconstruction, synth_dataset, SynthSpec};
use cadrecon::verifier::ModelIndex;
use cadrecon::OrientedPointCloud;

fn main() {
    let cad_level: u32 = std::env::args()
        .nth(1)
        .map_or(4, |a| a.parse().expect("subdivision level"));
    let diameter = 0.3;
    let mesh = lumpy_ellipsoid(4, diameter);
    let cad = lumpy_ellipsoid(cad_level, diameter);
    let spec = SynthSpec {
        n_views: 8,
        noise_sigma: 0.002 * diameter,
        clutter_ratio: 0.4,
        occlusion_ratio: 0.2,
        seed: 7,
        ..Default::default()
    };
    let cfg = PipelineConfig::default();

    let t = Instant::now();
    let scenes = synth_dataset(&mesh, &spec).expect("synthesis");
    println!("synth     {:>8.2?}", t.elapsed());
    let t = Instant::now();
    let cb = train(&cad, &cfg).expect("training");
    println!(
        "train     {:>8.2?}  {} samples, {} buckets",
        t.elapsed(),
        cb.sampled_model.len(),
        cb.n_buckets()
    );
    let model = ModelIndex::from_codebook(&cb).expect("model index");
    for (i, s) in scenes.iter().enumerate() {
        let t = Instant::now();
        let clusters = detect_scene(&s.cloud, &cb, &cfg).expect("detection");
        let td = t.elapsed();
        let t = Instant::now();
        let verified = verify_scene(&s.cloud, &clusters, &model, &cb, &cfg).expect("verification");
        let tv = t.elapsed();
        match best_accepted(&verified) {
            Some(b) => println!(
                "view {i}    detect {td:>8.2?}  verify {tv:>8.2?}  score {:.3}  rot err {:.3} deg  trans err {:.2e}",
                b.score,
                b.pose.rotation_distance(&s.gt_pose).to_degrees(),
                b.pose.translation_distance(&s.gt_pose)
            ),
            None => println!("view {i}    detect {td:>8.2?}  verify {tv:>8.2?}  rejected"),
        }
    }

    let clouds: Vec<OrientedPointCloud> = scenes.iter().map(|s| s.cloud.clone()).collect();
    let t = Instant::now();
    let r = run(&cad, &clouds, &cfg).expect("pipeline");
    println!(
        "pipeline  {:>8.2?}  {} nodes, {} edges",
        t.elapsed(),
        r.graph.nodes.len(),
        r.graph.edges.len()
    );
    let pre = eval_reconstruction(&r.initial_reconstruction.points, &mesh).expect("eval");
    let post = eval_reconstruction(&r.reconstruction.points, &mesh).expect("eval");
    println!("sigma     {:.3e}", spec.noise_sigma);
    println!(
        "pre       mean {:.3e}  std {:.3e}  rms {:.3e}",
        pre.mean, pre.stddev, pre.rms
    );
    println!(
        "post      mean {:.3e}  std {:.3e}  rms {:.3e}",
        post.mean, post.stddev, post.rms
    );
    println!("ratio     {:.3}", post.rms / pre.rms);
}
