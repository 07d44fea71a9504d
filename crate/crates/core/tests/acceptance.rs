//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs with `cargo test -p cadrecon --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use cadrecon::codebook::Codebook;
use cadrecon::config::PipelineConfig;
use cadrecon::detector::{extract_local_max, vote_reference, SoftBins};
use cadrecon::geometry::shapes::lumpy_ellipsoid;
use cadrecon::geometry::{exp_se3, KdIndex};
use cadrecon::pipeline::{best_accepted, detect_scene, run, train, verify_scene};
use cadrecon::pose_graph::{
    build_voxel_index, compute_hpo, select_edges, GraphEdge, GraphNode, GraphParams, Hpo, IncrementalGraph,
    OverlapEdge, PoseGraph,
};
use cadrecon::ppf::compute_ppf;
use cadrecon::refine::{analytic_jacobian, point_to_plane, refine, FixedFrame, RefineParams};
use cadrecon::synth::{clutter_scene, eval_reconstruction, synth_dataset, SynthSpec};
use cadrecon::verifier::{score, ModelIndex};
use cadrecon::{OrientedPointCloud, Pose, TriMesh, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIAMETER: f64 = 0.3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn reference_mesh() -> TriMesh {
    lumpy_ellipsoid(4, DIAMETER)
}

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-s..s),
        rng.random_range(-s..s),
        rng.random_range(-s..s),
    )
}

fn rand_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = rand_vec(rng, 1.0);
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_pose(rng: &mut ChaCha8Rng, rot: f64, trans: f64) -> Pose {
    Pose::from_angle_axis(rand_vec(rng, 1.0) * rot, rand_vec(rng, 1.0) * trans)
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    let mesh = reference_mesh();
    let sigma = 0.002 * DIAMETER;
    let spec = SynthSpec {
        n_views: 8,
        noise_sigma: sigma,
        clutter_ratio: 0.4,
        occlusion_ratio: 0.2,
        seed: 7,
        ..Default::default()
    };
    let scenes = synth_dataset(&mesh, &spec).expect("synthesis");
    let clouds: Vec<OrientedPointCloud> = scenes.iter().map(|s| s.cloud.clone()).collect();
    let t = Instant::now();
    let r = match run(&mesh, &clouds, &PipelineConfig::default()) {
        Ok(r) => r,
        Err(e) => return check(false, format!("pipeline failed: {e}")),
    };
    let pre = eval_reconstruction(&r.initial_reconstruction.points, &mesh).expect("eval");
    let post = eval_reconstruction(&r.reconstruction.points, &mesh).expect("eval");
    let elapsed = t.elapsed();
    let ratio = post.rms / pre.rms;
    let time_ok = elapsed < Duration::from_secs(120);
    let rms_ok = post.rms <= 1.5 * sigma;
    let ratio_ok = ratio <= 0.5;
    check(
        time_ok && rms_ok && ratio_ok,
        format!(
            "{} of 8 views; time {:.1} s (< 120) {}; rms {:.3e} (<= {:.3e}) {}; pre {:.3e}, ratio {:.3} (<= 0.5) {}",
            r.graph.nodes.len(),
            elapsed.as_secs_f64(),
            ok(time_ok),
            post.rms,
            1.5 * sigma,
            ok(rms_ok),
            pre.rms,
            ratio,
            ok(ratio_ok)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "MISSED"
    }
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mesh = reference_mesh();
    let cfg = PipelineConfig::default();
    let cb = train(&mesh, &cfg).expect("training");
    let model = ModelIndex::from_codebook(&cb).expect("model index");
    let accepted_in_clutter = |seed: u64| -> usize {
        let scene = clutter_scene(DIAMETER, 20_000, 0.003, seed);
        let clusters = detect_scene(&scene, &cb, &cfg).expect("detection");
        let verified = verify_scene(&scene, &clusters, &model, &cb, &cfg).expect("verification");
        verified.iter().filter(|v| v.accepted).count()
    };
    let false_positives: usize = (0..50).map(|i| accepted_in_clutter(1000 + i)).sum();

    let mut recalled = 0;
    for i in 0..25u64 {
        let spec = SynthSpec {
            n_views: 2,
            noise_sigma: 0.002 * DIAMETER,
            clutter_ratio: 0.6 * i as f64 / 24.0,
            occlusion_ratio: 0.2,
            seed: 100 + i,
            ..Default::default()
        };
        for s in synth_dataset(&mesh, &spec).expect("synthesis") {
            let clusters = detect_scene(&s.cloud, &cb, &cfg).expect("detection");
            let verified = verify_scene(&s.cloud, &clusters, &model, &cb, &cfg).expect("verification");
            if best_accepted(&verified).is_some_and(|b| {
                b.pose.rotation_distance(&s.gt_pose) < 5f64.to_radians()
                    && b.pose.translation_distance(&s.gt_pose) < 0.05 * DIAMETER
            }) {
                recalled += 1;
            }
        }
    }
    check(
        false_positives == 0 && recalled >= 45,
        format!("{false_positives} accepted poses in 50 clutter scenes (need 0); recall {recalled}/50 (need >= 45)"),
    )
}

// ---------------------------------------------------------------- 3

/// Codebook samples with every point moved by 0.15 distance bins and every
/// normal tilted by 0.15 angle bins, so each feature component moves by at
/// most 0.3 bins.
fn jittered_self_scene(cb: &Codebook, rng: &mut ChaCha8Rng) -> OrientedPointCloud {
    let q = &cb.quantizer;
    let mut out = OrientedPointCloud::default();
    for (p, n) in cb.sampled_model.points.iter().zip(&cb.sampled_model.normals) {
        let dp = rand_unit(rng) * 0.15 * q.dist_step;
        let axis = n.cross(&rand_unit(rng)).normalize();
        let tilt = exp_se3(&(axis * 0.15 * q.angle_step), &Vec3::zeros());
        out.push(p + dp, tilt.rotate(n));
    }
    out
}

fn criterion_3() -> Outcome {
    let cb = train(&lumpy_ellipsoid(3, DIAMETER), &PipelineConfig::default()).expect("training");
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let scene = jittered_self_scene(&cb, &mut rng);
    let n = scene.len();
    let rate = |k: usize| {
        let hits = (0..n)
            .filter(|&r| {
                extract_local_max(&vote_reference(&scene, r, &cb, SoftBins::new(k), 30)).is_ok_and(|m| m.0 == r)
            })
            .count();
        hits as f64 / n as f64
    };
    let (k1, k4) = (rate(1), rate(4));
    check(
        k1 >= 0.90 && k4 >= 0.95 && k4 > k1,
        format!(
            "{n} references; K=1 {:.1}% (>= 90), K=4 {:.1}% (>= 95, > K=1)",
            100.0 * k1,
            100.0 * k4
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Cameras observing random boxes of unit voxels.
fn random_layout(rng: &mut ChaCha8Rng) -> Vec<(usize, Vec<Vec3>)> {
    let n = rng.random_range(2..12);
    (0..n)
        .map(|c| {
            let lo: [i32; 3] = std::array::from_fn(|_| rng.random_range(0..5));
            let ext: [i32; 3] = std::array::from_fn(|_| rng.random_range(2..6));
            let mut pts = Vec::new();
            for x in lo[0]..lo[0] + ext[0] {
                for y in lo[1]..lo[1] + ext[1] {
                    for z in lo[2]..lo[2] + ext[2] {
                        for _ in 0..rng.random_range(1..3) {
                            let f = Vec3::new(rng.random(), rng.random(), rng.random());
                            pts.push(Vec3::new(x as f64, y as f64, z as f64) + f * 0.999);
                        }
                    }
                }
            }
            (c, pts)
        })
        .collect()
}

fn bfs_connected(n: usize, edges: &[OverlapEdge]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.0].push(e.1);
        adj[e.1].push(e.0);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn edge_set(edges: &[OverlapEdge]) -> BTreeSet<OverlapEdge> {
    edges.iter().copied().collect()
}

/// Views strung along x; each shares half its voxels with each neighbour.
fn strip_layout(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec3>> {
    (0..n)
        .map(|c| {
            let mut pts = Vec::new();
            for x in 4 * c..4 * c + 8 {
                for y in 0..10 {
                    for z in 0..10 {
                        let f = Vec3::new(rng.random(), rng.random(), rng.random());
                        pts.push(Vec3::new(x as f64, y as f64, z as f64) + f * 0.999);
                    }
                }
            }
            pts
        })
        .collect()
}

fn per_view_insert_time(n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let views = strip_layout(n, &mut rng);
    let mut best = f64::INFINITY;
    for _ in 0..7 {
        let t = Instant::now();
        let mut g = IncrementalGraph::new(GraphParams::default(), 1.0).expect("params");
        for (c, pts) in views.iter().enumerate() {
            g.insert_view(c, pts).expect("insert");
        }
        assert!(g.connected());
        best = best.min(t.elapsed().as_secs_f64());
    }
    best / n as f64
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut mismatches = 0;
    let mut below_low = 0;
    let mut flag_errors = 0;
    let mut disconnected = 0;
    for layout_no in 0..100 {
        let segments = random_layout(&mut rng);
        let n = segments.len();
        let params = if layout_no % 2 == 0 {
            GraphParams::default()
        } else {
            GraphParams {
                alpha_l: rng.random_range(0.0..4.0),
                alpha_h: rng.random_range(4.0..20.0),
                relative: false,
                voxel_size: None,
            }
        };
        let index = build_voxel_index(&segments, 1.0).expect("index");
        let hpo = compute_hpo(&index);
        let (al, ah) = params.resolve(&index);
        let (batch, batch_connected) = select_edges(&hpo, n, al, ah);

        let mut inc = IncrementalGraph::new(params, 1.0).expect("params");
        for (c, pts) in &segments {
            inc.insert_view(*c, pts).expect("insert");
        }
        let incremental = inc.edges();
        if edge_set(&batch) != edge_set(&incremental) || inc.hpo() != hpo {
            mismatches += 1;
        }
        below_low += batch.iter().chain(&incremental).filter(|e| (e.2 as f64) < al).count();
        if bfs_connected(n, &batch) != batch_connected || bfs_connected(n, &incremental) != inc.connected() {
            flag_errors += 1;
        }
        disconnected += usize::from(!batch_connected);
    }

    let times: Vec<f64> = [8, 16, 32].iter().map(|&n| per_view_insert_time(n)).collect();
    let growth = [times[1] / times[0], times[2] / times[1]];
    let scaling_ok = growth.iter().all(|&g| g <= 2.5);
    check(
        mismatches == 0 && below_low == 0 && flag_errors == 0 && scaling_ok,
        format!(
            "100 layouts ({disconnected} disconnected): {mismatches} batch/incremental mismatches, \
             {below_low} edges below alpha_l, {flag_errors} connectivity flag errors; \
             per-view insert {:.1}/{:.1}/{:.1} us for 8/16/32 views, growth {:.2}x, {:.2}x (<= 2.5)",
            times[0] * 1e6,
            times[1] * 1e6,
            times[2] * 1e6,
            growth[0],
            growth[1]
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Patch of a wavy surface.
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

fn chain_graph(poses: &[Pose]) -> PoseGraph {
    PoseGraph {
        nodes: poses
            .iter()
            .enumerate()
            .map(|(i, p)| GraphNode {
                id: i,
                pose: *p,
                scene: None,
                segment: Vec::new(),
            })
            .collect(),
        edges: (1..poses.len())
            .map(|j| GraphEdge {
                i: j - 1,
                j,
                overlap: 1,
                relative: poses[j - 1].inverse().compose(&poses[j]),
            })
            .collect(),
        coverage: 1.0,
        uncovered_samples: 0,
        connected: true,
    }
}

/// Worst relative deviation of the analytic Jacobian from central
/// differences over 200 random states.
fn jacobian_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let th = random_pose(&mut rng, 1.5, 1.0);
        let tk = random_pose(&mut rng, 1.5, 1.0);
        let p = rand_vec(&mut rng, 1.0);
        let q = rand_vec(&mut rng, 1.0);
        let n = rand_unit(&mut rng);
        let j = analytic_jacobian(&p, &n, &th, &tk, false, false);
        let r = |a: &Pose, b: &Pose| point_to_plane(&p, &q, &n, &b.inverse().compose(a));
        let step = 1e-6;
        let scale = j.amax().max(1.0);
        for d in 0..12 {
            let mut v = [0.0; 6];
            v[d % 6] = step;
            let e = |s: f64| exp_se3(&(Vec3::new(v[0], v[1], v[2]) * s), &(Vec3::new(v[3], v[4], v[5]) * s));
            let fd = if d < 6 {
                (r(&th.compose(&e(1.0)), &tk) - r(&th.compose(&e(-1.0)), &tk)) / (2.0 * step)
            } else {
                (r(&th, &tk.compose(&e(1.0))) - r(&th, &tk.compose(&e(-1.0)))) / (2.0 * step)
            };
            worst = worst.max((fd - j[d]).abs() / scale);
        }
    }
    worst
}

struct ChainProblem {
    clouds: Vec<OrientedPointCloud>,
    init: Vec<Pose>,
}

fn chain_problem(seed: u64) -> ChainProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = wavy_surface(&mut rng, 2000);
    let gt: Vec<Pose> = (0..4).map(|_| random_pose(&mut rng, 0.5, 0.5)).collect();
    let clouds = gt.iter().map(|g| world.transformed(&g.inverse())).collect();
    let init = gt
        .iter()
        .map(|g| g.compose(&random_pose(&mut rng, 0.02, 0.02)))
        .collect();
    ChainProblem { clouds, init }
}

fn fixed(camera: usize) -> RefineParams {
    RefineParams {
        fixed_frame: FixedFrame::Camera(camera),
        ..Default::default()
    }
}

fn relative_to_first(poses: &[Pose]) -> Vec<Pose> {
    let inv = poses[0].inverse();
    poses.iter().map(|p| inv.compose(p)).collect()
}

fn max_diff(a: &[Pose], b: &[Pose]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

fn criterion_5() -> Outcome {
    let jac = jacobian_error();

    let mut increases = 0;
    let mut steps = 0;
    for seed in 0..20 {
        let pb = chain_problem(500 + seed);
        let (_, report) = refine(&chain_graph(&pb.init), &pb.clouds, &fixed(0), 2.0).expect("refine");
        for it in &report.iterations {
            let mut last = it.energy_start;
            for &e in &it.accepted_energies {
                steps += 1;
                if e > last {
                    increases += 1;
                }
                last = e;
            }
        }
    }

    // A common change of model frame must commute with refinement, and the
    // choice of fixed camera must not change the relative poses.
    let pb = chain_problem(77);
    let g = Pose::from_angle_axis(Vec3::new(0.4, -1.1, 0.7), Vec3::new(0.3, 2.0, -1.0));
    let (a, _) = refine(&chain_graph(&pb.init), &pb.clouds, &fixed(0), 2.0).expect("refine");
    let moved: Vec<Pose> = pb.init.iter().map(|p| g.compose(p)).collect();
    let (b, _) = refine(&chain_graph(&moved), &pb.clouds, &fixed(0), 2.0).expect("refine");
    let ga: Vec<Pose> = a.iter().map(|p| g.compose(p)).collect();
    let frame_change = max_diff(&ga, &b);
    let (c, _) = refine(&chain_graph(&pb.init), &pb.clouds, &fixed(2), 2.0).expect("refine");
    let fixed_change = max_diff(&relative_to_first(&a), &relative_to_first(&c));

    check(
        jac <= 1e-5 && increases == 0 && frame_change <= 1e-6 && fixed_change <= 1e-6,
        format!(
            "jacobian rel err {jac:.1e} (<= 1e-5); {increases} energy increases in {steps} accepted steps over 20 seeds; \
             gauge: frame change {frame_change:.1e}, fixed camera swap {fixed_change:.1e} (<= 1e-6)"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn ppf_invariance_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p1, p2) = (rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0));
        let (n1, n2) = (rand_unit(&mut rng), rand_unit(&mut rng));
        let t = random_pose(&mut rng, PI, 5.0);
        let f = compute_ppf(&p1, &n1, &p2, &n2).expect("ppf").as_array();
        let g = compute_ppf(&t.apply(&p1), &t.rotate(&n1), &t.apply(&p2), &t.rotate(&n2))
            .expect("ppf")
            .as_array();
        for (a, b) in f.iter().zip(&g) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn kd_mismatches() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let pts: Vec<Vec3> = (0..5000).map(|_| rand_vec(&mut rng, 1.0)).collect();
    let index = KdIndex::new(&pts);
    (0..1000)
        .filter(|_| {
            let q = rand_vec(&mut rng, 1.2);
            let brute = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
            index
                .nearest(&q)
                .is_none_or(|(i, d2)| d2 != brute || (pts[i] - q).norm_squared() != brute)
        })
        .count()
}

fn cell(x: i32, y: i32, z: i32) -> Vec3 {
    Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5)
}

/// Hand-built layouts with their overlap tables worked out by hand.
fn hpo_mismatches() -> usize {
    let row = |x0: i32, x1: i32| (x0..x1).map(|x| cell(x, 0, 0)).collect::<Vec<_>>();
    let layouts: Vec<(Vec<(usize, Vec<Vec3>)>, Vec<((usize, usize), usize)>)> = vec![
        // three cameras on a line of cells: 0..4, 2..6, 5..9
        (
            vec![(0, row(0, 4)), (1, row(2, 6)), (2, row(5, 9))],
            vec![((0, 1), 2), ((1, 2), 1)],
        ),
        // one shared cell seen by all three, repeated points counted once
        (
            vec![
                (0, vec![cell(1, 1, 1); 5]),
                (1, vec![cell(1, 1, 1), cell(2, 1, 1)]),
                (2, vec![cell(1, 1, 1)]),
            ],
            vec![((0, 1), 1), ((0, 2), 1), ((1, 2), 1)],
        ),
        // disjoint cameras have no entries
        (vec![(0, row(0, 3)), (1, row(10, 13))], vec![]),
        // a 2x2x2 block inside a 3x3x3 block
        (
            vec![
                (0, (0..27).map(|i| cell(i % 3, i / 3 % 3, i / 9)).collect()),
                (3, (0..8).map(|i| cell(i % 2, i / 2 % 2, i / 4)).collect()),
            ],
            vec![((0, 3), 8)],
        ),
    ];
    layouts
        .into_iter()
        .filter(|(segments, expected)| {
            let hpo = compute_hpo(&build_voxel_index(segments, 1.0).expect("index"));
            hpo != expected.iter().copied().collect::<Hpo>()
        })
        .count()
}

/// Ξ on a grid of model samples spaced far wider than τ.
fn xi_values() -> [f64; 3] {
    let model: Vec<Vec3> = (0..100)
        .map(|i| Vec3::new((i % 10) as f64, (i / 10) as f64, 0.0))
        .collect();
    let tau = 0.1;
    let xi = |scene: &[Vec3]| score(&Pose::identity(), &model, &KdIndex::new(scene), tau);
    let far: Vec<Vec3> = model.iter().map(|p| p + Vec3::new(0.0, 0.0, 5.0)).collect();
    let half: Vec<Vec3> = model.iter().step_by(2).copied().collect();
    [xi(&model), xi(&far), xi(&half)]
}

fn point_to_plane_failures() -> usize {
    let z = Vec3::zeros();
    let id = Pose::identity();
    let rz = Pose::from_angle_axis(Vec3::new(0.0, 0.0, PI / 2.0), z);
    let cases = [
        // coincident points
        (
            point_to_plane(&Vec3::new(1.0, 2.0, 3.0), &Vec3::new(1.0, 2.0, 3.0), &Vec3::z(), &id),
            0.0,
        ),
        // unit offset along the normal
        (point_to_plane(&Vec3::z(), &z, &Vec3::z(), &id), 1.0),
        // signed: below the plane
        (point_to_plane(&(-Vec3::z() * 2.0), &z, &Vec3::z(), &id), -2.0),
        // tangential offset is invisible
        (point_to_plane(&Vec3::new(3.0, -4.0, 0.0), &z, &Vec3::z(), &id), 0.0),
        // translation along the normal
        (
            point_to_plane(&z, &z, &Vec3::x(), &Pose::from_translation(Vec3::new(0.25, 7.0, 0.0))),
            0.25,
        ),
    ];
    let mut failures = cases.iter().filter(|(got, want)| got != want).count();
    // a quarter turn about z carries x onto y
    if point_to_plane(&Vec3::x(), &Vec3::y(), &Vec3::y(), &rz).abs() > 1e-15 {
        failures += 1;
    }
    failures
}

fn criterion_6() -> Outcome {
    let ppf = ppf_invariance_error();
    let kd = kd_mismatches();
    let hpo = hpo_mismatches();
    let xi = xi_values();
    let p2p = point_to_plane_failures();
    check(
        ppf <= 1e-9 && kd == 0 && hpo == 0 && xi == [1.0, 0.0, 0.5] && p2p == 0,
        format!(
            "ppf invariance err {ppf:.1e} (<= 1e-9); {kd}/1000 kd mismatches; {hpo}/4 hpo layouts wrong; \
             xi {xi:?} (want [1.0, 0.0, 0.5]); {p2p}/6 point-to-plane cases wrong"
        ),
    )
}

// ---------------------------------------------------------------- 7

fn run_fingerprint() -> BTreeMap<&'static str, String> {
    let mesh = lumpy_ellipsoid(3, DIAMETER);
    let spec = SynthSpec {
        n_views: 4,
        noise_sigma: 0.002 * DIAMETER,
        clutter_ratio: 0.3,
        occlusion_ratio: 0.2,
        seed: 11,
        ..Default::default()
    };
    let scenes = synth_dataset(&mesh, &spec).expect("synthesis");
    let clouds: Vec<OrientedPointCloud> = scenes.iter().map(|s| s.cloud.clone()).collect();
    let r = run(&mesh, &clouds, &PipelineConfig::default()).expect("pipeline");
    let mut out = BTreeMap::new();
    out.insert("synth", format!("{scenes:?}"));
    out.insert("codebook", format!("{:?}", r.codebook.to_bytes()));
    out.insert("clusters", format!("{:?}", r.clusters));
    out.insert("verified", format!("{:?}", r.verified));
    out.insert("graph", serde_json::to_string(&r.graph).expect("json"));
    out.insert("refine report", format!("{:?}", r.report));
    out.insert("poses", format!("{:?} {:?}", r.refined_poses, r.anchor));
    out.insert("reconstruction", format!("{:?}", r.reconstruction));
    out
}

fn criterion_7() -> Outcome {
    let a = run_fingerprint();
    let b = run_fingerprint();
    let differing: Vec<&str> = a.keys().filter(|k| a[*k] != b[*k]).copied().collect();
    check(
        differing.is_empty(),
        format!(
            "{} stages compared; differing: {}",
            a.len(),
            if differing.is_empty() {
                "none".to_string()
            } else {
                differing.join(", ")
            }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("end-to-end reconstruction", criterion_1),
        ("false positives and recall", criterion_2),
        ("detection argmax oracle", criterion_3),
        ("pose graph", criterion_4),
        ("refiner numerics", criterion_5),
        ("unit oracles", criterion_6),
        ("determinism", criterion_7),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {} ({name}): {} [{:.1} s] {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
