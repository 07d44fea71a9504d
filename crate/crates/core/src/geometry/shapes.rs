//! Procedural meshes used by tests, the synthesizer and the demo.

use std::collections::HashMap;

use super::{TriMesh, Vec3};

/// Axis-aligned cube `[0,1]³`, 12 outward-facing triangles.
pub fn unit_cube() -> TriMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    TriMesh::new(v, faces).expect("static cube is valid")
}

/// Unit-radius icosphere after `subdivisions` midpoint refinements.
pub fn icosphere(subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts, faces).expect("icosphere is valid")
}

/// Star-shaped, asymmetric test object: an ellipsoid carrying several
/// Gaussian bumps and dents, centred at the origin and scaled to `diameter`.
///
/// `subdivisions` controls tessellation only; the underlying smooth surface
/// is the same, so a low-subdivision mesh is a faceted approximation of a
/// high-subdivision one.
pub fn lumpy_ellipsoid(subdivisions: u32, diameter: f64) -> TriMesh {
    const BUMPS: [([f64; 3], f64, f64); 7] = [
        ([0.9, 0.3, 0.3], 0.35, 0.35),
        ([-0.4, 0.8, 0.4], 0.25, 0.30),
        ([0.1, -0.5, 0.85], -0.20, 0.40),
        ([-0.7, -0.6, -0.2], 0.30, 0.28),
        ([0.3, 0.2, -0.95], 0.22, 0.25),
        ([-0.2, 0.95, -0.3], -0.15, 0.30),
        ([0.6, -0.75, -0.1], 0.18, 0.22),
    ];
    let scale = Vec3::new(1.35, 1.0, 0.8);
    let base = icosphere(subdivisions);
    let mut verts: Vec<Vec3> = base
        .vertices
        .iter()
        .map(|u| {
            let mut r = 1.0;
            for (c, amp, width) in BUMPS {
                let c = Vec3::from(c).normalize();
                r += amp * (-(u - c).norm_squared() / (width * width)).exp();
            }
            (u * r).component_mul(&scale)
        })
        .collect();
    let (lo, hi) = super::bounds(&verts).expect("non-empty");
    let center = (lo + hi) * 0.5;
    for v in &mut verts {
        *v -= center;
    }
    let mesh = TriMesh::new(verts, base.faces).expect("valid");
    let d = mesh.diameter().expect("non-empty");
    mesh.scaled(diameter / d)
}

/// Axis-aligned box `[lo, hi]` as 12 outward triangles.
pub fn cuboid(lo: Vec3, hi: Vec3) -> TriMesh {
    let cube = unit_cube();
    let ext = hi - lo;
    TriMesh {
        vertices: cube.vertices.iter().map(|v| lo + v.component_mul(&ext)).collect(),
        faces: cube.faces,
    }
}
