use super::{bounds, OrientedPointCloud, Vec3};
use crate::error::{Error, Result};

const EXACT_DIAMETER_LIMIT: usize = 5000;

/// Triangle mesh with outward (counter-clockwise) winding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Builds a mesh, dropping zero-area faces. Fails on out-of-range indices.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!(
                "face {f:?} references a vertex beyond {n}"
            )));
        }
        let mut mesh = TriMesh { vertices, faces };
        mesh.faces.retain(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
            (b - a).cross(&(c - a)).norm_squared() > 0.0
        });
        Ok(mesh)
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds(&self.vertices)
    }

    /// Largest vertex-to-vertex distance. Exact up to 5000 vertices; beyond
    /// that a farthest-point double sweep, which never overestimates and is
    /// at least half the true value.
    pub fn diameter(&self) -> Result<f64> {
        diameter(&self.vertices)
    }

    pub fn transformed(&self, pose: &super::Pose) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| pose.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Deterministic barycentric lattice over every face with edge spacing
    /// at most `spacing`; each sample carries its face normal.
    pub fn sample_surface(&self, spacing: f64) -> OrientedPointCloud {
        assert!(spacing > 0.0);
        let mut out = OrientedPointCloud::default();
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let n = self.face_normal(f);
            let longest = (b - a).norm().max((c - b).norm()).max((a - c).norm());
            let steps = ((longest / spacing).ceil() as usize).max(1);
            for i in 0..=steps {
                for j in 0..=(steps - i) {
                    let u = i as f64 / steps as f64;
                    let v = j as f64 / steps as f64;
                    out.push(a + (b - a) * u + (c - a) * v, n);
                }
            }
        }
        out
    }
}

pub fn diameter(points: &[Vec3]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::EmptyMesh);
    }
    if points.len() <= EXACT_DIAMETER_LIMIT {
        let mut best = 0.0f64;
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                best = best.max((a - b).norm_squared());
            }
        }
        return Ok(best.sqrt());
    }
    let farthest = |from: &Vec3| -> (usize, f64) {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - from).norm_squared()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
    };
    let (a, _) = farthest(&points[0]);
    let (b, d_ab) = farthest(&points[a]);
    let (_, d_b) = farthest(&points[b]);
    Ok(d_ab.max(d_b).sqrt())
}

/// Closest point to `p` on triangle `abc` (Ericson, Real-Time Collision Detection, 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Clone, Debug)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    // leaf when `count > 0`: faces order[first..first + count]
    first: u32,
    count: u32,
    left: u32,
    right: u32,
}

/// Bounding-volume hierarchy over the faces of a mesh for exact
/// point-to-surface distance queries.
#[derive(Clone, Debug)]
pub struct TriangleIndex {
    tris: Vec<[Vec3; 3]>,
    order: Vec<u32>,
    nodes: Vec<BvhNode>,
}

impl TriangleIndex {
    pub fn new(mesh: &TriMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut idx = TriangleIndex {
            order: (0..tris.len() as u32).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !idx.tris.is_empty() {
            idx.build(0, idx.tris.len());
        }
        idx
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &t in &self.order[start..end] {
            for v in &self.tris[t as usize] {
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
            let c = centroid(&self.tris[t as usize]);
            clo = clo.inf(&c);
            chi = chi.sup(&c);
        }
        self.nodes.push(BvhNode {
            lo,
            hi,
            first: start as u32,
            count: 0,
            left: 0,
            right: 0,
        });
        if end - start <= 4 {
            self.nodes[id as usize].count = (end - start) as u32;
            return id;
        }
        let axis = (chi - clo).imax();
        let mid = (start + end) / 2;
        let tris = &self.tris;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroid(&tris[a as usize])[axis].total_cmp(&centroid(&tris[b as usize])[axis])
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        let node = &mut self.nodes[id as usize];
        node.left = left;
        node.right = right;
        id
    }

    /// Closest surface point and its distance.
    pub fn closest(&self, p: &Vec3) -> Option<(Vec3, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (Vec3::zeros(), f64::INFINITY);
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if box_dist2(p, &node.lo, &node.hi) >= best.1 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    let [a, b, c] = &self.tris[t as usize];
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best.1 {
                        best = (q, d2);
                    }
                }
            } else {
                let l = &self.nodes[node.left as usize];
                let r = &self.nodes[node.right as usize];
                let dl = box_dist2(p, &l.lo, &l.hi);
                let dr = box_dist2(p, &r.lo, &r.hi);
                if dl < dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        Some((best.0, best.1.sqrt()))
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.closest(p).map_or(f64::INFINITY, |c| c.1)
    }
}

fn centroid(t: &[Vec3; 3]) -> Vec3 {
    (t[0] + t[1] + t[2]) / 3.0
}

fn box_dist2(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let d = (lo - p).sup(&Vec3::zeros()).sup(&(p - hi));
    d.norm_squared()
}
