use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};

use super::{KdIndex, Pose, Vec3};
use crate::error::{Error, Result};

/// Points with one unit normal each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Self {
        assert_eq!(points.len(), normals.len(), "points and normals differ in length");
        Self { points, normals }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vec3, n: Vec3) {
        self.points.push(p);
        self.normals.push(n);
    }

    pub fn transformed(&self, pose: &Pose) -> OrientedPointCloud {
        OrientedPointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            normals: self.normals.iter().map(|n| pose.rotate(n)).collect(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> OrientedPointCloud {
        OrientedPointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: indices.iter().map(|&i| self.normals[i]).collect(),
        }
    }

    /// Every `stride`-th point, starting with the first.
    pub fn strided(&self, stride: usize) -> OrientedPointCloud {
        let idx: Vec<usize> = (0..self.len()).step_by(stride.max(1)).collect();
        self.select(&idx)
    }

    pub fn extend(&mut self, other: &OrientedPointCloud) {
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        bounds(&self.points)
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Largest deviation of any normal length from one.
    pub fn max_normal_error(&self) -> f64 {
        self.normals.iter().map(|n| (n.norm() - 1.0).abs()).fold(0.0, f64::max)
    }
}

pub fn bounds(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = points.first()?;
    Some(
        points
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
    )
}

/// Result of PCA normal estimation; `degenerate` lists points whose
/// neighbourhood had rank below two (their normal is an arbitrary unit vector).
#[derive(Clone, Debug)]
pub struct NormalEstimate {
    pub cloud: OrientedPointCloud,
    pub degenerate: Vec<usize>,
}

/// Per-point PCA normal over the `k` nearest neighbours (the point itself
/// included), flipped so that `n · (viewpoint - p) >= 0`.
pub fn estimate_normals(points: &[Vec3], k: usize, viewpoint: &Vec3) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 3")));
    }
    if points.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} points, need at least k = {k}",
            points.len()
        )));
    }
    let tree = KdIndex::new(points);
    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let nn = tree.knn(p, k);
        let mean = nn.iter().map(|&(j, _)| points[j]).sum::<Vec3>() / nn.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(j, _) in &nn {
            let d = points[j] - mean;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let largest = eig.eigenvalues[order[2]];
        let middle = eig.eigenvalues[order[1]];
        let mut n = if largest <= 0.0 || middle <= 1e-12 * largest {
            degenerate.push(i);
            Vec3::z()
        } else {
            eig.eigenvectors.column(order[0]).into_owned().normalize()
        };
        if n.dot(&(viewpoint - p)) < 0.0 {
            n = -n;
        }
        normals.push(n);
    }
    Ok(NormalEstimate {
        cloud: OrientedPointCloud::new(points.to_vec(), normals),
        degenerate,
    })
}

/// Greedy, order-preserving Poisson-disk thinning on a hash grid: a point is
/// kept iff no previously kept point lies strictly closer than `min_dist`.
pub fn sample_uniform(cloud: &OrientedPointCloud, min_dist: f64) -> OrientedPointCloud {
    assert!(min_dist > 0.0, "min_dist must be positive");
    let keep = thin_indices(&cloud.points, min_dist);
    cloud.select(&keep)
}

pub(crate) fn thin_indices(points: &[Vec3], min_dist: f64) -> Vec<usize> {
    let inv = 1.0 / min_dist;
    let key = |p: &Vec3| -> [i64; 3] {
        [
            (p.x * inv).floor() as i64,
            (p.y * inv).floor() as i64,
            (p.z * inv).floor() as i64,
        ]
    };
    let r2 = min_dist * min_dist;
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut keep = Vec::new();
    'points: for (i, p) in points.iter().enumerate() {
        let c = key(p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(cell) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        if cell.iter().any(|&j| (points[j] - p).norm_squared() < r2) {
                            continue 'points;
                        }
                    }
                }
            }
        }
        grid.entry(c).or_default().push(i);
        keep.push(i);
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points(n: usize, spacing: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for y in 0..n {
            for x in 0..n {
                pts.push(Vec3::new(x as f64 * spacing, y as f64 * spacing, 0.0));
            }
        }
        pts
    }

    fn unoriented(points: Vec<Vec3>) -> OrientedPointCloud {
        let n = points.len();
        OrientedPointCloud::new(points, vec![Vec3::z(); n])
    }

    #[test]
    fn planar_normals_follow_viewpoint() {
        let pts = grid_points(10, 0.1);
        let up = estimate_normals(&pts, 10, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!(up.degenerate.is_empty());
        assert!(up.cloud.normals.iter().all(|n| (n - Vec3::z()).amax() < 1e-12));
        let down = estimate_normals(&pts, 10, &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(down.cloud.normals.iter().all(|n| (n + Vec3::z()).amax() < 1e-12));
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Fibonacci sphere; analytic normal is the position itself.
        let n = 2000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), y, r * phi.sin())
            })
            .collect();
        let est = estimate_normals(&pts, 10, &Vec3::zeros()).unwrap();
        let cos5 = 5f64.to_radians().cos();
        for (p, nrm) in pts.iter().zip(&est.cloud.normals) {
            assert!(nrm.dot(p).abs() >= cos5);
            assert!(nrm.dot(p) <= 0.0, "flipped toward the interior viewpoint");
            assert!((nrm.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_neighbourhoods_are_flagged() {
        let pts: Vec<Vec3> = (0..12).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let est = estimate_normals(&pts, 5, &Vec3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!(est.degenerate.len(), 12);
        assert!(est.cloud.max_normal_error() < 1e-12);
        assert!(estimate_normals(&pts, 2, &Vec3::zeros()).is_err());
        assert!(estimate_normals(&pts[..3], 4, &Vec3::zeros()).is_err());
    }

    #[test]
    fn close_pair_keeps_first() {
        let c = unoriented(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0)]);
        let s = sample_uniform(&c, 1.0);
        assert_eq!(s.points, vec![Vec3::zeros()]);
    }

    #[test]
    fn spread_points_all_survive() {
        let c = unoriented(grid_points(5, 1.0));
        assert_eq!(sample_uniform(&c, 1.0).len(), 25);
    }

    fn brute_greedy(points: &[Vec3], min_dist: f64) -> Vec<usize> {
        let mut keep: Vec<usize> = Vec::new();
        for (i, p) in points.iter().enumerate() {
            if keep.iter().all(|&j| (points[j] - p).norm() >= min_dist) {
                keep.push(i);
            }
        }
        keep
    }

    #[test]
    fn grid_thinning_matches_brute_force_greedy() {
        let pts = grid_points(10, 1.0);
        let expect = brute_greedy(&pts, 2.1);
        let got = thin_indices(&pts, 2.1);
        assert_eq!(got, expect);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn thinning_is_a_cover_and_a_packing(
                raw in prop::collection::vec(prop::array::uniform3(0.0f64..3.0), 1..300),
                min_dist in 0.05f64..1.0,
            ) {
                let pts: Vec<Vec3> = raw.into_iter().map(Vec3::from).collect();
                let keep = thin_indices(&pts, min_dist);
                prop_assert_eq!(&keep, &brute_greedy(&pts, min_dist));
                for (a, &i) in keep.iter().enumerate() {
                    for &j in &keep[a + 1..] {
                        prop_assert!((pts[i] - pts[j]).norm() >= min_dist);
                    }
                }
                for p in &pts {
                    prop_assert!(keep.iter().any(|&j| (pts[j] - p).norm() < min_dist || pts[j] == *p));
                }
            }
        }
    }
}
