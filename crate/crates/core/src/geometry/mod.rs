//! Shared geometric types and spatial indices.

mod cloud;
mod kdtree;
mod mesh;
mod pose;
pub mod shapes;
mod voxel;

pub use cloud::{bounds, estimate_normals, sample_uniform, NormalEstimate, OrientedPointCloud};

pub use kdtree::KdIndex;
pub use mesh::{closest_point_on_triangle, diameter, TriMesh, TriangleIndex};
pub use pose::{exp_se3, rows as pose_rows, AngleAxis, Pose};
pub use voxel::VoxelGrid;

pub type Vec3 = nalgebra::Vector3<f64>;

/// `[v]ₓ`, the cross-product matrix.
pub fn skew(v: &Vec3) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
