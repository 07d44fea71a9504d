use super::Vec3;

/// Regular axis-aligned grid with one payload per cell, stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid<T> {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub cells: Vec<T>,
}

impl<T: Clone> VoxelGrid<T> {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], fill: T) -> Self {
        assert!(voxel_size > 0.0, "voxel size must be positive");
        assert!(dims.iter().all(|&d| d > 0), "grid dimensions must be positive");
        Self {
            origin,
            voxel_size,
            dims,
            cells: vec![fill; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Grid covering the box `[lo, hi]`, grown by `pad` on every side.
    pub fn covering(lo: &Vec3, hi: &Vec3, pad: f64, voxel_size: f64, fill: T) -> Self {
        let origin = lo - Vec3::repeat(pad);
        let extent = hi - lo + Vec3::repeat(2.0 * pad);
        let dims = [0, 1, 2].map(|a| ((extent[a] / voxel_size).ceil() as usize).max(1));
        Self::new(origin, voxel_size, dims, fill)
    }
}

impl<T> VoxelGrid<T> {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `floor((p - origin) / voxel_size)`, or `None` outside the grid.
    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Like [`voxel_of`](Self::voxel_of) but snaps outside points to the boundary.
    pub fn voxel_clamped(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            f.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    pub fn linear(&self, v: [usize; 3]) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    pub fn unlinear(&self, i: usize) -> [usize; 3] {
        let x = i % self.dims[0];
        let yz = i / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    pub fn center(&self, v: [usize; 3]) -> Vec3 {
        self.origin + Vec3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5) * self.voxel_size
    }

    pub fn cell_of(&self, p: &Vec3) -> Option<&T> {
        self.voxel_of(p).map(|v| &self.cells[self.linear(v)])
    }

    pub fn cell_of_mut(&mut self, p: &Vec3) -> Option<&mut T> {
        let v = self.voxel_of(p)?;
        let i = self.linear(v);
        Some(&mut self.cells[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_maps_back_to_its_voxel() {
        let g = VoxelGrid::new(Vec3::new(-1.0, 0.5, 2.0), 0.3, [7, 5, 4], 0u8);
        for z in 0..4 {
            for y in 0..5 {
                for x in 0..7 {
                    let v = [x, y, z];
                    assert_eq!(g.voxel_of(&g.center(v)), Some(v));
                    assert_eq!(g.unlinear(g.linear(v)), v);
                }
            }
        }
    }

    #[test]
    fn outside_points_are_rejected() {
        let g = VoxelGrid::new(Vec3::zeros(), 1.0, [2, 2, 2], ());
        assert_eq!(g.voxel_of(&Vec3::new(-0.01, 0.5, 0.5)), None);
        assert_eq!(g.voxel_of(&Vec3::new(2.0, 0.5, 0.5)), None);
        assert_eq!(g.voxel_of(&Vec3::new(1.99, 0.0, 0.5)), Some([1, 0, 0]));
        assert_eq!(g.voxel_clamped(&Vec3::new(-5.0, 9.0, 0.5)), [0, 1, 0]);
    }
}
