//! Pose graph construction. Segmented views, mapped into the model frame,
//! are dropped into a voxel index that records which cameras see each cell.
//! Shared cells give a histogram of pairwise overlaps from which edges are
//! chosen by hysteresis.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_rows, Pose, Vec3};
use crate::union_find::UnionFind;

/// Sparse voxel grid over model space; each occupied cell lists the cameras
/// that observed it, sorted and without repeats.
#[derive(Clone, Debug, Default)]
pub struct VoxelCameraIndex {
    voxel_size: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    covered: BTreeMap<usize, usize>,
}

impl VoxelCameraIndex {
    pub fn new(voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0) {
            return Err(Error::InvalidArgument(format!("voxel size {voxel_size}")));
        }
        Ok(Self {
            voxel_size,
            ..Self::default()
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn key(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / self.voxel_size).floor() as i64)
    }

    /// Adds a camera's points, returning every camera it now shares a cell
    /// with, once per shared cell.
    pub fn insert(&mut self, camera: usize, points: &[Vec3]) -> Vec<usize> {
        let mut met = Vec::new();
        let mut fresh = 0;
        for p in points {
            let set = self.cells.entry(self.key(p)).or_default();
            if let Err(pos) = set.binary_search(&camera) {
                met.extend(set.iter().copied());
                set.insert(pos, camera);
                fresh += 1;
            }
        }
        *self.covered.entry(camera).or_default() += fresh;
        met
    }

    pub fn cameras_at(&self, p: &Vec3) -> &[usize] {
        self.cells.get(&self.key(p)).map_or(&[], Vec::as_slice)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&[i64; 3], &Vec<usize>)> {
        self.cells.iter()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cameras(&self) -> impl Iterator<Item = usize> + '_ {
        self.covered.keys().copied()
    }

    pub fn covered_voxels(&self, camera: usize) -> usize {
        self.covered.get(&camera).copied().unwrap_or(0)
    }

    pub fn min_covered(&self) -> usize {
        self.covered.values().copied().min().unwrap_or(0)
    }
}

pub fn build_voxel_index(segments: &[(usize, Vec<Vec3>)], voxel_size: f64) -> Result<VoxelCameraIndex> {
    let mut index = VoxelCameraIndex::new(voxel_size)?;
    for (camera, points) in segments {
        index.insert(*camera, points);
    }
    Ok(index)
}

/// Overlap counts keyed by `(i, j)` with `i < j`.
pub type Hpo = BTreeMap<(usize, usize), usize>;

pub fn compute_hpo(index: &VoxelCameraIndex) -> Hpo {
    let mut hpo = Hpo::new();
    for (_, set) in index.cells() {
        for (a, &i) in set.iter().enumerate() {
            for &j in &set[a + 1..] {
                *hpo.entry((i, j)).or_default() += 1;
            }
        }
    }
    hpo
}

/// `(i, j, overlap)` with `i < j`.
pub type OverlapEdge = (usize, usize, usize);

fn sorted_pairs(hpo: &Hpo, alpha_l: f64) -> Vec<OverlapEdge> {
    let mut pairs: Vec<OverlapEdge> = hpo
        .iter()
        .filter(|(_, &c)| c as f64 >= alpha_l)
        .map(|(&(i, j), &c)| (i, j, c))
        .collect();
    pairs.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    pairs
}

/// Hysteresis selection over cameras `0..n_cameras`: every pair above
/// `alpha_h` is linked; if that leaves the graph split, the remaining pairs
/// of at least `alpha_l` are added in order of decreasing overlap until it
/// connects. Returns the edges in insertion order and the connectivity.
pub fn select_edges(hpo: &Hpo, n_cameras: usize, alpha_l: f64, alpha_h: f64) -> (Vec<OverlapEdge>, bool) {
    let (edges, uf) = select_with_forest(hpo, n_cameras, alpha_l, alpha_h);
    (edges, uf.component_count() <= 1)
}

fn select_with_forest(hpo: &Hpo, n_cameras: usize, alpha_l: f64, alpha_h: f64) -> (Vec<OverlapEdge>, UnionFind) {
    let mut uf = UnionFind::new(n_cameras);
    let mut edges = Vec::new();
    let pairs = sorted_pairs(hpo, alpha_l);
    let (strong, weak): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|e| e.2 as f64 > alpha_h);
    for e in strong {
        uf.union(e.0, e.1);
        edges.push(e);
    }
    if uf.component_count() > 1 {
        for e in weak {
            uf.union(e.0, e.1);
            edges.push(e);
            if uf.component_count() == 1 {
                break;
            }
        }
    }
    (edges, uf)
}

/// Members of the largest component, ascending; ties go to the component
/// holding the smallest ID.
pub fn largest_component(uf: &mut UnionFind) -> Vec<usize> {
    let n = uf.len();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for x in 0..n {
        let r = uf.find(x);
        members.entry(r).or_default().push(x);
    }
    let mut best: Vec<usize> = Vec::new();
    for m in members.into_values() {
        if m.len() > best.len() || (m.len() == best.len() && m[0] < best[0]) {
            best = m;
        }
    }
    best
}

/// Hysteresis thresholds; with `relative` they are fractions of the
/// smallest per-camera covered-voxel count, otherwise voxel counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    pub alpha_l: f64,
    pub alpha_h: f64,
    pub relative: bool,
    /// Absolute; `None` means twice the codebook distance step.
    pub voxel_size: Option<f64>,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            alpha_l: 0.05,
            alpha_h: 0.3,
            relative: true,
            voxel_size: None,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_l >= 0.0 && self.alpha_l <= self.alpha_h) {
            return Err(Error::Config("need 0 <= alpha_l <= alpha_h".into()));
        }
        if self.voxel_size.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::Config("graph voxel_size must be positive".into()));
        }
        Ok(())
    }

    /// `(α_l, α_h)` as voxel counts for the given index.
    pub fn resolve(&self, index: &VoxelCameraIndex) -> (f64, f64) {
        if self.relative {
            let m = index.min_covered() as f64;
            (self.alpha_l * m, self.alpha_h * m)
        } else {
            (self.alpha_l, self.alpha_h)
        }
    }
}

/// Edge changes caused by one inserted view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InsertOutcome {
    pub added: Vec<OverlapEdge>,
    pub removed: Vec<OverlapEdge>,
    pub connected: bool,
}

/// Pose graph state that grows one view at a time. Cameras are numbered in
/// insertion order.
#[derive(Clone, Debug)]
pub struct IncrementalGraph {
    params: GraphParams,
    index: VoxelCameraIndex,
    hpo: Hpo,
    ids: Vec<usize>,
    slot: HashMap<usize, usize>,
    thresholds: (f64, f64),
    strong_uf: UnionFind,
    strong: Vec<OverlapEdge>,
    edges: Vec<OverlapEdge>,
    connected: bool,
}

impl IncrementalGraph {
    pub fn new(params: GraphParams, voxel_size: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            index: VoxelCameraIndex::new(voxel_size)?,
            hpo: Hpo::new(),
            ids: Vec::new(),
            slot: HashMap::new(),
            thresholds: (f64::NAN, f64::NAN),
            strong_uf: UnionFind::new(0),
            strong: Vec::new(),
            edges: Vec::new(),
            connected: true,
        })
    }

    /// Adds a view given by its segment in model coordinates. Only overlaps
    /// involving the new camera change; strong links are extended in place
    /// and the weak completion is redone from the sorted candidates.
    pub fn insert_view(&mut self, camera: usize, points: &[Vec3]) -> Result<InsertOutcome> {
        if self.slot.contains_key(&camera) {
            return Err(Error::DuplicateCamera(camera));
        }
        let s = self.ids.len();
        self.ids.push(camera);
        self.slot.insert(camera, s);
        self.strong_uf.push();
        let mut touched: Vec<usize> = self.index.insert(s, points);
        touched.sort_unstable();
        for t in &touched {
            *self.hpo.entry((*t, s)).or_default() += 1;
        }
        touched.dedup();

        let (al, ah) = self.params.resolve(&self.index);
        if (al, ah) != self.thresholds {
            self.thresholds = (al, ah);
            self.strong = sorted_pairs(&self.hpo, al)
                .into_iter()
                .filter(|e| e.2 as f64 > ah)
                .collect();
            self.strong_uf = UnionFind::new(self.ids.len());
            for e in &self.strong {
                self.strong_uf.union(e.0, e.1);
            }
        } else {
            for &t in &touched {
                let c = self.hpo[&(t, s)];
                if c as f64 > ah {
                    self.strong.push((t, s, c));
                    self.strong_uf.union(t, s);
                }
            }
        }

        let mut edges = self.strong.clone();
        edges.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        let mut uf = self.strong_uf.clone();
        if uf.component_count() > 1 {
            for e in sorted_pairs(&self.hpo, al).into_iter().filter(|e| e.2 as f64 <= ah) {
                uf.union(e.0, e.1);
                edges.push(e);
                if uf.component_count() == 1 {
                    break;
                }
            }
        }
        let before: std::collections::BTreeSet<(usize, usize)> = self.edges.iter().map(|e| (e.0, e.1)).collect();
        let after: std::collections::BTreeSet<(usize, usize)> = edges.iter().map(|e| (e.0, e.1)).collect();
        let outcome = InsertOutcome {
            added: edges
                .iter()
                .filter(|e| !before.contains(&(e.0, e.1)))
                .map(|&e| self.external(e))
                .collect(),
            removed: self
                .edges
                .iter()
                .filter(|e| !after.contains(&(e.0, e.1)))
                .map(|&e| self.external(e))
                .collect(),
            connected: uf.component_count() <= 1,
        };
        self.edges = edges;
        self.connected = outcome.connected;
        Ok(outcome)
    }

    fn external(&self, e: OverlapEdge) -> OverlapEdge {
        let (a, b) = (self.ids[e.0], self.ids[e.1]);
        (a.min(b), a.max(b), e.2)
    }

    /// Current edges with camera IDs, in selection order.
    pub fn edges(&self) -> Vec<OverlapEdge> {
        self.edges.iter().map(|&e| self.external(e)).collect()
    }

    pub fn connected(&self) -> bool {
        self.connected
    }

    pub fn index(&self) -> &VoxelCameraIndex {
        &self.index
    }

    /// Overlaps keyed by camera ID.
    pub fn hpo(&self) -> Hpo {
        self.hpo
            .iter()
            .map(|(&(i, j), &c)| {
                let e = self.external((i, j, c));
                ((e.0, e.1), c)
            })
            .collect()
    }
}

/// Fraction of model samples whose voxel is observed by some camera, and the
/// indices of those that are not.
pub fn coverage_feedback(index: &VoxelCameraIndex, model_samples: &[Vec3]) -> (f64, Vec<usize>) {
    if model_samples.is_empty() {
        return (0.0, Vec::new());
    }
    let uncovered: Vec<usize> = model_samples
        .iter()
        .enumerate()
        .filter(|(_, p)| index.cameras_at(p).is_empty())
        .map(|(i, _)| i)
        .collect();
    let frac = 1.0 - uncovered.len() as f64 / model_samples.len() as f64;
    (frac, uncovered)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clutter {
    pub value: f64,
    /// Inputs fell outside their domain and the value was clamped.
    pub clamped: bool,
}

/// `1 - model_area · (1 - occlusion) / scene_area`, clamped to `[0, 1]`.
pub fn clutter_metric(model_area: f64, occlusion: f64, scene_area: f64) -> Result<Clutter> {
    if !(scene_area > 0.0) {
        return Err(Error::NonPositiveSceneArea);
    }
    let raw = 1.0 - model_area * (1.0 - occlusion) / scene_area;
    let bad_input = !(0.0..=1.0).contains(&occlusion) || model_area < 0.0;
    let value = raw.clamp(0.0, 1.0);
    Ok(Clutter {
        value,
        clamped: bad_input || value != raw,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    /// Maps the camera's scene coordinates into the model frame.
    #[serde(with = "pose_rows")]
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    /// Scene point indices explained by the model.
    #[serde(default)]
    pub segment: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub overlap: usize,
    /// `T_i⁻¹ ∘ T_j` at build time.
    #[serde(with = "pose_rows")]
    pub relative: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub coverage: f64,
    pub uncovered_samples: usize,
    /// Whether the selected edges connected every input view; if not, only
    /// the largest component is kept.
    pub connected: bool,
}

impl PoseGraph {
    pub fn node(&self, id: usize) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Symmetric adjacency over node positions.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.nodes.len();
        let pos: HashMap<usize, usize> = self.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
        let mut a = vec![vec![false; n]; n];
        for e in &self.edges {
            let (x, y) = (pos[&e.i], pos[&e.j]);
            a[x][y] = true;
            a[y][x] = true;
        }
        a
    }

    pub fn is_connected(&self) -> bool {
        let a = self.adjacency();
        let n = a.len();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for y in 0..n {
                if a[x][y] && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// A camera entering the graph: its scene→model pose and its segment in
/// scene coordinates.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub id: usize,
    pub pose: Pose,
    pub segment_points: Vec<Vec3>,
    pub segment: Vec<usize>,
    pub scene: Option<String>,
}

/// Batch construction; views outside the largest component are dropped.
pub fn build_pose_graph(
    views: &[ViewInput],
    params: &GraphParams,
    voxel_size: f64,
    model_samples: &[Vec3],
) -> Result<PoseGraph> {
    params.validate()?;
    let mut seen = std::collections::HashSet::new();
    for v in views {
        if !seen.insert(v.id) {
            return Err(Error::DuplicateCamera(v.id));
        }
    }
    let mut index = VoxelCameraIndex::new(voxel_size)?;
    for (k, v) in views.iter().enumerate() {
        let pts: Vec<Vec3> = v.segment_points.iter().map(|p| v.pose.apply(p)).collect();
        index.insert(k, &pts);
    }
    let hpo = compute_hpo(&index);
    let (al, ah) = params.resolve(&index);
    let (selected, mut uf) = select_with_forest(&hpo, views.len(), al, ah);
    let connected = uf.component_count() <= 1;
    let keep = largest_component(&mut uf);
    let kept: std::collections::HashSet<usize> = keep.iter().copied().collect();
    let nodes = keep
        .iter()
        .map(|&k| GraphNode {
            id: views[k].id,
            pose: views[k].pose,
            scene: views[k].scene.clone(),
            segment: views[k].segment.clone(),
        })
        .collect();
    let edges = selected
        .into_iter()
        .filter(|e| kept.contains(&e.0))
        .map(|(a, b, c)| {
            let (i, j) = (views[a].id, views[b].id);
            let (i, j, pi, pj) = if i < j { (i, j, a, b) } else { (j, i, b, a) };
            GraphEdge {
                i,
                j,
                overlap: c,
                relative: views[pi].pose.inverse().compose(&views[pj].pose),
            }
        })
        .collect();
    let (coverage, uncovered) = coverage_feedback(&index, model_samples);
    Ok(PoseGraph {
        nodes,
        edges,
        coverage,
        uncovered_samples: uncovered.len(),
        connected,
    })
}
