//! Local implicit voting: every scene reference point accumulates
//! probabilistic votes over (model point, rotation angle) from soft-quantized
//! codebook lookups; per-reference maxima become pose hypotheses which are
//! clustered into a consensus.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::geometry::{pose_rows, sample_uniform, OrientedPointCloud, Pose};
use crate::par;
use crate::ppf::{
    alpha_in_frame, compute_ppf, lcf, pose_from_correspondence, wrap_angle, Ppf, QuantizedPpf, Quantizer,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Number of codebook bins activated per scene feature.
    pub soft_bins: usize,
    /// A neighbouring bin is activated only when the feature lies within
    /// this fraction of a bin from the shared boundary; above 0.5 every
    /// nearest-boundary neighbour qualifies.
    pub soft_margin: f64,
    pub n_alpha_bins: usize,
    /// Fraction of sampled scene points used as voting references.
    pub ref_fraction: f64,
    /// Radians.
    pub cluster_rot_thresh: f64,
    /// Absolute length; `None` means a tenth of the model diameter.
    pub cluster_trans_thresh: Option<f64>,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            soft_bins: 4,
            soft_margin: SoftBins::DEFAULT_MARGIN,
            n_alpha_bins: 30,
            ref_fraction: 0.2,
            cluster_rot_thresh: 12f64.to_radians(),
            cluster_trans_thresh: None,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if self.soft_bins < 1 {
            return Err(Error::Config("soft_bins must be at least 1".into()));
        }
        if !(self.soft_margin > 0.0) {
            return Err(Error::Config("soft_margin must be positive".into()));
        }
        if self.n_alpha_bins < 8 {
            return Err(Error::Config("n_alpha_bins must be at least 8".into()));
        }
        if !(self.ref_fraction > 0.0 && self.ref_fraction <= 1.0) {
            return Err(Error::Config("ref_fraction must lie in (0, 1]".into()));
        }
        if !(self.cluster_rot_thresh > 0.0) || self.cluster_trans_thresh.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("cluster thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn soft(&self) -> SoftBins {
        SoftBins {
            k: self.soft_bins,
            margin: self.soft_margin,
        }
    }

    pub fn trans_thresh(&self, model_diameter: f64) -> f64 {
        self.cluster_trans_thresh.unwrap_or(0.1 * model_diameter)
    }
}

/// Soft quantization settings: at most `k` keys per feature, neighbours
/// only across boundaries closer than `margin` bins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftBins {
    pub k: usize,
    pub margin: f64,
}

impl SoftBins {
    pub const DEFAULT_MARGIN: f64 = 0.1;

    pub fn new(k: usize) -> Self {
        Self {
            k,
            margin: Self::DEFAULT_MARGIN,
        }
    }

    /// Every nearest-boundary neighbour, however far the boundary.
    pub fn unlimited(k: usize) -> Self {
        Self { k, margin: 1.0 }
    }

    pub fn hard() -> Self {
        Self::new(1)
    }
}

/// The base bin plus up to `k - 1` single-axis neighbours whose boundary
/// lies within the margin, closest first, each weighted `1/n` for the `n`
/// keys returned. Neighbours outside the feature domain are skipped.
pub fn soft_quantize(f: &Ppf, quantizer: &Quantizer, soft: SoftBins) -> Vec<(QuantizedPpf, f64)> {
    let (keys, n) = soft_keys(f, quantizer, soft);
    let w = 1.0 / n as f64;
    keys[..n].iter().map(|&q| (q, w)).collect()
}

/// Allocation-free core of [`soft_quantize`]: at most five keys.
fn soft_keys(f: &Ppf, quantizer: &Quantizer, soft: SoftBins) -> ([QuantizedPpf; 5], usize) {
    let base = quantizer.quantize(f);
    let mut keys = [base; 5];
    let mut n = 1;
    if soft.k > 1 {
        let top = quantizer.n_angle_bins() as i64 - 1;
        let dist_top = quantizer.n_dist_bins().map_or(i64::MAX, |n| n as i64 - 1);
        let cont = quantizer.continuous(f);
        let mut axes = [(0.0f64, 0usize, 0i64); 4];
        let mut m = 0;
        for a in 0..4 {
            let frac = cont[a] - base.0[a] as f64;
            let (proximity, dir) = if frac < 0.5 { (frac, -1) } else { (1.0 - frac, 1) };
            let nb = base.0[a] as i64 + dir;
            if proximity < soft.margin && nb >= 0 && nb <= if a == 0 { dist_top } else { top } {
                axes[m] = (proximity, a, nb);
                m += 1;
            }
        }
        let axes = &mut axes[..m];
        axes.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for &(_, a, nb) in axes.iter().take(soft.k - 1) {
            keys[n].0[a] = nb as u32;
            n += 1;
        }
    }
    (keys, n)
}

/// Dense accumulator over (model sample, α bin). Bin `b` is centred on
/// `b · 2π/n` (wrapped into `(-π, π]`), so α = 0 sits mid-bin.
#[derive(Clone, Debug, PartialEq)]
pub struct VoteSpace {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl VoteSpace {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
    }

    pub fn total_mass(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn add(&mut self, row: usize, col: usize, w: f64) {
        self.data[row * self.cols + col] += w;
    }

    pub fn alpha_bin(&self, alpha: f64) -> usize {
        alpha_bin(alpha, self.cols)
    }

    pub fn bin_center(&self, col: usize) -> f64 {
        wrap_angle(col as f64 * 2.0 * PI / self.cols as f64)
    }
}

fn alpha_bin(alpha: f64, n: usize) -> usize {
    let step = 2.0 * PI / n as f64;
    ((alpha / step).round() as i64).rem_euclid(n as i64) as usize
}

/// Casts the votes of reference `r` into `space` (which is cleared first).
pub fn vote_reference_into(
    scene: &OrientedPointCloud,
    r: usize,
    codebook: &Codebook,
    soft: SoftBins,
    space: &mut VoteSpace,
) {
    space.clear();
    let q = &codebook.quantizer;
    let max_dist = codebook.model_diameter + 2.0 * q.dist_step;
    let max_d2 = max_dist * max_dist;
    let cols = space.cols as i64;
    let inv_step = space.cols as f64 / (2.0 * PI);
    let (sr, nr) = (&scene.points[r], &scene.normals[r]);
    let frame = lcf(sr, nr);
    for (i, (si, ni)) in scene.points.iter().zip(&scene.normals).enumerate() {
        if i == r || (si - sr).norm_squared() > max_d2 {
            continue;
        }
        let Ok(f) = compute_ppf(sr, nr, si, ni) else {
            continue;
        };
        let Ok(alpha_s) = alpha_in_frame(&frame, si) else {
            continue;
        };
        let shift = alpha_s * inv_step;
        let (keys, n) = soft_keys(&f, q, soft);
        let wk = 1.0 / n as f64;
        for key in &keys[..n] {
            let bucket = codebook.get(key);
            if bucket.is_empty() {
                continue;
            }
            let w = wk / bucket.len() as f64;
            for e in bucket {
                // both angles lie in (-π, π], so the rounded bin is in [-n, n]
                let mut col = (e.alpha as f64 * inv_step - shift).round() as i64;
                if col < 0 {
                    col += cols;
                }
                if col >= cols {
                    col -= cols;
                }
                space.data[e.model_ref as usize * space.cols + col as usize] += w;
            }
        }
    }
}

pub fn vote_reference(
    scene: &OrientedPointCloud,
    r: usize,
    codebook: &Codebook,
    soft: SoftBins,
    n_alpha_bins: usize,
) -> VoteSpace {
    let mut space = VoteSpace::new(codebook.sampled_model.len(), n_alpha_bins);
    vote_reference_into(scene, r, codebook, soft, &mut space);
    space
}

/// Peak of the accumulator as `(row, α bin centre, mass)`; ties go to the
/// lowest `(row, col)`.
pub fn extract_local_max(space: &VoteSpace) -> Result<(usize, f64, f64)> {
    let mut best = (0usize, 0.0f64);
    for (i, &v) in space.data.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    if best.1 <= 0.0 {
        return Err(Error::EmptySpace);
    }
    let (row, col) = (best.0 / space.cols, best.0 % space.cols);
    Ok((row, space.bin_center(col), best.1))
}

/// Pose maps model coordinates into scene coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseHypothesis {
    pub pose: Pose,
    pub vote_mass: f64,
    pub source_ref_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseCluster {
    #[serde(with = "pose_rows")]
    pub pose: Pose,
    pub total_mass: f64,
    pub member_count: usize,
}

#[derive(Clone, Debug)]
struct Accum {
    trans_sum: crate::Vec3,
    quat_sum: nalgebra::Vector4<f64>,
    anchor: nalgebra::Vector4<f64>,
    mass: f64,
    count: usize,
    mean: Pose,
}

impl Accum {
    fn new(p: &Pose, mass: f64, count: usize) -> Self {
        let q = p.quaternion().into_inner().coords;
        Self {
            trans_sum: p.translation * mass,
            quat_sum: q * mass,
            anchor: q,
            mass,
            count,
            mean: *p,
        }
    }

    fn absorb(&mut self, p: &Pose, mass: f64, count: usize) {
        let mut q = p.quaternion().into_inner().coords;
        if q.dot(&self.anchor) < 0.0 {
            q = -q;
        }
        self.trans_sum += p.translation * mass;
        self.quat_sum += q * mass;
        self.mass += mass;
        self.count += count;
        let qm = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(self.quat_sum));
        self.mean = Pose::from_quaternion(&qm, self.trans_sum / self.mass);
    }
}

/// Greedy mass-ordered clustering followed by merging of clusters whose
/// means still fall within the thresholds of each other.
pub fn cluster_poses(hyps: &[PoseHypothesis], rot_thresh: f64, trans_thresh: f64) -> Vec<PoseCluster> {
    let mut order: Vec<usize> = (0..hyps.len()).collect();
    order.sort_by(|&a, &b| {
        hyps[b]
            .vote_mass
            .total_cmp(&hyps[a].vote_mass)
            .then(hyps[a].source_ref_index.cmp(&hyps[b].source_ref_index))
    });
    let near = |a: &Pose, b: &Pose| a.rotation_distance(b) < rot_thresh && a.translation_distance(b) < trans_thresh;
    let mut acc: Vec<Accum> = Vec::new();
    for i in order {
        let h = &hyps[i];
        match acc.iter_mut().find(|c| near(&c.mean, &h.pose)) {
            Some(c) => c.absorb(&h.pose, h.vote_mass, 1),
            None => acc.push(Accum::new(&h.pose, h.vote_mass, 1)),
        }
    }
    'merge: loop {
        for a in 0..acc.len() {
            for b in a + 1..acc.len() {
                if near(&acc[a].mean, &acc[b].mean) {
                    let other = acc.remove(b);
                    acc[a].absorb(&other.mean, other.mass, other.count);
                    continue 'merge;
                }
            }
        }
        break;
    }
    let mut out: Vec<PoseCluster> = acc
        .into_iter()
        .map(|c| PoseCluster {
            pose: c.mean,
            total_mass: c.mass,
            member_count: c.count,
        })
        .collect();
    out.sort_by(|a, b| b.total_mass.total_cmp(&a.total_mass));
    out
}

/// Per-reference hypotheses on an already-sampled scene.
pub fn hypotheses(scene: &OrientedPointCloud, codebook: &Codebook, params: &DetectorParams) -> Vec<PoseHypothesis> {
    let stride = (1.0 / params.ref_fraction).ceil() as usize;
    let refs: Vec<usize> = (0..scene.len()).step_by(stride.max(1)).collect();
    let model = &codebook.sampled_model;
    let found = par::map_init(
        &refs,
        || VoteSpace::new(model.len(), params.n_alpha_bins),
        |space, &r| {
            vote_reference_into(scene, r, codebook, params.soft(), space);
            let (m, alpha, mass) = extract_local_max(space).ok()?;
            Some(PoseHypothesis {
                pose: pose_from_correspondence(
                    &scene.points[r],
                    &scene.normals[r],
                    &model.points[m],
                    &model.normals[m],
                    alpha,
                ),
                vote_mass: mass,
                source_ref_index: r,
            })
        },
    );
    found.into_iter().flatten().collect()
}

/// Samples the scene at the codebook's distance step, votes and clusters.
pub fn detect(scene: &OrientedPointCloud, codebook: &Codebook, params: &DetectorParams) -> Result<Vec<PoseCluster>> {
    params.validate()?;
    if scene.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sampled = sample_uniform(scene, codebook.dist_step());
    let hyps = hypotheses(&sampled, codebook, params);
    if hyps.is_empty() {
        return Err(Error::NoHypotheses);
    }
    Ok(cluster_poses(
        &hyps,
        params.cluster_rot_thresh,
        params.trans_thresh(codebook.model_diameter),
    ))
}
