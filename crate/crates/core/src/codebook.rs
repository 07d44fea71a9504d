//! Offline model description: every ordered pair of sampled model points is
//! filed under its quantized point pair feature, keeping only the reference
//! index and the local rotation angle.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geometry::{sample_uniform, OrientedPointCloud, TriMesh, Vec3};
use crate::ppf::{alpha_in_frame, compute_ppf, lcf, QuantizedPpf, Quantizer};

const MAGIC: &[u8; 4] = b"PPFC";
const VERSION: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodebookEntry {
    pub model_ref: u32,
    pub alpha: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    table: HashMap<QuantizedPpf, Vec<CodebookEntry>>,
    pub sampled_model: OrientedPointCloud,
    /// Finer samples of the same surface for the final point-to-plane fits.
    pub dense_model: OrientedPointCloud,
    pub quantizer: Quantizer,
    pub model_diameter: f64,
}

impl Codebook {
    /// Builds the table from already-sampled oriented model points.
    pub fn from_samples(samples: OrientedPointCloud, quantizer: Quantizer, model_diameter: f64) -> Result<Self> {
        if samples.len() < 10 {
            return Err(Error::TooFewSamples(samples.len()));
        }
        let mut table: HashMap<QuantizedPpf, Vec<CodebookEntry>> = HashMap::new();
        for (i, (pi, ni)) in samples.points.iter().zip(&samples.normals).enumerate() {
            let frame = lcf(pi, ni);
            for (j, (pj, nj)) in samples.points.iter().zip(&samples.normals).enumerate() {
                if i == j {
                    continue;
                }
                let f = compute_ppf(pi, ni, pj, nj)?;
                // a paired point on the normal axis leaves α free
                let alpha = alpha_in_frame(&frame, pj).unwrap_or(0.0);
                table.entry(quantizer.quantize(&f)).or_default().push(CodebookEntry {
                    model_ref: i as u32,
                    alpha: alpha as f32,
                });
            }
        }
        Ok(Self {
            table,
            dense_model: samples.clone(),
            sampled_model: samples,
            quantizer,
            model_diameter,
        })
    }

    pub fn with_dense_model(mut self, dense: OrientedPointCloud) -> Self {
        self.dense_model = dense;
        self
    }

    pub fn get(&self, key: &QuantizedPpf) -> &[CodebookEntry] {
        self.table.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn n_buckets(&self) -> usize {
        self.table.len()
    }

    pub fn total_entries(&self) -> usize {
        self.table.values().map(Vec::len).sum()
    }

    pub fn dist_step(&self) -> f64 {
        self.quantizer.dist_step
    }

    pub fn n_angle_bins(&self) -> u32 {
        self.quantizer.n_angle_bins()
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&QuantizedPpf, &Vec<CodebookEntry>)> {
        self.table.iter()
    }

    /// Little-endian binary form; buckets in ascending key order so equal
    /// codebooks serialize to equal bytes.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.quantizer.dist_step.to_le_bytes())?;
        w.write_all(&self.quantizer.angle_step.to_le_bytes())?;
        w.write_all(&self.n_angle_bins().to_le_bytes())?;
        w.write_all(&self.model_diameter.to_le_bytes())?;
        for cloud in [&self.sampled_model, &self.dense_model] {
            w.write_all(&(cloud.len() as u64).to_le_bytes())?;
            for (p, n) in cloud.points.iter().zip(&cloud.normals) {
                for v in p.iter().chain(n.iter()) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        let mut keys: Vec<&QuantizedPpf> = self.table.keys().collect();
        keys.sort_unstable();
        w.write_all(&(keys.len() as u64).to_le_bytes())?;
        for key in keys {
            for k in key.0 {
                w.write_all(&k.to_le_bytes())?;
            }
            let entries = &self.table[key];
            w.write_all(&(entries.len() as u32).to_le_bytes())?;
            for e in entries {
                w.write_all(&e.model_ref.to_le_bytes())?;
                w.write_all(&e.alpha.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader { inner: r, offset: 0 };
        let mut magic = [0u8; 4];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::malformed(0, "bad magic, expected PPFC"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::malformed(4, format!("unsupported version {version}")));
        }
        let dist_step = r.f64()?;
        let angle_step = r.f64()?;
        let at = r.offset;
        let quantizer = Quantizer::new(dist_step, angle_step).map_err(|e| Error::malformed(at, e.to_string()))?;
        let n_angle_bins = r.u32()?;
        if n_angle_bins != quantizer.n_angle_bins() {
            return Err(Error::malformed(
                r.offset - 4,
                "angle bin count disagrees with angle step",
            ));
        }
        let model_diameter = r.f64()?;
        let quantizer = quantizer.with_max_dist(model_diameter);
        let samples = r.cloud()?;
        let n_points = samples.len();
        let dense_model = r.cloud()?;
        let n_buckets = r.u64()? as usize;
        let mut table = HashMap::with_capacity(n_buckets);
        for _ in 0..n_buckets {
            let key = QuantizedPpf([r.u32()?, r.u32()?, r.u32()?, r.u32()?]);
            let count = r.u32()? as usize;
            let mut entries = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let model_ref = r.u32()?;
                if model_ref as usize >= n_points {
                    return Err(Error::malformed(r.offset - 4, "entry references a missing sample"));
                }
                entries.push(CodebookEntry {
                    model_ref,
                    alpha: r.f32()?,
                });
            }
            table.insert(key, entries);
        }
        Ok(Self {
            table,
            sampled_model: samples,
            dense_model,
            quantizer,
            model_diameter,
        })
    }
}

struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| Error::malformed(self.offset, "unexpected end of data"))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn cloud(&mut self) -> Result<OrientedPointCloud> {
        let n = self.u64()? as usize;
        let mut cloud = OrientedPointCloud::default();
        for _ in 0..n {
            let p = Vec3::new(self.f64()?, self.f64()?, self.f64()?);
            let n = Vec3::new(self.f64()?, self.f64()?, self.f64()?);
            cloud.push(p, n);
        }
        Ok(cloud)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

/// Oriented model samples at spacing `min_dist`: a dense barycentric lattice
/// over the faces, thinned greedily.
pub fn sample_model(mesh: &TriMesh, min_dist: f64) -> Result<OrientedPointCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyModel);
    }
    let dense = mesh.sample_surface(min_dist / 4.0);
    Ok(sample_uniform(&dense, min_dist))
}

/// The dense samples are this many times finer than the voting samples.
pub const DENSE_FACTOR: f64 = 3.0;

/// Samples `model` at `tau · diam(model)` and builds the codebook.
pub fn train(model: &TriMesh, tau: f64, angle_step: f64) -> Result<Codebook> {
    if !(tau > 0.0 && tau < 0.2) {
        return Err(Error::InvalidArgument(format!("tau = {tau}, need 0 < tau < 0.2")));
    }
    if model.faces.is_empty() {
        return Err(Error::EmptyModel);
    }
    let diameter = model.diameter()?;
    let dist_step = tau * diameter;
    let samples = sample_model(model, dist_step)?;
    let dense = sample_model(model, dist_step / DENSE_FACTOR)?;
    Ok(Codebook::from_samples(
        samples,
        Quantizer::new(dist_step, angle_step)?.with_max_dist(diameter),
        diameter,
    )?
    .with_dense_model(dense))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::{lumpy_ellipsoid, unit_cube};
    use std::f64::consts::PI;

    #[test]
    fn every_ordered_pair_is_stored_once() {
        let cb = train(&unit_cube(), 0.15, PI / 15.0).unwrap();
        let n = cb.sampled_model.len();
        assert!(n >= 10);
        assert_eq!(cb.total_entries(), n * (n - 1));
        assert!(cb.buckets().all(|(_, e)| !e.is_empty()));
    }

    #[test]
    fn cube_distance_bins_are_bounded() {
        let cb = train(&unit_cube(), 0.05, PI / 15.0).unwrap();
        // ceil(√3 / (0.05 · √3)) = 20
        let bound = (3f64.sqrt() / (0.05 * 3f64.sqrt())).ceil() as u32;
        assert_eq!(bound, 20);
        assert!(cb.buckets().all(|(k, _)| k.0[0] < bound));
        assert!(cb.buckets().all(|(k, _)| k.0[1..].iter().all(|&a| a < 15)));
    }

    #[test]
    fn own_pair_is_found_in_its_bucket() {
        let cb = train(&lumpy_ellipsoid(2, 0.3), 0.1, PI / 15.0).unwrap();
        let s = &cb.sampled_model;
        for (i, j) in [(0usize, 1usize), (5, 17), (s.len() - 1, 3)] {
            let f = compute_ppf(&s.points[i], &s.normals[i], &s.points[j], &s.normals[j]).unwrap();
            let alpha = alpha_in_frame(&lcf(&s.points[i], &s.normals[i]), &s.points[j]).unwrap() as f32;
            let bucket = cb.get(&cb.quantizer.quantize(&f));
            assert!(bucket.contains(&CodebookEntry {
                model_ref: i as u32,
                alpha
            }));
        }
    }

    #[test]
    fn training_is_byte_deterministic() {
        let m = lumpy_ellipsoid(2, 0.3);
        let a = train(&m, 0.08, PI / 15.0).unwrap().to_bytes();
        let b = train(&m, 0.08, PI / 15.0).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let cb = train(&unit_cube(), 0.15, PI / 15.0).unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(&bytes[..4], b"PPFC");
        let back = Codebook::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, cb);
        let cut = bytes.len() - 3;
        match Codebook::read_from(&bytes[..cut]) {
            Err(Error::MalformedFile { offset, .. }) => assert!(offset <= cut as u64 && offset > 0),
            other => panic!("expected MalformedFile, got {other:?}"),
        }
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(train(&unit_cube(), 0.3, 0.2), Err(Error::InvalidArgument(_))));
        assert!(matches!(train(&TriMesh::default(), 0.05, 0.2), Err(Error::EmptyModel)));
        assert!(matches!(
            train(&unit_cube(), 0.19, PI / 15.0),
            Ok(_) | Err(Error::TooFewSamples(_))
        ));
    }
}
