//! PLY and OBJ readers, PLY writers, JSON artifacts and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{estimate_normals, OrientedPointCloud, TriMesh, Vec3};

/// Raw contents of a PLY file that matter here.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub faces: Vec<Vec<u32>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parses ASCII and binary little-endian PLY.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let mut pos = 0usize;
    let mut line_start;
    let next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |e| start + e);
        *pos = (end + 1).min(bytes.len());
        Some((
            start,
            String::from_utf8_lossy(&bytes[start..end])
                .trim_end_matches('\r')
                .to_string(),
        ))
    };
    match next_line(&mut pos) {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::malformed(0, "missing 'ply' magic")),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some((start, line)) = next_line(&mut pos) else {
            return Err(Error::malformed(bytes.len() as u64, "header has no end_header"));
        };
        line_start = start;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", f, _] => return Err(Error::malformed(start as u64, format!("unsupported format {f}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::malformed(start as u64, format!("bad element count '{count}'")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (Some(c), Some(i)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(Error::malformed(start as u64, "unknown list property type"));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| Error::malformed(start as u64, "property before any element"))?
                    .props
                    .push(Property::List(name.to_string(), c, i));
            }
            ["property", ty, name] => {
                let t =
                    Scalar::parse(ty).ok_or_else(|| Error::malformed(start as u64, format!("unknown type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::malformed(start as u64, "property before any element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), t));
            }
            _ => {
                return Err(Error::malformed(
                    start as u64,
                    format!("unrecognized header line '{line}'"),
                ))
            }
        }
    }
    let binary = binary.ok_or_else(|| Error::malformed(line_start as u64, "header has no format line"))?;
    let mut reader: Box<dyn ValueReader> = if binary {
        Box::new(BinReader { bytes, pos })
    } else {
        Box::new(AsciiReader {
            bytes,
            pos,
            line: Vec::new(),
            line_pos: 0,
            line_start: pos,
        })
    };
    let mut out = PlyData::default();
    for el in &elements {
        let names: Vec<&str> = el
            .props
            .iter()
            .map(|p| match p {
                Property::Scalar(n, _) | Property::List(n, _, _) => n.as_str(),
            })
            .collect();
        let find = |n: &str| names.iter().position(|&x| x == n);
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let xyz = [find("x"), find("y"), find("z")];
        let nxyz = [find("nx"), find("ny"), find("nz")];
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(Error::malformed(line_start as u64, "vertex element lacks x, y or z"));
        }
        let has_normals = is_vertex && nxyz.iter().all(Option::is_some);
        if has_normals {
            out.normals = Some(Vec::with_capacity(el.count));
        }
        let face_prop = names.iter().position(|&n| n == "vertex_indices" || n == "vertex_index");
        let mut scalars = vec![0.0f64; el.props.len()];
        for _ in 0..el.count {
            reader.start_row()?;
            let mut list: Vec<u32> = Vec::new();
            for (k, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar(_, t) => scalars[k] = reader.value(*t)?,
                    Property::List(_, ct, it) => {
                        let at = reader.offset();
                        let n = reader.value(*ct)?;
                        if !(n >= 0.0) || n.fract() != 0.0 {
                            return Err(Error::malformed(at as u64, "bad list length"));
                        }
                        let keep = is_face && Some(k) == face_prop;
                        for _ in 0..n as usize {
                            let at = reader.offset();
                            let v = reader.value(*it)?;
                            if keep {
                                if !(v >= 0.0) || v.fract() != 0.0 || v > u32::MAX as f64 {
                                    return Err(Error::malformed(at as u64, format!("bad vertex index {v}")));
                                }
                                list.push(v as u32);
                            }
                        }
                    }
                }
            }
            reader.end_row()?;
            if is_vertex {
                let v = |i: Option<usize>| scalars[i.expect("checked")];
                out.vertices.push(Vec3::new(v(xyz[0]), v(xyz[1]), v(xyz[2])));
                if let Some(ns) = out.normals.as_mut() {
                    ns.push(Vec3::new(v(nxyz[0]), v(nxyz[1]), v(nxyz[2])));
                }
            } else if is_face && face_prop.is_some() {
                out.faces.push(list);
            }
        }
    }
    Ok(out)
}

trait ValueReader {
    fn start_row(&mut self) -> Result<()>;
    fn value(&mut self, t: Scalar) -> Result<f64>;
    fn end_row(&mut self) -> Result<()>;
    fn offset(&self) -> usize;
}

struct BinReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueReader for BinReader<'_> {
    fn start_row(&mut self) -> Result<()> {
        Ok(())
    }

    fn value(&mut self, t: Scalar) -> Result<f64> {
        let n = t.size();
        if self.pos + n > self.bytes.len() {
            return Err(Error::malformed(self.pos as u64, "unexpected end of binary data"));
        }
        let v = t.decode(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }

    fn end_row(&mut self) -> Result<()> {
        Ok(())
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

struct AsciiReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: Vec<(usize, String)>,
    line_pos: usize,
    line_start: usize,
}

impl ValueReader for AsciiReader<'_> {
    fn start_row(&mut self) -> Result<()> {
        loop {
            if self.pos >= self.bytes.len() {
                return Err(Error::malformed(self.pos as u64, "unexpected end of ASCII data"));
            }
            let start = self.pos;
            let end = self.bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .map_or(self.bytes.len(), |e| start + e);
            self.pos = (end + 1).min(self.bytes.len());
            let text = String::from_utf8_lossy(&self.bytes[start..end]);
            let mut toks = Vec::new();
            let mut off = 0;
            for t in text.split_whitespace() {
                let at = text[off..].find(t).map_or(off, |i| off + i);
                toks.push((start + at, t.to_string()));
                off = at + t.len();
            }
            if !toks.is_empty() {
                self.line = toks;
                self.line_pos = 0;
                self.line_start = start;
                return Ok(());
            }
        }
    }

    fn value(&mut self, _t: Scalar) -> Result<f64> {
        let Some((at, tok)) = self.line.get(self.line_pos) else {
            return Err(Error::malformed(self.line_start as u64, "too few values on line"));
        };
        self.line_pos += 1;
        tok.parse::<f64>()
            .map_err(|_| Error::malformed(*at as u64, format!("cannot parse '{tok}' as a number")))
    }

    fn end_row(&mut self) -> Result<()> {
        if self.line_pos != self.line.len() {
            return Err(Error::malformed(
                self.line[self.line_pos].0 as u64,
                "extra values on line",
            ));
        }
        Ok(())
    }

    fn offset(&self) -> usize {
        self.line.get(self.line_pos).map_or(self.line_start, |t| t.0)
    }
}

fn triangulate(polys: &[Vec<u32>], n_vertices: usize) -> Result<Vec<[u32; 3]>> {
    let mut out = Vec::with_capacity(polys.len());
    for (f, poly) in polys.iter().enumerate() {
        if poly.len() < 3 {
            return Err(Error::InvalidArgument(format!("face {f} has {} vertices", poly.len())));
        }
        if let Some(&bad) = poly.iter().find(|&&i| i as usize >= n_vertices) {
            return Err(Error::InvalidArgument(format!(
                "face {f} references vertex {bad} of {n_vertices}"
            )));
        }
        for k in 1..poly.len() - 1 {
            out.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    Ok(out)
}

/// Parses the `v` and `f` records of a Wavefront OBJ; polygons are fanned.
pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut polys: Vec<Vec<u32>> = Vec::new();
    let mut relative: Option<bool> = None;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f64> = tok
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::malformed(at, "bad vertex coordinate"))?;
                if c.len() != 3 {
                    return Err(Error::malformed(at, "vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::malformed(at, format!("bad face index '{t}'")))?;
                    if i == 0 {
                        return Err(Error::malformed(at, "OBJ indices start at 1"));
                    }
                    let rel = i < 0;
                    if *relative.get_or_insert(rel) != rel {
                        return Err(Error::malformed(at, "mixed absolute and relative face indices"));
                    }
                    let idx = if rel { vertices.len() as i64 + i } else { i - 1 };
                    if idx < 0 || idx as usize >= vertices.len() {
                        return Err(Error::malformed(at, format!("face index {i} out of range")));
                    }
                    poly.push(idx as u32);
                }
                polys.push(poly);
            }
            _ => {}
        }
    }
    let faces = triangulate(&polys, vertices.len())?;
    TriMesh::new(vertices, faces)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let bytes = read_bytes(path)?;
    if has_extension(path, "obj") {
        return parse_obj(&String::from_utf8_lossy(&bytes));
    }
    let ply = parse_ply(&bytes)?;
    let faces = triangulate(&ply.faces, ply.vertices.len())?;
    TriMesh::new(ply.vertices, faces)
}

/// A cloud read from disk; `viewpoint` is set when normals were estimated.
#[derive(Clone, Debug)]
pub struct LoadedCloud {
    pub cloud: OrientedPointCloud,
    pub viewpoint: Option<Vec3>,
    pub degenerate_normals: usize,
}

/// Neighbourhood size used when a cloud carries no normals.
pub const NORMAL_NEIGHBOURS: usize = 10;

/// Reads a PLY point cloud. Missing normals are estimated and oriented
/// towards the sensor origin.
pub fn load_cloud(path: &Path) -> Result<LoadedCloud> {
    cloud_from_ply(parse_ply(&read_bytes(path)?)?)
}

pub fn cloud_from_ply(ply: PlyData) -> Result<LoadedCloud> {
    if ply.vertices.is_empty() {
        return Err(Error::EmptyCloud);
    }
    match ply.normals {
        Some(normals) => Ok(LoadedCloud {
            cloud: OrientedPointCloud::new(ply.vertices, normals),
            viewpoint: None,
            degenerate_normals: 0,
        }),
        None => {
            let viewpoint = Vec3::zeros();
            let k = NORMAL_NEIGHBOURS.min(ply.vertices.len());
            let est = estimate_normals(&ply.vertices, k, &viewpoint)?;
            Ok(LoadedCloud {
                degenerate_normals: est.degenerate.len(),
                cloud: est.cloud,
                viewpoint: Some(viewpoint),
            })
        }
    }
}

/// Binary little-endian PLY with double-precision positions and normals.
pub fn cloud_to_ply(cloud: &OrientedPointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 * cloud.len() + 256);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property double nx\nproperty double ny\nproperty double nz\nend_header\n",
        cloud.len()
    );
    out.extend_from_slice(header.as_bytes());
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        for v in p.iter().chain(n.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// ASCII PLY mesh.
pub fn mesh_to_ply(mesh: &TriMesh) -> Vec<u8> {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    for v in &mesh.vertices {
        s.push_str(&format!("{:?} {:?} {:?}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        s.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    s.into_bytes()
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_cloud(path: &Path, cloud: &OrientedPointCloud) -> Result<()> {
    write_atomic(path, &cloud_to_ply(cloud))
}

pub fn save_mesh(path: &Path, mesh: &TriMesh) -> Result<()> {
    write_atomic(path, &mesh_to_ply(mesh))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
