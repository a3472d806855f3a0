//! Object models: PLY loading/writing, centroid and diameter.
//!
//! Supported PLY subset: format `ascii 1.0` and `binary_little_endian 1.0`,
//! any scalar property type, list properties. A `vertex` element with
//! `x`, `y`, `z` is required; a `face` element with a `vertex_indices` (or
//! `vertex_index`) list is optional. Polygons with more than three corners are
//! fan-triangulated. Every other element and property is parsed and dropped.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

/// Clouds above this size use the pruned diameter search.
const EXACT_DIAMETER_LIMIT: usize = 20_000;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("PLY parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("point cloud must not be empty")]
    Empty,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("face {face} references vertex {vertex} but there are only {count} vertices")]
    BadFaceIndex { face: usize, vertex: usize, count: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

fn parse_err(offset: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        offset,
        message: message.into(),
    }
}

/// Non-empty set of finite points, in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, MeshError> {
        if points.is_empty() {
            return Err(MeshError::Empty);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(self)
    }

    pub fn diameter(&self) -> Result<f64, MeshError> {
        diameter(self)
    }

    /// Every `ceil(n / max_points)`-th point, so at most `max_points` remain.
    pub fn subsample_stride(&self, max_points: usize) -> PointCloud {
        if self.len() <= max_points || max_points == 0 {
            return self.clone();
        }
        let stride = self.len().div_ceil(max_points);
        PointCloud {
            points: self.points.iter().step_by(stride).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: PointCloud,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: PointCloud, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let count = vertices.len();
        for (face, tri) in faces.iter().enumerate() {
            if let Some(&vertex) = tri.iter().find(|&&v| v >= count) {
                return Err(MeshError::BadFaceIndex { face, vertex, count });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn from_cloud(vertices: PointCloud) -> Self {
        Self {
            vertices,
            faces: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &PointCloud {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn has_faces(&self) -> bool {
        !self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        let p = self.vertices.points();
        [p[a], p[b], p[c]]
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }
}

/// Arithmetic mean of the points.
pub fn centroid(pc: &PointCloud) -> Vec3 {
    let sum = pc.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / pc.len() as f64
}

/// Maximum pairwise Euclidean distance.
///
/// Exact for every size: clouds up to 20 000 points are searched
/// exhaustively; larger clouds first discard points whose distance bound
/// `|p - c| + R` (c the box center, R the max radius around it) cannot beat
/// a lower bound from a double farthest-point sweep, then search the rest
/// exhaustively.
pub fn diameter(pc: &PointCloud) -> Result<f64, MeshError> {
    if pc.len() < 2 {
        return Err(MeshError::DegenerateInput(
            "diameter needs at least two points".into(),
        ));
    }
    if pc.len() <= EXACT_DIAMETER_LIMIT {
        return Ok(max_pairwise_distance(pc.points()).sqrt());
    }
    let pts = pc.points();
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let center = (lo + hi) * 0.5;
    let radius = pts.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);

    let farthest_from = |q: &Vec3| {
        pts.iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    };
    let (a, _) = farthest_from(&pts[0]);
    let (_, lower_sq) = farthest_from(&pts[a]);
    // Widen the margin a little so rounding in the bound never drops a candidate.
    let lower = lower_sq.sqrt() * (1.0 - 1e-12);

    let candidates: Vec<Vec3> = pts
        .iter()
        .filter(|p| (*p - center).norm() + radius >= lower)
        .copied()
        .collect();
    Ok(max_pairwise_distance(&candidates).max(lower_sq).sqrt())
}

fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            points[i + 1..]
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Keypoint set exchange format: `{"object_id": ..., "points": [[x, y, z], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFile {
    pub object_id: String,
    pub points: Vec<[f64; 3]>,
}

impl KeypointFile {
    pub fn new(object_id: impl Into<String>, points: &[Vec3]) -> Self {
        Self {
            object_id: object_id.into(),
            points: points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn vectors(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| Vec3::from(*p)).collect()
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<TriangleMesh, MeshError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ply(&bytes)
}

/// Writes an ASCII PLY with `double` coordinates. Rust's shortest round-trip
/// float formatting makes `parse_ply(write)` reproduce coordinates bit-exactly.
pub fn write_ply_to<W: Write>(mesh: &TriangleMesh, mut out: W) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertices.len())?;
    writeln!(out, "property double x")?;
    writeln!(out, "property double y")?;
    writeln!(out, "property double z")?;
    if mesh.has_faces() {
        writeln!(out, "element face {}", mesh.faces.len())?;
        writeln!(out, "property list uchar int vertex_indices")?;
    }
    writeln!(out, "end_header")?;
    for p in mesh.vertices.points() {
        writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
    }
    for [a, b, c] in &mesh.faces {
        writeln!(out, "3 {a} {b} {c}")?;
    }
    Ok(())
}

pub fn write_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ply_to(mesh, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, MeshError> {
    let mut offset = 0;
    let next_line = |offset: &mut usize| -> Result<(usize, String), MeshError> {
        let start = *offset;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(start, "header ended before end_header"))?;
        *offset = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| parse_err(start, "header line is not valid UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').trim().to_string()))
    };

    let (start, magic) = next_line(&mut offset)?;
    if magic != "ply" {
        return Err(parse_err(start, "missing 'ply' magic line"));
    }

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (start, line) = next_line(&mut offset)?;
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        match keyword {
            "format" => {
                let kind = tokens.next().unwrap_or("");
                let version = tokens.next().unwrap_or("");
                if version != "1.0" {
                    return Err(parse_err(start, format!("unsupported PLY version '{version}'")));
                }
                format = Some(match kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => {
                        return Err(parse_err(start, format!("unsupported format '{other}'")))
                    }
                });
            }
            "comment" | "obj_info" => {}
            "element" => {
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(start, "element without a name"))?;
                let count = tokens
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(start, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(start, "property before any element"))?;
                let first = tokens.next().unwrap_or("");
                let kind = if first == "list" {
                    let count = tokens.next().and_then(Scalar::parse);
                    let item = tokens.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if count.is_integer() => {
                            PropertyKind::List { count, item }
                        }
                        _ => return Err(parse_err(start, "malformed list property")),
                    }
                } else {
                    PropertyKind::Scalar(
                        Scalar::parse(first)
                            .ok_or_else(|| parse_err(start, format!("unknown property type '{first}'")))?,
                    )
                };
                let name = tokens
                    .next()
                    .ok_or_else(|| parse_err(start, "property without a name"))?;
                element.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            "end_header" => break,
            other => return Err(parse_err(start, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(0, "header has no format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

/// Sequential reader over the body that yields numbers regardless of encoding.
trait BodyReader {
    fn read(&mut self, ty: Scalar) -> Result<f64, MeshError>;
    fn offset(&self) -> usize;
}

struct AsciiReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BodyReader for AsciiReader<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64, MeshError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, "unexpected end of data"));
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| parse_err(start, "token is not valid UTF-8"))?;
        let value = if ty.is_integer() {
            token.parse::<i64>().map(|v| v as f64).ok()
        } else {
            token.parse::<f64>().ok()
        };
        value.ok_or_else(|| parse_err(start, format!("cannot parse '{token}' as {ty:?}")))
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BodyReader for BinaryReader<'_> {
    fn read(&mut self, ty: Scalar) -> Result<f64, MeshError> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(parse_err(self.pos, "unexpected end of data"));
        }
        let b = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
        })
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

/// Parses an in-memory PLY file.
pub fn parse_ply(bytes: &[u8]) -> Result<TriangleMesh, MeshError> {
    let header = parse_header(bytes)?;
    let body = header.body_offset;
    match header.format {
        Format::Ascii => read_body(&header, &mut AsciiReader { bytes, pos: body }),
        Format::BinaryLittleEndian => read_body(&header, &mut BinaryReader { bytes, pos: body }),
    }
}

fn read_body(header: &Header, reader: &mut dyn BodyReader) -> Result<TriangleMesh, MeshError> {
    let mut vertices: Option<Vec<Vec3>> = None;
    let mut faces = Vec::new();

    for element in &header.elements {
        match element.name.as_str() {
            "vertex" => {
                let slot = |axis: &str| element.properties.iter().position(|p| p.name == axis);
                let (Some(ix), Some(iy), Some(iz)) = (slot("x"), slot("y"), slot("z")) else {
                    return Err(parse_err(reader.offset(), "vertex element lacks x/y/z"));
                };
                let mut points = Vec::with_capacity(element.count);
                let mut values = vec![0.0; element.properties.len()];
                for _ in 0..element.count {
                    for (slot, prop) in values.iter_mut().zip(&element.properties) {
                        *slot = read_property(reader, &prop.kind)?.unwrap_or(f64::NAN);
                    }
                    points.push(Vec3::new(values[ix], values[iy], values[iz]));
                }
                vertices = Some(points);
            }
            "face" => {
                let list = element.properties.iter().position(|p| {
                    matches!(p.kind, PropertyKind::List { .. })
                        && (p.name == "vertex_indices" || p.name == "vertex_index")
                });
                for _ in 0..element.count {
                    for (i, prop) in element.properties.iter().enumerate() {
                        if Some(i) == list {
                            let PropertyKind::List { count, item } = prop.kind else {
                                unreachable!()
                            };
                            let at = reader.offset();
                            let n = reader.read(count)?;
                            let mut poly = Vec::with_capacity(n as usize);
                            for _ in 0..n as usize {
                                let v = reader.read(item)?;
                                if v < 0.0 {
                                    return Err(parse_err(at, "negative vertex index"));
                                }
                                poly.push(v as usize);
                            }
                            for k in 1..poly.len().saturating_sub(1) {
                                faces.push([poly[0], poly[k], poly[k + 1]]);
                            }
                        } else {
                            read_property(reader, &prop.kind)?;
                        }
                    }
                }
            }
            _ => {
                for _ in 0..element.count {
                    for prop in &element.properties {
                        read_property(reader, &prop.kind)?;
                    }
                }
            }
        }
    }

    let vertices = vertices.ok_or_else(|| parse_err(header.body_offset, "no vertex element"))?;
    let cloud = PointCloud::new(vertices).map_err(|e| parse_err(header.body_offset, e.to_string()))?;
    TriangleMesh::new(cloud, faces)
}

/// Reads one property; scalar values are returned, lists are consumed.
fn read_property(reader: &mut dyn BodyReader, kind: &PropertyKind) -> Result<Option<f64>, MeshError> {
    match *kind {
        PropertyKind::Scalar(ty) => reader.read(ty).map(Some),
        PropertyKind::List { count, item } => {
            let n = reader.read(count)?;
            if n < 0.0 {
                return Err(parse_err(reader.offset(), "negative list length"));
            }
            for _ in 0..n as usize {
                reader.read(item)?;
            }
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_rotation, Pose};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn unit_cube() -> Vec<Vec3> {
        (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect()
    }

    const CUBE_ASCII: &str = "ply\nformat ascii 1.0\ncomment unit cube\nelement vertex 8\n\
property float x\nproperty float y\nproperty float z\nend_header\n\
0 0 0\n1 0 0\n0 1 0\n1 1 0\n0 0 1\n1 0 1\n0 1 1\n1 1 1\n";

    fn cube_binary() -> Vec<u8> {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 8\n\
property float x\nproperty float y\nproperty float z\nend_header\n"
            .to_vec();
        for p in unit_cube() {
            for c in p.iter() {
                bytes.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        bytes
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PointCloud {
        let pts = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn ascii_cube_loads() {
        let mesh = parse_ply(CUBE_ASCII.as_bytes()).unwrap();
        assert_eq!(mesh.vertices().points(), unit_cube().as_slice());
        assert!(!mesh.has_faces());
    }

    #[test]
    fn binary_cube_matches_ascii() {
        let a = parse_ply(CUBE_ASCII.as_bytes()).unwrap();
        let b = parse_ply(&cube_binary()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_ascii_is_an_error() {
        let text = CUBE_ASCII.replace("element vertex 8", "element vertex 10");
        let err = parse_ply(text.as_bytes()).unwrap_err();
        match err {
            MeshError::Parse { offset, .. } => assert_eq!(offset, text.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let mut bytes = cube_binary();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_ply(&bytes), Err(MeshError::Parse { .. })));
    }

    #[test]
    fn bad_headers() {
        let big_endian = CUBE_ASCII.replace("ascii", "binary_big_endian");
        let err = parse_ply(big_endian.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("unsupported format"), "{err}");
        assert!(parse_ply(b"plx\nformat ascii 1.0\nend_header\n").is_err());
        assert!(parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\n").is_err());
        let no_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(parse_ply(no_z.as_bytes()).is_err());
        let bad_type = CUBE_ASCII.replace("property float z", "property quad z");
        assert!(parse_ply(bad_type.as_bytes()).is_err());
    }

    #[test]
    fn faces_and_extra_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty uchar red\n\
property float y\nproperty float z\nproperty list uchar float texcoord\n\
element face 1\nproperty uchar flags\nproperty list uchar int vertex_indices\n\
element material 1\nproperty int id\nend_header\n\
0 255 0 0 2 0.5 0.5\n1 0 0 0 0\n1 1 1 0 0\n0 3 1 0 1 0.1\n\
7 4 0 1 2 3\n42\n";
        let mesh = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(mesh.vertices().len(), 4);
        assert_eq!(mesh.vertices().points()[2], Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(mesh.faces(), &[[0, 1, 2], [0, 2, 3]]);
        assert_relative_eq!(mesh.surface_area(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn face_index_out_of_range() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n";
        assert!(matches!(
            parse_ply(text.as_bytes()),
            Err(MeshError::BadFaceIndex { vertex: 5, .. })
        ));
    }

    #[test]
    fn cloud_invariants() {
        assert!(matches!(PointCloud::new(vec![]), Err(MeshError::Empty)));
        assert!(matches!(
            PointCloud::new(vec![Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)]),
            Err(MeshError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn centroid_examples() {
        let cube = PointCloud::new(unit_cube()).unwrap();
        assert_eq!(centroid(&cube), Vec3::new(0.5, 0.5, 0.5));
        let single = PointCloud::new(vec![Vec3::new(3.0, -2.0, 7.5)]).unwrap();
        assert_eq!(centroid(&single), Vec3::new(3.0, -2.0, 7.5));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(&mut rng, 1000, 50.0);
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        for p in cloud.points() {
            sx += p.x;
            sy += p.y;
            sz += p.z;
        }
        let n = cloud.len() as f64;
        let oracle = Vec3::new(sx / n, sy / n, sz / n);
        assert!((centroid(&cloud) - oracle).amax() < 1e-12);
    }

    #[test]
    fn diameter_examples() {
        let cube = PointCloud::new(unit_cube()).unwrap();
        assert_relative_eq!(diameter(&cube).unwrap(), 3f64.sqrt(), epsilon = 1e-15);
        let two = PointCloud::new(vec![Vec3::zeros(), Vec3::new(0.0, 7.0, 0.0)]).unwrap();
        assert_eq!(diameter(&two).unwrap(), 7.0);
        let one = PointCloud::new(vec![Vec3::zeros()]).unwrap();
        assert!(matches!(diameter(&one), Err(MeshError::DegenerateInput(_))));
    }

    fn brute_diameter(points: &[Vec3]) -> f64 {
        let mut best = 0.0f64;
        for i in 0..points.len() {
            for j in 0..points.len() {
                let d = ((points[i].x - points[j].x).powi(2)
                    + (points[i].y - points[j].y).powi(2)
                    + (points[i].z - points[j].z).powi(2))
                .sqrt();
                best = best.max(d);
            }
        }
        best
    }

    #[test]
    fn diameter_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = random_cloud(&mut rng, 500, 100.0);
        assert_eq!(diameter(&cloud).unwrap(), brute_diameter(cloud.points()));
    }

    #[test]
    fn pruned_diameter_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Elongated cloud above the exhaustive limit.
        let pts: Vec<Vec3> = (0..25_000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-200.0..200.0),
                    rng.random_range(-40.0..40.0),
                    rng.random_range(-20.0..20.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let exact = max_pairwise_distance(cloud.points()).sqrt();
        assert_eq!(diameter(&cloud).unwrap(), exact);
    }

    #[test]
    fn diameter_rigid_invariance_and_centroid_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cloud = random_cloud(&mut rng, 300, 80.0);
        let d0 = diameter(&cloud).unwrap();
        let c0 = centroid(&cloud);
        for _ in 0..100 {
            let pose = Pose::new(
                random_rotation(&mut rng),
                Vec3::new(
                    rng.random_range(-500.0..500.0),
                    rng.random_range(-500.0..500.0),
                    rng.random_range(-500.0..500.0),
                ),
            )
            .unwrap();
            let moved =
                PointCloud::new(cloud.points().iter().map(|p| pose.transform_point(p)).collect()).unwrap();
            let d1 = diameter(&moved).unwrap();
            assert!(((d1 - d0) / d0).abs() < 1e-9);
            assert!((centroid(&moved) - pose.transform_point(&c0)).amax() < 1e-9);
        }
    }

    #[test]
    fn write_then_parse_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(3..60);
            let cloud = random_cloud(&mut rng, n, 1e3);
            let faces = (0..n / 3).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
            let mesh = TriangleMesh::new(cloud, faces).unwrap();
            let back = parse_ply(&write_ply(&mesh)).unwrap();
            assert_eq!(back, mesh);
        }
    }

    #[test]
    fn stride_subsampling() {
        let pts: Vec<Vec3> = (0..25).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let sub = cloud.subsample_stride(10);
        assert_eq!(sub.len(), 9);
        assert_eq!(sub.points()[1].x, 3.0);
        assert_eq!(cloud.subsample_stride(100).len(), 25);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_any_coordinates(coords in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 3..90)) {
                let pts: Vec<Vec3> = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
                let mesh = TriangleMesh::from_cloud(PointCloud::new(pts).unwrap());
                let back = parse_ply(&write_ply(&mesh)).unwrap();
                prop_assert_eq!(back, mesh);
            }
        }
    }
}
