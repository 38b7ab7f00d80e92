//! PLY reading and writing: point clouds, 3D Gaussian exports, meshes.
//!
//! ASCII and binary little-endian bodies are supported. A vertex element with
//! `opacity`, `scale_0..2` and `rot_0..3` is decoded as Gaussians (sigmoid
//! opacity, exponential scale, normalized `w, x, y, z` quaternion); anything
//! else with `x, y, z` is a point cloud. Unrecognized vertex properties are
//! kept as attributes, except spherical-harmonic `f_rest_*` coefficients.

use std::fmt::Write as _;
use std::path::Path;

use super::bytes::Cursor;
use crate::error::{Error, Result};
use crate::fusion::TriangleMesh;
use crate::scene::{Attributes, Gaussian, GaussianSet, PointCloud, Quaternion, SceneInput, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read(self, c: &mut Cursor) -> Result<f64> {
        let b = c.take(self.size())?;
        Ok(match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
        })
    }

    fn is_integer(self) -> bool {
        !matches!(self, ScalarType::F32 | ScalarType::F64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

/// One decoded element: scalar properties row-major, list properties per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    /// `count × scalar_names.len()` values.
    pub scalars: Vec<f64>,
    pub scalar_names: Vec<String>,
    /// Values of the first list property of each row (empty if none).
    pub lists: Vec<Vec<f64>>,
}

impl Element {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.scalar_names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.scalar_names.len();
        &self.scalars[i * w..(i + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub format: PlyFormat,
    pub elements: Vec<Element>,
}

impl PlyData {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

struct HeaderLine<'a> {
    offset: usize,
    text: &'a str,
}

fn header_lines(data: &[u8]) -> Result<(Vec<HeaderLine<'_>>, usize)> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let rest = &data[pos..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(Error::parse(pos, "header ends before end_header"));
        };
        let raw = &rest[..nl];
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let text = std::str::from_utf8(raw).map_err(|_| Error::parse(pos, "header is not ASCII"))?;
        let offset = pos;
        pos += nl + 1;
        if text.trim() == "end_header" {
            return Ok((lines, pos));
        }
        lines.push(HeaderLine { offset, text });
    }
}

struct Declared {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Parses a PLY file held in memory.
pub fn parse_ply(data: &[u8]) -> Result<PlyData> {
    if !data.starts_with(b"ply\n") && !data.starts_with(b"ply\r\n") {
        return Err(Error::parse(0, "missing 'ply' magic"));
    }
    let (lines, body) = header_lines(data)?;
    let mut format = None;
    let mut declared: Vec<Declared> = Vec::new();
    for line in lines.iter().skip(1) {
        let mut words = line.text.split_whitespace();
        let Some(keyword) = words.next() else { continue };
        let at = line.offset;
        match keyword {
            "comment" | "obj_info" => {}
            "format" => {
                format = Some(match (words.next(), words.next()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    (Some("binary_big_endian"), _) => return Err(Error::parse(at, "big-endian PLY is not supported")),
                    _ => return Err(Error::parse(at, format!("unsupported format line '{}'", line.text))),
                });
            }
            "element" => {
                let (Some(name), Some(count)) = (words.next(), words.next()) else {
                    return Err(Error::parse(at, "element needs a name and a count"));
                };
                let count = count
                    .parse::<usize>()
                    .map_err(|_| Error::parse(at, format!("bad element count '{count}'")))?;
                declared.push(Declared {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            "property" => {
                let Some(el) = declared.last_mut() else {
                    return Err(Error::parse(at, "property before any element"));
                };
                let ty = |w: Option<&str>| {
                    w.and_then(ScalarType::parse)
                        .ok_or_else(|| Error::parse(at, format!("bad property line '{}'", line.text)))
                };
                let first = words.next();
                let kind = if first == Some("list") {
                    let count = ty(words.next())?;
                    if !count.is_integer() {
                        return Err(Error::parse(at, "list count must be an integer type"));
                    }
                    PropertyKind::List {
                        count,
                        item: ty(words.next())?,
                    }
                } else {
                    PropertyKind::Scalar(ty(first)?)
                };
                let name = words
                    .next()
                    .ok_or_else(|| Error::parse(at, "property without a name"))?
                    .to_string();
                if el.properties.iter().any(|p| p.name == name) {
                    return Err(Error::parse(at, format!("duplicate property '{name}'")));
                }
                el.properties.push(Property { name, kind });
            }
            other => return Err(Error::parse(at, format!("unknown header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(0, "header has no format line"))?;
    let mut elements = Vec::with_capacity(declared.len());
    let mut cursor = Cursor::at(data, body);
    let mut ascii = AsciiTokens { data, pos: body };
    for d in declared {
        let scalar_names: Vec<String> = d
            .properties
            .iter()
            .filter(|p| matches!(p.kind, PropertyKind::Scalar(_)))
            .map(|p| p.name.clone())
            .collect();
        let has_list = d.properties.iter().any(|p| matches!(p.kind, PropertyKind::List { .. }));
        // Every row needs at least this many bytes, which bounds the count before allocating.
        let min_row = match format {
            PlyFormat::Ascii => 2 * d.properties.len().max(1),
            PlyFormat::BinaryLittleEndian => d
                .properties
                .iter()
                .map(|p| match p.kind {
                    PropertyKind::Scalar(t) => t.size(),
                    PropertyKind::List { count, .. } => count.size(),
                })
                .sum::<usize>()
                .max(1),
        };
        let available = data.len() - body;
        if d.count.checked_mul(min_row).is_none_or(|need| need > available + 1) {
            return Err(Error::parse(
                body,
                format!("element '{}' declares {} rows, more than the payload can hold", d.name, d.count),
            ));
        }
        let mut scalars = Vec::with_capacity(d.count * scalar_names.len());
        let mut lists = Vec::with_capacity(if has_list { d.count } else { 0 });
        for _ in 0..d.count {
            let mut first_list = true;
            for p in &d.properties {
                match (format, &p.kind) {
                    (PlyFormat::BinaryLittleEndian, PropertyKind::Scalar(t)) => scalars.push(t.read(&mut cursor)?),
                    (PlyFormat::Ascii, PropertyKind::Scalar(_)) => scalars.push(ascii.number()?),
                    (_, PropertyKind::List { count, item }) => {
                        let at = if format == PlyFormat::Ascii { ascii.pos } else { cursor.pos() };
                        let n = match format {
                            PlyFormat::Ascii => ascii.number()?,
                            PlyFormat::BinaryLittleEndian => count.read(&mut cursor)?,
                        };
                        if !(n >= 0.0 && n.fract() == 0.0 && n <= 1e6) {
                            return Err(Error::parse(at, format!("bad list length {n}")));
                        }
                        let n = n as usize;
                        let mut values = Vec::with_capacity(n.min(64));
                        for _ in 0..n {
                            values.push(match format {
                                PlyFormat::Ascii => ascii.number()?,
                                PlyFormat::BinaryLittleEndian => item.read(&mut cursor)?,
                            });
                        }
                        if first_list {
                            lists.push(values);
                            first_list = false;
                        }
                    }
                }
            }
        }
        elements.push(Element {
            name: d.name,
            count: d.count,
            properties: d.properties,
            scalars,
            scalar_names,
            lists,
        });
    }
    Ok(PlyData { format, elements })
}

struct AsciiTokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl AsciiTokens<'_> {
    fn number(&mut self) -> Result<f64> {
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "unexpected end of ASCII body"));
        }
        let tok = std::str::from_utf8(&self.data[start..self.pos]).map_err(|_| Error::parse(start, "non-ASCII number"))?;
        tok.parse::<f64>()
            .map_err(|_| Error::parse(start, format!("bad number '{tok}'")))
    }
}

const GAUSSIAN_FIELDS: [&str; 8] = ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn vertex_positions(v: &Element) -> Result<Vec<Vec3>> {
    let (Some(x), Some(y), Some(z)) = (v.column("x"), v.column("y"), v.column("z")) else {
        return Err(Error::parse(0, "vertex element lacks x, y, z"));
    };
    Ok((0..v.count)
        .map(|i| {
            let r = v.row(i);
            Vec3::new(r[x], r[y], r[z])
        })
        .collect())
}

fn attributes(v: &Element, skip: impl Fn(&str) -> bool) -> Option<Attributes> {
    let keep: Vec<usize> = (0..v.scalar_names.len()).filter(|&c| !skip(&v.scalar_names[c])).collect();
    if keep.is_empty() {
        return None;
    }
    let mut values = Vec::with_capacity(keep.len() * v.count);
    for i in 0..v.count {
        let r = v.row(i);
        values.extend(keep.iter().map(|&c| r[c]));
    }
    Some(Attributes {
        names: keep.iter().map(|&c| v.scalar_names[c].clone()).collect(),
        values,
    })
}

/// Decodes a PLY file into a point cloud or a Gaussian set.
pub fn scene_from_ply(data: &[u8]) -> Result<SceneInput> {
    let ply = parse_ply(data)?;
    let v = ply
        .element("vertex")
        .ok_or_else(|| Error::parse(0, "no vertex element"))?;
    let positions = vertex_positions(v)?;
    let is_gaussian = GAUSSIAN_FIELDS.iter().all(|f| v.column(f).is_some());
    if !is_gaussian {
        let attributes = attributes(v, |n| matches!(n, "x" | "y" | "z"));
        return Ok(SceneInput::Points(PointCloud { positions, attributes }));
    }
    let cols: Vec<usize> = GAUSSIAN_FIELDS.iter().map(|f| v.column(f).expect("checked")).collect();
    let gaussians = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = v.row(i);
            let f: Vec<f64> = cols.iter().map(|&c| r[c]).collect();
            Gaussian::new(
                *p,
                Vec3::new(f[1].exp(), f[2].exp(), f[3].exp()),
                Quaternion([f[4], f[5], f[6], f[7]]),
                sigmoid(f[0]),
            )
            .map_err(|e| Error::parse(0, format!("gaussian {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = GaussianSet::new(gaussians)?;
    set.attributes = attributes(v, |n| {
        matches!(n, "x" | "y" | "z") || GAUSSIAN_FIELDS.contains(&n) || n.starts_with("f_rest_")
    });
    Ok(SceneInput::Gaussians(set))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<SceneInput> {
    scene_from_ply(&std::fs::read(path)?)
}

/// Triangle mesh from a PLY with `vertex` and `face` elements. Polygons are
/// fan-triangulated.
pub fn mesh_from_ply(data: &[u8]) -> Result<TriangleMesh> {
    let ply = parse_ply(data)?;
    let v = ply
        .element("vertex")
        .ok_or_else(|| Error::parse(0, "no vertex element"))?;
    let vertices = vertex_positions(v)?;
    let mut triangles = Vec::new();
    if let Some(f) = ply.element("face") {
        for (i, poly) in f.lists.iter().enumerate() {
            if poly.iter().any(|&x| !(x >= 0.0 && x < vertices.len() as f64 && x.fract() == 0.0)) {
                return Err(Error::parse(0, format!("face {i} has an invalid vertex index")));
            }
            for k in 2..poly.len() {
                triangles.push([poly[0] as u32, poly[k - 1] as u32, poly[k] as u32]);
            }
        }
    }
    let mut mesh = TriangleMesh::new(vertices, triangles)?;
    if let (Some(nx), Some(ny), Some(nz)) = (v.column("nx"), v.column("ny"), v.column("nz")) {
        mesh.normals = Some(
            (0..v.count)
                .map(|i| {
                    let r = v.row(i);
                    Vec3::new(r[nx], r[ny], r[nz]).try_normalize(0.0).unwrap_or_else(Vec3::z)
                })
                .collect(),
        );
    }
    Ok(mesh)
}

fn header(format: PlyFormat, count: usize, props: &[(&str, &str)], extra: &str) -> String {
    let mut h = String::from("ply\n");
    h += match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    };
    let _ = writeln!(h, "element vertex {count}");
    for (ty, name) in props {
        let _ = writeln!(h, "property {ty} {name}");
    }
    h += extra;
    h += "end_header\n";
    h
}

/// Point cloud with `double` coordinates and attributes.
pub fn write_points_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
    if let Some(a) = &cloud.attributes {
        names.extend(a.names.iter().cloned());
    }
    let props: Vec<(&str, &str)> = names.iter().map(|n| ("double", n.as_str())).collect();
    let mut out = header(format, cloud.len(), &props, "").into_bytes();
    for (i, p) in cloud.positions.iter().enumerate() {
        let mut row: Vec<f64> = p.iter().copied().collect();
        if let Some(a) = &cloud.attributes {
            row.extend_from_slice(a.row(i));
        }
        match format {
            PlyFormat::Ascii => {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => row.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }
    out
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Gaussians in the common 3DGS export layout (binary, `float` fields, raw
/// logit opacity and log scale).
pub fn write_gaussian_ply(set: &GaussianSet) -> Vec<u8> {
    let mut props: Vec<(&str, &str)> = vec![("float", "x"), ("float", "y"), ("float", "z")];
    let attr_names: Vec<String> = set.attributes.as_ref().map(|a| a.names.clone()).unwrap_or_default();
    props.extend(attr_names.iter().map(|n| ("float", n.as_str())));
    props.extend(GAUSSIAN_FIELDS.iter().map(|n| ("float", *n)));
    let mut out = header(PlyFormat::BinaryLittleEndian, set.len(), &props, "").into_bytes();
    for (i, g) in set.gaussians.iter().enumerate() {
        let mut row: Vec<f64> = g.mean.iter().copied().collect();
        if let Some(a) = &set.attributes {
            row.extend_from_slice(a.row(i));
        }
        row.push(logit(g.opacity));
        row.extend(g.scale.iter().map(|s| s.ln()));
        row.extend_from_slice(&g.rotation.0);
        row.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes()));
    }
    out
}

/// ASCII PLY with optional vertex normals and triangle faces.
pub fn write_mesh_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let mut props = vec![("double", "x"), ("double", "y"), ("double", "z")];
    if mesh.normals.is_some() {
        props.extend([("double", "nx"), ("double", "ny"), ("double", "nz")]);
    }
    let faces = format!("element face {}\nproperty list uchar int vertex_indices\n", mesh.triangles.len());
    let mut s = header(PlyFormat::Ascii, mesh.vertices.len(), &props, &faces);
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(s, "{:?} {:?} {:?}", v.x, v.y, v.z);
        if let Some(n) = &mesh.normals {
            let _ = write!(s, " {:?} {:?} {:?}", n[i].x, n[i].y, n[i].z);
        }
        s.push('\n');
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    s.into_bytes()
}
