//! Wavefront OBJ meshes (positions, normals, triangulated faces).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fusion::TriangleMesh;
use crate::scene::Vec3;

pub fn write_obj(mesh: &TriangleMesh) -> Vec<u8> {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    if let Some(normals) = &mesh.normals {
        for n in normals {
            let _ = writeln!(s, "vn {:?} {:?} {:?}", n.x, n.y, n.z);
        }
        for t in &mesh.triangles {
            let _ = writeln!(s, "f {0}//{0} {1}//{1} {2}//{2}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
    } else {
        for t in &mesh.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
    }
    s.into_bytes()
}

fn resolve(token: &str, count: usize, offset: usize) -> Result<u32> {
    let idx: i64 = token
        .parse()
        .map_err(|_| Error::parse(offset, format!("bad index '{token}'")))?;
    let resolved = if idx > 0 { idx - 1 } else { count as i64 + idx };
    if idx == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(Error::parse(offset, format!("index {idx} out of range")));
    }
    Ok(resolved as u32)
}

/// Parses `v`, `vn` and `f` records; polygons are fan-triangulated. Normals
/// are kept only when every vertex gets exactly one.
pub fn parse_obj(data: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(data).map_err(|e| Error::parse(e.valid_up_to(), "OBJ is not UTF-8"))?;
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut vertex_normal: Vec<Option<u32>> = Vec::new();
    let mut triangles = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let mut words = line.split_whitespace();
        let Some(kw) = words.next() else { continue };
        let vec3 = |words: &mut std::str::SplitWhitespace| -> Result<Vec3> {
            let mut v = [0.0; 3];
            for c in &mut v {
                let w = words.next().ok_or_else(|| Error::parse(at, "expected three coordinates"))?;
                *c = w.parse().map_err(|_| Error::parse(at, format!("bad number '{w}'")))?;
            }
            Ok(Vec3::new(v[0], v[1], v[2]))
        };
        match kw {
            "v" => {
                vertices.push(vec3(&mut words)?);
                vertex_normal.push(None);
            }
            "vn" => normals.push(vec3(&mut words)?),
            "f" => {
                let mut poly = Vec::new();
                for w in words {
                    let mut parts = w.split('/');
                    let v = resolve(parts.next().unwrap_or(""), vertices.len(), at)?;
                    if let Some(n) = parts.nth(1).filter(|n| !n.is_empty()) {
                        let n = resolve(n, normals.len(), at)?;
                        vertex_normal[v as usize] = Some(n);
                    }
                    poly.push(v);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(at, "face with fewer than three vertices"));
                }
                for k in 2..poly.len() {
                    triangles.push([poly[0], poly[k - 1], poly[k]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::new(vertices, triangles)?;
    if !normals.is_empty() && vertex_normal.iter().all(|n| n.is_some()) {
        mesh.normals = Some(
            vertex_normal
                .iter()
                .map(|n| normals[n.expect("checked") as usize].try_normalize(0.0).unwrap_or_else(Vec3::z))
                .collect(),
        );
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut m = TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(0.3, 0.3, 1.0)], vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(parse_obj(&write_obj(&m)).unwrap(), m);
        m.compute_vertex_normals();
        let back = parse_obj(&write_obj(&m)).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert!(back.normals.is_some());
    }

    #[test]
    fn polygons_and_negative_indices() {
        let m = parse_obj(b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn errors() {
        assert!(parse_obj(b"v 0 0\n").is_err());
        assert!(parse_obj(b"v 0 0 0\nf 1 2 3\n").is_err());
        assert!(parse_obj(b"v 0 0 0\nf 0 1 1\n").is_err());
        assert!(parse_obj(&[0xff, 0xfe]).is_err());
    }
}
