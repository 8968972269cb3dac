use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{Mesh, MeshError};
use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ObjError {
    pub line: usize,
    pub message: String,
}

/// Raw contents of an OBJ file: positions, optional per-vertex uv, triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjData<T> {
    pub vertices: Vec<[T; 3]>,
    pub uv: Option<Vec<[T; 2]>>,
    pub faces: Vec<[usize; 3]>,
}

/// Writes `v`, optional `vt` (one per vertex) and `f` records.
///
/// Texture v is stored bottom-up as OBJ viewers expect; internally v = 0 is
/// the top row of the atlas.
pub fn write_obj<T: Real, W: Write>(
    out: &mut W,
    vertices: &[[T; 3]],
    faces: &[[usize; 3]],
    uv: Option<&[[T; 2]]>,
    material: Option<(&str, &str)>,
) -> std::io::Result<()> {
    let mut s = String::new();
    if let Some((lib, _)) = material {
        let _ = writeln!(s, "mtllib {lib}");
    }
    for v in vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    if let Some(uv) = uv {
        for t in uv {
            let _ = writeln!(s, "vt {} {}", t[0], T::one() - t[1]);
        }
    }
    if let Some((_, name)) = material {
        let _ = writeln!(s, "usemtl {name}");
    }
    for f in faces {
        match uv {
            Some(_) => {
                let _ = writeln!(s, "f {0}/{0} {1}/{1} {2}/{2}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
            None => {
                let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
    }
    out.write_all(s.as_bytes())
}

fn parse_index(token: &str, count: usize, line: usize, what: &str) -> Result<usize, ObjError> {
    let err = |message: String| ObjError { line, message };
    let raw: i64 = token
        .parse()
        .map_err(|_| err(format!("bad {what} index `{token}`")))?;
    let resolved = match raw {
        0 => return Err(err(format!("{what} index 0 is invalid (OBJ is 1-indexed)"))),
        r if r > 0 => r as usize - 1,
        r => {
            let back = (-r) as usize;
            if back > count {
                return Err(err(format!("relative {what} index {r} out of range")));
            }
            count - back
        }
    };
    if resolved >= count {
        return Err(err(format!("{what} index {raw} out of range ({count} defined)")));
    }
    Ok(resolved)
}

/// Parses triangle OBJ text. Polygons with more than three corners are rejected.
pub fn parse_obj<T: Real>(text: &str) -> Result<ObjData<T>, ObjError> {
    let mut vertices = Vec::new();
    let mut texcoords: Vec<[T; 2]> = Vec::new();
    let mut faces = Vec::new();
    let mut face_uv: Vec<[Option<usize>; 3]> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let err = |message: String| ObjError { line, message };
        let floats = |parts: std::str::SplitWhitespace, n: usize| -> Result<Vec<T>, ObjError> {
            let vals: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|_| err(format!("bad number `{p}`"))))
                .collect::<Result<_, _>>()?;
            if vals.len() < n {
                return Err(err(format!("expected {n} numbers, found {}", vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite coordinate".into()));
            }
            Ok(vals.into_iter().take(n).map(T::lit).collect())
        };
        match tag {
            "v" => {
                let v = floats(parts, 3)?;
                vertices.push([v[0], v[1], v[2]]);
            }
            "vt" => {
                let t = floats(parts, 2)?;
                texcoords.push([t[0], T::one() - t[1]]);
            }
            "f" => {
                let corners: Vec<&str> = parts.collect();
                if corners.len() != 3 {
                    return Err(err(format!("only triangles are supported, got {} corners", corners.len())));
                }
                let mut face = [0usize; 3];
                let mut uvs = [None; 3];
                for (k, corner) in corners.iter().enumerate() {
                    let mut fields = corner.split('/');
                    face[k] = parse_index(fields.next().unwrap_or(""), vertices.len(), line, "vertex")?;
                    if let Some(t) = fields.next().filter(|t| !t.is_empty()) {
                        uvs[k] = Some(parse_index(t, texcoords.len(), line, "texture")?);
                    }
                }
                faces.push(face);
                face_uv.push(uvs);
            }
            _ => {}
        }
    }

    // per-vertex uv only when every face corner agrees on it
    let uv = if !texcoords.is_empty() && face_uv.iter().all(|f| f.iter().all(Option::is_some)) {
        let mut per_vertex: Vec<Option<[T; 2]>> = vec![None; vertices.len()];
        let mut consistent = true;
        for (face, uvs) in faces.iter().zip(&face_uv) {
            for k in 0..3 {
                let t = texcoords[uvs[k].unwrap_or(0)];
                match per_vertex[face[k]] {
                    None => per_vertex[face[k]] = Some(t),
                    Some(prev) if prev == t => {}
                    Some(_) => consistent = false,
                }
            }
        }
        if consistent && per_vertex.iter().all(Option::is_some) {
            Some(per_vertex.into_iter().map(|t| t.unwrap_or([T::zero(); 2])).collect())
        } else {
            None
        }
    } else {
        None
    };

    Ok(ObjData { vertices, uv, faces })
}

pub fn obj_write<T: Real>(
    path: &Path,
    vertices: &[[T; 3]],
    faces: &[[usize; 3]],
    uv: Option<&[[T; 2]]>,
) -> Result<(), MeshError> {
    let io = |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut buf = Vec::new();
    write_obj(&mut buf, vertices, faces, uv, None).map_err(io)?;
    std::fs::write(path, buf).map_err(io)
}

pub fn obj_read<T: Real>(path: &Path) -> Result<Mesh<T>, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let data = parse_obj(&text)?;
    Mesh::new(data.vertices, data.faces)
}
