use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Point3;

use super::IoError;

/// Mesh data as stored in an OBJ file: positions, texture coordinates, and
/// triangles indexing both (`v/vt` faces).
#[derive(Debug, Clone)]
pub struct ObjData {
    pub vertices: Vec<Point3<f64>>,
    pub uvs: Vec<[f64; 2]>,
    /// Per face: three (vertex index, uv index) pairs, zero-based.
    pub faces: Vec<[[usize; 2]; 3]>,
}

impl ObjData {
    /// Per-face corner UVs in the layout the atlas constructor takes.
    pub fn face_uvs(&self) -> Vec<[[f64; 2]; 3]> {
        self.faces
            .iter()
            .map(|f| [self.uvs[f[0][1]], self.uvs[f[1][1]], self.uvs[f[2][1]]])
            .collect()
    }

    /// Faces as plain vertex-index triples.
    pub fn vertex_faces(&self) -> Vec<[usize; 3]> {
        self.faces
            .iter()
            .map(|f| [f[0][0], f[1][0], f[2][0]])
            .collect()
    }
}

/// Reads a triangle OBJ with `v`, `vt` and `f v/vt ...` records. Faces with
/// more than three corners are fanned into triangles; normals and other
/// record types are ignored.
pub fn read_obj(path: &Path) -> Result<ObjData, IoError> {
    let shown = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let mut parts = s.split_whitespace();
        match parts.next() {
            Some("v") => {
                let c = parse_floats::<3>(&mut parts, &shown, lineno)?;
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("vt") => {
                let c = parse_floats::<2>(&mut parts, &shown, lineno)?;
                uvs.push([c[0], c[1]]);
            }
            Some("f") => {
                let mut corners = Vec::new();
                for p in parts {
                    let mut it = p.split('/');
                    let v = parse_index(it.next(), vertices.len(), &shown, lineno)?;
                    let t = parse_index(it.next(), uvs.len(), &shown, lineno)?;
                    corners.push([v, t]);
                }
                if corners.len() < 3 {
                    return Err(IoError::parse(&shown, lineno, "face needs >= 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(ObjData {
        vertices,
        uvs,
        faces,
    })
}

/// Writes vertices as f32 text (the shortest representation that parses
/// back to the same f32), matching the precision meshes are exchanged at.
pub fn write_obj(path: &Path, data: &ObjData) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in &data.vertices {
        writeln!(out, "v {} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
    }
    for uv in &data.uvs {
        writeln!(out, "vt {} {}", uv[0] as f32, uv[1] as f32)?;
    }
    for f in &data.faces {
        writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            f[0][0] + 1,
            f[0][1] + 1,
            f[1][0] + 1,
            f[1][1] + 1,
            f[2][0] + 1,
            f[2][1] + 1
        )?;
    }
    out.flush()?;
    Ok(())
}

fn parse_floats<const N: usize>(
    parts: &mut dyn Iterator<Item = &str>,
    path: &str,
    line: usize,
) -> Result<[f64; N], IoError> {
    let mut out = [0.0; N];
    for slot in &mut out {
        let tok = parts
            .next()
            .ok_or_else(|| IoError::parse(path, line, "too few numbers"))?;
        *slot = tok
            .parse::<f64>()
            .map_err(|_| IoError::parse(path, line, format!("bad number {tok:?}")))?;
    }
    Ok(out)
}

fn parse_index(tok: Option<&str>, count: usize, path: &str, line: usize) -> Result<usize, IoError> {
    let tok = tok.ok_or_else(|| IoError::parse(path, line, "face corner needs v/vt"))?;
    let idx: i64 = tok
        .parse()
        .map_err(|_| IoError::parse(path, line, format!("bad index {tok:?}")))?;
    // OBJ indices are 1-based; negative indices count from the end.
    let resolved = if idx > 0 {
        (idx - 1) as usize
    } else if idx < 0 && (-idx) as usize <= count {
        count - (-idx) as usize
    } else {
        return Err(IoError::parse(
            path,
            line,
            format!("index {idx} out of range"),
        ));
    };
    if resolved >= count {
        return Err(IoError::parse(
            path,
            line,
            format!("index {idx} out of range (have {count})"),
        ));
    }
    Ok(resolved)
}
