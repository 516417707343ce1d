use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Point cloud with per-point normals, as exchanged through PLY files.
/// `comments` round-trip through the header (provenance such as the source
/// frame id travels with the file).
#[derive(Debug, Clone)]
pub struct PointCloudData {
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub comments: Vec<String>,
}

/// Writes points and normals as float32 `x y z nx ny nz` vertex elements.
pub fn write_ply_points(
    path: &Path,
    data: &PointCloudData,
    format: PlyFormat,
) -> Result<(), IoError> {
    assert_eq!(data.points.len(), data.normals.len());
    let mut out = BufWriter::new(File::create(path)?);
    let fmt_line = match format {
        PlyFormat::Ascii => "format ascii 1.0",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0",
    };
    write!(out, "ply\n{fmt_line}\n")?;
    for c in &data.comments {
        // Header records are line-structured; a newline would corrupt it.
        assert!(!c.contains('\n'), "PLY comment must be a single line");
        writeln!(out, "comment {c}")?;
    }
    write!(
        out,
        "element vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n",
        data.points.len()
    )?;
    for (p, n) in data.points.iter().zip(&data.normals) {
        let row = [
            p.x as f32, p.y as f32, p.z as f32, n.x as f32, n.y as f32, n.z as f32,
        ];
        match format {
            PlyFormat::Ascii => {
                writeln!(
                    out,
                    "{} {} {} {} {} {}",
                    row[0], row[1], row[2], row[3], row[4], row[5]
                )?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in row {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a PLY vertex cloud with x,y,z and optional nx,ny,nz float
/// properties (missing normals come back as zero vectors). Handles the
/// ascii and binary little-endian variants this crate writes.
pub fn read_ply_points(path: &Path) -> Result<PointCloudData, IoError> {
    let shown = path.display().to_string();
    let mut reader = BufReader::new(File::open(path)?);

    // Header is ascii lines regardless of body encoding.
    let mut line = String::new();
    let mut lineno = 0;
    let read_line = |reader: &mut BufReader<File>, line: &mut String| -> Result<usize, IoError> {
        line.clear();
        let n = reader.read_line(line)?;
        Ok(n)
    };

    read_line(&mut reader, &mut line)?;
    lineno += 1;
    if line.trim() != "ply" {
        return Err(IoError::parse(&shown, lineno, "not a PLY file"));
    }

    let mut format = None;
    let mut count = 0usize;
    let mut props: Vec<String> = Vec::new();
    let mut comments = Vec::new();
    let mut in_vertex_element = false;
    loop {
        if read_line(&mut reader, &mut line)? == 0 {
            return Err(IoError::parse(&shown, lineno, "header not terminated"));
        }
        lineno += 1;
        let s = line.trim();
        if s == "end_header" {
            break;
        }
        let mut parts = s.split_whitespace();
        match parts.next() {
            Some("format") => {
                format = match parts.next() {
                    Some("ascii") => Some(PlyFormat::Ascii),
                    Some("binary_little_endian") => Some(PlyFormat::BinaryLittleEndian),
                    other => {
                        return Err(IoError::parse(
                            &shown,
                            lineno,
                            format!("unsupported format {other:?}"),
                        ))
                    }
                };
            }
            Some("element") => {
                let name = parts.next().unwrap_or("");
                in_vertex_element = name == "vertex";
                if in_vertex_element {
                    count = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| IoError::parse(&shown, lineno, "bad vertex count"))?;
                } else if !name.is_empty() {
                    return Err(IoError::parse(
                        &shown,
                        lineno,
                        format!("unsupported element {name:?}"),
                    ));
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let ty = parts.next().unwrap_or("");
                    if ty != "float" && ty != "float32" {
                        return Err(IoError::parse(
                            &shown,
                            lineno,
                            format!("unsupported property type {ty:?}"),
                        ));
                    }
                    props.push(parts.next().unwrap_or("").to_string());
                }
            }
            Some("comment") => comments.push(s["comment".len()..].trim_start().to_string()),
            Some("obj_info") => {}
            other => {
                return Err(IoError::parse(
                    &shown,
                    lineno,
                    format!("unsupported header record {other:?}"),
                ))
            }
        }
    }
    let format = format.ok_or_else(|| IoError::parse(&shown, lineno, "missing format line"))?;
    let idx = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (idx("x"), idx("y"), idx("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(IoError::parse(&shown, lineno, "missing x/y/z properties")),
    };
    let normals_at = match (idx("nx"), idx("ny"), idx("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    match format {
        PlyFormat::Ascii => {
            for _ in 0..count {
                if read_line(&mut reader, &mut line)? == 0 {
                    return Err(IoError::parse(&shown, lineno, "truncated vertex data"));
                }
                lineno += 1;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| IoError::parse(&shown, lineno, "bad vertex number"))?;
                if vals.len() != props.len() {
                    return Err(IoError::parse(&shown, lineno, "wrong column count"));
                }
                points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
                normals.push(match normals_at {
                    Some((a, b, c)) => Vector3::new(vals[a], vals[b], vals[c]),
                    None => Vector3::zeros(),
                });
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = props.len() * 4;
            let mut buf = vec![0u8; stride];
            for _ in 0..count {
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| IoError::parse(&shown, lineno, "truncated binary vertex data"))?;
                let at =
                    |i: usize| f32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap()) as f64;
                points.push(Point3::new(at(ix), at(iy), at(iz)));
                normals.push(match normals_at {
                    Some((a, b, c)) => Vector3::new(at(a), at(b), at(c)),
                    None => Vector3::zeros(),
                });
            }
        }
    }
    Ok(PointCloudData {
        points,
        normals,
        comments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloudData {
        let points = vec![
            Point3::new(0.5, -0.25, 1.0),
            Point3::new(0.125, 2.0, -3.5),
            Point3::new(-1.0, 0.0625, 0.0),
        ];
        let normals = vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
        ];
        PointCloudData {
            points,
            normals,
            comments: vec!["frame 00042".into()],
        }
    }

    #[test]
    fn ascii_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ply");
        let data = sample();
        write_ply_points(&path, &data, PlyFormat::Ascii).unwrap();
        let back = read_ply_points(&path).unwrap();
        assert_eq!(back.points.len(), 3);
        for (a, b) in back.points.iter().zip(&data.points) {
            assert_eq!(a, b);
        }
        for (a, b) in back.normals.iter().zip(&data.normals) {
            assert_eq!(a, b);
        }
        assert_eq!(back.comments, data.comments);
    }

    #[test]
    fn binary_round_trip_matches_ascii_content() {
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.ply");
        let pb = dir.path().join("b.ply");
        let data = sample();
        write_ply_points(&pa, &data, PlyFormat::Ascii).unwrap();
        write_ply_points(&pb, &data, PlyFormat::BinaryLittleEndian).unwrap();
        let a = read_ply_points(&pa).unwrap();
        let b = read_ply_points(&pb).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.normals, b.normals);
    }

    #[test]
    fn missing_normals_default_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        )
        .unwrap();
        let data = read_ply_points(&path).unwrap();
        assert_eq!(data.points[0], Point3::new(1.0, 2.0, 3.0));
        assert_eq!(data.normals[0], Vector3::zeros());
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ply");
        std::fs::write(&path, "plywood\n").unwrap();
        assert!(matches!(read_ply_points(&path), Err(IoError::Parse { .. })));
    }
}
