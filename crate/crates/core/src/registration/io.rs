//! Point cloud and pose files.
//!
//! * ASCII XYZ: one `x y z` triple per line; blank lines and `#` comments skipped.
//! * PLY: `binary_little_endian 1.0` with a `vertex` element whose `x`, `y`, `z`
//!   properties are `float` (other vertex properties are skipped by size).
//! * Pose JSON: `{"t": [x, y, z], "q": [qx, qy, qz, qw]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::pose::Pose;
use crate::error::{Error, Result};

pub fn read_xyz(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    parse_xyz(BufReader::new(File::open(path)?))
}

pub fn parse_xyz(reader: impl BufRead) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        if vals.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 values, got {}", n + 1, vals.len())));
        }
        out.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

pub fn write_xyz(path: impl AsRef<Path>, points: &[Vector3<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

fn scalar_size(ty: &str) -> Result<usize> {
    Ok(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
        "double" | "float64" => 8,
        other => return Err(Error::Parse(format!("unknown PLY scalar type {other}"))),
    })
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    parse_ply(BufReader::new(File::open(path)?))
}

struct Element {
    name: String,
    count: usize,
    stride: usize,
    xyz_offsets: [Option<usize>; 3],
}

pub fn parse_ply(mut reader: impl BufRead) -> Result<Vec<Vector3<f64>>> {
    let mut line = String::new();
    let next_line = |reader: &mut dyn BufRead, line: &mut String| -> Result<()> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(Error::Parse("unexpected end of PLY header".into()));
        }
        Ok(())
    };

    next_line(&mut reader, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Parse("missing ply magic".into()));
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut format_ok = false;
    loop {
        next_line(&mut reader, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, _] => return Err(Error::Parse(format!("unsupported PLY format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Parse(format!("bad element count {count}")))?,
                stride: 0,
                xyz_offsets: [None; 3],
            }),
            ["property", "list", ..] => return Err(Error::Parse("PLY list properties are not supported".into())),
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::Parse("property before element".into()))?;
                let size = scalar_size(ty)?;
                if el.name == "vertex" {
                    let axis = match *name {
                        "x" => Some(0),
                        "y" => Some(1),
                        "z" => Some(2),
                        _ => None,
                    };
                    if let Some(a) = axis {
                        if *ty != "float" && *ty != "float32" {
                            return Err(Error::Parse(format!("vertex {name} must be float, got {ty}")));
                        }
                        el.xyz_offsets[a] = Some(el.stride);
                    }
                }
                el.stride += size;
            }
            [] => {}
            _ => return Err(Error::Parse(format!("unrecognized PLY header line: {}", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(Error::Parse("PLY format line missing".into()));
    }

    let mut out = Vec::new();
    for el in &elements {
        let mut buf = vec![0u8; el.stride * el.count];
        reader.read_exact(&mut buf)?;
        if el.name != "vertex" {
            continue;
        }
        let [Some(ox), Some(oy), Some(oz)] = el.xyz_offsets else {
            return Err(Error::Parse("vertex element lacks x/y/z".into()));
        };
        let f = |rec: &[u8], o: usize| f32::from_le_bytes([rec[o], rec[o + 1], rec[o + 2], rec[o + 3]]) as f64;
        out.reserve(el.count);
        for rec in buf.chunks_exact(el.stride) {
            out.push(Vector3::new(f(rec, ox), f(rec, oy), f(rec, oz)));
        }
    }
    Ok(out)
}

/// Writes points as float32 `x y z` vertices.
pub fn write_ply(path: impl AsRef<Path>, points: &[Vector3<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )?;
    for p in points {
        for v in [p.x, p.y, p.z] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `.ply` as binary PLY and anything else as ASCII XYZ.
pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<Vector3<f64>>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("ply") => read_ply(path),
        _ => read_xyz(path),
    }
}

pub fn read_pose(path: impl AsRef<Path>) -> Result<Pose> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_pose(path: impl AsRef<Path>, pose: &Pose) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, pose)?;
    w.flush()?;
    Ok(())
}
