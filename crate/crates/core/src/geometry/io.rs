//! File formats: a text-headered raw-float volume format and one-line plane
//! records ("zeta beta phi d", degrees/voxels).

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use super::{GeometryError, Plane, Result, Volume};

/// Write a volume: plain-text header (shape, spacing, byte order) followed by
/// little-endian 32-bit float voxels in x-fastest order.
pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    let s = vol.shape();
    write!(
        w,
        "volume 1\nshape {} {} {}\nspacing {}\nbyteorder little\ndata\n",
        s[0],
        s[1],
        s[2],
        vol.spacing()
    )?;
    let mut buf = Vec::with_capacity(s[0] * s[1] * s[2] * 4);
    for z in 0..s[2] {
        for y in 0..s[1] {
            for x in 0..s[0] {
                buf.extend_from_slice(&vol.voxels()[(x, y, z)].to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let f: std::fs::File = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    let mut header = Vec::new();
    // Read header lines up to and including "data".
    loop {
        let mut line = Vec::new();
        let n = read_line(&mut r, &mut line)?;
        if n == 0 {
            return Err(GeometryError::Malformed("missing data marker".into()));
        }
        let text = String::from_utf8_lossy(&line).trim().to_string();
        if text == "data" {
            break;
        }
        header.push(text);
    }
    let mut shape = None;
    let mut spacing = 1.0f64;
    for line in &header {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("volume") => {}
            Some("shape") => {
                let dims: Vec<usize> = it.map(|t| t.parse().unwrap_or(0)).collect();
                if dims.len() != 3 {
                    return Err(GeometryError::Malformed(format!("bad shape line: {line}")));
                }
                shape = Some([dims[0], dims[1], dims[2]]);
            }
            Some("spacing") => {
                spacing = it
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| GeometryError::Malformed(format!("bad spacing: {line}")))?;
            }
            Some("byteorder") => {
                if it.next() != Some("little") {
                    return Err(GeometryError::Malformed("unsupported byte order".into()));
                }
            }
            _ => return Err(GeometryError::Malformed(format!("unknown header line: {line}"))),
        }
    }
    let shape = shape.ok_or_else(|| GeometryError::Malformed("missing shape".into()))?;
    let total = shape[0] * shape[1] * shape[2];
    let mut raw = vec![0u8; total * 4];
    r.read_exact(&mut raw)?;
    let mut vox = Array3::<f32>::zeros((shape[0], shape[1], shape[2]));
    let mut off = 0;
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                vox[(x, y, z)] = f32::from_le_bytes([
                    raw[off],
                    raw[off + 1],
                    raw[off + 2],
                    raw[off + 3],
                ]);
                off += 4;
            }
        }
    }
    Volume::new(vox, spacing)
}

fn read_line<R: BufRead>(r: &mut R, out: &mut Vec<u8>) -> Result<usize> {
    let mut byte = [0u8; 1];
    let mut n = 0;
    loop {
        match r.read(&mut byte)? {
            0 => return Ok(n),
            _ => {
                n += 1;
                if byte[0] == b'\n' {
                    return Ok(n);
                }
                out.push(byte[0]);
            }
        }
    }
}

/// One text line "zeta beta phi d" in degrees/voxels.
pub fn write_plane_line(p: &Plane) -> String {
    let a = p.angles();
    format!("{:.12} {:.12} {:.12} {:.12}", a[0], a[1], a[2], p.d())
}

pub fn read_plane_line(line: &str) -> Result<Plane> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| GeometryError::Malformed(format!("bad plane line '{line}': {e}")))?;
    if vals.len() != 4 {
        return Err(GeometryError::Malformed(format!(
            "plane line needs 4 fields, got {}",
            vals.len()
        )));
    }
    Plane::from_params(vals[0], vals[1], vals[2], vals[3])
}
