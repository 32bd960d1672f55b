//! Binary little-endian PLY with `x y z nx ny nz` double properties.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::io_err;
use crate::cloud::{Frame, NormalCloud, NormalPoint};
use crate::error::IoError;
use crate::geom::voxel_downsample;
use crate::registration::Keyframe;

const PROPERTIES: [&str; 6] = ["x", "y", "z", "nx", "ny", "nz"];

pub fn write_ply(path: &Path, cloud: &NormalCloud) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment normal cloud\nelement vertex {}\n",
        cloud.len()
    );
    for p in PROPERTIES {
        header.push_str(&format!("property double {p}\n"));
    }
    header.push_str("end_header\n");
    let result = (|| {
        out.write_all(header.as_bytes())?;
        for p in cloud.iter() {
            for v in p.position.iter().chain(p.normal.iter()) {
                out.write_f64::<LittleEndian>(*v)?;
            }
        }
        out.flush()
    })();
    result.map_err(|e| io_err(path, e))
}

/// Reads files written by [`write_ply`]; other layouts are rejected.
pub fn read_ply(path: &Path) -> Result<NormalCloud, IoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut input = BufReader::new(file);
    let bad = |line: usize, message: &str| IoError::Parse {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    };
    let mut count = None;
    let mut props = Vec::new();
    let mut line_no = 0;
    loop {
        let mut line = String::new();
        if input.read_line(&mut line).map_err(|e| io_err(path, e))? == 0 {
            return Err(bad(line_no, "header ended before end_header"));
        }
        line_no += 1;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(bad(1, "missing ply magic")),
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", ..] => return Err(bad(line_no, "only binary_little_endian 1.0 is supported")),
            ["comment", ..] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad(line_no, "bad vertex count"))?),
            ["property", "double", name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(bad(line_no, &format!("unsupported header line `{}`", line.trim()))),
        }
    }
    if props != PROPERTIES {
        return Err(bad(line_no, "expected double properties x y z nx ny nz"));
    }
    let count = count.ok_or_else(|| bad(line_no, "no vertex element"))?;
    let mut points = Vec::with_capacity(count);
    let mut v = [0.0; 6];
    for _ in 0..count {
        input
            .read_f64_into::<LittleEndian>(&mut v)
            .map_err(|e| io_err(path, e))?;
        points.push(NormalPoint::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        ));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(|e| io_err(path, e))?;
    if !rest.is_empty() {
        return Err(IoError::Format(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    Ok(NormalCloud::new(points, Frame::World))
}

/// Merges all keyframe clouds in the world frame at `voxel` resolution and writes them.
pub fn export_map(keyframes: &[Keyframe], voxel: f64, path: &Path) -> Result<NormalCloud, IoError> {
    if keyframes.is_empty() {
        return Err(IoError::Format("map export needs at least one keyframe".into()));
    }
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(IoError::Format(format!("voxel size must be positive, got {voxel}")));
    }
    let world: NormalCloud = keyframes
        .iter()
        .flat_map(|k| k.cloud.iter().map(move |p| p.transformed(&k.pose)))
        .collect();
    let merged = NormalCloud {
        frame: Frame::World,
        ..voxel_downsample(&world, voxel)
    };
    write_ply(path, &merged)?;
    Ok(merged)
}
