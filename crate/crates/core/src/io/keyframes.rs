//! Keyframe archive written by `run` and read by `export-map`.
//!
//! Layout, little-endian: magic `LIOKF\0\0\0`, `u32` version, `u64` keyframe count,
//! then per keyframe a `u64` id, `f64` timestamp, the pose as `x y z qx qy qz qw`
//! (`f64`), a `u64` point count and that many `x y z nx ny nz` `f64` records.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::io_err;
use crate::cloud::{Frame, NormalCloud, NormalPoint};
use crate::error::IoError;
use crate::geom::Pose;
use crate::registration::Keyframe;

const MAGIC: &[u8; 8] = b"LIOKF\0\0\0";
const VERSION: u32 = 1;

pub fn write_keyframes(path: &Path, keyframes: &[Keyframe]) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let result = (|| -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        out.write_u64::<LittleEndian>(keyframes.len() as u64)?;
        for kf in keyframes {
            out.write_u64::<LittleEndian>(kf.id as u64)?;
            out.write_f64::<LittleEndian>(kf.timestamp)?;
            let q = kf.pose.quaternion();
            for v in kf.pose.translation.iter().chain(q.iter()) {
                out.write_f64::<LittleEndian>(*v)?;
            }
            out.write_u64::<LittleEndian>(kf.cloud.len() as u64)?;
            for p in kf.cloud.iter() {
                for v in p.position.iter().chain(p.normal.iter()) {
                    out.write_f64::<LittleEndian>(*v)?;
                }
            }
        }
        out.flush()
    })();
    result.map_err(|e| io_err(path, e))
}

pub fn read_keyframes(path: &Path) -> Result<Vec<Keyframe>, IoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut input = BufReader::new(file);
    let truncated = |e: std::io::Error| {
        if e.kind() == ErrorKind::UnexpectedEof {
            IoError::Format(format!("{}: truncated keyframe archive", path.display()))
        } else {
            io_err(path, e)
        }
    };
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(IoError::Format(format!("{}: not a keyframe archive", path.display())));
    }
    let version = input.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(IoError::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let count = input.read_u64::<LittleEndian>().map_err(truncated)?;
    let mut keyframes = Vec::new();
    for _ in 0..count {
        let id = input.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let timestamp = input.read_f64::<LittleEndian>().map_err(truncated)?;
        let mut pose = [0.0; 7];
        input.read_f64_into::<LittleEndian>(&mut pose).map_err(truncated)?;
        let n = input.read_u64::<LittleEndian>().map_err(truncated)?;
        let mut points = Vec::new();
        let mut v = [0.0; 6];
        for _ in 0..n {
            input.read_f64_into::<LittleEndian>(&mut v).map_err(truncated)?;
            points.push(NormalPoint::new(
                Vector3::new(v[0], v[1], v[2]),
                Vector3::new(v[3], v[4], v[5]),
            ));
        }
        keyframes.push(Keyframe {
            id,
            timestamp,
            pose: Pose::from_quaternion(
                [pose[3], pose[4], pose[5], pose[6]],
                Vector3::new(pose[0], pose[1], pose[2]),
            ),
            cloud: NormalCloud::new(points, Frame::Sensor),
        });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| io_err(path, e))? != 0 {
        return Err(IoError::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok(keyframes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kf.bin");
        let kfs: Vec<Keyframe> = (0..3)
            .map(|i| Keyframe {
                id: i,
                timestamp: i as f64 * 0.7,
                pose: Pose::from_yaw(0.3 * i as f64, Vector3::new(i as f64, -1.0, 0.25)),
                cloud: (0..i * 4)
                    .map(|k| NormalPoint::new(Vector3::new(k as f64, 0.1, 2.0), Vector3::z()))
                    .collect(),
            })
            .collect();
        write_keyframes(&path, &kfs).unwrap();
        let back = read_keyframes(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in kfs.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.timestamp, b.timestamp);
            assert!(a.pose.distance_to(&b.pose) < 1e-12 && a.pose.rotation_angle_to(&b.pose) < 1e-12);
            assert_eq!(a.cloud.points, b.cloud.points);
        }
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kf.bin");
        std::fs::write(&path, b"LIOKF\0\0\0\x01\0\0\0\x05").unwrap();
        assert!(matches!(read_keyframes(&path), Err(IoError::Format(_))));
        std::fs::write(&path, b"ply\nformat").unwrap();
        assert!(matches!(read_keyframes(&path), Err(IoError::Format(_))));
    }
}
