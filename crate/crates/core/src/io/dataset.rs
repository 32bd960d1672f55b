//! On-disk dataset: `scans.bin` (binary, little-endian) and `imu.txt` (one sample per line).
//!
//! `scans.bin` layout: the 8-byte magic `LIOSCAN\0`, a `u32` version, then per scan
//! an `f64` start time, a `u64` point count and that many `(t_offset, x, y, z)` `f64`
//! quadruples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::{io_err, ScanRecord};
use crate::error::IoError;
use crate::imu::ImuSample;

pub const SCANS_FILE: &str = "scans.bin";
pub const IMU_FILE: &str = "imu.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";

const MAGIC: &[u8; 8] = b"LIOSCAN\0";
const VERSION: u32 = 1;

/// Streaming writer for `scans.bin`.
pub struct ScanWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl ScanWriter {
    pub fn create(path: &Path) -> Result<Self, IoError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(MAGIC).map_err(|e| io_err(path, e))?;
        out.write_u32::<LittleEndian>(VERSION).map_err(|e| io_err(path, e))?;
        Ok(Self {
            out,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, scan: &ScanRecord) -> Result<(), IoError> {
        let path = self.path.clone();
        let w = &mut self.out;
        let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_f64::<LittleEndian>(scan.start_time)?;
            w.write_u64::<LittleEndian>(scan.points.len() as u64)?;
            for (t, p) in &scan.points {
                w.write_f64::<LittleEndian>(*t)?;
                w.write_f64::<LittleEndian>(p.x)?;
                w.write_f64::<LittleEndian>(p.y)?;
                w.write_f64::<LittleEndian>(p.z)?;
            }
            Ok(())
        };
        run(w).map_err(|e| io_err(&path, e))
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Streaming reader over `scans.bin`, optionally checking each scan against an IMU time span.
pub struct ScanReader {
    input: Option<BufReader<File>>,
    path: PathBuf,
    imu_span: Option<(f64, f64)>,
    index: usize,
}

impl ScanReader {
    pub fn open(path: &Path) -> Result<Self, IoError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let empty = file.metadata().map_err(|e| io_err(path, e))?.len() == 0;
        let mut input = BufReader::new(file);
        if !empty {
            let mut magic = [0u8; 8];
            input.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
            let version = input.read_u32::<LittleEndian>().map_err(|e| io_err(path, e))?;
            if &magic != MAGIC || version != VERSION {
                return Err(IoError::Format(format!(
                    "{}: not a version-{VERSION} scan file",
                    path.display()
                )));
            }
        }
        Ok(Self {
            input: (!empty).then_some(input),
            path: path.to_path_buf(),
            imu_span: None,
            index: 0,
        })
    }

    /// Rejects scans that reach outside `[start, end]`.
    pub fn with_imu_span(mut self, start: f64, end: f64) -> Self {
        self.imu_span = Some((start, end));
        self
    }

    fn read_scan(&mut self) -> Result<Option<ScanRecord>, IoError> {
        let Some(input) = self.input.as_mut() else {
            return Ok(None);
        };
        let start_time = match input.read_f64::<LittleEndian>() {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(io_err(&self.path, e)),
        };
        let truncated = |e: std::io::Error| {
            IoError::Format(format!("{}: scan {} is truncated ({e})", self.path.display(), self.index))
        };
        let n = input.read_u64::<LittleEndian>().map_err(truncated)?;
        let mut points = Vec::with_capacity(n.min(1 << 24) as usize);
        let mut last = f64::NEG_INFINITY;
        for _ in 0..n {
            let mut v = [0.0; 4];
            input.read_f64_into::<LittleEndian>(&mut v).map_err(truncated)?;
            if v[0] < last {
                return Err(IoError::Format(format!(
                    "{}: scan {} has decreasing point time offsets",
                    self.path.display(),
                    self.index
                )));
            }
            last = v[0];
            points.push((v[0], Vector3::new(v[1], v[2], v[3])));
        }
        let scan = ScanRecord { start_time, points };
        if let Some((a, b)) = self.imu_span {
            let end = scan.end_time();
            if scan.start_time < a - 1e-9 || end > b + 1e-9 {
                return Err(IoError::Format(format!(
                    "{}: scan {} spans [{}, {}] but IMU data covers [{a}, {b}]",
                    self.path.display(),
                    self.index,
                    scan.start_time,
                    end
                )));
            }
        }
        self.index += 1;
        Ok(Some(scan))
    }
}

impl Iterator for ScanReader {
    type Item = Result<ScanRecord, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.read_scan() {
            Ok(Some(s)) => Some(Ok(s)),
            Ok(None) => None,
            Err(e) => {
                self.input = None;
                Some(Err(e))
            }
        }
    }
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "# t gx gy gz ax ay az")?;
        for s in samples {
            writeln!(
                w,
                "{} {} {} {} {} {} {}",
                s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
            )?;
        }
        w.flush()
    };
    run(&mut w).map_err(|e| io_err(path, e))
}

/// Reads `imu.txt`. Blank lines and `#` comments are skipped; timestamps must strictly increase.
pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, IoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let shown = path.display().to_string();
    let mut out: Vec<ImuSample> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let lineno = i + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals: Vec<f64> = body
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::Parse {
                path: shown.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
        if vals.len() != 7 || vals.iter().any(|v| !v.is_finite()) {
            return Err(IoError::Parse {
                path: shown,
                line: lineno,
                message: format!("expected 7 finite numbers, got {}", vals.len()),
            });
        }
        let s = ImuSample::new(
            vals[0],
            Vector3::new(vals[1], vals[2], vals[3]),
            Vector3::new(vals[4], vals[5], vals[6]),
        );
        if out.last().is_some_and(|p| !(s.t > p.t)) {
            return Err(IoError::TimeOrder {
                path: shown,
                line: lineno,
            });
        }
        out.push(s);
    }
    Ok(out)
}

/// Opens a dataset directory: the IMU stream is loaded, scans are streamed.
pub fn read_dataset(dir: &Path) -> Result<(ScanReader, Vec<ImuSample>), IoError> {
    let imu = read_imu(&dir.join(IMU_FILE))?;
    let mut reader = ScanReader::open(&dir.join(SCANS_FILE))?;
    if let (Some(a), Some(b)) = (imu.first(), imu.last()) {
        reader = reader.with_imu_span(a.t, b.t);
    }
    Ok((reader, imu))
}
