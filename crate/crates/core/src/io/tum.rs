//! TUM trajectory files: `t x y z qx qy qz qw`, one pose per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::io_err;
use crate::error::IoError;
use crate::geom::Pose;

/// `printf("%.9g")`: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    let x = x + 0.0; // folds −0 into +0
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn format_tum_line(t: f64, pose: &Pose) -> String {
    let q = pose.quaternion();
    let p = pose.translation;
    let fields = [p.x, p.y, p.z, q[0], q[1], q[2], q[3]].map(format_sig9);
    format!("{:.9} {}", t, fields.join(" "))
}

pub fn write_trajectory(path: &Path, poses: &[(f64, Pose)]) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        for (t, pose) in poses {
            writeln!(w, "{}", format_tum_line(*t, pose))?;
        }
        w.flush()
    };
    run(&mut w).map_err(|e| io_err(path, e))
}

/// Reads a TUM file; quaternions are normalized, `#` comments and blank lines skipped.
pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, Pose)>, IoError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let shown = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |message: String| IoError::Parse {
            path: shown.clone(),
            line: i + 1,
            message,
        };
        let v: Vec<f64> = body
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<Result<_, _>>()
            .map_err(|e| parse_err(e.to_string()))?;
        if v.len() != 8 || v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(format!("expected 8 finite numbers, got {}", v.len())));
        }
        let qn = (v[4] * v[4] + v[5] * v[5] + v[6] * v[6] + v[7] * v[7]).sqrt();
        if qn < 1e-12 {
            return Err(parse_err("zero quaternion".into()));
        }
        out.push((v[0], Pose::from_quaternion([v[4], v[5], v[6], v[7]], Vector3::new(v[1], v[2], v[3]))));
    }
    Ok(out)
}
