//! Command-line entry points: `simulate`, `run`, `eval` and `export-map`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use crate::error::{Error, IoError};
use crate::geom::{ate_rmse, Pose};
use crate::io::{
    export_map, read_dataset, read_keyframes, read_trajectory, write_imu, write_keyframes, write_trajectory,
    RunConfig, ScanWriter, GROUND_TRUTH_FILE, IMU_FILE, SCANS_FILE,
};
use crate::pipeline::{Pipeline, ScanOutcome};
use crate::sim::Simulation;

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const LOG_FILE: &str = "run_log.csv";
pub const KEYFRAMES_FILE: &str = "keyframes.bin";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "lio", version, about = "LiDAR-inertial odometry on normal clouds")]
pub struct Cli {
    /// Run on a single thread; output is identical either way, this only pins scheduling.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a simulated dataset (scans, IMU, ground truth) to a directory.
    Simulate {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Runs odometry and mapping over a dataset directory.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Prints the ATE RMSE of an estimated trajectory against a reference (TUM files).
    Eval {
        estimate: PathBuf,
        reference: PathBuf,
    },
    /// Writes the keyframe map of a `run` output directory as PLY.
    ExportMap {
        /// Output directory of `run`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        voxel: f64,
    },
}

/// Files written by a command; removed again unless the command completes.
struct Outputs {
    created_dir: Option<PathBuf>,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn in_dir(dir: &Path) -> Result<Self, Error> {
        let created_dir = if dir.exists() {
            None
        } else {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            Some(dir.to_path_buf())
        };
        Ok(Self {
            created_dir,
            files: Vec::new(),
            committed: false,
        })
    }

    fn file(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if let Some(d) = &self.created_dir {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
    .into()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

pub fn simulate(preset: &str, seed: u64, output: &Path, config: &RunConfig) -> Result<usize, Error> {
    let mut outputs = Outputs::in_dir(output)?;
    let sim = Simulation::from_preset(preset, &config.simulation(seed))?;
    write_imu(&outputs.file(output.join(IMU_FILE)), &sim.imu)?;
    write_trajectory(&outputs.file(output.join(GROUND_TRUTH_FILE)), &sim.ground_truth())?;
    let config_path = outputs.file(output.join(CONFIG_FILE));
    std::fs::write(&config_path, config.to_toml()).map_err(|e| io_error(&config_path, e))?;
    let mut writer = ScanWriter::create(&outputs.file(output.join(SCANS_FILE)))?;
    let mut count = 0;
    for scan in sim {
        writer.write(&scan)?;
        count += 1;
    }
    writer.finish()?;
    outputs.commit();
    Ok(count)
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scans: usize,
    pub skipped: usize,
    pub keyframes: usize,
    pub loops_accepted: usize,
    pub loops_rejected: usize,
}

fn log_line(out: &ScanOutcome) -> String {
    let (loop_target, loop_result) = match &out.loop_event {
        Some(e) => (
            e.target.to_string(),
            e.rejection.map_or("accepted", |r| r.reason()).to_string(),
        ),
        None => (String::new(), String::new()),
    };
    format!(
        "{:.9},{},{},{:.6},{:.6},{},{},{},{}",
        out.time,
        u8::from(out.skipped),
        out.correspondences,
        out.mean_residual,
        out.lambda_min,
        u8::from(out.degenerate),
        out.keyframe.map_or_else(String::new, |k| k.to_string()),
        loop_target,
        loop_result
    )
}

pub fn run(dataset: &Path, output: &Path, config: &RunConfig) -> Result<RunSummary, Error> {
    let (scans, imu) = read_dataset(dataset)?;
    let mut outputs = Outputs::in_dir(output)?;
    let log_path = outputs.file(output.join(LOG_FILE));
    let file = File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut log = BufWriter::new(file);
    writeln!(
        log,
        "time,skipped,correspondences,mean_residual,lambda_min,degenerate,keyframe,loop_target,loop_result"
    )
    .map_err(|e| io_error(&log_path, e))?;

    let mut pipeline = Pipeline::new(config.pipeline(), imu)?;
    let mut summary = RunSummary {
        scans: 0,
        skipped: 0,
        keyframes: 0,
        loops_accepted: 0,
        loops_rejected: 0,
    };
    for scan in scans {
        let out = pipeline.process_scan(&scan?)?;
        summary.scans += 1;
        summary.skipped += usize::from(out.skipped);
        if let Some(e) = &out.loop_event {
            if e.rejection.is_some() {
                summary.loops_rejected += 1;
            } else {
                summary.loops_accepted += 1;
            }
        }
        writeln!(log, "{}", log_line(&out)).map_err(|e| io_error(&log_path, e))?;
    }
    log.flush().map_err(|e| io_error(&log_path, e))?;
    summary.keyframes = pipeline.keyframes().len();
    write_trajectory(&outputs.file(output.join(TRAJECTORY_FILE)), &pipeline.trajectory())?;
    write_keyframes(&outputs.file(output.join(KEYFRAMES_FILE)), pipeline.keyframes())?;
    outputs.commit();
    Ok(summary)
}

pub fn eval(estimate: &Path, reference: &Path) -> Result<f64, Error> {
    let est = read_trajectory(estimate)?;
    let reference_traj = read_trajectory(reference)?;
    if est.len() != reference_traj.len() {
        return Err(IoError::Format(format!(
            "trajectory lengths differ: {} poses in {}, {} in {}",
            est.len(),
            estimate.display(),
            reference_traj.len(),
            reference.display()
        ))
        .into());
    }
    if let Some(((a, _), (b, _))) = est.iter().zip(&reference_traj).find(|((a, _), (b, _))| (a - b).abs() > 1e-6) {
        return Err(IoError::Format(format!("timestamps differ: {a} vs {b}")).into());
    }
    let e: Vec<Pose> = est.iter().map(|(_, p)| *p).collect();
    let r: Vec<Pose> = reference_traj.iter().map(|(_, p)| *p).collect();
    Ok(ate_rmse(&e, &r)?)
}

pub fn export(run_dir: &Path, output: &Path, voxel: f64) -> Result<usize, Error> {
    let keyframes = read_keyframes(&run_dir.join(KEYFRAMES_FILE))?;
    let result = export_map(&keyframes, voxel, output);
    if result.is_err() {
        let _ = std::fs::remove_file(output);
    }
    Ok(result?.len())
}

/// Runs one parsed command.
pub fn main_with(cli: Cli) -> Result<(), Error> {
    if cli.deterministic {
        // Ignore the error if a pool already exists (only possible when embedded).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match cli.command {
        Command::Simulate {
            preset,
            seed,
            output,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let n = simulate(&preset, seed, &output, &cfg)?;
            println!("wrote {n} scans of `{preset}` (seed {seed}) to {}", output.display());
        }
        Command::Run {
            dataset,
            output,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let s = run(&dataset, &output, &cfg)?;
            info!("run finished: {s:?}");
            println!(
                "{} scans ({} skipped), {} keyframes, {} loops accepted, {} rejected; output in {}",
                s.scans,
                s.skipped,
                s.keyframes,
                s.loops_accepted,
                s.loops_rejected,
                output.display()
            );
        }
        Command::Eval { estimate, reference } => {
            let rmse = eval(&estimate, &reference)?;
            println!("ATE RMSE: {rmse:.6} m");
        }
        Command::ExportMap { run, output, voxel } => {
            let n = export(&run, &output, voxel)?;
            println!("wrote {n} points to {}", output.display());
        }
    }
    Ok(())
}
