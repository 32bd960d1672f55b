//! Runs the odometry pipeline on a simulated preset and reports trajectory error.
//!
//! `cargo run --release --example run_preset -- loop_course 32 512 60`

use std::time::Instant;

use lio_core::geom::ate_rmse;
use lio_core::pipeline::{Pipeline, PipelineConfig};
use lio_core::sim::{LidarModel, SimConfig, Simulation};

fn env_or(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map_or("room", String::as_str);
    let channels = args.get(1).map_or(Ok(32), |s| s.parse())?;
    let samples = args.get(2).map_or(Ok(512), |s| s.parse())?;
    let max_duration = args.get(3).map(|s| s.parse()).transpose()?;
    let lidar = LidarModel {
        channels,
        samples,
        ..LidarModel::default()
    };
    let sim = Simulation::from_preset(preset, &SimConfig { lidar, max_duration, ..SimConfig::default() })?;
    let truth = sim.ground_truth();
    let mut config = PipelineConfig {
        projection: lidar.projection(),
        normal_window: if channels <= 32 { 3 } else { 5 },
        voxel: env_or("LIO_VOXEL", 0.2),
        keyframe_voxel: env_or("LIO_KF_VOXEL", 0.1),
        ..PipelineConfig::default()
    };
    config.degeneracy.scale = env_or("LIO_SCALE", config.degeneracy.scale);
    config.loop_closure.degeneracy.scale = config.degeneracy.scale;
    let mut pipeline = Pipeline::new(config, sim.imu.clone())?;
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut anchor = None;
    for (scan, (_, gt)) in sim.zip(&truth) {
        let out = pipeline.process_scan(&scan)?;
        // The estimate starts at the origin; compare in the first scan's frame.
        let anchor = *anchor.get_or_insert(out.pose.compose(&gt.inverse()));
        let err = out.pose.distance_to(&anchor.compose(gt));
        worst = worst.max(err);
        let dz = out.pose.translation.z - anchor.compose(gt).translation.z;
        if out.keyframe.is_some() || out.skipped || out.loop_event.is_some() || err > 0.3 {
            println!(
                "t {:7.2} err {:.3} dz {dz:+.3} pairs {:5} λ₀ {:.3} ax {:.2?} kf {:?} skip {} loop {:?}",
                out.time, err, out.correspondences, out.lambda_min, out.degenerate_axis.as_slice(), out.keyframe, out.skipped, out.loop_event
            );
        }
    }
    let elapsed = start.elapsed();
    let est: Vec<_> = pipeline.trajectory().into_iter().map(|(_, p)| p).collect();
    let gt: Vec<_> = truth.iter().map(|(_, p)| *p).collect();
    let (_, last_gt) = truth[est.len() - 1];
    let anchor = est[0].compose(&gt[0].inverse());
    println!("final dz {:+.3}", est.last().unwrap().translation.z - anchor.compose(&last_gt).translation.z);
    println!(
        "{preset}: {} scans in {elapsed:?}, ATE {:.4} m, worst online {worst:.3} m, final {:.3} m, {} keyframes",
        est.len(),
        ate_rmse(&est, &gt)?,
        est.last().unwrap().distance_to(&est[0].compose(&gt[0].inverse()).compose(gt.last().unwrap())),
        pipeline.keyframes().len()
    );
    Ok(())
}
