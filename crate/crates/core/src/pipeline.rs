//! The odometry and mapping loop: one call per LiDAR scan.
//!
//! Each scan is deskewed with the gyro, projected, turned into a normal cloud
//! and registered against a submap of recent keyframes, starting from an IMU
//! prediction. When the pose has moved far enough a keyframe is inserted with a
//! relative factor (covariance from the degeneracy analysis), an IMU factor and
//! a bias random-walk factor, one loop closure is attempted, and the whole graph
//! is re-optimized.
//!
//! LiDAR and IMU frames are taken to coincide.

use log::{debug, info, warn};
use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3};

use crate::cloud::{Frame, NormalCloud};
use crate::degeneracy::{analyze, measurement_covariance, normal_covariance, DegeneracyParams};
use crate::error::{Error, ImuError, RegistrationError};
use crate::geom::{voxel_downsample, Pose};
use crate::imu::{bootstrap_gravity, deskew, preintegrate, ImuBias, ImuBuffer, ImuNoise, ImuSample, NavState};
use crate::io::ScanRecord;
use crate::loop_closure::{close_loop, find_candidate, LoopParams, LoopRejection};
use crate::pose_graph::{
    should_insert_keyframe, BetweenPoses, BiasBetween, BiasPrior, FactorGraph, ImuFactor, KeyframePolicy, LmParams,
    PosePrior, VelocityPrior,
};
use crate::range_image::{compute_normals, project, NormalParams, ProjectionParams};
use crate::registration::{build_submap, register_indexed, Keyframe, RegistrationParams, SubmapIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub projection: ProjectionParams,
    pub normal_window: usize,
    pub voxel: f64,
    /// Keyframe clouds are stored downsampled at this size.
    pub keyframe_voxel: f64,
    /// Submap spans the last `submap_length + 1` keyframes.
    pub submap_length: usize,
    pub registration: RegistrationParams,
    pub degeneracy: DegeneracyParams,
    pub keyframe: KeyframePolicy,
    pub loop_closure: LoopParams,
    pub loop_enabled: bool,
    pub imu_noise: ImuNoise,
    /// Stationary interval at the start of the IMU stream, seconds.
    pub bootstrap_duration: f64,
    pub lm: LmParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            projection: ProjectionParams {
                fov_max: 22.5f64.to_radians(),
                fov_min: -22.5f64.to_radians(),
                height: 64,
                width: 1024,
            },
            normal_window: 5,
            voxel: 0.2,
            keyframe_voxel: 0.1,
            submap_length: 10,
            registration: RegistrationParams::default(),
            degeneracy: DegeneracyParams::default(),
            keyframe: KeyframePolicy::default(),
            loop_closure: LoopParams::default(),
            loop_enabled: true,
            imu_noise: ImuNoise::default(),
            bootstrap_duration: 1.0,
            lm: LmParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopEvent {
    pub current: usize,
    pub target: usize,
    /// `None` when accepted.
    pub rejection: Option<LoopRejection>,
}

/// What happened to one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub time: f64,
    pub pose: Pose,
    pub skipped: bool,
    pub correspondences: usize,
    pub mean_residual: f64,
    pub lambda_min: f64,
    pub degenerate: bool,
    pub degenerate_axis: Vector3<f64>,
    pub keyframe: Option<usize>,
    pub loop_event: Option<LoopEvent>,
}

/// Pose of a scan relative to the keyframe it was registered against.
#[derive(Debug, Clone, Copy)]
struct Anchored {
    time: f64,
    keyframe: usize,
    relative: Pose,
}

pub struct Pipeline {
    config: PipelineConfig,
    normal_params: NormalParams,
    imu: ImuBuffer,
    gravity: Vector3<f64>,
    graph: FactorGraph,
    keyframes: Vec<Keyframe>,
    submap: Option<SubmapIndex>,
    /// Estimate at the previous scan start, with IMU-propagated velocity.
    last: Option<NavState>,
    last_time: f64,
    initial: NavState,
    trajectory: Vec<Anchored>,
    loop_events: Vec<LoopEvent>,
}

impl Pipeline {
    /// Bootstraps gravity, attitude and gyro bias from the first `bootstrap_duration` of IMU data.
    pub fn new(config: PipelineConfig, imu: Vec<ImuSample>) -> Result<Self, Error> {
        config
            .projection
            .validate()
            .map_err(Error::RangeImage)?;
        let normal_params = NormalParams::new(config.normal_window)?;
        let imu = ImuBuffer::from_samples(imu)?;
        let start = imu.start_time().ok_or(ImuError::TooFewSamples(0))?;
        let window: Vec<ImuSample> = imu
            .samples()
            .iter()
            .take_while(|s| s.t <= start + config.bootstrap_duration)
            .copied()
            .collect();
        let boot = bootstrap_gravity(&window)?;
        info!(
            "bootstrap: |g| = {:.4} m/s², gyro bias = [{:.2e}, {:.2e}, {:.2e}]",
            -boot.gravity.z, boot.gyro_bias.x, boot.gyro_bias.y, boot.gyro_bias.z
        );
        let initial = NavState::new(
            Pose::new(boot.attitude, Vector3::zeros()),
            Vector3::zeros(),
            ImuBias::new(Vector3::zeros(), boot.gyro_bias),
        );
        Ok(Self {
            config,
            normal_params,
            imu,
            gravity: boot.gravity,
            graph: FactorGraph::new(),
            keyframes: Vec::new(),
            submap: None,
            last: None,
            last_time: start,
            initial,
            trajectory: Vec::new(),
            loop_events: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn loop_events(&self) -> &[LoopEvent] {
        &self.loop_events
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    /// Every processed scan's pose, re-anchored on the latest keyframe estimates.
    pub fn trajectory(&self) -> Vec<(f64, Pose)> {
        self.trajectory
            .iter()
            .map(|a| (a.time, self.keyframes[a.keyframe].pose.compose(&a.relative)))
            .collect()
    }

    /// Deskewed, projected normal cloud of a scan, in the sensor frame at its start time.
    pub fn normal_cloud(&self, scan: &ScanRecord, bias: &ImuBias) -> Result<NormalCloud, Error> {
        let deskewed = deskew(scan.start_time, &scan.points, &self.imu, bias, &Rotation3::identity())?;
        let image = project(&deskewed.points, &self.config.projection);
        Ok(compute_normals(&image, &self.normal_params))
    }

    fn last_keyframe_state(&self) -> Option<&NavState> {
        self.keyframes.last().and_then(|k| self.graph.state(k.id))
    }

    pub fn process_scan(&mut self, scan: &ScanRecord) -> Result<ScanOutcome, Error> {
        let t0 = scan.start_time;
        let bias = self.last_keyframe_state().map_or(self.initial.bias, |s| s.bias);
        let cloud = self.normal_cloud(scan, &bias)?;
        let query = voxel_downsample(&cloud, self.config.voxel);

        let Some(prev) = self.last else {
            return self.initialize(t0, cloud);
        };
        let predicted = self.predict(&prev, t0)?;
        let kf = self.keyframes.last().expect("initialized").clone();
        let registration = self.config.registration;
        let index = self.submap_index()?;
        let init = predicted.pose.inverse().compose(&kf.pose);
        let result = match register_indexed(&query, index, &init, &registration) {
            Ok(r) => r,
            Err(e @ RegistrationError::InsufficientOverlap { .. }) => {
                warn!("scan at {t0:.3}: {e}; propagating with the IMU only");
                return Ok(self.skip(t0, predicted));
            }
            Err(e) => return Err(e.into()),
        };
        let pose = kf.pose.compose(&result.pose.inverse());
        let report = analyze(&normal_covariance(&result.correspondences)?, self.config.degeneracy.lambda_threshold)?;
        let state = NavState::new(pose, predicted.velocity, predicted.bias);
        self.last = Some(state);
        self.last_time = t0;
        self.trajectory.push(Anchored {
            time: t0,
            keyframe: kf.id,
            relative: result.pose.inverse(),
        });
        let mut outcome = ScanOutcome {
            time: t0,
            pose,
            skipped: false,
            correspondences: result.correspondences.len(),
            mean_residual: result.mean_residual,
            lambda_min: report.eigenvalues[0],
            degenerate: report.degenerate,
            degenerate_axis: pose.rotate(&report.axis()),
            keyframe: None,
            loop_event: None,
        };
        debug!(
            "scan {t0:.3}: {} pairs, residual {:.4}, λ₀ {:.4}{}",
            outcome.correspondences,
            outcome.mean_residual,
            outcome.lambda_min,
            if report.degenerate { " (degenerate)" } else { "" }
        );

        if should_insert_keyframe(&pose, &kf.pose, &self.config.keyframe) {
            let q = measurement_covariance(&report, &self.config.degeneracy);
            let id = self.insert_keyframe(t0, state, cloud, &kf, result.pose.inverse(), q)?;
            outcome.keyframe = Some(id);
            if self.config.loop_enabled {
                outcome.loop_event = self.try_loop(id, &query)?;
            }
            self.graph.optimize(&self.config.lm)?;
            self.refresh_from_graph();
            outcome.pose = self.keyframes[id].pose;
        }
        Ok(outcome)
    }

    fn initialize(&mut self, t0: f64, cloud: NormalCloud) -> Result<ScanOutcome, Error> {
        // IMU before the first scan only refines the state at rest.
        let state = NavState {
            pose: self.initial.pose,
            ..self.initial
        };
        let id = self.graph.add_node(state);
        let rp = 1e-3f64;
        let prior_cov = Matrix6::from_diagonal(&nalgebra::Vector6::new(rp * rp, rp * rp, 1.0, 1e-6, 1e-6, 1e-6));
        self.graph.add_factor(Box::new(PosePrior {
            node: id,
            pose: state.pose,
            covariance: prior_cov,
        }))?;
        self.graph.add_factor(Box::new(VelocityPrior {
            node: id,
            velocity: Vector3::zeros(),
            covariance: Matrix3::identity() * 1e-4,
        }))?;
        let bias_cov = Matrix6::from_diagonal(&nalgebra::Vector6::new(1e-2, 1e-2, 1e-2, 1e-4, 1e-4, 1e-4));
        self.graph.add_factor(Box::new(BiasPrior {
            node: id,
            bias: state.bias,
            covariance: bias_cov,
        }))?;
        self.keyframes.push(Keyframe {
            id,
            timestamp: t0,
            pose: state.pose,
            cloud: voxel_downsample(&cloud, self.config.keyframe_voxel),
        });
        self.submap = None;
        self.last = Some(state);
        self.last_time = t0;
        self.trajectory.push(Anchored {
            time: t0,
            keyframe: id,
            relative: Pose::identity(),
        });
        Ok(ScanOutcome {
            time: t0,
            pose: state.pose,
            skipped: false,
            correspondences: 0,
            mean_residual: 0.0,
            lambda_min: f64::NAN,
            degenerate: false,
            degenerate_axis: Vector3::zeros(),
            keyframe: Some(id),
            loop_event: None,
        })
    }

    /// IMU propagation from the previous scan; velocity is carried by the IMU chain.
    fn predict(&self, prev: &NavState, t: f64) -> Result<NavState, Error> {
        let samples = self.imu.slice(self.last_time, t)?;
        if samples.len() < 2 {
            return Ok(*prev);
        }
        let pim = preintegrate(&samples, &prev.bias, &self.config.imu_noise)?;
        Ok(pim.predict(prev, &self.gravity))
    }

    fn skip(&mut self, t0: f64, predicted: NavState) -> ScanOutcome {
        let kf = self.keyframes.last().expect("initialized");
        self.last = Some(predicted);
        self.last_time = t0;
        self.trajectory.push(Anchored {
            time: t0,
            keyframe: kf.id,
            relative: kf.pose.between(&predicted.pose),
        });
        ScanOutcome {
            time: t0,
            pose: predicted.pose,
            skipped: true,
            correspondences: 0,
            mean_residual: f64::NAN,
            lambda_min: f64::NAN,
            degenerate: false,
            degenerate_axis: Vector3::zeros(),
            keyframe: None,
            loop_event: None,
        }
    }

    fn submap_index(&mut self) -> Result<&SubmapIndex, Error> {
        if self.submap.is_none() {
            let n = self.keyframes.len();
            let first = n.saturating_sub(self.config.submap_length + 1);
            let cloud = build_submap(&self.keyframes[first..], self.config.voxel)?;
            self.submap = Some(SubmapIndex::new(cloud));
        }
        Ok(self.submap.as_ref().expect("just built"))
    }

    fn insert_keyframe(
        &mut self,
        t0: f64,
        state: NavState,
        cloud: NormalCloud,
        prev: &Keyframe,
        measured: Pose,
        covariance: Matrix6<f64>,
    ) -> Result<usize, Error> {
        let prev_state = *self.graph.state(prev.id).expect("keyframe node");
        let id = self.graph.add_node(NavState {
            bias: prev_state.bias,
            ..state
        });
        self.graph.add_factor(Box::new(BetweenPoses {
            from: prev.id,
            to: id,
            measured,
            covariance,
            loop_closure: false,
        }))?;
        let samples = self.imu.slice(prev.timestamp, t0)?;
        let pim = preintegrate(&samples, &prev_state.bias, &self.config.imu_noise)?;
        self.graph.add_factor(Box::new(ImuFactor {
            from: prev.id,
            to: id,
            preintegrated: pim,
            gravity: self.gravity,
        }))?;
        self.graph.add_factor(Box::new(BiasBetween {
            from: prev.id,
            to: id,
            dt: t0 - prev.timestamp,
            noise: self.config.imu_noise,
        }))?;
        self.keyframes.push(Keyframe {
            id,
            timestamp: t0,
            pose: state.pose,
            cloud: voxel_downsample(&cloud, self.config.keyframe_voxel),
        });
        Ok(id)
    }

    fn try_loop(&mut self, id: usize, query: &NormalCloud) -> Result<Option<LoopEvent>, Error> {
        let lp = &self.config.loop_closure;
        let poses: Vec<Pose> = self.keyframes.iter().map(|k| k.pose).collect();
        let Some(candidate) = find_candidate(&poses, id, lp.exclusion_count, lp.radius) else {
            return Ok(None);
        };
        let current = &self.keyframes[id];
        let target = &self.keyframes[candidate.target];
        let event = match close_loop(current, query, target, &self.config.projection, lp) {
            Ok(factor) => {
                info!("loop {} -> {} accepted ({} matches)", factor.current, factor.target, factor.matches);
                self.graph.add_factor(Box::new(BetweenPoses {
                    from: factor.target,
                    to: factor.current,
                    measured: factor.relative,
                    covariance: factor.covariance,
                    loop_closure: true,
                }))?;
                LoopEvent {
                    current: id,
                    target: candidate.target,
                    rejection: None,
                }
            }
            Err(reason) => {
                debug!("loop {} -> {} rejected: {}", id, candidate.target, reason.reason());
                LoopEvent {
                    current: id,
                    target: candidate.target,
                    rejection: Some(reason),
                }
            }
        };
        self.loop_events.push(event);
        Ok(Some(event))
    }

    /// Pulls optimized keyframe poses back and re-bases the running estimate.
    fn refresh_from_graph(&mut self) {
        for kf in &mut self.keyframes {
            kf.pose = self.graph.state(kf.id).expect("keyframe node").pose;
        }
        let last = *self.last_keyframe_state().expect("keyframe node");
        self.last = Some(last);
        self.last_time = self.keyframes.last().expect("keyframe").timestamp;
        self.submap = None;
    }

    /// Builds the keyframe cloud map in the world frame.
    pub fn world_map(&self) -> NormalCloud {
        let points = self
            .keyframes
            .iter()
            .flat_map(|k| k.cloud.iter().map(move |p| p.transformed(&k.pose)))
            .collect();
        NormalCloud::new(points, Frame::World)
    }
}
