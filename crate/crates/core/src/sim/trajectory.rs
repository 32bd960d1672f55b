//! Smooth analytic trajectories with closed-form derivatives.
//!
//! Position and yaw are piecewise quintic Hermite polynomials with zero second
//! derivative at every knot, so the curve is C² and the IMU can be synthesized
//! exactly. Attitude is a pure yaw rotation about world z.

use nalgebra::{Rotation3, Vector3};

use crate::error::SimError;
use crate::geom::Pose;

/// Position and yaw at a knot, with their first derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl Knot {
    /// A knot at rest.
    pub fn at_rest(t: f64, position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            t,
            position,
            velocity: Vector3::zeros(),
            yaw,
            yaw_rate: 0.0,
        }
    }
}

/// Kinematic state of the body at one instant, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// Body-frame angular velocity, rad/s.
    pub angular_velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpline {
    knots: Vec<Knot>,
    end: f64,
}

/// Quintic Hermite basis (value, first and second derivative in `s`) for
/// `p0, v0·T, v1·T, p1`, with both knot accelerations set to zero.
fn basis(s: f64) -> [[f64; 4]; 3] {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    [
        [
            1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5,
            s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5,
            -4.0 * s3 + 7.0 * s4 - 3.0 * s5,
            10.0 * s3 - 15.0 * s4 + 6.0 * s5,
        ],
        [
            -30.0 * s2 + 60.0 * s3 - 30.0 * s4,
            1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4,
            -12.0 * s2 + 28.0 * s3 - 15.0 * s4,
            30.0 * s2 - 60.0 * s3 + 30.0 * s4,
        ],
        [
            -60.0 * s + 180.0 * s2 - 120.0 * s3,
            -36.0 * s + 96.0 * s2 - 60.0 * s3,
            -24.0 * s + 84.0 * s2 - 60.0 * s3,
            60.0 * s - 180.0 * s2 + 120.0 * s3,
        ],
    ]
}

impl TrajectorySpline {
    pub fn new(knots: Vec<Knot>) -> Result<Self, SimError> {
        if knots.len() < 2 {
            return Err(SimError::InvalidParameter("a trajectory needs at least two knots".into()));
        }
        for w in knots.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(SimError::InvalidParameter(format!(
                    "knot times must increase ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        let end = knots[knots.len() - 1].t;
        Ok(Self { knots, end })
    }

    /// Holds `pose` still over `[0, duration]`.
    pub fn stationary(position: Vector3<f64>, yaw: f64, duration: f64) -> Result<Self, SimError> {
        Self::new(vec![Knot::at_rest(0.0, position, yaw), Knot::at_rest(duration, position, yaw)])
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn start_time(&self) -> f64 {
        self.knots[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.end
    }

    /// The same curve, ending at `end` if that is earlier than its last knot.
    pub fn truncated(&self, end: f64) -> Self {
        Self {
            knots: self.knots.clone(),
            end: end.clamp(self.start_time(), self.end),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Kinematics at `t`, clamped to the spline's time span.
    pub fn evaluate(&self, t: f64) -> Kinematics {
        let t = t.clamp(self.start_time(), self.end_time());
        let i = self.knots.partition_point(|k| k.t <= t).clamp(1, self.knots.len() - 1) - 1;
        let (a, b) = (&self.knots[i], &self.knots[i + 1]);
        let span = b.t - a.t;
        let s = (t - a.t) / span;
        let h = basis(s);
        let mix3 = |d: usize| {
            a.position * h[d][0] + a.velocity * (span * h[d][1]) + b.velocity * (span * h[d][2]) + b.position * h[d][3]
        };
        let mix1 = |d: usize| a.yaw * h[d][0] + a.yaw_rate * span * h[d][1] + b.yaw_rate * span * h[d][2] + b.yaw * h[d][3];
        let yaw = mix1(0);
        let yaw_rate = mix1(1) / span;
        Kinematics {
            pose: Pose::new(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), mix3(0)),
            velocity: mix3(1) / span,
            acceleration: mix3(2) / (span * span),
            angular_velocity: Vector3::new(0.0, 0.0, yaw_rate),
        }
    }

    pub fn pose(&self, t: f64) -> Pose {
        self.evaluate(t).pose
    }
}

/// Incremental builder for stop-and-go paths: every move starts and ends at rest.
#[derive(Debug, Clone)]
pub struct PathBuilder {
    knots: Vec<Knot>,
    speed: f64,
    turn_rate: f64,
}

impl PathBuilder {
    /// Starts at rest at `position`, heading `yaw`, and holds still for `hold` seconds.
    pub fn new(position: Vector3<f64>, yaw: f64, hold: f64) -> Self {
        let mut knots = vec![Knot::at_rest(0.0, position, yaw)];
        if hold > 0.0 {
            knots.push(Knot::at_rest(hold, position, yaw));
        }
        Self {
            knots,
            speed: 1.0,
            turn_rate: 0.8,
        }
    }

    /// Mean travel speed for subsequent moves, m/s.
    pub fn speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }

    /// Mean turn rate for subsequent turns, rad/s.
    pub fn turn_rate(mut self, rate: f64) -> Self {
        self.turn_rate = rate;
        self
    }

    fn last(&self) -> Knot {
        self.knots[self.knots.len() - 1]
    }

    /// Straight move to `position` at constant heading.
    pub fn move_to(mut self, position: Vector3<f64>) -> Self {
        let last = self.last();
        let dist = (position - last.position).norm();
        let dt = (dist / self.speed).max(0.5);
        self.knots.push(Knot::at_rest(last.t + dt, position, last.yaw));
        self
    }

    /// Turn in place to `yaw`.
    pub fn turn_to(mut self, yaw: f64) -> Self {
        let last = self.last();
        let dt = ((yaw - last.yaw).abs() / self.turn_rate).max(0.5);
        self.knots.push(Knot::at_rest(last.t + dt, last.position, yaw));
        self
    }

    pub fn hold(mut self, seconds: f64) -> Self {
        let last = self.last();
        self.knots.push(Knot { t: last.t + seconds, ..last });
        self
    }

    pub fn build(self) -> Result<TrajectorySpline, SimError> {
        TrajectorySpline::new(self.knots)
    }
}
