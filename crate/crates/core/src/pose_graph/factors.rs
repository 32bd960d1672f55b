//! Factor types. Each factor names the variables it touches and evaluates an
//! unwhitened residual; the graph handles whitening and differentiation.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3};

use crate::geom::{se3_log, Pose};
use crate::imu::{ImuBias, ImuNoise, NavState, PreintegratedImu};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    /// 6 dof, retraction `(R·Exp(δθ), p + R·δp)`.
    Pose,
    /// 3 dof, additive.
    Velocity,
    /// 6 dof `(accel, gyro)`, additive.
    Bias,
}

impl VarKind {
    pub fn dof(self) -> usize {
        match self {
            VarKind::Pose | VarKind::Bias => 6,
            VarKind::Velocity => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variable {
    pub node: usize,
    pub kind: VarKind,
}

impl Variable {
    pub fn pose(node: usize) -> Self {
        Self { node, kind: VarKind::Pose }
    }
    pub fn velocity(node: usize) -> Self {
        Self {
            node,
            kind: VarKind::Velocity,
        }
    }
    pub fn bias(node: usize) -> Self {
        Self { node, kind: VarKind::Bias }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    PosePrior,
    VelocityPrior,
    BiasPrior,
    Relative,
    Loop,
    Imu,
    BiasBetween,
}

/// A measurement constraint over a few graph variables.
pub trait Factor: Debug + Send + Sync {
    fn kind(&self) -> FactorKind;
    /// Variables the residual depends on; nodes may repeat across kinds.
    fn variables(&self) -> Vec<Variable>;
    fn dim(&self) -> usize;
    /// Unwhitened residual. `states[k]` is the state of `variables()[k].node`.
    fn residual(&self, states: &[NavState]) -> DVector<f64>;
    fn covariance(&self) -> DMatrix<f64>;
}

/// Moves one variable of `state` along `delta` (length = its dof).
pub fn retract(state: &mut NavState, kind: VarKind, delta: &[f64]) {
    match kind {
        VarKind::Pose => {
            let tw = nalgebra::Vector6::from_column_slice(delta);
            let dtheta = Vector3::new(tw[0], tw[1], tw[2]);
            let dp = Vector3::new(tw[3], tw[4], tw[5]);
            let r = state.pose.rotation;
            let mut rot = r * crate::geom::so3_exp(&dtheta);
            rot.renormalize();
            state.pose = Pose::new(rot, state.pose.translation + r * dp);
        }
        VarKind::Velocity => state.velocity += Vector3::from_column_slice(delta),
        VarKind::Bias => {
            state.bias.accel += Vector3::from_column_slice(&delta[..3]);
            state.bias.gyro += Vector3::from_column_slice(&delta[3..]);
        }
    }
}

fn dvec6(v: nalgebra::Vector6<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn dmat<const R: usize>(m: &nalgebra::SMatrix<f64, R, R>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, R, m.as_slice())
}

/// Anchors a pose: residual `log(Z⁻¹·T)`, body-frame `(rot, trans)` covariance.
#[derive(Debug, Clone)]
pub struct PosePrior {
    pub node: usize,
    pub pose: Pose,
    pub covariance: Matrix6<f64>,
}

impl Factor for PosePrior {
    fn kind(&self) -> FactorKind {
        FactorKind::PosePrior
    }
    fn variables(&self) -> Vec<Variable> {
        vec![Variable::pose(self.node)]
    }
    fn dim(&self) -> usize {
        6
    }
    fn residual(&self, s: &[NavState]) -> DVector<f64> {
        dvec6(se3_log(&self.pose.inverse().compose(&s[0].pose)))
    }
    fn covariance(&self) -> DMatrix<f64> {
        dmat(&self.covariance)
    }
}

#[derive(Debug, Clone)]
pub struct VelocityPrior {
    pub node: usize,
    pub velocity: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

impl Factor for VelocityPrior {
    fn kind(&self) -> FactorKind {
        FactorKind::VelocityPrior
    }
    fn variables(&self) -> Vec<Variable> {
        vec![Variable::velocity(self.node)]
    }
    fn dim(&self) -> usize {
        3
    }
    fn residual(&self, s: &[NavState]) -> DVector<f64> {
        DVector::from_column_slice((s[0].velocity - self.velocity).as_slice())
    }
    fn covariance(&self) -> DMatrix<f64> {
        dmat(&self.covariance)
    }
}

fn bias_vec(b: &ImuBias) -> DVector<f64> {
    DVector::from_iterator(6, b.accel.iter().chain(b.gyro.iter()).copied())
}

#[derive(Debug, Clone)]
pub struct BiasPrior {
    pub node: usize,
    pub bias: ImuBias,
    /// Ordered (accel, gyro).
    pub covariance: Matrix6<f64>,
}

impl Factor for BiasPrior {
    fn kind(&self) -> FactorKind {
        FactorKind::BiasPrior
    }
    fn variables(&self) -> Vec<Variable> {
        vec![Variable::bias(self.node)]
    }
    fn dim(&self) -> usize {
        6
    }
    fn residual(&self, s: &[NavState]) -> DVector<f64> {
        bias_vec(&s[0].bias) - bias_vec(&self.bias)
    }
    fn covariance(&self) -> DMatrix<f64> {
        dmat(&self.covariance)
    }
}

/// Relative pose `Z ≈ T_i⁻¹·T_j`, residual `log(Z⁻¹·T_i⁻¹·T_j)` in frame `j`.
#[derive(Debug, Clone)]
pub struct BetweenPoses {
    pub from: usize,
    pub to: usize,
    pub measured: Pose,
    /// Ordered (rot, trans).
    pub covariance: Matrix6<f64>,
    pub loop_closure: bool,
}

impl Factor for BetweenPoses {
    fn kind(&self) -> FactorKind {
        if self.loop_closure {
            FactorKind::Loop
        } else {
            FactorKind::Relative
        }
    }
    fn variables(&self) -> Vec<Variable> {
        vec![Variable::pose(self.from), Variable::pose(self.to)]
    }
    fn dim(&self) -> usize {
        6
    }
    fn residual(&self, s: &[NavState]) -> DVector<f64> {
        let rel = s[0].pose.between(&s[1].pose);
        dvec6(se3_log(&self.measured.inverse().compose(&rel)))
    }
    fn covariance(&self) -> DMatrix<f64> {
        dmat(&self.covariance)
    }
}

/// Preintegrated IMU between consecutive nodes; deltas corrected at node `i`'s bias.
#[derive(Debug, Clone)]
pub struct ImuFactor {
    pub from: usize,
    pub to: usize,
    pub preintegrated: PreintegratedImu,
    pub gravity: Vector3<f64>,
}

impl Factor for ImuFactor {
    fn kind(&self) -> FactorKind {
        FactorKind::Imu
    }
    fn variables(&self) -> Vec<Variable> {
        vec![
            Variable::pose(self.from),
            Variable::velocity(self.from),
            Variable::bias(self.from),
            Variable::pose(self.to),
            Variable::velocity(self.to),
        ]
    }
    fn dim(&self) -> usize {
        9
    }
    fn residual(&self, s: &[NavState]) -> DVector<f64> {
        let i = NavState::new(s[0].pose, s[1].velocity, s[2].bias);
        let j = NavState::new(s[3].pose, s[4].velocity, s[2].bias);
        let r = self.preintegrated.residual(&i, &j, &self.gravity);
        DVector::from_column_slice(r.as_slice())
    }
    fn covariance(&self) -> DMatrix<f64> {
        dmat(&(self.preintegrated.covariance + crate::imu::Matrix9::identity() * 1e-12))
    }
}

/// Random-walk link between consecutive biases over `dt` seconds.
#[derive(Debug, Clone)]
pub struct BiasBetween {
    pub from: usize,
    pub to: usize,
    pub dt: f64,
    pub noise: ImuNoise,
}

impl Factor for BiasBetween {
    fn kind(&self) -> FactorKind {
        FactorKind::BiasBetween
    }
    fn variables(&self) -> Vec<Variable> {
        vec![Variable::bias(self.from), Variable::bias(self.to)]
    }
    fn dim(&self) -> usize {
        6
    }
    fn residual(&self, s: &[NavState]) -> DVector<f64> {
        bias_vec(&s[1].bias) - bias_vec(&s[0].bias)
    }
    fn covariance(&self) -> DMatrix<f64> {
        let a = self.noise.accel_bias_rw.powi(2) * self.dt;
        let g = self.noise.gyro_bias_rw.powi(2) * self.dt;
        DMatrix::from_diagonal(&DVector::from_column_slice(&[a, a, a, g, g, g]))
    }
}
