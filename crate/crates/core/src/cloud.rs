//! Normal points and normal clouds, the currency of registration and mapping.

use nalgebra::Vector3;

use crate::geom::Pose;

/// A 3D point with a unit surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPoint {
    pub position: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl NormalPoint {
    pub fn new(position: Vector3<f64>, normal: Vector3<f64>) -> Self {
        Self { position, normal }
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            position: pose.transform_point(&self.position),
            normal: pose.rotate(&self.normal),
        }
    }
}

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Frame {
    #[default]
    Sensor,
    Keyframe,
    World,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormalCloud {
    pub points: Vec<NormalPoint>,
    pub frame: Frame,
}

impl NormalCloud {
    pub fn new(points: Vec<NormalPoint>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, NormalPoint> {
        self.points.iter()
    }

    pub fn positions(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.points.iter().map(|p| p.position)
    }

    /// Applies `pose` to every point and normal, tagging the result with `frame`.
    pub fn transformed(&self, pose: &Pose, frame: Frame) -> Self {
        Self {
            points: self.points.iter().map(|p| p.transformed(pose)).collect(),
            frame,
        }
    }
}

impl FromIterator<NormalPoint> for NormalCloud {
    fn from_iter<I: IntoIterator<Item = NormalPoint>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect(), Frame::Sensor)
    }
}
