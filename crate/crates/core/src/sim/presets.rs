//! Named scene presets. Each preset owns its geometry and a matching walk-through.
//!
//! Presets are trait objects held in a [`PresetRegistry`]; callers look them up by
//! name, and new scenes can be registered without touching the built-ins.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::Vector3;

use super::scene::Scene;
use super::trajectory::{PathBuilder, TrajectorySpline};
use crate::error::SimError;

/// Sensor height above the walking surface, metres.
pub const SENSOR_HEIGHT: f64 = 1.0;
/// Thickness of shared walls and floor slabs, metres.
pub const WALL_THICKNESS: f64 = 0.2;
/// Stationary lead-in that lets the gravity bootstrap settle, seconds.
pub const BOOTSTRAP_HOLD: f64 = 1.5;

/// Overall extent of a preset; the meaning of each axis is preset-specific.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneDims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl SceneDims {
    pub fn new(length: f64, width: f64, height: f64) -> Self {
        Self { length, width, height }
    }

    fn require(&self, min: SceneDims) -> Result<(), SimError> {
        let ok = [self.length, self.width, self.height].iter().all(|v| v.is_finite())
            && self.length >= min.length
            && self.width >= min.width
            && self.height >= min.height;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidDimensions(format!(
                "{} x {} x {} (minimum {} x {} x {})",
                self.length, self.width, self.height, min.length, min.width, min.height
            )))
        }
    }
}

pub trait ScenePreset: Send + Sync {
    fn name(&self) -> &'static str;
    fn default_dims(&self) -> SceneDims;
    fn build_scene(&self, dims: &SceneDims) -> Result<Scene, SimError>;
    /// A walk-through that starts at rest for at least [`BOOTSTRAP_HOLD`] seconds.
    fn trajectory(&self, dims: &SceneDims) -> Result<TrajectorySpline, SimError>;
}

/// Name-keyed collection of presets.
#[derive(Clone)]
pub struct PresetRegistry {
    presets: BTreeMap<String, Arc<dyn ScenePreset>>,
}

impl Default for PresetRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Room));
        r.register(Arc::new(Corridor));
        r.register(Arc::new(TwoRoom));
        r.register(Arc::new(Stairwell));
        r.register(Arc::new(LoopCourse));
        r
    }
}

impl std::fmt::Debug for PresetRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.presets.keys()).finish()
    }
}

impl PresetRegistry {
    pub fn empty() -> Self {
        Self {
            presets: BTreeMap::new(),
        }
    }

    /// Adds or replaces a preset under its own name.
    pub fn register(&mut self, preset: Arc<dyn ScenePreset>) {
        self.presets.insert(preset.name().to_string(), preset);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ScenePreset>, SimError> {
        self.presets
            .get(name)
            .cloned()
            .ok_or_else(|| SimError::UnknownPreset(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.presets.keys().map(String::as_str)
    }
}

/// Builds a built-in preset's scene, using its default dimensions when `dims` is `None`.
pub fn build_scene(name: &str, dims: Option<SceneDims>) -> Result<Scene, SimError> {
    let preset = PresetRegistry::default().get(name)?;
    preset.build_scene(&dims.unwrap_or_else(|| preset.default_dims()))
}

/// Adds the six inward-facing faces of the box `[min, max]`.
fn add_enclosure(scene: &mut Scene, min: Vector3<f64>, max: Vector3<f64>, room: Option<u32>) -> Result<(), SimError> {
    let d = max - min;
    let (ex, ey, ez) = (Vector3::new(d.x, 0.0, 0.0), Vector3::new(0.0, d.y, 0.0), Vector3::new(0.0, 0.0, d.z));
    scene.add_rect(min, ey, ez, Vector3::x(), room)?;
    scene.add_rect(min + ex, ey, ez, -Vector3::x(), room)?;
    scene.add_rect(min, ex, ez, Vector3::y(), room)?;
    scene.add_rect(min + ey, ex, ez, -Vector3::y(), room)?;
    scene.add_rect(min, ex, ey, Vector3::z(), room)?;
    scene.add_rect(min + ez, ex, ey, -Vector3::z(), room)?;
    Ok(())
}

fn axis_rect(
    scene: &mut Scene,
    min: Vector3<f64>,
    max: Vector3<f64>,
    normal: Vector3<f64>,
    room: Option<u32>,
) -> Result<usize, SimError> {
    // The flat axis is the one the normal points along.
    let d = max - min;
    let axis = normal.iamax();
    let (u, v) = match axis {
        0 => (Vector3::new(0.0, d.y, 0.0), Vector3::new(0.0, 0.0, d.z)),
        1 => (Vector3::new(d.x, 0.0, 0.0), Vector3::new(0.0, 0.0, d.z)),
        _ => (Vector3::new(d.x, 0.0, 0.0), Vector3::new(0.0, d.y, 0.0)),
    };
    scene.add_rect(min, u, v, normal, room)
}

/// Closed box room centred on the origin in x and y, floor at z = 0.
pub struct Room;

impl ScenePreset for Room {
    fn name(&self) -> &'static str {
        "room"
    }

    fn default_dims(&self) -> SceneDims {
        SceneDims::new(10.0, 8.0, 3.0)
    }

    fn build_scene(&self, dims: &SceneDims) -> Result<Scene, SimError> {
        dims.require(SceneDims::new(3.0, 3.0, 2.0))?;
        let mut s = Scene::new();
        let half = Vector3::new(dims.length / 2.0, dims.width / 2.0, 0.0);
        add_enclosure(&mut s, -half, half + Vector3::new(0.0, 0.0, dims.height), Some(0))?;
        s.finalize();
        Ok(s)
    }

    fn trajectory(&self, dims: &SceneDims) -> Result<TrajectorySpline, SimError> {
        let (x, y) = (dims.length / 2.0 - 1.5, dims.width / 2.0 - 1.5);
        let z = SENSOR_HEIGHT;
        PathBuilder::new(Vector3::new(-x, -y, z), 0.0, BOOTSTRAP_HOLD)
            .speed(0.8)
            .move_to(Vector3::new(x, -y, z))
            .turn_to(FRAC_PI_2)
            .move_to(Vector3::new(x, y, z))
            .turn_to(PI)
            .move_to(Vector3::new(-x, y, z))
            .hold(0.5)
            .build()
    }
}

/// Long open-ended corridor along x, centred on the origin.
pub struct Corridor;

impl ScenePreset for Corridor {
    fn name(&self) -> &'static str {
        "corridor"
    }

    fn default_dims(&self) -> SceneDims {
        SceneDims::new(40.0, 2.0, 2.5)
    }

    fn build_scene(&self, dims: &SceneDims) -> Result<Scene, SimError> {
        dims.require(SceneDims::new(10.0, 1.0, 2.0))?;
        let mut s = Scene::new();
        let (hl, hw, h) = (dims.length / 2.0, dims.width / 2.0, dims.height);
        axis_rect(&mut s, Vector3::new(-hl, -hw, 0.0), Vector3::new(hl, -hw, h), Vector3::y(), Some(0))?;
        axis_rect(&mut s, Vector3::new(-hl, hw, 0.0), Vector3::new(hl, hw, h), -Vector3::y(), Some(0))?;
        axis_rect(&mut s, Vector3::new(-hl, -hw, 0.0), Vector3::new(hl, hw, 0.0), Vector3::z(), Some(0))?;
        axis_rect(&mut s, Vector3::new(-hl, -hw, h), Vector3::new(hl, hw, h), -Vector3::z(), Some(0))?;
        s.finalize();
        Ok(s)
    }

    fn trajectory(&self, dims: &SceneDims) -> Result<TrajectorySpline, SimError> {
        let x = dims.length / 4.0;
        let z = SENSOR_HEIGHT.min(dims.height / 2.0);
        PathBuilder::new(Vector3::new(-x, 0.0, z), 0.0, BOOTSTRAP_HOLD)
            .speed(1.0)
            .move_to(Vector3::new(x, 0.0, z))
            .hold(0.5)
            .build()
    }
}

/// Two rooms side by side along x that share one wall of [`WALL_THICKNESS`].
///
/// Room 0 spans `x ∈ [−length, 0]`, room 1 spans `x ∈ [t, t + length]`.
pub struct TwoRoom;

impl ScenePreset for TwoRoom {
    fn name(&self) -> &'static str {
        "two_room"
    }

    fn default_dims(&self) -> SceneDims {
        SceneDims::new(6.0, 5.0, 3.0)
    }

    fn build_scene(&self, dims: &SceneDims) -> Result<Scene, SimError> {
        dims.require(SceneDims::new(3.0, 3.0, 2.0))?;
        let mut s = Scene::new();
        let hw = dims.width / 2.0;
        let h = dims.height;
        add_enclosure(
            &mut s,
            Vector3::new(-dims.length, -hw, 0.0),
            Vector3::new(0.0, hw, h),
            Some(0),
        )?;
        add_enclosure(
            &mut s,
            Vector3::new(WALL_THICKNESS, -hw, 0.0),
            Vector3::new(WALL_THICKNESS + dims.length, hw, h),
            Some(1),
        )?;
        s.finalize();
        Ok(s)
    }

    fn trajectory(&self, dims: &SceneDims) -> Result<TrajectorySpline, SimError> {
        // A closed loop in room 0 that returns to its start.
        let (x0, x1) = (-dims.length + 1.5, -1.2);
        let y = dims.width / 2.0 - 1.2;
        let z = SENSOR_HEIGHT;
        PathBuilder::new(Vector3::new(x0, -y, z), 0.0, BOOTSTRAP_HOLD)
            .speed(0.8)
            .move_to(Vector3::new(x1, -y, z))
            .turn_to(FRAC_PI_2)
            .move_to(Vector3::new(x1, y, z))
            .turn_to(PI)
            .move_to(Vector3::new(x0, y, z))
            .turn_to(1.5 * PI)
            .move_to(Vector3::new(x0, -y, z))
            .hold(0.5)
            .build()
    }
}

/// Three-storey stairwell.
///
/// The shaft spans `[0, length] × [0, width]`; storeys are `height` apart. Each
/// storey has one straight flight along +x in the strip `y ∈ [0, 0.4·width]`, fenced
/// off from the return walkway by a full-height partition wall. Floor slabs are
/// solid except above the flights, and each flight has a sloped underside, so the
/// storeys cannot see each other.
pub struct Stairwell;

pub const STAIRWELL_FLIGHTS: usize = 3;
const STEPS_PER_FLIGHT: usize = 16;
const FLIGHT_THICKNESS: f64 = 0.25;

impl Stairwell {
    fn layout(dims: &SceneDims) -> (f64, f64, f64, f64) {
        let x0 = 1.0;
        let x1 = dims.length - 1.0;
        let y_flight = 0.4 * dims.width;
        let y_wall = y_flight + WALL_THICKNESS;
        (x0, x1, y_flight, y_wall)
    }
}

impl ScenePreset for Stairwell {
    fn name(&self) -> &'static str {
        "stairwell"
    }

    fn default_dims(&self) -> SceneDims {
        SceneDims::new(6.0, 3.0, 3.0)
    }

    fn build_scene(&self, dims: &SceneDims) -> Result<Scene, SimError> {
        dims.require(SceneDims::new(4.0, 2.5, 2.5))?;
        let (l, w, h) = (dims.length, dims.width, dims.height);
        let (x0, x1, yf, yw) = Self::layout(dims);
        let top = h * (STAIRWELL_FLIGHTS as f64 + 1.0);
        let mut s = Scene::new();

        // Shaft walls and roof.
        axis_rect(&mut s, Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, w, top), Vector3::x(), None)?;
        axis_rect(&mut s, Vector3::new(l, 0.0, 0.0), Vector3::new(l, w, top), -Vector3::x(), None)?;
        axis_rect(&mut s, Vector3::new(0.0, 0.0, 0.0), Vector3::new(l, 0.0, top), Vector3::y(), None)?;
        axis_rect(&mut s, Vector3::new(0.0, w, 0.0), Vector3::new(l, w, top), -Vector3::y(), None)?;
        axis_rect(&mut s, Vector3::new(0.0, 0.0, top), Vector3::new(l, w, top), -Vector3::z(), None)?;
        axis_rect(&mut s, Vector3::new(0.0, 0.0, 0.0), Vector3::new(l, w, 0.0), Vector3::z(), Some(0))?;
        s.add_box(Vector3::new(x0, yf, 0.0), Vector3::new(x1, yw, top), None)?;

        for k in 1..=STAIRWELL_FLIGHTS {
            let room = Some(k as u32);
            let z = h * k as f64;
            let zu = z - WALL_THICKNESS;
            // Slab pieces around the opening above the flight below.
            let pieces = [
                (Vector3::new(0.0, 0.0, 0.0), Vector3::new(x0, w, 0.0)),
                (Vector3::new(x1, 0.0, 0.0), Vector3::new(l, w, 0.0)),
                (Vector3::new(x0, yf, 0.0), Vector3::new(x1, w, 0.0)),
            ];
            for (a, b) in pieces {
                axis_rect(&mut s, a + Vector3::new(0.0, 0.0, z), b + Vector3::new(0.0, 0.0, z), Vector3::z(), room)?;
                axis_rect(&mut s, a + Vector3::new(0.0, 0.0, zu), b + Vector3::new(0.0, 0.0, zu), -Vector3::z(), Some(k as u32 - 1))?;
            }
            // Slab edge along the opening.
            axis_rect(&mut s, Vector3::new(x0, yf, zu), Vector3::new(x1, yf, z), -Vector3::y(), Some(k as u32 - 1))?;
        }

        let run = (x1 - x0) / STEPS_PER_FLIGHT as f64;
        let rise = h / STEPS_PER_FLIGHT as f64;
        for k in 0..STAIRWELL_FLIGHTS {
            let room = Some(k as u32);
            let zb = h * k as f64;
            for i in 0..STEPS_PER_FLIGHT {
                let xa = x0 + run * i as f64;
                let za = zb + rise * i as f64;
                axis_rect(&mut s, Vector3::new(xa, 0.0, za), Vector3::new(xa, yf, za + rise), -Vector3::x(), room)?;
                axis_rect(
                    &mut s,
                    Vector3::new(xa, 0.0, za + rise),
                    Vector3::new(xa + run, yf, za + rise),
                    Vector3::z(),
                    room,
                )?;
            }
            if k > 0 {
                // Sloped underside parallel to the pitch line, seen from the flight below.
                let z_lo = zb - FLIGHT_THICKNESS;
                s.add_rect(
                    Vector3::new(x0, 0.0, z_lo),
                    Vector3::new(x1 - x0, 0.0, h),
                    Vector3::new(0.0, yf, 0.0),
                    Vector3::new(h, 0.0, -(x1 - x0)),
                    Some(k as u32 - 1),
                )?;
                // Closes the gap between the underside and the first riser.
                axis_rect(&mut s, Vector3::new(x0, 0.0, z_lo), Vector3::new(x0, yf, zb), -Vector3::x(), Some(k as u32 - 1))?;
            }
            // Closes the top end of the flight above the landing below.
            let zt = zb + h;
            axis_rect(
                &mut s,
                Vector3::new(x1, 0.0, zt - FLIGHT_THICKNESS),
                Vector3::new(x1, yf, zt),
                Vector3::x(),
                room,
            )?;
        }
        s.finalize();
        Ok(s)
    }

    fn trajectory(&self, dims: &SceneDims) -> Result<TrajectorySpline, SimError> {
        let (x0, x1, yf, yw) = Self::layout(dims);
        let (l, w, h) = (dims.length, dims.width, dims.height);
        let y_up = yf / 2.0;
        let y_back = (yw + w) / 2.0;
        let (xa, xb) = (x0 / 2.0, (x1 + l) / 2.0);
        let at = |x: f64, y: f64, floor: f64| Vector3::new(x, y, h * floor + SENSOR_HEIGHT);
        let mut b = PathBuilder::new(at(xa, y_up, 0.0), 0.0, BOOTSTRAP_HOLD).speed(0.7);
        for k in 0..STAIRWELL_FLIGHTS {
            let f = k as f64;
            b = b
                .move_to(at(x0, y_up, f))
                .move_to(at(x1, y_up, f + 1.0))
                .move_to(at(xb, y_up, f + 1.0))
                .move_to(at(xb, y_back, f + 1.0))
                .move_to(at(xa, y_back, f + 1.0))
                .move_to(at(xa, y_up, f + 1.0));
        }
        b.hold(0.5).build()
    }
}

/// Square ring corridor whose centreline side is `length`, plus a few crates.
pub struct LoopCourse;

impl ScenePreset for LoopCourse {
    fn name(&self) -> &'static str {
        "loop_course"
    }

    fn default_dims(&self) -> SceneDims {
        SceneDims::new(12.5, 2.5, 2.5)
    }

    fn build_scene(&self, dims: &SceneDims) -> Result<Scene, SimError> {
        dims.require(SceneDims::new(6.0, 1.5, 2.0))?;
        let (side, hw, h) = (dims.length, dims.width / 2.0, dims.height);
        let mut s = Scene::new();
        let lo = -hw;
        let hi = side + hw;
        axis_rect(&mut s, Vector3::new(lo, lo, 0.0), Vector3::new(lo, hi, h), Vector3::x(), Some(0))?;
        axis_rect(&mut s, Vector3::new(hi, lo, 0.0), Vector3::new(hi, hi, h), -Vector3::x(), Some(0))?;
        axis_rect(&mut s, Vector3::new(lo, lo, 0.0), Vector3::new(hi, lo, h), Vector3::y(), Some(0))?;
        axis_rect(&mut s, Vector3::new(lo, hi, 0.0), Vector3::new(hi, hi, h), -Vector3::y(), Some(0))?;
        axis_rect(&mut s, Vector3::new(lo, lo, 0.0), Vector3::new(hi, hi, 0.0), Vector3::z(), Some(0))?;
        axis_rect(&mut s, Vector3::new(lo, lo, h), Vector3::new(hi, hi, h), -Vector3::z(), Some(0))?;
        s.add_box(Vector3::new(hw, hw, 0.0), Vector3::new(side - hw, side - hw, h), Some(0))?;
        // Crates against the walls, placed asymmetrically so no two corners look alike.
        let crates = [
            (Vector3::new(0.3 * side, lo, 0.0), Vector3::new(0.3 * side + 0.6, lo + 0.4, 1.0)),
            (Vector3::new(0.7 * side, hw - 0.5, 0.0), Vector3::new(0.7 * side + 0.8, hw, 0.8)),
            (Vector3::new(hi - 0.4, 0.45 * side, 0.0), Vector3::new(hi, 0.45 * side + 1.0, 1.4)),
            (Vector3::new(0.6 * side, hi - 0.5, 0.0), Vector3::new(0.6 * side + 0.5, hi, 0.6)),
            (Vector3::new(0.2 * side, side - hw, 0.0), Vector3::new(0.2 * side + 1.2, side - hw + 0.3, 1.1)),
            (Vector3::new(lo, 0.55 * side, 0.0), Vector3::new(lo + 0.35, 0.55 * side + 0.7, 1.6)),
        ];
        for (a, b) in crates {
            s.add_box(a, b, Some(0))?;
        }
        s.finalize();
        Ok(s)
    }

    fn trajectory(&self, dims: &SceneDims) -> Result<TrajectorySpline, SimError> {
        let side = dims.length;
        let z = SENSOR_HEIGHT;
        let p = |x: f64, y: f64| Vector3::new(x, y, z);
        PathBuilder::new(p(0.5 * side, 0.0), 0.0, BOOTSTRAP_HOLD)
            .speed(1.0)
            .move_to(p(side, 0.0))
            .turn_to(FRAC_PI_2)
            .move_to(p(side, side))
            .turn_to(PI)
            .move_to(p(0.0, side))
            .turn_to(1.5 * PI)
            .move_to(p(0.0, 0.0))
            .turn_to(2.0 * PI)
            .move_to(p(0.5 * side, 0.0))
            .hold(0.5)
            .build()
    }
}
