//! Scene geometry built from planar rectangles, with a bounding-volume hierarchy for ray casting.

use nalgebra::Vector3;

use crate::error::SimError;

/// Parallelogram patch `origin + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`, with perpendicular edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    /// Unit normal; points toward the side an observer is expected on.
    pub normal: Vector3<f64>,
    pub surface: usize,
    pub room: Option<u32>,
}

impl Rect {
    fn aabb(&self) -> Aabb {
        let mut b = Aabb::empty();
        for p in [
            self.origin,
            self.origin + self.edge_u,
            self.origin + self.edge_v,
            self.origin + self.edge_u + self.edge_v,
        ] {
            b.grow(&p);
        }
        b
    }

    /// Ray parameter of the intersection, if any, for either face.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let denom = dir.dot(&self.normal);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.origin - origin).dot(&self.normal) / denom;
        if !(t > 1e-9 && t <= t_max) {
            return None;
        }
        let rel = origin + dir * t - self.origin;
        let s = rel.dot(&self.edge_u) / self.edge_u.norm_squared();
        let r = rel.dot(&self.edge_v) / self.edge_v.norm_squared();
        const EDGE_EPS: f64 = 1e-12;
        if s < -EDGE_EPS || s > 1.0 + EDGE_EPS || r < -EDGE_EPS || r > 1.0 + EDGE_EPS {
            return None;
        }
        Some(t)
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// Slab test; returns the entry distance when the ray hits within `t_max`.
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            // Pad flat boxes so axis-aligned rectangles are not missed.
            let lo = (self.min[k] - 1e-9 - origin[k]) * inv_dir[k];
            let hi = (self.max[k] + 1e-9 - origin[k]) * inv_dir[k];
            let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            // NaN from 0·∞ leaves the interval unchanged.
            if a > t0 {
                t0 = a;
            }
            if b < t1 {
                t1 = b;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// First surface a ray meets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub point: Vector3<f64>,
    /// Surface normal turned toward the ray origin.
    pub normal: Vector3<f64>,
    pub surface: usize,
    pub room: Option<u32>,
}

/// A static scene. Call [`Scene::finalize`] (done by the builders) before casting rays.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    rects: Vec<Rect>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    next_surface: usize,
}

const LEAF_SIZE: usize = 4;

impl Scene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn surface(&self, id: usize) -> Option<&Rect> {
        self.rects.iter().find(|r| r.surface == id)
    }

    /// Adds a rectangle and returns its surface id. `normal_hint` picks the normal's sign.
    pub fn add_rect(
        &mut self,
        origin: Vector3<f64>,
        edge_u: Vector3<f64>,
        edge_v: Vector3<f64>,
        normal_hint: Vector3<f64>,
        room: Option<u32>,
    ) -> Result<usize, SimError> {
        let (lu, lv) = (edge_u.norm(), edge_v.norm());
        if !(lu > 0.0 && lv > 0.0 && lu.is_finite() && lv.is_finite() && origin.iter().all(|c| c.is_finite())) {
            return Err(SimError::InvalidDimensions(format!("rectangle edges {lu} x {lv}")));
        }
        if edge_u.dot(&edge_v).abs() > 1e-9 * lu * lv {
            return Err(SimError::InvalidDimensions("rectangle edges are not perpendicular".into()));
        }
        let mut normal = edge_u.cross(&edge_v).normalize();
        if normal.dot(&normal_hint) < 0.0 {
            normal = -normal;
        }
        let surface = self.next_surface;
        self.next_surface += 1;
        self.rects.push(Rect {
            origin,
            edge_u,
            edge_v,
            normal,
            surface,
            room,
        });
        self.nodes.clear();
        Ok(surface)
    }

    /// Axis-aligned box `[min, max]` as six outward-facing rectangles; returns their surface ids.
    pub fn add_box(&mut self, min: Vector3<f64>, max: Vector3<f64>, room: Option<u32>) -> Result<Vec<usize>, SimError> {
        let d = max - min;
        if !(d.x > 0.0 && d.y > 0.0 && d.z > 0.0) {
            return Err(SimError::InvalidDimensions(format!("box extent {d:?}")));
        }
        let (ex, ey, ez) = (Vector3::new(d.x, 0.0, 0.0), Vector3::new(0.0, d.y, 0.0), Vector3::new(0.0, 0.0, d.z));
        let faces = [
            (min, ey, ez, -Vector3::x()),
            (min + ex, ey, ez, Vector3::x()),
            (min, ex, ez, -Vector3::y()),
            (min + ey, ex, ez, Vector3::y()),
            (min, ex, ey, -Vector3::z()),
            (min + ez, ex, ey, Vector3::z()),
        ];
        faces
            .into_iter()
            .map(|(o, u, v, n)| self.add_rect(o, u, v, n, room))
            .collect()
    }

    /// Builds the hierarchy. Idempotent.
    pub fn finalize(&mut self) {
        if !self.nodes.is_empty() || self.rects.is_empty() {
            return;
        }
        let boxes: Vec<Aabb> = self.rects.iter().map(Rect::aabb).collect();
        self.order = (0..self.rects.len()).collect();
        let mut order = std::mem::take(&mut self.order);
        let n = order.len();
        self.build(&boxes, &mut order, 0, n);
        self.order = order;
    }

    fn build(&mut self, boxes: &[Aabb], order: &mut [usize], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut centers = Aabb::empty();
        for &i in &order[start..end] {
            bounds.merge(&boxes[i]);
            centers.grow(&boxes[i].center());
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let extent = centers.max - centers.min;
        let axis = extent.imax();
        order[start..end].sort_by(|&a, &b| {
            boxes[a].center()[axis]
                .total_cmp(&boxes[b].center()[axis])
                .then(a.cmp(&b))
        });
        let mid = (start + end) / 2;
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build(boxes, order, start, mid);
        let right = self.build(boxes, order, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// Nearest intersection along the unit direction `dir` within `max_range`.
    ///
    /// Ties between coincident surfaces resolve to the lower surface id.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<Hit> {
        assert!(
            self.rects.is_empty() || !self.nodes.is_empty(),
            "Scene::finalize must be called before raycast"
        );
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|c| 1.0 / c);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let limit = best.map_or(max_range, |b| b.0);
            if self.nodes[n].bounds().hit(origin, &inv, limit).is_none() {
                continue;
            }
            match self.nodes[n] {
                Node::Leaf { start, end, .. } => {
                    for &i in &self.order[start..end] {
                        let limit = best.map_or(max_range, |b| b.0);
                        if let Some(t) = self.rects[i].intersect(origin, dir, limit) {
                            let better = match best {
                                None => true,
                                Some((bt, bi)) => t < bt || (t == bt && i < bi),
                            };
                            if better {
                                best = Some((t, i));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        best.map(|(t, i)| {
            let r = &self.rects[i];
            let normal = if r.normal.dot(dir) > 0.0 { -r.normal } else { r.normal };
            Hit {
                range: t,
                point: origin + dir * t,
                normal,
                surface: r.surface,
                room: r.room,
            }
        })
    }

    /// Distance from `p` to the plane of surface `id`.
    pub fn plane_distance(&self, id: usize, p: &Vector3<f64>) -> Option<f64> {
        self.surface(id).map(|r| (p - r.origin).dot(&r.normal).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_scene() -> Scene {
        let mut s = Scene::new();
        s.add_rect(
            Vector3::new(5.0, -5.0, -5.0),
            Vector3::new(0.0, 10.0, 0.0),
            Vector3::new(0.0, 0.0, 10.0),
            -Vector3::x(),
            None,
        )
        .unwrap();
        s.finalize();
        s
    }

    #[test]
    fn ray_hits_plane_at_five_metres() {
        let hit = wall_scene().raycast(&Vector3::zeros(), &Vector3::x(), 100.0).unwrap();
        assert_eq!(hit.point, Vector3::new(5.0, 0.0, 0.0));
        assert_eq!(hit.range, 5.0);
        assert_eq!(hit.normal, -Vector3::x());
    }

    #[test]
    fn normal_faces_the_ray_from_either_side() {
        let s = wall_scene();
        let hit = s.raycast(&Vector3::new(10.0, 0.0, 0.0), &-Vector3::x(), 100.0).unwrap();
        assert_eq!(hit.normal, Vector3::x());
        assert!(s.raycast(&Vector3::zeros(), &Vector3::x(), 4.0).is_none());
        assert!(s.raycast(&Vector3::zeros(), &-Vector3::x(), 100.0).is_none());
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mut s = Scene::new();
        for i in 0..30 {
            let f = i as f64;
            s.add_box(
                Vector3::new(f * 0.7 - 10.0, (f * 1.3) % 7.0 - 3.0, -1.0),
                Vector3::new(f * 0.7 - 9.7, (f * 1.3) % 7.0 - 2.5, 0.5 + (f % 3.0)),
                Some(i),
            )
            .unwrap();
        }
        s.finalize();
        for k in 0..500 {
            let a = k as f64 * 0.0126;
            let dir = Vector3::new(a.cos(), a.sin(), 0.1 * (3.0 * a).sin()).normalize();
            let origin = Vector3::new(0.1, 0.2, 0.0);
            let got = s.raycast(&origin, &dir, 50.0);
            let mut brute: Option<(f64, usize)> = None;
            for (i, r) in s.rects.iter().enumerate() {
                if let Some(t) = r.intersect(&origin, &dir, 50.0) {
                    if brute.is_none_or(|b| t < b.0) {
                        brute = Some((t, i));
                    }
                }
            }
            match (got, brute) {
                (None, None) => {}
                (Some(h), Some((t, _))) => assert!((h.range - t).abs() < 1e-12),
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn box_faces_point_outward() {
        let mut s = Scene::new();
        s.add_box(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0), None).unwrap();
        let c = Vector3::new(0.5, 1.0, 1.5);
        for r in s.rects() {
            let mid = r.origin + 0.5 * (r.edge_u + r.edge_v);
            assert!((mid - c).dot(&r.normal) > 0.0);
        }
    }

    #[test]
    fn rejects_degenerate_rectangles() {
        let mut s = Scene::new();
        assert!(s
            .add_rect(Vector3::zeros(), Vector3::zeros(), Vector3::y(), Vector3::z(), None)
            .is_err());
        assert!(s
            .add_rect(Vector3::zeros(), Vector3::x(), Vector3::new(1.0, 1.0, 0.0), Vector3::z(), None)
            .is_err());
        assert!(s.add_box(Vector3::zeros(), Vector3::new(1.0, -1.0, 1.0), None).is_err());
    }
}
