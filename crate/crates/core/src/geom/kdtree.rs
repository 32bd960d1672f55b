//! Static kd-tree over 3D points with exact radius and nearest-neighbour queries.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable after construction; queries take `&self` and may run concurrently.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build_node(0, n);
        }
        tree
    }

    pub fn from_iter<I: IntoIterator<Item = Vector3<f64>>>(iter: I) -> Self {
        Self::build(iter.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// Indices with `‖p − query‖ ≤ radius`, ascending by distance, ties by index.
    pub fn radius_search(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        self.radius_search_with_distances(query, radius)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    }

    /// Like [`radius_search`](Self::radius_search) but also returns squared distances.
    pub fn radius_search_with_distances(&self, query: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match self.nodes[id] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = (self.points[i] - query).norm_squared();
                        if d2 <= r2 {
                            out.push((i, d2));
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[axis] - value;
                    // Points equal to the split value may sit on either side.
                    if diff <= radius {
                        stack.push(left);
                    }
                    if diff >= -radius {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Nearest point as `(index, distance)`; ties go to the lower index.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        self.nearest_rec(0, query, &mut best);
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    /// Nearest point within `radius` that satisfies `accept`, as `(index, distance)`.
    ///
    /// Same result as taking the first accepted index of [`radius_search`](Self::radius_search),
    /// without collecting the neighbourhood.
    pub fn nearest_within<F: Fn(usize) -> bool>(
        &self,
        query: &Vector3<f64>,
        radius: f64,
        accept: F,
    ) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        self.nearest_filtered(0, query, radius * radius, &accept, &mut best);
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    fn nearest_rec(&self, id: usize, query: &Vector3<f64>, best: &mut Option<(usize, f64)>) {
        self.nearest_filtered(id, query, f64::INFINITY, &|_| true, best);
    }

    fn nearest_filtered<F: Fn(usize) -> bool>(
        &self,
        id: usize,
        query: &Vector3<f64>,
        r2: f64,
        accept: &F,
        best: &mut Option<(usize, f64)>,
    ) {
        match self.nodes[id] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - query).norm_squared();
                    if d2 > r2 {
                        continue;
                    }
                    let better = match *best {
                        None => true,
                        Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                    };
                    if better && accept(i) {
                        *best = Some((i, d2));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_filtered(near, query, r2, accept, best);
                let bound = best.map_or(r2, |(_, d2)| d2);
                // `<=` keeps equidistant points on the far side eligible for the index tie-break.
                if diff * diff <= bound {
                    self.nearest_filtered(far, query, r2, accept, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect()
    }

    #[test]
    fn two_point_examples() {
        let tree = KdTree::build(vec![Vector3::zeros(), Vector3::x()]);
        assert_eq!(tree.radius_search(&Vector3::zeros(), 0.5), vec![0]);
        assert_eq!(tree.radius_search(&Vector3::zeros(), 1.5), vec![0, 1]);
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = random_points(&mut rng, 10_000);
        let tree = KdTree::build(points.clone());
        for _ in 0..100 {
            let q = random_points(&mut rng, 1)[0];
            let r = rng.random_range(0.1..3.0);
            let mut brute: Vec<(usize, f64)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .filter(|&(_, d2)| d2 <= r * r)
                .collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let expected: Vec<usize> = brute.iter().map(|x| x.0).collect();
            assert_eq!(tree.radius_search(&q, r), expected);

            let (ni, nd) = tree.nearest(&q).unwrap();
            let (bi, bd) = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!((ni, nd), (bi, bd));
        }
    }

    #[test]
    fn filtered_nearest_matches_first_accepted_neighbour() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points = random_points(&mut rng, 5_000);
        let tree = KdTree::build(points);
        for k in 0..200 {
            let q = random_points(&mut rng, 1)[0];
            let r = rng.random_range(0.2..4.0);
            let accept = |i: usize| (i + k) % 3 == 0;
            let expected = tree.radius_search(&q, r).into_iter().find(|&i| accept(i));
            assert_eq!(tree.nearest_within(&q, r, accept).map(|x| x.0), expected);
        }
        let dup = KdTree::build(vec![Vector3::x(); 6]);
        assert_eq!(dup.nearest_within(&Vector3::zeros(), 1.0, |i| i > 2).unwrap().0, 3);
        assert!(dup.nearest_within(&Vector3::zeros(), 0.99, |_| true).is_none());
    }

    #[test]
    fn duplicate_points_and_ties() {
        let pts = vec![Vector3::new(1.0, 0.0, 0.0); 20]
            .into_iter()
            .chain(vec![Vector3::new(-1.0, 0.0, 0.0); 20])
            .collect::<Vec<_>>();
        let tree = KdTree::build(pts);
        assert_eq!(tree.radius_search(&Vector3::zeros(), 1.0), (0..40).collect::<Vec<_>>());
        assert_eq!(tree.nearest(&Vector3::zeros()).unwrap().0, 0);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::build(Vec::new());
        assert!(tree.radius_search(&Vector3::zeros(), 1.0).is_empty());
        assert!(tree.nearest(&Vector3::zeros()).is_none());
    }
}
