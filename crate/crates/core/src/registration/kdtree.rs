//! Static 3-d tree over a point slice.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

/// Balanced k-d tree stored as a permutation of point indices.
///
/// The range `[lo, hi)` of `order` is a node; its median element splits
/// along `depth % 3`, recursively.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point within `max_dist2` (squared), as `(index, squared distance)`.
    pub fn nearest_within(&self, query: &Vector3<f64>, max_dist2: f64) -> Option<(usize, f64)> {
        let q = [query.x, query.y, query.z];
        let mut best = Candidate { dist2: max_dist2, index: usize::MAX };
        self.nearest_rec(&q, 0, self.order.len(), 0, &mut best);
        (best.index != usize::MAX).then_some((best.index, best.dist2))
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        self.nearest_within(query, f64::INFINITY)
    }

    /// `k` nearest points sorted by distance.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let q = [query.x, query.y, query.z];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(&q, 0, self.order.len(), 0, k, &mut heap);
        }
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.index, c.dist2)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn consider(&self, q: &[f64; 3], i: usize, best: &mut Candidate) {
        let d = dist2(q, &self.points[i]);
        if d < best.dist2 || (d == best.dist2 && i < best.index) {
            *best = Candidate { dist2: d, index: i };
        }
    }

    fn nearest_rec(&self, q: &[f64; 3], lo: usize, hi: usize, depth: usize, best: &mut Candidate) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                self.consider(q, i, best);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let axis = depth % 3;
        let pivot = self.order[mid];
        self.consider(q, pivot, best);
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.nearest_rec(q, near.0, near.1, depth + 1, best);
        if diff * diff <= best.dist2 {
            self.nearest_rec(q, far.0, far.1, depth + 1, best);
        }
    }

    fn push(&self, q: &[f64; 3], i: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        let c = Candidate { dist2: dist2(q, &self.points[i]), index: i };
        if heap.len() < k {
            heap.push(c);
        } else if let Some(top) = heap.peek() {
            if c < *top {
                heap.pop();
                heap.push(c);
            }
        }
    }

    fn knn_rec(&self, q: &[f64; 3], lo: usize, hi: usize, depth: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                self.push(q, i, k, heap);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let axis = depth % 3;
        let pivot = self.order[mid];
        self.push(q, pivot, k, heap);
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.knn_rec(q, near.0, near.1, depth + 1, k, heap);
        let bound = if heap.len() < k { f64::INFINITY } else { heap.peek().map_or(f64::INFINITY, |c| c.dist2) };
        if diff * diff <= bound {
            self.knn_rec(q, far.0, far.1, depth + 1, k, heap);
        }
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn build(points: &[[f64; 3]], order: &mut [usize], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let mid = order.len() / 2;
    let axis = depth % 3;
    order.select_nth_unstable_by(mid, |a, b| points[*a][axis].total_cmp(&points[*b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
