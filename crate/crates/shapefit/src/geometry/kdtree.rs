//! Exact kd-tree over 3D points.
//!
//! Results are identical to an exhaustive scan, including the tie rule
//! (equal distances resolve to the lowest point index), because subtrees
//! are only pruned when they are strictly farther than the current best.

use nalgebra::Point3;

struct Node {
    /// Index into the original point slice.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

const NIL: i32 = -1;

pub struct KdTree {
    nodes: Vec<Node>,
    points: Vec<Point3<f64>>,
    root: i32,
}

impl KdTree {
    /// Builds a balanced tree; `points` must be finite.
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = Self { nodes: Vec::with_capacity(points.len()), points: points.to_vec(), root: NIL };
        let n = order.len();
        tree.root = tree.build_range(&mut order, 0, n, 0);
        tree
    }

    fn build_range(&mut self, order: &mut [u32], lo: usize, hi: usize, depth: usize) -> i32 {
        if lo >= hi {
            return NIL;
        }
        let axis = (depth % 3) as u8;
        let mid = lo + (hi - lo) / 2;
        // Sorting by (coordinate, index) keeps construction deterministic
        // even with duplicate coordinates.
        order[lo..hi].sort_unstable_by(|&a, &b| {
            let ca = self.points[a as usize][axis as usize];
            let cb = self.points[b as usize][axis as usize];
            ca.partial_cmp(&cb).expect("finite coordinate").then(a.cmp(&b))
        });
        let node_index = self.nodes.len() as i32;
        self.nodes.push(Node { point: order[mid], axis, left: NIL, right: NIL });
        let left = self.build_range(order, lo, mid, depth + 1);
        let right = self.build_range(order, mid + 1, hi, depth + 1);
        self.nodes[node_index as usize].left = left;
        self.nodes[node_index as usize].right = right;
        node_index
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nearest point index and distance; `None` for an empty tree.
    pub fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        if self.root == NIL {
            return None;
        }
        let mut best = (u32::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        Some((best.0 as usize, best.1.sqrt()))
    }

    fn nearest_rec(&self, node: i32, query: &Point3<f64>, best: &mut (u32, f64)) {
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (p - query).norm_squared();
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NIL {
            self.nearest_rec(near, query, best);
        }
        // The far side may still hold an equal-distance, lower-index point,
        // so prune only on strict inequality.
        if far != NIL && delta * delta <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// The `k` nearest points ordered by (distance, index).
    ///
    /// Returns fewer entries when the tree holds fewer than `k` points.
    pub fn k_nearest(&self, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        if self.root == NIL || k == 0 {
            return Vec::new();
        }
        // Bounded insertion keeps the set sorted; k stays small in practice.
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, query, k, &mut best);
        best.into_iter().map(|(d2, i)| (i as usize, d2.sqrt())).collect()
    }

    fn k_nearest_rec(&self, node: i32, query: &Point3<f64>, k: usize, best: &mut Vec<(f64, u32)>) {
        let n = &self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let d2 = (p - query).norm_squared();
        let candidate = (d2, n.point);
        if best.len() < k || candidate < best[best.len() - 1] {
            let pos = best.partition_point(|e| *e < candidate);
            best.insert(pos, candidate);
            if best.len() > k {
                best.pop();
            }
        }
        let delta = query[n.axis as usize] - p[n.axis as usize];
        let (near, far) = if delta < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if near != NIL {
            self.k_nearest_rec(near, query, k, best);
        }
        let worst = if best.len() < k { f64::INFINITY } else { best[best.len() - 1].0 };
        if far != NIL && delta * delta <= worst {
            self.k_nearest_rec(far, query, k, best);
        }
    }
}
