//! Exact nearest-neighbour queries over 3D points.
//!
//! Handles any number of coincident points; ties are broken by the smaller
//! point index so results are deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> KdTree {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let spread = hi - lo;
        let axis = spread.imax();
        if spread[axis] <= 0.0 {
            // all coincident
            return id;
        }
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = self.points[self.order[mid]][axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Closest point to `q`; `None` for an empty tree.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<Neighbor> {
        self.knn(q, 1).into_iter().next()
    }

    /// The `k` closest points to `q`, nearest first.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(&self, node: usize, q: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let n = Neighbor {
                        index: i,
                        dist2: (self.points[i] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(n);
                    } else if n < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(n);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                dist2: (p - q).norm_squared(),
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut points: Vec<Vector3<f64>> = (0..700)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.1)))
            .collect();
        // duplicates and a grid to stress ties
        points.extend(std::iter::repeat_n(Vector3::new(0.5, 0.5, 0.05), 40));
        points.extend((0..100).map(|i| Vector3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.0)));
        let tree = KdTree::new(&points);
        for _ in 0..200 {
            let q = Vector3::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-0.1..0.2));
            for k in [1, 5, 60] {
                assert_eq!(tree.knn(&q, k), brute(&points, &q, k));
            }
        }
        let q = Vector3::new(0.5, 0.5, 0.05);
        assert_eq!(tree.knn(&q, 45), brute(&points, &q, 45));
    }

    #[test]
    fn coincident_points() {
        let points = vec![Vector3::new(1.0, 2.0, 3.0); 101];
        let tree = KdTree::new(&points);
        let n = tree.knn(&Vector3::zeros(), 101);
        assert_eq!(n.len(), 101);
        assert_eq!(n[0].index, 0);
        assert!(KdTree::new(&[]).nearest(&Vector3::zeros()).is_none());
    }
}
