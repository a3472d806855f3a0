//! Exact nearest-neighbor queries.
//!
//! Both backends order candidates by `(squared distance, index)`, so ties
//! resolve to the lowest index and the k-d tree returns exactly what the
//! linear scan returns.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Vec3;

/// Below this many points queries scan linearly.
pub const BRUTE_FORCE_LIMIT: usize = 2048;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub(crate) fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Bounded max-heap keeping the `k` smallest neighbors seen so far.
struct Best {
    k: usize,
    heap: BinaryHeap<Neighbor>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(n);
        } else if let Some(worst) = self.heap.peek() {
            if n < *worst {
                self.heap.pop();
                self.heap.push(n);
            }
        }
    }

    /// Squared radius a subtree must beat to matter; infinite until full.
    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |n| n.dist_sq)
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }
}

pub fn brute_force_knn(points: &[Vec3], query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
    let mut best = Best::new(k);
    for (index, p) in points.iter().enumerate() {
        if Some(index) == exclude {
            continue;
        }
        best.offer(Neighbor {
            index,
            dist_sq: dist_sq(query, p),
        });
    }
    best.into_sorted()
}

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over a borrowed point slice.
#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn knn(&self, query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut best = Best::new(k);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, query, exclude, &mut best);
        }
        best.into_sorted()
    }

    fn search(&self, node: usize, query: &Vec3, exclude: Option<usize>, best: &mut Best) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    if Some(index) != exclude {
                        best.offer(Neighbor {
                            index,
                            dist_sq: dist_sq(query, &self.points[index]),
                        });
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                // Left holds coordinates <= value, right holds >= value.
                let diff = query[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, exclude, best);
                // Skip only when strictly beyond the bound; a far point exactly on it may win on index.
                if diff * diff <= best.bound() {
                    self.search(far, query, exclude, best);
                }
            }
        }
    }
}

/// Picks the backend by size; results are identical either way.
pub enum NeighborIndex<'a> {
    Brute(&'a [Vec3]),
    Tree(KdTree<'a>),
}

impl<'a> NeighborIndex<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        if points.len() <= BRUTE_FORCE_LIMIT {
            NeighborIndex::Brute(points)
        } else {
            NeighborIndex::Tree(KdTree::build(points))
        }
    }

    pub fn knn(&self, query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        match self {
            NeighborIndex::Brute(points) => brute_force_knn(points, query, k, exclude),
            NeighborIndex::Tree(tree) => tree.knn(query, k, exclude),
        }
    }

    pub fn nearest(&self, query: &Vec3) -> Option<Neighbor> {
        self.knn(query, 1, None).into_iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tree_matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let tree = KdTree::build(&pts);
        for q in 0..200 {
            let query = pts[q * 7];
            for k in [1, 5, 16] {
                assert_eq!(
                    tree.knn(&query, k, Some(q * 7)),
                    brute_force_knn(&pts, &query, k, Some(q * 7))
                );
            }
        }
    }

    #[test]
    fn tree_matches_brute_force_with_ties() {
        // Integer lattice with duplicates: many exactly equal distances.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..4000)
            .map(|_| {
                Vec3::new(
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..6) as f64,
                )
            })
            .collect();
        let tree = KdTree::build(&pts);
        for q in 0..100 {
            let query = Vec3::new(
                rng.random_range(-1..7) as f64,
                rng.random_range(-1..7) as f64,
                rng.random_range(0..6) as f64 + 0.5,
            );
            assert_eq!(tree.knn(&query, 30, None), brute_force_knn(&pts, &query, 30, None));
            assert_eq!(tree.knn(&pts[q], 12, Some(q)), brute_force_knn(&pts, &pts[q], 12, Some(q)));
        }
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let n = brute_force_knn(&pts, &Vec3::zeros(), 2, None);
        assert_eq!(n.iter().map(|n| n.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn k_larger_than_cloud() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(brute_force_knn(&pts, &Vec3::zeros(), 5, None).len(), 2);
        assert_eq!(KdTree::build(&pts).knn(&Vec3::zeros(), 5, Some(0)).len(), 1);
    }
}
