//! Static k-d tree over fixed-dimension points.
//!
//! Built once, queried many times. Duplicate coordinates are fine: splits
//! are by index median, not by value.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree<const K: usize> {
    points: Vec<[f64; K]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn d2<const K: usize>(a: &[f64; K], b: &[f64; K]) -> f64 {
    let mut s = 0.0;
    for k in 0..K {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

impl<const K: usize> KdTree<K> {
    pub fn new(points: Vec<[f64; K]>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = points.len();
            Self::build(&points, &mut order, 0, n, &mut nodes);
        }
        KdTree { points, order, nodes }
    }

    fn build(points: &[[f64; K]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        if end - start <= LEAF {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &mut order[start..end];
        let mut axis = 0;
        let mut spread = -1.0;
        for k in 0..K {
            let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(points[i][k]), hi.max(points[i][k]))
            });
            if hi - lo > spread {
                spread = hi - lo;
                axis = k;
            }
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let value = points[slice[mid]][axis];
        nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = Self::build(points, order, start, start + mid, nodes);
        let right = Self::build(points, order, start + mid, end, nodes);
        nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64; K] {
        &self.points[i]
    }

    /// Nearest point as `(index, squared distance)`; ties go to the lower index.
    pub fn nearest(&self, q: &[f64; K]) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }

    /// `k` nearest points sorted by increasing distance, as `(index, squared distance)`.
    pub fn knn(&self, q: &[f64; K], k: usize) -> Vec<(usize, f64)> {
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.1, c.0)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, node: usize, q: &[f64; K], k: usize, heap: &mut BinaryHeap<Cand>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Cand(d2(q, &self.points[i]), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// Indices of all points within distance `r` of `q`, sorted by index.
    pub fn within(&self, q: &[f64; K], r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() {
            self.within_rec(0, q, r * r, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &[f64; K], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(self.order[start..end].iter().copied().filter(|&i| d2(q, &self.points[i]) <= r2));
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.within_rec(far, q, r2, out);
                }
            }
        }
    }
}

pub fn tree3(points: &[crate::Vec3]) -> KdTree<3> {
    KdTree::new(points.iter().map(|p| [p.x, p.y, p.z]).collect())
}

pub fn tree2(points: &[crate::Vec2]) -> KdTree<2> {
    KdTree::new(points.iter().map(|p| [p.x, p.y]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[[f64; 3]], q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, d2(q, p))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn duplicates_are_handled() {
        let pts: Vec<[f64; 3]> = (0..5000).map(|i| [0.0, (i % 7) as f64, 0.0]).collect();
        let t = KdTree::new(pts.clone());
        let q = [0.1, 3.2, 0.0];
        let got = t.knn(&q, 20);
        let want = brute(&pts, &q, 20);
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..300),
            q in prop::array::uniform3(-12.0f64..12.0),
            k in 1usize..20,
        ) {
            let t = KdTree::new(pts.clone());
            let got: Vec<f64> = t.knn(&q, k).into_iter().map(|x| x.1).collect();
            let want: Vec<f64> = brute(&pts, &q, k).into_iter().map(|x| x.1).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn within_matches_brute_force(
            pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..300),
            q in prop::array::uniform3(-12.0f64..12.0),
            r in 0.0f64..8.0,
        ) {
            let t = KdTree::new(pts.clone());
            let want: Vec<usize> = (0..pts.len()).filter(|&i| d2(&q, &pts[i]) <= r * r).collect();
            prop_assert_eq!(t.within(&q, r), want);
        }
    }
}
