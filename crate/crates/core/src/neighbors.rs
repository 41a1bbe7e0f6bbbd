//! Distances and exact k-nearest-neighbor search.
//!
//! Results are ordered by `(distance, row index)`, so equal distances resolve
//! to the lower row index. [`KdTree`] returns exactly what [`BruteForce`]
//! returns: it only prunes boxes whose lower bound is strictly worse than the
//! current k-th candidate, and candidate distances come from the same
//! [`Distance::eval`] call on the same stored row.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
    Minkowski { p: f64 },
    /// `(sum_i w_i |a_i - b_i|^p)^(1/p)`
    WeightedMinkowski { p: f64, weights: Vec<f64> },
}

impl Distance {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let check_p = |p: f64| {
            if p >= 1.0 && p.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("minkowski p must be finite and >= 1, got {p}")))
            }
        };
        match self {
            Distance::Minkowski { p } => check_p(*p),
            Distance::WeightedMinkowski { p, weights } => {
                check_p(*p)?;
                if weights.len() != dim {
                    return Err(Error::Shape {
                        expected: dim,
                        got: weights.len(),
                    });
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::InvalidArgument(
                        "distance weights must be finite and non-negative".into(),
                    ));
                }
                if weights.iter().all(|w| *w == 0.0) {
                    return Err(Error::InvalidArgument("distance weights are all zero".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        self.aggregate(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
    }

    /// Combines per-coordinate absolute differences into a distance.
    /// Monotone in every coordinate, which is what makes box bounds valid.
    fn aggregate<I: Iterator<Item = f64>>(&self, diffs: I) -> f64 {
        match self {
            Distance::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Distance::Manhattan => diffs.sum(),
            Distance::Chebyshev => diffs.fold(0.0, f64::max),
            Distance::Minkowski { p } => diffs.map(|d| d.powf(*p)).sum::<f64>().powf(1.0 / p),
            Distance::WeightedMinkowski { p, weights } => diffs
                .zip(weights)
                .map(|(d, w)| w * d.powf(*p))
                .sum::<f64>()
                .powf(1.0 / p),
        }
    }

    /// Per-column importance used to pick KD-tree split axes.
    fn axis_weight(&self, axis: usize) -> f64 {
        match self {
            Distance::WeightedMinkowski { weights, .. } => weights[axis],
            _ => 1.0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Distance::Euclidean => "euclidean".into(),
            Distance::Manhattan => "manhattan".into(),
            Distance::Chebyshev => "chebyshev".into(),
            Distance::Minkowski { p } => format!("minkowski(p={p})"),
            Distance::WeightedMinkowski { p, .. } => format!("weighted_minkowski(p={p})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

/// Max-heap entry so the worst kept candidate sits on top.
#[derive(Debug, Clone, Copy)]
struct Candidate(Neighbor);

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(Candidate(n));
        } else if let Some(top) = self.heap.peek() {
            if n.key_cmp(&top.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Candidate(n));
            }
        }
    }

    /// Distance a new point must not exceed to be kept; infinite until full.
    fn worst(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.0.distance)
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        let mut v: Vec<Neighbor> = self.heap.into_iter().map(|c| c.0).collect();
        v.sort_by(Neighbor::key_cmp);
        v
    }
}

/// Row store shared by both index kinds: copies of the indexed rows plus
/// their original row ids.
#[derive(Debug, Clone)]
struct Points {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<usize>,
}

impl Points {
    fn gather(matrix: ArrayView2<'_, f64>, ids: &[usize]) -> Result<Self> {
        let dim = matrix.ncols();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= matrix.nrows() {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    len: matrix.nrows(),
                });
            }
            data.extend(matrix.row(id).iter());
        }
        Ok(Points {
            dim,
            data,
            ids: ids.to_vec(),
        })
    }

    fn row(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    /// Rows a query may return once `exclude` is left out. The membership
    /// scan only runs when `k` is large enough for it to matter.
    fn available(&self, k: usize, exclude: Option<usize>) -> usize {
        match exclude {
            Some(e) if k >= self.len() && self.ids.contains(&e) => self.len() - 1,
            _ => self.len(),
        }
    }
}

fn check_query(dim: usize, query: &[f64], k: usize, available: usize) -> Result<()> {
    if query.len() != dim {
        return Err(Error::Shape {
            expected: dim,
            got: query.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > available {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {available} indexed rows"
        )));
    }
    Ok(())
}

/// Exact linear scan.
#[derive(Debug, Clone)]
pub struct BruteForce {
    points: Points,
}

impl BruteForce {
    pub fn build(matrix: ArrayView2<'_, f64>, ids: &[usize]) -> Result<Self> {
        Ok(BruteForce {
            points: Points::gather(matrix, ids)?,
        })
    }

    pub fn query(
        &self,
        query: &[f64],
        k: usize,
        distance: &Distance,
        exclude: Option<usize>,
    ) -> Result<Vec<Neighbor>> {
        let available = self.points.available(k, exclude);
        check_query(self.points.dim, query, k, available)?;
        let mut top = TopK::new(k);
        for slot in 0..self.points.len() {
            let id = self.points.ids[slot];
            if Some(id) == exclude {
                continue;
            }
            top.offer(Neighbor {
                index: id,
                distance: distance.eval(query, self.points.row(slot)),
            });
        }
        Ok(top.into_sorted())
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    kind: NodeKind,
}

pub const DEFAULT_LEAF_SIZE: usize = 16;

/// KD-tree with per-node bounding boxes; exact for every [`Distance`].
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Points,
    nodes: Vec<Node>,
}

impl KdTree {
    /// Builds over rows `ids` of `matrix`. `distance` only steers the choice
    /// of split axes; the tree answers queries under any metric.
    pub fn build(
        matrix: ArrayView2<'_, f64>,
        ids: &[usize],
        leaf_size: usize,
        distance: &Distance,
    ) -> Result<Self> {
        let leaf_size = leaf_size.max(1);
        let mut points = Points::gather(matrix, ids)?;
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_node(&points, &mut order, 0, leaf_size, distance, &mut nodes);
        }
        // lay rows out in leaf order
        let mut data = Vec::with_capacity(points.data.len());
        let mut new_ids = Vec::with_capacity(points.ids.len());
        for &slot in &order {
            data.extend_from_slice(points.row(slot));
            new_ids.push(points.ids[slot]);
        }
        points.data = data;
        points.ids = new_ids;
        Ok(KdTree { points, nodes })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() == 0
    }

    pub fn query(
        &self,
        query: &[f64],
        k: usize,
        distance: &Distance,
        exclude: Option<usize>,
    ) -> Result<Vec<Neighbor>> {
        let available = self.points.available(k, exclude);
        check_query(self.points.dim, query, k, available)?;
        let mut top = TopK::new(k);
        let mut gaps = vec![0.0; self.points.dim];
        self.search(0, query, distance, exclude, &mut top, &mut gaps);
        Ok(top.into_sorted())
    }

    fn lower_bound(&self, node: &Node, query: &[f64], distance: &Distance, gaps: &mut [f64]) -> f64 {
        for (i, g) in gaps.iter_mut().enumerate() {
            let q = query[i];
            *g = if q < node.lo[i] {
                node.lo[i] - q
            } else if q > node.hi[i] {
                q - node.hi[i]
            } else {
                0.0
            };
        }
        distance.aggregate(gaps.iter().copied())
    }

    fn search(
        &self,
        id: usize,
        query: &[f64],
        distance: &Distance,
        exclude: Option<usize>,
        top: &mut TopK,
        gaps: &mut [f64],
    ) {
        let node = &self.nodes[id];
        match node.kind {
            NodeKind::Leaf { start, end } => {
                for slot in start..end {
                    let row_id = self.points.ids[slot];
                    if Some(row_id) == exclude {
                        continue;
                    }
                    top.offer(Neighbor {
                        index: row_id,
                        distance: distance.eval(query, self.points.row(slot)),
                    });
                }
            }
            NodeKind::Split { left, right } => {
                let bl = self.lower_bound(&self.nodes[left], query, distance, gaps);
                let br = self.lower_bound(&self.nodes[right], query, distance, gaps);
                let (first, b1, second, b2) = if bl <= br {
                    (left, bl, right, br)
                } else {
                    (right, br, left, bl)
                };
                if !prunable(b1, top.worst()) {
                    self.search(first, query, distance, exclude, top, gaps);
                }
                if !prunable(b2, top.worst()) {
                    self.search(second, query, distance, exclude, top, gaps);
                }
            }
        }
    }
}

/// A box is skipped only when its bound is strictly beyond the k-th distance
/// by more than a rounding margin, so exact ties are always examined.
fn prunable(bound: f64, worst: f64) -> bool {
    worst.is_finite() && bound > worst * (1.0 + 1e-9) + 1e-300
}

fn build_node(
    points: &Points,
    order: &mut [usize],
    offset: usize,
    leaf_size: usize,
    distance: &Distance,
    nodes: &mut Vec<Node>,
) -> usize {
    let dim = points.dim;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &slot in order.iter() {
        for (i, v) in points.row(slot).iter().enumerate() {
            lo[i] = lo[i].min(*v);
            hi[i] = hi[i].max(*v);
        }
    }
    let id = nodes.len();
    nodes.push(Node {
        lo: lo.clone(),
        hi: hi.clone(),
        kind: NodeKind::Leaf {
            start: offset,
            end: offset + order.len(),
        },
    });
    if order.len() <= leaf_size {
        return id;
    }
    let (axis, spread) = (0..dim)
        .map(|i| (i, (hi[i] - lo[i]) * distance.axis_weight(i)))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if spread <= 0.0 {
        return id;
    }
    order.sort_by(|&a, &b| {
        points.row(a)[axis]
            .total_cmp(&points.row(b)[axis])
            .then(a.cmp(&b))
    });
    // cut between distinct values when possible so duplicates stay together
    let mid = order.len() / 2;
    let pivot = points.row(order[mid])[axis];
    let mut cut = order.partition_point(|&s| points.row(s)[axis] < pivot);
    if cut == 0 {
        cut = order.partition_point(|&s| points.row(s)[axis] <= pivot);
    }
    if cut == 0 || cut == order.len() {
        cut = mid;
    }
    let (left_part, right_part) = order.split_at_mut(cut);
    let left = build_node(points, left_part, offset, leaf_size, distance, nodes);
    let right = build_node(points, right_part, offset + cut, leaf_size, distance, nodes);
    nodes[id].kind = NodeKind::Split { left, right };
    id
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Brute,
    #[default]
    KdTree,
}

/// Either index behind one query interface.
#[derive(Debug, Clone)]
pub enum NeighborIndex {
    Brute(BruteForce),
    KdTree(KdTree),
}

impl NeighborIndex {
    pub fn build(
        kind: IndexKind,
        matrix: ArrayView2<'_, f64>,
        ids: &[usize],
        distance: &Distance,
    ) -> Result<Self> {
        distance.validate(matrix.ncols())?;
        Ok(match kind {
            IndexKind::Brute => NeighborIndex::Brute(BruteForce::build(matrix, ids)?),
            IndexKind::KdTree => {
                NeighborIndex::KdTree(KdTree::build(matrix, ids, DEFAULT_LEAF_SIZE, distance)?)
            }
        })
    }

    pub fn len(&self) -> usize {
        match self {
            NeighborIndex::Brute(b) => b.points.len(),
            NeighborIndex::KdTree(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn query(
        &self,
        query: &[f64],
        k: usize,
        distance: &Distance,
        exclude: Option<usize>,
    ) -> Result<Vec<Neighbor>> {
        match self {
            NeighborIndex::Brute(b) => b.query(query, k, distance, exclude),
            NeighborIndex::KdTree(t) => t.query(query, k, distance, exclude),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn metric_values() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 2.0, 2.0];
        assert_eq!(Distance::Euclidean.eval(&a, &b), 3.0);
        assert_eq!(Distance::Manhattan.eval(&a, &b), 5.0);
        assert_eq!(Distance::Chebyshev.eval(&a, &b), 2.0);
        let m3 = Distance::Minkowski { p: 3.0 }.eval(&a, &b);
        assert!((m3 - 17f64.cbrt()).abs() < 1e-12);
        let w = Distance::WeightedMinkowski {
            p: 2.0,
            weights: vec![4.0, 0.0, 1.0],
        };
        assert!((w.eval(&a, &b) - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(Distance::Minkowski { p: 0.5 }.validate(2).is_err());
        let zero = Distance::WeightedMinkowski {
            p: 2.0,
            weights: vec![0.0, 0.0],
        };
        assert!(zero.validate(2).is_err());
        let short = Distance::WeightedMinkowski {
            p: 2.0,
            weights: vec![1.0],
        };
        assert!(matches!(short.validate(2), Err(Error::Shape { .. })));
        let neg = Distance::WeightedMinkowski {
            p: 1.0,
            weights: vec![1.0, -1.0],
        };
        assert!(neg.validate(2).is_err());
    }

    #[test]
    fn serde_shape() {
        let d: Distance = serde_json::from_str(r#"{"metric":"minkowski","p":3}"#).unwrap();
        assert_eq!(d, Distance::Minkowski { p: 3.0 });
        let d: Distance = serde_json::from_str(r#"{"metric":"euclidean"}"#).unwrap();
        assert_eq!(d, Distance::Euclidean);
    }

    #[test]
    fn identity_query_and_ties() {
        let m = Array2::from_shape_vec((4, 1), vec![1.0, 0.0, 1.0, 2.0]).unwrap();
        for kind in [IndexKind::Brute, IndexKind::KdTree] {
            let idx = NeighborIndex::build(kind, m.view(), &[0, 1, 2, 3], &Distance::Euclidean)
                .unwrap();
            let got = idx.query(&[1.0], 1, &Distance::Euclidean, None).unwrap();
            assert_eq!(got, vec![Neighbor { index: 0, distance: 0.0 }]);
            let got = idx.query(&[1.0], 2, &Distance::Euclidean, Some(0)).unwrap();
            assert_eq!(got[0].index, 2);
            assert_eq!(got[1].index, 1);
            assert!(idx.query(&[1.0], 5, &Distance::Euclidean, None).is_err());
            assert!(idx.query(&[1.0], 0, &Distance::Euclidean, None).is_err());
        }
    }

    #[test]
    fn kdtree_handles_duplicates() {
        let m = Array2::from_shape_fn((200, 3), |(i, j)| ((i / 10 + j) % 3) as f64 / 2.0);
        let ids: Vec<usize> = (0..200).collect();
        let tree = KdTree::build(m.view(), &ids, 4, &Distance::Euclidean).unwrap();
        let brute = BruteForce::build(m.view(), &ids).unwrap();
        for q in 0..200 {
            let row = m.row(q).to_vec();
            assert_eq!(
                tree.query(&row, 15, &Distance::Manhattan, Some(q)).unwrap(),
                brute.query(&row, 15, &Distance::Manhattan, Some(q)).unwrap()
            );
        }
    }
}
