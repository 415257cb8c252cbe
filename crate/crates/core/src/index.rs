//! Scale-bucketed approximate nearest-neighbour search.
//!
//! Each bucket holds a forest of randomized kd-trees searched best-bin-first.
//! Every node stores the bounding box of its points, so the priority of a
//! pending branch is a true lower bound on any distance inside it. With an
//! unlimited check budget the search is therefore exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{squared_distance, Descriptor, WorldFeature};

pub const BUCKET_COUNT: usize = 10;
pub const DEFAULT_CHECKS: usize = 32;
pub const DEFAULT_TREES: usize = 4;
pub const DEFAULT_LEAF_SIZE: usize = 48;
/// Split dimension is drawn from this many highest-variance dimensions.
const SPLIT_CANDIDATES: usize = 5;
/// Points sampled to estimate per-dimension variance at a node.
const VARIANCE_SAMPLE: usize = 128;

/// Eleven ascending scale values delimiting ten buckets. Bucket `i` covers
/// `[edges[i], edges[i+1])`; scales outside the range clamp to the end
/// buckets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleBuckets {
    edges: [f32; BUCKET_COUNT + 1],
}

impl ScaleBuckets {
    pub fn new(edges: [f32; BUCKET_COUNT + 1]) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("bucket edges must be finite and strictly ascending".into()));
        }
        Ok(Self { edges })
    }

    /// Equal-count quantiles of `scales`. Ties are nudged apart so the edges
    /// stay strictly ascending.
    pub fn from_scales(scales: &[f32]) -> Result<Self> {
        let mut sorted: Vec<f32> = scales.iter().copied().filter(|s| s.is_finite() && *s > 0.0).collect();
        if sorted.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        sorted.sort_by(f32::total_cmp);
        let n = sorted.len();
        let mut edges = [0.0f32; BUCKET_COUNT + 1];
        for (i, e) in edges.iter_mut().enumerate() {
            let idx = (i * (n - 1)) / BUCKET_COUNT;
            *e = sorted[idx];
        }
        for i in 1..edges.len() {
            if edges[i] <= edges[i - 1] {
                edges[i] = next_up(edges[i - 1]);
            }
        }
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f32; BUCKET_COUNT + 1] {
        &self.edges
    }

    pub fn bucket_of(&self, scale: f32) -> usize {
        // number of interior edges at or below the scale
        self.edges[1..BUCKET_COUNT].partition_point(|&e| e <= scale)
    }
}

fn next_up(v: f32) -> f32 {
    let step = (v.abs() * f32::EPSILON).max(f32::MIN_POSITIVE);
    v + step
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexParams {
    pub trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self { trees: DEFAULT_TREES, leaf_size: DEFAULT_LEAF_SIZE, seed: 0 }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 || self.leaf_size == 0 {
            return Err(Error::InvalidParameter("trees and leaf_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split { dim: usize, value: f32, left: u32, right: u32 },
    Leaf { start: u32, end: u32 },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    /// Per node: `dim` minima followed by `dim` maxima.
    boxes: Vec<f32>,
    /// Point indices, grouped by leaf.
    order: Vec<u32>,
}

/// Randomized kd-forest over a fixed point set.
#[derive(Debug, Clone)]
pub struct KdForest {
    dim: usize,
    points: Vec<f32>,
    ids: Vec<u32>,
    trees: Vec<Tree>,
}

#[derive(Clone, Copy, PartialEq)]
struct Pending {
    bound: f32,
    tree: u32,
    node: u32,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on bound; tree and node make the order total
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best `m` candidates, sorted by (distance, id).
struct Best {
    m: usize,
    items: Vec<(f32, u32, u32)>,
}

impl Best {
    fn worst(&self) -> f32 {
        if self.items.len() < self.m {
            f32::INFINITY
        } else {
            self.items[self.items.len() - 1].0
        }
    }

    fn offer(&mut self, dist: f32, id: u32, slot: u32) {
        if self.items.len() == self.m {
            let (wd, wid, _) = self.items[self.m - 1];
            if dist > wd || (dist == wd && id >= wid) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&(d, i, _)| d < dist || (d == dist && i < id));
        self.items.insert(pos, (dist, id, slot));
    }
}

fn box_distance(bx: &[f32], q: &[f32]) -> f32 {
    let dim = q.len();
    let (lo, hi) = bx.split_at(dim);
    let mut acc = 0.0;
    for ((&v, &l), &h) in q.iter().zip(lo).zip(hi) {
        let d = if v < l {
            l - v
        } else if v > h {
            v - h
        } else {
            0.0
        };
        acc += d * d;
    }
    acc
}

impl KdForest {
    /// Builds a forest over row-major `points` of width `dim`, labelled by
    /// `ids`.
    pub fn build(points: Vec<f32>, dim: usize, ids: Vec<u32>, params: &IndexParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 || points.len() != dim * ids.len() {
            return Err(Error::DimensionMismatch { expected: dim * ids.len(), actual: points.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut forest = KdForest { dim, points, ids, trees: Vec::with_capacity(params.trees) };
        if !forest.ids.is_empty() {
            for _ in 0..params.trees {
                let tree = forest.build_tree(&mut rng, params.leaf_size);
                forest.trees.push(tree);
            }
        }
        Ok(forest)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, i: u32) -> &[f32] {
        let i = i as usize;
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build_tree(&self, rng: &mut ChaCha8Rng, leaf_size: usize) -> Tree {
        let mut tree = Tree { nodes: Vec::new(), boxes: Vec::new(), order: (0..self.ids.len() as u32).collect() };
        let n = tree.order.len();
        self.build_node(&mut tree, 0, n, rng, leaf_size);
        tree
    }

    fn build_node(&self, tree: &mut Tree, start: usize, end: usize, rng: &mut ChaCha8Rng, leaf_size: usize) -> u32 {
        let dim = self.dim;
        let id = tree.nodes.len() as u32;
        let mut bx = vec![f32::INFINITY; dim];
        bx.extend(std::iter::repeat_n(f32::NEG_INFINITY, dim));
        for &p in &tree.order[start..end] {
            for (d, &v) in self.point(p).iter().enumerate() {
                bx[d] = bx[d].min(v);
                bx[dim + d] = bx[dim + d].max(v);
            }
        }
        tree.boxes.extend_from_slice(&bx);
        tree.nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
        if end - start <= leaf_size {
            return id;
        }

        // variance over a prefix sample of the node's points
        let count = (end - start).min(VARIANCE_SAMPLE);
        let mut mean = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        for &p in &tree.order[start..start + count] {
            for (d, &v) in self.point(p).iter().enumerate() {
                mean[d] += v as f64;
                sq[d] += v as f64 * v as f64;
            }
        }
        let mut ranked: Vec<(f64, usize)> = (0..dim)
            .map(|d| {
                let m = mean[d] / count as f64;
                (sq[d] / count as f64 - m * m, d)
            })
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if ranked[0].0 <= 0.0 && bx[ranked[0].1] == bx[dim + ranked[0].1] {
            // the sample is degenerate; fall back to the widest box side
            let widest =
                (0..dim).max_by(|&a, &b| (bx[dim + a] - bx[a]).total_cmp(&(bx[dim + b] - bx[b])).then(b.cmp(&a)));
            let d = widest.expect("dim > 0");
            if bx[dim + d] <= bx[d] {
                return id; // all points identical
            }
            ranked.retain(|r| r.1 == d);
        }
        let candidates = ranked.iter().take(SPLIT_CANDIDATES).filter(|r| r.0 > 0.0).count().max(1);
        let split_dim = ranked[rng.random_range(0..candidates)].1;
        let mut value = (mean[split_dim] / count as f64) as f32;

        let slice = &mut tree.order[start..end];
        let mut mid = partition(slice, |p| self.point(p)[split_dim] < value);
        if mid == 0 || mid == slice.len() {
            // mean split left one side empty; split at the median instead
            slice.sort_by(|&a, &b| self.point(a)[split_dim].total_cmp(&self.point(b)[split_dim]).then(a.cmp(&b)));
            let half = slice.len() / 2;
            value = self.point(slice[half])[split_dim];
            mid = slice.partition_point(|&p| self.point(p)[split_dim] < value);
            if mid == 0 {
                mid = slice.partition_point(|&p| self.point(p)[split_dim] <= value);
                if mid == slice.len() {
                    return id;
                }
                value = self.point(slice[mid])[split_dim];
            }
        }
        let left = self.build_node(tree, start, start + mid, rng, leaf_size);
        let right = self.build_node(tree, start + mid, end, rng, leaf_size);
        tree.nodes[id as usize] = Node::Split { dim: split_dim, value, left, right };
        id
    }

    /// Up to `m` approximate nearest neighbours as `(id, squared distance)`,
    /// closest first. `checks` bounds the number of leaves scanned once at
    /// least `m` candidates are known; `usize::MAX` searches exhaustively.
    pub fn knn(&self, q: &[f32], m: usize, checks: usize) -> Result<Vec<(u32, f32)>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: q.len() });
        }
        if self.ids.is_empty() || m == 0 {
            return Ok(Vec::new());
        }
        let dim = self.dim;
        let mut seen = vec![0u64; self.ids.len().div_ceil(64)];
        let mut best = Best { m, items: Vec::with_capacity(m + 1) };
        let mut heap = BinaryHeap::new();
        for (t, tree) in self.trees.iter().enumerate() {
            heap.push(Pending { bound: box_distance(&tree.boxes[..2 * dim], q), tree: t as u32, node: 0 });
        }
        let mut leaves = 0usize;
        while let Some(Pending { bound, tree: t, node }) = heap.pop() {
            if bound > best.worst() {
                break;
            }
            if leaves >= checks && best.items.len() == m {
                break;
            }
            let tree = &self.trees[t as usize];
            let mut node = node as usize;
            loop {
                match tree.nodes[node] {
                    Node::Split { dim: d, value, left, right } => {
                        let (near, far) = if q[d] < value { (left, right) } else { (right, left) };
                        let fb = box_distance(&tree.boxes[far as usize * 2 * dim..(far as usize + 1) * 2 * dim], q);
                        if fb <= best.worst() {
                            heap.push(Pending { bound: fb, tree: t, node: far });
                        }
                        node = near as usize;
                    }
                    Node::Leaf { start, end } => {
                        for &p in &tree.order[start as usize..end as usize] {
                            let (w, b) = (p as usize / 64, 1u64 << (p % 64));
                            if seen[w] & b != 0 {
                                continue;
                            }
                            seen[w] |= b;
                            best.offer(squared_distance(self.point(p), q), self.ids[p as usize], p);
                        }
                        leaves += 1;
                        break;
                    }
                }
            }
        }
        Ok(best.items.into_iter().map(|(d, id, _)| (id, d)).collect())
    }

    /// Exact search by linear scan; ties go to the smaller id.
    pub fn linear_knn(&self, q: &[f32], m: usize) -> Vec<(u32, f32)> {
        let mut best = Best { m, items: Vec::with_capacity(m + 1) };
        if m == 0 {
            return Vec::new();
        }
        for p in 0..self.ids.len() as u32 {
            best.offer(squared_distance(self.point(p), q), self.ids[p as usize], p);
        }
        best.items.into_iter().map(|(d, id, _)| (id, d)).collect()
    }
}

/// Unstable in-place partition; returns the number of elements satisfying
/// `pred`, which end up at the front.
fn partition<F: Fn(u32) -> bool>(v: &mut [u32], pred: F) -> usize {
    let mut i = 0;
    for j in 0..v.len() {
        if pred(v[j]) {
            v.swap(i, j);
            i += 1;
        }
    }
    i
}

/// One kd-forest per scale bucket over a database's projected descriptors.
#[derive(Debug, Clone)]
pub struct AnnIndex {
    buckets: ScaleBuckets,
    forests: Vec<KdForest>,
    dim: usize,
}

impl AnnIndex {
    /// Indexes `features` by position in the slice.
    pub fn build(features: &[WorldFeature], buckets: ScaleBuckets, params: &IndexParams) -> Result<Self> {
        params.validate()?;
        let dim = features.first().map(|f| f.descriptor.dim()).ok_or(Error::NoFeatures)?;
        let mut parts: Vec<(Vec<f32>, Vec<u32>)> = vec![(Vec::new(), Vec::new()); BUCKET_COUNT];
        for (i, f) in features.iter().enumerate() {
            if f.descriptor.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: f.descriptor.dim() });
            }
            let part = &mut parts[buckets.bucket_of(f.scale)];
            part.0.extend_from_slice(f.descriptor.values());
            part.1.push(i as u32);
        }
        let make = |(b, (points, ids)): (usize, (Vec<f32>, Vec<u32>))| {
            let p = IndexParams { seed: params.seed ^ (b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), ..*params };
            KdForest::build(points, dim, ids, &p)
        };
        #[cfg(feature = "parallel")]
        let forests = {
            use rayon::prelude::*;
            parts.into_par_iter().enumerate().map(make).collect::<Result<Vec<_>>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let forests = parts.into_iter().enumerate().map(make).collect::<Result<Vec<_>>>()?;
        Ok(Self { buckets, forests, dim })
    }

    pub fn buckets(&self) -> &ScaleBuckets {
        &self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket_sizes(&self) -> [usize; BUCKET_COUNT] {
        let mut out = [0; BUCKET_COUNT];
        for (o, f) in out.iter_mut().zip(&self.forests) {
            *o = f.len();
        }
        out
    }

    pub fn len(&self) -> usize {
        self.forests.iter().map(KdForest::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forest(&self, bucket: usize) -> &KdForest {
        &self.forests[bucket]
    }

    /// Approximate nearest neighbour in the bucket of `scale`, or `None` if
    /// that bucket is empty.
    pub fn query(&self, desc: &Descriptor, scale: f32, checks: usize) -> Result<Option<(u32, f32)>> {
        Ok(self.query_knn(desc, scale, 1, checks)?.into_iter().next())
    }

    pub fn query_knn(&self, desc: &Descriptor, scale: f32, m: usize, checks: usize) -> Result<Vec<(u32, f32)>> {
        if desc.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: desc.dim() });
        }
        self.forests[self.buckets.bucket_of(scale)].knn(desc.values(), m, checks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Pose2;
    use proptest::prelude::*;
    use rand::Rng;

    fn edges() -> ScaleBuckets {
        ScaleBuckets::new([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]).unwrap()
    }

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| rng.random::<f32>()).collect()
    }

    #[test]
    fn bucket_boundaries() {
        let b = edges();
        assert_eq!(b.bucket_of(0.1), 0);
        assert_eq!(b.bucket_of(1.0), 0);
        assert_eq!(b.bucket_of(1.999), 0);
        assert_eq!(b.bucket_of(2.0), 1);
        assert_eq!(b.bucket_of(b.edges()[5]), 5);
        assert_eq!(b.bucket_of(10.5), 9);
        assert_eq!(b.bucket_of(11.0), 9);
        assert_eq!(b.bucket_of(1e9), 9);
    }

    #[test]
    fn edges_must_ascend() {
        assert!(ScaleBuckets::new([1.0, 1.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]).is_err());
        let b = ScaleBuckets::from_scales(&[2.0; 50]).unwrap();
        assert!(b.edges().windows(2).all(|w| w[0] < w[1]));
        assert!(ScaleBuckets::from_scales(&[]).is_err());
    }

    #[test]
    fn quantile_edges_balance_counts() {
        let scales: Vec<f32> = (1..=1000).map(|i| 1.6 * 1.002f32.powi(i)).collect();
        let b = ScaleBuckets::from_scales(&scales).unwrap();
        let mut counts = [0usize; BUCKET_COUNT];
        for &s in &scales {
            counts[b.bucket_of(s)] += 1;
        }
        assert!(counts.iter().all(|&c| (90..=110).contains(&c)), "{counts:?}");
    }

    proptest! {
        #[test]
        fn every_scale_has_one_bucket(s in 0.01f32..100.0) {
            let b = edges();
            let i = b.bucket_of(s);
            prop_assert!(i < BUCKET_COUNT);
            let e = b.edges();
            let inside = (i == 0 || s >= e[i]) && (i == BUCKET_COUNT - 1 || s < e[i + 1]);
            prop_assert!(inside);
        }
    }

    #[test]
    fn single_point_is_its_own_neighbour() {
        let f = KdForest::build(vec![0.5, 0.25], 2, vec![7], &IndexParams::default()).unwrap();
        assert_eq!(f.knn(&[0.5, 0.25], 1, DEFAULT_CHECKS).unwrap(), vec![(7, 0.0)]);
    }

    #[test]
    fn exhaustive_search_matches_linear_scan() {
        let n = 3000;
        let pts = random_points(n, 16, 1);
        let ids: Vec<u32> = (0..n as u32).collect();
        let f = KdForest::build(pts, 16, ids, &IndexParams::default()).unwrap();
        let qs = random_points(200, 16, 2);
        for q in qs.chunks(16) {
            assert_eq!(f.knn(q, 3, usize::MAX).unwrap(), f.linear_knn(q, 3));
        }
    }

    #[test]
    fn exhaustive_tie_break_prefers_smaller_id() {
        let pts = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let f = KdForest::build(pts, 2, vec![9, 3, 5, 4], &IndexParams { leaf_size: 1, ..Default::default() }).unwrap();
        assert_eq!(f.knn(&[1.0, 1.0], 1, usize::MAX).unwrap(), vec![(4, 0.0)]);
    }

    #[test]
    fn stored_points_are_found() {
        let n = 2000;
        let pts = random_points(n, 16, 3);
        let f = KdForest::build(pts.clone(), 16, (0..n as u32).collect(), &IndexParams::default()).unwrap();
        for i in (0..n).step_by(37) {
            let got = f.knn(&pts[i * 16..(i + 1) * 16], 1, DEFAULT_CHECKS).unwrap();
            assert_eq!(got, vec![(i as u32, 0.0)]);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let pts = random_points(1000, 8, 4);
        let a = KdForest::build(pts.clone(), 8, (0..1000).collect(), &IndexParams::default()).unwrap();
        let b = KdForest::build(pts, 8, (0..1000).collect(), &IndexParams::default()).unwrap();
        let qs = random_points(50, 8, 5);
        for q in qs.chunks(8) {
            assert_eq!(a.knn(q, 2, 4).unwrap(), b.knn(q, 2, 4).unwrap());
        }
        for (ta, tb) in a.trees.iter().zip(&b.trees) {
            assert_eq!(ta.order, tb.order);
        }
    }

    #[test]
    fn duplicate_points_do_not_recurse_forever() {
        let pts = vec![0.3f32; 4 * 100];
        let f =
            KdForest::build(pts, 4, (0..100).collect(), &IndexParams { leaf_size: 2, ..Default::default() }).unwrap();
        assert_eq!(f.knn(&[0.3; 4], 1, 1).unwrap(), vec![(0, 0.0)]);
    }

    #[test]
    fn recall_on_uniform_points() {
        // uniform 16-d data is the hard case; projected descriptors do better
        let n = 10_000;
        for seed in 0..5 {
            let pts = random_points(n, 16, 100 + seed);
            let params = IndexParams { seed, ..Default::default() };
            let f = KdForest::build(pts, 16, (0..n as u32).collect(), &params).unwrap();
            let qs = random_points(400, 16, 200 + seed);
            let hits =
                qs.chunks(16).filter(|q| f.knn(q, 1, DEFAULT_CHECKS).unwrap()[0].0 == f.linear_knn(q, 1)[0].0).count();
            let recall = hits as f64 / 400.0;
            assert!(recall >= 0.9, "seed {seed}: recall {recall}");
        }
    }

    fn feature(scale: f32, values: Vec<f32>) -> WorldFeature {
        WorldFeature { pose: Pose2::IDENTITY, scale, descriptor: Descriptor(values), image_id: 0 }
    }

    #[test]
    fn ann_index_partitions_by_scale() {
        let feats: Vec<WorldFeature> = (0..200).map(|i| feature(1.0 + (i % 10) as f32, vec![i as f32, 0.0])).collect();
        let idx = AnnIndex::build(&feats, edges(), &IndexParams::default()).unwrap();
        assert_eq!(idx.bucket_sizes().iter().sum::<usize>(), 200);
        assert!(idx.bucket_sizes().iter().all(|&c| c == 20));
        // a stored descriptor with its own scale finds itself
        let got = idx.query(&feats[42].descriptor, feats[42].scale, DEFAULT_CHECKS).unwrap();
        assert_eq!(got, Some((42, 0.0)));
        // same descriptor, wrong bucket: nearest within that bucket only
        let (id, d) = idx.query(&feats[42].descriptor, 1.0, usize::MAX).unwrap().unwrap();
        assert_eq!(feats[id as usize].scale, 1.0);
        assert!(d > 0.0);
        assert!(matches!(idx.query(&Descriptor(vec![0.0; 3]), 1.0, 1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn empty_bucket_is_no_match() {
        let feats = vec![feature(1.5, vec![0.0, 1.0])];
        let idx = AnnIndex::build(&feats, edges(), &IndexParams::default()).unwrap();
        assert_eq!(idx.query(&Descriptor(vec![0.0, 1.0]), 8.0, 32).unwrap(), None);
        assert_eq!(idx.query(&Descriptor(vec![0.0, 1.0]), 1.5, 32).unwrap(), Some((0, 0.0)));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let feats = vec![feature(1.5, vec![0.0, 1.0]), feature(2.5, vec![0.0])];
        assert!(AnnIndex::build(&feats, edges(), &IndexParams::default()).is_err());
        assert!(matches!(AnnIndex::build(&[], edges(), &IndexParams::default()), Err(Error::NoFeatures)));
    }
}
