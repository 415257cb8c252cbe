//! Map stitching: pairwise rigid registration of overlapping frames and
//! Gauss-Newton pose-graph optimization.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{squared_distance, ImageFeatures};
use crate::mapdb::MapImage;
use crate::pose::Pose2;
use crate::rigid::{ransac, Point, RansacConfig};

pub const DEFAULT_MIN_INLIERS: usize = 8;
pub const DEFAULT_RATIO: f32 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegisterConfig {
    /// Lowe ratio between first and second nearest descriptor distance.
    pub ratio: f32,
    pub min_inliers: usize,
    pub ransac: RansacConfig,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self { ratio: DEFAULT_RATIO, min_inliers: DEFAULT_MIN_INLIERS, ransac: RansacConfig::default() }
    }
}

/// Relative pose between two frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConstraint {
    pub image_a: u32,
    pub image_b: u32,
    /// Pose of frame b in frame a: maps b's pixels to a's pixels.
    pub rel: Pose2,
    pub inlier_count: usize,
    /// RMS inlier residual in pixels.
    pub residual: f64,
    /// Information of the residual `(x, y, θ)` in unit pixel variance,
    /// from the inlier positions in frame b. `None` falls back to an
    /// inlier-count weight with the configured rotation weight.
    #[serde(default)]
    pub information: Option<[[f64; 3]; 3]>,
}

/// Information of a rigid fit whose source points are `pts`: a perturbation
/// `(x, y, θ)` applied on the source side moves point `p` by
/// `(x - θ·p_y, y + θ·p_x)`.
pub fn fit_information(pts: impl IntoIterator<Item = Point>) -> [[f64; 3]; 3] {
    let (mut n, mut sx, mut sy, mut ss) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in pts {
        n += 1.0;
        sx += x;
        sy += y;
        ss += x * x + y * y;
    }
    [[n, 0.0, -sy], [0.0, n, sx], [-sy, sx, ss]]
}

/// Ratio-tested nearest-neighbour matches from `b` into `a`, as
/// `(index in a, index in b)`.
pub fn match_descriptors(a: &ImageFeatures, b: &ImageFeatures, ratio: f32) -> Vec<(usize, usize)> {
    if a.len() < 2 {
        return Vec::new();
    }
    let ratio2 = ratio * ratio;
    let best = |j: usize| {
        let q = b.descriptors[j].values();
        let (mut d1, mut d2, mut i1) = (f32::INFINITY, f32::INFINITY, 0);
        for (i, d) in a.descriptors.iter().enumerate() {
            let dist = squared_distance(d.values(), q);
            if dist < d1 {
                d2 = d1;
                d1 = dist;
                i1 = i;
            } else if dist < d2 {
                d2 = dist;
            }
        }
        (d1 < ratio2 * d2).then_some((i1, j))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..b.len()).into_par_iter().filter_map(best).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..b.len()).filter_map(best).collect()
    }
}

/// Registers frame `b` against frame `a`. Returns `None` when the frames do
/// not share enough consistent matches.
pub fn register_pair(
    (id_a, a): (u32, &ImageFeatures),
    (id_b, b): (u32, &ImageFeatures),
    cfg: &RegisterConfig,
) -> Option<PairConstraint> {
    let matches = match_descriptors(a, b, cfg.ratio);
    if matches.len() < cfg.min_inliers.max(2) {
        return None;
    }
    let src: Vec<Point> = matches.iter().map(|&(_, j)| (b.keypoints[j].x as f64, b.keypoints[j].y as f64)).collect();
    let dst: Vec<Point> = matches.iter().map(|&(i, _)| (a.keypoints[i].x as f64, a.keypoints[i].y as f64)).collect();
    let fit = ransac(&src, &dst, &cfg.ransac)?;
    if fit.inliers.len() < cfg.min_inliers {
        return None;
    }
    let information = fit_information(fit.inliers.iter().map(|&i| src[i]));
    Some(PairConstraint {
        image_a: id_a,
        image_b: id_b,
        rel: fit.pose,
        inlier_count: fit.inliers.len(),
        residual: fit.rms,
        information: Some(information),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraph {
    pub nodes: Vec<(u32, Pose2)>,
    pub edges: Vec<PairConstraint>,
    pub gauge: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub max_iterations: usize,
    /// Stop when the update norm falls below this.
    pub tolerance: f64,
    /// Length in pixels that one radian of rotation residual counts as.
    pub rotation_weight: f64,
}

impl OptimizeConfig {
    /// Rotation weight of half the frame diagonal.
    pub fn for_frame(width: u32, height: u32) -> Self {
        Self { rotation_weight: 0.5 * (width as f64).hypot(height as f64), ..Self::default() }
    }
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-10, rotation_weight: 800.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    /// Same order as the graph's nodes.
    pub poses: Vec<(u32, Pose2)>,
    pub initial_cost: f64,
    /// Sum of squared weighted residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted residual `(t, w·θ)` of `E = rel⁻¹ ∘ a⁻¹ ∘ b`.
pub fn edge_residual(a: &Pose2, b: &Pose2, rel: &Pose2, w: f64) -> [f64; 3] {
    let e = rel.inverse().compose(&a.inverse().compose(b));
    [e.tx, e.ty, w * e.theta]
}

/// Residual and its Jacobians with respect to `(θ, x, y)` of `a` and `b`.
fn edge_linearization(a: &Pose2, b: &Pose2, rel: &Pose2, w: f64) -> ([f64; 3], [[f64; 3]; 3], [[f64; 3]; 3]) {
    let r = edge_residual(a, b, rel, w);
    let (sa, ca) = a.theta.sin_cos();
    let (sr, cr) = rel.theta.sin_cos();
    // M = R_relᵀ R_aᵀ, rotation by -(θ_rel + θ_a)
    let (sm, cm) = (-(rel.theta + a.theta)).sin_cos();
    let (dx, dy) = (b.tx - a.tx, b.ty - a.ty);
    // d(R_aᵀ)/dθ_a applied to (dx, dy), then R_relᵀ
    let (ux, uy) = (-sa * dx + ca * dy, -ca * dx - sa * dy);
    let (vx, vy) = (cr * ux + sr * uy, -sr * ux + cr * uy);
    let ja = [[vx, -cm, sm], [vy, -sm, -cm], [-w, 0.0, 0.0]];
    let jb = [[0.0, cm, -sm], [0.0, sm, cm], [w, 0.0, 0.0]];
    (r, ja, jb)
}

/// Edges as `(a, b, rel, information)` over the unweighted residual.
type Edge = (usize, usize, Pose2, [[f64; 3]; 3]);

fn quadratic(m: &[[f64; 3]; 3], r: &[f64; 3]) -> f64 {
    (0..3).map(|p| r[p] * (0..3).map(|q| m[p][q] * r[q]).sum::<f64>()).sum()
}

fn total_cost(poses: &[Pose2], edges: &[Edge]) -> f64 {
    edges.iter().map(|(a, b, rel, info)| quadratic(info, &edge_residual(&poses[*a], &poses[*b], rel, 1.0))).sum()
}

fn edge_information(c: &PairConstraint, w: f64) -> [[f64; 3]; 3] {
    c.information.unwrap_or_else(|| {
        let s = c.inlier_count.max(1) as f64;
        [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s * w * w]]
    })
}

/// Minimizes the summed edge residuals under each constraint's information,
/// with the gauge node held at identity. Initial estimates are re-expressed
/// relative to the gauge first.
pub fn optimize(graph: &PoseGraph, cfg: &OptimizeConfig) -> Result<OptimizeResult> {
    let index: HashMap<u32, usize> = graph.nodes.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
    let gauge = *index.get(&graph.gauge).ok_or(Error::UnknownNode(graph.gauge))?;
    let mut edges = Vec::with_capacity(graph.edges.len());
    let mut adjacency = vec![Vec::new(); graph.nodes.len()];
    for e in &graph.edges {
        let a = *index.get(&e.image_a).ok_or(Error::UnknownNode(e.image_a))?;
        let b = *index.get(&e.image_b).ok_or(Error::UnknownNode(e.image_b))?;
        edges.push((a, b, e.rel, edge_information(e, cfg.rotation_weight)));
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    let mut seen = vec![false; graph.nodes.len()];
    seen[gauge] = true;
    let mut queue = VecDeque::from([gauge]);
    while let Some(n) = queue.pop_front() {
        for &m in &adjacency[n] {
            if !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::DisconnectedGraph(graph.nodes[i].0));
    }

    let to_gauge = graph.nodes[gauge].1.inverse();
    let mut poses: Vec<Pose2> = graph.nodes.iter().map(|(_, p)| to_gauge.compose(p)).collect();
    poses[gauge] = Pose2::IDENTITY;
    // state column of each node; the gauge has none
    let col: Vec<Option<usize>> = {
        let mut next = 0;
        (0..poses.len())
            .map(|i| {
                (i != gauge).then(|| {
                    next += 3;
                    next - 3
                })
            })
            .collect()
    };
    let n = 3 * (poses.len() - 1);
    let initial_cost = total_cost(&poses, &edges);
    let mut cost = initial_cost;
    let mut converged = n == 0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for (a, b, rel, info) in &edges {
            let (r, ja, jb) = edge_linearization(&poses[*a], &poses[*b], rel, 1.0);
            // information-weighted residual and Jacobian rows
            let ir: [f64; 3] = std::array::from_fn(|p| (0..3).map(|q| info[p][q] * r[q]).sum());
            let blocks = [(col[*a], ja), (col[*b], jb)];
            for &(ci, ji) in &blocks {
                let Some(ci) = ci else { continue };
                for p in 0..3 {
                    g[ci + p] += (0..3).map(|k| ji[k][p] * ir[k]).sum::<f64>();
                }
                for &(cj, jj) in &blocks {
                    let Some(cj) = cj else { continue };
                    for p in 0..3 {
                        for q in 0..3 {
                            h[(ci + p, cj + q)] += (0..3)
                                .map(|k| ji[k][p] * (0..3).map(|l| info[k][l] * jj[l][q]).sum::<f64>())
                                .sum::<f64>();
                        }
                    }
                }
            }
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => {
                // rank-deficient: damp lightly
                let damped = h + DMatrix::<f64>::identity(n, n) * 1e-9;
                match damped.cholesky() {
                    Some(ch) => ch.solve(&(-&g)),
                    None => break,
                }
            }
        };
        if step.norm() < cfg.tolerance {
            converged = true;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let trial: Vec<Pose2> = poses
                .iter()
                .enumerate()
                .map(|(i, p)| match col[i] {
                    Some(c) => {
                        Pose2::new(p.theta + alpha * step[c], p.tx + alpha * step[c + 1], p.ty + alpha * step[c + 2])
                    }
                    None => *p,
                })
                .collect();
            let trial_cost = total_cost(&trial, &edges);
            if trial_cost <= cost {
                let gain = cost - trial_cost;
                poses = trial;
                cost = trial_cost;
                accepted = true;
                if alpha * step.norm() < cfg.tolerance || gain <= cost * 1e-15 {
                    converged = true;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no descent along the Newton direction: at a minimum to precision
            converged = true;
        }
    }
    Ok(OptimizeResult {
        poses: graph.nodes.iter().map(|(id, _)| *id).zip(poses).collect(),
        initial_cost,
        cost,
        iterations,
        converged,
    })
}

/// Initial poses by chaining consecutive constraints from identity.
pub fn chain_poses(sequential: &[PairConstraint]) -> Vec<Pose2> {
    let mut poses = vec![Pose2::IDENTITY];
    for c in sequential {
        let last = *poses.last().expect("non-empty");
        poses.push(last.compose(&c.rel));
    }
    poses
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchConfig {
    pub register: RegisterConfig,
    pub optimize: OptimizeConfig,
    pub loop_closures: bool,
    /// Minimum predicted overlap fraction for a loop-closure candidate.
    pub min_overlap: f64,
}

impl StitchConfig {
    pub fn for_frame(width: u32, height: u32) -> Self {
        Self {
            register: RegisterConfig::default(),
            optimize: OptimizeConfig::for_frame(width, height),
            loop_closures: true,
            min_overlap: 0.1,
        }
    }
}

/// Non-consecutive frame pairs whose estimated centres lie within one frame
/// diagonal and whose predicted overlap is at least `min_overlap`.
pub fn loop_closure_candidates(poses: &[Pose2], (w, h): (u32, u32), min_overlap: f64) -> Vec<(usize, usize)> {
    let (w, h) = (w as f64, h as f64);
    let diag = w.hypot(h);
    let centre = (w / 2.0, h / 2.0);
    let mut out = Vec::new();
    for i in 0..poses.len() {
        for j in i + 2..poses.len() {
            let ci = poses[i].apply(centre);
            let cj = poses[j].apply(centre);
            if (ci.0 - cj.0).hypot(ci.1 - cj.1) >= diag {
                continue;
            }
            // overlap of the two rectangles, ignoring their relative rotation
            let local = poses[i].inverse().apply(cj);
            let (dx, dy) = ((local.0 - centre.0).abs(), (local.1 - centre.1).abs());
            let overlap = ((w - dx).max(0.0) * (h - dy).max(0.0)) / (w * h);
            if overlap >= min_overlap {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct StitchOutput {
    pub images: Vec<MapImage>,
    pub sequential: Vec<PairConstraint>,
    pub loop_closures: Vec<PairConstraint>,
    pub optimization: OptimizeResult,
}

fn register_all(
    frames: &[ImageFeatures],
    pairs: &[(usize, usize)],
    cfg: &RegisterConfig,
) -> Vec<Option<PairConstraint>> {
    let run = |&(i, j): &(usize, usize)| {
        let seeded = RegisterConfig {
            ransac: RansacConfig { seed: cfg.ransac.seed ^ ((i as u64) << 32 | j as u64), ..cfg.ransac },
            ..*cfg
        };
        register_pair((i as u32, &frames[i]), (j as u32, &frames[j]), &seeded)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pairs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairs.iter().map(run).collect()
    }
}

/// Stitches frames given in capture order. Frame `i` gets image id `i`;
/// frame 0 is the gauge.
pub fn stitch_sequence(frames: &[ImageFeatures], size: (u32, u32), cfg: &StitchConfig) -> Result<StitchOutput> {
    let image = |i: usize, pose: Pose2| MapImage {
        image_id: i as u32,
        pose,
        width: size.0,
        height: size.1,
        source: String::new(),
    };
    if frames.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let pairs: Vec<(usize, usize)> = (1..frames.len()).map(|i| (i - 1, i)).collect();
    let mut sequential = Vec::with_capacity(pairs.len());
    for (index, c) in register_all(frames, &pairs, &cfg.register).into_iter().enumerate() {
        sequential.push(c.ok_or(Error::BrokenChain { index })?);
    }
    let initial = chain_poses(&sequential);
    let loop_closures: Vec<PairConstraint> = if cfg.loop_closures {
        let candidates = loop_closure_candidates(&initial, size, cfg.min_overlap);
        register_all(frames, &candidates, &cfg.register).into_iter().flatten().collect()
    } else {
        Vec::new()
    };
    let graph = PoseGraph {
        nodes: initial.iter().enumerate().map(|(i, p)| (i as u32, *p)).collect(),
        edges: sequential.iter().chain(&loop_closures).copied().collect(),
        gauge: 0,
    };
    let optimization = optimize(&graph, &cfg.optimize)?;
    let images = optimization.poses.iter().map(|&(id, p)| image(id as usize, p)).collect();
    Ok(StitchOutput { images, sequential, loop_closures, optimization })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn constraint(a: u32, b: u32, rel: Pose2) -> PairConstraint {
        PairConstraint { image_a: a, image_b: b, rel, inlier_count: 100, residual: 0.0, information: None }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let a = Pose2::new(0.4, 10.0, -5.0);
        let b = Pose2::new(-1.1, 300.0, 120.0);
        let rel = Pose2::new(2.0, -40.0, 7.0);
        let w = 650.0;
        let (_, ja, jb) = edge_linearization(&a, &b, &rel, w);
        let h = 1e-6;
        let perturb = |p: &Pose2, k: usize, d: f64| match k {
            0 => Pose2::new(p.theta + d, p.tx, p.ty),
            1 => Pose2::new(p.theta, p.tx + d, p.ty),
            _ => Pose2::new(p.theta, p.tx, p.ty + d),
        };
        for k in 0..3 {
            let ra = edge_residual(&perturb(&a, k, h), &b, &rel, w);
            let rb = edge_residual(&perturb(&a, k, -h), &b, &rel, w);
            let sa = edge_residual(&a, &perturb(&b, k, h), &rel, w);
            let sb = edge_residual(&a, &perturb(&b, k, -h), &rel, w);
            for r in 0..3 {
                assert!(((ra[r] - rb[r]) / (2.0 * h) - ja[r][k]).abs() < 1e-4, "a r{r} k{k}");
                assert!(((sa[r] - sb[r]) / (2.0 * h) - jb[r][k]).abs() < 1e-4, "b r{r} k{k}");
            }
        }
    }

    #[test]
    fn exact_chain_has_zero_residual() {
        let rels = [Pose2::new(0.1, 400.0, 3.0), Pose2::new(-0.05, 390.0, -8.0), Pose2::new(PI / 2.0, 10.0, 300.0)];
        let edges: Vec<_> = rels.iter().enumerate().map(|(i, r)| constraint(i as u32, i as u32 + 1, *r)).collect();
        let chained = chain_poses(&edges);
        // start from a bad guess
        let nodes = (0..4).map(|i| (i as u32, Pose2::from_translation(i as f64 * 100.0, 0.0))).collect();
        let res = optimize(&PoseGraph { nodes, edges, gauge: 0 }, &OptimizeConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.cost < 1e-12, "{}", res.cost);
        for ((_, got), want) in res.poses.iter().zip(&chained) {
            assert!(got.translation_distance(want) < 1e-6 && got.rotation_distance(want) < 1e-9);
        }
    }

    #[test]
    fn gauge_only_graph() {
        let g = PoseGraph { nodes: vec![(5, Pose2::new(1.0, 2.0, 3.0))], edges: vec![], gauge: 5 };
        let res = optimize(&g, &OptimizeConfig::default()).unwrap();
        assert_eq!(res.poses, vec![(5, Pose2::IDENTITY)]);
    }

    #[test]
    fn disconnected_and_unknown_nodes() {
        let nodes = vec![(0, Pose2::IDENTITY), (1, Pose2::IDENTITY), (2, Pose2::IDENTITY)];
        let g = PoseGraph { nodes: nodes.clone(), edges: vec![constraint(0, 1, Pose2::IDENTITY)], gauge: 0 };
        assert!(matches!(optimize(&g, &OptimizeConfig::default()), Err(Error::DisconnectedGraph(2))));
        let g = PoseGraph { nodes, edges: vec![constraint(0, 9, Pose2::IDENTITY)], gauge: 0 };
        assert!(matches!(optimize(&g, &OptimizeConfig::default()), Err(Error::UnknownNode(9))));
    }

    #[test]
    fn two_node_optimum_matches_grid_search() {
        // two conflicting measurements of the same relative pose
        let m1 = Pose2::new(0.02, 100.0, 0.0);
        let m2 = Pose2::new(-0.01, 104.0, 3.0);
        let w = 50.0;
        let g = PoseGraph {
            nodes: vec![(0, Pose2::IDENTITY), (1, m1)],
            edges: vec![constraint(0, 1, m1), constraint(0, 1, m2)],
            gauge: 0,
        };
        let cfg = OptimizeConfig { rotation_weight: w, ..Default::default() };
        let res = optimize(&g, &cfg).unwrap();
        let cost = |p: &Pose2| {
            // both constraints carry weight 100
            [m1, m2]
                .iter()
                .map(|m| 100.0 * edge_residual(&Pose2::IDENTITY, p, m, w).iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
        };
        let mut best = (f64::INFINITY, Pose2::IDENTITY);
        for i in 0..=60 {
            for j in 0..=60 {
                for k in 0..=60 {
                    let p = Pose2::new(
                        -0.02 + 0.05 * k as f64 / 60.0,
                        99.0 + 6.0 * i as f64 / 60.0,
                        -1.0 + 5.0 * j as f64 / 60.0,
                    );
                    let c = cost(&p);
                    if c < best.0 {
                        best = (c, p);
                    }
                }
            }
        }
        assert!(res.cost <= best.0 + 1e-9);
        let got = res.poses[1].1;
        assert!(got.translation_distance(&best.1) < 0.15 && got.rotation_distance(&best.1) < 1e-3);
    }

    #[test]
    fn square_loop_spreads_error() {
        let step = 400.0;
        let truth = [
            Pose2::IDENTITY,
            Pose2::from_translation(step, 0.0),
            Pose2::from_translation(step, step),
            Pose2::from_translation(0.0, step),
        ];
        let rel = |a: usize, b: usize| truth[a].inverse().compose(&truth[b]);
        let noisy = Pose2::new(0.01, 6.0, -4.0).compose(&rel(3, 0));
        let edges = vec![
            constraint(0, 1, rel(0, 1)),
            constraint(1, 2, rel(1, 2)),
            constraint(2, 3, rel(2, 3)),
            constraint(3, 0, noisy),
        ];
        let nodes: Vec<(u32, Pose2)> = truth.iter().enumerate().map(|(i, p)| (i as u32, *p)).collect();
        let cfg = OptimizeConfig::for_frame(640, 480);
        let g = PoseGraph { nodes, edges, gauge: 0 };
        let res = optimize(&g, &cfg).unwrap();
        let raw =
            100.0 * edge_residual(&truth[3], &truth[0], &noisy, cfg.rotation_weight).iter().map(|v| v * v).sum::<f64>();
        assert!((res.initial_cost - raw).abs() < 1e-9);
        assert!(res.cost < raw);
        // no restricted solution moving only node 3 does better
        let mut grid_best = f64::INFINITY;
        for i in -10..=10 {
            for j in -10..=10 {
                for k in -10..=10 {
                    let mut poses = truth;
                    poses[3] = Pose2::new(k as f64 * 1e-3, i as f64 * 0.6, step + j as f64 * 0.6);
                    let edges: Vec<_> = g
                        .edges
                        .iter()
                        .map(|e| {
                            (e.image_a as usize, e.image_b as usize, e.rel, edge_information(e, cfg.rotation_weight))
                        })
                        .collect();
                    grid_best = grid_best.min(total_cost(&poses, &edges));
                }
            }
        }
        assert!(res.cost <= grid_best + 1e-9);
        // the error is shared: every edge takes some of it
        for e in &g.edges {
            let pa = res.poses[e.image_a as usize].1;
            let pb = res.poses[e.image_b as usize].1;
            let r = edge_residual(&pa, &pb, &e.rel, cfg.rotation_weight);
            assert!(r.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        }
    }

    #[test]
    fn fit_information_matches_numeric_jacobian() {
        let pts = [(10.0, 20.0), (300.0, -40.0), (-5.0, 410.0), (222.0, 111.0)];
        let info = fit_information(pts);
        // finite-difference Jacobian of p ↦ e(p) for e = (x, y, θ)
        let mut num = [[0.0; 3]; 3];
        let h = 1e-6;
        for &(px, py) in &pts {
            let jac: Vec<(f64, f64)> = (0..3)
                .map(|k| {
                    let mut v = [0.0; 3];
                    v[k] = h;
                    let e = Pose2::new(v[2], v[0], v[1]);
                    let (qx, qy) = e.apply((px, py));
                    ((qx - px) / h, (qy - py) / h)
                })
                .collect();
            for a in 0..3 {
                for b in 0..3 {
                    num[a][b] += jac[a].0 * jac[b].0 + jac[a].1 * jac[b].1;
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                assert!(
                    (info[a][b] - num[a][b]).abs() < 1e-3 * (1.0 + num[a][b].abs()),
                    "{a}{b}: {} vs {}",
                    info[a][b],
                    num[a][b]
                );
            }
        }
    }

    #[test]
    fn information_weighted_optimum_matches_grid_search() {
        // a long thin support pins rotation less than a wide one
        let m1 = Pose2::new(0.01, 100.0, 0.0);
        let m2 = Pose2::new(-0.01, 102.0, 2.0);
        let wide = fit_information([(0.0, 0.0), (600.0, 0.0), (0.0, 400.0), (600.0, 400.0)]);
        let thin = fit_information([(0.0, 0.0), (20.0, 0.0), (0.0, 20.0), (20.0, 20.0)]);
        let mut c1 = constraint(0, 1, m1);
        c1.information = Some(wide);
        let mut c2 = constraint(0, 1, m2);
        c2.information = Some(thin);
        let g = PoseGraph { nodes: vec![(0, Pose2::IDENTITY), (1, m1)], edges: vec![c1, c2], gauge: 0 };
        let res = optimize(&g, &OptimizeConfig::default()).unwrap();
        let cost = |p: &Pose2| {
            quadratic(&wide, &edge_residual(&Pose2::IDENTITY, p, &m1, 1.0))
                + quadratic(&thin, &edge_residual(&Pose2::IDENTITY, p, &m2, 1.0))
        };
        let mut best = f64::INFINITY;
        for i in 0..=40 {
            for j in 0..=40 {
                for k in 0..=40 {
                    let p = Pose2::new(
                        -0.012 + 0.024 * k as f64 / 40.0,
                        99.0 + 4.0 * i as f64 / 40.0,
                        -1.0 + 4.0 * j as f64 / 40.0,
                    );
                    best = best.min(cost(&p));
                }
            }
        }
        assert!(res.cost <= best + 1e-9);
        assert!((res.cost - cost(&res.poses[1].1)).abs() < 1e-9);
        // rotation follows the wide support
        assert!((res.poses[1].1.theta - 0.01).abs() < 0.002, "{:?}", res.poses[1].1);
    }

    #[test]
    fn optimizer_never_increases_cost() {
        let edges = vec![
            constraint(0, 1, Pose2::new(0.3, 100.0, 0.0)),
            constraint(1, 2, Pose2::new(0.2, 100.0, 10.0)),
            constraint(0, 2, Pose2::new(-0.4, 150.0, 80.0)),
        ];
        let nodes = vec![(0, Pose2::IDENTITY), (1, Pose2::new(2.0, -50.0, 10.0)), (2, Pose2::new(-2.0, 0.0, 300.0))];
        let g = PoseGraph { nodes, edges, gauge: 0 };
        let mut last = f64::INFINITY;
        for iters in 0..12 {
            let res = optimize(&g, &OptimizeConfig { max_iterations: iters, ..Default::default() }).unwrap();
            assert!(res.cost <= last + 1e-9, "{iters}: {} > {last}", res.cost);
            last = res.cost;
        }
    }

    #[test]
    fn candidates_require_overlap() {
        let poses = [
            Pose2::IDENTITY,
            Pose2::from_translation(320.0, 0.0),
            Pose2::from_translation(630.0, 0.0),
            Pose2::from_translation(0.0, 240.0),
        ];
        let c = loop_closure_candidates(&poses, (640, 480), 0.1);
        // 0-2 is 630 px apart: under the diagonal but with 1.5% overlap
        assert!(!c.contains(&(0, 2)));
        assert!(c.contains(&(0, 3)));
        assert!(c.contains(&(1, 3)));
    }

    #[test]
    fn single_frame_is_identity() {
        let f = ImageFeatures::default();
        let out = stitch_sequence(&[f], (640, 480), &StitchConfig::for_frame(640, 480)).unwrap();
        assert_eq!(out.images.len(), 1);
        assert_eq!(out.images[0].pose, Pose2::IDENTITY);
    }
}
