//! Rigid 2D fits from point correspondences: minimal two-point model,
//! least-squares refinement and RANSAC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pose::Pose2;

pub type Point = (f64, f64);

pub const DEFAULT_INLIER_THRESHOLD: f64 = 3.0;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
pub const DEFAULT_CONFIDENCE: f64 = 0.99;
const MAX_REFITS: usize = 10;

/// The rigid transform taking `src[0], src[1]` onto `dst[0], dst[1]`, or
/// `None` when the source points coincide.
pub fn two_point(src: [Point; 2], dst: [Point; 2]) -> Option<Pose2> {
    let (sx, sy) = (src[1].0 - src[0].0, src[1].1 - src[0].1);
    let (dx, dy) = (dst[1].0 - dst[0].0, dst[1].1 - dst[0].1);
    if sx.hypot(sy) < 1e-9 || dx.hypot(dy) < 1e-9 {
        return None;
    }
    let theta = dy.atan2(dx) - sy.atan2(sx);
    let mid_s = ((src[0].0 + src[1].0) * 0.5, (src[0].1 + src[1].1) * 0.5);
    let mid_d = ((dst[0].0 + dst[1].0) * 0.5, (dst[0].1 + dst[1].1) * 0.5);
    let r = Pose2::from_rotation(theta).rotate(mid_s);
    Some(Pose2::new(theta, mid_d.0 - r.0, mid_d.1 - r.1))
}

/// Least-squares rigid fit minimizing `Σ |pose(src_i) − dst_i|²`.
pub fn fit_least_squares(src: &[Point], dst: &[Point]) -> Option<Pose2> {
    let n = src.len();
    if n < 2 || n != dst.len() {
        return None;
    }
    let inv = 1.0 / n as f64;
    let cs = src.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * inv, a.1 + p.1 * inv));
    let cd = dst.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * inv, a.1 + p.1 * inv));
    let (mut dot, mut cross) = (0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (ax, ay) = (s.0 - cs.0, s.1 - cs.1);
        let (bx, by) = (d.0 - cd.0, d.1 - cd.1);
        dot += ax * bx + ay * by;
        cross += ax * by - ay * bx;
    }
    if dot.abs() + cross.abs() < 1e-12 {
        return None;
    }
    let theta = cross.atan2(dot);
    let r = Pose2::from_rotation(theta).rotate(cs);
    Some(Pose2::new(theta, cd.0 - r.0, cd.1 - r.1))
}

#[inline]
fn residual(pose: &Pose2, s: Point, d: Point) -> f64 {
    let p = pose.apply(s);
    (p.0 - d.0).hypot(p.1 - d.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier distance in pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Early-exit confidence that an all-inlier sample has been drawn.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_INLIER_THRESHOLD,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            confidence: DEFAULT_CONFIDENCE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    /// Least-squares fit over `inliers`.
    pub pose: Pose2,
    /// Indices into the input, ascending.
    pub inliers: Vec<usize>,
    /// RMS inlier residual in pixels.
    pub rms: f64,
    pub iterations: usize,
}

fn inliers_of(pose: &Pose2, src: &[Point], dst: &[Point], threshold: f64) -> (Vec<usize>, f64) {
    let mut idx = Vec::new();
    let mut cost = 0.0;
    for (i, (&s, &d)) in src.iter().zip(dst).enumerate() {
        let r = residual(pose, s, d);
        if r <= threshold {
            idx.push(i);
            cost += r * r;
        }
    }
    (idx, cost)
}

/// Robust rigid fit of `dst ≈ pose(src)`. Returns `None` with fewer than two
/// correspondences or when no sample yields a model with two inliers.
pub fn ransac(src: &[Point], dst: &[Point], cfg: &RansacConfig) -> Option<RansacFit> {
    let n = src.len();
    if n < 2 || n != dst.len() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut budget = cfg.max_iterations;
    let mut iterations = 0;
    while iterations < budget {
        iterations += 1;
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let Some(model) = two_point([src[a], src[b]], [dst[a], dst[b]]) else { continue };
        let (inl, cost) = inliers_of(&model, src, dst, cfg.threshold);
        let better = match &best {
            None => inl.len() >= 2,
            Some((bi, bc)) => inl.len() > bi.len() || (inl.len() == bi.len() && cost < *bc),
        };
        if better {
            let w = inl.len() as f64 / n as f64;
            best = Some((inl, cost));
            if w >= 1.0 {
                break;
            }
            let fail = 1.0 - w * w;
            let needed = ((1.0 - cfg.confidence).ln() / fail.ln()).ceil();
            if needed.is_finite() && needed >= 0.0 {
                budget = budget.min(needed as usize);
            }
        }
    }
    let (mut inliers, _) = best?;
    // refit until the inlier set is stable; the final pose is the fit over the
    // reported set
    let mut pose = fit_least_squares(&select(src, &inliers), &select(dst, &inliers))?;
    for _ in 0..MAX_REFITS {
        let (next, _) = inliers_of(&pose, src, dst, cfg.threshold);
        if next == inliers || next.len() < 2 {
            break;
        }
        let Some(refit) = fit_least_squares(&select(src, &next), &select(dst, &next)) else { break };
        inliers = next;
        pose = refit;
    }
    let rms =
        (inliers.iter().map(|&i| residual(&pose, src[i], dst[i]).powi(2)).sum::<f64>() / inliers.len() as f64).sqrt();
    Some(RansacFit { pose, inliers, rms, iterations })
}

fn select(points: &[Point], idx: &[usize]) -> Vec<Point> {
    idx.iter().map(|&i| points[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn planted(pose: &Pose2, n: usize, seed: u64) -> (Vec<Point>, Vec<Point>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src: Vec<Point> = (0..n).map(|_| (rng.random_range(0.0..1280.0), rng.random_range(0.0..960.0))).collect();
        let dst = src.iter().map(|&p| pose.apply(p)).collect();
        (src, dst)
    }

    #[test]
    fn two_point_exact() {
        let truth = Pose2::new(0.7, 120.0, -33.0);
        let s = [(10.0, 20.0), (300.0, -40.0)];
        let d = [truth.apply(s[0]), truth.apply(s[1])];
        let got = two_point(s, d).unwrap();
        assert!(got.rotation_distance(&truth) < 1e-12 && got.translation_distance(&truth) < 1e-9);
        assert!(two_point([(1.0, 1.0), (1.0, 1.0)], d).is_none());
    }

    #[test]
    fn least_squares_matches_closed_form_rotation() {
        // dst = R(90°) src: cross sum positive, dot sum zero
        let src = [(1.0, 0.0), (-1.0, 0.0), (0.0, 2.0), (0.0, -2.0)];
        let dst: Vec<Point> = src.iter().map(|&(x, y)| (-y + 5.0, x - 1.0)).collect();
        let p = fit_least_squares(&src, &dst).unwrap();
        assert!((p.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((p.tx - 5.0).abs() < 1e-12 && (p.ty + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ransac_noiseless_is_exact() {
        let truth = Pose2::new(-2.1, 4000.5, 812.25);
        let (src, dst) = planted(&truth, 10, 1);
        let fit = ransac(&src, &dst, &RansacConfig::default()).unwrap();
        assert_eq!(fit.inliers, (0..10).collect::<Vec<_>>());
        assert!(fit.pose.rotation_distance(&truth) < 1e-9);
        assert!(fit.pose.translation_distance(&truth) < 1e-6);
    }

    #[test]
    fn ransac_rejects_outliers() {
        let truth = Pose2::new(0.3, 200.0, 100.0);
        let mut ok = 0;
        for seed in 0..100 {
            let (mut src, mut dst) = planted(&truth, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            for _ in 0..15 {
                src.push((rng.random_range(0.0..1280.0), rng.random_range(0.0..960.0)));
                dst.push((rng.random_range(0.0..2000.0), rng.random_range(0.0..2000.0)));
            }
            let cfg = RansacConfig { seed, ..Default::default() };
            if let Some(fit) = ransac(&src, &dst, &cfg) {
                if fit.pose.translation_distance(&truth) < 1.0 && fit.pose.rotation_distance(&truth).to_degrees() < 0.1
                {
                    ok += 1;
                }
            }
        }
        assert!(ok >= 99, "{ok}");
    }

    #[test]
    fn ransac_needs_two_points() {
        assert!(ransac(&[(0.0, 0.0)], &[(1.0, 1.0)], &RansacConfig::default()).is_none());
        assert!(ransac(&[], &[], &RansacConfig::default()).is_none());
    }

    #[test]
    fn ransac_is_deterministic() {
        let truth = Pose2::new(1.0, 3.0, 4.0);
        let (mut src, mut dst) = planted(&truth, 8, 9);
        src.extend([(5.0, 5.0), (600.0, 20.0)]);
        dst.extend([(900.0, 1.0), (-50.0, 70.0)]);
        let cfg = RansacConfig { seed: 3, ..Default::default() };
        assert_eq!(ransac(&src, &dst, &cfg), ransac(&src, &dst, &cfg));
    }

    proptest! {
        #[test]
        fn reported_pose_is_the_inlier_fit(
            theta in -3.1f64..3.1, tx in -1e4f64..1e4, ty in -1e4f64..1e4, seed in 0u64..1000
        ) {
            let truth = Pose2::new(theta, tx, ty);
            let (mut src, mut dst) = planted(&truth, 12, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            for d in dst.iter_mut() {
                d.0 += rng.random_range(-0.5..0.5);
                d.1 += rng.random_range(-0.5..0.5);
            }
            src.push((1.0, 1.0));
            dst.push((truth.tx + 500.0, truth.ty));
            let fit = ransac(&src, &dst, &RansacConfig { seed, ..Default::default() }).unwrap();
            let ls = fit_least_squares(&select(&src, &fit.inliers), &select(&dst, &fit.inliers)).unwrap();
            prop_assert_eq!(fit.pose, ls);
            prop_assert!(!fit.inliers.contains(&12));
        }
    }
}
