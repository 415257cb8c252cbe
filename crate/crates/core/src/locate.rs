//! Online localization of a single query image.
//!
//! Every descriptor match predicts where the query image sits in the world:
//! composing the database feature's world pose with the inverse of the query
//! keypoint's image pose gives the pose of the query frame. Correct matches
//! agree on that pose and pile up in one cell of a coarse grid, while wrong
//! matches scatter over the whole map. The densest cell and its eight
//! neighbours go to RANSAC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{ImageFeatures, Keypoint};
use crate::features::{detect_and_describe, DetectorConfig};
use crate::index::{AnnIndex, DEFAULT_CHECKS};
use crate::mapdb::MapDatabase;
use crate::pose::Pose2;
use crate::raster::Raster;
use crate::rigid::{ransac, Point, RansacConfig};
use crate::timing::Stopwatch;

pub const DEFAULT_CELL_SIZE: f64 = 50.0;
pub const DEFAULT_MIN_INLIERS: usize = 5;

/// Which point of the query image the votes locate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoteAnchor {
    /// The image origin, pixel `(0, 0)`.
    ImageOrigin,
    /// The image centre. Keypoint orientation error moves a vote by the
    /// keypoint's distance to the anchor times the angle, and the centre
    /// halves the worst-case distance.
    ImageCenter,
    /// Each match votes for the map position of its database feature. Inlier
    /// votes then spread over the whole query footprint.
    MatchedFeature,
}

impl std::str::FromStr for VoteAnchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin" => Ok(Self::ImageOrigin),
            "center" | "centre" => Ok(Self::ImageCenter),
            "feature" => Ok(Self::MatchedFeature),
            _ => Err(Error::InvalidParameter(format!("unknown vote anchor {s:?}"))),
        }
    }
}

impl std::fmt::Display for VoteAnchor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ImageOrigin => "origin",
            Self::ImageCenter => "center",
            Self::MatchedFeature => "feature",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocateConfig {
    pub cell_size: f64,
    pub checks: usize,
    /// Neighbours retrieved (and voted) per query feature.
    pub neighbours: usize,
    pub min_inliers: usize,
    pub anchor: VoteAnchor,
    pub ransac: RansacConfig,
    pub detector: DetectorConfig,
}

impl Default for LocateConfig {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            checks: DEFAULT_CHECKS,
            neighbours: 1,
            min_inliers: DEFAULT_MIN_INLIERS,
            anchor: VoteAnchor::ImageOrigin,
            ransac: RansacConfig::default(),
            detector: DetectorConfig::default(),
        }
    }
}

impl LocateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidParameter("cell size must be positive".into()));
        }
        if self.checks == 0 || self.neighbours == 0 {
            return Err(Error::InvalidParameter("checks and neighbours must be positive".into()));
        }
        if self.min_inliers < 2 {
            return Err(Error::InvalidParameter("min_inliers must be at least 2".into()));
        }
        self.detector.validate()
    }
}

/// A query keypoint matched to a database feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub query: Keypoint,
    /// Index into the database's feature list.
    pub feature: u32,
    /// World pose of the database feature.
    pub db_pose: Pose2,
    pub distance: f32,
}

/// World pose of the query image implied by one match.
pub fn vote_origin(m: &FeatureMatch) -> Pose2 {
    m.db_pose.compose(&m.query.pose().inverse())
}

/// World pose of `anchor` (a query-image point) implied by one match.
pub fn vote_at(m: &FeatureMatch, anchor: (f64, f64)) -> Pose2 {
    vote_origin(m).compose(&Pose2::from_translation(anchor.0, anchor.1))
}

/// Cell layout of a vote grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub min_x: f64,
    pub min_y: f64,
    pub cell_size: f64,
    pub cols: usize,
    pub rows: usize,
}

impl GridLayout {
    /// Covers the box `(min_x, min_y, max_x, max_y)`.
    pub fn covering((min_x, min_y, max_x, max_y): (f64, f64, f64, f64), cell_size: f64) -> Self {
        let cols = (((max_x - min_x) / cell_size).ceil() as usize).max(1);
        let rows = (((max_y - min_y) / cell_size).ceil() as usize).max(1);
        Self { min_x, min_y, cell_size, cols, rows }
    }

    pub fn cells(&self) -> usize {
        self.cols * self.rows
    }

    /// `(row, col)` of a point, or `None` outside the grid.
    pub fn cell_of(&self, (x, y): (f64, f64)) -> Option<(usize, usize)> {
        let c = ((x - self.min_x) / self.cell_size).floor();
        let r = ((y - self.min_y) / self.cell_size).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }
}

/// 2D vote accumulator. Votes landing outside the grid are counted in a sink
/// and never take part in peak finding.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteGrid {
    pub layout: GridLayout,
    counts: Vec<u32>,
    /// Per vote: the caller's tag, the voted position and its cell (row-major
    /// index), if any.
    votes: Vec<(u32, (f64, f64), Option<usize>)>,
    sink: usize,
}

/// Result of peak extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Peak {
    pub row: usize,
    pub col: usize,
    pub cell_votes: u32,
    /// Tags of all votes in the peak cell and its 8 neighbours.
    pub candidates: Vec<u32>,
    /// Largest cell count outside the 3x3 neighbourhood.
    pub second_cell_votes: u32,
}

impl VoteGrid {
    pub fn new(layout: GridLayout) -> Self {
        Self { counts: vec![0; layout.cells()], layout, votes: Vec::new(), sink: 0 }
    }

    /// Accumulates `(tag, position)` votes.
    pub fn accumulate(layout: GridLayout, votes: impl IntoIterator<Item = (u32, (f64, f64))>) -> Self {
        let mut g = Self::new(layout);
        for (tag, p) in votes {
            g.add(tag, p);
        }
        g
    }

    pub fn add(&mut self, tag: u32, p: (f64, f64)) {
        let cell = self.layout.cell_of(p).map(|(r, c)| r * self.layout.cols + c);
        match cell {
            Some(i) => self.counts[i] += 1,
            None => self.sink += 1,
        }
        self.votes.push((tag, p, cell));
    }

    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.layout.cols + col]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total_votes(&self) -> usize {
        self.votes.len()
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Argmax cell (lowest row, then column, on ties) and the votes of its
    /// 3x3 neighbourhood.
    pub fn find_peak(&self) -> Result<Peak> {
        let (best, &cell_votes) =
            self.counts.iter().enumerate().fold((0, &0u32), |acc, (i, c)| if *c > *acc.1 { (i, c) } else { acc });
        if cell_votes == 0 {
            return Err(Error::EmptyGrid);
        }
        let cols = self.layout.cols;
        let (row, col) = (best / cols, best % cols);
        let near = |i: usize| (i / cols).abs_diff(row) <= 1 && (i % cols).abs_diff(col) <= 1;
        let candidates = self.votes.iter().filter(|v| v.2.is_some_and(near)).map(|v| v.0).collect();
        let second_cell_votes =
            self.counts.iter().enumerate().filter(|(i, _)| !near(*i)).map(|(_, &c)| c).max().unwrap_or(0);
        Ok(Peak { row, col, cell_votes, candidates, second_cell_votes })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub features_ms: f64,
    pub matching_ms: f64,
    pub voting_ms: f64,
    pub ransac_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    /// Query image frame to world frame.
    pub pose: Pose2,
    pub inliers: Vec<FeatureMatch>,
    /// Votes in the peak cell and its neighbours, i.e. the RANSAC candidates.
    pub peak_votes: usize,
    pub peak_cell_votes: u32,
    pub second_peak_votes: u32,
    pub total_matches: usize,
    pub query_features: usize,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    NoFeatures,
    NoMatches,
    /// The vote peak holds fewer than `min_inliers` rigidly consistent
    /// matches.
    WeakPeak,
    /// RANSAC reached `min_inliers` but the fitted pose is not finite.
    RansacFailed,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NoFeatures => "no-features",
            Self::NoMatches => "no-matches",
            Self::WeakPeak => "weak-peak",
            Self::RansacFailed => "ransac-failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationFailure {
    pub reason: FailureReason,
    pub total_matches: usize,
    pub peak_votes: usize,
    pub peak_cell_votes: u32,
    pub query_features: usize,
    pub timings: StageTimings,
}

pub type Outcome = std::result::Result<LocalizationResult, LocalizationFailure>;

/// Query-side state bound to one database and its index.
pub struct Localizer<'a> {
    db: &'a MapDatabase,
    index: &'a AnnIndex,
    cfg: LocateConfig,
    footprint: (f64, f64, f64, f64),
}

impl<'a> Localizer<'a> {
    pub fn new(db: &'a MapDatabase, index: &'a AnnIndex, cfg: LocateConfig) -> Result<Self> {
        cfg.validate()?;
        if index.dim() != db.basis.k() {
            return Err(Error::DimensionMismatch { expected: db.basis.k(), actual: index.dim() });
        }
        if db.images.is_empty() {
            return Err(Error::NoFeatures);
        }
        Ok(Self { db, index, cfg, footprint: db.footprint() })
    }

    pub fn config(&self) -> &LocateConfig {
        &self.cfg
    }

    /// Vote grid layout for a query of the given size. With the centre as
    /// anchor the grid spans the map footprint; with the origin it is padded
    /// by the query diagonal, since the corner of a rotated query inside the
    /// map can lie outside the footprint box.
    pub fn grid_layout(&self, (w, h): (usize, usize)) -> GridLayout {
        let pad = match self.cfg.anchor {
            VoteAnchor::ImageCenter | VoteAnchor::MatchedFeature => 0.0,
            VoteAnchor::ImageOrigin => (w as f64).hypot(h as f64),
        };
        let (a, b, c, d) = self.footprint;
        GridLayout::covering((a - pad, b - pad, c + pad, d + pad), self.cfg.cell_size)
    }

    fn anchor(&self, (w, h): (usize, usize)) -> (f64, f64) {
        match self.cfg.anchor {
            VoteAnchor::ImageOrigin | VoteAnchor::MatchedFeature => (0.0, 0.0),
            VoteAnchor::ImageCenter => (w as f64 / 2.0, h as f64 / 2.0),
        }
    }

    /// Matches projected query descriptors against the index.
    pub fn match_features(&self, features: &ImageFeatures) -> Vec<FeatureMatch> {
        let basis = &self.db.basis;
        let (checks, m) = (self.cfg.checks, self.cfg.neighbours);
        let one = |i: usize| -> Vec<FeatureMatch> {
            let kp = features.keypoints[i];
            let Ok(p) = basis.project(&features.descriptors[i]) else { return Vec::new() };
            let Ok(found) = self.index.query_knn(&p, kp.scale, m, checks) else { return Vec::new() };
            found
                .into_iter()
                .map(|(id, distance)| FeatureMatch {
                    query: kp,
                    feature: id,
                    db_pose: self.db.features[id as usize].pose,
                    distance,
                })
                .collect()
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..features.len()).into_par_iter().flat_map_iter(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..features.len()).flat_map(one).collect()
        }
    }

    /// Votes every match into a grid sized for a query of `size`.
    pub fn vote(&self, matches: &[FeatureMatch], size: (usize, usize)) -> VoteGrid {
        let anchor = self.anchor(size);
        let by_feature = self.cfg.anchor == VoteAnchor::MatchedFeature;
        VoteGrid::accumulate(
            self.grid_layout(size),
            matches.iter().enumerate().map(|(i, m)| {
                let p = if by_feature { m.db_pose.translation() } else { vote_at(m, anchor).translation() };
                (i as u32, p)
            }),
        )
    }

    /// Detects features on `image` and localizes it.
    pub fn localize(&self, image: &Raster) -> Outcome {
        let mut clock = Stopwatch::start();
        let features = detect_and_describe(image, &self.cfg.detector);
        let features_ms = clock.lap_ms();
        let mut outcome = self.localize_features(&features, (image.width(), image.height()));
        let t = match &mut outcome {
            Ok(r) => &mut r.timings,
            Err(f) => &mut f.timings,
        };
        t.features_ms = features_ms;
        t.total_ms += features_ms;
        outcome
    }

    /// Localizes precomputed full-length query features from an image of
    /// `size` pixels.
    pub fn localize_features(&self, features: &ImageFeatures, size: (usize, usize)) -> Outcome {
        let mut clock = Stopwatch::start();
        let mut timings = StageTimings::default();
        let fail = |reason, total_matches, peak_votes, peak_cell_votes, mut timings: StageTimings| {
            timings.total_ms = timings.features_ms + timings.matching_ms + timings.voting_ms + timings.ransac_ms;
            Err(LocalizationFailure {
                reason,
                total_matches,
                peak_votes,
                peak_cell_votes,
                query_features: features.len(),
                timings,
            })
        };
        if features.is_empty() {
            return fail(FailureReason::NoFeatures, 0, 0, 0, timings);
        }
        let matches = self.match_features(features);
        timings.matching_ms = clock.lap_ms();
        if matches.is_empty() {
            return fail(FailureReason::NoMatches, 0, 0, 0, timings);
        }

        let grid = self.vote(&matches, size);
        let peak = match grid.find_peak() {
            Ok(p) => p,
            Err(_) => {
                timings.voting_ms = clock.lap_ms();
                return fail(FailureReason::WeakPeak, matches.len(), 0, 0, timings);
            }
        };
        timings.voting_ms = clock.lap_ms();
        let peak_votes = peak.candidates.len();
        if peak_votes < self.cfg.min_inliers {
            return fail(FailureReason::WeakPeak, matches.len(), peak_votes, peak.cell_votes, timings);
        }

        let candidates: Vec<&FeatureMatch> = peak.candidates.iter().map(|&i| &matches[i as usize]).collect();
        let src: Vec<Point> = candidates.iter().map(|m| (m.query.x as f64, m.query.y as f64)).collect();
        let dst: Vec<Point> = candidates.iter().map(|m| m.db_pose.translation()).collect();
        let fit = ransac(&src, &dst, &self.cfg.ransac);
        timings.ransac_ms = clock.lap_ms();
        // a peak without min_inliers rigidly consistent votes is weak
        let fit = match fit {
            Some(f) if f.inliers.len() >= self.cfg.min_inliers && f.pose.is_finite() => f,
            Some(f) if f.inliers.len() >= self.cfg.min_inliers => {
                return fail(FailureReason::RansacFailed, matches.len(), peak_votes, peak.cell_votes, timings)
            }
            _ => return fail(FailureReason::WeakPeak, matches.len(), peak_votes, peak.cell_votes, timings),
        };
        timings.total_ms = timings.matching_ms + timings.voting_ms + timings.ransac_ms;
        Ok(LocalizationResult {
            pose: fit.pose,
            inliers: fit.inliers.iter().map(|&i| *candidates[i]).collect(),
            peak_votes,
            peak_cell_votes: peak.cell_votes,
            second_peak_votes: peak.second_cell_votes,
            total_matches: matches.len(),
            query_features: features.len(),
            timings,
        })
    }
}

/// One-shot convenience wrapper around [`Localizer`].
pub fn localize(db: &MapDatabase, index: &AnnIndex, image: &Raster, cfg: &LocateConfig) -> Result<Outcome> {
    Ok(Localizer::new(db, index, *cfg)?.localize(image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f32, y: f32, orientation: f32) -> Keypoint {
        Keypoint { x, y, scale: 2.0, orientation, response: 0.1 }
    }

    fn m(db_pose: Pose2, query: Keypoint) -> FeatureMatch {
        FeatureMatch { query, feature: 0, db_pose, distance: 0.0 }
    }

    fn matmul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut o = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                o[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        o
    }

    #[test]
    fn vote_examples() {
        let v = vote_origin(&m(Pose2::IDENTITY, kp(0.0, 0.0, 0.0)));
        assert_eq!(v.translation(), (0.0, 0.0));

        let db = Pose2::from_translation(100.0, 0.0);
        let q = kp(30.0, 40.0, 0.0);
        let v = vote_origin(&m(db, q));
        // matrix oracle: [db] * [q]^-1
        let inv_q = [[1.0, 0.0, -30.0], [0.0, 1.0, -40.0], [0.0, 0.0, 1.0]];
        let o = matmul(db.to_matrix(), inv_q);
        assert_eq!(v.translation(), (o[0][2], o[1][2]));
        assert_eq!(v.translation(), (70.0, -40.0));
    }

    #[test]
    fn common_rotation_leaves_vote_unchanged() {
        let db = Pose2::new(0.3, 500.0, 200.0);
        let q = kp(100.0, 50.0, 0.2);
        let base = vote_origin(&m(db, q)).translation();
        for delta in [0.5f64, -1.2, 2.9] {
            let db2 = db.compose(&Pose2::from_rotation(delta));
            let q2 = kp(100.0, 50.0, (0.2 + delta) as f32);
            let v = vote_origin(&m(db2, q2)).translation();
            assert!((v.0 - base.0).abs() < 1e-4 && (v.1 - base.1).abs() < 1e-4);
        }
    }

    fn layout() -> GridLayout {
        GridLayout::covering((0.0, 0.0, 5000.0, 5000.0), 50.0)
    }

    #[test]
    fn accumulate_basics() {
        let g = VoteGrid::accumulate(layout(), std::iter::empty());
        assert_eq!(g.total_votes(), 0);
        assert!(matches!(g.find_peak(), Err(Error::EmptyGrid)));

        let g = VoteGrid::accumulate(layout(), (0..10).map(|i| (i, (120.0, 330.0))));
        assert_eq!(g.count(6, 2), 10);
        assert_eq!(g.counts().iter().sum::<u32>(), 10);

        let g = VoteGrid::accumulate(layout(), [(0, (-5.0, 10.0)), (1, (10.0, 10.0)), (2, (5000.0, 0.0))]);
        assert_eq!(g.sink(), 2);
        assert_eq!(g.total_votes(), 3);
        let p = g.find_peak().unwrap();
        assert_eq!((p.row, p.col, p.candidates.clone()), (0, 0, vec![1]));
    }

    #[test]
    fn ties_go_to_lowest_row_then_column() {
        let g = VoteGrid::accumulate(layout(), [(0, (3000.0, 60.0)), (1, (20.0, 60.0)), (2, (4000.0, 10.0))]);
        let p = g.find_peak().unwrap();
        assert_eq!((p.row, p.col), (0, 80));
    }

    #[test]
    fn planted_cluster_beats_uniform_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut votes: Vec<(u32, (f64, f64))> =
            (0..500).map(|i| (i, (rng.random_range(0.0..5000.0), rng.random_range(0.0..5000.0)))).collect();
        for i in 0..8 {
            votes.push((1000 + i, (2210.0 + rng.random_range(0.0..30.0), 1410.0 + rng.random_range(0.0..30.0))));
        }
        let p = VoteGrid::accumulate(layout(), votes).find_peak().unwrap();
        assert_eq!((p.row, p.col), (28, 44));
        assert!(p.candidates.iter().filter(|&&t| t >= 1000).count() == 8);
    }

    #[test]
    fn straddling_cluster_is_gathered() {
        // four votes around the corner shared by four cells
        let votes =
            [(0, (249.0, 249.0)), (1, (251.0, 249.0)), (2, (249.0, 251.0)), (3, (251.0, 251.0)), (4, (251.5, 251.5))];
        let p = VoteGrid::accumulate(layout(), votes).find_peak().unwrap();
        assert_eq!((p.row, p.col), (5, 5));
        let mut c = p.candidates.clone();
        c.sort();
        assert_eq!(c, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn uniform_votes_stay_in_null_band() {
        // 2000 votes over 100x100 cells: the 99th percentile of the max is 6
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut over = 0;
        for _ in 0..200 {
            let votes = (0..2000).map(|i| (i, (rng.random_range(0.0..5000.0), rng.random_range(0.0..5000.0))));
            if VoteGrid::accumulate(layout(), votes).max_count() > 6 {
                over += 1;
            }
        }
        assert!(over <= 6, "{over}");
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(LocateConfig { cell_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(LocateConfig { min_inliers: 1, ..Default::default() }.validate().is_err());
        assert!(LocateConfig::default().validate().is_ok());
    }
}
