//! Evaluation protocol: pose verification against map imagery, temporal
//! coherence flags, synthetic suites and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::ImageFeatures;
use crate::features::{detect_and_describe, DetectorConfig};
use crate::index::{AnnIndex, IndexParams};
use crate::locate::{FailureReason, LocalizationResult, Localizer, LocateConfig, Outcome};
use crate::mapdb::{build_database, BuildConfig, MapDatabase, MapImage, SelectionPolicy};
use crate::pose::Pose2;
use crate::stitch::{register_pair, RegisterConfig, StitchConfig};
use crate::synth::{
    generate_texture, random_pose_inside, sample_query, zigzag_capture, Degradation, GridSpec, SyntheticTexture,
    TextureStyle,
};
use crate::timing::Stopwatch;

pub const DEFAULT_MAX_TRANSLATION: f64 = 30.0;
pub const DEFAULT_MAX_ROTATION_DEG: f64 = 1.5;
pub const DEFAULT_MIN_CORRESPONDENCES: usize = 10;
pub const DEFAULT_COHERENCE_FACTOR: f64 = 2.0;
/// Floor on the coherence bound so near-stationary sequences are not flagged
/// for pixel jitter.
pub const DEFAULT_COHERENCE_FLOOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessCriterion {
    /// Pixels.
    pub max_translation: f64,
    /// Degrees.
    pub max_rotation: f64,
}

impl Default for SuccessCriterion {
    fn default() -> Self {
        Self { max_translation: DEFAULT_MAX_TRANSLATION, max_rotation: DEFAULT_MAX_ROTATION_DEG }
    }
}

impl SuccessCriterion {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_translation > 0.0 && self.max_rotation > 0.0)
            || !self.max_translation.is_finite()
            || !self.max_rotation.is_finite()
        {
            return Err(Error::InvalidParameter("success criterion bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn errors(estimate: &Pose2, reference: &Pose2) -> (f64, f64) {
        (estimate.translation_distance(reference), estimate.rotation_distance(reference).to_degrees())
    }

    pub fn accepts(&self, estimate: &Pose2, reference: &Pose2) -> bool {
        let (t, r) = Self::errors(estimate, reference);
        t <= self.max_translation && r <= self.max_rotation
    }
}

impl fmt::Display for SuccessCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}px:{}deg", self.max_translation, self.max_rotation)
    }
}

impl std::str::FromStr for SuccessCriterion {
    type Err = Error;

    /// Parses `30px:1.5deg`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("criterion `{s}` is not of the form <N>px:<M>deg"));
        let (t, r) = s.split_once(':').ok_or_else(bad)?;
        let t = t.trim().strip_suffix("px").ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?;
        let r = r.trim().strip_suffix("deg").ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?;
        let c = Self { max_translation: t, max_rotation: r };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub criterion: SuccessCriterion,
    /// Fewer RANSAC inliers than this between the query and the closest map
    /// image fails verification.
    pub min_correspondences: usize,
    pub register: RegisterConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            criterion: SuccessCriterion::default(),
            min_correspondences: DEFAULT_MIN_CORRESPONDENCES,
            register: RegisterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictStatus {
    Success,
    PoseMismatch,
    InsufficientCorrespondences,
    /// The map image closest to the prediction has no stored features.
    NoReferenceImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub image_id: Option<u32>,
    /// Query pixel frame to world, re-fitted from all features.
    pub reference: Option<Pose2>,
    pub correspondences: usize,
    pub translation_error: f64,
    pub rotation_error: f64,
}

impl Verdict {
    pub fn is_success(&self) -> bool {
        self.status == VerdictStatus::Success
    }
}

/// Checks a localization by registering the query's full feature set
/// against the full feature set of the map image nearest the predicted
/// query centre. `map_features` looks up a map image's features by id.
pub fn verify_pose<'f>(
    db: &MapDatabase,
    result: &LocalizationResult,
    query: &ImageFeatures,
    query_size: (usize, usize),
    map_features: impl Fn(u32) -> Option<&'f ImageFeatures>,
    cfg: &VerifyConfig,
) -> Verdict {
    let mut verdict = Verdict {
        status: VerdictStatus::NoReferenceImage,
        image_id: None,
        reference: None,
        correspondences: 0,
        translation_error: f64::INFINITY,
        rotation_error: f64::INFINITY,
    };
    let centre = result.pose.apply((query_size.0 as f64 * 0.5, query_size.1 as f64 * 0.5));
    let Some(image) = db.closest_image(centre) else { return verdict };
    verdict.image_id = Some(image.image_id);
    let Some(reference_features) = map_features(image.image_id) else { return verdict };
    let register = RegisterConfig { min_inliers: cfg.min_correspondences.max(2), ..cfg.register };
    let Some(pair) = register_pair((image.image_id, reference_features), (u32::MAX, query), &register) else {
        verdict.status = VerdictStatus::InsufficientCorrespondences;
        return verdict;
    };
    let reference = image.pose.compose(&pair.rel);
    let (t, r) = SuccessCriterion::errors(&result.pose, &reference);
    verdict.reference = Some(reference);
    verdict.correspondences = pair.inlier_count;
    verdict.translation_error = t;
    verdict.rotation_error = r;
    verdict.status = if cfg.criterion.accepts(&result.pose, &reference) {
        VerdictStatus::Success
    } else {
        VerdictStatus::PoseMismatch
    };
    verdict
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceConfig {
    /// Bound is `factor` times the median neighbour displacement.
    pub factor: f64,
    /// Minimum bound in pixels.
    pub floor: f64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self { factor: DEFAULT_COHERENCE_FACTOR, floor: DEFAULT_COHERENCE_FLOOR }
    }
}

/// Flags frames of a time-ordered pose sequence whose translation jumps
/// are inconsistent with the sequence's typical motion. An interior frame
/// is flagged when both of its jumps exceed the bound. An end frame is
/// flagged when its only jump exceeds the bound while its neighbour's
/// other jump does not.
pub fn coherence_flags(poses: &[Pose2], cfg: &CoherenceConfig) -> Vec<bool> {
    let n = poses.len();
    let mut flags = vec![false; n];
    if n < 3 {
        return flags;
    }
    let jumps: Vec<f64> = poses.windows(2).map(|w| w[0].translation_distance(&w[1])).collect();
    let mut sorted = jumps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let bound = (cfg.factor * median).max(cfg.floor);
    let big = |j: usize| jumps[j] > bound;
    for i in 1..n - 1 {
        flags[i] = big(i - 1) && big(i);
    }
    flags[0] = big(0) && !big(1);
    flags[n - 1] = big(n - 2) && !big(n - 3);
    flags
}

/// A synthetic texture, its zig-zag capture and the stitched map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSuiteConfig {
    pub texture_seed: u64,
    pub style: TextureStyle,
    pub cols: usize,
    pub rows: usize,
    pub frame: (usize, usize),
    pub margin: usize,
    /// Applied to every captured map frame, with a per-frame seed.
    pub map_degradation: Degradation,
    pub detector: DetectorConfig,
}

impl Default for MapSuiteConfig {
    fn default() -> Self {
        Self {
            texture_seed: 1,
            style: TextureStyle::Scratchy,
            cols: 5,
            rows: 5,
            frame: (1280, 960),
            margin: 64,
            map_degradation: Degradation::none(),
            detector: DetectorConfig::default(),
        }
    }
}

pub struct MapSuite {
    pub config: MapSuiteConfig,
    pub texture: SyntheticTexture,
    pub grid: GridSpec,
    /// Texture frame to world frame (world is the first capture's frame).
    pub world_from_texture: Pose2,
    /// True frame poses in the world frame, in capture order.
    pub truth: Vec<Pose2>,
    pub images: Vec<MapImage>,
    pub features: Vec<(u32, ImageFeatures)>,
    pub loop_closures: usize,
}

impl MapSuite {
    pub fn build(cfg: &MapSuiteConfig) -> Result<Self> {
        let grid = GridSpec::half_overlap(cfg.cols, cfg.rows, cfg.frame, cfg.margin);
        let (tw, th) = grid.texture_size();
        let texture = generate_texture(cfg.texture_seed, tw, th, cfg.style)?;
        let mut frames = zigzag_capture(&texture.raster, &grid, Degradation::none())?;
        if cfg.map_degradation != Degradation::none() {
            cfg.map_degradation.validate()?;
            for (i, f) in frames.iter_mut().enumerate() {
                let d = Degradation { seed: cfg.map_degradation.seed.wrapping_add(i as u64), ..cfg.map_degradation };
                f.image = sample_query(&texture, f.truth, cfg.frame, d)?.image;
            }
        }
        let features: Vec<ImageFeatures> =
            frames.iter().map(|f| detect_and_describe(&f.image, &cfg.detector)).collect();
        let size = (cfg.frame.0 as u32, cfg.frame.1 as u32);
        let stitched = crate::stitch::stitch_sequence(&features, size, &StitchConfig::for_frame(size.0, size.1))?;
        let world_from_texture = frames[0].truth.inverse();
        let truth = frames.iter().map(|f| world_from_texture.compose(&f.truth)).collect();
        Ok(Self {
            config: *cfg,
            texture,
            grid,
            world_from_texture,
            truth,
            images: stitched.images,
            features: features.into_iter().enumerate().map(|(i, f)| (i as u32, f)).collect(),
            loop_closures: stitched.loop_closures.len(),
        })
    }

    /// Largest stitched-pose translation error against the capture truth.
    pub fn max_stitch_error(&self) -> f64 {
        self.images.iter().zip(&self.truth).map(|(m, t)| m.pose.translation_distance(t)).fold(0.0, f64::max)
    }

    pub fn database(&self, cfg: &BuildConfig) -> Result<MapDatabase> {
        build_database(&self.images, &self.features, cfg)
    }

    pub fn map_features(&self, id: u32) -> Option<&ImageFeatures> {
        self.features.get(id as usize).filter(|(i, _)| *i == id).map(|(_, f)| f)
    }

    /// Poses (texture frame) of `n` queries drawn uniformly inside the mapped
    /// region.
    pub fn query_poses(&self, n: usize, seed: u64) -> Vec<Pose2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let region = self.grid.covered_region();
        (0..n).filter_map(|_| random_pose_inside(&mut rng, region, self.config.frame)).collect()
    }

    /// Renders and describes queries. Query `i` uses degradation seed
    /// `degradation.seed + i`, so sweeps over one parameter reuse the same
    /// random draws.
    pub fn queries(&self, poses: &[Pose2], degradation: Degradation, detector: &DetectorConfig) -> Result<Vec<Query>> {
        degradation.validate()?;
        let render = |(i, pose): (usize, &Pose2)| -> Result<Query> {
            let d = Degradation { seed: degradation.seed.wrapping_add(i as u64), ..degradation };
            let sample = sample_query(&self.texture, *pose, self.config.frame, d)?;
            let mut sw = Stopwatch::start();
            let features = detect_and_describe(&sample.image, detector);
            Ok(Query {
                index: i,
                truth: Some(self.world_from_texture.compose(pose)),
                size: self.config.frame,
                features,
                features_ms: sw.lap_ms(),
            })
        };
        poses.iter().enumerate().map(render).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Query {
    pub index: usize,
    /// Query pixel frame to world, when known.
    pub truth: Option<Pose2>,
    pub size: (usize, usize),
    pub features: ImageFeatures,
    pub features_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameStatus {
    Success,
    /// Localized, but outside the success criterion.
    WrongPose,
    Localization(FailureReason),
    Verification(VerdictStatus),
}

impl fmt::Display for FrameStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Success => f.write_str("success"),
            Self::WrongPose => f.write_str("wrong-pose"),
            Self::Localization(r) => write!(f, "{r}"),
            Self::Verification(VerdictStatus::Success) => f.write_str("success"),
            Self::Verification(VerdictStatus::PoseMismatch) => f.write_str("verify-mismatch"),
            Self::Verification(VerdictStatus::InsufficientCorrespondences) => f.write_str("verify-insufficient"),
            Self::Verification(VerdictStatus::NoReferenceImage) => f.write_str("verify-no-reference"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub status: FrameStatus,
    pub pose: Option<Pose2>,
    pub truth: Option<Pose2>,
    pub translation_error: Option<f64>,
    pub rotation_error: Option<f64>,
    pub peak_votes: usize,
    pub total_matches: usize,
    pub query_features: usize,
    /// Verification outcome, when verification ran.
    pub verdict: Option<VerdictStatus>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl TimingSummary {
    /// Nearest-rank percentiles.
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self { p50_ms: rank(0.5), p90_ms: rank(0.9), p99_ms: rank(0.99), max_ms: s[s.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Axis value, e.g. `16` or `0.25`.
    pub value: String,
    pub frames: Vec<FrameRecord>,
    pub successes: usize,
    pub success_rate: f64,
    pub failures: BTreeMap<String, usize>,
    pub timing: TimingSummary,
    /// Fraction of verified frames where verification agreed with the truth
    /// comparison.
    pub verify_agreement: Option<f64>,
}

impl SweepPoint {
    pub fn from_frames(value: impl Into<String>, frames: Vec<FrameRecord>) -> Self {
        let successes = frames.iter().filter(|f| f.status == FrameStatus::Success).count();
        let mut failures = BTreeMap::new();
        for f in frames.iter().filter(|f| f.status != FrameStatus::Success) {
            *failures.entry(f.status.to_string()).or_insert(0) += 1;
        }
        let times: Vec<f64> = frames.iter().map(|f| f.total_ms).collect();
        let checked: Vec<bool> = frames
            .iter()
            .filter(|f| f.truth.is_some() && f.pose.is_some())
            .filter_map(|f| f.verdict.map(|v| (v == VerdictStatus::Success) == (f.status == FrameStatus::Success)))
            .collect();
        let verify_agreement =
            (!checked.is_empty()).then(|| checked.iter().filter(|&&a| a).count() as f64 / checked.len() as f64);
        Self {
            value: value.into(),
            success_rate: if frames.is_empty() { 0.0 } else { successes as f64 / frames.len() as f64 },
            successes,
            failures,
            timing: TimingSummary::of(&times),
            verify_agreement,
            frames,
        }
    }
}

/// Map image id to that image's full feature set.
pub type FeatureLookup<'f> = dyn Fn(u32) -> Option<&'f ImageFeatures> + Sync + 'f;

/// Localizes `queries` and grades each one. Frames with known truth are
/// graded against it; the rest are graded by [`verify_pose`], which then
/// requires `map_features`. When `verify` is set, verification also runs on
/// frames with truth so its agreement can be measured.
pub fn evaluate_queries<'f>(
    db: &MapDatabase,
    index: &AnnIndex,
    queries: &[Query],
    locate: &LocateConfig,
    verify: Option<(&VerifyConfig, &FeatureLookup<'f>)>,
    criterion: &SuccessCriterion,
) -> Result<Vec<FrameRecord>> {
    criterion.validate()?;
    let localizer = Localizer::new(db, index, *locate)?;
    let run = |q: &Query| -> FrameRecord {
        let outcome: Outcome = localizer.localize_features(&q.features, q.size);
        let mut rec = FrameRecord {
            index: q.index,
            status: FrameStatus::WrongPose,
            pose: None,
            truth: q.truth,
            translation_error: None,
            rotation_error: None,
            peak_votes: 0,
            total_matches: 0,
            query_features: q.features.len(),
            verdict: None,
            total_ms: q.features_ms,
        };
        match outcome {
            Err(f) => {
                rec.status = FrameStatus::Localization(f.reason);
                rec.peak_votes = f.peak_votes;
                rec.total_matches = f.total_matches;
                rec.total_ms += f.timings.total_ms;
            }
            Ok(r) => {
                rec.pose = Some(r.pose);
                rec.peak_votes = r.peak_votes;
                rec.total_matches = r.total_matches;
                rec.total_ms += r.timings.total_ms;
                let verdict = match verify {
                    Some((vc, lookup)) => Some(verify_pose(db, &r, &q.features, q.size, lookup, vc)),
                    None => None,
                };
                rec.verdict = verdict.as_ref().map(|v| v.status);
                match (q.truth, verdict) {
                    (Some(truth), _) => {
                        let (t, a) = SuccessCriterion::errors(&r.pose, &truth);
                        rec.translation_error = Some(t);
                        rec.rotation_error = Some(a);
                        if criterion.accepts(&r.pose, &truth) {
                            rec.status = FrameStatus::Success;
                        }
                    }
                    (None, Some(v)) => {
                        rec.translation_error = v.reference.map(|_| v.translation_error);
                        rec.rotation_error = v.reference.map(|_| v.rotation_error);
                        rec.status =
                            if v.is_success() { FrameStatus::Success } else { FrameStatus::Verification(v.status) };
                    }
                    (None, None) => rec.status = FrameStatus::Verification(VerdictStatus::NoReferenceImage),
                }
            }
        }
        rec
    };
    #[cfg(feature = "parallel")]
    let frames = {
        use rayon::prelude::*;
        queries.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let frames = queries.iter().map(run).collect();
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "lowercase")]
pub enum SweepAxis {
    /// Descriptor dimension k.
    Dimension(Vec<usize>),
    /// Occluded fraction of each query.
    Occlusion(Vec<f64>),
    /// Motion-blur kernel length in pixels.
    Blur(Vec<f64>),
    /// Map feature selection policy.
    Selection(Vec<SelectionPolicy>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Dimension(_) => "k",
            Self::Occlusion(_) => "occlusion",
            Self::Blur(_) => "blur",
            Self::Selection(_) => "selection",
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Self::Dimension(v) => v.iter().map(ToString::to_string).collect(),
            Self::Occlusion(v) | Self::Blur(v) => v.iter().map(ToString::to_string).collect(),
            Self::Selection(v) => v.iter().map(ToString::to_string).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Dimension(v) => v.len(),
            Self::Occlusion(v) | Self::Blur(v) => v.len(),
            Self::Selection(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidParameter(format!("sweep axis `{}` has no values", self.name())));
        }
        let ok = match self {
            Self::Dimension(v) => v.iter().all(|&k| (1..=crate::RAW_DESCRIPTOR_DIM).contains(&k)),
            Self::Occlusion(v) => v.iter().all(|&f| (0.0..1.0).contains(&f)),
            Self::Blur(v) => v.iter().all(|&l| l.is_finite() && l >= 0.0),
            Self::Selection(_) => true,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("sweep axis `{}` has an out-of-range value", self.name())));
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    /// Parses `k=8,16`, `occlusion=0,0.25,0.5`, `blur=0,9,17` or
    /// `selection=random,top-response`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, values) =
            s.split_once('=').ok_or_else(|| Error::InvalidParameter(format!("sweep axis `{s}` needs name=values")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        let num = |v: &&str| v.parse::<f64>().map_err(|_| Error::InvalidParameter(format!("bad sweep value `{v}`")));
        let axis = match name.trim() {
            "k" | "dimension" => Self::Dimension(
                items
                    .iter()
                    .map(|v| v.parse().map_err(|_| Error::InvalidParameter(format!("bad sweep value `{v}`"))))
                    .collect::<Result<_>>()?,
            ),
            "occlusion" => Self::Occlusion(items.iter().map(num).collect::<Result<_>>()?),
            "blur" => Self::Blur(items.iter().map(num).collect::<Result<_>>()?),
            "selection" => Self::Selection(items.iter().map(|v| v.parse()).collect::<Result<_>>()?),
            other => return Err(Error::InvalidParameter(format!("unknown sweep axis `{other}`"))),
        };
        axis.validate()?;
        Ok(axis)
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// One map per seed; frames from all maps are pooled per axis value.
    pub texture_seeds: Vec<u64>,
    pub suite: MapSuiteConfig,
    pub queries_per_map: usize,
    pub query_seed: u64,
    /// Base query degradation; the swept parameter overrides its field.
    pub query_degradation: Degradation,
    pub build: BuildConfig,
    pub index: IndexParams,
    pub locate: LocateConfig,
    pub criterion: SuccessCriterion,
    /// Also run [`verify_pose`] on every localized frame.
    pub verify: Option<VerifyConfig>,
}

impl SweepConfig {
    pub fn new(axis: SweepAxis) -> Self {
        Self {
            axis,
            texture_seeds: vec![1],
            suite: MapSuiteConfig::default(),
            queries_per_map: 200,
            query_seed: 0,
            query_degradation: Degradation::none(),
            build: BuildConfig::default(),
            index: IndexParams::default(),
            locate: LocateConfig::default(),
            criterion: SuccessCriterion::default(),
            verify: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub axis: String,
    pub criterion: SuccessCriterion,
    pub points: Vec<SweepPoint>,
}

impl EvalReport {
    pub fn success_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.success_rate).collect()
    }

    /// One row per axis value.
    pub fn summary_tsv(&self) -> String {
        let mut out =
            String::from("axis\tvalue\tframes\tsuccesses\tsuccess_rate\tp50_ms\tp90_ms\tp99_ms\tmax_ms\tfailures\n");
        for p in &self.points {
            let failures: Vec<String> = p.failures.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.4}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{}\n",
                self.axis,
                p.value,
                p.frames.len(),
                p.successes,
                p.success_rate,
                p.timing.p50_ms,
                p.timing.p90_ms,
                p.timing.p99_ms,
                p.timing.max_ms,
                failures.join(",")
            ));
        }
        out
    }

    /// One row per frame per axis value.
    pub fn frames_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        let mut out = String::from(
            "axis\tvalue\tframe\tstatus\ttranslation_error\trotation_error\tpeak_votes\tmatches\tfeatures\ttotal_ms\n",
        );
        for p in &self.points {
            for f in &p.frames {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\n",
                    self.axis,
                    p.value,
                    f.index,
                    f.status,
                    opt(f.translation_error),
                    opt(f.rotation_error),
                    f.peak_votes,
                    f.total_matches,
                    f.query_features,
                    f.total_ms
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs one sweep. Deterministic for fixed seeds; wall-clock timings are the
/// only fields that vary between runs.
pub fn run_sweep(cfg: &SweepConfig) -> Result<EvalReport> {
    cfg.axis.validate()?;
    cfg.criterion.validate()?;
    cfg.locate.validate()?;
    if cfg.texture_seeds.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one texture seed".into()));
    }
    let labels = cfg.axis.labels();
    let mut pooled: Vec<Vec<FrameRecord>> = vec![Vec::new(); labels.len()];
    for (m, &seed) in cfg.texture_seeds.iter().enumerate() {
        let suite = MapSuite::build(&MapSuiteConfig { texture_seed: seed, ..cfg.suite })?;
        let poses = suite.query_poses(cfg.queries_per_map, cfg.query_seed.wrapping_add(seed));
        let lookup = |id: u32| suite.map_features(id);
        let verify = cfg.verify.as_ref().map(|v| (v, &lookup as &FeatureLookup<'_>));
        let offset = m * cfg.queries_per_map;
        let mut run = |slot: usize, db: &MapDatabase, queries: &[Query]| -> Result<()> {
            let index = db.build_index(&cfg.index)?;
            let mut frames = evaluate_queries(db, &index, queries, &cfg.locate, verify, &cfg.criterion)?;
            for f in &mut frames {
                f.index += offset;
            }
            pooled[slot].extend(frames);
            Ok(())
        };
        match &cfg.axis {
            SweepAxis::Dimension(ks) => {
                let queries = suite.queries(&poses, cfg.query_degradation, &cfg.locate.detector)?;
                for (slot, &k) in ks.iter().enumerate() {
                    let db = suite.database(&BuildConfig { k, ..cfg.build.clone() })?;
                    run(slot, &db, &queries)?;
                }
            }
            SweepAxis::Selection(policies) => {
                let queries = suite.queries(&poses, cfg.query_degradation, &cfg.locate.detector)?;
                for (slot, &policy) in policies.iter().enumerate() {
                    let db = suite.database(&BuildConfig { policy, ..cfg.build.clone() })?;
                    run(slot, &db, &queries)?;
                }
            }
            SweepAxis::Occlusion(values) | SweepAxis::Blur(values) => {
                let db = suite.database(&cfg.build)?;
                for (slot, &v) in values.iter().enumerate() {
                    let mut d = cfg.query_degradation;
                    if matches!(cfg.axis, SweepAxis::Occlusion(_)) {
                        d.occlusion = v;
                    } else {
                        d.blur_length = v;
                    }
                    let queries = suite.queries(&poses, d, &cfg.locate.detector)?;
                    run(slot, &db, &queries)?;
                }
            }
        }
    }
    let points = labels.into_iter().zip(pooled).map(|(l, f)| SweepPoint::from_frames(l, f)).collect();
    Ok(EvalReport { axis: cfg.axis.name().to_string(), criterion: cfg.criterion, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, step: f64) -> Vec<Pose2> {
        (0..n).map(|i| Pose2::new(0.01 * i as f64, step * i as f64, 0.5 * step * i as f64)).collect()
    }

    #[test]
    fn criterion_bounds() {
        let c = SuccessCriterion::default();
        let truth = Pose2::new(0.2, 100.0, 50.0);
        assert!(!c.accepts(&Pose2::new(0.2, 140.0, 50.0), &truth));
        assert!(c.accepts(&Pose2::new(0.2 + 0.5f64.to_radians(), 100.0, 50.0), &truth));
        assert!(c.accepts(&Pose2::new(0.2, 130.0, 50.0), &truth));
        assert!(!c.accepts(&Pose2::new(0.2 + 1.6f64.to_radians(), 100.0, 50.0), &truth));
    }

    #[test]
    fn criterion_parses() {
        let c: SuccessCriterion = "30px:1.5deg".parse().unwrap();
        assert_eq!(c, SuccessCriterion::default());
        assert_eq!(c.to_string().parse::<SuccessCriterion>().unwrap(), c);
        for bad in ["30:1.5", "0px:1deg", "30px:-1deg", "px:deg", ""] {
            assert!(bad.parse::<SuccessCriterion>().is_err(), "{bad}");
        }
    }

    #[test]
    fn constant_velocity_has_no_flags() {
        assert!(coherence_flags(&line(20, 40.0), &CoherenceConfig::default()).iter().all(|f| !f));
        assert!(coherence_flags(&line(20, 0.0), &CoherenceConfig::default()).iter().all(|f| !f));
    }

    #[test]
    fn teleport_flags_exactly_that_frame() {
        for at in 0..12 {
            let mut poses = line(12, 30.0);
            poses[at].tx += 900.0;
            let flags = coherence_flags(&poses, &CoherenceConfig::default());
            let flagged: Vec<usize> = flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect();
            assert_eq!(flagged, vec![at]);
        }
    }

    #[test]
    fn short_sequences_have_no_flags() {
        let c = CoherenceConfig::default();
        assert!(coherence_flags(&[], &c).is_empty());
        let two = [Pose2::IDENTITY, Pose2::from_translation(1e4, 0.0)];
        assert_eq!(coherence_flags(&two, &c), vec![false, false]);
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = TimingSummary::of(&v);
        assert_eq!((t.p50_ms, t.p90_ms, t.p99_ms, t.max_ms), (50.0, 90.0, 99.0, 100.0));
        assert_eq!(TimingSummary::of(&[]), TimingSummary::default());
        assert_eq!(TimingSummary::of(&[7.0]).p50_ms, 7.0);
    }

    #[test]
    fn sweep_point_rate_and_histogram() {
        let rec = |status| FrameRecord {
            index: 0,
            status,
            pose: None,
            truth: None,
            translation_error: None,
            rotation_error: None,
            peak_votes: 0,
            total_matches: 0,
            query_features: 0,
            verdict: None,
            total_ms: 1.0,
        };
        let frames = vec![
            rec(FrameStatus::Success),
            rec(FrameStatus::Success),
            rec(FrameStatus::WrongPose),
            rec(FrameStatus::Localization(FailureReason::WeakPeak)),
        ];
        let p = SweepPoint::from_frames("x", frames);
        assert_eq!(p.successes, 2);
        assert_eq!(p.success_rate, 0.5);
        assert_eq!(p.failures.get("wrong-pose"), Some(&1));
        assert_eq!(p.failures.get("weak-peak"), Some(&1));
        assert_eq!(p.verify_agreement, None);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("k=8,16".parse::<SweepAxis>().unwrap(), SweepAxis::Dimension(vec![8, 16]));
        assert_eq!("occlusion=0,0.5".parse::<SweepAxis>().unwrap(), SweepAxis::Occlusion(vec![0.0, 0.5]));
        assert_eq!(
            "selection=random,top-response".parse::<SweepAxis>().unwrap(),
            SweepAxis::Selection(vec![SelectionPolicy::Random, SelectionPolicy::TopResponse])
        );
        for bad in ["k=", "k=0", "occlusion=1.0", "blur=-1", "speed=1", "k"] {
            assert!(bad.parse::<SweepAxis>().is_err(), "{bad}");
        }
    }

    #[test]
    fn invalid_sweep_rejected_before_work() {
        let mut cfg = SweepConfig::new(SweepAxis::Dimension(vec![]));
        assert!(run_sweep(&cfg).is_err());
        cfg.axis = SweepAxis::Dimension(vec![8]);
        cfg.texture_seeds.clear();
        assert!(run_sweep(&cfg).is_err());
    }
}
