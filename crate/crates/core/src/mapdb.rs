//! Map database construction and the TXDB file format.
//!
//! TXDB layout, all integers and floats little-endian:
//!
//! ```text
//! "TXDB" u32 version u32 flags
//! meta      f64 mm_per_pixel, u64 seed, u32 features_per_image, u8 policy, str capture_date
//! images    u32 count, then per image: u32 id, f64 theta tx ty, u32 width height, str source
//! basis     u32 k, u32 dim, f32[dim] mean, f32[k*dim] components, f64[k] eigenvalues
//! buckets   f32[11] edges
//! features  u32 count, u32 dim, then per feature: u32 image_id, f64 theta tx ty, f32 scale, f32[dim]
//! trailer   u32 CRC-32 of every preceding byte
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{Descriptor, ImageFeatures, WorldFeature};
use crate::index::{AnnIndex, IndexParams, ScaleBuckets, BUCKET_COUNT};
use crate::pca::{fit_basis, DescriptorBasis};
use crate::pose::Pose2;
use crate::DEFAULT_MM_PER_PIXEL;

pub const MAGIC: &[u8; 4] = b"TXDB";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_FEATURES_PER_IMAGE: usize = 50;
pub const DEFAULT_K: usize = 16;
/// Cap on descriptors used to fit a basis; larger sets are strided.
const BASIS_SAMPLE_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapImage {
    pub image_id: u32,
    /// Image frame to world frame.
    pub pose: Pose2,
    pub width: u32,
    pub height: u32,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionPolicy {
    /// Uniform random subset per image.
    Random,
    /// Strongest DoG responses first. Kept for comparison only.
    TopResponse,
}

impl std::str::FromStr for SelectionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "top-response" => Ok(Self::TopResponse),
            _ => Err(Error::InvalidParameter(format!("unknown selection policy {s:?}"))),
        }
    }
}

impl std::fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::TopResponse => "top-response",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub mm_per_pixel: f64,
    pub capture_date: String,
    pub seed: u64,
    pub features_per_image: u32,
    pub policy: SelectionPolicy,
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub k: usize,
    pub features_per_image: usize,
    pub seed: u64,
    pub policy: SelectionPolicy,
    /// Use this basis instead of fitting one to the map's descriptors.
    pub basis: Option<DescriptorBasis>,
    pub mm_per_pixel: f64,
    pub capture_date: String,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            features_per_image: DEFAULT_FEATURES_PER_IMAGE,
            seed: 0,
            policy: SelectionPolicy::Random,
            basis: None,
            mm_per_pixel: DEFAULT_MM_PER_PIXEL,
            capture_date: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapDatabase {
    pub images: Vec<MapImage>,
    pub features: Vec<WorldFeature>,
    pub basis: DescriptorBasis,
    pub buckets: ScaleBuckets,
    pub meta: MapMeta,
}

/// Indices of the features kept from one image, ascending.
pub fn select_features(
    features: &ImageFeatures,
    count: usize,
    policy: SelectionPolicy,
    seed: u64,
    image_id: u32,
) -> Vec<usize> {
    let n = features.len();
    if count >= n {
        return (0..n).collect();
    }
    let mut picked = match policy {
        SelectionPolicy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (image_id as u64).wrapping_mul(0xA24B_AED4_963E_E407));
            sample(&mut rng, n, count).into_vec()
        }
        SelectionPolicy::TopResponse => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                features.keypoints[b].response.total_cmp(&features.keypoints[a].response).then(a.cmp(&b))
            });
            order.truncate(count);
            order
        }
    };
    picked.sort_unstable();
    picked
}

/// Fits a basis on a deterministic stride sample of all descriptors.
pub fn fit_basis_on(sets: &[&ImageFeatures], k: usize) -> Result<DescriptorBasis> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    let stride = total.div_ceil(BASIS_SAMPLE_CAP).max(1);
    let sample: Vec<Descriptor> = sets.iter().flat_map(|s| s.descriptors.iter()).step_by(stride).cloned().collect();
    fit_basis(&sample, k)
}

/// Builds a database from posed map images and their full feature sets,
/// given as `(image_id, features)`.
pub fn build_database(
    images: &[MapImage],
    feature_sets: &[(u32, ImageFeatures)],
    cfg: &BuildConfig,
) -> Result<MapDatabase> {
    if cfg.features_per_image == 0 {
        return Err(Error::InvalidParameter("features_per_image must be positive".into()));
    }
    let mut ids = HashSet::new();
    for img in images {
        if !ids.insert(img.image_id) {
            return Err(Error::InvalidParameter(format!("duplicate image id {}", img.image_id)));
        }
    }
    let mut posed = Vec::with_capacity(feature_sets.len());
    for (id, feats) in feature_sets {
        let img = images.iter().find(|i| i.image_id == *id).ok_or(Error::MissingPose(*id))?;
        if !img.pose.is_finite() {
            return Err(Error::MissingPose(*id));
        }
        if feats.keypoints.len() != feats.descriptors.len() {
            return Err(Error::InvalidParameter(format!("image {id}: keypoint and descriptor counts differ")));
        }
        posed.push((img, feats));
    }
    if posed.iter().all(|(_, f)| f.is_empty()) {
        return Err(Error::NoFeatures);
    }

    let basis = match &cfg.basis {
        Some(b) => {
            if b.k() != cfg.k {
                b.truncated(cfg.k)?
            } else {
                b.clone()
            }
        }
        None => fit_basis_on(&posed.iter().map(|(_, f)| *f).collect::<Vec<_>>(), cfg.k)?,
    };

    let place = |(img, feats): &(&MapImage, &ImageFeatures)| -> Result<Vec<WorldFeature>> {
        select_features(feats, cfg.features_per_image, cfg.policy, cfg.seed, img.image_id)
            .into_iter()
            .map(|i| {
                let kp = &feats.keypoints[i];
                Ok(WorldFeature {
                    pose: img.pose.compose(&kp.pose()),
                    scale: kp.scale,
                    descriptor: basis.project(&feats.descriptors[i])?,
                    image_id: img.image_id,
                })
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let per_image: Vec<Vec<WorldFeature>> = {
        use rayon::prelude::*;
        posed.par_iter().map(place).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let per_image: Vec<Vec<WorldFeature>> = posed.iter().map(place).collect::<Result<_>>()?;
    let features: Vec<WorldFeature> = per_image.into_iter().flatten().collect();
    let buckets = ScaleBuckets::from_scales(&features.iter().map(|f| f.scale).collect::<Vec<_>>())?;

    Ok(MapDatabase {
        images: images.to_vec(),
        features,
        basis,
        buckets,
        meta: MapMeta {
            mm_per_pixel: cfg.mm_per_pixel,
            capture_date: cfg.capture_date.clone(),
            seed: cfg.seed,
            features_per_image: cfg.features_per_image as u32,
            policy: cfg.policy,
        },
    })
}

impl MapDatabase {
    pub fn build_index(&self, params: &IndexParams) -> Result<AnnIndex> {
        AnnIndex::build(&self.features, self.buckets, params)
    }

    pub fn image(&self, id: u32) -> Option<&MapImage> {
        self.images.iter().find(|i| i.image_id == id)
    }

    /// Axis-aligned world bounding box of all image footprints as
    /// `(min_x, min_y, max_x, max_y)`.
    pub fn footprint(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for img in &self.images {
            let (w, h) = (img.width as f64, img.height as f64);
            for c in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
                let (x, y) = img.pose.apply(c);
                b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
            }
        }
        b
    }

    /// The map image whose centre is closest to `point` in the world frame.
    pub fn closest_image(&self, point: (f64, f64)) -> Option<&MapImage> {
        self.images.iter().min_by(|a, b| {
            let da = centre_distance(a, point);
            let db = centre_distance(b, point);
            da.total_cmp(&db).then(a.image_id.cmp(&b.image_id))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(64 + self.features.len() * (40 + 4 * self.basis.k())));
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(0);

        w.f64(self.meta.mm_per_pixel);
        w.u64(self.meta.seed);
        w.u32(self.meta.features_per_image);
        w.u8(match self.meta.policy {
            SelectionPolicy::Random => 0,
            SelectionPolicy::TopResponse => 1,
        });
        w.str(&self.meta.capture_date);

        w.u32(self.images.len() as u32);
        for img in &self.images {
            w.u32(img.image_id);
            w.pose(&img.pose);
            w.u32(img.width);
            w.u32(img.height);
            w.str(&img.source);
        }

        w.u32(self.basis.k() as u32);
        w.u32(self.basis.dim() as u32);
        self.basis.mean().iter().for_each(|&v| w.f32(v));
        self.basis.components().iter().for_each(|&v| w.f32(v));
        self.basis.eigenvalues().iter().for_each(|&v| w.f64(v));

        self.buckets.edges().iter().for_each(|&e| w.f32(e));

        w.u32(self.features.len() as u32);
        w.u32(self.basis.k() as u32);
        for f in &self.features {
            w.u32(f.image_id);
            w.pose(&f.pose);
            w.f32(f.scale);
            f.descriptor.values().iter().for_each(|&v| w.f32(v));
        }
        let crc = crc32fast::hash(&w.0);
        w.u32(crc);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(if bytes.len() < 4 { Error::Truncated } else { Error::BadMagic });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
        }
        let _flags = r.u32()?;

        let mm_per_pixel = r.f64()?;
        let seed = r.u64()?;
        let features_per_image = r.u32()?;
        let policy = match r.u8()? {
            0 => SelectionPolicy::Random,
            1 => SelectionPolicy::TopResponse,
            p => return Err(Error::Corrupt(format!("unknown selection policy {p}"))),
        };
        let capture_date = r.str()?;

        let n_images = r.count(28)?;
        let mut images = Vec::with_capacity(n_images);
        for _ in 0..n_images {
            images.push(MapImage {
                image_id: r.u32()?,
                pose: r.pose()?,
                width: r.u32()?,
                height: r.u32()?,
                source: r.str()?,
            });
        }

        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if k == 0 || k > dim || dim > 4096 {
            return Err(Error::Corrupt(format!("basis k={k}, dim={dim}")));
        }
        let mean = r.f32s(dim)?;
        let components = r.f32s(k * dim)?;
        let eigenvalues = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let basis = DescriptorBasis::from_parts(mean, components, eigenvalues)?;

        let mut edges = [0.0f32; BUCKET_COUNT + 1];
        for e in edges.iter_mut() {
            *e = r.f32()?;
        }
        let buckets = ScaleBuckets::new(edges).map_err(|e| Error::Corrupt(e.to_string()))?;

        let n_features = r.count(32)?;
        let fdim = r.u32()? as usize;
        if fdim != k {
            return Err(Error::DimensionMismatch { expected: k, actual: fdim });
        }
        let mut features = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            features.push(WorldFeature {
                image_id: r.u32()?,
                pose: r.pose()?,
                scale: r.f32()?,
                descriptor: Descriptor(r.f32s(fdim)?),
            });
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(MapDatabase {
            images,
            features,
            basis,
            buckets,
            meta: MapMeta { mm_per_pixel, capture_date, seed, features_per_image, policy },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn centre_distance(img: &MapImage, point: (f64, f64)) -> f64 {
    let c = img.pose.apply((img.width as f64 / 2.0, img.height as f64 / 2.0));
    (c.0 - point.0).hypot(c.1 - point.1)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn pose(&mut self, p: &Pose2) {
        self.f64(p.theta);
        self.f64(p.tx);
        self.f64(p.ty);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated)?;
        let out = self.buf[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        if n.saturating_mul(4) > self.buf.len() - self.pos {
            return Err(Error::Truncated);
        }
        (0..n).map(|_| self.f32()).collect()
    }
    /// Reads a record count, rejecting counts the remaining bytes cannot hold.
    fn count(&mut self, min_record: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_record) > self.buf.len() - self.pos {
            return Err(Error::Truncated);
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > self.buf.len() - self.pos {
            return Err(Error::Truncated);
        }
        let s = std::str::from_utf8(&self.buf[self.pos..self.pos + n]).map_err(|e| Error::Corrupt(e.to_string()))?;
        self.pos += n;
        Ok(s.to_owned())
    }
    fn pose(&mut self) -> Result<Pose2> {
        Ok(Pose2 { theta: self.f64()?, tx: self.f64()?, ty: self.f64()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::Keypoint;
    use rand::Rng;

    fn fake_features(n: usize, seed: u64) -> ImageFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = ImageFeatures::default();
        for _ in 0..n {
            f.keypoints.push(Keypoint {
                x: rng.random_range(0.0..640.0),
                y: rng.random_range(0.0..480.0),
                scale: rng.random_range(1.6..20.0),
                orientation: rng.random_range(-3.0..3.0),
                response: rng.random_range(0.0..0.1),
            });
            f.descriptors.push(Descriptor((0..128).map(|_| rng.random::<f32>()).collect()));
        }
        f
    }

    fn fixture() -> (Vec<MapImage>, Vec<(u32, ImageFeatures)>) {
        let images = (0..3)
            .map(|i| MapImage {
                image_id: i,
                pose: Pose2::new(0.1 * i as f64, 300.0 * i as f64, 20.0),
                width: 640,
                height: 480,
                source: format!("{i:05}.png"),
            })
            .collect();
        let sets = vec![(0, fake_features(400, 1)), (1, fake_features(30, 2)), (2, fake_features(200, 3))];
        (images, sets)
    }

    #[test]
    fn selects_exact_counts_without_duplicates() {
        let (images, sets) = fixture();
        let db = build_database(&images, &sets, &BuildConfig::default()).unwrap();
        let count = |id| db.features.iter().filter(|f| f.image_id == id).count();
        assert_eq!((count(0), count(1), count(2)), (50, 30, 50));
        assert!(db.features.iter().all(|f| f.descriptor.dim() == 16));
        let sel = select_features(&sets[0].1, 50, SelectionPolicy::Random, 0, 0);
        let unique: HashSet<_> = sel.iter().collect();
        assert_eq!(unique.len(), 50);
    }

    #[test]
    fn world_pose_composes_image_and_keypoint() {
        let (images, sets) = fixture();
        let db = build_database(&images, &sets, &BuildConfig::default()).unwrap();
        let sel = select_features(&sets[2].1, 50, SelectionPolicy::Random, 0, 2);
        let kp = sets[2].1.keypoints[sel[0]];
        let wf = db.features.iter().find(|f| f.image_id == 2).unwrap();
        let expect = images[2].pose.compose(&kp.pose());
        assert_eq!(wf.pose, expect);
        assert_eq!(wf.scale, kp.scale);
    }

    #[test]
    fn top_response_policy_picks_strongest() {
        let f = fake_features(100, 9);
        let sel = select_features(&f, 10, SelectionPolicy::TopResponse, 0, 0);
        let min_kept = sel.iter().map(|&i| f.keypoints[i].response).fold(f32::INFINITY, f32::min);
        let dropped_max = (0..100).filter(|i| !sel.contains(i)).map(|i| f.keypoints[i].response).fold(0.0, f32::max);
        assert!(min_kept >= dropped_max);
    }

    #[test]
    fn build_errors() {
        let (images, mut sets) = fixture();
        sets.push((9, fake_features(5, 4)));
        assert!(matches!(build_database(&images, &sets, &BuildConfig::default()), Err(Error::MissingPose(9))));
        let empty = vec![(0, ImageFeatures::default())];
        assert!(matches!(build_database(&images, &empty, &BuildConfig::default()), Err(Error::NoFeatures)));
    }

    #[test]
    fn round_trip_and_determinism() {
        let (images, sets) = fixture();
        let cfg = BuildConfig { seed: 42, capture_date: "2026-10-16".into(), ..Default::default() };
        let a = build_database(&images, &sets, &cfg).unwrap();
        let b = build_database(&images, &sets, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let back = MapDatabase::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        let other = build_database(&images, &sets, &BuildConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(other.to_bytes(), a.to_bytes());
    }

    #[test]
    fn bytes_per_feature_within_budget() {
        let (images, sets) = fixture();
        let db = build_database(&images, &sets, &BuildConfig::default()).unwrap();
        let with = db.to_bytes().len();
        let mut fewer = db.clone();
        fewer.features.truncate(db.features.len() - 100);
        let per_feature = (with - fewer.to_bytes().len()) as f64 / 100.0;
        assert!(per_feature <= 120.0, "{per_feature}");
    }

    #[test]
    fn corruption_is_detected() {
        let (images, sets) = fixture();
        let db = build_database(&images, &sets, &BuildConfig::default()).unwrap();
        let bytes = db.to_bytes();
        for pos in [5, 40, bytes.len() / 2, bytes.len() - 5] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(matches!(MapDatabase::from_bytes(&bad), Err(Error::ChecksumMismatch { .. })), "byte {pos}");
        }
        assert!(matches!(MapDatabase::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::ChecksumMismatch { .. })));
        assert!(matches!(MapDatabase::from_bytes(b"TX"), Err(Error::Truncated)));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(MapDatabase::from_bytes(&magic), Err(Error::BadMagic)));
    }

    #[test]
    fn future_version_rejected() {
        let (images, sets) = fixture();
        let mut bytes = build_database(&images, &sets, &BuildConfig::default()).unwrap().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(MapDatabase::from_bytes(&bytes), Err(Error::UnsupportedVersion { found: 2, supported: 1 })));
    }

    #[test]
    fn save_and_load_file() {
        let (images, sets) = fixture();
        let db = build_database(&images, &sets, &BuildConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.txdb");
        db.save(&path).unwrap();
        assert_eq!(MapDatabase::load(&path).unwrap(), db);
    }

    #[test]
    fn external_basis_is_used() {
        let (images, sets) = fixture();
        let universal = fit_basis(&fake_features(300, 77).descriptors, 16).unwrap();
        let cfg = BuildConfig { basis: Some(universal.clone()), k: 8, ..Default::default() };
        let db = build_database(&images, &sets, &cfg).unwrap();
        assert_eq!(db.basis, universal.truncated(8).unwrap());
    }
}
