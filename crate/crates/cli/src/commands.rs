use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use texloc::eval::{
    evaluate_queries, run_sweep, FeatureLookup, MapSuiteConfig, Query, SweepConfig, SweepPoint, VerifyConfig,
};
use texloc::features::{detect_and_describe, read_records, write_records, DetectorConfig};
use texloc::locate::{LocalizationFailure, LocalizationResult, Localizer};
use texloc::mapdb::{build_database, BuildConfig, MapDatabase, MapImage, FORMAT_VERSION};
use texloc::stitch::{stitch_sequence, OptimizeConfig, StitchConfig};
use texloc::synth::{generate_texture, random_pose_inside, sample_raster, zigzag_capture, Degradation};
use texloc::{Error, ImageFeatures, Pose2, Raster};

use crate::files::{self, PoseRow};
use crate::{
    BuildDbArgs, BuildMapArgs, DbInfoArgs, EvaluateArgs, FramesArgs, LocalizeArgs, QueriesArgs, TextureArgs,
    SCHEMA_VERSION,
};

/// A command that did not complete.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or flag combinations; exit 2.
    Usage(String),
    /// Unreadable, unwritable or malformed input or output; exit 3.
    Data(Error),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Data(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::OutOfBounds | Error::RasterTooSmall { .. } => {
                Self::Usage(e.to_string())
            }
            e => Self::Data(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.into())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => f.write_str(m),
            Self::Data(e) => write!(f, "{e}"),
        }
    }
}

type Outcome = Result<u8, Failure>;

/// Writes a line to stdout. A closed pipe (`texloc ... | head`) is not an error.
fn say(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_json(v: &Value) {
    say(&serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn pose_json(p: &Pose2) -> Value {
    json!({ "tx": p.tx, "ty": p.ty, "theta_deg": p.theta.to_degrees() })
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn detect_file(path: &Path, cfg: &DetectorConfig) -> Result<(Raster, ImageFeatures), Failure> {
    let img = Raster::load(path)?;
    let feats = detect_and_describe(&img, cfg);
    Ok((img, feats))
}

pub fn synth_texture(a: &TextureArgs) -> Outcome {
    let (gw, gh) = a.grid.spec()?.texture_size();
    let (w, h) = (a.width.unwrap_or(gw), a.height.unwrap_or(gh));
    let tex = generate_texture(a.seed, w, h, a.style)?;
    tex.raster.save(&a.out)?;
    log::info!("wrote {w}x{h} {} texture to {}", a.style, a.out.display());
    print_json(&json!({
        "schema_version": SCHEMA_VERSION,
        "path": a.out,
        "seed": a.seed,
        "style": a.style.to_string(),
        "width": w,
        "height": h,
    }));
    Ok(0)
}

pub fn synth_frames(a: &FramesArgs) -> Outcome {
    let grid = a.grid.spec()?;
    let degradation = a.degradation.degradation()?;
    let tex = Raster::load(&a.texture)?;
    let (need_w, need_h) = grid.texture_size();
    if tex.width() < need_w || tex.height() < need_h {
        return Err(Failure::usage(format!(
            "texture is {}x{} but the grid needs {need_w}x{need_h}",
            tex.width(),
            tex.height()
        )));
    }
    let frames = zigzag_capture(&tex, &grid, degradation)?;
    create_dir(&a.out)?;
    let mut rows = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let name = files::image_name(i as u32);
        f.image.save(a.out.join(&name))?;
        rows.push(PoseRow { name, pose: Some(f.truth) });
    }
    fs::write(a.out.join(files::TRUTH_TABLE), files::format_pose_table(&rows))?;
    log::info!("wrote {} frames to {}", frames.len(), a.out.display());
    print_json(&json!({ "schema_version": SCHEMA_VERSION, "frames": frames.len(), "out": a.out }));
    Ok(0)
}

fn parse_pose_flag(s: &str) -> Result<Pose2, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::usage(format!("--pose {s:?}: {e}")))?;
    match v[..] {
        [deg, tx, ty] if v.iter().all(|x| x.is_finite()) => Ok(Pose2::new(deg.to_radians(), tx, ty)),
        _ => Err(Failure::usage(format!("--pose {s:?}: expected THETA_DEG,TX,TY"))),
    }
}

pub fn synth_queries(a: &QueriesArgs) -> Outcome {
    let degradation = a.degradation.degradation()?;
    let size = (a.width, a.height);
    if a.width < 2 || a.height < 2 {
        return Err(Failure::usage("query size must be at least 2x2"));
    }
    let tex = Raster::load(&a.texture)?;
    // frames from `synth frames`: their covered area and the map gauge
    let (region, to_map) = match &a.frames {
        Some(dir) => {
            let rows = files::read_pose_table(&dir.join(files::TRUTH_TABLE), "frame truth")?;
            let poses: Vec<Pose2> = rows.iter().filter_map(|r| r.pose).collect();
            if poses.is_empty() || poses.len() != rows.len() {
                return Err(Failure::Data(Error::Parse {
                    what: "frame truth",
                    line: 1,
                    msg: "every frame needs a pose".into(),
                }));
            }
            let first = files::list_images(dir)?.into_iter().next().ok_or_else(|| Failure::usage("no frames found"))?;
            let frame = Raster::load(first)?;
            let (fw, fh) = ((frame.width() - 1) as f64, (frame.height() - 1) as f64);
            let mut r = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for p in &poses {
                for c in [(0.0, 0.0), (fw, 0.0), (0.0, fh), (fw, fh)] {
                    let (x, y) = p.apply(c);
                    r = (r.0.min(x), r.1.min(y), r.2.max(x), r.3.max(y));
                }
            }
            (r, poses[0].inverse())
        }
        None => ((0.0, 0.0, (tex.width() - 1) as f64, (tex.height() - 1) as f64), Pose2::IDENTITY),
    };
    let poses: Vec<Pose2> = if a.poses.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        (0..a.count)
            .map(|_| random_pose_inside(&mut rng, region, size))
            .collect::<Option<_>>()
            .ok_or_else(|| Failure::usage("query size does not fit inside the sampling region"))?
    } else {
        a.poses.iter().map(|s| parse_pose_flag(s)).collect::<Result<_, _>>()?
    };
    create_dir(&a.out)?;
    let mut rows = Vec::with_capacity(poses.len());
    for (i, p) in poses.iter().enumerate() {
        let d = Degradation { seed: degradation.seed.wrapping_add(i as u64), ..degradation };
        let q = sample_raster(&tex, *p, size, d)?;
        let name = files::image_name(i as u32);
        q.image.save(a.out.join(&name))?;
        rows.push(PoseRow { name, pose: Some(to_map.compose(p)) });
    }
    fs::write(a.out.join(files::TRUTH_TABLE), files::format_pose_table(&rows))?;
    log::info!("wrote {} queries to {}", poses.len(), a.out.display());
    print_json(&json!({ "schema_version": SCHEMA_VERSION, "queries": poses.len(), "out": a.out }));
    Ok(0)
}

pub fn build_map(a: &BuildMapArgs) -> Outcome {
    let detector = a.detector.config()?;
    if !(0.0..=1.0).contains(&a.min_overlap) {
        return Err(Failure::usage("--min-overlap must lie in [0, 1]"));
    }
    let paths = files::list_images(&a.frames)?;
    if paths.is_empty() {
        return Err(Failure::usage(format!("no PNG or PGM frames in {}", a.frames.display())));
    }
    let started = Instant::now();
    let loaded: Vec<(Raster, ImageFeatures)> =
        paths.par_iter().map(|p| detect_file(p, &detector)).collect::<Result<_, _>>()?;
    let size = (loaded[0].0.width(), loaded[0].0.height());
    if let Some((i, _)) = loaded.iter().enumerate().find(|(_, (r, _))| (r.width(), r.height()) != size) {
        return Err(Failure::Data(Error::Image {
            path: paths[i].clone(),
            msg: format!("frame size differs from the first frame's {}x{}", size.0, size.1),
        }));
    }
    log::info!("detected features in {} frames in {:.1} s", paths.len(), started.elapsed().as_secs_f64());
    let feats: Vec<ImageFeatures> = loaded.iter().map(|(_, f)| f.clone()).collect();
    let cfg = StitchConfig {
        loop_closures: !a.no_loop_closures,
        min_overlap: a.min_overlap,
        optimize: OptimizeConfig::for_frame(size.0 as u32, size.1 as u32),
        ..StitchConfig::for_frame(size.0 as u32, size.1 as u32)
    };
    let out = stitch_sequence(&feats, (size.0 as u32, size.1 as u32), &cfg)?;
    create_dir(&a.out)?;
    let mut rows = Vec::with_capacity(out.images.len());
    for (img, (raster, f)) in out.images.iter().zip(&loaded) {
        raster.save(a.out.join(files::image_name(img.image_id)))?;
        let mut buf = Vec::new();
        write_records(&mut buf, f)?;
        fs::write(a.out.join(files::feature_name(img.image_id)), buf)?;
        rows.push(PoseRow { name: img.image_id.to_string(), pose: Some(img.pose) });
    }
    fs::write(a.out.join(files::MAP_TABLE), files::format_pose_table(&rows))?;
    print_json(&json!({
        "schema_version": SCHEMA_VERSION,
        "images": out.images.len(),
        "sequential_constraints": out.sequential.len(),
        "loop_closures": out.loop_closures.len(),
        "initial_cost": out.optimization.initial_cost,
        "cost": out.optimization.cost,
        "converged": out.optimization.converged,
        "out": a.out,
    }));
    Ok(0)
}

/// A map directory's images and the full feature set of each, read from the
/// cached `.feat` files or detected afresh.
fn load_map(dir: &Path, detector: &DetectorConfig) -> Result<(Vec<MapImage>, Vec<(u32, ImageFeatures)>), Failure> {
    let table = files::read_map_table(dir)?;
    let loaded: Vec<(MapImage, (u32, ImageFeatures))> = table
        .par_iter()
        .map(|&(id, pose)| {
            let path = dir.join(files::image_name(id));
            let raster = Raster::load(&path)?;
            let cached = dir.join(files::feature_name(id));
            let feats = if cached.is_file() {
                read_records(std::io::BufReader::new(fs::File::open(&cached)?))?
            } else {
                detect_and_describe(&raster, detector)
            };
            let image = MapImage {
                image_id: id,
                pose,
                width: raster.width() as u32,
                height: raster.height() as u32,
                source: files::image_name(id),
            };
            Ok((image, (id, feats)))
        })
        .collect::<Result<_, Failure>>()?;
    Ok(loaded.into_iter().unzip())
}

fn db_summary(db: &MapDatabase) -> Value {
    let (x0, y0, x1, y1) = db.footprint();
    json!({
        "schema_version": SCHEMA_VERSION,
        "format_version": FORMAT_VERSION,
        "images": db.images.len(),
        "features": db.features.len(),
        "k": db.basis.k(),
        "descriptor_dim": db.basis.dim(),
        "bucket_edges": db.buckets.edges(),
        "footprint": { "min_x": x0, "min_y": y0, "max_x": x1, "max_y": y1 },
        "meta": {
            "mm_per_pixel": db.meta.mm_per_pixel,
            "capture_date": db.meta.capture_date,
            "seed": db.meta.seed,
            "features_per_image": db.meta.features_per_image,
            "policy": db.meta.policy.to_string(),
        },
    })
}

pub fn build_db(a: &BuildDbArgs) -> Outcome {
    let detector = a.detector.config()?;
    if a.k == 0 || a.per_image == 0 {
        return Err(Failure::usage("--k and --per-image must be positive"));
    }
    if !(a.mm_per_pixel > 0.0) {
        return Err(Failure::usage("--mm-per-pixel must be positive"));
    }
    let (images, feats) = load_map(&a.map, &detector)?;
    let cfg = BuildConfig {
        k: a.k,
        features_per_image: a.per_image,
        seed: a.seed,
        policy: a.policy,
        basis: None,
        mm_per_pixel: a.mm_per_pixel,
        capture_date: a.capture_date.clone(),
    };
    let db = build_database(&images, &feats, &cfg)?;
    db.save(&a.out)?;
    log::info!("wrote {} features from {} images to {}", db.features.len(), db.images.len(), a.out.display());
    print_json(&db_summary(&db));
    Ok(0)
}

pub fn db_info(a: &DbInfoArgs) -> Outcome {
    let db = MapDatabase::load(&a.db)?;
    let mut v = db_summary(&db);
    v["bytes"] = json!(fs::metadata(&a.db)?.len());
    print_json(&v);
    Ok(0)
}

fn success_json(r: &LocalizationResult, mm_per_pixel: f64) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "status": "success",
        "pose": pose_json(&r.pose),
        "pose_mm": { "x": r.pose.tx * mm_per_pixel, "y": r.pose.ty * mm_per_pixel },
        "inliers": r.inliers.len(),
        "peak_votes": r.peak_votes,
        "peak_cell_votes": r.peak_cell_votes,
        "second_peak_votes": r.second_peak_votes,
        "total_matches": r.total_matches,
        "query_features": r.query_features,
        "timings_ms": r.timings,
    })
}

fn failure_json(f: &LocalizationFailure) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "status": "failure",
        "reason": f.reason.to_string(),
        "peak_votes": f.peak_votes,
        "peak_cell_votes": f.peak_cell_votes,
        "total_matches": f.total_matches,
        "query_features": f.query_features,
        "timings_ms": f.timings,
    })
}

pub fn localize(a: &LocalizeArgs) -> Outcome {
    let (locate, index_params) = a.locate.configs()?;
    let db = MapDatabase::load(&a.db)?;
    let index = db.build_index(&index_params)?;
    let image = Raster::load(&a.image)?;
    let localizer = Localizer::new(&db, &index, locate)?;
    match localizer.localize(&image) {
        Ok(r) => {
            if a.json {
                print_json(&success_json(&r, db.meta.mm_per_pixel));
            } else {
                say(&format!(
                    "tx {:.2} ty {:.2} theta {:.3} deg inliers {} ({:.1} ms)",
                    r.pose.tx,
                    r.pose.ty,
                    r.pose.theta.to_degrees(),
                    r.inliers.len(),
                    r.timings.total_ms
                ));
            }
            Ok(0)
        }
        Err(f) => {
            if a.json {
                print_json(&failure_json(&f));
            } else {
                say(&format!("failed: {} ({} matches, {} peak votes)", f.reason, f.total_matches, f.peak_votes));
            }
            Ok(1)
        }
    }
}

fn write_report(a: &EvaluateArgs, report: Value, frames_tsv: String) -> Result<(), Failure> {
    if let Some(path) = &a.tsv {
        fs::write(path, frames_tsv)?;
    }
    match &a.out {
        Some(path) => fs::write(path, serde_json::to_string_pretty(&report).expect("json value serializes"))?,
        None => print_json(&report),
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Outcome {
    a.criterion.validate()?;
    let (locate, index_params) = a.locate.configs()?;
    let verify_cfg =
        VerifyConfig { criterion: a.criterion, min_correspondences: a.min_correspondences, ..Default::default() };

    if let Some(axis) = &a.sweep {
        let mut cfg = SweepConfig::new(axis.clone());
        cfg.texture_seeds = a.texture_seeds.clone();
        let grid = a.grid.spec()?;
        cfg.suite = MapSuiteConfig {
            cols: grid.cols,
            rows: grid.rows,
            frame: (grid.frame_width, grid.frame_height),
            margin: a.grid.margin,
            detector: locate.detector,
            ..cfg.suite
        };
        cfg.queries_per_map = a.queries_per_map;
        cfg.query_seed = a.query_seed;
        cfg.index = index_params;
        cfg.locate = locate;
        cfg.criterion = a.criterion;
        cfg.verify = a.sweep_verify.then_some(verify_cfg);
        let report = run_sweep(&cfg)?;
        let mut v = serde_json::to_value(&report).expect("report serializes");
        v["schema_version"] = json!(SCHEMA_VERSION);
        eprint!("{}", report.summary_tsv());
        write_report(a, v, report.frames_tsv())?;
        return Ok(0);
    }

    let (db_path, queries_path) = match (&a.db, &a.queries) {
        (Some(d), Some(q)) => (d, q),
        _ => return Err(Failure::usage("--db and --queries are required without --sweep")),
    };
    let db = MapDatabase::load(db_path)?;
    let index = db.build_index(&index_params)?;
    let listed = files::read_queries(queries_path)?;
    if listed.is_empty() {
        return Err(Failure::usage(format!("no queries in {}", queries_path.display())));
    }
    let queries: Vec<Query> = listed
        .par_iter()
        .enumerate()
        .map(|(index, (path, truth))| {
            let img = Raster::load(path)?;
            let started = Instant::now();
            let features = detect_and_describe(&img, &locate.detector);
            let features_ms = started.elapsed().as_secs_f64() * 1e3;
            Ok(Query { index, truth: *truth, size: (img.width(), img.height()), features, features_ms })
        })
        .collect::<Result<_, Failure>>()?;
    let map_feats: HashMap<u32, ImageFeatures> = match &a.map {
        Some(dir) => load_map(dir, &locate.detector)?.1.into_iter().collect(),
        None => HashMap::new(),
    };
    if a.map.is_none() && queries.iter().any(|q| q.truth.is_none()) {
        return Err(Failure::usage("queries without truth need --map for verification"));
    }
    let lookup = |id: u32| map_feats.get(&id);
    let verify = a.map.is_some().then_some((&verify_cfg, &lookup as &FeatureLookup<'_>));
    let frames = evaluate_queries(&db, &index, &queries, &locate, verify, &a.criterion)?;
    let point = SweepPoint::from_frames("all", frames);
    let mut tsv =
        String::from("index\tpath\tstatus\ttx\tty\ttheta_deg\ttranslation_error\trotation_error_deg\ttotal_ms\n");
    for f in &point.frames {
        let p =
            f.pose.map(|p| format!("{}\t{}\t{}", p.tx, p.ty, p.theta.to_degrees())).unwrap_or_else(|| "\t\t".into());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            f.index,
            listed[f.index].0.display(),
            f.status,
            p,
            opt(f.translation_error),
            opt(f.rotation_error),
            f.total_ms
        ));
    }
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "criterion": a.criterion.to_string(),
        "queries": point.frames.len(),
        "successes": point.successes,
        "success_rate": point.success_rate,
        "failures": point.failures,
        "timing": point.timing,
        "verify_agreement": point.verify_agreement,
        "frames": point.frames,
    });
    eprintln!("success rate {:.3} ({}/{})", point.success_rate, point.successes, point.frames.len());
    write_report(a, report, tsv)?;
    Ok(0)
}
