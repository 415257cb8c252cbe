use std::sync::OnceLock;

use texloc::eval::*;
use texloc::index::{AnnIndex, IndexParams};
use texloc::locate::{FailureReason, Localizer, LocateConfig};
use texloc::mapdb::{BuildConfig, MapDatabase};
use texloc::synth::{generate_texture, sample_query, Degradation, TextureStyle};
use texloc::Pose2;

struct Fixture {
    suite: MapSuite,
    db: MapDatabase,
    index: AnnIndex,
    queries: Vec<Query>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let suite =
            MapSuite::build(&MapSuiteConfig { texture_seed: 5, cols: 3, rows: 3, ..Default::default() }).unwrap();
        let db = suite.database(&BuildConfig::default()).unwrap();
        let index = db.build_index(&IndexParams::default()).unwrap();
        let poses = suite.query_poses(24, 9);
        let queries = suite.queries(&poses, Degradation::none(), &Default::default()).unwrap();
        Fixture { suite, db, index, queries }
    })
}

#[test]
fn undegraded_queries_recover_truth() {
    let f = fixture();
    let loc = Localizer::new(&f.db, &f.index, LocateConfig::default()).unwrap();
    for q in &f.queries {
        let r = loc.localize_features(&q.features, q.size).expect("localized");
        let truth = q.truth.unwrap();
        let (t, a) = SuccessCriterion::errors(&r.pose, &truth);
        assert!(t <= 2.0 && a <= 0.1, "query {}: {t} px, {a} deg", q.index);
        assert!(r.inliers.len() >= 5);
    }
}

#[test]
fn raster_entry_point_matches_feature_entry_point() {
    let f = fixture();
    let pose = f.suite.query_poses(1, 77)[0];
    let img = sample_query(&f.suite.texture, pose, f.suite.config.frame, Degradation::none()).unwrap().image;
    let a = texloc::locate::localize(&f.db, &f.index, &img, &LocateConfig::default()).unwrap().unwrap();
    let b = texloc::locate::localize(&f.db, &f.index, &img, &LocateConfig::default()).unwrap().unwrap();
    assert_eq!(a.pose, b.pose);
    assert_eq!(a.inliers, b.inliers);
    assert!(a.pose.translation_distance(&f.suite.world_from_texture.compose(&pose)) <= 2.0);
}

#[test]
fn absent_texture_fails_with_weak_peak() {
    let f = fixture();
    let other = generate_texture(999, 3000, 3000, TextureStyle::Scratchy).unwrap();
    let loc = Localizer::new(&f.db, &f.index, LocateConfig::default()).unwrap();
    for (i, p) in [Pose2::new(0.3, 800.0, 700.0), Pose2::new(-1.0, 900.0, 1900.0), Pose2::new(2.0, 2500.0, 1400.0)]
        .iter()
        .enumerate()
    {
        let img = sample_query(&other, *p, (1280, 960), Degradation::none()).unwrap().image;
        let err = loc.localize(&img).expect_err("absent texture must not localize");
        assert_eq!(err.reason, FailureReason::WeakPeak, "query {i}");
        assert!(err.total_matches > 500);
    }
}

#[test]
fn verification_agrees_with_truth() {
    let f = fixture();
    let lookup = |id: u32| f.suite.map_features(id);
    let frames = evaluate_queries(
        &f.db,
        &f.index,
        &f.queries,
        &LocateConfig::default(),
        Some((&VerifyConfig::default(), &lookup)),
        &SuccessCriterion::default(),
    )
    .unwrap();
    let point = SweepPoint::from_frames("0", frames);
    assert_eq!(point.success_rate, 1.0);
    assert_eq!(point.verify_agreement, Some(1.0));
}

#[test]
fn verification_rejects_displaced_poses() {
    let f = fixture();
    let loc = Localizer::new(&f.db, &f.index, LocateConfig::default()).unwrap();
    let cfg = VerifyConfig::default();
    let lookup = |id: u32| f.suite.map_features(id);
    for q in f.queries.iter().take(8) {
        let mut r = loc.localize_features(&q.features, q.size).unwrap();
        let good = verify_pose(&f.db, &r, &q.features, q.size, lookup, &cfg);
        assert!(good.is_success());
        assert!(good.correspondences >= DEFAULT_MIN_CORRESPONDENCES);
        assert!(good.reference.unwrap().translation_distance(&q.truth.unwrap()) < 1.0);

        let exact = r.pose;
        r.pose = exact.compose(&Pose2::from_translation(40.0, 0.0));
        assert_eq!(verify_pose(&f.db, &r, &q.features, q.size, lookup, &cfg).status, VerdictStatus::PoseMismatch);

        // rotate 0.5° about the query centre
        let c = (q.size.0 as f64 / 2.0, q.size.1 as f64 / 2.0);
        let spin = Pose2::from_translation(c.0, c.1)
            .compose(&Pose2::from_rotation(0.5f64.to_radians()))
            .compose(&Pose2::from_translation(-c.0, -c.1));
        r.pose = exact.compose(&spin);
        assert!(verify_pose(&f.db, &r, &q.features, q.size, lookup, &cfg).is_success());
    }
}

#[test]
fn verification_needs_correspondences() {
    let f = fixture();
    let loc = Localizer::new(&f.db, &f.index, LocateConfig::default()).unwrap();
    let q = &f.queries[0];
    let r = loc.localize_features(&q.features, q.size).unwrap();
    let strict = VerifyConfig { min_correspondences: 100_000, ..Default::default() };
    let v = verify_pose(&f.db, &r, &q.features, q.size, |id| f.suite.map_features(id), &strict);
    assert_eq!(v.status, VerdictStatus::InsufficientCorrespondences);
    let v = verify_pose(&f.db, &r, &q.features, q.size, |_| None, &VerifyConfig::default());
    assert_eq!(v.status, VerdictStatus::NoReferenceImage);
}

#[test]
fn sweep_is_deterministic() {
    let mut cfg = SweepConfig::new(SweepAxis::Occlusion(vec![0.0, 0.5]));
    cfg.suite = MapSuiteConfig { cols: 2, rows: 2, frame: (640, 480), ..Default::default() };
    cfg.queries_per_map = 6;
    let strip = |r: &EvalReport| -> Vec<(String, Vec<(usize, FrameStatus, Option<Pose2>)>)> {
        r.points
            .iter()
            .map(|p| (p.value.clone(), p.frames.iter().map(|f| (f.index, f.status, f.pose)).collect()))
            .collect()
    };
    let a = run_sweep(&cfg).unwrap();
    let b = run_sweep(&cfg).unwrap();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.points.len(), 2);
    assert_eq!(a.summary_tsv().lines().count(), 3);
    assert_eq!(a.frames_tsv().lines().count(), 13);
    let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(json["axis"], "occlusion");
    for p in &a.points {
        assert_eq!(p.success_rate, p.successes as f64 / p.frames.len() as f64);
    }
}

#[test]
fn coherent_track_of_localizations() {
    // localize a straight track, then plant one bad frame
    let f = fixture();
    let loc = Localizer::new(&f.db, &f.index, LocateConfig::default()).unwrap();
    let mut poses = Vec::new();
    for i in 0..8 {
        let p = Pose2::new(0.1, 300.0 + 60.0 * i as f64, 300.0);
        let img = sample_query(&f.suite.texture, p, f.suite.config.frame, Degradation::none()).unwrap().image;
        poses.push(loc.localize(&img).unwrap().pose);
    }
    assert!(coherence_flags(&poses, &CoherenceConfig::default()).iter().all(|x| !x));
    poses[4] = poses[4].compose(&Pose2::from_translation(700.0, -300.0));
    let flags = coherence_flags(&poses, &CoherenceConfig::default());
    assert_eq!(flags.iter().filter(|x| **x).count(), 1);
    assert!(flags[4]);
}
