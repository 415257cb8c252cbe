use serde_json::Value;
use texloc::synth::{Degradation, TextureStyle};
use texloc::Pose2;
use texloc_web::{Demo, QUERY};

#[test]
fn demo_localizes_its_own_texture() {
    let demo = Demo::build(4, TextureStyle::Scratchy).unwrap();
    assert_eq!((demo.width(), demo.height()), (1344, 1024));
    assert_eq!(demo.texture_rgba().len(), 1344 * 1024 * 4);
    assert_eq!(demo.frame_poses().len(), 27);
    assert_eq!(demo.feature_count(), 9 * texloc_web::FEATURES_PER_FRAME);
    assert!(demo.loop_closures() > 0);

    let pose = Pose2::new(0.6, 400.0, 220.0);
    assert!(demo.fits(0.6f64.to_degrees(), 400.0, 220.0));
    let img = demo.render(pose, Degradation::none()).unwrap();
    assert_eq!((img.width(), img.height()), QUERY);

    let v: Value = serde_json::from_str(&demo.locate(pose, Degradation::none()).unwrap()).unwrap();
    assert_eq!(v["status"], "success", "{v}");
    assert!(v["translation_error"].as_f64().unwrap() < 2.0, "{v}");
    assert!(v["rotation_error_deg"].as_f64().unwrap() < 0.1, "{v}");

    // the first stitched frame sits at the grid origin
    let first = &demo.frame_poses()[..3];
    assert!((first[0] - 32.0).abs() < 1e-9 && (first[1] - 32.0).abs() < 1e-9);
    assert!(!demo.fits(0.0, 1000.0, 700.0));
}

#[test]
fn demo_reports_failures_as_json() {
    let demo = Demo::build(5, TextureStyle::Granular).unwrap();
    // almost fully occluded query
    let d = Degradation { occlusion: 0.97, seed: 1, ..Degradation::none() };
    let v: Value = serde_json::from_str(&demo.locate(Pose2::new(0.0, 300.0, 200.0), d).unwrap()).unwrap();
    assert_eq!(v["status"], "failure", "{v}");
    assert!(v["reason"].is_string());
}
