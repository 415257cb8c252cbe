//! Browser bindings: build a small stitched map from a procedural texture,
//! cut a query out of it and localize the query.

use serde_json::json;
use texloc::eval::{MapSuite, MapSuiteConfig};
use texloc::index::{AnnIndex, IndexParams};
use texloc::locate::{Localizer, LocateConfig};
use texloc::mapdb::{BuildConfig, MapDatabase};
use texloc::synth::{footprint_inside, sample_query, Degradation, TextureStyle};
use texloc::{Pose2, Raster, Result};
use wasm_bindgen::prelude::*;

pub const FRAME: (usize, usize) = (640, 480);
pub const QUERY: (usize, usize) = (480, 360);
/// Frames here are a quarter of a full camera frame, so keep more of each.
pub const FEATURES_PER_FRAME: usize = 200;

fn rgba(r: &Raster) -> Vec<u8> {
    r.to_u8().into_iter().flat_map(|v| [v, v, v, 255]).collect()
}

fn js_err(e: texloc::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A map built from one texture, ready to localize queries.
#[wasm_bindgen]
pub struct Demo {
    suite: MapSuite,
    db: MapDatabase,
    index: AnnIndex,
}

impl Demo {
    pub fn build(seed: u64, style: TextureStyle) -> Result<Self> {
        let suite = MapSuite::build(&MapSuiteConfig {
            texture_seed: seed,
            style,
            cols: 3,
            rows: 3,
            frame: FRAME,
            margin: 32,
            ..Default::default()
        })?;
        let db = suite.database(&BuildConfig { seed, features_per_image: FEATURES_PER_FRAME, ..Default::default() })?;
        let index = db.build_index(&IndexParams::default())?;
        Ok(Self { suite, db, index })
    }

    /// Query image at a texture-frame pose.
    pub fn render(&self, pose: Pose2, degradation: Degradation) -> Result<Raster> {
        Ok(sample_query(&self.suite.texture, pose, QUERY, degradation)?.image)
    }

    /// Localizes the query rendered at `pose` and reports the estimate in
    /// the texture frame as JSON.
    pub fn locate(&self, pose: Pose2, degradation: Degradation) -> Result<String> {
        let image = self.render(pose, degradation)?;
        let localizer = Localizer::new(&self.db, &self.index, LocateConfig::default())?;
        let texture_from_world = self.suite.world_from_texture.inverse();
        let deg = |p: &Pose2| json!({ "tx": p.tx, "ty": p.ty, "theta_deg": p.theta.to_degrees() });
        let v = match localizer.localize(&image) {
            Ok(r) => {
                let est = texture_from_world.compose(&r.pose);
                json!({
                    "status": "success",
                    "pose": deg(&est),
                    "translation_error": est.translation_distance(&pose),
                    "rotation_error_deg": est.rotation_distance(&pose).to_degrees(),
                    "inliers": r.inliers.len(),
                    "peak_votes": r.peak_votes,
                    "second_peak_votes": r.second_peak_votes,
                    "total_matches": r.total_matches,
                    "query_features": r.query_features,
                })
            }
            Err(f) => json!({
                "status": "failure",
                "reason": f.reason.to_string(),
                "total_matches": f.total_matches,
                "peak_votes": f.peak_votes,
                "query_features": f.query_features,
            }),
        };
        Ok(v.to_string())
    }

    pub fn suite(&self) -> &MapSuite {
        &self.suite
    }
}

#[wasm_bindgen]
impl Demo {
    /// Generates the texture, captures a 3x3 zig-zag of frames, stitches them
    /// and builds the database. `style` is scratchy, granular or fibrous.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, style: &str) -> std::result::Result<Demo, JsError> {
        let style: TextureStyle = style.parse().map_err(js_err)?;
        Self::build(seed as u64, style).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.suite.texture.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.suite.texture.height()
    }

    #[wasm_bindgen(getter, js_name = queryWidth)]
    pub fn query_width(&self) -> usize {
        QUERY.0
    }

    #[wasm_bindgen(getter, js_name = queryHeight)]
    pub fn query_height(&self) -> usize {
        QUERY.1
    }

    #[wasm_bindgen(getter, js_name = frameWidth)]
    pub fn frame_width(&self) -> usize {
        FRAME.0
    }

    #[wasm_bindgen(getter, js_name = frameHeight)]
    pub fn frame_height(&self) -> usize {
        FRAME.1
    }

    #[wasm_bindgen(getter, js_name = featureCount)]
    pub fn feature_count(&self) -> usize {
        self.db.features.len()
    }

    #[wasm_bindgen(getter, js_name = loopClosures)]
    pub fn loop_closures(&self) -> usize {
        self.suite.loop_closures
    }

    /// Texture pixels as RGBA for an `ImageData`.
    #[wasm_bindgen(js_name = textureRgba)]
    pub fn texture_rgba(&self) -> Vec<u8> {
        rgba(&self.suite.texture.raster)
    }

    /// Stitched frame poses in the texture frame, `[tx, ty, theta, ...]`.
    #[wasm_bindgen(js_name = framePoses)]
    pub fn frame_poses(&self) -> Vec<f64> {
        let t = self.suite.world_from_texture.inverse();
        self.suite
            .images
            .iter()
            .flat_map(|m| {
                let p = t.compose(&m.pose);
                [p.tx, p.ty, p.theta]
            })
            .collect()
    }

    /// Whether a query at this pose lies inside the texture.
    pub fn fits(&self, theta_deg: f64, tx: f64, ty: f64) -> bool {
        footprint_inside(&Pose2::new(theta_deg.to_radians(), tx, ty), QUERY, (self.width(), self.height()))
    }

    /// Query pixels as RGBA.
    #[wasm_bindgen(js_name = queryRgba)]
    pub fn query_rgba(
        &self,
        theta_deg: f64,
        tx: f64,
        ty: f64,
        occlusion: f64,
        blur: f64,
        seed: u32,
    ) -> std::result::Result<Vec<u8>, JsError> {
        let pose = Pose2::new(theta_deg.to_radians(), tx, ty);
        self.render(pose, degradation(occlusion, blur, seed)).map(|r| rgba(&r)).map_err(js_err)
    }

    /// Localizes a query; returns a JSON string.
    pub fn localize(
        &self,
        theta_deg: f64,
        tx: f64,
        ty: f64,
        occlusion: f64,
        blur: f64,
        seed: u32,
    ) -> std::result::Result<String, JsError> {
        let pose = Pose2::new(theta_deg.to_radians(), tx, ty);
        self.locate(pose, degradation(occlusion, blur, seed)).map_err(js_err)
    }
}

fn degradation(occlusion: f64, blur: f64, seed: u32) -> Degradation {
    Degradation { occlusion, blur_length: blur, seed: seed as u64, ..Degradation::none() }
}
