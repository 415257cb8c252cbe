mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use texloc::eval::{SuccessCriterion, SweepAxis, DEFAULT_MIN_CORRESPONDENCES};
use texloc::features::DetectorConfig;
use texloc::index::{IndexParams, DEFAULT_CHECKS, DEFAULT_LEAF_SIZE, DEFAULT_TREES};
use texloc::locate::{LocateConfig, VoteAnchor, DEFAULT_CELL_SIZE, DEFAULT_MIN_INLIERS};
use texloc::mapdb::{SelectionPolicy, DEFAULT_FEATURES_PER_IMAGE, DEFAULT_K};
use texloc::rigid::RansacConfig;
use texloc::synth::{Degradation, GridSpec, TextureStyle};
use texloc::DEFAULT_MM_PER_PIXEL;

/// Version of every JSON document written to stdout or `--out`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "texloc", version, about = "Global localization from ground-texture images")]
struct Cli {
    /// Cap on worker threads; 0 uses every core.
    #[arg(long, global = true, env = "TEXLOC_THREADS", default_value_t = 0)]
    threads: usize,

    /// More log output on stderr; repeat for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic textures, zig-zag map frames and query images.
    Synth {
        #[command(subcommand)]
        what: Synth,
    },
    /// Stitch a directory of overlapping frames into a map directory.
    BuildMap(BuildMapArgs),
    /// Build a TXDB database from a map directory.
    BuildDb(BuildDbArgs),
    /// Localize one query image.
    Localize(LocalizeArgs),
    /// Localize a query set and grade it, or run a synthetic sweep.
    Evaluate(EvaluateArgs),
    /// Print the header and metadata of a TXDB file.
    DbInfo(DbInfoArgs),
}

#[derive(Debug, Subcommand)]
enum Synth {
    /// Write a procedural texture.
    Texture(TextureArgs),
    /// Crop a zig-zag sequence of half-overlapping frames from a texture.
    Frames(FramesArgs),
    /// Crop randomly posed, optionally degraded query images from a texture.
    Queries(QueriesArgs),
}

#[derive(Debug, Clone, Args)]
struct GridArgs {
    #[arg(long, default_value_t = 3)]
    cols: usize,
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 1280)]
    frame_width: usize,
    #[arg(long, default_value_t = 960)]
    frame_height: usize,
    /// Texture border around the frames, in pixels.
    #[arg(long, default_value_t = 64)]
    margin: usize,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec, commands::Failure> {
        if self.cols == 0 || self.rows == 0 || self.frame_width < 2 || self.frame_height < 2 {
            return Err(commands::Failure::usage("grid needs at least one column and row and a frame of 2x2 or more"));
        }
        Ok(GridSpec::half_overlap(self.cols, self.rows, (self.frame_width, self.frame_height), self.margin))
    }
}

#[derive(Debug, Clone, Args)]
struct TextureArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// scratchy, granular or fibrous.
    #[arg(long, default_value_t = TextureStyle::Scratchy)]
    style: TextureStyle,
    /// Texture width; defaults to the size that fits the grid flags.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct DegradationArgs {
    /// Fraction of each image covered by one occluder, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    occlusion: f64,
    /// Motion-blur kernel length in pixels.
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    /// Motion direction in degrees.
    #[arg(long, default_value_t = 0.0)]
    blur_angle: f64,
    /// Standard deviation of additive noise, in intensity units.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Dust specks per megapixel.
    #[arg(long, default_value_t = 0.0)]
    dust: f64,
    /// Seed of the first image's degradation; image i uses seed + i.
    #[arg(long, default_value_t = 0)]
    degradation_seed: u64,
}

impl DegradationArgs {
    fn degradation(&self) -> Result<Degradation, commands::Failure> {
        let d = Degradation {
            occlusion: self.occlusion,
            blur_length: self.blur,
            blur_angle: self.blur_angle.to_radians(),
            noise_sigma: self.noise,
            dust: self.dust,
            seed: self.degradation_seed,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Args)]
struct FramesArgs {
    #[arg(long)]
    texture: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    degradation: DegradationArgs,
    /// Output directory for the frames and their `truth.tsv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct QueriesArgs {
    #[arg(long)]
    texture: PathBuf,
    /// Frames directory from `synth frames`; query truth is then written in
    /// the frame of its first frame, which is the stitched map's frame, and
    /// queries are drawn inside the area the frames cover.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1280)]
    width: usize,
    #[arg(long, default_value_t = 960)]
    height: usize,
    /// Explicit texture-frame pose `theta_deg,tx,ty`; repeatable. Replaces
    /// the random draw.
    #[arg(long = "pose", value_name = "THETA_DEG,TX,TY")]
    poses: Vec<String>,
    #[command(flatten)]
    degradation: DegradationArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct DetectorArgs {
    #[arg(long, default_value_t = 4)]
    octaves: usize,
    #[arg(long, default_value_t = 3)]
    scales_per_octave: usize,
    #[arg(long, default_value_t = 1.6)]
    base_sigma: f32,
    #[arg(long, default_value_t = 0.03)]
    contrast_threshold: f32,
    #[arg(long, default_value_t = 10.0)]
    edge_ratio: f32,
    /// Keep at most this many keypoints per image; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    max_features: usize,
}

impl DetectorArgs {
    fn config(&self) -> Result<DetectorConfig, commands::Failure> {
        let c = DetectorConfig {
            octaves: self.octaves,
            scales_per_octave: self.scales_per_octave,
            base_sigma: self.base_sigma,
            contrast_threshold: self.contrast_threshold,
            edge_ratio_threshold: self.edge_ratio,
            max_features: self.max_features,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args)]
struct BuildMapArgs {
    /// Directory of overlapping frames, in capture order by file name.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stitch from consecutive pairs only.
    #[arg(long)]
    no_loop_closures: bool,
    /// Minimum predicted overlap fraction for a loop-closure pair.
    #[arg(long, default_value_t = 0.1)]
    min_overlap: f64,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Debug, Clone, Args)]
struct BuildDbArgs {
    #[arg(long)]
    map: PathBuf,
    /// PCA dimension.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Features kept per map image.
    #[arg(long, default_value_t = DEFAULT_FEATURES_PER_IMAGE)]
    per_image: usize,
    /// Seed of the feature selection.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// random or top-response.
    #[arg(long, default_value_t = SelectionPolicy::Random)]
    policy: SelectionPolicy,
    #[arg(long, default_value_t = DEFAULT_MM_PER_PIXEL)]
    mm_per_pixel: f64,
    #[arg(long, default_value = "")]
    capture_date: String,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct LocateArgs {
    /// Best-bin-first leaf checks per query.
    #[arg(long, default_value_t = DEFAULT_CHECKS)]
    checks: usize,
    /// Seeds RANSAC and the index build.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vote cell size in map pixels.
    #[arg(long, default_value_t = DEFAULT_CELL_SIZE)]
    cell_size: f64,
    /// origin, center or feature.
    #[arg(long, default_value_t = VoteAnchor::ImageOrigin)]
    anchor: VoteAnchor,
    #[arg(long, default_value_t = DEFAULT_MIN_INLIERS)]
    min_inliers: usize,
    /// Neighbours retrieved and voted per query feature.
    #[arg(long, default_value_t = 1)]
    neighbours: usize,
    #[arg(long, default_value_t = DEFAULT_TREES)]
    trees: usize,
    #[arg(long, default_value_t = DEFAULT_LEAF_SIZE)]
    leaf_size: usize,
    #[command(flatten)]
    detector: DetectorArgs,
}

impl LocateArgs {
    fn configs(&self) -> Result<(LocateConfig, IndexParams), commands::Failure> {
        let locate = LocateConfig {
            cell_size: self.cell_size,
            checks: self.checks,
            neighbours: self.neighbours,
            min_inliers: self.min_inliers,
            anchor: self.anchor,
            ransac: RansacConfig { seed: self.seed, ..RansacConfig::default() },
            detector: self.detector.config()?,
        };
        locate.validate()?;
        let index = IndexParams { trees: self.trees, leaf_size: self.leaf_size, seed: self.seed };
        index.validate()?;
        Ok((locate, index))
    }
}

#[derive(Debug, Clone, Args)]
struct LocalizeArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Write the result as JSON instead of a text line.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    locate: LocateArgs,
}

#[derive(Debug, Clone, Args)]
struct EvaluateArgs {
    #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
    db: Option<PathBuf>,
    /// Query directory or manifest (`name tx ty theta_deg` rows).
    #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
    queries: Option<PathBuf>,
    /// Map directory; enables pose verification against its frames.
    #[arg(long, conflicts_with = "sweep")]
    map: Option<PathBuf>,
    /// Success criterion as `<px>px:<deg>deg`.
    #[arg(long, default_value_t = SuccessCriterion::default())]
    criterion: SuccessCriterion,
    /// Verification needs at least this many correspondences.
    #[arg(long, default_value_t = DEFAULT_MIN_CORRESPONDENCES)]
    min_correspondences: usize,
    /// Synthetic sweep instead of a query set, e.g. `occlusion=0,0.25,0.5`.
    #[arg(long)]
    sweep: Option<SweepAxis>,
    /// Comma-separated texture seeds for the sweep's maps.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    texture_seeds: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    queries_per_map: usize,
    #[arg(long, default_value_t = 0)]
    query_seed: u64,
    /// Also verify every sweep frame.
    #[arg(long, requires = "sweep")]
    sweep_verify: bool,
    #[command(flatten)]
    grid: GridArgs,
    /// Per-frame table.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    locate: LocateArgs,
}

#[derive(Debug, Clone, Args)]
struct DbInfoArgs {
    #[arg(long)]
    db: PathBuf,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init_logging(&cli);
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            log::warn!("thread cap not applied: {e}");
        }
    }
    let result = match cli.command {
        Command::Synth { what: Synth::Texture(a) } => commands::synth_texture(&a),
        Command::Synth { what: Synth::Frames(a) } => commands::synth_frames(&a),
        Command::Synth { what: Synth::Queries(a) } => commands::synth_queries(&a),
        Command::BuildMap(a) => commands::build_map(&a),
        Command::BuildDb(a) => commands::build_db(&a),
        Command::Localize(a) => commands::localize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::DbInfo(a) => commands::db_info(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
