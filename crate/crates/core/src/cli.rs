//! Command-line front end: argument parsing and one function per
//! subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::camera::CameraModel;
use crate::config::RunConfig;
use crate::eval::{
    angular_error, epe, generate_dataset, overlay, run_benchmark, synth_map, translational_error, variant_by_name,
    Manifest, SynthConfig, MANIFEST_FILE, VARIANT_NAMES,
};
use crate::geodata::{save_layer, LayerPaths};
use crate::iclk::align;
use crate::raster::{DepthMap, Image8};
use crate::renderer::{build_mesh, check_pose_over_map, nadir_pose, render, render_distorted, PixelRegion};
use crate::se3::PoseSE3;
use crate::tracker::{track_sequence, TrackerState};

/// Exit code when a run finished but some frames or samples did not succeed.
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "geoalign", version, about = "Terrain rendering and 6-DoF image-to-map alignment")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a texture PNG and depth raster at a camera pose.
    Render(RenderArgs),
    /// Generate a reference/query dataset with a manifest.
    Dataset(DatasetArgs),
    /// Align one query image against a reference image with depth.
    Align(AlignArgs),
    /// Track a sequence of frames against the map.
    Track(TrackArgs),
    /// Run alignment variants over a dataset and report error statistics.
    Bench(BenchArgs),
    /// Write a synthetic multi-layer map and a matching configuration.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PoseArgs {
    /// Camera-to-world pose as 12 row-major numbers of a 3x4 matrix.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "nadir")]
    pub pose: Option<String>,
    /// Nadir camera as `easting,northing,height[,yaw]` (height above sea level, yaw in radians).
    #[arg(long, allow_hyphen_values = true)]
    pub nadir: Option<String>,
}

impl PoseArgs {
    fn resolve(&self) -> anyhow::Result<PoseSE3> {
        match (&self.pose, &self.nadir) {
            (Some(p), None) => Ok(p.parse()?),
            (None, Some(n)) => parse_nadir(n),
            _ => bail!("give exactly one of --pose or --nadir"),
        }
    }
}

fn parse_nadir(s: &str) -> anyhow::Result<PoseSE3> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number {t:?} in --nadir")))
        .collect::<anyhow::Result<_>>()?;
    match v.as_slice() {
        [e, n, h] => Ok(nadir_pose(*e, *n, *h, 0.0, 0.0)),
        [e, n, h, yaw] => Ok(nadir_pose(*e, *n, *h, *yaw, 0.0)),
        _ => bail!("--nadir needs easting,northing,height[,yaw]"),
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub pose: PoseArgs,
    /// Layer to render (default: the most recent one).
    #[arg(long)]
    pub layer: Option<String>,
    /// Apply the configured lens distortion.
    #[arg(long)]
    pub distorted: bool,
    #[arg(long, default_value = "render.png")]
    pub image: PathBuf,
    #[arg(long, default_value = "render.depth")]
    pub depth: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Number of samples (overrides the configuration).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Configuration providing the camera and alignment settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest; with `--sample` it supplies paths, camera and ground truth.
    #[arg(long, requires = "sample")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub ref_image: Option<PathBuf>,
    #[arg(long)]
    pub ref_depth: Option<PathBuf>,
    #[arg(long)]
    pub query_image: Option<PathBuf>,
    /// Initial relative pose, 12 numbers (default: identity).
    #[arg(long, allow_hyphen_values = true)]
    pub init: Option<String>,
    /// Ground-truth relative pose, 12 numbers.
    #[arg(long, allow_hyphen_values = true)]
    pub gt: Option<String>,
    /// Iteration budget (overrides the configuration).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Write a green/magenta overlay of the result.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Write the iteration trace and final pose to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory of PNG frames, processed in lexicographic order.
    #[arg(long)]
    pub frames: PathBuf,
    #[command(flatten)]
    pub init: PoseArgs,
    /// Ground-truth world poses, one 12-number line per frame.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value = "trajectory.txt")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated variant names.
    #[arg(long, default_value = "nonn20,nonn50,huber20")]
    pub variants: String,
    /// Output directory for bench.csv, bench.txt and samples.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Map width and height in pixels.
    #[arg(long, default_value_t = 768)]
    pub size: usize,
    /// Appearance change between pseudo-years, 0 to 1.
    #[arg(long, default_value_t = 0.6)]
    pub augmentation: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("creating worker pool")?;
    pool.install(|| match cli.command {
        Command::Render(a) => cmd_render(&a),
        Command::Dataset(a) => cmd_dataset(&a),
        Command::Align(a) => cmd_align(&a),
        Command::Track(a) => cmd_track(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Synth(a) => cmd_synth(&a),
    })
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

pub fn cmd_render(args: &RenderArgs) -> anyhow::Result<ExitCode> {
    let config = RunConfig::load(&args.config)?;
    let maps = config.load_maps()?;
    let pose = args.pose.resolve()?;
    let layer = match &args.layer {
        Some(l) => maps.layer(l).with_context(|| format!("no layer labeled {l:?}"))?,
        None => maps.most_recent(),
    };
    check_pose_over_map(layer, &pose, &config.camera)?;
    let mesh = build_mesh(&layer.ortho, &layer.elevation, PixelRegion::full(&layer.ortho))?;
    let out = if args.distorted {
        render_distorted(&mesh, &pose, &config.camera)?
    } else {
        render(&mesh, &pose, &config.camera)?
    };
    out.image.save_png(&args.image)?;
    out.depth.save(&args.depth)?;
    println!("layer {}", layer.label);
    println!("valid fraction {:.6}", out.valid_fraction());
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_dataset(args: &DatasetArgs) -> anyhow::Result<ExitCode> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(n) = args.samples {
        config.dataset.samples = n;
    }
    if let Some(s) = args.seed {
        config.dataset.seed = s;
        config.dataset.perturbation.seed = s;
    }
    let out = args.out.clone().unwrap_or(config.output.clone());
    let maps = config.load_maps()?;
    let manifest = generate_dataset(&maps, &config.dataset, &config.camera, &out)?;
    println!("{} samples written to {}", manifest.samples.len(), out.join(MANIFEST_FILE).display());
    Ok(ExitCode::SUCCESS)
}

struct AlignInputs {
    ref_image: PathBuf,
    ref_depth: PathBuf,
    query_image: PathBuf,
    camera: CameraModel,
    gt: Option<PoseSE3>,
}

fn align_inputs(args: &AlignArgs, config: &RunConfig) -> anyhow::Result<AlignInputs> {
    let gt = args.gt.as_deref().map(str::parse::<PoseSE3>).transpose()?;
    if let (Some(m), Some(id)) = (&args.manifest, args.sample) {
        let manifest = Manifest::load(m)?;
        let dir = m.parent().unwrap_or(Path::new("."));
        let s = manifest
            .samples
            .iter()
            .find(|s| s.id == id)
            .with_context(|| format!("manifest has no sample {id}"))?;
        return Ok(AlignInputs {
            ref_image: dir.join(&s.ref_image),
            ref_depth: dir.join(&s.ref_depth),
            query_image: dir.join(&s.query_image),
            camera: manifest.camera,
            gt: gt.or(Some(s.gt_pose)),
        });
    }
    match (&args.ref_image, &args.ref_depth, &args.query_image) {
        (Some(r), Some(d), Some(q)) => Ok(AlignInputs {
            ref_image: r.clone(),
            ref_depth: d.clone(),
            query_image: q.clone(),
            camera: config.camera.undistorted(),
            gt,
        }),
        _ => bail!("give --manifest with --sample, or all of --ref-image, --ref-depth and --query-image"),
    }
}

pub fn cmd_align(args: &AlignArgs) -> anyhow::Result<ExitCode> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(n) = args.iterations {
        config.align.max_iterations = n;
    }
    let inputs = align_inputs(args, &config)?;
    let ref_image = Image8::load_png(&inputs.ref_image)?;
    let ref_depth = DepthMap::load(&inputs.ref_depth)?;
    let query = Image8::load_png(&inputs.query_image)?;
    let init = match &args.init {
        Some(s) => s.parse()?,
        None => PoseSE3::identity(),
    };
    let cam = inputs.camera;
    let result = align(&ref_image, &ref_depth, &query, &cam, &init, &config.align)?;
    println!("converged {}", result.converged);
    println!("iterations {}", result.trace.len());
    println!("pose {}", result.pose);
    if let Some(gt) = &inputs.gt {
        let e0 = epe(&ref_depth, &cam, &init, gt)?;
        let e1 = epe(&ref_depth, &cam, &result.pose, gt)?;
        println!("epe init {e0:.6} final {e1:.6}");
        println!(
            "angular init {:.6} final {:.6}",
            angular_error(&init, gt),
            angular_error(&result.pose, gt)
        );
        println!(
            "translational init {:.6} final {:.6}",
            translational_error(&init, gt),
            translational_error(&result.pose, gt)
        );
    }
    if let Some(path) = &args.report {
        let mut text = format!("pose {}\nconverged {}\n# level iteration energy step_norm accepted\n", result.pose, result.converged);
        for t in &result.trace {
            text.push_str(&format!(
                "{} {} {:?} {:?} {}\n",
                t.level, t.iteration, t.energy, t.step_norm, t.accepted
            ));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.overlay {
        overlay(&ref_image, &query, &result.pose, &ref_depth, &cam)?.save_png(path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn read_pose_lines(path: &Path) -> anyhow::Result<Vec<PoseSE3>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.parse::<PoseSE3>()
                .with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

pub fn cmd_track(args: &TrackArgs) -> anyhow::Result<ExitCode> {
    let config = RunConfig::load(&args.config)?;
    let maps = config.load_maps()?;
    let init = args.init.resolve()?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.frames)
        .with_context(|| format!("reading {}", args.frames.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG frames in {}", args.frames.display());
    }
    let images = paths.iter().map(|p| Image8::load_png(p)).collect::<crate::Result<Vec<_>>>()?;
    let gt = args.gt.as_deref().map(read_pose_lines).transpose()?;
    let mut state = TrackerState::initialize(init, &maps, config.camera.undistorted(), config.align.clone())?;
    let report = track_sequence(&mut state, &images, gt.as_deref())?;
    report.save(&args.report)?;
    let failed = report.frames.iter().filter(|f| !f.converged).count();
    println!("{} frames, {} not converged", report.frames.len(), failed);
    if let Some(last) = report.frames.last() {
        println!("final pose {}", last.pose);
    }
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_PARTIAL)
    })
}

pub fn cmd_bench(args: &BenchArgs) -> anyhow::Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let variants = args
        .variants
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            let mut v = variant_by_name(name)?;
            v.encoder = config.align.encoder.clone();
            v.border_margin = config.align.border_margin;
            Ok((name.to_string(), v))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    if variants.is_empty() {
        bail!("no variants given; valid variants: {}", VARIANT_NAMES.join(", "));
    }
    let manifest = Manifest::load(&args.manifest)?;
    let dir = args.manifest.parent().unwrap_or(Path::new("."));
    let report = run_benchmark(&manifest, dir, &variants)?;
    let out = args.out.clone().unwrap_or(config.output.clone());
    report.write(&out)?;
    print!("{}", report.to_text());
    let failures = report.total_failures();
    println!("{failures} of {} alignments failed", report.total_samples());
    Ok(if failures < report.total_samples() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<ExitCode> {
    let synth = SynthConfig {
        size_px: args.size,
        layers: args.layers,
        augmentation: args.augmentation,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let maps = synth_map(&synth)?;
    let map_dir = args.out.join("maps");
    fs::create_dir_all(&map_dir).with_context(|| format!("creating {}", map_dir.display()))?;
    let cam = CameraModel::default();
    let mut text = format!(
        "[run]\nseed = {}\noutput = \"out\"\n\n[camera]\nfx = {:?}\nfy = {:?}\ncx = {:?}\ncy = {:?}\nwidth = {}\nheight = {}\n\n[map]\nrecent = \"{}\"\n",
        args.seed,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        maps.most_recent().label
    );
    for layer in maps.layers() {
        let l = &layer.label;
        let paths = LayerPaths {
            label: l.clone(),
            ortho: map_dir.join(format!("{l}.png")),
            world: map_dir.join(format!("{l}.pgw")),
            elevation: map_dir.join(format!("{l}.asc")),
        };
        save_layer(layer, &paths)?;
        text.push_str(&format!(
            "\n[layer.{l}]\northo = \"maps/{l}.png\"\nworld = \"maps/{l}.pgw\"\nelevation = \"maps/{l}.asc\"\n"
        ));
    }
    let config_path = args.out.join("config.toml");
    fs::write(&config_path, text).with_context(|| format!("writing {}", config_path.display()))?;
    let ext = maps.common_extent();
    println!(
        "map extent easting {}..{} northing {}..{}",
        ext.min_easting, ext.max_easting, ext.min_northing, ext.max_northing
    );
    println!("configuration written to {}", config_path.display());
    Ok(ExitCode::SUCCESS)
}
