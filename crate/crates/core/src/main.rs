//! `morphfit` command-line tool: simulate X-ray images from CT volumes,
//! project mesh silhouettes into ground-truth outlines, synthesize confidence
//! maps, and run the circle / shape-model fitting pipelines.
//!
//! Every subcommand writes a `.manifest` file next to its primary output
//! recording the command, resolved parameters, input digests, and output
//! paths, so a run can be reproduced and its inputs audited.

use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{Point3, Vector3};
use sha2::{Digest, Sha256};

use morphfit::circlefit::{detect_circle, DetectionConfig, FitMethod};
use morphfit::confmap::ConfidenceMap;
use morphfit::drr::{
    load_ctvol, load_obj_mesh, project_mesh_ground_truth, render, CameraGeometry, RenderConfig,
};
use morphfit::eval::{evaluate_circle_suite, evaluate_shape_suite, format_records, format_summary};
use morphfit::geometry::{circle_polyline, Circle, Polyline};
use morphfit::io::{
    format_circle_record, format_transform_record, load_circle_record, load_points, load_polyline,
    save_points, save_polyline,
};
use morphfit::metrics::{circle_param_rmse, point_to_curve_rmse};
use morphfit::morph::{fit_shape, MorphConfig, MorphError};
use morphfit::overlay::{confmap_to_gray, draw_circle, draw_cross, draw_polyline};
use morphfit::pdm::{build_pdm, PointDistributionModel};
use morphfit::synth::{confmap_from_outline, occlude_squares, SynthConfig};

#[derive(Parser)]
#[command(
    name = "morphfit",
    version,
    about = "Circle and shape-model fitting on confidence maps, with an X-ray \
             simulator for synthetic ground truth",
    after_help = "Exit codes: 0 success, 1 I/O or data error, 2 usage error, \
                  3 no detection / registration failure.\n\
                  Set RAYON_NUM_THREADS to bound internal parallelism; results \
                  do not depend on the thread count."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a simulated X-ray image from a CT volume.
    Render(RenderArgs),
    /// Project a mesh silhouette into a ground-truth outline and mask.
    ProjectGt(ProjectGtArgs),
    /// Detect a circle in a confidence map.
    FitCircle(FitCircleArgs),
    /// Build a statistical shape model from landmark files.
    BuildPdm(BuildPdmArgs),
    /// Fit a statistical shape model to a confidence map.
    FitShape(FitShapeArgs),
    /// Synthesize a confidence map from an outline.
    Synth(SynthArgs),
    /// Run circle detection over a fixture directory and summarize errors.
    EvalCircles(EvalCirclesArgs),
    /// Run shape fitting over a fixture directory and summarize errors.
    EvalShapes(EvalShapesArgs),
}

/// Projection geometry shared by `render` and `project-gt`.
#[derive(Args)]
struct CameraArgs {
    /// Scene preset `ap-1000mm`: source 1000 mm from a centered 448x448
    /// detector with 0.8 mm pitch, viewing along +z. Explicit flags override
    /// individual values.
    #[arg(long)]
    preset: Option<String>,
    /// X-ray source position in mm, as `x,y,z`.
    #[arg(long, value_parser = parse_triplet)]
    focal: Option<[f64; 3]>,
    /// Detector center in mm, as `x,y,z`.
    #[arg(long, value_parser = parse_triplet)]
    detector_center: Option<[f64; 3]>,
    /// Detector row direction (unit vector), as `x,y,z`.
    #[arg(long, value_parser = parse_triplet)]
    detector_u: Option<[f64; 3]>,
    /// Detector column direction (unit vector), as `x,y,z`.
    #[arg(long, value_parser = parse_triplet)]
    detector_v: Option<[f64; 3]>,
    /// Pixel pitch in mm.
    #[arg(long)]
    pitch: Option<f64>,
    /// Image size in pixels, as `WxH`.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// Zero out pixels outside the inscribed detector disk.
    #[arg(long)]
    circular_mask: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// CTVOL v1 volume file.
    #[arg(long)]
    volume: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
    /// Ray samples per pixel.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Water attenuation coefficient, per mm.
    #[arg(long, default_value_t = 0.02)]
    mu_water: f64,
    /// Fraction of pixels driven to the darkest attenuation (0 disables).
    #[arg(long, default_value_t = 0.025)]
    saturation: f64,
    /// Output gray range, as `min,max`.
    #[arg(long, value_parser = parse_gray_range, default_value = "20,255")]
    gray_range: (u8, u8),
    /// Output PGM path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProjectGtArgs {
    /// Triangle mesh in OBJ format (`v` and `f` lines).
    #[arg(long)]
    mesh: PathBuf,
    #[command(flatten)]
    camera: CameraArgs,
    /// Disk radius in pixels for the morphological closing of the silhouette.
    #[arg(long, default_value_t = 3)]
    closing_radius: usize,
    /// Output prefix; writes `<prefix>.outline` and `<prefix>.mask.pgm`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct FitCircleArgs {
    /// Confidence map (CMAP file).
    #[arg(long)]
    confmap: PathBuf,
    /// Foreground threshold; pixels strictly above it are kept.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Minimum foreground pixel count required to attempt a fit.
    #[arg(long, default_value_t = 100)]
    min_foreground: usize,
    /// Fit method: `algebraic` or `geometric`.
    #[arg(long, default_value = "algebraic", value_parser = parse_method)]
    method: FitMethod,
    /// Ground-truth circle record; prints the parameter RMSE when given.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output prefix; writes `<prefix>.circle` and `<prefix>.overlay.pgm`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct BuildPdmArgs {
    /// Glob of landmark files (one `x,y` line per landmark), e.g. `shapes/*.pts`.
    #[arg(long)]
    shapes: String,
    /// Cumulative variance fraction to keep, in (0, 1].
    #[arg(long, default_value_t = 0.95)]
    variance: f64,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitShapeArgs {
    /// Shape model file (PDM v1).
    #[arg(long)]
    model: PathBuf,
    /// Confidence map (CMAP file).
    #[arg(long)]
    confmap: PathBuf,
    /// Profile search distance on each side of a landmark, in pixels.
    #[arg(long, default_value_t = 20.0)]
    profile_length: f64,
    /// Spacing between profile samples, in pixels.
    #[arg(long, default_value_t = 1.0)]
    profile_step: f64,
    /// Maximum fit iterations.
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    /// Convergence tolerance: mean landmark movement in pixels.
    #[arg(long, default_value_t = 0.5)]
    tol: f64,
    /// Foreground threshold used for pose initialization.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Rotation restarts for the initial registration.
    #[arg(long, default_value_t = 8)]
    rotations: usize,
    /// Also try mirrored initial registrations.
    #[arg(long)]
    reflection: bool,
    /// Treat the landmark chain as open instead of closed.
    #[arg(long)]
    open: bool,
    /// Ground-truth outline; prints the point-to-curve RMSE when given.
    #[arg(long)]
    truth_outline: Option<PathBuf>,
    /// Output prefix; writes `<prefix>.landmarks`, `<prefix>.overlay.pgm`,
    /// and `<prefix>.summary`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Outline polyline file to rasterize into a ridge.
    #[arg(long, conflicts_with = "circle")]
    outline: Option<PathBuf>,
    /// Circle outline, as `cx,cy,r`.
    #[arg(long, value_parser = parse_triplet)]
    circle: Option<[f64; 3]>,
    /// Map size in pixels, as `WxH`.
    #[arg(long, value_parser = parse_size)]
    size: (usize, usize),
    /// Gaussian ridge width in pixels.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Ridge value at zero distance, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Standard deviation of the additive background noise (0 disables).
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Number of square occlusions to cut out.
    #[arg(long, default_value_t = 0)]
    occlusions: usize,
    /// Occlusion side range in pixels, as `min,max`.
    #[arg(long, value_parser = parse_side_range, default_value = "10,40")]
    occlusion_side: (usize, usize),
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CMAP path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the ground truth next to the map (`.circle` or `.outline`).
    #[arg(long)]
    with_truth: bool,
}

#[derive(Args)]
struct EvalCirclesArgs {
    /// Directory of `<id>.cmap` maps with `<id>.circle` truth records.
    #[arg(long)]
    fixtures: PathBuf,
    /// Foreground threshold; pixels strictly above it are kept.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Minimum foreground pixel count required to attempt a fit.
    #[arg(long, default_value_t = 100)]
    min_foreground: usize,
    /// Output prefix; writes `<prefix>.records` and `<prefix>.summary`.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct EvalShapesArgs {
    /// Shape model file (PDM v1).
    #[arg(long)]
    model: PathBuf,
    /// Directory of `<id>.cmap` maps with `<id>.outline` truth polylines.
    #[arg(long)]
    fixtures: PathBuf,
    /// Rotation restarts for the initial registration.
    #[arg(long, default_value_t = 8)]
    rotations: usize,
    /// Also try mirrored initial registrations.
    #[arg(long)]
    reflection: bool,
    /// Maximum fit iterations.
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    /// Output prefix; writes `<prefix>.records` and `<prefix>.summary`.
    #[arg(long)]
    out_prefix: PathBuf,
}

enum CliError {
    /// Bad arguments or argument values: exit 2.
    Usage(String),
    /// I/O failures and malformed or unusable data: exit 1.
    Data(String),
    /// The pipeline ran but found nothing it would stand behind: exit 3.
    NoFit(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
            CliError::NoFit(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NoFit(m) => m,
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn data(error: impl Display) -> CliError {
    CliError::Data(error.to_string())
}

fn parse_triplet(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("`{part}` is not a number"))?;
    }
    Ok(out)
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| format!("expected `WxH`, got `{s}`"))?;
    let w: usize = w.parse().map_err(|_| format!("`{w}` is not a pixel count"))?;
    let h: usize = h.parse().map_err(|_| format!("`{h}` is not a pixel count"))?;
    if w == 0 || h == 0 {
        return Err("image size must be at least 1x1".into());
    }
    Ok((w, h))
}

fn parse_gray_range(s: &str) -> Result<(u8, u8), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `min,max`, got `{s}`"))?;
    let lo: u8 = lo.parse().map_err(|_| format!("`{lo}` is not a gray level"))?;
    let hi: u8 = hi.parse().map_err(|_| format!("`{hi}` is not a gray level"))?;
    if lo >= hi {
        return Err(format!("gray range must satisfy min < max, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn parse_side_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `min,max`, got `{s}`"))?;
    let lo: usize = lo.parse().map_err(|_| format!("`{lo}` is not a length"))?;
    let hi: usize = hi.parse().map_err(|_| format!("`{hi}` is not a length"))?;
    if lo < 1 || lo > hi {
        return Err(format!("side range must satisfy 1 <= min <= max, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

fn parse_method(s: &str) -> Result<FitMethod, String> {
    s.parse()
}

/// Reproducibility record written next to each subcommand's primary output.
struct RunManifest {
    command: &'static str,
    params: Vec<(String, String)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            params: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, value: impl Display) {
        self.params.push((key.to_string(), value.to_string()));
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = format!("command {}\n", self.command);
        for (key, value) in &self.params {
            let _ = writeln!(text, "param {key} {value}");
        }
        for input in &self.inputs {
            let _ = writeln!(text, "input {} sha256 {}", input.display(), sha256_hex(input)?);
        }
        for output in &self.outputs {
            let _ = writeln!(text, "output {}", output.display());
        }
        std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

fn sha256_hex(path: &Path) -> Result<String, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Append `suffix` to `path` verbatim (`out/fit` + `.circle` = `out/fit.circle`).
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn build_camera(args: &CameraArgs) -> Result<CameraGeometry, CliError> {
    let mut focal = args.focal;
    let mut center = args.detector_center;
    let mut u = args.detector_u;
    let mut v = args.detector_v;
    let mut pitch = args.pitch;
    let mut size = args.size;
    match args.preset.as_deref() {
        Some("ap-1000mm") => {
            focal = focal.or(Some([0.0, 0.0, -500.0]));
            center = center.or(Some([0.0, 0.0, 500.0]));
            u = u.or(Some([1.0, 0.0, 0.0]));
            v = v.or(Some([0.0, 1.0, 0.0]));
            pitch = pitch.or(Some(0.8));
            size = size.or(Some((448, 448)));
        }
        Some(other) => return Err(usage(format!("unknown preset `{other}` (try `ap-1000mm`)"))),
        None => {}
    }
    let focal = focal.ok_or_else(|| usage("--focal is required (or use --preset)"))?;
    let center = center.ok_or_else(|| usage("--detector-center is required (or use --preset)"))?;
    let u = u.ok_or_else(|| usage("--detector-u is required (or use --preset)"))?;
    let v = v.ok_or_else(|| usage("--detector-v is required (or use --preset)"))?;
    let pitch = pitch.ok_or_else(|| usage("--pitch is required (or use --preset)"))?;
    let size = size.ok_or_else(|| usage("--size is required (or use --preset)"))?;
    CameraGeometry::new(
        Point3::new(focal[0], focal[1], focal[2]),
        Point3::new(center[0], center[1], center[2]),
        Vector3::new(u[0], u[1], u[2]),
        Vector3::new(v[0], v[1], v[2]),
        pitch,
        size,
        args.circular_mask,
    )
    .map_err(|e| usage(e.to_string()))
}

/// Record the resolved camera (after preset expansion) in the manifest.
fn camera_params(manifest: &mut RunManifest, camera: &CameraGeometry) {
    let f = camera.focal_point();
    let c = camera.detector_center();
    let (u, v) = camera.axes();
    let (w, h) = camera.image_size();
    manifest.param("focal", format!("{},{},{}", f.x, f.y, f.z));
    manifest.param("detector-center", format!("{},{},{}", c.x, c.y, c.z));
    manifest.param("detector-u", format!("{},{},{}", u.x, u.y, u.z));
    manifest.param("detector-v", format!("{},{},{}", v.x, v.y, v.z));
    manifest.param("pitch", camera.pixel_pitch());
    manifest.param("size", format!("{w}x{h}"));
    manifest.param("circular-mask", camera.circular_mask());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(args) => cmd_render(args),
        Command::ProjectGt(args) => cmd_project_gt(args),
        Command::FitCircle(args) => cmd_fit_circle(args),
        Command::BuildPdm(args) => cmd_build_pdm(args),
        Command::FitShape(args) => cmd_fit_shape(args),
        Command::Synth(args) => cmd_synth(args),
        Command::EvalCircles(args) => cmd_eval_circles(args),
        Command::EvalShapes(args) => cmd_eval_shapes(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {}", error.message());
            ExitCode::from(error.exit_code())
        }
    }
}

fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    let camera = build_camera(&args.camera)?;
    let volume = load_ctvol(&args.volume).map_err(data)?;
    let config = RenderConfig {
        n_samples: args.samples,
        mu_water: args.mu_water,
        saturation_fraction: args.saturation,
        gray_min: args.gray_range.0,
        gray_max: args.gray_range.1,
    };
    let image = render(&volume, &camera, &config).map_err(data)?;
    image.save_pgm(&args.out).map_err(data)?;

    let mut manifest = RunManifest::new("render");
    manifest.param("volume", args.volume.display());
    camera_params(&mut manifest, &camera);
    manifest.param("samples", args.samples);
    manifest.param("mu-water", args.mu_water);
    manifest.param("saturation", args.saturation);
    manifest.param("gray-range", format!("{},{}", args.gray_range.0, args.gray_range.1));
    manifest.input(&args.volume);
    manifest.output(&args.out);
    manifest.write(&suffixed(&args.out, ".manifest"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_project_gt(args: ProjectGtArgs) -> Result<(), CliError> {
    let camera = build_camera(&args.camera)?;
    let mesh = load_obj_mesh(&args.mesh).map_err(data)?;
    let (outline, mask) =
        project_mesh_ground_truth(&mesh, &camera, args.closing_radius).map_err(data)?;

    let outline_path = suffixed(&args.out_prefix, ".outline");
    let mask_path = suffixed(&args.out_prefix, ".mask.pgm");
    save_polyline(&outline_path, &outline).map_err(data)?;
    mask.save_pgm(&mask_path).map_err(data)?;

    let mut manifest = RunManifest::new("project-gt");
    manifest.param("mesh", args.mesh.display());
    camera_params(&mut manifest, &camera);
    manifest.param("closing-radius", args.closing_radius);
    manifest.input(&args.mesh);
    manifest.output(&outline_path);
    manifest.output(&mask_path);
    manifest.write(&suffixed(&args.out_prefix, ".manifest"))?;
    println!("outline vertices {}", outline.vertices.len());
    Ok(())
}

fn cmd_fit_circle(args: FitCircleArgs) -> Result<(), CliError> {
    let map = ConfidenceMap::load(&args.confmap).map_err(data)?;
    // Read before any output is written: --truth may name a path the
    // fit record about to be saved would overwrite.
    let truth = args
        .truth
        .as_ref()
        .map(|p| load_circle_record(p).map_err(data))
        .transpose()?;
    let config = DetectionConfig {
        tau: args.tau,
        min_foreground: args.min_foreground,
        method: args.method,
        ..DetectionConfig::default()
    };
    let detection = detect_circle(&map, &config).map_err(|e| CliError::NoFit(e.to_string()))?;
    let record = format_circle_record(
        &detection.circle,
        detection.cost,
        detection.n_foreground,
        &detection.method.to_string(),
    );

    let circle_path = suffixed(&args.out_prefix, ".circle");
    let overlay_path = suffixed(&args.out_prefix, ".overlay.pgm");
    write_text(&circle_path, &record)?;
    let mut image = confmap_to_gray(&map);
    draw_circle(&mut image, &detection.circle, 255);
    image.save_pgm(&overlay_path).map_err(data)?;

    let mut manifest = RunManifest::new("fit-circle");
    manifest.param("confmap", args.confmap.display());
    manifest.param("tau", args.tau);
    manifest.param("min-foreground", args.min_foreground);
    manifest.param("method", detection.method);
    manifest.input(&args.confmap);
    if let Some(truth) = &args.truth {
        manifest.param("truth", truth.display());
        manifest.input(truth);
    }
    manifest.output(&circle_path);
    manifest.output(&overlay_path);
    manifest.write(&suffixed(&args.out_prefix, ".manifest"))?;

    print!("{record}");
    if let Some(truth) = &truth {
        println!(
            "circle_param_rmse {:.17e}",
            circle_param_rmse(&detection.circle, truth)
        );
    }
    Ok(())
}

fn cmd_build_pdm(args: BuildPdmArgs) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = glob::glob(&args.shapes)
        .map_err(|e| usage(format!("bad glob `{}`: {e}", args.shapes)))?
        .collect::<Result<_, _>>()
        .map_err(data)?;
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no files match `{}`", args.shapes)));
    }
    let shapes = paths
        .iter()
        .map(|p| load_points(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(data)?;
    let model = build_pdm(&shapes, args.variance).map_err(data)?;
    model.save(&args.out).map_err(data)?;

    let mut manifest = RunManifest::new("build-pdm");
    manifest.param("shapes", &args.shapes);
    manifest.param("variance", args.variance);
    for path in &paths {
        manifest.input(path);
    }
    manifest.output(&args.out);
    manifest.write(&suffixed(&args.out, ".manifest"))?;

    println!(
        "landmarks {} modes {} shapes {}",
        model.n_landmarks(),
        model.n_modes(),
        shapes.len()
    );
    Ok(())
}

fn cmd_fit_shape(args: FitShapeArgs) -> Result<(), CliError> {
    if args.max_iter == 0 {
        return Err(usage("--max-iter must be at least 1"));
    }
    let model = PointDistributionModel::load(&args.model).map_err(data)?;
    let map = ConfidenceMap::load(&args.confmap).map_err(data)?;
    // Read before any output is written: --truth-outline may name a path
    // one of the fit outputs about to be saved would overwrite.
    let truth = args
        .truth_outline
        .as_ref()
        .map(|p| load_polyline(p).map_err(data))
        .transpose()?;
    let config = MorphConfig {
        profile_half_length: args.profile_length,
        profile_step: args.profile_step,
        max_iterations: args.max_iter,
        convergence_tolerance: args.tol,
        tau: args.tau,
        closed: !args.open,
        n_rotations: args.rotations,
        try_reflection: args.reflection,
        ..MorphConfig::default()
    };
    let result = fit_shape(&model, &map, &config).map_err(|e| match e {
        MorphError::InsufficientForeground { .. } | MorphError::Registration(_) => {
            CliError::NoFit(e.to_string())
        }
        other => CliError::Data(other.to_string()),
    })?;
    let final_movement = result
        .per_iteration_movement
        .last()
        .copied()
        .unwrap_or(f64::NAN);

    let landmarks_path = suffixed(&args.out_prefix, ".landmarks");
    let overlay_path = suffixed(&args.out_prefix, ".overlay.pgm");
    let summary_path = suffixed(&args.out_prefix, ".summary");
    save_points(&landmarks_path, &result.shape.points).map_err(data)?;

    let mut image = confmap_to_gray(&map);
    match Polyline::new(result.shape.points.clone(), config.closed) {
        Ok(polyline) => {
            draw_polyline(&mut image, &polyline, 255);
        }
        Err(_) => {
            for &point in &result.shape.points {
                draw_cross(&mut image, point, 2, 255);
            }
        }
    }
    image.save_pgm(&overlay_path).map_err(data)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "converged {}", u8::from(result.converged));
    let _ = writeln!(summary, "iterations {}", result.iterations_used);
    let _ = writeln!(summary, "final_movement {final_movement:.17e}");
    summary.push_str(&format!("pose {}", format_transform_record(&result.shape.pose)));
    summary.push_str("coefficients");
    for b in &result.shape.coefficients {
        let _ = write!(summary, " {b:.17e}");
    }
    summary.push('\n');
    write_text(&summary_path, &summary)?;

    let mut manifest = RunManifest::new("fit-shape");
    manifest.param("model", args.model.display());
    manifest.param("confmap", args.confmap.display());
    manifest.param("profile-length", args.profile_length);
    manifest.param("profile-step", args.profile_step);
    manifest.param("max-iter", args.max_iter);
    manifest.param("tol", args.tol);
    manifest.param("tau", args.tau);
    manifest.param("rotations", args.rotations);
    manifest.param("reflection", args.reflection);
    manifest.param("closed", config.closed);
    manifest.input(&args.model);
    manifest.input(&args.confmap);
    if let Some(truth) = &args.truth_outline {
        manifest.param("truth-outline", truth.display());
        manifest.input(truth);
    }
    manifest.output(&landmarks_path);
    manifest.output(&overlay_path);
    manifest.output(&summary_path);
    manifest.write(&suffixed(&args.out_prefix, ".manifest"))?;

    println!(
        "converged {} iterations {} final_movement {final_movement:.17e}",
        u8::from(result.converged),
        result.iterations_used
    );
    if let Some(truth) = &truth {
        let rmse = point_to_curve_rmse(&result.shape.points, truth).map_err(data)?;
        println!("point_to_curve_rmse {rmse:.17e}");
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let truth_circle = match args.circle {
        Some([cx, cy, r]) => Some(Circle::new(cx, cy, r).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    let outline = match (&args.outline, &truth_circle) {
        (Some(path), None) => load_polyline(path).map_err(data)?,
        (None, Some(circle)) => circle_polyline(circle),
        _ => return Err(usage("exactly one of --outline or --circle is required")),
    };
    if !(args.sigma > 0.0 && args.sigma.is_finite()) {
        return Err(usage(format!("--sigma must be positive, got {}", args.sigma)));
    }
    if !(args.peak > 0.0 && args.peak <= 1.0) {
        return Err(usage(format!("--peak must be in (0, 1], got {}", args.peak)));
    }
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(usage(format!("--noise must be non-negative, got {}", args.noise)));
    }
    let (width, height) = args.size;
    if args.occlusions > 0 && (args.occlusion_side.1 > width || args.occlusion_side.1 > height) {
        return Err(usage(format!(
            "occlusion side {} exceeds the {}x{} map",
            args.occlusion_side.1, width, height
        )));
    }

    let config = SynthConfig {
        ridge_sigma: args.sigma,
        peak_value: args.peak,
        background_noise_sigma: args.noise,
        seed: args.seed,
    };
    let mut map = confmap_from_outline(&outline, width, height, &config);
    if args.occlusions > 0 {
        map = occlude_squares(&map, args.occlusions, args.occlusion_side, args.seed).0;
    }
    map.save(&args.out).map_err(data)?;

    let mut truth_output = None;
    if args.with_truth {
        let path = match &truth_circle {
            Some(circle) => {
                let path = args.out.with_extension("circle");
                write_text(&path, &format_circle_record(circle, 0.0, 0, "truth"))?;
                path
            }
            None => {
                let path = args.out.with_extension("outline");
                save_polyline(&path, &outline).map_err(data)?;
                path
            }
        };
        truth_output = Some(path);
    }

    let mut manifest = RunManifest::new("synth");
    match (&args.outline, &truth_circle) {
        (Some(path), _) => manifest.param("outline", path.display()),
        (_, Some(c)) => manifest.param("circle", format!("{},{},{}", c.cx, c.cy, c.r)),
        _ => unreachable!(),
    }
    manifest.param("size", format!("{width}x{height}"));
    manifest.param("sigma", args.sigma);
    manifest.param("peak", args.peak);
    manifest.param("noise", args.noise);
    manifest.param("occlusions", args.occlusions);
    manifest.param(
        "occlusion-side",
        format!("{},{}", args.occlusion_side.0, args.occlusion_side.1),
    );
    manifest.param("seed", args.seed);
    if let Some(path) = &args.outline {
        manifest.input(path);
    }
    manifest.output(&args.out);
    if let Some(path) = &truth_output {
        manifest.output(path);
    }
    manifest.write(&suffixed(&args.out, ".manifest"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Fixture files (maps plus truth sidecars) in deterministic order, for
/// manifest input digests.
fn fixture_inputs(dir: &Path, truth_extension: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut inputs = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(data)?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some("cmap") => {
                let truth = path.with_extension(truth_extension);
                inputs.push(path);
                if truth.is_file() {
                    inputs.push(truth);
                }
            }
            _ => {}
        }
    }
    inputs.sort();
    Ok(inputs)
}

fn write_report(
    report_records: String,
    report_summary: String,
    out_prefix: &Path,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let records_path = suffixed(out_prefix, ".records");
    let summary_path = suffixed(out_prefix, ".summary");
    write_text(&records_path, &report_records)?;
    write_text(&summary_path, &report_summary)?;
    manifest.output(&records_path);
    manifest.output(&summary_path);
    manifest.write(&suffixed(out_prefix, ".manifest"))?;
    print!("{report_summary}");
    Ok(())
}

fn cmd_eval_circles(args: EvalCirclesArgs) -> Result<(), CliError> {
    let config = DetectionConfig {
        tau: args.tau,
        min_foreground: args.min_foreground,
        ..DetectionConfig::default()
    };
    let report = evaluate_circle_suite(&args.fixtures, &config).map_err(data)?;

    let mut manifest = RunManifest::new("eval-circles");
    manifest.param("fixtures", args.fixtures.display());
    manifest.param("tau", args.tau);
    manifest.param("min-foreground", args.min_foreground);
    for input in fixture_inputs(&args.fixtures, "circle")? {
        manifest.input(&input);
    }
    write_report(
        format_records(&report),
        format_summary(&report),
        &args.out_prefix,
        &mut manifest,
    )
}

fn cmd_eval_shapes(args: EvalShapesArgs) -> Result<(), CliError> {
    if args.max_iter == 0 {
        return Err(usage("--max-iter must be at least 1"));
    }
    let model = PointDistributionModel::load(&args.model).map_err(data)?;
    let config = MorphConfig {
        max_iterations: args.max_iter,
        n_rotations: args.rotations,
        try_reflection: args.reflection,
        ..MorphConfig::default()
    };
    let report = evaluate_shape_suite(&args.fixtures, &model, &config).map_err(data)?;

    let mut manifest = RunManifest::new("eval-shapes");
    manifest.param("model", args.model.display());
    manifest.param("fixtures", args.fixtures.display());
    manifest.param("rotations", args.rotations);
    manifest.param("reflection", args.reflection);
    manifest.param("max-iter", args.max_iter);
    manifest.input(&args.model);
    for input in fixture_inputs(&args.fixtures, "outline")? {
        manifest.input(&input);
    }
    write_report(
        format_records(&report),
        format_summary(&report),
        &args.out_prefix,
        &mut manifest,
    )
}
