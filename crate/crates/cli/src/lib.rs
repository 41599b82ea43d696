//! Command-line driver: panoramas from images or text, point clouds and
//! camera-track videos from finished runs.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 backend abort,
//! 3 I/O error.

pub mod config;
pub mod run_dir;

use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use thiserror::Error;

use panoweave::depth3d::{
    depth_to_pointcloud, estimate_view_depths, fuse_depth_panorama, write_ply, DepthAlignment, DepthError,
};
use panoweave::geometry::intrinsics_from_fov;
use panoweave::orchestrator::{run_text_pipeline, PipelineError};
use panoweave::image::ImageError;
use panoweave::video::{render_track, write_frames, CameraTrack, VideoError};
use panoweave::{run_pipeline, Backends, ImageBuffer, PanoramaResult};

use config::{EnvLookup, FileConfig, Settings};
use run_dir::{load_png, load_run_dir, write_run_dir, write_trace, LoadedRun};

/// The text-to-panorama evaluation prompts, 10 outdoor then 10 indoor.
pub const TEXT_FIXTURES: [&str; 20] = [
    "Autumn maple forest path.",
    "Tropical beach at sunset.",
    "Snowy mountain peak view.",
    "Tuscan vineyard in summer.",
    "Desert under starlit sky.",
    "Sakura blossom park, Kyoto.",
    "Rustic Provencal lavender fields.",
    "Underwater coral reef scene.",
    "Ancient Mayan jungle ruins.",
    "Manhattan skyline at night.",
    "Victorian-era library.",
    "Rustic Italian kitchen.",
    "Minimalist Scandinavian bedroom.",
    "Moorish-styled bathroom.",
    "Vintage record store interior.",
    "Luxurious Hollywood dressing room.",
    "Industrial loft-style office.",
    "Art Deco hotel lobby.",
    "Japanese Zen meditation room.",
    "Modern living room with a sofa and a TV.",
];

/// Prompt of 1-based fixture `n`.
pub fn fixture_prompt(n: usize) -> Result<&'static str, CliError> {
    n.checked_sub(1)
        .and_then(|i| TEXT_FIXTURES.get(i))
        .copied()
        .ok_or_else(|| CliError::Config(format!("fixture must be in 1..={}, got {n}", TEXT_FIXTURES.len())))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::Input(_) => CliError::Config(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<DepthError> for CliError {
    fn from(e: DepthError) -> Self {
        match e {
            DepthError::Backend(_) | DepthError::NonPositiveScale { .. } => CliError::Backend(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<VideoError> for CliError {
    fn from(e: VideoError) -> Self {
        match e {
            VideoError::Io { path, source } => CliError::Io {
                path,
                message: source.to_string(),
            },
            VideoError::Image(ImageError::Io { path, source }) => CliError::Io {
                path: path.into(),
                message: source.to_string(),
            },
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "panoweave", version, about = "Panorama generation from a single image or a text prompt")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a panorama from a square input image.
    Pano(PanoArgs),
    /// Generate the input image from text, then a panorama.
    Text2pano(TextArgs),
    /// Estimate and align depth for a finished run and write a PLY.
    Pointcloud(PointcloudArgs),
    /// Render the frames of a camera track from a finished run.
    Video(VideoArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// TOML config file; all keys optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Equirectangular panorama PNG to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the backend call trace (JSON lines) here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; defaults to `<out stem>_run` next to `--out`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PanoArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TextArgs {
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    pub prompt: Option<String>,
    /// Built-in evaluation prompt, 1 to 20.
    #[arg(long)]
    pub fixture: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PointcloudArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep every n-th panorama pixel in each direction.
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Overrides the run's config snapshot.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VideoArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// JSON camera track: `{"frames": [{"yaw_deg", "pitch_deg", "translation", "fov_deg", "width", "height"}]}`.
    #[arg(long)]
    pub track: PathBuf,
    #[arg(long)]
    pub outdir: PathBuf,
    /// Overrides the run's config snapshot.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code. Errors are reported on stderr.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>, env: EnvLookup<'_>) -> i32 {
    match parse(args) {
        Ok(cli) => run_parsed(&cli, env),
        Err(code) => code,
    }
}

/// Parses arguments; on failure prints the message and returns the exit code.
pub fn parse(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> Result<Cli, i32> {
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            1
        } else {
            0
        }
    })
}

pub fn run_parsed(cli: &Cli, env: EnvLookup<'_>) -> i32 {
    match execute(&cli.command, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("panoweave: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, env: EnvLookup<'_>) -> Result<(), CliError> {
    match command {
        Command::Pano(a) => cmd_pano(a, env),
        Command::Text2pano(a) => cmd_text2pano(a, env),
        Command::Pointcloud(a) => cmd_pointcloud(a, env),
        Command::Video(a) => cmd_video(a, env),
    }
}

fn resolve_settings(config: Option<&Path>, env: EnvLookup<'_>, seed: Option<u64>) -> Result<Settings, CliError> {
    let file = match config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    Settings::resolve(&file, env, seed)
}

fn build_backends(settings: &Settings) -> Result<Backends, CliError> {
    Backends::from_descriptors(&settings.backends).map_err(|e| CliError::Config(e.to_string()))
}

fn default_run_dir(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "panorama".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_run"))
}

/// Writes outputs of a finished pipeline, or the partial trace of a failed one.
fn finish_run(
    output: &OutputArgs,
    settings: &Settings,
    input: Option<&ImageBuffer>,
    result: Result<PanoramaResult, PipelineError>,
) -> Result<(), CliError> {
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            if let Some(t) = &output.trace {
                if let Err(te) = write_trace(t, e.partial_trace()) {
                    warn!("could not write partial trace: {te}");
                }
            }
            return Err(e.into());
        }
    };
    let input = input.unwrap_or(&result.views[0].image);
    let dir = output.run_dir.clone().unwrap_or_else(|| default_run_dir(&output.out));
    write_run_dir(&dir, settings, input, &result)?;
    result.panorama.save_png(&output.out).map_err(|e| CliError::Io {
        path: output.out.clone(),
        message: e.to_string(),
    })?;
    if let Some(t) = &output.trace {
        write_trace(t, &result.trace)?;
    }
    info!(
        "wrote {} ({} views, {} backend calls); run directory {}",
        output.out.display(),
        result.views.len(),
        result.trace.len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_pano(args: &PanoArgs, env: EnvLookup<'_>) -> Result<(), CliError> {
    let settings = resolve_settings(args.output.config.as_deref(), env, args.output.seed)?;
    let input = load_png(&args.input)?;
    let k = intrinsics_from_fov(settings.pipeline.schedule.input_fov_deg, input.width(), input.height())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let backends = build_backends(&settings)?;
    let result = run_pipeline(&input, &k, &settings.pipeline, &backends);
    finish_run(&args.output, &settings, Some(&input), result)
}

pub fn cmd_text2pano(args: &TextArgs, env: EnvLookup<'_>) -> Result<(), CliError> {
    let prompt = match (&args.prompt, args.fixture) {
        (Some(p), _) => p.clone(),
        (None, Some(n)) => fixture_prompt(n)?.to_string(),
        (None, None) => return Err(CliError::Config("either --prompt or --fixture is required".into())),
    };
    let settings = resolve_settings(args.output.config.as_deref(), env, args.output.seed)?;
    let backends = build_backends(&settings)?;
    info!("text prompt: {prompt}");
    let result = run_text_pipeline(&prompt, &settings.pipeline, &backends);
    // The generated input is the first view's inner region; the run directory
    // stores the first view in its place.
    finish_run(&args.output, &settings, None, result)
}

/// Depth for every view of a run: estimated, aligned, and super-resolved
/// when the run kept 4x view copies.
fn run_depths(run: &LoadedRun, backends: &Backends) -> Result<Vec<panoweave::ViewRecord>, CliError> {
    let sr = run.views.iter().all(|v| v.sr_image.is_some());
    let (views, _) = estimate_view_depths(&run.views, backends.depth.as_ref(), sr)?;
    Ok(views)
}

pub fn cmd_pointcloud(args: &PointcloudArgs, env: EnvLookup<'_>) -> Result<(), CliError> {
    if args.stride == 0 {
        return Err(CliError::Config("--stride must be positive".into()));
    }
    let run = load_run_dir(&args.run, args.config.as_deref(), env, None)?;
    let backends = build_backends(&run.settings)?;
    let views = run_depths(&run, &backends)?;
    let pano_depth = fuse_depth_panorama(&views, &DepthAlignment::identity(views.len()), run.panorama.width())?;
    let cloud = depth_to_pointcloud(&run.panorama, &pano_depth, args.stride)?;
    let io = |e: std::io::Error| CliError::Io {
        path: args.out.clone(),
        message: e.to_string(),
    };
    let f = fs::File::create(&args.out).map_err(io)?;
    write_ply(&cloud, BufWriter::new(f)).map_err(io)?;
    info!("wrote {} points to {}", cloud.len(), args.out.display());
    Ok(())
}

pub fn cmd_video(args: &VideoArgs, env: EnvLookup<'_>) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.track).map_err(|e| CliError::Io {
        path: args.track.clone(),
        message: e.to_string(),
    })?;
    let track = CameraTrack::from_json(&text)?;
    let run = load_run_dir(&args.run, args.config.as_deref(), env, args.seed)?;
    let backends = build_backends(&run.settings)?;
    let views = if track.frames.iter().any(|p| p.has_translation()) {
        run_depths(&run, &backends)?
    } else {
        run.views.clone()
    };
    let frames = render_track(
        &run.panorama,
        &views,
        &track,
        &run.descriptions.scene,
        backends.inpaint.as_ref(),
        run.settings.pipeline.seed,
    )?;
    write_frames(&frames, &args.outdir)?;
    info!("wrote {} frames to {}", frames.len(), args.outdir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_range() {
        assert_eq!(fixture_prompt(3).unwrap(), "Snowy mountain peak view.");
        assert_eq!(fixture_prompt(20).unwrap(), "Modern living room with a sofa and a TV.");
        assert_eq!(fixture_prompt(21).unwrap_err().exit_code(), 1);
        assert_eq!(fixture_prompt(0).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn default_run_dir_is_a_sibling() {
        assert_eq!(default_run_dir(Path::new("/tmp/x/pano.png")), PathBuf::from("/tmp/x/pano_run"));
    }

    #[test]
    fn usage_errors_exit_1() {
        let env = |_: &str| None;
        assert_eq!(run(["panoweave", "bogus"], &env), 1);
        assert_eq!(run(["panoweave", "text2pano", "--out", "x.png"], &env), 1);
        assert_eq!(run(["panoweave", "--version"], &env), 0);
    }
}
