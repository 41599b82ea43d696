//! The warp-and-inpaint driver: scene descriptions from the language
//! models, layout parsing, prompt construction, the per-view inpainting loop
//! with repeated-object checks, and the final merge.

pub mod prompts;
mod trace;

pub use trace::{read_trace_jsonl, write_trace_jsonl, TraceEvent};

use std::sync::OnceLock;

use log::{info, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, ChatModel, InpaintRequest, VisionQa};
use crate::fusion::{compose_panorama, FusionError, DEFAULT_PANO_WIDTH};
use crate::geometry::{intrinsics_from_fov, rotation_y, CameraIntrinsics, RotationY};
use crate::image::{ImageBuffer, Mask};
use crate::warp::{warp_view, ViewRecord, SR_RESOLUTION, VIEW_RESOLUTION};
use trace::Recorder;

/// Number of lines the layout answer must contain.
pub const LAYOUT_LINES: usize = 6;

/// Text artifacts extracted before warping.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneDescriptions {
    /// Answer to the "what is this place" question.
    pub place: String,
    /// Answer to the foreground/background question.
    pub detail: String,
    /// One content string per layout line, prefixes stripped.
    pub layout: Vec<String>,
    /// Object-free scene sentence.
    pub scene: String,
    /// Objects that must not be repeated across views.
    pub repeat: Vec<String>,
}

impl SceneDescriptions {
    /// Both description answers, as one text.
    pub fn input_description(&self) -> String {
        match (self.place.is_empty(), self.detail.is_empty()) {
            (false, false) => format!("{}. {}", self.place, self.detail),
            (false, true) => self.place.clone(),
            _ => self.detail.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSchedule {
    pub fov_deg: f64,
    /// Yaw of each view in generation order; the first is the input view.
    pub angles_deg: Vec<f64>,
    /// Horizontal field of view assumed for the input image.
    pub input_fov_deg: f64,
}

impl Default for ViewSchedule {
    fn default() -> Self {
        Self {
            fov_deg: 100.0,
            angles_deg: vec![0.0, 41.0, -41.0, 82.0, -82.0, 123.0, 200.5],
            input_fov_deg: 60.0,
        }
    }
}

fn normalize_deg(a: f64) -> f64 {
    a.rem_euclid(360.0)
}

impl ViewSchedule {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return err(format!("view fov {} must lie in (0, 180)", self.fov_deg));
        }
        if !(self.input_fov_deg > 0.0 && self.input_fov_deg < 180.0) {
            return err(format!("input fov {} must lie in (0, 180)", self.input_fov_deg));
        }
        if self.angles_deg.first() != Some(&0.0) {
            return err("the first scheduled angle must be 0".into());
        }
        if self.angles_deg.len() < 2 {
            return err("the schedule needs at least one view besides the input".into());
        }
        let mut seen: Vec<f64> = self.angles_deg.iter().map(|&a| normalize_deg(a)).collect();
        seen.sort_by(f64::total_cmp);
        if seen.windows(2).any(|w| w[1] - w[0] < 1e-9) {
            return err("scheduled angles must be distinct modulo 360".into());
        }
        if let Some(gap) = self.uncovered_longitude() {
            return err(format!("views leave longitude {gap:.1} uncovered"));
        }
        Ok(())
    }

    /// First longitude (at 0.1° resolution) outside every view's horizontal
    /// field of view, if any.
    pub fn uncovered_longitude(&self) -> Option<f64> {
        let half = self.fov_deg / 2.0;
        (0..3600).map(|i| i as f64 / 10.0).find(|&lon| {
            !self.angles_deg.iter().any(|&a| {
                let d = (normalize_deg(lon - a) + 180.0).rem_euclid(360.0) - 180.0;
                d.abs() <= half
            })
        })
    }

    /// Layout line (1-based) describing the view at `angle_deg`. The
    /// non-zero angles are normalized to [0, 360), sorted, and assigned the
    /// lines in order.
    pub fn layout_line(&self, angle_deg: f64) -> Option<usize> {
        let mut others: Vec<f64> = self.angles_deg[1..].iter().map(|&a| normalize_deg(a)).collect();
        others.sort_by(f64::total_cmp);
        let target = normalize_deg(angle_deg);
        let rank = others.iter().position(|&a| (a - target).abs() < 1e-9)?;
        Some(rank * LAYOUT_LINES / others.len() + 1)
    }
}

/// Layout line for an angle of the default schedule.
pub fn map_view_to_layout_line(angle_deg: f64) -> Option<usize> {
    ViewSchedule::default().layout_line(angle_deg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schedule: ViewSchedule,
    /// Re-inpainting attempts allowed per view after the first.
    pub max_retries: u32,
    /// Re-queries allowed after a malformed layout answer.
    pub layout_retries: u32,
    pub view_resolution: usize,
    pub sr_resolution: usize,
    pub pano_width: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schedule: ViewSchedule::default(),
            max_retries: 20,
            layout_retries: 5,
            view_resolution: VIEW_RESOLUTION,
            sr_resolution: SR_RESOLUTION,
            pano_width: DEFAULT_PANO_WIDTH,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.schedule.validate()?;
        if self.view_resolution < 2 {
            return Err(PipelineError::Config("view resolution must be at least 2".into()));
        }
        if self.sr_resolution != 4 * self.view_resolution {
            return Err(PipelineError::Config(format!(
                "super-resolution must be 4x the view resolution ({} vs {})",
                self.sr_resolution, self.view_resolution
            )));
        }
        if self.pano_width < 2 || self.pano_width % 2 != 0 {
            return Err(PipelineError::Config(format!("panorama width {} must be even", self.pano_width)));
        }
        Ok(())
    }

    /// Intrinsics shared by all generated views.
    pub fn view_intrinsics(&self) -> CameraIntrinsics {
        intrinsics_from_fov(self.schedule.fov_deg, self.view_resolution, self.view_resolution)
            .expect("schedule validated")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("backend call failed: {source}")]
    Backend {
        source: BackendError,
        trace: Vec<TraceEvent>,
    },
    #[error("layout answer still malformed after {attempts} attempts: {reason}")]
    LayoutFormat {
        attempts: usize,
        reason: String,
        trace: Vec<TraceEvent>,
    },
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl PipelineError {
    /// Backend calls made before the failure.
    pub fn partial_trace(&self) -> &[TraceEvent] {
        match self {
            PipelineError::Backend { trace, .. } | PipelineError::LayoutFormat { trace, .. } => trace,
            _ => &[],
        }
    }
}

/// Failure of a single step, before the trace is attached.
#[derive(Debug)]
pub enum StepError {
    Backend(BackendError),
    LayoutFormat { attempts: usize, reason: String },
}

impl From<BackendError> for StepError {
    fn from(e: BackendError) -> Self {
        StepError::Backend(e)
    }
}

impl std::fmt::Display for StepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepError::Backend(e) => e.fmt(f),
            StepError::LayoutFormat { attempts, reason } => {
                write!(f, "layout answer malformed after {attempts} attempts: {reason}")
            }
        }
    }
}

impl std::error::Error for StepError {}

/// Asks both description questions. Answers are trimmed; empty answers are
/// kept.
pub fn describe_input(vqa: &dyn VisionQa, image: &ImageBuffer) -> Result<(String, String), BackendError> {
    let place = vqa.vqa(image, prompts::Q1_BLIP)?.trim().to_string();
    let detail = vqa.vqa(image, prompts::Q2_BLIP)?.trim().to_string();
    Ok((place, detail))
}

fn layout_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^[\s*#>-]*View\s*(\d+)[^:]*:[\s*]*We see[\s:.]*(.*?)[\s.]*$").expect("valid regex")
    })
}

/// Checks and strips a layout answer: exactly six non-empty lines, line `n`
/// starting with `View n...: We see`.
pub fn parse_layout(answer: &str) -> Result<Vec<String>, String> {
    let lines: Vec<&str> = answer.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() != LAYOUT_LINES {
        return Err(format!("expected {LAYOUT_LINES} lines, got {}", lines.len()));
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let caps = layout_line_regex()
                .captures(line)
                .ok_or_else(|| format!("line {} does not start with \"View {}: We see\": {line:?}", i + 1, i + 1))?;
            let n: usize = caps[1].parse().map_err(|_| format!("bad view number in {line:?}"))?;
            if n != i + 1 {
                return Err(format!("line {} is numbered {n}", i + 1));
            }
            let content = caps[2].trim().to_string();
            if content.is_empty() {
                return Err(format!("line {} has no content", i + 1));
            }
            Ok(content)
        })
        .collect()
}

/// Asks for the six-view layout, re-asking up to `retries` times while the
/// answer is malformed.
pub fn generate_layout(chat: &dyn ChatModel, place: &str, detail: &str, retries: u32) -> Result<Vec<String>, StepError> {
    let question = prompts::layout_question(place, detail);
    let attempts = retries as usize + 1;
    let mut reason = String::new();
    for attempt in 1..=attempts {
        let answer = chat.chat(&question)?;
        match parse_layout(&answer) {
            Ok(lines) => return Ok(lines),
            Err(r) => {
                warn!("layout answer {attempt}/{attempts} rejected: {r}");
                reason = r;
            }
        }
    }
    Err(StepError::LayoutFormat { attempts, reason })
}

/// Object-free scene sentence: the first non-empty line of the answer.
pub fn scene_level_description(chat: &dyn ChatModel, place: &str) -> Result<String, BackendError> {
    let answer = chat.chat(&prompts::scene_question(place))?;
    Ok(answer.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string())
}

/// Extracts `xxx` from lines of the form `We see: xxx`.
pub fn parse_objects(answer: &str) -> Vec<String> {
    answer
        .lines()
        .filter_map(|l| {
            let l = l.trim().trim_start_matches(|c: char| !c.is_alphabetic());
            let lower = l.to_lowercase();
            let rest = lower.strip_prefix("we see")?;
            let rest = rest.trim_start_matches([':', ' ', '\t']);
            let object: String = rest
                .trim()
                .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
                .trim_start_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
                .to_string();
            (!object.is_empty()).then_some(object)
        })
        .take(2)
        .collect()
}

/// Objects whose repetition must be avoided: the dominant foreground objects
/// for which the model says multiple copies are uncommon.
pub fn repeat_avoidance_set(chat: &dyn ChatModel, place: &str, detail: &str) -> Result<Vec<String>, BackendError> {
    let answer = chat.chat(&prompts::objects_question(place, detail))?;
    let objects = parse_objects(&answer);
    if objects.is_empty() {
        warn!("could not parse foreground objects from {answer:?}; repeated objects will not be controlled");
    }
    let mut repeat = Vec::new();
    for object in objects {
        let a = chat.chat(&prompts::multiple_question(&object, place))?;
        match prompts::normalize_yes_no(&a) {
            Some(false) => repeat.push(object),
            Some(true) => {}
            None => warn!("unclear answer {a:?} about multiple {object}; treating as yes"),
        }
    }
    Ok(repeat)
}

/// Runs all four description steps.
pub fn describe_scene(
    vqa: &dyn VisionQa,
    chat: &dyn ChatModel,
    image: &ImageBuffer,
    layout_retries: u32,
) -> Result<SceneDescriptions, StepError> {
    let (place, detail) = describe_input(vqa, image)?;
    let layout = generate_layout(chat, &place, &detail, layout_retries)?;
    let scene = scene_level_description(chat, &place)?;
    let repeat = repeat_avoidance_set(chat, &place, &detail)?;
    Ok(SceneDescriptions {
        place,
        detail,
        layout,
        scene,
        repeat,
    })
}

/// Positive and negative prompts for view `view_index` (1-based) of the
/// schedule.
pub fn build_inpaint_prompt(
    descs: &SceneDescriptions,
    schedule: &ViewSchedule,
    view_index: usize,
) -> Result<(String, String), PipelineError> {
    if view_index == 0 || view_index > schedule.angles_deg.len() {
        return Err(PipelineError::Config(format!(
            "view index {view_index} outside 1..={}",
            schedule.angles_deg.len()
        )));
    }
    if view_index == 1 {
        return Ok((descs.scene.clone(), String::new()));
    }
    let line = schedule
        .layout_line(schedule.angles_deg[view_index - 1])
        .expect("scheduled angle maps to a line");
    let text = descs
        .layout
        .get(line - 1)
        .ok_or_else(|| PipelineError::Config(format!("layout has no line {line}")))?;
    Ok(prompts::peripheral_prompt(&descs.scene, text, &descs.repeat))
}

/// True iff the model reports any of `objects` in `image`. Stops at the
/// first "yes". Failed calls count as "no".
pub fn check_repeats(vqa: &dyn VisionQa, image: &ImageBuffer, objects: &[String]) -> bool {
    for object in objects {
        match vqa.vqa(image, &prompts::repeat_check_question(object)) {
            Ok(a) if prompts::normalize_yes_no(&a) == Some(true) => return true,
            Ok(_) => {}
            Err(e) => warn!("repeat check for {object} failed ({e}); accepting the view"),
        }
    }
    false
}

/// Output of a complete run.
#[derive(Debug, Clone)]
pub struct PanoramaResult {
    pub panorama: ImageBuffer,
    /// Panorama pixels no view reached, before pole filling.
    pub holes: Mask,
    pub views: Vec<ViewRecord>,
    pub descriptions: SceneDescriptions,
    /// Inpainting calls made for each view.
    pub inpaint_calls: Vec<u32>,
    pub trace: Vec<TraceEvent>,
}

/// Pre-inpainting state of a view, kept for inspection.
#[derive(Debug, Clone)]
pub struct WarpedView {
    pub image: ImageBuffer,
    pub mask: Mask,
}

/// Embeds the input (its own field of view, centered, yaw 0) in the first
/// view's canvas.
pub fn initial_warp(input: &ImageBuffer, input_k: &CameraIntrinsics, config: &PipelineConfig) -> WarpedView {
    let source = ViewRecord::new(input.clone(), *input_k, RotationY::identity());
    let (image, mask) = warp_view(&[source], &config.view_intrinsics(), &RotationY::identity());
    WarpedView { image, mask }
}

/// Generates a panorama from one square input image.
pub fn run_pipeline(
    input: &ImageBuffer,
    input_k: &CameraIntrinsics,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<PanoramaResult, PipelineError> {
    let rec = Recorder::new(backends);
    run_recorded(input, input_k, config, &rec)
}

/// Generates the input image from text, then runs [`run_pipeline`]. The
/// text-to-image call is the first trace event.
pub fn run_text_pipeline(prompt: &str, config: &PipelineConfig, backends: &Backends) -> Result<PanoramaResult, PipelineError> {
    config.validate()?;
    let rec = Recorder::new(backends);
    let image = rec.text_to_image(prompt, config.seed).map_err(|source| PipelineError::Backend {
        source,
        trace: rec.events(),
    })?;
    let input_k = intrinsics_from_fov(config.schedule.input_fov_deg, image.width(), image.height())
        .map_err(|e| PipelineError::Input(e.to_string()))?;
    run_recorded(&image, &input_k, config, &rec)
}

fn run_recorded(
    input: &ImageBuffer,
    input_k: &CameraIntrinsics,
    config: &PipelineConfig,
    rec: &Recorder<'_>,
) -> Result<PanoramaResult, PipelineError> {
    config.validate()?;
    if input.width() != input.height() {
        return Err(PipelineError::Input(format!("input must be square, got {}x{}", input.width(), input.height())));
    }
    if input_k.width != input.width() || input_k.height != input.height() {
        return Err(PipelineError::Input("input intrinsics do not match the image size".into()));
    }
    let backend_err = |source: BackendError| PipelineError::Backend {
        source,
        trace: rec.events(),
    };

    let descriptions = describe_scene(rec, rec, input, config.layout_retries).map_err(|e| match e {
        StepError::Backend(source) => backend_err(source),
        StepError::LayoutFormat { attempts, reason } => PipelineError::LayoutFormat {
            attempts,
            reason,
            trace: rec.events(),
        },
    })?;
    info!("scene: {:?}; avoiding repeats of {:?}", descriptions.scene, descriptions.repeat);

    let k = config.view_intrinsics();
    let schedule = &config.schedule;
    let mut views: Vec<ViewRecord> = Vec::with_capacity(schedule.angles_deg.len());
    let mut inpaint_calls = Vec::with_capacity(schedule.angles_deg.len());
    for (idx, &angle) in schedule.angles_deg.iter().enumerate() {
        let view_index = idx + 1;
        rec.set_view(Some(view_index));
        let rotation = rotation_y(angle);
        let warped = if view_index == 1 {
            initial_warp(input, input_k, config)
        } else {
            let (image, mask) = warp_view(&views, &k, &rotation);
            WarpedView { image, mask }
        };
        let (positive, negative) = build_inpaint_prompt(&descriptions, schedule, view_index)?;
        let check = view_index > 1 && !descriptions.repeat.is_empty();
        let mut retries = 0u32;
        let image = loop {
            let req = InpaintRequest {
                image: &warped.image,
                mask: &warped.mask,
                prompt: &positive,
                negative_prompt: &negative,
                seed: config.seed.wrapping_add(retries as u64),
            };
            let out = rec.inpaint(retries, &req).map_err(backend_err)?;
            // At the cap the view is accepted without asking again.
            if !check || retries >= config.max_retries || !check_repeats(rec, &out, &descriptions.repeat) {
                break out;
            }
            retries += 1;
        };
        inpaint_calls.push(retries + 1);
        let sr = rec.superresolve(&image, 4).map_err(backend_err)?;
        let view = ViewRecord::new(image, k, rotation).with_sr(sr);
        if !view.sr_is_consistent() {
            return Err(backend_err(BackendError::Malformed {
                kind: crate::backends::BackendKind::SuperRes,
                message: "super-resolved view is not 4x the input".into(),
            }));
        }
        info!("view {view_index} ({angle}°) accepted after {} inpainting calls", retries + 1);
        views.push(view);
    }
    rec.set_view(None);

    let composed = compose_panorama(&views, config.pano_width)?;
    Ok(PanoramaResult {
        panorama: composed.image,
        holes: composed.holes,
        views,
        descriptions,
        inpaint_calls,
        trace: rec.events(),
    })
}
