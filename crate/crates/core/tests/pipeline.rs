use std::sync::Arc;

use panoweave::backends::{BackendKind, Inpainter, InpaintRequest, ScriptedChat, ScriptedVqa};
use panoweave::geometry::{intrinsics_from_fov, rotation_y};
use panoweave::orchestrator::{run_text_pipeline, PipelineError, TraceEvent};
use panoweave::procedural::procedural_image;
use panoweave::warp::warp_view;
use panoweave::{run_pipeline, BackendError, Backends, ImageBuffer, PanoramaResult, PipelineConfig};

// Question texts as printed in the prompt appendix, with the LaTeX
// abbreviations and quotes rendered as plain ASCII.
const Q1_BLIP: &str = "Question: What is this place (describe with fewer than 5 words)? Answer:";
const Q2_BLIP: &str = "Question: Describe the foreground and background in detail and separately? Answer:";

const PLACE: &str = "a bedroom with a bed";
const DETAIL: &str = "a bed with white sheets in the foreground and a window in the background";

fn q1_gpt() -> String {
    format!(
        "Given a scene with {PLACE}, where in font of us we see {DETAIL}. Generate 6 rotated views to describe what \
else you see in this place, where the camera of each view rotates 60 degrees to the right (you dont need to describe \
the original view, i.e., the first view of the 6 views you need to describe is the view with 60 degree rotation \
angle). Dont involve redundant details, just describe the content of each view. Also don't repeat the same object in \
different views. Don't refer to previously generated views. Generate concise (< 10 words) and diverse contents for \
each view. Each sentence starts with: View xxx(view number, from 1-6): We see..."
    )
}

fn q2_gpt() -> String {
    format!(
        "Modify the sentence: {PLACE} so that we remove all the objects from the description (e.g., 'a bedroom with a \
bed' would become 'a bedroom'. Do not change the sentence if the description is only an object). Just output the \
modified sentence."
    )
}

fn q3_gpt() -> String {
    format!(
        "Given a scene with {PLACE}, where in font of us we see {DETAIL}. What would be the two major foreground \
objects that we see? Use two lines to describe them where each line is in the format of \"We see: xxx (one object, \
dont describe details, just one word for the object. Start from the most possible object. Don't mention background \
objects like things on the wall, ceiling or floor.)\""
    )
}

fn q4_gpt(object: &str) -> String {
    format!("Do we often see multiple {object} in a scene with {PLACE}? Just say 'yes' or 'no' with all lower case letters.")
}

const MALFORMED_LAYOUT: &str = "Sure! Here are the views:\nView 1: We see a desk.\nView 2: We see a lamp.";
const LAYOUT: &str = "View 1: We see a wooden desk.\nView 2: We see a tall wardrobe.\nView 3: We see a closed door.\n\
View 4: We see a framed mirror.\nView 5: We see a small armchair.\nView 6: We see a bookshelf.";

fn small_config() -> PipelineConfig {
    PipelineConfig {
        view_resolution: 64,
        sr_resolution: 256,
        pano_width: 512,
        ..PipelineConfig::default()
    }
}

fn input() -> (ImageBuffer, panoweave::CameraIntrinsics) {
    let img = procedural_image(64, 64, 11);
    let k = intrinsics_from_fov(60.0, 64, 64).unwrap();
    (img, k)
}

fn scripted(vqa: ScriptedVqa, chat: ScriptedChat) -> Backends {
    let mut b = Backends::mock();
    b.vqa = Arc::new(vqa);
    b.chat = Arc::new(chat);
    b
}

fn describe_vqa() -> ScriptedVqa {
    ScriptedVqa::new().always("What is this place", PLACE).always("Describe the foreground", DETAIL)
}

fn bedroom_chat() -> ScriptedChat {
    ScriptedChat::new()
        .on("Generate 6 rotated views", [MALFORMED_LAYOUT, LAYOUT])
        .on("Modify the sentence", ["a bedroom"])
        .on("two major foreground objects", ["We see: bed\nWe see: lamp"])
        .on("multiple bed", ["no"])
        .on("multiple lamp", ["no"])
}

fn run(backends: &Backends) -> Result<PanoramaResult, PipelineError> {
    let (img, k) = input();
    run_pipeline(&img, &k, &small_config(), backends)
}

fn calls(trace: &[TraceEvent]) -> Vec<(BackendKind, Option<usize>, String)> {
    trace.iter().map(|e| (e.kind, e.view, e.prompt.clone())).collect()
}

#[test]
fn call_sequence_and_prompts_match_the_algorithm() {
    let vqa = describe_vqa().always("Is there any", "no");
    let result = run(&scripted(vqa, bedroom_chat())).unwrap();

    let mut want = vec![
        (BackendKind::Vqa, None, Q1_BLIP.to_string()),
        (BackendKind::Vqa, None, Q2_BLIP.to_string()),
        (BackendKind::Chat, None, q1_gpt()),
        (BackendKind::Chat, None, q1_gpt()),
        (BackendKind::Chat, None, q2_gpt()),
        (BackendKind::Chat, None, q3_gpt()),
        (BackendKind::Chat, None, q4_gpt("bed")),
        (BackendKind::Chat, None, q4_gpt("lamp")),
        (BackendKind::Inpaint, Some(1), "a bedroom".to_string()),
        (BackendKind::SuperRes, Some(1), String::new()),
    ];
    // Schedule angles and the layout line each one maps to.
    let lines = ["a wooden desk", "a bookshelf", "a tall wardrobe", "a small armchair", "a closed door", "a framed mirror"];
    for (i, line) in lines.iter().enumerate() {
        let v = Some(i + 2);
        want.push((
            BackendKind::Inpaint,
            v,
            format!("a peripheral view of a bedroom where we only see {line}"),
        ));
        want.push((BackendKind::Vqa, v, "Question: Is there any bed in this image? Answer:".into()));
        want.push((BackendKind::Vqa, v, "Question: Is there any lamp in this image? Answer:".into()));
        want.push((BackendKind::SuperRes, v, String::new()));
    }
    assert_eq!(calls(&result.trace), want);

    let inpaints: Vec<_> = result.trace.iter().filter(|e| e.kind == BackendKind::Inpaint).collect();
    assert_eq!(inpaints[0].negative.as_deref(), Some(""));
    for e in &inpaints[1..] {
        assert_eq!(e.negative.as_deref(), Some("any type of bed, any type of lamp"));
        assert_eq!(e.seed, Some(0));
        assert_eq!(e.attempt, Some(0));
    }
    assert_eq!(result.descriptions.repeat, vec!["bed".to_string(), "lamp".to_string()]);
    assert_eq!(result.descriptions.input_description(), format!("{PLACE}. {DETAIL}"));
    assert_eq!(result.inpaint_calls, vec![1; 7]);
    assert!(result.views.iter().all(|v| v.sr_image.as_ref().unwrap().width() == 256));
    for (i, e) in result.trace.iter().enumerate() {
        assert_eq!(e.seq, i);
        assert!(e.error.is_none());
    }
}

#[test]
fn repeated_object_triggers_reinpainting_with_new_seeds() {
    let mut bed = vec!["yes", "Yes.", "no"];
    bed.extend(["no"; 5]);
    let vqa = describe_vqa().on("Is there any bed", bed).on("Is there any lamp", ["no"; 6]);
    let result = run(&scripted(vqa, bedroom_chat())).unwrap();
    assert_eq!(result.inpaint_calls, vec![1, 3, 1, 1, 1, 1, 1]);
    let view2: Vec<_> = result
        .trace
        .iter()
        .filter(|e| e.view == Some(2) && e.kind == BackendKind::Inpaint)
        .map(|e| (e.attempt.unwrap(), e.seed.unwrap()))
        .collect();
    assert_eq!(view2, vec![(0, 0), (1, 1), (2, 2)]);
    // A "yes" short-circuits the remaining objects for that attempt.
    let checks: Vec<_> = result
        .trace
        .iter()
        .filter(|e| e.view == Some(2) && e.kind == BackendKind::Vqa)
        .map(|e| e.prompt.contains("bed"))
        .collect();
    assert_eq!(checks, vec![true, true, true, false]);
}

#[test]
fn retry_cap_accepts_the_twenty_first_attempt() {
    let vqa = describe_vqa().always("Is there any", "yes");
    let result = run(&scripted(vqa, bedroom_chat())).unwrap();
    assert_eq!(result.inpaint_calls, vec![1, 21, 21, 21, 21, 21, 21]);
    for view in 2..=7 {
        let inpaints = result
            .trace
            .iter()
            .filter(|e| e.view == Some(view) && e.kind == BackendKind::Inpaint)
            .count();
        let checks = result
            .trace
            .iter()
            .filter(|e| e.view == Some(view) && e.kind == BackendKind::Vqa)
            .count();
        assert_eq!(inpaints, 21);
        assert_eq!(checks, 20, "no check after the capped attempt");
    }
}

#[test]
fn no_repeat_set_means_no_checks() {
    let chat = ScriptedChat::new()
        .on("Generate 6 rotated views", [LAYOUT])
        .on("Modify the sentence", ["a bedroom"])
        .on("two major foreground objects", ["We see: pillow\nWe see: lamp"])
        .always("Do we often see multiple", "yes");
    let result = run(&scripted(describe_vqa(), chat)).unwrap();
    assert!(result.descriptions.repeat.is_empty());
    assert_eq!(result.trace.iter().filter(|e| e.kind == BackendKind::Vqa).count(), 2);
    let second = result.trace.iter().find(|e| e.view == Some(2)).unwrap();
    assert_eq!(second.prompt, "a peripheral view of a bedroom where we see a wooden desk");
    assert_eq!(second.negative.as_deref(), Some(""));
}

#[test]
fn persistent_malformed_layout_aborts_after_all_attempts() {
    let chat = ScriptedChat::new().always("Generate 6 rotated views", MALFORMED_LAYOUT);
    let err = run(&scripted(describe_vqa(), chat)).unwrap_err();
    match &err {
        PipelineError::LayoutFormat { attempts, trace, .. } => {
            assert_eq!(*attempts, 6);
            assert_eq!(trace.iter().filter(|e| e.kind == BackendKind::Chat).count(), 6);
            assert_eq!(trace.len(), 8);
        }
        other => panic!("unexpected {other:?}"),
    }
}

struct FailingInpainter;

impl Inpainter for FailingInpainter {
    fn inpaint(&self, _: &InpaintRequest<'_>) -> Result<ImageBuffer, BackendError> {
        Err(BackendError::Transport {
            kind: BackendKind::Inpaint,
            message: "connection reset".into(),
            retriable: true,
        })
    }
}

#[test]
fn backend_failure_aborts_with_partial_trace() {
    let mut b = Backends::mock();
    b.inpaint = Arc::new(FailingInpainter);
    let err = run(&b).unwrap_err();
    let trace = err.partial_trace();
    assert!(matches!(err, PipelineError::Backend { .. }));
    let last = trace.last().unwrap();
    assert_eq!(last.kind, BackendKind::Inpaint);
    assert_eq!(last.view, Some(1));
    assert!(last.error.as_deref().unwrap().contains("connection reset"));
}

#[test]
fn missing_script_entry_is_a_backend_error() {
    let err = run(&scripted(ScriptedVqa::new(), bedroom_chat())).unwrap_err();
    assert!(matches!(
        err,
        PipelineError::Backend {
            source: BackendError::NoScriptEntry { .. },
            ..
        }
    ));
}

#[test]
fn mock_runs_are_deterministic() {
    let a = run(&Backends::mock()).unwrap();
    let b = run(&Backends::mock()).unwrap();
    assert_eq!(a.panorama, b.panorama);
    let strip = |t: &[TraceEvent]| t.iter().map(TraceEvent::without_timing).collect::<Vec<_>>();
    assert_eq!(strip(&a.trace), strip(&b.trace));
    let (img, k) = input();
    let other = run_pipeline(&img, &k, &PipelineConfig { seed: 5, ..small_config() }, &Backends::mock()).unwrap();
    assert_ne!(other.panorama, a.panorama);
}

#[test]
fn text_pipeline_starts_with_image_generation() {
    let result = run_text_pipeline("Snowy mountain peak view.", &small_config(), &Backends::mock()).unwrap();
    let first = &result.trace[0];
    assert_eq!(first.kind, BackendKind::TextToImage);
    assert_eq!(first.prompt, "Snowy mountain peak view.");
    assert_eq!(first.seed, Some(0));
    assert_eq!(result.trace[1].prompt, Q1_BLIP);
}

#[test]
fn rejects_bad_inputs() {
    let k = intrinsics_from_fov(60.0, 64, 32).unwrap();
    let wide = procedural_image(64, 32, 1);
    assert!(matches!(
        run_pipeline(&wide, &k, &small_config(), &Backends::mock()),
        Err(PipelineError::Input(_))
    ));
    let (img, k) = input();
    let bad = PipelineConfig {
        sr_resolution: 128,
        ..small_config()
    };
    assert!(matches!(run_pipeline(&img, &k, &bad, &Backends::mock()), Err(PipelineError::Config(_))));
}

#[test]
fn last_view_is_unknown_in_the_middle() {
    let result = run(&Backends::mock()).unwrap();
    let (w, h) = (result.holes.width(), result.holes.height());
    for x in 0..w {
        assert!(!result.holes.get(x, h / 2), "equator column {x} uncovered");
    }
    let k = small_config().view_intrinsics();
    let (_, mask) = warp_view(&result.views[..6], &k, &rotation_y(200.5));
    let w = mask.width();
    let center: f64 = (0..mask.height())
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .map(|(x, _)| x as f64 + 0.5)
        .sum::<f64>()
        / mask.count() as f64;
    assert!((center - w as f64 / 2.0).abs() < 0.1 * w as f64, "unknown centroid at {center}");
}
