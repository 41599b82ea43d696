use std::collections::VecDeque;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    image_digest, BackendError, BackendKind, ChatModel, DepthEstimator, InpaintRequest, Inpainter,
    SuperResolver, TextToImage, VisionQa,
};
use crate::depth3d::DepthMap;
use crate::geometry::{intrinsics_from_fov, pixel_ray};
use crate::image::{ImageBuffer, Mask};
use crate::orchestrator::prompts;
use crate::procedural::procedural_image;

/// Fills masked pixels by push-pull diffusion of the known colors, then adds
/// seeded low-amplitude noise to the filled pixels only.
#[derive(Debug, Clone)]
pub struct MockInpainter {
    pub noise_amplitude: f32,
}

impl Default for MockInpainter {
    fn default() -> Self {
        Self {
            noise_amplitude: 0.01,
        }
    }
}

impl Inpainter for MockInpainter {
    fn inpaint(&self, req: &InpaintRequest<'_>) -> Result<ImageBuffer, BackendError> {
        if !req.mask.matches(req.image) {
            return Err(BackendError::InvalidRequest {
                kind: BackendKind::Inpaint,
                message: "image and mask differ in size".into(),
            });
        }
        let mut out = push_pull_fill(req.image, req.mask);
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let amp = self.noise_amplitude;
        for y in 0..out.height() {
            for x in 0..out.width() {
                if req.mask.get(x, y) {
                    let mut c = out.get(x, y);
                    for v in &mut c {
                        *v = (*v + rng.random_range(-amp..=amp)).clamp(0.0, 1.0);
                    }
                    out.set(x, y, c);
                } else {
                    out.set(x, y, req.image.get(x, y));
                }
            }
        }
        Ok(out)
    }
}

/// Push-pull hole filling: known pixels are averaged down a pyramid and the
/// coarse estimates are interpolated back up into the holes. Known pixels
/// are returned unchanged. With no known pixels at all the result is mid
/// gray.
pub fn push_pull_fill(image: &ImageBuffer, mask: &Mask) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    let colors: Vec<[f32; 3]> = (0..w * h).map(|i| image.get(i % w, i / w)).collect();
    let weights: Vec<f32> = mask.data().iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let filled = pull(colors, weights, w, h);
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                out.set(x, y, filled[y * w + x]);
            }
        }
    }
    out
}

fn pull(colors: Vec<[f32; 3]>, weights: Vec<f32>, w: usize, h: usize) -> Vec<[f32; 3]> {
    if weights.iter().all(|&x| x >= 1.0) {
        return colors;
    }
    if w == 1 && h == 1 {
        return if weights[0] > 0.0 { colors } else { vec![[0.5; 3]] };
    }
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let mut cc = vec![[0.0f32; 3]; cw * ch];
    let mut cwt = vec![0.0f32; cw * ch];
    for y in 0..h {
        for x in 0..w {
            let i = (y / 2) * cw + x / 2;
            let wt = weights[y * w + x];
            for k in 0..3 {
                cc[i][k] += wt * colors[y * w + x][k];
            }
            cwt[i] += wt;
        }
    }
    for i in 0..cw * ch {
        if cwt[i] > 0.0 {
            cc[i] = cc[i].map(|v| v / cwt[i]);
        }
        cwt[i] = cwt[i].min(1.0);
    }
    let coarse = pull(cc, cwt, cw, ch);
    let sample = |fx: f32, fy: f32| -> [f32; 3] {
        let fx = fx.clamp(0.0, (cw - 1) as f32);
        let fy = fy.clamp(0.0, (ch - 1) as f32);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(cw - 1), (y0 + 1).min(ch - 1));
        let (ax, ay) = (fx - x0 as f32, fy - y0 as f32);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = coarse[y0 * cw + x0][k] * (1.0 - ax) + coarse[y0 * cw + x1][k] * ax;
            let bot = coarse[y1 * cw + x0][k] * (1.0 - ax) + coarse[y1 * cw + x1][k] * ax;
            out[k] = top * (1.0 - ay) + bot * ay;
        }
        out
    };
    let mut out = colors;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let wt = weights[i].min(1.0);
            if wt < 1.0 {
                let c = sample((x as f32 + 0.5) / 2.0 - 0.5, (y as f32 + 0.5) / 2.0 - 0.5);
                for k in 0..3 {
                    out[i][k] = wt * out[i][k] + (1.0 - wt) * c[k];
                }
            }
        }
    }
    out
}

/// Deterministic bicubic upsampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSuperResolver;

impl SuperResolver for MockSuperResolver {
    fn superresolve(&self, image: &ImageBuffer, factor: usize) -> Result<ImageBuffer, BackendError> {
        if factor != 4 {
            return Err(BackendError::InvalidRequest {
                kind: BackendKind::SuperRes,
                message: format!("only 4x super-resolution is supported, got {factor}x"),
            });
        }
        Ok(image.bicubic_upsample(factor))
    }
}

/// Analytic scene seen by [`MockDepth`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthScene {
    /// Every pixel at the same distance.
    Constant(f64),
    /// A plane facing the camera at `distance`, seen through a pinhole with
    /// the given horizontal field of view: depth along each ray is
    /// `distance / cos(angle to the forward axis)`.
    Plane { distance: f64, fov_deg: f64 },
    /// Camera at the center of a sphere; same depths as `Constant(radius)`.
    Sphere { radius: f64 },
}

#[derive(Debug, Clone)]
pub struct MockDepth {
    pub scene: DepthScene,
}

impl MockDepth {
    pub fn new(scene: DepthScene) -> Self {
        Self { scene }
    }
}

impl DepthEstimator for MockDepth {
    fn estimate_depth(&self, image: &ImageBuffer) -> Result<DepthMap, BackendError> {
        let (w, h) = (image.width(), image.height());
        let invalid = |m: String| BackendError::InvalidRequest {
            kind: BackendKind::Depth,
            message: m,
        };
        let map = match self.scene {
            DepthScene::Constant(d) | DepthScene::Sphere { radius: d } => DepthMap::constant(w, h, d),
            DepthScene::Plane { distance, fov_deg } => {
                let k = intrinsics_from_fov(fov_deg, w, h).map_err(|e| invalid(e.to_string()))?;
                DepthMap::from_fn(w, h, |x, y| distance / pixel_ray(x as f64 + 0.5, y as f64 + 0.5, &k).z)
            }
        };
        map.map_err(|e| invalid(e.to_string()))
    }
}

/// Seeded procedural texture; the prompt perturbs the seed.
#[derive(Debug, Clone)]
pub struct MockTextToImage {
    pub width: usize,
    pub height: usize,
}

impl Default for MockTextToImage {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
        }
    }
}

impl TextToImage for MockTextToImage {
    fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageBuffer, BackendError> {
        // FNV-1a keeps the prompt contribution stable across platforms.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in prompt.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(procedural_image(self.width, self.height, seed ^ h))
    }
}

/// Matches any image in a [`ScriptedVqa`] rule.
pub const IMAGE_WILDCARD: &str = "*";

#[derive(Debug)]
struct Rule {
    key: String,
    image: String,
    responses: VecDeque<String>,
    sticky: Option<String>,
}

#[derive(Debug, Default)]
struct Script {
    rules: Vec<Rule>,
}

impl Script {
    fn respond(&mut self, kind: BackendKind, prompt: &str, digest: Option<&str>) -> Result<String, BackendError> {
        let rule = self
            .rules
            .iter_mut()
            .find(|r| prompt.contains(&r.key) && (r.image == IMAGE_WILDCARD || Some(r.image.as_str()) == digest))
            .ok_or_else(|| BackendError::NoScriptEntry {
                kind,
                prompt: prompt.to_string(),
            })?;
        if let Some(next) = rule.responses.pop_front() {
            return Ok(next);
        }
        rule.sticky.clone().ok_or_else(|| BackendError::ScriptExhausted {
            kind,
            prompt: prompt.to_string(),
        })
    }
}

/// Chat mock answering from scripted rules. A rule matches when its key is
/// a substring of the prompt; the first matching rule answers. Repeated
/// queries consume successive scripted responses, and an exhausted rule is
/// an error unless it was registered with [`ScriptedChat::always`].
#[derive(Debug, Default)]
pub struct ScriptedChat {
    script: Mutex<Script>,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on<I, S>(self, key: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.script.lock().unwrap().rules.push(Rule {
            key: key.to_string(),
            image: IMAGE_WILDCARD.into(),
            responses: responses.into_iter().map(Into::into).collect(),
            sticky: None,
        });
        self
    }

    pub fn always(self, key: &str, response: impl Into<String>) -> Self {
        self.script.lock().unwrap().rules.push(Rule {
            key: key.to_string(),
            image: IMAGE_WILDCARD.into(),
            responses: VecDeque::new(),
            sticky: Some(response.into()),
        });
        self
    }
}

impl ChatModel for ScriptedChat {
    fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        self.script.lock().unwrap().respond(BackendKind::Chat, prompt, None)
    }
}

/// VQA mock keyed by question substring and image digest (or
/// [`IMAGE_WILDCARD`]).
#[derive(Debug, Default)]
pub struct ScriptedVqa {
    script: Mutex<Script>,
}

impl ScriptedVqa {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on<I, S>(self, key: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.on_image(key, IMAGE_WILDCARD, responses)
    }

    pub fn on_image<I, S>(self, key: &str, digest: &str, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.script.lock().unwrap().rules.push(Rule {
            key: key.to_string(),
            image: digest.to_string(),
            responses: responses.into_iter().map(Into::into).collect(),
            sticky: None,
        });
        self
    }

    pub fn always(self, key: &str, response: impl Into<String>) -> Self {
        self.script.lock().unwrap().rules.push(Rule {
            key: key.to_string(),
            image: IMAGE_WILDCARD.into(),
            responses: VecDeque::new(),
            sticky: Some(response.into()),
        });
        self
    }
}

impl VisionQa for ScriptedVqa {
    fn vqa(&self, image: &ImageBuffer, question: &str) -> Result<String, BackendError> {
        let digest = image_digest(image);
        self.script.lock().unwrap().respond(BackendKind::Vqa, question, Some(&digest))
    }
}

/// Chat mock with fixed, well-formed answers to every question the pipeline
/// asks.
pub fn canned_chat() -> ScriptedChat {
    ScriptedChat::new()
        .always(
            prompts::LAYOUT_KEY,
            "View 1: We see a tall bookshelf by the wall.\n\
             View 2: We see a wide window with curtains.\n\
             View 3: We see a reading chair and a lamp.\n\
             View 4: We see a doorway to a hallway.\n\
             View 5: We see a framed painting above a cabinet.\n\
             View 6: We see a potted plant near the corner.",
        )
        .always(prompts::SCENE_KEY, "a quiet room")
        .always(prompts::OBJECTS_KEY, "We see: table\nWe see: chair")
        .always("multiple table", "no")
        .always("multiple chair", "yes")
        .always(prompts::MULTIPLE_KEY, "yes")
}

/// VQA mock with fixed answers: a short place description, a foreground /
/// background description, and "no" to every repeated-object check.
pub fn canned_vqa() -> ScriptedVqa {
    ScriptedVqa::new()
        .always(prompts::PLACE_KEY, "a quiet room")
        .always(
            prompts::DETAIL_KEY,
            "a wooden table in the foreground and a bright wall in the background",
        )
        .always(prompts::REPEAT_CHECK_KEY, "no")
}
