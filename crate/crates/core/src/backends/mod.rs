//! Pluggable model interfaces.
//!
//! Every learned component sits behind a small synchronous trait. Two
//! families of implementations ship here: deterministic mocks (used by the
//! tests and the offline CLI mode) and HTTP JSON adapters.

mod http;
mod mock;

pub use http::{
    HttpChat, HttpClient, HttpDepth, HttpInpainter, HttpSuperResolver, HttpTextToImage, HttpVqa, ChatWireFormat,
};
pub use mock::{
    canned_chat, canned_vqa, push_pull_fill, DepthScene, MockDepth, MockInpainter, MockSuperResolver,
    MockTextToImage, ScriptedChat, ScriptedVqa, IMAGE_WILDCARD,
};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::depth3d::DepthMap;
use crate::image::{ImageBuffer, Mask};

/// Depths returned by remote estimators are floored to this value.
pub const MIN_REMOTE_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Inpaint,
    Chat,
    Vqa,
    #[serde(rename = "superres")]
    SuperRes,
    Depth,
    #[serde(rename = "text2image")]
    TextToImage,
}

impl BackendKind {
    pub const ALL: [BackendKind; 6] = [
        BackendKind::Inpaint,
        BackendKind::Chat,
        BackendKind::Vqa,
        BackendKind::SuperRes,
        BackendKind::Depth,
        BackendKind::TextToImage,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Inpaint => "inpaint",
            BackendKind::Chat => "chat",
            BackendKind::Vqa => "vqa",
            BackendKind::SuperRes => "superres",
            BackendKind::Depth => "depth",
            BackendKind::TextToImage => "text2image",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BackendError::Config(format!("unknown backend kind {s:?}")))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{kind} transport failure: {message}")]
    Transport {
        kind: BackendKind,
        message: String,
        retriable: bool,
    },
    #[error("{kind} returned a malformed response: {message}")]
    Malformed { kind: BackendKind, message: String },
    #[error("{kind} mock script has no response left for {prompt:?}")]
    ScriptExhausted { kind: BackendKind, prompt: String },
    #[error("{kind} mock script has no entry matching {prompt:?}")]
    NoScriptEntry { kind: BackendKind, prompt: String },
    #[error("invalid {kind} request: {message}")]
    InvalidRequest { kind: BackendKind, message: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Transport { retriable: true, .. })
    }
}

pub struct InpaintRequest<'a> {
    pub image: &'a ImageBuffer,
    pub mask: &'a Mask,
    pub prompt: &'a str,
    pub negative_prompt: &'a str,
    pub seed: u64,
}

/// Text-conditioned inpainting. Implementations must leave unmasked pixels
/// untouched.
pub trait Inpainter: Send + Sync {
    fn inpaint(&self, req: &InpaintRequest<'_>) -> Result<ImageBuffer, BackendError>;
}

/// Single-turn language model.
pub trait ChatModel: Send + Sync {
    fn chat(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Visual question answering.
pub trait VisionQa: Send + Sync {
    fn vqa(&self, image: &ImageBuffer, question: &str) -> Result<String, BackendError>;
}

pub trait SuperResolver: Send + Sync {
    fn superresolve(&self, image: &ImageBuffer, factor: usize) -> Result<ImageBuffer, BackendError>;
}

pub trait DepthEstimator: Send + Sync {
    fn estimate_depth(&self, image: &ImageBuffer) -> Result<DepthMap, BackendError>;
}

pub trait TextToImage: Send + Sync {
    fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageBuffer, BackendError>;
}

/// One wired set of backends.
#[derive(Clone)]
pub struct Backends {
    pub inpaint: Arc<dyn Inpainter>,
    pub chat: Arc<dyn ChatModel>,
    pub vqa: Arc<dyn VisionQa>,
    pub superres: Arc<dyn SuperResolver>,
    pub depth: Arc<dyn DepthEstimator>,
    pub text2image: Arc<dyn TextToImage>,
}

impl Backends {
    /// Fully offline backends with canned language answers.
    pub fn mock() -> Self {
        Self {
            inpaint: Arc::new(MockInpainter::default()),
            chat: Arc::new(canned_chat()),
            vqa: Arc::new(canned_vqa()),
            superres: Arc::new(MockSuperResolver),
            depth: Arc::new(MockDepth::new(DepthScene::Constant(2.0))),
            text2image: Arc::new(MockTextToImage::default()),
        }
    }

    /// Builds every backend from its descriptor; kinds without a descriptor
    /// fall back to the mock.
    pub fn from_descriptors(descs: &[BackendDescriptor]) -> Result<Self, BackendError> {
        let mut b = Self::mock();
        for d in descs {
            d.validate()?;
            if d.mode == BackendMode::Mock {
                match d.kind {
                    BackendKind::Depth => b.depth = Arc::new(MockDepth::new(d.depth_scene)),
                    BackendKind::Inpaint => b.inpaint = Arc::new(MockInpainter::default()),
                    _ => {}
                }
                continue;
            }
            let client = HttpClient::new(d.endpoint.as_deref().unwrap_or_default(), d.timeout, d.kind);
            match d.kind {
                BackendKind::Inpaint => b.inpaint = Arc::new(HttpInpainter::new(client)),
                BackendKind::Chat => b.chat = Arc::new(HttpChat::new(client, d.chat_format, d.model.clone())),
                BackendKind::Vqa => b.vqa = Arc::new(HttpVqa::new(client)),
                BackendKind::SuperRes => b.superres = Arc::new(HttpSuperResolver::new(client)),
                BackendKind::Depth => b.depth = Arc::new(HttpDepth::new(client)),
                BackendKind::TextToImage => b.text2image = Arc::new(HttpTextToImage::new(client)),
            }
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Mock,
    Http,
}

impl FromStr for BackendMode {
    type Err = BackendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendMode::Mock),
            "http" => Ok(BackendMode::Http),
            other => Err(BackendError::Config(format!("unknown backend mode {other:?}"))),
        }
    }
}

/// How to reach one backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub mode: BackendMode,
    pub endpoint: Option<String>,
    pub seed: u64,
    pub timeout: Duration,
    pub chat_format: ChatWireFormat,
    pub model: Option<String>,
    /// Analytic scene for the mock depth estimator.
    pub depth_scene: DepthScene,
}

impl BackendDescriptor {
    pub fn mock(kind: BackendKind) -> Self {
        Self {
            kind,
            mode: BackendMode::Mock,
            endpoint: None,
            seed: 0,
            timeout: Duration::from_secs(120),
            chat_format: ChatWireFormat::Native,
            model: None,
            depth_scene: DepthScene::Constant(2.0),
        }
    }

    pub fn http(kind: BackendKind, endpoint: impl Into<String>) -> Self {
        Self {
            mode: BackendMode::Http,
            endpoint: Some(endpoint.into()),
            ..Self::mock(kind)
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.mode == BackendMode::Http && self.endpoint.as_deref().map_or(true, |e| e.trim().is_empty()) {
            return Err(BackendError::Config(format!("{} backend in http mode needs an endpoint", self.kind)));
        }
        Ok(())
    }
}

/// Short content hash of an image, used to key scripted VQA answers and in
/// run traces.
pub fn image_digest(image: &ImageBuffer) -> String {
    let mut h = Sha256::new();
    h.update((image.width() as u64).to_le_bytes());
    h.update((image.height() as u64).to_le_bytes());
    for v in image.data() {
        h.update(v.to_le_bytes());
    }
    hex_prefix(&h.finalize(), 16)
}

pub fn text_digest(text: &str) -> String {
    hex_prefix(&Sha256::digest(text.as_bytes()), 16)
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n / 2).map(|b| format!("{b:02x}")).collect()
}

/// Copies every unmasked pixel of `input` over `output`. Returns the number
/// of pixels that had to be corrected.
pub fn enforce_unmasked(input: &ImageBuffer, mask: &Mask, output: &mut ImageBuffer) -> usize {
    let mut fixed = 0;
    for y in 0..input.height() {
        for x in 0..input.width() {
            if !mask.get(x, y) {
                let want = input.get(x, y);
                if output.get(x, y) != want {
                    output.set(x, y, want);
                    fixed += 1;
                }
            }
        }
    }
    if fixed > 0 {
        warn!("inpainting changed {fixed} unmasked pixels; restored from the input");
    }
    fixed
}
