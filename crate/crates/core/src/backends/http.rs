use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    enforce_unmasked, BackendError, BackendKind, ChatModel, DepthEstimator, InpaintRequest, Inpainter, SuperResolver,
    TextToImage, VisionQa, MIN_REMOTE_DEPTH,
};
use crate::depth3d::{read_pfm_raw, DepthMap};
use crate::image::ImageBuffer;

/// Response bodies carry base64 PNGs of 2048² images; the default body cap
/// of the HTTP client is too small for those.
const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

/// Wire shape spoken by [`HttpChat`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatWireFormat {
    /// `POST {base}/v1/chat {"prompt"} -> {"text"}`
    #[default]
    Native,
    /// `POST {base}/v1/chat/completions {"messages": [...]}` ->
    /// `{"choices": [{"message": {"content"}}]}`
    ChatCompletions,
}

impl std::str::FromStr for ChatWireFormat {
    type Err = BackendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(Self::Native),
            "chat_completions" => Ok(Self::ChatCompletions),
            other => Err(BackendError::Config(format!("unknown chat format {other:?}"))),
        }
    }
}

/// Blocking JSON-over-HTTP client bound to one backend's base URL.
#[derive(Clone)]
pub struct HttpClient {
    agent: ureq::Agent,
    base: String,
    kind: BackendKind,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("base", &self.base).field("kind", &self.kind).finish()
    }
}

impl HttpClient {
    pub fn new(endpoint: &str, timeout: Duration, kind: BackendKind) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base: endpoint.trim_end_matches('/').to_string(),
            kind,
        }
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Posts `body` and returns the decoded JSON response. Transport errors
    /// and 5xx statuses are retriable; 4xx are not. Nothing is retried here.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let kind = self.kind;
        let url = self.url(path);
        let mut resp = self.agent.post(&url).send_json(body).map_err(|e| BackendError::Transport {
            kind,
            message: format!("POST {url}: {e}"),
            retriable: true,
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_string()
            .map_err(|e| BackendError::Transport {
                kind,
                message: format!("reading response from {url}: {e}"),
                retriable: true,
            })?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError::Transport {
                kind,
                message: format!("POST {url} returned HTTP {status}: {snippet}"),
                retriable: status >= 500,
            });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed {
            kind,
            message: format!("response is not JSON: {e}"),
        })
    }

    fn malformed(&self, message: impl Into<String>) -> BackendError {
        BackendError::Malformed {
            kind: self.kind,
            message: message.into(),
        }
    }

    fn field_str<'a>(&self, v: &'a Value, name: &str) -> Result<&'a str, BackendError> {
        v.get(name)
            .and_then(Value::as_str)
            .ok_or_else(|| self.malformed(format!("missing string field {name:?}")))
    }

    fn encode_image(&self, img: &ImageBuffer) -> Result<String, BackendError> {
        let png = img.to_png_bytes().map_err(|e| BackendError::InvalidRequest {
            kind: self.kind,
            message: e.to_string(),
        })?;
        Ok(B64.encode(png))
    }

    fn decode_image(&self, v: &Value, name: &str) -> Result<ImageBuffer, BackendError> {
        let bytes = B64
            .decode(self.field_str(v, name)?)
            .map_err(|e| self.malformed(format!("field {name:?} is not base64: {e}")))?;
        ImageBuffer::from_png_bytes(&bytes).map_err(|e| self.malformed(format!("field {name:?}: {e}")))
    }
}

pub struct HttpInpainter {
    client: HttpClient,
}

impl HttpInpainter {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl Inpainter for HttpInpainter {
    fn inpaint(&self, req: &InpaintRequest<'_>) -> Result<ImageBuffer, BackendError> {
        let c = &self.client;
        let mask_png = req.mask.to_png_bytes().map_err(|e| BackendError::InvalidRequest {
            kind: c.kind,
            message: e.to_string(),
        })?;
        let body = json!({
            "image": c.encode_image(req.image)?,
            "mask": B64.encode(mask_png),
            "prompt": req.prompt,
            "negative_prompt": req.negative_prompt,
            "seed": req.seed,
        });
        let resp = c.post_json("/v1/inpaint", &body)?;
        let mut out = c.decode_image(&resp, "image")?;
        if out.width() != req.image.width() || out.height() != req.image.height() {
            return Err(c.malformed(format!(
                "inpainted image is {}x{}, expected {}x{}",
                out.width(),
                out.height(),
                req.image.width(),
                req.image.height()
            )));
        }
        enforce_unmasked(req.image, req.mask, &mut out);
        Ok(out)
    }
}

pub struct HttpChat {
    client: HttpClient,
    format: ChatWireFormat,
    model: Option<String>,
}

impl HttpChat {
    pub fn new(client: HttpClient, format: ChatWireFormat, model: Option<String>) -> Self {
        Self { client, format, model }
    }
}

impl ChatModel for HttpChat {
    fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        let c = &self.client;
        match self.format {
            ChatWireFormat::Native => {
                let resp = c.post_json("/v1/chat", &json!({ "prompt": prompt }))?;
                Ok(c.field_str(&resp, "text")?.to_string())
            }
            ChatWireFormat::ChatCompletions => {
                let mut body = json!({ "messages": [{ "role": "user", "content": prompt }] });
                if let Some(m) = &self.model {
                    body["model"] = Value::String(m.clone());
                }
                let resp = c.post_json("/v1/chat/completions", &body)?;
                resp.pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| c.malformed("missing choices[0].message.content"))
            }
        }
    }
}

pub struct HttpVqa {
    client: HttpClient,
}

impl HttpVqa {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl VisionQa for HttpVqa {
    fn vqa(&self, image: &ImageBuffer, question: &str) -> Result<String, BackendError> {
        let c = &self.client;
        let resp = c.post_json("/v1/vqa", &json!({ "image": c.encode_image(image)?, "question": question }))?;
        Ok(c.field_str(&resp, "answer")?.to_string())
    }
}

pub struct HttpSuperResolver {
    client: HttpClient,
}

impl HttpSuperResolver {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl SuperResolver for HttpSuperResolver {
    fn superresolve(&self, image: &ImageBuffer, factor: usize) -> Result<ImageBuffer, BackendError> {
        let c = &self.client;
        let resp = c.post_json("/v1/superres", &json!({ "image": c.encode_image(image)?, "factor": factor }))?;
        let out = c.decode_image(&resp, "image")?;
        if out.width() != factor * image.width() || out.height() != factor * image.height() {
            return Err(c.malformed(format!(
                "super-resolved image is {}x{}, expected {}x{}",
                out.width(),
                out.height(),
                factor * image.width(),
                factor * image.height()
            )));
        }
        Ok(out)
    }
}

pub struct HttpDepth {
    client: HttpClient,
}

impl HttpDepth {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl DepthEstimator for HttpDepth {
    fn estimate_depth(&self, image: &ImageBuffer) -> Result<DepthMap, BackendError> {
        let c = &self.client;
        let resp = c.post_json("/v1/depth", &json!({ "image": c.encode_image(image)? }))?;
        let bytes = B64
            .decode(c.field_str(&resp, "depth")?)
            .map_err(|e| c.malformed(format!("depth is not base64: {e}")))?;
        let (w, h, data) = read_pfm_raw(&bytes).map_err(|e| c.malformed(e.to_string()))?;
        let (map, clamped) =
            DepthMap::clamped(w, h, data, MIN_REMOTE_DEPTH).map_err(|e| c.malformed(e.to_string()))?;
        if clamped > 0 {
            warn!("depth backend returned {clamped} non-positive or non-finite values; clamped to {MIN_REMOTE_DEPTH}");
        }
        Ok(map)
    }
}

pub struct HttpTextToImage {
    client: HttpClient,
}

impl HttpTextToImage {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl TextToImage for HttpTextToImage {
    fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageBuffer, BackendError> {
        let c = &self.client;
        let resp = c.post_json("/v1/text2image", &json!({ "prompt": prompt, "seed": seed }))?;
        c.decode_image(&resp, "image")
    }
}
