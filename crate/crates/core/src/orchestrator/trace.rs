use std::io::{BufRead, Write};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{
    image_digest, text_digest, BackendError, BackendKind, Backends, ChatModel, InpaintRequest, VisionQa,
};
use crate::image::ImageBuffer;

/// One backend call made by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: usize,
    pub kind: BackendKind,
    /// 1-based view index for per-view calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<usize>,
    /// 0-based attempt within the view's inpainting loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    /// Prompt or question text; empty for image-only calls.
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Text responses are kept verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    pub response_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub duration_us: u64,
}

impl TraceEvent {
    /// Copy with the wall-clock duration zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> TraceEvent {
        TraceEvent {
            duration_us: 0,
            ..self.clone()
        }
    }
}

pub fn write_trace_jsonl(events: &[TraceEvent], mut out: impl Write) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_trace_jsonl(input: impl BufRead) -> std::io::Result<Vec<TraceEvent>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(std::io::Error::other))
        .collect()
}

/// Wraps a backend set and records every call. Calls are serialized by the
/// caller; the locks only make the wrapper usable as a trait object.
pub(crate) struct Recorder<'a> {
    backends: &'a Backends,
    events: Mutex<Vec<TraceEvent>>,
    view: Mutex<Option<usize>>,
}

struct Pending {
    kind: BackendKind,
    attempt: Option<u32>,
    prompt: String,
    negative: Option<String>,
    seed: Option<u64>,
}

impl Pending {
    fn new(kind: BackendKind, prompt: &str) -> Self {
        Self {
            kind,
            attempt: None,
            prompt: prompt.to_string(),
            negative: None,
            seed: None,
        }
    }
}

fn text(s: &String) -> (Option<String>, String) {
    (Some(s.clone()), text_digest(s))
}

fn image(img: &ImageBuffer) -> (Option<String>, String) {
    (None, image_digest(img))
}

impl<'a> Recorder<'a> {
    pub fn new(backends: &'a Backends) -> Self {
        Self {
            backends,
            events: Mutex::new(Vec::new()),
            view: Mutex::new(None),
        }
    }

    /// Tags subsequent calls with a 1-based view index.
    pub fn set_view(&self, view: Option<usize>) {
        *self.view.lock().unwrap() = view;
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap().clone()
    }

    fn record<T>(
        &self,
        p: Pending,
        call: impl FnOnce(&Backends) -> Result<T, BackendError>,
        describe: impl FnOnce(&T) -> (Option<String>, String),
    ) -> Result<T, BackendError> {
        let start = Instant::now();
        let result = call(self.backends);
        let duration_us = start.elapsed().as_micros() as u64;
        let (response, response_digest, error) = match &result {
            Ok(v) => {
                let (r, d) = describe(v);
                (r, d, None)
            }
            Err(e) => (None, String::new(), Some(e.to_string())),
        };
        let view = *self.view.lock().unwrap();
        let mut events = self.events.lock().unwrap();
        let seq = events.len();
        events.push(TraceEvent {
            seq,
            kind: p.kind,
            view,
            attempt: p.attempt,
            prompt: p.prompt,
            negative: p.negative,
            seed: p.seed,
            response,
            response_digest,
            error,
            duration_us,
        });
        result
    }

    pub fn inpaint(&self, attempt: u32, req: &InpaintRequest<'_>) -> Result<ImageBuffer, BackendError> {
        let p = Pending {
            attempt: Some(attempt),
            negative: Some(req.negative_prompt.to_string()),
            seed: Some(req.seed),
            ..Pending::new(BackendKind::Inpaint, req.prompt)
        };
        self.record(p, |b| b.inpaint.inpaint(req), image)
    }

    pub fn superresolve(&self, img: &ImageBuffer, factor: usize) -> Result<ImageBuffer, BackendError> {
        self.record(Pending::new(BackendKind::SuperRes, ""), |b| b.superres.superresolve(img, factor), image)
    }

    pub fn text_to_image(&self, prompt: &str, seed: u64) -> Result<ImageBuffer, BackendError> {
        let p = Pending {
            seed: Some(seed),
            ..Pending::new(BackendKind::TextToImage, prompt)
        };
        self.record(p, |b| b.text2image.text_to_image(prompt, seed), image)
    }
}

impl ChatModel for Recorder<'_> {
    fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        self.record(Pending::new(BackendKind::Chat, prompt), |b| b.chat.chat(prompt), text)
    }
}

impl VisionQa for Recorder<'_> {
    fn vqa(&self, img: &ImageBuffer, question: &str) -> Result<String, BackendError> {
        self.record(Pending::new(BackendKind::Vqa, question), |b| b.vqa.vqa(img, question), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let events = vec![
            TraceEvent {
                seq: 0,
                kind: BackendKind::Chat,
                view: None,
                attempt: None,
                prompt: "hello \"world\"\nline two".into(),
                negative: None,
                seed: None,
                response: Some("ok".into()),
                response_digest: text_digest("ok"),
                error: None,
                duration_us: 12,
            },
            TraceEvent {
                seq: 1,
                kind: BackendKind::Inpaint,
                view: Some(2),
                attempt: Some(0),
                prompt: "p".into(),
                negative: Some(String::new()),
                seed: Some(7),
                response: None,
                response_digest: "abcd".into(),
                error: None,
                duration_us: 5,
            },
        ];
        let mut buf = Vec::new();
        write_trace_jsonl(&events, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(read_trace_jsonl(buf.as_slice()).unwrap(), events);
    }

    #[test]
    fn failed_calls_are_recorded() {
        let mut b = Backends::mock();
        b.chat = std::sync::Arc::new(crate::backends::ScriptedChat::new());
        let r = Recorder::new(&b);
        r.set_view(Some(3));
        assert!(r.chat("anything").is_err());
        let events = r.events();
        assert_eq!(events.len(), 1);
        assert!(events[0].error.is_some());
        assert_eq!(events[0].view, Some(3));
    }
}
