//! Configuration file, environment overrides, and their resolution.
//!
//! Precedence, highest first: command-line flag, environment variable,
//! config file, built-in default.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use panoweave::backends::{BackendMode, ChatWireFormat, DepthScene};
use panoweave::{BackendDescriptor, BackendKind, PipelineConfig, ViewSchedule};

use crate::CliError;

/// Environment lookup, injectable so tests never touch the process env.
pub type EnvLookup<'a> = &'a dyn Fn(&str) -> Option<String>;

pub const SEED_VAR: &str = "PANOWEAVE_SEED";

/// `PANOWEAVE_<KIND>_<FIELD>`, e.g. `PANOWEAVE_CHAT_ENDPOINT`.
pub fn backend_var(kind: BackendKind, field: &str) -> String {
    format!("PANOWEAVE_{}_{}", kind.as_str().to_ascii_uppercase(), field)
}

/// Contents of a TOML config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fov_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_fov_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub view_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sr_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pano_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_retries: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inpaint: Option<BackendSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chat: Option<BackendSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vqa: Option<BackendSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub superres: Option<BackendSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<BackendSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text2image: Option<BackendSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// `mock` or `http`. Defaults to `http` when an endpoint is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    /// Chat only: `native` or `chat_completions`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Chat only: model name sent with chat-completions requests.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Depth only: analytic scene of the mock estimator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<MockScene>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockScene {
    Constant { depth: f64 },
    Plane { distance: f64, fov_deg: f64 },
    Sphere { radius: f64 },
}

impl From<MockScene> for DepthScene {
    fn from(s: MockScene) -> Self {
        match s {
            MockScene::Constant { depth } => DepthScene::Constant(depth),
            MockScene::Plane { distance, fov_deg } => DepthScene::Plane { distance, fov_deg },
            MockScene::Sphere { radius } => DepthScene::Sphere { radius },
        }
    }
}

impl From<DepthScene> for MockScene {
    fn from(s: DepthScene) -> Self {
        match s {
            DepthScene::Constant(depth) => MockScene::Constant { depth },
            DepthScene::Plane { distance, fov_deg } => MockScene::Plane { distance, fov_deg },
            DepthScene::Sphere { radius } => MockScene::Sphere { radius },
        }
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    /// Reads a config file. A missing or unreadable file is a config error.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn section(&self, kind: BackendKind) -> Option<&BackendSection> {
        match kind {
            BackendKind::Inpaint => self.inpaint.as_ref(),
            BackendKind::Chat => self.chat.as_ref(),
            BackendKind::Vqa => self.vqa.as_ref(),
            BackendKind::SuperRes => self.superres.as_ref(),
            BackendKind::Depth => self.depth.as_ref(),
            BackendKind::TextToImage => self.text2image.as_ref(),
        }
    }

    fn section_mut(&mut self, kind: BackendKind) -> &mut Option<BackendSection> {
        match kind {
            BackendKind::Inpaint => &mut self.inpaint,
            BackendKind::Chat => &mut self.chat,
            BackendKind::Vqa => &mut self.vqa,
            BackendKind::SuperRes => &mut self.superres,
            BackendKind::Depth => &mut self.depth,
            BackendKind::TextToImage => &mut self.text2image,
        }
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    /// One descriptor per backend kind, in [`BackendKind::ALL`] order.
    pub backends: Vec<BackendDescriptor>,
}

fn parse_env<T: std::str::FromStr>(env: EnvLookup<'_>, var: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    match env(var) {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| CliError::Config(format!("{var}={v:?}: {e}"))),
    }
}

impl Settings {
    pub fn resolve(file: &FileConfig, env: EnvLookup<'_>, seed_flag: Option<u64>) -> Result<Self, CliError> {
        let d = PipelineConfig::default();
        let seed = match seed_flag {
            Some(s) => s,
            None => parse_env(env, SEED_VAR)?.or(file.seed).unwrap_or(d.seed),
        };
        let pipeline = PipelineConfig {
            schedule: ViewSchedule {
                fov_deg: file.fov_deg.unwrap_or(d.schedule.fov_deg),
                angles_deg: file.schedule.clone().unwrap_or(d.schedule.angles_deg),
                input_fov_deg: file.input_fov_deg.unwrap_or(d.schedule.input_fov_deg),
            },
            max_retries: file.max_retries.unwrap_or(d.max_retries),
            layout_retries: file.layout_retries.unwrap_or(d.layout_retries),
            view_resolution: file.view_resolution.unwrap_or(d.view_resolution),
            sr_resolution: file.sr_resolution.unwrap_or(d.sr_resolution),
            pano_width: file.pano_width.unwrap_or(d.pano_width),
            seed,
        };
        pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let backends = BackendKind::ALL
            .iter()
            .map(|&kind| resolve_backend(kind, file.section(kind), env))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { pipeline, backends })
    }

    pub fn descriptor(&self, kind: BackendKind) -> &BackendDescriptor {
        self.backends.iter().find(|d| d.kind == kind).expect("every kind is resolved")
    }

    /// A config file that resolves back to these settings when no flags or
    /// environment variables are set.
    pub fn to_file_config(&self) -> FileConfig {
        let p = &self.pipeline;
        let mut f = FileConfig {
            fov_deg: Some(p.schedule.fov_deg),
            input_fov_deg: Some(p.schedule.input_fov_deg),
            schedule: Some(p.schedule.angles_deg.clone()),
            view_resolution: Some(p.view_resolution),
            sr_resolution: Some(p.sr_resolution),
            pano_width: Some(p.pano_width),
            max_retries: Some(p.max_retries),
            layout_retries: Some(p.layout_retries),
            seed: Some(p.seed),
            ..FileConfig::default()
        };
        for d in &self.backends {
            let mut s = BackendSection {
                mode: Some(match d.mode {
                    BackendMode::Mock => "mock".into(),
                    BackendMode::Http => "http".into(),
                }),
                endpoint: d.endpoint.clone(),
                timeout_secs: Some(d.timeout.as_secs()),
                ..BackendSection::default()
            };
            match d.kind {
                BackendKind::Chat => {
                    s.format = Some(
                        match d.chat_format {
                            ChatWireFormat::Native => "native",
                            ChatWireFormat::ChatCompletions => "chat_completions",
                        }
                        .into(),
                    );
                    s.model = d.model.clone();
                }
                BackendKind::Depth => s.scene = Some(d.depth_scene.into()),
                _ => {}
            }
            *f.section_mut(d.kind) = Some(s);
        }
        f
    }
}

fn resolve_backend(
    kind: BackendKind,
    section: Option<&BackendSection>,
    env: EnvLookup<'_>,
) -> Result<BackendDescriptor, CliError> {
    let empty = BackendSection::default();
    let s = section.unwrap_or(&empty);
    let endpoint = env(&backend_var(kind, "ENDPOINT")).or_else(|| s.endpoint.clone());
    let mode = match env(&backend_var(kind, "MODE")).or_else(|| s.mode.clone()) {
        Some(m) => m.parse::<BackendMode>().map_err(|e| CliError::Config(e.to_string()))?,
        None if endpoint.is_some() => BackendMode::Http,
        None => BackendMode::Mock,
    };
    let mut d = BackendDescriptor::mock(kind);
    d.mode = mode;
    d.endpoint = endpoint;
    if let Some(t) = parse_env::<u64>(env, &backend_var(kind, "TIMEOUT_SECS"))?.or(s.timeout_secs) {
        if t == 0 {
            return Err(CliError::Config(format!("{kind} timeout must be positive")));
        }
        d.timeout = Duration::from_secs(t);
    }
    if let Some(f) = &s.format {
        if kind != BackendKind::Chat {
            return Err(CliError::Config(format!("`format` only applies to the chat backend, not {kind}")));
        }
        d.chat_format = f.parse().map_err(|e: panoweave::BackendError| CliError::Config(e.to_string()))?;
    }
    d.model = s.model.clone();
    if let Some(scene) = s.scene {
        if kind != BackendKind::Depth {
            return Err(CliError::Config(format!("`scene` only applies to the depth backend, not {kind}")));
        }
        d.depth_scene = scene.into();
    }
    d.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env_of(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults_are_all_mock() {
        let s = Settings::resolve(&FileConfig::default(), &env_of(&[]), None).unwrap();
        assert_eq!(s.pipeline, PipelineConfig::default());
        assert!(s.backends.iter().all(|d| d.mode == BackendMode::Mock));
        assert_eq!(s.backends.len(), 6);
    }

    #[test]
    fn seed_precedence_matrix() {
        for flag in [None, Some(1u64)] {
            for env in [None, Some("2")] {
                for file in [None, Some(3u64)] {
                    let f = FileConfig {
                        seed: file,
                        ..FileConfig::default()
                    };
                    let pairs: Vec<(&str, &str)> = env.map(|v| (SEED_VAR, v)).into_iter().collect();
                    let got = Settings::resolve(&f, &env_of(&pairs), flag).unwrap().pipeline.seed;
                    let want = flag.or(env.map(|v| v.parse().unwrap())).or(file).unwrap_or(0);
                    assert_eq!(got, want, "flag {flag:?} env {env:?} file {file:?}");
                }
            }
        }
    }

    #[test]
    fn endpoint_precedence_matrix() {
        let var = backend_var(BackendKind::Chat, "ENDPOINT");
        for env in [None, Some("http://env")] {
            for file in [None, Some("http://file")] {
                let f = FileConfig {
                    chat: file.map(|e| BackendSection {
                        endpoint: Some(e.into()),
                        ..BackendSection::default()
                    }),
                    ..FileConfig::default()
                };
                let pairs: Vec<(&str, &str)> = env.map(|v| (var.as_str(), v)).into_iter().collect();
                let s = Settings::resolve(&f, &env_of(&pairs), None).unwrap();
                let d = s.descriptor(BackendKind::Chat);
                assert_eq!(d.endpoint.as_deref(), env.or(file));
                let want = if env.or(file).is_some() { BackendMode::Http } else { BackendMode::Mock };
                assert_eq!(d.mode, want);
            }
        }
    }

    #[test]
    fn env_mode_overrides_file_mode() {
        let f = FileConfig::parse("[vqa]\nmode = \"http\"\nendpoint = \"http://x\"\n").unwrap();
        let var = backend_var(BackendKind::Vqa, "MODE");
        let s = Settings::resolve(&f, &env_of(&[(var.as_str(), "mock")]), None).unwrap();
        assert_eq!(s.descriptor(BackendKind::Vqa).mode, BackendMode::Mock);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let bad_seed = env_of(&[(SEED_VAR, "abc")]);
        assert!(matches!(Settings::resolve(&FileConfig::default(), &bad_seed, None), Err(CliError::Config(_))));
        let http_no_endpoint = FileConfig::parse("[inpaint]\nmode = \"http\"\n").unwrap();
        assert!(matches!(
            Settings::resolve(&http_no_endpoint, &env_of(&[]), None),
            Err(CliError::Config(_))
        ));
        let bad_sr = FileConfig::parse("view_resolution = 256\n").unwrap();
        assert!(Settings::resolve(&bad_sr, &env_of(&[]), None).is_err());
        assert!(FileConfig::parse("no_such_key = 1\n").is_err());
        let misplaced = FileConfig::parse("[vqa]\nformat = \"native\"\n").unwrap();
        assert!(Settings::resolve(&misplaced, &env_of(&[]), None).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let f = FileConfig::parse(
            "seed = 9\npano_width = 1024\n[chat]\nendpoint = \"http://c\"\nformat = \"chat_completions\"\n\
             model = \"m\"\n[depth]\nscene = { type = \"plane\", distance = 3.0, fov_deg = 90.0 }\n",
        )
        .unwrap();
        let env = env_of(&[]);
        let s = Settings::resolve(&f, &env, None).unwrap();
        let again = FileConfig::parse(&s.to_file_config().to_toml()).unwrap();
        assert_eq!(Settings::resolve(&again, &env, None).unwrap(), s);
    }
}
