//! Self-describing run directories.
//!
//! ```text
//! config.toml        resolved settings
//! input.png
//! descriptions.json
//! views.json         one entry per view
//! view_01.png, view_01_sr.png, ...
//! panorama.png
//! trace.jsonl
//! ```

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use panoweave::geometry::{intrinsics_from_fov, rotation_y};
use panoweave::orchestrator::write_trace_jsonl;
use panoweave::{ImageBuffer, PanoramaResult, SceneDescriptions, ViewRecord};

use crate::config::{EnvLookup, FileConfig, Settings};
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const DESCRIPTIONS_FILE: &str = "descriptions.json";
pub const VIEWS_FILE: &str = "views.json";
pub const PANORAMA_FILE: &str = "panorama.png";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const INPUT_FILE: &str = "input.png";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    /// 1-based generation order.
    pub index: usize,
    pub yaw_deg: f64,
    pub fov_deg: f64,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr_image: Option<String>,
    pub inpaint_calls: u32,
}

/// A prior run, loaded back for offline 3D and video work.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub settings: Settings,
    pub descriptions: SceneDescriptions,
    pub views: Vec<ViewRecord>,
    pub panorama: ImageBuffer,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn save_png(img: &ImageBuffer, path: &Path) -> Result<(), CliError> {
    img.save_png(path).map_err(|e| io_err(path, e))
}

pub fn load_png(path: &Path) -> Result<ImageBuffer, CliError> {
    if !path.exists() {
        return Err(io_err(path, "file not found"));
    }
    ImageBuffer::load_png(path).map_err(|e| io_err(path, e))
}

pub fn write_trace(path: &Path, events: &[panoweave::orchestrator::TraceEvent]) -> Result<(), CliError> {
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    write_trace_jsonl(events, std::io::BufWriter::new(f)).map_err(|e| io_err(path, e))
}

pub fn write_run_dir(
    dir: &Path,
    settings: &Settings,
    input: &ImageBuffer,
    result: &PanoramaResult,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join(CONFIG_FILE), settings.to_file_config().to_toml())?;
    save_png(input, &dir.join(INPUT_FILE))?;
    let desc = serde_json::to_string_pretty(&result.descriptions).expect("descriptions serialize");
    write_file(&dir.join(DESCRIPTIONS_FILE), desc)?;
    let mut entries = Vec::with_capacity(result.views.len());
    for (i, v) in result.views.iter().enumerate() {
        let image = format!("view_{:02}.png", i + 1);
        save_png(&v.image, &dir.join(&image))?;
        let sr_image = match &v.sr_image {
            Some(sr) => {
                let name = format!("view_{:02}_sr.png", i + 1);
                save_png(sr, &dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        entries.push(ViewEntry {
            index: i + 1,
            yaw_deg: v.rotation.angle_deg(),
            fov_deg: settings.pipeline.schedule.fov_deg,
            image,
            sr_image,
            inpaint_calls: result.inpaint_calls.get(i).copied().unwrap_or(0),
        });
    }
    write_file(
        &dir.join(VIEWS_FILE),
        serde_json::to_string_pretty(&entries).expect("views serialize"),
    )?;
    save_png(&result.panorama, &dir.join(PANORAMA_FILE))?;
    write_trace(&dir.join(TRACE_FILE), &result.trace)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| io_err(path, e))
}

/// Loads a run directory. `config` overrides the run's own snapshot.
pub fn load_run_dir(
    dir: &Path,
    config: Option<&Path>,
    env: EnvLookup<'_>,
    seed_flag: Option<u64>,
) -> Result<LoadedRun, CliError> {
    if !dir.is_dir() {
        return Err(io_err(dir, "run directory not found"));
    }
    let cfg_path: PathBuf = config.map_or_else(|| dir.join(CONFIG_FILE), Path::to_path_buf);
    let settings = Settings::resolve(&FileConfig::load(&cfg_path)?, env, seed_flag)?;
    let descriptions = read_json(&dir.join(DESCRIPTIONS_FILE))?;
    let entries: Vec<ViewEntry> = read_json(&dir.join(VIEWS_FILE))?;
    let mut views = Vec::with_capacity(entries.len());
    for e in &entries {
        let image = load_png(&dir.join(&e.image))?;
        let k = intrinsics_from_fov(e.fov_deg, image.width(), image.height())
            .map_err(|err| io_err(&dir.join(VIEWS_FILE), format!("view {}: {err}", e.index)))?;
        let mut v = ViewRecord::new(image, k, rotation_y(e.yaw_deg));
        if let Some(sr) = &e.sr_image {
            v = v.with_sr(load_png(&dir.join(sr))?);
        }
        if !v.sr_is_consistent() {
            return Err(io_err(&dir.join(VIEWS_FILE), format!("view {}: SR image is not 4x the view", e.index)));
        }
        views.push(v);
    }
    let panorama = load_png(&dir.join(PANORAMA_FILE))?;
    Ok(LoadedRun {
        settings,
        descriptions,
        views,
        panorama,
    })
}
