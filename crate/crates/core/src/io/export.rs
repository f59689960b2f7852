use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cloud::{parse_point_cloud, write_point_cloud, PointCloud};
use super::ply::write_ply;
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    /// Binary container.
    #[default]
    Bin,
    Ply,
}

impl FrameFormat {
    fn extension(self) -> &'static str {
        match self {
            FrameFormat::Bin => "bin",
            FrameFormat::Ply => "ply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameManifest {
    pub count: usize,
    pub frame_dt: f64,
    pub files: Vec<String>,
}

fn frame_name(i: usize, count: usize, format: FrameFormat) -> String {
    let width = count.saturating_sub(1).to_string().len().max(3);
    format!("frame_{i:0width$}.{}", format.extension())
}

/// Writes one file per frame (`frame_000.bin`, …) plus `manifest.toml`.
pub fn export_frames(frames: &[PointCloud], frame_dt: f64, dir: impl AsRef<Path>, format: FrameFormat) -> Result<FrameManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<String> = (0..frames.len()).map(|i| frame_name(i, frames.len(), format)).collect();
    for (frame, name) in frames.iter().zip(&files) {
        let path = dir.join(name);
        match format {
            FrameFormat::Bin => write_point_cloud(&path, frame)?,
            FrameFormat::Ply => write_ply(&path, frame)?,
        }
    }
    let manifest = FrameManifest { count: frames.len(), frame_dt, files };
    let path = dir.join(MANIFEST);
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<FrameManifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: FrameManifest = toml::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))?;
    if m.files.len() != m.count {
        return Err(Error::parse(&path, format!("count is {} but {} files are listed", m.count, m.files.len())));
    }
    Ok(m)
}

/// Re-imports every frame listed in the manifest.
pub fn import_frames(dir: impl AsRef<Path>) -> Result<(FrameManifest, Vec<PointCloud>)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let frames = m.files.iter().map(|f| parse_point_cloud(dir.join(f))).collect::<Result<_>>()?;
    Ok((m, frames))
}
