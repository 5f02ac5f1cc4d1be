//! Access to decoded video frames.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::RgbImage;

pub trait FrameProvider: Sync {
    fn frame(&self, video_id: &str, frame: usize) -> Result<RgbImage>;
}

/// Frames stored as numbered images: `<root>/<video_id>/<frame:06>.png`.
#[derive(Debug, Clone)]
pub struct DirFrameProvider {
    root: PathBuf,
}

impl DirFrameProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, video_id: &str, frame: usize) -> PathBuf {
        frame_path(&self.root, video_id, frame)
    }
}

pub fn frame_path(root: &Path, video_id: &str, frame: usize) -> PathBuf {
    root.join(video_id).join(format!("{frame:06}.png"))
}

impl FrameProvider for DirFrameProvider {
    fn frame(&self, video_id: &str, frame: usize) -> Result<RgbImage> {
        let p = self.path(video_id, frame);
        Ok(image::open(&p)
            .with_context(|| format!("reading frame {}", p.display()))?
            .to_rgb8())
    }
}
