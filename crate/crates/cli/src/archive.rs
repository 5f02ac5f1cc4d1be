//! Directory archives of track-pair samples.
//!
//! `samples.jsonl` lists one record per sample. Each side's crops are
//! stacked top to bottom into one PNG, and the head map is stored as raw
//! little-endian f64 values so that it round-trips exactly.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::RgbImage;
use laeo::headmap::HeadMap;
use laeo::types::CROP_SIZE;
use laeo::{BoundingBox, GeometryTuple, PairLabel, TrackPairSample};
use serde::{Deserialize, Serialize};

use crate::jsonl::{read_jsonl, write_jsonl};

pub const INDEX: &str = "samples.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: usize,
    pub label: PairLabel,
    pub k: usize,
    pub left_box: BoundingBox,
    pub right_box: BoundingBox,
    pub geometry: GeometryTuple,
    pub left: String,
    pub right: String,
    pub head_map: String,
}

fn stack(crops: &[RgbImage]) -> RgbImage {
    let mut out = RgbImage::new(CROP_SIZE, CROP_SIZE * crops.len() as u32);
    for (i, c) in crops.iter().enumerate() {
        image::imageops::replace(&mut out, c, 0, i64::from(CROP_SIZE) * i as i64);
    }
    out
}

fn unstack(img: &RgbImage, k: usize) -> Result<Vec<RgbImage>> {
    if img.dimensions() != (CROP_SIZE, CROP_SIZE * k as u32) {
        bail!("crop strip is {}x{}, expected {CROP_SIZE}x{}", img.width(), img.height(), CROP_SIZE * k as u32);
    }
    Ok((0..k as u32)
        .map(|i| image::imageops::crop_imm(img, 0, i * CROP_SIZE, CROP_SIZE, CROP_SIZE).to_image())
        .collect())
}

/// Writes `samples` into `dir`, creating it if needed.
pub fn write_archive(dir: &Path, samples: &[TrackPairSample]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut index = Vec::with_capacity(samples.len());
    for (id, s) in samples.iter().enumerate() {
        s.validate()?;
        let rec = SampleRecord {
            id,
            label: s.label,
            k: s.k(),
            left_box: s.left_box,
            right_box: s.right_box,
            geometry: s.geometry,
            left: format!("{id:06}_left.png"),
            right: format!("{id:06}_right.png"),
            head_map: format!("{id:06}_map.f64"),
        };
        stack(&s.left_crops).save(dir.join(&rec.left))?;
        stack(&s.right_crops).save(dir.join(&rec.right))?;
        let bytes: Vec<u8> = s.head_map.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&rec.head_map), bytes)?;
        index.push(rec);
    }
    write_jsonl(&dir.join(INDEX), &index)
}

pub fn read_archive(dir: &Path) -> Result<Vec<TrackPairSample>> {
    let index: Vec<SampleRecord> = read_jsonl(&dir.join(INDEX))?;
    index
        .into_iter()
        .map(|r| {
            let load = |name: &str| -> Result<Vec<RgbImage>> {
                let img = image::open(dir.join(name)).with_context(|| format!("reading {name}"))?;
                unstack(&img.to_rgb8(), r.k).with_context(|| format!("sample {}", r.id))
            };
            let raw = fs::read(dir.join(&r.head_map)).with_context(|| format!("reading {}", r.head_map))?;
            if raw.len() != HeadMap::LEN * 8 {
                bail!("sample {}: head map holds {} bytes, expected {}", r.id, raw.len(), HeadMap::LEN * 8);
            }
            let map = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let s = TrackPairSample {
                left_crops: load(&r.left)?,
                right_crops: load(&r.right)?,
                head_map: HeadMap::from_vec(map)?,
                geometry: r.geometry,
                label: r.label,
                left_box: r.left_box,
                right_box: r.right_box,
            };
            s.validate()?;
            Ok(s)
        })
        .collect()
}
