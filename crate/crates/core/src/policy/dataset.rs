//! Labeled SegDepth datasets on disk: a directory of PNG images, a
//! `manifest.jsonl` with one line per sample, and a `dataset.json` header.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PolicyError, Result, NUM_CLASSES};
use crate::ir::SegDepthImage;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const META_FILE: &str = "dataset.json";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    Human,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: SegDepthImage,
    pub c_yaw: u8,
    pub c_pitch: u8,
    pub provenance: Provenance,
    pub scenario_id: Option<String>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub file: String,
    pub c_yaw: u8,
    pub c_pitch: u8,
    pub provenance: Provenance,
    pub scenario_id: Option<String>,
    pub step: u64,
}

/// Dataset header with provenance and a per-head class histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub samples: usize,
    pub image_w: u32,
    pub image_h: u32,
    pub yaw_histogram: [usize; NUM_CLASSES],
    pub pitch_histogram: [usize; NUM_CLASSES],
}

impl DatasetMeta {
    pub fn describe(samples: &[LabeledSample], tool_version: &str, config_hash: &str, seed: u64) -> Self {
        let mut yaw = [0; NUM_CLASSES];
        let mut pitch = [0; NUM_CLASSES];
        for s in samples {
            yaw[s.c_yaw as usize] += 1;
            pitch[s.c_pitch as usize] += 1;
        }
        let (w, h) = samples.first().map(|s| s.image.dimensions()).unwrap_or((0, 0));
        Self {
            tool_version: tool_version.into(),
            config_hash: config_hash.into(),
            seed,
            samples: samples.len(),
            image_w: w,
            image_h: h,
            yaw_histogram: yaw,
            pitch_histogram: pitch,
        }
    }
}

/// Writes `samples` into `dir` (created if missing). Image files are named
/// by sample index.
pub fn write_dataset(dir: &Path, samples: &[LabeledSample], meta: &DatasetMeta) -> Result<()> {
    fs::create_dir_all(dir.join(IMAGE_DIR))?;
    let mut manifest = std::io::BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
    for (i, s) in samples.iter().enumerate() {
        if s.c_yaw as usize >= NUM_CLASSES || s.c_pitch as usize >= NUM_CLASSES {
            return Err(PolicyError::Dataset(format!("sample {i} has class out of range")));
        }
        let file = format!("{IMAGE_DIR}/{i:06}.png");
        let png = s.image.to_png().map_err(|e| PolicyError::Dataset(e.to_string()))?;
        fs::write(dir.join(&file), png)?;
        let line = ManifestLine {
            file,
            c_yaw: s.c_yaw,
            c_pitch: s.c_pitch,
            provenance: s.provenance,
            scenario_id: s.scenario_id.clone(),
            step: s.step,
        };
        writeln!(manifest, "{}", serde_json::to_string(&line).expect("manifest line serializes"))?;
    }
    manifest.flush()?;
    let meta_json = serde_json::to_string_pretty(meta).expect("dataset header serializes");
    fs::write(dir.join(META_FILE), meta_json)?;
    Ok(())
}

/// Reads a dataset directory. The header is optional.
pub fn load_dataset(dir: &Path) -> Result<(Vec<LabeledSample>, Option<DatasetMeta>)> {
    let manifest = fs::File::open(dir.join(MANIFEST_FILE))
        .map_err(|e| PolicyError::Dataset(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(manifest).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| PolicyError::Dataset(format!("manifest line {}: {e}", n + 1)))?;
        if m.c_yaw as usize >= NUM_CLASSES || m.c_pitch as usize >= NUM_CLASSES {
            return Err(PolicyError::Dataset(format!("manifest line {}: class out of range", n + 1)));
        }
        let bytes = fs::read(dir.join(&m.file))
            .map_err(|e| PolicyError::Dataset(format!("manifest line {}: {}: {e}", n + 1, m.file)))?;
        let image = SegDepthImage::from_png(&bytes)
            .map_err(|e| PolicyError::Dataset(format!("manifest line {}: {}: {e}", n + 1, m.file)))?;
        samples.push(LabeledSample {
            image,
            c_yaw: m.c_yaw,
            c_pitch: m.c_pitch,
            provenance: m.provenance,
            scenario_id: m.scenario_id,
            step: m.step,
        });
    }
    let meta = match fs::read_to_string(dir.join(META_FILE)) {
        Ok(text) => Some(
            serde_json::from_str(&text).map_err(|e| PolicyError::Dataset(format!("{META_FILE}: {e}")))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok((samples, meta))
}
