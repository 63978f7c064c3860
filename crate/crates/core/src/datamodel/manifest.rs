//! Versioned dataset manifests.
//!
//! A manifest directory holds `manifest.json` plus one sub-directory per class
//! containing 16-bit PNG files. Records reference images by relative path.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::sample::{ImageSample, LabeledDataset, Provenance, Split};
use super::tensor::{dequantize, quantize, ImageShape, ImageTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MANIFEST_FORMAT: &str = "augsynth-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageShape>,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub label: usize,
    pub split: Split,
    pub provenance: Provenance,
}

/// Filesystem-safe directory name for a class.
pub fn class_dir_name(k: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{k:03}_{clean}")
}

fn safe_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn write_png<S: Scalar>(path: &Path, img: &ImageTensor<S>) -> Result<()> {
    let shape = img.shape();
    let (w, h) = (shape.width as u32, shape.height as u32);
    let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v)).collect();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let res = match shape.channels {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
            .ok_or_else(|| Error::Shape("raster buffer size".into()))?
            .save_with_format(path, ImageFormat::Png),
        3 => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw)
            .ok_or_else(|| Error::Shape("raster buffer size".into()))?
            .save_with_format(path, ImageFormat::Png),
        c => return Err(Error::Shape(format!("cannot store {c}-channel images"))),
    };
    res.map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn read_png<S: Scalar>(path: &Path) -> Result<ImageTensor<S>> {
    let dynimg = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, raw) = if dynimg.color().channel_count() == 1 {
        (1, dynimg.into_luma16().into_raw())
    } else {
        (3, dynimg.into_rgb16().into_raw())
    };
    ImageTensor::new(
        ImageShape::new(h, w, channels),
        raw.into_iter().map(dequantize).collect(),
    )
}

/// Write `ds` under `dir`: images first, then the index written atomically.
pub fn save_manifest<S: Scalar>(ds: &LabeledDataset<S>, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        let rel = format!(
            "{}/{}.png",
            class_dir_name(s.label, &ds.class_names()[s.label]),
            safe_file_stem(&s.id)
        );
        write_png(&dir.join(&rel), &s.pixels)?;
        records.push(ManifestRecord {
            id: s.id.clone(),
            path: rel,
            label: s.label,
            split: s.split,
            provenance: s.provenance.clone(),
        });
    }
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        class_names: ds.class_names().to_vec(),
        image: ds.image_shape(),
        records,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json_atomic(&path, &header)?;
    Ok(path)
}

/// Load a manifest from a directory or a direct path to `manifest.json`.
pub fn load_manifest<S: Scalar>(path: &Path) -> Result<LabeledDataset<S>> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let root = file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let header: ManifestHeader =
        serde_json::from_str(&text).map_err(|e| Error::manifest(&file, "header", e))?;
    if header.format != MANIFEST_FORMAT {
        return Err(Error::manifest(&file, "header", format!("unknown format {:?}", header.format)));
    }
    if header.version != MANIFEST_VERSION {
        return Err(Error::manifest(
            &file,
            "header",
            format!("unsupported version {}", header.version),
        ));
    }
    let k = header.class_names.len();
    let mut samples = Vec::with_capacity(header.records.len());
    for (i, rec) in header.records.into_iter().enumerate() {
        let name = format!("#{i} ({})", rec.id);
        if rec.label >= k {
            return Err(Error::manifest(
                &file,
                &name,
                format!("label {} is not below class count {k}", rec.label),
            ));
        }
        rec.provenance.validate().map_err(|r| Error::manifest(&file, &name, r))?;
        let pixels: ImageTensor<S> =
            read_png(&root.join(&rec.path)).map_err(|e| Error::manifest(&file, &name, e))?;
        if let Some(shape) = header.image {
            if pixels.shape() != shape {
                return Err(Error::manifest(
                    &file,
                    &name,
                    format!("image is {} but the manifest declares {shape}", pixels.shape()),
                ));
            }
        }
        samples.push(ImageSample {
            id: rec.id,
            pixels,
            label: rec.label,
            split: rec.split,
            provenance: rec.provenance,
        });
    }
    LabeledDataset::new(header.class_names, samples)
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialising {}: {e}", path.display())))?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
