//! On-disk slide datasets.
//!
//! A dataset root holds one directory per slide (read in sorted name order).
//! Each slide directory contains:
//!
//! | file             | content                                   |
//! |------------------|-------------------------------------------|
//! | `meta.json`      | ids, dimensions, gene names, image layout |
//! | `expression.f32` | `[spot_num × gene_num]` raw counts        |
//! | `coords.u32`     | `[spot_num × 2]` `(x, y)`                 |
//! | `patches.f32`    | `[spot_num × c × h × w]` pixels in `[0,1]`|
//! | `features.f32`   | `[spot_num × feat_dim]` (instead of patches) |
//! | `labels.u16`     | `[spot_num]` domain labels (optional)     |
//!
//! All binaries are little-endian and row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stexp_core::data::{PatchShape, Slide, SlideImage};
use stexp_core::Tensor;

use crate::{Error, Result};

pub const META: &str = "meta.json";
pub const EXPRESSION: &str = "expression.f32";
pub const COORDS: &str = "coords.u32";
pub const PATCHES: &str = "patches.f32";
pub const FEATURES: &str = "features.f32";
pub const LABELS: &str = "labels.u16";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchMeta {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideMeta {
    pub slide_id: String,
    pub spot_num: usize,
    pub gene_num: usize,
    pub gene_names: Vec<String>,
    pub coord_max: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feat_dim: Option<usize>,
    pub has_labels: bool,
}

pub fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_u32(path: &Path, data: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_u16(path: &Path, data: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_words<const N: usize>(path: &Path, field: &str, expected: usize) -> Result<Vec<[u8; N]>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * N {
        return Err(Error::format(
            path,
            field,
            format!(
                "{} bytes, expected {} ({expected} values)",
                bytes.len(),
                expected * N
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(N)
        .map(|c| c.try_into().expect("chunk size"))
        .collect())
}

pub fn read_f32(path: &Path, field: &str, expected: usize) -> Result<Vec<f32>> {
    Ok(read_words::<4>(path, field, expected)?
        .into_iter()
        .map(f32::from_le_bytes)
        .collect())
}

pub fn read_u32(path: &Path, field: &str, expected: usize) -> Result<Vec<u32>> {
    Ok(read_words::<4>(path, field, expected)?
        .into_iter()
        .map(u32::from_le_bytes)
        .collect())
}

pub fn read_u16(path: &Path, field: &str, expected: usize) -> Result<Vec<u16>> {
    Ok(read_words::<2>(path, field, expected)?
        .into_iter()
        .map(u16::from_le_bytes)
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn slide_meta(slide: &Slide) -> SlideMeta {
    SlideMeta {
        slide_id: slide.slide_id.clone(),
        spot_num: slide.spot_num(),
        gene_num: slide.gene_num(),
        gene_names: slide.gene_names.clone(),
        coord_max: slide.coord_max,
        patch: slide.image.patch_shape().map(|p| PatchMeta {
            c: p.c,
            h: p.h,
            w: p.w,
        }),
        feat_dim: slide.image.feat_dim(),
        has_labels: slide.labels.is_some(),
    }
}

/// Writes one slide into `dir` (created if missing).
pub fn write_slide(dir: &Path, slide: &Slide) -> Result<()> {
    slide.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(META), &slide_meta(slide))?;
    write_f32(&dir.join(EXPRESSION), slide.expression.data())?;
    let coords: Vec<u32> = slide.coords.iter().flatten().copied().collect();
    write_u32(&dir.join(COORDS), &coords)?;
    let image = match slide.image {
        SlideImage::Patches(_) => PATCHES,
        SlideImage::Features(_) => FEATURES,
    };
    write_f32(&dir.join(image), slide.image.tensor().data())?;
    if let Some(labels) = &slide.labels {
        write_u16(&dir.join(LABELS), labels)?;
    }
    Ok(())
}

/// Reads and validates one slide directory; errors name the offending file
/// or field.
pub fn read_slide(dir: &Path) -> Result<Slide> {
    let meta_path = dir.join(META);
    let meta: SlideMeta = read_json(&meta_path)?;
    if meta.gene_names.len() != meta.gene_num {
        return Err(Error::format(
            &meta_path,
            "gene_names",
            format!(
                "{} names for gene_num {}",
                meta.gene_names.len(),
                meta.gene_num
            ),
        ));
    }
    let (s, g) = (meta.spot_num, meta.gene_num);
    if s == 0 || g == 0 {
        return Err(Error::format(
            &meta_path,
            "spot_num",
            "slide has no spots or genes",
        ));
    }
    let expression = read_f32(&dir.join(EXPRESSION), "expression", s * g)?;
    let raw_coords = read_u32(&dir.join(COORDS), "coords", s * 2)?;
    let coords: Vec<[u32; 2]> = raw_coords.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let image = match (meta.patch, meta.feat_dim) {
        (Some(p), None) => {
            let data = read_f32(&dir.join(PATCHES), "patches", s * p.c * p.h * p.w)?;
            SlideImage::Patches(Tensor::new(&[s, p.c, p.h, p.w], data)?)
        }
        (None, Some(f)) => {
            let data = read_f32(&dir.join(FEATURES), "features", s * f)?;
            SlideImage::Features(Tensor::new(&[s, f], data)?)
        }
        _ => {
            return Err(Error::format(
                &meta_path,
                "patch",
                "exactly one of `patch` and `feat_dim` must be present",
            ))
        }
    };
    let labels = if meta.has_labels {
        Some(read_u16(&dir.join(LABELS), "labels", s)?)
    } else {
        None
    };
    let slide = Slide {
        slide_id: meta.slide_id,
        gene_names: meta.gene_names,
        expression: Tensor::new(&[s, g], expression)?,
        coords,
        coord_max: meta.coord_max,
        image,
        labels,
    };
    slide.validate()?;
    Ok(slide)
}

/// Slide directory name for an id.
pub fn slide_dir(root: &Path, slide_id: &str) -> PathBuf {
    root.join(slide_id)
}

pub fn write_dataset(root: &Path, slides: &[Slide]) -> Result<()> {
    for s in slides {
        write_slide(&slide_dir(root, &s.slide_id), s)?;
    }
    Ok(())
}

/// Reads every subdirectory of `root` that holds a `meta.json`, in sorted
/// name order.
pub fn read_dataset(root: &Path) -> Result<Vec<Slide>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(META).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, "dataset", "no slide directories found"));
    }
    let slides = dirs
        .iter()
        .map(|d| read_slide(d))
        .collect::<Result<Vec<_>>>()?;
    for pair in slides.windows(2) {
        if pair[0].gene_names != pair[1].gene_names {
            return Err(Error::format(
                slide_dir(root, &pair[1].slide_id).join(META),
                "gene_names",
                format!("differ from slide {}", pair[0].slide_id),
            ));
        }
    }
    Ok(slides)
}

impl From<PatchMeta> for PatchShape {
    fn from(p: PatchMeta) -> Self {
        PatchShape {
            c: p.c,
            h: p.h,
            w: p.w,
        }
    }
}
