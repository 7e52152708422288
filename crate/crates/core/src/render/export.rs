//! PNG export of bounding-box images.
//!
//! * semantic map: 8-bit indexed PNG whose palette is the category table
//! * depth map: 16-bit grayscale, `round(normalized_depth * 65535)`
//! * sidecar JSON with near/far, pose and intrinsics
//! * preview: RGB image of category colors darkened with depth

use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{normalize_depth, BoundingBoxImage, RenderConfig};
use crate::camera::{Intrinsics, Pose};
use crate::scene::Category;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unexpected png layout: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExportError {
    pub fn code(&self) -> &'static str {
        match self {
            ExportError::Encode(_) | ExportError::Decode(_) | ExportError::Format(_) => "PNG_ERROR",
            ExportError::Io { .. } => "IO_ERROR",
            ExportError::Json(_) => "MALFORMED_JSON",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
    pub depth_kind: String,
    pub pose: crate::camera::PoseRecord,
    pub intrinsics: Intrinsics,
}

impl Sidecar {
    pub fn new(bbi: &BoundingBoxImage, cfg: &RenderConfig, pose: &Pose, intr: &Intrinsics) -> Self {
        Sidecar {
            frame_id: bbi.frame_id.clone(),
            width: bbi.width,
            height: bbi.height,
            near: cfg.near,
            far: cfg.far,
            depth_kind: "ray_distance".into(),
            pose: crate::camera::PoseRecord::from(*pose),
            intrinsics: *intr,
        }
    }
}

fn palette(categories: &[Category]) -> Vec<u8> {
    let n = categories.iter().map(|c| c.id as usize + 1).max().unwrap_or(1).min(256);
    let mut plte = vec![0u8; n * 3];
    for c in categories {
        let i = c.id as usize;
        if i < n {
            plte[i * 3..i * 3 + 3].copy_from_slice(&c.color);
        }
    }
    plte
}

pub fn encode_semantic_png(bbi: &BoundingBoxImage, categories: &[Category]) -> Result<Vec<u8>, ExportError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, bbi.width, bbi.height);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        let mut plte = palette(categories);
        let max_id = bbi.semantic.iter().copied().max().unwrap_or(0) as usize;
        if plte.len() / 3 <= max_id {
            plte.resize((max_id + 1) * 3, 0);
        }
        enc.set_palette(plte);
        let mut w = enc.write_header()?;
        w.write_image_data(&bbi.semantic)?;
    }
    Ok(out)
}

pub fn encode_depth_png(bbi: &BoundingBoxImage, cfg: &RenderConfig) -> Result<Vec<u8>, ExportError> {
    let norm = normalize_depth(bbi, cfg);
    let mut data = Vec::with_capacity(norm.len() * 2);
    for v in norm {
        data.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, bbi.width, bbi.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header()?;
        w.write_image_data(&data)?;
    }
    Ok(out)
}

/// RGB preview: category color scaled by `1 - 0.6 * normalized depth`.
pub fn encode_preview_png(
    bbi: &BoundingBoxImage,
    categories: &[Category],
    cfg: &RenderConfig,
) -> Result<Vec<u8>, ExportError> {
    let plte = palette(categories);
    let norm = normalize_depth(bbi, cfg);
    let mut rgb = Vec::with_capacity(bbi.len() * 3);
    for (&s, &d) in bbi.semantic.iter().zip(&norm) {
        let i = s as usize * 3;
        let shade = 1.0 - 0.6 * d;
        for k in 0..3 {
            let c = plte.get(i + k).copied().unwrap_or(0) as f64;
            rgb.push((c * shade).round() as u8);
        }
    }
    encode_rgb_png(bbi.width, bbi.height, &rgb)
}

pub fn encode_rgb_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>, ExportError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(rgb)?;
    }
    Ok(out)
}

pub struct DecodedPng {
    pub width: u32,
    pub height: u32,
    pub color: png::ColorType,
    pub depth: png::BitDepth,
    pub palette: Option<Vec<u8>>,
    pub data: Vec<u8>,
}

/// Decodes without palette expansion or bit-depth conversion.
pub fn decode_png(bytes: &[u8]) -> Result<DecodedPng, ExportError> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ExportError::Format("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let palette = reader.info().palette.as_ref().map(|p| p.to_vec());
    Ok(DecodedPng {
        width: info.width,
        height: info.height,
        color: info.color_type,
        depth: info.bit_depth,
        palette,
        data: buf,
    })
}

pub fn decode_semantic_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), ExportError> {
    let d = decode_png(bytes)?;
    if d.color != png::ColorType::Indexed || d.depth != png::BitDepth::Eight {
        return Err(ExportError::Format(format!(
            "expected 8-bit indexed, got {:?}/{:?}",
            d.color, d.depth
        )));
    }
    Ok((d.width, d.height, d.data))
}

/// Returns the raw 16-bit samples.
pub fn decode_depth_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), ExportError> {
    let d = decode_png(bytes)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Sixteen {
        return Err(ExportError::Format(format!(
            "expected 16-bit gray, got {:?}/{:?}",
            d.color, d.depth
        )));
    }
    let v = d
        .data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((d.width, d.height, v))
}

/// Rebuilds an image from its exported semantic map, depth map and sidecar.
/// Depth is quantized to `(far - near) / 65535`; void pixels get `+inf`.
pub fn read_frame(semantic: &[u8], depth: &[u8], sidecar: &Sidecar) -> Result<BoundingBoxImage, ExportError> {
    let (w, h, ids) = decode_semantic_png(semantic)?;
    let (dw, dh, raw) = decode_depth_png(depth)?;
    if (w, h) != (dw, dh) || (w, h) != (sidecar.width, sidecar.height) {
        return Err(ExportError::Format(format!(
            "size mismatch: semantic {w}x{h}, depth {dw}x{dh}, sidecar {}x{}",
            sidecar.width, sidecar.height
        )));
    }
    let span = sidecar.far - sidecar.near;
    let depth = ids
        .iter()
        .zip(&raw)
        .map(|(&id, &q)| {
            if id == 0 {
                f64::INFINITY
            } else {
                sidecar.near + q as f64 / 65535.0 * span
            }
        })
        .collect();
    let mut img = BoundingBoxImage::empty(w, h);
    img.semantic = ids;
    img.depth = depth;
    img.frame_id = sidecar.frame_id.clone();
    Ok(img)
}

pub struct WrittenFrame {
    pub semantic: PathBuf,
    pub depth: PathBuf,
    pub sidecar: PathBuf,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    std::fs::write(path, bytes).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `<frame>_semantic.png`, `<frame>_depth.png` and `<frame>.json` into `dir`.
pub fn write_frame(
    dir: &Path,
    bbi: &BoundingBoxImage,
    categories: &[Category],
    cfg: &RenderConfig,
    pose: &Pose,
    intr: &Intrinsics,
) -> Result<WrittenFrame, ExportError> {
    std::fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let id = &bbi.frame_id;
    let files = WrittenFrame {
        semantic: dir.join(format!("{id}_semantic.png")),
        depth: dir.join(format!("{id}_depth.png")),
        sidecar: dir.join(format!("{id}.json")),
    };
    write(&files.semantic, &encode_semantic_png(bbi, categories)?)?;
    write(&files.depth, &encode_depth_png(bbi, cfg)?)?;
    let side = Sidecar::new(bbi, cfg, pose, intr);
    write(&files.sidecar, serde_json::to_string_pretty(&side)?.as_bytes())?;
    Ok(files)
}
