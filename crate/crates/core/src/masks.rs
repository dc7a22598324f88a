//! Binary masks: PNG I/O, mask-to-box, dilation, and IoU.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Read access to a row-major H×W mask with real-valued pixels.
pub trait MaskView {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    /// Value at linear index `v * width + u`.
    fn value_at(&self, idx: usize) -> f64;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Inclusive pixel box `(u_min, v_min, u_max, v_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: usize,
    pub v_min: usize,
    pub u_max: usize,
    pub v_max: usize,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter("mask dimensions must be positive".into()));
        }
        if bits.len() != width * height {
            return Err(Error::dim("mask bits", width * height, bits.len()));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for v in 0..height {
            for u in 0..width {
                m.bits[v * width + u] = f(u, v);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[v * self.width + u] = on;
    }

    pub fn toggle_index(&mut self, idx: usize) {
        self.bits[idx] = !self.bits[idx];
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dim("mask size", self.width * self.height, other.width * other.height));
        }
        Ok(())
    }

    /// Number of pixels that differ.
    pub fn hamming(&self, other: &BinaryMask) -> Result<usize> {
        self.same_dims(other)?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_mask(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_mask(self, path)
    }
}

impl MaskView for BinaryMask {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn value_at(&self, idx: usize) -> f64 {
        if self.bits[idx] {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-coordinate bounding box of the set pixels (u = column, v = row).
pub fn mask_to_box(mask: &BinaryMask) -> Result<BBox> {
    let mut bb: Option<BBox> = None;
    for v in 0..mask.height {
        for u in 0..mask.width {
            if mask.get(u, v) {
                bb = Some(match bb {
                    None => BBox {
                        u_min: u,
                        v_min: v,
                        u_max: u,
                        v_max: v,
                    },
                    Some(b) => BBox {
                        u_min: b.u_min.min(u),
                        v_min: b.v_min.min(v),
                        u_max: b.u_max.max(u),
                        v_max: b.v_max.max(v),
                    },
                });
            }
        }
    }
    bb.ok_or(Error::EmptyMask)
}

// 1-D running "any set within ±k" over a strided line.
fn dilate_line(src: &[bool], dst: &mut [bool], k: usize) {
    let n = src.len();
    let mut prefix = vec![0usize; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + src[i] as usize;
    }
    for i in 0..n {
        let lo = i.saturating_sub(k);
        let hi = (i + k + 1).min(n);
        dst[i] = prefix[hi] > prefix[lo];
    }
}

/// Dilation with a (2k+1)×(2k+1) square structuring element.
pub fn dilate(mask: &BinaryMask, k: usize) -> BinaryMask {
    if k == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    let mut rows = vec![false; w * h];
    for v in 0..h {
        dilate_line(&mask.bits[v * w..(v + 1) * w], &mut rows[v * w..(v + 1) * w], k);
    }
    let mut out = vec![false; w * h];
    let mut col = vec![false; h];
    let mut col_out = vec![false; h];
    for u in 0..w {
        for v in 0..h {
            col[v] = rows[v * w + u];
        }
        dilate_line(&col, &mut col_out, k);
        for v in 0..h {
            out[v * w + u] = col_out[v];
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits: out,
    }
}

/// Erosion with the same square element; pixels outside the image count
/// as background.
pub fn erode(mask: &BinaryMask, k: usize) -> BinaryMask {
    if k == 0 {
        return mask.clone();
    }
    // pad so the border acts as background, then crop
    let (w, h) = (mask.width, mask.height);
    let (pw, ph) = (w + 2 * k, h + 2 * k);
    let padded = BinaryMask::from_fn(pw, ph, |u, v| {
        u < k || v < k || u >= w + k || v >= h + k || !mask.get(u - k, v - k)
    });
    let grown = dilate(&padded, k);
    BinaryMask::from_fn(w, h, |u, v| !grown.get(u + k, v + k))
}

/// Positive `k` dilates, negative erodes.
pub fn dilate_signed(mask: &BinaryMask, k: i32) -> BinaryMask {
    if k >= 0 {
        dilate(mask, k as usize)
    } else {
        erode(mask, k.unsigned_abs() as usize)
    }
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        return Err(Error::UndefinedIou);
    }
    Ok(inter as f64 / union as f64)
}

/// Reads an 8-bit grayscale PNG; values ≥ 128 are foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let (ct, depth) = reader.output_color_type();
    if ct != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!("expected 8-bit grayscale PNG, found {ct:?} at {depth:?}"),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "PNG too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut bits = Vec::with_capacity(w * h);
    for v in 0..h {
        bits.extend(buf[v * stride..v * stride + w].iter().map(|&p| p >= 128));
    }
    BinaryMask::from_bits(w, h, bits).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes `{0, 255}` 8-bit grayscale.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray_png(path, mask.width, mask.height, &data)
}

pub(crate) fn write_gray_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, data, png::ColorType::Grayscale)
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    data: &[u8],
    color: png::ColorType,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(data).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}
