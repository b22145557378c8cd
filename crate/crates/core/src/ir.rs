//! SegDepth intermediate representation.
//!
//! A SegDepth image fuses the segmentation mask and the proximity depth
//! into one RGB image: OOI pixels carry their depth through a false-color
//! lookup table, every other pixel carries its depth as gray (R = G = B).
//! Because no table entry is gray, both planes are exactly recoverable.

use std::collections::HashMap;
use std::sync::OnceLock;

use image::{GrayImage, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::sensor::SegMask;

#[derive(Debug, Error)]
pub enum IrError {
    #[error("dimension mismatch: seg {seg:?} vs depth {depth:?}")]
    DimensionMismatch { seg: (u32, u32), depth: (u32, u32) },
    #[error("cannot downsample {from:?} to {to:?}: output must evenly divide input")]
    NotDivisible { from: (u32, u32), to: (u32, u32) },
    #[error("colormap table: {0}")]
    Table(String),
}

pub type Result<T, E = IrError> = std::result::Result<T, E>;

/// Anchor colors of the colormap, `(index, rgb)`.
pub const LUT_ANCHORS: [(u8, [u8; 3]); 5] = [
    (0, [0, 0, 255]),
    (64, [0, 255, 255]),
    (128, [0, 255, 0]),
    (191, [255, 255, 0]),
    (255, [255, 0, 0]),
];

/// 256-entry RGB table, piecewise linear between [`LUT_ANCHORS`], each
/// channel rounded half-up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColormapLut {
    table: [[u8; 3]; 256],
}

impl ColormapLut {
    fn build() -> Self {
        let mut table = [[0u8; 3]; 256];
        for pair in LUT_ANCHORS.windows(2) {
            let (a0, c0) = (pair[0].0 as i64, pair[0].1);
            let (a1, c1) = (pair[1].0 as i64, pair[1].1);
            let den = a1 - a0;
            for d in a0..=a1 {
                for ch in 0..3 {
                    // floor(c0 + (c1 - c0)(d - a0)/den + 1/2) in integers.
                    let num = c0[ch] as i64 * den + (c1[ch] as i64 - c0[ch] as i64) * (d - a0);
                    table[d as usize][ch] = (2 * num + den).div_euclid(2 * den) as u8;
                }
            }
        }
        Self { table }
    }

    /// The shared standard table.
    pub fn standard() -> &'static ColormapLut {
        static LUT: OnceLock<ColormapLut> = OnceLock::new();
        LUT.get_or_init(ColormapLut::build)
    }

    #[inline]
    pub fn get(&self, d: u8) -> [u8; 3] {
        self.table[d as usize]
    }

    pub fn entries(&self) -> &[[u8; 3]; 256] {
        &self.table
    }

    /// Depth index whose color is `rgb`, if any.
    pub fn invert(&self, rgb: [u8; 3]) -> Option<u8> {
        static INV: OnceLock<HashMap<[u8; 3], u8>> = OnceLock::new();
        if std::ptr::eq(self, Self::standard()) {
            let inv = INV.get_or_init(|| Self::standard().table.iter().enumerate().map(|(d, c)| (*c, d as u8)).collect());
            return inv.get(&rgb).copied();
        }
        self.table.iter().position(|c| *c == rgb).map(|d| d as u8)
    }

    /// 256 lines of `r,g,b`, no header.
    pub fn to_csv(&self) -> String {
        self.table.iter().map(|[r, g, b]| format!("{r},{g},{b}\n")).collect()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut table = [[0u8; 3]; 256];
        let mut n = 0;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| IrError::Table(e.to_string()))?;
            if i >= 256 {
                return Err(IrError::Table("more than 256 rows".into()));
            }
            if rec.len() != 3 {
                return Err(IrError::Table(format!("row {i} has {} columns", rec.len())));
            }
            for ch in 0..3 {
                table[i][ch] = rec[ch]
                    .trim()
                    .parse()
                    .map_err(|e| IrError::Table(format!("row {i} column {ch}: {e}")))?;
            }
            n += 1;
        }
        if n != 256 {
            return Err(IrError::Table(format!("expected 256 rows, found {n}")));
        }
        Ok(Self { table })
    }
}

/// Color mapping for OOI depth values.
pub fn colormap(d: u8) -> [u8; 3] {
    ColormapLut::standard().get(d)
}

/// A composed SegDepth image. This is the only observation the learned
/// policy accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegDepthImage(RgbImage);

impl SegDepthImage {
    pub fn from_rgb(img: RgbImage) -> Self {
        Self(img)
    }

    pub fn width(&self) -> u32 {
        self.0.width()
    }
    pub fn height(&self) -> u32 {
        self.0.height()
    }
    pub fn dimensions(&self) -> (u32, u32) {
        self.0.dimensions()
    }

    /// Interleaved RGB bytes, row-major.
    pub fn as_raw(&self) -> &[u8] {
        self.0.as_raw()
    }

    pub fn rgb(&self) -> &RgbImage {
        &self.0
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.0.get_pixel(x, y).0
    }

    pub fn to_png(&self) -> crate::sensor::Result<Vec<u8>> {
        crate::sensor::encode_png(self.0.as_raw(), self.width(), self.height(), png::ColorType::Rgb)
    }

    pub fn from_png(bytes: &[u8]) -> std::result::Result<Self, image::ImageError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        Ok(Self(img.to_rgb8()))
    }

    /// Horizontally mirrored copy.
    pub fn mirrored(&self) -> Self {
        Self(image::imageops::flip_horizontal(&self.0))
    }
}

/// Composes `I_DS` from `I_S` and `I_D`.
///
/// `I_D & I_S` keeps depth on OOI pixels and is mapped through the colormap;
/// `I_D & ¬I_S` keeps depth elsewhere and is stacked into three gray
/// channels. The supports are disjoint, so the sum of the two parts is a
/// per-pixel selection.
pub fn compose_segdepth(seg: &SegMask, depth: &GrayImage) -> Result<SegDepthImage> {
    if seg.dimensions() != depth.dimensions() {
        return Err(IrError::DimensionMismatch { seg: seg.dimensions(), depth: depth.dimensions() });
    }
    let lut = ColormapLut::standard();
    let (w, h) = seg.dimensions();
    let mut out = Vec::with_capacity((w * h * 3) as usize);
    for (&s, &d) in seg.as_slice().iter().zip(depth.as_raw()) {
        let ooi_part = if s { lut.get(d) } else { [0, 0, 0] };
        let rest = if s { 0 } else { d };
        let gray_part = [rest, rest, rest];
        out.extend([ooi_part[0] + gray_part[0], ooi_part[1] + gray_part[1], ooi_part[2] + gray_part[2]]);
    }
    Ok(SegDepthImage(RgbImage::from_raw(w, h, out).expect("buffer sized to image")))
}

/// Recovers `(I_S, I_D)` from a SegDepth image. Non-gray pixels are OOI and
/// their depth is read back through the inverse table.
pub fn decompose_segdepth(img: &SegDepthImage) -> Option<(SegMask, GrayImage)> {
    let lut = ColormapLut::standard();
    let (w, h) = img.dimensions();
    let mut seg = SegMask::new(w, h);
    let mut depth = GrayImage::new(w, h);
    for (x, y, Rgb([r, g, b])) in img.0.enumerate_pixels() {
        if r == g && g == b {
            depth.put_pixel(x, y, Luma([*r]));
        } else {
            let d = lut.invert([*r, *g, *b])?;
            seg.set(x, y, true);
            depth.put_pixel(x, y, Luma([d]));
        }
    }
    Some((seg, depth))
}

/// Block-mean downsampling per channel, rounded half-up.
pub fn downsample(img: &SegDepthImage, out_w: u32, out_h: u32) -> Result<SegDepthImage> {
    let (w, h) = img.dimensions();
    if out_w == 0 || out_h == 0 || w % out_w != 0 || h % out_h != 0 {
        return Err(IrError::NotDivisible { from: (w, h), to: (out_w, out_h) });
    }
    let (bx, by) = (w / out_w, h / out_h);
    let n = bx * by;
    let src = img.as_raw();
    let mut out = vec![0u8; (out_w * out_h * 3) as usize];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let mut acc = [0u32; 3];
            for y in oy * by..(oy + 1) * by {
                let row = (y * w) as usize * 3;
                for x in ox * bx..(ox + 1) * bx {
                    let p = row + x as usize * 3;
                    acc[0] += src[p] as u32;
                    acc[1] += src[p + 1] as u32;
                    acc[2] += src[p + 2] as u32;
                }
            }
            let o = ((oy * out_w + ox) * 3) as usize;
            for ch in 0..3 {
                out[o + ch] = ((2 * acc[ch] + n) / (2 * n)) as u8;
            }
        }
    }
    Ok(SegDepthImage(RgbImage::from_raw(out_w, out_h, out).expect("buffer sized to image")))
}
