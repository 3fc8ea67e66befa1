//! Pixel grids shared by every stage: micrographs, per-pixel phase labels,
//! binary particle masks and bounding boxes.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved 8-bit image with one or three channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Image filled with one pixel value (its length picks the channel count).
    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Result<Self> {
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(width * height * pixel.len())
            .collect();
        Self::new(width, height, pixel.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Rec. 601 luma with round-half-up; single-channel input is returned as is.
    pub fn to_grayscale(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| {
                let weighted =
                    299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32 + 500;
                (weighted / 1000) as u8
            })
            .collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Feature vector of the `p`x`p` window centred on `(x, y)`.
    ///
    /// Layout is channel-major, then row-major over the window. Coordinates
    /// outside the image are clamped to the nearest edge pixel.
    pub fn neighborhood_features(&self, x: usize, y: usize, p: usize) -> Result<Vec<f32>> {
        check_window_side(p)?;
        if x >= self.width || y >= self.height {
            return Err(Error::invalid(format!(
                "pixel ({x}, {y}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(self.channels * p * p);
        self.write_neighborhood(x, y, p, &mut out);
        Ok(out)
    }

    /// Appends the neighborhood of `(x, y)` to `out` without validation.
    pub(crate) fn write_neighborhood(&self, x: usize, y: usize, p: usize, out: &mut Vec<f32>) {
        let r = (p / 2) as isize;
        let max_x = self.width as isize - 1;
        let max_y = self.height as isize - 1;
        for c in 0..self.channels {
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, max_y) as usize;
                let row = yy * self.width;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, max_x) as usize;
                    out.push(self.data[(row + xx) * self.channels + c] as f32);
                }
            }
        }
    }

    /// Reads a PNG or JPEG. Alpha is dropped and 16-bit samples are divided
    /// down to 8 bits.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?;
        let decoded = reader.decode().map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let unsupported = |what: &str| Error::Image {
            path: path.to_path_buf(),
            message: format!("unsupported pixel layout {what}"),
        };
        let (channels, data) = match decoded {
            DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
            DynamicImage::ImageLumaA8(b) => (1, b.into_raw().chunks_exact(2).map(|p| p[0]).collect()),
            DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
            DynamicImage::ImageRgba8(b) => (
                3,
                b.into_raw()
                    .chunks_exact(4)
                    .flat_map(|p| [p[0], p[1], p[2]])
                    .collect(),
            ),
            DynamicImage::ImageLuma16(b) => (1, b.into_raw().iter().map(|&v| down16(v)).collect()),
            DynamicImage::ImageLumaA16(b) => (
                1,
                b.into_raw().chunks_exact(2).map(|p| down16(p[0])).collect(),
            ),
            DynamicImage::ImageRgb16(b) => (3, b.into_raw().iter().map(|&v| down16(v)).collect()),
            DynamicImage::ImageRgba16(b) => (
                3,
                b.into_raw()
                    .chunks_exact(4)
                    .flat_map(|p| [down16(p[0]), down16(p[1]), down16(p[2])])
                    .collect(),
            ),
            other => return Err(unsupported(&format!("{:?}", other.color()))),
        };
        RasterImage::new(w, h, channels, data).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes the image as an 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let (w, h) = (self.width as u32, self.height as u32);
        let dynamic = if self.channels == 1 {
            DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, self.data.clone())
                    .expect("length checked at construction"),
            )
        } else {
            DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.data.clone())
                    .expect("length checked at construction"),
            )
        };
        let mut buf = std::io::Cursor::new(Vec::new());
        dynamic
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| Error::data(format!("PNG encoding failed: {e}")))?;
        Ok(buf.into_inner())
    }
}

fn down16(v: u16) -> u8 {
    (v / 257) as u8
}

pub(crate) fn check_window_side(p: usize) -> Result<()> {
    if p == 0 || p.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "neighborhood side must be odd and >= 1, got {p}"
        )));
    }
    Ok(())
}

/// Phase of a clinker pixel. `Other` covers the interstitial matrix and
/// anything that is neither silicate phase.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum PhaseLabel {
    #[default]
    Other = 0,
    Alite = 1,
    Belite = 2,
}

impl PhaseLabel {
    pub const ALL: [PhaseLabel; 3] = [PhaseLabel::Other, PhaseLabel::Alite, PhaseLabel::Belite];
    pub const PARTICLES: [PhaseLabel; 2] = [PhaseLabel::Alite, PhaseLabel::Belite];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseLabel::Other => "other",
            PhaseLabel::Alite => "alite",
            PhaseLabel::Belite => "belite",
        }
    }

    /// Case-insensitive lookup of the two particle phases.
    pub fn parse_particle(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "alite" => Some(PhaseLabel::Alite),
            "belite" => Some(PhaseLabel::Belite),
            _ => None,
        }
    }

    /// Display colour: black matrix, red alite, blue belite.
    pub fn color(self) -> [u8; 3] {
        match self {
            PhaseLabel::Other => [0, 0, 0],
            PhaseLabel::Alite => [255, 0, 0],
            PhaseLabel::Belite => [0, 0, 255],
        }
    }
}

impl std::fmt::Display for PhaseLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-pixel phase labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<PhaseLabel>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<PhaseLabel>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "label count {} does not match {width}x{height}",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: PhaseLabel) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[PhaseLabel] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> PhaseLabel {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: PhaseLabel) {
        self.labels[y * self.width + x] = label;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Pixel count per phase, indexed by [`PhaseLabel::index`].
    pub fn counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    pub fn mask_of(&self, phase: PhaseLabel) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == phase).collect(),
        }
    }

    /// Colour rendering with [`PhaseLabel::color`].
    pub fn to_color_image(&self) -> RasterImage {
        let data = self.labels.iter().flat_map(|l| l.color()).collect();
        RasterImage::new(self.width, self.height, 3, data).expect("dimensions are consistent")
    }

    /// Decodes a label image: single-channel pixels hold the class index
    /// (0, 1, 2); three-channel pixels must use the display palette.
    pub fn from_image(img: &RasterImage) -> Result<Self> {
        let mut labels = Vec::with_capacity(img.width() * img.height());
        for (i, px) in img.data().chunks_exact(img.channels()).enumerate() {
            let label = if img.channels() == 1 {
                PhaseLabel::from_index(px[0] as usize)
            } else {
                PhaseLabel::ALL.into_iter().find(|l| l.color() == px[..3])
            };
            labels.push(label.ok_or_else(|| {
                Error::data(format!(
                    "pixel ({}, {}) value {:?} is not a phase label",
                    i % img.width(),
                    i / img.width(),
                    px
                ))
            })?);
        }
        LabelMap::new(img.width(), img.height(), labels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = RasterImage::load(path)?;
        LabelMap::from_image(&img).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

/// Row-major foreground mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask length {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight bounding box of the foreground, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let mut min_x = usize::MAX;
        let mut min_y = usize::MAX;
        let mut max_x = 0;
        let mut max_y = 0;
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    any = true;
                    min_x = min_x.min(x);
                    max_x = max_x.max(x);
                    min_y = min_y.min(y);
                    max_y = max_y.max(y);
                }
            }
        }
        any.then(|| BBox {
            x: min_x,
            y: min_y,
            w: max_x - min_x + 1,
            h: max_y - min_y + 1,
        })
    }

    /// Foreground coordinates in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Axis-aligned pixel box; `(x, y)` is the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn diagonal(&self) -> f64 {
        ((self.w * self.w + self.h * self.h) as f64).sqrt()
    }

    /// Overlap with another box, if any.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        (x0 < x1 && y0 < y1).then(|| BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }
}
