//! Image and mask value types, file I/O, grayscale conversion and cropping.
//!
//! Intensities live in `[0, 1]` as `f64`; quantization happens only when an
//! image is written to or read from disk.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image, clamping every value into `[0, 1]` (non-finite values become 0).
    pub fn from_clamped(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer length");
        let data = data
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_clamped(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel access with coordinates clamped to the image (replicated border).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn transpose(&self) -> Image {
        Image::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// Rotates the image by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> Image {
        let (w, h) = (self.width, self.height);
        Image::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Pixelwise product with a mask: background pixels become 0.
    pub fn masked(&self, mask: &BinaryMask) -> Image {
        assert_eq!((self.width, self.height), (mask.width(), mask.height()));
        let data = self
            .data
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Separable Gaussian blur with a `ceil(3 sigma)` kernel radius and replicated borders.
    /// `sigma <= 0` returns a copy.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);

        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    acc += weight * self.get_clamped(x as isize + k as isize - radius, y as isize);
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += weight * tmp[yy * w + x];
                }
                out[y * w + x] = acc;
            }
        }
        Image::from_clamped(w, h, out)
    }

    /// Rescales values linearly onto `[0, 1]`; a constant image maps to all zeros.
    pub fn rescaled(values: &[f64], width: usize, height: usize) -> Image {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        let data = if span > 0.0 && span.is_finite() {
            values.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; values.len()]
        };
        Image::from_clamped(width, height, data)
    }
}

/// Row-major RGB image, channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::InvalidImage(format!(
                "{}x{} RGB image needs {} values, got {}",
                width,
                height,
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Row-major boolean mask, `true` = foreground.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{}x{} mask needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn crop(&self, b: &BoundingBox) -> Result<BinaryMask> {
        b.check_inside(self.width, self.height)?;
        Ok(BinaryMask::from_fn(b.w, b.h, |i, j| self.get(b.x + i, b.y + j)))
    }

    /// Tight bounding box of the foreground, if any.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn to_image(&self) -> Image {
        Image::from_clamped(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// Ordered planes of one microscope field, all sharing dimensions.
#[derive(Clone, Debug)]
pub struct FocalStack {
    planes: Vec<Image>,
    /// Micrometers between consecutive planes.
    pub plane_step: f64,
}

impl FocalStack {
    pub fn new(planes: Vec<Image>, plane_step: f64) -> Result<Self> {
        let first = planes.first().ok_or(Error::EmptyStack)?;
        let dims = (first.width(), first.height());
        if let Some(p) = planes.iter().find(|p| (p.width(), p.height()) != dims) {
            return Err(Error::InvalidImage(format!(
                "plane is {}x{}, stack is {}x{}",
                p.width(),
                p.height(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self { planes, plane_step })
    }

    pub fn planes(&self) -> &[Image] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(Error::OutOfBounds {
                box_: *self,
                width,
                height,
            });
        }
        Ok(())
    }

    /// Grows the box by `fraction` of its size on every side, clamped to the image.
    pub fn dilated(&self, fraction: f64, width: usize, height: usize) -> BoundingBox {
        let mx = (self.w as f64 * fraction).ceil() as usize;
        let my = (self.h as f64 * fraction).ceil() as usize;
        let x0 = self.x.saturating_sub(mx);
        let y0 = self.y.saturating_sub(my);
        let x1 = (self.x + self.w + mx).min(width);
        let y1 = (self.y + self.h + my).min(height);
        BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Cuts the box out of `img`; pixel `(i, j)` of the result is source `(x + i, y + j)`.
pub fn crop(img: &Image, b: &BoundingBox) -> Result<Image> {
    b.check_inside(img.width(), img.height())?;
    Ok(Image::from_fn(b.w, b.h, |i, j| img.get(b.x + i, b.y + j)))
}

/// BT.601 luminance.
pub fn to_grayscale(img: &ColorImage) -> Image {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|c| {
            if c[0] == c[1] && c[1] == c[2] {
                c[0]
            } else {
                0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
            }
        })
        .collect();
    Image::from_clamped(img.width(), img.height(), data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let format = match ext.as_str() {
        "png" => image::ImageFormat::Png,
        "tif" | "tiff" => image::ImageFormat::Tiff,
        other => return Err(Error::UnsupportedFormat(other.to_string())),
    };
    let mut reader = ImageReader::open(path)?;
    reader.set_format(format);
    let decoded = reader
        .decode()
        .map_err(|e| Error::CorruptData(format!("{}: {e}", path.display())))?;
    Ok(from_dynamic(decoded))
}

fn from_dynamic(img: DynamicImage) -> ColorImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen_bit = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let data = if sixteen_bit {
        img.to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect()
    } else {
        img.to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect()
    };
    ColorImage {
        width: w,
        height: h,
        data,
    }
}

/// Loads any supported file and converts it to grayscale.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Image> {
    load_image(path).map(|c| to_grayscale(&c))
}

#[inline]
pub(crate) fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit grayscale PNG.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let buf = GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Luma([quantize_u8(img.get(x as usize, y as usize))])
    });
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Writes a mask as an 8-bit PNG (0 / 255).
pub fn save_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_png(&mask.to_image(), path)
}

/// Reads a mask PNG; pixels at or above half intensity are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = load_gray(path)?;
    BinaryMask::new(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| v >= 0.5).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| ((x + 3 * y) % 256) as f64 / 255.0)
    }

    #[test]
    fn grayscale_weights() {
        let c = ColorImage::new(3, 1, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.4, 0.4, 0.4]).unwrap();
        let g = to_grayscale(&c);
        assert!((g.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((g.get(1, 0) - 0.299).abs() < 1e-12);
        assert!((g.get(2, 0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn crop_cases() {
        let img = ramp(10, 7);
        assert_eq!(crop(&img, &BoundingBox::new(0, 0, 10, 7)).unwrap(), img);
        let one = crop(&img, &BoundingBox::new(0, 0, 1, 1)).unwrap();
        assert_eq!(one.data(), &[img.get(0, 0)]);
        let sub = crop(&img, &BoundingBox::new(2, 3, 4, 2)).unwrap();
        assert_eq!(sub.get(1, 1), img.get(3, 4));
        assert!(matches!(
            crop(&img, &BoundingBox::new(8, 0, 3, 1)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Image::new(1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn png_scaling_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.png");
        let img = Image::new(2, 2, vec![0.0, 128.0 / 255.0, 1.0, 7.0 / 255.0]).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.pixel(1, 0), [128.0 / 255.0; 3]);
        assert_eq!(back.pixel(0, 1), [1.0; 3]);
        assert_eq!(to_grayscale(&back), img);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("nope.png")),
            Err(Error::FileNotFound(_))
        ));
        let bogus = dir.path().join("bogus.png");
        std::fs::write(&bogus, "definitely not a png").unwrap();
        assert!(matches!(load_image(&bogus), Err(Error::CorruptData(_))));
        let bmp = dir.path().join("x.bmp");
        std::fs::write(&bmp, "x").unwrap();
        assert!(matches!(load_image(&bmp), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn sixteen_bit_tiff() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.tiff");
        let buf = image::ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(2, 1, vec![0, 65535]).unwrap();
        buf.save_with_format(&path, image::ImageFormat::Tiff).unwrap();
        let g = load_gray(&path).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Image::filled(9, 9, 0.3);
        let b = img.gaussian_blur(1.5);
        assert!(b.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let img = ramp(5, 3);
        assert_eq!(img.rotate90().rotate90().rotate90().rotate90(), img);
    }
}
