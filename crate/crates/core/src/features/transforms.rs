//! Image transforms whose outputs feed the intensity feature families.

use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

use super::chebyshev::{chebyshev_coefficients, CHEBYSHEV_ORDER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformPlane {
    Raw,
    FourierMagnitude,
    Chebyshev,
    WaveletLL,
    /// Fourier magnitude of the wavelet approximation band.
    FourierOfWavelet,
    /// Chebyshev coefficients of the Fourier magnitude.
    ChebyshevOfFourier,
}

impl TransformPlane {
    pub const ALL: [TransformPlane; 6] = [
        TransformPlane::Raw,
        TransformPlane::FourierMagnitude,
        TransformPlane::Chebyshev,
        TransformPlane::WaveletLL,
        TransformPlane::FourierOfWavelet,
        TransformPlane::ChebyshevOfFourier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformPlane::Raw => "raw",
            TransformPlane::FourierMagnitude => "fourier",
            TransformPlane::Chebyshev => "chebyshev",
            TransformPlane::WaveletLL => "wavelet",
            TransformPlane::FourierOfWavelet => "fourier_wavelet",
            TransformPlane::ChebyshevOfFourier => "chebyshev_fourier",
        }
    }
}

impl fmt::Display for TransformPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformPlane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "transform plane",
                name: s.to_string(),
            })
    }
}

pub const MIN_TRANSFORM_SIZE: usize = 8;

pub fn transform_image(img: &Image, plane: TransformPlane) -> Result<Image> {
    if img.width() < MIN_TRANSFORM_SIZE || img.height() < MIN_TRANSFORM_SIZE {
        return Err(Error::ImageTooSmall(format!(
            "transforms need {MIN_TRANSFORM_SIZE}x{MIN_TRANSFORM_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(match plane {
        TransformPlane::Raw => img.clone(),
        TransformPlane::FourierMagnitude => fourier_magnitude(img),
        TransformPlane::Chebyshev => chebyshev_plane(img),
        TransformPlane::WaveletLL => haar_ll(img),
        TransformPlane::FourierOfWavelet => fourier_magnitude(&haar_ll(img)),
        TransformPlane::ChebyshevOfFourier => chebyshev_plane(&fourier_magnitude(img)),
    })
}

/// Unnormalized 2-D DFT magnitudes, row-major, same shape as the input.
pub fn dft_magnitude(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut buf: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    buf.iter().map(|c| c.norm()).collect()
}

/// `log(1 + |DFT|)` rescaled to `[0, 1]`.
pub fn fourier_magnitude(img: &Image) -> Image {
    let mags: Vec<f64> = dft_magnitude(img).into_iter().map(f64::ln_1p).collect();
    Image::rescaled(&mags, img.width(), img.height())
}

/// One-level Haar approximation band (2x2 block means), rescaled to `[0, 1]`.
/// Odd trailing rows/columns are dropped.
pub fn haar_ll(img: &Image) -> Image {
    let (w, h) = (img.width() / 2, img.height() / 2);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = img.get(2 * x, 2 * y)
                + img.get(2 * x + 1, 2 * y)
                + img.get(2 * x, 2 * y + 1)
                + img.get(2 * x + 1, 2 * y + 1);
            out.push(0.25 * s);
        }
    }
    Image::rescaled(&out, w, h)
}

/// `CHEBYSHEV_ORDER x CHEBYSHEV_ORDER` coefficient array rescaled to `[0, 1]`.
pub fn chebyshev_plane(img: &Image) -> Image {
    let coeffs = chebyshev_coefficients(img, CHEBYSHEV_ORDER);
    Image::rescaled(&coeffs, CHEBYSHEV_ORDER, CHEBYSHEV_ORDER)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| ((x * 13 + y * 7) % 17) as f64 / 16.0)
    }

    #[test]
    fn raw_is_identity() {
        let img = texture(12, 9);
        assert_eq!(transform_image(&img, TransformPlane::Raw).unwrap(), img);
    }

    #[test]
    fn dft_of_constant_has_only_dc() {
        let img = Image::filled(10, 8, 0.5);
        let mags = dft_magnitude(&img);
        assert!((mags[0] - 40.0).abs() < 1e-9);
        assert!(mags[1..].iter().all(|&m| m < 1e-9));
        let plane = transform_image(&img, TransformPlane::FourierMagnitude).unwrap();
        assert_eq!(plane.get(0, 0), 1.0);
        assert!(plane.data()[1..].iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn wavelet_halves_dimensions() {
        let img = texture(17, 12);
        let ll = transform_image(&img, TransformPlane::WaveletLL).unwrap();
        assert_eq!((ll.width(), ll.height()), (8, 6));
        let fw = transform_image(&img, TransformPlane::FourierOfWavelet).unwrap();
        assert_eq!((fw.width(), fw.height()), (8, 6));
    }

    #[test]
    fn chebyshev_planes_are_fixed_size() {
        let img = texture(30, 24);
        for plane in [TransformPlane::Chebyshev, TransformPlane::ChebyshevOfFourier] {
            let c = transform_image(&img, plane).unwrap();
            assert_eq!((c.width(), c.height()), (CHEBYSHEV_ORDER, CHEBYSHEV_ORDER));
        }
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            transform_image(&Image::filled(7, 20, 0.1), TransformPlane::Raw),
            Err(Error::ImageTooSmall(_))
        ));
    }

    #[test]
    fn plane_names_round_trip() {
        for p in TransformPlane::ALL {
            assert_eq!(p.name().parse::<TransformPlane>().unwrap(), p);
        }
    }
}
