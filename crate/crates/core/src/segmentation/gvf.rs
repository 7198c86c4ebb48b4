//! Gradient vector flow: a diffused edge-map gradient used as the snake's
//! external force.

use rayon::prelude::*;

use crate::image::Image;

use super::SnakeParams;

/// Per-pixel 2-vectors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl VectorField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        self.u[i].hypot(self.v[i])
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.u.len()).map(|i| self.magnitude(i)).fold(0.0, f64::max)
    }

    /// Bilinear sample at a sub-pixel position, clamped to the grid.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        let at = |f: &[f64]| {
            let top = f[y0 * self.width + x0] * (1.0 - tx) + f[y0 * self.width + x1] * tx;
            let bot = f[y1 * self.width + x0] * (1.0 - tx) + f[y1 * self.width + x1] * tx;
            top * (1.0 - ty) + bot * ty
        };
        (at(&self.u), at(&self.v))
    }
}

/// Central differences with replicated borders.
pub(crate) fn central_gradient(values: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        values[y * w + x]
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = 0.5 * (at(x + 1, y) - at(x - 1, y));
            gy[i] = 0.5 * (at(x, y + 1) - at(x, y - 1));
        }
    }
    (gx, gy)
}

/// Edge map `|grad(G_sigma * img)|^2`, scaled so its maximum is 1 (all zeros
/// for a flat image).
pub fn edge_map(img: &Image, sigma: f64) -> Vec<f64> {
    let smooth = img.gaussian_blur(sigma);
    let (w, h) = (img.width(), img.height());
    let (gx, gy) = central_gradient(smooth.data(), w, h);
    let mut f: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).collect();
    let max = f.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        f.iter_mut().for_each(|v| *v /= max);
    }
    f
}

/// Explicit GVF diffusion `v <- v + dt * (mu * lap(v) - |grad f|^2 (v - grad f))`,
/// started from `grad f`. The step `dt = 1 / (4 mu + max |grad f|^2)` makes every
/// update a convex combination, so field magnitudes never exceed `max |grad f|`.
pub fn gvf_field(img: &Image, p: &SnakeParams) -> VectorField {
    let (w, h) = (img.width(), img.height());
    let f = edge_map(img, p.edge_sigma);
    let (fx, fy) = central_gradient(&f, w, h);
    let b: Vec<f64> = fx.iter().zip(&fy).map(|(a, c)| a * a + c * c).collect();
    let b_max = b.iter().cloned().fold(0.0, f64::max);
    let mu = p.gvf_mu;
    let dt = 1.0 / (4.0 * mu + b_max);

    let mut u = fx.clone();
    let mut v = fy.clone();
    let mut nu = vec![0.0; w * h];
    let mut nv = vec![0.0; w * h];
    for _ in 0..p.gvf_iterations {
        nu.par_chunks_mut(w)
            .zip(nv.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (row_u, row_v))| {
                let up = y.saturating_sub(1);
                let down = (y + 1).min(h - 1);
                for x in 0..w {
                    let left = x.saturating_sub(1);
                    let right = (x + 1).min(w - 1);
                    let i = y * w + x;
                    let lap = |g: &[f64]| {
                        g[y * w + left] + g[y * w + right] + g[up * w + x] + g[down * w + x]
                            - 4.0 * g[i]
                    };
                    row_u[x] = u[i] + dt * (mu * lap(&u) - b[i] * (u[i] - fx[i]));
                    row_v[x] = v[i] + dt * (mu * lap(&v) - b[i] * (v[i] - fy[i]));
                }
            });
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    VectorField {
        width: w,
        height: h,
        u,
        v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_gives_zero_field() {
        let field = gvf_field(&Image::filled(20, 20, 0.7), &SnakeParams::default());
        assert!(field.u.iter().chain(&field.v).all(|&c| c == 0.0));
    }

    #[test]
    fn step_edge_field_points_at_edge() {
        let img = Image::from_fn(40, 20, |x, _| if x >= 20 { 0.9 } else { 0.2 });
        let field = gvf_field(&img, &SnakeParams::default());
        // edge lies between columns 19 and 20
        for y in 5..15 {
            for d in 1..=3 {
                let left = field.u[y * 40 + (19 - d)];
                let right = field.u[y * 40 + (20 + d)];
                assert!(left > 0.0, "left of edge at d={d}: {left}");
                assert!(right < 0.0, "right of edge at d={d}: {right}");
            }
        }
    }

    #[test]
    fn magnitude_bounded_by_edge_gradient() {
        let img = Image::from_fn(24, 24, |x, y| {
            if (x as f64 - 12.0).powi(2) + (y as f64 - 11.0).powi(2) < 40.0 {
                0.2
            } else {
                0.8
            }
        });
        let f = edge_map(&img, 1.0);
        let (fx, fy) = central_gradient(&f, 24, 24);
        let bound = fx.iter().zip(&fy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
        for iters in [0, 1, 5, 20, 60] {
            let p = SnakeParams {
                gvf_iterations: iters,
                ..SnakeParams::default()
            };
            let field = gvf_field(&img, &p);
            assert!(field.max_magnitude() <= bound * (1.0 + 1e-12), "iters {iters}");
        }
    }
}
