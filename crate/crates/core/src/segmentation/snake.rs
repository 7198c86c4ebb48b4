//! Closed active contours: boundary tracing, subsampling, semi-implicit
//! evolution under GVF + balloon forces, and polygon rasterization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

use super::gvf::{gvf_field, VectorField};
use super::SnakeParams;

/// Closed polygon in pixel-center coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(f64, f64)>,
}

impl Contour {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Shoelace area; positive for counter-clockwise order in (x, y) algebra.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let (x0, y0) = self.points[i];
                let (x1, y1) = self.points[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                let (x0, y0) = self.points[i];
                let (x1, y1) = self.points[(i + 1) % n];
                (x1 - x0).hypot(y1 - y0)
            })
            .sum()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Contour {
        Contour::new(self.points.iter().map(|&(x, y)| (x + dx, y + dy)).collect())
    }

    fn distinct_points(&self) -> usize {
        let mut pts: Vec<(i64, i64)> = self
            .points
            .iter()
            .map(|&(x, y)| ((x * 1e6).round() as i64, (y * 1e6).round() as i64))
            .collect();
        pts.sort_unstable();
        pts.dedup();
        pts.len()
    }

    /// True when no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let n = self.points.len();
        if n < 3 {
            return false;
        }
        let seg = |i: usize| (self.points[i], self.points[(i + 1) % n]);
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segments_intersect(seg(i), seg(j)) {
                    return false;
                }
            }
        }
        true
    }

    /// Redistributes `count` points at equal arc-length intervals, starting at point 0.
    pub fn resampled(&self, count: usize) -> Contour {
        let n = self.points.len();
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let (x0, y0) = self.points[i];
            let (x1, y1) = self.points[(i + 1) % n];
            cum.push(cum[i] + (x1 - x0).hypot(y1 - y0));
        }
        let total = cum[n];
        if total <= 0.0 || count == 0 {
            return self.clone();
        }
        let mut out = Vec::with_capacity(count);
        let mut seg = 0;
        for k in 0..count {
            let s = total * k as f64 / count as f64;
            while seg + 1 < n && cum[seg + 1] <= s {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
            let (x0, y0) = self.points[seg];
            let (x1, y1) = self.points[(seg + 1) % n];
            out.push((x0 + t * (x1 - x0), y0 + t * (y1 - y0)));
        }
        Contour::new(out)
    }
}

fn segments_intersect(a: ((f64, f64), (f64, f64)), b: ((f64, f64), (f64, f64))) -> bool {
    let cross = |o: (f64, f64), p: (f64, f64), q: (f64, f64)| {
        (p.0 - o.0) * (q.1 - o.1) - (p.1 - o.1) * (q.0 - o.0)
    };
    let d1 = cross(b.0, b.1, a.0);
    let d2 = cross(b.0, b.1, a.1);
    let d3 = cross(a.0, a.1, b.0);
    let d4 = cross(a.0, a.1, b.1);
    (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
}

// Clockwise on screen (y down), starting west.
const MOORE: [(isize, isize); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

/// Moore-neighbour trace of the outer boundary of the first component in
/// raster order. Returns pixel centers; an empty mask gives an empty contour.
pub fn trace_boundary(mask: &BinaryMask) -> Contour {
    let (w, h) = (mask.width(), mask.height());
    let Some(start) = (0..w * h).find(|&i| mask.data()[i]).map(|i| (i % w, i / w)) else {
        return Contour::new(Vec::new());
    };
    let fg = |x: isize, y: isize| mask.get_or_false(x, y);
    let start_i = (start.0 as isize, start.1 as isize);
    let mut points = vec![(start.0 as f64, start.1 as f64)];
    let mut cur = start_i;
    // backtrack position (known background)
    let mut back = (cur.0 - 1, cur.1);
    let mut first_move: Option<(isize, isize)> = None;
    let limit = 4 * w * h + 8;
    for _ in 0..limit {
        let rel = (back.0 - cur.0, back.1 - cur.1);
        let bdir = MOORE.iter().position(|&d| d == rel).unwrap_or(0);
        let mut next = None;
        for k in 1..=8 {
            let d = MOORE[(bdir + k) % 8];
            let cand = (cur.0 + d.0, cur.1 + d.1);
            if fg(cand.0, cand.1) {
                let pd = MOORE[(bdir + k - 1) % 8];
                back = (cur.0 + pd.0, cur.1 + pd.1);
                next = Some(cand);
                break;
            }
        }
        let Some(next) = next else {
            break; // isolated pixel
        };
        if cur == start_i {
            match first_move {
                None => first_move = Some(next),
                Some(m) if m == next => break,
                _ => {}
            }
        }
        cur = next;
        points.push((cur.0 as f64, cur.1 as f64));
    }
    // the closing revisit of the start pixel
    if points.len() > 1 && points.last() == Some(&(start.0 as f64, start.1 as f64)) {
        points.pop();
    }
    Contour::new(points)
}

/// Keeps every `stride`-th point; when that leaves fewer than 8 points, keeps
/// 8 equally spaced ones instead.
pub fn subsample_contour(c: &Contour, stride: usize) -> Contour {
    let n = c.len();
    if stride <= 1 {
        return c.clone();
    }
    let kept: Vec<_> = c.points.iter().step_by(stride).copied().collect();
    if kept.len() >= 8 || n < 8 {
        return if kept.len() >= 8 { Contour::new(kept) } else { c.clone() };
    }
    Contour::new(
        (0..8)
            .map(|k| c.points[((k * n) as f64 / 8.0).round() as usize % n])
            .collect(),
    )
}

fn internal_matrix(n: usize, p: &SnakeParams) -> Result<DMatrix<f64>> {
    let (a, b, tau) = (p.alpha, p.beta, p.time_step);
    let mut m = DMatrix::<f64>::identity(n, n);
    let coeffs = [(0isize, 2.0 * a + 6.0 * b), (1, -a - 4.0 * b), (-1, -a - 4.0 * b), (2, b), (-2, b)];
    for i in 0..n {
        for &(off, c) in &coeffs {
            let j = (i as isize + off).rem_euclid(n as isize) as usize;
            m[(i, j)] += tau * c;
        }
    }
    m.try_inverse()
        .ok_or_else(|| Error::InvalidParameter("snake internal matrix is singular".into()))
}

/// GVF snake on `img`: the field is computed here, then [`refine_in_field`] runs.
pub fn snake_refine(img: &Image, init: &Contour, p: &SnakeParams) -> Result<Contour> {
    let field = gvf_field(img, p);
    refine_in_field(&field, init, p)
}

/// Semi-implicit snake evolution `(I + tau A) x' = x + tau (F_gvf(x) + balloon n(x))`
/// where `A` encodes tension (`alpha`) and thin-plate (`beta`) energy, the GVF
/// force is scaled so its largest magnitude is 1, and `n` is the outward unit
/// normal. The contour is re-spaced to `point_spacing` every `resample_every`
/// steps and clamped to the field bounds.
pub fn refine_in_field(field: &VectorField, init: &Contour, p: &SnakeParams) -> Result<Contour> {
    p.validate()?;
    if init.distinct_points() < 3 {
        return Err(Error::ContourCollapsed);
    }
    let (xmax, ymax) = ((field.width - 1) as f64, (field.height - 1) as f64);
    let clamp = |(x, y): (f64, f64)| (x.clamp(0.0, xmax), y.clamp(0.0, ymax));
    let scale = {
        let m = field.max_magnitude();
        if m > 0.0 {
            1.0 / m
        } else {
            0.0
        }
    };
    let respace = |c: &Contour| -> Result<Contour> {
        let count = (c.perimeter() / p.point_spacing).round() as usize;
        let out = c.resampled(count.max(3));
        if out.distinct_points() < 3 {
            return Err(Error::ContourCollapsed);
        }
        Ok(out)
    };

    let mut contour = Contour::new(init.points.iter().copied().map(clamp).collect());
    contour = respace(&contour)?;
    let mut inverse = internal_matrix(contour.len(), p)?;
    for it in 0..p.iterations {
        if it > 0 && p.resample_every > 0 && it % p.resample_every == 0 {
            contour = respace(&contour)?;
            if inverse.nrows() != contour.len() {
                inverse = internal_matrix(contour.len(), p)?;
            }
        }
        let n = contour.len();
        let orient = if contour.signed_area() >= 0.0 { 1.0 } else { -1.0 };
        let mut rhs_x = nalgebra::DVector::<f64>::zeros(n);
        let mut rhs_y = nalgebra::DVector::<f64>::zeros(n);
        for i in 0..n {
            let (x, y) = contour.points[i];
            let (fx, fy) = field.sample(x, y);
            let (px, py) = contour.points[(i + n - 1) % n];
            let (qx, qy) = contour.points[(i + 1) % n];
            let (tx, ty) = (qx - px, qy - py);
            let tl = tx.hypot(ty);
            let (nx, ny) = if tl > 0.0 {
                (orient * ty / tl, -orient * tx / tl)
            } else {
                (0.0, 0.0)
            };
            rhs_x[i] = x + p.time_step * (scale * fx + p.balloon * nx);
            rhs_y[i] = y + p.time_step * (scale * fy + p.balloon * ny);
        }
        let nx = &inverse * rhs_x;
        let ny = &inverse * rhs_y;
        contour = Contour::new((0..n).map(|i| clamp((nx[i], ny[i]))).collect());
        if contour.distinct_points() < 3 {
            return Err(Error::ContourCollapsed);
        }
    }
    Ok(contour)
}

/// Even-odd fill sampled at pixel centers (integer coordinates). Vertices keep
/// their sub-pixel positions.
pub fn rasterize(c: &Contour, width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(width, height);
    let n = c.len();
    if n < 3 {
        return mask;
    }
    let mut xs = Vec::new();
    for y in 0..height {
        let yc = y as f64;
        xs.clear();
        for i in 0..n {
            let (x0, y0) = c.points[i];
            let (x1, y1) = c.points[(i + 1) % n];
            if (y0 <= yc && yc < y1) || (y1 <= yc && yc < y0) {
                xs.push(x0 + (yc - y0) / (y1 - y0) * (x1 - x0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let start = pair[0].ceil().max(0.0) as usize;
            let end = pair[1].floor().min(width as f64 - 1.0);
            if end < 0.0 {
                continue;
            }
            for x in start..=end as usize {
                mask.set(x, y, true);
            }
        }
    }
    mask
}
