//! Noise suppression and multi-scale vesselness enhancement.
//!
//! The Hessian at scale σ is the σ²-normalized response of the image to the three
//! second-order Gaussian derivative kernels. Eigenvalues are ordered `|λ1| ≤ |λ2|`; a bright
//! tubular structure has `λ2 < 0` and `λ1 ≈ 0`. Per scale the vesselness is
//!
//! ```text
//! V = exp(-Rb² / 2β²) · (1 - exp(-S² / 2c²))     Rb = λ1/λ2,  S = sqrt(λ1² + λ2²)
//! ```
//!
//! and the multi-scale response is the per-pixel maximum over the σ sweep, finally rescaled by
//! its global maximum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Default structureness sensitivity, in σ²-normalized intensity units.
///
/// A unit-contrast Gaussian ridge has a peak normalized Hessian magnitude of `2/(3√3) ≈ 0.385`
/// at its best scale, independent of the ridge width.
pub const DEFAULT_STRUCTURE_SENSITIVITY: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrangiParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_step: f64,
    pub beta: f64,
    /// Structureness sensitivity shared by all scales. `None` selects half the maximum
    /// Frobenius norm recomputed at each scale.
    pub c: Option<f64>,
    /// Enhance dark vessels on a bright background.
    pub invert: bool,
}

impl Default for FrangiParams {
    fn default() -> Self {
        Self {
            sigma_min: 1.0,
            sigma_max: 8.0,
            sigma_step: 1.0,
            beta: 0.5,
            c: Some(DEFAULT_STRUCTURE_SENSITIVITY),
            invert: false,
        }
    }
}

impl FrangiParams {
    pub fn with_sigma_max(sigma_max: f64) -> Self {
        Self { sigma_max, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max) {
            return bad("require 0 < sigma_min <= sigma_max");
        }
        if !(self.sigma_step > 0.0) {
            return bad("sigma_step must be positive");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return bad("c must be positive");
            }
        }
        Ok(())
    }

    pub fn scales(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut i = 0u32;
        loop {
            let s = self.sigma_min + i as f64 * self.sigma_step;
            if s > self.sigma_max + 1e-9 {
                break;
            }
            out.push(s);
            i += 1;
        }
        out
    }
}

/// Maps an expected maximum vessel diameter to a σ_max in pixels (10 μm per unit of σ).
pub fn sigma_max_for_diameter(diameter_um: f64) -> f64 {
    (diameter_um / 10.0).round().max(1.0)
}

/// Per-pixel 2×2 symmetric Hessian, scale-normalized by σ².
#[derive(Clone, Debug)]
pub struct HessianField {
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
}

impl HessianField {
    /// Eigenvalues `(λ1, λ2)` with `|λ1| ≤ |λ2|`.
    #[inline]
    pub fn eigenvalues(&self, idx: usize) -> (f64, f64) {
        eigen_sorted(self.xx[idx], self.xy[idx], self.yy[idx])
    }

    pub fn frobenius(&self, idx: usize) -> f64 {
        let (a, b, c) = (self.xx[idx], self.xy[idx], self.yy[idx]);
        (a * a + 2.0 * b * b + c * c).sqrt()
    }
}

#[inline]
fn eigen_sorted(a: f64, b: f64, c: f64) -> (f64, f64) {
    let half_trace = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (m1, m2) = (half_trace + disc, half_trace - disc);
    if m1.abs() <= m2.abs() {
        (m1, m2)
    } else {
        (m2, m1)
    }
}

/// Median over a `kernel × kernel` window with edge replication.
pub fn median_filter(img: &GrayImage, kernel: usize) -> Result<GrayImage> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("median kernel must be odd and positive, got {kernel}")));
    }
    if kernel == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let r = (kernel / 2) as isize;
    let src = img.pixels();
    let mid = kernel * kernel / 2;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut window = Vec::with_capacity(kernel * kernel);
        for (x, dst) in row.iter_mut().enumerate() {
            window.clear();
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    window.push(src[yy * w + xx]);
                }
            }
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            *dst = *m;
        }
    });
    Ok(img.with_pixels(out))
}

struct DerivativeKernels {
    radius: usize,
    smooth: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Sampled Gaussian and derivative kernels truncated at 3σ, used as correlation weights.
///
/// Moment conditions are enforced exactly on the sampled taps: Σw₀ = 1; Σk·w₁ = 1;
/// Σw₂ = 0 and Σk²·w₂ = 2. Constants therefore map to zero and quadratics to their exact
/// second derivative.
fn derivative_kernels(sigma: f64) -> DerivativeKernels {
    let radius = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (-(radius as isize)..=radius as isize).map(|k| k as f64).collect();
    let g: Vec<f64> = taps.iter().map(|k| (-k * k / (2.0 * sigma * sigma)).exp()).collect();
    let gsum: f64 = g.iter().sum();
    let smooth: Vec<f64> = g.iter().map(|v| v / gsum).collect();

    let mut first: Vec<f64> = taps.iter().zip(&g).map(|(k, v)| k * v).collect();
    let m1: f64 = taps.iter().zip(&first).map(|(k, v)| k * v).sum();
    first.iter_mut().for_each(|v| *v /= m1);

    let mut second: Vec<f64> = taps.iter().zip(&g).map(|(k, v)| (k * k - sigma * sigma) * v).collect();
    let mean = second.iter().sum::<f64>() / second.len() as f64;
    second.iter_mut().for_each(|v| *v -= mean);
    let m2: f64 = taps.iter().zip(&second).map(|(k, v)| k * k * v).sum();
    second.iter_mut().for_each(|v| *v *= 2.0 / m2);

    DerivativeKernels { radius, smooth, first, second }
}

fn correlate_rows(src: &[f64], w: usize, h: usize, kernel: &[f64], radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let line = &src[y * w..(y + 1) * w];
        for (x, dst) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + j as isize - radius as isize).clamp(0, w as isize - 1) as usize;
                acc += kv * line[xx];
            }
            *dst = acc;
        }
    });
    out
}

fn correlate_cols(src: &[f64], w: usize, h: usize, kernel: &[f64], radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (j, kv) in kernel.iter().enumerate() {
            let yy = (y as isize + j as isize - radius as isize).clamp(0, h as isize - 1) as usize;
            let line = &src[yy * w..(yy + 1) * w];
            for (dst, v) in row.iter_mut().zip(line) {
                *dst += kv * v;
            }
        }
    });
    out
}

pub fn hessian_at_scale(img: &GrayImage, sigma: f64) -> Result<HessianField> {
    hessian_of(img.pixels(), img.width(), img.height(), sigma)
}

fn hessian_of(src: &[f64], w: usize, h: usize, sigma: f64) -> Result<HessianField> {
    if !(sigma >= 0.5 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be at least 0.5, got {sigma}")));
    }
    let k = derivative_kernels(sigma);
    let norm = sigma * sigma;
    let (xx, (xy, yy)) = rayon::join(
        || correlate_rows(&correlate_cols(src, w, h, &k.smooth, k.radius), w, h, &k.second, k.radius),
        || {
            rayon::join(
                || correlate_rows(&correlate_cols(src, w, h, &k.first, k.radius), w, h, &k.first, k.radius),
                || correlate_cols(&correlate_rows(src, w, h, &k.smooth, k.radius), w, h, &k.second, k.radius),
            )
        },
    );
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x * norm).collect::<Vec<_>>();
    Ok(HessianField { width: w, height: h, sigma, xx: scale(xx), xy: scale(xy), yy: scale(yy) })
}

/// Hessian magnitudes below this are rounding residue from flat neighbourhoods.
const FLAT_TOLERANCE: f64 = 1e-9;

fn single_scale_response(field: &HessianField, beta: f64, c: Option<f64>) -> Vec<f64> {
    let n = field.xx.len();
    let c = c.unwrap_or_else(|| {
        let max = (0..n).map(|i| field.frobenius(i)).fold(0.0, f64::max);
        0.5 * max
    });
    if c <= FLAT_TOLERANCE {
        return vec![0.0; n];
    }
    let (two_b2, two_c2) = (2.0 * beta * beta, 2.0 * c * c);
    (0..n)
        .map(|i| {
            let (l1, l2) = field.eigenvalues(i);
            if l2 > -FLAT_TOLERANCE {
                return 0.0;
            }
            let rb = l1 / l2;
            let s2 = l1 * l1 + l2 * l2;
            (-rb * rb / two_b2).exp() * (1.0 - (-s2 / two_c2).exp())
        })
        .collect()
}

/// Multi-scale vesselness before the final rescaling.
pub fn frangi_response(img: &GrayImage, p: &FrangiParams) -> Result<Vec<f64>> {
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    let src: Vec<f64> = if p.invert { img.pixels().iter().map(|v| 1.0 - v).collect() } else { img.pixels().to_vec() };
    let per_scale: Vec<Vec<f64>> = p
        .scales()
        .into_par_iter()
        .map(|s| hessian_of(&src, w, h, s).map(|f| single_scale_response(&f, p.beta, p.c)))
        .collect::<Result<_>>()?;
    let mut out = vec![0.0f64; w * h];
    for resp in &per_scale {
        for (o, v) in out.iter_mut().zip(resp) {
            *o = o.max(*v);
        }
    }
    Ok(out)
}

/// Vesselness in `[0, 1]`, rescaled by the global maximum response.
pub fn frangi_vesselness(img: &GrayImage, p: &FrangiParams) -> Result<GrayImage> {
    let mut resp = frangi_response(img, p)?;
    for (i, v) in resp.iter_mut().enumerate() {
        if !img.in_region(i) {
            *v = 0.0;
        }
    }
    let max = resp.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        resp.iter_mut().for_each(|v| *v /= max);
    }
    Ok(img.with_pixels(resp))
}
