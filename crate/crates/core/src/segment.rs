//! Vessel/background classification.
//!
//! The histogram-based methods (k-means, ISODATA, fuzzy) work on a 256-bin histogram with
//! bin `floor(256·v)`, so they are deterministic and bit-depth independent.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Calibration, GrayImage};

const BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum SegmentationMethod {
    /// Pixels brighter than the mean intensity are vessel.
    Global,
    /// Two-cluster Lloyd iteration, vessel = brighter cluster.
    Kmeans,
    /// Ridler–Calvard iterative threshold.
    Isodata,
    /// Pixel brighter than its local window mean plus `offset`. The window defaults to a
    /// quarter of the shorter image side.
    Adaptive {
        #[serde(default)]
        window: Option<usize>,
        #[serde(default)]
        offset: f64,
    },
    /// Two-class fuzzy c-means on the histogram. A pixel is vessel when the average of its own
    /// bright-class membership and the mean membership over the surrounding window exceeds ½.
    Fuzzy {
        #[serde(default = "default_fuzzy_window")]
        window: usize,
    },
}

fn default_fuzzy_window() -> usize {
    15
}

impl Default for SegmentationMethod {
    fn default() -> Self {
        SegmentationMethod::Fuzzy { window: default_fuzzy_window() }
    }
}

impl SegmentationMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SegmentationMethod::Global => "global",
            SegmentationMethod::Kmeans => "kmeans",
            SegmentationMethod::Isodata => "isodata",
            SegmentationMethod::Adaptive { .. } => "adaptive",
            SegmentationMethod::Fuzzy { .. } => "fuzzy",
        }
    }

    /// Builds a method from its CLI name and optional window/offset flags.
    pub fn from_parts(name: &str, window: Option<usize>, offset: Option<f64>) -> Result<Self> {
        let m = match name {
            "global" => SegmentationMethod::Global,
            "kmeans" => SegmentationMethod::Kmeans,
            "isodata" => SegmentationMethod::Isodata,
            "adaptive" => SegmentationMethod::Adaptive { window, offset: offset.unwrap_or(0.0) },
            "fuzzy" => SegmentationMethod::Fuzzy { window: window.unwrap_or_else(default_fuzzy_window) },
            other => return Err(Error::InvalidParameter(format!("unknown segmentation method '{other}'"))),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |w: usize| {
            if w < 3 || w.is_multiple_of(2) {
                Err(Error::InvalidParameter(format!("window must be odd and at least 3, got {w}")))
            } else {
                Ok(())
            }
        };
        match *self {
            SegmentationMethod::Adaptive { window: Some(w), offset } => {
                check(w)?;
                if !offset.is_finite() {
                    return Err(Error::InvalidParameter("offset must be finite".into()));
                }
                Ok(())
            }
            SegmentationMethod::Fuzzy { window } => check(window),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for SegmentationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    calibration: Calibration,
    effective_area_px: usize,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>, calibration: Calibration) -> Result<Self> {
        if bits.len() != width * height || width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!("{} bits for a {width}x{height} mask", bits.len())));
        }
        Ok(Self { width, height, bits, calibration, effective_area_px: width * height })
    }

    pub fn from_fn(width: usize, height: usize, calibration: Calibration, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, bits, calibration, effective_area_px: width * height }
    }

    pub fn with_effective_area(mut self, area_px: usize) -> Result<Self> {
        if area_px > self.width * self.height {
            return Err(Error::InvalidParameter("effective area exceeds the mask size".into()));
        }
        self.effective_area_px = area_px;
        Ok(self)
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

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    pub fn effective_area_px(&self) -> usize {
        self.effective_area_px
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Sets every 4-connected background component of at most `max_area_px` pixels that does
    /// not touch the image border to foreground.
    pub fn fill_small_holes(&self, max_area_px: usize) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        let mut bits = self.bits.clone();
        if max_area_px == 0 {
            return Self { bits, ..self.clone() };
        }
        let mut seen = vec![false; w * h];
        let mut stack = Vec::new();
        let mut component = Vec::new();
        for start in 0..w * h {
            if self.bits[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            component.clear();
            let mut border = false;
            while let Some(i) = stack.pop() {
                component.push(i);
                let (x, y) = (i % w, i / w);
                border |= x == 0 || y == 0 || x == w - 1 || y == h - 1;
                let mut visit = |j: usize| {
                    if !self.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if !border && component.len() <= max_area_px {
                for &i in &component {
                    bits[i] = true;
                }
            }
        }
        Self { bits, ..self.clone() }
    }
}

#[inline]
pub fn intensity_bin(v: f64) -> usize {
    ((v * BINS as f64) as usize).min(BINS - 1)
}

fn histogram(img: &GrayImage) -> Result<[u64; BINS]> {
    let mut h = [0u64; BINS];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in img.region_values() {
        h[intensity_bin(v)] += 1;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) || h.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(degenerate());
    }
    Ok(h)
}

fn degenerate() -> Error {
    Error::Degenerate(
        "image has no usable contrast; assess its quality and exclude it from the analysis".into(),
    )
}

/// Ridler–Calvard threshold bin: pixels in bins `> t` are vessel.
pub fn isodata_threshold(img: &GrayImage) -> Result<usize> {
    let h = histogram(img)?;
    isodata_on_histogram(&h)
}

fn class_means(h: &[u64; BINS], t: usize) -> Option<(f64, f64)> {
    let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0f64, 0u64, 0f64);
    for (b, &c) in h.iter().enumerate() {
        if b <= t {
            n0 += c;
            s0 += c as f64 * b as f64;
        } else {
            n1 += c;
            s1 += c as f64 * b as f64;
        }
    }
    (n0 > 0 && n1 > 0).then(|| (s0 / n0 as f64, s1 / n1 as f64))
}

fn isodata_on_histogram(h: &[u64; BINS]) -> Result<usize> {
    let total: u64 = h.iter().sum();
    let mean = h.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum::<f64>() / total as f64;
    let mut t = mean.floor() as usize;
    let mut seen = [false; BINS];
    loop {
        let (lo, hi) = class_means(h, t).ok_or_else(degenerate)?;
        let next = ((lo + hi) / 2.0).floor() as usize;
        if next == t {
            return Ok(t);
        }
        if seen[next] {
            // oscillation between neighbouring bins: settle on the lower one
            return Ok(t.min(next));
        }
        seen[t] = true;
        t = next;
    }
}

fn percentile_bin(h: &[u64; BINS], q: f64) -> usize {
    let total: u64 = h.iter().sum();
    let target = (q * total as f64).ceil().max(1.0) as u64;
    let mut acc = 0;
    for (b, &c) in h.iter().enumerate() {
        acc += c;
        if acc >= target {
            return b;
        }
    }
    BINS - 1
}

fn initial_centers(h: &[u64; BINS]) -> (f64, f64) {
    let (mut lo, mut hi) = (percentile_bin(h, 0.25) as f64, percentile_bin(h, 0.75) as f64);
    if lo == hi {
        lo = h.iter().position(|&c| c > 0).unwrap_or(0) as f64;
        hi = h.iter().rposition(|&c| c > 0).unwrap_or(BINS - 1) as f64;
    }
    (lo, hi)
}

/// Per-bin flag: bin belongs to the bright cluster after 2-means convergence.
fn kmeans_bins(h: &[u64; BINS]) -> [bool; BINS] {
    let (mut c_lo, mut c_hi) = initial_centers(h);
    let mut assign = [false; BINS];
    loop {
        let mut next = [false; BINS];
        for (b, a) in next.iter_mut().enumerate() {
            let b = b as f64;
            *a = (b - c_hi).abs() < (b - c_lo).abs();
        }
        if next == assign {
            break;
        }
        assign = next;
        let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0f64, 0u64, 0f64);
        for (b, &c) in h.iter().enumerate() {
            if assign[b] {
                n1 += c;
                s1 += c as f64 * b as f64;
            } else {
                n0 += c;
                s0 += c as f64 * b as f64;
            }
        }
        if n0 > 0 {
            c_lo = s0 / n0 as f64;
        }
        if n1 > 0 {
            c_hi = s1 / n1 as f64;
        }
    }
    assign
}

/// Bright-class membership of each bin from two-class fuzzy c-means (fuzzifier 2).
fn fuzzy_memberships(h: &[u64; BINS]) -> [f64; BINS] {
    let (mut c_lo, mut c_hi) = initial_centers(h);
    let membership = |b: f64, c_lo: f64, c_hi: f64| -> f64 {
        let (d_lo, d_hi) = ((b - c_lo).abs(), (b - c_hi).abs());
        if d_hi == 0.0 {
            1.0
        } else if d_lo == 0.0 {
            0.0
        } else {
            let r = d_hi / d_lo;
            1.0 / (1.0 + r * r)
        }
    };
    for _ in 0..1000 {
        let (mut w_lo, mut s_lo, mut w_hi, mut s_hi) = (0f64, 0f64, 0f64, 0f64);
        for (b, &c) in h.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let u = membership(b as f64, c_lo, c_hi);
            let (a, v) = ((u * u) * c as f64, ((1.0 - u) * (1.0 - u)) * c as f64);
            w_hi += a;
            s_hi += a * b as f64;
            w_lo += v;
            s_lo += v * b as f64;
        }
        let (n_lo, n_hi) = (s_lo / w_lo, s_hi / w_hi);
        let shift = (n_lo - c_lo).abs().max((n_hi - c_hi).abs());
        c_lo = n_lo;
        c_hi = n_hi;
        if shift < 1e-10 {
            break;
        }
    }
    let mut out = [0.0; BINS];
    for (b, u) in out.iter_mut().enumerate() {
        *u = membership(b as f64, c_lo, c_hi);
    }
    out
}

/// Summed-area table over `values`, counting only pixels where `weight` is set.
struct Integral {
    w: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Integral {
    fn new(w: usize, h: usize, values: &[f64], include: impl Fn(usize) -> bool) -> Self {
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut count = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let (mut rs, mut rc) = (0.0, 0u32);
            for x in 0..w {
                let i = y * w + x;
                if include(i) {
                    rs += values[i];
                    rc += 1;
                }
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + rs;
                count[(y + 1) * stride + x + 1] = count[y * stride + x + 1] + rc;
            }
        }
        Self { w, sum, count }
    }

    /// Mean over the window clamped to the image, `None` if it holds no counted pixel.
    fn mean(&self, x: usize, y: usize, r: usize, h: usize) -> Option<f64> {
        let stride = self.w + 1;
        let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
        let (x1, y1) = ((x + r + 1).min(self.w), (y + r + 1).min(h));
        let s = self.sum[y1 * stride + x1] - self.sum[y0 * stride + x1] - self.sum[y1 * stride + x0]
            + self.sum[y0 * stride + x0];
        let c = self.count[y1 * stride + x1] + self.count[y0 * stride + x0]
            - self.count[y0 * stride + x1]
            - self.count[y1 * stride + x0];
        (c > 0).then(|| s / c as f64)
    }
}

pub fn default_adaptive_window(width: usize, height: usize) -> usize {
    ((width.min(height) / 4) | 1).max(3)
}

pub fn binarize(img: &GrayImage, method: &SegmentationMethod) -> Result<BinaryMask> {
    method.validate()?;
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let n = w * h;
    let vals: Vec<f64> = img.region_values().collect();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if vals.is_empty() || !(hi > lo) {
        return Err(degenerate());
    }
    let bits: Vec<bool> = match *method {
        SegmentationMethod::Global => {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (0..n).map(|i| img.in_region(i) && px[i] > mean).collect()
        }
        SegmentationMethod::Isodata => {
            let t = isodata_threshold(img)?;
            (0..n).map(|i| img.in_region(i) && intensity_bin(px[i]) > t).collect()
        }
        SegmentationMethod::Kmeans => {
            let bright = kmeans_bins(&histogram(img)?);
            (0..n).map(|i| img.in_region(i) && bright[intensity_bin(px[i])]).collect()
        }
        SegmentationMethod::Adaptive { window, offset } => {
            let win = window.unwrap_or_else(|| default_adaptive_window(w, h));
            let integral = Integral::new(w, h, px, |i| img.in_region(i));
            let r = win / 2;
            (0..n)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    img.in_region(i) && integral.mean(x, y, r, h).is_some_and(|m| px[i] > m + offset)
                })
                .collect()
        }
        SegmentationMethod::Fuzzy { window } => {
            let u = fuzzy_memberships(&histogram(img)?);
            let member: Vec<f64> = px.iter().map(|&v| u[intensity_bin(v)]).collect();
            let integral = Integral::new(w, h, &member, |i| img.in_region(i));
            let r = window / 2;
            (0..n)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    img.in_region(i) && integral.mean(x, y, r, h).is_some_and(|m| 0.5 * (member[i] + m) > 0.5)
                })
                .collect()
        }
    };
    BinaryMask::new(w, h, bits, img.calibration())?.with_effective_area(img.effective_area_px())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub vad_percent: f64,
    /// `None` when the method produced no network elements.
    pub cf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "vad_percent", "cf"])?;
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                format!("{:.4}", r.vad_percent),
                r.cf.map(|c| format!("{c:.4}")).unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Segments with each method and reports vessel area density and connectivity factor.
pub fn compare_methods(img: &GrayImage, methods: &[SegmentationMethod], twig_size_um: f64) -> Result<ComparisonTable> {
    if methods.len() < 2 {
        return Err(Error::InvalidParameter("comparison needs at least two methods".into()));
    }
    let rows = methods
        .iter()
        .map(|m| {
            let mask = binarize(img, m)?;
            let vad = crate::metrics::vessel_area_density(&mask)?;
            let cf = if mask.count() == 0 {
                None
            } else {
                let skel = crate::topology::skeletonize(&mask)?;
                let thick = crate::topology::local_thickness(&mask)?;
                let net = crate::topology::extract_network(&skel, &thick, twig_size_um)?;
                crate::metrics::connectivity_factor(&net).ok()
            };
            Ok(ComparisonRow { method: m.name().to_string(), vad_percent: vad, cf })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable { rows })
}
