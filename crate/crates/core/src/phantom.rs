//! Synthetic test images with analytically known geometry.
//!
//! Both generators rasterize with 4×4 supersampling and add seeded Gaussian noise. Ground
//! truth is computed from the geometric description, never from the rendered pixels.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Calibration, GrayImage};

const SUPERSAMPLE: usize = 4;

/// Tiled microfluidic-style grid.
///
/// Each tile carries one large horizontal channel near its top and a small horizontal
/// crossbar near its bottom. `small_per_tile` vertical small channels run from
/// the large channel down into the crossbar, so every junction is a T. The horizontal
/// channels run edge to edge and join neighbouring tiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridPhantomSpec {
    pub size_px: usize,
    pub pixel_size_um: f64,
    pub small_channel_um: f64,
    pub large_channel_um: f64,
    pub small_per_tile: usize,
    pub tiles: usize,
    pub background: f64,
    pub channel: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for GridPhantomSpec {
    fn default() -> Self {
        Self {
            size_px: 1080,
            pixel_size_um: 4.0,
            small_channel_um: 50.0,
            large_channel_um: 300.0,
            small_per_tile: 6,
            tiles: 4,
            background: 0.1,
            channel: 0.8,
            noise_std: 0.02,
            seed: 1,
        }
    }
}

/// Sinusoidal trunks crossing the image with sinusoidal connectors joining neighbouring trunks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkPhantomSpec {
    pub size_px: usize,
    pub pixel_size_um: f64,
    pub seed: u64,
    pub trunks: usize,
    pub connectors_per_gap: usize,
    pub diameter_range_um: (f64, f64),
    /// Fractional intensity dip along vessels (0 = uniform).
    pub intensity_variation: f64,
    /// Peak sideways excursion of the centerline in pixels.
    pub tortuosity_amplitude_px: f64,
    pub wavelength_px: f64,
    pub background: f64,
    pub vessel: f64,
    pub noise_std: f64,
}

impl Default for NetworkPhantomSpec {
    fn default() -> Self {
        Self {
            size_px: 1075,
            pixel_size_um: 9.3,
            seed: 7,
            trunks: 8,
            connectors_per_gap: 6,
            diameter_range_um: (40.0, 90.0),
            intensity_variation: 0.35,
            tortuosity_amplitude_px: 14.0,
            wavelength_px: 260.0,
            background: 0.08,
            vessel: 0.8,
            noise_std: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthElement {
    pub id: usize,
    pub kind: String,
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub length_um: f64,
    pub width_um: f64,
    pub tortuosity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub vad_percent: f64,
    pub vld_percent: f64,
    pub total_length_um: f64,
    pub node_count: usize,
    pub branchpoint_density_per_mm: f64,
    pub mean_diameter_um: f64,
    pub median_diameter_um: f64,
    pub nodes: Vec<(f64, f64)>,
    pub elements: Vec<TruthElement>,
}

impl GroundTruth {
    fn finish(
        width: usize,
        height: usize,
        px: f64,
        area_px: f64,
        nodes: Vec<(f64, f64)>,
        mut elements: Vec<TruthElement>,
    ) -> Self {
        for (i, e) in elements.iter_mut().enumerate() {
            e.id = i;
        }
        let total_length_um: f64 = elements.iter().map(|e| e.length_um).sum();
        let image_px = (width * height) as f64;
        let mut widths: Vec<f64> = elements.iter().map(|e| e.width_um).collect();
        widths.sort_by(f64::total_cmp);
        let n = widths.len();
        let median = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            widths[n / 2]
        } else {
            0.5 * (widths[n / 2 - 1] + widths[n / 2])
        };
        Self {
            vad_percent: 100.0 * area_px / image_px,
            vld_percent: 100.0 * (total_length_um / px) / image_px,
            total_length_um,
            node_count: nodes.len(),
            branchpoint_density_per_mm: nodes.len() as f64 / (total_length_um / 1000.0),
            mean_diameter_um: widths.iter().sum::<f64>() / n.max(1) as f64,
            median_diameter_um: median,
            nodes,
            elements,
        }
    }
}

fn check_levels(background: f64, level: f64, noise: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&background) || !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidParameter("intensity levels must lie in [0, 1]".into()));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidParameter("noise stddev must be non-negative".into()));
    }
    if (level - background).abs() <= 5.0 * noise {
        return Err(Error::InvalidParameter("contrast must exceed five noise stddevs".into()));
    }
    Ok(())
}

fn add_noise(values: &mut [f64], std: f64, seed: u64) {
    if std == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite stddev");
    for v in values.iter_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
}

/// Half-open interval on one axis.
#[derive(Clone, Copy, Debug)]
struct Span {
    lo: f64,
    hi: f64,
}

impl Span {
    fn contains(self, v: f64) -> bool {
        v >= self.lo && v < self.hi
    }
}

struct GridLayout {
    size: f64,
    /// Per tile row: large channel, crossbar, and the rows spanned by the small channels.
    rows: Vec<(Span, Span, Span)>,
    /// Small channel columns across the whole image.
    columns: Vec<Span>,
    small_px: f64,
    large_px: f64,
}

impl GridPhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size_um > 0.0) {
            return Err(Error::InvalidCalibration("pixel size must be positive".into()));
        }
        if self.tiles == 0 || self.small_per_tile == 0 {
            return Err(Error::InvalidParameter("need at least one tile and one small channel".into()));
        }
        let (small, large) = (self.small_channel_um / self.pixel_size_um, self.large_channel_um / self.pixel_size_um);
        if small < 2.0 || large < 2.0 {
            return Err(Error::InvalidParameter("channel widths must be at least 2 px".into()));
        }
        let tile = self.size_px as f64 / self.tiles as f64;
        if self.size_px < crate::image::MIN_ANALYSIS_SIDE {
            return Err(Error::TooSmall { width: self.size_px, height: self.size_px, min: crate::image::MIN_ANALYSIS_SIDE });
        }
        if tile / self.small_per_tile as f64 <= 2.0 * small {
            return Err(Error::InvalidParameter("small channels overlap".into()));
        }
        if 2.0 * (tile / 12.0).floor() + large + 3.0 * small >= tile {
            return Err(Error::InvalidParameter("large channel and crossbar do not fit in a tile".into()));
        }
        check_levels(self.background, self.channel, self.noise_std)
    }

    fn layout(&self) -> GridLayout {
        let tile = self.size_px as f64 / self.tiles as f64;
        let small = self.small_channel_um / self.pixel_size_um;
        let large = self.large_channel_um / self.pixel_size_um;
        let top = (tile / 12.0).floor();
        let mut rows = Vec::new();
        let mut columns = Vec::new();
        for t in 0..self.tiles {
            let origin = (t as f64 * tile).floor();
            let band = Span { lo: origin + top, hi: origin + top + large };
            // crossbar as far below the band as the band sits below the tile edge
            let bar_mid = (origin + tile - top - small / 2.0).floor() + 0.5;
            let bar = Span { lo: bar_mid - small / 2.0, hi: bar_mid + small / 2.0 };
            rows.push((band, bar, Span { lo: band.hi, hi: bar.lo }));
            for k in 0..self.small_per_tile {
                let c = origin + (k as f64 + 0.5) * tile / self.small_per_tile as f64;
                columns.push(Span { lo: c - small / 2.0, hi: c + small / 2.0 });
            }
        }
        GridLayout { size: self.size_px as f64, rows, columns, small_px: small, large_px: large }
    }
}

/// Renders the grid phantom and its ground truth.
pub fn generate_grid_phantom(spec: &GridPhantomSpec) -> Result<(GrayImage, GroundTruth)> {
    spec.validate()?;
    let n = spec.size_px;
    let lay = spec.layout();
    let ss = SUPERSAMPLE;
    let sub = |i: usize| (i / ss) as f64 + ((i % ss) as f64 + 0.5) / ss as f64;
    // supersample rows: 2 = inside a horizontal channel, 1 = inside the small-channel span
    let row_kind: Vec<u8> = (0..n * ss)
        .map(|i| {
            let y = sub(i);
            if lay.rows.iter().any(|(b, c, _)| b.contains(y) || c.contains(y)) {
                2
            } else if lay.rows.iter().any(|(_, _, s)| s.contains(y)) {
                1
            } else {
                0
            }
        })
        .collect();
    let col_hits: Vec<usize> =
        (0..n).map(|x| (0..ss).filter(|&k| lay.columns.iter().any(|s| s.contains(sub(x * ss + k)))).count()).collect();
    let total = (ss * ss) as f64;
    let mut values = Vec::with_capacity(n * n);
    for y in 0..n {
        let kinds = &row_kind[y * ss..(y + 1) * ss];
        let full = kinds.iter().filter(|&&k| k == 2).count();
        let spans = kinds.iter().filter(|&&k| k == 1).count();
        for &hits in &col_hits {
            let coverage = (full * ss + spans * hits) as f64 / total;
            values.push(spec.background + coverage * (spec.channel - spec.background));
        }
    }
    add_noise(&mut values, spec.noise_std, spec.seed);
    let img = GrayImage::new(n, n, values, Calibration::new(spec.pixel_size_um)?)?;
    Ok((img, grid_truth(spec, &lay)))
}

fn grid_truth(spec: &GridPhantomSpec, lay: &GridLayout) -> GroundTruth {
    let px = spec.pixel_size_um;
    let size = lay.size;
    let len = |s: Span| s.hi.min(size) - s.lo.max(0.0);
    let mid = |s: Span| 0.5 * (s.lo + s.hi);
    let mut xs: Vec<f64> = lay.columns.iter().map(|&s| mid(s)).collect();
    xs.sort_by(f64::total_cmp);
    let mut area = 0.0;
    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    let mut piece = |kind: &str, a: (f64, f64), b: (f64, f64), width_px: f64| {
        elements.push(TruthElement {
            id: 0,
            kind: kind.into(),
            start: a,
            end: b,
            length_um: (b.0 - a.0).hypot(b.1 - a.1) * px,
            width_um: width_px * px,
            tortuosity: 0.0,
        });
    };
    for &(band, bar, span) in &lay.rows {
        area += (len(band) + len(bar)) * size + xs.len() as f64 * lay.small_px * len(span);
        let (yb, yc) = (mid(band), mid(bar));
        let mut stops = vec![0.0];
        stops.extend(xs.iter().copied());
        stops.push(size);
        for w in stops.windows(2) {
            piece("large", (w[0], yb), (w[1], yb), lay.large_px);
            piece("small", (w[0], yc), (w[1], yc), lay.small_px);
        }
        for &x in &xs {
            nodes.push((x, yb));
            nodes.push((x, yc));
            piece("small", (x, yb), (x, yc), lay.small_px);
        }
    }
    nodes.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    GroundTruth::finish(spec.size_px, spec.size_px, px, area, nodes, elements)
}

/// Centerline `c(t) = base + amp·sin(2π t / wavelength + phase)` across one axis.
#[derive(Clone, Copy, Debug)]
struct Wave {
    base: f64,
    amp: f64,
    wavelength: f64,
    phase: f64,
}

impl Wave {
    fn at(&self, t: f64) -> f64 {
        self.base + self.amp * (std::f64::consts::TAU * t / self.wavelength + self.phase).sin()
    }

    fn slope(&self, t: f64) -> f64 {
        self.amp * std::f64::consts::TAU / self.wavelength * (std::f64::consts::TAU * t / self.wavelength + self.phase).cos()
    }
}

/// Connector `x = x0 + amp·sin(π·halves·(y - ya)/(yb - ya))` for `y` in `[ya, yb]`, so that
/// both ends sit on `x0`.
#[derive(Clone, Copy, Debug)]
struct Connector {
    x0: f64,
    ya: f64,
    yb: f64,
    amp: f64,
    halves: f64,
    radius: f64,
}

impl Connector {
    fn k(&self) -> f64 {
        std::f64::consts::PI * self.halves / (self.yb - self.ya)
    }

    fn at(&self, y: f64) -> f64 {
        self.x0 + self.amp * (self.k() * (y - self.ya)).sin()
    }

    fn slope(&self, y: f64) -> f64 {
        self.amp * self.k() * (self.k() * (y - self.ya)).cos()
    }
}

fn arc_length(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    // composite Simpson on sqrt(1 + f'^2)
    let steps = (((b - a).abs() * 4.0).ceil() as usize).max(8) * 2;
    let h = (b - a) / steps as f64;
    let g = |t: f64| (1.0 + f(t).powi(2)).sqrt();
    let mut s = g(a) + g(b);
    for i in 1..steps {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + i as f64 * h);
    }
    s * h / 3.0
}

impl NetworkPhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size_um > 0.0) {
            return Err(Error::InvalidCalibration("pixel size must be positive".into()));
        }
        if self.size_px < crate::image::MIN_ANALYSIS_SIDE || self.trunks < 2 {
            return Err(Error::InvalidParameter("need at least two trunks on an image of 16 px or more".into()));
        }
        let (lo, hi) = self.diameter_range_um;
        if !(lo > 0.0 && hi >= lo) || lo / self.pixel_size_um < 2.0 {
            return Err(Error::InvalidParameter("diameter range must be at least 2 px and ordered".into()));
        }
        if !(self.wavelength_px > 0.0) || !(self.tortuosity_amplitude_px >= 0.0) {
            return Err(Error::InvalidParameter("wave parameters must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.intensity_variation) {
            return Err(Error::InvalidParameter("intensity variation must lie in [0, 1)".into()));
        }
        let gap = self.size_px as f64 / self.trunks as f64;
        if gap <= 2.0 * self.tortuosity_amplitude_px + 2.0 * hi / self.pixel_size_um {
            return Err(Error::InvalidParameter("zero-length connectors: trunks too close".into()));
        }
        check_levels(self.background, self.vessel, self.noise_std)?;
        if (self.vessel * (1.0 - self.intensity_variation) - self.background).abs() <= 5.0 * self.noise_std {
            return Err(Error::InvalidParameter("modulated contrast must exceed five noise stddevs".into()));
        }
        Ok(())
    }
}

/// Renders the simulated vascular network and its ground truth.
pub fn generate_network_phantom(spec: &NetworkPhantomSpec) -> Result<(GrayImage, GroundTruth)> {
    spec.validate()?;
    let n = spec.size_px;
    let size = n as f64;
    let px = spec.pixel_size_um;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (dlo, dhi) = (spec.diameter_range_um.0 / px, spec.diameter_range_um.1 / px);
    let gap = size / spec.trunks as f64;

    let trunks: Vec<(Wave, f64)> = (0..spec.trunks)
        .map(|i| {
            let wave = Wave {
                base: (i as f64 + 0.5) * gap,
                amp: spec.tortuosity_amplitude_px * rng.random_range(0.6..1.0),
                wavelength: spec.wavelength_px * rng.random_range(0.8..1.25),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            };
            (wave, rng.random_range(dlo..=dhi) / 2.0)
        })
        .collect();
    let mut connectors = Vec::new();
    for i in 0..spec.trunks - 1 {
        let slot = size / spec.connectors_per_gap.max(1) as f64;
        for k in 0..spec.connectors_per_gap {
            let x0 = (k as f64 + rng.random_range(0.3..0.7)) * slot;
            let radius = rng.random_range(dlo..=dhi) / 2.0;
            connectors.push(Connector {
                x0,
                ya: trunks[i].0.at(x0),
                yb: trunks[i + 1].0.at(x0),
                amp: spec.tortuosity_amplitude_px * rng.random_range(0.5..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                halves: if rng.random_bool(0.5) { 1.0 } else { 2.0 },
                radius: radius.min(dhi / 2.0),
            });
        }
    }

    let level = |t: f64, period: f64, phase: f64| {
        let dip = 0.5 + 0.5 * (std::f64::consts::TAU * t / period + phase).sin();
        spec.vessel * (1.0 - spec.intensity_variation * dip)
    };
    let period = spec.wavelength_px * 0.7;
    let ss = SUPERSAMPLE;
    let sub = |i: usize, k: usize| i as f64 + (k as f64 + 0.5) / ss as f64;
    // precomputed per supersample column / row
    let cols: Vec<f64> = (0..n * ss).map(|i| sub(i / ss, i % ss)).collect();
    let trunk_cols: Vec<Vec<(f64, f64, f64)>> = trunks
        .iter()
        .enumerate()
        .map(|(ti, (w, r))| {
            cols.iter().map(|&x| (w.at(x), r * (1.0 + w.slope(x).powi(2)).sqrt(), level(x, period, ti as f64))).collect()
        })
        .collect();
    let mut values = vec![0.0; n * n];
    let total = (ss * ss) as f64;
    for y in 0..n {
        let rows: Vec<f64> = (0..ss).map(|k| sub(y, k)).collect();
        let conn_rows: Vec<Vec<Option<(f64, f64, f64)>>> = connectors
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                rows.iter()
                    .map(|&yy| {
                        (yy >= c.ya.min(c.yb) && yy <= c.ya.max(c.yb)).then(|| {
                            (c.at(yy), c.radius * (1.0 + c.slope(yy).powi(2)).sqrt(), level(yy, period, 10.0 + ci as f64))
                        })
                    })
                    .collect()
            })
            .collect();
        for x in 0..n {
            let mut acc = 0.0;
            for (ky, &yy) in rows.iter().enumerate() {
                for kx in 0..ss {
                    let ci = x * ss + kx;
                    let xx = cols[ci];
                    let mut v: f64 = spec.background;
                    for tc in &trunk_cols {
                        let (cy, half, l) = tc[ci];
                        if (yy - cy).abs() <= half {
                            v = v.max(l);
                        }
                    }
                    for cr in &conn_rows {
                        if let Some((cx, half, l)) = cr[ky] {
                            if (xx - cx).abs() <= half {
                                v = v.max(l);
                            }
                        }
                    }
                    acc += v;
                }
            }
            values[y * n + x] = acc / total;
        }
    }
    add_noise(&mut values, spec.noise_std, spec.seed ^ 0x9E37_79B9_7F4A_7C15);
    let img = GrayImage::new(n, n, values, Calibration::new(px)?)?;

    // ground truth
    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    let mut area = 0.0;
    let mut stops: Vec<Vec<f64>> = vec![vec![0.0, size]; spec.trunks];
    for (ci, c) in connectors.iter().enumerate() {
        let upper = ci / spec.connectors_per_gap;
        stops[upper].push(c.x0);
        stops[upper + 1].push(c.x0);
        nodes.push((c.x0, c.ya));
        nodes.push((c.x0, c.yb));
        let len = arc_length(|y| c.slope(y), c.ya, c.yb);
        let chord = (c.yb - c.ya).abs();
        // connector area outside the two trunks it joins
        let inside = trunks[upper].1 + trunks[upper + 1].1;
        area += 2.0 * c.radius * (len - inside);
        elements.push(TruthElement {
            id: 0,
            kind: "connector".into(),
            start: (c.x0, c.ya),
            end: (c.x0, c.yb),
            length_um: len * px,
            width_um: 2.0 * c.radius * px,
            tortuosity: len / chord - 1.0,
        });
    }
    for (ti, (w, r)) in trunks.iter().enumerate() {
        area += 2.0 * r * arc_length(|x| w.slope(x), 0.0, size);
        let s = &mut stops[ti];
        s.sort_by(f64::total_cmp);
        for seg in s.windows(2) {
            let len = arc_length(|x| w.slope(x), seg[0], seg[1]);
            let (a, b) = ((seg[0], w.at(seg[0])), (seg[1], w.at(seg[1])));
            let chord = (b.0 - a.0).hypot(b.1 - a.1);
            elements.push(TruthElement {
                id: 0,
                kind: "trunk".into(),
                start: a,
                end: b,
                length_um: len * px,
                width_um: 2.0 * r * px,
                tortuosity: if chord > 0.0 { len / chord - 1.0 } else { 0.0 },
            });
        }
    }
    nodes.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    Ok((img, GroundTruth::finish(n, n, px, area, nodes, elements)))
}
