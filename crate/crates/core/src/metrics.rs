//! Network metrics, distributions and repeatability statistics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::BinaryMask;
use crate::topology::{ElementClass, Skeleton, VesselNetwork};

pub const DIAMETER_BIN_UM: f64 = 5.0;
pub const LENGTH_BIN_MM: f64 = 0.1;
pub const TORTUOSITY_BIN: f64 = 0.05;

/// Coefficient of repeatability multiplier.
pub const CR_FACTOR: f64 = 2.77;

fn density(count: usize, area: usize) -> Result<f64> {
    if area == 0 {
        return Err(Error::Metric("zero effective analysis area".into()));
    }
    Ok(100.0 * count as f64 / area as f64)
}

/// Percentage of the analysis area classified as vessel.
pub fn vessel_area_density(mask: &BinaryMask) -> Result<f64> {
    density(mask.count(), mask.effective_area_px())
}

/// Skeleton pixels over analysis area, in percent (one-pixel vessel width).
pub fn vessel_length_density(skel: &Skeleton) -> Result<f64> {
    density(skel.count(), skel.effective_area_px())
}

/// Fixed-width histogram with bins `[k·w, (k+1)·w)` starting at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins cover every value; at least `min_bins` bins so that histograms of a curated
    /// network line up with the automatic one.
    pub fn build(values: &[f64], bin_width: f64, min_bins: usize) -> Self {
        let index = |v: f64| (v.max(0.0) / bin_width).floor() as usize;
        let needed = values.iter().map(|&v| index(v) + 1).max().unwrap_or(0);
        let bins = needed.max(min_bins);
        let mut counts = vec![0usize; bins];
        for &v in values {
            counts[index(v)] += 1;
        }
        let edges = (0..=bins).map(|k| k as f64 * bin_width).collect();
        Self { bin_width, edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Centers of bins that are strict local maxima (plateaus count once, at their first bin).
    pub fn modes(&self) -> Vec<f64> {
        let c = &self.counts;
        let mut out = Vec::new();
        let mut i = 0;
        while i < c.len() {
            let mut j = i;
            while j + 1 < c.len() && c[j + 1] == c[i] {
                j += 1;
            }
            let left = i == 0 || c[i - 1] < c[i];
            let right = j + 1 == c.len() || c[j + 1] < c[i];
            if c[i] > 0 && left && right {
                out.push((i as f64 + 0.5) * self.bin_width);
            }
            i = j + 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiameterStats {
    pub mean_um: f64,
    pub median_um: f64,
    pub histogram: Histogram,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Mean and median over per-element mean diameters of active elements.
pub fn diameter_stats(net: &VesselNetwork) -> Result<DiameterStats> {
    diameter_stats_aligned(net, 0)
}

pub fn diameter_stats_aligned(net: &VesselNetwork, min_bins: usize) -> Result<DiameterStats> {
    let mut d: Vec<f64> = net.active_elements().map(|e| e.mean_diameter_um).collect();
    if d.is_empty() {
        return Err(Error::Metric("no measurable elements".into()));
    }
    d.sort_by(f64::total_cmp);
    Ok(DiameterStats {
        mean_um: d.iter().sum::<f64>() / d.len() as f64,
        median_um: median(&d),
        histogram: Histogram::build(&d, DIAMETER_BIN_UM, min_bins),
    })
}

/// `L_s / L_c - 1` for one element; `None` for loops.
pub fn tortuosity(element: &crate::topology::Element) -> Option<f64> {
    element.tortuosity()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TortuosityStats {
    pub mean: f64,
    pub measured: usize,
    pub loops_skipped: usize,
    pub histogram: Histogram,
}

pub fn tortuosity_stats(net: &VesselNetwork) -> TortuosityStats {
    tortuosity_stats_aligned(net, 0)
}

pub fn tortuosity_stats_aligned(net: &VesselNetwork, min_bins: usize) -> TortuosityStats {
    let values: Vec<f64> = net.active_elements().filter_map(|e| e.tortuosity()).collect();
    let loops_skipped = net.active_elements().filter(|e| e.is_loop).count();
    let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
    TortuosityStats { mean, measured: values.len(), loops_skipped, histogram: Histogram::build(&values, TORTUOSITY_BIN, min_bins) }
}

/// Nodes per millimetre of active vessel length.
pub fn branchpoint_density(net: &VesselNetwork) -> Result<f64> {
    let length_mm = net.total_length_um() / 1000.0;
    if length_mm <= 0.0 {
        return Err(Error::Metric("zero total vessel length".into()));
    }
    Ok(net.active_node_count() as f64 / length_mm)
}

/// `1 - S_i / S_t`.
pub fn connectivity_factor(net: &VesselNetwork) -> Result<f64> {
    let total = net.total_count();
    if total == 0 {
        return Err(Error::Metric("network has no active elements".into()));
    }
    Ok(1.0 - net.isolated_count() as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FractalSource {
    #[default]
    Skeleton,
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FractalDimension {
    pub dimension: f64,
    pub stddev: f64,
    pub box_sizes: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Box-counting dimension: the negated least-squares slope of `log10 N(l)` against
/// `log10 l` for `l = 2, 4, 8, …` up to a quarter of the shorter side. `stddev` is the sample
/// standard deviation of the slopes between consecutive sizes.
pub fn fractal_dimension(bits: &[bool], width: usize, height: usize) -> Result<FractalDimension> {
    if bits.len() != width * height {
        return Err(Error::DimensionMismatch("raster size".into()));
    }
    if !bits.iter().any(|&b| b) {
        return Err(Error::Metric("empty foreground for box counting".into()));
    }
    let limit = width.min(height) / 4;
    let sizes: Vec<usize> = std::iter::successors(Some(2usize), |&l| Some(l * 2)).take_while(|&l| l <= limit).collect();
    if sizes.len() < 3 {
        return Err(Error::Metric(format!("only {} usable box sizes (need 3)", sizes.len())));
    }
    let counts: Vec<usize> = sizes
        .iter()
        .map(|&l| {
            let (bw, bh) = (width.div_ceil(l), height.div_ceil(l));
            let mut hit = vec![false; bw * bh];
            for y in 0..height {
                for x in 0..width {
                    if bits[y * width + x] {
                        hit[(y / l) * bw + x / l] = true;
                    }
                }
            }
            hit.iter().filter(|&&b| b).count()
        })
        .collect();
    let xs: Vec<f64> = sizes.iter().map(|&l| (l as f64).log10()).collect();
    let ys: Vec<f64> = counts.iter().map(|&n| (n as f64).log10()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let dimension = (-sxy / sxx).clamp(0.0, 2.0);
    let local: Vec<f64> = xs.windows(2).zip(ys.windows(2)).map(|(x, y)| -(y[1] - y[0]) / (x[1] - x[0])).collect();
    let lm = local.iter().sum::<f64>() / local.len() as f64;
    let stddev = (local.iter().map(|s| (s - lm).powi(2)).sum::<f64>() / (local.len() as f64 - 1.0)).sqrt();
    Ok(FractalDimension { dimension, stddev, box_sizes: sizes, counts })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityResult {
    pub mean: f64,
    pub sw: f64,
    pub cr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub m: usize,
}

/// Within-subject repeatability of an `n × m` matrix (subjects × repeats).
pub fn repeatability(values: &[Vec<f64>]) -> Result<RepeatabilityResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::MalformedTable("need at least 2 subjects".into()));
    }
    let m = values[0].len();
    if m < 2 {
        return Err(Error::MalformedTable("need at least 2 repeats".into()));
    }
    if values.iter().any(|r| r.len() != m) {
        return Err(Error::MalformedTable("ragged repeat matrix".into()));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::MalformedTable("non-finite value".into()));
    }
    let variance = |row: &Vec<f64>| {
        let mu = row.iter().sum::<f64>() / m as f64;
        row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1) as f64
    };
    let sw = (values.iter().map(variance).sum::<f64>() / n as f64).sqrt();
    let cr = CR_FACTOR * sw;
    let half = 1.96 * sw / ((2 * n * (m - 1)) as f64).sqrt();
    let mean = values.iter().flatten().sum::<f64>() / (n * m) as f64;
    Ok(RepeatabilityResult { mean, sw, cr, ci_low: cr - half, ci_high: cr + half, n, m })
}

#[derive(Debug, Deserialize)]
struct RepeatRow {
    subject: String,
    repeat: i64,
    value: f64,
}

/// Reads `subject,repeat,value` rows into a subjects × repeats matrix. Subjects keep their
/// first-seen order; repeats are ordered by index.
pub fn read_repeatability_csv(reader: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut subjects: Vec<(String, Vec<(i64, f64)>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: RepeatRow = row?;
        match subjects.iter_mut().find(|(s, _)| *s == row.subject) {
            Some((_, reps)) => reps.push((row.repeat, row.value)),
            None => subjects.push((row.subject, vec![(row.repeat, row.value)])),
        }
    }
    subjects
        .into_iter()
        .map(|(name, mut reps)| {
            reps.sort_by_key(|r| r.0);
            if reps.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::MalformedTable(format!("duplicate repeat for subject {name}")));
            }
            Ok(reps.into_iter().map(|r| r.1).collect())
        })
        .collect()
}

pub fn write_repeatability_csv(values: &[Vec<f64>], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject", "repeat", "value"])?;
    for (s, row) in values.iter().enumerate() {
        for (r, v) in row.iter().enumerate() {
            w.write_record([(s + 1).to_string(), (r + 1).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of results per metric: `metric,n,m,mean,sw,cr,ci_low,ci_high`.
pub fn write_repeatability_results(rows: &[(String, RepeatabilityResult)], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["metric", "n", "m", "mean", "sw", "cr", "ci_low", "ci_high"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.n.to_string(),
            r.m.to_string(),
            r.mean.to_string(),
            r.sw.to_string(),
            r.cr.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentRecord {
    pub id: usize,
    pub class: ElementClass,
    pub length_um: f64,
    pub mean_diameter_um: f64,
    pub tortuosity: Option<f64>,
    pub suppressed: bool,
    pub curated_out: bool,
}

/// Per-element measurements, one row per element with its status flags.
pub fn segment_table(net: &VesselNetwork) -> Vec<SegmentRecord> {
    net.elements
        .iter()
        .map(|e| SegmentRecord {
            id: e.id,
            class: e.class,
            length_um: e.length_um,
            mean_diameter_um: e.mean_diameter_um,
            tortuosity: e.tortuosity(),
            suppressed: e.suppressed,
            curated_out: e.curated_out,
        })
        .collect()
}

pub const SEGMENT_CSV_HEADER: &str = "id,class,length_um,mean_diameter_um,tortuosity,suppressed,curated_out";

pub fn segment_csv(records: &[SegmentRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SEGMENT_CSV_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.class.as_str().to_string(),
            r.length_um.to_string(),
            r.mean_diameter_um.to_string(),
            r.tortuosity.map(|t| t.to_string()).unwrap_or_default(),
            r.suppressed.to_string(),
            r.curated_out.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Encode(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Encode(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub diameter_um: Histogram,
    pub length_mm: Histogram,
    pub tortuosity: Histogram,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportParameters {
    pub method: String,
    pub sigma_max: Option<f64>,
    pub median_kernel: usize,
    pub twig_size_um: f64,
    pub fractal_source: FractalSource,
    pub curation_edits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementCounts {
    pub elements: usize,
    pub active: usize,
    pub isolated: usize,
    pub suppressed: usize,
    pub curated_out: usize,
    pub nodes: usize,
    pub meshes: usize,
    pub loops_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub vad_percent: f64,
    pub vld_percent: f64,
    pub mean_diameter_um: Option<f64>,
    pub median_diameter_um: Option<f64>,
    pub total_vessel_length_mm: f64,
    pub mean_tortuosity: f64,
    pub branchpoint_density_per_mm: Option<f64>,
    pub fractal_dimension: f64,
    pub fd_stddev: f64,
    pub cf: Option<f64>,
    pub counts: ElementCounts,
    pub histograms: Histograms,
    pub parameters: ReportParameters,
}

impl MetricsReport {
    /// Assembles every metric. `align` supplies histograms whose bin ranges the new ones must
    /// cover (used to compare curated against automatic distributions).
    pub fn compute(
        mask: &BinaryMask,
        skel: &Skeleton,
        net: &VesselNetwork,
        params: ReportParameters,
        align: Option<&Histograms>,
    ) -> Result<Self> {
        let bins = |f: fn(&Histograms) -> &Histogram| align.map_or(0, |h| f(h).counts.len());
        let diam = diameter_stats_aligned(net, bins(|h| &h.diameter_um)).ok();
        let tort = tortuosity_stats_aligned(net, bins(|h| &h.tortuosity));
        let lengths: Vec<f64> = net.active_elements().map(|e| e.length_um / 1000.0).collect();
        let fd = match params.fractal_source {
            FractalSource::Skeleton => fractal_dimension(skel.bits(), skel.width(), skel.height())?,
            FractalSource::Mask => fractal_dimension(mask.bits(), mask.width(), mask.height())?,
        };
        let diameter_hist = diam
            .as_ref()
            .map(|d| d.histogram.clone())
            .unwrap_or_else(|| Histogram::build(&[], DIAMETER_BIN_UM, bins(|h| &h.diameter_um)));
        Ok(Self {
            vad_percent: vessel_area_density(mask)?,
            vld_percent: vessel_length_density(skel)?,
            mean_diameter_um: diam.as_ref().map(|d| d.mean_um),
            median_diameter_um: diam.as_ref().map(|d| d.median_um),
            total_vessel_length_mm: net.total_length_um() / 1000.0,
            mean_tortuosity: tort.mean,
            branchpoint_density_per_mm: branchpoint_density(net).ok(),
            fractal_dimension: fd.dimension,
            fd_stddev: fd.stddev,
            cf: connectivity_factor(net).ok(),
            counts: ElementCounts {
                elements: net.elements.len(),
                active: net.total_count(),
                isolated: net.isolated_count(),
                suppressed: net.elements.iter().filter(|e| e.suppressed).count(),
                curated_out: net.elements.iter().filter(|e| e.curated_out).count(),
                nodes: net.active_node_count(),
                meshes: net.meshes.len(),
                loops_excluded: tort.loops_skipped,
            },
            histograms: Histograms {
                diameter_um: diameter_hist,
                length_mm: Histogram::build(&lengths, LENGTH_BIN_MM, bins(|h| &h.length_mm)),
                tortuosity: tort.histogram,
            },
            parameters: params,
        })
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
