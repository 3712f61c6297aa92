//! End-to-end orchestration for single images and batches, plus artifact emission.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enhance::{frangi_vesselness, median_filter, FrangiParams};
use crate::error::{Error, Result};
use crate::image::{decode_image, make_isotropic, resample, select_roi, Calibration, GrayImage, RoiSpec};
use crate::metrics::{segment_csv, segment_table, FractalSource, Histograms, MetricsReport, ReportParameters};
use crate::render::{render_heatmap, render_overlay};
use crate::segment::{binarize, BinaryMask, SegmentationMethod};
use crate::topology::{
    apply_curation, extract_network, local_thickness, prune_spurs, skeletonize, CurationEdit, Skeleton, ThicknessMap,
    VesselNetwork,
};

/// Processing parameters. Everything here feeds the config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// Isotropic pixel size. When absent the `<image>.json` sidecar is read.
    pub pixel_size_um: Option<f64>,
    /// Anisotropic source pitches `(x, y)`; resampled to the finer one.
    pub pixel_pitch_um: Option<(f64, f64)>,
    pub roi: Option<RoiSpec>,
    pub resample_factor: f64,
    /// Median kernel side; 0 or 1 disables the filter.
    pub median_kernel: usize,
    /// `None` disables Frangi enhancement.
    pub frangi: Option<FrangiParams>,
    pub method: SegmentationMethod,
    /// Enclosed background regions up to this many pixels are filled after binarization.
    pub max_hole_px: usize,
    /// Defaults to twice the pixel size.
    pub twig_size_um: Option<f64>,
    pub prune_spurs: bool,
    pub fractal_source: FractalSource,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            pixel_size_um: None,
            pixel_pitch_um: None,
            roi: None,
            resample_factor: 1.0,
            median_kernel: 3,
            frangi: Some(FrangiParams::default()),
            method: SegmentationMethod::default(),
            max_hole_px: 8,
            twig_size_um: None,
            prune_spurs: true,
            fractal_source: FractalSource::Skeleton,
        }
    }
}

impl AnalysisParams {
    /// Settings for the clean grid phantom: no vesselness filter so both channel widths
    /// survive unchanged.
    pub fn grid_phantom() -> Self {
        Self { frangi: None, ..Self::default() }
    }

    /// Settings for the simulated network phantom: σ_max of 7 px, structure sensitivity
    /// matched to its vessel contrast, and a relaxed blobness term so T-junctions stay joined.
    pub fn network_phantom() -> Self {
        let frangi = FrangiParams { c: Some(0.15), beta: 1.5, ..FrangiParams::with_sigma_max(7.0) };
        Self { frangi: Some(frangi), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = &self.frangi {
            f.validate()?;
        }
        self.method.validate()?;
        if !(self.resample_factor.is_finite() && self.resample_factor > 0.0) {
            return Err(Error::InvalidParameter("resample factor must be positive".into()));
        }
        if self.median_kernel > 1 && self.median_kernel.is_multiple_of(2) {
            return Err(Error::InvalidParameter("median kernel must be odd".into()));
        }
        if let Some(t) = self.twig_size_um {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidParameter("twig size must be non-negative".into()));
            }
        }
        if let Some(p) = self.pixel_size_um {
            Calibration::new(p)?;
        }
        Ok(())
    }

    /// Applies a JSON object of field overrides. Nested objects merge field by field; `null`
    /// resets an optional field. The result is validated.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self> {
        fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
            match (base, patch) {
                (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
                    for (k, v) in p {
                        merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
                    }
                }
                (b, p) => *b = p.clone(),
            }
        }
        let mut base = serde_json::to_value(self)?;
        match overrides {
            serde_json::Value::Null => {}
            serde_json::Value::Object(_) => merge(&mut base, overrides),
            _ => return Err(Error::InvalidParameter("overrides must be a JSON object".into())),
        }
        let out: Self = serde_json::from_value(base)?;
        out.validate()?;
        Ok(out)
    }

    fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    fn resolve_calibration(&self, source: Option<&Path>) -> Result<Calibration> {
        if let Some((px, py)) = self.pixel_pitch_um {
            return Calibration::new(px.min(py));
        }
        if let Some(p) = self.pixel_size_um {
            return Calibration::new(p);
        }
        match source {
            Some(path) if Calibration::sidecar_path(path).exists() => Calibration::from_sidecar(Calibration::sidecar_path(path)),
            _ => Err(Error::InvalidCalibration("no pixel size given and no sidecar found".into())),
        }
    }
}

/// Which artifacts to write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmitFlags {
    pub json: bool,
    pub csv: bool,
    pub overlay: bool,
    pub heatmap: bool,
    pub histograms: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self { json: true, csv: true, overlay: true, heatmap: true, histograms: true }
    }
}

/// Full run description as read from a JSON config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub inputs: Vec<PathBuf>,
    pub output_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub params: AnalysisParams,
    pub curation: Vec<CurationEdit>,
    pub emit: EmitFlags,
    /// Upper bound on parallel batch workers.
    pub workers: Option<usize>,
}

impl AnalysisConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.params.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for p in &self.inputs {
            if !p.exists() {
                return Err(Error::Unreadable { path: p.clone(), message: "file does not exist".into() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Roi,
    Resample,
    Median,
    Frangi,
    Binarize,
    Skeletonize,
    Thickness,
    Network,
    Curation,
    Metrics,
    Render,
    Write,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Roi => "roi",
            Stage::Resample => "resample",
            Stage::Median => "median",
            Stage::Frangi => "frangi",
            Stage::Binarize => "binarize",
            Stage::Skeletonize => "skeletonize",
            Stage::Thickness => "thickness",
            Stage::Network => "network",
            Stage::Curation => "curation",
            Stage::Metrics => "metrics",
            Stage::Render => "render",
            Stage::Write => "write",
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Error,
}

impl PipelineError {
    /// The image itself is unusable, as opposed to a bad parameter.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.source, Error::Degenerate(_) | Error::EmptyMask)
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage.as_str(), self.source)?;
        if self.is_degenerate() {
            write!(f, "; the image is likely of insufficient quality and should be excluded from analysis")?;
        }
        Ok(())
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait Tag<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> Tag<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub millis: f64,
}

/// Every intermediate product of one analysis.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub params: AnalysisParams,
    pub input_sha256: String,
    /// Hash of the parameters and input bytes; identifies the automatic network.
    pub config_hash: String,
    /// Image after ROI and resampling, before filtering.
    pub image: GrayImage,
    /// Binarization input (after median and, if enabled, Frangi).
    pub enhanced: GrayImage,
    pub mask: BinaryMask,
    pub skeleton: Skeleton,
    pub thickness: ThicknessMap,
    pub auto_network: VesselNetwork,
    pub auto_report: MetricsReport,
    pub edits: Vec<CurationEdit>,
    pub network: VesselNetwork,
    pub report: MetricsReport,
    pub warnings: Vec<String>,
    pub timings: Vec<StageTiming>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over the canonical parameter JSON and the input digest.
pub fn config_hash(params: &AnalysisParams, input_sha256: &str) -> String {
    let mut h = Sha256::new();
    h.update(params.canonical_json().as_bytes());
    h.update([0u8]);
    h.update(input_sha256.as_bytes());
    hex::encode(h.finalize())
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: Stage, f: impl FnOnce() -> Result<T>) -> PipelineResult<T> {
    let start = Instant::now();
    let out = f().at(stage)?;
    timings.push(StageTiming { stage, millis: start.elapsed().as_secs_f64() * 1000.0 });
    Ok(out)
}

/// Decodes image bytes with the calibration implied by `params` and `source`.
pub fn decode_input(bytes: &[u8], params: &AnalysisParams, source: Option<&Path>) -> PipelineResult<GrayImage> {
    params.validate().at(Stage::Config)?;
    let cal = params.resolve_calibration(source).at(Stage::Load)?;
    let img = decode_image(bytes, cal).map_err(|e| match (e, source) {
        (Error::Unreadable { message, .. }, Some(p)) => Error::Unreadable { path: p.to_path_buf(), message },
        (e, _) => e,
    });
    let img = img.at(Stage::Load)?;
    match params.pixel_pitch_um {
        Some((px, py)) => make_isotropic(&img, px, py).at(Stage::Load),
        None => Ok(img),
    }
}

/// Output of the image-domain stages, before any skeleton work.
#[derive(Clone, Debug)]
pub struct Segmentation {
    /// After ROI and resampling.
    pub image: GrayImage,
    pub enhanced: GrayImage,
    pub mask: BinaryMask,
    pub timings: Vec<StageTiming>,
}

/// ROI, resampling, median, optional Frangi, binarization and hole filling.
pub fn segment_image(img: &GrayImage, params: &AnalysisParams) -> PipelineResult<Segmentation> {
    params.validate().at(Stage::Config)?;
    let mut t = Vec::new();
    let img = match &params.roi {
        Some(roi) => timed(&mut t, Stage::Roi, || select_roi(img, roi))?,
        None => img.clone(),
    };
    let img = if params.resample_factor != 1.0 {
        timed(&mut t, Stage::Resample, || resample(&img, params.resample_factor))?
    } else {
        img
    };
    let filtered = if params.median_kernel > 1 {
        timed(&mut t, Stage::Median, || median_filter(&img, params.median_kernel))?
    } else {
        img.clone()
    };
    let enhanced = match &params.frangi {
        Some(f) => timed(&mut t, Stage::Frangi, || frangi_vesselness(&filtered, f))?,
        None => filtered,
    };
    let mask = timed(&mut t, Stage::Binarize, || Ok(binarize(&enhanced, &params.method)?.fill_small_holes(params.max_hole_px)))?;
    Ok(Segmentation { image: img, enhanced, mask, timings: t })
}

/// Runs every stage on an already decoded image.
pub fn analyze_image(img: &GrayImage, params: &AnalysisParams, input_sha256: &str) -> PipelineResult<Analysis> {
    let Segmentation { image: img, enhanced, mask, timings: mut t } = segment_image(img, params)?;
    let thickness = timed(&mut t, Stage::Thickness, || local_thickness(&mask))?;
    let skeleton = timed(&mut t, Stage::Skeletonize, || {
        let s = skeletonize(&mask)?;
        if params.prune_spurs {
            prune_spurs(&s, &thickness)
        } else {
            Ok(s)
        }
    })?;
    let twig = params.twig_size_um.unwrap_or(2.0 * img.calibration().pixel_size_um);
    let network = timed(&mut t, Stage::Network, || extract_network(&skeleton, &thickness, twig))?;
    let report_params = ReportParameters {
        method: params.method.name().to_string(),
        sigma_max: params.frangi.map(|f| f.sigma_max),
        median_kernel: params.median_kernel,
        twig_size_um: twig,
        fractal_source: params.fractal_source,
        curation_edits: 0,
    };
    let report = timed(&mut t, Stage::Metrics, || MetricsReport::compute(&mask, &skeleton, &network, report_params, None))?;
    let mut warnings = Vec::new();
    if report.counts.loops_excluded > 0 {
        warnings.push(format!("{} closed loops excluded from tortuosity", report.counts.loops_excluded));
    }
    if report.counts.suppressed > 0 {
        warnings.push(format!("{} isolated elements suppressed by the twig filter", report.counts.suppressed));
    }
    if report.counts.active == 0 {
        warnings.push("no active elements; diameter metrics unavailable".into());
    }
    Ok(Analysis {
        params: params.clone(),
        input_sha256: input_sha256.to_string(),
        config_hash: config_hash(params, input_sha256),
        image: img,
        enhanced,
        mask,
        skeleton,
        thickness,
        auto_network: network.clone(),
        auto_report: report.clone(),
        edits: Vec::new(),
        network,
        report,
        warnings,
        timings: t,
    })
}

impl Analysis {
    /// Replaces the edit log and recomputes the curated network and report. Histograms share
    /// bins with the automatic ones.
    pub fn with_edits(&self, edits: &[CurationEdit]) -> PipelineResult<Analysis> {
        let network = apply_curation(&self.auto_network, edits).at(Stage::Curation)?;
        let params = ReportParameters { curation_edits: edits.len(), ..self.auto_report.parameters.clone() };
        let report =
            MetricsReport::compute(&self.mask, &self.skeleton, &network, params, Some(&self.auto_report.histograms))
                .at(Stage::Metrics)?;
        Ok(Analysis { edits: edits.to_vec(), network, report, ..self.clone() })
    }

    /// Hash identifying the reported numbers: the config hash extended by the edit log.
    pub fn result_hash(&self) -> String {
        if self.edits.is_empty() {
            return self.config_hash.clone();
        }
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        h.update(serde_json::to_string(&self.edits).expect("edits serialize").as_bytes());
        hex::encode(h.finalize())
    }

    pub fn histogram_comparison(&self) -> HistogramComparison {
        HistogramComparison { automatic: self.auto_report.histograms.clone(), curated: self.report.histograms.clone() }
    }

    /// All requested artifacts as `(file name, bytes)`, in a fixed order.
    pub fn bundle(&self, emit: EmitFlags) -> PipelineResult<Vec<(String, Vec<u8>)>> {
        let mut files = Vec::new();
        if emit.json {
            files.push((METRICS_FILE.to_string(), self.report.to_json().at(Stage::Write)?.into_bytes()));
        }
        if emit.csv {
            files.push((ELEMENTS_FILE.to_string(), segment_csv(&segment_table(&self.network)).at(Stage::Write)?.into_bytes()));
        }
        if emit.overlay {
            files.push((OVERLAY_FILE.to_string(), render_overlay(&self.image, &self.network).at(Stage::Render)?));
        }
        if emit.heatmap {
            files.push((HEATMAP_FILE.to_string(), render_heatmap(&self.thickness).at(Stage::Render)?));
        }
        if emit.histograms {
            let json = serde_json::to_string_pretty(&self.histogram_comparison()).map_err(Error::from).at(Stage::Write)?;
            files.push((HISTOGRAMS_FILE.to_string(), (json + "\n").into_bytes()));
        }
        Ok(files)
    }
}

pub const METRICS_FILE: &str = "metrics.json";
pub const ELEMENTS_FILE: &str = "elements.csv";
pub const OVERLAY_FILE: &str = "overlay.png";
pub const HEATMAP_FILE: &str = "thickness.png";
pub const HISTOGRAMS_FILE: &str = "histograms.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramComparison {
    pub automatic: Histograms,
    pub curated: Histograms,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub input: PathBuf,
    pub config_hash: String,
    pub report: MetricsReport,
    pub timings: Vec<StageTiming>,
    pub total_millis: f64,
    pub warnings: Vec<String>,
    pub output_dir: Option<PathBuf>,
}

fn write_bundle(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn run_path(path: &Path, cfg: &AnalysisConfig, out_dir: Option<&Path>) -> PipelineResult<RunRecord> {
    let start = Instant::now();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Unreadable { path: path.to_path_buf(), message: e.to_string() })
        .at(Stage::Load)?;
    let img = decode_input(&bytes, &cfg.params, Some(path))?;
    let mut analysis = analyze_image(&img, &cfg.params, &sha256_hex(&bytes))?;
    if !cfg.curation.is_empty() {
        analysis = analysis.with_edits(&cfg.curation)?;
    }
    if let Some(dir) = out_dir {
        let files = analysis.bundle(cfg.emit)?;
        write_bundle(dir, &files).at(Stage::Write)?;
    }
    Ok(RunRecord {
        input: path.to_path_buf(),
        config_hash: analysis.result_hash(),
        report: analysis.report,
        timings: analysis.timings,
        total_millis: start.elapsed().as_secs_f64() * 1000.0,
        warnings: analysis.warnings,
        output_dir: out_dir.map(Path::to_path_buf),
    })
}

/// Analyzes `cfg.inputs[0]` and writes its artifacts directly into `cfg.output_dir`.
pub fn run_single(cfg: &AnalysisConfig) -> PipelineResult<RunRecord> {
    let input = cfg
        .inputs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no input image".into()))
        .at(Stage::Config)?;
    cfg.params.validate().at(Stage::Config)?;
    run_path(input, cfg, cfg.output_dir.as_deref())
}

/// One entry per input, in input order.
#[derive(Debug)]
pub struct BatchOutcome {
    pub results: Vec<(PathBuf, PipelineResult<RunRecord>)>,
    pub summary_csv: String,
}

impl BatchOutcome {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|(_, r)| r.is_err()).count()
    }
}

/// Output subdirectory names: file stems, with `_2`, `_3`, ... appended on collisions.
fn subdir_names(inputs: &[PathBuf]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            let mut name = stem.clone();
            let mut k = 2;
            while seen.contains(&name) {
                name = format!("{stem}_{k}");
                k += 1;
            }
            seen.push(name.clone());
            name
        })
        .collect()
}

/// Analyzes every input in parallel. Failures are recorded per image.
pub fn run_batch(cfg: &AnalysisConfig) -> PipelineResult<BatchOutcome> {
    if cfg.inputs.is_empty() {
        return Err(Error::InvalidParameter("batch needs at least one input".into())).at(Stage::Config);
    }
    cfg.params.validate().at(Stage::Config)?;
    let names = subdir_names(&cfg.inputs);
    let work = || -> Vec<PipelineResult<RunRecord>> {
        cfg.inputs
            .par_iter()
            .zip(names.par_iter())
            .map(|(path, name)| {
                let dir = cfg.output_dir.as_ref().map(|d| d.join(name));
                run_path(path, cfg, dir.as_deref())
            })
            .collect()
    };
    let results = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))
            .at(Stage::Config)?
            .install(work),
        None => work(),
    };
    let results: Vec<_> = cfg.inputs.iter().cloned().zip(results).collect();
    let summary_csv = summary_csv(&results).at(Stage::Write)?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join(SUMMARY_FILE), &summary_csv)).map_err(Error::from).at(Stage::Write)?;
    }
    Ok(BatchOutcome { results, summary_csv })
}

/// Metric columns of the batch summary, in order.
pub const SUMMARY_METRICS: [&str; 10] = [
    "vad_percent",
    "vld_percent",
    "mean_diameter_um",
    "median_diameter_um",
    "total_vessel_length_mm",
    "mean_tortuosity",
    "branchpoint_density_per_mm",
    "fractal_dimension",
    "fd_stddev",
    "cf",
];

fn metric_values(r: &MetricsReport) -> [Option<f64>; 10] {
    [
        Some(r.vad_percent),
        Some(r.vld_percent),
        r.mean_diameter_um,
        r.median_diameter_um,
        Some(r.total_vessel_length_mm),
        Some(r.mean_tortuosity),
        r.branchpoint_density_per_mm,
        Some(r.fractal_dimension),
        Some(r.fd_stddev),
        r.cf,
    ]
}

fn summary_csv(results: &[(PathBuf, PipelineResult<RunRecord>)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["input", "status", "error", "config_hash"];
    header.extend(SUMMARY_METRICS);
    w.write_record(&header)?;
    for (path, res) in results {
        let mut row = vec![path.display().to_string()];
        match res {
            Ok(rec) => {
                row.extend(["ok".to_string(), String::new(), rec.config_hash.clone()]);
                row.extend(metric_values(&rec.report).iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            }
            Err(e) => {
                row.extend(["failed".to_string(), e.to_string(), String::new()]);
                row.extend(std::iter::repeat_n(String::new(), SUMMARY_METRICS.len()));
            }
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Encode(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Encode(e.to_string()))
}

/// Turns a batch summary into subject × repeat matrices, one per requested metric. Rows are
/// taken in order, `repeats` consecutive rows per subject. Failed rows are rejected.
pub fn repeat_matrices_from_summary(
    reader: impl std::io::Read,
    repeats: usize,
    metrics: &[String],
) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    if repeats < 2 {
        return Err(Error::MalformedTable("need at least 2 repeats per subject".into()));
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<usize> = metrics
        .iter()
        .map(|m| header.iter().position(|h| h == m).ok_or_else(|| Error::MalformedTable(format!("no column '{m}'"))))
        .collect::<Result<_>>()?;
    let status = header.iter().position(|h| h == "status");
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if let Some(s) = status {
            if &rec[s] != "ok" {
                return Err(Error::MalformedTable(format!("row {} is a failed run", i + 1)));
            }
        }
        let vals = cols
            .iter()
            .map(|&c| rec[c].parse::<f64>().map_err(|_| Error::MalformedTable(format!("row {}: '{}' is not a number", i + 1, &rec[c]))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    if rows.is_empty() || !rows.len().is_multiple_of(repeats) {
        return Err(Error::MalformedTable(format!("{} rows do not divide into repeats of {repeats}", rows.len())));
    }
    Ok(metrics
        .iter()
        .enumerate()
        .map(|(k, name)| (name.clone(), rows.chunks(repeats).map(|c| c.iter().map(|r| r[k]).collect()).collect()))
        .collect())
}
