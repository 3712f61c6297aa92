use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use octava_core::image::{save_image, BitDepth};
use octava_core::metrics::{read_repeatability_csv, repeatability, write_repeatability_results};
use octava_core::phantom::{generate_grid_phantom, generate_network_phantom, GridPhantomSpec, NetworkPhantomSpec};
use octava_core::pipeline::{
    repeat_matrices_from_summary, run_batch, run_single, AnalysisConfig, AnalysisParams, EmitFlags, SUMMARY_FILE,
    SUMMARY_METRICS,
};
use octava_core::{Calibration, GrayImage, RoiSpec};
use serde_json::{json, Map, Value};

/// Exit status when some, but not necessarily all, batch inputs failed.
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "octava", version, about = "Angiography network quantification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one image and write its report bundle.
    Analyze {
        input: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Analyze many images in parallel and write a summary CSV.
    Batch {
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
        /// Maximum parallel workers.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Within-subject repeatability from `subject,repeat,value` rows or a batch summary CSV.
    Repeatability {
        input: PathBuf,
        /// Treat `input` as a batch summary with this many consecutive rows per subject.
        #[arg(long)]
        repeats: Option<usize>,
        /// Summary columns to evaluate (comma separated). Defaults to every metric column.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// Write the result CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a validation phantom with its ground truth.
    Phantom {
        kind: PhantomKind,
        /// JSON spec; omitted fields take their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP curation service.
    Serve {
        /// Directory holding one subdirectory per session.
        #[arg(long, default_value = "sessions")]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8750")]
        addr: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    Grid,
    Network,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Grid,
    Network,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Fuzzy,
    Adaptive,
    Kmeans,
    Isodata,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Json,
    Csv,
    Overlay,
    Heatmap,
    Histograms,
}

#[derive(Args)]
struct RunOpts {
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Baseline parameters the config and flags are applied on top of.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Isotropic pixel size in μm; otherwise read from the `<image>.json` sidecar.
    #[arg(long)]
    pixel_size: Option<f64>,
    /// Anisotropic pitch `X,Y` in μm.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pixel_pitch: Option<Vec<f64>>,
    /// `rect:x,y,w,h` or `circle:cx,cy,r` in pixels.
    #[arg(long)]
    roi: Option<String>,
    #[arg(long)]
    resample: Option<f64>,
    /// Median kernel side (odd; 0 or 1 disables).
    #[arg(long)]
    median: Option<usize>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long, conflicts_with_all = ["sigma_max", "invert"])]
    no_frangi: bool,
    /// Enhance dark vessels on a bright background.
    #[arg(long)]
    invert: bool,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    offset: Option<f64>,
    /// Isolated elements thinner than this (μm) are suppressed.
    #[arg(long)]
    twig: Option<f64>,
    #[arg(long)]
    max_hole: Option<usize>,
    #[arg(long)]
    no_prune: bool,
    /// Box-count the skeleton or the mask.
    #[arg(long, value_parser = ["skeleton", "mask"])]
    fractal_source: Option<String>,
    /// Artifacts to write (comma separated); defaults to all.
    #[arg(long, value_enum, value_delimiter = ',')]
    emit: Vec<Emit>,
}

fn parse_roi(s: &str) -> Result<RoiSpec> {
    let (shape, rest) = s.split_once(':').context("ROI must look like rect:x,y,w,h or circle:cx,cy,r")?;
    let nums: Vec<usize> = rest.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>().context("ROI values must be integers")?;
    match (shape, nums.as_slice()) {
        ("rect", &[x, y, width, height]) => Ok(RoiSpec::Rectangle { x, y, width, height }),
        ("circle", &[cx, cy, radius]) => Ok(RoiSpec::Circle { cx, cy, radius }),
        _ => bail!("ROI must look like rect:x,y,w,h or circle:cx,cy,r"),
    }
}

const CONFIG_KEYS: [&str; 5] = ["inputs", "output_dir", "curation", "emit", "workers"];

impl RunOpts {
    /// Flag values as parameter overrides.
    fn overrides(&self) -> Result<Value> {
        let mut o = Map::new();
        let mut put = |k: &str, v: Value| {
            o.insert(k.to_string(), v);
        };
        if let Some(p) = self.pixel_size {
            put("pixel_size_um", json!(p));
        }
        if let Some(p) = &self.pixel_pitch {
            put("pixel_pitch_um", json!([p[0], p[1]]));
        }
        if let Some(r) = &self.roi {
            put("roi", serde_json::to_value(parse_roi(r)?)?);
        }
        if let Some(r) = self.resample {
            put("resample_factor", json!(r));
        }
        if let Some(m) = self.median {
            put("median_kernel", json!(m));
        }
        if self.no_frangi {
            put("frangi", Value::Null);
        } else {
            let mut f = Map::new();
            if let Some(s) = self.sigma_max {
                f.insert("sigma_max".into(), json!(s));
            }
            if self.invert {
                f.insert("invert".into(), json!(true));
            }
            if !f.is_empty() {
                put("frangi", Value::Object(f));
            }
        }
        if self.method.is_none() && (self.window.is_some() || self.offset.is_some()) {
            bail!("--window and --offset need --method");
        }
        if let Some(m) = self.method {
            let name = match m {
                Method::Fuzzy => "fuzzy",
                Method::Adaptive => "adaptive",
                Method::Kmeans => "kmeans",
                Method::Isodata => "isodata",
                Method::Global => "global",
            };
            let method = octava_core::SegmentationMethod::from_parts(name, self.window, self.offset)?;
            put("method", serde_json::to_value(method)?);
        }
        if let Some(t) = self.twig {
            put("twig_size_um", json!(t));
        }
        if let Some(h) = self.max_hole {
            put("max_hole_px", json!(h));
        }
        if self.no_prune {
            put("prune_spurs", json!(false));
        }
        if let Some(s) = &self.fractal_source {
            put("fractal_source", json!(s));
        }
        Ok(Value::Object(o))
    }

    /// Preset, then config file, then flags.
    fn config(&self) -> Result<AnalysisConfig> {
        let base = match self.preset.unwrap_or(Preset::Default) {
            Preset::Default => AnalysisParams::default(),
            Preset::Grid => AnalysisParams::grid_phantom(),
            Preset::Network => AnalysisParams::network_phantom(),
        };
        let mut cfg = AnalysisConfig::default();
        let mut params = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let raw: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            cfg = serde_json::from_value(raw.clone()).with_context(|| format!("invalid config {}", path.display()))?;
            let mut file_params = raw.as_object().cloned().unwrap_or_default();
            for k in CONFIG_KEYS {
                file_params.remove(k);
            }
            params = params.with_overrides(&Value::Object(file_params))?;
        }
        cfg.params = params.with_overrides(&self.overrides()?)?;
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if !self.emit.is_empty() {
            let has = |e: fn(&Emit) -> bool| self.emit.iter().any(e);
            cfg.emit = EmitFlags {
                json: has(|e| matches!(e, Emit::Json)),
                csv: has(|e| matches!(e, Emit::Csv)),
                overlay: has(|e| matches!(e, Emit::Overlay)),
                heatmap: has(|e| matches!(e, Emit::Heatmap)),
                histograms: has(|e| matches!(e, Emit::Histograms)),
            };
        }
        Ok(cfg)
    }
}

fn analyze(input: Option<PathBuf>, opts: &RunOpts) -> Result<ExitCode> {
    let mut cfg = opts.config()?;
    if let Some(i) = input {
        cfg.inputs = vec![i];
    }
    if cfg.inputs.len() != 1 {
        bail!("analyze takes exactly one input image; use batch for several");
    }
    cfg.validate()?;
    let record = run_single(&cfg)?;
    for w in &record.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", record.report.to_json()?.trim_end());
    Ok(ExitCode::SUCCESS)
}

fn batch(inputs: Vec<PathBuf>, opts: &RunOpts, workers: Option<usize>) -> Result<ExitCode> {
    let mut cfg = opts.config()?;
    if !inputs.is_empty() {
        cfg.inputs = inputs;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    if cfg.output_dir.is_none() {
        bail!("batch needs --out or output_dir in the config");
    }
    let outcome = run_batch(&cfg)?;
    for (path, res) in &outcome.results {
        match res {
            Ok(r) => eprintln!("ok     {} ({:.0} ms)", path.display(), r.total_millis),
            Err(e) => eprintln!("FAILED {}: {e}", path.display()),
        }
    }
    let out = cfg.output_dir.as_deref().expect("checked above").join(SUMMARY_FILE);
    eprintln!("summary written to {}", out.display());
    let failed = outcome.failures();
    if failed > 0 {
        eprintln!("{failed} of {} inputs failed", outcome.results.len());
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn repeatability_cmd(input: &Path, repeats: Option<usize>, metrics: Vec<String>, out: Option<PathBuf>) -> Result<ExitCode> {
    let reader = BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?);
    let rows = match repeats {
        Some(m) => {
            let metrics = if metrics.is_empty() { SUMMARY_METRICS.iter().map(|s| s.to_string()).collect() } else { metrics };
            repeat_matrices_from_summary(reader, m, &metrics)?
                .into_iter()
                .map(|(name, matrix)| Ok((name, repeatability(&matrix)?)))
                .collect::<Result<Vec<_>>>()?
        }
        None => {
            if !metrics.is_empty() {
                bail!("--metrics applies to summary input; pass --repeats as well");
            }
            vec![("value".to_string(), repeatability(&read_repeatability_csv(reader)?)?)]
        }
    };
    match out {
        Some(path) => write_repeatability_results(&rows, File::create(&path)?)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            write_repeatability_results(&rows, &mut stdout)?;
            stdout.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read_spec<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid phantom spec {}", p.display()))
        }
    }
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn phantom(kind: PhantomKind, spec: Option<&Path>, out: &Path) -> Result<ExitCode> {
    std::fs::create_dir_all(out)?;
    let (img, truth, spec_json): (GrayImage, _, Value) = match kind {
        PhantomKind::Grid => {
            let s: GridPhantomSpec = read_spec(spec)?;
            let (img, truth) = generate_grid_phantom(&s)?;
            (img, truth, serde_json::to_value(&s)?)
        }
        PhantomKind::Network => {
            let s: NetworkPhantomSpec = read_spec(spec)?;
            let (img, truth) = generate_network_phantom(&s)?;
            (img, truth, serde_json::to_value(&s)?)
        }
    };
    let image_path = out.join("phantom.png");
    save_image(&img, &image_path, BitDepth::Sixteen)?;
    write_json(&Calibration::sidecar_path(&image_path), &img.calibration())?;
    write_json(&out.join("truth.json"), &truth)?;
    write_json(&out.join("spec.json"), &spec_json)?;
    eprintln!("wrote {} and truth.json", image_path.display());
    Ok(ExitCode::SUCCESS)
}

fn serve(root: PathBuf, addr: SocketAddr) -> Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(octava_server::serve(root, addr))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { input, opts } => analyze(input, &opts),
        Command::Batch { inputs, opts, workers } => batch(inputs, &opts, workers),
        Command::Repeatability { input, repeats, metrics, out } => repeatability_cmd(&input, repeats, metrics, out),
        Command::Phantom { kind, spec, out } => phantom(kind, spec.as_deref(), &out),
        Command::Serve { root, addr } => serve(root, addr),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
