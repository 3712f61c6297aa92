//! Session state and its on-disk layout.
//!
//! Each session lives in `<root>/<id>/`:
//!
//! ```text
//! source.bin      uploaded bytes, verbatim
//! config.json     current AnalysisParams
//! session.json    epoch and whether an analysis exists
//! edits.json      curation edit log of the current epoch
//! artifacts/      bundle files of the latest state
//! ```
//!
//! Everything served is a pure function of these files, so a restarted server reproduces
//! every response.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use octava_core::image::{encode_png, BitDepth};
use octava_core::pipeline::{
    analyze_image, config_hash, decode_input, sha256_hex, Analysis, AnalysisParams, EmitFlags, PipelineError,
    PipelineResult, Stage,
};
use octava_core::topology::CurationEdit;
use octava_core::{Error, GrayImage};
use serde::{Deserialize, Serialize};

const SOURCE_FILE: &str = "source.bin";
const CONFIG_FILE: &str = "config.json";
const SESSION_FILE: &str = "session.json";
const EDITS_FILE: &str = "edits.json";
const ARTIFACT_DIR: &str = "artifacts";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session not found")]
    NotFound,
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Io(std::io::Error::other(e))
    }
}

pub type StoreResult<T> = Result<T, StoreError>;

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    epoch: u64,
    analyzed: bool,
}

/// Rendered state of the latest analysis plus curation.
#[derive(Debug)]
pub struct Current {
    pub analysis: Analysis,
    /// Bundle files, identical to what the CLI writes.
    pub bundle: Vec<(String, Vec<u8>)>,
    /// Original, vesselness and mask layers. Curation does not change them.
    pub layers: Arc<Vec<(String, Vec<u8>)>>,
}

impl Current {
    fn build(analysis: Analysis, layers: Option<Arc<Vec<(String, Vec<u8>)>>>) -> PipelineResult<Self> {
        let bundle = analysis.bundle(EmitFlags::default())?;
        let layers = match layers {
            Some(l) => l,
            None => {
                let png = |img: &GrayImage| encode_png(img, BitDepth::Eight).map_err(|source| PipelineError { stage: Stage::Render, source });
                let mask = GrayImage::from_fn(analysis.mask.width(), analysis.mask.height(), analysis.mask.calibration(), |x, y| {
                    if analysis.mask.get(x, y) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .map_err(|source| PipelineError { stage: Stage::Render, source })?;
                Arc::new(vec![
                    ("original".to_string(), png(&analysis.image)?),
                    ("vesselness".to_string(), png(&analysis.enhanced)?),
                    ("mask".to_string(), png(&mask)?),
                ])
            }
        };
        Ok(Self { analysis, bundle, layers })
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.bundle.iter().chain(self.layers.iter()).find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub id: String,
    pub source: Arc<Vec<u8>>,
    pub source_sha256: String,
    pub width: usize,
    pub height: usize,
    pub params: AnalysisParams,
    pub epoch: u64,
    pub current: Option<Arc<Current>>,
}

impl SessionState {
    pub fn edits(&self) -> &[CurationEdit] {
        self.current.as_ref().map_or(&[], |c| c.analysis.edits.as_slice())
    }

    /// Cache key for artifacts: config hash, epoch and edit count. Edits only append within
    /// an epoch, so the triple names one state.
    pub fn etag(&self) -> Option<String> {
        self.current
            .as_ref()
            .map(|c| format!("\"{}-{}-{}\"", c.analysis.config_hash, self.epoch, c.analysis.edits.len()))
    }

    fn decode(&self, params: &AnalysisParams) -> PipelineResult<GrayImage> {
        decode_input(&self.source, params, None)
    }
}

/// One session's slot. Reads clone the `Arc` under a brief lock; mutations claim `busy`
/// first and swap the state in when done.
pub struct Slot {
    busy: AtomicBool,
    state: RwLock<Arc<SessionState>>,
}

pub struct MutationGuard<'a>(&'a Slot);

impl Drop for MutationGuard<'_> {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

impl Slot {
    fn new(state: SessionState) -> Self {
        Self { busy: AtomicBool::new(false), state: RwLock::new(Arc::new(state)) }
    }

    pub fn snapshot(&self) -> Arc<SessionState> {
        self.state.read().expect("session lock").clone()
    }

    pub fn begin(&self) -> StoreResult<MutationGuard<'_>> {
        self.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| MutationGuard(self))
            .map_err(|_| StoreError::Conflict("another analysis or curation is in progress for this session".into()))
    }

    fn replace(&self, _guard: &MutationGuard<'_>, state: SessionState) {
        *self.state.write().expect("session lock") = Arc::new(state);
    }
}

pub struct AnalyzeOutcome {
    pub state: Arc<SessionState>,
    pub cache_hit: bool,
}

pub struct Store {
    root: PathBuf,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn write_json(path: &Path, value: &impl Serialize) -> StoreResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(write_atomic(path, s.as_bytes())?)
}

fn valid_id(id: &str) -> bool {
    uuid::Uuid::try_parse(id).is_ok_and(|u| u.hyphenated().to_string() == id)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, slots: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Validates and persists an upload. `params` must carry the calibration.
    pub fn create(&self, bytes: Vec<u8>, params: AnalysisParams) -> StoreResult<Arc<SessionState>> {
        let img = decode_input(&bytes, &params, None).map_err(|e| StoreError::BadRequest(e.to_string()))?;
        let id = uuid::Uuid::new_v4().hyphenated().to_string();
        let dir = self.dir(&id);
        std::fs::create_dir_all(dir.join(ARTIFACT_DIR))?;
        write_atomic(&dir.join(SOURCE_FILE), &bytes)?;
        write_json(&dir.join(CONFIG_FILE), &params)?;
        write_json(&dir.join(EDITS_FILE), &Vec::<CurationEdit>::new())?;
        write_json(&dir.join(SESSION_FILE), &SessionMeta { epoch: 0, analyzed: false })?;
        let state = SessionState {
            id: id.clone(),
            source_sha256: sha256_hex(&bytes),
            source: Arc::new(bytes),
            width: img.width(),
            height: img.height(),
            params,
            epoch: 0,
            current: None,
        };
        let slot = Arc::new(Slot::new(state));
        let snap = slot.snapshot();
        self.slots.lock().expect("slot map").insert(id, slot);
        Ok(snap)
    }

    /// Returns the in-memory slot, loading it from disk after a restart.
    pub fn slot(&self, id: &str) -> StoreResult<Arc<Slot>> {
        if !valid_id(id) {
            return Err(StoreError::NotFound);
        }
        if let Some(s) = self.slots.lock().expect("slot map").get(id) {
            return Ok(s.clone());
        }
        let dir = self.dir(id);
        if !dir.join(SESSION_FILE).exists() {
            return Err(StoreError::NotFound);
        }
        let loaded = Arc::new(Slot::new(self.load(id, &dir)?));
        Ok(self.slots.lock().expect("slot map").entry(id.to_string()).or_insert(loaded).clone())
    }

    fn load(&self, id: &str, dir: &Path) -> StoreResult<SessionState> {
        let bytes = std::fs::read(dir.join(SOURCE_FILE))?;
        let params: AnalysisParams = serde_json::from_slice(&std::fs::read(dir.join(CONFIG_FILE))?)?;
        let meta: SessionMeta = serde_json::from_slice(&std::fs::read(dir.join(SESSION_FILE))?)?;
        let edits: Vec<CurationEdit> = serde_json::from_slice(&std::fs::read(dir.join(EDITS_FILE))?)?;
        let img = decode_input(&bytes, &params, None)?;
        let sha = sha256_hex(&bytes);
        let current = if meta.analyzed {
            let mut a = analyze_image(&img, &params, &sha)?;
            if !edits.is_empty() {
                a = a.with_edits(&edits)?;
            }
            Some(Arc::new(Current::build(a, None)?))
        } else {
            None
        };
        Ok(SessionState {
            id: id.to_string(),
            source: Arc::new(bytes),
            source_sha256: sha,
            width: img.width(),
            height: img.height(),
            params,
            epoch: meta.epoch,
            current,
        })
    }

    fn persist(&self, state: &SessionState) -> StoreResult<()> {
        let dir = self.dir(&state.id);
        write_json(&dir.join(CONFIG_FILE), &state.params)?;
        write_json(&dir.join(EDITS_FILE), &state.edits())?;
        let art = dir.join(ARTIFACT_DIR);
        if let Some(c) = &state.current {
            std::fs::create_dir_all(&art)?;
            for (name, bytes) in &c.bundle {
                write_atomic(&art.join(name), bytes)?;
            }
        }
        write_json(&dir.join(SESSION_FILE), &SessionMeta { epoch: state.epoch, analyzed: state.current.is_some() })
    }

    /// Re-runs the pipeline with `overrides` merged into the current parameters. Always
    /// starts a new epoch and clears curation. An unchanged config hash reuses the automatic
    /// network.
    pub fn analyze(&self, slot: &Slot, overrides: &serde_json::Value) -> StoreResult<AnalyzeOutcome> {
        let guard = slot.begin()?;
        let old = slot.snapshot();
        let params = old.params.with_overrides(overrides).map_err(|e| StoreError::BadRequest(e.to_string()))?;
        let hash = config_hash(&params, &old.source_sha256);
        let (current, cache_hit) = match &old.current {
            Some(c) if c.analysis.config_hash == hash => {
                let fresh = if c.analysis.edits.is_empty() {
                    c.clone()
                } else {
                    Arc::new(Current::build(c.analysis.with_edits(&[])?, Some(c.layers.clone()))?)
                };
                (fresh, true)
            }
            _ => {
                let img = old.decode(&params)?;
                let a = analyze_image(&img, &params, &old.source_sha256)?;
                (Arc::new(Current::build(a, None)?), false)
            }
        };
        let state = SessionState { params, epoch: old.epoch + 1, current: Some(current), ..(*old).clone() };
        self.persist(&state)?;
        slot.replace(&guard, state);
        Ok(AnalyzeOutcome { state: slot.snapshot(), cache_hit })
    }

    /// Appends `edits` to the log of `epoch`.
    pub fn curate(&self, slot: &Slot, epoch: u64, edits: &[CurationEdit]) -> StoreResult<Arc<SessionState>> {
        let guard = slot.begin()?;
        let old = slot.snapshot();
        let Some(cur) = &old.current else {
            return Err(StoreError::Conflict("no analysis yet; run analyze first".into()));
        };
        if epoch != old.epoch {
            return Err(StoreError::Conflict(format!(
                "stale epoch {epoch}; the session was re-analyzed and is at epoch {}",
                old.epoch
            )));
        }
        if edits.is_empty() {
            return Ok(old.clone());
        }
        let mut log = cur.analysis.edits.clone();
        log.extend_from_slice(edits);
        let analysis = cur.analysis.with_edits(&log).map_err(|e| match e.source {
            Error::UnknownElement(id) => StoreError::Conflict(format!("element {id} does not exist in epoch {epoch}")),
            _ => StoreError::Pipeline(e),
        })?;
        let current = Arc::new(Current::build(analysis, Some(cur.layers.clone()))?);
        let state = SessionState { current: Some(current), ..(*old).clone() };
        self.persist(&state)?;
        slot.replace(&guard, state);
        Ok(slot.snapshot())
    }
}
