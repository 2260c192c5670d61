//! Paraphrase augmentation of human train corrections through an instruction-tuned LM,
//! with a line-delimited response cache so re-runs are offline and deterministic.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::traj::{CorrectionSample, Dataset, Source, Split, TrajError};

pub const TEMPLATE: &str =
    "You are a teacher providing feedback to a student learning a control task. List 3 short paraphrases of the feedback ";
pub const PARAPHRASES_PER_SAMPLE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("could not parse 3 distinct paraphrases: {0}")]
    Parse(String),
    #[error("client error: {0}")]
    Client(String),
    #[error("{path}:{line}: corrupt cache record: {message}")]
    CacheCorruption { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = AugmentError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseRequest {
    pub sample_id: String,
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseSet {
    pub sample_id: String,
    pub paraphrases: [String; PARAPHRASES_PER_SAMPLE],
    pub raw_response: String,
}

/// Template followed by the correction in double quotes; embedded quotes and
/// backslashes are backslash-escaped.
pub fn build_paraphrase_prompt(sample_id: &str, u: &str) -> ParaphraseRequest {
    let escaped = u.replace('\\', "\\\\").replace('"', "\\\"");
    ParaphraseRequest { sample_id: sample_id.to_string(), prompt_text: format!("{TEMPLATE}\"{escaped}\"") }
}

fn list_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*\d+\s*[.):]\s*(.+?)\s*$").expect("valid regex"))
}

/// The first three numbered items of `raw`, numbering and surrounding quotes removed.
pub fn parse_paraphrases(raw: &str) -> Result<[String; PARAPHRASES_PER_SAMPLE]> {
    let items: Vec<String> = list_item()
        .captures_iter(raw)
        .map(|c| c[1].trim().trim_matches('"').trim().to_string())
        .filter(|s| !s.is_empty())
        .take(PARAPHRASES_PER_SAMPLE)
        .collect();
    if items.len() < PARAPHRASES_PER_SAMPLE {
        return Err(AugmentError::Parse(format!("found {} numbered items", items.len())));
    }
    if items[0] == items[1] || items[0] == items[2] || items[1] == items[2] {
        return Err(AugmentError::Parse("paraphrases are not distinct".into()));
    }
    Ok([items[0].clone(), items[1].clone(), items[2].clone()])
}

/// An instruction-following completion endpoint.
pub trait ParaphraseClient: Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Canned responses keyed by prompt text; unknown prompts are client errors.
#[derive(Debug, Clone, Default)]
pub struct FixtureClient {
    responses: HashMap<String, String>,
    calls: std::sync::Arc<AtomicUsize>,
}

impl FixtureClient {
    pub fn new(responses: HashMap<String, String>) -> Self {
        Self { responses, calls: Default::default() }
    }

    pub fn insert(&mut self, prompt: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(prompt.into(), response.into());
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ParaphraseClient for FixtureClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.responses.get(prompt).cloned().ok_or_else(|| AugmentError::Client("no fixture for prompt".into()))
    }
}

/// A client that never answers; augmentation then relies entirely on the cache.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineClient;

impl ParaphraseClient for OfflineClient {
    fn complete(&self, _prompt: &str) -> Result<String> {
        Err(AugmentError::Client("offline: response not in cache".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub prompt: String,
    pub raw_response: String,
    pub timestamp: u64,
}

pub fn template_hash() -> String {
    hex::encode(Sha256::digest(TEMPLATE.as_bytes()))
}

pub fn cache_key(sample_id: &str) -> String {
    format!("{sample_id}:{}", &template_hash()[..16])
}

/// Append-only response cache.
pub struct ResponseCache {
    path: PathBuf,
    entries: HashMap<String, CacheRecord>,
    writer: Mutex<Option<File>>,
}

impl ResponseCache {
    /// Loads `path` if it exists. The first record per key wins.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| AugmentError::CacheCorruption {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.entry(rec.key.clone()).or_insert(rec);
            }
        }
        Ok(Self { path: path.to_path_buf(), entries, writer: Mutex::new(None) })
    }

    pub fn get(&self, key: &str) -> Option<&CacheRecord> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends one record as a single line write.
    fn append(&self, rec: &CacheRecord) -> Result<()> {
        let mut line = serde_json::to_string(rec)?;
        line.push('\n');
        let mut guard = self.writer.lock().expect("cache writer lock");
        if guard.is_none() {
            if let Some(dir) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            *guard = Some(OpenOptions::new().create(true).append(true).open(&self.path)?);
        }
        let f = guard.as_mut().expect("opened");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    pub concurrency: usize,
    pub max_retries: usize,
    pub initial_backoff_ms: u64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        Self { concurrency: 4, max_retries: 3, initial_backoff_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    pub dataset: Dataset,
    /// Human train samples left unaugmented, with the reason.
    pub skipped: Vec<(String, String)>,
    /// Requests answered by the client in this run (the rest came from the cache).
    pub fetched: usize,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn fetch_with_retries(client: &dyn ParaphraseClient, prompt: &str, opts: &AugmentOptions) -> Result<String> {
    let mut delay = Duration::from_millis(opts.initial_backoff_ms);
    let mut attempt = 0;
    loop {
        match client.complete(prompt) {
            Ok(r) => return Ok(r),
            Err(e) if attempt >= opts.max_retries => return Err(e),
            Err(_) => {
                std::thread::sleep(delay);
                delay *= 2;
                attempt += 1;
            }
        }
    }
}

/// Appends three paraphrase samples per parseable human train sample.
///
/// Only a snapshot of the original human train samples is paraphrased; valid/test and
/// existing paraphrases pass through untouched. Paraphrases follow all original samples,
/// in parent order, with ids `{parent}-p1..p3`.
pub fn augment_dataset(
    d: &Dataset,
    client: &dyn ParaphraseClient,
    cache_path: &Path,
    opts: &AugmentOptions,
) -> Result<AugmentOutcome> {
    let cache = ResponseCache::open(cache_path)?;
    let parents: Vec<&CorrectionSample> =
        d.samples.iter().filter(|s| s.split == Split::Train && s.source == Source::Human).collect();
    let requests: Vec<ParaphraseRequest> =
        parents.iter().map(|s| build_paraphrase_prompt(&s.id, &s.correction)).collect();

    let missing: Vec<usize> = (0..parents.len()).filter(|&i| cache.get(&cache_key(&parents[i].id)).is_none()).collect();
    let fetched: Mutex<HashMap<usize, Result<String>>> = Mutex::new(HashMap::new());
    let next = AtomicUsize::new(0);
    let workers = opts.concurrency.max(1).min(missing.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = missing.get(k) else { break };
                let req = &requests[i];
                let result = fetch_with_retries(client, &req.prompt_text, opts).and_then(|raw| {
                    cache.append(&CacheRecord {
                        key: cache_key(&req.sample_id),
                        prompt: req.prompt_text.clone(),
                        raw_response: raw.clone(),
                        timestamp: now_secs(),
                    })?;
                    Ok(raw)
                });
                fetched.lock().expect("results lock").insert(i, result);
            });
        }
    });
    let mut fetched = fetched.into_inner().expect("results lock");
    let fetched_count = fetched.values().filter(|r| r.is_ok()).count();

    let mut samples = d.samples.clone();
    let mut skipped = Vec::new();
    for (i, parent) in parents.iter().enumerate() {
        let raw = match cache.get(&cache_key(&parent.id)) {
            Some(rec) => Ok(rec.raw_response.clone()),
            None => fetched.remove(&i).unwrap_or_else(|| Err(AugmentError::Client("no response".into()))),
        };
        let parsed = raw.and_then(|r| parse_paraphrases(&r));
        match parsed {
            Ok(paraphrases) => {
                for (k, text) in paraphrases.into_iter().enumerate() {
                    samples.push(CorrectionSample {
                        id: format!("{}-p{}", parent.id, k + 1),
                        correction: text,
                        source: Source::Paraphrase,
                        parent_id: Some(parent.id.clone()),
                        ..(*parent).clone()
                    });
                }
            }
            Err(e) => skipped.push((parent.id.clone(), e.to_string())),
        }
    }
    let dataset = Dataset { samples, trajectories: d.trajectories.clone() };
    dataset.validate()?;
    Ok(AugmentOutcome { dataset, skipped, fetched: fetched_count })
}
