//! Single-writer append log of session events, with an optional snapshot to shorten replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::preference::PreferenceRecord;
use crate::session::{TeachingSession, Trial};
use crate::{CoachError, Result};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated { session: TeachingSession },
    TrialRecorded { session_id: String, trial: Trial },
    PreferenceRecorded { id: String, record: PreferenceRecord },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub sessions: BTreeMap<String, TeachingSession>,
    pub preferences: BTreeMap<String, PreferenceRecord>,
}

impl State {
    fn apply(&mut self, e: &Event) -> std::result::Result<(), String> {
        match e {
            Event::SessionCreated { session } => {
                if self.sessions.insert(session.session_id.clone(), session.clone()).is_some() {
                    return Err(format!("session {} created twice", session.session_id));
                }
            }
            Event::TrialRecorded { session_id, trial } => {
                let s = self
                    .sessions
                    .get_mut(session_id)
                    .ok_or_else(|| format!("trial for unknown session {session_id}"))?;
                if trial.index != s.trials.len() + 1 {
                    return Err(format!("session {session_id}: trial {} out of order", trial.index));
                }
                s.trials.push(trial.clone());
            }
            Event::PreferenceRecorded { id, record } => {
                self.preferences.insert(id.clone(), record.clone());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    events: usize,
    state: State,
}

struct Inner {
    file: File,
    events: usize,
    state: State,
}

pub struct Store {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl Store {
    /// Loads the snapshot if present and replays the log past it.
    ///
    /// A final line without a newline is a write torn by a crash; it is dropped and the
    /// file truncated to the last complete event.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(EVENTS_FILE);
        let (mut state, skip) = match std::fs::read_to_string(dir.join(SNAPSHOT_FILE)) {
            Ok(text) => {
                let snap: Snapshot = serde_json::from_str(&text)?;
                (snap.state, snap.events)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (State::default(), 0),
            Err(e) => return Err(e.into()),
        };
        let mut events = 0;
        let mut good_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                events += 1;
                good_len += n as u64;
                if events <= skip {
                    continue;
                }
                let corrupt = |message: String| CoachError::CorruptLog { path: path.clone(), line: events, message };
                let e: Event = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                state.apply(&e).map_err(corrupt)?;
            }
            if events < skip {
                return Err(CoachError::CorruptLog {
                    path,
                    line: events,
                    message: format!("snapshot covers {skip} events, log has {events}"),
                });
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        file.set_len(good_len)?;
        Ok(Self { dir: dir.to_path_buf(), inner: Mutex::new(Inner { file, events, state }) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("store lock poisoned")
    }

    /// Writes one line and syncs it before applying the event.
    pub fn append(&self, e: &Event) -> Result<()> {
        let mut inner = self.lock();
        let mut probe = inner.state.clone();
        probe.apply(e).map_err(CoachError::Validation)?;
        let mut line = serde_json::to_string(e)?;
        line.push('\n');
        inner.file.write_all(line.as_bytes())?;
        inner.file.sync_data()?;
        inner.state = probe;
        inner.events += 1;
        Ok(())
    }

    pub fn state(&self) -> State {
        self.lock().state.clone()
    }

    pub fn read<T>(&self, f: impl FnOnce(&State) -> T) -> T {
        f(&self.lock().state)
    }

    pub fn event_count(&self) -> usize {
        self.lock().events
    }

    /// Writes the current state atomically via rename.
    pub fn write_snapshot(&self) -> Result<()> {
        let inner = self.lock();
        let snap = Snapshot { events: inner.events, state: inner.state.clone() };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec(&snap)?)?;
        std::fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }

    /// Every session as one JSON line each, in id order.
    pub fn export_sessions(&self) -> Result<String> {
        let inner = self.lock();
        let mut out = String::new();
        for s in inner.state.sessions.values() {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }
}
