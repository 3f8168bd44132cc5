//! Live discussion sessions.
//!
//! Every state change is an event with a per-session sequence number. Events
//! are appended to `<data_dir>/<session_id>.jsonl` before they become
//! visible, and the session state is a pure fold over them, so reopening the
//! data directory reconstructs every session exactly.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use discuss_core::decision::Label;
use discuss_core::transcript::{
    collapse_whitespace, contains_control_tag, render_unchecked, split_speaker_line, validate, Discussion, Turn,
    NEXUS,
};
use futures::Stream;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Notify;

use crate::clock::{millis, Clock};
use crate::policy::{DecisionPolicy, IngestMode, InvalidPolicyConfig, PolicyConfig, PolicyFactory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// Index of the human turn this decision follows.
    pub turn_index: usize,
    pub decision: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token: Option<String>,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub participants: BTreeSet<String>,
    pub turns: Vec<Turn>,
    pub policy_config: PolicyConfig,
    pub decision_log: Vec<DecisionRecord>,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventPayload {
    SessionCreated {
        session_id: String,
        policy_config: PolicyConfig,
    },
    TurnAdded {
        turn_index: usize,
        speaker: String,
        text: String,
    },
    DecisionMade(DecisionRecord),
    InterventionStarted {
        trigger_turn_index: usize,
    },
    InterventionCompleted {
        trigger_turn_index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        turn_index: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        generation_ms: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    PolicyUpdated {
        threshold: f64,
    },
    SessionClosed,
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::SessionCreated { .. } => "SessionCreated",
            EventPayload::TurnAdded { .. } => "TurnAdded",
            EventPayload::DecisionMade(_) => "DecisionMade",
            EventPayload::InterventionStarted { .. } => "InterventionStarted",
            EventPayload::InterventionCompleted { .. } => "InterventionCompleted",
            EventPayload::PolicyUpdated { .. } => "PolicyUpdated",
            EventPayload::SessionClosed => "SessionClosed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl SessionState {
    fn new(session_id: String, policy_config: PolicyConfig) -> Self {
        SessionState {
            session_id,
            participants: BTreeSet::new(),
            turns: Vec::new(),
            policy_config,
            decision_log: Vec::new(),
            status: SessionStatus::Open,
        }
    }

    pub fn apply(&mut self, ev: &EventPayload) {
        match ev {
            EventPayload::SessionCreated { .. } | EventPayload::InterventionStarted { .. } => {}
            EventPayload::TurnAdded { speaker, text, .. } => {
                self.participants.insert(speaker.clone());
                self.turns.push(Turn::human(speaker.clone(), text.clone()));
            }
            EventPayload::DecisionMade(r) => self.decision_log.push(r.clone()),
            EventPayload::InterventionCompleted { text, .. } => {
                if let Some(t) = text {
                    self.turns.push(Turn::nexus(t.clone()));
                }
            }
            EventPayload::PolicyUpdated { threshold } => self.policy_config.threshold = Some(*threshold),
            EventPayload::SessionClosed => self.status = SessionStatus::Closed,
        }
    }

    /// Fold a complete event log. The first event must create the session.
    pub fn replay(events: &[SessionEvent]) -> Option<SessionState> {
        let (first, rest) = events.split_first()?;
        let EventPayload::SessionCreated { session_id, policy_config } = &first.payload else {
            return None;
        };
        let mut state = SessionState::new(session_id.clone(), policy_config.clone());
        for ev in rest {
            state.apply(&ev.payload);
        }
        Some(state)
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("speaker name {0:?} is reserved for the assistant")]
    ReservedSpeakerName(String),
    #[error("invalid turn: {0}")]
    InvalidTurn(String),
    #[error(transparent)]
    InvalidPolicyConfig(#[from] InvalidPolicyConfig),
    #[error("corrupt event log {path}: line {line}: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub generation_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostTurnResult {
    pub turn_index: usize,
    pub decision: DecisionRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptExport {
    pub text: String,
    pub warnings: Vec<String>,
}

struct Inner {
    state: SessionState,
    events: Vec<SessionEvent>,
    log: Option<File>,
}

struct Session {
    /// Held for a whole turn in strict mode; only around the append in
    /// lenient mode.
    ingest: tokio::sync::Mutex<()>,
    /// Read side held by every in-flight turn; close takes the write side so
    /// no decision lands after the session is closed.
    activity: tokio::sync::RwLock<()>,
    inner: Mutex<Inner>,
    notify: Notify,
    policy: Arc<dyn DecisionPolicy>,
}

impl Session {
    fn emit(&self, payload: EventPayload) -> io::Result<SessionEvent> {
        let ev = {
            let mut inner = self.inner.lock().expect("session lock");
            let ev = SessionEvent { seq: inner.events.len() as u64, payload };
            if let Some(log) = inner.log.as_mut() {
                let mut line = serde_json::to_vec(&ev)?;
                line.push(b'\n');
                log.write_all(&line)?;
                log.flush()?;
            }
            inner.state.apply(&ev.payload);
            inner.events.push(ev.clone());
            ev
        };
        self.notify.notify_waiters();
        Ok(ev)
    }

    fn with<R>(&self, f: impl FnOnce(&Inner) -> R) -> R {
        f(&self.inner.lock().expect("session lock"))
    }

    fn policy(&self) -> Arc<dyn DecisionPolicy> {
        self.policy.clone()
    }
}

/// All sessions, optionally persisted under a data directory.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    data_dir: Option<PathBuf>,
    factory: Arc<dyn PolicyFactory>,
    clock: Arc<dyn Clock>,
}

const RESTART_ERROR: &str = "interrupted by restart";

impl SessionStore {
    pub fn in_memory(factory: Arc<dyn PolicyFactory>, clock: Arc<dyn Clock>) -> Self {
        SessionStore { sessions: RwLock::new(HashMap::new()), data_dir: None, factory, clock }
    }

    /// Open `data_dir`, replaying every session log found there. A torn final
    /// line (crash mid-write) is discarded. Turns whose decision or
    /// intervention never landed get an error record.
    pub fn open(data_dir: &Path, factory: Arc<dyn PolicyFactory>, clock: Arc<dyn Clock>) -> Result<Self, SessionError> {
        fs::create_dir_all(data_dir)?;
        let store = SessionStore {
            sessions: RwLock::new(HashMap::new()),
            data_dir: Some(data_dir.to_path_buf()),
            factory,
            clock,
        };
        let mut paths: Vec<PathBuf> = fs::read_dir(data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let events = read_log(&path)?;
            let state = SessionState::replay(&events).ok_or_else(|| SessionError::CorruptLog {
                path: path.clone(),
                line: 1,
                reason: "log does not start with SessionCreated".into(),
            })?;
            let policy = store.factory.build(&state.policy_config)?;
            let log = OpenOptions::new().append(true).open(&path)?;
            let id = state.session_id.clone();
            let session = Arc::new(Session {
                ingest: tokio::sync::Mutex::new(()),
                activity: tokio::sync::RwLock::new(()),
                inner: Mutex::new(Inner { state, events, log: Some(log) }),
                notify: Notify::new(),
                policy,
            });
            repair_pending(&session)?;
            store.sessions.write().expect("store lock").insert(id, session);
        }
        Ok(store)
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions.read().expect("store lock").get(id).cloned().ok_or_else(|| SessionError::UnknownSession(id.into()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("store lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn create_session(&self, cfg: PolicyConfig) -> Result<String, SessionError> {
        let cfg = cfg.validated()?;
        let policy = self.factory.build(&cfg)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let log = match &self.data_dir {
            Some(dir) => Some(OpenOptions::new().create_new(true).append(true).open(dir.join(format!("{id}.jsonl")))?),
            None => None,
        };
        let session = Arc::new(Session {
            ingest: tokio::sync::Mutex::new(()),
            activity: tokio::sync::RwLock::new(()),
            inner: Mutex::new(Inner { state: SessionState::new(id.clone(), cfg.clone()), events: Vec::new(), log }),
            notify: Notify::new(),
            policy,
        });
        session.emit(EventPayload::SessionCreated { session_id: id.clone(), policy_config: cfg })?;
        self.sessions.write().expect("store lock").insert(id.clone(), session);
        Ok(id)
    }

    /// Append a human turn, ask the policy, and generate an intervention when
    /// it decides to speak. Backend failures are recorded as SILENT with an
    /// error instead of failing the call.
    pub async fn post_turn(&self, id: &str, speaker: &str, text: &str) -> Result<PostTurnResult, SessionError> {
        let speaker = speaker.trim();
        let text = collapse_whitespace(text);
        check_turn(speaker, &text)?;
        let s = self.get(id)?;
        let _active = s.activity.read().await;
        let ingest = s.ingest.lock().await;
        let (turn_index, context, mode) = {
            let inner = s.inner.lock().expect("session lock");
            if inner.state.status == SessionStatus::Closed {
                return Err(SessionError::SessionClosed);
            }
            (inner.state.turns.len(), inner.state.turns.clone(), inner.state.policy_config.mode)
        };
        s.emit(EventPayload::TurnAdded { turn_index, speaker: speaker.to_string(), text: text.clone() })?;
        let mut context = context;
        context.push(Turn::human(speaker, text));
        let _ingest = match mode {
            IngestMode::Strict => Some(ingest),
            IngestMode::Lenient => {
                drop(ingest);
                None
            }
        };

        let policy = s.policy();
        let start = self.clock.now();
        let outcome = policy.decide(&context).await;
        let latency_ms = millis(self.clock.now().saturating_sub(start));
        let record = match outcome {
            Ok(o) => DecisionRecord {
                turn_index,
                decision: o.decision,
                probability: o.probability,
                first_token: o.first_token,
                latency_ms,
                error: None,
            },
            Err(e) => {
                tracing::warn!(session = id, turn_index, error = %e, "decision failed, staying silent");
                DecisionRecord {
                    turn_index,
                    decision: Label::Silent,
                    probability: None,
                    first_token: None,
                    latency_ms,
                    error: Some(e.to_string()),
                }
            }
        };
        s.emit(EventPayload::DecisionMade(record.clone()))?;
        if record.decision == Label::Silent {
            return Ok(PostTurnResult { turn_index, decision: record, intervention: None });
        }

        s.emit(EventPayload::InterventionStarted { trigger_turn_index: turn_index })?;
        let start = self.clock.now();
        let generated = policy.generate(&context).await;
        let generation_ms = millis(self.clock.now().saturating_sub(start));
        let (text, error) = match generated {
            Ok(g) if !g.text.is_empty() && !contains_control_tag(&g.text) => (Some(collapse_whitespace(&g.text)), None),
            Ok(_) => (None, Some("generator returned an unusable intervention".to_string())),
            Err(e) => (None, Some(e.to_string())),
        };
        let ai_index = text.as_ref().map(|_| s.with(|i| i.state.turns.len()));
        s.emit(EventPayload::InterventionCompleted {
            trigger_turn_index: turn_index,
            turn_index: ai_index,
            text: text.clone(),
            generation_ms,
            error: error.clone(),
        })?;
        Ok(PostTurnResult {
            turn_index,
            decision: record,
            intervention: Some(InterventionResult { turn_index: ai_index, text, generation_ms, error }),
        })
    }

    /// Change the decoupled threshold. Takes effect from the next decision.
    pub fn update_threshold(&self, id: &str, threshold: f64) -> Result<PolicyConfig, SessionError> {
        let s = self.get(id)?;
        if s.with(|i| i.state.status) == SessionStatus::Closed {
            return Err(SessionError::SessionClosed);
        }
        if !s.policy().set_threshold(threshold) {
            let reason = if s.policy().threshold().is_none() {
                "this policy has no threshold".to_string()
            } else {
                format!("threshold {threshold} must lie strictly between 0 and 1")
            };
            return Err(InvalidPolicyConfig(reason).into());
        }
        s.emit(EventPayload::PolicyUpdated { threshold })?;
        Ok(s.with(|i| i.state.policy_config.clone()))
    }

    /// Close the session after in-flight turns finish. Idempotent.
    pub async fn close_session(&self, id: &str) -> Result<(), SessionError> {
        let s = self.get(id)?;
        let _exclusive = s.activity.write().await;
        if s.with(|i| i.state.status) == SessionStatus::Open {
            s.emit(EventPayload::SessionClosed)?;
        }
        Ok(())
    }

    pub fn state(&self, id: &str) -> Result<SessionState, SessionError> {
        Ok(self.get(id)?.with(|i| i.state.clone()))
    }

    /// Logged events with `seq >= from`.
    pub fn events(&self, id: &str, from: u64) -> Result<Vec<SessionEvent>, SessionError> {
        Ok(self.get(id)?.with(|i| i.events.iter().skip(from as usize).cloned().collect()))
    }

    /// Every event with `seq >= from`, then live events as they happen. Ends
    /// after `SessionClosed`.
    pub fn subscribe(&self, id: &str, from: u64) -> Result<impl Stream<Item = SessionEvent> + Send + 'static, SessionError> {
        let s = self.get(id)?;
        Ok(futures::stream::unfold((s, from, false), |(s, next, done)| async move {
            if done {
                return None;
            }
            let ev = loop {
                let notified = s.notify.notified();
                tokio::pin!(notified);
                notified.as_mut().enable();
                let (ev, closed) =
                    s.with(|i| (i.events.get(next as usize).cloned(), i.state.status == SessionStatus::Closed));
                match ev {
                    Some(ev) => break ev,
                    None if closed => return None,
                    None => notified.await,
                }
            };
            let last = matches!(ev.payload, EventPayload::SessionClosed);
            Some((ev, (s, next + 1, last)))
        }))
    }

    /// The session in transcript form. Sessions that do not form a valid
    /// discussion still export, with the validator's findings as warnings.
    pub fn export(&self, id: &str) -> Result<TranscriptExport, SessionError> {
        let turns = self.get(id)?.with(|i| i.state.turns.clone());
        let d = Discussion::new(turns);
        let report = validate(&d);
        Ok(TranscriptExport {
            text: render_unchecked(&d),
            warnings: report.violations.iter().map(|v| format!("{:?}: {}", v.code, v.message)).collect(),
        })
    }
}

fn check_turn(speaker: &str, text: &str) -> Result<(), SessionError> {
    if speaker.eq_ignore_ascii_case(NEXUS) {
        return Err(SessionError::ReservedSpeakerName(speaker.to_string()));
    }
    let probe = format!("{speaker}: x");
    if split_speaker_line(&probe) != Some((speaker, "x")) {
        return Err(SessionError::InvalidTurn(format!("invalid speaker name {speaker:?}")));
    }
    if text.is_empty() {
        return Err(SessionError::InvalidTurn("empty text".into()));
    }
    if contains_control_tag(text) {
        return Err(SessionError::InvalidTurn("text contains a transcript control tag".into()));
    }
    Ok(())
}

fn read_log(path: &Path) -> Result<Vec<SessionEvent>, SessionError> {
    let raw = fs::read(path)?;
    let mut events = Vec::new();
    let mut valid_len = 0usize;
    let mut offset = 0usize;
    let mut lines = raw.split_inclusive(|b| *b == b'\n').peekable();
    let mut n = 0;
    while let Some(line) = lines.next() {
        n += 1;
        let is_last = lines.peek().is_none();
        offset += line.len();
        let body = line.strip_suffix(b"\n").unwrap_or(line);
        if body.iter().all(u8::is_ascii_whitespace) {
            valid_len = offset;
            continue;
        }
        match serde_json::from_slice::<SessionEvent>(body) {
            Ok(ev) if ev.seq == events.len() as u64 && line.ends_with(b"\n") => {
                events.push(ev);
                valid_len = offset;
            }
            Ok(_) if !is_last => {
                return Err(SessionError::CorruptLog { path: path.into(), line: n, reason: "sequence gap".into() })
            }
            Err(e) if !is_last => {
                return Err(SessionError::CorruptLog { path: path.into(), line: n, reason: e.to_string() })
            }
            _ => tracing::warn!(path = %path.display(), line = n, "discarding torn final log line"),
        }
    }
    if valid_len < raw.len() {
        OpenOptions::new().write(true).open(path)?.set_len(valid_len as u64)?;
    }
    Ok(events)
}

fn repair_pending(s: &Session) -> io::Result<()> {
    let (pending_decisions, pending_interventions) = s.with(|inner| {
        let mut decided = BTreeSet::new();
        let mut started = BTreeSet::new();
        let mut added = Vec::new();
        for ev in &inner.events {
            match &ev.payload {
                EventPayload::TurnAdded { turn_index, .. } => added.push(*turn_index),
                EventPayload::DecisionMade(r) => {
                    decided.insert(r.turn_index);
                }
                EventPayload::InterventionStarted { trigger_turn_index } => {
                    started.insert(*trigger_turn_index);
                }
                EventPayload::InterventionCompleted { trigger_turn_index, .. } => {
                    started.remove(trigger_turn_index);
                }
                _ => {}
            }
        }
        let pending: Vec<usize> = added.into_iter().filter(|t| !decided.contains(t)).collect();
        (pending, started)
    });
    for trigger in pending_interventions {
        s.emit(EventPayload::InterventionCompleted {
            trigger_turn_index: trigger,
            turn_index: None,
            text: None,
            generation_ms: 0.0,
            error: Some(RESTART_ERROR.into()),
        })?;
    }
    for turn_index in pending_decisions {
        s.emit(EventPayload::DecisionMade(DecisionRecord {
            turn_index,
            decision: Label::Silent,
            probability: None,
            first_token: None,
            latency_ms: 0.0,
            error: Some(RESTART_ERROR.into()),
        }))?;
    }
    Ok(())
}
