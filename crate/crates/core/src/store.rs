//! Append-only event log with snapshots.
//!
//! Every change to a campaign is an [`Event`]; the campaign state is the
//! fold of its events. On disk a store is a directory holding
//! `events.jsonl` (one [`EventRecord`] per line) and optionally
//! `snapshot.json` (state as of some sequence number). Compaction rewrites
//! the snapshot and drops the events it covers, which is how purged
//! transcripts leave the disk.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::campaign::{AttemptRecord, CampaignSettings, DayAggregate, MetricsReport, TurnTruth};
use crate::dialog::CallSession;
use crate::nlu::{LabeledExample, Lexicon};
use crate::popsim::{Persona, Subject};
use crate::triage::{EscalationRecord, ReviewDecision, TriageDecision};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    SessionEvent,
    Escalation,
    Review,
    Label,
    Purge,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    CampaignCreated {
        settings: CampaignSettings,
    },
    SubjectRegistered {
        subject: Subject,
        /// Simulation mode only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        persona: Option<Persona>,
    },
    AttemptResolved {
        attempt: AttemptRecord,
    },
    /// An interactive call advanced; carries the whole session so far.
    SessionUpdated {
        session: CallSession,
    },
    SessionClosed {
        session: CallSession,
        decision: TriageDecision,
        /// Simulator ground truth for each callee turn; absent in live mode.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        simulated: Option<Vec<TurnTruth>>,
    },
    Escalated {
        record: EscalationRecord,
    },
    Reviewed {
        record_id: String,
        decision: ReviewDecision,
    },
    LabelsApplied {
        examples: Vec<LabeledExample>,
        lexicon_version: u64,
    },
    LexiconInstalled {
        lexicon: Lexicon,
    },
    DayCompleted {
        day: NaiveDate,
        aggregate: DayAggregate,
    },
    Purged {
        now: Timestamp,
        horizon: Timestamp,
        purge_count: usize,
    },
    ReportGenerated {
        report: MetricsReport,
    },
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match self {
            Event::CampaignCreated { .. }
            | Event::SubjectRegistered { .. }
            | Event::AttemptResolved { .. }
            | Event::SessionUpdated { .. }
            | Event::SessionClosed { .. }
            | Event::DayCompleted { .. } => EventKind::SessionEvent,
            Event::Escalated { .. } => EventKind::Escalation,
            Event::Reviewed { .. } => EventKind::Review,
            Event::LabelsApplied { .. } | Event::LexiconInstalled { .. } => EventKind::Label,
            Event::Purged { .. } => EventKind::Purge,
            Event::ReportGenerated { .. } => EventKind::Report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts: Timestamp,
    pub kind: EventKind,
    pub payload: Event,
}

/// In-memory append-only log. Sequence numbers start after `base_seq`,
/// the last sequence number covered by a snapshot (0 for none).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    base_seq: u64,
    records: Vec<EventRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_after(base_seq: u64) -> Self {
        EventLog {
            base_seq,
            records: Vec::new(),
        }
    }

    pub fn append(&mut self, ts: Timestamp, event: Event) -> &EventRecord {
        let seq = self.last_seq() + 1;
        self.records.push(EventRecord {
            seq,
            ts,
            kind: event.kind(),
            payload: event,
        });
        self.records.last().expect("just pushed")
    }

    pub fn last_seq(&self) -> u64 {
        self.records.last().map_or(self.base_seq, |r| r.seq)
    }

    pub fn base_seq(&self) -> u64 {
        self.base_seq
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records with `seq > after`.
    pub fn since(&self, after: u64) -> &[EventRecord] {
        let start = self.records.partition_point(|r| r.seq <= after);
        &self.records[start..]
    }

    pub fn to_jsonl(&self) -> String {
        records_to_jsonl(&self.records)
    }

    /// Parses a JSON-lines log, checking that sequence numbers strictly
    /// increase and start after `base_seq`.
    pub fn from_jsonl(text: &str, base_seq: u64) -> crate::Result<Self> {
        let mut log = EventLog::starting_after(base_seq);
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EventRecord = serde_json::from_str(line)
                .map_err(|e| crate::Error::Parse(format!("event log line {}: {e}", lineno + 1)))?;
            if record.seq <= log.last_seq() {
                return Err(crate::Error::Parse(format!(
                    "event log line {}: seq {} does not follow {}",
                    lineno + 1,
                    record.seq,
                    log.last_seq()
                )));
            }
            log.records.push(record);
        }
        Ok(log)
    }

    /// Drops records up to and including `seq`; later appends continue the
    /// numbering.
    pub fn truncate_through(&mut self, seq: u64) {
        self.records.retain(|r| r.seq > seq);
        self.base_seq = self.base_seq.max(seq);
    }
}

pub fn records_to_jsonl(records: &[EventRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("event records serialize"));
        out.push('\n');
    }
    out
}

/// State as of `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot<S> {
    pub seq: u64,
    pub state: S,
}

/// Directory-backed persistence for one event log.
#[derive(Debug, Clone)]
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub const EVENTS: &'static str = "events.jsonl";
    pub const SNAPSHOT: &'static str = "snapshot.json";

    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(FileStore {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn events_path(&self) -> PathBuf {
        self.dir.join(Self::EVENTS)
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.dir.join(Self::SNAPSHOT)
    }

    /// Appends records to `events.jsonl`.
    pub fn append(&self, records: &[EventRecord]) -> std::io::Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.events_path())?;
        f.write_all(records_to_jsonl(records).as_bytes())?;
        f.sync_data()
    }

    pub fn load_snapshot<S: serde::de::DeserializeOwned>(&self) -> crate::Result<Option<Snapshot<S>>> {
        match fs::read_to_string(self.snapshot_path()) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(crate::Error::Parse(format!("{}: {e}", self.snapshot_path().display()))),
        }
    }

    pub fn load_events(&self, base_seq: u64) -> crate::Result<EventLog> {
        match fs::read_to_string(self.events_path()) {
            Ok(text) => EventLog::from_jsonl(&text, base_seq),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(EventLog::starting_after(base_seq)),
            Err(e) => Err(crate::Error::Parse(format!("{}: {e}", self.events_path().display()))),
        }
    }

    /// Writes the snapshot and rewrites the log with only the records after
    /// it. Both files are replaced atomically via rename.
    pub fn compact<S: Serialize>(&self, snapshot: &Snapshot<S>, log: &EventLog) -> std::io::Result<()> {
        let snap_tmp = self.dir.join("snapshot.json.tmp");
        fs::write(&snap_tmp, serde_json::to_vec(snapshot).map_err(std::io::Error::other)?)?;
        let events_tmp = self.dir.join("events.jsonl.tmp");
        fs::write(&events_tmp, records_to_jsonl(log.since(snapshot.seq)))?;
        fs::rename(&snap_tmp, self.snapshot_path())?;
        fs::rename(&events_tmp, self.events_path())
    }
}
