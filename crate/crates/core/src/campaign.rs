//! Twice-daily call campaign: scheduling, simulated call execution,
//! retention and turn-level metrics.
//!
//! A [`Campaign`] is an event-sourced aggregate. Every mutation goes through
//! [`Campaign::emit`], which appends to the log and folds the event into
//! [`CampaignState`]; [`Campaign::replay`] rebuilds the same state from the
//! log alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialog::{CallSession, DialogEngine, DialogState, Question, ScriptKey, ScriptTable, Speaker};
use crate::error::{Error, Result};
use crate::nlu::{ExampleSource, IntentClass, LabeledExample, Lexicon};
use crate::popsim::{connection_outcome, respond_to, ConnectionOutcome, Persona, Subject, TemplatePool};
use crate::store::{Event, EventLog, EventRecord, Snapshot};
use crate::triage::{
    decide, select_batch, turn_flags, EscalationRecord, PoolItem, ReviewDecision, ReviewStatus, TriageDecision,
    TriagePolicy, Verdict,
};
use crate::Timestamp;

/// Seconds between consecutive turns of a simulated call.
const TURN_SECONDS: i64 = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignSettings {
    pub campaign_id: String,
    /// First calendar day of the campaign.
    pub start_date: NaiveDate,
    pub am_time: NaiveTime,
    pub pm_time: NaiveTime,
    /// Retries after a connection failure, chained.
    pub max_retries: u32,
    pub retry_delay_minutes: i64,
    pub retention_days: i64,
    pub policy: TriagePolicy,
    /// Master seed; per-day and per-subject streams derive from it.
    pub seed: u64,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            campaign_id: "campaign-1".into(),
            start_date: NaiveDate::from_ymd_opt(2020, 3, 9).expect("valid date"),
            am_time: NaiveTime::from_hms_opt(10, 0, 0).expect("valid time"),
            pm_time: NaiveTime::from_hms_opt(16, 0, 0).expect("valid time"),
            max_retries: 2,
            retry_delay_minutes: 60,
            retention_days: 30,
            policy: TriagePolicy::default(),
            seed: 0,
        }
    }
}

impl CampaignSettings {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.am_time >= self.pm_time {
            return Err(Error::config("the AM call must be scheduled before the PM call"));
        }
        if self.retry_delay_minutes <= 0 {
            return Err(Error::config("retry_delay_minutes must be positive"));
        }
        if self.retention_days < 1 {
            return Err(Error::config("retention_days must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CallSlot {
    Am,
    Pm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttemptResult {
    Completed,
    Hangup,
    ConnectionFailure,
}

/// A planned call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallAttempt {
    pub subject_id: String,
    pub planned_at: Timestamp,
    pub slot: CallSlot,
}

/// A resolved call attempt as recorded in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt_id: String,
    pub subject_id: String,
    pub planned_at: Timestamp,
    pub slot: CallSlot,
    pub result: AttemptResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_of: Option<String>,
    /// 0 for the primary attempt, then 1, 2, ... along the retry chain.
    pub retry_index: u32,
}

/// Simulator ground truth for one callee turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnTruth {
    /// Transcript index of the turn.
    pub seq: usize,
    pub question: Question,
    /// Class a correct reader would assign; `None` for free-text detail.
    pub intent: Option<IntentClass>,
    pub off_script: bool,
    pub affirms_symptom: bool,
}

impl TurnTruth {
    /// The label an operator with perfect knowledge would give the text.
    pub fn label(&self) -> Option<IntentClass> {
        if self.off_script {
            Some(IntentClass::Other)
        } else {
            self.intent
        }
    }
}

/// Per-day counters. These are aggregates only and survive purges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayAggregate {
    pub total_turns: u64,
    pub fn_count: u64,
    pub fp_count: u64,
    pub attempts: u64,
    pub connection_failures: u64,
    pub completed: u64,
    pub hangups: u64,
    /// Slots whose final retry still failed to connect.
    pub failed: u64,
    pub escalations: u64,
}

impl DayAggregate {
    fn add(&mut self, o: &DayAggregate) {
        self.total_turns += o.total_turns;
        self.fn_count += o.fn_count;
        self.fp_count += o.fp_count;
        self.attempts += o.attempts;
        self.connection_failures += o.connection_failures;
        self.completed += o.completed;
        self.hangups += o.hangups;
        self.failed += o.failed;
        self.escalations += o.escalations;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub total_turns: u64,
    pub fn_count: u64,
    pub fp_count: u64,
    pub fn_ratio: f64,
    pub fp_ratio: f64,
    /// Completed + hung up + failed after all retries.
    pub calls_total: u64,
    pub completed: u64,
    pub hangups: u64,
    pub failed: u64,
    pub attempts: u64,
    pub connection_failures: u64,
    /// Hang-ups per answered call.
    pub hangup_rate: f64,
    /// Connection failures per attempt.
    pub failure_rate: f64,
    pub escalations: u64,
}

impl MetricsReport {
    fn from_aggregate(from: NaiveDate, to: NaiveDate, a: &DayAggregate) -> Self {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        MetricsReport {
            from,
            to,
            total_turns: a.total_turns,
            fn_count: a.fn_count,
            fp_count: a.fp_count,
            fn_ratio: ratio(a.fn_count, a.total_turns),
            fp_ratio: ratio(a.fp_count, a.total_turns),
            calls_total: a.completed + a.hangups + a.failed,
            completed: a.completed,
            hangups: a.hangups,
            failed: a.failed,
            attempts: a.attempts,
            connection_failures: a.connection_failures,
            hangup_rate: ratio(a.hangups, a.completed + a.hangups),
            failure_rate: ratio(a.connection_failures, a.attempts),
            escalations: a.escalations,
        }
    }
}

/// Table of turn-level error counts, one column pair per report.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let label_width = 16;
    let col = 24;
    let _ = write!(out, "{:label_width$}", "");
    for r in reports {
        let _ = write!(out, "{:>col$}", format!("{}..{}", r.from, r.to));
    }
    out.push('\n');
    let _ = write!(out, "{:label_width$}", "");
    for _ in reports {
        let _ = write!(out, "{:>12}{:>12}", "Count", "Ratio");
    }
    out.push('\n');
    type Column = fn(&MetricsReport) -> (u64, f64);
    let rows: [(&str, Column); 3] = [
        ("False negative", |r| (r.fn_count, r.fn_ratio)),
        ("False positive", |r| (r.fp_count, r.fp_ratio)),
        ("Total turns", |r| {
            (r.total_turns, if r.total_turns > 0 { 1.0 } else { 0.0 })
        }),
    ];
    for (name, get) in rows {
        let _ = write!(out, "{name:label_width$}");
        for r in reports {
            let (n, p) = get(r);
            let _ = write!(out, "{n:>12}{:>12}", format!("{:.2}%", 100.0 * p));
        }
        out.push('\n');
    }
    out
}

/// Two primary attempts per subject active on `day`, at the AM and PM
/// times. Whether the PM call re-greets depends on how the AM call went, so
/// it is decided when the call is placed.
pub fn schedule<'a>(
    subjects: impl IntoIterator<Item = &'a Subject>,
    day: NaiveDate,
    settings: &CampaignSettings,
) -> Vec<CallAttempt> {
    let active: Vec<&Subject> = subjects.into_iter().filter(|s| s.is_active_on(day)).collect();
    [(CallSlot::Am, settings.am_time), (CallSlot::Pm, settings.pm_time)]
        .into_iter()
        .flat_map(|(slot, time)| {
            active.iter().map(move |s| CallAttempt {
                subject_id: s.subject_id.clone(),
                planned_at: day.and_time(time),
                slot,
            })
        })
        .collect()
}

/// Turn-level counts for one finished call: `(turns, false negatives,
/// false positives)`. A false positive is an on-script turn that raised a
/// symptom or uncertainty flag although it does not affirm a symptom; a
/// false negative is a turn affirming a symptom in a call that was cleared.
pub fn score_turns(
    session: &CallSession,
    decision: TriageDecision,
    truth: &[TurnTruth],
    policy: &TriagePolicy,
) -> (u64, u64, u64) {
    let flags: BTreeMap<usize, bool> = turn_flags(session, policy)
        .into_iter()
        .map(|f| (f.seq, f.flagged()))
        .collect();
    let mut fn_count = 0;
    let mut fp_count = 0;
    for t in truth {
        let flagged = flags.get(&t.seq).copied().unwrap_or(false);
        if flagged && !t.off_script && !t.affirms_symptom {
            fp_count += 1;
        }
        if t.affirms_symptom && decision == TriageDecision::Clear {
            fn_count += 1;
        }
    }
    (session.callee_turns().count() as u64, fn_count, fp_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject: Subject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona: Option<Persona>,
    /// Registration order; selects the subject's random stream.
    pub ordinal: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session: CallSession,
    pub decision: TriageDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated: Option<Vec<TurnTruth>>,
}

/// Everything the event log determines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub settings: CampaignSettings,
    pub subjects: BTreeMap<String, SubjectEntry>,
    pub lexicon: Lexicon,
    pub queue: crate::triage::ReviewQueue,
    /// Finished calls still inside the retention window.
    pub sessions: BTreeMap<String, SessionEntry>,
    /// Interactive calls in progress.
    pub open_sessions: BTreeMap<String, CallSession>,
    pub attempts: BTreeMap<String, AttemptRecord>,
    pub daily: BTreeMap<NaiveDate, DayAggregate>,
    /// Texts that already carry an operator label.
    pub labeled_texts: BTreeSet<String>,
    pub last_day: Option<NaiveDate>,
    pub next_session: u64,
    pub next_attempt: u64,
}

impl CampaignState {
    fn new(settings: CampaignSettings) -> Self {
        CampaignState {
            settings,
            subjects: BTreeMap::new(),
            lexicon: Lexicon::seed(),
            queue: Default::default(),
            sessions: BTreeMap::new(),
            open_sessions: BTreeMap::new(),
            attempts: BTreeMap::new(),
            daily: BTreeMap::new(),
            labeled_texts: BTreeSet::new(),
            last_day: None,
            next_session: 0,
            next_attempt: 0,
        }
    }

    fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::CampaignCreated { settings } => {
                *self = CampaignState::new(settings.clone());
            }
            Event::SubjectRegistered { subject, persona } => {
                let ordinal = self.subjects.len() as u64;
                self.subjects.insert(
                    subject.subject_id.clone(),
                    SubjectEntry {
                        subject: subject.clone(),
                        persona: *persona,
                        ordinal,
                    },
                );
            }
            Event::AttemptResolved { attempt } => {
                self.next_attempt += 1;
                let day = self.daily.entry(attempt.planned_at.date()).or_default();
                day.attempts += 1;
                if attempt.result == AttemptResult::ConnectionFailure {
                    day.connection_failures += 1;
                    if attempt.retry_index >= self.settings.max_retries {
                        day.failed += 1;
                    }
                }
                self.attempts.insert(attempt.attempt_id.clone(), attempt.clone());
            }
            Event::SessionUpdated { session } => {
                if !self.open_sessions.contains_key(&session.session_id) {
                    self.next_session += 1;
                }
                self.open_sessions.insert(session.session_id.clone(), session.clone());
            }
            Event::SessionClosed {
                session,
                decision,
                simulated,
            } => {
                if self.open_sessions.remove(&session.session_id).is_none() {
                    self.next_session += 1;
                }
                let day = self.daily.entry(session.started_at.date()).or_default();
                match session.outcome {
                    Some(DialogState::Hangup) => day.hangups += 1,
                    _ => day.completed += 1,
                }
                if decision.is_escalated() {
                    day.escalations += 1;
                }
                day.total_turns += session.callee_turns().count() as u64;
                if let Some(truth) = simulated {
                    let (_, fn_count, fp_count) = score_turns(session, *decision, truth, &self.settings.policy);
                    day.fn_count += fn_count;
                    day.fp_count += fp_count;
                }
                self.sessions.insert(
                    session.session_id.clone(),
                    SessionEntry {
                        session: session.clone(),
                        decision: *decision,
                        simulated: simulated.clone(),
                    },
                );
            }
            Event::Escalated { record } => {
                self.queue.enqueue(record.clone());
            }
            Event::Reviewed { record_id, decision } => {
                let flagged = self.queue.get(record_id).map(|r| {
                    (
                        r.session_id.clone(),
                        r.created_at,
                        r.flagged_turns(&self.settings.policy),
                    )
                });
                self.queue.review(record_id, decision.clone())?;
                // Without simulator truth the operator's verdict is the truth.
                if let (Some((session_id, created_at, flagged)), Verdict::OverrideClear) = (flagged, decision.verdict) {
                    let simulated = self.sessions.get(&session_id).is_some_and(|s| s.simulated.is_some());
                    if !simulated {
                        let day = self.daily.entry(created_at.date()).or_default();
                        day.fp_count += flagged as u64;
                    }
                }
            }
            Event::LabelsApplied {
                examples,
                lexicon_version,
            } => {
                let updated = self.lexicon.train_update(examples)?;
                if updated.version() != *lexicon_version {
                    return Err(Error::Parse(format!(
                        "label event expects lexicon version {lexicon_version}, replay produced {}",
                        updated.version()
                    )));
                }
                self.lexicon = updated;
                self.labeled_texts.extend(examples.iter().map(|e| e.text.clone()));
            }
            Event::LexiconInstalled { lexicon } => {
                self.lexicon = lexicon.clone();
            }
            Event::DayCompleted { day, .. } => {
                self.last_day = Some(self.last_day.map_or(*day, |d| d.max(*day)));
            }
            Event::Purged { horizon, .. } => {
                self.purge_before(*horizon);
            }
            Event::ReportGenerated { .. } => {}
        }
        Ok(())
    }

    fn purge_before(&mut self, horizon: Timestamp) -> usize {
        let before = self.sessions.len();
        self.sessions.retain(|_, s| s.session.started_at >= horizon);
        let sessions = before - self.sessions.len();
        self.attempts.retain(|_, a| a.planned_at >= horizon);
        sessions + self.queue.purge_before(horizon)
    }

    fn count_purgeable(&self, horizon: Timestamp) -> usize {
        self.sessions
            .values()
            .filter(|s| s.session.started_at < horizon)
            .count()
            + self.queue.iter().filter(|r| r.created_at < horizon).count()
    }

    /// Metrics over the inclusive day range `[from, to]`, from the retained
    /// daily aggregates.
    pub fn report(&self, from: NaiveDate, to: NaiveDate) -> MetricsReport {
        let mut total = DayAggregate::default();
        for (_, day) in self.daily.range(from..=to) {
            total.add(day);
        }
        MetricsReport::from_aggregate(from, to, &total)
    }
}

/// What one simulated day did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub day: NaiveDate,
    pub aggregate: DayAggregate,
    pub events: usize,
}

/// An event-sourced campaign with the resources needed to run calls.
#[derive(Debug, Clone)]
pub struct Campaign {
    state: CampaignState,
    log: EventLog,
    script: ScriptTable,
    templates: TemplatePool,
}

impl Campaign {
    pub fn new(settings: CampaignSettings, now: Timestamp) -> Result<Self> {
        settings.validate()?;
        let mut campaign = Campaign {
            state: CampaignState::new(settings.clone()),
            log: EventLog::new(),
            script: ScriptTable::default(),
            templates: TemplatePool::default(),
        };
        campaign.emit(now, Event::CampaignCreated { settings })?;
        Ok(campaign)
    }

    /// Rebuilds a campaign from its full event log.
    pub fn replay(log: EventLog) -> Result<Self> {
        Self::restore(None, log)
    }

    /// Rebuilds a campaign from an optional snapshot plus the events after it.
    pub fn restore(snapshot: Option<Snapshot<CampaignState>>, log: EventLog) -> Result<Self> {
        let (mut state, after) = match snapshot {
            Some(s) => (Some(s.state), s.seq),
            None => (None, 0),
        };
        for record in log.since(after) {
            match (&mut state, &record.payload) {
                (None, Event::CampaignCreated { settings }) => state = Some(CampaignState::new(settings.clone())),
                (None, _) => return Err(Error::Parse("event log does not start with CAMPAIGN_CREATED".into())),
                (Some(s), e) => s.apply(e)?,
            }
        }
        let state = state.ok_or_else(|| Error::Parse("empty event log".into()))?;
        Ok(Campaign {
            state,
            log,
            script: ScriptTable::default(),
            templates: TemplatePool::default(),
        })
    }

    pub fn with_script(mut self, script: ScriptTable) -> Self {
        self.script = script;
        self
    }

    pub fn with_templates(mut self, templates: TemplatePool) -> Self {
        self.templates = templates;
        self
    }

    pub fn state(&self) -> &CampaignState {
        &self.state
    }

    pub fn settings(&self) -> &CampaignSettings {
        &self.state.settings
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.state.lexicon
    }

    pub fn engine(&self) -> DialogEngine {
        DialogEngine::new(self.script.clone(), self.state.settings.policy.limits())
    }

    pub fn snapshot(&self) -> Snapshot<CampaignState> {
        Snapshot {
            seq: self.log.last_seq(),
            state: self.state.clone(),
        }
    }

    /// Drops log records already covered by a snapshot at `seq`.
    pub fn truncate_log_through(&mut self, seq: u64) {
        self.log.truncate_through(seq);
    }

    /// Folds `event` into the state and appends it to the log. Nothing is
    /// appended if the event does not apply; applying is all-or-nothing.
    pub fn emit(&mut self, ts: Timestamp, event: Event) -> Result<&EventRecord> {
        self.state.apply(&event)?;
        Ok(self.log.append(ts, event))
    }

    fn emit_infallible(&mut self, ts: Timestamp, event: Event) {
        self.emit(ts, event).expect("engine-generated events always apply");
    }

    pub fn register_subject(&mut self, subject: Subject, persona: Option<Persona>, now: Timestamp) -> Result<()> {
        subject.validate()?;
        if let Some(p) = &persona {
            p.validate()?;
        }
        if self.state.subjects.contains_key(&subject.subject_id) {
            return Err(Error::contract(format!(
                "subject {} already registered",
                subject.subject_id
            )));
        }
        self.emit_infallible(now, Event::SubjectRegistered { subject, persona });
        Ok(())
    }

    pub fn register_population(&mut self, population: &[(Subject, Persona)], now: Timestamp) -> Result<()> {
        for (subject, persona) in population {
            self.register_subject(subject.clone(), Some(*persona), now)?;
        }
        Ok(())
    }

    pub fn subject(&self, subject_id: &str) -> Result<&SubjectEntry> {
        self.state
            .subjects
            .get(subject_id)
            .ok_or_else(|| Error::NotFound(format!("subject {subject_id}")))
    }

    /// The day `run_day` will simulate next.
    pub fn next_day(&self) -> NaiveDate {
        self.state
            .last_day
            .map_or(self.state.settings.start_date, |d| d + Duration::days(1))
    }

    /// Simulates the next day. Without an explicit seed the day's seed is
    /// derived from the campaign seed and the date.
    pub fn run_day(&mut self, seed: Option<u64>) -> Result<DaySummary> {
        let day = self.next_day();
        self.run_day_on(day, seed)
    }

    pub fn run_day_on(&mut self, day: NaiveDate, seed: Option<u64>) -> Result<DaySummary> {
        let day_seed = seed.unwrap_or_else(|| mix(self.state.settings.seed, day_number(day)));
        let engine = self.engine();
        let events_before = self.log.len();
        let agenda = schedule(
            self.state.subjects.values().map(|e| &e.subject),
            day,
            &self.state.settings,
        );

        let mut rngs: BTreeMap<String, ChaCha8Rng> = BTreeMap::new();
        let mut completed_am: BTreeSet<String> = BTreeSet::new();
        for planned in agenda {
            let entry = self.subject(&planned.subject_id)?.clone();
            let persona = entry.persona.ok_or_else(|| {
                Error::contract(format!(
                    "subject {} has no persona; run_day needs simulation mode",
                    entry.subject.subject_id
                ))
            })?;
            let rng = rngs.entry(planned.subject_id.clone()).or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(day_seed);
                rng.set_stream(entry.ordinal);
                rng
            });
            let already_called = planned.slot == CallSlot::Pm && completed_am.contains(&planned.subject_id);
            let result = self.place_call(&engine, &planned, &persona, already_called, rng)?;
            if planned.slot == CallSlot::Am && result == AttemptResult::Completed {
                completed_am.insert(planned.subject_id.clone());
            }
        }
        let aggregate = self.state.daily.get(&day).copied().unwrap_or_default();
        let end_of_day = day.and_hms_opt(23, 59, 59).expect("valid time");
        self.emit_infallible(end_of_day, Event::DayCompleted { day, aggregate });
        Ok(DaySummary {
            day,
            aggregate,
            events: self.log.len() - events_before,
        })
    }

    // One slot: the primary attempt and any retries after connection failures.
    fn place_call(
        &mut self,
        engine: &DialogEngine,
        planned: &CallAttempt,
        persona: &Persona,
        already_called_today: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<AttemptResult> {
        let mut at = planned.planned_at;
        let mut retry_of = None;
        let mut retry_index = 0;
        loop {
            let attempt_id = format!("att-{:07}", self.state.next_attempt + 1);
            let outcome = connection_outcome(persona, rng);
            let (result, session_ref) = match outcome {
                ConnectionOutcome::ConnectionFailure => (AttemptResult::ConnectionFailure, None),
                ConnectionOutcome::Answered { hang_up_before_turn } => {
                    let session_id = format!("sess-{:07}", self.state.next_session + 1);
                    let (session, truth) = simulate_call(
                        engine,
                        &self.state.lexicon,
                        &self.templates,
                        SimulatedCall {
                            session_id: &session_id,
                            subject_id: &planned.subject_id,
                            persona,
                            already_called_today,
                            hang_up_before_turn,
                            start: at,
                        },
                        rng,
                    )?;
                    let result = if session.outcome == Some(DialogState::Hangup) {
                        AttemptResult::Hangup
                    } else {
                        AttemptResult::Completed
                    };
                    self.close_session(session, Some(truth))?;
                    (result, Some(session_id))
                }
            };
            let record = AttemptRecord {
                attempt_id: attempt_id.clone(),
                subject_id: planned.subject_id.clone(),
                planned_at: at,
                slot: planned.slot,
                result,
                session_ref,
                retry_of: retry_of.take(),
                retry_index,
            };
            self.emit_infallible(at, Event::AttemptResolved { attempt: record });
            if result != AttemptResult::ConnectionFailure || retry_index >= self.state.settings.max_retries {
                return Ok(result);
            }
            retry_index += 1;
            retry_of = Some(attempt_id);
            at += Duration::minutes(self.state.settings.retry_delay_minutes);
        }
    }

    /// Triages a finished session, records it and queues an escalation if
    /// needed.
    fn close_session(&mut self, session: CallSession, simulated: Option<Vec<TurnTruth>>) -> Result<TriageDecision> {
        let decision = decide(&session, &self.state.settings.policy)?;
        let ended = session.transcript.last().map_or(session.started_at, |u| u.ts);
        let record = decision
            .reason()
            .map(|reason| EscalationRecord::new(&session, reason, ended));
        self.emit_infallible(
            ended,
            Event::SessionClosed {
                session,
                decision,
                simulated,
            },
        );
        if let Some(record) = record {
            self.emit_infallible(ended, Event::Escalated { record });
        }
        Ok(decision)
    }

    /// Starts an interactive call.
    pub fn start_session(
        &mut self,
        subject_id: &str,
        already_called_today: bool,
        now: Timestamp,
    ) -> Result<CallSession> {
        self.subject(subject_id)?;
        let session_id = format!("sess-{:07}", self.state.next_session + 1);
        let session = self
            .engine()
            .start_session(session_id, subject_id, already_called_today, now);
        self.emit_infallible(
            now,
            Event::SessionUpdated {
                session: session.clone(),
            },
        );
        Ok(session)
    }

    /// Classifies one callee utterance of an interactive call and advances it.
    pub fn session_utterance(&mut self, session_id: &str, text: &str, now: Timestamp) -> Result<UtteranceOutcome> {
        let mut session = self.open_session(session_id)?.clone();
        let nlu = self.state.lexicon.classify(text);
        let reply = self.engine().advance(&mut session, text, nlu.clone(), now)?;
        let decision = if session.is_terminal() {
            Some(self.close_session(session.clone(), None)?)
        } else {
            self.emit_infallible(
                now,
                Event::SessionUpdated {
                    session: session.clone(),
                },
            );
            None
        };
        Ok(UtteranceOutcome {
            reply,
            nlu,
            session,
            decision,
        })
    }

    /// The callee of an interactive call hung up.
    pub fn session_hang_up(&mut self, session_id: &str) -> Result<TriageDecision> {
        let mut session = self.open_session(session_id)?.clone();
        self.engine().hang_up(&mut session)?;
        self.close_session(session, None)
    }

    pub fn open_session(&self, session_id: &str) -> Result<&CallSession> {
        match self.state.open_sessions.get(session_id) {
            Some(s) => Ok(s),
            None if self.state.sessions.contains_key(session_id) => {
                Err(Error::contract(format!("session {session_id} has already ended")))
            }
            None => Err(Error::NotFound(format!("session {session_id}"))),
        }
    }

    /// An open or finished session.
    pub fn session(&self, session_id: &str) -> Result<&CallSession> {
        self.state
            .open_sessions
            .get(session_id)
            .or_else(|| self.state.sessions.get(session_id).map(|e| &e.session))
            .ok_or_else(|| Error::NotFound(format!("session {session_id}")))
    }

    pub fn escalations(&self, status: Option<ReviewStatus>) -> Vec<&EscalationRecord> {
        self.state.queue.list(status)
    }

    /// Applies an operator review; returns the labelled examples it carries.
    pub fn review(&mut self, record_id: &str, decision: ReviewDecision) -> Result<Vec<LabeledExample>> {
        self.state.queue.check_review(record_id, &decision)?;
        let record = self.state.queue.get(record_id).expect("checked");
        let examples = decision
            .labels
            .iter()
            .map(|l| LabeledExample::new(record.transcript[l.seq].text.clone(), l.label, ExampleSource::Operator))
            .collect();
        let ts = decision.reviewed_at;
        self.emit(
            ts,
            Event::Reviewed {
                record_id: record_id.to_owned(),
                decision,
            },
        )?;
        Ok(examples)
    }

    /// Retrains the lexicon on `examples`; returns the new version.
    pub fn apply_labels(&mut self, examples: Vec<LabeledExample>, now: Timestamp) -> Result<u64> {
        let updated = self.state.lexicon.train_update(&examples)?;
        let version = updated.version();
        self.emit(
            now,
            Event::LabelsApplied {
                examples,
                lexicon_version: version,
            },
        )?;
        Ok(version)
    }

    pub fn install_lexicon(&mut self, lexicon: Lexicon, now: Timestamp) -> Result<()> {
        if lexicon.version() <= self.state.lexicon.version() {
            return Err(Error::contract(format!(
                "lexicon version {} does not exceed the installed version {}",
                lexicon.version(),
                self.state.lexicon.version()
            )));
        }
        self.emit(now, Event::LexiconInstalled { lexicon })?;
        Ok(())
    }

    /// Distinct, not yet labelled callee utterances of retained calls,
    /// scored by the current lexicon. Free-text symptom details are not
    /// intent-bearing and are left out. Each text appears once, at its
    /// earliest occurrence.
    pub fn hitl_pool(&self) -> Vec<PoolItem> {
        let mut seen: BTreeMap<&str, PoolItem> = BTreeMap::new();
        for entry in self.state.sessions.values() {
            let s = &entry.session;
            for (seq, u) in s.callee_turns() {
                if u.question == Some(Question::Detail) || self.state.labeled_texts.contains(&u.text) {
                    continue;
                }
                let candidate = (u.ts, s.session_id.as_str(), seq);
                let replace = match seen.get(u.text.as_str()) {
                    Some(prev) => candidate < (prev.ts, prev.session_id.as_str(), prev.seq),
                    None => true,
                };
                if replace {
                    seen.insert(
                        u.text.as_str(),
                        PoolItem {
                            session_id: s.session_id.clone(),
                            seq,
                            text: u.text.clone(),
                            ts: u.ts,
                            nlu: self.state.lexicon.classify(&u.text),
                        },
                    );
                }
            }
        }
        seen.into_values().collect()
    }

    /// Simulator ground-truth label for a callee turn.
    pub fn truth_label(&self, session_id: &str, seq: usize) -> Result<IntentClass> {
        let entry = self
            .state
            .sessions
            .get(session_id)
            .ok_or_else(|| Error::NotFound(format!("session {session_id}")))?;
        let truth = entry
            .simulated
            .as_ref()
            .ok_or_else(|| Error::contract(format!("session {session_id} has no simulator ground truth")))?;
        truth
            .iter()
            .find(|t| t.seq == seq)
            .and_then(TurnTruth::label)
            .ok_or_else(|| Error::NotFound(format!("labelled turn {seq} of session {session_id}")))
    }

    /// One simulated labelling round: the `k` most uncertain unlabelled
    /// utterances get their ground-truth labels and the lexicon is
    /// retrained. Returns the number of labels applied (0 when the pool is
    /// exhausted, in which case nothing is recorded).
    pub fn hitl_round(&mut self, k: usize, now: Timestamp) -> Result<usize> {
        let batch = select_batch(&self.hitl_pool(), k, self.state.settings.policy.scorer);
        let examples = batch
            .iter()
            .map(|item| {
                let label = self.truth_label(&item.session_id, item.seq)?;
                Ok(LabeledExample::new(item.text.clone(), label, ExampleSource::Operator))
            })
            .collect::<Result<Vec<_>>>()?;
        if examples.is_empty() {
            return Ok(0);
        }
        let n = examples.len();
        self.apply_labels(examples, now)?;
        Ok(n)
    }

    /// Removes transcripts and escalations created more than the retention
    /// period before `now`. Daily aggregates are kept.
    pub fn purge(&mut self, now: Timestamp) -> Result<usize> {
        let horizon = now - Duration::days(self.state.settings.retention_days);
        let purge_count = self.state.count_purgeable(horizon);
        self.emit(
            now,
            Event::Purged {
                now,
                horizon,
                purge_count,
            },
        )?;
        Ok(purge_count)
    }

    pub fn report(&self, from: NaiveDate, to: NaiveDate) -> MetricsReport {
        self.state.report(from, to)
    }

    /// Computes a report and records it in the log.
    pub fn record_report(&mut self, from: NaiveDate, to: NaiveDate, now: Timestamp) -> Result<MetricsReport> {
        let report = self.report(from, to);
        self.emit(now, Event::ReportGenerated { report: report.clone() })?;
        Ok(report)
    }
}

/// Result of one interactive utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceOutcome {
    pub reply: Option<String>,
    pub nlu: crate::nlu::NluResult,
    pub session: CallSession,
    /// Set once the call has ended.
    pub decision: Option<TriageDecision>,
}

pub struct SimulatedCall<'a> {
    pub session_id: &'a str,
    pub subject_id: &'a str,
    pub persona: &'a Persona,
    pub already_called_today: bool,
    pub hang_up_before_turn: Option<u32>,
    pub start: Timestamp,
}

/// Plays one answered call between the dialog engine and a simulated
/// callee. A callee due to hang up does so before the drawn turn, or before
/// their final answer if the call would otherwise finish first, so every
/// drawn hang-up happens.
pub fn simulate_call(
    engine: &DialogEngine,
    lexicon: &Lexicon,
    templates: &TemplatePool,
    call: SimulatedCall<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<(CallSession, Vec<TurnTruth>)> {
    let persona = call.persona;
    let mut session = engine.start_session(call.session_id, call.subject_id, call.already_called_today, call.start);
    let mut truth = Vec::new();
    let mut turn = 1u32;
    let mut now = call.start;
    while let Some(prompt) = session.current_prompt() {
        let question = session.current_question().expect("non-terminal session has a question");
        if let Some(k) = call.hang_up_before_turn {
            let final_answer =
                prompt == ScriptKey::DetailQ || (prompt == ScriptKey::RespQ && !persona.symptomatic_resp);
            if turn >= k || final_answer {
                engine.hang_up(&mut session)?;
                break;
            }
        }
        now += Duration::seconds(TURN_SECONDS);
        let response = respond_to(persona, prompt, templates, rng)?;
        let nlu = lexicon.classify(&response.text);
        truth.push(TurnTruth {
            seq: session.transcript.len(),
            question,
            intent: response.answer.intent(),
            off_script: response.off_script,
            affirms_symptom: response.affirms_symptom(),
        });
        engine.advance(&mut session, &response.text, nlu, now)?;
        debug_assert_eq!(
            session.transcript[truth.last().expect("pushed").seq].speaker,
            Speaker::Callee
        );
        turn += 1;
    }
    Ok((session, truth))
}

fn day_number(day: NaiveDate) -> u64 {
    u64::try_from(day.num_days_from_ce()).unwrap_or(0)
}

// splitmix64 finaliser over the pair.
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
