//! Escalation policy, the operator review queue and active-learning batch
//! selection.
//!
//! A finished call is escalated when the callee reported a symptom, when the
//! system was unsure of what it heard, or when the call ended before the
//! questions were answered. Only calls that are both complete and confident
//! are cleared.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dialog::{CallSession, DialogLimits, DialogState, Question, Speaker, Utterance};
use crate::error::{Error, Result};
use crate::nlu::{uncertainty_with, ExampleSource, IntentClass, LabeledExample, NluResult, Scorer};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriagePolicy {
    /// Confidence threshold on the top-1 score.
    pub tau: f64,
    pub max_reprompts: u32,
    pub max_turns: u32,
    pub scorer: Scorer,
}

impl Default for TriagePolicy {
    fn default() -> Self {
        TriagePolicy {
            tau: 0.7,
            max_reprompts: 2,
            max_turns: 12,
            scorer: Scorer::TopOne,
        }
    }
}

impl TriagePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.max_turns < 5 {
            return Err(Error::config(format!(
                "max_turns must be at least 5, got {}",
                self.max_turns
            )));
        }
        Ok(())
    }

    pub fn limits(&self) -> DialogLimits {
        DialogLimits {
            max_reprompts: self.max_reprompts,
            max_turns: self.max_turns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EscalationReason {
    Symptomatic,
    Uncertain,
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "UPPERCASE")]
pub enum TriageDecision {
    Clear,
    Escalate(EscalationReason),
}

impl TriageDecision {
    pub fn is_escalated(self) -> bool {
        matches!(self, TriageDecision::Escalate(_))
    }

    pub fn reason(self) -> Option<EscalationReason> {
        match self {
            TriageDecision::Clear => None,
            TriageDecision::Escalate(r) => Some(r),
        }
    }
}

/// Per-turn view of the flags a callee turn raised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnFlags {
    /// Index into the transcript.
    pub seq: usize,
    pub question: Question,
    /// Turn was read as a YES to a symptom question.
    pub symptom: bool,
    /// Turn scored below the threshold, or exhausted the question's reprompts.
    pub uncertain: bool,
}

impl TurnFlags {
    pub fn flagged(&self) -> bool {
        self.symptom || self.uncertain
    }
}

/// Flags raised by each callee turn of `session`.
pub fn turn_flags(session: &CallSession, policy: &TriagePolicy) -> Vec<TurnFlags> {
    let turns: Vec<(usize, &Utterance)> = session.callee_turns().collect();
    turns
        .iter()
        .enumerate()
        .filter_map(|(i, (seq, u))| {
            let question = u.question?;
            let nlu = u.nlu.as_ref()?;
            let last_for_question = turns[i + 1..].iter().all(|(_, later)| later.question != Some(question));
            let capped_here = session.capped.contains(&question) && last_for_question;
            Some(TurnFlags {
                seq: *seq,
                question,
                symptom: question.is_symptom() && nlu.top1 == IntentClass::Yes,
                uncertain: nlu.p_top1 < policy.tau || capped_here,
            })
        })
        .collect()
}

/// Escalation decision for a finished call.
///
/// Precedence is SYMPTOMATIC over UNCERTAIN over INCOMPLETE. Slots left
/// UNKNOWN because a question was never reached (hang-up, refused consent)
/// make the call INCOMPLETE; a completed call that still has an UNKNOWN slot
/// is UNCERTAIN.
pub fn decide(session: &CallSession, policy: &TriagePolicy) -> Result<TriageDecision> {
    let outcome = match session.outcome {
        Some(o) if session.is_terminal() => o,
        _ => {
            return Err(Error::contract(format!(
                "decide on non-terminal session {} ({:?})",
                session.session_id, session.state
            )))
        }
    };
    if session.slots.any_symptom() {
        return Ok(TriageDecision::Escalate(EscalationReason::Symptomatic));
    }
    let low_confidence = session
        .callee_turns()
        .filter_map(|(_, u)| u.nlu.as_ref())
        .any(|n| n.p_top1 < policy.tau);
    let finished = outcome != DialogState::Hangup && !session.consent_refused();
    if low_confidence
        || !session.capped.is_empty()
        || outcome == DialogState::AbortedMaxTurns
        || (finished && session.slots.any_unknown())
    {
        return Ok(TriageDecision::Escalate(EscalationReason::Uncertain));
    }
    if outcome == DialogState::Hangup || session.consent_refused() {
        return Ok(TriageDecision::Escalate(EscalationReason::Incomplete));
    }
    Ok(TriageDecision::Clear)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReviewStatus {
    Pending,
    Reviewed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    ConfirmSymptomatic,
    OverrideClear,
}

/// Operator's class for one callee utterance, addressed by transcript index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceLabel {
    pub seq: usize,
    pub label: IntentClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub operator_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub labels: Vec<UtteranceLabel>,
    pub reviewed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationRecord {
    pub record_id: String,
    pub session_id: String,
    pub subject_id: String,
    pub reason: EscalationReason,
    pub transcript: Vec<Utterance>,
    pub created_at: Timestamp,
    pub review_status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<ReviewDecision>,
}

impl EscalationRecord {
    /// A pending record holding a snapshot of the session transcript. The id
    /// is assigned on enqueue.
    pub fn new(session: &CallSession, reason: EscalationReason, created_at: Timestamp) -> Self {
        EscalationRecord {
            record_id: String::new(),
            session_id: session.session_id.clone(),
            subject_id: session.subject_id.clone(),
            reason,
            transcript: session.transcript.clone(),
            created_at,
            review_status: ReviewStatus::Pending,
            review: None,
        }
    }

    /// Snapshot turns read as a symptom YES or scored below the threshold.
    pub fn flagged_turns(&self, policy: &TriagePolicy) -> usize {
        self.transcript
            .iter()
            .filter(|u| u.speaker == Speaker::Callee)
            .filter_map(|u| Some((u.question?, u.nlu.as_ref()?)))
            .filter(|(q, n)| (q.is_symptom() && n.top1 == IntentClass::Yes) || n.p_top1 < policy.tau)
            .count()
    }
}

/// Pending and reviewed escalations keyed by record id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    records: BTreeMap<String, EscalationRecord>,
    next_id: u64,
}

impl ReviewQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record, assigning an id when it has none.
    pub fn enqueue(&mut self, mut record: EscalationRecord) -> String {
        self.next_id += 1;
        if record.record_id.is_empty() {
            record.record_id = format!("esc-{:06}", self.next_id);
        }
        let id = record.record_id.clone();
        self.records.insert(id.clone(), record);
        id
    }

    /// Id the next `enqueue` of an id-less record will receive.
    pub fn peek_next_id(&self) -> String {
        format!("esc-{:06}", self.next_id + 1)
    }

    pub fn get(&self, record_id: &str) -> Option<&EscalationRecord> {
        self.records.get(record_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EscalationRecord> {
        self.records.values()
    }

    pub fn list(&self, status: Option<ReviewStatus>) -> Vec<&EscalationRecord> {
        self.records
            .values()
            .filter(|r| status.is_none_or(|s| r.review_status == s))
            .collect()
    }

    /// Checks that a review may be applied without applying it.
    pub fn check_review(&self, record_id: &str, decision: &ReviewDecision) -> Result<()> {
        let record = self
            .records
            .get(record_id)
            .ok_or_else(|| Error::NotFound(format!("escalation {record_id}")))?;
        if record.review_status == ReviewStatus::Reviewed {
            return Err(Error::AlreadyReviewed(record_id.to_owned()));
        }
        for l in &decision.labels {
            match record.transcript.get(l.seq) {
                Some(u) if u.speaker == Speaker::Callee => {}
                _ => {
                    return Err(Error::contract(format!(
                        "label seq {} is not a callee utterance of {record_id}",
                        l.seq
                    )))
                }
            }
        }
        Ok(())
    }

    /// Marks the record reviewed and returns the operator's labels as
    /// training examples.
    pub fn review(&mut self, record_id: &str, decision: ReviewDecision) -> Result<Vec<LabeledExample>> {
        self.check_review(record_id, &decision)?;
        let record = self.records.get_mut(record_id).expect("checked above");
        let examples = decision
            .labels
            .iter()
            .map(|l| LabeledExample::new(record.transcript[l.seq].text.clone(), l.label, ExampleSource::Operator))
            .collect();
        record.review_status = ReviewStatus::Reviewed;
        record.review = Some(decision);
        Ok(examples)
    }

    /// Drops records created strictly before `horizon`; returns how many.
    pub fn purge_before(&mut self, horizon: Timestamp) -> usize {
        let before = self.records.len();
        self.records.retain(|_, r| r.created_at >= horizon);
        before - self.records.len()
    }
}

/// A candidate utterance for labelling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub session_id: String,
    pub seq: usize,
    pub text: String,
    pub ts: Timestamp,
    pub nlu: NluResult,
}

/// The `k` most uncertain pool items, ties broken by earliest timestamp and
/// then by `(session_id, seq)`. Returns the whole pool, sorted, when `k`
/// exceeds its size.
pub fn select_batch(pool: &[PoolItem], k: usize, scorer: Scorer) -> Vec<PoolItem> {
    let mut scored: Vec<(f64, &PoolItem)> = pool.iter().map(|p| (uncertainty_with(&p.nlu, scorer), p)).collect();
    scored.sort_by(|(ua, a), (ub, b)| {
        ub.total_cmp(ua)
            .then_with(|| a.ts.cmp(&b.ts))
            .then_with(|| a.session_id.cmp(&b.session_id))
            .then_with(|| a.seq.cmp(&b.seq))
            .then_with(|| a.text.cmp(&b.text))
            .then(Ordering::Equal)
    });
    scored.into_iter().take(k).map(|(_, p)| p.clone()).collect()
}
