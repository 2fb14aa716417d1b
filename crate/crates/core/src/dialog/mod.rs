//! The symptom-check call as a deterministic finite state machine.
//!
//! A call opens with a greeting (or a shorter re-greeting when the subject
//! was already reached today), asks for consent, then asks the two yes/no
//! questions. A YES to the respiratory question is followed by a free-text
//! request for symptom details. Non-answers are reprompted up to a cap, after
//! which the slot is left UNKNOWN and the call moves on.

mod script;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use script::{ScriptKey, ScriptTable};

use crate::error::{Error, Result};
use crate::nlu::{IntentClass, NluResult};
use crate::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TriState {
    Yes,
    No,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Slots {
    pub fever: TriState,
    pub respiratory: TriState,
    /// Verbatim callee text; only ever set when `respiratory` is YES.
    pub symptom_detail: Option<String>,
}

impl Slots {
    pub fn any_symptom(&self) -> bool {
        self.fever == TriState::Yes || self.respiratory == TriState::Yes
    }

    pub fn any_unknown(&self) -> bool {
        self.fever == TriState::Unknown || self.respiratory == TriState::Unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DialogState {
    Greeting,
    Regreeting,
    ConsentWait,
    FeverQ,
    RespQ,
    Reprompt,
    SymptomDetailQ,
    Closing,
    Completed,
    Hangup,
    AbortedMaxTurns,
}

impl DialogState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            DialogState::Completed | DialogState::Hangup | DialogState::AbortedMaxTurns
        )
    }
}

/// What the callee is currently being asked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Question {
    Greeting,
    Consent,
    Fever,
    Respiratory,
    Detail,
}

impl Question {
    /// Script line that poses this question for the first time.
    pub fn script_key(self) -> ScriptKey {
        match self {
            Question::Greeting => ScriptKey::Greeting,
            Question::Consent => ScriptKey::ConsentQ,
            Question::Fever => ScriptKey::FeverQ,
            Question::Respiratory => ScriptKey::RespQ,
            Question::Detail => ScriptKey::DetailQ,
        }
    }

    pub fn is_symptom(self) -> bool {
        matches!(self, Question::Fever | Question::Respiratory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Speaker {
    System,
    Callee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub ts: Timestamp,
    /// Present on callee turns only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlu: Option<NluResult>,
    /// The question a callee turn was answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<Question>,
}

impl Utterance {
    fn system(text: &str, ts: Timestamp) -> Self {
        Utterance {
            speaker: Speaker::System,
            text: text.to_owned(),
            ts,
            nlu: None,
            question: None,
        }
    }

    fn callee(text: &str, ts: Timestamp, nlu: NluResult, question: Question) -> Self {
        Utterance {
            speaker: Speaker::Callee,
            text: text.to_owned(),
            ts,
            nlu: Some(nlu),
            question: Some(question),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSession {
    pub session_id: String,
    pub subject_id: String,
    pub state: DialogState,
    pub slots: Slots,
    pub consent: TriState,
    pub transcript: Vec<Utterance>,
    pub turn_count: u32,
    pub reprompts: BTreeMap<Question, u32>,
    /// Questions abandoned after hitting the reprompt cap.
    pub capped: BTreeSet<Question>,
    /// Question awaiting an answer after a reprompt.
    pub pending: Option<Question>,
    pub started_at: Timestamp,
    pub outcome: Option<DialogState>,
}

impl CallSession {
    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal()
    }

    /// The question the next callee turn answers, or `None` once terminal.
    pub fn current_question(&self) -> Option<Question> {
        match self.state {
            DialogState::Greeting => Some(Question::Greeting),
            DialogState::Regreeting | DialogState::ConsentWait => Some(Question::Consent),
            DialogState::FeverQ => Some(Question::Fever),
            DialogState::RespQ => Some(Question::Respiratory),
            DialogState::SymptomDetailQ => Some(Question::Detail),
            DialogState::Reprompt => self.pending,
            DialogState::Closing | DialogState::Completed | DialogState::Hangup | DialogState::AbortedMaxTurns => None,
        }
    }

    /// Script line the callee is responding to.
    pub fn current_prompt(&self) -> Option<ScriptKey> {
        match self.state {
            DialogState::Regreeting => Some(ScriptKey::Regreeting),
            _ => self.current_question().map(Question::script_key),
        }
    }

    /// The callee declined to talk.
    pub fn consent_refused(&self) -> bool {
        self.consent == TriState::No
    }

    pub fn callee_turns(&self) -> impl Iterator<Item = (usize, &Utterance)> {
        self.transcript
            .iter()
            .enumerate()
            .filter(|(_, u)| u.speaker == Speaker::Callee)
    }

    /// JSON-lines transcript: one `{session_id, seq, speaker, text, ts,
    /// class, p_top1}` object per utterance.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for (seq, u) in self.transcript.iter().enumerate() {
            let row = TranscriptRow {
                session_id: &self.session_id,
                seq,
                speaker: u.speaker,
                text: &u.text,
                ts: u.ts,
                class: u.nlu.as_ref().map(|n| n.top1),
                p_top1: u.nlu.as_ref().map(|n| n.p_top1),
            };
            out.push_str(&serde_json::to_string(&row).expect("transcript row serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize)]
struct TranscriptRow<'a> {
    session_id: &'a str,
    seq: usize,
    speaker: Speaker,
    text: &'a str,
    ts: Timestamp,
    class: Option<IntentClass>,
    p_top1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogLimits {
    /// Reprompts allowed per question before it is skipped.
    pub max_reprompts: u32,
    /// Callee turns after which the call is aborted.
    pub max_turns: u32,
}

impl Default for DialogLimits {
    fn default() -> Self {
        DialogLimits {
            max_reprompts: 2,
            max_turns: 12,
        }
    }
}

enum Next {
    Ask(Question),
    Reprompt(Question),
    Close,
}

/// Runs calls against a script table. Stateless apart from configuration;
/// every call's state lives in its [`CallSession`].
#[derive(Debug, Clone, Default)]
pub struct DialogEngine {
    script: ScriptTable,
    limits: DialogLimits,
}

impl DialogEngine {
    pub fn new(script: ScriptTable, limits: DialogLimits) -> Self {
        DialogEngine { script, limits }
    }

    pub fn script(&self) -> &ScriptTable {
        &self.script
    }

    pub fn limits(&self) -> DialogLimits {
        self.limits
    }

    pub fn start_session(
        &self,
        session_id: impl Into<String>,
        subject_id: impl Into<String>,
        already_called_today: bool,
        now: Timestamp,
    ) -> CallSession {
        let (state, key) = if already_called_today {
            (DialogState::Regreeting, ScriptKey::Regreeting)
        } else {
            (DialogState::Greeting, ScriptKey::Greeting)
        };
        CallSession {
            session_id: session_id.into(),
            subject_id: subject_id.into(),
            state,
            slots: Slots::default(),
            consent: TriState::Unknown,
            transcript: vec![Utterance::system(self.script.line(key), now)],
            turn_count: 0,
            reprompts: BTreeMap::new(),
            capped: BTreeSet::new(),
            pending: None,
            started_at: now,
            outcome: None,
        }
    }

    /// Consumes one callee turn and returns the system reply, if any. The
    /// reply is `None` only when the turn limit aborts the call.
    pub fn advance(
        &self,
        session: &mut CallSession,
        callee_text: &str,
        nlu: NluResult,
        now: Timestamp,
    ) -> Result<Option<String>> {
        let question = session.current_question().ok_or_else(|| {
            Error::contract(format!(
                "advance on session {} in terminal state {:?}",
                session.session_id, session.state
            ))
        })?;
        let class = nlu.top1;
        session
            .transcript
            .push(Utterance::callee(callee_text, now, nlu, question));
        session.turn_count += 1;

        let next = match (question, class) {
            (Question::Greeting, IntentClass::Yes) | (Question::Consent, IntentClass::Yes) => {
                session.consent = TriState::Yes;
                Next::Ask(Question::Fever)
            }
            (Question::Greeting, IntentClass::No) | (Question::Consent, IntentClass::No) => {
                session.consent = TriState::No;
                Next::Close
            }
            (Question::Greeting, IntentClass::Other) => Next::Ask(Question::Consent),
            (Question::Fever, IntentClass::Yes) => {
                session.slots.fever = TriState::Yes;
                Next::Ask(Question::Respiratory)
            }
            (Question::Fever, IntentClass::No) => {
                session.slots.fever = TriState::No;
                Next::Ask(Question::Respiratory)
            }
            (Question::Respiratory, IntentClass::Yes) => {
                session.slots.respiratory = TriState::Yes;
                Next::Ask(Question::Detail)
            }
            (Question::Respiratory, IntentClass::No) => {
                session.slots.respiratory = TriState::No;
                Next::Close
            }
            (Question::Detail, _) => {
                if !callee_text.trim().is_empty() {
                    session.slots.symptom_detail = Some(callee_text.to_owned());
                }
                Next::Close
            }
            (q, IntentClass::Other) => self.reprompt_or_skip(session, q),
        };

        if !matches!(next, Next::Close) && session.turn_count >= self.limits.max_turns {
            session.state = DialogState::AbortedMaxTurns;
            session.outcome = Some(DialogState::AbortedMaxTurns);
            session.pending = None;
            return Ok(None);
        }

        let key = match next {
            Next::Ask(q) => {
                session.state = match q {
                    Question::Greeting => DialogState::Greeting,
                    Question::Consent => DialogState::ConsentWait,
                    Question::Fever => DialogState::FeverQ,
                    Question::Respiratory => DialogState::RespQ,
                    Question::Detail => DialogState::SymptomDetailQ,
                };
                session.pending = None;
                q.script_key()
            }
            Next::Reprompt(q) => {
                session.state = DialogState::Reprompt;
                session.pending = Some(q);
                ScriptKey::Reprompt
            }
            Next::Close => {
                // CLOSING is spoken and the call ends in the same step.
                session.state = DialogState::Completed;
                session.outcome = Some(DialogState::Completed);
                session.pending = None;
                ScriptKey::Closing
            }
        };
        let reply = self.script.line(key).to_owned();
        session.transcript.push(Utterance::system(&reply, now));
        Ok(Some(reply))
    }

    fn reprompt_or_skip(&self, session: &mut CallSession, question: Question) -> Next {
        let used = session.reprompts.entry(question).or_insert(0);
        if *used < self.limits.max_reprompts {
            *used += 1;
            return Next::Reprompt(question);
        }
        session.capped.insert(question);
        match question {
            Question::Greeting | Question::Consent => Next::Ask(Question::Fever),
            Question::Fever => Next::Ask(Question::Respiratory),
            Question::Respiratory | Question::Detail => Next::Close,
        }
    }

    /// The callee hung up. Slots keep whatever was answered so far.
    pub fn hang_up(&self, session: &mut CallSession) -> Result<()> {
        if session.is_terminal() {
            return Err(Error::contract(format!(
                "hang_up on session {} in terminal state {:?}",
                session.session_id, session.state
            )));
        }
        session.state = DialogState::Hangup;
        session.outcome = Some(DialogState::Hangup);
        session.pending = None;
        Ok(())
    }
}
