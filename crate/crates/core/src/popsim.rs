//! Synthetic callee population with ground truth.
//!
//! Each simulated subject carries a persona: an answering style, which
//! symptoms they actually have, and how likely they are to hang up, be
//! unreachable or say something off-script. Replies are drawn from a template
//! pool keyed by (style, prompt, answer), so the ground-truth answer is always
//! known even when the rendered text is hard to classify.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialog::ScriptKey;
use crate::error::{Error, Result};
use crate::nlu::IntentClass;

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.toml");

/// Prompts a persona can answer.
pub const ANSWERABLE: [ScriptKey; 6] = [
    ScriptKey::Greeting,
    ScriptKey::Regreeting,
    ScriptKey::ConsentQ,
    ScriptKey::FeverQ,
    ScriptKey::RespQ,
    ScriptKey::DetailQ,
];

/// Turns in the nominal call used to calibrate the hang-up hazard.
pub const NOMINAL_TURNS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Style {
    Cooperative,
    Verbose,
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Cooperative => "COOPERATIVE",
            Style::Verbose => "VERBOSE",
        })
    }
}

/// Ground-truth content of a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Answer {
    /// Greeting only ("Hello?").
    Greet,
    Yes,
    No,
    /// Free-text symptom description.
    Detail,
}

impl Answer {
    /// The class a perfect classifier would assign, if the answer has one.
    pub fn intent(self) -> Option<IntentClass> {
        match self {
            Answer::Greet => Some(IntentClass::Other),
            Answer::Yes => Some(IntentClass::Yes),
            Answer::No => Some(IntentClass::No),
            Answer::Detail => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub style: Style,
    pub symptomatic_fever: bool,
    pub symptomatic_resp: bool,
    pub hang_up_prob: f64,
    pub conn_fail_prob: f64,
    pub noise_prob: f64,
}

impl Default for Persona {
    fn default() -> Self {
        Persona {
            style: Style::Cooperative,
            symptomatic_fever: false,
            symptomatic_resp: false,
            hang_up_prob: 0.146,
            conn_fail_prob: 0.073,
            noise_prob: 0.05,
        }
    }
}

impl Persona {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("hang_up_prob", self.hang_up_prob),
            ("conn_fail_prob", self.conn_fail_prob),
            ("noise_prob", self.noise_prob),
        ] {
            check_probability(name, p)?;
        }
        Ok(())
    }

    pub fn is_symptomatic(&self) -> bool {
        self.symptomatic_fever || self.symptomatic_resp
    }

    /// The truthful answer to `prompt`.
    pub fn answer_to(&self, prompt: ScriptKey) -> Result<Answer> {
        Ok(match prompt {
            ScriptKey::Greeting => Answer::Greet,
            ScriptKey::Regreeting | ScriptKey::ConsentQ => Answer::Yes,
            ScriptKey::FeverQ => yes_no(self.symptomatic_fever),
            ScriptKey::RespQ => yes_no(self.symptomatic_resp),
            ScriptKey::DetailQ => Answer::Detail,
            ScriptKey::Reprompt | ScriptKey::Closing => {
                return Err(Error::contract(format!(
                    "`{prompt}` is not a question a callee answers"
                )))
            }
        })
    }
}

fn yes_no(b: bool) -> Answer {
    if b {
        Answer::Yes
    } else {
        Answer::No
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

/// Subject under active monitoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub enrolled_at: NaiveDate,
    pub window_days: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_ref: Option<String>,
    pub phone_label: String,
}

impl Subject {
    pub fn validate(&self) -> Result<()> {
        if self.window_days < 1 {
            return Err(Error::contract(format!(
                "subject {} must have window_days >= 1",
                self.subject_id
            )));
        }
        Ok(())
    }

    /// Whether `day` falls inside the monitoring window.
    pub fn is_active_on(&self, day: NaiveDate) -> bool {
        let offset = (day - self.enrolled_at).num_days();
        offset >= 0 && offset < i64::from(self.window_days)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub n_subjects: usize,
    pub verbose_fraction: f64,
    pub symptom_prevalence: f64,
    pub seed: u64,
    pub enrolled_at: NaiveDate,
    pub window_days: u32,
    pub hang_up_prob: f64,
    pub conn_fail_prob: f64,
    pub noise_prob: f64,
    /// Off-script rate for VERBOSE personas; falls back to `noise_prob`.
    pub verbose_noise_prob: Option<f64>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        let persona = Persona::default();
        PopulationConfig {
            n_subjects: 100,
            verbose_fraction: 0.3,
            symptom_prevalence: 0.02,
            seed: 0,
            enrolled_at: NaiveDate::from_ymd_opt(2020, 3, 9).expect("valid date"),
            window_days: 14,
            hang_up_prob: persona.hang_up_prob,
            conn_fail_prob: persona.conn_fail_prob,
            noise_prob: persona.noise_prob,
            verbose_noise_prob: None,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("verbose_fraction", self.verbose_fraction)?;
        check_probability("symptom_prevalence", self.symptom_prevalence)?;
        check_probability("hang_up_prob", self.hang_up_prob)?;
        check_probability("conn_fail_prob", self.conn_fail_prob)?;
        check_probability("noise_prob", self.noise_prob)?;
        if let Some(p) = self.verbose_noise_prob {
            check_probability("verbose_noise_prob", p)?;
        }
        if self.window_days < 1 {
            return Err(Error::config("window_days must be at least 1"));
        }
        Ok(())
    }
}

/// Draws `n_subjects` subjects and their personas; deterministic in `seed`.
pub fn sample_population(config: &PopulationConfig) -> Result<Vec<(Subject, Persona)>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let population = (0..config.n_subjects)
        .map(|i| {
            let style = if rng.gen_bool(config.verbose_fraction) {
                Style::Verbose
            } else {
                Style::Cooperative
            };
            let (fever, resp) = if rng.gen_bool(config.symptom_prevalence) {
                match rng.gen_range(0..3) {
                    0 => (true, false),
                    1 => (false, true),
                    _ => (true, true),
                }
            } else {
                (false, false)
            };
            let noise_prob = match style {
                Style::Verbose => config.verbose_noise_prob.unwrap_or(config.noise_prob),
                Style::Cooperative => config.noise_prob,
            };
            let subject_id = format!("subj-{:05}", i + 1);
            let subject = Subject {
                persona_ref: Some(subject_id.clone()),
                phone_label: format!("phone-{:05}", i + 1),
                subject_id,
                enrolled_at: config.enrolled_at,
                window_days: config.window_days,
            };
            let persona = Persona {
                style,
                symptomatic_fever: fever,
                symptomatic_resp: resp,
                hang_up_prob: config.hang_up_prob,
                conn_fail_prob: config.conn_fail_prob,
                noise_prob,
            };
            (subject, persona)
        })
        .collect();
    Ok(population)
}

/// JSON-lines population dump, one `{subject, persona}` object per line.
pub fn population_jsonl(population: &[(Subject, Persona)]) -> String {
    #[derive(Serialize)]
    struct Row<'a> {
        subject: &'a Subject,
        persona: &'a Persona,
    }
    population
        .iter()
        .map(|(subject, persona)| {
            let mut line = serde_json::to_string(&Row { subject, persona }).expect("row serializes");
            line.push('\n');
            line
        })
        .collect()
}

/// Utterance templates keyed by (style, prompt, answer), plus off-script
/// fillers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateFile", into = "TemplateFile")]
pub struct TemplatePool {
    cells: BTreeMap<(Style, ScriptKey, Answer), Vec<String>>,
    fillers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    fillers: Vec<String>,
    #[serde(flatten)]
    styles: BTreeMap<Style, BTreeMap<ScriptKey, BTreeMap<Answer, Vec<String>>>>,
}

impl TryFrom<TemplateFile> for TemplatePool {
    type Error = Error;

    fn try_from(file: TemplateFile) -> Result<Self> {
        let mut cells = BTreeMap::new();
        for (style, prompts) in file.styles {
            for (prompt, answers) in prompts {
                for (answer, texts) in answers {
                    cells.insert((style, prompt, answer), texts);
                }
            }
        }
        let pool = TemplatePool {
            cells,
            fillers: file.fillers,
        };
        pool.validate()?;
        Ok(pool)
    }
}

impl From<TemplatePool> for TemplateFile {
    fn from(pool: TemplatePool) -> Self {
        let mut styles: BTreeMap<Style, BTreeMap<ScriptKey, BTreeMap<Answer, Vec<String>>>> = BTreeMap::new();
        for ((style, prompt, answer), texts) in pool.cells {
            styles
                .entry(style)
                .or_default()
                .entry(prompt)
                .or_default()
                .insert(answer, texts);
        }
        TemplateFile {
            fillers: pool.fillers,
            styles,
        }
    }
}

impl Default for TemplatePool {
    fn default() -> Self {
        TemplatePool::from_toml(DEFAULT_TEMPLATES).expect("bundled template pool is valid")
    }
}

impl TemplatePool {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TemplateFile = toml::from_str(text)?;
        TemplatePool::try_from(file)
    }

    /// Every (style, prompt, answer) a persona can produce must have at least
    /// one template, and no text may stand for two different intents.
    fn validate(&self) -> Result<()> {
        if self.fillers.is_empty() {
            return Err(Error::config("template pool needs at least one filler"));
        }
        let probe_personas = [(false, false), (true, true)];
        for style in [Style::Cooperative, Style::Verbose] {
            for prompt in ANSWERABLE {
                for (fever, resp) in probe_personas {
                    let persona = Persona {
                        style,
                        symptomatic_fever: fever,
                        symptomatic_resp: resp,
                        ..Persona::default()
                    };
                    let answer = persona.answer_to(prompt)?;
                    if self.cell(style, prompt, answer).is_empty() {
                        return Err(Error::config(format!("no templates for {style}.{prompt}.{answer:?}")));
                    }
                }
            }
        }
        let mut seen: BTreeMap<&str, Option<IntentClass>> = BTreeMap::new();
        let all = self
            .cells
            .iter()
            .flat_map(|((_, _, a), texts)| texts.iter().map(move |t| (t.as_str(), a.intent())))
            .chain(self.fillers.iter().map(|t| (t.as_str(), Some(IntentClass::Other))));
        for (text, intent) in all {
            if let Some(prev) = seen.insert(text, intent) {
                if prev != intent {
                    return Err(Error::config(format!("template `{text}` is used for two intents")));
                }
            }
        }
        Ok(())
    }

    pub fn cell(&self, style: Style, prompt: ScriptKey, answer: Answer) -> &[String] {
        self.cells
            .get(&(style, prompt, answer))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn fillers(&self) -> &[String] {
        &self.fillers
    }

    /// Distinct texts in the pool.
    pub fn texts(&self) -> BTreeSet<&str> {
        self.cells
            .values()
            .flatten()
            .chain(self.fillers.iter())
            .map(String::as_str)
            .collect()
    }
}

/// A rendered reply with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub text: String,
    /// The prompt being answered.
    pub prompt: ScriptKey,
    /// What the persona truthfully means, independent of rendering.
    pub answer: Answer,
    /// The reply was off-script filler rather than an answer.
    pub off_script: bool,
}

impl Response {
    /// Class a correct classifier should give this text.
    pub fn intent(&self) -> Option<IntentClass> {
        if self.off_script {
            Some(IntentClass::Other)
        } else {
            self.answer.intent()
        }
    }

    /// The text states a symptom: a YES to a symptom question, or a
    /// symptom description. Agreeing to talk is not a symptom.
    pub fn affirms_symptom(&self) -> bool {
        let symptom_prompt = matches!(self.prompt, ScriptKey::FeverQ | ScriptKey::RespQ | ScriptKey::DetailQ);
        !self.off_script && symptom_prompt && matches!(self.answer, Answer::Yes | Answer::Detail)
    }
}

/// Renders the persona's reply to the prompt `question_key`.
pub fn respond<R: Rng + ?Sized>(
    persona: &Persona,
    question_key: &str,
    pool: &TemplatePool,
    rng: &mut R,
) -> Result<Response> {
    let prompt: ScriptKey = question_key
        .parse()
        .map_err(|_| Error::contract(format!("unknown question key `{question_key}`")))?;
    respond_to(persona, prompt, pool, rng)
}

pub fn respond_to<R: Rng + ?Sized>(
    persona: &Persona,
    prompt: ScriptKey,
    pool: &TemplatePool,
    rng: &mut R,
) -> Result<Response> {
    let answer = persona.answer_to(prompt)?;
    // Detail replies are free text already; off-script noise only replaces answers.
    if answer != Answer::Detail && rng.gen_bool(persona.noise_prob) {
        let text = pool.fillers.choose(rng).expect("validated non-empty").clone();
        return Ok(Response {
            text,
            prompt,
            answer,
            off_script: true,
        });
    }
    let text = pool
        .cell(persona.style, prompt, answer)
        .choose(rng)
        .ok_or_else(|| Error::config(format!("no templates for {}.{prompt}.{answer:?}", persona.style)))?
        .clone();
    Ok(Response {
        text,
        prompt,
        answer,
        off_script: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConnectionOutcome {
    ConnectionFailure,
    /// The call connected. When `hang_up_before_turn` is set the callee hangs
    /// up before giving that (1-based) turn, or before their final answer if
    /// the call would otherwise end sooner.
    Answered {
        hang_up_before_turn: Option<u32>,
    },
}

/// Per-turn hang-up hazard whose survival over [`NOMINAL_TURNS`] turns is
/// `1 - hang_up_prob`.
pub fn turn_hazard(hang_up_prob: f64) -> f64 {
    1.0 - (1.0 - hang_up_prob).powf(1.0 / f64::from(NOMINAL_TURNS))
}

pub fn connection_outcome<R: Rng + ?Sized>(persona: &Persona, rng: &mut R) -> ConnectionOutcome {
    if rng.gen_bool(persona.conn_fail_prob) {
        return ConnectionOutcome::ConnectionFailure;
    }
    let hazard = turn_hazard(persona.hang_up_prob).clamp(0.0, 1.0);
    let hang_up_before_turn = (1..=NOMINAL_TURNS).find(|_| rng.gen_bool(hazard));
    ConnectionOutcome::Answered { hang_up_before_turn }
}
