//! Confidence-scored intent classification over callee utterances.
//!
//! The classifier is a smoothed bag-of-words log-linear model. Each class
//! holds a token → weight map; an utterance's logit for a class is the sum of
//! its token weights and the class scores are the softmax of the logits.
//! Weights are derived from per-class token counts with Laplace smoothing, so
//! operator-labelled examples can be folded in by adding counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed set of answer classes. `Other` covers every non-answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum IntentClass {
    Yes,
    No,
    Other,
}

impl IntentClass {
    /// Score-vector order.
    pub const ALL: [IntentClass; 3] = [IntentClass::Yes, IntentClass::No, IntentClass::Other];

    pub fn index(self) -> usize {
        match self {
            IntentClass::Yes => 0,
            IntentClass::No => 1,
            IntentClass::Other => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntentClass::Yes => "YES",
            IntentClass::No => "NO",
            IntentClass::Other => "OTHER",
        }
    }

    // Lower rank wins a tie on the top score.
    fn tie_rank(self) -> u8 {
        match self {
            IntentClass::Other => 0,
            IntentClass::Yes => 1,
            IntentClass::No => 2,
        }
    }
}

impl fmt::Display for IntentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntentClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "YES" => Ok(IntentClass::Yes),
            "NO" => Ok(IntentClass::No),
            "OTHER" => Ok(IntentClass::Other),
            other => Err(Error::Parse(format!("unknown intent class `{other}`"))),
        }
    }
}

/// Classifier output for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NluResult {
    /// Probabilities in `IntentClass::ALL` order (YES, NO, OTHER).
    pub scores: [f64; 3],
    pub top1: IntentClass,
    pub p_top1: f64,
    /// `p_top1` minus the second-largest score.
    pub margin: f64,
}

impl NluResult {
    /// Builds a result from raw logits via a max-shifted softmax.
    pub fn from_logits(logits: [f64; 3]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.map(|l| (l - max).exp());
        let total: f64 = exps.iter().sum();
        Self::from_scores(exps.map(|e| e / total))
    }

    /// Builds a result from an already-normalized score vector.
    pub fn from_scores(scores: [f64; 3]) -> Self {
        let mut ranked = IntentClass::ALL;
        ranked.sort_by(|a, b| {
            scores[b.index()]
                .total_cmp(&scores[a.index()])
                .then(a.tie_rank().cmp(&b.tie_rank()))
        });
        let top1 = ranked[0];
        let p_top1 = scores[top1.index()];
        let margin = p_top1 - scores[ranked[1].index()];
        NluResult {
            scores,
            top1,
            p_top1,
            margin,
        }
    }

    /// A result that puts probability `p` on `class` and splits the rest
    /// evenly. Handy for driving the dialog without a lexicon.
    pub fn confident(class: IntentClass, p: f64) -> Self {
        let rest = (1.0 - p) / 2.0;
        let mut scores = [rest; 3];
        scores[class.index()] = p;
        Self::from_scores(scores)
    }

    pub fn score(&self, class: IntentClass) -> f64 {
        self.scores[class.index()]
    }
}

/// Uncertainty scorer used for escalation and active-learning selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// `1 - p_top1`
    #[default]
    TopOne,
    /// `1 - (p_top1 - p_second)`
    Margin,
}

/// Uncertainty of a classification under the default top-1 scorer.
pub fn uncertainty(result: &NluResult) -> f64 {
    uncertainty_with(result, Scorer::TopOne)
}

pub fn uncertainty_with(result: &NluResult, scorer: Scorer) -> f64 {
    let u = match scorer {
        Scorer::TopOne => 1.0 - result.p_top1,
        Scorer::Margin => 1.0 - result.margin,
    };
    u.clamp(0.0, 1.0)
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExampleSource {
    Seed,
    Operator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: IntentClass,
    pub source: ExampleSource,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: IntentClass, source: ExampleSource) -> Self {
        LabeledExample {
            text: text.into(),
            label,
            source,
        }
    }
}

const SEED_LEXICON: &str = include_str!("../data/seed_lexicon.json");
const SEED_EXAMPLES: &str = include_str!("../data/seed_examples.toml");

/// Per-class token weights plus the counts they were derived from.
///
/// On disk a lexicon is JSON: `{"version", "smoothing", "counts": {CLASS:
/// {token: count}}}`. Weights are always recomputed from counts on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LexiconFile", into = "LexiconFile")]
pub struct Lexicon {
    version: u64,
    smoothing: f64,
    counts: [BTreeMap<String, u64>; 3],
    weights: [HashMap<String, f64>; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFile {
    version: u64,
    smoothing: f64,
    counts: BTreeMap<IntentClass, BTreeMap<String, u64>>,
}

impl TryFrom<LexiconFile> for Lexicon {
    type Error = Error;

    fn try_from(file: LexiconFile) -> Result<Self> {
        let mut counts: [BTreeMap<String, u64>; 3] = Default::default();
        for (class, table) in file.counts {
            counts[class.index()] = table;
        }
        Lexicon::from_counts(counts, file.smoothing, file.version)
    }
}

impl From<Lexicon> for LexiconFile {
    fn from(lex: Lexicon) -> Self {
        let counts = IntentClass::ALL.into_iter().zip(lex.counts).collect::<BTreeMap<_, _>>();
        LexiconFile {
            version: lex.version,
            smoothing: lex.smoothing,
            counts,
        }
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::empty(1.0)
    }
}

impl Lexicon {
    /// A lexicon with no tokens; every utterance classifies uniformly.
    pub fn empty(smoothing: f64) -> Self {
        Lexicon {
            version: 0,
            smoothing,
            counts: Default::default(),
            weights: Default::default(),
        }
    }

    /// A lexicon with hand-set weights and no counts. A later
    /// `train_update` recomputes every weight from counts alone.
    pub fn from_weights(weights: [HashMap<String, f64>; 3]) -> Result<Self> {
        if weights.iter().flat_map(|w| w.values()).any(|w| !w.is_finite()) {
            return Err(Error::config("lexicon weights must be finite"));
        }
        Ok(Lexicon {
            version: 0,
            smoothing: 1.0,
            counts: Default::default(),
            weights,
        })
    }

    pub fn from_counts(counts: [BTreeMap<String, u64>; 3], smoothing: f64, version: u64) -> Result<Self> {
        if !(smoothing.is_finite() && smoothing > 0.0) {
            return Err(Error::config(format!("smoothing must be positive, got {smoothing}")));
        }
        let mut lex = Lexicon {
            version,
            smoothing,
            counts,
            weights: Default::default(),
        };
        lex.recompute_weights();
        Ok(lex)
    }

    /// The lexicon shipped with the engine.
    pub fn seed() -> Self {
        Self::from_json(SEED_LEXICON).expect("bundled seed lexicon is valid")
    }

    /// The labelled utterances the seed lexicon is built from.
    pub fn seed_examples() -> Vec<LabeledExample> {
        parse_examples_toml(SEED_EXAMPLES, ExampleSource::Seed).expect("bundled seed examples are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn weight(&self, class: IntentClass, token: &str) -> f64 {
        self.weights[class.index()].get(token).copied().unwrap_or(0.0)
    }

    pub fn count(&self, class: IntentClass, token: &str) -> u64 {
        self.counts[class.index()].get(token).copied().unwrap_or(0)
    }

    pub fn class_total(&self, class: IntentClass) -> u64 {
        self.counts[class.index()].values().sum()
    }

    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.counts.iter().flat_map(|c| c.keys().map(String::as_str)).collect()
    }

    /// Per-class logits for `text`.
    pub fn logits(&self, text: &str) -> [f64; 3] {
        let mut tokens = tokenize(text);
        // Fixed summation order keeps the result a function of the multiset.
        tokens.sort_unstable();
        IntentClass::ALL.map(|class| tokens.iter().map(|t| self.weight(class, t)).sum())
    }

    pub fn classify(&self, text: &str) -> NluResult {
        NluResult::from_logits(self.logits(text))
    }

    /// Folds labelled examples into the counts and returns the updated
    /// lexicon with a bumped version. `self` is left untouched.
    pub fn train_update(&self, examples: &[LabeledExample]) -> Result<Lexicon> {
        if examples.is_empty() {
            return Err(Error::contract("train_update requires at least one example"));
        }
        let mut next = self.clone();
        for ex in examples {
            let table = &mut next.counts[ex.label.index()];
            for token in tokenize(&ex.text) {
                *table.entry(token).or_insert(0) += 1;
            }
        }
        next.version += 1;
        next.recompute_weights();
        Ok(next)
    }

    fn recompute_weights(&mut self) {
        let vocab: BTreeSet<String> = self
            .counts
            .iter()
            .flat_map(|c| c.iter().filter(|(_, &n)| n > 0).map(|(t, _)| t.clone()))
            .collect();
        let vocab_size = vocab.len() as f64;
        for class in IntentClass::ALL {
            let table = &self.counts[class.index()];
            let total = table.values().sum::<u64>() as f64;
            let denom = total + self.smoothing * vocab_size;
            self.weights[class.index()] = vocab
                .iter()
                .map(|t| {
                    let n = table.get(t).copied().unwrap_or(0) as f64;
                    (t.clone(), ((n + self.smoothing) / denom).ln())
                })
                .collect();
        }
    }
}

#[derive(Deserialize)]
struct ExamplesToml {
    #[serde(default)]
    example: Vec<ExampleRow>,
}

#[derive(Deserialize)]
struct ExampleRow {
    text: String,
    label: IntentClass,
}

/// Parses `[[example]] text = "...", label = "YES"` rows.
pub fn parse_examples_toml(text: &str, source: ExampleSource) -> Result<Vec<LabeledExample>> {
    let parsed: ExamplesToml = toml::from_str(text)?;
    Ok(parsed
        .example
        .into_iter()
        .map(|r| LabeledExample::new(r.text, r.label, source))
        .collect())
}

/// Parses JSON-lines `{"text": ..., "label": ...}`; `source` defaults to
/// the given value when absent.
pub fn parse_examples_jsonl(text: &str, source: ExampleSource) -> Result<Vec<LabeledExample>> {
    #[derive(Deserialize)]
    struct Row {
        text: String,
        label: IntentClass,
        source: Option<ExampleSource>,
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let row: Row = serde_json::from_str(line)?;
            Ok(LabeledExample::new(row.text, row.label, row.source.unwrap_or(source)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn yes_weight_lexicon(w: f64) -> Lexicon {
        let mut weights: [HashMap<String, f64>; 3] = Default::default();
        weights[0].insert("yes".into(), w);
        Lexicon::from_weights(weights).unwrap()
    }

    #[test]
    fn empty_lexicon_is_uniform_and_ties_to_other() {
        let r = Lexicon::default().classify("");
        for s in r.scores {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(r.top1, IntentClass::Other);
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn softmax_of_single_weight() {
        // oracle: direct softmax of logits (2, 0, 0)
        let e2 = 2f64.exp();
        let expected = [e2 / (e2 + 2.0), 1.0 / (e2 + 2.0), 1.0 / (e2 + 2.0)];
        let r = yes_weight_lexicon(2.0).classify("yes");
        for (a, b) in r.scores.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((r.scores[0] - 0.787).abs() < 5e-4);
        assert!((r.scores[1] - 0.107).abs() < 5e-4);
        assert_eq!(r.top1, IntentClass::Yes);
        assert!((uncertainty(&r) - 0.213).abs() < 5e-4);
    }

    #[test]
    fn yes_no_tie_prefers_yes() {
        let r = NluResult::from_scores([0.4, 0.4, 0.2]);
        assert_eq!(r.top1, IntentClass::Yes);
    }

    #[test]
    fn uncertainty_edges() {
        assert_eq!(uncertainty(&NluResult::from_scores([1.0, 0.0, 0.0])), 0.0);
        let u = uncertainty(&NluResult::from_scores([1.0 / 3.0; 3]));
        assert!((u - 2.0 / 3.0).abs() < 1e-15);
        let m = uncertainty_with(&NluResult::from_scores([0.6, 0.3, 0.1]), Scorer::Margin);
        assert!((m - 0.7).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        assert_eq!(tokenize("No. I don't!"), vec!["no", "i", "dont"]);
        assert_eq!(tokenize("  Hello?  "), vec!["hello"]);
        assert!(tokenize("?!.").is_empty());
    }

    #[test]
    fn seed_lexicon_accepts_table_two_answers() {
        let lex = Lexicon::seed();
        let r = lex.classify("No. I don't");
        assert_eq!(r.top1, IntentClass::No);
        assert!(r.p_top1 >= 0.7, "p_top1 = {}", r.p_top1);
        for (text, class) in [
            ("Yes.", IntentClass::Yes),
            ("No.", IntentClass::No),
            ("Hello?", IntentClass::Other),
        ] {
            let r = lex.classify(text);
            assert_eq!(r.top1, class, "{text}");
            assert!(r.p_top1 >= 0.7, "{text}: {}", r.p_top1);
        }
    }

    #[test]
    fn bundled_seed_lexicon_matches_seed_examples() {
        let rebuilt = Lexicon::empty(1.0).train_update(&Lexicon::seed_examples()).unwrap();
        let shipped = Lexicon::seed();
        assert_eq!(rebuilt.counts, shipped.counts);
        assert_eq!(rebuilt.version, shipped.version);
    }

    #[test]
    fn train_update_raises_labelled_class() {
        let lex = Lexicon::seed();
        let before = lex.classify("yep").score(IntentClass::Yes);
        let next = lex
            .train_update(&[LabeledExample::new("yep", IntentClass::Yes, ExampleSource::Operator)])
            .unwrap();
        assert!(next.classify("yep").score(IntentClass::Yes) > before);
        assert_eq!(next.version(), lex.version() + 1);
    }

    #[test]
    fn train_update_rejects_empty_batch() {
        assert!(matches!(
            Lexicon::seed().train_update(&[]),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn laplace_weights_match_formula() {
        let lex = Lexicon::empty(1.0)
            .train_update(&[
                LabeledExample::new("yes yes sure", IntentClass::Yes, ExampleSource::Seed),
                LabeledExample::new("no", IntentClass::No, ExampleSource::Seed),
            ])
            .unwrap();
        // vocab {yes, sure, no}; YES total 3
        assert!((lex.weight(IntentClass::Yes, "yes") - (3.0f64 / 6.0).ln()).abs() < 1e-15);
        assert!((lex.weight(IntentClass::Yes, "no") - (1.0f64 / 6.0).ln()).abs() < 1e-15);
        assert!((lex.weight(IntentClass::Other, "no") - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        assert_eq!(lex.weight(IntentClass::No, "unseen"), 0.0);
    }

    #[test]
    fn json_round_trip_keeps_weights() {
        let lex = Lexicon::seed();
        let back = Lexicon::from_json(&lex.to_json()).unwrap();
        assert_eq!(
            back.classify("yeah nothing like that"),
            lex.classify("yeah nothing like that")
        );
    }

    #[test]
    fn examples_jsonl_parses() {
        let rows = parse_examples_jsonl(
            "{\"text\":\"yep\",\"label\":\"YES\"}\n\n{\"text\":\"nah\",\"label\":\"NO\",\"source\":\"SEED\"}\n",
            ExampleSource::Operator,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].source, ExampleSource::Operator);
        assert_eq!(rows[1].source, ExampleSource::Seed);
    }
}
