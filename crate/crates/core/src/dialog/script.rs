use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_SCRIPT: &str = include_str!("../../data/script.toml");

/// Keys of the versioned script table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScriptKey {
    #[serde(rename = "GREETING")]
    Greeting,
    #[serde(rename = "REGREETING")]
    Regreeting,
    #[serde(rename = "CONSENT_Q")]
    ConsentQ,
    #[serde(rename = "FEVER_Q")]
    FeverQ,
    #[serde(rename = "RESP_Q")]
    RespQ,
    #[serde(rename = "REPROMPT")]
    Reprompt,
    #[serde(rename = "DETAIL_Q")]
    DetailQ,
    #[serde(rename = "CLOSING")]
    Closing,
}

impl ScriptKey {
    pub const ALL: [ScriptKey; 8] = [
        ScriptKey::Greeting,
        ScriptKey::Regreeting,
        ScriptKey::ConsentQ,
        ScriptKey::FeverQ,
        ScriptKey::RespQ,
        ScriptKey::Reprompt,
        ScriptKey::DetailQ,
        ScriptKey::Closing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScriptKey::Greeting => "GREETING",
            ScriptKey::Regreeting => "REGREETING",
            ScriptKey::ConsentQ => "CONSENT_Q",
            ScriptKey::FeverQ => "FEVER_Q",
            ScriptKey::RespQ => "RESP_Q",
            ScriptKey::Reprompt => "REPROMPT",
            ScriptKey::DetailQ => "DETAIL_Q",
            ScriptKey::Closing => "CLOSING",
        }
    }
}

impl fmt::Display for ScriptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScriptKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScriptKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::NotFound(format!("script key `{s}`")))
    }
}

/// System utterances keyed by [`ScriptKey`], loaded from a TOML file with a
/// `version` integer and one string per key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScriptFile", into = "ScriptFile")]
pub struct ScriptTable {
    version: u32,
    lines: BTreeMap<ScriptKey, String>,
}

#[derive(Serialize, Deserialize)]
struct ScriptFile {
    version: u32,
    #[serde(flatten)]
    lines: BTreeMap<ScriptKey, String>,
}

impl TryFrom<ScriptFile> for ScriptTable {
    type Error = Error;

    fn try_from(file: ScriptFile) -> Result<Self> {
        let missing: Vec<&str> = ScriptKey::ALL
            .iter()
            .filter(|k| file.lines.get(k).is_none_or(|s| s.trim().is_empty()))
            .map(|k| k.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::config(format!(
                "script table missing keys: {}",
                missing.join(", ")
            )));
        }
        Ok(ScriptTable {
            version: file.version,
            lines: file.lines,
        })
    }
}

impl From<ScriptTable> for ScriptFile {
    fn from(t: ScriptTable) -> Self {
        ScriptFile {
            version: t.version,
            lines: t.lines,
        }
    }
}

impl Default for ScriptTable {
    fn default() -> Self {
        ScriptTable::from_toml(DEFAULT_SCRIPT).expect("bundled script table is valid")
    }
}

impl ScriptTable {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn line(&self, key: ScriptKey) -> &str {
        // Construction guarantees every key is present.
        &self.lines[&key]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_script_has_every_key() {
        let t = ScriptTable::default();
        for k in ScriptKey::ALL {
            assert!(!t.line(k).is_empty());
        }
        assert!(t
            .line(ScriptKey::Greeting)
            .contains("I'm calling to check your symptoms"));
    }

    #[test]
    fn missing_key_is_rejected() {
        let err = ScriptTable::from_toml("version = 1\nGREETING = \"hi\"\n").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_) | Error::Parse(_)));
    }

    #[test]
    fn key_parsing() {
        assert_eq!("RESP_Q".parse::<ScriptKey>().unwrap(), ScriptKey::RespQ);
        assert!("NOPE".parse::<ScriptKey>().is_err());
    }
}
