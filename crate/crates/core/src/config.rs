//! Top-level TOML configuration. Every section and field is optional and
//! falls back to the documented default; out-of-range values are rejected
//! by [`Config::validate`].
//!
//! ```toml
//! seed = 7
//! retention_days = 30
//!
//! [triage]
//! tau = 0.7
//! max_reprompts = 2
//! max_turns = 12
//!
//! [campaign]
//! start_date = "2020-03-09"
//! window_days = 14
//! am_hour = 10
//! pm_hour = 16
//! max_retries = 2
//! retry_delay_minutes = 60
//!
//! [population]
//! n_subjects = 400
//! verbose_fraction = 0.3
//! symptom_prevalence = 0.02
//!
//! [spread]
//! grid = 1024
//! prior = { pi_t = 0.5, alpha = 1.0, beta = 9.0 }
//! features = [{ name = "smell_taste_loss", sensitivity = 0.65, false_alarm = 0.22 }]
//!
//! [hitl]
//! after_day = 7
//! rounds = 3
//! k = 50
//! ```

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::campaign::CampaignSettings;
use crate::error::{Error, Result};
use crate::popsim::PopulationConfig;
use crate::spread::{FeatureModel, FeatureSpec, SpreadPrior, DEFAULT_GRID, MIN_GRID};
use crate::triage::TriagePolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub retention_days: i64,
    pub triage: TriagePolicy,
    pub campaign: CampaignConfig,
    pub population: PopulationConfig,
    pub spread: SpreadConfig,
    pub hitl: HitlConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            retention_days: 30,
            triage: TriagePolicy::default(),
            campaign: CampaignConfig::default(),
            population: PopulationConfig::default(),
            spread: SpreadConfig::default(),
            hitl: HitlConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub start_date: NaiveDate,
    /// Monitoring window per subject; overrides `population.window_days`.
    pub window_days: u32,
    pub am_hour: u32,
    pub pm_hour: u32,
    pub max_retries: u32,
    pub retry_delay_minutes: i64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        let settings = CampaignSettings::default();
        CampaignConfig {
            start_date: settings.start_date,
            window_days: 14,
            am_hour: 10,
            pm_hour: 16,
            max_retries: settings.max_retries,
            retry_delay_minutes: settings.retry_delay_minutes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpreadConfig {
    pub grid: usize,
    pub prior: SpreadPrior,
    pub features: Vec<FeatureSpec>,
}

impl Default for SpreadConfig {
    fn default() -> Self {
        SpreadConfig {
            grid: DEFAULT_GRID,
            prior: SpreadPrior::default(),
            features: FeatureModel::default().features,
        }
    }
}

impl SpreadConfig {
    pub fn feature_model(&self) -> FeatureModel {
        FeatureModel {
            features: self.features.clone(),
        }
    }
}

/// Labelling protocol for simulated runs: after `after_day` campaign days,
/// `rounds` batches of the `k` most uncertain utterances are labelled from
/// simulator ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitlConfig {
    pub after_day: u32,
    pub rounds: u32,
    pub k: usize,
}

impl Default for HitlConfig {
    fn default() -> Self {
        HitlConfig {
            after_day: 7,
            rounds: 3,
            k: 50,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.triage.validate()?;
        self.population.validate()?;
        self.spread.prior.validate()?;
        self.spread.feature_model().validate()?;
        if self.spread.grid < MIN_GRID {
            return Err(Error::config(format!("spread.grid must be at least {MIN_GRID}")));
        }
        if self.campaign.window_days < 1 {
            return Err(Error::config("campaign.window_days must be at least 1"));
        }
        if self.campaign.am_hour >= 24 || self.campaign.pm_hour >= 24 {
            return Err(Error::config("call hours must lie in 0..24"));
        }
        self.settings()?.validate()
    }

    /// Campaign settings derived from this configuration.
    pub fn settings(&self) -> Result<CampaignSettings> {
        let hour =
            |h: u32| NaiveTime::from_hms_opt(h, 0, 0).ok_or_else(|| Error::config(format!("invalid call hour {h}")));
        Ok(CampaignSettings {
            campaign_id: "campaign-1".into(),
            start_date: self.campaign.start_date,
            am_time: hour(self.campaign.am_hour)?,
            pm_time: hour(self.campaign.pm_hour)?,
            max_retries: self.campaign.max_retries,
            retry_delay_minutes: self.campaign.retry_delay_minutes,
            retention_days: self.retention_days,
            policy: self.triage,
            seed: self.seed,
        })
    }

    /// Population parameters with the campaign's seed, start date and window
    /// applied.
    pub fn population_config(&self) -> PopulationConfig {
        PopulationConfig {
            seed: self.seed,
            enrolled_at: self.campaign.start_date,
            window_days: self.campaign.window_days,
            ..self.population.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.retention_days, 30);
        assert_eq!(
            c.settings().unwrap().am_time,
            NaiveTime::from_hms_opt(10, 0, 0).unwrap()
        );
    }

    #[test]
    fn module_doc_example_parses() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let c = Config::from_toml(&example).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.population.n_subjects, 400);
        assert_eq!(c.spread.features[0].sensitivity, 0.65);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for bad in [
            "[triage]\ntau = 1.5",
            "[triage]\nmax_turns = 3",
            "[population]\nverbose_fraction = 2.0",
            "[spread]\ngrid = 10",
            "[spread]\nprior = { pi_t = 0.5, alpha = -1.0, beta = 9.0 }",
            "[campaign]\nam_hour = 17",
            "retention_days = 0",
            "unknown_key = 1",
        ] {
            assert!(Config::from_toml(bad).is_err(), "{bad}");
        }
    }
}
