//! End-to-end simulated campaign: sample a population, run the daily call
//! schedule, label the most uncertain utterances from simulator ground
//! truth part-way through, and report turn-level errors per period.
//!
//! Every timestamp comes from the campaign calendar, never the wall clock,
//! so equal plans produce byte-identical event logs.

use carecall_core::campaign::{render_table, Campaign, MetricsReport};
use carecall_core::config::Config;
use carecall_core::popsim::sample_population;
use carecall_core::Result;
use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub subjects: usize,
    pub days: u32,
    pub seed: u64,
    pub config: Config,
}

impl SimulationPlan {
    pub fn new(subjects: usize, days: u32, seed: u64, config: Config) -> Self {
        SimulationPlan {
            subjects,
            days,
            seed,
            config,
        }
    }

    /// The configuration with this plan's subject count and seed applied.
    pub fn effective_config(&self) -> Config {
        let mut config = self.config.clone();
        config.seed = self.seed;
        config.population.n_subjects = self.subjects;
        config
    }

    /// Whether the labelling rounds fall inside the simulated span.
    pub fn has_hitl(&self) -> bool {
        let hitl = self.config.hitl;
        hitl.rounds > 0 && hitl.after_day >= 1 && hitl.after_day < self.days
    }
}

/// Labels applied in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitlRound {
    pub after_day: NaiveDate,
    pub labels: usize,
    pub lexicon_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub campaign_id: String,
    pub seed: u64,
    pub subjects: usize,
    pub days: u32,
    pub hitl_rounds: Vec<HitlRound>,
    /// Before and after labelling when it happened, else one period.
    pub periods: Vec<MetricsReport>,
    pub total: MetricsReport,
}

impl SimulationReport {
    /// Plain-text rendering: the error table followed by call statistics.
    pub fn render(&self) -> String {
        let mut out = render_table(&self.periods);
        let t = &self.total;
        out.push('\n');
        out.push_str(&format!("calls total      {:>10}\n", t.calls_total));
        out.push_str(&format!("  completed      {:>10}\n", t.completed));
        out.push_str(&format!("  hung up        {:>10}\n", t.hangups));
        out.push_str(&format!("  failed         {:>10}\n", t.failed));
        out.push_str(&format!("attempts         {:>10}\n", t.attempts));
        out.push_str(&format!("hang-up rate     {:>9.2}%\n", 100.0 * t.hangup_rate));
        out.push_str(&format!("failure rate     {:>9.2}%\n", 100.0 * t.failure_rate));
        out.push_str(&format!("escalations      {:>10}\n", t.escalations));
        for r in &self.hitl_rounds {
            out.push_str(&format!(
                "labelled {:>3} utterances after {} (lexicon v{})\n",
                r.labels, r.after_day, r.lexicon_version
            ));
        }
        out
    }
}

pub struct SimulationOutcome {
    pub campaign: Campaign,
    pub report: SimulationReport,
}

/// Runs `plan` as campaign `campaign_id`.
pub fn run(plan: &SimulationPlan, campaign_id: &str) -> Result<SimulationOutcome> {
    let config = plan.effective_config();
    config.validate()?;
    let mut settings = config.settings()?;
    settings.campaign_id = campaign_id.to_owned();
    let start = settings.start_date;
    let midnight = |d: NaiveDate| d.and_hms_opt(0, 0, 0).expect("midnight");
    let evening = |d: NaiveDate| d.and_hms_opt(23, 0, 0).expect("evening");

    let mut campaign = Campaign::new(settings, midnight(start))?;
    campaign.register_population(&sample_population(&config.population_config())?, midnight(start))?;

    let mut hitl_rounds = Vec::new();
    for day_index in 1..=plan.days {
        let summary = campaign.run_day(None)?;
        if plan.has_hitl() && day_index == config.hitl.after_day {
            for _ in 0..config.hitl.rounds {
                let labels = campaign.hitl_round(config.hitl.k, evening(summary.day))?;
                if labels == 0 {
                    break;
                }
                hitl_rounds.push(HitlRound {
                    after_day: summary.day,
                    labels,
                    lexicon_version: campaign.lexicon().version(),
                });
            }
        }
    }

    let last = start + Duration::days(i64::from(plan.days.max(1)) - 1);
    let stamp = evening(last);
    let periods = if plan.has_hitl() {
        let split = start + Duration::days(i64::from(config.hitl.after_day));
        vec![
            campaign.record_report(start, split - Duration::days(1), stamp)?,
            campaign.record_report(split, last, stamp)?,
        ]
    } else {
        vec![campaign.record_report(start, last, stamp)?]
    };
    let total = campaign.report(start, last);
    let report = SimulationReport {
        campaign_id: campaign_id.to_owned(),
        seed: plan.seed,
        subjects: plan.subjects,
        days: plan.days,
        hitl_rounds,
        periods,
        total,
    };
    Ok(SimulationOutcome { campaign, report })
}
