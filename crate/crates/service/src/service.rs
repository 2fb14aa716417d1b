//! Operations shared by the HTTP API and the command line.
//!
//! A [`Service`] owns every campaign it knows about and, when opened on a
//! store directory, persists each one under `<root>/<campaign_id>/` as an
//! event log plus snapshot. Endpoints that are not scoped to a campaign act
//! on the most recently created one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use carecall_core::campaign::{Campaign, DaySummary, MetricsReport, SubjectEntry, UtteranceOutcome};
use carecall_core::config::Config;
use carecall_core::dialog::CallSession;
use carecall_core::nlu::{ExampleSource, IntentClass, LabeledExample};
use carecall_core::popsim::{sample_population, Persona, Subject};
use carecall_core::spread::{self, FeatureModel, FeatureSpec, PosteriorResult, SpreadPrior};
use carecall_core::store::{FileStore, Snapshot};
use carecall_core::triage::{
    select_batch, EscalationRecord, PoolItem, ReviewDecision, ReviewStatus, TriageDecision, UtteranceLabel, Verdict,
};
use carecall_core::Timestamp;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] carecall_core::Error),

    #[error("no campaign exists yet; create one first")]
    NoCampaign,

    #[error("store I/O failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type ServiceResult<T> = Result<T, ServiceError>;

fn not_found(what: String) -> ServiceError {
    ServiceError::Core(carecall_core::Error::NotFound(what))
}

fn contract(msg: impl Into<String>) -> ServiceError {
    ServiceError::Core(carecall_core::Error::ContractViolation(msg.into()))
}

/// Wall-clock time, used whenever a request does not pin `now`.
pub fn wall_clock() -> Timestamp {
    let now = chrono::Utc::now().naive_utc();
    now - chrono::Duration::nanoseconds(i64::from(now.and_utc().timestamp_subsec_nanos()))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateCampaign {
    /// Overrides the service configuration for this campaign.
    #[serde(default)]
    pub config: Option<Config>,
    /// Sample and register a simulated population from `config.population`.
    #[serde(default)]
    pub populate: bool,
    #[serde(default)]
    pub now: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignInfo {
    pub campaign_id: String,
    pub start_date: NaiveDate,
    pub subjects: usize,
    pub next_day: NaiveDate,
    pub last_day: Option<NaiveDate>,
    pub lexicon_version: u64,
    pub last_seq: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RegisterSubject {
    #[serde(flatten)]
    pub subject: Subject,
    #[serde(default)]
    pub persona: Option<Persona>,
    #[serde(default)]
    pub now: Option<Timestamp>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSession {
    pub subject_id: String,
    #[serde(default)]
    pub already_called_today: bool,
    #[serde(default)]
    pub now: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStarted {
    pub session_id: String,
    /// The opening system line.
    pub reply: String,
    pub session: CallSession,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRequest {
    pub text: String,
    #[serde(default)]
    pub now: Option<Timestamp>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub labels: Vec<UtteranceLabel>,
    #[serde(default = "default_operator")]
    pub operator_id: String,
    #[serde(default)]
    pub reviewed_at: Option<Timestamp>,
}

fn default_operator() -> String {
    "operator".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub record: EscalationRecord,
    pub examples: Vec<LabeledExample>,
    /// Lexicon version after retraining on the review's labels, if any.
    pub lexicon_version: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelInput {
    pub text: String,
    pub label: IntentClass,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRequest {
    pub labels: Vec<LabelInput>,
    #[serde(default)]
    pub now: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub applied: usize,
    pub lexicon_version: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpreadRequest {
    /// `{id, features: {name: 0|1}, confirmed}` objects.
    #[serde(default)]
    pub observations: Vec<serde_json::Value>,
    #[serde(default)]
    pub prior: Option<SpreadPrior>,
    #[serde(default)]
    pub feature_model: Option<Vec<FeatureSpec>>,
    #[serde(default, rename = "G")]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurgeOutcome {
    pub now: Timestamp,
    pub horizon: Timestamp,
    pub purge_count: usize,
}

struct Persisted {
    store: FileStore,
    /// Last sequence number written to disk.
    seq: u64,
}

pub struct Service {
    config: Config,
    root: Option<PathBuf>,
    campaigns: BTreeMap<String, Campaign>,
    persisted: BTreeMap<String, Persisted>,
}

impl Service {
    /// An in-memory service with nothing persisted.
    pub fn in_memory(config: Config) -> Self {
        Service {
            config,
            root: None,
            campaigns: BTreeMap::new(),
            persisted: BTreeMap::new(),
        }
    }

    /// Opens (or creates) a store directory and restores every campaign in it.
    pub fn open(root: impl AsRef<Path>, config: Config) -> ServiceResult<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let mut service = Service {
            config,
            root: Some(root.clone()),
            campaigns: BTreeMap::new(),
            persisted: BTreeMap::new(),
        };
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(FileStore::EVENTS).exists() || p.join(FileStore::SNAPSHOT).exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let store = FileStore::open(&dir)?;
            let snapshot: Option<Snapshot<_>> = store.load_snapshot()?;
            let base = snapshot.as_ref().map_or(0, |s| s.seq);
            let log = store.load_events(base)?;
            let campaign = Campaign::restore(snapshot, log)?;
            let id = campaign.settings().campaign_id.clone();
            let seq = campaign.log().last_seq();
            service.persisted.insert(id.clone(), Persisted { store, seq });
            service.campaigns.insert(id, campaign);
        }
        Ok(service)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Directory holding a campaign's files, when persisted.
    pub fn campaign_dir(&self, campaign_id: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(campaign_id))
    }

    pub fn campaign_ids(&self) -> Vec<String> {
        self.campaigns.keys().cloned().collect()
    }

    /// The id the next created campaign will get.
    pub fn next_campaign_id(&self) -> String {
        format!("campaign-{:04}", self.campaigns.len() + 1)
    }

    pub fn active_id(&self) -> ServiceResult<String> {
        self.campaigns
            .keys()
            .next_back()
            .cloned()
            .ok_or(ServiceError::NoCampaign)
    }

    pub fn campaign(&self, campaign_id: &str) -> ServiceResult<&Campaign> {
        self.campaigns
            .get(campaign_id)
            .ok_or_else(|| not_found(format!("campaign {campaign_id}")))
    }

    pub fn active(&self) -> ServiceResult<&Campaign> {
        self.campaign(&self.active_id()?)
    }

    /// Runs `op` against a campaign and persists whatever it appended.
    fn mutate<T>(
        &mut self,
        campaign_id: &str,
        op: impl FnOnce(&mut Campaign) -> carecall_core::Result<T>,
    ) -> ServiceResult<T> {
        let campaign = self
            .campaigns
            .get_mut(campaign_id)
            .ok_or_else(|| not_found(format!("campaign {campaign_id}")))?;
        let out = op(campaign)?;
        self.persist(campaign_id)?;
        Ok(out)
    }

    fn mutate_active<T>(&mut self, op: impl FnOnce(&mut Campaign) -> carecall_core::Result<T>) -> ServiceResult<T> {
        let id = self.active_id()?;
        self.mutate(&id, op)
    }

    fn persist(&mut self, campaign_id: &str) -> ServiceResult<()> {
        let Some(root) = &self.root else { return Ok(()) };
        let campaign = &self.campaigns[campaign_id];
        let entry = match self.persisted.entry(campaign_id.to_owned()) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(v) => v.insert(Persisted {
                store: FileStore::open(root.join(campaign_id))?,
                seq: campaign.log().base_seq(),
            }),
        };
        entry.store.append(campaign.log().since(entry.seq))?;
        entry.seq = campaign.log().last_seq();
        Ok(())
    }

    /// Writes a snapshot and drops the events it covers, on disk and in
    /// memory.
    pub fn compact(&mut self, campaign_id: &str) -> ServiceResult<()> {
        self.persist(campaign_id)?;
        let campaign = self
            .campaigns
            .get_mut(campaign_id)
            .ok_or_else(|| not_found(format!("campaign {campaign_id}")))?;
        let snapshot = campaign.snapshot();
        if let Some(entry) = self.persisted.get(campaign_id) {
            entry.store.compact(&snapshot, campaign.log())?;
        }
        campaign.truncate_log_through(snapshot.seq);
        Ok(())
    }

    /// Adds a campaign built elsewhere (the simulation driver) and persists
    /// its whole log.
    pub fn insert_campaign(&mut self, campaign: Campaign) -> ServiceResult<CampaignInfo> {
        let id = campaign.settings().campaign_id.clone();
        if self.campaigns.contains_key(&id) {
            return Err(contract(format!("campaign {id} already exists")));
        }
        self.campaigns.insert(id.clone(), campaign);
        self.persist(&id)?;
        self.campaign_info(&id)
    }

    pub fn create_campaign(&mut self, req: CreateCampaign) -> ServiceResult<CampaignInfo> {
        let config = match req.config {
            Some(c) => {
                c.validate()?;
                c
            }
            None => self.config.clone(),
        };
        let mut settings = config.settings()?;
        settings.campaign_id = self.next_campaign_id();
        let now = req
            .now
            .unwrap_or_else(|| settings.start_date.and_hms_opt(0, 0, 0).expect("midnight"));
        let mut campaign = Campaign::new(settings, now)?;
        if req.populate {
            campaign.register_population(&sample_population(&config.population_config())?, now)?;
        }
        self.insert_campaign(campaign)
    }

    pub fn campaign_info(&self, campaign_id: &str) -> ServiceResult<CampaignInfo> {
        let c = self.campaign(campaign_id)?;
        Ok(CampaignInfo {
            campaign_id: campaign_id.to_owned(),
            start_date: c.settings().start_date,
            subjects: c.state().subjects.len(),
            next_day: c.next_day(),
            last_day: c.state().last_day,
            lexicon_version: c.lexicon().version(),
            last_seq: c.log().last_seq(),
        })
    }

    pub fn run_day(&mut self, campaign_id: &str, seed: Option<u64>) -> ServiceResult<DaySummary> {
        self.mutate(campaign_id, |c| c.run_day(seed))
    }

    pub fn register_subject(&mut self, req: RegisterSubject) -> ServiceResult<SubjectEntry> {
        let id = req.subject.subject_id.clone();
        let now = req.now.unwrap_or_else(wall_clock);
        self.mutate_active(|c| {
            c.register_subject(req.subject, req.persona, now)?;
            c.subject(&id).cloned()
        })
    }

    pub fn subject(&self, subject_id: &str) -> ServiceResult<SubjectEntry> {
        Ok(self.active()?.subject(subject_id)?.clone())
    }

    pub fn start_session(&mut self, req: StartSession) -> ServiceResult<SessionStarted> {
        let now = req.now.unwrap_or_else(wall_clock);
        let session = self.mutate_active(|c| c.start_session(&req.subject_id, req.already_called_today, now))?;
        Ok(SessionStarted {
            session_id: session.session_id.clone(),
            reply: session.transcript[0].text.clone(),
            session,
        })
    }

    pub fn utterance(&mut self, session_id: &str, req: UtteranceRequest) -> ServiceResult<UtteranceOutcome> {
        let now = req.now.unwrap_or_else(wall_clock);
        self.mutate_active(|c| c.session_utterance(session_id, &req.text, now))
    }

    pub fn hang_up(&mut self, session_id: &str) -> ServiceResult<TriageDecision> {
        self.mutate_active(|c| c.session_hang_up(session_id))
    }

    pub fn session(&self, session_id: &str) -> ServiceResult<CallSession> {
        Ok(self.active()?.session(session_id)?.clone())
    }

    pub fn escalations(&self, status: Option<ReviewStatus>) -> ServiceResult<Vec<EscalationRecord>> {
        Ok(self.active()?.escalations(status).into_iter().cloned().collect())
    }

    pub fn escalation(&self, record_id: &str) -> ServiceResult<EscalationRecord> {
        self.active()?
            .state()
            .queue
            .get(record_id)
            .cloned()
            .ok_or_else(|| not_found(format!("escalation {record_id}")))
    }

    /// Records a review and retrains on its labels, if it carries any.
    pub fn review(&mut self, record_id: &str, req: ReviewRequest) -> ServiceResult<ReviewOutcome> {
        let reviewed_at = req.reviewed_at.unwrap_or_else(wall_clock);
        let decision = ReviewDecision {
            operator_id: req.operator_id,
            verdict: req.verdict,
            labels: req.labels,
            reviewed_at,
        };
        let (examples, lexicon_version) = self.mutate_active(|c| {
            let examples = c.review(record_id, decision)?;
            let version = if examples.is_empty() {
                None
            } else {
                Some(c.apply_labels(examples.clone(), reviewed_at)?)
            };
            Ok((examples, version))
        })?;
        Ok(ReviewOutcome {
            record: self.escalation(record_id)?,
            examples,
            lexicon_version,
        })
    }

    pub fn hitl_batch(&self, k: usize) -> ServiceResult<Vec<PoolItem>> {
        let c = self.active()?;
        Ok(select_batch(&c.hitl_pool(), k, c.settings().policy.scorer))
    }

    pub fn apply_labels(&mut self, req: LabelRequest) -> ServiceResult<LabelOutcome> {
        let now = req.now.unwrap_or_else(wall_clock);
        let examples: Vec<LabeledExample> = req
            .labels
            .into_iter()
            .map(|l| LabeledExample::new(l.text, l.label, ExampleSource::Operator))
            .collect();
        let applied = examples.len();
        let lexicon_version = self.mutate_active(|c| c.apply_labels(examples, now))?;
        Ok(LabelOutcome {
            applied,
            lexicon_version,
        })
    }

    /// Report over `[from, to]`; defaults to the campaign's whole simulated
    /// span.
    pub fn metrics(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> ServiceResult<MetricsReport> {
        let c = self.active()?;
        let from = from.unwrap_or(c.settings().start_date);
        let to = to.unwrap_or_else(|| c.state().last_day.unwrap_or(from));
        if to < from {
            return Err(contract(format!("period ends ({to}) before it starts ({from})")));
        }
        Ok(c.report(from, to))
    }

    /// Applies the retention rule to every campaign; a store without
    /// campaigns purges nothing.
    pub fn purge(&mut self, now: Timestamp) -> ServiceResult<PurgeOutcome> {
        let mut purge_count = 0;
        let mut retention = self.config.retention_days;
        for id in self.campaign_ids() {
            purge_count += self.mutate(&id, |c| c.purge(now))?;
            // purged transcripts must leave the disk too
            self.compact(&id)?;
            retention = self.campaign(&id)?.settings().retention_days;
        }
        Ok(PurgeOutcome {
            now,
            horizon: now - chrono::Duration::days(retention),
            purge_count,
        })
    }

    /// Spread posterior; prior, features and grid default to the service
    /// configuration.
    pub fn spread_estimate(&self, req: SpreadRequest) -> ServiceResult<PosteriorResult> {
        let prior = req.prior.unwrap_or(self.config.spread.prior);
        let fm = match req.feature_model {
            Some(features) => FeatureModel::new(features)?,
            None => self.config.spread.feature_model(),
        };
        let grid = req.grid.unwrap_or(self.config.spread.grid);
        let observations = spread::observations_from_json(&req.observations, &fm)?;
        Ok(spread::posterior(&prior, &fm, &observations, grid)?)
    }
}
