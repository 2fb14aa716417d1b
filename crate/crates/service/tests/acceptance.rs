//! Acceptance run: one PASS/FAIL line per criterion, each checked at its
//! stated tolerance and runtime budget. Exits nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use carecall_core::campaign::{Campaign, CampaignSettings};
use carecall_core::config::Config;
use carecall_core::dialog::{CallSession, DialogEngine, Speaker};
use carecall_core::nlu::{IntentClass, NluResult};
use carecall_core::popsim::{sample_population, Persona, PopulationConfig, Subject};
use carecall_core::spread::{
    enumerate_posterior, posterior, FeatureModel, FeatureSpec, Observation, PosteriorResult, SpreadPrior, DEFAULT_GRID,
};
use carecall_core::store::{EventLog, FileStore};
use carecall_core::triage::{decide, EscalationReason, TriageDecision, TriagePolicy};
use carecall_core::Error;
use carecall_service::simulate::{self, SimulationPlan};
use carecall_service::{router, AppState, Service};
use chrono::NaiveDate;
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use statrs::distribution::{Beta, Continuous};
use tower::ServiceExt;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 9).unwrap()
}

// ---------------------------------------------------------------------------

async fn call(app: &axum::Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

/// The cooperative call from the transcript example, played through the
/// HTTP API with the bundled seed lexicon.
fn script_fidelity() -> Check {
    let golden: Vec<&str> = include_str!("../../core/tests/golden/cooperative_path.txt")
        .lines()
        .collect();
    let state = AppState {
        service: Arc::new(RwLock::new(Service::in_memory(Config::default()))),
        token: None,
    };
    let app = router(state);
    let runtime = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let (lines, decision) = runtime.block_on(async {
        let (s, _) = call(&app, "POST", "/campaigns", json!({})).await;
        assert_eq!(s, StatusCode::CREATED);
        let (s, _) = call(
            &app,
            "POST",
            "/subjects",
            json!({"subject_id": "u1", "enrolled_at": "2020-03-09", "window_days": 14, "phone_label": "p1"}),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED);
        let (s, started) = call(
            &app,
            "POST",
            "/sessions",
            json!({"subject_id": "u1", "already_called_today": false, "now": "2020-03-09T10:00:00"}),
        )
        .await;
        assert_eq!(s, StatusCode::CREATED);
        let id = started["session_id"].as_str().unwrap().to_owned();
        let mut last = Value::Null;
        for text in ["Hello?", "Yes.", "No.", "No. I don't"] {
            let (s, body) = call(
                &app,
                "POST",
                &format!("/sessions/{id}/utterance"),
                json!({"text": text, "now": "2020-03-09T10:00:30"}),
            )
            .await;
            assert_eq!(s, StatusCode::OK, "{body}");
            last = body;
        }
        let session: CallSession = serde_json::from_value(last["session"].clone()).unwrap();
        let lines: Vec<String> = session
            .transcript
            .iter()
            .filter(|u| u.speaker == Speaker::System)
            .map(|u| u.text.clone())
            .collect();
        (lines, last["decision"].clone())
    });
    ensure(lines == golden, || format!("system lines differ: {lines:#?}"))?;
    ensure(decision == json!({"decision": "CLEAR"}), || {
        format!("decision {decision}")
    })?;
    Ok(format!("{} system utterances verbatim, decision CLEAR", lines.len()))
}

// ---------------------------------------------------------------------------

struct Enumeration {
    engine: DialogEngine,
    policy: TriagePolicy,
    sequences: u64,
    longest: u32,
    violations: Vec<String>,
}

impl Enumeration {
    fn walk(&mut self, session: &CallSession, path: &mut Vec<IntentClass>) {
        if path.len() as u32 >= self.policy.max_turns {
            self.violations
                .push(format!("open after {} turns: {path:?}", path.len()));
            return;
        }
        for class in IntentClass::ALL {
            let mut next = session.clone();
            path.push(class);
            if let Err(e) = self
                .engine
                .advance(&mut next, "x", NluResult::confident(class, 0.95), Default::default())
            {
                self.violations.push(format!("{path:?}: {e}"));
            } else if next.is_terminal() {
                self.sequences += 1;
                self.longest = self.longest.max(path.len() as u32);
                match decide(&next, &self.policy) {
                    Ok(TriageDecision::Clear) if next.slots.any_symptom() => {
                        self.violations.push(format!("symptomatic call cleared: {path:?}"));
                    }
                    Ok(d)
                        if next.slots.any_symptom() && d != TriageDecision::Escalate(EscalationReason::Symptomatic) =>
                    {
                        self.violations
                            .push(format!("symptomatic call escalated as {d:?}: {path:?}"));
                    }
                    Ok(_) => {}
                    Err(e) => self.violations.push(format!("{path:?}: {e}")),
                }
            } else {
                self.walk(&next, path);
            }
            path.pop();
        }
    }
}

fn termination_and_safety() -> Check {
    let policy = TriagePolicy::default();
    let mut e = Enumeration {
        engine: DialogEngine::new(Default::default(), policy.limits()),
        policy,
        sequences: 0,
        longest: 0,
        violations: Vec::new(),
    };
    for already_called in [false, true] {
        let start = e.engine.start_session("s", "subj", already_called, Default::default());
        e.walk(&start, &mut Vec::new());
    }
    ensure(e.violations.is_empty(), || {
        format!("{} violations, first: {}", e.violations.len(), e.violations[0])
    })?;
    Ok(format!(
        "{} terminal class sequences (both greetings), longest {} turns <= T_max {}; no symptomatic call cleared",
        e.sequences, e.longest, policy.max_turns
    ))
}

// ---------------------------------------------------------------------------

fn rate_calibration() -> Check {
    let settings = CampaignSettings {
        seed: 2020,
        ..Default::default()
    };
    let t0 = settings.start_date.and_hms_opt(0, 0, 0).unwrap();
    let mut campaign = Campaign::new(settings, t0).map_err(|e| e.to_string())?;
    let population = sample_population(&PopulationConfig {
        n_subjects: 4000,
        seed: 2020,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    campaign
        .register_population(&population, t0)
        .map_err(|e| e.to_string())?;
    let mut attempts = 0;
    let mut last = start_date();
    while attempts < 100_000 {
        let day = campaign.run_day(None).map_err(|e| e.to_string())?;
        attempts += day.aggregate.attempts;
        last = day.day;
    }
    let r = campaign.report(start_date(), last);
    let hang = 100.0 * r.hangup_rate;
    let fail = 100.0 * r.failure_rate;
    let detail = format!(
        "{} attempts: hang-up {hang:.2}% (target 14.6 +/- 0.5), connection failure {fail:.2}% (target 7.3 +/- 0.5)",
        r.attempts
    );
    ensure((hang - 14.6).abs() <= 0.5 && (fail - 7.3).abs() <= 0.5, || {
        detail.clone()
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn hitl_improvement() -> Check {
    let plan = SimulationPlan::new(400, 14, 7, Config::default());
    let out = simulate::run(&plan, "campaign-0001").map_err(|e| e.to_string())?;
    let report = &out.report;
    let [before, after] = &report.periods[..] else {
        return Err(format!("expected two periods, got {}", report.periods.len()));
    };
    let rounds: Vec<usize> = report.hitl_rounds.iter().map(|r| r.labels).collect();
    let drop = 1.0 - after.fp_ratio / before.fp_ratio;
    let per_20k = |fn_count: u64, turns: u64| fn_count as f64 * 20_000.0 / turns.max(1) as f64;
    let detail = format!(
        "{} calls with seed lexicon; FP {:.2}% -> {:.2}% (drop {:.0}%), FN {:.3}% -> {:.3}% \
         ({} / {} FN over {} / {} turns); labels per round {:?}",
        before.calls_total,
        100.0 * before.fp_ratio,
        100.0 * after.fp_ratio,
        100.0 * drop,
        100.0 * before.fn_ratio,
        100.0 * after.fn_ratio,
        before.fn_count,
        after.fn_count,
        before.total_turns,
        after.total_turns,
        rounds
    );
    ensure(before.calls_total >= 5_000, || format!("too few calls: {detail}"))?;
    ensure((0.01..=0.03).contains(&before.fp_ratio), || {
        format!("FP outside [1%, 3%]: {detail}")
    })?;
    ensure(before.fn_ratio <= 0.0005, || format!("FN above 0.05%: {detail}"))?;
    ensure(drop >= 0.40, || format!("FP drop below 40%: {detail}"))?;
    ensure(
        per_20k(before.fn_count, before.total_turns) <= 1.0 && per_20k(after.fn_count, after.total_turns) <= 1.0,
        || format!("FN above 1 per 20,000 turns: {detail}"),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn normalization_error(r: &PosteriorResult) -> f64 {
    (r.q_mass.iter().sum::<f64>() + (1.0 - r.p_t1) - 1.0).abs()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (SpreadPrior, FeatureModel, Vec<Observation>) {
    let unit = |rng: &mut ChaCha8Rng| match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen::<f64>(),
    };
    let prior = SpreadPrior {
        pi_t: unit(rng),
        alpha: rng.gen_range(0.5..10.0),
        beta: rng.gen_range(0.5..20.0),
    };
    let v = rng.gen_range(1..=4);
    let fm = FeatureModel::new(
        (0..v)
            .map(|i| FeatureSpec {
                name: format!("f{i}"),
                sensitivity: unit(rng),
                false_alarm: unit(rng),
            })
            .collect(),
    )
    .unwrap();
    let n = rng.gen_range(0..=10);
    let obs = (0..n)
        .map(|i| Observation {
            id: format!("p{i}"),
            features: (0..v)
                .map(|_| match rng.gen_range(0..3) {
                    0 => None,
                    1 => Some(true),
                    _ => Some(false),
                })
                .collect(),
            confirmed: rng.gen_bool(0.05),
        })
        .collect();
    (prior, fm, obs)
}

fn spread_correctness() -> Check {
    let fm = FeatureModel::default();
    let mut worst_norm: f64 = 0.0;

    // (a) no data: the posterior is the prior
    let mut worst_prior: f64 = 0.0;
    for (pi_t, alpha, beta) in [(0.5, 1.0, 9.0), (0.2, 2.5, 4.0), (0.9, 0.7, 3.0), (1.0, 5.0, 1.5)] {
        let prior = SpreadPrior { pi_t, alpha, beta };
        let r = posterior(&prior, &fm, &[], DEFAULT_GRID).map_err(|e| e.to_string())?;
        let dist = Beta::new(alpha, beta).unwrap();
        worst_prior = worst_prior
            .max((r.p_t1 - pi_t).abs())
            .max((r.q_mean_outbreak - alpha / (alpha + beta)).abs())
            .max((r.q_mean - pi_t * alpha / (alpha + beta)).abs());
        for (q, d) in r.q_grid.iter().zip(&r.q_density) {
            if *q > 0.0 && *q < 1.0 {
                worst_prior = worst_prior.max(rel_err(*d, dist.pdf(*q)));
            }
        }
        worst_norm = worst_norm.max(normalization_error(&r));
    }
    ensure(worst_prior <= 1e-9, || {
        format!("(a) prior not reproduced: error {worst_prior:e}")
    })?;

    // (b) a confirmed case settles the outbreak question
    let obs = vec![
        Observation {
            id: "c".into(),
            features: vec![Some(false)],
            confirmed: true,
        },
        Observation {
            id: "x".into(),
            features: vec![Some(true)],
            confirmed: false,
        },
    ];
    let r = posterior(&SpreadPrior::default(), &fm, &obs, DEFAULT_GRID).map_err(|e| e.to_string())?;
    ensure(r.p_t1 == 1.0 && r.z_of("c") == Some(1.0), || {
        format!("(b) p_T1 = {}", r.p_t1)
    })?;
    worst_norm = worst_norm.max(normalization_error(&r));

    // (c) s = r features carry no information
    let flat = FeatureModel::new(vec![
        FeatureSpec {
            name: "smell_taste_loss".into(),
            sensitivity: 0.65,
            false_alarm: 0.22,
        },
        FeatureSpec {
            name: "flat".into(),
            sensitivity: 0.3,
            false_alarm: 0.3,
        },
    ])
    .unwrap();
    let base_obs: Vec<Observation> = [Some(true), Some(false), None, Some(true)]
        .iter()
        .enumerate()
        .map(|(i, f)| Observation {
            id: format!("p{i}"),
            features: vec![*f],
            confirmed: false,
        })
        .collect();
    let flat_obs: Vec<Observation> = base_obs
        .iter()
        .zip([Some(true), Some(true), Some(false), None])
        .map(|(o, extra)| Observation {
            features: vec![o.features[0], extra],
            ..o.clone()
        })
        .collect();
    let a = posterior(&SpreadPrior::default(), &fm, &base_obs, DEFAULT_GRID).map_err(|e| e.to_string())?;
    let b = posterior(&SpreadPrior::default(), &flat, &flat_obs, DEFAULT_GRID).map_err(|e| e.to_string())?;
    let mut flat_err = (a.p_t1 - b.p_t1).abs().max((a.q_mean - b.q_mean).abs());
    for (x, y) in a.z_post.iter().zip(&b.z_post) {
        flat_err = flat_err.max((x.p_infected - y.p_infected).abs());
    }
    for (x, y) in a.q_density.iter().zip(&b.q_density) {
        flat_err = flat_err.max((x - y).abs() / x.abs().max(1.0));
    }
    ensure(flat_err <= 1e-12, || {
        format!("(c) s = r changed the posterior by {flat_err:e}")
    })?;

    // (d) randomized instances against 2^N enumeration
    let mut rng = ChaCha8Rng::seed_from_u64(20200309);
    let mut compared = 0;
    let mut inconsistent = 0;
    let mut worst_oracle: f64 = 0.0;
    while compared < 200 {
        let (prior, fm, obs) = random_instance(&mut rng);
        match (
            posterior(&prior, &fm, &obs, DEFAULT_GRID),
            enumerate_posterior(&prior, &fm, &obs, 64),
        ) {
            (Ok(m), Ok(e)) => {
                compared += 1;
                worst_oracle = worst_oracle
                    .max(rel_err(m.p_t1, e.p_t1))
                    .max(rel_err(m.q_mean, e.q_mean));
                for (x, y) in m.z_post.iter().zip(&e.z_post) {
                    worst_oracle = worst_oracle.max(rel_err(x.p_infected, y.p_infected));
                }
                worst_norm = worst_norm.max(normalization_error(&m));
            }
            (Err(Error::InconsistentEvidence(_)), Err(Error::InconsistentEvidence(_))) => inconsistent += 1,
            (m, e) => {
                return Err(format!(
                    "(d) main and oracle disagree on failure: {:?} / {:?}",
                    m.err(),
                    e.err()
                ))
            }
        }
    }
    ensure(worst_oracle <= 1e-6, || {
        format!("(d) worst relative error {worst_oracle:e}")
    })?;

    // (e) perfect features: Beta(alpha + k, beta + N - k)
    let perfect = FeatureModel::new(vec![FeatureSpec {
        name: "test".into(),
        sensitivity: 1.0,
        false_alarm: 0.0,
    }])
    .unwrap();
    let prior = SpreadPrior {
        pi_t: 1.0,
        alpha: 2.0,
        beta: 5.0,
    };
    let flags = [true, false, false, true, false, false, false, true, false, false];
    let obs: Vec<Observation> = flags
        .iter()
        .enumerate()
        .map(|(i, &f)| Observation {
            id: format!("p{i}"),
            features: vec![Some(f)],
            confirmed: false,
        })
        .collect();
    let r = posterior(&prior, &perfect, &obs, DEFAULT_GRID).map_err(|e| e.to_string())?;
    let k = flags.iter().filter(|f| **f).count() as f64;
    let (pa, pb) = (prior.alpha + k, prior.beta + flags.len() as f64 - k);
    let mean = pa / (pa + pb);
    let var = pa * pb / ((pa + pb).powi(2) * (pa + pb + 1.0));
    let conj_err = (r.q_mean - mean).abs().max((r.q_var - var).abs());
    ensure(conj_err <= 1e-8, || {
        format!("(e) conjugate moments off by {conj_err:e}")
    })?;
    worst_norm = worst_norm.max(normalization_error(&r));

    // (f) normalization, including a large population
    let big: Vec<Observation> = (0..5000)
        .map(|i| Observation {
            id: format!("p{i}"),
            features: vec![Some(i % 6 == 0)],
            confirmed: false,
        })
        .collect();
    let r = posterior(&SpreadPrior::default(), &fm, &big, DEFAULT_GRID).map_err(|e| e.to_string())?;
    worst_norm = worst_norm.max(normalization_error(&r));
    ensure(worst_norm <= 1e-8, || format!("(f) normalization error {worst_norm:e}"))?;

    Ok(format!(
        "(a) {worst_prior:.1e} (b) p_T1=1 (c) {flat_err:.1e} (d) {compared} instances, worst rel {worst_oracle:.1e} \
         ({inconsistent} impossible skipped) (e) {conj_err:.1e} (f) {worst_norm:.1e}"
    ))
}

// ---------------------------------------------------------------------------

fn run_cli(store: &std::path::Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_carecall"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn replay_determinism() -> Check {
    let args = ["simulate", "--subjects", "100", "--days", "14", "--seed", "7"];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for d in &dirs {
        outputs.push(run_cli(d.path(), &args)?);
    }
    ensure(outputs[0] == outputs[1], || "report output differs between runs".into())?;
    let mut bytes = 0;
    for file in ["events.jsonl", "report.json", "report.txt"] {
        let a = std::fs::read(dirs[0].path().join("campaign-0001").join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join("campaign-0001").join(file)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{file} differs between runs"))?;
        bytes += a.len();
    }
    // the log alone rebuilds the state of an in-process run
    let text = std::fs::read_to_string(dirs[0].path().join("campaign-0001").join(FileStore::EVENTS)).unwrap();
    let replayed =
        Campaign::replay(EventLog::from_jsonl(&text, 0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let direct = simulate::run(&SimulationPlan::new(100, 14, 7, Config::default()), "campaign-0001")
        .map_err(|e| e.to_string())?;
    ensure(replayed.state() == direct.campaign.state(), || {
        "replayed state differs".into()
    })?;
    Ok(format!(
        "two CLI runs byte-identical ({bytes} bytes); replayed state equals live state"
    ))
}

// ---------------------------------------------------------------------------

fn retention() -> Check {
    // staggered enrolment so calls span seven weeks
    let settings = CampaignSettings {
        seed: 11,
        ..Default::default()
    };
    let start = settings.start_date;
    let t0 = start.and_hms_opt(0, 0, 0).unwrap();
    let mut campaign = Campaign::new(settings, t0).map_err(|e| e.to_string())?;
    for i in 0..60 {
        let subject = Subject {
            subject_id: format!("s{i:03}"),
            enrolled_at: start + chrono::Duration::days(i % 36),
            window_days: 14,
            persona_ref: None,
            phone_label: format!("phone-{i:03}"),
        };
        campaign
            .register_subject(subject, Some(Persona::default()), t0)
            .map_err(|e| e.to_string())?;
    }
    for _ in 0..50 {
        campaign.run_day(None).map_err(|e| e.to_string())?;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut service = Service::open(dir.path(), Config::default()).map_err(|e| e.to_string())?;
    service.insert_campaign(campaign).map_err(|e| e.to_string())?;

    let now = (start + chrono::Duration::days(50)).and_hms_opt(0, 0, 0).unwrap();
    let horizon = now - chrono::Duration::days(30);
    let before = service.active().unwrap().state().clone();
    let old_sessions: BTreeSet<String> = before
        .sessions
        .iter()
        .filter(|(_, s)| s.session.started_at < horizon)
        .map(|(id, _)| id.clone())
        .collect();
    let old_records: BTreeSet<String> = before
        .queue
        .iter()
        .filter(|r| r.created_at < horizon)
        .map(|r| r.record_id.clone())
        .collect();
    let expected: BTreeMap<&str, usize> = [("sessions", old_sessions.len()), ("escalations", old_records.len())].into();

    let first = service.purge(now).map_err(|e| e.to_string())?;
    let after = service.active().unwrap().state().clone();
    ensure(first.purge_count == old_sessions.len() + old_records.len(), || {
        format!("purge_count {} but expected {expected:?}", first.purge_count)
    })?;
    let kept_sessions: BTreeSet<String> = after.sessions.keys().cloned().collect();
    let want_sessions: BTreeSet<String> = before
        .sessions
        .keys()
        .filter(|k| !old_sessions.contains(*k))
        .cloned()
        .collect();
    ensure(kept_sessions == want_sessions, || {
        "session set after purge is not exactly the newer ones".into()
    })?;
    let kept_records: BTreeSet<String> = after.queue.iter().map(|r| r.record_id.clone()).collect();
    let want_records: BTreeSet<String> = before
        .queue
        .iter()
        .map(|r| r.record_id.clone())
        .filter(|id| !old_records.contains(id))
        .collect();
    ensure(kept_records == want_records, || {
        "escalation set after purge is not exactly the newer ones".into()
    })?;
    ensure(after.daily == before.daily, || "daily aggregates changed".into())?;

    // purged transcripts are gone from disk as well
    let id = service.active_id().unwrap().to_owned();
    let campaign_dir = service.campaign_dir(&id).unwrap();
    let mut on_disk = String::new();
    for file in [FileStore::EVENTS, FileStore::SNAPSHOT] {
        on_disk.push_str(&std::fs::read_to_string(campaign_dir.join(file)).unwrap_or_default());
    }
    let leaked = old_sessions
        .iter()
        .filter(|s| on_disk.contains(&format!("\"{s}\"")))
        .count();
    ensure(leaked == 0, || format!("{leaked} purged sessions still on disk"))?;

    let second = service.purge(now).map_err(|e| e.to_string())?;
    let again = service.active().unwrap().state().clone();
    ensure(second.purge_count == 0 && again == after, || {
        format!("second purge removed {} records", second.purge_count)
    })?;
    // and the store reloads to the same state
    let reopened = Service::open(dir.path(), Config::default()).map_err(|e| e.to_string())?;
    ensure(reopened.active().unwrap().state() == &after, || {
        "reloaded state differs".into()
    })?;
    Ok(format!(
        "horizon {horizon}: removed {} sessions + {} escalations, kept {} + {}; second purge removed 0",
        old_sessions.len(),
        old_records.len(),
        kept_sessions.len(),
        kept_records.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    type Criterion = (&'static str, Duration, fn() -> Check);
    let criteria: [Criterion; 7] = [
        ("Dialog script fidelity", Duration::from_secs(1), script_fidelity),
        ("Termination & safety", Duration::from_secs(10), termination_and_safety),
        ("Rate calibration", Duration::from_secs(60), rate_calibration),
        ("HITL improvement", Duration::from_secs(300), hitl_improvement),
        (
            "Spread posterior correctness",
            Duration::from_secs(60),
            spread_correctness,
        ),
        ("Replay determinism", Duration::from_secs(60), replay_determinism),
        ("Retention", Duration::from_secs(60), retention),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = started.elapsed();
        let (pass, detail) = match outcome {
            Ok(detail) if elapsed <= budget => (true, detail),
            Ok(detail) => (false, format!("{detail}; over the {budget:?} budget")),
            Err(detail) => (false, detail),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {name} [{:.2} s / {} s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
