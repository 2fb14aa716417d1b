//! Community infection-rate inference from aggregated symptom reports.
//!
//! The model has a binary outbreak indicator `T`, an infection rate `q` and
//! per-person infection `z_n`:
//!
//! * `p(T = 1) = pi_T`; given `T = 0` the rate is exactly zero (a point
//!   mass), given `T = 1` it follows `Beta(alpha, beta)`;
//! * `p(z_n = 1 | q) = q`;
//! * features are conditionally independent given `z_n`, with sensitivity
//!   `s_v = p(f_v = 1 | z = 1)` and false-alarm rate `r_v = p(f_v = 1 | z = 0)`.
//!
//! Summing out `z_n` leaves a per-person likelihood `L_n(q) = q a_n + (1 - q)
//! b_n` that is linear in `q`. The posterior is evaluated on a uniform grid;
//! the `q = 0` branch is carried as a separate scalar so it is never smeared
//! into a density.

mod oracle;
mod quadrature;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use oracle::{enumerate_posterior, fine_grid_posterior, oracle_posterior, OracleReport, MAX_ENUMERATION};
pub use quadrature::BetaQuadrature;

use crate::error::{Error, Result};

pub const DEFAULT_GRID: usize = 1024;
pub const MIN_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadPrior {
    /// `p(T = 1)`
    pub pi_t: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SpreadPrior {
    fn default() -> Self {
        SpreadPrior {
            pi_t: 0.5,
            alpha: 1.0,
            beta: 9.0,
        }
    }
}

impl SpreadPrior {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi_t) {
            return Err(Error::config(format!("pi_t must lie in [0, 1], got {}", self.pi_t)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!(
                "Beta parameters must be positive, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    /// `p(f = 1 | infected)`
    pub sensitivity: f64,
    /// `p(f = 1 | not infected)`
    pub false_alarm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub features: Vec<FeatureSpec>,
}

impl Default for FeatureModel {
    /// Loss of smell or taste: reported by 65% of positive and 22% of
    /// negative cases.
    fn default() -> Self {
        FeatureModel {
            features: vec![FeatureSpec {
                name: "smell_taste_loss".into(),
                sensitivity: 0.65,
                false_alarm: 0.22,
            }],
        }
    }
}

impl FeatureModel {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let fm = FeatureModel { features };
        fm.validate()?;
        Ok(fm)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for f in &self.features {
            if !(0.0..=1.0).contains(&f.sensitivity) || !(0.0..=1.0).contains(&f.false_alarm) {
                return Err(Error::config(format!("feature `{}` rates must lie in [0, 1]", f.name)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(Error::config(format!("duplicate feature `{}`", f.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }
}

/// One person's report. `features[v]` is `None` when feature `v` was not
/// observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: String,
    pub features: Vec<Option<bool>>,
    #[serde(default)]
    pub confirmed: bool,
}

impl Observation {
    pub fn missing(id: impl Into<String>, n_features: usize) -> Self {
        Observation {
            id: id.into(),
            features: vec![None; n_features],
            confirmed: false,
        }
    }
}

#[derive(Deserialize)]
struct ObservationRow {
    id: String,
    #[serde(default)]
    features: BTreeMap<String, Option<u8>>,
    #[serde(default)]
    confirmed: bool,
}

/// Parses `{id, features: {name: 0|1}, confirmed}` JSON lines against the
/// feature model. Absent features are MISSING.
pub fn parse_observations_jsonl(text: &str, fm: &FeatureModel) -> Result<Vec<Observation>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let row: ObservationRow = serde_json::from_str(line)?;
            observation_from_row(row, fm)
        })
        .collect()
}

/// Same as [`parse_observations_jsonl`] for already-parsed JSON values.
pub fn observations_from_json(values: &[serde_json::Value], fm: &FeatureModel) -> Result<Vec<Observation>> {
    values
        .iter()
        .map(|v| {
            let row: ObservationRow = serde_json::from_value(v.clone())?;
            observation_from_row(row, fm)
        })
        .collect()
}

fn observation_from_row(row: ObservationRow, fm: &FeatureModel) -> Result<Observation> {
    let mut features = vec![None; fm.len()];
    for (name, value) in row.features {
        let v = fm
            .index_of(&name)
            .ok_or_else(|| Error::contract(format!("observation {}: unknown feature `{name}`", row.id)))?;
        features[v] = match value {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(other) => {
                return Err(Error::contract(format!(
                    "observation {}: feature `{name}` must be 0 or 1, got {other}",
                    row.id
                )))
            }
        };
    }
    Ok(Observation {
        id: row.id,
        features,
        confirmed: row.confirmed,
    })
}

/// `(a_n, b_n) = (p(F_n | z_n = 1), p(F_n | z_n = 0))`. Missing features
/// contribute a factor of one; a confirmed case has `b_n = 0`.
pub fn person_likelihoods(obs: &Observation, fm: &FeatureModel) -> (f64, f64) {
    let mut a = 1.0;
    let mut b = 1.0;
    for (value, spec) in obs.features.iter().zip(&fm.features) {
        match value {
            Some(true) => {
                a *= spec.sensitivity;
                b *= spec.false_alarm;
            }
            Some(false) => {
                a *= 1.0 - spec.sensitivity;
                b *= 1.0 - spec.false_alarm;
            }
            None => {}
        }
    }
    if obs.confirmed {
        b = 0.0;
    }
    (a, b)
}

pub(crate) fn check_observations(observations: &[Observation], fm: &FeatureModel) -> Result<()> {
    fm.validate()?;
    for o in observations {
        if o.features.len() != fm.len() {
            return Err(Error::contract(format!(
                "observation {} has {} features, model has {}",
                o.id,
                o.features.len(),
                fm.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPosterior {
    pub id: String,
    /// `p(z_n = 1 | F)`
    pub p_infected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    /// `p(T = 1 | F)`
    #[serde(rename = "p_T1")]
    pub p_t1: f64,
    pub q_grid: Vec<f64>,
    /// Density of `q` given `T = 1` and the evidence, at each grid point.
    pub q_density: Vec<f64>,
    /// Posterior probability carried by each grid point on the `T = 1`
    /// branch; sums to `p_t1`.
    pub q_mass: Vec<f64>,
    /// `E[q | F]` with the `T = 0` branch contributing `q = 0`.
    pub q_mean: f64,
    pub q_var: f64,
    /// `E[q | T = 1, F]`
    pub q_mean_outbreak: f64,
    /// Central 95% credible interval of the mixture.
    pub q_ci: [f64; 2],
    pub z_post: Vec<SubjectPosterior>,
    #[serde(rename = "log_Z")]
    pub log_z: f64,
}

impl PosteriorResult {
    /// `p(q = 0 | F)`, the point-mass branch.
    pub fn p_t0(&self) -> f64 {
        1.0 - self.p_t1
    }

    pub fn z_of(&self, id: &str) -> Option<f64> {
        self.z_post.iter().find(|z| z.id == id).map(|z| z.p_infected)
    }
}

/// Posterior over the outbreak indicator, the infection rate and each
/// person's infection on a `grid_points`-point grid.
pub fn posterior(
    prior: &SpreadPrior,
    fm: &FeatureModel,
    observations: &[Observation],
    grid_points: usize,
) -> Result<PosteriorResult> {
    prior.validate()?;
    check_observations(observations, fm)?;
    let quad = BetaQuadrature::new(prior.alpha, prior.beta, grid_points)?;
    let likes: Vec<(f64, f64)> = observations.iter().map(|o| person_likelihoods(o, fm)).collect();

    let nodes = quad.nodes();
    let log_g: Vec<f64> = nodes
        .iter()
        .map(|&q| likes.iter().map(|&(a, b)| (q * a + (1.0 - q) * b).ln()).sum())
        .collect();
    let log_m0 = (1.0 - prior.pi_t).ln() + likes.iter().map(|&(_, b)| b.ln()).sum::<f64>();

    // Scale by the largest finite log-likelihood before leaving log space.
    let shift = log_g
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let g: Vec<f64> = if shift.is_finite() {
        log_g.iter().map(|&l| (l - shift).exp()).collect()
    } else {
        vec![0.0; nodes.len()]
    };
    let weighted: Vec<f64> = quad.weights().iter().zip(&g).map(|(w, g)| w * g).collect();
    let j_scaled: f64 = weighted.iter().sum();
    let log_i1 = if j_scaled > 0.0 && shift.is_finite() {
        prior.pi_t.ln() + shift + j_scaled.ln()
    } else {
        f64::NEG_INFINITY
    };
    let log_z = log_add_exp(log_m0, log_i1);
    if log_z == f64::NEG_INFINITY || log_z.is_nan() {
        return Err(Error::InconsistentEvidence(
            "the evidence has zero probability under both the outbreak and no-outbreak branches".into(),
        ));
    }
    let p_t1 = (log_i1 - log_z).exp();

    let conditional: Vec<f64> = if j_scaled > 0.0 {
        weighted.iter().map(|w| w / j_scaled).collect()
    } else {
        vec![0.0; nodes.len()]
    };
    let q_mass: Vec<f64> = conditional.iter().map(|c| c * p_t1).collect();
    let q_mean_outbreak: f64 = conditional.iter().zip(nodes).map(|(c, q)| c * q).sum();
    let q_second: f64 = q_mass.iter().zip(nodes).map(|(m, q)| m * q * q).sum();
    let q_mean = p_t1 * q_mean_outbreak;

    let q_density: Vec<f64> = if j_scaled > 0.0 {
        nodes
            .iter()
            .zip(&g)
            // g vanishing at a singular endpoint wins: the product tends to 0
            .map(|(&q, &gi)| {
                if gi == 0.0 {
                    0.0
                } else {
                    quad.prior_density(q) * gi / j_scaled
                }
            })
            .collect()
    } else {
        vec![0.0; nodes.len()]
    };

    let interval_mass: Vec<f64> = if j_scaled > 0.0 {
        quad.interval_integrals(&g)
            .into_iter()
            .map(|m| m / j_scaled * p_t1)
            .collect()
    } else {
        vec![0.0; nodes.len() - 1]
    };
    let q_ci = credible_interval(1.0 - p_t1, nodes, &interval_mass, 0.95);

    let mut result = PosteriorResult {
        p_t1,
        q_grid: nodes.to_vec(),
        q_density,
        q_mass,
        q_mean,
        q_var: (q_second - q_mean * q_mean).max(0.0),
        q_mean_outbreak,
        q_ci,
        z_post: Vec::with_capacity(observations.len()),
        log_z,
    };
    for (obs, &(a, b)) in observations.iter().zip(&likes) {
        let p = if obs.confirmed {
            1.0
        } else {
            infection_probability(a, b, &result)
        };
        result.z_post.push(SubjectPosterior {
            id: obs.id.clone(),
            p_infected: p,
        });
    }
    Ok(result)
}

/// `p(z_n = 1 | F)` for subject `id`, integrated against an existing
/// posterior computed on the same observations.
pub fn individual_posterior(
    id: &str,
    fm: &FeatureModel,
    observations: &[Observation],
    result: &PosteriorResult,
) -> Result<f64> {
    let obs = observations
        .iter()
        .find(|o| o.id == id)
        .ok_or_else(|| Error::NotFound(format!("subject `{id}` has no observation")))?;
    if obs.confirmed {
        return Ok(1.0);
    }
    let (a, b) = person_likelihoods(obs, fm);
    Ok(infection_probability(a, b, result))
}

// sum_i mass_i * q_i a / L(q_i); the T = 0 branch contributes nothing.
fn infection_probability(a: f64, b: f64, result: &PosteriorResult) -> f64 {
    let p: f64 = result
        .q_grid
        .iter()
        .zip(&result.q_mass)
        .filter(|(_, &m)| m != 0.0)
        .map(|(&q, &m)| {
            let num = q * a;
            let l = num + (1.0 - q) * b;
            if l > 0.0 {
                m * num / l
            } else {
                0.0
            }
        })
        .sum();
    p.clamp(0.0, 1.0)
}

pub(crate) fn log_add_exp(x: f64, y: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return y;
    }
    if y == f64::NEG_INFINITY {
        return x;
    }
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// Central credible interval of a mixture with `point_mass` at zero and the
/// given per-interval masses on `nodes`, interpolating linearly inside an
/// interval.
pub(crate) fn credible_interval(point_mass: f64, nodes: &[f64], interval_mass: &[f64], level: f64) -> [f64; 2] {
    let tail = (1.0 - level) / 2.0;
    let quantile = |p: f64| -> f64 {
        let mut cum = point_mass;
        if p <= cum {
            return 0.0;
        }
        for (k, &m) in interval_mass.iter().enumerate() {
            let m = m.max(0.0);
            if cum + m >= p && m > 0.0 {
                let frac = ((p - cum) / m).clamp(0.0, 1.0);
                return nodes[k] + frac * (nodes[k + 1] - nodes[k]);
            }
            cum += m;
        }
        *nodes.last().unwrap_or(&1.0)
    };
    [quantile(tail), quantile(1.0 - tail)]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smell(id: &str, present: Option<bool>, confirmed: bool) -> Observation {
        Observation {
            id: id.into(),
            features: vec![present],
            confirmed,
        }
    }

    #[test]
    fn likelihoods_of_missing_and_confirmed() {
        let fm = FeatureModel::default();
        assert_eq!(person_likelihoods(&smell("a", None, false), &fm), (1.0, 1.0));
        assert_eq!(person_likelihoods(&smell("a", Some(true), false), &fm), (0.65, 0.22));
        assert_eq!(person_likelihoods(&smell("a", None, true), &fm), (1.0, 0.0));
        let (a, b) = person_likelihoods(&smell("a", Some(false), false), &fm);
        assert!((a - 0.35).abs() < 1e-15 && (b - 0.78).abs() < 1e-15);
    }

    #[test]
    fn no_data_returns_prior() {
        let prior = SpreadPrior::default();
        let r = posterior(&prior, &FeatureModel::default(), &[], DEFAULT_GRID).unwrap();
        assert!((r.p_t1 - 0.5).abs() < 1e-9);
        assert!((r.q_mean_outbreak - 0.1).abs() < 1e-9);
        assert!((r.q_mean - 0.05).abs() < 1e-9);
        let total: f64 = r.q_mass.iter().sum::<f64>() + r.p_t0();
        assert!((total - 1.0).abs() < 1e-12);
        // conditional density is the Beta(1, 9) prior
        for (q, d) in r.q_grid.iter().zip(&r.q_density).step_by(97) {
            assert!((d - 9.0 * (1.0 - q).powi(8)).abs() < 1e-9, "q={q}");
        }
    }

    #[test]
    fn confirmed_case_forces_outbreak() {
        let prior = SpreadPrior::default();
        let r = posterior(
            &prior,
            &FeatureModel::default(),
            &[smell("c", None, true)],
            DEFAULT_GRID,
        )
        .unwrap();
        assert_eq!(r.p_t1, 1.0);
        assert_eq!(r.z_of("c"), Some(1.0));
    }

    #[test]
    fn confirmed_case_without_outbreak_prior_is_inconsistent() {
        let prior = SpreadPrior {
            pi_t: 0.0,
            ..Default::default()
        };
        let err = posterior(
            &prior,
            &FeatureModel::default(),
            &[smell("c", None, true)],
            DEFAULT_GRID,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InconsistentEvidence(_)));
    }

    #[test]
    fn zero_outbreak_prior_means_nobody_infected() {
        let prior = SpreadPrior {
            pi_t: 0.0,
            ..Default::default()
        };
        let obs = vec![smell("a", Some(true), false), smell("b", Some(false), false)];
        let r = posterior(&prior, &FeatureModel::default(), &obs, DEFAULT_GRID).unwrap();
        assert_eq!(r.p_t1, 0.0);
        assert!(r.z_post.iter().all(|z| z.p_infected == 0.0));
        assert_eq!(r.q_ci, [0.0, 0.0]);
    }

    #[test]
    fn grid_below_minimum_is_rejected() {
        assert!(posterior(&SpreadPrior::default(), &FeatureModel::default(), &[], 32).is_err());
    }

    #[test]
    fn individual_posterior_lookup() {
        let fm = FeatureModel::default();
        let obs = vec![smell("a", Some(true), false), smell("b", None, false)];
        let r = posterior(&SpreadPrior::default(), &fm, &obs, DEFAULT_GRID).unwrap();
        let za = individual_posterior("a", &fm, &obs, &r).unwrap();
        assert_eq!(Some(za), r.z_of("a"));
        assert!(matches!(
            individual_posterior("zz", &fm, &obs, &r),
            Err(Error::NotFound(_))
        ));
        // a featureless person's infection probability is the posterior mean rate
        let zb = r.z_of("b").unwrap();
        assert!((zb - r.q_mean).abs() < 1e-12);
    }

    #[test]
    fn observation_parsing() {
        let fm = FeatureModel::new(vec![
            FeatureSpec {
                name: "fever".into(),
                sensitivity: 0.4,
                false_alarm: 0.05,
            },
            FeatureSpec {
                name: "smell_taste_loss".into(),
                sensitivity: 0.65,
                false_alarm: 0.22,
            },
        ])
        .unwrap();
        let text = r#"{"id": "p1", "features": {"smell_taste_loss": 1}, "confirmed": false}
{"id": "p2", "features": {"fever": 0, "smell_taste_loss": null}}
{"id": "p3", "confirmed": true}
"#;
        let obs = parse_observations_jsonl(text, &fm).unwrap();
        assert_eq!(obs[0].features, vec![None, Some(true)]);
        assert_eq!(obs[1].features, vec![Some(false), None]);
        assert!(obs[2].confirmed);
        assert!(parse_observations_jsonl(r#"{"id": "x", "features": {"cough": 1}}"#, &fm).is_err());
        assert!(parse_observations_jsonl(r#"{"id": "x", "features": {"fever": 2}}"#, &fm).is_err());
    }

    #[test]
    fn feature_model_validation() {
        let bad = FeatureModel {
            features: vec![FeatureSpec {
                name: "x".into(),
                sensitivity: 1.5,
                false_alarm: 0.1,
            }],
        };
        assert!(bad.validate().is_err());
        assert!(SpreadPrior {
            alpha: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SpreadPrior {
            pi_t: 1.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
