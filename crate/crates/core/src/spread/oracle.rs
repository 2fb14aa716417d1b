//! Reference posteriors that share no code path with [`super::posterior`].
//!
//! * enumeration sums over all `2^N` infection configurations and
//!   integrates `q` analytically (each configuration gives a Beta kernel);
//! * the fine grid applies the midpoint rule with at least `10^5` cells.
//!
//! Both exist to check the production path; neither is fast.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use super::{
    check_observations, credible_interval, log_add_exp, person_likelihoods, FeatureModel, Observation, PosteriorResult,
    SpreadPrior, SubjectPosterior,
};
use crate::error::{Error, Result};

pub const MAX_ENUMERATION: usize = 12;
pub const MIN_FINE_GRID: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Present when there are at most [`MAX_ENUMERATION`] observations.
    pub enumeration: Option<PosteriorResult>,
    pub fine_grid: PosteriorResult,
}

pub fn oracle_posterior(
    prior: &SpreadPrior,
    fm: &FeatureModel,
    observations: &[Observation],
    grid_points: usize,
) -> Result<OracleReport> {
    let enumeration = if observations.len() <= MAX_ENUMERATION {
        Some(enumerate_posterior(prior, fm, observations, grid_points)?)
    } else {
        None
    };
    Ok(OracleReport {
        enumeration,
        fine_grid: fine_grid_posterior(prior, fm, observations, MIN_FINE_GRID)?,
    })
}

/// Exact posterior by enumerating infection configurations.
pub fn enumerate_posterior(
    prior: &SpreadPrior,
    fm: &FeatureModel,
    observations: &[Observation],
    grid_points: usize,
) -> Result<PosteriorResult> {
    prior.validate()?;
    check_observations(observations, fm)?;
    let n = observations.len();
    if n > MAX_ENUMERATION {
        return Err(Error::TooLarge(format!(
            "enumeration handles at most {MAX_ENUMERATION} observations, got {n}"
        )));
    }
    if grid_points < 2 {
        return Err(Error::contract("grid needs at least two points"));
    }
    let likes: Vec<(f64, f64)> = observations.iter().map(|o| person_likelihoods(o, fm)).collect();
    let (alpha, beta) = (prior.alpha, prior.beta);
    let ln_b0 = ln_beta(alpha, beta);

    // log weight of the outbreak branch per number of infected, and per
    // person the log weight of configurations where that person is infected
    let mut by_k = vec![f64::NEG_INFINITY; n + 1];
    let mut infected = vec![f64::NEG_INFINITY; n];
    for mask in 0u32..(1u32 << n) {
        let mut lw = prior.pi_t.ln();
        for (i, &(a, b)) in likes.iter().enumerate() {
            lw += if mask >> i & 1 == 1 { a.ln() } else { b.ln() };
        }
        let k = mask.count_ones() as usize;
        lw += ln_beta(alpha + k as f64, beta + (n - k) as f64) - ln_b0;
        by_k[k] = log_add_exp(by_k[k], lw);
        for (i, slot) in infected.iter_mut().enumerate() {
            if mask >> i & 1 == 1 {
                *slot = log_add_exp(*slot, lw);
            }
        }
    }
    let log_t0 = (1.0 - prior.pi_t).ln() + likes.iter().map(|&(_, b)| b.ln()).sum::<f64>();
    let log_t1 = by_k.iter().fold(f64::NEG_INFINITY, |acc, &w| log_add_exp(acc, w));
    let log_z = log_add_exp(log_t0, log_t1);
    if log_z == f64::NEG_INFINITY || log_z.is_nan() {
        return Err(Error::InconsistentEvidence("evidence has zero probability".into()));
    }
    let p_t1 = (log_t1 - log_z).exp();
    // mixture weights of Beta(alpha + k, beta + n - k), conditional on T = 1
    let mix: Vec<f64> = if log_t1 > f64::NEG_INFINITY {
        by_k.iter().map(|w| (w - log_t1).exp()).collect()
    } else {
        vec![0.0; n + 1]
    };
    let s = alpha + beta + n as f64;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (k, w) in mix.iter().enumerate() {
        let a = alpha + k as f64;
        m1 += w * a / s;
        m2 += w * a * (a + 1.0) / (s * (s + 1.0));
    }
    let q_mean = p_t1 * m1;
    let q_var = p_t1 * m2 - q_mean * q_mean;

    let density = |q: f64| -> f64 {
        mix.iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, w)| {
                let a = alpha + k as f64;
                let b = beta + (n - k) as f64;
                w * ((a - 1.0) * q.ln() + (b - 1.0) * (1.0 - q).ln() - ln_beta(a, b)).exp()
            })
            .sum()
    };
    let cdf = |x: f64| -> f64 {
        let mut c = 1.0 - p_t1;
        for (k, w) in mix.iter().enumerate() {
            if *w > 0.0 {
                c += p_t1 * w * beta_reg(alpha + k as f64, beta + (n - k) as f64, x);
            }
        }
        c
    };
    let quantile = |p: f64| -> f64 {
        if p <= 1.0 - p_t1 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let h = 1.0 / (grid_points - 1) as f64;
    let q_grid: Vec<f64> = (0..grid_points).map(|i| i as f64 * h).collect();
    let q_density: Vec<f64> = q_grid.iter().map(|&q| density(q)).collect();
    // exact mass of the cell around each node
    let q_mass: Vec<f64> = q_grid
        .iter()
        .map(|&q| {
            let lo = (q - h / 2.0).max(0.0);
            let hi = (q + h / 2.0).min(1.0);
            let lo_c = if lo == 0.0 { 1.0 - p_t1 } else { cdf(lo) };
            cdf(hi) - lo_c
        })
        .collect();

    let z_post = observations
        .iter()
        .zip(&infected)
        .map(|(o, lw)| SubjectPosterior {
            id: o.id.clone(),
            p_infected: (lw - log_z).exp().min(1.0),
        })
        .collect();

    Ok(PosteriorResult {
        p_t1,
        q_grid,
        q_density,
        q_mass,
        q_mean,
        q_var,
        q_mean_outbreak: m1,
        q_ci: [quantile(0.025), quantile(0.975)],
        z_post,
        log_z,
    })
}

/// Midpoint-rule posterior on `cells >= 10^5` equal cells.
pub fn fine_grid_posterior(
    prior: &SpreadPrior,
    fm: &FeatureModel,
    observations: &[Observation],
    cells: usize,
) -> Result<PosteriorResult> {
    prior.validate()?;
    check_observations(observations, fm)?;
    if cells < MIN_FINE_GRID {
        return Err(Error::contract(format!(
            "fine grid needs at least {MIN_FINE_GRID} cells"
        )));
    }
    let likes: Vec<(f64, f64)> = observations.iter().map(|o| person_likelihoods(o, fm)).collect();
    let width = 1.0 / cells as f64;
    let ln_b0 = ln_beta(prior.alpha, prior.beta);
    let mids: Vec<f64> = (0..cells).map(|j| (j as f64 + 0.5) * width).collect();
    let log_cell: Vec<f64> = mids
        .iter()
        .map(|&q| {
            let prior_ln = (prior.alpha - 1.0) * q.ln() + (prior.beta - 1.0) * (1.0 - q).ln() - ln_b0;
            let like_ln: f64 = likes.iter().map(|&(a, b)| (q * a + (1.0 - q) * b).ln()).sum();
            prior.pi_t.ln() + prior_ln + like_ln + width.ln()
        })
        .collect();
    let log_t0 = (1.0 - prior.pi_t).ln() + likes.iter().map(|&(_, b)| b.ln()).sum::<f64>();
    let log_t1 = log_cell.iter().fold(f64::NEG_INFINITY, |acc, &w| log_add_exp(acc, w));
    let log_z = log_add_exp(log_t0, log_t1);
    if log_z == f64::NEG_INFINITY || log_z.is_nan() {
        return Err(Error::InconsistentEvidence("evidence has zero probability".into()));
    }
    let p_t1 = (log_t1 - log_z).exp();
    let q_mass: Vec<f64> = log_cell.iter().map(|l| (l - log_z).exp()).collect();
    let q_density: Vec<f64> = if p_t1 > 0.0 {
        q_mass.iter().map(|m| m / p_t1 / width).collect()
    } else {
        vec![0.0; cells]
    };
    let q_mean: f64 = q_mass.iter().zip(&mids).map(|(m, q)| m * q).sum();
    let q_second: f64 = q_mass.iter().zip(&mids).map(|(m, q)| m * q * q).sum();
    let edges: Vec<f64> = (0..=cells).map(|j| j as f64 * width).collect();
    let q_ci = credible_interval(1.0 - p_t1, &edges, &q_mass, 0.95);

    let z_post = observations
        .iter()
        .zip(&likes)
        .map(|(o, &(a, b))| {
            let p = if o.confirmed {
                1.0
            } else {
                q_mass
                    .iter()
                    .zip(&mids)
                    .map(|(m, &q)| {
                        let l = q * a + (1.0 - q) * b;
                        if l > 0.0 {
                            m * q * a / l
                        } else {
                            0.0
                        }
                    })
                    .sum()
            };
            SubjectPosterior {
                id: o.id.clone(),
                p_infected: p,
            }
        })
        .collect();

    Ok(PosteriorResult {
        p_t1,
        q_grid: mids,
        q_density,
        q_mass,
        q_mean,
        q_var: q_second - q_mean * q_mean,
        q_mean_outbreak: if p_t1 > 0.0 { q_mean / p_t1 } else { 0.0 },
        q_ci,
        z_post,
        log_z,
    })
}
