//! Product integration against a Beta density on a uniform grid.
//!
//! For a smooth `g` sampled at `q_i = i / (G - 1)`, the weights satisfy
//! `sum_i w_i g(q_i) ~= int_0^1 Beta(q; alpha, beta) g(q) dq`. The smooth
//! factor is interpolated quadratically (interval pairs share a centre node,
//! as in Simpson's rule) while the Beta factor is integrated exactly, so
//! integrable endpoint singularities (`alpha < 1` or `beta < 1`) cost no
//! accuracy.

use statrs::function::beta::ln_beta;

use super::MIN_GRID;
use crate::error::{Error, Result};

// 8-point Gauss-Legendre on [-1, 1], as tabulated.
#[allow(clippy::excessive_precision)]
const GL_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
#[allow(clippy::excessive_precision)]
const GL_W: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

#[derive(Debug, Clone)]
struct Panel {
    /// index of the left node of the interpolation triple
    first: usize,
    /// weights for the triple (first, first + 1, first + 2)
    local: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct BetaQuadrature {
    alpha: f64,
    beta: f64,
    ln_norm: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panels: Vec<Panel>,
}

impl BetaQuadrature {
    pub fn new(alpha: f64, beta: f64, grid_points: usize) -> Result<Self> {
        if grid_points < MIN_GRID {
            return Err(Error::contract(format!(
                "grid needs at least {MIN_GRID} points, got {grid_points}"
            )));
        }
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::config(format!("invalid Beta({alpha}, {beta})")));
        }
        let intervals = grid_points - 1;
        let h = 1.0 / intervals as f64;
        let nodes: Vec<f64> = (0..grid_points).map(|i| i as f64 * h).collect();
        let mut q = BetaQuadrature {
            alpha,
            beta,
            ln_norm: ln_beta(alpha, beta),
            nodes,
            weights: vec![0.0; grid_points],
            panels: Vec::with_capacity(intervals),
        };
        for k in 0..intervals {
            // centre node of the interpolation triple
            let centre = if k % 2 == 0 { k + 1 } else { k };
            let centre = centre.min(intervals - 1);
            let [m0, m1, m2] = q.local_moments(k, centre, h);
            let local = [(m2 - m1) / 2.0, m0 - m2, (m2 + m1) / 2.0];
            let first = centre - 1;
            for (j, w) in local.iter().enumerate() {
                q.weights[first + j] += w;
            }
            q.panels.push(Panel { first, local });
        }
        Ok(q)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Beta density at `q`, `+inf` at an endpoint where it diverges.
    pub fn prior_density(&self, q: f64) -> f64 {
        beta_pdf(q, self.alpha, self.beta, self.ln_norm)
    }

    /// `int_{q_k}^{q_{k+1}} Beta(q) g(q) dq` for each interval under the
    /// same interpolation as the weights.
    pub fn interval_integrals(&self, g: &[f64]) -> Vec<f64> {
        self.panels
            .iter()
            .map(|p| (0..3).map(|j| p.local[j] * g[p.first + j]).sum())
            .collect()
    }

    // int over interval k of Beta(q) t^m, t = (q - q_centre) / h, m = 0..2
    fn local_moments(&self, k: usize, centre: usize, h: f64) -> [f64; 3] {
        let intervals = self.nodes.len() - 1;
        let qc = self.nodes[centre];
        if k == 0 {
            // t = q / h - 1
            let r = scaled_raw_moments(self.alpha, self.beta, h, self.ln_norm);
            [r[0], r[1] - r[0], r[2] - 2.0 * r[1] + r[0]]
        } else if k == intervals - 1 {
            // mirror q' = 1 - q, t = 1 - q' / h
            let r = scaled_raw_moments(self.beta, self.alpha, h, self.ln_norm);
            [r[0], r[0] - r[1], r[0] - 2.0 * r[1] + r[2]]
        } else {
            let a = self.nodes[k];
            let half = h / 2.0;
            let mid = a + half;
            let mut m = [0.0; 3];
            for (x, w) in GL_X.iter().zip(GL_W) {
                for q in [mid - half * x, mid + half * x] {
                    let f = w * half * self.prior_density(q);
                    let t = (q - qc) / h;
                    m[0] += f;
                    m[1] += f * t;
                    m[2] += f * t * t;
                }
            }
            m
        }
    }
}

fn beta_pdf(q: f64, alpha: f64, beta: f64, ln_norm: f64) -> f64 {
    let edge = |shape: f64| {
        if shape < 1.0 {
            f64::INFINITY
        } else if shape == 1.0 {
            1.0
        } else {
            0.0
        }
    };
    if q <= 0.0 {
        return edge(alpha) * (-ln_norm).exp();
    }
    if q >= 1.0 {
        return edge(beta) * (-ln_norm).exp();
    }
    ((alpha - 1.0) * q.ln() + (beta - 1.0) * (-q).ln_1p() - ln_norm).exp()
}

/// `int_0^h Beta(q; a, b) (q / h)^j dq` for `j = 0, 1, 2`, by term-wise
/// integration of the binomial series of `(1 - q)^(b - 1)`.
fn scaled_raw_moments(a: f64, b: f64, h: f64, ln_norm: f64) -> [f64; 3] {
    let scale = (a * h.ln() - ln_norm).exp();
    let mut out = [0.0; 3];
    for (j, slot) in out.iter_mut().enumerate() {
        let mut coeff = 1.0; // binom(b - 1, k) (-1)^k h^k
        let mut sum = 0.0;
        for k in 0..400 {
            let term = coeff / (a + j as f64 + k as f64);
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            coeff *= (k as f64 - (b - 1.0)) / (k as f64 + 1.0) * h;
            if coeff == 0.0 {
                break;
            }
        }
        *slot = scale * sum;
    }
    out
}
