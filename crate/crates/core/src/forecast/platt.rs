//! Logistic calibration of a single score: `sigmoid(a * s + b)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 10_000;
const GRAD_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattForecaster {
    pub a: f64,
    pub b: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl PlattForecaster {
    pub fn predict(&self, score: f64) -> f64 {
        sigmoid(self.a * score + self.b)
    }
}

fn mean_nll(scores: &[f64], labels: &[bool], a: f64, b: f64) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let z = a * s + b;
            softplus(z) - if y { z } else { 0.0 }
        })
        .sum();
    total / scores.len() as f64
}

/// Maximum-likelihood `(a, b)` by damped Newton iterations. Stops once the
/// mean gradient norm drops below 1e-8 or after 10^4 iterations.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattForecaster> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no rows to fit"));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateData("Platt scaling needs both positive and negative rows".into()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }

    let n = scores.len() as f64;
    let (mut a, mut b) = (1.0, 0.0);
    let mut loss = mean_nll(scores, labels, a, b);
    for _ in 0..MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &y) in scores.iter().zip(labels) {
            let p = sigmoid(a * s + b);
            let r = p - f64::from(u8::from(y));
            let w = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        let (ga, gb, haa, hab, hbb) = (ga / n, gb / n, haa / n, hab / n, hbb / n);
        if ga.hypot(gb) < GRAD_TOL {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 1e-300 && haa > 0.0 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };

        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let (na, nb) = (a - step * da, b - step * db);
            let next = mean_nll(scores, labels, na, nb);
            if next <= loss {
                improved = next < loss || (na, nb) == (a, b);
                a = na;
                b = nb;
                loss = next;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric("Platt fit diverged".into()));
    }
    Ok(PlattForecaster { a, b })
}
