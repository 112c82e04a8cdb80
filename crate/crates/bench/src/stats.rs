//! Summary statistics for per-prompt τ.

use serde::{Deserialize, Serialize};

/// Quartile convention used everywhere in the reports.
pub const QUARTILE_METHOD: &str =
    "inclusive: linear interpolation at rank q*(n-1) over sorted values (QUARTILE.INC)";

/// Standard-deviation convention behind `cv`.
pub const CV_METHOD: &str = "sample standard deviation (n-1) over the mean; 0 for fewer than two values";

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Inclusive quantile, `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Coefficient of variation; 0 for fewer than two values.
pub fn cv(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    sample_std(xs) / mean(xs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    pub cv: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let (q1, q3) = (quantile(xs, 0.25), quantile(xs, 0.75));
        Summary {
            n: xs.len(),
            mean: mean(xs),
            median: median(xs),
            q1,
            q3,
            iqr: q3 - q1,
            min: quantile(xs, 0.0),
            max: quantile(xs, 1.0),
            cv: cv(xs),
        }
    }
}
