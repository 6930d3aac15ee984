//! Posterior means, sds and equal-tailed credible intervals.

use serde::{Deserialize, Serialize};

use super::PosteriorDraws;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ParamSummary {
    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub level: f64,
    pub params: Vec<ParamSummary>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) q`).
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Summarizes every column of `draws` at credible `level`.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<PosteriorSummary> {
    if draws.n_draws() == 0 {
        return Err(Error::EmptyDraws);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidSettings(format!("credible level {level} outside (0, 1)")));
    }
    let tail = (1.0 - level) / 2.0;
    let params = draws
        .names
        .iter()
        .map(|name| {
            let mut col = draws.column(name).expect("name comes from draws");
            let (mean, sd) = mean_sd(&col);
            col.sort_by(f64::total_cmp);
            ParamSummary {
                name: name.clone(),
                mean,
                sd,
                ci_low: quantile_sorted(&col, tail),
                ci_high: quantile_sorted(&col, 1.0 - tail),
            }
        })
        .collect();
    Ok(PosteriorSummary { level, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single(values: &[f64]) -> PosteriorDraws {
        let mut d = PosteriorDraws::new(vec!["beta1".into()]);
        for v in values {
            d.push(&[*v]);
        }
        d
    }

    #[test]
    fn constant_draws() {
        let s = summarize(&single(&[2.5; 40]), 0.95).unwrap();
        let b = s.get("beta1").unwrap();
        assert_eq!((b.mean, b.sd, b.ci_low, b.ci_high), (2.5, 0.0, 2.5, 2.5));
    }

    #[test]
    fn interval_on_one_to_hundred() {
        let values: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let s = summarize(&single(&values), 0.95).unwrap();
        let b = s.get("beta1").unwrap();
        // Oracle: position (n-1) q on the 0-based sorted array 1..=100, so the
        // value is 1 + 99 q.
        assert_abs_diff_eq!(b.ci_low, 1.0 + 99.0 * 0.025, epsilon = 1e-12);
        assert_abs_diff_eq!(b.ci_high, 1.0 + 99.0 * 0.975, epsilon = 1e-12);
        assert_abs_diff_eq!(b.mean, 50.5);
        assert!(b.ci_low <= b.ci_high);
    }

    #[test]
    fn symmetric_draws_center_on_zero() {
        let values: Vec<f64> = (0..500).flat_map(|i| [f64::from(i) * 0.01, -f64::from(i) * 0.01]).collect();
        let s = summarize(&single(&values), 0.9).unwrap();
        let b = s.get("beta1").unwrap();
        assert!(b.mean.abs() < 3.0 * b.sd / (values.len() as f64).sqrt());
    }

    #[test]
    fn empty_draws_are_rejected() {
        assert!(matches!(summarize(&single(&[]), 0.95), Err(Error::EmptyDraws)));
    }
}
