//! Single-chain convergence diagnostics: split potential scale reduction and
//! effective sample size. Reported as warnings only.

use super::summary::mean_sd;
use super::PosteriorDraws;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
}

impl ParamDiagnostic {
    pub fn is_suspect(&self) -> bool {
        !(self.rhat < 1.05) || self.ess < 100.0
    }
}

/// Potential scale reduction of the two halves of `x`.
pub fn split_rhat(x: &[f64]) -> f64 {
    let half = x.len() / 2;
    if half < 2 {
        return f64::NAN;
    }
    let (a, b) = (&x[..half], &x[x.len() - half..]);
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let n = half as f64;
    let w = (sa * sa + sb * sb) / 2.0;
    if w == 0.0 {
        return if ma == mb { 1.0 } else { f64::INFINITY };
    }
    let grand = (ma + mb) / 2.0;
    let between = n * ((ma - grand).powi(2) + (mb - grand).powi(2));
    let var_plus = (n - 1.0) / n * w + between / n;
    (var_plus / w).sqrt()
}

/// Effective sample size from autocorrelations truncated by Geyer's initial
/// positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        let c: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64;
        c / c0
    };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau.max(1e-12)
}

pub fn diagnose(draws: &PosteriorDraws) -> Vec<ParamDiagnostic> {
    draws
        .names
        .iter()
        .map(|name| {
            let col = draws.column(name).expect("name comes from draws");
            ParamDiagnostic {
                name: name.clone(),
                rhat: split_rhat(&col),
                ess: effective_sample_size(&col),
            }
        })
        .collect()
}
