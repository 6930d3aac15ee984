//! Gaussian random-walk proposal that learns its covariance and overall
//! scale during warmup and is frozen afterwards.

use nalgebra::DMatrix;
use rand::Rng;

use super::normal;

const ADAPT_START: usize = 100;
const ADAPT_EVERY: usize = 50;
const TARGET_ACCEPT: f64 = 0.234;

#[derive(Debug, Clone)]
pub(crate) struct AdaptiveRw {
    /// Lower Cholesky factor of the unscaled proposal covariance.
    chol: DMatrix<f64>,
    log_scale: f64,
    history: Vec<Vec<f64>>,
    n_updates: usize,
    pub accepted: usize,
    pub proposed: usize,
}

impl AdaptiveRw {
    pub fn new(initial_sd: &[f64]) -> Self {
        Self {
            chol: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(initial_sd)),
            log_scale: 0.0,
            history: Vec::new(),
            n_updates: 0,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    pub fn propose(&self, theta: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let d = self.dim();
        let eps: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let s = self.log_scale.exp();
        let mut out = theta.to_vec();
        for a in 0..d {
            for c in 0..=a {
                out[a] += s * self.chol[(a, c)] * eps[c];
            }
        }
        out
    }

    /// Bookkeeping after one proposal. During warmup (`adapt` is the
    /// iteration index) the scale follows a Robbins-Monro step towards the
    /// target acceptance rate.
    pub fn record(&mut self, accepted: bool, adapt: Option<usize>) {
        self.proposed += 1;
        self.accepted += accepted as usize;
        if adapt.is_some() {
            self.n_updates += 1;
            let gain = 1.0 / (self.n_updates as f64).sqrt();
            self.log_scale += gain * (accepted as u8 as f64 - TARGET_ACCEPT);
            self.log_scale = self.log_scale.clamp(-10.0, 3.0);
        }
    }

    /// Called once per iteration with the current point; refits the
    /// covariance from the warmup path at fixed intervals.
    pub fn observe(&mut self, theta: &[f64], adapt: Option<usize>) {
        let Some(it) = adapt else { return };
        if it >= ADAPT_START {
            self.history.push(theta.to_vec());
        }
        if it >= ADAPT_START + ADAPT_EVERY && (it - ADAPT_START) % ADAPT_EVERY == 0 {
            self.refit();
        }
    }

    fn refit(&mut self) {
        let h = &self.history;
        let d = self.dim();
        let n = h.len() as f64;
        let mut mean = vec![0.0; d];
        for row in h {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for row in h {
            for a in 0..d {
                for c in 0..=a {
                    cov[(a, c)] += (row[a] - mean[a]) * (row[c] - mean[c]) / (n - 1.0);
                }
            }
        }
        for a in 0..d {
            for c in 0..a {
                cov[(c, a)] = cov[(a, c)];
            }
        }
        let mut prop = cov * (2.38f64.powi(2) / d as f64);
        for a in 0..d {
            prop[(a, a)] += 1e-10;
        }
        if let Some(ch) = prop.cholesky() {
            // The scale already tuned against the old covariance starts over.
            self.chol = ch.l();
            self.log_scale = 0.0;
            self.n_updates = 0;
        }
    }
}
