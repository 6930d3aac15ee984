//! Metropolis move on every coefficient against the observed-data posterior,
//! with the confounders and the missing cells integrated out.
//!
//! Per row pattern the observed cells are Gaussian given the instruments:
//! complete rows have `(x, y)` residuals `N(0, D + v l l')`, exposure-only
//! rows `N(0, D_x + v delta delta')`, and outcome-only rows a scalar normal
//! with variance `sum beta_j^2 sigma_j^2 + v (beta' delta + delta_4)^2 +
//! sigma_Y^2`. The log density only needs the cross-products of
//! `(1, z, x, y)` within each pattern, so a step costs nothing per row.
//! After the steps the confounders and then the missing cells are redrawn
//! from their exact conditionals.
//!
//! Data augmentation alone mixes slowly when few rows are complete, because
//! the causal effects are then informed mostly through imputed cells that
//! were drawn from the previous effects.

use std::f64::consts::PI;

use rand::Rng;

use super::adaptive::AdaptiveRw;
use super::conditionals::{Completed, Ctx};
use super::reparam;
use super::{impute_exact, normal};
use crate::data::RowPattern;
use crate::error::{Error, Result};
use crate::model::ParamState;

pub(crate) struct MarginalMove {
    /// Row-major cross-products of `(1, z, x, y)` over complete rows.
    g_a: Vec<f64>,
    /// `(1, z, x)` over exposure-only rows.
    g_b: Vec<f64>,
    /// `(1, z, y)` over outcome-only rows.
    g_c: Vec<f64>,
    n_a: f64,
    n_b: f64,
    n_c: f64,
    pub proposal: AdaptiveRw,
}

fn cross_products(rows: impl Iterator<Item = Vec<f64>>, m: usize) -> (Vec<f64>, f64) {
    let mut g = vec![0.0; m * m];
    let mut n = 0.0;
    for v in rows {
        n += 1.0;
        for a in 0..m {
            for c in a..m {
                g[a * m + c] += v[a] * v[c];
            }
        }
    }
    for a in 0..m {
        for c in 0..a {
            g[a * m + c] = g[c * m + a];
        }
    }
    (g, n)
}

/// `log N(rho; 0, D + v l l')` summed over `n` rows whose residual
/// cross-product is `r(i, j)`.
fn factor_normal_ll(r: impl Fn(usize, usize) -> f64, n: f64, s2: &[f64], load: &[f64], v: f64) -> f64 {
    let e = s2.len();
    let a: f64 = load.iter().zip(s2).map(|(l, s)| l * l / s).sum();
    let kappa = v / (1.0 + v * a);
    let log_det: f64 = s2.iter().map(|s| s.ln()).sum::<f64>() + (1.0 + v * a).ln();
    let mut quad = 0.0;
    for i in 0..e {
        let wi = load[i] / s2[i];
        quad += r(i, i) * (1.0 / s2[i] - kappa * wi * wi);
        for j in 0..i {
            quad -= 2.0 * kappa * wi * load[j] / s2[j] * r(i, j);
        }
    }
    -0.5 * n * (e as f64 * (2.0 * PI).ln() + log_det) - 0.5 * quad
}

/// `a' G b` for sparse `a`, `b` and row-major `G` of width `w`.
fn sparse_form(g: &[f64], w: usize, a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut t = 0.0;
    for &(i, va) in a {
        let row = &g[i * w..(i + 1) * w];
        let mut inner = 0.0;
        for &(j, vb) in b {
            inner += vb * row[j];
        }
        t += va * inner;
    }
    t
}

impl MarginalMove {
    pub fn new(ctx: &Ctx) -> Self {
        let (k, p) = (ctx.spec.n_instruments, ctx.p());
        let data = ctx.data;
        let rows = |pat: RowPattern| (0..data.n_rows()).filter(move |&r| data.pattern(r) == pat);
        let row_vec = |r: usize, with_x: bool, with_y: bool| {
            let mut v = vec![1.0];
            v.extend_from_slice(data.z_row(r));
            if with_x {
                v.extend((0..p).map(|j| data.x_cell(r, j).expect("observed exposure")));
            }
            if with_y {
                v.push(data.y(r).expect("observed outcome"));
            }
            v
        };
        let (g_a, n_a) = cross_products(rows(RowPattern::Complete).map(|r| row_vec(r, true, true)), k + p + 2);
        let (g_b, n_b) = cross_products(rows(RowPattern::ExposureOnly).map(|r| row_vec(r, true, false)), k + p + 1);
        let (g_c, n_c) = cross_products(rows(RowPattern::OutcomeOnly).map(|r| row_vec(r, false, true)), k + 2);

        let n = data.n_rows().max(1) as f64;
        let e = ctx.spec.n_edges();
        let dim = 2 * p + e + p + 1 + p + 1;
        let initial: Vec<f64> = (0..dim)
            .map(|i| if i >= dim - (p + 1) { 0.5 } else { 1.0 } / n.sqrt())
            .collect();
        Self {
            g_a,
            g_b,
            g_c,
            n_a,
            n_b,
            n_c,
            proposal: AdaptiveRw::new(&initial),
        }
    }

    /// Coefficient vector in [`ParamState::coefficients`] order with each
    /// noise sd on the log scale.
    pub fn pack(state: &ParamState) -> Vec<f64> {
        let mut t = state.coefficients();
        let p = state.beta.len();
        let n = t.len();
        for v in &mut t[n - (p + 1)..] {
            *v = v.ln();
        }
        t
    }

    pub fn unpack(theta: &[f64], state: &mut ParamState) {
        let mut it = theta.iter().copied();
        for v in state.beta.iter_mut().chain(&mut state.alpha).chain(&mut state.delta).chain(&mut state.omega) {
            *v = it.next().unwrap();
        }
        for s in &mut state.sigma {
            *s = it.next().unwrap().exp();
        }
        debug_assert!(it.next().is_none());
    }

    /// Observed-data log posterior over `theta` (see [`Self::pack`]),
    /// including the log-sd Jacobian.
    pub fn log_posterior(&self, ctx: &Ctx, theta: &[f64]) -> Result<f64> {
        let (k, p) = (ctx.spec.n_instruments, ctx.p());
        let e = ctx.spec.n_edges();
        let beta = &theta[..p];
        let alpha = &theta[p..p + e];
        let delta = &theta[p + e..2 * p + e];
        let omega = &theta[2 * p + e..3 * p + e + 1];
        let log_sigma = &theta[3 * p + e + 1..];
        let s2: Vec<f64> = log_sigma.iter().map(|t| (2.0 * t).exp()).collect();
        let v = ctx.priors.u_variance;
        let d4 = ctx.spec.delta4_fixed;
        let mut lp = 0.0;

        // Sparse residual maps acting on (1, z, x, y), stored back to back.
        let width = k + p + 2;
        let mut buf: Vec<(usize, f64)> = Vec::with_capacity(3 * p + ctx.spec.n_edges() + 3);
        let mut ends = Vec::with_capacity(p + 1);
        for j in 0..p {
            buf.push((0, -omega[j]));
            buf.extend(ctx.inputs[j].iter().map(|&(a, i)| (1 + i, -alpha[a])));
            buf.push((1 + k + j, 1.0));
            ends.push(buf.len());
        }
        buf.push((0, -omega[p]));
        buf.extend((0..p).map(|j| (1 + k + j, -beta[j])));
        buf.push((width - 1, 1.0));
        ends.push(buf.len());
        let row = |i: usize| &buf[if i == 0 { 0 } else { ends[i - 1] }..ends[i]];

        if self.n_a > 0.0 {
            let mut load = delta.to_vec();
            load.push(d4);
            let r = |i: usize, j: usize| sparse_form(&self.g_a, width, row(i), row(j));
            lp += factor_normal_ll(r, self.n_a, &s2, &load, v);
        }
        if self.n_b > 0.0 {
            let r = |i: usize, j: usize| sparse_form(&self.g_b, width - 1, row(i), row(j));
            lp += factor_normal_ll(r, self.n_b, &s2[..p], delta, v);
        }
        if self.n_c > 0.0 {
            let mut c = vec![0.0; k + 2];
            c[0] = -omega[p] - beta.iter().zip(omega).map(|(b, o)| b * o).sum::<f64>();
            for j in 0..p {
                for &(a, i) in &ctx.inputs[j] {
                    c[1 + i] -= beta[j] * alpha[a];
                }
            }
            c[k + 1] = 1.0;
            let mut quad = 0.0;
            for a in 0..k + 2 {
                for b in 0..k + 2 {
                    quad += c[a] * c[b] * self.g_c[a * (k + 2) + b];
                }
            }
            let load = beta.iter().zip(delta).map(|(b, d)| b * d).sum::<f64>() + d4;
            let var = beta.iter().zip(&s2).map(|(b, s)| b * b * s).sum::<f64>() + v * load * load + s2[p];
            lp += -0.5 * self.n_c * (2.0 * PI * var).ln() - 0.5 * quad / var;
        }

        // Prior kernels only; normalising constants cancel in every ratio.
        let pr = ctx.priors;
        let kernel = |xs: &[f64], mean: f64, sd: f64| -0.5 * xs.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (sd * sd);
        lp += kernel(beta, pr.beta_mean, pr.beta_sd);
        lp += kernel(alpha, pr.alpha_mean, pr.alpha_sd);
        lp += kernel(delta, pr.delta_prior_mean, pr.delta_prior_sd);
        lp += kernel(omega, pr.omega_mean, pr.omega_sd);
        let (shape, rate) = (pr.sigma_shape, pr.sigma_rate);
        for &t in log_sigma {
            // Inverse-gamma kernel on sigma^2 (or sigma) plus the log-sd
            // Jacobian: 2 log sigma (or log sigma).
            lp += if pr.prior_on_sd {
                -shape * t - rate * (-t).exp()
            } else {
                -2.0 * shape * t - rate * (-2.0 * t).exp()
            };
        }
        if !lp.is_finite() {
            return Err(Error::NonFinite("observed-data log density".into()));
        }
        Ok(lp)
    }

    /// `(delta_j, log sigma_j)` positions in the packed vector.
    fn slots(ctx: &Ctx) -> Vec<(usize, usize)> {
        let (p, e) = (ctx.p(), ctx.spec.n_edges());
        (0..p).map(|j| (p + e + j, 3 * p + e + 1 + j)).collect()
    }

    /// Posterior in walk coordinates, with the parameters it maps back to.
    fn walk_density(&self, ctx: &Ctx, slots: &reparam::Slots, phi: &[f64]) -> Option<(Vec<f64>, f64)> {
        let theta = reparam::from_walk(phi, slots, ctx.priors.u_variance)?;
        let lp = self.log_posterior(ctx, &theta).ok()?;
        Some((theta.clone(), lp + reparam::log_jacobian(phi, &theta, slots)))
    }

    pub fn step(
        &mut self,
        ctx: &Ctx,
        state: &mut ParamState,
        comp: &mut Completed,
        steps: usize,
        adapt: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let slots = Self::slots(ctx);
        let mut phi = reparam::to_walk(&Self::pack(state), &slots, ctx.priors.u_variance);
        let (mut theta, mut cur) = self
            .walk_density(ctx, &slots, &phi)
            .ok_or_else(|| Error::NonFinite("observed-data log density at the current state".into()))?;
        for _ in 0..steps {
            let prop = self.proposal.propose(&phi, rng);
            let mut ok = false;
            // Proposals outside the support or far in the tails are rejected.
            if let Some((t, next)) = self.walk_density(ctx, &slots, &prop) {
                if rng.random::<f64>().ln() < next - cur {
                    phi = prop;
                    theta = t;
                    cur = next;
                    ok = true;
                }
            }
            self.proposal.record(ok, adapt);
        }
        // The confounder's sign is only weakly identified when few rows are
        // complete.
        let flipped = reparam::flip(&phi, &slots);
        if let Some((t, next)) = self.walk_density(ctx, &slots, &flipped) {
            if rng.random::<f64>().ln() < next - cur {
                phi = flipped;
                theta = t;
            }
        }
        self.proposal.observe(&phi, adapt);
        Self::unpack(&theta, state);
        redraw_latent_and_missing(ctx, state, comp, rng)
    }
}

/// Draws every confounder with its row's missing cells integrated out, then
/// the missing cells given the confounders.
pub(crate) fn redraw_latent_and_missing(
    ctx: &Ctx,
    state: &mut ParamState,
    comp: &mut Completed,
    rng: &mut impl Rng,
) -> Result<()> {
    let p = ctx.p();
    let v = ctx.priors.u_variance;
    let d4 = ctx.spec.delta4_fixed;
    let s2: Vec<f64> = state.sigma.iter().map(|s| s * s).collect();
    let x_prec: f64 = (0..p).map(|j| state.delta[j] * state.delta[j] / s2[j]).sum();
    let load = state.beta.iter().zip(&state.delta).map(|(b, d)| b * d).sum::<f64>() + d4;
    let c_noise = state.beta.iter().zip(&s2).map(|(b, s)| b * b * s).sum::<f64>() + s2[p];
    for r in 0..ctx.n() {
        let pattern = ctx.data.pattern(r);
        let mut prec = 1.0 / v;
        let mut lin = 0.0;
        if pattern.has_exposures() {
            prec += x_prec;
            for j in 0..p {
                lin += state.delta[j] * (comp.x[r * p + j] - ctx.exposure_base(state, r, j)) / s2[j];
            }
        }
        match pattern {
            RowPattern::Complete => {
                let x = comp.x_row(r, p);
                let resid = comp.y[r] - state.omega[p] - state.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                prec += d4 * d4 / s2[p];
                lin += d4 * resid / s2[p];
            }
            RowPattern::OutcomeOnly => {
                let base: f64 = (0..p).map(|j| state.beta[j] * ctx.exposure_base(state, r, j)).sum();
                let resid = comp.y[r] - state.omega[p] - base;
                prec += load * load / c_noise;
                lin += load * resid / c_noise;
            }
            RowPattern::ExposureOnly => {}
        }
        state.u[r] = lin / prec + normal(rng) / prec.sqrt();
    }
    impute_exact(ctx, state, comp, rng)
}
