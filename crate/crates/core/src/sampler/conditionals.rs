//! Exact full conditionals of the complete-data posterior.
//!
//! The model is linear-Gaussian in every coefficient block, so each block has
//! a closed-form conditional: normal for the latent confounders, the exposure
//! and outcome regression coefficients and the missing cells; inverse-gamma
//! for each noise variance when its prior sits on the variance.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{MissingLayout, MrDataset};
use crate::error::{Error, Result};
use crate::model::{log_inv_gamma_pdf, log_normal_pdf, ModelSpec, ParamState, PriorSpec};

/// One Gibbs update block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Confounder of one row.
    Latent(usize),
    /// `(omega_j, alpha entering j, delta_j)` for exposure `j`.
    Exposure(usize),
    /// `(omega_Y, beta)`.
    Outcome,
    /// Noise variance `k`; the outcome is `k = n_exposures`.
    Variance(usize),
    /// Imputed outcome of an exposure-only row.
    MissingOutcome(usize),
    /// Imputed exposures of an outcome-only row.
    MissingExposures(usize),
}

/// Fixed per-chain context: data, model and precomputed index maps.
pub(crate) struct Ctx<'a> {
    pub data: &'a MrDataset,
    pub spec: &'a ModelSpec,
    pub priors: &'a PriorSpec,
    pub layout: MissingLayout,
    /// `(alpha index, instrument)` feeding each exposure.
    pub inputs: Vec<Vec<(usize, usize)>>,
    pub missing_x_rows: Vec<usize>,
    pub missing_y_rows: Vec<usize>,
}

impl<'a> Ctx<'a> {
    pub fn new(data: &'a MrDataset, spec: &'a ModelSpec, priors: &'a PriorSpec) -> Self {
        let layout = data.missing_layout();
        let missing_x_rows = (0..data.n_rows()).filter(|&r| layout.x_slot[r].is_some()).collect();
        let missing_y_rows = (0..data.n_rows()).filter(|&r| layout.y_slot[r].is_some()).collect();
        Self {
            data,
            spec,
            priors,
            inputs: (0..spec.n_exposures).map(|j| spec.exposure_inputs(j)).collect(),
            layout,
            missing_x_rows,
            missing_y_rows,
        }
    }

    pub fn p(&self) -> usize {
        self.spec.n_exposures
    }

    pub fn n(&self) -> usize {
        self.data.n_rows()
    }

    /// Exposure mean of row `r` without the confounder term.
    pub fn exposure_base(&self, state: &ParamState, r: usize, j: usize) -> f64 {
        let z = self.data.z_row(r);
        let mut m = state.omega[j];
        for &(a, i) in &self.inputs[j] {
            m += state.alpha[a] * z[i];
        }
        m
    }
}

/// Observed-or-imputed exposures and outcome for every row.
#[derive(Debug, Clone)]
pub(crate) struct Completed {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Completed {
    pub fn from_state(ctx: &Ctx, state: &ParamState) -> Self {
        let (n, p) = (ctx.n(), ctx.p());
        let mut x = Vec::with_capacity(n * p);
        let mut y = Vec::with_capacity(n);
        for r in 0..n {
            x.extend(state.completed_x(ctx.data, &ctx.layout, r));
            y.push(state.completed_y(ctx.data, &ctx.layout, r));
        }
        Self { x, y }
    }

    pub fn x_row(&self, r: usize, p: usize) -> &[f64] {
        &self.x[r * p..(r + 1) * p]
    }

    /// Copies imputed cells back from the state.
    pub fn refresh_missing(&mut self, ctx: &Ctx, state: &ParamState) {
        let p = ctx.p();
        for (s, &r) in ctx.missing_x_rows.iter().enumerate() {
            self.x[r * p..(r + 1) * p].copy_from_slice(&state.x_imputed[s * p..(s + 1) * p]);
        }
        for (s, &r) in ctx.missing_y_rows.iter().enumerate() {
            self.y[r] = state.y_imputed[s];
        }
    }
}

/// Normal conditional in information form: density proportional to
/// `exp(-theta' Q theta / 2 + b' theta)`.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl GaussianConditional {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        let chol = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NonFinite("conditional precision is not positive definite".into()))?;
        Ok(chol.solve(&self.linear))
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let k = self.dim();
        let chol = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NonFinite("conditional precision is not positive definite".into()))?;
        let mean = chol.solve(&self.linear);
        let d = DVector::from_column_slice(theta) - mean;
        let quad = (d.transpose() * &self.precision * &d)[(0, 0)];
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Ok(-0.5 * (k as f64) * (2.0 * PI).ln() + 0.5 * log_det - 0.5 * quad)
    }

    /// Draws the coordinates not marked `frozen`, conditioning on the frozen
    /// ones at their `current` values.
    pub fn draw_masked(&self, current: &[f64], frozen: &[bool], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let free: Vec<usize> = (0..self.dim()).filter(|&i| !frozen[i]).collect();
        let mut out = current.to_vec();
        if free.is_empty() {
            return Ok(out);
        }
        let m = free.len();
        let mut q = DMatrix::zeros(m, m);
        let mut b = DVector::zeros(m);
        for (a, &i) in free.iter().enumerate() {
            b[a] = self.linear[i];
            for (c, &j) in free.iter().enumerate() {
                q[(a, c)] = self.precision[(i, j)];
            }
            for j in (0..self.dim()).filter(|&j| frozen[j]) {
                b[a] -= self.precision[(i, j)] * current[j];
            }
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::NonFinite("conditional precision is not positive definite".into()))?;
        let mean = chol.solve(&b);
        let eps = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let offset = chol
            .l()
            .transpose()
            .solve_upper_triangular(&eps)
            .ok_or_else(|| Error::NonFinite("triangular solve failed".into()))?;
        for (a, &i) in free.iter().enumerate() {
            out[i] = mean[a] + offset[a];
        }
        Ok(out)
    }
}

/// `(mean, variance)` of row `r`'s confounder.
pub(crate) fn latent_conditional(ctx: &Ctx, state: &ParamState, comp: &Completed, r: usize) -> (f64, f64) {
    let p = ctx.p();
    let d4 = ctx.spec.delta4_fixed;
    let mut prec = 1.0 / ctx.priors.u_variance;
    let mut lin = 0.0;
    let x = comp.x_row(r, p);
    for j in 0..p {
        let v = state.sigma[j] * state.sigma[j];
        prec += state.delta[j] * state.delta[j] / v;
        lin += state.delta[j] * (x[j] - ctx.exposure_base(state, r, j)) / v;
    }
    let vy = state.sigma[p] * state.sigma[p];
    let resid = comp.y[r] - state.omega[p] - state.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
    prec += d4 * d4 / vy;
    lin += d4 * resid / vy;
    (lin / prec, 1.0 / prec)
}

/// Current values of the exposure-`j` block in conditional order.
pub(crate) fn exposure_block_values(ctx: &Ctx, state: &ParamState, j: usize) -> Vec<f64> {
    let mut v = vec![state.omega[j]];
    v.extend(ctx.inputs[j].iter().map(|&(a, _)| state.alpha[a]));
    v.push(state.delta[j]);
    v
}

pub(crate) fn set_exposure_block(ctx: &Ctx, state: &mut ParamState, j: usize, v: &[f64]) {
    state.omega[j] = v[0];
    for (k, &(a, _)) in ctx.inputs[j].iter().enumerate() {
        state.alpha[a] = v[1 + k];
    }
    state.delta[j] = *v.last().unwrap();
}

/// Bayesian linear regression conditional: design rows supplied by `row`,
/// responses by `resp`, known noise variance and independent normal priors.
fn regression_conditional(
    m: usize,
    n: usize,
    noise_var: f64,
    prior_mean: &[f64],
    prior_var: &[f64],
    mut row: impl FnMut(usize, &mut [f64]) -> f64,
) -> GaussianConditional {
    let mut gram = vec![0.0; m * m];
    let mut xty = vec![0.0; m];
    let mut d = vec![0.0; m];
    for r in 0..n {
        let resp = row(r, &mut d);
        for a in 0..m {
            xty[a] += d[a] * resp;
            for c in a..m {
                gram[a * m + c] += d[a] * d[c];
            }
        }
    }
    let mut q = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for a in 0..m {
        for c in a..m {
            q[(a, c)] = gram[a * m + c] / noise_var;
            q[(c, a)] = q[(a, c)];
        }
        q[(a, a)] += 1.0 / prior_var[a];
        b[a] = xty[a] / noise_var + prior_mean[a] / prior_var[a];
    }
    GaussianConditional {
        precision: q,
        linear: b,
    }
}

pub(crate) fn exposure_conditional(ctx: &Ctx, state: &ParamState, comp: &Completed, j: usize) -> GaussianConditional {
    let p = ctx.p();
    let inputs = &ctx.inputs[j];
    let m = inputs.len() + 2;
    let pr = ctx.priors;
    let mut mean = vec![pr.omega_mean];
    let mut var = vec![pr.omega_sd.powi(2)];
    mean.extend(std::iter::repeat_n(pr.alpha_mean, inputs.len()));
    var.extend(std::iter::repeat_n(pr.alpha_sd.powi(2), inputs.len()));
    mean.push(pr.delta_prior_mean);
    var.push(pr.delta_prior_sd.powi(2));
    let noise = state.sigma[j] * state.sigma[j];
    regression_conditional(m, ctx.n(), noise, &mean, &var, |r, d| {
        let z = ctx.data.z_row(r);
        d[0] = 1.0;
        for (k, &(_, i)) in inputs.iter().enumerate() {
            d[1 + k] = z[i];
        }
        d[m - 1] = state.u[r];
        comp.x[r * p + j]
    })
}

pub(crate) fn outcome_block_values(state: &ParamState) -> Vec<f64> {
    let mut v = vec![state.omega_y()];
    v.extend_from_slice(&state.beta);
    v
}

pub(crate) fn set_outcome_block(state: &mut ParamState, v: &[f64]) {
    *state.omega.last_mut().unwrap() = v[0];
    state.beta.copy_from_slice(&v[1..]);
}

pub(crate) fn outcome_conditional(ctx: &Ctx, state: &ParamState, comp: &Completed) -> GaussianConditional {
    let p = ctx.p();
    let pr = ctx.priors;
    let mut mean = vec![pr.omega_mean];
    let mut var = vec![pr.omega_sd.powi(2)];
    mean.extend(std::iter::repeat_n(pr.beta_mean, p));
    var.extend(std::iter::repeat_n(pr.beta_sd.powi(2), p));
    let noise = state.sigma[p] * state.sigma[p];
    let d4 = ctx.spec.delta4_fixed;
    regression_conditional(p + 1, ctx.n(), noise, &mean, &var, |r, d| {
        d[0] = 1.0;
        d[1..].copy_from_slice(comp.x_row(r, p));
        comp.y[r] - d4 * state.u[r]
    })
}

/// Residual sum of squares of equation `k` (exposure `k`, or the outcome
/// when `k == n_exposures`).
pub(crate) fn residual_ss(ctx: &Ctx, state: &ParamState, comp: &Completed, k: usize) -> f64 {
    let p = ctx.p();
    let d4 = ctx.spec.delta4_fixed;
    (0..ctx.n())
        .map(|r| {
            let e = if k < p {
                comp.x[r * p + k] - ctx.exposure_base(state, r, k) - state.delta[k] * state.u[r]
            } else {
                let x = comp.x_row(r, p);
                comp.y[r]
                    - state.omega[p]
                    - state.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
                    - d4 * state.u[r]
            };
            e * e
        })
        .sum()
}

/// Inverse-gamma `(shape, rate)` of noise variance `k` under the conjugate prior.
pub(crate) fn variance_conditional(ctx: &Ctx, state: &ParamState, comp: &Completed, k: usize) -> (f64, f64) {
    let ssr = residual_ss(ctx, state, comp, k);
    (
        ctx.priors.sigma_shape + ctx.n() as f64 / 2.0,
        ctx.priors.sigma_rate + ssr / 2.0,
    )
}

/// Log target for a random-walk update on `log sigma_k`: complete-data
/// likelihood in `sigma`, the prior in whichever scale it is placed on, and
/// the Jacobians back to `log sigma`.
pub(crate) fn log_sd_target(ctx: &Ctx, ssr: f64, sigma: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = ctx.n() as f64;
    let pr = ctx.priors;
    let lik = -n * sigma.ln() - ssr / (2.0 * sigma * sigma);
    let prior = if pr.prior_on_sd {
        log_inv_gamma_pdf(sigma, pr.sigma_shape, pr.sigma_rate)
    } else {
        // d(sigma^2)/d(sigma) = 2 sigma
        log_inv_gamma_pdf(sigma * sigma, pr.sigma_shape, pr.sigma_rate) + (2.0 * sigma).ln()
    };
    lik + prior + sigma.ln()
}

/// `(mean, variance)` of the imputed outcome of row `r`.
pub(crate) fn missing_outcome_conditional(ctx: &Ctx, state: &ParamState, comp: &Completed, r: usize) -> (f64, f64) {
    let p = ctx.p();
    let x = comp.x_row(r, p);
    let mean = state.omega[p]
        + state.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
        + ctx.spec.delta4_fixed * state.u[r];
    (mean, state.sigma[p] * state.sigma[p])
}

/// Joint normal conditional of the imputed exposures of row `r`, combining
/// each exposure equation with the observed outcome.
pub(crate) fn missing_exposure_conditional(ctx: &Ctx, state: &ParamState, comp: &Completed, r: usize) -> GaussianConditional {
    let p = ctx.p();
    let vy = state.sigma[p] * state.sigma[p];
    let resid = comp.y[r] - state.omega[p] - ctx.spec.delta4_fixed * state.u[r];
    let mut q = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for j in 0..p {
        let vj = state.sigma[j] * state.sigma[j];
        for k in 0..p {
            q[(j, k)] = state.beta[j] * state.beta[k] / vy;
        }
        q[(j, j)] += 1.0 / vj;
        let m = ctx.exposure_base(state, r, j) + state.delta[j] * state.u[r];
        b[j] = m / vj + state.beta[j] * resid / vy;
    }
    GaussianConditional {
        precision: q,
        linear: b,
    }
}

/// Values of `block` in the state, in conditional coordinate order. Variance
/// blocks report `sigma^2`.
pub fn block_values(block: Block, state: &ParamState, data: &MrDataset, spec: &ModelSpec) -> Vec<f64> {
    let priors = PriorSpec::default();
    let ctx = Ctx::new(data, spec, &priors);
    let p = spec.n_exposures;
    match block {
        Block::Latent(r) => vec![state.u[r]],
        Block::Exposure(j) => exposure_block_values(&ctx, state, j),
        Block::Outcome => outcome_block_values(state),
        Block::Variance(k) => vec![state.sigma[k] * state.sigma[k]],
        Block::MissingOutcome(r) => vec![state.y_imputed[ctx.layout.y_slot[r].expect("row has an outcome")]],
        Block::MissingExposures(r) => {
            let s = ctx.layout.x_slot[r].expect("row has exposures");
            state.x_imputed[s * p..(s + 1) * p].to_vec()
        }
    }
}

/// Writes `values` into `block` (inverse of [`block_values`]).
pub fn set_block_values(block: Block, state: &mut ParamState, data: &MrDataset, spec: &ModelSpec, values: &[f64]) {
    let priors = PriorSpec::default();
    let ctx = Ctx::new(data, spec, &priors);
    let p = spec.n_exposures;
    match block {
        Block::Latent(r) => state.u[r] = values[0],
        Block::Exposure(j) => set_exposure_block(&ctx, state, j, values),
        Block::Outcome => set_outcome_block(state, values),
        Block::Variance(k) => state.sigma[k] = values[0].sqrt(),
        Block::MissingOutcome(r) => state.y_imputed[ctx.layout.y_slot[r].expect("row has an outcome")] = values[0],
        Block::MissingExposures(r) => {
            let s = ctx.layout.x_slot[r].expect("row has exposures");
            state.x_imputed[s * p..(s + 1) * p].copy_from_slice(values);
        }
    }
}

/// Normalized log density of `block`'s full conditional at the state's
/// current value of the block. Variance blocks are densities in `sigma^2`
/// and require the prior on the variance.
pub fn full_conditional_log_density(
    block: Block,
    state: &ParamState,
    data: &MrDataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
) -> Result<f64> {
    state.check_dims(data, spec)?;
    let ctx = Ctx::new(data, spec, priors);
    let comp = Completed::from_state(&ctx, state);
    let values = block_values(block, state, data, spec);
    match block {
        Block::Latent(r) => {
            let (m, v) = latent_conditional(&ctx, state, &comp, r);
            Ok(log_normal_pdf(values[0], m, v))
        }
        Block::Exposure(j) => exposure_conditional(&ctx, state, &comp, j).log_density(&values),
        Block::Outcome => outcome_conditional(&ctx, state, &comp).log_density(&values),
        Block::Variance(k) => {
            if priors.prior_on_sd {
                return Err(Error::InvalidSettings(
                    "variance conditional is not inverse-gamma when the prior is on the sd".into(),
                ));
            }
            let (a, b) = variance_conditional(&ctx, state, &comp, k);
            Ok(log_inv_gamma_pdf(values[0], a, b))
        }
        Block::MissingOutcome(r) => {
            let (m, v) = missing_outcome_conditional(&ctx, state, &comp, r);
            Ok(log_normal_pdf(values[0], m, v))
        }
        Block::MissingExposures(r) => missing_exposure_conditional(&ctx, state, &comp, r).log_density(&values),
    }
}
