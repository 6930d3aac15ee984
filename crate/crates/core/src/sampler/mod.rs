//! Data-augmented Gibbs sampler.
//!
//! Each iteration imputes the missing outcomes and exposures from the current
//! parameters, merges them with the observed cells into one complete dataset,
//! and then sweeps every parameter block from its exact full conditional.
//!
//! The sweep alone mixes very slowly: the confounder loadings trade off
//! against the noise scales and the two signs of each loading are separate
//! modes. Two Metropolis moves therefore follow the sweep. The first updates
//! loadings and noise scales with the confounders and every regression
//! coefficient integrated out. The second updates all coefficients against
//! the observed-data likelihood, with the confounders and missing cells
//! integrated out. Both leave the joint posterior invariant.

mod adaptive;
mod collapsed;
pub mod conditionals;
pub mod diagnostics;
mod marginal;
mod reparam;
pub mod summary;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MrDataset;
use crate::error::{Error, Result};
use crate::model::{exposure_mean_no_u, outcome_mean_no_u, validate_spec, ModelSpec, ParamState, PriorSpec};
use crate::rng::{streams, RngStream};

use collapsed::CollapsedMove;
use marginal::MarginalMove;
use conditionals::{Completed, Ctx};

pub use conditionals::{block_values, full_conditional_log_density, set_block_values, Block, GaussianConditional};
pub use diagnostics::{diagnose, effective_sample_size, split_rhat, ParamDiagnostic};
pub use summary::{summarize, ParamSummary, PosteriorSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SigmaUpdate {
    /// Inverse-gamma draw of each noise variance.
    ConjugateVariance,
    /// Random-walk Metropolis on `log sigma`.
    MetropolisSd,
}

/// How missing cells are redrawn at the start of each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImputationRule {
    /// Exact conditional given everything else, including the row's
    /// confounder and its observed block. Keeps the chain on the joint
    /// posterior.
    FullConditional,
    /// Instrument-only and exposure-only predictive means with the confounder
    /// term dropped; see [`impute_missing`].
    Predictive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainSettings {
    /// Retained iterations after warmup, before thinning.
    pub n_iterations: usize,
    pub n_warmup: usize,
    pub thin: usize,
    /// Parameter sweeps per imputation.
    pub inner_sweeps: usize,
    pub sigma_update: SigmaUpdate,
    pub imputation: ImputationRule,
    pub seed: u64,
    /// Proposal sd of the `log sigma` random walk.
    pub metropolis_step: f64,
    pub keep_imputed: bool,
    /// Parameters held at their initial values: coefficient names as in
    /// [`ParamState::parameter_names`], or `"u"` for every confounder.
    pub frozen: Vec<String>,
    /// Metropolis steps per iteration on the confounder loadings and noise
    /// scales with confounders and coefficients integrated out; 0 runs the
    /// plain block sweep.
    pub collapsed_steps: usize,
    /// Metropolis steps per iteration on all coefficients against the
    /// observed-data posterior; 0 disables.
    ///
    /// Both extra moves keep the joint posterior invariant. They are skipped
    /// when anything is frozen or under [`ImputationRule::Predictive`].
    pub marginal_steps: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        Self {
            n_iterations: 2000,
            n_warmup: 1000,
            thin: 1,
            inner_sweeps: 1,
            sigma_update: SigmaUpdate::ConjugateVariance,
            imputation: ImputationRule::FullConditional,
            seed: 0,
            metropolis_step: 0.05,
            keep_imputed: false,
            frozen: Vec::new(),
            collapsed_steps: 20,
            marginal_steps: 100,
        }
    }
}

impl ChainSettings {
    pub fn validate(&self, priors: &PriorSpec) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSettings(m.to_string()));
        if self.n_iterations == 0 || self.thin == 0 || self.inner_sweeps == 0 {
            return bad("n_iterations, thin and inner_sweeps must be at least 1");
        }
        if self.n_iterations < self.thin {
            return bad("thin exceeds n_iterations, no draws would be kept");
        }
        if self.sigma_update == SigmaUpdate::ConjugateVariance && priors.prior_on_sd {
            return bad("a prior on the sd has no conjugate variance update; use METROPOLIS_SD");
        }
        if !(self.metropolis_step > 0.0) {
            return bad("metropolis_step must be positive");
        }
        Ok(())
    }
}

/// Which coordinates stay fixed during sampling.
#[derive(Debug, Clone)]
struct Frozen {
    u: bool,
    coef: Vec<bool>,
}

impl Frozen {
    fn parse(names: &[String], spec: &ModelSpec) -> Result<Self> {
        let all = ParamState::parameter_names(spec);
        let mut coef = vec![false; all.len()];
        let mut u = false;
        for name in names {
            if name == "u" {
                u = true;
            } else if let Some(i) = all.iter().position(|a| a == name) {
                coef[i] = true;
            } else {
                return Err(Error::InvalidSettings(format!("unknown parameter to freeze: {name}")));
            }
        }
        Ok(Self { u, coef })
    }

    fn is(&self, names: &[String], name: &str) -> bool {
        names.iter().position(|n| n == name).is_some_and(|i| self.coef[i])
    }
}

/// Retained coefficient draws, one row per kept iteration, columns named by
/// [`ParamState::parameter_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    values: Vec<f64>,
    /// Per kept iteration: imputed exposures followed by imputed outcomes.
    pub imputed: Option<Vec<Vec<f64>>>,
}

impl PosteriorDraws {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            values: Vec::new(),
            imputed: None,
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.names.len());
        self.values.extend_from_slice(row);
    }

    pub fn n_draws(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.names.len();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.names.iter().position(|n| n == name)?;
        Some((0..self.n_draws()).map(|i| self.row(i)[c]).collect())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Initial state: coefficients drawn from their priors, every noise variance
/// at its prior mean, confounders from their prior, missing cells from the
/// predictive draw of [`impute_missing`].
pub fn init_state(data: &MrDataset, spec: &ModelSpec, priors: &PriorSpec, seed: u64) -> Result<ParamState> {
    let mut rng = RngStream::new(seed, streams::INIT).rng();
    let p = spec.n_exposures;
    let layout = data.missing_layout();
    let mut draw = |k: usize, mean: f64, sd: f64| -> Vec<f64> { (0..k).map(|_| mean + sd * normal(&mut rng)).collect() };
    let omega = draw(p + 1, priors.omega_mean, priors.omega_sd);
    let alpha = draw(spec.n_edges(), priors.alpha_mean, priors.alpha_sd);
    let beta = draw(p, priors.beta_mean, priors.beta_sd);
    let delta = draw(p, priors.delta_prior_mean, priors.delta_prior_sd);
    let u = draw(data.n_rows(), 0.0, priors.u_variance.sqrt());
    let mut state = ParamState {
        omega,
        alpha,
        beta,
        delta,
        sigma: vec![priors.sigma_prior_mean().sqrt(); p + 1],
        u,
        x_imputed: vec![0.0; layout.n_missing_x_rows * p],
        y_imputed: vec![0.0; layout.n_missing_y],
    };
    impute_missing(&mut state, data, spec, &mut rng)?;
    Ok(state)
}

/// Redraws missing cells from the predictive with the confounder term
/// removed: an outcome from `N(omega_Y + beta . x, sigma_Y^2)` given the
/// row's observed exposures, and each exposure from
/// `N(omega_j + sum alpha z, sigma_j^2)` given its instruments.
///
/// Exposures are imputed before outcomes, so an exposure-only row never
/// reads an imputed value.
pub fn impute_missing(state: &mut ParamState, data: &MrDataset, spec: &ModelSpec, rng: &mut impl Rng) -> Result<()> {
    let layout = state.check_dims(data, spec)?;
    let p = spec.n_exposures;
    for r in 0..data.n_rows() {
        if let Some(s) = layout.x_slot[r] {
            for j in 0..p {
                let m = exposure_mean_no_u(data.z_row(r), j, state, spec);
                state.x_imputed[s * p + j] = m + state.sigma[j] * normal(rng);
            }
        }
    }
    for r in 0..data.n_rows() {
        if let Some(s) = layout.y_slot[r] {
            let x = data.x_row(r).expect("exposure-only rows carry exposures");
            state.y_imputed[s] = outcome_mean_no_u(&x, state) + state.sigma_y() * normal(rng);
        }
    }
    Ok(())
}

/// Redraws missing cells from their exact full conditionals.
pub fn impute_full_conditional(
    state: &mut ParamState,
    data: &MrDataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
    rng: &mut impl Rng,
) -> Result<()> {
    state.check_dims(data, spec)?;
    let ctx = Ctx::new(data, spec, priors);
    let mut comp = Completed::from_state(&ctx, state);
    impute_exact(&ctx, state, &mut comp, rng)
}

fn impute_exact(ctx: &Ctx, state: &mut ParamState, comp: &mut Completed, rng: &mut impl Rng) -> Result<()> {
    let p = ctx.p();
    let d4 = ctx.spec.delta4_fixed;
    if !ctx.missing_x_rows.is_empty() {
        // The conditional precision diag(1/sigma^2) + beta beta' / sigma_Y^2
        // is shared by every outcome-only row.
        let vy = state.sigma[p] * state.sigma[p];
        let mut q = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in 0..p {
                q[(j, k)] = state.beta[j] * state.beta[k] / vy;
            }
            q[(j, j)] += 1.0 / (state.sigma[j] * state.sigma[j]);
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::NonFinite("imputation precision is not positive definite".into()))?;
        let cov = chol.inverse();
        let scale = chol
            .l()
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::NonFinite("triangular solve failed".into()))?;
        let mut b = vec![0.0; p];
        let mut eps = vec![0.0; p];
        for (s, &r) in ctx.missing_x_rows.iter().enumerate() {
            let resid = comp.y[r] - state.omega[p] - d4 * state.u[r];
            for j in 0..p {
                let m = ctx.exposure_base(state, r, j) + state.delta[j] * state.u[r];
                b[j] = m / (state.sigma[j] * state.sigma[j]) + state.beta[j] * resid / vy;
                eps[j] = normal(rng);
            }
            for j in 0..p {
                let mut v = 0.0;
                for k in 0..p {
                    v += cov[(j, k)] * b[k] + scale[(j, k)] * eps[k];
                }
                state.x_imputed[s * p + j] = v;
                comp.x[r * p + j] = v;
            }
        }
    }
    let sy = state.sigma[p];
    for (s, &r) in ctx.missing_y_rows.iter().enumerate() {
        let x = comp.x_row(r, p);
        let m = state.omega[p] + state.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + d4 * state.u[r];
        let v = m + sy * normal(rng);
        state.y_imputed[s] = v;
        comp.y[r] = v;
    }
    Ok(())
}

/// One full Gibbs sweep over the parameter blocks given the merged complete
/// data: confounders, each exposure regression, the outcome regression, then
/// the noise scales.
pub fn update_parameters(
    state: &mut ParamState,
    data: &MrDataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
    settings: &ChainSettings,
    rng: &mut impl Rng,
) -> Result<()> {
    state.check_dims(data, spec)?;
    let ctx = Ctx::new(data, spec, priors);
    let comp = Completed::from_state(&ctx, state);
    let frozen = Frozen::parse(&settings.frozen, spec)?;
    sweep(&ctx, state, &comp, settings, &frozen, rng)?;
    check_finite(state)
}

fn sweep(
    ctx: &Ctx,
    state: &mut ParamState,
    comp: &Completed,
    settings: &ChainSettings,
    frozen: &Frozen,
    rng: &mut impl Rng,
) -> Result<()> {
    let p = ctx.p();
    let names = ParamState::parameter_names(ctx.spec);

    if !frozen.u {
        // Shared conditional precision across rows.
        let (_, var0) = conditionals::latent_conditional(ctx, state, comp, 0);
        let sd = var0.sqrt();
        for r in 0..ctx.n() {
            let (m, _) = conditionals::latent_conditional(ctx, state, comp, r);
            state.u[r] = m + sd * normal(rng);
        }
    }

    for j in 0..p {
        let g = conditionals::exposure_conditional(ctx, state, comp, j);
        let current = conditionals::exposure_block_values(ctx, state, j);
        let mut mask = vec![frozen.is(&names, &format!("omega{}", j + 1))];
        mask.extend(ctx.inputs[j].iter().map(|&(a, _)| frozen.is(&names, &format!("alpha{}", a + 1))));
        mask.push(frozen.is(&names, &format!("delta{}", j + 1)));
        let v = g.draw_masked(&current, &mask, rng)?;
        conditionals::set_exposure_block(ctx, state, j, &v);
    }

    {
        let g = conditionals::outcome_conditional(ctx, state, comp);
        let current = conditionals::outcome_block_values(state);
        let mut mask = vec![frozen.is(&names, "omegaY")];
        mask.extend((1..=p).map(|j| frozen.is(&names, &format!("beta{j}"))));
        let v = g.draw_masked(&current, &mask, rng)?;
        conditionals::set_outcome_block(state, &v);
    }

    for k in 0..=p {
        let name = if k < p { format!("sigma{}", k + 1) } else { "sigmaY".to_string() };
        if frozen.is(&names, &name) {
            continue;
        }
        match settings.sigma_update {
            SigmaUpdate::ConjugateVariance => {
                let (shape, rate) = conditionals::variance_conditional(ctx, state, comp, k);
                // 1/sigma^2 ~ Gamma(shape, scale = 1/rate)
                let precision = Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::NonFinite(format!("variance conditional: {e}")))?
                    .sample(rng);
                state.sigma[k] = (1.0 / precision).sqrt();
            }
            SigmaUpdate::MetropolisSd => {
                let ssr = conditionals::residual_ss(ctx, state, comp, k);
                let cur = state.sigma[k];
                let prop = cur * (settings.metropolis_step * normal(rng)).exp();
                let log_ratio = conditionals::log_sd_target(ctx, ssr, prop) - conditionals::log_sd_target(ctx, ssr, cur);
                if rng.random::<f64>().ln() < log_ratio {
                    state.sigma[k] = prop;
                }
            }
        }
    }
    Ok(())
}

fn check_finite(state: &ParamState) -> Result<()> {
    let ok = state.coefficients().iter().all(|v| v.is_finite())
        && state.sigma.iter().all(|s| *s > 0.0)
        && state.u.iter().all(|v| v.is_finite())
        && state.x_imputed.iter().all(|v| v.is_finite())
        && state.y_imputed.iter().all(|v| v.is_finite());
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite("sampler state".into()))
    }
}

/// Runs a chain from [`init_state`]; see [`run_chain_from`].
pub fn run_chain(data: &MrDataset, spec: &ModelSpec, priors: &PriorSpec, settings: &ChainSettings) -> Result<PosteriorDraws> {
    validate_spec(spec.clone(), priors)?;
    let init = init_state(data, spec, priors, settings.seed)?;
    run_chain_from(init, data, spec, priors, settings)
}

/// Alternates imputation with `inner_sweeps` parameter sweeps, discards the
/// warmup and keeps every `thin`-th coefficient vector after it.
pub fn run_chain_from(
    mut state: ParamState,
    data: &MrDataset,
    spec: &ModelSpec,
    priors: &PriorSpec,
    settings: &ChainSettings,
) -> Result<PosteriorDraws> {
    validate_spec(spec.clone(), priors)?;
    settings.validate(priors)?;
    state.check_dims(data, spec)?;
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset has no rows".into()));
    }
    let ctx = Ctx::new(data, spec, priors);
    let frozen = Frozen::parse(&settings.frozen, spec)?;
    let mut rng = RngStream::new(settings.seed, streams::CHAIN).rng();
    let mut comp = Completed::from_state(&ctx, &state);
    let extra = settings.frozen.is_empty() && settings.imputation == ImputationRule::FullConditional;
    let mut collapsed = (extra && settings.collapsed_steps > 0).then(|| CollapsedMove::new(&ctx));
    let mut marginal = (extra && settings.marginal_steps > 0).then(|| MarginalMove::new(&ctx));

    let mut draws = PosteriorDraws::new(ParamState::parameter_names(spec));
    if settings.keep_imputed {
        draws.imputed = Some(Vec::new());
    }
    let total = settings.n_warmup + settings.n_iterations;
    for it in 0..total {
        let step = (|| -> Result<()> {
            match settings.imputation {
                ImputationRule::FullConditional => impute_exact(&ctx, &mut state, &mut comp, &mut rng)?,
                ImputationRule::Predictive => {
                    impute_missing(&mut state, data, spec, &mut rng)?;
                    comp.refresh_missing(&ctx, &state);
                }
            }
            for _ in 0..settings.inner_sweeps {
                sweep(&ctx, &mut state, &comp, settings, &frozen, &mut rng)?;
            }
            if let Some(mv) = collapsed.as_mut() {
                let adapt = (it < settings.n_warmup).then_some(it);
                mv.step(&ctx, &mut state, &comp, settings.collapsed_steps, adapt, &mut rng)?;
            }
            if let Some(mv) = marginal.as_mut() {
                let adapt = (it < settings.n_warmup).then_some(it);
                mv.step(&ctx, &mut state, &mut comp, settings.marginal_steps, adapt, &mut rng)?;
            }
            check_finite(&state)
        })();
        step.map_err(|e| Error::ChainFailure {
            iteration: it,
            source: Box::new(e),
        })?;
        if it >= settings.n_warmup && (it - settings.n_warmup + 1) % settings.thin == 0 {
            draws.push(&state.coefficients());
            if let Some(imp) = draws.imputed.as_mut() {
                let mut v = state.x_imputed.clone();
                v.extend_from_slice(&state.y_imputed);
                imp.push(v);
            }
        }
    }
    Ok(draws)
}
