//! The linear-Gaussian structural model.
//!
//! For instruments `z`, exposures `x`, outcome `y` and a scalar latent
//! confounder `u` per individual:
//!
//! ```text
//! u   ~ N(0, u_variance)
//! x_j ~ N(omega_j + sum_{i: edge(i, j)} alpha_ij z_i + delta_j u, sigma_j^2)
//! y   ~ N(omega_Y + beta . x + delta_4 u, sigma_Y^2)
//! ```
//!
//! `N(a, b)` takes a variance `b` throughout. Prior standard deviations held in
//! [`PriorSpec`] are squared where a variance is needed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{MissingLayout, MrDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_instruments: usize,
    pub n_exposures: usize,
    /// `edges[i][j]` is true when instrument `i` acts on exposure `j`.
    pub edges: Vec<Vec<bool>>,
    /// Effect of the confounder on the outcome, held fixed during fitting.
    pub delta4_fixed: f64,
}

impl Default for ModelSpec {
    /// Three instruments, three exposures; `Z2` acts on both `X2` and `X3`.
    fn default() -> Self {
        Self {
            n_instruments: 3,
            n_exposures: 3,
            edges: vec![
                vec![true, false, false],
                vec![false, true, true],
                vec![false, false, true],
            ],
            delta4_fixed: 1.0,
        }
    }
}

/// One instrument-exposure coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub instrument: usize,
    pub exposure: usize,
}

impl ModelSpec {
    /// Single instrument acting on a single exposure.
    pub fn single(delta4_fixed: f64) -> Self {
        Self {
            n_instruments: 1,
            n_exposures: 1,
            edges: vec![vec![true]],
            delta4_fixed,
        }
    }

    /// Edges in row-major order; position `e` is coefficient `alpha_{e+1}`.
    pub fn edge_list(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for (i, row) in self.edges.iter().enumerate() {
            for (j, &on) in row.iter().enumerate() {
                if on {
                    out.push(Edge {
                        instrument: i,
                        exposure: j,
                    });
                }
            }
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.edges.iter().flatten().filter(|&&e| e).count()
    }

    /// `(alpha index, instrument)` pairs feeding exposure `j`.
    pub fn exposure_inputs(&self, j: usize) -> Vec<(usize, usize)> {
        self.edge_list()
            .into_iter()
            .enumerate()
            .filter(|(_, e)| e.exposure == j)
            .map(|(a, e)| (a, e.instrument))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    pub u_variance: f64,
    pub delta_prior_mean: f64,
    pub delta_prior_sd: f64,
    pub omega_mean: f64,
    pub omega_sd: f64,
    /// Place the inverse-gamma prior on the noise sd itself rather than on
    /// its square. Requires the Metropolis sd update.
    pub prior_on_sd: bool,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta_mean: 0.0,
            beta_sd: 10.0,
            alpha_mean: 1.0,
            alpha_sd: 0.3,
            sigma_shape: 3.0,
            sigma_rate: 2.0,
            u_variance: 0.1,
            delta_prior_mean: 0.0,
            delta_prior_sd: 10.0,
            omega_mean: 0.0,
            omega_sd: 10.0,
            prior_on_sd: false,
        }
    }
}

impl PriorSpec {
    /// Prior mean of the noise variance, `rate / (shape - 1)`.
    pub fn sigma_prior_mean(&self) -> f64 {
        self.sigma_rate / (self.sigma_shape - 1.0)
    }
}

/// Every unknown at one iteration of the chain.
///
/// `omega` and `sigma` carry one entry per exposure followed by the outcome
/// entry. `alpha` follows [`ModelSpec::edge_list`] order. Imputed cells are
/// laid out by [`MrDataset::missing_layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub x_imputed: Vec<f64>,
    pub y_imputed: Vec<f64>,
}

impl ParamState {
    /// Column names of the coefficient slice, in [`ParamState::coefficients`] order.
    pub fn parameter_names(spec: &ModelSpec) -> Vec<String> {
        let p = spec.n_exposures;
        let mut names = Vec::new();
        names.extend((1..=p).map(|j| format!("beta{j}")));
        names.extend((1..=spec.n_edges()).map(|e| format!("alpha{e}")));
        names.extend((1..=p).map(|j| format!("delta{j}")));
        names.extend((1..=p).map(|j| format!("omega{j}")));
        names.push("omegaY".into());
        names.extend((1..=p).map(|j| format!("sigma{j}")));
        names.push("sigmaY".into());
        names
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_coefficients());
        out.extend_from_slice(&self.beta);
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.delta);
        out.extend_from_slice(&self.omega);
        out.extend_from_slice(&self.sigma);
        out
    }

    pub fn n_coefficients(&self) -> usize {
        self.beta.len() + self.alpha.len() + self.delta.len() + self.omega.len() + self.sigma.len()
    }

    pub fn omega_y(&self) -> f64 {
        *self.omega.last().unwrap()
    }

    pub fn sigma_y(&self) -> f64 {
        *self.sigma.last().unwrap()
    }

    /// Checks lengths against the model and dataset.
    pub fn check_dims(&self, data: &MrDataset, spec: &ModelSpec) -> Result<MissingLayout> {
        let p = spec.n_exposures;
        let layout = data.missing_layout();
        let checks = [
            ("omega", self.omega.len(), p + 1),
            ("alpha", self.alpha.len(), spec.n_edges()),
            ("beta", self.beta.len(), p),
            ("delta", self.delta.len(), p),
            ("sigma", self.sigma.len(), p + 1),
            ("u", self.u.len(), data.n_rows()),
            ("x_imputed", self.x_imputed.len(), layout.n_missing_x_rows * p),
            ("y_imputed", self.y_imputed.len(), layout.n_missing_y),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if data.n_instruments() != spec.n_instruments || data.n_exposures() != p {
            return Err(Error::Dimension("dataset shape differs from model".into()));
        }
        Ok(layout)
    }

    /// Exposures of `row`, observed or imputed.
    pub fn completed_x(&self, data: &MrDataset, layout: &MissingLayout, row: usize) -> Vec<f64> {
        let p = data.n_exposures();
        match layout.x_slot[row] {
            Some(s) => self.x_imputed[s * p..(s + 1) * p].to_vec(),
            None => (0..p).map(|j| data.x_cell(row, j).unwrap()).collect(),
        }
    }

    /// Outcome of `row`, observed or imputed.
    pub fn completed_y(&self, data: &MrDataset, layout: &MissingLayout, row: usize) -> f64 {
        match layout.y_slot[row] {
            Some(s) => self.y_imputed[s],
            None => data.y(row).unwrap(),
        }
    }
}

/// Returns `spec` unchanged when the model topology and priors are usable.
pub fn validate_spec(spec: ModelSpec, priors: &PriorSpec) -> Result<ModelSpec> {
    let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
    if spec.n_instruments == 0 || spec.n_exposures == 0 {
        return bad("model needs at least one instrument and one exposure");
    }
    if spec.edges.len() != spec.n_instruments
        || spec.edges.iter().any(|r| r.len() != spec.n_exposures)
    {
        return bad("edge matrix shape differs from n_instruments x n_exposures");
    }
    if let Some(i) = spec.edges.iter().position(|r| !r.iter().any(|&e| e)) {
        return Err(Error::InvalidSpec(format!(
            "instrument without exposure edge (instrument {})",
            i + 1
        )));
    }
    if let Some(j) = (0..spec.n_exposures).find(|&j| !spec.edges.iter().any(|r| r[j])) {
        return Err(Error::InvalidSpec(format!(
            "exposure without instrument edge (exposure {})",
            j + 1
        )));
    }
    if !spec.delta4_fixed.is_finite() {
        return bad("delta4_fixed must be finite");
    }
    let sds = [
        ("beta_sd", priors.beta_sd),
        ("alpha_sd", priors.alpha_sd),
        ("delta_prior_sd", priors.delta_prior_sd),
        ("omega_sd", priors.omega_sd),
        ("u_variance", priors.u_variance),
        ("sigma_rate", priors.sigma_rate),
    ];
    for (name, v) in sds {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidSpec(format!("{name} must be positive and finite")));
        }
    }
    let means = [
        priors.beta_mean,
        priors.alpha_mean,
        priors.delta_prior_mean,
        priors.omega_mean,
    ];
    if means.iter().any(|m| !m.is_finite()) {
        return bad("prior means must be finite");
    }
    if !(priors.sigma_shape > 1.0) {
        return bad("prior variance mean undefined (sigma_shape must exceed 1)");
    }
    Ok(spec)
}

/// `omega_j + sum alpha z + delta_j u` for exposure `j`.
pub fn exposure_mean(row_z: &[f64], j: usize, u: f64, state: &ParamState, spec: &ModelSpec) -> f64 {
    exposure_mean_no_u(row_z, j, state, spec) + state.delta[j] * u
}

/// Exposure mean with the confounder term left out, as used when drawing
/// missing exposures from their instrument-only predictive.
pub fn exposure_mean_no_u(row_z: &[f64], j: usize, state: &ParamState, spec: &ModelSpec) -> f64 {
    let mut m = state.omega[j];
    let mut a = 0;
    for (i, row) in spec.edges.iter().enumerate() {
        for (jj, &on) in row.iter().enumerate() {
            if on {
                if jj == j {
                    m += state.alpha[a] * row_z[i];
                }
                a += 1;
            }
        }
    }
    m
}

/// `omega_Y + beta . x + delta_4 u`.
pub fn outcome_mean(row_x: &[f64], u: f64, state: &ParamState, spec: &ModelSpec) -> f64 {
    outcome_mean_no_u(row_x, state) + spec.delta4_fixed * u
}

pub fn outcome_mean_no_u(row_x: &[f64], state: &ParamState) -> f64 {
    state.omega_y() + state.beta.iter().zip(row_x).map(|(b, x)| b * x).sum::<f64>()
}

pub(crate) fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * PI * variance).ln() + r * r / variance)
}

pub(crate) fn log_inv_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// Complete-data log likelihood: exposure, outcome and confounder terms summed
/// over rows, with missing cells read from the state's imputed values.
pub fn log_likelihood(state: &ParamState, data: &MrDataset, spec: &ModelSpec, priors: &PriorSpec) -> Result<f64> {
    let layout = state.check_dims(data, spec)?;
    if let Some(s) = state.sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::NonFinite(format!("noise sd {s} is not positive")));
    }
    let p = spec.n_exposures;
    let var: Vec<f64> = state.sigma.iter().map(|s| s * s).collect();
    let mut total = 0.0;
    for r in 0..data.n_rows() {
        let z = data.z_row(r);
        let u = state.u[r];
        let x = state.completed_x(data, &layout, r);
        for j in 0..p {
            total += log_normal_pdf(x[j], exposure_mean(z, j, u, state, spec), var[j]);
        }
        let y = state.completed_y(data, &layout, r);
        total += log_normal_pdf(y, outcome_mean(&x, u, state, spec), var[p]);
        total += log_normal_pdf(u, 0.0, priors.u_variance);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("log likelihood".into()));
    }
    Ok(total)
}

/// Log prior over the coefficients and noise scales.
///
/// With `prior_on_sd` unset the inverse-gamma density is taken over the
/// variance, so the result is a density in `sigma^2`; otherwise in `sigma`.
pub fn log_prior(state: &ParamState, priors: &PriorSpec) -> Result<f64> {
    let mut total = 0.0;
    let b2 = priors.beta_sd.powi(2);
    let a2 = priors.alpha_sd.powi(2);
    let d2 = priors.delta_prior_sd.powi(2);
    let o2 = priors.omega_sd.powi(2);
    total += state.beta.iter().map(|&b| log_normal_pdf(b, priors.beta_mean, b2)).sum::<f64>();
    total += state.alpha.iter().map(|&a| log_normal_pdf(a, priors.alpha_mean, a2)).sum::<f64>();
    total += state.delta.iter().map(|&d| log_normal_pdf(d, priors.delta_prior_mean, d2)).sum::<f64>();
    total += state.omega.iter().map(|&o| log_normal_pdf(o, priors.omega_mean, o2)).sum::<f64>();
    for &s in &state.sigma {
        if !(s > 0.0) {
            return Err(Error::NonFinite(format!("noise sd {s} is not positive")));
        }
        let v = if priors.prior_on_sd { s } else { s * s };
        total += log_inv_gamma_pdf(v, priors.sigma_shape, priors.sigma_rate);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("log prior".into()));
    }
    Ok(total)
}

/// Complete-data log joint density: [`log_likelihood`] plus [`log_prior`].
pub fn log_joint(state: &ParamState, data: &MrDataset, spec: &ModelSpec, priors: &PriorSpec) -> Result<f64> {
    Ok(log_likelihood(state, data, spec, priors)? + log_prior(state, priors)?)
}
