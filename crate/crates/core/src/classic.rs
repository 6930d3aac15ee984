//! Frequentist comparators: multivariable two-stage least squares on
//! one-sample data and fixed-effect multivariable inverse-variance weighting
//! on per-instrument summary statistics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MrDataset;
use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Normal quantile used for the Wald intervals.
pub const WALD_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassicMethod {
    Tsls,
    Ivw,
}

impl ClassicMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassicMethod::Tsls => "TSLS",
            ClassicMethod::Ivw => "IVW",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicEstimate {
    pub method: ClassicMethod,
    pub beta_hat: Vec<f64>,
    pub se: Vec<f64>,
    /// Wald intervals `beta_hat +/- 1.96 se`.
    pub ci95: Vec<(f64, f64)>,
}

impl ClassicEstimate {
    fn new(method: ClassicMethod, beta_hat: Vec<f64>, se: Vec<f64>) -> Result<Self> {
        if se.iter().any(|s| !(*s > 0.0 && s.is_finite())) || beta_hat.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite(format!("{} estimate has a degenerate standard error", method.as_str())));
        }
        let ci95 = beta_hat.iter().zip(&se).map(|(b, s)| (b - WALD_Z * s, b + WALD_Z * s)).collect();
        Ok(Self {
            method,
            beta_hat,
            se,
            ci95,
        })
    }
}

/// Per-instrument marginal associations. Row `i` of the exposure matrices
/// holds instrument `i`'s slope on each exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub exposure_beta: Vec<Vec<f64>>,
    pub exposure_se: Vec<Vec<f64>>,
    pub outcome_beta: Vec<f64>,
    pub outcome_se: Vec<f64>,
    /// Which exposure associations enter the weighted regression.
    pub edges: Vec<Vec<bool>>,
}

fn singular(what: &str) -> Error {
    Error::SingularDesign(what.to_string())
}

/// Fails when `m` has singular values below `1e-10` of its largest.
fn check_rank(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min / max < 1e-10 {
        return Err(singular(what));
    }
    Ok(())
}

fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let chol = a.cholesky().ok_or_else(|| singular(what))?;
    Ok((chol.solve(b), chol.inverse()))
}

/// Regresses each exposure on all instruments plus an intercept, then the
/// outcome on the fitted exposures plus an intercept. The residual variance
/// uses the observed exposures.
pub fn two_stage_least_squares(data: &MrDataset, spec: &ModelSpec) -> Result<ClassicEstimate> {
    let (n, k, p) = (data.n_rows(), spec.n_instruments, spec.n_exposures);
    if data.count(crate::data::RowPattern::Complete) != n {
        return Err(Error::EmptyInput("two-stage least squares needs complete rows only".into()));
    }
    if n <= k + p + 1 {
        return Err(Error::EmptyInput(format!("{n} rows is too few for {k} instruments and {p} exposures")));
    }
    let zt = DMatrix::from_fn(n, k + 1, |r, c| if c == 0 { 1.0 } else { data.z_row(r)[c - 1] });
    let x = DMatrix::from_fn(n, p, |r, j| data.x_cell(r, j).unwrap());
    let y = DMatrix::from_fn(n, 1, |r, _| data.y(r).unwrap());
    check_rank(&zt, "instrument design is rank-deficient")?;

    let (pi, _) = solve_spd(zt.transpose() * &zt, &(zt.transpose() * &x), "instrument design")?;
    let x_hat = &zt * pi;
    let w = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { x_hat[(r, c - 1)] });
    check_rank(&w, "fitted exposures are collinear")?;
    let (coef, wtw_inv) = solve_spd(w.transpose() * &w, &(w.transpose() * &y), "second stage")?;

    let w_obs = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
    let resid = &y - &w_obs * &coef;
    let sigma2 = resid.norm_squared() / (n - p - 1) as f64;
    let beta_hat = (1..=p).map(|j| coef[(j, 0)]).collect();
    let se = (1..=p).map(|j| (sigma2 * wtw_inv[(j, j)]).sqrt()).collect();
    ClassicEstimate::new(ClassicMethod::Tsls, beta_hat, se)
}

/// Slope and standard error of `resp` on `reg` with an intercept.
fn simple_regression(reg: &[f64], resp: &[f64]) -> Result<(f64, f64)> {
    let n = reg.len() as f64;
    let mz = reg.iter().sum::<f64>() / n;
    let mr = resp.iter().sum::<f64>() / n;
    let szz: f64 = reg.iter().map(|z| (z - mz).powi(2)).sum();
    let scale = reg.iter().map(|z| z.abs()).fold(0.0, f64::max).max(1.0);
    if szz <= 1e-12 * scale * scale * n {
        return Err(singular("instrument has no variation"));
    }
    let szr: f64 = reg.iter().zip(resp).map(|(z, r)| (z - mz) * (r - mr)).sum();
    let slope = szr / szz;
    let intercept = mr - slope * mz;
    let ssr: f64 = reg.iter().zip(resp).map(|(z, r)| (r - intercept - slope * z).powi(2)).sum();
    Ok((slope, (ssr / (n - 2.0) / szz).sqrt()))
}

/// Per-instrument simple regressions: every exposure in `exposures` on each
/// instrument singly, and the outcome in `outcomes` on each instrument singly.
pub fn stage_regressions(exposures: &MrDataset, outcomes: &MrDataset, spec: &ModelSpec) -> Result<SummaryStats> {
    let (k, p) = (spec.n_instruments, spec.n_exposures);
    let x_rows: Vec<usize> = (0..exposures.n_rows()).filter(|&r| exposures.pattern(r).has_exposures()).collect();
    let y_rows: Vec<usize> = (0..outcomes.n_rows()).filter(|&r| outcomes.pattern(r).has_outcome()).collect();
    if x_rows.len() < 3 || y_rows.len() < 3 {
        return Err(Error::EmptyInput("summary regressions need at least 3 rows per study".into()));
    }
    let mut exposure_beta = vec![vec![0.0; p]; k];
    let mut exposure_se = vec![vec![0.0; p]; k];
    let mut outcome_beta = vec![0.0; k];
    let mut outcome_se = vec![0.0; k];
    for i in 0..k {
        let z: Vec<f64> = x_rows.iter().map(|&r| exposures.z_row(r)[i]).collect();
        for j in 0..p {
            let x: Vec<f64> = x_rows.iter().map(|&r| exposures.x_cell(r, j).unwrap()).collect();
            let (b, s) = simple_regression(&z, &x)?;
            exposure_beta[i][j] = b;
            exposure_se[i][j] = s;
        }
        let z: Vec<f64> = y_rows.iter().map(|&r| outcomes.z_row(r)[i]).collect();
        let y: Vec<f64> = y_rows.iter().map(|&r| outcomes.y(r).unwrap()).collect();
        let (b, s) = simple_regression(&z, &y)?;
        outcome_beta[i] = b;
        outcome_se[i] = s;
    }
    Ok(SummaryStats {
        exposure_beta,
        exposure_se,
        outcome_beta,
        outcome_se,
        edges: spec.edges.clone(),
    })
}

/// Weighted least squares of instrument-outcome slopes on instrument-exposure
/// slopes, no intercept, weights `1 / se(outcome slope)^2`. Exposure slopes
/// off the model's edges are treated as zero.
pub fn multivariable_ivw(stats: &SummaryStats) -> Result<ClassicEstimate> {
    let k = stats.outcome_beta.len();
    let p = stats.exposure_beta.first().map_or(0, Vec::len);
    if k < p || p == 0 {
        return Err(Error::InvalidSpec(format!("{k} instruments cannot identify {p} exposures")));
    }
    if stats.outcome_se.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::NonFinite("outcome standard errors must be positive".into()));
    }
    let g = DMatrix::from_fn(k, p, |i, j| if stats.edges[i][j] { stats.exposure_beta[i][j] } else { 0.0 });
    check_rank(&g, "exposure associations are rank-deficient")?;
    let w = DVector::from_iterator(k, stats.outcome_se.iter().map(|s| 1.0 / (s * s)));
    let gamma = DMatrix::from_column_slice(k, 1, &stats.outcome_beta);
    let gw = DMatrix::from_fn(k, p, |i, j| g[(i, j)] * w[i]);
    let (beta, cov) = solve_spd(gw.transpose() * &g, &(gw.transpose() * &gamma), "weighted normal equations")?;
    let beta_hat = (0..p).map(|j| beta[(j, 0)]).collect();
    let se = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    ClassicEstimate::new(ClassicMethod::Ivw, beta_hat, se)
}

/// Chooses the comparator for a study split: 2SLS on A when there are no
/// separate studies, otherwise IVW on B (exposures) and C (outcome) with the
/// overlapping individuals in A left out.
pub fn classic_analyze(a: &MrDataset, b: &MrDataset, c: &MrDataset, spec: &ModelSpec) -> Result<ClassicEstimate> {
    match (b.is_empty(), c.is_empty()) {
        (true, true) if !a.is_empty() => two_stage_least_squares(a, spec),
        (false, false) => multivariable_ivw(&stage_regressions(b, c, spec)?),
        _ => Err(Error::EmptyInput(
            "need either one-sample data or both an exposure and an outcome study".into(),
        )),
    }
}
