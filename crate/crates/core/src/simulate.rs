//! Synthetic populations drawn from the structural model, and their split into
//! the complete (A), exposure-only (B) and outcome-only (C) studies.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{MrDataset, RowPattern};
use crate::error::{Error, Result};
use crate::model::{validate_spec, ModelSpec, PriorSpec};
use crate::rng::{streams, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub spec: ModelSpec,
    /// One value per edge, in [`ModelSpec::edge_list`] order.
    pub true_alpha: Vec<f64>,
    pub true_beta: Vec<f64>,
    pub true_delta: Vec<f64>,
    /// Exposure noise sds followed by the outcome noise sd.
    pub true_sigma: Vec<f64>,
    /// Exposure intercepts followed by the outcome intercept.
    pub true_omega: Vec<f64>,
    pub u_variance: f64,
    pub genotype_maf: f64,
    pub population_size: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::with_levels(ModelSpec::default(), 0.5, 1.0, 0.3)
    }
}

impl SimConfig {
    /// Every alpha, delta and beta set to one common level; unit noise and
    /// zero intercepts.
    pub fn with_levels(spec: ModelSpec, alpha: f64, delta: f64, beta: f64) -> Self {
        let p = spec.n_exposures;
        Self {
            true_alpha: vec![alpha; spec.n_edges()],
            true_beta: vec![beta; p],
            true_delta: vec![delta; p],
            true_sigma: vec![1.0; p + 1],
            true_omega: vec![0.0; p + 1],
            u_variance: 0.1,
            genotype_maf: 0.3,
            population_size: 1000,
            spec,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_spec(self.spec.clone(), &PriorSpec::default())?;
        let p = self.spec.n_exposures;
        let lens = [
            ("true_alpha", self.true_alpha.len(), self.spec.n_edges()),
            ("true_beta", self.true_beta.len(), p),
            ("true_delta", self.true_delta.len(), p),
            ("true_sigma", self.true_sigma.len(), p + 1),
            ("true_omega", self.true_omega.len(), p + 1),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::InvalidSpec(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if self.true_sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidSpec("true_sigma entries must be positive".into()));
        }
        if !(self.genotype_maf > 0.0 && self.genotype_maf < 1.0) {
            return Err(Error::InvalidSpec("genotype_maf must lie in (0, 1)".into()));
        }
        if !(self.u_variance >= 0.0) {
            return Err(Error::InvalidSpec("u_variance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Study sizes for one overlap rate. `n_a` individuals are shared by the
/// exposure and outcome studies; each study has `study_size` individuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "OverlapDesignSpec")]
pub struct OverlapDesign {
    pub overlap_rate: f64,
    pub study_size: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub n_c: usize,
}

#[derive(Deserialize)]
struct OverlapDesignSpec {
    overlap_rate: f64,
    #[serde(default = "default_study_size")]
    study_size: usize,
}

fn default_study_size() -> usize {
    400
}

impl From<OverlapDesignSpec> for OverlapDesign {
    fn from(s: OverlapDesignSpec) -> Self {
        OverlapDesign::new(s.overlap_rate, s.study_size)
    }
}

impl OverlapDesign {
    /// `n_a = round_half_up(rate * study_size)` and `n_b = n_c = study_size - n_a`.
    /// Rates outside `[0, 1]` are clamped.
    pub fn new(overlap_rate: f64, study_size: usize) -> Self {
        let rate = overlap_rate.clamp(0.0, 1.0);
        // Products like 0.6 * 400 land a hair off the integer.
        let raw = rate * study_size as f64;
        let n_a = ((raw * 1e9).round() / 1e9 + 0.5).floor() as usize;
        let n_a = n_a.min(study_size);
        Self {
            overlap_rate: rate,
            study_size,
            n_a,
            n_b: study_size - n_a,
            n_c: study_size - n_a,
        }
    }

    pub fn total(&self) -> usize {
        self.n_a + self.n_b + self.n_c
    }
}

/// Draws the full population H; every row is complete. Instruments are
/// independent Binomial(2, maf) genotype counts.
pub fn simulate_population(config: &SimConfig, seed: u64) -> Result<MrDataset> {
    simulate_population_with_latent(config, seed).map(|(h, _)| h)
}

/// Like [`simulate_population`], also returning each row's confounder draw.
pub fn simulate_population_with_latent(config: &SimConfig, seed: u64) -> Result<(MrDataset, Vec<f64>)> {
    config.validate()?;
    let spec = &config.spec;
    let (k, p) = (spec.n_instruments, spec.n_exposures);
    let mut rng = RngStream::new(seed, streams::POPULATION).rng();
    let genotype = Binomial::new(2, config.genotype_maf)
        .map_err(|e| Error::InvalidSpec(format!("genotype distribution: {e}")))?;
    let u_sd = config.u_variance.sqrt();
    let inputs: Vec<Vec<(usize, usize)>> = (0..p).map(|j| spec.exposure_inputs(j)).collect();

    let mut out = MrDataset::empty(k, p);
    let mut latent = Vec::with_capacity(config.population_size);
    let mut z = vec![0.0; k];
    let mut x = vec![0.0; p];
    for _ in 0..config.population_size {
        for zi in z.iter_mut() {
            *zi = genotype.sample(&mut rng) as f64;
        }
        let u = u_sd * rng.sample::<f64, _>(StandardNormal);
        for j in 0..p {
            let mut m = config.true_omega[j] + config.true_delta[j] * u;
            for &(a, i) in &inputs[j] {
                m += config.true_alpha[a] * z[i];
            }
            x[j] = m + config.true_sigma[j] * rng.sample::<f64, _>(StandardNormal);
        }
        let my = config.true_omega[p]
            + config.true_beta.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>()
            + spec.delta4_fixed * u;
        let y = my + config.true_sigma[p] * rng.sample::<f64, _>(StandardNormal);
        out.push_row(&z, Some(&x), Some(y))?;
        latent.push(u);
    }
    Ok((out, latent))
}

/// The three disjoint studies carved out of one population, with the source
/// row indices each was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub a: MrDataset,
    pub b: MrDataset,
    pub c: MrDataset,
    pub a_rows: Vec<usize>,
    pub b_rows: Vec<usize>,
    pub c_rows: Vec<usize>,
}

impl Partition {
    /// A, B and C stacked in that order, as fitted by the Bayesian sampler.
    pub fn merged(&self) -> Result<MrDataset> {
        MrDataset::concat(&[&self.a, &self.b, &self.c])
    }
}

/// Samples A, then B from the remainder, then C from what is left, all
/// uniformly without replacement. B loses its outcome and C its exposures.
pub fn partition(h: &MrDataset, design: &OverlapDesign, seed: u64) -> Result<Partition> {
    if h.patterns().iter().any(|&p| p != RowPattern::Complete) {
        return Err(Error::EmptyInput("population must be fully observed".into()));
    }
    let needed = design.total();
    if needed > h.n_rows() {
        return Err(Error::InsufficientPopulation {
            needed,
            available: h.n_rows(),
        });
    }
    let mut rng = RngStream::new(seed, streams::PARTITION).rng();
    // A uniform ordered sample of `needed` distinct rows; consecutive blocks of
    // it are successive draws without replacement from the shrinking remainder.
    let picked = index::sample(&mut rng, h.n_rows(), needed).into_vec();
    let a_rows = picked[..design.n_a].to_vec();
    let b_rows = picked[design.n_a..design.n_a + design.n_b].to_vec();
    let c_rows = picked[design.n_a + design.n_b..].to_vec();
    debug_assert!(disjoint(&a_rows, &b_rows, &c_rows));
    Ok(Partition {
        a: h.select(&a_rows, RowPattern::Complete)?,
        b: h.select(&b_rows, RowPattern::ExposureOnly)?,
        c: h.select(&c_rows, RowPattern::OutcomeOnly)?,
        a_rows,
        b_rows,
        c_rows,
    })
}

fn disjoint(a: &[usize], b: &[usize], c: &[usize]) -> bool {
    let mut all: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
    let n = all.len();
    all.sort_unstable();
    all.dedup();
    all.len() == n
}
