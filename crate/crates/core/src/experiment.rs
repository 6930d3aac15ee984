//! Simulation study over overlap rate, instrument strength, confounding and
//! causal effect, comparing the Bayesian fit with the classic comparator.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classic::{classic_analyze, ClassicEstimate};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::{ModelSpec, PriorSpec};
use crate::sampler::{run_chain, summarize, ChainSettings, PosteriorSummary};
use crate::simulate::{partition, simulate_population, OverlapDesign, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub overlap_rates: Vec<f64>,
    pub alpha_levels: Vec<f64>,
    pub delta_levels: Vec<f64>,
    pub beta_levels: Vec<f64>,
    pub replicates: usize,
    pub chain: ChainSettings,
    pub base_seed: u64,
    pub spec: ModelSpec,
    pub priors: PriorSpec,
    pub study_size: usize,
    pub population_size: usize,
    pub genotype_maf: f64,
    pub noise_sd: f64,
    pub u_variance: f64,
    /// Fraction of failed replicates above which a cell is aborted.
    pub max_failure_rate: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            overlap_rates: vec![1.0, 0.8, 0.6, 0.4, 0.2, 0.0],
            alpha_levels: vec![0.5, 0.1],
            delta_levels: vec![1.0, 0.5, 0.1],
            beta_levels: vec![0.3, 0.0],
            replicates: 50,
            chain: ChainSettings::default(),
            base_seed: 0,
            spec: ModelSpec::default(),
            priors: PriorSpec::default(),
            study_size: 400,
            population_size: 1000,
            genotype_maf: 0.3,
            noise_sd: 1.0,
            u_variance: 0.1,
            max_failure_rate: 0.05,
        }
    }
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub overlap: f64,
    pub alpha: f64,
    pub delta: f64,
    pub beta: f64,
}

impl GridConfig {
    /// Cells in table order: overlap, alpha, delta and beta each descending.
    pub fn points(&self) -> Vec<ConfigPoint> {
        let desc = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        };
        let mut out = Vec::new();
        for &overlap in &desc(&self.overlap_rates) {
            for &alpha in &desc(&self.alpha_levels) {
                for &delta in &desc(&self.delta_levels) {
                    for &beta in &desc(&self.beta_levels) {
                        out.push(ConfigPoint {
                            overlap,
                            alpha,
                            delta,
                            beta,
                        });
                    }
                }
            }
        }
        out
    }

    /// Seed of replicate `index`; the same schedule is used in every cell.
    pub fn replicate_seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }

    pub fn sim_config(&self, point: &ConfigPoint) -> SimConfig {
        let mut cfg = SimConfig::with_levels(self.spec.clone(), point.alpha, point.delta, point.beta);
        cfg.true_sigma = vec![self.noise_sd; self.spec.n_exposures + 1];
        cfg.u_variance = self.u_variance;
        cfg.genotype_maf = self.genotype_maf;
        cfg.population_size = self.population_size;
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Bayesian,
    Classic,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bayesian => "BAYESIAN",
            Method::Classic => "CLASSIC",
        }
    }
}

/// Point estimates and 95% intervals of the causal effects from one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    pub point: Vec<f64>,
    pub interval: Vec<(f64, f64)>,
}

impl EffectEstimate {
    pub fn from_posterior(summary: &PosteriorSummary, n_exposures: usize) -> Self {
        let params: Vec<_> = (1..=n_exposures)
            .map(|j| summary.get(&format!("beta{j}")).expect("summary has every beta"))
            .collect();
        Self {
            point: params.iter().map(|p| p.mean).collect(),
            interval: params.iter().map(|p| (p.ci_low, p.ci_high)).collect(),
        }
    }

    pub fn from_classic(est: &ClassicEstimate) -> Self {
        Self {
            point: est.beta_hat.clone(),
            interval: est.ci95.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub bayesian: PosteriorSummary,
    pub classic: ClassicEstimate,
    pub n_complete: usize,
    pub n_exposure_only: usize,
    pub n_outcome_only: usize,
}

/// Simulates one population, splits it by the cell's overlap rate, fits the
/// sampler to A, B and C merged and the classic comparator to the split.
pub fn run_replicate(grid: &GridConfig, point: &ConfigPoint, rep_seed: u64) -> Result<ReplicateOutcome> {
    let sim = grid.sim_config(point);
    let h = simulate_population(&sim, rep_seed)?;
    let design = OverlapDesign::new(point.overlap, grid.study_size);
    let part = partition(&h, &design, rep_seed)?;
    let merged = part.merged()?;
    let chain = ChainSettings {
        seed: rep_seed,
        ..grid.chain.clone()
    };
    let draws = run_chain(&merged, &grid.spec, &grid.priors, &chain)?;
    let bayesian = summarize(&draws, 0.95)?;
    let classic = classic_analyze(&part.a, &part.b, &part.c, &grid.spec)?;
    Ok(ReplicateOutcome {
        seed: rep_seed,
        bayesian,
        classic,
        n_complete: part.a.n_rows(),
        n_exposure_only: part.b.n_rows(),
        n_outcome_only: part.c.n_rows(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub param: String,
    pub mean: f64,
    pub sd: f64,
    pub coverage: f64,
    /// Only defined when the true effect is non-zero.
    pub power: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub point: ConfigPoint,
    pub method: Method,
    pub params: Vec<ParamMetrics>,
    pub n_failed: usize,
}

impl MetricsRow {
    pub fn param(&self, name: &str) -> Option<&ParamMetrics> {
        self.params.iter().find(|p| p.param == name)
    }
}

/// Mean and sample sd of the point estimates, coverage of `true_beta`, and
/// power (interval excludes zero) when `true_beta` is non-zero.
pub fn aggregate(results: &[EffectEstimate], true_beta: &[f64]) -> Result<Vec<ParamMetrics>> {
    if results.is_empty() {
        return Err(Error::EmptyCell);
    }
    let n = results.len() as f64;
    Ok(true_beta
        .iter()
        .enumerate()
        .map(|(j, &truth)| {
            let pts: Vec<f64> = results.iter().map(|r| r.point[j]).collect();
            let mean = pts.iter().sum::<f64>() / n;
            let sd = if results.len() > 1 {
                (pts.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let covered = results
                .iter()
                .filter(|r| r.interval[j].0 <= truth && truth <= r.interval[j].1)
                .count();
            let power = (truth != 0.0).then(|| {
                let excl = results.iter().filter(|r| r.interval[j].0 > 0.0 || r.interval[j].1 < 0.0).count();
                excl as f64 / n
            });
            ParamMetrics {
                param: format!("beta{}", j + 1),
                mean,
                sd,
                coverage: covered as f64 / n,
                power,
            }
        })
        .collect())
}

fn cell_label(p: &ConfigPoint) -> String {
    format!("overlap={} alpha={} delta={} beta={}", p.overlap, p.alpha, p.delta, p.beta)
}

/// Runs every cell and replicate on the current rayon pool and aggregates
/// each cell into a Bayesian and a classic row, in table order.
pub fn run_grid(grid: &GridConfig) -> Result<Vec<MetricsRow>> {
    if grid.replicates == 0 {
        return Err(Error::InvalidSettings("replicates must be at least 1".into()));
    }
    let points = grid.points();
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|c| (0..grid.replicates).map(move |r| (c, r)))
        .collect();
    // Ordered collect keys results by (cell, replicate) whatever the schedule.
    let outcomes: Vec<Option<ReplicateOutcome>> = tasks
        .par_iter()
        .map(|&(c, r)| match run_replicate(grid, &points[c], grid.replicate_seed(r)) {
            Ok(o) => Some(o),
            Err(e) => {
                log::warn!("{} replicate {r} failed: {e}", cell_label(&points[c]));
                None
            }
        })
        .collect();

    let p = grid.spec.n_exposures;
    let mut rows = Vec::with_capacity(points.len() * 2);
    for (c, point) in points.iter().enumerate() {
        let cell = &outcomes[c * grid.replicates..(c + 1) * grid.replicates];
        let ok: Vec<&ReplicateOutcome> = cell.iter().flatten().collect();
        let failed = grid.replicates - ok.len();
        if failed as f64 > grid.max_failure_rate * grid.replicates as f64 {
            return Err(Error::CellAborted {
                cell: cell_label(point),
                failed,
                total: grid.replicates,
            });
        }
        let truth = vec![point.beta; p];
        let bayes: Vec<EffectEstimate> = ok.iter().map(|o| EffectEstimate::from_posterior(&o.bayesian, p)).collect();
        let classic: Vec<EffectEstimate> = ok.iter().map(|o| EffectEstimate::from_classic(&o.classic)).collect();
        rows.push(MetricsRow {
            point: *point,
            method: Method::Bayesian,
            params: aggregate(&bayes, &truth)?,
            n_failed: failed,
        });
        rows.push(MetricsRow {
            point: *point,
            method: Method::Classic,
            params: aggregate(&classic, &truth)?,
            n_failed: failed,
        });
    }
    Ok(rows)
}

/// Like [`run_grid`] on a dedicated pool of `jobs` workers.
pub fn run_grid_with_jobs(grid: &GridConfig, jobs: usize) -> Result<Vec<MetricsRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidSettings(format!("worker pool: {e}")))?;
    pool.install(|| run_grid(grid))
}

pub const RESULTS_HEADER: &str = "overlap,alpha,delta,beta_true,method,param,mean,sd,coverage,power,n_failed";

/// One CSV line per method and causal-effect parameter; `power` is empty for
/// null cells.
pub fn write_results(rows: &[MetricsRow], writer: impl Write) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "{RESULTS_HEADER}")?;
    for row in rows {
        for m in &row.params {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                row.point.overlap,
                row.point.alpha,
                row.point.delta,
                row.point.beta,
                row.method.as_str(),
                m.param,
                fmt_f64(m.mean),
                fmt_f64(m.sd),
                m.coverage,
                m.power.map(|v| v.to_string()).unwrap_or_default(),
                row.n_failed
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
