//! Oracles shared by the integration suites and the acceptance run. The
//! linear algebra here is written out by hand so it shares no code with the
//! library under test.
#![allow(dead_code)]

use ovmr_core::classic::stage_regressions;
use ovmr_core::model::log_joint;
use ovmr_core::sampler::conditionals::{block_values, full_conditional_log_density, set_block_values, Block};
use ovmr_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn normal_equations(design: &[Vec<f64>], resp: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    let m = design[0].len();
    let mut a = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (i, row) in design.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        for c in 0..m {
            b[c] += w * row[c] * resp[i];
            for d in 0..m {
                a[c][d] += w * row[c] * row[d];
            }
        }
    }
    solve(a, b)
}

/// A fixed 10-row complete dataset for the default three-exposure model.
pub fn fixed_ten_rows() -> MrDataset {
    let rows: [([f64; 3], [f64; 3], f64); 10] = [
        ([0.0, 1.0, 2.0], [0.31, 1.12, 2.40], 1.05),
        ([1.0, 0.0, 1.0], [1.20, -0.35, 0.88], 0.52),
        ([2.0, 2.0, 0.0], [1.71, 1.64, 1.02], 1.43),
        ([0.0, 0.0, 1.0], [-0.42, 0.19, 0.77], -0.10),
        ([1.0, 2.0, 2.0], [0.95, 2.31, 3.12], 1.98),
        ([2.0, 1.0, 0.0], [2.20, 0.74, 0.55], 0.87),
        ([0.0, 2.0, 1.0], [0.12, 1.88, 1.91], 1.21),
        ([1.0, 1.0, 1.0], [0.66, 0.93, 1.37], 0.79),
        ([2.0, 0.0, 2.0], [1.84, 0.05, 1.76], 1.12),
        ([1.0, 2.0, 0.0], [1.03, 2.02, 1.15], 1.33),
    ];
    let mut d = MrDataset::empty(3, 3);
    for (z, x, y) in rows {
        d.push_row(&z, Some(&x), Some(y)).unwrap();
    }
    d
}

/// Two-stage least squares composed from two independent normal-equation
/// solves; returns the causal coefficients only.
pub fn tsls_oracle(data: &MrDataset) -> Vec<f64> {
    let (n, k, p) = (data.n_rows(), data.n_instruments(), data.n_exposures());
    let design: Vec<Vec<f64>> = (0..n)
        .map(|r| std::iter::once(1.0).chain(data.z_row(r).iter().copied()).collect())
        .collect();
    let mut fitted = vec![vec![1.0; p + 1]; n];
    for j in 0..p {
        let xj: Vec<f64> = (0..n).map(|r| data.x_cell(r, j).unwrap()).collect();
        let pi = normal_equations(&design, &xj, None);
        for r in 0..n {
            fitted[r][j + 1] = (0..=k).map(|c| design[r][c] * pi[c]).sum();
        }
    }
    let y: Vec<f64> = (0..n).map(|r| data.y(r).unwrap()).collect();
    normal_equations(&fitted, &y, None)[1..].to_vec()
}

/// Largest gap between the library's 2SLS and the oracle on the fixed rows.
pub fn tsls_gap() -> f64 {
    let data = fixed_ten_rows();
    let est = two_stage_least_squares(&data, &ModelSpec::default()).unwrap();
    let oracle = tsls_oracle(&data);
    est.beta_hat.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Gap between one-instrument IVW and the Wald ratio over a few random
/// summary statistics.
pub fn wald_gap() -> f64 {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let gx = 0.2 + r.random::<f64>();
        let gy = gauss(&mut r);
        let stats = SummaryStats {
            exposure_beta: vec![vec![gx]],
            exposure_se: vec![vec![0.05]],
            outcome_beta: vec![gy],
            outcome_se: vec![0.1 + r.random::<f64>()],
            edges: vec![vec![true]],
        };
        let est = multivariable_ivw(&stats).unwrap();
        worst = worst.max((est.beta_hat[0] - gy / gx).abs());
    }
    worst
}

pub fn random_stats(seed: u64) -> SummaryStats {
    let mut r = rng(seed);
    let mut exposure_beta = vec![vec![0.0; 3]; 3];
    for (i, row) in exposure_beta.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.3 * gauss(&mut r) + if i == j { 1.0 } else { 0.0 };
        }
    }
    SummaryStats {
        exposure_beta,
        exposure_se: vec![vec![0.05; 3]; 3],
        outcome_beta: (0..3).map(|_| gauss(&mut r)).collect(),
        outcome_se: (0..3).map(|_| 0.05 + 0.2 * r.random::<f64>()).collect(),
        edges: vec![vec![true; 3]; 3],
    }
}

/// Weighted normal-equations oracle for multivariable IVW.
pub fn wls_oracle(stats: &SummaryStats) -> Vec<f64> {
    let w: Vec<f64> = stats.outcome_se.iter().map(|s| 1.0 / (s * s)).collect();
    normal_equations(&stats.exposure_beta, &stats.outcome_beta, Some(&w))
}

pub fn wls_gap() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let stats = random_stats(seed);
        let est = multivariable_ivw(&stats).unwrap();
        for (a, b) in est.beta_hat.iter().zip(wls_oracle(&stats)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// `(recoded, original)` IVW estimates on one simulated B/C split, with
/// instrument `scaled` recoded as `2z` on the first side.
pub fn ivw_rescaled(seed: u64, scaled: usize) -> (Vec<f64>, Vec<f64>) {
    let spec = ModelSpec::default();
    let cfg = SimConfig::with_levels(spec.clone(), 0.5, 1.0, 0.3);
    let h = simulate_population(&cfg, seed).unwrap();
    let part = partition(&h, &OverlapDesign::new(0.0, 400), seed).unwrap();
    let rescale = |d: &MrDataset| {
        let mut out = MrDataset::empty(d.n_instruments(), d.n_exposures());
        for r in 0..d.n_rows() {
            let mut z = d.z_row(r).to_vec();
            z[scaled] *= 2.0;
            out.push_row(&z, d.x_row(r).as_deref(), d.y(r)).unwrap();
        }
        out
    };
    let base = multivariable_ivw(&stage_regressions(&part.b, &part.c, &spec).unwrap()).unwrap();
    let scaled = multivariable_ivw(&stage_regressions(&rescale(&part.b), &rescale(&part.c), &spec).unwrap()).unwrap();
    (scaled.beta_hat, base.beta_hat)
}

/// Default model with complete, exposure-only and outcome-only rows.
pub fn mixed_dataset(seed: u64) -> MrDataset {
    let mut r = rng(seed);
    let mut d = MrDataset::empty(3, 3);
    for i in 0..12 {
        let z: Vec<f64> = (0..3).map(|_| r.random_range(0..3) as f64).collect();
        let x: Vec<f64> = (0..3).map(|_| gauss(&mut r)).collect();
        let y = gauss(&mut r);
        match i % 3 {
            0 => d.push_row(&z, Some(&x), Some(y)),
            1 => d.push_row(&z, Some(&x), None),
            _ => d.push_row(&z, None, Some(y)),
        }
        .unwrap();
    }
    d
}

fn draws(r: &mut impl Rng, k: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..k).map(|_| mean + sd * gauss(r)).collect()
}

pub fn random_state(data: &MrDataset, spec: &ModelSpec, r: &mut impl Rng) -> ParamState {
    let p = spec.n_exposures;
    let layout = data.missing_layout();
    ParamState {
        omega: draws(r, p + 1, 0.0, 1.0),
        alpha: draws(r, spec.n_edges(), 0.5, 0.5),
        beta: draws(r, p, 0.0, 0.5),
        delta: draws(r, p, 0.0, 1.0),
        sigma: draws(r, p + 1, 0.0, 0.5).into_iter().map(f64::exp).collect(),
        u: draws(r, data.n_rows(), 0.0, 0.3),
        x_imputed: draws(r, layout.n_missing_x_rows * p, 0.0, 1.0),
        y_imputed: draws(r, layout.n_missing_y, 0.0, 1.0),
    }
}

pub fn all_blocks(data: &MrDataset, spec: &ModelSpec) -> Vec<Block> {
    let p = spec.n_exposures;
    let mut blocks: Vec<Block> = (0..data.n_rows()).map(Block::Latent).collect();
    blocks.extend((0..p).map(Block::Exposure));
    blocks.push(Block::Outcome);
    blocks.extend((0..=p).map(Block::Variance));
    for r in 0..data.n_rows() {
        match data.pattern(r) {
            RowPattern::ExposureOnly => blocks.push(Block::MissingOutcome(r)),
            RowPattern::OutcomeOnly => blocks.push(Block::MissingExposures(r)),
            RowPattern::Complete => {}
        }
    }
    blocks
}

/// For one random state and every block, the largest gap between the
/// conditional and joint log-density differences after moving that block.
pub fn conditional_joint_gap(seed: u64) -> f64 {
    let spec = ModelSpec::default();
    let priors = PriorSpec::default();
    let data = mixed_dataset(seed);
    let mut r = rng(seed ^ 0x5eed);
    let base = random_state(&data, &spec, &mut r);
    let j0 = log_joint(&base, &data, &spec, &priors).unwrap();
    let mut worst: f64 = 0.0;
    for block in all_blocks(&data, &spec) {
        let c0 = full_conditional_log_density(block, &base, &data, &spec, &priors).unwrap();
        let mut moved = base.clone();
        let vals: Vec<f64> = block_values(block, &base, &data, &spec)
            .into_iter()
            .map(|v| match block {
                Block::Variance(_) => v * (0.5 * gauss(&mut r)).exp(),
                _ => v + 0.7 * gauss(&mut r),
            })
            .collect();
        set_block_values(block, &mut moved, &data, &spec, &vals);
        let c1 = full_conditional_log_density(block, &moved, &data, &spec, &priors).unwrap();
        let j1 = log_joint(&moved, &data, &spec, &priors).unwrap();
        worst = worst.max(((c1 - c0) - (j1 - j0)).abs());
    }
    worst
}

/// One instrument, one exposure, 20 complete rows with the confounder known.
pub struct TinyInstance {
    pub data: MrDataset,
    pub state: ParamState,
    pub residual: Vec<f64>,
    pub x: Vec<f64>,
}

pub fn tiny_instance() -> TinyInstance {
    let mut r = rng(2024);
    let mut data = MrDataset::empty(1, 1);
    let (mut xs, mut us, mut res) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..20 {
        let z = r.random_range(0..3) as f64;
        let u = 0.1f64.sqrt() * gauss(&mut r);
        let x = 0.5 * z + u + gauss(&mut r);
        let y = 0.3 * x + u + gauss(&mut r);
        data.push_row(&[z], Some(&[x]), Some(y)).unwrap();
        xs.push(x);
        us.push(u);
        res.push(y - u);
    }
    let state = ParamState {
        omega: vec![0.0, 0.0],
        alpha: vec![0.5],
        beta: vec![0.0],
        delta: vec![1.0],
        sigma: vec![1.0, 1.0],
        u: us,
        x_imputed: vec![],
        y_imputed: vec![],
    };
    TinyInstance {
        data,
        state,
        residual: res,
        x: xs,
    }
}

/// Posterior mean of beta on a 2-D grid over `(beta, sigma_Y^2)`, with the
/// default normal prior on beta and inverse-gamma prior on the variance.
pub fn tiny_grid_mean(t: &TinyInstance, priors: &PriorSpec) -> f64 {
    let (nb, ns) = (1201, 1200);
    let (b_lo, b_hi) = (-3.0, 3.6);
    let s_hi = 6.0;
    let mut logs = Vec::with_capacity(nb * ns);
    let mut grid_b = Vec::with_capacity(nb * ns);
    for ib in 0..nb {
        let b = b_lo + (b_hi - b_lo) * ib as f64 / (nb - 1) as f64;
        let ssr: f64 = t.residual.iter().zip(&t.x).map(|(y, x)| (y - b * x).powi(2)).sum();
        let lb = -0.5 * (b - priors.beta_mean).powi(2) / priors.beta_sd.powi(2);
        for is in 1..=ns {
            let s2 = s_hi * is as f64 / ns as f64;
            let n = t.x.len() as f64;
            let ll = -0.5 * n * s2.ln() - 0.5 * ssr / s2;
            let lp = -(priors.sigma_shape + 1.0) * s2.ln() - priors.sigma_rate / s2;
            logs.push(lb + ll + lp);
            grid_b.push(b);
        }
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut acc) = (0.0, 0.0);
    for (l, b) in logs.iter().zip(&grid_b) {
        let w = (l - m).exp();
        z += w;
        acc += w * b;
    }
    acc / z
}

/// Sampler posterior mean of beta on the tiny instance with everything but
/// beta and sigma_Y held fixed.
pub fn tiny_sampler_mean(t: &TinyInstance, priors: &PriorSpec, seed: u64) -> f64 {
    let spec = ModelSpec::single(1.0);
    let mut frozen: Vec<String> = ParamState::parameter_names(&spec)
        .into_iter()
        .filter(|n| n != "beta1" && n != "sigmaY")
        .collect();
    frozen.push("u".into());
    let settings = ChainSettings {
        n_iterations: 40_000,
        n_warmup: 500,
        seed,
        frozen,
        ..ChainSettings::default()
    };
    let draws = ovmr_core::sampler::run_chain_from(t.state.clone(), &t.data, &spec, priors, &settings).unwrap();
    let b = draws.column("beta1").unwrap();
    b.iter().sum::<f64>() / b.len() as f64
}
