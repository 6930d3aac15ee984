//! Metropolis move on the confounder loadings and noise scales with the
//! confounders and every regression coefficient integrated out.
//!
//! Given the completed data, the residual vector of each row is
//! `N(0, D + v l l')` with `D = diag(sigma^2)` and `l = (delta, delta_4)`,
//! and the coefficients enter linearly with normal priors, so the marginal
//! posterior of `(delta, sigma)` is available in closed form. After the
//! Metropolis steps the coefficients and then the confounders are redrawn
//! from their exact conditionals, which keeps the joint posterior invariant.
//!
//! Without this move the chain crawls along the ridge where `delta_j u`
//! trades off against `sigma_j`, because each confounder is barely
//! informed by its own row.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::adaptive::AdaptiveRw;
use super::conditionals::{self, Completed, Ctx};
use super::reparam;
use super::normal;
use crate::error::{Error, Result};
use crate::model::ParamState;

pub(crate) struct CollapsedMove {
    /// Per equation: indices into the cross-product vector `(1, z, x, y)`.
    feats: Vec<Vec<usize>>,
    targets: Vec<usize>,
    offsets: Vec<usize>,
    prior_prec: Vec<f64>,
    prior_lin: Vec<f64>,
    gram: DMatrix<f64>,
    pub proposal: AdaptiveRw,
}

struct Marginal {
    log_density: f64,
    chol: Cholesky<f64, Dyn>,
    linear: DVector<f64>,
}

impl CollapsedMove {
    pub fn new(ctx: &Ctx) -> Self {
        let (k, p) = (ctx.spec.n_instruments, ctx.p());
        let pr = ctx.priors;
        let mut feats = Vec::with_capacity(p + 1);
        let mut targets = Vec::with_capacity(p + 1);
        let mut offsets = Vec::with_capacity(p + 1);
        let mut prior_prec = Vec::new();
        let mut prior_lin = Vec::new();
        let mut push_prior = |mean: f64, sd: f64| {
            prior_prec.push(1.0 / (sd * sd));
            prior_lin.push(mean / (sd * sd));
        };
        let mut off = 0;
        for j in 0..p {
            let mut f = vec![0];
            push_prior(pr.omega_mean, pr.omega_sd);
            for &(_, i) in &ctx.inputs[j] {
                f.push(1 + i);
                push_prior(pr.alpha_mean, pr.alpha_sd);
            }
            offsets.push(off);
            off += f.len();
            feats.push(f);
            targets.push(1 + k + j);
        }
        let mut f = vec![0];
        push_prior(pr.omega_mean, pr.omega_sd);
        for j in 0..p {
            f.push(1 + k + j);
            push_prior(pr.beta_mean, pr.beta_sd);
        }
        offsets.push(off);
        feats.push(f);
        targets.push(1 + k + p);

        let n = ctx.n().max(1) as f64;
        let initial: Vec<f64> = (0..2 * p + 1).map(|a| if a < p { 2.0 } else { 0.5 } / n.sqrt()).collect();
        Self {
            feats,
            targets,
            offsets,
            prior_prec,
            prior_lin,
            gram: DMatrix::zeros(k + p + 2, k + p + 2),
            proposal: AdaptiveRw::new(&initial),
        }
    }

    fn n_coef(&self) -> usize {
        self.prior_prec.len()
    }

    fn refresh_gram(&mut self, ctx: &Ctx, comp: &Completed) {
        let (k, p) = (ctx.spec.n_instruments, ctx.p());
        let m = k + p + 2;
        let mut g = vec![0.0; m];
        let mut acc = vec![0.0; m * m];
        for r in 0..ctx.n() {
            g[0] = 1.0;
            g[1..=k].copy_from_slice(ctx.data.z_row(r));
            g[1 + k..1 + k + p].copy_from_slice(comp.x_row(r, p));
            g[m - 1] = comp.y[r];
            for a in 0..m {
                let ga = g[a];
                for c in a..m {
                    acc[a * m + c] += ga * g[c];
                }
            }
        }
        for a in 0..m {
            for c in a..m {
                self.gram[(a, c)] = acc[a * m + c];
                self.gram[(c, a)] = acc[a * m + c];
            }
        }
    }

    /// Log marginal posterior of `theta = (delta, log sigma)` up to a
    /// constant, with the coefficient conditional it implies.
    fn marginal(&self, ctx: &Ctx, theta: &[f64]) -> Result<Marginal> {
        let p = ctx.p();
        let v = ctx.priors.u_variance;
        let e = p + 1;
        let mut load = theta[..p].to_vec();
        load.push(ctx.spec.delta4_fixed);
        let s2: Vec<f64> = theta[p..].iter().map(|t| (2.0 * t).exp()).collect();
        let a: f64 = load.iter().zip(&s2).map(|(l, s)| l * l / s).sum();
        let kappa = v / (1.0 + v * a);
        let mut omega = DMatrix::zeros(e, e);
        for i in 0..e {
            for j in 0..e {
                omega[(i, j)] = -kappa * load[i] * load[j] / (s2[i] * s2[j]);
            }
            omega[(i, i)] += 1.0 / s2[i];
        }
        let log_det_sigma: f64 = s2.iter().map(|s| s.ln()).sum::<f64>() + (1.0 + v * a).ln();

        let m = self.n_coef();
        let mut q = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::<f64>::zeros(m);
        let mut sww = 0.0;
        for i in 0..e {
            for j in 0..e {
                let w = omega[(i, j)];
                sww += w * self.gram[(self.targets[i], self.targets[j])];
                for (pa, &fa) in self.feats[i].iter().enumerate() {
                    let row = self.offsets[i] + pa;
                    b[row] += w * self.gram[(fa, self.targets[j])];
                    for (pb, &fb) in self.feats[j].iter().enumerate() {
                        q[(row, self.offsets[j] + pb)] += w * self.gram[(fa, fb)];
                    }
                }
            }
        }
        for c in 0..m {
            q[(c, c)] += self.prior_prec[c];
            b[c] += self.prior_lin[c];
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::NonFinite("collapsed coefficient precision is not positive definite".into()))?;
        let log_det_q: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let quad = b.dot(&chol.solve(&b));
        let n = ctx.n() as f64;
        let mut lp = -0.5 * n * log_det_sigma - 0.5 * sww + 0.5 * quad - 0.5 * log_det_q;

        // Prior kernels plus the log-sd Jacobian; constants cancel in ratios.
        let pr = ctx.priors;
        let d2 = pr.delta_prior_sd.powi(2);
        lp -= 0.5 * theta[..p].iter().map(|d| (d - pr.delta_prior_mean).powi(2)).sum::<f64>() / d2;
        let (shape, rate) = (pr.sigma_shape, pr.sigma_rate);
        for &t in &theta[p..] {
            lp += if pr.prior_on_sd {
                -shape * t - rate * (-t).exp()
            } else {
                -2.0 * shape * t - rate * (-2.0 * t).exp()
            };
        }
        if !lp.is_finite() {
            return Err(Error::NonFinite("collapsed log density".into()));
        }
        Ok(Marginal {
            log_density: lp,
            chol,
            linear: b,
        })
    }

    /// Runs `steps` Metropolis proposals, then redraws the coefficients and
    /// confounders. `adapt` lets the proposal covariance learn from the
    /// accepted path and must be off after warmup.
    pub fn step(
        &mut self,
        ctx: &Ctx,
        state: &mut ParamState,
        comp: &Completed,
        steps: usize,
        adapt: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let p = ctx.p();
        self.refresh_gram(ctx, comp);
        let mut theta: Vec<f64> = state.delta.clone();
        theta.extend(state.sigma.iter().map(|s| s.ln()));
        let v = ctx.priors.u_variance;
        let slots: Vec<(usize, usize)> = (0..p).map(|j| (j, p + j)).collect();
        let mut phi = reparam::to_walk(&theta, &slots, v);
        let density = |phi: &[f64]| -> Option<(Vec<f64>, Marginal, f64)> {
            let t = reparam::from_walk(phi, &slots, v)?;
            let m = self.marginal(ctx, &t).ok()?;
            let lp = m.log_density + reparam::log_jacobian(phi, &t, &slots);
            Some((t, m, lp))
        };
        let (t0, mut cur, mut cur_lp) =
            density(&phi).ok_or_else(|| Error::NonFinite("collapsed log density at the current state".into()))?;
        theta = t0;
        let mut outcomes = Vec::with_capacity(steps);
        for _ in 0..steps {
            let prop = self.proposal.propose(&phi, rng);
            let mut ok = false;
            // Proposals outside the support or far in the tails are rejected.
            if let Some((t, next, lp)) = density(&prop) {
                if rng.random::<f64>().ln() < lp - cur_lp {
                    phi = prop;
                    theta = t;
                    cur = next;
                    cur_lp = lp;
                    ok = true;
                }
            }
            outcomes.push(ok);
        }
        // Each loading can have a second mode of opposite sign, with the
        // causal effects shifted to match; they are integrated out here, so
        // sign flips land in the other mode. Flips at fixed tau_j are
        // involutions with unit Jacobian.
        for j in 0..=p {
            let flipped = if j < p {
                let mut f = phi.clone();
                f[j] = -f[j];
                f
            } else {
                reparam::flip(&phi, &slots)
            };
            if let Some((t, next, lp)) = density(&flipped) {
                if rng.random::<f64>().ln() < lp - cur_lp {
                    phi = flipped;
                    theta = t;
                    cur = next;
                    cur_lp = lp;
                }
            }
        }
        for ok in outcomes {
            self.proposal.record(ok, adapt);
        }
        self.proposal.observe(&phi, adapt);

        state.delta.copy_from_slice(&theta[..p]);
        for (s, t) in state.sigma.iter_mut().zip(&theta[p..]) {
            *s = t.exp();
        }
        let m = self.n_coef();
        let eps = DVector::from_iterator(m, (0..m).map(|_| normal(rng)));
        let offset = cur
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&eps)
            .ok_or_else(|| Error::NonFinite("triangular solve failed".into()))?;
        let c = cur.chol.solve(&cur.linear) + offset;
        for j in 0..=p {
            let o = self.offsets[j];
            state.omega[j] = c[o];
            if j < p {
                for (kk, &(a, _)) in ctx.inputs[j].iter().enumerate() {
                    state.alpha[a] = c[o + 1 + kk];
                }
            } else {
                state.beta.copy_from_slice(&c.as_slice()[o + 1..o + 1 + p]);
            }
        }
        let (_, var0) = conditionals::latent_conditional(ctx, state, comp, 0);
        let sd = var0.sqrt();
        for r in 0..ctx.n() {
            let (mean, _) = conditionals::latent_conditional(ctx, state, comp, r);
            state.u[r] = mean + sd * normal(rng);
        }

        Ok(())
    }
}
