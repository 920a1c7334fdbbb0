//! Blocked Gibbs sampler for the augmented posterior.
//!
//! One sweep updates, in order: latent log-abundances, latent factors, `Q`,
//! the half-Cauchy scales, `τ`, `φ` (adaptive MH), `F` (adaptive MH), `σ²`,
//! `β`, the baseline stack and the size-factor stack.

mod adapt;
mod density;
mod updates;

pub use adapt::{AdaptConfig, AdaptiveProposal};


use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::HyperConfig;
use crate::data::{CountTable, CovariateDesign};
use crate::dist;
use crate::error::{check_dim, Error, Result};
use crate::model::count_bounds;
use crate::priors::{sample_dirhs_prior, ConstrainedDpStack, DirHsState};
use crate::store::{Acceptance, Draws};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Total iterations, burn-in included.
    pub n_iter: u64,
    pub n_burn: u64,
    pub thin: u64,
    pub seed: u64,
    pub adapt: AdaptConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            n_burn: 10_000,
            thin: 10,
            seed: 1,
            adapt: AdaptConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burn >= self.n_iter {
            return Err(Error::contract(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.n_burn, self.n_iter
            )));
        }
        if self.thin < 1 {
            return Err(Error::contract("thin must be at least 1"));
        }
        Ok(())
    }
}

/// Observed data in the layout the sampler works with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    /// N×J counts.
    pub y: DMatrix<u64>,
    /// N×P covariance covariates, intercept first.
    pub x_cov: DMatrix<f64>,
    /// N×P̃ mean covariates, no intercept.
    pub x_mean: DMatrix<f64>,
    /// Baseline row used by each sample.
    pub group: Vec<usize>,
    pub n_groups: usize,
    /// Whether baselines are subject-specific with per-feature atoms.
    pub subject_mode: bool,
}

impl ModelData {
    pub fn new(counts: &CountTable, design: &CovariateDesign) -> Result<Self> {
        check_dim("design rows vs samples", counts.n_samples(), design.n_samples())?;
        let subjects = counts
            .has_subjects()
            .then(|| (0..counts.n_samples()).map(|i| counts.subject_of(i).unwrap()).collect());
        Self::from_parts(counts.counts().clone(), design.cov_matrix(), design.mean_matrix(), subjects)
    }

    pub fn from_parts(
        y: DMatrix<u64>,
        x_cov: DMatrix<f64>,
        x_mean: DMatrix<f64>,
        subjects: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = y.nrows();
        check_dim("covariance design rows", n, x_cov.nrows())?;
        check_dim("mean design rows", n, x_mean.nrows())?;
        if x_cov.ncols() == 0 || x_cov.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::contract("covariance design must start with an intercept column of ones"));
        }
        if y.ncols() == 0 {
            return Err(Error::contract("count table has no features"));
        }
        let (group, n_groups, subject_mode) = match subjects {
            Some(s) => {
                check_dim("subject labels", n, s.len())?;
                let g = s.iter().copied().max().map_or(0, |m| m + 1);
                (s, g, true)
            }
            None => (vec![0; n], 1, false),
        };
        Ok(Self {
            y,
            x_cov,
            x_mean,
            group,
            n_groups,
            subject_mode,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_cov(&self) -> usize {
        self.x_cov.ncols()
    }

    pub fn n_mean(&self) -> usize {
        self.x_mean.ncols()
    }
}

/// Full state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub shrink: DirHsState,
    /// K×P covariate weights of the factors.
    pub f: DMatrix<f64>,
    pub sigma2: f64,
    /// N×K latent factors.
    pub eta: DMatrix<f64>,
    /// J×P̃ mean coefficients.
    pub beta: DMatrix<f64>,
    /// G×J baselines (one row unless subject-specific).
    pub alpha: DMatrix<f64>,
    pub alpha_stack: ConstrainedDpStack,
    pub alpha_outer: DMatrix<usize>,
    pub alpha_inner: DMatrix<bool>,
    pub r: DVector<f64>,
    pub r_stack: ConstrainedDpStack,
    pub r_outer: Vec<usize>,
    pub r_inner: Vec<bool>,
    /// N×J latent log-abundances.
    pub latent: DMatrix<f64>,
    pub iteration: u64,
}

impl ChainState {
    pub fn q(&self) -> &DMatrix<f64> {
        &self.shrink.q
    }

    pub fn n_factors(&self) -> usize {
        self.shrink.q.ncols()
    }
}

/// One MCMC chain: data, hyperparameters, state, RNG and proposal adapters.
#[derive(Debug, Clone)]
pub struct Chain {
    pub data: ModelData,
    pub hyper: HyperConfig,
    pub state: ChainState,
    rng: ChaCha8Rng,
    phi_props: Vec<AdaptiveProposal>,
    f_props: Vec<AdaptiveProposal>,
    adapting: bool,
    /// Standard deviation of the logit-scale random walk on inner weights.
    pub omega_step: f64,
}

/// Draws and acceptance statistics of a finished chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Draws,
    pub acceptance: Acceptance,
}

impl Chain {
    /// Builds a chain with a data-driven starting state. Streams give
    /// independent RNG sequences for chains sharing a seed.
    pub fn new(data: ModelData, hyper: HyperConfig, seed: u64, stream: u64, adapt: AdaptConfig) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let state = initial_state(&data, &hyper, &mut rng)?;
        let mut chain = Self::from_state(data, hyper, state, rng, adapt)?;
        chain.update_alpha_stack();
        chain.update_r_stack();
        chain.check_finite("initialization")?;
        Ok(chain)
    }

    /// Wraps an existing state.
    pub fn from_state(
        data: ModelData,
        hyper: HyperConfig,
        state: ChainState,
        rng: ChaCha8Rng,
        adapt: AdaptConfig,
    ) -> Result<Self> {
        let (n, j, p, k) = (data.n_samples(), data.n_features(), data.n_cov(), hyper.k);
        check_dim("state: rows of Q", j, state.shrink.q.nrows())?;
        check_dim("state: factors", k, state.shrink.q.ncols())?;
        check_dim("state: columns of F", p, state.f.ncols())?;
        check_dim("state: rows of eta", n, state.eta.nrows())?;
        check_dim("state: latent rows", n, state.latent.nrows())?;
        check_dim("state: beta columns", data.n_mean(), state.beta.ncols())?;
        check_dim("state: baseline rows", data.n_groups, state.alpha.nrows())?;
        check_dim("state: size factors", n, state.r.len())?;
        let phi_props = (0..k).map(|_| AdaptiveProposal::new(j.saturating_sub(1), adapt)).collect();
        let f_props = (0..k).map(|_| AdaptiveProposal::new(p, adapt)).collect();
        Ok(Self {
            data,
            hyper,
            state,
            rng,
            phi_props,
            f_props,
            adapting: adapt.enabled,
            omega_step: 0.5,
        })
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Turns proposal adaptation on or off.
    pub fn set_adapting(&mut self, on: bool) {
        self.adapting = on;
    }

    /// One full sweep in the fixed block order.
    pub fn sweep(&mut self) -> Result<()> {
        self.check_finite("start of sweep")?;
        self.block("latent", |c| {
            c.update_latent_y();
            Ok(())
        })?;
        self.block("eta", Chain::update_eta)?;
        self.block("Q", Chain::update_q)?;
        self.block("zeta", |c| {
            c.update_zeta();
            Ok(())
        })?;
        self.block("tau", Chain::update_tau)?;
        self.block("phi", |c| {
            c.update_phi();
            Ok(())
        })?;
        self.block("F", |c| {
            c.update_f();
            Ok(())
        })?;
        self.block("sigma2", |c| {
            c.update_sigma2();
            Ok(())
        })?;
        self.block("beta", Chain::update_beta)?;
        self.block("alpha", |c| {
            c.update_alpha_stack();
            Ok(())
        })?;
        self.block("r", |c| {
            c.update_r_stack();
            Ok(())
        })?;
        self.state.iteration += 1;
        Ok(())
    }

    fn block(&mut self, name: &'static str, update: impl FnOnce(&mut Self) -> Result<()>) -> Result<()> {
        update(self).map_err(|e| {
            log::error!("block {name} failed at iteration {}: {e}", self.state.iteration);
            Error::NumericalAbort {
                iteration: self.state.iteration,
                block: name,
            }
        })?;
        self.check_finite(name)
    }

    /// Runs `config.n_iter` sweeps and keeps thinned post-burn-in draws.
    pub fn run(&mut self, config: &SamplerConfig) -> Result<ChainOutput> {
        config.validate()?;
        let mut draws = Draws::default();
        for t in 0..config.n_iter {
            if t == config.n_burn {
                self.adapting = false;
                for p in self.phi_props.iter_mut().chain(self.f_props.iter_mut()) {
                    p.reset_counts();
                }
            } else if t == 0 {
                self.adapting = config.adapt.enabled && config.n_burn > 0;
            }
            self.sweep()?;
            if t >= config.n_burn && (t - config.n_burn) % config.thin == 0 {
                draws.push(t + 1, &self.state);
            }
        }
        Ok(ChainOutput {
            draws,
            acceptance: self.acceptance(),
        })
    }

    pub fn acceptance(&self) -> Acceptance {
        Acceptance {
            phi: self.phi_props.iter().map(AdaptiveProposal::acceptance_rate).collect(),
            f: self.f_props.iter().map(AdaptiveProposal::acceptance_rate).collect(),
        }
    }

    pub(crate) fn check_finite(&self, block: &'static str) -> Result<()> {
        let s = &self.state;
        let ok = s.sigma2.is_finite()
            && s.sigma2 > 0.0
            && s.latent.iter().all(|v| !v.is_nan())
            && s.eta.iter().all(|v| v.is_finite())
            && s.shrink.q.iter().all(|v| v.is_finite())
            && s.shrink.tau.iter().all(|v| v.is_finite() && *v > 0.0)
            && s.shrink.phi.iter().all(|v| v.is_finite() && *v > 0.0)
            && s.shrink.zeta2.iter().all(|v| v.is_finite() && *v > 0.0)
            && s.shrink.zeta_aux.iter().all(|v| v.is_finite() && *v > 0.0)
            && s.f.iter().all(|v| v.is_finite())
            && s.beta.iter().all(|v| v.is_finite())
            && s.alpha.iter().all(|v| v.is_finite())
            && s.r.iter().all(|v| v.is_finite())
            && s.alpha_stack.xi.iter().all(|v| v.is_finite())
            && s.r_stack.xi.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::NumericalAbort {
                iteration: s.iteration,
                block,
            })
        }
    }

    /// N×K factor scores `f_k · x_i`.
    pub fn scores(&self) -> DMatrix<f64> {
        &self.data.x_cov * self.state.f.transpose()
    }

    /// N×J loading contribution `λ_j(x_i)' η_i`.
    pub fn loading_effect(&self) -> DMatrix<f64> {
        let g = self.scores().component_mul(&self.state.eta);
        g * self.state.shrink.q.transpose()
    }

    /// N×J regression means `μ_ij`.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let s = &self.state;
        let reg = &self.data.x_mean * s.beta.transpose();
        DMatrix::from_fn(self.data.n_samples(), self.data.n_features(), |i, j| {
            s.r[i] + s.alpha[(self.data.group[i], j)] + reg[(i, j)]
        })
    }

    /// Whether every latent value lies in the interval of its count.
    pub fn latent_in_bounds(&self) -> bool {
        let (n, j) = (self.data.n_samples(), self.data.n_features());
        (0..n).all(|i| {
            (0..j).all(|c| {
                let (lo, hi) = count_bounds(self.data.y[(i, c)]);
                let z = self.state.latent[(i, c)];
                lo <= z && z < hi
            })
        })
    }
}

fn initial_state(data: &ModelData, hyper: &HyperConfig, rng: &mut ChaCha8Rng) -> Result<ChainState> {
    let (n, j, p, k) = (data.n_samples(), data.n_features(), data.n_cov(), hyper.k);
    let latent = data.y.map(|y| {
        let (lo, hi) = count_bounds(y);
        let z = (y as f64 + 0.5).ln();
        if z >= lo && z < hi {
            z
        } else {
            lo
        }
    });
    let mut shrink = sample_dirhs_prior(&hyper.dirhs(), j, rng);
    shrink.tau.fill(1.0);
    shrink.phi.fill(1.0 / j as f64);
    shrink.zeta2.fill(1.0);
    shrink.zeta_aux.fill(1.0);
    shrink.q = DMatrix::from_fn(j, k, |_, _| 0.1 * dist::std_normal(rng));
    let f = DMatrix::from_fn(k, p, |_, _| dist::std_normal(rng));
    let eta = DMatrix::from_fn(n, k, |_, _| dist::std_normal(rng));
    let nu_alpha = hyper.alpha_targets(j, data.subject_mode)?;
    let alpha_stack = ConstrainedDpStack::sample_prior(hyper.alpha_stack(), nu_alpha.clone(), rng);
    let r_stack = ConstrainedDpStack::sample_prior(hyper.r_stack(), vec![hyper.nu_r], rng);
    let g = data.n_groups;
    let alpha = DMatrix::from_fn(g, j, |_, c| nu_alpha[if nu_alpha.len() == 1 { 0 } else { c }]);
    Ok(ChainState {
        shrink,
        f,
        sigma2: 1.0,
        eta,
        beta: DMatrix::zeros(j, data.n_mean()),
        alpha,
        alpha_stack,
        alpha_outer: DMatrix::zeros(g, j),
        alpha_inner: DMatrix::from_element(g, j, true),
        r: DVector::from_element(n, hyper.nu_r),
        r_stack,
        r_outer: vec![0; n],
        r_inner: vec![true; n],
        latent,
        iteration: 0,
    })
}

/// Draws the full parameter state from the prior, with latent factors,
/// latent log-abundances and counts simulated given the parameters.
/// `data` supplies the design; its counts are replaced.
pub fn sample_prior_state(data: &mut ModelData, hyper: &HyperConfig, rng: &mut ChaCha8Rng) -> Result<ChainState> {
    hyper.validate()?;
    let (n, j, k) = (data.n_samples(), data.n_features(), hyper.k);
    let shrink = sample_dirhs_prior(&hyper.dirhs(), j, rng);
    let f = DMatrix::from_fn(k, data.n_cov(), |_, _| dist::std_normal(rng));
    let sigma2 = dist::inv_gamma(rng, hyper.a_sigma, hyper.b_sigma);
    let sd_beta = hyper.u2_beta.sqrt();
    let beta = DMatrix::from_fn(j, data.n_mean(), |_, _| sd_beta * dist::std_normal(rng));
    let nu_alpha = hyper.alpha_targets(j, data.subject_mode)?;
    let alpha_stack = ConstrainedDpStack::sample_prior(hyper.alpha_stack(), nu_alpha, rng);
    let a = alpha_stack.sample_values(data.n_groups, j, rng)?;
    let r_stack = ConstrainedDpStack::sample_prior(hyper.r_stack(), vec![hyper.nu_r], rng);
    let rd = r_stack.sample_values(n, 1, rng)?;
    let state = ChainState {
        shrink,
        f,
        sigma2,
        eta: DMatrix::zeros(n, k),
        beta,
        alpha: a.values,
        alpha_stack,
        alpha_outer: a.outer,
        alpha_inner: a.inner,
        r: DVector::from_iterator(n, rd.values.iter().copied()),
        r_stack,
        r_outer: rd.outer.iter().copied().collect(),
        r_inner: rd.inner.iter().copied().collect(),
        latent: DMatrix::zeros(n, j),
        iteration: 0,
    };
    let mut chain = Chain::from_state(data.clone(), hyper.clone(), state, rng.clone(), AdaptConfig::default())?;
    chain.simulate_data();
    *rng = chain.rng.clone();
    *data = chain.data;
    Ok(chain.state)
}
