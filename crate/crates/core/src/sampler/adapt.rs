//! Adaptive random-walk Metropolis proposals.
//!
//! The proposal covariance is `exp(2s) · (2.38²/d) · (C + εI)` where `C` is
//! the running covariance of the chain and `s` a global log-scale tuned by
//! Robbins–Monro toward the target acceptance rate. Before enough history
//! accumulates the proposal is isotropic.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::std_normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub enabled: bool,
    /// Standard deviation of the initial isotropic proposal.
    pub initial_scale: f64,
    /// Iterations of history before the empirical covariance is used.
    pub start: u64,
    pub target_acceptance: f64,
    /// Iterations between Cholesky refreshes.
    pub refresh: u64,
    pub jitter: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            initial_scale: 0.1,
            start: 200,
            target_acceptance: 0.234,
            refresh: 50,
            jitter: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveProposal {
    cfg: AdaptConfig,
    dim: usize,
    n: u64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
    log_scale: f64,
    base_chol: DMatrix<f64>,
    accepted: u64,
    proposed: u64,
}

impl AdaptiveProposal {
    pub fn new(dim: usize, cfg: AdaptConfig) -> Self {
        Self {
            cfg,
            dim,
            n: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
            log_scale: 0.0,
            base_chol: DMatrix::identity(dim, dim) * cfg.initial_scale,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R, current: &DVector<f64>) -> DVector<f64> {
        let z = DVector::from_fn(self.dim, |_, _| std_normal(rng));
        current + (&self.base_chol * z) * self.log_scale.exp()
    }

    /// Records one MH step. When `adapting`, the state after the step feeds
    /// the covariance estimate and the global scale moves toward the target.
    pub fn record(&mut self, accept_prob: f64, accepted: bool, state: &DVector<f64>, adapting: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
        if !(adapting && self.cfg.enabled) {
            return;
        }
        self.n += 1;
        let n = self.n as f64;
        let delta = state - &self.mean;
        self.mean += &delta / n;
        let delta2 = state - &self.mean;
        self.scatter += &delta * delta2.transpose();
        let gain = n.powf(-0.6).min(1.0);
        let p = if accept_prob.is_nan() { 0.0 } else { accept_prob.min(1.0) };
        self.log_scale = (self.log_scale + gain * (p - self.cfg.target_acceptance)).clamp(-20.0, 20.0);
        if self.n >= self.cfg.start && self.n % self.cfg.refresh.max(1) == 0 {
            self.refresh_chol();
        }
    }

    fn refresh_chol(&mut self) {
        let d = self.dim as f64;
        let cov = &self.scatter / (self.n as f64 - 1.0).max(1.0);
        let mut target = cov * (2.38 * 2.38 / d);
        for i in 0..self.dim {
            target[(i, i)] += self.cfg.jitter;
        }
        if let Some(ch) = target.clone().cholesky() {
            self.base_chol = ch.l();
        } else {
            self.base_chol = DMatrix::from_diagonal(&target.diagonal().map(|v| v.max(self.cfg.jitter).sqrt()));
        }
        // The scale has been absorbed into the empirical covariance.
        self.log_scale = 0.0;
    }

    /// Clears acceptance counters, e.g. at the end of burn-in.
    pub fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}
