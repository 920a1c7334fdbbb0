//! Joint-distribution ("getting it right") check of the sampler.
//!
//! Marginal-conditional draws come straight from the prior and the data
//! model. Successive-conditional draws alternate one Gibbs sweep with a fresh
//! simulation of the data given the parameters. Both target the same joint
//! distribution, so any discrepancy in a tracked quantity points at a faulty
//! block. Proposal adaptation is switched off in the successive chain.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calibrate::HyperConfig;
use crate::dist;
use crate::error::Result;
use crate::sampler::{sample_prior_state, AdaptConfig, Chain, ChainState, ModelData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GewekeConfig {
    /// Draws kept from each scheme.
    pub n_draws: usize,
    /// Successive-conditional steps between kept draws.
    pub thin: usize,
    pub burn: usize,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        Self {
            n_draws: 50_000,
            thin: 10,
            burn: 1_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityCheck {
    pub name: &'static str,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub marginal_mean: f64,
    pub successive_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeReport {
    pub checks: Vec<QuantityCheck>,
}

impl GewekeReport {
    pub fn min_p_value(&self) -> f64 {
        self.checks.iter().map(|c| c.p_value).fold(1.0, f64::min)
    }
}

/// Tracked quantities: `σ²`, `τ_1`, `β_11` and `α_1`.
pub const TRACKED: [&str; 4] = ["sigma2", "tau_1", "beta_1_1", "alpha_1"];

fn tracked(s: &ChainState) -> [f64; 4] {
    [s.sigma2, s.shrink.tau[0], s.beta[(0, 0)], s.alpha[(0, 0)]]
}

/// Toy problem with three features, two factors, four samples, one
/// covariance covariate besides the intercept and one mean covariate.
/// Truncation levels are three for both stacks.
pub fn toy_problem() -> (ModelData, HyperConfig) {
    let x_cov = DMatrix::from_row_slice(4, 2, &[1.0, -1.0, 1.0, -0.3, 1.0, 0.4, 1.0, 1.2]);
    let x_mean = DMatrix::from_column_slice(4, 1, &[0.5, -1.0, 1.0, 0.0]);
    let data = ModelData::from_parts(DMatrix::zeros(4, 3), x_cov, x_mean, None).expect("toy design is valid");
    let mut hyper = HyperConfig::generic(3, 2, 1.0, 0.5);
    hyper.a_tau = 2.0;
    hyper.b_tau = 3.0;
    hyper.a_phi = 2.0;
    hyper.u2_beta = 1.0;
    hyper.u2_alpha = 1.0;
    hyper.u_r2 = 0.1;
    hyper.u2_xi_r = 0.5;
    hyper.l_alpha = 3;
    hyper.l_r = 3;
    (data, hyper)
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic p-value with
/// Stephens' small-sample correction.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    (d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Runs both schemes on `data`'s design and compares the tracked quantities.
pub fn geweke_test(data: &ModelData, hyper: &HyperConfig, cfg: &GewekeConfig) -> Result<GewekeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut marginal = vec![Vec::with_capacity(cfg.n_draws); 4];
    let mut work = data.clone();
    for _ in 0..cfg.n_draws {
        let s = sample_prior_state(&mut work, hyper, &mut rng)?;
        for (v, x) in marginal.iter_mut().zip(tracked(&s)) {
            v.push(x);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut work = data.clone();
    let start = sample_prior_state(&mut work, hyper, &mut rng)?;
    let adapt = AdaptConfig {
        enabled: false,
        ..AdaptConfig::default()
    };
    let mut chain = Chain::from_state(work, hyper.clone(), start, rng, adapt)?;
    let mut successive = vec![Vec::with_capacity(cfg.n_draws); 4];
    for t in 0..cfg.burn + cfg.n_draws * cfg.thin {
        chain.sweep()?;
        chain.simulate_data();
        if t >= cfg.burn && (t - cfg.burn + 1) % cfg.thin == 0 {
            for (v, x) in successive.iter_mut().zip(tracked(&chain.state)) {
                v.push(x);
            }
        }
    }

    let checks = TRACKED
        .iter()
        .enumerate()
        .map(|(q, &name)| {
            let (d, p) = ks_two_sample(&marginal[q], &successive[q]);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            QuantityCheck {
                name,
                ks_statistic: d,
                p_value: p,
                marginal_mean: mean(&marginal[q]),
                successive_mean: mean(&successive[q]),
            }
        })
        .collect();
    Ok(GewekeReport { checks })
}

/// Draws from a normal with the given moments, used by tests of the KS helper.
#[doc(hidden)]
pub fn normal_sample(rng: &mut ChaCha8Rng, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    (0..n).map(|_| mean + sd * dist::std_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kolmogorov_tail_values() {
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = normal_sample(&mut rng, 5000, 0.0, 1.0);
        let b = normal_sample(&mut rng, 5000, 0.0, 1.0);
        let c = normal_sample(&mut rng, 5000, 0.2, 1.0);
        assert!(ks_two_sample(&a, &b).1 > 0.001);
        assert!(ks_two_sample(&a, &c).1 < 1e-6);
        assert_eq!(ks_two_sample(&a, &a).0, 0.0);
    }

    #[test]
    fn short_geweke_run_agrees() {
        let (data, hyper) = toy_problem();
        let cfg = GewekeConfig {
            n_draws: 2000,
            thin: 10,
            burn: 200,
            seed: 3,
        };
        let report = geweke_test(&data, &hyper, &cfg).unwrap();
        assert_eq!(report.checks.len(), 4);
        assert!(report.min_p_value() > 1e-4, "{report:?}");
    }
}
