//! Deterministic model mathematics: covariate-dependent loadings and
//! covariance, the mean regression, log-normal moments, and the
//! rounded-kernel count probability.
//!
//! The covariance at covariate vector `x` is
//!
//! ```text
//! Σ(x) = Λ(x) Λ(x)' + σ² I,      λ_jk(x) = q_jk · (f_k · x)
//! ```
//!
//! so every feature pair's covariance is a sum of `K` quadratic forms in `x`.

use nalgebra::{DMatrix, DVector};

use crate::dist::log_norm_interval;
use crate::error::{check_dim, Error, Result};

/// Covariate vector whose first entry is the intercept `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateVector(Vec<f64>);

impl CovariateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        match values.first() {
            None => Err(Error::contract("covariate vector must have at least the intercept")),
            Some(&v) if v != 1.0 => Err(Error::contract(format!(
                "covariate vector must start with intercept 1, found {v}"
            ))),
            Some(_) => Ok(Self(values)),
        }
    }

    /// Prepends the intercept to `rest`.
    pub fn with_intercept(rest: &[f64]) -> Self {
        let mut v = Vec::with_capacity(rest.len() + 1);
        v.push(1.0);
        v.extend_from_slice(rest);
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// The covariates without the intercept.
    pub fn tail(&self) -> &[f64] {
        &self.0[1..]
    }
}

/// Covariance-side parameters: `Q` (J×K), `F` (K×P) and the idiosyncratic variance.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLoadingParams {
    pub q: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub sigma2: f64,
}

impl FactorLoadingParams {
    pub fn new(q: DMatrix<f64>, f: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        check_dim("loadings: columns of Q vs rows of F", q.ncols(), f.nrows())?;
        if !(sigma2 > 0.0) {
            return Err(Error::contract(format!("sigma2 must be positive, found {sigma2}")));
        }
        Ok(Self { q, f, sigma2 })
    }

    pub fn n_features(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.q.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.f.ncols()
    }

    /// Factor scores `f_k · x` for each factor.
    pub fn factor_scores(&self, x: &CovariateVector) -> Result<DVector<f64>> {
        check_dim("loadings: covariate length", self.f.ncols(), x.len())?;
        Ok(&self.f * DVector::from_column_slice(x.as_slice()))
    }

    /// `Λ(x)` with entries `q_jk · (f_k · x)`.
    pub fn loading_at(&self, x: &CovariateVector) -> Result<DMatrix<f64>> {
        let h = self.factor_scores(x)?;
        let mut lambda = self.q.clone();
        for (k, mut col) in lambda.column_iter_mut().enumerate() {
            col *= h[k];
        }
        Ok(lambda)
    }

    /// `Σ(x) = Λ(x)Λ(x)' + σ² I`.
    pub fn sigma_at(&self, x: &CovariateVector) -> Result<DMatrix<f64>> {
        let lambda = self.loading_at(x)?;
        let mut sigma = &lambda * lambda.transpose();
        for j in 0..sigma.nrows() {
            sigma[(j, j)] += self.sigma2;
        }
        // Enforce exact symmetry of the product.
        for j in 0..sigma.nrows() {
            for l in 0..j {
                let v = 0.5 * (sigma[(j, l)] + sigma[(l, j)]);
                sigma[(j, l)] = v;
                sigma[(l, j)] = v;
            }
        }
        Ok(sigma)
    }
}

/// Baseline abundances: one row shared by all samples, or one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Shared(DVector<f64>),
    PerSubject(DMatrix<f64>),
}

impl Baseline {
    pub fn n_features(&self) -> usize {
        match self {
            Baseline::Shared(a) => a.len(),
            Baseline::PerSubject(a) => a.ncols(),
        }
    }
}

/// Mean-side parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanParams {
    /// Per-sample size factors `r_i`.
    pub r: DVector<f64>,
    pub alpha: Baseline,
    /// `J × (P_mean)` coefficients on the non-intercept mean covariates.
    pub beta: DMatrix<f64>,
}

impl MeanParams {
    pub fn new(r: DVector<f64>, alpha: Baseline, beta: DMatrix<f64>) -> Result<Self> {
        check_dim("mean: rows of beta vs features", alpha.n_features(), beta.nrows())?;
        Ok(Self { r, alpha, beta })
    }

    /// `μ_ij = r_i + α_j (or α_{s_i j}) + β_j · x̃_i` for all features.
    pub fn mu_at(&self, i: usize, x: &CovariateVector, subject: Option<usize>) -> Result<DVector<f64>> {
        if i >= self.r.len() {
            return Err(Error::contract(format!(
                "sample index {i} out of range for {} samples",
                self.r.len()
            )));
        }
        let xt = x.tail();
        check_dim("mean: covariates without intercept", self.beta.ncols(), xt.len())?;
        let base: Vec<f64> = match (&self.alpha, subject) {
            (Baseline::Shared(a), _) => a.iter().copied().collect(),
            (Baseline::PerSubject(a), Some(s)) if s < a.nrows() => a.row(s).iter().copied().collect(),
            (Baseline::PerSubject(a), Some(s)) => {
                return Err(Error::contract(format!(
                    "subject {s} out of range for {} subjects",
                    a.nrows()
                )))
            }
            (Baseline::PerSubject(_), None) => {
                return Err(Error::contract("subject-level baselines require a subject label"))
            }
        };
        let xt = DVector::from_column_slice(xt);
        let reg = &self.beta * xt;
        Ok(DVector::from_fn(base.len(), |j, _| self.r[i] + base[j] + reg[j]))
    }
}

/// Mean vector and covariance matrix of `exp(Y)` for `Y ~ N(mu, sigma)`.
pub fn lognormal_moments(mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim("lognormal: rows of Sigma", mu.len(), sigma.nrows())?;
    check_dim("lognormal: columns of Sigma", mu.len(), sigma.ncols())?;
    let mean = DVector::from_fn(mu.len(), |j, _| (mu[j] + 0.5 * sigma[(j, j)]).exp());
    let cov = DMatrix::from_fn(mu.len(), mu.len(), |j, l| mean[j] * mean[l] * sigma[(j, l)].exp_m1());
    Ok((mean, cov))
}

/// Interval `[ln y, ln(y+1))` of latent log-abundances that round to `y`.
///
/// `u64::MAX` is the overflow bucket and extends to `+∞`.
pub fn count_bounds(y: u64) -> (f64, f64) {
    let lo = if y == 0 { f64::NEG_INFINITY } else { (y as f64).ln() };
    let hi = if y == u64::MAX { f64::INFINITY } else { ((y as f64) + 1.0).ln() };
    (lo, hi)
}

/// Count produced by rounding a latent log-abundance, saturating at `u64::MAX`.
pub fn round_latent(z: f64) -> u64 {
    z.exp().floor() as u64
}

/// Log of the conditional rounded-kernel probability of `y` given per-feature
/// latent means `m_j` and common variance `sigma2`.
///
/// Given the latent factors the features are independent, so the probability
/// factorizes into univariate normal CDF differences on the log scale.
pub fn rounded_log_pmf(y: &[i64], means: &[f64], sigma2: f64) -> Result<f64> {
    check_dim("rounded pmf: means", y.len(), means.len())?;
    if !(sigma2 > 0.0) {
        return Err(Error::contract(format!("sigma2 must be positive, found {sigma2}")));
    }
    let sd = sigma2.sqrt();
    let mut total = 0.0;
    for (&yj, &m) in y.iter().zip(means) {
        if yj < 0 {
            return Err(Error::contract(format!("counts must be non-negative, found {yj}")));
        }
        let (lo, hi) = count_bounds(yj as u64);
        total += log_norm_interval((lo - m) / sd, (hi - m) / sd);
    }
    Ok(total)
}

/// Conditional rounded-kernel probability; see [`rounded_log_pmf`].
pub fn rounded_pmf(y: &[i64], means: &[f64], sigma2: f64) -> Result<f64> {
    rounded_log_pmf(y, means, sigma2).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::std_normal;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| std_normal(rng))
    }

    #[test]
    fn covariate_vector_requires_intercept() {
        assert!(CovariateVector::new(vec![]).is_err());
        assert!(CovariateVector::new(vec![0.5, 1.0]).is_err());
        assert_eq!(CovariateVector::new(vec![1.0, 2.0]).unwrap().tail(), &[2.0]);
    }

    #[test]
    fn zero_f_gives_zero_loadings() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FactorLoadingParams::new(rand_matrix(&mut rng, 5, 3), DMatrix::zeros(3, 2), 1.0).unwrap();
        let x = CovariateVector::new(vec![1.0, 0.7]).unwrap();
        assert!(p.loading_at(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_loading() {
        let p = FactorLoadingParams::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 3.0), 1.0).unwrap();
        let x = CovariateVector::new(vec![1.0]).unwrap();
        assert_eq!(p.loading_at(&x).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn loading_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = rand_matrix(&mut rng, 4, 2);
        let f = rand_matrix(&mut rng, 2, 3);
        let x = CovariateVector::new(vec![1.0, 0.5, -0.2]).unwrap();
        let p = FactorLoadingParams::new(q.clone(), f.clone(), 0.3).unwrap();
        let lam = p.loading_at(&x).unwrap();
        for j in 0..4 {
            for k in 0..2 {
                let mut s = 0.0;
                for pp in 0..3 {
                    s += f[(k, pp)] * x.as_slice()[pp];
                }
                assert!((lam[(j, k)] - q[(j, k)] * s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = FactorLoadingParams::new(DMatrix::zeros(3, 2), DMatrix::zeros(2, 3), 1.0).unwrap();
        let x = CovariateVector::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(p.loading_at(&x), Err(Error::DimensionMismatch { .. })));
        assert!(FactorLoadingParams::new(DMatrix::zeros(3, 2), DMatrix::zeros(3, 3), 1.0).is_err());
        assert!(FactorLoadingParams::new(DMatrix::zeros(3, 2), DMatrix::zeros(2, 3), 0.0).is_err());
    }

    #[test]
    fn sigma_with_zero_q_is_scaled_identity() {
        let p = FactorLoadingParams::new(DMatrix::zeros(3, 2), DMatrix::from_element(2, 2, 1.0), 0.4).unwrap();
        let s = p.sigma_at(&CovariateVector::new(vec![1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(s, DMatrix::identity(3, 3) * 0.4);
    }

    #[test]
    fn sigma_rank_one_example() {
        // q = (1,1)', f'x = 2, σ² = 0.25
        let p = FactorLoadingParams::new(DMatrix::from_element(2, 1, 1.0), DMatrix::from_element(1, 1, 2.0), 0.25).unwrap();
        let s = p.sigma_at(&CovariateVector::new(vec![1.0]).unwrap()).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[4.25, 4.0, 4.0, 4.25]));
    }

    /// Entrywise covariance: Σ_k q_jk q_lk (f_k·x)² + σ² 1(j = l).
    fn sigma_oracle(q: &DMatrix<f64>, f: &DMatrix<f64>, x: &[f64], s2: f64) -> DMatrix<f64> {
        let (jn, kn) = q.shape();
        DMatrix::from_fn(jn, jn, |j, l| {
            let mut v = 0.0;
            for k in 0..kn {
                let h: f64 = (0..x.len()).map(|p| f[(k, p)] * x[p]).sum();
                v += q[(j, k)] * q[(l, k)] * h * h;
            }
            if j == l {
                v += s2;
            }
            v
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sigma_matches_scalar_formula_and_is_well_conditioned(seed in 0u64..10_000, jn in 1usize..20, kn in 1usize..5, pn in 1usize..4, s2 in 0.01f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = rand_matrix(&mut rng, jn, kn);
            let f = rand_matrix(&mut rng, kn, pn);
            let mut xv = vec![1.0];
            for _ in 1..pn { xv.push(rng.random_range(-2.0..2.0)); }
            let p = FactorLoadingParams::new(q.clone(), f.clone(), s2).unwrap();
            let s = p.sigma_at(&CovariateVector::new(xv.clone()).unwrap()).unwrap();
            let o = sigma_oracle(&q, &f, &xv, s2);
            for (a, b) in s.iter().zip(o.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            prop_assert_eq!(s.clone(), s.transpose());
            let tol = 1e-10 * s.trace();
            let min_eig = s.symmetric_eigenvalues().min();
            prop_assert!(min_eig >= s2 - tol);
        }

        #[test]
        fn mu_invariant_under_size_factor_transfer(seed in 0u64..10_000, c in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = DVector::from_fn(3, |_, _| std_normal(&mut rng));
            let a = DVector::from_fn(4, |_, _| std_normal(&mut rng));
            let b = rand_matrix(&mut rng, 4, 2);
            let x = CovariateVector::new(vec![1.0, 0.3, -1.2]).unwrap();
            let m1 = MeanParams::new(r.clone(), Baseline::Shared(a.clone()), b.clone()).unwrap();
            let m2 = MeanParams::new(r.add_scalar(c), Baseline::Shared(a.add_scalar(-c)), b).unwrap();
            let d = m1.mu_at(1, &x, None).unwrap() - m2.mu_at(1, &x, None).unwrap();
            prop_assert!(d.amax() < 1e-12);
        }

        #[test]
        fn lognormal_covariance_sign_follows_sigma(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_matrix(&mut rng, 4, 4);
            let s = &a * a.transpose() * 0.3;
            let mu = DVector::from_fn(4, |_, _| std_normal(&mut rng));
            let (_, cov) = lognormal_moments(&mu, &s).unwrap();
            for j in 0..4 {
                for l in 0..4 {
                    prop_assert_eq!(cov[(j, l)].signum(), if s[(j, l)] == 0.0 { cov[(j, l)].signum() } else { s[(j, l)].signum() });
                }
            }
        }
    }

    #[test]
    fn mu_baseline_and_arithmetic() {
        let m = MeanParams::new(
            DVector::from_vec(vec![1.0]),
            Baseline::Shared(DVector::from_vec(vec![2.0])),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let x = CovariateVector::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(m.mu_at(0, &x, None).unwrap()[0], 4.0);

        let m0 = MeanParams::new(
            DVector::from_vec(vec![1.5]),
            Baseline::Shared(DVector::from_vec(vec![2.0, -1.0])),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert_eq!(m0.mu_at(0, &CovariateVector::new(vec![1.0, 9.0]).unwrap(), None).unwrap().as_slice(), &[3.5, 0.5]);
    }

    #[test]
    fn mu_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = DVector::from_fn(5, |_, _| std_normal(&mut rng));
        let a = rand_matrix(&mut rng, 2, 4);
        let b = rand_matrix(&mut rng, 4, 3);
        let m = MeanParams::new(r.clone(), Baseline::PerSubject(a.clone()), b.clone()).unwrap();
        let xv = [1.0, 0.2, -0.7, 1.9];
        let x = CovariateVector::new(xv.to_vec()).unwrap();
        let mu = m.mu_at(3, &x, Some(1)).unwrap();
        for j in 0..4 {
            let mut v = r[3] + a[(1, j)];
            for p in 0..3 {
                v += b[(j, p)] * xv[p + 1];
            }
            assert!((mu[j] - v).abs() < 1e-14);
        }
    }

    #[test]
    fn subject_mode_requires_label() {
        let m = MeanParams::new(DVector::zeros(2), Baseline::PerSubject(DMatrix::zeros(2, 3)), DMatrix::zeros(3, 0)).unwrap();
        let x = CovariateVector::new(vec![1.0]).unwrap();
        assert!(m.mu_at(0, &x, None).is_err());
        assert!(m.mu_at(0, &x, Some(2)).is_err());
        assert!(m.mu_at(0, &x, Some(1)).is_ok());
    }

    #[test]
    fn lognormal_identities() {
        let (m, c) = lognormal_moments(&DVector::zeros(1), &DMatrix::identity(1, 1)).unwrap();
        let e = std::f64::consts::E;
        assert!((m[0] - e.sqrt()).abs() < 1e-15);
        assert!((c[(0, 0)] - e * (e - 1.0)).abs() < 1e-13);
        let (_, c) = lognormal_moments(&DVector::zeros(2), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn lognormal_moments_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = DVector::from_vec(vec![0.2, -0.4, 0.5]);
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.0, 0.3, 0.4, 0.0, -0.2, 0.1, 0.45]);
        let s = &a * a.transpose();
        let (mean, cov) = lognormal_moments(&mu, &s).unwrap();
        let n = 1_000_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let e = DVector::from_fn(3, |_, _| std_normal(&mut rng));
            let y = (&mu + &a * e).map(f64::exp);
            draws.push(y);
        }
        let emp_mean: DVector<f64> = draws.iter().fold(DVector::zeros(3), |acc, y| acc + y) / n as f64;
        for j in 0..3 {
            let var: f64 = draws.iter().map(|y| (y[j] - emp_mean[j]).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!((emp_mean[j] - mean[j]).abs() < 3.0 * se);
            for l in 0..=j {
                let prods: Vec<f64> = draws.iter().map(|y| (y[j] - emp_mean[j]) * (y[l] - emp_mean[l])).collect();
                let c = prods.iter().sum::<f64>() / n as f64;
                let v = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / n as f64;
                let se = (v / n as f64).sqrt();
                assert!((c - cov[(j, l)]).abs() < 3.0 * se, "cov[{j},{l}] {c} vs {} (se {se})", cov[(j, l)]);
            }
        }
    }

    #[test]
    fn rounded_pmf_zero_count_is_half_at_zero_mean() {
        for s2 in [0.01, 1.0, 9.0] {
            assert!((rounded_pmf(&[0], &[0.0], s2).unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rounded_pmf_rejects_negative_counts() {
        assert!(matches!(rounded_pmf(&[1, -1], &[0.0, 0.0], 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn rounded_pmf_normalizes_by_exhaustive_sum() {
        let total: f64 = (0..=1_000_000i64).map(|y| rounded_pmf(&[y], &[0.0], 1.0).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "sum = {total}");
    }

    #[test]
    fn rounded_pmf_far_tail_is_positive() {
        // Both bounds ~40 sd above the mean.
        let p = rounded_log_pmf(&[1_000_000], &[-2.0], 0.1).unwrap();
        assert!(p.is_finite() && p < -1000.0);
    }

    #[test]
    fn rounded_pmf_matches_floor_exp_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = [0.8, 1.6];
        let s2: f64 = 0.6;
        let sd: f64 = s2.sqrt();
        let n = 1_000_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            let y0 = round_latent(m[0] + sd * std_normal(&mut rng)) as i64;
            let y1 = round_latent(m[1] + sd * std_normal(&mut rng)) as i64;
            *counts.entry((y0, y1)).or_insert(0usize) += 1;
        }
        for y in [(0, 0), (1, 3), (2, 5), (0, 4), (3, 10)] {
            let p = rounded_pmf(&[y.0, y.1], &m, s2).unwrap();
            let freq = *counts.get(&y).unwrap_or(&0) as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "{y:?}: {freq} vs {p}");
        }
    }

    #[test]
    fn count_bounds_and_rounding_agree() {
        for y in [0u64, 1, 2, 17, 123_456] {
            let (lo, hi) = count_bounds(y);
            let mid = if y == 0 { -3.0 } else { 0.5 * (lo + hi) };
            assert_eq!(round_latent(mid), y);
        }
        assert_eq!(round_latent(1000.0), u64::MAX);
        assert_eq!(count_bounds(u64::MAX).1, f64::INFINITY);
    }
}
