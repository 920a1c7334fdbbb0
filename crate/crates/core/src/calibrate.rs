//! Data-driven fixed hyperparameters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::CountTable;
use crate::error::{Error, Result};
use crate::priors::{DirHsHyper, StackHyper};

/// Pseudocount added before taking logs of counts.
pub const PSEUDOCOUNT: f64 = 0.01;

/// Every fixed hyperparameter of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub a_phi: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub u2_beta: f64,
    pub nu_alpha: f64,
    /// Per-feature baseline targets, used when baselines are subject-specific.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_alpha_features: Option<Vec<f64>>,
    pub nu_r: f64,
    pub u2_alpha: f64,
    pub u_r2: f64,
    pub u2_xi_r: f64,
    pub c_alpha: f64,
    pub c_r: f64,
    pub a_omega_alpha: f64,
    pub b_omega_alpha: f64,
    pub a_omega_r: f64,
    pub b_omega_r: f64,
    #[serde(rename = "L_alpha")]
    pub l_alpha: usize,
    #[serde(rename = "L_r")]
    pub l_r: usize,
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_phi", self.a_phi),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("u2_beta", self.u2_beta),
            ("u2_alpha", self.u2_alpha),
            ("u_r2", self.u_r2),
            ("u2_xi_r", self.u2_xi_r),
            ("c_alpha", self.c_alpha),
            ("c_r", self.c_r),
            ("a_omega_alpha", self.a_omega_alpha),
            ("b_omega_alpha", self.b_omega_alpha),
            ("a_omega_r", self.a_omega_r),
            ("b_omega_r", self.b_omega_r),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("hyperparameter {name} must be positive and finite, found {v}")));
            }
        }
        if !self.nu_alpha.is_finite() || !self.nu_r.is_finite() {
            return Err(Error::contract("mean targets must be finite"));
        }
        if let Some(v) = &self.nu_alpha_features {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::contract("per-feature mean targets must be finite"));
            }
        }
        if self.k < 1 {
            return Err(Error::contract("K must be at least 1"));
        }
        if self.l_alpha < 2 || self.l_r < 2 {
            return Err(Error::contract("truncation levels must be at least 2"));
        }
        Ok(())
    }

    pub fn dirhs(&self) -> DirHsHyper {
        DirHsHyper {
            a_phi: self.a_phi,
            a_tau: self.a_tau,
            b_tau: self.b_tau,
            k: self.k,
        }
    }

    pub fn alpha_stack(&self) -> StackHyper {
        StackHyper {
            levels: self.l_alpha,
            concentration: self.c_alpha,
            a_omega: self.a_omega_alpha,
            b_omega: self.b_omega_alpha,
            xi_var: self.u2_alpha,
            kernel_var: 0.0,
        }
    }

    pub fn r_stack(&self) -> StackHyper {
        StackHyper {
            levels: self.l_r,
            concentration: self.c_r,
            a_omega: self.a_omega_r,
            b_omega: self.b_omega_r,
            xi_var: self.u2_xi_r,
            kernel_var: self.u_r2,
        }
    }

    /// Baseline targets: one per feature in subject mode, otherwise one shared value.
    pub fn alpha_targets(&self, n_features: usize, per_feature: bool) -> Result<Vec<f64>> {
        if !per_feature {
            return Ok(vec![self.nu_alpha]);
        }
        match &self.nu_alpha_features {
            Some(v) if v.len() == n_features => Ok(v.clone()),
            Some(v) => Err(Error::DimensionMismatch {
                context: "hyper: per-feature baseline targets",
                expected: n_features,
                found: v.len(),
            }),
            None => Ok(vec![self.nu_alpha; n_features]),
        }
    }

    /// Defaults that do not depend on data, for `n_features` features and `k` factors.
    pub fn generic(n_features: usize, k: usize, nu_alpha: f64, nu_r: f64) -> Self {
        let j = n_features as f64;
        Self {
            k,
            a_phi: 1.0 / (0.2 * j),
            a_tau: 0.1,
            b_tau: 1.0 / j,
            a_sigma: 3.0,
            b_sigma: 3.0,
            u2_beta: 10.0,
            nu_alpha,
            nu_alpha_features: None,
            nu_r,
            u2_alpha: 10.0,
            u_r2: 0.01,
            u2_xi_r: 1.0,
            c_alpha: 3.0,
            c_r: 3.0,
            a_omega_alpha: 5.0,
            b_omega_alpha: 5.0,
            a_omega_r: 5.0,
            b_omega_r: 5.0,
            l_alpha: 35,
            l_r: 30,
        }
    }
}

fn log_counts(counts: &CountTable) -> DMatrix<f64> {
    counts.counts().map(|y| (y as f64 + PSEUDOCOUNT).ln())
}

/// Smallest number of principal components of the clr-transformed counts
/// whose eigenvalues reach `variance_target` of the total variance.
pub fn choose_k_by_pca(counts: &CountTable, variance_target: f64) -> Result<usize> {
    let (n, j) = (counts.n_samples(), counts.n_features());
    if n < 2 {
        return Err(Error::contract("PCA needs at least two samples"));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::contract(format!("variance target {variance_target} outside (0, 1]")));
    }
    let mut clr = log_counts(counts);
    for mut row in clr.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    let means = clr.row_mean();
    for mut row in clr.row_iter_mut() {
        row -= &means;
    }
    let cov = clr.transpose() * &clr / (n as f64 - 1.0);
    let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let max = eig.first().copied().unwrap_or(0.0);
    if !(max > 0.0) {
        return Ok(1);
    }
    for e in &mut eig {
        if *e < 1e-10 * max {
            *e = 0.0;
        }
    }
    let total: f64 = eig.iter().sum();
    let cap = (n - 1).min(j).max(1);
    let mut cum = 0.0;
    for (i, e) in eig.iter().enumerate() {
        cum += e;
        if cum >= variance_target * total * (1.0 - 1e-12) {
            return Ok((i + 1).min(cap));
        }
    }
    Ok(cap)
}

/// `ν^r`: the average log total count per sample.
pub fn size_factor_target(counts: &CountTable) -> Result<f64> {
    let n = counts.n_samples();
    let mut sum = 0.0;
    for i in 0..n {
        let total: f64 = counts.counts().row(i).iter().map(|&y| y as f64).sum();
        if total <= 0.0 {
            return Err(Error::contract(format!(
                "sample `{}` has zero total count",
                counts.sample_ids()[i]
            )));
        }
        sum += total.ln();
    }
    Ok(sum / n as f64)
}

/// Hyperparameters calibrated from the count table.
pub fn default_hypers(counts: &CountTable) -> Result<HyperConfig> {
    let (n, j) = (counts.n_samples(), counts.n_features());
    if n == 0 || j == 0 {
        return Err(Error::contract("count table is empty"));
    }
    let nu_r = size_factor_target(counts)?;
    let logs = log_counts(counts);
    let nu_alpha = logs.mean() - nu_r;
    let k = if n >= 2 { choose_k_by_pca(counts, 0.95)? } else { 1 };
    let mut h = HyperConfig::generic(j, k, nu_alpha, nu_r);
    if counts.has_subjects() {
        h.nu_alpha_features = Some(logs.column_iter().map(|c| c.mean() - nu_r).collect());
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table(rows: &[&[u64]]) -> CountTable {
        let n = rows.len();
        let j = rows[0].len();
        let flat: Vec<u64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        CountTable::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..j).map(|c| format!("f{c}")).collect(),
            DMatrix::from_row_slice(n, j, &flat),
        )
        .unwrap()
    }

    #[test]
    fn single_sample_size_target() {
        // Total count 148 ≈ e^5 is not exact, so build the oracle from the total itself.
        let t = table(&[&[100, 48]]);
        assert_relative_eq!(size_factor_target(&t).unwrap(), 148f64.ln());
        let h = default_hypers(&t).unwrap();
        assert_relative_eq!(h.nu_r, 148f64.ln());
    }

    #[test]
    fn a_phi_for_fifteen_features() {
        let rows: Vec<Vec<u64>> = (0..4).map(|i| (0..15).map(|j| (i * 7 + j * 3) as u64 % 11 + 1).collect()).collect();
        let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
        let h = default_hypers(&table(&refs)).unwrap();
        assert_relative_eq!(h.a_phi, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(h.b_tau, 1.0 / 15.0);
        assert_eq!((h.l_alpha, h.l_r), (35, 30));
    }

    #[test]
    fn baseline_target_matches_loop_oracle() {
        let t = table(&[&[0, 5, 9], &[3, 0, 120], &[44, 2, 1]]);
        let h = default_hypers(&t).unwrap();
        let mut nu_r = 0.0;
        for i in 0..3 {
            nu_r += (t.counts().row(i).iter().sum::<u64>() as f64).ln();
        }
        nu_r /= 3.0;
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += (t.get(i, j) as f64 + 0.01).ln() - nu_r;
            }
        }
        assert_relative_eq!(h.nu_alpha, acc / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn per_feature_targets_in_subject_mode() {
        let t = table(&[&[1, 10], &[3, 30]])
            .with_subjects("subject", vec!["a".into(), "b".into()])
            .unwrap();
        let h = default_hypers(&t).unwrap();
        let v = h.nu_alpha_features.clone().unwrap();
        let expected0 = ((1.01f64).ln() + (3.01f64).ln()) / 2.0 - h.nu_r;
        assert_relative_eq!(v[0], expected0, epsilon = 1e-12);
        assert_relative_eq!((v[0] + v[1]) / 2.0, h.nu_alpha, epsilon = 1e-12);
    }

    #[test]
    fn empty_or_zero_total_is_an_error() {
        let t = table(&[&[0, 0], &[1, 1]]);
        assert!(default_hypers(&t).is_err());
    }

    #[test]
    fn rank_two_clr_data() {
        // Three distinct compositions, each repeated: the centered clr rows span two dimensions.
        let a: &[u64] = &[100, 10, 1, 50];
        let b: &[u64] = &[5, 200, 30, 8];
        let c: &[u64] = &[40, 3, 300, 20];
        let t = table(&[a, b, c, a, b, c]);
        assert_eq!(choose_k_by_pca(&t, 1.0).unwrap(), 2);
        assert_eq!(choose_k_by_pca(&t, 0.95).unwrap(), 2);
    }

    #[test]
    fn constant_table_gives_one() {
        let t = table(&[&[3, 3, 3], &[3, 3, 3], &[3, 3, 3]]);
        assert_eq!(choose_k_by_pca(&t, 0.95).unwrap(), 1);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let h = HyperConfig::generic(10, 4, 1.0, 7.0);
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"K\":4") && s.contains("\"L_alpha\":35"));
        let back: HyperConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        let bad = s.replacen('{', "{\"bogus\":1,", 1);
        assert!(serde_json::from_str::<HyperConfig>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn pca_choice_is_monotone(seed in 0u64..200, t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let flat: Vec<u64> = (0..8 * 6).map(|_| rng.random_range(0..50)).collect();
            let t = CountTable::new(
                (0..8).map(|i| format!("s{i}")).collect(),
                (0..6).map(|c| format!("f{c}")).collect(),
                DMatrix::from_row_slice(8, 6, &flat),
            ).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(choose_k_by_pca(&t, lo).unwrap() <= choose_k_by_pca(&t, hi).unwrap());
        }

        #[test]
        fn defaults_are_deterministic(seed in 0u64..100) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let flat: Vec<u64> = (0..5 * 4).map(|_| rng.random_range(1..90)).collect();
            let t = CountTable::new(
                (0..5).map(|i| format!("s{i}")).collect(),
                (0..4).map(|c| format!("f{c}")).collect(),
                DMatrix::from_row_slice(5, 4, &flat),
            ).unwrap();
            prop_assert_eq!(default_hypers(&t).unwrap(), default_hypers(&t).unwrap());
        }
    }
}
