//! Posterior summaries, evaluation against known truth and convergence
//! diagnostics.
//!
//! Quantiles use linear interpolation between order statistics: for sorted
//! draws `x_0 ≤ … ≤ x_{n−1}` the `p` quantile is `x_h` at fractional index
//! `h = (n − 1) p`. Every covariance quantity is a function of `Σ(x)`, so
//! sign switches of factors between draws do not affect it.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, write_table};
use crate::error::{check_dim, Error, Result};
use crate::model::{CovariateVector, FactorLoadingParams};
use crate::simgen::SimTruth;
use crate::store::{DrawStore, Draws};

pub const DEFAULT_PROBS: [f64; 3] = [0.025, 0.5, 0.975];

/// Quantile of already sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&v, p)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One summarized scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    /// 1-based entry index, comma separated for matrices.
    pub index: String,
    /// Evaluation point or contrast label; empty when not applicable.
    pub level: String,
    pub mean: f64,
    pub quantiles: Vec<f64>,
}

impl SummaryRow {
    fn new(quantity: &str, index: String, level: String, draws: &[f64], probs: &[f64]) -> Self {
        Self {
            quantity: quantity.to_string(),
            index,
            level,
            mean: mean(draws),
            quantiles: quantiles(draws, probs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub probs: Vec<f64>,
    pub rows: Vec<SummaryRow>,
}

fn prob_label(p: f64) -> String {
    if p == 0.5 {
        "median".into()
    } else {
        format!("q{:03}", (p * 1000.0).round() as u64)
    }
}

impl PosteriorSummary {
    pub fn extend(&mut self, other: PosteriorSummary) {
        self.rows.extend(other.rows);
    }

    /// Writes the long-format table
    /// `quantity,index,level,mean,<quantile columns>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = ["quantity", "index", "level", "mean"].iter().map(|s| s.to_string()).collect();
        header.extend(self.probs.iter().map(|&p| prob_label(p)));
        write_table(
            path,
            &header,
            self.rows.iter().map(|r| {
                let mut row = vec![r.quantity.clone(), r.index.clone(), r.level.clone(), fmt_f64(r.mean)];
                row.extend(r.quantiles.iter().map(|q| fmt_f64(*q)));
                row
            }),
        )
    }
}

fn pooled_draws(store: &DrawStore) -> impl Iterator<Item = &Draws> {
    store.pooled().map(|(_, d)| d)
}

/// Per-chain series of every scalar entry of a stored parameter, labelled
/// by 1-based index.
pub fn scalar_series(store: &DrawStore, quantity: &str) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    fn matrices(chains: Vec<&Vec<DMatrix<f64>>>) -> Vec<(String, Vec<Vec<f64>>)> {
        let Some(first) = chains.iter().find_map(|c| c.first()) else {
            return Vec::new();
        };
        let (rows, cols) = first.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for a in 0..rows {
            for b in 0..cols {
                let series = chains.iter().map(|c| c.iter().map(|m| m[(a, b)]).collect()).collect();
                out.push((format!("{},{}", a + 1, b + 1), series));
            }
        }
        out
    }
    fn vectors(chains: Vec<&Vec<DVector<f64>>>) -> Vec<(String, Vec<Vec<f64>>)> {
        let Some(first) = chains.iter().find_map(|c| c.first()) else {
            return Vec::new();
        };
        (0..first.len())
            .map(|a| ((a + 1).to_string(), chains.iter().map(|c| c.iter().map(|v| v[a]).collect()).collect()))
            .collect()
    }
    let d: Vec<&Draws> = pooled_draws(store).collect();
    Ok(match quantity {
        "sigma2" => vec![("1".into(), d.iter().map(|c| c.sigma2.clone()).collect())],
        "tau" => vectors(d.iter().map(|c| &c.tau).collect()),
        "r" => vectors(d.iter().map(|c| &c.r).collect()),
        "q" => matrices(d.iter().map(|c| &c.q).collect()),
        "f" => matrices(d.iter().map(|c| &c.f).collect()),
        "beta" => matrices(d.iter().map(|c| &c.beta).collect()),
        "alpha" => matrices(d.iter().map(|c| &c.alpha).collect()),
        other => {
            return Err(Error::contract(format!(
                "unknown quantity `{other}` (expected sigma2, tau, r, q, f, beta or alpha)"
            )))
        }
    })
}

/// Quantile summary of every entry of a stored parameter, pooling chains.
pub fn summarize(store: &DrawStore, quantity: &str, probs: &[f64]) -> Result<PosteriorSummary> {
    if store.n_draws() == 0 {
        return Err(Error::contract("the draw store holds no draws"));
    }
    let rows = scalar_series(store, quantity)?
        .into_iter()
        .map(|(index, chains)| {
            let all: Vec<f64> = chains.concat();
            SummaryRow::new(quantity, index, String::new(), &all, probs)
        })
        .collect();
    Ok(PosteriorSummary {
        probs: probs.to_vec(),
        rows,
    })
}

/// `ρ_jl = Σ_jl / √(Σ_jj Σ_ll)`, clamped to `[−1, 1]` with an exact unit
/// diagonal.
pub fn correlation(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let d: Vec<f64> = sigma.diagonal().iter().map(|v| v.sqrt()).collect();
    DMatrix::from_fn(sigma.nrows(), sigma.ncols(), |a, b| {
        if a == b {
            1.0
        } else {
            (sigma[(a, b)] / (d[a] * d[b])).clamp(-1.0, 1.0)
        }
    })
}

/// `Σ(x)` of every saved draw, pooling chains.
pub fn sigma_draws(store: &DrawStore, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let x = CovariateVector::new(x.to_vec())?;
    check_dim("covariate vector length", store.manifest().cov_names.len(), x.len())?;
    let mut out = Vec::with_capacity(store.n_draws());
    for d in pooled_draws(store) {
        for t in 0..d.len() {
            let p = FactorLoadingParams::new(d.q[t].clone(), d.f[t].clone(), d.sigma2[t])?;
            out.push(p.sigma_at(&x)?);
        }
    }
    Ok(out)
}

/// Entrywise posterior median and mean of `ρ(x)`.
pub fn correlation_point_estimates(store: &DrawStore, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let draws: Vec<DMatrix<f64>> = sigma_draws(store, x)?.iter().map(correlation).collect();
    if draws.is_empty() {
        return Err(Error::contract("the draw store holds no draws"));
    }
    let j = draws[0].nrows();
    let mut median = DMatrix::identity(j, j);
    let mut avg = DMatrix::identity(j, j);
    let mut buf = vec![0.0; draws.len()];
    for a in 0..j {
        for b in a + 1..j {
            for (slot, m) in buf.iter_mut().zip(&draws) {
                *slot = m[(a, b)];
            }
            let m = avg_and_median(&mut buf);
            avg[(a, b)] = m.0;
            avg[(b, a)] = m.0;
            median[(a, b)] = m.1;
            median[(b, a)] = m.1;
        }
    }
    Ok((median, avg))
}

fn avg_and_median(buf: &mut [f64]) -> (f64, f64) {
    let m = mean(buf);
    buf.sort_by(f64::total_cmp);
    (m, quantile_sorted(buf, 0.5))
}

/// Entrywise posterior medians of `ρ(x)` at each point.
pub fn median_correlations(store: &DrawStore, points: &[DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
    points
        .iter()
        .map(|x| correlation_point_estimates(store, x.as_slice()).map(|(m, _)| m))
        .collect()
}

/// Quantile summary of `ρ_jl(x)`, `j < l`, at each point. `level` is the
/// 1-based point number.
pub fn correlation_summary(store: &DrawStore, points: &[DVector<f64>], probs: &[f64]) -> Result<PosteriorSummary> {
    let mut rows = Vec::new();
    for (e, x) in points.iter().enumerate() {
        let draws: Vec<DMatrix<f64>> = sigma_draws(store, x.as_slice())?.iter().map(correlation).collect();
        let j = draws.first().map_or(0, |m| m.nrows());
        for a in 0..j {
            for b in a + 1..j {
                let v: Vec<f64> = draws.iter().map(|m| m[(a, b)]).collect();
                rows.push(SummaryRow::new("rho", format!("{},{}", a + 1, b + 1), (e + 1).to_string(), &v, probs));
            }
        }
    }
    Ok(PosteriorSummary {
        probs: probs.to_vec(),
        rows,
    })
}

/// Root-mean-square difference of the strictly upper-triangular entries,
/// over all points.
pub fn rmse_correlations(estimates: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> Result<f64> {
    check_dim("number of evaluation points", truth.len(), estimates.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (est, tr) in estimates.iter().zip(truth) {
        check_dim("correlation matrix size", tr.nrows(), est.nrows())?;
        for a in 0..tr.nrows() {
            for b in a + 1..tr.ncols() {
                sum += (est[(a, b)] - tr[(a, b)]).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::contract("no correlation pairs to compare"));
    }
    Ok((sum / count as f64).sqrt())
}

/// Summary of one mean-coefficient contrast for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub feature: usize,
    /// Mean covariate columns `(a, b)` of `β_a − β_b`.
    pub pair: (usize, usize),
    pub mean: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    /// Whether the 95% interval excludes zero.
    pub excludes_zero: bool,
}

/// Draws of `β_ja − β_jb` for every feature, pooling chains.
pub fn contrast_draws(store: &DrawStore, pair: (usize, usize)) -> Result<Vec<Vec<f64>>> {
    let m = store.manifest();
    let p = m.mean_names.len();
    if pair.0 >= p || pair.1 >= p {
        return Err(Error::contract(format!("contrast columns {pair:?} out of range for {p} mean covariates")));
    }
    let mut out = vec![Vec::with_capacity(store.n_draws()); m.n_features];
    for d in pooled_draws(store) {
        for b in &d.beta {
            for (j, v) in out.iter_mut().enumerate() {
                v.push(b[(j, pair.0)] - b[(j, pair.1)]);
            }
        }
    }
    Ok(out)
}

pub fn beta_contrasts(store: &DrawStore, pairs: &[(usize, usize)]) -> Result<Vec<ContrastSummary>> {
    let mut out = Vec::new();
    for &pair in pairs {
        for (feature, draws) in contrast_draws(store, pair)?.iter().enumerate() {
            let q = quantiles(draws, &DEFAULT_PROBS);
            out.push(ContrastSummary {
                feature,
                pair,
                mean: mean(draws),
                q025: q[0],
                median: q[1],
                q975: q[2],
                excludes_zero: q[0] > 0.0 || q[2] < 0.0,
            });
        }
    }
    Ok(out)
}

/// Contrast summaries in the long format; `quantity` is `contrast`, `level`
/// names the pair as `a-b`.
pub fn contrast_table(summaries: &[ContrastSummary], mean_names: &[String]) -> PosteriorSummary {
    let rows = summaries
        .iter()
        .map(|c| SummaryRow {
            quantity: "contrast".into(),
            index: (c.feature + 1).to_string(),
            level: format!("{}-{}", mean_names[c.pair.0], mean_names[c.pair.1]),
            mean: c.mean,
            quantiles: vec![c.q025, c.median, c.q975],
        })
        .collect();
    PosteriorSummary {
        probs: DEFAULT_PROBS.to_vec(),
        rows,
    }
}

fn chain_stats(c: &[f64]) -> (f64, f64) {
    let n = c.len() as f64;
    let m = mean(c);
    (m, c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn split_halves(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect()
}

/// Split-chain potential scale reduction factor. Each chain is cut in
/// half and the halves are treated as separate chains. Returns NaN when
/// every half is constant.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split_halves(chains);
    let m = halves.len() as f64;
    let n = halves.first().map_or(0, |h| h.len());
    if m < 2.0 || n < 2 {
        return f64::NAN;
    }
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| chain_stats(h)).collect();
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let nf = n as f64;
    let b = nf / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if w <= 0.0 {
        return f64::NAN;
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    (var_plus / w).sqrt()
}

/// Autocovariance at `lag` with divisor `n`.
fn autocov(c: &[f64], m: f64, lag: usize) -> f64 {
    let n = c.len();
    (0..n - lag).map(|i| (c[i] - m) * (c[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size from split chains: multi-chain autocorrelation
/// estimates summed over Geyer's initial monotone positive sequence. A
/// constant series has ESS 0.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let halves = split_halves(chains);
    let m = halves.len();
    let n = halves.first().map_or(0, |h| h.len());
    if m == 0 || n < 4 {
        return 0.0;
    }
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| chain_stats(h)).collect();
    let nf = n as f64;
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    if !(w > 0.0) {
        log::warn!("effective sample size of a constant series is reported as 0");
        return 0.0;
    }
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m as f64;
    let b_over_n = if m > 1 {
        stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    let rho = |lag: usize| -> f64 {
        let acov = halves
            .iter()
            .zip(&stats)
            .map(|(h, s)| autocov(h, s.0, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (w - acov * nf / (nf - 1.0)) / var_plus
    };
    let mut tau_sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 { 1.0 + rho(1) } else { rho(2 * k) + rho(2 * k + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau_sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1.0 / (m as f64 * nf).log10().max(1.0));
    m as f64 * nf / tau
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub quantity: String,
    pub index: String,
    pub rhat: f64,
    pub ess: f64,
}

/// Split-R̂ and ESS of `σ²`, every `τ_k`, `β` entry and baseline.
pub fn diagnostics(store: &DrawStore) -> Result<Vec<Diagnostic>> {
    let mut out = Vec::new();
    for quantity in ["sigma2", "tau", "beta", "alpha"] {
        for (index, chains) in scalar_series(store, quantity)? {
            out.push(Diagnostic {
                quantity: quantity.into(),
                index,
                rhat: split_rhat(&chains),
                ess: ess(&chains),
            });
        }
    }
    Ok(out)
}

pub fn write_diagnostics(path: &Path, diags: &[Diagnostic]) -> Result<()> {
    let header: Vec<String> = ["quantity", "index", "rhat", "ess"].iter().map(|s| s.to_string()).collect();
    write_table(
        path,
        &header,
        diags
            .iter()
            .map(|d| vec![d.quantity.clone(), d.index.clone(), fmt_f64(d.rhat), fmt_f64(d.ess)]),
    )
}

/// Evaluation metrics written by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse_correlation: f64,
    pub coverage_beta_95: f64,
    pub n_draws: usize,
    pub runtime_seconds: f64,
}

fn column_of(names: &[String], name: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::contract(format!("mean covariate `{name}` is not in the fitted model")))
}

/// Fraction of 95% intervals covering the truth. Contrasts are used when the
/// truth defines any, otherwise every `β` entry.
pub fn beta_coverage(store: &DrawStore, truth: &SimTruth) -> Result<f64> {
    let names = &store.manifest().mean_names;
    check_dim("mean coefficients", truth.beta.ncols(), names.len())?;
    let mut hits = 0usize;
    let mut total = 0usize;
    if truth.contrasts.is_empty() {
        for (index, chains) in scalar_series(store, "beta")? {
            let mut it = index.split(',').map(|v| v.parse::<usize>().unwrap() - 1);
            let (j, p) = (it.next().unwrap(), it.next().unwrap());
            let q = quantiles(&chains.concat(), &[0.025, 0.975]);
            let t = truth.beta[(j, p)];
            hits += (q[0] <= t && t <= q[1]) as usize;
            total += 1;
        }
    } else {
        for (a, b) in &truth.contrasts {
            let pair = (column_of(names, a)?, column_of(names, b)?);
            for s in beta_contrasts(store, &[pair])? {
                let t = truth.beta[(s.feature, pair.0)] - truth.beta[(s.feature, pair.1)];
                hits += (s.q025 <= t && t <= s.q975) as usize;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::contract("no mean coefficients to evaluate"));
    }
    Ok(hits as f64 / total as f64)
}

/// Correlation RMSE at the truth's evaluation points and `β` coverage.
pub fn evaluate(store: &DrawStore, truth: &SimTruth, runtime_seconds: f64) -> Result<Metrics> {
    let m = store.manifest();
    check_dim("features of truth vs fit", truth.mu.ncols(), m.n_features)?;
    let est = median_correlations(store, &truth.eval_points)?;
    let tr: Vec<DMatrix<f64>> = (0..truth.sigma.len()).map(|e| truth.correlation(e)).collect();
    Ok(Metrics {
        rmse_correlation: rmse_correlations(&est, &tr)?,
        coverage_beta_95: beta_coverage(store, truth)?,
        n_draws: store.n_draws(),
        runtime_seconds,
    })
}
