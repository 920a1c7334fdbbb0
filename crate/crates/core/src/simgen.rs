//! Synthetic data with known truth.
//!
//! Three scenarios:
//!
//! - `sim1`: two crossed factors (two and three levels), five samples per
//!   cell, two true factors whose covariate weights vanish at chosen cells.
//! - `sim2`: subjects observed under two conditions, a baseline factor
//!   block plus a covariate-dependent block, three-atom baselines.
//! - `sim3`: as `sim2`, but the covariance of each condition is an arbitrary
//!   sparse correlation matrix built with a C-vine.
//!
//! Every generator is a pure function of its seed. Truth quantities use
//! one RNG stream and observation noise another, so noise can be varied with
//! the truth held fixed.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, read_table, write_table, CountTable, CovariateDesign, Role};
use crate::dist;
use crate::error::{Error, Result};
use crate::model::round_latent;

const TRUTH_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const RETRY_STREAM: u64 = 2;
const MAX_RETRIES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Sim1,
    Sim2,
    Sim3,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim1" => Ok(Scenario::Sim1),
            "sim2" => Ok(Scenario::Sim2),
            "sim3" => Ok(Scenario::Sim3),
            other => Err(Error::contract(format!("unknown scenario `{other}` (expected sim1, sim2 or sim3)"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Sim1 => "sim1",
            Scenario::Sim2 => "sim2",
            Scenario::Sim3 => "sim3",
        })
    }
}

/// Which vine partial correlations are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VineSparsity {
    pub cutoff: f64,
    /// Zero when `|p| < cutoff`; otherwise only when `p < cutoff`.
    pub two_sided: bool,
}

impl Default for VineSparsity {
    fn default() -> Self {
        Self {
            cutoff: 0.8,
            two_sided: true,
        }
    }
}

impl VineSparsity {
    fn apply(&self, p: f64) -> f64 {
        let drop = if self.two_sided { p.abs() < self.cutoff } else { p < self.cutoff };
        if drop {
            0.0
        } else {
            p
        }
    }
}

/// Ground truth of a simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub scenario: Scenario,
    pub seed: u64,
    /// Covariance covariate vectors (intercept first) at which the truth is
    /// evaluated.
    pub eval_points: Vec<DVector<f64>>,
    /// `Σ(x)` at each evaluation point.
    pub sigma: Vec<DMatrix<f64>>,
    /// J×P̃ mean coefficients.
    pub beta: DMatrix<f64>,
    /// G×J baselines, one row per subject or a single shared row.
    pub alpha: DMatrix<f64>,
    pub r: DVector<f64>,
    /// N×J log-scale means.
    pub mu: DMatrix<f64>,
    /// N×J latent log-abundances; counts are `floor(exp(latent))`.
    pub latent: DMatrix<f64>,
    /// J×K loadings and K×P covariate weights when the covariance has factor
    /// form (`Σ(x) = Λ(x)Λ(x)' + σ²I`, `λ_jk = q_jk f_k·x`); empty otherwise.
    pub loadings: DMatrix<f64>,
    pub factor_weights: DMatrix<f64>,
    /// Pairs of mean covariate names `(a, b)` whose difference `β_a − β_b` is
    /// of interest.
    pub contrasts: Vec<(String, String)>,
}

impl SimTruth {
    /// True correlation matrix at evaluation point `e`.
    pub fn correlation(&self, e: usize) -> DMatrix<f64> {
        crate::posterior::correlation(&self.sigma[e])
    }
}

/// A generated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub counts: CountTable,
    pub design: CovariateDesign,
    pub truth: SimTruth,
}

fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut truth = ChaCha8Rng::seed_from_u64(seed);
    truth.set_stream(TRUTH_STREAM);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(NOISE_STREAM);
    (truth, noise)
}

/// Zero with probability 1/2, otherwise a standard normal moved away from
/// zero by `shift`.
fn sparse_shifted<R: Rng + ?Sized>(rng: &mut R, shift: f64) -> f64 {
    let keep = rng.random::<f64>() < 0.5;
    let v = dist::std_normal(rng);
    if keep {
        v + v.signum() * shift
    } else {
        0.0
    }
}

fn shifted<R: Rng + ?Sized>(rng: &mut R, shift: f64) -> f64 {
    let v = dist::std_normal(rng);
    v + v.signum() * shift
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Draws `N(μ_i, Σ_i)` for every sample and rounds to counts.
/// A factor `L` with `L L' = Σ`: the Cholesky factor when it exists,
/// otherwise the symmetric root with round-off negative eigenvalues set to 0.
fn covariance_root(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(c) = sigma.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = sigma.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() < -1e-10 * scale {
        return Err(Error::Internal("true covariance is not positive semidefinite".into()));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

fn draw_latent(
    mu: &DMatrix<f64>,
    sigma: &[DMatrix<f64>],
    point_of: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DMatrix<u64>)> {
    let (n, j) = mu.shape();
    let chols: Vec<DMatrix<f64>> = sigma.iter().map(covariance_root).collect::<Result<_>>()?;
    let mut latent = DMatrix::zeros(n, j);
    for i in 0..n {
        let e = DVector::from_fn(j, |_, _| dist::std_normal(rng));
        let z = mu.row(i).transpose() + &chols[point_of[i]] * e;
        latent.set_row(i, &z.transpose());
    }
    let y = latent.map(round_latent);
    Ok((latent, y))
}

fn mean_matrix(r: &DVector<f64>, alpha: &DMatrix<f64>, group: &[usize], beta: &DMatrix<f64>, x_mean: &DMatrix<f64>) -> DMatrix<f64> {
    let reg = x_mean * beta.transpose();
    DMatrix::from_fn(r.len(), alpha.ncols(), |i, j| r[i] + alpha[(group[i], j)] + reg[(i, j)])
}

fn spiked(loadings: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let mut s = loadings * loadings.transpose();
    for j in 0..s.nrows() {
        s[(j, j)] += sigma2;
    }
    s.clone() * 0.5 + s.transpose() * 0.5
}

/// Scenario 1 with `n_features` features and `per_cell` samples in each of
/// the six cells.
///
/// Mean covariates are the full indicator sets `b0, b1` and `t1, t2, t3`;
/// the covariance uses the intercept with `b1, t2, t3`. Factor 1 vanishes
/// at `x = (1, 0, 1, 0)` and factor 2 at `x = (1, 1, 0, 0)`.
pub fn gen_sim1(seed: u64, n_features: usize, per_cell: usize) -> Result<SimData> {
    if n_features == 0 || per_cell == 0 {
        return Err(Error::contract("sim1 needs at least one feature and one sample per cell"));
    }
    let (mut rng, mut noise) = rngs(seed);
    let j_n = n_features;
    let n = 6 * per_cell;
    let mut x_mean = DMatrix::zeros(n, 5);
    let mut x_cov = DMatrix::zeros(n, 4);
    for b in 0..2 {
        for t in 0..3 {
            for rep in 0..per_cell {
                let i = (b * 3 + t) * per_cell + rep;
                x_mean[(i, b)] = 1.0;
                x_mean[(i, 2 + t)] = 1.0;
                x_cov[(i, 0)] = 1.0;
                x_cov[(i, 1)] = b as f64;
                x_cov[(i, 2)] = (t == 1) as u8 as f64;
                x_cov[(i, 3)] = (t == 2) as u8 as f64;
            }
        }
    }

    let q = DMatrix::from_fn(j_n, 2, |_, _| sparse_shifted(&mut rng, 1.0));
    let mut f = DMatrix::from_fn(2, 4, |_, _| uniform(&mut rng, -1.0, 1.0));
    f[(0, 2)] = -f[(0, 0)];
    f[(1, 1)] = -f[(1, 0)];
    let sigma2 = 0.25;
    let r = DVector::from_fn(n, |_, _| uniform(&mut rng, 0.0, 2.0));
    let alpha = DMatrix::from_fn(1, j_n, |_, _| {
        if rng.random::<f64>() < 0.3 {
            -1.0 + dist::std_normal(&mut rng)
        } else {
            5.0 + 0.5 * dist::std_normal(&mut rng)
        }
    });
    let beta = DMatrix::from_fn(j_n, 5, |_, _| sparse_shifted(&mut rng, 1.0));

    let eval_points: Vec<DVector<f64>> = (0..n).map(|i| x_cov.row(i).transpose()).collect();
    let sigma: Vec<DMatrix<f64>> = eval_points
        .iter()
        .map(|x| {
            let h = &f * x;
            let lambda = DMatrix::from_fn(j_n, 2, |j, k| q[(j, k)] * h[k]);
            spiked(&lambda, sigma2)
        })
        .collect();
    let group = vec![0; n];
    let mu = mean_matrix(&r, &alpha, &group, &beta, &x_mean);
    let point_of: Vec<usize> = (0..n).collect();
    let (latent, y) = draw_latent(&mu, &sigma, &point_of, &mut noise)?;

    let names: Vec<String> = ["b0", "b1", "t1", "t2", "t3"].iter().map(|s| s.to_string()).collect();
    let roles = vec![Role::Mean, Role::Both, Role::Mean, Role::Both, Role::Both];
    let design = CovariateDesign::new(names, x_mean, roles)?;
    let counts = CountTable::new(ids("s", n), ids("otu", j_n), y)?;
    let pair = |a: &str, b: &str| (a.to_string(), b.to_string());
    Ok(SimData {
        counts,
        design,
        truth: SimTruth {
            scenario: Scenario::Sim1,
            seed,
            eval_points,
            sigma,
            beta,
            alpha,
            r,
            mu,
            latent,
            loadings: q,
            factor_weights: f,
            contrasts: vec![pair("b0", "b1"), pair("t2", "t1"), pair("t3", "t1"), pair("t3", "t2")],
        },
    })
}

/// Shared mean-side construction of scenarios 2 and 3: subjects, covariates,
/// three-atom baselines, size factors and mean coefficients.
struct SubjectLayout {
    n_subjects: usize,
    /// Condition indicator per sample.
    xd: Vec<f64>,
    /// Continuous covariate per sample (constant within subject).
    xc: Vec<f64>,
    subject: Vec<usize>,
    alpha: DMatrix<f64>,
    r: DVector<f64>,
    beta: DMatrix<f64>,
}

fn subject_layout(rng: &mut ChaCha8Rng, n_subjects: usize, n_features: usize) -> SubjectLayout {
    let s_n = n_subjects;
    let n = 2 * s_n;
    let xc_subject: Vec<f64> = (0..s_n).map(|_| dist::std_normal(rng)).collect();
    // Samples 1..S are under condition 1, samples S+1..2S under condition 0.
    let subject: Vec<usize> = (0..n).map(|i| i % s_n).collect();
    let xd: Vec<f64> = (0..n).map(|i| if i < s_n { 1.0 } else { 0.0 }).collect();
    let xc: Vec<f64> = subject.iter().map(|&s| xc_subject[s]).collect();

    let atoms: Vec<[f64; 3]> = (0..n_features)
        .map(|_| {
            let sd = 0.5f64.sqrt();
            [-5.0, 2.5 + sd * dist::std_normal(rng), 5.0 + sd * dist::std_normal(rng)]
        })
        .collect();
    let weights: Vec<Vec<f64>> = (0..n_features).map(|_| dist::dirichlet(rng, &[30.0, 40.0, 30.0])).collect();
    let alpha = DMatrix::from_fn(s_n, n_features, |_, j| {
        let u: f64 = rng.random();
        let l = if u < weights[j][0] {
            0
        } else if u < weights[j][0] + weights[j][1] {
            1
        } else {
            2
        };
        atoms[j][l]
    });
    let r = DVector::from_fn(n, |_, _| uniform(rng, 0.0, 2.0));
    let beta = DMatrix::from_fn(n_features, 2, |_, _| sparse_shifted(rng, 1.0));
    SubjectLayout {
        n_subjects: s_n,
        xd,
        xc,
        subject,
        alpha,
        r,
        beta,
    }
}

fn subject_counts(layout: &SubjectLayout, n_features: usize, y: DMatrix<u64>) -> Result<CountTable> {
    let labels = layout.subject.iter().map(|s| format!("subj{}", s + 1)).collect();
    CountTable::new(ids("s", y.nrows()), ids("otu", n_features), y)?.with_subjects("subject", labels)
}

/// Scenario 2 with `n_subjects` subjects (two samples each) and
/// `n_features` features, a multiple of four.
///
/// Features in the first quarter carry only baseline loadings, the second
/// quarter is independent noise, and the second half carries both baseline
/// and covariate-dependent loadings.
pub fn gen_sim2(seed: u64, n_subjects: usize, n_features: usize) -> Result<SimData> {
    if n_subjects == 0 || n_features == 0 || n_features % 4 != 0 {
        return Err(Error::contract("sim2 needs at least one subject and a feature count divisible by 4"));
    }
    let (mut rng, mut noise) = rngs(seed);
    let j_n = n_features;
    let quarter = j_n / 4;
    let layout = subject_layout(&mut rng, n_subjects, j_n);
    let n = 2 * layout.n_subjects;

    let base = DMatrix::from_fn(j_n, 2, |j, _| {
        let v = shifted(&mut rng, 0.5);
        if (quarter..2 * quarter).contains(&j) {
            0.0
        } else {
            v
        }
    });
    let q = DMatrix::from_fn(j_n, 3, |j, _| {
        let v = shifted(&mut rng, 0.5);
        if j >= 2 * quarter {
            v
        } else {
            0.0
        }
    });
    let f1 = DMatrix::from_fn(3, 3, |_, _| uniform(&mut rng, -1.0, 1.0));
    let sigma2 = 0.25;

    // The baseline block is a pair of factors whose weights load on the
    // intercept only.
    let mut loadings = DMatrix::zeros(j_n, 5);
    loadings.columns_mut(0, 2).copy_from(&base);
    loadings.columns_mut(2, 3).copy_from(&q);
    let mut f = DMatrix::zeros(5, 3);
    f[(0, 0)] = 1.0;
    f[(1, 0)] = 1.0;
    f.rows_mut(2, 3).copy_from(&f1);

    let x_cov = DMatrix::from_fn(n, 3, |i, c| match c {
        0 => 1.0,
        1 => layout.xd[i],
        _ => layout.xc[i],
    });
    let x_mean = x_cov.columns(1, 2).into_owned();
    let eval_points: Vec<DVector<f64>> = (0..n).map(|i| x_cov.row(i).transpose()).collect();
    let sigma: Vec<DMatrix<f64>> = eval_points
        .iter()
        .map(|x| {
            let h = &f * x;
            spiked(&DMatrix::from_fn(j_n, 5, |j, k| loadings[(j, k)] * h[k]), sigma2)
        })
        .collect();
    let mu = mean_matrix(&layout.r, &layout.alpha, &layout.subject, &layout.beta, &x_mean);
    let point_of: Vec<usize> = (0..n).collect();
    let (latent, y) = draw_latent(&mu, &sigma, &point_of, &mut noise)?;

    let design = CovariateDesign::new(vec!["xd".into(), "xc".into()], x_mean, vec![Role::Both, Role::Both])?;
    let counts = subject_counts(&layout, j_n, y)?;
    Ok(SimData {
        counts,
        design,
        truth: SimTruth {
            scenario: Scenario::Sim2,
            seed,
            eval_points,
            sigma,
            beta: layout.beta,
            alpha: layout.alpha,
            r: layout.r,
            mu,
            latent,
            loadings,
            factor_weights: f,
            contrasts: Vec::new(),
        },
    })
}

/// Correlation matrix from C-vine partial correlations.
///
/// Entry `(k, i)`, `k < i`, of `partials` is the partial correlation of
/// features `k` and `i` given features `0..k`. The lower triangle and
/// diagonal are ignored. The recursion works on partial correlations only,
/// so it stays accurate when the result is close to singular.
pub fn vine_correlation(partials: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let j_n = partials.nrows();
    if partials.ncols() != j_n {
        return Err(Error::contract("partial correlations must form a square matrix"));
    }
    if (0..j_n).any(|k| (k + 1..j_n).any(|i| !(partials[(k, i)].abs() < 1.0))) {
        return Err(Error::contract("partial correlations must lie in (-1, 1)"));
    }
    let mut rho = DMatrix::identity(j_n, j_n);
    for k in 0..j_n {
        for i in k + 1..j_n {
            let mut p = partials[(k, i)];
            for l in (0..k).rev() {
                let (a, b) = (partials[(l, i)], partials[(l, k)]);
                p = p * ((1.0 - a * a) * (1.0 - b * b)).sqrt() + a * b;
            }
            rho[(k, i)] = p;
            rho[(i, k)] = p;
        }
    }
    Ok(rho)
}

/// Partial correlations uniform on (−1, 1), thinned by `sparsity`.
pub fn sample_partials<R: Rng + ?Sized>(rng: &mut R, n_features: usize, sparsity: VineSparsity) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n_features, n_features);
    for i in 0..n_features {
        for l in i + 1..n_features {
            p[(i, l)] = sparsity.apply(2.0 * rng.random::<f64>() - 1.0);
        }
    }
    p
}

/// Whether a symmetric matrix is a numerically valid positive-definite
/// correlation matrix.
fn is_valid_correlation(rho: &DMatrix<f64>) -> bool {
    let unit = rho.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-12);
    let finite = rho.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-12);
    unit && finite && rho.clone().symmetric_eigen().eigenvalues.min() > -1e-10
}

fn vine_draw(rng: &mut ChaCha8Rng, seed: u64, condition: u64, n_features: usize, sparsity: VineSparsity) -> Result<DMatrix<f64>> {
    let first = sample_partials(rng, n_features, sparsity);
    if let Ok(rho) = vine_correlation(&first) {
        if is_valid_correlation(&rho) {
            return Ok(rho);
        }
    }
    for attempt in 0..MAX_RETRIES {
        log::warn!("vine correlation for condition {condition} was not positive definite; regenerating (attempt {})", attempt + 1);
        let mut retry = ChaCha8Rng::seed_from_u64(seed);
        retry.set_stream(RETRY_STREAM + condition * MAX_RETRIES + attempt);
        if let Ok(rho) = vine_correlation(&sample_partials(&mut retry, n_features, sparsity)) {
            if is_valid_correlation(&rho) {
                return Ok(rho);
            }
        }
    }
    Err(Error::Internal("could not generate a positive-definite vine correlation".into()))
}

/// Scenario 3 with `n_subjects` subjects and `n_features` features, using
/// the default vine sparsity.
pub fn gen_sim3(seed: u64, n_subjects: usize, n_features: usize) -> Result<SimData> {
    gen_sim3_with(seed, n_subjects, n_features, VineSparsity::default())
}

/// Scenario 3. The covariance depends only on the condition indicator:
/// `Σ_jl(x) = s_j s_l ρ_jl(x)` with `s_j ~ Unif(1, 1.5)` drawn per
/// condition and `ρ(x)` from a C-vine. The continuous covariate enters the
/// mean only.
pub fn gen_sim3_with(seed: u64, n_subjects: usize, n_features: usize, sparsity: VineSparsity) -> Result<SimData> {
    if n_subjects == 0 || n_features == 0 {
        return Err(Error::contract("sim3 needs at least one subject and one feature"));
    }
    let (mut rng, mut noise) = rngs(seed);
    let j_n = n_features;
    let layout = subject_layout(&mut rng, n_subjects, j_n);
    let n = 2 * layout.n_subjects;

    let mut sigma = Vec::with_capacity(2);
    for condition in 0..2u64 {
        let rho = vine_draw(&mut rng, seed, condition, j_n, sparsity)?;
        let s: Vec<f64> = (0..j_n).map(|_| uniform(&mut rng, 1.0, 1.5)).collect();
        sigma.push(DMatrix::from_fn(j_n, j_n, |a, b| s[a] * s[b] * rho[(a, b)]));
    }
    let eval_points = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![1.0, 1.0])];
    let x_mean = DMatrix::from_fn(n, 2, |i, c| if c == 0 { layout.xd[i] } else { layout.xc[i] });
    let point_of: Vec<usize> = layout.xd.iter().map(|&d| d as usize).collect();
    let mu = mean_matrix(&layout.r, &layout.alpha, &layout.subject, &layout.beta, &x_mean);
    let (latent, y) = draw_latent(&mu, &sigma, &point_of, &mut noise)?;

    let design = CovariateDesign::new(vec!["xd".into(), "xc".into()], x_mean, vec![Role::Both, Role::Mean])?;
    let counts = subject_counts(&layout, j_n, y)?;
    Ok(SimData {
        counts,
        design,
        truth: SimTruth {
            scenario: Scenario::Sim3,
            seed,
            eval_points,
            sigma,
            beta: layout.beta,
            alpha: layout.alpha,
            r: layout.r,
            mu,
            latent,
            loadings: DMatrix::zeros(0, 0),
            factor_weights: DMatrix::zeros(0, 0),
            contrasts: Vec::new(),
        },
    })
}

/// Runs the generator of `scenario` at its default size.
pub fn generate(scenario: Scenario, seed: u64) -> Result<SimData> {
    match scenario {
        Scenario::Sim1 => gen_sim1(seed, 15, 5),
        Scenario::Sim2 => gen_sim2(seed, 25, 100),
        Scenario::Sim3 => gen_sim3(seed, 25, 100),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthManifest {
    scenario: Scenario,
    seed: u64,
    n_samples: usize,
    n_features: usize,
    n_points: usize,
    cov_names: Vec<String>,
    mean_names: Vec<String>,
    contrasts: Vec<(String, String)>,
}

fn matrix_table(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut header = vec!["row".to_string()];
    header.extend((1..=m.ncols()).map(|c| format!("{prefix}_{c}")));
    write_table(
        path,
        &header,
        (0..m.nrows()).map(|i| {
            std::iter::once((i + 1).to_string())
                .chain(m.row(i).iter().map(|v| fmt_f64(*v)))
                .collect()
        }),
    )
}

fn read_matrix_table(path: &Path) -> Result<DMatrix<f64>> {
    let (header, rows) = read_table(path)?;
    let cols = header.len().saturating_sub(1);
    Ok(DMatrix::from_fn(rows.len(), cols, |i, c| rows[i][c + 1]))
}

fn json_path_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    }
}

impl SimTruth {
    /// Writes the truth directory.
    ///
    /// Files: `eval_points.csv` (one row per point), `sigma.csv` (long
    /// format `point,row,col,value` over the upper triangle, 1-based),
    /// `beta.csv`, `alpha.csv`, `r.csv`, `mu.csv`, `latent.csv`,
    /// `loadings.csv`, `factor_weights.csv` and `manifest.json`.
    pub fn write_dir(&self, dir: &Path, cov_names: &[String], mean_names: &[String]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = self.eval_points.first().map_or(0, |x| x.len());
        let points = DMatrix::from_fn(self.eval_points.len(), p, |e, c| self.eval_points[e][c]);
        matrix_table(&dir.join("eval_points.csv"), "x", &points)?;
        let mut rows = Vec::new();
        for (e, s) in self.sigma.iter().enumerate() {
            for a in 0..s.nrows() {
                for b in a..s.ncols() {
                    rows.push(vec![(e + 1).to_string(), (a + 1).to_string(), (b + 1).to_string(), fmt_f64(s[(a, b)])]);
                }
            }
        }
        let header: Vec<String> = ["point", "row", "col", "value"].iter().map(|s| s.to_string()).collect();
        write_table(&dir.join("sigma.csv"), &header, rows)?;
        matrix_table(&dir.join("beta.csv"), "beta", &self.beta)?;
        matrix_table(&dir.join("alpha.csv"), "alpha", &self.alpha)?;
        matrix_table(&dir.join("r.csv"), "r", &DMatrix::from_column_slice(self.r.len(), 1, self.r.as_slice()))?;
        matrix_table(&dir.join("mu.csv"), "mu", &self.mu)?;
        matrix_table(&dir.join("latent.csv"), "latent", &self.latent)?;
        matrix_table(&dir.join("loadings.csv"), "q", &self.loadings)?;
        matrix_table(&dir.join("factor_weights.csv"), "f", &self.factor_weights)?;
        let manifest = TruthManifest {
            scenario: self.scenario,
            seed: self.seed,
            n_samples: self.mu.nrows(),
            n_features: self.mu.ncols(),
            n_points: self.eval_points.len(),
            cov_names: cov_names.to_vec(),
            mean_names: mean_names.to_vec(),
            contrasts: self.contrasts.clone(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(json_path_err(&path))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a truth directory written by [`SimTruth::write_dir`]. Also
    /// returns the covariance and mean covariate names.
    pub fn read_dir(dir: &Path) -> Result<(Self, Vec<String>, Vec<String>)> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: TruthManifest = serde_json::from_str(&text).map_err(json_path_err(&path))?;
        let points = read_matrix_table(&dir.join("eval_points.csv"))?;
        let eval_points: Vec<DVector<f64>> = (0..points.nrows()).map(|e| points.row(e).transpose()).collect();
        let j_n = m.n_features;
        let mut sigma = vec![DMatrix::zeros(j_n, j_n); m.n_points];
        let sigma_path = dir.join("sigma.csv");
        let (_, rows) = read_table(&sigma_path)?;
        for (line, row) in rows.iter().enumerate() {
            let bad = || Error::Parse {
                path: sigma_path.clone(),
                line: line as u64 + 2,
                column: "-".into(),
                message: "index out of range".into(),
            };
            if row.len() != 4 {
                return Err(bad());
            }
            let (e, a, b) = (row[0] as usize, row[1] as usize, row[2] as usize);
            if e == 0 || a == 0 || b == 0 || e > m.n_points || a > j_n || b > j_n {
                return Err(bad());
            }
            sigma[e - 1][(a - 1, b - 1)] = row[3];
            sigma[e - 1][(b - 1, a - 1)] = row[3];
        }
        let r = read_matrix_table(&dir.join("r.csv"))?;
        let truth = SimTruth {
            scenario: m.scenario,
            seed: m.seed,
            eval_points,
            sigma,
            beta: read_matrix_table(&dir.join("beta.csv"))?,
            alpha: read_matrix_table(&dir.join("alpha.csv"))?,
            r: r.column(0).into_owned(),
            mu: read_matrix_table(&dir.join("mu.csv"))?,
            latent: read_matrix_table(&dir.join("latent.csv"))?,
            loadings: read_matrix_table(&dir.join("loadings.csv"))?,
            factor_weights: read_matrix_table(&dir.join("factor_weights.csv"))?,
            contrasts: m.contrasts,
        };
        Ok((truth, m.cov_names, m.mean_names))
    }
}
