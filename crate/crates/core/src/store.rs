//! On-disk draw stores.
//!
//! A chain directory holds `manifest.json` and one CSV table per parameter
//! (`q`, `f`, `sigma2`, `tau`, `beta`, `alpha`, `r`). Each table has an
//! `iteration` column followed by 1-based labelled entries such as `q_3_2`
//! (feature 3, factor 2). Values are written in shortest round-trip form so
//! reading a store reproduces the draws exactly. A run directory holds one
//! `chain_<c>` directory per chain.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibrate::HyperConfig;
use crate::data::{fmt_f64, read_table, write_table};
use crate::error::{Error, Result};
use crate::sampler::{ChainState, SamplerConfig};

/// Saved draws of one chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Draws {
    pub iterations: Vec<u64>,
    pub q: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    pub sigma2: Vec<f64>,
    pub tau: Vec<DVector<f64>>,
    pub beta: Vec<DMatrix<f64>>,
    pub alpha: Vec<DMatrix<f64>>,
    pub r: Vec<DVector<f64>>,
}

impl Draws {
    pub fn push(&mut self, iteration: u64, s: &ChainState) {
        self.iterations.push(iteration);
        self.q.push(s.shrink.q.clone());
        self.f.push(s.f.clone());
        self.sigma2.push(s.sigma2);
        self.tau.push(s.shrink.tau.clone());
        self.beta.push(s.beta.clone());
        self.alpha.push(s.alpha.clone());
        self.r.push(s.r.clone());
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

/// Post-burn-in acceptance rates of the Metropolis blocks, per factor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub phi: Vec<Option<f64>>,
    pub f: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_factors: usize,
    pub n_groups: usize,
    pub feature_names: Vec<String>,
    /// Covariance covariates, intercept first.
    pub cov_names: Vec<String>,
    pub mean_names: Vec<String>,
    pub hyper: HyperConfig,
    pub sampler: SamplerConfig,
    pub chain: u64,
    pub n_draws: usize,
    pub acceptance: Acceptance,
}

pub const FORMAT_VERSION: u32 = 1;

fn labels(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut v = vec!["iteration".to_string()];
    for a in 1..=rows {
        for b in 1..=cols {
            v.push(format!("{prefix}_{a}_{b}"));
        }
    }
    v
}

fn vector_labels(prefix: &str, len: usize) -> Vec<String> {
    std::iter::once("iteration".to_string())
        .chain((1..=len).map(|a| format!("{prefix}_{a}")))
        .collect()
}

fn matrix_rows<'a>(iters: &'a [u64], mats: &'a [DMatrix<f64>]) -> impl Iterator<Item = Vec<String>> + 'a {
    iters.iter().zip(mats).map(|(t, m)| {
        let mut row = vec![t.to_string()];
        for a in 0..m.nrows() {
            for b in 0..m.ncols() {
                row.push(fmt_f64(m[(a, b)]));
            }
        }
        row
    })
}

fn vector_rows<'a>(iters: &'a [u64], vs: &'a [DVector<f64>]) -> impl Iterator<Item = Vec<String>> + 'a {
    iters
        .iter()
        .zip(vs)
        .map(|(t, v)| std::iter::once(t.to_string()).chain(v.iter().map(|x| fmt_f64(*x))).collect())
}

/// Writes one chain directory.
pub fn write_chain(dir: &Path, manifest: &Manifest, draws: &Draws) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = manifest;
    let (j, k, p) = (m.n_features, m.n_factors, m.cov_names.len());
    let it = &draws.iterations;
    write_table(&dir.join("q.csv"), &labels("q", j, k), matrix_rows(it, &draws.q))?;
    write_table(&dir.join("f.csv"), &labels("f", k, p), matrix_rows(it, &draws.f))?;
    write_table(
        &dir.join("sigma2.csv"),
        &["iteration".into(), "sigma2".into()],
        it.iter().zip(&draws.sigma2).map(|(t, s)| vec![t.to_string(), fmt_f64(*s)]),
    )?;
    write_table(&dir.join("tau.csv"), &vector_labels("tau", k), vector_rows(it, &draws.tau))?;
    write_table(&dir.join("beta.csv"), &labels("beta", j, m.mean_names.len()), matrix_rows(it, &draws.beta))?;
    write_table(&dir.join("alpha.csv"), &labels("alpha", m.n_groups, j), matrix_rows(it, &draws.alpha))?;
    write_table(&dir.join("r.csv"), &vector_labels("r", m.n_samples), vector_rows(it, &draws.r))?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_rows(path: &Path, width: usize) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let (header, rows) = read_table(path)?;
    if header.len() != width + 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: "-".into(),
            message: format!("expected {} columns, found {}", width + 1, header.len()),
        });
    }
    let iters = rows.iter().map(|r| r[0] as u64).collect();
    let vals = rows.into_iter().map(|r| r[1..].to_vec()).collect();
    Ok((iters, vals))
}

fn read_matrices(path: &Path, rows: usize, cols: usize) -> Result<Vec<DMatrix<f64>>> {
    let (_, vals) = read_rows(path, rows * cols)?;
    Ok(vals.into_iter().map(|v| DMatrix::from_row_slice(rows, cols, &v)).collect())
}

fn read_vectors(path: &Path, len: usize) -> Result<Vec<DVector<f64>>> {
    let (_, vals) = read_rows(path, len)?;
    Ok(vals.into_iter().map(DVector::from_vec).collect())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
}

/// Reads one chain directory.
pub fn read_chain(dir: &Path) -> Result<(Manifest, Draws)> {
    let m = read_manifest(dir)?;
    let (j, k, p) = (m.n_features, m.n_factors, m.cov_names.len());
    let (iterations, s2) = read_rows(&dir.join("sigma2.csv"), 1)?;
    let draws = Draws {
        iterations,
        sigma2: s2.into_iter().map(|r| r[0]).collect(),
        q: read_matrices(&dir.join("q.csv"), j, k)?,
        f: read_matrices(&dir.join("f.csv"), k, p)?,
        tau: read_vectors(&dir.join("tau.csv"), k)?,
        beta: read_matrices(&dir.join("beta.csv"), j, m.mean_names.len())?,
        alpha: read_matrices(&dir.join("alpha.csv"), m.n_groups, j)?,
        r: read_vectors(&dir.join("r.csv"), m.n_samples)?,
    };
    let n = draws.len();
    let lens = [draws.q.len(), draws.f.len(), draws.tau.len(), draws.beta.len(), draws.alpha.len(), draws.r.len()];
    if lens.iter().any(|&l| l != n) || n != m.n_draws {
        return Err(Error::Parse {
            path: dir.to_path_buf(),
            line: 0,
            column: "-".into(),
            message: format!("parameter tables disagree on the number of draws (manifest {}, tables {lens:?})", m.n_draws),
        });
    }
    Ok((m, draws))
}

/// Chain directories of a run, in chain order. A directory that is itself a
/// chain directory is returned alone.
pub fn chain_dirs(run: &Path) -> Result<Vec<PathBuf>> {
    if run.join("manifest.json").is_file() {
        return Ok(vec![run.to_path_buf()]);
    }
    let mut dirs: Vec<(u64, PathBuf)> = fs::read_dir(run)
        .map_err(|e| Error::io(run, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let c = name.strip_prefix("chain_")?.parse().ok()?;
            e.path().join("manifest.json").is_file().then(|| (c, e.path()))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::contract(format!("{} contains no chain directories", run.display())));
    }
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

/// All chains of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub manifests: Vec<Manifest>,
    pub chains: Vec<Draws>,
}

impl DrawStore {
    pub fn open(run: &Path) -> Result<Self> {
        let mut manifests = Vec::new();
        let mut chains = Vec::new();
        for d in chain_dirs(run)? {
            let (m, draws) = read_chain(&d)?;
            manifests.push(m);
            chains.push(draws);
        }
        Ok(Self { manifests, chains })
    }

    pub fn from_draws(manifest: Manifest, draws: Draws) -> Self {
        Self {
            manifests: vec![manifest],
            chains: vec![draws],
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifests[0]
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Draws::len).sum()
    }

    /// Draws of every chain, concatenated in chain order.
    pub fn pooled(&self) -> impl Iterator<Item = (usize, &Draws)> {
        self.chains.iter().enumerate()
    }
}
