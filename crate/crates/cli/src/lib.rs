//! Batch workflow around the `covfactor` model: simulate data, fit chains,
//! summarize draws and evaluate against a simulation truth.
//!
//! A fit is described by a TOML run file:
//!
//! ```toml
//! counts = "counts.csv"
//! design = "design.csv"        # optional, intercept-only when absent
//! subject_column = "subject"   # optional, enables subject-specific baselines
//! chains = 2
//!
//! [roles]                      # covariates not listed enter both parts
//! batch = "mean"
//!
//! [hyper]                      # any calibrated hyperparameter
//! K = 8
//!
//! [sampler]
//! n_iter = 20000
//! n_burn = 10000
//! thin = 10
//! seed = 1
//! ```
//!
//! Relative paths are resolved against the run file's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use covfactor::calibrate::{default_hypers, HyperConfig};
use covfactor::data::{write_table, fmt_f64, CountTable, CovariateDesign, Role};
use covfactor::posterior::{self, PosteriorSummary, DEFAULT_PROBS};
use covfactor::sampler::{Chain, ModelData, SamplerConfig};
use covfactor::simgen::{self, Scenario, SimData, SimTruth};
use covfactor::store::{self, DrawStore, Manifest, FORMAT_VERSION};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "COVFACTOR_OUT";

pub const EXIT_USER: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Exit status for an error: 2 for a numerical abort, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<covfactor::Error>() {
        Some(covfactor::Error::NumericalAbort { .. }) => EXIT_NUMERICAL,
        _ => EXIT_USER,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub counts: PathBuf,
    #[serde(default)]
    pub design: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub subject_column: Option<String>,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub roles: BTreeMap<String, Role>,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub hyper: toml::Table,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read run file {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid run file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.counts = base.join(&cfg.counts);
        cfg.design = cfg.design.map(|d| base.join(d));
        cfg.out = cfg.out.map(|o| base.join(o));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Replaces fields of `base` with the entries of `overrides`. Unknown keys
/// are rejected.
pub fn apply_hyper_overrides(base: &HyperConfig, overrides: &toml::Table) -> anyhow::Result<HyperConfig> {
    let mut table = toml::Table::try_from(base)?;
    let mut known: Vec<String> = table.keys().cloned().collect();
    known.push("nu_alpha_features".into());
    for (key, value) in overrides {
        if !known.contains(key) {
            bail!("unknown hyperparameter `{key}` (known: {})", known.join(", "));
        }
        table.insert(key.clone(), value.clone());
    }
    let hyper: HyperConfig = table.try_into().context("invalid hyperparameter override")?;
    hyper.validate()?;
    Ok(hyper)
}

/// Command-line settings that take precedence over the run file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOverrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub iters: Option<u64>,
    pub burn: Option<u64>,
    pub thin: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Output directory: explicit value, else `$COVFACTOR_OUT/<default_name>`.
pub fn resolve_out(explicit: Option<PathBuf>, default_name: &str) -> anyhow::Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    match std::env::var_os(OUT_ENV) {
        Some(root) => Ok(PathBuf::from(root).join(default_name)),
        None => bail!("no output directory given; pass --out or set {OUT_ENV}"),
    }
}

/// Everything `cmd_fit` resolved before sampling, echoed to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub counts: PathBuf,
    pub design: Option<PathBuf>,
    pub subject_column: Option<String>,
    pub roles: BTreeMap<String, Role>,
    pub chains: usize,
    pub hyper: HyperConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub runtime_seconds: f64,
    pub chain_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub out: PathBuf,
    pub n_draws: usize,
    pub runtime_seconds: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

/// Loads the count table and design named by a run configuration.
pub fn load_inputs(cfg: &RunConfig) -> anyhow::Result<(CountTable, CovariateDesign)> {
    let counts = CountTable::read_csv(&cfg.counts, cfg.subject_column.as_deref())?;
    let design = match &cfg.design {
        Some(path) => {
            let roles: HashMap<String, Role> = cfg.roles.iter().map(|(k, v)| (k.clone(), *v)).collect();
            CovariateDesign::read_csv(path, counts.sample_ids(), &roles)?
        }
        None => {
            if !cfg.roles.is_empty() {
                bail!("roles are given but the run file names no design");
            }
            CovariateDesign::intercept_only(counts.n_samples())
        }
    };
    Ok((counts, design))
}

/// Distinct covariance covariate vectors in order of first appearance.
pub fn observed_points(design: &CovariateDesign) -> Vec<DVector<f64>> {
    let x = design.cov_matrix();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for row in x.row_iter() {
        let v = row.transpose();
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Fits the model described by `config_path` and writes one `chain_<c>`
/// directory per chain, plus `run.json`, `points.csv` and `timing.json`.
pub fn cmd_fit(config_path: &Path, overrides: &FitOverrides) -> anyhow::Result<FitOutcome> {
    let cfg = RunConfig::from_file(config_path)?;
    fit_config(&cfg, overrides)
}

pub fn fit_config(cfg: &RunConfig, overrides: &FitOverrides) -> anyhow::Result<FitOutcome> {
    let start = Instant::now();
    let (counts, design) = load_inputs(cfg)?;
    let hyper = apply_hyper_overrides(&default_hypers(&counts)?, &cfg.hyper)?;
    let mut sampler = cfg.sampler.clone();
    sampler.seed = overrides.seed.unwrap_or(sampler.seed);
    sampler.n_iter = overrides.iters.unwrap_or(sampler.n_iter);
    sampler.n_burn = overrides.burn.unwrap_or(sampler.n_burn);
    sampler.thin = overrides.thin.unwrap_or(sampler.thin);
    sampler.validate()?;
    let chains = overrides.chains.unwrap_or(cfg.chains);
    if chains == 0 {
        bail!("at least one chain is required");
    }
    let out = resolve_out(overrides.out.clone().or_else(|| cfg.out.clone()), "fit")?;
    let data = ModelData::new(&counts, &design)?;

    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    for entry in fs::read_dir(&out).with_context(|| format!("cannot list {}", out.display()))? {
        let path = entry?.path();
        let stale = path.is_dir() && path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("chain_"));
        if stale {
            fs::remove_dir_all(&path).with_context(|| format!("cannot clear {}", path.display()))?;
        }
    }
    let record = RunRecord {
        counts: cfg.counts.clone(),
        design: cfg.design.clone(),
        subject_column: cfg.subject_column.clone(),
        roles: cfg.roles.clone(),
        chains,
        hyper: hyper.clone(),
        sampler: sampler.clone(),
    };
    write_json(&out.join("run.json"), &record)?;
    let cov_names = design.cov_names();
    let points = observed_points(&design);
    write_table(
        &out.join("points.csv"),
        &cov_names,
        points.iter().map(|p| p.iter().map(|v| fmt_f64(*v)).collect()),
    )?;

    log::info!(
        "fitting {} samples x {} features with K = {} on {chains} chain(s)",
        counts.n_samples(),
        counts.n_features(),
        hyper.k
    );
    let results: Vec<anyhow::Result<(usize, f64)>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let t0 = Instant::now();
            let mut chain = Chain::new(data.clone(), hyper.clone(), sampler.seed, c as u64, sampler.adapt)?;
            let output = chain.run(&sampler)?;
            let manifest = Manifest {
                format_version: FORMAT_VERSION,
                n_samples: counts.n_samples(),
                n_features: counts.n_features(),
                n_factors: hyper.k,
                n_groups: data.n_groups,
                feature_names: counts.feature_names().to_vec(),
                cov_names: cov_names.clone(),
                mean_names: design.mean_names(),
                hyper: hyper.clone(),
                sampler: sampler.clone(),
                chain: c as u64,
                n_draws: output.draws.len(),
                acceptance: output.acceptance,
            };
            store::write_chain(&out.join(format!("chain_{c}")), &manifest, &output.draws)?;
            log::info!("chain {c} finished with {} draws", output.draws.len());
            Ok((output.draws.len(), t0.elapsed().as_secs_f64()))
        })
        .collect();
    let mut n_draws = 0;
    let mut chain_seconds = Vec::with_capacity(chains);
    for r in results {
        let (n, secs) = r?;
        n_draws += n;
        chain_seconds.push(secs);
    }
    let runtime_seconds = start.elapsed().as_secs_f64();
    write_json(
        &out.join("timing.json"),
        &Timing {
            runtime_seconds,
            chain_seconds,
        },
    )?;
    Ok(FitOutcome {
        out,
        n_draws,
        runtime_seconds,
    })
}

/// Top-level description of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub scenario: Scenario,
    pub seed: u64,
    pub n_samples: usize,
    pub n_features: usize,
    pub subject_column: Option<String>,
    pub roles: BTreeMap<String, Role>,
}

/// Writes `counts.csv`, `design.csv`, `truth/`, `manifest.json` and a
/// ready-to-run `fit.toml`.
pub fn write_sim(data: &SimData, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    data.counts.write_csv(&out.join("counts.csv"))?;
    data.design.write_csv(&out.join("design.csv"), data.counts.sample_ids())?;
    data.truth
        .write_dir(&out.join("truth"), &data.design.cov_names(), &data.design.mean_names())?;
    let roles: BTreeMap<String, Role> = data
        .design
        .names()
        .iter()
        .cloned()
        .zip(data.design.roles().iter().copied())
        .collect();
    let manifest = SimManifest {
        scenario: data.truth.scenario,
        seed: data.truth.seed,
        n_samples: data.counts.n_samples(),
        n_features: data.counts.n_features(),
        subject_column: data.counts.subject_column().map(str::to_string),
        roles: roles.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    let run = RunConfig {
        counts: "counts.csv".into(),
        design: Some("design.csv".into()),
        out: Some("fit".into()),
        subject_column: manifest.subject_column.clone(),
        chains: 1,
        roles,
        hyper: toml::Table::new(),
        sampler: SamplerConfig::default(),
    };
    fs::write(out.join("fit.toml"), run.to_toml()).with_context(|| format!("cannot write fit.toml in {}", out.display()))?;
    Ok(())
}

/// Sizes for a simulation; `None` keeps the scenario default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimSize {
    pub features: Option<usize>,
    /// Subjects for scenarios 2 and 3, samples per design cell for scenario 1.
    pub units: Option<usize>,
}

pub fn simulate(scenario: Scenario, seed: u64, size: SimSize) -> anyhow::Result<SimData> {
    Ok(match (scenario, size.features, size.units) {
        (s, None, None) => simgen::generate(s, seed)?,
        (Scenario::Sim1, j, u) => simgen::gen_sim1(seed, j.unwrap_or(15), u.unwrap_or(5))?,
        (Scenario::Sim2, j, u) => simgen::gen_sim2(seed, u.unwrap_or(25), j.unwrap_or(100))?,
        (Scenario::Sim3, j, u) => simgen::gen_sim3(seed, u.unwrap_or(25), j.unwrap_or(100))?,
    })
}

pub fn cmd_simulate(scenario: Scenario, seed: u64, size: SimSize, out: &Path) -> anyhow::Result<()> {
    let data = simulate(scenario, seed, size)?;
    write_sim(&data, out)?;
    log::info!("wrote {scenario} (seed {seed}) to {}", out.display());
    Ok(())
}

fn read_points(run: &Path) -> anyhow::Result<Vec<DVector<f64>>> {
    let path = run.join("points.csv");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let (_, rows) = covfactor::data::read_table(&path)?;
    Ok(rows.into_iter().map(DVector::from_vec).collect())
}

/// Parses `a:b` into a pair of mean covariate columns.
pub fn parse_contrast(text: &str, mean_names: &[String]) -> anyhow::Result<(usize, usize)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("contrast `{text}` must have the form a:b"))?;
    let col = |n: &str| {
        mean_names
            .iter()
            .position(|m| m == n)
            .ok_or_else(|| anyhow!("unknown mean covariate `{n}` (known: {})", mean_names.join(", ")))
    };
    Ok((col(a)?, col(b)?))
}

pub const DEFAULT_TARGETS: [&str; 5] = ["sigma2", "tau", "beta", "alpha", "rho"];

/// Writes `summary.csv`, `diagnostics.csv` and, when contrasts are asked
/// for, `contrasts.csv` into the run directory.
pub fn cmd_summarize(run: &Path, targets: &[String], contrasts: &[String]) -> anyhow::Result<PosteriorSummary> {
    let store = DrawStore::open(run)?;
    let mut summary = PosteriorSummary {
        probs: DEFAULT_PROBS.to_vec(),
        rows: Vec::new(),
    };
    let targets: Vec<String> = if targets.is_empty() {
        DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect()
    } else {
        targets.to_vec()
    };
    for t in &targets {
        if t == "rho" {
            let points = read_points(run)?;
            summary.extend(posterior::correlation_summary(&store, &points, &DEFAULT_PROBS)?);
        } else {
            summary.extend(posterior::summarize(&store, t, &DEFAULT_PROBS)?);
        }
    }
    summary.write_csv(&run.join("summary.csv"))?;
    posterior::write_diagnostics(&run.join("diagnostics.csv"), &posterior::diagnostics(&store)?)?;
    if !contrasts.is_empty() {
        let names = &store.manifest().mean_names;
        let pairs = contrasts
            .iter()
            .map(|c| parse_contrast(c, names))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let table = posterior::contrast_table(&posterior::beta_contrasts(&store, &pairs)?, names);
        table.write_csv(&run.join("contrasts.csv"))?;
    }
    Ok(summary)
}

/// Compares a fit with a simulation truth and writes `metrics.json`.
pub fn cmd_evaluate(run: &Path, truth_dir: &Path) -> anyhow::Result<posterior::Metrics> {
    let store = DrawStore::open(run)?;
    let (truth, cov_names, mean_names) = SimTruth::read_dir(truth_dir)?;
    let m = store.manifest();
    if m.cov_names != cov_names {
        bail!(
            "covariance covariates differ between fit ({}) and truth ({})",
            m.cov_names.join(", "),
            cov_names.join(", ")
        );
    }
    if m.mean_names != mean_names {
        bail!(
            "mean covariates differ between fit ({}) and truth ({})",
            m.mean_names.join(", "),
            mean_names.join(", ")
        );
    }
    let timing = run.join("timing.json");
    let runtime = if timing.exists() {
        read_json::<Timing>(&timing)?.runtime_seconds
    } else {
        0.0
    };
    let metrics = posterior::evaluate(&store, &truth, runtime)?;
    write_json(&run.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_replace_fields_and_reject_unknown_keys() {
        let base = HyperConfig::generic(10, 3, 1.0, 5.0);
        let mut t = toml::Table::new();
        t.insert("K".into(), toml::Value::Integer(8));
        t.insert("a_tau".into(), toml::Value::Float(0.5));
        let h = apply_hyper_overrides(&base, &t).unwrap();
        assert_eq!((h.k, h.a_tau, h.b_tau), (8, 0.5, base.b_tau));
        t.insert("kappa".into(), toml::Value::Float(1.0));
        let err = apply_hyper_overrides(&base, &t).unwrap_err().to_string();
        assert!(err.contains("kappa"), "{err}");
        let mut bad = toml::Table::new();
        bad.insert("a_tau".into(), toml::Value::Float(-1.0));
        assert!(apply_hyper_overrides(&base, &bad).is_err());
    }

    #[test]
    fn run_file_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "counts = \"c.csv\"\n[roles]\nb = \"mean\"\n[sampler]\nn_iter = 50\n").unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.counts, dir.path().join("c.csv"));
        assert_eq!(cfg.roles["b"], Role::Mean);
        assert_eq!((cfg.sampler.n_iter, cfg.sampler.n_burn, cfg.chains), (50, 10_000, 1));
        fs::write(&path, "counts = \"c.csv\"\nbogus = 1\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn contrast_specs_parse() {
        let names = vec!["b0".to_string(), "b1".to_string()];
        assert_eq!(parse_contrast("b1:b0", &names).unwrap(), (1, 0));
        assert!(parse_contrast("b1-b0", &names).is_err());
        assert!(parse_contrast("b1:zz", &names).is_err());
    }

    #[test]
    fn numerical_aborts_map_to_exit_two() {
        let e: anyhow::Error = covfactor::Error::NumericalAbort { iteration: 3, block: "eta" }.into();
        assert_eq!(exit_code(&e), EXIT_NUMERICAL);
        assert_eq!(exit_code(&anyhow!("bad input")), EXIT_USER);
    }

    #[test]
    fn points_are_distinct_rows() {
        let d = CovariateDesign::new(
            vec!["x".into()],
            nalgebra::DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 0.0, 1.0]),
            vec![Role::Both],
        )
        .unwrap();
        let p = observed_points(&d);
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].as_slice(), &[1.0, 1.0]);
    }
}
