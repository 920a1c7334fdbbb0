use std::fs;
use std::path::Path;
use std::process::Command;

use covfactor::calibrate::HyperConfig;
use covfactor::sampler::SamplerConfig;
use covfactor::simgen::{self, Scenario, SimTruth};
use covfactor::store::{read_manifest, write_chain, Acceptance, DrawStore, Draws, Manifest, FORMAT_VERSION};
use covfactor_cli::*;
use nalgebra::{DMatrix, DVector};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covfactor"))
}

fn rows(path: &Path) -> (usize, usize) {
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    (lines.len() - 1, lines[0].split(',').count())
}

fn short() -> FitOverrides {
    FitOverrides {
        iters: Some(300),
        burn: Some(100),
        thin: Some(4),
        ..FitOverrides::default()
    }
}

#[test]
fn simulate_writes_expected_shapes() {
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(Scenario::Sim1, 1, SimSize::default(), &dir.path().join("s1")).unwrap();
    assert_eq!(rows(&dir.path().join("s1/counts.csv")), (30, 16));
    assert_eq!(rows(&dir.path().join("s1/design.csv")).0, 30);
    for f in ["manifest.json", "fit.toml", "truth/sigma.csv", "truth/beta.csv", "truth/manifest.json"] {
        assert!(dir.path().join("s1").join(f).exists(), "{f}");
    }
    cmd_simulate(Scenario::Sim2, 1, SimSize::default(), &dir.path().join("s2")).unwrap();
    let (n, cols) = rows(&dir.path().join("s2/counts.csv"));
    assert_eq!(n, 50);
    assert_eq!(cols, 102, "sample and subject columns plus 100 features");
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let size = SimSize {
        features: Some(12),
        units: Some(6),
    };
    for name in ["a", "b"] {
        cmd_simulate(Scenario::Sim3, 4, size, &dir.path().join(name)).unwrap();
    }
    for f in ["counts.csv", "design.csv", "manifest.json", "truth/sigma.csv", "truth/latent.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn fit_honors_overrides_and_echoes_hypers() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cmd_simulate(Scenario::Sim1, 2, SimSize::default(), &sim).unwrap();
    let mut text = fs::read_to_string(sim.join("fit.toml")).unwrap();
    text.push_str("\n[hyper]\nK = 5\nc_alpha = 2.5\n");
    fs::write(sim.join("fit.toml"), text).unwrap();
    let out = cmd_fit(&sim.join("fit.toml"), &FitOverrides { chains: Some(2), ..short() }).unwrap();
    assert_eq!(out.n_draws, 100);
    let m = read_manifest(&out.out.join("chain_1")).unwrap();
    assert_eq!((m.hyper.k, m.hyper.c_alpha, m.n_factors, m.chain), (5, 2.5, 5, 1));
    assert_eq!((m.sampler.n_iter, m.sampler.thin), (300, 4));
    let run: RunRecord = serde_json::from_str(&fs::read_to_string(out.out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run.hyper, m.hyper);
    assert_eq!(run.chains, 2);
}

#[test]
fn fit_reports_input_problems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "counts = \"missing.csv\"\nout = \"o\"\n").unwrap();
    let err = format!("{:#}", cmd_fit(&cfg, &short()).unwrap_err());
    assert!(err.contains("missing.csv"), "{err}");

    fs::write(dir.path().join("c.csv"), "sample,a,b\ns1,1,2\ns2,3,x\n").unwrap();
    fs::write(&cfg, "counts = \"c.csv\"\nout = \"o\"\n").unwrap();
    let err = format!("{:#}", cmd_fit(&cfg, &short()).unwrap_err());
    assert!(err.contains("line 3") && err.contains("column b"), "{err}");

    fs::write(dir.path().join("c.csv"), "sample,a,b\ns1,1,2\ns2,3,4\n").unwrap();
    fs::write(dir.path().join("d.csv"), "sample,intercept,x\ns1,1,0.5\ns2,0,1\n").unwrap();
    fs::write(&cfg, "counts = \"c.csv\"\ndesign = \"d.csv\"\nout = \"o\"\n").unwrap();
    let err = format!("{:#}", cmd_fit(&cfg, &short()).unwrap_err());
    assert!(err.contains("intercept"), "{err}");

    fs::write(&cfg, "counts = \"c.csv\"\nout = \"o\"\n[hyper]\nK = 0\n").unwrap();
    assert!(cmd_fit(&cfg, &short()).is_err());
}

fn perfect_store(truth: &SimTruth, cov_names: Vec<String>, mean_names: Vec<String>, n: usize) -> (Manifest, Draws) {
    let (j, k) = truth.loadings.shape();
    let draws = Draws {
        iterations: (1..=n as u64).collect(),
        q: vec![truth.loadings.clone(); n],
        f: vec![truth.factor_weights.clone(); n],
        sigma2: vec![0.25; n],
        tau: vec![DVector::from_element(k, 1.0); n],
        beta: vec![truth.beta.clone(); n],
        alpha: vec![truth.alpha.clone(); n],
        r: vec![truth.r.clone(); n],
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        n_samples: truth.r.len(),
        n_features: j,
        n_factors: k,
        n_groups: truth.alpha.nrows(),
        feature_names: (1..=j).map(|i| format!("otu{i}")).collect(),
        cov_names,
        mean_names,
        hyper: HyperConfig::generic(j, k, 1.0, 1.0),
        sampler: SamplerConfig::default(),
        chain: 0,
        n_draws: n,
        acceptance: Acceptance::default(),
    };
    (manifest, draws)
}

#[test]
fn evaluate_perfect_store_gives_zero_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let data = simgen::gen_sim1(3, 15, 5).unwrap();
    write_sim(&data, &dir.path().join("sim")).unwrap();
    let (m, d) = perfect_store(&data.truth, data.design.cov_names(), data.design.mean_names(), 20);
    write_chain(&dir.path().join("run/chain_0"), &m, &d).unwrap();
    let metrics = cmd_evaluate(&dir.path().join("run"), &dir.path().join("sim/truth")).unwrap();
    assert!(metrics.rmse_correlation < 1e-9, "{metrics:?}");
    assert_eq!(metrics.coverage_beta_95, 1.0);
    assert_eq!(metrics.n_draws, 20);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/metrics.json")).unwrap()).unwrap();
    let mut keys: Vec<&String> = json.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["coverage_beta_95", "n_draws", "rmse_correlation", "runtime_seconds"]);
}

#[test]
fn metrics_match_the_posterior_oracle_and_summaries_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cmd_simulate(Scenario::Sim1, 5, SimSize::default(), &sim).unwrap();
    let out = cmd_fit(&sim.join("fit.toml"), &short()).unwrap().out;
    let metrics = cmd_evaluate(&out, &sim.join("truth")).unwrap();
    let store = DrawStore::open(&out).unwrap();
    let (truth, _, _) = SimTruth::read_dir(&sim.join("truth")).unwrap();
    let oracle = covfactor::posterior::evaluate(&store, &truth, metrics.runtime_seconds).unwrap();
    assert_eq!(metrics, oracle);

    let summary = cmd_summarize(&out, &[], &["b0:b1".to_string()]).unwrap();
    assert!(summary.rows.iter().any(|r| r.quantity == "rho" && r.level == "6"));
    assert!(summary.rows.iter().all(|r| r.quantiles[0] <= r.quantiles[1] && r.quantiles[1] <= r.quantiles[2]));
    for f in ["summary.csv", "diagnostics.csv", "contrasts.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(cmd_summarize(&out, &["nope".to_string()], &[]).is_err());
}

#[test]
fn binary_exit_codes_and_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["simulate", "--scenario", "sim1", "--seed", "2"])
        .env("COVFACTOR_OUT", dir.path())
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success());
    let sim = dir.path().join("sim1-seed2");
    assert!(sim.join("counts.csv").exists());

    let out = bin()
        .args(["fit", "--config"])
        .arg(sim.join("fit.toml"))
        .args(["--iters", "200", "--burn", "100", "--thin", "5", "--out"])
        .arg(dir.path().join("fit"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(DrawStore::open(&dir.path().join("fit")).unwrap().n_draws(), 20);

    let bad = bin().args(["fit", "--config", "/definitely/missing.toml"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("/definitely/missing.toml"));
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(1));
    assert_eq!(bin().args(["simulate", "--scenario", "sim9"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn perfect_store_roundtrip_keeps_sigma() {
    let data = simgen::gen_sim1(8, 15, 5).unwrap();
    let (m, d) = perfect_store(&data.truth, data.design.cov_names(), data.design.mean_names(), 3);
    let store = DrawStore::from_draws(m, d);
    let x = data.truth.eval_points[0].as_slice().to_vec();
    let s = covfactor::posterior::sigma_draws(&store, &x).unwrap();
    let diff: DMatrix<f64> = &s[0] - &data.truth.sigma[0];
    assert!(diff.amax() < 1e-12);
}
