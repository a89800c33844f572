//! Subcommand execution. Every artifact is built in memory first and only
//! written once the whole run has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use fsqkd::channel::{describe, effective_params, moments, sample_ensemble, ChannelEnsemble};
use fsqkd::estimation::{
    effective_channel_estimate, mle_linear, shot_noise_estimate, simulate_quadratures,
    simulate_shot_noise, worst_case_with, Estimate, QuadratureBatch, ShotNoiseBatch,
};
use fsqkd::keyrate::{eve_information, ChannelEcho, KeyRateResult};
use fsqkd::strategies::{threshold_grid, Evaluator, Strategy};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{estimation_seed, ChannelSource, ConfigError, RunRecord, ScenarioConfig};
use crate::output::{num, Table};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Sample,
    Moments,
    Keyrate,
    SweepPs,
    SweepCluster,
    Estimate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Moments => "moments",
            Self::Keyrate => "keyrate",
            Self::SweepPs => "sweep-ps",
            Self::SweepCluster => "sweep-cluster",
            Self::Estimate => "estimate",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] fsqkd::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// 1 for configuration problems, 2 for anything that fails afterwards.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Eval(_) | Self::Write { .. } => 2,
        }
    }
}

/// A named output file held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn new(name: &str, bytes: Vec<u8>) -> Self {
        Self {
            name: name.to_string(),
            bytes,
        }
    }
}

/// Runs `cmd` and writes its artifacts into `out`.
pub fn run(cmd: Command, cfg: &ScenarioConfig, out: &Path) -> Result<Vec<PathBuf>, RunError> {
    let artifacts = execute(cmd, cfg)?;
    commit(out, &artifacts)
}

/// Computes every artifact of `cmd`, including the manifest, without
/// touching the file system beyond reading inputs.
pub fn execute(cmd: Command, cfg: &ScenarioConfig) -> Result<Vec<Artifact>, RunError> {
    let mut out = Vec::new();
    let ensemble = match cmd {
        Command::Estimate => None,
        _ => Some(build_ensemble(cfg)?),
    };
    if let (Some(e), ChannelSource::Sample { .. }) = (&ensemble, &cfg.channel) {
        let mut buf = Vec::new();
        e.write_to(&mut buf)?;
        out.push(Artifact::new("ensemble.txt", buf));
    }
    match (cmd, &ensemble) {
        (Command::Sample, Some(e)) => out.push(histogram(e)),
        (Command::Moments, Some(e)) => out.push(moments_table(e, cfg)?),
        (Command::Keyrate, Some(e)) => out.extend(keyrate(e, cfg)?),
        (Command::SweepPs, Some(e)) => out.extend(sweep_ps(e, cfg)?),
        (Command::SweepCluster, Some(e)) => out.extend(sweep_cluster(e, cfg)?),
        (Command::Estimate, _) => out.extend(estimate(cfg)?),
        _ => unreachable!("every ensemble command has an ensemble"),
    }
    // The manifest is itself a loadable configuration.
    let mut manifest = cfg.to_raw();
    manifest.run = Some(RunRecord {
        command: cmd.name().to_string(),
        fsqkd_version: env!("CARGO_PKG_VERSION").to_string(),
        ensemble: ensemble.as_ref().map(describe),
    });
    let text =
        toml::to_string(&manifest).map_err(|e| fsqkd::Error::Domain(format!("manifest: {e}")))?;
    out.push(Artifact::new("manifest.toml", text.into_bytes()));
    Ok(out)
}

/// Writes artifacts into `dir`, removing whatever was written if any write
/// fails.
pub fn commit(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, RunError> {
    let created_dir = !dir.exists();
    let fail = |path: &Path, source| RunError::Write {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| fail(dir, e))?;
    let mut written = Vec::new();
    for a in artifacts {
        let path = dir.join(&a.name);
        if let Err(e) = fs::write(&path, &a.bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            if created_dir {
                let _ = fs::remove_dir(dir);
            }
            return Err(fail(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn build_ensemble(cfg: &ScenarioConfig) -> Result<ChannelEnsemble, RunError> {
    Ok(match &cfg.channel {
        ChannelSource::Sample {
            turbulence,
            samples,
        } => sample_ensemble(
            turbulence,
            *samples,
            cfg.seed,
            cfg.noise.unwrap_or_default(),
        )?,
        ChannelSource::Load { ensemble } => {
            let e = ChannelEnsemble::load(ensemble)?;
            match cfg.noise {
                Some(n) => e.with_noise(n)?,
                None => e,
            }
        }
    })
}

fn evaluator<'a>(e: &'a ChannelEnsemble, cfg: &ScenarioConfig) -> Result<Evaluator<'a>, RunError> {
    let a = &cfg.analysis;
    Ok(Evaluator::new(e, cfg.protocol_params(), cfg.budget())?
        .with_mode(cfg.estimation_mode())
        .with_worst_case(a.worst_case)
        .with_window_signals(cfg.protocol.window_signals)?
        .with_va_search((a.va_bounds[0], a.va_bounds[1]), a.va_tol))
}

fn histogram(e: &ChannelEnsemble) -> Artifact {
    let mut t = Table::new(&["eta", "density"]);
    for (x, d) in e.histogram(HISTOGRAM_BINS) {
        t.row([num(x), num(d)]);
    }
    Artifact::new("histogram.csv", t.finish())
}

fn moments_table(e: &ChannelEnsemble, cfg: &ScenarioConfig) -> Result<Artifact, RunError> {
    let [lo, hi] = cfg.analysis.range;
    let m = moments(e, lo, hi)?;
    let v = cfg.protocol.v_a + 1.0;
    let eff = effective_params(&m, v)?;
    let mut t = Table::new(&[
        "lo",
        "hi",
        "count",
        "probability",
        "mean_eta",
        "mean_sqrt_eta",
        "var_sqrt_eta",
        "eta_max",
        "V",
        "eta_f",
        "xi_f",
    ]);
    t.row([
        num(lo),
        num(hi),
        m.count.to_string(),
        num(m.probability),
        num(m.mean_eta),
        num(m.mean_sqrt),
        num(m.var_sqrt),
        num(m.eta_max),
        num(v),
        num(eff.eta_f),
        num(eff.xi_f),
    ]);
    Ok(Artifact::new("moments.csv", t.finish()))
}

fn evaluate_grid(
    e: &ChannelEnsemble,
    cfg: &ScenarioConfig,
    strategies: &[Strategy],
) -> Result<Vec<KeyRateResult>, RunError> {
    let a = &cfg.analysis;
    Ok(evaluator(e, cfg)?.sweep(strategies, &a.attacks, &a.regimes, a.optimize_va)?)
}

fn keyrate(e: &ChannelEnsemble, cfg: &ScenarioConfig) -> Result<Vec<Artifact>, RunError> {
    let results = evaluate_grid(e, cfg, &cfg.analysis.strategies)?;
    let mut t = Table::new(&[
        "strategy",
        "attack",
        "regime",
        "V_A",
        "eta_f",
        "xi_f",
        "eta_f_wc",
        "xi_f_wc",
        "key_length",
        "rate",
        "secure",
    ]);
    let mut raw = Table::new(&["strategy", "attack", "regime", "V_A", "raw_rate"]);
    for r in &results {
        let echo =
            |f: fn(&ChannelEcho) -> f64| r.channel.as_ref().map(f).map(num).unwrap_or_default();
        t.row([
            r.strategy.to_string(),
            r.attack.name().to_string(),
            r.regime.name().to_string(),
            num(r.v_a),
            echo(|c| c.eta_f),
            echo(|c| c.xi_f),
            echo(|c| c.eta_f_wc),
            echo(|c| c.xi_f_wc),
            num(r.key_length),
            num(r.rate),
            r.secure.to_string(),
        ]);
        raw.row([
            r.strategy.to_string(),
            r.attack.name().into(),
            r.regime.name().into(),
            num(r.v_a),
            num(r.raw_rate),
        ]);
    }
    Ok(vec![
        Artifact::new("keyrate.csv", t.finish()),
        Artifact::new("keyrate_raw.csv", raw.finish()),
    ])
}

/// Sweep tables keyed by `key`: clamped rates in `<stem>.csv`, unclamped
/// rates alongside in `<stem>_raw.csv`.
fn sweep_tables(
    stem: &str,
    key: &str,
    keys: &[String],
    results: &[KeyRateResult],
    per_key: usize,
) -> Vec<Artifact> {
    let mut t = Table::new(&[key, "attack", "regime", "V_A_opt", "rate", "secure"]);
    let mut raw = Table::new(&[key, "attack", "regime", "V_A_opt", "raw_rate"]);
    for (i, r) in results.iter().enumerate() {
        let k = &keys[i / per_key];
        let (a, g) = (r.attack.name().to_string(), r.regime.name().to_string());
        t.row([
            k.clone(),
            a.clone(),
            g.clone(),
            num(r.v_a),
            num(r.rate),
            r.secure.to_string(),
        ]);
        raw.row([k.clone(), a, g, num(r.v_a), num(r.raw_rate)]);
    }
    vec![
        Artifact::new(&format!("{stem}.csv"), t.finish()),
        Artifact::new(&format!("{stem}_raw.csv"), raw.finish()),
    ]
}

fn sweep_ps(e: &ChannelEnsemble, cfg: &ScenarioConfig) -> Result<Vec<Artifact>, RunError> {
    let a = &cfg.analysis;
    let grid = a
        .thresholds
        .clone()
        .unwrap_or_else(|| threshold_grid(e, a.threshold_points));
    let strategies: Vec<Strategy> = grid
        .iter()
        .map(|&eta_th| Strategy::PostSelection { eta_th })
        .collect();
    let results = evaluate_grid(e, cfg, &strategies)?;
    let keys: Vec<String> = grid.iter().map(|&x| num(x)).collect();
    Ok(sweep_tables(
        "sweep_ps",
        "eta_th",
        &keys,
        &results,
        a.attacks.len() * a.regimes.len(),
    ))
}

fn sweep_cluster(e: &ChannelEnsemble, cfg: &ScenarioConfig) -> Result<Vec<Artifact>, RunError> {
    let a = &cfg.analysis;
    let strategies: Vec<Strategy> = a
        .clusters
        .iter()
        .map(|&n| Strategy::Clusters { n })
        .collect();
    let results = evaluate_grid(e, cfg, &strategies)?;
    let keys: Vec<String> = a.clusters.iter().map(|n| n.to_string()).collect();
    Ok(sweep_tables(
        "sweep_cluster",
        "n",
        &keys,
        &results,
        a.attacks.len() * a.regimes.len(),
    ))
}

fn estimate(cfg: &ScenarioConfig) -> Result<Vec<Artifact>, RunError> {
    let ec = &cfg.estimate;
    let pp = cfg.protocol_params();
    let det = pp.detector;
    let mut out = Vec::new();
    let (batch, shot) = match (&ec.batch, &ec.shot_noise) {
        (Some(b), Some(s)) => (QuadratureBatch::load(b)?, ShotNoiseBatch::load(s)?),
        _ => {
            let seed = estimation_seed(cfg.seed);
            let batch = simulate_quadratures(ec.eta_f, ec.xi_f, ec.v_a, &det, ec.k, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let shot = simulate_shot_noise(&det, ec.shot_noise_samples, &mut rng);
            let (mut bb, mut sb) = (Vec::new(), Vec::new());
            batch.write_csv(&mut bb)?;
            shot.write_csv(&mut sb)?;
            out.push(Artifact::new("batch.csv", bb));
            out.push(Artifact::new("shot_noise.csv", sb));
            (batch, shot)
        }
    };
    let eps_pe = cfg.security.eps_pe;
    let (t, sigma2) = mle_linear(&batch, eps_pe)?;
    let sigma0 = shot_noise_estimate(&shot, eps_pe)?;
    let eta_b = Estimate {
        value: det.eta_b,
        halfwidth: cfg.protocol.eta_b_halfwidth,
    };
    let channel = effective_channel_estimate(t, sigma2, sigma0, eta_b)?;
    let v = ec.v_a + 1.0;
    let mut table = Table::new(&["quantity", "value", "halfwidth", "lower", "upper"]);
    for (name, est) in [
        ("t", t),
        ("sigma2", sigma2),
        ("sigma0_2", sigma0),
        ("eta_b", eta_b),
        ("eta_f", channel.eta_f),
        ("xi_f", channel.xi_f),
    ] {
        table.row([
            name.to_string(),
            num(est.value),
            num(est.halfwidth),
            num(est.lower()),
            num(est.upper()),
        ]);
    }
    for &attack in &cfg.analysis.attacks {
        let (we, wx) = worst_case_with(&channel, cfg.analysis.worst_case, |eta, xi| {
            eve_information(attack, eta, xi, v, &det)
        })?;
        let name = |q: &str| format!("{q}_wc_{}", attack.name());
        table.row([
            name("eta_f"),
            num(we),
            String::new(),
            String::new(),
            String::new(),
        ]);
        table.row([
            name("xi_f"),
            num(wx),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    out.push(Artifact::new("estimates.csv", table.finish()));
    Ok(out)
}
