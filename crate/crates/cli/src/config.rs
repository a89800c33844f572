//! Scenario configuration: a versioned TOML file, optionally layered on a
//! named preset.
//!
//! ```toml
//! version = 1
//! preset = "fig1-L3.5km"
//! seed = 7
//!
//! [protocol]
//! n = 1e9
//! ```

use std::path::{Path, PathBuf};

use fsqkd::channel::{ExcessNoise, TurbulenceParams};
use fsqkd::estimation::WorstCaseMode;
use fsqkd::gaussian::DetectorModel;
use fsqkd::keyrate::{budget_split, Attack, ProtocolParams, Regime, SecurityBudget};
use fsqkd::strategies::{
    EstimationMode, Strategy, DEFAULT_VA_BOUNDS, DEFAULT_VA_TOL, DEFAULT_WINDOW_SIGNALS,
};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

// Everything optional: a preset or the built-in defaults fill the gaps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub channel: RawChannel,
    #[serde(default)]
    pub protocol: RawProtocol,
    #[serde(default)]
    pub security: RawSecurity,
    #[serde(default)]
    pub analysis: RawAnalysis,
    #[serde(default)]
    pub estimate: RawEstimate,
    /// Written into run manifests; ignored on input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunRecord>,
}

/// What produced a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub fsqkd_version: String,
    /// Summary of the ensemble actually analysed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawChannel {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turbulence: Option<TurbulenceParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<ExcessNoise>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProtocol {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reveal_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shot_noise_samples: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_b_halfwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_signals: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSecurity {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_pe: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationKind {
    #[default]
    Analytic,
    Simulated,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAnalysis {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<Strategy>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attacks: Option<Vec<Attack>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regimes: Option<Vec<Regime>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimize_va: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub va_bounds: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub va_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_case: Option<WorstCaseMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEstimate {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shot_noise: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shot_noise_samples: Option<usize>,
}

/// Where the transmissivity ensemble comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSource {
    Sample {
        turbulence: TurbulenceParams,
        samples: usize,
    },
    Load {
        ensemble: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolConfig {
    pub v_a: f64,
    pub eta_b: f64,
    pub nu_b: f64,
    pub beta: f64,
    pub d: u32,
    pub n: f64,
    pub reveal_fraction: f64,
    pub shot_noise_samples: Option<f64>,
    pub eta_b_halfwidth: f64,
    pub window_signals: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecurityConfig {
    pub eps: f64,
    pub eps_pe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub strategies: Vec<Strategy>,
    pub attacks: Vec<Attack>,
    pub regimes: Vec<Regime>,
    pub optimize_va: bool,
    pub va_bounds: [f64; 2],
    pub va_tol: f64,
    pub estimation: EstimationKind,
    pub worst_case: WorstCaseMode,
    pub threshold_points: usize,
    pub thresholds: Option<Vec<f64>>,
    pub clusters: Vec<usize>,
    pub range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateConfig {
    pub batch: Option<PathBuf>,
    pub shot_noise: Option<PathBuf>,
    pub eta_f: f64,
    pub xi_f: f64,
    pub v_a: f64,
    pub k: usize,
    pub shot_noise_samples: usize,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub version: u32,
    pub preset: Option<String>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub channel: ChannelSource,
    /// Overrides the noise model stored in a loaded ensemble file.
    pub noise: Option<ExcessNoise>,
    pub protocol: ProtocolConfig,
    pub security: SecurityConfig,
    pub analysis: AnalysisConfig,
    pub estimate: EstimateConfig,
}

pub const PRESETS: &[&str] = &[
    "fig1-L1.5km",
    "fig1-L2km",
    "fig1-L3km",
    "fig1-L3.5km",
    "fig2-L3km",
    "fig2-L3.5km",
];

/// Raw configuration of a named preset: the reference free-space link at
/// the stated distance with `eta_B = 0.6`, `nu_B = 0.25`, `beta = 0.98`,
/// `xi = 0.01`, `d = 5`, `eps = 1e-9`, `eps_PE = 1e-10`, `N = 1e10`,
/// half the data revealed, and `10^4` channel samples.
pub fn preset(name: &str) -> Option<RawConfig> {
    let distance = match name {
        "fig1-L1.5km" => 1500.0,
        "fig1-L2km" => 2000.0,
        "fig1-L3km" | "fig2-L3km" => 3000.0,
        "fig1-L3.5km" | "fig2-L3.5km" => 3500.0,
        _ => return None,
    };
    Some(RawConfig {
        version: Some(CONFIG_VERSION),
        preset: Some(name.to_string()),
        seed: Some(1),
        output: None,
        channel: RawChannel {
            ensemble: None,
            turbulence: Some(TurbulenceParams::reference(distance)),
            samples: Some(10_000),
            noise: Some(ExcessNoise::Constant { xi: 0.01 }),
        },
        protocol: RawProtocol {
            v_a: Some(4.0),
            eta_b: Some(0.6),
            nu_b: Some(0.25),
            beta: Some(0.98),
            d: Some(5),
            n: Some(1e10),
            reveal_fraction: Some(0.5),
            shot_noise_samples: None,
            eta_b_halfwidth: Some(0.0),
            window_signals: Some(DEFAULT_WINDOW_SIGNALS),
        },
        security: RawSecurity {
            eps: Some(1e-9),
            eps_pe: Some(1e-10),
        },
        analysis: RawAnalysis {
            clusters: Some(if name.starts_with("fig2") {
                (1..=8).collect()
            } else {
                vec![1, 2]
            }),
            ..RawAnalysis::default()
        },
        estimate: RawEstimate::default(),
        run: None,
    })
}

fn pick<T>(over: Option<T>, base: Option<T>) -> Option<T> {
    over.or(base)
}

impl RawConfig {
    /// Fields set in `self` win over `base`.
    fn over(self, base: RawConfig) -> RawConfig {
        let (c, b) = (self.channel, base.channel);
        // A file naming its own channel source replaces the preset's.
        let own_source = c.ensemble.is_some() || c.turbulence.is_some();
        let channel = RawChannel {
            ensemble: if own_source { c.ensemble } else { b.ensemble },
            turbulence: if own_source {
                c.turbulence
            } else {
                b.turbulence
            },
            samples: pick(c.samples, b.samples),
            noise: pick(c.noise, b.noise),
        };
        let (p, q) = (self.protocol, base.protocol);
        let protocol = RawProtocol {
            v_a: pick(p.v_a, q.v_a),
            eta_b: pick(p.eta_b, q.eta_b),
            nu_b: pick(p.nu_b, q.nu_b),
            beta: pick(p.beta, q.beta),
            d: pick(p.d, q.d),
            n: pick(p.n, q.n),
            reveal_fraction: pick(p.reveal_fraction, q.reveal_fraction),
            shot_noise_samples: pick(p.shot_noise_samples, q.shot_noise_samples),
            eta_b_halfwidth: pick(p.eta_b_halfwidth, q.eta_b_halfwidth),
            window_signals: pick(p.window_signals, q.window_signals),
        };
        let (a, z) = (self.analysis, base.analysis);
        let analysis = RawAnalysis {
            strategies: pick(a.strategies, z.strategies),
            attacks: pick(a.attacks, z.attacks),
            regimes: pick(a.regimes, z.regimes),
            optimize_va: pick(a.optimize_va, z.optimize_va),
            va_bounds: pick(a.va_bounds, z.va_bounds),
            va_tol: pick(a.va_tol, z.va_tol),
            estimation: pick(a.estimation, z.estimation),
            worst_case: pick(a.worst_case, z.worst_case),
            threshold_points: pick(a.threshold_points, z.threshold_points),
            thresholds: pick(a.thresholds, z.thresholds),
            clusters: pick(a.clusters, z.clusters),
            range: pick(a.range, z.range),
        };
        let (e, f) = (self.estimate, base.estimate);
        let estimate = RawEstimate {
            batch: pick(e.batch, f.batch),
            shot_noise: pick(e.shot_noise, f.shot_noise),
            eta_f: pick(e.eta_f, f.eta_f),
            xi_f: pick(e.xi_f, f.xi_f),
            v_a: pick(e.v_a, f.v_a),
            k: pick(e.k, f.k),
            shot_noise_samples: pick(e.shot_noise_samples, f.shot_noise_samples),
        };
        RawConfig {
            version: pick(self.version, base.version),
            preset: pick(self.preset, base.preset),
            seed: pick(self.seed, base.seed),
            output: pick(self.output, base.output),
            channel,
            protocol,
            security: RawSecurity {
                eps: pick(self.security.eps, base.security.eps),
                eps_pe: pick(self.security.eps_pe, base.security.eps_pe),
            },
            analysis,
            estimate,
            run: None,
        }
    }
}

pub fn parse_config(text: &str) -> Result<RawConfig, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(format!("config parse error: {e}")))
}

/// Reads, layers on its preset and validates a configuration file.
/// Relative paths inside the file are resolved against its directory.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    load_config_with(path, None)
}

/// As [`load_config`], with `preset` replacing the one named in the file.
pub fn load_config_with(path: &Path, preset: Option<&str>) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut raw = parse_config(&text)?;
    if let Some(name) = preset {
        raw.preset = Some(name.to_string());
    }
    // Absolute paths keep manifests loadable from any directory.
    let dir = path.parent().unwrap_or(Path::new("."));
    for p in [
        &mut raw.channel.ensemble,
        &mut raw.estimate.batch,
        &mut raw.estimate.shot_noise,
    ] {
        if let Some(rel) = p.as_mut() {
            let joined = dir.join(&*rel);
            *rel = std::fs::canonicalize(&joined).unwrap_or(joined);
        }
    }
    resolve(raw)
}

/// A preset on its own.
pub fn preset_config(name: &str) -> Result<ScenarioConfig, ConfigError> {
    resolve(RawConfig {
        version: Some(CONFIG_VERSION),
        preset: Some(name.to_string()),
        ..RawConfig::default()
    })
}

/// Applies the preset named in `raw` (if any) and validates the result.
pub fn resolve(raw: RawConfig) -> Result<ScenarioConfig, ConfigError> {
    if raw.channel.ensemble.is_some() && raw.channel.turbulence.is_some() {
        return Err(invalid(
            "channel",
            "give either `ensemble` or `turbulence`, not both",
        ));
    }
    let raw = match raw.preset.clone() {
        Some(name) => {
            let base = preset(&name).ok_or_else(|| {
                invalid(
                    "preset",
                    format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")),
                )
            })?;
            raw.over(base)
        }
        None => raw,
    };
    validate(raw)
}

fn require<T>(v: Option<T>, field: &str) -> Result<T, ConfigError> {
    v.ok_or_else(|| invalid(field, "missing required field"))
}

fn positive(v: f64, field: &str) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn validate(raw: RawConfig) -> Result<ScenarioConfig, ConfigError> {
    let version = require(raw.version, "version")?;
    if version != CONFIG_VERSION {
        return Err(invalid(
            "version",
            format!("unsupported version {version}, expected {CONFIG_VERSION}"),
        ));
    }

    let samples = raw.channel.samples.unwrap_or(10_000);
    let channel = match (raw.channel.ensemble, raw.channel.turbulence) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "channel",
                "give either `ensemble` or `turbulence`, not both",
            ))
        }
        (None, None) => {
            return Err(invalid(
                "channel",
                "missing channel source: set `ensemble` or `turbulence`",
            ))
        }
        (Some(ensemble), None) => {
            if !ensemble.is_file() {
                return Err(invalid(
                    "channel.ensemble",
                    format!("no such file {}", ensemble.display()),
                ));
            }
            ChannelSource::Load { ensemble }
        }
        (None, Some(turbulence)) => {
            turbulence
                .validate()
                .map_err(|e| invalid("channel.turbulence", e.to_string()))?;
            if samples == 0 {
                return Err(invalid("channel.samples", "must be at least 1"));
            }
            ChannelSource::Sample {
                turbulence,
                samples,
            }
        }
    };
    let noise = raw.channel.noise;
    if let Some(n) = &noise {
        n.validate()
            .map_err(|e| invalid("channel.noise", e.to_string()))?;
    }

    let p = raw.protocol;
    let protocol = ProtocolConfig {
        v_a: p.v_a.unwrap_or(4.0),
        eta_b: require(p.eta_b, "protocol.eta_b")?,
        nu_b: require(p.nu_b, "protocol.nu_b")?,
        beta: p.beta.unwrap_or(0.98),
        d: p.d.unwrap_or(5),
        n: require(p.n, "protocol.n")?,
        reveal_fraction: p.reveal_fraction.unwrap_or(0.5),
        shot_noise_samples: p.shot_noise_samples,
        eta_b_halfwidth: p.eta_b_halfwidth.unwrap_or(0.0),
        window_signals: p.window_signals.unwrap_or(DEFAULT_WINDOW_SIGNALS),
    };
    if !(protocol.v_a >= 0.0) {
        return Err(invalid(
            "protocol.v_a",
            format!("must be >= 0, got {}", protocol.v_a),
        ));
    }
    if !(protocol.eta_b > 0.0 && protocol.eta_b <= 1.0) {
        return Err(invalid(
            "protocol.eta_b",
            format!("must lie in (0, 1], got {}", protocol.eta_b),
        ));
    }
    if !(protocol.nu_b >= 0.0) || !protocol.nu_b.is_finite() {
        return Err(invalid(
            "protocol.nu_b",
            format!("must be >= 0, got {}", protocol.nu_b),
        ));
    }
    if !(0.0..=1.0).contains(&protocol.beta) {
        return Err(invalid(
            "protocol.beta",
            format!("must lie in [0, 1], got {}", protocol.beta),
        ));
    }
    positive(protocol.n, "protocol.n")?;
    if !(protocol.reveal_fraction > 0.0 && protocol.reveal_fraction < 1.0) {
        return Err(invalid(
            "protocol.reveal_fraction",
            format!("must lie in (0, 1), got {}", protocol.reveal_fraction),
        ));
    }
    if protocol.n * (1.0 - protocol.reveal_fraction) < 1.0
        || protocol.n * protocol.reveal_fraction < 2.0
    {
        return Err(invalid(
            "protocol.n",
            format!("{} signals are too few to reveal and keep", protocol.n),
        ));
    }
    if let Some(n0) = protocol.shot_noise_samples {
        if !(n0 >= 1.0) {
            return Err(invalid(
                "protocol.shot_noise_samples",
                format!("must be >= 1, got {n0}"),
            ));
        }
    }
    if !(protocol.eta_b_halfwidth >= 0.0) {
        return Err(invalid("protocol.eta_b_halfwidth", "must be >= 0"));
    }
    if !(protocol.window_signals * protocol.reveal_fraction >= 2.0) {
        return Err(invalid(
            "protocol.window_signals",
            "window must reveal at least 2 signals",
        ));
    }

    let security = SecurityConfig {
        eps: raw.security.eps.unwrap_or(1e-9),
        eps_pe: raw.security.eps_pe.unwrap_or(1e-10),
    };
    positive(security.eps, "security.eps")?;
    positive(security.eps_pe, "security.eps_pe")?;
    if security.eps_pe >= security.eps {
        return Err(invalid(
            "security.eps_pe",
            "must be smaller than security.eps",
        ));
    }

    let a = raw.analysis;
    let analysis = AnalysisConfig {
        strategies: a.strategies.unwrap_or_else(|| vec![Strategy::Baseline]),
        attacks: a
            .attacks
            .unwrap_or_else(|| vec![Attack::Collective, Attack::Individual]),
        regimes: a
            .regimes
            .unwrap_or_else(|| vec![Regime::Finite, Regime::Asymptotic]),
        optimize_va: a.optimize_va.unwrap_or(true),
        va_bounds: a
            .va_bounds
            .unwrap_or([DEFAULT_VA_BOUNDS.0, DEFAULT_VA_BOUNDS.1]),
        va_tol: a.va_tol.unwrap_or(DEFAULT_VA_TOL),
        estimation: a.estimation.unwrap_or_default(),
        worst_case: a.worst_case.unwrap_or_default(),
        threshold_points: a.threshold_points.unwrap_or(40),
        thresholds: a.thresholds,
        clusters: a.clusters.unwrap_or_else(|| (1..=8).collect()),
        range: a.range.unwrap_or([0.0, 1.0]),
    };
    if analysis.strategies.is_empty() {
        return Err(invalid(
            "analysis.strategies",
            "must name at least one strategy",
        ));
    }
    if analysis.attacks.is_empty() {
        return Err(invalid("analysis.attacks", "must name at least one attack"));
    }
    if analysis.regimes.is_empty() {
        return Err(invalid("analysis.regimes", "must name at least one regime"));
    }
    let [lo, hi] = analysis.va_bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(invalid(
            "analysis.va_bounds",
            format!("need 0 < lo < hi, got [{lo}, {hi}]"),
        ));
    }
    positive(analysis.va_tol, "analysis.va_tol")?;
    if analysis.threshold_points == 0 {
        return Err(invalid("analysis.threshold_points", "must be at least 1"));
    }
    if let Some(t) = &analysis.thresholds {
        if t.is_empty() || t.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(invalid(
                "analysis.thresholds",
                "need a nonempty list of values in [0, 1]",
            ));
        }
    }
    if analysis.clusters.is_empty() || analysis.clusters.contains(&0) {
        return Err(invalid(
            "analysis.clusters",
            "need a nonempty list of counts >= 1",
        ));
    }
    if !(analysis.range[0] <= analysis.range[1]) {
        return Err(invalid("analysis.range", "lower end above upper end"));
    }

    let e = raw.estimate;
    let estimate = EstimateConfig {
        batch: e.batch,
        shot_noise: e.shot_noise,
        eta_f: e.eta_f.unwrap_or(0.49),
        xi_f: e.xi_f.unwrap_or(0.03),
        v_a: e.v_a.unwrap_or(3.0),
        k: e.k.unwrap_or(10_000),
        shot_noise_samples: e.shot_noise_samples.unwrap_or(10_000),
    };
    for (p, field) in [
        (&estimate.batch, "estimate.batch"),
        (&estimate.shot_noise, "estimate.shot_noise"),
    ] {
        if let Some(p) = p {
            if !p.is_file() {
                return Err(invalid(field, format!("no such file {}", p.display())));
            }
        }
    }
    if estimate.batch.is_some() != estimate.shot_noise.is_some() {
        return Err(invalid(
            "estimate",
            "`batch` and `shot_noise` must be given together",
        ));
    }
    if !(estimate.eta_f > 0.0 && estimate.eta_f <= 1.0) {
        return Err(invalid("estimate.eta_f", "must lie in (0, 1]"));
    }
    if !(estimate.xi_f >= 0.0) {
        return Err(invalid("estimate.xi_f", "must be >= 0"));
    }
    if !(estimate.v_a > 0.0) {
        return Err(invalid("estimate.v_a", "must be positive"));
    }
    if estimate.k < 2 || estimate.shot_noise_samples < 1 {
        return Err(invalid(
            "estimate.k",
            "need k >= 2 and at least one shot-noise sample",
        ));
    }

    Ok(ScenarioConfig {
        version,
        preset: raw.preset,
        seed: raw.seed.unwrap_or(0),
        output: raw.output,
        channel,
        noise,
        protocol,
        security,
        analysis,
        estimate,
    })
}

/// Estimation randomness is drawn from a seed derived from the run seed so
/// it never shares a stream with channel sampling.
pub fn estimation_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15)
}

impl ScenarioConfig {
    pub fn protocol_params(&self) -> ProtocolParams {
        let p = &self.protocol;
        ProtocolParams {
            v_a: p.v_a,
            detector: DetectorModel {
                eta_b: p.eta_b,
                nu_b: p.nu_b,
            },
            beta: p.beta,
            d: p.d,
            n_total: p.n,
            reveal_fraction: p.reveal_fraction,
            shot_noise_samples: p.shot_noise_samples,
            eta_b_halfwidth: p.eta_b_halfwidth,
        }
    }

    pub fn budget(&self) -> SecurityBudget {
        budget_split(self.security.eps, self.security.eps_pe).expect("validated budget")
    }

    /// Simulated estimation draws from a stream separate from channel sampling.
    pub fn estimation_mode(&self) -> EstimationMode {
        match self.analysis.estimation {
            EstimationKind::Analytic => EstimationMode::Analytic,
            EstimationKind::Simulated => EstimationMode::Simulated {
                seed: estimation_seed(self.seed),
            },
        }
    }

    /// The configuration in file form with every default spelled out, so
    /// that loading it again gives back `self`.
    pub fn to_raw(&self) -> RawConfig {
        let (ensemble, turbulence, samples) = match &self.channel {
            ChannelSource::Sample {
                turbulence,
                samples,
            } => (None, Some(*turbulence), Some(*samples)),
            ChannelSource::Load { ensemble } => (Some(ensemble.clone()), None, None),
        };
        let p = &self.protocol;
        let a = &self.analysis;
        let e = &self.estimate;
        RawConfig {
            version: Some(self.version),
            preset: None,
            seed: Some(self.seed),
            output: self.output.clone(),
            channel: RawChannel {
                ensemble,
                turbulence,
                samples,
                noise: self.noise,
            },
            protocol: RawProtocol {
                v_a: Some(p.v_a),
                eta_b: Some(p.eta_b),
                nu_b: Some(p.nu_b),
                beta: Some(p.beta),
                d: Some(p.d),
                n: Some(p.n),
                reveal_fraction: Some(p.reveal_fraction),
                shot_noise_samples: p.shot_noise_samples,
                eta_b_halfwidth: Some(p.eta_b_halfwidth),
                window_signals: Some(p.window_signals),
            },
            security: RawSecurity {
                eps: Some(self.security.eps),
                eps_pe: Some(self.security.eps_pe),
            },
            analysis: RawAnalysis {
                strategies: Some(a.strategies.clone()),
                attacks: Some(a.attacks.clone()),
                regimes: Some(a.regimes.clone()),
                optimize_va: Some(a.optimize_va),
                va_bounds: Some(a.va_bounds),
                va_tol: Some(a.va_tol),
                estimation: Some(a.estimation),
                worst_case: Some(a.worst_case),
                threshold_points: Some(a.threshold_points),
                thresholds: a.thresholds.clone(),
                clusters: Some(a.clusters.clone()),
                range: Some(a.range),
            },
            estimate: RawEstimate {
                batch: e.batch.clone(),
                shot_noise: e.shot_noise.clone(),
                eta_f: Some(e.eta_f),
                xi_f: Some(e.xi_f),
                v_a: Some(e.v_a),
                k: Some(e.k),
                shot_noise_samples: Some(e.shot_noise_samples),
            },
            run: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_expands_to_reference_values() {
        let c = resolve(RawConfig {
            preset: Some("fig1-L3.5km".into()),
            ..Default::default()
        })
        .unwrap();
        let p = &c.protocol;
        assert_eq!(
            (p.eta_b, p.nu_b, p.beta, p.d, p.n, p.reveal_fraction),
            (0.6, 0.25, 0.98, 5, 1e10, 0.5)
        );
        assert_eq!((c.security.eps, c.security.eps_pe), (1e-9, 1e-10));
        assert_eq!(c.noise, Some(ExcessNoise::Constant { xi: 0.01 }));
        assert_eq!(
            c.channel,
            ChannelSource::Sample {
                turbulence: TurbulenceParams::reference(3500.0),
                samples: 10_000
            }
        );
    }

    #[test]
    fn missing_n_is_named() {
        let raw = parse_config(
            "version = 1\n[channel.turbulence]\nwavelength = 8e-7\nbeam_waist = 0.02\naperture_radius = 0.04\n\
             cn2 = 1e-14\ndistance = 1000.0\nattenuation_db = 1.0\n[protocol]\neta_b = 0.6\nnu_b = 0.1\n",
        )
        .unwrap();
        let err = resolve(raw).unwrap_err().to_string();
        assert!(err.starts_with("protocol.n:"), "{err}");
    }

    #[test]
    fn both_channel_sources_rejected() {
        let raw = parse_config(
            "version = 1\npreset = \"fig1-L2km\"\n[channel]\nensemble = \"e.txt\"\n[channel.turbulence]\n\
             wavelength = 8e-7\nbeam_waist = 0.02\naperture_radius = 0.04\ncn2 = 1e-14\ndistance = 1000.0\n\
             attenuation_db = 1.0\n",
        )
        .unwrap();
        assert!(resolve(raw)
            .unwrap_err()
            .to_string()
            .starts_with("channel:"));
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let err = parse_config("version = 1\n[protocol]\nbogus = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
    }

    #[test]
    fn raw_form_round_trips() {
        let c = preset_config("fig2-L3.5km").unwrap();
        let text = toml::to_string(&c.to_raw()).unwrap();
        let back = resolve(parse_config(&text).unwrap()).unwrap();
        assert_eq!(back, ScenarioConfig { preset: None, ..c });
    }

    #[test]
    fn file_overrides_preset() {
        let raw =
            parse_config("version = 1\npreset = \"fig2-L3km\"\nseed = 9\n[protocol]\nn = 1e8\n")
                .unwrap();
        let c = resolve(raw).unwrap();
        assert_eq!((c.seed, c.protocol.n, c.protocol.eta_b), (9, 1e8, 0.6));
        assert_eq!(c.analysis.clusters, (1..=8).collect::<Vec<_>>());
    }
}
