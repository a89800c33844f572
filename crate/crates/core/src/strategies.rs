//! Post-processing strategies over a fading channel: the all-data baseline,
//! post-selection of good sub-channels, clusterization into transmissivity
//! bins, and a separate analysis of every sub-channel.

use std::fmt;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    effective_params, moments_masked, moments_where, ChannelEnsemble, ChannelMoments,
    EffectiveChannel,
};
use crate::error::{Error, Result};
use crate::estimation::{
    analytic_error_bars, simulated_estimate, worst_case_with, z_quantile, Estimate,
    EstimatedChannel, EstimationInputs, RegressionDraws, SubchannelEstimate, WorstCaseMode,
};
use crate::keyrate::{
    eve_information, finite_key_length, mutual_information, Attack, ChannelEcho, KeyRateResult,
    ProtocolParams, Regime, SecurityBudget,
};

/// Default search interval for `V_A` in shot-noise units.
pub const DEFAULT_VA_BOUNDS: (f64, f64) = (0.1, 100.0);
/// Default relative tolerance of the `V_A` search.
pub const DEFAULT_VA_TOL: f64 = 1e-3;
/// Signals sent during one stability window of the channel.
pub const DEFAULT_WINDOW_SIGNALS: f64 = 1e5;

// Eve's information is evaluated no lower than this transmissivity when a
// confidence interval reaches zero.
const MIN_WORST_ETA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// All data analysed together.
    Baseline,
    /// Keep sub-channels whose transmissivity is at least `eta_th`.
    PostSelection { eta_th: f64 },
    /// `n` uniform transmissivity bins over `[0, eta_max]`, each analysed
    /// with its share of the data and of the security budget.
    Clusters { n: usize },
    /// Every ensemble sample is one stability window analysed alone.
    PerSubchannel,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Baseline => write!(f, "baseline"),
            Self::PostSelection { eta_th } => write!(f, "post_selection(eta_th={eta_th})"),
            Self::Clusters { n } => write!(f, "clusters(n={n})"),
            Self::PerSubchannel => write!(f, "per_subchannel"),
        }
    }
}

/// How estimation uncertainty enters Eve's term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimationMode {
    /// Error bars at the expected values of the estimators; post-selection
    /// decides on the true transmissivity.
    #[default]
    Analytic,
    /// One seeded draw of every estimator; post-selection decides on the
    /// worst-case sub-channel estimate `eta_min`.
    Simulated { seed: u64 },
}

/// Data kept by a transmissivity threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PostSelectionResult {
    pub eta_th: f64,
    pub probability: f64,
    pub moments: ChannelMoments,
    pub effective: EffectiveChannel,
    /// `N_ps = P_s N`.
    pub n_ps: f64,
    /// `k_ps = P_s k`.
    pub k_ps: f64,
    /// `N'_ps = N_ps - k_ps`.
    pub n_prime_ps: f64,
}

/// Moments and effective channel of the samples with `eta >= eta_th`.
pub fn post_select(
    e: &ChannelEnsemble,
    eta_th: f64,
    v: f64,
    pp: &ProtocolParams,
) -> Result<PostSelectionResult> {
    let m = moments_where(e, |x| x >= eta_th).map_err(|err| match err {
        Error::EmptySelection { .. } => Error::EmptySelection {
            lo: eta_th,
            hi: f64::INFINITY,
        },
        other => other,
    })?;
    post_selection_from(eta_th, m, v, pp)
}

fn post_selection_from(
    eta_th: f64,
    m: ChannelMoments,
    v: f64,
    pp: &ProtocolParams,
) -> Result<PostSelectionResult> {
    let effective = effective_params(&m, v)?;
    let p = m.probability;
    Ok(PostSelectionResult {
        eta_th,
        probability: p,
        moments: m,
        effective,
        n_ps: p * pp.n_total,
        k_ps: p * pp.k(),
        n_prime_ps: p * pp.n_prime(),
    })
}

/// One transmissivity bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cluster {
    /// 1-based bin number.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub probability: f64,
    /// `None` for an empty bin.
    pub moments: Option<ChannelMoments>,
    pub effective: Option<EffectiveChannel>,
    /// The full budget scaled by `P_j`.
    pub budget: SecurityBudget,
    pub n_prime: f64,
    pub k: f64,
}

/// Splits `[0, eta_max]` into `n` bins of width `eta_max / n`. Bins are
/// half-open except the last, which also holds `eta_max`.
pub fn clusterize(
    e: &ChannelEnsemble,
    n: usize,
    v: f64,
    pp: &ProtocolParams,
    sb: &SecurityBudget,
) -> Result<Vec<Cluster>> {
    if n == 0 {
        return Err(crate::error::domain("cluster count must be at least 1"));
    }
    let delta = e.eta_max() / n as f64;
    (0..n)
        .map(|j| {
            let (lo, hi) = (j as f64 * delta, (j + 1) as f64 * delta);
            let last = j + 1 == n;
            let m = match moments_where(e, |x| x >= lo && (x < hi || last)) {
                Ok(m) => Some(m),
                Err(Error::EmptySelection { .. }) => None,
                Err(err) => return Err(err),
            };
            let p = m.map_or(0.0, |m| m.probability);
            let effective = match m.map(|m| effective_params(&m, v)) {
                Some(Ok(f)) => Some(f),
                Some(Err(Error::DegenerateChannel)) | None => None,
                Some(Err(err)) => return Err(err),
            };
            Ok(Cluster {
                index: j + 1,
                lo,
                hi,
                probability: p,
                moments: m,
                effective,
                budget: sb.scaled(p),
                n_prime: p * pp.n_prime(),
                k: p * pp.k(),
            })
        })
        .collect()
}

/// Maximizes `f` over `[lo, hi]`: a 40-point logarithmic scan, then golden
/// section around the best scan point until the bracket is below
/// `tol * V_A`. Returns the maximizer and the maximum.
pub fn optimize_modulation(
    f: impl Fn(f64) -> Result<f64>,
    bounds: (f64, f64),
    tol: f64,
) -> Result<(f64, f64)> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo) || !hi.is_finite() {
        return Err(crate::error::domain(format!(
            "invalid V_A bounds [{lo}, {hi}]"
        )));
    }
    let eval = |x: f64| -> Result<f64> {
        let y = f(x)?;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Optimization { v_a: x, value: y })
        }
    };
    const POINTS: usize = 40;
    let ratio = (hi / lo).ln() / (POINTS - 1) as f64;
    let grid: Vec<f64> = (0..POINTS)
        .map(|i| {
            if i + 1 == POINTS {
                hi
            } else {
                lo * (ratio * i as f64).exp()
            }
        })
        .collect();
    let mut best = (grid[0], eval(grid[0])?);
    let mut best_i = 0;
    for (i, &x) in grid.iter().enumerate().skip(1) {
        let y = eval(x)?;
        if y > best.1 {
            best = (x, y);
            best_i = i;
        }
    }

    let (mut a, mut b) = (
        grid[best_i.saturating_sub(1)],
        grid[(best_i + 1).min(POINTS - 1)],
    );
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    while (b - a) > tol * 0.5 * (a + b) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
    }
    for (x, y) in [(c, fc), (d, fd)] {
        if y > best.1 {
            best = (x, y);
        }
    }
    Ok(best)
}

/// One block of data analysed as a unit.
#[derive(Debug, Clone, Copy)]
struct Subset {
    /// Effective parameters from the true transmissivities.
    truth: EffectiveChannel,
    /// Weight in the asymptotic rate.
    weight: f64,
    n_prime: f64,
    k: f64,
    budget: SecurityBudget,
    /// Random stream for simulated estimation.
    stream: u64,
}

#[derive(Debug, Clone, Copy)]
struct SubsetValue {
    /// Bits (finite) or bits per symbol (asymptotic), before clamping.
    raw: f64,
    echo: ChannelEcho,
}

/// Evaluates strategies on one ensemble with fixed protocol settings.
#[derive(Debug)]
pub struct Evaluator<'a> {
    ensemble: &'a ChannelEnsemble,
    protocol: ProtocolParams,
    budget: SecurityBudget,
    mode: EstimationMode,
    worst_case: WorstCaseMode,
    window_signals: f64,
    bounds: (f64, f64),
    tol: f64,
    selection_draws: OnceLock<Result<Vec<RegressionDraws>, String>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        ensemble: &'a ChannelEnsemble,
        protocol: ProtocolParams,
        budget: SecurityBudget,
    ) -> Result<Self> {
        protocol.validate()?;
        Ok(Self {
            ensemble,
            protocol,
            budget,
            mode: EstimationMode::Analytic,
            worst_case: WorstCaseMode::Default,
            window_signals: DEFAULT_WINDOW_SIGNALS,
            bounds: DEFAULT_VA_BOUNDS,
            tol: DEFAULT_VA_TOL,
            selection_draws: OnceLock::new(),
        })
    }

    pub fn with_mode(mut self, mode: EstimationMode) -> Self {
        self.mode = mode;
        self.selection_draws = OnceLock::new();
        self
    }

    pub fn with_worst_case(mut self, worst_case: WorstCaseMode) -> Self {
        self.worst_case = worst_case;
        self
    }

    /// Signals per stability window `N_s`; `k_s = c N_s` of them are revealed.
    pub fn with_window_signals(mut self, n_s: f64) -> Result<Self> {
        if !(n_s * self.protocol.reveal_fraction >= 2.0) || !n_s.is_finite() {
            return Err(crate::error::domain(format!(
                "window of {n_s} signals reveals fewer than 2"
            )));
        }
        self.window_signals = n_s;
        self.selection_draws = OnceLock::new();
        Ok(self)
    }

    pub fn with_va_search(mut self, bounds: (f64, f64), tol: f64) -> Self {
        self.bounds = bounds;
        self.tol = tol;
        self
    }

    pub fn protocol(&self) -> &ProtocolParams {
        &self.protocol
    }

    pub fn budget(&self) -> &SecurityBudget {
        &self.budget
    }

    pub fn ensemble(&self) -> &ChannelEnsemble {
        self.ensemble
    }

    pub fn mode(&self) -> EstimationMode {
        self.mode
    }

    fn window_reveal(&self) -> f64 {
        self.protocol.reveal_fraction * self.window_signals
    }

    /// Worst-case sub-channel estimates `eta_min` for every ensemble sample
    /// at modulation `v_a`, from `k_s` revealed pairs per window. In
    /// analytic mode the estimators sit at their expected values.
    pub fn subchannel_estimates(&self, v_a: f64) -> Result<Vec<SubchannelEstimate>> {
        let det = &self.protocol.detector;
        let eta_b = Estimate {
            value: det.eta_b,
            halfwidth: self.protocol.eta_b_halfwidth,
        };
        let z = z_quantile(self.budget.eps_pe)?;
        let noise = self.ensemble.noise();
        match self.mode {
            EstimationMode::Analytic => self
                .ensemble
                .samples()
                .iter()
                .map(|&eta| {
                    crate::estimation::analytic_subchannel(
                        eta,
                        noise.at(eta),
                        v_a,
                        det,
                        self.window_reveal(),
                        self.budget.eps_pe,
                        self.protocol.eta_b_halfwidth,
                    )
                })
                .collect(),
            EstimationMode::Simulated { seed } => {
                let draws = self
                    .selection_draws
                    .get_or_init(|| {
                        let mut rng = stream_rng(seed, 0);
                        let k_s = self.window_reveal();
                        (0..self.ensemble.len())
                            .map(|_| RegressionDraws::sample(k_s, &mut rng))
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| e.to_string())
                    })
                    .as_ref()
                    .map_err(|msg| Error::Estimation(msg.clone()))?;
                self.ensemble
                    .samples()
                    .iter()
                    .zip(draws)
                    .map(|(&eta, d)| {
                        let stats = d.stats(eta, noise.at(eta), v_a, det)?;
                        SubchannelEstimate::from_slope(stats.estimates(z).0, eta_b)
                    })
                    .collect()
            }
        }
    }

    /// Post-selection at modulation `v_a`. Simulated estimation decides on
    /// `eta_min`; the kept data's moments use the true transmissivities.
    pub fn post_select(&self, eta_th: f64, v_a: f64) -> Result<PostSelectionResult> {
        match self.mode {
            EstimationMode::Simulated { .. } if eta_th > 0.0 => {
                let mask: Vec<bool> = self
                    .subchannel_estimates(v_a)?
                    .iter()
                    .map(|s| s.eta_min() >= eta_th)
                    .collect();
                let m = moments_masked(self.ensemble, &mask).map_err(|err| match err {
                    Error::EmptySelection { .. } => Error::EmptySelection {
                        lo: eta_th,
                        hi: f64::INFINITY,
                    },
                    other => other,
                })?;
                post_selection_from(eta_th, m, v_a + 1.0, &self.protocol)
            }
            _ => post_select(self.ensemble, eta_th, v_a + 1.0, &self.protocol),
        }
    }

    fn subsets(&self, strategy: Strategy, v_a: f64) -> Result<Vec<Subset>> {
        let pp = &self.protocol;
        let v = v_a + 1.0;
        let whole = |truth: EffectiveChannel, p: f64, budget: SecurityBudget, stream: u64| Subset {
            truth,
            weight: p,
            n_prime: p * pp.n_prime(),
            k: p * pp.k(),
            budget,
            stream,
        };
        let skip_empty = |r: Result<Vec<Subset>>| match r {
            Err(Error::EmptySelection { .. }) | Err(Error::DegenerateChannel) => Ok(Vec::new()),
            other => other,
        };
        match strategy {
            Strategy::Baseline => skip_empty((|| {
                let m = moments_where(self.ensemble, |_| true)?;
                Ok(vec![whole(
                    effective_params(&m, v)?,
                    m.probability,
                    self.budget,
                    1,
                )])
            })()),
            Strategy::PostSelection { eta_th } => skip_empty((|| {
                let ps = self.post_select(eta_th, v_a)?;
                Ok(vec![whole(ps.effective, ps.probability, self.budget, 1)])
            })()),
            Strategy::Clusters { n } => Ok(clusterize(self.ensemble, n, v, pp, &self.budget)?
                .into_iter()
                .filter_map(|c| {
                    c.effective.map(|f| Subset {
                        truth: f,
                        weight: c.probability,
                        n_prime: c.n_prime,
                        k: c.k,
                        budget: c.budget,
                        stream: c.index as u64,
                    })
                })
                .collect()),
            Strategy::PerSubchannel => {
                let n = self.ensemble.len() as f64;
                let noise = self.ensemble.noise();
                let k_s = self.window_reveal();
                let budget = self.budget.scaled(1.0 / n);
                Ok(self
                    .ensemble
                    .samples()
                    .iter()
                    .enumerate()
                    .filter(|(_, &eta)| eta > 0.0)
                    .map(|(i, &eta)| Subset {
                        truth: EffectiveChannel {
                            eta_f: eta,
                            xi_f: noise.at(eta),
                        },
                        weight: 1.0 / n,
                        n_prime: self.window_signals - k_s,
                        k: k_s,
                        budget,
                        stream: 1 + i as u64,
                    })
                    .collect())
            }
        }
    }

    fn estimate(&self, s: &Subset, v_a: f64) -> Result<EstimatedChannel> {
        let det = &self.protocol.detector;
        let inputs = EstimationInputs {
            k: s.k,
            shot_noise_samples: self.protocol.shot_noise_count(),
            eps_pe: s.budget.eps_pe,
            eta_b_halfwidth: self.protocol.eta_b_halfwidth,
        };
        let EffectiveChannel { eta_f, xi_f } = s.truth;
        match self.mode {
            EstimationMode::Analytic => analytic_error_bars(eta_f, xi_f, v_a, det, &inputs),
            EstimationMode::Simulated { seed } => {
                let mut rng = stream_rng(seed, s.stream);
                simulated_estimate(eta_f, xi_f, v_a, det, &inputs, &mut rng)
            }
        }
    }

    fn subset_value(
        &self,
        s: &Subset,
        attack: Attack,
        regime: Regime,
        v_a: f64,
    ) -> Result<SubsetValue> {
        let det = &self.protocol.detector;
        let v = v_a + 1.0;
        let EffectiveChannel { eta_f, xi_f } = s.truth;
        match regime {
            Regime::Asymptotic => {
                let i_ab = mutual_information(eta_f, xi_f, v, det)?;
                let eve = eve_information(attack, eta_f, xi_f, v, det)?;
                Ok(SubsetValue {
                    raw: s.weight * (self.protocol.beta * i_ab - eve),
                    echo: ChannelEcho {
                        eta_f,
                        xi_f,
                        eta_f_wc: eta_f,
                        xi_f_wc: xi_f,
                    },
                })
            }
            Regime::Finite => {
                let ec = self.estimate(s, v_a)?;
                let (pe, px) = (ec.eta_f.value.min(1.0), ec.xi_f.value);
                let i_ab = mutual_information(pe, px, v, det)?;
                let eve_at =
                    |e: f64, x: f64| eve_information(attack, e.max(MIN_WORST_ETA), x, v, det);
                let (we, wx) = worst_case_with(&ec, self.worst_case, eve_at)?;
                let we = we.max(MIN_WORST_ETA);
                let eve = eve_at(we, wx)?;
                let l = finite_key_length(
                    self.protocol.beta,
                    self.protocol.d,
                    &s.budget,
                    i_ab,
                    eve,
                    s.n_prime,
                    self.protocol.n_total,
                );
                Ok(SubsetValue {
                    raw: l.raw,
                    echo: ChannelEcho {
                        eta_f: pe,
                        xi_f: px,
                        eta_f_wc: we,
                        xi_f_wc: wx,
                    },
                })
            }
        }
    }

    /// Evaluates `strategy` at the protocol's own `V_A`.
    pub fn evaluate(
        &self,
        strategy: Strategy,
        attack: Attack,
        regime: Regime,
    ) -> Result<KeyRateResult> {
        self.evaluate_at(strategy, attack, regime, self.protocol.v_a)
    }

    pub fn evaluate_at(
        &self,
        strategy: Strategy,
        attack: Attack,
        regime: Regime,
        v_a: f64,
    ) -> Result<KeyRateResult> {
        let subsets = self.subsets(strategy, v_a)?;
        let values: Vec<SubsetValue> = if subsets.len() > 64 {
            subsets
                .par_iter()
                .map(|s| self.subset_value(s, attack, regime, v_a))
                .collect::<Result<_>>()?
        } else {
            subsets
                .iter()
                .map(|s| self.subset_value(s, attack, regime, v_a))
                .collect::<Result<_>>()?
        };

        // Subsets with a negative key length are discarded; when none is
        // positive the least negative one is reported so the curve stays
        // informative below zero.
        let raw = if values.is_empty() {
            0.0
        } else if values.iter().any(|s| s.raw > 0.0) {
            values.iter().map(|s| s.raw.max(0.0)).sum()
        } else {
            values
                .iter()
                .map(|s| s.raw)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let denom = match strategy {
            Strategy::PerSubchannel => self.ensemble.len() as f64 * self.window_signals,
            _ => self.protocol.n_total,
        };
        let (raw_rate, key_length) = match regime {
            Regime::Finite => (raw / denom, raw.max(0.0)),
            Regime::Asymptotic => (raw, raw.max(0.0) * denom),
        };
        let channel = match (strategy, values.as_slice()) {
            (Strategy::Baseline | Strategy::PostSelection { .. }, [one]) => Some(one.echo),
            _ => None,
        };
        Ok(KeyRateResult {
            regime,
            attack,
            strategy,
            v_a,
            channel,
            key_length,
            raw_rate,
            rate: raw_rate.max(0.0),
            secure: raw > 0.0,
            budget: self.budget,
        })
    }

    /// Evaluates `strategy` at the `V_A` maximizing its unclamped rate.
    pub fn optimize(
        &self,
        strategy: Strategy,
        attack: Attack,
        regime: Regime,
    ) -> Result<KeyRateResult> {
        let (v_a, _) = optimize_modulation(
            |v_a| Ok(self.evaluate_at(strategy, attack, regime, v_a)?.raw_rate),
            self.bounds,
            self.tol,
        )?;
        self.evaluate_at(strategy, attack, regime, v_a)
    }

    /// One row per strategy, attack and regime, in that nesting order.
    /// Grid points run concurrently; row order does not depend on scheduling.
    pub fn sweep(
        &self,
        strategies: &[Strategy],
        attacks: &[Attack],
        regimes: &[Regime],
        optimize_va: bool,
    ) -> Result<Vec<KeyRateResult>> {
        if strategies.is_empty() || attacks.is_empty() || regimes.is_empty() {
            return Err(crate::error::domain("sweep grid is empty"));
        }
        let jobs: Vec<(Strategy, Attack, Regime)> = strategies
            .iter()
            .flat_map(|&s| {
                attacks
                    .iter()
                    .flat_map(move |&a| regimes.iter().map(move |&r| (s, a, r)))
            })
            .collect();
        jobs.par_iter()
            .map(|&(s, a, r)| {
                if optimize_va {
                    self.optimize(s, a, r)
                } else {
                    self.evaluate(s, a, r)
                }
            })
            .collect()
    }
}

/// Thresholds `0, ..., 0.95 eta_max` in `points` uniform steps.
pub fn threshold_grid(e: &ChannelEnsemble, points: usize) -> Vec<f64> {
    let top = 0.95 * e.eta_max();
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| top * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
