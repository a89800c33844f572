//! Parameter estimation from revealed quadrature data.
//!
//! Bob's outcome follows the normal linear model `x_B = t x_A + x_n` with
//! `t = sqrt(eta_B eta_f / 2)` and `Var(x_n) = 1 + nu_B + eta_B eta_f xi_f / 2`.
//! Estimates carry symmetric half-widths at confidence `1 - eps_PE`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;
use statrs::function::erf::erfc_inv;

use crate::error::{domain, Error, Result};
use crate::format::fmt_sig;
use crate::gaussian::DetectorModel;

/// Two-sided Gaussian quantile: `erfc(z / sqrt 2) = eps`.
pub fn z_quantile(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(domain(format!("confidence parameter {eps} outside (0, 1]")));
    }
    if eps == 1.0 {
        return Ok(0.0);
    }
    Ok(std::f64::consts::SQRT_2 * erfc_inv(eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub halfwidth: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            halfwidth: 0.0,
        }
    }

    pub fn lower(&self) -> f64 {
        self.value - self.halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.value + self.halfwidth
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower() <= truth && truth <= self.upper()
    }
}

/// Paired Alice/Bob realizations revealed for estimation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadratureBatch {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Bob's outcomes with no signal sent, for shot-noise calibration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShotNoiseBatch {
    pub b0: Vec<f64>,
}

impl QuadratureBatch {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Estimation(format!(
                "{} Alice values for {} Bob values",
                a.len(),
                b.len()
            )));
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(Error::Estimation("non-finite quadrature value".into()));
        }
        Ok(Self { a, b })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["a", "b"])?;
        for (a, b) in self.a.iter().zip(&self.b) {
            out.write_record([fmt_sig(*a, 12), fmt_sig(*b, 12)])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let cols = read_columns(r, &["a", "b"])?;
        let mut it = cols.into_iter();
        Self::new(it.next().unwrap_or_default(), it.next().unwrap_or_default())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

impl ShotNoiseBatch {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(["b0"])?;
        for b in &self.b0 {
            out.write_record([fmt_sig(*b, 12)])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let b0 = read_columns(r, &["b0"])?.pop().unwrap_or_default();
        if b0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Estimation("non-finite shot-noise value".into()));
        }
        Ok(Self { b0 })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn read_columns<R: Read>(r: R, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    msg: format!("missing column {n:?}"),
                })
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        for (col, &i) in cols.iter_mut().zip(&idx) {
            let field = rec.get(i).ok_or_else(|| Error::Parse {
                line,
                msg: "short row".into(),
            })?;
            col.push(field.parse().map_err(|e| Error::Parse {
                line,
                msg: format!("{field:?}: {e}"),
            })?);
        }
    }
    Ok(cols)
}

/// Sufficient statistics of a regression through the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearStats {
    /// Number of revealed pairs (may be fractional in expected-value mode).
    pub k: f64,
    pub sum_a2: f64,
    pub t_hat: f64,
    pub sigma2_hat: f64,
}

impl LinearStats {
    pub fn from_batch(batch: &QuadratureBatch) -> Result<Self> {
        if batch.len() < 2 {
            return Err(Error::Estimation(format!(
                "need at least 2 pairs, got {}",
                batch.len()
            )));
        }
        let sum_a2: f64 = batch.a.iter().map(|a| a * a).sum();
        if sum_a2 <= 0.0 {
            return Err(Error::Estimation(
                "Alice's revealed data are all zero".into(),
            ));
        }
        let sum_ab: f64 = batch.a.iter().zip(&batch.b).map(|(a, b)| a * b).sum();
        let t_hat = sum_ab / sum_a2;
        let k = batch.len() as f64;
        let sigma2_hat = batch
            .a
            .iter()
            .zip(&batch.b)
            .map(|(a, b)| (b - t_hat * a).powi(2))
            .sum::<f64>()
            / k;
        Ok(Self {
            k,
            sum_a2,
            t_hat,
            sigma2_hat,
        })
    }

    /// Confidence intervals for `t` and `sigma^2`.
    pub fn estimates(&self, z: f64) -> (Estimate, Estimate) {
        let t = Estimate {
            value: self.t_hat,
            halfwidth: z * (self.sigma2_hat / self.sum_a2).sqrt(),
        };
        let s = Estimate {
            value: self.sigma2_hat,
            halfwidth: z * self.sigma2_hat * std::f64::consts::SQRT_2 / self.k.sqrt(),
        };
        (t, s)
    }
}

/// Maximum-likelihood estimates of `t` and `sigma^2` with their intervals.
pub fn mle_linear(batch: &QuadratureBatch, eps_pe: f64) -> Result<(Estimate, Estimate)> {
    let z = z_quantile(eps_pe)?;
    Ok(LinearStats::from_batch(batch)?.estimates(z))
}

fn variance_estimate(var_hat: f64, n: f64, z: f64) -> Estimate {
    Estimate {
        value: var_hat,
        halfwidth: z * var_hat * std::f64::consts::SQRT_2 / n.sqrt(),
    }
}

/// Shot-noise variance as the mean of squared outcomes.
pub fn shot_noise_estimate(batch: &ShotNoiseBatch, eps_pe: f64) -> Result<Estimate> {
    if batch.b0.is_empty() {
        return Err(Error::Estimation("empty shot-noise batch".into()));
    }
    let z = z_quantile(eps_pe)?;
    let n = batch.b0.len() as f64;
    let var = batch.b0.iter().map(|b| b * b).sum::<f64>() / n;
    Ok(variance_estimate(var, n, z))
}

/// Estimated effective channel with its detector-efficiency input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatedChannel {
    pub eta_f: Estimate,
    pub xi_f: Estimate,
    pub eta_b: Estimate,
    /// The noise variance came out at or below shot noise and `xi_f` was
    /// clamped to zero.
    pub negative_noise: bool,
}

pub fn effective_channel_estimate(
    t: Estimate,
    sigma2: Estimate,
    sigma0: Estimate,
    eta_b: Estimate,
) -> Result<EstimatedChannel> {
    if !(eta_b.value > 0.0) {
        return Err(Error::Estimation(format!(
            "detector efficiency estimate {} not positive",
            eta_b.value
        )));
    }
    let eta_f = 2.0 * t.value * t.value / eta_b.value;
    if !(eta_f > 0.0) {
        return Err(Error::Estimation(
            "estimated effective transmissivity is zero".into(),
        ));
    }
    let rel_b = (eta_b.halfwidth / eta_b.value).abs();
    let d_eta_f = eta_f * ((2.0 * t.halfwidth / t.value).abs() + rel_b);
    let excess = sigma2.value - sigma0.value;
    let negative_noise = excess <= 0.0;
    let xi_f = if negative_noise {
        0.0
    } else {
        2.0 * excess / (eta_f * eta_b.value)
    };
    // xi_f (|d s2| + |d s0|) / (s2 - s0) written without the division so a
    // vanishing noise difference stays finite.
    let d_xi_f = 2.0 * (sigma2.halfwidth.abs() + sigma0.halfwidth.abs()) / (eta_f * eta_b.value)
        + xi_f * (rel_b + (d_eta_f / eta_f).abs());
    Ok(EstimatedChannel {
        eta_f: Estimate {
            value: eta_f,
            halfwidth: d_eta_f,
        },
        xi_f: Estimate {
            value: xi_f,
            halfwidth: d_xi_f,
        },
        eta_b,
        negative_noise,
    })
}

/// How the worst-case corner of the confidence box is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorstCaseMode {
    /// Low transmissivity, high noise.
    #[default]
    Default,
    /// Evaluate Eve's information at all four corners and keep the largest.
    Exhaustive,
}

/// Default corner `(eta_f - d, xi_f + d)`, clamped to the physical range.
pub fn worst_case(ec: &EstimatedChannel) -> (f64, f64) {
    (ec.eta_f.lower().clamp(0.0, 1.0), ec.xi_f.upper().max(0.0))
}

/// The corner of the confidence box maximizing `eve(eta_f, xi_f)`.
/// Ties keep the earlier corner; the default corner is tried first.
pub fn worst_case_with(
    ec: &EstimatedChannel,
    mode: WorstCaseMode,
    eve: impl Fn(f64, f64) -> Result<f64>,
) -> Result<(f64, f64)> {
    let default = worst_case(ec);
    if mode == WorstCaseMode::Default {
        return Ok(default);
    }
    let etas = [ec.eta_f.lower(), ec.eta_f.upper()].map(|x| x.clamp(0.0, 1.0));
    let xis = [ec.xi_f.upper(), ec.xi_f.lower()].map(|x| x.max(0.0));
    let mut best = default;
    let mut best_val = eve(default.0, default.1)?;
    for &eta in &etas {
        for &xi in &xis {
            if eta <= 0.0 {
                continue;
            }
            let val = eve(eta, xi)?;
            if val > best_val {
                best = (eta, xi);
                best_val = val;
            }
        }
    }
    Ok(best)
}

/// Worst-case estimate of one sub-channel's transmissivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubchannelEstimate {
    pub eta_hat: f64,
    pub halfwidth: f64,
}

impl SubchannelEstimate {
    /// `eta_min = eta_hat - Delta(eta)`, the value post-selection decides on.
    pub fn eta_min(&self) -> f64 {
        self.eta_hat - self.halfwidth
    }

    /// `eta_hat = 2 t^2 / eta_B` with the propagated half-width.
    pub fn from_slope(t: Estimate, eta_b: Estimate) -> Result<Self> {
        if !(eta_b.value > 0.0) {
            return Err(Error::Estimation(format!(
                "detector efficiency estimate {} not positive",
                eta_b.value
            )));
        }
        let eta_hat = 2.0 * t.value * t.value / eta_b.value;
        let halfwidth = if t.value == 0.0 {
            f64::INFINITY
        } else {
            eta_hat * ((2.0 * t.halfwidth / t.value).abs() + (eta_b.halfwidth / eta_b.value).abs())
        };
        Ok(Self { eta_hat, halfwidth })
    }
}

pub fn subchannel_transmissivity_min(
    batch: &QuadratureBatch,
    eps_pe: f64,
    eta_b: Estimate,
) -> Result<SubchannelEstimate> {
    let (t, _) = mle_linear(batch, eps_pe)?;
    SubchannelEstimate::from_slope(t, eta_b)
}

/// Regression slope `t` and noise variance `sigma^2` of the linear model.
pub fn linear_model(eta_f: f64, xi_f: f64, det: &DetectorModel) -> (f64, f64) {
    let t = (det.eta_b * eta_f / 2.0).sqrt();
    let sigma2 = 1.0 + det.nu_b + 0.5 * det.eta_b * eta_f * xi_f;
    (t, sigma2)
}

/// Synthetic revealed data: `A ~ N(0, V_A)`, `B = t A + N(0, sigma^2)`.
pub fn simulate_quadratures(
    eta_f: f64,
    xi_f: f64,
    v_a: f64,
    det: &DetectorModel,
    k: usize,
    seed: u64,
) -> Result<QuadratureBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_quadratures_with(eta_f, xi_f, v_a, det, k, &mut rng)
}

pub fn simulate_quadratures_with<R: Rng + ?Sized>(
    eta_f: f64,
    xi_f: f64,
    v_a: f64,
    det: &DetectorModel,
    k: usize,
    rng: &mut R,
) -> Result<QuadratureBatch> {
    check_channel(eta_f, xi_f, v_a)?;
    let (t, sigma2) = linear_model(eta_f, xi_f, det);
    let (sa, sn) = (v_a.sqrt(), sigma2.sqrt());
    let mut a = Vec::with_capacity(k);
    let mut b = Vec::with_capacity(k);
    for _ in 0..k {
        let x: f64 = sa * rng.sample::<f64, _>(StandardNormal);
        let n: f64 = sn * rng.sample::<f64, _>(StandardNormal);
        a.push(x);
        b.push(t * x + n);
    }
    Ok(QuadratureBatch { a, b })
}

/// Synthetic shot-noise data with variance `1 + nu_B`.
pub fn simulate_shot_noise<R: Rng + ?Sized>(
    det: &DetectorModel,
    n: usize,
    rng: &mut R,
) -> ShotNoiseBatch {
    let s = (1.0 + det.nu_b).sqrt();
    ShotNoiseBatch {
        b0: (0..n)
            .map(|_| s * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    }
}

fn check_channel(eta_f: f64, xi_f: f64, v_a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta_f) || !(xi_f >= 0.0) || !(v_a >= 0.0) {
        return Err(domain(format!(
            "invalid channel (eta_f={eta_f}, xi_f={xi_f}, V_A={v_a})"
        )));
    }
    Ok(())
}

/// Random variates that fix one draw of the regression statistics of `k`
/// revealed pairs, independently of the channel and of `V_A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionDraws {
    pub k: f64,
    /// `sum A^2 / V_A ~ chi2_k`.
    pub chi2_k: f64,
    /// Standardized error of the slope.
    pub z: f64,
    /// `k sigma2_hat / sigma^2 ~ chi2_{k-1}`.
    pub chi2_k1: f64,
}

impl RegressionDraws {
    pub fn sample<R: Rng + ?Sized>(k: f64, rng: &mut R) -> Result<Self> {
        if !(k >= 2.0) || !k.is_finite() {
            return Err(Error::Estimation(format!(
                "cannot simulate estimation from k={k} pairs"
            )));
        }
        let chi_k = ChiSquared::new(k).map_err(|e| Error::Estimation(e.to_string()))?;
        let chi_k1 = ChiSquared::new(k - 1.0).map_err(|e| Error::Estimation(e.to_string()))?;
        Ok(Self {
            k,
            chi2_k: chi_k.sample(rng),
            z: rng.sample(StandardNormal),
            chi2_k1: chi_k1.sample(rng),
        })
    }

    /// Statistics these draws produce for a given channel and modulation.
    pub fn stats(&self, eta: f64, xi: f64, v_a: f64, det: &DetectorModel) -> Result<LinearStats> {
        check_channel(eta, xi, v_a)?;
        if !(v_a > 0.0) {
            return Err(Error::Estimation("no modulation to estimate from".into()));
        }
        let (t, sigma2) = linear_model(eta, xi, det);
        let sum_a2 = v_a * self.chi2_k;
        Ok(LinearStats {
            k: self.k,
            sum_a2,
            t_hat: t + (sigma2 / sum_a2).sqrt() * self.z,
            sigma2_hat: sigma2 * self.chi2_k1 / self.k,
        })
    }
}

/// Draws the regression statistics of `k` revealed pairs from their exact
/// joint law without materializing the data: `sum A^2 ~ V_A chi2_k`,
/// `t_hat | A ~ N(t, sigma^2 / sum A^2)`, `k sigma2_hat ~ sigma^2 chi2_{k-1}`.
pub fn sample_linear_stats<R: Rng + ?Sized>(
    eta_f: f64,
    xi_f: f64,
    v_a: f64,
    det: &DetectorModel,
    k: f64,
    rng: &mut R,
) -> Result<LinearStats> {
    RegressionDraws::sample(k, rng)?.stats(eta_f, xi_f, v_a, det)
}

/// Draws the shot-noise variance estimate of `n` calibration samples.
pub fn sample_shot_noise_variance<R: Rng + ?Sized>(
    det: &DetectorModel,
    n: f64,
    rng: &mut R,
) -> Result<f64> {
    let chi = ChiSquared::new(n).map_err(|e| Error::Estimation(e.to_string()))?;
    Ok((1.0 + det.nu_b) * chi.sample(rng) / n)
}

/// Sample sizes and confidence used by an estimation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimationInputs {
    /// Revealed pairs used for the effective channel.
    pub k: f64,
    /// Shot-noise calibration samples.
    pub shot_noise_samples: f64,
    pub eps_pe: f64,
    /// Uncertainty of the detector efficiency.
    pub eta_b_halfwidth: f64,
}

/// Error bars with every sum at its expectation: `sum A^2 = k V_A` and the
/// variances at their true values. Point estimates are the truth.
pub fn analytic_error_bars(
    eta_f: f64,
    xi_f: f64,
    v_a: f64,
    det: &DetectorModel,
    inputs: &EstimationInputs,
) -> Result<EstimatedChannel> {
    check_channel(eta_f, xi_f, v_a)?;
    if !(inputs.k >= 1.0) || !(inputs.shot_noise_samples >= 1.0) || !(v_a > 0.0) {
        return Err(Error::Estimation(format!(
            "cannot bound estimation with k={}, V_A={v_a}",
            inputs.k
        )));
    }
    let z = z_quantile(inputs.eps_pe)?;
    let (t, sigma2) = linear_model(eta_f, xi_f, det);
    let stats = LinearStats {
        k: inputs.k,
        sum_a2: inputs.k * v_a,
        t_hat: t,
        sigma2_hat: sigma2,
    };
    let (t_est, s_est) = stats.estimates(z);
    let s0 = variance_estimate(1.0 + det.nu_b, inputs.shot_noise_samples, z);
    let eta_b = Estimate {
        value: det.eta_b,
        halfwidth: inputs.eta_b_halfwidth,
    };
    let mut ec = effective_channel_estimate(t_est, s_est, s0, eta_b)?;
    // Report the exact parameters rather than their round-trip through t and sigma^2.
    ec.eta_f.value = eta_f;
    ec.xi_f.value = xi_f;
    Ok(ec)
}

/// Simulated counterpart of [`analytic_error_bars`]: one draw of the
/// estimators from their exact sampling distribution.
pub fn simulated_estimate<R: Rng + ?Sized>(
    eta_f: f64,
    xi_f: f64,
    v_a: f64,
    det: &DetectorModel,
    inputs: &EstimationInputs,
    rng: &mut R,
) -> Result<EstimatedChannel> {
    let z = z_quantile(inputs.eps_pe)?;
    let stats = sample_linear_stats(eta_f, xi_f, v_a, det, inputs.k, rng)?;
    let (t_est, s_est) = stats.estimates(z);
    let s0 = variance_estimate(
        sample_shot_noise_variance(det, inputs.shot_noise_samples, rng)?,
        inputs.shot_noise_samples,
        z,
    );
    let eta_b = Estimate {
        value: det.eta_b,
        halfwidth: inputs.eta_b_halfwidth,
    };
    effective_channel_estimate(t_est, s_est, s0, eta_b)
}

/// Expected-value sub-channel estimate from `k_s` revealed pairs.
pub fn analytic_subchannel(
    eta: f64,
    xi: f64,
    v_a: f64,
    det: &DetectorModel,
    k_s: f64,
    eps_pe: f64,
    eta_b_halfwidth: f64,
) -> Result<SubchannelEstimate> {
    let z = z_quantile(eps_pe)?;
    let (t, sigma2) = linear_model(eta, xi, det);
    let stats = LinearStats {
        k: k_s,
        sum_a2: k_s * v_a,
        t_hat: t,
        sigma2_hat: sigma2,
    };
    let mut s = SubchannelEstimate::from_slope(
        stats.estimates(z).0,
        Estimate {
            value: det.eta_b,
            halfwidth: eta_b_halfwidth,
        },
    )?;
    s.eta_hat = eta;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn fig_detector() -> DetectorModel {
        DetectorModel::new(0.6, 0.25).unwrap()
    }

    #[test]
    fn quantile_edges() {
        assert_eq!(z_quantile(1.0).unwrap(), 0.0);
        assert!(z_quantile(0.0).is_err());
        assert!(z_quantile(-1.0).is_err());
        assert!(z_quantile(1.5).is_err());
    }

    #[test]
    fn noiseless_regression() {
        let a = vec![1.0, -2.0, 0.5, 3.0];
        let b = a.iter().map(|x| 0.5 * x).collect();
        let (t, s) = mle_linear(&QuadratureBatch::new(a, b).unwrap(), 0.05).unwrap();
        assert_eq!(t.value, 0.5);
        assert_eq!(s.value, 0.0);
        assert_eq!(t.halfwidth, 0.0);
    }

    #[test]
    fn degenerate_alice_data() {
        let batch = QuadratureBatch::new(vec![0.0; 5], vec![1.0; 5]).unwrap();
        assert!(matches!(
            mle_linear(&batch, 0.05),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn variance_halfwidth_scales_with_sqrt_k() {
        let z = z_quantile(0.05).unwrap();
        let s1 = LinearStats {
            k: 1000.0,
            sum_a2: 3000.0,
            t_hat: 0.4,
            sigma2_hat: 1.2,
        }
        .estimates(z)
        .1;
        let s2 = LinearStats {
            k: 2000.0,
            sum_a2: 3000.0,
            t_hat: 0.4,
            sigma2_hat: 1.2,
        }
        .estimates(z)
        .1;
        assert_relative_eq!(
            s1.halfwidth / s2.halfwidth,
            2f64.sqrt(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn slope_recovers_transmissivity() {
        let det = fig_detector();
        let (t, _) = linear_model(0.49, 0.03, &det);
        let ec = effective_channel_estimate(
            Estimate::exact(t),
            Estimate::exact(2.0),
            Estimate::exact(1.25),
            Estimate::exact(0.6),
        )
        .unwrap();
        assert_relative_eq!(ec.eta_f.value, 0.49, max_relative = 1e-14);
        assert_eq!(ec.eta_f.halfwidth, 0.0);
        assert_eq!(ec.xi_f.halfwidth, 0.0);
    }

    #[test]
    fn negative_noise_is_clamped() {
        let ec = effective_channel_estimate(
            Estimate::exact(0.4),
            Estimate {
                value: 1.0,
                halfwidth: 0.01,
            },
            Estimate {
                value: 1.1,
                halfwidth: 0.01,
            },
            Estimate::exact(0.6),
        )
        .unwrap();
        assert!(ec.negative_noise);
        assert_eq!(ec.xi_f.value, 0.0);
        assert!(ec.xi_f.halfwidth.is_finite() && ec.xi_f.halfwidth > 0.0);
    }

    #[test]
    fn worst_case_corner() {
        let ec = EstimatedChannel {
            eta_f: Estimate {
                value: 0.49,
                halfwidth: 0.01,
            },
            xi_f: Estimate {
                value: 0.03,
                halfwidth: 0.005,
            },
            eta_b: Estimate::exact(0.6),
            negative_noise: false,
        };
        let (e, x) = worst_case(&ec);
        assert_relative_eq!(e, 0.48, max_relative = 1e-14);
        assert_relative_eq!(x, 0.035, max_relative = 1e-14);
        let exact = EstimatedChannel {
            eta_f: Estimate::exact(0.49),
            xi_f: Estimate::exact(0.03),
            ..ec
        };
        assert_eq!(worst_case(&exact), (0.49, 0.03));
        // A made-up objective favouring high transmissivity picks that corner.
        let c = worst_case_with(&ec, WorstCaseMode::Exhaustive, |e, x| Ok(e - x)).unwrap();
        assert_relative_eq!(c.0, 0.50, max_relative = 1e-14);
        assert_relative_eq!(c.1, 0.025, max_relative = 1e-14);
    }

    #[test]
    fn noiseless_subchannel() {
        let det = fig_detector();
        let (t, _) = linear_model(0.64, 0.0, &det);
        let a = vec![1.0, -0.3, 2.0, 0.7];
        let b = a.iter().map(|x| t * x).collect();
        let s = subchannel_transmissivity_min(
            &QuadratureBatch::new(a, b).unwrap(),
            0.05,
            Estimate::exact(0.6),
        )
        .unwrap();
        assert_relative_eq!(s.eta_hat, 0.64, max_relative = 1e-14);
        assert_relative_eq!(s.eta_min(), 0.64, max_relative = 1e-14);
    }

    #[test]
    fn subchannel_halfwidth_halves_when_k_quadruples() {
        let det = fig_detector();
        let a = analytic_subchannel(0.3, 0.01, 4.0, &det, 1000.0, 0.05, 0.0).unwrap();
        let b = analytic_subchannel(0.3, 0.01, 4.0, &det, 4000.0, 0.05, 0.0).unwrap();
        assert_relative_eq!(a.halfwidth / b.halfwidth, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn simulation_is_seeded() {
        let det = fig_detector();
        let x = simulate_quadratures(0.49, 0.03, 3.0, &det, 100, 9).unwrap();
        let y = simulate_quadratures(0.49, 0.03, 3.0, &det, 100, 9).unwrap();
        assert_eq!(x, y);
        let z = simulate_quadratures(0.49, 0.03, 0.0, &det, 100, 9).unwrap();
        assert!(z.a.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn analytic_bars_vanish_for_large_k() {
        let det = fig_detector();
        let mut inputs = EstimationInputs {
            k: 1e6,
            shot_noise_samples: 1e6,
            eps_pe: 0.05,
            eta_b_halfwidth: 0.0,
        };
        let ec = analytic_error_bars(0.49, 0.03, 3.0, &det, &inputs).unwrap();
        let (t, sigma2) = linear_model(0.49, 0.03, &det);
        let z = z_quantile(0.05).unwrap();
        assert_eq!((ec.eta_f.value, ec.xi_f.value), (0.49, 0.03));
        assert_relative_eq!(
            ec.eta_f.halfwidth,
            0.49 * 2.0 * z * (sigma2 / 3e6).sqrt() / t,
            max_relative = 1e-12
        );
        inputs.k = 1e30;
        inputs.shot_noise_samples = 1e30;
        let ec = analytic_error_bars(0.49, 0.03, 3.0, &det, &inputs).unwrap();
        assert!(ec.eta_f.halfwidth < 1e-12 && ec.xi_f.halfwidth < 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let batch =
            QuadratureBatch::new(vec![0.1, -2.5, 1.0 / 3.0], vec![1e-7, 4.0, -0.25]).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        assert!(std::str::from_utf8(&buf)
            .unwrap()
            .starts_with("a,b\n0.1,0.0000001\n"));
        let back = QuadratureBatch::read_csv(&buf[..]).unwrap();
        assert_eq!(back.a[2], 0.333333333333);

        let shot = ShotNoiseBatch {
            b0: vec![1.5, -0.5],
        };
        let mut buf = Vec::new();
        shot.write_csv(&mut buf).unwrap();
        assert_eq!(ShotNoiseBatch::read_csv(&buf[..]).unwrap(), shot);

        let bad = "a,b\n1.0,2.0\n3.0,nope\n";
        assert!(matches!(
            QuadratureBatch::read_csv(bad.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
