//! Information quantities and key lengths.
//!
//! All informations are in bits per symbol for reverse reconciliation with
//! heterodyne detection, with Bob's detection noise outside Eve's reach.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gaussian::{
    assemble_measurement_cm, build_state_cm, condition_on_heterodyne, von_neumann_entropy,
    DetectorModel,
};
use crate::strategies::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    Collective,
    Individual,
}

impl Attack {
    pub fn name(self) -> &'static str {
        match self {
            Self::Collective => "collective",
            Self::Individual => "individual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Asymptotic,
    Finite,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::Asymptotic => "asymptotic",
            Self::Finite => "finite",
        }
    }
}

/// Protocol settings shared by every strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolParams {
    /// Modulation variance `V_A`; `V = V_A + 1`.
    pub v_a: f64,
    pub detector: DetectorModel,
    /// Reconciliation efficiency.
    pub beta: f64,
    /// Discretization bits per symbol.
    pub d: u32,
    /// Total number of signals `N`.
    pub n_total: f64,
    /// Fraction `c` of the signals revealed for estimation, `k = c N`.
    pub reveal_fraction: f64,
    /// Shot-noise calibration samples; `None` uses `N`.
    pub shot_noise_samples: Option<f64>,
    /// Uncertainty of the detector efficiency.
    pub eta_b_halfwidth: f64,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_a >= 0.0) || !self.v_a.is_finite() {
            return Err(domain(format!("V_A = {} must be >= 0", self.v_a)));
        }
        DetectorModel::new(self.detector.eta_b, self.detector.nu_b)?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(domain(format!("beta = {} outside [0, 1]", self.beta)));
        }
        if !(self.reveal_fraction > 0.0 && self.reveal_fraction < 1.0) {
            return Err(domain(format!(
                "reveal fraction {} outside (0, 1)",
                self.reveal_fraction
            )));
        }
        if !(self.n_prime() >= 1.0) || !self.n_total.is_finite() {
            return Err(domain(format!(
                "N = {} leaves no key signals",
                self.n_total
            )));
        }
        if !(self.eta_b_halfwidth >= 0.0) {
            return Err(domain("detector-efficiency uncertainty must be >= 0"));
        }
        if let Some(n0) = self.shot_noise_samples {
            if !(n0 >= 1.0) {
                return Err(domain(format!("shot-noise sample count {n0} < 1")));
            }
        }
        Ok(())
    }

    pub fn v(&self) -> f64 {
        self.v_a + 1.0
    }

    /// Revealed signals `k = c N`.
    pub fn k(&self) -> f64 {
        self.reveal_fraction * self.n_total
    }

    /// Key-generating signals `N' = N - k`.
    pub fn n_prime(&self) -> f64 {
        self.n_total - self.k()
    }

    pub fn shot_noise_count(&self) -> f64 {
        self.shot_noise_samples.unwrap_or(self.n_total)
    }

    pub fn with_v_a(self, v_a: f64) -> Self {
        Self { v_a, ..self }
    }
}

/// Composable security parameters, `eps = 2 eps_sm + eps_bar + eps_pe + eps_cor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecurityBudget {
    pub eps: f64,
    pub eps_pe: f64,
    pub eps_sm: f64,
    pub eps_cor: f64,
    pub eps_bar: f64,
}

impl SecurityBudget {
    /// Every component multiplied by `p`, as assigned to a data subset
    /// holding a fraction `p` of the signals.
    pub fn scaled(&self, p: f64) -> Self {
        Self {
            eps: p * self.eps,
            eps_pe: p * self.eps_pe,
            eps_sm: p * self.eps_sm,
            eps_cor: p * self.eps_cor,
            eps_bar: p * self.eps_bar,
        }
    }
}

/// Splits what remains after parameter estimation equally:
/// `eps_sm = eps_bar = eps_cor = (eps - eps_pe) / 4`.
pub fn budget_split(eps: f64, eps_pe: f64) -> Result<SecurityBudget> {
    if !(eps > 0.0) || !(eps_pe > 0.0) || eps_pe >= eps {
        return Err(domain(format!(
            "need 0 < eps_PE < eps, got eps={eps}, eps_PE={eps_pe}"
        )));
    }
    let q = (eps - eps_pe) / 4.0;
    Ok(SecurityBudget {
        eps,
        eps_pe,
        eps_sm: q,
        eps_cor: q,
        eps_bar: q,
    })
}

fn check_channel(eta_f: f64, xi_f: f64, v: f64) -> Result<()> {
    if !(eta_f > 0.0) {
        return Err(Error::DegenerateChannel);
    }
    if eta_f > 1.0 || !(xi_f >= 0.0) || !xi_f.is_finite() {
        return Err(domain(format!(
            "invalid channel (eta_f={eta_f}, xi_f={xi_f})"
        )));
    }
    if !(v >= 1.0) || !v.is_finite() {
        return Err(domain(format!("quadrature variance {v} < 1")));
    }
    Ok(())
}

/// Variance of Bob's mode after the detector beam splitter.
pub fn bob_variance(eta_f: f64, xi_f: f64, v: f64, det: &DetectorModel) -> f64 {
    det.eta_b * (eta_f * (v - 1.0) + eta_f * xi_f + 1.0) + (1.0 - det.eta_b) * det.upsilon()
}

/// Variance of one heterodyne outcome of Bob, `(V_B2 + 1) / 2`.
fn bob_het_variance(eta_f: f64, xi_f: f64, v: f64, det: &DetectorModel) -> f64 {
    0.5 * (bob_variance(eta_f, xi_f, v, det) + 1.0)
}

/// Alice-Bob mutual information `log2(V_b / V_b|a)`.
pub fn mutual_information(eta_f: f64, xi_f: f64, v: f64, det: &DetectorModel) -> Result<f64> {
    check_channel(eta_f, xi_f, v)?;
    let chi_line = xi_f - 1.0 + 1.0 / eta_f;
    let chi_tot = chi_line + det.chi_het() / eta_f;
    let v_cond = 0.5 * det.eta_b * eta_f * (1.0 + chi_tot);
    Ok((bob_het_variance(eta_f, xi_f, v, det) / v_cond)
        .log2()
        .max(0.0))
}

/// Holevo bound `chi(b:E) = S(AB1) - S(AFG | B2)`.
pub fn holevo_bound(eta_f: f64, xi_f: f64, v: f64, det: &DetectorModel) -> Result<f64> {
    check_channel(eta_f, xi_f, v)?;
    let ab1 = build_state_cm(v, eta_f, xi_f)?;
    let s_e = von_neumann_entropy(&ab1)?;
    let afgb2 = assemble_measurement_cm(&ab1, det)?;
    let cond = condition_on_heterodyne(&afgb2, "B2")?;
    let s_cond = von_neumann_entropy(&cond)?;
    Ok((s_e - s_cond).max(0.0))
}

/// Eve's information under an individual attack, `log2(V_b / V_b|E)`.
pub fn individual_information(eta_f: f64, xi_f: f64, v: f64, det: &DetectorModel) -> Result<f64> {
    check_channel(eta_f, xi_f, v)?;
    let denom = ((2.0 - 2.0 * eta_f + eta_f * xi_f).sqrt() + xi_f.sqrt()).powi(2);
    let x_e_term = if denom > 0.0 {
        let x_e = eta_f * (2.0 - xi_f).powi(2) / denom + 1.0;
        // (V x_E + 1) / (V + x_E), finite as x_E grows
        (v + 1.0 / x_e) / (1.0 + v / x_e)
    } else {
        // Lossless, noiseless line: x_E is infinite.
        v
    };
    let v_cond = 0.5 * det.eta_b * (x_e_term + det.chi_het());
    Ok((bob_het_variance(eta_f, xi_f, v, det) / v_cond)
        .log2()
        .max(0.0))
}

pub fn eve_information(
    attack: Attack,
    eta_f: f64,
    xi_f: f64,
    v: f64,
    det: &DetectorModel,
) -> Result<f64> {
    match attack {
        Attack::Collective => holevo_bound(eta_f, xi_f, v, det),
        Attack::Individual => individual_information(eta_f, xi_f, v, det),
    }
}

/// Finite-size penalty of the asymptotic equipartition property.
pub fn delta_aep(n_prime: f64, d: u32, eps_sm: f64, eps: f64) -> f64 {
    let d1 = f64::from(d) + 1.0;
    d1 * d1
        + 4.0 * d1 * (2.0 / (eps_sm * eps_sm)).log2().sqrt()
        + 2.0 * (2.0 / (eps * eps * eps_sm)).log2()
        + 4.0 * eps_sm * f64::from(d) / (eps * n_prime.sqrt())
}

/// A composable key length and its rate over all transmitted signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyLength {
    /// `l` before clamping; negative when no secure key can be extracted.
    pub raw: f64,
    pub rate: f64,
    pub secure: bool,
}

impl KeyLength {
    pub fn from_raw(raw: f64, n_total: f64) -> Self {
        let secure = raw > 0.0;
        Self {
            raw,
            rate: if secure { raw / n_total } else { 0.0 },
            secure,
        }
    }
}

/// `l = N'[beta I - eve] - sqrt(N') Delta_AEP - 2 log2(1 / (2 eps_bar))`.
pub fn finite_key_length(
    beta: f64,
    d: u32,
    sb: &SecurityBudget,
    i_ab: f64,
    eve_info: f64,
    n_used: f64,
    n_total: f64,
) -> KeyLength {
    let raw = n_used * (beta * i_ab - eve_info)
        - n_used.sqrt() * delta_aep(n_used, d, sb.eps_sm, sb.eps)
        - 2.0 * (1.0 / (2.0 * sb.eps_bar)).log2();
    KeyLength::from_raw(raw, n_total)
}

/// `max(beta I - eve, 0)`.
pub fn asymptotic_rate(i_ab: f64, eve_info: f64, beta: f64) -> f64 {
    (beta * i_ab - eve_info).max(0.0)
}

/// Security parameter against general attacks via the de Finetti
/// reduction, `eps N'^4`, with an unknown constant set to 1. Indicative only.
pub fn general_attack_epsilon(eps: f64, n_prime: f64) -> f64 {
    eps * n_prime.powi(4)
}

/// Effective and worst-case parameters behind a single-subset result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelEcho {
    /// Parameters used for the mutual information.
    pub eta_f: f64,
    pub xi_f: f64,
    /// Parameters used for Eve's information.
    pub eta_f_wc: f64,
    pub xi_f_wc: f64,
}

/// One evaluated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyRateResult {
    pub regime: Regime,
    pub attack: Attack,
    pub strategy: Strategy,
    pub v_a: f64,
    /// Absent for strategies that combine several subsets.
    pub channel: Option<ChannelEcho>,
    /// Key length in bits (finite regime) or `N * rate` (asymptotic).
    pub key_length: f64,
    /// Unclamped rate, for plotting the insecure side of a curve.
    pub raw_rate: f64,
    pub rate: f64,
    pub secure: bool,
    pub budget: SecurityBudget,
}
