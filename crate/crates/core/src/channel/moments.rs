use serde::Serialize;

use super::ensemble::ChannelEnsemble;
use crate::error::{domain, Error, Result};

/// Sample moments of the transmissivity over a subset of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelMoments {
    pub mean_eta: f64,
    pub mean_sqrt: f64,
    /// `Var(sqrt(eta))`, from centred second moments.
    pub var_sqrt: f64,
    /// `<eta xi_eta>`.
    pub mean_eta_xi: f64,
    /// `<eta xi_eta> / <eta>`: the excess noise weighted by transmissivity.
    pub xi_weighted: f64,
    pub eta_max: f64,
    /// Fraction of the ensemble in the subset.
    pub probability: f64,
    pub count: usize,
}

/// Transmissivity and excess noise of the fixed channel whose Gaussian state
/// has the ensemble-average covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveChannel {
    pub eta_f: f64,
    pub xi_f: f64,
}

/// Moments over the samples with `lo <= eta <= hi`.
pub fn moments(e: &ChannelEnsemble, lo: f64, hi: f64) -> Result<ChannelMoments> {
    moments_where(e, |eta| lo <= eta && eta <= hi).map_err(|err| match err {
        Error::EmptySelection { .. } => Error::EmptySelection { lo, hi },
        other => other,
    })
}

/// Moments over the samples whose transmissivity satisfies `keep`.
pub fn moments_where(e: &ChannelEnsemble, keep: impl Fn(f64) -> bool) -> Result<ChannelMoments> {
    let selected: Vec<f64> = e.samples().iter().copied().filter(|&x| keep(x)).collect();
    subset_moments(&selected, e)
}

/// Moments over the samples flagged in `mask` (same length as the ensemble).
pub fn moments_masked(e: &ChannelEnsemble, mask: &[bool]) -> Result<ChannelMoments> {
    if mask.len() != e.len() {
        return Err(domain(format!(
            "mask has {} entries for {} samples",
            mask.len(),
            e.len()
        )));
    }
    let selected: Vec<f64> = e
        .samples()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .collect();
    subset_moments(&selected, e)
}

// Sums are taken relative to the first selected sample so that a constant
// subset gives exact means and exactly zero variance.
fn subset_moments(sel: &[f64], e: &ChannelEnsemble) -> Result<ChannelMoments> {
    let Some(&pivot) = sel.first() else {
        return Err(Error::EmptySelection {
            lo: f64::NAN,
            hi: f64::NAN,
        });
    };
    let n = sel.len() as f64;
    let noise = e.noise();
    let pivot_sqrt = pivot.sqrt();
    let pivot_xi = noise.at(pivot);

    let (mut d_eta, mut d_sqrt, mut sum_eta, mut w_xi) = (0.0, 0.0, 0.0, 0.0);
    let mut eta_max = f64::NEG_INFINITY;
    for &x in sel {
        d_eta += x - pivot;
        d_sqrt += x.sqrt() - pivot_sqrt;
        sum_eta += x;
        w_xi += x * (noise.at(x) - pivot_xi);
        eta_max = eta_max.max(x);
    }
    let mean_eta = pivot + d_eta / n;
    let mean_sqrt = pivot_sqrt + d_sqrt / n;
    let var_sqrt = sel
        .iter()
        .map(|&x| (x.sqrt() - mean_sqrt).powi(2))
        .sum::<f64>()
        / n;
    let xi_weighted = if sum_eta > 0.0 {
        pivot_xi + w_xi / sum_eta
    } else {
        pivot_xi
    };

    Ok(ChannelMoments {
        mean_eta,
        mean_sqrt,
        var_sqrt,
        mean_eta_xi: mean_eta * xi_weighted,
        xi_weighted,
        eta_max,
        probability: n / e.len() as f64,
        count: sel.len(),
    })
}

/// Effective parameters at quadrature variance `v = V_A + 1`:
/// `eta_f = <sqrt eta>^2` and
/// `eta_f xi_f = Var(sqrt eta)(V - 1) + <eta xi_eta>`.
pub fn effective_params(m: &ChannelMoments, v: f64) -> Result<EffectiveChannel> {
    if !(v >= 1.0) {
        return Err(domain(format!("quadrature variance {v} below vacuum")));
    }
    // <eta> - Var(sqrt eta) equals <sqrt eta>^2 and is exact for constant subsets.
    let eta_f = (m.mean_eta - m.var_sqrt).clamp(0.0, 1.0);
    if eta_f <= 0.0 {
        return Err(Error::DegenerateChannel);
    }
    let xi_f = m.var_sqrt * (v - 1.0) / eta_f + m.xi_weighted * (m.mean_eta / eta_f);
    Ok(EffectiveChannel { eta_f, xi_f })
}
