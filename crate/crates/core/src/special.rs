//! Special functions needed by the elliptic-beam model: exponentially scaled
//! modified Bessel functions of the first kind and the principal branch of the
//! Lambert W function for positive arguments.

// Chebyshev expansions from the Cephes library. The `_SMALL` tables cover
// [0, 8] in the variable x/2 - 2, the `_LARGE` tables cover (8, inf) in 32/x - 2.
#[allow(clippy::excessive_precision, clippy::unreadable_literal)]
mod tables {
    pub(super) const I0_SMALL: [f64; 30] = [
        -4.4153416464793395e-18,
        3.3307945188222384e-17,
        -2.431279846547955e-16,
        1.715391285555133e-15,
        -1.1685332877993451e-14,
        7.676185498604936e-14,
        -4.856446783111929e-13,
        2.95505266312964e-12,
        -1.726826291441556e-11,
        9.675809035373237e-11,
        -5.189795601635263e-10,
        2.6598237246823866e-09,
        -1.300025009986248e-08,
        6.046995022541919e-08,
        -2.670793853940612e-07,
        1.1173875391201037e-06,
        -4.4167383584587505e-06,
        1.6448448070728896e-05,
        -5.754195010082104e-05,
        0.00018850288509584165,
        -0.0005763755745385824,
        0.0016394756169413357,
        -0.004324309995050576,
        0.010546460394594998,
        -0.02373741480589947,
        0.04930528423967071,
        -0.09490109704804764,
        0.17162090152220877,
        -0.3046826723431984,
        0.6767952744094761,
    ];

    pub(super) const I0_LARGE: [f64; 25] = [
        -7.233180487874754e-18,
        -4.830504485944182e-18,
        4.46562142029676e-17,
        3.461222867697461e-17,
        -2.8276239805165836e-16,
        -3.425485619677219e-16,
        1.7725601330565263e-15,
        3.8116806693526224e-15,
        -9.554846698828307e-15,
        -4.150569347287222e-14,
        1.54008621752141e-14,
        3.8527783827421426e-13,
        7.180124451383666e-13,
        -1.7941785315068062e-12,
        -1.3215811840447713e-11,
        -3.1499165279632416e-11,
        1.1889147107846439e-11,
        4.94060238822497e-10,
        3.3962320257083865e-09,
        2.266668990498178e-08,
        2.0489185894690638e-07,
        2.8913705208347567e-06,
        6.889758346916825e-05,
        0.0033691164782556943,
        0.8044904110141088,
    ];

    pub(super) const I1_SMALL: [f64; 29] = [
        2.7779141127610464e-18,
        -2.111421214358166e-17,
        1.5536319577362005e-16,
        -1.1055969477353862e-15,
        7.600684294735408e-15,
        -5.042185504727912e-14,
        3.223793365945575e-13,
        -1.9839743977649436e-12,
        1.1736186298890901e-11,
        -6.663489723502027e-11,
        3.625590281552117e-10,
        -1.8872497517228294e-09,
        9.381537386495773e-09,
        -4.445059128796328e-08,
        2.0032947535521353e-07,
        -8.568720264695455e-07,
        3.4702513081376785e-06,
        -1.3273163656039436e-05,
        4.781565107550054e-05,
        -0.00016176081582589674,
        0.0005122859561685758,
        -0.0015135724506312532,
        0.004156422944312888,
        -0.010564084894626197,
        0.024726449030626516,
        -0.05294598120809499,
        0.1026436586898471,
        -0.17641651835783406,
        0.25258718644363365,
    ];

    pub(super) const I1_LARGE: [f64; 25] = [
        7.517296310842105e-18,
        4.414348323071708e-18,
        -4.6503053684893586e-17,
        -3.209525921993424e-17,
        2.96262899764595e-16,
        3.3082023109209285e-16,
        -1.8803547755107825e-15,
        -3.8144030724370075e-15,
        1.0420276984128802e-14,
        4.272440016711951e-14,
        -2.1015418427726643e-14,
        -4.0835511110921974e-13,
        -7.198551776245908e-13,
        2.0356285441470896e-12,
        1.4125807436613782e-11,
        3.2526035830154884e-11,
        -1.8974958123505413e-11,
        -5.589743462196584e-10,
        -3.835380385964237e-09,
        -2.6314688468895196e-08,
        -2.512236237870209e-07,
        -3.882564808877691e-06,
        -0.00011058893876262371,
        -0.009761097491361469,
        0.7785762350182801,
    ];
}

use tables::{I0_LARGE, I0_SMALL, I1_LARGE, I1_SMALL};

fn chbevl(x: f64, coeffs: &[f64]) -> f64 {
    let mut b0 = coeffs[0];
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in &coeffs[1..] {
        b2 = b1;
        b1 = b0;
        b0 = x.mul_add(b1, c) - b2;
    }
    0.5 * (b0 - b2)
}

/// `exp(-|x|) I0(x)`.
pub fn bessel_i0e(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 8.0 {
        chbevl(ax.mul_add(0.5, -2.0), &I0_SMALL)
    } else {
        chbevl(32.0 / ax - 2.0, &I0_LARGE) / ax.sqrt()
    }
}

/// `exp(-|x|) I1(x)`.
pub fn bessel_i1e(x: f64) -> f64 {
    let ax = x.abs();
    let r = if ax <= 8.0 {
        chbevl(ax.mul_add(0.5, -2.0), &I1_SMALL) * ax
    } else {
        chbevl(32.0 / ax - 2.0, &I1_LARGE) / ax.sqrt()
    };
    r.copysign(x)
}

/// Modified Bessel function `I0(x)`. Overflows to infinity past x ~ 713.
pub fn bessel_i0(x: f64) -> f64 {
    bessel_i0e(x) * x.abs().exp()
}

/// Modified Bessel function `I1(x)`.
pub fn bessel_i1(x: f64) -> f64 {
    bessel_i1e(x) * x.abs().exp()
}

/// `1 - exp(-x) I0(x)` for `x >= 0`, accurate as `x -> 0`.
///
/// The direct form cancels catastrophically for small `x`; below 0.5 the
/// series `I0(x) - 1 = sum_{k>=1} (x/2)^{2k} / (k!)^2` is used instead.
pub fn one_minus_scaled_i0(x: f64) -> f64 {
    if x < 0.5 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut tail = 0.0;
        for k in 1..30 {
            let kf = k as f64;
            term *= q / (kf * kf);
            tail += term;
            if term < 1e-18 * tail {
                break;
            }
        }
        -(-x).exp_m1() - (-x).exp() * tail
    } else {
        1.0 - bessel_i0e(x)
    }
}

/// Principal branch `W0(z)` evaluated at `z = exp(log_z)`.
///
/// Working in the log domain lets callers pass arguments such as
/// `exp(a^2/W^2)` that overflow `f64` long before `W0` does.
pub fn lambert_w0_exp(log_z: f64) -> f64 {
    if log_z.is_nan() {
        return f64::NAN;
    }
    if log_z == f64::INFINITY {
        return f64::INFINITY;
    }
    if log_z < -20.0 {
        // W0(z) = z - z^2 + 3z^3/2 - ...; below e^-20 the next term is under 1e-25 relative.
        let z = log_z.exp();
        return z * (1.0 - z * (1.0 - 1.5 * z));
    }
    // Solve f(w) = w + ln w - log_z = 0 (valid for w > 0, i.e. z > 0).
    let mut w = if log_z < 1.0 {
        log_z.exp().ln_1p()
    } else {
        let l1 = log_z;
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let f = w + w.ln() - log_z;
        // Halley step on f: f' = 1 + 1/w, f'' = -1/w^2
        let fp = 1.0 + 1.0 / w;
        let fpp = -1.0 / (w * w);
        let step = f / (fp - 0.5 * f * fpp / fp);
        let next = (w - step).max(w * 1e-3);
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * next.abs();
        w = next;
        if done {
            break;
        }
    }
    w
}

/// Principal branch `W0(z)` for `z >= 0`.
pub fn lambert_w0(z: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        lambert_w0_exp(z.ln())
    }
}
