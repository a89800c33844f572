#![allow(dead_code)]

use fsqkd::gaussian::CovarianceMatrix;
use nalgebra::DMatrix;
use rand::Rng;

/// Product of random passive and squeezing layers; symplectic by construction.
pub fn random_symplectic<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let dim = 2 * n;
    let mut s = DMatrix::identity(dim, dim);
    for _ in 0..3 {
        for k in 0..n {
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.random_range(-0.8..0.8);
            let mut layer = DMatrix::identity(dim, dim);
            let (c, sn) = (phi.cos(), phi.sin());
            let (q, p) = (2 * k, 2 * k + 1);
            // rotation then squeeze diag(e^r, e^-r)
            layer[(q, q)] = c * r.exp();
            layer[(q, p)] = sn * r.exp();
            layer[(p, q)] = -sn * (-r).exp();
            layer[(p, p)] = c * (-r).exp();
            s = layer * s;
        }
        for k in 0..n.saturating_sub(1) {
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (c, sn) = (th.cos(), th.sin());
            let mut bs = DMatrix::identity(dim, dim);
            for j in 0..2 {
                let (a, b) = (2 * k + j, 2 * (k + 1) + j);
                bs[(a, a)] = c;
                bs[(a, b)] = sn;
                bs[(b, a)] = -sn;
                bs[(b, b)] = c;
            }
            s = bs * s;
        }
    }
    s
}

/// `S^T diag(nu) S` with known symplectic eigenvalues `nu` (descending).
pub fn random_cm<R: Rng>(n: usize, rng: &mut R) -> (CovarianceMatrix, Vec<f64>) {
    let mut nu: Vec<f64> = (0..n)
        .map(|_| 1.0 + rng.random_range(0.0..4.0f64).powi(2))
        .collect();
    nu.sort_by(|a, b| b.total_cmp(a));
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        2 * n,
        nu.iter().flat_map(|&v| [v, v]),
    ));
    let s = random_symplectic(n, rng);
    let m = s.transpose() * d * &s;
    let m = (&m + m.transpose()) * 0.5;
    let labels: Vec<String> = (0..n).map(|k| format!("m{k}")).collect();
    (CovarianceMatrix::new(m, labels).unwrap(), nu)
}

/// Symplectic spectrum from the eigenvalues `±i nu` of `Omega M`.
pub fn spectral_oracle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() / 2;
    let omega = fsqkd::gaussian::symplectic_form(n);
    let ev = (omega * m).complex_eigenvalues();
    let mut im: Vec<f64> = ev.iter().map(|z| z.im.abs()).collect();
    im.sort_by(|a, b| b.total_cmp(a));
    im.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// `G((nu - 1)/2)` summed over a spectrum, written out independently of the
/// library.
pub fn entropy_of(nu: &[f64]) -> f64 {
    nu.iter()
        .map(|&v| {
            let x = 0.5 * (v - 1.0);
            if x <= 0.0 {
                0.0
            } else {
                (x + 1.0) * (x + 1.0).log2() - x * x.log2()
            }
        })
        .sum()
}
