//! Covariance-matrix algebra for zero-mean Gaussian states.
//!
//! Matrices are in shot-noise units (vacuum variance 1) with quadratures
//! interleaved per mode, `(q1, p1, q2, p2, ...)`. The symplectic form is
//! `Omega = diag([[0, 1], [-1, 0]], ...)`.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{domain, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// Lower bound on symplectic eigenvalues accepted as physical.
pub const PHYSICAL_TOL: f64 = 1e-9;

/// Covariance matrix of an `n`-mode Gaussian state with named modes.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<String>,
}

impl CovarianceMatrix {
    /// Wraps a `2n x 2n` matrix. The matrix is symmetrized after checking that
    /// it is symmetric to within `1e-12` relative.
    pub fn new<S: Into<String>>(matrix: DMatrix<f64>, labels: Vec<S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let dim = matrix.nrows();
        if dim != matrix.ncols() {
            return Err(Error::InvalidMatrix(format!(
                "matrix is {}x{}, not square",
                dim,
                matrix.ncols()
            )));
        }
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::InvalidMatrix(format!(
                "dimension {dim} is not 2n with n >= 1"
            )));
        }
        if labels.len() != dim / 2 {
            return Err(Error::InvalidMatrix(format!(
                "{} labels for {} modes",
                labels.len(),
                dim / 2
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMatrix("non-finite entry".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidMatrix(format!(
                "not symmetric (max |M - M^T| = {asym:e})"
            )));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { matrix, labels })
    }

    /// Single-mode thermal state `v * I`.
    pub fn thermal(v: f64, label: impl Into<String>) -> Result<Self> {
        if !(v >= 1.0) {
            return Err(domain(format!("thermal variance {v} < 1")));
        }
        Self::new(DMatrix::from_diagonal_element(2, 2, v), vec![label.into()])
    }

    /// Two-mode squeezed vacuum with quadrature variance `v`.
    pub fn two_mode_squeezed(v: f64, labels: [&str; 2]) -> Result<Self> {
        if !(v >= 1.0) {
            return Err(domain(format!("quadrature variance {v} < 1")));
        }
        let c = (v * v - 1.0).sqrt();
        Self::new(two_mode_block(v, c, v), labels.to_vec())
    }

    pub fn modes(&self) -> usize {
        self.labels.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mode_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The 2x2 block coupling modes `i` and `j`.
    pub fn block(&self, i: usize, j: usize) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(2 * i, 2 * j).into_owned()
    }

    /// `self ⊕ other`, modes of `self` first.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let (a, b) = (self.matrix.nrows(), other.matrix.nrows());
        let mut m = DMatrix::zeros(a + b, a + b);
        m.view_mut((0, 0), (a, a)).copy_from(&self.matrix);
        m.view_mut((a, a), (b, b)).copy_from(&other.matrix);
        let labels = self.labels.iter().chain(&other.labels).cloned().collect();
        Self { matrix: m, labels }
    }

    /// `S^T M S` for a symplectic `S`, keeping mode labels in place.
    pub fn transformed(&self, s: &DMatrix<f64>) -> Result<Self> {
        if s.nrows() != self.matrix.nrows() || !s.is_square() {
            return Err(Error::InvalidMatrix(format!(
                "transform is {}x{}, state is {}x{}",
                s.nrows(),
                s.ncols(),
                self.matrix.nrows(),
                self.matrix.nrows()
            )));
        }
        let m = s.transpose() * &self.matrix * s;
        Self::new(m, self.labels.clone())
    }

    /// Reorders modes so that mode `order[k]` of `self` becomes mode `k`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.modes();
        let mut seen = vec![false; n];
        for &o in order {
            if o >= n || std::mem::replace(&mut seen[o], true) {
                return Err(Error::InvalidMatrix(format!(
                    "{order:?} is not a permutation of {n} modes"
                )));
            }
        }
        if order.len() != n {
            return Err(Error::InvalidMatrix(format!(
                "{order:?} is not a permutation of {n} modes"
            )));
        }
        let p = mode_permutation(order);
        let m = p.transpose() * &self.matrix * &p;
        let labels = order.iter().map(|&o| self.labels[o].clone()).collect();
        Ok(Self { matrix: m, labels })
    }

    /// Whether every symplectic eigenvalue is at least `1 - 1e-9`.
    pub fn is_physical(&self) -> bool {
        symplectic_eigenvalues(self)
            .map(|nu| nu.iter().all(|&v| v >= 1.0 - PHYSICAL_TOL))
            .unwrap_or(false)
    }
}

/// `[[a I, c Z], [c Z, b I]]` with `Z = diag(1, -1)`.
fn two_mode_block(a: f64, c: f64, b: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            a, 0.0, c, 0.0, //
            0.0, a, 0.0, -c, //
            c, 0.0, b, 0.0, //
            0.0, -c, 0.0, b,
        ],
    )
}

/// Permutation matrix `P` such that `P^T M P` moves mode `order[k]` to slot `k`.
fn mode_permutation(order: &[usize]) -> DMatrix<f64> {
    let dim = 2 * order.len();
    let mut p = DMatrix::zeros(dim, dim);
    for (k, &o) in order.iter().enumerate() {
        p[(2 * o, 2 * k)] = 1.0;
        p[(2 * o + 1, 2 * k + 1)] = 1.0;
    }
    p
}

/// Symplectic form for `n` modes.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// `G(x) = (x+1) log2(x+1) - x log2 x`, with `G(0) = 0`.
pub fn g_entropy(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(domain(format!("g_entropy of {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok((x + 1.0) * (x + 1.0).log2() - x * x.log2())
}

/// Symplectic eigenvalues in descending order.
///
/// With `S = M^{1/2}`, the antisymmetric `K = S Omega S` has eigenvalues
/// `±i nu_k`, so the symmetric `K^T K` has each `nu_k^2` twice.
pub fn symplectic_eigenvalues(m: &CovarianceMatrix) -> Result<Vec<f64>> {
    let n = m.modes();
    let eig = m.matrix.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::InvalidMatrix(format!(
            "not positive definite (smallest eigenvalue {min:e})"
        )));
    }
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
        * eig.eigenvectors.transpose();
    let k = &root * symplectic_form(n) * &root;
    let ktk = k.transpose() * &k;
    let ktk = (&ktk + ktk.transpose()) * 0.5;
    let mut sq: Vec<f64> = ktk.symmetric_eigenvalues().iter().copied().collect();
    sq.sort_by(|a, b| b.total_cmp(a));
    Ok(sq
        .chunks_exact(2)
        .map(|pair| (0.5 * (pair[0] + pair[1])).max(0.0).sqrt())
        .collect())
}

/// Von Neumann entropy in bits, `sum_k G((nu_k - 1) / 2)`.
///
/// Eigenvalues are clamped to 1 before evaluating `G`, so roundoff below the
/// vacuum level contributes zero rather than NaN.
pub fn von_neumann_entropy(m: &CovarianceMatrix) -> Result<f64> {
    let nu = symplectic_eigenvalues(m)?;
    if let Some(&low) = nu.iter().find(|&&v| v < 1.0 - PHYSICAL_TOL) {
        return Err(Error::InvalidMatrix(format!(
            "unphysical symplectic eigenvalue {low}"
        )));
    }
    nu.iter()
        .map(|&v| g_entropy(0.5 * (v.max(1.0) - 1.0)))
        .sum()
}

/// Bob's detector: efficiency `eta_b` and electronic noise `nu_b`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectorModel {
    pub eta_b: f64,
    pub nu_b: f64,
}

impl DetectorModel {
    pub fn new(eta_b: f64, nu_b: f64) -> Result<Self> {
        if !(eta_b > 0.0 && eta_b <= 1.0) {
            return Err(domain(format!(
                "detector efficiency {eta_b} outside (0, 1]"
            )));
        }
        if !(nu_b >= 0.0) || !nu_b.is_finite() {
            return Err(domain(format!("electronic noise {nu_b} < 0")));
        }
        Ok(Self { eta_b, nu_b })
    }

    pub fn ideal() -> Self {
        Self {
            eta_b: 1.0,
            nu_b: 0.0,
        }
    }

    /// Variance of the EPR state that models electronic noise,
    /// `1 + 2 nu_b / (1 - eta_b)`; 1 for a unit-efficiency detector.
    pub fn upsilon(&self) -> f64 {
        if self.eta_b >= 1.0 {
            1.0
        } else {
            1.0 + 2.0 * self.nu_b / (1.0 - self.eta_b)
        }
    }

    /// Heterodyne-referred detection noise `[1 + (1 - eta_b) + 2 nu_b] / eta_b`.
    pub fn chi_het(&self) -> f64 {
        (1.0 + (1.0 - self.eta_b) + 2.0 * self.nu_b) / self.eta_b
    }
}

/// Two-mode state (A, B1) after a thermal-loss channel: Alice's TMSV arm of
/// variance `v`, Bob's arm through transmissivity `eta` with excess noise `xi`.
pub fn build_state_cm(v: f64, eta: f64, xi: f64) -> Result<CovarianceMatrix> {
    if !(v >= 1.0) || !v.is_finite() {
        return Err(domain(format!("quadrature variance {v} < 1")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(domain(format!("transmissivity {eta} outside [0, 1]")));
    }
    if !(xi >= 0.0) || !xi.is_finite() {
        return Err(domain(format!("excess noise {xi} < 0")));
    }
    let c = eta.sqrt() * (v * v - 1.0).sqrt();
    let b = eta * (v - 1.0) + eta * xi + 1.0;
    CovarianceMatrix::new(two_mode_block(v, c, b), vec!["A", "B1"])
}

/// Appends the detector's EPR pair (F0, G), mixes B1 with F0 on a beam
/// splitter of transmissivity `eta_b`, and returns the state in mode order
/// (A, F, G, B2).
pub fn assemble_measurement_cm(
    m_ab1: &CovarianceMatrix,
    det: &DetectorModel,
) -> Result<CovarianceMatrix> {
    if m_ab1.modes() != 2 {
        return Err(Error::InvalidMatrix(format!(
            "expected a two-mode (A, B1) state, got {} modes",
            m_ab1.modes()
        )));
    }
    let ups = det.upsilon();
    let epr = CovarianceMatrix::new(
        two_mode_block(ups, (ups * ups - 1.0).max(0.0).sqrt(), ups),
        vec!["F0", "G"],
    )?;
    // mode order A, B1, F0, G
    let joint = m_ab1.direct_sum(&epr);

    let (t, r) = (det.eta_b.sqrt(), (1.0 - det.eta_b).max(0.0).sqrt());
    let mut s = DMatrix::identity(8, 8);
    for k in 0..2 {
        let (b1, f0) = (2 + k, 4 + k);
        s[(b1, b1)] = t;
        s[(b1, f0)] = r;
        s[(f0, b1)] = -r;
        s[(f0, f0)] = t;
    }
    // S^T M S maps (B1, F0) to (B2, F); slots now hold A, B2, F, G.
    let mut out = joint.transformed(&s)?;
    out.labels = vec!["A".into(), "B2".into(), "F".into(), "G".into()];
    out.permuted(&[0, 2, 3, 1])
}

/// Covariance of the remaining modes after an ideal heterodyne measurement on
/// `mode`: `M_rest - sigma (M_mode + I)^{-1} sigma^T`.
pub fn condition_on_heterodyne(m: &CovarianceMatrix, mode: &str) -> Result<CovarianceMatrix> {
    let idx = m
        .mode_index(mode)
        .ok_or_else(|| Error::InvalidMatrix(format!("no mode labelled {mode:?}")))?;
    let n = m.modes();
    if n < 2 {
        return Err(Error::InvalidMatrix(
            "cannot condition a single-mode state".into(),
        ));
    }
    let rest: Vec<usize> = (0..n).filter(|&k| k != idx).collect();
    let rows: Vec<usize> = rest.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect();
    let dim = rows.len();

    let mut m_rest = DMatrix::zeros(dim, dim);
    let mut sigma = DMatrix::zeros(dim, 2);
    for (a, &ra) in rows.iter().enumerate() {
        for (b, &rb) in rows.iter().enumerate() {
            m_rest[(a, b)] = m.matrix[(ra, rb)];
        }
        sigma[(a, 0)] = m.matrix[(ra, 2 * idx)];
        sigma[(a, 1)] = m.matrix[(ra, 2 * idx + 1)];
    }
    let h = (m.block(idx, idx) + Matrix2::identity())
        .try_inverse()
        .ok_or_else(|| Error::InvalidMatrix(format!("M_{mode} + I is singular")))?;
    let h = DMatrix::from_column_slice(2, 2, h.as_slice());
    let cond = m_rest - &sigma * h * sigma.transpose();
    let labels = rest
        .iter()
        .map(|&k| m.labels[k].clone())
        .collect::<Vec<_>>();
    CovarianceMatrix::new((&cond + cond.transpose()) * 0.5, labels)
}
