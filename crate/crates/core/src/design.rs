//! Finite design distributions, base functions and normalization weights.
//!
//! The design space is a finite set of points `0..p` with probabilities
//! `probs`; the `m` base functions are stored as a `p x m` table. Every
//! population expectation is therefore an exact finite sum.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients with `|theta_k| <= ZERO_TOL` count as zero.
pub const ZERO_TOL: f64 = 1e-12;

/// The Gram matrix is declared singular when its smallest eigenvalue is at
/// most this fraction of its largest.
pub const SINGULAR_REL_TOL: f64 = 1e-10;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisDoc", into = "BasisDoc")]
pub struct BasisSystem {
    probs: Vec<f64>,
    psi: Vec<f64>,
    m: usize,
}

#[derive(Serialize, Deserialize)]
struct BasisDoc {
    probs: Vec<f64>,
    psi: Vec<Vec<f64>>,
}

impl TryFrom<BasisDoc> for BasisSystem {
    type Error = Error;

    fn try_from(doc: BasisDoc) -> Result<Self> {
        BasisSystem::new(doc.probs, doc.psi)
    }
}

impl From<BasisSystem> for BasisDoc {
    fn from(b: BasisSystem) -> Self {
        BasisDoc {
            psi: (0..b.p()).map(|j| b.row(j).to_vec()).collect(),
            probs: b.probs,
        }
    }
}

impl BasisSystem {
    /// Builds a basis from point probabilities and one row of base-function
    /// values per point.
    pub fn new(probs: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = probs.len();
        if p == 0 {
            return Err(Error::invalid("basis needs at least one design point"));
        }
        if rows.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: rows.len(),
            });
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::invalid("basis needs at least one base function"));
        }
        if probs.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
            return Err(Error::invalid("design probabilities must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!(
                "design probabilities sum to {total}, not 1"
            )));
        }
        let mut psi = Vec::with_capacity(p * m);
        for row in &rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("base-function values must be finite"));
            }
            psi.extend_from_slice(row);
        }
        let basis = Self { probs, psi, m };
        for k in 0..m {
            if basis.second_moment(k) <= 0.0 {
                return Err(Error::ZeroVarianceFeature { index: k });
            }
        }
        Ok(basis)
    }

    /// Uniform design on the rows of a Sylvester–Hadamard matrix, using
    /// columns `1..=m` (column 0 is the constant). The columns are
    /// orthonormal under the uniform law and every value is `±1`.
    pub fn hadamard(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("hadamard design needs m >= 1"));
        }
        let p = (m + 1).next_power_of_two();
        let rows = (0..p)
            .map(|i| {
                (1..=m)
                    .map(|k| if (i & k).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        Self::new(vec![1.0 / p as f64; p], rows)
    }

    /// Uniform design on `p` points with entries drawn i.i.d. from `levels`.
    pub fn random_levels(p: usize, m: usize, levels: &[f64], seed: u64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("need at least one level"));
        }
        let mut stream = crate::rng::Stream::new(seed);
        let rows = (0..p)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let idx = ((stream.uniform() * levels.len() as f64) as usize)
                            .min(levels.len() - 1);
                        levels[idx]
                    })
                    .collect()
            })
            .collect();
        Self::new(vec![1.0 / p as f64; p], rows)
    }

    pub fn p(&self) -> usize {
        self.probs.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.psi[j * self.m..(j + 1) * self.m]
    }

    pub fn value(&self, j: usize, k: usize) -> f64 {
        self.psi[j * self.m + k]
    }

    /// `Q psi_k^2`.
    pub fn second_moment(&self, k: usize) -> f64 {
        (0..self.p())
            .map(|j| self.probs[j] * self.value(j, k).powi(2))
            .sum()
    }

    /// `Q psi_k`.
    pub fn mean(&self, k: usize) -> f64 {
        (0..self.p()).map(|j| self.probs[j] * self.value(j, k)).sum()
    }

    /// `max |psi_k(x_j) - shift|` over the support of the design law.
    pub fn sup_abs(&self, k: usize, shift: f64) -> f64 {
        (0..self.p())
            .filter(|&j| self.probs[j] > 0.0)
            .map(|j| (self.value(j, k) - shift).abs())
            .fold(0.0, f64::max)
    }

    /// Values of `f_theta` at every design point.
    pub fn eval(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.m);
        (0..self.p())
            .map(|j| dot(self.row(j), theta))
            .collect()
    }

    /// `L2(Q)` norm of a function given by its values on the design points.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        self.probs
            .iter()
            .zip(values)
            .map(|(q, v)| q * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Sup norm over the support of the design law.
    pub fn sup_norm(&self, values: &[f64]) -> f64 {
        self.probs
            .iter()
            .zip(values)
            .filter(|(q, _)| **q > 0.0)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }

    /// Basis restricted to the columns in `cols` (same points and law).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::invalid("column selection is empty"));
        }
        let mut psi = Vec::with_capacity(self.p() * cols.len());
        for j in 0..self.p() {
            for &k in cols {
                psi.push(self.value(j, k));
            }
        }
        Ok(Self {
            probs: self.probs.clone(),
            psi,
            m: cols.len(),
        })
    }

    /// Same base functions under a different design law.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        let rows = (0..self.p()).map(|j| self.row(j).to_vec()).collect();
        Self::new(probs, rows)
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: len,
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Theoretical,
    Empirical,
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub sigma: Vec<f64>,
    /// The sup-norm ratio bound `max_k ||psi_k||_inf / sigma_k`.
    #[serde(rename = "K")]
    pub k_ratio: f64,
    pub mode: WeightMode,
}

impl WeightProfile {
    /// Unit weights; useful for penalties that are not tied to a design.
    pub fn unit(m: usize) -> Self {
        Self {
            sigma: vec![1.0; m],
            k_ratio: 1.0,
            mode: WeightMode::Theoretical,
        }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefVector {
    pub theta: Vec<f64>,
}

impl CoefVector {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    pub fn zeros(m: usize) -> Self {
        Self { theta: vec![0.0; m] }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        self.theta
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > ZERO_TOL)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn is_nonzero(&self, k: usize) -> bool {
        self.theta[k].abs() > ZERO_TOL
    }

    pub fn sub(&self, other: &CoefVector) -> CoefVector {
        CoefVector::new(
            self.theta
                .iter()
                .zip(&other.theta)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x_idx: Vec<usize>,
    /// Responses; absent for density estimation.
    pub y: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x_idx: Vec<usize>, y: Option<Vec<f64>>, basis: &BasisSystem) -> Result<Self> {
        if x_idx.is_empty() {
            return Err(Error::invalid("dataset needs n >= 1"));
        }
        if let Some(&bad) = x_idx.iter().find(|&&j| j >= basis.p()) {
            return Err(Error::invalid(format!(
                "design index {bad} out of range (p = {})",
                basis.p()
            )));
        }
        if let Some(y) = &y {
            if y.len() != x_idx.len() {
                return Err(Error::DimensionMismatch {
                    expected: x_idx.len(),
                    got: y.len(),
                });
            }
        }
        Ok(Self { x_idx, y })
    }

    pub fn n(&self) -> usize {
        self.x_idx.len()
    }
}

pub fn theoretical_weights(basis: &BasisSystem) -> Result<WeightProfile> {
    let sigma = (0..basis.m())
        .map(|k| {
            let s2 = basis.second_moment(k);
            if s2 > 0.0 {
                Ok(s2.sqrt())
            } else {
                Err(Error::ZeroVarianceFeature { index: k })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let k_ratio = ratio_bound(basis, &sigma, |_| 0.0, &[]);
    Ok(WeightProfile {
        sigma,
        k_ratio,
        mode: WeightMode::Theoretical,
    })
}

pub fn empirical_weights(data: &Dataset, basis: &BasisSystem) -> Result<WeightProfile> {
    let n = data.n() as f64;
    let mut sums = vec![0.0; basis.m()];
    for &j in &data.x_idx {
        for (s, v) in sums.iter_mut().zip(basis.row(j)) {
            *s += v * v;
        }
    }
    let sigma = sums
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            if s > 0.0 {
                Ok((s / n).sqrt())
            } else {
                Err(Error::ZeroVarianceFeature { index: k })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let k_ratio = ratio_bound(basis, &sigma, |_| 0.0, &[]);
    Ok(WeightProfile {
        sigma,
        k_ratio,
        mode: WeightMode::Empirical,
    })
}

/// Weights for centered base functions, `sigma_k^2 = Q psi_k^2 - (Q psi_k)^2`
/// (or the empirical analogue when `data` is given). Indices in `excluded`
/// (typically the constant column) keep their uncentered weight and are left
/// out of the ratio bound.
pub fn centered_weights(
    data: Option<&Dataset>,
    basis: &BasisSystem,
    excluded: &[usize],
) -> Result<WeightProfile> {
    let m = basis.m();
    let (means, second): (Vec<f64>, Vec<f64>) = match data {
        None => (
            (0..m).map(|k| basis.mean(k)).collect(),
            (0..m).map(|k| basis.second_moment(k)).collect(),
        ),
        Some(data) => {
            let n = data.n() as f64;
            let mut s1 = vec![0.0; m];
            let mut s2 = vec![0.0; m];
            for &j in &data.x_idx {
                for (k, v) in basis.row(j).iter().enumerate() {
                    s1[k] += v;
                    s2[k] += v * v;
                }
            }
            (
                s1.into_iter().map(|s| s / n).collect(),
                s2.into_iter().map(|s| s / n).collect(),
            )
        }
    };
    let mut sigma = Vec::with_capacity(m);
    for k in 0..m {
        if excluded.contains(&k) {
            if second[k] <= 0.0 {
                return Err(Error::ZeroVarianceFeature { index: k });
            }
            sigma.push(second[k].sqrt());
            continue;
        }
        let var = second[k] - means[k] * means[k];
        // Relative cut: a constant column leaves only rounding residue here.
        if var <= 1e-12 * second[k] {
            return Err(Error::ZeroVarianceFeature { index: k });
        }
        sigma.push(var.sqrt());
    }
    let k_ratio = ratio_bound(basis, &sigma, |k| means[k], excluded);
    Ok(WeightProfile {
        sigma,
        k_ratio,
        mode: WeightMode::Centered,
    })
}

fn ratio_bound(
    basis: &BasisSystem,
    sigma: &[f64],
    shift: impl Fn(usize) -> f64,
    excluded: &[usize],
) -> f64 {
    (0..basis.m())
        .filter(|k| !excluded.contains(k))
        .map(|k| basis.sup_abs(k, shift(k)) / sigma[k])
        .fold(0.0, f64::max)
}

/// `sum_k sigma_k |theta_k|`, skipping the indices in `unpenalized`.
pub fn l1_norm(theta: &CoefVector, w: &WeightProfile, unpenalized: &[usize]) -> Result<f64> {
    if theta.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: theta.len(),
        });
    }
    Ok(theta
        .theta
        .iter()
        .zip(&w.sigma)
        .enumerate()
        .filter(|(k, _)| !unpenalized.contains(k))
        .map(|(_, (t, s))| s * t.abs())
        .sum())
}

/// `(I1, I2)`: the norm of `theta` over the support of `reference`, and the
/// remainder.
pub fn split_norms(
    theta: &CoefVector,
    reference: &CoefVector,
    w: &WeightProfile,
) -> Result<(f64, f64)> {
    if reference.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: reference.len(),
        });
    }
    let total = l1_norm(theta, w, &[])?;
    let inner: f64 = (0..theta.len())
        .filter(|&k| reference.is_nonzero(k))
        .map(|k| w.sigma[k] * theta.theta[k].abs())
        .sum();
    Ok((inner, total - inner))
}

/// `Sigma_{kl} = Q psi_k psi_l`.
pub fn gram(basis: &BasisSystem) -> DMatrix<f64> {
    let m = basis.m();
    let mut g = DMatrix::<f64>::zeros(m, m);
    for j in 0..basis.p() {
        let q = basis.probs()[j];
        if q == 0.0 {
            continue;
        }
        let row = basis.row(j);
        for k in 0..m {
            let qk = q * row[k];
            for l in k..m {
                g[(k, l)] += qk * row[l];
            }
        }
    }
    for k in 0..m {
        for l in 0..k {
            g[(k, l)] = g[(l, k)];
        }
    }
    g
}

fn extreme_eigenvalues(matrix: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(matrix.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Gram matrix and its smallest eigenvalue.
pub fn gram_and_beta(basis: &BasisSystem) -> Result<(DMatrix<f64>, f64)> {
    let g = gram(basis);
    let (min, max) = extreme_eigenvalues(&g);
    if min <= SINGULAR_REL_TOL * max {
        return Err(Error::SingularGram {
            beta2: min,
            largest: max,
        });
    }
    Ok((g, min))
}

/// Precomputed data for evaluating `D(K)` on many index sets.
///
/// The Gram matrix used here is that of the normalized functions
/// `psi_k / sigma_k`, so that `sum_{k in K} sigma_k |theta_k - theta'_k|
/// <= sqrt(D(K)) ||f_theta - f_theta'||` holds with the theoretical weights.
/// For designs with unit weights this is the plain Gram matrix.
#[derive(Debug, Clone)]
pub struct SupportDimension {
    beta2: f64,
    inv_sqrt: DMatrix<f64>,
    weights: Option<Vec<f64>>,
}

impl SupportDimension {
    pub fn new(basis: &BasisSystem, weights: Option<&[f64]>) -> Result<Self> {
        let sigma = theoretical_weights(basis)?.sigma;
        let m = basis.m();
        if let Some(w) = weights {
            if w.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: w.len(),
                });
            }
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::invalid("dimension weights must be positive"));
            }
        }
        let mut g = gram(basis);
        for k in 0..m {
            for l in 0..m {
                g[(k, l)] /= sigma[k] * sigma[l];
            }
        }
        let eig = SymmetricEigen::new(g);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if min <= SINGULAR_REL_TOL * max {
            return Err(Error::SingularGram {
                beta2: min,
                largest: max,
            });
        }
        let inv_sqrt = if weights.is_some() {
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l: f64| 1.0 / l.sqrt()));
            &eig.eigenvectors * d * eig.eigenvectors.transpose()
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(Self {
            beta2: min,
            inv_sqrt,
            weights: weights.map(|w| w.to_vec()),
        })
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn d(&self, support: &[usize]) -> f64 {
        if support.is_empty() {
            return 0.0;
        }
        match &self.weights {
            None => support.len() as f64 / self.beta2,
            Some(w) => {
                let m = w.len();
                // Sigma^{-1/2} W A(K) W Sigma^{-1/2} = B B^T with B the K columns
                // of Sigma^{-1/2} W.
                let mut b = DMatrix::<f64>::zeros(m, support.len());
                for (c, &k) in support.iter().enumerate() {
                    for r in 0..m {
                        b[(r, c)] = self.inv_sqrt[(r, k)] * w[k];
                    }
                }
                let small = b.transpose() * &b;
                let (_, lmax) = extreme_eigenvalues(&small);
                let mass: f64 = support.iter().map(|&k| w[k].powi(-2)).sum();
                mass * lmax
            }
        }
    }
}

/// `D(K)`: `|K| / beta^2` without weights, or the weighted-eigenvalue form.
pub fn d_of_support(
    support: &[usize],
    basis: &BasisSystem,
    weights: Option<&[f64]>,
) -> Result<f64> {
    if support.iter().any(|&k| k >= basis.m()) {
        return Err(Error::invalid("support index out of range"));
    }
    Ok(SupportDimension::new(basis, weights)?.d(support))
}
