//! Loss functions, targets, exact excess risks and margin constants.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{BasisSystem, CoefVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Hinge,
    Quantile { tau: f64 },
    Quadratic,
    Density,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Logistic => "logistic",
            LossKind::Hinge => "hinge",
            LossKind::Quantile { .. } => "quantile",
            LossKind::Quadratic => "quadratic",
            LossKind::Density => "density",
        }
    }

    pub fn is_lipschitz(&self) -> bool {
        !matches!(self, LossKind::Quadratic)
    }

    /// Only the density loss is linear in `f` (up to the nonrandom offset).
    pub fn is_linear_in_f(&self) -> bool {
        matches!(self, LossKind::Density)
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, LossKind::Hinge | LossKind::Quantile { .. })
    }
}

/// Conditional law of the response at each design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    /// `P(Y = 1 | x_j) = pi_j`; the other label is 0 (logistic) or -1 (hinge).
    Binary { pi: Vec<f64> },
    /// `Y = fbar(x_j) + noise_sd * N(0, 1)`.
    Regression { fbar: Vec<f64>, noise_sd: f64 },
    /// `Y` takes `values[v]` with probability `probs[j][v]` at point `j`.
    Discrete { values: Vec<f64>, probs: Vec<Vec<f64>> },
    /// No response; `X` has law `Q` (the design probabilities), modelled by
    /// densities with respect to the grid measure `nu`.
    Density { nu: Vec<f64> },
}

impl Truth {
    fn name(&self) -> &'static str {
        match self {
            Truth::Binary { .. } => "binary",
            Truth::Regression { .. } => "regression",
            Truth::Discrete { .. } => "discrete",
            Truth::Density { .. } => "density",
        }
    }

    pub fn validate(&self, basis: &BasisSystem) -> Result<()> {
        let p = basis.p();
        let bad = |msg: String| Err(Error::TruthMissing(msg));
        match self {
            Truth::Binary { pi } => {
                if pi.len() != p {
                    return bad(format!("pi has {} entries, expected {p}", pi.len()));
                }
                if pi.iter().any(|x| !(0.0..=1.0).contains(x)) {
                    return bad("pi must lie in [0, 1]".into());
                }
            }
            Truth::Regression { fbar, noise_sd } => {
                if fbar.len() != p {
                    return bad(format!("fbar has {} entries, expected {p}", fbar.len()));
                }
                if !(*noise_sd >= 0.0) || fbar.iter().any(|v| !v.is_finite()) {
                    return bad("regression truth needs finite fbar and noise_sd >= 0".into());
                }
            }
            Truth::Discrete { values, probs } => {
                if values.is_empty() || probs.len() != p {
                    return bad("discrete truth needs values and one law per point".into());
                }
                for row in probs {
                    if row.len() != values.len()
                        || row.iter().any(|q| !(*q >= 0.0))
                        || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12
                    {
                        return bad("each conditional law must be a probability vector".into());
                    }
                }
            }
            Truth::Density { nu } => {
                if nu.len() != p {
                    return bad(format!("nu has {} entries, expected {p}", nu.len()));
                }
                if nu.iter().any(|v| !(*v > 0.0)) || basis.probs().iter().any(|q| !(*q > 0.0)) {
                    return bad("density truth needs nu > 0 and design probabilities > 0".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub target_fbar: Vec<f64>,
    pub lipschitz: bool,
    pub linear_in_f: bool,
    /// Grid weights defining `b(f) = log sum_j nu_j e^{f(x_j)}`; density only.
    pub nu: Option<Vec<f64>>,
}

impl LossModel {
    pub fn new(kind: LossKind, basis: &BasisSystem, truth: &Truth) -> Result<Self> {
        let target_fbar = target_fbar(kind, basis, truth)?;
        let nu = match (kind, truth) {
            (LossKind::Density, Truth::Density { nu }) => Some(nu.clone()),
            _ => None,
        };
        Ok(Self {
            kind,
            target_fbar,
            lipschitz: kind.is_lipschitz(),
            linear_in_f: kind.is_linear_in_f(),
            nu,
        })
    }
}

fn response_error(kind: LossKind, y: f64) -> Error {
    Error::ResponseDomain {
        kind: kind.name(),
        y,
    }
}

fn check_response(kind: LossKind, y: f64) -> Result<()> {
    let ok = match kind {
        LossKind::Logistic => y == 0.0 || y == 1.0,
        LossKind::Hinge => y == 1.0 || y == -1.0,
        LossKind::Quantile { .. } | LossKind::Quadratic => y.is_finite(),
        LossKind::Density => true,
    };
    if ok {
        Ok(())
    } else {
        Err(response_error(kind, y))
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn raw_value(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::Logistic => 0.5 * (-z * y + softplus(z)),
        LossKind::Hinge => (1.0 - y * z).max(0.0),
        LossKind::Quantile { tau } => {
            let r = y - z;
            if r < 0.0 {
                (tau - 1.0) * r
            } else {
                tau * r
            }
        }
        LossKind::Quadratic => 0.5 * (y - z) * (y - z),
        LossKind::Density => -z,
    }
}

fn raw_subgradient(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::Logistic => 0.5 * (sigmoid(z) - y),
        LossKind::Hinge => {
            let slack = 1.0 - y * z;
            if slack > 0.0 {
                -y
            } else if slack < 0.0 {
                0.0
            } else {
                -0.5 * y
            }
        }
        LossKind::Quantile { tau } => {
            let r = y - z;
            if r > 0.0 {
                -tau
            } else if r < 0.0 {
                1.0 - tau
            } else {
                0.5 - tau
            }
        }
        LossKind::Quadratic => z - y,
        LossKind::Density => -1.0,
    }
}

/// Pointwise loss `gamma(z, y)`; for density the pointwise part `-z`.
pub fn loss_value(kind: LossKind, z: f64, y: f64) -> Result<f64> {
    check_response(kind, y)?;
    Ok(raw_value(kind, z, y))
}

/// An element of the subdifferential in `z` (the midpoint at kinks).
pub fn loss_subgradient(kind: LossKind, z: f64, y: f64) -> Result<f64> {
    check_response(kind, y)?;
    Ok(raw_subgradient(kind, z, y))
}

/// Loss value and derivative in `z`, with the Moreau envelope of parameter
/// `mu` replacing hinge and quantile losses. Smooth kinds ignore `mu`.
pub(crate) fn smoothed(kind: LossKind, z: f64, y: f64, mu: f64) -> (f64, f64) {
    match kind {
        LossKind::Hinge if mu > 0.0 => {
            let s = 1.0 - y * z;
            if s >= mu {
                (s - 0.5 * mu, -y)
            } else if s > 0.0 {
                (s * s / (2.0 * mu), -y * s / mu)
            } else {
                (0.0, 0.0)
            }
        }
        LossKind::Quantile { tau } if mu > 0.0 => {
            let r = y - z;
            let (v, dr) = if r >= tau * mu {
                (tau * r - 0.5 * tau * tau * mu, tau)
            } else if r <= (tau - 1.0) * mu {
                ((tau - 1.0) * r - 0.5 * (1.0 - tau) * (1.0 - tau) * mu, tau - 1.0)
            } else {
                (r * r / (2.0 * mu), r / mu)
            };
            (v, -dr)
        }
        _ => (raw_value(kind, z, y), raw_subgradient(kind, z, y)),
    }
}

/// Upper bound on the second derivative of the (smoothed) pointwise loss.
pub(crate) fn curvature_bound(kind: LossKind, mu: f64) -> f64 {
    match kind {
        LossKind::Logistic => 0.125,
        LossKind::Quadratic => 1.0,
        LossKind::Density => 0.0,
        LossKind::Hinge | LossKind::Quantile { .. } => {
            if mu > 0.0 {
                1.0 / mu
            } else {
                1.0
            }
        }
    }
}

/// `log sum_j nu_j e^{f_j}`, evaluated stably.
pub fn log_partition(nu: &[f64], f: &[f64]) -> f64 {
    let top = f
        .iter()
        .zip(nu)
        .filter(|(_, w)| **w > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = f
        .iter()
        .zip(nu)
        .map(|(v, w)| w * (v - top).exp())
        .sum();
    top + s.ln()
}

/// The normalization `b(f_theta)` of the density loss.
pub fn offset_b(model: &LossModel, theta: &CoefVector, basis: &BasisSystem) -> Result<f64> {
    let nu = match (model.kind, &model.nu) {
        (LossKind::Density, Some(nu)) => nu,
        _ => {
            return Err(Error::KindMismatch {
                expected: "density",
                got: model.kind.name(),
            })
        }
    };
    basis.check_len(theta.len())?;
    Ok(log_partition(nu, &basis.eval(&theta.theta)))
}

fn mismatch(kind: LossKind, truth: &Truth) -> Error {
    Error::TruthMissing(format!(
        "{} loss cannot use {} truth",
        kind.name(),
        truth.name()
    ))
}

pub fn target_fbar(kind: LossKind, basis: &BasisSystem, truth: &Truth) -> Result<Vec<f64>> {
    truth.validate(basis)?;
    match (kind, truth) {
        (LossKind::Logistic, Truth::Binary { pi }) => {
            if pi.iter().any(|&x| x <= 0.0 || x >= 1.0) {
                return Err(Error::TruthMissing(
                    "logistic target needs 0 < pi < 1 at every point".into(),
                ));
            }
            Ok(pi.iter().map(|&x| (x / (1.0 - x)).ln()).collect())
        }
        (LossKind::Hinge, Truth::Binary { pi }) => Ok(pi
            .iter()
            .map(|&x| {
                let s = 2.0 * x - 1.0;
                if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect()),
        (LossKind::Quantile { tau }, Truth::Discrete { values, probs }) => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::invalid("quantile level must lie in (0, 1)"));
            }
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            Ok(probs
                .iter()
                .map(|row| {
                    let mut acc = 0.0;
                    for &v in &order {
                        acc += row[v];
                        if acc >= tau - 1e-12 {
                            return values[v];
                        }
                    }
                    values[*order.last().expect("nonempty")]
                })
                .collect())
        }
        (LossKind::Quadratic, Truth::Regression { fbar, .. }) => Ok(fbar.clone()),
        (LossKind::Quadratic, Truth::Discrete { values, probs }) => Ok(probs
            .iter()
            .map(|row| row.iter().zip(values).map(|(q, v)| q * v).sum())
            .collect()),
        (LossKind::Density, Truth::Density { nu }) => {
            let raw: Vec<f64> = basis
                .probs()
                .iter()
                .zip(nu)
                .map(|(q, w)| (q / w).ln())
                .collect();
            let mass: f64 = nu.iter().sum();
            let centre = raw.iter().zip(nu).map(|(f, w)| f * w).sum::<f64>() / mass;
            Ok(raw.into_iter().map(|f| f - centre).collect())
        }
        _ => Err(mismatch(kind, truth)),
    }
}

/// `E[gamma(z, Y) | X = x_j]` for response-based kinds.
pub fn conditional_risk(kind: LossKind, truth: &Truth, j: usize, z: f64) -> Result<f64> {
    match (kind, truth) {
        (LossKind::Logistic | LossKind::Hinge, Truth::Binary { pi }) => {
            let other = if kind == LossKind::Logistic { 0.0 } else { -1.0 };
            Ok(pi[j] * raw_value(kind, z, 1.0) + (1.0 - pi[j]) * raw_value(kind, z, other))
        }
        (LossKind::Quadratic, Truth::Regression { fbar, noise_sd }) => {
            Ok(0.5 * ((z - fbar[j]).powi(2) + noise_sd * noise_sd))
        }
        (LossKind::Quadratic | LossKind::Quantile { .. }, Truth::Discrete { values, probs }) => {
            Ok(probs[j]
                .iter()
                .zip(values)
                .map(|(q, &y)| q * raw_value(kind, z, y))
                .sum())
        }
        _ => Err(mismatch(kind, truth)),
    }
}

/// Exact excess risk `E(f_theta) = P gamma_{f_theta} - P gamma_{fbar}`.
pub fn excess_risk(
    model: &LossModel,
    theta: &CoefVector,
    basis: &BasisSystem,
    truth: &Truth,
) -> Result<f64> {
    basis.check_len(theta.len())?;
    excess_risk_values(model, &basis.eval(&theta.theta), basis, truth)
}

/// Excess risk of the function with values `f` on the design points.
pub fn excess_risk_values(
    model: &LossModel,
    f: &[f64],
    basis: &BasisSystem,
    truth: &Truth,
) -> Result<f64> {
    let fbar = &model.target_fbar;
    let q = basis.probs();
    let e = match (model.kind, truth) {
        (LossKind::Logistic, Truth::Binary { pi }) => {
            // Half the Bernoulli Kullback-Leibler divergence, pointwise.
            (0..basis.p())
                .filter(|&j| q[j] > 0.0)
                .map(|j| {
                    let (p1, z) = (pi[j], f[j]);
                    let log_s = -softplus(-z);
                    let log_1s = -softplus(z);
                    q[j] * 0.5 * (p1 * (p1.ln() - log_s) + (1.0 - p1) * ((1.0 - p1).ln() - log_1s))
                })
                .sum()
        }
        (LossKind::Quadratic, _) => {
            truth.validate(basis)?;
            (0..basis.p())
                .map(|j| 0.5 * q[j] * (f[j] - fbar[j]).powi(2))
                .sum()
        }
        (LossKind::Density, Truth::Density { .. }) => {
            let h: Vec<f64> = f.iter().zip(fbar).map(|(a, b)| a - b).collect();
            log_partition(q, &h) - q.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
        }
        _ => excess_risk_direct(model, f, basis, truth)?,
    };
    Ok(e.max(0.0))
}

/// Excess risk by direct summation of conditional risks over the response law.
pub fn excess_risk_direct(
    model: &LossModel,
    f: &[f64],
    basis: &BasisSystem,
    truth: &Truth,
) -> Result<f64> {
    let q = basis.probs();
    let mut total = 0.0;
    for j in (0..basis.p()).filter(|&j| q[j] > 0.0) {
        total += q[j]
            * (conditional_risk(model.kind, truth, j, f[j])?
                - conditional_risk(model.kind, truth, j, model.target_fbar[j])?);
    }
    Ok(total)
}

/// Tabulated or closed-form convex margin function `G` on `[0, u_max]`.
#[derive(Clone)]
pub struct NumericG {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    u_max: f64,
}

impl fmt::Debug for NumericG {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NumericG").field("u_max", &self.u_max).finish()
    }
}

impl NumericG {
    pub fn from_fn(g: impl Fn(f64) -> f64 + Send + Sync + 'static, u_max: f64) -> Self {
        Self {
            eval: Arc::new(g),
            u_max,
        }
    }

    /// Piecewise-linear interpolation through `(u[i], g[i])`, `u` increasing
    /// from 0.
    pub fn from_table(u: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if u.len() < 2 || u.len() != g.len() || u[0] != 0.0 || u.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("table needs increasing abscissae from 0"));
        }
        let u_max = *u.last().expect("nonempty");
        Ok(Self::from_fn(
            move |x| {
                let i = u.partition_point(|&v| v <= x).clamp(1, u.len() - 1);
                let w = (x - u[i - 1]) / (u[i] - u[i - 1]);
                g[i - 1] + w * (g[i] - g[i - 1])
            },
            u_max,
        ))
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.eval)(u)
    }
}

const GOLDEN_TOL: f64 = 1e-10;

/// `H(v) = sup_{0 <= u <= U} (u v - G(u))` by golden-section search.
pub fn conjugate_h(g: &NumericG, v: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let obj = |u: f64| u * v - g.eval(u);
    let (mut lo, mut hi) = (0.0, g.u_max);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (obj(x1), obj(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = obj(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = obj(x1);
        }
    }
    let u = 0.5 * (lo + hi);
    if g.u_max - u <= 2.0 * GOLDEN_TOL {
        return Err(Error::RangeExceeded { u_max: g.u_max });
    }
    Ok(obj(u).max(obj(0.0)))
}

/// Margin constants: `G(u) = u^2 / (2 C0)` and its conjugate `H(v) = C1 v^2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginPair {
    pub eta: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(skip)]
    pub numeric_g: Option<NumericG>,
}

impl MarginPair {
    pub fn quadratic(c0: f64, eta: f64) -> Self {
        Self {
            eta,
            c0,
            c1: c0 / 2.0,
            numeric_g: None,
        }
    }

    pub fn g(&self, u: f64) -> f64 {
        match &self.numeric_g {
            Some(g) => g.eval(u),
            None => u * u / (2.0 * self.c0),
        }
    }

    pub fn h(&self, v: f64) -> Result<f64> {
        match &self.numeric_g {
            Some(g) => conjugate_h(g, v),
            None => Ok(self.c1 * v * v),
        }
    }
}

const CURVATURE_GRID: f64 = 1e-3;

/// Minimum of `curv` over `[lo, hi]`: grid search, then golden refinement
/// around the best grid cell.
fn min_over_interval(curv: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) / CURVATURE_GRID).ceil().max(1.0) as usize;
    let at = |i: usize| lo + (hi - lo) * i as f64 / steps as f64;
    let (mut best_i, mut best) = (0, curv(lo));
    for i in 1..=steps {
        let c = curv(at(i));
        if c < best {
            best = c;
            best_i = i;
        }
    }
    let (mut a, mut b) = (at(best_i.saturating_sub(1)), at((best_i + 1).min(steps)));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let x1 = b - inv_phi * (b - a);
        let x2 = a + inv_phi * (b - a);
        if curv(x1) < curv(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    best.min(curv(0.5 * (a + b)))
}

/// Quadratic margin constants valid on the sup-norm tube of radius `eta`.
///
/// Logistic: `1/C0` is the smallest conditional-risk curvature
/// `e^z / (2 (1 + e^z)^2)` over `|z - fbar(x_j)| <= eta`. Quadratic: `C0 = 1`.
/// Density: on the tube the tilted law `Q e^h / Q e^h` is within a factor
/// `e^{2 eta}` of `Q`, so `C0 = e^{2 eta} / kappa` with
/// `kappa = 1 - ||P_S 1||^2`, `P_S` the `L2(Q)` projection onto the span of
/// the base functions and `fbar`.
pub fn margin_fit(model: &LossModel, basis: &BasisSystem, eta: f64) -> Result<MarginPair> {
    if !(eta >= 0.0) {
        return Err(Error::invalid("eta must be nonnegative"));
    }
    match model.kind {
        LossKind::Quadratic => Ok(MarginPair::quadratic(1.0, eta)),
        LossKind::Logistic => {
            let curv = |z: f64| {
                let s = sigmoid(z);
                0.5 * s * (1.0 - s)
            };
            let min_curv = (0..basis.p())
                .filter(|&j| basis.probs()[j] > 0.0)
                .map(|j| {
                    let c = model.target_fbar[j];
                    min_over_interval(curv, c - eta, c + eta)
                })
                .fold(f64::INFINITY, f64::min);
            Ok(MarginPair::quadratic(1.0 / min_curv, eta))
        }
        LossKind::Density => {
            let kappa = density_kappa(basis, &model.target_fbar);
            if kappa <= 1e-12 {
                return Err(Error::NotSolvable(
                    "constant functions lie in the model span; the density margin fails".into(),
                ));
            }
            Ok(MarginPair::quadratic((2.0 * eta).exp() / kappa, eta))
        }
        LossKind::Hinge | LossKind::Quantile { .. } => {
            Err(Error::MarginUnsupported(model.kind.name()))
        }
    }
}

fn density_kappa(basis: &BasisSystem, fbar: &[f64]) -> f64 {
    let p = basis.p();
    let m = basis.m();
    let root: Vec<f64> = basis.probs().iter().map(|q| q.sqrt()).collect();
    let mut a = DMatrix::<f64>::zeros(p, m + 1);
    for j in 0..p {
        for k in 0..m {
            a[(j, k)] = root[j] * basis.value(j, k);
        }
        a[(j, m)] = root[j] * fbar[j];
    }
    let svd = a.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let mut proj = 0.0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-10 * smax {
            let c: f64 = (0..p).map(|j| u[(j, i)] * root[j]).sum();
            proj += c * c;
        }
    }
    1.0 - proj
}

/// Condition I: `||f_theta - fbar||_inf <= eta` over the design support.
pub fn check_sup_norm_condition(
    theta: &CoefVector,
    basis: &BasisSystem,
    model: &LossModel,
    eta: f64,
) -> bool {
    sup_deviation(theta, basis, model) <= eta
}

pub fn sup_deviation(theta: &CoefVector, basis: &BasisSystem, model: &LossModel) -> f64 {
    let diff: Vec<f64> = basis
        .eval(&theta.theta)
        .iter()
        .zip(&model.target_fbar)
        .map(|(a, b)| a - b)
        .collect();
    basis.sup_norm(&diff)
}

/// Sufficient check for Condition II: every `theta` within weighted-l1
/// distance `radius_multiplier * zeta_star` of `theta_star` stays in the tube.
pub fn condition_ii_sufficient(
    star_sup_deviation: f64,
    zeta_star: f64,
    k_m: f64,
    eta: f64,
    radius_multiplier: f64,
) -> bool {
    star_sup_deviation + k_m * radius_multiplier * zeta_star <= eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    const LN2: f64 = std::f64::consts::LN_2;

    fn single_point() -> BasisSystem {
        BasisSystem::new(vec![1.0], vec![vec![1.0]]).unwrap()
    }

    #[test]
    fn loss_values() {
        for y in [0.0, 1.0] {
            assert!((loss_value(LossKind::Logistic, 0.0, y).unwrap() - LN2 / 2.0).abs() < 1e-15);
        }
        assert_eq!(loss_value(LossKind::Hinge, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(loss_value(LossKind::Hinge, 0.0, -1.0).unwrap(), 1.0);
        assert_eq!(loss_value(LossKind::Quadratic, 1.0, 3.0).unwrap(), 2.0);
        assert_eq!(loss_value(LossKind::Quantile { tau: 0.3 }, 1.0, 3.0).unwrap(), 0.6);
        assert!((loss_value(LossKind::Quantile { tau: 0.3 }, 3.0, 1.0).unwrap() - 1.4).abs() < 1e-15);
        assert!(matches!(
            loss_value(LossKind::Hinge, 0.0, 0.5),
            Err(Error::ResponseDomain { .. })
        ));
        assert!(loss_value(LossKind::Logistic, 0.0, -1.0).is_err());
    }

    #[test]
    fn subgradients() {
        assert_eq!(loss_subgradient(LossKind::Logistic, 0.0, 1.0).unwrap(), -0.25);
        assert_eq!(loss_subgradient(LossKind::Hinge, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_subgradient(LossKind::Hinge, 1.0, 1.0).unwrap(), -0.5);
        assert_eq!(loss_subgradient(LossKind::Hinge, 0.0, -1.0).unwrap(), 1.0);
        assert_eq!(loss_subgradient(LossKind::Quantile { tau: 0.25 }, 1.0, 1.0).unwrap(), 0.25);

        let mut s = Stream::new(11);
        let h = 1e-6;
        for _ in 0..100 {
            let z = 6.0 * s.uniform() - 3.0;
            let cases = [
                (LossKind::Logistic, if s.bernoulli(0.5) { 1.0 } else { 0.0 }),
                (LossKind::Quadratic, 4.0 * s.uniform() - 2.0),
                (LossKind::Density, 0.0),
            ];
            for (kind, y) in cases {
                let fd = (loss_value(kind, z + h, y).unwrap() - loss_value(kind, z - h, y).unwrap())
                    / (2.0 * h);
                let g = loss_subgradient(kind, z, y).unwrap();
                assert!((fd - g).abs() < 1e-6, "{kind:?} z={z} y={y}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn lipschitz_property() {
        let mut s = Stream::new(5);
        let kinds = [
            LossKind::Logistic,
            LossKind::Hinge,
            LossKind::Quantile { tau: 0.3 },
            LossKind::Density,
        ];
        for _ in 0..10_000 {
            let z1 = 20.0 * s.uniform() - 10.0;
            let z2 = 20.0 * s.uniform() - 10.0;
            for kind in kinds {
                let y = match kind {
                    LossKind::Logistic => (s.uniform() < 0.5) as u8 as f64,
                    LossKind::Hinge => s.rademacher(),
                    _ => 10.0 * s.uniform() - 5.0,
                };
                let d = (raw_value(kind, z1, y) - raw_value(kind, z2, y)).abs();
                assert!(d <= (z1 - z2).abs() + 1e-12, "{kind:?}");
            }
        }
    }

    #[test]
    fn smoothed_losses_bracket_the_originals() {
        let mu = 0.1;
        for i in -30..30 {
            let z = i as f64 * 0.1;
            for (kind, y) in [(LossKind::Hinge, 1.0), (LossKind::Quantile { tau: 0.3 }, 0.4)] {
                let (v, g) = smoothed(kind, z, y, mu);
                let exact = raw_value(kind, z, y);
                assert!(v <= exact + 1e-15 && v >= exact - mu / 2.0 - 1e-15);
                let h = 1e-6;
                let fd = (smoothed(kind, z + h, y, mu).0 - smoothed(kind, z - h, y, mu).0) / (2.0 * h);
                assert!((fd - g).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn offset_b_cases() {
        let basis = BasisSystem::new(vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let truth = Truth::Density { nu: vec![0.5, 0.5] };
        let model = LossModel::new(LossKind::Density, &basis, &truth).unwrap();
        assert_eq!(offset_b(&model, &CoefVector::zeros(2), &basis).unwrap(), 0.0);
        let c = 0.7;
        let b = offset_b(&model, &CoefVector::new(vec![c, c]), &basis).unwrap();
        assert!((b - c).abs() < 1e-15);
        let b = offset_b(&model, &CoefVector::new(vec![LN2, 0.0]), &basis).unwrap();
        assert!((b - 0.405_465_108_108_164_4).abs() < 1e-15);

        let other = LossModel {
            kind: LossKind::Quadratic,
            ..model
        };
        assert!(matches!(
            offset_b(&other, &CoefVector::zeros(2), &basis),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn targets() {
        let basis = BasisSystem::new(vec![0.5, 0.5], vec![vec![1.0], vec![-1.0]]).unwrap();
        let half = Truth::Binary { pi: vec![0.5, 0.5] };
        assert_eq!(target_fbar(LossKind::Logistic, &basis, &half).unwrap(), vec![0.0, 0.0]);
        let skewed = Truth::Binary { pi: vec![0.9, 0.2] };
        assert_eq!(target_fbar(LossKind::Hinge, &basis, &skewed).unwrap(), vec![1.0, -1.0]);
        assert_eq!(target_fbar(LossKind::Hinge, &basis, &half).unwrap(), vec![0.0, 0.0]);
        let uniform = Truth::Density { nu: vec![0.5, 0.5] };
        let f = target_fbar(LossKind::Density, &basis, &uniform).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));
        let tilted = Truth::Density { nu: vec![0.25, 0.75] };
        let f = target_fbar(LossKind::Density, &basis, &tilted).unwrap();
        assert!((0.25 * f[0] + 0.75 * f[1]).abs() < 1e-15);

        assert!(matches!(
            target_fbar(LossKind::Logistic, &basis, &uniform),
            Err(Error::TruthMissing(_))
        ));
        let edge = Truth::Binary { pi: vec![1.0, 0.5] };
        assert!(target_fbar(LossKind::Logistic, &basis, &edge).is_err());

        let discrete = Truth::Discrete {
            values: vec![0.0, 1.0, 5.0],
            probs: vec![vec![0.2, 0.3, 0.5], vec![0.5, 0.5, 0.0]],
        };
        assert_eq!(
            target_fbar(LossKind::Quantile { tau: 0.5 }, &basis, &discrete).unwrap(),
            vec![1.0, 0.0]
        );
        let mean = target_fbar(LossKind::Quadratic, &basis, &discrete).unwrap();
        assert!((mean[0] - 2.8).abs() < 1e-15 && (mean[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn logistic_excess_risk_two_routes() {
        let basis = single_point();
        let truth = Truth::Binary { pi: vec![0.5] };
        let model = LossModel::new(LossKind::Logistic, &basis, &truth).unwrap();
        let closed = excess_risk(&model, &CoefVector::new(vec![1.0]), &basis, &truth).unwrap();
        let direct = excess_risk_direct(&model, &[1.0], &basis, &truth).unwrap();
        assert!((closed - direct).abs() < 1e-12);
        assert!((closed - 0.060_057_253_479_138_76).abs() < 1e-15);

        let truth = Truth::Binary { pi: vec![0.83] };
        let model = LossModel::new(LossKind::Logistic, &basis, &truth).unwrap();
        for z in [-3.0, -0.2, 0.0, 1.5, 4.0] {
            let a = excess_risk_values(&model, &[z], &basis, &truth).unwrap();
            let b = excess_risk_direct(&model, &[z], &basis, &truth).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn excess_risk_zero_at_target_and_quadratic_form() {
        let basis = BasisSystem::new(vec![0.25, 0.75], vec![vec![1.0], vec![2.0]]).unwrap();
        let truth = Truth::Regression {
            fbar: vec![0.5, 1.0],
            noise_sd: 0.7,
        };
        let model = LossModel::new(LossKind::Quadratic, &basis, &truth).unwrap();
        assert_eq!(excess_risk(&model, &CoefVector::new(vec![0.5]), &basis, &truth).unwrap(), 0.0);
        let theta = CoefVector::new(vec![1.0]);
        let closed = excess_risk(&model, &theta, &basis, &truth).unwrap();
        let direct = excess_risk_direct(&model, &basis.eval(&theta.theta), &basis, &truth).unwrap();
        assert!((closed - direct).abs() < 1e-14);
        assert!((closed - 0.5 * (0.25 * 0.25 + 0.75 * 1.0)).abs() < 1e-15);

        let discrete = Truth::Discrete {
            values: vec![-1.0, 2.0],
            probs: vec![vec![0.5, 0.5], vec![0.1, 0.9]],
        };
        let model = LossModel::new(LossKind::Quadratic, &basis, &discrete).unwrap();
        let f = [0.3, -0.4];
        let closed = excess_risk_values(&model, &f, &basis, &discrete).unwrap();
        let direct = excess_risk_direct(&model, &f, &basis, &discrete).unwrap();
        assert!((closed - direct).abs() < 1e-14);
    }

    #[test]
    fn excess_risk_nonnegative() {
        let basis = BasisSystem::hadamard(3).unwrap();
        let mut s = Stream::new(3);
        let pi: Vec<f64> = (0..basis.p()).map(|_| 0.1 + 0.8 * s.uniform()).collect();
        let binary = Truth::Binary { pi };
        let nu: Vec<f64> = (0..basis.p()).map(|_| 0.5 + s.uniform()).collect();
        let density = Truth::Density { nu };
        let discrete = Truth::Discrete {
            values: vec![-1.0, 0.0, 2.0],
            probs: (0..basis.p()).map(|_| vec![0.3, 0.3, 0.4]).collect(),
        };
        let cases = [
            (LossKind::Logistic, &binary),
            (LossKind::Hinge, &binary),
            (LossKind::Density, &density),
            (LossKind::Quantile { tau: 0.4 }, &discrete),
        ];
        for (kind, truth) in cases {
            let model = LossModel::new(kind, &basis, truth).unwrap();
            for _ in 0..200 {
                let theta = CoefVector::new((0..3).map(|_| 4.0 * s.uniform() - 2.0).collect());
                let e = excess_risk(&model, &theta, &basis, truth).unwrap();
                assert!(e >= 0.0, "{kind:?}");
            }
        }
    }

    #[test]
    fn fitted_density_integrates_to_one() {
        let basis = BasisSystem::hadamard(3).unwrap();
        let nu = vec![0.25; 4];
        let truth = Truth::Density { nu: nu.clone() };
        let model = LossModel::new(LossKind::Density, &basis, &truth).unwrap();
        let theta = CoefVector::new(vec![0.3, -1.2, 0.8]);
        let b = offset_b(&model, &theta, &basis).unwrap();
        let f = basis.eval(&theta.theta);
        let total: f64 = f.iter().zip(&nu).map(|(v, w)| w * (v - b).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn margin_constants() {
        let basis = single_point();
        let truth = Truth::Binary { pi: vec![0.5] };
        let model = LossModel::new(LossKind::Logistic, &basis, &truth).unwrap();
        let m = margin_fit(&model, &basis, 0.0).unwrap();
        assert!((m.c0 - 8.0).abs() < 1e-12);
        assert!((m.c1 - 4.0).abs() < 1e-12);
        let m = margin_fit(&model, &basis, 1.0).unwrap();
        let s = sigmoid(1.0);
        assert!((m.c0 - 1.0 / (0.5 * s * (1.0 - s))).abs() < 1e-9);

        let reg = Truth::Regression {
            fbar: vec![0.0],
            noise_sd: 1.0,
        };
        let model = LossModel::new(LossKind::Quadratic, &basis, &reg).unwrap();
        assert_eq!(margin_fit(&model, &basis, 1.0).unwrap().c0, 1.0);

        let model = LossModel::new(LossKind::Hinge, &basis, &truth).unwrap();
        assert!(matches!(
            margin_fit(&model, &basis, 1.0),
            Err(Error::MarginUnsupported("hinge"))
        ));
    }

    #[test]
    fn fenchel_on_grid() {
        let basis = single_point();
        let truth = Truth::Binary { pi: vec![0.3] };
        let model = LossModel::new(LossKind::Logistic, &basis, &truth).unwrap();
        let m = margin_fit(&model, &basis, 0.5).unwrap();
        for i in 0..100 {
            for j in 0..100 {
                let (u, v) = (i as f64 * 0.05, j as f64 * 0.05);
                assert!(u * v <= m.g(u) + m.h(v).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn density_margin_is_valid() {
        let basis = BasisSystem::hadamard(4).unwrap();
        let truth = Truth::Density {
            nu: vec![0.25, 0.05, 0.1, 0.1, 0.2, 0.1, 0.1, 0.1],
        };
        let model = LossModel::new(LossKind::Density, &basis, &truth).unwrap();
        let eta = 0.8;
        let m = margin_fit(&model, &basis, eta).unwrap();
        let mut s = Stream::new(17);
        let mut checked = 0;
        while checked < 500 {
            let theta = CoefVector::new((0..4).map(|_| 0.6 * s.uniform() - 0.3).collect());
            if !check_sup_norm_condition(&theta, &basis, &model, eta) {
                continue;
            }
            let f = basis.eval(&theta.theta);
            let diff: Vec<f64> = f.iter().zip(&model.target_fbar).map(|(a, b)| a - b).collect();
            let e = excess_risk(&model, &theta, &basis, &truth).unwrap();
            assert!(e + 1e-14 >= m.g(basis.l2_norm(&diff)));
            checked += 1;
        }

        // A constant column makes the margin fail.
        let with_const = BasisSystem::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 1.0], vec![1.0, -1.0]],
        )
        .unwrap();
        let truth = Truth::Density { nu: vec![0.5, 0.5] };
        let model = LossModel::new(LossKind::Density, &with_const, &truth).unwrap();
        assert!(margin_fit(&model, &with_const, 1.0).is_err());
    }

    #[test]
    fn conjugates() {
        let half = NumericG::from_fn(|u| u * u / 2.0, 100.0);
        for i in 0..=100 {
            let v = i as f64 * 0.1;
            assert!((conjugate_h(&half, v).unwrap() - v * v / 2.0).abs() < 1e-8);
        }
        let c0 = 3.0;
        let scaled = NumericG::from_fn(move |u| u * u / (2.0 * c0), 200.0);
        for i in 0..=50 {
            let v = i as f64 * 0.2;
            assert!((conjugate_h(&scaled, v).unwrap() - c0 * v * v / 2.0).abs() < 1e-8);
        }
        let quartic = NumericG::from_fn(|u| u.powi(4), 2.0);
        let h = conjugate_h(&quartic, 1.0).unwrap();
        let grid = (0..1_000_000)
            .map(|i| {
                let u = 2.0 * i as f64 / 1e6;
                u - u.powi(4)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((h - grid).abs() < 1e-9);
        assert!((h - 0.472_470_393_710_577_4).abs() < 1e-12);

        let short = NumericG::from_fn(|u| u * u / 2.0, 1.0);
        assert!(matches!(conjugate_h(&short, 5.0), Err(Error::RangeExceeded { .. })));

        let table = NumericG::from_table(
            (0..=2000).map(|i| i as f64 * 0.01).collect(),
            (0..=2000).map(|i| (i as f64 * 0.01).powi(2) / 2.0).collect(),
        )
        .unwrap();
        assert!((conjugate_h(&table, 3.0).unwrap() - 4.5).abs() < 1e-4);
    }

    #[test]
    fn sup_norm_conditions() {
        let basis = BasisSystem::new(vec![0.5, 0.5], vec![vec![1.0], vec![-1.0]]).unwrap();
        let truth = Truth::Regression {
            fbar: vec![0.2, -0.2],
            noise_sd: 1.0,
        };
        let model = LossModel::new(LossKind::Quadratic, &basis, &truth).unwrap();
        assert!(check_sup_norm_condition(&CoefVector::new(vec![0.2]), &basis, &model, 0.0));
        assert!(!check_sup_norm_condition(&CoefVector::new(vec![0.5]), &basis, &model, 0.0));
        let truth = Truth::Regression {
            fbar: vec![-0.1, 0.3],
            noise_sd: 1.0,
        };
        let model = LossModel::new(LossKind::Quadratic, &basis, &truth).unwrap();
        // f_theta - fbar = (0.1, -0.3)
        assert!(!check_sup_norm_condition(&CoefVector::zeros(1), &basis, &model, 0.2));

        assert!(condition_ii_sufficient(0.1, 0.0, 2.0, 0.1, 6.0));
        assert!(condition_ii_sufficient(0.1, 0.05, 2.0, 0.8, 6.0));
        assert!(!condition_ii_sufficient(0.1, 0.05, 2.0, 0.6, 6.0));
    }
}
