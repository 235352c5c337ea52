//! Penalized risk minimization by accelerated proximal gradient.
//!
//! Empirical and population risks share one representation: a weighted list
//! of `(design point, response)` atoms. The smooth part is minimized with a
//! monotone FISTA scheme and backtracking; hinge and quantile losses are
//! replaced by their Moreau envelopes on a decreasing schedule and the last
//! stage is polished with proximal subgradient steps on the exact objective.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::{BasisSystem, CoefVector, Dataset, WeightProfile};
use crate::error::{Error, Result};
use crate::losses::{self, log_partition, LossKind, LossModel, Truth};
use crate::rng::{derive_seed, Stream};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Gradient-mapping residual required for smooth kinds.
pub const SMOOTH_RESIDUAL: f64 = 1e-7;
/// Residual required on the final smoothed problem for nonsmooth kinds.
pub const SMOOTHED_RESIDUAL: f64 = 1e-6;
const STALL_WINDOW: usize = 10;
const FIRST_MU: f64 = 1e-2;
const POLISH_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub weights: WeightProfile,
    pub unpenalized: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
    /// Final Moreau smoothing level for hinge and quantile losses.
    pub smoothing_mu: f64,
    pub seed: Option<u64>,
    /// Extra randomized starting points, drawn from `seed`.
    pub restarts: usize,
}

impl FitConfig {
    pub fn new(lambda: f64, weights: WeightProfile) -> Self {
        Self {
            lambda,
            weights,
            unpenalized: Vec::new(),
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            smoothing_mu: 1e-4,
            seed: None,
            restarts: 0,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.weights.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.weights.len(),
            });
        }
        if !(self.lambda >= 0.0) || !(self.tol > 0.0) || !(self.smoothing_mu >= 0.0) {
            return Err(Error::invalid("fit needs lambda >= 0, tol > 0, smoothing_mu >= 0"));
        }
        if let Some(k) = self.weights.sigma.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::ZeroVarianceFeature { index: k });
        }
        if self.unpenalized.iter().any(|&k| k >= m) {
            return Err(Error::invalid("unpenalized index out of range"));
        }
        Ok(())
    }

    fn penalty_weights(&self) -> Vec<f64> {
        self.weights
            .sigma
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if self.unpenalized.contains(&k) {
                    0.0
                } else {
                    self.lambda * s
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: CoefVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup norm of the gradient mapping at the returned point (of the
    /// smoothed problem for nonsmooth kinds).
    pub stationarity: f64,
}

impl FitResult {
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterExceeded {
                iterations: self.iterations,
            })
        }
    }
}

/// Soft-thresholding of `v_k` at `step * lambda_sigma_k`; unpenalized
/// indices pass through.
pub fn prox_weighted_l1(
    v: &[f64],
    step: f64,
    lambda_sigma: &[f64],
    unpenalized: &[usize],
) -> Vec<f64> {
    v.iter()
        .zip(lambda_sigma)
        .enumerate()
        .map(|(k, (&x, &l))| {
            if unpenalized.contains(&k) {
                x
            } else {
                soft(x, step * l)
            }
        })
        .collect()
}

fn soft(x: f64, thr: f64) -> f64 {
    if x > thr {
        x - thr
    } else if x < -thr {
        x + thr
    } else {
        0.0
    }
}

/// A risk `sum_a w_a gamma(f(x_{j_a}), y_a)` (plus `b(f)` for density).
#[derive(Debug, Clone)]
pub struct RiskSum {
    kind: LossKind,
    atoms: Vec<(usize, f64, f64)>,
    nu: Option<Vec<f64>>,
}

fn density_nu(model: &LossModel) -> Result<Option<Vec<f64>>> {
    match model.kind {
        LossKind::Density => model
            .nu
            .clone()
            .map(Some)
            .ok_or_else(|| Error::TruthMissing("density loss needs grid weights nu".into())),
        _ => Ok(None),
    }
}

impl RiskSum {
    /// The empirical risk `P_n gamma_f`.
    pub fn empirical(data: &Dataset, basis: &BasisSystem, model: &LossModel) -> Result<Self> {
        if data.x_idx.iter().any(|&j| j >= basis.p()) {
            return Err(Error::invalid("design index out of range"));
        }
        let n = data.n() as f64;
        let mut counts: BTreeMap<(usize, u64), (f64, usize)> = BTreeMap::new();
        match (model.kind, &data.y) {
            (LossKind::Density, _) => {
                for &j in &data.x_idx {
                    counts.entry((j, 0)).or_insert((0.0, 0)).1 += 1;
                }
            }
            (_, Some(y)) => {
                for (&j, &yi) in data.x_idx.iter().zip(y) {
                    losses::loss_value(model.kind, 0.0, yi)?;
                    counts.entry((j, yi.to_bits())).or_insert((yi, 0)).1 += 1;
                }
            }
            (kind, None) => {
                return Err(Error::TruthMissing(format!(
                    "{} loss needs responses",
                    kind.name()
                )))
            }
        }
        let atoms = counts
            .into_iter()
            .map(|((j, _), (y, c))| (j, y, c as f64 / n))
            .collect();
        Ok(Self {
            kind: model.kind,
            atoms,
            nu: density_nu(model)?,
        })
    }

    /// The population risk `P gamma_f` (up to an additive constant for
    /// Gaussian regression).
    pub fn population(basis: &BasisSystem, model: &LossModel, truth: &Truth) -> Result<Self> {
        truth.validate(basis)?;
        let q = basis.probs();
        let mut atoms = Vec::new();
        for j in (0..basis.p()).filter(|&j| q[j] > 0.0) {
            match (model.kind, truth) {
                (LossKind::Logistic | LossKind::Hinge, Truth::Binary { pi }) => {
                    let other = if model.kind == LossKind::Logistic { 0.0 } else { -1.0 };
                    atoms.push((j, other, q[j] * (1.0 - pi[j])));
                    atoms.push((j, 1.0, q[j] * pi[j]));
                }
                (LossKind::Quadratic, Truth::Regression { fbar, .. }) => {
                    atoms.push((j, fbar[j], q[j]));
                }
                (LossKind::Quadratic | LossKind::Quantile { .. }, Truth::Discrete { values, probs }) => {
                    for (v, &w) in values.iter().zip(&probs[j]) {
                        if w > 0.0 {
                            atoms.push((j, *v, q[j] * w));
                        }
                    }
                }
                (LossKind::Density, Truth::Density { .. }) => atoms.push((j, 0.0, q[j])),
                (kind, _) => {
                    return Err(Error::TruthMissing(format!(
                        "{} loss cannot use this truth",
                        kind.name()
                    )))
                }
            }
        }
        atoms.retain(|a| a.2 > 0.0);
        Ok(Self {
            kind: model.kind,
            atoms,
            nu: density_nu(model)?,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    /// Risk of the function with values `f` on the design points.
    pub fn value(&self, f: &[f64], mu: f64) -> f64 {
        let mut total = 0.0;
        for &(j, y, w) in &self.atoms {
            total += w * losses::smoothed(self.kind, f[j], y, mu).0;
        }
        if let Some(nu) = &self.nu {
            total += log_partition(nu, f);
        }
        total
    }

    /// Risk and its derivative with respect to each point value `f_j`.
    pub fn value_and_point_grad(&self, f: &[f64], mu: f64) -> (f64, Vec<f64>) {
        let mut total = 0.0;
        let mut g = vec![0.0; f.len()];
        for &(j, y, w) in &self.atoms {
            let (v, d) = losses::smoothed(self.kind, f[j], y, mu);
            total += w * v;
            g[j] += w * d;
        }
        if let Some(nu) = &self.nu {
            let b = log_partition(nu, f);
            total += b;
            for (gj, (fj, wj)) in g.iter_mut().zip(f.iter().zip(nu)) {
                *gj += wj * (fj - b).exp();
            }
        }
        (total, g)
    }

    /// Gradient in `theta` of the (smoothed) risk of `f_theta`.
    pub fn gradient(&self, basis: &BasisSystem, theta: &[f64], mu: f64) -> Vec<f64> {
        let (_, g) = self.value_and_point_grad(&basis.eval(theta), mu);
        pull_back(basis, &g)
    }

    fn lipschitz_estimate(&self, basis: &BasisSystem, mu: f64) -> f64 {
        let row_sq = |j: usize| basis.row(j).iter().map(|v| v * v).sum::<f64>();
        let curv = losses::curvature_bound(self.kind, mu);
        let mut l: f64 = self.atoms.iter().map(|&(j, _, w)| curv * w * row_sq(j)).sum();
        if self.nu.is_some() {
            l += (0..basis.p()).map(row_sq).fold(0.0, f64::max);
        }
        l.max(1e-12)
    }
}

fn pull_back(basis: &BasisSystem, point_grad: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; basis.m()];
    for (j, &g) in point_grad.iter().enumerate() {
        if g != 0.0 {
            for (o, v) in out.iter_mut().zip(basis.row(j)) {
                *o += g * v;
            }
        }
    }
    out
}

struct Engine<'a> {
    basis: &'a BasisSystem,
    risk: &'a RiskSum,
    pen: Vec<f64>,
    mu: f64,
}

struct Run {
    theta: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    residual: f64,
    lipschitz: f64,
}

impl Engine<'_> {
    fn smooth(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (v, g) = self.risk.value_and_point_grad(&self.basis.eval(theta), self.mu);
        (v, pull_back(self.basis, &g))
    }

    fn smooth_value(&self, theta: &[f64]) -> f64 {
        self.risk.value(&self.basis.eval(theta), self.mu)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.pen).map(|(t, p)| p * t.abs()).sum()
    }

    fn prox_step(&self, y: &[f64], g: &[f64], lip: f64) -> Vec<f64> {
        y.iter()
            .zip(g)
            .zip(&self.pen)
            .map(|((yk, gk), p)| soft(yk - gk / lip, p / lip))
            .collect()
    }

    fn residual(&self, theta: &[f64], lip: f64) -> f64 {
        let (_, g) = self.smooth(theta);
        let z = self.prox_step(theta, &g, lip);
        theta
            .iter()
            .zip(&z)
            .map(|(a, b)| (lip * (a - b)).abs())
            .fold(0.0, f64::max)
    }

    fn mfista(&self, start: Vec<f64>, tol: f64, max_iter: usize, resid_tol: f64) -> Run {
        let mut lip = self.risk.lipschitz_estimate(self.basis, self.mu);
        let mut x = start;
        let mut obj_x = self.smooth_value(&x) + self.penalty(&x);
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut stall = 0;
        let mut residual = f64::INFINITY;
        for iter in 1..=max_iter {
            let (f_y, g_y) = self.smooth(&y);
            let mut trial = (lip * 0.5).max(1e-12);
            let (z, f_z) = loop {
                let z = self.prox_step(&y, &g_y, trial);
                let f_z = self.smooth_value(&z);
                let mut lin = 0.0;
                let mut sq = 0.0;
                for ((zk, yk), gk) in z.iter().zip(&y).zip(&g_y) {
                    let d = zk - yk;
                    lin += gk * d;
                    sq += d * d;
                }
                let slack = 8.0 * f64::EPSILON * (1.0 + f_y.abs());
                if f_z <= f_y + lin + 0.5 * trial * sq + slack || trial > 1e30 {
                    break (z, f_z);
                }
                trial *= 2.0;
            };
            lip = trial;
            let obj_z = f_z + self.penalty(&z);
            let prev = obj_x;
            if obj_z <= obj_x {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                y = z.iter().zip(&x).map(|(zk, xk)| zk + beta * (zk - xk)).collect();
                x = z;
                obj_x = obj_z;
                t = t_next;
            } else {
                // restart from the monotone iterate
                y = x.clone();
                t = 1.0;
            }
            if prev - obj_x <= tol * (1.0 + obj_x.abs()) {
                stall += 1;
            } else {
                stall = 0;
            }
            if stall >= STALL_WINDOW {
                residual = self.residual(&x, lip);
                if residual < resid_tol {
                    return Run {
                        theta: x,
                        objective: obj_x,
                        iterations: iter,
                        converged: true,
                        residual,
                        lipschitz: lip,
                    };
                }
            }
        }
        if !residual.is_finite() || stall < STALL_WINDOW {
            residual = self.residual(&x, lip);
        }
        Run {
            theta: x,
            objective: obj_x,
            iterations: max_iter,
            converged: false,
            residual,
            lipschitz: lip,
        }
    }
}

fn smoothing_schedule(final_mu: f64) -> Vec<f64> {
    let mut out = vec![];
    let mut mu = FIRST_MU;
    loop {
        out.push(mu.max(final_mu));
        if mu <= final_mu * (1.0 + 1e-9) || out.len() >= 12 {
            break;
        }
        mu *= 0.1;
    }
    out
}

fn minimize_from(
    risk: &RiskSum,
    basis: &BasisSystem,
    config: &FitConfig,
    start: Vec<f64>,
) -> FitResult {
    let pen = config.penalty_weights();
    if risk.kind().is_smooth() {
        let engine = Engine {
            basis,
            risk,
            pen,
            mu: 0.0,
        };
        let run = engine.mfista(start, config.tol, config.max_iter, SMOOTH_RESIDUAL);
        return FitResult {
            theta_hat: CoefVector::new(run.theta),
            objective: run.objective,
            iterations: run.iterations,
            converged: run.converged,
            stationarity: run.residual,
        };
    }

    let mut theta = start;
    let mut iterations = 0;
    let mut last = None;
    for mu in smoothing_schedule(config.smoothing_mu) {
        let engine = Engine {
            basis,
            risk,
            pen: pen.clone(),
            mu,
        };
        let run = engine.mfista(theta, config.tol, config.max_iter, SMOOTHED_RESIDUAL);
        iterations += run.iterations;
        theta = run.theta.clone();
        last = Some(run);
    }
    let last = last.expect("schedule is nonempty");

    let exact = Engine {
        basis,
        risk,
        pen,
        mu: 0.0,
    };
    let true_obj = |th: &[f64]| exact.smooth_value(th) + exact.penalty(th);
    let mut best = theta.clone();
    let mut best_obj = true_obj(&best);
    let mut current = theta;
    let mut avg = current.clone();
    let step0 = 1.0 / last.lipschitz.max(1.0);
    for k in 1..=POLISH_ITERS {
        let (_, g) = exact.smooth(&current);
        let step = step0 / (k as f64).sqrt();
        current = exact.prox_step(&current, &g, 1.0 / step);
        let w = 1.0 / (k as f64 + 1.0);
        for (a, c) in avg.iter_mut().zip(&current) {
            *a += w * (c - *a);
        }
        for cand in [&current, &avg] {
            let o = true_obj(cand);
            if o < best_obj {
                best_obj = o;
                best = cand.clone();
            }
        }
    }
    iterations += POLISH_ITERS;
    FitResult {
        theta_hat: CoefVector::new(best),
        objective: best_obj,
        iterations,
        converged: last.converged && last.residual < SMOOTHED_RESIDUAL,
        stationarity: last.residual,
    }
}

/// Minimizes `risk(f_theta) + lambda * sum_k sigma_k |theta_k|` from zero
/// (plus optional randomized restarts).
pub fn minimize(risk: &RiskSum, basis: &BasisSystem, config: &FitConfig) -> Result<FitResult> {
    config.validate(basis.m())?;
    let mut best = minimize_from(risk, basis, config, vec![0.0; basis.m()]);
    if config.restarts > 0 {
        let seed = config
            .seed
            .ok_or_else(|| Error::invalid("randomized restarts need a seed"))?;
        for r in 0..config.restarts {
            let mut stream = Stream::new(derive_seed(seed, r as u64));
            let start = (0..basis.m()).map(|_| 0.1 * stream.normal()).collect();
            let cand = minimize_from(risk, basis, config, start);
            if cand.objective < best.objective {
                best = FitResult {
                    iterations: best.iterations + cand.iterations,
                    ..cand
                };
            } else {
                best.iterations += cand.iterations;
            }
        }
    }
    Ok(best)
}

/// The penalized empirical risk minimizer.
pub fn fit(
    data: &Dataset,
    basis: &BasisSystem,
    model: &LossModel,
    config: &FitConfig,
) -> Result<FitResult> {
    let risk = RiskSum::empirical(data, basis, model)?;
    minimize(&risk, basis, config)
}

/// `P_n gamma_{f_theta} + lambda * sum_k sigma_k |theta_k|` (unsmoothed).
pub fn objective(
    theta: &CoefVector,
    data: &Dataset,
    basis: &BasisSystem,
    model: &LossModel,
    config: &FitConfig,
) -> Result<f64> {
    basis.check_len(theta.len())?;
    config.validate(basis.m())?;
    let risk = RiskSum::empirical(data, basis, model)?;
    let pen = config.penalty_weights();
    let penalty: f64 = theta.theta.iter().zip(&pen).map(|(t, p)| p * t.abs()).sum();
    Ok(risk.value(&basis.eval(&theta.theta), 0.0) + penalty)
}

/// Closed-form lasso for quadratic loss when the normalized empirical Gram
/// `(1/n) sum_i psi(X_i) psi(X_i)^T / (w_k w_l)` is the identity.
pub fn fit_orthogonal_quadratic(
    data: &Dataset,
    basis: &BasisSystem,
    lambda: f64,
    weights: &WeightProfile,
    unpenalized: &[usize],
) -> Result<CoefVector> {
    let m = basis.m();
    if weights.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: weights.len(),
        });
    }
    let y = data
        .y
        .as_ref()
        .ok_or_else(|| Error::TruthMissing("quadratic loss needs responses".into()))?;
    let n = data.n() as f64;
    let w = &weights.sigma;
    let mut gram = vec![0.0; m * m];
    let mut z = vec![0.0; m];
    for (&j, &yi) in data.x_idx.iter().zip(y) {
        let row = basis.row(j);
        for k in 0..m {
            z[k] += yi * row[k] / w[k];
            for l in 0..m {
                gram[k * m + l] += row[k] * row[l] / (w[k] * w[l]);
            }
        }
    }
    let mut deviation: f64 = 0.0;
    for k in 0..m {
        for l in 0..m {
            let target = if k == l { 1.0 } else { 0.0 };
            deviation = deviation.max((gram[k * m + l] / n - target).abs());
        }
    }
    if deviation > 1e-10 {
        return Err(Error::NotOrthogonal { deviation });
    }
    Ok(CoefVector::new(
        (0..m)
            .map(|k| {
                let zk = z[k] / n;
                let beta = if unpenalized.contains(&k) {
                    zk
                } else {
                    soft(zk, lambda)
                };
                beta / w[k]
            })
            .collect(),
    ))
}
