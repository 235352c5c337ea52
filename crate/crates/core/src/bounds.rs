//! Constants, oracle quantities and confidence levels of the oracle
//! inequalities for known weights, estimated weights and quadratic loss.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{theoretical_weights, CoefVector, SupportDimension, WeightProfile};
use crate::error::{Error, Result};
use crate::losses::{excess_risk, margin_fit, sup_deviation, MarginPair, Truth};
use crate::scenario::Scenario;
use crate::solver::{minimize, FitConfig, RiskSum};

/// Default cap on the number of support subproblems in [`oracle_search`].
pub const DEFAULT_SEARCH_CAP: u128 = 200_000;
/// Relative tolerance under which two oracle objectives count as tied.
pub const TIE_TOL: f64 = 1e-10;
/// Threshold of the rough sup-norm condition used with estimated weights.
pub const CONDITION_III_PRIME: f64 = 0.13;
/// Threshold of the corresponding condition for quadratic loss.
pub const QUADRATIC_K_THRESHOLD: f64 = 0.33;
/// Factor in the smoothing-parameter floor for estimated weights at `c1 = 3/2`.
pub const ESTIMATED_FLOOR_FACTOR: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremId {
    #[serde(rename = "2.1")]
    KnownDefault,
    #[serde(rename = "2.2")]
    EstimatedDefault,
    #[serde(rename = "3.1")]
    Quadratic,
    #[serde(rename = "A.4")]
    KnownGeneral,
    #[serde(rename = "A.5")]
    EstimatedGeneral,
}

impl TheoremId {
    pub fn as_str(&self) -> &'static str {
        match self {
            TheoremId::KnownDefault => "2.1",
            TheoremId::EstimatedDefault => "2.2",
            TheoremId::Quadratic => "3.1",
            TheoremId::KnownGeneral => "A.4",
            TheoremId::EstimatedGeneral => "A.5",
        }
    }

    pub fn mode(&self) -> BoundMode {
        match self {
            TheoremId::KnownDefault | TheoremId::KnownGeneral => BoundMode::KnownSigma,
            TheoremId::EstimatedDefault | TheoremId::EstimatedGeneral => BoundMode::EstimatedSigma,
            TheoremId::Quadratic => BoundMode::Quadratic,
        }
    }

    /// Constants used by the theorem: the fixed defaults for the named
    /// theorems, the supplied constants (in the right mode) for the general ones.
    pub fn constants(&self, supplied: &BoundConstants) -> BoundConstants {
        match self {
            TheoremId::KnownDefault => BoundConstants::known_default(),
            TheoremId::EstimatedDefault => BoundConstants::estimated_default(),
            TheoremId::Quadratic => BoundConstants::quadratic_default(),
            TheoremId::KnownGeneral | TheoremId::EstimatedGeneral => BoundConstants {
                mode: self.mode(),
                ..supplied.clone()
            },
        }
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TheoremId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "2.1" => TheoremId::KnownDefault,
            "2.2" => TheoremId::EstimatedDefault,
            "3.1" => TheoremId::Quadratic,
            "A.4" | "a.4" => TheoremId::KnownGeneral,
            "A.5" | "a.5" => TheoremId::EstimatedGeneral,
            other => return Err(Error::invalid(format!("unknown theorem id {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    KnownSigma,
    EstimatedSigma,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstantsDoc", into = "ConstantsDoc")]
pub struct BoundConstants {
    pub b: f64,
    pub delta: f64,
    pub d: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub c1: f64,
    pub c3: f64,
    pub mode: BoundMode,
    /// Use the rounded coefficient 5 in place of `4 c2` in the estimation
    /// error for estimated weights.
    pub paper_rounded: bool,
}

#[derive(Serialize, Deserialize)]
struct ConstantsDoc {
    b: f64,
    delta: f64,
    d: f64,
    delta1: f64,
    delta2: f64,
    c1: f64,
    #[serde(default, skip_deserializing)]
    c2: f64,
    #[serde(default = "one")]
    c3: f64,
    mode: BoundMode,
    #[serde(default)]
    paper_rounded: bool,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<ConstantsDoc> for BoundConstants {
    type Error = Error;

    fn try_from(d: ConstantsDoc) -> Result<Self> {
        let bc = BoundConstants {
            b: d.b,
            delta: d.delta,
            d: d.d,
            delta1: d.delta1,
            delta2: d.delta2,
            c1: d.c1,
            c3: d.c3,
            mode: d.mode,
            paper_rounded: d.paper_rounded,
        };
        bc.validate()?;
        Ok(bc)
    }
}

impl From<BoundConstants> for ConstantsDoc {
    fn from(bc: BoundConstants) -> Self {
        ConstantsDoc {
            c2: bc.c2(),
            b: bc.b,
            delta: bc.delta,
            d: bc.d,
            delta1: bc.delta1,
            delta2: bc.delta2,
            c1: bc.c1,
            c3: bc.c3,
            mode: bc.mode,
            paper_rounded: bc.paper_rounded,
        }
    }
}

impl BoundConstants {
    pub fn known_default() -> Self {
        Self {
            b: 1.0,
            delta: 0.5,
            d: 2.0,
            delta1: 0.5,
            delta2: 0.5,
            c1: 1.5,
            c3: 1.0,
            mode: BoundMode::KnownSigma,
            paper_rounded: false,
        }
    }

    pub fn estimated_default() -> Self {
        Self {
            mode: BoundMode::EstimatedSigma,
            ..Self::known_default()
        }
    }

    pub fn quadratic_default() -> Self {
        Self {
            mode: BoundMode::Quadratic,
            ..Self::known_default()
        }
    }

    pub fn c2(&self) -> f64 {
        c2_of(self.c1)
    }

    fn power_index(&self, x: f64) -> Option<i64> {
        let n = -x.ln() / (1.0 + self.b).ln();
        let r = n.round();
        if (n - r).abs() < 1e-9 && x > 0.0 && x <= 1.0 {
            Some(r as i64)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.b > 0.0) {
            return fail("b must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta must lie in (0, 1)");
        }
        if !(self.d > 1.0) {
            return fail("d must exceed 1");
        }
        match self.power_index(self.delta1) {
            Some(n) if n >= 1 => {}
            _ => return fail("delta1 must equal (1+b)^(-N1) for an integer N1 >= 1"),
        }
        match self.power_index(self.delta2) {
            Some(n) if n >= 0 => {}
            _ => return fail("delta2 must equal (1+b)^(-N2) for an integer N2 >= 0"),
        }
        if !(self.c1 > 1.0) {
            return fail("c1 must exceed 1");
        }
        if self.mode == BoundMode::EstimatedSigma && !(self.c1 < 1.0 + self.b) {
            return fail("estimated weights need 1 < c1 < 1 + b");
        }
        if !(self.c3 > 0.0) {
            return fail("c3 must be positive");
        }
        Ok(())
    }
}

pub fn c2_of(c1: f64) -> f64 {
    (2.0 * c1 * c1 - 1.0).sqrt() / c1
}

/// `(a_n, abar_n)` with `a_n = sqrt(2 log(2m)/n) + log(2m) K / n` and
/// `abar_n = 4 a_n`.
pub fn a_n(n: usize, m: usize, k: f64) -> (f64, f64) {
    let l = (2.0 * m as f64).ln() / n as f64;
    let a = (2.0 * l).sqrt() + l * k;
    (a, 4.0 * a)
}

/// The multiplier for the symmetrized process: `abar = 4 a`, or `a` itself
/// for losses that are linear in `f`.
pub fn abar_for(a: f64, linear_in_f: bool) -> f64 {
    if linear_in_f {
        a
    } else {
        4.0 * a
    }
}

/// `a (1 + t sqrt(2 (1 + 2 a K)) + 2 t^2 a K / 3)`.
pub fn lambda_n0(t: f64, a: f64, k: f64) -> f64 {
    a * (1.0 + t * (2.0 * (1.0 + 2.0 * a * k)).sqrt() + 2.0 * t * t * a * k / 3.0)
}

/// The nonnegative `t` with `lambda_n0(t, a, K) = target`.
pub fn invert_lambda(target: f64, a: f64, k: f64) -> Result<f64> {
    if !(target >= a) {
        return Err(Error::TargetBelowFloor { target, floor: a });
    }
    let qa = 2.0 * a * a * k / 3.0;
    let qb = a * (2.0 * (1.0 + 2.0 * a * k)).sqrt();
    let rhs = target - a;
    if qa == 0.0 {
        return Ok(rhs / qb);
    }
    // Rationalized root, free of cancellation for small qa.
    Ok(2.0 * rhs / (qb + (qb * qb + 4.0 * qa * rhs).sqrt()))
}

/// `s` with `K lambda_n0(s) = 1 - 1/c1^2`.
pub fn solve_s(c1: f64, n: usize, m: usize, k: f64) -> Result<f64> {
    let (a, _) = a_n(n, m, k);
    let target = 1.0 - 1.0 / (c1 * c1);
    if !(k > 0.0) || k * a > target {
        return Err(Error::NotSolvable(format!(
            "K a_n = {} exceeds 1 - 1/c1^2 = {target}",
            k * a
        )));
    }
    invert_lambda(target / k, a, k).map_err(|e| Error::NotSolvable(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub d_b: f64,
    pub d_small: f64,
    #[serde(rename = "Delta")]
    pub delta_cap: f64,
    pub term_count: u32,
}

pub fn derived_constants(bc: &BoundConstants) -> DerivedConstants {
    let (b, d, delta, d1, d2) = (bc.b, bc.d, bc.delta, bc.delta1, bc.delta2);
    let d_b = d * ((b + d) / ((d - 1.0) * b)).max(1.0);
    let d_small = 1.0 + ((1.0 + (d * d - 1.0) * d1) / ((d - 1.0) * (1.0 - d1))) * d2;
    let delta_cap = (d_small * (1.0 - delta * delta) / (delta * b)).max(1.0);
    let x = (1.0 + b).powi(2) * delta_cap / (d1 * d2);
    let term_count = (x.ln() / (1.0 + b).ln() - 1e-9).ceil().max(0.0) as u32;
    DerivedConstants {
        d_b,
        d_small,
        delta_cap,
        term_count,
    }
}

/// Multiplier `c` in `V = 2 delta H(2 c lambda sqrt(D) / delta)`.
pub fn v_multiplier(bc: &BoundConstants) -> f64 {
    match bc.mode {
        BoundMode::KnownSigma | BoundMode::Quadratic => 1.0,
        BoundMode::EstimatedSigma if bc.paper_rounded => 1.25,
        BoundMode::EstimatedSigma => bc.c2(),
    }
}

/// Estimation error of a support with dimension `d_value`.
pub fn v_from_d(d_value: f64, lambda_n: f64, margin: &MarginPair, bc: &BoundConstants) -> Result<f64> {
    if d_value == 0.0 {
        return Ok(2.0 * bc.delta * margin.h(0.0)?);
    }
    let arg = 2.0 * v_multiplier(bc) * lambda_n * d_value.sqrt() / bc.delta;
    Ok(2.0 * bc.delta * margin.h(arg)?)
}

pub fn v_theta(
    support: &[usize],
    lambda_n: f64,
    dims: &SupportDimension,
    margin: &MarginPair,
    bc: &BoundConstants,
) -> Result<f64> {
    v_from_d(dims.d(support), lambda_n, margin, bc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub theta_star: CoefVector,
    pub support: Vec<usize>,
    pub excess_star: f64,
    pub v_star: f64,
    pub eps_star: f64,
    pub zeta_star: f64,
    pub supports_examined: u128,
    /// True when no support larger than `s_max` can beat the returned one.
    pub exhaustive: bool,
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > m {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + m - k {
                break;
            }
            if i == 0 && idx[0] == m - k {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minimum of the exact excess risk over coefficient vectors supported on
/// `support`, and the minimizer.
pub fn best_on_support(scenario: &Scenario, support: &[usize]) -> Result<(CoefVector, f64)> {
    let model = scenario.model()?;
    let m = scenario.m();
    let mut theta = vec![0.0; m];
    if !support.is_empty() {
        let sub = scenario.basis.select_columns(support)?;
        let risk = RiskSum::population(&sub, &model, &scenario.truth)?;
        let res = minimize(&risk, &sub, &FitConfig::new(0.0, WeightProfile::unit(support.len())))?;
        for (&k, v) in support.iter().zip(res.theta_hat.theta) {
            theta[k] = v;
        }
    }
    let theta = CoefVector::new(theta);
    let e = excess_risk(&model, &theta, &scenario.basis, &scenario.truth)?;
    Ok((theta, e))
}

/// Minimizes `E(f_theta) + V_theta` over all supports of size at most
/// `s_max`. Ties (within [`TIE_TOL`]) go to the smaller support, then to
/// the lexicographically first.
pub fn oracle_search(
    scenario: &Scenario,
    lambda_n: f64,
    lambda_bar: f64,
    margin: &MarginPair,
    bc: &BoundConstants,
    s_max: usize,
    cap: u128,
) -> Result<OracleSolution> {
    let m = scenario.m();
    let s_max = s_max.min(m);
    let required: u128 = (0..=s_max).map(|k| binomial(m as u128, k as u128)).sum();
    if required > cap {
        return Err(Error::SearchBudgetExceeded { required, cap });
    }
    let dims = SupportDimension::new(&scenario.basis, None)?;
    let supports: Vec<Vec<usize>> = (0..=s_max).flat_map(|k| combinations(m, k)).collect();
    let evaluated: Vec<(f64, f64, f64, CoefVector, Vec<usize>)> = supports
        .into_par_iter()
        .map(|s| {
            let (theta, e) = best_on_support(scenario, &s)?;
            let v = v_theta(&s, lambda_n, &dims, margin, bc)?;
            Ok((e + v, e, v, theta, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, cand) in evaluated.iter().enumerate().skip(1) {
        let cur = evaluated[best].0;
        if cand.0 < cur - TIE_TOL * cur.abs().max(1.0) {
            best = i;
        }
    }
    let (obj, e, v, theta, support) = evaluated[best].clone();
    let exhaustive = if s_max >= m {
        true
    } else {
        // E >= 0 and V grows with the support size.
        let next: Vec<usize> = (0..=s_max).collect();
        v_theta(&next, lambda_n, &dims, margin, bc)? >= obj
    };
    let eps = (1.0 + bc.delta) * e + v;
    Ok(OracleSolution {
        theta_star: theta,
        support,
        excess_star: e,
        v_star: v,
        eps_star: eps,
        zeta_star: eps / lambda_bar,
        supports_examined: required,
        exhaustive,
    })
}

/// `exp(-n a^2 s^2)` (estimated modes) plus
/// `term_count * exp(-n abar^2 t^2)`, clamped to `[0, 1]`.
pub fn confidence_alpha(
    bc: &BoundConstants,
    n: usize,
    a: f64,
    abar: f64,
    s: Option<f64>,
    t: f64,
) -> f64 {
    let dc = derived_constants(bc);
    let nf = n as f64;
    let mut alpha = dc.term_count as f64 * (-nf * abar * abar * t * t).exp();
    if bc.mode != BoundMode::KnownSigma {
        let s = s.unwrap_or(0.0);
        alpha += (-nf * a * a * s * s).exp();
    }
    alpha.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionIII {
    /// `sqrt(log(2m)/n) K <= 0.13`.
    Prime,
    /// `sqrt(log(2m)/n) K <= x`.
    Threshold(f64),
    /// `2 sqrt(log(2m)/n) K <= (sqrt(6 c0^2 - 4) - sqrt(2 c0^2)) / c0`.
    C0(f64),
    /// `2 sqrt(log(2m)/n) K < (sqrt(6 c1^2 - 4) - sqrt(2 c1^2)) / (c1^2 c2)`.
    C1C2(f64),
}

fn root_ratio(n: usize, m: usize) -> f64 {
    ((2.0 * m as f64).ln() / n as f64).sqrt()
}

fn bousquet_gap(c: f64) -> f64 {
    (6.0 * c * c - 4.0).sqrt() - (2.0 * c * c).sqrt()
}

pub fn condition_iii(n: usize, m: usize, k: f64, variant: ConditionIII) -> bool {
    let x = root_ratio(n, m) * k;
    match variant {
        ConditionIII::Prime => x <= CONDITION_III_PRIME,
        ConditionIII::Threshold(th) => x <= th,
        ConditionIII::C0(c0) => 2.0 * x <= bousquet_gap(c0) / c0,
        ConditionIII::C1C2(c1) => 2.0 * x < bousquet_gap(c1) / (c1 * c1 * c2_of(c1)),
    }
}

/// Smallest `c0 > 1` for which the `C0` variant holds; `None` if no `c0`
/// works (the bound tends to `sqrt 6 - sqrt 2` as `c0` grows).
pub fn c0_min(n: usize, m: usize, k: f64) -> Option<f64> {
    let x = 2.0 * root_ratio(n, m) * k;
    let top = (x + 2f64.sqrt()).powi(2);
    if top >= 6.0 {
        None
    } else {
        Some((4.0 / (6.0 - top)).sqrt().max(1.0))
    }
}

/// The smoothing-parameter floor `4 sqrt(log(2m)/n) (sqrt 2 + g / 2)` with
/// `g = (sqrt(6c^2 - 4) - sqrt(2c^2)) / (c * scale)`.
pub fn lambda_floor(n: usize, m: usize, c: f64, scale: f64) -> f64 {
    4.0 * root_ratio(n, m) * (2f64.sqrt() + bousquet_gap(c) / (2.0 * c * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaHat {
    pub k_hat: f64,
    pub s_hat: f64,
    pub t_hat: f64,
    pub term_s: f64,
    pub term_t: f64,
    pub alpha_hat_upper: f64,
}

/// Data-based upper estimate of the confidence level for estimated weights.
pub fn estimated_alpha_upper(
    k_hat: f64,
    n: usize,
    m: usize,
    bc: &BoundConstants,
    lambda_bar: f64,
    linear_in_f: bool,
) -> Result<AlphaHat> {
    let c1 = bc.c1;
    let c2 = bc.c2();
    if !(2.0 * root_ratio(n, m) * k_hat < bousquet_gap(c1) / (c1 * c2)) {
        return Err(Error::NotSolvable(
            "estimated sup-norm ratio violates the solvability condition".into(),
        ));
    }
    let kk = c2 * k_hat;
    let (a_kk, _) = a_n(n, m, kk);
    let abar_kk = abar_for(a_kk, linear_in_f);
    let target = 1.0 - 1.0 / (c1 * c1);
    let s_hat = invert_lambda(target / kk, a_kk, kk).map_err(|e| Error::NotSolvable(e.to_string()))?;
    let t_hat =
        invert_lambda(lambda_bar, abar_kk, kk).map_err(|e| Error::NotSolvable(e.to_string()))?;
    let (a_low, _) = a_n(n, m, k_hat / c1);
    let abar_low = abar_for(a_low, linear_in_f);
    let nf = n as f64;
    let term_s = (-nf * a_low * a_low * s_hat * s_hat).exp();
    let term_t =
        derived_constants(bc).term_count as f64 * (-nf * abar_low * abar_low * t_hat * t_hat).exp();
    Ok(AlphaHat {
        k_hat,
        s_hat,
        t_hat,
        term_s,
        term_t,
        alpha_hat_upper: (term_s + term_t).clamp(0.0, 1.0),
    })
}

/// `c2 sqrt(2 log(2m)/n + 2 t^2 abar^2) + c3 lambda_bar`.
pub fn quadratic_tilde_lambda(
    t: f64,
    n: usize,
    m: usize,
    abar: f64,
    lambda_bar: f64,
    c2: f64,
    c3: f64,
) -> f64 {
    c2 * (2.0 * (2.0 * m as f64).ln() / n as f64 + 2.0 * t * t * abar * abar).sqrt() + c3 * lambda_bar
}

/// How the noise level is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    LambdaBar(f64),
    T(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub condition_i: bool,
    pub condition_ii_sufficient: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_iii: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_floor: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_at_most_half: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sup_radius: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_unit_noise: Option<bool>,
    pub t_exists: bool,
    pub s_exists: bool,
    pub oracle_exhaustive: bool,
}

impl ConditionFlags {
    pub fn all_hold(&self) -> bool {
        let opt = |x: Option<bool>| x.unwrap_or(true);
        self.condition_i
            && self.condition_ii_sufficient
            && opt(self.condition_iii)
            && opt(self.lambda_floor)
            && opt(self.eta_at_most_half)
            && opt(self.sup_radius)
            && opt(self.gaussian_unit_noise)
            && self.t_exists
            && self.s_exists
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCertificate {
    pub theorem_id: TheoremId,
    pub constants: BoundConstants,
    pub derived: DerivedConstants,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "K_m")]
    pub k_m: f64,
    pub a_n: f64,
    pub abar_n: f64,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub lambda_bar: f64,
    /// `lambda_tilde` replaces `lambda_bar` for quadratic loss.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_tilde: Option<f64>,
    pub lambda_n: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub eta: f64,
    pub theta_star: CoefVector,
    pub support_star: Vec<usize>,
    pub excess_star: f64,
    pub v_star: f64,
    pub eps_star: f64,
    pub zeta_star: f64,
    pub excess_bound: f64,
    pub l1_bound: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c0_min: Option<f64>,
    pub conditions: ConditionFlags,
    /// All conditions hold and `alpha < 1`.
    pub binding: bool,
}

/// Builds the certificate of `theorem` for `scenario`.
pub fn certify(
    theorem: TheoremId,
    scenario: &Scenario,
    supplied: &BoundConstants,
    lambda: LambdaChoice,
    s_max: usize,
    cap: u128,
) -> Result<OracleCertificate> {
    let bc = theorem.constants(supplied);
    bc.validate()?;
    scenario.validate()?;
    let model = scenario.model()?;
    let basis = &scenario.basis;
    let (n, m) = (scenario.n, scenario.m());
    let k_m = theoretical_weights(basis)?.k_ratio;
    let (a, _) = a_n(n, m, k_m);
    let abar = abar_for(a, model.linear_in_f);
    let dc = derived_constants(&bc);

    let (t, lambda_bar, t_exists) = match lambda {
        LambdaChoice::T(t) => {
            if !(t >= 0.0) {
                return Err(Error::invalid("t must be nonnegative"));
            }
            (t, lambda_n0(t, abar, k_m), true)
        }
        LambdaChoice::LambdaBar(lb) => match invert_lambda(lb, abar, k_m) {
            Ok(t) => (t, lb, true),
            Err(Error::TargetBelowFloor { .. }) => (0.0, lb, false),
            Err(e) => return Err(e),
        },
    };

    let s_result = match bc.mode {
        BoundMode::KnownSigma => None,
        _ => Some(solve_s(bc.c1, n, m, k_m)),
    };
    let s = s_result.as_ref().and_then(|r| r.as_ref().ok().copied());
    let s_exists = s_result.map_or(true, |r| r.is_ok());

    let (lambda_tilde, noise_level) = match bc.mode {
        BoundMode::Quadratic => (
            Some(quadratic_tilde_lambda(t, n, m, abar, lambda_bar, bc.c2(), bc.c3)),
            lambda_bar,
        ),
        _ => (None, lambda_bar),
    };
    let effective = lambda_tilde.unwrap_or(noise_level);
    let lambda_n = match bc.mode {
        BoundMode::EstimatedSigma => bc.c1 * (1.0 + bc.b) * effective,
        _ => (1.0 + bc.b) * effective,
    };

    let margin = match bc.mode {
        BoundMode::Quadratic => MarginPair::quadratic(1.0, scenario.eta),
        _ => margin_fit(&model, basis, scenario.eta)?,
    };
    let oracle = oracle_search(scenario, lambda_n, effective, &margin, &bc, s_max, cap)?;

    let star_dev = sup_deviation(&oracle.theta_star, basis, &model);
    let condition_i = star_dev <= scenario.eta;
    let radius = dc.d_b / bc.b;
    let condition_ii = crate::losses::condition_ii_sufficient(
        star_dev,
        oracle.zeta_star,
        k_m,
        scenario.eta,
        radius,
    );

    let mut flags = ConditionFlags {
        condition_i,
        condition_ii_sufficient: condition_ii,
        condition_iii: None,
        lambda_floor: None,
        eta_at_most_half: None,
        sup_radius: None,
        gaussian_unit_noise: None,
        t_exists,
        s_exists,
        oracle_exhaustive: oracle.exhaustive,
    };
    let mut c0_found = None;
    match theorem {
        TheoremId::EstimatedDefault => {
            flags.condition_iii = Some(condition_iii(n, m, k_m, ConditionIII::Prime));
            flags.lambda_floor = Some(lambda_bar > 4.0 * root_ratio(n, m) * ESTIMATED_FLOOR_FACTOR);
        }
        TheoremId::EstimatedGeneral => {
            c0_found = c0_min(n, m, k_m);
            let ok = c0_found.is_some_and(|c0| c0 < bc.c1);
            flags.condition_iii = Some(ok);
            flags.lambda_floor = Some(match c0_found {
                Some(c0) => lambda_bar > lambda_floor(n, m, c0, 1.0),
                None => false,
            });
        }
        TheoremId::Quadratic => {
            flags.condition_iii =
                Some(condition_iii(n, m, k_m, ConditionIII::Threshold(QUADRATIC_K_THRESHOLD)));
            flags.eta_at_most_half = Some(scenario.eta <= 0.5);
            flags.sup_radius = Some(radius * oracle.zeta_star * k_m + 2.0 * scenario.eta <= bc.c3);
            flags.gaussian_unit_noise = Some(matches!(
                scenario.truth,
                Truth::Regression { noise_sd, .. } if noise_sd == 1.0
            ));
        }
        TheoremId::KnownDefault | TheoremId::KnownGeneral => {}
    }

    let alpha = if t_exists && s_exists {
        confidence_alpha(&bc, n, a, abar, s, t)
    } else {
        1.0
    };
    let binding = flags.all_hold() && alpha < 1.0;
    Ok(OracleCertificate {
        theorem_id: theorem,
        derived: dc,
        n,
        m,
        k_m,
        a_n: a,
        abar_n: abar,
        t,
        s,
        lambda_bar,
        lambda_tilde,
        lambda_n,
        c0: margin.c0,
        eta: scenario.eta,
        excess_bound: oracle.eps_star / (1.0 - bc.delta),
        l1_bound: dc.d_small * oracle.zeta_star / bc.b,
        theta_star: oracle.theta_star,
        support_star: oracle.support,
        excess_star: oracle.excess_star,
        v_star: oracle.v_star,
        eps_star: oracle.eps_star,
        zeta_star: oracle.zeta_star,
        alpha,
        c0_min: c0_found,
        conditions: flags,
        binding,
        constants: bc,
    })
}

/// The same constants in exact rational arithmetic.
pub mod exact {
    use num_rational::Ratio;
    use num_traits::{One, Zero};

    pub type Q = Ratio<i128>;

    pub fn q(n: i128, d: i128) -> Q {
        Ratio::new(n, d)
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct ExactDerived {
        pub d_b: Q,
        pub d_small: Q,
        pub delta_cap: Q,
        pub term_count: u32,
    }

    pub fn derived(b: Q, d: Q, delta: Q, delta1: Q, delta2: Q) -> ExactDerived {
        let one = Q::one();
        let ratio = (b + d) / ((d - one) * b);
        let d_b = d * if ratio > one { ratio } else { one };
        let d_small = one + ((one + (d * d - one) * delta1) / ((d - one) * (one - delta1))) * delta2;
        let raw = d_small * (one - delta * delta) / (delta * b);
        let delta_cap = if raw > one { raw } else { one };
        let target = (one + b) * (one + b) * delta_cap / (delta1 * delta2);
        let mut power = one;
        let mut term_count = 0;
        while power < target {
            power *= one + b;
            term_count += 1;
        }
        ExactDerived {
            d_b,
            d_small,
            delta_cap,
            term_count,
        }
    }

    /// `lambda_n / lambda_bar`: `1 + b`, or `c1 (1 + b)` with estimated weights.
    pub fn lambda_multiplier(b: Q, c1: Option<Q>) -> Q {
        c1.unwrap_or_else(Q::one) * (Q::one() + b)
    }

    /// `(outer, inner^2)` with `V = outer * H(inner * lambda_n sqrt(D))`;
    /// `c2_sq` is `c2^2` (1 for known weights).
    pub fn v_coefficients(delta: Q, c2_sq: Q) -> (Q, Q) {
        let two = Q::from_integer(2);
        (two * delta, two * two * c2_sq / (delta * delta))
    }

    pub fn c2_squared(c1: Q) -> Q {
        (Q::from_integer(2) * c1 * c1 - Q::one()) / (c1 * c1)
    }

    /// Coefficients `(x, y)` with `2 eps* = x E* + y V*`.
    pub fn twice_eps(delta: Q) -> (Q, Q) {
        let two = Q::from_integer(2);
        (two * (Q::one() + delta), two)
    }

    pub fn s_target(c1: Q) -> Q {
        Q::one() - Q::one() / (c1 * c1)
    }

    /// `d_small / b`, the multiplier of `zeta*` in the l1 bound.
    pub fn l1_multiplier(d_small: Q, b: Q) -> Q {
        if b.is_zero() {
            panic!("b must be positive");
        }
        d_small / b
    }

    /// `1 / (1 - delta)`, the multiplier of `eps*` in the excess-risk bound.
    pub fn excess_multiplier(delta: Q) -> Q {
        Q::one() / (Q::one() - delta)
    }
}

#[cfg(test)]
mod tests {
    use super::exact::q;
    use super::*;
    use crate::design::BasisSystem;
    use crate::losses::{LossKind, NumericG};

    #[test]
    fn a_n_cases() {
        let (a, abar) = a_n(1000, 100, 2.0);
        assert!((a - 0.113_536_591_664_775_8).abs() < 1e-15);
        assert!((abar - 0.454_146_366_659_103_1).abs() < 1e-14);
        assert_eq!(abar / a, 4.0);
        let (a0, _) = a_n(1000, 100, 0.0);
        assert_eq!(a0, (2.0 * 200f64.ln() / 1000.0).sqrt());
        assert_eq!(abar_for(0.3, true), 0.3);
    }

    #[test]
    fn lambda_n0_cases() {
        assert_eq!(lambda_n0(0.0, 0.2, 3.0), 0.2);
        let v = lambda_n0(1.0, 0.113_536, 2.0);
        assert!((v - 0.324_344_158_098_359_1).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 0..50 {
            let x = lambda_n0(i as f64 * 0.1, 0.1, 2.0);
            assert!(x > prev);
            prev = x;
        }
    }

    #[test]
    fn invert_lambda_cases() {
        assert_eq!(invert_lambda(0.3, 0.3, 2.0).unwrap(), 0.0);
        for i in 1..=50 {
            let t = i as f64 * 0.1;
            let back = invert_lambda(lambda_n0(t, 0.113_536, 2.0), 0.113_536, 2.0).unwrap();
            assert!((back - t).abs() < 1e-10);
            assert!(((lambda_n0(back, 0.113_536, 2.0) / lambda_n0(t, 0.113_536, 2.0)) - 1.0).abs() < 1e-12);
        }
        let a = 0.2;
        let t = invert_lambda(0.5, a, 0.0).unwrap();
        assert!((t - (0.5 / a - 1.0) / 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            invert_lambda(0.1, 0.2, 1.0),
            Err(Error::TargetBelowFloor { .. })
        ));
    }

    #[test]
    fn solve_s_cases() {
        let s = solve_s(1.5, 500, 20, 1.0).unwrap();
        let (a, _) = a_n(500, 20, 1.0);
        assert!((lambda_n0(s, a, 1.0) - 5.0 / 9.0).abs() < 1e-12);
        assert!(matches!(solve_s(1.5, 10, 1000, 3.0), Err(Error::NotSolvable(_))));
    }

    #[test]
    fn derived_default_constants() {
        let dc = derived_constants(&BoundConstants::known_default());
        assert!((dc.d_b - 6.0).abs() < 1e-15);
        assert!((dc.d_small - 3.5).abs() < 1e-15);
        assert!((dc.delta_cap - 5.25).abs() < 1e-15);
        assert_eq!(dc.term_count, 7);
    }

    #[test]
    fn validation() {
        let mut bc = BoundConstants::known_default();
        bc.delta1 = 0.3;
        assert!(bc.validate().is_err());
        let mut bc = BoundConstants::estimated_default();
        bc.c1 = 2.5;
        assert!(bc.validate().is_err());
        let mut bc = BoundConstants::known_default();
        bc.b = 2.0;
        bc.delta1 = 1.0 / 9.0;
        bc.delta2 = 1.0;
        assert!(bc.validate().is_ok());
        let json = serde_json::to_value(BoundConstants::estimated_default()).unwrap();
        assert!((json["c2"].as_f64().unwrap() - 1.247_219_128_924_647).abs() < 1e-15);
        let back: BoundConstants = serde_json::from_value(json).unwrap();
        assert_eq!(back, BoundConstants::estimated_default());
    }

    #[test]
    fn v_theta_cases() {
        let basis = BasisSystem::hadamard(4).unwrap();
        let dims = SupportDimension::new(&basis, None).unwrap();
        let margin = MarginPair::quadratic(1.0, 1.0);
        let known = BoundConstants::known_default();
        assert_eq!(v_theta(&[], 0.3, &dims, &margin, &known).unwrap(), 0.0);
        let lam = 0.3;
        let v = v_theta(&[0, 2], lam, &dims, &margin, &known).unwrap();
        assert!((v - 8.0 * lam * lam * 2.0).abs() < 1e-14);
        let est = BoundConstants::estimated_default();
        let v = v_theta(&[1], lam, &dims, &margin, &est).unwrap();
        let h = |x: f64| x * x / 2.0;
        assert!((v - h(4.0 * c2_of(1.5) * lam)).abs() < 1e-14);
        assert!((4.0 * c2_of(1.5) - 4.988_876_515_698_589).abs() < 1e-14);
        let rounded = BoundConstants {
            paper_rounded: true,
            ..est
        };
        let v = v_theta(&[1], lam, &dims, &margin, &rounded).unwrap();
        assert!((v - h(5.0 * lam)).abs() < 1e-14);

        let numeric = MarginPair {
            numeric_g: Some(NumericG::from_fn(|u| u * u / 2.0, 100.0)),
            ..margin.clone()
        };
        let a = v_theta(&[0, 1, 2], lam, &dims, &numeric, &known).unwrap();
        let b = v_theta(&[0, 1, 2], lam, &dims, &margin, &known).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn alpha_cases() {
        let bc = BoundConstants::known_default();
        assert_eq!(confidence_alpha(&bc, 100, 0.2, 0.8, None, 0.0), 1.0);
        let a = confidence_alpha(&bc, 100, 0.2, 0.8, None, 0.5);
        assert!((a - 7.0 * (-100.0f64 * 0.64 * 0.25).exp()).abs() < 1e-15);
        assert!(confidence_alpha(&bc, 100, 0.2, 0.8, None, 50.0) < 1e-300);
        let est = BoundConstants::estimated_default();
        let mut prev = 1.0;
        for i in 1..20 {
            let x = i as f64 * 0.2;
            let al = confidence_alpha(&est, 100, 0.2, 0.8, Some(x), x);
            assert!(al <= prev && (0.0..=1.0).contains(&al));
            prev = al;
        }
    }

    #[test]
    fn condition_iii_cases() {
        for v in [
            ConditionIII::Prime,
            ConditionIII::Threshold(0.33),
            ConditionIII::C0(1.5),
            ConditionIII::C1C2(1.5),
        ] {
            assert!(condition_iii(100, 10, 1e-9, v));
        }
        // sqrt(log(2m)/n) K = 0.13 exactly with K = 0.13 / sqrt(log(2m)/n)
        let (n, m) = (400, 10);
        let k = 0.13 / root_ratio(n, m);
        let x = root_ratio(n, m) * k;
        assert_eq!(x <= 0.13, condition_iii(n, m, k, ConditionIII::Prime));
        let big = 1e9;
        let limit = bousquet_gap(big) / big / 2.0;
        assert!((limit - (6f64.sqrt() - 2f64.sqrt()) / 2.0).abs() < 1e-8);
    }

    #[test]
    fn c0_min_is_tight() {
        let (n, m, k) = (500, 20, 1.0);
        let c0 = c0_min(n, m, k).unwrap();
        assert!(condition_iii(n, m, k, ConditionIII::C0(c0 * (1.0 + 1e-9))));
        assert!(!condition_iii(n, m, k, ConditionIII::C0(c0 * (1.0 - 1e-6))));
        // With c0 at its minimum, the floor reduces to abar_n.
        let floor = lambda_floor(n, m, c0, 1.0);
        assert!((floor - a_n(n, m, k).1).abs() < 1e-12);
        assert!(c0_min(5, 1000, 10.0).is_none());
    }

    #[test]
    fn estimated_floor_factor() {
        let g = lambda_floor(1, 1, 1.5, 1.5 * c2_of(1.5)) / (4.0 * root_ratio(1, 1));
        assert!((g - 1.585_418_736_729_144).abs() < 1e-12);
        assert!(g < ESTIMATED_FLOOR_FACTOR);
    }

    #[test]
    fn alpha_hat_behaviour() {
        let bc = BoundConstants::estimated_default();
        let (n, m) = (2000, 20);
        let lb = 0.6;
        let mut prev = 0.0;
        for i in 0..20 {
            let k_hat = 1.0 + i as f64 * 0.05;
            let ah = estimated_alpha_upper(k_hat, n, m, &bc, lb, false).unwrap();
            assert!(ah.alpha_hat_upper >= prev);
            prev = ah.alpha_hat_upper;
            let kk = bc.c2() * k_hat;
            let (a, _) = a_n(n, m, kk);
            let rhs = kk * lambda_n0(ah.s_hat, a, kk);
            assert!((rhs - (1.0 - 1.0 / 2.25)).abs() < 1e-10);
        }
        // As c1 -> 1 the t-part collapses onto the known-weight term.
        let k = 1.0;
        let near = BoundConstants {
            c1: 1.0 + 1e-7,
            ..BoundConstants::estimated_default()
        };
        let (_, abar) = a_n(n, m, k);
        let t = invert_lambda(lb, abar, k).unwrap();
        let kk = near.c2() * k;
        let (a_kk, _) = a_n(n, m, kk);
        let t_hat = invert_lambda(lb, 4.0 * a_kk, kk).unwrap();
        assert!((t_hat - t).abs() < 1e-6);
    }

    #[test]
    fn tilde_lambda() {
        let c2 = c2_of(1.5);
        assert!((c2 - (14.0f64 / 9.0).sqrt()).abs() < 1e-15);
        assert!((c2 - 1.247_219_128_924_647).abs() < 1e-15);
        let (n, m, abar, lb) = (500, 20, 0.5, 0.7);
        let l0 = quadratic_tilde_lambda(0.0, n, m, abar, lb, c2, 1.0);
        assert!((l0 - (c2 * (2.0 * 40f64.ln() / 500.0).sqrt() + lb)).abs() < 1e-15);
        let t = 1e6;
        let slope = (quadratic_tilde_lambda(t, n, m, abar, lb, c2, 1.0) - lb) / t;
        assert!((slope - c2 * 2f64.sqrt() * abar).abs() < 1e-6);
    }

    #[test]
    fn exact_constants() {
        let half = q(1, 2);
        let one = q(1, 1);
        let dc = exact::derived(one, q(2, 1), half, half, half);
        assert_eq!(dc.d_b, q(6, 1));
        assert_eq!(dc.d_small, q(7, 2));
        assert_eq!(dc.delta_cap, q(21, 4));
        assert_eq!(dc.term_count, 7);
        assert_eq!(exact::lambda_multiplier(one, None), q(2, 1));
        assert_eq!(exact::lambda_multiplier(one, Some(q(3, 2))), q(3, 1));
        assert_eq!(exact::v_coefficients(half, one), (one, q(16, 1)));
        assert_eq!(exact::c2_squared(q(3, 2)), q(14, 9));
        assert_eq!(exact::twice_eps(half), (q(3, 1), q(2, 1)));
        assert_eq!(exact::s_target(q(3, 2)), q(5, 9));
        assert_eq!(exact::l1_multiplier(dc.d_small, one), q(7, 2));
        assert_eq!(exact::excess_multiplier(half), q(2, 1));
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        assert_eq!(combinations(4, 2), vec![
            vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]
        ]);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(binomial(20, 3), 1140);
    }

    fn two_feature_quadratic(theta1: f64) -> Scenario {
        let basis = BasisSystem::hadamard(2).unwrap();
        Scenario::quadratic_realizable(basis, CoefVector::new(vec![theta1, 0.0]), 1.0, 100).unwrap()
    }

    #[test]
    fn oracle_search_cases() {
        let s = two_feature_quadratic(0.6);
        let margin = MarginPair::quadratic(1.0, 1.0);
        let bc = BoundConstants::known_default();
        let sol = oracle_search(&s, 0.0, 1.0, &margin, &bc, 2, DEFAULT_SEARCH_CAP).unwrap();
        assert_eq!(sol.support, vec![0]);
        assert!((sol.theta_star.theta[0] - 0.6).abs() < 1e-8);
        assert!(sol.excess_star < 1e-15 && sol.v_star == 0.0);

        let big = oracle_search(&s, 10.0, 1.0, &margin, &bc, 2, DEFAULT_SEARCH_CAP).unwrap();
        assert!(big.support.is_empty());
        assert!((big.eps_star - 1.5 * 0.5 * 0.36).abs() < 1e-12);

        // Brute force over the four supports with the closed forms
        // E_S = (1/2) sum_{k not in S} theta_k^2 and V_S = 8 lambda^2 |S|.
        for lam in [0.05, 0.1, 0.15, 0.2, 0.25] {
            let sol = oracle_search(&s, lam, 1.0, &margin, &bc, 2, DEFAULT_SEARCH_CAP).unwrap();
            let costs = [
                (vec![], 0.5 * 0.36),
                (vec![0], 8.0 * lam * lam),
                (vec![1], 0.5 * 0.36 + 8.0 * lam * lam),
                (vec![0, 1], 16.0 * lam * lam),
            ];
            let best = costs
                .iter()
                .fold(&costs[0], |acc, c| if c.1 < acc.1 - 1e-12 { c } else { acc });
            assert_eq!(sol.support, best.0, "lambda {lam}");
        }

        assert!(matches!(
            oracle_search(&s, 0.1, 1.0, &margin, &bc, 2, 2),
            Err(Error::SearchBudgetExceeded { required: 4, cap: 2 })
        ));
    }

    #[test]
    fn certificate_defaults() {
        let basis = BasisSystem::hadamard(5).unwrap();
        let s = Scenario::logistic_realizable(basis, CoefVector::new(vec![0.5, 0.0, -0.4, 0.0, 0.0]), 500)
            .unwrap()
            .with_eta(3.0);
        let known = certify(
            TheoremId::KnownDefault,
            &s,
            &BoundConstants::known_default(),
            LambdaChoice::T(0.25),
            2,
            DEFAULT_SEARCH_CAP,
        )
        .unwrap();
        assert!((known.lambda_n - 2.0 * known.lambda_bar).abs() < 1e-15);
        assert!((2.0 * known.eps_star - 3.0 * known.excess_star - 2.0 * known.v_star).abs() < 1e-12);
        assert!((known.excess_bound - 2.0 * known.eps_star).abs() < 1e-15);
        assert!((known.l1_bound - 3.5 * known.zeta_star).abs() < 1e-15);
        let alpha = 7.0 * (-500.0 * known.abar_n.powi(2) * 0.25f64.powi(2)).exp();
        assert!((known.alpha - alpha.min(1.0)).abs() < 1e-15);

        let est = certify(
            TheoremId::EstimatedDefault,
            &s,
            &BoundConstants::known_default(),
            LambdaChoice::LambdaBar(known.lambda_bar),
            2,
            DEFAULT_SEARCH_CAP,
        )
        .unwrap();
        assert!((est.lambda_n - 3.0 * est.lambda_bar).abs() < 1e-15);
        assert!((est.t - 0.25).abs() < 1e-12);
        let (a, _) = a_n(500, 5, est.k_m);
        assert!((est.k_m * lambda_n0(est.s.unwrap(), a, est.k_m) - 5.0 / 9.0).abs() < 1e-12);
        assert!(est.conditions.condition_iii.is_some());

        let too_small = certify(
            TheoremId::KnownDefault,
            &s,
            &BoundConstants::known_default(),
            LambdaChoice::LambdaBar(1e-3),
            1,
            DEFAULT_SEARCH_CAP,
        )
        .unwrap();
        assert!(!too_small.conditions.t_exists && too_small.alpha == 1.0 && !too_small.binding);
    }

    #[test]
    fn realizable_noise_free_certificate() {
        let basis = BasisSystem::hadamard(3).unwrap();
        let s = Scenario::quadratic_realizable(basis, CoefVector::new(vec![0.05, 0.0, 0.0]), 0.0, 400)
            .unwrap()
            .with_eta(0.2);
        let cert = certify(
            TheoremId::Quadratic,
            &s,
            &BoundConstants::known_default(),
            LambdaChoice::T(0.5),
            3,
            DEFAULT_SEARCH_CAP,
        )
        .unwrap();
        assert!(cert.excess_bound > 0.0 && cert.l1_bound > 0.0);
        if cert.excess_star == 0.0 {
            assert_eq!(cert.eps_star, cert.v_star);
        }
        assert_eq!(cert.conditions.gaussian_unit_noise, Some(false));
        assert!(cert.lambda_tilde.unwrap() > cert.lambda_bar);
    }

    #[test]
    fn hinge_has_no_certificate() {
        let basis = BasisSystem::hadamard(3).unwrap();
        let truth = Truth::Binary { pi: vec![0.7; 4] };
        let s = Scenario::new(basis, truth, LossKind::Hinge, 100).unwrap();
        assert!(matches!(
            certify(
                TheoremId::KnownDefault,
                &s,
                &BoundConstants::known_default(),
                LambdaChoice::T(1.0),
                1,
                DEFAULT_SEARCH_CAP
            ),
            Err(Error::MarginUnsupported(_))
        ));
    }

    #[test]
    fn theorem_ids_round_trip() {
        for id in ["2.1", "2.2", "3.1", "A.4", "A.5"] {
            let t: TheoremId = id.parse().unwrap();
            assert_eq!(t.as_str(), id);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{id}\""));
        }
        assert!("4.2".parse::<TheoremId>().is_err());
    }
}
