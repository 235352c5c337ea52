//! Simulation scenarios: a finite design, the response law and the loss.

use serde::{Deserialize, Serialize};

use crate::design::{BasisSystem, CoefVector, Dataset};
use crate::error::{Error, Result};
use crate::losses::{sigmoid, LossKind, LossModel, Truth};
use crate::rng::{cumulative, Stream};

pub const DEFAULT_ETA: f64 = 1.0;

fn default_eta() -> f64 {
    DEFAULT_ETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub basis: BasisSystem,
    pub truth: Truth,
    pub kind: LossKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<CoefVector>,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

impl Scenario {
    pub fn new(basis: BasisSystem, truth: Truth, kind: LossKind, n: usize) -> Result<Self> {
        let s = Self {
            basis,
            truth,
            kind,
            n,
            theta_true: None,
            eta: DEFAULT_ETA,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("scenario needs n >= 1"));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::invalid("eta must be nonnegative"));
        }
        if let Some(t) = &self.theta_true {
            self.basis.check_len(t.len())?;
        }
        self.model().map(|_| ())
    }

    pub fn model(&self) -> Result<LossModel> {
        LossModel::new(self.kind, &self.basis, &self.truth)
    }

    pub fn m(&self) -> usize {
        self.basis.m()
    }

    /// Logistic model with `pi = 1 / (1 + e^{-f_theta})`.
    pub fn logistic_realizable(basis: BasisSystem, theta: CoefVector, n: usize) -> Result<Self> {
        basis.check_len(theta.len())?;
        let pi = basis.eval(&theta.theta).into_iter().map(sigmoid).collect();
        let mut s = Self::new(basis, Truth::Binary { pi }, LossKind::Logistic, n)?;
        s.theta_true = Some(theta);
        Ok(s)
    }

    /// Gaussian regression with mean `f_theta`.
    pub fn quadratic_realizable(
        basis: BasisSystem,
        theta: CoefVector,
        noise_sd: f64,
        n: usize,
    ) -> Result<Self> {
        basis.check_len(theta.len())?;
        let fbar = basis.eval(&theta.theta);
        let mut s = Self::new(basis, Truth::Regression { fbar, noise_sd }, LossKind::Quadratic, n)?;
        s.theta_true = Some(theta);
        Ok(s)
    }

    /// Density model: the design law becomes `nu e^{f_theta - b(f_theta)}`.
    pub fn density_realizable(
        basis: BasisSystem,
        theta: CoefVector,
        nu: Vec<f64>,
        n: usize,
    ) -> Result<Self> {
        basis.check_len(theta.len())?;
        if nu.len() != basis.p() {
            return Err(Error::DimensionMismatch {
                expected: basis.p(),
                got: nu.len(),
            });
        }
        let f = basis.eval(&theta.theta);
        let b = crate::losses::log_partition(&nu, &f);
        let q: Vec<f64> = f.iter().zip(&nu).map(|(v, w)| w * (v - b).exp()).collect();
        let total: f64 = q.iter().sum();
        let q = q.into_iter().map(|x| x / total).collect();
        let basis = basis.with_probs(q)?;
        let mut s = Self::new(basis, Truth::Density { nu }, LossKind::Density, n)?;
        s.theta_true = Some(theta);
        Ok(s)
    }
}

/// Draws `n` i.i.d. observations. For each observation the design point is
/// drawn first, then the response from its conditional law.
pub fn generate(scenario: &Scenario, rep_seed: u64) -> Dataset {
    let mut stream = Stream::new(rep_seed);
    let cum = cumulative(scenario.basis.probs());
    let n = scenario.n;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let cond_cum: Vec<Vec<f64>> = match &scenario.truth {
        Truth::Discrete { probs, .. } => probs.iter().map(|p| cumulative(p)).collect(),
        _ => Vec::new(),
    };
    for _ in 0..n {
        let j = stream.categorical(&cum);
        x.push(j);
        match &scenario.truth {
            Truth::Binary { pi } => {
                let one = stream.uniform() < pi[j];
                let zero = if scenario.kind == LossKind::Hinge { -1.0 } else { 0.0 };
                y.push(if one { 1.0 } else { zero });
            }
            Truth::Regression { fbar, noise_sd } => y.push(fbar[j] + noise_sd * stream.normal()),
            Truth::Discrete { values, .. } => y.push(values[stream.categorical(&cond_cum[j])]),
            Truth::Density { .. } => {}
        }
    }
    let y = match scenario.truth {
        Truth::Density { .. } => None,
        _ => Some(y),
    };
    Dataset { x_idx: x, y }
}
