//! End-to-end runs: certificate, replicated fits, and the written artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{certify, BoundConstants, BoundMode, LambdaChoice, OracleCertificate, TheoremId, DEFAULT_SEARCH_CAP};
use crate::design::{empirical_weights, l1_norm, theoretical_weights, BasisSystem, CoefVector};
use crate::error::{Error, Result};
use crate::lab::{pairwise_sum, wilson_interval, WILSON_Z};
use crate::losses::excess_risk;
use crate::rng::derive_seed;
use crate::scenario::{generate, Scenario};
use crate::solver::{fit, FitConfig};

pub const DEFAULT_S_MAX: usize = 3;

fn default_theorem() -> TheoremId {
    TheoremId::KnownDefault
}

fn default_constants() -> BoundConstants {
    BoundConstants::known_default()
}

fn default_s_max() -> usize {
    DEFAULT_S_MAX
}

fn default_cap() -> u128 {
    DEFAULT_SEARCH_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default = "default_constants")]
    pub constants: BoundConstants,
    #[serde(default = "default_theorem")]
    pub theorem: TheoremId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_s_max")]
    pub s_max: usize,
    #[serde(default = "default_cap")]
    pub search_cap: u128,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        self.lambda_choice()?;
        self.constants.validate()?;
        self.scenario.validate()
    }

    pub fn lambda_choice(&self) -> Result<LambdaChoice> {
        match (self.lambda_bar, self.t) {
            (Some(l), None) => Ok(LambdaChoice::LambdaBar(l)),
            (None, Some(t)) => Ok(LambdaChoice::T(t)),
            _ => Err(Error::invalid("give exactly one of lambda_bar and t")),
        }
    }

    pub fn certificate(&self) -> Result<OracleCertificate> {
        certify(
            self.theorem,
            &self.scenario,
            &self.constants,
            self.lambda_choice()?,
            self.s_max,
            self.search_cap,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub rep_index: usize,
    pub rep_seed: u64,
    pub theta_hat: Option<CoefVector>,
    pub excess_risk: f64,
    pub l1_dist_to_oracle: f64,
    pub pass_excess: bool,
    pub pass_l1: bool,
    /// Whether the empirical weights fell in `[sigma / c1, c2 sigma]`
    /// (estimated-weight mode only).
    pub omega: Option<bool>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub stationarity: f64,
    pub error: Option<String>,
}

impl TrialRecord {
    fn failed(rep_index: usize, rep_seed: u64, omega: Option<bool>, e: Error) -> Self {
        Self {
            rep_index,
            rep_seed,
            theta_hat: None,
            excess_risk: f64::NAN,
            l1_dist_to_oracle: f64::NAN,
            pass_excess: false,
            pass_l1: false,
            omega,
            converged: false,
            iterations: 0,
            objective: f64::NAN,
            stationarity: f64::NAN,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub certificate: OracleCertificate,
    pub records: Vec<TrialRecord>,
}

/// `sigma_k / c1 <= sigma_hat_k <= c2 sigma_k` for every `k`.
pub fn omega_holds(sigma: &[f64], sigma_hat: &[f64], c1: f64, c2: f64) -> bool {
    sigma
        .iter()
        .zip(sigma_hat)
        .all(|(s, h)| s / c1 <= *h && *h <= c2 * s)
}

fn one_trial(
    cfg: &RunConfig,
    cert: &OracleCertificate,
    sigma: &crate::design::WeightProfile,
    rep: usize,
) -> TrialRecord {
    let scenario = &cfg.scenario;
    let rep_seed = derive_seed(cfg.seed, rep as u64);
    let data = generate(scenario, rep_seed);
    let estimated = cert.constants.mode == BoundMode::EstimatedSigma;
    let (weights, omega) = if estimated {
        match empirical_weights(&data, &scenario.basis) {
            Ok(w) => {
                let c = &cert.constants;
                let om = omega_holds(&sigma.sigma, &w.sigma, c.c1, c.c2());
                (w, Some(om))
            }
            Err(e) => return TrialRecord::failed(rep, rep_seed, Some(false), e),
        }
    } else {
        (sigma.clone(), None)
    };
    let result = scenario.model().and_then(|model| {
        let fitted = fit(&data, &scenario.basis, &model, &FitConfig::new(cert.lambda_n, weights))?;
        let e = excess_risk(&model, &fitted.theta_hat, &scenario.basis, &scenario.truth)?;
        let dist = l1_norm(&fitted.theta_hat.sub(&cert.theta_star), sigma, &[])?;
        Ok((fitted, e, dist))
    });
    match result {
        Ok((fitted, e, dist)) => TrialRecord {
            rep_index: rep,
            rep_seed,
            excess_risk: e,
            l1_dist_to_oracle: dist,
            pass_excess: e <= cert.excess_bound,
            pass_l1: dist <= cert.l1_bound,
            omega,
            converged: fitted.converged,
            iterations: fitted.iterations,
            objective: fitted.objective,
            stationarity: fitted.stationarity,
            theta_hat: Some(fitted.theta_hat),
            error: None,
        },
        Err(e) => TrialRecord::failed(rep, rep_seed, omega, e),
    }
}

/// Computes the certificate once, then fits every replication with the
/// certified smoothing parameter. Replications run on the current rayon pool
/// and are returned in index order.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let certificate = cfg.certificate()?;
    let sigma = theoretical_weights(&cfg.scenario.basis)?;
    let records = (0..cfg.reps)
        .into_par_iter()
        .map(|r| one_trial(cfg, &certificate, &sigma, r))
        .collect();
    Ok(RunOutput { certificate, records })
}

/// [`run`] on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &RunConfig, threads: usize) -> Result<RunOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub successes: usize,
    pub rate: f64,
    pub wilson_lower: f64,
    pub wilson_upper: f64,
}

impl RateSummary {
    fn new(successes: usize, n: usize) -> Self {
        let (lo, hi) = wilson_interval(successes, n, WILSON_Z);
        Self {
            successes,
            rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            wilson_lower: lo,
            wilson_upper: hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub reps: usize,
    pub master_seed: Option<u64>,
    pub seed_rule: &'static str,
    pub rep_seeds: Vec<u64>,
    pub theorem_id: TheoremId,
    pub pass_excess: RateSummary,
    pub pass_l1: RateSummary,
    pub pass_both: RateSummary,
    pub guaranteed_rate: f64,
    /// The lower Wilson bound on the joint pass rate is at least `1 - alpha`,
    /// or the upper one is (a shortfall within Monte Carlo error).
    pub consistent_with_guarantee: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<RateSummary>,
    pub converged: usize,
    pub failed: usize,
    pub mean_excess_risk: f64,
    pub mean_l1_dist: f64,
    pub certificate: OracleCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
}

pub fn summarize(records: &[TrialRecord], cert: &OracleCertificate, cfg: Option<&RunConfig>) -> Summary {
    let n = records.len();
    let count = |f: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| f(r)).count();
    let both = RateSummary::new(count(&|r| r.pass_excess && r.pass_l1), n);
    let omega_records: Vec<bool> = records.iter().filter_map(|r| r.omega).collect();
    let finite_mean = |f: &dyn Fn(&TrialRecord) -> f64| {
        let v: Vec<f64> = records.iter().map(f).filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            0.0
        } else {
            pairwise_sum(&v) / v.len() as f64
        }
    };
    let guaranteed = 1.0 - cert.alpha;
    Summary {
        reps: n,
        master_seed: cfg.map(|c| c.seed),
        seed_rule: "rep_seed = derive_seed(master_seed, rep_index)",
        rep_seeds: records.iter().map(|r| r.rep_seed).collect(),
        theorem_id: cert.theorem_id,
        pass_excess: RateSummary::new(count(&|r| r.pass_excess), n),
        pass_l1: RateSummary::new(count(&|r| r.pass_l1), n),
        consistent_with_guarantee: both.wilson_upper >= guaranteed,
        pass_both: both,
        guaranteed_rate: guaranteed,
        omega: (!omega_records.is_empty())
            .then(|| RateSummary::new(omega_records.iter().filter(|&&o| o).count(), omega_records.len())),
        converged: count(&|r| r.converged),
        failed: count(&|r| r.error.is_some()),
        mean_excess_risk: finite_mean(&|r| r.excess_risk),
        mean_l1_dist: finite_mean(&|r| r.l1_dist_to_oracle),
        certificate: cert.clone(),
        config: cfg.cloned(),
    }
}

pub const CSV_COLUMNS: [&str; 14] = [
    "rep_index",
    "rep_seed",
    "excess_risk",
    "l1_dist_to_oracle",
    "pass_excess",
    "pass_l1",
    "omega",
    "converged",
    "iterations",
    "objective",
    "stationarity",
    "support_size",
    "theta_hat",
    "error",
];

/// Seventeen significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_row(r: &TrialRecord) -> Vec<String> {
    let theta = r.theta_hat.as_ref();
    vec![
        r.rep_index.to_string(),
        r.rep_seed.to_string(),
        fmt_f64(r.excess_risk),
        fmt_f64(r.l1_dist_to_oracle),
        r.pass_excess.to_string(),
        r.pass_l1.to_string(),
        r.omega.map_or(String::new(), |o| o.to_string()),
        r.converged.to_string(),
        r.iterations.to_string(),
        fmt_f64(r.objective),
        fmt_f64(r.stationarity),
        theta.map_or(String::new(), |t| t.support().len().to_string()),
        theta.map_or(String::new(), |t| {
            t.theta.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
        }),
        r.error.clone().unwrap_or_default(),
    ]
}

pub fn write_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush().map_err(io)
}

/// `(pass_excess, pass_l1)` flags read back from a results file.
pub fn read_pass_flags(path: &Path) -> Result<Vec<(bool, bool)>> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("missing column {name}")))
    };
    let (e, l) = (col("pass_excess")?, col("pass_l1")?);
    rd.records()
        .map(|rec| {
            let rec = rec?;
            Ok((&rec[e] == "true", &rec[l] == "true"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub results_csv: PathBuf,
    pub summary_json: PathBuf,
    pub plots_svg: PathBuf,
}

impl ReportPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            results_csv: dir.join("results.csv"),
            summary_json: dir.join("summary.json"),
            plots_svg: dir.join("plots.svg"),
        }
    }
}

/// Writes `results.csv`, `summary.json` and `plots.svg`.
pub fn report(
    records: &[TrialRecord],
    cert: &OracleCertificate,
    cfg: Option<&RunConfig>,
    paths: &ReportPaths,
) -> Result<Summary> {
    for p in [&paths.results_csv, &paths.summary_json, &paths.plots_svg] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
    }
    write_csv(records, &paths.results_csv)?;
    let summary = summarize(records, cert, cfg);
    let json = serde_json::to_string_pretty(&summary).map_err(|source| Error::Json {
        path: paths.summary_json.clone(),
        source,
    })?;
    let write = |p: &Path, s: &str| {
        fs::write(p, s).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    write(&paths.summary_json, &(json + "\n"))?;
    write(&paths.plots_svg, &plots_svg(records, cert))?;
    Ok(summary)
}

const BINS: usize = 20;
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 40.0;

/// One histogram panel with labelled vertical reference lines.
fn histogram_panel(out: &mut String, x0: f64, title: &str, values: &[f64], lines: &[(&str, f64, &str)]) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let mut hi = lines.iter().map(|l| l.1).fold(0.0, f64::max);
    hi = finite.iter().copied().fold(hi, f64::max);
    let lo = finite.iter().copied().fold(0.0, f64::min);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut counts = [0usize; BINS];
    for v in &finite {
        let b = (((v - lo) / span) * BINS as f64).floor() as usize;
        counts[b.min(BINS - 1)] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let (w, h) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let x = |v: f64| x0 + MARGIN + (v - lo) / span * w;
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" font-size="13" text-anchor="middle">{title}</text>"#,
        x0 + PANEL_W / 2.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{MARGIN:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##,
        x0 + MARGIN
    );
    let bw = w / BINS as f64;
    for (i, c) in counts.iter().enumerate() {
        if *c == 0 {
            continue;
        }
        let bh = *c as f64 / top * h;
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#7aa6d6"/>"##,
            x0 + MARGIN + i as f64 * bw,
            MARGIN + h - bh,
            bw,
            bh
        );
    }
    for (k, (label, v, colour)) in lines.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let xv = x(*v);
        let _ = writeln!(
            out,
            r#"<line x1="{xv:.2}" y1="{MARGIN:.1}" x2="{xv:.2}" y2="{:.1}" stroke="{colour}" stroke-width="2"/>"#,
            MARGIN + h
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{colour}">{label} = {v:.4e}</text>"#,
            x0 + MARGIN + 4.0,
            MARGIN + 12.0 + 12.0 * k as f64
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="10">{lo:.3e}</text>"#,
        x0 + MARGIN,
        PANEL_H - 22.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{hi:.3e}</text>"#,
        x0 + MARGIN + w,
        PANEL_H - 22.0
    );
}

/// Histograms of the excess risks and of the l1 distances to the oracle.
pub fn plots_svg(records: &[TrialRecord], cert: &OracleCertificate) -> String {
    let excess: Vec<f64> = records.iter().map(|r| r.excess_risk).collect();
    let dist: Vec<f64> = records.iter().map(|r| r.l1_dist_to_oracle).collect();
    let mean = |v: &[f64]| {
        let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
        if f.is_empty() {
            f64::NAN
        } else {
            pairwise_sum(&f) / f.len() as f64
        }
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{PANEL_H:.0}" font-family="sans-serif">"#,
        2.0 * PANEL_W
    );
    histogram_panel(
        &mut out,
        0.0,
        "excess risk",
        &excess,
        &[("bound", cert.excess_bound, "#c0392b"), ("mean", mean(&excess), "#27ae60")],
    );
    histogram_panel(
        &mut out,
        PANEL_W,
        "weighted l1 distance to the oracle",
        &dist,
        &[("bound", cert.l1_bound, "#c0392b"), ("mean", mean(&dist), "#27ae60")],
    );
    out.push_str("</svg>\n");
    out
}

/// Sparse logistic model on the +-1 design: three nonzero coefficients with
/// `|f| <= 2.1`, so every probability lies in `[0.1, 0.9]`.
pub fn canonical_logistic(n: usize, m: usize) -> Result<Scenario> {
    if m < 3 {
        return Err(Error::invalid("need m >= 3"));
    }
    let mut theta = vec![0.0; m];
    theta[0] = 1.0;
    theta[1] = -0.7;
    theta[2] = 0.4;
    Scenario::logistic_realizable(BasisSystem::hadamard(m)?, CoefVector::new(theta), n)
}

/// Orthonormal Gaussian regression with unit noise and three weak coefficients.
pub fn canonical_quadratic(n: usize, m: usize) -> Result<Scenario> {
    if m < 3 {
        return Err(Error::invalid("need m >= 3"));
    }
    let mut theta = vec![0.0; m];
    theta[0] = 0.05;
    theta[1] = -0.05;
    theta[2] = 0.05;
    Scenario::quadratic_realizable(BasisSystem::hadamard(m)?, CoefVector::new(theta), 1.0, n)
}
