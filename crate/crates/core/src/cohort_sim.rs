//! Synthetic longitudinal cohorts with one covariate and one binary
//! treatment recorded at two timepoints, plus a binary outcome.
//!
//! The structural equations are
//!
//! ```text
//! X0 ~ N(0, 1)
//! A0 ~ Bernoulli(expit(alpha0 + phi * X0))
//! X1 ~ N(X0 + gamma * A0, 1)
//! A1 ~ Bernoulli(theta_rct * A0)                               (RCT)
//!      Bernoulli(expit(alpha1 + phi * X1 + theta_obs * A0))    (observational)
//! Y  ~ Bernoulli(expit(alpha_y + bx0 X0 + bx1 X1 + ba0 A0 + ba1 A1))
//! ```
//!
//! Each variable draws its exogenous noise from its own RNG substream, so a
//! row is a deterministic function of ([`RowNoise`], parameters, policy).

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, substream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario `{scenario}`: {reason}")]
    InvalidConfig { scenario: String, reason: String },
    #[error("scenario `{scenario}`: intercept {which} has not been solved")]
    UnsolvedIntercept {
        scenario: String,
        which: &'static str,
    },
    #[error("intercept search for target {target} did not converge (reached {achieved} after {iterations} steps)")]
    InterceptNonConvergence {
        target: f64,
        achieved: f64,
        iterations: usize,
    },
    #[error("filter_nbt expects a TestMT cohort, got {0:?}")]
    WrongMode(GenerationMode),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Linear predictors are clamped to this magnitude before the inverse logit.
pub const LP_CLAMP: f64 = 36.0;

#[inline]
pub fn sim_expit(eta: f64) -> f64 {
    let z = eta.clamp(-LP_CLAMP, LP_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Rct,
    Observational,
}

/// Data-generating parameters of one simulation scenario.
///
/// `theta_rct` is a retention probability and only meaningful for RCT
/// scenarios; `theta_obs` is a log-odds coefficient and only meaningful for
/// observational ones. Intercepts are `None` until solved against the
/// prevalence targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    pub phi: f64,
    pub theta_rct: Option<f64>,
    pub theta_obs: Option<f64>,
    pub gamma: f64,
    pub alpha0: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha_y: Option<f64>,
    pub target_p_a0: f64,
    pub target_p_a1: f64,
    pub target_p_y: f64,
    pub beta_x0: f64,
    pub beta_x1: f64,
    pub beta_a0: f64,
    pub beta_a1: f64,
    pub n_dev: usize,
    pub n_test: usize,
}

pub const RCT_NAME: &str = "RCT: 10% dropout";
pub const OBS50_NAME: &str = "Observational: 50% treated";
pub const OBS20_NAME: &str = "Observational: 20% treated";

impl ScenarioConfig {
    fn base(name: &str, kind: ScenarioKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            phi: 0.0,
            theta_rct: None,
            theta_obs: None,
            gamma: 0.0,
            alpha0: None,
            alpha1: None,
            alpha_y: None,
            target_p_a0: 0.5,
            target_p_a1: 0.5,
            target_p_y: 0.2,
            beta_x0: 1.5f64.ln(),
            beta_x1: 1.5f64.ln(),
            beta_a0: 0.5f64.ln(),
            beta_a1: 0.5f64.ln(),
            n_dev: 10_000,
            n_test: 100_000,
        }
    }

    /// Randomised trial: half treated at baseline independent of X0, 10% of
    /// the treated stop by time 1, the untreated stay untreated.
    pub fn rct_dropout() -> Self {
        Self {
            theta_rct: Some(0.9),
            ..Self::base(RCT_NAME, ScenarioKind::Rct)
        }
    }

    /// Observational study with treatment prevalence `p_treated` at both
    /// timepoints, phi = theta = log 2.
    pub fn observational(name: &str, p_treated: f64) -> Self {
        Self {
            phi: 2f64.ln(),
            theta_obs: Some(2f64.ln()),
            target_p_a0: p_treated,
            target_p_a1: p_treated,
            ..Self::base(name, ScenarioKind::Observational)
        }
    }

    pub fn observational_50() -> Self {
        Self::observational(OBS50_NAME, 0.5)
    }

    pub fn observational_20() -> Self {
        Self::observational(OBS20_NAME, 0.2)
    }

    /// The three scenarios of the study in their canonical order.
    pub fn study_scenarios() -> Vec<Self> {
        vec![
            Self::rct_dropout(),
            Self::observational_50(),
            Self::observational_20(),
        ]
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    fn invalid(&self, reason: impl Into<String>) -> SimError {
        SimError::InvalidConfig {
            scenario: self.name.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScenarioKind::Rct => {
                let theta = self
                    .theta_rct
                    .ok_or_else(|| self.invalid("RCT scenario requires theta_rct"))?;
                if !(0.0..=1.0).contains(&theta) {
                    return Err(self.invalid(format!("theta_rct = {theta} outside [0, 1]")));
                }
                if self.theta_obs.is_some() {
                    return Err(self.invalid("theta_obs is not used by RCT scenarios"));
                }
            }
            ScenarioKind::Observational => {
                let theta = self
                    .theta_obs
                    .ok_or_else(|| self.invalid("observational scenario requires theta_obs"))?;
                if !theta.is_finite() {
                    return Err(self.invalid("theta_obs must be finite"));
                }
                if self.theta_rct.is_some() {
                    return Err(self.invalid("theta_rct is not used by observational scenarios"));
                }
            }
        }
        if !(self.gamma <= 0.0) {
            return Err(self.invalid(format!("gamma = {} must be <= 0", self.gamma)));
        }
        for (label, p) in [
            ("target_p_a0", self.target_p_a0),
            ("target_p_a1", self.target_p_a1),
            ("target_p_y", self.target_p_y),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(self.invalid(format!("{label} = {p} outside (0, 1)")));
            }
        }
        let finite = [
            self.phi,
            self.beta_x0,
            self.beta_x1,
            self.beta_a0,
            self.beta_a1,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(self.invalid("non-finite coefficient"));
        }
        for a in [self.alpha0, self.alpha1, self.alpha_y].into_iter().flatten() {
            if !a.is_finite() {
                return Err(self.invalid("non-finite intercept"));
            }
        }
        if self.n_dev == 0 || self.n_test == 0 {
            return Err(self.invalid("cohort sizes must be positive"));
        }
        Ok(())
    }

    /// True when every intercept the mechanism needs is set.
    pub fn intercepts_solved(&self) -> bool {
        self.alpha0.is_some()
            && self.alpha_y.is_some()
            && (self.kind == ScenarioKind::Rct || self.alpha1.is_some())
    }

    /// Fills every missing intercept so the marginal prevalences hit their
    /// targets. Intercepts already present are kept as given.
    pub fn solve_intercepts(&self, opts: &InterceptSolverOptions) -> Result<Self> {
        self.validate()?;
        let mut solved = self.clone();
        let n = opts.n_mc;

        if solved.alpha0.is_none() {
            let mut z = substream(opts.seed, 100);
            let phi = self.phi;
            let a0 = solve_intercept(
                self.target_p_a0,
                || phi * z.sample::<f64, _>(StandardNormal),
                n,
                opts.tol,
            )?;
            solved.alpha0 = Some(a0);
        }
        let alpha0 = solved.alpha0.unwrap();

        if self.kind == ScenarioKind::Observational && solved.alpha1.is_none() {
            let mut rng = substream(opts.seed, 101);
            let (phi, gamma, theta) = (self.phi, self.gamma, self.theta_obs.unwrap());
            let a1 = solve_intercept(
                self.target_p_a1,
                || {
                    let x0: f64 = rng.sample(StandardNormal);
                    let a0 = f64::from(u8::from(rng.random::<f64>() < sim_expit(alpha0 + phi * x0)));
                    let e: f64 = rng.sample(StandardNormal);
                    let x1 = x0 + gamma * a0 + e;
                    phi * x1 + theta * a0
                },
                n,
                opts.tol,
            )?;
            solved.alpha1 = Some(a1);
        }

        if solved.alpha_y.is_none() {
            // Only the non-intercept part of the outcome predictor is needed,
            // so borrow the mechanism with a placeholder outcome intercept.
            let mech = Mechanism::new(&ScenarioConfig {
                alpha_y: Some(0.0),
                ..solved.clone()
            })?;
            let mut streams = NoiseStreams::new(derive_seed(opts.seed, &[102]));
            let ay = solve_intercept(
                self.target_p_y,
                || {
                    let row = mech.realize(&streams.next(), TreatmentPolicy::Natural);
                    mech.outcome_predictor(&row) - mech.alpha_y
                },
                n,
                opts.tol,
            )?;
            solved.alpha_y = Some(ay);
        }
        Ok(solved)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptSolverOptions {
    pub n_mc: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for InterceptSolverOptions {
    fn default() -> Self {
        Self {
            n_mc: 1_000_000,
            tol: 0.002,
            seed: 0x1D7E_2C3A_55A1_0001,
        }
    }
}

/// Finds the intercept `alpha` for which the Monte Carlo mean of
/// `expit(alpha + L)` over `n_mc` draws of `L` equals `target_prob`.
///
/// The draws are taken once and the intercept is bisected on that fixed
/// sample, so the result is a deterministic function of the sampler.
pub fn solve_intercept<F: FnMut() -> f64>(
    target_prob: f64,
    mut linear_predictor_sampler: F,
    n_mc: usize,
    tol: f64,
) -> Result<f64> {
    if !(target_prob > 0.0 && target_prob < 1.0) {
        return Err(SimError::InvalidConfig {
            scenario: "<intercept solver>".into(),
            reason: format!("target probability {target_prob} outside (0, 1)"),
        });
    }
    let n_mc = n_mc.max(1);
    let draws: Vec<f64> = (0..n_mc).map(|_| linear_predictor_sampler()).collect();
    let first = draws[0];
    if draws.iter().all(|&l| l == first) {
        return Ok(crate::logistic::logit(target_prob) - first);
    }
    let mean_prob = |alpha: f64| draws.iter().map(|&l| sim_expit(alpha + l)).sum::<f64>() / n_mc as f64;

    const LIMIT: f64 = 64.0;
    const MAX_STEPS: usize = 200;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut steps = 0;
    while mean_prob(lo) > target_prob {
        lo *= 2.0;
        steps += 1;
        if lo < -LIMIT {
            return Err(SimError::InterceptNonConvergence {
                target: target_prob,
                achieved: mean_prob(lo),
                iterations: steps,
            });
        }
    }
    while mean_prob(hi) < target_prob {
        hi *= 2.0;
        steps += 1;
        if hi > LIMIT {
            return Err(SimError::InterceptNonConvergence {
                target: target_prob,
                achieved: mean_prob(hi),
                iterations: steps,
            });
        }
    }
    while hi - lo > 1e-10 && steps < MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target_prob {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    let alpha = 0.5 * (lo + hi);
    let achieved = mean_prob(alpha);
    if (achieved - target_prob).abs() > tol {
        return Err(SimError::InterceptNonConvergence {
            target: target_prob,
            achieved,
            iterations: steps,
        });
    }
    Ok(alpha)
}

/// One simulated individual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub x0: f64,
    pub a0: u8,
    pub x1: f64,
    pub a1: u8,
    pub y: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenerationMode {
    Development,
    TestMT,
    TestNTT,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortMeta {
    pub scenario: String,
    pub gamma: f64,
    pub seed: u64,
    pub mode: GenerationMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub rows: Vec<CohortRow>,
    pub meta: CohortMeta,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mean_of(&self, f: impl Fn(&CohortRow) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    /// Writes the rows as CSV with header `x0,a0,x1,a1,y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["x0", "a0", "x1", "a1", "y"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exogenous noise of one row: a standard normal for X0, a uniform for each
/// Bernoulli draw and a standard normal for the X1 innovation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowNoise {
    pub z0: f64,
    pub u_a0: f64,
    pub e1: f64,
    pub u_a1: f64,
    pub u_y: f64,
}

/// Treatment regime applied while realizing a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentPolicy {
    /// Treatments follow the assignment mechanism.
    Natural,
    /// A0 = A1 = 0 for everyone.
    WithholdAll,
    /// A0 = A1 = 1 for everyone.
    TreatAll,
}

/// Per-variable RNG streams of one cohort.
pub struct NoiseStreams {
    x0: ChaCha8Rng,
    a0: ChaCha8Rng,
    x1: ChaCha8Rng,
    a1: ChaCha8Rng,
    y: ChaCha8Rng,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            x0: substream(seed, 0),
            a0: substream(seed, 1),
            x1: substream(seed, 2),
            a1: substream(seed, 3),
            y: substream(seed, 4),
        }
    }

    #[inline]
    pub fn next(&mut self) -> RowNoise {
        RowNoise {
            z0: self.x0.sample(StandardNormal),
            u_a0: self.a0.random(),
            e1: self.x1.sample(StandardNormal),
            u_a1: self.a1.random(),
            u_y: self.y.random(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum A1Rule {
    Retention(f64),
    Logistic { alpha1: f64, theta: f64 },
}

/// Structural equations of a scenario with solved intercepts.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    alpha0: f64,
    phi: f64,
    gamma: f64,
    a1_rule: A1Rule,
    alpha_y: f64,
    beta_x0: f64,
    beta_x1: f64,
    beta_a0: f64,
    beta_a1: f64,
}

impl Mechanism {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let unsolved = |which| SimError::UnsolvedIntercept {
            scenario: config.name.clone(),
            which,
        };
        let a1_rule = match config.kind {
            ScenarioKind::Rct => A1Rule::Retention(config.theta_rct.unwrap()),
            ScenarioKind::Observational => A1Rule::Logistic {
                alpha1: config.alpha1.ok_or_else(|| unsolved("alpha1"))?,
                theta: config.theta_obs.unwrap(),
            },
        };
        Ok(Self {
            alpha0: config.alpha0.ok_or_else(|| unsolved("alpha0"))?,
            phi: config.phi,
            gamma: config.gamma,
            a1_rule,
            alpha_y: config.alpha_y.ok_or_else(|| unsolved("alpha_y"))?,
            beta_x0: config.beta_x0,
            beta_x1: config.beta_x1,
            beta_a0: config.beta_a0,
            beta_a1: config.beta_a1,
        })
    }

    /// Outcome log-odds of a realized row.
    #[inline]
    pub fn outcome_predictor(&self, row: &CohortRow) -> f64 {
        self.alpha_y
            + self.beta_x0 * row.x0
            + self.beta_x1 * row.x1
            + self.beta_a0 * f64::from(row.a0)
            + self.beta_a1 * f64::from(row.a1)
    }

    /// True outcome probability of a realized row.
    pub fn outcome_probability(&self, row: &CohortRow) -> f64 {
        sim_expit(self.outcome_predictor(row))
    }

    #[inline]
    pub fn realize(&self, noise: &RowNoise, policy: TreatmentPolicy) -> CohortRow {
        let x0 = noise.z0;
        let a0 = match policy {
            TreatmentPolicy::Natural => u8::from(noise.u_a0 < sim_expit(self.alpha0 + self.phi * x0)),
            TreatmentPolicy::WithholdAll => 0,
            TreatmentPolicy::TreatAll => 1,
        };
        let x1 = x0 + self.gamma * f64::from(a0) + noise.e1;
        let a1 = match policy {
            TreatmentPolicy::Natural => {
                let p = match self.a1_rule {
                    A1Rule::Retention(theta) => theta * f64::from(a0),
                    A1Rule::Logistic { alpha1, theta } => {
                        sim_expit(alpha1 + self.phi * x1 + theta * f64::from(a0))
                    }
                };
                u8::from(noise.u_a1 < p)
            }
            TreatmentPolicy::WithholdAll => 0,
            TreatmentPolicy::TreatAll => 1,
        };
        let mut row = CohortRow { x0, a0, x1, a1, y: 0 };
        row.y = u8::from(noise.u_y < self.outcome_probability(&row));
        row
    }
}

fn generate(
    config: &ScenarioConfig,
    seed: u64,
    n: usize,
    mode: GenerationMode,
    policy: TreatmentPolicy,
) -> Result<Cohort> {
    let mech = Mechanism::new(config)?;
    let mut streams = NoiseStreams::new(seed);
    let rows = (0..n).map(|_| mech.realize(&streams.next(), policy)).collect();
    Ok(Cohort {
        rows,
        meta: CohortMeta {
            scenario: config.name.clone(),
            gamma: config.gamma,
            seed,
            mode,
        },
    })
}

/// Development cohort of `n_dev` rows under the natural treatment mechanism.
pub fn generate_development(config: &ScenarioConfig, seed: u64) -> Result<Cohort> {
    generate(config, seed, config.n_dev, GenerationMode::Development, TreatmentPolicy::Natural)
}

/// Test set 1: `n_test` rows from the same mechanism as development.
pub fn generate_test_mt(config: &ScenarioConfig, seed: u64) -> Result<Cohort> {
    generate(config, seed, config.n_test, GenerationMode::TestMT, TreatmentPolicy::Natural)
}

/// Test set 2: `n_test` rows with treatment withheld at both timepoints.
pub fn generate_test_ntt(config: &ScenarioConfig, seed: u64) -> Result<Cohort> {
    generate(config, seed, config.n_test, GenerationMode::TestNTT, TreatmentPolicy::WithholdAll)
}

/// Cohort of `n` rows in which everybody follows `policy`; used for
/// counterfactual comparisons.
pub fn generate_under_policy(
    config: &ScenarioConfig,
    seed: u64,
    n: usize,
    policy: TreatmentPolicy,
) -> Result<Cohort> {
    let mode = match policy {
        TreatmentPolicy::WithholdAll => GenerationMode::TestNTT,
        _ => GenerationMode::TestMT,
    };
    generate(config, seed, n, mode, policy)
}

/// Rows of a TestMT cohort that were untreated at baseline, in order.
pub fn filter_nbt(cohort: &Cohort) -> Result<Cohort> {
    if cohort.meta.mode != GenerationMode::TestMT {
        return Err(SimError::WrongMode(cohort.meta.mode));
    }
    Ok(Cohort {
        rows: cohort.rows.iter().filter(|r| r.a0 == 0).copied().collect(),
        meta: cohort.meta.clone(),
    })
}
