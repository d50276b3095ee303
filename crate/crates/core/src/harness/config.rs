//! Experiment plans and their TOML configuration files.
//!
//! Every key is optional; omitted keys take the study defaults (the three
//! canonical scenarios, gamma grid -3..0 in steps of 0.5, thresholds 5%..70%).
//!
//! ```toml
//! master_seed = 20180501
//! profile = "desk"
//!
//! [profiles.full]
//! iterations = 1000
//!
//! [[scenarios]]
//! preset = "rct"
//! theta_rct = 0.8
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::cohort_sim::{InterceptSolverOptions, ScenarioConfig, ScenarioKind};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 200 iterations with full-size cohorts.
    Desk,
    /// 1000 iterations with full-size cohorts.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(format!("unknown profile `{other}` (expected desk or full)")),
        }
    }
}

pub const DEFAULT_GAMMA_GRID: [f64; 7] = [-3.0, -2.5, -2.0, -1.5, -1.0, -0.5, 0.0];
pub const DEFAULT_MASTER_SEED: u64 = 20_180_501;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub profile: Profile,
    pub scenarios: Vec<ScenarioConfig>,
    pub gamma_grid: Vec<f64>,
    pub iterations: usize,
    pub master_seed: u64,
    pub thresholds: Vec<f64>,
    pub workers: usize,
    pub msm_interactions: bool,
    /// Re-solve alpha1 and alpha_y at every gamma (otherwise the gamma = 0
    /// intercepts are reused).
    pub resolve_intercepts_per_gamma: bool,
    pub intercept_solver: InterceptSolverOptions,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    pub iterations: Option<usize>,
    pub n_dev: Option<usize>,
    pub n_test: Option<usize>,
}

impl ExperimentPlan {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            profile,
            scenarios: ScenarioConfig::study_scenarios(),
            gamma_grid: DEFAULT_GAMMA_GRID.to_vec(),
            iterations: match profile {
                Profile::Desk => 200,
                Profile::Full => 1000,
            },
            master_seed: DEFAULT_MASTER_SEED,
            thresholds: metrics::default_thresholds(),
            workers: default_workers(),
            msm_interactions: false,
            resolve_intercepts_per_gamma: true,
            intercept_solver: InterceptSolverOptions::default(),
        }
    }

    pub fn desk() -> Self {
        Self::for_profile(Profile::Desk)
    }

    pub fn full() -> Self {
        Self::for_profile(Profile::Full)
    }

    pub fn set_cohort_sizes(&mut self, n_dev: usize, n_test: usize) {
        for s in &mut self.scenarios {
            s.n_dev = n_dev;
            s.n_test = n_test;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Plan(m));
        if self.scenarios.is_empty() {
            return bad("no scenarios".into());
        }
        let mut names = HashSet::new();
        for s in &self.scenarios {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate scenario name `{}`", s.name));
            }
            s.validate()?;
        }
        if self.gamma_grid.is_empty() {
            return bad("empty gamma grid".into());
        }
        if let Some(g) = self.gamma_grid.iter().find(|g| !(**g <= 0.0)) {
            return bad(format!("gamma {g} must be <= 0"));
        }
        if self.master_seed > i64::MAX as u64 || self.intercept_solver.seed > i64::MAX as u64 {
            return bad("seeds must fit in a signed 64-bit integer".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
            || self.thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("thresholds must be strictly increasing within [0, 1]".into());
        }
        Ok(())
    }

    /// Parses a TOML plan. `profile` overrides the file's `profile` key.
    pub fn from_toml_str(text: &str, profile: Option<Profile>) -> Result<Self> {
        let file: PlanFile = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        file.into_plan(profile)
    }

    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, profile).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The plan as a fully explicit config file.
    pub fn to_toml(&self) -> String {
        let file = PlanFile {
            profile: Some(self.profile),
            master_seed: Some(self.master_seed),
            workers: Some(self.workers),
            iterations: Some(self.iterations),
            n_dev: None,
            n_test: None,
            gamma_grid: Some(self.gamma_grid.clone()),
            thresholds: Some(self.thresholds.clone()),
            msm_interactions: Some(self.msm_interactions),
            resolve_intercepts_per_gamma: Some(self.resolve_intercepts_per_gamma),
            intercept_solver: Some(self.intercept_solver),
            profiles: BTreeMap::new(),
            scenarios: Some(self.scenarios.iter().map(ScenarioFile::explicit).collect()),
        };
        toml::to_string(&file).expect("plan serializes to TOML")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    profile: Option<Profile>,
    master_seed: Option<u64>,
    workers: Option<usize>,
    iterations: Option<usize>,
    n_dev: Option<usize>,
    n_test: Option<usize>,
    gamma_grid: Option<Vec<f64>>,
    thresholds: Option<Vec<f64>>,
    msm_interactions: Option<bool>,
    resolve_intercepts_per_gamma: Option<bool>,
    intercept_solver: Option<InterceptSolverOptions>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    profiles: BTreeMap<Profile, ProfileFile>,
    scenarios: Option<Vec<ScenarioFile>>,
}

impl PlanFile {
    fn into_plan(self, profile: Option<Profile>) -> Result<ExperimentPlan> {
        let profile = profile.or(self.profile).unwrap_or(Profile::Desk);
        let mut plan = ExperimentPlan::for_profile(profile);
        if let Some(s) = self.scenarios {
            plan.scenarios = s.into_iter().map(ScenarioFile::into_config).collect::<Result<_>>()?;
        }
        let prof = self.profiles.get(&profile).copied().unwrap_or_default();
        let iterations = self.iterations.or(prof.iterations);
        let n_dev = self.n_dev.or(prof.n_dev);
        let n_test = self.n_test.or(prof.n_test);
        if let Some(it) = iterations {
            plan.iterations = it;
        }
        for s in &mut plan.scenarios {
            if let Some(n) = n_dev {
                s.n_dev = n;
            }
            if let Some(n) = n_test {
                s.n_test = n;
            }
        }
        if let Some(v) = self.master_seed {
            plan.master_seed = v;
        }
        if let Some(v) = self.workers {
            plan.workers = v;
        }
        if let Some(v) = self.gamma_grid {
            plan.gamma_grid = v;
        }
        if let Some(v) = self.thresholds {
            plan.thresholds = v;
        }
        if let Some(v) = self.msm_interactions {
            plan.msm_interactions = v;
        }
        if let Some(v) = self.resolve_intercepts_per_gamma {
            plan.resolve_intercepts_per_gamma = v;
        }
        if let Some(v) = self.intercept_solver {
            plan.intercept_solver = v;
        }
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Preset {
    #[serde(rename = "rct")]
    Rct,
    #[serde(rename = "observational-50")]
    Observational50,
    #[serde(rename = "observational-20")]
    Observational20,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    preset: Option<Preset>,
    kind: Option<ScenarioKind>,
    phi: Option<f64>,
    theta_rct: Option<f64>,
    theta_obs: Option<f64>,
    alpha0: Option<f64>,
    alpha1: Option<f64>,
    alpha_y: Option<f64>,
    target_p_a0: Option<f64>,
    target_p_a1: Option<f64>,
    target_p_y: Option<f64>,
    beta_x0: Option<f64>,
    beta_x1: Option<f64>,
    beta_a0: Option<f64>,
    beta_a1: Option<f64>,
    n_dev: Option<usize>,
    n_test: Option<usize>,
}

impl ScenarioFile {
    fn explicit(c: &ScenarioConfig) -> Self {
        Self {
            name: Some(c.name.clone()),
            preset: None,
            kind: Some(c.kind),
            phi: Some(c.phi),
            theta_rct: c.theta_rct,
            theta_obs: c.theta_obs,
            alpha0: c.alpha0,
            alpha1: c.alpha1,
            alpha_y: c.alpha_y,
            target_p_a0: Some(c.target_p_a0),
            target_p_a1: Some(c.target_p_a1),
            target_p_y: Some(c.target_p_y),
            beta_x0: Some(c.beta_x0),
            beta_x1: Some(c.beta_x1),
            beta_a0: Some(c.beta_a0),
            beta_a1: Some(c.beta_a1),
            n_dev: Some(c.n_dev),
            n_test: Some(c.n_test),
        }
    }

    fn into_config(self) -> Result<ScenarioConfig> {
        let preset = match (self.preset, self.kind) {
            (Some(p), _) => p,
            (None, Some(ScenarioKind::Rct)) => Preset::Rct,
            (None, Some(ScenarioKind::Observational)) => Preset::Observational50,
            (None, None) => {
                return Err(HarnessError::Config(
                    "each scenario needs a `preset` or a `kind`".into(),
                ))
            }
        };
        let mut c = match preset {
            Preset::Rct => ScenarioConfig::rct_dropout(),
            Preset::Observational50 => ScenarioConfig::observational_50(),
            Preset::Observational20 => ScenarioConfig::observational_20(),
        };
        if let Some(kind) = self.kind {
            if kind != c.kind {
                // switching family: drop the other family's theta
                c.kind = kind;
                c.theta_rct = None;
                c.theta_obs = None;
            }
        }
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        set!(name, phi, target_p_a0, target_p_a1, target_p_y, beta_x0, beta_x1, beta_a0, beta_a1, n_dev, n_test);
        macro_rules! set_opt {
            ($($field:ident),*) => { $( if self.$field.is_some() { c.$field = self.$field; } )* };
        }
        set_opt!(theta_rct, theta_obs, alpha0, alpha1, alpha_y);
        Ok(c)
    }
}
