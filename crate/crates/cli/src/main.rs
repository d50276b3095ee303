use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dropin_core::cohort_sim::{self, ScenarioConfig};
use dropin_core::harness::output::{self, FigureId};
use dropin_core::harness::{self, ExperimentPlan, Profile};
use dropin_core::ipw::{compute_stabilized_weights, fit_treatment_models, TreatmentHistoryTable};

#[derive(Parser)]
#[command(name = "dropin", version, about = "Prediction models under treatment drop-in: simulation study driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment and write results, summary, figures and report.
    Run {
        /// TOML plan; study defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Aggregate an existing results.csv into summary.csv and figure tables.
    Summarize {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the data table behind one figure from a summary.csv.
    Report {
        #[arg(long)]
        summary: PathBuf,
        /// One of 3, 4, 5, S1, S2, S3.
        #[arg(long)]
        figure: FigureId,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write one simulated cohort (and optionally its stabilized weights) as CSV.
    Simulate {
        /// Preset (rct, observational-50, observational-20) or a scenario name from --config.
        #[arg(long, default_value = "rct")]
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        gamma: f64,
        #[arg(long, value_enum, default_value = "dev")]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of rows; defaults to the scenario's development or test size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write stabilized weights (id,sw) for the cohort.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Full,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Full => Profile::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Development cohort.
    Dev,
    /// Mixed-treatment test cohort.
    Mt,
    /// Baseline-untreated subset of a mixed-treatment test cohort.
    Nbt,
    /// Treatment-withheld test cohort.
    Ntt,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            profile,
            seed,
            workers,
            iterations,
            out,
        } => {
            let profile = profile.map(Profile::from);
            let mut plan = match &config {
                Some(path) => ExperimentPlan::load(path, profile)?,
                None => ExperimentPlan::for_profile(profile.unwrap_or(Profile::Desk)),
            };
            if let Some(s) = seed {
                plan.master_seed = s;
            }
            if let Some(w) = workers {
                plan.workers = w;
            }
            if let Some(it) = iterations {
                plan.iterations = it;
            }
            plan.validate()?;
            let result = harness::run_experiment(&plan)?;
            output::emit_outputs(&out, &plan, &result)?;
            println!(
                "{} iterations, {} failed, {} result rows in {:.1} s; outputs in {}",
                result.iterations_attempted,
                result.failures.len(),
                result.results.len(),
                result.wall_time.as_secs_f64(),
                out.display()
            );
            if result.is_degraded() {
                eprintln!("warning: run is degraded; see run_report.txt");
            }
            Ok(())
        }
        Command::Summarize { results, out } => {
            let records = output::read_results_csv(&results)?;
            let summary = harness::summarize(&records);
            create_dir(&out)?;
            output::write_summary_csv(&out.join("summary.csv"), &summary)?;
            for id in FigureId::ALL {
                output::write_figure_csv(&out, id, &summary)?;
            }
            println!("{} summary rows written to {}", summary.len(), out.display());
            Ok(())
        }
        Command::Report { summary, figure, out } => {
            let summary = output::read_summary_csv(&summary)?;
            create_dir(&out)?;
            let path = output::write_figure_csv(&out, figure, &summary)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Simulate {
            scenario,
            config,
            gamma,
            mode,
            seed,
            n,
            out,
            weights,
        } => {
            let base = find_scenario(&scenario, config.as_deref())?;
            let mut cfg = base.with_gamma(gamma);
            if let Some(n) = n {
                cfg.n_dev = n;
                cfg.n_test = n;
            }
            let solver = match &config {
                Some(path) => ExperimentPlan::load(path, None)?.intercept_solver,
                None => Default::default(),
            };
            let cfg = cfg.solve_intercepts(&solver)?;
            let cohort = match mode {
                ModeArg::Dev => cohort_sim::generate_development(&cfg, seed)?,
                ModeArg::Mt => cohort_sim::generate_test_mt(&cfg, seed)?,
                ModeArg::Nbt => cohort_sim::filter_nbt(&cohort_sim::generate_test_mt(&cfg, seed)?)?,
                ModeArg::Ntt => cohort_sim::generate_test_ntt(&cfg, seed)?,
            };
            cohort
                .write_csv(BufWriter::new(create_file(&out)?))
                .with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = weights {
                let history = TreatmentHistoryTable::from_cohort(&cohort)?;
                let models = fit_treatment_models(&history)?;
                let sw = compute_stabilized_weights(&history, &models)?;
                sw.write_csv(BufWriter::new(create_file(&path)?))
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("weights: {}", sw.summary);
            }
            println!(
                "{} rows of {} (gamma={}, alpha0={:.4}, alpha1={}, alpha_y={:.4}) written to {}",
                cohort.len(),
                cfg.name,
                gamma,
                cfg.alpha0.unwrap_or(f64::NAN),
                cfg.alpha1.map_or_else(|| "-".into(), |a| format!("{a:.4}")),
                cfg.alpha_y.unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
    }
}

fn find_scenario(key: &str, config: Option<&Path>) -> Result<ScenarioConfig> {
    if let Some(path) = config {
        let plan = ExperimentPlan::load(path, None)?;
        if let Some(s) = plan.scenarios.into_iter().find(|s| s.name == key) {
            return Ok(s);
        }
    }
    Ok(match key {
        "rct" => ScenarioConfig::rct_dropout(),
        "observational-50" => ScenarioConfig::observational_50(),
        "observational-20" => ScenarioConfig::observational_20(),
        other => bail!("unknown scenario `{other}` (expected rct, observational-50, observational-20 or a name from --config)"),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    File::create(path).with_context(|| format!("creating {}", path.display()))
}
