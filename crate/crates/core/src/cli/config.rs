use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::sim::{ProfileSource, Scenario, ScenarioFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Load a scenario and report every invariant violation.
    Validate,
    /// Day-ahead planning, with or without coordination.
    Dayahead,
    /// Day-ahead plan followed by intra-day re-coordination and the
    /// real-time loop over the simulation window.
    Mpc,
    /// Real-time loop tracking the day-ahead targets only.
    Rt,
    /// Day-ahead and intra-day artifacts together with the cost table.
    Full,
    /// Constant-penalty study of the coordination.
    RhoSweep,
    /// Per-prosumer tariff cost with and without coordination.
    Compare,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "gridprice", version, about = "Grid-aware price signals for flexible prosumers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub args: RunArgs,
}

/// Flags shared by every subcommand. Each one can also be set through a
/// `GRIDPRICE_*` environment variable.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Start from the configuration echoed in a previous run's manifest.
    #[arg(long, global = true, env = "GRIDPRICE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "GRIDPRICE_SCENARIO")]
    pub scenario: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, env = "GRIDPRICE_OUT")]
    pub out: Option<PathBuf>,
    /// Seed of the synthetic profile generator.
    #[arg(long, global = true, env = "GRIDPRICE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "GRIDPRICE_NO_COORDINATION")]
    pub no_coordination: bool,
    #[arg(long, global = true, env = "GRIDPRICE_RHO0")]
    pub rho0: Option<f64>,
    /// Iteration cap of the day-ahead coordination.
    #[arg(long, global = true, env = "GRIDPRICE_MAX_ITER")]
    pub max_iter: Option<usize>,
    /// Iteration cap of every intra-day coordination.
    #[arg(long, global = true, env = "GRIDPRICE_BUDGET_ITERS")]
    pub budget_iters: Option<usize>,
    #[arg(long, global = true, env = "GRIDPRICE_TOL_ABS")]
    pub tol_abs: Option<f64>,
    #[arg(long, global = true, env = "GRIDPRICE_TOL_REL")]
    pub tol_rel: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub rho0: Option<f64>,
    pub max_iter: Option<usize>,
    pub budget_iters: Option<usize>,
    pub tol_abs: Option<f64>,
    pub tol_rel: Option<f64>,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub coordination: bool,
    pub overrides: Overrides,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfigSource {
    Bare(RunConfig),
    Manifest { config: RunConfig },
}

impl RunConfig {
    /// Merges a previous configuration (if any) with the command line.
    /// Flags win; paths are made absolute so the manifest stays valid from
    /// any working directory.
    pub fn resolve(command: Command, args: &RunArgs) -> Result<Self, CliError> {
        let base = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let src: ConfigSource = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: not a run configuration or manifest ({e})", path.display())))?;
                Some(match src {
                    ConfigSource::Bare(c) | ConfigSource::Manifest { config: c } => c,
                })
            }
            None => None,
        };
        let scenario = args
            .scenario
            .clone()
            .or_else(|| base.as_ref().map(|b| b.scenario.clone()))
            .ok_or_else(|| CliError::Config("--scenario is required".into()))?;
        let out = args
            .out
            .clone()
            .or_else(|| base.as_ref().map(|b| b.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        let prev = base.as_ref().map(|b| b.overrides.clone()).unwrap_or_default();
        let overrides = Overrides {
            rho0: args.rho0.or(prev.rho0),
            max_iter: args.max_iter.or(prev.max_iter),
            budget_iters: args.budget_iters.or(prev.budget_iters),
            tol_abs: args.tol_abs.or(prev.tol_abs),
            tol_rel: args.tol_rel.or(prev.tol_rel),
        };
        Ok(Self {
            command,
            scenario: absolute(&scenario)?,
            out: absolute(&out)?,
            seed: args.seed.or(base.as_ref().and_then(|b| b.seed)),
            coordination: !args.no_coordination && base.as_ref().map_or(true, |b| b.coordination),
            overrides,
        })
    }

    /// Loads the scenario with the seed and overrides applied, then
    /// validates it.
    pub fn load_scenario(&self) -> Result<Scenario, CliError> {
        let path = &self.scenario;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut file: ScenarioFile =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let (Some(seed), ProfileSource::Synthetic(p)) = (self.seed, &mut file.profiles) {
            p.seed = seed;
        }
        let o = &self.overrides;
        let admm = &mut file.admm;
        admm.rho0 = o.rho0.unwrap_or(admm.rho0);
        admm.max_iter = o.max_iter.unwrap_or(admm.max_iter);
        admm.eps_abs = o.tol_abs.unwrap_or(admm.eps_abs);
        admm.eps_rel = o.tol_rel.unwrap_or(admm.eps_rel);
        file.timeline.mpc_budget_iters = o.budget_iters.unwrap_or(file.timeline.mpc_budget_iters);
        let dir = path.parent().unwrap_or(Path::new("."));
        let scenario = Scenario::from_file(file, dir)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Whether `--seed` changes the inputs; it only does for synthetic
    /// profiles.
    pub fn seed_applies(&self) -> Result<bool, CliError> {
        let text = std::fs::read_to_string(&self.scenario).map_err(|e| CliError::io(&self.scenario, e))?;
        let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(self.seed.is_some() && matches!(file.profiles, ProfileSource::Synthetic(_)))
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        let cwd = std::env::current_dir().map_err(|e| CliError::io(Path::new("."), e))?;
        Ok(cwd.join(p))
    }
}
