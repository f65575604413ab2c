//! Subcommand flags. Each struct doubles as the schema of its `--config`
//! TOML file: keys are the long flag names, and flags win over the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// Parse `path` as TOML; input paths inside it are relative to its directory.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, PathBuf)> {
    match path {
        None => Ok((T::default(), PathBuf::from("."))),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let parsed =
                toml::from_str(&text).with_context(|| format!("config {}", p.display()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((parsed, base))
        }
    }
}

fn pick_vec<T>(flag: Vec<T>, file: Vec<T>) -> Vec<T> {
    if flag.is_empty() {
        file
    } else {
        flag
    }
}

/// Input path from a flag (relative to the working directory) or from the
/// config file (relative to the file).
fn pick_input(flag: Option<PathBuf>, file: Option<PathBuf>, base: &Path) -> Option<PathBuf> {
    flag.or_else(|| file.map(|p| base.join(p)))
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CurvesArgs {
    /// TOML file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Schedule spec `name:key=value,...`; repeatable.
    #[arg(long)]
    pub schedule: Vec<String>,
    /// Number of grid points on [0, 1].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Add `ref` and `difference` columns against this transform
    /// (identity, log, arcsin, logit).
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    pub reference: Option<String>,
    /// Compare `h / h(1)` instead of `h`.
    #[arg(long)]
    pub normalize: bool,
    /// Leave out the reference transform rows.
    #[arg(long)]
    pub no_refs: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CurvesArgs {
    pub fn merge(self, file: Self, base: &Path) -> Self {
        let file_specs = file
            .schedule
            .into_iter()
            .map(|s| rebase_table_spec(s, base))
            .collect();
        Self {
            config: self.config,
            schedule: pick_vec(self.schedule, file_specs),
            grid: self.grid.or(file.grid),
            reference: self.reference.or(file.reference),
            normalize: self.normalize || file.normalize,
            no_refs: self.no_refs || file.no_refs,
            out: self.out.or(file.out),
        }
    }
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GrpoSweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Group sizes, comma separated [default: 4,16,64,256].
    #[arg(long = "M", value_delimiter = ',')]
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    /// Epsilons, comma separated [default: 1e-4,1e-2,1e-1,1].
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// Population or sample variance in the GRPO denominator.
    #[arg(long, value_enum)]
    pub var: Option<VarArg>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl GrpoSweepArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            config: self.config,
            m: pick_vec(self.m, file.m),
            eps: pick_vec(self.eps, file.eps),
            var: self.var.or(file.var),
            grid: self.grid.or(file.grid),
            out: self.out.or(file.out),
        }
    }
}

#[derive(ValueEnum, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum VarArg {
    Population,
    Sample,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RejectionCompareArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Group sizes, comma separated [default: 1,2,4,8,16,32,64].
    #[arg(long = "M", value_delimiter = ',')]
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    /// Number of grid points on [0, 1]; t = 0 is dropped.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RejectionCompareArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            config: self.config,
            m: pick_vec(self.m, file.m),
            grid: self.grid.or(file.grid),
            out: self.out.or(file.out),
        }
    }
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BernsteinArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// logit, arcsin, identity, poly:c0;c1;... (h'(t) = c0 + c1 t + ...)
    /// or file:<csv with header t,hprime>.
    #[arg(long)]
    pub target: Option<String>,
    /// Group size.
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m: Option<usize>,
    /// Regularizer added to the denominators of logit and arcsin [default: 1e-3].
    #[arg(long)]
    pub reg: Option<f64>,
    /// Exact Bernstein conversion for polynomial targets.
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Schedule table destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit-error report destination (CSV); stderr when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl BernsteinArgs {
    pub fn merge(self, file: Self, base: &Path) -> Self {
        Self {
            config: self.config,
            target: self
                .target
                .or(file.target.map(|t| rebase_file_target(t, base))),
            m: self.m.or(file.m),
            reg: self.reg.or(file.reg),
            exact: self.exact || file.exact,
            grid: self.grid.or(file.grid),
            out: self.out.or(file.out),
            report: self.report.or(file.report),
        }
    }
}

fn rebase_file_target(target: String, base: &Path) -> String {
    match target.strip_prefix("file:") {
        Some(p) => format!("file:{}", base.join(p).display()),
        None => target,
    }
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct VerifyArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Largest number of answer tuples any enumeration may visit.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Seed for the Monte Carlo checks [default: 2025].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Draws per Monte Carlo check [default: 100000].
    #[arg(long)]
    pub mc_draws: Option<usize>,
}

impl VerifyArgs {
    pub fn merge(self, file: Self) -> Self {
        Self {
            config: self.config,
            budget: self.budget.or(file.budget),
            seed: self.seed.or(file.seed),
            mc_draws: self.mc_draws.or(file.mc_draws),
        }
    }
}

#[derive(ValueEnum, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Algorithm1,
    Rejection,
}

#[derive(Args, Deserialize, Debug, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Corpus TOML (`[[tasks]]` with id, vocab_size, correct, optional weight).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Schedule spec for algorithm1 mode.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Correct answers to collect per step in rejection mode.
    #[arg(long = "B")]
    #[serde(rename = "B")]
    pub b: Option<usize>,
    /// Draw cap per rejection step before the step is skipped [default: 10000].
    #[arg(long)]
    pub max_attempts: Option<usize>,
    /// Step size.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Required, here or in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Transform for the logged objective (identity, log, arcsin, logit);
    /// defaults to the one the mode ascends.
    #[arg(long)]
    pub objective: Option<String>,
    /// Starting policy checkpoint; uniform logits when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Trajectory CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Final policy checkpoint destination.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

impl TrainArgs {
    pub fn merge(self, file: Self, base: &Path) -> Self {
        let schedule = match self.schedule {
            Some(s) => Some(s),
            None => file.schedule.map(|s| rebase_table_spec(s, base)),
        };
        Self {
            config: self.config,
            corpus: pick_input(self.corpus, file.corpus, base),
            mode: self.mode.or(file.mode),
            schedule,
            b: self.b.or(file.b),
            max_attempts: self.max_attempts.or(file.max_attempts),
            eta: self.eta.or(file.eta),
            steps: self.steps.or(file.steps),
            seed: self.seed.or(file.seed),
            log_every: self.log_every.or(file.log_every),
            objective: self.objective.or(file.objective),
            init: pick_input(self.init, file.init, base),
            out: self.out.or(file.out),
            checkpoint: self.checkpoint.or(file.checkpoint),
        }
    }
}

/// Schedule specs from a config file resolve `path=` and `file:` against the file.
fn rebase_table_spec(spec: String, base: &Path) -> String {
    if base == Path::new(".") || base.as_os_str().is_empty() {
        return spec;
    }
    let Some((name, rest)) = spec.split_once(':') else {
        return spec;
    };
    let fields: Vec<String> = rest
        .split(',')
        .map(|kv| match kv.split_once('=') {
            Some((k, v)) if k.trim() == "path" => format!("{k}={}", base.join(v.trim()).display()),
            Some((k, v)) if k.trim() == "target" => {
                format!("{k}={}", rebase_file_target(v.trim().to_string(), base))
            }
            _ => kv.to_string(),
        })
        .collect();
    format!("{name}:{}", fields.join(","))
}
