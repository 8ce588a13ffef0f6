//! Run configuration: an optional TOML file overlaid with command-line flags,
//! resolved into a fully specified `RunConfig`.

use clap::{Args, ValueEnum};
use fluctsel_core::{Error as CoreError, InitialCondition, ModelParams};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("missing required key `{0}` (set it in the config file or pass --{1})")]
    Missing(&'static str, &'static str),
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SimulatePrelimit,
    SimulateLimit,
    Fixation,
    Convergence,
    Verify,
    Moments,
    Dual,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SimulatePrelimit => "simulate-prelimit",
            Experiment::SimulateLimit => "simulate-limit",
            Experiment::Fixation => "fixation",
            Experiment::Convergence => "convergence",
            Experiment::Verify => "verify",
            Experiment::Moments => "moments",
            Experiment::Dual => "dual",
        }
    }

    fn needs_model(self) -> bool {
        self != Experiment::Verify
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Type whose indicator the dual experiment propagates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TypeName {
    L0,
    L1,
    H0,
    H1,
}

impl TypeName {
    pub fn index(self) -> usize {
        match self {
            TypeName::L0 => fluctsel_core::model::L0,
            TypeName::L1 => fluctsel_core::model::L1,
            TypeName::H0 => fluctsel_core::model::H0,
            TypeName::H1 => fluctsel_core::model::H1,
        }
    }
}

// On-disk layout. Every key is optional here; requiredness is decided when
// resolving.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    init: InitSection,
    #[serde(default)]
    numerics: NumericsSection,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    output: OutputSection,
    #[serde(default)]
    convergence: ConvergenceSection,
    #[serde(default)]
    fixation: FixationSection,
    #[serde(default)]
    verify: VerifySection,
    #[serde(default)]
    dual: DualSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    sigma: Option<f64>,
    gamma: Option<f64>,
    theta_l: Option<f64>,
    theta_h: Option<f64>,
    r: Option<f64>,
    n_scale: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitSection {
    x: Option<f64>,
    p: Option<f64>,
    q: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumericsSection {
    dt: Option<f64>,
    horizon: Option<f64>,
    replicas: Option<u64>,
    eps_absorb: Option<f64>,
    t_cap: Option<f64>,
    n_max: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    experiment: Option<Experiment>,
    seed: Option<u64>,
    strict: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    path: Option<PathBuf>,
    format: Option<Format>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConvergenceSection {
    n_values: Option<Vec<u32>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixationSection {
    batches: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySection {
    identity_draws: Option<u64>,
    symmetry_draws: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DualSection {
    phi: Option<TypeName>,
    thinning: Option<f64>,
}

/// Command-line overrides. Every field mirrors a config key.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// TOML config file; flags override its values
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Selection intensity σ
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Environmental switch rate γ
    #[arg(long)]
    pub gamma: Option<f64>,
    /// B-locus mutation rate carried by ℓ
    #[arg(long)]
    pub theta_l: Option<f64>,
    /// B-locus mutation rate carried by h
    #[arg(long)]
    pub theta_h: Option<f64>,
    /// Probability that a mutation yields B-type 0
    #[arg(long)]
    pub r: Option<f64>,
    /// Pre-limit speed parameter N
    #[arg(long)]
    pub n_scale: Option<u32>,

    /// Initial frequency of h
    #[arg(long)]
    pub x: Option<f64>,
    /// Initial type-0 fraction among h
    #[arg(long)]
    pub p: Option<f64>,
    /// Initial type-0 fraction among ℓ
    #[arg(long)]
    pub q: Option<f64>,

    /// Euler step (default depends on the rates)
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulated time span (dual: moment time)
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Absorption threshold for fixation runs
    #[arg(long)]
    pub eps_absorb: Option<f64>,
    /// Time cap for fixation runs
    #[arg(long)]
    pub t_cap: Option<f64>,
    /// Coordinate cap of the dual process
    #[arg(long)]
    pub n_max: Option<usize>,

    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit with status 2 when the run produced warnings
    #[arg(long)]
    pub strict: bool,

    /// Results file (default: <experiment>.<format>)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,

    /// Comma-separated list of N for the convergence study
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<u32>>,
    /// Number of rows the fixation replicas are split into
    #[arg(long)]
    pub batches: Option<u64>,
    /// Random draws for the formula identities
    #[arg(long)]
    pub identity_draws: Option<u64>,
    /// Random draws for the symmetry battery
    #[arg(long)]
    pub symmetry_draws: Option<u64>,
    /// Type whose indicator the dual propagates
    #[arg(long, value_enum)]
    pub phi: Option<TypeName>,
    /// Fraction of selection jumps realized by the dual (default min(1, 1/(16 σ²/γ)))
    #[arg(long)]
    pub thinning: Option<f64>,
}

/// Fully resolved configuration. This is what gets echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub run: RunResolved,
    pub model: ModelParams,
    pub init: InitResolved,
    pub numerics: NumericsResolved,
    pub output: OutputResolved,
    pub convergence: ConvergenceResolved,
    pub fixation: FixationResolved,
    pub verify: VerifyResolved,
    pub dual: DualResolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResolved {
    pub experiment: Experiment,
    pub seed: u64,
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitResolved {
    pub x: f64,
    pub p: f64,
    pub q: f64,
}

impl InitResolved {
    pub fn condition(&self) -> InitialCondition {
        InitialCondition { x: self.x, p: self.p, q: self.q }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericsResolved {
    pub dt: f64,
    pub horizon: f64,
    pub replicas: u64,
    pub eps_absorb: f64,
    pub t_cap: f64,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputResolved {
    pub path: PathBuf,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceResolved {
    pub n_values: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixationResolved {
    pub batches: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyResolved {
    pub identity_draws: u64,
    pub symmetry_draws: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualResolved {
    pub phi: TypeName,
    pub thinning: f64,
}

fn read_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), msg: e.to_string() })
}

fn core_error(section: &str, e: CoreError) -> ConfigError {
    match e {
        CoreError::Domain { name, value, range } => invalid(&format!("{section}.{name}"), format!("{value} is outside {range}")),
        other => invalid(section, other.to_string()),
    }
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(key, format!("{v} must be a positive finite number")))
    }
}

/// Merges the optional config file with the flags and validates the result.
/// `subcommand` fixes the experiment when the caller used one.
pub fn load_config(subcommand: Option<Experiment>, experiment_flag: Option<Experiment>, o: &Overrides) -> Result<RunConfig, ConfigError> {
    let f = match &o.config {
        Some(path) => read_file(path)?,
        None => FileConfig::default(),
    };

    let experiment = subcommand
        .or(experiment_flag)
        .or(f.run.experiment)
        .ok_or(ConfigError::Missing("run.experiment", "experiment"))?;
    let seed = o.seed.or(f.run.seed).ok_or(ConfigError::Missing("run.seed", "seed"))?;
    let strict = o.strict || f.run.strict.unwrap_or(false);

    // verify needs no model; everything else requires the model and start
    let needs = experiment.needs_model();
    macro_rules! pick {
        ($flag:expr, $file:expr, $key:literal, $cli:literal, $default:expr) => {
            match $flag.or($file) {
                Some(v) => v,
                None if needs => return Err(ConfigError::Missing($key, $cli)),
                None => $default,
            }
        };
    }
    let model = ModelParams {
        sigma: pick!(o.sigma, f.model.sigma, "model.sigma", "sigma", 0.0),
        gamma: pick!(o.gamma, f.model.gamma, "model.gamma", "gamma", 1.0),
        theta_l: pick!(o.theta_l, f.model.theta_l, "model.theta_l", "theta-l", 0.0),
        theta_h: pick!(o.theta_h, f.model.theta_h, "model.theta_h", "theta-h", 0.0),
        r: pick!(o.r, f.model.r, "model.r", "r", 0.5),
        n_scale: o.n_scale.or(f.model.n_scale).unwrap_or(1),
    };
    model.validate().map_err(|e| core_error("model", e))?;
    let init = InitResolved {
        x: pick!(o.x, f.init.x, "init.x", "x", 0.5),
        p: pick!(o.p, f.init.p, "init.p", "p", 0.5),
        q: pick!(o.q, f.init.q, "init.q", "q", 0.5),
    };
    init.condition().validate().map_err(|e| core_error("init", e))?;

    let default_dt = match experiment {
        Experiment::SimulatePrelimit => fluctsel_core::prelimit::default_dt(&model),
        _ => fluctsel_core::limit::default_dt(&model),
    };
    let numerics = NumericsResolved {
        dt: positive("numerics.dt", o.dt.or(f.numerics.dt).unwrap_or(default_dt))?,
        horizon: positive("numerics.horizon", o.horizon.or(f.numerics.horizon).unwrap_or(1.0))?,
        replicas: o.replicas.or(f.numerics.replicas).unwrap_or(10_000),
        eps_absorb: o.eps_absorb.or(f.numerics.eps_absorb).unwrap_or(fluctsel_core::limit::DEFAULT_EPS_ABSORB),
        t_cap: positive("numerics.t_cap", o.t_cap.or(f.numerics.t_cap).unwrap_or(fluctsel_core::limit::DEFAULT_T_CAP))?,
        n_max: o.n_max.or(f.numerics.n_max).unwrap_or(fluctsel_core::dual::DEFAULT_N_MAX),
    };
    if !(numerics.eps_absorb > 0.0 && numerics.eps_absorb <= 0.01) {
        return Err(invalid("numerics.eps_absorb", format!("{} is outside (0, 0.01]", numerics.eps_absorb)));
    }
    if numerics.replicas == 0 {
        return Err(invalid("numerics.replicas", "must be at least 1"));
    }
    let min_replicas = match experiment {
        Experiment::Fixation | Experiment::Moments | Experiment::Dual => 1000,
        Experiment::Convergence => 100,
        _ => 1,
    };
    if numerics.replicas < min_replicas {
        return Err(invalid(
            "numerics.replicas",
            format!("{} needs at least {min_replicas} replicas, got {}", experiment.name(), numerics.replicas),
        ));
    }
    if numerics.n_max == 0 || numerics.n_max > fluctsel_core::dual::N_MAX_LIMIT {
        return Err(invalid("numerics.n_max", format!("{} is outside [1, {}]", numerics.n_max, fluctsel_core::dual::N_MAX_LIMIT)));
    }
    match experiment {
        Experiment::SimulatePrelimit => fluctsel_core::prelimit::check_step(&model, numerics.dt),
        Experiment::SimulateLimit | Experiment::Fixation | Experiment::Dual => fluctsel_core::limit::check_step(&model, numerics.dt),
        _ => Ok(()),
    }
    .map_err(|e| invalid("numerics.dt", e.to_string()))?;

    let format = o.format.or(f.output.format).unwrap_or(Format::Csv);
    let path = o
        .output
        .clone()
        .or(f.output.path)
        .unwrap_or_else(|| PathBuf::from(format!("{}.{}", experiment.name(), format.extension())));

    let n_values = o.n_values.clone().or(f.convergence.n_values).unwrap_or_else(|| vec![4, 8, 16]);
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(invalid("convergence.n_values", "needs at least one N, all >= 1"));
    }
    let batches = o.batches.or(f.fixation.batches).unwrap_or(10);
    if batches == 0 || batches > numerics.replicas {
        return Err(invalid("fixation.batches", format!("{batches} is outside [1, replicas]")));
    }
    let verify = VerifyResolved {
        identity_draws: o.identity_draws.or(f.verify.identity_draws).unwrap_or(10_000),
        symmetry_draws: o.symmetry_draws.or(f.verify.symmetry_draws).unwrap_or(1000),
    };
    if verify.identity_draws == 0 {
        return Err(invalid("verify.identity_draws", "must be at least 1"));
    }
    if verify.symmetry_draws == 0 {
        return Err(invalid("verify.symmetry_draws", "must be at least 1"));
    }

    let s = model.s2g();
    if experiment == Experiment::Dual && 2.0 * s >= 1.0 {
        return Err(invalid(
            "model.sigma",
            format!("2*sigma^2/gamma = {:.6} but the dual process needs 2*sigma^2/gamma < 1 to be non-explosive", 2.0 * s),
        ));
    }
    let thinning = o.thinning.or(f.dual.thinning).unwrap_or_else(|| fluctsel_core::dual::default_thinning(s));
    if !(thinning > 0.0 && thinning <= 1.0) {
        return Err(invalid("dual.thinning", format!("{thinning} is outside (0, 1]")));
    }

    Ok(RunConfig {
        run: RunResolved { experiment, seed, strict },
        model,
        init,
        numerics,
        output: OutputResolved { path, format },
        convergence: ConvergenceResolved { n_values },
        fixation: FixationResolved { batches },
        verify,
        dual: DualResolved { phi: o.phi.or(f.dual.phi).unwrap_or(TypeName::H0), thinning },
    })
}

impl RunConfig {
    /// The resolved configuration as TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }
}
