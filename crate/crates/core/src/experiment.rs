//! JSON-configured experiments: SNR sweeps of the bounds and protocol runs.
//!
//! A config is a single JSON document:
//!
//! ```json
//! {
//!   "scenario": "full_csi",
//!   "fading": {
//!     "case": "equal_means",
//!     "main": {"family": "chi_square", "dof": 4, "scale": 0.25},
//!     "eve":  {"family": "chi_square", "dof": 4, "scale": 0.25}
//!   },
//!   "snr_db_grid": [0, 10, 20, 30, 40],
//!   "mc": {"samples": 1000000, "seed": 7}
//! }
//! ```
//!
//! Optional keys: `tolerance`, `policies` (a menu of policy families; the
//! standard menu for the scenario is used when absent), `q`, `sim` and
//! `output`. Sweep points share one set of channel draws, and output rows are
//! ordered by grid index, so identical configs give byte-identical files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{BoundResult, Evaluator, QChoice, CSV_HEADER};
use crate::channel::{FadingSpec, GainFamily};
use crate::error::Error;
use crate::numerics::{McConfig, Tolerance};
use crate::power::{standard_menu, Csi, PolicyFamily, PowerBudget};
use crate::protocol::{self, SimConfig, SimMode, SimReport, TraceRow, TRACE_HEADER};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl ExperimentError {
    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Numerical(_) => 3,
            ExperimentError::Io { .. } => 1,
        }
    }
}

impl From<Error> for ExperimentError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(_) | Error::Precondition(_) | Error::CsiMismatch(_) | Error::EmptyMenu => {
                ExperimentError::Config(e.to_string())
            }
            other => ExperimentError::Numerical(other),
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    FullCsi,
    MainCsi,
}

impl Scenario {
    fn csi(self) -> Csi {
        match self {
            Scenario::FullCsi => Csi::Full,
            Scenario::MainCsi => Csi::MainOnly,
        }
    }
}

/// Relationship between the two gain means, checked against the families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FadingCase {
    EqualMeans,
    /// `E[h_e] = 2 E[h_m]`.
    EveDoubleMean,
    #[default]
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingConfig {
    #[serde(default)]
    pub case: FadingCase,
    pub main: GainFamily,
    pub eve: GainFamily,
}

impl FadingConfig {
    pub fn spec(&self) -> FadingSpec {
        FadingSpec::new(self.main, self.eve)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<OutputFormat>,
}

fn default_n_prime() -> u64 {
    1000
}
fn default_sim_snr() -> f64 {
    20.0
}
fn default_delta_fraction() -> f64 {
    0.05
}
fn default_rate_scale() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    0.05
}
fn default_planning() -> usize {
    200_000
}

/// Protocol-run settings; everything not given is derived from the sweep
/// settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub s_count: usize,
    /// Single `B`; ignored when `b_sweep` is given.
    #[serde(default)]
    pub b_count: Option<usize>,
    /// One run per listed `B`.
    #[serde(default)]
    pub b_sweep: Option<Vec<usize>>,
    #[serde(default = "default_n_prime")]
    pub n_prime: u64,
    /// Defaults to `mc.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_sim_snr")]
    pub snr_db: f64,
    /// Defaults to channel inversion for the scenario when its power budget
    /// is finite, constant power otherwise.
    #[serde(default)]
    pub policy: Option<PolicyFamily>,
    /// Absolute key-rate backoff; overrides `delta_fraction`.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Backoff as a fraction of the mean key rate.
    #[serde(default = "default_delta_fraction")]
    pub delta_fraction: f64,
    /// Main-CSI data rate; defaults to `rate_scale` times the fixed-point rate.
    #[serde(default)]
    pub rate_target: Option<f64>,
    #[serde(default = "default_rate_scale")]
    pub rate_scale: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_eps")]
    pub epsilon_prime: f64,
    #[serde(default = "default_planning")]
    pub planning_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub fading: FadingConfig,
    pub snr_db_grid: Vec<f64>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub policies: Option<Vec<PolicyFamily>>,
    #[serde(default)]
    pub q: QChoice,
    #[serde(default)]
    pub sim: Option<SimSettings>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            ExperimentError::Config(format!(
                "line {}, column {}, field `{}`: {}",
                inner.line(),
                inner.column(),
                e.path(),
                inner
            ))
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn spec(&self) -> FadingSpec {
        self.fading.spec()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        self.mc.validate()?;
        self.tolerance.validate()?;
        let grid = &self.snr_db_grid;
        if grid.is_empty() {
            return Err(ExperimentError::Config("snr_db_grid must not be empty".into()));
        }
        if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::Config(
                "snr_db_grid must be finite and strictly increasing".into(),
            ));
        }
        let (m, e) = (self.fading.main.mean(), self.fading.eve.mean());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        match self.fading.case {
            FadingCase::EqualMeans if !close(m, e) => {
                return Err(ExperimentError::Config(format!(
                    "fading.case equal_means but E[h_m] = {m}, E[h_e] = {e}"
                )))
            }
            FadingCase::EveDoubleMean if !close(2.0 * m, e) => {
                return Err(ExperimentError::Config(format!(
                    "fading.case eve_double_mean but E[h_m] = {m}, E[h_e] = {e}"
                )))
            }
            _ => {}
        }
        if let Some(menu) = &self.policies {
            if menu.is_empty() {
                return Err(Error::EmptyMenu.into());
            }
            for family in menu {
                family.validate()?;
                if self.scenario == Scenario::MainCsi && family.requires_full_csi() {
                    return Err(Error::CsiMismatch(family.name().into()).into());
                }
            }
        }
        Ok(())
    }

    pub fn menu(&self) -> Vec<PolicyFamily> {
        self.policies
            .clone()
            .unwrap_or_else(|| standard_menu(self.scenario.csi(), &self.spec()))
    }

    fn evaluator(&self) -> Result<Evaluator> {
        Ok(Evaluator::new(&self.spec(), &self.mc, self.tolerance)?)
    }
}

fn budgets(config: &ExperimentConfig) -> Result<Vec<PowerBudget>> {
    config
        .snr_db_grid
        .iter()
        .map(|&db| PowerBudget::from_snr_db(db).map_err(ExperimentError::from))
        .collect()
}

/// Upper and lower bound per grid point, then the high-SNR reference row.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<BoundResult>> {
    config.validate()?;
    let eval = config.evaluator()?;
    let menu = config.menu();
    let points: Vec<_> = budgets(config)?
        .into_par_iter()
        .map(|budget| -> Result<[BoundResult; 2]> {
            Ok(match config.scenario {
                Scenario::FullCsi => [
                    eval.upper_full(budget, &menu)?,
                    eval.lower_full(budget, &menu, config.q)?,
                ],
                Scenario::MainCsi => [
                    eval.upper_main(budget, &menu)?,
                    eval.lower_main_fixed_point(budget, &menu)?,
                ],
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(2 * points.len() + 1);
    for p in points {
        rows.extend(p?);
    }
    rows.push(eval.high_snr_limit()?);
    Ok(rows)
}

/// Only the high-SNR limit.
pub fn run_highsnr(config: &ExperimentConfig) -> Result<Vec<BoundResult>> {
    config.validate()?;
    Ok(vec![crate::bounds::high_snr_limit(&config.spec(), &config.mc)?])
}

/// Main-CSI fixed-point rate per grid point.
pub fn run_fixedpoint(config: &ExperimentConfig) -> Result<Vec<BoundResult>> {
    config.validate()?;
    let menu: Vec<_> = match &config.policies {
        Some(m) => m.clone(),
        None => standard_menu(Csi::MainOnly, &config.spec()),
    };
    if let Some(f) = menu.iter().find(|f| f.requires_full_csi()) {
        return Err(Error::CsiMismatch(f.name().into()).into());
    }
    let eval = config.evaluator()?;
    budgets(config)?
        .into_par_iter()
        .map(|budget| Ok(eval.lower_main_fixed_point(budget, &menu)?))
        .collect()
}

/// The protocol configurations a `sim` section expands to.
pub fn sim_configs(config: &ExperimentConfig) -> Result<Vec<SimConfig>> {
    config.validate()?;
    let sim = config
        .sim
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("missing `sim` section".into()))?;
    let spec = config.spec();
    let (mode, csi) = match config.scenario {
        Scenario::FullCsi => (SimMode::FullCsi, Csi::Full),
        Scenario::MainCsi => (SimMode::MainCsi, Csi::MainOnly),
    };
    let family = sim.policy.unwrap_or_else(|| {
        let inversion = match mode {
            SimMode::FullCsi => PolicyFamily::InversionMin,
            SimMode::MainCsi => PolicyFamily::InversionMain,
        };
        if standard_menu(csi, &spec).contains(&inversion) {
            inversion
        } else {
            PolicyFamily::Constant
        }
    });
    let eval = config.evaluator()?;
    let budget = PowerBudget::from_snr_db(sim.snr_db)?;
    let policy = eval.calibrate(family, csi, budget)?;
    let rate_target = match mode {
        SimMode::FullCsi => 0.0,
        SimMode::MainCsi => match sim.rate_target {
            Some(r) => r,
            None => sim.rate_scale * eval.fixed_point_for(&policy)?.0.value,
        },
    };
    let b_list = match (&sim.b_sweep, sim.b_count) {
        (Some(list), _) if !list.is_empty() => list.clone(),
        (None, Some(b)) => vec![b],
        _ => return Err(ExperimentError::Config("sim needs `b_count` or a nonempty `b_sweep`".into())),
    };
    let mut base = SimConfig {
        s_count: sim.s_count,
        b_count: b_list[0],
        n_prime: sim.n_prime,
        seed: sim.seed.unwrap_or(config.mc.seed),
        spec,
        policy,
        delta: 0.0,
        mode,
        rate_target,
        epsilon: sim.epsilon,
        epsilon_prime: sim.epsilon_prime,
        planning_samples: sim.planning_samples,
    };
    base.validate()?;
    base.delta = match sim.delta {
        Some(d) => d,
        None => sim.delta_fraction * protocol::mean_key_rate(&base)?,
    };
    Ok(b_list
        .into_iter()
        .map(|b_count| SimConfig { b_count, ..base.clone() })
        .collect())
}

/// Runs every configured protocol simulation.
pub fn run_sim(config: &ExperimentConfig) -> Result<Vec<(SimReport, Vec<TraceRow>)>> {
    sim_configs(config)?
        .iter()
        .map(|c| Ok(protocol::run_with_trace(c)?))
        .collect()
}

pub fn bounds_csv(rows: &[BoundResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("results serialize");
    s.push('\n');
    s
}

/// Format implied by an explicit choice or the file extension (CSV default).
pub fn output_format(path: Option<&Path>, explicit: Option<OutputFormat>) -> OutputFormat {
    explicit.unwrap_or_else(|| match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => OutputFormat::Json,
        _ => OutputFormat::Csv,
    })
}

pub fn render_bounds(rows: &[BoundResult], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => bounds_csv(rows),
        OutputFormat::Json => to_json(rows),
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}
