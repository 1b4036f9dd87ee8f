//! Versioned experiment configuration.

use std::path::Path;

use landau_core::degiorgi::Mode;
use landau_core::grid::GridSpec;
use landau_core::inequalities::PoincareFamily;
use landau_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};
use crate::initial::InitialData;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Conservation,
    Coercivity,
    Rates,
    Poincare,
    Degiorgi,
    Moments,
    LorentzSelftest,
    Inequalities,
}

impl Scenario {
    pub fn needs_solver(self) -> bool {
        matches!(self, Self::Conservation | Self::Rates | Self::Degiorgi | Self::Moments)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "three")]
    pub d: usize,
    pub n: usize,
    pub half_width: f64,
}

fn three() -> usize {
    3
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(self.d, self.n, self.half_width)?)
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..*self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConservationBlock {
    /// Second resolution for the drift-halving comparison.
    #[serde(default)]
    pub refine_n: Option<usize>,
    #[serde(default = "mass_tol")]
    pub mass_tol: f64,
    #[serde(default = "drift_tol")]
    pub drift_tol: f64,
    #[serde(default = "entropy_rate_tol")]
    pub entropy_rate_tol: f64,
    /// Drifts below this are round-off and count as halved.
    #[serde(default = "mass_tol")]
    pub roundoff_floor: f64,
}

fn mass_tol() -> f64 {
    1e-12
}
fn drift_tol() -> f64 {
    1e-4
}
fn entropy_rate_tol() -> f64 {
    1e-6
}

impl Default for ConservationBlock {
    fn default() -> Self {
        Self {
            refine_n: None,
            mass_tol: mass_tol(),
            drift_tol: drift_tol(),
            entropy_rate_tol: entropy_rate_tol(),
            roundoff_floor: mass_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoercivityBlock {
    pub refine_n: usize,
    pub gamma: f64,
    pub densities: Vec<InitialData>,
    #[serde(default = "five_percent")]
    pub tol: f64,
}

fn five_percent() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesBlock {
    #[serde(default)]
    pub s: f64,
    #[serde(default = "two")]
    pub p: f64,
    /// Defaults to `-d (p - 1) / 2`.
    #[serde(default)]
    pub target_slope: Option<f64>,
    #[serde(default = "twenty_percent")]
    pub tol: f64,
    #[serde(default = "five")]
    pub min_points: usize,
}

fn two() -> f64 {
    2.0
}
fn twenty_percent() -> f64 {
    0.2
}
fn five() -> usize {
    5
}

impl Default for RatesBlock {
    fn default() -> Self {
        Self { s: 0.0, p: 2.0, target_slope: None, tol: 0.2, min_points: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareBlock {
    pub gammas: Vec<f64>,
    /// `eps = 10^(lo + k / per_decade)` up to `10^hi`.
    pub eps_lo: f64,
    pub eps_hi: f64,
    #[serde(default = "eight")]
    pub per_decade: usize,
    #[serde(default)]
    pub family: PoincareFamily,
    #[serde(default = "quarter")]
    pub tol: f64,
    #[serde(default = "two")]
    pub min_decades: f64,
}

fn eight() -> usize {
    8
}
fn quarter() -> f64 {
    0.25
}

impl PoincareBlock {
    pub fn eps(&self) -> Vec<f64> {
        let steps = ((self.eps_hi - self.eps_lo) * self.per_decade as f64).round() as usize;
        (0..=steps).map(|k| 10f64.powf(self.eps_lo + k as f64 / self.per_decade as f64)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeGiorgiBlock {
    pub s: f64,
    #[serde(default)]
    pub p_gamma: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub t_star: f64,
    #[serde(default = "t_stars")]
    pub t_stars: Vec<f64>,
    #[serde(default = "n_max")]
    pub n_max: usize,
    #[serde(default = "ledger")]
    pub mode: Mode,
    /// Coercivity constant; defaults to a quarter of the measured `K0`.
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default = "four")]
    pub sup_factor: f64,
    #[serde(default = "thirty_percent")]
    pub exponent_tol: f64,
}

fn t_stars() -> Vec<f64> {
    vec![0.1, 0.2, 0.4, 0.8]
}
fn n_max() -> usize {
    8
}
fn ledger() -> Mode {
    Mode::Ledger
}
fn four() -> f64 {
    4.0
}
fn thirty_percent() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsBlock {
    #[serde(default = "four")]
    pub s: f64,
    #[serde(default = "five_percent")]
    pub envelope: f64,
}

impl Default for MomentsBlock {
    fn default() -> Self {
        Self { s: 4.0, envelope: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailCase {
    pub r1: f64,
    pub r2: f64,
    pub s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdCase {
    pub eps: f64,
    pub c_tilde: f64,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalitiesBlock {
    /// Data for the tail bound; each is normalised on the main grid.
    pub data: Vec<InitialData>,
    pub tail: Vec<TailCase>,
    pub thresholds: Vec<ThresholdCase>,
    /// Coarse and fine resolutions for the interpolation constants.
    #[serde(default = "level_ns")]
    pub level_n: (usize, usize),
    #[serde(default = "minus_one")]
    pub level_gamma: f64,
    #[serde(default = "family_size")]
    pub level_family: usize,
    #[serde(default = "twenty_percent")]
    pub level_tol: f64,
}

fn level_ns() -> (usize, usize) {
    (24, 32)
}
fn minus_one() -> f64 {
    -1.0
}
fn family_size() -> usize {
    12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    pub scenario: Scenario,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default = "default_initial")]
    pub initial: InitialData,
    #[serde(default)]
    pub seed: u64,
    /// Resume from the checkpoint in the output directory when present.
    #[serde(default)]
    pub restart: bool,
    /// Snapshots between checkpoints; 0 disables checkpointing.
    #[serde(default = "checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub conservation: Option<ConservationBlock>,
    #[serde(default)]
    pub coercivity: Option<CoercivityBlock>,
    #[serde(default)]
    pub rates: Option<RatesBlock>,
    #[serde(default)]
    pub poincare: Option<PoincareBlock>,
    #[serde(default)]
    pub degiorgi: Option<DeGiorgiBlock>,
    #[serde(default)]
    pub moments: Option<MomentsBlock>,
    #[serde(default)]
    pub inequalities: Option<InequalitiesBlock>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_initial() -> InitialData {
    InitialData::Maxwellian
}
fn checkpoint_every() -> usize {
    10
}

impl ExperimentConfig {
    /// Minimal config for `scenario` on `grid`; blocks are left empty.
    pub fn new(name: &str, scenario: Scenario, grid: GridConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            scenario,
            grid,
            solver: None,
            initial: default_initial(),
            seed: 0,
            restart: false,
            checkpoint_every: checkpoint_every(),
            conservation: None,
            coercivity: None,
            rates: None,
            poincare: None,
            degiorgi: None,
            moments: None,
            inequalities: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Schema { found: self.schema_version, expected: SCHEMA_VERSION });
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(HarnessError::Config(format!("name {:?} is not a plain directory name", self.name)));
        }
        self.grid.spec()?;
        if self.scenario.needs_solver() {
            self.solver()?.validate()?;
        }
        let missing = |block: &str| HarnessError::Config(format!("scenario needs a `{block}` block"));
        match self.scenario {
            Scenario::Coercivity if self.coercivity.is_none() => Err(missing("coercivity")),
            Scenario::Poincare if self.poincare.is_none() => Err(missing("poincare")),
            Scenario::Degiorgi if self.degiorgi.is_none() => Err(missing("degiorgi")),
            Scenario::Inequalities if self.inequalities.is_none() => Err(missing("inequalities")),
            _ => Ok(()),
        }
    }

    pub fn solver(&self) -> Result<&SolverConfig> {
        self.solver.as_ref().ok_or_else(|| HarnessError::Config("scenario needs a `solver` block".into()))
    }
}

pub fn load(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse(&text).map_err(|e| match e {
        HarnessError::Json(source) => HarnessError::Parse { path: path.into(), source },
        other => other,
    })
}

/// A config file holds one experiment or a list of them.
pub fn parse(text: &str) -> Result<Vec<ExperimentConfig>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let configs = if value.is_array() {
        serde_json::from_value::<Vec<ExperimentConfig>>(value)?
    } else {
        vec![serde_json::from_value::<ExperimentConfig>(value)?]
    };
    Ok(configs)
}
