//! Scripted scenario runs: configuration, execution, and reporting.
//!
//! Two built-in scenarios ship with the crate: a 1-D toy system and a
//! five-stack fuel-cell plant. Each runs either with corrections enabled
//! (`picof`) or as the uncorrected safe-BO baseline, on matched candidate
//! streams, and serializes a deterministic `trace.csv` plus a `summary.json`
//! (which carries the non-deterministic wall-clock data and a scenario hash
//! for provenance).

mod compare;
mod fuelcell;
mod toy;

pub use compare::{compare_pair, ComparisonReport, SeedComparison};
pub use fuelcell::{run_fuelcell, FcRunArtifacts};
pub use toy::{grid_sweep_csv, run_toy, ToyRunArtifacts};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::outer::{RefitSchedule, SolverConfig};
use crate::plants::fuelcell::FcStackParams;
use crate::plants::REACTION_ENTHALPY_KJ_PER_MOL;
use crate::reconcile::{CorrectionMode, WeightMode};
use crate::trace::{ReconcileAudit, RunTrace};

/// Which loop variant a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Picof,
    Baseline,
}

impl RunMode {
    pub fn is_picof(self) -> bool {
        matches!(self, RunMode::Picof)
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            RunMode::Picof => "picof",
            RunMode::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Gaussian-process settings shared by both scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    /// Observation noise variance on the standardized output scale.
    pub noise_variance: f64,
    /// Re-optimize hyperparameters after this many new observations.
    pub refit_every: usize,
    pub optimize_on_init: bool,
    /// Multi-start count for the marginal-likelihood search.
    pub restarts: usize,
    /// Simplex iterations per start.
    pub search_iters: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            noise_variance: 1e-6,
            refit_every: 5,
            optimize_on_init: true,
            restarts: 4,
            search_iters: 200,
        }
    }
}

impl GpConfig {
    pub fn refit_schedule(&self) -> RefitSchedule {
        RefitSchedule {
            refit_every: self.refit_every,
            optimize_on_init: self.optimize_on_init,
        }
    }

    pub fn search_options(&self) -> crate::gp::OptimizeOptions<f64> {
        crate::gp::OptimizeOptions {
            restarts: self.restarts,
            max_iters: self.search_iters,
            ..crate::gp::OptimizeOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_variance < 0.0 {
            return Err(Error::config("gp noise variance must be non-negative"));
        }
        if self.restarts == 0 || self.search_iters == 0 {
            return Err(Error::config("gp search counts must be at least 1"));
        }
        Ok(())
    }
}

/// Weight policy configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub mode: WeightMode,
    pub coefficients: Vec<f64>,
    pub floor: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            mode: WeightMode::SigmaScaled,
            coefficients: vec![0.5, 0.008],
            floor: 1e-8,
        }
    }
}

impl WeightConfig {
    pub fn policy(&self) -> Result<crate::reconcile::WeightPolicy<f64>> {
        let mut policy =
            crate::reconcile::WeightPolicy::new(self.mode, self.coefficients.clone())?;
        if self.floor > 0.0 {
            policy.floor = self.floor;
        } else {
            return Err(Error::config("weight floor must be positive"));
        }
        Ok(policy)
    }
}

/// The 1-D toy scenario (paper-reported settings as defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyScenario {
    pub name: String,
    pub init_x: Vec<f64>,
    pub trials: usize,
    pub z: f64,
    pub beta: f64,
    pub constraint_limit: f64,
    pub bounds: (f64, f64),
    pub grid_points: usize,
    /// Per-channel observation noise std (noiseless by default).
    pub noise_std: [f64; 2],
    pub correction_mode: CorrectionMode,
    pub weights: WeightConfig,
    pub gp: GpConfig,
    pub solver: SolverConfig<f64>,
}

impl Default for ToyScenario {
    fn default() -> Self {
        Self {
            name: "toy".into(),
            init_x: vec![0.2, 0.1, 0.05],
            trials: 25,
            z: 10.0,
            beta: 2.0,
            constraint_limit: 140.0,
            bounds: (0.0, 2.0),
            grid_points: 101,
            noise_std: [0.0, 0.0],
            correction_mode: CorrectionMode::Additive,
            weights: WeightConfig::default(),
            gp: GpConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl ToyScenario {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("toy scenario needs at least one trial"));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid needs at least two points"));
        }
        if !(self.bounds.1 > self.bounds.0) {
            return Err(Error::config("toy bounds must be non-degenerate"));
        }
        if self.init_x.is_empty()
            || self
                .init_x
                .iter()
                .any(|x| !(self.bounds.0..=self.bounds.1).contains(x))
        {
            return Err(Error::config("toy init points must lie inside the bounds"));
        }
        if self.weights.coefficients.len() != 2 {
            return Err(Error::config("toy scenario has exactly two channels"));
        }
        if self.noise_std.iter().any(|s| *s < 0.0) {
            return Err(Error::config("noise std must be non-negative"));
        }
        self.weights.policy()?;
        self.gp.validate()?;
        self.solver.validate()?;
        Ok(())
    }
}

/// One stack's configuration entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcStackConfig {
    pub eta_a: f64,
    pub eta_b: f64,
    pub eta_cq: f64,
    pub x_max_kw: f64,
    pub tau_s: f64,
}

impl FcStackConfig {
    pub fn params(&self) -> FcStackParams<f64> {
        FcStackParams {
            eta_a: self.eta_a,
            eta_b: self.eta_b,
            eta_cq: self.eta_cq,
            x_max: self.x_max_kw,
            tau: self.tau_s,
        }
    }
}

/// Pre-training sweep for the fuel-cell surrogates.
///
/// Each seeded setpoint vector draws one round-robin "probe" stack from the
/// probe range and every other stack from the low range, so all stacks see
/// their high-load behavior while every pre-training total stays well
/// inside the thermal limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcPretraining {
    pub points: usize,
    pub low_min_kw: f64,
    pub low_max_kw: f64,
    pub probe_min_kw: f64,
    pub probe_max_kw: f64,
    /// Settling horizon per point, seconds.
    pub settle_s: f64,
}

impl Default for FcPretraining {
    fn default() -> Self {
        Self {
            points: 8,
            low_min_kw: 10.0,
            low_max_kw: 50.0,
            probe_min_kw: 65.0,
            probe_max_kw: 90.0,
            settle_s: 2000.0,
        }
    }
}

/// The five-stack fuel-cell scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcScenario {
    pub name: String,
    pub version: u32,
    pub z: f64,
    pub beta: f64,
    pub sampling_interval_s: f64,
    pub duration_s: f64,
    pub power_reference_kw: f64,
    /// Total thermal load limit; the default is 95% of the equal-split
    /// thermal load at the power reference, computed from the stack table.
    pub thermal_limit_kw: f64,
    /// Objective weight on squared hydrogen rates.
    pub alpha1: f64,
    /// Scale applied to the squared hydrogen rates (mol/s)^2 before alpha1.
    pub hydrogen_rate_scale: f64,
    /// Objective weight per kW^2 of power tracking error.
    pub alpha2: f64,
    pub reaction_enthalpy_kj_per_mol: f64,
    pub simulator_dt_s: f64,
    pub stacks: Vec<FcStackConfig>,
    pub pretraining: FcPretraining,
    pub correction_mode: CorrectionMode,
    /// Weight coefficient per hydrogen channel.
    pub weight_k_hydrogen: f64,
    /// Weight coefficient per thermal channel.
    pub weight_k_thermal: f64,
    pub weight_mode: WeightMode,
    pub weight_floor: f64,
    pub gp: GpConfig,
    pub solver: SolverConfig<f64>,
}

/// Frozen five-stack table: distinct quadratic efficiency curves peaking
/// between 45% and 58% at 30-45% load, declining at high load, with spread
/// time constants. Curvatures are kept moderate enough that trained
/// surrogates extrapolate the thermal maps within their one-sigma bands
/// over the rated range.
fn default_stacks() -> Vec<FcStackConfig> {
    // (eta peak, peak load fraction, curvature, tau): eta(u) = p - k (u-up)^2.
    [
        (0.580, 0.45, 0.14, 25.0),
        (0.548, 0.42, 0.16, 32.0),
        (0.516, 0.38, 0.20, 40.0),
        (0.482, 0.34, 0.26, 48.0),
        (0.450, 0.30, 0.33, 55.0),
    ]
    .iter()
    .map(|&(peak, up, k, tau_s)| FcStackConfig {
        eta_a: peak - k * up * up,
        eta_b: 2.0 * k * up,
        eta_cq: -k,
        x_max_kw: 100.0,
        tau_s,
    })
    .collect()
}

impl Default for FcScenario {
    fn default() -> Self {
        let stacks = default_stacks();
        let power_reference_kw = 360.0;
        let thermal_limit_kw =
            0.95 * equal_split_thermal_kw(&stacks, power_reference_kw, REACTION_ENTHALPY_KJ_PER_MOL);
        Self {
            name: "fuelcell".into(),
            version: 1,
            z: 10_000.0,
            beta: 1.0,
            sampling_interval_s: 250.0,
            duration_s: 10_000.0,
            power_reference_kw,
            thermal_limit_kw,
            alpha1: 1.0,
            hydrogen_rate_scale: 1e3,
            alpha2: 10.0,
            reaction_enthalpy_kj_per_mol: REACTION_ENTHALPY_KJ_PER_MOL,
            simulator_dt_s: 2.0,
            stacks,
            pretraining: FcPretraining::default(),
            correction_mode: CorrectionMode::Additive,
            weight_k_hydrogen: 0.5,
            weight_k_thermal: 4e-8,
            weight_mode: WeightMode::SigmaScaled,
            weight_floor: 1e-8,
            gp: GpConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Total thermal load of the equal-split allocation delivering `total_kw`.
pub fn equal_split_thermal_kw(stacks: &[FcStackConfig], total_kw: f64, dh: f64) -> f64 {
    let share = total_kw / stacks.len() as f64;
    stacks
        .iter()
        .map(|s| {
            let params = s.params();
            let eta = params.efficiency(share / s.x_max_kw);
            share / (eta * dh) * dh - share
        })
        .sum()
}

impl FcScenario {
    pub fn steps(&self) -> usize {
        (self.duration_s / self.sampling_interval_s).round() as usize
    }

    pub fn stack_params(&self) -> Vec<FcStackParams<f64>> {
        self.stacks.iter().map(|s| s.params()).collect()
    }

    pub fn weight_config(&self) -> WeightConfig {
        let n = self.stacks.len();
        let mut coefficients = vec![self.weight_k_hydrogen; n];
        coefficients.extend(vec![self.weight_k_thermal; n]);
        WeightConfig {
            mode: self.weight_mode,
            coefficients,
            floor: self.weight_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stacks.is_empty() {
            return Err(Error::config("fuel-cell scenario needs stacks"));
        }
        for stack in &self.stacks {
            stack.params().validate()?;
        }
        // Pairwise-distinct efficiency curves (>= 1 percentage point apart
        // somewhere in the load range) keep the allocation problem
        // non-trivial.
        for i in 0..self.stacks.len() {
            for j in i + 1..self.stacks.len() {
                let (a, b) = (self.stacks[i].params(), self.stacks[j].params());
                let mut max_gap = 0.0_f64;
                let mut u = 0.05;
                while u <= 1.0 {
                    max_gap = max_gap.max((a.efficiency(u) - b.efficiency(u)).abs());
                    u += 0.01;
                }
                if max_gap < 0.01 {
                    return Err(Error::config(format!(
                        "stacks {i} and {j} are within 1 percentage point everywhere"
                    )));
                }
            }
        }
        let steps_f = self.duration_s / self.sampling_interval_s;
        if self.sampling_interval_s <= 0.0 || (steps_f - steps_f.round()).abs() > 1e-9 {
            return Err(Error::config(
                "duration must be a positive multiple of the sampling interval",
            ));
        }
        if self.steps() == 0 {
            return Err(Error::config("schedule yields zero steps"));
        }
        if self.power_reference_kw <= 0.0 || self.thermal_limit_kw <= 0.0 {
            return Err(Error::config("references and limits must be positive"));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 || self.hydrogen_rate_scale <= 0.0 {
            return Err(Error::config("objective weights must be non-negative"));
        }
        if self.reaction_enthalpy_kj_per_mol <= 0.0 {
            return Err(Error::config("reaction enthalpy must be positive"));
        }
        if self.pretraining.points == 0 {
            return Err(Error::config("pre-training needs at least one point"));
        }
        let max_rating = self
            .stacks
            .iter()
            .map(|s| s.x_max_kw)
            .fold(f64::INFINITY, f64::min);
        let pt = &self.pretraining;
        if !(0.0 <= pt.low_min_kw
            && pt.low_min_kw < pt.low_max_kw
            && pt.low_max_kw <= pt.probe_min_kw
            && pt.probe_min_kw < pt.probe_max_kw
            && pt.probe_max_kw <= max_rating)
        {
            return Err(Error::config("pre-training setpoint ranges invalid"));
        }
        if pt.settle_s < self.simulator_dt_s {
            return Err(Error::config("pre-training settle horizon too short"));
        }
        // Every pre-training vector (one probe stack high, rest low) stays
        // inside the thermal limit even in the worst case.
        let thermal_at = |s: &FcStackConfig, x: f64| {
            let params = s.params();
            x / params.efficiency(x / s.x_max_kw) - x
        };
        for probe_idx in 0..self.stacks.len() {
            let total: f64 = self
                .stacks
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    if j == probe_idx {
                        thermal_at(s, pt.probe_max_kw)
                    } else {
                        thermal_at(s, pt.low_max_kw)
                    }
                })
                .sum();
            if total > 0.97 * self.thermal_limit_kw {
                return Err(Error::config(format!(
                    "pre-training sweep can reach {total:.1} kW thermal, too close to the limit {:.1}",
                    self.thermal_limit_kw
                )));
            }
        }
        self.weight_config().policy()?;
        self.gp.validate()?;
        self.solver.validate()?;
        Ok(())
    }
}

/// A scenario file: tagged union of the built-in kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Toy(ToyScenario),
    Fuelcell(FcScenario),
}

impl Scenario {
    pub fn name(&self) -> &str {
        match self {
            Scenario::Toy(s) => &s.name,
            Scenario::Fuelcell(s) => &s.name,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::Toy(s) => s.validate(),
            Scenario::Fuelcell(s) => s.validate(),
        }
    }

    pub fn from_toml(content: &str) -> Result<Self> {
        toml::from_str(content).map_err(|e| Error::config(format!("scenario parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml(&content)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// SHA-256 over the canonical serialized scenario, for provenance.
    pub fn hash(&self) -> Result<String> {
        let canonical = self.to_toml()?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(hex_string(&hasher.finalize()))
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Defaults the paper leaves unstated, echoed for transparency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumedDefaults {
    pub beta: f64,
    pub observation_noise_std: Vec<f64>,
}

/// Per-channel model state snapshot for the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpChannelSummary {
    pub name: String,
    pub observations: usize,
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

/// JSON run summary: config echo, seeds, totals, timings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub mode: RunMode,
    pub steps: usize,
    pub violations: usize,
    pub final_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cumulative_h2_mol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_total_thermal_kw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_total_power_last10_kw: Option<f64>,
    pub wall_clock_s: f64,
    pub step_wall_ms: Vec<f64>,
    pub reconcile: ReconcileAudit,
    pub inner_nonconverged_steps: usize,
    pub gp_channels: Vec<GpChannelSummary>,
    pub assumed_defaults: AssumedDefaults,
    pub scenario: Scenario,
}

impl RunSummary {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        serde_json::from_str(&content).map_err(|e| Error::Serialize(e.to_string()))
    }
}

/// Output directory for one `(scenario, seed, mode)` run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    /// `out_root/<scenario>/<seed>/<mode>/`, refusing collisions unless
    /// `force` is set.
    pub fn prepare(
        out_root: &Path,
        scenario_name: &str,
        seed: u64,
        mode: RunMode,
        force: bool,
    ) -> Result<Self> {
        let dir = out_root
            .join(scenario_name)
            .join(seed.to_string())
            .join(mode.dir_name());
        if dir.exists() {
            if !force {
                return Err(Error::OutputCollision(dir.display().to_string()));
            }
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn trace_csv(&self) -> PathBuf {
        self.dir.join("trace.csv")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.dir.join("summary.json")
    }

    pub fn grid_first_csv(&self) -> PathBuf {
        self.dir.join("grid_trial_first.csv")
    }

    pub fn grid_last_csv(&self) -> PathBuf {
        self.dir.join("grid_trial_last.csv")
    }
}

/// Writes the deterministic trace plus the summary.
pub fn write_run_outputs(paths: &RunPaths, trace: &RunTrace<f64>, summary: &RunSummary) -> Result<()> {
    trace.write_csv(&paths.trace_csv())?;
    std::fs::write(paths.summary_json(), summary.to_json()?)?;
    Ok(())
}
