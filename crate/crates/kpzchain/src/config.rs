//! Declarative run configuration: one TOML file describes the model, the
//! initial state, the evolution and probe schedule, the optional analysis
//! pass, and the output directory. Unknown keys are rejected everywhere so
//! typos fail loudly instead of silently running defaults.
//!
//! Environment variables never change physics; the only one honored,
//! `KPZCHAIN_THREADS`, caps worker threads for any parallel section and the
//! results are bit-identical at every setting.

use crate::algebra::ModelSpec;
use crate::engine::{ProbeKind, TrotterOrder, TruncationPolicy};
use crate::error::{Error, Result};
use crate::mpdo::{ChargeSpec, Mpdo};
use crate::scaling::ScalingFamily;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Full description of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub initial_state: InitialStateConfig,
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub analysis: Option<AnalysisConfig>,
    pub output: OutputConfig,
    /// Master seed; feeds the truncation policy.
    #[serde(default)]
    pub seed: u64,
}

/// Which product state the run starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    /// Unpolarized maximally mixed state.
    InfiniteTemperature,
    /// Charge domain wall of contrast `mu`.
    DomainWall,
    /// Domain wall of contrast `mu` on top of a uniform tilt `tilt`.
    MagnetizedDomainWall,
    /// Domain wall in one charge sector with uniform density
    /// `sector_density` in the complementary sector.
    SectorDomainWall,
    /// Energy-imbalance wall of strength `mu_e`.
    EnergyDomainWall,
}

/// Charge operator selector, resolved against the model's local dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeKind {
    SpinZ,
    Weight,
    ThreeLevelAlternate,
}

impl ChargeKind {
    pub fn resolve(self, local_dim: usize) -> Result<ChargeSpec> {
        match self {
            ChargeKind::SpinZ => ChargeSpec::spin_z(local_dim),
            ChargeKind::Weight => ChargeSpec::weight(local_dim),
            ChargeKind::ThreeLevelAlternate => {
                if local_dim != 3 {
                    return Err(Error::Config(format!(
                        "three_level_alternate charge needs local_dim = 3, got {local_dim}"
                    )));
                }
                ChargeSpec::three_level_alternate()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    pub recipe: RecipeKind,
    /// Domain-wall contrast μ.
    #[serde(default)]
    pub mu: f64,
    /// Uniform magnetization offset for `magnetized_domain_wall`.
    #[serde(default)]
    pub tilt: f64,
    /// Complementary-sector density for `sector_domain_wall`.
    #[serde(default)]
    pub sector_density: f64,
    /// Energy-wall strength for `energy_domain_wall`.
    #[serde(default)]
    pub mu_e: f64,
    /// Charge used for the wall and for charge probes.
    #[serde(default = "default_charge")]
    pub charge: ChargeKind,
}

fn default_charge() -> ChargeKind {
    ChargeKind::SpinZ
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderKind {
    First,
    Second,
}

impl From<OrderKind> for TrotterOrder {
    fn from(o: OrderKind) -> Self {
        match o {
            OrderKind::First => TrotterOrder::First,
            OrderKind::Second => TrotterOrder::Second,
        }
    }
}

/// Probe selector as written in the config file; charge probes use the
/// charge from `initial_state`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeName {
    ChargeProfile,
    TotalCharge,
    BondEnergies,
    BondDims,
    Trace,
}

fn default_probes() -> Vec<ProbeName> {
    vec![
        ProbeName::ChargeProfile,
        ProbeName::TotalCharge,
        ProbeName::Trace,
        ProbeName::BondDims,
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    #[serde(default = "default_order")]
    pub order: OrderKind,
    pub chi_max: usize,
    #[serde(default)]
    pub sv_cutoff: f64,
    #[serde(default = "default_radius")]
    pub preserve_radius: usize,
    #[serde(default)]
    pub override_feasibility: bool,
    /// Audit every n-th truncation; omit to disable.
    #[serde(default)]
    pub audit_stride: Option<u64>,
    pub t_max: f64,
    /// Record probes every `probe_interval` time units starting at 0 …
    #[serde(default)]
    pub probe_interval: Option<f64>,
    /// … or at these explicit times (exactly one of the two must be set).
    #[serde(default)]
    pub probe_times: Option<Vec<f64>>,
    #[serde(default = "default_probes")]
    pub probes: Vec<ProbeName>,
    /// Save a checkpoint after every n-th probe time; omit to disable.
    #[serde(default)]
    pub checkpoint_every_probes: Option<usize>,
}

fn default_order() -> OrderKind {
    OrderKind::Second
}

fn default_radius() -> usize {
    2
}

fn default_families() -> Vec<ScalingFamily> {
    vec![ScalingFamily::Kpz, ScalingFamily::Gauss]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Time window for the polarization-transfer power-law fit.
    #[serde(default)]
    pub transfer_window: Option<(f64, f64)>,
    /// Scaling-function shapes to fit profiles against.
    #[serde(default = "default_families")]
    pub families: Vec<ScalingFamily>,
    /// Probe times at which to fit the scaling shape (default: the last).
    #[serde(default)]
    pub scaling_times: Option<Vec<f64>>,
    /// External scaling-function table; omit to use the bundled one.
    #[serde(default)]
    pub scaling_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let ev = &self.evolution;
        if !(ev.dt > 0.0 && ev.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", ev.dt)));
        }
        if !(ev.t_max >= 0.0 && ev.t_max.is_finite()) {
            return Err(Error::Config(format!("t_max must be ≥ 0, got {}", ev.t_max)));
        }
        match (&ev.probe_interval, &ev.probe_times) {
            (Some(interval), None) => {
                if !(*interval > 0.0 && interval.is_finite()) {
                    return Err(Error::Config(format!(
                        "probe_interval must be positive, got {interval}"
                    )));
                }
            }
            (None, Some(times)) => {
                if times.is_empty() {
                    return Err(Error::Config("probe_times must not be empty".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("probe_times must be strictly increasing".into()));
                }
                if times.iter().any(|&t| t < 0.0 || t > ev.t_max || !t.is_finite()) {
                    return Err(Error::Config(
                        "probe_times must lie in [0, t_max] and be finite".into(),
                    ));
                }
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set either probe_interval or probe_times, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of probe_interval or probe_times is required".into(),
                ))
            }
        }
        if ev.probes.is_empty() {
            return Err(Error::Config("at least one probe is required".into()));
        }
        if ev.checkpoint_every_probes == Some(0) {
            return Err(Error::Config("checkpoint_every_probes must be ≥ 1 when set".into()));
        }
        self.policy().validate(self.model.local_dim)?;
        let st = &self.initial_state;
        if !st.mu.is_finite() || !st.tilt.is_finite() || !st.mu_e.is_finite() {
            return Err(Error::Config("initial-state parameters must be finite".into()));
        }
        if let Some(analysis) = &self.analysis {
            if let Some((a, b)) = analysis.transfer_window {
                if !(a < b) || a < 0.0 {
                    return Err(Error::Config(format!(
                        "transfer_window must be an increasing pair of times ≥ 0, got ({a}, {b})"
                    )));
                }
            }
            if analysis.families.is_empty() {
                return Err(Error::Config("analysis.families must not be empty".into()));
            }
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats must not be empty".into()));
        }
        Ok(())
    }

    /// The truncation policy implied by the evolution section and seed.
    pub fn policy(&self) -> TruncationPolicy {
        let ev = &self.evolution;
        TruncationPolicy {
            chi_max: ev.chi_max,
            sv_cutoff: ev.sv_cutoff,
            preserve_radius: ev.preserve_radius,
            override_feasibility: ev.override_feasibility,
            seed: self.seed,
            audit_stride: ev.audit_stride,
        }
    }

    /// The resolved probe schedule (always includes t = 0 and `t_max`).
    pub fn probe_times(&self) -> Vec<f64> {
        let ev = &self.evolution;
        if let Some(times) = &ev.probe_times {
            return times.clone();
        }
        let interval = ev.probe_interval.expect("validated");
        let mut times = Vec::new();
        let n = (ev.t_max / interval).round() as usize;
        for k in 0..=n {
            let t = (k as f64) * interval;
            if t <= ev.t_max + 1e-9 * interval {
                times.push(t.min(ev.t_max));
            }
        }
        if times.last().map_or(true, |&t| t < ev.t_max - 1e-9 * interval) {
            times.push(ev.t_max);
        }
        times
    }

    /// Charge operator shared by the wall recipe and the charge probes.
    pub fn charge_spec(&self) -> Result<ChargeSpec> {
        self.initial_state.charge.resolve(self.model.local_dim)
    }

    /// Probe kinds in config order.
    pub fn probe_kinds(&self) -> Result<Vec<ProbeKind>> {
        self.evolution
            .probes
            .iter()
            .map(|name| {
                Ok(match name {
                    ProbeName::ChargeProfile => ProbeKind::ChargeProfile(self.charge_spec()?),
                    ProbeName::TotalCharge => ProbeKind::TotalCharge(self.charge_spec()?),
                    ProbeName::BondEnergies => ProbeKind::BondEnergies,
                    ProbeName::BondDims => ProbeKind::BondDims,
                    ProbeName::Trace => ProbeKind::Trace,
                })
            })
            .collect()
    }

    /// Build the configured initial state.
    pub fn build_initial_state(&self) -> Result<Mpdo> {
        let l = self.model.length;
        let st = &self.initial_state;
        match st.recipe {
            RecipeKind::InfiniteTemperature => {
                Mpdo::infinite_temperature(l, self.model.local_dim)
            }
            RecipeKind::DomainWall => Mpdo::domain_wall(l, &self.charge_spec()?, st.mu),
            RecipeKind::MagnetizedDomainWall => {
                Mpdo::magnetized_domain_wall(l, &self.charge_spec()?, st.mu, st.tilt)
            }
            RecipeKind::SectorDomainWall => {
                Mpdo::sector_domain_wall(l, self.model.family, st.sector_density, st.mu)
            }
            RecipeKind::EnergyDomainWall => Mpdo::energy_domain_wall(&self.model, st.mu_e),
        }
    }

    /// JSON rendering of the whole config for the run manifest.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).map_err(|e| Error::Config(format!("config to JSON: {e}")))
    }
}
