use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, GaConfig, PolicyKind};
use crate::delay::DelayParams;
use crate::env::{AllocationMode, EnvConfig, WorkloadRanges};
use crate::error::{Error, Result};
use crate::topology::{Connectivity, Topology};
use crate::traces::{BoundingBox, MobilityModel, DEFAULT_SLOT_SECONDS};

/// One experiment: a scenario, a policy, a set of seeds and optionally a
/// sweep over one axis. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    /// Extra policies run by `sweep` on identical settings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<PolicyKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub mobility: MobilitySection,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Srcl
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub rows: usize,
    pub cols: usize,
    pub region_side: f64,
    pub connectivity: Connectivity,
    pub n_vehicles: usize,
    pub horizon: usize,
    pub tasks_per_slot: usize,
    /// Overrides the policy's default allocation rule.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationMode>,
    pub params: DelayParams,
    pub workload: WorkloadRanges,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            rows: 4,
            cols: 4,
            region_side: 4000.0,
            connectivity: Connectivity::High,
            n_vehicles: 100,
            horizon: 240,
            tasks_per_slot: 1,
            allocation: None,
            params: DelayParams::default(),
            workload: WorkloadRanges::default(),
        }
    }
}

impl EnvSection {
    pub fn topology(&self) -> Result<Topology> {
        Topology::grid(self.rows, self.cols, self.region_side, self.connectivity)
    }

    pub fn env_config(&self, policy: PolicyKind, seed: u64) -> Result<EnvConfig> {
        let mut c = EnvConfig::new(self.topology()?, self.n_vehicles, self.horizon, seed);
        c.params = self.params;
        c.workload = self.workload;
        c.tasks_per_slot = self.tasks_per_slot;
        c.allocation_mode = self.allocation.unwrap_or_else(|| policy.default_allocation());
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rows", self.rows),
            ("cols", self.cols),
            ("n_vehicles", self.n_vehicles),
            ("horizon", self.horizon),
            ("tasks_per_slot", self.tasks_per_slot),
        ] {
            if v == 0 {
                return Err(Error::validation(format!("env.{name}"), "must be at least 1"));
            }
        }
        if !(self.region_side > 0.0 && self.region_side.is_finite()) {
            return Err(Error::validation("env.region_side", "must be positive"));
        }
        self.params
            .validate()
            .map_err(|e| Error::validation("env.params", e.to_string()))?;
        self.workload.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MobilitySource {
    #[default]
    Synthetic,
    Trace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySection {
    pub source: MobilitySource,
    pub model: MobilityModel,
    /// Synthetic speed, m/s.
    pub speed: f64,
    pub slot_seconds: f64,
    /// Raw GPS trace (optionally gzip-compressed) or a slot CSV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
    /// Window start, seconds since epoch; earliest record when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_start: Option<f64>,
    pub bbox: BoundingBox,
}

impl Default for MobilitySection {
    fn default() -> Self {
        MobilitySection {
            source: MobilitySource::Synthetic,
            model: MobilityModel::RandomWaypoint,
            speed: 8.0,
            slot_seconds: DEFAULT_SLOT_SECONDS,
            trace_path: None,
            trace_start: None,
            bbox: BoundingBox::default(),
        }
    }
}

impl MobilitySection {
    fn validate(&self) -> Result<()> {
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(Error::validation("mobility.speed", "must be non-negative"));
        }
        if !(self.slot_seconds > 0.0 && self.slot_seconds.is_finite()) {
            return Err(Error::validation("mobility.slot_seconds", "must be positive"));
        }
        if self.source == MobilitySource::Trace && self.trace_path.is_none() {
            return Err(Error::validation(
                "mobility.trace_path",
                "required when mobility.source = \"trace\"",
            ));
        }
        self.bbox
            .validate()
            .map_err(|e| Error::validation("mobility.bbox", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out episodes per (sweep value, seed) cell.
    pub episodes: usize,
    /// Trained agent to evaluate instead of training one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: 10,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ServerCapacity,
    MigrationCoeff,
    TaskCount,
    TopologyKind,
    BackhaulRate,
    VehicleCount,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::ServerCapacity => "server_capacity",
            SweepAxis::MigrationCoeff => "migration_coeff",
            SweepAxis::TaskCount => "task_count",
            SweepAxis::TopologyKind => "topology_kind",
            SweepAxis::BackhaulRate => "backhaul_rate",
            SweepAxis::VehicleCount => "vehicle_count",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
}

impl SweepSection {
    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::validation("sweep.values", "needs at least one value"));
        }
        for (i, v) in self.values.iter().enumerate() {
            let path = format!("sweep.values[{i}]");
            apply_sweep(&mut EnvSection::default(), self.axis, v)
                .map_err(|e| Error::validation(path, e.to_string()))?;
        }
        Ok(())
    }
}

/// Write one sweep value into an environment section.
pub fn apply_sweep(env: &mut EnvSection, axis: SweepAxis, value: &SweepValue) -> Result<()> {
    let number = || match value {
        SweepValue::Number(v) if *v > 0.0 && v.is_finite() => Ok(*v),
        _ => Err(Error::invalid(format!("{axis} needs a positive number, got `{value}`"))),
    };
    let count = || {
        let v = number()?;
        if v.fract() != 0.0 {
            return Err(Error::invalid(format!("{axis} needs an integer, got {v}")));
        }
        Ok(v as usize)
    };
    match axis {
        SweepAxis::ServerCapacity => env.params.server_capacity = number()?,
        SweepAxis::MigrationCoeff => env.params.migration_coeff = number()?,
        SweepAxis::BackhaulRate => env.params.backhaul_rate = number()?,
        SweepAxis::TaskCount => env.tasks_per_slot = count()?,
        SweepAxis::VehicleCount => env.n_vehicles = count()?,
        SweepAxis::TopologyKind => match value {
            SweepValue::Text(s) => env.connectivity = s.parse()?,
            SweepValue::Number(_) => {
                return Err(Error::invalid("topology_kind takes high, middle or low"))
            }
        },
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario.trim().is_empty() {
            return Err(Error::validation("scenario", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "needs at least one seed"));
        }
        if self.eval.episodes == 0 {
            return Err(Error::validation("eval.episodes", "must be at least 1"));
        }
        self.env.validate()?;
        self.mobility.validate()?;
        self.agent.validate()?;
        self.ga.validate()?;
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        Ok(())
    }

    /// The sweep values, or a single unnamed cell when there is no sweep.
    pub fn sweep_cells(&self) -> Vec<Option<SweepValue>> {
        match &self.sweep {
            Some(s) => s.values.iter().cloned().map(Some).collect(),
            None => vec![None],
        }
    }

    pub fn sweep_axis_name(&self) -> &'static str {
        self.sweep.as_ref().map_or("none", |s| s.axis.as_str())
    }

    pub fn env_for(&self, value: Option<&SweepValue>) -> Result<EnvSection> {
        let mut env = self.env.clone();
        if let (Some(s), Some(v)) = (&self.sweep, value) {
            apply_sweep(&mut env, s.axis, v)?;
        }
        Ok(env)
    }

    /// Same settings, different policy.
    pub fn with_policy(&self, policy: PolicyKind) -> Self {
        ExperimentConfig {
            policy,
            compare: Vec::new(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "scenario = \"t\"\n";

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.policy, PolicyKind::Srcl);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.env.rows, 4);
        assert_eq!(c.env.params, DelayParams::default());
        assert_eq!(c.eval.episodes, 10);
        assert_eq!(c.sweep_cells(), vec![None]);
    }

    #[test]
    fn resolved_config_round_trips() {
        let text = r#"
scenario = "caps"
policy = "nm"
compare = ["am", "ga"]
seeds = [4]
[env]
rows = 2
cols = 2
[env.params]
server_capacity = 4e10
[sweep]
axis = "topology_kind"
values = ["high", "low"]
"#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.env.params.server_capacity, 4e10);
        assert_eq!(c.env.params.backhaul_rate, 5e8);
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, c);
        let low = c.env_for(Some(&SweepValue::Text("low".into()))).unwrap();
        assert_eq!(low.connectivity, Connectivity::Low);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        for bad in [
            "scenario = \"t\"\nsedes = [1]\n",
            "scenario = \"t\"\n[env]\nrowz = 3\n",
            "scenario = \"t\"\n[agent]\nlr = 0.1\n",
            "scenario = \"t\"\n[env.params]\nnoize = 1.0\n",
        ] {
            let e = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(e.is_validation(), "{bad}: {e}");
        }
    }

    #[test]
    fn validation_names_the_field() {
        let cases = [
            ("scenario = \"t\"\nseeds = []\n", "seeds"),
            ("scenario = \"t\"\n[env]\nrows = 0\n", "env.rows"),
            ("scenario = \"t\"\n[agent]\ngamma = 1.5\n", "agent.gamma"),
            (
                "scenario = \"t\"\n[sweep]\naxis = \"vehicle_count\"\nvalues = [10, 2.5]\n",
                "sweep.values[1]",
            ),
            (
                "scenario = \"t\"\n[mobility]\nsource = \"trace\"\n",
                "mobility.trace_path",
            ),
        ];
        for (text, field) in cases {
            match ExperimentConfig::from_toml_str(text) {
                Err(Error::Validation { path, .. }) => assert_eq!(path, field),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn sweep_application() {
        let mut env = EnvSection::default();
        apply_sweep(&mut env, SweepAxis::TaskCount, &SweepValue::Number(3.0)).unwrap();
        assert_eq!(env.tasks_per_slot, 3);
        apply_sweep(&mut env, SweepAxis::MigrationCoeff, &SweepValue::Number(4.5)).unwrap();
        assert_eq!(env.params.migration_coeff, 4.5);
        assert!(apply_sweep(&mut env, SweepAxis::BackhaulRate, &SweepValue::Number(-1.0)).is_err());
        assert!(apply_sweep(&mut env, SweepAxis::TopologyKind, &SweepValue::Number(1.0)).is_err());
    }
}
