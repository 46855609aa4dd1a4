//! Project configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use indi_hinf::plant::{NoiseConfig, UncertaintyConfig};
use indi_hinf::sim::{CampaignConfig, Doublet, SimConfig};
use indi_hinf::synthesis::{SynthesisConfig, WeightConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    /// Roll, pitch and yaw effectiveness.
    pub cp: f64,
    pub cq: f64,
    pub cr: f64,
    pub filter_cutoff_hz: f64,
    /// Hover motor command.
    pub trim: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self { cp: s.cp, cq: s.cq, cr: s.cr, filter_cutoff_hz: s.filter_cutoff_hz, trim: s.trim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_points: usize,
    pub budget: usize,
    pub n_starts: usize,
    pub warm_start: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = SynthesisConfig::default();
        Self {
            tau_min: s.tau_min,
            tau_max: s.tau_max,
            n_points: s.n_points,
            budget: s.budget,
            n_starts: s.n_starts,
            warm_start: s.warm_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub substeps: usize,
    pub t_end: f64,
    pub doublet: Doublet,
    /// Actuator time constant for `simulate` without `--tau`.
    pub tau: f64,
    pub noise_on: bool,
    pub noise_seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self { dt: s.dt, substeps: s.substeps, t_end: s.t_end, doublet: s.doublet, tau: s.tau, noise_on: false, noise_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub n_random: usize,
    pub n_groups: usize,
    pub structured: bool,
    pub worst: bool,
    pub worst_search_samples: usize,
    pub random_dynamics: bool,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        let c = CampaignConfig::default();
        Self {
            n_random: c.n_random,
            n_groups: c.n_groups,
            structured: c.structured,
            worst: c.worst,
            worst_search_samples: c.worst_search_samples,
            random_dynamics: c.random_dynamics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Random realizations added to the vertex search per break point.
    pub worst_case_samples: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { worst_case_samples: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub weights: WeightConfig,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub montecarlo: MonteCarloSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    1
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            plant: PlantSection::default(),
            noise: NoiseConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            weights: WeightConfig::default(),
            schedule: ScheduleSection::default(),
            sim: SimSection::default(),
            montecarlo: MonteCarloSection::default(),
            analysis: AnalysisSection::default(),
            out_dir: default_out(),
            seed: default_seed(),
        }
    }
}

impl ProjectConfig {
    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ProjectConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("config field `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("config field `schema_version`: expected {SCHEMA_VERSION}, found {}", self.schema_version));
        }
        fn field(name: &'static str) -> impl Fn(indi_hinf::Error) -> String {
            move |e| format!("config section `{name}`: {e}")
        }
        self.synthesis().validate().map_err(field("schedule/weights"))?;
        self.sim_config(self.sim.tau).validate().map_err(field("sim"))?;
        let u = &self.uncertainty;
        if ![u.r_c, u.r_tau, u.r0].iter().all(|v| *v >= 0.0 && v.is_finite()) || !(u.r_inf > 0.0) {
            return Err("config section `uncertainty`: radii must be non-negative and r_inf positive".into());
        }
        if self.montecarlo.n_groups == 0 {
            return Err("config field `montecarlo.n_groups`: must be at least 1".into());
        }
        Ok(())
    }

    pub fn synthesis(&self) -> SynthesisConfig {
        let s = &self.schedule;
        SynthesisConfig {
            cp: self.plant.cp,
            filter_cutoff_hz: self.plant.filter_cutoff_hz,
            noise: self.noise,
            weights: self.weights,
            tau_min: s.tau_min,
            tau_max: s.tau_max,
            n_points: s.n_points,
            budget: s.budget,
            n_starts: s.n_starts,
            warm_start: s.warm_start,
        }
    }

    pub fn sim_config(&self, tau: f64) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt,
            substeps: s.substeps,
            t_end: s.t_end,
            doublet: s.doublet,
            cp: self.plant.cp,
            cq: self.plant.cq,
            cr: self.plant.cr,
            tau,
            filter_cutoff_hz: self.plant.filter_cutoff_hz,
            trim: self.plant.trim,
            uncertainty: self.uncertainty,
            noise: self.noise,
            noise_on: s.noise_on,
            noise_seed: s.noise_seed,
            delta: None,
        }
    }

    pub fn campaign(&self) -> CampaignConfig {
        let m = &self.montecarlo;
        CampaignConfig {
            n_random: m.n_random,
            n_groups: m.n_groups,
            structured: m.structured,
            worst: m.worst,
            worst_search_samples: m.worst_search_samples,
            random_dynamics: m.random_dynamics,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ProjectConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ProjectConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn unknown_key_names_the_path() {
        let err = ProjectConfig::from_json(r#"{"schema_version": 1, "sim": {"dt": 0.001, "bogus": 1}}"#).unwrap_err();
        assert!(err.contains("sim"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn bad_value_is_rejected() {
        let err = ProjectConfig::from_json(r#"{"schema_version": 1, "sim": {"dt": -1}}"#).unwrap_err();
        assert!(err.contains("sim"), "{err}");
        let err = ProjectConfig::from_json(r#"{"schema_version": 2}"#).unwrap_err();
        assert!(err.contains("schema_version"), "{err}");
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ProjectConfig::from_json(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(c.schedule.n_points, 30);
        assert_eq!(c.seed, 1);
    }
}
