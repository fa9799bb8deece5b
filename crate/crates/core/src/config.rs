//! Run configuration: physical constants, protocol timing, learner
//! hyperparameters and seeds. Loaded from JSON; every field has a default and
//! units are carried in field names.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scalar::dbm_to_watts;

pub const SPEED_OF_LIGHT_MPS: f64 = 3.0e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_cells: usize,
    pub num_links: usize,
    /// Center-to-vertex radius of each hexagonal cell.
    pub cell_radius_m: f64,
    /// Path loss is evaluated at no less than this distance.
    pub min_distance_m: f64,
    pub pmax_dbm: f64,
    pub noise_dbm: f64,
    pub carrier_freq_hz: f64,
    pub shadowing_std_db: f64,
    pub shadowing_corr_length_m: f64,
    pub slot_duration_ms: f64,
    /// When set, every device uses this maximum Doppler frequency instead of
    /// the one implied by its speed.
    pub doppler_override_hz: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_cells: 10,
            num_links: 20,
            cell_radius_m: 200.0,
            min_distance_m: 10.0,
            pmax_dbm: 38.0,
            noise_dbm: -114.0,
            carrier_freq_hz: 2.0e9,
            shadowing_std_db: 10.0,
            shadowing_corr_length_m: 10.0,
            slot_duration_ms: 20.0,
            doppler_override_hz: None,
        }
    }
}

impl NetworkConfig {
    pub fn pmax_watts(&self) -> f64 {
        dbm_to_watts(self.pmax_dbm)
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn slot_seconds(&self) -> f64 {
        self.slot_duration_ms * 1e-3
    }

    /// Same network with a different deployment size.
    pub fn with_size(&self, num_cells: usize, num_links: usize) -> Self {
        Self {
            num_cells,
            num_links,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilityConfig {
    /// Static devices when false (speed pinned at zero).
    pub enabled: bool,
    pub max_speed_mps: f64,
    pub speed_step_mps: f64,
    pub heading_step_rad: f64,
    /// Wall-clock period between speed/heading perturbations.
    pub update_period_s: f64,
    /// Consecutive slots a device must spend in a new cell before handover.
    pub register_slots: u64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_speed_mps: 2.5,
            speed_step_mps: 0.5,
            heading_step_rad: 0.175,
            update_period_s: 1.0,
            register_slots: 10,
        }
    }
}

impl MobilityConfig {
    pub fn effective_max_speed(&self) -> f64 {
        if self.enabled {
            self.max_speed_mps
        } else {
            0.0
        }
    }

    /// Slots between perturbations: `ceil(update_period / T)`.
    pub fn cadence_slots(&self, slot_seconds: f64) -> u64 {
        let c = (self.update_period_s / slot_seconds - 1e-9).ceil();
        c.max(1.0) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborConfig {
    /// Received-power threshold as a multiple of the noise power.
    pub eta: f64,
    /// Neighbor list length per group.
    pub cap: usize,
    /// Spectral efficiency reported for padding neighbors.
    pub virtual_rate: f64,
}

impl Default for NeighborConfig {
    fn default() -> Self {
        Self {
            eta: 5.0,
            cap: 5,
            virtual_rate: -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PowerMap {
    /// `p = a * P_max`.
    Linear,
    /// `p = P_max * 10^(-(1 - a) * span_db / 10)` for `a > 0`, and `0` at `a = 0`.
    Logarithmic { span_db: f64 },
}

impl PowerMap {
    pub fn apply(&self, action: f64, pmax: f64) -> f64 {
        match *self {
            PowerMap::Linear => action * pmax,
            PowerMap::Logarithmic { span_db } => {
                if action <= 0.0 {
                    0.0
                } else {
                    pmax * 10f64.powf(-(1.0 - action) * span_db / 10.0)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Gradient steps between hard copies of the critic into its target.
    pub target_sync_period: u64,
    /// Use a lagged actor copy inside the Bellman target.
    pub target_actor: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub power_map: PowerMap,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![200, 100, 40],
            critic_hidden: vec![400, 300],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 128,
            replay_capacity: 10_000,
            discount: 0.5,
            epsilon_start: 0.3,
            epsilon_end: 0.01,
            target_sync_period: 100,
            target_actor: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            power_map: PowerMap::Linear,
        }
    }
}

impl LearnerConfig {
    /// Multiplicative decay from `epsilon_start` to `epsilon_end` over one
    /// training episode of `train_slots` slots.
    pub fn epsilon_at(&self, slot_in_episode: u64, train_slots: u64) -> f64 {
        if train_slots <= 1 || self.epsilon_start <= 0.0 {
            return self.epsilon_start;
        }
        let frac = slot_in_episode.min(train_slots - 1) as f64 / (train_slots - 1) as f64;
        self.epsilon_start * (self.epsilon_end / self.epsilon_start).powf(frac)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub episodes: u64,
    pub train_slots: u64,
    pub travel_slots: u64,
    /// Policy broadcast period.
    pub broadcast_period: u64,
    /// Slots between issuing a policy and agents receiving it.
    /// `u64::MAX` means never delivered.
    pub broadcast_delay: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            train_slots: 5_000,
            travel_slots: 50_000,
            broadcast_period: 50,
            broadcast_delay: 2,
        }
    }
}

impl TimingConfig {
    /// First slot of episode `e` (1-based).
    pub fn episode_start(&self, e: u64) -> u64 {
        (e - 1) * (self.train_slots + self.travel_slots)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub deployments: usize,
    pub slots: u64,
    /// Deployment `d` is simulated with seed `seed + d`.
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            deployments: 5,
            slots: 500,
            seed: 1_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// WMMSE stops once the sum rate (bps/Hz, summed over links) moves by
    /// less than this between iterations.
    pub wmmse_tol: f64,
    /// Same rule for FP.
    pub fp_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            wmmse_tol: 1.5e-2,
            fp_tol: 3e-2,
            max_iter: 500,
        }
    }
}

impl SolverConfig {
    /// Both solvers run to the same tight tolerance.
    pub fn converged(tol: f64, max_iter: usize) -> Self {
        Self {
            wmmse_tol: tol,
            fp_tol: tol,
            max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub mobility: MobilityConfig,
    pub neighbors: NeighborConfig,
    pub learner: LearnerConfig,
    pub timing: TimingConfig,
    pub evaluation: EvaluationConfig,
    pub solver: SolverConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            network: NetworkConfig::default(),
            mobility: MobilityConfig::default(),
            neighbors: NeighborConfig::default(),
            learner: LearnerConfig::default(),
            timing: TimingConfig::default(),
            evaluation: EvaluationConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// A parsed configuration plus the dotted paths of fields that were not
/// present in the source document.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub defaulted: Vec<String>,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<LoadedConfig> {
        let value: Value = serde_json::from_str(text)?;
        let de = value.clone();
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        let defaults = serde_json::to_value(RunConfig::default())?;
        let mut defaulted = Vec::new();
        collect_missing(&defaults, &value, "", &mut defaulted);
        Ok(LoadedConfig { config, defaulted })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LoadedConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.network;
        positive_count("network.num_cells", n.num_cells)?;
        positive_count("network.num_links", n.num_links)?;
        positive("network.cell_radius_m", n.cell_radius_m)?;
        positive("network.min_distance_m", n.min_distance_m)?;
        finite("network.pmax_dbm", n.pmax_dbm)?;
        finite("network.noise_dbm", n.noise_dbm)?;
        positive("network.carrier_freq_hz", n.carrier_freq_hz)?;
        non_negative("network.shadowing_std_db", n.shadowing_std_db)?;
        positive("network.shadowing_corr_length_m", n.shadowing_corr_length_m)?;
        positive("network.slot_duration_ms", n.slot_duration_ms)?;
        if let Some(fd) = n.doppler_override_hz {
            non_negative("network.doppler_override_hz", fd)?;
        }

        let m = &self.mobility;
        non_negative("mobility.max_speed_mps", m.max_speed_mps)?;
        non_negative("mobility.speed_step_mps", m.speed_step_mps)?;
        non_negative("mobility.heading_step_rad", m.heading_step_rad)?;
        positive("mobility.update_period_s", m.update_period_s)?;
        if m.register_slots == 0 {
            return Err(Error::config("mobility.register_slots", "must be at least 1"));
        }

        non_negative("neighbors.eta", self.neighbors.eta)?;
        positive_count("neighbors.cap", self.neighbors.cap)?;
        if !(self.neighbors.virtual_rate < 0.0) {
            return Err(Error::config("neighbors.virtual_rate", "must be negative"));
        }

        let l = &self.learner;
        if l.actor_hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("learner.actor_hidden", "layer widths must be positive"));
        }
        if l.critic_hidden.iter().any(|&w| w == 0) {
            return Err(Error::config("learner.critic_hidden", "layer widths must be positive"));
        }
        non_negative("learner.actor_lr", l.actor_lr)?;
        non_negative("learner.critic_lr", l.critic_lr)?;
        positive_count("learner.batch_size", l.batch_size)?;
        positive_count("learner.replay_capacity", l.replay_capacity)?;
        if !(l.discount > 0.0 && l.discount <= 1.0) {
            return Err(Error::config("learner.discount", "must lie in (0, 1]"));
        }
        unit_interval("learner.epsilon_start", l.epsilon_start)?;
        unit_interval("learner.epsilon_end", l.epsilon_end)?;
        if l.epsilon_start > 0.0 && l.epsilon_end <= 0.0 {
            return Err(Error::config(
                "learner.epsilon_end",
                "must be positive when epsilon_start is positive (multiplicative decay)",
            ));
        }
        if l.target_sync_period == 0 {
            return Err(Error::config("learner.target_sync_period", "must be at least 1"));
        }
        unit_interval("learner.adam_beta1", l.adam_beta1)?;
        unit_interval("learner.adam_beta2", l.adam_beta2)?;
        positive("learner.adam_eps", l.adam_eps)?;
        if let PowerMap::Logarithmic { span_db } = l.power_map {
            positive("learner.power_map.span_db", span_db)?;
        }

        let t = &self.timing;
        if t.episodes == 0 {
            return Err(Error::config("timing.episodes", "must be at least 1"));
        }
        if t.train_slots == 0 {
            return Err(Error::config("timing.train_slots", "must be at least 1"));
        }
        if t.broadcast_period == 0 {
            return Err(Error::config("timing.broadcast_period", "must be at least 1"));
        }

        positive_count("evaluation.deployments", self.evaluation.deployments)?;
        if self.evaluation.slots == 0 {
            return Err(Error::config("evaluation.slots", "must be at least 1"));
        }
        non_negative("solver.wmmse_tol", self.solver.wmmse_tol)?;
        non_negative("solver.fp_tol", self.solver.fp_tol)?;
        positive_count("solver.max_iter", self.solver.max_iter)?;
        Ok(())
    }
}

fn collect_missing(defaults: &Value, given: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Object(fields) = defaults else {
        return;
    };
    for (key, default_value) in fields {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match given.get(key) {
            None => out.push(path),
            Some(sub) if default_value.is_object() && sub.is_object() => {
                collect_missing(default_value, sub, &path, out)
            }
            Some(_) => {}
        }
    }
}

fn finite(field: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be finite"))
    }
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {x}")))
    }
}

fn non_negative(field: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be non-negative, got {x}")))
    }
}

fn unit_interval(field: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie in [0, 1], got {x}")))
    }
}

fn positive_count(field: &str, x: usize) -> Result<()> {
    if x > 0 {
        Ok(())
    } else {
        Err(Error::config(field, "must be at least 1"))
    }
}
