//! Scenario configuration: the resolved [`ScenarioConfig`] used by the
//! simulator, the strict JSON file format it is read from, and the two
//! built-in presets.
//!
//! Every field of the file is optional. An empty document (or `{}`) yields the
//! five-prosumer, one-consumer preset with the default hyperparameters.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dqn::{DqnConfig, EpsilonSchedule};
use crate::env::{GeneratorKind, GeneratorSpec, PriceSchedule};
use crate::prosumer::BatterySpec;
use crate::rng::{entity, entity_rng};
use crate::{Error, Result, SLOTS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    AgentBased,
    Conventional,
}

/// What the service-provider agent sees before setting the price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaObservationMode {
    /// Costs and demand realized in the previous slot.
    Lagged,
    /// Previous-slot costs plus this slot's demand before battery actions.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Scenario1,
    Scenario2,
}

impl Preset {
    pub fn from_name(name: &str) -> Option<Preset> {
        match name {
            "scenario1" | "scenario-1" | "scenario_1" => Some(Preset::Scenario1),
            "scenario2" | "scenario-2" | "scenario_2" => Some(Preset::Scenario2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSetup {
    pub pv_peak_kw: f64,
    pub load_peak_kw: f64,
    pub load_base_frac: f64,
    pub battery: BatterySpec,
    pub p_inject_max_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerSetup {
    pub peak_kw: f64,
    pub base_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub noise_frac: f64,
    /// Reuse the episode-0 draw every day instead of redrawing noise.
    pub fixed: bool,
    /// Optional CSV with columns `load_<j>`, `pv_<j>`, `consumer_<k>` (0-based).
    pub csv: Option<PathBuf>,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            noise_frac: 0.05,
            fixed: false,
            csv: None,
        }
    }
}

/// Divisors applied to observation entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationScales {
    pub price: f64,
    pub spa_power_kw: f64,
    pub pa_power_kw: f64,
    /// Generator and injection costs are observed as $/h rates.
    pub cost_usd: f64,
}

impl Default for ObservationScales {
    fn default() -> Self {
        ObservationScales {
            price: 0.1,
            spa_power_kw: 100.0,
            pa_power_kw: 10.0,
            cost_usd: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub spa: DqnConfig,
    pub pa: DqnConfig,
    /// Transitions an agent must hold before it starts training.
    pub warmup: usize,
    pub epsilon: EpsilonSchedule,
    pub eval_days: usize,
    pub moving_average_window: usize,
    pub checkpoint_every: Option<usize>,
}

impl TrainingConfig {
    pub fn with_episodes(episodes: usize) -> Self {
        let spa = DqnConfig {
            hidden: vec![1000],
            ..DqnConfig::default()
        };
        TrainingConfig {
            episodes,
            spa,
            pa: DqnConfig::default(),
            warmup: 1000,
            epsilon: EpsilonSchedule::for_episodes(episodes),
            eval_days: 30,
            moving_average_window: 100,
            checkpoint_every: None,
        }
    }

    /// 64-wide networks for desk-scale runs.
    pub fn small(mut self) -> Self {
        self.spa.hidden = vec![64];
        self.pa.hidden = vec![64, 64];
        self
    }

    /// Changes the episode count and rescales the epsilon horizon with it.
    pub fn set_episodes(&mut self, episodes: usize) {
        let frac = if self.episodes > 0 {
            self.epsilon.decay_horizon / self.episodes as f64
        } else {
            0.8
        };
        self.episodes = episodes;
        self.epsilon.decay_horizon = frac * episodes as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub fleet_seed: u64,
    pub dt_hours: f64,
    pub generators: Vec<GeneratorSpec>,
    pub prices: PriceSchedule,
    /// Fixed per-slot buy price that replaces the service-provider agent.
    pub buy_price_schedule: Option<Vec<f64>>,
    pub prosumers: Vec<ProsumerSetup>,
    pub consumers: Vec<ConsumerSetup>,
    pub profiles: ProfileOptions,
    pub observation: ObservationScales,
    pub spa_observation: SpaObservationMode,
    /// Appends the time of day (sine and cosine of the slot phase) to each
    /// prosumer observation.
    pub pa_clock: bool,
    pub reset_soc: bool,
    pub terminal_at_day_end: bool,
    pub training: TrainingConfig,
}

impl ScenarioConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Scenario1 => scenario1(),
            Preset::Scenario2 => scenario2(),
        }
    }

    pub fn n_prosumers(&self) -> usize {
        self.prosumers.len()
    }

    pub fn n_consumers(&self) -> usize {
        self.consumers.len()
    }

    pub fn spa_observation_len(&self) -> usize {
        self.generators.len() + self.prosumers.len() + 1
    }

    pub fn pa_observation_len(&self) -> usize {
        if self.pa_clock {
            6
        } else {
            4
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_hours > 0.0 && self.dt_hours.is_finite()) {
            return Err(Error::config("scenario.dt_hours", "must be > 0"));
        }
        if self.training.episodes == 0 {
            return Err(Error::config("training.episodes", "must be >= 1"));
        }
        if !self.generators.iter().any(|g| g.kind == GeneratorKind::Base) {
            return Err(Error::config("generators", "at least one base unit is required"));
        }
        for (i, g) in self.generators.iter().enumerate() {
            g.validate().map_err(|e| Error::config(format!("generators[{i}]"), e.to_string()))?;
        }
        self.prices
            .validate()
            .map_err(|e| Error::config("prices", e.to_string()))?;
        if let Some(s) = &self.buy_price_schedule {
            if s.len() != SLOTS_PER_DAY || !s.iter().all(|p| p.is_finite() && *p > 0.0) {
                return Err(Error::config(
                    "prices.buy_price_schedule",
                    format!("needs {SLOTS_PER_DAY} positive prices"),
                ));
            }
        }
        for (j, p) in self.prosumers.iter().enumerate() {
            let field = |f: &str| format!("prosumers[{j}].{f}");
            p.battery
                .validate()
                .map_err(|e| Error::config(field("battery"), e.to_string()))?;
            if !(p.pv_peak_kw >= 0.0 && p.pv_peak_kw.is_finite()) {
                return Err(Error::config(field("pv_peak_kw"), "must be >= 0"));
            }
            if !(p.load_peak_kw > 0.0 && p.load_peak_kw.is_finite()) {
                return Err(Error::config(field("load_peak_kw"), "must be > 0"));
            }
            if !(0.1..1.0).contains(&p.load_base_frac) {
                return Err(Error::config(field("load_base_frac"), "must be in [0.1, 1)"));
            }
            if !(p.p_inject_max_kw > 0.0) {
                return Err(Error::config(field("p_inject_max_kw"), "must be > 0"));
            }
        }
        for (k, c) in self.consumers.iter().enumerate() {
            if !(c.peak_kw > 0.0 && c.peak_kw.is_finite()) {
                return Err(Error::config(format!("consumers[{k}].peak_kw"), "must be > 0"));
            }
            if !(0.1..1.0).contains(&c.base_frac) {
                return Err(Error::config(format!("consumers[{k}].base_frac"), "must be in [0.1, 1)"));
            }
        }
        if !(0.0..0.5).contains(&self.profiles.noise_frac) {
            return Err(Error::config("profiles.noise_frac", "must be in [0, 0.5)"));
        }
        let o = &self.observation;
        if ![o.price, o.spa_power_kw, o.pa_power_kw, o.cost_usd]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            return Err(Error::config("observation", "scales must be > 0"));
        }
        let t = &self.training;
        t.spa
            .validate()
            .map_err(|e| Error::config("training.spa", e.to_string()))?;
        t.pa.validate()
            .map_err(|e| Error::config("training.pa", e.to_string()))?;
        t.epsilon
            .validate()
            .map_err(|e| Error::config("training.epsilon", e.to_string()))?;
        if t.eval_days == 0 {
            return Err(Error::config("training.eval_days", "must be >= 1"));
        }
        if t.moving_average_window == 0 {
            return Err(Error::config("training.moving_average_window", "must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; independent of key order in the source file.
    pub fn hash_hex(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Sets every prosumer's battery capacity, keeping the initial charge in bounds.
    pub fn set_battery_capacity(&mut self, capacity_kwh: f64) {
        for p in &mut self.prosumers {
            let b = &mut p.battery;
            b.capacity = capacity_kwh;
            if capacity_kwh > 0.0 {
                b.soc_init = b.soc_init.clamp(b.soc_min(), b.soc_max());
            }
        }
    }
}

fn prosumer(pv: f64, load: f64, base_frac: f64, capacity: f64, soc_init: f64) -> ProsumerSetup {
    ProsumerSetup {
        pv_peak_kw: pv,
        load_peak_kw: load,
        load_base_frac: base_frac,
        battery: BatterySpec::new(capacity, soc_init),
        p_inject_max_kw: 10.0,
    }
}

/// Five prosumers spanning the PV-rich to PV-poor range, one feeder consumer,
/// one base and one reserve unit.
fn scenario1() -> ScenarioConfig {
    ScenarioConfig {
        name: "scenario1".into(),
        mode: Mode::AgentBased,
        seed: 42,
        fleet_seed: 7,
        dt_hours: 0.25,
        generators: vec![GeneratorSpec::default_base(), GeneratorSpec::default_reserve()],
        prices: PriceSchedule::default(),
        buy_price_schedule: None,
        prosumers: vec![
            prosumer(2.0, 4.0, 0.65, 10.0, 2.0),
            prosumer(2.5, 4.5, 0.55, 12.0, 1.5),
            prosumer(3.5, 4.0, 0.6, 9.0, 3.0),
            prosumer(5.5, 3.0, 0.3, 14.0, 4.0),
            prosumer(6.0, 3.5, 0.25, 15.0, 1.5),
        ],
        consumers: vec![ConsumerSetup {
            peak_kw: 60.0,
            base_frac: 0.15,
        }],
        profiles: ProfileOptions::default(),
        observation: ObservationScales::default(),
        spa_observation: SpaObservationMode::Lagged,
        pa_clock: false,
        reset_soc: false,
        terminal_at_day_end: true,
        training: TrainingConfig::with_episodes(10_000),
    }
}

/// Generator scaled by `k` in capacity with the same cost and loss per unit of
/// loading as the original.
fn scaled_unit(g: GeneratorSpec, k: f64) -> GeneratorSpec {
    GeneratorSpec {
        p_min: g.p_min * k,
        p_max: g.p_max * k,
        cost_a: g.cost_a / k,
        cost_c: g.cost_c * k,
        beta: g.beta / k,
        ..g
    }
}

fn scenario2() -> ScenarioConfig {
    let mut cfg = scenario1();
    cfg.name = "scenario2".into();
    cfg.generators = vec![
        scaled_unit(GeneratorSpec::default_base(), 5.0),
        scaled_unit(GeneratorSpec::default_reserve(), 4.0),
    ];
    cfg.prosumers = random_fleet(50, cfg.fleet_seed);
    cfg.consumers = random_consumers(40, cfg.fleet_seed);
    cfg
}

/// Prosumers drawn uniformly in the published parameter ranges.
pub fn random_fleet(n: usize, fleet_seed: u64) -> Vec<ProsumerSetup> {
    let mut rng = entity_rng(fleet_seed, entity::FLEET);
    (0..n)
        .map(|_| {
            let pv = rng.gen_range(2.0..=6.0);
            let capacity = rng.gen_range(8.0..=15.0);
            // The published initial-charge range dips below 10% of the larger
            // capacities; clamp into the battery's operating window.
            let soc_init = rng.gen_range(1.0..=4.0f64).clamp(0.1 * capacity, 0.9 * capacity);
            let load = rng.gen_range(3.0..=4.5);
            let base_frac = rng.gen_range(0.25..=0.65);
            prosumer(pv, load, base_frac, capacity, soc_init)
        })
        .collect()
}

pub fn random_consumers(n: usize, fleet_seed: u64) -> Vec<ConsumerSetup> {
    let mut rng = entity_rng(fleet_seed, entity::FLEET ^ 0xC0);
    (0..n)
        .map(|_| ConsumerSetup {
            peak_kw: rng.gen_range(3.0..=5.0),
            base_frac: 0.15,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Option<ScenarioSection>,
    generators: Option<Vec<GeneratorEntry>>,
    prosumers: Option<Vec<ProsumerEntry>>,
    consumers: Option<ConsumersSection>,
    battery: Option<BatterySection>,
    prices: Option<PricesSection>,
    training: Option<TrainingSection>,
    profiles: Option<ProfilesSection>,
    observation: Option<ObservationSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    preset: Option<String>,
    name: Option<String>,
    mode: Option<Mode>,
    seed: Option<u64>,
    fleet_seed: Option<u64>,
    n_prosumers: Option<usize>,
    n_consumers: Option<usize>,
    dt_hours: Option<f64>,
    reset_soc: Option<bool>,
    terminal_at_day_end: Option<bool>,
    spa_observation: Option<SpaObservationMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorEntry {
    kind: GeneratorKind,
    p_min_kw: f64,
    p_max_kw: f64,
    cost_a: f64,
    cost_b: f64,
    cost_c: f64,
    beta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProsumerEntry {
    pv_peak_kw: f64,
    load_peak_kw: f64,
    load_base_frac: Option<f64>,
    capacity_kwh: f64,
    soc_init_kwh: f64,
    p_inject_max_kw: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ConsumersSection {
    List(Vec<ConsumerEntry>),
    Uniform(ConsumerEntry),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsumerEntry {
    peak_kw: f64,
    base_frac: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatterySection {
    capacity_kwh: Option<f64>,
    soc_min_frac: Option<f64>,
    soc_max_frac: Option<f64>,
    p_charge_max_kw: Option<f64>,
    p_discharge_max_kw: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PricesSection {
    sell_before_11am: Option<f64>,
    sell_after_11am: Option<f64>,
    buy_levels: Option<Vec<f64>>,
    conventional_buy: Option<f64>,
    buy_price_schedule: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    episodes: Option<usize>,
    small: Option<bool>,
    gamma: Option<f64>,
    spa_gamma: Option<f64>,
    pa_gamma: Option<f64>,
    lr: Option<f64>,
    tau: Option<f64>,
    batch_size: Option<usize>,
    replay_capacity: Option<usize>,
    warmup: Option<usize>,
    spa_hidden: Option<Vec<usize>>,
    pa_hidden: Option<Vec<usize>>,
    eps_start: Option<f64>,
    eps_end: Option<f64>,
    decay_fraction: Option<f64>,
    eval_days: Option<usize>,
    moving_average_window: Option<usize>,
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfilesSection {
    noise_frac: Option<f64>,
    fixed: Option<bool>,
    csv: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationSection {
    price: Option<f64>,
    spa_power_kw: Option<f64>,
    pa_power_kw: Option<f64>,
    cost_usd: Option<f64>,
    pa_clock: Option<bool>,
}

/// Parses a JSON config document. Blank text means all defaults.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let file: ConfigFile = if text.trim().is_empty() {
        ConfigFile::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?
    };
    resolve(file)
}

/// Loads a config file, or a preset when `path` names one (`scenario1`, `scenario2`).
pub fn parse_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    if let Some(preset) = path.to_str().and_then(Preset::from_name) {
        if !path.exists() {
            let cfg = ScenarioConfig::preset(preset);
            cfg.validate()?;
            return Ok(cfg);
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config_str(&text)?;
    // Relative CSV paths are resolved against the config file's directory.
    if let (Some(csv), Some(dir)) = (&cfg.profiles.csv, path.parent()) {
        if csv.is_relative() {
            cfg.profiles.csv = Some(dir.join(csv));
        }
    }
    Ok(cfg)
}

fn resolve(file: ConfigFile) -> Result<ScenarioConfig> {
    let sc = file.scenario.unwrap_or_default();
    let preset = match &sc.preset {
        None => Preset::Scenario1,
        Some(name) => Preset::from_name(name)
            .ok_or_else(|| Error::config("scenario.preset", format!("unknown preset `{name}`")))?,
    };
    let mut cfg = ScenarioConfig::preset(preset);

    if let Some(v) = sc.name {
        cfg.name = v;
    }
    if let Some(v) = sc.mode {
        cfg.mode = v;
    }
    if let Some(v) = sc.seed {
        cfg.seed = v;
    }
    if let Some(v) = sc.fleet_seed {
        cfg.fleet_seed = v;
        if preset == Preset::Scenario2 {
            cfg.prosumers = random_fleet(cfg.prosumers.len(), v);
            cfg.consumers = random_consumers(cfg.consumers.len(), v);
        }
    }
    if let Some(v) = sc.dt_hours {
        cfg.dt_hours = v;
    }
    if let Some(v) = sc.reset_soc {
        cfg.reset_soc = v;
    }
    if let Some(v) = sc.terminal_at_day_end {
        cfg.terminal_at_day_end = v;
    }
    if let Some(v) = sc.spa_observation {
        cfg.spa_observation = v;
    }

    if let Some(gens) = file.generators {
        cfg.generators = gens
            .into_iter()
            .map(|g| GeneratorSpec {
                kind: g.kind,
                p_min: g.p_min_kw,
                p_max: g.p_max_kw,
                cost_a: g.cost_a,
                cost_b: g.cost_b,
                cost_c: g.cost_c,
                beta: g.beta,
            })
            .collect();
    }

    if let Some(list) = file.prosumers {
        cfg.prosumers = list
            .into_iter()
            .map(|p| ProsumerSetup {
                pv_peak_kw: p.pv_peak_kw,
                load_peak_kw: p.load_peak_kw,
                load_base_frac: p.load_base_frac.unwrap_or(0.5),
                battery: BatterySpec::new(p.capacity_kwh, p.soc_init_kwh),
                p_inject_max_kw: p.p_inject_max_kw.unwrap_or(10.0),
            })
            .collect();
        if let Some(n) = sc.n_prosumers {
            if n != cfg.prosumers.len() {
                return Err(Error::config(
                    "scenario.n_prosumers",
                    format!("{n} does not match the {} listed prosumers", cfg.prosumers.len()),
                ));
            }
        }
    } else if let Some(n) = sc.n_prosumers {
        if n != cfg.prosumers.len() {
            cfg.prosumers = random_fleet(n, cfg.fleet_seed);
        }
    }

    match file.consumers {
        Some(ConsumersSection::List(list)) => {
            cfg.consumers = list
                .into_iter()
                .map(|c| ConsumerSetup {
                    peak_kw: c.peak_kw,
                    base_frac: c.base_frac.unwrap_or(0.5),
                })
                .collect();
        }
        Some(ConsumersSection::Uniform(c)) => {
            let n = sc.n_consumers.unwrap_or(cfg.consumers.len());
            cfg.consumers = vec![
                ConsumerSetup {
                    peak_kw: c.peak_kw,
                    base_frac: c.base_frac.unwrap_or(0.5),
                };
                n
            ];
        }
        None => {
            if let Some(n) = sc.n_consumers {
                if n != cfg.consumers.len() {
                    cfg.consumers = random_consumers(n, cfg.fleet_seed);
                }
            }
        }
    }

    if let Some(b) = file.battery {
        for p in &mut cfg.prosumers {
            let spec = &mut p.battery;
            if let Some(v) = b.soc_min_frac {
                spec.soc_min_frac = v;
            }
            if let Some(v) = b.soc_max_frac {
                spec.soc_max_frac = v;
            }
            if let Some(v) = b.p_charge_max_kw {
                spec.p_charge_max = v;
            }
            if let Some(v) = b.p_discharge_max_kw {
                spec.p_discharge_max = v;
            }
        }
        if let Some(cap) = b.capacity_kwh {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(Error::config(
                    "battery.capacity_kwh",
                    format!("capacity must be > 0 (got {cap})"),
                ));
            }
            cfg.set_battery_capacity(cap);
        }
    }

    if let Some(p) = file.prices {
        if let Some(v) = p.sell_before_11am {
            cfg.prices.sell_before_11am = v;
        }
        if let Some(v) = p.sell_after_11am {
            cfg.prices.sell_after_11am = v;
        }
        if let Some(v) = p.buy_levels {
            cfg.prices.buy_levels = v;
        }
        if let Some(v) = p.conventional_buy {
            cfg.prices.conventional_buy = v;
        }
        cfg.buy_price_schedule = p.buy_price_schedule;
    }

    if let Some(t) = file.training {
        let tr = &mut cfg.training;
        if t.small == Some(true) {
            *tr = tr.clone().small();
        }
        if let Some(v) = t.episodes {
            tr.set_episodes(v);
        }
        for dqn in [&mut tr.spa, &mut tr.pa] {
            if let Some(v) = t.gamma {
                dqn.gamma = v;
            }
            if let Some(v) = t.lr {
                dqn.lr = v;
            }
            if let Some(v) = t.tau {
                dqn.tau = v;
            }
            if let Some(v) = t.batch_size {
                dqn.batch_size = v;
            }
            if let Some(v) = t.replay_capacity {
                dqn.replay_capacity = v;
            }
        }
        if let Some(v) = t.spa_gamma {
            tr.spa.gamma = v;
        }
        if let Some(v) = t.pa_gamma {
            tr.pa.gamma = v;
        }
        if let Some(v) = t.spa_hidden {
            tr.spa.hidden = v;
        }
        if let Some(v) = t.pa_hidden {
            tr.pa.hidden = v;
        }
        if let Some(v) = t.warmup {
            tr.warmup = v;
        }
        if let Some(v) = t.eps_start {
            tr.epsilon.eps_start = v;
        }
        if let Some(v) = t.eps_end {
            tr.epsilon.eps_end = v;
        }
        if let Some(v) = t.decay_fraction {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config("training.decay_fraction", "must be in [0, 1]"));
            }
            tr.epsilon.decay_horizon = v * tr.episodes as f64;
        }
        if let Some(v) = t.eval_days {
            tr.eval_days = v;
        }
        if let Some(v) = t.moving_average_window {
            tr.moving_average_window = v;
        }
        tr.checkpoint_every = t.checkpoint_every.or(tr.checkpoint_every);
    }

    if let Some(p) = file.profiles {
        if let Some(v) = p.noise_frac {
            cfg.profiles.noise_frac = v;
        }
        if let Some(v) = p.fixed {
            cfg.profiles.fixed = v;
        }
        cfg.profiles.csv = p.csv;
    }

    if let Some(o) = file.observation {
        let s = &mut cfg.observation;
        if let Some(v) = o.price {
            s.price = v;
        }
        if let Some(v) = o.spa_power_kw {
            s.spa_power_kw = v;
        }
        if let Some(v) = o.pa_power_kw {
            s.pa_power_kw = v;
        }
        if let Some(v) = o.cost_usd {
            s.cost_usd = v;
        }
        if let Some(v) = o.pa_clock {
            cfg.pa_clock = v;
        }
    }

    cfg.validate()?;
    Ok(cfg)
}
