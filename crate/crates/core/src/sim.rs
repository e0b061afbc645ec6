//! The interaction timeline. Each 15-minute slot runs in a fixed order:
//!
//! 1. the service provider observes and announces a buy price,
//! 2. every prosumer observes its own state plus that price and picks a
//!    battery command,
//! 3. batteries move (with clipping), injections and demand are formed,
//! 4. the generators are dispatched and everyone is settled,
//! 5. transitions are stored and, while training, each agent takes one
//!    gradient step.
//!
//! An agent's transition is completed at the start of the next slot, once its
//! next observation exists; the price announced in slot t+1 is therefore part
//! of a prosumer's next state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Mode, ScenarioConfig, SpaObservationMode};
use crate::dqn::{AgentCheckpoint, DqnAgent};
use crate::env::{dispatch, generator_cost_rate, money_residual, required_generation, sell_price, sp_slot_reward, DispatchResult};
use crate::profiles::{load_profiles_csv, synth_consumption, synth_pv, DayProfile, ProfileSpec};
use crate::prosumer::{apply_battery_command, conventional_action, net_injection, prosumer_slot_reward, BatteryCommand, ProsumerState};
use crate::rng::{entity, episode_rng, SimRng};
use crate::{Error, Result, SLOTS_PER_DAY};

/// Tolerance for the per-slot power and money balance checks.
pub const BALANCE_TOL: f64 = 1e-9;

/// First stream index used for evaluation days, keeping them disjoint from training episodes.
pub const EVAL_STREAM_BASE: u64 = 1 << 32;
const INIT_STREAM: u64 = u64::MAX;

/// One day of load and generation for every entity.
#[derive(Debug, Clone, PartialEq)]
pub struct DayProfiles {
    pub prosumer_load: Vec<DayProfile>,
    pub prosumer_pv: Vec<DayProfile>,
    pub consumer_load: Vec<DayProfile>,
}

impl DayProfiles {
    /// Synthetic profiles for one day; the noise stream is chosen by `stream`.
    pub fn synthesize(cfg: &ScenarioConfig, stream: u64) -> Result<Self> {
        let noise = cfg.profiles.noise_frac;
        let seed = cfg.seed;
        let mut prosumer_load = Vec::with_capacity(cfg.n_prosumers());
        let mut prosumer_pv = Vec::with_capacity(cfg.n_prosumers());
        for (j, p) in cfg.prosumers.iter().enumerate() {
            let j = j as u64;
            let spec = ProfileSpec::consumption(p.load_peak_kw, noise).with_base_frac(p.load_base_frac);
            prosumer_load.push(synth_consumption(&spec, &mut episode_rng(seed, entity::PROSUMER_LOAD_BASE + j, stream))?);
            prosumer_pv.push(if p.pv_peak_kw > 0.0 {
                synth_pv(p.pv_peak_kw, noise, &mut episode_rng(seed, entity::PROSUMER_PV_BASE + j, stream))?
            } else {
                DayProfile::zeros()
            });
        }
        let consumer_load = cfg
            .consumers
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let spec = ProfileSpec::consumption(c.peak_kw, noise).with_base_frac(c.base_frac);
                synth_consumption(&spec, &mut episode_rng(seed, entity::CONSUMER_LOAD_BASE + k as u64, stream))
            })
            .collect::<Result<_>>()?;
        Ok(DayProfiles {
            prosumer_load,
            prosumer_pv,
            consumer_load,
        })
    }

    /// Picks columns `load_<j>`, `pv_<j>` and `consumer_<k>` out of named profiles.
    pub fn from_named(cfg: &ScenarioConfig, named: &[(String, DayProfile)]) -> Result<Self> {
        let find = |name: String| {
            named
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, p)| p.clone())
                .ok_or_else(|| Error::Profile(format!("missing column `{name}`")))
        };
        Ok(DayProfiles {
            prosumer_load: (0..cfg.n_prosumers()).map(|j| find(format!("load_{j}"))).collect::<Result<_>>()?,
            prosumer_pv: (0..cfg.n_prosumers()).map(|j| find(format!("pv_{j}"))).collect::<Result<_>>()?,
            consumer_load: (0..cfg.n_consumers()).map(|k| find(format!("consumer_{k}"))).collect::<Result<_>>()?,
        })
    }

    fn check_shape(&self, cfg: &ScenarioConfig) -> Result<()> {
        if self.prosumer_load.len() != cfg.n_prosumers()
            || self.prosumer_pv.len() != cfg.n_prosumers()
            || self.consumer_load.len() != cfg.n_consumers()
        {
            return Err(Error::Profile("profile counts do not match the scenario".into()));
        }
        for (j, (pv, p)) in self.prosumer_pv.iter().zip(&cfg.prosumers).enumerate() {
            if pv.max() > p.pv_peak_kw + 1e-12 {
                return Err(Error::Profile(format!("pv_{j} exceeds the prosumer's PV rating")));
            }
        }
        Ok(())
    }

    pub fn consumer_total(&self, slot: usize) -> f64 {
        self.consumer_load.iter().map(|p| p.at(slot)).sum()
    }
}

/// Where each day's profiles come from.
#[derive(Debug, Clone)]
pub enum ProfileSource {
    Synthetic,
    Fixed(DayProfiles),
}

impl ProfileSource {
    /// Synthetic unless the config names a CSV file.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        match &cfg.profiles.csv {
            None => Ok(ProfileSource::Synthetic),
            Some(path) => Ok(ProfileSource::Fixed(DayProfiles::from_named(cfg, &load_profiles_csv(path)?)?)),
        }
    }

    fn day(&self, cfg: &ScenarioConfig, stream: u64) -> Result<DayProfiles> {
        let day = match self {
            ProfileSource::Fixed(d) => d.clone(),
            ProfileSource::Synthetic => {
                let stream = if cfg.profiles.fixed { 0 } else { stream };
                DayProfiles::synthesize(cfg, stream)?
            }
        };
        day.check_shape(cfg)?;
        Ok(day)
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub slot: usize,
    pub prosumers: Vec<ProsumerState>,
    pub profiles: DayProfiles,
    /// Generator cost rates of the previous slot ($/h).
    pub last_generator_costs: Vec<f64>,
    /// Payments for each prosumer's injection in the previous slot ($/h).
    pub last_prosumer_costs: Vec<f64>,
    /// Demand of the previous slot (kW).
    pub last_demand: f64,
}

impl WorldState {
    pub fn new(cfg: &ScenarioConfig, profiles: DayProfiles) -> Self {
        WorldState {
            slot: 0,
            prosumers: cfg
                .prosumers
                .iter()
                .map(|p| ProsumerState::new(p.battery.clone(), p.pv_peak_kw, p.p_inject_max_kw))
                .collect(),
            profiles,
            last_generator_costs: vec![0.0; cfg.generators.len()],
            last_prosumer_costs: vec![0.0; cfg.n_prosumers()],
            last_demand: 0.0,
        }
    }
}

/// `[F_G per generator, F_H per prosumer, P_D]`, scaled.
pub fn spa_observation(cfg: &ScenarioConfig, world: &WorldState) -> Vec<f64> {
    let s = &cfg.observation;
    let demand = match cfg.spa_observation {
        SpaObservationMode::Lagged => world.last_demand,
        SpaObservationMode::Oracle => {
            let t = world.slot;
            let p = &world.profiles;
            let households: f64 = p
                .prosumer_load
                .iter()
                .zip(&p.prosumer_pv)
                .map(|(c, pv)| (c.at(t) - pv.at(t)).max(0.0))
                .sum();
            p.consumer_total(t) + households
        }
    };
    world
        .last_generator_costs
        .iter()
        .chain(&world.last_prosumer_costs)
        .map(|c| c / s.cost_usd)
        .chain(std::iter::once(demand / s.spa_power_kw))
        .collect()
}

/// `[P_C, SoC/capacity, P_PV, ρ_b]` for prosumer `j`, scaled, optionally
/// followed by the slot phase as `[sin, cos]`.
pub fn pa_observation(cfg: &ScenarioConfig, world: &WorldState, j: usize, buy_price: f64) -> Vec<f64> {
    let s = &cfg.observation;
    let t = world.slot;
    let mut obs = Vec::with_capacity(cfg.pa_observation_len());
    obs.extend([
        world.profiles.prosumer_load[j].at(t) / s.pa_power_kw,
        world.prosumers[j].soc_fraction(),
        world.profiles.prosumer_pv[j].at(t) / s.pa_power_kw,
        buy_price / s.price,
    ]);
    if cfg.pa_clock {
        let phase = std::f64::consts::TAU * t as f64 / SLOTS_PER_DAY as f64;
        obs.extend([phase.sin(), phase.cos()]);
    }
    obs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSlot {
    pub p_pv: f64,
    pub p_c: f64,
    pub command: BatteryCommand,
    pub realized_p_b: f64,
    pub p_h: f64,
    pub reward: f64,
    /// Stored energy after the slot (kWh).
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub buy_price: f64,
    pub sell_price: f64,
    pub prosumers: Vec<ProsumerSlot>,
    pub consumer_load: f64,
    pub demand: f64,
    pub dispatch: DispatchResult,
    pub spa_reward: f64,
}

impl SlotRecord {
    /// Net power the generators deliver after losses (kW).
    pub fn net_generation(&self) -> f64 {
        self.dispatch.net_supplied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub slots: Vec<SlotRecord>,
}

impl EpisodeRecord {
    pub fn sp_profit(&self) -> f64 {
        self.slots.iter().map(|s| s.spa_reward).sum()
    }

    pub fn prosumer_reward(&self, j: usize) -> f64 {
        self.slots.iter().map(|s| s.prosumers[j].reward).sum()
    }

    pub fn reserve_energy(&self) -> f64 {
        self.slots.iter().map(|s| s.dispatch.reserve_energy).sum()
    }
}

/// The service-provider agent and one agent per prosumer.
#[derive(Debug, Clone)]
pub struct Agents {
    pub spa: DqnAgent,
    pub pas: Vec<DqnAgent>,
}

impl Agents {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let t = &cfg.training;
        let spa = DqnAgent::new(
            cfg.spa_observation_len(),
            cfg.prices.buy_levels.len(),
            &t.spa,
            &mut episode_rng(cfg.seed, entity::SPA, INIT_STREAM),
        )?;
        let pas = (0..cfg.n_prosumers())
            .map(|j| {
                DqnAgent::new(
                    cfg.pa_observation_len(),
                    BatteryCommand::ALL.len(),
                    &t.pa,
                    &mut episode_rng(cfg.seed, entity::PROSUMER_AGENT_BASE + j as u64, INIT_STREAM),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Agents { spa, pas })
    }

    pub fn total_queries(&self) -> u64 {
        self.spa.query_count() + self.pas.iter().map(DqnAgent::query_count).sum::<u64>()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.spa.checkpoint().save(dir.join("spa.json"))?;
        for (j, pa) in self.pas.iter().enumerate() {
            pa.checkpoint().save(dir.join(format!("pa_{j}.json")))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, n_prosumers: usize) -> Result<Self> {
        let spa = DqnAgent::from_checkpoint(AgentCheckpoint::load(dir.join("spa.json"))?)?;
        let pas = (0..n_prosumers)
            .map(|j| DqnAgent::from_checkpoint(AgentCheckpoint::load(dir.join(format!("pa_{j}.json")))?))
            .collect::<Result<_>>()?;
        Ok(Agents { spa, pas })
    }

    fn check_shape(&self, cfg: &ScenarioConfig) -> Result<()> {
        if self.pas.len() != cfg.n_prosumers()
            || self.pas.iter().any(|p| p.input_dim() != cfg.pa_observation_len())
            || self.spa.input_dim() != cfg.spa_observation_len()
            || self.spa.n_actions() != cfg.prices.buy_levels.len()
        {
            return Err(Error::Domain("agents do not match the scenario".into()));
        }
        Ok(())
    }
}

/// How a slot treats the agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    /// Epsilon-greedy actions, transitions stored, one train step per agent per slot.
    Train { eps: f64 },
    /// Greedy actions, nothing stored or learned.
    Evaluate,
}

#[derive(Debug, Clone)]
struct Pending {
    state: Vec<f64>,
    action: usize,
    reward: f64,
}

/// A running world plus the per-agent bookkeeping that spans slots.
pub struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    source: ProfileSource,
    pub world: WorldState,
    pending_spa: Option<Pending>,
    pending_pa: Vec<Option<Pending>>,
    spa_rng: SimRng,
    pa_rngs: Vec<SimRng>,
    episode: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        Self::with_source(cfg, ProfileSource::from_config(cfg)?)
    }

    pub fn with_source(cfg: &'a ScenarioConfig, source: ProfileSource) -> Result<Self> {
        cfg.validate()?;
        let profiles = source.day(cfg, 0)?;
        Ok(Simulation {
            cfg,
            world: WorldState::new(cfg, profiles),
            pending_spa: None,
            pending_pa: vec![None; cfg.n_prosumers()],
            spa_rng: episode_rng(cfg.seed, entity::SPA, 0),
            pa_rngs: (0..cfg.n_prosumers())
                .map(|j| episode_rng(cfg.seed, entity::PROSUMER_AGENT_BASE + j as u64, 0))
                .collect(),
            source,
            episode: 0,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.cfg
    }

    /// Prepares the world for a new day drawn from `stream`.
    pub fn begin_day(&mut self, episode: usize, stream: u64) -> Result<()> {
        let cfg = self.cfg;
        self.episode = episode;
        self.world.slot = 0;
        self.world.profiles = self.source.day(cfg, stream)?;
        if cfg.reset_soc {
            for (state, p) in self.world.prosumers.iter_mut().zip(&cfg.prosumers) {
                state.soc = p.battery.soc_init;
            }
        }
        self.spa_rng = episode_rng(cfg.seed, entity::SPA, stream);
        for (j, rng) in self.pa_rngs.iter_mut().enumerate() {
            *rng = episode_rng(cfg.seed, entity::PROSUMER_AGENT_BASE + j as u64, stream);
        }
        Ok(())
    }

    fn training_error(&self, agent: String, e: Error) -> Error {
        Error::Training {
            agent,
            episode: self.episode,
            message: e.to_string(),
        }
    }

    /// Runs the current slot. `pa_override` forces prosumer commands (used by
    /// hand-built settlement checks); agents are then not consulted for them.
    pub fn run_slot(&mut self, agents: &mut Agents, phase: Phase, pa_override: Option<&[BatteryCommand]>) -> Result<SlotRecord> {
        let cfg = self.cfg;
        let t = self.world.slot;
        if t >= SLOTS_PER_DAY {
            return Err(Error::Domain("day already finished; call begin_day".into()));
        }
        let dt = cfg.dt_hours;
        let learning = matches!(phase, Phase::Train { .. }) && cfg.mode == Mode::AgentBased;
        let eps = match phase {
            Phase::Train { eps } => eps,
            Phase::Evaluate => 0.0,
        };
        let sell = sell_price(t, &cfg.prices)?;

        // (1) price announcement
        let spa_obs = spa_observation(cfg, &self.world);
        let spa_acts = cfg.mode == Mode::AgentBased && cfg.buy_price_schedule.is_none();
        if learning && spa_acts {
            if let Some(p) = self.pending_spa.take() {
                agents
                    .spa
                    .remember_parts(&p.state, p.action, p.reward, &spa_obs, false)?;
            }
        }
        let (buy, spa_action) = match (cfg.mode, &cfg.buy_price_schedule) {
            (Mode::Conventional, _) => (cfg.prices.conventional_buy, None),
            (Mode::AgentBased, Some(schedule)) => (schedule[t], None),
            (Mode::AgentBased, None) => {
                let a = agents.spa.select_action(&spa_obs, eps, &mut self.spa_rng)?;
                (cfg.prices.buy_levels[a], Some(a))
            }
        };

        // (2)–(4) prosumer decisions and household balances
        let n = cfg.n_prosumers();
        let mut slots = Vec::with_capacity(n);
        let mut injections = Vec::with_capacity(n);
        let mut pa_obs = Vec::with_capacity(n);
        for j in 0..n {
            let state = &self.world.prosumers[j];
            let p_c = self.world.profiles.prosumer_load[j].at(t);
            let p_pv = self.world.profiles.prosumer_pv[j].at(t);
            let obs = pa_observation(cfg, &self.world, j, buy);
            if learning {
                if let Some(p) = self.pending_pa[j].take() {
                    agents.pas[j].remember_parts(&p.state, p.action, p.reward, &obs, false)?;
                }
            }
            let command = match (pa_override, cfg.mode) {
                (Some(cmds), _) => cmds[j],
                (None, Mode::Conventional) => conventional_action(state, p_pv, p_c),
                (None, Mode::AgentBased) => {
                    let a = agents.pas[j].select_action(&obs, eps, &mut self.pa_rngs[j])?;
                    BatteryCommand::from_index(a).expect("agent emits valid command index")
                }
            };
            let (soc, realized) = apply_battery_command(state, command, dt);
            let p_h = net_injection(p_pv, realized, p_c, state.p_inject_max)?;
            let reward = prosumer_slot_reward(p_h, buy, sell, dt);
            injections.push(p_h);
            pa_obs.push(obs);
            slots.push(ProsumerSlot {
                p_pv,
                p_c,
                command,
                realized_p_b: realized,
                p_h,
                reward,
                soc,
            });
        }

        // (5)–(7) demand, dispatch, settlement
        let consumer_load = self.world.profiles.consumer_total(t);
        let demand = consumer_load + injections.iter().map(|p| (-p).max(0.0)).sum::<f64>();
        let required = required_generation(demand, &injections);
        let dispatch = dispatch(required, &cfg.generators, dt)?;
        let spa_reward = sp_slot_reward(demand, &injections, buy, &dispatch, sell, dt);

        let injected: f64 = injections.iter().map(|p| p.max(0.0)).sum();
        let balance = demand - (dispatch.net_supplied() + injected - dispatch.curtailed_kw);
        if balance.abs() > BALANCE_TOL {
            return Err(Error::ConstraintViolation(format!(
                "slot {t}: power balance off by {balance:e} kW"
            )));
        }
        let rewards: Vec<f64> = slots.iter().map(|s| s.reward).collect();
        let money = money_residual(consumer_load, sell, dt, spa_reward, dispatch.total_cost_rate, &rewards);
        if money.abs() > BALANCE_TOL {
            return Err(Error::ConstraintViolation(format!(
                "slot {t}: money balance off by {money:e} $"
            )));
        }

        // (8) bookkeeping for the next slot
        for (g, (cost, spec)) in self
            .world
            .last_generator_costs
            .iter_mut()
            .zip(dispatch.per_generator_p.iter().zip(&cfg.generators))
        {
            *g = generator_cost_rate(*cost, spec)?;
        }
        for (j, s) in slots.iter().enumerate() {
            self.world.last_prosumer_costs[j] = s.p_h.max(0.0) * buy;
            self.world.prosumers[j].soc = s.soc;
        }
        self.world.last_demand = demand;
        self.world.slot += 1;

        if learning {
            if let Some(action) = spa_action {
                self.pending_spa = Some(Pending {
                    state: spa_obs,
                    action,
                    reward: spa_reward,
                });
            }
            if pa_override.is_none() {
                for (j, (obs, s)) in pa_obs.into_iter().zip(&slots).enumerate() {
                    self.pending_pa[j] = Some(Pending {
                        state: obs,
                        action: s.command.index(),
                        reward: s.reward,
                    });
                }
            }
            if self.world.slot == SLOTS_PER_DAY && cfg.terminal_at_day_end {
                self.flush_terminal(agents)?;
            }
            self.train_agents(agents)?;
        }

        Ok(SlotRecord {
            slot: t,
            buy_price: buy,
            sell_price: sell,
            prosumers: slots,
            consumer_load,
            demand,
            dispatch,
            spa_reward,
        })
    }

    /// Stores end-of-day transitions as terminal; the next state is unused.
    fn flush_terminal(&mut self, agents: &mut Agents) -> Result<()> {
        if let Some(p) = self.pending_spa.take() {
            agents.spa.remember_parts(&p.state, p.action, p.reward, &p.state, true)?;
        }
        for (j, pending) in self.pending_pa.iter_mut().enumerate() {
            if let Some(p) = pending.take() {
                agents.pas[j].remember_parts(&p.state, p.action, p.reward, &p.state, true)?;
            }
        }
        Ok(())
    }

    fn train_agents(&mut self, agents: &mut Agents) -> Result<()> {
        let warmup = self.cfg.training.warmup;
        if self.cfg.buy_price_schedule.is_none() && agents.spa.buffer().len() >= warmup {
            if let Err(e) = agents.spa.train_step(&mut self.spa_rng) {
                return Err(self.training_error("spa".into(), e));
            }
        }
        for j in 0..agents.pas.len() {
            if agents.pas[j].buffer().len() >= warmup {
                if let Err(e) = agents.pas[j].train_step(&mut self.pa_rngs[j]) {
                    return Err(self.training_error(format!("pa_{j}"), e));
                }
            }
        }
        Ok(())
    }

    /// Runs a full day on the given stream.
    pub fn run_episode(&mut self, agents: &mut Agents, episode: usize, stream: u64, phase: Phase) -> Result<EpisodeRecord> {
        agents.check_shape(self.cfg)?;
        self.begin_day(episode, stream)?;
        let slots = (0..SLOTS_PER_DAY)
            .map(|_| self.run_slot(agents, phase, None))
            .collect::<Result<_>>()?;
        Ok(EpisodeRecord { episode, slots })
    }
}

/// Per-episode totals recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub epsilon: f64,
    pub sp_profit: f64,
    pub prosumer_rewards: Vec<f64>,
    pub reserve_energy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agents: Agents,
    pub episodes: Vec<EpisodeSummary>,
}

/// Trains fresh agents for `cfg.training.episodes` days. `on_episode` sees
/// each finished day (for checkpoints or progress output).
pub fn train_with<F>(cfg: &ScenarioConfig, source: ProfileSource, mut on_episode: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpisodeSummary, &Agents) -> Result<()>,
{
    let mut agents = Agents::new(cfg)?;
    let mut sim = Simulation::with_source(cfg, source)?;
    let mut episodes = Vec::with_capacity(cfg.training.episodes);
    for e in 0..cfg.training.episodes {
        let eps = cfg.training.epsilon.epsilon(e);
        let rec = sim.run_episode(&mut agents, e, e as u64, Phase::Train { eps })?;
        let summary = EpisodeSummary {
            episode: e,
            epsilon: eps,
            sp_profit: rec.sp_profit(),
            prosumer_rewards: (0..cfg.n_prosumers()).map(|j| rec.prosumer_reward(j)).collect(),
            reserve_energy: rec.reserve_energy(),
        };
        on_episode(&summary, &agents)?;
        episodes.push(summary);
    }
    Ok(TrainOutcome { agents, episodes })
}

pub fn train(cfg: &ScenarioConfig) -> Result<TrainOutcome> {
    train_with(cfg, ProfileSource::from_config(cfg)?, |_, _| Ok(()))
}

/// Greedy evaluation over `n_days` consecutive days starting from a fresh
/// world. Day `d` uses the same profiles in every mode, so runs are paired.
pub fn evaluate_with(cfg: &ScenarioConfig, source: ProfileSource, agents: &mut Agents, n_days: usize) -> Result<Vec<EpisodeRecord>> {
    let mut sim = Simulation::with_source(cfg, source)?;
    (0..n_days)
        .map(|d| sim.run_episode(agents, d, EVAL_STREAM_BASE + d as u64, Phase::Evaluate))
        .collect()
}

pub fn evaluate(cfg: &ScenarioConfig, agents: &mut Agents, n_days: usize) -> Result<Vec<EpisodeRecord>> {
    evaluate_with(cfg, ProfileSource::from_config(cfg)?, agents, n_days)
}

/// Conventional-mode evaluation; agents are created only to satisfy the
/// interface and are never consulted.
pub fn evaluate_conventional(cfg: &ScenarioConfig, n_days: usize) -> Result<Vec<EpisodeRecord>> {
    let mut conv = cfg.clone();
    conv.mode = Mode::Conventional;
    let mut agents = Agents::new(&conv)?;
    evaluate(&conv, &mut agents, n_days)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::env::GeneratorSpec;

    fn tiny(cfg: &mut ScenarioConfig) {
        cfg.training = cfg.training.clone().small();
        cfg.training.spa.hidden = vec![8];
        cfg.training.pa.hidden = vec![8, 8];
        cfg.training.warmup = 64;
    }

    fn scenario1() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::preset(Preset::Scenario1);
        tiny(&mut cfg);
        cfg
    }

    #[test]
    fn cold_start_observation_is_zero() {
        let cfg = scenario1();
        let sim = Simulation::new(&cfg).unwrap();
        let obs = spa_observation(&cfg, &sim.world);
        assert_eq!(obs, vec![0.0; 2 + 5 + 1]);
    }

    #[test]
    fn spa_observation_replays_previous_slot() {
        let cfg = scenario1();
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg).unwrap();
        let rec = sim.run_slot(&mut agents, Phase::Train { eps: 1.0 }, None).unwrap();
        let obs = spa_observation(&cfg, &sim.world);
        // Independent recomputation of the settled slot.
        let base = GeneratorSpec::default_base();
        let reserve = GeneratorSpec::default_reserve();
        let cost = |p: f64, g: &GeneratorSpec| if p == 0.0 { 0.0 } else { g.cost_a * p * p + g.cost_b * p + g.cost_c };
        let p = &rec.dispatch.per_generator_p;
        assert_close!(obs[0], cost(p[0], &base) / 10.0, 1e-12);
        assert_close!(obs[1], cost(p[1], &reserve) / 10.0, 1e-12);
        for j in 0..5 {
            let inj = rec.prosumers[j].p_h.max(0.0) * rec.buy_price;
            assert_close!(obs[2 + j], inj / 10.0, 1e-12);
        }
        let draws: f64 = rec.prosumers.iter().map(|s| (-s.p_h).max(0.0)).sum();
        assert_close!(obs[7], (rec.consumer_load + draws) / 100.0, 1e-12);
    }

    #[test]
    fn pa_observation_layout() {
        let mut cfg = scenario1();
        cfg.prosumers[0].battery = crate::prosumer::BatterySpec::new(10.0, 5.0);
        let mut world = Simulation::new(&cfg).unwrap().world;
        let mut load = vec![0.0; 96];
        load[12] = 2.0;
        let mut pv = vec![0.0; 96];
        pv[12] = 1.0;
        world.profiles.prosumer_load[0] = DayProfile::new(load).unwrap();
        world.profiles.prosumer_pv[0] = DayProfile::new(pv).unwrap();
        world.slot = 12;
        let obs = pa_observation(&cfg, &world, 0, 0.08);
        assert_eq!(obs.len(), 4);
        assert_close!(obs[0], 0.2, 1e-12);
        assert_eq!(obs[1], 0.5);
        assert_close!(obs[2], 0.1, 1e-12);
        assert_close!(obs[3], 0.8, 1e-12);
        world.slot = 3;
        let night = pa_observation(&cfg, &world, 0, 0.08);
        assert_eq!((night[0], night[2]), (0.0, 0.0));
        cfg.pa_clock = true;
        world.slot = 24;
        let clocked = pa_observation(&cfg, &world, 0, 0.08);
        assert_eq!(clocked.len(), 6);
        assert_close!(clocked[4], 1.0, 1e-15);
        assert_close!(clocked[5], 0.0, 1e-15);
    }

    #[test]
    fn conventional_mode_never_queries_networks() {
        let mut cfg = scenario1();
        cfg.mode = Mode::Conventional;
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg).unwrap();
        for e in 0..2 {
            sim.run_episode(&mut agents, e, e as u64, Phase::Train { eps: 1.0 }).unwrap();
        }
        assert_eq!(agents.total_queries(), 0);
        assert!(agents.pas.iter().all(|a| a.buffer().is_empty()));
        assert!(agents.spa.buffer().is_empty());
    }

    #[test]
    fn exploration_run_is_reproducible() {
        let cfg = scenario1();
        let run = || {
            let mut agents = Agents::new(&cfg).unwrap();
            let mut sim = Simulation::new(&cfg).unwrap();
            let a = sim.run_episode(&mut agents, 0, 0, Phase::Train { eps: 1.0 }).unwrap();
            let b = sim.run_episode(&mut agents, 1, 1, Phase::Train { eps: 0.5 }).unwrap();
            (a, b, agents.pas[0].online().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn one_episode_fills_buffers() {
        let mut cfg = scenario1();
        cfg.training.warmup = 10_000;
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg).unwrap();
        sim.run_episode(&mut agents, 0, 0, Phase::Train { eps: 1.0 }).unwrap();
        assert_eq!(agents.spa.buffer().len(), 96);
        assert!(agents.pas.iter().all(|a| a.buffer().len() == 96));
        let terminal = agents.pas[0].buffer().iter().filter(|t| t.terminal).count();
        assert_eq!(terminal, 1);
    }

    #[test]
    fn non_terminal_days_chain_transitions() {
        let mut cfg = scenario1();
        cfg.training.warmup = 10_000;
        cfg.terminal_at_day_end = false;
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg).unwrap();
        sim.run_episode(&mut agents, 0, 0, Phase::Train { eps: 1.0 }).unwrap();
        assert_eq!(agents.pas[0].buffer().len(), 95);
        sim.run_episode(&mut agents, 1, 1, Phase::Train { eps: 1.0 }).unwrap();
        assert_eq!(agents.pas[0].buffer().len(), 191);
        assert!(agents.pas[0].buffer().iter().all(|t| !t.terminal));
    }

    #[test]
    fn observed_price_matches_recorded_price() {
        let cfg = scenario1();
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg).unwrap();
        let rec = sim.run_episode(&mut agents, 0, 0, Phase::Train { eps: 1.0 }).unwrap();
        let stored: Vec<_> = agents.pas[2].buffer().iter().collect();
        for (t, tr) in stored.iter().take(95).enumerate() {
            assert_close!(tr.state[3] * 0.1, rec.slots[t].buy_price, 1e-12);
            assert_close!(tr.next_state[3] * 0.1, rec.slots[t + 1].buy_price, 1e-12);
        }
    }

    /// Two prosumers with hand-set profiles and forced commands; every
    /// quantity of the settled slot is recomputed by hand.
    #[test]
    fn hand_built_slot_settlement() {
        let mut cfg = scenario1();
        cfg.prosumers.truncate(2);
        cfg.prosumers[0].battery = crate::prosumer::BatterySpec::new(10.0, 5.0);
        cfg.prosumers[1].battery = crate::prosumer::BatterySpec::new(10.0, 1.3);
        cfg.prosumers[0].pv_peak_kw = 6.0;
        cfg.mode = Mode::Conventional;
        let flat = |v: f64| DayProfile::new(vec![v; 96]).unwrap();
        let mut pv0 = vec![0.0; 96];
        pv0[50] = 6.0;
        let profiles = DayProfiles {
            prosumer_load: vec![flat(1.0), flat(3.0)],
            prosumer_pv: vec![DayProfile::new(pv0).unwrap(), flat(0.0)],
            consumer_load: vec![flat(50.0)],
        };
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::with_source(&cfg, ProfileSource::Fixed(profiles)).unwrap();
        sim.begin_day(0, 0).unwrap();
        sim.world.slot = 50;
        let rec = sim
            .run_slot(&mut agents, Phase::Evaluate, Some(&[BatteryCommand::Discharge, BatteryCommand::Discharge]))
            .unwrap();

        // Prosumer 0: 6 kW PV, discharges 2.5 kW, load 1 kW → injects 7.5 kW.
        // Prosumer 1: SoC 1.3 of min 1.0 → discharge clipped to −1.2 kW, draws 1.8 kW.
        assert_close!(rec.prosumers[0].p_h, 7.5, 1e-12);
        assert_close!(rec.prosumers[1].realized_p_b, -1.2, 1e-12);
        assert_close!(rec.prosumers[1].p_h, -1.8, 1e-12);
        let buy = 0.06;
        let sell = 0.095;
        assert_close!(rec.prosumers[0].reward, 7.5 * buy * 0.25, 1e-12);
        assert_close!(rec.prosumers[1].reward, -1.8 * sell * 0.25, 1e-12);
        assert_close!(rec.demand, 51.8, 1e-12);
        // Generators supply 51.8 − 7.5 = 44.3 kW net; all from the base unit.
        let net: f64 = 44.3;
        let p = (1.0 - (1.0 - 4.0 * 2e-4 * net).sqrt()) / (2.0 * 2e-4);
        assert_close!(rec.dispatch.per_generator_p[0], p, 1e-9);
        assert_eq!(rec.dispatch.per_generator_p[1], 0.0);
        let cost_rate = 0.0004 * p * p + 0.03 * p + 0.2;
        let spa = 51.8 * sell * 0.25 - cost_rate * 0.25 - 7.5 * buy * 0.25;
        assert_close!(rec.spa_reward, spa, 1e-12);
        assert_eq!(sim.world.slot, 51);
        assert_close!(sim.world.prosumers[1].soc, 1.0, 1e-12);
    }

    #[test]
    fn conventional_days_are_seed_independent_without_noise() {
        let mut a = scenario1();
        a.profiles.noise_frac = 0.0;
        let mut b = a.clone();
        b.seed = 999;
        let ra = evaluate_conventional(&a, 2).unwrap();
        let rb = evaluate_conventional(&b, 2).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn evaluation_is_repeatable_and_balanced() {
        let cfg = scenario1();
        let a = evaluate_conventional(&cfg, 3).unwrap();
        let b = evaluate_conventional(&cfg, 3).unwrap();
        assert_eq!(a, b);
        for day in &a {
            for s in &day.slots {
                for (p, spec) in s.prosumers.iter().zip(&cfg.prosumers) {
                    assert!(p.soc >= spec.battery.soc_min() - 1e-12 && p.soc <= spec.battery.soc_max() + 1e-12);
                    assert_ne!(p.command, BatteryCommand::Discharge);
                }
            }
        }
    }

    #[test]
    fn soc_carries_over_unless_reset() {
        let mut cfg = scenario1();
        cfg.mode = Mode::Conventional;
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg).unwrap();
        let day1 = sim.run_episode(&mut agents, 0, 0, Phase::Evaluate).unwrap();
        let end_soc = day1.slots[95].prosumers[4].soc;
        sim.begin_day(1, 1).unwrap();
        assert_eq!(sim.world.prosumers[4].soc, end_soc);
        cfg.reset_soc = true;
        let mut sim = Simulation::new(&cfg).unwrap();
        sim.run_episode(&mut agents, 0, 0, Phase::Evaluate).unwrap();
        sim.begin_day(1, 1).unwrap();
        assert_eq!(sim.world.prosumers[4].soc, cfg.prosumers[4].battery.soc_init);
    }

    #[test]
    fn training_curve_has_one_entry_per_episode() {
        let mut cfg = scenario1();
        cfg.training.set_episodes(3);
        let out = train(&cfg).unwrap();
        assert_eq!(out.episodes.len(), 3);
        assert!(agents_trained(&out.agents));
    }

    fn agents_trained(a: &Agents) -> bool {
        a.spa.adam().step > 0 && a.pas.iter().all(|p| p.adam().step > 0)
    }

    #[test]
    fn csv_profiles_are_used() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut cfg = scenario1();
        let mut named = Vec::new();
        let day = DayProfiles::synthesize(&cfg, 0).unwrap();
        for j in 0..5 {
            named.push((format!("load_{j}"), day.prosumer_load[j].clone()));
            named.push((format!("pv_{j}"), day.prosumer_pv[j].clone()));
        }
        named.push(("consumer_0".to_string(), day.consumer_load[0].clone()));
        crate::profiles::write_profiles_csv(&path, &named).unwrap();
        cfg.profiles.csv = Some(path);
        let mut sim = Simulation::new(&cfg).unwrap();
        sim.begin_day(7, 7).unwrap();
        assert_eq!(sim.world.profiles, day);
        cfg.consumers.push(cfg.consumers[0].clone());
        assert!(Simulation::new(&cfg).is_err());
    }

    #[test]
    fn checkpoint_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = scenario1();
        let agents = Agents::new(&cfg).unwrap();
        agents.save(dir.path()).unwrap();
        let back = Agents::load(dir.path(), 5).unwrap();
        assert_eq!(back.spa.online(), agents.spa.online());
        assert_eq!(back.pas[4].target(), agents.pas[4].target());
    }
}
