//! Multi-seed comparisons against the rule-based baseline, and the two
//! parameter sweeps. Seeds run as isolated experiments and may be spread over
//! a thread pool; nothing is shared between them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, Preset, ProsumerSetup, ScenarioConfig};
use crate::env::{dispatch, required_generation, sp_slot_reward};
use crate::metrics::{LearningCurves, MetricsBundle};
use crate::profiles::DayProfile;
use crate::prosumer::{BatteryCommand, BatterySpec};
use crate::sim::{
    evaluate_conventional, evaluate_with, train_with, Agents, DayProfiles, EpisodeRecord, Phase, ProfileSource, Simulation,
    TrainOutcome, EVAL_STREAM_BASE,
};
use crate::{Error, Result};

/// Battery capacities visited by the size sweep (kWh).
pub const BATTERY_GRID_KWH: [f64; 13] = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 25.0];
/// Loss coefficients visited by the loss sweep (1/kW).
pub const BETA_GRID: [f64; 5] = [0.0, 1e-4, 2e-4, 4e-4, 8e-4];

/// Runs `f` over `items` on `threads` workers (1 = in the calling thread),
/// preserving order.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// One seed: agents trained from scratch, then both modes evaluated on the
/// same evaluation days.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub agent: MetricsBundle,
    pub conventional: MetricsBundle,
    pub agent_records: Vec<EpisodeRecord>,
    pub conventional_records: Vec<EpisodeRecord>,
}

pub fn run_seed(cfg: &ScenarioConfig, seed: u64) -> Result<SeedRun> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    cfg.mode = Mode::AgentBased;
    let source = ProfileSource::from_config(&cfg)?;
    let TrainOutcome { mut agents, episodes } = train_with(&cfg, source.clone(), |_, _| Ok(()))?;
    let days = cfg.training.eval_days;
    let agent_records = evaluate_with(&cfg, source, &mut agents, days)?;
    let conventional_records = evaluate_conventional(&cfg, days)?;
    let curves = LearningCurves::from_episodes(&episodes, cfg.training.moving_average_window)?;
    Ok(SeedRun {
        seed,
        agent: MetricsBundle::from_records(&agent_records)?.with_learning_curves(curves),
        conventional: MetricsBundle::from_records(&conventional_records)?,
        agent_records,
        conventional_records,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<SeedRun>,
}

fn seed_mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn relative(new: f64, old: f64) -> f64 {
    if old == 0.0 {
        if new == 0.0 {
            0.0
        } else {
            f64::INFINITY * (new - old).signum()
        }
    } else {
        (new - old) / old.abs()
    }
}

impl Comparison {
    pub fn run(cfg: &ScenarioConfig, seeds: &[u64], threads: usize) -> Result<Self> {
        Ok(Comparison {
            runs: par_map(seeds, threads, |&s| run_seed(cfg, s))?,
        })
    }

    fn bills(&self, pick: impl Fn(&SeedRun) -> &MetricsBundle) -> Vec<f64> {
        let n = pick(&self.runs[0]).per_prosumer_daily_bill_usd.len();
        (0..n)
            .map(|j| seed_mean(self.runs.iter().map(|r| pick(r).per_prosumer_daily_bill_usd[j])))
            .collect()
    }

    /// Per-prosumer daily bill averaged over seeds.
    pub fn agent_bills(&self) -> Vec<f64> {
        self.bills(|r| &r.agent)
    }

    pub fn conventional_bills(&self) -> Vec<f64> {
        self.bills(|r| &r.conventional)
    }

    /// Prosumers whose seed-mean bill is strictly lower with agents.
    pub fn prosumers_improved(&self) -> usize {
        self.agent_bills()
            .iter()
            .zip(self.conventional_bills())
            .filter(|(a, c)| **a < *c)
            .count()
    }

    /// Fractional reduction of the summed fleet bill.
    pub fn bill_reduction(&self) -> f64 {
        -relative(self.agent_bills().iter().sum(), self.conventional_bills().iter().sum())
    }

    pub fn agent_sp_profit(&self) -> f64 {
        seed_mean(self.runs.iter().map(|r| r.agent.sp_daily_profit_usd))
    }

    pub fn conventional_sp_profit(&self) -> f64 {
        seed_mean(self.runs.iter().map(|r| r.conventional.sp_daily_profit_usd))
    }

    pub fn sp_profit_gain(&self) -> f64 {
        relative(self.agent_sp_profit(), self.conventional_sp_profit())
    }

    pub fn agent_reserve(&self) -> f64 {
        seed_mean(self.runs.iter().map(|r| r.agent.reserve_daily_energy_kwh))
    }

    pub fn conventional_reserve(&self) -> f64 {
        seed_mean(self.runs.iter().map(|r| r.conventional.reserve_daily_energy_kwh))
    }

    pub fn reserve_reduction(&self) -> f64 {
        -relative(self.agent_reserve(), self.conventional_reserve())
    }

    fn profile(&self, pick: impl Fn(&SeedRun) -> &MetricsBundle) -> Vec<f64> {
        (0..crate::SLOTS_PER_DAY)
            .map(|t| seed_mean(self.runs.iter().map(|r| pick(r).avg_net_power_profile_kw[t])))
            .collect()
    }

    pub fn agent_net_profile(&self) -> Vec<f64> {
        self.profile(|r| &r.agent)
    }

    pub fn conventional_net_profile(&self) -> Vec<f64> {
        self.profile(|r| &r.conventional)
    }
}

/// Re-runs dispatch and service-provider settlement on a recorded trace with
/// every generator's loss coefficient set to `beta`. Prices, demand and
/// injections are kept exactly as recorded.
pub fn resettle(records: &[EpisodeRecord], cfg: &ScenarioConfig, beta: f64) -> Result<Vec<EpisodeRecord>> {
    let mut generators = cfg.generators.clone();
    for g in &mut generators {
        g.beta = beta;
        g.validate()?;
    }
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for s in &mut r.slots {
                let injections: Vec<f64> = s.prosumers.iter().map(|p| p.p_h).collect();
                let required = required_generation(s.demand, &injections);
                s.dispatch = dispatch(required, &generators, cfg.dt_hours)?;
                s.spa_reward = sp_slot_reward(s.demand, &injections, s.buy_price, &s.dispatch, s.sell_price, cfg.dt_hours);
            }
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub beta: f64,
    pub sp_daily_profit_usd: f64,
    pub reserve_daily_energy_kwh: f64,
}

pub fn loss_sweep(records: &[EpisodeRecord], cfg: &ScenarioConfig, betas: &[f64]) -> Result<Vec<LossPoint>> {
    betas
        .iter()
        .map(|&beta| {
            let m = MetricsBundle::from_records(&resettle(records, cfg, beta)?)?;
            Ok(LossPoint {
                beta,
                sp_daily_profit_usd: m.sp_daily_profit_usd,
                reserve_daily_energy_kwh: m.reserve_daily_energy_kwh,
            })
        })
        .collect()
}

/// One (capacity, seed) cell of the battery sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryCell {
    pub capacity_kwh: f64,
    pub seed: u64,
    pub agent: MetricsBundle,
    pub conventional: MetricsBundle,
}

impl BatteryCell {
    /// Fleet-mean bill relative to the baseline at the same capacity ($/day).
    pub fn relative_bill(&self) -> f64 {
        self.agent.mean_daily_bill_usd - self.conventional.mean_daily_bill_usd
    }

    pub fn relative_sp_profit(&self) -> f64 {
        self.agent.sp_daily_profit_usd - self.conventional.sp_daily_profit_usd
    }
}

pub fn battery_sweep(cfg: &ScenarioConfig, capacities: &[f64], seeds: &[u64], threads: usize) -> Result<Vec<BatteryCell>> {
    let cells: Vec<(f64, u64)> = capacities
        .iter()
        .flat_map(|&c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    par_map(&cells, threads, |&(capacity, seed)| {
        let mut cfg = cfg.clone();
        cfg.set_battery_capacity(capacity);
        cfg.validate()?;
        let run = run_seed(&cfg, seed)?;
        Ok(BatteryCell {
            capacity_kwh: capacity,
            seed,
            agent: run.agent,
            conventional: run.conventional,
        })
    })
}

/// Mean and standard error of each group.
pub fn mean_se(groups: &[Vec<f64>]) -> Vec<(f64, f64)> {
    groups
        .iter()
        .map(|g| {
            let n = g.len() as f64;
            let m = g.iter().sum::<f64>() / n;
            let se = if g.len() > 1 {
                (g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            (m, se)
        })
        .collect()
}

/// One-sided test that a series of seed means does not rise: every step up
/// stays within two combined standard errors, and the least-squares slope
/// against `x` is not positive.
pub fn non_increasing_within_noise(x: &[f64], stats: &[(f64, f64)]) -> bool {
    let steps_ok = stats.windows(2).all(|w| {
        let (m0, s0) = w[0];
        let (m1, s1) = w[1];
        m1 - m0 <= 2.0 * (s0 * s0 + s1 * s1).sqrt()
    });
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = stats.iter().map(|s| s.0).sum::<f64>() / n;
    let cov: f64 = x.iter().zip(stats).map(|(xi, s)| (xi - mx) * (s.0 - my)).sum();
    steps_ok && cov <= 0.0
}

/// Slot whose buy price dwarfs every other price in [`dominant_action_scenario`].
pub const DOMINANT_SLOT: usize = 70;
/// Length of the enumerated command window ending at [`DOMINANT_SLOT`].
pub const WINDOW: usize = 4;

/// One prosumer with no load and no PV, energy at 0.001 $/kWh all day and a
/// buy price of 1 $/kWh at [`DOMINANT_SLOT`] only. The single best use of the
/// battery is to discharge into that slot.
pub fn dominant_action_scenario(episodes: usize) -> (ScenarioConfig, ProfileSource) {
    let mut cfg = ScenarioConfig::preset(Preset::Scenario1);
    cfg.name = "dominant_action".into();
    cfg.prosumers = vec![ProsumerSetup {
        pv_peak_kw: 0.0,
        load_peak_kw: 1.0,
        load_base_frac: 0.5,
        battery: BatterySpec::new(10.0, 5.0),
        p_inject_max_kw: 10.0,
    }];
    cfg.consumers.clear();
    cfg.prices.sell_before_11am = 0.001;
    cfg.prices.sell_after_11am = 0.001;
    let mut schedule = vec![0.001; crate::SLOTS_PER_DAY];
    schedule[DOMINANT_SLOT] = 1.0;
    cfg.buy_price_schedule = Some(schedule);
    cfg.profiles.noise_frac = 0.0;
    cfg.pa_clock = true;
    cfg.reset_soc = true;
    cfg.terminal_at_day_end = true;
    cfg.training = cfg.training.clone().small();
    cfg.training.warmup = 500;
    cfg.training.set_episodes(episodes);
    let zeros = DayProfiles {
        prosumer_load: vec![DayProfile::zeros()],
        prosumer_pv: vec![DayProfile::zeros()],
        consumer_load: Vec::new(),
    };
    (cfg, ProfileSource::Fixed(zeros))
}

/// Prosumer reward of every one of the 3^[`WINDOW`] command sequences over the
/// slots ending at [`DOMINANT_SLOT`]. Earlier slots follow `agents` greedily
/// on evaluation day `day`.
pub fn window_returns(
    cfg: &ScenarioConfig,
    source: &ProfileSource,
    agents: &mut Agents,
    day: usize,
) -> Result<Vec<([BatteryCommand; WINDOW], f64)>> {
    let first = DOMINANT_SLOT + 1 - WINDOW;
    let mut out = Vec::with_capacity(3usize.pow(WINDOW as u32));
    for code in 0..3usize.pow(WINDOW as u32) {
        let mut window = [BatteryCommand::Hold; WINDOW];
        let mut c = code;
        for w in window.iter_mut() {
            *w = BatteryCommand::ALL[c % 3];
            c /= 3;
        }
        let mut sim = Simulation::with_source(cfg, source.clone())?;
        sim.begin_day(day, EVAL_STREAM_BASE + day as u64)?;
        for _ in 0..first {
            sim.run_slot(agents, Phase::Evaluate, None)?;
        }
        let mut total = 0.0;
        for cmd in window {
            let rec = sim.run_slot(agents, Phase::Evaluate, Some(&[cmd]))?;
            total += rec.prosumers[0].reward;
        }
        out.push((window, total));
    }
    Ok(out)
}

/// Fraction of greedy evaluation days on which the prosumer discharges at
/// [`DOMINANT_SLOT`].
pub fn dominant_slot_frequency(records: &[EpisodeRecord]) -> f64 {
    let hits = records
        .iter()
        .filter(|r| r.slots[DOMINANT_SLOT].prosumers[0].command == BatteryCommand::Discharge)
        .count();
    hits as f64 / records.len() as f64
}
