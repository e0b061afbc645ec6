//! Grid-side economics: generator cost curves, transmission losses, merit-order
//! dispatch, the sell-price schedule and the service provider's slot settlement.
//!
//! Units: power in kW, energy in kWh, prices in $/kWh, cost rates in $/h.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SLOTS_PER_DAY};

/// First slot billed at the after-11am sell price (11:00 with 15-minute slots).
pub const AFTERNOON_FIRST_SLOT: usize = 44;

/// Absolute tolerance used when comparing powers against limits.
const POWER_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Base,
    Reserve,
}

/// One dispatchable unit with a quadratic cost curve `a·p² + b·p + c` ($/h)
/// and quadratic losses `beta·p²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub p_min: f64,
    pub p_max: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
    pub beta: f64,
}

impl GeneratorSpec {
    /// Base unit with limits [5, 45] kW and β = 2e-4.
    pub fn default_base() -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Base,
            p_min: 5.0,
            p_max: 45.0,
            cost_a: 0.0004,
            cost_b: 0.03,
            cost_c: 0.2,
            beta: 0.0002,
        }
    }

    /// Spinning reserve with limits [0, 100] kW and β = 2e-4.
    pub fn default_reserve() -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Reserve,
            p_min: 0.0,
            p_max: 100.0,
            cost_a: 0.001,
            cost_b: 0.07,
            cost_c: 0.5,
            beta: 0.0002,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.p_min,
            self.p_max,
            self.cost_a,
            self.cost_b,
            self.cost_c,
            self.beta,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("generator parameters must be finite".into()));
        }
        if self.p_min < 0.0 || self.p_min > self.p_max {
            return Err(Error::Domain(format!(
                "generator limits must satisfy 0 <= p_min <= p_max (got [{}, {}])",
                self.p_min, self.p_max
            )));
        }
        if self.cost_a < 0.0 {
            return Err(Error::Domain("generator cost_a must be >= 0".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Domain("generator beta must be >= 0".into()));
        }
        if self.beta * self.p_max >= 0.5 {
            return Err(Error::Domain(format!(
                "generator beta*p_max must be < 0.5 (got {})",
                self.beta * self.p_max
            )));
        }
        Ok(())
    }

    pub fn net_min(&self) -> f64 {
        net_output(self.p_min, self.beta)
    }

    pub fn net_max(&self) -> f64 {
        net_output(self.p_max, self.beta)
    }
}

/// Two-level time-of-day sell price and the service provider's buy-price menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub sell_before_11am: f64,
    pub sell_after_11am: f64,
    pub buy_levels: Vec<f64>,
    pub conventional_buy: f64,
}

impl Default for PriceSchedule {
    fn default() -> Self {
        PriceSchedule {
            sell_before_11am: 0.05,
            sell_after_11am: 0.095,
            buy_levels: vec![0.05, 0.06, 0.07, 0.08, 0.09, 0.1],
            conventional_buy: 0.06,
        }
    }
}

impl PriceSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sell_before_11am) || !positive(self.sell_after_11am) {
            return Err(Error::Domain("sell prices must be > 0".into()));
        }
        if !positive(self.conventional_buy) {
            return Err(Error::Domain("conventional buy price must be > 0".into()));
        }
        if self.buy_levels.is_empty() {
            return Err(Error::Domain("buy_levels must be non-empty".into()));
        }
        if !self.buy_levels.iter().all(|&v| positive(v)) {
            return Err(Error::Domain("buy_levels must all be > 0".into()));
        }
        if self.buy_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("buy_levels must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Outcome of dispatching one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    /// Gross output per generator (kW), in input order.
    pub per_generator_p: Vec<f64>,
    /// `beta_i · p_i²` per generator (kW).
    pub per_generator_loss: Vec<f64>,
    /// Σ cost rates ($/h).
    pub total_cost_rate: f64,
    /// Reserve gross output integrated over the slot (kWh).
    pub reserve_energy: f64,
    /// Net output above the requested amount that base minimums forced onto the grid (kW).
    pub curtailed_kw: f64,
}

impl DispatchResult {
    /// A dispatch with no committed units.
    pub fn empty(n_generators: usize) -> Self {
        DispatchResult {
            per_generator_p: vec![0.0; n_generators],
            per_generator_loss: vec![0.0; n_generators],
            total_cost_rate: 0.0,
            reserve_energy: 0.0,
            curtailed_kw: 0.0,
        }
    }

    /// Σ (p_i − loss_i).
    pub fn net_supplied(&self) -> f64 {
        self.per_generator_p
            .iter()
            .zip(&self.per_generator_loss)
            .map(|(p, l)| p - l)
            .sum()
    }
}

/// Cost rate of one unit in $/h. An uncommitted unit (p = 0) costs nothing.
pub fn generator_cost_rate(p: f64, spec: &GeneratorSpec) -> Result<f64> {
    if !p.is_finite() || p < 0.0 || p > spec.p_max + POWER_EPS {
        return Err(Error::Domain(format!(
            "generator output {p} kW outside [0, {}]",
            spec.p_max
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(spec.cost_a * p * p + spec.cost_b * p + spec.cost_c)
}

/// Output delivered to the grid after transmission losses.
pub fn net_output(p: f64, beta: f64) -> f64 {
    p - beta * p * p
}

/// Smallest gross output whose net output equals `net`.
pub fn gross_for_net(net: f64, beta: f64) -> Result<f64> {
    if !net.is_finite() || net < 0.0 {
        return Err(Error::Domain(format!("net output {net} must be finite and >= 0")));
    }
    if beta == 0.0 || net == 0.0 {
        return Ok(net);
    }
    let disc = 1.0 - 4.0 * beta * net;
    if disc < 0.0 {
        return Err(Error::Domain(format!(
            "net output {net} kW unreachable with beta {beta}"
        )));
    }
    // Rationalized small root avoids cancellation for small beta·net.
    let mut p = 2.0 * net / (1.0 + disc.sqrt());
    let slope = 1.0 - 2.0 * beta * p;
    if slope > 0.0 {
        p -= (net_output(p, beta) - net) / slope;
    }
    Ok(p)
}

/// Merit-order dispatch: base units fill first (in list order), reserve covers
/// the remainder. Demand below the base minimum keeps base units at `p_min`
/// and reports the excess as curtailed.
pub fn dispatch(required_net: f64, generators: &[GeneratorSpec], dt: f64) -> Result<DispatchResult> {
    if !required_net.is_finite() {
        return Err(Error::Domain(format!("required net power {required_net} is not finite")));
    }
    if !generators.iter().any(|g| g.kind == GeneratorKind::Base) {
        return Err(Error::Domain("dispatch needs at least one base generator".into()));
    }
    let capacity: f64 = generators.iter().map(GeneratorSpec::net_max).sum();
    if required_net > capacity + POWER_EPS {
        return Err(Error::InfeasibleDispatch {
            required_kw: required_net,
            capacity_kw: capacity,
        });
    }

    let n = generators.len();
    let mut assigned = vec![0.0; n];
    let mut at_cap = vec![false; n];
    let mut committed = vec![false; n];
    let bases: Vec<usize> = (0..n)
        .filter(|&i| generators[i].kind == GeneratorKind::Base)
        .collect();
    let reserves: Vec<usize> = (0..n)
        .filter(|&i| generators[i].kind == GeneratorKind::Reserve)
        .collect();

    let mut base_floor = 0.0;
    for &i in &bases {
        assigned[i] = generators[i].net_min();
        committed[i] = generators[i].p_min > 0.0;
        base_floor += assigned[i];
    }

    let mut curtailed = 0.0;
    let mut remaining = required_net - base_floor;
    if remaining < 0.0 {
        curtailed = -remaining;
        remaining = 0.0;
    }

    for &i in &bases {
        if remaining <= 0.0 {
            break;
        }
        let g = &generators[i];
        let headroom = g.net_max() - assigned[i];
        if remaining >= headroom {
            assigned[i] = g.net_max();
            at_cap[i] = true;
            remaining -= headroom;
        } else {
            assigned[i] += remaining;
            remaining = 0.0;
        }
        committed[i] = true;
    }

    for &i in &reserves {
        if remaining <= 0.0 {
            break;
        }
        let g = &generators[i];
        let (lo, hi) = (g.net_min(), g.net_max());
        committed[i] = true;
        if remaining >= hi {
            assigned[i] = hi;
            at_cap[i] = true;
            remaining -= hi;
        } else if remaining >= lo {
            assigned[i] = remaining;
            remaining = 0.0;
        } else {
            // Reserve minimum overshoots: back base units off toward their floors.
            assigned[i] = lo;
            let mut excess = lo - remaining;
            remaining = 0.0;
            for &b in bases.iter().rev() {
                let slack = assigned[b] - generators[b].net_min();
                let take = slack.min(excess);
                if take > 0.0 {
                    assigned[b] -= take;
                    at_cap[b] = false;
                    excess -= take;
                }
            }
            curtailed += excess;
        }
    }
    if remaining > POWER_EPS {
        // Only reachable through rounding when required_net sits at capacity.
        curtailed -= remaining;
    }

    let mut result = DispatchResult::empty(n);
    for (i, g) in generators.iter().enumerate() {
        if !committed[i] && assigned[i] == 0.0 {
            continue;
        }
        let p = if at_cap[i] {
            g.p_max
        } else {
            gross_for_net(assigned[i], g.beta)?.clamp(g.p_min, g.p_max)
        };
        result.per_generator_p[i] = p;
        result.per_generator_loss[i] = g.beta * p * p;
        result.total_cost_rate += generator_cost_rate(p, g)?;
        if g.kind == GeneratorKind::Reserve {
            result.reserve_energy += p * dt;
        }
    }
    result.curtailed_kw = curtailed;
    Ok(result)
}

/// Sell price for a 15-minute slot of the day (slot 0 starts at 00:00).
pub fn sell_price(slot_index: usize, schedule: &PriceSchedule) -> Result<f64> {
    if slot_index >= SLOTS_PER_DAY {
        return Err(Error::Domain(format!(
            "slot index {slot_index} outside 0..{SLOTS_PER_DAY}"
        )));
    }
    Ok(if slot_index < AFTERNOON_FIRST_SLOT {
        schedule.sell_before_11am
    } else {
        schedule.sell_after_11am
    })
}

/// Service-provider profit for one slot in $: sales to all loads minus
/// generation cost minus payments for non-negative prosumer injections.
pub fn sp_slot_reward(
    demand_kw: f64,
    injections_kw: &[f64],
    buy_price: f64,
    dispatch: &DispatchResult,
    sell_price: f64,
    dt: f64,
) -> f64 {
    let injected: f64 = injections_kw.iter().map(|&p| p.max(0.0)).sum();
    demand_kw * sell_price * dt - dispatch.total_cost_rate * dt - injected * buy_price * dt
}

/// Net output the generators must deliver: demand not covered by injections.
pub fn required_generation(demand_kw: f64, injections_kw: &[f64]) -> f64 {
    demand_kw - injections_kw.iter().map(|&p| p.max(0.0)).sum::<f64>()
}

/// Money flowing through one slot must balance: whatever consumers pay ends up
/// as service-provider profit, generation cost or prosumer earnings. Returns
/// the imbalance in $ (zero up to rounding).
pub fn money_residual(
    consumer_load_kw: f64,
    sell_price: f64,
    dt: f64,
    spa_reward: f64,
    total_cost_rate: f64,
    prosumer_rewards: &[f64],
) -> f64 {
    let prosumers: f64 = prosumer_rewards.iter().sum();
    spa_reward + total_cost_rate * dt + prosumers - consumer_load_kw * sell_price * dt
}
