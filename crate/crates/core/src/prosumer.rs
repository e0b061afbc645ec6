//! Household physics and economics: battery state-of-charge with clipping,
//! net injection, the per-slot prosumer reward and the rule-based baseline.
//!
//! Sign conventions: battery power is positive when charging; net injection
//! is positive when the household feeds the grid.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    /// Nominal capacity (kWh).
    pub capacity: f64,
    pub soc_min_frac: f64,
    pub soc_max_frac: f64,
    /// Charge rating (kW, > 0).
    pub p_charge_max: f64,
    /// Discharge rating (kW, < 0).
    pub p_discharge_max: f64,
    /// Initial stored energy (kWh).
    pub soc_init: f64,
}

impl BatterySpec {
    pub fn new(capacity: f64, soc_init: f64) -> Self {
        BatterySpec {
            capacity,
            soc_min_frac: 0.1,
            soc_max_frac: 0.9,
            p_charge_max: 2.0,
            p_discharge_max: -2.5,
            soc_init,
        }
    }

    pub fn soc_min(&self) -> f64 {
        self.soc_min_frac * self.capacity
    }

    pub fn soc_max(&self) -> f64 {
        self.soc_max_frac * self.capacity
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(Error::Domain(format!(
                "capacity must be > 0 (got {})",
                self.capacity
            )));
        }
        if !(0.0 <= self.soc_min_frac
            && self.soc_min_frac < self.soc_max_frac
            && self.soc_max_frac <= 1.0)
        {
            return Err(Error::Domain(format!(
                "SoC fractions must satisfy 0 <= min < max <= 1 (got {}, {})",
                self.soc_min_frac, self.soc_max_frac
            )));
        }
        if !(self.p_discharge_max < 0.0 && self.p_charge_max > 0.0) {
            return Err(Error::Domain(
                "power ratings must satisfy p_discharge_max < 0 < p_charge_max".into(),
            ));
        }
        if !(self.soc_min() <= self.soc_init && self.soc_init <= self.soc_max()) {
            return Err(Error::Domain(format!(
                "soc_init {} kWh outside [{}, {}]",
                self.soc_init,
                self.soc_min(),
                self.soc_max()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerState {
    /// Stored energy (kWh).
    pub soc: f64,
    pub spec: BatterySpec,
    pub pv_max: f64,
    pub p_inject_max: f64,
}

impl ProsumerState {
    pub fn new(spec: BatterySpec, pv_max: f64, p_inject_max: f64) -> Self {
        ProsumerState {
            soc: spec.soc_init,
            spec,
            pv_max,
            p_inject_max,
        }
    }

    /// State of charge as a fraction of nominal capacity.
    pub fn soc_fraction(&self) -> f64 {
        self.soc / self.spec.capacity
    }
}

/// The three battery actions available to a prosumer agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryCommand {
    Charge,
    Hold,
    Discharge,
}

impl BatteryCommand {
    pub const ALL: [BatteryCommand; 3] = [
        BatteryCommand::Charge,
        BatteryCommand::Hold,
        BatteryCommand::Discharge,
    ];

    pub fn index(self) -> usize {
        match self {
            BatteryCommand::Charge => 0,
            BatteryCommand::Hold => 1,
            BatteryCommand::Discharge => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn requested_power(self, spec: &BatterySpec) -> f64 {
        match self {
            BatteryCommand::Charge => spec.p_charge_max,
            BatteryCommand::Hold => 0.0,
            BatteryCommand::Discharge => spec.p_discharge_max,
        }
    }
}

/// Applies a command for one slot, clipping the power so the stored energy
/// stays inside [soc_min, soc_max]. Returns `(new_soc, realized_power)`.
pub fn apply_battery_command(state: &ProsumerState, cmd: BatteryCommand, dt: f64) -> (f64, f64) {
    let (lo, hi) = (state.spec.soc_min(), state.spec.soc_max());
    let requested = cmd.requested_power(&state.spec);
    let target = state.soc + requested * dt;
    if target > hi {
        let p = ((hi - state.soc) / dt).max(0.0);
        (hi.max(state.soc), p)
    } else if target < lo {
        let p = ((lo - state.soc) / dt).min(0.0);
        (lo.min(state.soc), p)
    } else {
        (target, requested)
    }
}

/// Household power balance `pv − battery − consumption`, checked against the
/// injection limit.
pub fn net_injection(p_pv: f64, realized_p_b: f64, p_c: f64, p_inject_max: f64) -> Result<f64> {
    let p_h = p_pv - realized_p_b - p_c;
    if p_h.abs() > p_inject_max {
        return Err(Error::ConstraintViolation(format!(
            "net injection {p_h:.4} kW exceeds limit {p_inject_max} kW"
        )));
    }
    Ok(p_h)
}

/// Prosumer earnings for one slot in $: injections are paid the buy price,
/// purchases cost the sell price.
pub fn prosumer_slot_reward(p_h: f64, buy: f64, sell: f64, dt: f64) -> f64 {
    if p_h >= 0.0 {
        p_h * buy * dt
    } else {
        p_h * sell * dt
    }
}

/// Rule-based baseline: charge on PV surplus until full, never discharge.
/// Surplus beyond the charge rating flows out through the net injection.
pub fn conventional_action(state: &ProsumerState, p_pv: f64, p_c: f64) -> BatteryCommand {
    if p_pv > p_c && state.soc < state.spec.soc_max() {
        BatteryCommand::Charge
    } else {
        BatteryCommand::Hold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(soc: f64) -> ProsumerState {
        let mut s = ProsumerState::new(BatterySpec::new(10.0, 5.0), 4.0, 10.0);
        s.soc = soc;
        s
    }

    #[test]
    fn charge_within_bounds() {
        let (soc, p) = apply_battery_command(&state(5.0), BatteryCommand::Charge, 0.25);
        assert_close!(soc, 5.5, 1e-12);
        assert_eq!(p, 2.0);
    }

    #[test]
    fn charge_clipped_at_soc_max() {
        let (soc, p) = apply_battery_command(&state(8.8), BatteryCommand::Charge, 0.25);
        assert_eq!(soc, 9.0);
        assert_close!(p, 0.8, 1e-12);
    }

    #[test]
    fn discharge_with_empty_margin() {
        let (soc, p) = apply_battery_command(&state(1.0), BatteryCommand::Discharge, 0.25);
        assert_eq!(soc, 1.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn discharge_clipped_at_soc_min() {
        let (soc, p) = apply_battery_command(&state(1.3), BatteryCommand::Discharge, 0.25);
        assert_eq!(soc, 1.0);
        assert_close!(p, -1.2, 1e-12);
    }

    #[test]
    fn hold_keeps_soc() {
        let (soc, p) = apply_battery_command(&state(3.3), BatteryCommand::Hold, 0.25);
        assert_eq!((soc, p), (3.3, 0.0));
    }

    #[test]
    fn net_injection_examples() {
        assert_eq!(net_injection(3.0, 2.0, 1.0, 10.0).unwrap(), 0.0);
        assert_eq!(net_injection(6.0, -2.5, 1.0, 10.0).unwrap(), 7.5);
        assert_eq!(net_injection(0.0, 2.0, 3.0, 10.0).unwrap(), -5.0);
        assert!(matches!(
            net_injection(12.0, 0.0, 0.0, 10.0),
            Err(Error::ConstraintViolation(_))
        ));
    }

    #[test]
    fn reward_examples() {
        assert_close!(prosumer_slot_reward(2.0, 0.1, 0.095, 0.25), 0.05, 1e-12);
        assert_close!(prosumer_slot_reward(-4.0, 0.1, 0.095, 0.25), -0.095, 1e-12);
        assert_eq!(prosumer_slot_reward(0.0, 0.3, 7.0, 0.25), 0.0);
    }

    /// Replays the rule-based baseline slot by slot: sunny surplus, full battery,
    /// and a deficit slot.
    #[test]
    fn conventional_trace() {
        let s = state(5.0);
        assert_eq!(conventional_action(&s, 4.0, 1.0), BatteryCommand::Charge);
        let (_, p_b) = apply_battery_command(&s, BatteryCommand::Charge, 0.25);
        assert_eq!(net_injection(4.0, p_b, 1.0, 10.0).unwrap(), 1.0);

        let full = state(9.0);
        assert_eq!(conventional_action(&full, 4.0, 1.0), BatteryCommand::Hold);
        assert_eq!(net_injection(4.0, 0.0, 1.0, 10.0).unwrap(), 3.0);

        assert_eq!(conventional_action(&s, 1.0, 3.0), BatteryCommand::Hold);
        assert_eq!(net_injection(1.0, 0.0, 3.0, 10.0).unwrap(), -2.0);
    }

    #[test]
    fn battery_validation() {
        assert!(BatterySpec::new(10.0, 2.0).validate().is_ok());
        let err = BatterySpec::new(-1.0, 0.0).validate().unwrap_err();
        assert!(err.to_string().contains("capacity must be > 0"));
        assert!(BatterySpec::new(10.0, 0.5).validate().is_err());
        let mut b = BatterySpec::new(10.0, 2.0);
        b.p_discharge_max = 1.0;
        assert!(b.validate().is_err());
    }

    #[test]
    fn command_indices_round_trip() {
        for cmd in BatteryCommand::ALL {
            assert_eq!(BatteryCommand::from_index(cmd.index()), Some(cmd));
        }
        assert_eq!(BatteryCommand::from_index(3), None);
    }

    fn command() -> impl Strategy<Value = BatteryCommand> {
        (0usize..3).prop_map(|i| BatteryCommand::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn soc_stays_in_bounds_and_books_balance(
            cap in 2.0f64..25.0,
            init_frac in 0.1f64..0.9,
            cmds in proptest::collection::vec(command(), 1..400),
        ) {
            let spec = BatterySpec::new(cap, cap * init_frac);
            let mut s = ProsumerState::new(spec, 4.0, 10.0);
            let mut energy = 0.0;
            for cmd in cmds {
                let (soc, p) = apply_battery_command(&s, cmd, 0.25);
                prop_assert!(soc >= s.spec.soc_min() && soc <= s.spec.soc_max());
                prop_assert!(p >= s.spec.p_discharge_max && p <= s.spec.p_charge_max);
                energy += p * 0.25;
                s.soc = soc;
            }
            prop_assert!((s.soc - cap * init_frac - energy).abs() < 1e-9);
        }

        #[test]
        fn conventional_never_discharges(soc_frac in 0.1f64..=0.9, pv in 0.0f64..8.0, load in 0.0f64..8.0) {
            let s = state(10.0 * soc_frac);
            prop_assert_ne!(conventional_action(&s, pv, load), BatteryCommand::Discharge);
        }

        #[test]
        fn reward_monotone_in_injection(a in -10.0f64..10.0, b in -10.0f64..10.0, buy in 0.01f64..0.2, sell in 0.01f64..0.2) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(prosumer_slot_reward(lo, buy, sell, 0.25) <= prosumer_slot_reward(hi, buy, sell, 0.25));
        }
    }
}
