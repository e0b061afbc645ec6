use gridmarl::config::{parse_config_str, Mode, Preset, ScenarioConfig};
use gridmarl::env::{money_residual, sell_price};
use gridmarl::metrics::{read_slots_csv, slot_rows, write_slots_csv, MetricsBundle};
use gridmarl::prosumer::BatteryCommand;
use gridmarl::rng::entity_rng;
use gridmarl::sim::{evaluate_conventional, train, Agents, Phase, Simulation};
use gridmarl::SLOTS_PER_DAY;
use proptest::prelude::*;
use rand::Rng;

fn quick(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset(Preset::Scenario1);
    cfg.seed = seed;
    cfg.training = cfg.training.clone().small();
    cfg.training.spa.hidden = vec![8];
    cfg.training.pa.hidden = vec![8, 8];
    cfg.training.warmup = 64;
    cfg.training.set_episodes(2);
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any command sequence keeps every slot balanced, money conserved and
    /// every battery inside its window.
    #[test]
    fn random_commands_respect_physics(seed in 0u64..1000, cmd_seed in 0u64..1000, stream in 0u64..50) {
        let cfg = quick(seed);
        let mut agents = Agents::new(&cfg).unwrap();
        let mut sim = Simulation::new(&cfg).unwrap();
        sim.begin_day(0, stream).unwrap();
        let mut rng = entity_rng(cmd_seed, 9);
        for _ in 0..SLOTS_PER_DAY {
            let cmds: Vec<BatteryCommand> = (0..cfg.n_prosumers()).map(|_| BatteryCommand::ALL[rng.gen_range(0..3)]).collect();
            let rec = sim.run_slot(&mut agents, Phase::Evaluate, Some(&cmds)).unwrap();
            let injected: f64 = rec.prosumers.iter().map(|p| p.p_h.max(0.0)).sum();
            let supplied = rec.dispatch.net_supplied() - rec.dispatch.curtailed_kw;
            prop_assert!((rec.demand - supplied - injected).abs() < 1e-9);
            let sell = sell_price(rec.slot, &cfg.prices).unwrap();
            let rewards: Vec<f64> = rec.prosumers.iter().map(|p| p.reward).collect();
            let r = money_residual(rec.consumer_load, sell, cfg.dt_hours, rec.spa_reward, rec.dispatch.total_cost_rate, &rewards);
            prop_assert!(r.abs() < 1e-9);
            for (p, setup) in rec.prosumers.iter().zip(&cfg.prosumers) {
                prop_assert!(p.soc >= setup.battery.soc_min() - 1e-12);
                prop_assert!(p.soc <= setup.battery.soc_max() + 1e-12);
                prop_assert!((p.p_h - (p.p_pv - p.realized_p_b - p.p_c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sell_price_steps_once(slot in 0usize..96) {
        let cfg = ScenarioConfig::preset(Preset::Scenario1);
        let p = sell_price(slot, &cfg.prices).unwrap();
        prop_assert_eq!(p, if slot < 44 { 0.05 } else { 0.095 });
    }
}

#[test]
fn training_is_reproducible_per_seed() {
    let a = train(&quick(3)).unwrap();
    let b = train(&quick(3)).unwrap();
    let c = train(&quick(4)).unwrap();
    assert_eq!(a.episodes, b.episodes);
    assert_eq!(a.agents.spa.online(), b.agents.spa.online());
    assert_ne!(a.episodes, c.episodes);
}

#[test]
fn conventional_daily_metrics_roundtrip() {
    let cfg = quick(1);
    let recs = evaluate_conventional(&cfg, 3).unwrap();
    let bundle = MetricsBundle::from_records(&recs).unwrap();
    assert_eq!(bundle.days, 3);
    assert_eq!(bundle.avg_net_power_profile_kw.len(), SLOTS_PER_DAY);
    let cum = &bundle.sp_cumulative_profit_usd;
    let daily: Vec<f64> = recs.iter().map(|r| r.sp_profit()).collect();
    assert!((cum[2] - daily.iter().sum::<f64>()).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.json");
    bundle.save(&path).unwrap();
    assert_eq!(MetricsBundle::load(&path).unwrap(), bundle);

    let rows = slot_rows(&recs);
    let mut buf = Vec::new();
    write_slots_csv(&rows, &mut buf, &dir.path().join("slots.csv")).unwrap();
    assert_eq!(read_slots_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn config_hash_ignores_key_order() {
    let a = parse_config_str(r#"{"scenario": {"seed": 5, "mode": "conventional"}, "training": {"episodes": 30}}"#).unwrap();
    let b = parse_config_str(r#"{"training": {"episodes": 30}, "scenario": {"mode": "conventional", "seed": 5}}"#).unwrap();
    assert_eq!(a.hash_hex(), b.hash_hex());
    assert_eq!(a.mode, Mode::Conventional);
    let c = parse_config_str(r#"{"scenario": {"seed": 6, "mode": "conventional"}, "training": {"episodes": 30}}"#).unwrap();
    assert_ne!(a.hash_hex(), c.hash_hex());
}

#[test]
fn unknown_config_keys_are_rejected() {
    assert!(parse_config_str(r#"{"scenario": {"sede": 5}}"#).is_err());
    assert!(parse_config_str(r#"{"trainingg": {}}"#).is_err());
}

#[test]
fn scenario2_shapes() {
    let cfg = ScenarioConfig::preset(Preset::Scenario2);
    assert_eq!(cfg.n_prosumers(), 50);
    assert_eq!(cfg.n_consumers(), 40);
    assert_eq!(cfg.spa_observation_len(), 53);
    let recs = evaluate_conventional(&cfg, 1).unwrap();
    assert_eq!(recs[0].slots.len(), SLOTS_PER_DAY);
}
