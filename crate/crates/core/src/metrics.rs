//! Aggregates over evaluated days and the on-disk result formats.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::{EpisodeRecord, EpisodeSummary};
use crate::{Error, Result, SLOTS_PER_DAY};

fn non_empty(records: &[EpisodeRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Domain("no days recorded".into()));
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Mean daily bill of prosumer `j`: positive means the prosumer pays.
pub fn daily_bill(records: &[EpisodeRecord], j: usize) -> Result<f64> {
    non_empty(records)?;
    let n = records[0].slots.first().map_or(0, |s| s.prosumers.len());
    if j >= n {
        return Err(Error::UnknownProsumer(j));
    }
    Ok(mean(records.iter().map(|r| -r.prosumer_reward(j))))
}

/// Mean daily service-provider profit ($).
pub fn sp_profit(records: &[EpisodeRecord]) -> Result<f64> {
    non_empty(records)?;
    Ok(mean(records.iter().map(EpisodeRecord::sp_profit)))
}

/// Mean daily reserve-unit energy (kWh).
pub fn reserve_utilization(records: &[EpisodeRecord]) -> Result<f64> {
    non_empty(records)?;
    Ok(mean(records.iter().map(EpisodeRecord::reserve_energy)))
}

/// Mean generator net output per slot across days (kW).
pub fn net_power_profile(records: &[EpisodeRecord]) -> Result<Vec<f64>> {
    non_empty(records)?;
    let mut profile = vec![0.0; SLOTS_PER_DAY];
    for r in records {
        for s in &r.slots {
            profile[s.slot] += s.net_generation();
        }
    }
    let n = records.len() as f64;
    profile.iter_mut().for_each(|p| *p /= n);
    Ok(profile)
}

/// Trailing mean; the first `window − 1` entries average the available prefix.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Domain("moving-average window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningCurves {
    pub window: usize,
    pub sp_profit_usd: Vec<f64>,
    /// One curve per prosumer.
    pub prosumer_reward_usd: Vec<Vec<f64>>,
}

impl LearningCurves {
    pub fn from_episodes(episodes: &[EpisodeSummary], window: usize) -> Result<Self> {
        let n = episodes.first().map_or(0, |e| e.prosumer_rewards.len());
        let sp: Vec<f64> = episodes.iter().map(|e| e.sp_profit).collect();
        Ok(LearningCurves {
            window,
            sp_profit_usd: moving_average(&sp, window)?,
            prosumer_reward_usd: (0..n)
                .map(|j| {
                    let r: Vec<f64> = episodes.iter().map(|e| e.prosumer_rewards[j]).collect();
                    moving_average(&r, window)
                })
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsBundle {
    pub days: usize,
    pub per_prosumer_daily_bill_usd: Vec<f64>,
    pub mean_daily_bill_usd: f64,
    pub sp_daily_profit_usd: f64,
    /// Running total of service-provider profit over the evaluated days.
    pub sp_cumulative_profit_usd: Vec<f64>,
    pub reserve_daily_energy_kwh: f64,
    pub avg_net_power_profile_kw: Vec<f64>,
    pub learning_curves: Option<LearningCurves>,
}

impl MetricsBundle {
    pub fn from_records(records: &[EpisodeRecord]) -> Result<Self> {
        non_empty(records)?;
        let n = records[0].slots.first().map_or(0, |s| s.prosumers.len());
        let bills = (0..n).map(|j| daily_bill(records, j)).collect::<Result<Vec<_>>>()?;
        let cumulative = records
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.sp_profit();
                Some(*acc)
            })
            .collect();
        Ok(MetricsBundle {
            days: records.len(),
            mean_daily_bill_usd: if n == 0 { 0.0 } else { mean(bills.iter().copied()) },
            per_prosumer_daily_bill_usd: bills,
            sp_daily_profit_usd: sp_profit(records)?,
            sp_cumulative_profit_usd: cumulative,
            reserve_daily_energy_kwh: reserve_utilization(records)?,
            avg_net_power_profile_kw: net_power_profile(records)?,
            learning_curves: None,
        })
    }

    pub fn with_learning_curves(mut self, curves: LearningCurves) -> Self {
        self.learning_curves = Some(curves);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Domain(format!("cannot serialize summary: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let value: Value = serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
        check_summary_schema(&value).map_err(format)?;
        serde_json::from_value(value).map_err(|e| format(e.to_string()))
    }
}

/// Structural check of a `summary.json` document, independent of the serde
/// derive: required keys, types, and length relations.
pub fn check_summary_schema(v: &Value) -> std::result::Result<(), String> {
    let bad = |m: String| Err(format!("summary schema: {m}"));
    let obj = match v.as_object() {
        Some(o) => o,
        None => return bad("top level must be an object".into()),
    };
    let number = |k: &str| obj.get(k).and_then(Value::as_f64);
    let numbers = |k: &str| -> Option<Vec<f64>> { obj.get(k)?.as_array()?.iter().map(Value::as_f64).collect() };

    let days = match obj.get("days").and_then(Value::as_u64) {
        Some(d) if d > 0 => d as usize,
        _ => return bad("`days` must be a positive integer".into()),
    };
    for k in ["mean_daily_bill_usd", "sp_daily_profit_usd", "reserve_daily_energy_kwh"] {
        if number(k).is_none() {
            return bad(format!("`{k}` must be a number"));
        }
    }
    if numbers("per_prosumer_daily_bill_usd").is_none() {
        return bad("`per_prosumer_daily_bill_usd` must be a list of numbers".into());
    }
    match numbers("sp_cumulative_profit_usd") {
        Some(c) if c.len() == days => {}
        _ => return bad("`sp_cumulative_profit_usd` must have one number per day".into()),
    }
    match numbers("avg_net_power_profile_kw") {
        Some(p) if p.len() == SLOTS_PER_DAY => {}
        _ => return bad(format!("`avg_net_power_profile_kw` must have {SLOTS_PER_DAY} numbers")),
    }
    match obj.get("learning_curves") {
        None | Some(Value::Null) => {}
        Some(Value::Object(c)) => {
            let ok = c.get("window").and_then(Value::as_u64).is_some_and(|w| w > 0)
                && c.get("sp_profit_usd").and_then(Value::as_array).is_some()
                && c.get("prosumer_reward_usd").and_then(Value::as_array).is_some();
            if !ok {
                return bad("`learning_curves` is malformed".into());
            }
        }
        Some(_) => return bad("`learning_curves` must be an object or null".into()),
    }
    let known = [
        "days",
        "per_prosumer_daily_bill_usd",
        "mean_daily_bill_usd",
        "sp_daily_profit_usd",
        "sp_cumulative_profit_usd",
        "reserve_daily_energy_kwh",
        "avg_net_power_profile_kw",
        "learning_curves",
    ];
    if let Some(k) = obj.keys().find(|k| !known.contains(&k.as_str())) {
        return bad(format!("unknown key `{k}`"));
    }
    Ok(())
}

/// One row of `slots.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRow {
    pub day: usize,
    pub slot: usize,
    pub buy_price: f64,
    pub sell_price: f64,
    pub demand_kw: f64,
    pub reserve_kwh: f64,
    pub spa_reward: f64,
    pub p_h: Vec<f64>,
    pub soc: Vec<f64>,
    pub reward: Vec<f64>,
}

pub fn slot_rows(records: &[EpisodeRecord]) -> Vec<SlotRow> {
    records
        .iter()
        .enumerate()
        .flat_map(|(day, r)| {
            r.slots.iter().map(move |s| SlotRow {
                day,
                slot: s.slot,
                buy_price: s.buy_price,
                sell_price: s.sell_price,
                demand_kw: s.demand,
                reserve_kwh: s.dispatch.reserve_energy,
                spa_reward: s.spa_reward,
                p_h: s.prosumers.iter().map(|p| p.p_h).collect(),
                soc: s.prosumers.iter().map(|p| p.soc).collect(),
                reward: s.prosumers.iter().map(|p| p.reward).collect(),
            })
        })
        .collect()
}

fn slots_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["day", "slot", "buy_price", "sell_price", "demand_kw", "reserve_kwh", "spa_reward"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for j in 0..n {
        h.push(format!("p_h_{j}"));
        h.push(format!("soc_{j}"));
        h.push(format!("reward_{j}"));
    }
    h
}

/// Slot-level CSV. Floats use the shortest representation that parses back
/// to the same value.
pub fn write_slots_csv<W: std::io::Write>(rows: &[SlotRow], out: W, path: &Path) -> Result<()> {
    let n = rows.first().map_or(0, |r| r.p_h.len());
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(slots_header(n)).map_err(fmt)?;
    for r in rows {
        let mut rec = vec![
            r.day.to_string(),
            r.slot.to_string(),
            r.buy_price.to_string(),
            r.sell_price.to_string(),
            r.demand_kw.to_string(),
            r.reserve_kwh.to_string(),
            r.spa_reward.to_string(),
        ];
        for j in 0..n {
            rec.push(r.p_h[j].to_string());
            rec.push(r.soc[j].to_string());
            rec.push(r.reward[j].to_string());
        }
        w.write_record(&rec).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_slots_csv(records: &[EpisodeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_slots_csv(&slot_rows(records), std::io::BufWriter::new(file), path)
}

pub fn read_slots_csv<R: std::io::Read>(input: R) -> Result<Vec<SlotRow>> {
    let parse = |row: usize, column: &str, message: String| Error::Parse {
        row,
        column: column.to_string(),
        message,
    };
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| parse(1, "", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let n = header.len().saturating_sub(7) / 3;
    if header != slots_header(n) {
        return Err(parse(1, "", "unexpected slots.csv header".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let row = line + 2;
        let rec = rec.map_err(|e| parse(row, "", e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| parse(row, &header[i], format!("bad number `{}`", &rec[i])))
        };
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| parse(row, &header[i], format!("bad integer `{}`", &rec[i])))
        };
        let per = |k: usize| (0..n).map(|j| field(7 + 3 * j + k)).collect::<Result<Vec<_>>>();
        rows.push(SlotRow {
            day: int(0)?,
            slot: int(1)?,
            buy_price: field(2)?,
            sell_price: field(3)?,
            demand_kw: field(4)?,
            reserve_kwh: field(5)?,
            spa_reward: field(6)?,
            p_h: per(0)?,
            soc: per(1)?,
            reward: per(2)?,
        });
    }
    Ok(rows)
}

pub fn load_slots_csv(path: impl AsRef<Path>) -> Result<Vec<SlotRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_slots_csv(std::io::BufReader::new(file))
}
