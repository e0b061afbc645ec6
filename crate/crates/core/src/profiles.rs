//! 96-slot daily consumption and PV profiles: synthetic generators and a CSV
//! reader/writer.
//!
//! Consumption is a 0.15·peak baseline plus a morning bump (07:00) and a larger
//! evening bump (19:00); PV is a cosine window between 06:00 and 19:00 peaking
//! at 12:30. Both take multiplicative per-slot noise.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SLOTS_PER_DAY};

const MORNING_SLOT: f64 = 28.0;
const EVENING_SLOT: f64 = 76.0;
const BUMP_WIDTH: f64 = 8.0;
const MORNING_WEIGHT: f64 = 0.6;
pub const DEFAULT_BASE_FRAC: f64 = 0.15;
const SUNRISE_SLOT: usize = 24;
const SUNSET_SLOT: usize = 76;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DayProfile(Vec<f64>);

impl DayProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != SLOTS_PER_DAY {
            return Err(Error::Profile(format!(
                "expected {SLOTS_PER_DAY} values, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Profile(format!(
                "slot {i} has invalid value {v} (must be finite and >= 0)"
            )));
        }
        Ok(DayProfile(values))
    }

    pub fn zeros() -> Self {
        DayProfile(vec![0.0; SLOTS_PER_DAY])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn at(&self, slot: usize) -> f64 {
        self.0[slot]
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// Energy over the day in kWh for slots of `dt` hours.
    pub fn energy(&self, dt: f64) -> f64 {
        self.0.iter().sum::<f64>() * dt
    }
}

impl TryFrom<Vec<f64>> for DayProfile {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        DayProfile::new(values)
    }
}

impl From<DayProfile> for Vec<f64> {
    fn from(p: DayProfile) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Consumption,
    Pv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub kind: ProfileKind,
    pub peak_kw: f64,
    pub noise_frac: f64,
    /// Overnight baseline as a fraction of the peak (consumption only).
    #[serde(default = "default_base_frac")]
    pub base_frac: f64,
}

fn default_base_frac() -> f64 {
    DEFAULT_BASE_FRAC
}

impl ProfileSpec {
    pub fn consumption(peak_kw: f64, noise_frac: f64) -> Self {
        ProfileSpec {
            kind: ProfileKind::Consumption,
            peak_kw,
            noise_frac,
            base_frac: DEFAULT_BASE_FRAC,
        }
    }

    pub fn pv(peak_kw: f64, noise_frac: f64) -> Self {
        ProfileSpec {
            kind: ProfileKind::Pv,
            peak_kw,
            noise_frac,
            base_frac: 0.0,
        }
    }

    pub fn with_base_frac(mut self, base_frac: f64) -> Self {
        self.base_frac = base_frac;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_kw.is_finite() && self.peak_kw > 0.0) {
            return Err(Error::Domain(format!("peak_kw must be > 0 (got {})", self.peak_kw)));
        }
        if !(0.0..0.5).contains(&self.noise_frac) {
            return Err(Error::Domain(format!(
                "noise_frac must be in [0, 0.5) (got {})",
                self.noise_frac
            )));
        }
        if self.kind == ProfileKind::Consumption && !(0.1..1.0).contains(&self.base_frac) {
            return Err(Error::Domain(format!(
                "base_frac must be in [0.1, 1) (got {})",
                self.base_frac
            )));
        }
        Ok(())
    }
}

fn bump(slot: f64, centre: f64) -> f64 {
    let z = (slot - centre) / BUMP_WIDTH;
    (-0.5 * z * z).exp()
}

fn noise_factor<R: Rng + ?Sized>(noise_frac: f64, rng: &mut R) -> f64 {
    if noise_frac == 0.0 {
        1.0
    } else {
        1.0 + noise_frac * rng.gen_range(-1.0..=1.0)
    }
}

/// Double-peaked household or feeder load scaled so the noiseless maximum is
/// `peak_kw`.
pub fn synth_consumption<R: Rng + ?Sized>(spec: &ProfileSpec, rng: &mut R) -> Result<DayProfile> {
    if spec.kind != ProfileKind::Consumption {
        return Err(Error::Domain("synth_consumption needs a consumption spec".into()));
    }
    spec.validate()?;
    let shape: Vec<f64> = (0..SLOTS_PER_DAY)
        .map(|t| {
            let t = t as f64;
            spec.base_frac
                + (1.0 - spec.base_frac)
                    * (MORNING_WEIGHT * bump(t, MORNING_SLOT) + bump(t, EVENING_SLOT))
        })
        .collect();
    let top = shape.iter().copied().fold(0.0, f64::max);
    let values = shape
        .into_iter()
        .map(|s| spec.peak_kw * s / top * noise_factor(spec.noise_frac, rng))
        .collect();
    DayProfile::new(values)
}

/// Rooftop PV output, zero outside 06:00–19:00 and never above `peak_kw`.
pub fn synth_pv<R: Rng + ?Sized>(peak_kw: f64, noise_frac: f64, rng: &mut R) -> Result<DayProfile> {
    ProfileSpec::pv(peak_kw, noise_frac).validate()?;
    let centre = 0.5 * (SUNRISE_SLOT + SUNSET_SLOT) as f64;
    let half_width = 0.5 * (SUNSET_SLOT - SUNRISE_SLOT) as f64;
    let values = (0..SLOTS_PER_DAY)
        .map(|t| {
            if t <= SUNRISE_SLOT || t >= SUNSET_SLOT {
                return 0.0;
            }
            let phase = (t as f64 - centre) / half_width * std::f64::consts::FRAC_PI_2;
            let clean = peak_kw * phase.cos().max(0.0);
            (clean * noise_factor(noise_frac, rng)).clamp(0.0, peak_kw)
        })
        .collect();
    DayProfile::new(values)
}

/// Generates a profile of either kind from its spec.
pub fn synth<R: Rng + ?Sized>(spec: &ProfileSpec, rng: &mut R) -> Result<DayProfile> {
    match spec.kind {
        ProfileKind::Consumption => synth_consumption(spec, rng),
        ProfileKind::Pv => synth_pv(spec.peak_kw, spec.noise_frac, rng),
    }
}

/// Reads a `slot,<name>...` CSV with exactly 96 data rows.
pub fn load_profiles_csv(path: impl AsRef<Path>) -> Result<Vec<(String, DayProfile)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles_csv(&text)
}

pub fn parse_profiles_csv(text: &str) -> Result<Vec<(String, DayProfile)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Profile(format!("unreadable header: {e}")))?
        .clone();
    if headers.get(0) != Some("slot") {
        return Err(Error::Profile("first header column must be `slot`".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::Profile("no profile columns".into()));
    }
    let mut columns = vec![Vec::with_capacity(SLOTS_PER_DAY); names.len()];
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        if record.len() != names.len() + 1 {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {} cells, got {}", names.len() + 1, record.len()),
            });
        }
        let slot: usize = record[0].parse().map_err(|_| Error::Parse {
            row,
            column: "slot".into(),
            message: format!("invalid slot index `{}`", &record[0]),
        })?;
        if slot != i {
            return Err(Error::Parse {
                row,
                column: "slot".into(),
                message: format!("expected slot {i}, got {slot}"),
            });
        }
        for (k, name) in names.iter().enumerate() {
            let cell = &record[k + 1];
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("non-numeric value `{cell}`"),
            })?;
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("value {value} must be finite and >= 0"),
                });
            }
            columns[k].push(value);
        }
        rows += 1;
    }
    if rows != SLOTS_PER_DAY {
        return Err(Error::Profile(format!("expected 96 rows, found {rows}")));
    }
    names
        .into_iter()
        .zip(columns)
        .map(|(name, values)| Ok((name, DayProfile::new(values)?)))
        .collect()
}

pub fn write_profiles_csv(path: impl AsRef<Path>, profiles: &[(String, DayProfile)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("slot");
    for (name, _) in profiles {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for slot in 0..SLOTS_PER_DAY {
        write!(out, "{slot}").unwrap();
        for (_, p) in profiles {
            write!(out, ",{}", p.at(slot)).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
