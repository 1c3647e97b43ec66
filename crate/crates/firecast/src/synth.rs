//! Synthetic multi-year fire datasets from a stochastic cellular automaton.
//!
//! Each event starts from Poisson-sampled ignition points on smooth random
//! covariate fields. A non-burning cell next to fire ignites with probability
//! sigmoid of a linear form over vegetation, moisture, wind alignment, and
//! burning-neighbor count; burning cells extinguish for good after a fixed
//! number of days, which produces fronts that grow and then hollow out.
//! Per-year knobs shift the covariate fields (distribution shift) or scale
//! the linear form's coefficients (rule shift) independently, and the output
//! is written in the standard on-disk dataset layout.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::data::{
    validate_schema, write_event, write_schema, ChannelGroup, ChannelSpec, DataError,
    DatasetSchema, FireEventCube,
};
use crate::util::stream_rng;

/// Channels every generated schema must provide.
pub const REQUIRED_CHANNELS: [&str; 7] =
    ["wind_u", "wind_v", "vegetation", "moisture", "elevation", "landcover", "fire"];

// Spread-rule coefficients; per-year `concept_shift` scales the whole vector.
const CA_BIAS: f64 = -1.2;
const CA_W_VEG: f64 = 0.9;
const CA_W_MOIST: f64 = 0.9;
const CA_W_WIND: f64 = 0.6;
const CA_W_NEIGHBOR: f64 = 0.45;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no years configured")]
    NoYears,
    #[error("duplicate year label {0}")]
    DuplicateYear(i32),
    #[error("events_per_year must be at least 1")]
    NoEvents,
    #[error("max_days must be at least 2, got {0}")]
    ShortRun(usize),
    #[error("burn_days must be at least 1")]
    ZeroBurn,
    #[error("grid {h}x{w} must be at least 8x8 and divisible by 8")]
    BadExtent { h: usize, w: usize },
    #[error("schema is missing required channel `{0}`")]
    MissingChannel(&'static str),
    #[error("year {year}: concept_shift must be positive, got {value}")]
    BadConceptShift { year: i32, value: f64 },
    #[error("year {year}: scale offset for `{channel}` must be positive, got {value}")]
    BadScale { year: i32, channel: String, value: f64 },
    #[error("year {year}: ignition_rate must be non-negative, got {value}")]
    NegativeIgnition { year: i32, value: f64 },
    #[error("failed to create {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Additive mean and multiplicative scale applied to one channel's field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self { mean: 0.0, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthYearSpec {
    pub year_label: i32,
    /// Channel name to field shift; unlisted channels keep (mean 0, scale 1).
    #[serde(default)]
    pub covariate_shift: BTreeMap<String, ShiftSpec>,
    /// Multiplier on the spread-rule coefficient vector.
    #[serde(default = "one")]
    pub concept_shift: f64,
    /// Expected ignition points per event.
    pub ignition_rate: f64,
}

impl SynthYearSpec {
    /// A year with no shift of either kind.
    pub fn plain(year_label: i32, ignition_rate: f64) -> Self {
        Self { year_label, covariate_shift: BTreeMap::new(), concept_shift: 1.0, ignition_rate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub years: Vec<SynthYearSpec>,
    pub events_per_year: usize,
    pub height: usize,
    pub width: usize,
    /// Days recorded per event.
    pub max_days: usize,
    /// Days a cell burns before it is spent.
    #[serde(default = "default_burn_days")]
    pub burn_days: usize,
    #[serde(default = "SynthConfig::default_schema")]
    pub schema: Vec<ChannelSpec>,
}

fn default_burn_days() -> usize {
    3
}

impl SynthConfig {
    /// The seven required channels with sensible groups and units.
    pub fn default_schema() -> Vec<ChannelSpec> {
        vec![
            ChannelSpec::new("wind_u", ChannelGroup::Weather, false, "m/s"),
            ChannelSpec::new("wind_v", ChannelGroup::Weather, false, "m/s"),
            ChannelSpec::new("vegetation", ChannelGroup::Vegetation, false, "index"),
            ChannelSpec::new("moisture", ChannelGroup::Weather, false, "index"),
            ChannelSpec::new("elevation", ChannelGroup::Topography, false, "m"),
            ChannelSpec::new("landcover", ChannelGroup::Landcover, true, "class"),
            ChannelSpec::new("fire", ChannelGroup::Fire, false, "mask"),
        ]
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.years.is_empty() {
            return Err(SynthError::NoYears);
        }
        let mut seen = std::collections::BTreeSet::new();
        for y in &self.years {
            if !seen.insert(y.year_label) {
                return Err(SynthError::DuplicateYear(y.year_label));
            }
            if y.concept_shift <= 0.0 {
                return Err(SynthError::BadConceptShift {
                    year: y.year_label,
                    value: y.concept_shift,
                });
            }
            if y.ignition_rate < 0.0 {
                return Err(SynthError::NegativeIgnition {
                    year: y.year_label,
                    value: y.ignition_rate,
                });
            }
            for (name, s) in &y.covariate_shift {
                if s.scale <= 0.0 {
                    return Err(SynthError::BadScale {
                        year: y.year_label,
                        channel: name.clone(),
                        value: s.scale,
                    });
                }
            }
        }
        if self.events_per_year == 0 {
            return Err(SynthError::NoEvents);
        }
        if self.max_days < 2 {
            return Err(SynthError::ShortRun(self.max_days));
        }
        if self.burn_days == 0 {
            return Err(SynthError::ZeroBurn);
        }
        if self.height < 8 || self.width < 8 || self.height % 8 != 0 || self.width % 8 != 0 {
            return Err(SynthError::BadExtent { h: self.height, w: self.width });
        }
        for required in REQUIRED_CHANNELS {
            if !self.schema.iter().any(|c| c.name == required) {
                return Err(SynthError::MissingChannel(required));
            }
        }
        validate_schema(&self.schema)?;
        Ok(())
    }
}

/// Writes a full dataset (schema sidecar plus one directory per year and
/// event) under `root`. Byte-deterministic for a given config.
pub fn generate(config: &SynthConfig, root: &Path) -> Result<(), SynthError> {
    config.validate()?;
    std::fs::create_dir_all(root)
        .map_err(|e| SynthError::Io { path: root.to_path_buf(), source: e })?;
    write_schema(root, &DatasetSchema { resolution_m: None, channels: config.schema.clone() })?;
    for year in &config.years {
        for event in 0..config.events_per_year {
            let cube = generate_event(config, year, event);
            write_event(&cube, root)?;
        }
    }
    Ok(())
}

/// One event cube, reproducible from (config seed, year label, event index).
pub fn generate_event(config: &SynthConfig, year: &SynthYearSpec, event: usize) -> FireEventCube {
    let (h, w) = (config.height, config.width);
    let mut rng = stream_rng(
        config.seed,
        &["synth", &year.year_label.to_string(), &event.to_string()],
    );

    // covariate fields, drawn in schema order so consumption is stable
    let default_shift = ShiftSpec::default();
    let mut fields: Vec<Array2<f64>> = Vec::with_capacity(config.schema.len());
    for spec in &config.schema {
        if spec.name == "fire" {
            fields.push(Array2::zeros((h, w)));
            continue;
        }
        let base = smooth_field(&mut rng, h, w);
        if spec.categorical {
            fields.push(quantile_classes(&base, 4));
        } else {
            let shift = year.covariate_shift.get(&spec.name).unwrap_or(&default_shift);
            fields.push(base.mapv(|v| shift.mean + shift.scale * v));
        }
    }
    let channel_index =
        |name: &str| config.schema.iter().position(|c| c.name == name).expect("validated");
    let veg = fields[channel_index("vegetation")].clone();
    let moist = fields[channel_index("moisture")].clone();
    let wind_u = fields[channel_index("wind_u")].clone();
    let wind_v = fields[channel_index("wind_v")].clone();
    let fire_idx = channel_index("fire");

    // day-to-day wind wander, uniform over the grid
    let drift_u: Vec<f64> = (0..config.max_days).map(|_| rng.random_range(-0.5..0.5)).collect();
    let drift_v: Vec<f64> = (0..config.max_days).map(|_| rng.random_range(-0.5..0.5)).collect();

    // ignition points
    let mut age = Array2::<i32>::from_elem((h, w), NOT_BURNING);
    let n_ignitions = if year.ignition_rate > 0.0 {
        let draw = Poisson::new(year.ignition_rate).expect("validated rate").sample(&mut rng);
        (draw as usize).min(h * w)
    } else {
        0
    };
    for idx in rand::seq::index::sample(&mut rng, h * w, n_ignitions) {
        age[[idx / w, idx % w]] = 0;
    }

    let mut masks: Vec<Array2<f64>> = Vec::with_capacity(config.max_days);
    masks.push(age.mapv(|a| if a >= 0 { 1.0 } else { 0.0 }));
    for day in 1..config.max_days {
        step(
            &mut age,
            &mut rng,
            &veg,
            &moist,
            &wind_u,
            &wind_v,
            drift_u[day - 1],
            drift_v[day - 1],
            year.concept_shift,
            config.burn_days,
        );
        masks.push(age.mapv(|a| if a >= 0 { 1.0 } else { 0.0 }));
    }

    let start = chrono::NaiveDate::from_yo_opt(year.year_label, rng.random_range(150..=250))
        .expect("day of year in range");
    let dates: Vec<chrono::NaiveDate> = (0..config.max_days)
        .map(|d| start.checked_add_days(chrono::Days::new(d as u64)).expect("date in range"))
        .collect();

    let c = config.schema.len();
    let raster = Array4::from_shape_fn((config.max_days, c, h, w), |(d, ci, y, x)| {
        if ci == fire_idx {
            masks[d][[y, x]] as f32
        } else if config.schema[ci].name == "wind_u" {
            (fields[ci][[y, x]] + drift_u[d]) as f32
        } else if config.schema[ci].name == "wind_v" {
            (fields[ci][[y, x]] + drift_v[d]) as f32
        } else {
            fields[ci][[y, x]] as f32
        }
    });

    FireEventCube {
        event_id: format!("event_{event:03}"),
        year: year.year_label,
        dates,
        raster,
        channel_schema: config.schema.clone(),
        fire_channel_index: fire_idx,
        nodata_mask: None,
        resolution_m: None,
    }
}

const NOT_BURNING: i32 = -1;
const SPENT: i32 = -2;

/// One synchronous update: candidates next to fire may ignite based on the
/// previous day's state, then burning cells age and spend.
#[allow(clippy::too_many_arguments)]
fn step<R: Rng>(
    age: &mut Array2<i32>,
    rng: &mut R,
    veg: &Array2<f64>,
    moist: &Array2<f64>,
    wind_u: &Array2<f64>,
    wind_v: &Array2<f64>,
    drift_u: f64,
    drift_v: f64,
    concept_shift: f64,
    burn_days: usize,
) {
    let (h, w) = age.dim();
    let prev = age.clone();
    let mut ignitions = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if prev[[y, x]] != NOT_BURNING {
                continue;
            }
            let mut neighbors = 0;
            let (mut dir_y, mut dir_x) = (0.0f64, 0.0f64);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    if prev[[ny as usize, nx as usize]] >= 0 {
                        neighbors += 1;
                        let len = ((dy * dy + dx * dx) as f64).sqrt();
                        // unit vector from the burning neighbor toward us
                        dir_y += -dy as f64 / len;
                        dir_x += -dx as f64 / len;
                    }
                }
            }
            if neighbors == 0 {
                continue;
            }
            let norm = (dir_y * dir_y + dir_x * dir_x).sqrt();
            let alignment = if norm > 0.0 {
                ((wind_u[[y, x]] + drift_u) * dir_x + (wind_v[[y, x]] + drift_v) * dir_y) / norm
            } else {
                0.0
            };
            let logit = concept_shift
                * (CA_BIAS + CA_W_VEG * veg[[y, x]] - CA_W_MOIST * moist[[y, x]]
                    + CA_W_WIND * alignment
                    + CA_W_NEIGHBOR * neighbors as f64);
            if rng.random::<f64>() < sigmoid(logit) {
                ignitions.push((y, x));
            }
        }
    }
    for a in age.iter_mut() {
        if *a >= 0 {
            *a += 1;
            if *a >= burn_days as i32 {
                *a = SPENT;
            }
        }
    }
    for (y, x) in ignitions {
        age[[y, x]] = 0;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standardized low-pass-filtered Gaussian noise.
fn smooth_field<R: Rng>(rng: &mut R, h: usize, w: usize) -> Array2<f64> {
    let mut f = Array2::from_shape_fn((h, w), |_| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    for _ in 0..3 {
        f = box_blur(&f, 2);
    }
    let mean = f.mean().unwrap();
    let var = f.mapv(|v| (v - mean).powi(2)).mean().unwrap();
    let std = var.sqrt().max(1e-12);
    f.mapv(|v| (v - mean) / std)
}

fn box_blur(x: &Array2<f64>, radius: i64) -> Array2<f64> {
    let (h, w) = x.dim();
    Array2::from_shape_fn((h, w), |(y, x_pos)| {
        let mut sum = 0.0;
        let mut count = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (ny, nx) = (y as i64 + dy, x_pos as i64 + dx);
                if ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 {
                    sum += x[[ny as usize, nx as usize]];
                    count += 1.0;
                }
            }
        }
        sum / count
    })
}

/// Buckets a field into `classes` labels at equal-mass thresholds.
fn quantile_classes(x: &Array2<f64>, classes: usize) -> Array2<f64> {
    let mut sorted: Vec<f64> = x.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (1..classes)
        .map(|k| sorted[(k * sorted.len() / classes).min(sorted.len() - 1)])
        .collect();
    x.mapv(|v| thresholds.iter().filter(|&&t| v > t).count() as f64)
}
