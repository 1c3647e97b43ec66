//! Dataset model and on-disk layout.
//!
//! A dataset lives under a root directory as
//! `<root>/<year>/<event_id>/<YYYY-MM-DD>.tif` with a `schema.json` sidecar
//! describing the band order. Each file holds one day of a fire event as a
//! multi-band float32 raster; NaN pixels are nodata. [`load_event`] ingests
//! one event directory into a [`FireEventCube`], [`window_samples`] carves
//! sliding (T input days, next-day target) instances out of a cube, and
//! [`normalize`] standardizes continuous channels with training-split
//! statistics.

mod tiff;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use ndarray::{Array2, Array3, Array4, Axis, s};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tiff::{read_tiff, write_tiff};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: expected {expected} bands per the schema, found {found}")]
    SchemaMismatch { path: String, expected: usize, found: usize },
    #[error("{path}: file name does not encode a YYYY-MM-DD date")]
    DateFormat { path: String },
    #[error("event {event}: duplicate raster for date {date}")]
    DuplicateDate { event: String, date: NaiveDate },
    #[error("{path}: no readable raster days")]
    EmptyEvent { path: String },
    #[error("{path}: raster is {found_h}x{found_w}, other days are {h}x{w}")]
    DimensionMismatch { path: String, h: usize, w: usize, found_h: usize, found_w: usize },
    #[error("raster size {h}x{w} is invalid: height and width must be >= 8 and divisible by 8")]
    InvalidDimensions { h: usize, w: usize },
    #[error("unknown channel name {name:?}")]
    UnknownChannel { name: String },
    #[error("invalid channel schema: {0}")]
    InvalidSchema(String),
    #[error("{path}: malformed TIFF: {detail}")]
    Tiff { path: String, detail: String },
    #[error("{path}: malformed schema sidecar: {detail}")]
    SchemaFormat { path: String, detail: String },
    #[error("window length must be >= 1")]
    InvalidWindow,
    #[error("event {event}: {detail}")]
    InvalidCube { event: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Thematic group a channel belongs to. Exactly one channel per schema has
/// the `fire` group; that channel doubles as the prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelGroup {
    Vegetation,
    Topography,
    Weather,
    Landcover,
    Fire,
}

/// One band of the raster stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub group: ChannelGroup,
    pub categorical: bool,
    pub units: String,
}

impl ChannelSpec {
    pub fn new(name: &str, group: ChannelGroup, categorical: bool, units: &str) -> Self {
        Self { name: name.to_string(), group, categorical, units: units.to_string() }
    }
}

/// Contents of the `schema.json` sidecar at the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    /// Ground resolution of a pixel in meters, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_m: Option<f64>,
    pub channels: Vec<ChannelSpec>,
}

/// Check schema invariants and return the fire channel index.
pub fn validate_schema(channels: &[ChannelSpec]) -> Result<usize, DataError> {
    if channels.is_empty() {
        return Err(DataError::InvalidSchema("schema has no channels".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in channels {
        if !seen.insert(c.name.as_str()) {
            return Err(DataError::InvalidSchema(format!("duplicate channel name {:?}", c.name)));
        }
    }
    let fire: Vec<usize> = channels
        .iter()
        .enumerate()
        .filter(|(_, c)| c.group == ChannelGroup::Fire)
        .map(|(i, _)| i)
        .collect();
    match fire.as_slice() {
        [i] => Ok(*i),
        [] => Err(DataError::InvalidSchema("no channel has the fire group".into())),
        _ => Err(DataError::InvalidSchema("multiple channels have the fire group".into())),
    }
}

pub fn write_schema(root: &Path, schema: &DatasetSchema) -> Result<(), DataError> {
    validate_schema(&schema.channels)?;
    let path = root.join("schema.json");
    let body = serde_json::to_string_pretty(schema).expect("schema serializes");
    fs::write(&path, body + "\n").map_err(io_err(&path))
}

pub fn read_schema(root: &Path) -> Result<DatasetSchema, DataError> {
    let path = root.join("schema.json");
    let body = fs::read_to_string(&path).map_err(io_err(&path))?;
    let schema: DatasetSchema = serde_json::from_str(&body).map_err(|e| {
        DataError::SchemaFormat { path: path.display().to_string(), detail: e.to_string() }
    })?;
    validate_schema(&schema.channels)?;
    Ok(schema)
}

/// One wildfire event: a per-day multi-channel raster stack plus metadata.
///
/// `raster` has shape (days, channels, height, width); the fire channel is
/// binarized at load time (any positive detection counts as burning).
/// `nodata_mask` marks pixels where any channel was NaN; `None` means the
/// event has no nodata at all.
#[derive(Debug, Clone)]
pub struct FireEventCube {
    pub event_id: String,
    pub year: i32,
    pub dates: Vec<NaiveDate>,
    pub raster: Array4<f32>,
    pub channel_schema: Vec<ChannelSpec>,
    pub fire_channel_index: usize,
    pub nodata_mask: Option<Array3<bool>>,
    pub resolution_m: Option<f64>,
}

impl FireEventCube {
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_schema.len()
    }

    /// Spatial extent (height, width).
    pub fn extent(&self) -> (usize, usize) {
        let (_, _, h, w) = self.raster.dim();
        (h, w)
    }

    /// Check the structural invariants of the cube.
    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |detail: String| DataError::InvalidCube {
            event: self.event_id.clone(),
            detail,
        };
        let fire_idx = validate_schema(&self.channel_schema)?;
        if fire_idx != self.fire_channel_index {
            return Err(invalid(format!(
                "fire_channel_index is {} but the schema puts fire at {}",
                self.fire_channel_index, fire_idx
            )));
        }
        let (d, c, h, w) = self.raster.dim();
        if d != self.dates.len() {
            return Err(invalid(format!("{d} raster days but {} dates", self.dates.len())));
        }
        if c != self.channel_schema.len() {
            return Err(invalid(format!(
                "{c} raster channels but {} schema entries",
                self.channel_schema.len()
            )));
        }
        if h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0 {
            return Err(DataError::InvalidDimensions { h, w });
        }
        for pair in self.dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(invalid(format!(
                    "dates not strictly increasing: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(mask) = &self.nodata_mask {
            if mask.dim() != (d, h, w) {
                return Err(invalid("nodata mask shape differs from raster".into()));
            }
        }
        for v in self.raster.index_axis(Axis(1), self.fire_channel_index).iter() {
            if !v.is_nan() && *v != 0.0 && *v != 1.0 {
                return Err(invalid(format!("fire channel holds non-binary value {v}")));
            }
        }
        Ok(())
    }

    /// True where the pixel of the given day carries data in every channel.
    pub fn day_validity(&self, day: usize) -> Array2<bool> {
        let (_, _, h, w) = self.raster.dim();
        match &self.nodata_mask {
            Some(mask) => mask.index_axis(Axis(0), day).mapv(|m| !m),
            None => Array2::from_elem((h, w), true),
        }
    }
}

/// Named channel subsets mirroring the vegetation-only / multi-group / full
/// configurations, plus free-form custom lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSetName {
    Veg,
    Multi,
    All,
    Custom,
}

/// An ordered channel selection. The fire channel is always part of the
/// effective selection (it is an input feature), even if absent from
/// `channel_names`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub name: FeatureSetName,
    pub channel_names: Vec<String>,
}

impl FeatureSet {
    fn from_groups(name: FeatureSetName, schema: &[ChannelSpec], groups: &[ChannelGroup]) -> Self {
        let channel_names = schema
            .iter()
            .filter(|c| groups.contains(&c.group) || c.group == ChannelGroup::Fire)
            .map(|c| c.name.clone())
            .collect();
        Self { name, channel_names }
    }

    /// Vegetation channels plus the fire channel.
    pub fn veg(schema: &[ChannelSpec]) -> Self {
        Self::from_groups(FeatureSetName::Veg, schema, &[ChannelGroup::Vegetation])
    }

    /// Vegetation, topography and weather channels plus the fire channel.
    pub fn multi(schema: &[ChannelSpec]) -> Self {
        Self::from_groups(
            FeatureSetName::Multi,
            schema,
            &[ChannelGroup::Vegetation, ChannelGroup::Topography, ChannelGroup::Weather],
        )
    }

    /// Every channel of the schema.
    pub fn all(schema: &[ChannelSpec]) -> Self {
        Self {
            name: FeatureSetName::All,
            channel_names: schema.iter().map(|c| c.name.clone()).collect(),
        }
    }

    pub fn custom(channel_names: Vec<String>) -> Self {
        Self { name: FeatureSetName::Custom, channel_names }
    }

    /// Resolve to channel indices in schema order, fire channel included.
    pub fn resolve(&self, schema: &[ChannelSpec]) -> Result<Vec<usize>, DataError> {
        let fire_idx = validate_schema(schema)?;
        let mut want = vec![false; schema.len()];
        want[fire_idx] = true;
        for name in &self.channel_names {
            let idx = schema
                .iter()
                .position(|c| &c.name == name)
                .ok_or_else(|| DataError::UnknownChannel { name: name.clone() })?;
            want[idx] = true;
        }
        Ok((0..schema.len()).filter(|&i| want[i]).collect())
    }

    /// The schema restricted to this selection, in schema order.
    pub fn selected_schema(&self, schema: &[ChannelSpec]) -> Result<Vec<ChannelSpec>, DataError> {
        Ok(self.resolve(schema)?.into_iter().map(|i| schema[i].clone()).collect())
    }
}

/// A (T-day input window, next-day binary target) instance.
///
/// `inputs` has shape (T, channels, height, width) ordered oldest day first;
/// the target is the binarized fire mask of the day immediately after the
/// last input day. `valid` masks target pixels that carry data; losses and
/// metrics must ignore the rest. `fire_channel` indexes the fire band within
/// the selected channels.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub event_id: String,
    pub year: i32,
    pub target_date: NaiveDate,
    pub inputs: Array4<f32>,
    pub input_valid: Array3<bool>,
    pub target: Array2<f32>,
    pub valid: Array2<bool>,
    pub day_of_year: Vec<u32>,
    pub prevalence: f64,
    pub fire_channel: usize,
}

impl WindowSample {
    pub fn t_window(&self) -> usize {
        self.inputs.dim().0
    }

    pub fn extent(&self) -> (usize, usize) {
        let (_, _, h, w) = self.inputs.dim();
        (h, w)
    }
}

/// Prediction scores of the persistence baseline: the most recent input
/// day's fire mask, unchanged.
pub fn persistence_scores(sample: &WindowSample) -> Array2<f32> {
    let t = sample.t_window();
    sample.inputs.slice(s![t - 1, sample.fire_channel, .., ..]).to_owned()
}

/// Load one event directory (daily `YYYY-MM-DD.tif` files) into a cube.
///
/// The year is taken from the parent directory name when it parses as an
/// integer, otherwise from the first date. The fire band is binarized at
/// `> 0`; NaN pixels in any band are recorded in the nodata mask.
pub fn load_event(path: &Path, schema: &[ChannelSpec]) -> Result<FireEventCube, DataError> {
    let fire_channel_index = validate_schema(schema)?;
    let event_id = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());

    let mut by_date: BTreeMap<NaiveDate, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(path).map_err(io_err(path))? {
        let entry = entry.map_err(io_err(path))?;
        let p = entry.path();
        if p.extension().map_or(true, |e| e != "tif" && e != "tiff") {
            continue;
        }
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let date = NaiveDate::parse_from_str(&stem, "%Y-%m-%d")
            .map_err(|_| DataError::DateFormat { path: p.display().to_string() })?;
        if by_date.insert(date, p).is_some() {
            return Err(DataError::DuplicateDate { event: event_id, date });
        }
    }
    if by_date.is_empty() {
        return Err(DataError::EmptyEvent { path: path.display().to_string() });
    }

    let dates: Vec<NaiveDate> = by_date.keys().copied().collect();
    let year = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_string_lossy().parse::<i32>().ok())
        .unwrap_or_else(|| dates[0].year());

    let mut raster: Option<Array4<f32>> = None;
    let mut extent = (0usize, 0usize);
    for (day, file) in by_date.values().enumerate() {
        let planes = read_tiff(file)?;
        let (c, h, w) = planes.dim();
        if c != schema.len() {
            return Err(DataError::SchemaMismatch {
                path: file.display().to_string(),
                expected: schema.len(),
                found: c,
            });
        }
        let stack = raster.get_or_insert_with(|| {
            extent = (h, w);
            Array4::zeros((dates.len(), c, h, w))
        });
        if (h, w) != extent {
            return Err(DataError::DimensionMismatch {
                path: file.display().to_string(),
                h: extent.0,
                w: extent.1,
                found_h: h,
                found_w: w,
            });
        }
        stack.index_axis_mut(Axis(0), day).assign(&planes);
    }
    let mut raster = raster.expect("at least one day");
    let (h, w) = extent;
    if h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0 {
        return Err(DataError::InvalidDimensions { h, w });
    }

    let mut nodata = Array3::from_elem((dates.len(), h, w), false);
    let mut any_nodata = false;
    for ((day, _, row, col), v) in raster.indexed_iter() {
        if v.is_nan() {
            nodata[[day, row, col]] = true;
            any_nodata = true;
        }
    }
    for v in raster.index_axis_mut(Axis(1), fire_channel_index).iter_mut() {
        if !v.is_nan() {
            *v = if *v > 0.0 { 1.0 } else { 0.0 };
        }
    }

    Ok(FireEventCube {
        event_id,
        year,
        dates,
        raster,
        channel_schema: schema.to_vec(),
        fire_channel_index,
        nodata_mask: if any_nodata { Some(nodata) } else { None },
        resolution_m: None,
    })
}

/// Write a cube as `<root>/<year>/<event_id>/<date>.tif` files; nodata
/// pixels are stored as NaN in every band. Returns the event directory.
pub fn write_event(cube: &FireEventCube, root: &Path) -> Result<PathBuf, DataError> {
    cube.validate()?;
    let dir = root.join(cube.year.to_string()).join(&cube.event_id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (day, date) in cube.dates.iter().enumerate() {
        let mut planes = cube.raster.index_axis(Axis(0), day).to_owned();
        if let Some(mask) = &cube.nodata_mask {
            let day_mask = mask.index_axis(Axis(0), day);
            for mut plane in planes.axis_iter_mut(Axis(0)) {
                for ((r, c), v) in plane.indexed_iter_mut() {
                    if day_mask[[r, c]] {
                        *v = f32::NAN;
                    }
                }
            }
        }
        write_tiff(&dir.join(format!("{date}.tif")), planes.view())?;
    }
    Ok(dir)
}

/// Load a whole dataset root: schema sidecar plus every `<year>/<event>`
/// directory, sorted by year then event id.
pub fn load_dataset(root: &Path) -> Result<Vec<FireEventCube>, DataError> {
    let schema = read_schema(root)?;
    let mut year_dirs: Vec<(i32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let p = entry.path();
        if !p.is_dir() {
            continue;
        }
        if let Ok(year) = entry.file_name().to_string_lossy().parse::<i32>() {
            year_dirs.push((year, p));
        }
    }
    year_dirs.sort();

    let mut cubes = Vec::new();
    for (_, year_dir) in year_dirs {
        let mut event_dirs: Vec<PathBuf> = fs::read_dir(&year_dir)
            .map_err(io_err(&year_dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        event_dirs.sort();
        for dir in event_dirs {
            let mut cube = load_event(&dir, &schema.channels)?;
            cube.resolution_m = schema.resolution_m;
            cubes.push(cube);
        }
    }
    Ok(cubes)
}

/// Restrict a cube to the given feature selection, preserving schema order.
pub fn select_features(
    cube: &FireEventCube,
    features: &FeatureSet,
) -> Result<FireEventCube, DataError> {
    let idx = features.resolve(&cube.channel_schema)?;
    let raster = cube.raster.select(Axis(1), &idx);
    let channel_schema: Vec<ChannelSpec> =
        idx.iter().map(|&i| cube.channel_schema[i].clone()).collect();
    let fire_channel_index = idx
        .iter()
        .position(|&i| i == cube.fire_channel_index)
        .expect("fire channel always selected");
    Ok(FireEventCube {
        event_id: cube.event_id.clone(),
        year: cube.year,
        dates: cube.dates.clone(),
        raster,
        channel_schema,
        fire_channel_index,
        nodata_mask: cube.nodata_mask.clone(),
        resolution_m: cube.resolution_m,
    })
}

/// Carve sliding-window samples out of a cube.
///
/// One sample per day with `t_window` immediate predecessors; windows whose
/// days are not strictly consecutive calendar dates are dropped, as are
/// samples whose target day is fully nodata. Day-of-year values are clamped
/// to 365 so leap days do not overflow the positional encoding table.
pub fn window_samples(
    cube: &FireEventCube,
    t_window: usize,
    features: &FeatureSet,
) -> Result<Vec<WindowSample>, DataError> {
    if t_window == 0 {
        return Err(DataError::InvalidWindow);
    }
    let idx = features.resolve(&cube.channel_schema)?;
    let fire_channel = idx
        .iter()
        .position(|&i| i == cube.fire_channel_index)
        .expect("fire channel always selected");
    let d_total = cube.n_days();
    let (h, w) = cube.extent();
    let mut out = Vec::new();
    if d_total < t_window + 1 {
        return Ok(out);
    }
    for t in t_window..d_total {
        let span = cube.dates[t] - cube.dates[t - t_window];
        if span.num_days() != t_window as i64 {
            continue;
        }
        let valid = cube.day_validity(t);
        let fire = cube.raster.slice(s![t, cube.fire_channel_index, .., ..]);
        let mut target = Array2::zeros((h, w));
        let mut pos = 0u64;
        let mut n_valid = 0u64;
        for ((r, c), &ok) in valid.indexed_iter() {
            if !ok {
                continue;
            }
            n_valid += 1;
            if fire[[r, c]] > 0.0 {
                target[[r, c]] = 1.0;
                pos += 1;
            }
        }
        if n_valid == 0 {
            continue;
        }

        let window = cube.raster.slice(s![t - t_window..t, .., .., ..]);
        let inputs = window.select(Axis(1), &idx);
        let mut input_valid = Array3::from_elem((t_window, h, w), true);
        if let Some(mask) = &cube.nodata_mask {
            for (i, day) in (t - t_window..t).enumerate() {
                for ((r, c), &m) in mask.index_axis(Axis(0), day).indexed_iter() {
                    if m {
                        input_valid[[i, r, c]] = false;
                    }
                }
            }
        }
        let day_of_year: Vec<u32> =
            cube.dates[t - t_window..t].iter().map(|d| d.ordinal().min(365)).collect();

        out.push(WindowSample {
            event_id: cube.event_id.clone(),
            year: cube.year,
            target_date: cube.dates[t],
            inputs,
            input_valid,
            target,
            valid,
            day_of_year,
            prevalence: pos as f64 / n_valid as f64,
            fire_channel,
        });
    }
    Ok(out)
}

/// Per-channel standardization statistics fit on a training split.
/// Categorical and fire channels are marked pass-through and left unchanged
/// by [`normalize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channel_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub passthrough: Vec<bool>,
}

impl NormStats {
    /// Fit statistics over the valid input pixels of `samples`. `schema`
    /// must be the selected schema the samples were carved with.
    pub fn fit(samples: &[WindowSample], schema: &[ChannelSpec]) -> Self {
        let c_sel = schema.len();
        let mut sum = vec![0.0f64; c_sel];
        let mut sum_sq = vec![0.0f64; c_sel];
        let mut count = vec![0u64; c_sel];
        for sample in samples {
            let (t_window, c, _, _) = sample.inputs.dim();
            assert_eq!(c, c_sel, "sample channels disagree with schema");
            for day in 0..t_window {
                for ch in 0..c_sel {
                    for (v, ok) in sample
                        .inputs
                        .slice(s![day, ch, .., ..])
                        .iter()
                        .zip(sample.input_valid.index_axis(Axis(0), day).iter())
                    {
                        if *ok && !v.is_nan() {
                            let x = *v as f64;
                            sum[ch] += x;
                            sum_sq[ch] += x * x;
                            count[ch] += 1;
                        }
                    }
                }
            }
        }
        let mut mean = vec![0.0f64; c_sel];
        let mut std = vec![1.0f64; c_sel];
        let mut passthrough = vec![false; c_sel];
        for ch in 0..c_sel {
            passthrough[ch] = schema[ch].categorical || schema[ch].group == ChannelGroup::Fire;
            if passthrough[ch] {
                continue;
            }
            if count[ch] == 0 {
                log::warn!("channel {:?} has no valid training pixels; using mean 0, std 1",
                    schema[ch].name);
                continue;
            }
            let n = count[ch] as f64;
            let m = sum[ch] / n;
            let var = (sum_sq[ch] / n - m * m).max(0.0);
            mean[ch] = m;
            if var.sqrt() < 1e-7 {
                log::warn!("channel {:?} has zero variance in training; using std 1",
                    schema[ch].name);
            } else {
                std[ch] = var.sqrt();
            }
        }
        Self { channel_names: schema.iter().map(|c| c.name.clone()).collect(), mean, std, passthrough }
    }
}

/// Standardize continuous channels in place with training statistics, and
/// zero out nodata input pixels (the post-normalization training mean).
pub fn normalize(samples: &mut [WindowSample], stats: &NormStats) {
    let c_sel = stats.mean.len();
    for sample in samples.iter_mut() {
        let (t_window, c, _, _) = sample.inputs.dim();
        assert_eq!(c, c_sel, "sample channels disagree with statistics");
        for day in 0..t_window {
            let valid = sample.input_valid.index_axis(Axis(0), day).to_owned();
            for ch in 0..c_sel {
                let mean = stats.mean[ch] as f32;
                let std = stats.std[ch] as f32;
                let pass = stats.passthrough[ch];
                for (v, ok) in sample
                    .inputs
                    .slice_mut(s![day, ch, .., ..])
                    .iter_mut()
                    .zip(valid.iter())
                {
                    if !*ok || v.is_nan() {
                        *v = 0.0;
                    } else if !pass {
                        *v = (*v - mean) / std;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;

    fn test_schema() -> Vec<ChannelSpec> {
        vec![
            ChannelSpec::new("ndvi", ChannelGroup::Vegetation, false, "index"),
            ChannelSpec::new("evi", ChannelGroup::Vegetation, false, "index"),
            ChannelSpec::new("elevation", ChannelGroup::Topography, false, "m"),
            ChannelSpec::new("wind_u", ChannelGroup::Weather, false, "m/s"),
            ChannelSpec::new("wind_v", ChannelGroup::Weather, false, "m/s"),
            ChannelSpec::new("landcover", ChannelGroup::Landcover, true, "class"),
            ChannelSpec::new("fire", ChannelGroup::Fire, false, "mask"),
        ]
    }

    fn make_cube(event_id: &str, year: i32, days: &[NaiveDate]) -> FireEventCube {
        let schema = test_schema();
        let (h, w) = (8, 16);
        let mut raster = Array4::zeros((days.len(), schema.len(), h, w));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for v in raster.iter_mut() {
            *v = rng.random_range(-2.0..2.0);
        }
        // fire band binary with a burning block in the middle
        for d in 0..days.len() {
            for r in 0..h {
                for c in 0..w {
                    raster[[d, 6, r, c]] =
                        if r >= 3 && r < 5 && c >= 6 && c < 6 + d.min(8) { 1.0 } else { 0.0 };
                }
            }
        }
        FireEventCube {
            event_id: event_id.to_string(),
            year,
            dates: days.to_vec(),
            raster,
            channel_schema: schema,
            fire_channel_index: 6,
            nodata_mask: None,
            resolution_m: Some(375.0),
        }
    }

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn run_of_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
        (0..n).map(|i| start + chrono::Duration::days(i as i64)).collect()
    }

    #[test]
    fn event_roundtrip_preserves_count_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let mut cube = make_cube("ev1", 2020, &run_of_days(day(2020, 7, 1), 10));
        let mut mask = Array3::from_elem((10, 8, 16), false);
        mask[[2, 0, 0]] = true;
        mask[[2, 0, 1]] = true;
        cube.nodata_mask = Some(mask);
        write_event(&cube, dir.path()).unwrap();

        let loaded = load_event(
            &dir.path().join("2020").join("ev1"),
            &cube.channel_schema,
        )
        .unwrap();
        assert_eq!(loaded.n_days(), 10);
        assert_eq!(loaded.n_channels(), 7);
        assert_eq!(loaded.year, 2020);
        assert_eq!(loaded.dates, cube.dates);
        assert_eq!(loaded.nodata_mask, cube.nodata_mask);
        for (idx, v) in cube.raster.indexed_iter() {
            let got = loaded.raster[idx];
            if cube.nodata_mask.as_ref().unwrap()[[idx.0, idx.2, idx.3]] {
                assert!(got.is_nan());
            } else {
                assert_eq!(v.to_bits(), got.to_bits());
            }
        }
    }

    #[test]
    fn band_count_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let cube = make_cube("ev1", 2020, &run_of_days(day(2020, 7, 1), 3));
        let event_dir = write_event(&cube, dir.path()).unwrap();
        let short: Vec<ChannelSpec> = cube.channel_schema[1..].to_vec();
        let err = load_event(&event_dir, &short).unwrap_err();
        assert!(matches!(err, DataError::SchemaMismatch { expected: 6, found: 7, .. }));
    }

    #[test]
    fn equivalent_date_spellings_collide() {
        let dir = tempfile::tempdir().unwrap();
        let cube = make_cube("ev1", 2020, &[day(2020, 7, 1)]);
        let event_dir = write_event(&cube, dir.path()).unwrap();
        std::fs::copy(event_dir.join("2020-07-01.tif"), event_dir.join("2020-7-1.tif")).unwrap();
        let err = load_event(&event_dir, &cube.channel_schema).unwrap_err();
        assert!(matches!(err, DataError::DuplicateDate { .. }));
    }

    #[test]
    fn unparsable_name_is_date_error() {
        let dir = tempfile::tempdir().unwrap();
        let cube = make_cube("ev1", 2020, &[day(2020, 7, 1)]);
        let event_dir = write_event(&cube, dir.path()).unwrap();
        std::fs::copy(event_dir.join("2020-07-01.tif"), event_dir.join("júly.tif")).unwrap();
        let err = load_event(&event_dir, &cube.channel_schema).unwrap_err();
        assert!(matches!(err, DataError::DateFormat { .. }));
    }

    #[test]
    fn empty_directory_is_empty_event() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_event(dir.path(), &test_schema()).unwrap_err();
        assert!(matches!(err, DataError::EmptyEvent { .. }));
    }

    #[test]
    fn window_counts_match_enumeration() {
        let features = FeatureSet::all(&test_schema());
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 10));
        assert_eq!(window_samples(&cube, 5, &features).unwrap().len(), 5);
        assert_eq!(window_samples(&cube, 1, &features).unwrap().len(), 9);
        let short = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 5));
        assert_eq!(window_samples(&short, 5, &features).unwrap().len(), 0);
    }

    #[test]
    fn windows_spanning_gaps_are_dropped() {
        let features = FeatureSet::all(&test_schema());
        // days 1..=5 and 7..=11: windows crossing the missing day 6 vanish
        let mut days = run_of_days(day(2020, 7, 1), 5);
        days.extend(run_of_days(day(2020, 7, 7), 5));
        let cube = make_cube("ev", 2020, &days);
        let samples = window_samples(&cube, 3, &features).unwrap();
        let targets: Vec<NaiveDate> = samples.iter().map(|s| s.target_date).collect();
        assert_eq!(
            targets,
            vec![day(2020, 7, 4), day(2020, 7, 5), day(2020, 7, 10), day(2020, 7, 11)]
        );
    }

    #[test]
    fn windowing_is_exact_slicing() {
        let features = FeatureSet::all(&test_schema());
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 10));
        let samples = window_samples(&cube, 3, &features).unwrap();
        for (k, sample) in samples.iter().enumerate() {
            assert_eq!(sample.t_window(), 3);
            let t = k + 3;
            for i in 0..3 {
                let day_slice = cube.raster.index_axis(Axis(0), t - 3 + i);
                for (idx, v) in sample.inputs.index_axis(Axis(0), i).indexed_iter() {
                    assert_eq!(v.to_bits(), day_slice[idx].to_bits());
                }
            }
            assert_eq!(sample.target_date, cube.dates[t]);
            assert_eq!(sample.day_of_year[0], cube.dates[t - 3].ordinal());
        }
    }

    #[test]
    fn fully_nodata_target_is_dropped() {
        let features = FeatureSet::all(&test_schema());
        let mut cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 4));
        let mut mask = Array3::from_elem((4, 8, 16), false);
        mask.index_axis_mut(Axis(0), 2).fill(true);
        cube.nodata_mask = Some(mask);
        let samples = window_samples(&cube, 1, &features).unwrap();
        let targets: Vec<NaiveDate> = samples.iter().map(|s| s.target_date).collect();
        assert_eq!(targets, vec![day(2020, 7, 2), day(2020, 7, 4)]);
    }

    #[test]
    fn leap_day_ordinal_is_clamped() {
        let features = FeatureSet::all(&test_schema());
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 12, 29), 4));
        let samples = window_samples(&cube, 3, &features).unwrap();
        assert_eq!(samples[0].day_of_year, vec![364, 365, 365]);
    }

    #[test]
    fn prevalence_counts_positive_fraction() {
        let features = FeatureSet::all(&test_schema());
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 4));
        let samples = window_samples(&cube, 1, &features).unwrap();
        for sample in &samples {
            let pos = sample.target.iter().filter(|v| **v > 0.0).count();
            assert_abs_diff_eq!(sample.prevalence, pos as f64 / 128.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn vegetation_selection_keeps_fire() {
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 3));
        let selected = select_features(&cube, &FeatureSet::veg(&cube.channel_schema)).unwrap();
        let names: Vec<&str> =
            selected.channel_schema.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["ndvi", "evi", "fire"]);
        assert_eq!(selected.fire_channel_index, 2);
    }

    #[test]
    fn identity_selection_is_identity() {
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 3));
        let selected = select_features(&cube, &FeatureSet::all(&cube.channel_schema)).unwrap();
        assert_eq!(selected.channel_schema, cube.channel_schema);
        assert_eq!(selected.raster, cube.raster);
    }

    #[test]
    fn selection_is_idempotent() {
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 3));
        let features = FeatureSet::custom(vec!["wind_u".into(), "ndvi".into()]);
        let once = select_features(&cube, &features).unwrap();
        let twice = select_features(&once, &features).unwrap();
        assert_eq!(once.channel_schema, twice.channel_schema);
        assert_eq!(once.raster, twice.raster);
        // schema order preserved regardless of request order
        let names: Vec<&str> = once.channel_schema.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["ndvi", "wind_u", "fire"]);
    }

    #[test]
    fn unknown_channel_is_rejected() {
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 3));
        let err =
            select_features(&cube, &FeatureSet::custom(vec!["humidity".into()])).unwrap_err();
        assert!(matches!(err, DataError::UnknownChannel { .. }));
    }

    #[test]
    fn normalization_standardizes_continuous_channels() {
        let features = FeatureSet::all(&test_schema());
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 8));
        let mut samples = window_samples(&cube, 2, &features).unwrap();
        let stats = NormStats::fit(&samples, &cube.channel_schema);
        let fire_before = samples[0].inputs.slice(s![.., 6, .., ..]).to_owned();
        let landcover_before = samples[0].inputs.slice(s![.., 5, .., ..]).to_owned();
        normalize(&mut samples, &stats);

        // continuous channels: mean ~0, std ~1 against their own statistics
        for ch in [0usize, 1, 2, 3, 4] {
            let mut vals = Vec::new();
            for s in &samples {
                vals.extend(s.inputs.slice(s![.., ch, .., ..]).iter().map(|v| *v as f64));
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {ch} std {}", var.sqrt());
        }
        // categorical and fire channels untouched
        assert_eq!(samples[0].inputs.slice(s![.., 6, .., ..]), fire_before);
        assert_eq!(samples[0].inputs.slice(s![.., 5, .., ..]), landcover_before);
    }

    #[test]
    fn zero_variance_channel_maps_to_zero() {
        let features = FeatureSet::all(&test_schema());
        let mut cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 4));
        cube.raster.index_axis_mut(Axis(1), 2).fill(5.0);
        let mut samples = window_samples(&cube, 1, &features).unwrap();
        let stats = NormStats::fit(&samples, &cube.channel_schema);
        assert_eq!(stats.std[2], 1.0);
        normalize(&mut samples, &stats);
        for s in &samples {
            for v in s.inputs.slice(s![.., 2, .., ..]).iter() {
                assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn near_standard_channel_barely_changes() {
        let features = FeatureSet::all(&test_schema());
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 8));
        let mut samples = window_samples(&cube, 1, &features).unwrap();
        let stats = NormStats::fit(&samples, &cube.channel_schema);
        let mut forced = stats.clone();
        forced.mean = vec![0.0; 7];
        forced.std = vec![1.0; 7];
        let before = samples[0].inputs.clone();
        normalize(&mut samples, &forced);
        assert_eq!(samples[0].inputs, before);
    }

    #[test]
    fn nodata_inputs_become_zero_after_normalization() {
        let features = FeatureSet::all(&test_schema());
        let mut cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 4));
        let mut mask = Array3::from_elem((4, 8, 16), false);
        mask[[0, 1, 1]] = true;
        cube.nodata_mask = Some(mask);
        let mut samples = window_samples(&cube, 1, &features).unwrap();
        let stats = NormStats::fit(&samples, &cube.channel_schema);
        normalize(&mut samples, &stats);
        assert!(!samples[0].input_valid[[0, 1, 1]]);
        for ch in 0..7 {
            assert_eq!(samples[0].inputs[[0, ch, 1, 1]], 0.0);
        }
    }

    #[test]
    fn persistence_is_last_fire_mask() {
        let features = FeatureSet::veg(&test_schema());
        let cube = make_cube("ev", 2020, &run_of_days(day(2020, 7, 1), 6));
        let samples = window_samples(&cube, 3, &features).unwrap();
        let sample = &samples[0];
        let scores = persistence_scores(sample);
        let expect = cube.raster.slice(s![2, 6, .., ..]);
        assert_eq!(scores, expect.to_owned());
    }

    #[test]
    fn schema_sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let schema = DatasetSchema { resolution_m: Some(375.0), channels: test_schema() };
        write_schema(dir.path(), &schema).unwrap();
        let loaded = read_schema(dir.path()).unwrap();
        assert_eq!(loaded, schema);
    }

    #[test]
    fn schema_requires_exactly_one_fire_channel() {
        let mut channels = test_schema();
        channels[6].group = ChannelGroup::Weather;
        assert!(matches!(validate_schema(&channels), Err(DataError::InvalidSchema(_))));
        let mut twice = test_schema();
        twice[0].group = ChannelGroup::Fire;
        assert!(matches!(validate_schema(&twice), Err(DataError::InvalidSchema(_))));
    }

    #[test]
    fn dataset_loader_orders_by_year_then_event() {
        let dir = tempfile::tempdir().unwrap();
        let schema = DatasetSchema { resolution_m: Some(375.0), channels: test_schema() };
        write_schema(dir.path(), &schema).unwrap();
        for (event, year) in [("b", 2021), ("a", 2021), ("c", 2020)] {
            let cube = make_cube(event, year, &run_of_days(day(year, 7, 1), 3));
            write_event(&cube, dir.path()).unwrap();
        }
        let cubes = load_dataset(dir.path()).unwrap();
        let ids: Vec<(i32, &str)> =
            cubes.iter().map(|c| (c.year, c.event_id.as_str())).collect();
        assert_eq!(ids, vec![(2020, "c"), (2021, "a"), (2021, "b")]);
        assert_eq!(cubes[0].resolution_m, Some(375.0));
    }

    #[test]
    fn cube_validation_rejects_bad_dims() {
        let schema = test_schema();
        let cube = FireEventCube {
            event_id: "e".into(),
            year: 2020,
            dates: vec![day(2020, 7, 1)],
            raster: Array4::zeros((1, 7, 9, 16)),
            channel_schema: schema,
            fire_channel_index: 6,
            nodata_mask: None,
            resolution_m: None,
        };
        assert!(matches!(cube.validate(), Err(DataError::InvalidDimensions { h: 9, w: 16 })));
    }
}
