//! Band-level comparison of two datasets on disk.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, read_schema, FireEventCube};

use super::AnalysisError;

/// Per-band statistics from both datasets with their relative differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDiff {
    pub channel: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_rel_diff: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub std_rel_diff: f64,
}

/// Outcome of comparing two dataset roots over their shared events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub events_compared: usize,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub bands: Vec<BandDiff>,
    /// Largest relative mean or std difference over all bands.
    pub max_rel_diff: f64,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

struct BandAccum {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl BandAccum {
    fn new() -> Self {
        Self { n: 0.0, sum: 0.0, sum_sq: 0.0 }
    }

    fn push_cube(&mut self, cube: &FireEventCube, channel: usize) {
        for v in cube.raster.index_axis(ndarray::Axis(1), channel) {
            if v.is_finite() {
                let v = *v as f64;
                self.n += 1.0;
                self.sum += v;
                self.sum_sq += v * v;
            }
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn std(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n - m * m).max(0.0).sqrt()
    }
}

/// Compares the events present in both roots band by band.
///
/// The two roots must declare identical channel schemas. Mean and standard
/// deviation per band are pooled over every pixel of every shared event;
/// the relative difference of a statistic is `|a - b| / max(|a|, |b|)`,
/// defined as zero when the values agree exactly.
pub fn dataset_diff(root_a: &Path, root_b: &Path) -> Result<DiffReport, AnalysisError> {
    let schema_a = read_schema(root_a)?;
    let schema_b = read_schema(root_b)?;
    if schema_a.channels != schema_b.channels {
        let names = |s: &crate::data::DatasetSchema| {
            s.channels.iter().map(|c| c.name.clone()).collect::<Vec<_>>().join(",")
        };
        return Err(AnalysisError::SchemaMismatch(format!(
            "channels [{}] vs [{}]",
            names(&schema_a),
            names(&schema_b)
        )));
    }

    let cubes_a = load_dataset(root_a)?;
    let cubes_b = load_dataset(root_b)?;
    let key = |c: &FireEventCube| format!("{}/{}", c.year, c.event_id);
    let map_a: BTreeMap<String, &FireEventCube> = cubes_a.iter().map(|c| (key(c), c)).collect();
    let map_b: BTreeMap<String, &FireEventCube> = cubes_b.iter().map(|c| (key(c), c)).collect();

    let shared: Vec<&String> = map_a.keys().filter(|k| map_b.contains_key(*k)).collect();
    let only_in_a: Vec<String> =
        map_a.keys().filter(|k| !map_b.contains_key(*k)).cloned().collect();
    let only_in_b: Vec<String> =
        map_b.keys().filter(|k| !map_a.contains_key(*k)).cloned().collect();
    if shared.is_empty() {
        return Err(AnalysisError::DisjointEvents { only_a: only_in_a, only_b: only_in_b });
    }

    let mut bands = Vec::with_capacity(schema_a.channels.len());
    let mut max_rel_diff = 0.0f64;
    for (ci, spec) in schema_a.channels.iter().enumerate() {
        let mut acc_a = BandAccum::new();
        let mut acc_b = BandAccum::new();
        for k in &shared {
            acc_a.push_cube(map_a[*k], ci);
            acc_b.push_cube(map_b[*k], ci);
        }
        let band = BandDiff {
            channel: spec.name.clone(),
            mean_a: acc_a.mean(),
            mean_b: acc_b.mean(),
            mean_rel_diff: rel_diff(acc_a.mean(), acc_b.mean()),
            std_a: acc_a.std(),
            std_b: acc_b.std(),
            std_rel_diff: rel_diff(acc_a.std(), acc_b.std()),
        };
        for r in [band.mean_rel_diff, band.std_rel_diff] {
            if r.is_finite() && r > max_rel_diff {
                max_rel_diff = r;
            }
        }
        bands.push(band);
    }

    Ok(DiffReport {
        events_compared: shared.len(),
        only_in_a,
        only_in_b,
        bands,
        max_rel_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_event, write_schema, ChannelGroup, ChannelSpec, DatasetSchema};
    use crate::synth::{generate_event, ShiftSpec, SynthConfig, SynthYearSpec};
    use ndarray::Axis;

    fn shifted_year(year: i32) -> SynthYearSpec {
        // mean shifts keep band means well away from zero so relative
        // differences are stable
        let mut spec = SynthYearSpec::plain(year, 2.0);
        for name in ["wind_u", "wind_v", "vegetation", "moisture"] {
            spec.covariate_shift.insert(name.to_string(), ShiftSpec { mean: 5.0, scale: 1.0 });
        }
        spec
    }

    fn config(years: Vec<SynthYearSpec>) -> SynthConfig {
        SynthConfig {
            seed: 41,
            years,
            events_per_year: 2,
            height: 16,
            width: 16,
            max_days: 4,
            burn_days: 2,
            schema: SynthConfig::default_schema(),
        }
    }

    fn write_root(root: &std::path::Path, config: &SynthConfig) -> Vec<FireEventCube> {
        std::fs::create_dir_all(root).unwrap();
        let schema = DatasetSchema { resolution_m: None, channels: config.schema.clone() };
        write_schema(root, &schema).unwrap();
        let mut cubes = Vec::new();
        for year in &config.years {
            for event in 0..config.events_per_year {
                let cube = generate_event(config, year, event);
                write_event(&cube, root).unwrap();
                cubes.push(cube);
            }
        }
        cubes
    }

    #[test]
    fn identical_datasets_diff_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let (root_a, root_b) = (dir.path().join("a"), dir.path().join("b"));
        let config = config(vec![shifted_year(2018), shifted_year(2019)]);
        write_root(&root_a, &config);
        write_root(&root_b, &config);

        let report = dataset_diff(&root_a, &root_b).unwrap();
        assert_eq!(report.events_compared, 4);
        assert!(report.only_in_a.is_empty());
        assert!(report.only_in_b.is_empty());
        assert_eq!(report.max_rel_diff, 0.0);
        for band in &report.bands {
            assert_eq!(band.mean_rel_diff, 0.0, "band {}", band.channel);
            assert_eq!(band.std_rel_diff, 0.0, "band {}", band.channel);
        }
    }

    #[test]
    fn scaled_band_is_flagged_at_its_relative_error() {
        let dir = tempfile::tempdir().unwrap();
        let (root_a, root_b) = (dir.path().join("a"), dir.path().join("b"));
        let config = config(vec![shifted_year(2018)]);
        let cubes = write_root(&root_a, &config);

        std::fs::create_dir_all(&root_b).unwrap();
        let schema = DatasetSchema { resolution_m: None, channels: config.schema.clone() };
        write_schema(&root_b, &schema).unwrap();
        let veg = config.schema.iter().position(|c| c.name == "vegetation").unwrap();
        for cube in &cubes {
            let mut tampered = cube.clone();
            tampered.raster.index_axis_mut(Axis(1), veg).mapv_inplace(|v| v * 1.001);
            write_event(&tampered, &root_b).unwrap();
        }

        let report = dataset_diff(&root_a, &root_b).unwrap();
        let expected = 0.001 / 1.001;
        let band = report.bands.iter().find(|b| b.channel == "vegetation").unwrap();
        assert!(
            (band.mean_rel_diff - expected).abs() < 1e-4,
            "mean_rel_diff = {}",
            band.mean_rel_diff
        );
        assert!((band.std_rel_diff - expected).abs() < 1e-4);
        assert!((report.max_rel_diff - expected).abs() < 1e-4);
        for other in report.bands.iter().filter(|b| b.channel != "vegetation") {
            assert_eq!(other.mean_rel_diff, 0.0, "band {}", other.channel);
        }
    }

    #[test]
    fn mismatched_schemas_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (root_a, root_b) = (dir.path().join("a"), dir.path().join("b"));
        let config_a = config(vec![shifted_year(2018)]);
        write_root(&root_a, &config_a);

        // schemas are compared before any event is read, so the second
        // root only needs its schema file
        let mut channels = config_a.schema.clone();
        channels[2] = ChannelSpec::new("veg", ChannelGroup::Vegetation, false, "index");
        std::fs::create_dir_all(&root_b).unwrap();
        write_schema(&root_b, &DatasetSchema { resolution_m: None, channels }).unwrap();

        match dataset_diff(&root_a, &root_b) {
            Err(AnalysisError::SchemaMismatch(detail)) => {
                assert!(detail.contains("vegetation") && detail.contains("veg"));
            }
            other => panic!("expected a schema mismatch, got {other:?}"),
        }
    }

    #[test]
    fn disjoint_event_sets_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (root_a, root_b) = (dir.path().join("a"), dir.path().join("b"));
        write_root(&root_a, &config(vec![shifted_year(2018)]));
        write_root(&root_b, &config(vec![shifted_year(2019)]));

        match dataset_diff(&root_a, &root_b) {
            Err(AnalysisError::DisjointEvents { only_a, only_b }) => {
                assert_eq!(only_a, vec!["2018/event_000", "2018/event_001"]);
                assert_eq!(only_b, vec!["2019/event_000", "2019/event_001"]);
            }
            other => panic!("expected disjoint events, got {other:?}"),
        }
    }
}
