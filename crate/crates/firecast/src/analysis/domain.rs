//! Per-year marginal statistics and fire growth trajectories.

use std::collections::BTreeMap;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::data::{window_samples, ChannelGroup, FeatureSet, FireEventCube};
use crate::util::{mean, quantile, sample_std, stream_rng};

use super::AnalysisError;

/// Bins for continuous-channel histograms.
const HIST_BINS: usize = 24;
/// Bins for the log-scaled fire-size histograms.
const SIZE_BINS: usize = 12;
/// Quantile levels reported per channel.
const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Counts over fixed bin edges (`edges.len() == counts.len() + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn from_values(values: &[f64], edges: &[f64]) -> Self {
        let bins = edges.len() - 1;
        let lo = edges[0];
        let width = (edges[bins] - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
            counts[idx.min(bins - 1)] += 1;
        }
        Self { edges: edges.to_vec(), counts }
    }

    /// Counts normalized to proportions; all zeros when empty.
    pub fn proportions(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Total variation distance between two histograms over shared bin edges.
pub(crate) fn total_variation(a: &Histogram, b: &Histogram) -> f64 {
    assert_eq!(a.edges, b.edges, "histograms must share bin edges");
    let pa = a.proportions();
    let pb = b.proportions();
    0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Marginal summary of one continuous channel within one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub mean: f64,
    pub std: f64,
    /// `(level, value)` pairs at the standard report levels.
    pub quantiles: Vec<(f64, f64)>,
    pub histogram: Histogram,
}

/// One year's slice of the domain report, computed over the balanced
/// event subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearSummary {
    pub year: i32,
    pub events_used: usize,
    /// Fraction of next-day samples whose target has no positive pixel.
    pub zero_fire_probability: f64,
    pub channels: BTreeMap<String, ChannelSummary>,
    /// Class proportions per categorical channel; each map sums to 1.
    pub categorical: BTreeMap<String, BTreeMap<String, f64>>,
    /// Log10 footprint sizes of events that burned at least one pixel.
    pub fire_sizes: Histogram,
}

/// Cross-year marginal comparison over a balanced, seeded event
/// subsample. Histograms share bin edges across years so they compare
/// directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    /// Events drawn per year: the smallest year's event count.
    pub balanced_events: usize,
    pub years: Vec<YearSummary>,
    /// Max pairwise total-variation distance between yearly histograms per
    /// continuous channel; `None` when only one year is present.
    pub channel_divergence: Option<BTreeMap<String, f64>>,
}

fn check_consistent_schema(cubes: &[FireEventCube]) -> Result<(), AnalysisError> {
    let schema = &cubes[0].channel_schema;
    for c in &cubes[1..] {
        if c.channel_schema != *schema {
            return Err(AnalysisError::InconsistentSchema(c.event_id.clone()));
        }
    }
    Ok(())
}

/// Pixels a fire event ever burned.
fn footprint(cube: &FireEventCube) -> u64 {
    let fire = cube.raster.index_axis(Axis(1), cube.fire_channel_index);
    let (_, h, w) = fire.dim();
    let mut count = 0u64;
    for y in 0..h {
        for x in 0..w {
            if fire.slice(ndarray::s![.., y, x]).iter().any(|&v| v > 0.5) {
                count += 1;
            }
        }
    }
    count
}

/// Active fire pixels on each day of an event.
fn daily_active(cube: &FireEventCube) -> Vec<f64> {
    let fire = cube.raster.index_axis(Axis(1), cube.fire_channel_index);
    (0..fire.dim().0)
        .map(|d| fire.index_axis(Axis(0), d).iter().filter(|&&v| v > 0.5).count() as f64)
        .collect()
}

/// Marginal statistics per year over a balanced event subsample.
///
/// Every year contributes the same number of events (the smallest year's
/// count, drawn with a seeded shuffle) so between-year comparisons are not
/// confounded by sample size. With a single year the report is still
/// produced, with the cross-year divergence section omitted.
pub fn domain_report(cubes: &[FireEventCube], seed: u64) -> Result<DomainReport, AnalysisError> {
    if cubes.is_empty() {
        return Err(AnalysisError::NoEvents);
    }
    check_consistent_schema(cubes)?;
    let schema = &cubes[0].channel_schema;
    let features = FeatureSet::all(schema);

    let mut by_year: BTreeMap<i32, Vec<&FireEventCube>> = BTreeMap::new();
    for c in cubes {
        by_year.entry(c.year).or_default().push(c);
    }
    let balanced_events = by_year.values().map(|v| v.len()).min().unwrap();

    let mut selected: BTreeMap<i32, Vec<&FireEventCube>> = BTreeMap::new();
    for (&year, events) in &by_year {
        let mut events = events.clone();
        events.sort_by(|a, b| a.event_id.cmp(&b.event_id));
        let mut rng = stream_rng(seed, &["domain", &year.to_string()]);
        let mut picks =
            rand::seq::index::sample(&mut rng, events.len(), balanced_events).into_vec();
        picks.sort_unstable();
        selected.insert(year, picks.into_iter().map(|i| events[i]).collect());
    }

    // shared bin edges per channel, from the pooled subsample
    let continuous: Vec<(usize, String)> = schema
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.categorical && c.group != ChannelGroup::Fire)
        .map(|(i, c)| (i, c.name.clone()))
        .collect();
    let mut edges: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (ch, name) in &continuous {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for events in selected.values() {
            for cube in events {
                for &v in cube.raster.index_axis(Axis(1), *ch).iter() {
                    let v = v as f64;
                    if v.is_finite() {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
        }
        if !lo.is_finite() || hi <= lo {
            // degenerate channel: a single bin around whatever value it has
            let center = if lo.is_finite() { lo } else { 0.0 };
            lo = center - 0.5;
            hi = center + 0.5;
        }
        let width = (hi - lo) / HIST_BINS as f64;
        edges.insert(name.clone(), (0..=HIST_BINS).map(|i| lo + width * i as f64).collect());
    }

    // shared log-size edges from all events that burned anything
    let mut log_sizes: Vec<f64> = Vec::new();
    for events in selected.values() {
        for cube in events {
            let fp = footprint(cube);
            if fp > 0 {
                log_sizes.push((fp as f64).log10());
            }
        }
    }
    let (size_lo, size_hi) = match (
        log_sizes.iter().cloned().fold(f64::INFINITY, f64::min),
        log_sizes.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    ) {
        (lo, hi) if lo.is_finite() && hi > lo => (lo, hi),
        (lo, _) if lo.is_finite() => (lo - 0.5, lo + 0.5),
        _ => (0.0, 1.0),
    };
    let size_width = (size_hi - size_lo) / SIZE_BINS as f64;
    let size_edges: Vec<f64> =
        (0..=SIZE_BINS).map(|i| size_lo + size_width * i as f64).collect();

    let categorical_channels: Vec<(usize, String)> = schema
        .iter()
        .enumerate()
        .filter(|(_, c)| c.categorical)
        .map(|(i, c)| (i, c.name.clone()))
        .collect();

    let mut years = Vec::new();
    for (&year, events) in &selected {
        let mut channels = BTreeMap::new();
        for (ch, name) in &continuous {
            let mut values: Vec<f64> = Vec::new();
            for cube in events {
                values.extend(
                    cube.raster
                        .index_axis(Axis(1), *ch)
                        .iter()
                        .map(|&v| v as f64)
                        .filter(|v| v.is_finite()),
                );
            }
            channels.insert(
                name.clone(),
                ChannelSummary {
                    mean: mean(&values),
                    std: sample_std(&values),
                    quantiles: QUANTILES.iter().map(|&q| (q, quantile(&values, q))).collect(),
                    histogram: Histogram::from_values(&values, &edges[name]),
                },
            );
        }

        let mut categorical = BTreeMap::new();
        for (ch, name) in &categorical_channels {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            let mut total = 0u64;
            for cube in events {
                for &v in cube.raster.index_axis(Axis(1), *ch).iter() {
                    if (v as f64).is_finite() {
                        *counts.entry(format!("{}", v.round() as i64)).or_default() += 1;
                        total += 1;
                    }
                }
            }
            let proportions = counts
                .into_iter()
                .map(|(k, c)| (k, if total == 0 { 0.0 } else { c as f64 / total as f64 }))
                .collect();
            categorical.insert(name.clone(), proportions);
        }

        let mut zero = 0usize;
        let mut n_samples = 0usize;
        for cube in events {
            for sample in window_samples(cube, 1, &features)? {
                let positives = sample
                    .target
                    .iter()
                    .zip(sample.valid.iter())
                    .filter(|(&y, &ok)| ok && y > 0.5)
                    .count();
                n_samples += 1;
                zero += (positives == 0) as usize;
            }
        }

        let year_log_sizes: Vec<f64> = events
            .iter()
            .map(|c| footprint(c))
            .filter(|&fp| fp > 0)
            .map(|fp| (fp as f64).log10())
            .collect();

        years.push(YearSummary {
            year,
            events_used: events.len(),
            zero_fire_probability: if n_samples == 0 {
                1.0
            } else {
                zero as f64 / n_samples as f64
            },
            channels,
            categorical,
            fire_sizes: Histogram::from_values(&year_log_sizes, &size_edges),
        });
    }

    let channel_divergence = if years.len() < 2 {
        None
    } else {
        let mut div = BTreeMap::new();
        for (_, name) in &continuous {
            let mut worst = 0.0f64;
            for i in 0..years.len() {
                for j in i + 1..years.len() {
                    let d = total_variation(
                        &years[i].channels[name].histogram,
                        &years[j].channels[name].histogram,
                    );
                    worst = worst.max(d);
                }
            }
            div.insert(name.clone(), worst);
        }
        Some(div)
    };

    Ok(DomainReport { balanced_events, years, channel_divergence })
}

/// Mean active pixels at `day` after each event's first detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub day: usize,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    /// Events contributing at this day index.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub year: i32,
    pub points: Vec<GrowthPoint>,
    /// Events of the year with no fire on any day.
    pub no_fire_events: usize,
    /// True when no event of the year burned, so the curve is all zeros.
    pub all_zero: bool,
    /// True when at most one event contributed, making the interval
    /// degenerate.
    pub single_event: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub horizon: usize,
    pub curves: Vec<GrowthCurve>,
}

/// Average fire progression per year: day 0 is each event's first day
/// with a nonzero fire mask, so the day-0 mean is the mean ignition size.
/// Events shorter than the horizon contribute the days they have.
pub fn growth_curves(
    cubes: &[FireEventCube],
    horizon: usize,
) -> Result<GrowthReport, AnalysisError> {
    if horizon < 2 {
        return Err(AnalysisError::InvalidHorizon(horizon));
    }
    if cubes.is_empty() {
        return Err(AnalysisError::NoEvents);
    }

    let mut by_year: BTreeMap<i32, Vec<&FireEventCube>> = BTreeMap::new();
    for c in cubes {
        by_year.entry(c.year).or_default().push(c);
    }

    let mut curves = Vec::new();
    for (&year, events) in &by_year {
        // per-event trajectory aligned to the first burning day
        let mut aligned: Vec<Vec<f64>> = Vec::new();
        let mut no_fire = 0usize;
        for cube in events {
            let counts = daily_active(cube);
            match counts.iter().position(|&c| c > 0.0) {
                Some(first) => {
                    let take = (counts.len() - first).min(horizon);
                    aligned.push(counts[first..first + take].to_vec());
                }
                None => no_fire += 1,
            }
        }

        let mut points = Vec::with_capacity(horizon);
        for day in 0..horizon {
            let at_day: Vec<f64> =
                aligned.iter().filter_map(|t| t.get(day).copied()).collect();
            let n = at_day.len();
            let (m, ci) = if n == 0 {
                (0.0, 0.0)
            } else {
                (mean(&at_day), 1.96 * sample_std(&at_day) / (n as f64).sqrt())
            };
            points.push(GrowthPoint { day, mean: m, ci95: ci, n });
        }

        curves.push(GrowthCurve {
            year,
            points,
            no_fire_events: no_fire,
            all_zero: aligned.is_empty(),
            single_event: aligned.len() <= 1,
        });
    }

    Ok(GrowthReport { horizon, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_event, ShiftSpec, SynthConfig, SynthYearSpec};

    fn cubes_for(config: &SynthConfig) -> Vec<FireEventCube> {
        let mut cubes = Vec::new();
        for year in &config.years {
            for event in 0..config.events_per_year {
                cubes.push(generate_event(config, year, event));
            }
        }
        cubes
    }

    fn base_config(seed: u64, years: Vec<SynthYearSpec>, events: usize) -> SynthConfig {
        SynthConfig {
            seed,
            years,
            events_per_year: events,
            height: 24,
            width: 24,
            max_days: 8,
            burn_days: 3,
            schema: SynthConfig::default_schema(),
        }
    }

    #[test]
    fn identical_year_specs_have_small_divergence() {
        // fields are spatially smooth, so per-year histograms carry real
        // sampling noise; enough events keep it well under the shift scale
        let config = base_config(
            5,
            vec![SynthYearSpec::plain(2018, 2.0), SynthYearSpec::plain(2019, 2.0)],
            12,
        );
        let report = domain_report(&cubes_for(&config), 0).unwrap();
        let div = report.channel_divergence.as_ref().unwrap();
        for (name, &d) in div {
            assert!(d < 0.12, "channel {name} diverged by {d} between identical specs");
        }
    }

    #[test]
    fn mean_shifted_channel_is_flagged() {
        let mut shifted = SynthYearSpec::plain(2019, 2.0);
        shifted
            .covariate_shift
            .insert("vegetation".into(), ShiftSpec { mean: 2.0, scale: 1.0 });
        let config =
            base_config(6, vec![SynthYearSpec::plain(2018, 2.0), shifted], 12);
        let report = domain_report(&cubes_for(&config), 0).unwrap();
        let div = report.channel_divergence.as_ref().unwrap();
        assert!(div["vegetation"] > 0.2, "shifted channel only moved {}", div["vegetation"]);
        assert!(div["elevation"] < 0.15, "unshifted channel moved {}", div["elevation"]);
    }

    #[test]
    fn zero_ignition_year_has_probability_one() {
        let config = base_config(
            7,
            vec![SynthYearSpec::plain(2018, 4.0), SynthYearSpec::plain(2019, 0.0)],
            3,
        );
        let report = domain_report(&cubes_for(&config), 1).unwrap();
        let by_year: BTreeMap<i32, &YearSummary> =
            report.years.iter().map(|y| (y.year, y)).collect();
        assert_eq!(by_year[&2019].zero_fire_probability, 1.0);
        assert!(by_year[&2018].zero_fire_probability < 1.0);
        // no event of the silent year contributes a positive fire size
        assert_eq!(by_year[&2019].fire_sizes.counts.iter().sum::<u64>(), 0);
    }

    #[test]
    fn subsample_is_balanced_to_the_smallest_year() {
        let config = base_config(
            8,
            vec![SynthYearSpec::plain(2018, 2.0), SynthYearSpec::plain(2019, 2.0)],
            5,
        );
        let mut cubes = cubes_for(&config);
        // drop two 2019 events so the years are unbalanced
        cubes.retain(|c| !(c.year == 2019 && c.event_id.as_str() >= "event_003"));
        let report = domain_report(&cubes, 3).unwrap();
        assert_eq!(report.balanced_events, 3);
        for y in &report.years {
            assert_eq!(y.events_used, 3);
        }
    }

    #[test]
    fn class_proportions_sum_to_one() {
        let config = base_config(
            9,
            vec![SynthYearSpec::plain(2018, 2.0), SynthYearSpec::plain(2019, 2.0)],
            3,
        );
        let report = domain_report(&cubes_for(&config), 0).unwrap();
        for y in &report.years {
            assert!(!y.categorical.is_empty());
            for (name, classes) in &y.categorical {
                let total: f64 = classes.values().sum();
                assert!(
                    (total - 1.0).abs() < 1e-9,
                    "{name} proportions sum to {total} in {}",
                    y.year
                );
            }
            // histograms share edges across years
            for (name, summary) in &y.channels {
                assert_eq!(
                    summary.histogram.edges, report.years[0].channels[name].histogram.edges,
                    "{name} edges differ across years"
                );
                let total: u64 = summary.histogram.counts.iter().sum();
                assert!(total > 0);
            }
        }
    }

    #[test]
    fn single_year_report_omits_comparisons() {
        let config = base_config(10, vec![SynthYearSpec::plain(2020, 2.0)], 3);
        let report = domain_report(&cubes_for(&config), 0).unwrap();
        assert!(report.channel_divergence.is_none());
        assert_eq!(report.years.len(), 1);
    }

    #[test]
    fn seeded_subsampling_is_deterministic() {
        let config = base_config(
            11,
            vec![SynthYearSpec::plain(2018, 2.0), SynthYearSpec::plain(2019, 2.0)],
            4,
        );
        let cubes = cubes_for(&config);
        let a = domain_report(&cubes, 42).unwrap();
        let b = domain_report(&cubes, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn growth_day_zero_is_the_mean_ignition_size() {
        let config = base_config(12, vec![SynthYearSpec::plain(2018, 3.0)], 4);
        let cubes = cubes_for(&config);
        let report = growth_curves(&cubes, 5).unwrap();
        let curve = &report.curves[0];

        let mut ignition_sizes = Vec::new();
        for cube in &cubes {
            let counts = daily_active(cube);
            if let Some(first) = counts.iter().position(|&c| c > 0.0) {
                ignition_sizes.push(counts[first]);
            }
        }
        assert_eq!(curve.points[0].day, 0);
        assert_eq!(curve.points[0].mean, mean(&ignition_sizes));
        assert_eq!(curve.points[0].n, ignition_sizes.len());
        assert_eq!(curve.points.len(), 5);
    }

    #[test]
    fn growth_flags_no_fire_and_single_event_years() {
        let silent = base_config(13, vec![SynthYearSpec::plain(2018, 0.0)], 2);
        let report = growth_curves(&cubes_for(&silent), 4).unwrap();
        assert!(report.curves[0].all_zero);
        assert_eq!(report.curves[0].no_fire_events, 2);
        assert!(report.curves[0].points.iter().all(|p| p.mean == 0.0 && p.ci95 == 0.0));

        let lone = base_config(14, vec![SynthYearSpec::plain(2019, 4.0)], 1);
        let report = growth_curves(&cubes_for(&lone), 4).unwrap();
        assert!(report.curves[0].single_event);
        assert!(report.curves[0].points[0].ci95 == 0.0);
    }

    #[test]
    fn growth_rejects_degenerate_horizons() {
        let config = base_config(15, vec![SynthYearSpec::plain(2018, 2.0)], 2);
        let cubes = cubes_for(&config);
        assert!(matches!(growth_curves(&cubes, 1), Err(AnalysisError::InvalidHorizon(1))));
        assert!(growth_curves(&cubes, 2).is_ok());
    }
}
