//! Cross-validation fold construction.
//!
//! Every protocol produces explicit, serializable plans so a run can be
//! audited and reproduced from its JSON artifacts alone. Year-based plans
//! (leave-one-year-out, paired blocks) list years; event-based plans list
//! event references so all days of a fire stay on one side of a split.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::FireEventCube;
use crate::util::stream_rng;

#[derive(Debug, Error)]
pub enum FoldError {
    #[error("protocol needs at least {needed} years, got {got} (no train year would remain)")]
    TooFewYears { needed: usize, got: usize },
    #[error("duplicate year {0} in year list")]
    DuplicateYear(i32),
    #[error("paired-block protocol needs an even year count, got {0}")]
    OddYearCount(usize),
    #[error("paired-block protocol needs at least 4 blocks (8 years), got {0} blocks")]
    TooFewBlocks(usize),
    #[error("paired-block protocol needs consecutive years, but {prev} is followed by {next}")]
    NonConsecutiveYears { prev: i32, next: i32 },
    #[error("event folds need k >= 3 so a train fold remains, got k = {0}")]
    TooFewFolds(usize),
    #[error("cannot split {got} events into {k} folds")]
    TooFewEvents { k: usize, got: usize },
    #[error("duplicate event {0} in event list")]
    DuplicateEvent(String),
    #[error("year {year} has {have} samples, but the validation quota {quota} requires more")]
    QuotaInfeasible { year: i32, have: usize, quota: usize },
    #[error("year {year}: no events left for training after reserving the validation block")]
    EmptyTrain { year: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Loyo,
    WstsPlus,
    RandomEvent,
    CrossYear,
}

/// A fire event identified across the whole dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventRef {
    pub year: i32,
    pub event_id: String,
}

impl std::fmt::Display for EventRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.year, self.event_id)
    }
}

impl From<&FireEventCube> for EventRef {
    fn from(cube: &FireEventCube) -> Self {
        Self { year: cube.year, event_id: cube.event_id.clone() }
    }
}

/// Assignment of years or events to the three splits of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPlan {
    pub fold_id: usize,
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_years: Vec<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_years: Vec<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_years: Vec<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_events: Vec<EventRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_events: Vec<EventRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_events: Vec<EventRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Train,
    Val,
    Test,
}

impl FoldPlan {
    fn year_based(fold_id: usize, protocol: Protocol, train: Vec<i32>, val: Vec<i32>, test: Vec<i32>) -> Self {
        Self {
            fold_id,
            protocol,
            train_years: train,
            val_years: val,
            test_years: test,
            train_events: Vec::new(),
            val_events: Vec::new(),
            test_events: Vec::new(),
        }
    }

    /// True when splits are declared per event rather than per year.
    pub fn is_event_granular(&self) -> bool {
        self.test_years.is_empty()
    }

    fn role_of(&self, cube: &FireEventCube) -> Option<Role> {
        if self.is_event_granular() {
            let er = EventRef::from(cube);
            if self.train_events.contains(&er) {
                Some(Role::Train)
            } else if self.val_events.contains(&er) {
                Some(Role::Val)
            } else if self.test_events.contains(&er) {
                Some(Role::Test)
            } else {
                None
            }
        } else if self.train_years.contains(&cube.year) {
            Some(Role::Train)
        } else if self.val_years.contains(&cube.year) {
            Some(Role::Val)
        } else if self.test_years.contains(&cube.year) {
            Some(Role::Test)
        } else {
            None
        }
    }

    /// Partition cubes into (train, val, test) per this plan; cubes outside
    /// the plan are ignored.
    pub fn split<'a>(
        &self,
        cubes: &'a [FireEventCube],
    ) -> (Vec<&'a FireEventCube>, Vec<&'a FireEventCube>, Vec<&'a FireEventCube>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        let mut test = Vec::new();
        for cube in cubes {
            match self.role_of(cube) {
                Some(Role::Train) => train.push(cube),
                Some(Role::Val) => val.push(cube),
                Some(Role::Test) => test.push(cube),
                None => {}
            }
        }
        (train, val, test)
    }
}

fn check_unique_years(years: &[i32]) -> Result<(), FoldError> {
    let mut seen = std::collections::HashSet::new();
    for &y in years {
        if !seen.insert(y) {
            return Err(FoldError::DuplicateYear(y));
        }
    }
    Ok(())
}

/// Leave-one-year-out: one fold per ordered (validation year, test year)
/// pair, training on all remaining years. Y years yield Y(Y-1) folds.
pub fn loyo_folds(years: &[i32]) -> Result<Vec<FoldPlan>, FoldError> {
    check_unique_years(years)?;
    if years.len() < 3 {
        return Err(FoldError::TooFewYears { needed: 3, got: years.len() });
    }
    let mut plans = Vec::with_capacity(years.len() * (years.len() - 1));
    for &test in years {
        for &val in years {
            if val == test {
                continue;
            }
            let train: Vec<i32> = years.iter().copied().filter(|&y| y != test && y != val).collect();
            plans.push(FoldPlan::year_based(plans.len(), Protocol::Loyo, train, vec![val], vec![test]));
        }
    }
    Ok(plans)
}

/// Paired-block protocol: consecutive years are grouped into two-year
/// blocks; fold i tests on block i and validates on block i+2 (mod B), so
/// test and validation blocks are never adjacent in time. Needs B >= 4.
pub fn wsts_plus_folds(years: &[i32]) -> Result<Vec<FoldPlan>, FoldError> {
    check_unique_years(years)?;
    if years.len() % 2 != 0 {
        return Err(FoldError::OddYearCount(years.len()));
    }
    let b = years.len() / 2;
    if b < 4 {
        return Err(FoldError::TooFewBlocks(b));
    }
    let mut sorted = years.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[1] != pair[0] + 1 {
            return Err(FoldError::NonConsecutiveYears { prev: pair[0], next: pair[1] });
        }
    }
    let blocks: Vec<[i32; 2]> = sorted.chunks(2).map(|c| [c[0], c[1]]).collect();
    let mut plans = Vec::with_capacity(b);
    for i in 0..b {
        let val_block = (i + 2) % b;
        let test = blocks[i].to_vec();
        let val = blocks[val_block].to_vec();
        let train: Vec<i32> = (0..b)
            .filter(|&j| j != i && j != val_block)
            .flat_map(|j| blocks[j])
            .collect();
        plans.push(FoldPlan::year_based(i, Protocol::WstsPlus, train, val, test));
    }
    Ok(plans)
}

/// Random event-level k-fold: events are shuffled and split into k
/// near-equal folds; fold i tests on part i, validates on part i+1 (mod k),
/// and trains on the rest. Event granularity keeps all days of a fire on
/// one side of every split.
pub fn random_event_folds(
    events: &[EventRef],
    k: usize,
    seed: u64,
) -> Result<Vec<FoldPlan>, FoldError> {
    if k < 3 {
        return Err(FoldError::TooFewFolds(k));
    }
    if events.len() < k {
        return Err(FoldError::TooFewEvents { k, got: events.len() });
    }
    let mut seen = std::collections::HashSet::new();
    for e in events {
        if !seen.insert(e) {
            return Err(FoldError::DuplicateEvent(e.to_string()));
        }
    }

    let mut shuffled = events.to_vec();
    shuffled.sort();
    let mut rng = stream_rng(seed, &["random_event_folds"]);
    shuffled.shuffle(&mut rng);

    // near-equal partition: the first (n mod k) folds get one extra event
    let base = shuffled.len() / k;
    let extra = shuffled.len() % k;
    let mut parts: Vec<Vec<EventRef>> = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        parts.push(shuffled[cursor..cursor + size].to_vec());
        cursor += size;
    }

    let mut plans = Vec::with_capacity(k);
    for i in 0..k {
        let val_part = (i + 1) % k;
        let train: Vec<EventRef> = (0..k)
            .filter(|&j| j != i && j != val_part)
            .flat_map(|j| parts[j].iter().cloned())
            .collect();
        plans.push(FoldPlan {
            fold_id: i,
            protocol: Protocol::RandomEvent,
            train_years: Vec::new(),
            val_years: Vec::new(),
            test_years: Vec::new(),
            train_events: train,
            val_events: parts[val_part].clone(),
            test_events: parts[i].clone(),
        });
    }
    Ok(plans)
}

/// A single (input window, target day) instance addressed by provenance.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleRef {
    pub year: i32,
    pub event_id: String,
    pub target_date: NaiveDate,
}

/// Per-year splits for the cross-year transfer experiment.
///
/// Each year reserves one seeded block of `val_quota` samples that serves
/// both as that year's fixed test set and as its contribution to one shared
/// validation set; training samples come only from the year's remaining
/// events, capped at `train_cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossYearPlan {
    pub years: Vec<i32>,
    pub val_quota: usize,
    pub train_cap: usize,
    pub seed: u64,
    pub test_sets: BTreeMap<i32, Vec<SampleRef>>,
    pub train_sets: BTreeMap<i32, Vec<SampleRef>>,
    pub shared_val: Vec<SampleRef>,
}

/// Build the cross-year plan from an index of all available samples.
pub fn cross_year_protocol(
    samples: &[SampleRef],
    val_quota: usize,
    train_cap: usize,
    seed: u64,
) -> Result<CrossYearPlan, FoldError> {
    let mut by_year: BTreeMap<i32, Vec<SampleRef>> = BTreeMap::new();
    for s in samples {
        by_year.entry(s.year).or_default().push(s.clone());
    }

    let mut test_sets = BTreeMap::new();
    let mut train_sets = BTreeMap::new();
    let mut shared_val = Vec::new();
    for (&year, year_samples) in &by_year {
        if year_samples.len() <= val_quota {
            return Err(FoldError::QuotaInfeasible {
                year,
                have: year_samples.len(),
                quota: val_quota,
            });
        }
        // group samples by event, deterministically ordered, then shuffle
        // events so the reserved block is a seeded draw
        let mut by_event: BTreeMap<String, Vec<SampleRef>> = BTreeMap::new();
        for s in year_samples {
            by_event.entry(s.event_id.clone()).or_default().push(s.clone());
        }
        let mut events: Vec<String> = by_event.keys().cloned().collect();
        let mut rng = stream_rng(seed, &["cross_year", &year.to_string()]);
        events.shuffle(&mut rng);

        let mut reserved: Vec<SampleRef> = Vec::new();
        let mut rest: Vec<SampleRef> = Vec::new();
        for event in &events {
            let mut block = by_event[event].clone();
            block.sort();
            if reserved.len() < val_quota {
                reserved.extend(block);
            } else {
                rest.extend(block);
            }
        }
        // samples of a reserved event beyond the quota are discarded, not
        // moved to train, to keep train and test event sets disjoint
        reserved.truncate(val_quota);
        if rest.is_empty() {
            return Err(FoldError::EmptyTrain { year });
        }
        rest.sort();
        rest.shuffle(&mut rng);
        rest.truncate(train_cap);
        rest.sort();

        shared_val.extend(reserved.iter().cloned());
        test_sets.insert(year, reserved);
        train_sets.insert(year, rest);
    }

    Ok(CrossYearPlan {
        years: by_year.keys().copied().collect(),
        val_quota,
        train_cap,
        seed,
        test_sets,
        train_sets,
        shared_val,
    })
}
