//! Chronological train/valid/test partitioning.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{IngestError, MonthlySnapshot};

/// Inclusive range of years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn contains(&self, y: i32) -> bool {
        self.start <= y && y <= self.end
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}-{}", self.start, self.end)
        }
    }
}

impl FromStr for YearRange {
    type Err = IngestError;

    /// `YYYY` or `YYYY-YYYY`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IngestError::BadSplit(format!("expected YYYY or YYYY-YYYY, got {s:?}"));
        let (a, b) = s.trim().split_once('-').unwrap_or((s.trim(), s.trim()));
        Ok(YearRange { start: a.trim().parse().map_err(|_| bad())?, end: b.trim().parse().map_err(|_| bad())? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: YearRange,
    pub valid: YearRange,
    pub test: YearRange,
}

impl SplitSpec {
    /// Requires each range to be ordered and the three to be disjoint and
    /// strictly increasing.
    pub fn validate(&self) -> Result<(), IngestError> {
        for (name, r) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if r.start > r.end {
                return Err(IngestError::BadSplit(format!("{name} range {r} is reversed")));
            }
        }
        if self.train.end >= self.valid.start {
            return Err(IngestError::BadSplit(format!("train {} must end before valid {} starts", self.train, self.valid)));
        }
        if self.valid.end >= self.test.start {
            return Err(IngestError::BadSplit(format!("valid {} must end before test {} starts", self.valid, self.test)));
        }
        Ok(())
    }
}

/// Test snapshots behind an access counter, so callers can check that a
/// training run never looked at them.
#[derive(Debug, Default)]
pub struct GuardedSplit {
    snaps: Vec<MonthlySnapshot>,
    reads: AtomicUsize,
}

impl GuardedSplit {
    pub fn new(snaps: Vec<MonthlySnapshot>) -> Self {
        GuardedSplit { snaps, reads: AtomicUsize::new(0) }
    }

    pub fn get(&self) -> &[MonthlySnapshot] {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.snaps
    }

    pub fn into_inner(self) -> Vec<MonthlySnapshot> {
        self.snaps
    }

    /// Number of snapshots; does not count as an access.
    pub fn len(&self) -> usize {
        self.snaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snaps.is_empty()
    }

    pub fn access_count(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
pub struct Splits {
    pub train: Vec<MonthlySnapshot>,
    pub valid: Vec<MonthlySnapshot>,
    pub test: GuardedSplit,
    /// Snapshots outside all three ranges.
    pub dropped: usize,
}

pub fn temporal_split(snapshots: Vec<MonthlySnapshot>, spec: &SplitSpec) -> Result<Splits, IngestError> {
    spec.validate()?;
    let mut snapshots = snapshots;
    snapshots.sort_by_key(MonthlySnapshot::key);
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut dropped = 0;
    for s in snapshots {
        if spec.train.contains(s.year) {
            train.push(s);
        } else if spec.valid.contains(s.year) {
            valid.push(s);
        } else if spec.test.contains(s.year) {
            test.push(s);
        } else {
            dropped += 1;
        }
    }
    for (name, v) in [("train", &train), ("valid", &valid), ("test", &test)] {
        if v.is_empty() {
            return Err(IngestError::EmptySplit(name));
        }
    }
    Ok(Splits { train, valid, test: GuardedSplit::new(test), dropped })
}
