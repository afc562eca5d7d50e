//! Turning a predicted mask into one first-arrival time per receiver.
//!
//! `fpp` takes the first signal pixel of each column. NPP collects every
//! rising edge of a column and follows the edge nearest to the neighbouring
//! column's pick, once from each side; where the two passes disagree the
//! pass that joins the agreed picks with the smaller jump is kept.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PickLine, SegmentationMask};

/// Time assigned to receivers whose column holds no signal pixel in `fpp`.
pub const EMPTY_COLUMN_TIME: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickMethod {
    Fpp,
    Npp,
}

impl PickMethod {
    pub fn label(self) -> &'static str {
        match self {
            PickMethod::Fpp => "FPP",
            PickMethod::Npp => "NPP",
        }
    }
}

impl FromStr for PickMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fpp" => Ok(PickMethod::Fpp),
            "npp" => Ok(PickMethod::Npp),
            other => Err(Error::Config(format!("unknown picking method {other:?}"))),
        }
    }
}

pub fn pick(mask: &SegmentationMask, method: PickMethod) -> Result<PickLine> {
    match method {
        PickMethod::Fpp => Ok(fpp(mask)),
        PickMethod::Npp => npp_bidirectional(mask),
    }
}

/// First signal pixel per column. All-zero columns get
/// [`EMPTY_COLUMN_TIME`] and are marked invalid.
pub fn fpp(mask: &SegmentationMask) -> PickLine {
    let mut times = Vec::with_capacity(mask.receivers());
    let mut valid = Vec::with_capacity(mask.receivers());
    for col in mask.classes.columns() {
        match col.iter().position(|&c| c == 1) {
            Some(t) => {
                times.push(t);
                valid.push(true);
            }
            None => {
                times.push(EMPTY_COLUMN_TIME);
                valid.push(false);
            }
        }
    }
    PickLine { times, valid }
}

/// Rising edges of every column, with the length of the run of ones that
/// starts at each edge. Row 0 counts as an edge when it is signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub times: Vec<Vec<usize>>,
    pub runs: Vec<Vec<usize>>,
}

impl CandidateSet {
    pub fn receivers(&self) -> usize {
        self.times.len()
    }
}

pub fn candidates(mask: &SegmentationMask) -> CandidateSet {
    let mut times = Vec::with_capacity(mask.receivers());
    let mut runs = Vec::with_capacity(mask.receivers());
    for col in mask.classes.columns() {
        let (mut ts, mut rs) = (Vec::new(), Vec::new());
        let mut prev = 0u8;
        for (t, &c) in col.iter().enumerate() {
            if c == 1 && prev == 0 {
                ts.push(t);
                rs.push(0);
            }
            if c == 1 {
                *rs.last_mut().expect("run started") += 1;
            }
            prev = c;
        }
        times.push(ts);
        runs.push(rs);
    }
    CandidateSet { times, runs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

/// How the first processed column with candidates chooses its pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitRule {
    /// Edge followed by the longest run of ones; earliest on ties.
    #[default]
    LongestRun,
    /// Earliest edge.
    Earliest,
}

/// Nearest-edge tracking in one direction.
///
/// Columns before the first one with candidates take the initial pick;
/// later empty columns repeat the previous pick. Both are marked invalid.
pub fn npp_directional(
    cands: &CandidateSet,
    direction: Direction,
    init: InitRule,
) -> Result<PickLine> {
    let n = cands.receivers();
    let order: Vec<usize> = match direction {
        Direction::LeftToRight => (0..n).collect(),
        Direction::RightToLeft => (0..n).rev().collect(),
    };
    let start = order
        .iter()
        .position(|&r| !cands.times[r].is_empty())
        .ok_or(Error::NoCandidates)?;
    let first = order[start];
    let init_pick = match init {
        InitRule::Earliest => cands.times[first][0],
        InitRule::LongestRun => {
            let mut best = 0;
            for (k, &run) in cands.runs[first].iter().enumerate() {
                if run > cands.runs[first][best] {
                    best = k;
                }
            }
            cands.times[first][best]
        }
    };

    let mut times = vec![0; n];
    let mut valid = vec![false; n];
    for &r in &order[..start] {
        times[r] = init_pick;
    }
    times[first] = init_pick;
    valid[first] = true;
    let mut prev = init_pick;
    for &r in &order[start + 1..] {
        match nearest(&cands.times[r], prev) {
            Some(t) => {
                times[r] = t;
                valid[r] = true;
                prev = t;
            }
            None => times[r] = prev,
        }
    }
    Ok(PickLine { times, valid })
}

/// Candidate closest to `prev`; the earlier one on a distance tie.
/// `cands` is sorted ascending.
fn nearest(cands: &[usize], prev: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &t in cands {
        match best {
            Some(b) if t.abs_diff(prev) >= b.abs_diff(prev) => {}
            _ => best = Some(t),
        }
    }
    best
}

/// Both NPP passes merged.
///
/// For each maximal run of columns where the passes disagree, a pass is
/// scored by the size of its jumps to the agreed picks on each side of the
/// run that exists. The lower score wins; left-to-right wins ties.
pub fn npp_bidirectional(mask: &SegmentationMask) -> Result<PickLine> {
    npp_bidirectional_with(&candidates(mask), InitRule::default())
}

pub fn npp_bidirectional_with(cands: &CandidateSet, init: InitRule) -> Result<PickLine> {
    let lr = npp_directional(cands, Direction::LeftToRight, init)?;
    let rl = npp_directional(cands, Direction::RightToLeft, init)?;
    Ok(merge_passes(&lr, &rl))
}

fn merge_passes(lr: &PickLine, rl: &PickLine) -> PickLine {
    let n = lr.receivers();
    let mut out = lr.clone();
    let mut r = 0;
    while r < n {
        if lr.times[r] == rl.times[r] {
            out.valid[r] = lr.valid[r] && rl.valid[r];
            r += 1;
            continue;
        }
        let a = r;
        while r < n && lr.times[r] != rl.times[r] {
            r += 1;
        }
        let b = r;
        let gap = |p: &PickLine| {
            let mut g = 0;
            if a > 0 {
                g += p.times[a].abs_diff(lr.times[a - 1]);
            }
            if b < n {
                g += p.times[b - 1].abs_diff(lr.times[b]);
            }
            g
        };
        if gap(rl) < gap(lr) {
            out.times[a..b].copy_from_slice(&rl.times[a..b]);
            out.valid[a..b].copy_from_slice(&rl.valid[a..b]);
        }
    }
    out
}
