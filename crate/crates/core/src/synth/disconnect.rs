//! Disconnected pick lines: spliced shot gathers and dead traces.

use std::ops::Range;

use ndarray::{concatenate, s, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::types::{GatherImage, PickLine};

/// How dead traces are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum DeadTraces {
    #[default]
    None,
    /// Explicit half-open column ranges.
    Spans(Vec<Range<usize>>),
    /// `count` spans with widths drawn uniformly from `[min_width, max_width]`.
    Random {
        count: usize,
        min_width: usize,
        max_width: usize,
    },
}

/// Concatenates gathers along the receiver axis (when `splice` is set) and
/// kills the requested traces. Dead traces are zeroed and flagged invalid;
/// their pick times keep the model truth.
pub fn apply_disconnections(
    gathers: &[(GatherImage, PickLine)],
    dead: &DeadTraces,
    splice: bool,
    seed: u64,
) -> Result<(GatherImage, PickLine)> {
    let (first, _) = gathers
        .first()
        .ok_or_else(|| Error::Empty("no gathers to disconnect".into()))?;
    if gathers.len() > 1 && !splice {
        return Err(Error::Config(
            "several gathers given but splicing is off".into(),
        ));
    }
    for (g, p) in gathers {
        if g.time_steps() != first.time_steps() || g.sample_rate_ms != first.sample_rate_ms {
            return Err(Error::Shape(
                "spliced gathers must share time steps and sample rate".into(),
            ));
        }
        if p.receivers() != g.receivers() {
            return Err(Error::Shape("pick line width differs from gather".into()));
        }
    }

    let views: Vec<_> = gathers.iter().map(|(g, _)| g.amplitudes.view()).collect();
    let mut amplitudes = concatenate(Axis(1), &views).expect("row counts checked");
    let mut picks = PickLine {
        times: gathers
            .iter()
            .flat_map(|(_, p)| p.times.iter().copied())
            .collect(),
        valid: gathers
            .iter()
            .flat_map(|(_, p)| p.valid.iter().copied())
            .collect(),
    };
    let width = picks.receivers();

    let spans = match dead {
        DeadTraces::None => Vec::new(),
        DeadTraces::Spans(spans) => spans.clone(),
        DeadTraces::Random {
            count,
            min_width,
            max_width,
        } => {
            if min_width > max_width || *max_width == 0 {
                return Err(Error::Config(format!(
                    "bad dead-trace width range [{min_width}, {max_width}]"
                )));
            }
            let mut rng = rng_from_seed(seed);
            (0..*count)
                .map(|_| {
                    let w = rng.gen_range(*min_width..=*max_width);
                    if w > width {
                        return Err(Error::Config(format!(
                            "dead span of width {w} wider than gather ({width})"
                        )));
                    }
                    let start = rng.gen_range(0..=width - w);
                    Ok(start..start + w)
                })
                .collect::<Result<_>>()?
        }
    };
    for span in spans {
        if span.start > span.end || span.end > width {
            return Err(Error::Config(format!(
                "dead span {span:?} does not fit a gather of width {width}"
            )));
        }
        amplitudes.slice_mut(s![.., span.clone()]).fill(0.0);
        for v in &mut picks.valid[span] {
            *v = false;
        }
    }
    Ok((GatherImage::new(amplitudes, first.sample_rate_ms), picks))
}
