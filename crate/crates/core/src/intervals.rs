//! Interval arithmetic, matching ratios and interpolation sampling shared by
//! every pipeline stage.
//!
//! Intervals are real-valued segments in snippet-index coordinates; the
//! conversion from seconds happens at the I/O boundary (see [`crate::dataset`]).
//! Segments are treated as sets of reals, so measure-zero boundary overlaps do
//! not contribute to any ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A temporal segment `[start, end)` with `end > start`, in snippet-index units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalInterval {
    start: f64,
    end: f64,
}

impl TemporalInterval {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::invalid_argument(format!(
                "interval endpoints must be finite, got [{start}, {end}]"
            )));
        }
        if end <= start {
            return Err(Error::invalid_argument(format!(
                "interval end must exceed start, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Length of the overlap with `other`; zero when disjoint.
    pub fn intersection(&self, other: &TemporalInterval) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

/// What a [`Region`] covers relative to an action instance or a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionKind {
    /// The instance itself, `[t_s, t_e]`.
    Action,
    /// A dilated neighborhood of the instance start.
    Start,
    /// A dilated neighborhood of the instance end.
    End,
    /// The one-snippet neighborhood of a temporal location.
    Location,
    /// The interior of a proposal.
    Center,
}

/// A tagged temporal segment used when matching locations and proposals
/// against ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub interval: TemporalInterval,
    pub kind: RegionKind,
}

impl Region {
    pub fn new(start: f64, end: f64, kind: RegionKind) -> Result<Self> {
        Ok(Self {
            interval: TemporalInterval::new(start, end)?,
            kind,
        })
    }
}

/// Intersection over union of two intervals. Symmetric, in `[0, 1]`.
pub fn iou(a: &TemporalInterval, b: &TemporalInterval) -> f64 {
    let inter = a.intersection(b);
    let union = a.duration() + b.duration() - inter;
    inter / union
}

/// Intersection over the duration of `a` ("intersection over proposal").
/// Not symmetric: measures how much of `a` lies inside `g`.
pub fn iop(a: &TemporalInterval, g: &Region) -> f64 {
    a.intersection(&g.interval) / a.duration()
}

/// Samples the piecewise-linear extension of `series` at `n` equally spaced
/// positions spanning `region` (both endpoints included). Query positions are
/// clamped to `[0, len - 1]` before interpolation, so regions may extend past
/// the sequence.
pub fn linear_sample(series: &[f64], region: &TemporalInterval, n: usize) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::invalid_argument(format!(
            "linear_sample needs at least 2 series points, got {}",
            series.len()
        )));
    }
    if n < 2 {
        return Err(Error::invalid_argument(format!(
            "linear_sample needs at least 2 sample points, got {n}"
        )));
    }
    let step = region.duration() / (n - 1) as f64;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let pos = region.start() + k as f64 * step;
        out.push(interpolate_clamped(series, pos));
    }
    Ok(out)
}

/// Piecewise-linear interpolation at `pos`, clamped to the series domain.
pub fn interpolate_clamped(series: &[f64], pos: f64) -> f64 {
    let max_idx = (series.len() - 1) as f64;
    let p = pos.clamp(0.0, max_idx);
    let lo = p.floor() as usize;
    if lo as f64 >= max_idx {
        return series[series.len() - 1];
    }
    let frac = p - lo as f64;
    series[lo] * (1.0 - frac) + series[lo + 1] * frac
}
