//! Frequency readout from level-crossing events.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Quality of a per-node frequency estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    /// Three or more crossings in the window.
    Ok,
    /// Fewer than two crossings; frequency reported as 0.
    NonOscillating,
    /// Exactly two crossings; a single interval.
    LowConfidence,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Ok => "ok",
            NodeStatus::NonOscillating => "non_oscillating",
            NodeStatus::LowConfidence => "low_confidence",
        }
    }

    /// Whether the node carries a usable frequency for segmentation.
    pub fn oscillates(self) -> bool {
        !matches!(self, NodeStatus::NonOscillating)
    }
}

impl std::str::FromStr for NodeStatus {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(NodeStatus::Ok),
            "non_oscillating" => Ok(NodeStatus::NonOscillating),
            "low_confidence" => Ok(NodeStatus::LowConfidence),
            other => Err(ConfigError::invalid("flag", format!("unknown node status `{other}`"))),
        }
    }
}

/// Per-oscillator frequency estimates (AU⁻¹), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMap {
    width: usize,
    height: usize,
    freqs: Vec<f64>,
    flags: Vec<NodeStatus>,
}

impl FrequencyMap {
    pub fn new(width: usize, height: usize, freqs: Vec<f64>, flags: Vec<NodeStatus>) -> Result<Self, ConfigError> {
        if freqs.len() != width * height || flags.len() != freqs.len() {
            return Err(ConfigError::invalid("frequency map", "length does not match dimensions"));
        }
        for (f, s) in freqs.iter().zip(&flags) {
            if !f.is_finite() || *f < 0.0 {
                return Err(ConfigError::invalid("frequency map", format!("invalid frequency {f}")));
            }
            if *s == NodeStatus::NonOscillating && *f != 0.0 {
                return Err(ConfigError::invalid("frequency map", "non-oscillating node with nonzero frequency"));
            }
        }
        Ok(Self { width, height, freqs, flags })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn flags(&self) -> &[NodeStatus] {
        &self.flags
    }

    pub fn get(&self, row: usize, col: usize) -> (f64, NodeStatus) {
        let i = row * self.width + col;
        (self.freqs[i], self.flags[i])
    }

    /// Frequencies of nodes whose status is [`NodeStatus::Ok`].
    pub fn ok_freqs(&self) -> impl Iterator<Item = f64> + '_ {
        self.freqs.iter().zip(&self.flags).filter(|(_, s)| **s == NodeStatus::Ok).map(|(f, _)| *f)
    }

    /// Max minus min over OK nodes, or `None` if there are none.
    pub fn ok_spread(&self) -> Option<f64> {
        let (lo, hi) = self
            .ok_freqs()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f), hi.max(f)));
        (lo <= hi).then_some(hi - lo)
    }

    /// Mean frequency over oscillating nodes, or `None` if there are none.
    pub fn mean_frequency(&self) -> Option<f64> {
        let (sum, n) = self
            .freqs
            .iter()
            .zip(&self.flags)
            .filter(|(_, s)| s.oscillates())
            .fold((0.0, 0usize), |(sum, n), (f, _)| (sum + f, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn count(&self, status: NodeStatus) -> usize {
        self.flags.iter().filter(|s| **s == status).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for (f, s) in out.freqs.chunks_mut(self.width).zip(out.flags.chunks_mut(self.width)) {
            f.reverse();
            s.reverse();
        }
        out
    }

    /// CSV encoding:
    ///
    /// ```text
    /// width,height
    /// <w>,<h>
    /// row,col,freq,flag
    /// 0,0,0.4123,ok
    /// ...
    /// ```
    ///
    /// Frequencies use Rust's shortest round-trip formatting, so parsing the
    /// output reproduces the map exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.freqs.len() + 64);
        let _ = writeln!(out, "width,height\n{},{}\nrow,col,freq,flag", self.width, self.height);
        for (i, (f, s)) in self.freqs.iter().zip(&self.flags).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", i / self.width, i % self.width, f, s.as_str());
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ConfigError> {
        let bad = |msg: &str| ConfigError::invalid("frequency csv", msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("width,height") {
            return Err(bad("missing `width,height` header"));
        }
        let dims = lines.next().ok_or_else(|| bad("missing dimensions"))?;
        let (w, h) = dims.split_once(',').ok_or_else(|| bad("bad dimensions line"))?;
        let width: usize = w.trim().parse().map_err(|_| bad("bad width"))?;
        let height: usize = h.trim().parse().map_err(|_| bad("bad height"))?;
        if lines.next() != Some("row,col,freq,flag") {
            return Err(bad("missing `row,col,freq,flag` header"));
        }
        let n = width * height;
        let mut freqs = vec![f64::NAN; n];
        let mut flags = vec![NodeStatus::NonOscillating; n];
        let mut seen = 0usize;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            let [row, col, freq, flag] = fields[..] else {
                return Err(bad("expected 4 fields"));
            };
            let row: usize = row.parse().map_err(|_| bad("bad row"))?;
            let col: usize = col.parse().map_err(|_| bad("bad col"))?;
            if row >= height || col >= width {
                return Err(bad("coordinate out of range"));
            }
            freqs[row * width + col] = freq.parse().map_err(|_| bad("bad freq"))?;
            flags[row * width + col] = flag.parse()?;
            seen += 1;
        }
        if seen != n {
            return Err(bad("wrong number of rows"));
        }
        Self::new(width, height, freqs, flags)
    }
}

/// Time of an upward crossing of `level` between two consecutive samples,
/// linearly interpolated. Returns `None` for downward or absent crossings.
#[inline]
pub fn crossing_detector(level: f64, prev: f64, next: f64, t_prev: f64, t_next: f64) -> Option<f64> {
    if prev < level && next >= level {
        Some(t_prev + (t_next - t_prev) * (level - prev) / (next - prev))
    } else {
        None
    }
}

/// Frequency from upward-crossing times inside `[t_start, t_end]`.
///
/// With `k` events the estimate is `(k - 1) / (t_k - t_1)`. Fewer than two
/// events is `NonOscillating` (frequency 0); exactly two is `LowConfidence`.
pub fn estimate_frequency(event_times: &[f64], window: (f64, f64)) -> (f64, NodeStatus) {
    let (t_start, t_end) = window;
    let lo = event_times.partition_point(|&t| t < t_start);
    let hi = event_times.partition_point(|&t| t <= t_end);
    let inside = &event_times[lo..hi.max(lo)];
    match inside.len() {
        0 | 1 => (0.0, NodeStatus::NonOscillating),
        k => {
            let span = inside[k - 1] - inside[0];
            if span <= 0.0 {
                return (0.0, NodeStatus::NonOscillating);
            }
            let status = if k == 2 { NodeStatus::LowConfidence } else { NodeStatus::Ok };
            ((k - 1) as f64 / span, status)
        }
    }
}

/// Equal-width histogram over oscillating frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    /// Set when every counted frequency is identical (or there are none);
    /// `counts` then has a single bin.
    pub degenerate: bool,
}

impl FrequencyHistogram {
    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }
}

/// Histogram of the OK-flagged frequencies with `bins` equal-width bins
/// spanning their `[min, max]`.
pub fn frequency_histogram(map: &FrequencyMap, bins: usize) -> Result<FrequencyHistogram, ConfigError> {
    if bins < 2 {
        return Err(ConfigError::invalid("bins", "must be >= 2"));
    }
    let values: Vec<f64> = map.ok_freqs().collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo == hi {
        let lo = if values.is_empty() { 0.0 } else { lo };
        return Ok(FrequencyHistogram { lo, hi: lo, counts: vec![values.len()], degenerate: true });
    }
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[bin_index(v, lo, hi, bins)] += 1;
    }
    Ok(FrequencyHistogram { lo, hi, counts, degenerate: false })
}

/// Bin of `v` among `bins` equal-width bins over `[lo, hi]`; `hi` falls in
/// the last bin.
#[inline]
pub(crate) fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let idx = ((v - lo) / (hi - lo) * bins as f64).floor();
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(bins - 1)
    }
}
