//! Time-domain signal-processing peak detectors used for comparison.
//!
//! All four operate on a single preprocessed segment and return strictly
//! increasing sample indices. They are deterministic and never fail; a
//! segment without usable structure simply yields an empty set.

use crate::error::{Result, TauError};
use crate::fft::analytic_envelope;
use crate::labeling::PeakSet;
use crate::signal::PpgSegment;

/// Detector selection plus the window constants, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Envelope / moving-average window for the adaptive and moving-average
    /// detectors.
    pub smooth_window_s: f64,
    /// Short moving-average window (systolic duration).
    pub peak_window_s: f64,
    /// Long moving-average window (beat duration).
    pub beat_window_s: f64,
    /// Offset multiplier applied on top of the slow moving average.
    pub threshold_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    AdaptiveThreshold,
    Hilbert,
    HeartPy,
    Elgendi,
}

impl std::str::FromStr for BaselineMethod {
    type Err = TauError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::AdaptiveThreshold),
            "hilbert" => Ok(Self::Hilbert),
            "heartpy" => Ok(Self::HeartPy),
            "elgendi" => Ok(Self::Elgendi),
            other => Err(TauError::InvalidArgument(format!(
                "unknown detector '{}'",
                other
            ))),
        }
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: BaselineMethod::Elgendi,
            smooth_window_s: 0.75,
            // systolic-width and beat-width constants of the two-moving-average scheme
            peak_window_s: 0.111,
            beat_window_s: 0.667,
            threshold_scale: 0.02,
        }
    }
}

impl BaselineConfig {
    pub fn for_method(method: BaselineMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn detect(&self, segment: &PpgSegment) -> Result<PeakSet> {
        match self.method {
            BaselineMethod::AdaptiveThreshold => adaptive_threshold_detect(segment, self),
            BaselineMethod::Hilbert => hilbert_detect(segment),
            BaselineMethod::HeartPy => heartpy_detect(segment, self),
            BaselineMethod::Elgendi => elgendi_detect(segment, self),
        }
    }
}

/// Detects peaks with the default configuration of `method`.
pub fn detect_with(method: BaselineMethod, segment: &PpgSegment) -> Result<PeakSet> {
    BaselineConfig::for_method(method).detect(segment)
}

// ---- shared helpers ----------------------------------------------------------

/// Centered moving average with edge shrinkage.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Windowed max minus windowed min around each sample.
fn local_range(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mut mx = f64::MIN;
            let mut mn = f64::MAX;
            for &v in &x[lo..hi] {
                mx = mx.max(v);
                mn = mn.min(v);
            }
            mx - mn
        })
        .collect()
}

/// Strict interior local maxima.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if x[i] > x[i - 1] && x[i] > x[i + 1] {
            out.push(i);
        }
    }
    out
}

/// Keeps at most one candidate per refractory window, preferring amplitude.
fn enforce_min_distance(candidates: &[usize], x: &[f64], min_dist: usize) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for &c in candidates {
        match kept.last() {
            Some(&last) if c - last < min_dist => {
                if x[c] > x[last] {
                    *kept.last_mut().unwrap() = c;
                }
            }
            _ => kept.push(c),
        }
    }
    kept
}

/// Argmax of `x` within each maximal run where `mask` holds, provided the
/// run is at least `min_len` long. Earliest index wins ties.
fn argmax_per_region(x: &[f64], mask: impl Fn(usize) -> bool, min_len: usize) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut start: Option<usize> = None;
    let n = x.len();
    for i in 0..=n {
        let inside = i < n && mask(i);
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_len {
                    let best = (s..i).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
                    peaks.push(best);
                }
                start = None;
            }
            _ => {}
        }
    }
    peaks
}

// ---- detectors ----------------------------------------------------------------

/// Adaptive threshold: a moving average of the local max-min envelope sets
/// a per-sample acceptance level; local maxima rising far enough above the
/// local mean pass.
pub fn adaptive_threshold_detect(segment: &PpgSegment, cfg: &BaselineConfig) -> Result<PeakSet> {
    segment.validate()?;
    let x = segment.samples.data();
    let n = x.len();
    let w = ((cfg.smooth_window_s * segment.fs).round() as usize).max(3);
    let envelope = moving_average(&local_range(x, w), w);
    let center = moving_average(x, w);
    let candidates: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&i| x[i] > center[i] + 0.25 * envelope[i])
        .collect();
    let min_dist = ((60.0 / 220.0) * segment.fs).round() as usize;
    PeakSet::new(enforce_min_distance(&candidates, x, min_dist.max(1)), n)
}

/// Two moving averages over the squared clipped signal: where the short
/// (systolic-width) average exceeds the long (beat-width) average plus an
/// offset, the block is a region of interest and its amplitude argmax is
/// the peak.
pub fn elgendi_detect(segment: &PpgSegment, cfg: &BaselineConfig) -> Result<PeakSet> {
    segment.validate()?;
    let x = segment.samples.data();
    let n = x.len();
    let squared: Vec<f64> = x.iter().map(|&v| if v > 0.0 { v * v } else { 0.0 }).collect();
    let w1 = ((cfg.peak_window_s * segment.fs).round() as usize).max(1);
    let w2 = ((cfg.beat_window_s * segment.fs).round() as usize).max(w1 + 1);
    let ma_peak = moving_average(&squared, w1);
    let ma_beat = moving_average(&squared, w2);
    let z_mean = squared.iter().sum::<f64>() / n as f64;
    let offset = cfg.threshold_scale * z_mean;
    let peaks = argmax_per_region(x, |i| ma_peak[i] > ma_beat[i] + offset, w1);
    PeakSet::new(peaks, n)
}

/// Analytic-signal envelope of the second derivative marks regions of
/// interest; the raw signal's local maxima within them are the peaks.
pub fn hilbert_detect(segment: &PpgSegment) -> Result<PeakSet> {
    segment.validate()?;
    let x = segment.samples.data();
    let n = x.len();
    if n < 5 {
        return Ok(PeakSet::empty(n));
    }
    let mut d2 = vec![0.0; n];
    for i in 1..n - 1 {
        d2[i] = x[i + 1] - 2.0 * x[i] + x[i - 1];
    }
    let env = analytic_envelope(&d2)?;
    let mean_env = env.iter().sum::<f64>() / n as f64;
    if mean_env <= f64::EPSILON {
        return Ok(PeakSet::empty(n));
    }
    let min_len = ((0.05 * segment.fs).round() as usize).max(1);
    let regions = argmax_per_region(x, |i| env[i] > mean_env, min_len);
    let min_dist = ((60.0 / 220.0) * segment.fs).round() as usize;
    PeakSet::new(enforce_min_distance(&regions, x, min_dist.max(1)), n)
}

/// Moving-average threshold with an elevation sweep: of the candidate
/// elevations, the one minimizing the variance of the resulting
/// peak-to-peak intervals wins.
pub fn heartpy_detect(segment: &PpgSegment, cfg: &BaselineConfig) -> Result<PeakSet> {
    segment.validate()?;
    let x = segment.samples.data();
    let n = x.len();
    let min = x.iter().cloned().fold(f64::MAX, f64::min);
    let shifted: Vec<f64> = x.iter().map(|&v| v - min).collect();
    let w = ((cfg.smooth_window_s * segment.fs).round() as usize).max(3);
    let ma = moving_average(&shifted, w);
    let ma_amp = ma.iter().sum::<f64>() / n as f64;
    if ma_amp <= f64::EPSILON {
        return Ok(PeakSet::empty(n));
    }
    let min_len = ((0.04 * segment.fs).round() as usize).max(1);

    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for step in 1..=15u32 {
        let elevation = 0.1 * step as f64 * ma_amp;
        let peaks = argmax_per_region(&shifted, |i| shifted[i] > ma[i] + elevation, min_len);
        let score = if peaks.len() >= 3 {
            let intervals: Vec<f64> = peaks.windows(2).map(|p| (p[1] - p[0]) as f64).collect();
            let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
            intervals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / intervals.len() as f64
        } else {
            f64::MAX
        };
        let better = match &best {
            None => true,
            Some((s, len, _)) => {
                score < *s || (score == *s && peaks.len() > *len)
            }
        };
        if better {
            best = Some((score, peaks.len(), peaks));
        }
    }
    let peaks = best.map(|(_, _, p)| p).unwrap_or_default();
    PeakSet::new(peaks, n)
}
