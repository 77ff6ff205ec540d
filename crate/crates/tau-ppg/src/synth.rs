//! Seeded synthetic PPG with ground-truth peaks and a controllable SNR.
//!
//! A beat is a systolic bump plus a smaller, delayed diastolic bump, both
//! Gaussian; intervals carry seeded jitter capped so consecutive beats never
//! differ by more than the physiological consistency bound. Band-limited
//! noise is scaled by bisection until the measured SNR hits the requested
//! target, which closes the loop through the same SNR definition used for
//! evaluation.

use crate::error::{Result, TauError};
use crate::fft::{fft_real, ifft_real};
use crate::labeling::PeakSet;
use crate::signal::{peak_rate_bpm, snr, zscore, PpgSegment, BAND_HIGH_HZ, BAND_LOW_HZ};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// One consecutive heartbeat interval may not shift the instantaneous rate
/// by more than this many BPM.
pub const CONSECUTIVE_HR_BOUND_BPM: f64 = 10.0;

/// Specification of one synthetic segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub hr_bpm: f64,
    pub duration_s: f64,
    pub fs: f64,
    /// Standard deviation of the Gaussian interval perturbation, in ms.
    pub hrv_jitter_ms: f64,
    /// `None` renders the clean beat train without added noise.
    pub snr_target_db: Option<f64>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(30.0..=220.0).contains(&self.hr_bpm) {
            return Err(TauError::InvalidArgument(format!(
                "heart rate {} outside 30..220 BPM",
                self.hr_bpm
            )));
        }
        if self.duration_s <= 0.0 || self.fs <= 0.0 {
            return Err(TauError::InvalidArgument("non-positive duration or rate".into()));
        }
        if self.hrv_jitter_ms < 0.0 {
            return Err(TauError::InvalidArgument("negative jitter".into()));
        }
        // keep 4-sigma consecutive swings inside the consistency bound:
        // d(hr)/d(interval_ms) = hr² / 60000
        let cap = CONSECUTIVE_HR_BOUND_BPM * 60_000.0 / (4.0 * self.hr_bpm * self.hr_bpm);
        if self.hrv_jitter_ms > cap {
            return Err(TauError::InvalidArgument(format!(
                "jitter {} ms exceeds the {:.1} ms consistency cap at {} BPM",
                self.hrv_jitter_ms, cap, self.hr_bpm
            )));
        }
        if let Some(db) = self.snr_target_db {
            if db > 50.0 {
                return Err(TauError::InvalidArgument(format!(
                    "SNR target {} dB above the 50 dB clamp",
                    db
                )));
            }
        }
        Ok(())
    }
}

/// Deterministically renders the segment described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<PpgSegment> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = (spec.duration_s * spec.fs).round() as usize;

    let (clean, peaks) = render_beat_train(spec, &mut rng, n)?;
    let clean = zscore(&Tensor::from_vec(clean))?;
    let truth = PeakSet::new(peaks, n)?;
    let ref_hr = peak_rate_bpm(&truth, spec.fs)?;

    let samples = match spec.snr_target_db {
        None => clean,
        Some(target) => {
            let noise = band_limited_noise(&mut rng, n, spec.fs, ref_hr / 60.0);
            let wander = baseline_wander(&mut rng, n, spec.fs);
            fit_noise_scale(&clean, &noise, &wander, spec.fs, ref_hr, target, &truth)?
        }
    };
    let seg = PpgSegment {
        samples,
        fs: spec.fs,
        subject_id: format!("synth-{:016x}", spec.seed),
        truth_peaks: Some(truth),
        ref_hr: Some(ref_hr),
    };
    seg.validate()?;
    Ok(seg)
}

/// Renders the clean two-bump beat train and returns the systolic argmax
/// positions as ground truth.
fn render_beat_train(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let fs = spec.fs;
    let base_ms = 60_000.0 / spec.hr_bpm;
    let jitter = Normal::new(0.0, spec.hrv_jitter_ms.max(1e-9))
        .map_err(|e| TauError::Numeric(format!("jitter distribution: {}", e)))?;

    // beat centers in seconds, jittered under the consecutive-rate cap
    let mut centers = Vec::new();
    let mut t = 0.45 * base_ms / 1000.0;
    let mut prev_ms = base_ms;
    while t < spec.duration_s {
        centers.push(t);
        let mut next_ms = base_ms + jitter.sample(rng);
        for _ in 0..64 {
            let hr_prev = 60_000.0 / prev_ms;
            let hr_next = 60_000.0 / next_ms;
            if (hr_prev - hr_next).abs() < CONSECUTIVE_HR_BOUND_BPM && next_ms > 250.0 {
                break;
            }
            next_ms = base_ms + jitter.sample(rng);
        }
        t += next_ms / 1000.0;
        prev_ms = next_ms;
    }
    if centers.len() < 2 {
        return Err(TauError::InvalidArgument(
            "duration too short for two beats".into(),
        ));
    }

    let mut signal = vec![0.0; n];
    let period_s = base_ms / 1000.0;
    // bump widths set the harmonic content; these leave the fundamental
    // 10 dB or more above the harmonics so even the "clean" +3 dB tier
    // stays reachable by adding noise
    let sys_sigma = 0.16 * period_s;
    let dia_sigma = 0.16 * period_s;
    let dia_delay = 0.37 * period_s;
    let add_bump = |sig: &mut [f64], center_s: f64, amp: f64, sigma: f64| {
        let lo = (((center_s - 4.0 * sigma) * fs).floor().max(0.0)) as usize;
        let hi = ((((center_s + 4.0 * sigma) * fs).ceil()) as usize).min(n);
        for (i, v) in sig.iter_mut().enumerate().take(hi).skip(lo) {
            let dt = i as f64 / fs - center_s;
            *v += amp * (-0.5 * (dt / sigma).powi(2)).exp();
        }
    };
    for &c in &centers {
        add_bump(&mut signal, c, 1.0, sys_sigma);
        add_bump(&mut signal, c + dia_delay, 0.28, dia_sigma);
    }

    // ground truth at the actual local maximum near each systolic center
    let mut peaks = Vec::with_capacity(centers.len());
    let halfwin = (0.15 * period_s * fs).round() as usize;
    for &c in &centers {
        let ci = (c * fs).round() as usize;
        if ci >= n {
            continue;
        }
        let lo = ci.saturating_sub(halfwin);
        let hi = (ci + halfwin + 1).min(n);
        let best = (lo..hi)
            .max_by(|&a, &b| signal[a].total_cmp(&signal[b]))
            .expect("nonempty window");
        if peaks.last() != Some(&best) {
            peaks.push(best);
        }
    }
    Ok((signal, peaks))
}

/// Gaussian noise shaped to 1/sqrt(f) inside the 0.6–8 Hz analysis band.
///
/// The narrow band the SNR measure attributes to the pulse (around
/// `f0_hz`) is notched out, so added noise lowers the measured SNR without
/// ever masquerading as signal; this keeps every target down to the clamp
/// reachable.
fn band_limited_noise(rng: &mut ChaCha8Rng, n: usize, fs: f64, f0_hz: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mut spec = fft_real(&white);
    let df = fs / n as f64;
    let notch = crate::signal::snr_band_halfwidth_hz(n, fs) + df;
    for (k, v) in spec.iter_mut().enumerate() {
        let f = if k <= n / 2 {
            k as f64 * df
        } else {
            (n - k) as f64 * df
        };
        if !(BAND_LOW_HZ..=BAND_HIGH_HZ).contains(&f) || (f - f0_hz).abs() <= notch {
            *v *= 0.0;
        } else {
            *v *= 1.0 / f.sqrt();
        }
    }
    normalize_rms(ifft_real(&mut spec))
}

/// Slow 0.2 Hz oscillation, outside the analysis band.
fn baseline_wander(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    (0..n)
        .map(|i| (std::f64::consts::TAU * 0.2 * i as f64 / fs + phase).sin())
        .collect()
}

fn normalize_rms(mut x: Vec<f64>) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        for v in &mut x {
            *v /= rms;
        }
    }
    x
}

/// Finds the noise amplitude whose measured SNR matches the target within
/// 0.05 dB, by bisection on the log-scale. The wander rides along at 40% of
/// the noise amplitude but lives outside the measured band.
fn fit_noise_scale(
    clean: &Tensor,
    noise: &[f64],
    wander: &[f64],
    fs: f64,
    ref_hr: f64,
    target_db: f64,
    truth: &PeakSet,
) -> Result<Tensor> {
    let compose = |scale: f64| -> Result<Tensor> {
        let data: Vec<f64> = clean
            .data()
            .iter()
            .zip(noise)
            .zip(wander)
            .map(|((c, nz), w)| c + scale * nz + 0.4 * scale * w)
            .collect();
        zscore(&Tensor::from_vec(data))
    };
    let measure = |scale: f64| -> Result<f64> {
        let seg = PpgSegment {
            samples: compose(scale)?,
            fs,
            subject_id: String::new(),
            truth_peaks: Some(truth.clone()),
            ref_hr: Some(ref_hr),
        };
        snr(&seg, ref_hr)
    };

    let clean_db = measure(0.0)?;
    if target_db >= clean_db {
        return Err(TauError::InvalidArgument(format!(
            "SNR target {:.1} dB unreachable: clean signal measures {:.1} dB",
            target_db, clean_db
        )));
    }
    let (mut lo, mut hi) = (1e-4f64, 1e4f64);
    if measure(hi)? > target_db {
        return Err(TauError::Numeric(format!(
            "SNR target {:.1} dB below the reachable floor",
            target_db
        )));
    }
    let mut mid = (lo * hi).sqrt();
    for _ in 0..80 {
        mid = (lo * hi).sqrt();
        let db = measure(mid)?;
        if (db - target_db).abs() < 0.05 {
            break;
        }
        if db > target_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    compose(mid)
}

/// Noise tier of a generated suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Clean,
    Mid,
    Noisy,
}

impl Tier {
    /// Target SNR in dB for segments of this tier.
    pub fn target_db(self) -> f64 {
        match self {
            Tier::Clean => 3.0,
            Tier::Mid => -7.0,
            Tier::Noisy => -12.7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Clean => "clean",
            Tier::Mid => "mid",
            Tier::Noisy => "noisy",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = TauError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Tier::Clean),
            "mid" => Ok(Tier::Mid),
            "noisy" => Ok(Tier::Noisy),
            other => Err(TauError::InvalidArgument(format!("unknown tier '{}'", other))),
        }
    }
}

/// Generates `count` ten-second segments at 100 Hz with heart rates drawn
/// uniformly from 45–180 BPM. Per-segment seeds derive from `seed`, so the
/// suite is reproducible and segments are independent.
pub fn generate_suite(tier: Tier, count: usize, seed: u64) -> Result<Vec<PpgSegment>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_0000_0001);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let hr = rng.random_range(45.0..180.0);
        // jitter under the consistency cap with margin at high rates
        let cap = CONSECUTIVE_HR_BOUND_BPM * 60_000.0 / (4.0 * hr * hr);
        let spec = SynthSpec {
            hr_bpm: hr,
            duration_s: 10.0,
            fs: 100.0,
            hrv_jitter_ms: (0.6 * cap).min(15.0),
            snr_target_db: Some(tier.target_db()),
            seed: seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add(i as u64),
        };
        let mut seg = generate(&spec)?;
        seg.subject_id = format!("{}-{:03}", tier.name(), i);
        out.push(seg);
    }
    Ok(out)
}
