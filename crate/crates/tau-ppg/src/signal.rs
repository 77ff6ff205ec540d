//! Preprocessing of raw PPG into model-ready segments, plus the SNR measure.
//!
//! The pipeline mirrors the evaluation conditions: resample to a common
//! rate, 4th-order Butterworth bandpass 0.6–8 Hz applied forward-backward
//! (zero phase, so peak positions do not shift), z-score, then windowing.

use crate::error::{Result, TauError};
use crate::fft::raw_periodogram;
use crate::labeling::PeakSet;
use crate::tensor::Tensor;
use rustfft::num_complex::Complex;
use std::f64::consts::PI;

/// Passband of the analysis filter in Hz.
pub const BAND_LOW_HZ: f64 = 0.6;
pub const BAND_HIGH_HZ: f64 = 8.0;

/// One windowed PPG segment with optional ground truth.
#[derive(Debug, Clone)]
pub struct PpgSegment {
    /// Normalized amplitude samples.
    pub samples: Tensor,
    /// Sampling rate in Hz.
    pub fs: f64,
    pub subject_id: String,
    pub truth_peaks: Option<PeakSet>,
    /// Reference heart rate in BPM.
    pub ref_hr: Option<f64>,
}

impl PpgSegment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.samples.check_finite("segment samples")?;
        if self.fs <= 0.0 {
            return Err(TauError::InvalidArgument("non-positive sampling rate".into()));
        }
        if let Some(p) = &self.truth_peaks {
            if p.resolution_n() != self.len() {
                return Err(TauError::InvalidArgument(format!(
                    "truth peaks tagged for length {} on a segment of {} samples",
                    p.resolution_n(),
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

// ---- resampling -------------------------------------------------------------

/// Linear resampling to a new rate. Output length is
/// `round(N·fs_out/fs_in)`; sample `j` reads the input at time `j/fs_out`
/// (clamped). Downsampling by more than 2× low-passes first to avoid
/// aliasing.
pub fn resample(samples: &Tensor, fs_in: f64, fs_out: f64) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(TauError::InvalidArgument("resample of empty signal".into()));
    }
    if fs_in <= 0.0 || fs_out <= 0.0 {
        return Err(TauError::InvalidArgument("non-positive sampling rate".into()));
    }
    if (fs_in - fs_out).abs() < 1e-12 {
        return Ok(samples.clone());
    }
    let filtered;
    let src = if fs_out < fs_in / 2.0 {
        // de-mean before filtering so the edge transient scales with the
        // signal's variation, not its offset; the mean passes the lowpass
        // unchanged and is re-added
        let lp = SosFilter::butter_lowpass(4, 0.45 * fs_out, fs_in)?;
        let mean = samples.mean();
        let centered: Vec<f64> = samples.data().iter().map(|v| v - mean).collect();
        let mut y = lp.filtfilt(&centered)?;
        for v in &mut y {
            *v += mean;
        }
        filtered = y;
        &filtered
    } else {
        samples.data()
    };
    let n = src.len();
    let m = (n as f64 * fs_out / fs_in).round() as usize;
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let pos = (j as f64 * fs_in / fs_out).clamp(0.0, (n - 1) as f64);
        let i0 = (pos.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let f = pos - i0 as f64;
        out.push((1.0 - f) * src[i0] + f * src[i1]);
    }
    Ok(Tensor::from_vec(out))
}

// ---- Butterworth design -------------------------------------------------------

/// Cascaded biquads (second-order sections), filtered in Direct Form II
/// transposed. Designed from the analog Butterworth prototype through the
/// bilinear transform with frequency prewarping.
#[derive(Debug, Clone)]
pub struct SosFilter {
    /// (b0, b1, b2, a1, a2) per section, a0 normalized to 1.
    sections: Vec<(f64, f64, f64, f64, f64)>,
}

impl SosFilter {
    /// Bandpass of prototype order `order` (so `2·order` poles).
    pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        if !(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
            return Err(TauError::InvalidArgument(format!(
                "bandpass {}..{} Hz impossible at fs {}",
                low_hz, high_hz, fs
            )));
        }
        let fs2 = 2.0 * fs;
        let w1 = fs2 * (PI * low_hz / fs).tan();
        let w2 = fs2 * (PI * high_hz / fs).tan();
        let bw = w2 - w1;
        let w0 = (w1 * w2).sqrt();

        // lowpass prototype -> bandpass: each pole splits into two
        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let b = p * (0.5 * bw);
            let disc = (b * b - Complex::new(w0 * w0, 0.0)).sqrt();
            poles.push(b + disc);
            poles.push(b - disc);
        }
        // analog zeros: `order` at s=0; gain bw^order
        let zeros = vec![Complex::new(0.0, 0.0); order];
        let gain = bw.powi(order as i32);
        Self::from_analog(zeros, poles, gain, fs2)
    }

    /// Lowpass of the given order; used for anti-alias filtering.
    pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self> {
        if !(0.0 < cutoff_hz && cutoff_hz < fs / 2.0) {
            return Err(TauError::InvalidArgument(format!(
                "lowpass at {} Hz impossible at fs {}",
                cutoff_hz, fs
            )));
        }
        let fs2 = 2.0 * fs;
        let wc = fs2 * (PI * cutoff_hz / fs).tan();
        let poles: Vec<Complex<f64>> = prototype_poles(order).into_iter().map(|p| p * wc).collect();
        let gain = wc.powi(order as i32);
        Self::from_analog(Vec::new(), poles, gain, fs2)
    }

    /// Bilinear transform of an analog zero/pole/gain design, then pairing
    /// into second-order sections.
    fn from_analog(
        zeros: Vec<Complex<f64>>,
        poles: Vec<Complex<f64>>,
        gain: f64,
        fs2: f64,
    ) -> Result<Self> {
        let degree = poles.len() - zeros.len();
        let map = |s: Complex<f64>| (Complex::new(fs2, 0.0) + s) / (Complex::new(fs2, 0.0) - s);
        let mut num = Complex::new(1.0, 0.0);
        for z in &zeros {
            num *= Complex::new(fs2, 0.0) - z;
        }
        let mut den = Complex::new(1.0, 0.0);
        for p in &poles {
            den *= Complex::new(fs2, 0.0) - p;
        }
        let k_digital = gain * (num / den).re;
        let mut zd: Vec<Complex<f64>> = zeros.iter().map(|&z| map(z)).collect();
        zd.extend(std::iter::repeat(Complex::new(-1.0, 0.0)).take(degree));
        let pd: Vec<Complex<f64>> = poles.iter().map(|&p| map(p)).collect();

        let pole_pairs = conjugate_pairs(pd)?;
        let zero_pairs = conjugate_pairs(zd)?;
        if pole_pairs.len() != zero_pairs.len() {
            return Err(TauError::Numeric("unbalanced filter sections".into()));
        }
        let nsec = pole_pairs.len();
        let gsec = k_digital.abs().powf(1.0 / nsec as f64);
        let gsign = if k_digital < 0.0 { -1.0 } else { 1.0 };
        let mut sections = Vec::with_capacity(nsec);
        for (i, ((p1, p2), (z1, z2))) in pole_pairs.into_iter().zip(zero_pairs).enumerate() {
            let a1 = -(p1 + p2).re;
            let a2 = (p1 * p2).re;
            let sign = if i == 0 { gsign } else { 1.0 };
            let b0 = gsec * sign;
            let b1 = gsec * sign * -(z1 + z2).re;
            let b2 = gsec * sign * (z1 * z2).re;
            sections.push((b0, b1, b2, a1, a2));
        }
        Ok(Self { sections })
    }

    /// Single forward pass.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for &(b0, b1, b2, a1, a2) in &self.sections {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in &mut y {
                let xin = *v;
                let out = b0 * xin + s1;
                s1 = b1 * xin - a1 * out + s2;
                s2 = b2 * xin - a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Forward-backward (zero-phase) filtering with odd-reflection padding
    /// long enough to absorb the low-frequency edge transient.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < 2 {
            return Err(TauError::InvalidArgument("filtfilt needs >= 2 samples".into()));
        }
        let pad = (n - 1).min(3 * 10 * (2 * self.sections.len() + 1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        let out: Vec<f64> = y[pad..pad + n].to_vec();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(TauError::NonFinite("filtfilt output".into()));
        }
        Ok(out)
    }

    /// Magnitude of the frequency response at `freq_hz`; independent of the
    /// time-domain path, which makes it usable as a test oracle.
    pub fn magnitude_at(&self, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        let z1 = Complex::new(0.0, -w).exp();
        let z2 = Complex::new(0.0, -2.0 * w).exp();
        let mut h = Complex::new(1.0, 0.0);
        for &(b0, b1, b2, a1, a2) in &self.sections {
            h *= (Complex::new(b0, 0.0) + b1 * z1 + b2 * z2)
                / (Complex::new(1.0, 0.0) + a1 * z1 + a2 * z2);
        }
        h.norm()
    }
}

fn prototype_poles(order: usize) -> Vec<Complex<f64>> {
    (1..=order)
        .map(|k| {
            let theta = PI * (2 * k + order - 1) as f64 / (2 * order) as f64;
            Complex::new(theta.cos(), theta.sin())
        })
        .collect()
}

/// Groups roots into conjugate (or real) pairs for biquad construction.
fn conjugate_pairs(
    mut roots: Vec<Complex<f64>>,
) -> Result<Vec<(Complex<f64>, Complex<f64>)>> {
    if roots.len() % 2 != 0 {
        return Err(TauError::Numeric("odd root count cannot form biquads".into()));
    }
    let mut pairs = Vec::with_capacity(roots.len() / 2);
    while let Some(r) = roots.pop() {
        let want = r.conj();
        let (best, _) = roots
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (c - want).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| TauError::Numeric("unpaired filter root".into()))?;
        let mate = roots.swap_remove(best);
        pairs.push((r, mate));
    }
    Ok(pairs)
}

/// Zero-phase 4th-order Butterworth bandpass over the 0.6–8 Hz analysis band.
pub fn bandpass(samples: &Tensor, fs: f64) -> Result<Tensor> {
    if fs <= 2.0 * BAND_HIGH_HZ {
        return Err(TauError::InvalidArgument(format!(
            "bandpass needs fs > {} Hz, got {}",
            2.0 * BAND_HIGH_HZ,
            fs
        )));
    }
    let filt = SosFilter::butter_bandpass(4, BAND_LOW_HZ, BAND_HIGH_HZ, fs)?;
    // the passband excludes DC, so the mean can be dropped up front; this
    // keeps the reflection-padding transient proportional to the signal's
    // variation rather than its offset
    let mean = samples.mean();
    let centered: Vec<f64> = samples.data().iter().map(|v| v - mean).collect();
    Ok(Tensor::from_vec(filt.filtfilt(&centered)?))
}

// ---- normalization / segmentation -------------------------------------------

/// Z-score normalization with the population standard deviation.
pub fn zscore(samples: &Tensor) -> Result<Tensor> {
    let mean = samples.mean();
    let std = samples.std_pop();
    if std <= 1e-12 {
        return Err(TauError::InvalidArgument(
            "z-score of (near-)constant signal".into(),
        ));
    }
    Ok(samples.map(|v| (v - mean) / std))
}

/// Cuts a signal into fixed windows. The stride is
/// `(window_s − overlap_s)·fs`; an incomplete tail is discarded.
pub fn segment(
    samples: &Tensor,
    fs: f64,
    window_s: f64,
    overlap_s: f64,
) -> Result<Vec<PpgSegment>> {
    let (window, stride) = window_stride(fs, window_s, overlap_s)?;
    if samples.len() < window {
        return Err(TauError::InvalidArgument(format!(
            "signal of {} samples is shorter than one {}-sample window",
            samples.len(),
            window
        )));
    }
    let count = (samples.len() - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        out.push(PpgSegment {
            samples: Tensor::from_vec(samples.data()[start..start + window].to_vec()),
            fs,
            subject_id: String::new(),
            truth_peaks: None,
            ref_hr: None,
        });
    }
    Ok(out)
}

/// Window/stride in samples for a window/overlap given in seconds.
pub fn window_stride(fs: f64, window_s: f64, overlap_s: f64) -> Result<(usize, usize)> {
    if fs <= 0.0 || window_s <= 0.0 {
        return Err(TauError::InvalidArgument("non-positive window or rate".into()));
    }
    if overlap_s < 0.0 || overlap_s >= window_s {
        return Err(TauError::InvalidArgument(format!(
            "overlap {}s must satisfy 0 <= overlap < window {}s",
            overlap_s, window_s
        )));
    }
    let window = (window_s * fs).round() as usize;
    let stride = ((window_s - overlap_s) * fs).round() as usize;
    if window == 0 || stride == 0 {
        return Err(TauError::InvalidArgument("window or stride rounds to zero".into()));
    }
    Ok((window, stride))
}

/// Segments a recording and carries subject id, truth peaks, and reference
/// HR into each window. Peaks landing inside a window are re-based to it.
pub fn segment_record(
    samples: &Tensor,
    fs: f64,
    subject_id: &str,
    truth_peaks: Option<&PeakSet>,
    window_s: f64,
    overlap_s: f64,
) -> Result<Vec<PpgSegment>> {
    let (window, _) = window_stride(fs, window_s, overlap_s)?;
    let mut segments = segment(samples, fs, window_s, overlap_s)?;
    let stride = ((window_s - overlap_s) * fs).round() as usize;
    for (w, seg) in segments.iter_mut().enumerate() {
        let start = w * stride;
        seg.subject_id = format!("{}-w{:04}", subject_id, w);
        if let Some(peaks) = truth_peaks {
            let local: Vec<usize> = peaks
                .indices()
                .iter()
                .filter(|&&p| p >= start && p < start + window)
                .map(|&p| p - start)
                .collect();
            if !local.is_empty() {
                let ps = PeakSet::new(local, window)?;
                seg.ref_hr = peak_rate_bpm(&ps, fs).ok();
                seg.truth_peaks = Some(ps);
            }
        }
    }
    Ok(segments)
}

/// Heart rate from a peak set: `60·fs·(count−1)/(last−first)`.
pub fn peak_rate_bpm(peaks: &PeakSet, fs: f64) -> Result<f64> {
    let idx = peaks.indices();
    if idx.len() < 2 {
        return Err(TauError::InsufficientPeaks);
    }
    let span = (idx[idx.len() - 1] - idx[0]) as f64;
    Ok(60.0 * fs * (idx.len() - 1) as f64 / span)
}

// ---- SNR ---------------------------------------------------------------------

/// Signal-to-noise ratio of a segment against a known heart rate, in dB,
/// clamped to ±50.
///
/// Signal power is the raw periodogram mass in a 1/12 Hz band centered on
/// the heart-rate frequency (always including the bin nearest that
/// frequency, so coarse spectral grids stay measurable); noise power is the
/// rest of the 0.6–8 Hz analysis band. Harmonics of the pulse therefore
/// count as "noise", which is what makes even clean recordings sit only a
/// few dB above zero.
pub fn snr(segment: &PpgSegment, true_hr: f64) -> Result<f64> {
    if !(30.0..=240.0).contains(&true_hr) {
        return Err(TauError::InvalidArgument(format!(
            "true heart rate {} BPM outside 30..240",
            true_hr
        )));
    }
    segment.validate()?;
    let (freqs, power) = raw_periodogram(segment.samples.data(), segment.fs);
    let f0 = true_hr / 60.0;
    let half = snr_band_halfwidth_hz(segment.len(), segment.fs);

    let nearest = freqs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - f0).abs().total_cmp(&(b.1 - f0).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let mut p_signal = 0.0;
    let mut p_noise = 0.0;
    for (i, (&f, &p)) in freqs.iter().zip(power.iter()).enumerate() {
        let in_band = i == nearest || (f - f0).abs() <= half;
        if in_band {
            p_signal += p;
        } else if (BAND_LOW_HZ..=BAND_HIGH_HZ).contains(&f) {
            p_noise += p;
        }
    }
    let db = 10.0 * (p_signal / p_noise).log10();
    if db.is_nan() {
        return Ok(-50.0);
    }
    Ok(db.clamp(-50.0, 50.0))
}

/// Half-width of the heart-rate band used by [`snr`], in Hz: the nominal
/// ±1/24 Hz (2.5 BPM) widened to one spectral bin when the segment is too
/// short to resolve the nominal band, so the pulse's main lobe is counted
/// as signal rather than leaking into the noise estimate.
pub fn snr_band_halfwidth_hz(n: usize, fs: f64) -> f64 {
    (1.0 / 24.0f64).max(fs / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Tensor {
        Tensor::from_vec(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin())
                .collect(),
        )
    }

    #[test]
    fn resample_identity_when_rates_match() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(resample(&x, 50.0, 50.0).unwrap().data(), x.data());
    }

    #[test]
    fn resample_hand_example() {
        // [0,1] at 1 Hz -> 2 Hz: length round(2*2)=4, tail clamped
        let x = Tensor::from_vec(vec![0.0, 1.0]);
        let y = resample(&x, 1.0, 2.0).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn resample_keeps_constants() {
        let x = Tensor::from_vec(vec![2.5; 700]);
        for fs_out in [100.0, 32.0, 250.0] {
            let y = resample(&x, 700.0, fs_out).unwrap();
            for v in y.data() {
                assert!((v - 2.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resample_rejects_bad_input() {
        assert!(resample(&Tensor::from_vec(vec![]), 1.0, 2.0).is_err());
        assert!(resample(&Tensor::from_vec(vec![1.0]), 0.0, 2.0).is_err());
    }

    #[test]
    fn bandpass_removes_dc() {
        let x = Tensor::from_vec(vec![5.0; 1000]);
        let y = bandpass(&x, 100.0).unwrap();
        // trim the edges where the reflection transient lives
        let core = &y.data()[200..800];
        let max = core.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-3, "residual DC {}", max);
    }

    #[test]
    fn bandpass_passband_amplitude_matches_designed_response() {
        let fs = 100.0;
        let x = sine(2.0, fs, 1000, 1.0);
        let y = bandpass(&x, fs).unwrap();
        let filt = SosFilter::butter_bandpass(4, BAND_LOW_HZ, BAND_HIGH_HZ, fs).unwrap();
        // forward-backward squares the magnitude response
        let expected = filt.magnitude_at(2.0, fs).powi(2);
        let core = &y.data()[300..700];
        let amp = core.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            (amp - expected).abs() < 0.02 && (0.98..=1.02).contains(&amp),
            "amplitude {} vs designed {}",
            amp,
            expected
        );
    }

    #[test]
    fn bandpass_attenuates_below_band() {
        let fs = 100.0;
        let filt = SosFilter::butter_bandpass(4, BAND_LOW_HZ, BAND_HIGH_HZ, fs).unwrap();
        // two-pass attenuation at 0.1 Hz must exceed 20 dB
        let two_pass_db = -20.0 * filt.magnitude_at(0.1, fs).log10() * 2.0;
        assert!(two_pass_db > 20.0, "only {} dB", two_pass_db);
        let x = sine(0.1, fs, 4000, 1.0);
        let y = filt.filtfilt(x.data()).unwrap();
        let core = &y[1000..3000];
        let amp = core.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(amp < 0.1, "leak {}", amp);
    }

    #[test]
    fn bandpass_is_zero_phase_on_passband_sine() {
        let fs = 100.0;
        let x = sine(1.5, fs, 2000, 1.0);
        let y = bandpass(&x, fs).unwrap();
        // cross-correlation over lags -5..5 peaks at lag 0
        let core = 500..1500;
        let mut best = (0i64, f64::MIN);
        for lag in -5i64..=5 {
            let mut c = 0.0;
            for i in core.clone() {
                let j = i as i64 + lag;
                c += x.data()[i] * y.data()[j as usize];
            }
            if c > best.1 {
                best = (lag, c);
            }
        }
        assert_eq!(best.0, 0);
    }

    #[test]
    fn bandpass_rejects_low_rate() {
        assert!(bandpass(&Tensor::from_vec(vec![0.0; 100]), 16.0).is_err());
    }

    #[test]
    fn zscore_closed_form() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let y = zscore(&x).unwrap();
        let expect = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(zscore(&Tensor::from_vec(vec![4.0; 10])).is_err());
    }

    #[test]
    fn zscore_is_idempotent() {
        let x = Tensor::from_vec((0..50).map(|i| (i as f64 * 0.37).sin() + 0.2).collect());
        let once = zscore(&x).unwrap();
        let twice = zscore(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn segment_stride_arithmetic() {
        let x = Tensor::from_vec(vec![0.0; 3000]);
        let segs = segment(&x, 100.0, 10.0, 1.0).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.len() == 1000));
        // exactly one window when the signal equals the window
        let x = Tensor::from_vec(vec![0.0; 1000]);
        assert_eq!(segment(&x, 100.0, 10.0, 1.0).unwrap().len(), 1);
        // too short errors
        let x = Tensor::from_vec(vec![0.0; 990]);
        assert!(segment(&x, 100.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn snr_zero_db_when_powers_match() {
        let fs = 100.0;
        let n = 1000;
        // both tones bin-aligned: 1.0 Hz (in band at 60 BPM) and 3.0 Hz (noise)
        let mut data = sine(1.0, fs, n, 1.0).into_data();
        for (i, v) in data.iter_mut().enumerate() {
            *v += (2.0 * PI * 3.0 * i as f64 / fs).sin();
        }
        let seg = PpgSegment {
            samples: Tensor::from_vec(data),
            fs,
            subject_id: "t".into(),
            truth_peaks: None,
            ref_hr: None,
        };
        let db = snr(&seg, 60.0).unwrap();
        assert!(db.abs() < 0.1, "snr {}", db);
    }

    #[test]
    fn snr_ten_db_for_ten_to_one_power() {
        let fs = 100.0;
        let n = 1000;
        let mut data = sine(1.0, fs, n, 10.0f64.sqrt()).into_data();
        for (i, v) in data.iter_mut().enumerate() {
            *v += (2.0 * PI * 3.0 * i as f64 / fs).sin();
        }
        let seg = PpgSegment {
            samples: Tensor::from_vec(data),
            fs,
            subject_id: "t".into(),
            truth_peaks: None,
            ref_hr: None,
        };
        let db = snr(&seg, 60.0).unwrap();
        assert!((db - 10.0).abs() < 0.1, "snr {}", db);
    }

    #[test]
    fn snr_clamps_at_fifty_for_pure_tone() {
        let fs = 100.0;
        let seg = PpgSegment {
            samples: sine(1.0, fs, 1000, 1.0),
            fs,
            subject_id: "t".into(),
            truth_peaks: None,
            ref_hr: None,
        };
        assert_eq!(snr(&seg, 60.0).unwrap(), 50.0);
    }

    #[test]
    fn snr_rejects_out_of_range_hr() {
        let seg = PpgSegment {
            samples: sine(1.0, 100.0, 1000, 1.0),
            fs: 100.0,
            subject_id: "t".into(),
            truth_peaks: None,
            ref_hr: None,
        };
        assert!(snr(&seg, 20.0).is_err());
        assert!(snr(&seg, 300.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn segment_count_formula(extra in 0usize..2000, window in 2usize..12, overlap in 0usize..2) {
            let fs = 100.0;
            let window_s = window as f64;
            let overlap_s = overlap as f64;
            prop_assume!(overlap_s < window_s);
            let w = (window_s * fs) as usize;
            let stride = ((window_s - overlap_s) * fs) as usize;
            let n = w + extra;
            let x = Tensor::from_vec(vec![0.0; n]);
            let segs = segment(&x, fs, window_s, overlap_s).unwrap();
            prop_assert_eq!(segs.len(), (n - w) / stride + 1);
        }

        #[test]
        fn snr_is_scale_invariant(scale in 0.01f64..100.0) {
            let fs = 100.0;
            let n = 1000;
            let mut data = vec![0.0; n];
            for (i, v) in data.iter_mut().enumerate() {
                let t = i as f64 / fs;
                *v = (2.0 * PI * 1.2 * t).sin() + 0.5 * (2.0 * PI * 3.7 * t).sin();
            }
            let seg = |s: f64| PpgSegment {
                samples: Tensor::from_vec(data.iter().map(|v| v * s).collect()),
                fs,
                subject_id: "t".into(),
                truth_peaks: None,
                ref_hr: None,
            };
            let a = snr(&seg(1.0), 72.0).unwrap();
            let b = snr(&seg(scale), 72.0).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
