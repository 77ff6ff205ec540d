//! Spectral helpers: Hann periodogram, raw periodogram, analytic envelope.

use crate::error::{Result, TauError};
use crate::tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// One-sided Hann periodogram.
///
/// The signal mean is attributed entirely to bin 0 and the Hann window is
/// applied to the zero-mean residual, so a constant input concentrates all
/// of its power at DC instead of leaking into the first bins.
///
/// Scaling is Parseval-consistent power spectral density: with window `w`
/// and residual `r`, `sum(power) * (fs/N)` equals
/// `mean(r·w)² ... Σ(r[n]w[n])² / Σw[n]²` plus the squared mean, i.e.
/// integrating the returned density over frequency recovers the windowed
/// mean-square of the signal. Units are (input units)²/Hz.
pub fn rfft_power(input: &Tensor, fs: f64) -> Result<(Tensor, Tensor)> {
    let n = input.len();
    if n < 8 {
        return Err(TauError::InvalidArgument(format!(
            "rfft_power needs at least 8 samples, got {}",
            n
        )));
    }
    if fs <= 0.0 {
        return Err(TauError::InvalidArgument("sampling rate must be positive".into()));
    }
    let mean = input.mean();
    // periodic Hann
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let windowed: Vec<f64> = input
        .data()
        .iter()
        .zip(&window)
        .map(|(x, w)| (x - mean) * w)
        .collect();
    let spectrum = fft_real(&windowed);

    let bins = n / 2 + 1;
    let mut power = vec![0.0; bins];
    let scale = 1.0 / (fs * wss);
    for (k, p) in power.iter_mut().enumerate() {
        let mag2 = spectrum[k].norm_sqr();
        // interior bins absorb the mirrored negative frequency
        let onesided = if k == 0 || (n % 2 == 0 && k == bins - 1) {
            1.0
        } else {
            2.0
        };
        *p = onesided * mag2 * scale;
    }
    // mean power as density over one bin width
    power[0] += mean * mean * n as f64 / fs;

    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok((Tensor::from_vec(freqs), Tensor::from_vec(power)))
}

/// One-sided periodogram without windowing, as raw `|X[k]|²` magnitudes.
/// Ratios between bands of this spectrum are what the SNR measure uses.
pub(crate) fn raw_periodogram(samples: &[f64], fs: f64) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let spectrum = fft_real(samples);
    let bins = n / 2 + 1;
    let mut power = vec![0.0; bins];
    for (k, p) in power.iter_mut().enumerate() {
        let onesided = if k == 0 || (n % 2 == 0 && k == bins - 1) {
            1.0
        } else {
            2.0
        };
        *p = onesided * spectrum[k].norm_sqr();
    }
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    (freqs, power)
}

/// Complex forward FFT of a real signal.
pub(crate) fn fft_real(samples: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Magnitude of the analytic signal (FFT-based Hilbert transform).
pub fn analytic_envelope(samples: &[f64]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n == 0 {
        return Err(TauError::InvalidArgument("envelope of empty signal".into()));
    }
    let mut buf = fft_real(samples);
    // zero negative frequencies, double positives
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            // DC and Nyquist stay
        } else if k < n.div_ceil(2) {
            *v *= 2.0;
        } else {
            *v = Complex::new(0.0, 0.0);
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.norm() / n as f64).collect())
}

/// Real inverse FFT of a full complex spectrum; imaginary residue dropped.
pub(crate) fn ifft_real(spectrum: &mut [Complex<f64>]) -> Vec<f64> {
    let n = spectrum.len();
    FftPlanner::new().plan_fft_inverse(n).process(spectrum);
    spectrum.iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_signal_power_sits_in_bin_zero() {
        let x = Tensor::from_vec(vec![5.0; 64]);
        let (_, power) = rfft_power(&x, 10.0).unwrap();
        assert!(power.data()[0] > 0.0);
        for &p in &power.data()[1..] {
            assert!(p.abs() < 1e-18);
        }
    }

    #[test]
    fn zeros_have_zero_power() {
        let x = Tensor::from_vec(vec![0.0; 32]);
        let (_, power) = rfft_power(&x, 8.0).unwrap();
        assert!(power.data().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn bin_aligned_sine_concentrates_within_one_bin() {
        // Hann spreads a bin-k tone over bins k-1..k+1 and nowhere else.
        let n = 256;
        let k = 12;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * k as f64 * i as f64 / n as f64).sin())
            .collect();
        let (_, power) = rfft_power(&Tensor::from_vec(x), 1.0).unwrap();
        let total: f64 = power.data().iter().sum();
        let near: f64 = power.data()[k - 1..=k + 1].iter().sum();
        assert!(near / total >= 0.99, "got {}", near / total);
    }

    #[test]
    fn too_short_input_is_rejected() {
        let x = Tensor::from_vec(vec![1.0; 7]);
        assert!(rfft_power(&x, 1.0).is_err());
    }

    #[test]
    fn envelope_of_unit_sine_is_one() {
        // integer number of cycles keeps the analytic signal exact
        let n = 1000;
        let cycles = 20.0;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * cycles * i as f64 / n as f64).sin())
            .collect();
        let env = analytic_envelope(&x).unwrap();
        for &e in &env {
            assert!((e - 1.0).abs() < 1e-6, "envelope {}", e);
        }
    }
}
