//! Peak-level, heart-rate-level, and HRV-level evaluation.

use crate::error::{Result, TauError};
use crate::fft::rfft_power;
use crate::labeling::PeakSet;
use crate::tensor::Tensor;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Outcome of matching predicted peaks against ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// (predicted index, truth index) pairs, one-to-one.
    pub pairs: Vec<(usize, usize)>,
}

/// Precision, recall and F1 with a tolerance radius in samples.
///
/// Matching is greedy nearest-first and one-to-one: candidate pairs within
/// the radius are taken in order of distance, so one prediction can never
/// claim two truth peaks. The tie-break key is symmetric in the two sets,
/// which keeps F1 invariant under swapping prediction and truth.
pub fn f1_at(pred: &PeakSet, truth: &PeakSet, radius: usize) -> (f64, f64, f64, MatchResult) {
    let mut candidates: Vec<(u64, usize, usize, usize, usize)> = Vec::new();
    for (pi, &p) in pred.indices().iter().enumerate() {
        for (ti, &t) in truth.indices().iter().enumerate() {
            let d = p.abs_diff(t);
            if d <= radius {
                let (lo, hi) = (p.min(t), p.max(t));
                candidates.push((d as u64, lo, hi, pi, ti));
            }
        }
    }
    candidates.sort_unstable_by_key(|&(d, lo, hi, _, _)| (d, lo, hi));

    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (_, _, _, pi, ti) in candidates {
        if !pred_used[pi] && !truth_used[ti] {
            pred_used[pi] = true;
            truth_used[ti] = true;
            pairs.push((pred.indices()[pi], truth.indices()[ti]));
        }
    }
    let tp = pairs.len();
    let fp = pred.len() - tp;
    let fn_ = truth.len() - tp;
    let precision = if pred.is_empty() {
        0.0
    } else {
        tp as f64 / pred.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        tp as f64 / truth.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (
        precision,
        recall,
        f1,
        MatchResult {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            pairs,
        },
    )
}

/// Mean absolute error over (estimated, reference) heart-rate pairs.
pub fn hr_mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(TauError::InvalidArgument("hr_mae of no pairs".into()));
    }
    Ok(pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Time-domain HRV features over NN intervals in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrvTime {
    pub mean_nn: f64,
    pub sdnn: f64,
    pub rmssd: f64,
    pub sdsd: f64,
}

/// Mean NN, SDNN (population), RMSSD, and SDSD (population) from NN
/// intervals in milliseconds. Needs at least 3 intervals so the successive
/// differences are meaningful.
pub fn hrv_time(nn_ms: &[f64]) -> Result<HrvTime> {
    if nn_ms.len() < 3 {
        return Err(TauError::InvalidArgument(format!(
            "hrv_time needs >= 3 intervals, got {}",
            nn_ms.len()
        )));
    }
    let t = Tensor::from_vec(nn_ms.to_vec());
    let diffs: Vec<f64> = nn_ms.windows(2).map(|w| w[1] - w[0]).collect();
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let dt = Tensor::from_vec(diffs);
    Ok(HrvTime {
        mean_nn: t.mean(),
        sdnn: t.std_pop(),
        rmssd,
        sdsd: dt.std_pop(),
    })
}

/// Frequency-domain HRV features in ms².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrvFreq {
    pub lf: f64,
    pub hf: f64,
    pub lf_hf: f64,
}

/// LF band in Hz.
pub const LF_BAND: (f64, f64) = (0.04, 0.15);
/// HF band in Hz.
pub const HF_BAND: (f64, f64) = (0.15, 0.4);
const HRV_RESAMPLE_HZ: f64 = 4.0;

/// LF/HF band powers from an irregularly sampled NN series.
///
/// `nn_ms` are interval lengths in milliseconds and `t_s` the time of each
/// interval's end in seconds. The series is linearly interpolated onto a
/// uniform 4 Hz grid, de-meaned, and integrated over the conventional
/// 0.04–0.15 / 0.15–0.4 Hz bands of a Hann periodogram.
pub fn hrv_freq(nn_ms: &[f64], t_s: &[f64]) -> Result<HrvFreq> {
    if nn_ms.len() != t_s.len() {
        return Err(TauError::ShapeMismatch(format!(
            "{} intervals vs {} timestamps",
            nn_ms.len(),
            t_s.len()
        )));
    }
    if nn_ms.len() < 4 {
        return Err(TauError::InvalidArgument("too few intervals".into()));
    }
    if t_s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TauError::InvalidArgument("timestamps not increasing".into()));
    }
    let span = t_s[t_s.len() - 1] - t_s[0];
    if span < 60.0 {
        return Err(TauError::InvalidArgument(format!(
            "record of {:.1}s is shorter than 60s",
            span
        )));
    }
    // uniform grid by linear interpolation
    let n = (span * HRV_RESAMPLE_HZ).floor() as usize + 1;
    let mut grid = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        let t = t_s[0] + i as f64 / HRV_RESAMPLE_HZ;
        while seg + 1 < t_s.len() && t_s[seg + 1] < t {
            seg += 1;
        }
        let (t0, t1) = (t_s[seg], t_s[(seg + 1).min(t_s.len() - 1)]);
        let (v0, v1) = (nn_ms[seg], nn_ms[(seg + 1).min(nn_ms.len() - 1)]);
        let v = if t1 > t0 {
            let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            v0 + f * (v1 - v0)
        } else {
            v0
        };
        grid.push(v);
    }
    let series = Tensor::from_vec(grid);
    let mean = series.mean();
    let centered = series.map(|v| v - mean);
    let (freqs, power) = rfft_power(&centered, HRV_RESAMPLE_HZ)?;
    let df = freqs.data()[1] - freqs.data()[0];
    let band_power = |band: (f64, f64)| -> f64 {
        freqs
            .data()
            .iter()
            .zip(power.data())
            .filter(|(f, _)| **f >= band.0 && **f < band.1)
            .map(|(_, p)| p * df)
            .sum()
    };
    let lf = band_power(LF_BAND);
    let hf = band_power(HF_BAND);
    let lf_hf = if hf > 0.0 { lf / hf } else { 0.0 };
    Ok(HrvFreq { lf, hf, lf_hf })
}

/// Sample Pearson correlation with a two-sided p-value from the
/// t-distribution with `n − 2` degrees of freedom.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(TauError::ShapeMismatch(format!(
            "pearson: {} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 3 {
        return Err(TauError::InvalidArgument("pearson needs >= 3 pairs".into()));
    }
    let (ma, mb) = (
        a.iter().sum::<f64>() / n as f64,
        b.iter().sum::<f64>() / n as f64,
    );
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(TauError::InvalidArgument(
            "pearson of zero-variance series".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p = if 1.0 - r * r < 1e-15 {
        0.0
    } else {
        let t = r.abs() * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| TauError::Numeric(format!("t-distribution: {}", e)))?;
        2.0 * (1.0 - dist.cdf(t))
    };
    Ok((r, p))
}

/// Bland-Altman statistics of `a − b`: mean difference and the 95% limits
/// of agreement `mean ± 1.96·std`.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TauError::ShapeMismatch(format!(
            "bland_altman: {} vs {} values",
            a.len(),
            b.len()
        )));
    }
    let d = Tensor::from_vec(a.iter().zip(b).map(|(x, y)| x - y).collect());
    let mean = d.mean();
    let sd = d.std_pop();
    Ok((mean, mean - 1.96 * sd, mean + 1.96 * sd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn peaks(v: &[usize], n: usize) -> PeakSet {
        PeakSet::new(v.to_vec(), n).unwrap()
    }

    #[test]
    fn f1_perfect_and_empty() {
        let t = peaks(&[10, 50, 90], 100);
        let (_, _, f1, m) = f1_at(&t, &t, 5);
        assert_eq!(f1, 1.0);
        assert_eq!(m.true_positives, 3);
        let (_, _, f1, _) = f1_at(&PeakSet::empty(100), &t, 5);
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn f1_hand_matching() {
        let truth = peaks(&[100, 200], 300);
        let pred = peaks(&[104, 290], 300);
        let (p, r, f1, m) = f1_at(&pred, &truth, 5);
        assert_eq!(m.true_positives, 1);
        assert_eq!(m.false_positives, 1);
        assert_eq!(m.false_negatives, 1);
        assert_eq!(p, 0.5);
        assert_eq!(r, 0.5);
        assert_eq!(f1, 0.5);
    }

    #[test]
    fn matching_is_one_to_one() {
        // one prediction between two truths may claim only one
        let truth = peaks(&[100, 104], 300);
        let pred = peaks(&[102], 300);
        let (_, _, _, m) = f1_at(&pred, &truth, 5);
        assert_eq!(m.true_positives, 1);
        assert_eq!(m.false_negatives, 1);
    }

    #[test]
    fn hr_mae_examples() {
        assert_eq!(hr_mae(&[(60.0, 60.0), (72.0, 72.0)]).unwrap(), 0.0);
        assert_eq!(hr_mae(&[(62.0, 60.0), (58.0, 60.0)]).unwrap(), 2.0);
        assert_eq!(hr_mae(&[(70.5, 68.0)]).unwrap(), 2.5);
    }

    #[test]
    fn hrv_time_closed_forms() {
        let h = hrv_time(&[800.0, 800.0, 800.0, 800.0]).unwrap();
        assert_eq!(
            (h.mean_nn, h.sdnn, h.rmssd, h.sdsd),
            (800.0, 0.0, 0.0, 0.0)
        );
        let h = hrv_time(&[800.0, 810.0, 790.0]).unwrap();
        // diffs [10, -20]: rmssd = sqrt((100+400)/2), sdsd = std_pop = 15
        assert!((h.rmssd - (250.0f64).sqrt()).abs() < 1e-9);
        assert!((h.rmssd - 15.811_388_300_841_896).abs() < 1e-9);
        assert!((h.sdsd - 15.0).abs() < 1e-9);
        assert!(hrv_time(&[800.0, 810.0]).is_err());
    }

    #[test]
    fn hrv_freq_modulation_bands() {
        // NN series modulated at a known frequency lands in the right band
        let build = |f_mod: f64| {
            let mut nn = Vec::new();
            let mut ts = Vec::new();
            let mut t = 0.0;
            while t < 120.0 {
                let nn_ms = 800.0 + 50.0 * (2.0 * std::f64::consts::PI * f_mod * t).sin();
                t += nn_ms / 1000.0;
                nn.push(nn_ms);
                ts.push(t);
            }
            hrv_freq(&nn, &ts).unwrap()
        };
        let lf_dominant = build(0.1);
        assert!(
            lf_dominant.lf_hf > 5.0,
            "LF/HF {} for 0.1 Hz",
            lf_dominant.lf_hf
        );
        let hf_dominant = build(0.25);
        assert!(
            hf_dominant.lf_hf < 0.5,
            "LF/HF {} for 0.25 Hz",
            hf_dominant.lf_hf
        );
    }

    #[test]
    fn hrv_freq_constant_series_has_no_band_power() {
        let mut nn = Vec::new();
        let mut ts = Vec::new();
        let mut t = 0.0;
        while t < 90.0 {
            t += 0.8;
            nn.push(800.0);
            ts.push(t);
        }
        let h = hrv_freq(&nn, &ts).unwrap();
        assert!(h.lf < 1e-9 && h.hf < 1e-9, "lf {} hf {}", h.lf, h.hf);
    }

    #[test]
    fn hrv_freq_rejects_short_record() {
        let nn = vec![800.0; 10];
        let ts: Vec<f64> = (0..10).map(|i| i as f64 * 0.8).collect();
        assert!(hrv_freq(&nn, &ts).is_err());
    }

    #[test]
    fn pearson_closed_forms() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let (r, p) = pearson(&a, &a).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(p, 0.0);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let (r, _) = pearson(&a, &neg).unwrap();
        assert_eq!(r, -1.0);
        let b = [1.0, 2.0, 3.0, 5.0];
        let (r, p) = pearson(&a, &b).unwrap();
        // closed-form covariance arithmetic
        assert!((r - 6.5 / 43.75f64.sqrt()).abs() < 1e-9);
        assert!((r - 0.982_707_629_9).abs() < 1e-9);
        assert!(p < 0.05);
    }

    #[test]
    fn bland_altman_closed_forms() {
        let a = [1.0, 2.0, 3.0];
        let (m, lo, hi) = bland_altman(&a, &a).unwrap();
        assert_eq!((m, lo, hi), (0.0, 0.0, 0.0));
        let (m, lo, hi) = bland_altman(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((m - 0.0).abs() < 1e-12);
        assert!((lo + 1.96).abs() < 1e-9 && (hi - 1.96).abs() < 1e-9);
        let (m, lo, hi) = bland_altman(&[3.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m, lo, hi), (2.0, 2.0, 2.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn f1_symmetric_under_swap(
            a in prop::collection::btree_set(0usize..400, 0..15),
            b in prop::collection::btree_set(0usize..400, 0..15),
            radius in 0usize..12,
        ) {
            let pa = PeakSet::new(a.into_iter().collect(), 400).unwrap();
            let pb = PeakSet::new(b.into_iter().collect(), 400).unwrap();
            let (p1, r1, f1, m1) = f1_at(&pa, &pb, radius);
            let (p2, r2, f2, m2) = f1_at(&pb, &pa, radius);
            prop_assert_eq!(m1.true_positives, m2.true_positives);
            prop_assert!((p1 - r2).abs() < 1e-12);
            prop_assert!((r1 - p2).abs() < 1e-12);
            prop_assert!((f1 - f2).abs() < 1e-12);
        }

        #[test]
        fn f1_monotone_in_radius(
            a in prop::collection::btree_set(0usize..400, 1..15),
            b in prop::collection::btree_set(0usize..400, 1..15),
        ) {
            let pa = PeakSet::new(a.into_iter().collect(), 400).unwrap();
            let pb = PeakSet::new(b.into_iter().collect(), 400).unwrap();
            let mut last = 0.0;
            for radius in [0usize, 2, 5, 10, 20] {
                let (_, _, f1, _) = f1_at(&pa, &pb, radius);
                prop_assert!(f1 + 1e-12 >= last);
                last = f1;
            }
        }

        #[test]
        fn hrv_time_order_properties(perm_seed in 0u64..1000) {
            // mean and sdnn are order-independent; rmssd generally is not
            let base = [800.0, 832.0, 790.0, 805.0, 821.0];
            let mut shuffled = base;
            // cheap deterministic shuffle
            let k = (perm_seed % 5) as usize;
            shuffled.rotate_left(k);
            shuffled.swap(0, (perm_seed % 4 + 1) as usize);
            let h1 = hrv_time(&base).unwrap();
            let h2 = hrv_time(&shuffled).unwrap();
            prop_assert!((h1.mean_nn - h2.mean_nn).abs() < 1e-9);
            prop_assert!((h1.sdnn - h2.sdnn).abs() < 1e-9);
        }
    }

    #[test]
    fn rmssd_is_order_dependent() {
        let a = [800.0, 900.0, 800.0, 900.0];
        let b = [800.0, 800.0, 900.0, 900.0];
        let ha = hrv_time(&a).unwrap();
        let hb = hrv_time(&b).unwrap();
        assert!((ha.rmssd - hb.rmssd).abs() > 1.0);
    }
}
