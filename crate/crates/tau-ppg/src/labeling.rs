//! Distance-transform labels, hard labels, and the peak-searching function.
//!
//! A label is the distance from a sample to its nearest systolic peak, so
//! peaks sit at label 0 and labels rise linearly between peaks. Labels for
//! a downsampled segment are multiplied by `n/n'` so every resolution lives
//! on the full-resolution distance scale and one detection threshold works
//! everywhere.

use crate::error::{Result, TauError};
use crate::tensor::Tensor;

/// Strictly increasing peak sample indices, tagged with the segment length
/// (`resolution_n`) they are expressed against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeakSet {
    indices: Vec<usize>,
    resolution_n: usize,
}

impl PeakSet {
    pub fn new(indices: Vec<usize>, resolution_n: usize) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(TauError::InvalidArgument(format!(
                "peak indices not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= resolution_n {
                return Err(TauError::InvalidArgument(format!(
                    "peak index {} outside segment of length {}",
                    last, resolution_n
                )));
            }
        }
        Ok(Self {
            indices,
            resolution_n,
        })
    }

    pub fn empty(resolution_n: usize) -> Self {
        Self {
            indices: Vec::new(),
            resolution_n,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn resolution_n(&self) -> usize {
        self.resolution_n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Re-expresses the peaks at another resolution by rounding each index
    /// with the length ratio. Collisions after rounding are merged.
    pub fn rescale(&self, new_n: usize) -> Result<PeakSet> {
        if new_n == 0 {
            return Err(TauError::InvalidArgument("rescale to empty segment".into()));
        }
        let ratio = new_n as f64 / self.resolution_n as f64;
        let mut out: Vec<usize> = Vec::with_capacity(self.indices.len());
        for &i in &self.indices {
            let j = ((i as f64 * ratio).round() as usize).min(new_n - 1);
            if out.last() != Some(&j) {
                out.push(j);
            }
        }
        PeakSet::new(out, new_n)
    }
}

/// Per-sample distance labels. `native_n` is the resolution the values are
/// stored at; `full_n` is the full-resolution length the distance scale
/// refers to. Ground-truth labels are zero exactly at peaks; model outputs
/// reuse the type as predictions of the same quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceLabels {
    pub values: Tensor,
    pub native_n: usize,
    pub full_n: usize,
}

impl DistanceLabels {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Distance-transform labels: `y[i] = min_j |i - P_j|`.
pub fn dt_labels(peaks: &PeakSet, n: usize) -> Result<DistanceLabels> {
    if peaks.is_empty() {
        return Err(TauError::InvalidArgument("dt_labels of empty peak set".into()));
    }
    let max = *peaks.indices().last().expect("nonempty");
    if n <= max {
        return Err(TauError::InvalidArgument(format!(
            "length {} does not cover peak {}",
            n, max
        )));
    }
    let values = nearest_peak_distances(peaks.indices(), n, 1.0, false);
    Ok(DistanceLabels {
        values: Tensor::from_vec(values),
        native_n: n,
        full_n: n,
    })
}

/// Scaled distance-transform labels for a segment of native length
/// `n_prime`: `y'[i] = round((n/n') · min_j |i - P'_j|)`, putting labels at
/// every resolution on the same full-resolution scale.
pub fn dt_labels_scaled(peaks_native: &PeakSet, n: usize, n_prime: usize) -> Result<DistanceLabels> {
    if peaks_native.is_empty() {
        return Err(TauError::InvalidArgument(
            "dt_labels_scaled of empty peak set".into(),
        ));
    }
    if n_prime == 0 || n < n_prime {
        return Err(TauError::InvalidArgument(format!(
            "scaled labels need n >= n' >= 1, got n={} n'={}",
            n, n_prime
        )));
    }
    let max = *peaks_native.indices().last().expect("nonempty");
    if n_prime <= max {
        return Err(TauError::InvalidArgument(format!(
            "native length {} does not cover peak {}",
            n_prime, max
        )));
    }
    let factor = n as f64 / n_prime as f64;
    let values = nearest_peak_distances(peaks_native.indices(), n_prime, factor, true);
    Ok(DistanceLabels {
        values: Tensor::from_vec(values),
        native_n: n_prime,
        full_n: n,
    })
}

/// Distance from every position to its nearest peak, times `factor`,
/// optionally rounded to the nearest integer (ties away from zero).
fn nearest_peak_distances(peaks: &[usize], n: usize, factor: f64, round: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut next = 0usize; // first peak at or after i
    for i in 0..n {
        while next < peaks.len() && peaks[next] < i {
            next += 1;
        }
        let ahead = peaks.get(next).map(|&p| p - i);
        let behind = next.checked_sub(1).map(|j| i - peaks[j]);
        let d = match (behind, ahead) {
            (Some(b), Some(a)) => b.min(a),
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("peaks nonempty"),
        } as f64
            * factor;
        out.push(if round { d.round() } else { d });
    }
    out
}

/// Binary labels: 1 within `radius` samples of any peak, 0 elsewhere.
pub fn hard_labels(peaks: &PeakSet, n: usize, radius: usize) -> Result<Tensor> {
    if let Some(&max) = peaks.indices().last() {
        if n <= max {
            return Err(TauError::InvalidArgument(format!(
                "length {} does not cover peak {}",
                n, max
            )));
        }
    }
    let mut out = vec![0.0; n];
    for &p in peaks.indices() {
        let lo = p.saturating_sub(radius);
        let hi = (p + radius).min(n - 1);
        for v in &mut out[lo..=hi] {
            *v = 1.0;
        }
    }
    Ok(Tensor::from_vec(out))
}

/// Scans label predictions for peaks.
///
/// Maximal runs of consecutive values strictly below `threshold` are regions
/// of interest; each region contributes the index of its minimum value
/// (earliest index on ties). Regions touching the segment boundaries are
/// kept, so edge peaks remain detectable.
pub fn peak_search(labels: &DistanceLabels, threshold: f64) -> PeakSet {
    scan_regions(labels.values.data(), |v| v < threshold, |a, b| a < b)
        .map(|idx| PeakSet {
            indices: idx,
            resolution_n: labels.native_n,
        })
        .unwrap_or_else(|| PeakSet::empty(labels.native_n))
}

/// Counterpart of [`peak_search`] for models trained on hard labels:
/// regions are runs strictly above `threshold` and each contributes its
/// maximum (earliest index on ties).
pub fn peak_search_hard(labels: &Tensor, threshold: f64) -> PeakSet {
    scan_regions(labels.data(), |v| v > threshold, |a, b| a > b)
        .map(|idx| PeakSet {
            indices: idx,
            resolution_n: labels.len(),
        })
        .unwrap_or_else(|| PeakSet::empty(labels.len()))
}

fn scan_regions(
    values: &[f64],
    in_region: impl Fn(f64) -> bool,
    better: impl Fn(f64, f64) -> bool,
) -> Option<Vec<usize>> {
    let mut peaks = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if in_region(v) {
            match best {
                Some((_, bv)) if !better(v, bv) => {}
                _ => best = Some((i, v)),
            }
        } else if let Some((bi, _)) = best.take() {
            peaks.push(bi);
        }
    }
    if let Some((bi, _)) = best {
        peaks.push(bi);
    }
    if peaks.is_empty() {
        None
    } else {
        Some(peaks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force oracle: minimum over all peaks for every position.
    fn dt_oracle(peaks: &[usize], n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                peaks
                    .iter()
                    .map(|&p| (i as i64 - p as i64).unsigned_abs())
                    .min()
                    .unwrap() as f64
            })
            .collect()
    }

    #[test]
    fn dt_labels_matches_hand_examples() {
        let p = PeakSet::new(vec![3], 6).unwrap();
        assert_eq!(
            dt_labels(&p, 6).unwrap().values.data(),
            &[3.0, 2.0, 1.0, 0.0, 1.0, 2.0]
        );
        let p = PeakSet::new(vec![0, 5], 6).unwrap();
        assert_eq!(
            dt_labels(&p, 6).unwrap().values.data(),
            &[0.0, 1.0, 2.0, 2.0, 1.0, 0.0]
        );
        let p = PeakSet::new((0..4).collect(), 4).unwrap();
        assert_eq!(dt_labels(&p, 4).unwrap().values.data(), &[0.0; 4]);
    }

    #[test]
    fn dt_labels_rejects_empty_or_short() {
        assert!(dt_labels(&PeakSet::empty(10), 10).is_err());
        let p = PeakSet::new(vec![5], 6).unwrap();
        assert!(dt_labels(&p, 5).is_err());
    }

    #[test]
    fn scaled_labels_hand_example() {
        // n=1000, n'=500, peak at 100: position 110 is 10 native steps away,
        // scaled by 2 -> 20.
        let p = PeakSet::new(vec![100], 500).unwrap();
        let labels = dt_labels_scaled(&p, 1000, 500).unwrap();
        assert_eq!(labels.values.data()[110], 20.0);
        assert_eq!(labels.values.data()[100], 0.0);
        // encoder-scale example: value at the peak itself is 0
        let p = PeakSet::new(vec![10], 62).unwrap();
        let labels = dt_labels_scaled(&p, 1000, 62).unwrap();
        assert_eq!(labels.values.data()[10], 0.0);
    }

    #[test]
    fn scaled_equals_plain_when_resolutions_match() {
        let p = PeakSet::new(vec![7, 40, 77], 100).unwrap();
        let a = dt_labels(&p, 100).unwrap();
        let b = dt_labels_scaled(&p, 100, 100).unwrap();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!((x - y).abs() <= 0.5);
        }
    }

    #[test]
    fn hard_labels_examples() {
        let p = PeakSet::new(vec![5], 10).unwrap();
        let l = hard_labels(&p, 10, 2).unwrap();
        assert_eq!(l.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let l = hard_labels(&p, 10, 0).unwrap();
        assert_eq!(l.data().iter().sum::<f64>(), 1.0);
        // overlapping windows merge
        let p = PeakSet::new(vec![4, 6], 10).unwrap();
        let l = hard_labels(&p, 10, 2).unwrap();
        assert_eq!(l.data(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn hard_labels_have_fewer_distinct_values_than_dt() {
        let p = PeakSet::new(vec![10, 40], 80).unwrap();
        let hard = hard_labels(&p, 80, 2).unwrap();
        let soft = dt_labels(&p, 80).unwrap();
        let distinct = |v: &[f64]| {
            let mut sorted: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
            sorted.sort_unstable();
            sorted.dedup();
            sorted.len()
        };
        assert_eq!(distinct(hard.data()), 2);
        assert!(distinct(soft.values.data()) > 2);
    }

    #[test]
    fn peak_search_round_trip() {
        let p = PeakSet::new(vec![100, 200], 300).unwrap();
        let labels = dt_labels(&p, 300).unwrap();
        let found = peak_search(&labels, 7.5);
        assert_eq!(found.indices(), &[100, 200]);
    }

    #[test]
    fn peak_search_empty_when_all_above_threshold() {
        let labels = DistanceLabels {
            values: Tensor::from_vec(vec![9.0, 8.0, 7.5, 10.0]),
            native_n: 4,
            full_n: 4,
        };
        assert!(peak_search(&labels, 7.5).is_empty());
    }

    #[test]
    fn peak_search_breaks_ties_toward_earliest() {
        let labels = DistanceLabels {
            values: Tensor::from_vec(vec![7.0, 3.0, 3.0, 7.0]),
            native_n: 4,
            full_n: 4,
        };
        assert_eq!(peak_search(&labels, 7.5).indices(), &[1]);
    }

    #[test]
    fn hard_peak_search_mirrors_soft() {
        let t = Tensor::from_vec(vec![0.0, 0.2, 0.9, 1.0, 0.9, 0.0, 0.0, 0.8, 0.6, 0.0]);
        let found = peak_search_hard(&t, 0.5);
        assert_eq!(found.indices(), &[3, 7]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dt_matches_brute_force(
            raw in prop::collection::btree_set(0usize..500, 1..20),
            extra in 1usize..100,
        ) {
            let peaks: Vec<usize> = raw.into_iter().collect();
            let n = peaks.last().unwrap() + extra;
            let ps = PeakSet::new(peaks.clone(), n).unwrap();
            let got = dt_labels(&ps, n).unwrap();
            let expect = dt_oracle(&peaks, n);
            prop_assert_eq!(got.values.data(), expect.as_slice());
        }

        #[test]
        fn dt_is_one_lipschitz(
            raw in prop::collection::btree_set(0usize..300, 1..10),
        ) {
            let peaks: Vec<usize> = raw.into_iter().collect();
            let n = peaks.last().unwrap() + 10;
            let ps = PeakSet::new(peaks, n).unwrap();
            let vals = dt_labels(&ps, n).unwrap();
            for w in vals.values.data().windows(2) {
                prop_assert!((w[1] - w[0]).abs() <= 1.0);
            }
        }

        #[test]
        fn round_trip_with_wide_gaps(
            gaps in prop::collection::vec(16usize..60, 1..12),
            first in 0usize..30,
        ) {
            let mut peaks = vec![first];
            for g in gaps {
                peaks.push(peaks.last().unwrap() + g);
            }
            let n = peaks.last().unwrap() + 20;
            let ps = PeakSet::new(peaks, n).unwrap();
            let labels = dt_labels(&ps, n).unwrap();
            let found = peak_search(&labels, 7.5);
            prop_assert_eq!(found.indices(), ps.indices());
        }
    }
}
