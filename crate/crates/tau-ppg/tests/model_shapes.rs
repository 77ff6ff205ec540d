//! Shape contracts and structural invariants of the forward pass.

use tau_ppg::autodiff::Tape;
use tau_ppg::model::{forward, ModelWeights, TauConfig, TrainOptions};
use tau_ppg::synth::{generate, SynthSpec};
use tau_ppg::tensor::Tensor;

fn ramp(n: usize) -> Tensor {
    Tensor::from_vec((0..n).map(|i| ((i as f64) * 0.05).sin()).collect())
}

#[test]
fn prediction_length_matches_input_for_all_alignments() {
    let cfg = TauConfig::tau();
    let weights = ModelWeights::init(&cfg, 5).unwrap();
    for n in [160usize, 992, 1000] {
        let mut tape = Tape::new();
        let pass = forward(&mut tape, &cfg, &weights, &ramp(n)).unwrap();
        assert_eq!(tape.shape(pass.prediction), &[1, n], "n = {}", n);
        assert_eq!(pass.deep.len(), cfg.depth);
    }
}

#[test]
fn default_encoder_shape_and_block_lengths() {
    let cfg = TauConfig::tau();
    assert_eq!(cfg.encoder_out_channels(), 128);
    let weights = ModelWeights::init(&cfg, 6).unwrap();
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &cfg, &weights, &ramp(1000)).unwrap();
    // 1000 -> 500 -> 250 -> 125 -> 62
    assert_eq!(pass.enc_len, 62);
    // decoder block outputs: 124, 248, 496, 992 before the final resize
    let lens: Vec<usize> = pass.deep.iter().map(|d| d.len).collect();
    assert_eq!(lens, vec![124, 248, 496, 992]);
}

#[test]
fn lite_alignment_is_exact_at_1000() {
    let cfg = TauConfig::tau_lite();
    let weights = ModelWeights::init(&cfg, 6).unwrap();
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &cfg, &weights, &ramp(1000)).unwrap();
    assert_eq!(pass.enc_len, 125);
    let lens: Vec<usize> = pass.deep.iter().map(|d| d.len).collect();
    assert_eq!(lens, vec![250, 500, 1000]);
    assert_eq!(tape.shape(pass.prediction), &[1, 1000]);
}

#[test]
fn minimal_length_collapses_to_one() {
    let cfg = TauConfig {
        depth: 4,
        first_width: 2,
        embed_dim: 4,
        kernel: 3,
        closest_peaks: 2,
        ..TauConfig::tau()
    };
    let weights = ModelWeights::init(&cfg, 7).unwrap();
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &cfg, &weights, &ramp(16)).unwrap();
    assert_eq!(pass.enc_len, 1);
    assert_eq!(tape.shape(pass.prediction), &[1, 16]);
    // too short errors
    let mut tape = Tape::new();
    assert!(forward(&mut tape, &cfg, &weights, &ramp(15)).is_err());
}

#[test]
fn zero_weights_give_zero_features_and_prediction() {
    let cfg = TauConfig::tau_lite();
    let mut weights = ModelWeights::init(&cfg, 8).unwrap();
    for i in 0..weights.len() {
        weights.tensor_at_mut(i).scale_in_place(0.0);
    }
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &cfg, &weights, &ramp(128)).unwrap();
    assert!(tape.value(pass.prediction).data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_rows_are_probability_distributions() {
    let cfg = TauConfig::tau();
    let weights = ModelWeights::init(&cfg, 9).unwrap();
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &cfg, &weights, &ramp(992)).unwrap();
    assert!(
        !pass.attention_rows.is_empty(),
        "decoder attention should be active"
    );
    for probs in &pass.attention_rows {
        let t = tape.value(*probs);
        for r in 0..t.rows() {
            let sum: f64 = t.row(r).iter().sum();
            assert!(
                (sum - 1.0).abs() <= 1e-9,
                "attention row sums to {}",
                sum
            );
            assert!(t.row(r).iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn time_module_trace_respects_phase_bounds() {
    // warm a tiny model up until the time module detects peaks, then check
    // every recorded phase sits in [0, m_alpha/2] and the counts line up
    let cfg = TauConfig {
        depth: 1,
        first_width: 4,
        embed_dim: 4,
        kernel: 3,
        closest_peaks: 2,
        ..TauConfig::tau()
    };
    let seg = generate(&SynthSpec {
        hr_bpm: 120.0,
        duration_s: 1.0,
        fs: 32.0,
        hrv_jitter_ms: 0.0,
        snr_target_db: None,
        seed: 40,
    })
    .unwrap();
    let opts = TrainOptions::default();
    let mut weights = ModelWeights::init(&cfg, 12).unwrap();
    let mut opt = tau_ppg::model::AdamW::new(opts.clone(), &weights);
    for _ in 0..60 {
        tau_ppg::model::train_step(&[&seg], &cfg, &mut weights, &mut opt, &opts).unwrap();
    }
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &cfg, &weights, &seg.samples).unwrap();
    let trace = pass.trace.expect("time module ran");
    assert!(!trace.degenerate);
    let m_alpha = trace.m_alpha.unwrap();
    assert!(m_alpha > 0.0);
    for &phi in trace
        .alpha_phases
        .iter()
        .chain(trace.eta_phases.iter().flatten())
    {
        assert!(
            (0.0..=m_alpha / 2.0 + 1e-12).contains(&phi),
            "phase {} outside [0, {}]",
            phi,
            m_alpha / 2.0
        );
    }
    assert_eq!(trace.eta.len(), pass.enc_len);
    assert!(trace
        .eta
        .iter()
        .all(|row| row.len() == cfg.closest_peaks));
    // with an exact period the detected cycle matches the beat spacing
    // within the encoder-scale quantization of n/n' samples
    let quename = seg.len() as f64 / pass.enc_len as f64;
    let truth = seg.truth_peaks.as_ref().unwrap().indices();
    let true_gap = (truth[1] - truth[0]) as f64;
    assert!(
        (m_alpha - true_gap).abs() <= quename,
        "cycle {} vs true gap {}",
        m_alpha,
        true_gap
    );
}

#[test]
fn degenerate_time_module_falls_back() {
    let cfg = TauConfig {
        depth: 2,
        first_width: 2,
        embed_dim: 4,
        kernel: 3,
        closest_peaks: 2,
        ..TauConfig::tau()
    };
    // fresh random weights on a flat segment: no peaks below threshold in
    // two spots, so the module reports the fallback
    let weights = ModelWeights::init(&cfg, 3).unwrap();
    let mut tape = Tape::new();
    let pass = forward(&mut tape, &cfg, &weights, &Tensor::from_vec(vec![0.0; 64])).unwrap();
    let trace = pass.trace.expect("time module ran");
    assert!(trace.degenerate);
    assert!(trace.m_alpha.is_none());
    // fallback aliases the time prediction to the encoder prediction
    let enc = tape.value(pass.enc_aux.unwrap()).clone();
    let time = tape.value(pass.time_aux.unwrap()).clone();
    assert_eq!(enc.data(), time.data());
}
