//! Optimization behavior: overfit smoke test and seed reproducibility.

use std::time::Instant;
use tau_ppg::model::{train_step, AdamW, ModelWeights, TauConfig, TrainOptions};
use tau_ppg::synth::{generate, SynthSpec};

#[test]
fn fifty_steps_overfit_one_segment() {
    let cfg = TauConfig::tau_lite();
    let seg = generate(&SynthSpec {
        hr_bpm: 72.0,
        duration_s: 10.0,
        fs: 100.0,
        hrv_jitter_ms: 10.0,
        snr_target_db: None,
        seed: 2024,
    })
    .unwrap();
    let opts = TrainOptions::default();
    let mut weights = ModelWeights::init(&cfg, 1).unwrap();
    let mut opt = AdamW::new(opts.clone(), &weights);

    let start = Instant::now();
    let mut losses = Vec::with_capacity(50);
    for _ in 0..50 {
        losses.push(train_step(&[&seg], &cfg, &mut weights, &mut opt, &opts).unwrap());
    }
    let elapsed = start.elapsed();
    let decreases = losses.windows(2).filter(|w| w[1] < w[0]).count();
    println!(
        "overfit: initial {:.4}, final {:.4}, {}/49 decreasing steps, {:.1?}",
        losses[0],
        losses[49],
        decreases,
        elapsed
    );
    assert!(
        losses[49] < 0.25 * losses[0],
        "loss only fell from {} to {}",
        losses[0],
        losses[49]
    );
    assert!(
        decreases as f64 >= 0.8 * 49.0,
        "only {}/49 steps decreased the loss",
        decreases
    );
    assert!(elapsed.as_secs() < 60, "took {:?}", elapsed);
}

#[test]
fn training_is_bit_reproducible_per_seed() {
    let cfg = TauConfig::tau_lite();
    let segs: Vec<_> = (0..4)
        .map(|i| {
            generate(&SynthSpec {
                hr_bpm: 60.0 + 10.0 * i as f64,
                duration_s: 10.0,
                fs: 100.0,
                hrv_jitter_ms: 8.0,
                snr_target_db: None,
                seed: 100 + i,
            })
            .unwrap()
        })
        .collect();
    let run = || {
        let opts = TrainOptions::default();
        let mut weights = ModelWeights::init(&cfg, 55).unwrap();
        let mut opt = AdamW::new(opts.clone(), &weights);
        for _ in 0..5 {
            let batch: Vec<&_> = segs.iter().collect();
            train_step(&batch, &cfg, &mut weights, &mut opt, &opts).unwrap();
        }
        weights
    };
    let a = run();
    let b = run();
    for ((na, ta), (nb, tb)) in a.entries().iter().zip(b.entries()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data(), "weights diverged at {}", na);
    }
}
