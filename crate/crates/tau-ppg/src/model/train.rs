//! Loss assembly and the optimization step.

use super::config::TauConfig;
use super::net::{ForwardPass, Net};
use super::weights::ModelWeights;
use crate::autodiff::{Tape, TapeVal};
use crate::error::{Result, TauError};
use crate::labeling::{dt_labels, dt_labels_scaled, hard_labels, PeakSet};
use crate::signal::PpgSegment;
use crate::tensor::Tensor;

/// Weight of the encoder-head auxiliary loss.
pub const LAMBDA_ENC: f64 = 0.5;
/// Weight of the time-module auxiliary loss.
pub const LAMBDA_TIME: f64 = 0.5;
/// Weight of each deep-supervision loss.
pub const LAMBDA_DEEP: f64 = 0.5;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps of the first cosine annealing period.
    pub restart_period: usize,
    /// Period growth factor at each warm restart.
    pub restart_mult: usize,
    /// Half-width of the 1-run of hard labels, in full-resolution samples.
    pub hard_label_radius: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: 0.002,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            restart_period: 200,
            restart_mult: 2,
            hard_label_radius: 2,
        }
    }
}

/// Decoupled-weight-decay Adam with cosine annealing and warm restarts.
#[derive(Debug, Clone)]
pub struct AdamW {
    opts: TrainOptions,
    step: usize,
    cycle_pos: usize,
    cycle_len: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(opts: TrainOptions, weights: &ModelWeights) -> Self {
        let m = weights
            .entries()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        let v = weights
            .entries()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        let cycle_len = opts.restart_period.max(1);
        Self {
            opts,
            step: 0,
            cycle_pos: 0,
            cycle_len,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate of the upcoming step under the cosine schedule.
    pub fn current_lr(&self) -> f64 {
        let frac = self.cycle_pos as f64 / self.cycle_len as f64;
        0.5 * self.opts.lr * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// Applies one update. `grads` are aligned with the weight entries;
    /// parameters without a gradient are left alone (decay included), so a
    /// degenerate branch cannot silently shrink unused weights.
    pub fn apply(&mut self, weights: &mut ModelWeights, grads: &[Option<&Tensor>]) -> Result<()> {
        if grads.len() != weights.len() {
            return Err(TauError::ShapeMismatch(format!(
                "{} gradients for {} parameters",
                grads.len(),
                weights.len()
            )));
        }
        let lr = self.current_lr();
        self.step += 1;
        self.cycle_pos += 1;
        if self.cycle_pos >= self.cycle_len {
            self.cycle_pos = 0;
            self.cycle_len = (self.cycle_len * self.opts.restart_mult.max(1)).max(1);
        }
        let t = self.step as i32;
        let bias1 = 1.0 - self.opts.beta1.powi(t);
        let bias2 = 1.0 - self.opts.beta2.powi(t);
        for (idx, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            if g.shape() != weights.tensor_at(idx).shape() {
                return Err(TauError::ShapeMismatch(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    weights.tensor_at(idx).shape()
                )));
            }
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let w = weights.tensor_at_mut(idx).data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = self.opts.beta1 * m[i] + (1.0 - self.opts.beta1) * gi;
                v[i] = self.opts.beta2 * v[i] + (1.0 - self.opts.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + self.opts.eps)
                    + self.opts.weight_decay * w[i]);
            }
        }
        Ok(())
    }
}

/// Supervision targets for one segment at every scale the model predicts.
struct SegmentTargets {
    main: Tensor,
    encoder_scale: Option<Tensor>,
    deep: Vec<Tensor>,
}

fn build_targets(
    cfg: &TauConfig,
    opts: &TrainOptions,
    peaks: &PeakSet,
    n: usize,
    enc_len: usize,
    deep_lens: &[usize],
) -> Result<SegmentTargets> {
    let as_row = |t: Tensor| -> Result<Tensor> {
        let len = t.len();
        Tensor::new(vec![1, len], t.into_data())
    };
    if cfg.uses_distance_labels() {
        let main = as_row(dt_labels(peaks, n)?.values)?;
        let encoder_scale = if cfg.uses_time_module() {
            let native = peaks.rescale(enc_len)?;
            Some(as_row(dt_labels_scaled(&native, n, enc_len)?.values)?)
        } else {
            None
        };
        let deep = deep_lens
            .iter()
            .map(|&len| {
                let native = peaks.rescale(len)?;
                as_row(dt_labels_scaled(&native, n, len)?.values)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentTargets {
            main,
            encoder_scale,
            deep,
        })
    } else {
        let radius = opts.hard_label_radius;
        let main = as_row(hard_labels(peaks, n, radius)?)?;
        let deep = deep_lens
            .iter()
            .map(|&len| {
                let native = peaks.rescale(len)?;
                let scaled_radius =
                    ((radius as f64 * len as f64 / n as f64).round() as usize).min(len / 2);
                as_row(hard_labels(&native, len, scaled_radius)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentTargets {
            main,
            encoder_scale: None,
            deep,
        })
    }
}

/// Sums the per-head losses of one forward pass into scalar terms.
fn loss_terms(
    tape: &mut Tape,
    pass: &ForwardPass,
    targets: &SegmentTargets,
) -> Result<Vec<(TapeVal, f64)>> {
    let mut terms = Vec::new();
    let main_target = tape.constant(targets.main.clone());
    terms.push((tape.smooth_l1(pass.prediction, main_target)?, 1.0));
    if let (Some(enc_aux), Some(enc_target)) = (&pass.enc_aux, &targets.encoder_scale) {
        let t = tape.constant(enc_target.clone());
        terms.push((tape.smooth_l1(*enc_aux, t)?, LAMBDA_ENC));
        if let Some(time_aux) = &pass.time_aux {
            let t = tape.constant(enc_target.clone());
            terms.push((tape.smooth_l1(*time_aux, t)?, LAMBDA_TIME));
        }
    }
    for (head, target) in pass.deep.iter().zip(&targets.deep) {
        let t = tape.constant(target.clone());
        terms.push((tape.smooth_l1(head.val, t)?, LAMBDA_DEEP));
    }
    Ok(terms)
}

fn batch_graph(
    tape: &mut Tape,
    batch: &[&PpgSegment],
    cfg: &TauConfig,
    weights: &ModelWeights,
    opts: &TrainOptions,
) -> Result<(TapeVal, Vec<TapeVal>)> {
    if batch.is_empty() {
        return Err(TauError::InvalidArgument("empty training batch".into()));
    }
    let net = Net::bind(tape, cfg, weights)?;
    let mut sample_losses = Vec::with_capacity(batch.len());
    for segment in batch {
        let peaks = segment.truth_peaks.as_ref().ok_or_else(|| {
            TauError::InvalidArgument(format!(
                "segment '{}' has no ground-truth peaks",
                segment.subject_id
            ))
        })?;
        let pass = net.run(tape, &segment.samples)?;
        let deep_lens: Vec<usize> = pass.deep.iter().map(|d| d.len).collect();
        let targets = build_targets(cfg, opts, peaks, segment.len(), pass.enc_len, &deep_lens)?;
        let terms = loss_terms(tape, &pass, &targets)?;
        sample_losses.push((tape.sum_scaled(&terms)?, 1.0 / batch.len() as f64));
    }
    let total = tape.sum_scaled(&sample_losses)?;
    Ok((total, net.bound_vals().to_vec()))
}

/// Batch loss without gradients; the forward pass only.
pub fn evaluate_loss(
    batch: &[&PpgSegment],
    cfg: &TauConfig,
    weights: &ModelWeights,
    opts: &TrainOptions,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (total, _) = batch_graph(&mut tape, batch, cfg, weights, opts)?;
    Ok(tape.value(total).data()[0])
}

/// Batch loss plus one gradient tensor per parameter (in weight order;
/// `None` for parameters the batch never touched).
pub fn loss_and_gradients(
    batch: &[&PpgSegment],
    cfg: &TauConfig,
    weights: &ModelWeights,
    opts: &TrainOptions,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut tape = Tape::new();
    let (total, bound) = batch_graph(&mut tape, batch, cfg, weights, opts)?;
    let loss_value = tape.value(total).data()[0];
    if !loss_value.is_finite() {
        return Err(TauError::NonFinite("training loss".into()));
    }
    let grads = tape.backward(total)?;
    let per_param = bound.iter().map(|&v| grads.get(v).cloned()).collect();
    Ok((loss_value, per_param))
}

/// One optimization step over a batch of segments with ground-truth peaks.
///
/// The total loss per segment is the full-resolution smooth-L1 plus the
/// weighted auxiliary and deep-supervision terms, averaged over the batch.
/// A non-finite value anywhere aborts the step before any weight changes.
pub fn train_step(
    batch: &[&PpgSegment],
    cfg: &TauConfig,
    weights: &mut ModelWeights,
    optimizer: &mut AdamW,
    opts: &TrainOptions,
) -> Result<f64> {
    let (loss_value, grads) = loss_and_gradients(batch, cfg, weights, opts)?;
    let per_param: Vec<Option<&Tensor>> = grads.iter().map(Option::as_ref).collect();
    optimizer.apply(weights, &per_param)?;
    Ok(loss_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::TauConfig;
    use crate::synth::{generate, SynthSpec};

    fn tiny_cfg() -> TauConfig {
        TauConfig {
            depth: 1,
            first_width: 4,
            embed_dim: 4,
            kernel: 3,
            closest_peaks: 2,
            ..TauConfig::tau()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights_bitwise() {
        let cfg = tiny_cfg();
        let mut weights = ModelWeights::init(&cfg, 3).unwrap();
        let before = weights.clone();
        let opts = TrainOptions {
            lr: 0.0,
            ..TrainOptions::default()
        };
        let mut opt = AdamW::new(opts.clone(), &weights);
        let seg = generate(&SynthSpec {
            hr_bpm: 60.0,
            duration_s: 2.0,
            fs: 32.0,
            hrv_jitter_ms: 0.0,
            snr_target_db: None,
            seed: 5,
        })
        .unwrap();
        train_step(&[&seg], &cfg, &mut weights, &mut opt, &opts).unwrap();
        for ((_, a), (_, b)) in weights.entries().iter().zip(before.entries()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn cosine_schedule_restarts() {
        let cfg = tiny_cfg();
        let weights = ModelWeights::init(&cfg, 1).unwrap();
        let opts = TrainOptions {
            restart_period: 4,
            restart_mult: 2,
            ..TrainOptions::default()
        };
        let mut opt = AdamW::new(opts.clone(), &weights);
        let mut rates = Vec::new();
        let mut w = weights.clone();
        for _ in 0..6 {
            rates.push(opt.current_lr());
            let grads: Vec<Option<&Tensor>> = w.entries().iter().map(|_| None).collect();
            opt.apply(&mut w, &grads).unwrap();
        }
        // decays over the first period of 4, then snaps back to the peak
        assert!((rates[0] - opts.lr).abs() < 1e-12);
        assert!(rates[1] > rates[2] && rates[2] > rates[3]);
        assert!((rates[4] - opts.lr).abs() < 1e-12, "warm restart missing: {:?}", rates);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let cfg = tiny_cfg();
        let mut weights = ModelWeights::init(&cfg, 1).unwrap();
        let opts = TrainOptions::default();
        let mut opt = AdamW::new(opts.clone(), &weights);
        assert!(train_step(&[], &cfg, &mut weights, &mut opt, &opts).is_err());
    }
}
