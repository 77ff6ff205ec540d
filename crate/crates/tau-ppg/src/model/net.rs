//! Forward pass of the temporal-attentive U-Net.
//!
//! The encoder halves the length and doubles the channels per block. The
//! time module detects provisional peaks from an auxiliary head on the
//! encoder output, turns sample-to-peak distances into phase embeddings,
//! and attends them against the peak-to-peak sequence. The decoder mixes
//! amplitude and temporal features back up to full resolution with skip
//! connections, and the prediction module fuses every scale into one
//! distance-label estimate with deep supervision taps.

use super::config::TauConfig;
use super::weights::ModelWeights;
use crate::attention::{multi_head_attention, AttentionParams};
use crate::autodiff::{Tape, TapeVal};
use crate::error::{Result, TauError};
use crate::labeling::{peak_search, DistanceLabels};
use crate::tensor::Tensor;

/// What the time module saw: detected peaks, distance sequences, phases.
#[derive(Debug, Clone)]
pub struct TimeModuleTrace {
    /// Peaks detected on the encoder-scale auxiliary prediction.
    pub encoder_peaks: Vec<usize>,
    /// Peak-to-peak distances in full-resolution units.
    pub alpha: Vec<f64>,
    /// Median cycle length in full-resolution units; `None` when degenerate.
    pub m_alpha: Option<f64>,
    /// Per encoder sample: distances to its k closest peaks (full-res units).
    pub eta: Vec<Vec<f64>>,
    /// Phases of every alpha entry.
    pub alpha_phases: Vec<f64>,
    /// Phases of every eta entry, per sample.
    pub eta_phases: Vec<Vec<f64>>,
    /// Fewer than two peaks were found; the module fell back to zeros.
    pub degenerate: bool,
}

/// One deep-supervision tap: a length-`len` distance prediction.
pub struct DeepHead {
    pub val: TapeVal,
    pub len: usize,
}

/// Everything the forward pass produces on the tape.
pub struct ForwardPass {
    /// Full-resolution distance prediction, `1×N`.
    pub prediction: TapeVal,
    /// Encoder-scale auxiliary prediction (present with the time module).
    pub enc_aux: Option<TapeVal>,
    /// Time-module prediction (present with the time module).
    pub time_aux: Option<TapeVal>,
    pub deep: Vec<DeepHead>,
    /// Encoder output length.
    pub enc_len: usize,
    pub trace: Option<TimeModuleTrace>,
    /// Row-stochastic attention matrices from every attention layer.
    pub attention_rows: Vec<TapeVal>,
}

/// Phase of a distance against the reference cycle: the residue after
/// complete cycles, folded to the nearer cycle boundary. Lies in
/// `[0, m_alpha/2]`.
pub fn phase(eta: f64, m_alpha: f64) -> Result<(f64, f64)> {
    if m_alpha <= 0.0 {
        return Err(TauError::InvalidArgument(format!(
            "cycle length {} must be positive",
            m_alpha
        )));
    }
    if eta < 0.0 {
        return Err(TauError::InvalidArgument(format!(
            "distance {} must be nonnegative",
            eta
        )));
    }
    let r = eta.rem_euclid(m_alpha);
    let phi = (m_alpha - r).min(r);
    Ok((r, phi))
}

/// Auxiliary regression head: `relu(W·x + b)` with `W` of shape `1×C`.
pub fn aux_head(x: &Tensor, weight: &Tensor, bias: f64) -> Result<Tensor> {
    if weight.rank() != 2 || weight.rows() != 1 || x.rank() != 2 || weight.cols() != x.rows() {
        return Err(TauError::ShapeMismatch(format!(
            "aux head weight {:?} against features {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    let m = x.cols();
    let mut out = vec![0.0; m];
    for (c, &w) in weight.data().iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(x.row(c)) {
            *o += w * v;
        }
    }
    for o in &mut out {
        *o = (*o + bias).max(0.0);
    }
    Ok(Tensor::from_vec(out))
}

/// Standard sinusoidal positional embedding of an integer position.
pub(crate) fn sinusoidal_embedding(pos: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let pair = (j / 2) as f64;
            let omega = 1.0 / 10_000f64.powf(2.0 * pair / dim as f64);
            if j % 2 == 0 {
                (pos * omega).sin()
            } else {
                (pos * omega).cos()
            }
        })
        .collect()
}

/// Weights bound to a tape, addressable by parameter path.
pub(crate) struct Net<'a> {
    pub cfg: &'a TauConfig,
    weights: &'a ModelWeights,
    bound: Vec<TapeVal>,
}

impl<'a> Net<'a> {
    pub fn bind(tape: &mut Tape, cfg: &'a TauConfig, weights: &'a ModelWeights) -> Result<Self> {
        let bound = weights
            .entries()
            .iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        Ok(Self {
            cfg,
            weights,
            bound,
        })
    }

    /// Tape handles in weight order, for reading gradients back out.
    pub fn bound_vals(&self) -> &[TapeVal] {
        &self.bound
    }

    fn p(&self, name: &str) -> Result<TapeVal> {
        self.weights
            .index_of(name)
            .map(|i| self.bound[i])
            .ok_or_else(|| TauError::InvalidArgument(format!("missing parameter '{}'", name)))
    }

    fn attn_params(&self, prefix: &str) -> Result<AttentionParams> {
        Ok(AttentionParams {
            wq: self.p(&format!("{}.wq", prefix))?,
            bq: self.p(&format!("{}.bq", prefix))?,
            wk: self.p(&format!("{}.wk", prefix))?,
            bk: self.p(&format!("{}.bk", prefix))?,
            wv: self.p(&format!("{}.wv", prefix))?,
            bv: self.p(&format!("{}.bv", prefix))?,
            wo: self.p(&format!("{}.wo", prefix))?,
            bo: self.p(&format!("{}.bo", prefix))?,
        })
    }

    /// Double convolution layer: dilation-1 conv, then (unless reduced to a
    /// single conv) a dilation-2 conv, ReLU after each.
    fn double_conv(&self, tape: &mut Tape, prefix: &str, x: TapeVal) -> Result<TapeVal> {
        let w1 = self.p(&format!("{}.c1.w", prefix))?;
        let b1 = self.p(&format!("{}.c1.b", prefix))?;
        let y = tape.conv1d(x, w1, b1, 1)?;
        let mut y = tape.relu(y)?;
        if self.cfg.width_plan().double_convs {
            let w2 = self.p(&format!("{}.c2.w", prefix))?;
            let b2 = self.p(&format!("{}.c2.b", prefix))?;
            y = tape.conv1d(y, w2, b2, 2)?;
            y = tape.relu(y)?;
        }
        Ok(y)
    }

    fn taped_aux_head(
        &self,
        tape: &mut Tape,
        w_name: &str,
        b_name: &str,
        x: TapeVal,
    ) -> Result<TapeVal> {
        let w = self.p(w_name)?;
        let b = self.p(b_name)?;
        let y = tape.matmul(w, x)?;
        let y = tape.add_scalar_param(y, b)?;
        tape.relu(y)
    }

    /// Encoder: `depth` blocks of double-conv + pool, then a final double
    /// conv. Returns the bottom feature map and the per-block skip features.
    pub fn encoder_forward(
        &self,
        tape: &mut Tape,
        input: TapeVal,
    ) -> Result<(TapeVal, Vec<TapeVal>)> {
        let n = tape.shape(input)[1];
        if n < (1 << self.cfg.depth) {
            return Err(TauError::InvalidArgument(format!(
                "segment of {} samples is too short for {} pooling stages",
                n, self.cfg.depth
            )));
        }
        let mut x = input;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        for b in 1..=self.cfg.depth {
            x = self.double_conv(tape, &format!("enc.b{}", b), x)?;
            skips.push(x);
            x = tape.maxpool1d(x)?;
        }
        let x_e = self.double_conv(tape, "enc.final", x)?;
        Ok((x_e, skips))
    }

    /// Time module. Returns `(x_t, enc_aux, time_aux, trace)`.
    pub fn time_module(
        &self,
        tape: &mut Tape,
        x_e: TapeVal,
        full_n: usize,
        attention_rows: &mut Vec<TapeVal>,
    ) -> Result<(TapeVal, TapeVal, TapeVal, TimeModuleTrace)> {
        let enc_ch = tape.shape(x_e)[0];
        let m = tape.shape(x_e)[1];
        let y_enc = self.taped_aux_head(tape, "time.head.w", "time.head.b", x_e)?;

        // provisional peaks from the auxiliary prediction; reading values
        // off the tape detaches the discrete search from the gradient path
        let labels = DistanceLabels {
            values: Tensor::from_vec(tape.value(y_enc).data().to_vec()),
            native_n: m,
            full_n,
        };
        let peaks = peak_search(&labels, self.cfg.threshold);
        let peak_idx: Vec<usize> = peaks.indices().to_vec();

        if peak_idx.len() < 2 {
            let x_t = tape.constant(Tensor::zeros(&[enc_ch, m]));
            let trace = TimeModuleTrace {
                encoder_peaks: peak_idx,
                alpha: Vec::new(),
                m_alpha: None,
                eta: Vec::new(),
                alpha_phases: Vec::new(),
                eta_phases: Vec::new(),
                degenerate: true,
            };
            return Ok((x_t, y_enc, y_enc, trace));
        }

        let factor = full_n as f64 / m as f64;
        let alpha: Vec<f64> = peak_idx
            .windows(2)
            .map(|w| (w[1] - w[0]) as f64 * factor)
            .collect();
        let m_alpha = median(&alpha);

        // temporal matrix for the peak-to-peak sequence; each entry is
        // positioned at the later peak of its pair
        let embed_dim = self.cfg.embed_dim;
        let vocab = self.cfg.phase_vocab;
        let mut alpha_buckets = Vec::with_capacity(alpha.len());
        let mut alpha_phases = Vec::with_capacity(alpha.len());
        let mut alpha_pos = Vec::with_capacity(alpha.len() * embed_dim);
        for (j, &a) in alpha.iter().enumerate() {
            let (_, phi) = phase(a, m_alpha)?;
            alpha_phases.push(phi);
            alpha_buckets.push((phi.floor() as usize).min(vocab - 1));
            alpha_pos.extend(sinusoidal_embedding(peak_idx[j + 1] as f64, embed_dim));
        }
        let table = self.p("time.embed")?;
        let t_alpha_e = tape.gather_rows(table, &alpha_buckets)?;
        let t_alpha_p = tape.constant(Tensor::new(vec![alpha.len(), embed_dim], alpha_pos)?);
        let t_alpha = tape.add(t_alpha_e, t_alpha_p)?;

        // temporal matrices for every sample's k closest peaks, stacked so
        // one attention call covers all samples
        let k = self.cfg.closest_peaks;
        let mut eta = Vec::with_capacity(m);
        let mut eta_phases = Vec::with_capacity(m);
        let mut q_buckets = Vec::with_capacity(m * k);
        let mut q_pos = Vec::with_capacity(m * k * embed_dim);
        for i in 0..m {
            let mut order = peak_idx.clone();
            order.sort_by_key(|&p| (p.abs_diff(i), p));
            let mut dists = Vec::with_capacity(k);
            let mut phis = Vec::with_capacity(k);
            for j in 0..k {
                let p = order[j % order.len()];
                let d = p.abs_diff(i) as f64 * factor;
                let (_, phi) = phase(d, m_alpha)?;
                q_buckets.push((phi.floor() as usize).min(vocab - 1));
                q_pos.extend(sinusoidal_embedding(p as f64, embed_dim));
                dists.push(d);
                phis.push(phi);
            }
            eta.push(dists);
            eta_phases.push(phis);
        }
        let t_q_e = tape.gather_rows(table, &q_buckets)?;
        let t_q_p = tape.constant(Tensor::new(vec![m * k, embed_dim], q_pos)?);
        let t_q = tape.add(t_q_e, t_q_p)?;

        let params = self.attn_params("time.attn")?;
        let attn = multi_head_attention(tape, t_q, t_alpha, t_alpha, self.cfg.heads, &params)?;
        attention_rows.extend(attn.head_probs.iter().copied());
        let u = tape.add(attn.out, t_q)?;
        let u_mean = tape.grouped_row_mean(u, k)?;
        let u_feat = tape.transpose(u_mean)?; // E×M

        let y_t = self.taped_aux_head(tape, "time.aux.w", "time.aux.b", u_feat)?;
        let x_t = self.double_conv(tape, "time.out", u_feat)?;

        let trace = TimeModuleTrace {
            encoder_peaks: peak_idx,
            alpha,
            m_alpha: Some(m_alpha),
            eta,
            alpha_phases,
            eta_phases,
            degenerate: false,
        };
        Ok((x_t, y_enc, y_t, trace))
    }

    /// Decoder: per block, optional position attention, optional conv pair,
    /// 2× upsample, halving conv, then skip concatenation. Returns each
    /// block's output.
    pub fn decoder_forward(
        &self,
        tape: &mut Tape,
        x_e: TapeVal,
        x_t: Option<TapeVal>,
        skips: &[TapeVal],
        attention_rows: &mut Vec<TapeVal>,
    ) -> Result<Vec<TapeVal>> {
        let plan = self.cfg.width_plan();
        let input = match x_t {
            Some(t) => tape.concat_rows(&[x_e, t])?,
            None => x_e,
        };
        let mut d = self.double_conv(tape, "dec.input", input)?;
        let mut outputs = Vec::with_capacity(plan.dec_blocks.len());
        for (i, block) in plan.dec_blocks.iter().enumerate() {
            let prefix = format!("dec.b{}", i + 1);
            if plan.decoder_attention {
                let tokens = tape.transpose(d)?;
                let params = self.attn_params(&format!("{}.attn", prefix))?;
                let attn =
                    multi_head_attention(tape, tokens, tokens, tokens, self.cfg.heads, &params)?;
                attention_rows.extend(attn.head_probs.iter().copied());
                let with_res = tape.add(attn.out, tokens)?;
                d = tape.transpose(with_res)?;
            }
            if plan.up_convs {
                let w1 = self.p(&format!("{}.up1.w", prefix))?;
                let b1 = self.p(&format!("{}.up1.b", prefix))?;
                d = tape.conv1d(d, w1, b1, 1)?;
                d = tape.relu(d)?;
                let w2 = self.p(&format!("{}.up2.w", prefix))?;
                let b2 = self.p(&format!("{}.up2.b", prefix))?;
                d = tape.conv1d(d, w2, b2, 2)?;
                d = tape.relu(d)?;
            }
            let len = tape.shape(d)[1];
            d = tape.resize_linear(d, 2 * len)?;
            d = self.double_conv(tape, &format!("{}.halve", prefix), d)?;

            let skip = skips[block.level - 1];
            let dec_len = tape.shape(d)[1];
            let skip_len = tape.shape(skip)[1];
            let aligned = if skip_len > dec_len {
                let start = (skip_len - dec_len) / 2;
                tape.crop_cols(skip, start, dec_len)?
            } else if skip_len < dec_len {
                let pad = dec_len - skip_len;
                tape.pad_cols(skip, pad / 2, pad - pad / 2)?
            } else {
                skip
            };
            d = tape.concat_rows(&[d, aligned])?;
            outputs.push(d);
        }
        Ok(outputs)
    }

    /// Prediction module: per block a 1×1 reduction and a linear resize to
    /// full length, concatenated into the three-conv output stack (ReLU at
    /// the end keeps distances nonnegative); plus one deep-supervision head
    /// per block at its native length.
    pub fn predict(
        &self,
        tape: &mut Tape,
        block_outputs: &[TapeVal],
        n: usize,
    ) -> Result<(TapeVal, Vec<DeepHead>)> {
        let mut reduced = Vec::with_capacity(block_outputs.len());
        let mut deep = Vec::with_capacity(block_outputs.len());
        for (i, &block) in block_outputs.iter().enumerate() {
            let len = tape.shape(block)[1];
            let w = self.p(&format!("pred.reduce{}.w", i + 1))?;
            let b = self.p(&format!("pred.reduce{}.b", i + 1))?;
            let r = tape.conv1d(block, w, b, 1)?;
            reduced.push(tape.resize_linear(r, n)?);
            let head = self.taped_aux_head(
                tape,
                &format!("pred.deep{}.w", i + 1),
                &format!("pred.deep{}.b", i + 1),
                block,
            )?;
            deep.push(DeepHead { val: head, len });
        }
        let fused = tape.concat_rows(&reduced)?;
        let w1 = self.p("pred.stack.c1.w")?;
        let b1 = self.p("pred.stack.c1.b")?;
        let y = tape.conv1d(fused, w1, b1, 1)?;
        let y = tape.relu(y)?;
        let w2 = self.p("pred.stack.c2.w")?;
        let b2 = self.p("pred.stack.c2.b")?;
        let y = tape.conv1d(y, w2, b2, 1)?;
        let y = tape.relu(y)?;
        let w3 = self.p("pred.stack.c3.w")?;
        let b3 = self.p("pred.stack.c3.b")?;
        let y = tape.conv1d(y, w3, b3, 1)?;
        let y = tape.relu(y)?;
        Ok((y, deep))
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl Net<'_> {
    /// Runs the whole network on one segment's samples (a 1-D tensor, or a
    /// pre-shaped `C0×N` map). A bound net may run several segments on the
    /// same tape; gradients then accumulate per parameter.
    pub fn run(&self, tape: &mut Tape, samples: &Tensor) -> Result<ForwardPass> {
        let input_map = match samples.rank() {
            1 => Tensor::new(vec![1, samples.len()], samples.data().to_vec())?,
            2 => samples.clone(),
            r => {
                return Err(TauError::ShapeMismatch(format!(
                    "segment input of rank {}",
                    r
                )))
            }
        };
        if input_map.rows() != self.cfg.input_channels {
            return Err(TauError::ShapeMismatch(format!(
                "{} input channels, config wants {}",
                input_map.rows(),
                self.cfg.input_channels
            )));
        }
        let n = input_map.cols();
        let input = tape.constant(input_map);
        let mut attention_rows = Vec::new();

        let (x_e, skips) = self.encoder_forward(tape, input)?;
        let enc_len = tape.shape(x_e)[1];

        let (x_t, enc_aux, time_aux, trace) = if self.cfg.uses_time_module() {
            let (x_t, y_enc, y_t, trace) = self.time_module(tape, x_e, n, &mut attention_rows)?;
            (Some(x_t), Some(y_enc), Some(y_t), Some(trace))
        } else {
            (None, None, None, None)
        };

        let blocks = self.decoder_forward(tape, x_e, x_t, &skips, &mut attention_rows)?;
        let (prediction, deep) = self.predict(tape, &blocks, n)?;

        Ok(ForwardPass {
            prediction,
            enc_aux,
            time_aux,
            deep,
            enc_len,
            trace,
            attention_rows,
        })
    }
}

/// Binds the weights and runs one forward pass.
pub fn forward(
    tape: &mut Tape,
    cfg: &TauConfig,
    weights: &ModelWeights,
    samples: &Tensor,
) -> Result<ForwardPass> {
    Net::bind(tape, cfg, weights)?.run(tape, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_examples() {
        assert_eq!(phase(300.0, 100.0).unwrap(), (0.0, 0.0));
        assert_eq!(phase(250.0, 100.0).unwrap(), (50.0, 50.0));
        assert_eq!(phase(130.0, 100.0).unwrap(), (30.0, 30.0));
        assert!(phase(10.0, 0.0).is_err());
        assert!(phase(-1.0, 10.0).is_err());
    }

    #[test]
    fn aux_head_examples() {
        let x = Tensor::from_rows(&[vec![1.0, -1.0, 3.0]]).unwrap();
        let zero_w = Tensor::zeros(&[1, 1]);
        assert_eq!(aux_head(&x, &zero_w, 0.0).unwrap().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(
            aux_head(&x, &zero_w, -1.0).unwrap().data(),
            &[0.0, 0.0, 0.0]
        );
        let w = Tensor::from_rows(&[vec![2.0]]).unwrap();
        assert_eq!(aux_head(&x, &w, 0.0).unwrap().data(), &[2.0, 0.0, 6.0]);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn sinusoidal_embedding_is_bounded() {
        let e = sinusoidal_embedding(37.0, 16);
        assert_eq!(e.len(), 16);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        // position 0: sin terms 0, cos terms 1
        let z = sinusoidal_embedding(0.0, 4);
        assert_eq!(z, vec![0.0, 1.0, 0.0, 1.0]);
    }
}
