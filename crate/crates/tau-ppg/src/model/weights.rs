//! Named parameter tensors in a deterministic order.

use super::config::TauConfig;
use crate::error::{Result, TauError};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Ordered map from parameter path to tensor. The order is fixed by the
/// configuration, which makes initialization, optimizer state, and file
/// serialization reproducible.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    entries: Vec<(String, Tensor)>,
}

impl ModelWeights {
    /// Seeded random initialization for the given configuration.
    ///
    /// Convolutions use He-style scaling, projections Xavier-style, and the
    /// phase embedding table a unit Gaussian. Biases start at zero.
    pub fn init(cfg: &TauConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        for (name, shape) in parameter_shapes(cfg) {
            let std = init_std(&name, &shape);
            let data = if std == 0.0 {
                vec![0.0; shape.iter().product()]
            } else {
                let dist = Normal::new(0.0, std)
                    .map_err(|e| TauError::Numeric(format!("init distribution: {}", e)))?;
                (0..shape.iter().product())
                    .map(|_| dist.sample(&mut rng))
                    .collect()
            };
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { entries })
    }

    /// Builds weights from named tensors, checking that they are exactly
    /// the set the configuration demands, shape by shape.
    pub fn from_entries(cfg: &TauConfig, entries: Vec<(String, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let expected = parameter_shapes(cfg);
        if entries.len() != expected.len() {
            return Err(TauError::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                entries.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in entries.iter().zip(&expected) {
            if name != want_name {
                return Err(TauError::ShapeMismatch(format!(
                    "parameter '{}' where '{}' was expected",
                    name, want_name
                )));
            }
            if tensor.shape() != &want_shape[..] {
                return Err(TauError::ShapeMismatch(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    name,
                    tensor.shape(),
                    want_shape
                )));
            }
            tensor.check_finite(name)?;
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tensor_at(&self, idx: usize) -> &Tensor {
        &self.entries[idx].1
    }

    pub fn tensor_at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.entries[idx].1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

fn init_std(name: &str, shape: &[usize]) -> f64 {
    if name.ends_with(".b") || name.ends_with("_b") {
        return 0.0;
    }
    if name == "time.embed" {
        return 1.0;
    }
    match shape.len() {
        // conv kernels: fan-in = in_channels * kernel
        3 => (2.0 / (shape[1] * shape[2]) as f64).sqrt(),
        // projections and heads: fan-in = columns... rows x cols, input dim = rows
        2 => (1.0 / shape[0].max(1) as f64).sqrt(),
        _ => 0.0,
    }
}

/// Enumerates every parameter the configuration demands, in creation and
/// serialization order.
pub fn parameter_shapes(cfg: &TauConfig) -> Vec<(String, Vec<usize>)> {
    let plan = cfg.width_plan();
    let k = cfg.kernel;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();

    let conv_pair = |out_v: &mut Vec<(String, Vec<usize>)>, prefix: &str, cin: usize, cout: usize| {
        out_v.push((format!("{}.c1.w", prefix), vec![cout, cin, k]));
        out_v.push((format!("{}.c1.b", prefix), vec![cout]));
        if plan.double_convs {
            out_v.push((format!("{}.c2.w", prefix), vec![cout, cout, k]));
            out_v.push((format!("{}.c2.b", prefix), vec![cout]));
        }
    };
    let attn = |out_v: &mut Vec<(String, Vec<usize>)>, prefix: &str, dim: usize| {
        for p in ["wq", "wk", "wv", "wo"] {
            out_v.push((format!("{}.{}", prefix, p), vec![dim, dim]));
        }
        for p in ["bq", "bk", "bv", "bo"] {
            out_v.push((format!("{}.{}", prefix, p), vec![dim]));
        }
    };

    // encoder
    let mut cin = cfg.input_channels;
    for (b, &cout) in plan.enc_block_out.iter().enumerate() {
        conv_pair(&mut out, &format!("enc.b{}", b + 1), cin, cout);
        cin = cout;
    }
    conv_pair(&mut out, "enc.final", cin, plan.enc_final_out);

    // time module
    if plan.time_module {
        out.push(("time.head.w".into(), vec![1, plan.enc_final_out]));
        out.push(("time.head.b".into(), vec![1]));
        out.push(("time.embed".into(), vec![cfg.phase_vocab, cfg.embed_dim]));
        attn(&mut out, "time.attn", cfg.embed_dim);
        conv_pair(&mut out, "time.out", cfg.embed_dim, plan.enc_final_out);
        out.push(("time.aux.w".into(), vec![1, cfg.embed_dim]));
        out.push(("time.aux.b".into(), vec![1]));
    }

    // decoder
    conv_pair(&mut out, "dec.input", plan.dec_input_in, plan.dec_input_out);
    for (i, block) in plan.dec_blocks.iter().enumerate() {
        let prefix = format!("dec.b{}", i + 1);
        if plan.decoder_attention {
            attn(&mut out, &format!("{}.attn", prefix), block.in_ch);
        }
        if plan.up_convs {
            out.push((format!("{}.up1.w", prefix), vec![block.in_ch, block.in_ch, k]));
            out.push((format!("{}.up1.b", prefix), vec![block.in_ch]));
            out.push((format!("{}.up2.w", prefix), vec![block.in_ch, block.in_ch, k]));
            out.push((format!("{}.up2.b", prefix), vec![block.in_ch]));
        }
        conv_pair(&mut out, &format!("{}.halve", prefix), block.in_ch, block.halved);
    }

    // prediction module
    for (i, block) in plan.dec_blocks.iter().enumerate() {
        out.push((
            format!("pred.reduce{}.w", i + 1),
            vec![plan.reduce_width, block.out_ch, 1],
        ));
        out.push((format!("pred.reduce{}.b", i + 1), vec![plan.reduce_width]));
    }
    let concat_ch = plan.reduce_width * plan.dec_blocks.len();
    let (s1, s2) = plan.stack_widths;
    out.push(("pred.stack.c1.w".into(), vec![s1, concat_ch, k]));
    out.push(("pred.stack.c1.b".into(), vec![s1]));
    out.push(("pred.stack.c2.w".into(), vec![s2, s1, k]));
    out.push(("pred.stack.c2.b".into(), vec![s2]));
    out.push(("pred.stack.c3.w".into(), vec![1, s2, k]));
    out.push(("pred.stack.c3.b".into(), vec![1]));
    for (i, block) in plan.dec_blocks.iter().enumerate() {
        out.push((format!("pred.deep{}.w", i + 1), vec![1, block.out_ch]));
        out.push((format!("pred.deep{}.b", i + 1), vec![1]));
    }
    out
}
