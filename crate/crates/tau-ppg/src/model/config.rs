//! Model configuration, ablation variants, and the derived channel plan.

use crate::error::{Result, TauError};

/// Ablation ladder. Each step adds one component; all variants share the
/// same forward code and differ only in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// No time module, no decoder attention, trained on hard labels.
    Base,
    /// `Base` plus decoder attention.
    BaseAttention,
    /// `BaseAttention` plus distance-transform labels.
    BaseAttentionDistance,
    /// The complete model with the time module.
    Full,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::BaseAttention => "base-att",
            Variant::BaseAttentionDistance => "base-att-dt",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = TauError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "base-att" => Ok(Variant::BaseAttention),
            "base-att-dt" => Ok(Variant::BaseAttentionDistance),
            "full" => Ok(Variant::Full),
            other => Err(TauError::InvalidArgument(format!(
                "unknown variant '{}'",
                other
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TauConfig {
    /// Number of encoder/decoder blocks.
    pub depth: usize,
    /// Input channels of the raw segment (1 for plain PPG).
    pub input_channels: usize,
    /// Channels after the first encoder block; doubles per block.
    pub first_width: usize,
    /// Temporal embedding size.
    pub embed_dim: usize,
    /// How many nearest peaks feed each sample's distance sequence.
    pub closest_peaks: usize,
    /// Convolution kernel size (odd).
    pub kernel: usize,
    /// Attention heads.
    pub heads: usize,
    /// Peak-search threshold on the distance-label scale.
    pub threshold: f64,
    /// Size of the phase embedding table.
    pub phase_vocab: usize,
    /// Reduced architecture: single convolutions, no decoder attention,
    /// thin decoder widths.
    pub lite: bool,
    pub variant: Variant,
}

impl TauConfig {
    /// The default full-size configuration (~2.2 M parameters).
    pub fn tau() -> Self {
        Self {
            depth: 4,
            input_channels: 1,
            first_width: 8,
            embed_dim: 16,
            closest_peaks: 6,
            kernel: 9,
            heads: 2,
            threshold: 7.5,
            phase_vocab: 128,
            lite: false,
            variant: Variant::Full,
        }
    }

    /// The reduced configuration (~14.5 K parameters).
    pub fn tau_lite() -> Self {
        Self {
            depth: 3,
            first_width: 4,
            embed_dim: 4,
            kernel: 7,
            lite: true,
            ..Self::tau()
        }
    }

    /// Full-size config with an ablation variant applied.
    pub fn ablation(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::tau()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(TauError::InvalidArgument("depth must be >= 1".into()));
        }
        if self.first_width == 0 || self.input_channels == 0 {
            return Err(TauError::InvalidArgument("channel widths must be >= 1".into()));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(TauError::InvalidArgument(format!(
                "kernel size {} must be odd",
                self.kernel
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(TauError::InvalidArgument(format!(
                "embedding size {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.phase_vocab < 2 {
            return Err(TauError::InvalidArgument("phase vocabulary must be >= 2".into()));
        }
        if self.closest_peaks == 0 {
            return Err(TauError::InvalidArgument("closest_peaks must be >= 1".into()));
        }
        let plan = self.width_plan();
        if plan.decoder_attention {
            for block in &plan.dec_blocks {
                if block.in_ch % self.heads != 0 {
                    return Err(TauError::InvalidArgument(format!(
                        "decoder width {} not divisible by {} heads",
                        block.in_ch, self.heads
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn uses_time_module(&self) -> bool {
        matches!(self.variant, Variant::Full)
    }

    pub fn uses_decoder_attention(&self) -> bool {
        !self.lite && !matches!(self.variant, Variant::Base)
    }

    /// Hard-label variants search for high spots instead of low distances.
    pub fn uses_distance_labels(&self) -> bool {
        !matches!(self.variant, Variant::Base | Variant::BaseAttention)
    }

    /// Channels of the encoder output `x_e`.
    pub fn encoder_out_channels(&self) -> usize {
        self.first_width << self.depth
    }

    /// Derives the channel plan for every layer of the network.
    pub fn width_plan(&self) -> WidthPlan {
        let depth = self.depth;
        let enc_block_out: Vec<usize> = (0..depth).map(|b| self.first_width << b).collect();
        let enc_final_out = self.encoder_out_channels();
        let dec_input_in = if self.uses_time_module() {
            2 * enc_final_out
        } else {
            enc_final_out
        };
        // the lite decoder stays thin: the full-width one would dwarf the
        // parameter budget of the reduced model
        let dec_input_out = if self.lite {
            2 * self.first_width
        } else {
            enc_final_out
        };
        let mut dec_blocks = Vec::with_capacity(depth);
        let mut running = dec_input_out;
        for level in (1..=depth).rev() {
            let halved = (running / 2).max(1);
            let skip_ch = enc_block_out[level - 1];
            dec_blocks.push(DecBlockPlan {
                level,
                in_ch: running,
                halved,
                skip_ch,
                out_ch: halved + skip_ch,
            });
            running = halved + skip_ch;
        }
        let stack_widths = if self.lite {
            (4 * self.first_width, 2 * self.first_width)
        } else {
            (64, 32)
        };
        WidthPlan {
            enc_block_out,
            enc_final_out,
            dec_input_in,
            dec_input_out,
            dec_blocks,
            reduce_width: self.first_width,
            stack_widths,
            double_convs: !self.lite,
            up_convs: !self.lite,
            decoder_attention: self.uses_decoder_attention(),
            time_module: self.uses_time_module(),
        }
    }
}

/// One decoder block's channel counts, in execution order (coarse to fine).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecBlockPlan {
    /// Encoder level this block mirrors (1 = full resolution).
    pub level: usize,
    pub in_ch: usize,
    /// Channels after the halving convolution.
    pub halved: usize,
    /// Channels of the encoder skip feature concatenated on.
    pub skip_ch: usize,
    /// `halved + skip_ch`.
    pub out_ch: usize,
}

/// Channel widths of every layer, derived from [`TauConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WidthPlan {
    pub enc_block_out: Vec<usize>,
    pub enc_final_out: usize,
    pub dec_input_in: usize,
    pub dec_input_out: usize,
    pub dec_blocks: Vec<DecBlockPlan>,
    /// Per-block projection width feeding the output stack.
    pub reduce_width: usize,
    /// Hidden widths of the three-convolution output stack.
    pub stack_widths: (usize, usize),
    /// Two convolutions per "double conv" layer (one when false).
    pub double_convs: bool,
    /// Convolution pair inside each upsample step (absent in lite).
    pub up_convs: bool,
    pub decoder_attention: bool,
    pub time_module: bool,
}
