//! Encoder, heads and the query/key branch pair.

mod branch;
mod encoder;
mod heads;

use serde::{Deserialize, Serialize};

pub use branch::{init_branches, Branch};
pub use encoder::{encode, Encoder, EncoderTrace, ResBlock};
pub use heads::{classify, predict, project, ClassifierHead, ClassifierTrace, Mlp, MlpTrace, NormMode};

use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dilation {
    /// Block `i` uses dilation `2^i`.
    Exponential,
    /// Block `i` uses dilation `max(1, 2i)`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_leads: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub num_blocks: usize,
    pub kernel_size: usize,
    pub dilation: Dilation,
    pub pooling: Pooling,
    /// Width of the classifier's hidden layer.
    pub classifier_hidden: usize,
    pub classifier_dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_leads: 12,
            hidden_dim: 64,
            output_dim: 320,
            num_blocks: 10,
            kernel_size: 3,
            dilation: Dilation::Exponential,
            pooling: Pooling::Max,
            classifier_hidden: 320,
            classifier_dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("input_leads", self.input_leads),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
            ("num_blocks", self.num_blocks),
            ("kernel_size", self.kernel_size),
            ("classifier_hidden", self.classifier_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.kernel_size % 2 == 0 {
            return Err(ModelError::InvalidConfig("kernel_size must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.classifier_dropout) {
            return Err(ModelError::InvalidConfig("classifier_dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn block_dilation(&self, block: usize) -> usize {
        match self.dilation {
            Dilation::Exponential => 1usize << block,
            Dilation::Linear => (2 * block).max(1),
        }
    }

    /// Timestamps the block stack can see: `1 + Σ_i 2·(k-1)·d_i`.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.num_blocks)
            .map(|i| 2 * (self.kernel_size - 1) * self.block_dilation(i))
            .sum::<usize>()
    }
}
