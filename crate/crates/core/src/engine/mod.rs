//! Encoder-stack inference over shares, the PTIF model format and a
//! plaintext fixed-point reference runner.

mod bundle;
mod forward;
mod reference;

use serde::{Deserialize, Serialize};

pub use bundle::{load_model, BlockWeights, ModelBundle, WeightTensor, PTIF_MAGIC, PTIF_VERSION};
pub use forward::{encoder_block_forward, model_forward, reveal_to_client, share_input};
pub use reference::{plaintext_reference_forward, reference_block_forward, reference_forward};

pub use crate::mpc::cost::CostReport;
use crate::error::{ModelError, Result};
use crate::fixed::FixedPointParams;
use crate::nn::OperatorVariant;

/// Architecture of an encoder stack. Public to both parties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_blocks: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    /// Classifier outputs; 0 means no head.
    pub num_labels: usize,
    pub variants: Vec<OperatorVariant>,
    pub ring_bits: u32,
    pub frac_bits: u32,
}

impl ModelConfig {
    /// Two blocks, `E = 128`, two 64-dim heads, `4E` feed-forward.
    pub fn bert_tiny() -> Self {
        Self::new(2, 128, 2, 128, 2)
    }

    pub fn new(n_blocks: usize, embed_dim: usize, n_heads: usize, max_seq_len: usize, num_labels: usize) -> Self {
        let fp = FixedPointParams::default();
        Self {
            n_blocks,
            embed_dim,
            n_heads,
            ffn_dim: 4 * embed_dim,
            max_seq_len,
            num_labels,
            variants: vec![OperatorVariant::default(); n_blocks],
            ring_bits: fp.ell(),
            frac_bits: fp.frac(),
        }
    }

    /// Same operator choice in every block.
    pub fn with_variant(mut self, v: OperatorVariant) -> Self {
        self.variants = vec![v; self.n_blocks];
        self
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads.max(1)
    }

    pub fn fixed(&self) -> Result<FixedPointParams> {
        FixedPointParams::new(self.ring_bits, self.frac_bits)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "embed_dim {} is not a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.ffn_dim == 0 || self.max_seq_len == 0 {
            return bad("ffn_dim and max_seq_len must be positive".into());
        }
        if self.variants.len() != self.n_blocks {
            return bad(format!(
                "{} operator variants for {} blocks",
                self.variants.len(),
                self.n_blocks
            ));
        }
        if let Err(e) = self.fixed() {
            return bad(e.to_string());
        }
        Ok(())
    }
}
