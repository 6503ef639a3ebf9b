//! The six-stage network: item and time-interval embeddings, bidirectional
//! GRU encoding, interval-driven attention weights, time gating, first/last
//! anchored self attention, and scoring against the item table.

mod batch;
mod forward;
mod params;
mod time;

pub use batch::{Batch, SampleView};
pub use forward::{BatchOutput, ForwardTrace, GruTrace, Mode};
pub use params::{StarModel, ITEM_TABLE};
pub use time::{decompose_interval, Hms, Side, MAX_HMS};

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, StarError};

/// Which training objective to minimise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// `-ln ŷ[target]`.
    #[default]
    Categorical,
    /// `-Σ_i [y_i ln ŷ_i + (1 - y_i) ln(1 - ŷ_i)]` over all items.
    Literal,
}

impl FromStr for LossMode {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(LossMode::Categorical),
            "literal" => Ok(LossMode::Literal),
            other => Err(StarError::InvalidArgument(format!("unknown loss mode `{other}`"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Categorical => "categorical",
            LossMode::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_items: usize,
    pub dim: usize,
    pub self_attention: bool,
    pub time_attention: bool,
    pub dropout: f64,
    /// Run both GRU directions with one parameter set.
    pub share_gru_weights: bool,
    pub loss: LossMode,
}

impl ModelConfig {
    pub fn new(n_items: usize, dim: usize) -> Self {
        ModelConfig {
            n_items,
            dim,
            self_attention: true,
            time_attention: true,
            dropout: 0.0,
            share_gru_weights: false,
            loss: LossMode::Categorical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_items == 0 {
            return Err(StarError::InvalidArgument(format!(
                "model needs n > 0 and d > 0, got n = {} d = {}",
                self.n_items, self.dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(StarError::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Width of the prediction head input.
    pub fn head_inputs(&self) -> usize {
        if self.self_attention {
            6 * self.dim
        } else {
            2 * self.dim
        }
    }
}
