use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::invalid(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Weight of the code-reconstruction term.
    pub lambda: f64,
    pub dropout: f64,
    pub activation: Activation,
    /// Off gives P-TMAE: full-width code vectors without category halves.
    pub use_category_concat: bool,
    /// Off gives C-TMAE: the cost term is reported but not optimized.
    pub use_cost_loss: bool,
    /// Learned date and cost-bin tables instead of fixed sinusoids.
    pub learned_date_cost: bool,
    /// Decoder additionally attends to the encoder's visit outputs.
    pub cross_attend: bool,
    /// Cost head output is multiplied by the training-set mean visit cost;
    /// predictions and the loss stay in dollars.
    pub scale_cost_target: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            heads: 4,
            ff_width: 256,
            enc_layers: 1,
            dec_layers: 1,
            lambda: 2e-6,
            dropout: 0.0,
            activation: Activation::Gelu,
            use_category_concat: true,
            use_cost_loss: true,
            learned_date_cost: false,
            cross_attend: false,
            scale_cost_target: true,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Default configuration at width `d` (feed-forward width `4d`).
    pub fn with_width(d: usize, heads: usize) -> Self {
        ModelConfig {
            d,
            heads,
            ff_width: 4 * d,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(Error::invalid(format!("model.d must be even and positive, got {}", self.d)));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::invalid(format!(
                "model.d ({}) must be divisible by model.heads ({})",
                self.d, self.heads
            )));
        }
        if self.ff_width == 0 {
            return Err(Error::invalid("model.ff_width must be positive"));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::invalid("layer counts must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("model.lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("model.dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::invalid("layer norm eps must be positive"));
        }
        Ok(())
    }
}

/// The full model and its two ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "tmae")]
    Tmae,
    /// No category concatenation.
    #[serde(rename = "p-tmae")]
    PTmae,
    /// No cost reconstruction term.
    #[serde(rename = "c-tmae")]
    CTmae,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Tmae, Variant::PTmae, Variant::CTmae];

    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut cfg = cfg.clone();
        match self {
            Variant::Tmae => {
                cfg.use_category_concat = true;
                cfg.use_cost_loss = true;
            }
            Variant::PTmae => {
                cfg.use_category_concat = false;
                cfg.use_cost_loss = true;
            }
            Variant::CTmae => {
                cfg.use_category_concat = true;
                cfg.use_cost_loss = false;
            }
        }
        cfg
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tmae => "TMAE",
            Variant::PTmae => "P-TMAE",
            Variant::CTmae => "C-TMAE",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tmae" => Ok(Variant::Tmae),
            "p-tmae" | "ptmae" => Ok(Variant::PTmae),
            "c-tmae" | "ctmae" => Ok(Variant::CTmae),
            _ => Err(Error::invalid(format!("unknown variant {s:?}"))),
        }
    }
}
