//! The TMAE network: transformer encoder over `[demographics; e_1..e_T]`,
//! patient-embedding bottleneck, query-driven non-autoregressive decoder,
//! code and cost heads, and the joint loss.

pub mod check;
mod config;
mod tmae;
pub mod transformer;

pub use check::{fixture as gradcheck_fixture, tmae_grad_check, GradCheckReport};
pub use config::{Activation, ModelConfig, Variant};
pub use tmae::{
    joint_loss, DecoderOutput, EncoderOutput, ForwardPass, LossTerms, PreparedPatient, TmaeNet,
};
