//! Cross-modal encoder-decoder Transformer and its prediction heads.

mod assemble;
mod config;
mod network;
mod params;

pub use assemble::{assemble_input, assemble_prompt, AssembledInput, RoIFeature, Segment};
pub use config::ModelConfig;
pub use network::Network;
pub use params::{decays, Bound, InitScheme, ModelParams};
