//! Dense feed-forward networks with reverse-mode gradients, an Adam
//! optimizer and a binary checkpoint format.

mod adam;
pub mod checkpoint;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, ForwardTrace, Gradients, Layer, Mlp};
