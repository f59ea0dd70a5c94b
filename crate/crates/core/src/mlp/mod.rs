//! The classifier head: a small rectifier MLP with a hand-written backward
//! pass and an Adam optimizer.

mod adam;
mod io;
mod net;
mod params;

pub use adam::{adam_step, AdamState};
pub use io::{decode_weights, encode_weights, load_weights, load_weights_for, save_weights, WEIGHTS_MAGIC};
pub use net::{backward, forward, predict, ForwardCache};
pub use params::{layer_dims, Activation, Dense, MlpParams, DEFAULT_HIDDEN};
