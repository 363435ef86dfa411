//! A small hand-differentiated layer toolkit: dense layers, activations,
//! time-shared application over masked sequences, (bi)LSTM, Adam, losses and
//! gradient checking. Everything is `f64` and single-threaded, so identical
//! inputs give bit-identical results.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod packed;
pub mod tensor;

pub use adam::AdamState;
pub use layers::{Activation, Dense, Param};
pub use lstm::{BiLstm, Direction, Lstm};
pub use packed::{pack, time_shared, unpack, Packed};
pub use tensor::Tensor;
