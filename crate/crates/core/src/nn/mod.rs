//! Convolutional and recurrent classifiers with hand-written backpropagation.
//!
//! Each of the `p` selected features becomes one step of a single-channel
//! sequence, in dataset column order.

pub mod io;
mod layers;
pub mod loss;
pub mod network;
pub mod spec;
pub mod train;

pub use io::{load_state, save_state};
pub use loss::{cross_entropy, softmax};
pub use network::{
    backward, batch_from_rows, build_network, forward, predict, predict_proba, Cache, Mode, NetworkState,
};
pub use spec::{architecture_spec, ArchOptions, Architecture, LayerSpec, NetworkSpec, Shape};
pub use train::{fit_network, train, NetworkConfig, TrainConfig};
