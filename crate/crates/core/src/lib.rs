//! Neural cellular automata manifold.
//!
//! An encoder maps an image to a continuous code, optionally round-tripped
//! through a categorical four-letter "DNA" code. A parameter predictor turns
//! the code into the kernels of a small cellular automaton, which grows the
//! image back from a single seed cell.

pub mod checkpoint;
pub mod data;
pub mod dna;
pub mod encoder;
pub mod error;
pub mod genelab;
pub mod image_io;
pub mod layers;
pub mod model;
pub mod nca;
pub mod optim;
pub mod params;
pub mod predictor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, DatasetSpec, GlyphStyle};
pub use dna::DnaEncoding;
pub use error::{NcamError, Result};
pub use model::{EncodingMode, ForwardOptions, ModelConfig, Ncam};
pub use train::{evaluate, EvalOptions, TrainConfig, Trainer};
pub use ncam_autodiff::Tensor;
