//! Axially separable residual networks: tensors, autodiff, residual and
//! recursive blocks, a model zoo, cost accounting, training and data I/O.

pub mod blocks;
pub mod check;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod session;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use blocks::{BlockKind, BlockSpec, Builder, ConvRole, PairOptions, RecursiveSpec};
pub use error::{Error, Result};
pub use params::{Init, ParamDecl, ParamStore};
pub use rng::Rng;
pub use session::{forward, Session};
pub use tensor::{Element, Tensor};
pub use zoo::{ClassifierConfig, Family, ModelGraph, RecursiveConfig, Task};
