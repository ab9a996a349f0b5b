//! Simulation-backed segmentation of 3D intracranial ultrasound.
//!
//! The crate covers the whole desk-scale pipeline: MetaImage volumes and
//! resampling ([`volume`], [`mhd`]), tissue maps ([`tissue`]), a hybrid
//! ray-tracing/convolution B-mode simulator ([`simulate`]), forward
//! compounding of posed sweeps ([`compound`]), augmentation and patch
//! sampling ([`augment`]), a compact dense fully-convolutional network with
//! soft-Dice training ([`net`]), overlap/surface-distance metrics
//! ([`metrics`]) and experiment orchestration ([`pipeline`]).

pub mod augment;
pub mod compound;
pub mod error;
pub mod metrics;
pub mod mhd;
pub mod net;
pub mod phantom;
pub mod pipeline;
pub mod pose;
pub mod rng;
pub mod simulate;
pub mod tissue;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Grid, Interpolation, Volume3D, VoxelData};
