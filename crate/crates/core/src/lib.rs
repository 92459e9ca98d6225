//! Emotion-aware face super-resolution.
//!
//! An RRDB super-resolution trunk is conditioned on a 478-point facial landmark
//! graph: a GCN embeds the landmarks, the embeddings are rasterized onto the
//! feature grid, and split-attention fusion mixes them into the trunk. Training
//! combines pixel, histogram, style and embedding losses; evaluation adds the
//! emotion consistency metric computed with a pluggable expression classifier.
//!
//! Start with the runnable programs under `examples/`.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fer;
pub mod gcn;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod msaf;
pub mod nn;
pub mod params;
pub mod run;
pub mod synth;
pub mod training;

pub use data::{ImageTensor, LandmarkSet, SamplePair, HR_SIZE, NUM_LANDMARKS};
pub use error::{Error, Result};
pub use eval::{evaluate, run_ablation, EvalReport, Method, MetricSet};
pub use fer::{toy_classifier, ConfidenceVector, FerPlugin};
pub use graph::FaceGraph;
pub use losses::LossWeights;
pub use metrics::{ecm, psnr, ssim, EcmReport};
pub use model::{AffectSrNet, ModelConfig, Variant};
pub use training::{init_params, TrainConfig, Trainer};
