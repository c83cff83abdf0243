//! Semi-supervised labeling of visual relationships from a few examples per
//! predicate.
//!
//! Object pairs are described by image-agnostic features (relative box
//! geometry and one-hot categories). Shallow decision trees fitted on the
//! labeled examples act as heuristics that vote or abstain on unlabeled
//! pairs; a generative label model learns each heuristic's accuracy without
//! ground truth and emits probabilistic labels, which then train a
//! noise-aware linear predicate classifier.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for common use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod dataset;
pub mod downstream;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod heuristics;
pub mod labelmodel;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synthgen;

pub use dataset::{
    load_dataset, split_limited, split_with, SceneGraphDataset, SplitConfig, SplitDataset,
};
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, run_pipeline_on, Method, PipelineConfig, PipelineReport};
pub use scalar::Scalar;

pub type BoundingBoxF32 = dataset::BoundingBox<f32>;
pub type BoundingBoxF64 = dataset::BoundingBox<f64>;
pub type SpatialFeaturesF32 = features::SpatialFeatures<f32>;
pub type SpatialFeaturesF64 = features::SpatialFeatures<f64>;
pub type DecisionTreeF32 = heuristics::DecisionTree<f32>;
pub type DecisionTreeF64 = heuristics::DecisionTree<f64>;
pub type LabelModelParamsF32 = labelmodel::LabelModelParams<f32>;
pub type LabelModelParamsF64 = labelmodel::LabelModelParams<f64>;
pub type FitReportF32 = analysis::FitReport<f32>;
pub type FitReportF64 = analysis::FitReport<f64>;
