//! Multi-instance learning with the single-instance (SI) method.
//!
//! Bags are unpacked into instances that inherit their bag's label, and an
//! ordinary classifier is trained on the result. The crate provides the data
//! model, a synthetic benchmark with a tunable violation of the mixing
//! assumption, the SI / soft-NOR / unbiased-noisy-label losses, small sigmoid
//! networks trained with full-batch Adam, closed-form optima of the SI
//! objective, and average-precision evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision instantiations.

pub mod bag;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod scalar;
pub mod synth;
pub mod theory;
pub mod train;

pub use bag::{balance, unpack, Bag, Instance, MilConfig, Origin, TrainingView, UnpackedDataset};
pub use error::{MilError, Result};
pub use experiment::{
    render_heatmap, run_bag_size_sweep, run_table1, run_table1_with, run_theory_report, run_toy_multilabel, ArchKind, ExperimentConfig,
    HeatmapGrid, HeatmapSpec, LossKind, Precision, RegionStats, Table1, Table1Cell, ToyConfig,
};
pub use metrics::{
    average_precision, average_precision_bruteforce, bag_max_score, map_over_labels, per_label_ap, MapReport, PrCurve, PrPoint,
};
pub use model::{Adam, Architecture, Mlp};
pub use objectives::{
    bag_cost_soft_nor, si_bag_cost, si_loss, soft_nor, uc_loss, BagBatch, BagObjective, InstanceLoss, LossReport, NoiseRates,
};
pub use scalar::Scalar;
pub use synth::{densities, generate, generate_bags, PiecewiseUniformDensity, Segment, SynthSpec};
pub use theory::{
    f_prime_from_f, mixing_optimum, mixing_tolerance, nonmixing_optimum, scalar_profile_argmax, SegmentVerdict, TheoremSolution, Verdict,
};
pub use train::{train, train_bags, BagSet, Checkpoint, RunRecord, TrainConfig, TrainedModel};

pub type Dataset64 = UnpackedDataset<f64>;
pub type Dataset32 = UnpackedDataset<f32>;
pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type TrainedModel64 = TrainedModel<f64>;
pub type LossReport64 = LossReport<f64>;
pub type Density64 = PiecewiseUniformDensity<f64>;
