//! Typed multi-network models: graphs of small dense networks jointly
//! trained on classification, regression and sample generation under one
//! weighted loss.

pub mod combinators;
pub mod eval;
pub mod graph;
pub mod harness;
pub mod nnet;
pub mod presets;
pub mod runtime;
pub mod synthesis;
pub mod validator;

pub use combinators::{combine, combine_type, infer_types, TypeReport};
pub use eval::{
    accuracy, class_entropy, conditioning_accuracy, train_oracle, OracleClassifier, OracleConfig,
};
pub use graph::{
    CombinerKind, ComponentKind, Connection, ConnectionId, DataBatch, DataType, DataUnitSpec,
    GraphError, Hyperparams, LossBinding, LossKind, ModelGraph, ModelInputSpec, ModelOutputSpec,
    NetworkParams, NetworkType, PrimaryNetworkSpec, STD_NORMAL,
};
pub use nnet::{Activation, Initializer, OptimizerKind};
pub use runtime::{
    compile, ColumnGroups, DataSource, ExecutableModel, LossTrace, Mode, RuntimeError,
};
pub use synthesis::{attach_losses, initialize, Betas, IntRange, SynthesisConfig, SynthesisError};
pub use validator::{validate, ValidationReport, Violation};
