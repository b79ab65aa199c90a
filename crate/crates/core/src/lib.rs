//! Integer multiplication as a purely local rule.
//!
//! Two binary operands are laid out as their outer product on a `2n × n`
//! grid. A synchronous rule that only looks at 3×3 neighbourhoods (diagonal
//! flow plus column-0 carries) drives the grid to a fixed point whose first
//! column is the product. A two-layer convolutional network with a few
//! hundred parameters learns that rule from random intermediate states and
//! then multiplies operands far wider than anything it saw in training.
//!
//! Modules, bottom-up: [`oracle`] (reference arithmetic), [`grid`],
//! [`rule`] (exact local rule), [`model`] (learned rule, inference),
//! [`train`], [`eval`].

pub mod error;
pub mod eval;
pub mod grid;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod rule;
pub mod train;

pub use error::{Error, Result};
pub use grid::{decode_product, outer_product_encode, parity_encode, EncodedGrid, Grid};
pub use model::{infer, nca_step, project, MlpModel, ModelKind, NcaModel, RuleNet};
pub use oracle::{decimal_digit_count, multiply_oracle, random_nbit, BitVec};
pub use rule::{evolve_to_fixed_point, ground_truth_step, is_fixed_point, sample_chaos_state};
pub use train::{train, TrainConfig, TrainMetrics};
