//! Desk-scale simulation of federated learning over input-driven quantum
//! chips.
//!
//! A server holds a parameterized real-orthogonal operator `O(θ)` and ships
//! it to clients as a quantum state (the vec-encoding of the matrix, or a
//! superposition of parameter-shifted encodings). Clients feed that state
//! into a fixed chip that applies the encoded operator to local data via
//! controlled matrix units, a Hadamard readout, and post-selection; from the
//! post-selected output they estimate loss gradients and return them for
//! server-side aggregation.
//!
//! Modules:
//! - [`statevec`]: dense state-vector engine (registers, controlled and
//!   non-unitary operations, post-selection, sampling).
//! - [`chip`]: the input-driven chip — vec-encoding, the matrix-unit
//!   selector pipeline, LCU synthesis, permuted block-diagonal
//!   decomposition.
//! - [`model`]: the server-side ansatz, inner-product loss, exact gradients,
//!   and shift-state preparation.
//! - [`fedsim`]: round orchestration, FedSGD/FedAvg aggregation,
//!   retransmission, and the communication ledger.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the `*64` aliases below pin the `f64` instantiation that the documented
//! tolerances assume.

pub mod chip;
pub mod fedsim;
pub mod model;
pub mod scalar;
pub mod statevec;

pub use scalar::Scalar;
pub use statevec::{EstimationMode, MeasurementSample, RegisterSpan};

/// `f64` state vector.
pub type PureState64 = statevec::PureState<f64>;
/// `f32` state vector.
pub type PureState32 = statevec::PureState<f32>;
/// `f64` gate matrix.
pub type GateMatrix64 = statevec::GateMatrix<f64>;
/// `f64` real operator.
pub type RealOperator64 = chip::RealOperator<f64>;
/// `f32` real operator.
pub type RealOperator32 = chip::RealOperator<f32>;
/// `f64` vec-encoded operator.
pub type VecEncodedOperator64 = chip::VecEncodedOperator<f64>;
/// `f64` parameter vector.
pub type ParamVector64 = model::ParamVector<f64>;
/// `f64` labeled example.
pub type LabeledExample64 = model::LabeledExample<f64>;
/// `f64` training configuration.
pub type TrainingConfig64 = fedsim::TrainingConfig<f64>;
