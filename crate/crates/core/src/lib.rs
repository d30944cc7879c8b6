//! Data-driven substructuring for braced-frame hysteresis.
//!
//! The crate learns a brace's restoring-force law from cyclic test data by
//! regressing onto a dictionary of stop operators with an ℓ₁ penalty, then
//! plugs the learned law back into a single-storey frame as a substructure,
//! either in-process or across a TCP socket.
//!
//! Module map:
//!
//! - [`series`]: paired time / displacement / force records and their CSV form.
//! - [`hysteresis`]: the stop operator and weighted stop-operator superposition.
//! - [`lasso`]: coordinate-descent solver for ℓ₁-regularised least squares.
//! - [`pisindy`]: threshold grid, library assembly, training, prediction, model files.
//! - [`materials`]: reference brace materials and cyclic loading protocols.
//! - [`frame`]: the single-DOF frame, ground motions, and Newmark integration.
//! - [`coupling`]: the lockstep displacement→force wire protocol.

pub mod coupling;
pub mod frame;
pub mod hysteresis;
pub mod lasso;
pub mod materials;
pub mod pisindy;
pub mod provider;
pub mod series;

pub use hysteresis::{PiModelDef, StopOperator};
pub use lasso::{LassoOptions, LibraryMatrix, SparseSolution};
pub use pisindy::{PredictionResult, TrainedPiModel};
pub use provider::{BraceProvider, ProviderError};
pub use series::SignalSeries;
