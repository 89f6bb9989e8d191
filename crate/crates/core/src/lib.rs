//! Kronecker-factored preconditioners (KL-Shampoo, SOAP, KL-SOAP) with an
//! eigenbasis-relative state parametrization and subspace basis refreshes.
//!
//! The optimizer keeps, for each factor of a weight matrix, an orthogonal
//! basis `Q`, eigenvalue estimates `λ` and a companion matrix. The companion
//! is either the factor `S` itself ([`Parametrization::Old`]) or its
//! representation `P = QᵀSQ` in the current basis ([`Parametrization::New`]).
//! Both produce the same iterates; the second is cheaper per step and allows
//! refreshing only a block of basis vectors at a time.
//!
//! ```
//! use precond::{init_layer, OptimConfig, Precision, StorageMatrix};
//!
//! let config = OptimConfig { storage: Precision::Fp64, ..Default::default() };
//! let mut layer = init_layer(4, 3, &config).unwrap();
//! let grad = StorageMatrix::from_vec(4, 3, (0..12).map(|x| x as f64).collect(), Precision::Fp64).unwrap();
//! let report = layer.step(&grad, &config).unwrap();
//! assert!(report.refreshed);
//! ```

pub mod config;
pub mod decomp;
pub mod error;
pub mod harness;
pub mod matcore;
pub mod shampoo;
pub mod soap;
pub mod subspace;

pub use config::{BasisSolver, Method, OptimConfig, Parametrization, RotateV, Selection};
pub use error::{Error, Result};
pub use matcore::{CostCounts, CostLedger, Precision, StorageBuffer, StorageMatrix};
pub use shampoo::{init_layer, FactorState, LayerState, Rotation, StepReport};
