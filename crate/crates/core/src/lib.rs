//! Invariant nearly half-flat SU(3)-structures on S³×S³.
//!
//! A structure is described by a nonzero constant `λ`, two cohomology
//! parameters `a, b` and two 3×3 matrices `P, Q`. From these the crate builds
//! the defining forms `(ω, γ)`, the almost complex structure and metric,
//! extracts intrinsic torsion and scalar curvature, and integrates the
//! evolution equations whose solutions lift to nearly parallel G₂-structures
//! on `I × S³×S³`.
//!
//! ```
//! use nhf_core::{families, torsion};
//!
//! let nk = families::nearly_kahler(4.0, 1.0).unwrap();
//! let t = torsion::TorsionData::extract(&nk, 1e-9).unwrap();
//! assert!((t.s - 30.0).abs() < 1e-8);
//! ```

pub mod cli;
pub mod error;
pub mod exterior;
pub mod families;
pub mod flow;
pub mod structure;
pub mod torsion;

pub use error::{Error, Result};
pub use exterior::{Form, Matrix6, Vector6};
pub use structure::{Mat3, NhfStructure, StructureRecord, ValidationReport};
pub use torsion::{TorsionClass, TorsionData};

/// Default tolerance for validity residuals.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default tolerance for torsion-class predicates.
pub const CLASSIFY_TOL: f64 = 1e-7;

/// `|det P|` below this is singular everywhere.
pub const SINGULAR_DET: f64 = 1e-12;
