//! Quasi-static elasto-plasticity with kinematic or isotropic hardening,
//! regularized by a penalty (Perzyna-type) flow rule, together with probes
//! that measure weighted difference-quotient seminorms of the computed
//! fields and their uniformity in the penalty parameter.

pub mod cli;
pub mod constitutive;
pub mod discretization;
pub mod evolution;
pub mod linalg;
pub mod probe;
pub mod report;
pub mod scenario;
pub mod tensor;
