//! Numeric tolerances shared by every module.

/// Mass conservation and marginal checks.
pub const MARGINAL: f64 = 1e-10;
/// Distances and metric identities.
pub const METRIC: f64 = 1e-9;
/// Weights of a measure must sum to one within this.
pub const WEIGHT_SUM: f64 = 1e-12;
/// Residual mass below this is treated as exhausted inside the transport solver.
pub const MASS_EPS: f64 = 1e-15;
/// Quantization used to key the value search cache.
pub const CACHE_QUANTUM: f64 = 1e-9;
/// Hamiltonian margin default tolerance.
pub const HAMILTONIAN: f64 = 1e-3;
