//! Numerical laboratory for time-periodic Newton equations on the n-torus.
//!
//! The crate integrates q'' = -grad_q u(q, t) for trigonometric potentials
//! on T^n x S^1, detects conjugate points along orbits through Jacobi fields,
//! estimates how much of a high-energy momentum shell consists of
//! conjugate-point-free orbits, and evaluates the Hopf discriminant D_alpha
//! for stretched cutoff functions, both by reduced quadrature and by direct
//! Monte Carlo over phase space.
//!
//! Runnable walk-throughs of each capability live in `examples/`.

pub mod cli;
pub mod conjugate;
pub mod dynamics;
pub mod hopf;
pub mod minimal_set;
pub mod numerics;
pub mod potential;

pub use conjugate::{
    first_conjugate_time, is_minimal, propagate_jacobi, riccati_diagnostics, scan_conjugate,
    ConjugateError, ConjugateKind, ConjugatePoint, JacobiRecord, RiccatiSample,
};
pub use dynamics::{
    energy, integrate, rescale_orbit, step_vv, time_one_map, DynamicsError, OrbitSegment,
    PhaseState, Rescaled, StepPolicy,
};
pub use potential::{
    FourierMode, FourierPotential, Gauge, PeriodicGrid, Potential, PotentialError, QuadraticWell,
};

/// Version string embedded in every report.
pub const VERSION: &str = concat!("newtonlab ", env!("CARGO_PKG_VERSION"));
