//! Numerical toolkit for a stochastic generalized Burgers–Huxley equation on
//! the unit interval with homogeneous Dirichlet walls: degree-delta
//! convection and bistable reaction, multiplicative noise that is white in
//! time and either spectrally colored or white in space.
//!
//! The crate provides
//! - closed-form Dirichlet heat kernels (image and spectral representations)
//!   with lattice-quadrature tables and analytic bound checks ([`kernel`]),
//! - counter-based noise sampling that is reproducible for a given
//!   (seed, stream, step) triple regardless of thread count ([`noise`]),
//! - a semi-implicit integrator with per-step energy accounting, norm
//!   truncation, and an independent mild-solution fixed-point oracle
//!   ([`solver`]),
//! - deterministic controlled dynamics, the exact discrete adjoint, and a
//!   penalty-method minimizer for endpoint control costs ([`skeleton`]),
//! - Monte-Carlo event estimation with Wilson intervals, small-noise rate
//!   extrapolation, uniform-over-data tube statistics, and the z/zeta path
//!   decomposition ([`ldp`]).

pub mod dynamics;
pub mod error;
pub mod field;
pub mod grid;
pub mod kernel;
pub mod ldp;
pub mod noise;
pub mod skeleton;
pub mod solver;

pub use dynamics::{monitor_exponent_violation, GCoefficient, ModelParams, BLOWUP_THRESHOLD};
pub use error::SgbhError;
pub use field::Field;
pub use grid::{EigenPair, Grid};
pub use kernel::{
    default_bound_sweep, g_auto, g_image, g_spectral, verify_kernel_bounds, BoundReport,
    KernelTable,
};
pub use ldp::{
    decompose_z_zeta, estimate_probability, ldp_curve, sample_control_set, sample_u0_set,
    uniform_convergence_experiment, wilson_interval, Decomposition, DecomposeContext, EventNorm,
    EventSpec, LdpCurve, MCEstimate, PathSetup, UniformReport,
};
pub use noise::{NoiseIncrement, NoiseRegime, NoiseSampler, NoiseSpec};
pub use skeleton::{
    adjoint_gradient, rate_function_endpoint, solve_controlled, solve_skeleton, Control,
    GradientEval, OptConfig, RateResult,
};
pub use solver::{
    energy_audit, integrate, picard_mild_oracle, step_semi_implicit, AuditReport, EnergyLedger,
    IntegrateOpts, NoisePath, PicardRun, Trajectory,
};
