//! Batch front end for the solver library: JSON run configurations are
//! validated in full, dispatched to one of the named experiments, and
//! rendered as deterministic CSV/JSON artifacts plus a manifest.
//!
//! Exit-code contract of the `sgbh` binary: 0 on success, 2 on a
//! configuration error (unreadable/unparseable/invalid file), 3 on a
//! numerical error during the run (blowup, CFL abort, failed estimability,
//! stalled optimizer), with a machine-readable `diagnostic.json` left in
//! the output directory.

pub mod config;
pub mod experiments;

/// Process exit code for configuration errors.
pub const EXIT_CONFIG: u8 = 2;
/// Process exit code for numerical errors during a run.
pub const EXIT_NUMERICAL: u8 = 3;
