//! Driving noise for the stochastic integrator: white-in-time colored-in-space
//! modal noise with spectral weights q_j = amplitude * lambda_j^(-eta), and
//! cell-averaged space-time white noise. All randomness is counter-based —
//! every increment is a pure function of (seed, stream_id, step) — so Monte
//! Carlo replicas are order-independent and embarrassingly parallel.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::SgbhError;
use crate::field::Field;
use crate::grid::{EigenPair, Grid};

/// Colored-noise modes retained by default: min(n_interior, 128).
pub const DEFAULT_MODE_CAP: usize = 128;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 generator keyed by (seed, stream, step, salt). Each key word is
/// the splitmix64 output of a chain state that has absorbed one more
/// component through an xor with an odd-multiplier spread, so the full
/// 256-bit key is injective in the four counters: distinct counters can
/// never collide, and replicas may be generated in any order.
pub(crate) fn counter_rng(seed: u64, stream: u64, step: u64, salt: u64) -> ChaCha8Rng {
    let mut s = seed;
    let k0 = splitmix_next(&mut s);
    s ^= stream.wrapping_mul(0xA24B_AED4_963E_E407);
    let k1 = splitmix_next(&mut s);
    s ^= step.wrapping_mul(0x9FB2_1C65_1E98_DF25);
    let k2 = splitmix_next(&mut s);
    s ^= salt.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let k3 = splitmix_next(&mut s);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&k0.to_le_bytes());
    key[8..16].copy_from_slice(&k1.to_le_bytes());
    key[16..24].copy_from_slice(&k2.to_le_bytes());
    key[24..32].copy_from_slice(&k3.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

pub(crate) const SALT_INCREMENT: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    ColoredQ,
    SpaceTimeWhite,
}

/// Immutable description of the driving noise; cheap to clone per worker.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseSpec {
    pub regime: NoiseRegime,
    /// Spectral decay exponent (ColoredQ only); must exceed 1/4 strictly.
    pub eta: Option<f64>,
    /// Retained modes (ColoredQ); None means min(n_interior, 128).
    pub j_modes: Option<usize>,
    /// Overall scale multiplying every q_j; 1 recovers q_j = lambda_j^(-eta).
    pub amplitude: f64,
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseSpec {
    pub fn colored(eta: f64, j_modes: Option<usize>, seed: u64) -> Result<Self, SgbhError> {
        Self::colored_with_amplitude(eta, j_modes, 1.0, seed)
    }

    pub fn colored_with_amplitude(
        eta: f64,
        j_modes: Option<usize>,
        amplitude: f64,
        seed: u64,
    ) -> Result<Self, SgbhError> {
        if !(eta > 0.25) {
            return Err(SgbhError::TraceCondition(eta));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(SgbhError::Invalid(format!(
                "noise amplitude must be positive and finite, got {amplitude}"
            )));
        }
        if j_modes == Some(0) {
            return Err(SgbhError::Invalid("j_modes must be at least 1".into()));
        }
        Ok(NoiseSpec {
            regime: NoiseRegime::ColoredQ,
            eta: Some(eta),
            j_modes,
            amplitude,
            seed,
            stream_id: 0,
        })
    }

    pub fn white(seed: u64) -> Self {
        NoiseSpec {
            regime: NoiseRegime::SpaceTimeWhite,
            eta: None,
            j_modes: None,
            amplitude: 1.0,
            seed,
            stream_id: 0,
        }
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }

    /// Modes actually summed on an n-node grid.
    pub fn effective_modes(&self, n_interior: usize) -> usize {
        self.j_modes
            .unwrap_or_else(|| n_interior.min(DEFAULT_MODE_CAP))
            .max(1)
    }

    /// Spectral weight q_j = amplitude * lambda_j^(-eta).
    pub fn q_weight(&self, j: usize) -> f64 {
        let eta = self.eta.expect("q_weight requires the colored regime");
        self.amplitude * EigenPair::new(j).lambda.powf(-eta)
    }
}

/// One time-step's worth of noise at the grid nodes (units sqrt(time)).
#[derive(Debug, Clone)]
pub struct NoiseIncrement {
    pub dt: f64,
    pub values: Field,
}

/// Precomputed sampling machinery for a fixed (spec, grid) pair; the per-step
/// call is then a key derivation, J (or n) normal draws, and one small
/// matrix-vector product.
pub struct NoiseSampler {
    spec: NoiseSpec,
    n: usize,
    h: f64,
    /// Row-major n x J matrix q_j * phi_j(x_i); empty in the white regime.
    basis: Vec<f64>,
    j_modes: usize,
}

impl NoiseSampler {
    pub fn new(spec: &NoiseSpec, grid: &Grid) -> Self {
        let n = grid.n_interior();
        let (basis, j_modes) = match spec.regime {
            NoiseRegime::ColoredQ => {
                let j_modes = spec.effective_modes(n);
                let mut basis = vec![0.0; n * j_modes];
                for j in 1..=j_modes {
                    let q = spec.q_weight(j);
                    let pair = EigenPair::new(j);
                    for (i, &x) in grid.nodes().iter().enumerate() {
                        basis[i * j_modes + (j - 1)] = q * pair.phi(x);
                    }
                }
                (basis, j_modes)
            }
            NoiseRegime::SpaceTimeWhite => (Vec::new(), 0),
        };
        NoiseSampler {
            spec: spec.clone(),
            n,
            h: grid.h(),
            basis,
            j_modes,
        }
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// The increment for the given step index, identical for identical
    /// (seed, stream_id, step) regardless of call order.
    pub fn increment(&self, dt: f64, step: u64) -> NoiseIncrement {
        let mut values = vec![0.0; self.n];
        self.increment_into(dt, step, &mut values);
        NoiseIncrement {
            dt,
            values: Field::new(values, self.h),
        }
    }

    /// Allocation-free variant for integration loops; `out` must have one
    /// entry per interior node.
    pub fn increment_into(&self, dt: f64, step: u64, out: &mut [f64]) {
        assert_eq!(out.len(), self.n, "increment buffer length mismatch");
        let mut rng = counter_rng(self.spec.seed, self.spec.stream_id, step, SALT_INCREMENT);
        match self.spec.regime {
            NoiseRegime::ColoredQ => {
                let sqrt_dt = dt.sqrt();
                let mut xi = vec![0.0; self.j_modes];
                for x in xi.iter_mut() {
                    *x = rng.sample::<f64, _>(StandardNormal);
                }
                for (i, v) in out.iter_mut().enumerate() {
                    let row = &self.basis[i * self.j_modes..(i + 1) * self.j_modes];
                    let mut acc = 0.0;
                    for (b, x) in row.iter().zip(xi.iter()) {
                        acc += b * x;
                    }
                    *v = acc * sqrt_dt;
                }
            }
            NoiseRegime::SpaceTimeWhite => {
                let scale = (dt / self.h).sqrt();
                for v in out.iter_mut() {
                    *v = scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
}

fn check_dt(dt: f64) -> Result<(), SgbhError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(SgbhError::Invalid(format!(
            "time step must be positive and finite, got {dt}"
        )))
    }
}

/// Colored increment at one step: values(x_i) = sum_j q_j phi_j(x_i) xi_j sqrt(dt).
pub fn sample_colored_increment(
    spec: &NoiseSpec,
    grid: &Grid,
    dt: f64,
    step: u64,
) -> Result<NoiseIncrement, SgbhError> {
    check_dt(dt)?;
    if spec.regime != NoiseRegime::ColoredQ {
        return Err(SgbhError::Invalid(
            "colored increment requested from a space-time-white spec".into(),
        ));
    }
    Ok(NoiseSampler::new(spec, grid).increment(dt, step))
}

/// Cell-averaged white increment at one step: values(x_i) = xi_i sqrt(dt/h).
pub fn sample_white_increment(
    spec: &NoiseSpec,
    grid: &Grid,
    dt: f64,
    step: u64,
) -> Result<NoiseIncrement, SgbhError> {
    check_dt(dt)?;
    if spec.regime != NoiseRegime::SpaceTimeWhite {
        return Err(SgbhError::Invalid(
            "white increment requested from a colored spec".into(),
        ));
    }
    Ok(NoiseSampler::new(spec, grid).increment(dt, step))
}

/// Running sum of increments up to time t (which must sit on the step grid):
/// the discrete sheet W(t, x_i).
pub fn brownian_sheet_checkpoint(
    spec: &NoiseSpec,
    grid: &Grid,
    dt: f64,
    t: f64,
) -> Result<Field, SgbhError> {
    check_dt(dt)?;
    let steps_f = t / dt;
    let steps = steps_f.round();
    if t < 0.0 || (steps_f - steps).abs() > 1e-9 * (1.0 + steps.abs()) {
        return Err(SgbhError::Alignment { t, dt });
    }
    let sampler = NoiseSampler::new(spec, grid);
    let mut acc = vec![0.0; grid.n_interior()];
    for step in 0..steps as u64 {
        let inc = sampler.increment(dt, step);
        for (a, v) in acc.iter_mut().zip(inc.values.values()) {
            *a += v;
        }
    }
    Ok(Field::new(acc, grid.h()))
}
