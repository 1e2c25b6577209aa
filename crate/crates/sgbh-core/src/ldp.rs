//! Small-noise statistics: Monte-Carlo event probabilities with Wilson
//! intervals and common-random-number streams, eps -> 0 extrapolation of
//! eps * log p, a uniform-over-(initial state, control) frequency sweep, and
//! the pathwise z/zeta decomposition that splits a trajectory into its
//! stochastic convolution and a smoother remainder.

use rayon::prelude::*;

use serde::Serialize;

use crate::dynamics::GCoefficient;
use crate::error::SgbhError;
use crate::field::Field;
use crate::grid::Grid;
use crate::kernel::KernelTable;
use crate::noise::NoiseSpec;
use crate::skeleton::{solve_skeleton, Control};
use crate::solver::{grid_matching, run_integration, IntegrateOpts, Trajectory};

/// Two-sided 97.5% standard-normal quantile used by the 95% Wilson interval.
pub const WILSON_Z: f64 = 1.959963984540054;

/// Fraction of samples an event must reach before its probability estimate
/// is trusted: p_hat >= ESTIMABILITY_FACTOR / n.
pub const ESTIMABILITY_FACTOR: f64 = 10.0;

/// Distance functional applied to fields when testing events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EventNorm {
    Lp(u32),
    Sup,
}

fn distance(a: &Field, b: &Field, norm: EventNorm) -> Result<f64, SgbhError> {
    if a.len() != b.len() {
        return Err(SgbhError::Invalid(format!(
            "cannot compare fields with {} and {} nodes",
            a.len(),
            b.len()
        )));
    }
    Ok(match norm {
        EventNorm::Lp(p) => a.lp_dist(b, p as f64),
        EventNorm::Sup => a.sup_dist(b),
    })
}

fn check_norm(norm: EventNorm) -> Result<(), SgbhError> {
    if let EventNorm::Lp(p) = norm {
        if p == 0 {
            return Err(SgbhError::Invalid("event norm exponent must be >= 1".into()));
        }
    }
    Ok(())
}

/// Path events whose probabilities are estimated by Monte Carlo.
#[derive(Debug, Clone)]
pub enum EventSpec {
    /// Terminal state lands in the closed ball of `radius` around `center`.
    TerminalBall {
        center: Field,
        radius: f64,
        norm: EventNorm,
    },
    /// The path leaves the `radius`-tube around `reference` at some saved
    /// time (sampling times of path and reference must agree).
    TubeExceed {
        reference: Trajectory,
        radius: f64,
        norm: EventNorm,
    },
}

impl EventSpec {
    pub fn terminal_ball(center: Field, radius: f64, norm: EventNorm) -> Result<Self, SgbhError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SgbhError::Invalid(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        check_norm(norm)?;
        center.check_finite(0)?;
        Ok(EventSpec::TerminalBall {
            center,
            radius,
            norm,
        })
    }

    pub fn tube_exceed(
        reference: Trajectory,
        radius: f64,
        norm: EventNorm,
    ) -> Result<Self, SgbhError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SgbhError::Invalid(format!(
                "tube radius must be positive and finite, got {radius}"
            )));
        }
        check_norm(norm)?;
        if reference.is_empty() {
            return Err(SgbhError::Invalid("tube reference holds no states".into()));
        }
        Ok(EventSpec::TubeExceed {
            reference,
            radius,
            norm,
        })
    }

    pub fn indicator(&self, traj: &Trajectory) -> Result<bool, SgbhError> {
        match self {
            EventSpec::TerminalBall {
                center,
                radius,
                norm,
            } => Ok(distance(traj.final_field(), center, *norm)? <= *radius),
            EventSpec::TubeExceed {
                reference,
                radius,
                norm,
            } => {
                if traj.t_grid.len() != reference.t_grid.len() {
                    return Err(SgbhError::Invalid(format!(
                        "path saved {} states, tube reference has {}",
                        traj.t_grid.len(),
                        reference.t_grid.len()
                    )));
                }
                for ((ta, fa), (tb, fb)) in traj
                    .t_grid
                    .iter()
                    .zip(&traj.fields)
                    .zip(reference.t_grid.iter().zip(&reference.fields))
                {
                    if (ta - tb).abs() > 1e-9 * (1.0 + ta.abs()) {
                        return Err(SgbhError::Invalid(format!(
                            "path sampled at t = {ta}, tube reference at t = {tb}"
                        )));
                    }
                    if distance(fa, fb, *norm)? > *radius {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }
}

/// One Monte-Carlo probability estimate with its 95% Wilson interval.
/// `eps_log_p` is eps * ln(p_hat), None when no sample hit the event.
#[derive(Debug, Clone, Serialize)]
pub struct MCEstimate {
    pub eps: f64,
    pub p_hat: f64,
    pub n_samples: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub eps_log_p: Option<f64>,
}

/// 95% Wilson score interval for `hits` successes out of `n`. Zero hits pin
/// the lower endpoint to exactly 0, and full hits pin the upper to exactly 1.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    assert!(n > 0 && hits <= n, "need 0 <= hits <= n with n > 0");
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = (WILSON_Z / denom) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    // pin the one-sided cases so that "no hits" really reports a zero lower
    // bound (and dually at p = 1) instead of a rounding residue
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Everything needed to draw one path: the model, the driving noise (its
/// stream id is the base; sample k runs on stream base + k, which is what
/// makes common-random-number comparisons across events possible), an
/// optional control, and integration knobs.
#[derive(Debug, Clone)]
pub struct PathSetup {
    pub u0: Field,
    pub params: crate::dynamics::ModelParams,
    pub g: GCoefficient,
    pub noise: NoiseSpec,
    pub t_end: f64,
    pub dt: f64,
    pub control: Option<Control>,
    pub save_stride: usize,
    pub r_trunc: Option<f64>,
    pub monitor_p: Option<u32>,
}

impl PathSetup {
    fn opts(&self) -> IntegrateOpts {
        IntegrateOpts {
            save_stride: self.save_stride,
            retain_noise: false,
            monitor_p: self.monitor_p,
            monitor_r: None,
            r_trunc: self.r_trunc,
        }
    }

    fn params_at(&self, eps: f64) -> Result<crate::dynamics::ModelParams, SgbhError> {
        crate::dynamics::ModelParams::new(
            self.params.nu,
            self.params.alpha,
            self.params.beta,
            self.params.gamma,
            self.params.delta,
            eps,
        )
    }
}

/// Monte-Carlo estimate of P(event) at noise intensity `eps` over
/// `n_samples` independent streams. Hit counting is exact (integer
/// reduction), so the result does not depend on the worker count.
pub fn estimate_probability(
    event: &EventSpec,
    setup: &PathSetup,
    eps: f64,
    n_samples: usize,
) -> Result<MCEstimate, SgbhError> {
    if n_samples < 100 {
        return Err(SgbhError::Invalid(format!(
            "need at least 100 samples for a trustworthy interval, got {n_samples}"
        )));
    }
    if !(eps > 0.0) {
        return Err(SgbhError::Invalid(format!(
            "noise intensity must be positive, got {eps}"
        )));
    }
    let params = setup.params_at(eps)?;
    let opts = setup.opts();
    let flags: Result<Vec<u64>, SgbhError> = (0..n_samples)
        .into_par_iter()
        .map(|idx| {
            let spec = setup
                .noise
                .clone()
                .with_stream(setup.noise.stream_id.wrapping_add(idx as u64));
            let (traj, _) = run_integration(
                &setup.u0,
                &params,
                setup.t_end,
                setup.dt,
                Some(&spec),
                setup.control.as_ref(),
                &setup.g,
                &opts,
            )?;
            Ok(event.indicator(&traj)? as u64)
        })
        .collect();
    let hits = flags?.iter().sum::<u64>() as usize;
    let p_hat = hits as f64 / n_samples as f64;
    let (ci_lo, ci_hi) = wilson_interval(hits, n_samples);
    Ok(MCEstimate {
        eps,
        p_hat,
        n_samples,
        ci_lo,
        ci_hi,
        eps_log_p: if hits > 0 { Some(eps * p_hat.ln()) } else { None },
    })
}

/// Probability curve over a decreasing eps ladder with the eps -> 0
/// extrapolation of eps * ln p. `rate_reference` is carried through for
/// reporting.
#[derive(Debug, Clone, Serialize)]
pub struct LdpCurve {
    pub estimates: Vec<MCEstimate>,
    pub extrapolated_rate: f64,
    pub rate_reference: Option<f64>,
}

fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    // least-squares (intercept, slope)
    let m = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let det = m * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return (sy / m, 0.0);
    }
    let slope = (m * sxy - sx * sy) / det;
    ((sy - slope * sx) / m, slope)
}

/// Estimate P(event) along `eps_ladder` (strictly decreasing) and
/// extrapolate eps * ln p to eps = 0 by a least-squares line through the
/// smallest min(3, len) ladder points; curvature in eps makes a fit through
/// the large-eps points systematically biased, so they are excluded. Any
/// point with fewer than ESTIMABILITY_FACTOR hits aborts with the partial
/// curve attached.
pub fn ldp_curve(
    event: &EventSpec,
    setup: &PathSetup,
    eps_ladder: &[f64],
    n_per_eps: usize,
    rate_reference: Option<f64>,
) -> Result<LdpCurve, SgbhError> {
    if eps_ladder.is_empty() {
        return Err(SgbhError::Invalid("eps ladder must not be empty".into()));
    }
    if eps_ladder.windows(2).any(|w| !(w[1] < w[0])) || !(eps_ladder[0].is_finite()) {
        return Err(SgbhError::Invalid(
            "eps ladder must be strictly decreasing".into(),
        ));
    }
    let mut estimates: Vec<MCEstimate> = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let est = estimate_probability(event, setup, eps, n_per_eps)?;
        let threshold = ESTIMABILITY_FACTOR / n_per_eps as f64;
        if est.p_hat < threshold {
            let p_hat = est.p_hat;
            estimates.push(est);
            return Err(SgbhError::Unestimable {
                eps,
                p_hat,
                threshold,
                partial: estimates,
            });
        }
        estimates.push(est);
    }
    let take = estimates.len().min(3);
    let points: Vec<(f64, f64)> = estimates[estimates.len() - take..]
        .iter()
        .map(|e| {
            (
                e.eps,
                e.eps_log_p
                    .expect("estimability guard keeps every retained point strictly positive"),
            )
        })
        .collect();
    let extrapolated_rate = if points.len() == 1 {
        -points[0].1
    } else {
        -fit_line(&points).0
    };
    Ok(LdpCurve {
        estimates,
        extrapolated_rate,
        rate_reference,
    })
}

/// Worst-case (over initial states and controls) frequency of leaving the
/// eta-tube around the matching zero-noise flow, per eps.
#[derive(Debug, Clone, Serialize)]
pub struct UniformReport {
    pub eta: f64,
    pub n_samples: usize,
    pub eps: Vec<f64>,
    pub worst_freq: Vec<f64>,
    /// Wilson interval of the worst pair at each eps.
    pub ci: Vec<(f64, f64)>,
    /// Row per eps, column per (initial state, control) pair in row-major
    /// (u0-major) order.
    pub per_pair_freq: Vec<Vec<f64>>,
}

/// For every pair (u0, phi) build the controlled zero-noise reference, then
/// estimate the tube-exceedance frequency on a shared set of noise streams
/// (common random numbers across pairs and eps values).
#[allow(clippy::too_many_arguments)]
pub fn uniform_convergence_experiment(
    setup: &PathSetup,
    u0_set: &[Field],
    phi_set: &[Control],
    eps_ladder: &[f64],
    eta: f64,
    n_samples: usize,
    norm: EventNorm,
    u0_bound: f64,
    cost_bound: f64,
) -> Result<UniformReport, SgbhError> {
    if u0_set.is_empty() || phi_set.is_empty() {
        return Err(SgbhError::Invalid(
            "need at least one initial state and one control".into(),
        ));
    }
    if eps_ladder.is_empty() || eps_ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(SgbhError::Invalid(
            "eps ladder must be nonempty and strictly decreasing".into(),
        ));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(SgbhError::Invalid(format!(
            "tube radius must be positive and finite, got {eta}"
        )));
    }
    check_norm(norm)?;
    for (i, u0) in u0_set.iter().enumerate() {
        let norm2 = u0.l2_norm();
        if norm2 > u0_bound * (1.0 + 1e-12) {
            return Err(SgbhError::Invalid(format!(
                "initial state {i} has norm {norm2}, bound is {u0_bound}"
            )));
        }
    }
    for (i, phi) in phi_set.iter().enumerate() {
        if !phi.within_budget(cost_bound * (1.0 + 1e-12)) {
            return Err(SgbhError::Invalid(format!(
                "control {i} costs {}, budget is {cost_bound}",
                phi.cost()
            )));
        }
    }

    // one reference skeleton per pair, reused across the whole ladder
    let mut events = Vec::with_capacity(u0_set.len() * phi_set.len());
    for u0 in u0_set {
        for phi in phi_set {
            let (reference, _) = solve_skeleton(
                u0,
                &setup.params,
                &setup.g,
                phi,
                setup.t_end,
                setup.dt,
                &setup.opts(),
            )?;
            events.push((u0, phi, EventSpec::tube_exceed(reference, eta, norm)?));
        }
    }

    let mut worst_freq = Vec::with_capacity(eps_ladder.len());
    let mut ci = Vec::with_capacity(eps_ladder.len());
    let mut per_pair_freq = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let mut row = Vec::with_capacity(events.len());
        let mut worst: Option<MCEstimate> = None;
        for (u0, phi, event) in &events {
            let pair_setup = PathSetup {
                u0: (*u0).clone(),
                control: Some((*phi).clone()),
                ..setup.clone()
            };
            let est = estimate_probability(event, &pair_setup, eps, n_samples)?;
            row.push(est.p_hat);
            if worst.as_ref().map_or(true, |w| est.p_hat > w.p_hat) {
                worst = Some(est);
            }
        }
        let worst = worst.expect("at least one pair");
        worst_freq.push(worst.p_hat);
        ci.push((worst.ci_lo, worst.ci_hi));
        per_pair_freq.push(row);
    }
    Ok(UniformReport {
        eta,
        n_samples,
        eps: eps_ladder.to_vec(),
        worst_freq,
        ci,
        per_pair_freq,
    })
}

/// Deterministic family of initial states: quasi-random mixtures of the
/// first three modes with norms stepping up to `bound`.
pub fn sample_u0_set(grid: &Grid, count: usize, bound: f64) -> Vec<Field> {
    let golden = 0.618033988749895_f64;
    let tau = std::f64::consts::TAU;
    let p1 = grid.eigenpair(1);
    let p2 = grid.eigenpair(2);
    let p3 = grid.eigenpair(3);
    (0..count)
        .map(|k| {
            let t = ((k + 1) as f64 * golden).fract();
            let c1 = (tau * t).sin() + 0.2;
            let c2 = (tau * t).cos();
            let c3 = 0.5 * (2.0 * tau * t).sin();
            let raw = grid.sample(|x| c1 * p1.phi(x) + c2 * p2.phi(x) + c3 * p3.phi(x));
            let norm = raw.l2_norm();
            let target = bound * (k + 1) as f64 / count as f64;
            let s = if norm > 0.0 { target / norm } else { 0.0 };
            Field::new(raw.values().iter().map(|v| v * s).collect(), grid.h())
        })
        .collect()
}

/// Deterministic family of controls with costs stepping up to `cost_bound`.
pub fn sample_control_set(
    grid: &Grid,
    n_steps: usize,
    dt: f64,
    count: usize,
    cost_bound: f64,
) -> Result<Vec<Control>, SgbhError> {
    let golden = 0.618033988749895_f64;
    let tau = std::f64::consts::TAU;
    let n = grid.n_interior();
    let p1 = grid.eigenpair(1);
    let p2 = grid.eigenpair(2);
    (0..count)
        .map(|s| {
            let a = ((s + 1) as f64 * golden).fract();
            let mut values = Vec::with_capacity(n_steps * n);
            for k in 0..n_steps {
                let phase = k as f64 / n_steps as f64;
                for &x in grid.nodes() {
                    values.push(
                        (tau * (a + phase)).sin() * p1.phi(x)
                            + 0.5 * (tau * (2.0 * a + phase)).cos() * p2.phi(x),
                    );
                }
            }
            let raw = Control::new(values, n_steps, n, dt)?;
            let target = cost_bound * (s + 1) as f64 / count as f64;
            raw.scaled((target / raw.cost()).sqrt())
        })
        .collect()
}

/// Split of a saved path into the stochastic convolution zeta (kernel
/// quadrature of the retained increments) and the remainder z = u - zeta.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub t_grid: Vec<f64>,
    pub z: Vec<Field>,
    pub zeta: Vec<Field>,
    /// sup over saved times and nodes of |zeta|.
    pub zeta_star: f64,
}

/// Reusable kernel table for decomposing many paths of identical shape.
pub struct DecomposeContext {
    table: KernelTable,
    dt: f64,
    n: usize,
    n_steps: usize,
}

impl DecomposeContext {
    pub fn new(grid: &Grid, nu: f64, dt: f64, n_steps: usize) -> Self {
        DecomposeContext {
            table: KernelTable::build(grid, nu, dt, n_steps, false),
            dt,
            n: grid.n_interior(),
            n_steps,
        }
    }

    pub fn decompose(
        &self,
        traj: &Trajectory,
        g: &GCoefficient,
    ) -> Result<Decomposition, SgbhError> {
        let record = traj.noise_record.as_ref().ok_or(SgbhError::NoNoiseRecord)?;
        if !g.is_bounded() {
            return Err(SgbhError::Invalid(
                "the decomposition requires a bounded noise coefficient".into(),
            ));
        }
        let grid = grid_matching(&traj.fields[0])?;
        let n = grid.n_interior();
        let h = grid.h();
        if n != self.n {
            return Err(SgbhError::Invalid(format!(
                "context built for {} nodes, path has {n}",
                self.n
            )));
        }
        let steps = record.increments.len();
        if steps > self.n_steps {
            return Err(SgbhError::Invalid(format!(
                "context covers {} steps, path has {steps}",
                self.n_steps
            )));
        }
        if (record.dt - self.dt).abs() > 1e-12 * self.dt.max(1.0) {
            return Err(SgbhError::Invalid(format!(
                "context built at dt = {}, path recorded at dt = {}",
                self.dt, record.dt
            )));
        }
        let const_g = matches!(g, GCoefficient::Constant { .. });
        if !const_g && traj.fields.len() != steps + 1 {
            return Err(SgbhError::Invalid(
                "a state-dependent noise coefficient needs every step saved (stride 1)".into(),
            ));
        }
        let sqrt_eps = traj.params.epsilon.sqrt();

        // weights g(u_k) dW_k, once per step
        let mut weighted: Vec<Vec<f64>> = Vec::with_capacity(steps);
        for k in 0..steps {
            let inc = record.increments[k].values();
            if inc.len() != n {
                return Err(SgbhError::Invalid(
                    "recorded increments do not match the path grid".into(),
                ));
            }
            let row = if const_g {
                let kg = g.eval(0.0);
                inc.iter().map(|&w| sqrt_eps * kg * w).collect()
            } else {
                let state = traj.fields[k].values();
                (0..n)
                    .map(|i| sqrt_eps * g.eval(state[i]) * inc[i])
                    .collect()
            };
            weighted.push(row);
        }

        let mut z = Vec::with_capacity(traj.fields.len());
        let mut zeta = Vec::with_capacity(traj.fields.len());
        let mut zeta_star = 0.0f64;
        for (si, (&t, u_field)) in traj.t_grid.iter().zip(&traj.fields).enumerate() {
            let m_f = (t / self.dt).round();
            if (t / self.dt - m_f).abs() > 1e-9 * (1.0 + m_f.abs()) {
                return Err(SgbhError::Invalid(format!(
                    "saved time {t} is off the step lattice of dt = {}",
                    self.dt
                )));
            }
            let m = m_f as usize;
            if m > steps {
                return Err(SgbhError::Invalid(format!(
                    "saved time {t} lies beyond the recorded increments"
                )));
            }
            let mut conv = vec![0.0; n];
            for (k, row) in weighted.iter().enumerate().take(m) {
                self.table.apply_g(m - k, row, 1.0, &mut conv);
            }
            let zf = Field::new(
                u_field
                    .values()
                    .iter()
                    .zip(&conv)
                    .map(|(u, c)| u - c)
                    .collect(),
                h,
            );
            let cf = Field::new(conv, h);
            zeta_star = zeta_star.max(cf.sup_norm());
            z.push(zf);
            zeta.push(cf);
            let _ = si;
        }
        Ok(Decomposition {
            t_grid: traj.t_grid.clone(),
            z,
            zeta,
            zeta_star,
        })
    }
}

/// One-shot decomposition; builds the kernel table from the path itself.
pub fn decompose_z_zeta(
    traj: &Trajectory,
    g: &GCoefficient,
) -> Result<Decomposition, SgbhError> {
    let record = traj.noise_record.as_ref().ok_or(SgbhError::NoNoiseRecord)?;
    let grid = grid_matching(&traj.fields[0])?;
    let ctx = DecomposeContext::new(&grid, traj.params.nu, record.dt, record.increments.len());
    ctx.decompose(traj, g)
}
