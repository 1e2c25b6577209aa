//! Dirichlet heat kernel on [0,1] in two representations, its analytic
//! derivatives, and numerical spot checks of the classical kernel bounds.
//!
//! Image series (unit diffusivity, effective time tau):
//!   G(tau,x,y) = (4 pi tau)^{-1/2} sum_m [ e^{-(y-x-2m)^2/(4 tau)} - e^{-(y+x-2m)^2/(4 tau)} ]
//! Spectral series:
//!   G(tau,x,y) = sum_j e^{-lambda_j tau} phi_j(x) phi_j(y),   lambda_j = j^2 pi^2
//! Viscosity nu enters through G_nu(t,x,y) := G(nu t, x, y), the fundamental
//! solution of u_t = nu u_xx with the same boundary conditions. The image sum
//! converges super-exponentially for small tau, the spectral sum for large
//! tau; tau = 0.05 is the crossover where the automatic evaluator switches.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::SgbhError;
use crate::grid::{EigenPair, Grid};

pub const IMAGE_TERMS_DEFAULT: usize = 5;
pub const SPECTRAL_MODE_CAP: usize = 4096;
pub const REPRESENTATION_CROSSOVER_TAU: f64 = 0.05;

fn check_time(t: f64) -> Result<(), SgbhError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(SgbhError::SingularTime(t))
    }
}

/// Image-series kernel G_nu(t,x,y), truncated at |m| <= M.
pub fn g_image(t: f64, x: f64, y: f64, nu: f64, m_terms: usize) -> Result<f64, SgbhError> {
    check_time(t)?;
    let tau = nu * t;
    let inv4 = 1.0 / (4.0 * tau);
    let mut s = 0.0;
    for m in -(m_terms as i64)..=(m_terms as i64) {
        let a = y - x - 2.0 * m as f64;
        let b = y + x - 2.0 * m as f64;
        s += (-a * a * inv4).exp() - (-b * b * inv4).exp();
    }
    Ok(s / (4.0 * PI * tau).sqrt())
}

/// Analytic y-derivative of the truncated image series.
pub fn dg_dy(t: f64, x: f64, y: f64, nu: f64, m_terms: usize) -> Result<f64, SgbhError> {
    check_time(t)?;
    let tau = nu * t;
    let inv4 = 1.0 / (4.0 * tau);
    let mut s = 0.0;
    for m in -(m_terms as i64)..=(m_terms as i64) {
        let a = y - x - 2.0 * m as f64;
        let b = y + x - 2.0 * m as f64;
        s += -(a / (2.0 * tau)) * (-a * a * inv4).exp() + (b / (2.0 * tau)) * (-b * b * inv4).exp();
    }
    Ok(s / (4.0 * PI * tau).sqrt())
}

/// Analytic t-derivative of G_nu (chain rule through tau = nu t).
pub fn dg_dt(t: f64, x: f64, y: f64, nu: f64, m_terms: usize) -> Result<f64, SgbhError> {
    check_time(t)?;
    let tau = nu * t;
    let inv4 = 1.0 / (4.0 * tau);
    let pref = 1.0 / (4.0 * PI * tau).sqrt();
    let mut s = 0.0;
    for m in -(m_terms as i64)..=(m_terms as i64) {
        let a = y - x - 2.0 * m as f64;
        let b = y + x - 2.0 * m as f64;
        let ga = (-a * a * inv4).exp();
        let gb = (-b * b * inv4).exp();
        s += ga * (a * a * inv4 / tau - 0.5 / tau) - gb * (b * b * inv4 / tau - 0.5 / tau);
    }
    Ok(nu * pref * s)
}

/// Smallest J with e^{-nu lambda_J t} < 1e-16, capped at SPECTRAL_MODE_CAP.
pub fn spectral_modes(t: f64, nu: f64) -> usize {
    let tau = nu * t;
    // nu lambda_J t > 16 ln 10  <=>  J > sqrt(16 ln 10 / tau) / pi
    let j = ((16.0 * std::f64::consts::LN_10 / tau).sqrt() / PI).ceil() as usize + 1;
    j.clamp(1, SPECTRAL_MODE_CAP)
}

/// Spectral-series kernel G_nu(t,x,y) over modes 1..=J.
pub fn g_spectral(t: f64, x: f64, y: f64, nu: f64, j_modes: usize) -> Result<f64, SgbhError> {
    check_time(t)?;
    let mut s = 0.0;
    for j in 1..=j_modes {
        let pair = EigenPair::new(j);
        let w = (-nu * pair.lambda * t).exp();
        if w < 1e-18 {
            break;
        }
        s += w * pair.phi(x) * pair.phi(y);
    }
    Ok(s)
}

/// Kernel value by the cheaper representation: image series for
/// tau <= crossover, spectral series otherwise.
pub fn g_auto(t: f64, x: f64, y: f64, nu: f64) -> Result<f64, SgbhError> {
    if nu * t <= REPRESENTATION_CROSSOVER_TAU {
        g_image(t, x, y, nu, IMAGE_TERMS_DEFAULT)
    } else {
        g_spectral(t, x, y, nu, spectral_modes(t, nu))
    }
}

/// Composite-Simpson quadrature of z -> G(t/2,x,z) G(t/2,z,y) over [0,1].
pub fn chapman_kolmogorov_lhs(
    t: f64,
    x: f64,
    y: f64,
    nu: f64,
    intervals: usize,
) -> Result<f64, SgbhError> {
    check_time(t)?;
    let n = intervals.max(2) & !1; // even
    let dz = 1.0 / n as f64;
    let f = |z: f64| -> Result<f64, SgbhError> {
        Ok(g_auto(t / 2.0, x, z, nu)? * g_auto(t / 2.0, z, y, nu)?)
    };
    let mut s = f(0.0)? + f(1.0)?;
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(k as f64 * dz)?;
    }
    Ok(s * dz / 3.0)
}

/// Kernel matrices h*G_nu(lag*dt, x_i, y_j) (and optionally h*dG/dy) for all
/// lags 1..=n_lags; the h factor folds the y-quadrature weight in, so a
/// matrix-vector product is the midpoint quadrature against the kernel.
pub struct KernelTable {
    pub n: usize,
    pub dt: f64,
    gh: Vec<Vec<f64>>,
    dgh: Option<Vec<Vec<f64>>>,
}

impl KernelTable {
    pub fn build(grid: &Grid, nu: f64, dt: f64, n_lags: usize, with_dy: bool) -> Self {
        let n = grid.n_interior();
        let h = grid.h();
        let nodes = grid.nodes();
        let mut gh = Vec::with_capacity(n_lags);
        let mut dgh = if with_dy {
            Some(Vec::with_capacity(n_lags))
        } else {
            None
        };
        for lag in 1..=n_lags {
            let t = lag as f64 * dt;
            let mut gm = vec![0.0; n * n];
            for (i, &xi) in nodes.iter().enumerate() {
                for (j, &yj) in nodes.iter().enumerate() {
                    gm[i * n + j] = h * g_auto(t, xi, yj, nu).expect("t > 0");
                }
            }
            gh.push(gm);
            if let Some(d) = dgh.as_mut() {
                let tau = nu * t;
                let use_image = tau <= REPRESENTATION_CROSSOVER_TAU;
                let mut dm = vec![0.0; n * n];
                for (i, &xi) in nodes.iter().enumerate() {
                    for (j, &yj) in nodes.iter().enumerate() {
                        let v = if use_image {
                            dg_dy(t, xi, yj, nu, IMAGE_TERMS_DEFAULT).expect("t > 0")
                        } else {
                            spectral_dg_dy(t, xi, yj, nu)
                        };
                        dm[i * n + j] = h * v;
                    }
                }
                d.push(dm);
            }
        }
        KernelTable { n, dt, gh, dgh }
    }

    pub fn n_lags(&self) -> usize {
        self.gh.len()
    }

    /// out += scale * (h G(lag dt)) f
    pub fn apply_g(&self, lag: usize, f: &[f64], scale: f64, out: &mut [f64]) {
        let m = &self.gh[lag - 1];
        let n = self.n;
        for i in 0..n {
            let row = &m[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * f[j];
            }
            out[i] += scale * acc;
        }
    }

    /// out += scale * (h dG/dy(lag dt)) f
    pub fn apply_dg(&self, lag: usize, f: &[f64], scale: f64, out: &mut [f64]) {
        let m = &self
            .dgh
            .as_ref()
            .expect("table built without the derivative")[lag - 1];
        let n = self.n;
        for i in 0..n {
            let row = &m[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * f[j];
            }
            out[i] += scale * acc;
        }
    }
}

fn spectral_dg_dy(t: f64, x: f64, y: f64, nu: f64) -> f64 {
    let j_modes = spectral_modes(t, nu);
    let mut s = 0.0;
    for j in 1..=j_modes {
        let pair = EigenPair::new(j);
        let w = (-nu * pair.lambda * t).exp();
        if w < 1e-18 {
            break;
        }
        let jpi = j as f64 * PI;
        s += w * pair.phi(x) * std::f64::consts::SQRT_2 * jpi * (jpi * y).cos();
    }
    s
}

/// One spot-checked bound: the empirical constant over a sample sweep.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub bound_id: String,
    pub a_constant: f64,
    #[serde(rename = "empirical_C")]
    pub empirical_c: f64,
    pub n_samples: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub nu: f64,
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Empirical constants for the kernel bounds over the given sample sweep,
/// with the Gaussian rate fixed at a = 8 nu:
///   |G|          <= C t^{-1/2} e^{-|x-y|^2/(a t)}
///   |dG/dy|      <= C t^{-1}   e^{-|x-y|^2/(a t)}
///   |dG/dt|      <= C t^{-3/2} e^{-|x-y|^2/(a t)}
///   |G(t,x,z)-G(t,y,z)| <= C |x-y| t^{-1} max(e^{-|x-z|^2/(a t)}, e^{-|y-z|^2/(a t)})
///   ||e^{-|.|^2/(a u)}||_{L^p} <= C u^{1/(2p)}
/// The constants are reported as outputs; pass means the sweep stayed below
/// the closed-form ceiling where one exists (domain monotonicity for the
/// kernel itself, the exact Gaussian integral for the norm bound) and stayed
/// finite and lattice-stable otherwise.
pub fn verify_kernel_bounds(t_samples: &[f64], xy_samples: &[(f64, f64)], nu: f64) -> BoundReport {
    let a = 8.0 * nu;
    let m = IMAGE_TERMS_DEFAULT;
    let mut checks = Vec::new();

    let sweep = |f: &dyn Fn(f64, f64, f64) -> f64| -> (f64, f64, usize) {
        let mut sup = 0.0f64;
        let mut sup_half = 0.0f64;
        let mut count = 0usize;
        for (ti, &t) in t_samples.iter().enumerate() {
            for (pi, &(x, y)) in xy_samples.iter().enumerate() {
                let v = f(t, x, y);
                sup = sup.max(v);
                if ti % 2 == 0 && pi % 2 == 0 {
                    sup_half = sup_half.max(v);
                }
                count += 1;
            }
        }
        (sup, sup_half, count)
    };

    let weight = |t: f64, x: f64, y: f64| ((x - y) * (x - y) / (a * t)).exp();

    // A1: the Dirichlet kernel is dominated by the free-space Gaussian, so
    // C <= (4 pi nu)^{-1/2} exactly.
    let (c1, _, n1) = sweep(&|t, x, y| {
        g_image(t, x, y, nu, m).unwrap().abs() * t.sqrt() * weight(t, x, y)
    });
    let ceiling1 = 1.0 / (4.0 * PI * nu).sqrt();
    checks.push(BoundCheck {
        bound_id: "A1".into(),
        a_constant: a,
        empirical_c: c1,
        n_samples: n1,
        pass: c1.is_finite() && c1 <= ceiling1 * (1.0 + 1e-9) + 1e-12,
    });

    // A2 and A3 have no closed ceiling; pass = finite and stable under
    // thinning the sample lattice.
    let (c2, c2h, n2) =
        sweep(&|t, x, y| dg_dy(t, x, y, nu, m).unwrap().abs() * t * weight(t, x, y));
    checks.push(BoundCheck {
        bound_id: "A2".into(),
        a_constant: a,
        empirical_c: c2,
        n_samples: n2,
        pass: c2.is_finite() && c2h >= 0.5 * c2,
    });

    let (c3, c3h, n3) =
        sweep(&|t, x, y| dg_dt(t, x, y, nu, m).unwrap().abs() * t.powf(1.5) * weight(t, x, y));
    checks.push(BoundCheck {
        bound_id: "A3".into(),
        a_constant: a,
        empirical_c: c3,
        n_samples: n3,
        pass: c3.is_finite() && c3h >= 0.5 * c3,
    });

    // A5 with spatial exponent 1: difference quotient against the larger of
    // the two Gaussian envelopes, z swept over a fixed interior set.
    let z_set = [0.2, 0.35, 0.5, 0.65, 0.8];
    let mut c5 = 0.0f64;
    let mut c5h = 0.0f64;
    let mut n5 = 0usize;
    for (ti, &t) in t_samples.iter().enumerate() {
        for (pi, &(x, y)) in xy_samples.iter().enumerate() {
            if (x - y).abs() < 1e-9 {
                continue;
            }
            for &z in &z_set {
                let gx = g_image(t, x, z, nu, m).unwrap();
                let gy = g_image(t, y, z, nu, m).unwrap();
                let env = ((-(x - z) * (x - z) / (a * t)).exp())
                    .max((-(y - z) * (y - z) / (a * t)).exp());
                let v = (gx - gy).abs() / ((x - y).abs() * env) * t;
                c5 = c5.max(v);
                if ti % 2 == 0 && pi % 2 == 0 {
                    c5h = c5h.max(v);
                }
                n5 += 1;
            }
        }
    }
    checks.push(BoundCheck {
        bound_id: "A5".into(),
        a_constant: a,
        empirical_c: c5,
        n_samples: n5,
        pass: c5.is_finite() && c5h >= 0.5 * c5,
    });

    // A7: closed-form Gaussian integral, ||e^{-|.|^2/(a u)}||_{L^p([0,1])}
    // = (sqrt(pi a u/(4p)) erf(sqrt(p/(a u))))^{1/p}; the ratio to u^{1/(2p)}
    // increases as u -> 0 with limit (pi a/(4p))^{1/(2p)}.
    let mut c7 = 0.0f64;
    let mut ceiling7 = 0.0f64;
    let mut n7 = 0usize;
    for &p in &[1.0f64, 2.0, 4.0, 8.0] {
        for &u in t_samples {
            let integral =
                (PI * a * u / (4.0 * p)).sqrt() * statrs::function::erf::erf((p / (a * u)).sqrt());
            let norm = integral.powf(1.0 / p);
            c7 = c7.max(norm / u.powf(1.0 / (2.0 * p)));
            n7 += 1;
        }
        ceiling7 = ceiling7.max((PI * a / (4.0 * p)).powf(1.0 / (2.0 * p)));
    }
    checks.push(BoundCheck {
        bound_id: "A7".into(),
        a_constant: a,
        empirical_c: c7,
        n_samples: n7,
        pass: c7.is_finite() && c7 <= ceiling7 * (1.0 + 1e-9),
    });

    BoundReport { nu, checks }
}

/// Default sample sweep for the bound checks: log-spaced times in
/// [1e-3, 0.25] and an interior (x,y) lattice.
pub fn default_bound_sweep() -> (Vec<f64>, Vec<(f64, f64)>) {
    let n_t = 24;
    let (t0, t1) = (1e-3f64, 0.25f64);
    let ts = (0..n_t)
        .map(|k| t0 * (t1 / t0).powf(k as f64 / (n_t - 1) as f64))
        .collect();
    let mut xy = Vec::new();
    let n_x = 14;
    for i in 1..=n_x {
        for j in 1..=n_x {
            xy.push((i as f64 / (n_x + 1) as f64, j as f64 / (n_x + 1) as f64));
        }
    }
    (ts, xy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // frozen by an independent high-precision evaluation of the two series
    const G_IMAGE_001: f64 = 2.820947917660427;
    const G_CROSS_005: f64 = 0.5498610109177781;
    const G_SPEC_1: f64 = 1.034463724076246e-4;
    const DG_DY_001: f64 = -4.459885642125495;

    #[test]
    fn image_series_frozen_value() {
        let v = g_image(0.01, 0.5, 0.5, 1.0, 5).unwrap();
        assert_abs_diff_eq!(v, G_IMAGE_001, epsilon = 1e-12);
    }

    #[test]
    fn image_series_symmetry_and_boundary() {
        let a = g_image(0.013, 0.31, 0.77, 0.8, 5).unwrap();
        let b = g_image(0.013, 0.77, 0.31, 0.8, 5).unwrap();
        assert_eq!(a, b);
        let edge = g_image(0.01, 0.5, 0.0, 1.0, 5).unwrap();
        assert!(edge.abs() < 1e-13);
    }

    #[test]
    fn singular_time_rejected() {
        assert!(matches!(
            g_image(0.0, 0.5, 0.5, 1.0, 5),
            Err(SgbhError::SingularTime(_))
        ));
        assert!(matches!(
            g_spectral(-1.0, 0.5, 0.5, 1.0, 10),
            Err(SgbhError::SingularTime(_))
        ));
        assert!(matches!(
            dg_dy(0.0, 0.5, 0.5, 1.0, 5),
            Err(SgbhError::SingularTime(_))
        ));
    }

    #[test]
    fn spectral_frozen_values() {
        let v = g_spectral(1.0, 0.5, 0.5, 1.0, 3).unwrap();
        assert_abs_diff_eq!(v, G_SPEC_1, epsilon = 1e-12);
        assert_eq!(g_spectral(0.05, 0.0, 0.7, 1.0, 50).unwrap(), 0.0);
    }

    #[test]
    fn representations_agree_at_frozen_point() {
        let vi = g_image(0.05, 0.3, 0.7, 1.0, 5).unwrap();
        let vs = g_spectral(0.05, 0.3, 0.7, 1.0, 200).unwrap();
        assert_abs_diff_eq!(vi, G_CROSS_005, epsilon = 1e-12);
        assert_abs_diff_eq!(vs, G_CROSS_005, epsilon = 1e-12);
        assert!((vi - vs).abs() < 1e-10);
    }

    #[test]
    fn representations_agree_on_lattice() {
        // 50x50 interior lattice, nu t spanning [1e-3, 1]
        for &t in &[1e-3, 5e-3, 0.02, 0.05, 0.1, 0.3, 1.0] {
            let j = spectral_modes(t, 1.0);
            for i in 1..=50usize {
                for k in 1..=50usize {
                    let x = i as f64 / 51.0;
                    let y = k as f64 / 51.0;
                    let a = g_image(t, x, y, 1.0, 5).unwrap();
                    let b = g_spectral(t, x, y, 1.0, j).unwrap();
                    assert!(
                        (a - b).abs() <= 1e-9,
                        "t={t} x={x} y={y}: image {a} vs spectral {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_frozen_and_finite_difference() {
        let v = dg_dy(0.01, 0.3, 0.6, 1.0, 5).unwrap();
        assert_abs_diff_eq!(v, DG_DY_001, epsilon = 1e-12);

        assert!(dg_dy(0.01, 0.5, 0.5, 1.0, 5).unwrap().abs() < 1e-13);

        let d = 1e-6;
        for &(t, x, y) in &[(0.01, 0.3, 0.6), (0.05, 0.7, 0.2), (0.02, 0.5, 0.45)] {
            let fd = (g_image(t, x, y + d, 1.0, 5).unwrap()
                - g_image(t, x, y - d, 1.0, 5).unwrap())
                / (2.0 * d);
            let an = dg_dy(t, x, y, 1.0, 5).unwrap();
            let rel = (fd - an).abs() / an.abs().max(1.0);
            assert!(rel < 1e-6, "({t},{x},{y}): fd {fd} vs analytic {an}");
        }

        // boundary: central difference with one reflected evaluation
        let (t, x) = (0.01, 0.5);
        let fd = (g_image(t, x, d, 1.0, 5).unwrap() - g_image(t, x, -d + 2e-30, 1.0, 5).unwrap_or(0.0))
            / (2.0 * d);
        // G(t,x,-d) = -G(t,x,d) by the image antisymmetry, so the quotient is G(t,x,d)/d
        let fd_reflected = g_image(t, x, d, 1.0, 5).unwrap() / d;
        let an = dg_dy(t, x, 0.0, 1.0, 5).unwrap();
        assert!((fd_reflected - an).abs() / an.abs() < 1e-6);
        let _ = fd;
    }

    #[test]
    fn time_derivative_finite_difference() {
        let d = 1e-7;
        for &(t, x, y) in &[(0.02, 0.4, 0.6), (0.1, 0.5, 0.5)] {
            let fd = (g_image(t + d, x, y, 1.0, 5).unwrap()
                - g_image(t - d, x, y, 1.0, 5).unwrap())
                / (2.0 * d);
            let an = dg_dt(t, x, y, 1.0, 5).unwrap();
            assert!((fd - an).abs() / an.abs().max(1.0) < 1e-5);
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let lhs = chapman_kolmogorov_lhs(0.25, 0.5, 0.5, 1.0, 2048).unwrap();
        let rhs = g_image(0.25, 0.5, 0.5, 1.0, 5).unwrap();
        assert!((lhs - rhs).abs() < 1e-8, "lhs {lhs} rhs {rhs}");
        let lhs2 = chapman_kolmogorov_lhs(0.08, 0.3, 0.6, 0.5, 2048).unwrap();
        let rhs2 = g_image(0.08, 0.3, 0.6, 0.5, 5).unwrap();
        assert!((lhs2 - rhs2).abs() < 1e-8);
    }

    #[test]
    fn sub_markov_mass() {
        // quadrature of the kernel over y stays in (0,1] and never grows in t
        let n = 4000;
        let dz = 1.0 / n as f64;
        for &x in &[0.3, 0.5, 0.82] {
            let mut prev = 1.0f64;
            for k in 0..14 {
                let t = 1e-3 * 1.7f64.powi(k);
                let mut mass = 0.0;
                for i in 0..n {
                    let z = (i as f64 + 0.5) * dz;
                    mass += g_auto(t, x, z, 1.0).unwrap();
                }
                mass *= dz;
                assert!(mass > 0.0 && mass <= 1.0 + 1e-12, "t={t} mass={mass}");
                assert!(mass <= prev + 1e-10, "mass grew at t={t}");
                prev = mass;
            }
        }
    }

    #[test]
    fn kernel_nonnegative_on_lattice() {
        for &t in &[1e-3, 0.01, 0.1, 0.5] {
            for i in 1..=20 {
                for j in 1..=20 {
                    let x = i as f64 / 21.0;
                    let y = j as f64 / 21.0;
                    assert!(g_auto(t, x, y, 1.0).unwrap() >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn bound_sweep_passes() {
        let (ts, xy) = default_bound_sweep();
        let report = verify_kernel_bounds(&ts, &xy, 1.0);
        assert!(report.all_pass(), "{:?}", report);
        let a1 = &report.checks[0];
        assert!(a1.empirical_c <= 0.2821 + 2e-3);
        assert!(a1.empirical_c > 0.2);

        let report2 = verify_kernel_bounds(&ts, &xy, 0.5);
        assert!(report2.all_pass());
    }

    #[test]
    fn spectral_mode_rule() {
        let j = spectral_modes(1e-3, 1.0);
        assert!((-(j as f64 * j as f64) * PI * PI * 1e-3).exp() < 1e-16);
        assert!(spectral_modes(1e-9, 1.0) == SPECTRAL_MODE_CAP);
    }
}
