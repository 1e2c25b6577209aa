//! Deterministic controlled dynamics: the zero-noise flow driven by a
//! space-time control, its exact discrete adjoint, and a penalty-method
//! minimizer for the endpoint cost
//!   I(target) = min { (1/2) ||phi||_w^2 : controlled endpoint = target },
//! where ||.||_w is the dt*h-weighted l2 norm on control space.

use serde::Serialize;

use crate::dynamics::{c_nl_prime, p_nl_prime, GCoefficient, ModelParams};
use crate::error::SgbhError;
use crate::field::Field;
use crate::noise::NoiseSpec;
use crate::solver::{
    checked_steps, d1_central, grid_matching, run_integration, EnergyLedger, HeatSolve,
    IntegrateOpts, Trajectory,
};

/// Piecewise-constant-in-time space-time control, stored row-major as
/// n_steps rows of n_space nodal values. Its cost (1/2) dt h sum v^2 is
/// cached at construction.
#[derive(Debug, Clone)]
pub struct Control {
    values: Vec<f64>,
    n_steps: usize,
    n_space: usize,
    dt: f64,
    h: f64,
    cost: f64,
}

impl Control {
    pub fn new(values: Vec<f64>, n_steps: usize, n_space: usize, dt: f64) -> Result<Self, SgbhError> {
        if n_steps == 0 || n_space == 0 {
            return Err(SgbhError::Invalid(format!(
                "control needs at least one step and one node, got {n_steps} x {n_space}"
            )));
        }
        if values.len() != n_steps * n_space {
            return Err(SgbhError::Invalid(format!(
                "control holds {} values, expected {n_steps} x {n_space}",
                values.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SgbhError::Invalid(format!(
                "control time step must be positive and finite, got {dt}"
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SgbhError::Invalid("control values must be finite".into()));
        }
        let h = 1.0 / (n_space as f64 + 1.0);
        let cost = 0.5 * dt * h * values.iter().map(|v| v * v).sum::<f64>();
        Ok(Control {
            values,
            n_steps,
            n_space,
            dt,
            h,
            cost,
        })
    }

    pub fn zeros(n_steps: usize, n_space: usize, dt: f64) -> Result<Self, SgbhError> {
        Control::new(vec![0.0; n_steps * n_space], n_steps, n_space, dt)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_space..(k + 1) * self.n_space]
    }

    /// (1/2) dt h sum v^2 — quadratic, so scaling the control by c scales
    /// the cost by c^2.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn within_budget(&self, budget: f64) -> bool {
        self.cost <= budget
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, SgbhError> {
        Control::new(
            self.values.iter().map(|v| v * factor).collect(),
            self.n_steps,
            self.n_space,
            self.dt,
        )
    }

    pub(crate) fn check_shape(&self, steps: usize, n: usize, dt: f64) -> Result<(), SgbhError> {
        if self.n_steps != steps || self.n_space != n {
            return Err(SgbhError::Invalid(format!(
                "control shaped {} x {}, run needs {steps} x {n}",
                self.n_steps, self.n_space
            )));
        }
        if (self.dt - dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(SgbhError::Invalid(format!(
                "control recorded at dt = {}, run uses dt = {dt}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Zero-noise controlled flow ("skeleton"): the drift and control enter as in
/// the stochastic loop, the noise term is absent regardless of
/// params.epsilon.
pub fn solve_skeleton(
    u0: &Field,
    params: &ModelParams,
    g: &GCoefficient,
    phi: &Control,
    t_end: f64,
    dt: f64,
    opts: &IntegrateOpts,
) -> Result<(Trajectory, EnergyLedger), SgbhError> {
    run_integration(u0, params, t_end, dt, None, Some(phi), g, opts)
}

/// Noise plus control in one run; with params.epsilon = 0 this reproduces the
/// skeleton bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn solve_controlled(
    u0: &Field,
    params: &ModelParams,
    spec: &NoiseSpec,
    g: &GCoefficient,
    phi: &Control,
    t_end: f64,
    dt: f64,
    opts: &IntegrateOpts,
) -> Result<(Trajectory, EnergyLedger), SgbhError> {
    run_integration(u0, params, t_end, dt, Some(spec), Some(phi), g, opts)
}

/// Gradient of J(phi) = cost(phi) + (mu/2) h ||u^N(phi) - target||^2 in the
/// dt*h-weighted metric, from the exact transpose of the discrete forward
/// map (implicit diffusion step included).
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub gradient: Control,
    pub objective: f64,
    pub endpoint: Field,
    pub misfit: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn adjoint_gradient(
    u0: &Field,
    params: &ModelParams,
    g: &GCoefficient,
    phi: &Control,
    target: &Field,
    t_end: f64,
    dt: f64,
    mu: f64,
) -> Result<GradientEval, SgbhError> {
    let grid = grid_matching(u0)?;
    let n = grid.n_interior();
    let h = grid.h();
    if target.len() != n {
        return Err(SgbhError::Invalid(format!(
            "target has {} nodes, state has {n}",
            target.len()
        )));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(SgbhError::Invalid(format!(
            "penalty weight must be positive and finite, got {mu}"
        )));
    }
    let steps = checked_steps(t_end, dt)?;
    phi.check_shape(steps, n, dt)?;

    let opts = IntegrateOpts {
        save_stride: 1,
        ..IntegrateOpts::default()
    };
    let (traj, _) = run_integration(u0, params, t_end, dt, None, Some(phi), g, &opts)?;
    debug_assert_eq!(traj.fields.len(), steps + 1);
    let endpoint = traj.final_field().clone();

    let tvals = target.values();
    let evals = endpoint.values();
    let mut misfit = 0.0;
    // lam enters the backward sweep as the endpoint sensitivity mu h (u^N - target).
    let mut lam = vec![0.0; n];
    for i in 0..n {
        let d = evals[i] - tvals[i];
        misfit += d * d;
        lam[i] = mu * h * d;
    }
    misfit *= h;
    let objective = phi.cost() + 0.5 * mu * misfit;

    let heat = HeatSolve::new(n, params.nu * dt / (h * h));
    let c_alpha = params.convection_weight();
    let mut grad = vec![0.0; steps * n];
    let mut d1w = vec![0.0; n];
    for k in (0..steps).rev() {
        // w = A^{-1} lam^{k+1}; the solve is its own transpose (symmetric A).
        heat.solve_in_place(&mut lam);
        let uk = traj.fields[k].values();
        let row = phi.row(k);
        for i in 0..n {
            grad[k * n + i] = row[i] + g.eval(uk[i]) * lam[i] / h;
        }
        if k > 0 {
            // lam^k = w + dt (dF_k)^T w; the convection block transposes to
            // +p'(u) (D1 w) because D1 is skew-symmetric.
            d1_central(&lam, h, &mut d1w);
            for i in 0..n {
                let u_i = uk[i];
                let fw = params.beta * c_nl_prime(u_i, params.delta, params.gamma) * lam[i]
                    + c_alpha * p_nl_prime(u_i, params.delta) * d1w[i]
                    + g.deriv(u_i) * row[i] * lam[i];
                lam[i] += dt * fw;
            }
        }
    }

    Ok(GradientEval {
        gradient: Control::new(grad, steps, n, dt)?,
        objective,
        endpoint,
        misfit,
    })
}

/// Penalty-ladder configuration for the endpoint rate minimization.
#[derive(Debug, Clone)]
pub struct OptConfig {
    /// Increasing penalty weights; the last entry decides convergence.
    pub mu_ladder: Vec<f64>,
    pub max_iters_per_mu: usize,
    /// Converged when grad_norm <= tol_factor * (1 + objective).
    pub tol_factor: f64,
    pub max_backtracks: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            mu_ladder: vec![1e2, 1e3, 1e4, 1e5, 1e6],
            max_iters_per_mu: 500,
            tol_factor: 1e-6,
            max_backtracks: 40,
        }
    }
}

/// Minimizer output: `value` is the control cost (the rate proxy),
/// `feasibility_gap` the terminal distance h-norm to the target.
#[derive(Debug, Clone, Serialize)]
pub struct RateResult {
    pub value: f64,
    #[serde(skip)]
    pub control: Control,
    pub grad_norm: f64,
    pub iterations: usize,
    pub feasibility_gap: f64,
}

fn weighted_dot(a: &[f64], b: &[f64], dt: f64, h: f64) -> f64 {
    dt * h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Penalty method with warm starts across the mu ladder. Each stage runs
/// spectral-step (Barzilai-Borwein) gradient descent with Armijo
/// backtracking; trial points whose forward run leaves the stable regime are
/// treated as rejected steps, not hard errors.
pub fn rate_function_endpoint(
    u0: &Field,
    params: &ModelParams,
    g: &GCoefficient,
    target: &Field,
    t_end: f64,
    dt: f64,
    cfg: &OptConfig,
) -> Result<RateResult, SgbhError> {
    if cfg.mu_ladder.is_empty() {
        return Err(SgbhError::Invalid("penalty ladder must not be empty".into()));
    }
    if cfg
        .mu_ladder
        .windows(2)
        .any(|w| !(w[1] > w[0]) || !w[0].is_finite())
        || cfg.mu_ladder[0] <= 0.0
    {
        return Err(SgbhError::Invalid(
            "penalty ladder must be positive and strictly increasing".into(),
        ));
    }
    if cfg.max_iters_per_mu == 0 || !(cfg.tol_factor > 0.0) {
        return Err(SgbhError::Invalid(
            "need max_iters_per_mu >= 1 and a positive tol_factor".into(),
        ));
    }
    let grid = grid_matching(u0)?;
    let n = grid.n_interior();
    let h = grid.h();
    if target.len() != n {
        return Err(SgbhError::Invalid(format!(
            "target has {} nodes, state has {n}",
            target.len()
        )));
    }
    let steps = checked_steps(t_end, dt)?;

    let mut phi = Control::zeros(steps, n, dt)?;
    let mut total_iters = 0usize;
    let mut last: Option<RateResult> = None;
    let stages = cfg.mu_ladder.len();

    for (si, &mu) in cfg.mu_ladder.iter().enumerate() {
        let mut eval = adjoint_gradient(u0, params, g, &phi, target, t_end, dt, mu)?;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut converged = false;
        let mut step_len = 1.0 / (1.0 + mu);

        for _ in 0..cfg.max_iters_per_mu {
            let gvals = eval.gradient.values();
            let gnorm2 = weighted_dot(gvals, gvals, dt, h);
            let gnorm = gnorm2.sqrt();
            if gnorm <= cfg.tol_factor * (1.0 + eval.objective) {
                converged = true;
                break;
            }
            total_iters += 1;
            if let Some((ps, pg)) = &prev {
                let s: Vec<f64> = phi.values().iter().zip(ps).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gvals.iter().zip(pg).map(|(a, b)| a - b).collect();
                let ss = weighted_dot(&s, &s, dt, h);
                let sy = weighted_dot(&s, &y, dt, h);
                step_len = if sy > 0.0 {
                    (ss / sy).clamp(1e-12, 1e6)
                } else {
                    1.0
                };
            }
            let mut t = step_len;
            let mut accepted = None;
            for _ in 0..=cfg.max_backtracks {
                let cand_vals: Vec<f64> = phi
                    .values()
                    .iter()
                    .zip(gvals)
                    .map(|(p, gr)| p - t * gr)
                    .collect();
                if cand_vals.iter().all(|v| v.is_finite()) {
                    let cand = Control::new(cand_vals, steps, n, dt)?;
                    match adjoint_gradient(u0, params, g, &cand, target, t_end, dt, mu) {
                        Ok(cand_eval) => {
                            if cand_eval.objective <= eval.objective - 1e-4 * t * gnorm2 {
                                accepted = Some((cand, cand_eval));
                                break;
                            }
                        }
                        Err(SgbhError::Blowup { .. }) | Err(SgbhError::Cfl { .. }) => {}
                        Err(other) => return Err(other),
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some((cand, cand_eval)) => {
                    prev = Some((phi.values().to_vec(), eval.gradient.values().to_vec()));
                    phi = cand;
                    eval = cand_eval;
                }
                None => break,
            }
        }

        let gvals = eval.gradient.values();
        let gnorm = weighted_dot(gvals, gvals, dt, h).sqrt();
        if !converged {
            converged = gnorm <= cfg.tol_factor * (1.0 + eval.objective);
        }
        let result = RateResult {
            value: phi.cost(),
            control: phi.clone(),
            grad_norm: gnorm,
            iterations: total_iters,
            feasibility_gap: eval.misfit.sqrt(),
        };
        if si + 1 == stages && !converged {
            return Err(SgbhError::NonConvergence {
                grad_norm: gnorm,
                iterations: total_iters,
                best: Box::new(result),
            });
        }
        last = Some(result);
    }

    Ok(last.expect("ladder is nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{EigenPair, Grid};
    use crate::noise::counter_rng;
    use crate::solver::integrate;
    use rand::Rng;

    fn unit_g() -> GCoefficient {
        GCoefficient::constant(1.0).unwrap()
    }

    fn heat_params(nu: f64) -> ModelParams {
        ModelParams::new(nu, 0.0, 0.0, 1.0, 1, 0.0).unwrap()
    }

    fn mode_forcing(grid: &Grid, j: usize, amp: f64, steps: usize) -> Control {
        let pair = EigenPair::new(j);
        let row: Vec<f64> = grid.nodes().iter().map(|&x| amp * pair.phi(x)).collect();
        let mut values = Vec::with_capacity(steps * row.len());
        for _ in 0..steps {
            values.extend_from_slice(&row);
        }
        Control::new(values, steps, row.len(), 1e-3).unwrap()
    }

    #[test]
    fn control_cost_is_quadratic() {
        let values = vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let phi = Control::new(values.clone(), 2, 3, 0.01).unwrap();
        let h = 0.25;
        let expected = 0.5 * 0.01 * h * values.iter().map(|v| v * v).sum::<f64>();
        assert!((phi.cost() - expected).abs() < 1e-15);
        let doubled = phi.scaled(2.0).unwrap();
        assert!((doubled.cost() - 4.0 * phi.cost()).abs() < 1e-14);
        assert!(phi.within_budget(expected + 1e-12));
        assert!(!phi.within_budget(expected / 2.0));
        assert_eq!(phi.row(1), &values[3..6]);

        assert!(Control::new(vec![0.0; 5], 2, 3, 0.01).is_err());
        assert!(Control::new(vec![f64::NAN; 6], 2, 3, 0.01).is_err());
        assert!(Control::new(vec![0.0; 6], 2, 3, 0.0).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let grid = Grid::new(15).unwrap();
        let u0 = grid.zero_field();
        let phi = Control::zeros(10, 15, 1e-3).unwrap();
        // wrong step count for the horizon
        let err = solve_skeleton(
            &u0,
            &heat_params(0.1),
            &unit_g(),
            &phi,
            0.02,
            1e-3,
            &IntegrateOpts::default(),
        )
        .unwrap_err();
        assert_eq!(err.kind(), "invalid-argument");
    }

    #[test]
    fn forced_mode_matches_per_step_recursion() {
        let grid = Grid::new(31).unwrap();
        let nu = 0.3;
        let params = heat_params(nu);
        let dt = 1e-3;
        let steps = 100;
        let a0 = 0.4;
        let u0 = grid.sample_mode(1, a0);
        let phi = mode_forcing(&grid, 1, 1.0, steps);
        let (traj, _) = solve_skeleton(
            &u0,
            &params,
            &unit_g(),
            &phi,
            dt * steps as f64,
            dt,
            &IntegrateOpts::default(),
        )
        .unwrap();
        let terminal = traj.final_field();

        // each step maps the mode-1 coefficient a -> rho (a + dt), hence
        // a_N = rho^N a0 + (1 - rho^N) / (nu lambda_1^h)
        let lam_h = grid.discrete_eigenvalue(1);
        let rho = 1.0 / (1.0 + nu * lam_h * dt);
        let expected = rho.powi(steps as i32) * a0 + (1.0 - rho.powi(steps as i32)) / (nu * lam_h);
        let got = grid.project(terminal, 1).unwrap();
        assert!(
            (got - expected).abs() < 1e-10,
            "mode-1 coefficient {got} vs recursion {expected}"
        );
        for j in [2usize, 3, 5] {
            assert!(grid.project(terminal, j).unwrap().abs() < 1e-10);
        }

        // continuum limit of the same quantity
        let lam = EigenPair::new(1).lambda;
        let t_end = dt * steps as f64;
        let decay = (-nu * lam * t_end).exp();
        let continuum = a0 * decay + (1.0 - decay) / (nu * lam);
        assert!(
            (got - continuum).abs() / continuum < 5e-3,
            "discrete {got} vs continuum {continuum}"
        );
    }

    #[test]
    fn zero_control_and_zero_noise_agree_with_integrate() {
        let grid = Grid::new(15).unwrap();
        let u0 = grid.sample_mode(1, 0.4);
        let params = ModelParams::new(0.1, 1.0, 1.0, 1.0, 1, 0.0).unwrap();
        let dt = 1e-3;
        let steps = 30;
        let phi = Control::zeros(steps, 15, dt).unwrap();
        let opts = IntegrateOpts::default();
        let (a, _) = solve_skeleton(&u0, &params, &unit_g(), &phi, dt * steps as f64, dt, &opts)
            .unwrap();
        let (b, _) = integrate(
            &u0,
            &params,
            dt * steps as f64,
            dt,
            &NoiseSpec::white(0),
            &unit_g(),
            &opts,
        )
        .unwrap();
        let (c, _) = solve_controlled(
            &u0,
            &params,
            &NoiseSpec::white(0),
            &unit_g(),
            &phi,
            dt * steps as f64,
            dt,
            &opts,
        )
        .unwrap();
        for ((x, y), z) in a.fields.iter().zip(&b.fields).zip(&c.fields) {
            assert_eq!(x.values(), y.values());
            assert_eq!(x.values(), z.values());
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        let grid = Grid::new(15).unwrap();
        let n = 15;
        let dt = 1e-3;
        let steps = 20;
        let t_end = dt * steps as f64;
        let mu = 10.0;
        let u0 = grid.sample_mode(1, 0.3);
        let target = grid.sample_mode(1, 0.2);

        let cases: Vec<(ModelParams, GCoefficient)> = vec![
            (
                ModelParams::new(0.1, 1.0, 1.0, 1.0, 1, 0.0).unwrap(),
                GCoefficient::constant(0.5).unwrap(),
            ),
            (
                ModelParams::new(0.2, 0.5, 1.5, 1.2, 2, 0.0).unwrap(),
                GCoefficient::linear(0.4).unwrap(),
            ),
            (
                ModelParams::new(0.15, 0.8, 1.0, 1.0, 1, 0.0).unwrap(),
                GCoefficient::bounded_sigmoid(0.5, 1.0).unwrap(),
            ),
        ];

        let mut rng = counter_rng(2025, 0, 0, 0xFD);
        for (params, g) in &cases {
            let base: Vec<f64> = (0..steps * n).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let phi = Control::new(base.clone(), steps, n, dt).unwrap();
            let eval = adjoint_gradient(&u0, params, g, &phi, &target, t_end, dt, mu).unwrap();

            for _ in 0..4 {
                let dir: Vec<f64> = (0..steps * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let theta = 1e-5;
                let plus: Vec<f64> = base.iter().zip(&dir).map(|(p, d)| p + theta * d).collect();
                let minus: Vec<f64> = base.iter().zip(&dir).map(|(p, d)| p - theta * d).collect();
                let obj = |vals: Vec<f64>| -> f64 {
                    let c = Control::new(vals, steps, n, dt).unwrap();
                    adjoint_gradient(&u0, params, g, &c, &target, t_end, dt, mu)
                        .unwrap()
                        .objective
                };
                let fd = (obj(plus) - obj(minus)) / (2.0 * theta);
                let an = weighted_dot(eval.gradient.values(), &dir, dt, grid.h());
                let scale = fd.abs().max(an.abs()).max(1e-10);
                assert!(
                    (fd - an).abs() / scale < 1e-4,
                    "directional derivative {fd} vs adjoint {an}"
                );
            }
        }
    }

    #[test]
    fn adjoint_gradient_linear_case_closed_form() {
        // alpha = beta = 0 with state-independent g: the forward map is
        // linear, so the gradient is phi + mu * sum_j rho_j^(N-k) d_j phi_j
        // with d the modal decomposition of the endpoint misfit.
        let grid = Grid::new(15).unwrap();
        let n = 15;
        let nu = 0.25;
        let params = heat_params(nu);
        let dt = 2e-3;
        let steps = 25;
        let t_end = dt * steps as f64;
        let mu = 50.0;
        let u0 = grid.sample_mode(2, 0.4);
        let target = grid.sample(|x| 0.3 * EigenPair::new(1).phi(x) - 0.1 * x);

        let mut rng = counter_rng(77, 1, 0, 0xC0DE);
        let base: Vec<f64> = (0..steps * n).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let phi = Control::new(base.clone(), steps, n, dt).unwrap();
        let eval = adjoint_gradient(&u0, &params, &unit_g(), &phi, &target, t_end, dt, mu).unwrap();

        let diff = Field::new(
            eval.endpoint
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| a - b)
                .collect(),
            grid.h(),
        );
        let mut expected = base;
        for j in 1..=n {
            let d_j = grid.project(&diff, j).unwrap();
            let rho = 1.0 / (1.0 + nu * grid.discrete_eigenvalue(j) * dt);
            let pair = EigenPair::new(j);
            for k in 0..steps {
                let factor = mu * rho.powi((steps - k) as i32) * d_j;
                for (i, &x) in grid.nodes().iter().enumerate() {
                    expected[k * n + i] += factor * pair.phi(x);
                }
            }
        }
        let sup = eval
            .gradient
            .values()
            .iter()
            .zip(&expected)
            .fold(0.0f64, |a, (&g1, &g2)| a.max((g1 - g2).abs()));
        assert!(sup < 1e-8, "adjoint vs modal closed form sup = {sup:e}");
    }

    #[test]
    fn rate_of_reachable_target_is_zero() {
        let grid = Grid::new(15).unwrap();
        let u0 = grid.sample_mode(1, 0.3);
        let params = ModelParams::new(0.1, 1.0, 1.0, 1.0, 1, 0.0).unwrap();
        let dt = 1e-3;
        let t_end = 0.02;
        let phi = Control::zeros(20, 15, dt).unwrap();
        let (traj, _) = solve_skeleton(
            &u0,
            &params,
            &unit_g(),
            &phi,
            t_end,
            dt,
            &IntegrateOpts::default(),
        )
        .unwrap();
        let target = traj.final_field().clone();
        let result = rate_function_endpoint(
            &u0,
            &params,
            &unit_g(),
            &target,
            t_end,
            dt,
            &OptConfig::default(),
        )
        .unwrap();
        assert!(result.value < 1e-8, "free endpoint costs {}", result.value);
        assert!(result.feasibility_gap < 1e-6);
    }

    #[test]
    fn linear_rate_matches_modal_closed_form_and_scales_quadratically() {
        // Driving a single discrete mode from rest: cost b^2 / (2 Gamma_N)
        // with Gamma_N = dt rho^2 (1 - rho^(2N)) / (1 - rho^2).
        let grid = Grid::new(15).unwrap();
        let nu = 0.1;
        let params = heat_params(nu);
        let dt = 2e-3;
        let steps = 50;
        let t_end = dt * steps as f64;
        let u0 = grid.zero_field();
        let b = 0.3;
        let target = grid.sample_mode(1, b);

        let cfg = OptConfig::default();
        let result =
            rate_function_endpoint(&u0, &params, &unit_g(), &target, t_end, dt, &cfg).unwrap();
        let rho = 1.0 / (1.0 + nu * grid.discrete_eigenvalue(1) * dt);
        let gamma_n = dt * rho * rho * (1.0 - rho.powi(2 * steps as i32)) / (1.0 - rho * rho);
        let expected = b * b / (2.0 * gamma_n);
        assert!(
            (result.value - expected).abs() / expected < 1e-3,
            "rate {} vs closed form {expected}",
            result.value
        );
        assert!(result.feasibility_gap < 1e-4 * (1.0 + b));

        let double_target = grid.sample_mode(1, 2.0 * b);
        let doubled =
            rate_function_endpoint(&u0, &params, &unit_g(), &double_target, t_end, dt, &cfg)
                .unwrap();
        let ratio = doubled.value / result.value;
        assert!(
            (ratio - 4.0).abs() < 1e-2,
            "doubling the target scales the cost by {ratio}"
        );
    }

    #[test]
    fn exhausted_ladder_reports_best_iterate() {
        let grid = Grid::new(15).unwrap();
        let u0 = grid.zero_field();
        let params = heat_params(0.1);
        let target = grid.sample_mode(1, 0.5);
        let cfg = OptConfig {
            mu_ladder: vec![1e2, 1e3],
            max_iters_per_mu: 1,
            tol_factor: 1e-16,
            max_backtracks: 4,
        };
        let err = rate_function_endpoint(&u0, &params, &unit_g(), &target, 0.02, 1e-3, &cfg)
            .unwrap_err();
        assert_eq!(err.kind(), "nonconvergence");
        match err {
            SgbhError::NonConvergence { best, .. } => {
                assert!(best.value.is_finite());
                assert!(best.grad_norm > 0.0);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
