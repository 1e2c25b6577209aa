//! Run configurations: flat JSON with named blocks, validated in full
//! before any compute so a bad file is rejected with every violated
//! constraint listed at once rather than one error per rerun.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgbh_core::{
    monitor_exponent_violation, Control, EventNorm, Field, GCoefficient, Grid, IntegrateOpts,
    ModelParams, NoiseSpec, SgbhError,
};
use thiserror::Error;

/// Failure to obtain a usable configuration; everything here is a config
/// error (exit 2), as opposed to a numerical error during the run.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Parse failures carry the line/column reported by the JSON parser.
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration:\n{}", violations.join("\n"))]
    Invalid { violations: Vec<String> },
}

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Skeleton,
    Rate,
    Mc,
    Uniform,
    KernelCheck,
    Decompose,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Skeleton => "skeleton",
            ExperimentKind::Rate => "rate",
            ExperimentKind::Mc => "mc",
            ExperimentKind::Uniform => "uniform",
            ExperimentKind::KernelCheck => "kernel-check",
            ExperimentKind::Decompose => "decompose",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: i32,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n_interior: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    /// Final time; must be an integer multiple of dt.
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_stride")]
    pub save_stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseBlock {
    White,
    Colored {
        eta: f64,
        #[serde(default)]
        modes: Option<usize>,
        #[serde(default)]
        amplitude: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GBlock {
    Constant { k: f64 },
    Linear { k: f64 },
    BoundedSigmoid { k: f64, l: f64 },
}

/// Initial states (and endpoint targets) expressible in a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileBlock {
    Zero,
    /// amplitude * sqrt(2) sin(j pi x) at the nodes.
    Mode { j: usize, amplitude: f64 },
    /// amplitude * x (1 - x) at the nodes.
    Parabola { amplitude: f64 },
    /// Explicit interior nodal values, left to right.
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlBlock {
    Zero,
    /// The spatial mode held constant over every time step.
    Mode { j: usize, amplitude: f64 },
    /// Explicit values, step-major: row k holds the forcing on (t_k, t_{k+1}].
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormBlock {
    Sup,
    Lp { p: u32 },
}

impl NormBlock {
    pub fn to_norm(&self) -> EventNorm {
        match self {
            NormBlock::Sup => EventNorm::Sup,
            NormBlock::Lp { p } => EventNorm::Lp(*p),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorBlock {
    /// Norm-monitor exponent; omitted means the model's default rule.
    #[serde(default)]
    pub p: Option<u32>,
    /// Threshold whose first crossing is recorded as tau_r.
    #[serde(default)]
    pub r: Option<f64>,
    /// Truncation threshold for the drift/noise cutoff.
    #[serde(default)]
    pub r_trunc: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonBlock {
    pub control: ControlBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateBlock {
    pub target: ProfileBlock,
    #[serde(default)]
    pub mu_ladder: Option<Vec<f64>>,
    #[serde(default)]
    pub max_iters_per_mu: Option<usize>,
    #[serde(default)]
    pub tol_factor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventBlock {
    pub center: ProfileBlock,
    pub radius: f64,
    pub norm: NormBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    /// Strictly decreasing noise intensities.
    pub eps_ladder: Vec<f64>,
    pub n_samples: usize,
    pub event: EventBlock,
    /// Optional closed-form rate copied into the output for comparison.
    #[serde(default)]
    pub rate_reference: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBlock {
    pub eps_ladder: Vec<f64>,
    pub n_samples: usize,
    /// Tube radius around each zero-noise reference.
    pub eta: f64,
    pub n_initial: usize,
    pub n_controls: usize,
    pub u0_bound: f64,
    pub cost_bound: f64,
    pub norm: NormBlock,
}

/// One experiment, fully specified. Everything a run needs lives in this
/// file; the only outside override is the output directory (--out flag or
/// SGBH_OUTPUT_DIR), so artifacts are reproducible from the config alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub time: TimeBlock,
    pub noise: NoiseBlock,
    pub g: GBlock,
    pub initial: ProfileBlock,
    #[serde(default)]
    pub monitor: MonitorBlock,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub skeleton: Option<SkeletonBlock>,
    #[serde(default)]
    pub rate: Option<RateBlock>,
    #[serde(default)]
    pub mc: Option<McBlock>,
    #[serde(default)]
    pub uniform: Option<UniformBlock>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

/// Outcome of the no-compute validation pass.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// Read and parse a config file, keeping the raw bytes for hashing.
    pub fn load(path: &Path) -> Result<(RunConfig, Vec<u8>), ConfigError> {
        let raw = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig =
            serde_json::from_slice(&raw).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        Ok((cfg, raw))
    }

    pub fn params(&self) -> Result<ModelParams, SgbhError> {
        let m = &self.model;
        ModelParams::new(m.nu, m.alpha, m.beta, m.gamma, m.delta, m.epsilon)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, SgbhError> {
        match &self.noise {
            NoiseBlock::White => Ok(NoiseSpec::white(self.seed)),
            NoiseBlock::Colored {
                eta,
                modes,
                amplitude,
            } => NoiseSpec::colored_with_amplitude(*eta, *modes, amplitude.unwrap_or(1.0), self.seed),
        }
    }

    pub fn g_coefficient(&self) -> Result<GCoefficient, SgbhError> {
        match &self.g {
            GBlock::Constant { k } => GCoefficient::constant(*k),
            GBlock::Linear { k } => GCoefficient::linear(*k),
            GBlock::BoundedSigmoid { k, l } => GCoefficient::bounded_sigmoid(*k, *l),
        }
    }

    pub fn build_grid(&self) -> Result<Grid, SgbhError> {
        Grid::new(self.grid.n_interior)
    }

    /// Sample a profile block at the grid nodes.
    pub fn build_profile(&self, block: &ProfileBlock, grid: &Grid) -> Result<Field, SgbhError> {
        match block {
            ProfileBlock::Zero => Ok(grid.zero_field()),
            ProfileBlock::Mode { j, amplitude } => {
                if *j == 0 || *j > grid.n_interior() {
                    return Err(SgbhError::Aliasing {
                        j: *j,
                        n: grid.n_interior(),
                    });
                }
                Ok(grid.sample_mode(*j, *amplitude))
            }
            ProfileBlock::Parabola { amplitude } => {
                let a = *amplitude;
                Ok(grid.sample(|x| a * x * (1.0 - x)))
            }
            ProfileBlock::Values { values } => {
                if values.len() != grid.n_interior() {
                    return Err(SgbhError::Invalid(format!(
                        "profile lists {} values, grid has {} interior nodes",
                        values.len(),
                        grid.n_interior()
                    )));
                }
                Ok(Field::new(values.clone(), grid.h()))
            }
        }
    }

    pub fn build_control(
        &self,
        block: &ControlBlock,
        grid: &Grid,
        n_steps: usize,
    ) -> Result<Control, SgbhError> {
        let n = grid.n_interior();
        let dt = self.time.dt;
        match block {
            ControlBlock::Zero => Control::zeros(n_steps, n, dt),
            ControlBlock::Mode { j, amplitude } => {
                if *j == 0 || *j > n {
                    return Err(SgbhError::Aliasing { j: *j, n });
                }
                let row = grid.sample_mode(*j, *amplitude);
                let mut values = Vec::with_capacity(n_steps * n);
                for _ in 0..n_steps {
                    values.extend_from_slice(row.values());
                }
                Control::new(values, n_steps, n, dt)
            }
            ControlBlock::Values { values } => Control::new(values.clone(), n_steps, n, dt),
        }
    }

    pub fn integrate_opts(&self, retain_noise: bool) -> IntegrateOpts {
        IntegrateOpts {
            save_stride: self.time.save_stride,
            retain_noise,
            monitor_p: self.monitor.p,
            monitor_r: self.monitor.r,
            r_trunc: self.monitor.r_trunc,
        }
    }

    /// Number of time steps; call only on a validated config.
    pub fn n_steps(&self) -> usize {
        (self.time.t_end / self.time.dt).round() as usize
    }

    /// Full validation pass: every violated constraint is listed, nothing is
    /// computed. Warnings flag configurations that are legal but likely to
    /// abort at run time.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut warnings = Vec::new();

        // Model block: reuse the library's own constraint list.
        let draft = ModelParams {
            nu: self.model.nu,
            alpha: self.model.alpha,
            beta: self.model.beta,
            gamma: self.model.gamma,
            delta: self.model.delta,
            epsilon: self.model.epsilon,
        };
        violations.extend(draft.violations());

        if self.grid.n_interior < 3 {
            violations.push(format!(
                "grid needs at least 3 interior nodes, got {}",
                self.grid.n_interior
            ));
        }

        let t = self.time.t_end;
        let dt = self.time.dt;
        if !(t > 0.0 && t.is_finite()) {
            violations.push(format!("T must be positive and finite, got {t}"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            violations.push(format!("dt must be positive and finite, got {dt}"));
        }
        if t > 0.0 && dt > 0.0 {
            let ratio = t / dt;
            if (ratio - ratio.round()).abs() > 1e-9 * (1.0 + ratio.abs()) || ratio.round() < 1.0 {
                violations.push(format!("T = {t} is not an integer multiple of dt = {dt}"));
            }
        }
        if self.time.save_stride == 0 {
            violations.push("save_stride must be at least 1".into());
        }

        if let NoiseBlock::Colored {
            eta,
            modes,
            amplitude,
        } = &self.noise
        {
            if !(*eta > 0.25) {
                violations.push(format!(
                    "spectral decay eta = {eta} violates the trace condition eta > 1/4"
                ));
            }
            if let Some(a) = amplitude {
                if !(*a > 0.0 && a.is_finite()) {
                    violations.push(format!("noise amplitude must be positive and finite, got {a}"));
                }
            }
            if *modes == Some(0) {
                violations.push("colored noise needs at least 1 retained mode".into());
            }
        }

        let g = match self.g_coefficient() {
            Ok(g) => Some(g),
            Err(e) => {
                violations.push(e.to_string());
                None
            }
        };

        if let (Some(p), Some(g)) = (self.monitor.p, g.as_ref()) {
            if let Some(v) = monitor_exponent_violation(p, self.model.delta, g) {
                violations.push(v);
            }
        }
        for (name, value) in [("monitor r", self.monitor.r), ("r_trunc", self.monitor.r_trunc)] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    violations.push(format!("{name} must be positive and finite, got {v}"));
                }
            }
        }

        self.check_profile(&self.initial, "initial", &mut violations);

        // Stepper guard, evaluated at the configured field bound: the
        // truncation threshold if one is set, else the monitor threshold,
        // else 1 (the natural scale of the reaction term's stable branch).
        if self.model.alpha > 0.0 && self.grid.n_interior >= 3 && dt > 0.0 {
            let bound = self.monitor.r_trunc.or(self.monitor.r).unwrap_or(1.0);
            let h = 1.0 / (self.grid.n_interior as f64 + 1.0);
            let cfl = self.model.alpha * bound.powi(self.model.delta.max(0)) * dt / h;
            if cfl > 1.0 {
                warnings.push(format!(
                    "CFL: alpha * B^delta * dt / h = {cfl:.3} exceeds 1 at the field bound B = {bound}; \
                     the stepper aborts any run that reaches this amplitude"
                ));
            }
        }

        match self.experiment {
            ExperimentKind::Simulate | ExperimentKind::KernelCheck => {}
            ExperimentKind::Skeleton => match &self.skeleton {
                None => violations.push("experiment \"skeleton\" requires a skeleton block".into()),
                Some(b) => self.check_control(&b.control, &mut violations),
            },
            ExperimentKind::Rate => match &self.rate {
                None => violations.push("experiment \"rate\" requires a rate block".into()),
                Some(b) => {
                    self.check_profile(&b.target, "rate target", &mut violations);
                    if let Some(ladder) = &b.mu_ladder {
                        if ladder.is_empty()
                            || ladder[0] <= 0.0
                            || ladder.windows(2).any(|w| !(w[1] > w[0]) || !w[0].is_finite())
                        {
                            violations.push(
                                "penalty ladder must be positive and strictly increasing".into(),
                            );
                        }
                    }
                    if b.max_iters_per_mu == Some(0) {
                        violations.push("max_iters_per_mu must be at least 1".into());
                    }
                    if let Some(tf) = b.tol_factor {
                        if !(tf > 0.0) {
                            violations.push(format!("tol_factor must be positive, got {tf}"));
                        }
                    }
                }
            },
            ExperimentKind::Mc => match &self.mc {
                None => violations.push("experiment \"mc\" requires an mc block".into()),
                Some(b) => {
                    check_eps_ladder(&b.eps_ladder, &mut violations);
                    if b.n_samples < 100 {
                        violations.push(format!(
                            "mc needs at least 100 samples per intensity, got {}",
                            b.n_samples
                        ));
                    }
                    self.check_profile(&b.event.center, "event center", &mut violations);
                    if !(b.event.radius > 0.0 && b.event.radius.is_finite()) {
                        violations.push(format!(
                            "event radius must be positive and finite, got {}",
                            b.event.radius
                        ));
                    }
                    check_norm(&b.event.norm, &mut violations);
                }
            },
            ExperimentKind::Uniform => match &self.uniform {
                None => violations.push("experiment \"uniform\" requires a uniform block".into()),
                Some(b) => {
                    check_eps_ladder(&b.eps_ladder, &mut violations);
                    if b.n_samples < 100 {
                        violations.push(format!(
                            "uniform needs at least 100 samples per intensity, got {}",
                            b.n_samples
                        ));
                    }
                    if !(b.eta > 0.0 && b.eta.is_finite()) {
                        violations.push(format!(
                            "tube radius eta must be positive and finite, got {}",
                            b.eta
                        ));
                    }
                    if b.n_initial == 0 || b.n_controls == 0 {
                        violations
                            .push("uniform needs at least one initial state and one control".into());
                    }
                    for (name, v) in [("u0_bound", b.u0_bound), ("cost_bound", b.cost_bound)] {
                        if !(v > 0.0 && v.is_finite()) {
                            violations
                                .push(format!("{name} must be positive and finite, got {v}"));
                        }
                    }
                    check_norm(&b.norm, &mut violations);
                }
            },
            ExperimentKind::Decompose => {
                if !(self.model.epsilon > 0.0) {
                    violations.push(
                        "decompose needs a stochastic run: epsilon must be positive".into(),
                    );
                }
                if let Some(g) = g.as_ref() {
                    if !g.is_bounded() {
                        violations.push(
                            "the z/zeta decomposition requires a bounded noise coefficient".into(),
                        );
                    } else if !matches!(g, GCoefficient::Constant { .. })
                        && self.time.save_stride != 1
                    {
                        violations.push(
                            "a state-dependent noise coefficient requires save_stride = 1 \
                             for the decomposition"
                                .into(),
                        );
                    }
                }
            }
        }

        ValidationReport {
            valid: violations.is_empty(),
            violations,
            warnings,
        }
    }

    fn check_profile(&self, block: &ProfileBlock, what: &str, violations: &mut Vec<String>) {
        let n = self.grid.n_interior;
        match block {
            ProfileBlock::Zero => {}
            ProfileBlock::Mode { j, .. } => {
                if *j == 0 || (n >= 3 && *j > n) {
                    violations.push(format!("{what}: mode j = {j} exceeds grid resolution n = {n}"));
                }
            }
            ProfileBlock::Parabola { amplitude } => {
                if !amplitude.is_finite() {
                    violations.push(format!("{what}: amplitude must be finite"));
                }
            }
            ProfileBlock::Values { values } => {
                if n >= 3 && values.len() != n {
                    violations.push(format!(
                        "{what}: {} values listed, grid has {n} interior nodes",
                        values.len()
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    violations.push(format!("{what}: values must all be finite"));
                }
            }
        }
    }

    fn check_control(&self, block: &ControlBlock, violations: &mut Vec<String>) {
        let n = self.grid.n_interior;
        match block {
            ControlBlock::Zero => {}
            ControlBlock::Mode { j, .. } => {
                if *j == 0 || (n >= 3 && *j > n) {
                    violations.push(format!(
                        "control: mode j = {j} exceeds grid resolution n = {n}"
                    ));
                }
            }
            ControlBlock::Values { values } => {
                let steps = if self.time.dt > 0.0 && self.time.t_end > 0.0 {
                    (self.time.t_end / self.time.dt).round() as usize
                } else {
                    0
                };
                if n >= 3 && steps > 0 && values.len() != steps * n {
                    violations.push(format!(
                        "control: {} values listed, need n_steps * n_interior = {} * {n} = {}",
                        values.len(),
                        steps,
                        steps * n
                    ));
                }
            }
        }
    }
}

fn check_eps_ladder(ladder: &[f64], violations: &mut Vec<String>) {
    if ladder.is_empty() {
        violations.push("eps ladder must not be empty".into());
        return;
    }
    if ladder.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        violations.push("eps ladder entries must be positive and finite".into());
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        violations.push("eps ladder must be strictly decreasing".into());
    }
}

fn check_norm(norm: &NormBlock, violations: &mut Vec<String>) {
    if let NormBlock::Lp { p } = norm {
        if *p == 0 {
            violations.push("event norm exponent p must be at least 1".into());
        }
    }
}
