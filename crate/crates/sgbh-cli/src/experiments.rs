//! Experiment dispatch and artifact emission. Every run produces the same
//! bytes for the same config file: wall time lives only in the manifest,
//! floats are printed with Rust's shortest round-trip formatting, and all
//! sample aggregation below is order-fixed regardless of the worker count.
//!
//! CSV schemas:
//!   trajectory  t,x_1..x_n         one row per saved state
//!   energy      t,lp_norm_p,dissipation,reaction
//!   mc          eps,p_hat,ci_lo,ci_hi,eps_log_p,rate_reference  ("NA" when absent)

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use sgbh_core::{
    decompose_z_zeta, default_bound_sweep, energy_audit, integrate, ldp_curve,
    rate_function_endpoint, sample_control_set, sample_u0_set, solve_skeleton,
    uniform_convergence_experiment, verify_kernel_bounds, EnergyLedger, EventSpec, Field,
    MCEstimate, OptConfig, PathSetup, SgbhError,
};

use crate::config::{ExperimentKind, RunConfig};

/// Provenance record written next to the artifacts. The hash is over the
/// raw config bytes, so a byte-identical file is the reproducibility key.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub wall_time_secs: f64,
    pub artifacts: Vec<String>,
}

/// Execute the experiment named by the config and write its artifacts plus
/// a manifest into `out_dir`. On a numerical error, whatever partial
/// artifacts exist stay on disk and the error is handed back for the
/// diagnostic record.
pub fn run_config(cfg: &RunConfig, raw_config: &[u8], out_dir: &Path) -> Result<Manifest, SgbhError> {
    let start = Instant::now();
    let artifacts = match cfg.experiment {
        ExperimentKind::Simulate => run_simulate(cfg, out_dir)?,
        ExperimentKind::Skeleton => run_skeleton(cfg, out_dir)?,
        ExperimentKind::Rate => run_rate(cfg, out_dir)?,
        ExperimentKind::Mc => run_mc(cfg, out_dir)?,
        ExperimentKind::Uniform => run_uniform(cfg, out_dir)?,
        ExperimentKind::KernelCheck => run_kernel_check(cfg, out_dir)?,
        ExperimentKind::Decompose => run_decompose(cfg, out_dir)?,
    };
    let manifest = Manifest {
        config_hash: sha256_hex(raw_config),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        artifacts,
    };
    write_json(out_dir, "manifest.json", &manifest)?;
    Ok(manifest)
}

/// Diagnostic record for failed runs: a stable machine-readable tag plus
/// the human-readable message.
pub fn write_diagnostic(out_dir: &Path, err: &SgbhError) -> Result<(), SgbhError> {
    let diag = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
    });
    write_json(out_dir, "diagnostic.json", &diag)
}

fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, SgbhError> {
    let grid = cfg.build_grid()?;
    let params = cfg.params()?;
    let g = cfg.g_coefficient()?;
    let u0 = cfg.build_profile(&cfg.initial, &grid)?;
    let spec = cfg.noise_spec()?;
    let opts = cfg.integrate_opts(false);
    let (traj, ledger) = integrate(&u0, &params, cfg.time.t_end, cfg.time.dt, &spec, &g, &opts)?;
    write_text(out, "trajectory.csv", &trajectory_csv(&traj.t_grid, &traj.fields))?;
    write_text(out, "energy.csv", &energy_csv(&ledger))?;
    write_json(out, "audit.json", &energy_audit(&ledger, &params, &u0))?;
    Ok(artifact_list(&["trajectory.csv", "energy.csv", "audit.json"]))
}

fn run_skeleton(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, SgbhError> {
    let block = cfg
        .skeleton
        .as_ref()
        .ok_or_else(|| SgbhError::Invalid("skeleton experiment without a skeleton block".into()))?;
    let grid = cfg.build_grid()?;
    let params = cfg.params()?;
    let g = cfg.g_coefficient()?;
    let u0 = cfg.build_profile(&cfg.initial, &grid)?;
    let phi = cfg.build_control(&block.control, &grid, cfg.n_steps())?;
    let opts = cfg.integrate_opts(false);
    let (traj, ledger) = solve_skeleton(&u0, &params, &g, &phi, cfg.time.t_end, cfg.time.dt, &opts)?;
    write_text(out, "trajectory.csv", &trajectory_csv(&traj.t_grid, &traj.fields))?;
    write_text(out, "energy.csv", &energy_csv(&ledger))?;
    let summary = serde_json::json!({ "control_cost": phi.cost() });
    write_json(out, "skeleton.json", &summary)?;
    Ok(artifact_list(&["trajectory.csv", "energy.csv", "skeleton.json"]))
}

fn run_rate(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, SgbhError> {
    let block = cfg
        .rate
        .as_ref()
        .ok_or_else(|| SgbhError::Invalid("rate experiment without a rate block".into()))?;
    let grid = cfg.build_grid()?;
    let params = cfg.params()?;
    let g = cfg.g_coefficient()?;
    let u0 = cfg.build_profile(&cfg.initial, &grid)?;
    let target = cfg.build_profile(&block.target, &grid)?;
    let mut oc = OptConfig::default();
    if let Some(ladder) = &block.mu_ladder {
        oc.mu_ladder = ladder.clone();
    }
    if let Some(m) = block.max_iters_per_mu {
        oc.max_iters_per_mu = m;
    }
    if let Some(tf) = block.tol_factor {
        oc.tol_factor = tf;
    }
    match rate_function_endpoint(&u0, &params, &g, &target, cfg.time.t_end, cfg.time.dt, &oc) {
        Ok(result) => {
            write_json(out, "rate.json", &result)?;
            Ok(artifact_list(&["rate.json"]))
        }
        // Keep the best iterate on disk so a stalled minimization still
        // leaves something inspectable next to the diagnostic.
        Err(SgbhError::NonConvergence {
            grad_norm,
            iterations,
            best,
        }) => {
            write_json(out, "rate.json", best.as_ref())?;
            Err(SgbhError::NonConvergence {
                grad_norm,
                iterations,
                best,
            })
        }
        Err(e) => Err(e),
    }
}

fn run_mc(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, SgbhError> {
    let block = cfg
        .mc
        .as_ref()
        .ok_or_else(|| SgbhError::Invalid("mc experiment without an mc block".into()))?;
    let grid = cfg.build_grid()?;
    let setup = path_setup(cfg, &grid)?;
    let center = cfg.build_profile(&block.event.center, &grid)?;
    let event = EventSpec::terminal_ball(center, block.event.radius, block.event.norm.to_norm())?;
    match ldp_curve(&event, &setup, &block.eps_ladder, block.n_samples, block.rate_reference) {
        Ok(curve) => {
            write_text(out, "mc.csv", &mc_csv(&curve.estimates, curve.rate_reference))?;
            let summary = serde_json::json!({
                "extrapolated_rate": curve.extrapolated_rate,
                "rate_reference": curve.rate_reference,
            });
            write_json(out, "ldp.json", &summary)?;
            Ok(artifact_list(&["mc.csv", "ldp.json"]))
        }
        // An estimability abort still writes the partial curve: the points
        // that were measurable are exactly what diagnoses the ladder.
        Err(SgbhError::Unestimable {
            eps,
            p_hat,
            threshold,
            partial,
        }) => {
            write_text(out, "mc.csv", &mc_csv(&partial, block.rate_reference))?;
            Err(SgbhError::Unestimable {
                eps,
                p_hat,
                threshold,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

fn run_uniform(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, SgbhError> {
    let block = cfg
        .uniform
        .as_ref()
        .ok_or_else(|| SgbhError::Invalid("uniform experiment without a uniform block".into()))?;
    let grid = cfg.build_grid()?;
    let setup = path_setup(cfg, &grid)?;
    let u0_set = sample_u0_set(&grid, block.n_initial, block.u0_bound);
    let phi_set = sample_control_set(&grid, cfg.n_steps(), cfg.time.dt, block.n_controls, block.cost_bound)?;
    let report = uniform_convergence_experiment(
        &setup,
        &u0_set,
        &phi_set,
        &block.eps_ladder,
        block.eta,
        block.n_samples,
        block.norm.to_norm(),
        block.u0_bound,
        block.cost_bound,
    )?;
    write_json(out, "uniform.json", &report)?;
    Ok(artifact_list(&["uniform.json"]))
}

fn run_kernel_check(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, SgbhError> {
    let (t_samples, xy_samples) = default_bound_sweep();
    let report = verify_kernel_bounds(&t_samples, &xy_samples, cfg.model.nu);
    write_json(out, "kernel_check.json", &report)?;
    if !report.all_pass() {
        let failing: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.bound_id.as_str())
            .collect();
        return Err(SgbhError::Invalid(format!(
            "kernel bound sweep failed: {}",
            failing.join(", ")
        )));
    }
    Ok(artifact_list(&["kernel_check.json"]))
}

fn run_decompose(cfg: &RunConfig, out: &Path) -> Result<Vec<String>, SgbhError> {
    let grid = cfg.build_grid()?;
    let params = cfg.params()?;
    let g = cfg.g_coefficient()?;
    let u0 = cfg.build_profile(&cfg.initial, &grid)?;
    let spec = cfg.noise_spec()?;
    let opts = cfg.integrate_opts(true);
    let (traj, _ledger) = integrate(&u0, &params, cfg.time.t_end, cfg.time.dt, &spec, &g, &opts)?;
    let split = decompose_z_zeta(&traj, &g)?;
    write_text(out, "z.csv", &trajectory_csv(&split.t_grid, &split.z))?;
    write_text(out, "zeta.csv", &trajectory_csv(&split.t_grid, &split.zeta))?;
    let summary = serde_json::json!({
        "zeta_star": split.zeta_star,
        "saves": split.t_grid.len(),
    });
    write_json(out, "decompose.json", &summary)?;
    Ok(artifact_list(&["z.csv", "zeta.csv", "decompose.json"]))
}

fn path_setup(cfg: &RunConfig, grid: &sgbh_core::Grid) -> Result<PathSetup, SgbhError> {
    Ok(PathSetup {
        u0: cfg.build_profile(&cfg.initial, grid)?,
        params: cfg.params()?,
        g: cfg.g_coefficient()?,
        noise: cfg.noise_spec()?,
        t_end: cfg.time.t_end,
        dt: cfg.time.dt,
        control: None,
        save_stride: cfg.time.save_stride,
        r_trunc: cfg.monitor.r_trunc,
        monitor_p: cfg.monitor.p,
    })
}

// ---- artifact rendering ------------------------------------------------

/// `t,x_1..x_n` rows for a sequence of saved states.
pub fn trajectory_csv(t_grid: &[f64], fields: &[Field]) -> String {
    let n = fields.first().map_or(0, Field::len);
    let mut s = String::from("t");
    for i in 1..=n {
        let _ = write!(s, ",x_{i}");
    }
    s.push('\n');
    for (t, f) in t_grid.iter().zip(fields) {
        let _ = write!(s, "{t}");
        for v in f.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// `t,lp_norm_p,dissipation,reaction` rows from one run's ledger.
pub fn energy_csv(ledger: &EnergyLedger) -> String {
    let mut s = String::from("t,lp_norm_p,dissipation,reaction\n");
    for (i, t) in ledger.t.iter().enumerate() {
        let _ = writeln!(
            s,
            "{t},{},{},{}",
            ledger.lp_norm_p[i], ledger.dissipation[i], ledger.reaction[i]
        );
    }
    s
}

/// `eps,p_hat,ci_lo,ci_hi,eps_log_p,rate_reference` rows; absent values
/// (a zero-hit point's eps*ln(p), a missing reference) print as "NA".
pub fn mc_csv(estimates: &[MCEstimate], rate_reference: Option<f64>) -> String {
    let mut s = String::from("eps,p_hat,ci_lo,ci_hi,eps_log_p,rate_reference\n");
    for e in estimates {
        let _ = write!(s, "{},{},{},{},", e.eps, e.p_hat, e.ci_lo, e.ci_hi);
        match e.eps_log_p {
            Some(v) => {
                let _ = write!(s, "{v}");
            }
            None => s.push_str("NA"),
        }
        s.push(',');
        match rate_reference {
            Some(v) => {
                let _ = write!(s, "{v}");
            }
            None => s.push_str("NA"),
        }
        s.push('\n');
    }
    s
}

fn artifact_list(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn write_text(dir: &Path, name: &str, contents: &str) -> Result<(), SgbhError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| SgbhError::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), SgbhError> {
    let mut body = serde_json::to_vec_pretty(value)
        .map_err(|e| SgbhError::Invalid(format!("cannot serialize {name}: {e}")))?;
    body.push(b'\n');
    let path = dir.join(name);
    std::fs::write(&path, body)
        .map_err(|e| SgbhError::Invalid(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn heat_decay_config(dir: &Path) -> RunConfig {
        let v = serde_json::json!({
            "model": {"nu": 1.0, "alpha": 0.0, "beta": 0.0, "gamma": 1.0, "delta": 1, "epsilon": 0.0},
            "grid": {"n_interior": 31},
            "time": {"T": 0.01, "dt": 1e-4, "save_stride": 100},
            "noise": {"kind": "white"},
            "g": {"kind": "constant", "k": 1.0},
            "initial": {"kind": "mode", "j": 1, "amplitude": 1.0},
            "experiment": "simulate",
            "output_dir": dir.to_str().unwrap()
        });
        serde_json::from_value(v).unwrap()
    }

    fn last_csv_row(path: &Path) -> Vec<f64> {
        let text = std::fs::read_to_string(path).unwrap();
        text.lines()
            .last()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect()
    }

    #[test]
    fn simulate_emits_the_pinned_schemas_and_decays_like_the_heat_mode() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = heat_decay_config(dir.path());
        let manifest = run_config(&cfg, b"{}", dir.path()).unwrap();
        assert_eq!(manifest.artifacts, vec!["trajectory.csv", "energy.csv", "audit.json"]);
        assert_eq!(manifest.config_hash.len(), 64);

        let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("t,x_1,x_2,"));
        assert!(header.ends_with(",x_31"));
        // initial state + one save per stride boundary
        assert_eq!(lines.count(), 2);

        let energy = std::fs::read_to_string(dir.path().join("energy.csv")).unwrap();
        assert!(energy.starts_with("t,lp_norm_p,dissipation,reaction\n"));
        // energy rows are per step, not per save
        assert_eq!(energy.lines().count(), 1 + 101);

        // Mode-1 amplitude after T = 0.01 with nu = 1: e^(-pi^2/100), read
        // at the midpoint node where the mode peaks.
        let row = last_csv_row(&dir.path().join("trajectory.csv"));
        let mid = 1 + 15; // t column, then x_16 at x = 1/2
        let expect = (2.0f64).sqrt() * (-std::f64::consts::PI.powi(2) * 0.01).exp();
        assert!(
            (row[mid] - expect).abs() < 1e-3 * expect,
            "midpoint {} vs {expect}",
            row[mid]
        );
    }

    #[test]
    fn identical_configs_reproduce_identical_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg_a = heat_decay_config(dir_a.path());
        let cfg_b = heat_decay_config(dir_b.path());
        run_config(&cfg_a, b"same", dir_a.path()).unwrap();
        run_config(&cfg_b, b"same", dir_b.path()).unwrap();
        for name in ["trajectory.csv", "energy.csv", "audit.json"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn mc_rows_use_na_sentinels_for_absent_values() {
        let estimates = vec![
            MCEstimate {
                eps: 0.5,
                p_hat: 0.25,
                n_samples: 400,
                ci_lo: 0.2,
                ci_hi: 0.3,
                eps_log_p: Some(0.5 * 0.25f64.ln()),
            },
            MCEstimate {
                eps: 0.1,
                p_hat: 0.0,
                n_samples: 400,
                ci_lo: 0.0,
                ci_hi: 0.01,
                eps_log_p: None,
            },
        ];
        let body = mc_csv(&estimates, None);
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines[0], "eps,p_hat,ci_lo,ci_hi,eps_log_p,rate_reference");
        assert!(lines[1].ends_with(",NA"), "row was {}", lines[1]);
        assert!(lines[2].contains(",NA,NA"), "row was {}", lines[2]);

        let with_ref = mc_csv(&estimates[..1], Some(0.125));
        assert!(with_ref.lines().nth(1).unwrap().ends_with(",0.125"));
    }

    #[test]
    fn diagnostics_carry_the_stable_error_tag() {
        let dir = tempfile::tempdir().unwrap();
        let err = SgbhError::Blowup {
            step: 7,
            threshold: 1e12,
        };
        write_diagnostic(dir.path(), &err).unwrap();
        let text = std::fs::read_to_string(dir.path().join("diagnostic.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["error"], "blowup");
        assert!(v["message"].as_str().unwrap().contains("step 7"));
    }
}
