//! Command execution: each command writes its artifacts under the output
//! directory and returns the checks it made; [`run`] wraps that with the
//! manifest or the error report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use droplab::detgas;
use droplab::droplet;
use droplab::evolution::{self, DropletChain};
use droplab::field::{self, Grid2D, RegionMask, ScalarField};
use droplab::gas::{self, McmcConfig, SimBox};
use droplab::obstacle::{self, ObstacleSolution};
use droplab::potential::sample_potential;
use droplab::{io, Droplet, Error, Potential, Result};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{defaults, RunConfig, Task};

pub const VERSION: &str = env!("DROPLAB_GIT_DESCRIBE");

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    /// Passes when `value ≤ tol`.
    fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            pass: value <= tol,
            value,
            tol,
        }
    }

    /// Passes when `value ≥ -tol`.
    fn at_least_minus(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            pass: value >= -tol,
            value,
            tol,
        }
    }

    fn flag(name: impl Into<String>, pass: bool) -> Self {
        Check {
            name: name.into(),
            pass,
            value: if pass { 1.0 } else { 0.0 },
            tol: 0.0,
        }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub summary: Value,
    /// Every tolerance the run actually used, by name.
    pub tolerances: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Artifact writer confined to one directory.
struct Out<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Out<'a> {
    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        Ok(p)
    }

    fn field(&mut self, stem: &str, f: &ScalarField) -> Result<()> {
        io::write_field(self.path(stem)?, f, stem.rsplit('/').next().unwrap_or(stem))?;
        self.files.push(format!("{stem}.f64"));
        self.files.push(format!("{stem}.json"));
        Ok(())
    }

    fn mask(&mut self, stem: &str, m: &RegionMask) -> Result<()> {
        io::write_mask(self.path(stem)?, m, stem.rsplit('/').next().unwrap_or(stem))?;
        self.files.push(format!("{stem}.pgm"));
        self.files.push(format!("{stem}.json"));
        Ok(())
    }

    fn json(&mut self, rel: &str, v: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(v).expect("report serializes") + "\n";
        self.text(rel, &text)
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

/// Per-solve manifest `{t, boundary_constant, robin, residual, sweeps, grid}`
/// plus the tolerances and diagnostics of the solve.
fn solve_manifest(sol: &ObstacleSolution, d: &Droplet) -> Value {
    json!({
        "t": sol.t,
        "boundary_constant": sol.boundary_constant,
        "robin": d.robin,
        "robin_double_integral": d.robin_double_integral,
        "spread": d.spread,
        "residual": sol.residual,
        "sweeps": sol.sweeps,
        "bracket_steps": sol.bracket_steps,
        "mass": sol.mass,
        "measure_mass": sol.measure_mass,
        "tol_obs": sol.tol_obs,
        "tol_mass": sol.tol_mass,
        "window": sol.window,
        "window_clipped": sol.window_clipped,
        "localization": sol.localization_id,
        "grid": sol.qhat.grid,
    })
}

struct Setup {
    pot: Potential,
    grid: Grid2D,
    q: ScalarField,
    lap: ScalarField,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let pot = Potential::from_spec(&cfg.potential)?;
    let grid = cfg.grid.build()?;
    let (q, lap) = sample_potential(&pot, &grid)?;
    Ok(Setup { pot, grid, q, lap })
}

fn write_chain(out: &mut Outcome, w: &mut Out, chain: &DropletChain) -> Result<()> {
    let mut per_t = Vec::new();
    for (i, e) in chain.entries.iter().enumerate() {
        let dir = format!("t_{i:03}");
        w.field(&format!("{dir}/qhat"), &e.solution.qhat)?;
        w.mask(&format!("{dir}/droplet"), &e.droplet.mask)?;
        w.mask(&format!("{dir}/coincidence"), &e.solution.coincidence)?;
        per_t.push(solve_manifest(&e.solution, &e.droplet));
        let tol = e.solution.tol_obs;
        out.checks.push(Check::at_most(format!("complementarity[t={}]", e.solution.t), e.solution.residual, tol));
        out.tolerances.insert(format!("tol_obs[t={}]", e.solution.t), tol);
        out.tolerances.insert(format!("tol_mass[t={}]", e.solution.t), e.solution.tol_mass);
    }
    w.json("chain.json", &per_t)?;
    out.checks.push(Check::flag("chain_complete", chain.is_complete()));
    if let Some(err) = &chain.error {
        out.summary["chain_error"] = json!(err);
    }
    Ok(())
}

fn execute_inner(cfg: &RunConfig, w: &mut Out) -> Result<Outcome> {
    let mut out = Outcome {
        summary: json!({}),
        ..Default::default()
    };
    match &cfg.task {
        Task::Droplet {
            t,
            localization,
            robin_agreement_tol,
        } => {
            let s = setup(cfg)?;
            let loc = localization.localization(&s.grid)?;
            let (sol, d) = obstacle::solve_droplet(&s.pot, &s.grid, &loc, *t, &cfg.obstacle)?;
            w.field("qhat", &sol.qhat)?;
            w.field("density", &d.density)?;
            w.field("equilibrium", &d.equilibrium)?;
            w.mask("coincidence", &sol.coincidence)?;
            w.mask("droplet", &d.mask)?;
            let m = solve_manifest(&sol, &d);
            w.json("solution.json", &m)?;
            out.summary = m;
            out.checks.push(Check::at_most("complementarity", sol.residual, sol.tol_obs));
            out.checks.push(Check::at_most("mass", (sol.mass - t).abs(), sol.tol_mass));
            out.checks.push(Check::at_most(
                "robin_agreement",
                (d.robin - d.robin_double_integral).abs(),
                *robin_agreement_tol,
            ));
            out.tolerances.insert("tol_obs".into(), sol.tol_obs);
            out.tolerances.insert("tol_mass".into(), sol.tol_mass);
            out.tolerances.insert("robin_agreement_tol".into(), *robin_agreement_tol);
        }
        Task::Evolve {
            t_values,
            localization,
            domination_tol,
        } => {
            let s = setup(cfg)?;
            let loc = localization.localization(&s.grid)?;
            let chain = evolution::evolve_chain(&s.q, &s.lap, &loc, t_values, &cfg.obstacle, &s.pot.id(), Some(&s.pot))?;
            write_chain(&mut out, w, &chain)?;
            let dom = evolution::chain_domination(&chain, &s.q, *domination_tol)?;
            w.json("domination.json", &dom)?;
            for (i, r) in dom.iter().enumerate() {
                out.checks.push(Check::flag(format!("domination[{i}->{}]", i + 1), r.dominated));
            }
            out.tolerances.insert("domination_tol".into(), *domination_tol);
            out.summary["entries"] = json!(chain.len());
        }
        Task::Richardson {
            t,
            t_prime,
            localization,
            k_max,
            center,
            moment_tol_rel,
            placements,
            inequality_tol,
        } => {
            let s = setup(cfg)?;
            let loc = localization.localization(&s.grid)?;
            let chain = evolution::evolve_chain(&s.q, &s.lap, &loc, &[*t, *t_prime], &cfg.obstacle, &s.pot.id(), Some(&s.pot))?;
            write_chain(&mut out, w, &chain)?;
            if !chain.is_complete() {
                return Ok(out);
            }
            let (s1, s2) = (&chain.entries[0].droplet, &chain.entries[1].droplet);
            let tol_mass = cfg.obstacle.tol_mass_for(s.grid.h, t_prime - t);
            let tol_moment = moment_tol_rel * (t_prime - t);
            let a = center.map(|c| Complex64::new(c[0], c[1]));
            let report = evolution::richardson_moments(s1, s2, a, *k_max, tol_mass, tol_moment)?;
            w.text("moments.csv", &report.to_csv())?;
            for r in &report.rows {
                out.checks.push(Check::at_most(
                    format!("moment[k={},{}]", r.k, r.kind.as_str()),
                    (r.value - r.expected).abs(),
                    r.tolerance,
                ));
            }
            let sweep = evolution::richardson_inequality_sweep(s1, s2, *placements, cfg.seed)?;
            let worst = sweep.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
            if !sweep.is_empty() {
                out.checks.push(Check::at_least_minus("richardson_inequality", worst, *inequality_tol));
            }
            w.json("richardson.json", &json!({ "moments": report, "inequality": sweep }))?;
            out.tolerances.insert("tol_mass_growth".into(), tol_mass);
            out.tolerances.insert("tol_moment".into(), tol_moment);
            out.tolerances.insert("inequality_tol".into(), *inequality_tol);
            out.summary["moment_center"] = json!(report.center);
            out.summary["inequality_min"] = json!(worst);
        }
        Task::HeleshawBackward { k_star, t_values, tol } => {
            let s = setup(cfg)?;
            let k = k_star.mask(&s.grid)?.expect("validated bounded region");
            let (_, t_star) = evolution::backward_potential(&k, &s.lap)?;
            out.summary["t_star"] = json!(t_star);
            let chain = evolution::backward_hele_shaw(&k, &s.lap, t_values, &cfg.obstacle, *tol)?;
            write_chain(&mut out, w, &chain)?;
            w.mask("k_star", &k)?;
            out.tolerances.insert("tol".into(), *tol);
        }
        Task::Mcmc {
            n,
            m,
            beta,
            step_sigma,
            burn_in,
            n_samples,
            thinning,
        } => {
            let pot = Potential::from_spec(&cfg.potential)?;
            let grid = cfg.grid.build()?;
            let mc = McmcConfig {
                n: *n,
                m: *m,
                beta: *beta,
                step_sigma: Some(*step_sigma),
                burn_in: *burn_in,
                n_samples: *n_samples,
                thinning: *thinning,
                seed: cfg.seed,
                sim_box: SimBox::from_grid(&grid),
            };
            let run = gas::mcmc_sample(&mc, &pot)?;
            run.write_csv(w.path("samples.csv")?)?;
            w.files.push("samples.csv".into());
            let hist = gas::intensity_histogram(&run, &grid)?;
            w.field("intensity", &hist)?;
            let total = field::integrate_da(&hist, &RegionMask::full(grid))?;
            let r2 = ScalarField::from_fn(grid, |z| z.norm_sqr());
            let re = ScalarField::from_fn(grid, |z| z.re);
            let (r2_mean, r2_var) = gas::linear_statistic(&run, &r2)?;
            let (re_mean, re_var) = gas::linear_statistic(&run, &re)?;
            out.summary = json!({
                "acceptance_rate": run.acceptance_rate,
                "step_sigma": run.step_sigma,
                "histogram_mass": total,
                "linear_statistics": {
                    "abs_z_squared": {"mean": r2_mean, "variance": r2_var},
                    "re_z": {"mean": re_mean, "variance": re_var},
                },
            });
            w.json("summary.json", &out.summary)?;
            out.checks.push(Check::at_least_minus("acceptance_rate", run.acceptance_rate - 0.01, 0.0));
        }
        Task::Detgas {
            n,
            m,
            tol_gs,
            free_energy_n,
            analytic_norms,
        } => {
            let pot = Potential::from_spec(&cfg.potential)?;
            let grid = cfg.grid.build()?;
            let basis = detgas::gram_schmidt(&pot, *n, *m, &grid, *tol_gs)?;
            basis.write_json(w.path("basis.json")?)?;
            w.files.push("basis.json".into());
            let pts: Vec<Complex64> = (0..grid.len()).map(|k| grid.point(k)).collect();
            let vals = detgas::kernel_intensity(&basis, &pts)?;
            detgas::write_intensity_csv(w.path("intensity.csv")?, &pts, &vals)?;
            w.files.push("intensity.csv".into());
            let log_z = detgas::partition_function_beta2(&basis)?;
            let trace = basis.trace()?;
            let trace_tol = defaults().trace_tol_rel * *n as f64;
            out.checks.push(Check::at_most("gram_residual", basis.gram_residual, *tol_gs));
            out.checks.push(Check::at_most("trace", (trace - *n as f64).abs(), trace_tol));
            out.tolerances.insert("tol_gs".into(), *tol_gs);
            out.tolerances.insert("trace_tol".into(), trace_tol);
            out.summary = json!({
                "log_z": log_z,
                "norms": basis.norms(),
                "gram_residual": basis.gram_residual,
                "trace": trace,
                "n_max": basis.n_max,
            });
            if !free_energy_n.is_empty() {
                let rows = detgas::free_energy_check(&pot, free_energy_n, *analytic_norms, Some(&grid), *tol_gs)?;
                w.json("free_energy.json", &rows)?;
                out.summary["free_energy"] = json!(rows);
            }
            w.json("summary.json", &out.summary)?;
        }
        Task::Verify {
            droplet: region,
            localization,
            tol,
        } => {
            let s = setup(cfg)?;
            let mask = region.mask(&s.grid)?.expect("validated bounded region");
            let loc = localization.localization(&s.grid)?;
            let report = droplet::verify_local_droplet(&mask, &loc, &s.q, &s.lap, *tol, &cfg.obstacle)?;
            w.json("report.json", &report.conditions)?;
            for (name, c) in &report.conditions {
                out.checks.push(Check {
                    name: name.clone(),
                    pass: c.pass,
                    value: c.worst_value.unwrap_or(0.0),
                    tol: *tol,
                });
            }
            out.tolerances.insert("tol".into(), *tol);
            out.tolerances.insert("tol_flat".into(), report.tol_flat);
            out.summary = json!({"t": report.t, "robin": report.robin, "spread": report.spread, "pass": report.pass});
        }
    }
    Ok(out)
}

/// Runs one command, writing its artifacts into `dir`.
pub fn execute(cfg: &RunConfig, dir: &Path) -> Result<Outcome> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut w = Out { dir, files: Vec::new() };
    let mut out = execute_inner(cfg, &mut w)?;
    out.artifacts = w.files;
    Ok(out)
}

/// Exit status: 0 if every check passed, 2 if a check failed, 1 on error.
pub fn run(cfg: &RunConfig, dir: &Path) -> i32 {
    let start = Instant::now();
    // a rerun into the same directory must not leave the old verdict behind
    for stale in ["manifest.json", "error.json"] {
        let _ = fs::remove_file(dir.join(stale));
    }
    let result = execute(cfg, dir);
    let wall = start.elapsed().as_secs_f64();
    match result {
        Ok(out) => {
            let status = if out.pass() { "ok" } else { "checks_failed" };
            let manifest = json!({
                "version": VERSION,
                "command": cfg.command().name(),
                "status": status,
                "wall_time_s": wall,
                "config": cfg,
                "defaults": defaults(),
                "tolerances": out.tolerances,
                "checks": out.checks,
                "summary": out.summary,
                "artifacts": out.artifacts,
            });
            if let Err(e) = write_json(&dir.join("manifest.json"), &manifest) {
                log::error!("{e}");
                return 1;
            }
            for c in out.checks.iter().filter(|c| !c.pass) {
                log::warn!("check {} failed: value {:e}, tol {:e}", c.name, c.value, c.tol);
            }
            if out.pass() {
                0
            } else {
                2
            }
        }
        Err(e) => {
            log::error!("{e}");
            report_error(dir, cfg.command().name(), e.kind(), &e.to_string(), wall);
            1
        }
    }
}

/// Writes `error.json` `{kind, message, command, version, wall_time_s}`.
pub fn report_error(dir: &Path, command: &str, kind: &str, message: &str, wall: f64) {
    let v = json!({
        "version": VERSION,
        "command": command,
        "kind": kind,
        "message": message,
        "wall_time_s": wall,
    });
    let _ = fs::remove_file(dir.join("manifest.json"));
    if fs::create_dir_all(dir).is_ok() {
        if let Err(e) = write_json(&dir.join("error.json"), &v) {
            log::error!("could not write error report: {e}");
        }
    }
}

fn write_json(path: &Path, v: &Value) -> std::io::Result<()> {
    fs::write(path, serde_json::to_string_pretty(v).expect("json serializes") + "\n")
}
