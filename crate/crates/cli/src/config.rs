//! Run configuration: strict JSON parsing that reports every problem at
//! once, and the table of defaults echoed into each manifest.

use std::path::{Path, PathBuf};

use droplab::field::{Grid2D, RegionMask};
use droplab::potential::{Localization, PotentialFamily, PotentialSpec};
use droplab::{io, ObstacleParams};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Droplet,
    Evolve,
    Richardson,
    HeleshawBackward,
    Mcmc,
    Detgas,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Droplet => "droplet",
            Command::Evolve => "evolve",
            Command::Richardson => "richardson",
            Command::HeleshawBackward => "heleshaw-backward",
            Command::Mcmc => "mcmc",
            Command::Detgas => "detgas",
            Command::Verify => "verify",
        }
    }

    fn parse(s: &str) -> Option<Command> {
        [
            Command::Droplet,
            Command::Evolve,
            Command::Richardson,
            Command::HeleshawBackward,
            Command::Mcmc,
            Command::Detgas,
            Command::Verify,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

/// Every default in one place; serialized verbatim into manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Defaults {
    pub grid_center: [f64; 2],
    pub seed: u64,
    pub tol_obs: &'static str,
    pub tol_mass: &'static str,
    pub omega: &'static str,
    pub max_sweeps: usize,
    pub max_bracket_steps: usize,
    pub margin_cells: usize,
    pub shallow_radius_cells: f64,
    pub shallow_mass_fraction: f64,
    pub robin_agreement_tol: f64,
    pub domination_tol: f64,
    pub verify_tol: f64,
    pub k_max: u32,
    pub moment_tol_rel: f64,
    pub richardson_placements: usize,
    pub richardson_inequality_tol: f64,
    pub backward_tol: f64,
    pub beta: f64,
    pub step_sigma: &'static str,
    pub burn_in: usize,
    pub thinning: usize,
    pub tol_gs: f64,
    pub trace_tol_rel: f64,
}

pub fn defaults() -> Defaults {
    let p = ObstacleParams::default();
    Defaults {
        grid_center: [0.0, 0.0],
        seed: 0,
        tol_obs: "1e-8 * (max Q - min Q) over the localization",
        tol_mass: "max(1e-3, 4h) * t",
        omega: "2 / (1 + sin(pi / N)), N = nodes across the solve window",
        max_sweeps: p.max_sweeps,
        max_bracket_steps: p.max_bracket_steps,
        margin_cells: p.margin_cells,
        shallow_radius_cells: p.shallow_radius_cells,
        shallow_mass_fraction: p.shallow_mass_fraction,
        robin_agreement_tol: 0.02,
        domination_tol: 0.02,
        verify_tol: 0.02,
        k_max: 4,
        moment_tol_rel: 5e-3,
        richardson_placements: 20,
        richardson_inequality_tol: 1e-3,
        backward_tol: 1e-9,
        beta: 2.0,
        step_sigma: "1 / sqrt(m)",
        burn_in: 1000,
        thinning: 1,
        tol_gs: droplab::detgas::DEFAULT_TOL_GS,
        trace_tol_rel: 1e-3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub center: Option<[f64; 2]>,
    pub half_width: f64,
    pub h: f64,
}

impl GridConfig {
    pub fn build(&self) -> droplab::Result<Grid2D> {
        let c = self.center.unwrap_or(defaults().grid_center);
        Grid2D::centered((c[0], c[1]), self.half_width, self.h)
    }
}

/// A region of the plane, rasterized onto the run grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    All,
    Disk { center: [f64; 2], radius: f64 },
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
    /// A mask dump (PGM plus sidecar) on the run grid.
    Mask { path: PathBuf },
}

impl Region {
    fn validate(&self, what: &str, errs: &mut Vec<String>) {
        match self {
            Region::Disk { radius, .. } if !(*radius > 0.0) => errs.push(format!("{what}: radius must be positive")),
            Region::Annulus { inner, outer, .. } if !(*inner >= 0.0 && outer > inner) => {
                errs.push(format!("{what}: annulus needs 0 ≤ inner < outer"))
            }
            _ => {}
        }
    }

    pub fn mask(&self, grid: &Grid2D) -> droplab::Result<Option<RegionMask>> {
        let c = |p: &[f64; 2]| Complex64::new(p[0], p[1]);
        Ok(match self {
            Region::All => None,
            Region::Disk { center, radius } => Some(RegionMask::disk(*grid, c(center), *radius)),
            Region::Annulus { center, inner, outer } => Some(RegionMask::annulus(*grid, c(center), *inner, *outer)),
            Region::Mask { path } => {
                let (m, _) = io::read_mask(path)?;
                if m.grid != *grid {
                    return Err(droplab::Error::Config(format!(
                        "mask {} is on a different grid than the run",
                        path.display()
                    )));
                }
                Some(m)
            }
        })
    }

    pub fn localization(&self, grid: &Grid2D) -> droplab::Result<Localization> {
        Ok(match self.mask(grid)? {
            None => Localization::All,
            Some(m) => Localization::Mask(m),
        })
    }

    fn rebase(&mut self, base: &Path) {
        if let Region::Mask { path } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Task {
    Droplet {
        t: f64,
        localization: Region,
        robin_agreement_tol: f64,
    },
    Evolve {
        t_values: Vec<f64>,
        localization: Region,
        domination_tol: f64,
    },
    Richardson {
        t: f64,
        t_prime: f64,
        localization: Region,
        k_max: u32,
        center: Option<[f64; 2]>,
        moment_tol_rel: f64,
        placements: usize,
        inequality_tol: f64,
    },
    HeleshawBackward {
        k_star: Region,
        t_values: Vec<f64>,
        tol: f64,
    },
    Mcmc {
        n: usize,
        m: f64,
        beta: f64,
        step_sigma: f64,
        burn_in: usize,
        n_samples: usize,
        thinning: usize,
    },
    Detgas {
        n: usize,
        m: f64,
        tol_gs: f64,
        free_energy_n: Vec<usize>,
        analytic_norms: bool,
    },
    Verify {
        droplet: Region,
        localization: Region,
        tol: f64,
    },
}

/// Fully resolved run description; echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    pub grid: GridConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub obstacle: ObstacleParams,
    #[serde(flatten)]
    pub task: Task,
}

impl RunConfig {
    pub fn command(&self) -> Command {
        match self.task {
            Task::Droplet { .. } => Command::Droplet,
            Task::Evolve { .. } => Command::Evolve,
            Task::Richardson { .. } => Command::Richardson,
            Task::HeleshawBackward { .. } => Command::HeleshawBackward,
            Task::Mcmc { .. } => Command::Mcmc,
            Task::Detgas { .. } => Command::Detgas,
            Task::Verify { .. } => Command::Verify,
        }
    }

    /// Resolves relative input paths against `base` (the config's
    /// directory).
    pub fn rebase(&mut self, base: &Path) {
        if let PotentialFamily::GridSampled { path } = &mut self.potential.family {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        match &mut self.task {
            Task::Droplet { localization, .. }
            | Task::Evolve { localization, .. }
            | Task::Richardson { localization, .. } => localization.rebase(base),
            Task::HeleshawBackward { k_star, .. } => k_star.rebase(base),
            Task::Verify { droplet, localization, .. } => {
                droplet.rebase(base);
                localization.rebase(base);
            }
            Task::Mcmc { .. } | Task::Detgas { .. } => {}
        }
    }
}

/// Pulls keys out of a JSON object, collecting every error.
struct Fields {
    map: Map<String, Value>,
    errors: Vec<String>,
}

impl Fields {
    fn take<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        let v = self.map.remove(key)?;
        if v.is_null() {
            return None;
        }
        match serde_json::from_value(v) {
            Ok(x) => Some(x),
            Err(e) => {
                self.errors.push(format!("{key}: {e}"));
                None
            }
        }
    }

    fn req<T: DeserializeOwned>(&mut self, key: &str) -> Option<T> {
        if !self.map.contains_key(key) {
            self.errors.push(format!("missing required key \"{key}\""));
            return None;
        }
        self.take(key)
    }
}

fn positive(errs: &mut Vec<String>, name: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        errs.push(format!("{name} must be positive"));
    }
}

/// Parses and validates a run config. `command` (from the subcommand)
/// must agree with the config's own `command` key when both are present.
pub fn parse_config(text: &str, command: Option<Command>) -> Result<RunConfig, Vec<String>> {
    let value: Value = serde_json::from_str(text).map_err(|e| vec![format!("malformed JSON: {e}")])?;
    let Value::Object(map) = value else {
        return Err(vec!["config must be a JSON object".into()]);
    };
    let mut f = Fields { map, errors: Vec::new() };
    let d = defaults();

    let named: Option<String> = f.take("command");
    let cmd = match (named.as_deref().map(|s| (s, Command::parse(s))), command) {
        (Some((s, None)), _) => {
            f.errors.push(format!("unknown command \"{s}\""));
            None
        }
        (Some((_, Some(a))), Some(b)) if a != b => {
            f.errors.push(format!("config is for \"{}\" but the subcommand is \"{}\"", a.name(), b.name()));
            None
        }
        (Some((_, Some(a))), _) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => {
            f.errors.push("missing required key \"command\"".into());
            None
        }
    };

    let potential: Option<PotentialSpec> = f.req("potential");
    let grid: Option<GridConfig> = f.req("grid");
    let output_dir: Option<PathBuf> = f.take("output_dir");
    let seed: u64 = f.take("seed").unwrap_or(d.seed);
    let obstacle: ObstacleParams = f.take("obstacle").unwrap_or_default();

    let mut v = Vec::new();
    if let Some(p) = &potential {
        v.extend(p.validate().into_iter().map(|e| format!("potential: {e}")));
    }
    if let Some(g) = &grid {
        positive(&mut v, "grid.half_width", g.half_width);
        positive(&mut v, "grid.h", g.h);
        if g.half_width > 0.0 && g.h > 0.0 && g.half_width / g.h < 2.0 {
            v.push("grid needs at least 5 nodes across".into());
        }
    }
    if let Some(x) = obstacle.tol_obs {
        positive(&mut v, "obstacle.tol_obs", x);
    }
    if let Some(x) = obstacle.tol_mass {
        positive(&mut v, "obstacle.tol_mass", x);
    }
    if let Some(w) = obstacle.omega {
        if !(w > 0.0 && w < 2.0) {
            v.push("obstacle.omega must lie in (0, 2)".into());
        }
    }

    let task = cmd.and_then(|c| parse_task(c, &mut f, &mut v, &d));
    let mut errors = f.errors;
    errors.extend(v);
    let mut unknown: Vec<&String> = f.map.keys().collect();
    unknown.sort();
    errors.extend(unknown.into_iter().map(|k| format!("unknown key \"{k}\"")));
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(RunConfig {
        potential: potential.expect("checked"),
        grid: grid.expect("checked"),
        output_dir,
        seed,
        obstacle,
        task: task.expect("checked"),
    })
}

fn check_t_list(v: &mut Vec<String>, ts: &[f64], increasing: bool) {
    if ts.is_empty() {
        v.push("t_values must not be empty".into());
    }
    if ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        v.push("t must be positive".into());
    }
    let ordered = ts.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] });
    if !ordered {
        v.push(format!(
            "t_values must be strictly {}",
            if increasing { "increasing" } else { "decreasing" }
        ));
    }
}

fn parse_task(c: Command, f: &mut Fields, v: &mut Vec<String>, d: &Defaults) -> Option<Task> {
    let loc = |f: &mut Fields, v: &mut Vec<String>| {
        let r: Region = f.take("localization").unwrap_or(Region::All);
        r.validate("localization", v);
        r
    };
    match c {
        Command::Droplet => {
            let t: Option<f64> = f.req("t");
            if let Some(t) = t {
                positive(v, "t", t);
            }
            let localization = loc(f, v);
            let robin_agreement_tol = f.take("robin_agreement_tol").unwrap_or(d.robin_agreement_tol);
            positive(v, "robin_agreement_tol", robin_agreement_tol);
            Some(Task::Droplet {
                t: t?,
                localization,
                robin_agreement_tol,
            })
        }
        Command::Evolve => {
            let t_values: Option<Vec<f64>> = f.req("t_values");
            if let Some(ts) = &t_values {
                check_t_list(v, ts, true);
            }
            let localization = loc(f, v);
            let domination_tol = f.take("domination_tol").unwrap_or(d.domination_tol);
            positive(v, "domination_tol", domination_tol);
            Some(Task::Evolve {
                t_values: t_values?,
                localization,
                domination_tol,
            })
        }
        Command::Richardson => {
            let t: Option<f64> = f.req("t");
            let t_prime: Option<f64> = f.req("t_prime");
            if let Some(t) = t {
                positive(v, "t", t);
            }
            if let (Some(a), Some(b)) = (t, t_prime) {
                if !(b > a) {
                    v.push("t_prime must exceed t".into());
                }
            }
            let localization = loc(f, v);
            let k_max = f.take("k_max").unwrap_or(d.k_max);
            let center = f.take("center");
            let moment_tol_rel = f.take("moment_tol_rel").unwrap_or(d.moment_tol_rel);
            positive(v, "moment_tol_rel", moment_tol_rel);
            let placements = f.take("placements").unwrap_or(d.richardson_placements);
            let inequality_tol = f.take("inequality_tol").unwrap_or(d.richardson_inequality_tol);
            positive(v, "inequality_tol", inequality_tol);
            Some(Task::Richardson {
                t: t?,
                t_prime: t_prime?,
                localization,
                k_max,
                center,
                moment_tol_rel,
                placements,
                inequality_tol,
            })
        }
        Command::HeleshawBackward => {
            let k_star: Option<Region> = f.req("k_star");
            if let Some(r) = &k_star {
                if *r == Region::All {
                    v.push("k_star must be a bounded region".into());
                }
                r.validate("k_star", v);
            }
            let t_values: Option<Vec<f64>> = f.req("t_values");
            if let Some(ts) = &t_values {
                check_t_list(v, ts, false);
            }
            let tol = f.take("tol").unwrap_or(d.backward_tol);
            positive(v, "tol", tol);
            Some(Task::HeleshawBackward {
                k_star: k_star?,
                t_values: t_values?,
                tol,
            })
        }
        Command::Mcmc => {
            let n: Option<usize> = f.req("n");
            let m: Option<f64> = f.req("m");
            let beta = f.take("beta").unwrap_or(d.beta);
            let step_sigma: Option<f64> = f.take("step_sigma");
            let burn_in = f.take("burn_in").unwrap_or(d.burn_in);
            let n_samples: Option<usize> = f.req("n_samples");
            let thinning = f.take("thinning").unwrap_or(d.thinning);
            if n == Some(0) {
                v.push("n must be at least 1".into());
            }
            if let Some(m) = m {
                positive(v, "m", m);
            }
            positive(v, "beta", beta);
            if let Some(s) = step_sigma {
                positive(v, "step_sigma", s);
            }
            if n_samples == Some(0) {
                v.push("n_samples must be at least 1".into());
            }
            if thinning == 0 {
                v.push("thinning must be at least 1".into());
            }
            let m = m?;
            Some(Task::Mcmc {
                n: n?,
                m,
                beta,
                step_sigma: step_sigma.unwrap_or(1.0 / m.sqrt()),
                burn_in,
                n_samples: n_samples?,
                thinning,
            })
        }
        Command::Detgas => {
            let n: Option<usize> = f.req("n");
            let m: Option<f64> = f.take("m");
            let tol_gs = f.take("tol_gs").unwrap_or(d.tol_gs);
            let free_energy_n: Vec<usize> = f.take("free_energy_n").unwrap_or_default();
            let analytic_norms = f.take("analytic_norms").unwrap_or(false);
            if n == Some(0) {
                v.push("n must be at least 1".into());
            }
            if let Some(m) = m {
                positive(v, "m", m);
            }
            positive(v, "tol_gs", tol_gs);
            if free_energy_n.contains(&0) {
                v.push("free_energy_n entries must be at least 1".into());
            }
            let n = n?;
            Some(Task::Detgas {
                n,
                m: m.unwrap_or(n as f64),
                tol_gs,
                free_energy_n,
                analytic_norms,
            })
        }
        Command::Verify => {
            let droplet: Option<Region> = f.req("droplet");
            if let Some(r) = &droplet {
                if *r == Region::All {
                    v.push("droplet must be a bounded region".into());
                }
                r.validate("droplet", v);
            }
            let localization = loc(f, v);
            let tol = f.take("tol").unwrap_or(d.verify_tol);
            positive(v, "tol", tol);
            Some(Task::Verify {
                droplet: droplet?,
                localization,
                tol,
            })
        }
    }
}
