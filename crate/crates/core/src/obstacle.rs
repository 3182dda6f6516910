//! The subharmonic obstacle problem on the grid.
//!
//! `solve_obstacle` computes the largest discrete subharmonic `u ≤ Q_Σ` with
//! boundary data `t·log|z|² + c`, choosing `c` so that the discrete measure
//! `Δ_h u dA` has mass `t`; the `ΔQ`-mass of the coincidence set must then
//! agree with `t` to within `tol_mass`. Matching the coincidence mass
//! directly would bias `c` by the O(h) deficit of the contact layer, where
//! `Δ_h u < ΔQ`. The inner solver is projected SOR in red-black
//! order; the outer loop is a bracketing root find on `c`, which works
//! because the coincidence mass is nondecreasing in `c`.
//!
//! When `Σ` is a mask the solve runs on a window around `Σ` with boundary
//! data centered at the window center, so lattice translates of a problem
//! give bit-identical answers.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, Grid2D, RegionMask, ScalarField};
use crate::potential::{self, Localization, NodeValue, Potential};

/// Solver knobs; `None` tolerances resolve to the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleParams {
    /// Coincidence threshold; default `1e-8·(max Q - min Q)` over `Σ`.
    pub tol_obs: Option<f64>,
    /// Mass tolerance; default `max(1e-3, 4h)·t`.
    pub tol_mass: Option<f64>,
    /// SOR relaxation factor; default `2/(1 + sin(π/N))`.
    pub omega: Option<f64>,
    pub max_sweeps: usize,
    pub max_bracket_steps: usize,
    /// Minimum distance in cells between the droplet and the outer ring.
    pub margin_cells: usize,
    /// Shallow-point radius in cells (default 3).
    pub shallow_radius_cells: f64,
    /// Shallow-point mass threshold as a fraction of `t` (default `1e-6`).
    pub shallow_mass_fraction: f64,
}

impl Default for ObstacleParams {
    fn default() -> Self {
        ObstacleParams {
            tol_obs: None,
            tol_mass: None,
            omega: None,
            max_sweeps: 400_000,
            max_bracket_steps: 100,
            margin_cells: 10,
            shallow_radius_cells: 3.0,
            shallow_mass_fraction: 1e-6,
        }
    }
}

impl ObstacleParams {
    pub fn tol_mass_for(&self, h: f64, t: f64) -> f64 {
        self.tol_mass.unwrap_or_else(|| 1e-3f64.max(4.0 * h) * t)
    }
}

/// Node window `[i_lo, i_hi] x [j_lo, j_hi]` the solve ran on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub i_lo: usize,
    pub j_lo: usize,
    pub i_hi: usize,
    pub j_hi: usize,
}

impl Window {
    fn nx(&self) -> usize {
        self.i_hi - self.i_lo + 1
    }
    fn ny(&self) -> usize {
        self.j_hi - self.j_lo + 1
    }
}

/// A converged obstacle solve.
#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    /// `Q̂_t`. Outside the window it holds the far-field `t·log|z-z_c|² + c`.
    pub qhat: ScalarField,
    /// `S*_t = {Q - Q̂_t ≤ tol_obs}` among constrained nodes.
    pub coincidence: RegionMask,
    pub boundary_constant: f64,
    pub t: f64,
    /// `ΔQ`-mass of the coincidence set.
    pub mass: f64,
    /// Mass of the discrete equilibrium measure `Δ_h Q̂_t dA`; this is what
    /// pins the boundary constant.
    pub measure_mass: f64,
    pub sweeps: usize,
    pub bracket_steps: usize,
    /// Largest complementarity defect over interior nodes.
    pub residual: f64,
    pub tol_obs: f64,
    pub tol_mass: f64,
    pub window: Window,
    /// Center `z_c` of the logarithmic boundary data.
    pub center: (f64, f64),
    pub window_clipped: bool,
    pub localization_id: String,
}

/// A local droplet: the support of `1_S ΔQ dA`, its mass and Robin constant.
#[derive(Debug, Clone)]
pub struct Droplet {
    pub mask: RegionMask,
    pub t: f64,
    /// `1_S ΔQ`.
    pub density: ScalarField,
    pub robin: f64,
    /// Max minus min of `U^{Q,S} + Q` over `S`.
    pub spread: f64,
    /// Robin constant from the double-integral formula.
    pub robin_double_integral: f64,
    /// Discrete equilibrium measure `Δ_h Q̂_t` on `S` (zero elsewhere). Unlike
    /// `density` it gives boundary cells fractional weight.
    pub equilibrium: ScalarField,
    pub potential_id: String,
    pub localization_id: String,
}

struct Problem {
    grid: Grid2D,
    nx: usize,
    ny: usize,
    q: Vec<f64>,
    lap: Vec<f64>,
    constrained: Vec<bool>,
    /// `log|z - z_c|²` on the window ring, 0 elsewhere
    ring_log: Vec<f64>,
    t: f64,
    omega: f64,
    tol_obs: f64,
    max_sweeps: usize,
}

impl Problem {
    #[inline]
    fn is_ring(&self, a: usize, b: usize) -> bool {
        a == 0 || b == 0 || a + 1 == self.nx || b + 1 == self.ny
    }

    fn set_boundary(&self, u: &mut [f64], c: f64) {
        for b in 0..self.ny {
            for a in 0..self.nx {
                if self.is_ring(a, b) {
                    let k = b * self.nx + a;
                    u[k] = self.t * self.ring_log[k] + c;
                }
            }
        }
    }

    /// Projected SOR until the largest update drops below `tol_obs·h²` and
    /// the complementarity certificate holds. Returns the sweep count.
    fn relax(&self, u: &mut [f64], c: f64) -> Result<usize> {
        self.set_boundary(u, c);
        let nx = self.nx;
        let stop = self.tol_obs * self.grid.h * self.grid.h;
        let w = self.omega;
        let mut sweeps = 0;
        loop {
            let mut max_update = 0.0f64;
            for color in 0..2 {
                for b in 1..self.ny - 1 {
                    let start = 1 + (b + color + 1) % 2;
                    let mut k = b * nx + start;
                    let end = b * nx + nx - 1;
                    while k < end {
                        let avg = 0.25 * (u[k - 1] + u[k + 1] + u[k - nx] + u[k + nx]);
                        let old = u[k];
                        let mut new = old + w * (avg - old);
                        if self.constrained[k] && new > self.q[k] {
                            new = self.q[k];
                        }
                        u[k] = new;
                        max_update = max_update.max((new - old).abs());
                        k += 2;
                    }
                }
            }
            sweeps += 1;
            if max_update < stop && self.complementarity_defect(u) <= self.tol_obs {
                return Ok(sweeps);
            }
            if sweeps >= self.max_sweeps {
                return Err(Error::NoConvergence {
                    sweeps,
                    residual: self.complementarity_defect(u),
                });
            }
        }
    }

    /// Worst violation of: `u ≤ Q` on constrained nodes, and at each
    /// interior node either `Q - u ≤ tol` or `|u - avg| ≤ tol` (the latter
    /// is the reported defect when the node is not coincident).
    fn complementarity_defect(&self, u: &[f64]) -> f64 {
        let nx = self.nx;
        let mut worst = 0.0f64;
        for b in 1..self.ny - 1 {
            for a in 1..nx - 1 {
                let k = b * nx + a;
                if self.constrained[k] {
                    let gap = self.q[k] - u[k];
                    worst = worst.max(-gap);
                    if gap <= self.tol_obs {
                        continue;
                    }
                }
                let avg = 0.25 * (u[k - 1] + u[k + 1] + u[k - nx] + u[k + nx]);
                worst = worst.max((u[k] - avg).abs());
            }
        }
        worst
    }

    fn coincident(&self, u: &[f64], k: usize) -> bool {
        let (a, b) = (k % self.nx, k / self.nx);
        !self.is_ring(a, b) && self.constrained[k] && self.q[k] - u[k] <= self.tol_obs
    }

    fn mass(&self, u: &[f64]) -> f64 {
        let mut sum = 0.0;
        for k in 0..u.len() {
            if self.coincident(u, k) {
                sum += self.lap[k];
            }
        }
        sum * self.grid.cell_area()
    }

    /// Mass of the discrete measure `Δ_h u dA`. Off the coincidence set `u`
    /// is discrete harmonic, so only coincident nodes contribute.
    fn measure_mass(&self, u: &[f64]) -> f64 {
        let nx = self.nx;
        let mut sum = 0.0;
        for k in 0..u.len() {
            if self.coincident(u, k) {
                sum += 0.25 * (u[k - 1] + u[k + 1] + u[k - nx] + u[k + nx]) - u[k];
            }
        }
        sum / PI
    }
}

fn choose_window(grid: &Grid2D, loc: &Localization, margin: usize) -> (Window, bool) {
    let full = Window {
        i_lo: 0,
        j_lo: 0,
        i_hi: grid.nx - 1,
        j_hi: grid.ny - 1,
    };
    let Localization::Mask(m) = loc else {
        return (full, false);
    };
    let Some((a, b, c, d)) = m.bbox() else {
        return (full, false);
    };
    let extent = (c - a).max(d - b) + 1;
    let pad = (margin + 2).max(extent / 2);
    let want = (
        a as isize - pad as isize,
        b as isize - pad as isize,
        (c + pad) as isize,
        (d + pad) as isize,
    );
    let win = Window {
        i_lo: want.0.max(0) as usize,
        j_lo: want.1.max(0) as usize,
        i_hi: (want.2 as usize).min(grid.nx - 1),
        j_hi: (want.3 as usize).min(grid.ny - 1),
    };
    let clipped = want.0 < 0
        || want.1 < 0
        || want.2 as usize > grid.nx - 1
        || want.3 as usize > grid.ny - 1;
    (win, clipped)
}

/// Solves `Obst_t[Q_Σ]` and certifies discrete complementarity.
pub fn solve_obstacle(
    q: &ScalarField,
    lapl_q: &ScalarField,
    loc: &Localization,
    t: f64,
    params: &ObstacleParams,
) -> Result<ObstacleSolution> {
    q.grid.check_same(&lapl_q.grid, "solve_obstacle")?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Precondition(format!("t must be positive, got {t}")));
    }
    let grid = q.grid;
    let localized = potential::localize(q, loc)?;
    let (win, clipped) = choose_window(&grid, loc, params.margin_cells);
    if clipped {
        log::warn!("solve window for Σ is clipped by the grid; lattice translates may differ");
    }
    let (wnx, wny) = (win.nx(), win.ny());
    if wnx < 3 + 2 * params.margin_cells || wny < 3 + 2 * params.margin_cells {
        return Err(Error::BoxTooSmall {
            distance: 0,
            margin: params.margin_cells,
        });
    }

    let h = grid.h;
    let center = match loc {
        Localization::All => (0.0, 0.0),
        Localization::Mask(_) => {
            let (xa, ya) = grid.coord(win.i_lo, win.j_lo);
            (
                xa + 0.5 * (wnx - 1) as f64 * h,
                ya + 0.5 * (wny - 1) as f64 * h,
            )
        }
    };
    let rel = |a: usize, b: usize| -> Complex64 {
        match loc {
            Localization::All => {
                let (x, y) = grid.coord(win.i_lo + a, win.j_lo + b);
                Complex64::new(x, y)
            }
            Localization::Mask(_) => Complex64::new(
                (a as f64 - 0.5 * (wnx - 1) as f64) * h,
                (b as f64 - 0.5 * (wny - 1) as f64) * h,
            ),
        }
    };

    let n = wnx * wny;
    let mut wq = vec![0.0; n];
    let mut wlap = vec![0.0; n];
    let mut constrained = vec![false; n];
    let mut ring_log = vec![0.0; n];
    let (mut qmin, mut qmax, mut lapmax) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    let mut ring_logmax = f64::NEG_INFINITY;
    for b in 0..wny {
        for a in 0..wnx {
            let k = b * wnx + a;
            let gk = grid.index(win.i_lo + a, win.j_lo + b);
            wq[k] = localized.q.values[gk];
            wlap[k] = if lapl_q.is_defined(gk) { lapl_q.values[gk] } else { 0.0 };
            let is_ring = a == 0 || b == 0 || a + 1 == wnx || b + 1 == wny;
            constrained[k] = localized.constrained.members[gk] && wq[k].is_finite();
            if constrained[k] {
                qmin = qmin.min(wq[k]);
                qmax = qmax.max(wq[k]);
                if !is_ring {
                    lapmax = lapmax.max(wlap[k]);
                }
            }
            if is_ring {
                ring_log[k] = rel(a, b).norm_sqr().max(h * h).ln();
                ring_logmax = ring_logmax.max(ring_log[k]);
            }
        }
    }
    if !qmin.is_finite() {
        return Err(Error::Precondition("no constrained node inside the solve window".into()));
    }
    if t <= 4.0 * h * h * lapmax {
        return Err(Error::Degenerate(format!(
            "t = {t} is below 4h²·max ΔQ = {:.3e}; the droplet would span only a few cells",
            4.0 * h * h * lapmax
        )));
    }
    let tol_obs = params
        .tol_obs
        .unwrap_or_else(|| 1e-8 * (qmax - qmin).max(1e-12));
    let tol_mass = params.tol_mass_for(h, t);
    let omega = params
        .omega
        .unwrap_or_else(|| 2.0 / (1.0 + (PI / wnx.max(wny) as f64).sin()));

    let prob = Problem {
        grid,
        nx: wnx,
        ny: wny,
        q: wq,
        lap: wlap,
        constrained,
        ring_log,
        t,
        omega,
        tol_obs,
        max_sweeps: params.max_sweeps,
    };

    let c_lo0 = qmin - t * ring_logmax - 1.0;
    let c_hi0 = qmax + 1.0;
    // initial iterate: far-field profile capped by the obstacle
    let mut u = vec![0.0; n];
    for b in 0..wny {
        for a in 0..wnx {
            let k = b * wnx + a;
            let far = t * rel(a, b).norm_sqr().max(h * h).ln() + c_lo0;
            u[k] = if prob.constrained[k] { far.min(prob.q[k]) } else { far };
        }
    }

    let mut sweeps = 0;
    let mut evaluate = |c: f64, u: &mut Vec<f64>| -> Result<f64> {
        sweeps += prob.relax(u, c)?;
        Ok(prob.measure_mass(u))
    };

    let mut c_lo = c_lo0;
    let mut m_lo = evaluate(c_lo, &mut u)?;
    let mut c_hi = c_hi0;
    let mut m_hi = evaluate(c_hi, &mut u)?;
    if !(m_lo <= t && m_hi >= t) {
        return Err(Error::Bracket {
            c_lo,
            c_hi,
            mass_lo: m_lo,
            mass_hi: m_hi,
            t,
        });
    }

    // Illinois-modified regula falsi on mass(c) - t; every iterate stays
    // inside the bracket, and a stalled side falls back to bisection.
    let target = 1e-5 * t;
    let mut evals: Vec<(f64, f64)> = vec![(c_lo, m_lo), (c_hi, m_hi)];
    let mut best = if (m_lo - t).abs() <= (m_hi - t).abs() { (c_lo, m_lo) } else { (c_hi, m_hi) };
    let (mut f_lo, mut f_hi) = (m_lo - t, m_hi - t);
    let mut side = 0i8;
    let mut steps = 0;
    let mut last_c = c_hi;
    while steps < params.max_bracket_steps {
        if (best.1 - t).abs() <= target {
            break;
        }
        let width = c_hi - c_lo;
        if width <= 1e-13 * (1.0 + c_lo.abs().max(c_hi.abs())) {
            break;
        }
        let mut c = if f_hi - f_lo > 0.0 {
            c_lo - f_lo * width / (f_hi - f_lo)
        } else {
            0.5 * (c_lo + c_hi)
        };
        // keep regula falsi off the endpoints
        let guard = 1e-3 * width;
        if !(c > c_lo + guard && c < c_hi - guard) {
            c = 0.5 * (c_lo + c_hi);
        }
        let m = evaluate(c, &mut u)?;
        last_c = c;
        steps += 1;
        evals.push((c, m));
        if (m - t).abs() < (best.1 - t).abs() {
            best = (c, m);
        }
        if m < t {
            c_lo = c;
            m_lo = m;
            f_lo = m - t;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            c_hi = c;
            m_hi = m;
            f_hi = m - t;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    let _ = (m_lo, m_hi);
    check_mass_monotone(&mut evals, tol_mass)?;

    let (c_best, _) = best;
    if c_best != last_c {
        evaluate(c_best, &mut u)?;
    }
    let measure_mass = prob.measure_mass(&u);
    let mass = prob.mass(&u);
    if (mass - t).abs() > tol_mass {
        return Err(Error::Inconsistent(format!(
            "coincidence mass {mass:.6} misses t = {t} by more than {tol_mass:.2e} \
             (equilibrium mass {measure_mass:.6})"
        )));
    }
    let residual = prob.complementarity_defect(&u);

    // margin to the outer ring of the window
    let mut closest = usize::MAX;
    for b in 0..wny {
        for a in 0..wnx {
            if prob.coincident(&u, b * wnx + a) {
                let d = a.min(b).min(wnx - 1 - a).min(wny - 1 - b);
                closest = closest.min(d);
            }
        }
    }
    if closest < params.margin_cells {
        return Err(Error::BoxTooSmall {
            distance: closest,
            margin: params.margin_cells,
        });
    }

    // scatter back onto the full grid
    let mut qhat = vec![0.0; grid.len()];
    let mut coincidence = vec![false; grid.len()];
    for k in 0..grid.len() {
        let (i, j) = grid.ij(k);
        let inside = i >= win.i_lo && i <= win.i_hi && j >= win.j_lo && j <= win.j_hi;
        if inside {
            let wk = (j - win.j_lo) * wnx + (i - win.i_lo);
            qhat[k] = u[wk];
            coincidence[k] = prob.coincident(&u, wk);
        } else {
            let z = grid.point(k) - Complex64::new(center.0, center.1);
            qhat[k] = t * z.norm_sqr().max(h * h).ln() + c_best;
        }
    }

    log::debug!(
        "obstacle t={t}: c={c_best:.10} mass={mass:.6} sweeps={sweeps} steps={steps} residual={residual:.2e}"
    );
    Ok(ObstacleSolution {
        qhat: ScalarField::new(grid, qhat)?,
        coincidence: RegionMask::new(grid, coincidence)?,
        boundary_constant: c_best,
        t,
        mass,
        measure_mass,
        sweeps,
        bracket_steps: steps,
        residual,
        tol_obs,
        tol_mass,
        window: win,
        center,
        window_clipped: clipped,
        localization_id: loc.id(),
    })
}

impl ObstacleSolution {
    /// `Δ_h Q̂_t` on the nodes of `mask` that lie inside the coincidence set,
    /// zero elsewhere (off the coincidence set `Q̂_t` is discrete harmonic).
    pub fn equilibrium_density(&self, mask: &RegionMask) -> Result<ScalarField> {
        let g = self.qhat.grid;
        g.check_same(&mask.grid, "equilibrium_density")?;
        let u = &self.qhat.values;
        let mut values = vec![0.0; g.len()];
        for k in mask.iter() {
            if self.coincidence.contains(k) {
                let avg = 0.25 * (u[k - 1] + u[k + 1] + u[k - g.nx] + u[k + g.nx]);
                values[k] = (avg - u[k]) / (g.h * g.h);
            }
        }
        ScalarField::new(g, values)
    }
}

/// Mass must be nondecreasing in `c`, up to a small fraction of `tol_mass`
/// (the coincidence test itself is only resolved to `tol_obs`).
fn check_mass_monotone(evals: &mut [(f64, f64)], tol_mass: f64) -> Result<()> {
    evals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in evals.windows(2) {
        if w[1].1 < w[0].1 - 0.1 * tol_mass {
            return Err(Error::Inconsistent(format!(
                "coincidence mass decreased from {} to {} as c rose from {} to {}",
                w[0].1, w[1].1, w[0].0, w[1].0
            )));
        }
    }
    Ok(())
}

/// Worst discrete complementarity defect of a solution over the interior of
/// its window, recomputed from scratch.
pub fn complementarity_defect(sol: &ObstacleSolution, q: &ScalarField, loc: &Localization) -> f64 {
    let g = sol.qhat.grid;
    let constrained = match loc {
        Localization::All => None,
        Localization::Mask(m) => Some(m),
    };
    let w = sol.window;
    let mut worst = 0.0f64;
    for j in w.j_lo + 1..w.j_hi {
        for i in w.i_lo + 1..w.i_hi {
            let k = g.index(i, j);
            let u = &sol.qhat.values;
            if constrained.is_none_or(|m| m.contains(k)) {
                let gap = q.values[k] - u[k];
                worst = worst.max(-gap);
                if gap <= sol.tol_obs {
                    continue;
                }
            }
            let avg = 0.25 * (u[k - 1] + u[k + 1] + u[k - g.nx] + u[k + g.nx]);
            worst = worst.max((u[k] - avg).abs());
        }
    }
    worst
}

/// Repeatedly drops nodes whose `r_shallow`-neighborhood inside the set has
/// `|ΔQ|`-mass below `eps_mass`.
pub fn remove_shallow(
    coincidence: &RegionMask,
    lapl_q: &ScalarField,
    r_shallow: f64,
    eps_mass: f64,
) -> Result<RegionMask> {
    let g = coincidence.grid;
    g.check_same(&lapl_q.grid, "remove_shallow")?;
    if r_shallow < 2.0 * g.h * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!(
            "shallow radius {r_shallow} is below 2h = {}",
            2.0 * g.h
        )));
    }
    let reach = (r_shallow / g.h).floor() as isize;
    let r2 = (r_shallow / g.h).powi(2) + 1e-9;
    let offsets: Vec<(isize, isize)> = (-reach..=reach)
        .flat_map(|dj| (-reach..=reach).map(move |di| (di, dj)))
        .filter(|&(di, dj)| (di * di + dj * dj) as f64 <= r2)
        .collect();
    let weight: Vec<f64> = (0..g.len())
        .map(|k| {
            if lapl_q.is_defined(k) {
                lapl_q.values[k].abs() * g.cell_area()
            } else {
                0.0
            }
        })
        .collect();
    let mut mask = coincidence.clone();
    loop {
        let mut drop = Vec::new();
        for k in mask.iter() {
            let (i, j) = g.ij(k);
            let mut local = 0.0;
            for &(di, dj) in &offsets {
                let (a, b) = (i as isize + di, j as isize + dj);
                if a < 0 || b < 0 || a >= g.nx as isize || b >= g.ny as isize {
                    continue;
                }
                let n = g.index(a as usize, b as usize);
                if mask.members[n] {
                    local += weight[n];
                }
            }
            if local < eps_mass {
                drop.push(k);
            }
        }
        if drop.is_empty() {
            return Ok(mask);
        }
        for k in drop {
            mask.members[k] = false;
        }
    }
}

/// Flatness threshold: `0.05·(max Q - min Q)` over the bounding box of `mask`.
pub fn tol_flat(mask: &RegionMask, q: &ScalarField) -> f64 {
    let Some((a, b, c, d)) = mask.bbox() else {
        return 0.0;
    };
    let g = mask.grid;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in b..=d {
        for i in a..=c {
            let v = q.values[g.index(i, j)];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    0.05 * (hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobinEstimate {
    /// Mean of `U^{Q,S} + Q` over the droplet nodes.
    pub gamma_star: f64,
    /// Max minus min of the same quantity.
    pub spread: f64,
    /// `(1/t)[∫∫ log(1/|ξ-η|²) ΔQ ΔQ dA dA + ∫_S Q ΔQ dA]`.
    pub double_integral: f64,
    pub tol_flat: f64,
    pub flat: bool,
}

/// `U^{Q,S} + Q` at every node of `targets`, with `ΔQ` taken from `density`.
pub fn total_potential(
    density: &ScalarField,
    mask: &RegionMask,
    q: &ScalarField,
    targets: &RegionMask,
) -> Result<ScalarField> {
    let mut u = field::log_potential(density, mask, targets)?;
    for k in targets.iter() {
        u.values[k] += q.values[k];
    }
    Ok(u)
}

/// Robin constant of a droplet by the Frostman mean, with a flatness
/// certificate and the double-integral cross-check.
pub fn robin_constant(mask: &RegionMask, density: &ScalarField, q: &ScalarField) -> Result<RobinEstimate> {
    q.grid.check_same(&mask.grid, "robin_constant")?;
    let count = mask.count();
    if count < 2 {
        return Err(Error::Degenerate(format!(
            "droplet has {count} node(s); Robin constant is undefined"
        )));
    }
    let total = total_potential(density, mask, q, mask)?;
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in mask.iter() {
        let v = total.values[k];
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let gamma_star = sum / count as f64;
    let spread = hi - lo;

    let area = q.grid.cell_area();
    let (mut mass, mut energy, mut field_term) = (0.0, 0.0, 0.0);
    for k in mask.iter() {
        let rho = density.values[k] * area;
        mass += rho;
        energy += (total.values[k] - q.values[k]) * rho;
        field_term += q.values[k] * rho;
    }
    if !(mass > 0.0) {
        return Err(Error::Degenerate("droplet carries no ΔQ-mass".into()));
    }
    // integrating U + Q = γ* against the measure gives t·γ* = I + ∫Q dσ
    let double_integral = (energy + field_term) / mass;
    let tf = tol_flat(mask, q);
    let flat = spread <= tf;
    if !flat {
        log::warn!("droplet not converged: spread {spread:.4} exceeds tol_flat {tf:.4}");
    }
    Ok(RobinEstimate {
        gamma_star,
        spread,
        double_integral,
        tol_flat: tf,
        flat,
    })
}

/// Builds the droplet of a converged solution: shallow points removed,
/// density `1_S ΔQ`, Robin constant, and a mass re-check.
pub fn make_droplet(
    sol: &ObstacleSolution,
    lapl_q: &ScalarField,
    q: &ScalarField,
    params: &ObstacleParams,
) -> Result<Droplet> {
    let g = sol.qhat.grid;
    let mask = remove_shallow(
        &sol.coincidence,
        lapl_q,
        params.shallow_radius_cells * g.h,
        params.shallow_mass_fraction * sol.t,
    )?;
    if mask.count() < 2 {
        return Err(Error::Degenerate(format!(
            "droplet for t = {} has {} node(s)",
            sol.t,
            mask.count()
        )));
    }
    let mut density = lapl_q.restricted_to(&mask)?;
    density.undefined = None;
    let mass = field::integrate_da(&density, &mask)?;
    if (mass - sol.t).abs() > sol.tol_mass {
        return Err(Error::Inconsistent(format!(
            "droplet mass {mass:.6} differs from t = {} by more than {:.2e} after shallow-point removal",
            sol.t, sol.tol_mass
        )));
    }
    let robin = robin_constant(&mask, &density, q)?;
    let equilibrium = sol.equilibrium_density(&mask)?;
    Ok(Droplet {
        mask,
        t: sol.t,
        density,
        robin: robin.gamma_star,
        spread: robin.spread,
        robin_double_integral: robin.double_integral,
        equilibrium,
        potential_id: "unspecified".into(),
        localization_id: sol.localization_id.clone(),
    })
}

/// Sampled fields, growth check, solve and droplet in one call.
pub fn solve_droplet(
    pot: &Potential,
    grid: &Grid2D,
    loc: &Localization,
    t: f64,
    params: &ObstacleParams,
) -> Result<(ObstacleSolution, Droplet)> {
    let (q, lap) = potential::sample_potential(pot, grid)?;
    solve_droplet_on(&q, &lap, loc, t, params, &pot.id(), matches!(loc, Localization::All).then_some(pot))
}

/// As [`solve_droplet`] for already sampled fields; the growth check runs
/// only when a potential is supplied.
pub fn solve_droplet_on(
    q: &ScalarField,
    lap: &ScalarField,
    loc: &Localization,
    t: f64,
    params: &ObstacleParams,
    potential_id: &str,
    growth_check: Option<&Potential>,
) -> Result<(ObstacleSolution, Droplet)> {
    if let Some(pot) = growth_check {
        let report = potential::check_growth(pot, &q.grid, t);
        if !report.pass {
            return Err(Error::Precondition(format!(
                "growth check failed for t = {t} on this box (growth ok: {}, certificate ok: {})",
                report.growth_ok, report.certificate_ok
            )));
        }
    }
    let sol = solve_obstacle(q, lap, loc, t, params)?;
    let mut droplet = make_droplet(&sol, lap, q, params)?;
    droplet.potential_id = potential_id.to_string();
    Ok((sol, droplet))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrostmanReport {
    pub pass: bool,
    pub gamma_star: f64,
    /// Smallest `U^{Q,S} + Q - γ*` over the checked nodes.
    pub worst: Option<NodeValue>,
    pub checked: usize,
    pub tol: f64,
}

/// Checks `U^{Q,S} + Q ≥ γ* - tol` on `off_mask`.
pub fn verify_frostman(d: &Droplet, q: &ScalarField, off_mask: &RegionMask, tol: f64) -> Result<FrostmanReport> {
    if off_mask.intersection(&d.mask)?.count() > 0 {
        return Err(Error::Precondition("verify_frostman: off-mask meets the droplet".into()));
    }
    let total = total_potential(&d.density, &d.mask, q, off_mask)?;
    let g = q.grid;
    let mut worst: Option<NodeValue> = None;
    for k in off_mask.iter() {
        let margin = total.values[k] - d.robin;
        if worst.is_none_or(|w| margin < w.value) {
            worst = Some(NodeValue::at(&g, k, margin));
        }
    }
    Ok(FrostmanReport {
        pass: worst.is_none_or(|w| w.value >= -tol),
        gamma_star: d.robin,
        worst,
        checked: off_mask.count(),
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialSpec;
    use approx::assert_abs_diff_eq;

    fn quad_setup(half: f64, h: f64) -> (Potential, Grid2D, ScalarField, ScalarField) {
        let pot = Potential::from_spec(&PotentialSpec::quadratic()).unwrap();
        let g = Grid2D::centered((0.0, 0.0), half, h).unwrap();
        let (q, lap) = potential::sample_potential(&pot, &g).unwrap();
        (pot, g, q, lap)
    }

    /// Radial closed form for `Q = |z|²`: `|z|²` inside `√t`, else
    /// `t·log|z|² + t - t·log t`.
    fn radial_qhat(z: Complex64, t: f64) -> f64 {
        let r2 = z.norm_sqr();
        if r2 <= t {
            r2
        } else {
            t * r2.ln() + t - t * t.ln()
        }
    }

    #[test]
    fn quadratic_unit_droplet_matches_closed_form() {
        let (_, g, q, lap) = quad_setup(2.5, 0.04);
        let params = ObstacleParams::default();
        let sol = solve_obstacle(&q, &lap, &Localization::All, 1.0, &params).unwrap();
        assert_abs_diff_eq!(sol.boundary_constant, 1.0, epsilon = 0.02);
        let (i, j) = g.nearest_node(Complex64::new(2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(sol.qhat.get(i, j), radial_qhat(Complex64::new(2.0, 0.0), 1.0), epsilon = 0.03);
        let disk = RegionMask::disk(g, Complex64::new(0.0, 0.0), 1.0);
        assert!(sol.coincidence.hausdorff_to(&disk).unwrap() <= 2.0 * g.h);
        assert!(complementarity_defect(&sol, &q, &Localization::All) <= sol.tol_obs);
    }

    #[test]
    fn quarter_droplet_radius() {
        let (_, g, q, lap) = quad_setup(2.0, 0.04);
        let sol = solve_obstacle(&q, &lap, &Localization::All, 0.25, &ObstacleParams::default()).unwrap();
        let disk = RegionMask::disk(g, Complex64::new(0.0, 0.0), 0.5);
        assert!(sol.coincidence.hausdorff_to(&disk).unwrap() <= 2.0 * g.h);
    }

    #[test]
    fn large_localization_changes_nothing() {
        let (_, g, q, lap) = quad_setup(3.5, 0.05);
        let p = ObstacleParams::default();
        let all = solve_obstacle(&q, &lap, &Localization::All, 1.0, &p).unwrap();
        let sigma = RegionMask::disk(g, Complex64::new(0.0, 0.0), 3.0);
        let local = solve_obstacle(&q, &lap, &Localization::Mask(sigma), 1.0, &p).unwrap();
        assert!(all.coincidence.is_subset_of(&local.coincidence.dilate(1)));
        assert!(local.coincidence.is_subset_of(&all.coincidence.dilate(1)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (_, g, q, lap) = quad_setup(2.0, 0.05);
        let p = ObstacleParams::default();
        assert!(matches!(
            solve_obstacle(&q, &lap, &Localization::All, -1.0, &p),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            solve_obstacle(&q, &lap, &Localization::All, 1e-3, &p),
            Err(Error::Degenerate(_))
        ));
        // the droplet of mass 3.5 has radius 1.87 and reaches the margin
        assert!(matches!(
            solve_obstacle(&q, &lap, &Localization::All, 3.5, &p),
            Err(Error::BoxTooSmall { .. })
        ));
        // Σ too small to carry the mass
        let tiny = RegionMask::disk(g, Complex64::new(0.0, 0.0), 0.3);
        assert!(matches!(
            solve_obstacle(&q, &lap, &Localization::Mask(tiny), 1.0, &p),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn shallow_point_removal() {
        let g = Grid2D::centered((0.0, 0.0), 6.0, 0.05).unwrap();
        let disk = RegionMask::disk(g, Complex64::new(0.0, 0.0), 1.0);
        let one = ScalarField::constant(g, 1.0);
        let kept = remove_shallow(&disk, &one, 3.0 * g.h, 1e-6).unwrap();
        assert_eq!(kept, disk);

        let (ci, cj) = g.nearest_node(Complex64::new(5.0, 0.0)).unwrap();
        let mut with_block = disk.clone();
        let mut lap = one.clone();
        for dj in 0..3 {
            for di in 0..3 {
                let k = g.index(ci + di - 1, cj + dj - 1);
                with_block.members[k] = true;
                lap.values[k] = 0.0;
            }
        }
        let cleaned = remove_shallow(&with_block, &lap, 3.0 * g.h, 1e-6).unwrap();
        assert_eq!(cleaned, disk);
        let empty = RegionMask::empty(g);
        assert_eq!(remove_shallow(&empty, &one, 3.0 * g.h, 1e-6).unwrap(), empty);
        assert!(remove_shallow(&disk, &one, g.h, 1e-6).is_err());
    }

    #[test]
    fn droplet_robin_and_frostman() {
        let (pot, g, q, _) = quad_setup(2.5, 0.02);
        let (_, d) = solve_droplet(&pot, &g, &Localization::All, 1.0, &ObstacleParams::default()).unwrap();
        assert_abs_diff_eq!(d.robin, 1.0, epsilon = 0.02);
        assert_abs_diff_eq!(d.robin_double_integral, 1.0, epsilon = 0.03);
        assert_eq!(d.potential_id, "quadratic");

        let mut off = RegionMask::empty(g);
        let (i, j) = g.nearest_node(Complex64::new(2.0, 0.0)).unwrap();
        off.members[g.index(i, j)] = true;
        let rep = verify_frostman(&d, &q, &off, 1e-3).unwrap();
        // (-log 4 + 4) - 1
        assert_abs_diff_eq!(rep.worst.unwrap().value, 3.0 - 4f64.ln(), epsilon = 0.03);
        assert!(rep.pass);
        assert!(verify_frostman(&d, &q, &d.mask, 1e-3).is_err());
    }

    #[test]
    fn robin_constant_for_small_mass() {
        // γ*_t = t - t·log t for |z|²
        let (pot, g, _, _) = quad_setup(2.0, 0.02);
        let (_, d) = solve_droplet(&pot, &g, &Localization::All, 0.25, &ObstacleParams::default()).unwrap();
        let exact = 0.25 - 0.25 * 0.25f64.ln();
        assert_abs_diff_eq!(d.robin, exact, epsilon = 0.02);
        assert_abs_diff_eq!(d.robin_double_integral, exact, epsilon = 0.03);
    }

    #[test]
    fn robin_estimates_agree_for_varying_density() {
        // Q = |z|⁴/2: ΔQ = 2|z|², S_t = {|z| ≤ t^{1/4}}, γ*_t = t/2 - (t/2)·log t
        let pot = Potential::from_spec(&PotentialSpec::quartic(0.0)).unwrap();
        let g = Grid2D::centered((0.0, 0.0), 1.6, 0.02).unwrap();
        let t = 0.5;
        let (_, d) = solve_droplet(&pot, &g, &Localization::All, t, &ObstacleParams::default()).unwrap();
        let exact = 0.5 * t - 0.5 * t * t.ln();
        assert_abs_diff_eq!(d.robin, exact, epsilon = 0.02);
        assert_abs_diff_eq!(d.robin_double_integral, d.robin, epsilon = 0.02);
        let disk = RegionMask::disk(g, Complex64::new(0.0, 0.0), t.powf(0.25));
        assert!(d.mask.hausdorff_to(&disk).unwrap() <= 2.0 * g.h);
    }

    #[test]
    fn single_node_droplet_is_degenerate() {
        let (_, g, q, _) = quad_setup(1.0, 0.05);
        let mut m = RegionMask::empty(g);
        m.members[g.index(20, 20)] = true;
        let dens = ScalarField::constant(g, 1.0).restricted_to(&m).unwrap();
        assert!(matches!(robin_constant(&m, &dens, &q), Err(Error::Degenerate(_))));
    }
}
