//! Droplet families in `t`: chains, Richardson's moment identity and
//! inequality, the harmonic-measure difference quotient, and the backward
//! weak Hele-Shaw construction.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::droplet::{self, DominationReport};
use crate::error::{Error, Result};
use crate::field::{self, RegionMask, ScalarField};
use crate::obstacle::{self, Droplet, ObstacleParams, ObstacleSolution};
use crate::potential::{Localization, Potential};

/// One solved entry of a chain.
#[derive(Debug, Clone)]
pub struct ChainEntry {
    pub solution: ObstacleSolution,
    pub droplet: Droplet,
}

#[derive(Debug, Clone)]
pub struct DropletChain {
    /// Requested parameters, strictly increasing.
    pub t_values: Vec<f64>,
    /// Solved prefix of `t_values`.
    pub entries: Vec<ChainEntry>,
    pub potential_id: String,
    pub localization_id: String,
    /// Set when the chain stopped early or a monotonicity check failed.
    pub error: Option<ChainError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainError {
    pub kind: String,
    pub message: String,
    /// Index into `t_values` where the chain stopped.
    pub at: usize,
}

impl DropletChain {
    pub fn is_complete(&self) -> bool {
        self.error.is_none() && self.entries.len() == self.t_values.len()
    }

    pub fn droplets(&self) -> impl Iterator<Item = &Droplet> {
        self.entries.iter().map(|e| &e.droplet)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_increasing(t_list: &[f64]) -> Result<()> {
    if t_list.is_empty() {
        return Err(Error::Precondition("t list is empty".into()));
    }
    if let Some(bad) = t_list.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Precondition(format!("t must be positive, got {bad}")));
    }
    if t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("t list must be strictly increasing".into()));
    }
    Ok(())
}

/// Monotonicity between consecutive entries: `S_{t₁} ⊆ S_{t₂}` up to one
/// cell and `Q̂_{t₁} ≤ Q̂_{t₂} + tol_obs` nodewise.
fn check_monotone(a: &ChainEntry, b: &ChainEntry) -> Option<String> {
    let excess = a.droplet.mask.excess_over(&b.droplet.mask.dilate(1));
    if excess > 0 {
        return Some(format!(
            "droplet for t = {} has {excess} nodes outside the droplet for t = {}",
            a.solution.t, b.solution.t
        ));
    }
    let tol = a.solution.tol_obs.max(b.solution.tol_obs);
    let (qa, qb) = (&a.solution.qhat.values, &b.solution.qhat.values);
    let worst = qa
        .iter()
        .zip(qb)
        .map(|(x, y)| x - y)
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > tol {
        return Some(format!(
            "Q̂ decreased by {worst:.3e} between t = {} and t = {}",
            a.solution.t, b.solution.t
        ));
    }
    None
}

/// One obstacle solve per `t`. The solves are independent of one another,
/// so they run in parallel and each result is the same as a standalone
/// solve. On the first failure the chain is cut there and flagged.
pub fn evolve_chain(
    q: &ScalarField,
    lapl_q: &ScalarField,
    loc: &Localization,
    t_list: &[f64],
    params: &ObstacleParams,
    potential_id: &str,
    growth_check: Option<&Potential>,
) -> Result<DropletChain> {
    check_increasing(t_list)?;
    let results: Vec<Result<ChainEntry>> = t_list
        .par_iter()
        .map(|&t| {
            let (solution, droplet) =
                obstacle::solve_droplet_on(q, lapl_q, loc, t, params, potential_id, growth_check)?;
            Ok(ChainEntry { solution, droplet })
        })
        .collect();

    let mut chain = DropletChain {
        t_values: t_list.to_vec(),
        entries: Vec::with_capacity(t_list.len()),
        potential_id: potential_id.to_string(),
        localization_id: loc.id(),
        error: None,
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(entry) => {
                if let Some(prev) = chain.entries.last() {
                    if let Some(message) = check_monotone(prev, &entry) {
                        chain.error = Some(ChainError {
                            kind: "inconsistent".into(),
                            message,
                            at: i,
                        });
                        break;
                    }
                }
                chain.entries.push(entry);
            }
            Err(e) => {
                chain.error = Some(ChainError {
                    kind: e.kind().into(),
                    message: e.to_string(),
                    at: i,
                });
                break;
            }
        }
    }
    if let Some(e) = &chain.error {
        log::warn!("chain stopped at t = {}: {}", t_list[e.at], e.message);
    }
    Ok(chain)
}

/// Domination check on each consecutive pair of a chain.
pub fn chain_domination(chain: &DropletChain, q: &ScalarField, tol: f64) -> Result<Vec<DominationReport>> {
    chain
        .entries
        .windows(2)
        .map(|w| droplet::check_domination(&w[0].droplet, &w[1].droplet, q, tol))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentKind {
    Const,
    Re,
    Im,
}

impl MomentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MomentKind::Const => "const",
            MomentKind::Re => "re",
            MomentKind::Im => "im",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub t_prime: f64,
    /// 0 for the constant moment.
    pub k: u32,
    pub kind: MomentKind,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl MomentRow {
    pub fn pass(&self) -> bool {
        (self.value - self.expected).abs() <= self.tolerance
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub center: (f64, f64),
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(MomentRow::pass)
    }

    /// CSV with header `t,t_prime,k,kind,value,expected`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,t_prime,k,kind,value,expected\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.12e},{:.12e}\n",
                r.t,
                r.t_prime,
                r.k,
                r.kind.as_str(),
                r.value,
                r.expected
            ));
        }
        out
    }
}

/// `ΔQ`-weighted centroid of a droplet.
pub fn mass_centroid(d: &Droplet) -> Complex64 {
    let g = d.mask.grid;
    let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
    for k in d.mask.iter() {
        num += g.point(k) * d.density.values[k];
        den += d.density.values[k];
    }
    num / den
}

fn require_nested(s1: &Droplet, s2: &Droplet) -> Result<()> {
    s1.mask.grid.check_same(&s2.mask.grid, "droplet pair")?;
    if !s1.mask.is_subset_of(&s2.mask.dilate(1)) {
        return Err(Error::Precondition("S₁ is not contained in S₂".into()));
    }
    Ok(())
}

/// Node of `mask.interior()` nearest to `z`, if `z` lies in that cell.
fn interior_node(mask: &RegionMask, z: Complex64) -> Option<usize> {
    let g = mask.grid;
    let (i, j) = g.nearest_node(z)?;
    let k = g.index(i, j);
    mask.interior().contains(k).then_some(k)
}

/// Growth measure `σ̂_{t₂} - σ̂_{t₁}` per cell area, with `σ̂_t = Δ_h Q̂_t dA`
/// the discrete equilibrium measure. In the continuum this is
/// `1_{S₂∖S₁} ΔQ`; the pixel set `S₂∖S₁` itself carries an O(h) boundary
/// error with lattice symmetry that dominates the higher moments.
pub fn growth_density(s1: &Droplet, s2: &Droplet) -> Result<ScalarField> {
    require_nested(s1, s2)?;
    let values = s2
        .equilibrium
        .values
        .iter()
        .zip(&s1.equilibrium.values)
        .map(|(b, a)| b - a)
        .collect();
    ScalarField::new(s1.mask.grid, values)
}

/// Support of the growth measure: `S₂ ∪ S₁`.
fn growth_support(s1: &Droplet, s2: &Droplet) -> Result<RegionMask> {
    s2.mask.union(&s1.mask)
}

/// Richardson moments of the growth between `S₁` and `S₂`: total mass
/// `t₂ - t₁`, and `Re/Im (z-a)^{-k}` for `k = 1..=k_max` integrating to
/// zero. `a` defaults to the centroid of `S₁` and must be interior to it.
pub fn richardson_moments(
    s1: &Droplet,
    s2: &Droplet,
    a: Option<Complex64>,
    k_max: u32,
    tol_mass: f64,
    tol_moment: f64,
) -> Result<MomentReport> {
    let rho = growth_density(s1, s2)?;
    let g = s1.mask.grid;
    let a = a.unwrap_or_else(|| mass_centroid(s1));
    if interior_node(&s1.mask, a).is_none() {
        return Err(Error::Precondition(format!(
            "moment center ({:.4}, {:.4}) is not an interior point of S₁",
            a.re, a.im
        )));
    }
    let support = growth_support(s1, s2)?;
    let area = g.cell_area();
    let (t, tp) = (s1.t, s2.t);
    let mut rows = Vec::with_capacity(1 + 2 * k_max as usize);
    let mass: f64 = support.iter().map(|k| rho.values[k]).sum::<f64>() * area;
    rows.push(MomentRow {
        t,
        t_prime: tp,
        k: 0,
        kind: MomentKind::Const,
        value: mass,
        expected: tp - t,
        tolerance: tol_mass,
    });
    for k in 1..=k_max {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in support.iter() {
            if rho.values[n] != 0.0 {
                acc += (g.point(n) - a).powi(-(k as i32)) * rho.values[n];
            }
        }
        acc *= area;
        for (kind, value) in [(MomentKind::Re, acc.re), (MomentKind::Im, acc.im)] {
            rows.push(MomentRow {
                t,
                t_prime: tp,
                k,
                kind,
                value,
                expected: 0.0,
                tolerance: tol_moment,
            });
        }
    }
    Ok(MomentReport {
        center: (a.re, a.im),
        rows,
    })
}

/// `∫ (log|z-a|² - log|z-b|²) d(σ̂_{t₂} - σ̂_{t₁})` with `a` interior to
/// `S₂∖S₁` and `b` interior to `S₁`, both snapped to nodes; the cell at `a`
/// uses the cell-averaged kernel. For a domination pair the value is `≥ 0`.
pub fn richardson_inequality(s1: &Droplet, s2: &Droplet, a: Complex64, b: Complex64) -> Result<f64> {
    let rho = growth_density(s1, s2)?;
    if s1.mask == s2.mask && rho.values.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let g = s1.mask.grid;
    let growth = s2.mask.difference(&s1.mask)?;
    let ka = interior_node(&growth, a).ok_or_else(|| {
        Error::Precondition(format!("a = ({:.4}, {:.4}) is not interior to S₂∖S₁", a.re, a.im))
    })?;
    let kb = interior_node(&s1.mask, b).ok_or_else(|| {
        Error::Precondition(format!("b = ({:.4}, {:.4}) is not interior to S₁", b.re, b.im))
    })?;
    let (za, zb) = (g.point(ka), g.point(kb));
    let self_cell = 2.0 * field::log_r_eff(g.h);
    let mut sum = 0.0;
    for n in growth_support(s1, s2)?.iter() {
        if rho.values[n] == 0.0 {
            continue;
        }
        let z = g.point(n);
        let la = if n == ka { self_cell } else { (z - za).norm_sqr().ln() };
        let lb = if n == kb { self_cell } else { (z - zb).norm_sqr().ln() };
        sum += (la - lb) * rho.values[n];
    }
    Ok(sum * g.cell_area())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub value: f64,
}

/// [`richardson_inequality`] at `count` random placements: `a` drawn from
/// the interior nodes of `S₂∖S₁`, `b` from those of `S₁`.
pub fn richardson_inequality_sweep(s1: &Droplet, s2: &Droplet, count: usize, seed: u64) -> Result<Vec<Placement>> {
    require_nested(s1, s2)?;
    let g = s1.mask.grid;
    let growth: Vec<usize> = s2.mask.difference(&s1.mask)?.interior().iter().collect();
    let inner: Vec<usize> = s1.mask.interior().iter().collect();
    if growth.is_empty() || inner.is_empty() {
        return Err(Error::Degenerate("S₂∖S₁ or S₁ has no interior nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a = g.point(growth[rng.gen_range(0..growth.len())]);
            let b = g.point(inner[rng.gen_range(0..inner.len())]);
            Ok(Placement {
                a: (a.re, a.im),
                b: (b.re, b.im),
                value: richardson_inequality(s1, s2, a, b)?,
            })
        })
        .collect()
}

/// `(1/(t′-t)) ∫ f d(σ̂_{t′} - σ̂_t)` for entries `i` and `i+1`.
pub fn harmonic_measure_quotient(chain: &DropletChain, i: usize, f: &ScalarField) -> Result<f64> {
    if i + 1 >= chain.entries.len() {
        return Err(Error::Precondition(format!(
            "entry {i} has no successor in a chain of length {}",
            chain.entries.len()
        )));
    }
    let (s, sp) = (&chain.entries[i].droplet, &chain.entries[i + 1].droplet);
    f.grid.check_same(&s.mask.grid, "harmonic_measure_quotient")?;
    if sp.mask.difference(&s.mask)?.is_empty() {
        return Err(Error::Degenerate(format!(
            "no growth between t = {} and t = {}",
            s.t, sp.t
        )));
    }
    let rho = growth_density(s, sp)?;
    let integral: f64 = growth_support(s, sp)?
        .iter()
        .map(|k| f.values[k] * rho.values[k])
        .sum::<f64>()
        * f.grid.cell_area();
    Ok(integral / (sp.t - s.t))
}

/// The synthetic field `Q̃ = -U^{Q,K}` built from `1_K ΔQ`, and the terminal
/// mass `t_* = ∫_K ΔQ dA`.
pub fn backward_potential(k_star: &RegionMask, lapl_q: &ScalarField) -> Result<(ScalarField, f64)> {
    let mut density = lapl_q.restricted_to(k_star)?;
    density.undefined = None;
    let t_star = field::integrate_da(&density, k_star)?;
    let u = field::log_potential(&density, k_star, &RegionMask::full(k_star.grid))?;
    let values = u.values.iter().map(|v| -v).collect();
    Ok((ScalarField::new(k_star.grid, values)?, t_star))
}

/// Backward weak Hele-Shaw: `K_t = S_t[Q̃, K]` for each `t` in `t_desc`
/// (strictly decreasing, all below `t_*`). The entries are returned in the
/// order requested.
pub fn backward_hele_shaw(
    k_star: &RegionMask,
    lapl_q: &ScalarField,
    t_desc: &[f64],
    params: &ObstacleParams,
    tol: f64,
) -> Result<DropletChain> {
    let g = k_star.grid;
    g.check_same(&lapl_q.grid, "backward_hele_shaw")?;
    if k_star.is_empty() {
        return Err(Error::Precondition("K is empty".into()));
    }
    if let Some(k) = k_star.iter().find(|&k| !lapl_q.is_defined(k) || lapl_q.values[k] < -tol) {
        return Err(Error::Precondition(format!(
            "ΔQ is negative on K at ({:.4}, {:.4})",
            g.point(k).re,
            g.point(k).im
        )));
    }
    if t_desc.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("t list must be strictly decreasing".into()));
    }
    let (q_tilde, t_star) = backward_potential(k_star, lapl_q)?;
    let kept = obstacle::remove_shallow(
        k_star,
        lapl_q,
        params.shallow_radius_cells * g.h,
        params.shallow_mass_fraction * t_star,
    )?;
    if kept != *k_star {
        return Err(Error::Precondition(format!(
            "K has {} shallow nodes",
            k_star.count() - kept.count()
        )));
    }
    if let Some(&t) = t_desc.iter().find(|&&t| t >= t_star) {
        return Err(Error::Precondition(format!(
            "t exceeds terminal mass: t = {t} ≥ t_* = {t_star:.6}"
        )));
    }
    let ascending: Vec<f64> = t_desc.iter().rev().copied().collect();
    let id = format!("backward[{}]", Localization::Mask(k_star.clone()).id());
    let mut chain = evolve_chain(
        &q_tilde,
        lapl_q,
        &Localization::Mask(k_star.clone()),
        &ascending,
        params,
        &id,
        None,
    )?;
    chain.t_values.reverse();
    chain.entries.reverse();
    if let Some(e) = &mut chain.error {
        e.at = t_desc.len() - 1 - e.at;
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid2D;
    use crate::potential::{sample_potential, PotentialSpec};
    use approx::assert_abs_diff_eq;

    fn quad(half: f64, h: f64) -> (Potential, ScalarField, ScalarField) {
        let pot = Potential::from_spec(&PotentialSpec::quadratic()).unwrap();
        let g = Grid2D::centered((0.0, 0.0), half, h).unwrap();
        let (q, lap) = sample_potential(&pot, &g).unwrap();
        (pot, q, lap)
    }

    #[test]
    fn quadratic_chain_radii() {
        let (pot, q, lap) = quad(2.0, 0.04);
        let ts = [0.25, 0.5, 1.0];
        let chain = evolve_chain(&q, &lap, &Localization::All, &ts, &ObstacleParams::default(), "quadratic", Some(&pot)).unwrap();
        assert!(chain.is_complete());
        let g = q.grid;
        for (e, t) in chain.entries.iter().zip(ts) {
            let disk = RegionMask::disk(g, Complex64::new(0.0, 0.0), f64::sqrt(t));
            assert!(e.droplet.mask.hausdorff_to(&disk).unwrap() <= 2.0 * g.h);
        }
    }

    #[test]
    fn bad_t_lists() {
        let (_, q, lap) = quad(2.0, 0.05);
        let p = ObstacleParams::default();
        assert!(evolve_chain(&q, &lap, &Localization::All, &[0.5, 0.25], &p, "q", None).is_err());
        assert!(evolve_chain(&q, &lap, &Localization::All, &[], &p, "q", None).is_err());
        // too large for the box: the chain is cut, not discarded
        let chain = evolve_chain(&q, &lap, &Localization::All, &[0.5, 3.5], &p, "q", None).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain.error.as_ref().unwrap().kind, "box_too_small");
    }

    #[test]
    fn identical_pair_has_zero_moments() {
        let (pot, q, _) = quad(2.0, 0.04);
        let (_, d) = obstacle::solve_droplet(&pot, &q.grid, &Localization::All, 0.5, &ObstacleParams::default()).unwrap();
        let rep = richardson_moments(&d, &d, None, 4, 1e-3, 1e-3).unwrap();
        assert!(rep.rows.iter().all(|r| r.value == 0.0 && r.t == r.t_prime));
        assert!(rep.to_csv().starts_with("t,t_prime,k,kind,value,expected\n"));
        let v = richardson_inequality(&d, &d, Complex64::new(0.9, 0.0), Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(v, 0.0);
        let off = richardson_moments(&d, &d, Some(Complex64::new(1.5, 0.0)), 4, 1e-3, 1e-3);
        assert!(matches!(off, Err(Error::Precondition(_))));
    }

    #[test]
    fn backward_from_unit_disk() {
        let g = Grid2D::centered((0.0, 0.0), 2.0, 0.04).unwrap();
        let k = RegionMask::disk(g, Complex64::new(0.0, 0.0), 1.0);
        let one = ScalarField::constant(g, 1.0);
        let p = ObstacleParams::default();
        let chain = backward_hele_shaw(&k, &one, &[0.5, 0.25], &p, 1e-6).unwrap();
        assert!(chain.is_complete(), "{:?}", chain.error);
        assert_eq!(chain.t_values, vec![0.5, 0.25]);
        let d = &chain.entries[1].droplet;
        let disk = RegionMask::disk(g, Complex64::new(0.0, 0.0), 0.5);
        assert!(d.mask.hausdorff_to(&disk).unwrap() <= 2.0 * g.h);
        let err = backward_hele_shaw(&k, &one, &[1.2], &p, 1e-6).unwrap_err();
        assert!(err.to_string().contains("t exceeds terminal mass"));
    }

    #[test]
    fn backward_potential_of_disk() {
        // -U of the uniform unit disk is |z|² - 1 inside
        let g = Grid2D::centered((0.0, 0.0), 1.5, 0.02).unwrap();
        let k = RegionMask::disk(g, Complex64::new(0.0, 0.0), 1.0);
        let (qt, t_star) = backward_potential(&k, &ScalarField::constant(g, 1.0)).unwrap();
        assert_abs_diff_eq!(t_star, 1.0, epsilon = 0.01);
        let (i, j) = g.nearest_node(Complex64::new(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(qt.get(i, j), 0.25 - 1.0, epsilon = 0.01);
    }
}
