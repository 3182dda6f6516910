//! Verification of local droplets and the domination order.
//!
//! Everything here rebuilds `U^{Q,S}` and `Q̂_S = γ* - U^{Q,S}` from the
//! mask itself, so a verdict never depends on how the mask was produced.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, RegionMask, ScalarField};
use crate::obstacle::{self, Droplet};
use crate::potential::{Localization, NodeValue};

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub pass: bool,
    pub worst_value: Option<f64>,
    pub worst_node: Option<NodeValue>,
}

impl ConditionReport {
    fn new(pass: bool, worst: Option<NodeValue>) -> Self {
        ConditionReport {
            pass,
            worst_value: worst.map(|w| w.value),
            worst_node: worst,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalDropletReport {
    pub t: f64,
    pub robin: f64,
    pub spread: f64,
    pub tol_flat: f64,
    pub tol: f64,
    pub pass: bool,
    /// Keyed by condition: `laplacian_nonnegative`, `no_shallow_points`,
    /// `mass`, `flat_potential`, `frostman_off_support`.
    pub conditions: BTreeMap<String, ConditionReport>,
}

/// Smallest value of `f` over `mask`, with its node.
fn min_over(f: &ScalarField, mask: &RegionMask, shift: f64) -> Option<NodeValue> {
    let g = f.grid;
    let mut worst: Option<NodeValue> = None;
    for k in mask.iter() {
        let v = f.values[k] - shift;
        if worst.is_none_or(|w| v < w.value) {
            worst = Some(NodeValue::at(&g, k, v));
        }
    }
    worst
}

/// Checks that `S` is a local `(Q, t)`-droplet for the localization `loc`:
/// (i) `ΔQ ≥ -tol` on `S`, (ii) no shallow points, (iii) the mass `t`,
/// (iv) `U^{Q,S} + Q` flat on `S` to within `tol_flat`, and
/// (v) `U^{Q,S} + Q ≥ γ* - tol` on `Σ∖S`.
pub fn verify_local_droplet(
    s: &RegionMask,
    loc: &Localization,
    q: &ScalarField,
    lapl_q: &ScalarField,
    tol: f64,
    params: &obstacle::ObstacleParams,
) -> Result<LocalDropletReport> {
    let g = q.grid;
    g.check_same(&s.grid, "verify_local_droplet")?;
    g.check_same(&lapl_q.grid, "verify_local_droplet")?;
    if s.is_empty() {
        return Err(Error::Precondition("droplet mask is empty".into()));
    }
    let sigma = match loc {
        Localization::All => RegionMask::full(g),
        Localization::Mask(m) => m.clone(),
    };
    if !s.is_subset_of(&sigma) {
        return Err(Error::Precondition("droplet mask is not contained in Σ".into()));
    }
    let mut density = lapl_q.restricted_to(s)?;
    density.undefined = None;
    let t = field::integrate_da(&density, s)?;
    let mut conditions = BTreeMap::new();

    let worst_lap = min_over(&density, s, 0.0);
    conditions.insert(
        "laplacian_nonnegative".to_string(),
        ConditionReport::new(worst_lap.is_none_or(|w| w.value >= -tol), worst_lap),
    );

    let kept = obstacle::remove_shallow(
        s,
        lapl_q,
        params.shallow_radius_cells * g.h,
        params.shallow_mass_fraction * t.abs(),
    )?;
    let removed = s.difference(&kept)?;
    let first_removed = removed.iter().next().map(|k| NodeValue::at(&g, k, removed.count() as f64));
    conditions.insert(
        "no_shallow_points".to_string(),
        ConditionReport::new(removed.is_empty(), first_removed),
    );

    conditions.insert(
        "mass".to_string(),
        ConditionReport {
            pass: t > 0.0,
            worst_value: Some(t),
            worst_node: None,
        },
    );

    // (iv) and (v) need the potential on Σ; a Robin constant needs t > 0
    let robin;
    let spread;
    let tol_flat = obstacle::tol_flat(s, q);
    if t > 0.0 && s.count() >= 2 {
        let total = obstacle::total_potential(&density, s, q, &sigma)?;
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        let mut hi_node = None;
        for k in s.iter() {
            let v = total.values[k];
            sum += v;
            lo = lo.min(v);
            if v > hi {
                hi = v;
                hi_node = Some(k);
            }
        }
        robin = sum / s.count() as f64;
        spread = hi - lo;
        conditions.insert(
            "flat_potential".to_string(),
            ConditionReport::new(
                spread <= tol_flat,
                hi_node.map(|k| NodeValue::at(&g, k, spread)),
            ),
        );
        let off = sigma.difference(s)?;
        let worst = min_over(&total, &off, robin);
        conditions.insert(
            "frostman_off_support".to_string(),
            ConditionReport::new(worst.is_none_or(|w| w.value >= -tol), worst),
        );
    } else {
        robin = f64::NAN;
        spread = f64::NAN;
        for name in ["flat_potential", "frostman_off_support"] {
            conditions.insert(name.to_string(), ConditionReport::new(false, None));
        }
    }

    let pass = conditions.values().all(|c| c.pass);
    Ok(LocalDropletReport {
        t,
        robin,
        spread,
        tol_flat,
        tol,
        pass,
        conditions,
    })
}

/// `Q̂_S = γ* - U^{Q,S}` on `targets`, rebuilt from the droplet.
pub fn qhat_of(d: &Droplet, targets: &RegionMask) -> Result<ScalarField> {
    let mut u = field::log_potential(&d.density, &d.mask, targets)?;
    for k in targets.iter() {
        u.values[k] = d.robin - u.values[k];
    }
    Ok(u)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominationReport {
    pub dominated: bool,
    /// Largest `Q̂_{S₁} - Q` over `S₂`.
    pub worst: Option<NodeValue>,
    pub tol: f64,
}

/// `S₁ ≺ S₂` iff `Q̂_{S₁} ≤ Q` on `S₂`; checked nodewise up to `tol`.
/// On failure `worst` is the largest violation.
pub fn check_domination(s1: &Droplet, s2: &Droplet, q: &ScalarField, tol: f64) -> Result<DominationReport> {
    s1.mask.grid.check_same(&s2.mask.grid, "check_domination")?;
    if s1.potential_id != s2.potential_id {
        return Err(Error::Precondition(format!(
            "droplets come from different potentials ({} vs {})",
            s1.potential_id, s2.potential_id
        )));
    }
    if !s1.mask.is_subset_of(&s2.mask.dilate(1)) {
        return Err(Error::Precondition(format!(
            "S₁ is not contained in S₂ ({} nodes outside the 1-cell dilation)",
            s1.mask.excess_over(&s2.mask.dilate(1))
        )));
    }
    let qhat = qhat_of(s1, &s2.mask)?;
    let g = q.grid;
    let mut worst: Option<NodeValue> = None;
    for k in s2.mask.iter() {
        let v = qhat.values[k] - q.values[k];
        if worst.is_none_or(|w| v > w.value) {
            worst = Some(NodeValue::at(&g, k, v));
        }
    }
    Ok(DominationReport {
        dominated: worst.is_none_or(|w| w.value <= tol),
        worst,
        tol,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub pass: bool,
    /// Largest `Q̂_{S₂} - Q̂_{S₁}` over the hull of `S₁`.
    pub worst_excess: f64,
    /// Largest `|Q̂_{S₂} - Q̂_{S₁}|` over `S₁`.
    pub worst_gap_on_s1: f64,
}

/// For `S₁ ⊆ S₂`: `Q̂_{S₂} ≤ Q̂_{S₁}` on the hull of `S₁`, with equality on `S₁`.
pub fn comparison_principle(s1: &Droplet, s2: &Droplet, tol: f64) -> Result<ComparisonReport> {
    let hull = field::polynomial_hull(&s1.mask)?;
    let a = qhat_of(s1, &hull)?;
    let b = qhat_of(s2, &hull)?;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_gap_on_s1 = 0.0f64;
    for k in hull.iter() {
        let d = b.values[k] - a.values[k];
        worst_excess = worst_excess.max(d);
        if s1.mask.contains(k) {
            worst_gap_on_s1 = worst_gap_on_s1.max(d.abs());
        }
    }
    Ok(ComparisonReport {
        pass: worst_excess <= tol && worst_gap_on_s1 <= tol,
        worst_excess,
        worst_gap_on_s1,
    })
}

/// Nodes of `S₂∖S₁` inside the hull of `S₁`, beyond a 1-cell band around `S₁`.
pub fn hole_growth(s1: &RegionMask, s2: &RegionMask) -> Result<usize> {
    let hull = field::polynomial_hull(s1)?;
    let grown = s2.difference(&s1.dilate(1))?;
    Ok(grown.intersection(&hull)?.count())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HullInclusionReport {
    pub pass: bool,
    /// Fraction of hull-boundary nodes inside the 1-cell dilation of `S_t`.
    pub fraction: f64,
    pub boundary_nodes: usize,
    pub first_missing: Option<NodeValue>,
}

/// `∂ Phull(S*_{t₀}) ⊂ S_t`, up to one cell.
pub fn hull_boundary_inclusion(s_star_t0: &RegionMask, s_t: &RegionMask) -> Result<HullInclusionReport> {
    s_star_t0.grid.check_same(&s_t.grid, "hull_boundary_inclusion")?;
    let boundary = field::polynomial_hull(s_star_t0)?.boundary();
    let target = s_t.dilate(1);
    let total = boundary.count();
    let missing = boundary.difference(&target)?;
    let g = s_t.grid;
    let fraction = if total == 0 {
        1.0
    } else {
        (total - missing.count()) as f64 / total as f64
    };
    let first_missing = missing.iter().next().map(|k| NodeValue::at(&g, k, 0.0));
    Ok(HullInclusionReport {
        pass: missing.is_empty(),
        fraction,
        boundary_nodes: total,
        first_missing,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DbarReport {
    /// `None` when `S` has no interior nodes.
    pub max_modulus: Option<f64>,
    pub worst: Option<NodeValue>,
    pub interior_nodes: usize,
    /// `max_modulus ≤ c·h`.
    pub pass: Option<bool>,
}

/// Centered-difference `∂̄(U^{Q,S} + Q) = ½(∂ₓ + i∂ᵧ)(U^{Q,S} + Q)` on the
/// interior of `S`; on a droplet it vanishes up to O(h).
pub fn dbar_boundary_check(s: &RegionMask, q: &ScalarField, lapl_q: &ScalarField, c: f64) -> Result<DbarReport> {
    let g = q.grid;
    g.check_same(&s.grid, "dbar_boundary_check")?;
    let interior = s.interior();
    if interior.is_empty() {
        return Ok(DbarReport {
            max_modulus: None,
            worst: None,
            interior_nodes: 0,
            pass: None,
        });
    }
    let mut density = lapl_q.restricted_to(s)?;
    density.undefined = None;
    let f = obstacle::total_potential(&density, s, q, s)?;
    let nx = g.nx;
    let mut worst: Option<NodeValue> = None;
    for k in interior.iter() {
        let dx = (f.values[k + 1] - f.values[k - 1]) / (2.0 * g.h);
        let dy = (f.values[k + nx] - f.values[k - nx]) / (2.0 * g.h);
        let m = 0.5 * Complex64::new(dx, dy).norm();
        if worst.is_none_or(|w| m > w.value) {
            worst = Some(NodeValue::at(&g, k, m));
        }
    }
    let max = worst.map(|w| w.value);
    Ok(DbarReport {
        max_modulus: max,
        worst,
        interior_nodes: interior.count(),
        pass: max.map(|m| m <= c * g.h),
    })
}
