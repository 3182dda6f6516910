//! External fields `Q`, their Laplacians, growth diagnostics, and
//! localization to a closed set `Σ`.

use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, Grid2D, RegionMask, ScalarField};
use crate::io;

/// Builtin potential families plus grid-sampled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialFamily {
    /// `Q = |z|²`
    Quadratic,
    /// `Q = (1+c)x² + (1-c)y²`, `|c| < 1`
    AnisotropicQuadratic { c: f64 },
    /// `Q = |z|⁴/2 + a|z|²`
    Quartic { a: f64 },
    /// `Q = |z² - d²|² / (4d²)`, minima at `±d`, `ΔQ = |z|²/d²`
    TwoWell { d: f64 },
    /// A field dump (see [`crate::io`]); interpolated bilinearly off-grid.
    GridSampled { path: PathBuf },
}

/// Full description of an external field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub family: PotentialFamily,
    /// Extra-growth certificate `Q ≥ (1+delta0)·log(1+|z|²) - c0`.
    #[serde(default = "default_delta0")]
    pub delta0: f64,
    /// Computed from the field when absent.
    #[serde(default)]
    pub c0: Option<f64>,
    /// Largest admissible `t`; `None` means unbounded. Required for sampled fields.
    #[serde(default)]
    pub t_max: Option<f64>,
}

fn default_delta0() -> f64 {
    0.1
}

impl PotentialSpec {
    pub fn new(family: PotentialFamily) -> Self {
        PotentialSpec {
            family,
            delta0: default_delta0(),
            c0: None,
            t_max: None,
        }
    }

    pub fn quadratic() -> Self {
        Self::new(PotentialFamily::Quadratic)
    }

    pub fn anisotropic(c: f64) -> Self {
        Self::new(PotentialFamily::AnisotropicQuadratic { c })
    }

    pub fn quartic(a: f64) -> Self {
        Self::new(PotentialFamily::Quartic { a })
    }

    pub fn two_well(d: f64) -> Self {
        Self::new(PotentialFamily::TwoWell { d })
    }

    /// Parameter checks that need no I/O.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match &self.family {
            PotentialFamily::AnisotropicQuadratic { c } if !(c.abs() < 1.0) => {
                errs.push(format!("anisotropic_quadratic needs |c| < 1, got {c}"))
            }
            PotentialFamily::Quartic { a } if !a.is_finite() => {
                errs.push("quartic parameter a must be finite".into())
            }
            PotentialFamily::TwoWell { d } if !(*d > 0.0 && d.is_finite()) => {
                errs.push(format!("two_well needs d > 0, got {d}"))
            }
            PotentialFamily::GridSampled { .. } if self.t_max.is_none() => {
                errs.push("grid_sampled potentials must declare t_max".into())
            }
            _ => {}
        }
        if !(self.delta0 >= 0.0) {
            errs.push(format!("delta0 must be nonnegative, got {}", self.delta0));
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0) {
                errs.push(format!("t_max must be positive, got {t}"));
            }
        }
        errs
    }
}

impl fmt::Display for PotentialFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialFamily::Quadratic => write!(f, "quadratic"),
            PotentialFamily::AnisotropicQuadratic { c } => write!(f, "anisotropic_quadratic(c={c})"),
            PotentialFamily::Quartic { a } => write!(f, "quartic(a={a})"),
            PotentialFamily::TwoWell { d } => write!(f, "two_well(d={d})"),
            PotentialFamily::GridSampled { path } => write!(f, "grid_sampled({})", path.display()),
        }
    }
}

/// A ready-to-evaluate external field.
#[derive(Debug, Clone)]
pub struct Potential {
    pub spec: PotentialSpec,
    sampled: Option<ScalarField>,
    sampled_laplacian: Option<ScalarField>,
    c0: f64,
}

impl Potential {
    pub fn from_spec(spec: &PotentialSpec) -> Result<Self> {
        let errs = spec.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs.join("; ")));
        }
        let (sampled, sampled_laplacian) = match &spec.family {
            PotentialFamily::GridSampled { path } => {
                let (f, _) = io::read_field(path)?;
                if f.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format {
                        path: path.display().to_string(),
                        reason: "sampled potential has non-finite values".into(),
                    });
                }
                let lap = field::laplacian(&f);
                (Some(f), Some(lap))
            }
            _ => (None, None),
        };
        let mut pot = Potential {
            spec: spec.clone(),
            sampled,
            sampled_laplacian,
            c0: 0.0,
        };
        pot.c0 = match spec.c0 {
            Some(c) => c,
            None => pot.fitted_c0(),
        };
        Ok(pot)
    }

    pub fn id(&self) -> String {
        self.spec.family.to_string()
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn delta0(&self) -> f64 {
        self.spec.delta0
    }

    pub fn t_max(&self) -> Option<f64> {
        self.spec.t_max
    }

    /// `Q(z)`; `+∞` outside the box of a sampled field.
    pub fn value(&self, z: Complex64) -> f64 {
        let (x, y) = (z.re, z.im);
        let r2 = z.norm_sqr();
        match &self.spec.family {
            PotentialFamily::Quadratic => r2,
            PotentialFamily::AnisotropicQuadratic { c } => (1.0 + c) * x * x + (1.0 - c) * y * y,
            PotentialFamily::Quartic { a } => 0.5 * r2 * r2 + a * r2,
            PotentialFamily::TwoWell { d } => {
                let w = z * z - d * d;
                w.norm_sqr() / (4.0 * d * d)
            }
            PotentialFamily::GridSampled { .. } => self
                .sampled
                .as_ref()
                .and_then(|f| f.bilinear(z))
                .unwrap_or(f64::INFINITY),
        }
    }

    /// Closed-form `ΔQ = ∂∂̄Q` for builtin families; `None` for sampled fields.
    pub fn laplacian_closed_form(&self, z: Complex64) -> Option<f64> {
        let r2 = z.norm_sqr();
        match &self.spec.family {
            PotentialFamily::Quadratic | PotentialFamily::AnisotropicQuadratic { .. } => Some(1.0),
            PotentialFamily::Quartic { a } => Some(2.0 * r2 + a),
            PotentialFamily::TwoWell { d } => Some(r2 / (d * d)),
            PotentialFamily::GridSampled { .. } => None,
        }
    }

    /// `ΔQ` at an arbitrary point (sampled fields interpolate the discrete Laplacian).
    pub fn laplacian(&self, z: Complex64) -> f64 {
        self.laplacian_closed_form(z).unwrap_or_else(|| {
            self.sampled_laplacian
                .as_ref()
                .and_then(|f| f.bilinear(z))
                .unwrap_or(0.0)
        })
    }

    /// Euclidean gradient `(∂ₓQ, ∂ᵧQ)` packed as `∂ₓQ + i∂ᵧQ = 2∂̄Q`.
    pub fn gradient(&self, z: Complex64) -> Complex64 {
        let (x, y) = (z.re, z.im);
        match &self.spec.family {
            PotentialFamily::Quadratic => 2.0 * z,
            PotentialFamily::AnisotropicQuadratic { c } => {
                Complex64::new(2.0 * (1.0 + c) * x, 2.0 * (1.0 - c) * y)
            }
            PotentialFamily::Quartic { a } => (2.0 * z.norm_sqr() + 2.0 * a) * z,
            PotentialFamily::TwoWell { d } => (z * z - d * d) * z.conj() / (d * d),
            PotentialFamily::GridSampled { .. } => {
                let e = self.sampled.as_ref().map_or(1e-4, |f| 1e-2 * f.grid.h);
                let dx = (self.value(z + e) - self.value(z - e)) / (2.0 * e);
                let dy = (self.value(z + Complex64::new(0.0, e))
                    - self.value(z - Complex64::new(0.0, e)))
                    / (2.0 * e);
                Complex64::new(dx, dy)
            }
        }
    }

    /// Smallest `c0` making the extra-growth certificate hold on a polar scan
    /// out to radius 200 (builtins) or on the sample nodes.
    fn fitted_c0(&self) -> f64 {
        let lift = 1.0 + self.spec.delta0;
        let gap = |z: Complex64| lift * (1.0 + z.norm_sqr()).ln() - self.value(z);
        let worst = match &self.sampled {
            Some(f) => (0..f.grid.len())
                .map(|k| {
                    let z = f.grid.point(k);
                    lift * (1.0 + z.norm_sqr()).ln() - f.values[k]
                })
                .fold(f64::NEG_INFINITY, f64::max),
            None => {
                let mut worst = f64::NEG_INFINITY;
                for a in 0..720 {
                    let theta = a as f64 * PI / 360.0;
                    let dir = Complex64::from_polar(1.0, theta);
                    for b in 0..=4000 {
                        let r = 200.0 * (b as f64 / 4000.0).powi(2);
                        worst = worst.max(gap(dir * r));
                    }
                }
                worst
            }
        };
        // margin absorbs the scan resolution
        worst.max(0.0) + 1e-3
    }
}

/// Samples `Q` and `ΔQ` on the grid: closed-form Laplacians for builtin
/// families, the five-point Laplacian for sampled fields.
pub fn sample_potential(pot: &Potential, grid: &Grid2D) -> Result<(ScalarField, ScalarField)> {
    if let Some(src) = &pot.sampled {
        let q = if src.grid == *grid {
            src.clone()
        } else {
            let mut values = Vec::with_capacity(grid.len());
            for k in 0..grid.len() {
                let v = src.bilinear(grid.point(k)).ok_or_else(|| {
                    Error::Config("requested grid extends outside the sampled potential".into())
                })?;
                values.push(v);
            }
            ScalarField::new(*grid, values)?
        };
        let lap = field::laplacian(&q);
        return Ok((q, lap));
    }
    let q = ScalarField::from_fn(*grid, |z| pot.value(z));
    let lap = ScalarField::from_fn(*grid, |z| pot.laplacian(z));
    Ok((q, lap))
}

/// Max node error of the five-point Laplacian against the closed form,
/// divided by `h²`. `None` for sampled fields.
pub fn stencil_consistency(pot: &Potential, grid: &Grid2D) -> Option<f64> {
    pot.laplacian_closed_form(Complex64::new(0.0, 0.0))?;
    let q = ScalarField::from_fn(*grid, |z| pot.value(z));
    let disc = field::laplacian(&q);
    let worst = (0..grid.len())
        .filter(|&k| disc.is_defined(k))
        .map(|k| (disc.values[k] - pot.laplacian(grid.point(k))).abs())
        .fold(0.0, f64::max);
    let c = worst / (grid.h * grid.h);
    log::debug!("stencil consistency for {}: C = {c:.4}", pot.id());
    Some(c)
}

/// A node and the value a diagnostic attached to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

impl NodeValue {
    pub fn at(grid: &Grid2D, idx: usize, value: f64) -> Self {
        let (i, j) = grid.ij(idx);
        let (x, y) = grid.coord(i, j);
        NodeValue { i, j, x, y, value }
    }

    pub fn point(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub t: f64,
    pub pass: bool,
    pub growth_ok: bool,
    pub certificate_ok: bool,
    /// Smallest outward increment of `Q - t·log|z|²` across the outer rings.
    pub worst_growth: Option<NodeValue>,
    /// Smallest slack in `Q - (1+delta0)·log(1+|z|²) + c0`.
    pub worst_certificate: Option<NodeValue>,
    pub delta0: f64,
    pub c0: f64,
}

/// Checks that `Q - t·log|z|²` increases outward across the three outermost
/// node rings and that the extra-growth certificate holds at every node.
pub fn check_growth(pot: &Potential, grid: &Grid2D, t: f64) -> GrowthReport {
    let g = grid;
    let growth = |i: usize, j: usize| {
        let (x, y) = g.coord(i, j);
        let z = Complex64::new(x, y);
        pot.value(z) - t * z.norm_sqr().ln()
    };
    let mut worst_growth: Option<NodeValue> = None;
    let mut note = |idx: usize, v: f64| {
        if worst_growth.is_none_or(|w| v < w.value) {
            worst_growth = Some(NodeValue::at(g, idx, v));
        }
    };
    let (nx, ny) = (g.nx, g.ny);
    // (edge node, inward step) pairs for the edges whose outward normal moves
    // away from the origin
    let mut lines: Vec<(usize, usize, isize, isize)> = Vec::new();
    if g.x0 < 0.0 {
        lines.extend((0..ny).map(|j| (0, j, 1, 0)));
    }
    if g.x_max() > 0.0 {
        lines.extend((0..ny).map(|j| (nx - 1, j, -1, 0)));
    }
    if g.y0 < 0.0 {
        lines.extend((0..nx).map(|i| (i, 0, 0, 1)));
    }
    if g.y_max() > 0.0 {
        lines.extend((0..nx).map(|i| (i, ny - 1, 0, -1)));
    }
    for (i, j, di, dj) in lines {
        let step = |s: isize| ((i as isize + s * di) as usize, (j as isize + s * dj) as usize);
        let vals: Vec<f64> = (0..3)
            .map(|s| {
                let (a, b) = step(s);
                growth(a, b)
            })
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let inc = (vals[0] - vals[1]).min(vals[1] - vals[2]);
        note(g.index(i, j), inc);
    }
    let growth_ok = worst_growth.is_none_or(|w| w.value > 0.0);

    let lift = 1.0 + pot.delta0();
    let mut worst_cert: Option<NodeValue> = None;
    for k in 0..g.len() {
        let z = g.point(k);
        let slack = pot.value(z) - lift * (1.0 + z.norm_sqr()).ln() + pot.c0();
        if worst_cert.is_none_or(|w| slack < w.value) {
            worst_cert = Some(NodeValue::at(g, k, slack));
        }
    }
    let certificate_ok = worst_cert.is_none_or(|w| w.value >= 0.0);
    let within_t_max = pot.t_max().is_none_or(|tm| t <= tm);
    GrowthReport {
        t,
        pass: growth_ok && certificate_ok && within_t_max,
        growth_ok,
        certificate_ok,
        worst_growth,
        worst_certificate: worst_cert,
        delta0: pot.delta0(),
        c0: pot.c0(),
    }
}

/// The set `Σ` on which `Q` is kept; `Q = +∞` off it.
#[derive(Debug, Clone, PartialEq)]
pub enum Localization {
    All,
    Mask(RegionMask),
}

impl Localization {
    pub fn id(&self) -> String {
        match self {
            Localization::All => "all".into(),
            Localization::Mask(m) => match m.bbox() {
                Some((a, b, c, d)) => format!("mask[{} nodes, i {a}..={c}, j {b}..={d}]", m.count()),
                None => "mask[empty]".into(),
            },
        }
    }
}

/// `Q_Σ`: the field together with the nodes where `u ≤ Q` is imposed.
/// Nodes off `Σ` carry no constraint, which stands for `Q = +∞` there.
#[derive(Debug, Clone)]
pub struct LocalizedPotential {
    pub q: ScalarField,
    pub constrained: RegionMask,
}

pub fn localize(q: &ScalarField, loc: &Localization) -> Result<LocalizedPotential> {
    let constrained = match loc {
        Localization::All => RegionMask::full(q.grid),
        Localization::Mask(m) => {
            q.grid.check_same(&m.grid, "localize")?;
            if m.is_empty() {
                return Err(Error::Precondition("localization set is empty".into()));
            }
            m.clone()
        }
    };
    if !constrained.iter().any(|k| q.values[k].is_finite()) {
        return Err(Error::Precondition(
            "Q is not finite anywhere on the localization set".into(),
        ));
    }
    Ok(LocalizedPotential {
        q: q.clone(),
        constrained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(half: f64, h: f64) -> Grid2D {
        Grid2D::centered((0.0, 0.0), half, h).unwrap()
    }

    #[test]
    fn closed_form_laplacians() {
        let g = grid(2.0, 0.05);
        for spec in [PotentialSpec::quadratic(), PotentialSpec::anisotropic(0.5)] {
            let pot = Potential::from_spec(&spec).unwrap();
            let (_, lap) = sample_potential(&pot, &g).unwrap();
            assert!(lap.values.iter().all(|&v| v == 1.0));
        }
        let pot = Potential::from_spec(&PotentialSpec::quartic(0.0)).unwrap();
        let (_, lap) = sample_potential(&pot, &g).unwrap();
        for k in 0..g.len() {
            assert_abs_diff_eq!(lap.values[k], 2.0 * g.point(k).norm_sqr(), epsilon = 1e-12);
        }
    }

    #[test]
    fn stencil_consistency_is_second_order() {
        for spec in [
            PotentialSpec::quadratic(),
            PotentialSpec::anisotropic(-0.3),
            PotentialSpec::quartic(0.5),
            PotentialSpec::two_well(1.0),
        ] {
            let pot = Potential::from_spec(&spec).unwrap();
            let c1 = stencil_consistency(&pot, &grid(2.0, 0.04)).unwrap();
            let c2 = stencil_consistency(&pot, &grid(2.0, 0.02)).unwrap();
            // the constant stays bounded as h halves
            assert!(c1 < 5.0 && c2 < 5.0, "{}: {c1} {c2}", pot.id());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let z = Complex64::new(0.37, -0.81);
        let e = 1e-6;
        for spec in [
            PotentialSpec::quadratic(),
            PotentialSpec::anisotropic(0.4),
            PotentialSpec::quartic(-0.2),
            PotentialSpec::two_well(0.8),
        ] {
            let pot = Potential::from_spec(&spec).unwrap();
            let gx = (pot.value(z + e) - pot.value(z - e)) / (2.0 * e);
            let i = Complex64::new(0.0, e);
            let gy = (pot.value(z + i) - pot.value(z - i)) / (2.0 * e);
            let g = pot.gradient(z);
            assert_abs_diff_eq!(g.re, gx, epsilon = 1e-6);
            assert_abs_diff_eq!(g.im, gy, epsilon = 1e-6);
        }
    }

    #[test]
    fn two_well_shape() {
        let pot = Potential::from_spec(&PotentialSpec::two_well(1.0)).unwrap();
        assert_eq!(pot.value(Complex64::new(1.0, 0.0)), 0.0);
        assert_eq!(pot.value(Complex64::new(-1.0, 0.0)), 0.0);
        assert!(pot.value(Complex64::new(0.0, 0.0)) > 0.0);
    }

    #[test]
    fn growth_checks() {
        let g = grid(3.0, 0.05);
        let quad = Potential::from_spec(&PotentialSpec::quadratic()).unwrap();
        assert!(check_growth(&quad, &g, 1.0).pass);
        let r = check_growth(&quad, &g, 1e6);
        assert!(!r.pass && !r.growth_ok);
        assert!(r.worst_growth.is_some());
        let tw = Potential::from_spec(&PotentialSpec::two_well(1.0)).unwrap();
        let g25 = grid(2.5, 0.05);
        let rep = check_growth(&tw, &g25, 0.1);
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn quadratic_growth_predicate() {
        // R² - t·log R² increasing at R  <=>  2R - 2t/R > 0  <=>  t < R²
        let quad = Potential::from_spec(&PotentialSpec::quadratic()).unwrap();
        let g = grid(2.0, 0.05);
        let r = g.x_max();
        for t in [0.5, 1.0, 2.0, 3.0, 3.8] {
            let expect = t < (r - 2.0 * g.h).powi(2);
            assert_eq!(check_growth(&quad, &g, t).growth_ok, expect, "t = {t}");
        }
        assert!(!check_growth(&quad, &g, 4.5).growth_ok);
    }

    #[test]
    fn localization_marks_unconstrained_nodes() {
        let g = grid(2.5, 0.05);
        let pot = Potential::from_spec(&PotentialSpec::quadratic()).unwrap();
        let (q, _) = sample_potential(&pot, &g).unwrap();
        let all = localize(&q, &Localization::All).unwrap();
        assert_eq!(all.constrained.count(), g.len());
        let disk = RegionMask::disk(g, Complex64::new(0.0, 0.0), 1.0);
        let loc = localize(&q, &Localization::Mask(disk)).unwrap();
        let (i, j) = g.nearest_node(Complex64::new(2.0, 0.0)).unwrap();
        assert!(!loc.constrained.contains(g.index(i, j)));
        let left = RegionMask::from_fn(g, |z| z.re <= 0.0);
        let loc = localize(&q, &Localization::Mask(left)).unwrap();
        let (i, j) = g.nearest_node(Complex64::new(1.0, 0.0)).unwrap();
        assert!(!loc.constrained.contains(g.index(i, j)));
        assert!(localize(&q, &Localization::Mask(RegionMask::empty(g))).is_err());
    }

    #[test]
    fn sampled_potential_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(2.0, 0.05);
        let q = ScalarField::from_fn(g, |z| z.norm_sqr());
        io::write_field(dir.path().join("q"), &q, "Q").unwrap();
        let mut spec = PotentialSpec::new(PotentialFamily::GridSampled {
            path: dir.path().join("q"),
        });
        assert!(Potential::from_spec(&spec).is_err(), "t_max is required");
        spec.t_max = Some(2.0);
        let pot = Potential::from_spec(&spec).unwrap();
        let (qs, lap) = sample_potential(&pot, &g).unwrap();
        assert_eq!(qs, q);
        let (i, j) = g.nearest_node(Complex64::new(0.3, 0.2)).unwrap();
        assert_abs_diff_eq!(lap.get(i, j), 1.0, epsilon = 1e-9);
        assert_eq!(pot.value(Complex64::new(5.0, 0.0)), f64::INFINITY);

        let missing = PotentialSpec {
            t_max: Some(1.0),
            ..PotentialSpec::new(PotentialFamily::GridSampled {
                path: dir.path().join("nope"),
            })
        };
        assert!(matches!(Potential::from_spec(&missing), Err(Error::Io { .. })));
    }
}
