//! Uniform grids on a box in the plane, real fields and node sets on them,
//! and the discrete calculus everything else is built from.
//!
//! Conventions: area integrals use the normalized measure `dA = dvol₂/π`, and
//! the Laplacian is `Δ = ∂∂̄`, a quarter of the usual one. With these,
//! `Δ|z|² = 1` and `Δ log(1/|z|²) = -δ₀` as measures against `dA`.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible node count along either axis.
pub const MIN_NODES: usize = 16;

/// A uniform square-cell discretization of a box. Node `(i, j)` sits at
/// `(x0 + i·h, y0 + j·h)`; storage is row-major with `i` fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2D {
    pub fn new(x0: f64, y0: f64, h: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be positive, got {h}")));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::Config("grid corner must be finite".into()));
        }
        if nx < MIN_NODES || ny < MIN_NODES {
            return Err(Error::Config(format!(
                "grid needs at least {MIN_NODES} nodes per axis, got {nx}x{ny}"
            )));
        }
        Ok(Grid2D { x0, y0, h, nx, ny })
    }

    /// Square grid covering `[cx - R, cx + R] x [cy - R, cy + R]` (rounded out
    /// to whole cells) with a node exactly at the center.
    pub fn centered(center: (f64, f64), half_width: f64, h: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::Config(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if !(h > 0.0) {
            return Err(Error::Config(format!("grid spacing must be positive, got {h}")));
        }
        let half = (half_width / h - 1e-9).ceil() as usize;
        let n = 2 * half + 1;
        Grid2D::new(
            center.0 - half as f64 * h,
            center.1 - half as f64 * h,
            h,
            n,
            n,
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + i as f64 * self.h, self.y0 + j as f64 * self.h)
    }

    #[inline]
    pub fn point(&self, idx: usize) -> Complex64 {
        let (i, j) = self.ij(idx);
        let (x, y) = self.coord(i, j);
        Complex64::new(x, y)
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + (self.nx - 1) as f64 * self.h
    }

    pub fn y_max(&self) -> f64 {
        self.y0 + (self.ny - 1) as f64 * self.h
    }

    /// Node whose closed cell contains `z`, if any.
    pub fn nearest_node(&self, z: Complex64) -> Option<(usize, usize)> {
        let fi = ((z.re - self.x0) / self.h).round();
        let fj = ((z.im - self.y0) / self.h).round();
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return None;
        }
        Some((fi as usize, fj as usize))
    }

    /// Number of rings between the node and the outermost ring (0 on the ring).
    #[inline]
    pub fn ring_distance(&self, i: usize, j: usize) -> usize {
        i.min(j).min(self.nx - 1 - i).min(self.ny - 1 - j)
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        self.ring_distance(i, j) == 0
    }

    /// Cell area in the normalized measure `dA`.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.h * self.h / PI
    }

    pub(crate) fn check_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Config(format!("grid mismatch in {what}")))
        }
    }

    /// The four edge neighbors of an interior or boundary node that exist.
    pub(crate) fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> {
        let (i, j) = self.ij(idx);
        let nx = self.nx;
        let ny = self.ny;
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = idx - 1;
        }
        if i + 1 < nx {
            out[1] = idx + 1;
        }
        if j > 0 {
            out[2] = idx - nx;
        }
        if j + 1 < ny {
            out[3] = idx + nx;
        }
        out.into_iter().filter(|&k| k != usize::MAX)
    }
}

/// A real function sampled at every node of a grid.
///
/// Nodes listed in `undefined` carry no meaningful value (for example the
/// boundary ring of a discrete Laplacian); their stored value is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
    pub undefined: Option<Vec<bool>>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Config(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(ScalarField {
            grid,
            values,
            undefined: None,
        })
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
            undefined: None,
        }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Complex64) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        ScalarField {
            grid,
            values,
            undefined: None,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    #[inline]
    pub fn is_defined(&self, idx: usize) -> bool {
        self.undefined.as_ref().is_none_or(|u| !u[idx])
    }

    /// Pointwise product with the indicator of `mask`.
    pub fn restricted_to(&self, mask: &RegionMask) -> Result<ScalarField> {
        self.grid.check_same(&mask.grid, "restriction")?;
        let values = self
            .values
            .iter()
            .zip(&mask.members)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(ScalarField {
            grid: self.grid,
            values,
            undefined: None,
        })
    }

    /// `(min, max)` over the defined nodes of `mask`; `None` when there are none.
    pub fn range_on(&self, mask: &RegionMask) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in mask.iter() {
            if self.is_defined(k) {
                lo = lo.min(self.values[k]);
                hi = hi.max(self.values[k]);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Bilinear interpolation; `None` outside the grid box.
    pub fn bilinear(&self, z: Complex64) -> Option<f64> {
        let g = &self.grid;
        let fx = (z.re - g.x0) / g.h;
        let fy = (z.im - g.y0) / g.h;
        let eps = 1e-9;
        if fx < -eps || fy < -eps || fx > (g.nx - 1) as f64 + eps || fy > (g.ny - 1) as f64 + eps {
            return None;
        }
        let i = (fx.floor().max(0.0) as usize).min(g.nx - 2);
        let j = (fy.floor().max(0.0) as usize).min(g.ny - 2);
        let s = (fx - i as f64).clamp(0.0, 1.0);
        let t = (fy - j as f64).clamp(0.0, 1.0);
        let v00 = self.get(i, j);
        let v10 = self.get(i + 1, j);
        let v01 = self.get(i, j + 1);
        let v11 = self.get(i + 1, j + 1);
        Some((1.0 - s) * (1.0 - t) * v00 + s * (1.0 - t) * v10 + (1.0 - s) * t * v01 + s * t * v11)
    }
}

/// A set of nodes, read as the union of the closed cells centered at them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub grid: Grid2D,
    pub members: Vec<bool>,
}

// Grid coordinates are validated finite, so equality is reflexive.
impl Eq for Grid2D {}

impl RegionMask {
    pub fn new(grid: Grid2D, members: Vec<bool>) -> Result<Self> {
        if members.len() != grid.len() {
            return Err(Error::Config(format!(
                "mask has {} entries for a {}x{} grid",
                members.len(),
                grid.nx,
                grid.ny
            )));
        }
        Ok(RegionMask { grid, members })
    }

    pub fn empty(grid: Grid2D) -> Self {
        RegionMask {
            grid,
            members: vec![false; grid.len()],
        }
    }

    pub fn full(grid: Grid2D) -> Self {
        RegionMask {
            grid,
            members: vec![true; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(Complex64) -> bool) -> Self {
        let members = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        RegionMask { grid, members }
    }

    /// Nodes with `|z - center| ≤ radius`.
    pub fn disk(grid: Grid2D, center: Complex64, radius: f64) -> Self {
        Self::from_fn(grid, |z| (z - center).norm() <= radius + 1e-12)
    }

    /// Nodes with `inner ≤ |z - center| ≤ outer`.
    pub fn annulus(grid: Grid2D, center: Complex64, inner: f64, outer: f64) -> Self {
        Self::from_fn(grid, |z| {
            let r = (z - center).norm();
            r >= inner - 1e-12 && r <= outer + 1e-12
        })
    }

    /// Every node except the outermost ring.
    pub fn interior_of_grid(grid: Grid2D) -> Self {
        let members = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.ij(k);
                !grid.is_boundary(i, j)
            })
            .collect();
        RegionMask { grid, members }
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    /// Member indices in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| m.then_some(k))
    }

    fn zip_with(&self, other: &RegionMask, f: impl Fn(bool, bool) -> bool) -> Result<RegionMask> {
        self.grid.check_same(&other.grid, "mask operation")?;
        let members = self
            .members
            .iter()
            .zip(&other.members)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(RegionMask {
            grid: self.grid,
            members,
        })
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &RegionMask) -> Result<RegionMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &RegionMask) -> Result<RegionMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> RegionMask {
        RegionMask {
            grid: self.grid,
            members: self.members.iter().map(|&m| !m).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.grid == other.grid
            && self
                .members
                .iter()
                .zip(&other.members)
                .all(|(&a, &b)| !a || b)
    }

    /// Nodes of `self` outside `other`.
    pub fn excess_over(&self, other: &RegionMask) -> usize {
        self.members
            .iter()
            .zip(&other.members)
            .filter(|(&a, &b)| a && !b)
            .count()
    }

    /// Dilation by `cells` in the sup-norm (a `(2c+1)²` square structuring element).
    pub fn dilate(&self, cells: usize) -> RegionMask {
        if cells == 0 {
            return self.clone();
        }
        let g = self.grid;
        let c = cells as isize;
        // separable: rows then columns
        let mut tmp = vec![false; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                if self.members[g.index(i, j)] {
                    let lo = (i as isize - c).max(0) as usize;
                    let hi = ((i as isize + c) as usize).min(g.nx - 1);
                    for ii in lo..=hi {
                        tmp[g.index(ii, j)] = true;
                    }
                }
            }
        }
        let mut out = vec![false; g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                if tmp[g.index(i, j)] {
                    let lo = (j as isize - c).max(0) as usize;
                    let hi = ((j as isize + c) as usize).min(g.ny - 1);
                    for jj in lo..=hi {
                        out[g.index(i, jj)] = true;
                    }
                }
            }
        }
        RegionMask {
            grid: g,
            members: out,
        }
    }

    /// Members with a 4-neighbor outside the set (grid edge counts as outside).
    pub fn boundary(&self) -> RegionMask {
        let g = self.grid;
        let members = (0..g.len())
            .map(|k| {
                if !self.members[k] {
                    return false;
                }
                let (i, j) = g.ij(k);
                g.is_boundary(i, j) || g.neighbors4(k).any(|n| !self.members[n])
            })
            .collect();
        RegionMask { grid: g, members }
    }

    /// Members whose four neighbors are all members.
    pub fn interior(&self) -> RegionMask {
        let g = self.grid;
        let members = (0..g.len())
            .map(|k| {
                if !self.members[k] {
                    return false;
                }
                let (i, j) = g.ij(k);
                !g.is_boundary(i, j) && g.neighbors4(k).all(|n| self.members[n])
            })
            .collect();
        RegionMask { grid: g, members }
    }

    /// Smallest ring distance of any member (`None` for the empty set).
    pub fn min_ring_distance(&self) -> Option<usize> {
        self.iter()
            .map(|k| {
                let (i, j) = self.grid.ij(k);
                self.grid.ring_distance(i, j)
            })
            .min()
    }

    /// Inclusive node bounding box `(i_min, j_min, i_max, j_max)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for k in self.iter() {
            let (i, j) = self.grid.ij(k);
            bb = Some(match bb {
                None => (i, j, i, j),
                Some((a, b, c, d)) => (a.min(i), b.min(j), c.max(i), d.max(j)),
            });
        }
        bb
    }

    /// Shift by a lattice vector; fails if a member would leave the grid.
    pub fn translate(&self, di: isize, dj: isize) -> Result<RegionMask> {
        let g = self.grid;
        let mut out = vec![false; g.len()];
        for k in self.iter() {
            let (i, j) = g.ij(k);
            let ni = i as isize + di;
            let nj = j as isize + dj;
            if ni < 0 || nj < 0 || ni >= g.nx as isize || nj >= g.ny as isize {
                return Err(Error::Precondition(
                    "translated mask leaves the grid".into(),
                ));
            }
            out[g.index(ni as usize, nj as usize)] = true;
        }
        Ok(RegionMask {
            grid: g,
            members: out,
        })
    }

    /// Hausdorff distance (in plane units) between the node sets.
    pub fn hausdorff_to(&self, other: &RegionMask) -> Result<f64> {
        self.grid.check_same(&other.grid, "hausdorff distance")?;
        let a: Vec<Complex64> = self.iter().map(|k| self.grid.point(k)).collect();
        let b: Vec<Complex64> = other.iter().map(|k| other.grid.point(k)).collect();
        if a.is_empty() || b.is_empty() {
            return Ok(if a.is_empty() && b.is_empty() {
                0.0
            } else {
                f64::INFINITY
            });
        }
        let directed = |from: &[Complex64], to: &[Complex64]| {
            from.par_iter()
                .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .reduce(|| 0.0, f64::max)
        };
        Ok(directed(&a, &b).max(directed(&b, &a)))
    }
}

/// `∫_m f dA` by the midpoint rule: `Σ_{k ∈ m} f_k · h²/π`.
pub fn integrate_da(f: &ScalarField, m: &RegionMask) -> Result<f64> {
    f.grid.check_same(&m.grid, "integrate_dA")?;
    let sum: f64 = f
        .values
        .iter()
        .zip(&m.members)
        .filter(|(_, &inside)| inside)
        .map(|(&v, _)| v)
        .sum();
    Ok(sum * f.grid.cell_area())
}

/// Five-point `∂∂̄`: `(f_E + f_W + f_N + f_S - 4 f_C) / (4h²)` on interior
/// nodes; the boundary ring is marked undefined.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let scale = 1.0 / (4.0 * g.h * g.h);
    let mut values = vec![0.0; g.len()];
    let mut undefined = vec![false; g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.index(i, j);
            if g.is_boundary(i, j) {
                undefined[k] = true;
                continue;
            }
            let v = f.values[k + 1] + f.values[k - 1] + f.values[k + g.nx] + f.values[k - g.nx]
                - 4.0 * f.values[k];
            values[k] = v * scale;
        }
    }
    ScalarField {
        grid: g,
        values,
        undefined: Some(undefined),
    }
}

/// Mean of `log|η|` over the unit square centered at the origin.
///
/// Evaluated once by a midpoint rule on a quadrant; the cell-averaged kernel
/// for a square of side `h` is then `log r_eff = log h + unit_cell_log_mean()`.
pub fn unit_cell_log_mean() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        // The integrand is symmetric in both axes; integrate over [0, 1/2]².
        let n = 2000usize;
        let d = 0.5 / n as f64;
        let mut total = 0.0;
        for a in 0..n {
            let x = (a as f64 + 0.5) * d;
            let mut row = 0.0;
            for b in 0..n {
                let y = (b as f64 + 0.5) * d;
                row += 0.5 * (x * x + y * y).ln();
            }
            total += row;
        }
        total * d * d / 0.25
    })
}

/// `log r_eff` for cells of side `h`.
pub fn log_r_eff(h: f64) -> f64 {
    h.ln() + unit_cell_log_mean()
}

/// Translation-invariant kernel `log(1/|ξ-η|²)` tabulated by lattice offset.
pub(crate) struct LogKernelTable {
    nx: usize,
    ny: usize,
    width: usize,
    table: Vec<f64>,
}

impl LogKernelTable {
    pub(crate) fn new(grid: &Grid2D) -> Self {
        let width = 2 * grid.nx - 1;
        let height = 2 * grid.ny - 1;
        let h2 = grid.h * grid.h;
        let self_value = -2.0 * log_r_eff(grid.h);
        let mut table = vec![0.0; width * height];
        for b in 0..height {
            let dj = b as f64 - (grid.ny - 1) as f64;
            for a in 0..width {
                let di = a as f64 - (grid.nx - 1) as f64;
                let r2 = di * di + dj * dj;
                table[b * width + a] = if r2 == 0.0 {
                    self_value
                } else {
                    -(h2 * r2).ln()
                };
            }
        }
        LogKernelTable {
            nx: grid.nx,
            ny: grid.ny,
            width,
            table,
        }
    }

    #[inline]
    pub(crate) fn get(&self, di: isize, dj: isize) -> f64 {
        let a = (di + self.nx as isize - 1) as usize;
        let b = (dj + self.ny as isize - 1) as usize;
        self.table[b * self.width + a]
    }
}

/// Weighted point sources `(i, j, weight)` in row-major order.
pub(crate) fn sources(density: &ScalarField, support: &RegionMask) -> Vec<(isize, isize, f64)> {
    let g = density.grid;
    let area = g.cell_area();
    support
        .iter()
        .filter(|&k| density.values[k] != 0.0)
        .map(|k| {
            let (i, j) = g.ij(k);
            (i as isize, j as isize, density.values[k] * area)
        })
        .collect()
}

pub(crate) fn potential_at(
    table: &LogKernelTable,
    sources: &[(isize, isize, f64)],
    i: usize,
    j: usize,
) -> f64 {
    let (i, j) = (i as isize, j as isize);
    sources
        .iter()
        .map(|&(si, sj, w)| w * table.get(i - si, j - sj))
        .sum()
}

/// `U(ξ) = ∫_support log(1/|ξ-η|²) density(η) dA(η)` at every target node.
///
/// Direct summation in a fixed order per target, so the result does not
/// depend on the number of worker threads. The self-cell uses the
/// cell-averaged kernel `log(1/r_eff²)`. Non-target nodes are left undefined.
pub fn log_potential(
    density: &ScalarField,
    support: &RegionMask,
    targets: &RegionMask,
) -> Result<ScalarField> {
    density.grid.check_same(&support.grid, "log_potential support")?;
    density.grid.check_same(&targets.grid, "log_potential targets")?;
    let g = density.grid;
    let srcs = sources(density, support);
    let undefined = if targets.members.iter().all(|&m| m) {
        None
    } else {
        Some(targets.members.iter().map(|&m| !m).collect())
    };
    if srcs.is_empty() {
        log::warn!("log_potential: empty support, returning the zero field");
        return Ok(ScalarField {
            grid: g,
            values: vec![0.0; g.len()],
            undefined,
        });
    }
    let table = LogKernelTable::new(&g);
    let target_idx: Vec<usize> = targets.iter().collect();
    let computed: Vec<f64> = target_idx
        .par_iter()
        .map(|&k| {
            let (i, j) = g.ij(k);
            potential_at(&table, &srcs, i, j)
        })
        .collect();
    let mut values = vec![0.0; g.len()];
    for (&k, v) in target_idx.iter().zip(computed) {
        values[k] = v;
    }
    Ok(ScalarField {
        grid: g,
        values,
        undefined,
    })
}

/// 4-connected components, largest first (ties by first node in row-major order).
pub fn connected_components(m: &RegionMask) -> Vec<RegionMask> {
    let g = m.grid;
    let mut label = vec![usize::MAX; g.len()];
    let mut comps: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    let mut queue = VecDeque::new();
    for start in m.iter() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut nodes = Vec::new();
        label[start] = id;
        queue.push_back(start);
        while let Some(k) = queue.pop_front() {
            nodes.push(k);
            for n in g.neighbors4(k) {
                if m.members[n] && label[n] == usize::MAX {
                    label[n] = id;
                    queue.push_back(n);
                }
            }
        }
        comps.push((nodes.len(), start, nodes));
    }
    comps.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    comps
        .into_iter()
        .map(|(_, _, nodes)| {
            let mut members = vec![false; g.len()];
            for k in nodes {
                members[k] = true;
            }
            RegionMask { grid: g, members }
        })
        .collect()
}

/// The mask together with every complement component that does not reach
/// the grid boundary (the bounded holes).
pub fn polynomial_hull(m: &RegionMask) -> Result<RegionMask> {
    let g = m.grid;
    if m.min_ring_distance() == Some(0) {
        return Err(Error::Precondition(
            "polynomial_hull: mask touches the grid boundary ring".into(),
        ));
    }
    // flood the complement from the boundary ring
    let mut outside = vec![false; g.len()];
    let mut queue = VecDeque::new();
    for k in 0..g.len() {
        let (i, j) = g.ij(k);
        if g.is_boundary(i, j) && !m.members[k] {
            outside[k] = true;
            queue.push_back(k);
        }
    }
    while let Some(k) = queue.pop_front() {
        for n in g.neighbors4(k) {
            if !m.members[n] && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        }
    }
    Ok(RegionMask {
        grid: g,
        members: outside.into_iter().map(|o| !o).collect(),
    })
}
