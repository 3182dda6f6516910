//! The β = 2 gas as a determinantal process: orthonormal polynomials in
//! `L²(e^{-mQ} dvol₂)`, the reproducing kernel `K_n`, exact intensities and
//! the partition function `Z = n! ∏ h_j`.
//!
//! Intensities here are per `dvol₂`; multiply by `π` for per-`dA` values.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid2D, ScalarField};
use crate::potential::{Potential, PotentialFamily};

pub const DEFAULT_TOL_GS: f64 = 1e-8;

/// Orthonormal `p_0..p_{n-1}`, stored through the full recurrence
/// `s_j p_j = z p_{j-1} - Σ_{i<j} r_{ji} p_i` (`p_0 = 1/s_0`),
/// which evaluates stably at any point.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    pub n: usize,
    pub m: f64,
    pub potential: Potential,
    pub grid: Grid2D,
    s: Vec<f64>,
    r: Vec<Vec<Complex64>>,
    /// `log h_j`, `h_j` the squared norm of the monic `j`-th polynomial.
    pub log_norms: Vec<f64>,
    /// Monomial coefficients, row `j` = `p_j`.
    pub coeffs: Vec<Vec<Complex64>>,
    /// Max entry of `|G - I|` for the Gram matrix on the half-cell
    /// staggered grid.
    pub gram_residual: f64,
    pub n_max: usize,
}

/// Largest degree the grid resolves: the region where `e^{-mQ}` exceeds
/// `1e-16` of its peak must carry at least six cells per oscillation of
/// `z^{n-1}` around its outer radius.
pub fn n_max(pot: &Potential, m: f64, grid: &Grid2D) -> usize {
    let (_, radius) = weight_support(pot, m, grid);
    (std::f64::consts::TAU * radius / (6.0 * grid.h)).floor() as usize + 1
}

fn weight_support(pot: &Potential, m: f64, grid: &Grid2D) -> (Complex64, f64) {
    let logw: Vec<f64> = (0..grid.len()).map(|k| -m * pot.value(grid.point(k))).collect();
    let (kmax, &lmax) = logw
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty grid");
    let c = grid.point(kmax);
    let cut = lmax + 1e-16f64.ln();
    let radius = logw
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > cut)
        .map(|(k, _)| (grid.point(k) - c).norm())
        .fold(0.0, f64::max);
    (c, radius)
}

fn staggered(grid: &Grid2D) -> Result<Grid2D> {
    Grid2D::new(
        grid.x0 + 0.5 * grid.h,
        grid.y0 + 0.5 * grid.h,
        grid.h,
        grid.nx - 1,
        grid.ny - 1,
    )
}

/// `(z, e^{-mQ(z)} h²)` at every node.
fn nodes(pot: &Potential, m: f64, grid: &Grid2D) -> (Vec<Complex64>, Vec<f64>) {
    let h2 = grid.h * grid.h;
    (0..grid.len())
        .map(|k| {
            let z = grid.point(k);
            let w = (-m * pot.value(z)).exp() * h2;
            (z, if w.is_finite() { w } else { 0.0 })
        })
        .unzip()
}

fn inner(a: &[Complex64], b: &[Complex64], w: &[f64]) -> Complex64 {
    a.iter().zip(b).zip(w).map(|((x, y), &w)| x * y.conj() * w).sum()
}

/// Modified Gram–Schmidt with one reorthogonalization pass over the
/// midpoint rule `⟨f, g⟩ = Σ f ḡ e^{-mQ} h²`. Candidates are `z p_{j-1}`
/// rather than raw monomials.
pub fn gram_schmidt(pot: &Potential, n: usize, m: f64, grid: &Grid2D, tol_gs: f64) -> Result<OrthoBasis> {
    if !(m > 0.0) {
        return Err(Error::Precondition(format!("m must be positive, got {m}")));
    }
    if grid.nx < 3 || grid.ny < 3 {
        return Err(Error::Precondition("quadrature grid needs at least 3×3 nodes".into()));
    }
    let nm = n_max(pot, m, grid);
    if n > nm {
        return Err(Error::Resolution(format!(
            "n = {n} exceeds n_max = {nm} for h = {}; refine the grid or lower n",
            grid.h
        )));
    }
    check_truncation(pot, n, m, grid)?;

    let (z, w) = nodes(pot, m, grid);
    let mut vals: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut r: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut log_norms = Vec::with_capacity(n);
    let mut coeffs: Vec<Vec<Complex64>> = Vec::with_capacity(n);
    let mut log_kappa = 0.0;
    for j in 0..n {
        let mut v: Vec<Complex64> = if j == 0 {
            vec![Complex64::new(1.0, 0.0); z.len()]
        } else {
            vals[j - 1].iter().zip(&z).map(|(p, z)| p * z).collect()
        };
        let mut rj = vec![Complex64::new(0.0, 0.0); j];
        for _pass in 0..2 {
            for i in 0..j {
                let c = inner(&v, &vals[i], &w);
                rj[i] += c;
                for (vk, pk) in v.iter_mut().zip(&vals[i]) {
                    *vk -= c * pk;
                }
            }
        }
        let norm = inner(&v, &v, &w).re.sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Resolution(format!("Gram–Schmidt broke down at degree {j}")));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        // leading coefficient κ_j = κ_{j-1}/s_j, h_j = κ_j^{-2}
        log_kappa -= norm.ln();
        log_norms.push(-2.0 * log_kappa);

        let mut c = vec![Complex64::new(0.0, 0.0); j + 1];
        if j == 0 {
            c[0] = Complex64::new(1.0, 0.0);
        } else {
            c[1..].copy_from_slice(&coeffs[j - 1]);
            for (i, ri) in rj.iter().enumerate() {
                for (ck, pk) in c.iter_mut().zip(&coeffs[i]) {
                    *ck -= ri * pk;
                }
            }
        }
        c.iter_mut().for_each(|x| *x /= norm);
        coeffs.push(c);
        vals.push(v);
        s.push(norm);
        r.push(rj);
    }
    let mut basis = OrthoBasis {
        n,
        m,
        potential: pot.clone(),
        grid: *grid,
        s,
        r,
        log_norms,
        coeffs,
        gram_residual: 0.0,
        n_max: nm,
    };
    basis.gram_residual = basis.staggered_gram_residual()?;
    if basis.gram_residual > tol_gs {
        return Err(Error::Resolution(format!(
            "Gram residual {:.3e} on the staggered grid exceeds {tol_gs:.1e}; refine the grid or lower n",
            basis.gram_residual
        )));
    }
    Ok(basis)
}

/// The weighted top monomial must be negligible on the box edge.
fn check_truncation(pot: &Potential, n: usize, m: f64, grid: &Grid2D) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    let (c, _) = weight_support(pot, m, grid);
    let deg = 2.0 * (n - 1) as f64;
    let logf = |k: usize| {
        let z = grid.point(k);
        let d = (z - c).norm().max(f64::MIN_POSITIVE);
        -m * pot.value(z) + deg * d.ln()
    };
    let peak = (0..grid.len()).map(logf).fold(f64::NEG_INFINITY, f64::max);
    let edge = (0..grid.len())
        .filter(|&k| {
            let (i, j) = grid.ij(k);
            grid.is_boundary(i, j)
        })
        .map(logf)
        .fold(f64::NEG_INFINITY, f64::max);
    if edge - peak > (1e-14f64).ln() {
        return Err(Error::Resolution(format!(
            "quadrature box truncates |z|^{} e^{{-mQ}}: edge/peak = {:.3e}; enlarge the box",
            deg,
            (edge - peak).exp()
        )));
    }
    Ok(())
}

impl OrthoBasis {
    /// `h_j`.
    pub fn norms(&self) -> Vec<f64> {
        self.log_norms.iter().map(|l| l.exp()).collect()
    }

    /// `p_0(z), …, p_{n-1}(z)`.
    pub fn eval(&self, z: Complex64) -> Vec<Complex64> {
        let mut p: Vec<Complex64> = Vec::with_capacity(self.n);
        for j in 0..self.n {
            let v = if j == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                let mut v = z * p[j - 1];
                for (ri, pi) in self.r[j].iter().zip(&p) {
                    v -= ri * pi;
                }
                v
            };
            p.push(v / self.s[j]);
        }
        p
    }

    fn weight(&self, z: Complex64) -> f64 {
        (-self.m * self.potential.value(z)).exp()
    }

    fn inside(&self, z: Complex64) -> bool {
        let g = &self.grid;
        z.re >= g.x0 && z.re <= g.x_max() && z.im >= g.y0 && z.im <= g.y_max()
    }

    fn require_inside(&self, z: Complex64) -> Result<()> {
        if self.inside(z) {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "point ({}, {}) lies outside the quadrature box",
                z.re, z.im
            )))
        }
    }

    /// `K_n(z, w) = Σ p_j(z) conj(p_j(w))`.
    pub fn kernel(&self, z: Complex64, w: Complex64) -> Complex64 {
        let a = self.eval(z);
        let b = self.eval(w);
        a.iter().zip(&b).map(|(x, y)| x * y.conj()).sum()
    }

    fn staggered_gram_residual(&self) -> Result<f64> {
        if self.n == 0 {
            return Ok(0.0);
        }
        let g = staggered(&self.grid)?;
        let (z, w) = nodes(&self.potential, self.m, &g);
        let n = self.n;
        let gram = z
            .par_iter()
            .zip(&w)
            .fold(
                || vec![Complex64::new(0.0, 0.0); n * n],
                |mut acc, (&z, &w)| {
                    if w > 0.0 {
                        let p = self.eval(z);
                        for a in 0..n {
                            for b in a..n {
                                acc[a * n + b] += p[a] * p[b].conj() * w;
                            }
                        }
                    }
                    acc
                },
            )
            .reduce(
                || vec![Complex64::new(0.0, 0.0); n * n],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    a
                },
            );
        let mut res: f64 = 0.0;
        for a in 0..n {
            for b in a..n {
                let target = if a == b { 1.0 } else { 0.0 };
                res = res.max((gram[a * n + b] - target).norm());
            }
        }
        Ok(res)
    }

    /// `Σ_w K(w,w) e^{-mQ(w)} h²` on the staggered grid; equals `n` up to
    /// quadrature error.
    pub fn trace(&self) -> Result<f64> {
        let g = staggered(&self.grid)?;
        let (z, w) = nodes(&self.potential, self.m, &g);
        Ok(z
            .par_iter()
            .zip(&w)
            .map(|(&z, &w)| if w > 0.0 { w * self.eval(z).iter().map(|p| p.norm_sqr()).sum::<f64>() } else { 0.0 })
            .sum())
    }

    /// Relative defect of `Σ_w K(z,w) K(w,z) e^{-mQ(w)} h² = K(z,z)`,
    /// summed over the staggered grid.
    pub fn reproducing_defect(&self, z: Complex64) -> Result<f64> {
        self.require_inside(z)?;
        let g = staggered(&self.grid)?;
        let (nodes_z, w) = nodes(&self.potential, self.m, &g);
        let pz = self.eval(z);
        let kzz: f64 = pz.iter().map(|p| p.norm_sqr()).sum();
        let s: f64 = nodes_z
            .par_iter()
            .zip(&w)
            .map(|(&u, &w)| {
                if w == 0.0 {
                    return 0.0;
                }
                let k: Complex64 = pz.iter().zip(self.eval(u)).map(|(a, b)| a * b.conj()).sum();
                k.norm_sqr() * w
            })
            .sum();
        Ok((s - kzz).abs() / kzz.max(f64::MIN_POSITIVE))
    }

    /// `{n, m, norms, coeffs}`; coefficient rows as `[re, im]` pairs.
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Dump<'a> {
            n: usize,
            m: f64,
            potential: &'a str,
            norms: Vec<f64>,
            log_norms: &'a [f64],
            coeffs: Vec<Vec<[f64; 2]>>,
            gram_residual: f64,
        }
        let path = path.as_ref();
        let id = self.potential.id();
        let dump = Dump {
            n: self.n,
            m: self.m,
            potential: &id,
            norms: self.norms(),
            log_norms: &self.log_norms,
            coeffs: self.coeffs.iter().map(|row| row.iter().map(|c| [c.re, c.im]).collect()).collect(),
            gram_residual: self.gram_residual,
        };
        let text = serde_json::to_string_pretty(&dump).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// `K_n(z,z) e^{-mQ(z)}`, the one-point intensity per `dvol₂`.
pub fn kernel_intensity(basis: &OrthoBasis, points: &[Complex64]) -> Result<Vec<f64>> {
    for &z in points {
        basis.require_inside(z)?;
    }
    Ok(points
        .par_iter()
        .map(|&z| basis.eval(z).iter().map(|p| p.norm_sqr()).sum::<f64>() * basis.weight(z))
        .collect())
}

/// One-point intensity per `dA` on every node of `grid`.
pub fn intensity_field(basis: &OrthoBasis, grid: &Grid2D) -> Result<ScalarField> {
    let pts: Vec<Complex64> = (0..grid.len()).map(|k| grid.point(k)).collect();
    let v = kernel_intensity(basis, &pts)?;
    ScalarField::new(*grid, v.into_iter().map(|x| std::f64::consts::PI * x).collect())
}

fn det(mut a: Vec<Complex64>, k: usize) -> Complex64 {
    let mut d = Complex64::new(1.0, 0.0);
    for c in 0..k {
        let piv = (c..k)
            .max_by(|&x, &y| a[x * k + c].norm().total_cmp(&a[y * k + c].norm()))
            .expect("nonempty");
        if a[piv * k + c].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if piv != c {
            for col in 0..k {
                a.swap(piv * k + col, c * k + col);
            }
            d = -d;
        }
        let p = a[c * k + c];
        d *= p;
        for row in c + 1..k {
            let f = a[row * k + c] / p;
            for col in c..k {
                let v = a[c * k + col];
                a[row * k + col] -= f * v;
            }
        }
    }
    d
}

/// `det[K_n(z_i, z_j)] e^{-m Σ Q(z_i)}`, the `k`-point intensity per
/// `dvol₂^k`, for `k ≤ 4`.
pub fn det_k(basis: &OrthoBasis, points: &[Complex64]) -> Result<f64> {
    let k = points.len();
    if k == 0 || k > 4 {
        return Err(Error::Precondition(format!("k-point intensities need 1 ≤ k ≤ 4, got {k}")));
    }
    for &z in points {
        basis.require_inside(z)?;
    }
    let p: Vec<Vec<Complex64>> = points.iter().map(|&z| basis.eval(z)).collect();
    let mut a = vec![Complex64::new(0.0, 0.0); k * k];
    for i in 0..k {
        for j in 0..k {
            a[i * k + j] = p[i].iter().zip(&p[j]).map(|(x, y)| x * y.conj()).sum();
        }
    }
    let w: f64 = points.iter().map(|&z| basis.weight(z)).product();
    Ok(det(a, k).re * w)
}

/// `log Z_{m,n} = log n! + Σ_{j<n} log h_j`.
pub fn partition_function_beta2(basis: &OrthoBasis) -> Result<f64> {
    if basis.log_norms.iter().any(|l| !l.is_finite()) {
        return Err(Error::Degenerate("basis has a non-positive norm".into()));
    }
    Ok(log_factorial(basis.n) + basis.log_norms.iter().sum::<f64>())
}

fn log_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Closed-form `log Z` for `Q = |z|²`: `h_j = π j!/m^{j+1}`.
pub fn quadratic_log_partition(n: usize, m: f64) -> f64 {
    let mut lf = 0.0;
    let mut s = 0.0;
    for j in 0..n {
        if j > 0 {
            lf += (j as f64).ln();
        }
        s += std::f64::consts::PI.ln() + lf - (j + 1) as f64 * m.ln();
    }
    log_factorial(n) + s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeEnergyRow {
    pub n: usize,
    pub m: f64,
    pub log_z: f64,
    /// `log Z/(n(n-1))`; absent for `n = 1`.
    pub f_n: Option<f64>,
    /// `-γ(Q)/2` where known in closed form.
    pub target: Option<f64>,
}

/// `F_n = log Z_{n,n}/(n(n-1))` along `n_list` (with `m = n`), either
/// from the closed-form Gaussian norms or from Gram–Schmidt on `grid`.
pub fn free_energy_check(
    pot: &Potential,
    n_list: &[usize],
    analytic_norms: bool,
    grid: Option<&Grid2D>,
    tol_gs: f64,
) -> Result<Vec<FreeEnergyRow>> {
    let quadratic = matches!(pot.spec.family, PotentialFamily::Quadratic);
    if analytic_norms && !quadratic {
        return Err(Error::Precondition("analytic norms exist only for the quadratic potential".into()));
    }
    let target = quadratic.then_some(-0.75);
    n_list
        .iter()
        .map(|&n| {
            if n < 1 {
                return Err(Error::Precondition("n must be at least 1".into()));
            }
            let m = n as f64;
            let log_z = if analytic_norms {
                quadratic_log_partition(n, m)
            } else {
                let g = grid.ok_or_else(|| Error::Precondition("Gram–Schmidt norms need a grid".into()))?;
                partition_function_beta2(&gram_schmidt(pot, n, m, g, tol_gs)?)?
            };
            Ok(FreeEnergyRow {
                n,
                m,
                log_z,
                f_n: (n >= 2).then(|| log_z / (n * (n - 1)) as f64),
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub k: usize,
    pub n: usize,
    pub tests: usize,
    /// Smallest `Γ_{n+1}^{(k)} - Γ_n^{(k)}` found.
    pub min_difference: f64,
    pub scale: f64,
    pub tol: f64,
    pub pass: bool,
}

/// `Γ_n^{(k)} ≤ Γ_{n+1}^{(k)}` at the given points (`k = 1`) or at `pairs`
/// random pairs drawn from them (`k = 2`). Tolerances are relative to the
/// largest `Γ_{n+1}` value seen: `1e-12` for `k = 1`, `1e-8` for `k = 2`.
pub fn monotonicity_check(
    lower: &OrthoBasis,
    upper: &OrthoBasis,
    points: &[Complex64],
    k: usize,
    pairs: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    if upper.n != lower.n + 1 {
        return Err(Error::Precondition(format!("need bases of sizes n and n+1, got {} and {}", lower.n, upper.n)));
    }
    if lower.m != upper.m || lower.grid != upper.grid || lower.potential.id() != upper.potential.id() {
        return Err(Error::Precondition("bases differ in potential, m or quadrature".into()));
    }
    if points.is_empty() {
        return Err(Error::Precondition("no sample points".into()));
    }
    let (diffs, tops, tol_rel): (Vec<f64>, Vec<f64>, f64) = match k {
        1 => {
            let a = kernel_intensity(lower, points)?;
            let b = kernel_intensity(upper, points)?;
            (b.iter().zip(&a).map(|(b, a)| b - a).collect(), b, 1e-12)
        }
        2 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut d = Vec::with_capacity(pairs);
            let mut t = Vec::with_capacity(pairs);
            for _ in 0..pairs {
                let i = rng.gen_range(0..points.len());
                let mut j = rng.gen_range(0..points.len());
                if points.len() > 1 {
                    while j == i {
                        j = rng.gen_range(0..points.len());
                    }
                }
                let pq = [points[i], points[j]];
                let hi = det_k(upper, &pq)?;
                d.push(hi - det_k(lower, &pq)?);
                t.push(hi.abs().max(
                    kernel_intensity(upper, &pq[..1])?[0] * kernel_intensity(upper, &pq[1..])?[0],
                ));
            }
            (d, t, 1e-8)
        }
        _ => return Err(Error::Precondition(format!("monotonicity is checked for k ∈ {{1, 2}}, got {k}"))),
    };
    let scale = tops.iter().cloned().fold(0.0, f64::max);
    let min_difference = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = tol_rel * scale;
    Ok(MonotonicityReport {
        k,
        n: lower.n,
        tests: diffs.len(),
        min_difference,
        scale,
        tol,
        pass: min_difference >= -tol,
    })
}

/// CSV `x,y,value`.
pub fn write_intensity_csv(path: impl AsRef<Path>, points: &[Complex64], values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path.display().to_string(), e);
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(f, "x,y,value").map_err(io)?;
    for (z, v) in points.iter().zip(values) {
        writeln!(f, "{:.17e},{:.17e},{:.17e}", z.re, z.im, v).map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas;
    use crate::potential::PotentialSpec;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn quadratic() -> Potential {
        Potential::from_spec(&PotentialSpec::quadratic()).unwrap()
    }

    fn c(x: f64, y: f64) -> Complex64 {
        Complex64::new(x, y)
    }

    #[test]
    fn gaussian_norms() {
        let q = quadratic();
        let g = Grid2D::centered((0.0, 0.0), 8.0, 0.1).unwrap();
        let b = gram_schmidt(&q, 3, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        let h = b.norms();
        for (j, want) in [PI, PI, 2.0 * PI].iter().enumerate() {
            assert!((h[j] / want - 1.0).abs() < 1e-4, "h_{j} = {}", h[j]);
        }
        assert!(b.gram_residual < 1e-8);
        // p_j = z^j/√h_j for the radial weight
        assert_abs_diff_eq!(b.coeffs[2][2].re, 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-6);
        assert!(b.coeffs[2][0].norm() < 1e-8 && b.coeffs[2][1].norm() < 1e-8);

        let g2 = Grid2D::centered((0.0, 0.0), 5.0, 0.05).unwrap();
        let b2 = gram_schmidt(&q, 2, 2.0, &g2, DEFAULT_TOL_GS).unwrap();
        assert!((b2.norms()[0] / (PI / 2.0) - 1.0).abs() < 1e-4);
        assert_abs_diff_eq!(b2.eval(c(0.3, 0.1))[0].re, 1.0 / (PI / 2.0).sqrt(), epsilon = 1e-6);
        assert!((kernel_intensity(&b, &[c(0.0, 0.0)]).unwrap()[0] - 1.0 / PI).abs() < 1e-4 / PI);
        let one = gram_schmidt(&q, 1, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        assert!((kernel_intensity(&one, &[c(0.0, 0.0)]).unwrap()[0] - 1.0 / PI).abs() < 1e-4);
    }

    #[test]
    fn resolution_is_enforced() {
        let q = quadratic();
        let coarse = Grid2D::centered((0.0, 0.0), 2.0, 0.2).unwrap();
        assert!(matches!(gram_schmidt(&q, 40, 40.0, &coarse, DEFAULT_TOL_GS), Err(Error::Resolution(_))));
        let small = Grid2D::centered((0.0, 0.0), 1.5, 0.05).unwrap();
        assert!(matches!(gram_schmidt(&q, 10, 1.0, &small, DEFAULT_TOL_GS), Err(Error::Resolution(_))));
    }

    #[test]
    fn partition_function_small_cases() {
        let q = quadratic();
        let g = Grid2D::centered((0.0, 0.0), 7.0, 0.1).unwrap();
        let b = gram_schmidt(&q, 2, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        let lz = partition_function_beta2(&b).unwrap();
        assert_abs_diff_eq!(lz, (2.0 * PI * PI).ln(), epsilon = 1e-3);
        assert_abs_diff_eq!(quadratic_log_partition(2, 1.0), (2.0 * PI * PI).ln(), epsilon = 1e-12);
        let direct = gas::pair_partition_quadrature(&q, 1.0, &Grid2D::centered((0.0, 0.0), 6.0, 0.2).unwrap());
        assert!((lz.exp() / direct - 1.0).abs() < 1e-2);
        let b1 = gram_schmidt(&q, 1, 3.0, &g, DEFAULT_TOL_GS).unwrap();
        assert_abs_diff_eq!(partition_function_beta2(&b1).unwrap(), (PI / 3.0).ln(), epsilon = 1e-8);
    }

    #[test]
    fn kernel_is_a_projection() {
        let q = Potential::from_spec(&PotentialSpec::anisotropic(0.3)).unwrap();
        let g = Grid2D::centered((0.0, 0.0), 3.5, 0.02).unwrap();
        let b = gram_schmidt(&q, 8, 8.0, &g, DEFAULT_TOL_GS).unwrap();
        assert!((b.trace().unwrap() - 8.0).abs() < 8e-3);
        for z in [c(0.0, 0.0), c(0.4, -0.3), c(0.9, 0.2)] {
            assert!(b.reproducing_defect(z).unwrap() < 1e-8);
        }
    }

    #[test]
    fn pair_intensity_matches_gibbs_quadrature() {
        let q = quadratic();
        let g = Grid2D::centered((0.0, 0.0), 5.0, 0.04).unwrap();
        let b = gram_schmidt(&q, 2, 2.0, &g, DEFAULT_TOL_GS).unwrap();
        let pts: Vec<Complex64> = (0..12).map(|k| c(0.15 * k as f64, 0.0)).collect();
        let mine = kernel_intensity(&b, &pts).unwrap();
        let theirs = gas::pair_intensity_quadrature(&q, 2.0, &pts, &Grid2D::centered((0.0, 0.0), 4.0, 0.08).unwrap());
        for (a, t) in mine.iter().zip(&theirs) {
            assert!((a - t).abs() < 1e-3, "{a} vs {t}");
        }
    }

    #[test]
    fn monotone_in_n() {
        let q = quadratic();
        let g = Grid2D::centered((0.0, 0.0), 8.0, 0.1).unwrap();
        let b3 = gram_schmidt(&q, 3, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        let b4 = gram_schmidt(&q, 4, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        let z = c(0.5, 0.0);
        let d = kernel_intensity(&b4, &[z]).unwrap()[0] - kernel_intensity(&b3, &[z]).unwrap()[0];
        assert_abs_diff_eq!(d, b4.eval(z)[3].norm_sqr() * (-0.25f64).exp(), epsilon = 1e-14);
        let pts: Vec<Complex64> = (0..400).map(|k| c(-3.0 + 0.3 * (k % 20) as f64, -3.0 + 0.3 * (k / 20) as f64)).collect();
        assert!(monotonicity_check(&b3, &b4, &pts, 1, 0, 0).unwrap().pass);
        assert!(monotonicity_check(&b3, &b4, &pts, 2, 200, 9).unwrap().pass);
        let b0 = gram_schmidt(&q, 0, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        let b1 = gram_schmidt(&q, 1, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        assert!(monotonicity_check(&b0, &b1, &pts, 1, 0, 0).unwrap().pass);
        assert!(monotonicity_check(&b3, &b3, &pts, 1, 0, 0).is_err());
    }

    #[test]
    fn det_k_small_cases() {
        let q = quadratic();
        let g = Grid2D::centered((0.0, 0.0), 8.0, 0.1).unwrap();
        let b = gram_schmidt(&q, 3, 1.0, &g, DEFAULT_TOL_GS).unwrap();
        let z = c(0.3, 0.2);
        // repeated points give a vanishing determinant
        assert!(det_k(&b, &[z, z]).unwrap().abs() < 1e-14);
        assert_abs_diff_eq!(det_k(&b, &[z]).unwrap(), kernel_intensity(&b, &[z]).unwrap()[0], epsilon = 1e-15);
        // rank n kernel: any 4 points give zero for n = 3
        let four = [c(0.1, 0.0), c(-0.5, 0.3), c(0.7, -0.2), c(0.0, 1.0)];
        assert!(det_k(&b, &four).unwrap().abs() < 1e-12);
        assert!(det_k(&b, &[]).is_err());
    }

    #[test]
    fn free_energy_analytic() {
        let q = quadratic();
        let rows = free_energy_check(&q, &[2, 256], true, None, DEFAULT_TOL_GS).unwrap();
        let f = rows[1].f_n.unwrap();
        assert!((f + 0.738).abs() <= 0.004, "F_256 = {f}");
        assert_eq!(rows[1].target, Some(-0.75));
        let aniso = Potential::from_spec(&PotentialSpec::anisotropic(0.3)).unwrap();
        assert!(free_energy_check(&aniso, &[4], true, None, DEFAULT_TOL_GS).is_err());
    }
}
