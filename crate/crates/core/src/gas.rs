//! Finite Coulomb gas: energies, Metropolis sampling of the Gibbs measure
//! `∝ exp(-(β/2) E_{mQ})`, weighted Fekete points, and the aggregation
//! inequality for `|·|^β` kernels.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid2D, ScalarField};
use crate::potential::{self, Potential};

/// Axis-aligned simulation box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SimBox {
    pub fn centered(half_width: f64) -> Self {
        SimBox {
            x_min: -half_width,
            x_max: half_width,
            y_min: -half_width,
            y_max: half_width,
        }
    }

    pub fn from_grid(g: &Grid2D) -> Self {
        SimBox {
            x_min: g.x0,
            x_max: g.x_max(),
            y_min: g.y0,
            y_max: g.y_max(),
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.re >= self.x_min && z.re <= self.x_max && z.im >= self.y_min && z.im <= self.y_max
    }

    fn half_width(&self) -> f64 {
        0.5 * (self.x_max - self.x_min).min(self.y_max - self.y_min)
    }

    fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }
}

/// `E_{mQ}(z) = Σ_{j<k} log(1/|z_j - z_k|²) + m Σ_j Q(z_j)`; `+∞` if two
/// points coincide.
pub fn energy(z: &[Complex64], pot: &Potential, m: f64) -> f64 {
    let mut e = 0.0;
    for j in 0..z.len() {
        for k in j + 1..z.len() {
            let d = (z[j] - z[k]).norm_sqr();
            if d == 0.0 {
                return f64::INFINITY;
            }
            e -= d.ln();
        }
        e += m * pot.value(z[j]);
    }
    e
}

/// `I^# = 2E/(n(n-1))`; undefined for a single point.
pub fn rescaled_energy(z: &[Complex64], pot: &Potential, m: f64) -> Option<f64> {
    let n = z.len();
    (n >= 2).then(|| 2.0 * energy(z, pot, m) / (n * (n - 1)) as f64)
}

/// Change in `E` when point `j` moves to `w`.
fn delta_energy(z: &[Complex64], j: usize, w: Complex64, pot: &Potential, m: f64) -> f64 {
    let old = z[j];
    let mut d = m * (pot.value(w) - pot.value(old));
    for (k, &zk) in z.iter().enumerate() {
        if k == j {
            continue;
        }
        let dn = (w - zk).norm_sqr();
        if dn == 0.0 {
            return f64::INFINITY;
        }
        d += (old - zk).norm_sqr().ln() - dn.ln();
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcConfig {
    pub n: usize,
    pub m: f64,
    pub beta: f64,
    /// Proposal scale; defaults to `1/√m`.
    #[serde(default)]
    pub step_sigma: Option<f64>,
    pub burn_in: usize,
    pub n_samples: usize,
    #[serde(default = "one")]
    pub thinning: usize,
    pub seed: u64,
    pub sim_box: SimBox,
}

fn one() -> usize {
    1
}

impl McmcConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n < 1 {
            errs.push("n must be at least 1".into());
        }
        if !(self.m > 0.0) {
            errs.push("m must be positive".into());
        }
        if !(self.beta > 0.0) {
            errs.push("beta must be positive".into());
        }
        if let Some(s) = self.step_sigma {
            if !(s > 0.0) {
                errs.push("step_sigma must be positive".into());
            }
        }
        if self.n_samples < 1 {
            errs.push("n_samples must be at least 1".into());
        }
        if self.thinning < 1 {
            errs.push("thinning must be at least 1".into());
        }
        let b = &self.sim_box;
        if !(b.x_max > b.x_min && b.y_max > b.y_min) {
            errs.push("simulation box is empty".into());
        }
        errs
    }
}

/// Samples from a Metropolis chain; `points` holds `n` entries per sample.
#[derive(Debug, Clone)]
pub struct McmcRun {
    pub config: McmcConfig,
    pub points: Vec<Complex64>,
    /// Acceptance over the sampling phase.
    pub acceptance_rate: f64,
    /// Proposal scale frozen at the end of burn-in.
    pub step_sigma: f64,
}

impl McmcRun {
    pub fn n_samples(&self) -> usize {
        self.points.len() / self.config.n
    }

    pub fn sample(&self, s: usize) -> &[Complex64] {
        let n = self.config.n;
        &self.points[s * n..(s + 1) * n]
    }

    /// CSV `sample_index,particle_index,x,y`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path.display().to_string(), e);
        let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
        writeln!(f, "sample_index,particle_index,x,y").map_err(io)?;
        for s in 0..self.n_samples() {
            for (p, z) in self.sample(s).iter().enumerate() {
                writeln!(f, "{s},{p},{:.17e},{:.17e}", z.re, z.im).map_err(io)?;
            }
        }
        f.flush().map_err(io)
    }
}

/// Random start inside the droplet-scale disk `|z - c| ≤ √(n/m)`, clipped
/// to the box.
fn initial_configuration(rng: &mut ChaCha8Rng, n: usize, m: f64, b: &SimBox) -> Vec<Complex64> {
    let r = (n as f64 / m).sqrt().min(0.9 * b.half_width());
    let c = b.center();
    (0..n)
        .map(|_| {
            let rho = r * rng.gen::<f64>().sqrt();
            let th = std::f64::consts::TAU * rng.gen::<f64>();
            c + Complex64::from_polar(rho, th)
        })
        .collect()
}

/// One sweep of single-particle Metropolis moves, particles in index
/// order. Returns the number of accepted moves.
fn sweep(
    z: &mut [Complex64],
    rng: &mut ChaCha8Rng,
    sigma: f64,
    half_beta: f64,
    pot: &Potential,
    m: f64,
    b: &SimBox,
) -> usize {
    let mut accepted = 0;
    for j in 0..z.len() {
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        let w = z[j] + sigma * Complex64::new(dx, dy);
        let u: f64 = rng.gen();
        if !b.contains(w) {
            continue;
        }
        let de = delta_energy(z, j, w, pot, m);
        if de.is_finite() && (de <= 0.0 || u < (-half_beta * de).exp()) {
            z[j] = w;
            accepted += 1;
        }
    }
    accepted
}

/// Metropolis sampling of `∝ exp(-(β/2) E_{mQ})`. During burn-in the step
/// is rescaled every 100 sweeps toward acceptance in `[0.2, 0.5]`; it is
/// then frozen. Deterministic in `config.seed`.
pub fn mcmc_sample(cfg: &McmcConfig, pot: &Potential) -> Result<McmcRun> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let b = cfg.sim_box;
    let t = cfg.n as f64 / cfg.m;
    let half = b.half_width();
    let check_grid = Grid2D::new(b.x_min, b.y_min, 2.0 * half / 64.0, 65, 65)?;
    let growth = potential::check_growth(pot, &check_grid, t);
    if !growth.pass {
        return Err(Error::Precondition(format!(
            "growth check failed for t = n/m = {t} on the simulation box"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = initial_configuration(&mut rng, cfg.n, cfg.m, &b);
    let mut sigma = cfg.step_sigma.unwrap_or(1.0 / cfg.m.sqrt());
    let half_beta = 0.5 * cfg.beta;

    const WINDOW: usize = 100;
    let (mut acc, mut tried) = (0usize, 0usize);
    let mut last_rate = None;
    for s in 0..cfg.burn_in {
        acc += sweep(&mut z, &mut rng, sigma, half_beta, pot, cfg.m, &b);
        tried += cfg.n;
        if (s + 1) % WINDOW == 0 {
            let rate = acc as f64 / tried as f64;
            if rate < 0.2 {
                sigma *= 0.8;
            } else if rate > 0.5 {
                sigma *= 1.25;
            }
            last_rate = Some(rate);
            acc = 0;
            tried = 0;
        }
    }
    if let Some(rate) = last_rate {
        log::debug!("burn-in done: step {sigma:.4}, last window acceptance {rate:.3}");
    }

    let mut points = Vec::with_capacity(cfg.n * cfg.n_samples);
    let (mut acc, mut tried) = (0usize, 0usize);
    for _ in 0..cfg.n_samples {
        for _ in 0..cfg.thinning {
            acc += sweep(&mut z, &mut rng, sigma, half_beta, pot, cfg.m, &b);
            tried += cfg.n;
        }
        points.extend_from_slice(&z);
    }
    let acceptance_rate = acc as f64 / tried as f64;
    if acceptance_rate < 0.01 {
        return Err(Error::Config(format!(
            "acceptance collapsed to {acceptance_rate:.4} with step {sigma:.4e}"
        )));
    }
    Ok(McmcRun {
        config: cfg.clone(),
        points,
        acceptance_rate,
        step_sigma: sigma,
    })
}

/// Mean particle count per cell, as a density per `dA`. Points farther
/// than half a cell from every node are dropped.
pub fn intensity_histogram(run: &McmcRun, grid: &Grid2D) -> Result<ScalarField> {
    let ns = run.n_samples();
    if ns == 0 {
        return Err(Error::Precondition("run has no samples".into()));
    }
    let mut counts = vec![0u64; grid.len()];
    for z in &run.points {
        if let Some((i, j)) = grid.nearest_node(*z) {
            counts[grid.index(i, j)] += 1;
        }
    }
    let scale = 1.0 / (ns as f64 * grid.cell_area());
    ScalarField::new(*grid, counts.iter().map(|&c| c as f64 * scale).collect())
}

/// Sample mean and variance of `(1/n) Σ_j f(z_j)`, `f` bilinearly
/// interpolated.
pub fn linear_statistic(run: &McmcRun, f: &ScalarField) -> Result<(f64, f64)> {
    let ns = run.n_samples();
    if ns == 0 {
        return Err(Error::Precondition("run has no samples".into()));
    }
    let n = run.config.n as f64;
    let mut vals = Vec::with_capacity(ns);
    for s in 0..ns {
        let mut acc = 0.0;
        for &z in run.sample(s) {
            acc += f.bilinear(z).ok_or_else(|| {
                Error::Precondition(format!("sample point ({:.4}, {:.4}) lies outside f's grid", z.re, z.im))
            })?;
        }
        vals.push(acc / n);
    }
    let mean = vals.iter().sum::<f64>() / ns as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ns as f64;
    Ok((mean, var))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeketeResult {
    pub points: Vec<Complex64>,
    pub energy: f64,
    /// `I^#`, absent for `n = 1`.
    pub rescaled: Option<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Index of the start that produced the best minimum.
    pub best_start: usize,
    /// True if the best run ended without meeting the gradient tolerance.
    pub flagged: bool,
}

/// `∇_j E = Σ_{k≠j} -2(z_j - z_k)/|z_j - z_k|² + m ∇Q(z_j)`, packed as
/// `∂ₓ + i∂ᵧ`.
fn gradient(z: &[Complex64], pot: &Potential, m: f64) -> Vec<Complex64> {
    let n = z.len();
    let mut g: Vec<Complex64> = z.iter().map(|&p| m * pot.gradient(p)).collect();
    for j in 0..n {
        for k in j + 1..n {
            let d = z[j] - z[k];
            let f = -2.0 * d / d.norm_sqr();
            g[j] += f;
            g[k] -= f;
        }
    }
    g
}

fn dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

struct Descent {
    z: Vec<Complex64>,
    e: f64,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// Gradient descent with Armijo backtracking; trial steps from the
/// Barzilai–Borwein formula.
fn descend(mut z: Vec<Complex64>, pot: &Potential, m: f64, iterations: usize, gtol: f64) -> Descent {
    let mut e = energy(&z, pot, m);
    let mut g = gradient(&z, pot, m);
    let mut alpha = 1e-2 / m.max(1.0);
    let mut it = 0;
    let mut converged = false;
    while it < iterations {
        let gg = dot(&g, &g);
        if gg.sqrt() <= gtol {
            converged = true;
            break;
        }
        let mut step = alpha;
        let (mut zn, mut en);
        loop {
            zn = z.iter().zip(&g).map(|(p, d)| p - step * d).collect::<Vec<_>>();
            en = energy(&zn, pot, m);
            if en.is_finite() && en <= e - 1e-4 * step * gg {
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                // no decrease possible at this precision
                return Descent {
                    grad_norm: gg.sqrt(),
                    z,
                    e,
                    iterations: it,
                    converged: gg.sqrt() <= 1e3 * gtol,
                };
            }
        }
        let gn = gradient(&zn, pot, m);
        let s: Vec<Complex64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<Complex64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        alpha = if sy > 0.0 { dot(&s, &s) / sy } else { 2.0 * step };
        z = zn;
        e = en;
        g = gn;
        it += 1;
    }
    let grad_norm = dot(&g, &g).sqrt();
    Descent {
        z,
        e,
        grad_norm,
        iterations: it,
        converged: converged || grad_norm <= gtol,
    }
}

/// Best local minimizer of `E_{mQ}` over `starts` random initial
/// configurations (a best-found minimum, not a certified global one).
pub fn fekete_minimize(
    n: usize,
    m: f64,
    pot: &Potential,
    seed: u64,
    iterations: usize,
    starts: usize,
) -> Result<FeketeResult> {
    if n < 1 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    if starts < 1 {
        return Err(Error::Precondition("need at least one start".into()));
    }
    let b = SimBox::centered(1e3);
    let gtol = 1e-7 * (n as f64) * m.max(1.0);
    let runs: Vec<(usize, Descent)> = (0..starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let z0 = initial_configuration(&mut rng, n, m, &b);
            (s, descend(z0, pot, m, iterations, gtol))
        })
        .collect();
    let (best_start, best) = runs
        .into_iter()
        .min_by(|a, b| a.1.e.total_cmp(&b.1.e).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    if !best.converged {
        log::warn!(
            "Fekete descent for n = {n} stopped with gradient norm {:.3e}",
            best.grad_norm
        );
    }
    Ok(FeketeResult {
        rescaled: rescaled_energy(&best.z, pot, m),
        points: best.z,
        energy: best.e,
        grad_norm: best.grad_norm,
        iterations: best.iterations,
        best_start,
        flagged: !best.converged,
    })
}

/// `Σ_{i,j} w_i w_j (|ξ_i|^β + |ξ_j|^β - |ξ_i - ξ_j|^β)` over all ordered
/// pairs, diagonal included; nonnegative for `0 < β ≤ 2`.
pub fn aggregation_check(atoms: &[(Complex64, f64)], beta: f64) -> Result<f64> {
    if let Some(&(_, w)) = atoms.iter().find(|a| !(a.1 >= 0.0)) {
        return Err(Error::Precondition(format!("negative atom weight {w}")));
    }
    let mut sum = 0.0;
    for &(xi, wi) in atoms {
        for &(xj, wj) in atoms {
            sum += wi * wj * (xi.norm().powf(beta) + xj.norm().powf(beta) - (xi - xj).norm().powf(beta));
        }
    }
    Ok(sum)
}

/// Natural scale of [`aggregation_check`]: `(Σ w)² · max |ξ|^β`.
pub fn aggregation_scale(atoms: &[(Complex64, f64)], beta: f64) -> f64 {
    let mass: f64 = atoms.iter().map(|a| a.1).sum();
    let r = atoms.iter().map(|a| a.0.norm()).fold(0.0, f64::max);
    mass * mass * r.powf(beta).max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// `∫ |ζ - ξ|^β dμ(ξ)`.
    pub value: f64,
    /// `∫∫ |ξ - η|^β dμ dμ / (2 μ(ℂ))`.
    pub threshold: f64,
    pub holds: bool,
}

/// The centered form `∫∫|ξ-η|^β dμ dμ ≤ 2μ(ℂ) ∫|ζ-ξ|^β dμ` at one `ζ`.
pub fn aggregation_probe(atoms: &[(Complex64, f64)], beta: f64, zeta: Complex64) -> ProbeReport {
    let mass: f64 = atoms.iter().map(|a| a.1).sum();
    let mut lhs = 0.0;
    for &(xi, wi) in atoms {
        for &(xj, wj) in atoms {
            lhs += wi * wj * (xi - xj).norm().powf(beta);
        }
    }
    let value: f64 = atoms.iter().map(|&(x, w)| w * (zeta - x).norm().powf(beta)).sum();
    let threshold = lhs / (2.0 * mass);
    ProbeReport {
        value,
        threshold,
        holds: value >= threshold,
    }
}

/// Quadrature nodes `(z, e^{-mQ(z)} h²)` (dvol weights), dropping nodes
/// whose weight is below `1e-300`.
fn weighted_nodes(pot: &Potential, m: f64, grid: &Grid2D) -> Vec<(Complex64, f64)> {
    let h2 = grid.h * grid.h;
    (0..grid.len())
        .filter_map(|k| {
            let z = grid.point(k);
            let w = (-m * pot.value(z)).exp() * h2;
            (w > 1e-300).then_some((z, w))
        })
        .collect()
}

/// Two-particle partition function `∫∫ |z₁-z₂|² e^{-mQ(z₁)-mQ(z₂)} dvol dvol`
/// by brute-force midpoint quadrature over the grid (β = 2).
pub fn pair_partition_quadrature(pot: &Potential, m: f64, grid: &Grid2D) -> f64 {
    let nodes = weighted_nodes(pot, m, grid);
    nodes
        .par_iter()
        .map(|&(z1, w1)| w1 * nodes.iter().map(|&(z2, w2)| w2 * (z1 - z2).norm_sqr()).sum::<f64>())
        .sum()
}

/// One-point intensity of the two-particle β = 2 gas per `dvol`:
/// `2 e^{-mQ(z)} ∫ |z-w|² e^{-mQ(w)} dvol(w) / Z₂`, by quadrature.
pub fn pair_intensity_quadrature(pot: &Potential, m: f64, points: &[Complex64], grid: &Grid2D) -> Vec<f64> {
    let nodes = weighted_nodes(pot, m, grid);
    let z2 = pair_partition_quadrature(pot, m, grid);
    points
        .iter()
        .map(|&z| {
            let s: f64 = nodes.iter().map(|&(w, wt)| wt * (z - w).norm_sqr()).sum();
            2.0 * (-m * pot.value(z)).exp() * s / z2
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialSpec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn quadratic() -> Potential {
        Potential::from_spec(&PotentialSpec::quadratic()).unwrap()
    }

    #[test]
    fn energy_examples() {
        let q = quadratic();
        let c = |x: f64| Complex64::new(x, 0.0);
        assert_abs_diff_eq!(energy(&[c(0.0), c(1.0)], &q, 1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(energy(&[c(0.0), c(2.0)], &q, 1.0), 4.0 - 2.0 * 2f64.ln(), epsilon = 1e-14);
        assert_eq!(energy(&[c(0.5), c(0.5)], &q, 1.0), f64::INFINITY);
        assert_eq!(rescaled_energy(&[c(0.5)], &q, 1.0), None);
    }

    proptest! {
        #[test]
        fn energy_is_permutation_invariant(
            pts in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 2..10),
            seed in any::<u64>(),
        ) {
            let q = quadratic();
            let z: Vec<Complex64> = pts.iter().map(|&(x, y)| Complex64::new(x, y)).collect();
            let mut perm = z.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let (a, b) = (energy(&z, &q, 3.0), energy(&perm, &q, 3.0));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = Potential::from_spec(&PotentialSpec::two_well(1.0)).unwrap();
        let z = vec![Complex64::new(0.3, -0.2), Complex64::new(-0.7, 0.5), Complex64::new(1.1, 0.4)];
        let g = gradient(&z, &q, 2.5);
        let eps = 1e-6;
        for j in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += eps;
            zm[j] -= eps;
            let gx = (energy(&zp, &q, 2.5) - energy(&zm, &q, 2.5)) / (2.0 * eps);
            zp[j] = z[j] + Complex64::new(0.0, eps);
            zm[j] = z[j] - Complex64::new(0.0, eps);
            let gy = (energy(&zp, &q, 2.5) - energy(&zm, &q, 2.5)) / (2.0 * eps);
            assert_abs_diff_eq!(g[j].re, gx, epsilon = 1e-6);
            assert_abs_diff_eq!(g[j].im, gy, epsilon = 1e-6);
        }
    }

    #[test]
    fn small_fekete_configurations() {
        let q = quadratic();
        let one = fekete_minimize(1, 1.0, &q, 3, 2000, 4).unwrap();
        assert!(one.points[0].norm() < 1e-6);
        // two points at ±1/√(2m)
        let two = fekete_minimize(2, 1.0, &q, 3, 2000, 4).unwrap();
        assert!(!two.flagged, "{two:?}");
        assert_abs_diff_eq!((two.points[0] - two.points[1]).norm(), 2f64.sqrt(), epsilon = 1e-3);
        assert_abs_diff_eq!((two.points[0] + two.points[1]).norm(), 0.0, epsilon = 1e-3);
    }

    #[test]
    fn mcmc_is_deterministic_in_the_seed() {
        let q = quadratic();
        let cfg = McmcConfig {
            n: 3,
            m: 3.0,
            beta: 2.0,
            step_sigma: None,
            burn_in: 200,
            n_samples: 300,
            thinning: 1,
            seed: 11,
            sim_box: SimBox::centered(4.0),
        };
        let a = mcmc_sample(&cfg, &q).unwrap();
        let b = mcmc_sample(&cfg, &q).unwrap();
        assert_eq!(a.points, b.points);
        let c = mcmc_sample(&McmcConfig { seed: 12, ..cfg.clone() }, &q).unwrap();
        assert_ne!(a.points, c.points);
        assert!(a.acceptance_rate > 0.0 && a.acceptance_rate <= 1.0);
        assert!(a.points.iter().all(|z| cfg.sim_box.contains(*z)));
    }

    #[test]
    fn one_particle_radial_law() {
        // exact law for n = 1, β = 2, m = 1: density ∝ e^{-|z|²}, P(|z| ≤ r) = 1 - e^{-r²}
        let q = quadratic();
        let cfg = McmcConfig {
            n: 1,
            m: 1.0,
            beta: 2.0,
            step_sigma: None,
            burn_in: 2000,
            n_samples: 100_000,
            thinning: 1,
            seed: 5,
            sim_box: SimBox::centered(6.0),
        };
        let run = mcmc_sample(&cfg, &q).unwrap();
        let mut r: Vec<f64> = run.points.iter().map(|z| z.norm()).collect();
        r.sort_by(f64::total_cmp);
        let n = r.len() as f64;
        let d = r
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-x * x).exp();
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(d <= 0.02, "sup CDF distance {d}");
    }

    #[test]
    fn histogram_and_linear_statistics() {
        let q = quadratic();
        let cfg = McmcConfig {
            n: 2,
            m: 2.0,
            beta: 2.0,
            step_sigma: None,
            burn_in: 500,
            n_samples: 20_000,
            thinning: 1,
            seed: 1,
            sim_box: SimBox::centered(4.0),
        };
        let run = mcmc_sample(&cfg, &q).unwrap();
        let g = Grid2D::centered((0.0, 0.0), 4.0, 0.1).unwrap();
        let hist = intensity_histogram(&run, &g).unwrap();
        let total = crate::field::integrate_da(&hist, &crate::field::RegionMask::full(g)).unwrap();
        assert_abs_diff_eq!(total, 2.0, epsilon = 0.02);
        let (mean, var) = linear_statistic(&run, &ScalarField::constant(g, 1.0)).unwrap();
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
        assert!(var.abs() < 1e-20);
    }

    #[test]
    fn pair_quadrature_matches_gaussian_integrals() {
        // Q = |z|², m = 1: Z₂ = 2π²; intensity (1/π)(|z|² + 1)e^{-|z|²}
        let q = quadratic();
        let g = Grid2D::centered((0.0, 0.0), 7.0, 0.2).unwrap();
        let z2 = pair_partition_quadrature(&q, 1.0, &g);
        assert!((z2 / (2.0 * PI * PI) - 1.0).abs() < 1e-8, "{z2}");
        let pts = [Complex64::new(0.0, 0.0), Complex64::new(0.6, -0.8)];
        let v = pair_intensity_quadrature(&q, 1.0, &pts, &g);
        for (z, got) in pts.iter().zip(v) {
            let r2 = z.norm_sqr();
            assert_abs_diff_eq!(got, (r2 + 1.0) / PI * (-r2).exp(), epsilon = 1e-9);
        }
    }

    #[test]
    fn aggregation_examples() {
        let c = |x: f64| Complex64::new(x, 0.0);
        let mu = [(c(0.0), 1.0), (c(1.0), 1.0)];
        // ordered pairs: (0,0) 0, (0,1) 0, (1,0) 0, (1,1) 2
        assert_abs_diff_eq!(aggregation_check(&mu, 2.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(aggregation_check(&[(c(0.0), 0.7)], 2.0).unwrap(), 0.0);
        let p = aggregation_probe(&mu, 3.0, c(0.5));
        assert_abs_diff_eq!(p.value, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p.threshold, 0.5, epsilon = 1e-15);
        assert!(!p.holds);
        assert!(aggregation_probe(&mu, 2.0, c(0.5)).holds);
        assert!(aggregation_check(&[(c(1.0), -1.0)], 2.0).is_err());
    }
}
