//! Shared pieces of the acceptance run: the verdict table and the closed-form
//! oracles, kept apart from the code they check.

use std::time::Instant;

pub struct Verdict {
    pub number: usize,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<34} {}  ({}; {:.1} s)",
            self.number,
            self.title,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail,
            self.seconds
        )
    }
}

/// Runs one criterion, turning an error into a failed verdict.
pub fn judge<E: std::fmt::Display>(
    number: usize,
    title: &'static str,
    f: impl FnOnce() -> Result<(bool, String), E>,
) -> Verdict {
    let start = Instant::now();
    let (pass, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Verdict {
        number,
        title,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Radial CDF of one particle of the two-particle Gaussian gas (`m = 2`,
/// `β = 2`), from its intensity `(4/π)(r²+½)e^{-2r²}` per unit area.
pub fn pair_radial_cdf(r: f64) -> f64 {
    let rho = |s: f64| 4.0 / std::f64::consts::PI * (s * s + 0.5) * (-2.0 * s * s).exp();
    // the intensity counts both particles
    0.5 * simpson(|s| rho(s) * 2.0 * std::f64::consts::PI * s, 0.0, r, 400)
}

/// `log(π j!)`.
pub fn log_gaussian_norm(j: usize) -> f64 {
    std::f64::consts::PI.ln() + (1..=j).map(|k| (k as f64).ln()).sum::<f64>()
}

/// `log Z_{n,n}` for `Q = |z|²` at `β = 2`: `n! Π_{j<n} π j!/n^{j+1}`.
pub fn gaussian_log_partition(n: usize) -> f64 {
    let ln_n = (n as f64).ln();
    let log_nfact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
    log_nfact + (0..n).map(|j| log_gaussian_norm(j) - (j + 1) as f64 * ln_n).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_cdf_matches_closed_form() {
        for r in [0.1f64, 0.5, 1.0, 2.0] {
            let closed = 1.0 - (-2.0 * r * r).exp() * (1.0 + r * r);
            assert!((pair_radial_cdf(r) - closed).abs() < 1e-10);
        }
        assert!((pair_radial_cdf(8.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn small_gaussian_partitions() {
        // n = 1: ∫ e^{-|z|²} dvol = π
        assert!((gaussian_log_partition(1) - std::f64::consts::PI.ln()).abs() < 1e-14);
        // n = 2, m = 2: 2·(π/2)(π/4)
        let z2 = 2.0 * (std::f64::consts::PI / 2.0) * (std::f64::consts::PI / 4.0);
        assert!((gaussian_log_partition(2) - z2.ln()).abs() < 1e-14);
    }
}
