//! Genz's separation-of-variables integrand evaluated with randomly
//! shifted Richtmyer lattice rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::normal::std_normal_cdf;

const SHIFTS: usize = 12;
const MIN_POINTS: usize = 1 << 9;
const MAX_POINTS: usize = 1 << 19;
const PRIMES: [f64; 3] = [2.0, 3.0, 5.0];

fn fast_quantile(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Lower Cholesky factor of a (possibly semidefinite) correlation matrix.
fn cholesky(corr: &[f64], d: usize) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = corr[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                l[i * d + i] = s.max(0.0).sqrt().max(1e-10);
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    l
}

struct Sov<'a> {
    d: usize,
    lower: &'a [f64],
    upper: &'a [f64],
    chol: Vec<f64>,
}

impl Sov<'_> {
    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let d = self.d;
        let mut f = 1.0;
        for i in 0..d {
            let c = &self.chol[i * d..i * d + i];
            let s: f64 = c.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            let diag = self.chol[i * d + i];
            let lo = std_normal_cdf((self.lower[i] - s) / diag);
            let hi = std_normal_cdf((self.upper[i] - s) / diag);
            let width = (hi - lo).max(0.0);
            f *= width;
            if f == 0.0 {
                return 0.0;
            }
            if i + 1 < d {
                y[i] = fast_quantile(lo + w[i] * width);
            }
        }
        f
    }
}

/// Randomized QMC estimate of a reduced rectangle probability.
///
/// Returns `(estimate, standard_error)`; the point count doubles until three
/// standard errors fall below `tol`.
pub(crate) fn rect_prob_qmc(lower: &[f64], upper: &[f64], corr: &[f64], tol: f64, seed: u64) -> (f64, f64) {
    let d = lower.len();
    let sov = Sov {
        d,
        lower,
        upper,
        chol: cholesky(corr, d),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<[f64; 3]> = (0..SHIFTS)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let gen: Vec<f64> = PRIMES.iter().map(|p| p.sqrt().fract()).collect();

    let mut n = MIN_POINTS;
    let mut sums = [0.0; SHIFTS];
    let mut done = 0usize;
    let mut y = vec![0.0; d];
    let mut w = vec![0.0; d];
    loop {
        for (s, shift) in shifts.iter().enumerate() {
            for k in (done + 1)..=n {
                for i in 0..d.saturating_sub(1) {
                    let u = (k as f64 * gen[i] + shift[i]).fract();
                    // baker's transform periodizes the integrand
                    w[i] = (2.0 * u - 1.0).abs();
                }
                let a = sov.eval(&w, &mut y);
                for wi in w.iter_mut() {
                    *wi = 1.0 - *wi;
                }
                let b = sov.eval(&w, &mut y);
                sums[s] += 0.5 * (a + b);
            }
        }
        done = n;
        let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let mean = means.iter().sum::<f64>() / SHIFTS as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / ((SHIFTS - 1) * SHIFTS) as f64;
        let se = var.sqrt();
        if 3.0 * se <= tol || n >= MAX_POINTS {
            return (mean.clamp(0.0, 1.0), se);
        }
        n *= 2;
    }
}
