//! Deterministic rectangle probabilities by recursive conditioning.
//!
//! For dimension `d ≥ 3` one coordinate is integrated out with adaptive
//! Gauss–Kronrod quadrature; the remaining `d − 1` coordinates are
//! conditionally normal and handled recursively, ending in the exact
//! bivariate routine.
#![allow(clippy::excessive_precision)]

use super::normal::{std_normal_cdf, std_normal_pdf};
use super::{reduce, Reduced};

/// Kronrod abscissae (non-negative half) of the 15-point rule.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights for the embedded 7-point rule (abscissae XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const MAX_INTERVALS: usize = 200;

/// Integration range cut-off in standard deviations; Φ(−8.5) < 1e−17.
pub(crate) const TAIL: f64 = 8.5;

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut resabs = kron.abs();
    for j in 0..7 {
        let dx = hl * XGK[j];
        fv1[j] = f(c - dx);
        fv2[j] = f(c + dx);
        let s = fv1[j] + fv2[j];
        kron += WGK[j] * s;
        resabs += WGK[j] * (fv1[j].abs() + fv2[j].abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    // QUADPACK error scaling
    let mean = 0.5 * kron;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let hl_abs = hl.abs();
    resasc *= hl_abs;
    resabs *= hl_abs;
    let mut err = ((kron - gauss) * hl).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (kron * hl, err)
}

/// Globally adaptive Gauss–Kronrod integration to absolute tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    if b <= a {
        return (0.0, 0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut err = e;
    while err > tol && intervals.len() < MAX_INTERVALS {
        // bisect the interval with the largest error estimate
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, iv)| if iv.3 > best.1 { (i, iv.3) } else { best });
        let (lo, hi, _, e0) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        err += e1 + e2 - e0;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    let total: f64 = intervals.iter().map(|iv| iv.2).sum();
    let err: f64 = intervals.iter().map(|iv| iv.3).sum();
    (total, err)
}

/// Half-width beyond which the standard normal mass is negligible at `tol`.
fn tail_cutoff(tol: f64) -> f64 {
    // Φ(−x) < φ(x)/x; solve φ(x)/x = tol·1e−3 by a few fixed-point steps
    let target = tol * 1e-3;
    let mut x: f64 = 5.0;
    for _ in 0..4 {
        x = (-2.0 * (target * x * (2.0 * std::f64::consts::PI).sqrt()).ln()).sqrt();
    }
    x.clamp(3.0, TAIL)
}

/// Rectangle probability for an already reduced problem of dimension ≥ 3.
///
/// `corr` is row-major `d × d`.
pub(crate) fn rect_prob_conditioned(lower: &[f64], upper: &[f64], corr: &[f64], tol: f64) -> f64 {
    let d = lower.len();
    // condition on the most restrictive coordinate
    let j = (0..d)
        .min_by(|&a, &b| {
            let pa = std_normal_cdf(upper[a]) - std_normal_cdf(lower[a]);
            let pb = std_normal_cdf(upper[b]) - std_normal_cdf(lower[b]);
            pa.total_cmp(&pb)
        })
        .unwrap_or(0);

    let rest: Vec<usize> = (0..d).filter(|&i| i != j).collect();
    let m = d - 1;
    let beta: Vec<f64> = rest.iter().map(|&i| corr[i * d + j]).collect();
    let sd: Vec<f64> = beta.iter().map(|b| (1.0 - b * b).max(0.0).sqrt().max(1e-8)).collect();
    let mut cond = vec![0.0; m * m];
    for (a, &ia) in rest.iter().enumerate() {
        for (b, &ib) in rest.iter().enumerate() {
            cond[a * m + b] = if a == b {
                1.0
            } else {
                ((corr[ia * d + ib] - beta[a] * beta[b]) / (sd[a] * sd[b])).clamp(-1.0, 1.0)
            };
        }
    }

    let tail = tail_cutoff(tol);
    let lo = lower[j].max(-tail);
    let hi = upper[j].min(tail);
    if hi <= lo {
        return 0.0;
    }
    // ∫ φ(x)·ε(x) dx ≤ tol/2 when ε(x) ≤ tol / (2 φ(x) (hi − lo))
    let inner_scale = 0.5 * tol / (hi - lo);
    let mut cl = vec![0.0; m];
    let mut cu = vec![0.0; m];
    let integrand = |x: f64| {
        let density = std_normal_pdf(x);
        if density == 0.0 {
            return 0.0;
        }
        for a in 0..m {
            let i = rest[a];
            cl[a] = (lower[i] - beta[a] * x) / sd[a];
            cu[a] = (upper[i] - beta[a] * x) / sd[a];
        }
        let p = match reduce(&cl, &cu, &cond) {
            Reduced::Empty => 0.0,
            Reduced::Full => 1.0,
            Reduced::Problem { lower, upper, corr } => {
                let inner_tol = (inner_scale / density).min(1e-2);
                super::rect_prob_reduced(&lower, &upper, &corr, inner_tol)
            }
        };
        density * p
    };
    let (v, _) = integrate(integrand, lo, hi, 0.5 * tol);
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_and_gaussians() {
        let (v, e) = integrate(|x| x * x, 0.0, 3.0, 1e-12);
        assert!((v - 9.0).abs() < 1e-12 && e < 1e-10);
        let (v, _) = integrate(std_normal_pdf, -TAIL, 1.3, 1e-12);
        assert!((v - std_normal_cdf(1.3)).abs() < 1e-12);
    }

    #[test]
    fn adapts_to_kinks() {
        let (v, _) = integrate(|x: f64| x.abs().sqrt(), -1.0, 2.0, 1e-9);
        let want = 2.0 / 3.0 * (1.0 + 2f64.powf(1.5));
        assert!((v - want).abs() < 1e-8);
    }
}
