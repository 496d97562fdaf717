//! Regular lattices on the unit square, pairwise distances and spatial
//! kernel weights around a reference point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = (f64, f64);

/// Regular `grid_size × grid_size` lattice covering `[0,1]²`.
///
/// Sites are enumerated with the x coordinate varying fastest, so site
/// `j` sits at `(xs[j % g], xs[j / g])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    grid_size: usize,
    coords: Vec<Point>,
}

impl Lattice {
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.grid_size - 1) as f64
    }

    /// Index of the site within `tol` of `(x, y)`, if any.
    pub fn site_index(&self, x: f64, y: f64, tol: f64) -> Option<usize> {
        let g = self.grid_size;
        let step = self.spacing();
        let ix = (x / step).round();
        let iy = (y / step).round();
        if ix < 0.0 || iy < 0.0 || ix >= g as f64 || iy >= g as f64 {
            return None;
        }
        let j = iy as usize * g + ix as usize;
        let (sx, sy) = self.coords[j];
        ((sx - x).abs() <= tol && (sy - y).abs() <= tol).then_some(j)
    }
}

/// Equispaced values spanning `[0, 1]` with both endpoints exact.
fn unit_sequence(n: usize) -> Vec<f64> {
    let by = 1.0 / (n - 1) as f64;
    let mut xs: Vec<f64> = (0..n).map(|i| i as f64 * by).collect();
    xs[n - 1] = 1.0;
    xs
}

pub fn build_lattice(grid_size: usize) -> Result<Lattice> {
    if grid_size < 2 {
        return Err(Error::invalid(format!(
            "grid_size must be at least 2, got {grid_size}"
        )));
    }
    let xs = unit_sequence(grid_size);
    let coords = xs
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    Ok(Lattice { grid_size, coords })
}

/// Dense symmetric matrix of Euclidean distances between lattice sites.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

pub fn distance_matrix(lattice: &Lattice) -> DistanceMatrix {
    let coords = lattice.coords();
    let n = coords.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[i].0 - coords[j].0;
            let dy = coords[i].1 - coords[j].1;
            let d = (dx * dx + dy * dy).sqrt();
            entries[i * n + j] = d;
            entries[j * n + i] = d;
        }
    }
    DistanceMatrix { n, entries }
}

/// Radial kernel profile used for spatial smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelId {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelId {
    /// Unnormalized profile at scaled distance `u = ‖s − s0‖ / h`.
    pub fn profile(self, u: f64) -> f64 {
        match self {
            KernelId::Gaussian => (-0.5 * u * u).exp(),
            KernelId::Epanechnikov => (1.0 - u * u).max(0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelId::Gaussian => "gaussian",
            KernelId::Epanechnikov => "epanechnikov",
        }
    }
}

impl std::str::FromStr for KernelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelId::Gaussian),
            "epanechnikov" => Ok(KernelId::Epanechnikov),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Normalized spatial weights around a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub weights: Vec<f64>,
    pub eff_n: f64,
    pub bandwidth: f64,
    pub s0: Point,
    pub kernel: KernelId,
}

/// Kernel weights `W_j ∝ κ(‖s_j − s0‖ / h)`, normalized to sum to one.
///
/// Constant prefactors of the kernel (`1/h`, `1/h²`, `1/√(2π)`) cancel
/// under normalization and are not applied.
pub fn kernel_weights(lattice: &Lattice, s0: Point, h: f64, kernel: KernelId) -> Result<KernelWeights> {
    weights_for_sites(lattice.coords(), s0, h, kernel)
}

pub(crate) fn weights_for_sites(
    coords: &[Point],
    s0: Point,
    h: f64,
    kernel: KernelId,
) -> Result<KernelWeights> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    if !((0.0..=1.0).contains(&s0.0) && (0.0..=1.0).contains(&s0.1)) {
        return Err(Error::invalid(format!(
            "reference point ({}, {}) lies outside the unit square",
            s0.0, s0.1
        )));
    }
    let raw: Vec<f64> = coords
        .iter()
        .map(|&(x, y)| {
            let d = ((x - s0.0).powi(2) + (y - s0.1).powi(2)).sqrt();
            kernel.profile(d / h)
        })
        .collect();
    if raw.iter().all(|&w| w < 1e-300) {
        return Err(Error::DegenerateBandwidth);
    }
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let eff_n = effective_sample_size(&weights)?;
    Ok(KernelWeights {
        weights,
        eff_n,
        bandwidth: h,
        s0,
        kernel,
    })
}

/// Kish effective sample size `1 / Σ W²`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let ss: f64 = weights.iter().map(|w| w * w).sum();
    if ss == 0.0 || !ss.is_finite() {
        return Err(Error::invalid("weight vector has zero (or non-finite) norm"));
    }
    Ok(1.0 / ss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corner_lattice_order() {
        let l = build_lattice(2).unwrap();
        assert_eq!(l.coords(), &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn twenty_by_twenty() {
        let l = build_lattice(20).unwrap();
        assert_eq!(l.len(), 400);
        assert!((l.spacing() - 1.0 / 19.0).abs() < 1e-15);
        assert!((l.spacing() - 0.05263).abs() < 1e-5);
        assert_eq!(l.coords()[399], (1.0, 1.0));
    }

    #[test]
    fn three_by_three_midpoint() {
        let l = build_lattice(3).unwrap();
        assert_eq!(l.coords()[4], (0.5, 0.5));
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(matches!(build_lattice(1), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_lattice(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn corner_distances() {
        let d = distance_matrix(&build_lattice(2).unwrap());
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(0, 2), 1.0);
        assert!((d.get(0, 3) - 2f64.sqrt()).abs() < 1e-15);
        assert!((d.get(1, 2) - 2f64.sqrt()).abs() < 1e-15);
        for i in 0..4 {
            assert_eq!(d.get(i, i), 0.0);
        }
    }

    #[test]
    fn max_distance_is_diagonal() {
        let d = distance_matrix(&build_lattice(3).unwrap());
        assert!((d.max() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn triangle_inequality_small_lattice() {
        let d = distance_matrix(&build_lattice(4).unwrap());
        let n = d.n();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    assert!(d.get(i, j) <= d.get(i, k) + d.get(k, j) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn single_site_weight() {
        let w = weights_for_sites(&[(0.3, 0.3)], (0.5, 0.5), 0.5, KernelId::Gaussian).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        assert_eq!(w.eff_n, 1.0);
    }

    #[test]
    fn centered_weights_are_reflection_symmetric() {
        let g = 7;
        let l = build_lattice(g).unwrap();
        for kernel in [KernelId::Gaussian, KernelId::Epanechnikov] {
            let w = kernel_weights(&l, (0.5, 0.5), 0.4, kernel).unwrap();
            for iy in 0..g {
                for ix in 0..g {
                    let a = w.weights[iy * g + ix];
                    let rx = w.weights[iy * g + (g - 1 - ix)];
                    let ry = w.weights[(g - 1 - iy) * g + ix];
                    let tr = w.weights[ix * g + iy];
                    assert!((a - rx).abs() < 1e-15);
                    assert!((a - ry).abs() < 1e-15);
                    assert!((a - tr).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn flat_kernel_limit() {
        let l = build_lattice(20).unwrap();
        let w = kernel_weights(&l, (0.5, 0.5), 1e6, KernelId::Gaussian).unwrap();
        let max_dev = w
            .weights
            .iter()
            .map(|x| (x - 1.0 / 400.0).abs())
            .fold(0.0, f64::max);
        assert!(max_dev <= 1e-8);
        assert!((w.eff_n - 400.0).abs() < 1e-6);
    }

    #[test]
    fn weights_sum_to_one() {
        let l = build_lattice(20).unwrap();
        let w = kernel_weights(&l, (0.3, 0.6), 0.2, KernelId::Epanechnikov).unwrap();
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.eff_n >= 1.0 && w.eff_n <= 400.0);
    }

    #[test]
    fn golden_effective_size() {
        // Independent scalar evaluation of 1/ΣW² with the 1/(2πh²) prefactor kept.
        let g = 20usize;
        let h = 0.5f64;
        let mut raw = Vec::new();
        for iy in 0..g {
            for ix in 0..g {
                let x = ix as f64 / 19.0;
                let y = iy as f64 / 19.0;
                let u2 = ((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5)) / (h * h);
                raw.push((-0.5 * u2).exp() / (2.0 * std::f64::consts::PI * h * h));
            }
        }
        let total: f64 = raw.iter().sum();
        let mut ss = 0.0;
        for r in &raw {
            ss += (r / total) * (r / total);
        }
        let oracle = 1.0 / ss;
        let w = kernel_weights(&build_lattice(20).unwrap(), (0.5, 0.5), 0.5, KernelId::Gaussian).unwrap();
        assert!((w.eff_n - oracle).abs() < 1e-9, "{} vs {}", w.eff_n, oracle);
        assert!((w.eff_n - GOLDEN_EFF_N_20_H05).abs() < 1e-9, "{}", w.eff_n);
    }

    const GOLDEN_EFF_N_20_H05: f64 = 381.3098057920967;

    #[test]
    fn degenerate_bandwidth() {
        let l = build_lattice(5).unwrap();
        // (0.5, 0.5) is itself a site of the 5×5 grid, so one weight survives.
        let w = kernel_weights(&l, (0.5, 0.5), 1e-4, KernelId::Epanechnikov).unwrap();
        assert_eq!(w.eff_n, 1.0);
        let err = kernel_weights(&l, (0.1, 0.1), 1e-4, KernelId::Epanechnikov).unwrap_err();
        assert!(matches!(err, Error::DegenerateBandwidth));
    }

    #[test]
    fn rejects_bad_inputs() {
        let l = build_lattice(5).unwrap();
        assert!(kernel_weights(&l, (0.5, 0.5), 0.0, KernelId::Gaussian).is_err());
        assert!(kernel_weights(&l, (1.5, 0.5), 0.5, KernelId::Gaussian).is_err());
        assert!(effective_sample_size(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn kish_extremes() {
        assert_eq!(effective_sample_size(&[0.25; 4]).unwrap(), 4.0);
        assert_eq!(effective_sample_size(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn site_lookup() {
        let l = build_lattice(20).unwrap();
        assert_eq!(l.site_index(1.0 / 19.0, 0.0, 1e-9), Some(1));
        assert_eq!(l.site_index(1.0, 1.0, 1e-9), Some(399));
        assert_eq!(l.site_index(0.5, 0.5, 1e-9), None);
    }

    fn simplex(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..max_len).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn eff_n_bounds_and_permutation(w in simplex(40), rot in 0usize..40) {
            let n = w.len() as f64;
            let e = effective_sample_size(&w).unwrap();
            prop_assert!(e >= 1.0 - 1e-12 && e <= n + 1e-9);
            let mut r = w.clone();
            r.rotate_left(rot % w.len());
            r.reverse();
            let e2 = effective_sample_size(&r).unwrap();
            prop_assert!((e - e2).abs() <= 1e-12 * e);
        }

        #[test]
        fn weights_ignore_profile_scale(c in 1e-3f64..1e3, h in 0.05f64..2.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let l = build_lattice(6).unwrap();
            let base = kernel_weights(&l, (x, y), h, KernelId::Gaussian).unwrap();
            let raw: Vec<f64> = l.coords().iter().map(|&(sx, sy)| {
                let u = ((sx - x).powi(2) + (sy - y).powi(2)).sqrt() / h;
                c * KernelId::Gaussian.profile(u)
            }).collect();
            let total: f64 = raw.iter().sum();
            for (a, r) in base.weights.iter().zip(&raw) {
                prop_assert!((a - r / total).abs() < 1e-14);
            }
        }

        #[test]
        fn distance_matrix_symmetric(g in 2usize..9) {
            let d = distance_matrix(&build_lattice(g).unwrap());
            for i in 0..d.n() {
                for j in 0..d.n() {
                    prop_assert_eq!(d.get(i, j).to_bits(), d.get(j, i).to_bits());
                }
            }
        }
    }
}
