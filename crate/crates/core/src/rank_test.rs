//! Pooled-rank pseudo-observations, the kernel-smoothed empirical copula per
//! field, and the contrast statistic with its scaled chi-square p-value.

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationResult;
use crate::covariance::ThresholdGrid;
use crate::error::{Error, Result};
use crate::lattice::KernelWeights;
use crate::mvn::chi2_survival;

/// `K` fields of `n × p` observations on a shared lattice.
///
/// Values are stored field-major, then site, then variable.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    k: usize,
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl FieldDataset {
    /// Builds a dataset from one row-major `n × p` block per field.
    pub fn new(fields: Vec<Vec<f64>>, n: usize, p: usize) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::InvalidData(format!("need at least two fields, got {}", fields.len())));
        }
        if n == 0 || p == 0 {
            return Err(Error::InvalidData("fields must have at least one site and one variable".into()));
        }
        for (k, f) in fields.iter().enumerate() {
            if f.len() != n * p {
                return Err(Error::InvalidData(format!("field {k} has {} values, expected {}", f.len(), n * p)));
            }
            if let Some(j) = f.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("field {k} has a non-finite value at site {}", j / p)));
            }
        }
        let k = fields.len();
        Ok(Self {
            k,
            n,
            p,
            values: fields.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Row-major `n × p` block of field `k`.
    pub fn field(&self, k: usize) -> &[f64] {
        let len = self.n * self.p;
        &self.values[k * len..(k + 1) * len]
    }

    pub fn value(&self, k: usize, site: usize, var: usize) -> f64 {
        self.field(k)[site * self.p + var]
    }

    /// Column `var` of field `k`.
    pub fn column(&self, k: usize, var: usize) -> Vec<f64> {
        (0..self.n).map(|j| self.value(k, j, var)).collect()
    }

    /// Applies `f` to every value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Dataset with the fields reordered.
    pub fn permute_fields(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k];
        if order.len() != self.k || !order.iter().all(|&i| i < self.k && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::invalid("field order must be a permutation"));
        }
        Self::new(order.iter().map(|&i| self.field(i).to_vec()).collect(), self.n, self.p)
    }
}

/// Pooled pseudo-observations, `(K·n) × p` row-major with entries in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    pub rows: usize,
    pub p: usize,
    pub u: Vec<f64>,
}

impl PseudoObservations {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.u[i * self.p..(i + 1) * self.p]
    }
}

/// Ranks of `x` with ties given their average rank (1-based).
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = 0.5 * ((i + 1 + j) as f64);
        for &t in &idx[i..j] {
            ranks[t] = r;
        }
        i = j;
    }
    ranks
}

/// Componentwise mid-ranks over all fields stacked, divided by `N + 1`.
pub fn pooled_pseudo_obs(data: &FieldDataset) -> PseudoObservations {
    let rows = data.k * data.n;
    let p = data.p;
    let scale = 1.0 / (rows + 1) as f64;
    let mut u = vec![0.0; rows * p];
    for v in 0..p {
        let col: Vec<f64> = (0..rows).map(|i| data.values[i * p + v]).collect();
        for (i, r) in mid_ranks(&col).into_iter().enumerate() {
            u[i * p + v] = r * scale;
        }
    }
    PseudoObservations { rows, p, u }
}

/// `Σ_j W_j · 1{U_j ≤ t_i}` for each threshold point `t_i` of the grid.
///
/// `u_field` is row-major `n × p`.
pub fn smoothed_copula(u_field: &[f64], grid: &ThresholdGrid, weights: &[f64]) -> Vec<f64> {
    let p = grid.p();
    (0..grid.len())
        .map(|i| {
            let t = grid.copula_point(i);
            weights
                .iter()
                .enumerate()
                .filter(|(j, _)| u_field[j * p..(j + 1) * p].iter().zip(t).all(|(u, c)| u <= c))
                .map(|(_, w)| w)
                .sum()
        })
        .collect()
}

/// Contrast statistic `T_n` from per-field smoothed copulas.
///
/// `fhat[k]` holds the `M` values of field `k`. Deviations from the field
/// mean are formed relative to field 0, so identical fields give exactly 0.
pub fn cvm_statistic(fhat: &[Vec<f64>], eff_n: f64) -> Result<f64> {
    let k = fhat.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least two fields, got {k}")));
    }
    let m = fhat[0].len();
    if m == 0 || fhat.iter().any(|f| f.len() != m) {
        return Err(Error::invalid("smoothed copula columns must share a nonzero length"));
    }
    let kf = k as f64;
    let mut total = 0.0;
    for i in 0..m {
        let base = fhat[0][i];
        let mean_dev = fhat.iter().map(|f| f[i] - base).sum::<f64>() / kf;
        for f in fhat {
            let h = (f[i] - base) - mean_dev;
            total += h * h;
        }
    }
    Ok(eff_n * total / (m as f64 * kf))
}

/// Outcome of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub tn: f64,
    pub a: f64,
    pub nu: f64,
    pub p_value: f64,
    pub eff_n: f64,
    /// `M × K`: row `i` lists the smoothed copula of every field at threshold `i`.
    pub copula: Vec<Vec<f64>>,
}

/// A calibration unpacked into the pieces each test run needs.
#[derive(Debug, Clone)]
pub struct PreparedTest {
    grid: ThresholdGrid,
    weights: KernelWeights,
    n: usize,
    k: usize,
    a: f64,
    nu: f64,
}

impl PreparedTest {
    pub fn new(calibration: &CalibrationResult) -> Result<Self> {
        let cfg = &calibration.metadata;
        let lattice = cfg.lattice()?;
        let weights = cfg.weights(&lattice)?;
        let grid = cfg.grid()?;
        if grid.len() != calibration.m {
            return Err(Error::CalibrationMismatch(vec![format!(
                "M (record {}, grid {})",
                calibration.m,
                grid.len()
            )]));
        }
        Ok(Self {
            grid,
            weights,
            n: lattice.len(),
            k: cfg.k,
            a: calibration.a,
            nu: calibration.nu,
        })
    }

    pub fn grid(&self) -> &ThresholdGrid {
        &self.grid
    }

    pub fn weights(&self) -> &KernelWeights {
        &self.weights
    }

    fn check(&self, data: &FieldDataset) -> Result<()> {
        let mut diffs = Vec::new();
        if data.k != self.k {
            diffs.push(format!("K (calibration {}, data {})", self.k, data.k));
        }
        if data.p != self.grid.p() {
            diffs.push(format!("p (calibration {}, data {})", self.grid.p(), data.p));
        }
        if data.n != self.n {
            diffs.push(format!("sites (calibration {}, data {})", self.n, data.n));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::CalibrationMismatch(diffs))
        }
    }

    /// Smoothed copula of every field, `fhat[k][i]`.
    pub fn smoothed_copulas(&self, data: &FieldDataset) -> Result<Vec<Vec<f64>>> {
        self.check(data)?;
        let u = pooled_pseudo_obs(data);
        let len = data.n * data.p;
        Ok((0..data.k)
            .map(|k| smoothed_copula(&u.u[k * len..(k + 1) * len], &self.grid, &self.weights.weights))
            .collect())
    }

    pub fn run(&self, data: &FieldDataset) -> Result<TestResult> {
        let fhat = self.smoothed_copulas(data)?;
        let tn = cvm_statistic(&fhat, self.weights.eff_n)?;
        let copula = (0..self.grid.len()).map(|i| fhat.iter().map(|f| f[i]).collect()).collect();
        Ok(TestResult {
            tn,
            a: self.a,
            nu: self.nu,
            p_value: chi2_survival(tn / self.a, self.nu),
            eff_n: self.weights.eff_n,
            copula,
        })
    }

    /// p-value only, skipping the copula matrix.
    pub fn p_value(&self, data: &FieldDataset) -> Result<f64> {
        let fhat = self.smoothed_copulas(data)?;
        let tn = cvm_statistic(&fhat, self.weights.eff_n)?;
        Ok(chi2_survival(tn / self.a, self.nu))
    }
}

/// Runs the full test of `data` against `calibration`.
pub fn run_test(data: &FieldDataset, calibration: &CalibrationResult) -> Result<TestResult> {
    PreparedTest::new(calibration)?.run(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate, CalibrationConfig};
    use proptest::prelude::*;

    fn ds(fields: Vec<Vec<f64>>, p: usize) -> FieldDataset {
        let n = fields[0].len() / p;
        FieldDataset::new(fields, n, p).unwrap()
    }

    /// Average of the 1-based positions each value would occupy in sorted order.
    fn rank_oracle(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let below = x.iter().filter(|&&w| w < v).count() as f64;
                let equal = x.iter().filter(|&&w| w == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    #[test]
    fn pseudo_obs_examples() {
        let u = pooled_pseudo_obs(&ds(vec![vec![3.0], vec![1.0], vec![2.0]], 1));
        assert_eq!(u.u, vec![0.75, 0.25, 0.5]);
        let u = pooled_pseudo_obs(&ds(vec![vec![1.0], vec![1.0], vec![2.0]], 1));
        assert_eq!(u.u, vec![0.375, 0.375, 0.75]);
    }

    #[test]
    fn smoothed_copula_hand_case() {
        let grid = ThresholdGrid::from_probs(1, vec![0.3, 0.7]).unwrap();
        assert_eq!(smoothed_copula(&[0.25, 0.5], &grid, &[0.5, 0.5]), vec![0.5, 1.0]);
    }

    #[test]
    fn smoothed_copula_one_hot_and_low_values() {
        let grid = ThresholdGrid::new(2, 3).unwrap();
        let u = [0.4, 0.9, 0.01, 0.01];
        let f = smoothed_copula(&u, &grid, &[1.0, 0.0]);
        for i in 0..grid.len() {
            let t = grid.copula_point(i);
            let want = if 0.4 <= t[0] && 0.9 <= t[1] { 1.0 } else { 0.0 };
            assert_eq!(f[i], want);
        }
        let f = smoothed_copula(&u, &grid, &[0.0, 1.0]);
        assert!(f.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn statistic_examples() {
        let t = cvm_statistic(&[vec![0.4], vec![0.6]], 100.0).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        let same = vec![0.1, 0.37, 0.9];
        assert_eq!(cvm_statistic(&[same.clone(), same.clone(), same], 381.3).unwrap(), 0.0);
        assert!(cvm_statistic(&[vec![0.4]], 1.0).is_err());
    }

    fn small_calibration(p: usize) -> CalibrationResult {
        let cfg = CalibrationConfig {
            grid_size: 4,
            p,
            m_per_dim: 3,
            ..CalibrationConfig::new(0.2)
        };
        calibrate(&cfg, None).unwrap().0
    }

    fn sample_fields(k: usize, n: usize, p: usize, seed: u64) -> FieldDataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FieldDataset::new((0..k).map(|_| (0..n * p).map(|_| rng.random::<f64>()).collect()).collect(), n, p).unwrap()
    }

    #[test]
    fn identical_fields_give_zero() {
        let calib = small_calibration(2);
        let one = sample_fields(2, 16, 2, 3).field(0).to_vec();
        let data = FieldDataset::new(vec![one.clone(), one.clone(), one], 16, 2).unwrap();
        let r = run_test(&data, &calib).unwrap();
        assert_eq!(r.tn, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.copula.len(), 9);
    }

    #[test]
    fn monotone_transform_invariance() {
        let calib = small_calibration(2);
        let data = sample_fields(3, 16, 2, 11);
        let a = run_test(&data, &calib).unwrap();
        let b = run_test(&data.map(|v| (3.0 * v).exp() - 7.0), &calib).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatch_lists_fields() {
        let calib = small_calibration(1);
        let data = sample_fields(2, 9, 2, 1);
        match run_test(&data, &calib) {
            Err(Error::CalibrationMismatch(d)) => assert_eq!(d.len(), 3, "{d:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_data() {
        assert!(FieldDataset::new(vec![vec![1.0, f64::NAN], vec![1.0, 2.0]], 2, 1).is_err());
        assert!(FieldDataset::new(vec![vec![1.0, 2.0], vec![1.0]], 2, 1).is_err());
        assert!(FieldDataset::new(vec![vec![1.0]], 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn mid_ranks_match_oracle(x in prop::collection::vec(0u8..6, 1..30)) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            prop_assert_eq!(mid_ranks(&x), rank_oracle(&x));
        }

        #[test]
        fn pseudo_obs_strictly_inside(seed in 0u64..500, k in 2usize..5, n in 1usize..8) {
            let u = pooled_pseudo_obs(&sample_fields(k, n, 2, seed));
            prop_assert!(u.u.iter().all(|&v| v > 0.0 && v < 1.0));
        }

        #[test]
        fn statistic_invariant_to_field_order(seed in 0u64..200) {
            let calib = small_calibration(1);
            let prep = PreparedTest::new(&calib).unwrap();
            let data = sample_fields(3, 16, 1, seed);
            let a = prep.run(&data).unwrap();
            let b = prep.run(&data.permute_fields(&[2, 0, 1]).unwrap()).unwrap();
            prop_assert!((a.tn - b.tn).abs() <= 1e-12 * a.tn.max(1.0));
        }

        #[test]
        fn statistic_scales_with_eff_n(vals in prop::collection::vec(0.0f64..1.0, 6), c in 0.1f64..10.0) {
            let f = vec![vals[..3].to_vec(), vals[3..].to_vec()];
            let t1 = cvm_statistic(&f, 50.0).unwrap();
            let tc = cvm_statistic(&f, 50.0 * c).unwrap();
            prop_assert!((tc - c * t1).abs() <= 1e-12 * tc.max(1.0));
        }

        #[test]
        fn copula_bounded_and_monotone(seed in 0u64..200) {
            let grid = ThresholdGrid::new(2, 4).unwrap();
            let data = sample_fields(2, 10, 2, seed);
            let u = pooled_pseudo_obs(&data);
            let w = vec![0.1; 10];
            let f = smoothed_copula(&u.u[..20], &grid, &w);
            prop_assert!(f.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            for i in 0..grid.len() {
                let (a, b) = (i % 4, i / 4);
                if a + 1 < 4 { prop_assert!(f[i] <= f[i + 1] + 1e-15); }
                if b + 1 < 4 { prop_assert!(f[i] <= f[i + 4] + 1e-15); }
            }
        }
    }
}
