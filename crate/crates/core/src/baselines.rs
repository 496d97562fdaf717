//! Classical non-spatial comparisons: Kruskal–Wallis, one-way ANOVA and
//! one-way MANOVA with Pillai's trace.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mvn::{chi2_survival, f_survival};
use crate::rank_test::{mid_ranks, FieldDataset};

/// `K` groups of row-major `n_k × p` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    p: usize,
    groups: Vec<Vec<f64>>,
}

impl GroupedSample {
    pub fn new(groups: Vec<Vec<f64>>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("need at least one variable"));
        }
        if groups.len() < 2 {
            return Err(Error::InvalidData(format!("need at least two groups, got {}", groups.len())));
        }
        for (k, g) in groups.iter().enumerate() {
            if g.is_empty() || g.len() % p != 0 {
                return Err(Error::InvalidData(format!("group {k} is empty or not a multiple of p = {p}")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("group {k} has a non-finite value")));
            }
        }
        Ok(Self { p, groups })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(|g| g.len() / self.p).sum()
    }

    /// Variable `var` of every group.
    pub fn variable(&self, var: usize) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| g.iter().skip(var).step_by(self.p).copied().collect())
            .collect()
    }
}

impl From<&FieldDataset> for GroupedSample {
    fn from(d: &FieldDataset) -> Self {
        Self {
            p: d.p(),
            groups: (0..d.k()).map(|k| d.field(k).to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KruskalWallis {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Kruskal–Wallis H with the tie correction always applied.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least two groups, got {k}")));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidData("every group needs at least one observation".into()));
    }
    let pooled: Vec<f64> = groups.concat();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite observation".into()));
    }
    let n = pooled.len();
    if n < k + 1 {
        return Err(Error::InvalidData(format!("need at least {} observations, got {n}", k + 1)));
    }
    let df = (k - 1) as f64;
    let ranks = mid_ranks(&pooled);
    let nf = n as f64;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    let correction = 1.0 - ties / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Ok(KruskalWallis {
            statistic: 0.0,
            df,
            p_value: 1.0,
        });
    }

    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = (12.0 / (nf * (nf + 1.0)) * sum - 3.0 * (nf + 1.0)) / correction;
    let h = h.max(0.0);
    Ok(KruskalWallis {
        statistic: h,
        df,
        p_value: chi2_survival(h, df),
    })
}

/// `min(1, m · min_j p_j)` over `m` p-values.
pub fn bonferroni(p_values: &[f64]) -> f64 {
    let min = p_values.iter().copied().fold(f64::INFINITY, f64::min);
    (min * p_values.len() as f64).min(1.0)
}

/// Per-variable Kruskal–Wallis combined by Bonferroni.
pub fn kw_multivariate(sample: &GroupedSample) -> Result<f64> {
    let p: Vec<f64> = (0..sample.p())
        .map(|v| kruskal_wallis(&sample.variable(v)).map(|r| r.p_value))
        .collect::<Result<_>>()?;
    Ok(bonferroni(&p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anova {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
}

/// One-way ANOVA F test.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<Anova> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least two groups, got {k}")));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidData("every group needs at least one observation".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    if n <= k {
        return Err(Error::InvalidData(format!("need more than {k} observations, got {n}")));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite observation".into()));
    }
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let ssb: f64 = groups.iter().zip(&means).map(|(g, m)| g.len() as f64 * (m - grand).powi(2)).sum();
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    if ssw == 0.0 {
        let (f, p_value) = if ssb > 0.0 { (f64::INFINITY, 0.0) } else { (0.0, 1.0) };
        return Ok(Anova { f, df1, df2, p_value });
    }
    let f = (ssb / df1) / (ssw / df2);
    Ok(Anova {
        f,
        df1,
        df2,
        p_value: f_survival(f, df1, df2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Manova {
    pub pillai: f64,
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
}

/// Between-group (H) and within-group (E) SSCP matrices.
pub fn sscp(sample: &GroupedSample) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = sample.p;
    let n = sample.total() as f64;
    let mut grand = vec![0.0; p];
    for g in &sample.groups {
        for row in g.chunks(p) {
            for (a, v) in grand.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    grand.iter_mut().for_each(|v| *v /= n);
    let mut h = DMatrix::zeros(p, p);
    let mut e = DMatrix::zeros(p, p);
    for g in &sample.groups {
        let nk = (g.len() / p) as f64;
        let mut mean = vec![0.0; p];
        for row in g.chunks(p) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= nk);
        for a in 0..p {
            for b in 0..p {
                h[(a, b)] += nk * (mean[a] - grand[a]) * (mean[b] - grand[b]);
            }
        }
        for row in g.chunks(p) {
            for a in 0..p {
                for b in 0..p {
                    e[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
                }
            }
        }
    }
    (h, e)
}

/// One-way MANOVA with Pillai's trace and its usual F approximation.
pub fn manova_pillai(sample: &GroupedSample) -> Result<Manova> {
    let p = sample.p();
    let k = sample.k();
    let n = sample.total();
    if n < k + p + 1 {
        return Err(Error::InvalidData(format!(
            "need N - K > p for MANOVA (N = {n}, K = {k}, p = {p})"
        )));
    }
    let (h, e) = sscp(sample);
    let total = &h + &e;
    let chol = total
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("H + E is not positive definite".into()))?;
    let scale = total.diagonal().max();
    if chol.l().diagonal().iter().any(|d| d * d <= 1e-12 * scale) {
        return Err(Error::SingularDesign("H + E is numerically singular".into()));
    }
    let v = (chol.solve(&h)).trace().clamp(0.0, p.min(k - 1) as f64);

    let (pf, q, df_res) = (p as f64, (k - 1) as f64, (n - k) as f64);
    let s = pf.min(q);
    let nn = 0.5 * (df_res - pf - 1.0);
    let m = 0.5 * ((pf - q).abs() - 1.0);
    let tmp1 = 2.0 * m + s + 1.0;
    let tmp2 = 2.0 * nn + s + 1.0;
    let df1 = s * tmp1;
    let df2 = s * tmp2;
    let f = if s - v <= 0.0 { f64::INFINITY } else { tmp2 / tmp1 * v / (s - v) };
    Ok(Manova {
        pillai: v,
        f,
        df1,
        df2,
        p_value: f_survival(f, df1, df2),
    })
}
