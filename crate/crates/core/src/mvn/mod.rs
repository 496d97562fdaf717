//! Normal distribution primitives and multivariate normal rectangle
//! probabilities for dimensions 1–4.
//!
//! Bivariate probabilities are computed directly. Three- and
//! four-dimensional probabilities use either recursive conditioning with
//! adaptive Gauss–Kronrod quadrature ([`MvnMethod::Quadrature`], the
//! default, deterministic) or Genz's separation-of-variables transform with
//! randomized lattice rules ([`MvnMethod::Qmc`], reproducible given the seed).
//!
//! Perfectly correlated coordinates are merged before integration, so a
//! correlation of exactly `±1` is handled analytically.

mod bvn;
mod normal;
mod qmc;
pub mod quadrature;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bvn::{bvn_lower, bvn_rect, bvn_upper};
pub use normal::{chi2_survival, f_survival, std_normal_cdf, std_normal_pdf, std_normal_quantile};

/// Default absolute integration tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default seed for randomized integration.
pub const DEFAULT_SEED: u64 = 20_260_301;
pub const MAX_DIM: usize = 4;

const UNIT_EPS: f64 = 1e-12;
const PSD_EPS: f64 = 1e-10;

/// Validated correlation matrix of dimension 1..=4, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if entries.len() != dim * dim {
            return Err(Error::invalid(format!(
                "correlation matrix of dimension {dim} needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("correlation matrix has non-finite entries"));
        }
        for i in 0..dim {
            if (entries[i * dim + i] - 1.0).abs() > UNIT_EPS {
                return Err(Error::invalid(format!("diagonal entry {i} is not 1")));
            }
            for j in (i + 1)..dim {
                let a = entries[i * dim + j];
                if (a - entries[j * dim + i]).abs() > UNIT_EPS {
                    return Err(Error::invalid(format!("correlation matrix not symmetric at ({i}, {j})")));
                }
                if a.abs() > 1.0 + UNIT_EPS {
                    return Err(Error::invalid(format!("correlation {a} at ({i}, {j}) outside [-1, 1]")));
                }
            }
        }
        let min_eig = DMatrix::from_row_slice(dim, dim, &entries)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_EPS {
            return Err(Error::invalid(format!(
                "correlation matrix is not positive semidefinite (smallest eigenvalue {min_eig:e})"
            )));
        }
        let mut entries = entries;
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
            for j in (i + 1)..dim {
                let v = entries[i * dim + j].clamp(-1.0, 1.0);
                entries[i * dim + j] = v;
                entries[j * dim + i] = v;
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut e = vec![0.0; dim * dim];
        for i in 0..dim {
            e[i * dim + i] = 1.0;
        }
        Self::new(dim, e)
    }

    /// Builds a matrix from its strict upper triangle, row by row.
    pub fn from_upper_triangle(dim: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != dim * dim.saturating_sub(1) / 2 {
            return Err(Error::invalid(format!(
                "dimension {dim} needs {} off-diagonal entries, got {}",
                dim * dim.saturating_sub(1) / 2,
                upper.len()
            )));
        }
        let mut e = vec![0.0; dim * dim];
        let mut it = upper.iter();
        for i in 0..dim {
            e[i * dim + i] = 1.0;
            for j in (i + 1)..dim {
                let v = *it.next().expect("length checked");
                e[i * dim + j] = v;
                e[j * dim + i] = v;
            }
        }
        Self::new(dim, e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Joint permutation of rows and columns: new coordinate `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.dim;
        let mut e = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                e[i * d + j] = self.get(perm[i], perm[j]);
            }
        }
        Self::new(d, e)
    }
}

/// Integration route for dimensions 3 and 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MvnMethod {
    #[default]
    Quadrature,
    Qmc,
}

impl std::str::FromStr for MvnMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadrature" => Ok(MvnMethod::Quadrature),
            "qmc" => Ok(MvnMethod::Qmc),
            other => Err(Error::invalid(format!("unknown mvn method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnOptions {
    pub tol: f64,
    pub seed: u64,
    pub method: MvnMethod,
}

impl Default for MvnOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            seed: DEFAULT_SEED,
            method: MvnMethod::Quadrature,
        }
    }
}

impl MvnOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol <= 1e-2) {
            return Err(Error::invalid(format!("mvn tolerance must lie in (0, 1e-2], got {}", self.tol)));
        }
        Ok(())
    }
}

/// `P(Z ≤ upper)` for `Z ~ N(0, corr)`.
#[derive(Debug, Clone, Copy)]
pub struct OrthantQuery<'a> {
    pub upper: &'a [f64],
    pub corr: &'a CorrelationMatrix,
    pub options: MvnOptions,
}

impl<'a> OrthantQuery<'a> {
    pub fn new(upper: &'a [f64], corr: &'a CorrelationMatrix) -> Self {
        Self {
            upper,
            corr,
            options: MvnOptions::default(),
        }
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.options.tol = tol;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.options.seed = seed;
        self
    }

    pub fn method(mut self, method: MvnMethod) -> Self {
        self.options.method = method;
        self
    }
}

pub fn mvn_cdf(q: &OrthantQuery<'_>) -> Result<f64> {
    let lower = vec![f64::NEG_INFINITY; q.upper.len()];
    mvn_rect(&lower, q.upper, q.corr, q.options)
}

/// `P(lower ≤ Z ≤ upper)` for `Z ~ N(0, corr)`.
pub fn mvn_rect(lower: &[f64], upper: &[f64], corr: &CorrelationMatrix, options: MvnOptions) -> Result<f64> {
    options.validate()?;
    let d = corr.dim();
    if lower.len() != d || upper.len() != d {
        return Err(Error::invalid(format!(
            "bounds have length ({}, {}) but the correlation matrix has dimension {d}",
            lower.len(),
            upper.len()
        )));
    }
    if lower.iter().chain(upper).any(|v| v.is_nan()) {
        return Err(Error::invalid("integration bounds contain NaN"));
    }
    let p = match reduce(lower, upper, corr.as_slice()) {
        Reduced::Empty => 0.0,
        Reduced::Full => 1.0,
        Reduced::Problem { lower, upper, corr } => {
            if lower.len() >= 3 && options.method == MvnMethod::Qmc {
                qmc::rect_prob_qmc(&lower, &upper, &corr, options.tol, options.seed).0
            } else {
                rect_prob_reduced(&lower, &upper, &corr, options.tol)
            }
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

pub(crate) enum Reduced {
    Empty,
    Full,
    Problem {
        lower: Vec<f64>,
        upper: Vec<f64>,
        corr: Vec<f64>,
    },
}

/// Drops unconstrained coordinates and merges perfectly (anti)correlated ones.
pub(crate) fn reduce(lower: &[f64], upper: &[f64], corr: &[f64]) -> Reduced {
    let d = lower.len();
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    let mut alive = vec![true; d];
    for i in 0..d {
        if !alive[i] {
            continue;
        }
        for j in (i + 1)..d {
            if !alive[j] {
                continue;
            }
            let r = corr[i * d + j];
            if r >= 1.0 - UNIT_EPS {
                lo[i] = lo[i].max(lo[j]);
                hi[i] = hi[i].min(hi[j]);
                alive[j] = false;
            } else if r <= -1.0 + UNIT_EPS {
                lo[i] = lo[i].max(-hi[j]);
                hi[i] = hi[i].min(-lo[j]);
                alive[j] = false;
            }
        }
    }
    let mut keep = Vec::with_capacity(d);
    for i in 0..d {
        if !alive[i] {
            continue;
        }
        if lo[i] >= hi[i] {
            return Reduced::Empty;
        }
        if lo[i] == f64::NEG_INFINITY && hi[i] == f64::INFINITY {
            continue;
        }
        keep.push(i);
    }
    if keep.is_empty() {
        return Reduced::Full;
    }
    let m = keep.len();
    let mut c = vec![0.0; m * m];
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            c[a * m + b] = corr[i * d + j];
        }
    }
    Reduced::Problem {
        lower: keep.iter().map(|&i| lo[i]).collect(),
        upper: keep.iter().map(|&i| hi[i]).collect(),
        corr: c,
    }
}

/// Deterministic evaluation of a reduced problem.
pub(crate) fn rect_prob_reduced(lower: &[f64], upper: &[f64], corr: &[f64], tol: f64) -> f64 {
    match lower.len() {
        1 => (std_normal_cdf(upper[0]) - std_normal_cdf(lower[0])).max(0.0),
        2 => bvn_rect([lower[0], lower[1]], [upper[0], upper[1]], corr[1]),
        _ => quadrature::rect_prob_conditioned(lower, upper, corr, tol),
    }
}
