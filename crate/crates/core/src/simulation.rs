//! Log-normal spatially correlated fields and the Monte Carlo size/power
//! study.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{anova_oneway, kruskal_wallis, kw_multivariate, manova_pillai, GroupedSample};
use crate::calibration::{calibrate, CacheStatus, CalibrationConfig};
use crate::error::{Error, Result};
use crate::lattice::{build_lattice, distance_matrix, DistanceMatrix, KernelId};
use crate::mvn::{MvnMethod, DEFAULT_SEED, DEFAULT_TOL};
use crate::rank_test::{FieldDataset, PreparedTest};
use crate::seeds::derive_seed;

/// Diagonal jitter added before factorizing.
pub const JITTER: f64 = 1e-8;

/// `Σ_s ⊗ R_w` with `Σ_s[i,j] = exp(−d_ij/φ)`; rows are site-major with the
/// variable index fastest.
pub fn build_site_covariance(dist: &DistanceMatrix, phi: f64, rho: f64, p: usize) -> Result<DMatrix<f64>> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::invalid(format!("phi must be positive, got {phi}")));
    }
    if !(p == 1 || p == 2) {
        return Err(Error::invalid(format!("p must be 1 or 2, got {p}")));
    }
    let n = dist.n();
    let rw = |a: usize, b: usize| if a == b { 1.0 } else { rho };
    Ok(DMatrix::from_fn(n * p, n * p, |r, c| {
        (-dist.get(r / p, c / p) / phi).exp() * rw(r % p, c % p)
    }))
}

/// Lower Cholesky factor of `sigma + JITTER·I`.
pub fn cholesky_jittered(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::SimulationSetup("covariance matrix is not square".into()));
    }
    let mut s = sigma.clone();
    for i in 0..s.nrows() {
        s[(i, i)] += JITTER;
    }
    s.cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| Error::SimulationSetup("Cholesky factorization failed after jitter".into()))
}

/// Draws `K` fields of `n × p` log-normal observations.
///
/// Field `k` uses the stream `derive_seed(seed, [k])`; field 0 is shifted
/// by `delta` on the log scale in every variable.
pub fn simulate_fields(l: &DMatrix<f64>, k: usize, delta: f64, seed: u64, n: usize, p: usize) -> Result<FieldDataset> {
    if l.nrows() != n * p || !l.is_square() {
        return Err(Error::SimulationSetup(format!(
            "factor is {}×{}, expected {}×{}",
            l.nrows(),
            l.ncols(),
            n * p,
            n * p
        )));
    }
    let fields = (0..k)
        .map(|field| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[field as u64]));
            let z = DVector::from_fn(n * p, |_, _| StandardNormal.sample(&mut rng));
            let shift = if field == 0 { delta } else { 0.0 };
            (l * z).iter().map(|v| (shift + v).exp()).collect()
        })
        .collect();
    FieldDataset::new(fields, n, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CvM")]
    Cvm,
    #[serde(rename = "KW")]
    Kw,
    #[serde(rename = "ANOVA")]
    Anova,
    #[serde(rename = "MANOVA")]
    Manova,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cvm => "CvM",
            Method::Kw => "KW",
            Method::Anova => "ANOVA",
            Method::Manova => "MANOVA",
        }
    }

    pub fn defaults_for(p: usize) -> Vec<Method> {
        if p == 1 {
            vec![Method::Cvm, Method::Kw, Method::Anova]
        } else {
            vec![Method::Cvm, Method::Kw, Method::Manova]
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cvm" => Ok(Method::Cvm),
            "kw" => Ok(Method::Kw),
            "anova" => Ok(Method::Anova),
            "manova" => Ok(Method::Manova),
            _ => Err(Error::invalid(format!("unknown method {s:?} (expected CvM, KW, ANOVA or MANOVA)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub k: usize,
    pub grid_size: usize,
    pub p: usize,
    pub n_replicates: usize,
    pub alpha: f64,
    pub phi: Vec<f64>,
    pub delta: Vec<f64>,
    pub rho: f64,
    pub h: f64,
    pub s0: [f64; 2],
    pub kernel: KernelId,
    pub m_per_dim: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub mvn_tol: f64,
    pub mvn_method: MvnMethod,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self::for_dimension(2)
    }
}

impl SimulationConfig {
    /// The reference study design for `p` variables.
    pub fn for_dimension(p: usize) -> Self {
        Self {
            k: 3,
            grid_size: 20,
            p,
            n_replicates: 500,
            alpha: 0.05,
            phi: vec![0.01, 0.2, 0.5],
            delta: vec![0.0, 0.15, 0.3, 0.45],
            rho: 0.5,
            h: 0.5,
            s0: [0.5, 0.5],
            kernel: KernelId::Gaussian,
            m_per_dim: 5,
            seed: DEFAULT_SEED,
            methods: Method::defaults_for(p),
            mvn_tol: DEFAULT_TOL,
            mvn_method: MvnMethod::Quadrature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_replicates < 1 {
            return bad("n_replicates must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.phi.is_empty() || self.delta.is_empty() || self.methods.is_empty() {
            return bad("phi, delta and methods must be nonempty".into());
        }
        if let Some(d) = self.delta.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return bad(format!("delta values must be nonnegative, got {d}"));
        }
        if self.p == 1 && self.methods.contains(&Method::Manova) {
            return bad("MANOVA needs p = 2".into());
        }
        if self.p == 2 && self.methods.contains(&Method::Anova) {
            return bad("ANOVA is univariate; use MANOVA for p = 2".into());
        }
        for &phi in &self.phi {
            self.calibration_config(phi).validate()?;
        }
        Ok(())
    }

    pub fn calibration_config(&self, phi: f64) -> CalibrationConfig {
        CalibrationConfig {
            grid_size: self.grid_size,
            h: self.h,
            s0: self.s0,
            kernel: self.kernel,
            phi,
            rho: self.rho,
            p: self.p,
            m_per_dim: self.m_per_dim,
            k: self.k,
            mvn_tol: self.mvn_tol,
            mvn_method: self.mvn_method,
            seed: self.seed,
            dedup_quantum: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub phi: f64,
    pub delta: f64,
    pub method: Method,
    pub rejection_rate: f64,
    pub n_effective: usize,
    pub n_failed: usize,
}

/// One row per `(φ, δ, method)`, φ varying fastest, then δ, then method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn get(&self, phi: f64, delta: f64, method: Method) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.phi == phi && r.delta == delta && r.method == method)
    }
}

/// All p-values of one `(φ, δ)` cell, `p_values[method][replicate]`, with
/// `None` where a method failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPValues {
    pub phi: f64,
    pub delta: f64,
    pub p_values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub table: ResultsTable,
    pub cells: Vec<CellPValues>,
    pub cache: Vec<(f64, CacheStatus)>,
}

fn method_p_value(method: Method, data: &FieldDataset, cvm: &PreparedTest) -> Result<f64> {
    match method {
        Method::Cvm => cvm.p_value(data),
        Method::Kw => {
            let s = GroupedSample::from(data);
            if s.p() == 1 {
                kruskal_wallis(&s.variable(0)).map(|r| r.p_value)
            } else {
                kw_multivariate(&s)
            }
        }
        Method::Anova => anova_oneway(&GroupedSample::from(data).variable(0)).map(|r| r.p_value),
        Method::Manova => manova_pillai(&GroupedSample::from(data)).map(|r| r.p_value),
    }
}

/// Runs the study. Calibrations go through the cache in `cache_dir`.
pub fn monte_carlo(config: &SimulationConfig, cache_dir: Option<&Path>) -> Result<SimulationOutput> {
    config.validate()?;
    let lattice = build_lattice(config.grid_size)?;
    let dist = distance_matrix(&lattice);
    let n = lattice.len();
    let mut cells = Vec::new();
    let mut cache = Vec::new();
    for (pi, &phi) in config.phi.iter().enumerate() {
        log::info!("phi = {phi}: calibrating");
        let (calib, status) = calibrate(&config.calibration_config(phi), cache_dir)?;
        cache.push((phi, status));
        let prepared = PreparedTest::new(&calib)?;
        let l = cholesky_jittered(&build_site_covariance(&dist, phi, config.rho, config.p)?)?;
        for (di, &delta) in config.delta.iter().enumerate() {
            log::info!("phi = {phi}, delta = {delta}: {} replicates", config.n_replicates);
            let per_rep: Vec<Vec<Option<f64>>> = (0..config.n_replicates)
                .into_par_iter()
                .map(|rep| -> Result<Vec<Option<f64>>> {
                    let seed = derive_seed(config.seed, &[pi as u64, di as u64, rep as u64]);
                    let data = simulate_fields(&l, config.k, delta, seed, n, config.p)?;
                    Ok(config
                        .methods
                        .iter()
                        .map(|&m| match method_p_value(m, &data, &prepared) {
                            Ok(p) if p.is_finite() => Some(p),
                            Ok(_) => None,
                            Err(e) => {
                                log::debug!("{m} failed on replicate {rep}: {e}");
                                None
                            }
                        })
                        .collect())
                })
                .collect::<Result<_>>()?;
            let p_values = (0..config.methods.len())
                .map(|mi| per_rep.iter().map(|r| r[mi]).collect())
                .collect();
            cells.push(CellPValues { phi, delta, p_values });
        }
    }

    let mut rows = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        for di in 0..config.delta.len() {
            for pi in 0..config.phi.len() {
                let cell = &cells[pi * config.delta.len() + di];
                let ok: Vec<f64> = cell.p_values[mi].iter().flatten().copied().collect();
                let rejected = ok.iter().filter(|&&p| p < config.alpha).count();
                rows.push(ResultRow {
                    phi: cell.phi,
                    delta: cell.delta,
                    method,
                    rejection_rate: if ok.is_empty() { f64::NAN } else { rejected as f64 / ok.len() as f64 },
                    n_effective: ok.len(),
                    n_failed: config.n_replicates - ok.len(),
                });
            }
        }
    }
    Ok(SimulationOutput {
        table: ResultsTable { rows },
        cells,
        cache,
    })
}
