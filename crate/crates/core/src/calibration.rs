//! End-to-end calibration with an on-disk cache keyed by a content hash of
//! every parameter that influences the result.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{exact_gamma, satterthwaite_params, CopulaModel, Gamma, GammaOptions, Satterthwaite, ThresholdGrid};
use crate::error::{Error, Result};
use crate::lattice::{build_lattice, distance_matrix, kernel_weights, KernelId, KernelWeights, Lattice};
use crate::mvn::{MvnMethod, MvnOptions, DEFAULT_SEED, DEFAULT_TOL};

pub const CACHE_FORMAT: &str = "spatial-cvm-calibration";
pub const CACHE_VERSION: u32 = 1;

/// Every parameter of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub grid_size: usize,
    pub h: f64,
    pub s0: [f64; 2],
    pub kernel: KernelId,
    pub phi: f64,
    pub rho: f64,
    pub p: usize,
    pub m_per_dim: usize,
    pub k: usize,
    pub mvn_tol: f64,
    pub mvn_method: MvnMethod,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup_quantum: Option<f64>,
}

impl CalibrationConfig {
    /// Configuration at spatial range `phi` with the reference defaults:
    /// 20×20 grid, gaussian kernel with h = 0.5 at (0.5, 0.5), five
    /// thresholds per dimension, ρ = 0.5, p = 2, K = 3.
    pub fn new(phi: f64) -> Self {
        Self {
            grid_size: 20,
            h: 0.5,
            s0: [0.5, 0.5],
            kernel: KernelId::Gaussian,
            phi,
            rho: 0.5,
            p: 2,
            m_per_dim: 5,
            k: 3,
            mvn_tol: DEFAULT_TOL,
            mvn_method: MvnMethod::Quadrature,
            seed: DEFAULT_SEED,
            dedup_quantum: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.grid_size < 2 {
            return bad(format!("grid_size must be at least 2, got {}", self.grid_size));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if !self.s0.iter().all(|c| (0.0..=1.0).contains(c)) {
            return bad(format!("s0 must lie in the unit square, got {:?}", self.s0));
        }
        CopulaModel::new(self.phi, self.rho)?;
        if !(self.p == 1 || self.p == 2) {
            return bad(format!("p must be 1 or 2, got {}", self.p));
        }
        if self.m_per_dim < 1 {
            return bad("m_per_dim must be at least 1".into());
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.mvn_tol > 0.0 && self.mvn_tol <= 1e-2) {
            return bad(format!("mvn_tol must lie in (0, 1e-2], got {}", self.mvn_tol));
        }
        if let Some(q) = self.dedup_quantum {
            if !(q > 0.0 && q.is_finite()) {
                return bad(format!("dedup_quantum must be positive, got {q}"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(format!("{CACHE_FORMAT}/v{CACHE_VERSION}\n").as_bytes());
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn mvn_options(&self) -> MvnOptions {
        MvnOptions {
            tol: self.mvn_tol,
            seed: self.seed,
            method: self.mvn_method,
        }
    }

    pub fn lattice(&self) -> Result<Lattice> {
        build_lattice(self.grid_size)
    }

    pub fn weights(&self, lattice: &Lattice) -> Result<KernelWeights> {
        kernel_weights(lattice, (self.s0[0], self.s0[1]), self.h, self.kernel)
    }

    pub fn grid(&self) -> Result<ThresholdGrid> {
        ThresholdGrid::new(self.p, self.m_per_dim)
    }
}

/// Γ, the retained spectrum and `(a, ν)` for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub format: String,
    pub version: u32,
    pub key: String,
    pub metadata: CalibrationConfig,
    pub eff_n: f64,
    pub m: usize,
    /// Row-major `M × M`.
    pub gamma: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub a: f64,
    pub nu: f64,
}

impl CalibrationResult {
    pub fn gamma(&self) -> Result<Gamma> {
        Gamma::from_row_major(self.m, self.gamma.clone())
    }

    pub fn sum_lambda(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("malformed calibration record: {e}")))?;
        if r.format != CACHE_FORMAT || r.version != CACHE_VERSION {
            return Err(Error::invalid(format!(
                "unsupported calibration record {} v{} (expected {CACHE_FORMAT} v{CACHE_VERSION})",
                r.format, r.version
            )));
        }
        if r.gamma.len() != r.m * r.m {
            return Err(Error::invalid("calibration record has a malformed gamma matrix"));
        }
        r.metadata.validate()?;
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// Computes a calibration without touching the cache.
pub fn compute_calibration(config: &CalibrationConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let lattice = config.lattice()?;
    let dist = distance_matrix(&lattice);
    let weights = config.weights(&lattice)?;
    let grid = config.grid()?;
    let model = CopulaModel::new(config.phi, config.rho)?;
    let gamma = exact_gamma(
        &model,
        &grid,
        &dist,
        &weights,
        GammaOptions {
            mvn: config.mvn_options(),
            dedup_quantum: config.dedup_quantum,
        },
    )?;
    let Satterthwaite { a, nu, eigenvalues } = satterthwaite_params(&gamma, config.k)?;
    Ok(CalibrationResult {
        format: CACHE_FORMAT.to_string(),
        version: CACHE_VERSION,
        key: config.cache_key(),
        metadata: config.clone(),
        eff_n: weights.eff_n,
        m: gamma.m(),
        gamma: gamma.into_vec(),
        eigenvalues,
        a,
        nu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheStatus {
    Hit,
    Miss,
    Disabled,
}

pub fn cache_path(dir: &Path, config: &CalibrationConfig) -> PathBuf {
    dir.join(format!("{}.json", config.cache_key()))
}

/// Calibrates, reusing a cached record when one exists for the same
/// configuration. Cache write failures are logged and otherwise ignored.
pub fn calibrate(config: &CalibrationConfig, cache_dir: Option<&Path>) -> Result<(CalibrationResult, CacheStatus)> {
    config.validate()?;
    let Some(dir) = cache_dir else {
        return Ok((compute_calibration(config)?, CacheStatus::Disabled));
    };
    let path = cache_path(dir, config);
    if path.exists() {
        match CalibrationResult::load(&path) {
            Ok(r) if r.metadata == *config && r.key == config.cache_key() => return Ok((r, CacheStatus::Hit)),
            Ok(_) => log::warn!("cache entry {} does not match its key; recomputing", path.display()),
            Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
        }
    }
    let result = compute_calibration(config)?;
    if let Err(e) = fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).and_then(|_| result.save(&path)) {
        log::warn!("could not write calibration cache: {e}");
    }
    Ok((result, CacheStatus::Miss))
}
