//! Sandwich covariance of the selected coefficient blocks and pointwise
//! confidence bands for the coefficient curves.
//!
//! The bands treat the estimated eigenfunctions as fixed and only cover the
//! truncated coefficient curve, so their actual coverage runs slightly below
//! the nominal level.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::funcdata::Grid;
use crate::linalg::{column_subset, spd_factor, symmetrize};
use crate::solver::{CoefficientFit, FitResult, Problem};

/// Covariance of the nonzero coefficient blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefCovariance {
    /// Predictor index of each block, ascending.
    pub predictors: Vec<usize>,
    /// `K × K` diagonal blocks, row-major.
    pub blocks: Vec<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub full: DMatrix<f64>,
}

impl CoefCovariance {
    pub fn block(&self, j: usize) -> Option<DMatrix<f64>> {
        let slot = self.predictors.iter().position(|&p| p == j)?;
        let rows = &self.blocks[slot];
        Some(DMatrix::from_fn(rows.len(), rows.len(), |r, c| rows[r][c]))
    }
}

/// `(ZᵀZ + nR)⁻¹ Zᵀ diag(e²) Z (ZᵀZ + nR)⁻¹` over the active columns.
///
/// `penalty_diagonal` is the diagonal of `R` on those columns and `k` the
/// block size. `predictors` labels the blocks.
pub fn sandwich_covariance(
    z_active: &DMatrix<f64>,
    penalty_diagonal: &[f64],
    residuals: &DVector<f64>,
    n: usize,
    k: usize,
    predictors: &[usize],
) -> Result<CoefCovariance> {
    let m = z_active.ncols();
    if m == 0 || predictors.is_empty() {
        return Err(Error::domain("no active coefficients to cover"));
    }
    if penalty_diagonal.len() != m || residuals.len() != z_active.nrows() || predictors.len() * k != m {
        return Err(Error::dim("sandwich inputs disagree in size"));
    }
    let mut bread = z_active.transpose() * z_active;
    for (c, r) in penalty_diagonal.iter().enumerate() {
        bread[(c, c)] += n as f64 * r;
    }
    let mut weighted = z_active.clone();
    for (mut row, e) in weighted.row_iter_mut().zip(residuals.iter()) {
        row *= e * e;
    }
    let meat = z_active.transpose() * weighted;
    let (chol, _) = spd_factor(&bread, 1e-8)?;
    let left = chol.solve(&meat);
    let mut full = chol.solve(&left.transpose());
    symmetrize(&mut full);
    let blocks = (0..predictors.len())
        .map(|s| {
            (0..k)
                .map(|r| (0..k).map(|c| full[(s * k + r, s * k + c)]).collect())
                .collect()
        })
        .collect();
    Ok(CoefCovariance {
        predictors: predictors.to_vec(),
        blocks,
        full,
    })
}

/// Sandwich covariance at a converged fit, using residuals
/// `Y − Ȳ1 − Zb̂` and `R(b̂)`.
pub fn fit_covariance(problem: &Problem, coef: &CoefficientFit) -> Result<CoefCovariance> {
    let k = problem.k();
    let cols = problem.columns(&coef.active);
    let z_active = column_subset(problem.z(), &cols);
    let residuals = problem.residuals(&coef.b);
    sandwich_covariance(
        &z_active,
        &coef.active_penalty_diagonal(k),
        &residuals,
        problem.n(),
        k,
        &coef.active,
    )
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub label: String,
    pub grid: Grid,
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub level: f64,
}

impl ConfidenceBand {
    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c - h).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().zip(&self.half_width).map(|(c, h)| c + h).collect()
    }

    /// Whether `value` lies inside the band at `t`, interpolating linearly
    /// between grid points.
    pub fn contains(&self, t: f64, value: f64) -> Result<bool> {
        let c = self.grid.interpolate(&self.center, t)?;
        let h = self.grid.interpolate(&self.half_width, t)?;
        Ok((value - c).abs() <= h)
    }

    /// CSV with columns `t,center,lower,upper`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "t,center,lower,upper")?;
        for (g, t) in self.grid.points().iter().enumerate() {
            let (c, h) = (self.center[g], self.half_width[g]);
            writeln!(out, "{t},{c},{},{}", c - h, c + h)?;
        }
        Ok(())
    }
}

/// Pointwise band `β̂_j(t) ± z_{1−α/2} √(φ̂_j(t)ᵀ Cov(b̂_j) φ̂_j(t))`.
pub fn pointwise_band(fit: &FitResult, cov: &CoefCovariance, j: usize, level: f64) -> Result<ConfidenceBand> {
    if !fit.active_set.contains(&j) {
        return Err(Error::domain(format!("predictor {j} is not in the active set")));
    }
    let block = cov
        .block(j)
        .ok_or_else(|| Error::domain(format!("no covariance block for predictor {j}")))?;
    let eigen = &fit.predictors[j].eigen;
    if block.nrows() != eigen.k() {
        return Err(Error::dim("covariance block and eigensystem disagree on K"));
    }
    let z = normal_quantile(0.5 + level / 2.0)?;
    let half_width = (0..fit.grid.len())
        .map(|g| {
            let phi = DVector::from_vec(eigen.at_index(g));
            z * variance_at(&block, &phi).max(0.0).sqrt()
        })
        .collect();
    Ok(ConfidenceBand {
        label: fit.predictors[j].label.clone(),
        grid: fit.grid.clone(),
        center: fit.beta_curves[j].clone(),
        half_width,
        level,
    })
}

/// `φᵀ C φ`.
pub fn variance_at(block: &DMatrix<f64>, phi: &DVector<f64>) -> f64 {
    (phi.transpose() * block * phi)[(0, 0)]
}

/// The evaluation points `0.1, 0.2, …, 0.9`.
pub fn decile_points() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Running tally of (replicate, point) pairs covered by a band.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageTally {
    pub covered: usize,
    pub evaluated: usize,
}

impl CoverageTally {
    pub fn add_band(&mut self, band: &ConfidenceBand, truth: impl Fn(f64) -> f64, points: &[f64]) -> Result<()> {
        for &t in points {
            self.evaluated += 1;
            if band.contains(t, truth(t))? {
                self.covered += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: CoverageTally) {
        self.covered += other.covered;
        self.evaluated += other.evaluated;
    }

    /// `None` when nothing was evaluated (the predictor was never selected).
    pub fn rate(&self) -> Option<f64> {
        (self.evaluated > 0).then(|| self.covered as f64 / self.evaluated as f64)
    }
}

/// Fraction of (replicate, point) pairs where `truth` lies inside the band,
/// over the replicates in which the predictor was selected (`Some`).
pub fn coverage_eval(
    truth: impl Fn(f64) -> f64,
    bands: &[Option<ConfidenceBand>],
    points: &[f64],
) -> Result<f64> {
    let mut tally = CoverageTally::default();
    for band in bands.iter().flatten() {
        tally.add_band(band, &truth, points)?;
    }
    tally.rate().ok_or(Error::UndefinedCoverage)
}
