//! Functional principal components: empirical covariance operators, their
//! eigendecomposition, principal component scores, and the stacked score
//! design used by the regression.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::{center, CurveSet, Grid};
use crate::linalg::{min_symmetric_eigenvalue, sorted_symmetric_eigen};

/// Relative cutoff below which empirical eigenvalues count as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Leading eigenpairs of one predictor's covariance operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub grid: Grid,
    /// Nonincreasing, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// One sampled eigenfunction per eigenvalue, orthonormal under the grid
    /// quadrature.
    pub eigenfunctions: Vec<Vec<f64>>,
}

impl EigenSystem {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The leading `k` pairs.
    pub fn truncated(&self, k: usize) -> Result<EigenSystem> {
        if k > self.k() {
            return Err(Error::domain(format!(
                "cannot truncate {} eigenpairs to {k}",
                self.k()
            )));
        }
        Ok(EigenSystem {
            grid: self.grid.clone(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            eigenfunctions: self.eigenfunctions[..k].to_vec(),
        })
    }

    /// `Σ_k coef_k φ_k(t)` sampled on the grid.
    pub fn combine(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (c, phi) in coef.iter().zip(&self.eigenfunctions) {
            if *c != 0.0 {
                for (o, v) in out.iter_mut().zip(phi) {
                    *o += c * v;
                }
            }
        }
        out
    }

    /// `(φ_1(t_g), …, φ_K(t_g))`.
    pub fn at_index(&self, g: usize) -> Vec<f64> {
        self.eigenfunctions.iter().map(|phi| phi[g]).collect()
    }
}

/// `(1/n) Σ_i x_i(s) x_i(t)` for already-centered curves.
pub fn empirical_covariance(centered: &CurveSet) -> Result<DMatrix<f64>> {
    let n = centered.n();
    if n == 0 {
        return Err(Error::domain("covariance of zero curves"));
    }
    let x = centered.values();
    let mut cov = x.transpose() * x;
    cov /= n as f64;
    Ok(cov)
}

/// Top-`k` eigenpairs of the integral operator with kernel `cov`.
///
/// `n_obs` is the number of curves behind `cov`; at most that many empirical
/// eigenvalues can be positive.
pub fn eigendecompose(cov: &DMatrix<f64>, grid: &Grid, k: usize, n_obs: usize) -> Result<EigenSystem> {
    let g = grid.len();
    if cov.nrows() != g || cov.ncols() != g {
        return Err(Error::dim(format!(
            "covariance is {}x{}, grid has {g} points",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if k == 0 || k > n_obs.min(g) {
        return Err(Error::domain(format!(
            "K = {k} must lie in 1..={} (min of n = {n_obs} and G = {g})",
            n_obs.min(g)
        )));
    }
    let operator = cov * grid.weight();
    let (values, vectors) = sorted_symmetric_eigen(operator);
    let scale = (g as f64).sqrt();
    let functions = (0..k)
        .map(|c| vectors.column(c).iter().map(|v| v * scale).collect())
        .collect();
    finish(grid, values, functions, k)
}

/// Eigensystem straight from centered curves. When there are fewer curves
/// than grid points the `n × n` Gram matrix is decomposed instead of the
/// `G × G` covariance; both give the same nonzero spectrum.
pub fn fpca(centered: &CurveSet, k: usize) -> Result<EigenSystem> {
    let (n, g) = (centered.n(), centered.grid().len());
    if n >= g {
        let cov = empirical_covariance(centered)?;
        let eig = eigendecompose(&cov, centered.grid(), k, n)?;
        if eig.eigenvalues[k - 1] == 0.0 {
            return Err(rank_error(k, &eig.eigenvalues));
        }
        return Ok(eig);
    }
    if k == 0 || k > n {
        return Err(Error::domain(format!("K = {k} must lie in 1..={n}")));
    }
    let grid = centered.grid();
    let x = centered.values();
    let gram = (x * x.transpose()) * (grid.weight() / n as f64);
    let (values, vectors) = sorted_symmetric_eigen(gram);
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) || values[k - 1] < RANK_TOLERANCE * top {
        return Err(rank_error(k, &values));
    }
    let functions = (0..k)
        .map(|c| {
            let mu = values[c];
            let phi = x.transpose() * vectors.column(c) / (n as f64 * mu).sqrt();
            phi.iter().copied().collect()
        })
        .collect();
    finish(grid, values, functions, k)
}

fn rank_error(k: usize, values: &[f64]) -> Error {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values.iter().filter(|v| **v > RANK_TOLERANCE * top && **v > 0.0).count();
    Error::domain(format!("K = {k} exceeds the numerical rank {rank} of the covariance"))
}

fn finish(grid: &Grid, values: Vec<f64>, mut functions: Vec<Vec<f64>>, k: usize) -> Result<EigenSystem> {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let eigenvalues: Vec<f64> = values[..k]
        .iter()
        .map(|&v| if v < RANK_TOLERANCE * top || v < 0.0 { 0.0 } else { v })
        .collect();
    if top > 0.0 && eigenvalues[k - 1] == 0.0 {
        return Err(rank_error(k, &values));
    }
    for phi in functions.iter_mut() {
        normalize_sign(phi);
    }
    Ok(EigenSystem {
        grid: grid.clone(),
        eigenvalues,
        eigenfunctions: functions,
    })
}

/// Flips `phi` so its largest-magnitude entry is positive. Entries within a
/// relative `1e-9` of the maximum count as tied; the earliest one decides.
pub fn normalize_sign(phi: &mut [f64]) {
    let max = phi.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lead = phi.iter().find(|v| v.abs() >= max * (1.0 - 1e-9)).copied();
    if lead.is_some_and(|v| v < 0.0) {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Principal component scores `∫ x_i φ_k` of centered curves, `n × K`.
pub fn scores(centered: &CurveSet, eig: &EigenSystem) -> Result<DMatrix<f64>> {
    if centered.grid() != &eig.grid {
        return Err(Error::dim("curves and eigenfunctions live on different grids"));
    }
    let phi = DMatrix::from_fn(eig.grid.len(), eig.k(), |g, k| eig.eigenfunctions[k][g]);
    Ok(centered.values() * phi * eig.grid.weight())
}

/// The stacked design `Z = (Z_1, …, Z_p)` with `p` blocks of `K` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    z: DMatrix<f64>,
    p: usize,
    k: usize,
}

impl ScoreMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn group(&self, j: usize) -> Range<usize> {
        j * self.k..(j + 1) * self.k
    }

    /// Keeps the leading `k` columns of every block.
    pub fn truncated(&self, k: usize) -> Result<ScoreMatrix> {
        if k == 0 || k > self.k {
            return Err(Error::domain(format!("cannot truncate K = {} to {k}", self.k)));
        }
        let z = DMatrix::from_fn(self.n(), self.p * k, |i, c| {
            self.z[(i, (c / k) * self.k + c % k)]
        });
        Ok(ScoreMatrix { z, p: self.p, k })
    }

    /// Uses an arbitrary `n × pK` matrix as a grouped design.
    pub fn from_matrix(z: DMatrix<f64>, k: usize) -> Result<ScoreMatrix> {
        if k == 0 || !z.ncols().is_multiple_of(k) {
            return Err(Error::dim(format!(
                "{} columns do not split into groups of {k}",
                z.ncols()
            )));
        }
        let p = z.ncols() / k;
        Ok(ScoreMatrix { z, p, k })
    }
}

pub fn assemble_design(blocks: &[DMatrix<f64>]) -> Result<ScoreMatrix> {
    let first = blocks.first().ok_or_else(|| Error::dim("no score blocks"))?;
    let (n, k) = first.shape();
    if let Some(j) = blocks.iter().position(|b| b.shape() != (n, k)) {
        return Err(Error::dim(format!(
            "block {j} is {:?}, expected {n}x{k}",
            blocks[j].shape()
        )));
    }
    let z = DMatrix::from_fn(n, k * blocks.len(), |i, c| blocks[c / k][(i, c % k)]);
    Ok(ScoreMatrix { z, p: blocks.len(), k })
}

/// Per-predictor ingredients needed to turn coefficients back into curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBasis {
    pub label: String,
    pub mean: Vec<f64>,
    pub eigen: EigenSystem,
}

/// Everything derived from the training curves at truncation level `K`.
#[derive(Debug, Clone)]
pub struct Design {
    pub grid: Grid,
    pub predictors: Vec<PredictorBasis>,
    pub scores: ScoreMatrix,
}

impl Design {
    /// Centers every predictor, extracts `k` components each, and stacks the
    /// score blocks in predictor order. Predictors are processed in parallel.
    pub fn from_curves(curves: &[CurveSet], k: usize) -> Result<Design> {
        let first = curves.first().ok_or_else(|| Error::dim("no predictors"))?;
        let grid = first.grid().clone();
        if let Some(c) = curves.iter().find(|c| c.grid() != &grid || c.n() != first.n()) {
            return Err(Error::dim(format!(
                "predictor `{}` does not share the grid and sample size of `{}`",
                c.label(),
                first.label()
            )));
        }
        let parts = curves
            .par_iter()
            .map(|c| {
                let (centered, mean) = center(c)?;
                let eigen = fpca(&centered, k)?;
                let block = scores(&centered, &eigen)?;
                Ok((
                    PredictorBasis {
                        label: c.label().to_string(),
                        mean,
                        eigen,
                    },
                    block,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let (predictors, blocks): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let scores = assemble_design(&blocks)?;
        Ok(Design {
            grid,
            predictors,
            scores,
        })
    }

    pub fn k(&self) -> usize {
        self.scores.k()
    }

    pub fn p(&self) -> usize {
        self.scores.p()
    }

    pub fn truncated(&self, k: usize) -> Result<Design> {
        Ok(Design {
            grid: self.grid.clone(),
            predictors: self
                .predictors
                .iter()
                .map(|b| {
                    Ok(PredictorBasis {
                        label: b.label.clone(),
                        mean: b.mean.clone(),
                        eigen: b.eigen.truncated(k)?,
                    })
                })
                .collect::<Result<_>>()?,
            scores: self.scores.truncated(k)?,
        })
    }

    /// Restricts the design to the listed predictors, in that order.
    pub fn select(&self, predictors: &[usize]) -> Result<Design> {
        if let Some(j) = predictors.iter().find(|&&j| j >= self.p()) {
            return Err(Error::dim(format!("predictor {j} out of range")));
        }
        let k = self.k();
        let cols: Vec<usize> = predictors.iter().flat_map(|&j| j * k..(j + 1) * k).collect();
        let z = crate::linalg::column_subset(self.scores.matrix(), &cols);
        Ok(Design {
            grid: self.grid.clone(),
            predictors: predictors.iter().map(|&j| self.predictors[j].clone()).collect(),
            scores: ScoreMatrix {
                z,
                p: predictors.len(),
                k,
            },
        })
    }
}

/// The `pK × pK` matrix of population score covariances `E ξ_{j1 k1} ξ_{j2 k2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaMatrix {
    pub entries: DMatrix<f64>,
    pub p: usize,
    pub k: usize,
}

/// Builds Λ for predictors `X_i = Σ_j a_ij W_j` over independent latent
/// processes `W_j` that share eigenfunctions and have spectra `κ_jk`, then
/// returns it with its minimum eigenvalue.
///
/// `mixing` is `p × l`; `spectrum` is `l × K'` with `K' >= k`.
pub fn lambda_diagnostic(mixing: &DMatrix<f64>, spectrum: &DMatrix<f64>, k: usize) -> Result<(LambdaMatrix, f64)> {
    let (p, l) = mixing.shape();
    if spectrum.nrows() != l || spectrum.ncols() < k {
        return Err(Error::dim(format!(
            "spectrum is {}x{}, need {l} rows and at least {k} columns",
            spectrum.nrows(),
            spectrum.ncols()
        )));
    }
    if k == 0 || p == 0 {
        return Err(Error::domain("need K >= 1 and at least one predictor"));
    }
    if let Some(v) = spectrum.columns(0, k).iter().find(|v| !(**v > 0.0)) {
        return Err(Error::domain(format!("spectrum entries must be positive, found {v}")));
    }
    let mut entries = DMatrix::zeros(p * k, p * k);
    for i1 in 0..p {
        for i2 in 0..p {
            for kk in 0..k {
                let v: f64 = (0..l)
                    .map(|j| mixing[(i1, j)] * mixing[(i2, j)] * spectrum[(j, kk)])
                    .sum();
                entries[(i1 * k + kk, i2 * k + kk)] = v;
            }
        }
    }
    let min_eig = min_symmetric_eigenvalue(&entries);
    Ok((LambdaMatrix { entries, p, k }, min_eig))
}

/// `κ_jk = k^{-α}` for `l` latent processes.
pub fn power_spectrum(l: usize, k: usize, alpha: f64) -> DMatrix<f64> {
    DMatrix::from_fn(l, k, |_, c| ((c + 1) as f64).powf(-alpha))
}
