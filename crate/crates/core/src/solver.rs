//! Group-SCAD penalized least squares on principal component scores, solved
//! by iterated local quadratic approximation (LQA).
//!
//! Each iteration replaces every group penalty by a quadratic that touches it
//! at the current iterate, which turns the update into a ridge-type solve
//!
//! ```text
//! b⁺ = (ZᵀZ + n R(b))⁻¹ Zᵀ(Y − Ȳ1),   R(b) = diag{ p'_λ(‖b_j‖) / ‖b_j‖ · I_K }.
//! ```
//!
//! That update is a majorize-minimize step for
//! `½‖Y − Ȳ1 − Zb‖² + n Σ_j p_λ(‖b_j‖)` (see [`objective`]), so the objective
//! never increases along the iterates. Groups whose norm falls below the drop
//! threshold are zeroed and stay out for the rest of the fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{Design, PredictorBasis, ScoreMatrix};
use crate::funcdata::{CurveSet, Grid, ResponseVector};
use crate::linalg::{principal_subset, spd_factor, vector_subset};
use crate::scad::{group_norm, scad_derivative, scad_value, ScadParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Principal components kept per predictor.
    pub k: usize,
    pub scad: ScadParams,
    /// Groups with a smaller norm are set to zero and dropped.
    pub drop_threshold: f64,
    pub max_iterations: usize,
    /// Stop once no group moves by more than this (Euclidean norm).
    pub convergence_tol: f64,
    /// Relative diagonal loading used when a solve is singular.
    pub ridge_init: f64,
}

impl FitConfig {
    pub fn new(k: usize, lambda: f64) -> Result<Self> {
        FitConfig {
            k,
            scad: ScadParams::with_lambda(lambda)?,
            drop_threshold: 1e-5,
            max_iterations: 100,
            convergence_tol: 1e-6,
            ridge_init: 1e-8,
        }
        .validated()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        FitConfig {
            scad: ScadParams::new(lambda, self.scad.a())?,
            ..*self
        }
        .validated()
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        FitConfig { k, ..*self }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.k == 0 {
            return Err(Error::domain("K must be at least 1"));
        }
        if !(self.drop_threshold > 0.0 && self.convergence_tol > 0.0) {
            return Err(Error::domain("drop threshold and tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be at least 1"));
        }
        if !(self.ridge_init >= 0.0) {
            return Err(Error::domain("ridge_init must be nonnegative"));
        }
        Ok(self)
    }

    pub fn lambda(&self) -> f64 {
        self.scad.lambda()
    }
}

/// A grouped least-squares problem with its Gram quantities cached, so one
/// design can be solved for many penalties.
#[derive(Debug, Clone)]
pub struct Problem {
    z: DMatrix<f64>,
    y: DVector<f64>,
    gram: DMatrix<f64>,
    zty: DVector<f64>,
    k: usize,
    p: usize,
}

impl Problem {
    pub fn new(scores: &ScoreMatrix, response: &ResponseVector) -> Result<Self> {
        Problem::from_centered(scores, response.centered())
    }

    /// `y` must already be centered.
    pub fn from_centered(scores: &ScoreMatrix, y: DVector<f64>) -> Result<Self> {
        let z = scores.matrix().clone();
        if z.nrows() != y.len() {
            return Err(Error::dim(format!(
                "design has {} rows, response has {}",
                z.nrows(),
                y.len()
            )));
        }
        let gram = z.transpose() * &z;
        let zty = z.transpose() * &y;
        Ok(Problem {
            z,
            y,
            gram,
            zty,
            k: scores.k(),
            p: scores.p(),
        })
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

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn y_centered(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `Y − Ȳ1 − Zb`.
    pub fn residuals(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.z * b
    }

    /// Columns belonging to the listed groups.
    pub fn columns(&self, groups: &[usize]) -> Vec<usize> {
        groups.iter().flat_map(|&j| j * self.k..(j + 1) * self.k).collect()
    }

    /// `max_j ‖Z_jᵀ(Y − Ȳ1)‖ / n`: at or above this penalty level every group
    /// is zero at the origin's first-order conditions.
    pub fn lambda_max(&self) -> f64 {
        (0..self.p)
            .map(|j| group_norm(self.zty.rows(j * self.k, self.k).as_slice()))
            .fold(0.0, f64::max)
            / self.n() as f64
    }

    /// Top of the default λ search: the larger of [`Problem::lambda_max`] and
    /// the largest least-squares group norm.
    ///
    /// `lambda_max` only guarantees an empty model for a descent started at
    /// zero. The LQA here starts from least squares, and any group with
    /// `‖b_j‖ > aλ` sees a zero SCAD derivative and is never shrunk, so the
    /// grid has to reach the least-squares norms to contain the null model.
    pub fn lambda_ceiling(&self, ridge: f64) -> Result<f64> {
        let (b, _) = self.least_squares(ridge)?;
        let ols = (0..self.p)
            .map(|j| group_norm(b.rows(j * self.k, self.k).as_slice()))
            .fold(0.0, f64::max);
        Ok(self.lambda_max().max(ols))
    }

    /// Unpenalized least squares over all groups (ridge-stabilized if needed).
    pub fn least_squares(&self, ridge: f64) -> Result<(DVector<f64>, bool)> {
        let (chol, regularized) = spd_factor(&self.gram, ridge)?;
        Ok((chol.solve(&self.zty), regularized))
    }

    pub fn solve(&self, config: &FitConfig) -> Result<CoefficientFit> {
        solve_lqa(self, config)
    }
}

/// Penalty weights `p'_λ(‖b_j‖)/‖b_j‖`, one per group.
pub fn penalty_weights(b: &DVector<f64>, k: usize, scad: &ScadParams) -> Result<Vec<f64>> {
    (0..b.len() / k)
        .map(|j| {
            let norm = group_norm(b.rows(j * k, k).as_slice());
            if norm == 0.0 {
                Ok(0.0)
            } else {
                Ok(scad_derivative(norm, scad)? / norm)
            }
        })
        .collect()
}

/// `½‖Y − Ȳ1 − Zb‖² + n Σ_j p_λ(‖b_j‖)`, the objective the LQA update
/// descends.
pub fn objective(problem: &Problem, b: &DVector<f64>, scad: &ScadParams) -> Result<f64> {
    let rss = problem.residuals(b).norm_squared();
    let k = problem.k;
    let mut penalty = 0.0;
    for j in 0..problem.p {
        penalty += scad_value(group_norm(b.rows(j * k, k).as_slice()), scad)?;
    }
    Ok(0.5 * rss + problem.n() as f64 * penalty)
}

/// `‖Y − Ȳ1 − Zb‖² + n Σ_j p_λ(‖b_j‖)`, the criterion with an unhalved
/// residual sum of squares.
pub fn criterion(problem: &Problem, b: &DVector<f64>, scad: &ScadParams) -> Result<f64> {
    let half = objective(problem, b, scad)?;
    Ok(half + 0.5 * problem.residuals(b).norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqaStep {
    pub b: DVector<f64>,
    /// The system needed diagonal loading to factor.
    pub regularized: bool,
}

/// One LQA update `(ZᵀZ + nR(b))⁻¹ Zᵀy` on the given columns.
pub fn lqa_step(
    z_active: &DMatrix<f64>,
    y_centered: &DVector<f64>,
    b_current: &DVector<f64>,
    group_size: usize,
    config: &FitConfig,
) -> Result<LqaStep> {
    if z_active.nrows() != y_centered.len() || z_active.ncols() != b_current.len() {
        return Err(Error::dim("design, response and coefficients disagree in size"));
    }
    if group_size == 0 || !b_current.len().is_multiple_of(group_size) {
        return Err(Error::dim("coefficients do not split into whole groups"));
    }
    let gram = z_active.transpose() * z_active;
    let zty = z_active.transpose() * y_centered;
    step_from_gram(&gram, &zty, b_current, z_active.nrows(), group_size, config)
}

fn step_from_gram(
    gram: &DMatrix<f64>,
    zty: &DVector<f64>,
    b: &DVector<f64>,
    n: usize,
    k: usize,
    config: &FitConfig,
) -> Result<LqaStep> {
    let weights = penalty_weights(b, k, &config.scad)?;
    for (j, _) in weights.iter().enumerate() {
        let norm = group_norm(b.rows(j * k, k).as_slice());
        if norm <= config.drop_threshold {
            return Err(Error::domain(format!(
                "group {j} has norm {norm:e}, at or below the drop threshold"
            )));
        }
    }
    let mut system = gram.clone();
    for (j, w) in weights.iter().enumerate() {
        for c in j * k..(j + 1) * k {
            system[(c, c)] += n as f64 * w;
        }
    }
    let (chol, regularized) = spd_factor(&system, config.ridge_init)?;
    Ok(LqaStep {
        b: chol.solve(zty),
        regularized,
    })
}

/// Coefficients of a solved [`Problem`], before they are mapped to curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFit {
    pub b: DVector<f64>,
    /// Indices of groups with nonzero coefficients, ascending.
    pub active: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Some solve needed diagonal loading.
    pub regularized: bool,
    /// Objective after the initializer and after every accepted iterate.
    pub objective_trace: Vec<f64>,
    /// [`criterion`] at the same iterates.
    pub criterion_trace: Vec<f64>,
    /// `p'_λ(‖b̂_j‖)/‖b̂_j‖` at the returned estimate; zero for dropped groups.
    pub penalty_weights: Vec<f64>,
    pub lambda: f64,
}

impl CoefficientFit {
    pub fn group(&self, j: usize, k: usize) -> &[f64] {
        &self.b.as_slice()[j * k..(j + 1) * k]
    }

    /// `R` restricted to the active columns, as its diagonal.
    pub fn active_penalty_diagonal(&self, k: usize) -> Vec<f64> {
        self.active
            .iter()
            .flat_map(|&j| std::iter::repeat_n(self.penalty_weights[j], k))
            .collect()
    }
}

fn solve_lqa(problem: &Problem, config: &FitConfig) -> Result<CoefficientFit> {
    let (k, p, n) = (problem.k, problem.p, problem.n());
    if config.k != k {
        return Err(Error::dim(format!("config K = {} but design has K = {k}", config.k)));
    }
    let (mut b, mut regularized) = problem.least_squares(config.ridge_init)?;
    let mut active = drop_small_groups(&mut b, (0..p).collect(), k, config.drop_threshold);
    let mut trace = vec![objective(problem, &b, &config.scad)?];
    let mut criterion_trace = vec![criterion(problem, &b, &config.scad)?];
    let mut iterations = 0;
    let mut converged = active.is_empty();

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let cols = problem.columns(&active);
        let gram = principal_subset(&problem.gram, &cols);
        let zty = vector_subset(&problem.zty, &cols);
        let current = vector_subset(&b, &cols);
        let step = step_from_gram(&gram, &zty, &current, n, k, config)?;
        regularized |= step.regularized;
        if step.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "LQA iterate became non-finite at iteration {iterations}"
            )));
        }
        let mut change = 0.0_f64;
        for (slot, &j) in active.iter().enumerate() {
            let new = step.b.rows(slot * k, k);
            let old = current.rows(slot * k, k);
            change = change.max((new - old).norm());
            b.rows_mut(j * k, k).copy_from(&new);
        }
        active = drop_small_groups(&mut b, active, k, config.drop_threshold);
        trace.push(objective(problem, &b, &config.scad)?);
        criterion_trace.push(criterion(problem, &b, &config.scad)?);
        converged = change < config.convergence_tol || active.is_empty();
    }

    let penalty_weights = penalty_weights(&b, k, &config.scad)?;
    Ok(CoefficientFit {
        b,
        active,
        iterations,
        converged,
        regularized,
        objective_trace: trace,
        criterion_trace,
        penalty_weights,
        lambda: config.lambda(),
    })
}

fn drop_small_groups(b: &mut DVector<f64>, active: Vec<usize>, k: usize, threshold: f64) -> Vec<usize> {
    active
        .into_iter()
        .filter(|&j| {
            let keep = group_norm(b.rows(j * k, k).as_slice()) > threshold;
            if !keep {
                b.rows_mut(j * k, k).fill(0.0);
            }
            keep
        })
        .collect()
}

/// A fitted multiple functional linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub k: usize,
    pub lambda: f64,
    pub scad_a: f64,
    /// Grouped coefficients `(b_11, …, b_1K, b_21, …, b_pK)`.
    pub b_hat: Vec<f64>,
    /// 0-based indices of selected predictors.
    pub active_set: Vec<usize>,
    pub intercept: f64,
    /// `β̂_j` sampled on the grid; zero curves for dropped predictors.
    pub beta_curves: Vec<Vec<f64>>,
    pub predictors: Vec<PredictorBasis>,
    pub grid: Grid,
    pub iterations: usize,
    pub converged: bool,
    pub regularized: bool,
    pub objective_trace: Vec<f64>,
    pub penalty_weights: Vec<f64>,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.predictors.len()
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.b_hat[j * self.k..(j + 1) * self.k]
    }

    pub fn labels(&self) -> Vec<&str> {
        self.predictors.iter().map(|p| p.label.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fits the model on a prepared design.
pub fn fit(design: &Design, response: &ResponseVector, config: &FitConfig) -> Result<FitResult> {
    let problem = Problem::new(&design.scores, response)?;
    let coef = problem.solve(config)?;
    Ok(assemble(design, response, &coef, config))
}

/// Turns solved coefficients into curves and an intercept.
pub fn assemble(design: &Design, response: &ResponseVector, coef: &CoefficientFit, config: &FitConfig) -> FitResult {
    let k = design.k();
    let beta_curves: Vec<Vec<f64>> = design
        .predictors
        .iter()
        .enumerate()
        .map(|(j, basis)| {
            if coef.active.contains(&j) {
                basis.eigen.combine(coef.group(j, k))
            } else {
                vec![0.0; design.grid.len()]
            }
        })
        .collect();
    let means: Vec<&[f64]> = design.predictors.iter().map(|b| b.mean.as_slice()).collect();
    let a_hat = intercept(response, &beta_curves, &means, &design.grid)
        .expect("curves built on the design grid");
    FitResult {
        k,
        lambda: config.lambda(),
        scad_a: config.scad.a(),
        b_hat: coef.b.iter().copied().collect(),
        active_set: coef.active.clone(),
        intercept: a_hat,
        beta_curves,
        predictors: design.predictors.clone(),
        grid: design.grid.clone(),
        iterations: coef.iterations,
        converged: coef.converged,
        regularized: coef.regularized,
        objective_trace: coef.objective_trace.clone(),
        penalty_weights: coef.penalty_weights.clone(),
    }
}

/// `â = Ȳ − Σ_j ∫ β̂_j X̄_j`.
pub fn intercept(response: &ResponseVector, beta_curves: &[Vec<f64>], means: &[&[f64]], grid: &Grid) -> Result<f64> {
    if beta_curves.len() != means.len() {
        return Err(Error::dim("one mean curve per coefficient curve required"));
    }
    let mut a = response.mean();
    for (beta, mean) in beta_curves.iter().zip(means) {
        a -= grid.inner_product(beta, mean)?;
    }
    Ok(a)
}

/// `Ŷ_i = â + Σ_j ∫ β̂_j X_ij`.
pub fn predict(fit: &FitResult, curves: &[CurveSet]) -> Result<ResponseVector> {
    if curves.len() != fit.p() {
        return Err(Error::dim(format!(
            "model has {} predictors, got {} curve sets",
            fit.p(),
            curves.len()
        )));
    }
    let n = curves.first().map_or(0, |c| c.n());
    let mut yhat = vec![fit.intercept; n];
    for (j, (c, beta)) in curves.iter().zip(&fit.beta_curves).enumerate() {
        if c.grid() != &fit.grid {
            return Err(Error::dim(format!("predictor {j} is not on the training grid")));
        }
        if c.n() != n {
            return Err(Error::dim("curve sets disagree on the number of subjects"));
        }
        if !fit.active_set.contains(&j) {
            continue;
        }
        let beta = DVector::from_column_slice(beta);
        let contrib = c.values() * beta * fit.grid.weight();
        for (y, v) in yhat.iter_mut().zip(contrib.iter()) {
            *y += v;
        }
    }
    ResponseVector::new(yhat)
}
