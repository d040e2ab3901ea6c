//! Generalized cross-validation over the truncation level `K` and the penalty
//! `λ`, with one `K` shared by all predictors.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::Design;
use crate::funcdata::ResponseVector;
use crate::linalg::{principal_subset, spd_factor};
use crate::solver::{assemble, CoefficientFit, FitConfig, FitResult, Problem};

/// `tr(H)` for `H = Z_A (Z_AᵀZ_A + nR)⁻¹ Z_Aᵀ` at the fitted penalty weights,
/// computed as `tr((Z_AᵀZ_A + nR)⁻¹ Z_AᵀZ_A)`.
pub fn hat_trace(problem: &Problem, coef: &CoefficientFit) -> Result<f64> {
    if coef.active.is_empty() {
        return Ok(0.0);
    }
    let cols = problem.columns(&coef.active);
    let gram = principal_subset(problem.gram(), &cols);
    let mut system = gram.clone();
    for (c, r) in coef.active_penalty_diagonal(problem.k()).iter().enumerate() {
        system[(c, c)] += problem.n() as f64 * r;
    }
    let (chol, _) = spd_factor(&system, 1e-8)?;
    Ok(chol.solve(&gram).trace())
}

/// `(1/n)‖Y − Ȳ1 − Ŷ‖² / (1 − tr(H)/n)²`.
pub fn gcv_score(problem: &Problem, coef: &CoefficientFit) -> Result<f64> {
    let n = problem.n();
    let trace = hat_trace(problem, coef)?;
    // an interpolating fit has tr(H) = n up to rounding
    if trace >= n as f64 * (1.0 - 1e-9) {
        return Err(Error::DegenerateFit { trace, n });
    }
    let rss = problem.residuals(&coef.b).norm_squared();
    let shrink = 1.0 - trace / n as f64;
    Ok(rss / n as f64 / (shrink * shrink))
}

/// Search grids. Without explicit `lambda_values`, a log-spaced grid of
/// `n_lambda` points runs from the top `λ` (see [`Problem::lambda_ceiling`])
/// down to `lambda_ratio` times that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub k_values: Vec<usize>,
    pub lambda_values: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub lambda_ratio: f64,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            k_values: (1..=8).collect(),
            lambda_values: None,
            n_lambda: 30,
            lambda_ratio: 1e-3,
        }
    }
}

impl TuningGrid {
    pub fn fixed(k_values: Vec<usize>, lambda_values: Vec<f64>) -> Self {
        TuningGrid {
            k_values,
            lambda_values: Some(lambda_values),
            ..TuningGrid::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::domain("K grid must be nonempty and positive"));
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("K grid must be strictly increasing"));
        }
        if let Some(l) = &self.lambda_values {
            if l.is_empty() || l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::domain("lambda grid must be nonempty and nonnegative"));
            }
        } else if self.n_lambda == 0 || !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return Err(Error::domain("need n_lambda >= 1 and lambda_ratio in (0, 1)"));
        }
        Ok(())
    }

    /// The λ values to search, decreasing.
    pub fn lambdas(&self, lambda_max: f64) -> Vec<f64> {
        if let Some(l) = &self.lambda_values {
            let mut l = l.clone();
            l.sort_by(|a, b| b.total_cmp(a));
            return l;
        }
        if lambda_max <= 0.0 {
            // a response orthogonal to every score: nothing to penalize
            return vec![0.0];
        }
        log_grid(lambda_max, lambda_max * self.lambda_ratio, self.n_lambda)
    }
}

/// `count` log-spaced values from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (lh, ll) = (hi.ln(), lo.ln());
    (0..count)
        .map(|i| (lh + (ll - lh) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub k: usize,
    pub lambda: f64,
    /// `None` when the pair was degenerate or failed.
    pub gcv: Option<f64>,
    pub active: usize,
    pub converged: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuningTable {
    pub rows: Vec<TuningRow>,
}

impl TuningTable {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "K,lambda,gcv,active,converged,note")?;
        for r in &self.rows {
            let gcv = r.gcv.map(|g| format!("{g:e}")).unwrap_or_default();
            let note = r.note.as_deref().unwrap_or("").replace(',', ";");
            writeln!(out, "{},{:e},{gcv},{},{},{note}", r.k, r.lambda, r.active, r.converged)?;
        }
        Ok(())
    }
}

/// Outcome of a GCV search.
#[derive(Debug, Clone)]
pub struct Selection {
    pub k: usize,
    pub lambda: f64,
    pub gcv: f64,
    pub coef: CoefficientFit,
    pub problem: Problem,
    pub config: FitConfig,
    pub table: TuningTable,
}

/// Evaluates every `(K, λ)` pair on prebuilt problems (one per `K`), refitting
/// each pair from the standard initializer. The GCV minimizer wins; ties go
/// to the smaller `K`, then the larger `λ`.
pub fn select_problems(problems: Vec<(usize, Problem)>, grid: &TuningGrid, base: &FitConfig) -> Result<Selection> {
    grid.validate()?;
    if problems.is_empty() {
        return Err(Error::domain("no candidate designs"));
    }
    let mut lambda_max = 0.0_f64;
    if grid.lambda_values.is_none() {
        for (_, p) in &problems {
            lambda_max = lambda_max.max(p.lambda_ceiling(base.ridge_init)?);
        }
    }
    let lambdas = grid.lambdas(lambda_max);
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::Numerical(format!("invalid lambda grid from lambda_max = {lambda_max}")));
    }
    let pairs: Vec<(usize, f64)> = (0..problems.len())
        .flat_map(|i| lambdas.iter().map(move |&l| (i, l)))
        .collect();

    let outcomes: Vec<(TuningRow, Option<CoefficientFit>)> = pairs
        .par_iter()
        .map(|&(i, lambda)| {
            let (k, problem) = &problems[i];
            let attempt = base
                .with_k(*k)
                .and_then(|c| c.with_lambda(lambda))
                .and_then(|c| problem.solve(&c))
                .and_then(|coef| gcv_score(problem, &coef).map(|g| (g, coef)));
            match attempt {
                Ok((g, coef)) if g.is_finite() => (
                    TuningRow {
                        k: *k,
                        lambda,
                        gcv: Some(g),
                        active: coef.active.len(),
                        converged: coef.converged,
                        note: None,
                    },
                    Some(coef),
                ),
                Ok((g, coef)) => (
                    TuningRow {
                        k: *k,
                        lambda,
                        gcv: None,
                        active: coef.active.len(),
                        converged: coef.converged,
                        note: Some(format!("non-finite GCV {g}")),
                    },
                    None,
                ),
                Err(e) => (
                    TuningRow {
                        k: *k,
                        lambda,
                        gcv: None,
                        active: 0,
                        converged: false,
                        note: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (idx, (row, _)) in outcomes.iter().enumerate() {
        if let Some(g) = row.gcv {
            if best.is_none_or(|b| g < outcomes[b].0.gcv.unwrap()) {
                best = Some(idx);
            }
        }
    }
    let table = TuningTable {
        rows: outcomes.iter().map(|(r, _)| r.clone()).collect(),
    };
    let Some(best) = best else {
        return Err(Error::TuningFailure { table: Box::new(table) });
    };
    let (i, lambda) = pairs[best];
    let (mut outcomes, mut problems) = (outcomes, problems);
    let coef = outcomes.swap_remove(best).1.expect("scored pairs keep their fit");
    let (k, problem) = problems.swap_remove(i);
    let config = base.with_k(k)?.with_lambda(lambda)?;
    Ok(Selection {
        k,
        lambda,
        gcv: table.rows[best].gcv.unwrap(),
        coef,
        problem,
        config,
        table,
    })
}

/// A GCV-selected model together with the design it was fitted on.
#[derive(Debug, Clone)]
pub struct TunedFit {
    pub fit: FitResult,
    pub design: Design,
    pub selection: Selection,
}

/// Full GCV search starting from a design built with `K >= max(grid.k_values)`.
pub fn select(design: &Design, response: &ResponseVector, grid: &TuningGrid, base: &FitConfig) -> Result<TunedFit> {
    grid.validate()?;
    let designs = grid
        .k_values
        .iter()
        .map(|&k| design.truncated(k))
        .collect::<Result<Vec<_>>>()?;
    let problems = grid
        .k_values
        .iter()
        .zip(&designs)
        .map(|(&k, d)| Ok((k, Problem::new(&d.scores, response)?)))
        .collect::<Result<Vec<_>>>()?;
    let selection = select_problems(problems, grid, base)?;
    let pos = grid.k_values.iter().position(|&k| k == selection.k).unwrap();
    let design = designs.into_iter().nth(pos).unwrap();
    let fit = assemble(&design, response, &selection.coef, &selection.config);
    Ok(TunedFit { fit, design, selection })
}
