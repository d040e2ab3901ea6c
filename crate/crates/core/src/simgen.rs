//! Seeded Monte Carlo design with four correlated functional predictors, two
//! of which carry signal, and the metrics summarizing repeated fits.
//!
//! Latent processes `W_j = Σ_{k≤50} ξ_jk φ_k` with `ξ_jk ~ N(0, k⁻²)` are
//! mixed into `X_1 = W_1 + ρ(W_2 + W_3)`, `X_2 = W_2 + ρ(W_1 + W_3)`,
//! `X_3 = W_3 + ρ(W_1 + W_2)`, `X_4 = W_4`, and `Y = Σ_j ∫ β_j X_j + ε`.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::Design;
use crate::funcdata::{CurveSet, Grid, ResponseVector};
use crate::inference::{decile_points, fit_covariance, pointwise_band, CoverageTally};
use crate::solver::FitConfig;
use crate::tuning::{select, TuningGrid};

/// `φ_1 ≡ 1`, `φ_{k+1}(t) = √2 cos(kπt)`.
pub fn basis(k: usize, t: f64) -> Result<f64> {
    match k {
        0 => Err(Error::domain("basis index starts at 1")),
        1 => Ok(1.0),
        _ => Ok(SQRT_2 * ((k - 1) as f64 * PI * t).cos()),
    }
}

fn basis_unchecked(k: usize, t: f64) -> f64 {
    basis(k, t).expect("basis index >= 1")
}

/// How the scenario's noise label maps to the error standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseReading {
    /// The label is σ.
    Sigma,
    /// The label is σ², so σ = √label.
    Variance,
}

impl NoiseReading {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseReading::Sigma => "sigma",
            NoiseReading::Variance => "variance",
        }
    }
}

impl std::str::FromStr for NoiseReading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(NoiseReading::Sigma),
            "variance" => Ok(NoiseReading::Variance),
            other => Err(Error::domain(format!(
                "noise reading must be `sigma` or `variance`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub rho: f64,
    pub noise_label: f64,
    pub noise_reading: NoiseReading,
    pub grid_len: usize,
    pub n_basis: usize,
    pub true_b1: Vec<f64>,
    pub true_b2: Vec<f64>,
    pub seed: u64,
    pub replicates: usize,
    pub tuning: TuningGrid,
    pub level: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            rho: 0.0,
            noise_label: 0.1,
            noise_reading: NoiseReading::Sigma,
            grid_len: 500,
            n_basis: 50,
            true_b1: vec![-2.0, 1.0, -2.0, 1.0],
            true_b2: vec![1.0, -1.0, 0.5, -0.5],
            seed: 1,
            replicates: 500,
            tuning: TuningGrid::default(),
            level: 0.95,
        }
    }
}

pub const PREDICTORS: usize = 4;

impl SimConfig {
    pub fn scenario(rho: f64, noise_label: f64, reading: NoiseReading) -> Self {
        SimConfig {
            rho,
            noise_label,
            noise_reading: reading,
            ..SimConfig::default()
        }
    }

    pub fn sigma(&self) -> f64 {
        match self.noise_reading {
            NoiseReading::Sigma => self.noise_label,
            NoiseReading::Variance => self.noise_label.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.grid_len < 2 || self.n_basis == 0 {
            return Err(Error::domain("need n >= 2, G >= 2 and at least one basis function"));
        }
        if !(self.noise_label >= 0.0 && self.noise_label.is_finite()) {
            return Err(Error::domain("noise level must be finite and nonnegative"));
        }
        if !self.rho.is_finite() {
            return Err(Error::domain("rho must be finite"));
        }
        if self.true_b1.len() > self.n_basis || self.true_b2.len() > self.n_basis {
            return Err(Error::domain("true coefficients exceed the basis size"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::domain("confidence level must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Rows `a_i` with `X_i = Σ_j a_ij W_j`.
    pub fn mixing(&self) -> DMatrix<f64> {
        mixing_matrix(self.rho)
    }

    /// True coefficient curve `β_j` (0-based `j`) at `t`.
    pub fn beta(&self, j: usize, t: f64) -> f64 {
        let coef: &[f64] = match j {
            0 => &self.true_b1,
            1 => &self.true_b2,
            _ => &[],
        };
        coef.iter()
            .enumerate()
            .map(|(k, b)| b * basis_unchecked(k + 1, t))
            .sum()
    }
}

pub fn mixing_matrix(rho: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, rho, rho, 0.0, //
            rho, 1.0, rho, 0.0, //
            rho, rho, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
}

/// One simulated data set.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub curves: Vec<CurveSet>,
    pub response: ResponseVector,
    /// `Σ_j ∫ β_j X_ij` before noise.
    pub signal: Vec<f64>,
    /// True `β_j` sampled on the grid.
    pub true_betas: Vec<Vec<f64>>,
}

/// Per-replicate seed: independent streams from one scenario seed.
pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

pub fn generate_replicate(config: &SimConfig, seed: u64) -> Result<Replicate> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (n, m) = (config.n, config.n_basis);
    let grid = Grid::new(config.grid_len)?;
    let phi = DMatrix::from_fn(m, grid.len(), |k, g| basis_unchecked(k + 1, grid.points()[g]));

    let mut latent: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, m); PREDICTORS];
    for i in 0..n {
        for w in latent.iter_mut() {
            for k in 0..m {
                let z: f64 = rng.sample(StandardNormal);
                w[(i, k)] = z / (k + 1) as f64;
            }
        }
    }
    let noise: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let mixing = config.mixing();
    let curves = (0..PREDICTORS)
        .map(|j| {
            let mut scores = DMatrix::zeros(n, m);
            for l in 0..PREDICTORS {
                if mixing[(j, l)] != 0.0 {
                    scores += &latent[l] * mixing[(j, l)];
                }
            }
            CurveSet::new(grid.clone(), scores * &phi, format!("X{}", j + 1))
        })
        .collect::<Result<Vec<_>>>()?;

    let true_betas: Vec<Vec<f64>> = (0..PREDICTORS).map(|j| grid.sample(|t| config.beta(j, t))).collect();
    let mut signal = vec![0.0; n];
    for (c, beta) in curves.iter().zip(&true_betas) {
        for (i, s) in signal.iter_mut().enumerate() {
            *s += grid.inner_product(&c.row(i), beta)?;
        }
    }
    let sigma = config.sigma();
    let y = signal.iter().zip(&noise).map(|(s, e)| s + sigma * e).collect();
    Ok(Replicate {
        curves,
        response: ResponseVector::new(y)?,
        signal,
        true_betas,
    })
}

/// Monte Carlo averages for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Mean of `Σ_j ‖β̂_j − β_j‖²`.
    pub mse: f64,
    /// Same for the unpenalized fit on the true predictors only.
    pub omse: f64,
    pub tp: f64,
    pub fp: f64,
    /// `None` if the predictor was never selected.
    pub cov1: Option<f64>,
    pub cov2: Option<f64>,
}

/// What one replicate contributes to [`SimMetrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub sq_error: f64,
    pub oracle_sq_error: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub coverage: [CoverageTally; 2],
    pub k: usize,
    pub lambda: f64,
    pub converged: bool,
    /// Largest increase of the LQA objective between accepted iterates.
    pub max_objective_increase: f64,
}

pub fn run_replicate(config: &SimConfig, index: usize) -> Result<ReplicateOutcome> {
    let rep = generate_replicate(config, replicate_seed(config.seed, index))?;
    let k_max = *config
        .tuning
        .k_values
        .iter()
        .max()
        .ok_or_else(|| Error::domain("empty K grid"))?;
    let design = Design::from_curves(&rep.curves, k_max)?;
    let base = FitConfig::new(k_max, 0.0)?;
    let tuned = select(&design, &rep.response, &config.tuning, &base)?;
    let grid = &design.grid;

    let mut sq_error = 0.0;
    for (est, truth) in tuned.fit.beta_curves.iter().zip(&rep.true_betas) {
        let diff: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
        sq_error += grid.inner_product(&diff, &diff)?;
    }

    let oracle_design = design.select(&[0, 1])?;
    let oracle_grid = TuningGrid {
        lambda_values: Some(vec![0.0]),
        ..config.tuning.clone()
    };
    let oracle = select(&oracle_design, &rep.response, &oracle_grid, &base)?;
    let mut oracle_sq_error = 0.0;
    for (j, est) in oracle.fit.beta_curves.iter().enumerate() {
        let diff: Vec<f64> = est.iter().zip(&rep.true_betas[j]).map(|(a, b)| a - b).collect();
        oracle_sq_error += grid.inner_product(&diff, &diff)?;
    }
    // predictors 3 and 4 are truly zero and the oracle keeps them at zero
    let active = &tuned.fit.active_set;
    let true_positives = active.iter().filter(|&&j| j < 2).count();
    let false_positives = active.len() - true_positives;

    let mut coverage = [CoverageTally::default(); 2];
    if true_positives > 0 {
        let cov = fit_covariance(&tuned.selection.problem, &tuned.selection.coef)?;
        for (j, tally) in coverage.iter_mut().enumerate() {
            if active.contains(&j) {
                let band = pointwise_band(&tuned.fit, &cov, j, config.level)?;
                tally.add_band(&band, |t| config.beta(j, t), &decile_points())?;
            }
        }
    }

    let max_objective_increase = tuned
        .fit
        .objective_trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ReplicateOutcome {
        index,
        sq_error,
        oracle_sq_error,
        true_positives,
        false_positives,
        coverage,
        k: tuned.selection.k,
        lambda: tuned.selection.lambda,
        converged: tuned.fit.converged,
        max_objective_increase,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub rho: f64,
    pub noise_label: f64,
    pub noise_reading: NoiseReading,
    pub sigma: f64,
    pub seed: u64,
    pub metrics: SimMetrics,
    pub completed: usize,
    pub failures: Vec<(usize, String)>,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Runs every replicate (in parallel) and averages in replicate order.
pub fn run_scenario(config: &SimConfig) -> Result<ScenarioResult> {
    config.validate()?;
    let results: Vec<(usize, Result<ReplicateOutcome>)> = (0..config.replicates)
        .into_par_iter()
        .map(|i| (i, run_replicate(config, i)))
        .collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    let metrics = summarize(&outcomes)?;
    Ok(ScenarioResult {
        rho: config.rho,
        noise_label: config.noise_label,
        noise_reading: config.noise_reading,
        sigma: config.sigma(),
        seed: config.seed,
        metrics,
        completed: outcomes.len(),
        failures,
        outcomes,
    })
}

pub fn summarize(outcomes: &[ReplicateOutcome]) -> Result<SimMetrics> {
    if outcomes.is_empty() {
        return Err(Error::Numerical("no replicate completed".into()));
    }
    let count = outcomes.len() as f64;
    let mean = |f: &dyn Fn(&ReplicateOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / count;
    let mut cov = [CoverageTally::default(); 2];
    for o in outcomes {
        cov[0].merge(o.coverage[0]);
        cov[1].merge(o.coverage[1]);
    }
    Ok(SimMetrics {
        mse: mean(&|o| o.sq_error),
        omse: mean(&|o| o.oracle_sq_error),
        tp: mean(&|o| o.true_positives as f64),
        fp: mean(&|o| o.false_positives as f64),
        cov1: cov[0].rate(),
        cov2: cov[1].rate(),
    })
}

/// The six `(ρ, noise label)` scenarios in table order.
pub fn table1_scenarios() -> Vec<(f64, f64)> {
    vec![(0.0, 0.1), (0.2, 0.1), (0.5, 0.1), (0.0, 0.3), (0.2, 0.3), (0.5, 0.3)]
}

pub const TABLE1_HEADER: &str =
    "rho,noise_label,noise_reading,sigma,mse,omse,tp,fp,cov1,cov2,replicates,failures,seed";

pub fn write_table_row(mut out: impl Write, r: &ScenarioResult) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into());
    let m = &r.metrics;
    writeln!(
        out,
        "{},{},{},{:.6},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{}",
        r.rho,
        r.noise_label,
        r.noise_reading.as_str(),
        r.sigma,
        m.mse,
        m.omse,
        m.tp,
        m.fp,
        opt(m.cov1),
        opt(m.cov2),
        r.completed,
        r.failures.len(),
        r.seed
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_examples() {
        assert_eq!(basis(1, 0.37).unwrap(), 1.0);
        assert_eq!(basis(2, 0.0).unwrap(), SQRT_2);
        assert!(basis(3, 0.25).unwrap().abs() < 1e-15);
        assert!(basis(0, 0.5).is_err());
    }

    #[test]
    fn basis_is_orthonormal_on_the_grid() {
        let grid = Grid::new(500).unwrap();
        let sampled: Vec<Vec<f64>> = (1..=50).map(|k| grid.sample(|t| basis_unchecked(k, t))).collect();
        for a in 0..50 {
            for b in 0..50 {
                let ip = grid.inner_product(&sampled[a], &sampled[b]).unwrap();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((ip - target).abs() < 1e-12, "({a}, {b}) -> {ip}");
            }
        }
    }

    #[test]
    fn noise_readings() {
        let mut c = SimConfig::scenario(0.2, 0.09, NoiseReading::Variance);
        assert!((c.sigma() - 0.3).abs() < 1e-15);
        c.noise_reading = NoiseReading::Sigma;
        assert_eq!(c.sigma(), 0.09);
        assert_eq!("variance".parse::<NoiseReading>().unwrap(), NoiseReading::Variance);
        assert!("sd".parse::<NoiseReading>().is_err());
    }

    #[test]
    fn noiseless_response_is_the_quadrature_signal() {
        let config = SimConfig {
            n: 20,
            noise_label: 0.0,
            ..SimConfig::default()
        };
        let rep = generate_replicate(&config, 3).unwrap();
        let grid = rep.curves[0].grid().clone();
        for i in 0..20 {
            let direct: f64 = (0..4)
                .map(|j| grid.inner_product(&rep.curves[j].row(i), &rep.true_betas[j]).unwrap())
                .sum();
            assert!((rep.response.as_slice()[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn replicates_are_reproducible() {
        let config = SimConfig {
            n: 10,
            ..SimConfig::default()
        };
        let a = generate_replicate(&config, 42).unwrap();
        let b = generate_replicate(&config, 42).unwrap();
        let c = generate_replicate(&config, 43).unwrap();
        assert_eq!(a.response, b.response);
        assert_eq!(a.curves, b.curves);
        assert_ne!(a.response, c.response);
    }

    #[test]
    fn true_beta_matches_coefficients() {
        let config = SimConfig::default();
        assert!((config.beta(0, 0.0) - (-2.0 + SQRT_2 - 2.0 * SQRT_2 + SQRT_2)).abs() < 1e-12);
        assert_eq!(config.beta(2, 0.3), 0.0);
        assert_eq!(config.beta(3, 0.7), 0.0);
    }
}
