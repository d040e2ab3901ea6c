use std::path::Path;

use funcreg::fpca::{lambda_diagnostic, power_spectrum};
use funcreg::funcdata::{load_curves, write_curves, Dataset, DatasetDescriptor};
use funcreg::inference::{fit_covariance, pointwise_band};
use funcreg::simgen::{generate_replicate, mixing_matrix, run_scenario, table1_scenarios, write_table_row, SimConfig, TABLE1_HEADER};
use funcreg::solver::predict as predict_responses;
use funcreg::tuning::select;
use funcreg::{Design, Error, FitConfig, NoiseReading, TuningGrid};
use nalgebra::DMatrix;

use crate::output::{parse_list, write_atomic, write_or_stdout, CliError, CliResult, ModelFile, SelectionSummary};
use crate::{BandsArgs, DiagnoseArgs, FitArgs, PredictArgs, SimulateArgs, Table1Args, TableReading};

fn check_level(level: f64) -> CliResult {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::Input(format!("--level must lie in (0, 1), got {level}")))
    }
}

fn load_descriptor(path: Option<&Path>) -> CliResult<Option<DatasetDescriptor>> {
    Ok(path.map(DatasetDescriptor::load).transpose()?)
}

fn tuning_grid(a: &FitArgs) -> CliResult<TuningGrid> {
    let mut grid = TuningGrid::default();
    if let Some(k) = a.k {
        grid.k_values = vec![k];
    } else if let Some(text) = &a.k_grid {
        let mut ks: Vec<usize> = parse_list(text, "K")?;
        ks.sort_unstable();
        ks.dedup();
        grid.k_values = ks;
    }
    if let Some(l) = a.lambda {
        grid.lambda_values = Some(vec![l]);
    } else if let Some(text) = &a.lambda_grid {
        grid.lambda_values = Some(parse_list(text, "lambda")?);
    }
    Ok(grid)
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn mse(yhat: &[f64], y: &[f64]) -> f64 {
    yhat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

pub fn fit(a: &FitArgs) -> CliResult {
    check_level(a.level)?;
    let grid = tuning_grid(a)?;
    let orders = a
        .derivatives
        .as_deref()
        .map(|s| parse_list::<usize>(s, "derivative order"))
        .transpose()?;
    let descriptor = load_descriptor(a.descriptor.as_deref())?;
    let data = load_curves(&a.input, descriptor.as_ref())?;
    let input_predictors = data.curves.len();
    let data = match &orders {
        Some(o) => data.with_derivatives(o)?,
        None => data,
    };
    let (train, test) = match a.split {
        Some(n) => {
            let (train, test) = data.split(n)?;
            (train, Some(test))
        }
        None => (data, None),
    };

    let k_max = grid.k_values.iter().copied().max().unwrap_or(0);
    let design = Design::from_curves(&train.curves, k_max)?;
    let base = FitConfig::new(k_max, 0.0)?;
    std::fs::create_dir_all(&a.out)?;
    let tuning_path = a.out.join("tuning.csv");
    let tuned = match select(&design, &train.response, &grid, &base) {
        Ok(t) => t,
        Err(Error::TuningFailure { table }) => {
            write_atomic(&tuning_path, |w| table.write_csv(w))?;
            return Err(Error::TuningFailure { table }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_atomic(&tuning_path, |w| tuned.selection.table.write_csv(w))?;

    let model = &tuned.fit;
    let labels: Vec<String> = model.labels().iter().map(|s| s.to_string()).collect();
    let covariance = if model.active_set.is_empty() {
        None
    } else {
        Some(fit_covariance(&tuned.selection.problem, &tuned.selection.coef)?)
    };
    if let Some(cov) = &covariance {
        for &j in &model.active_set {
            let band = pointwise_band(model, cov, j, a.level)?;
            let path = a.out.join(format!("band_{}.csv", file_stem(&labels[j])));
            write_atomic(&path, |w| band.write_csv(w))?;
        }
    }
    write_atomic(&a.out.join("coefficients.csv"), |w| {
        writeln!(w, "t,{}", labels.join(","))?;
        for (g, t) in model.grid.points().iter().enumerate() {
            let row: Vec<String> = model.beta_curves.iter().map(|b| b[g].to_string()).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    })?;

    let holdout_mse = match &test {
        Some(test) => {
            let yhat = predict_responses(model, &test.curves)?;
            Some(mse(yhat.as_slice(), test.response.as_slice()))
        }
        None => None,
    };
    let file = ModelFile {
        model: model.clone(),
        derivative_orders: orders,
        physical_grid: train.physical_grid,
        input_predictors,
        n_train: train.n(),
        selection: SelectionSummary {
            k: tuned.selection.k,
            lambda: tuned.selection.lambda,
            gcv: tuned.selection.gcv,
        },
        covariance,
        holdout_mse,
    };
    let json = serde_json::to_string_pretty(&file)?;
    write_atomic(&a.out.join("fit.json"), |w| Ok(w.write_all(json.as_bytes())?))?;

    let active: Vec<&str> = model.active_set.iter().map(|&j| labels[j].as_str()).collect();
    println!("active: {}", active.join(","));
    println!(
        "K={} lambda={:e} gcv={:e} converged={}",
        file.selection.k, file.selection.lambda, file.selection.gcv, model.converged
    );
    if let Some(m) = holdout_mse {
        println!("holdout_mse={m}");
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CliResult {
    let saved = ModelFile::load(&a.model)?;
    let descriptor = load_descriptor(a.descriptor.as_deref())?;
    let data = load_curves(&a.input, descriptor.as_ref())?;
    if data.curves.len() != saved.input_predictors {
        return Err(CliError::Input(format!(
            "model was fitted on {} predictors, input has {}",
            saved.input_predictors,
            data.curves.len()
        )));
    }
    let data = match &saved.derivative_orders {
        Some(orders) => Dataset {
            physical_grid: saved.physical_grid,
            ..data
        }
        .with_derivatives(orders)?,
        None => data,
    };
    let yhat = predict_responses(&saved.model, &data.curves)?;
    let y = data.response.as_slice();
    write_or_stdout(a.out.as_deref(), |w| {
        writeln!(w, "row,y,yhat")?;
        for (i, (obs, fitted)) in y.iter().zip(yhat.as_slice()).enumerate() {
            writeln!(w, "{},{obs},{fitted}", i + 1)?;
        }
        Ok(())
    })?;
    if a.out.is_some() {
        println!("mse={}", mse(yhat.as_slice(), y));
    }
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> CliResult {
    let config = SimConfig {
        n: a.n,
        grid_len: a.grid,
        seed: a.seed,
        ..SimConfig::scenario(a.rho, a.noise, a.noise_reading.into())
    };
    let rep = generate_replicate(&config, a.seed)?;
    write_atomic(&a.write_data, |w| write_curves(w, &rep.curves, &rep.response))?;
    if let Some(path) = &a.truth {
        let grid = rep.curves[0].grid().clone();
        write_atomic(path, |w| {
            writeln!(w, "t,beta1,beta2,beta3,beta4")?;
            for (g, t) in grid.points().iter().enumerate() {
                let row: Vec<String> = rep.true_betas.iter().map(|b| b[g].to_string()).collect();
                writeln!(w, "{t},{}", row.join(","))?;
            }
            Ok(())
        })?;
    }
    println!(
        "wrote {} subjects x {} predictors on {} grid points (sigma = {})",
        config.n,
        rep.curves.len(),
        config.grid_len,
        config.sigma()
    );
    Ok(())
}

pub fn table1(a: &Table1Args) -> CliResult {
    if a.replicates == 0 {
        return Err(CliError::Input("--replicates must be at least 1".into()));
    }
    let readings: &[NoiseReading] = match a.noise_reading {
        TableReading::Sigma => &[NoiseReading::Sigma],
        TableReading::Variance => &[NoiseReading::Variance],
        TableReading::Both => &[NoiseReading::Sigma, NoiseReading::Variance],
    };
    let mut results = Vec::new();
    for &reading in readings {
        for (rho, label) in table1_scenarios() {
            let config = SimConfig {
                replicates: a.replicates,
                seed: a.seed,
                ..SimConfig::scenario(rho, label, reading)
            };
            results.push(run_scenario(&config)?);
        }
    }
    write_or_stdout(a.out.as_deref(), |w| {
        writeln!(w, "{TABLE1_HEADER}")?;
        for r in &results {
            write_table_row(&mut *w, r)?;
        }
        Ok(())
    })
}

pub fn bands(a: &BandsArgs) -> CliResult {
    check_level(a.level)?;
    let saved = ModelFile::load(&a.model)?;
    let labels = saved.model.labels();
    let j = match labels.iter().position(|l| *l == a.predictor) {
        Some(j) => j,
        None => match a.predictor.parse::<usize>() {
            Ok(i) if (1..=labels.len()).contains(&i) => i - 1,
            _ => return Err(CliError::Input(format!("no predictor `{}` in the model", a.predictor))),
        },
    };
    let cov = saved
        .covariance
        .as_ref()
        .ok_or_else(|| CliError::Input("the model has no active predictors".into()))?;
    let band = pointwise_band(&saved.model, cov, j, a.level)?;
    write_or_stdout(a.out.as_deref(), |w| band.write_csv(w))
}

fn parse_mixing(text: &str) -> CliResult<DMatrix<f64>> {
    let rows = text
        .split(';')
        .map(|r| parse_list::<f64>(r, "mixing"))
        .collect::<CliResult<Vec<_>>>()?;
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(CliError::Input("mixing rows differ in length".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

pub fn diagnose_lambda(a: &DiagnoseArgs) -> CliResult {
    if !(a.alpha > 0.0 && a.alpha.is_finite()) {
        return Err(CliError::Input(format!("--alpha must be positive, got {}", a.alpha)));
    }
    if a.k_max == 0 {
        return Err(CliError::Input("--k-max must be at least 1".into()));
    }
    let mixing = match (&a.mixing, a.rho) {
        (Some(text), _) => parse_mixing(text)?,
        (None, Some(rho)) => mixing_matrix(rho),
        (None, None) => return Err(CliError::Input("give --rho or --mixing".into())),
    };
    println!("K,min_eig,scaled,collapsed");
    for k in 1..=a.k_max {
        let spectrum = power_spectrum(mixing.ncols(), k, a.alpha);
        let (_, min_eig) = lambda_diagnostic(&mixing, &spectrum, k)?;
        let scaled = min_eig * (k as f64).powf(a.alpha);
        println!("{k},{min_eig:e},{scaled:.6},{}", scaled < 1e-10);
    }
    Ok(())
}
