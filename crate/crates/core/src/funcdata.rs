//! Sampled functional data on a shared grid over `[0, 1]`.
//!
//! Every predictor in a problem is observed at the same `G` equally spaced
//! points. Points sit at cell midpoints `(g + 1/2) / G`, and integrals are
//! Riemann sums with uniform weight `1/G`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    weight: f64,
}

impl Grid {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::domain("grid needs at least one point"));
        }
        let weight = 1.0 / len as f64;
        let points = (0..len).map(|g| (g as f64 + 0.5) * weight).collect();
        Ok(Grid { points, weight })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Quadrature weight, equal to the grid spacing.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Samples `f` at every grid point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points.iter().map(|&t| f(t)).collect()
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.len() {
            return Err(Error::dim(format!(
                "{what} has {len} samples but the grid has {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Riemann sum of a sampled function.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len(), "integrand")?;
        Ok(self.weight * f.iter().sum::<f64>())
    }

    /// L² pairing of two sampled functions.
    pub fn inner_product(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        self.check_len(f.len(), "left operand")?;
        self.check_len(g.len(), "right operand")?;
        Ok(self.weight * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Linear interpolation of a sampled function at `t`, held constant
    /// beyond the outermost points.
    pub fn interpolate(&self, f: &[f64], t: f64) -> Result<f64> {
        self.check_len(f.len(), "sampled function")?;
        let g = self.len();
        let pos = t / self.weight - 0.5;
        if pos <= 0.0 || g == 1 {
            return Ok(f[0]);
        }
        if pos >= (g - 1) as f64 {
            return Ok(f[g - 1]);
        }
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        Ok(f[lo] * (1.0 - frac) + f[lo + 1] * frac)
    }
}

/// `n` curves of one functional predictor, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    grid: Grid,
    values: DMatrix<f64>,
    label: String,
}

impl CurveSet {
    pub fn new(grid: Grid, values: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        grid.check_len(values.ncols(), "curve matrix row")?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (col, row) = (pos / values.nrows(), pos % values.nrows());
            return Err(Error::domain(format!(
                "non-finite curve value at subject {row}, grid index {col}"
            )));
        }
        Ok(CurveSet {
            grid,
            values,
            label: label.into(),
        })
    }

    pub fn from_rows(grid: Grid, rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self> {
        let g = grid.len();
        if let Some(i) = rows.iter().position(|r| r.len() != g) {
            return Err(Error::dim(format!(
                "row {i} has {} samples, expected {g}",
                rows[i].len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), g, |i, j| rows[i][j]);
        CurveSet::new(grid, values, label)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Subjects `start..end`, e.g. for a train/validation split.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.n() || range.start > range.end {
            return Err(Error::dim(format!(
                "row range {range:?} out of bounds for {} curves",
                self.n()
            )));
        }
        let values = self.values.rows(range.start, range.len()).into_owned();
        Ok(CurveSet {
            grid: self.grid.clone(),
            values,
            label: self.label.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseVector {
    values: Vec<f64>,
}

impl ResponseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite response at subject {i}")));
        }
        Ok(ResponseVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `Y - Ȳ1`.
    pub fn centered(&self) -> DVector<f64> {
        let mean = self.mean();
        DVector::from_iterator(self.len(), self.values.iter().map(|v| v - mean))
    }

    pub fn rows(&self, range: std::ops::Range<usize>) -> Result<Self> {
        self.values
            .get(range.clone())
            .map(|v| ResponseVector { values: v.to_vec() })
            .ok_or_else(|| Error::dim(format!("row range {range:?} out of bounds")))
    }
}

/// Row-wise demeaning. Returns the residual curves and the pointwise mean.
pub fn center(curves: &CurveSet) -> Result<(CurveSet, Vec<f64>)> {
    let n = curves.n();
    if n == 0 {
        return Err(Error::domain("cannot center an empty curve set"));
    }
    let mean: Vec<f64> = curves
        .values
        .column_iter()
        .map(|col| col.iter().sum::<f64>() / n as f64)
        .collect();
    let mut values = curves.values.clone();
    for (j, mut col) in values.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let centered = CurveSet {
        grid: curves.grid.clone(),
        values,
        label: curves.label.clone(),
    };
    Ok((centered, mean))
}

/// Numerical derivative of every curve, `order` in 1..=3.
///
/// First derivatives use second-order central differences inside the grid and
/// second-order one-sided stencils at both ends; higher orders repeat the
/// first-derivative operator.
pub fn differentiate(curves: &CurveSet, order: usize) -> Result<CurveSet> {
    if !(1..=3).contains(&order) {
        return Err(Error::domain(format!(
            "derivative order must be 1, 2 or 3, got {order}"
        )));
    }
    let g = curves.grid.len();
    if g < 2 * order + 1 {
        return Err(Error::domain(format!(
            "order-{order} derivative needs at least {} grid points, have {g}",
            2 * order + 1
        )));
    }
    let h = curves.grid.weight();
    let mut values = curves.values.clone();
    let mut scratch = vec![0.0; g];
    for _ in 0..order {
        for mut row in values.row_iter_mut() {
            first_difference(row.iter().copied(), &mut scratch, h);
            for (dst, src) in row.iter_mut().zip(&scratch) {
                *dst = *src;
            }
        }
    }
    let label = format!("{}_d{order}", curves.label);
    CurveSet::new(curves.grid.clone(), values, label)
}

/// One predictor per entry of `orders`: order 0 is the curves themselves,
/// higher orders come from [`differentiate`]. With a physical grid the
/// derivatives are taken in physical units rather than on `[0, 1]`.
pub fn expand_derivatives(curves: &CurveSet, orders: &[usize], physical: Option<PhysicalGrid>) -> Result<Vec<CurveSet>> {
    if orders.is_empty() {
        return Err(Error::domain("no derivative orders requested"));
    }
    let span = match physical {
        Some(p) if p.end != p.start && p.start.is_finite() && p.end.is_finite() => p.end - p.start,
        Some(p) => return Err(Error::domain(format!("degenerate physical grid [{}, {}]", p.start, p.end))),
        None => 1.0,
    };
    orders
        .iter()
        .map(|&order| {
            if order == 0 {
                return Ok(curves.clone().with_label(format!("{}_d0", curves.label)));
            }
            let mut d = differentiate(curves, order)?;
            if span != 1.0 {
                d.values /= span.powi(order as i32);
            }
            Ok(d)
        })
        .collect()
}

fn first_difference(f: impl Iterator<Item = f64>, out: &mut [f64], h: f64) {
    let f: Vec<f64> = f.collect();
    let g = f.len();
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    for i in 1..g - 1 {
        out[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
    out[g - 1] = (3.0 * f[g - 1] - 4.0 * f[g - 2] + f[g - 3]) / (2.0 * h);
}

/// Optional sidecar metadata for a curve CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    /// Predictor names in predictor-index order.
    #[serde(default)]
    pub predictors: Vec<String>,
    /// Physical sampling range (e.g. wavelengths); remapped onto `[0, 1]`.
    #[serde(default)]
    pub physical_grid: Option<PhysicalGrid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalGrid {
    pub start: f64,
    pub end: f64,
}

impl DatasetDescriptor {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub curves: Vec<CurveSet>,
    pub response: ResponseVector,
    pub physical_grid: Option<PhysicalGrid>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.response.len()
    }

    /// Replaces every predictor by its derivatives of the given orders,
    /// predictor-major (all orders of the first predictor come first).
    pub fn with_derivatives(&self, orders: &[usize]) -> Result<Dataset> {
        let mut curves = Vec::with_capacity(self.curves.len() * orders.len());
        for c in &self.curves {
            curves.extend(expand_derivatives(c, orders, self.physical_grid)?);
        }
        Ok(Dataset {
            curves,
            response: self.response.clone(),
            physical_grid: self.physical_grid,
        })
    }

    /// First `n_train` subjects and the remainder.
    pub fn split(&self, n_train: usize) -> Result<(Dataset, Dataset)> {
        let n = self.n();
        if n_train == 0 || n_train >= n {
            return Err(Error::domain(format!(
                "split point {n_train} must lie strictly between 0 and {n}"
            )));
        }
        let part = |range: std::ops::Range<usize>| -> Result<Dataset> {
            Ok(Dataset {
                curves: self
                    .curves
                    .iter()
                    .map(|c| c.rows(range.clone()))
                    .collect::<Result<_>>()?,
                response: self.response.rows(range.clone())?,
                physical_grid: self.physical_grid,
            })
        };
        Ok((part(0..n_train)?, part(n_train..n)?))
    }
}

/// Reads a curve CSV: header row required, one `y` column and columns named
/// `x<j>_<g>` for predictor `j` at grid index `g`.
pub fn load_curves(path: impl AsRef<Path>, descriptor: Option<&DatasetDescriptor>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_curves(file, descriptor)
}

pub fn read_curves(reader: impl std::io::Read, descriptor: Option<&DatasetDescriptor>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_err = |message: String| Error::Parse {
        row: 0,
        column: String::from("header"),
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();

    let mut y_col = None;
    // predictor index -> (grid index -> csv column)
    let mut layout: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (col, name) in headers.iter().enumerate() {
        if name == "y" {
            if y_col.replace(col).is_some() {
                return Err(header_err("duplicate `y` column".into()));
            }
            continue;
        }
        let (j, g) = parse_curve_column(name).ok_or_else(|| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: "expected `y` or `x<j>_<g>`".into(),
        })?;
        if layout.entry(j).or_default().insert(g, col).is_some() {
            return Err(header_err(format!("duplicate column `{name}`")));
        }
    }
    let y_col = y_col.ok_or_else(|| Error::Parse {
        row: 0,
        column: "y".into(),
        message: "missing response column".into(),
    })?;
    if layout.is_empty() {
        return Err(header_err("no curve columns".into()));
    }
    let g_len = layout.values().next().map(|m| m.len()).unwrap_or(0);
    for (j, cols) in &layout {
        if cols.len() != g_len {
            return Err(header_err(format!(
                "predictor x{j} has {} grid columns, x{} has {g_len}",
                cols.len(),
                layout.keys().next().unwrap()
            )));
        }
    }

    let mut y = Vec::new();
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); layout.len()];
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("row has {} fields, header has {}", record.len(), headers.len()),
            });
        }
        let cell = |col: usize| -> Result<f64> {
            let raw = &record[col];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: headers[col].to_string(),
                    message: format!("`{raw}` is not a finite number"),
                })
        };
        y.push(cell(y_col)?);
        for (slot, cols) in rows.iter_mut().zip(layout.values()) {
            slot.push(cols.values().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?);
        }
    }

    let grid = Grid::new(g_len)?;
    let curves = rows
        .iter()
        .zip(layout.keys())
        .enumerate()
        .map(|(pos, (r, j))| {
            let label = descriptor
                .and_then(|d| d.predictors.get(pos).cloned())
                .unwrap_or_else(|| format!("x{j}"));
            CurveSet::from_rows(grid.clone(), r, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        curves,
        response: ResponseVector::new(y)?,
        physical_grid: descriptor.and_then(|d| d.physical_grid),
    })
}

fn parse_curve_column(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix('x')?;
    let (j, g) = rest.split_once('_')?;
    Some((j.parse().ok()?, g.parse().ok()?))
}

/// Writes curves and response in the format read by [`load_curves`].
pub fn write_curves(mut out: impl std::io::Write, curves: &[CurveSet], response: &ResponseVector) -> Result<()> {
    let n = response.len();
    if curves.iter().any(|c| c.n() != n) {
        return Err(Error::dim("every curve set must have one row per response"));
    }
    let mut header = vec![String::from("y")];
    for (j, c) in curves.iter().enumerate() {
        header.extend((0..c.grid().len()).map(|g| format!("x{}_{}", j + 1, g + 1)));
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..n {
        let mut line = format!("{:e}", response.as_slice()[i]);
        for c in curves {
            for v in c.values().row(i).iter() {
                line.push(',');
                line.push_str(&format!("{v:e}"));
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
