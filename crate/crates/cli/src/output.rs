use std::fmt;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::str::FromStr;

use funcreg::funcdata::PhysicalGrid;
use funcreg::{CoefCovariance, Error, FitResult};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Bad flags or file contents caught before any fitting.
    Input(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input(m) => f.write_str(m),
        }
    }
}

impl CliError {
    /// Machine-readable kind and exit code.
    pub fn classify(&self) -> (&'static str, u8) {
        match self {
            CliError::Input(_) => ("input", 2),
            CliError::Core(e) => match e {
                Error::Dimension(_) => ("dimension", 2),
                Error::Domain(_) => ("invalid_argument", 2),
                Error::Parse { .. } => ("parse", 2),
                Error::Io(_) => ("io", 2),
                Error::Json(_) => ("json", 2),
                Error::Numerical(_) => ("numerical", 1),
                Error::DegenerateFit { .. } => ("degenerate_fit", 1),
                Error::TuningFailure { .. } => ("tuning_failure", 1),
                Error::UndefinedCoverage => ("undefined_coverage", 1),
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn fail(e: &CliError) -> ExitCode {
    let (kind, code) = e.classify();
    let line = serde_json::json!({ "error": kind, "exit_code": code, "message": e.to_string() });
    eprintln!("{line}");
    ExitCode::from(code)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> funcreg::Result<()>) -> CliResult {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).map_err(|e| CliError::Core(Error::Io(e.error)))?;
    Ok(())
}

/// Writes to `path`, or to stdout when there is none.
pub fn write_or_stdout(path: Option<&Path>, fill: impl FnOnce(&mut dyn Write) -> funcreg::Result<()>) -> CliResult {
    match path {
        Some(p) => write_atomic(p, fill),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            fill(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

pub fn parse_list<T: FromStr>(text: &str, what: &str) -> CliResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| CliError::Input(format!("bad {what} value `{s}`"))))
        .collect::<CliResult<Vec<T>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(CliError::Input(format!("empty {what} list")))
            } else {
                Ok(v)
            }
        })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub k: usize,
    pub lambda: f64,
    pub gcv: f64,
}

/// Everything `predict` and `bands` need from a fit.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub model: FitResult,
    /// Derivative orders each raw predictor was expanded into, if any.
    pub derivative_orders: Option<Vec<usize>>,
    pub physical_grid: Option<PhysicalGrid>,
    /// Number of predictors in the input file before expansion.
    pub input_predictors: usize,
    pub n_train: usize,
    pub selection: SelectionSummary,
    pub covariance: Option<CoefCovariance>,
    pub holdout_mse: Option<f64>,
}

impl ModelFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
