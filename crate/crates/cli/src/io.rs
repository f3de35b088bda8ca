//! CSV input and output of sampled paths.

use std::fs::File;
use std::path::Path;

use floquet_core::path::{SampledPath, Window};
use floquet_core::{CVector, C64};

use crate::CliError;

/// Samples read from a CSV with a `t` column followed by either `n` real
/// columns or `n` (re, im) column pairs.
#[derive(Clone, Debug)]
pub struct Series {
    pub times: Vec<f64>,
    pub values: Vec<CVector>,
}

impl Series {
    pub fn read(path: &Path, dim: usize) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
        let width = reader
            .headers()
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            .len();
        let complex = match width {
            w if w == 1 + dim => false,
            w if w == 1 + 2 * dim => true,
            w => {
                return Err(CliError::Input(format!(
                    "{}: expected {} or {} columns for dimension {dim}, found {w}",
                    path.display(),
                    1 + dim,
                    1 + 2 * dim
                )))
            }
        };
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let nums: Vec<f64> = record
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Input(format!("{}: row {}: {e}", path.display(), line + 1)))?;
            if let Some(&prev) = times.last() {
                if nums[0] <= prev {
                    return Err(CliError::Input(format!(
                        "{}: times must increase (row {})",
                        path.display(),
                        line + 1
                    )));
                }
            }
            times.push(nums[0]);
            values.push(if complex {
                CVector::from_fn(dim, |i, _| C64::new(nums[1 + 2 * i], nums[2 + 2 * i]))
            } else {
                CVector::from_fn(dim, |i, _| C64::new(nums[1 + i], 0.0))
            });
        }
        if times.len() < 2 {
            return Err(CliError::Input(format!("{}: need at least two samples", path.display())));
        }
        Ok(Self { times, values })
    }

    /// Piecewise-linear interpolant, zero outside the sampled range.
    pub fn eval(&self, t: f64) -> CVector {
        let n = self.values[0].len();
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        if t < first || t > last {
            return CVector::zeros(n);
        }
        let i = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1);
        let (a, b) = (self.times[i - 1], self.times[i]);
        let w = (t - a) / (b - a);
        &self.values[i - 1] * C64::new(1.0 - w, 0.0) + &self.values[i] * C64::new(w, 0.0)
    }

    /// The samples as a path; they must be consecutive grid points.
    pub fn to_path(&self, nt: usize) -> Result<SampledPath, CliError> {
        let window = Window::new(self.times[0], *self.times.last().unwrap(), nt).map_err(|e| CliError::Input(e.to_string()))?;
        if window.len() != self.times.len() || self.times.iter().enumerate().any(|(i, &t)| (window.time(i) - t).abs() > 1e-9) {
            return Err(CliError::Input(format!(
                "trajectory times must be consecutive points of the grid with spacing 1/{nt}"
            )));
        }
        SampledPath::new(window, self.values.clone()).map_err(|e| CliError::Input(e.to_string()))
    }
}

pub fn complex_header(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim)
        .flat_map(|i| [format!("{prefix}{i}_re"), format!("{prefix}{i}_im")])
        .collect()
}

/// Shortest round-trip text; scientific notation outside `[1e-4, 1e6)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) || !x.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub fn complex_fields(v: &CVector) -> Vec<String> {
    v.iter().flat_map(|z| [num(z.re), num(z.im)]).collect()
}

/// CSV writer whose first line names the run it belongs to.
pub struct Table {
    writer: csv::Writer<File>,
}

impl Table {
    pub fn create(path: &Path, run: &str, header: &[String]) -> Result<Self, CliError> {
        use std::io::Write;
        let mut file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        writeln!(file, "# run {run} (see manifest.json)").map_err(|e| CliError::Io(e.to_string()))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.writer.write_record(fields).map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Writes a path as `t` plus (re, im) columns.
pub fn write_path(path: &Path, run: &str, prefix: &str, p: &SampledPath) -> Result<(), CliError> {
    let mut header = vec!["t".to_string()];
    header.extend(complex_header(prefix, p.dim()));
    let mut table = Table::create(path, run, &header)?;
    for (i, v) in p.values.iter().enumerate() {
        let mut row = vec![num(p.window.time(i))];
        row.extend(complex_fields(v));
        table.row(&row)?;
    }
    table.finish()
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
