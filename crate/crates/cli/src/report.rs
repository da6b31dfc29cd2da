//! Result rows, CSV output with a config echo, and CSV comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const HEADER: [&str; 16] = [
    "experiment",
    "k",
    "H",
    "h",
    "m",
    "method",
    "dofs_coarse",
    "dofs_fine",
    "err_l2_rel",
    "err_V_rel",
    "galerkin_residual",
    "quasi_opt_ratio",
    "time_assembly_s",
    "time_correctors_s",
    "time_solve_s",
    "status",
];

/// Columns that identify a row when comparing files.
pub const KEY_COLUMNS: [&str; 7] = ["experiment", "k", "H", "h", "m", "method", "check"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// One solver run.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveRow {
    pub experiment: String,
    pub k: f64,
    pub coarse_h: f64,
    pub fine_h: f64,
    /// Oversampling order, msPG rows only.
    pub m: Option<usize>,
    pub method: String,
    pub dofs_coarse: usize,
    pub dofs_fine: usize,
    pub err_l2_rel: Option<f64>,
    pub err_v_rel: Option<f64>,
    pub galerkin_residual: Option<f64>,
    pub quasi_opt_ratio: Option<f64>,
    pub time_assembly_s: f64,
    pub time_correctors_s: f64,
    pub time_solve_s: f64,
    /// `ok` or `failed: <reason>`.
    pub status: String,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl SolveRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.experiment.clone(),
            self.k.to_string(),
            self.coarse_h.to_string(),
            self.fine_h.to_string(),
            opt(self.m),
            self.method.clone(),
            self.dofs_coarse.to_string(),
            self.dofs_fine.to_string(),
            opt(self.err_l2_rel),
            opt(self.err_v_rel),
            opt(self.galerkin_residual),
            opt(self.quasi_opt_ratio),
            self.time_assembly_s.to_string(),
            self.time_correctors_s.to_string(),
            self.time_solve_s.to_string(),
            self.status.clone(),
        ]
    }

    pub fn failed(&self) -> bool {
        self.status != "ok"
    }
}

/// A generic table: column names plus string records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn from_solve_rows(rows: &[SolveRow]) -> Self {
        let mut t = Self::new(&HEADER);
        t.rows = rows.iter().map(SolveRow::record).collect();
        t
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Writes `# `-prefixed comment lines followed by the CSV body.
    pub fn write(&self, path: &Path, comments: &[String]) -> Result<(), ReportError> {
        let io = |source| ReportError::Io { path: path.display().to_string(), source };
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for c in comments {
            writeln!(file, "# {c}").map_err(io)?;
        }
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |source| ReportError::Csv { path: path.display().to_string(), source };
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let csv_err = |source| ReportError::Csv { path: path.display().to_string(), source };
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(csv_err)?;
        Ok(Self { header, rows })
    }

    fn keyed(&self) -> BTreeMap<String, &Vec<String>> {
        let keys: Vec<usize> = KEY_COLUMNS.iter().filter_map(|k| self.column(k)).collect();
        let mut out = BTreeMap::new();
        for row in &self.rows {
            let key = keys.iter().map(|&i| format!("{}={}", self.header[i], row[i])).collect::<Vec<_>>().join(",");
            // repeated keys get an occurrence suffix so that nothing is dropped
            let mut unique = key.clone();
            let mut n = 1;
            while out.contains_key(&unique) {
                n += 1;
                unique = format!("{key}#{n}");
            }
            out.insert(unique, row);
        }
        out
    }
}

/// `|a - b| / max(|a|, |b|)` for numbers, 0/1 for other text.
pub fn relative_delta(a: &str, b: &str) -> f64 {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => {
            if x == y || (x.is_nan() && y.is_nan()) {
                0.0
            } else {
                let scale = x.abs().max(y.abs());
                if scale.is_finite() && scale > 0.0 {
                    (x - y).abs() / scale
                } else {
                    f64::INFINITY
                }
            }
        }
        _ if a == b => 0.0,
        _ => 1.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnDelta {
    pub name: String,
    pub max_relative: f64,
    pub differing_rows: usize,
    pub timing: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompareReport {
    pub columns: Vec<ColumnDelta>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub header_mismatch: Option<(Vec<String>, Vec<String>)>,
}

impl CompareReport {
    pub fn keys_match(&self) -> bool {
        self.only_in_a.is_empty() && self.only_in_b.is_empty() && self.header_mismatch.is_none()
    }

    /// Largest delta over columns that are not timings.
    pub fn max_non_timing(&self) -> f64 {
        self.columns.iter().filter(|c| !c.timing).map(|c| c.max_relative).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some((a, b)) = &self.header_mismatch {
            let _ = writeln!(s, "header mismatch:\n  a: {}\n  b: {}", a.join(","), b.join(","));
            return s;
        }
        for k in &self.only_in_a {
            let _ = writeln!(s, "only in a: {k}");
        }
        for k in &self.only_in_b {
            let _ = writeln!(s, "only in b: {k}");
        }
        let _ = writeln!(s, "{:<20} {:>14} {:>8}", "column", "max_rel_delta", "rows");
        for c in &self.columns {
            let tag = if c.timing { " (timing)" } else { "" };
            let _ = writeln!(s, "{:<20} {:>14.6e} {:>8}{tag}", c.name, c.max_relative, c.differing_rows);
        }
        s
    }
}

pub fn compare(a: &Table, b: &Table) -> CompareReport {
    if a.header != b.header {
        return CompareReport { header_mismatch: Some((a.header.clone(), b.header.clone())), ..Default::default() };
    }
    let (ka, kb) = (a.keyed(), b.keyed());
    let only_in_a = ka.keys().filter(|k| !kb.contains_key(*k)).cloned().collect();
    let only_in_b = kb.keys().filter(|k| !ka.contains_key(*k)).cloned().collect();
    let columns = a
        .header
        .iter()
        .enumerate()
        .filter(|(_, name)| !KEY_COLUMNS.contains(&name.as_str()))
        .map(|(i, name)| {
            let deltas: Vec<f64> =
                ka.iter().filter_map(|(key, ra)| kb.get(key).map(|rb| relative_delta(&ra[i], &rb[i]))).collect();
            ColumnDelta {
                name: name.clone(),
                max_relative: deltas.iter().cloned().fold(0.0, f64::max),
                differing_rows: deltas.iter().filter(|&&d| d != 0.0).count(),
                timing: name.starts_with("time_"),
            }
        })
        .collect();
    CompareReport { columns, only_in_a, only_in_b, header_mismatch: None }
}
