use std::fs::File;
use std::path::{Path, PathBuf};

use super::{ActionHistogram, GradientField, QTrace, RunStatistics, SimilarityReport};
use crate::{Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

fn put<I, T>(w: &mut csv::Writer<File>, path: &Path, record: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(record).map_err(|e| csv_err(path, e))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Row-major matrix with a `c0, c1, ...` header.
pub fn write_similarity_csv(path: &Path, report: &SimilarityReport) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, path, (0..report.pairs).map(|j| format!("c{j}")))?;
    for row in report.matrix.rows() {
        put(&mut w, path, row.iter().map(|v| v.to_string()))?;
    }
    finish(w, path)
}

pub fn write_q_trace_csv(path: &Path, traces: &[QTrace]) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, path, ["step", "probe", "q", "bound"])?;
    for t in traces {
        for (i, q) in t.values.iter().enumerate() {
            put(
                &mut w,
                path,
                [t.step.to_string(), i.to_string(), q.to_string(), t.bound.to_string()],
            )?;
        }
    }
    finish(w, path)
}

pub fn write_histogram_csv(path: &Path, hist: &ActionHistogram) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, path, ["dim", "bin", "lo", "hi", "mass"])?;
    for (d, masses) in hist.mass.iter().enumerate() {
        for (k, m) in masses.iter().enumerate() {
            let (lo, hi) = hist.edges(k);
            put(
                &mut w,
                path,
                [d.to_string(), k.to_string(), lo.to_string(), hi.to_string(), m.to_string()],
            )?;
        }
    }
    finish(w, path)
}

pub fn write_field_csv(path: &Path, field: &GradientField) -> Result<()> {
    let mut w = writer(path)?;
    put(&mut w, path, ["i", "j", "a_x", "a_y", "q", "dq_dx", "dq_dy"])?;
    for p in &field.points {
        put(
            &mut w,
            path,
            [
                p.i.to_string(),
                p.j.to_string(),
                p.a[0].to_string(),
                p.a[1].to_string(),
                p.q.to_string(),
                p.grad[0].to_string(),
                p.grad[1].to_string(),
            ],
        )?;
    }
    finish(w, path)
}

/// One row per window; empty interval cells when only one seed ran.
pub fn write_run_statistics_csv(path: &Path, stats: &RunStatistics) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = [
        "point",
        "episode_end",
        "success_iqm",
        "success_lo",
        "success_hi",
        "fault_iqm",
        "fault_lo",
        "fault_hi",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..stats.per_seed.len()).map(|k| format!("seed{k}_success")));
    put(&mut w, path, &header)?;
    for (k, p) in stats.points.iter().enumerate() {
        let mut row = vec![
            k.to_string(),
            p.episode_end.to_string(),
            p.success_iqm.to_string(),
            opt(p.success_ci.map(|c| c.0)),
            opt(p.success_ci.map(|c| c.1)),
            p.fault_iqm.to_string(),
            opt(p.fault_ci.map(|c| c.0)),
            opt(p.fault_ci.map(|c| c.1)),
        ];
        row.extend(stats.per_seed.iter().map(|c| c.success[k].to_string()));
        put(&mut w, path, &row)?;
    }
    finish(w, path)
}

/// A CSV file held as strings, with line-aware numeric access.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub path: PathBuf,
    pub headers: Vec<String>,
    /// `(line number, cells)`.
    pub rows: Vec<(u64, Vec<String>)>,
}

impl CsvTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 1,
            msg: format!("missing column {name:?}"),
        })
    }

    /// Numeric cell; empty cells read as `None`.
    pub fn number(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let (line, cells) = &self.rows[row];
        let cell = cells[col].trim();
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse::<f64>().map(Some).map_err(|_| Error::Parse {
            path: self.path.clone(),
            line: *line,
            msg: format!("column {:?}: {cell:?} is not a number", self.headers[col]),
        })
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let col = self.column_index(name)?;
        (0..self.rows.len()).map(|r| self.number(r, col)).collect()
    }

    /// Every cell parsed as a number, row-major.
    pub fn matrix(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.rows.len())
            .map(|r| {
                (0..self.headers.len())
                    .map(|c| {
                        self.number(r, c)?.ok_or_else(|| Error::Parse {
                            path: self.path.clone(),
                            line: self.rows[r].0,
                            msg: "empty cell".into(),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// Reads a headed CSV; ragged rows are reported with their line number.
pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(CsvTable {
        path: path.to_path_buf(),
        headers,
        rows,
    })
}
