use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::LossReport;
use crate::diagnostics::{read_csv_table, EpisodeRecord, QTrace, SimilarityReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Offline,
    Online,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
            Phase::Eval => "eval",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "offline" => Some(Phase::Offline),
            "online" => Some(Phase::Online),
            "eval" => Some(Phase::Eval),
            _ => None,
        }
    }
}

/// One line of `metrics.csv`. Offline rows carry losses only; episode rows
/// carry outcomes as well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub phase: Phase,
    /// Gradient step for offline rows, episode or attempt otherwise.
    pub index: u64,
    pub success: Option<bool>,
    pub fault: Option<bool>,
    pub ret: Option<f64>,
    pub losses: LossReport,
}

pub const METRICS_HEADER: [&str; 13] = [
    "phase",
    "index",
    "success",
    "fault",
    "return",
    "td",
    "cql",
    "reg",
    "critic",
    "actor",
    "bc",
    "entropy",
    "temperature",
];

pub const TIMINGS_HEADER: [&str; 3] = ["phase", "index", "wall_seconds"];

pub const SIMILARITY_SUMMARY_HEADER: [&str; 8] =
    ["step", "mean_abs", "max", "min", "above_1", "above_10", "above_100", "above_1000"];

pub const Q_TRACE_HEADER: [&str; 4] = ["step", "probe", "q", "bound"];

fn flag(b: Option<bool>) -> String {
    b.map_or_else(String::new, |v| u8::from(v).to_string())
}

impl MetricsRow {
    fn cells(&self) -> Vec<String> {
        let l = &self.losses;
        let mut out = vec![
            self.phase.as_str().to_string(),
            self.index.to_string(),
            flag(self.success),
            flag(self.fault),
            self.ret.map_or_else(String::new, |r| r.to_string()),
        ];
        out.extend(
            [l.td, l.cql, l.reg, l.critic, l.actor, l.bc, l.entropy, l.temperature]
                .iter()
                .map(|v| v.to_string()),
        );
        out
    }

    pub fn record(&self) -> Option<EpisodeRecord> {
        Some(EpisodeRecord {
            success: self.success?,
            fault: self.fault?,
        })
    }
}

/// Append-only CSV with a fixed header, written once when the file is new.
pub struct CsvAppender {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvAppender {
    pub fn open(path: &Path, header: &[&str]) -> Result<Self> {
        let fresh = !path.exists();
        if !fresh {
            let table = read_csv_table(path)?;
            if table.headers != header {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: format!("expected header {header:?}, found {:?}", table.headers),
                });
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut out = Self {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(file),
        };
        if fresh {
            out.write(header)?;
        }
        Ok(out)
    }

    /// Opens after removing any previous file.
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if path.exists() {
            std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
        }
        Self::open(path, header)
    }

    pub fn write<I, T>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(cells).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(&self.path, source),
            other => Error::config(format!("{other:?}")),
        })?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn metrics(&mut self, row: &MetricsRow) -> Result<()> {
        self.write(row.cells())
    }

    pub fn timing(&mut self, phase: Phase, index: u64, seconds: f64) -> Result<()> {
        self.write([phase.as_str().to_string(), index.to_string(), format!("{seconds:.6}")])
    }

    pub fn q_trace(&mut self, trace: &QTrace) -> Result<()> {
        for (i, q) in trace.values.iter().enumerate() {
            self.write([
                trace.step.to_string(),
                i.to_string(),
                q.to_string(),
                trace.bound.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn similarity_summary(&mut self, step: u64, r: &SimilarityReport) -> Result<()> {
        let mut cells = vec![
            step.to_string(),
            r.mean_abs.to_string(),
            r.max.to_string(),
            r.min.to_string(),
        ];
        cells.extend(r.above.iter().map(|(_, f)| f.to_string()));
        self.write(cells)
    }
}

/// Reads `metrics.csv` back into rows.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let table = read_csv_table(path)?;
    if table.headers != METRICS_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "not a metrics file".into(),
        });
    }
    let bad = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows = Vec::with_capacity(table.rows.len());
    for (r, (line, cells)) in table.rows.iter().enumerate() {
        let phase = Phase::parse(&cells[0]).ok_or_else(|| bad(*line, format!("unknown phase {:?}", cells[0])))?;
        let index = cells[1]
            .parse::<u64>()
            .map_err(|_| bad(*line, format!("bad index {:?}", cells[1])))?;
        let boolean = |c: usize| -> Result<Option<bool>> {
            match cells[c].as_str() {
                "" => Ok(None),
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                other => Err(bad(*line, format!("bad flag {other:?}"))),
            }
        };
        let num = |c: usize| -> Result<f64> { Ok(table.number(r, c)?.unwrap_or(0.0)) };
        rows.push(MetricsRow {
            phase,
            index,
            success: boolean(2)?,
            fault: boolean(3)?,
            ret: table.number(r, 4)?,
            losses: LossReport {
                td: num(5)?,
                cql: num(6)?,
                reg: num(7)?,
                critic: num(8)?,
                actor: num(9)?,
                bc: num(10)?,
                entropy: num(11)?,
                temperature: num(12)?,
            },
        });
    }
    Ok(rows)
}
