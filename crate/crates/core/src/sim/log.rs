//! Trajectory records and their CSV / JSON Lines encodings.
//!
//! Both encodings start with a header block. In CSV it is a run of lines
//! beginning with `# key: value`; in JSON Lines it is the first object, with
//! `"type": "header"`. Floats are written in shortest round-trip form, so a
//! log read back reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::FilterMode;
use crate::model::{RobotPose, SiCommand};

/// Column order of the CSV encoding.
pub const CSV_COLUMNS: [&str; 11] = [
    "t", "id", "x1", "x2", "x3", "ux_hat", "uy_hat", "ux_star", "uy_star", "collide", "e_loss",
];

pub const LOG_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: column '{column}': {message}")]
    Schema {
        line: usize,
        column: String,
        message: String,
    },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("log has no data rows")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: String,
    pub scenario: String,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub dt: f64,
    pub robots: usize,
    /// Indices of virtual robots.
    pub virtual_robots: Vec<usize>,
    pub lookahead: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub mass: f64,
    pub filter: FilterMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotRecord {
    /// Pose at the start of the tick.
    pub pose: RobotPose,
    /// Command requested by the controller.
    pub u_hat: SiCommand,
    /// Command after the safety filter.
    pub u_star: SiCommand,
    pub collide: bool,
    /// Body speed before and after contact resolution (m/s).
    pub v_before: f64,
    pub v_after: f64,
    /// Kinetic energy lost in contacts during the tick (J).
    pub e_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub robots: Vec<RobotRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { tick: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Smallest distance between body centers over the run, `None` for one robot.
    pub min_pair_distance: Option<f64>,
    /// Robot-ticks with the contact indicator set.
    pub contact_events: usize,
    pub robot_contact_events: usize,
    pub wall_contact_events: usize,
    /// Energy lost by robots in robot-robot contacts (J).
    pub robot_contact_loss: f64,
    pub total_energy_loss: f64,
    /// Ticks in which the filter stopped at least one robot.
    pub emergency_stop_ticks: usize,
    pub final_poses: Vec<RobotPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub status: RunStatus,
    pub summary: RunSummary,
}

/// One robot at one tick, the unit of both encodings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub id: usize,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub ux_hat: f64,
    pub uy_hat: f64,
    pub ux_star: f64,
    pub uy_star: f64,
    pub collide: u8,
    pub e_loss: f64,
    /// Present in JSON Lines only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_after: Option<f64>,
}

impl LogRow {
    pub fn pose(&self) -> RobotPose {
        RobotPose {
            x1: self.x1,
            x2: self.x2,
            x3: self.x3,
        }
    }

    pub fn u_star(&self) -> SiCommand {
        SiCommand::new(self.ux_star, self.uy_star)
    }
}

impl TrajectoryLog {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn rows(&self) -> impl Iterator<Item = LogRow> + '_ {
        self.ticks.iter().flat_map(|tick| {
            tick.robots.iter().enumerate().map(move |(id, r)| LogRow {
                t: tick.t,
                id,
                x1: r.pose.x1,
                x2: r.pose.x2,
                x3: r.pose.x3,
                ux_hat: r.u_hat.ux,
                uy_hat: r.u_hat.uy,
                ux_star: r.u_star.ux,
                uy_star: r.u_star.uy,
                collide: r.collide as u8,
                e_loss: r.e_loss,
                v_before: Some(r.v_before),
                v_after: Some(r.v_after),
            })
        })
    }

    /// Header key/value pairs shared by both encodings.
    pub fn header_fields(&self) -> Vec<(&'static str, String)> {
        let h = &self.header;
        let status = match &self.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Aborted { tick, reason } => format!("aborted at tick {tick}: {reason}"),
        };
        vec![
            ("version", h.version.clone()),
            ("scenario", h.scenario.clone()),
            ("config_hash", h.config_hash.clone().unwrap_or_else(|| "none".into())),
            ("seed", h.seed.to_string()),
            ("dt", h.dt.to_string()),
            ("robots", h.robots.to_string()),
            (
                "virtual_robots",
                h.virtual_robots
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            ("lookahead", h.lookahead.to_string()),
            ("v_max", h.v_max.to_string()),
            ("w_max", h.w_max.to_string()),
            ("mass", h.mass.to_string()),
            (
                "filter",
                serde_json::to_value(h.filter)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            ),
            ("status", status),
        ]
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# swarm-safety trajectory log")?;
        for (k, v) in self.header_fields() {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "{}", CSV_COLUMNS.join(","))?;
        for r in self.rows() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.id,
                r.x1,
                r.x2,
                r.x3,
                r.ux_hat,
                r.uy_hat,
                r.ux_star,
                r.uy_star,
                r.collide,
                r.e_loss
            )?;
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut header = serde_json::Map::new();
        header.insert("type".into(), "header".into());
        for (k, v) in self.header_fields() {
            header.insert(k.into(), v.into());
        }
        writeln!(w, "{}", serde_json::Value::Object(header))?;
        for r in self.rows() {
            writeln!(w, "{}", serde_json::to_string(&r).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    }
}

/// A log read back from disk: header pairs plus rows in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTable {
    pub header: BTreeMap<String, String>,
    pub rows: Vec<LogRow>,
}

impl LogTable {
    pub fn header_f64(&self, key: &str) -> Option<f64> {
        self.header.get(key).and_then(|v| v.parse().ok())
    }

    /// Rows grouped per robot id, each in time order.
    pub fn by_robot(&self) -> BTreeMap<usize, Vec<LogRow>> {
        let mut out: BTreeMap<usize, Vec<LogRow>> = BTreeMap::new();
        for r in &self.rows {
            out.entry(r.id).or_default().push(*r);
        }
        for rows in out.values_mut() {
            rows.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        out
    }
}

pub fn read_csv(r: impl BufRead) -> Result<LogTable, LogError> {
    let mut header = BTreeMap::new();
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if !seen_columns {
            check_columns(&fields, line_no)?;
            seen_columns = true;
            continue;
        }
        if fields.len() != CSV_COLUMNS.len() {
            let column = CSV_COLUMNS
                .get(fields.len())
                .map(|c| c.to_string())
                .unwrap_or_else(|| format!("#{}", fields.len()));
            return Err(LogError::Schema {
                line: line_no,
                column,
                message: format!(
                    "expected {} fields, found {}",
                    CSV_COLUMNS.len(),
                    fields.len()
                ),
            });
        }
        let num = |k: usize| -> Result<f64, LogError> {
            fields[k].parse::<f64>().map_err(|_| LogError::Schema {
                line: line_no,
                column: CSV_COLUMNS[k].into(),
                message: format!("not a number: '{}'", fields[k]),
            })
        };
        let id = fields[1].parse::<usize>().map_err(|_| LogError::Schema {
            line: line_no,
            column: "id".into(),
            message: format!("not a robot index: '{}'", fields[1]),
        })?;
        let collide = match fields[9] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(LogError::Schema {
                    line: line_no,
                    column: "collide".into(),
                    message: format!("expected 0 or 1, found '{other}'"),
                })
            }
        };
        rows.push(LogRow {
            t: num(0)?,
            id,
            x1: num(2)?,
            x2: num(3)?,
            x3: num(4)?,
            ux_hat: num(5)?,
            uy_hat: num(6)?,
            ux_star: num(7)?,
            uy_star: num(8)?,
            collide,
            e_loss: num(10)?,
            v_before: None,
            v_after: None,
        });
    }
    if !seen_columns {
        return Err(LogError::Schema {
            line: 0,
            column: "t".into(),
            message: "missing column header".into(),
        });
    }
    if rows.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(LogTable { header, rows })
}

fn check_columns(fields: &[&str], line: usize) -> Result<(), LogError> {
    for (k, expected) in CSV_COLUMNS.iter().enumerate() {
        match fields.get(k) {
            Some(f) if f == expected => {}
            Some(f) => {
                return Err(LogError::Schema {
                    line,
                    column: f.to_string(),
                    message: format!("expected column '{expected}' at position {}", k + 1),
                })
            }
            None => {
                return Err(LogError::Schema {
                    line,
                    column: expected.to_string(),
                    message: "missing column".into(),
                })
            }
        }
    }
    if fields.len() > CSV_COLUMNS.len() {
        return Err(LogError::Schema {
            line,
            column: fields[CSV_COLUMNS.len()].to_string(),
            message: format!("unexpected extra column; expected {}", CSV_COLUMNS.len()),
        });
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<LogTable, LogError> {
    let mut header = BTreeMap::new();
    let mut rows = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| LogError::Json {
                line: line_no,
                message: e.to_string(),
            })?;
        if value.get("type").and_then(|t| t.as_str()) == Some("header") {
            if let Some(obj) = value.as_object() {
                for (k, v) in obj {
                    if k != "type" {
                        let s = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                        header.insert(k.clone(), s);
                    }
                }
            }
            continue;
        }
        for col in CSV_COLUMNS {
            if value.get(col).is_none() {
                return Err(LogError::Schema {
                    line: line_no,
                    column: col.into(),
                    message: "missing field".into(),
                });
            }
        }
        let row: LogRow = serde_json::from_value(value).map_err(|e| LogError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        if row.collide > 1 {
            return Err(LogError::Schema {
                line: line_no,
                column: "collide".into(),
                message: format!("expected 0 or 1, found {}", row.collide),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(LogTable { header, rows })
}
