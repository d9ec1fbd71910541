use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::HinfError;

pub const TRACE_HEADER: &str = "n,J,Fnorm,delta,eps,t,oracle_calls,elapsed_s";
/// Extra column written when a reference optimum is known.
pub const REL_ERR_COLUMN: &str = "rel_err";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    StationaryTarget,
    IterationCap,
    InfeasibleAbort,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::StationaryTarget => "stationary_target",
            Status::IterationCap => "iteration_cap",
            Status::InfeasibleAbort => "infeasible_abort",
        }
    }

    /// Whether a run ending with this status counts as a success.
    pub fn is_success(self) -> bool {
        matches!(self, Status::Converged | Status::StationaryTarget)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Status {
    type Err = HinfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "converged" => Ok(Status::Converged),
            "stationary_target" => Ok(Status::StationaryTarget),
            "iteration_cap" => Ok(Status::IterationCap),
            "infeasible_abort" => Ok(Status::InfeasibleAbort),
            other => Err(HinfError::Parse {
                field: "status".into(),
                message: format!("unknown status `{other}`"),
            }),
        }
    }
}

/// One row of a trace: the iterate `K^n` at which iteration `n` started,
/// the quantities computed there, and the step taken from it.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub n: usize,
    pub cost: f64,
    pub f_norm: f64,
    pub delta: f64,
    pub eps: f64,
    pub step: f64,
    pub oracle_calls: usize,
    pub elapsed_s: f64,
    pub gain: Option<DMatrix<f64>>,
}

/// Bitwise equality, so rows holding NaN compare equal to themselves.
impl PartialEq for TraceRecord {
    fn eq(&self, other: &Self) -> bool {
        let floats = |r: &Self| [r.cost, r.f_norm, r.delta, r.eps, r.step, r.elapsed_s].map(f64::to_bits);
        self.n == other.n
            && self.oracle_calls == other.oracle_calls
            && floats(self) == floats(other)
            && self.gain == other.gain
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
    pub status: Status,
    pub metadata: Vec<(String, String)>,
}

impl IterationTrace {
    pub(crate) fn new() -> Self {
        Self {
            records: Vec::new(),
            status: Status::IterationCap,
            metadata: Vec::new(),
        }
    }

    pub(crate) fn note(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cost).collect()
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.records.last().map(|r| r.cost)
    }

    /// Number of iterations that moved the iterate.
    pub fn accepted_steps(&self) -> usize {
        self.records.iter().filter(|r| r.step > 0.0).count()
    }

    pub fn total_oracle_calls(&self) -> usize {
        self.records.last().map_or(0, |r| r.oracle_calls)
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        self.write_csv_with_reference(out, None)
    }

    /// Like [`IterationTrace::write_csv`], adding a `rel_err` column
    /// `(J - j_star) / j_star` when `j_star` is given.
    pub fn write_csv_with_reference<W: Write>(&self, mut out: W, j_star: Option<f64>) -> io::Result<()> {
        match j_star {
            Some(_) => writeln!(out, "{TRACE_HEADER},{REL_ERR_COLUMN}")?,
            None => writeln!(out, "{TRACE_HEADER}")?,
        }
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.n,
                fmt_float(r.cost),
                fmt_float(r.f_norm),
                fmt_float(r.delta),
                fmt_float(r.eps),
                fmt_float(r.step),
                r.oracle_calls,
                fmt_float(r.elapsed_s)
            )?;
            match j_star {
                Some(js) => writeln!(out, ",{}", fmt_float((r.cost - js) / js))?,
                None => writeln!(out)?,
            }
        }
        writeln!(out, "# status={}", self.status)
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace is ASCII")
    }

    /// Parses the CSV produced by [`IterationTrace::write_csv`], with or
    /// without the `rel_err` column. Gains and metadata are not part of the
    /// CSV and come back empty.
    pub fn from_csv(text: &str) -> Result<Self, HinfError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        let width = if header == TRACE_HEADER {
            8
        } else if header.strip_prefix(TRACE_HEADER).and_then(|r| r.strip_prefix(',')) == Some(REL_ERR_COLUMN) {
            9
        } else {
            return Err(HinfError::Parse {
                field: "header".into(),
                message: format!("expected `{TRACE_HEADER}`"),
            });
        };
        let mut records = Vec::new();
        let mut status = None;
        for (idx, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# status=") {
                status = Some(rest.parse()?);
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != width {
                return Err(HinfError::Parse {
                    field: format!("row {}", idx + 1),
                    message: format!("expected {width} columns, found {}", cols.len()),
                });
            }
            let num = |i: usize, name: &str| -> Result<f64, HinfError> {
                cols[i].parse::<f64>().map_err(|e| HinfError::Parse {
                    field: name.into(),
                    message: format!("row {}: {e}", idx + 1),
                })
            };
            let int = |i: usize, name: &str| -> Result<usize, HinfError> {
                cols[i].parse::<usize>().map_err(|e| HinfError::Parse {
                    field: name.into(),
                    message: format!("row {}: {e}", idx + 1),
                })
            };
            records.push(TraceRecord {
                n: int(0, "n")?,
                cost: num(1, "J")?,
                f_norm: num(2, "Fnorm")?,
                delta: num(3, "delta")?,
                eps: num(4, "eps")?,
                step: num(5, "t")?,
                oracle_calls: int(6, "oracle_calls")?,
                elapsed_s: num(7, "elapsed_s")?,
                gain: None,
            });
        }
        let status = status.ok_or_else(|| HinfError::Parse {
            field: "status".into(),
            message: "missing `# status=` line".into(),
        })?;
        Ok(Self {
            records,
            status,
            metadata: Vec::new(),
        })
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IterationTrace {
        let mut trace = IterationTrace::new();
        for n in 0..3 {
            trace.records.push(TraceRecord {
                n,
                cost: 10.0 - n as f64 / 3.0,
                f_norm: 1.0 / (n + 1) as f64,
                delta: 0.01,
                eps: 100.0,
                step: if n == 2 { 0.0 } else { 0.9 },
                oracle_calls: 7 * (n + 1),
                elapsed_s: 1e-3 * n as f64,
                gain: None,
            });
        }
        trace.records[2].f_norm = f64::NAN;
        trace.status = Status::StationaryTarget;
        trace
    }

    #[test]
    fn csv_layout() {
        let text = sample().to_csv();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "# status=stationary_target");
        let j = lines[2].split(',').nth(1).unwrap();
        let digits = j.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
        assert!(digits >= 15, "{j}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let trace = sample();
        let back = IterationTrace::from_csv(&trace.to_csv()).unwrap();
        assert_eq!(back.status, trace.status);
        for (a, b) in back.records.iter().zip(&trace.records) {
            assert_eq!(a.cost.to_bits(), b.cost.to_bits());
            assert_eq!(a.n, b.n);
            assert_eq!(a.oracle_calls, b.oracle_calls);
            assert!(a.f_norm == b.f_norm || (a.f_norm.is_nan() && b.f_norm.is_nan()));
        }
    }

    #[test]
    fn csv_rejects_malformed_input() {
        assert!(IterationTrace::from_csv("n,J\n").is_err());
        assert!(IterationTrace::from_csv(&format!("{TRACE_HEADER}\n1,2,3\n# status=converged\n")).is_err());
        assert!(IterationTrace::from_csv(&format!("{TRACE_HEADER}\n")).is_err());
        assert!(IterationTrace::from_csv(&format!("{TRACE_HEADER}\n# status=done\n")).is_err());
    }

    #[test]
    fn rel_err_column_matches_cost_column() {
        let trace = sample();
        let j_star = 9.25;
        let mut buf = Vec::new();
        trace.write_csv_with_reference(&mut buf, Some(j_star)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&format!("{TRACE_HEADER},rel_err\n")));
        for line in text.lines().skip(1).filter(|l| !l.starts_with('#')) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert!((cols[8] - (cols[1] - j_star) / j_star).abs() <= 1e-12);
        }
        let back = IterationTrace::from_csv(&text).unwrap();
        assert_eq!(back.costs(), trace.costs());
    }

    #[test]
    fn status_names_round_trip() {
        for s in [Status::Converged, Status::StationaryTarget, Status::IterationCap, Status::InfeasibleAbort] {
            assert_eq!(s.as_str().parse::<Status>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert!(Status::Converged.is_success() && !Status::IterationCap.is_success());
    }
}
