use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::{CaseOutcome, PatternResult, SuiteResult};
use crate::sensitivity::SweepTable;
use crate::stats::pair_name;

pub const RESULTS_CSV_VERSION: u32 = 1;
pub const SUMMARY_CSV_VERSION: u32 = 1;
pub const SENSITIVITY_CSV_VERSION: u32 = 1;

fn type_str<T: std::fmt::Display>(t: Option<T>) -> String {
    t.map(|t| t.to_string()).unwrap_or_default()
}

/// One row per (config, pattern, case).
pub fn write_results_csv<W: Write>(out: W, suites: &[&SuiteResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "config".to_string(),
        "pattern_id".into(),
        "case_id".into(),
        "ops".into(),
        "scheduling".into(),
        "binding".into(),
    ];
    for i in 0..3 {
        for f in ["t", "df", "p"] {
            header.push(format!("{f}_{}", pair_name(i)));
        }
    }
    header.extend(["verdict".into(), "matched_type".into()]);
    w.write_record(&header)?;
    for s in suites {
        for c in &s.cases {
            let binding = c
                .case
                .binding
                .map(|b| format!("{}/{}", b.local, b.remote))
                .unwrap_or_default();
            let sched = match c.case.scheduling {
                crate::catalog::Scheduling::TimeSliced => "time_sliced",
                crate::catalog::Scheduling::MultiThreaded => "multi_threaded",
            };
            let mut rec = vec![
                s.config_name.clone(),
                c.case.pattern_id.to_string(),
                c.case.case_id.to_string(),
                c.case.ops_label(),
                sched.to_string(),
                binding,
            ];
            match &c.outcome {
                CaseOutcome::Judged(v) => {
                    for t in &v.tests {
                        rec.push(t.t_statistic.to_string());
                        rec.push(t.degrees_of_freedom.to_string());
                        rec.push(t.p_value.to_string());
                    }
                    let verdict = if v.effective {
                        "effective"
                    } else if v.inconsistent {
                        "inconsistent"
                    } else {
                        "ineffective"
                    };
                    rec.push(verdict.into());
                    rec.push(type_str(v.matched_type));
                }
                CaseOutcome::Untestable => {
                    rec.extend(std::iter::repeat(String::new()).take(9));
                    rec.push("untestable".into());
                    rec.push(String::new());
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Solid,
    /// Only write-variant cases are effective.
    Half,
    Empty,
}

impl Marker {
    pub fn of(p: &PatternResult) -> Marker {
        match (p.effective, p.write_only) {
            (false, _) => Marker::Empty,
            (true, true) => Marker::Half,
            (true, false) => Marker::Solid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Marker::Solid => "solid",
            Marker::Half => "half",
            Marker::Empty => "empty",
        }
    }

    pub fn parse(s: &str) -> Option<Marker> {
        [Marker::Solid, Marker::Half, Marker::Empty].into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub config: String,
    pub cells: Vec<(u32, Marker)>,
}

pub fn matrix_rows(suites: &[&SuiteResult]) -> Vec<MatrixRow> {
    suites
        .iter()
        .map(|s| MatrixRow {
            config: s.config_name.clone(),
            cells: s.patterns.iter().map(|p| (p.pattern_id, Marker::of(p))).collect(),
        })
        .collect()
}

/// Rows are configurations, columns pattern ids.
pub fn write_summary_csv<W: Write>(out: W, rows: &[MatrixRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        let mut header = vec!["config".to_string()];
        header.extend(first.cells.iter().map(|(id, _)| id.to_string()));
        w.write_record(&header)?;
    }
    for r in rows {
        let mut rec = vec![r.config.clone()];
        rec.extend(r.cells.iter().map(|(_, m)| m.as_str().to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_sensitivity_csv<W: Write>(out: W, tables: &[&SweepTable]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "parameter",
        "value",
        "total_effective",
        "so_effective",
        "ao_effective",
        "sa_effective",
        "situations",
        "wrap_back",
        "c_prime",
        "untestable_cases",
    ])?;
    for t in tables {
        for p in &t.points {
            let c_prime = match p.parameter {
                crate::sensitivity::Parameter::TotalSize => p.diagnosis.c_prime.to_string(),
                _ => String::new(),
            };
            w.write_record([
                p.parameter.name().to_string(),
                p.value.to_string(),
                p.total_effective.to_string(),
                p.so_effective.to_string(),
                p.ao_effective.to_string(),
                p.sa_effective.to_string(),
                p.diagnosis.symbols(),
                p.diagnosis.wrap_back.to_string(),
                c_prime,
                p.untestable_cases.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
    Ok(())
}

/// Reads a matrix written by [`write_summary_csv`].
pub fn read_summary_csv<R: std::io::Read>(input: R) -> Result<Vec<MatrixRow>> {
    let mut r = csv::Reader::from_reader(input);
    let ids: Vec<u32> = r
        .headers()?
        .iter()
        .skip(1)
        .map(|h| {
            h.parse()
                .map_err(|_| crate::Error::Config(format!("summary column {h:?} is not a pattern id")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let config = rec.get(0).unwrap_or_default().to_string();
        let mut cells = Vec::with_capacity(ids.len());
        for (id, cell) in ids.iter().zip(rec.iter().skip(1)) {
            let m = Marker::parse(cell)
                .ok_or_else(|| crate::Error::Config(format!("unknown marker {cell:?}")))?;
            cells.push((*id, m));
        }
        rows.push(MatrixRow { config, cells });
    }
    Ok(rows)
}
