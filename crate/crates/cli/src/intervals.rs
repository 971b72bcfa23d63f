//! `intervals.csv`: `index,alpha,method,center,lower,upper`.
//!
//! Unbounded sides are written as the literal tokens `-inf` and `inf`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use clap::ValueEnum;
use lvd_core::Interval;

use crate::dataset::parse_finite;
use crate::error::{CliError, Result};
use crate::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum)]
pub enum Method {
    Split,
    Lvd,
    Mad,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Split => "split",
            Method::Lvd => "lvd",
            Method::Mad => "mad",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Method::Split, Method::Lvd, Method::Mad]
            .into_iter()
            .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRow {
    pub index: usize,
    pub alpha: f64,
    pub method: Method,
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalRow {
    pub fn new(index: usize, alpha: f64, method: Method, iv: Interval) -> Self {
        Self {
            index,
            alpha,
            method,
            center: iv.center,
            lower: iv.lower(),
            upper: iv.upper(),
        }
    }

    /// Half-width recovered as `upper - center`; exact for unbounded rows.
    pub fn interval(&self) -> Interval {
        Interval {
            center: self.center,
            half_width: (self.upper - self.center).max(self.center - self.lower),
        }
    }
}

pub fn write_intervals<W: Write>(rows: &[IntervalRow], writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "alpha", "method", "center", "lower", "upper"])?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            fmt_f64(r.alpha),
            r.method.as_str().to_string(),
            fmt_f64(r.center),
            fmt_f64(r.lower),
            fmt_f64(r.upper),
        ])?;
    }
    w.flush()
}

fn parse_bound(cell: &str) -> std::result::Result<f64, String> {
    match cell {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => parse_finite(cell),
    }
}

pub fn read_intervals<R: Read>(reader: R) -> std::result::Result<Vec<IntervalRow>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| format!("header: {e}"))?;
    if header
        .iter()
        .ne(["index", "alpha", "method", "center", "lower", "upper"])
    {
        return Err("header must be index,alpha,method,center,lower,upper".into());
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(0, |p| p.line());
        let at = |col: &str, m: String| format!("line {line}, column {col}: {m}");
        let index = record[0]
            .parse()
            .map_err(|_| at("index", format!("not an index: {:?}", &record[0])))?;
        let method = Method::parse(&record[2])
            .ok_or_else(|| at("method", format!("unknown method {:?}", &record[2])))?;
        let row = IntervalRow {
            index,
            alpha: parse_finite(&record[1]).map_err(|m| at("alpha", m))?,
            method,
            center: parse_finite(&record[3]).map_err(|m| at("center", m))?,
            lower: parse_bound(&record[4]).map_err(|m| at("lower", m))?,
            upper: parse_bound(&record[5]).map_err(|m| at("upper", m))?,
        };
        if row.lower > row.center || row.upper < row.center {
            return Err(format!("line {line}: bounds do not enclose the center"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn save_intervals(rows: &[IntervalRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_intervals(rows, std::io::BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

pub fn load_intervals(path: &Path) -> Result<Vec<IntervalRow>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_intervals(file).map_err(|m| CliError::data_in(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_bounds_use_literal_tokens() {
        let rows = vec![
            IntervalRow::new(
                0,
                0.1,
                Method::Lvd,
                Interval {
                    center: 1.5,
                    half_width: f64::INFINITY,
                },
            ),
            IntervalRow::new(
                1,
                0.05,
                Method::Split,
                Interval {
                    center: -2.0,
                    half_width: 0.25,
                },
            ),
        ];
        let mut buf = Vec::new();
        write_intervals(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "index,alpha,method,center,lower,upper\n0,0.1,lvd,1.5,-inf,inf\n1,0.05,split,-2.0,-2.25,-1.75\n"
        );
        let back = read_intervals(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back[0].interval().half_width, f64::INFINITY);
        assert_eq!(back[1].interval().half_width, 0.25);
    }

    #[test]
    fn rejects_bad_rows() {
        let h = "index,alpha,method,center,lower,upper\n";
        assert!(read_intervals(format!("{h}0,0.1,cqr,0,-1,1\n").as_bytes())
            .unwrap_err()
            .contains("method"));
        assert!(
            read_intervals(format!("{h}0,0.1,lvd,inf,-1,1\n").as_bytes())
                .unwrap_err()
                .contains("center")
        );
        assert!(read_intervals(format!("{h}0,0.1,lvd,0,1,2\n").as_bytes())
            .unwrap_err()
            .contains("enclose"));
        assert!(read_intervals("a,b\n".as_bytes()).is_err());
    }
}
