//! Calibration CSV: `e0..e{h'-1}` (normalized), `r`, `r_signed`, optional `sigma`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use lvd_core::CalibrationSet;

use crate::dataset::parse_finite;
use crate::error::{CliError, Result};
use crate::fmt_f64;

pub fn write_calibration<W: Write>(cal: &CalibrationSet, writer: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let h = cal.embeddings().first().map_or(0, Vec::len);
    let mut header: Vec<String> = (0..h).map(|j| format!("e{j}")).collect();
    header.extend(["r".to_string(), "r_signed".to_string()]);
    if cal.mad_scales().is_some() {
        header.push("sigma".into());
    }
    w.write_record(&header)?;
    for i in 0..cal.len() {
        let mut row: Vec<String> = cal.embeddings()[i].iter().map(|&v| fmt_f64(v)).collect();
        row.push(fmt_f64(cal.residuals()[i]));
        row.push(fmt_f64(cal.signed_residuals()[i]));
        if let Some(s) = cal.mad_scales() {
            row.push(fmt_f64(s[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn read_calibration<R: Read>(reader: R) -> std::result::Result<CalibrationSet, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| format!("header: {e}"))?
        .iter()
        .map(str::to_string)
        .collect();
    let has_sigma = header.last().is_some_and(|c| c == "sigma");
    let tail = if has_sigma { 3 } else { 2 };
    if header.len() < tail
        || header[header.len() - tail..header.len() - tail + 2] != ["r", "r_signed"]
    {
        return Err("header must end with r,r_signed[,sigma]".into());
    }
    let h = header.len() - tail;
    for (j, name) in header[..h].iter().enumerate() {
        if *name != format!("e{j}") {
            return Err(format!("header: expected e{j}, found {name:?}"));
        }
    }
    let (mut emb, mut signed, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| e.to_string())?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(format!(
                "line {line}: expected {} columns, found {}",
                header.len(),
                record.len()
            ));
        }
        let vals: Vec<f64> = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| {
                parse_finite(cell).map_err(|m| format!("line {line}, column {name}: {m}"))
            })
            .collect::<std::result::Result<_, _>>()?;
        if vals[h] != vals[h + 1].abs() {
            return Err(format!("line {line}: r is not |r_signed|"));
        }
        emb.push(vals[..h].to_vec());
        signed.push(vals[h + 1]);
        if has_sigma {
            sigma.push(vals[h + 2]);
        }
    }
    CalibrationSet::new(emb, signed, has_sigma.then_some(sigma)).map_err(|e| e.to_string())
}

pub fn save_calibration(cal: &CalibrationSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_calibration(cal, std::io::BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

pub fn load_calibration(path: &Path) -> Result<CalibrationSet> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_calibration(file).map_err(|m| CliError::data_in(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for sigma in [None, Some(vec![0.5, 1.25, 3.0])] {
            let cal = CalibrationSet::new(
                vec![vec![0.1, -2.0], vec![1e-300, 7.0], vec![0.3, 0.0]],
                vec![-1.5, 0.0, 2.0 / 3.0],
                sigma,
            )
            .unwrap();
            let mut buf = Vec::new();
            write_calibration(&cal, &mut buf).unwrap();
            let back = read_calibration(buf.as_slice()).unwrap();
            assert_eq!(back.embeddings(), cal.embeddings());
            assert_eq!(back.signed_residuals(), cal.signed_residuals());
            assert_eq!(back.residuals(), cal.residuals());
            assert_eq!(back.mad_scales(), cal.mad_scales());
        }
    }

    #[test]
    fn rejects_inconsistent_rows() {
        assert!(read_calibration("e0,r,r_signed\n1,2,-3\n".as_bytes())
            .unwrap_err()
            .contains("|r_signed|"));
        assert!(read_calibration("e0,r,r_signed,sigma\n1,2,-2,0\n".as_bytes()).is_err());
        assert!(read_calibration("e1,r,r_signed\n1,2,2\n".as_bytes()).is_err());
        assert!(read_calibration("e0,r\n1,2\n".as_bytes()).is_err());
    }
}
