//! Dataset CSV: header `e0,...,e{h-1},y[,y_hat][,sigma_hat]`, finite decimals only.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CliError, Result};
use crate::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub embeddings: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Base-model predictions.
    pub y_hat: Option<Vec<f64>>,
    /// Predicted error scales for the MAD variant.
    pub sigma_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Embedding(usize),
    Y,
    YHat,
    SigmaHat,
}

fn role_of(name: &str) -> Option<Role> {
    match name {
        "y" => Some(Role::Y),
        "y_hat" => Some(Role::YHat),
        "sigma_hat" => Some(Role::SigmaHat),
        _ => {
            let idx = name.strip_prefix('e')?;
            // Reject "e01" and friends so names map one-to-one to indices.
            if idx.is_empty() || (idx.len() > 1 && idx.starts_with('0')) {
                return None;
            }
            idx.parse().ok().map(Role::Embedding)
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Embedding width `h`.
    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    pub fn read<R: Read>(reader: R) -> std::result::Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| format!("header: {e}"))?.clone();
        if header.is_empty() || header.iter().all(str::is_empty) {
            return Err("missing header row".into());
        }
        let roles: Vec<Role> = header
            .iter()
            .map(|name| role_of(name).ok_or_else(|| format!("header: unknown column {name:?}")))
            .collect::<std::result::Result<_, _>>()?;
        for (i, r) in roles.iter().enumerate() {
            if roles[..i].contains(r) {
                return Err(format!("header: duplicate column {:?}", &header[i]));
            }
        }
        if !roles.contains(&Role::Y) {
            return Err("header: missing y column".into());
        }
        let h = roles
            .iter()
            .filter(|r| matches!(r, Role::Embedding(_)))
            .count();
        if h == 0 {
            return Err("header: no embedding columns e0..".into());
        }
        for j in 0..h {
            if !roles.contains(&Role::Embedding(j)) {
                return Err(format!(
                    "header: embedding columns must be e0..e{}, missing e{j}",
                    h - 1
                ));
            }
        }
        let has = |r: Role| roles.contains(&r);
        let mut ds = Dataset {
            embeddings: Vec::new(),
            y: Vec::new(),
            y_hat: has(Role::YHat).then(Vec::new),
            sigma_hat: has(Role::SigmaHat).then(Vec::new),
        };
        for record in rdr.records() {
            let record = record.map_err(|e| e.to_string())?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != roles.len() {
                return Err(format!(
                    "line {line}: expected {} columns, found {}",
                    roles.len(),
                    record.len()
                ));
            }
            let mut e = vec![0.0; h];
            for ((cell, role), name) in record.iter().zip(&roles).zip(header.iter()) {
                let v =
                    parse_finite(cell).map_err(|m| format!("line {line}, column {name}: {m}"))?;
                match *role {
                    Role::Embedding(j) => e[j] = v,
                    Role::Y => ds.y.push(v),
                    Role::YHat => ds.y_hat.as_mut().expect("column present").push(v),
                    Role::SigmaHat => ds.sigma_hat.as_mut().expect("column present").push(v),
                }
            }
            ds.embeddings.push(e);
        }
        Ok(ds)
    }

    pub fn write<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let h = self.dim();
        let mut header: Vec<String> = (0..h).map(|j| format!("e{j}")).collect();
        header.push("y".into());
        if self.y_hat.is_some() {
            header.push("y_hat".into());
        }
        if self.sigma_hat.is_some() {
            header.push("sigma_hat".into());
        }
        w.write_record(&header)?;
        for (i, e) in self.embeddings.iter().enumerate() {
            let mut row: Vec<String> = e.iter().map(|&v| fmt_f64(v)).collect();
            row.push(fmt_f64(self.y[i]));
            if let Some(p) = &self.y_hat {
                row.push(fmt_f64(p[i]));
            }
            if let Some(s) = &self.sigma_hat {
                row.push(fmt_f64(s[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Parses a finite decimal; `inf`, `nan` and friends are rejected.
pub(crate) fn parse_finite(cell: &str) -> std::result::Result<f64, String> {
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("not a number: {cell:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value {cell:?}"));
    }
    Ok(v)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Dataset::read(file).map_err(|m| CliError::data_in(path, m))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    ds.write(std::io::BufWriter::new(file))
        .map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> std::result::Result<Dataset, String> {
        Dataset::read(s.as_bytes())
    }

    #[test]
    fn minimal_file() {
        let ds = parse("e0,y\n1.5,2\n-3,4e-3\n").unwrap();
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.embeddings, vec![vec![1.5], vec![-3.0]]);
        assert_eq!(ds.y, vec![2.0, 0.004]);
        assert!(ds.y_hat.is_none() && ds.sigma_hat.is_none());
    }

    #[test]
    fn optional_columns_in_any_order() {
        let ds = parse("y_hat,e1,y,e0,sigma_hat\n1,2,3,4,5\n").unwrap();
        assert_eq!(ds.embeddings, vec![vec![4.0, 2.0]]);
        assert_eq!(ds.y_hat, Some(vec![1.0]));
        assert_eq!(ds.sigma_hat, Some(vec![5.0]));
    }

    #[test]
    fn diagnostics_name_line_and_column() {
        let err = parse("e0,y\n1,2\n3,nan\n").unwrap_err();
        assert!(err.contains("line 3") && err.contains("column y"), "{err}");
        let err = parse("e0,e1,y\n1,inf,2\n").unwrap_err();
        assert!(err.contains("line 2") && err.contains("column e1"), "{err}");
        let err = parse("e0,y\n1,2\n3\n").unwrap_err();
        assert!(
            err.contains("line 3") && err.contains("expected 2 columns"),
            "{err}"
        );
        let err = parse("e0,y\n1,abc\n").unwrap_err();
        assert!(err.contains("not a number"), "{err}");
    }

    #[test]
    fn header_errors() {
        assert!(parse("").unwrap_err().contains("missing header"));
        assert!(parse("e0,y_hat\n1,2\n").unwrap_err().contains("missing y"));
        assert!(parse("e0,e2,y\n1,2,3\n")
            .unwrap_err()
            .contains("missing e1"));
        assert!(parse("e0,y,y\n1,2,3\n").unwrap_err().contains("duplicate"));
        assert!(parse("x,y\n1,2\n").unwrap_err().contains("unknown column"));
        assert!(parse("e00,y\n1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn write_read_round_trip(
            rows in prop::collection::vec(
                (prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 3),
                 prop::num::f64::NORMAL, prop::num::f64::NORMAL),
                1..20),
            with_sigma in any::<bool>(),
        ) {
            let ds = Dataset {
                embeddings: rows.iter().map(|r| r.0.clone()).collect(),
                y: rows.iter().map(|r| r.1).collect(),
                y_hat: Some(rows.iter().map(|r| r.2).collect()),
                sigma_hat: with_sigma.then(|| rows.iter().map(|r| r.2.abs()).collect()),
            };
            let mut buf = Vec::new();
            ds.write(&mut buf).unwrap();
            let back = Dataset::read(buf.as_slice()).unwrap();
            let bits = |d: &Dataset| {
                let mut v: Vec<u64> = d.embeddings.iter().flatten().map(|x| x.to_bits()).collect();
                v.extend(d.y.iter().map(|x| x.to_bits()));
                v.extend(d.y_hat.iter().flatten().map(|x| x.to_bits()));
                v.extend(d.sigma_hat.iter().flatten().map(|x| x.to_bits()));
                v
            };
            prop_assert_eq!(bits(&ds), bits(&back));
        }
    }
}
