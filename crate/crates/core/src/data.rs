//! Copula-scale data: `T` rows of `d` values in the unit interval.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CopulaData {
    d: usize,
    names: Vec<String>,
    /// Row-major `T x d`.
    values: Vec<f64>,
}

impl CopulaData {
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        let names = (1..=d).map(|i| format!("V{i}")).collect();
        Self::with_names(names, values)
    }

    pub fn with_names(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let d = names.len();
        if d == 0 {
            return Err(Error::InvalidInput("data must have at least one column".into()));
        }
        if values.len() % d != 0 {
            return Err(Error::InvalidInput(format!(
                "{} values do not fill rows of width {d}",
                values.len()
            )));
        }
        if let Some(&bad) = values.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::Domain(bad));
        }
        Ok(CopulaData { d, names, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                found: r.len(),
            });
        }
        Self::new(d, rows.concat())
    }

    pub fn empty(d: usize) -> Self {
        CopulaData {
            d,
            names: (1..=d).map(|i| format!("V{i}")).collect(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.d..(t + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    /// Column `j` (0-based), i.e. variable `j + 1`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> CopulaData {
        let mut values = Vec::with_capacity(idx.len() * self.d);
        for &t in idx {
            values.extend_from_slice(self.row(t));
        }
        CopulaData {
            d: self.d,
            names: self.names.clone(),
            values,
        }
    }

    pub fn window(&self, start: usize, len: usize) -> CopulaData {
        CopulaData {
            d: self.d,
            names: self.names.clone(),
            values: self.values[start * self.d..(start + len) * self.d].to_vec(),
        }
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != names.len() {
                return Err(Error::Dimension {
                    expected: names.len(),
                    found: rec.len(),
                });
            }
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidInput(format!("row {}: cannot parse {field:?}", line + 1))
                })?;
                values.push(v);
            }
        }
        Self::with_names(names, values)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.names)?;
        for r in self.rows() {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let data = CopulaData::from_rows(&[vec![0.1, 0.25], vec![0.999, 1e-7]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        data.write_csv(&p).unwrap();
        let back = CopulaData::read_csv(&p).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(CopulaData::new(2, vec![0.5, 1.5]), Err(Error::Domain(_))));
        assert!(CopulaData::new(2, vec![0.5]).is_err());
    }

    #[test]
    fn empty_data_keeps_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        CopulaData::empty(3).write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), "V1,V2,V3");
        let back = CopulaData::read_csv(&p).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 3);
    }
}
