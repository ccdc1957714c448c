use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::numkit::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: Option<u64>,
}

/// Observational causal data with optional ground truth.
///
/// `ycf[i]`, when present, is the outcome row `i` would have shown under
/// treatment `1 - a[i]` with its own noise held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalDataset {
    pub x: Matrix,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub ycf: Option<Vec<f64>>,
    pub meta: DatasetMeta,
}

impl CausalDataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_x(&self) -> usize {
        self.x.cols()
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        self.x.row(i)
    }

    pub fn has_both_arms(&self) -> bool {
        self.a.contains(&0) && self.a.contains(&1)
    }

    /// Mean potential outcome of row `i` under treatment `arm`.
    pub fn mu(&self, i: usize, arm: u8) -> Option<f64> {
        let col = if arm == 1 { &self.mu1 } else { &self.mu0 };
        col.as_ref().map(|c| c[i])
    }

    /// `mu1 - mu0` per row when both columns are present.
    pub fn true_cate(&self) -> Option<Vec<f64>> {
        let (m0, m1) = (self.mu0.as_ref()?, self.mu1.as_ref()?);
        Some(m1.iter().zip(m0).map(|(a, b)| a - b).collect())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.n();
        let check = |name: &'static str, len: usize| {
            if len == n {
                Ok(())
            } else {
                Err(DataError::Length {
                    column: name,
                    len,
                    n,
                })
            }
        };
        check("x", self.x.rows())?;
        check("a", self.a.len())?;
        for (name, col) in [("mu0", &self.mu0), ("mu1", &self.mu1), ("ycf", &self.ycf)] {
            if let Some(c) = col {
                check(name, c.len())?;
            }
        }
        if let Some(row) = self.a.iter().position(|&a| a > 1) {
            return Err(DataError::Treatment {
                row,
                value: self.a[row].to_string(),
            });
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            x: self.x.select_rows(idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: pick(&self.y),
            mu0: self.mu0.as_ref().map(pick),
            mu1: self.mu1.as_ref().map(pick),
            ycf: self.ycf.as_ref().map(pick),
            meta: self.meta.clone(),
        }
    }

    /// Concatenates rows of two datasets with matching columns.
    pub fn concat(&self, other: &Self) -> Result<Self, DataError> {
        if self.d_x() != other.d_x() {
            return Err(DataError::Schema(format!(
                "cannot concatenate d_x={} with d_x={}",
                self.d_x(),
                other.d_x()
            )));
        }
        let join = |a: &Option<Vec<f64>>, b: &Option<Vec<f64>>| match (a, b) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let mut xd = self.x.data().to_vec();
        xd.extend_from_slice(other.x.data());
        Ok(Self {
            x: Matrix::new(self.n() + other.n(), self.d_x(), xd)?,
            a: self.a.iter().chain(&other.a).copied().collect(),
            y: self.y.iter().chain(&other.y).copied().collect(),
            mu0: join(&self.mu0, &other.mu0),
            mu1: join(&self.mu1, &other.mu1),
            ycf: join(&self.ycf, &other.ycf),
            meta: self.meta.clone(),
        })
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.d_x()).map(|j| format!("x{j}")).collect();
        h.push("a".into());
        h.push("y".into());
        for (name, col) in [("mu0", &self.mu0), ("mu1", &self.mu1), ("ycf", &self.ycf)] {
            if col.is_some() {
                h.push(name.into());
            }
        }
        h
    }

    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        let mut rec = Vec::with_capacity(self.d_x() + 5);
        for i in 0..self.n() {
            rec.clear();
            rec.extend(self.x_row(i).iter().map(|v| fmt_real(*v)));
            rec.push(self.a[i].to_string());
            rec.push(fmt_real(self.y[i]));
            for col in [&self.mu0, &self.mu1, &self.ycf].into_iter().flatten() {
                rec.push(fmt_real(col[i]));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let f = File::create(path.as_ref()).map_err(|e| DataError::io(path.as_ref(), e))?;
        self.write_csv_to(f)
    }

    pub fn read_csv_from<R: Read>(r: R, name: &str) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let find = |name: &str| header.iter().position(|h| h == name);

        let mut x_cols = Vec::new();
        for j in 0.. {
            match find(&format!("x{j}")) {
                Some(c) => x_cols.push(c),
                None => break,
            }
        }
        if x_cols.is_empty() {
            return Err(DataError::MissingColumn("x0".into()));
        }
        let a_col = find("a").ok_or_else(|| DataError::MissingColumn("a".into()))?;
        let y_col = find("y").ok_or_else(|| DataError::MissingColumn("y".into()))?;
        let opt = [find("mu0"), find("mu1"), find("ycf")];

        let d_x = x_cols.len();
        let mut xd = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        let mut extra: [Vec<f64>; 3] = Default::default();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| -> Result<f64, DataError> {
                let s = rec.get(c).unwrap_or("");
                s.parse::<f64>().map_err(|_| DataError::Value {
                    row,
                    column: header[c].clone(),
                    value: s.to_owned(),
                })
            };
            for &c in &x_cols {
                xd.push(field(c)?);
            }
            let raw = rec.get(a_col).unwrap_or("");
            let treat = match raw.parse::<f64>() {
                Ok(v) if v == 0.0 => 0,
                Ok(v) if v == 1.0 => 1,
                _ => {
                    return Err(DataError::Treatment {
                        row,
                        value: raw.to_owned(),
                    })
                }
            };
            a.push(treat);
            y.push(field(y_col)?);
            for (k, c) in opt.iter().enumerate() {
                if let Some(c) = *c {
                    extra[k].push(field(c)?);
                }
            }
        }
        let n = y.len();
        let [mu0, mu1, ycf] = extra;
        let pick = |k: usize, v: Vec<f64>| opt[k].map(|_| v);
        let ds = Self {
            x: Matrix::new(n, d_x, xd)?,
            a,
            y,
            mu0: pick(0, mu0),
            mu1: pick(1, mu1),
            ycf: pick(2, ycf),
            meta: DatasetMeta {
                name: name.to_owned(),
                seed: None,
            },
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Reads a dataset in the `x0..x{d-1},a,y[,mu0,mu1,ycf]` schema.
pub fn load_csv(path: impl AsRef<Path>) -> Result<CausalDataset, DataError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| DataError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    CausalDataset::read_csv_from(f, &name)
}

pub fn write_csv(ds: &CausalDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    ds.write_csv(path)
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_row_file() {
        let ds = CausalDataset::read_csv_from("x0,a,y\n0.5,1,2.0\n-1,0,3\n".as_bytes(), "t").unwrap();
        assert_eq!((ds.n(), ds.d_x()), (2, 1));
        assert_eq!(ds.a, vec![1, 0]);
        assert!(ds.mu0.is_none() && ds.ycf.is_none());
    }

    #[test]
    fn bad_treatment_names_row() {
        let mut text = String::from("x0,a,y\n");
        for i in 0..8 {
            let a = if i == 5 { "2" } else { "1" };
            text.push_str(&format!("0.1,{a},1.0\n"));
        }
        let err = CausalDataset::read_csv_from(text.as_bytes(), "t").unwrap_err();
        assert!(matches!(err, DataError::Treatment { row: 5, .. }));
        assert!(err.to_string().contains("row 5"));
    }

    #[test]
    fn missing_columns_are_schema_errors() {
        let err = CausalDataset::read_csv_from("x0,a\n1,0\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(&err, DataError::MissingColumn(c) if c == "y"));
        let err = CausalDataset::read_csv_from("a,y\n1,0\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(&err, DataError::MissingColumn(c) if c == "x0"));
    }

    #[test]
    fn optional_columns_survive_roundtrip() {
        let text = "x0,x1,a,y,mu0,mu1,ycf\n0.1,0.2,1,3.5,1,2,0.25\n1e-20,-7,0,0.1,0.3,0.4,0.5\n";
        let ds = CausalDataset::read_csv_from(text.as_bytes(), "t").unwrap();
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let back = CausalDataset::read_csv_from(buf.as_slice(), "t").unwrap();
        assert_eq!(back, ds);
    }
}
