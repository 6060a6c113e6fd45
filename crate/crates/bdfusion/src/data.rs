//! Rectangular observation data and the covariate pattern table.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{BdfError, Result};

/// A rectangular dataset of discrete baseline covariates `z`, binary
/// exposure `a`, binary mediator `m`, binary outcome `y`, an optional binary
/// confounder `u` (present in external data, absent in main data), and an
/// optional second exposure `a2` for the time-varying setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    z_dim: usize,
    /// Row-major, `n * z_dim`.
    z: Vec<f64>,
    a: Vec<u8>,
    m: Vec<u8>,
    y: Vec<u8>,
    u: Option<Vec<u8>>,
    a2: Option<Vec<u8>>,
}

fn check_binary(name: &str, col: &[u8]) -> Result<()> {
    if col.iter().any(|&v| v > 1) {
        return Err(BdfError::InvalidData(format!(
            "column `{name}` contains values outside {{0,1}}"
        )));
    }
    Ok(())
}

impl Dataset {
    pub fn new(
        z: Vec<f64>,
        z_dim: usize,
        a: Vec<u8>,
        m: Vec<u8>,
        y: Vec<u8>,
        u: Option<Vec<u8>>,
        a2: Option<Vec<u8>>,
    ) -> Result<Self> {
        if z_dim == 0 && !z.is_empty() {
            return Err(BdfError::InvalidData("z_dim is 0 but z is nonempty".into()));
        }
        let n = a.len();
        if n == 0 {
            return Err(BdfError::InvalidData("dataset must have at least one row".into()));
        }
        if z_dim > 0 && z.len() != n * z_dim {
            return Err(BdfError::InvalidData(format!(
                "z has {} entries, expected {}",
                z.len(),
                n * z_dim
            )));
        }
        for (name, col) in [("m", &m), ("y", &y)] {
            if col.len() != n {
                return Err(BdfError::InvalidData(format!(
                    "column `{name}` has length {}, expected {n}",
                    col.len()
                )));
            }
        }
        check_binary("a", &a)?;
        check_binary("m", &m)?;
        check_binary("y", &y)?;
        if let Some(u) = &u {
            if u.len() != n {
                return Err(BdfError::InvalidData("column `u` has wrong length".into()));
            }
            check_binary("u", u)?;
        }
        if let Some(a2) = &a2 {
            if a2.len() != n {
                return Err(BdfError::InvalidData("column `a2` has wrong length".into()));
            }
            check_binary("a2", a2)?;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(BdfError::InvalidData("z contains non-finite values".into()));
        }
        Ok(Dataset {
            n,
            z_dim,
            z,
            a,
            m,
            y,
            u,
            a2,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    #[inline]
    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.z_dim..(i + 1) * self.z_dim]
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn m(&self) -> &[u8] {
        &self.m
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn u(&self) -> Option<&[u8]> {
        self.u.as_deref()
    }

    pub fn a2(&self) -> Option<&[u8]> {
        self.a2.as_deref()
    }

    pub fn has_u(&self) -> bool {
        self.u.is_some()
    }

    /// Copy without the `u` column (external -> main-style data).
    pub fn without_u(&self) -> Dataset {
        let mut d = self.clone();
        d.u = None;
        d
    }

    /// Copy with a `u` column attached (complete-data analyses).
    pub fn with_u(&self, u: Vec<u8>) -> Result<Dataset> {
        Dataset::new(
            self.z.clone(),
            self.z_dim,
            self.a.clone(),
            self.m.clone(),
            self.y.clone(),
            Some(u),
            self.a2.clone(),
        )
    }

    /// Row subset in the given order (with repeats), e.g. a bootstrap resample.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut z = Vec::with_capacity(idx.len() * self.z_dim);
        for &i in idx {
            z.extend_from_slice(self.z_row(i));
        }
        let pick = |col: &[u8]| idx.iter().map(|&i| col[i]).collect::<Vec<u8>>();
        Dataset::new(
            z,
            self.z_dim,
            pick(&self.a),
            pick(&self.m),
            pick(&self.y),
            self.u.as_deref().map(pick),
            self.a2.as_deref().map(pick),
        )
    }

    /// Read from CSV with header `z1..zp,a,m,y[,u][,a2]`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut z_cols = Vec::new();
        let mut a_col = None;
        let mut m_col = None;
        let mut y_col = None;
        let mut u_col = None;
        let mut a2_col = None;
        for (i, h) in headers.iter().enumerate() {
            match h.trim() {
                "a" => a_col = Some(i),
                "m" => m_col = Some(i),
                "y" => y_col = Some(i),
                "u" => u_col = Some(i),
                "a2" => a2_col = Some(i),
                other if other.starts_with('z') => z_cols.push(i),
                other => {
                    return Err(BdfError::InvalidData(format!("unrecognized column `{other}`")))
                }
            }
        }
        let (a_col, m_col, y_col) = match (a_col, m_col, y_col) {
            (Some(a), Some(m), Some(y)) => (a, m, y),
            _ => {
                return Err(BdfError::InvalidData(
                    "CSV must contain columns a, m, y".into(),
                ))
            }
        };
        let z_dim = z_cols.len();
        let mut z = Vec::new();
        let mut a = Vec::new();
        let mut m = Vec::new();
        let mut y = Vec::new();
        let mut u = Vec::new();
        let mut a2 = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let get_int = |i: usize| -> Result<i64> {
                record
                    .get(i)
                    .and_then(|s| s.trim().parse::<i64>().ok())
                    .ok_or_else(|| BdfError::InvalidData(format!("bad integer in column {i}")))
            };
            for &zi in &z_cols {
                z.push(get_int(zi)? as f64);
            }
            let get_bin = |i: usize| -> Result<u8> {
                let v = get_int(i)?;
                if v == 0 || v == 1 {
                    Ok(v as u8)
                } else {
                    Err(BdfError::InvalidData(format!("non-binary value {v}")))
                }
            };
            a.push(get_bin(a_col)?);
            m.push(get_bin(m_col)?);
            y.push(get_bin(y_col)?);
            if let Some(c) = u_col {
                u.push(get_bin(c)?);
            }
            if let Some(c) = a2_col {
                a2.push(get_bin(c)?);
            }
        }
        Dataset::new(
            z,
            z_dim,
            a,
            m,
            y,
            u_col.map(|_| u),
            a2_col.map(|_| a2),
        )
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Dataset> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Write as CSV with header `z1..zp,a,m,y[,u][,a2]`; all values integer.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.z_dim).map(|j| format!("z{j}")).collect();
        header.extend(["a".into(), "m".into(), "y".into()]);
        if self.u.is_some() {
            header.push("u".into());
        }
        if self.a2.is_some() {
            header.push("a2".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> =
                self.z_row(i).iter().map(|v| format!("{}", *v as i64)).collect();
            rec.push(self.a[i].to_string());
            rec.push(self.m[i].to_string());
            rec.push(self.y[i].to_string());
            if let Some(u) = &self.u {
                rec.push(u[i].to_string());
            }
            if let Some(a2) = &self.a2 {
                rec.push(a2[i].to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }
}

/// Unique baseline covariate patterns with their sample frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePatternTable {
    patterns: Vec<Vec<f64>>,
    xi: Vec<usize>,
}

impl CovariatePatternTable {
    /// Tabulate the distinct `z` rows of `data`. Pattern order is
    /// lexicographic on the integer-coded covariates, so the table is
    /// deterministic regardless of row order.
    pub fn from_dataset(data: &Dataset) -> Self {
        let mut counts: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
        for i in 0..data.n() {
            let key: Vec<i64> = data.z_row(i).iter().map(|&v| v as i64).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
        let mut patterns = Vec::with_capacity(counts.len());
        let mut xi = Vec::with_capacity(counts.len());
        for (key, count) in counts {
            patterns.push(key.into_iter().map(|v| v as f64).collect());
            xi.push(count);
        }
        CovariatePatternTable { patterns, xi }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn pattern(&self, k: usize) -> &[f64] {
        &self.patterns[k]
    }

    pub fn xi(&self) -> &[usize] {
        &self.xi
    }

    /// Total count, equal to the n of the source dataset.
    pub fn total(&self) -> usize {
        self.xi.iter().sum()
    }

    /// Empirical pattern probabilities `xi_k / n`.
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.xi.iter().map(|&c| c as f64 / n).collect()
    }
}
