//! Response/covariate samples and the row-major dataset container.

use std::io::{BufRead, Write};

use crate::error::{FoneError, Result};

/// One observation `(y, x)` with `x[0] == 1` as the intercept coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: f64,
    x: Vec<f64>,
}

impl Sample {
    pub fn new(y: f64, x: Vec<f64>) -> Result<Self> {
        validate_row(y, &x)?;
        Ok(Sample { y, x })
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

fn validate_row(y: f64, x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(FoneError::InvalidParameter(
            "covariate vector is empty".into(),
        ));
    }
    if x[0] != 1.0 {
        return Err(FoneError::InvalidParameter(format!(
            "intercept coordinate must be exactly 1, got {}",
            x[0]
        )));
    }
    if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(FoneError::NonFinite("sample"));
    }
    Ok(())
}

/// `n` samples of dimension `p`, covariates stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    p: usize,
    y: Vec<f64>,
    x: Vec<f64>,
}

impl Dataset {
    pub fn new(p: usize) -> Self {
        Dataset {
            p,
            y: Vec::new(),
            x: Vec::new(),
        }
    }

    pub fn with_capacity(p: usize, n: usize) -> Self {
        Dataset {
            p,
            y: Vec::with_capacity(n),
            x: Vec::with_capacity(n * p),
        }
    }

    /// Builds a dataset from a response vector and a row-major covariate
    /// buffer, checking the intercept and finiteness of every row.
    pub fn from_parts(p: usize, y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(FoneError::InvalidParameter(
                "dimension must be positive".into(),
            ));
        }
        if x.len() != y.len() * p {
            return Err(FoneError::DimensionMismatch {
                expected: y.len() * p,
                actual: x.len(),
            });
        }
        for (i, yi) in y.iter().enumerate() {
            validate_row(*yi, &x[i * p..(i + 1) * p])?;
        }
        Ok(Dataset { p, y, x })
    }

    pub fn push(&mut self, sample: &Sample) -> Result<()> {
        crate::error::check_dim(self.p, sample.dim())?;
        self.y.push(sample.y);
        self.x.extend_from_slice(&sample.x);
        Ok(())
    }

    /// Appends a row without re-validating; callers construct `x` with the
    /// intercept already in place.
    pub(crate) fn push_row(&mut self, y: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.p);
        debug_assert_eq!(x[0], 1.0);
        self.y.push(y);
        self.x.extend_from_slice(x);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn response(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            y: self.y[i],
            x: self.row(i).to_vec(),
        }
    }

    /// Iterates `(y, x)` pairs.
    pub fn rows(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.y.iter().copied().zip(self.x.chunks_exact(self.p))
    }

    /// New dataset holding the given rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::with_capacity(self.p, indices.len());
        for &i in indices {
            out.push_row(self.y[i], self.row(i));
        }
        out
    }

    /// Writes `y,x0,x1,...` CSV with round-trip float formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("y");
        for j in 0..self.p {
            header.push_str(&format!(",x{j}"));
        }
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for (y, x) in self.rows() {
            line.clear();
            line.push_str(&format!("{y:?}"));
            for v in x {
                line.push(',');
                line.push_str(&format!("{v:?}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Dataset> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(FoneError::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 2 || cols[0] != "y" {
            return Err(FoneError::Parse {
                line: 1,
                msg: "header must start with y".into(),
            });
        }
        for (j, c) in cols[1..].iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(FoneError::Parse {
                    line: 1,
                    msg: format!("expected column x{j}, found {c}"),
                });
            }
        }
        let p = cols.len() - 1;
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = k + 2;
            let mut fields = line.trim().split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                let s = s.ok_or(FoneError::Parse {
                    line: lineno,
                    msg: "too few fields".into(),
                })?;
                s.parse::<f64>().map_err(|e| FoneError::Parse {
                    line: lineno,
                    msg: e.to_string(),
                })
            };
            y.push(parse(fields.next())?);
            for _ in 0..p {
                x.push(parse(fields.next())?);
            }
            if fields.next().is_some() {
                return Err(FoneError::Parse {
                    line: lineno,
                    msg: "too many fields".into(),
                });
            }
        }
        Dataset::from_parts(p, y, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_requires_intercept() {
        assert!(Sample::new(1.0, vec![1.0, 2.0]).is_ok());
        assert!(Sample::new(1.0, vec![0.5, 2.0]).is_err());
        assert!(Sample::new(f64::NAN, vec![1.0]).is_err());
        assert!(Sample::new(1.0, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut d = Dataset::new(3);
        d.push(&Sample::new(0.1 + 0.2, vec![1.0, 1e-300, -3.3333333333333335]).unwrap())
            .unwrap();
        d.push(&Sample::new(-1.0, vec![1.0, 1e300, 2.0f64.sqrt()]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,x0,x1,x2\n"));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(Dataset::read_csv("z,x0\n1,1\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("y,x1\n1,1\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("y,x0\n1,1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn select_keeps_order() {
        let d = Dataset::from_parts(2, vec![1.0, 2.0, 3.0], vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0])
            .unwrap();
        let s = d.select(&[2, 0]);
        assert_eq!(s.responses(), &[3.0, 1.0]);
        assert_eq!(s.row(0), &[1.0, 2.0]);
    }
}
