//! Row-major sample storage and CSV I/O.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// `n × d` matrix of observations stored row-major, with an optional 0/1 label per row.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SampleMatrix {
    d: usize,
    data: Vec<f64>,
    labels: Option<Vec<u8>>,
}

impl SampleMatrix {
    pub fn new(d: usize) -> Self {
        Self { d, data: Vec::new(), labels: None }
    }

    pub fn with_capacity(d: usize, n: usize) -> Self {
        Self { d, data: Vec::with_capacity(n * d), labels: None }
    }

    pub fn from_flat(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || !data.len().is_multiple_of(d) {
            return Err(Error::InvalidArgument(format!("{} values do not form rows of width {d}", data.len())));
        }
        Ok(Self { d, data, labels: None })
    }

    pub fn from_rows<R: AsRef<[f64]>>(d: usize, rows: &[R]) -> Result<Self> {
        let mut m = Self::with_capacity(d, rows.len());
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: labels.len() });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: row.len() });
        }
        if self.labels.is_some() {
            return Err(Error::InvalidArgument("push a labeled row with push_labeled".into()));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn push_labeled(&mut self, row: &[f64], y: u8) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: row.len() });
        }
        let n = self.len();
        self.labels.get_or_insert_with(|| vec![0; n]).push(y.min(1));
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d.max(1))
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, range: Range<usize>) -> SampleMatrix {
        SampleMatrix {
            d: self.d,
            data: self.data[range.start * self.d..range.end * self.d].to_vec(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        }
    }

    pub fn select(&self, idx: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        SampleMatrix {
            d: self.d,
            data,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn filter(&self, keep: impl Fn(&[f64]) -> bool) -> SampleMatrix {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.row(i))).collect();
        self.select(&idx)
    }

    pub fn map_rows(&self, f: impl Fn(&[f64], &mut [f64])) -> SampleMatrix {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.rows().zip(data.chunks_exact_mut(self.d)) {
            f(src, dst);
        }
        SampleMatrix { d: self.d, data, labels: self.labels.clone() }
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|x| *x /= n);
        m
    }

    /// Empirical covariance with denominator `n`, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.d;
        let mu = self.mean();
        let n = self.len().max(1) as f64;
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                let di = r[i] - mu[i];
                for j in i..d {
                    c[i * d + j] += di * (r[j] - mu[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                c[i * d + j] /= n;
                c[j * d + i] = c[i * d + j];
            }
        }
        c
    }

    pub fn write_csv<W: Write>(&self, w: W, header: bool) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            let mut h: Vec<String> = (0..self.d).map(|j| format!("x{}", j + 1)).collect();
            if self.labels.is_some() {
                h.push("y".into());
            }
            wr.write_record(&h)?;
        }
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>, header: bool) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), header)
    }

    /// Read numeric CSV. A first row that does not parse as numbers is treated as a header.
    /// With `labeled`, the last column is a 0/1 label.
    pub fn read_csv<R: Read>(r: R, labeled: bool) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
        let mut out: Option<SampleMatrix> = None;
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", line + 1))),
            };
            let width = if labeled { vals.len().saturating_sub(1) } else { vals.len() };
            if width == 0 {
                return Err(Error::Parse(format!("line {}: no feature columns", line + 1)));
            }
            let m = out.get_or_insert_with(|| SampleMatrix::new(width));
            if labeled {
                let y = vals[width];
                if y != 0.0 && y != 1.0 {
                    return Err(Error::Parse(format!("line {}: label {y} is not 0/1", line + 1)));
                }
                m.push_labeled(&vals[..width], y as u8)?;
            } else {
                m.push_row(&vals).map_err(|_| Error::Parse(format!("line {}: expected {} columns", line + 1, m.d)))?;
            }
        }
        out.ok_or_else(|| Error::EmptyInput("CSV contains no data rows".into()))
    }

    pub fn read_csv_path(path: impl AsRef<Path>, labeled: bool) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), labeled)
    }
}
