//! Dense rank-0/1/2 tensors.
//!
//! Every value is stored as a row-major matrix: a scalar is `1x1` and a vector
//! is a `1xn` row. Zero-sized dimensions are allowed (an edgeless graph has a
//! `0xF` edge tensor, a graph without globals a `1x0` global tensor).
//!
//! All constructors and operations reject NaN and infinities, so a `Tensor`
//! in hand is always finite.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shape};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape[0], raw.shape[1], raw.data)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            shape: [t.rows, t.cols],
            data: t.data,
        }
    }
}

/// Column-wise reductions used for permutation-invariant pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    Mean,
    Max,
    Min,
    /// Population variance (divides by `n`).
    Variance,
}

impl Aggregator {
    pub const ALL: [Aggregator; 5] = [
        Aggregator::Sum,
        Aggregator::Mean,
        Aggregator::Max,
        Aggregator::Min,
        Aggregator::Variance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Mean => "mean",
            Aggregator::Max => "max",
            Aggregator::Min => "min",
            Aggregator::Variance => "variance",
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown aggregator `{s}`")))
    }
}

fn check_finite(data: &[f64], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                len: data.len(),
                shape: Shape::new(rows, cols),
            });
        }
        check_finite(&data, "tensor data")?;
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Tensor::new(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// A rank-0 value, stored as `1x1`.
    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(1, 1, vec![value])
    }

    /// A rank-1 value, stored as a `1xn` row.
    pub fn row(values: Vec<f64>) -> Result<Self> {
        Tensor::new(1, values.len(), values)
    }

    /// A column vector `nx1`.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        Tensor::new(values.len(), 1, values)
    }

    /// Builds a matrix from equal-length rows. `cols` is needed so that an
    /// empty row list still has a well-defined width.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "from_rows",
                    Shape::new(1, r.len()),
                    Shape::new(i, cols),
                ));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(rows.len(), cols, data)
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of {}", self.shape());
        self.data[r * self.cols + c]
    }

    /// Single-entry write. Rejects non-finite values.
    pub fn set(&mut self, r: usize, c: usize, value: f64) -> Result<()> {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of {}", self.shape());
        if !value.is_finite() {
            return Err(Error::NonFinite("set"));
        }
        self.data[r * self.cols + c] = value;
        Ok(())
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row `r` as a `1xcols` tensor.
    pub fn row_tensor(&self, r: usize) -> Tensor {
        Tensor {
            rows: 1,
            cols: self.cols,
            data: self.row_slice(r).to_vec(),
        }
    }

    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Value of a `1x1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.rows == 1 && self.cols == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::shape("item", self.shape(), Shape::new(1, 1)))
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        check_finite(&out, "matmul")?;
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        check_finite(&data, op)?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// Adds a `1xcols` row to every row.
    pub fn add_row_broadcast(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::shape("add_row_broadcast", self.shape(), row.shape()));
        }
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(self.cols.max(1)) {
            for (v, b) in chunk.iter_mut().zip(&row.data) {
                *v += b;
            }
        }
        check_finite(&data, "add_row_broadcast")?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        check_finite(&data, "map")?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rows gathered in the given order (indices may repeat).
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        assert!(start <= end && end <= self.cols, "column range {start}..{end} out of {}", self.shape());
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row_slice(r)[start..end]);
        }
        Tensor {
            rows: self.rows,
            cols: end - start,
            data,
        }
    }

    /// Column-wise reduction of all rows into a `1xcols` tensor.
    ///
    /// Each column is summed in ascending value order, so every aggregator
    /// gives bit-identical results under any permutation of the rows.
    pub fn aggregate(&self, agg: Aggregator) -> Result<Tensor> {
        if self.rows == 0 {
            return Err(Error::EmptyAggregation);
        }
        let n = self.rows as f64;
        let mut column = Vec::with_capacity(self.rows);
        let mut out = Vec::with_capacity(self.cols);
        for c in 0..self.cols {
            column.clear();
            column.extend((0..self.rows).map(|r| self.data[r * self.cols + c]));
            column.sort_by(f64::total_cmp);
            let sum = || column.iter().sum::<f64>();
            out.push(match agg {
                Aggregator::Sum => sum(),
                Aggregator::Mean => sum() / n,
                Aggregator::Max => column[column.len() - 1],
                Aggregator::Min => column[0],
                Aggregator::Variance => {
                    let m = sum() / n;
                    let mut sq: Vec<f64> = column.iter().map(|v| (v - m) * (v - m)).collect();
                    sq.sort_by(f64::total_cmp);
                    sq.iter().sum::<f64>() / n
                }
            });
        }
        check_finite(&out, "aggregate")?;
        Ok(Tensor {
            rows: 1,
            cols: self.cols,
            data: out,
        })
    }

    /// Frobenius-norm distance, handy in tests.
    pub fn distance(&self, other: &Tensor) -> Result<f64> {
        let d = self.sub(other)?;
        Ok(d.data.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn approx_eq(&self, other: &Tensor, tol: f64) -> bool {
        self.shape() == other.shape()
            && self.data.iter().zip(&other.data).all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Appends single-row tensors left to right.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Usage("concat_cols needs at least one part".into()));
    }
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.cols).sum());
    for p in parts {
        if p.rows != 1 {
            return Err(Error::shape("concat_cols", p.shape(), Shape::new(1, p.cols)));
        }
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor {
        rows: 1,
        cols: data.len(),
        data,
    })
}

/// Joins tensors with equal row counts side by side.
pub fn hstack(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("hstack needs at least one part".into()))?;
    let rows = first.rows;
    if let Some(p) = parts.iter().find(|p| p.rows != rows) {
        return Err(Error::shape("hstack", first.shape(), p.shape()));
    }
    let cols = parts.iter().map(|p| p.cols).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row_slice(r));
        }
    }
    Ok(Tensor { rows, cols, data })
}

/// Stacks tensors of equal width top to bottom.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat_rows needs at least one part".into()))?;
    let cols = first.cols;
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols != cols {
            return Err(Error::shape("concat_rows", first.shape(), p.shape()));
        }
        data.extend_from_slice(&p.data);
        rows += p.rows;
    }
    Ok(Tensor { rows, cols, data })
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}]", self.shape())?;
        let mut list = f.debug_list();
        for r in 0..self.rows {
            list.entry(&self.row_slice(r));
        }
        list.finish()
    }
}
