use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Shape `[]` is a scalar, `[n]` a vector and `[r, c]` a matrix. Every op in
/// this module checks its output for NaN/Inf and reports [`Error::NonFinite`]
/// instead of propagating it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor without checking finiteness. Shape must match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![v; n])
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a `[rows.len(), width]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::dim("from_rows", &[width], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Self::from_parts(vec![rows.len(), width], data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::dim("item", &self.shape, &[]))
        }
    }

    /// `(rows, cols)` of a matrix; a vector counts as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            _ => Err(Error::Contract(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|d| d.0).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map(|d| d.1).unwrap_or(0)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    fn map_checked(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let out = self.map(f);
        check_finite(op, &out.data)?;
        Ok(out)
    }

    /// Elementwise binary op; one side may be a scalar.
    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let out = if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            Self::from_parts(self.shape.clone(), data)
        } else if other.is_scalar() {
            let b = other.data[0];
            self.map(|a| f(a, b))
        } else if self.is_scalar() {
            let a = self.data[0];
            other.map(|b| f(a, b))
        } else {
            return Err(Error::dim(op, &self.shape, &other.shape));
        };
        check_finite(op, &out.data)?;
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Result<Tensor> {
        self.map_checked("scale", |v| v * k)
    }

    pub fn add_scalar(&self, k: f64) -> Result<Tensor> {
        self.map_checked("add_scalar", |v| v + k)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = match self.shape.as_slice() {
            [m, k] => (*m, *k),
            _ => return Err(Error::dim("matmul", &self.shape, &other.shape)),
        };
        let (k2, n) = match other.shape.as_slice() {
            [k2, n] => (*k2, *n),
            _ => return Err(Error::dim("matmul", &self.shape, &other.shape)),
        };
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
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
        check_finite("matmul", &out)?;
        Ok(Self::from_parts(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(Error::dim("transpose", &self.shape, &[])),
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.map_checked("relu", |v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map_checked("sigmoid", sigmoid)
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.map_checked("softplus", softplus)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map_checked("exp", f64::exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        if let Some(bad) = self.data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::domain("log", format!("log of non-positive value {bad}")));
        }
        self.map_checked("log", f64::ln)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.map_checked("square", |v| v * v)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.map_checked("clamp", |v| v.clamp(lo, hi))
    }

    pub fn sum(&self) -> Result<Tensor> {
        let s = Tensor::scalar(self.data.iter().sum());
        check_finite("sum", &s.data)?;
        Ok(s)
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.data.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = Tensor::scalar(self.data.iter().sum::<f64>() / self.data.len() as f64);
        check_finite("mean", &s.data)?;
        Ok(s)
    }

    /// Sums each row of a matrix: `[r, c] -> [r]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let out: Vec<f64> = (0..r).map(|i| self.data[i * c..(i + 1) * c].iter().sum()).collect();
        check_finite("sum_rows", &out)?;
        Ok(Tensor::vector(out))
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax_t(&self, temperature: f64) -> Result<Tensor> {
        check_temperature("softmax_with_temperature", temperature)?;
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(softmax_row(&self.data[i * c..(i + 1) * c], temperature));
        }
        check_finite("softmax_with_temperature", &out)?;
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Row-wise `log_softmax(x / temperature)`.
    pub fn log_softmax_t(&self, temperature: f64) -> Result<Tensor> {
        check_temperature("log_softmax_with_temperature", temperature)?;
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let lse = logsumexp(row.iter().map(|v| v / temperature));
            out.extend(row.iter().map(|v| v / temperature - lse));
        }
        check_finite("log_softmax_with_temperature", &out)?;
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Row-wise `log(sum(exp(x)))`: `[r, c] -> [r]`.
    pub fn logsumexp_rows(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let out: Vec<f64> = (0..r)
            .map(|i| logsumexp(self.data[i * c..(i + 1) * c].iter().copied()))
            .collect();
        check_finite("logsumexp_rows", &out)?;
        Ok(Tensor::vector(out))
    }

    /// Picks the listed columns of a matrix, in order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if let Some(&bad) = columns.iter().find(|&&j| j >= c) {
            return Err(Error::dim("select_columns", &self.shape, &[bad]));
        }
        let mut out = Vec::with_capacity(r * columns.len());
        for i in 0..r {
            out.extend(columns.iter().map(|&j| self.data[i * c + j]));
        }
        Ok(Self::from_parts(vec![r, columns.len()], out))
    }

    /// Picks the listed rows of a matrix, in order (repeats allowed).
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::dim("gather_rows", &self.shape, &[bad]));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Ok(Self::from_parts(vec![rows.len(), c], out))
    }

    /// Picks one column per row: `out[i] = self[i, index[i]]`.
    pub fn pick_per_row(&self, index: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if index.len() != r {
            return Err(Error::dim("pick_per_row", &self.shape, &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&j| j >= c) {
            return Err(Error::dim("pick_per_row", &self.shape, &[bad]));
        }
        let out = index.iter().enumerate().map(|(i, &j)| self.data[i * c + j]).collect();
        Ok(Tensor::vector(out))
    }

    /// Stacks `n` copies of a vector (`[c]` or `[1, c]`) into `[n, c]`.
    pub fn repeat_rows(&self, n: usize) -> Result<Tensor> {
        let c = match self.shape.as_slice() {
            [c] | [1, c] => *c,
            _ => return Err(Error::dim("repeat_rows", &self.shape, &[n])),
        };
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(&self.data);
        }
        Ok(Self::from_parts(vec![n, c], out))
    }

    /// Adds a bias vector `[c]` to every row of `[r, c]`.
    pub fn add_row_vector(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if bias.numel() != c {
            return Err(Error::dim("add_row_vector", &self.shape, bias.shape()));
        }
        let mut out = self.data.clone();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        check_finite("add_row_vector", &out)?;
        Ok(Self::from_parts(self.shape.clone(), out))
    }

    /// Index of the largest entry in each row.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (r, c) = self.dims2()?;
        Ok((0..r)
            .map(|i| {
                let row = &self.data[i * c..(i + 1) * c];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

fn check_temperature(op: &'static str, t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(op, format!("temperature must be positive, got {t}")))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(v))` without overflow.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64], temperature: f64) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) / temperature;
    let exps: Vec<f64> = row.iter().map(|v| (v / temperature - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
