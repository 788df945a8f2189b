//! Dense row-major `f32` tensors and the handful of kernels the rest of the
//! crate is built on.
//!
//! Storage is always `f32`. Reductions (correlations, norms, moments) are
//! accumulated in `f64` and rounded once on the way out.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("shape {shape:?} must have positive dimensions")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must share a length.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent for rank-2 tensors, 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Contract(format!("{what} produced non-finite values")))
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self * a + other * b`.
    pub fn axpby(&self, a: f32, other: &Tensor, b: f32) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| x * a + y * b)
                .collect(),
        })
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    /// Frobenius inner product, accumulated in `f64`.
    pub fn inner(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    /// Selects rows by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }

    /// Selects columns of a matrix by index, in the given order.
    pub fn gather_cols(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut data = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Tensor::matrix(r, idx.len(), data)
    }

    /// Copies the `[r0..r0+rows, c0..c0+cols]` block of a matrix.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        if r0 + rows > r || c0 + cols > c {
            return Err(Error::Shape(format!(
                "block [{r0}+{rows}, {c0}+{cols}] outside {r}x{c}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in r0..r0 + rows {
            data.extend_from_slice(&self.data[i * c + c0..i * c + c0 + cols]);
        }
        Tensor::matrix(rows, cols, data)
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("vstack of nothing".into()))?;
        let cols = first.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != 2 || p.cols() != cols {
                return Err(Error::Shape(format!(
                    "vstack column mismatch: {:?} vs {cols}",
                    p.shape
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::matrix(rows, cols, data)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn hstack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("hstack of nothing".into()))?;
        let rows = first.rows();
        if parts.iter().any(|p| p.rank() != 2 || p.rows() != rows) {
            return Err(Error::Shape("hstack row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Tensor::matrix(rows, cols, data)
    }

    pub(crate) fn dims2(&self) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Matrix product `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; m * n];
    gemm(m, k, n, &a.data, (k, 1), &b.data, (n, 1), &mut out, false);
    Tensor::matrix(m, n, out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (n, k2) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul_nt {:?} x {:?}ᵀ",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; m * n];
    gemm(m, k, n, &a.data, (k, 1), &b.data, (1, k), &mut out, false);
    Tensor::matrix(m, n, out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul_tn {:?}ᵀ x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0f32; m * n];
    gemm(m, k, n, &a.data, (1, m), &b.data, (n, 1), &mut out, false);
    Tensor::matrix(m, n, out)
}

/// Raw strided sgemm: `c (+)= a · b` with `a` m×k and `b` k×n, row-major `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe in-bounds views of `a`, `b` and `c`, which
    // the callers size from the same dimensions.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x · yᵀ` for row-major f64 buffers (`x` is m×k, `y` is n×k).
pub(crate) fn dgemm_nt(m: usize, n: usize, k: usize, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0f64; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: x is m*k, y is n*k, out is m*n, all row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            x.as_ptr(),
            k as isize,
            1,
            y.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// Rows of `m` centred (optionally) and scaled to unit norm, in f64.
/// Rows whose norm is below `eps` become zero rows.
fn unit_rows(m: &Tensor, center: bool, eps: f64) -> Vec<f64> {
    let c = m.cols();
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.rows() {
        let row = m.row(i);
        let mean = if center {
            row.iter().map(|&v| v as f64).sum::<f64>() / c as f64
        } else {
            0.0
        };
        let start = out.len();
        out.extend(row.iter().map(|&v| v as f64 - mean));
        let norm = out[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > eps { 1.0 / norm } else { 0.0 };
        for v in &mut out[start..] {
            *v *= scale;
        }
    }
    out
}

fn rowwise_similarity_f64(x: &Tensor, y: &Tensor, center: bool) -> Result<Vec<f64>> {
    let (xr, xc) = x.dims2()?;
    let (yr, yc) = y.dims2()?;
    if xc != yc {
        return Err(Error::Shape(format!(
            "row similarity needs equal column counts, got {xc} and {yc}"
        )));
    }
    let xs = unit_rows(x, center, 1e-12);
    let same = std::ptr::eq(x, y);
    let ys = if same { None } else { Some(unit_rows(y, center, 1e-12)) };
    let mut prod = dgemm_nt(xr, yr, xc, &xs, ys.as_deref().unwrap_or(&xs));
    for v in &mut prod {
        *v = v.clamp(-1.0, 1.0);
    }
    if same {
        for i in 0..xr {
            for j in (i + 1)..xr {
                prod[j * xr + i] = prod[i * xr + j];
            }
        }
    }
    Ok(prod)
}

fn rowwise_similarity(x: &Tensor, y: &Tensor, center: bool) -> Result<Tensor> {
    let data = rowwise_similarity_f64(x, y, center)?;
    Tensor::matrix(x.rows(), y.rows(), data.into_iter().map(|v| v as f32).collect())
}

fn check_samples(x: &Tensor) -> Result<()> {
    let samples = x.dims2()?.1;
    if samples < 2 {
        return Err(Error::InsufficientData(format!(
            "pearson correlation needs at least 2 samples, got {samples}"
        )));
    }
    Ok(())
}

/// f64 Pearson matrix between the rows of `x` and the rows of `y`.
pub fn pearson_cross_f64(x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    check_samples(x)?;
    rowwise_similarity_f64(x, y, true)
}

/// f64 cosine matrix between the rows of `x` and the rows of `y`.
pub fn cosine_cross_f64(x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    rowwise_similarity_f64(x, y, false)
}

/// Symmetric f64 Pearson matrix of the rows of `x` with themselves.
pub fn pearson_self_f64(x: &Tensor) -> Result<Vec<f64>> {
    check_samples(x)?;
    rowwise_similarity_f64(x, x, true)
}

/// Symmetric f64 cosine matrix of the rows of `x` with themselves.
pub fn cosine_self_f64(x: &Tensor) -> Result<Vec<f64>> {
    rowwise_similarity_f64(x, x, false)
}

/// Pearson correlation between every row of `x` and every row of `y`.
///
/// Rows with zero variance correlate 0 with everything, including
/// themselves; dead units must not dominate a matching.
pub fn pearson_rows(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    check_samples(x)?;
    rowwise_similarity(x, y, true)
}

/// Cosine similarity between every row of `x` and every row of `y`.
/// Zero-norm rows yield 0.
pub fn cosine_rows(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    rowwise_similarity(x, y, false)
}

/// Mean and population standard deviation over all entries.
pub fn moments(m: &Tensor) -> (f64, f64) {
    let n = m.len() as f64;
    let mean = m.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = m
        .data
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Standardises all entries jointly: `(m - mean) / std`.
/// A matrix with `std < 1e-12` maps to all zeros.
pub fn zscore(m: &Tensor) -> Tensor {
    let (mean, std) = moments(m);
    if std < 1e-12 {
        return Tensor::zeros(&m.shape);
    }
    Tensor {
        shape: m.shape.clone(),
        data: m
            .data
            .iter()
            .map(|&v| ((v as f64 - mean) / std) as f32)
            .collect(),
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Column `i` (row-major n×n) is the eigenvector for `values[i]`.
    pub vectors: Vec<f64>,
    pub n: usize,
}

impl SymmetricEigen {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        (0..self.n).map(|r| self.vectors[r * self.n + i]).collect()
    }

    pub fn values_tensor(&self) -> Tensor {
        Tensor::vector(self.values.iter().map(|&v| v as f32).collect())
            .expect("non-empty eigenvalues")
    }

    pub fn vectors_tensor(&self) -> Tensor {
        Tensor::matrix(
            self.n,
            self.n,
            self.vectors.iter().map(|&v| v as f32).collect(),
        )
        .expect("square eigenvector matrix")
    }
}

/// Cyclic Jacobi eigensolver on a row-major f64 buffer.
pub fn symmetric_eig_f64(m: &[f64], n: usize) -> Result<SymmetricEigen> {
    if m.len() != n * n || n == 0 {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a non-empty square matrix, got {} entries for n={n}",
            m.len()
        )));
    }
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[i * n + j] - m[j * n + i]).abs() > 1e-8 * scale {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut a = m.to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + dst] = v[r * n + src];
        }
    }
    Ok(SymmetricEigen { values, vectors, n })
}

/// Eigendecomposition of a symmetric `f32` matrix (computed in f64).
pub fn symmetric_eig(m: &Tensor) -> Result<SymmetricEigen> {
    let (r, c) = m.dims2()?;
    if r != c {
        return Err(Error::Shape(format!("eigendecomposition of {r}x{c}")));
    }
    let buf: Vec<f64> = m.data.iter().map(|&v| v as f64).collect();
    symmetric_eig_f64(&buf, r)
}
