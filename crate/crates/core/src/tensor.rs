//! Dense tensors over `f64` or `Complex64`, pairwise contraction, and
//! truncated SVD / thin QR factorizations.
//!
//! Data is always kept in row-major (C) order. Contraction permutes both
//! operands so the summed indices are adjacent, reshapes to matrices and hands
//! off to a single matrix product.

use ndarray::{Array1, Array2, ArrayD, IxDyn, LinalgScalar, ShapeBuilder};
use ndarray_linalg::{Eigh, JobSvd, Lapack, Scalar, SVDDC, UPLO, QR, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};

/// Scalar types the library computes with: `f64` and `Complex64`.
pub trait Field: Scalar<Real = f64> + Lapack + LinalgScalar + Send + Sync + 'static {
    /// Builds a scalar from real and imaginary parts; real types drop `im`.
    fn from_parts(re: f64, im: f64) -> Self;
}

impl Field for f64 {
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
}

impl Field for Complex64 {
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}

/// Tolerance used to decide that two singular values at the cut are tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Bond-dimension cap plus discarded-weight threshold applied at each
/// truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub max_rank: usize,
    /// Largest allowed discarded squared weight, relative to the total.
    pub error_threshold: f64,
}

impl TruncationPolicy {
    pub fn new(max_rank: usize, error_threshold: f64) -> Result<Self> {
        if max_rank == 0 {
            return Err(MagicError::InvalidArgument("max_rank must be >= 1".into()));
        }
        if !(error_threshold >= 0.0) {
            return Err(MagicError::InvalidArgument(
                "error_threshold must be a nonnegative number".into(),
            ));
        }
        Ok(Self { max_rank, error_threshold })
    }

    /// No truncation at all.
    pub fn exact() -> Self {
        Self { max_rank: usize::MAX, error_threshold: 0.0 }
    }

    pub fn with_max_rank(max_rank: usize) -> Self {
        Self { max_rank: max_rank.max(1), error_threshold: 0.0 }
    }

    pub fn with_threshold(error_threshold: f64) -> Self {
        Self { max_rank: usize::MAX, error_threshold }
    }

    /// Number of singular values to keep, and the relative discarded weight.
    pub fn cut(&self, singular_values: &[f64]) -> (usize, f64) {
        let n = singular_values.len();
        if n == 0 {
            return (0, 0.0);
        }
        let total: f64 = singular_values.iter().map(|s| s * s).sum();
        if total <= 0.0 {
            return (1, 0.0);
        }
        // tail[r] = sum_{i >= r} s_i^2
        let mut tail = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tail[i] = tail[i + 1] + singular_values[i] * singular_values[i];
        }
        let budget = self.error_threshold * total;
        let mut keep = (1..=n).find(|&r| tail[r] <= budget).unwrap_or(n);
        keep = keep.min(self.max_rank).max(1);
        let tie = TIE_TOLERANCE * singular_values[0];
        while keep < n
            && keep < self.max_rank
            && singular_values[keep - 1] - singular_values[keep] <= tie
            && singular_values[keep] > 0.0
        {
            keep += 1;
        }
        (keep, tail[keep] / total)
    }
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self::exact()
    }
}

/// Complex-valued multi-index array in row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor<T: Field = Complex64> {
    data: ArrayD<T>,
}

impl<T: Field> DenseTensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(MagicError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { data: ArrayD::from_shape_vec(IxDyn(shape), data)? })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self { data: ArrayD::zeros(IxDyn(shape)) })
    }

    pub fn from_array(data: ArrayD<T>) -> Result<Self> {
        check_shape(data.shape())?;
        let data = if data.is_standard_layout() { data } else { data.as_standard_layout().into_owned() };
        Ok(Self { data })
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn rank(&self) -> usize {
        self.data.ndim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_array(&self) -> &ArrayD<T> {
        &self.data
    }

    pub fn into_array(self) -> ArrayD<T> {
        self.data
    }

    /// Row-major view of the amplitudes.
    pub fn as_slice(&self) -> &[T] {
        self.data.as_slice().expect("tensor data is kept in standard layout")
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.data.get(IxDyn(index)).copied()
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        if axes.len() != self.rank() {
            return Err(MagicError::ShapeMismatch(format!(
                "permutation {axes:?} for rank {}",
                self.rank()
            )));
        }
        let mut seen = vec![false; axes.len()];
        for &a in axes {
            if a >= axes.len() || seen[a] {
                return Err(MagicError::InvalidArgument(format!("invalid permutation {axes:?}")));
            }
            seen[a] = true;
        }
        let permuted = self.data.view().permuted_axes(IxDyn(axes));
        Ok(Self { data: permuted.as_standard_layout().into_owned() })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let data = self.as_slice().to_vec();
        Self::new(shape, data)
    }

    pub fn conj(&self) -> Self {
        Self { data: self.data.mapv(|x| x.conj()) }
    }

    pub fn scale(&self, factor: T) -> Self {
        Self { data: self.data.mapv(|x| x * factor) }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x.square()).sum::<f64>().sqrt()
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (*a - *b).abs())
            .fold(0.0, f64::max)
    }

    /// Groups `row_axes` (in the given order) into rows and the remaining
    /// axes (in ascending order) into columns.
    pub fn to_matrix(&self, row_axes: &[usize]) -> Result<(Array2<T>, Vec<usize>, Vec<usize>)> {
        let col_axes: Vec<usize> = (0..self.rank()).filter(|a| !row_axes.contains(a)).collect();
        let mut order = row_axes.to_vec();
        order.extend(&col_axes);
        let permuted = self.permute(&order)?;
        let row_dims: Vec<usize> = row_axes.iter().map(|&a| self.shape()[a]).collect();
        let col_dims: Vec<usize> = col_axes.iter().map(|&a| self.shape()[a]).collect();
        let rows = row_dims.iter().product();
        let cols = col_dims.iter().product();
        let m = Array2::from_shape_vec((rows, cols), permuted.data.into_raw_vec_and_offset().0)?;
        Ok((m, row_dims, col_dims))
    }

    pub fn from_matrix(m: Array2<T>, shape: &[usize]) -> Result<Self> {
        let m = if m.is_standard_layout() { m } else { m.as_standard_layout().into_owned() };
        Self::new(shape, m.into_raw_vec_and_offset().0)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(MagicError::ShapeMismatch(format!("zero dimension in shape {shape:?}")));
    }
    Ok(())
}

/// Contracts `a` and `b` over the listed `(axis_of_a, axis_of_b)` pairs.
///
/// The result carries the free axes of `a` followed by the free axes of `b`,
/// each in their original order.
pub fn contract<T: Field>(
    a: &DenseTensor<T>,
    b: &DenseTensor<T>,
    pairs: &[(usize, usize)],
) -> Result<DenseTensor<T>> {
    for &(ia, ib) in pairs {
        let (da, db) = match (a.shape().get(ia), b.shape().get(ib)) {
            (Some(&da), Some(&db)) => (da, db),
            _ => {
                return Err(MagicError::ShapeMismatch(format!(
                    "axis pair ({ia}, {ib}) out of range for ranks {} and {}",
                    a.rank(),
                    b.rank()
                )))
            }
        };
        if da != db {
            return Err(MagicError::ShapeMismatch(format!(
                "contracted axes ({ia}, {ib}) have dimensions {da} and {db}"
            )));
        }
    }
    let a_sum: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let b_sum: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let a_free: Vec<usize> = (0..a.rank()).filter(|x| !a_sum.contains(x)).collect();
    let b_free: Vec<usize> = (0..b.rank()).filter(|x| !b_sum.contains(x)).collect();

    // columns of `am` must follow the pair order, not ascending axis order
    let mut a_order = a_free.clone();
    a_order.extend(&a_sum);
    let (am, _, _) = a.permute(&a_order)?.to_matrix(&(0..a_free.len()).collect::<Vec<_>>())?;
    let (bm, _, _) = b.to_matrix(&b_sum)?;
    let product = am.dot(&bm);

    let mut shape: Vec<usize> = a_free.iter().map(|&x| a.shape()[x]).collect();
    shape.extend(b_free.iter().map(|&x| b.shape()[x]));
    if shape.is_empty() {
        shape.push(1);
    }
    DenseTensor::from_matrix(product, &shape)
}

/// Truncated SVD of a matrix.
#[derive(Clone, Debug)]
pub struct MatrixSvd<T: Field> {
    pub u: Array2<T>,
    pub singular_values: Array1<f64>,
    pub vdag: Array2<T>,
    /// Discarded squared weight over total squared weight.
    pub truncation_error: f64,
}

impl<T: Field> MatrixSvd<T> {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `diag(s) · vdag`.
    pub fn s_vdag(&self) -> Array2<T> {
        let mut out = self.vdag.clone();
        for (mut row, &s) in out.rows_mut().into_iter().zip(self.singular_values.iter()) {
            row.mapv_inplace(|x| x * T::from_real(s));
        }
        out
    }

    /// `u · diag(s)`.
    pub fn u_s(&self) -> Array2<T> {
        let mut out = self.u.clone();
        for (mut col, &s) in out.columns_mut().into_iter().zip(self.singular_values.iter()) {
            col.mapv_inplace(|x| x * T::from_real(s));
        }
        out
    }
}

/// Full thin SVD followed by the policy's cut.
pub fn svd_matrix<T: Field>(m: &Array2<T>, policy: &TruncationPolicy) -> Result<MatrixSvd<T>> {
    let (u, s, vt) = match m.svddc(JobSvd::Some) {
        Ok((Some(u), s, Some(vt))) => (u, s, vt),
        // divide-and-conquer occasionally fails to converge; fall back to QR iteration
        _ => match m.svd(true, true)? {
            (Some(u), s, Some(vt)) => {
                let k = s.len();
                (u.slice(ndarray::s![.., ..k]).to_owned(), s, vt.slice(ndarray::s![..k, ..]).to_owned())
            }
            _ => return Err(MagicError::Linalg("SVD returned no singular vectors".into())),
        },
    };
    let values: Vec<f64> = s.iter().copied().collect();
    let (keep, err) = policy.cut(&values);
    Ok(MatrixSvd {
        u: u.slice(ndarray::s![.., ..keep]).to_owned(),
        singular_values: s.slice(ndarray::s![..keep]).to_owned(),
        vdag: vt.slice(ndarray::s![..keep, ..]).to_owned(),
        truncation_error: err,
    })
}

/// Thin QR: `m = q · r` with `q` having orthonormal columns.
pub fn qr_matrix<T: Field>(m: &Array2<T>) -> Result<(Array2<T>, Array2<T>)> {
    let (rows, cols) = m.dim();
    let k = rows.min(cols);
    let (q, r) = m.qr()?;
    Ok((q.slice(ndarray::s![.., ..k]).to_owned(), r.slice(ndarray::s![..k, ..]).to_owned()))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues in descending order
/// and eigenvectors as columns.
pub fn eigh_hermitian<T: Field>(m: &Array2<T>) -> Result<(Vec<f64>, Array2<T>)> {
    // The LAPACK wrapper conjugates eigenvectors of row-major complex input.
    let mut f = Array2::<T>::zeros(m.dim().f());
    f.assign(m);
    let (vals, vecs) = f.eigh(UPLO::Upper)?;
    let n = vals.len();
    let mut out = Array2::<T>::zeros((m.nrows(), n));
    for c in 0..n {
        out.column_mut(c).assign(&vecs.column(n - 1 - c));
    }
    Ok((vals.iter().rev().copied().collect(), out))
}

/// Truncated SVD of a tensor whose indices are split into row and column
/// groups.
#[derive(Clone, Debug)]
pub struct SvdResult<T: Field = Complex64> {
    /// Shape: row dimensions followed by the kept rank.
    pub u: DenseTensor<T>,
    pub singular_values: Vec<f64>,
    /// Shape: kept rank followed by column dimensions.
    pub vdag: DenseTensor<T>,
    pub truncation_error: f64,
}

pub fn svd_truncated<T: Field>(
    t: &DenseTensor<T>,
    row_axes: &[usize],
    policy: &TruncationPolicy,
) -> Result<SvdResult<T>> {
    if row_axes.is_empty() || row_axes.len() >= t.rank() {
        return Err(MagicError::InvalidArgument(
            "both row and column index groups must be nonempty".into(),
        ));
    }
    let (m, row_dims, col_dims) = t.to_matrix(row_axes)?;
    let svd = svd_matrix(&m, policy)?;
    let k = svd.rank();
    let mut ushape = row_dims;
    ushape.push(k);
    let mut vshape = vec![k];
    vshape.extend(col_dims);
    Ok(SvdResult {
        u: DenseTensor::from_matrix(svd.u, &ushape)?,
        singular_values: svd.singular_values.to_vec(),
        vdag: DenseTensor::from_matrix(svd.vdag, &vshape)?,
        truncation_error: svd.truncation_error,
    })
}
