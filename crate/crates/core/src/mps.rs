//! Matrix product states and operators.
//!
//! Site tensors of an [`Mps`] are indexed `(left bond, physical, right bond)`
//! and those of an [`Mpo`] `(left bond, physical out, physical in, right
//! bond)`. Boundary bonds have dimension 1.
//!
//! Every state carries an explicit `log2_scale`: the represented vector is
//! `2^log2_scale` times the plain contraction of its site tensors. Repeated
//! products of Pauli-basis vectors shrink norms like `2^(-N)`, which would
//! underflow `f64` long before the interesting system sizes, so algorithms
//! keep the site tensors of order one and move magnitudes into the scale.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::tensor::{contract, eigh_hermitian, qr_matrix, svd_matrix, DenseTensor, Field, TruncationPolicy};

/// Compression backend used after products and sums of MPS.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compression {
    /// Zip-up application followed by a canonical SVD sweep.
    #[default]
    Svd,
    /// Reduced-density-matrix algorithm; more reliable, more costly.
    DensityMatrix,
}

/// Matrix product state.
#[derive(Clone, Debug, PartialEq)]
pub struct Mps<T: Field> {
    sites: Vec<Array3<T>>,
    ortho_center: Option<usize>,
    log2_scale: f64,
}

/// Matrix product operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Mpo<T: Field> {
    sites: Vec<Array4<T>>,
    diagonal: bool,
}

/// Schmidt values across one bond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntanglementSpectrum {
    /// Number of sites to the left of the cut.
    pub cut: usize,
    pub values: Vec<f64>,
}

impl EntanglementSpectrum {
    /// Von Neumann entropy in bits.
    pub fn von_neumann_entropy(&self) -> f64 {
        self.values
            .iter()
            .map(|l| l * l)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.log2())
            .sum()
    }
}

/// One draw of [`Mps::perfect_sample`].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub config: Vec<usize>,
    /// Underflows to zero for long chains; see `log2_probability`.
    pub probability: f64,
    pub log2_probability: f64,
}

/// Result of applying an MPO with compression.
#[derive(Clone, Debug)]
pub struct MpoProduct<T: Field> {
    pub state: Mps<T>,
    pub truncation_error: f64,
}

fn to_left_matrix<T: Field>(a: &Array3<T>) -> Array2<T> {
    let (l, p, r) = a.dim();
    a.as_standard_layout().into_owned().into_shape_with_order((l * p, r)).expect("contiguous")
}

fn to_right_matrix<T: Field>(a: &Array3<T>) -> Array2<T> {
    let (l, p, r) = a.dim();
    a.as_standard_layout().into_owned().into_shape_with_order((l, p * r)).expect("contiguous")
}

fn from_matrix3<T: Field>(m: Array2<T>, shape: (usize, usize, usize)) -> Array3<T> {
    m.as_standard_layout().into_owned().into_shape_with_order(shape).expect("contiguous")
}

fn dagger<T: Field>(m: &Array2<T>) -> Array2<T> {
    m.t().mapv(|x| x.conj())
}

fn max_abs<T: Field>(it: impl Iterator<Item = T>) -> f64 {
    it.map(|x| x.abs()).fold(0.0, f64::max)
}

fn frob<T: Field>(it: impl Iterator<Item = T>) -> f64 {
    it.map(|x| x.square()).sum::<f64>().sqrt()
}

fn to_dense_tensor<T: Field, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> DenseTensor<T> {
    DenseTensor::from_array(a.clone().into_dyn()).expect("nonzero dimensions")
}

impl<T: Field> Mps<T> {
    pub fn from_sites(sites: Vec<Array3<T>>) -> Result<Self> {
        if sites.is_empty() {
            return Err(MagicError::InvalidArgument("an MPS needs at least one site".into()));
        }
        if sites[0].dim().0 != 1 || sites[sites.len() - 1].dim().2 != 1 {
            return Err(MagicError::ShapeMismatch("boundary bonds must have dimension 1".into()));
        }
        for (j, w) in sites.windows(2).enumerate() {
            if w[0].dim().2 != w[1].dim().0 {
                return Err(MagicError::ShapeMismatch(format!(
                    "bond {j}: right dimension {} != left dimension {}",
                    w[0].dim().2,
                    w[1].dim().0
                )));
            }
        }
        if sites.iter().any(|a| a.dim().0 == 0 || a.dim().1 == 0 || a.dim().2 == 0) {
            return Err(MagicError::ShapeMismatch("zero dimension in site tensor".into()));
        }
        let sites = sites.into_iter().map(|a| a.as_standard_layout().into_owned()).collect();
        Ok(Self { sites, ortho_center: None, log2_scale: 0.0 })
    }

    /// Product state from one local vector per site.
    pub fn product_state(local: &[Vec<T>]) -> Result<Self> {
        let sites = local
            .iter()
            .map(|v| Array3::from_shape_vec((1, v.len(), 1), v.clone()).map_err(MagicError::from))
            .collect::<Result<Vec<_>>>()?;
        Self::from_sites(sites)
    }

    /// Computational basis state `|config⟩` with per-site dimension `dims`.
    pub fn basis_state(config: &[usize], dims: &[usize]) -> Result<Self> {
        if config.len() != dims.len() {
            return Err(MagicError::ShapeMismatch("config and dims lengths differ".into()));
        }
        let local: Vec<Vec<T>> = config
            .iter()
            .zip(dims)
            .map(|(&c, &d)| {
                let mut v = vec![T::zero(); d];
                v[c] = T::one();
                v
            })
            .collect();
        let mut m = Self::product_state(&local)?;
        m.ortho_center = Some(0);
        Ok(m)
    }

    /// Normalized random state with Gaussian site tensors, right-canonical.
    pub fn random(n: usize, d: usize, chi: usize, rng: &mut impl Rng) -> Self {
        assert!(n >= 1 && d >= 1 && chi >= 1);
        let bond = |j: usize| -> usize {
            // bond between site j-1 and j
            if j == 0 || j == n {
                return 1;
            }
            let left = (d as f64).powi(j as i32);
            let right = (d as f64).powi((n - j) as i32);
            (chi as f64).min(left).min(right) as usize
        };
        let sites = (0..n)
            .map(|j| {
                Array3::from_shape_simple_fn((bond(j), d, bond(j + 1)), || {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    T::from_parts(re, im)
                })
            })
            .collect();
        let mut m = Self::from_sites(sites).expect("consistent bonds");
        m.canonicalize_mut(0);
        m.normalize_mut();
        m
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Array3<T>] {
        &self.sites
    }

    pub fn site(&self, j: usize) -> &Array3<T> {
        &self.sites[j]
    }

    pub fn physical_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|a| a.dim().1).collect()
    }

    /// Internal bond dimensions, `len() - 1` entries.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites.iter().take(self.len() - 1).map(|a| a.dim().2).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn ortho_center(&self) -> Option<usize> {
        self.ortho_center
    }

    pub fn log2_scale(&self) -> f64 {
        self.log2_scale
    }

    /// Multiplies the state by `2^delta`.
    pub fn scale_log2(&mut self, delta: f64) {
        self.log2_scale += delta;
    }

    /// Multiplies the state by a scalar.
    pub fn scale_by(&mut self, factor: T) {
        let j = self.ortho_center.unwrap_or(0);
        self.sites[j].mapv_inplace(|x| x * factor);
    }

    pub(crate) fn set_sites_raw(sites: Vec<Array3<T>>, ortho_center: Option<usize>, log2_scale: f64) -> Self {
        Self { sites, ortho_center, log2_scale }
    }

    pub(crate) fn into_parts(self) -> (Vec<Array3<T>>, Option<usize>, f64) {
        (self.sites, self.ortho_center, self.log2_scale)
    }

    fn left_orthonormalize(&mut self, j: usize) {
        let (l, p, _) = self.sites[j].dim();
        let (q, r) = qr_matrix(&to_left_matrix(&self.sites[j])).expect("QR of finite matrix");
        let k = q.ncols();
        self.sites[j] = from_matrix3(q, (l, p, k));
        let next = &self.sites[j + 1];
        let (_, pn, rn) = next.dim();
        let merged = r.dot(&to_right_matrix(next));
        self.sites[j + 1] = from_matrix3(merged, (k, pn, rn));
    }

    fn right_orthonormalize(&mut self, j: usize) {
        let (_, p, r) = self.sites[j].dim();
        let m = to_right_matrix(&self.sites[j]);
        // m = R^† Q^†
        let (q, rr) = qr_matrix(&dagger(&m)).expect("QR of finite matrix");
        let k = q.ncols();
        self.sites[j] = from_matrix3(dagger(&q), (k, p, r));
        let prev = &self.sites[j - 1];
        let (lp, pp, _) = prev.dim();
        let merged = to_left_matrix(prev).dot(&dagger(&rr));
        self.sites[j - 1] = from_matrix3(merged, (lp, pp, k));
    }

    /// Brings the state into mixed canonical form around `center`.
    pub fn canonicalize_mut(&mut self, center: usize) {
        assert!(center < self.len(), "center {center} out of range");
        let (lo, hi) = match self.ortho_center {
            Some(c) => (c.min(center), c.max(center)),
            None => (0, self.len() - 1),
        };
        let start_left = if self.ortho_center.is_some() { lo } else { 0 };
        for j in start_left..center {
            if self.ortho_center.is_none() || j >= lo {
                self.left_orthonormalize(j);
            }
        }
        let start_right = if self.ortho_center.is_some() { hi } else { self.len() - 1 };
        let mut j = start_right;
        while j > center {
            self.right_orthonormalize(j);
            j -= 1;
        }
        self.ortho_center = Some(center);
    }

    pub fn canonicalize(&self, center: usize) -> Self {
        let mut out = self.clone();
        out.canonicalize_mut(center);
        out
    }

    /// Squared norm of the site tensors, ignoring `log2_scale`.
    fn raw_norm_sq(&self) -> f64 {
        if let Some(c) = self.ortho_center {
            return self.sites[c].iter().map(|x| x.square()).sum();
        }
        let (ph, l2) = raw_overlap_log2(self, self);
        ph.re() * 2f64.powf(l2)
    }

    /// `log2 ‖ψ‖`, safe against underflow.
    pub fn log2_norm(&self) -> f64 {
        if let Some(c) = self.ortho_center {
            return self.log2_scale + frob(self.sites[c].iter().copied()).log2();
        }
        let (_, l2) = raw_overlap_log2(self, self);
        self.log2_scale + 0.5 * l2
    }

    pub fn norm(&self) -> f64 {
        2f64.powf(self.log2_norm())
    }

    pub fn norm_squared(&self) -> f64 {
        self.raw_norm_sq() * 2f64.powf(2.0 * self.log2_scale)
    }

    /// Rescales to unit norm, returning the previous `log2 ‖ψ‖`.
    pub fn normalize_mut(&mut self) -> f64 {
        let c = match self.ortho_center {
            Some(c) => c,
            None => {
                self.canonicalize_mut(0);
                0
            }
        };
        let nrm = frob(self.sites[c].iter().copied());
        let before = self.log2_scale + nrm.log2();
        if nrm > 0.0 {
            let inv = T::from_real(1.0 / nrm);
            self.sites[c].mapv_inplace(|x| x * inv);
        }
        self.log2_scale = 0.0;
        before
    }

    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.normalize_mut();
        out
    }

    /// Dense vector, site 0 most significant. Only for small systems.
    pub fn to_dense(&self) -> Array1<T> {
        let mut acc = Array2::<T>::ones((1, 1));
        for a in &self.sites {
            let (_, p, r) = a.dim();
            let rows = acc.nrows();
            let next = acc.dot(&to_right_matrix(a)); // rows x (p r)
            acc = next.into_shape_with_order((rows * p, r)).expect("contiguous");
        }
        let scale = T::from_real(2f64.powf(self.log2_scale));
        acc.column(0).mapv(|x| x * scale)
    }

    /// Exact MPS of a dense vector, then truncated sweeps per `policy`.
    pub fn from_dense(vector: &[T], dims: &[usize], policy: &TruncationPolicy) -> Result<(Self, f64)> {
        let total: usize = dims.iter().product();
        if total != vector.len() {
            return Err(MagicError::ShapeMismatch(format!(
                "vector of length {} for dims {dims:?}",
                vector.len()
            )));
        }
        let mut sites = Vec::with_capacity(dims.len());
        let mut rest = Array2::from_shape_vec((1, total), vector.to_vec())?;
        let mut err = 0.0;
        let mut left = 1;
        for (j, &d) in dims.iter().enumerate() {
            if j + 1 == dims.len() {
                sites.push(from_matrix3(rest.clone(), (left, d, 1)));
                break;
            }
            let cols = rest.ncols() / d;
            let m = rest.into_shape_with_order((left * d, cols)).expect("contiguous");
            let svd = svd_matrix(&m, policy)?;
            err += svd.truncation_error;
            let k = svd.rank();
            sites.push(from_matrix3(svd.u.clone(), (left, d, k)));
            rest = svd.s_vdag();
            left = k;
        }
        let mut m = Self::from_sites(sites)?;
        m.ortho_center = Some(dims.len() - 1);
        Ok((m, err))
    }

    /// Amplitude `⟨config|ψ⟩`.
    pub fn amplitude(&self, config: &[usize]) -> T {
        let (ph, l2) = self.log2_amplitude(config);
        ph * T::from_real(2f64.powf(l2))
    }

    /// `(phase, log2 |⟨config|ψ⟩|)`; the phase has unit modulus (or is zero).
    pub fn log2_amplitude(&self, config: &[usize]) -> (T, f64) {
        assert_eq!(config.len(), self.len());
        let mut v = Array1::<T>::ones(1);
        let mut l2 = self.log2_scale;
        for (a, &c) in self.sites.iter().zip(config) {
            v = v.dot(&a.slice(s![.., c, ..]));
            let m = max_abs(v.iter().copied());
            if m == 0.0 {
                return (T::zero(), f64::NEG_INFINITY);
            }
            v.mapv_inplace(|x| x / T::from_real(m));
            l2 += m.log2();
        }
        let x = v[0];
        let ax = x.abs();
        if ax == 0.0 {
            return (T::zero(), f64::NEG_INFINITY);
        }
        (x / T::from_real(ax), l2 + ax.log2())
    }

    /// Compresses by a left-to-right SVD sweep from right-canonical form.
    /// Returns the accumulated discarded weight.
    pub fn compress_svd(&self, policy: &TruncationPolicy) -> (Self, f64) {
        let mut m = self.canonicalize(0);
        let err = m.svd_sweep_left_to_right(policy);
        (m, err)
    }

    /// Sweep assuming the orthogonality center is at site 0.
    fn svd_sweep_left_to_right(&mut self, policy: &TruncationPolicy) -> f64 {
        let mut err = 0.0;
        for j in 0..self.len() - 1 {
            let (l, p, _) = self.sites[j].dim();
            let svd = svd_matrix(&to_left_matrix(&self.sites[j]), policy).expect("SVD of finite matrix");
            err += svd.truncation_error;
            let k = svd.rank();
            let sv = svd.s_vdag();
            self.sites[j] = from_matrix3(svd.u, (l, p, k));
            let (_, pn, rn) = self.sites[j + 1].dim();
            self.sites[j + 1] = from_matrix3(sv.dot(&to_right_matrix(&self.sites[j + 1])), (k, pn, rn));
        }
        self.ortho_center = Some(self.len() - 1);
        err
    }

    /// Sweep assuming the orthogonality center is the last site.
    fn svd_sweep_right_to_left(&mut self, policy: &TruncationPolicy) -> f64 {
        let mut err = 0.0;
        for j in (1..self.len()).rev() {
            let (_, p, r) = self.sites[j].dim();
            let svd = svd_matrix(&to_right_matrix(&self.sites[j]), policy).expect("SVD of finite matrix");
            err += svd.truncation_error;
            let k = svd.rank();
            let us = svd.u_s();
            self.sites[j] = from_matrix3(svd.vdag, (k, p, r));
            let (lp, pp, _) = self.sites[j - 1].dim();
            self.sites[j - 1] = from_matrix3(to_left_matrix(&self.sites[j - 1]).dot(&us), (lp, pp, k));
        }
        self.ortho_center = Some(0);
        err
    }

    /// Compression with the reduced-density-matrix algorithm.
    pub fn compress_density_matrix(&self, policy: &TruncationPolicy) -> (Self, f64) {
        let id = Mpo::identity(&self.physical_dims());
        let ops: Vec<OpSite<'_, T>> = id.sites.iter().map(|x| OpSite::Mpo(x, id.diagonal)).collect();
        let out = density_matrix_apply(&ops, self, policy);
        (out.state, out.truncation_error)
    }

    /// Schmidt values across the bond with `cut` sites on the left.
    pub fn entanglement_spectrum(&self, cut: usize) -> Result<EntanglementSpectrum> {
        if cut == 0 || cut >= self.len() {
            return Err(MagicError::InvalidArgument(format!(
                "cut {cut} must lie in 1..{}",
                self.len()
            )));
        }
        let m = self.canonicalize(cut - 1);
        let svd = svd_matrix(&to_left_matrix(&m.sites[cut - 1]), &TruncationPolicy::exact())?;
        let nrm = svd.singular_values.iter().map(|s| s * s).sum::<f64>().sqrt();
        let values = svd.singular_values.iter().map(|s| s / nrm).collect();
        Ok(EntanglementSpectrum { cut, values })
    }

    /// Born-rule sampler; requires a normalized state.
    pub fn sampler(&self) -> Result<MpsSampler<T>> {
        let m = self.canonicalize(0);
        let norm_sq = 2f64.powf(2.0 * m.log2_norm());
        if (norm_sq - 1.0).abs() > 1e-8 {
            return Err(MagicError::NotNormalized { norm_sq });
        }
        Ok(MpsSampler { sites: m.normalized().sites })
    }

    /// Draws one configuration with probability `|⟨config|ψ⟩|²`.
    pub fn perfect_sample(&self, rng: &mut impl Rng) -> Result<Sample> {
        Ok(self.sampler()?.draw(rng))
    }

    /// Applies a square matrix to the contiguous sites `start..start + k`,
    /// where `k` is fixed by the matrix size; the first site is the most
    /// significant index. The block is split back with truncated SVDs and
    /// rescaled to its previous norm. Returns the discarded weight; the
    /// orthogonality center ends on the last site touched.
    pub fn apply_local(&mut self, start: usize, m: &Array2<T>, policy: &TruncationPolicy) -> Result<f64> {
        let dim = m.nrows();
        if m.ncols() != dim {
            return Err(MagicError::ShapeMismatch(format!("local operator is {:?}", m.dim())));
        }
        let mut dims = Vec::new();
        let mut prod = 1;
        while prod < dim && start + dims.len() < self.len() {
            let d = self.sites[start + dims.len()].dim().1;
            dims.push(d);
            prod *= d;
        }
        if prod != dim {
            return Err(MagicError::ShapeMismatch(format!(
                "a {dim}x{dim} operator does not fit the sites from {start}"
            )));
        }
        let k = dims.len();
        self.canonicalize_mut(start);
        let l = self.sites[start].dim().0;
        let mut theta = to_left_matrix(&self.sites[start]); // (l d0) x r
        for j in 1..k {
            let (_, d, r) = self.sites[start + j].dim();
            theta = theta.dot(&to_right_matrix(&self.sites[start + j]));
            let rows = theta.nrows() * d;
            theta = theta.into_shape_with_order((rows, r)).expect("contiguous");
        }
        let r = theta.ncols();
        let before = frob(theta.iter().copied());
        // (l, D, r) -> (D, l r), apply, back
        let t = theta
            .into_shape_with_order((l, dim, r))
            .expect("contiguous")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((dim, l * r))
            .expect("contiguous");
        let t = m.dot(&t);
        let mut rest = t
            .into_shape_with_order((dim, l, r))
            .expect("contiguous")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((l, dim * r))
            .expect("contiguous");
        let mut err = 0.0;
        let mut remaining = dim;
        for (j, &d) in dims.iter().enumerate().take(k - 1) {
            let lc = rest.nrows();
            remaining /= d;
            let mat = rest.into_shape_with_order((lc * d, remaining * r)).expect("contiguous");
            let svd = svd_matrix(&mat, policy)?;
            err += svd.truncation_error;
            let keep = svd.rank();
            rest = svd.s_vdag();
            self.sites[start + j] = from_matrix3(svd.u, (lc, d, keep));
        }
        let lc = rest.nrows();
        let mut last = rest.into_shape_with_order((lc, dims[k - 1], r)).expect("contiguous");
        let after = frob(last.iter().copied());
        if after > 0.0 && before > 0.0 {
            let f = T::from_real(before / after);
            last.mapv_inplace(|x| x * f);
        }
        self.sites[start + k - 1] = last;
        self.ortho_center = Some(start + k - 1);
        Ok(err)
    }

    /// Linear combination `Σ c_i |ψ_i⟩` as a direct-sum MPS (bonds add up).
    pub fn linear_combination(terms: &[(T, &Mps<T>)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| MagicError::InvalidArgument("empty linear combination".into()))?
            .1;
        let n = first.len();
        let dims = first.physical_dims();
        if terms.iter().any(|(_, m)| m.physical_dims() != dims) {
            return Err(MagicError::ShapeMismatch("terms have different physical dims".into()));
        }
        let ref_scale = terms.iter().map(|(_, m)| m.log2_scale).fold(f64::NEG_INFINITY, f64::max);
        if n == 1 {
            let mut acc = Array3::<T>::zeros(first.sites[0].dim());
            for (c, m) in terms {
                let f = *c * T::from_real(2f64.powf(m.log2_scale - ref_scale));
                acc.zip_mut_with(&m.sites[0], |a, &b| *a += f * b);
            }
            let mut out = Self::from_sites(vec![acc])?;
            out.log2_scale = ref_scale;
            return Ok(out);
        }
        let mut sites = Vec::with_capacity(n);
        for j in 0..n {
            let d = dims[j];
            let ls: Vec<usize> = terms.iter().map(|(_, m)| m.sites[j].dim().0).collect();
            let rs: Vec<usize> = terms.iter().map(|(_, m)| m.sites[j].dim().2).collect();
            let (lt, rt) = if j == 0 {
                (1, rs.iter().sum())
            } else if j == n - 1 {
                (ls.iter().sum(), 1)
            } else {
                (ls.iter().sum(), rs.iter().sum())
            };
            let mut a = Array3::<T>::zeros((lt, d, rt));
            let (mut lo, mut ro) = (0, 0);
            for (t, (c, m)) in terms.iter().enumerate() {
                let src = &m.sites[j];
                let (l, _, r) = src.dim();
                let (l0, r0) = (if j == 0 { 0 } else { lo }, if j == n - 1 { 0 } else { ro });
                let mut dst = a.slice_mut(s![l0..l0 + l, .., r0..r0 + r]);
                if j == 0 {
                    let f = *c * T::from_real(2f64.powf(m.log2_scale - ref_scale));
                    dst.zip_mut_with(src, |x, &y| *x = f * y);
                } else {
                    dst.assign(src);
                }
                lo += ls[t];
                ro += rs[t];
            }
            sites.push(a);
        }
        let mut out = Self::from_sites(sites)?;
        out.log2_scale = ref_scale;
        Ok(out)
    }
}

/// Repeated perfect sampling from a fixed right-canonical state.
#[derive(Clone, Debug)]
pub struct MpsSampler<T: Field> {
    sites: Vec<Array3<T>>,
}

impl<T: Field> MpsSampler<T> {
    pub fn draw(&self, rng: &mut impl Rng) -> Sample {
        let mut v = Array1::<T>::ones(1);
        let mut config = Vec::with_capacity(self.sites.len());
        let mut log2p = 0.0;
        for a in &self.sites {
            let d = a.dim().1;
            let candidates: Vec<Array1<T>> = (0..d).map(|c| v.dot(&a.slice(s![.., c, ..]))).collect();
            let weights: Vec<f64> = candidates.iter().map(|w| w.iter().map(|x| x.square()).sum()).collect();
            let total: f64 = weights.iter().sum();
            let mut u: f64 = rng.random::<f64>() * total;
            let mut pick = d - 1;
            for (c, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = c;
                    break;
                }
                u -= w;
            }
            // never pick a zero-weight branch because of roundoff at the end
            if weights[pick] == 0.0 {
                pick = weights.iter().rposition(|&w| w > 0.0).expect("nonzero weight");
            }
            let p = weights[pick] / total;
            log2p += p.log2();
            let nrm = weights[pick].sqrt();
            v = candidates[pick].mapv(|x| x / T::from_real(nrm));
            config.push(pick);
        }
        Sample { config, probability: 2f64.powf(log2p), log2_probability: log2p }
    }
}

/// `(phase, log2 |⟨a|b⟩|)` of the site tensors alone (scales excluded).
fn raw_overlap_log2<T: Field>(a: &Mps<T>, b: &Mps<T>) -> (T, f64) {
    let mut env = Array2::<T>::ones((1, 1));
    let mut l2 = 0.0;
    for (x, y) in a.sites.iter().zip(&b.sites) {
        env = transfer_left(&env, x, y);
        let m = max_abs(env.iter().copied());
        if m == 0.0 {
            return (T::zero(), f64::NEG_INFINITY);
        }
        env.mapv_inplace(|v| v / T::from_real(m));
        l2 += m.log2();
    }
    let z = env[[0, 0]];
    let az = z.abs();
    if az == 0.0 {
        return (T::zero(), f64::NEG_INFINITY);
    }
    (z / T::from_real(az), l2 + az.log2())
}

/// `new[ar, br] = Σ conj(bra[al, p, ar]) env[al, bl] ket[bl, p, br]`.
fn transfer_left<T: Field>(env: &Array2<T>, bra: &Array3<T>, ket: &Array3<T>) -> Array2<T> {
    let (bl, p, br) = ket.dim();
    let (al, _, _) = bra.dim();
    let x = env.dot(&to_right_matrix(ket)); // al x (p br)
    let x = x.into_shape_with_order((al * p, br)).expect("contiguous");
    debug_assert_eq!(bl, env.ncols());
    dagger(&to_left_matrix(bra)).dot(&x)
}

fn check_pair<T: Field>(a: &Mps<T>, b: &Mps<T>) -> Result<()> {
    if a.len() != b.len() || a.physical_dims() != b.physical_dims() {
        return Err(MagicError::ShapeMismatch(format!(
            "states have lengths {} / {} and physical dims {:?} / {:?}",
            a.len(),
            b.len(),
            a.physical_dims(),
            b.physical_dims()
        )));
    }
    Ok(())
}

impl Mps<f64> {
    /// Same state with complex site tensors.
    pub fn to_complex(&self) -> Mps<num_complex::Complex64> {
        Mps {
            sites: self.sites.iter().map(|a| a.mapv(|x| num_complex::Complex64::new(x, 0.0))).collect(),
            ortho_center: self.ortho_center,
            log2_scale: self.log2_scale,
        }
    }
}

/// `⟨a|b⟩`, conjugating `a`.
pub fn inner_product<T: Field>(a: &Mps<T>, b: &Mps<T>) -> Result<T> {
    let (ph, l2) = log2_inner_product(a, b)?;
    Ok(ph * T::from_real(2f64.powf(l2)))
}

/// `(phase, log2 |⟨a|b⟩|)`.
pub fn log2_inner_product<T: Field>(a: &Mps<T>, b: &Mps<T>) -> Result<(T, f64)> {
    check_pair(a, b)?;
    let (ph, l2) = raw_overlap_log2(a, b);
    Ok((ph, l2 + a.log2_scale + b.log2_scale))
}

/// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)`.
pub fn fidelity<T: Field>(a: &Mps<T>, b: &Mps<T>) -> Result<f64> {
    let (_, l2) = log2_inner_product(a, b)?;
    Ok(2f64.powf(2.0 * (l2 - a.log2_norm() - b.log2_norm())))
}

impl<T: Field> Mpo<T> {
    pub fn from_sites(sites: Vec<Array4<T>>) -> Result<Self> {
        if sites.is_empty() {
            return Err(MagicError::InvalidArgument("an MPO needs at least one site".into()));
        }
        if sites[0].dim().0 != 1 || sites[sites.len() - 1].dim().3 != 1 {
            return Err(MagicError::ShapeMismatch("boundary bonds must have dimension 1".into()));
        }
        for (j, w) in sites.windows(2).enumerate() {
            if w[0].dim().3 != w[1].dim().0 {
                return Err(MagicError::ShapeMismatch(format!("MPO bond {j} mismatch")));
            }
        }
        let diagonal = sites.iter().all(|w| {
            let (_, o, i, _) = w.dim();
            o == i
                && w.indexed_iter().all(|((_, a, b, _), x)| a == b || *x == T::zero())
        });
        let sites = sites.into_iter().map(|a| a.as_standard_layout().into_owned()).collect();
        Ok(Self { sites, diagonal })
    }

    pub fn identity(dims: &[usize]) -> Self {
        let sites = dims
            .iter()
            .map(|&d| Array4::from_shape_fn((1, d, d, 1), |(_, o, i, _)| if o == i { T::one() } else { T::zero() }))
            .collect();
        Self::from_sites(sites).expect("valid identity")
    }

    /// Tensor product of single-site operators `ops[j][out][in]`.
    pub fn product(ops: &[Array2<T>]) -> Result<Self> {
        let sites = ops
            .iter()
            .map(|op| {
                let (o, i) = op.dim();
                op.clone().into_shape_with_order((1, o, i, 1)).map_err(MagicError::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_sites(sites)
    }

    /// Operator that is diagonal in the physical basis with the amplitudes of
    /// `diag` on the diagonal.
    pub fn diagonal_from(diag: &Mps<T>) -> Self {
        let n = diag.len();
        let scale = T::from_real(2f64.powf(diag.log2_scale / n as f64));
        let sites = diag
            .sites
            .iter()
            .map(|a| {
                let (l, d, r) = a.dim();
                let mut w = Array4::<T>::zeros((l, d, d, r));
                for c in 0..d {
                    w.slice_mut(s![.., c, c, ..]).assign(&a.slice(s![.., c, ..]).mapv(|x| x * scale));
                }
                w
            })
            .collect();
        Self { sites, diagonal: true }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Array4<T>] {
        &self.sites
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites.iter().take(self.len() - 1).map(|w| w.dim().3).collect()
    }

    pub fn physical_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|w| w.dim().1).collect()
    }

    /// Dense matrix, site 0 most significant. Only for small systems.
    pub fn to_dense(&self) -> Array2<T> {
        let mut acc = Array4::<T>::ones((1, 1, 1, 1)); // (out, in, 1, right)
        for w in &self.sites {
            let (a_o, a_i, _, r) = acc.dim();
            let (_, o, i, rr) = w.dim();
            let mut next = Array4::<T>::zeros((a_o * o, a_i * i, 1, rr));
            for ao in 0..a_o {
                for ai in 0..a_i {
                    for b in 0..r {
                        let c = acc[[ao, ai, 0, b]];
                        if c == T::zero() {
                            continue;
                        }
                        for oo in 0..o {
                            for ii in 0..i {
                                for k in 0..rr {
                                    next[[ao * o + oo, ai * i + ii, 0, k]] += c * w[[b, oo, ii, k]];
                                }
                            }
                        }
                    }
                }
            }
            acc = next;
        }
        acc.index_axis(Axis(3), 0).index_axis(Axis(2), 0).to_owned()
    }

    /// `⟨ψ|W|ψ⟩ / ⟨ψ|ψ⟩`.
    pub fn expectation(&self, psi: &Mps<T>) -> Result<T> {
        if self.physical_dims() != psi.physical_dims() {
            return Err(MagicError::ShapeMismatch("MPO and state dims differ".into()));
        }
        let mut env = Array3::<T>::ones((1, 1, 1)); // (bra, w, ket)
        let mut l2 = 0.0;
        for (w, a) in self.sites.iter().zip(&psi.sites) {
            env = sandwich_step(&env, a, w, a);
            let m = max_abs(env.iter().copied());
            if m == 0.0 {
                return Ok(T::zero());
            }
            env.mapv_inplace(|x| x / T::from_real(m));
            l2 += m.log2();
        }
        let (_, nl2) = raw_overlap_log2(psi, psi);
        Ok(env[[0, 0, 0]] * T::from_real(2f64.powf(l2 - nl2)))
    }
}

/// `new[ar, wr, br] = Σ conj(bra[al,o,ar]) env[al,wl,bl] w[wl,o,i,wr] ket[bl,i,br]`.
pub(crate) fn sandwich_step<T: Field>(env: &Array3<T>, bra: &Array3<T>, w: &Array4<T>, ket: &Array3<T>) -> Array3<T> {
    let e = to_dense_tensor(env);
    let t = contract(&e, &to_dense_tensor(ket), &[(2, 0)]).expect("matching bonds"); // al wl i br
    let t = contract(&t, &to_dense_tensor(w), &[(1, 0), (2, 2)]).expect("matching bonds"); // al br o wr
    let t = contract(&to_dense_tensor(&bra.mapv(|x| x.conj())), &t, &[(0, 0), (1, 2)]).expect("matching bonds"); // ar br wr
    let t = t.permute(&[0, 2, 1]).expect("rank 3");
    t.into_array().into_dimensionality().expect("rank 3")
}

/// Applies `w` to `psi` with the chosen compression backend.
pub fn apply_mpo<T: Field>(
    w: &Mpo<T>,
    psi: &Mps<T>,
    policy: &TruncationPolicy,
    method: Compression,
) -> Result<MpoProduct<T>> {
    if w.len() != psi.len() {
        return Err(MagicError::ShapeMismatch(format!(
            "MPO has {} sites, state has {}",
            w.len(),
            psi.len()
        )));
    }
    for (j, (ww, a)) in w.sites.iter().zip(&psi.sites).enumerate() {
        if ww.dim().2 != a.dim().1 {
            return Err(MagicError::ShapeMismatch(format!(
                "site {j}: MPO input dim {} vs state dim {}",
                ww.dim().2,
                a.dim().1
            )));
        }
    }
    let ops: Vec<OpSite<'_, T>> = w.sites.iter().map(|x| OpSite::Mpo(x, w.diagonal)).collect();
    Ok(apply_ops(&ops, 0.0, psi, policy, method))
}

/// Applies the operator that is diagonal in the physical basis with the
/// amplitudes of `diag` on its diagonal, i.e. the element-wise product of
/// the two states, without materializing a rank-4 MPO.
pub fn apply_diagonal<T: Field>(
    diag: &Mps<T>,
    psi: &Mps<T>,
    policy: &TruncationPolicy,
    method: Compression,
) -> Result<MpoProduct<T>> {
    check_pair(diag, psi)?;
    let ops: Vec<OpSite<'_, T>> = diag.sites.iter().map(OpSite::Diag).collect();
    Ok(apply_ops(&ops, diag.log2_scale, psi, policy, method))
}

/// One site of an operator: either an MPO tensor or the site tensor of a
/// state read as a diagonal operator.
#[derive(Clone, Copy)]
enum OpSite<'a, T: Field> {
    Mpo(&'a Array4<T>, bool),
    Diag(&'a Array3<T>),
}

impl<'a, T: Field> OpSite<'a, T> {
    /// (left bond, out, in, right bond)
    fn dim(&self) -> (usize, usize, usize, usize) {
        match self {
            OpSite::Mpo(w, _) => w.dim(),
            OpSite::Diag(a) => {
                let (l, d, r) = a.dim();
                (l, d, d, r)
            }
        }
    }

    fn is_diagonal(&self) -> bool {
        match self {
            OpSite::Mpo(_, d) => *d,
            OpSite::Diag(_) => true,
        }
    }

    fn diag_slice(&self, x: usize) -> ndarray::ArrayView2<'a, T> {
        match self {
            OpSite::Mpo(w, _) => w.slice(s![.., x, x, ..]),
            OpSite::Diag(a) => a.slice(s![.., x, ..]),
        }
    }

    fn to_array4(self) -> std::borrow::Cow<'a, Array4<T>> {
        match self {
            OpSite::Mpo(w, _) => std::borrow::Cow::Borrowed(w),
            OpSite::Diag(a) => {
                let (l, d, r) = a.dim();
                let mut w = Array4::<T>::zeros((l, d, d, r));
                for x in 0..d {
                    w.slice_mut(s![.., x, x, ..]).assign(&a.slice(s![.., x, ..]));
                }
                std::borrow::Cow::Owned(w)
            }
        }
    }
}

fn apply_ops<T: Field>(
    ops: &[OpSite<'_, T>],
    op_log2_scale: f64,
    psi: &Mps<T>,
    policy: &TruncationPolicy,
    method: Compression,
) -> MpoProduct<T> {
    let mut out = match method {
        Compression::Svd => zip_up_apply(ops, psi, policy),
        Compression::DensityMatrix => density_matrix_apply(ops, psi, policy),
    };
    out.state.log2_scale += op_log2_scale;
    out
}

/// Contracts the carry `c[k, wl, al]` with operator site `w` and state site
/// `a`, giving `m[k, o, wr, ar]`.
fn absorb_site<T: Field>(c: &Array3<T>, w: OpSite<'_, T>, a: &Array3<T>) -> Array4<T> {
    let (k, wl, al) = c.dim();
    let (_, d_out, d_in, wr) = w.dim();
    let (_, _, ar) = a.dim();
    let cp = c
        .view()
        .permuted_axes([0, 2, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k * al, wl))
        .expect("contiguous");
    if w.is_diagonal() {
        let mut m = Array4::<T>::zeros((k, d_out, wr, ar));
        for x in 0..d_out {
            let y = cp.dot(&w.diag_slice(x)); // (k al) x wr
            let y = y
                .into_shape_with_order((k, al, wr))
                .expect("contiguous")
                .permuted_axes([0, 2, 1])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((k * wr, al))
                .expect("contiguous");
            let z = y.dot(&a.slice(s![.., x, ..])); // (k wr) x ar
            m.slice_mut(s![.., x, .., ..]).assign(&z.into_shape_with_order((k, wr, ar)).expect("contiguous"));
        }
        return m;
    }
    // general operator: (k al) x wl  .  wl x (o i wr)
    let w4 = w.to_array4();
    let wm = w4.as_standard_layout().into_owned().into_shape_with_order((wl, d_out * d_in * wr)).expect("contiguous");
    let t = cp.dot(&wm); // (k al) x (o i wr)
    let t = t
        .into_shape_with_order((k, al, d_out, d_in, wr))
        .expect("contiguous")
        .permuted_axes([0, 2, 4, 1, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k * d_out * wr, al * d_in))
        .expect("contiguous");
    let z = t.dot(&to_left_matrix(a)); // (k o wr) x ar
    z.into_shape_with_order((k, d_out, wr, ar)).expect("contiguous")
}

/// Splits `mat = U · rest` with `U` an isometry truncated per `policy`.
/// Returns `(U, rest, discarded weight)`. Very wide matrices go through the
/// Gram matrix, which resolves singular values down to about `1e-7` of the
/// largest; that is enough for the intermediate truncations of the zip-up.
pub(crate) fn left_factor<T: Field>(mat: &Array2<T>, policy: &TruncationPolicy) -> (Array2<T>, Array2<T>, f64) {
    let (rows, cols) = mat.dim();
    if rows >= 32 && cols >= 8 * rows {
        let gram = mat.dot(&dagger(mat));
        let gram = (&gram + &dagger(&gram)).mapv(|x| x * T::from_real(0.5));
        let (evals, evecs) = eigh_hermitian(&gram).expect("eigh of hermitian matrix");
        let floor = evals[0].max(0.0) * 1e-14;
        let svals: Vec<f64> = evals.iter().map(|&l| if l > floor { l.sqrt() } else { 0.0 }).collect();
        let nonzero = svals.iter().filter(|&&x| x > 0.0).count().max(1);
        let (keep, e) = policy.cut(&svals[..nonzero]);
        let u = evecs.slice(s![.., ..keep]).to_owned();
        let rest = dagger(&u).dot(mat);
        return (u, rest, e);
    }
    let svd = svd_matrix(mat, policy).expect("SVD of finite matrix");
    let rest = svd.s_vdag();
    (svd.u, rest, svd.truncation_error)
}

fn zip_up_apply<T: Field>(ops: &[OpSite<'_, T>], psi: &Mps<T>, policy: &TruncationPolicy) -> MpoProduct<T> {
    let n = psi.len();
    let psi_rc = psi.canonicalize(0);
    let relaxed = TruncationPolicy { max_rank: policy.max_rank, error_threshold: policy.error_threshold * 0.1 };
    let mut carry = Array3::<T>::ones((1, 1, 1));
    let mut sites = Vec::with_capacity(n);
    let mut l2 = psi_rc.log2_scale;
    let mut err = 0.0;
    for j in 0..n {
        let m = absorb_site(&carry, ops[j], &psi_rc.sites[j]);
        let (k, d, wr, ar) = m.dim();
        let mat = m.into_shape_with_order((k * d, wr * ar)).expect("contiguous");
        if j + 1 == n {
            let nrm = frob(mat.iter().copied());
            let site = if nrm > 0.0 { mat.mapv(|x| x / T::from_real(nrm)) } else { mat };
            l2 += if nrm > 0.0 { nrm.log2() } else { f64::NEG_INFINITY };
            sites.push(from_matrix3(site, (k, d, 1)));
            break;
        }
        let (u, rest, e) = left_factor(&mat, &relaxed);
        err += e;
        let r = u.ncols();
        let nrm = frob(rest.iter().copied());
        sites.push(from_matrix3(u, (k, d, r)));
        if nrm > 0.0 {
            carry = from_matrix3(rest.mapv(|x| x / T::from_real(nrm)), (r, wr, ar));
            l2 += nrm.log2();
        } else {
            carry = from_matrix3(rest, (r, wr, ar));
        }
    }
    let mut state = Mps::set_sites_raw(sites, Some(n - 1), l2);
    if n > 1 {
        err += state.svd_sweep_right_to_left(policy);
    }
    MpoProduct { state, truncation_error: err }
}

fn density_matrix_apply<T: Field>(ops: &[OpSite<'_, T>], psi: &Mps<T>, policy: &TruncationPolicy) -> MpoProduct<T> {
    let n = psi.len();
    let psi_rc = psi.canonicalize(0);
    // right environments: envs[j] sits on the bond right of site j, (wr, ar, wr', ar')
    let mut envs: Vec<Array4<T>> = vec![Array4::ones((1, 1, 1, 1)); n];
    for j in (1..n).rev() {
        let r = to_dense_tensor(&envs[j]);
        let a = to_dense_tensor(&psi_rc.sites[j]);
        let ac = a.conj();
        let ww = to_dense_tensor(ops[j].to_array4().as_ref());
        let wc = ww.conj();
        let t = contract(&r, &ac, &[(3, 2)]).expect("bonds"); // wr ar wr' al' i'
        let t = contract(&t, &wc, &[(2, 3), (4, 2)]).expect("bonds"); // wr ar al' wl' o
        let t = contract(&t, &a, &[(1, 2)]).expect("bonds"); // wr al' wl' o al i
        let t = contract(&t, &ww, &[(0, 3), (3, 1), (5, 2)]).expect("bonds"); // al' wl' al wl
        let t = t.permute(&[3, 2, 1, 0]).expect("rank 4");
        let mut e: Array4<T> = t.into_array().into_dimensionality().expect("rank 4");
        let m = max_abs(e.iter().copied());
        if m > 0.0 {
            e.mapv_inplace(|x| x / T::from_real(m));
        }
        envs[j - 1] = e;
    }
    let mut carry = Array3::<T>::ones((1, 1, 1));
    let mut sites = Vec::with_capacity(n);
    let mut l2 = psi_rc.log2_scale;
    let mut err = 0.0;
    for j in 0..n {
        let m = absorb_site(&carry, ops[j], &psi_rc.sites[j]);
        let (k, d, wr, ar) = m.dim();
        let mat = m.into_shape_with_order((k * d, wr * ar)).expect("contiguous");
        if j + 1 == n {
            let nrm = frob(mat.iter().copied());
            let site = if nrm > 0.0 { mat.mapv(|x| x / T::from_real(nrm)) } else { mat };
            l2 += if nrm > 0.0 { nrm.log2() } else { f64::NEG_INFINITY };
            sites.push(from_matrix3(site, (k, d, 1)));
            break;
        }
        let env = std::mem::replace(&mut envs[j], Array4::zeros((1, 1, 1, 1)))
            .into_shape_with_order((wr * ar, wr * ar))
            .expect("contiguous");
        // rho = M E M^†, hermitian positive semidefinite
        let rho = mat.dot(&env).dot(&dagger(&mat));
        let rho = (&rho + &dagger(&rho)).mapv(|x| x * T::from_real(0.5));
        let (evals, evecs) = eigh_hermitian(&rho).expect("eigh of hermitian matrix");
        // eigenvalues below roundoff of the largest are structural zeros
        let floor = evals[0].max(0.0) * 1e-13;
        let svals: Vec<f64> = evals.iter().map(|&l| if l > floor { l.sqrt() } else { 0.0 }).collect();
        let nonzero = svals.iter().filter(|&&x| x > 0.0).count().max(1);
        let (keep, e) = policy.cut(&svals[..nonzero]);
        err += e;
        let u = evecs.slice(s![.., ..keep]).to_owned();
        let next = dagger(&u).dot(&mat); // keep x (wr ar)
        let nrm = frob(next.iter().copied());
        sites.push(from_matrix3(u, (k, d, keep)));
        if nrm > 0.0 {
            carry = from_matrix3(next.mapv(|x| x / T::from_real(nrm)), (keep, wr, ar));
            l2 += nrm.log2();
        } else {
            carry = from_matrix3(next, (keep, wr, ar));
        }
    }
    let state = Mps::set_sites_raw(sites, Some(n - 1), l2);
    MpoProduct { state, truncation_error: err }
}

/// Peak number of entries of one density-matrix environment when applying
/// an operator with bonds `op_bonds` to a state with bonds `state_bonds`.
pub fn density_matrix_env_size(op_bonds: &[usize], state_bonds: &[usize]) -> usize {
    op_bonds.iter().zip(state_bonds).map(|(w, a)| (w * a) * (w * a)).max().unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn dense_inner(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    }

    fn is_left_isometric(a: &Array3<C64>) -> bool {
        let m = to_left_matrix(a);
        let g = dagger(&m).dot(&m);
        g.indexed_iter().all(|((i, j), x)| (x - c(if i == j { 1.0 } else { 0.0 })).norm() < 1e-10)
    }

    fn is_right_isometric(a: &Array3<C64>) -> bool {
        let m = to_right_matrix(a);
        let g = m.dot(&dagger(&m));
        g.indexed_iter().all(|((i, j), x)| (x - c(if i == j { 1.0 } else { 0.0 })).norm() < 1e-10)
    }

    fn unnormalized_random(n: usize, chi: usize, seed: u64) -> Mps<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mps::<C64>::random(n, 2, chi, &mut rng);
        m.scale_by(c(1.7));
        // scramble the gauge so no canonical form is known
        let mut sites = m.sites.clone();
        for j in 0..n - 1 {
            let r = sites[j].dim().2;
            let g = Array2::from_shape_fn((r, r), |(a, b)| c(if a == b { 1.0 + 0.3 * a as f64 } else { 0.0 }));
            let gi = g.mapv(|x| if x.norm() > 0.0 { x.inv() } else { x });
            let (l, p, _) = sites[j].dim();
            sites[j] = from_matrix3(to_left_matrix(&sites[j]).dot(&g), (l, p, r));
            let (_, pn, rn) = sites[j + 1].dim();
            sites[j + 1] = from_matrix3(gi.dot(&to_right_matrix(&sites[j + 1])), (r, pn, rn));
        }
        Mps::from_sites(sites).unwrap()
    }

    #[test]
    fn product_state_canonicalization_keeps_tensors() {
        let psi = Mps::<C64>::basis_state(&[0, 0], &[2, 2]).unwrap();
        let out = psi.canonicalize(1);
        assert_eq!(out.ortho_center(), Some(1));
        assert!((out.to_dense()[0] - c(1.0)).norm() < 1e-14);
        for (a, b) in psi.sites().iter().zip(out.sites()) {
            let d = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(d < 1e-14);
        }
    }

    #[test]
    fn canonicalize_preserves_state_and_isometries() {
        let psi = unnormalized_random(6, 4, 1);
        let dense = psi.to_dense();
        for center in [0, 2, 5] {
            let out = psi.canonicalize(center);
            let d2 = out.to_dense();
            let diff = dense.iter().zip(d2.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-10 * dense.iter().map(|x| x.norm()).fold(0.0, f64::max));
            for j in 0..center {
                assert!(is_left_isometric(out.site(j)), "site {j} for center {center}");
            }
            for j in center + 1..6 {
                assert!(is_right_isometric(out.site(j)), "site {j} for center {center}");
            }
            let ip = inner_product(&psi, &out).unwrap();
            let nsq = dense_inner(&dense, &dense);
            assert!((ip - nsq).norm() < 1e-10 * nsq.norm());
        }
    }

    #[test]
    fn moving_the_center_of_a_canonical_state() {
        let psi = Mps::<C64>::random(6, 2, 4, &mut ChaCha8Rng::seed_from_u64(9));
        let out = psi.canonicalize(5);
        for j in 0..5 {
            assert!(is_left_isometric(out.site(j)));
        }
        let back = out.canonicalize(2);
        assert!(is_left_isometric(back.site(1)) && is_right_isometric(back.site(3)));
        assert!((back.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inner_products() {
        let zero = Mps::<C64>::basis_state(&[0, 0], &[2, 2]).unwrap();
        assert!((inner_product(&zero, &zero).unwrap() - c(1.0)).norm() < 1e-15);
        let n = 5;
        let plus = Mps::product_state(&vec![vec![c(0.5f64.sqrt()), c(0.5f64.sqrt())]; n]).unwrap();
        let zeros = Mps::<C64>::basis_state(&vec![0; n], &vec![2; n]).unwrap();
        let ip = inner_product(&plus, &zeros).unwrap();
        assert!((ip - c(2f64.powf(-(n as f64) / 2.0))).norm() < 1e-15);

        let a = Mps::<C64>::random(6, 2, 4, &mut ChaCha8Rng::seed_from_u64(2));
        let b = Mps::<C64>::random(6, 2, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let oracle = dense_inner(&a.to_dense(), &b.to_dense());
        assert!((inner_product(&a, &b).unwrap() - oracle).norm() < 1e-12);
    }

    #[test]
    fn inner_product_shape_mismatch() {
        let a = Mps::<C64>::basis_state(&[0, 0], &[2, 2]).unwrap();
        let b = Mps::<C64>::basis_state(&[0, 0, 0], &[2, 2, 2]).unwrap();
        assert!(inner_product(&a, &b).is_err());
    }

    #[test]
    fn log_scale_survives_underflow() {
        let n = 1500;
        let half = vec![c(0.5), c(0.5)];
        let psi = Mps::product_state(&vec![half; n]).unwrap();
        // norm^2 = 2^{-n}
        assert!((psi.log2_norm() + n as f64 / 2.0).abs() < 1e-9);
        let (_, l2) = log2_inner_product(&psi, &psi).unwrap();
        assert!((l2 + n as f64).abs() < 1e-9);
    }

    fn ghz(n: usize) -> Mps<C64> {
        let h = 0.5f64.sqrt();
        let mut sites = Vec::new();
        for j in 0..n {
            let (l, r) = (if j == 0 { 1 } else { 2 }, if j == n - 1 { 1 } else { 2 });
            let mut a = Array3::<C64>::zeros((l, 2, r));
            for b in 0..2 {
                let li = if j == 0 { 0 } else { b };
                let ri = if j == n - 1 { 0 } else { b };
                a[[li, b, ri]] = c(if j == 0 { h } else { 1.0 });
            }
            sites.push(a);
        }
        Mps::from_sites(sites).unwrap()
    }

    #[test]
    fn svd_compression_cases() {
        let g = ghz(6);
        let (out, err) = g.compress_svd(&TruncationPolicy::with_max_rank(2));
        assert_eq!(err, 0.0);
        assert!((fidelity(&g, &out).unwrap() - 1.0).abs() < 1e-10);

        let psi = Mps::<C64>::random(8, 2, 8, &mut ChaCha8Rng::seed_from_u64(5));
        let (out, err) = psi.compress_svd(&TruncationPolicy::with_max_rank(8));
        assert!(err < 1e-20);
        assert!((fidelity(&psi, &out).unwrap() - 1.0).abs() < 1e-10);

        let psi = Mps::<C64>::random(10, 2, 16, &mut ChaCha8Rng::seed_from_u64(6));
        let (out, err) = psi.compress_svd(&TruncationPolicy::with_max_rank(4));
        assert!(out.max_bond() <= 4);
        let f = fidelity(&psi, &out).unwrap();
        assert!(err > 0.0 && f >= 1.0 - 1.1 * err, "fidelity {f} error {err}");
    }

    #[test]
    fn density_matrix_compression_cases() {
        let prod = Mps::product_state(&vec![vec![c(0.6), c(0.8)]; 4]).unwrap();
        let (out, err) = prod.compress_density_matrix(&TruncationPolicy::with_max_rank(1));
        assert!(err < 1e-14);
        assert!((fidelity(&prod, &out).unwrap() - 1.0).abs() < 1e-12);

        let psi = Mps::<C64>::random(10, 2, 16, &mut ChaCha8Rng::seed_from_u64(6));
        let policy = TruncationPolicy::with_max_rank(4);
        let (svd_out, _) = psi.compress_svd(&policy);
        let (dm_out, dm_err) = psi.compress_density_matrix(&policy);
        assert!(dm_out.max_bond() <= 4);
        let f_svd = fidelity(&psi, &svd_out).unwrap();
        let f_dm = fidelity(&psi, &dm_out).unwrap();
        assert!(f_dm >= f_svd - 1e-10, "{f_dm} < {f_svd}");
        assert!(f_dm >= 1.0 - 1.1 * dm_err);

        let bell = ghz(2);
        let (out, _) = bell.compress_density_matrix(&TruncationPolicy::with_max_rank(1));
        assert!((fidelity(&bell, &out).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn compression_never_grows_bonds() {
        let psi = unnormalized_random(7, 6, 13);
        let before = psi.bond_dims();
        for policy in [TruncationPolicy::exact(), TruncationPolicy::with_max_rank(3)] {
            let (a, _) = psi.compress_svd(&policy);
            let (b, _) = psi.compress_density_matrix(&policy);
            for (x, y) in a.bond_dims().iter().zip(&before) {
                assert!(x <= y);
            }
            for (x, y) in b.bond_dims().iter().zip(&before) {
                assert!(x <= y);
            }
        }
    }

    fn random_mpo(n: usize, chi: usize, seed: u64) -> Mpo<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites = (0..n)
            .map(|j| {
                let l = if j == 0 { 1 } else { chi };
                let r = if j == n - 1 { 1 } else { chi };
                Array4::from_shape_simple_fn((l, 2, 2, r), || {
                    C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                })
            })
            .collect();
        Mpo::from_sites(sites).unwrap()
    }

    #[test]
    fn apply_identity_and_flip() {
        let psi = Mps::<C64>::random(6, 2, 4, &mut ChaCha8Rng::seed_from_u64(8));
        let id = Mpo::identity(&[2; 6]);
        for method in [Compression::Svd, Compression::DensityMatrix] {
            let out = apply_mpo(&id, &psi, &TruncationPolicy::exact(), method).unwrap();
            assert!((fidelity(&psi, &out.state).unwrap() - 1.0).abs() < 1e-10);
            assert!((out.state.norm() - 1.0).abs() < 1e-10);
        }
        let x = Array2::from_shape_vec((2, 2), vec![c(0.), c(1.), c(1.), c(0.)]).unwrap();
        let flip = Mpo::product(&vec![x; 5]).unwrap();
        let zeros = Mps::<C64>::basis_state(&[0; 5], &[2; 5]).unwrap();
        let ones = Mps::<C64>::basis_state(&[1; 5], &[2; 5]).unwrap();
        let out = apply_mpo(&flip, &zeros, &TruncationPolicy::exact(), Compression::Svd).unwrap();
        assert!((inner_product(&ones, &out.state).unwrap() - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn apply_random_mpo_matches_dense() {
        let psi = Mps::<C64>::random(6, 2, 4, &mut ChaCha8Rng::seed_from_u64(10));
        let w = random_mpo(6, 3, 11);
        let dense = w.to_dense().dot(&psi.to_dense());
        let scale = dense.iter().map(|x| x.norm()).fold(0.0, f64::max);
        for method in [Compression::Svd, Compression::DensityMatrix] {
            let out = apply_mpo(&w, &psi, &TruncationPolicy::exact(), method).unwrap();
            let got = out.state.to_dense();
            let diff = got.iter().zip(dense.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-10 * scale, "{method:?}: {diff}");
        }
    }

    #[test]
    fn diagonal_mpo_fast_path_matches_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = Mps::<C64>::random(5, 4, 3, &mut rng);
        let psi = Mps::<C64>::random(5, 4, 3, &mut rng);
        let w = Mpo::diagonal_from(&d);
        assert!(w.is_diagonal());
        let fast = apply_mpo(&w, &psi, &TruncationPolicy::exact(), Compression::Svd).unwrap().state.to_dense();
        let dd = d.to_dense();
        let pd = psi.to_dense();
        for i in 0..fast.len() {
            assert!((fast[i] - dd[i] * pd[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn apply_diagonal_matches_mpo_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut d = Mps::<C64>::random(6, 4, 3, &mut rng);
        d.scale_log2(-5.0);
        let psi = Mps::<C64>::random(6, 4, 3, &mut rng);
        let w = Mpo::diagonal_from(&d);
        for method in [Compression::Svd, Compression::DensityMatrix] {
            let a = apply_diagonal(&d, &psi, &TruncationPolicy::exact(), method).unwrap().state.to_dense();
            let b = apply_mpo(&w, &psi, &TruncationPolicy::exact(), method).unwrap().state.to_dense();
            let diff = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{method:?}: {diff}");
        }
    }

    #[test]
    fn wide_gram_factor_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mat = Array2::from_shape_simple_fn((40, 400), || C64::new(rng.sample(StandardNormal), 0.0));
        let (u, rest, e) = left_factor(&mat, &TruncationPolicy::exact());
        assert!(e < 1e-14);
        let diff = (u.dot(&rest) - &mat).iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn entanglement_spectra() {
        let prod = Mps::product_state(&vec![vec![c(0.6), c(0.8)]; 3]).unwrap();
        let sp = prod.entanglement_spectrum(1).unwrap();
        assert_eq!(sp.values.len(), 1);
        assert!((sp.values[0] - 1.0).abs() < 1e-12);

        let bell = ghz(2);
        let sp = bell.entanglement_spectrum(1).unwrap();
        assert!(sp.values.iter().all(|v| (v - 0.5f64.sqrt()).abs() < 1e-12));
        assert!((sp.von_neumann_entropy() - 1.0).abs() < 1e-12);

        let psi = Mps::<C64>::random(6, 2, 8, &mut ChaCha8Rng::seed_from_u64(4));
        let dense = psi.to_dense().into_shape_with_order((8, 8)).unwrap();
        let svd = svd_matrix(&dense, &TruncationPolicy::exact()).unwrap();
        let sp = psi.entanglement_spectrum(3).unwrap();
        for (a, b) in sp.values.iter().zip(svd.singular_values.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sampling_basics() {
        let psi = Mps::<C64>::basis_state(&[0, 1], &[2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = psi.perfect_sample(&mut rng).unwrap();
            assert_eq!(s.config, vec![0, 1]);
            assert!((s.probability - 1.0).abs() < 1e-14);
        }
        let plus = Mps::product_state(&[vec![c(0.5f64.sqrt()), c(0.5f64.sqrt())]]).unwrap();
        let sampler = plus.sampler().unwrap();
        let draws = 100_000;
        let ones = (0..draws).filter(|_| sampler.draw(&mut rng).config[0] == 1).count();
        assert!((ones as f64 / draws as f64 - 0.5).abs() < 0.01);

        let bad = Mps::product_state(&[vec![c(1.0), c(1.0)]]).unwrap();
        assert!(matches!(bad.perfect_sample(&mut rng), Err(MagicError::NotNormalized { .. })));
    }

    #[test]
    fn sample_probability_is_born_rule() {
        let psi = Mps::<C64>::random(5, 2, 4, &mut ChaCha8Rng::seed_from_u64(21));
        let dense = psi.to_dense();
        let sampler = psi.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let s = sampler.draw(&mut rng);
            let idx = s.config.iter().fold(0, |acc, &b| acc * 2 + b);
            assert!((s.probability - dense[idx].norm_sqr()).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_round_trip_and_linear_combination() {
        let psi = Mps::<C64>::random(5, 2, 4, &mut ChaCha8Rng::seed_from_u64(30));
        let phi = Mps::<C64>::random(5, 2, 3, &mut ChaCha8Rng::seed_from_u64(31));
        let (back, err) = Mps::from_dense(psi.to_dense().as_slice().unwrap(), &[2; 5], &TruncationPolicy::exact()).unwrap();
        assert!(err < 1e-20);
        assert!((fidelity(&psi, &back).unwrap() - 1.0).abs() < 1e-12);

        let mut scaled = phi.clone();
        scaled.scale_log2(-3.0);
        let sum = Mps::linear_combination(&[(c(2.0), &psi), (C64::new(0.0, -1.0), &scaled)]).unwrap();
        let expect = psi.to_dense().mapv(|x| x * 2.0) + phi.to_dense().mapv(|x| x * C64::new(0.0, -0.125));
        let got = sum.to_dense();
        for i in 0..got.len() {
            assert!((got[i] - expect[i]).norm() < 1e-12);
        }
        assert_eq!(sum.bond_dims(), vec![2 + 2, 4 + 3, 4 + 3, 2 + 2]);
    }
}
