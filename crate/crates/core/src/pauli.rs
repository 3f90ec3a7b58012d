//! Pauli-basis representation of a state and the magic measures built on it.
//!
//! The Pauli vector of an `N`-qubit state has amplitudes
//! `⟨α|P(ψ)⟩ = ⟨ψ|P_α|ψ⟩ / √(2^N)` over the `4^N` Pauli strings, with the
//! per-site symbols ordered `I, X, Z, Y` (codes `00, 01, 10, 11` as `zx`).
//! For pure states it is a normalized, real MPS of physical dimension 4.

use std::collections::HashSet;
use std::f64::consts::FRAC_1_SQRT_2;
use std::time::Instant;

use ndarray::{s, Array2, Array3, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::mps::{apply_diagonal, density_matrix_env_size, left_factor, log2_inner_product, Compression, Mps};
use crate::stabilizer::{Gf2Basis, PauliString, StabilizerGroup};
use crate::tensor::TruncationPolicy;

type C64 = Complex64;

/// Largest density-matrix environment (entries) before falling back to SVD.
pub const MAX_DENSITY_MATRIX_ENV: usize = 1 << 22;

/// Pauli-basis MPS of an `N`-qubit state.
#[derive(Clone, Debug)]
pub struct PauliVector {
    pub mps: Mps<f64>,
    pub source_n: usize,
    /// Discarded weight accumulated while building.
    pub truncation_error: f64,
}

impl PauliVector {
    pub fn len(&self) -> usize {
        self.source_n
    }

    pub fn is_empty(&self) -> bool {
        self.source_n == 0
    }

    /// `⟨α|P(ψ)⟩`, ignoring the sign of `p`.
    pub fn amplitude(&self, p: &PauliString) -> f64 {
        let (ph, l2) = self.mps.log2_amplitude(&p.symbols());
        ph * 2f64.powf(l2)
    }

    /// `⟨ψ|P|ψ⟩` including the sign carried by `p`.
    pub fn expectation(&self, p: &PauliString) -> f64 {
        let v = expectation_of_symbols(&self.mps, &p.symbols());
        if p.is_negative() {
            -v
        } else {
            v
        }
    }
}

/// `√(2^N) ⟨code|v⟩` without intermediate underflow.
fn expectation_of_symbols(v: &Mps<f64>, symbols: &[usize]) -> f64 {
    let (ph, l2) = v.log2_amplitude(symbols);
    ph * 2f64.powf(l2 + 0.5 * symbols.len() as f64)
}

/// Order-`n` replica `|P^(n)⟩ = W^{n−1}|P⟩`.
#[derive(Clone, Debug)]
pub struct ReplicaVector {
    pub mps: Mps<f64>,
    pub order: usize,
    /// Discarded weight of each application of `W`.
    pub truncation_errors: Vec<f64>,
}

/// Pauli matrices in symbol order I, X, Z, Y.
fn pauli_2x2(p: usize) -> [[C64; 2]; 2] {
    let o = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match p {
        0 => [[one, o], [o, one]],
        1 => [[o, one], [one, o]],
        2 => [[one, o], [o, -one]],
        _ => [[o, -i], [i, o]],
    }
}

/// Orthonormal Hermitian basis of `χ×χ` matrices. Entry `h` gives the two
/// nonzero entries `(i1, c1), (i2, c2)` of `vec(H_h)` (row-major pair index).
fn hermitian_basis(chi: usize) -> Vec<(usize, C64, usize, C64)> {
    let mut out = Vec::with_capacity(chi * chi);
    let r = FRAC_1_SQRT_2;
    for j in 0..chi {
        out.push((j * chi + j, C64::new(1.0, 0.0), j * chi + j, C64::new(0.0, 0.0)));
    }
    for j in 0..chi {
        for k in j + 1..chi {
            out.push((j * chi + k, C64::new(r, 0.0), k * chi + j, C64::new(r, 0.0)));
            out.push((j * chi + k, C64::new(0.0, r), k * chi + j, C64::new(0.0, -r)));
        }
    }
    out
}

/// Real coefficients (rows) to pair-index vectors: `v = v' U†`.
fn to_pair(rh: &Array2<f64>, chi: usize) -> Array2<C64> {
    let basis = hermitian_basis(chi);
    let mut out = Array2::<C64>::zeros((rh.nrows(), chi * chi));
    for (h, &(i1, c1, i2, c2)) in basis.iter().enumerate() {
        let col = rh.column(h);
        for (row, &x) in col.iter().enumerate() {
            out[[row, i1]] += c1.conj() * x;
            if c2.norm_sqr() > 0.0 {
                out[[row, i2]] += c2.conj() * x;
            }
        }
    }
    out
}

/// Pair-index columns to real coefficients: `M' = M U`, imaginary part dropped.
fn from_pair(m: &Array2<C64>, chi: usize) -> Array2<f64> {
    let basis = hermitian_basis(chi);
    let mut out = Array2::<f64>::zeros((m.nrows(), chi * chi));
    for (h, &(i1, c1, i2, c2)) in basis.iter().enumerate() {
        let mut col = out.column_mut(h);
        for row in 0..m.nrows() {
            let mut v = c1 * m[[row, i1]];
            if c2.norm_sqr() > 0.0 {
                v += c2 * m[[row, i2]];
            }
            col[row] = v.re;
        }
    }
    out
}

/// Carry `rh[k, (a a')]` times the Pauli transfer tensor of site `a`, in the
/// real Hermitian gauge: returns `m[k, p, (b b')]` as a `(k·4) × r²` matrix.
fn pauli_site_product(rh: &Array2<f64>, a: &Array3<C64>) -> Array2<f64> {
    let (l, d, r) = a.dim();
    debug_assert_eq!(d, 2);
    let k = rh.nrows();
    let rp = to_pair(rh, l); // k x (a a')
    // t[k, a', s, b] = Σ_a rp[k, a, a'] conj(A[a, s, b])
    let rp = rp
        .into_shape_with_order((k, l, l))
        .expect("contiguous")
        .permuted_axes([0, 2, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k * l, l))
        .expect("contiguous");
    let a_mat = a.as_standard_layout().into_owned().into_shape_with_order((l, d * r)).expect("contiguous");
    let t = rp.dot(&a_mat.mapv(|x| x.conj())); // (k a') x (s b)
    // u[k, s, b, s', b'] = Σ_a' t[k, a', s, b] A[a', s', b']
    let t = t
        .into_shape_with_order((k, l, d * r))
        .expect("contiguous")
        .permuted_axes([0, 2, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k * d * r, l))
        .expect("contiguous");
    let u = t.dot(&a_mat).into_shape_with_order((k, d, r, d, r)).expect("contiguous");
    let mut m = Array3::<C64>::zeros((k, 4, r * r));
    let scale = C64::new(FRAC_1_SQRT_2, 0.0);
    for p in 0..4 {
        let pm = pauli_2x2(p);
        let mut dst = m.index_axis_mut(Axis(1), p);
        for s1 in 0..2 {
            for s2 in 0..2 {
                let c = pm[s1][s2];
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                let blk = u.slice(s![.., s1, .., s2, ..]);
                let blk = blk.as_standard_layout();
                let blk = blk.view().into_shape_with_order((k, r * r)).expect("contiguous");
                dst.scaled_add(c * scale, &blk);
            }
        }
    }
    let m = m.into_shape_with_order((k * 4, r * r)).expect("contiguous");
    from_pair(&m, r)
}

fn check_qubit_state(psi: &Mps<C64>) -> Result<()> {
    if psi.physical_dims().iter().any(|&d| d != 2) {
        return Err(MagicError::InvalidArgument("Pauli vectors need a qubit state".into()));
    }
    let norm_sq = 2f64.powf(2.0 * psi.log2_norm());
    if (norm_sq - 1.0).abs() > 1e-8 {
        return Err(MagicError::NotNormalized { norm_sq });
    }
    Ok(())
}

/// Builds `|P(ψ)⟩`, compressing each bond on the fly so the uncompressed
/// `χ²` representation never has to be stored. The result is normalized.
pub fn build_pauli_vector(psi: &Mps<C64>, policy: &TruncationPolicy) -> Result<PauliVector> {
    check_qubit_state(psi)?;
    let n = psi.len();
    let mut psi = psi.canonicalize(0);
    psi.normalize_mut();
    let mut carry = Array2::<f64>::ones((1, 1));
    let mut sites = Vec::with_capacity(n);
    let mut err = 0.0;
    for j in 0..n {
        let a = psi.site(j);
        let r = a.dim().2;
        let m = pauli_site_product(&carry, a);
        let k = m.nrows() / 4;
        if j + 1 == n {
            sites.push(m.into_shape_with_order((k, 4, 1)).expect("contiguous"));
            break;
        }
        let (u, rest, e) = left_factor(&m, policy);
        err += e;
        let keep = u.ncols();
        sites.push(u.into_shape_with_order((k, 4, keep)).expect("contiguous"));
        let nrm = rest.iter().map(|x| x * x).sum::<f64>().sqrt();
        carry = if nrm > 0.0 { rest / nrm } else { rest };
        debug_assert_eq!(carry.ncols(), r * r);
    }
    let mut mps = Mps::from_sites(sites)?;
    mps.canonicalize_mut(n - 1);
    mps.normalize_mut();
    Ok(PauliVector { mps, source_n: n, truncation_error: err })
}

/// The diagonal operator `W` with `p`'s amplitudes on its diagonal, as an MPO.
/// Algorithms here apply it through [`apply_diagonal`] instead, which avoids
/// the rank-4 tensors.
pub fn build_diagonal_w(p: &PauliVector) -> crate::mps::Mpo<f64> {
    crate::mps::Mpo::diagonal_from(&p.mps)
}

/// Options shared by the replica-based measures.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SreOptions {
    pub policy: TruncationPolicy,
    pub method: Compression,
    /// Abort when one compression discards more than this weight.
    pub abort_threshold: Option<f64>,
}

impl Default for SreOptions {
    fn default() -> Self {
        Self {
            policy: TruncationPolicy { max_rank: usize::MAX, error_threshold: 1e-9 },
            method: Compression::Svd,
            abort_threshold: None,
        }
    }
}

fn check_abort(err: f64, opts: &SreOptions) -> Result<()> {
    match opts.abort_threshold {
        Some(t) if err > t => Err(MagicError::TruncationAbort { error: err, threshold: t }),
        _ => Ok(()),
    }
}

/// `W^{n−1}|P⟩`.
pub fn replica_vector(p: &PauliVector, n: usize, opts: &SreOptions) -> Result<ReplicaVector> {
    if n == 0 {
        return Err(MagicError::InvalidArgument("replica order must be >= 1".into()));
    }
    let mut cur = p.mps.clone();
    let mut errs = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let out = apply_diagonal(&p.mps, &cur, &opts.policy, opts.method)?;
        check_abort(out.truncation_error, opts)?;
        errs.push(out.truncation_error);
        cur = out.state;
    }
    Ok(ReplicaVector { mps: cur, order: n, truncation_errors: errs })
}

/// Stabilizer Rényi entropy from a replica: `log2⟨P^(n)|P^(n)⟩/(1−n) − N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SreResult {
    pub order: usize,
    pub value: f64,
    pub build_truncation_error: f64,
    pub truncation_errors: Vec<f64>,
    pub max_bond: usize,
}

pub fn replica_sre_from(p: &PauliVector, n: usize, opts: &SreOptions) -> Result<SreResult> {
    if n < 2 {
        return Err(MagicError::InvalidArgument(format!("replica SRE needs n >= 2, got {n}")));
    }
    let rep = replica_vector(p, n, opts)?;
    let l2 = 2.0 * rep.mps.log2_norm();
    let value = l2 / (1.0 - n as f64) - p.source_n as f64;
    Ok(SreResult {
        order: n,
        value,
        build_truncation_error: p.truncation_error,
        truncation_errors: rep.truncation_errors,
        max_bond: rep.mps.max_bond(),
    })
}

pub fn replica_sre(psi: &Mps<C64>, n: usize, opts: &SreOptions) -> Result<SreResult> {
    let p = build_pauli_vector(psi, &opts.policy)?;
    check_abort(p.truncation_error, opts)?;
    replica_sre_from(&p, n, opts)
}

/// Additive and plain Bell magic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BellResult {
    pub b_additive: f64,
    pub b: f64,
    pub truncation_error: f64,
    pub max_bond: usize,
}

/// Carry `r[k, (l1 l2)]` times the XOR-convolution tensor
/// `C^α = Σ_{β⊕γ=α} B^β ⊗ B^γ`, as a `(k·4) × (r1 r2)` matrix.
fn convolution_site_product(carry: &Array2<f64>, b: &Array3<f64>) -> Array2<f64> {
    let (l, d, r) = b.dim();
    debug_assert_eq!(d, 4);
    let k = carry.nrows();
    let b_mat = b.as_standard_layout().into_owned().into_shape_with_order((l, d * r)).expect("contiguous");
    // t1[k, l2, β, r1] = Σ_l1 carry[k, l1, l2] B[l1, β, r1]
    let c = carry
        .view()
        .into_shape_with_order((k, l, l))
        .expect("contiguous")
        .permuted_axes([0, 2, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((k * l, l))
        .expect("contiguous");
    let t1 = c.dot(&b_mat).into_shape_with_order((k, l, d, r)).expect("contiguous");
    let mut m = ndarray::Array4::<f64>::zeros((k, d, r, r));
    for beta in 0..d {
        let x = t1
            .slice(s![.., .., beta, ..])
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((k * r, l))
            .expect("contiguous");
        // y[k, r1, γ, r2]
        let y = x.dot(&b_mat).into_shape_with_order((k, r, d, r)).expect("contiguous");
        for gamma in 0..d {
            let mut dst = m.index_axis_mut(Axis(1), beta ^ gamma);
            dst += &y.index_axis(Axis(2), gamma);
        }
    }
    m.into_shape_with_order((k * d, r * r)).expect("contiguous")
}

/// Per-site commutation matrix: +1 when the two Paulis commute, −1 otherwise.
const LAMBDA: [[f64; 4]; 4] = [[1., 1., 1., 1.], [1., 1., -1., -1.], [1., -1., 1., -1.], [1., -1., -1., 1.]];

/// Bell magic from the XOR self-convolution of the order-2 replica.
pub fn bell_magic(psi: &Mps<C64>, opts: &SreOptions) -> Result<BellResult> {
    let p = build_pauli_vector(psi, &opts.policy)?;
    check_abort(p.truncation_error, opts)?;
    bell_magic_from(&p, opts)
}

pub fn bell_magic_from(p: &PauliVector, opts: &SreOptions) -> Result<BellResult> {
    let rep = replica_vector(p, 2, opts)?;
    let mut err = p.truncation_error + rep.truncation_errors.iter().sum::<f64>();
    let p2 = rep.mps.canonicalize(0);
    let n = p2.len();
    let mut carry = Array2::<f64>::ones((1, 1));
    let mut sites = Vec::with_capacity(n);
    let mut l2 = 2.0 * p2.log2_scale();
    for j in 0..n {
        let m = convolution_site_product(&carry, p2.site(j));
        let k = m.nrows() / 4;
        if j + 1 == n {
            sites.push(m.into_shape_with_order((k, 4, 1)).expect("contiguous"));
            break;
        }
        let (u, rest, e) = left_factor(&m, &opts.policy);
        check_abort(e, opts)?;
        err += e;
        let keep = u.ncols();
        sites.push(u.into_shape_with_order((k, 4, keep)).expect("contiguous"));
        let nrm = rest.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 0.0 {
            carry = rest / nrm;
            l2 += nrm.log2();
        } else {
            carry = rest;
        }
    }
    let mut q = Mps::from_sites(sites)?;
    q.scale_log2(l2);
    let lam = Array2::from_shape_fn((4, 4), |(a, b)| LAMBDA[a][b]);
    let q_lam_sites: Vec<Array3<f64>> = q
        .sites()
        .iter()
        .map(|a| {
            let (l, _, r) = a.dim();
            let mut out = Array3::<f64>::zeros((l, 4, r));
            for x in 0..4 {
                for y in 0..4 {
                    out.index_axis_mut(Axis(1), x).scaled_add(lam[[x, y]], &a.index_axis(Axis(1), y));
                }
            }
            out
        })
        .collect();
    let mut q_lam = Mps::from_sites(q_lam_sites)?;
    q_lam.scale_log2(q.log2_scale());
    let (sign, l2o) = log2_inner_product(&q, &q_lam)?;
    if sign <= 0.0 {
        return Err(MagicError::Numerical(
            "⟨Q|Λ|Q⟩ is not positive; the convolution was truncated too aggressively".into(),
        ));
    }
    Ok(BellResult { b_additive: -l2o, b: 1.0 - 2f64.powf(l2o), truncation_error: err, max_bond: q.max_bond() })
}

/// Settings of the fixed-point iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullityOptions {
    pub policy: TruncationPolicy,
    /// Stop when `|1 − T_k/T_{k−1}| ≤ epsilon`.
    pub epsilon: f64,
    pub max_iter: usize,
    pub method: Compression,
    pub seed: u64,
}

impl Default for NullityOptions {
    fn default() -> Self {
        Self {
            policy: TruncationPolicy { max_rank: usize::MAX, error_threshold: 1e-7 },
            epsilon: 1e-6,
            max_iter: 30,
            method: Compression::DensityMatrix,
            seed: 0,
        }
    }
}

/// One iteration of the nullity algorithm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NullityStep {
    pub k: usize,
    /// `log2 T_k`, the norm of `|P_k⟩` before renormalization.
    pub log2_t: f64,
    pub nu_k: f64,
    pub bond: usize,
    pub truncation_error: f64,
    pub compression: Compression,
}

#[derive(Clone, Debug, Serialize)]
pub struct NullityTrace {
    pub steps: Vec<NullityStep>,
    pub converged: bool,
    /// `‖W_∞|G⟩ − √(2^{ν−N})|G⟩‖` at the last step.
    pub residual: f64,
    /// `‖Ĝ_k − Ĝ_{k−1}‖` between the last two normalized iterates.
    pub step_distance: f64,
    #[serde(skip)]
    pub fixed_point: Option<PauliVector>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NullityResult {
    pub nu: f64,
    pub nu_rounded: usize,
    /// Distance of `nu` from the nearest integer.
    pub rounding_gap: f64,
    pub trace: NullityTrace,
}

impl NullityResult {
    pub fn fixed_point(&self) -> &PauliVector {
        self.trace.fixed_point.as_ref().expect("iteration ran at least once")
    }

    /// `log2 T` at the fixed point, where the normalized fixed point has
    /// amplitude `T` on every code of its support.
    pub fn log2_t(&self) -> f64 {
        self.trace.steps.last().map_or(0.0, |s| s.log2_t)
    }

    pub fn iterations(&self) -> usize {
        self.trace.steps.len()
    }
}

fn pick_method(requested: Compression, hat: &Mps<f64>) -> Compression {
    if requested == Compression::DensityMatrix {
        let b = hat.bond_dims();
        let mut bonds = vec![1];
        bonds.extend(b);
        if density_matrix_env_size(&bonds, &bonds) > MAX_DENSITY_MATRIX_ENV {
            return Compression::Svd;
        }
    }
    requested
}

/// Runs `P_k = diag(P̂_{k−1}) P̂_{k−1}` from a (not necessarily normalized)
/// Pauli-basis vector. With `stop` false it runs exactly `max_iter` steps.
fn iterate(start: &Mps<f64>, n: usize, opts: &NullityOptions, stop: bool) -> Result<NullityResult> {
    let mut hat = start.normalized();
    let mut prev_l2 = 0.0;
    let mut steps = Vec::new();
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut step_distance = f64::INFINITY;
    for k in 1..=opts.max_iter.max(1) {
        let method = pick_method(opts.method, &hat);
        let out = apply_diagonal(&hat, &hat, &opts.policy, method)?;
        let mut next = out.state;
        let l2 = next.normalize_mut();
        let (sign, l2o) = log2_inner_product(&next, &hat)?;
        let dist_sq = (2.0 - 2.0 * sign * 2f64.powf(l2o)).max(0.0);
        step_distance = dist_sq.sqrt();
        residual = 2f64.powf(l2) * step_distance;
        steps.push(NullityStep {
            k,
            log2_t: l2,
            nu_k: n as f64 + 2.0 * l2,
            bond: next.max_bond(),
            truncation_error: out.truncation_error,
            compression: method,
        });
        let ratio_ok = (1.0 - 2f64.powf(l2 - prev_l2)).abs() <= opts.epsilon;
        hat = next;
        prev_l2 = l2;
        if ratio_ok && residual <= 10.0 * opts.epsilon {
            converged = true;
            if stop {
                break;
            }
        }
    }
    let nu = n as f64 + 2.0 * prev_l2;
    let nu_rounded = nu.round().clamp(0.0, n as f64) as usize;
    let fixed_point = PauliVector { mps: hat, source_n: n, truncation_error: 0.0 };
    Ok(NullityResult {
        nu,
        nu_rounded,
        rounding_gap: (nu - nu.round()).abs(),
        trace: NullityTrace { steps, converged, residual, step_distance, fixed_point: Some(fixed_point) },
    })
}

/// Stabilizer nullity via the fixed-point iteration on the Pauli vector.
pub fn nullity(psi: &Mps<C64>, opts: &NullityOptions) -> Result<NullityResult> {
    let p = build_pauli_vector(psi, &opts.policy)?;
    nullity_of_pauli(&p, opts)
}

pub fn nullity_of_pauli(p: &PauliVector, opts: &NullityOptions) -> Result<NullityResult> {
    iterate(&p.mps, p.source_n, opts, true)
}

/// The lower bounds `ν_1, …, ν_{k_max}`.
pub fn nk_lower_bounds(psi: &Mps<C64>, policy: &TruncationPolicy, k_max: usize) -> Result<Vec<f64>> {
    let p = build_pauli_vector(psi, policy)?;
    let opts = NullityOptions { policy: *policy, max_iter: k_max, ..NullityOptions::default() };
    Ok(iterate(&p.mps, p.source_n, &opts, false)?.trace.steps.iter().map(|s| s.nu_k).collect())
}

/// Signed `⟨ψ|P|ψ⟩` for the string with these symbols, read from `p`.
fn signed_generator(p: &PauliVector, symbols: Vec<usize>) -> Result<PauliString> {
    let e = expectation_of_symbols(&p.mps, &symbols);
    if e.abs() < 0.5 {
        return Err(MagicError::Numerical(format!(
            "stabilizer candidate has |⟨P⟩| = {:.3e} < 0.5; the Pauli vector is too damaged by truncation",
            e.abs()
        )));
    }
    PauliString::from_symbols(&symbols, e < 0.0)
}

/// Learns the signed stabilizer group by sampling the fixed point `g`,
/// whose support is the unsigned group.
pub fn extract_stabilizer_group(g: &PauliVector, p: &PauliVector, nu: f64, seed: u64) -> Result<StabilizerGroup> {
    let n = p.source_n;
    let nu_r = nu.round();
    if !(0.0..=n as f64).contains(&nu_r) {
        return Err(MagicError::InvalidArgument(format!("nullity {nu} outside [0, {n}]")));
    }
    let target = n - nu_r as usize;
    if target == 0 {
        return StabilizerGroup::new(n, Vec::new());
    }
    let sampler = g.mps.normalized().sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis = Gf2Basis::new();
    let mut gens: Vec<PauliString> = Vec::new();
    let budget = 64 * (target + 1) + 256;
    let mut checks_left = 16;
    for _ in 0..budget {
        let sample = sampler.draw(&mut rng);
        let s = PauliString::from_symbols(&sample.config, false)?;
        if gens.len() == target {
            if !basis.contains(&s.code()) {
                return Err(MagicError::Inconsistent(format!(
                    "sampled {s} outside the rank-{target} group; the fixed point has not converged"
                )));
            }
            checks_left -= 1;
            if checks_left == 0 {
                break;
            }
            continue;
        }
        if let Some(h) = gens.iter().find(|h| !h.commutes_with(&s)) {
            return Err(MagicError::Inconsistent(format!("sampled strings {h} and {s} anticommute")));
        }
        if basis.insert(&s.code()) {
            gens.push(signed_generator(p, sample.config)?);
        }
    }
    if gens.len() < target {
        return Err(MagicError::Inconsistent(format!(
            "samples span rank {} after {budget} draws, expected {target}",
            gens.len()
        )));
    }
    StabilizerGroup::new(n, gens)
}

/// `|P⟩ − (G/T) ⊙ |P⟩`: removes the support of the fixed point `g`.
fn project_out(current: &Mps<f64>, g: &NullityResult, policy: &TruncationPolicy) -> Result<(Mps<f64>, f64)> {
    let mut indicator = g.fixed_point().mps.clone();
    indicator.scale_log2(-g.log2_t());
    let part = apply_diagonal(&indicator, current, policy, Compression::Svd)?;
    let diff = Mps::linear_combination(&[(1.0, current), (-1.0, &part.state)])?;
    let (out, e) = diff.compress_svd(policy);
    Ok((out, part.truncation_error + e))
}

/// Magic gap `1 − max |⟨P⟩|` over strings with `|⟨P⟩| < 1`.
#[derive(Clone, Debug, Serialize)]
pub struct MagicGap {
    /// 1 by convention for stabilizer states.
    pub value: f64,
    pub stabilizer_state: bool,
    pub nu: f64,
    /// A string attaining the largest non-unit expectation.
    pub representative: Option<PauliString>,
    pub stabilizer_trace: NullityTrace,
    pub gap_trace: Option<NullityTrace>,
}

pub fn magic_gap(psi: &Mps<C64>, opts: &NullityOptions) -> Result<MagicGap> {
    let p = build_pauli_vector(psi, &opts.policy)?;
    magic_gap_of_pauli(&p, opts)
}

pub fn magic_gap_of_pauli(p: &PauliVector, opts: &NullityOptions) -> Result<MagicGap> {
    let first = nullity_of_pauli(p, opts)?;
    let (rest, _) = project_out(&p.mps, &first, &opts.policy)?;
    let weight = 2f64.powf(2.0 * rest.log2_norm());
    if !(weight > opts.epsilon) {
        return Ok(MagicGap {
            value: 1.0,
            stabilizer_state: true,
            nu: first.nu,
            representative: None,
            stabilizer_trace: first.trace,
            gap_trace: None,
        });
    }
    let second = iterate(&rest, p.source_n, opts, true)?;
    let sampler = second.fixed_point().mps.sampler()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let config = sampler.draw(&mut rng).config;
    let e = expectation_of_symbols(&p.mps, &config);
    let rep = PauliString::from_symbols(&config, e < 0.0)?;
    Ok(MagicGap {
        value: 1.0 - e.abs(),
        stabilizer_state: false,
        nu: first.nu,
        representative: Some(rep),
        stabilizer_trace: first.trace,
        gap_trace: Some(second.trace),
    })
}

/// Set of Pauli strings sharing one value of `|⟨P⟩|`.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumStratum {
    /// 1 for the stabilizer group, 2 for the next largest magnitude, ...
    pub level: usize,
    pub magnitude: f64,
    /// `log2` of the number of strings in the stratum.
    pub log2_support: f64,
    /// One signed string per coset of the stabilizer group.
    pub representatives: Vec<PauliString>,
    #[serde(skip)]
    pub fixed_point: PauliVector,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumStrata {
    pub strata: Vec<SpectrumStratum>,
    /// Pauli-vector weight not covered by the strata.
    pub residual_weight: f64,
    pub group: StabilizerGroup,
}

/// Largest number of coset representatives collected per stratum.
pub const MAX_REPRESENTATIVES: usize = 4096;

/// Peels off the Pauli spectrum one magnitude at a time, largest first.
pub fn learn_spectrum_strata(psi: &Mps<C64>, opts: &NullityOptions, max_strata: usize) -> Result<SpectrumStrata> {
    let p = build_pauli_vector(psi, &opts.policy)?;
    let n = p.source_n;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut current = p.mps.clone();
    let mut strata: Vec<SpectrumStratum> = Vec::new();
    let mut group: Option<StabilizerGroup> = None;
    let mut stab_basis = Gf2Basis::new();
    let mut weight = 1.0;
    while weight >= opts.epsilon {
        if strata.len() == max_strata {
            return Err(MagicError::NotConverged { iterations: max_strata });
        }
        let res = iterate(&current, n, opts, true)?;
        let g = res.fixed_point();
        let sampler = g.mps.sampler()?;
        let first = sampler.draw(&mut rng).config;
        let magnitude = expectation_of_symbols(&p.mps, &first).abs();
        if let Some(prev) = strata.last() {
            if magnitude >= prev.magnitude - 1e-9 {
                return Err(MagicError::Inconsistent(format!(
                    "stratum magnitude {magnitude} does not decrease below {}",
                    prev.magnitude
                )));
            }
        }
        let log2_support = -2.0 * res.log2_t();
        let group_ref = match &group {
            Some(gr) => gr,
            None => {
                let gr = extract_stabilizer_group(g, &p, res.nu, opts.seed)?;
                stab_basis = gr.basis();
                group.insert(gr)
            }
        };
        let cosets = 2f64.powf(log2_support - group_ref.generators.len() as f64);
        let wanted = (cosets.round().max(1.0) as usize).min(MAX_REPRESENTATIVES);
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        let mut reps = Vec::new();
        let budget = 20 * wanted + 100;
        let mut config = first;
        for _ in 0..budget {
            let s = PauliString::from_symbols(&config, false)?;
            let r = stab_basis.residual(&s.code());
            if seen.insert(r.clone()) {
                let rs = PauliString::from_code(n, &r, false)?;
                let e = expectation_of_symbols(&p.mps, &rs.symbols());
                reps.push(rs.with_sign(e < 0.0));
                if reps.len() == wanted {
                    break;
                }
            }
            config = sampler.draw(&mut rng).config;
        }
        let (next, _) = project_out(&current, &res, &opts.policy)?;
        current = next;
        weight = 2f64.powf(2.0 * current.log2_norm());
        strata.push(SpectrumStratum {
            level: strata.len() + 1,
            magnitude,
            log2_support,
            representatives: reps,
            fixed_point: res.trace.fixed_point.expect("iteration ran"),
        });
    }
    let group = group.expect("at least one stratum");
    Ok(SpectrumStrata { strata, residual_weight: weight, group })
}

/// Monte Carlo estimate of `M_1` from perfect samples of the Pauli vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampledM1 {
    pub mean: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Samples per parallel chunk; chunk `c` uses stream `c` of the seeded RNG.
pub const SAMPLE_CHUNK: usize = 4096;

pub fn sampled_m1(p: &PauliVector, n_samples: usize, seed: u64) -> Result<SampledM1> {
    if n_samples < 2 {
        return Err(MagicError::InvalidArgument("need at least two samples".into()));
    }
    let sampler = p.mps.sampler()?;
    let n = p.source_n as f64;
    let chunks = n_samples.div_ceil(SAMPLE_CHUNK);
    let values: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = SAMPLE_CHUNK.min(n_samples - c * SAMPLE_CHUNK);
            let sampler = &sampler;
            (0..count).map(move |_| -n - sampler.draw(&mut rng).log2_probability).collect::<Vec<_>>()
        })
        .collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(SampledM1 { mean, standard_error: (var / m).sqrt(), n_samples, seed })
}

/// One measurement as emitted by the command-line tools.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureRecord {
    pub measure: String,
    pub value: serde_json::Value,
    pub n: usize,
    pub truncation_policy: TruncationPolicy,
    pub trace: serde_json::Value,
    pub seed: Option<u64>,
    /// Seconds.
    pub wall_time: f64,
}

impl MeasureRecord {
    pub fn new(measure: &str, value: impl Serialize, n: usize, policy: TruncationPolicy, started: Instant) -> Self {
        Self {
            measure: measure.to_string(),
            value: serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
            n,
            truncation_policy: policy,
            trace: serde_json::Value::Null,
            seed: None,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }

    pub fn with_trace(mut self, trace: impl Serialize) -> Self {
        self.trace = serde_json::to_value(trace).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}
