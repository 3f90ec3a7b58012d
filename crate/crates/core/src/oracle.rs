//! Brute-force reference values for small systems: dense statevectors,
//! complete Pauli spectra, and the magic measures computed from them.
//!
//! Basis index convention: site 0 is the most significant bit.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{MagicError, Result};
use crate::mps::Mps;
use crate::stabilizer::{Gf2Basis, PauliString, StabilizerGroup};
use crate::tensor::eigh_hermitian;

pub const MAX_DENSE_QUBITS: usize = 14;
pub const MAX_SPECTRUM_QUBITS: usize = 10;

/// Normalized dense statevector on at most 14 qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    n: usize,
    amps: Vec<Complex64>,
}

impl DenseState {
    pub fn new(n: usize, amps: Vec<Complex64>) -> Result<Self> {
        if n == 0 || n > MAX_DENSE_QUBITS {
            return Err(MagicError::InvalidArgument(format!(
                "dense states support 1..={MAX_DENSE_QUBITS} qubits, got {n}"
            )));
        }
        if amps.len() != 1 << n {
            return Err(MagicError::ShapeMismatch(format!("{} amplitudes for {n} qubits", amps.len())));
        }
        let norm_sq: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > 1e-12 {
            return Err(MagicError::NotNormalized { norm_sq });
        }
        Ok(Self { n, amps })
    }

    /// Rescales arbitrary amplitudes to unit norm.
    pub fn normalized(n: usize, mut amps: Vec<Complex64>) -> Result<Self> {
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(MagicError::NotNormalized { norm_sq: 0.0 });
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::new(n, amps)
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[index] = Complex64::new(1.0, 0.0);
        Self::new(n, amps)
    }

    /// Tensor product of single-qubit states.
    pub fn product(local: &[[Complex64; 2]]) -> Result<Self> {
        let mut amps = vec![Complex64::new(1.0, 0.0)];
        for v in local {
            amps = amps.iter().flat_map(|a| [a * v[0], a * v[1]]).collect();
        }
        Self::normalized(local.len(), amps)
    }

    pub fn from_mps(psi: &Mps<Complex64>) -> Result<Self> {
        if psi.physical_dims().iter().any(|&d| d != 2) {
            return Err(MagicError::InvalidArgument("dense oracle needs qubit states".into()));
        }
        if psi.len() > MAX_DENSE_QUBITS {
            return Err(MagicError::InvalidArgument(format!("{} qubits exceed the dense limit", psi.len())));
        }
        Self::normalized(psi.len(), psi.to_dense().to_vec())
    }

    pub fn from_real_mps(psi: &Mps<f64>) -> Result<Self> {
        let amps = psi.to_dense().iter().map(|&x| Complex64::new(x, 0.0)).collect();
        if psi.len() > MAX_DENSE_QUBITS {
            return Err(MagicError::InvalidArgument(format!("{} qubits exceed the dense limit", psi.len())));
        }
        Self::normalized(psi.len(), amps)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let amps = self.amps.iter().flat_map(|a| other.amps.iter().map(move |b| a * b)).collect();
        Self::new(self.n + other.n, amps)
    }

    /// Applies a unitary on `sites`; row/column index of `m` takes the first
    /// listed site as most significant.
    pub fn apply(&mut self, sites: &[usize], m: &Array2<Complex64>) -> Result<()> {
        let k = sites.len();
        if m.dim() != (1 << k, 1 << k) {
            return Err(MagicError::ShapeMismatch(format!("{:?} matrix on {k} sites", m.dim())));
        }
        if sites.iter().any(|&s| s >= self.n) {
            return Err(MagicError::InvalidArgument(format!("sites {sites:?} out of range")));
        }
        let shifts: Vec<usize> = sites.iter().map(|&s| self.n - 1 - s).collect();
        let mask: usize = shifts.iter().map(|&s| 1 << s).sum();
        let mut out = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        for base in 0..self.amps.len() {
            if base & mask != 0 {
                continue;
            }
            let idx = |local: usize| -> usize {
                let mut i = base;
                for (t, &s) in shifts.iter().enumerate() {
                    if (local >> (k - 1 - t)) & 1 == 1 {
                        i |= 1 << s;
                    }
                }
                i
            };
            for r in 0..1 << k {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..1 << k {
                    acc += m[[r, c]] * self.amps[idx(c)];
                }
                out[idx(r)] = acc;
            }
        }
        self.amps = out;
        Ok(())
    }

    /// `⟨ψ|P|ψ⟩` for one string, O(2^N).
    pub fn expectation(&self, p: &PauliString) -> f64 {
        let (xm, zm) = masks(self.n, p);
        let ny = (xm & zm).count_ones();
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, a) in self.amps.iter().enumerate() {
            let s = if (zm & b).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            acc += self.amps[b ^ xm].conj() * a * s;
        }
        let v = (acc * Complex64::i().powu(ny)).re;
        if p.is_negative() {
            -v
        } else {
            v
        }
    }
}

/// Basis-index masks of the X and Z parts of `p`.
fn masks(n: usize, p: &PauliString) -> (usize, usize) {
    let (mut xm, mut zm) = (0usize, 0usize);
    for j in 0..n {
        let s = p.symbol(j);
        let bit = 1 << (n - 1 - j);
        if s & 1 == 1 {
            xm |= bit;
        }
        if s & 2 == 2 {
            zm |= bit;
        }
    }
    (xm, zm)
}

/// In-place Walsh–Hadamard transform (unnormalized).
fn walsh_hadamard(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn walsh_hadamard_complex(v: &mut [Complex64]) {
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Signed Pauli expectations and the characteristic function
/// `Ξ(α) = ⟨P_α⟩² / 2^N`, indexed by [`PauliString::dense_index`].
#[derive(Clone, Debug, PartialEq)]
pub struct PauliSpectrum {
    pub n: usize,
    pub expectations: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Code index from per-qubit X and Z basis masks.
fn code_index(n: usize, xm: usize, zm: usize) -> usize {
    let mut idx = 0;
    for j in 0..n {
        let bit = n - 1 - j;
        let s = ((xm >> bit) & 1) | (((zm >> bit) & 1) << 1);
        idx = idx * 4 + s;
    }
    idx
}

/// All `4^N` Pauli expectations, one Walsh–Hadamard transform per X mask.
pub fn exact_pauli_spectrum(s: &DenseState) -> Result<PauliSpectrum> {
    let n = s.n;
    if n > MAX_SPECTRUM_QUBITS {
        return Err(MagicError::InvalidArgument(format!(
            "full spectra support at most {MAX_SPECTRUM_QUBITS} qubits"
        )));
    }
    let dim = 1usize << n;
    let mut expectations = vec![0.0; dim * dim];
    let mut f = vec![Complex64::new(0.0, 0.0); dim];
    for xm in 0..dim {
        for (b, slot) in f.iter_mut().enumerate() {
            *slot = s.amps[b ^ xm].conj() * s.amps[b];
        }
        walsh_hadamard_complex(&mut f);
        for (zm, v) in f.iter().enumerate() {
            let ny = (xm & zm).count_ones();
            expectations[code_index(n, xm, zm)] = (v * Complex64::i().powu(ny)).re;
        }
    }
    let scale = 1.0 / dim as f64;
    let xi = expectations.iter().map(|e| e * e * scale).collect();
    Ok(PauliSpectrum { n, expectations, xi })
}

impl PauliSpectrum {
    /// Total weight `ΣΞ`, equal to 1 for pure states.
    pub fn purity(&self) -> f64 {
        self.xi.iter().sum()
    }

    /// CSV with columns `pauli,expectation,xi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pauli,expectation,xi\n");
        for (i, (e, x)) in self.expectations.iter().zip(&self.xi).enumerate() {
            let p = PauliString::from_dense_index(self.n, i, false);
            out.push_str(&format!("{},{e:.17e},{x:.17e}\n", &p.to_string()[1..]));
        }
        out
    }
}

/// Stabilizer Rényi entropy in bits; `n = 1` uses the Shannon limit.
pub fn exact_sre(spec: &PauliSpectrum, n: f64) -> Result<f64> {
    if n <= 0.0 {
        return Err(MagicError::InvalidArgument(format!("Rényi index {n} must be positive")));
    }
    let big_n = spec.n as f64;
    if n == 1.0 {
        let h: f64 = spec.xi.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.log2()).sum();
        return Ok(h - big_n);
    }
    // Σ Ξ^n = 2^{-nN} Σ ⟨P⟩^{2n}
    let s: f64 = spec.expectations.iter().map(|e| (e * e).powf(n)).sum();
    Ok((s.log2() - n * big_n) / (1.0 - n) - big_n)
}

/// XOR self-convolution `η(a) = Σ_α Ξ(α) Ξ(α ⊕ a)`.
pub fn xor_self_convolution(spec: &PauliSpectrum) -> Vec<f64> {
    // dense_index is a bit interleaving of the codes, so index XOR is code XOR
    let mut v = spec.xi.clone();
    walsh_hadamard(&mut v);
    v.iter_mut().for_each(|x| *x *= *x);
    walsh_hadamard(&mut v);
    let inv = 1.0 / v.len() as f64;
    v.iter_mut().for_each(|x| *x *= inv);
    v
}

/// Bell magic `B` and additive Bell magic `B_a = -log2(1 - B)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BellMagic {
    pub b: f64,
    pub b_additive: f64,
}

/// Σ_{a,b} η(a) η(b) (−1)^{ω(a,b)} through a symplectic Fourier transform.
fn symplectic_pairing(n: usize, eta: &[f64]) -> f64 {
    let mut hat = eta.to_vec();
    walsh_hadamard(&mut hat);
    // hat[c] = Σ_b η(b)(−1)^{c·b}; with c = swap(a) this is the symplectic form
    eta.iter()
        .enumerate()
        .map(|(a, &e)| {
            let mut c = 0;
            for j in 0..n {
                let s = (a >> (2 * (n - 1 - j))) & 3;
                let sw = ((s & 1) << 1) | (s >> 1);
                c = c * 4 + sw;
            }
            e * hat[c]
        })
        .sum()
}

pub fn exact_bell_magic(spec: &PauliSpectrum) -> Result<BellMagic> {
    let eta = xor_self_convolution(spec);
    let total: f64 = eta.iter().sum();
    let b = total * total - symplectic_pairing(spec.n, &eta);
    if b >= 1.0 {
        return Err(MagicError::Numerical(format!("Bell magic {b} ≥ 1; spectrum is not a pure state's")));
    }
    Ok(BellMagic { b, b_additive: -(1.0 - b).log2() })
}

/// Literal `Σ Ξ(α)Ξ(α′)Ξ(β)Ξ(β′) ‖[P_{α⊕α′}, P_{β⊕β′}]‖_∞`, for N ≤ 3.
pub fn literal_bell_magic(spec: &PauliSpectrum) -> Result<f64> {
    if spec.n > 3 {
        return Err(MagicError::InvalidArgument("literal quadruple sum limited to 3 qubits".into()));
    }
    let m = spec.xi.len();
    let codes: Vec<PauliString> = (0..m).map(|i| PauliString::from_dense_index(spec.n, i, false)).collect();
    let mut anti = vec![vec![false; m]; m];
    for a in 0..m {
        for b in 0..m {
            anti[a][b] = !codes[a].commutes_with(&codes[b]);
        }
    }
    let mut total = 0.0;
    for a in 0..m {
        for a2 in 0..m {
            let wa = spec.xi[a] * spec.xi[a2];
            if wa == 0.0 {
                continue;
            }
            let row = &anti[a ^ a2];
            for b in 0..m {
                for b2 in 0..m {
                    if row[b ^ b2] {
                        total += wa * spec.xi[b] * spec.xi[b2] * 2.0;
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Nullity and signed generators from Pauli strings with `|⟨P⟩| ≥ 1 − tol`.
pub fn exact_nullity(spec: &PauliSpectrum, tol: f64) -> Result<(usize, StabilizerGroup)> {
    let members: Vec<PauliString> = spec
        .expectations
        .iter()
        .enumerate()
        .filter(|(_, e)| e.abs() >= 1.0 - tol)
        .map(|(i, e)| PauliString::from_dense_index(spec.n, i, *e < 0.0))
        .collect();
    let mut basis = Gf2Basis::new();
    let mut gens = Vec::new();
    for p in &members {
        if basis.insert(&p.code()) {
            gens.push(p.clone());
        }
    }
    if members.len() != 1usize << gens.len() {
        return Err(MagicError::Inconsistent(format!(
            "{} strings with unit expectation do not form a group of rank {}",
            members.len(),
            gens.len()
        )));
    }
    let group = StabilizerGroup::new(spec.n, gens)?;
    Ok((group.nullity, group))
}

/// `1 − max |⟨P⟩|` over strings with `tol < |⟨P⟩| < 1 − tol`; `None` for
/// stabilizer states, which have no such strings.
pub fn exact_magic_gap(spec: &PauliSpectrum, tol: f64) -> Option<f64> {
    spec.expectations
        .iter()
        .map(|e| e.abs())
        .filter(|&a| a > tol && a < 1.0 - tol)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
        .map(|m| 1.0 - m)
}

/// Distinct nonzero `|⟨P⟩|` levels in decreasing order, merged within `tol`.
pub fn expectation_strata(spec: &PauliSpectrum, tol: f64) -> Vec<f64> {
    let mut mags: Vec<f64> = spec.expectations.iter().map(|e| e.abs()).filter(|&a| a > tol).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut out: Vec<f64> = Vec::new();
    for m in mags {
        if out.last().is_none_or(|&l| l - m > tol) {
            out.push(m);
        }
    }
    out
}

/// Ground energy of `−J Σ σˣσˣ − h Σ σᶻ` on an open chain via Jordan–Wigner:
/// minus the sum of singular values of the bidiagonal coupling matrix.
pub fn ising_free_fermion_energy(n: usize, h: f64, j: f64) -> Result<f64> {
    if n == 0 {
        return Err(MagicError::InvalidArgument("chain needs at least one site".into()));
    }
    let mut t = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        t[[i, i]] = h;
        if i + 1 < n {
            t[[i + 1, i]] = -j;
        }
    }
    let svd = crate::tensor::svd_matrix(&t, &crate::tensor::TruncationPolicy::exact())?;
    Ok(-svd.singular_values.iter().sum::<f64>())
}

fn pauli_matrix(s: usize) -> Array2<f64> {
    match s {
        0 => Array2::from_shape_vec((2, 2), vec![1., 0., 0., 1.]),
        1 => Array2::from_shape_vec((2, 2), vec![0., 1., 1., 0.]),
        2 => Array2::from_shape_vec((2, 2), vec![1., 0., 0., -1.]),
        _ => unreachable!("only real Paulis are used here"),
    }
    .expect("2x2")
}

fn kron(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| a[[i / br, j / bc]] * b[[i % br, j % bc]])
}

/// Dense operator `Π_k op_k` with `ops` as (site, real Pauli symbol).
fn dense_pauli_product(n: usize, ops: &[(usize, usize)]) -> Array2<f64> {
    let mut m = Array2::<f64>::ones((1, 1));
    for site in 0..n {
        let s = ops.iter().find(|(j, _)| *j == site).map_or(0, |x| x.1);
        m = kron(&m, &pauli_matrix(s));
    }
    m
}

/// Dense transverse-field Ising Hamiltonian `−Σ σˣσˣ − h Σ σᶻ` (open chain).
pub fn dense_ising_hamiltonian(n: usize, h: f64) -> Array2<f64> {
    let dim = 1 << n;
    let mut hm = Array2::<f64>::zeros((dim, dim));
    for i in 0..n - 1 {
        hm -= &dense_pauli_product(n, &[(i, 1), (i + 1, 1)]);
    }
    for i in 0..n {
        hm -= &(dense_pauli_product(n, &[(i, 2)]) * h);
    }
    hm
}

/// Dense XXZ Hamiltonian `−Σ (σˣσˣ + σʸσʸ + Δ σᶻσᶻ)` (open chain).
pub fn dense_xxz_hamiltonian(n: usize, delta: f64) -> Array2<f64> {
    let dim = 1 << n;
    let mut hm = Array2::<f64>::zeros((dim, dim));
    for i in 0..n - 1 {
        hm -= &dense_pauli_product(n, &[(i, 1), (i + 1, 1)]);
        // σʸσʸ = −(σˣσᶻ)(σˣσᶻ) up to ordering: use XX·ZZ = −YY
        let yy = -dense_pauli_product(n, &[(i, 1), (i + 1, 1)]).dot(&dense_pauli_product(n, &[(i, 2), (i + 1, 2)]));
        hm -= &yy;
        hm -= &(dense_pauli_product(n, &[(i, 2), (i + 1, 2)]) * delta);
    }
    hm
}

/// Lowest eigenpair of a dense real symmetric matrix.
pub fn dense_ground_state(h: &Array2<f64>) -> Result<(f64, Array1<f64>)> {
    let (vals, vecs) = eigh_hermitian(h)?;
    let k = vals.len() - 1;
    Ok((vals[k], vecs.column(k).to_owned()))
}
