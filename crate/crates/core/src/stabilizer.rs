//! Pauli strings, GF(2) linear algebra over their binary codes, and
//! stabilizer groups.
//!
//! A site symbol is two bits `(z, x)`: `0 = I`, `1 = X`, `2 = Z`, `3 = Y`.
//! Multiplying Pauli operators XORs their codes up to a phase, and two
//! strings commute iff the symplectic form `Σ x_j z'_j + z_j x'_j` is even.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};

/// Site symbols in code order.
pub const SYMBOLS: [char; 4] = ['I', 'X', 'Z', 'Y'];

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

/// Signed Pauli string on `n` qubits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    negative: bool,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        Self { n, x: vec![0; words(n)], z: vec![0; words(n)], negative: false }
    }

    /// Builds a string from per-site symbols in `0..4`.
    pub fn from_symbols(symbols: &[usize], negative: bool) -> Result<Self> {
        let mut p = Self::identity(symbols.len());
        for (j, &s) in symbols.iter().enumerate() {
            if s > 3 {
                return Err(MagicError::InvalidArgument(format!("Pauli symbol {s} at site {j}")));
            }
            p.set_symbol(j, s);
        }
        p.negative = negative;
        Ok(p)
    }

    /// Single-site operator `symbol` at `site`, identity elsewhere.
    pub fn single(n: usize, site: usize, symbol: usize) -> Self {
        let mut p = Self::identity(n);
        p.set_symbol(site, symbol);
        p
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_negative(&self) -> bool {
        self.negative
    }

    pub fn sign(&self) -> i8 {
        if self.negative {
            -1
        } else {
            1
        }
    }

    pub fn with_sign(mut self, negative: bool) -> Self {
        self.negative = negative;
        self
    }

    pub fn symbol(&self, j: usize) -> usize {
        let (w, b) = (j / 64, j % 64);
        let x = (self.x[w] >> b) & 1;
        let z = (self.z[w] >> b) & 1;
        (2 * z + x) as usize
    }

    pub fn set_symbol(&mut self, j: usize, s: usize) {
        let (w, b) = (j / 64, j % 64);
        self.x[w] = (self.x[w] & !(1 << b)) | (((s as u64) & 1) << b);
        self.z[w] = (self.z[w] & !(1 << b)) | ((((s as u64) >> 1) & 1) << b);
    }

    pub fn symbols(&self) -> Vec<usize> {
        (0..self.n).map(|j| self.symbol(j)).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.x.iter().chain(&self.z).all(|&w| w == 0)
    }

    pub fn weight(&self) -> usize {
        self.x.iter().zip(&self.z).map(|(x, z)| (x | z).count_ones() as usize).sum()
    }

    pub fn commutes_with(&self, other: &Self) -> bool {
        assert_eq!(self.n, other.n);
        let mut parity = 0;
        for w in 0..self.x.len() {
            parity ^= ((self.x[w] & other.z[w]) ^ (self.z[w] & other.x[w])).count_ones() & 1;
        }
        parity == 0
    }

    /// Product `self · other`, returning the phase exponent `k` of `i^k`
    /// and the resulting (Hermitian, unsigned-phase) string with the real
    /// part of the sign folded in when `k` is even.
    pub fn mul(&self, other: &Self) -> (u8, PauliString) {
        assert_eq!(self.n, other.n);
        // i-phase per site from products of single-site Paulis
        let mut k: i64 = 0;
        for j in 0..self.n {
            k += site_phase(self.symbol(j), other.symbol(j));
        }
        if self.negative {
            k += 2;
        }
        if other.negative {
            k += 2;
        }
        let k = k.rem_euclid(4) as u8;
        let mut out = PauliString {
            n: self.n,
            x: self.x.iter().zip(&other.x).map(|(a, b)| a ^ b).collect(),
            z: self.z.iter().zip(&other.z).map(|(a, b)| a ^ b).collect(),
            negative: false,
        };
        if k % 2 == 0 {
            out.negative = k == 2;
            (0, out)
        } else {
            (k, out)
        }
    }

    /// Binary code as `[x bits | z bits]` words.
    pub fn code(&self) -> Vec<u64> {
        let mut v = self.x.clone();
        v.extend(&self.z);
        v
    }

    /// Index of the code in a dense Pauli spectrum, site 0 most significant.
    pub fn dense_index(&self) -> usize {
        self.symbols().iter().fold(0, |acc, &s| acc * 4 + s)
    }

    /// Inverse of [`PauliString::code`].
    pub fn from_code(n: usize, code: &[u64], negative: bool) -> Result<Self> {
        let w = words(n);
        if code.len() != 2 * w {
            return Err(MagicError::ShapeMismatch(format!("code of {} words for {n} qubits", code.len())));
        }
        let mut p = Self { n, x: code[..w].to_vec(), z: code[w..].to_vec(), negative };
        // bits beyond n would make equal strings compare unequal
        if n % 64 != 0 {
            let mask = (1u64 << (n % 64)) - 1;
            p.x[w - 1] &= mask;
            p.z[w - 1] &= mask;
        }
        Ok(p)
    }

    pub fn from_dense_index(n: usize, mut index: usize, negative: bool) -> Self {
        let mut syms = vec![0; n];
        for j in (0..n).rev() {
            syms[j] = index % 4;
            index /= 4;
        }
        Self::from_symbols(&syms, negative).expect("symbols in range")
    }
}

/// Exponent `k` with `σ_a σ_b = i^k σ_{a⊕b}` for site symbols `a`, `b`.
fn site_phase(a: usize, b: usize) -> i64 {
    // symbols: 0 I, 1 X, 2 Z, 3 Y
    match (a, b) {
        (1, 3) => 1,  // XY = iZ
        (3, 1) => -1, // YX = -iZ
        (3, 2) => 1,  // YZ = iX
        (2, 3) => -1, // ZY = -iX
        (2, 1) => 1,  // ZX = iY
        (1, 2) => -1, // XZ = -iY
        _ => 0,
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", if self.negative { '-' } else { '+' })?;
        for j in 0..self.n {
            write!(f, "{}", SYMBOLS[self.symbol(j)])?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = MagicError;

    fn from_str(s: &str) -> Result<Self> {
        let (negative, body) = match s.chars().next() {
            Some('+') => (false, &s[1..]),
            Some('-') => (true, &s[1..]),
            _ => (false, s),
        };
        let syms = body
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'I' => Ok(0),
                'X' => Ok(1),
                'Z' => Ok(2),
                'Y' => Ok(3),
                other => Err(MagicError::Parse(format!("invalid Pauli symbol '{other}' in \"{s}\""))),
            })
            .collect::<Result<Vec<_>>>()?;
        if syms.is_empty() {
            return Err(MagicError::Parse("empty Pauli string".into()));
        }
        Self::from_symbols(&syms, negative)
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Incremental row-echelon basis over GF(2). Each stored row remembers which
/// inserted vectors it combines, so membership queries can return a
/// decomposition.
#[derive(Clone, Debug, Default)]
pub struct Gf2Basis {
    rows: Vec<(usize, Vec<u64>, Vec<u64>)>, // (pivot bit, vector, combination)
    inserted: usize,
}

fn first_bit(v: &[u64]) -> Option<usize> {
    v.iter().enumerate().find(|(_, &w)| w != 0).map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

fn bit(v: &[u64], b: usize) -> bool {
    (v[b / 64] >> (b % 64)) & 1 == 1
}

fn xor_into(a: &mut Vec<u64>, b: &[u64]) {
    if a.len() < b.len() {
        a.resize(b.len(), 0);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x ^= y;
    }
}

impl Gf2Basis {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Reduces `v`, returning the residual and the combination of inserted
    /// vectors that was subtracted.
    fn reduce(&self, v: &[u64]) -> (Vec<u64>, Vec<u64>) {
        let mut r = v.to_vec();
        let mut combo = Vec::new();
        for (p, row, c) in &self.rows {
            if bit(&r, *p) {
                xor_into(&mut r, row);
                xor_into(&mut combo, c);
            }
        }
        (r, combo)
    }

    /// Inserts `v`; returns whether it was independent of the basis.
    pub fn insert(&mut self, v: &[u64]) -> bool {
        let idx = self.inserted;
        self.inserted += 1;
        let (r, mut combo) = self.reduce(v);
        let Some(p) = first_bit(&r) else {
            return false;
        };
        let mut tag = vec![0u64; idx / 64 + 1];
        tag[idx / 64] |= 1 << (idx % 64);
        xor_into(&mut combo, &tag);
        // keep rows fully reduced on pivots so `reduce` is one pass
        for (_, row, c) in self.rows.iter_mut() {
            if bit(row, p) {
                xor_into(row, &r);
                xor_into(c, &combo);
            }
        }
        self.rows.push((p, r, combo));
        self.rows.sort_by_key(|x| x.0);
        true
    }

    /// Canonical representative of `v` modulo the span.
    pub fn residual(&self, v: &[u64]) -> Vec<u64> {
        self.reduce(v).0
    }

    pub fn contains(&self, v: &[u64]) -> bool {
        first_bit(&self.reduce(v).0).is_none()
    }

    /// Indices of inserted vectors whose XOR equals `v`, if any.
    pub fn decompose(&self, v: &[u64]) -> Option<Vec<usize>> {
        let (r, combo) = self.reduce(v);
        if first_bit(&r).is_some() {
            return None;
        }
        Some((0..combo.len() * 64).filter(|&i| bit(&combo, i)).collect())
    }
}

/// Signed stabilizer generators of a state plus its nullity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilizerGroup {
    pub n: usize,
    pub generators: Vec<PauliString>,
    pub nullity: usize,
}

impl StabilizerGroup {
    /// Validates commutation and independence of the generators.
    pub fn new(n: usize, generators: Vec<PauliString>) -> Result<Self> {
        if generators.len() > n {
            return Err(MagicError::Inconsistent(format!("{} generators on {n} qubits", generators.len())));
        }
        let mut basis = Gf2Basis::new();
        for (i, g) in generators.iter().enumerate() {
            if g.len() != n {
                return Err(MagicError::ShapeMismatch(format!("generator {g} on {n} qubits")));
            }
            if !basis.insert(&g.code()) {
                return Err(MagicError::Inconsistent(format!("generator {g} is dependent")));
            }
            if let Some(h) = generators[..i].iter().find(|h| !h.commutes_with(g)) {
                return Err(MagicError::Inconsistent(format!("generators {h} and {g} anticommute")));
            }
        }
        let nullity = n - generators.len();
        Ok(Self { n, generators, nullity })
    }

    pub fn basis(&self) -> Gf2Basis {
        let mut b = Gf2Basis::new();
        for g in &self.generators {
            b.insert(&g.code());
        }
        b
    }

    /// Signed membership: `p` equals a product of generators including sign.
    pub fn contains(&self, p: &PauliString) -> bool {
        let Some(idx) = self.basis().decompose(&p.code()) else {
            return false;
        };
        let mut acc = PauliString::identity(self.n);
        for i in idx {
            let (k, prod) = acc.mul(&self.generators[i]);
            debug_assert_eq!(k, 0, "commuting generators multiply to a Hermitian string");
            acc = prod;
        }
        acc.is_negative() == p.is_negative()
    }

    pub fn contains_unsigned(&self, p: &PauliString) -> bool {
        self.basis().contains(&p.code())
    }

    /// Same group, with signs when `signed`.
    pub fn equivalent(&self, other: &Self, signed: bool) -> bool {
        if self.n != other.n || self.generators.len() != other.generators.len() {
            return false;
        }
        other.generators.iter().all(|g| if signed { self.contains(g) } else { self.contains_unsigned(g) })
    }
}
