//! Ground states of open spin chains by two-site DMRG, plus SRE-density
//! sweeps over a model parameter.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::mps::{Mpo, Mps};
use crate::pauli::{build_pauli_vector, replica_sre_from, SreOptions};
use crate::tensor::{eigh_hermitian, svd_matrix, TruncationPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelKind {
    /// `−Σ σˣσˣ − h Σ σᶻ`
    Ising { h: f64 },
    /// `−Σ (σˣσˣ + σʸσʸ + Δ σᶻσᶻ)`
    Xxz { delta: f64 },
}

/// Open chain of `n` spins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinChainModel {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub n: usize,
}

impl SpinChainModel {
    pub fn new(kind: ModelKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(MagicError::InvalidArgument(format!("spin chain needs n >= 2, got {n}")));
        }
        let p = match kind {
            ModelKind::Ising { h } => h,
            ModelKind::Xxz { delta } => delta,
        };
        if !p.is_finite() {
            return Err(MagicError::InvalidArgument("model parameter must be finite".into()));
        }
        Ok(Self { kind, n })
    }

    pub fn ising(n: usize, h: f64) -> Result<Self> {
        Self::new(ModelKind::Ising { h }, n)
    }

    pub fn xxz(n: usize, delta: f64) -> Result<Self> {
        Self::new(ModelKind::Xxz { delta }, n)
    }

    pub fn family(&self) -> ModelFamily {
        match self.kind {
            ModelKind::Ising { .. } => ModelFamily::Ising,
            ModelKind::Xxz { .. } => ModelFamily::Xxz,
        }
    }

    pub fn parameter(&self) -> f64 {
        match self.kind {
            ModelKind::Ising { h } => h,
            ModelKind::Xxz { delta } => delta,
        }
    }
}

/// Model without its parameter, for sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Ising,
    Xxz,
}

impl ModelFamily {
    pub fn at(self, n: usize, parameter: f64) -> Result<SpinChainModel> {
        match self {
            ModelFamily::Ising => SpinChainModel::ising(n, parameter),
            ModelFamily::Xxz => SpinChainModel::xxz(n, parameter),
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Ising => "ising",
            ModelFamily::Xxz => "xxz",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = MagicError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ising" | "tfim" => Ok(ModelFamily::Ising),
            "xxz" => Ok(ModelFamily::Xxz),
            other => Err(MagicError::InvalidArgument(format!("unknown model family '{other}'"))),
        }
    }
}

fn op(v: [f64; 4]) -> Array2<f64> {
    Array2::from_shape_vec((2, 2), v.to_vec()).expect("2x2")
}

/// MPO from a lower-triangular operator-valued matrix: entries `(row, col, op)`,
/// paths run from the last row on the left to column 0 on the right.
fn triangular_mpo(n: usize, dim: usize, entries: &[(usize, usize, Array2<f64>)]) -> Result<Mpo<f64>> {
    let mut bulk = Array4::<f64>::zeros((dim, 2, 2, dim));
    for (a, b, m) in entries {
        for o in 0..2 {
            for i in 0..2 {
                bulk[[*a, o, i, *b]] += m[[o, i]];
            }
        }
    }
    let sites = (0..n)
        .map(|j| {
            let rows = if j == 0 { dim - 1..dim } else { 0..dim };
            let cols = if j == n - 1 { 0..1 } else { 0..dim };
            bulk.slice(ndarray::s![rows, .., .., cols]).to_owned()
        })
        .collect();
    Mpo::from_sites(sites)
}

/// Hamiltonian as an MPO: bond dimension 3 for Ising, 5 for XXZ.
pub fn hamiltonian_mpo(model: &SpinChainModel) -> Result<Mpo<f64>> {
    let id = op([1., 0., 0., 1.]);
    let x = op([0., 1., 1., 0.]);
    let z = op([1., 0., 0., -1.]);
    match model.kind {
        ModelKind::Ising { h } => triangular_mpo(
            model.n,
            3,
            &[(0, 0, id.clone()), (1, 0, x.clone()), (2, 0, &z * -h), (2, 1, -x), (2, 2, id)],
        ),
        ModelKind::Xxz { delta } => {
            // σˣσˣ + σʸσʸ = 2(σ⁺σ⁻ + σ⁻σ⁺) keeps the MPO real
            let sp = op([0., 1., 0., 0.]);
            let sm = op([0., 0., 1., 0.]);
            triangular_mpo(
                model.n,
                5,
                &[
                    (0, 0, id.clone()),
                    (1, 0, sp.clone()),
                    (2, 0, sm.clone()),
                    (3, 0, z.clone()),
                    (4, 1, &sm * -2.0),
                    (4, 2, &sp * -2.0),
                    (4, 3, &z * -delta),
                    (4, 4, id),
                ],
            )
        }
    }
}

/// Sector of the global spin flip `Π σᶻ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmrgConfig {
    pub max_chi: usize,
    /// Maximum number of full (left and right) sweeps.
    pub sweeps: usize,
    pub energy_tol: f64,
    pub truncation_threshold: f64,
    pub lanczos_iters: usize,
    pub seed: u64,
    /// Project the result onto a `Π σᶻ` sector. Both models conserve it.
    pub parity: Option<Parity>,
}

impl Default for DmrgConfig {
    fn default() -> Self {
        Self {
            max_chi: 40,
            sweeps: 30,
            energy_tol: 1e-11,
            truncation_threshold: 1e-14,
            lanczos_iters: 40,
            seed: 0,
            parity: None,
        }
    }
}

impl DmrgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_chi == 0 || self.sweeps == 0 || self.lanczos_iters == 0 {
            return Err(MagicError::InvalidArgument("DMRG needs chi, sweeps and Lanczos iterations >= 1".into()));
        }
        if !(self.energy_tol >= 0.0) || !(self.truncation_threshold >= 0.0) {
            return Err(MagicError::InvalidArgument("DMRG tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DmrgResult {
    /// Normalized ground state.
    pub state: Mps<f64>,
    pub energy: f64,
    /// Variational energy after each half-sweep.
    pub sweep_energies: Vec<f64>,
    pub converged: bool,
    /// Largest discarded weight of a single truncation in the final sweep.
    pub truncation_error: f64,
    pub max_bond: usize,
}

fn dyn_of<D: ndarray::Dimension>(a: ndarray::Array<f64, D>) -> ArrayD<f64> {
    a.into_dyn()
}

/// Permutes `x`, then flattens the first `split` axes into rows and the rest
/// into columns.
fn matricize(x: &ArrayD<f64>, perm: &[usize], split: usize) -> (Array2<f64>, Vec<usize>) {
    let p = x.view().permuted_axes(IxDyn(perm));
    let shape = p.shape().to_vec();
    let rows: usize = shape[..split].iter().product();
    let cols: usize = shape[split..].iter().product();
    let m = p.as_standard_layout().into_owned().into_shape_with_order((rows, cols)).expect("contiguous");
    (m, shape)
}

fn unflatten(m: Array2<f64>, shape: &[usize]) -> ArrayD<f64> {
    m.into_shape_with_order(IxDyn(shape)).expect("matching size")
}

/// `new[a, w', b] = Σ env[a0, w, b0] bra[a0, s, a] W[w, s, t, w'] ket[b0, t, b]`.
fn update_left(env: &ArrayD<f64>, a: &Array3<f64>, w: &ArrayD<f64>) -> ArrayD<f64> {
    let (al, d, ar) = a.dim();
    let (wl, wr) = (w.shape()[0], w.shape()[3]);
    let (e, _) = matricize(env, &[0, 1, 2], 2);
    let ket = a.view().into_shape_with_order((al, d * ar)).expect("contiguous");
    let x = unflatten(e.dot(&ket), &[al, wl, d, ar]);
    let (xm, _) = matricize(&x, &[0, 3, 1, 2], 2);
    let (wm, _) = matricize(w, &[0, 2, 1, 3], 2);
    let x = unflatten(xm.dot(&wm), &[al, ar, d, wr]);
    let (xm, _) = matricize(&x, &[1, 3, 0, 2], 2);
    let bra = a.view().into_shape_with_order((al * d, ar)).expect("contiguous");
    let x = unflatten(xm.dot(&bra), &[ar, wr, ar]);
    x.permuted_axes(IxDyn(&[2, 1, 0])).as_standard_layout().into_owned()
}

/// `new[a, w, b] = Σ bra[a, s, a1] W[w, s, t, w1] ket[b, t, b1] env[a1, w1, b1]`.
fn update_right(env: &ArrayD<f64>, a: &Array3<f64>, w: &ArrayD<f64>) -> ArrayD<f64> {
    let (al, d, ar) = a.dim();
    let (wl, wr) = (w.shape()[0], w.shape()[3]);
    let ket = a.view().into_shape_with_order((al * d, ar)).expect("contiguous");
    let (e, _) = matricize(env, &[2, 0, 1], 1);
    let x = unflatten(ket.dot(&e), &[al, d, ar, wr]);
    let (xm, _) = matricize(&x, &[0, 2, 1, 3], 2);
    let (wm, _) = matricize(w, &[2, 3, 0, 1], 2);
    let x = unflatten(xm.dot(&wm), &[al, ar, wl, d]);
    let (xm, _) = matricize(&x, &[0, 2, 3, 1], 2);
    let a_dyn = dyn_of(a.clone());
    let (bra, _) = matricize(&a_dyn, &[1, 2, 0], 2);
    let x = unflatten(xm.dot(&bra), &[al, wl, al]);
    x.permuted_axes(IxDyn(&[2, 1, 0])).as_standard_layout().into_owned()
}

/// Two-site effective Hamiltonian acting on `theta[a, s1, s2, b]`.
struct TwoSite<'a> {
    left: &'a ArrayD<f64>,
    w1: (Array2<f64>, usize),
    w2: (Array2<f64>, usize),
    right: Array2<f64>,
    shape: [usize; 4],
}

impl<'a> TwoSite<'a> {
    fn new(left: &'a ArrayD<f64>, w1: &ArrayD<f64>, w2: &ArrayD<f64>, right: &ArrayD<f64>, shape: [usize; 4]) -> Self {
        let (m1, _) = matricize(w1, &[0, 2, 1, 3], 2);
        let (m2, _) = matricize(w2, &[0, 2, 1, 3], 2);
        let (r, _) = matricize(right, &[1, 2, 0], 2);
        Self { left, w1: (m1, w1.shape()[3]), w2: (m2, w2.shape()[3]), right: r, shape }
    }

    fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        let [a, d1, d2, b] = self.shape;
        let wl = self.left.shape()[1];
        let (w1r, w2r) = (self.w1.1, self.w2.1);
        let (l, _) = matricize(self.left, &[0, 1, 2], 2);
        let th = v.view().into_shape_with_order((a, d1 * d2 * b)).expect("contiguous");
        let x = unflatten(l.dot(&th), &[a, wl, d1, d2, b]);
        let (xm, _) = matricize(&x, &[0, 3, 4, 1, 2], 3);
        let x = unflatten(xm.dot(&self.w1.0), &[a, d2, b, d1, w1r]);
        let (xm, _) = matricize(&x, &[0, 2, 3, 4, 1], 3);
        let x = unflatten(xm.dot(&self.w2.0), &[a, b, d1, d2, w2r]);
        let (xm, _) = matricize(&x, &[0, 2, 3, 4, 1], 3);
        let out = xm.dot(&self.right);
        out.into_shape_with_order(a * d1 * d2 * b).expect("contiguous")
    }
}

/// Lowest eigenpair by Lanczos with full reorthogonalization, started at `v0`.
fn lanczos(op: impl Fn(&Array1<f64>) -> Array1<f64>, v0: &Array1<f64>, max_iter: usize) -> Result<(f64, Array1<f64>)> {
    let dim = v0.len();
    let max_iter = max_iter.min(dim).max(1);
    let nrm = v0.dot(v0).sqrt();
    let mut basis = vec![if nrm > 0.0 { v0 / nrm } else { Array1::from_elem(dim, 1.0 / (dim as f64).sqrt()) }];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let k = basis.len() - 1;
        let mut w = op(&basis[k]);
        alpha.push(basis[k].dot(&w));
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w.scaled_add(-c, q);
            }
        }
        let b = w.dot(&w).sqrt();
        let m = alpha.len();
        let t = Array2::from_shape_fn((m, m), |(i, j)| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (vals, vecs) = eigh_hermitian(&t)?;
        let y = vecs.column(m - 1);
        let residual = b * y[m - 1].abs();
        if residual < 1e-10 || b < 1e-13 || m >= max_iter {
            let mut ritz = Array1::<f64>::zeros(dim);
            for (c, q) in y.iter().zip(&basis) {
                ritz.scaled_add(*c, q);
            }
            let n = ritz.dot(&ritz).sqrt();
            return Ok((vals[m - 1], ritz / n));
        }
        beta.push(b);
        basis.push(w / b);
    }
}

fn full_energy(sites: &[Array3<f64>], w: &[ArrayD<f64>]) -> f64 {
    let mut env = ArrayD::<f64>::ones(IxDyn(&[1, 1, 1]));
    for (a, wj) in sites.iter().zip(w) {
        env = update_left(&env, a, wj);
    }
    env[[0, 0, 0]]
}

fn project_parity(psi: &Mps<f64>, parity: Parity) -> Result<Mps<f64>> {
    let flipped: Vec<Array3<f64>> = psi
        .sites()
        .iter()
        .map(|a| {
            let mut b = a.clone();
            b.index_axis_mut(ndarray::Axis(1), 1).mapv_inplace(|x| -x);
            b
        })
        .collect();
    let mut flipped = Mps::from_sites(flipped)?;
    flipped.scale_log2(psi.log2_scale());
    let sign = match parity {
        Parity::Even => 0.5,
        Parity::Odd => -0.5,
    };
    let sum = Mps::linear_combination(&[(0.5, psi), (sign, &flipped)])?;
    let (mut out, _) = sum.compress_svd(&TruncationPolicy::with_threshold(1e-15));
    let weight = out.norm_squared() / psi.norm_squared();
    if weight < 1e-6 {
        return Err(MagicError::Inconsistent(format!(
            "DMRG state has weight {weight:.2e} in the requested parity sector"
        )));
    }
    out.normalize_mut();
    Ok(out)
}

/// Two-site DMRG with a Lanczos local solver. Energies are recorded after
/// every half-sweep; `converged` is false if two consecutive half-sweeps never
/// agreed to `energy_tol`.
pub fn dmrg_ground_state(model: &SpinChainModel, config: &DmrgConfig) -> Result<DmrgResult> {
    config.validate()?;
    let n = model.n;
    let mpo = hamiltonian_mpo(model)?;
    let w: Vec<ArrayD<f64>> = mpo.sites().iter().map(|s| dyn_of(s.clone())).collect();
    let policy = TruncationPolicy::new(config.max_chi, config.truncation_threshold)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = Mps::<f64>::random(n, 2, config.max_chi.min(8), &mut rng);
    let mut sites: Vec<Array3<f64>> = start.sites().to_vec();
    let one = ArrayD::<f64>::ones(IxDyn(&[1, 1, 1]));
    let mut lenv: Vec<ArrayD<f64>> = vec![one.clone(); n + 1];
    let mut renv: Vec<ArrayD<f64>> = vec![one; n + 1];
    for j in (1..n).rev() {
        renv[j] = update_right(&renv[j + 1], &sites[j], &w[j]);
    }

    let mut energies: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut sweep_err = 0.0_f64;
    for _ in 0..config.sweeps {
        sweep_err = 0.0;
        for dir in [true, false] {
            let order: Vec<usize> = if dir { (0..n - 1).collect() } else { (0..n - 1).rev().collect() };
            for j in order {
                let (al, d1, _) = sites[j].dim();
                let (_, d2, ar) = sites[j + 1].dim();
                let a = sites[j].view().into_shape_with_order((al * d1, sites[j].dim().2)).expect("contiguous");
                let b = sites[j + 1].view().into_shape_with_order((sites[j + 1].dim().0, d2 * ar)).expect("contiguous");
                let theta = a.dot(&b).into_shape_with_order(al * d1 * d2 * ar).expect("contiguous");
                let heff = TwoSite::new(&lenv[j], &w[j], &w[j + 1], &renv[j + 2], [al, d1, d2, ar]);
                let (_, v) = lanczos(|x| heff.apply(x), &theta, config.lanczos_iters)?;
                let m = v.into_shape_with_order((al * d1, d2 * ar)).expect("contiguous");
                let svd = svd_matrix(&m, &policy)?;
                sweep_err = sweep_err.max(svd.truncation_error);
                let mut s = svd.singular_values.clone();
                let sn = s.dot(&s).sqrt();
                s /= sn;
                let k = s.len();
                if dir {
                    sites[j] = svd.u.into_shape_with_order((al, d1, k)).expect("contiguous");
                    let sv = Array2::from_shape_fn((k, d2 * ar), |(r, c)| s[r] * svd.vdag[[r, c]]);
                    sites[j + 1] = sv.into_shape_with_order((k, d2, ar)).expect("contiguous");
                    lenv[j + 1] = update_left(&lenv[j], &sites[j], &w[j]);
                } else {
                    sites[j + 1] = svd.vdag.into_shape_with_order((k, d2, ar)).expect("contiguous");
                    let us = Array2::from_shape_fn((al * d1, k), |(r, c)| svd.u[[r, c]] * s[c]);
                    sites[j] = us.into_shape_with_order((al, d1, k)).expect("contiguous");
                    renv[j + 1] = update_right(&renv[j + 2], &sites[j + 1], &w[j + 1]);
                }
            }
            let e = full_energy(&sites, &w);
            if let Some(&prev) = energies.last() {
                if (prev - e).abs() <= config.energy_tol {
                    converged = true;
                }
            }
            energies.push(e);
        }
        if converged {
            break;
        }
    }

    let mut state = Mps::from_sites(sites)?;
    state.normalize_mut();
    let mut energy = *energies.last().expect("at least one half-sweep");
    if let Some(parity) = config.parity {
        state = project_parity(&state, parity)?;
        energy = mpo.expectation(&state)?;
    }
    let max_bond = state.max_bond();
    Ok(DmrgResult { state, energy, sweep_energies: energies, converged, truncation_error: sweep_err, max_bond })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub family: ModelFamily,
    pub n: usize,
    /// Sorted parameter values (h for Ising, Δ for XXZ).
    pub grid: Vec<f64>,
    /// Rényi index of the SRE.
    pub renyi: usize,
    pub dmrg: DmrgConfig,
    /// Truncation of the Pauli vector.
    pub pauli: TruncationPolicy,
    /// Options for the replica products.
    pub sre: SreOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: f64,
    /// SRE density `M_n / N`.
    pub m_n: f64,
    /// DMRG plus Pauli-vector discarded weight.
    pub truncation_error: f64,
    pub chi_used: usize,
    pub energy: f64,
    pub pauli_bond: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub family: ModelFamily,
    pub n: usize,
    pub renyi: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,m_n,truncation_error,chi_used,energy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{},{}\n",
                r.parameter, r.m_n, r.truncation_error, r.chi_used, r.energy
            ));
        }
        out
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.parameter).collect()
    }

    pub fn densities(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.m_n).collect()
    }
}

/// SRE density of a single ground state.
pub fn ground_state_sre(
    model: &SpinChainModel,
    renyi: usize,
    dmrg: &DmrgConfig,
    pauli: &TruncationPolicy,
    sre: &SreOptions,
) -> Result<SweepRow> {
    let gs = dmrg_ground_state(model, dmrg)?;
    let psi = gs.state.to_complex();
    let p = build_pauli_vector(&psi, pauli)?;
    let r = replica_sre_from(&p, renyi, sre)?;
    let replica_err: f64 = r.truncation_errors.iter().sum();
    Ok(SweepRow {
        parameter: model.parameter(),
        m_n: r.value / model.n as f64,
        truncation_error: gs.truncation_error + p.truncation_error + replica_err,
        chi_used: gs.max_bond,
        energy: gs.energy,
        pauli_bond: p.mps.max_bond(),
        converged: gs.converged,
    })
}

/// SRE density across a parameter grid; grid points run in parallel.
pub fn sre_sweep(config: &SweepConfig) -> Result<SweepTable> {
    if config.grid.is_empty() {
        return Err(MagicError::InvalidArgument("empty parameter grid".into()));
    }
    if config.grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MagicError::InvalidArgument("parameter grid must be strictly increasing".into()));
    }
    if config.renyi < 2 {
        return Err(MagicError::InvalidArgument(format!("replica SRE needs n >= 2, got {}", config.renyi)));
    }
    config.dmrg.validate()?;
    let models = config.grid.iter().map(|&x| config.family.at(config.n, x)).collect::<Result<Vec<_>>>()?;
    let rows = models
        .par_iter()
        .map(|m| ground_state_sre(m, config.renyi, &config.dmrg, &config.pauli, &config.sre))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { family: config.family, n: config.n, renyi: config.renyi, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeTable {
    pub order: usize,
    pub spacing: f64,
    pub parameters: Vec<f64>,
    pub values: Vec<f64>,
}

impl DerivativeTable {
    /// Parameter and value where `|value|` is largest.
    pub fn peak(&self) -> (f64, f64) {
        let i = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].abs().total_cmp(&self.values[b].abs()))
            .expect("nonempty table");
        (self.parameters[i], self.values[i])
    }
}

/// First or second derivative on a uniform grid: central differences inside,
/// second-order one-sided stencils at the ends.
pub fn finite_difference(xs: &[f64], ys: &[f64], order: usize) -> Result<DerivativeTable> {
    if xs.len() != ys.len() {
        return Err(MagicError::ShapeMismatch(format!("{} parameters but {} values", xs.len(), ys.len())));
    }
    if !(1..=2).contains(&order) {
        return Err(MagicError::InvalidArgument(format!("derivative order must be 1 or 2, got {order}")));
    }
    let m = xs.len();
    if m < 3 {
        return Err(MagicError::InvalidArgument("finite differences need at least 3 points".into()));
    }
    let h = (xs[m - 1] - xs[0]) / (m - 1) as f64;
    if !(h > 0.0) || xs.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0)) {
        return Err(MagicError::InvalidArgument("finite differences need a uniform increasing grid".into()));
    }
    let mut d = vec![0.0; m];
    if order == 1 {
        for i in 1..m - 1 {
            d[i] = (ys[i + 1] - ys[i - 1]) / (2.0 * h);
        }
        d[0] = (-3.0 * ys[0] + 4.0 * ys[1] - ys[2]) / (2.0 * h);
        d[m - 1] = (3.0 * ys[m - 1] - 4.0 * ys[m - 2] + ys[m - 3]) / (2.0 * h);
    } else {
        let h2 = h * h;
        for i in 1..m - 1 {
            d[i] = (ys[i + 1] - 2.0 * ys[i] + ys[i - 1]) / h2;
        }
        if m >= 4 {
            d[0] = (2.0 * ys[0] - 5.0 * ys[1] + 4.0 * ys[2] - ys[3]) / h2;
            d[m - 1] = (2.0 * ys[m - 1] - 5.0 * ys[m - 2] + 4.0 * ys[m - 3] - ys[m - 4]) / h2;
        } else {
            d[0] = d[1];
            d[m - 1] = d[1];
        }
    }
    Ok(DerivativeTable { order, spacing: h, parameters: xs.to_vec(), values: d })
}
