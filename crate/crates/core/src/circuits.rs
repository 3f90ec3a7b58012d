//! Quantum gates on MPS and the circuit families used in the experiments.
//!
//! Gate matrices take the first listed target as the most significant
//! index, so `CNOT [c, t]` has control `c`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::mps::Mps;
use crate::tensor::TruncationPolicy;

type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GateKind {
    H,
    S,
    T,
    Cnot,
    Cz,
    Swap,
    Ccz,
    Custom,
}

impl GateKind {
    pub fn arity(self) -> Option<usize> {
        match self {
            GateKind::H | GateKind::S | GateKind::T => Some(1),
            GateKind::Cnot | GateKind::Cz | GateKind::Swap => Some(2),
            GateKind::Ccz => Some(3),
            GateKind::Custom => None,
        }
    }

    pub fn is_clifford(self) -> bool {
        !matches!(self, GateKind::T | GateKind::Ccz | GateKind::Custom)
    }

    fn name(self) -> &'static str {
        match self {
            GateKind::H => "H",
            GateKind::S => "S",
            GateKind::T => "T",
            GateKind::Cnot => "CNOT",
            GateKind::Cz => "CZ",
            GateKind::Swap => "SWAP",
            GateKind::Ccz => "CCZ",
            GateKind::Custom => "CUSTOM",
        }
    }
}

impl FromStr for GateKind {
    type Err = MagicError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "H" => GateKind::H,
            "S" => GateKind::S,
            "T" => GateKind::T,
            "CNOT" | "CX" => GateKind::Cnot,
            "CZ" => GateKind::Cz,
            "SWAP" => GateKind::Swap,
            "CCZ" => GateKind::Ccz,
            "CUSTOM" => GateKind::Custom,
            other => return Err(MagicError::Parse(format!("unknown gate {other:?}"))),
        })
    }
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn diag(v: &[C64]) -> Array2<C64> {
    Array2::from_diag(&ndarray::arr1(v))
}

/// Matrix of a built-in gate.
pub fn gate_matrix(kind: GateKind) -> Option<Array2<C64>> {
    let one = c(1.0, 0.0);
    let z = c(0.0, 0.0);
    Some(match kind {
        GateKind::H => Array2::from_shape_vec((2, 2), vec![one, one, one, -one]).ok()?.mapv(|x| x * FRAC_1_SQRT_2),
        GateKind::S => diag(&[one, c(0.0, 1.0)]),
        GateKind::T => diag(&[one, C64::from_polar(1.0, FRAC_PI_4)]),
        GateKind::Cnot => {
            Array2::from_shape_vec((4, 4), vec![one, z, z, z, z, one, z, z, z, z, z, one, z, z, one, z]).ok()?
        }
        GateKind::Cz => diag(&[one, one, one, -one]),
        GateKind::Swap => {
            Array2::from_shape_vec((4, 4), vec![one, z, z, z, z, z, one, z, z, one, z, z, z, z, z, one]).ok()?
        }
        GateKind::Ccz => {
            let mut d = vec![one; 8];
            d[7] = -one;
            diag(&d)
        }
        GateKind::Custom => return None,
    })
}

/// One gate with its target sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GateRepr", into = "GateRepr")]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    /// Only for `Custom`.
    pub matrix: Option<Array2<C64>>,
}

#[derive(Serialize, Deserialize)]
struct GateRepr {
    gate: GateKind,
    sites: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<[f64; 2]>>>,
}

impl TryFrom<GateRepr> for GateOp {
    type Error = MagicError;

    fn try_from(r: GateRepr) -> Result<Self> {
        match r.matrix {
            None => GateOp::new(r.gate, r.sites),
            Some(rows) => {
                let dim = rows.len();
                let data: Vec<C64> = rows.iter().flatten().map(|[re, im]| c(*re, *im)).collect();
                let m = Array2::from_shape_vec((dim, data.len() / dim.max(1)), data)
                    .map_err(|e| MagicError::Parse(format!("custom gate matrix: {e}")))?;
                GateOp::custom(r.sites, m)
            }
        }
    }
}

impl From<GateOp> for GateRepr {
    fn from(g: GateOp) -> Self {
        let matrix = g.matrix.map(|m| m.rows().into_iter().map(|r| r.iter().map(|x| [x.re, x.im]).collect()).collect());
        GateRepr { gate: g.kind, sites: g.targets, matrix }
    }
}

impl GateOp {
    pub fn new(kind: GateKind, targets: Vec<usize>) -> Result<Self> {
        match kind.arity() {
            None => Err(MagicError::InvalidArgument("custom gates need a matrix".into())),
            Some(a) if a != targets.len() => {
                Err(MagicError::InvalidArgument(format!("{} takes {a} sites, got {targets:?}", kind.name())))
            }
            Some(_) => {
                check_distinct(&targets)?;
                Ok(Self { kind, targets, matrix: None })
            }
        }
    }

    /// Arbitrary unitary on `targets`; rejected unless unitary to 1e-12.
    pub fn custom(targets: Vec<usize>, matrix: Array2<C64>) -> Result<Self> {
        check_distinct(&targets)?;
        let dim = 1usize << targets.len();
        if matrix.dim() != (dim, dim) {
            return Err(MagicError::ShapeMismatch(format!("{:?} matrix on {} sites", matrix.dim(), targets.len())));
        }
        let prod = matrix.t().mapv(|x| x.conj()).dot(&matrix);
        let dev = prod
            .indexed_iter()
            .map(|((i, j), x)| (x - if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) }).norm())
            .fold(0.0, f64::max);
        if dev > 1e-12 {
            return Err(MagicError::InvalidArgument(format!("custom gate is not unitary (deviation {dev:.2e})")));
        }
        Ok(Self { kind: GateKind::Custom, targets, matrix: Some(matrix) })
    }

    pub fn matrix(&self) -> Array2<C64> {
        match &self.matrix {
            Some(m) => m.clone(),
            None => gate_matrix(self.kind).expect("built-in gate"),
        }
    }

    pub fn is_clifford(&self) -> bool {
        self.kind.is_clifford()
    }
}

fn check_distinct(targets: &[usize]) -> Result<()> {
    if targets.is_empty() {
        return Err(MagicError::InvalidArgument("gate without targets".into()));
    }
    for (i, t) in targets.iter().enumerate() {
        if targets[..i].contains(t) {
            return Err(MagicError::InvalidArgument(format!("repeated target {t} in {targets:?}")));
        }
    }
    Ok(())
}

/// Reorders the qubits of `m` so that the targets come in ascending order.
fn sort_targets(targets: &[usize], m: &Array2<C64>) -> (Vec<usize>, Array2<C64>) {
    let k = targets.len();
    let mut perm: Vec<usize> = (0..k).collect();
    perm.sort_by_key(|&i| targets[i]);
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return (targets.to_vec(), m.clone());
    }
    let remap = |idx: usize| -> usize {
        let mut out = 0;
        for (i, &p) in perm.iter().enumerate() {
            let b = (idx >> (k - 1 - i)) & 1;
            out |= b << (k - 1 - p);
        }
        out
    };
    let dim = 1 << k;
    let sorted = perm.iter().map(|&i| targets[i]).collect();
    (sorted, Array2::from_shape_fn((dim, dim), |(r, cc)| m[[remap(r), remap(cc)]]))
}

/// Applies `g`, routing non-adjacent targets with SWAPs when `routing` is
/// set. Returns the discarded weight.
pub fn apply_gate(psi: &mut Mps<C64>, g: &GateOp, policy: &TruncationPolicy, routing: bool) -> Result<f64> {
    if let Some(&t) = g.targets.iter().find(|&&t| t >= psi.len()) {
        return Err(MagicError::InvalidArgument(format!("target {t} outside a {}-site state", psi.len())));
    }
    if psi.physical_dims().iter().any(|&d| d != 2) {
        return Err(MagicError::InvalidArgument("gates act on qubit states".into()));
    }
    let (sorted, m) = sort_targets(&g.targets, &g.matrix());
    let start = sorted[0];
    let contiguous = sorted.iter().enumerate().all(|(i, &s)| s == start + i);
    if contiguous {
        return psi.apply_local(start, &m, policy);
    }
    if !routing {
        return Err(MagicError::InvalidArgument(format!("targets {:?} are not adjacent", g.targets)));
    }
    let swap = gate_matrix(GateKind::Swap).expect("built-in");
    let mut swaps = Vec::new();
    let mut err = 0.0;
    for (i, &s) in sorted.iter().enumerate().skip(1) {
        let mut pos = s;
        while pos > start + i {
            err += psi.apply_local(pos - 1, &swap, policy)?;
            swaps.push(pos - 1);
            pos -= 1;
        }
    }
    err += psi.apply_local(start, &m, policy)?;
    for &p in swaps.iter().rev() {
        err += psi.apply_local(p, &swap, policy)?;
    }
    Ok(err)
}

/// Single-qubit product states used as circuit inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "n_t")]
pub enum InitialState {
    #[default]
    Zero,
    Plus,
    /// `(|0⟩ + i|1⟩)/√2` on every site.
    YPolarized,
    /// `|+⟩^{⊗(N−n_t)} |T⟩^{⊗n_t}`.
    TDoped(usize),
}

impl InitialState {
    pub fn build(self, n: usize) -> Result<Mps<C64>> {
        let h = FRAC_1_SQRT_2;
        let local = match self {
            InitialState::Zero => vec![vec![c(1.0, 0.0), c(0.0, 0.0)]; n],
            InitialState::Plus => vec![vec![c(h, 0.0), c(h, 0.0)]; n],
            InitialState::YPolarized => vec![vec![c(h, 0.0), c(0.0, h)]; n],
            InitialState::TDoped(n_t) => return build_t_doped_state(n, n_t),
        };
        Mps::product_state(&local)
    }
}

impl fmt::Display for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::Zero => write!(f, "zero"),
            InitialState::Plus => write!(f, "plus"),
            InitialState::YPolarized => write!(f, "y"),
            InitialState::TDoped(k) => write!(f, "t-doped:{k}"),
        }
    }
}

impl FromStr for InitialState {
    type Err = MagicError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "zero" | "0" => InitialState::Zero,
            "plus" | "+" => InitialState::Plus,
            "y" | "y-polarized" => InitialState::YPolarized,
            _ => match s.strip_prefix("t-doped:") {
                Some(k) => InitialState::TDoped(
                    k.parse().map_err(|_| MagicError::Parse(format!("bad T count in {s:?}")))?,
                ),
                None => return Err(MagicError::Parse(format!("unknown initial state {s:?}"))),
            },
        })
    }
}

/// `|+⟩^{⊗(n−n_t)} |T⟩^{⊗n_t}` with `|T⟩ = T|+⟩`.
pub fn build_t_doped_state(n: usize, n_t: usize) -> Result<Mps<C64>> {
    if n == 0 || n_t > n {
        return Err(MagicError::InvalidArgument(format!("need 0 <= n_t <= n and n >= 1, got n={n}, n_t={n_t}")));
    }
    let h = FRAC_1_SQRT_2;
    let plus = vec![c(h, 0.0), c(h, 0.0)];
    let t = vec![c(h, 0.0), C64::from_polar(h, FRAC_PI_4)];
    let mut local = vec![plus; n - n_t];
    local.extend(std::iter::repeat_n(t, n_t));
    Mps::product_state(&local)
}

/// How a circuit was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum CircuitFamily {
    RandomClifford { depth: usize },
    TDoped { depth: usize, n_t: usize },
    TDopedBrickwork { steps: usize },
    /// Stand-in built from random two-qubit Clifford layers, or a prefix of
    /// an explicit layout.
    Scrambling { n_ccz: usize, stand_in: bool },
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub n: usize,
    #[serde(default)]
    pub initial: InitialState,
    pub layers: Vec<Vec<GateOp>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub family: CircuitFamily,
}

impl CircuitSpec {
    pub fn explicit(n: usize, initial: InitialState, layers: Vec<Vec<GateOp>>) -> Result<Self> {
        let spec = Self { n, initial, layers, seed: None, family: CircuitFamily::Explicit };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(MagicError::InvalidArgument("circuit on zero qubits".into()));
        }
        if let InitialState::TDoped(k) = self.initial {
            if k > self.n {
                return Err(MagicError::InvalidArgument(format!("{k} T sites on {} qubits", self.n)));
            }
        }
        for g in self.gates() {
            if let Some(t) = g.targets.iter().find(|&&t| t >= self.n) {
                return Err(MagicError::InvalidArgument(format!("gate target {t} outside {} qubits", self.n)));
            }
        }
        Ok(())
    }

    pub fn gates(&self) -> impl Iterator<Item = &GateOp> {
        self.layers.iter().flatten()
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Runs the circuit on its initial state; returns the state and the
    /// total discarded weight.
    pub fn run(&self, policy: &TruncationPolicy) -> Result<(Mps<C64>, f64)> {
        self.validate()?;
        let mut psi = self.initial.build(self.n)?;
        let err = self.apply_to(&mut psi, policy)?;
        Ok((psi, err))
    }

    pub fn apply_to(&self, psi: &mut Mps<C64>, policy: &TruncationPolicy) -> Result<f64> {
        let mut err = 0.0;
        for g in self.gates() {
            err += apply_gate(psi, g, policy, true)?;
        }
        Ok(err)
    }

    /// Text form: `N=<n>`, optional `INIT=<state>`, then one `GATE site...`
    /// per line. Layers are separated by blank lines.
    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("N={}\nINIT={}\n", self.n, self.initial);
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for g in layer {
                if g.kind == GateKind::Custom {
                    return Err(MagicError::InvalidArgument("custom gates need the JSON format".into()));
                }
                let sites: Vec<String> = g.targets.iter().map(|t| t.to_string()).collect();
                out.push_str(&format!("{} {}\n", g.kind.name(), sites.join(" ")));
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n = None;
        let mut initial = InitialState::Zero;
        let mut layers: Vec<Vec<GateOp>> = vec![Vec::new()];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let err = |m: String| MagicError::Parse(format!("line {}: {m}", lineno + 1));
            if line.is_empty() {
                if !layers.last().is_some_and(Vec::is_empty) {
                    layers.push(Vec::new());
                }
                continue;
            }
            if let Some(v) = line.strip_prefix("N=") {
                n = Some(v.trim().parse::<usize>().map_err(|e| err(e.to_string()))?);
                continue;
            }
            if let Some(v) = line.strip_prefix("INIT=") {
                initial = v.parse().map_err(|e: MagicError| err(e.to_string()))?;
                continue;
            }
            let mut parts = line.split_whitespace();
            let kind: GateKind = parts.next().unwrap_or("").parse().map_err(|e: MagicError| err(e.to_string()))?;
            let targets = parts
                .map(|p| p.parse::<usize>().map_err(|e| err(format!("site {p:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let g = GateOp::new(kind, targets).map_err(|e| err(e.to_string()))?;
            layers.last_mut().expect("nonempty").push(g);
        }
        layers.retain(|l| !l.is_empty());
        let n = n.ok_or_else(|| MagicError::Parse("missing N=<n> header".into()))?;
        Self::explicit(n, initial, layers)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads either format, choosing JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_text(text)
        }
    }
}

fn gate(kind: GateKind, targets: Vec<usize>) -> GateOp {
    GateOp::new(kind, targets).expect("generated gates are well formed")
}

/// One layer of the random nearest-neighbour Clifford rule: with probability
/// 1/2 an `S` or `H` on every site, otherwise a `CNOT` or `CZ` (random
/// orientation for `CNOT`) on every bond of a matching with random parity.
fn random_clifford_layer(n: usize, rng: &mut ChaCha8Rng) -> Vec<GateOp> {
    if n < 2 || rng.random_bool(0.5) {
        return (0..n).map(|j| gate(if rng.random_bool(0.5) { GateKind::S } else { GateKind::H }, vec![j])).collect();
    }
    let offset = rng.random_range(0..2);
    (offset..n - 1)
        .step_by(2)
        .map(|j| {
            if rng.random_bool(0.5) {
                gate(GateKind::Cz, vec![j, j + 1])
            } else if rng.random_bool(0.5) {
                gate(GateKind::Cnot, vec![j, j + 1])
            } else {
                gate(GateKind::Cnot, vec![j + 1, j])
            }
        })
        .collect()
}

pub fn random_clifford_circuit(n: usize, depth: usize, seed: u64) -> Result<CircuitSpec> {
    if n < 2 {
        return Err(MagicError::InvalidArgument("random circuits need n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..depth).map(|_| random_clifford_layer(n, &mut rng)).collect();
    Ok(CircuitSpec {
        n,
        initial: InitialState::Zero,
        layers,
        seed: Some(seed),
        family: CircuitFamily::RandomClifford { depth },
    })
}

/// T-doped product state followed by a random Clifford circuit; the
/// nullity of the output is `n_t`.
pub fn t_doped_clifford_circuit(n: usize, n_t: usize, depth: usize, seed: u64) -> Result<CircuitSpec> {
    if n_t > n {
        return Err(MagicError::InvalidArgument(format!("{n_t} T sites on {n} qubits")));
    }
    let mut spec = random_clifford_circuit(n, depth, seed)?;
    spec.initial = InitialState::TDoped(n_t);
    spec.family = CircuitFamily::TDoped { depth, n_t };
    Ok(spec)
}

/// Brickwork of gates drawn from `{I, CNOT^L, CNOT^R}` on a y-polarized
/// chain, with one `T` at a random site after every step.
pub fn t_doped_random_circuit(n: usize, steps: usize, seed: u64) -> Result<CircuitSpec> {
    if n < 2 {
        return Err(MagicError::InvalidArgument("random circuits need n >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut layer = Vec::new();
        for j in (step % 2..n - 1).step_by(2) {
            match rng.random_range(0..3) {
                0 => {}
                1 => layer.push(gate(GateKind::Cnot, vec![j, j + 1])),
                _ => layer.push(gate(GateKind::Cnot, vec![j + 1, j])),
            }
        }
        layer.push(gate(GateKind::T, vec![rng.random_range(0..n)]));
        layers.push(layer);
    }
    Ok(CircuitSpec {
        n,
        initial: InitialState::YPolarized,
        layers,
        seed: Some(seed),
        family: CircuitFamily::TDopedBrickwork { steps },
    })
}

/// Where the scrambling circuit comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ScramblingSource {
    /// Stand-in: random two-qubit Clifford layers between CCZ gates.
    Seed(u64),
    /// Explicit layout; the circuit is cut just before its `(n_ccz+1)`-th CCZ.
    Layout(CircuitSpec),
}

/// Clifford scrambling layers per CCZ in the stand-in.
pub const SCRAMBLING_LAYERS: usize = 2;

pub fn scrambling_circuit(n: usize, n_ccz: usize, source: &ScramblingSource) -> Result<CircuitSpec> {
    match source {
        ScramblingSource::Layout(layout) => {
            if layout.n != n {
                return Err(MagicError::InvalidArgument(format!("layout has {} qubits, asked for {n}", layout.n)));
            }
            let mut seen = 0;
            let mut layers = Vec::new();
            'outer: for layer in &layout.layers {
                let mut kept = Vec::new();
                for g in layer {
                    if g.kind == GateKind::Ccz {
                        if seen == n_ccz {
                            if !kept.is_empty() {
                                layers.push(kept);
                            }
                            break 'outer;
                        }
                        seen += 1;
                    }
                    kept.push(g.clone());
                }
                layers.push(kept);
            }
            if seen < n_ccz {
                return Err(MagicError::InvalidArgument(format!("layout holds only {seen} CCZ gates")));
            }
            Ok(CircuitSpec {
                n,
                initial: layout.initial,
                layers,
                seed: None,
                family: CircuitFamily::Scrambling { n_ccz, stand_in: false },
            })
        }
        ScramblingSource::Seed(seed) => {
            if n < 3 {
                return Err(MagicError::InvalidArgument("CCZ needs at least 3 qubits".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut layers = Vec::new();
            for _ in 0..n_ccz {
                for _ in 0..SCRAMBLING_LAYERS {
                    layers.push(random_two_qubit_clifford_layer(n, layers.len() % 2, &mut rng));
                }
                let j = rng.random_range(0..n - 2);
                layers.push(vec![gate(GateKind::Ccz, vec![j, j + 1, j + 2])]);
            }
            for _ in 0..SCRAMBLING_LAYERS {
                layers.push(random_two_qubit_clifford_layer(n, layers.len() % 2, &mut rng));
            }
            Ok(CircuitSpec {
                n,
                initial: InitialState::Plus,
                layers,
                seed: Some(*seed),
                family: CircuitFamily::Scrambling { n_ccz, stand_in: true },
            })
        }
    }
}

/// Brickwork layer of random two-qubit Cliffords, each a random local
/// `{I, H, S}` dressing on both qubits around a `CZ`.
fn random_two_qubit_clifford_layer(n: usize, parity: usize, rng: &mut ChaCha8Rng) -> Vec<GateOp> {
    let mut out = Vec::new();
    let local = |rng: &mut ChaCha8Rng, j: usize, out: &mut Vec<GateOp>| match rng.random_range(0..3) {
        0 => {}
        1 => out.push(gate(GateKind::H, vec![j])),
        _ => out.push(gate(GateKind::S, vec![j])),
    };
    for j in (parity..n - 1).step_by(2) {
        local(rng, j, &mut out);
        local(rng, j + 1, &mut out);
        out.push(gate(GateKind::Cz, vec![j, j + 1]));
        local(rng, j, &mut out);
        local(rng, j + 1, &mut out);
    }
    out
}
