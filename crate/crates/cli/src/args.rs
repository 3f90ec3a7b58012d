use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "magic-mps", version, about = "Nonstabilizerness of matrix product states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Stabilizer Rényi entropy by the replica Pauli-MPS method.
    Sre(SreArgs),
    /// Additive Bell magic.
    Bell(BaseArgs),
    /// Stabilizer nullity by fixed-point iteration.
    Nullity(NullityArgs),
    /// Magic gap.
    Gap(NullityArgs),
    /// Strata of the Pauli spectrum with their coset representatives.
    Strata(StrataArgs),
    /// Monte Carlo estimate of M_1 from perfect Pauli sampling.
    SampleM1(SampleArgs),
    /// DMRG ground state energies.
    Dmrg(DmrgArgs),
    /// Run a circuit and report the resulting MPS.
    CircuitRun(SaveArgs),
    /// Compare every measure against brute-force enumeration (N <= 10).
    OracleCheck(OracleArgs),
}

impl Command {
    pub fn base(&self) -> &BaseArgs {
        match self {
            Command::Sre(a) => &a.base,
            Command::Bell(a) => a,
            Command::Nullity(a) | Command::Gap(a) => &a.base,
            Command::Strata(a) => &a.nullity.base,
            Command::SampleM1(a) => &a.base,
            Command::Dmrg(a) => &a.save.base,
            Command::CircuitRun(a) => &a.base,
            Command::OracleCheck(a) => &a.base,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SourceArgs {
    /// Circuit file (text or JSON), or a family: random-clifford, t-doped, brickwork, scrambling.
    #[arg(long)]
    pub circuit: Option<String>,
    /// T-doped product state, e.g. "N=8,NT=4".
    #[arg(long = "t-doped")]
    pub t_doped: Option<String>,
    /// Spin-chain ground states: ising or xxz.
    #[arg(long)]
    pub model: Option<String>,
    /// Serialized MPS container.
    #[arg(long)]
    pub mps: Option<PathBuf>,

    /// Number of qubits for generated circuits and models.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Number of T gates; random Clifford circuits then start from the T-doped state.
    #[arg(long = "NT")]
    pub n_t: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Time steps of the brickwork family.
    #[arg(long)]
    pub steps: Option<usize>,
    /// CCZ count of the scrambling family.
    #[arg(long = "n-ccz")]
    pub n_ccz: Option<usize>,
    /// Explicit scrambling layout, cut before its (n-ccz + 1)-th CCZ.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Parameter grid "start:stop:step" (h for Ising, delta for XXZ).
    #[arg(long = "h-grid", alias = "grid")]
    pub grid: Option<String>,
    /// Single model parameter.
    #[arg(long)]
    pub param: Option<f64>,
    /// Project DMRG states onto a spin-flip sector.
    #[arg(long, value_enum)]
    pub parity: Option<ParityArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParityArg {
    Even,
    Odd,
}

#[derive(ValueEnum, Debug, Clone, Copy, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    #[default]
    Svd,
    DensityMatrix,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PolicyArgs {
    /// Bond cap of the state (circuits and DMRG; DMRG default 40).
    #[arg(long)]
    pub chi: Option<usize>,
    /// Bond cap of the Pauli vector.
    #[arg(long = "chi-p")]
    pub chi_p: Option<usize>,
    /// Bond cap of replica and iterate vectors.
    #[arg(long = "chi-n")]
    pub chi_n: Option<usize>,
    /// Discarded-weight threshold per truncation.
    #[arg(long)]
    pub trunc: Option<f64>,
    /// Compression backend for products.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Abort when a single compression discards more than this weight.
    #[arg(long)]
    pub abort: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OutputArgs {
    /// Write records here instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// CSV table instead of JSON lines (parameter sweeps).
    #[arg(long)]
    pub csv: bool,
    /// Worker threads; defaults to MAGIC_MPS_JOBS or all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key=value or JSON file with defaults for any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BaseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: BaseArgs,
    /// Rényi index.
    #[arg(long = "n", default_value_t = 2)]
    pub renyi: usize,
    /// Add finite-difference columns up to this order (0, 1 or 2).
    #[arg(long, default_value_t = 0)]
    pub derivatives: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct NullityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: BaseArgs,
    /// Convergence tolerance of the norm ratio.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long = "max-iter", default_value_t = 30)]
    pub max_iter: usize,
    /// Also learn the signed stabilizer group.
    #[arg(long)]
    pub group: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct StrataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub nullity: NullityArgs,
    #[arg(long = "max-strata", default_value_t = 8)]
    pub max_strata: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: BaseArgs,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SaveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: BaseArgs,
    /// Write the state to this MPS container (single state only).
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DmrgArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub save: SaveArgs,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long = "energy-tol")]
    pub energy_tol: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub base: BaseArgs,
    /// Largest allowed deviation from the oracle.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}
