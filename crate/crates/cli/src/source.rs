use std::path::Path;

use magic_mps::circuits::{
    random_clifford_circuit, scrambling_circuit, t_doped_clifford_circuit, t_doped_random_circuit, CircuitSpec,
    ScramblingSource,
};
use magic_mps::ground_states::{dmrg_ground_state, DmrgConfig, ModelFamily, Parity};
use magic_mps::io::read_mps;
use magic_mps::mps::Mps;
use magic_mps::{MagicError, Result, TruncationPolicy};
use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{ParityArg, PolicyArgs, SourceArgs};

/// One input state plus where it came from.
pub struct Prepared {
    pub psi: Mps<Complex64>,
    pub label: Value,
    pub parameter: Option<f64>,
    pub energy: Option<f64>,
    pub converged: bool,
    pub truncation_error: f64,
}

impl Prepared {
    fn plain(psi: Mps<Complex64>, label: Value, truncation_error: f64) -> Self {
        Self { psi, label, parameter: None, energy: None, converged: true, truncation_error }
    }
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || MagicError::InvalidArgument(format!("grid '{s}' is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let (a, b, h) = (v[0], v[1], v[2]);
    if !(h > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    let m = ((b - a) / h + 1e-9).floor() as usize + 1;
    Ok((0..m).map(|i| ((a + h * i as f64) * 1e12).round() / 1e12).collect())
}

fn parse_t_doped(s: &str) -> Result<(usize, usize)> {
    let (mut n, mut nt) = (None, None);
    for part in s.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| MagicError::InvalidArgument(format!("t-doped spec '{s}': expected N=..,NT=..")))?;
        let v: usize = v.trim().parse().map_err(|_| MagicError::InvalidArgument(format!("t-doped value '{v}'")))?;
        match k.trim() {
            "N" | "n" => n = Some(v),
            "NT" | "nt" | "n_t" => nt = Some(v),
            other => return Err(MagicError::InvalidArgument(format!("t-doped key '{other}'"))),
        }
    }
    match (n, nt) {
        (Some(n), Some(nt)) => Ok((n, nt)),
        _ => Err(MagicError::InvalidArgument(format!("t-doped spec '{s}' needs N and NT"))),
    }
}

fn need(v: Option<usize>, name: &str) -> Result<usize> {
    v.ok_or_else(|| MagicError::InvalidArgument(format!("--{name} is required for this source")))
}

pub fn circuit_spec(src: &SourceArgs, seed: u64) -> Result<CircuitSpec> {
    let name = src.circuit.as_deref().expect("circuit source");
    if Path::new(name).is_file() {
        return CircuitSpec::parse(&std::fs::read_to_string(name)?);
    }
    match name {
        // with --NT the Clifford layers act on the T-doped product state
        "random-clifford" if src.n_t.is_none() => {
            random_clifford_circuit(need(src.n, "N")?, need(src.depth, "depth")?, seed)
        }
        "random-clifford" | "t-doped" => {
            t_doped_clifford_circuit(need(src.n, "N")?, need(src.n_t, "NT")?, need(src.depth, "depth")?, seed)
        }
        "brickwork" => t_doped_random_circuit(need(src.n, "N")?, need(src.steps, "steps")?, seed),
        "scrambling" => {
            let source = match &src.layout {
                Some(p) => ScramblingSource::Layout(CircuitSpec::parse(&std::fs::read_to_string(p)?)?),
                None => ScramblingSource::Seed(seed),
            };
            scrambling_circuit(need(src.n, "N")?, need(src.n_ccz, "n-ccz")?, &source)
        }
        other => Err(MagicError::InvalidArgument(format!(
            "'{other}' is neither a circuit file nor one of random-clifford, t-doped, brickwork, scrambling"
        ))),
    }
}

pub fn state_policy(p: &PolicyArgs) -> TruncationPolicy {
    TruncationPolicy { max_rank: p.chi.unwrap_or(usize::MAX), error_threshold: p.trunc.unwrap_or(0.0) }
}

pub fn dmrg_config(p: &PolicyArgs, src: &SourceArgs, seed: u64) -> DmrgConfig {
    let mut cfg = DmrgConfig { seed, ..DmrgConfig::default() };
    if let Some(chi) = p.chi {
        cfg.max_chi = chi;
    }
    cfg.parity = src.parity.map(|x| match x {
        ParityArg::Even => Parity::Even,
        ParityArg::Odd => Parity::Odd,
    });
    cfg
}

/// Builds the input states. Exactly one source flag must be set.
pub fn prepare(src: &SourceArgs, policy: &PolicyArgs, seed: u64, dmrg: &DmrgConfig) -> Result<Vec<Prepared>> {
    let count = [src.circuit.is_some(), src.t_doped.is_some(), src.model.is_some(), src.mps.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if count != 1 {
        return Err(MagicError::InvalidArgument(format!(
            "exactly one of --circuit, --t-doped, --model, --mps is required (got {count})"
        )));
    }
    if let Some(path) = &src.mps {
        let (psi, _) = read_mps::<Complex64>(path)?;
        let mut psi = psi;
        psi.normalize_mut();
        return Ok(vec![Prepared::plain(psi, json!({"mps": path}), 0.0)]);
    }
    if let Some(spec) = &src.t_doped {
        let (n, nt) = parse_t_doped(spec)?;
        let psi = magic_mps::circuits::build_t_doped_state(n, nt)?;
        return Ok(vec![Prepared::plain(psi, json!({"t_doped": {"N": n, "NT": nt}}), 0.0)]);
    }
    if src.circuit.is_some() {
        let spec = circuit_spec(src, seed)?;
        let (psi, err) = spec.run(&state_policy(policy))?;
        let label = json!({"circuit": src.circuit, "N": spec.n, "gates": spec.gate_count(), "seed": seed});
        return Ok(vec![Prepared::plain(psi, label, err)]);
    }
    let family: ModelFamily = src.model.as_deref().expect("model source").parse()?;
    let n = need(src.n, "N")?;
    let grid = match (&src.grid, src.param) {
        (Some(g), None) => parse_grid(g)?,
        (None, Some(x)) => vec![x],
        _ => return Err(MagicError::InvalidArgument("a model needs exactly one of --h-grid or --param".into())),
    };
    grid.par_iter()
        .map(|&x| {
            let model = family.at(n, x)?;
            let gs = dmrg_ground_state(&model, dmrg)?;
            Ok(Prepared {
                psi: gs.state.to_complex(),
                label: json!({"model": family, "N": n, "parameter": x, "chi": dmrg.max_chi}),
                parameter: Some(x),
                energy: Some(gs.energy),
                converged: gs.converged,
                truncation_error: gs.truncation_error,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0.5:1.5:0.25").unwrap(), vec![0.5, 0.75, 1.0, 1.25, 1.5]);
        assert_eq!(parse_grid("0.5:1.5:0.01").unwrap().len(), 101);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1").is_err());
        assert_eq!(parse_t_doped("N=8,NT=4").unwrap(), (8, 4));
        assert!(parse_t_doped("N=8").is_err());
    }
}
