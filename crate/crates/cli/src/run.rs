use std::time::Instant;

use magic_mps::ground_states::{finite_difference, DmrgConfig};
use magic_mps::io::write_mps;
use magic_mps::mps::Compression;
use magic_mps::oracle::{exact_bell_magic, exact_magic_gap, exact_nullity, exact_pauli_spectrum, exact_sre, DenseState};
use magic_mps::pauli::{
    bell_magic_from, build_pauli_vector, extract_stabilizer_group, learn_spectrum_strata, magic_gap_of_pauli,
    nullity_of_pauli, replica_sre_from, sampled_m1, MeasureRecord, NullityOptions, SreOptions,
};
use magic_mps::{MagicError, Result, TruncationPolicy};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{BaseArgs, Command, MethodArg, PolicyArgs};
use crate::source::{dmrg_config, prepare, state_policy, Prepared};

/// Result of one command: records in input order, optional CSV table, and
/// a deferred failure (records are still emitted before exiting nonzero).
pub struct Outcome {
    pub records: Vec<Value>,
    pub csv: Option<String>,
    pub failure: Option<MagicError>,
}

struct Measured {
    record: MeasureRecord,
    /// Column value for CSV tables.
    primary: f64,
    truncation_error: f64,
    failure: Option<MagicError>,
}

fn method(p: &PolicyArgs) -> Compression {
    match p.method.unwrap_or_default() {
        MethodArg::Svd => Compression::Svd,
        MethodArg::DensityMatrix => Compression::DensityMatrix,
    }
}

fn pauli_policy(p: &PolicyArgs, default_trunc: f64) -> TruncationPolicy {
    TruncationPolicy { max_rank: p.chi_p.unwrap_or(usize::MAX), error_threshold: p.trunc.unwrap_or(default_trunc) }
}

fn sre_options(p: &PolicyArgs) -> SreOptions {
    SreOptions {
        policy: TruncationPolicy { max_rank: p.chi_n.unwrap_or(usize::MAX), error_threshold: p.trunc.unwrap_or(1e-9) },
        method: method(p),
        abort_threshold: p.abort,
    }
}

fn nullity_options(p: &PolicyArgs, epsilon: f64, max_iter: usize, seed: u64) -> NullityOptions {
    let d = NullityOptions::default();
    NullityOptions {
        policy: TruncationPolicy {
            max_rank: p.chi_n.unwrap_or(d.policy.max_rank),
            error_threshold: p.trunc.unwrap_or(d.policy.error_threshold),
        },
        epsilon,
        max_iter,
        method: p.method.map_or(d.method, |_| method(p)),
        seed,
    }
}

fn validate(cmd: &Command) -> Result<()> {
    let b = cmd.base();
    if let Some(t) = b.policy.trunc {
        if !(0.0..1.0).contains(&t) {
            return Err(MagicError::InvalidArgument(format!("--trunc {t} must lie in [0, 1)")));
        }
    }
    if [b.policy.chi, b.policy.chi_p, b.policy.chi_n].contains(&Some(0)) {
        return Err(MagicError::InvalidArgument("bond caps must be >= 1".into()));
    }
    match cmd {
        Command::Sre(a) if a.renyi < 2 => {
            Err(MagicError::InvalidArgument("the replica method needs --n >= 2; use sample-m1 for n = 1".into()))
        }
        Command::Sre(a) if a.derivatives > 2 => Err(MagicError::InvalidArgument("--derivatives must be 0, 1 or 2".into())),
        Command::SampleM1(a) if a.samples < 2 => Err(MagicError::InvalidArgument("--samples must be >= 2".into())),
        _ => Ok(()),
    }
}

fn measure(cmd: &Command, st: &Prepared, seed: u64) -> Result<Measured> {
    let started = Instant::now();
    let b = cmd.base();
    let n = st.psi.len();
    let simple = |record: MeasureRecord, primary: f64, err: f64| Measured {
        record,
        primary,
        truncation_error: err,
        failure: None,
    };
    match cmd {
        Command::Sre(a) => {
            let pp = pauli_policy(&b.policy, 1e-9);
            let p = build_pauli_vector(&st.psi, &pp)?;
            let r = replica_sre_from(&p, a.renyi, &sre_options(&b.policy))?;
            let err = p.truncation_error + r.truncation_errors.iter().sum::<f64>();
            let value = json!({"order": a.renyi, "M_n": r.value, "m_n": r.value / n as f64});
            let rec = MeasureRecord::new("sre", value, n, pp, started)
                .with_trace(json!({"pauli_bond": p.mps.max_bond(), "pauli_truncation_error": p.truncation_error, "replica": r}));
            Ok(simple(rec, r.value / n as f64, err))
        }
        Command::Bell(_) => {
            let pp = pauli_policy(&b.policy, 1e-9);
            let p = build_pauli_vector(&st.psi, &pp)?;
            let r = bell_magic_from(&p, &sre_options(&b.policy))?;
            let err = p.truncation_error + r.truncation_error;
            let rec = MeasureRecord::new("bell", json!({"b_additive": r.b_additive, "b": r.b}), n, pp, started)
                .with_trace(&r);
            Ok(simple(rec, r.b_additive, err))
        }
        Command::Nullity(a) => {
            let opts = nullity_options(&b.policy, a.epsilon, a.max_iter, seed);
            let p = build_pauli_vector(&st.psi, &pauli_policy(&b.policy, opts.policy.error_threshold))?;
            let r = nullity_of_pauli(&p, &opts)?;
            let group = if a.group && r.trace.converged {
                Some(extract_stabilizer_group(r.fixed_point(), &p, r.nu, seed)?)
            } else {
                None
            };
            let generators: Option<Vec<String>> = group.map(|g| g.generators.iter().map(|x| x.to_string()).collect());
            let value = json!({
                "nu": r.nu,
                "nu_rounded": r.nu_rounded,
                "iterations": r.iterations(),
                "converged": r.trace.converged,
                "generators": generators,
            });
            let err: f64 = p.truncation_error + r.trace.steps.iter().map(|s| s.truncation_error).sum::<f64>();
            let failure = (!r.trace.converged).then_some(MagicError::NotConverged { iterations: r.iterations() });
            let rec = MeasureRecord::new("nullity", value, n, opts.policy, started).with_trace(&r.trace).with_seed(seed);
            Ok(Measured { record: rec, primary: r.nu, truncation_error: err, failure })
        }
        Command::Gap(a) => {
            let opts = nullity_options(&b.policy, a.epsilon, a.max_iter, seed);
            let p = build_pauli_vector(&st.psi, &pauli_policy(&b.policy, opts.policy.error_threshold))?;
            let g = magic_gap_of_pauli(&p, &opts)?;
            let value = json!({
                "magic_gap": g.value,
                "stabilizer_state": g.stabilizer_state,
                "nu": g.nu,
                "representative": g.representative.as_ref().map(|x| x.to_string()),
            });
            let rec = MeasureRecord::new("gap", value, n, opts.policy, started)
                .with_trace(json!({"stabilizer": g.stabilizer_trace, "gap": g.gap_trace}))
                .with_seed(seed);
            Ok(simple(rec, g.value, p.truncation_error))
        }
        Command::Strata(a) => {
            let opts = nullity_options(&b.policy, a.nullity.epsilon, a.nullity.max_iter, seed);
            let s = learn_spectrum_strata(&st.psi, &opts, a.max_strata)?;
            let strata: Vec<Value> = s
                .strata
                .iter()
                .map(|x| {
                    json!({
                        "level": x.level,
                        "magnitude": x.magnitude,
                        "log2_support": x.log2_support,
                        "representatives": x.representatives.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
                    })
                })
                .collect();
            let gens: Vec<String> = s.group.generators.iter().map(|x| x.to_string()).collect();
            let value = json!({"strata": strata, "residual_weight": s.residual_weight, "generators": gens});
            let rec = MeasureRecord::new("strata", value, n, opts.policy, started).with_seed(seed);
            Ok(simple(rec, s.strata.len() as f64, s.residual_weight))
        }
        Command::SampleM1(a) => {
            let pp = pauli_policy(&b.policy, 1e-9);
            let p = build_pauli_vector(&st.psi, &pp)?;
            let s = sampled_m1(&p, a.samples, seed)?;
            let rec = MeasureRecord::new("sample-m1", &s, n, pp, started)
                .with_trace(json!({"pauli_bond": p.mps.max_bond(), "pauli_truncation_error": p.truncation_error}))
                .with_seed(seed);
            Ok(simple(rec, s.mean / n as f64, p.truncation_error))
        }
        Command::Dmrg(a) => {
            let value = json!({"energy": st.energy, "converged": st.converged, "max_bond": st.psi.max_bond()});
            let failure = (!st.converged).then_some(MagicError::NotConverged { iterations: a.sweeps.unwrap_or(0) });
            let rec = MeasureRecord::new("dmrg", value, n, state_policy(&b.policy), started).with_seed(seed);
            Ok(Measured { record: rec, primary: st.energy.unwrap_or(f64::NAN), truncation_error: st.truncation_error, failure })
        }
        Command::CircuitRun(_) => {
            let value = json!({"max_bond": st.psi.max_bond(), "bond_dims": st.psi.bond_dims()});
            let rec = MeasureRecord::new("circuit-run", value, n, state_policy(&b.policy), started).with_seed(seed);
            Ok(simple(rec, st.psi.max_bond() as f64, st.truncation_error))
        }
        Command::OracleCheck(a) => oracle_check(&st.psi, a.tol, seed, started),
    }
}

fn oracle_check(psi: &magic_mps::mps::Mps<num_complex::Complex64>, tol: f64, seed: u64, started: Instant) -> Result<Measured> {
    let n = psi.len();
    if n > 10 {
        return Err(MagicError::InvalidArgument(format!("oracle-check enumerates 4^N strings; N = {n} > 10")));
    }
    let spec = exact_pauli_spectrum(&DenseState::from_mps(psi)?)?;
    let exact = TruncationPolicy::exact();
    let p = build_pauli_vector(psi, &exact)?;
    let sre = SreOptions { policy: exact, ..SreOptions::default() };
    let mut checks = Vec::new();
    for order in 2..=4 {
        let mps = replica_sre_from(&p, order, &sre)?.value;
        checks.push((format!("M{order}"), mps, exact_sre(&spec, order as f64)?));
    }
    if n <= 6 {
        checks.push(("B_a".into(), bell_magic_from(&p, &sre)?.b_additive, exact_bell_magic(&spec)?.b_additive));
    }
    let opts = NullityOptions { policy: TruncationPolicy::with_threshold(1e-12), seed, ..NullityOptions::default() };
    let (nu, _) = exact_nullity(&spec, 1e-9)?;
    checks.push(("nu".into(), nullity_of_pauli(&p, &opts)?.nu, nu as f64));
    let gap = magic_gap_of_pauli(&p, &opts)?;
    checks.push(("magic_gap".into(), gap.value, exact_magic_gap(&spec, 1e-9).unwrap_or(1.0)));
    let worst = checks.iter().map(|c| (c.1 - c.2).abs()).fold(0.0, f64::max);
    let rows: Vec<Value> = checks
        .iter()
        .map(|(name, m, o)| json!({"measure": name, "mps": m, "oracle": o, "deviation": (m - o).abs()}))
        .collect();
    let pass = worst <= tol;
    let rec = MeasureRecord::new("oracle-check", json!({"pass": pass, "max_deviation": worst, "checks": rows}), n, exact, started)
        .with_seed(seed);
    let failure = (!pass).then(|| MagicError::Numerical(format!("oracle deviation {worst:.3e} exceeds {tol:.1e}")));
    Ok(Measured { record: rec, primary: worst, truncation_error: 0.0, failure })
}

fn csv_table(cmd: &Command, states: &[Prepared], measured: &[Measured]) -> Result<String> {
    let column = match cmd {
        Command::Sre(_) => "m_n",
        Command::SampleM1(_) => "m_1",
        Command::Bell(_) => "b_additive",
        Command::Nullity(_) => "nu",
        Command::Gap(_) => "magic_gap",
        Command::Strata(_) => "strata",
        Command::Dmrg(_) => "energy_value",
        Command::CircuitRun(_) => "max_bond",
        Command::OracleCheck(_) => "max_deviation",
    };
    let order = match cmd {
        Command::Sre(a) => a.derivatives,
        _ => 0,
    };
    let xs: Vec<f64> = states.iter().map(|s| s.parameter.unwrap_or(f64::NAN)).collect();
    let ys: Vec<f64> = measured.iter().map(|m| m.primary).collect();
    let derivs = (1..=order).map(|k| finite_difference(&xs, &ys, k).map(|d| d.values)).collect::<Result<Vec<_>>>()?;
    let mut out = format!("parameter,{column},truncation_error,chi_used,energy");
    for k in 1..=order {
        out.push_str(&format!(",d{k}"));
    }
    out.push('\n');
    for (i, (s, m)) in states.iter().zip(measured).enumerate() {
        let param = s.parameter.map_or(String::new(), |x| x.to_string());
        let energy = s.energy.map_or(String::new(), |x| x.to_string());
        out.push_str(&format!(
            "{param},{},{:e},{},{energy}",
            m.primary,
            s.truncation_error + m.truncation_error,
            s.psi.max_bond()
        ));
        for d in &derivs {
            out.push_str(&format!(",{}", d[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    validate(cmd)?;
    let b: &BaseArgs = cmd.base();
    let seed = b.output.seed;
    let mut dmrg: DmrgConfig = dmrg_config(&b.policy, &b.source, seed);
    if let Command::Dmrg(a) = cmd {
        if let Some(s) = a.sweeps {
            dmrg.sweeps = s;
        }
        if let Some(t) = a.energy_tol {
            dmrg.energy_tol = t;
        }
    }
    let states = prepare(&b.source, &b.policy, seed, &dmrg)?;
    let save = match cmd {
        Command::Dmrg(a) => a.save.save.as_ref(),
        Command::CircuitRun(a) => a.save.as_ref(),
        _ => None,
    };
    if let Some(path) = save {
        if states.len() != 1 {
            return Err(MagicError::InvalidArgument("--save needs a single state".into()));
        }
        write_mps(path, &states[0].psi, states[0].label.clone())?;
    }
    let measured = states.par_iter().map(|s| measure(cmd, s, seed)).collect::<Result<Vec<_>>>()?;
    let config = serde_json::to_value(cmd)?;
    let csv = if b.output.csv { Some(csv_table(cmd, &states, &measured)?) } else { None };
    let mut failure = None;
    let mut records = Vec::with_capacity(measured.len());
    for (s, m) in states.iter().zip(measured) {
        let mut v = serde_json::to_value(&m.record)?;
        let obj = v.as_object_mut().expect("record is an object");
        obj.insert("source".into(), s.label.clone());
        obj.insert("state_truncation_error".into(), json!(s.truncation_error));
        obj.insert("config".into(), config.clone());
        obj.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        records.push(v);
        if failure.is_none() {
            failure = m.failure;
        }
    }
    Ok(Outcome { records, csv, failure })
}
