use magic_mps::ground_states::{
    dmrg_ground_state, finite_difference, ground_state_sre, hamiltonian_mpo, sre_sweep, DmrgConfig, ModelFamily,
    Parity, SpinChainModel, SweepConfig,
};
use magic_mps::mps::Mps;
use magic_mps::oracle::{
    dense_ground_state, dense_ising_hamiltonian, dense_xxz_hamiltonian, exact_pauli_spectrum, exact_sre,
    ising_free_fermion_energy, DenseState,
};
use magic_mps::pauli::SreOptions;
use magic_mps::TruncationPolicy;
use num_complex::Complex64;

fn dense_close(model: &SpinChainModel, dense: &ndarray::Array2<f64>) {
    let mpo = hamiltonian_mpo(model).unwrap();
    let d = mpo.to_dense();
    assert_eq!(d.dim(), dense.dim());
    let diff = (&d - dense).iter().map(|x| x.abs()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{model:?}: {diff}");
}

#[test]
fn mpo_matches_dense_hamiltonians() {
    for n in [2, 3, 5] {
        dense_close(&SpinChainModel::ising(n, 0.7).unwrap(), &dense_ising_hamiltonian(n, 0.7));
        dense_close(&SpinChainModel::xxz(n, -0.3).unwrap(), &dense_xxz_hamiltonian(n, -0.3));
    }
    let m = hamiltonian_mpo(&SpinChainModel::xxz(6, 0.5).unwrap()).unwrap();
    assert_eq!(m.bond_dims().iter().max(), Some(&5));
    let m = hamiltonian_mpo(&SpinChainModel::ising(6, 0.5).unwrap()).unwrap();
    assert_eq!(m.bond_dims().iter().max(), Some(&3));
}

#[test]
fn mpo_expectation_on_zero_state() {
    let n = 7;
    let zero = Mps::<f64>::basis_state(&vec![0; n], &vec![2; n]).unwrap();
    let e0 = hamiltonian_mpo(&SpinChainModel::ising(n, 0.0).unwrap()).unwrap().expectation(&zero).unwrap();
    let e1 = hamiltonian_mpo(&SpinChainModel::ising(n, 1.0).unwrap()).unwrap().expectation(&zero).unwrap();
    assert!(e0.abs() < 1e-14, "{e0} {e1}");
    assert!((e1 + n as f64).abs() < 1e-12);
}

#[test]
fn invalid_models_and_configs() {
    assert!(SpinChainModel::ising(1, 1.0).is_err());
    assert!(SpinChainModel::xxz(4, f64::NAN).is_err());
    let bad = DmrgConfig { max_chi: 0, ..DmrgConfig::default() };
    assert!(dmrg_ground_state(&SpinChainModel::ising(4, 1.0).unwrap(), &bad).is_err());
}

fn check_dense(model: SpinChainModel, dense: ndarray::Array2<f64>) {
    let gs = dmrg_ground_state(&model, &DmrgConfig::default()).unwrap();
    let (e, _) = dense_ground_state(&dense).unwrap();
    assert!(gs.converged);
    assert!((gs.energy - e).abs() < 1e-8, "{model:?}: {} vs {e}", gs.energy);
    assert!((gs.state.norm() - 1.0).abs() < 1e-10);
    for w in gs.sweep_energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "energy rose: {:?}", gs.sweep_energies);
    }
}

#[test]
fn dmrg_matches_exact_diagonalization() {
    check_dense(SpinChainModel::ising(8, 2.0).unwrap(), dense_ising_hamiltonian(8, 2.0));
    check_dense(SpinChainModel::xxz(8, 0.5).unwrap(), dense_xxz_hamiltonian(8, 0.5));
}

#[test]
fn critical_ising_matches_free_fermions() {
    let gs = dmrg_ground_state(&SpinChainModel::ising(16, 1.0).unwrap(), &DmrgConfig::default()).unwrap();
    let exact = ising_free_fermion_energy(16, 1.0, 1.0).unwrap();
    assert!((gs.energy - exact).abs() < 1e-6, "{} vs {exact}", gs.energy);
    for w in gs.sweep_energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
}

#[test]
fn strong_field_approaches_paramagnet() {
    let n = 10;
    let h = 50.0;
    let gs = dmrg_ground_state(&SpinChainModel::ising(n, h).unwrap(), &DmrgConfig::default()).unwrap();
    assert!((gs.energy / n as f64 + h).abs() < 0.02);
}

#[test]
fn parity_projection_selects_sector() {
    let cfg = DmrgConfig { parity: Some(Parity::Even), ..DmrgConfig::default() };
    let model = SpinChainModel::ising(6, 0.0).unwrap();
    let gs = dmrg_ground_state(&model, &cfg).unwrap();
    assert!((gs.energy + 5.0).abs() < 1e-10);
    // even cat state of |+…+⟩ and |−…−⟩: amplitudes on even-weight strings only
    let psi = DenseState::from_real_mps(&gs.state).unwrap();
    for (i, a) in psi.amplitudes().iter().enumerate() {
        let expect = if i.count_ones() % 2 == 0 { 2f64.powf(-2.5) } else { 0.0 };
        assert!((a.norm() - expect).abs() < 1e-8, "{i}: {a}");
    }
}

#[test]
fn sre_matches_oracle_on_small_chain() {
    let sre = SreOptions { policy: TruncationPolicy::exact(), ..SreOptions::default() };
    for (model, dense) in [
        (SpinChainModel::ising(8, 0.8).unwrap(), dense_ising_hamiltonian(8, 0.8)),
        (SpinChainModel::xxz(8, 0.3).unwrap(), dense_xxz_hamiltonian(8, 0.3)),
    ] {
        let row = ground_state_sre(&model, 2, &DmrgConfig::default(), &TruncationPolicy::exact(), &sre).unwrap();
        let (_, v) = dense_ground_state(&dense).unwrap();
        let amps: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let spec = exact_pauli_spectrum(&DenseState::new(8, amps).unwrap()).unwrap();
        let m2 = exact_sre(&spec, 2.0).unwrap();
        assert!((row.m_n * 8.0 - m2).abs() < 1e-8, "{model:?}: {} vs {m2}", row.m_n * 8.0);
    }
}

#[test]
fn sweep_limits_and_csv() {
    let cfg = SweepConfig {
        family: ModelFamily::Ising,
        n: 8,
        grid: vec![0.0, 10.0],
        renyi: 2,
        dmrg: DmrgConfig { parity: Some(Parity::Even), ..DmrgConfig::default() },
        pauli: TruncationPolicy::with_threshold(1e-9),
        sre: SreOptions::default(),
    };
    let table = sre_sweep(&cfg).unwrap();
    assert!(table.rows[0].m_n.abs() < 1e-8, "GHZ-like: {}", table.rows[0].m_n);
    assert!(table.rows[1].m_n < 0.01);
    let csv = table.to_csv();
    assert!(csv.starts_with("parameter,m_n,truncation_error,chi_used,energy\n"));
    assert_eq!(csv.lines().count(), 3);

    let bad = SweepConfig { grid: vec![1.0, 0.5], ..cfg };
    assert!(sre_sweep(&bad).is_err());
}

#[test]
fn finite_differences_are_exact_on_polynomials() {
    let xs: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
    let constant = vec![3.0; 9];
    for order in [1, 2] {
        let d = finite_difference(&xs, &constant, order).unwrap();
        assert!(d.values.iter().all(|v| v.abs() < 1e-12));
        assert!((d.spacing - 0.25).abs() < 1e-15);
    }
    let quad: Vec<f64> = xs.iter().map(|x| 2.0 * x * x - x + 1.0).collect();
    let d1 = finite_difference(&xs, &quad, 1).unwrap();
    let d2 = finite_difference(&xs, &quad, 2).unwrap();
    for (x, (a, b)) in xs.iter().zip(d1.values.iter().zip(&d2.values)) {
        assert!((a - (4.0 * x - 1.0)).abs() < 1e-10);
        assert!((b - 4.0).abs() < 1e-10);
    }
    assert!(finite_difference(&[0.0, 0.1, 0.3], &[1.0, 1.0, 1.0], 1).is_err());
    assert!(finite_difference(&xs, &quad, 3).is_err());
}
