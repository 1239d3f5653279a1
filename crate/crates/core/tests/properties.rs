use faer::{c64, MatRef};
use proptest::prelude::*;

use svsyk_core::majorana::{build_majoranas, parity_operator, project_to_sector, Parity};
use svsyk_core::sampler::{assemble_hamiltonian, assemble_sector_hamiltonian, sample_couplings, Mode, ModelConfig};
use svsyk_core::spacing::{spacing_ratios, SpacingOptions};
use svsyk_core::spectral::{
    hermitian_eigenvalues, hermitized_singular_values, sign_align, singular_values, svd_factors,
};

fn max_abs(m: MatRef<'_, c64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].norm());
        }
    }
    best
}

fn mode_strategy() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::NonHermitian), Just(Mode::Hermitian), Just(Mode::AntiHermitian)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hamiltonians_commute_with_parity(n in prop::sample::select(vec![8usize, 10, 12]), p in 0.05f64..=1.0, seed: u64, mode in mode_strategy()) {
        let ms = build_majoranas(n).unwrap();
        let c = sample_couplings(&ModelConfig::new(n, p, mode, seed, 0)).unwrap();
        let h = assemble_hamiltonian(&c, &ms).unwrap();
        let par = parity_operator(&ms);
        let pm = par.matrix();
        let comm = &h * &pm - &pm * &h;
        prop_assert!(max_abs(comm.as_ref()) <= 1e-10 * max_abs(h.as_ref()).max(1e-300));
        // The direct sector assembly agrees with projecting the full matrix.
        for parity in [Parity::Plus, Parity::Minus] {
            let direct = assemble_sector_hamiltonian(&c, &ms, &par.sector_basis(parity)).unwrap();
            let projected = project_to_sector(h.as_ref(), &par, parity).unwrap();
            prop_assert_eq!(max_abs((&direct - &projected).as_ref()), 0.0);
        }
    }

    #[test]
    fn svd_and_hermitization_routes_agree(n in prop::sample::select(vec![8usize, 10, 12]), p in 0.05f64..=1.0, seed: u64, mode in mode_strategy()) {
        let ms = build_majoranas(n).unwrap();
        let c = sample_couplings(&ModelConfig::new(n, p, mode, seed, 1)).unwrap();
        let h = assemble_hamiltonian(&c, &ms).unwrap();
        let a = singular_values(h.as_ref()).unwrap();
        let b = hermitized_singular_values(h.as_ref()).unwrap();
        let scale = a.max();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-9 * scale.max(1e-300));
        }
        let f = svd_factors(h.as_ref()).unwrap();
        prop_assert!(f.unitarity_defect() <= 1e-12);
        prop_assert!(max_abs((&f.reconstruct() - &h).as_ref()) <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn sector_spectra_union_is_full_spectrum(n in prop::sample::select(vec![8usize, 10]), seed: u64) {
        let ms = build_majoranas(n).unwrap();
        let c = sample_couplings(&ModelConfig::new(n, 1.0, Mode::Hermitian, seed, 0)).unwrap();
        let h = assemble_hamiltonian(&c, &ms).unwrap();
        let par = parity_operator(&ms);
        let mut union = Vec::new();
        for parity in [Parity::Plus, Parity::Minus] {
            union.extend(hermitian_eigenvalues(project_to_sector(h.as_ref(), &par, parity).unwrap().as_ref()).unwrap());
        }
        union.sort_by(f64::total_cmp);
        let full = hermitian_eigenvalues(h.as_ref()).unwrap();
        for (x, y) in union.iter().zip(&full) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn sign_alignment_recovers_eigenvalue_multiset(seed: u64, p in 0.3f64..=1.0) {
        let ms = build_majoranas(10).unwrap();
        let c = sample_couplings(&ModelConfig::new(10, p, Mode::Hermitian, seed, 0)).unwrap();
        let par = parity_operator(&ms);
        let h = assemble_sector_hamiltonian(&c, &ms, &par.sector_basis(Parity::Plus)).unwrap();
        let signed = sign_align(&svd_factors(h.as_ref()).unwrap()).unwrap().sorted();
        let eig = hermitian_eigenvalues(h.as_ref()).unwrap();
        for (x, y) in signed.iter().zip(&eig) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn spacing_ratios_are_scale_and_shift_invariant(levels in prop::collection::vec(0.0f64..10.0, 12..60), c in 0.1f64..100.0) {
        let opts = SpacingOptions::default();
        let base = spacing_ratios(&levels, &opts);
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        prop_assert!(base.r_values.iter().all(|r| (0.0..=1.0).contains(r)));
        let scaled: Vec<f64> = levels.iter().map(|x| x * c).collect();
        let shifted: Vec<f64> = levels.iter().map(|x| x + c).collect();
        let s = spacing_ratios(&scaled, &opts).unwrap();
        let t = spacing_ratios(&shifted, &opts).unwrap();
        for (a, b) in base.r_values.iter().zip(&s.r_values) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in base.r_values.iter().zip(&t.r_values) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn operator_construction_is_deterministic() {
    let a = build_majoranas(10).unwrap().matrices();
    let b = build_majoranas(10).unwrap().matrices();
    for (x, y) in a.iter().zip(&b) {
        assert!(x == y);
    }
    let h1 = assemble_hamiltonian(&sample_couplings(&ModelConfig::new(10, 0.5, Mode::NonHermitian, 9, 3)).unwrap(), &build_majoranas(10).unwrap()).unwrap();
    let h2 = assemble_hamiltonian(&sample_couplings(&ModelConfig::new(10, 0.5, Mode::NonHermitian, 9, 3)).unwrap(), &build_majoranas(10).unwrap()).unwrap();
    assert!(h1 == h2);
}
