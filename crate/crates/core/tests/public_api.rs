use meanfield::experiments::{fit_exponential, fit_rate};
use meanfield::fock::{apply_annihilate, apply_create, factorized_state, number_moment, FockBasis, FockVector, ManyBodyHamiltonian, Sector};
use meanfield::lattice::{one_body_operator, Grid, LatticeWavefunction, PairFamily, PotentialSpec, C64};
use meanfield::propagate::{evolve_state, EvolveOptions};
use meanfield::scattering::{solve_zero_energy, square_barrier_a0, RadialFamily, RadialPotential, ScatteringOptions};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn basis_dimensions_match_stars_and_bars() {
    for m in 2..6 {
        let grid = Grid::new(1, m, 1.0).unwrap();
        for n in 0..6 {
            let b = FockBasis::new(grid, Sector::FixedN(n)).unwrap();
            assert_eq!(b.dim() as u64, binom((n + m - 1) as u64, (m - 1) as u64));
        }
        let cut = FockBasis::new(grid, Sector::Cutoff(4)).unwrap();
        assert_eq!(cut.dim() as u64, binom((4 + m) as u64, m as u64));
    }
}

#[test]
fn basis_is_graded_and_descending_within_sectors() {
    let grid = Grid::new(1, 4, 1.0).unwrap();
    let b = FockBasis::new(grid, Sector::Cutoff(5)).unwrap();
    for i in 0..b.dim() {
        assert_eq!(b.index_of(b.state(i)), Some(i));
        if i + 1 < b.dim() {
            let (p, q) = (b.particles_at(i), b.particles_at(i + 1));
            assert!(p < q || (p == q && b.state(i) > b.state(i + 1)));
        }
    }
    assert_eq!(b.state(0), &[0, 0, 0, 0]);
    assert_eq!(b.state(1), &[1, 0, 0, 0]);
}

#[test]
fn oversized_basis_is_refused() {
    let grid = Grid::new(3, 8, 1.0).unwrap();
    assert!(FockBasis::new(grid, Sector::FixedN(20)).is_err());
}

#[test]
fn single_particle_evolution_matches_dense_exponential() {
    let grid = Grid::new(1, 7, 1.0).unwrap();
    let ext: Vec<f64> = (0..7).map(|x| 0.3 * (x as f64).sin()).collect();
    let pot = PotentialSpec::from_family(grid, &PairFamily::Gaussian { amplitude: 1.0, width: 1.0 }, ext).unwrap();
    let phi = LatticeWavefunction::packet(grid, &[3.0], 1.0, &[1]).unwrap();
    let psi = factorized_state(&phi, 1).unwrap();
    let h = ManyBodyHamiltonian::new(psi.basis().clone(), pot.clone(), None).unwrap();
    let t = 0.7;
    let (out, _) = evolve_state(&h, &psi, t, &EvolveOptions::with_tol(1e-12)).unwrap();

    let dense = one_body_operator(&grid, &pot).unwrap().to_dense();
    let eig = SymmetricEigen::new(dense);
    let v = &eig.eigenvectors;
    let mut want = vec![C64::new(0.0, 0.0); 7];
    for k in 0..7 {
        let proj: C64 = (0..7).map(|x| phi.values()[x] * v[(x, k)]).sum();
        let phase = C64::from_polar(1.0, -eig.eigenvalues[k] * t);
        for x in 0..7 {
            want[x] += phase * proj * v[(x, k)];
        }
    }
    let err = out.coeffs().iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-9, "max error {err}");
}

#[test]
fn canonical_commutator_on_cutoff_vectors() {
    let grid = Grid::new(1, 3, 1.0).unwrap();
    let basis = FockBasis::new(grid, Sector::Cutoff(6)).unwrap();
    let coeffs: Vec<C64> = (0..basis.dim())
        .map(|i| if basis.particles_at(i) <= 4 { C64::new((i as f64 * 0.37).cos(), (i as f64 * 0.11).sin()) } else { C64::new(0.0, 0.0) })
        .collect();
    let psi = FockVector::new(basis, coeffs).unwrap();
    let f = LatticeWavefunction::new(grid, vec![C64::new(0.5, 0.1), C64::new(-0.2, 0.4), C64::new(0.3, 0.0)]).unwrap();
    let g = LatticeWavefunction::new(grid, vec![C64::new(0.1, -0.3), C64::new(0.6, 0.2), C64::new(-0.4, 0.1)]).unwrap();
    let ag_psi = apply_annihilate(&g, &psi).unwrap();
    let left = apply_annihilate(&g, &apply_create(&f, &psi).unwrap().value).unwrap();
    let right = apply_create(&f, &ag_psi).unwrap().value;
    let gf = g.inner(&f);
    let comm = left.add_scaled(C64::new(-1.0, 0.0), &right).unwrap();
    let expect = psi.scaled(gf);
    assert!(comm.distance(&expect).unwrap() < 1e-12);
}

#[test]
fn factorized_state_is_normalized_with_sharp_number() {
    let grid = Grid::new(1, 5, 1.0).unwrap();
    let phi = LatticeWavefunction::packet(grid, &[2.0], 1.0, &[0]).unwrap();
    let psi = factorized_state(&phi, 4).unwrap();
    assert!((psi.norm() - 1.0).abs() < 1e-12);
    assert!((number_moment(&psi, 1) - 4.0).abs() < 1e-12);
    assert!((number_moment(&psi, 2) - 16.0).abs() < 1e-11);
}

#[test]
fn square_barrier_scattering_length() {
    let pot = RadialPotential::new(RadialFamily::SquareBarrier { v0: 2.0, radius: 1.0 }).unwrap();
    let res = solve_zero_energy(&pot, &ScatteringOptions::default()).unwrap();
    let want = 1.0 - 1f64.tanh();
    assert!((square_barrier_a0(2.0, 1.0) - want).abs() < 1e-15);
    assert!((res.a0 - want).abs() / want < 1e-6, "a0 {} vs {want}", res.a0);
    assert!(res.integral_mismatch() < 1e-6);
    assert!(8.0 * std::f64::consts::PI * res.a0 <= res.b0);
}

#[test]
fn rate_fit_refuses_when_floor_swallows_points() {
    let pts = [(2.0, 1e-3), (4.0, 1e-14), (8.0, 1e-15)];
    assert!(fit_rate(&pts, 1e-14).is_err());
}

proptest! {
    #[test]
    fn rate_fit_recovers_power_laws(c in 0.01f64..10.0, p in 0.2f64..2.5) {
        let pts: Vec<(f64, f64)> = [2.0, 3.0, 5.0, 8.0].iter().map(|&n: &f64| (n, c * n.powf(-p))).collect();
        let fit = fit_rate(&pts, 0.0).unwrap();
        prop_assert!((fit.slope + p).abs() < 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
        prop_assert!(fit.residual < 1e-10);
    }

    #[test]
    fn exponential_fit_recovers_rates(c in 0.1f64..5.0, k in -1.0f64..3.0) {
        let pts: Vec<(f64, f64)> = [0.25, 0.5, 1.0, 2.0].iter().map(|&t: &f64| (t, c * (k * t).exp())).collect();
        let fit = fit_exponential(&pts).unwrap();
        prop_assert!((fit.k - k).abs() < 1e-10);
        prop_assert!((fit.c - c).abs() < 1e-9 * c.max(1.0));
        prop_assert!(fit.relative_residual < 1e-10);
    }

    #[test]
    fn square_barrier_length_is_below_radius(v0 in 0.01f64..50.0, r in 0.1f64..3.0) {
        let a = square_barrier_a0(v0, r);
        prop_assert!(a > 0.0 && a < r);
    }
}
