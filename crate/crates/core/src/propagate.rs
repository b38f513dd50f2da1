//! Unitary propagation `e^{-iHt}` for matrix-free Hermitian operators.
//!
//! The workhorse is a Lanczos exponential with full reorthogonalization and
//! an a-posteriori residual estimate that drives both the Krylov dimension
//! and the substep length. A dense eigendecomposition propagator is kept
//! alongside as the validation oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{FockVector, ManyBodyHamiltonian, Sector};
use crate::lattice::C64;

/// A Hermitian linear map given only through its action.
pub trait HermitianOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, input: &[C64], output: &mut [C64]);
}

/// Default refusal threshold for dense oracles.
pub const DEFAULT_DENSE_CAP: usize = 5000;

#[derive(Clone, Debug, Serialize)]
pub struct EvolveOptions {
    /// Target norm error accumulated over the whole interval.
    pub tol: f64,
    pub krylov_min: usize,
    pub krylov_max: usize,
    pub min_substep: f64,
}

impl EvolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        EvolveOptions { tol, ..Default::default() }
    }
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { tol: 1e-10, krylov_min: 8, krylov_max: 64, min_substep: 1e-10 }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvolveStats {
    pub substeps: usize,
    pub matvecs: usize,
    pub max_krylov: usize,
    /// Sum of the per-substep residual estimates.
    pub error_estimate: f64,
}

impl EvolveStats {
    fn absorb(&mut self, other: &EvolveStats) {
        self.substeps += other.substeps;
        self.matvecs += other.matvecs;
        self.max_krylov = self.max_krylov.max(other.max_krylov);
        self.error_estimate += other.error_estimate;
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `exp(-i s T τ) e₁` for the symmetric tridiagonal `T` given by its eigensystem.
fn expm_e1(eig: &SymmetricEigen<f64, nalgebra::Dyn>, s: f64, tau: f64) -> Vec<C64> {
    let q = &eig.eigenvectors;
    let k = q.nrows();
    let phases: Vec<C64> = (0..k)
        .map(|j| C64::from_polar(q[(0, j)], -s * eig.eigenvalues[j] * tau))
        .collect();
    (0..k).map(|i| (0..k).map(|j| phases[j] * q[(i, j)]).sum()).collect()
}

fn tridiagonal(alphas: &[f64], betas: &[f64]) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    SymmetricEigen::new(t)
}

/// Krylov approximation of `e^{-iHt} ψ`.
pub fn evolve<H: HermitianOperator + ?Sized>(
    h: &H,
    psi: &[C64],
    t: f64,
    opts: &EvolveOptions,
) -> Result<(Vec<C64>, EvolveStats)> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config("propagation tolerance must be positive".into()));
    }
    if !t.is_finite() {
        return Err(Error::Config("propagation time must be finite".into()));
    }
    if psi.len() != h.dim() {
        return Err(Error::Config(format!("vector length {} vs operator dimension {}", psi.len(), h.dim())));
    }
    let mut stats = EvolveStats::default();
    let mut v = psi.to_vec();
    let total = t.abs();
    if total == 0.0 || psi.is_empty() {
        return Ok((v, stats));
    }
    let sign = t.signum();
    let n = h.dim();
    let kmax = opts.krylov_max.min(n).max(1);
    let kmin = opts.krylov_min.min(kmax).max(1);

    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut done = 0.0;
    let mut tau = total;

    while total - done > total * 1e-14 {
        tau = tau.min(total - done);
        let beta0 = norm(&v);
        if beta0 == 0.0 {
            break;
        }
        if basis.is_empty() {
            basis.push(vec![C64::new(0.0, 0.0); n]);
        }
        basis[0].iter_mut().zip(&v).for_each(|(b, x)| *b = x / beta0);

        let mut alphas: Vec<f64> = Vec::with_capacity(kmax);
        let mut betas: Vec<f64> = Vec::with_capacity(kmax);
        let mut accepted: Option<(Vec<C64>, f64)> = None;

        for j in 0..kmax {
            h.apply(&basis[j], &mut w);
            stats.matvecs += 1;
            let alpha = dot(&basis[j], &w).re;
            for (wi, bi) in w.iter_mut().zip(&basis[j]) {
                *wi -= bi * alpha;
            }
            if j > 0 {
                let b = betas[j - 1];
                for (wi, bi) in w.iter_mut().zip(&basis[j - 1]) {
                    *wi -= bi * b;
                }
            }
            for bi in basis.iter().take(j + 1) {
                let c = dot(bi, &w);
                for (wi, bij) in w.iter_mut().zip(bi) {
                    *wi -= bij * c;
                }
            }
            let beta = norm(&w);
            alphas.push(alpha);
            let size = j + 1;
            let scale = alphas.iter().chain(&betas).fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
            let breakdown = beta <= 1e-13 * scale || size == n;

            if size >= kmin || breakdown || size == kmax {
                let eig = tridiagonal(&alphas, &betas);
                loop {
                    let y = expm_e1(&eig, sign, tau);
                    let err = if breakdown { 0.0 } else { beta0 * beta * y[size - 1].norm() };
                    let budget = opts.tol * tau / total;
                    if err <= budget {
                        accepted = Some((y, err));
                        break;
                    }
                    if size < kmax && !breakdown {
                        break;
                    }
                    let factor = (0.9 * (budget / err).powf(1.0 / size as f64)).clamp(0.2, 0.9);
                    tau *= factor;
                    if tau < opts.min_substep {
                        return Err(Error::Convergence(format!(
                            "Krylov substep fell below {:e} (residual {err:e})",
                            opts.min_substep
                        )));
                    }
                }
            }
            if accepted.is_some() {
                break;
            }
            betas.push(beta);
            if basis.len() <= j + 1 {
                basis.push(vec![C64::new(0.0, 0.0); n]);
            }
            let inv = 1.0 / beta;
            basis[j + 1].iter_mut().zip(&w).for_each(|(b, x)| *b = x * inv);
        }

        let (y, err) = accepted.ok_or_else(|| Error::Convergence("Krylov step not accepted".into()))?;
        let size = y.len();
        v.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for (coef, b) in y.iter().zip(&basis) {
            let c = coef * beta0;
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi += bi * c;
            }
        }
        done += tau;
        stats.substeps += 1;
        stats.max_krylov = stats.max_krylov.max(size);
        stats.error_estimate += err;
        if size < kmax {
            tau = total - done;
        }
    }
    Ok((v, stats))
}

/// Evolves a Fock vector. On cutoff bases each fixed-particle-number block is
/// propagated separately, which keeps the Krylov basis at block size.
pub fn evolve_state(
    h: &ManyBodyHamiltonian,
    psi: &FockVector,
    t: f64,
    opts: &EvolveOptions,
) -> Result<(FockVector, EvolveStats)> {
    if !std::sync::Arc::ptr_eq(h.basis(), psi.basis()) && **h.basis() != **psi.basis() {
        return Err(Error::Config("state and Hamiltonian live on different bases".into()));
    }
    match h.basis().sector() {
        Sector::FixedN(_) => {
            let (out, stats) = evolve(h, psi.coeffs(), t, opts)?;
            Ok((FockVector::new(psi.basis().clone(), out)?, stats))
        }
        Sector::Cutoff(n_max) => {
            let mut out = psi.coeffs().to_vec();
            let mut stats = EvolveStats::default();
            for n in 0..=n_max {
                let block = h.sector_block(n);
                let range = block.range();
                let slice = &psi.coeffs()[range.clone()];
                if slice.iter().all(|c| *c == C64::new(0.0, 0.0)) {
                    continue;
                }
                let (evolved, s) = evolve(&block, slice, t, opts)?;
                out[range].copy_from_slice(&evolved);
                stats.absorb(&s);
            }
            Ok((FockVector::new(psi.basis().clone(), out)?, stats))
        }
    }
}

/// Materializes an operator column by column.
pub fn dense_matrix<H: HermitianOperator + ?Sized>(h: &H) -> DMatrix<C64> {
    let n = h.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![C64::new(0.0, 0.0); n];
    let mut col = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        h.apply(&e, &mut col);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
        e[j] = C64::new(0.0, 0.0);
    }
    m
}

pub fn hermiticity_deviation(h: &DMatrix<C64>) -> f64 {
    let n = h.nrows();
    let mut dev = 0.0_f64;
    for i in 0..n {
        for j in 0..=i {
            dev = dev.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Exact propagation through a full eigendecomposition.
pub fn dense_expm_oracle(h: &DMatrix<C64>, psi: &[C64], t: f64, cap: usize) -> Result<Vec<C64>> {
    let n = h.nrows();
    if h.ncols() != n || psi.len() != n {
        return Err(Error::Config("dense oracle shape mismatch".into()));
    }
    if n > cap {
        return Err(Error::DenseCap { dim: n, cap });
    }
    let dev = hermiticity_deviation(h);
    if dev > 1e-10 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let eig = SymmetricEigen::new(h.clone());
    let q = eig.eigenvectors;
    let v = DVector::from_column_slice(psi);
    let mut c = q.adjoint() * v;
    for (k, ck) in c.iter_mut().enumerate() {
        *ck *= C64::from_polar(1.0, -eig.eigenvalues[k] * t);
    }
    Ok((q * c).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Dense(DMatrix<C64>);

    impl HermitianOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, input: &[C64], output: &mut [C64]) {
            let v = self.0.clone() * DVector::from_column_slice(input);
            output.copy_from_slice(v.as_slice());
        }
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (a.clone() + a.adjoint()) * C64::new(0.5, 0.0)
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        let v: Vec<C64> = (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let nv = norm(&v);
        v.into_iter().map(|x| x / nv).collect()
    }

    #[test]
    fn zero_time_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = Dense(random_hermitian(12, &mut rng));
        let psi = random_state(12, &mut rng);
        let (out, stats) = evolve(&h, &psi, 0.0, &EvolveOptions::default()).unwrap();
        assert_eq!(out, psi);
        assert_eq!(stats.matvecs, 0);
    }

    #[test]
    fn diagonal_operator_gives_phases() {
        let n = 30;
        let energies: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let h = Dense(DMatrix::from_fn(n, n, |i, j| if i == j { C64::new(energies[i], 0.0) } else { C64::new(0.0, 0.0) }));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = random_state(n, &mut rng);
        let t = 1.3;
        let (out, _) = evolve(&h, &psi, t, &EvolveOptions::with_tol(1e-12)).unwrap();
        for i in 0..n {
            let exact = psi[i] * C64::from_polar(1.0, -energies[i] * t);
            assert!((out[i] - exact).norm() < 1e-10);
        }
    }

    #[test]
    fn krylov_matches_dense_oracle_and_group_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 80;
        let hm = random_hermitian(n, &mut rng) * C64::new(3.0, 0.0);
        let h = Dense(hm.clone());
        let psi = random_state(n, &mut rng);
        let opts = EvolveOptions::with_tol(1e-11);
        for &t in &[0.3, -0.7, 2.0] {
            let (out, stats) = evolve(&h, &psi, t, &opts).unwrap();
            let exact = dense_expm_oracle(&hm, &psi, t, DEFAULT_DENSE_CAP).unwrap();
            let err = out.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-9, "t={t}: {err}");
            assert!((norm(&out) - 1.0).abs() < 1e-11);
            assert!(stats.max_krylov <= 64);
        }
        let (a, _) = evolve(&h, &psi, 0.4, &opts).unwrap();
        let (ab, _) = evolve(&h, &a, 0.9, &opts).unwrap();
        let (direct, _) = evolve(&h, &psi, 1.3, &opts).unwrap();
        let err = ab.iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 10.0 * 1e-11 * 10.0);
    }

    #[test]
    fn oracle_refusals() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hm = random_hermitian(6, &mut rng);
        let psi = random_state(6, &mut rng);
        assert!(matches!(dense_expm_oracle(&hm, &psi, 1.0, 5), Err(Error::DenseCap { .. })));
        hm[(0, 1)] += C64::new(1e-9, 0.0);
        assert!(matches!(dense_expm_oracle(&hm, &psi, 1.0, 100), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn identity_scaled_oracle_is_global_phase() {
        let c = 2.7;
        let hm = DMatrix::<C64>::identity(5, 5) * C64::new(c, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = random_state(5, &mut rng);
        let out = dense_expm_oracle(&hm, &psi, 0.8, 100).unwrap();
        for (a, b) in out.iter().zip(&psi) {
            assert!((a - b * C64::from_polar(1.0, -c * 0.8)).norm() < 1e-13);
        }
    }

    #[test]
    fn bad_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = Dense(random_hermitian(4, &mut rng));
        let psi = random_state(4, &mut rng);
        assert!(evolve(&h, &psi, 1.0, &EvolveOptions::with_tol(0.0)).is_err());
        assert!(evolve(&h, &psi, f64::NAN, &EvolveOptions::default()).is_err());
        assert!(evolve(&h, &psi[..3], 1.0, &EvolveOptions::default()).is_err());
    }
}
