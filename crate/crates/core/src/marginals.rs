//! Reduced density matrices of Fock states, trace distances and
//! k-body expectations.
//!
//! A k-body matrix is indexed by site tuples `(x_1, ..., x_k)` flattened
//! with `x_1` as the most significant digit.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{config, Error, Result};
use crate::fock::{FockBasis, FockVector, Sector};
use crate::lattice::{Grid, LatticeWavefunction, C64};

/// Largest supported marginal order.
pub const MAX_ORDER: usize = 3;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug)]
pub struct ReducedDensityMatrix {
    grid: Grid,
    k: usize,
    entries: DMatrix<C64>,
}

/// Side length `(m^dim)^k` of a k-body matrix, if it fits under `cap`.
pub fn k_body_side(grid: &Grid, k: usize, cap: usize) -> Result<usize> {
    if k == 0 || k > MAX_ORDER {
        return config(format!("marginal order must be in 1..={MAX_ORDER}, got {k}"));
    }
    let side = grid.sites().checked_pow(k as u32).unwrap_or(usize::MAX);
    if side > cap {
        return Err(Error::DenseCap { dim: side, cap });
    }
    Ok(side)
}

impl ReducedDensityMatrix {
    /// Wraps a k-body matrix without checking density-matrix invariants.
    pub fn from_raw(grid: Grid, k: usize, entries: DMatrix<C64>) -> Result<Self> {
        let side = k_body_side(&grid, k, usize::MAX)?;
        if entries.nrows() != side || entries.ncols() != side {
            return config(format!("{k}-body matrix must be {side}x{side}, got {}x{}", entries.nrows(), entries.ncols()));
        }
        Ok(ReducedDensityMatrix { grid, k, entries })
    }

    /// Wraps a matrix and checks Hermiticity, unit trace and positivity.
    pub fn new(grid: Grid, k: usize, entries: DMatrix<C64>) -> Result<Self> {
        let rho = ReducedDensityMatrix::from_raw(grid, k, entries)?;
        rho.check_invariants()?;
        Ok(rho)
    }

    pub fn zeros(grid: Grid, k: usize) -> Result<Self> {
        let side = k_body_side(&grid, k, usize::MAX)?;
        Ok(ReducedDensityMatrix { grid, k, entries: DMatrix::zeros(side, side) })
    }

    /// `|φ⟩⟨φ|^{⊗k}`.
    pub fn product(phi: &LatticeWavefunction, k: usize) -> Result<Self> {
        let v = tensor_power(phi.values(), k)?;
        let v = DVector::from_vec(v);
        ReducedDensityMatrix::from_raw(*phi.grid(), k, &v * v.adjoint())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        (&self.entries - self.entries.adjoint()).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_part_eigenvalues(&self.entries)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermiticity_deviation();
        if herm > 1e-12 {
            return Err(Error::Invariant(format!("marginal not Hermitian (deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::Invariant(format!("marginal trace {tr} differs from 1")));
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(Error::Invariant(format!("marginal has eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// Tr|ρ| via singular values; valid for any square matrix.
    pub fn trace_norm(&self) -> f64 {
        trace_norm(&self.entries)
    }

    pub fn sub(&self, other: &ReducedDensityMatrix) -> Result<ReducedDensityMatrix> {
        self.check_shape(other)?;
        Ok(ReducedDensityMatrix { grid: self.grid, k: self.k, entries: &self.entries - &other.entries })
    }

    pub fn add(&self, other: &ReducedDensityMatrix) -> Result<ReducedDensityMatrix> {
        self.check_shape(other)?;
        Ok(ReducedDensityMatrix { grid: self.grid, k: self.k, entries: &self.entries + &other.entries })
    }

    pub fn scaled(&self, c: C64) -> ReducedDensityMatrix {
        ReducedDensityMatrix { grid: self.grid, k: self.k, entries: &self.entries * c }
    }

    fn check_shape(&self, other: &ReducedDensityMatrix) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        if self.k != other.k {
            return config(format!("marginal orders differ: {} vs {}", self.k, other.k));
        }
        Ok(())
    }

    /// `Tr_{k}`: trace out the last particle slot (not renormalized).
    pub fn partial_trace_last(&self) -> Result<ReducedDensityMatrix> {
        if self.k < 2 {
            return config("partial trace needs k >= 2");
        }
        let s = self.grid.sites();
        let side = self.entries.nrows() / s;
        let m = DMatrix::from_fn(side, side, |i, j| (0..s).map(|y| self.entries[(i * s + y, j * s + y)]).sum());
        Ok(ReducedDensityMatrix { grid: self.grid, k: self.k - 1, entries: m })
    }

    /// Writes `k`, the grid descriptor and the entries row by row.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# reduced-density-matrix v1")?;
        writeln!(w, "k {}", self.k)?;
        writeln!(w, "dim {}", self.grid.dim())?;
        writeln!(w, "m {}", self.grid.m())?;
        writeln!(w, "spacing {}", self.grid.spacing())?;
        writeln!(w, "side {}", self.entries.nrows())?;
        for i in 0..self.entries.nrows() {
            for j in 0..self.entries.ncols() {
                let z = self.entries[(i, j)];
                writeln!(w, "{} {}", z.re, z.im)?;
            }
        }
        Ok(())
    }
}

/// Flattened `v^{⊗k}`.
pub fn tensor_power(v: &[C64], k: usize) -> Result<Vec<C64>> {
    if k == 0 || k > MAX_ORDER {
        return config(format!("tensor order must be in 1..={MAX_ORDER}"));
    }
    let mut out = vec![C64::new(1.0, 0.0)];
    for _ in 0..k {
        out = out.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
    }
    Ok(out)
}

fn hermitian_part_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
}

/// Sum of singular values.
pub fn trace_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().sum()
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.iter().fold(0.0, |a: f64, &b| a.max(b))
}

/// γ⁽ᵏ⁾ with entries `⟨a_{x'_1}…a_{x'_k}ψ, a_{x_1}…a_{x_k}ψ⟩`, normalized to
/// trace one. For k = 1 the normalizer is `⟨ψ, 𝒩ψ⟩`.
pub fn reduce(psi: &FockVector, k: usize, cap: usize) -> Result<ReducedDensityMatrix> {
    let basis = psi.basis();
    let grid = *basis.grid();
    let side = k_body_side(&grid, k, cap)?;
    if basis.max_particles() < k {
        return config(format!("cannot form a {k}-particle marginal of a state with at most {} particles", basis.max_particles()));
    }
    // lowered states t: every basis state with at most n_max - k particles
    let lowered: std::sync::Arc<FockBasis> = match basis.sector() {
        Sector::FixedN(n) => FockBasis::new(grid, Sector::FixedN(n - k))?,
        Sector::Cutoff(n) => FockBasis::new(grid, Sector::Cutoff(n - k))?,
    };
    let modes = basis.modes();
    let tuples: Vec<Vec<usize>> = (0..side)
        .map(|mut idx| {
            let mut xs = vec![0usize; k];
            for slot in (0..k).rev() {
                xs[slot] = idx % modes;
                idx /= modes;
            }
            xs
        })
        .collect();
    const CHUNK: usize = 8192;
    let coeffs = psi.coeffs();
    let partials: Vec<DMatrix<C64>> = (0..lowered.dim().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = DMatrix::<C64>::zeros(side, side);
            let mut u = vec![ZERO; side];
            let mut nz: Vec<usize> = Vec::with_capacity(side);
            let mut buf = vec![0u8; modes];
            for t in c * CHUNK..((c + 1) * CHUNK).min(lowered.dim()) {
                let ts = lowered.state(t);
                nz.clear();
                for (ix, xs) in tuples.iter().enumerate() {
                    buf.copy_from_slice(ts);
                    let mut amp = 1.0;
                    for &x in xs {
                        buf[x] += 1;
                        amp *= buf[x] as f64;
                    }
                    let j = basis.index_of(&buf).expect("raised state lies in the basis");
                    let v = coeffs[j];
                    if v != ZERO {
                        u[ix] = v * amp.sqrt();
                        nz.push(ix);
                    }
                }
                for &a in &nz {
                    for &b in &nz {
                        acc[(a, b)] += u[a] * u[b].conj();
                    }
                }
            }
            acc
        })
        .collect();
    let mut g = DMatrix::<C64>::zeros(side, side);
    for p in &partials {
        g += p;
    }
    let tr = g.trace().re;
    if !(tr > 0.0) {
        return config("marginal of a state without particles");
    }
    g /= C64::new(tr, 0.0);
    // remove rounding asymmetry
    let g = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    ReducedDensityMatrix::from_raw(grid, k, g)
}

/// `Tr|a - b|`.
pub fn trace_distance(a: &ReducedDensityMatrix, b: &ReducedDensityMatrix) -> Result<f64> {
    a.check_shape(b)?;
    let d = &a.entries - &b.entries;
    Ok(hermitian_part_eigenvalues(&d).iter().map(|e| e.abs()).sum())
}

/// `Tr(J ρ)`.
pub fn observable_expectation(rho: &ReducedDensityMatrix, j: &DMatrix<C64>) -> Result<C64> {
    if j.nrows() != rho.entries.nrows() || j.ncols() != rho.entries.ncols() {
        return config("observable and marginal shapes differ");
    }
    Ok((j * &rho.entries).trace())
}

#[derive(Clone, Copy, Debug)]
pub struct RankOneDistance {
    pub trace_norm: f64,
    pub twice_operator_norm: f64,
}

/// `Tr|γ - |φ⟩⟨φ||` computed twice: from the full spectrum and as twice the
/// operator norm. The difference is traceless with a single negative
/// eigenvalue, so the two must agree.
pub fn trace_distance_rank_one_shortcut(gamma: &ReducedDensityMatrix, phi: &LatticeWavefunction) -> Result<RankOneDistance> {
    if gamma.k != 1 {
        return config("the rank-one shortcut applies to one-particle marginals");
    }
    if (phi.norm() - 1.0).abs() > 1e-10 {
        return config("the rank-one shortcut needs a normalized φ");
    }
    let proj = ReducedDensityMatrix::product(phi, 1)?;
    let d = gamma.sub(&proj)?;
    let eig = hermitian_part_eigenvalues(&d.entries);
    let tn: f64 = eig.iter().map(|e| e.abs()).sum();
    let op = eig.iter().fold(0.0, |m: f64, e| m.max(e.abs()));
    let out = RankOneDistance { trace_norm: tn, twice_operator_norm: 2.0 * op };
    if (out.trace_norm - out.twice_operator_norm).abs() > 1e-8 {
        return Err(Error::Invariant(format!(
            "trace norm {} differs from twice the operator norm {}",
            out.trace_norm, out.twice_operator_norm
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_cutoff, coherent_state, factorized_state};
    use crate::propagate::DEFAULT_DENSE_CAP;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_phi(g: Grid, rng: &mut ChaCha8Rng) -> LatticeWavefunction {
        let v = (0..g.sites()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        LatticeWavefunction::new(g, v).unwrap().normalized().unwrap()
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        (&a + a.adjoint()) * C64::new(0.5, 0.0)
    }

    #[test]
    fn factorized_marginals_are_products() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = random_phi(g, &mut rng);
        let psi = factorized_state(&phi, 3).unwrap();
        for k in 1..=3 {
            let gamma = reduce(&psi, k, DEFAULT_DENSE_CAP).unwrap();
            gamma.check_invariants().unwrap();
            let p = ReducedDensityMatrix::product(&phi, k).unwrap();
            assert!(trace_distance(&gamma, &p).unwrap() < 1e-12);
        }
        assert!(reduce(&psi, 4, DEFAULT_DENSE_CAP).is_err());
        assert!(matches!(reduce(&psi, 3, 10), Err(Error::DenseCap { .. })));
    }

    #[test]
    fn coherent_one_particle_marginal() {
        let g = Grid::new(1, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_phi(g, &mut rng);
        let n = 2.0;
        let basis = FockBasis::new(g, Sector::Cutoff(coherent_cutoff(n))).unwrap();
        let psi = coherent_state(&basis, &phi.scaled(C64::new(n.sqrt(), 0.0)), 1e-8).unwrap();
        let gamma = reduce(&psi.value, 1, DEFAULT_DENSE_CAP).unwrap();
        let p = ReducedDensityMatrix::product(&phi, 1).unwrap();
        assert!(trace_distance(&gamma, &p).unwrap() < 1e-8);
    }

    /// Two bosons in two modes: ψ = c0|2,0⟩ + c1|1,1⟩ + c2|0,2⟩.
    /// First quantization: Ψ(0,0)=c0, Ψ(0,1)=Ψ(1,0)=c1/√2, Ψ(1,1)=c2,
    /// and γ = Ψ Ψ† (Ψ as a 2×2 matrix).
    #[test]
    fn entangled_two_mode_state() {
        let g = Grid::new(1, 2, 1.0).unwrap();
        let basis = FockBasis::new(g, Sector::FixedN(2)).unwrap();
        let c = [C64::new(0.6, 0.0), C64::new(0.0, 0.64), C64::new(0.48, 0.0)];
        let psi = FockVector::new(basis, c.to_vec()).unwrap();
        let gamma = reduce(&psi, 1, DEFAULT_DENSE_CAP).unwrap();
        let r = 2f64.sqrt();
        let big = DMatrix::from_row_slice(2, 2, &[c[0], c[1] / r, c[1] / r, c[2]]);
        let oracle = &big * big.adjoint();
        assert!((gamma.entries() - &oracle).iter().all(|z| z.norm() < 1e-14));
        let mut ev = gamma.eigenvalues();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ev_o = hermitian_part_eigenvalues(&oracle);
        ev_o.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(&ev_o) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn partial_trace_consistency_fixed_n() {
        let g = Grid::new(1, 3, 1.0).unwrap();
        let basis = FockBasis::new(g, Sector::FixedN(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<C64> = (0..basis.dim()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let psi = FockVector::new(basis, v).unwrap();
        let g1 = reduce(&psi, 1, DEFAULT_DENSE_CAP).unwrap();
        let g2 = reduce(&psi, 2, DEFAULT_DENSE_CAP).unwrap();
        let g3 = reduce(&psi, 3, DEFAULT_DENSE_CAP).unwrap();
        for gamma in [&g1, &g2, &g3] {
            gamma.check_invariants().unwrap();
        }
        assert!(trace_distance(&g2.partial_trace_last().unwrap(), &g1).unwrap() < 1e-10);
        assert!(trace_distance(&g3.partial_trace_last().unwrap(), &g2).unwrap() < 1e-10);
        // exchange symmetry of the two slots
        let s = 3;
        for a in 0..9 {
            for b in 0..9 {
                let (a1, a2) = (a / s, a % s);
                let (b1, b2) = (b / s, b % s);
                assert!((g2.entries()[(a, b)] - g2.entries()[(a2 * s + a1, b2 * s + b1)]).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn partial_trace_contracts_trace_norm() {
        let g = Grid::new(1, 3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = ReducedDensityMatrix::from_raw(g, 2, random_hermitian(9, &mut rng)).unwrap();
            assert!(m.partial_trace_last().unwrap().trace_norm() <= m.trace_norm() + 1e-12);
        }
    }

    #[test]
    fn trace_distance_examples() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let phi = random_phi(g, &mut rng);
        let p = ReducedDensityMatrix::product(&phi, 1).unwrap();
        assert!(trace_distance(&p, &p).unwrap() < 1e-14);
        let e0 = LatticeWavefunction::from_modes(g, &[(vec![0], C64::new(1.0, 0.0))]).unwrap();
        let e1 = LatticeWavefunction::from_modes(g, &[(vec![1], C64::new(1.0, 0.0))]).unwrap();
        let d = trace_distance(&ReducedDensityMatrix::product(&e0, 1).unwrap(), &ReducedDensityMatrix::product(&e1, 1).unwrap()).unwrap();
        assert!((d - 2.0).abs() < 1e-13);
        for _ in 0..10 {
            let a = random_phi(g, &mut rng);
            let b = random_phi(g, &mut rng);
            let c = a.inner(&b).norm();
            let pa = ReducedDensityMatrix::product(&a, 1).unwrap();
            let pb = ReducedDensityMatrix::product(&b, 1).unwrap();
            let d = trace_distance(&pa, &pb).unwrap();
            assert!((d - 2.0 * (1.0 - c * c).sqrt()).abs() < 1e-12);
            assert!((d - trace_distance(&pb, &pa).unwrap()).abs() < 1e-13);
            let pc = ReducedDensityMatrix::product(&random_phi(g, &mut rng), 1).unwrap();
            assert!(d <= trace_distance(&pa, &pc).unwrap() + trace_distance(&pc, &pb).unwrap() + 1e-12);
            // rank-one shortcut
            let r = trace_distance_rank_one_shortcut(&pa, &b).unwrap();
            assert!((r.trace_norm - d).abs() < 1e-12);
        }
        let r = trace_distance_rank_one_shortcut(&ReducedDensityMatrix::product(&e1, 1).unwrap(), &e0).unwrap();
        assert!((r.trace_norm - 2.0).abs() < 1e-13 && (r.twice_operator_norm - 2.0).abs() < 1e-13);
        // a mixed γ breaks the single-negative-eigenvalue structure only if
        // the difference has several negative eigenvalues; a projector
        // onto a 2D space minus a rank-one projector inside it does not
        let mixed = ReducedDensityMatrix::product(&e0, 1).unwrap().add(&ReducedDensityMatrix::product(&e1, 1).unwrap()).unwrap();
        let mixed = mixed.scaled(C64::new(0.5, 0.0));
        assert!(trace_distance_rank_one_shortcut(&mixed, &e0).is_ok());
    }

    #[test]
    fn observable_examples() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let phi = random_phi(g, &mut rng);
        let p = ReducedDensityMatrix::product(&phi, 1).unwrap();
        let id = DMatrix::<C64>::identity(4, 4);
        assert!((observable_expectation(&p, &id).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((observable_expectation(&p, p.entries()).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-14);
        for _ in 0..20 {
            let j = random_hermitian(4, &mut rng);
            let gamma = ReducedDensityMatrix::from_raw(g, 1, random_hermitian(4, &mut rng)).unwrap();
            let e = observable_expectation(&gamma, &j).unwrap();
            assert!(e.im.abs() < 1e-12);
            assert!(e.norm() <= operator_norm(&j) * gamma.trace_norm() + 1e-12);
        }
        assert!(observable_expectation(&p, &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn text_export_has_header() {
        let g = Grid::new(1, 2, 1.0).unwrap();
        let phi = LatticeWavefunction::plane_wave(g, &[0]);
        let mut out = Vec::new();
        ReducedDensityMatrix::product(&phi, 1).unwrap().write_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("k 1") && text.contains("side 2"));
        assert_eq!(text.lines().count(), 6 + 4);
    }

    #[test]
    fn shape_mismatch_is_refused() {
        let g = Grid::new(1, 2, 1.0).unwrap();
        let phi = LatticeWavefunction::plane_wave(g, &[0]);
        let a = ReducedDensityMatrix::product(&phi, 1).unwrap();
        let b = ReducedDensityMatrix::product(&phi, 2).unwrap();
        assert!(trace_distance(&a, &b).is_err());
    }
}
