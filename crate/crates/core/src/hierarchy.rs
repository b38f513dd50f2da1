//! BBGKY / infinite-hierarchy machinery on k-body matrices.
//!
//! Free evolution acts slot by slot with the one-body propagator of
//! `h = -Δ + V_ext`, so a k-body conjugation costs `O(k S^{2k+1})` rather
//! than a dense `S^k × S^k` product.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::hartree::Trajectory;
use crate::lattice::{one_body_operator, Grid, PotentialSpec, C64};
use crate::marginals::{k_body_side, ReducedDensityMatrix, MAX_ORDER};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const MINUS_I: C64 = C64 { re: 0.0, im: -1.0 };

/// Marginals `γ⁽¹⁾, ..., γ⁽ᴷ⁾` at one time.
#[derive(Clone, Debug)]
pub struct DensityFamily {
    grid: Grid,
    gammas: Vec<ReducedDensityMatrix>,
}

impl DensityFamily {
    pub fn new(grid: Grid, gammas: Vec<ReducedDensityMatrix>) -> Result<Self> {
        if gammas.is_empty() {
            return config("a density family needs at least one member");
        }
        for (i, g) in gammas.iter().enumerate() {
            grid.check_same(g.grid())?;
            if g.k() != i + 1 {
                return config(format!("family member {i} has order {}", g.k()));
            }
        }
        Ok(DensityFamily { grid, gammas })
    }

    /// `P_φ^{⊗k}` for `k = 1..=k_max`.
    pub fn factorized(phi: &crate::lattice::LatticeWavefunction, k_max: usize) -> Result<Self> {
        let gammas = (1..=k_max).map(|k| ReducedDensityMatrix::product(phi, k)).collect::<Result<Vec<_>>>()?;
        DensityFamily::new(*phi.grid(), gammas)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn k_max(&self) -> usize {
        self.gammas.len()
    }

    pub fn gamma(&self, k: usize) -> &ReducedDensityMatrix {
        &self.gammas[k - 1]
    }

    pub fn gammas(&self) -> &[ReducedDensityMatrix] {
        &self.gammas
    }
}

/// Left-multiplies slot `slot` of a k-body matrix by `u` (rows) or
/// right-multiplies by `u†` (columns).
fn apply_slot(m: &DMatrix<C64>, u: &DMatrix<C64>, s: usize, k: usize, slot: usize, rows: bool) -> DMatrix<C64> {
    let side = m.nrows();
    let stride = s.pow((k - 1 - slot) as u32);
    let mut out = DMatrix::<C64>::zeros(side, side);
    // nalgebra is column-major: process column by column
    out.as_mut_slice().par_chunks_mut(side).enumerate().for_each(|(c, col)| {
        for (r, o) in col.iter_mut().enumerate() {
            let mut acc = ZERO;
            if rows {
                let x = (r / stride) % s;
                let base = r - x * stride;
                for y in 0..s {
                    acc += u[(x, y)] * m[(base + y * stride, c)];
                }
            } else {
                let x = (c / stride) % s;
                let base = c - x * stride;
                for y in 0..s {
                    acc += m[(r, base + y * stride)] * u[(x, y)].conj();
                }
            }
            *o = acc;
        }
    });
    out
}

/// `𝒰⁽ᵏ⁾(t)γ = U^{⊗k} γ (U^{⊗k})*` with `U = e^{-ith}`.
pub struct FreeEvolution {
    grid: Grid,
    eigvecs: DMatrix<C64>,
    eigvals: Vec<f64>,
}

impl FreeEvolution {
    pub fn new(pot: &PotentialSpec) -> Result<Self> {
        let grid = *pot.grid();
        let ext = PotentialSpec::zero(grid).with_external(pot.external_values().to_vec())?;
        let eig = SymmetricEigen::new(one_body_operator(&grid, &ext)?.to_dense());
        Ok(FreeEvolution {
            grid,
            eigvecs: eig.eigenvectors.map(|x| C64::new(x, 0.0)),
            eigvals: eig.eigenvalues.iter().copied().collect(),
        })
    }

    /// One-body propagator `e^{-ith}`.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        let mut scaled = self.eigvecs.clone();
        for (j, e) in self.eigvals.iter().enumerate() {
            let phase = C64::from_polar(1.0, -e * t);
            scaled.column_mut(j).iter_mut().for_each(|z| *z *= phase);
        }
        scaled * self.eigvecs.adjoint()
    }

    pub fn apply_matrix(&self, k: usize, t: f64, m: &DMatrix<C64>) -> DMatrix<C64> {
        if t == 0.0 {
            return m.clone();
        }
        let u = self.propagator(t);
        let s = self.grid.sites();
        let mut out = m.clone();
        for slot in 0..k {
            out = apply_slot(&out, &u, s, k, slot, true);
            out = apply_slot(&out, &u, s, k, slot, false);
        }
        out
    }

    pub fn apply(&self, t: f64, gamma: &ReducedDensityMatrix) -> Result<ReducedDensityMatrix> {
        self.grid.check_same(gamma.grid())?;
        ReducedDensityMatrix::from_raw(self.grid, gamma.k(), self.apply_matrix(gamma.k(), t, gamma.entries()))
    }
}

/// Free evolution of a k-body matrix under `-Δ + V_ext` of `pot`.
pub fn free_evolution(pot: &PotentialSpec, t: f64, gamma: &ReducedDensityMatrix) -> Result<ReducedDensityMatrix> {
    FreeEvolution::new(pot)?.apply(t, gamma)
}

fn tuple_digits(mut idx: usize, s: usize, k: usize) -> [usize; MAX_ORDER + 1] {
    let mut xs = [0usize; MAX_ORDER + 1];
    for slot in (0..k).rev() {
        xs[slot] = idx % s;
        idx /= s;
    }
    xs
}

/// `B⁽ᵏ⁾γ⁽ᵏ⁺¹⁾` with kernel
/// `-i Σ_j Σ_y (V(x_j - y) - V(x'_j - y)) γ((x, y); (x', y))`.
pub fn collision_b(pot: &PotentialSpec, gamma: &ReducedDensityMatrix) -> Result<ReducedDensityMatrix> {
    pot.grid().check_same(gamma.grid())?;
    let kp1 = gamma.k();
    if kp1 < 2 {
        return config("B needs a (k+1)-particle input with k >= 1");
    }
    let k = kp1 - 1;
    let s = pot.grid().sites();
    let side = k_body_side(pot.grid(), k, usize::MAX)?;
    let v = pot.pair_matrix();
    let g = gamma.entries();
    let mut out = DMatrix::<C64>::zeros(side, side);
    out.as_mut_slice().par_chunks_mut(side).enumerate().for_each(|(c, col)| {
        let xc = tuple_digits(c, s, k);
        for (r, o) in col.iter_mut().enumerate() {
            let xr = tuple_digits(r, s, k);
            let mut acc = ZERO;
            for y in 0..s {
                let mut w = 0.0;
                for j in 0..k {
                    w += v[(xr[j], y)] - v[(xc[j], y)];
                }
                if w != 0.0 {
                    acc += g[(r * s + y, c * s + y)] * w;
                }
            }
            *o = acc * MINUS_I;
        }
    });
    ReducedDensityMatrix::from_raw(*pot.grid(), k, out)
}

/// `B⁽ᵏ⁾(P_φ^{⊗(k+1)}) = -i Σ_j (W(x_j) - W(x'_j)) P_φ^{⊗k}` with `W = V⋆|φ|²`.
pub fn collision_b_factorized(pot: &PotentialSpec, phi: &crate::lattice::LatticeWavefunction, k: usize) -> Result<ReducedDensityMatrix> {
    let w = crate::lattice::convolve(pot, &phi.density())?;
    let p = ReducedDensityMatrix::product(phi, k)?;
    let s = pot.grid().sites();
    let side = p.entries().nrows();
    let mut out = p.into_entries();
    for c in 0..side {
        let xc = tuple_digits(c, s, k);
        for r in 0..side {
            let xr = tuple_digits(r, s, k);
            let diff: f64 = (0..k).map(|j| w[xr[j]] - w[xc[j]]).sum();
            out[(r, c)] *= MINUS_I * diff;
        }
    }
    ReducedDensityMatrix::from_raw(*pot.grid(), k, out)
}

/// `A⁽ᵏ⁾γ = -i Σ_{i<j} [V(x_i - x_j), γ]`.
pub fn collision_a(pot: &PotentialSpec, gamma: &ReducedDensityMatrix) -> Result<ReducedDensityMatrix> {
    pot.grid().check_same(gamma.grid())?;
    let k = gamma.k();
    let s = pot.grid().sites();
    let v = pot.pair_matrix();
    let pair_sum = |idx: usize| {
        let xs = tuple_digits(idx, s, k);
        let mut acc = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                acc += v[(xs[i], xs[j])];
            }
        }
        acc
    };
    let diag: Vec<f64> = (0..gamma.entries().nrows()).map(pair_sum).collect();
    let g = gamma.entries();
    let out = DMatrix::from_fn(g.nrows(), g.ncols(), |r, c| g[(r, c)] * (diag[r] - diag[c]) * MINUS_I);
    ReducedDensityMatrix::from_raw(*pot.grid(), k, out)
}

fn check_uniform_nodes(traj: &Trajectory, t: f64) -> Result<f64> {
    let n = traj.samples.len();
    if n < 2 {
        return Err(Error::Insufficient("trajectory needs at least two nodes".into()));
    }
    let dt = traj.samples[1].t - traj.samples[0].t;
    for (i, s) in traj.samples.iter().enumerate() {
        if (s.t - i as f64 * dt).abs() > 1e-9 * dt.max(1e-300) * (i as f64 + 1.0) {
            return Err(Error::Insufficient("trajectory nodes are not uniformly spaced from 0".into()));
        }
    }
    if (traj.samples[n - 1].t - t).abs() > 1e-9 * (1.0 + t) {
        return Err(Error::Insufficient(format!("trajectory ends at {} instead of {t}", traj.samples[n - 1].t)));
    }
    Ok(dt)
}

/// `Tr|γ_t - 𝒰(t)γ_0 - ∫_0^t 𝒰(t-s) B γ⁽ᵏ⁺¹⁾_s ds|` for the factorized family
/// `γ⁽ʲ⁾_s = P_{φ_s}^{⊗j}` of a Hartree trajectory, the integral evaluated by
/// the composite trapezoid rule on the trajectory's uniform nodes.
pub fn infinite_hierarchy_residual(pot: &PotentialSpec, traj: &Trajectory, k: usize, t: f64) -> Result<f64> {
    if k == 0 || k + 1 > MAX_ORDER {
        return config(format!("residual order must be in 1..{MAX_ORDER}"));
    }
    let dt = check_uniform_nodes(traj, t)?;
    let free = FreeEvolution::new(pot)?;
    let n = traj.samples.len();
    let gamma0 = ReducedDensityMatrix::product(&traj.samples[0].phi, k)?;
    let gamma_t = ReducedDensityMatrix::product(&traj.samples[n - 1].phi, k)?;
    let terms: Vec<DMatrix<C64>> = traj
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<DMatrix<C64>> {
            let b = collision_b(pot, &ReducedDensityMatrix::product(&s.phi, k + 1)?)?;
            let w = if i == 0 || i == n - 1 { 0.5 * dt } else { dt };
            Ok(free.apply_matrix(k, t - s.t, b.entries()) * C64::new(w, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut res = gamma_t.entries() - free.apply_matrix(k, t, gamma0.entries());
    for term in &terms {
        res -= term;
    }
    Ok(crate::marginals::trace_norm(&res))
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardReport {
    /// `Tr|γ⁽ᵏ⁾_{n+1}(t) - γ⁽ᵏ⁾_n(t)|` for n = 0, 1, ...
    pub increments: Vec<f64>,
    /// Ratios of successive non-vanishing increments.
    pub ratios: Vec<f64>,
    /// Highest family order carried before the Hartree closure.
    pub k_max: usize,
    /// Set when the iteration ran past the closure depth: from this order on
    /// the increments vanish identically because the closure is exact input.
    pub closure_exhausted_at: Option<usize>,
}

pub struct PicardResult {
    pub family: DensityFamily,
    pub report: PicardReport,
}

/// Picard iteration of `γ⁽ᵏ⁾_t = 𝒰(t)γ⁽ᵏ⁾_0 + ∫_0^t 𝒰(t-s) B γ⁽ᵏ⁺¹⁾_s ds` for
/// `k = 1..=K`, starting from the free solution, on the uniform node grid
/// of `closure`, whose Hartree trajectory supplies `γ⁽ᴷ⁺¹⁾ = P_{φ_s}^{⊗(K+1)}`.
/// Increments are measured on `γ⁽¹⁾` at the final node.
pub fn picard_iterate(
    family0: &DensityFamily,
    pot: &PotentialSpec,
    closure: &Trajectory,
    t: f64,
    order: usize,
) -> Result<PicardResult> {
    if !(t > 0.0) {
        return config("Picard iteration needs t > 0");
    }
    pot.grid().check_same(family0.grid())?;
    let k_max = family0.k_max();
    if k_max + 1 > MAX_ORDER {
        return config(format!("closure order {} exceeds the supported {MAX_ORDER}", k_max + 1));
    }
    let dt = check_uniform_nodes(closure, t)?;
    let free = FreeEvolution::new(pot)?;
    let nodes: Vec<f64> = closure.samples.iter().map(|s| s.t).collect();
    let grid = *family0.grid();

    // current[k-1][i]: iterate of γ⁽ᵏ⁾ at node i
    let free_family = |k: usize| -> Vec<DMatrix<C64>> {
        nodes.par_iter().map(|&s| free.apply_matrix(k, s, family0.gamma(k).entries())).collect()
    };
    let mut current: Vec<Vec<DMatrix<C64>>> = (1..=k_max).map(free_family).collect();
    let closure_b: Vec<DMatrix<C64>> = closure
        .samples
        .par_iter()
        .map(|s| collision_b(pot, &ReducedDensityMatrix::product(&s.phi, k_max + 1)?).map(|b| b.into_entries()))
        .collect::<Result<Vec<_>>>()?;

    let mut increments = Vec::with_capacity(order);
    for _ in 0..order {
        let mut next = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let sources: Vec<DMatrix<C64>> = if k == k_max {
                closure_b.clone()
            } else {
                current[k]
                    .par_iter()
                    .map(|g| {
                        let rho = ReducedDensityMatrix::from_raw(grid, k + 1, g.clone())?;
                        Ok(collision_b(pot, &rho)?.into_entries())
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            // ∫_0^{t_i} 𝒰(t_i - s) f(s) ds = 𝒰(t_i) ∫_0^{t_i} 𝒰(-s) f(s) ds
            let pulled: Vec<DMatrix<C64>> =
                sources.par_iter().zip(&nodes).map(|(f, &s)| free.apply_matrix(k, -s, f)).collect();
            let mut cumulative = Vec::with_capacity(nodes.len());
            let mut acc = DMatrix::<C64>::zeros(pulled[0].nrows(), pulled[0].ncols());
            cumulative.push(acc.clone());
            for i in 1..nodes.len() {
                acc += (&pulled[i - 1] + &pulled[i]) * C64::new(0.5 * dt, 0.0);
                cumulative.push(acc.clone());
            }
            let base = free_family(k);
            let level: Vec<DMatrix<C64>> = cumulative
                .par_iter()
                .zip(&nodes)
                .zip(&base)
                .map(|((c, &s), b)| b + free.apply_matrix(k, s, c))
                .collect();
            next.push(level);
        }
        let last = nodes.len() - 1;
        increments.push(crate::marginals::trace_norm(&(&next[0][last] - &current[0][last])));
        current = next;
    }

    let scale = increments.first().copied().unwrap_or(0.0);
    let vanishing = |d: f64| d <= 1e-13 * scale.max(1e-300) || d == 0.0;
    let ratios = increments
        .windows(2)
        .take_while(|w| !vanishing(w[1]))
        .map(|w| w[1] / w[0])
        .collect();
    let closure_exhausted_at = if order > k_max { Some(k_max) } else { None };
    let last = nodes.len() - 1;
    let gammas = current
        .into_iter()
        .enumerate()
        .map(|(i, mut level)| ReducedDensityMatrix::from_raw(grid, i + 1, level.swap_remove(last)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PicardResult {
        family: DensityFamily::new(grid, gammas)?,
        report: PicardReport { increments, ratios, k_max, closure_exhausted_at },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub trial: usize,
    /// `free`, `A` or `B`
    pub kind: &'static str,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundRow {
    /// Equality rows (`free`) hold to 1e-10 relative; the rest as `≤`.
    pub fn holds(&self) -> bool {
        if self.kind == "free" {
            (self.lhs - self.rhs).abs() <= 1e-10 * (1.0 + self.rhs)
        } else {
            self.lhs <= self.rhs + 1e-10 * (1.0 + self.rhs)
        }
    }
}

fn random_hermitian<R: Rng>(n: usize, rng: &mut R) -> DMatrix<C64> {
    let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// On random Hermitian inputs: `Tr|𝒰(t)γ| = Tr|γ|`, `Tr|Aγ| ≤ k²‖V‖ Tr|γ|`
/// and `Tr|Bγ⁽ᵏ⁺¹⁾| ≤ 2k‖V‖ Tr|γ⁽ᵏ⁺¹⁾|` for every `k` in `orders`.
pub fn collision_bound_trials(pot: &PotentialSpec, orders: &[usize], trials: usize, seed: u64) -> Result<Vec<BoundRow>> {
    let grid = *pot.grid();
    if let Some(&k) = orders.iter().find(|&&k| k == 0 || k + 1 > MAX_ORDER) {
        return config(format!("bound order {k} must lie in 1..{MAX_ORDER}"));
    }
    let free = FreeEvolution::new(pot)?;
    let v = pot.sup_norm();
    let rows: Vec<Vec<BoundRow>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let mut out = Vec::new();
            for &k in orders {
                let side = k_body_side(&grid, k, usize::MAX)?;
                let g = ReducedDensityMatrix::from_raw(grid, k, random_hermitian(side, &mut rng))?;
                let norm = g.trace_norm();
                let t = rng.gen_range(-2.0..2.0);
                out.push(BoundRow { trial, kind: "free", k, lhs: free.apply(t, &g)?.trace_norm(), rhs: norm });
                let a = collision_a(pot, &g)?.trace_norm();
                out.push(BoundRow { trial, kind: "A", k, lhs: a, rhs: (k * k) as f64 * v * norm });
                let side1 = k_body_side(&grid, k + 1, usize::MAX)?;
                let g1 = ReducedDensityMatrix::from_raw(grid, k + 1, random_hermitian(side1, &mut rng))?;
                let b = collision_b(pot, &g1)?.trace_norm();
                out.push(BoundRow { trial, kind: "B", k, lhs: b, rhs: 2.0 * k as f64 * v * g1.trace_norm() });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// `1/(8‖V‖_∞)`.
pub fn contraction_time(pot: &PotentialSpec) -> Result<f64> {
    if pot.sup_norm() == 0.0 {
        return config("contraction time is unbounded for V = 0");
    }
    Ok(1.0 / (8.0 * pot.sup_norm()))
}
