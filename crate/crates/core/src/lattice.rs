//! Periodic lattices, one-body operators and pair potentials.
//!
//! All sums use the counting measure: a lattice "integral" is a plain sum over
//! sites with no spacing weight. Sites are indexed with axis 0 running
//! fastest, so in 3D `index = c0 + m*c1 + m*m*c2`.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

pub type C64 = Complex64;

/// Periodic hypercubic lattice with `m` points per axis and spacing `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    m: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(dim: usize, m: usize, spacing: f64) -> Result<Self> {
        if dim != 1 && dim != 3 {
            return config(format!("grid.dim must be 1 or 3, got {dim}"));
        }
        if m < 2 {
            return config(format!("grid.m must be at least 2, got {m}"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return config(format!("grid.spacing must be positive, got {spacing}"));
        }
        if m.checked_pow(dim as u32).is_none() {
            return config("grid site count overflows");
        }
        Ok(Grid { dim, m, spacing })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn length(&self) -> f64 {
        self.m as f64 * self.spacing
    }

    /// Total number of sites, `m^dim`.
    pub fn sites(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut rest = idx;
        for slot in c.iter_mut().take(self.dim) {
            *slot = rest % self.m;
            rest /= self.m;
        }
        c
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim).rev() {
            idx = idx * self.m + c[a] % self.m;
        }
        idx
    }

    /// Site reached from `idx` by moving `delta` steps along `axis`.
    pub fn shift(&self, idx: usize, axis: usize, delta: isize) -> usize {
        let mut c = self.coords(idx);
        let m = self.m as isize;
        c[axis] = (c[axis] as isize + delta).rem_euclid(m) as usize;
        self.index(c)
    }

    /// Site index of the periodic displacement `x - y`.
    pub fn displacement(&self, x: usize, y: usize) -> usize {
        let (cx, cy) = (self.coords(x), self.coords(y));
        let mut c = [0; 3];
        for a in 0..self.dim {
            c[a] = (cx[a] + self.m - cy[a]) % self.m;
        }
        self.index(c)
    }

    /// Site index of `-r`.
    pub fn negate(&self, r: usize) -> usize {
        let c = self.coords(r);
        let mut out = [0; 3];
        for a in 0..self.dim {
            out[a] = (self.m - c[a]) % self.m;
        }
        self.index(out)
    }

    /// Minimal-image displacement vector of the displacement site `r`, in
    /// physical units. Each component lies in `[-L/2, L/2]`.
    pub fn min_image(&self, r: usize) -> [f64; 3] {
        let c = self.coords(r);
        let mut v = [0.0; 3];
        for a in 0..self.dim {
            let k = c[a] as isize;
            let k = if 2 * k > self.m as isize { k - self.m as isize } else { k };
            v[a] = k as f64 * self.spacing;
        }
        v
    }

    pub fn min_image_norm(&self, r: usize) -> f64 {
        self.min_image(r).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn periodic_distance(&self, x: usize, y: usize) -> f64 {
        self.min_image_norm(self.displacement(x, y))
    }

    /// Forward nearest-neighbor bonds `(x, x + e_a)` for every site and axis.
    /// For `m = 2` both orientations of each pair appear, matching the
    /// three-point stencil where `x + h` and `x - h` coincide.
    pub fn forward_bonds(&self) -> Vec<(usize, usize)> {
        let mut bonds = Vec::with_capacity(self.sites() * self.dim);
        for x in 0..self.sites() {
            for a in 0..self.dim {
                bonds.push((x, self.shift(x, a, 1)));
            }
        }
        bonds
    }

    /// Eigenvalue of the discrete `-Δ` on the plane wave with integer
    /// wave vector `k`.
    pub fn stencil_symbol(&self, k: &[i64]) -> f64 {
        let h2 = self.spacing * self.spacing;
        k.iter()
            .take(self.dim)
            .map(|&ka| 2.0 / h2 * (1.0 - (2.0 * PI * ka as f64 / self.m as f64).cos()))
            .sum()
    }

    /// Largest eigenvalue of the discrete `-Δ`.
    pub fn laplacian_bound(&self) -> f64 {
        4.0 * self.dim as f64 / (self.spacing * self.spacing)
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return config(format!("grid mismatch: {self:?} vs {other:?}"));
        }
        Ok(())
    }
}

/// Complex field on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeWavefunction {
    grid: Grid,
    values: Vec<C64>,
}

impl LatticeWavefunction {
    pub fn new(grid: Grid, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return config(format!(
                "field has {} values, grid has {} sites",
                values.len(),
                grid.sites()
            ));
        }
        Ok(LatticeWavefunction { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        LatticeWavefunction { grid, values: vec![C64::new(0.0, 0.0); grid.sites()] }
    }

    /// Normalized plane wave `exp(2πi k·x / L) / sqrt(S)`.
    pub fn plane_wave(grid: Grid, k: &[i64]) -> Self {
        let s = grid.sites() as f64;
        let values = (0..grid.sites())
            .map(|x| C64::from_polar(1.0 / s.sqrt(), plane_phase(&grid, k, x)))
            .collect();
        LatticeWavefunction { grid, values }
    }

    /// Normalized superposition of plane waves with the given coefficients.
    pub fn from_modes(grid: Grid, modes: &[(Vec<i64>, C64)]) -> Result<Self> {
        let mut values = vec![C64::new(0.0, 0.0); grid.sites()];
        for (k, c) in modes {
            for (x, v) in values.iter_mut().enumerate() {
                *v += c * C64::from_polar(1.0, plane_phase(&grid, k, x));
            }
        }
        LatticeWavefunction::new(grid, values)?.normalized()
    }

    /// Normalized Gaussian packet centered at `center` (physical units) with
    /// integer carrier wave vector `k`.
    pub fn packet(grid: Grid, center: &[f64], width: f64, k: &[i64]) -> Result<Self> {
        if !(width > 0.0) {
            return config("packet width must be positive");
        }
        let l = grid.length();
        let values = (0..grid.sites())
            .map(|x| {
                let c = grid.coords(x);
                let mut r2 = 0.0;
                for a in 0..grid.dim() {
                    let mut d = c[a] as f64 * grid.spacing() - center.get(a).copied().unwrap_or(0.0);
                    d -= l * (d / l).round();
                    r2 += d * d;
                }
                C64::from_polar((-r2 / (2.0 * width * width)).exp(), plane_phase(&grid, k, x))
            })
            .collect();
        LatticeWavefunction::new(grid, values)?.normalized()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self, other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &LatticeWavefunction) -> C64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return config("cannot normalize a zero field");
        }
        self.values.iter_mut().for_each(|v| *v /= n);
        Ok(self)
    }

    pub fn scaled(&self, c: C64) -> Self {
        LatticeWavefunction { grid: self.grid, values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn max_abs_diff(&self, other: &LatticeWavefunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

fn plane_phase(grid: &Grid, k: &[i64], x: usize) -> f64 {
    let c = grid.coords(x);
    (0..grid.dim())
        .map(|a| 2.0 * PI * k.get(a).copied().unwrap_or(0) as f64 * c[a] as f64 / grid.m() as f64)
        .sum()
}

/// Named families of pair potentials, evaluated at the minimal-image distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PairFamily {
    Gaussian { amplitude: f64, width: f64 },
    Box { amplitude: f64, radius: f64 },
    KroneckerDelta { strength: f64 },
}

impl PairFamily {
    fn value(&self, grid: &Grid, r: usize) -> f64 {
        let d = grid.min_image_norm(r);
        match *self {
            PairFamily::Gaussian { amplitude, width } => amplitude * (-d * d / (2.0 * width * width)).exp(),
            PairFamily::Box { amplitude, radius } => {
                if d <= radius + 1e-12 {
                    amplitude
                } else {
                    0.0
                }
            }
            PairFamily::KroneckerDelta { strength } => {
                if r == 0 {
                    strength
                } else {
                    0.0
                }
            }
        }
    }
}

/// Sampled pair potential `V(r)` per displacement site plus external
/// potential per site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    grid: Grid,
    pair_values: Vec<f64>,
    external_values: Vec<f64>,
    sup_norm: f64,
    l1_norm: f64,
}

impl PotentialSpec {
    pub fn new(grid: Grid, pair_values: Vec<f64>, external_values: Vec<f64>) -> Result<Self> {
        let s = grid.sites();
        if pair_values.len() != s || external_values.len() != s {
            return config(format!(
                "potential shape mismatch: pair {} / external {} values for {} sites",
                pair_values.len(),
                external_values.len(),
                s
            ));
        }
        if pair_values.iter().chain(&external_values).any(|v| !v.is_finite()) {
            return config("potential samples must be finite");
        }
        for r in 0..s {
            let (a, b) = (pair_values[r], pair_values[grid.negate(r)]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                return config(format!("pair potential is not even: V({r}) = {a}, V(-{r}) = {b}"));
            }
        }
        let sup_norm = pair_values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let l1_norm = pair_values.iter().map(|v| v.abs()).sum();
        Ok(PotentialSpec { grid, pair_values, external_values, sup_norm, l1_norm })
    }

    pub fn zero(grid: Grid) -> Self {
        let s = grid.sites();
        PotentialSpec {
            grid,
            pair_values: vec![0.0; s],
            external_values: vec![0.0; s],
            sup_norm: 0.0,
            l1_norm: 0.0,
        }
    }

    pub fn from_family(grid: Grid, family: &PairFamily, external_values: Vec<f64>) -> Result<Self> {
        let pair = (0..grid.sites()).map(|r| family.value(&grid, r)).collect();
        PotentialSpec::new(grid, pair, external_values)
    }

    /// Parses a plain-text table of `displacement-index value` lines.
    /// Blank lines and `#` comments are skipped; missing displacements are 0.
    pub fn from_table(grid: Grid, text: &str, external_values: Vec<f64>) -> Result<Self> {
        let mut pair = vec![0.0; grid.sites()];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let bad = || Error::Format(format!("potential table line {}: {line:?}", lineno + 1));
            let idx: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let val: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if idx >= pair.len() || it.next().is_some() {
                return Err(bad());
            }
            pair[idx] = val;
        }
        PotentialSpec::new(grid, pair, external_values)
    }

    /// Random even pair potential with entries uniform in `[-amplitude, amplitude]`.
    pub fn random_even<R: Rng>(grid: Grid, amplitude: f64, rng: &mut R) -> Self {
        let s = grid.sites();
        let mut pair = vec![0.0; s];
        for r in 0..s {
            let nr = grid.negate(r);
            if nr >= r {
                let v = rng.gen_range(-amplitude..=amplitude);
                pair[r] = v;
                pair[nr] = v;
            }
        }
        PotentialSpec::new(grid, pair, vec![0.0; s]).expect("symmetric by construction")
    }

    /// Same shape rescaled so that `‖V‖_∞ = target`.
    pub fn with_sup_norm(&self, target: f64) -> Result<Self> {
        if self.sup_norm == 0.0 {
            return config("cannot rescale a vanishing pair potential");
        }
        let f = target / self.sup_norm;
        PotentialSpec::new(
            self.grid,
            self.pair_values.iter().map(|v| v * f).collect(),
            self.external_values.clone(),
        )
    }

    pub fn with_external(&self, external_values: Vec<f64>) -> Result<Self> {
        PotentialSpec::new(self.grid, self.pair_values.clone(), external_values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn pair_values(&self) -> &[f64] {
        &self.pair_values
    }

    /// `V(x - y)` for sites `x`, `y`.
    pub fn pair(&self, x: usize, y: usize) -> f64 {
        self.pair_values[self.grid.displacement(x, y)]
    }

    pub fn external_values(&self) -> &[f64] {
        &self.external_values
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }

    /// Dense `S x S` table of `V(x - y)`.
    pub fn pair_matrix(&self) -> DMatrix<f64> {
        let s = self.grid.sites();
        DMatrix::from_fn(s, s, |x, y| self.pair(x, y))
    }
}

/// `-Δ + V_ext` with the nearest-neighbor stencil.
#[derive(Clone, Debug)]
pub struct OneBodyOperator {
    grid: Grid,
    external: Vec<f64>,
}

pub fn one_body_operator(grid: &Grid, pot: &PotentialSpec) -> Result<OneBodyOperator> {
    grid.check_same(pot.grid())?;
    Ok(OneBodyOperator { grid: *grid, external: pot.external_values.clone() })
}

impl OneBodyOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn external(&self) -> &[f64] {
        &self.external
    }

    pub fn apply(&self, phi: &LatticeWavefunction) -> Result<LatticeWavefunction> {
        self.grid.check_same(phi.grid())?;
        let mut out = vec![C64::new(0.0, 0.0); self.grid.sites()];
        self.apply_slice(phi.values(), &mut out);
        LatticeWavefunction::new(self.grid, out)
    }

    pub(crate) fn apply_slice(&self, phi: &[C64], out: &mut [C64]) {
        let g = &self.grid;
        let inv_h2 = 1.0 / (g.spacing() * g.spacing());
        for x in 0..g.sites() {
            let mut acc = phi[x] * self.external[x];
            for a in 0..g.dim() {
                let fwd = phi[g.shift(x, a, 1)];
                let bwd = phi[g.shift(x, a, -1)];
                acc += (phi[x] * 2.0 - fwd - bwd) * inv_h2;
            }
            out[x] = acc;
        }
    }

    /// Dense real symmetric matrix of the operator.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let g = &self.grid;
        let s = g.sites();
        let inv_h2 = 1.0 / (g.spacing() * g.spacing());
        let mut h = DMatrix::zeros(s, s);
        for x in 0..s {
            h[(x, x)] += self.external[x];
            for a in 0..g.dim() {
                h[(x, x)] += 2.0 * inv_h2;
                h[(x, g.shift(x, a, 1))] -= inv_h2;
                h[(x, g.shift(x, a, -1))] -= inv_h2;
            }
        }
        h
    }

    /// `⟨φ, (-Δ + V_ext) φ⟩`.
    pub fn expectation(&self, phi: &[C64]) -> f64 {
        let mut out = vec![C64::new(0.0, 0.0); phi.len()];
        self.apply_slice(phi, &mut out);
        phi.iter().zip(&out).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

/// Periodic convolution `(V ⋆ ρ)(x) = Σ_y V(x - y) ρ(y)`.
pub fn convolve(pot: &PotentialSpec, density: &[f64]) -> Result<Vec<f64>> {
    let g = pot.grid();
    if density.len() != g.sites() {
        return config(format!("density has {} values, grid has {} sites", density.len(), g.sites()));
    }
    let s = g.sites();
    let mut out = vec![0.0; s];
    for (x, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (y, &rho) in density.iter().enumerate() {
            if rho != 0.0 {
                acc += pot.pair_values[g.displacement(x, y)] * rho;
            }
        }
        *o = acc;
    }
    Ok(out)
}

/// Which two-particle Sobolev-type quadratic form to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairForm {
    /// `⟨ψ, (1 - Δ₁)(1 - Δ₂) ψ⟩`
    Product,
    /// `⟨ψ, ((∇₁·∇₂)² - Δ₁ - Δ₂ + 1) ψ⟩`
    MixedGradient,
}

impl FromStr for PairForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(PairForm::Product),
            "mixed-gradient" => Ok(PairForm::MixedGradient),
            other => Err(Error::Usage(format!("unknown pair form {other:?}"))),
        }
    }
}

/// Forward difference `(ψ(.., x_p + e_a, ..) - ψ) / h` of a two-particle
/// field stored as `ψ[x1 * S + x2]`.
pub fn pair_forward_diff(grid: &Grid, psi: &[C64], particle: usize, axis: usize) -> Vec<C64> {
    let s = grid.sites();
    let inv_h = 1.0 / grid.spacing();
    let shifted: Vec<usize> = (0..s).map(|x| grid.shift(x, axis, 1)).collect();
    let mut out = vec![C64::new(0.0, 0.0); s * s];
    for x1 in 0..s {
        for x2 in 0..s {
            let from = if particle == 1 { shifted[x1] * s + x2 } else { x1 * s + shifted[x2] };
            out[x1 * s + x2] = (psi[from] - psi[x1 * s + x2]) * inv_h;
        }
    }
    out
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// Evaluates a [`PairForm`] with forward-difference gradients. The value is
/// real and at least `‖ψ‖²`.
pub fn sobolev_pair_form(grid: &Grid, psi: &[C64], form: PairForm) -> Result<f64> {
    let s = grid.sites();
    if psi.len() != s * s {
        return config(format!("two-particle field has {} values, expected {}", psi.len(), s * s));
    }
    let mut total = norm_sqr(psi);
    let d1: Vec<Vec<C64>> = (0..grid.dim()).map(|a| pair_forward_diff(grid, psi, 1, a)).collect();
    for a in 0..grid.dim() {
        total += norm_sqr(&d1[a]);
        total += norm_sqr(&pair_forward_diff(grid, psi, 2, a));
    }
    match form {
        PairForm::Product => {
            for d in &d1 {
                for b in 0..grid.dim() {
                    total += norm_sqr(&pair_forward_diff(grid, d, 2, b));
                }
            }
        }
        PairForm::MixedGradient => {
            let mut dot = vec![C64::new(0.0, 0.0); s * s];
            for (a, d) in d1.iter().enumerate() {
                for (acc, v) in dot.iter_mut().zip(pair_forward_diff(grid, d, 2, a)) {
                    *acc += v;
                }
            }
            total += norm_sqr(&dot);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(2, 4, 1.0).is_err());
        assert!(Grid::new(1, 1, 1.0).is_err());
        assert!(Grid::new(1, 4, 0.0).is_err());
        let g = Grid::new(3, 5, 0.5).unwrap();
        assert_eq!(g.sites(), 125);
        assert_eq!(g.length(), 2.5);
        for x in 0..g.sites() {
            assert_eq!(g.index(g.coords(x)), x);
        }
    }

    #[test]
    fn periodic_distance_is_symmetric_and_bounded() {
        let g = Grid::new(3, 5, 0.7).unwrap();
        for x in (0..g.sites()).step_by(7) {
            for y in 0..g.sites() {
                let d = g.periodic_distance(x, y);
                assert!((d - g.periodic_distance(y, x)).abs() < 1e-14);
                for c in g.min_image(g.displacement(x, y)) {
                    assert!(c.abs() <= g.length() / 2.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_is_in_laplacian_kernel() {
        let g = Grid::new(3, 4, 0.5).unwrap();
        let op = one_body_operator(&g, &PotentialSpec::zero(g)).unwrap();
        let phi = LatticeWavefunction::new(g, vec![C64::new(0.3, -0.2); g.sites()]).unwrap();
        assert!(op.apply(&phi).unwrap().values().iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn plane_wave_eigenvalue() {
        let g = Grid::new(1, 8, 0.5).unwrap();
        let op = one_body_operator(&g, &PotentialSpec::zero(g)).unwrap();
        for k in 0..8 {
            let pw = LatticeWavefunction::plane_wave(g, &[k]);
            let hp = op.apply(&pw).unwrap();
            // (2/h²)(1 - cos(2πk/m)) evaluated on the 3-point stencil
            let expected = 2.0 / 0.25 * (1.0 - (2.0 * PI * k as f64 / 8.0).cos());
            assert!((g.stencil_symbol(&[k]) - expected).abs() < 1e-12);
            for (a, b) in hp.values().iter().zip(pw.values()) {
                assert!((a - b * expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_external_shifts_output() {
        let g = Grid::new(1, 6, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = LatticeWavefunction::new(g, random_field(6, &mut rng)).unwrap();
        let free = one_body_operator(&g, &PotentialSpec::zero(g)).unwrap();
        let pot = PotentialSpec::zero(g).with_external(vec![1.5; 6]).unwrap();
        let shifted = one_body_operator(&g, &pot).unwrap();
        let a = free.apply(&phi).unwrap();
        let b = shifted.apply(&phi).unwrap();
        for i in 0..6 {
            assert!((b.values()[i] - a.values()[i] - phi.values()[i] * 1.5).norm() < 1e-13);
        }
    }

    #[test]
    fn one_body_is_hermitian_with_bounded_spectrum() {
        let g = Grid::new(3, 3, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ext: Vec<f64> = (0..g.sites()).map(|_| rng.gen_range(-0.5..2.0)).collect();
        let pot = PotentialSpec::zero(g).with_external(ext.clone()).unwrap();
        let op = one_body_operator(&g, &pot).unwrap();
        for _ in 0..5 {
            let phi = LatticeWavefunction::new(g, random_field(g.sites(), &mut rng)).unwrap();
            let chi = LatticeWavefunction::new(g, random_field(g.sites(), &mut rng)).unwrap();
            let lhs = phi.inner(&op.apply(&chi).unwrap());
            let rhs = chi.inner(&op.apply(&phi).unwrap()).conj();
            assert!((lhs - rhs).norm() < 1e-12);
        }
        let eig = op.to_dense().symmetric_eigen();
        let lo = ext.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ext.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + g.laplacian_bound();
        assert!(eig.eigenvalues.iter().all(|&l| l >= lo - 1e-12 && l <= hi + 1e-12));
    }

    #[test]
    fn potential_must_be_even() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        assert!(PotentialSpec::new(g, vec![1.0, 0.5, 0.0, 0.2], vec![0.0; 4]).is_err());
        let p = PotentialSpec::new(g, vec![1.0, -0.5, 0.0, -0.5], vec![0.0; 4]).unwrap();
        assert_eq!(p.sup_norm(), 1.0);
        assert_eq!(p.l1_norm(), 2.0);
        assert!(PotentialSpec::new(g, vec![1.0; 3], vec![0.0; 4]).is_err());
    }

    #[test]
    fn families_and_table() {
        let g = Grid::new(3, 4, 1.0).unwrap();
        let gauss = PotentialSpec::from_family(
            g,
            &PairFamily::Gaussian { amplitude: 2.0, width: 1.0 },
            vec![0.0; g.sites()],
        )
        .unwrap();
        assert_eq!(gauss.sup_norm(), 2.0);
        let delta =
            PotentialSpec::from_family(g, &PairFamily::KroneckerDelta { strength: 0.7 }, vec![0.0; g.sites()])
                .unwrap();
        assert_eq!(delta.l1_norm(), 0.7);
        let g1 = Grid::new(1, 6, 1.0).unwrap();
        let table = "# displacement value\n0 1.0\n1 0.25\n5 0.25\n";
        let p = PotentialSpec::from_table(g1, table, vec![0.0; 6]).unwrap();
        assert_eq!(p.pair_values(), &[1.0, 0.25, 0.0, 0.0, 0.0, 0.25]);
        assert!(PotentialSpec::from_table(g1, "0 1.0\n1 0.3\n", vec![0.0; 6]).is_err());
        assert!(PotentialSpec::from_table(g1, "zero one\n", vec![0.0; 6]).is_err());
    }

    #[test]
    fn convolve_point_mass_and_delta() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pot = PotentialSpec::random_even(g, 1.0, &mut rng);
        let mut rho = vec![0.0; 8];
        rho[3] = 1.0;
        let out = convolve(&pot, &rho).unwrap();
        for x in 0..8 {
            assert!((out[x] - pot.pair(x, 3)).abs() < 1e-15);
        }
        let delta = PotentialSpec::from_family(g, &PairFamily::KroneckerDelta { strength: 2.5 }, vec![0.0; 8])
            .unwrap();
        let rho: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = convolve(&delta, &rho).unwrap();
        for x in 0..8 {
            assert!((out[x] - 2.5 * rho[x]).abs() < 1e-15);
        }
    }

    #[test]
    fn convolve_matches_double_loop() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pot = PotentialSpec::random_even(g, 1.0, &mut rng);
        let rho: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let out = convolve(&pot, &rho).unwrap();
        for x in 0..8i64 {
            let mut acc = 0.0;
            for y in 0..8i64 {
                acc += pot.pair_values()[(x - y).rem_euclid(8) as usize] * rho[y as usize];
            }
            assert!((out[x as usize] - acc).abs() < 1e-12);
            assert!(out[x as usize].abs() <= pot.sup_norm() * rho.iter().sum::<f64>() + 1e-12);
        }
        let sigma: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let lhs: f64 = out.iter().zip(&sigma).map(|(a, b)| a * b).sum();
        let rhs: f64 = rho.iter().zip(convolve(&pot, &sigma).unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(convolve(&pot, &[1.0; 3]).is_err());
    }

    #[test]
    fn pair_form_tags() {
        assert_eq!("product".parse::<PairForm>().unwrap(), PairForm::Product);
        assert!(matches!("laplace".parse::<PairForm>(), Err(Error::Usage(_))));
    }

    #[test]
    fn pair_form_of_constant_is_norm() {
        let g = Grid::new(3, 3, 1.0).unwrap();
        let psi = vec![C64::new(0.2, 0.1); g.sites() * g.sites()];
        let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        for form in [PairForm::Product, PairForm::MixedGradient] {
            assert!((sobolev_pair_form(&g, &psi, form).unwrap() - n).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_form_plane_wave_symbols() {
        let g = Grid::new(1, 6, 0.5).unwrap();
        let s = g.sites();
        for (k1, k2) in [(1i64, 2i64), (0, 3), (5, 5)] {
            let p1 = LatticeWavefunction::plane_wave(g, &[k1]);
            let p2 = LatticeWavefunction::plane_wave(g, &[k2]);
            let psi: Vec<C64> =
                (0..s * s).map(|i| p1.values()[i / s] * p2.values()[i % s]).collect();
            let (w1, w2) = (g.stencil_symbol(&[k1]), g.stencil_symbol(&[k2]));
            let prod = sobolev_pair_form(&g, &psi, PairForm::Product).unwrap();
            assert!((prod - (1.0 + w1) * (1.0 + w2)).abs() < 1e-10);
            // in 1D |d(k1) d(k2)|² = ω(k1) ω(k2)
            let mixed = sobolev_pair_form(&g, &psi, PairForm::MixedGradient).unwrap();
            assert!((mixed - (1.0 + w1 + w2 + w1 * w2)).abs() < 1e-10);
        }
    }

    /// Dense-matrix oracle: assemble each difference operator explicitly.
    fn dense_form(g: &Grid, psi: &[C64], form: PairForm) -> f64 {
        let s = g.sites();
        let n = s * s;
        let diff = |particle: usize, axis: usize| -> DMatrix<C64> {
            let mut d = DMatrix::zeros(n, n);
            for x1 in 0..s {
                for x2 in 0..s {
                    let row = x1 * s + x2;
                    let col = if particle == 1 {
                        g.shift(x1, axis, 1) * s + x2
                    } else {
                        x1 * s + g.shift(x2, axis, 1)
                    };
                    d[(row, col)] += C64::new(1.0 / g.spacing(), 0.0);
                    d[(row, row)] -= C64::new(1.0 / g.spacing(), 0.0);
                }
            }
            d
        };
        let mut a = DMatrix::<C64>::identity(n, n);
        for ax in 0..g.dim() {
            let (d1, d2) = (diff(1, ax), diff(2, ax));
            a += d1.adjoint() * &d1 + d2.adjoint() * &d2;
        }
        match form {
            PairForm::Product => {
                for ax in 0..g.dim() {
                    for bx in 0..g.dim() {
                        let t = diff(1, ax) * diff(2, bx);
                        a += t.adjoint() * t;
                    }
                }
            }
            PairForm::MixedGradient => {
                let mut t = DMatrix::<C64>::zeros(n, n);
                for ax in 0..g.dim() {
                    t += diff(1, ax) * diff(2, ax);
                }
                a += t.adjoint() * t;
            }
        }
        let v = nalgebra::DVector::from_column_slice(psi);
        (v.adjoint() * a * v)[(0, 0)].re
    }

    #[test]
    fn pair_form_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for g in [Grid::new(1, 4, 0.7).unwrap(), Grid::new(3, 2, 1.3).unwrap()] {
            let n = g.sites() * g.sites();
            let psi = random_field(n, &mut rng);
            let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
            for form in [PairForm::Product, PairForm::MixedGradient] {
                let fast = sobolev_pair_form(&g, &psi, form).unwrap();
                let dense = dense_form(&g, &psi, form);
                assert!((fast - dense).abs() < 1e-10 * dense.abs(), "{fast} vs {dense}");
                assert!(fast >= norm);
            }
        }
    }
}
