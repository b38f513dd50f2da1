//! Bosonic Fock space over lattice modes.
//!
//! States are occupation vectors `(n_x)_x`. Within a fixed particle number
//! they are enumerated in descending lexicographic order; a cutoff basis
//! concatenates the sectors `n = 0, 1, ..., n_max` in that order. The rank
//! of an occupation vector is computed combinatorially, so no hash map is
//! needed to locate matrix elements.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::lattice::{Grid, LatticeWavefunction, PotentialSpec, C64};
use crate::propagate::{evolve, EvolveOptions, HermitianOperator};

/// Tag written into snapshots and manifests; bump when the order changes.
pub const ENUMERATION_VERSION: &str = "graded-desc-lex-v1";

/// Largest basis we are willing to enumerate.
pub const MAX_BASIS_DIM: usize = 40_000_000;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sector {
    FixedN(usize),
    Cutoff(usize),
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sector::FixedN(n) => write!(f, "fixed {n}"),
            Sector::Cutoff(n) => write!(f, "cutoff {n}"),
        }
    }
}

/// Occupation cutoff used for coherent states of mean particle number `mean`:
/// `ceil(N + 8 sqrt(N) + 8)`.
pub fn coherent_cutoff(mean: f64) -> usize {
    (mean + 8.0 * mean.sqrt() + 8.0).ceil() as usize
}

/// Number of occupation vectors of `modes` modes with total `sum`.
fn compositions(modes: usize, sum: usize) -> Option<usize> {
    if modes == 0 {
        return Some(usize::from(sum == 0));
    }
    // C(sum + modes - 1, modes - 1)
    let k = (modes - 1).min(sum) as u128;
    let n = (sum + modes - 1) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    usize::try_from(acc).ok()
}

#[derive(Debug, PartialEq)]
pub struct FockBasis {
    grid: Grid,
    sector: Sector,
    modes: usize,
    occ: Vec<u8>,
    /// `offsets[n - n_lo]` is the first index with `n` particles.
    offsets: Vec<usize>,
    n_lo: usize,
    n_hi: usize,
    /// `cum[k][s] = Σ_{j ≤ s} compositions(k, j)`.
    cum: Vec<Vec<usize>>,
}

impl FockBasis {
    /// Dimension of the basis without building it; `None` on overflow.
    pub fn count(modes: usize, sector: Sector) -> Option<usize> {
        let (n_lo, n_hi) = match sector {
            Sector::FixedN(n) => (n, n),
            Sector::Cutoff(n) => (0, n),
        };
        (n_lo..=n_hi).try_fold(0usize, |acc, n| compositions(modes, n).and_then(|c| acc.checked_add(c)))
    }

    pub fn new(grid: Grid, sector: Sector) -> Result<Arc<Self>> {
        let modes = grid.sites();
        let (n_lo, n_hi) = match sector {
            Sector::FixedN(n) => (n, n),
            Sector::Cutoff(n) => (0, n),
        };
        if n_hi > u8::MAX as usize {
            return config(format!("occupations above {} are not supported", u8::MAX));
        }
        let dim = Self::count(modes, sector)
            .filter(|&d| d <= MAX_BASIS_DIM)
            .ok_or_else(|| Error::Budget(format!("Fock basis {sector} on {modes} modes is too large")))?;
        let mut cum = vec![vec![0usize; n_hi + 1]; modes + 1];
        for (k, row) in cum.iter_mut().enumerate() {
            let mut acc = 0usize;
            for (s, slot) in row.iter_mut().enumerate() {
                acc = acc.saturating_add(compositions(k, s).unwrap_or(usize::MAX));
                *slot = acc;
            }
        }
        let mut occ = Vec::with_capacity(dim * modes);
        let mut offsets = Vec::with_capacity(n_hi - n_lo + 2);
        let mut buf = vec![0u8; modes];
        for n in n_lo..=n_hi {
            offsets.push(occ.len() / modes.max(1));
            push_sector(&mut buf, 0, n, &mut occ);
        }
        offsets.push(dim);
        Ok(Arc::new(FockBasis { grid, sector, modes, occ, offsets, n_lo, n_hi, cum }))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sector(&self) -> Sector {
        self.sector
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn min_particles(&self) -> usize {
        self.n_lo
    }

    pub fn max_particles(&self) -> usize {
        self.n_hi
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.occ[i * self.modes..(i + 1) * self.modes]
    }

    /// Index range of the states holding exactly `n` particles.
    pub fn sector_range(&self, n: usize) -> Range<usize> {
        if n < self.n_lo || n > self.n_hi {
            return 0..0;
        }
        self.offsets[n - self.n_lo]..self.offsets[n - self.n_lo + 1]
    }

    pub fn particles_at(&self, i: usize) -> usize {
        // offsets is sorted; partition_point gives the sector
        self.n_lo + self.offsets.partition_point(|&o| o <= i) - 1
    }

    fn rank_in_sector(&self, v: &[u8], n: usize) -> usize {
        let m = self.modes;
        let mut rank = 0;
        let mut rem = n;
        for (i, &vi) in v.iter().enumerate().take(m.saturating_sub(1)) {
            let vi = vi as usize;
            if vi < rem {
                rank += self.cum[m - i - 1][rem - vi - 1];
            }
            rem -= vi;
        }
        rank
    }

    /// Index of an occupation vector, if it belongs to the basis.
    pub fn index_of(&self, v: &[u8]) -> Option<usize> {
        if v.len() != self.modes {
            return None;
        }
        let n: usize = v.iter().map(|&x| x as usize).sum();
        if n < self.n_lo || n > self.n_hi {
            return None;
        }
        Some(self.offsets[n - self.n_lo] + self.rank_in_sector(v, n))
    }

    fn same_shape(&self, other: &FockBasis) -> bool {
        self.grid == other.grid && self.sector == other.sector
    }
}

fn push_sector(buf: &mut [u8], i: usize, rem: usize, out: &mut Vec<u8>) {
    if buf.is_empty() {
        return;
    }
    if i + 1 == buf.len() {
        buf[i] = rem as u8;
        out.extend_from_slice(buf);
        return;
    }
    for a in (0..=rem).rev() {
        buf[i] = a as u8;
        push_sector(buf, i + 1, rem - a, out);
    }
}

/// Complex amplitudes over a [`FockBasis`].
#[derive(Clone, Debug)]
pub struct FockVector {
    basis: Arc<FockBasis>,
    coeffs: Vec<C64>,
}

/// A result together with the norm it could not represent.
#[derive(Clone, Debug)]
pub struct Truncated<T> {
    pub value: T,
    pub leaked: f64,
}

impl FockVector {
    pub fn new(basis: Arc<FockBasis>, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return config(format!("{} coefficients for a basis of dimension {}", coeffs.len(), basis.dim()));
        }
        Ok(FockVector { basis, coeffs })
    }

    pub fn zeros(basis: Arc<FockBasis>) -> Self {
        let dim = basis.dim();
        FockVector { basis, coeffs: vec![ZERO; dim] }
    }

    /// The vacuum `Ω`; requires a basis containing the zero-particle state.
    pub fn vacuum(basis: Arc<FockBasis>) -> Result<Self> {
        if basis.min_particles() != 0 {
            return config("vacuum needs a basis containing n = 0");
        }
        let mut v = FockVector::zeros(basis);
        v.coeffs[0] = C64::new(1.0, 0.0);
        Ok(v)
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &FockVector) -> Result<C64> {
        self.check_basis(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn scaled(&self, c: C64) -> FockVector {
        FockVector { basis: self.basis.clone(), coeffs: self.coeffs.iter().map(|x| x * c).collect() }
    }

    /// `self + c * other`
    pub fn add_scaled(&self, c: C64, other: &FockVector) -> Result<FockVector> {
        self.check_basis(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b * c).collect();
        Ok(FockVector { basis: self.basis.clone(), coeffs })
    }

    pub fn distance(&self, other: &FockVector) -> Result<f64> {
        self.check_basis(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
    }

    /// Probability weight per particle number, indexed from `min_particles`.
    pub fn sector_weights(&self) -> Vec<f64> {
        (self.basis.min_particles()..=self.basis.max_particles())
            .map(|n| self.coeffs[self.basis.sector_range(n)].iter().map(|c| c.norm_sqr()).sum())
            .collect()
    }

    /// Weight carried by the highest representable particle number of a
    /// cutoff basis (zero for fixed-number bases).
    pub fn top_sector_weight(&self) -> f64 {
        match self.basis.sector() {
            Sector::FixedN(_) => 0.0,
            Sector::Cutoff(n) => self.coeffs[self.basis.sector_range(n)].iter().map(|c| c.norm_sqr()).sum(),
        }
    }

    /// Copies the amplitudes into a basis containing every state of this one.
    pub fn embed(&self, target: &Arc<FockBasis>) -> Result<FockVector> {
        self.basis.grid().check_same(target.grid())?;
        let mut out = vec![C64::new(0.0, 0.0); target.dim()];
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c == C64::new(0.0, 0.0) {
                continue;
            }
            match target.index_of(self.basis.state(i)) {
                Some(j) => out[j] = *c,
                None => return config("target basis does not contain the source basis"),
            }
        }
        FockVector::new(target.clone(), out)
    }

    fn check_basis(&self, other: &FockVector) -> Result<()> {
        if Arc::ptr_eq(&self.basis, &other.basis) || self.basis.same_shape(&other.basis) {
            Ok(())
        } else {
            config("Fock vectors live on different bases")
        }
    }

    /// Writes the plain-text snapshot format.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let g = self.basis.grid();
        writeln!(w, "# fock-vector v1")?;
        writeln!(w, "dim {}", g.dim())?;
        writeln!(w, "m {}", g.m())?;
        writeln!(w, "spacing {}", g.spacing())?;
        writeln!(w, "sector {}", self.basis.sector())?;
        writeln!(w, "enumeration {ENUMERATION_VERSION}")?;
        writeln!(w, "len {}", self.coeffs.len())?;
        for c in &self.coeffs {
            writeln!(w, "{} {}", c.re, c.im)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<FockVector> {
        let mut lines = r.lines();
        let mut next = |key: &str| -> Result<String> {
            loop {
                let line = lines.next().ok_or_else(|| Error::Format(format!("missing {key}")))??;
                let line = line.trim().to_string();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                if key.is_empty() {
                    return Ok(line);
                }
                return line
                    .strip_prefix(key)
                    .map(|s| s.trim().to_string())
                    .ok_or_else(|| Error::Format(format!("expected {key:?}, found {line:?}")));
            }
        };
        let num = |s: String| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))) };
        let dim = num(next("dim")?)? as usize;
        let m = num(next("m")?)? as usize;
        let spacing = num(next("spacing")?)?;
        let sector_line = next("sector")?;
        let mut parts = sector_line.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let n: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad sector {sector_line:?}")))?;
        let sector = match kind {
            "fixed" => Sector::FixedN(n),
            "cutoff" => Sector::Cutoff(n),
            _ => return Err(Error::Format(format!("bad sector {sector_line:?}"))),
        };
        let version = next("enumeration")?;
        if version != ENUMERATION_VERSION {
            return Err(Error::Format(format!("unsupported enumeration {version:?}")));
        }
        let len = num(next("len")?)? as usize;
        let basis = FockBasis::new(Grid::new(dim, m, spacing)?, sector)?;
        if len != basis.dim() {
            return Err(Error::Format(format!("len {len} does not match basis dimension {}", basis.dim())));
        }
        let mut coeffs = Vec::with_capacity(len);
        for _ in 0..len {
            let line = next("")?;
            let mut it = line.split_whitespace();
            let re = num(it.next().unwrap_or("").to_string())?;
            let im = num(it.next().unwrap_or("").to_string())?;
            coeffs.push(C64::new(re, im));
        }
        FockVector::new(basis, coeffs)
    }
}

fn check_field(basis: &FockBasis, f: &LatticeWavefunction) -> Result<()> {
    basis.grid().check_same(f.grid())
}

/// `a*(f) ψ` on a cutoff basis. The part that would be pushed above `n_max`
/// is dropped and its norm reported in `leaked`.
pub fn apply_create(f: &LatticeWavefunction, psi: &FockVector) -> Result<Truncated<FockVector>> {
    let basis = psi.basis();
    check_field(basis, f)?;
    let n_max = match basis.sector() {
        Sector::FixedN(n) => {
            return config(format!("a*(f) maps the fixed-N({n}) sector out of its basis"));
        }
        Sector::Cutoff(n) => n,
    };
    let value = FockVector { basis: basis.clone(), coeffs: create_raw(f.values(), basis, psi.coeffs()) };
    // ‖a*(f)χ‖² = ‖a(f)χ‖² + ‖f‖²‖χ‖² for the top-sector part χ
    let mut top = FockVector::zeros(basis.clone());
    let range = basis.sector_range(n_max);
    top.coeffs[range.clone()].copy_from_slice(&psi.coeffs[range]);
    let lowered = annihilate_raw(f.values(), basis, basis, top.coeffs());
    let lowered_sq: f64 = lowered.iter().map(|c| c.norm_sqr()).sum();
    let leaked = (lowered_sq + f.norm_sqr() * top.norm_sqr()).sqrt();
    Ok(Truncated { value, leaked })
}

fn create_raw(f: &[C64], basis: &FockBasis, input: &[C64]) -> Vec<C64> {
    let modes = basis.modes();
    let mut out = vec![ZERO; basis.dim()];
    out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
        let mut buf = vec![0u8; modes];
        for (off, o) in chunk.iter_mut().enumerate() {
            let s = c * 4096 + off;
            buf.copy_from_slice(basis.state(s));
            let mut acc = ZERO;
            for x in 0..modes {
                let nx = buf[x];
                if nx == 0 || f[x] == ZERO {
                    continue;
                }
                buf[x] -= 1;
                if let Some(j) = basis.index_of(&buf) {
                    acc += f[x] * input[j] * (nx as f64).sqrt();
                }
                buf[x] += 1;
            }
            *o = acc;
        }
    });
    out
}

/// `out[t] = Σ_x conj f(x) ⟨t| a_x |s⟩ input[s]` with `t` ranging over `target`.
fn annihilate_raw(f: &[C64], source: &FockBasis, target: &FockBasis, input: &[C64]) -> Vec<C64> {
    let modes = source.modes();
    let mut out = vec![ZERO; target.dim()];
    out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
        let mut buf = vec![0u8; modes];
        for (off, o) in chunk.iter_mut().enumerate() {
            let t = c * 4096 + off;
            buf.copy_from_slice(target.state(t));
            let mut acc = ZERO;
            for x in 0..modes {
                if f[x] == ZERO || buf[x] == u8::MAX {
                    continue;
                }
                buf[x] += 1;
                if let Some(j) = source.index_of(&buf) {
                    acc += f[x].conj() * input[j] * (buf[x] as f64).sqrt();
                }
                buf[x] -= 1;
            }
            *o = acc;
        }
    });
    out
}

/// `a(f) ψ`. On a fixed-N(n) basis the result lives on fixed-N(n - 1).
pub fn apply_annihilate(f: &LatticeWavefunction, psi: &FockVector) -> Result<FockVector> {
    let basis = psi.basis();
    check_field(basis, f)?;
    let target = match basis.sector() {
        Sector::FixedN(n) if n > 0 => FockBasis::new(*basis.grid(), Sector::FixedN(n - 1))?,
        _ => basis.clone(),
    };
    if basis.sector() == Sector::FixedN(0) {
        return Ok(FockVector::zeros(target));
    }
    let coeffs = annihilate_raw(f.values(), basis, &target, psi.coeffs());
    FockVector::new(target, coeffs)
}

/// `a_x ψ` for a single site, on the same basis (cutoff) or one particle down.
pub fn apply_annihilate_site(x: usize, psi: &FockVector) -> Result<FockVector> {
    let grid = *psi.basis().grid();
    let mut f = LatticeWavefunction::zeros(grid);
    f.values_mut()[x] = C64::new(1.0, 0.0);
    apply_annihilate(&f, psi)
}

/// `⟨ψ, a_x ψ⟩ / ‖ψ‖²` for every site, in one pass over the basis.
pub fn annihilation_expectations(psi: &FockVector) -> Vec<C64> {
    let basis = psi.basis();
    let modes = basis.modes();
    let c = psi.coeffs();
    let norm = psi.norm_sqr();
    const CHUNK: usize = 8192;
    let partials: Vec<Vec<C64>> = (0..basis.dim().div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let mut acc = vec![ZERO; modes];
            let mut buf = vec![0u8; modes];
            for t in k * CHUNK..((k + 1) * CHUNK).min(basis.dim()) {
                if c[t] == ZERO {
                    continue;
                }
                buf.copy_from_slice(basis.state(t));
                for x in 0..modes {
                    buf[x] += 1;
                    if let Some(j) = basis.index_of(&buf) {
                        acc[x] += c[t].conj() * c[j] * (buf[x] as f64).sqrt();
                    }
                    buf[x] -= 1;
                }
            }
            acc
        })
        .collect();
    let mut out = vec![ZERO; modes];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.into_iter().map(|v| v / norm).collect()
}

pub fn apply_number(psi: &FockVector) -> FockVector {
    let basis = psi.basis();
    let coeffs = psi
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| c * basis.particles_at(i) as f64)
        .collect();
    FockVector { basis: basis.clone(), coeffs }
}

/// `⟨ψ, 𝒩^j ψ⟩ / ‖ψ‖²`.
pub fn number_moment(psi: &FockVector, j: u32) -> f64 {
    let basis = psi.basis();
    let mut num = 0.0;
    let mut den = 0.0;
    for n in basis.min_particles()..=basis.max_particles() {
        let w: f64 = psi.coeffs()[basis.sector_range(n)].iter().map(|c| c.norm_sqr()).sum();
        num += w * (n as f64).powi(j as i32);
        den += w;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Second-quantized mean-field Hamiltonian
/// `-(1/h²) Σ_<x,y> (a*_x a_y + h.c.) + Σ_x (2d/h² + V_ext(x)) n_x
///  + (1/2N) Σ_{x,y} V(x-y) (n_x n_y - δ_xy n_x)`,
/// applied matrix-free.
#[derive(Debug)]
pub struct ManyBodyHamiltonian {
    basis: Arc<FockBasis>,
    pot: PotentialSpec,
    n_param: f64,
    hop: f64,
    bonds: Vec<(usize, usize)>,
    diag: Vec<f64>,
}

impl ManyBodyHamiltonian {
    /// `n_param` is the `N` of the `1/N` coupling; it defaults to the sector's
    /// particle number on fixed-N bases and is required on cutoff bases.
    pub fn new(basis: Arc<FockBasis>, pot: PotentialSpec, n_param: Option<f64>) -> Result<Self> {
        basis.grid().check_same(pot.grid())?;
        let n_param = match (n_param, basis.sector()) {
            (Some(n), _) => n,
            (None, Sector::FixedN(n)) => n.max(1) as f64,
            (None, Sector::Cutoff(_)) => return config("cutoff bases need an explicit mean-field N"),
        };
        if !(n_param > 0.0 && n_param.is_finite()) {
            return config(format!("mean-field N must be positive, got {n_param}"));
        }
        let grid = *basis.grid();
        let hop = 1.0 / (grid.spacing() * grid.spacing());
        let onsite: Vec<f64> =
            pot.external_values().iter().map(|v| v + 2.0 * grid.dim() as f64 * hop).collect();
        let pair = pot.pair_matrix();
        let coupling = 1.0 / (2.0 * n_param);
        let mut diag = vec![0.0; basis.dim()];
        diag.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
            let mut occupied: Vec<(usize, f64)> = Vec::new();
            for (off, d) in chunk.iter_mut().enumerate() {
                let s = basis.state(c * 4096 + off);
                occupied.clear();
                occupied.extend(s.iter().enumerate().filter(|(_, &n)| n > 0).map(|(x, &n)| (x, n as f64)));
                let mut e = 0.0;
                for &(x, nx) in &occupied {
                    e += onsite[x] * nx;
                    for &(y, ny) in &occupied {
                        let nn = if x == y { nx * (nx - 1.0) } else { nx * ny };
                        e += coupling * pair[(x, y)] * nn;
                    }
                }
                *d = e;
            }
        });
        Ok(ManyBodyHamiltonian { bonds: grid.forward_bonds(), basis, pot, n_param, hop, diag })
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.pot
    }

    pub fn n_param(&self) -> f64 {
        self.n_param
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Restriction to the states with exactly `n` particles.
    pub fn sector_block(&self, n: usize) -> SectorBlock<'_> {
        SectorBlock { ham: self, range: self.basis.sector_range(n) }
    }

    pub fn apply_state(&self, psi: &FockVector) -> Result<FockVector> {
        if !self.basis.same_shape(psi.basis()) {
            return config("state and Hamiltonian live on different bases");
        }
        let mut out = vec![ZERO; self.basis.dim()];
        self.apply_range(0..self.basis.dim(), psi.coeffs(), &mut out);
        FockVector::new(psi.basis().clone(), out)
    }

    /// `⟨ψ, Hψ⟩ / ‖ψ‖²`.
    pub fn energy(&self, psi: &FockVector) -> Result<f64> {
        let hpsi = self.apply_state(psi)?;
        Ok(psi.inner(&hpsi)?.re / psi.norm_sqr())
    }

    /// Pull-form matvec over the contiguous index window `range`; `input`
    /// and `output` are indexed relative to `range.start`. Every hop stays
    /// within its particle-number sector, so a sector window is closed.
    fn apply_range(&self, range: Range<usize>, input: &[C64], output: &mut [C64]) {
        let basis = &self.basis;
        let lo = range.start;
        let modes = basis.modes();
        const CHUNK: usize = 2048;
        output.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let mut buf = vec![0u8; modes];
            for (off, o) in chunk.iter_mut().enumerate() {
                let s = lo + c * CHUNK + off;
                buf.copy_from_slice(basis.state(s));
                let mut acc = input[s - lo] * self.diag[s];
                for &(x, y) in &self.bonds {
                    for (from, to) in [(x, y), (y, x)] {
                        // ⟨s| a*_from a_to |s'⟩ with s' = s - e_from + e_to
                        let nf = buf[from];
                        if nf == 0 {
                            continue;
                        }
                        let nt = buf[to];
                        buf[from] -= 1;
                        buf[to] += 1;
                        if let Some(j) = basis.index_of(&buf) {
                            let amp = ((nf as f64) * (nt as f64 + 1.0)).sqrt();
                            acc -= input[j - lo] * (self.hop * amp);
                        }
                        buf[from] += 1;
                        buf[to] -= 1;
                    }
                }
                *o = acc;
            }
        });
    }
}

impl HermitianOperator for ManyBodyHamiltonian {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, input: &[C64], output: &mut [C64]) {
        self.apply_range(0..self.basis.dim(), input, output)
    }
}

/// A fixed-particle-number block of a [`ManyBodyHamiltonian`].
pub struct SectorBlock<'a> {
    ham: &'a ManyBodyHamiltonian,
    range: Range<usize>,
}

impl SectorBlock<'_> {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }
}

impl HermitianOperator for SectorBlock<'_> {
    fn dim(&self) -> usize {
        self.range.len()
    }

    fn apply(&self, input: &[C64], output: &mut [C64]) {
        self.ham.apply_range(self.range.clone(), input, output)
    }
}

pub fn apply_hamiltonian(h: &ManyBodyHamiltonian, psi: &FockVector) -> Result<FockVector> {
    h.apply_state(psi)
}

/// Truncated `i(a*(f) - a(f))`; its unitary group at time 1 is `W(f)`.
pub struct WeylGenerator<'a> {
    basis: &'a FockBasis,
    f: Vec<C64>,
}

impl HermitianOperator for WeylGenerator<'_> {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, input: &[C64], output: &mut [C64]) {
        let up = create_raw(&self.f, self.basis, input);
        let down = annihilate_raw(&self.f, self.basis, self.basis, input);
        for ((o, u), d) in output.iter_mut().zip(up).zip(down) {
            *o = C64::new(0.0, 1.0) * (u - d);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WeylOptions {
    /// Krylov residual target.
    pub tol: f64,
    /// Largest tolerated top-sector weight of the result.
    pub leak_tol: f64,
}

impl Default for WeylOptions {
    fn default() -> Self {
        WeylOptions { tol: 1e-12, leak_tol: 1e-8 }
    }
}

/// `W(f) ψ = exp(a*(f) - a(f)) ψ` on a cutoff basis. `leaked` is the weight
/// of the result in the top representable sector.
pub fn weyl_apply(f: &LatticeWavefunction, psi: &FockVector, opts: &WeylOptions) -> Result<Truncated<FockVector>> {
    let basis = psi.basis();
    check_field(basis, f)?;
    let n_max = match basis.sector() {
        Sector::Cutoff(n) => n,
        Sector::FixedN(_) => return config("Weyl operators need a cutoff basis"),
    };
    if (n_max as f64) < f.norm_sqr() {
        return config(format!("cutoff {n_max} is below ‖f‖² = {}", f.norm_sqr()));
    }
    let gen = WeylGenerator { basis, f: f.values().to_vec() };
    let (out, _) = evolve(&gen, psi.coeffs(), 1.0, &EvolveOptions::with_tol(opts.tol))?;
    let value = FockVector::new(basis.clone(), out)?;
    let leaked = value.top_sector_weight();
    if leaked > opts.leak_tol {
        return Err(Error::Truncation { leaked, tol: opts.leak_tol });
    }
    Ok(Truncated { value, leaked })
}

/// Poisson weight beyond `n_max` for mean `mu`.
pub fn poisson_tail(mu: f64, n_max: usize) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let mut ln_term = -mu + (n_max + 1) as f64 * mu.ln() - ln_factorial(n_max + 1);
    let mut tail = 0.0;
    let mut n = n_max + 1;
    loop {
        let term = ln_term.exp();
        tail += term;
        if term < 1e-300 || (term < tail * 1e-17 && (n as f64) > mu) {
            break;
        }
        n += 1;
        ln_term += mu.ln() - (n as f64).ln();
    }
    tail
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Coherent state `W(f)Ω = e^{-‖f‖²/2} Σ_n (a*(f))^n / n! Ω` projected onto
/// the cutoff basis. `leaked` is the discarded Poisson weight.
pub fn coherent_state(basis: &Arc<FockBasis>, f: &LatticeWavefunction, leak_tol: f64) -> Result<Truncated<FockVector>> {
    check_field(basis, f)?;
    let n_max = match basis.sector() {
        Sector::Cutoff(n) => n,
        Sector::FixedN(_) => return config("coherent states need a cutoff basis"),
    };
    let mu = f.norm_sqr();
    let leaked = poisson_tail(mu, n_max);
    if leaked > leak_tol {
        return Err(Error::Truncation { leaked, tol: leak_tol });
    }
    let prefactor = (-mu / 2.0).exp();
    let coeffs = product_amplitudes(basis, f.values(), prefactor, false);
    Ok(Truncated { value: FockVector::new(basis.clone(), coeffs)?, leaked })
}

/// `prefactor * [sqrt(n!)] * Π_x f(x)^{n_x} / sqrt(n_x!)` for every state.
fn product_amplitudes(basis: &FockBasis, f: &[C64], prefactor: f64, with_total: bool) -> Vec<C64> {
    let n_hi = basis.max_particles();
    let inv_sqrt_fact: Vec<f64> = (0..=n_hi).map(|k| (-0.5 * ln_factorial(k)).exp()).collect();
    let mut out = vec![ZERO; basis.dim()];
    out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
        for (off, o) in chunk.iter_mut().enumerate() {
            let i = c * 4096 + off;
            let s = basis.state(i);
            let mut amp = C64::new(prefactor, 0.0);
            let mut total = 0usize;
            for (x, &nx) in s.iter().enumerate() {
                if nx > 0 {
                    amp *= f[x].powu(nx as u32) * inv_sqrt_fact[nx as usize];
                    total += nx as usize;
                }
            }
            if with_total {
                amp *= (0.5 * ln_factorial(total)).exp();
            }
            *o = amp;
        }
    });
    out
}

/// `φ^{⊗n}` on the fixed-N(n) basis: amplitude `sqrt(n!/Π n_x!) Π φ(x)^{n_x}`.
pub fn factorized_state(phi: &LatticeWavefunction, n: usize) -> Result<FockVector> {
    if (phi.norm() - 1.0).abs() > 1e-10 {
        return config(format!("factorized states need ‖φ‖ = 1, got {}", phi.norm()));
    }
    let basis = FockBasis::new(*phi.grid(), Sector::FixedN(n))?;
    let coeffs = product_amplitudes(&basis, phi.values(), 1.0, true);
    FockVector::new(basis, coeffs)
}
