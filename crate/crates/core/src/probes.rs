//! Randomized checks of two-particle Sobolev and Poincaré-type inequalities
//! on small periodic 3D grids.
//!
//! Two-particle fields are stored as `S x S` row-major arrays,
//! `psi[x1 * S + x2]`. Random states are band-limited: both particles only
//! carry plane waves with every wave-number component in `-band..=band`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::lattice::{sobolev_pair_form, Grid, LatticeWavefunction, PairForm, PotentialSpec, C64};

pub const MIN_TRIALS: usize = 100;

fn check_grid(grid: &Grid) -> Result<()> {
    if grid.dim() != 3 || grid.m() > 8 {
        return config(format!("probes need a 3D grid with m <= 8, got dim {} m {}", grid.dim(), grid.m()));
    }
    Ok(())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return config(format!("at least {MIN_TRIALS} trials are needed, got {trials}"));
    }
    Ok(())
}

/// Plane waves `k ∈ {-band..=band}^3` as the columns of an `S x K` matrix.
pub fn band_modes(grid: &Grid, band: i64) -> DMatrix<C64> {
    let ks: Vec<[i64; 3]> = (-band..=band)
        .flat_map(|a| (-band..=band).flat_map(move |b| (-band..=band).map(move |c| [a, b, c])))
        .collect();
    let cols: Vec<LatticeWavefunction> = ks.iter().map(|k| LatticeWavefunction::plane_wave(*grid, k)).collect();
    DMatrix::from_fn(grid.sites(), ks.len(), |x, j| cols[j].values()[x])
}

/// `Σ_{k,l} C_{kl} e_k(x1) e_l(x2)`, i.e. `E C Eᵀ` flattened row-major.
pub fn band_limited_pair(modes: &DMatrix<C64>, coeffs: &DMatrix<C64>) -> Vec<C64> {
    let field = modes * coeffs * modes.transpose();
    let s = field.nrows();
    let mut out = Vec::with_capacity(s * s);
    for x1 in 0..s {
        for x2 in 0..s {
            out.push(field[(x1, x2)]);
        }
    }
    out
}

/// Normalized band-limited two-particle state with Gaussian coefficients.
fn random_pair_state(modes: &DMatrix<C64>, rng: &mut ChaCha8Rng) -> Vec<C64> {
    let k = modes.ncols();
    let mut c = DMatrix::from_fn(k, k, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let n = c.norm();
    c /= C64::new(n, 0.0);
    band_limited_pair(modes, &c)
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// `⟨φ, W(x1 - x2) ψ⟩` for a displacement table `W`.
pub fn pair_expectation(grid: &Grid, table: &[f64], phi: &[C64], psi: &[C64]) -> C64 {
    let s = grid.sites();
    let mut acc = C64::new(0.0, 0.0);
    for x1 in 0..s {
        for x2 in 0..s {
            let w = table[grid.displacement(x1, x2)];
            if w != 0.0 {
                acc += phi[x1 * s + x2].conj() * psi[x1 * s + x2] * w;
            }
        }
    }
    acc
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeStability {
    pub trials: usize,
    pub max_ratio: f64,
    /// Max over `2 * trials`; the first `trials` draws are shared.
    pub doubled_max_ratio: f64,
    /// `doubled_max_ratio / max_ratio` (1 when both vanish).
    pub drift: f64,
}

impl ProbeStability {
    fn from_ratios(trials: usize, ratios: &[f64]) -> Self {
        let max_ratio = ratios[..trials].iter().cloned().fold(0.0, f64::max);
        let doubled_max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
        let drift = if max_ratio > 0.0 { doubled_max_ratio / max_ratio } else if doubled_max_ratio == 0.0 { 1.0 } else { f64::INFINITY };
        ProbeStability { trials, max_ratio, doubled_max_ratio, drift }
    }

    pub fn is_stable(&self) -> bool {
        self.max_ratio.is_finite() && self.doubled_max_ratio.is_finite() && self.drift < 2.0
    }
}

fn run_trials<F>(trials: usize, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    (0..2 * trials).into_par_iter().map(|i| f(&mut trial_rng(seed, i))).collect()
}

/// Largest `⟨ψ, V(x1 - x2) ψ⟩ / (‖V‖₁ ⟨ψ, (1-Δ1)(1-Δ2) ψ⟩)` over random states.
pub fn probe_sobolev_l1(pot: &PotentialSpec, band: i64, trials: usize, seed: u64) -> Result<ProbeStability> {
    let grid = *pot.grid();
    check_grid(&grid)?;
    check_trials(trials)?;
    let modes = band_modes(&grid, band);
    let ratios = run_trials(trials, seed, |rng| {
        let psi = random_pair_state(&modes, rng);
        sobolev_ratio(pot, &psi)
    })?;
    Ok(ProbeStability::from_ratios(trials, &ratios))
}

pub fn sobolev_ratio(pot: &PotentialSpec, psi: &[C64]) -> Result<f64> {
    if pot.l1_norm() == 0.0 {
        return Ok(0.0);
    }
    let grid = pot.grid();
    let num = pair_expectation(grid, pot.pair_values(), psi, psi).re;
    Ok(num / (pot.l1_norm() * sobolev_pair_form(grid, psi, PairForm::Product)?))
}

/// Largest `|⟨φ, V ψ⟩| / (‖V‖₁ M(φ)^{1/2} M(ψ)^{1/2})` with `M` the form of
/// `(∇1·∇2)² - Δ1 - Δ2 + 1`.
pub fn probe_nabla_dot(pot: &PotentialSpec, band: i64, trials: usize, seed: u64) -> Result<ProbeStability> {
    let grid = *pot.grid();
    check_grid(&grid)?;
    check_trials(trials)?;
    let modes = band_modes(&grid, band);
    let ratios = run_trials(trials, seed, |rng| {
        let phi = random_pair_state(&modes, rng);
        let psi = random_pair_state(&modes, rng);
        nabla_dot_ratio(pot, &phi, &psi)
    })?;
    Ok(ProbeStability::from_ratios(trials, &ratios))
}

pub fn nabla_dot_ratio(pot: &PotentialSpec, phi: &[C64], psi: &[C64]) -> Result<f64> {
    if pot.l1_norm() == 0.0 {
        return Ok(0.0);
    }
    let grid = pot.grid();
    let num = pair_expectation(grid, pot.pair_values(), phi, psi).norm();
    let den = (sobolev_pair_form(grid, phi, PairForm::MixedGradient)? * sobolev_pair_form(grid, psi, PairForm::MixedGradient)?).sqrt();
    Ok(num / (pot.l1_norm() * den))
}

/// Lattice mollifier at scale `alpha`, indexed by displacement: the bump
/// `exp(-1/(1-r²))` on the open ball of radius `alpha / 2`, normalized to
/// unit lattice sum. At `alpha = 2h` only the origin survives and the
/// mollifier is the Kronecker delta.
pub fn mollifier(grid: &Grid, alpha: f64) -> Result<Vec<f64>> {
    let h = grid.spacing();
    if !(alpha >= 2.0 * h * (1.0 - 1e-12)) {
        return config(format!("alpha = {alpha} is below the resolution limit 2h = {}", 2.0 * h));
    }
    let radius = alpha / 2.0;
    let mut w: Vec<f64> = (0..grid.sites())
        .map(|r| {
            let u = grid.min_image_norm(r) / radius;
            if u < 1.0 - 1e-12 {
                (-1.0 / (1.0 - u * u)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoincareRow {
    pub alpha: f64,
    pub max_numerator: f64,
    /// Max of `|⟨φ, (h_α - δ) ψ⟩| / (α^κ S(φ)^{1/2} S(ψ)^{1/2})`.
    pub max_ratio: f64,
    pub doubled_max_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoincareTable {
    pub kappa: f64,
    pub trials: usize,
    /// Decreasing in `alpha`.
    pub rows: Vec<PoincareRow>,
    /// `ratio(α/2) / ratio(α)` for consecutive rungs (0 when the smaller
    /// ratio vanishes).
    pub inflation: Vec<f64>,
    pub max_drift: f64,
}

impl PoincareTable {
    pub fn max_inflation(&self) -> f64 {
        self.inflation.iter().cloned().fold(0.0, f64::max)
    }
}

fn check_ladder(alphas: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut a = alphas.to_vec();
    a.sort_by(|x, y| y.total_cmp(x));
    if a.is_empty() {
        return config("alphas must not be empty");
    }
    for w in a.windows(2) {
        if ((w[0] / w[1]) - 2.0).abs() > 1e-9 {
            return config(format!("alphas must form a dyadic ladder, found {} next to {}", w[0], w[1]));
        }
    }
    if a.last().unwrap() < &(2.0 * h * (1.0 - 1e-12)) {
        return config(format!("alpha = {} is below the resolution limit 2h = {}", a.last().unwrap(), 2.0 * h));
    }
    Ok(a)
}

/// Dyadic ladder `2h, 4h, ...` with `levels` rungs.
pub fn default_ladder(grid: &Grid, levels: usize) -> Vec<f64> {
    (0..levels).map(|j| 2.0 * grid.spacing() * 2f64.powi(j as i32)).collect()
}

pub fn probe_poincare(grid: &Grid, alphas: &[f64], kappa: f64, band: i64, trials: usize, seed: u64) -> Result<PoincareTable> {
    check_grid(grid)?;
    check_trials(trials)?;
    if !(0.0..0.5).contains(&kappa) {
        return config(format!("kappa must lie in [0, 1/2), got {kappa}"));
    }
    let ladder = check_ladder(alphas, grid.spacing())?;
    let tables: Vec<Vec<f64>> = ladder
        .iter()
        .map(|&a| {
            let mut t = mollifier(grid, a)?;
            t[0] -= 1.0;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let modes = band_modes(grid, band);
    // per trial: (numerator, ratio) for each rung
    let per_trial: Vec<Vec<(f64, f64)>> = (0..2 * trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let phi = random_pair_state(&modes, &mut rng);
            let psi = random_pair_state(&modes, &mut rng);
            let den = (sobolev_pair_form(grid, &phi, PairForm::Product)? * sobolev_pair_form(grid, &psi, PairForm::Product)?).sqrt();
            Ok(ladder
                .iter()
                .zip(&tables)
                .map(|(a, t)| {
                    let num = pair_expectation(grid, t, &phi, &psi).norm();
                    (num, num / (a.powf(kappa) * den))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(ladder.len());
    let mut max_drift: f64 = 1.0;
    for (j, &alpha) in ladder.iter().enumerate() {
        let ratios: Vec<f64> = per_trial.iter().map(|v| v[j].1).collect();
        let stab = ProbeStability::from_ratios(trials, &ratios);
        max_drift = max_drift.max(stab.drift);
        let max_numerator = per_trial[..trials].iter().map(|v| v[j].0).fold(0.0, f64::max);
        rows.push(PoincareRow { alpha, max_numerator, max_ratio: stab.max_ratio, doubled_max_ratio: stab.doubled_max_ratio });
    }
    let inflation = rows
        .windows(2)
        .map(|w| if w[1].max_ratio == 0.0 { 0.0 } else { w[1].max_ratio / w[0].max_ratio })
        .collect();
    Ok(PoincareTable { kappa, trials, rows, inflation, max_drift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::PairFamily;

    fn grid() -> Grid {
        Grid::new(3, 4, 1.0).unwrap()
    }

    fn product(a: &LatticeWavefunction, b: &LatticeWavefunction) -> Vec<C64> {
        a.values().iter().flat_map(|x| b.values().iter().map(move |y| x * y)).collect()
    }

    #[test]
    fn random_states_are_normalized_and_band_limited() {
        let g = grid();
        let modes = band_modes(&g, 1);
        assert_eq!(modes.ncols(), 27);
        let psi = random_pair_state(&modes, &mut trial_rng(1, 0));
        let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-12);
        // the product form is bounded by its largest symbol on the band
        let k = [1i64, 1, 1];
        let top = (1.0 + g.stencil_symbol(&k)).powi(2);
        let s = sobolev_pair_form(&g, &psi, PairForm::Product).unwrap();
        assert!(s >= 1.0 - 1e-12 && s <= top + 1e-9);
    }

    #[test]
    fn zero_potential_gives_zero() {
        let z = PotentialSpec::zero(grid());
        assert_eq!(probe_sobolev_l1(&z, 1, 100, 3).unwrap().max_ratio, 0.0);
        assert_eq!(probe_nabla_dot(&z, 1, 100, 3).unwrap().max_ratio, 0.0);
    }

    #[test]
    fn delta_on_ground_modes() {
        let g = grid();
        let pot = PotentialSpec::from_family(g, &PairFamily::KroneckerDelta { strength: 1.0 }, vec![0.0; g.sites()]).unwrap();
        let ground = LatticeWavefunction::plane_wave(g, &[0, 0, 0]);
        let r = sobolev_ratio(&pot, &product(&ground, &ground)).unwrap();
        // Σ_x |φ(x)|⁴ = 1/S, forms equal 1
        assert!((r - 1.0 / g.sites() as f64).abs() < 1e-14);
    }

    #[test]
    fn plane_wave_pairs_match_symbols() {
        let g = grid();
        let pot = PotentialSpec::from_family(g, &PairFamily::Gaussian { amplitude: 1.0, width: 1.0 }, vec![0.0; g.sites()]).unwrap();
        let (k, l) = ([1i64, 0, -1], [0i64, 1, 1]);
        let psi = product(&LatticeWavefunction::plane_wave(g, &k), &LatticeWavefunction::plane_wave(g, &l));
        let theta = |q: i64| 2.0 * std::f64::consts::PI * q as f64 / g.m() as f64;
        let dot: C64 = (0..3)
            .map(|a| (C64::from_polar(1.0, theta(k[a])) - 1.0) * (C64::from_polar(1.0, theta(l[a])) - 1.0))
            .sum();
        let symbol = 1.0 + g.stencil_symbol(&k) + g.stencil_symbol(&l) + dot.norm_sqr();
        let vsum: f64 = pot.pair_values().iter().sum();
        let expect = vsum / g.sites() as f64 / (pot.l1_norm() * symbol);
        let got = nabla_dot_ratio(&pot, &psi, &psi).unwrap();
        assert!((got - expect).abs() < 1e-13 * expect.max(1.0), "{got} vs {expect}");
        let prod = (1.0 + g.stencil_symbol(&k)) * (1.0 + g.stencil_symbol(&l));
        let got = sobolev_ratio(&pot, &psi).unwrap();
        assert!((got - vsum / g.sites() as f64 / (pot.l1_norm() * prod)).abs() < 1e-13);
    }

    #[test]
    fn mollifier_bottom_rung_is_delta() {
        let g = grid();
        let w = mollifier(&g, 2.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w[1..].iter().all(|&v| v == 0.0));
        let w = mollifier(&g, 4.0).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(w.iter().filter(|&&v| v > 0.0).count() > 1);
        assert!(mollifier(&g, 1.5).is_err());
    }

    #[test]
    fn poincare_refusals_and_bottom_rung() {
        let g = grid();
        assert!(probe_poincare(&g, &[4.0, 1.0], 0.25, 1, 100, 1).is_err());
        assert!(probe_poincare(&g, &[8.0, 3.0], 0.25, 1, 100, 1).is_err());
        assert!(probe_poincare(&g, &[4.0, 2.0], 0.5, 1, 100, 1).is_err());
        let t = probe_poincare(&g, &[2.0, 4.0], 0.0, 1, 100, 1).unwrap();
        assert_eq!(t.rows[0].alpha, 4.0);
        assert_eq!(t.rows[1].max_numerator, 0.0);
        assert!(t.rows[0].max_ratio > 0.0 && t.rows[0].max_ratio.is_finite());
    }

    #[test]
    fn smooth_state_ratio_shrinks_with_alpha() {
        let g = Grid::new(3, 6, 1.0).unwrap();
        let low = LatticeWavefunction::from_modes(g, &[(vec![0, 0, 0], C64::new(1.0, 0.0)), (vec![1, 0, 0], C64::new(0.5, 0.0))]).unwrap();
        let psi = product(&low, &low);
        let den = sobolev_pair_form(&g, &psi, PairForm::Product).unwrap();
        let ratios: Vec<f64> = default_ladder(&g, 3)
            .iter()
            .map(|&a| {
                let mut t = mollifier(&g, a).unwrap();
                t[0] -= 1.0;
                pair_expectation(&g, &t, &psi, &psi).norm() / (a.powf(0.25) * den)
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[0] <= w[1] + 1e-15), "{ratios:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let g = grid();
        let pot = PotentialSpec::from_family(g, &PairFamily::Gaussian { amplitude: 1.0, width: 1.0 }, vec![0.0; g.sites()]).unwrap();
        let a = probe_sobolev_l1(&pot, 1, 100, 9).unwrap();
        let b = probe_sobolev_l1(&pot, 1, 100, 9).unwrap();
        assert_eq!(a.max_ratio, b.max_ratio);
        assert!(a.is_stable());
        assert!(a.doubled_max_ratio >= a.max_ratio);
    }

    #[test]
    fn grid_preconditions() {
        let g1 = Grid::new(1, 6, 1.0).unwrap();
        assert!(probe_sobolev_l1(&PotentialSpec::zero(g1), 1, 100, 1).is_err());
        assert!(probe_sobolev_l1(&PotentialSpec::zero(grid()), 1, 10, 1).is_err());
    }
}
