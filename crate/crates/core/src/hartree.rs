//! Lattice Hartree and cubic NLS flows by Strang splitting.
//!
//! The linear part is propagated exactly in the eigenbasis of the discrete
//! one-body operator `-Δ + V_ext`; the nonlinear part is the exact phase
//! `exp(-i dt W)` with `W = V⋆|φ|²` (or `σ|φ|²`), which leaves `|φ|` fixed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::lattice::{convolve, one_body_operator, Grid, LatticeWavefunction, PotentialSpec, C64};

#[derive(Clone, Debug)]
pub enum Nonlinearity {
    /// `(V⋆|φ|²)φ`
    Convolution(PotentialSpec),
    /// `σ|φ|²φ`
    Cubic(f64),
}

#[derive(Clone, Debug)]
pub struct EffectiveEquationConfig {
    grid: Grid,
    external: Vec<f64>,
    nonlinearity: Nonlinearity,
}

impl EffectiveEquationConfig {
    pub fn new(grid: Grid, external: Vec<f64>, nonlinearity: Nonlinearity) -> Result<Self> {
        if external.len() != grid.sites() || external.iter().any(|v| !v.is_finite()) {
            return config("external potential must have one finite value per site");
        }
        match &nonlinearity {
            Nonlinearity::Convolution(pot) => grid.check_same(pot.grid())?,
            Nonlinearity::Cubic(s) if !s.is_finite() => return config("cubic coupling must be finite"),
            Nonlinearity::Cubic(_) => {}
        }
        Ok(EffectiveEquationConfig { grid, external, nonlinearity })
    }

    /// Hartree equation matching a many-body potential: convolution with the
    /// pair potential and the same external field.
    pub fn hartree(pot: &PotentialSpec) -> Self {
        EffectiveEquationConfig {
            grid: *pot.grid(),
            external: pot.external_values().to_vec(),
            nonlinearity: Nonlinearity::Convolution(pot.clone()),
        }
    }

    pub fn cubic(grid: Grid, external: Vec<f64>, sigma: f64) -> Result<Self> {
        EffectiveEquationConfig::new(grid, external, Nonlinearity::Cubic(sigma))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    /// Mean-field potential `W(x)` generated by the density `ρ`.
    pub fn mean_field(&self, density: &[f64]) -> Result<Vec<f64>> {
        match &self.nonlinearity {
            Nonlinearity::Convolution(pot) => convolve(pot, density),
            Nonlinearity::Cubic(s) => Ok(density.iter().map(|r| s * r).collect()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HartreeOptions {
    /// Largest accepted change of a segment under step doubling.
    pub refine_tol: f64,
    /// Smallest step before giving up.
    pub min_dt: f64,
}

impl Default for HartreeOptions {
    fn default() -> Self {
        HartreeOptions { refine_tol: 1e-8, min_dt: 1e-7 }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub t: f64,
    pub phi: LatticeWavefunction,
    pub mass: f64,
    pub energy: f64,
    /// Step used for this sample's segment.
    pub dt: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> Option<&LatticeWavefunction> {
        self.samples.iter().find(|s| (s.t - t).abs() <= 1e-12 * (1.0 + t.abs())).map(|s| &s.phi)
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.samples[0].mass;
        self.samples.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max)
    }

    pub fn max_relative_energy_drift(&self) -> f64 {
        let e0 = self.samples[0].energy;
        self.samples.iter().map(|s| (s.energy - e0).abs() / e0.abs().max(1e-300)).fold(0.0, f64::max)
    }
}

/// Strang stepper with a cached eigendecomposition of `-Δ + V_ext`.
pub struct HartreeSolver {
    cfg: EffectiveEquationConfig,
    eigvecs: DMatrix<C64>,
    eigvals: Vec<f64>,
    kinetic: DMatrix<f64>,
}

impl HartreeSolver {
    pub fn new(cfg: EffectiveEquationConfig) -> Result<Self> {
        let pot = PotentialSpec::zero(cfg.grid).with_external(cfg.external.clone())?;
        let h = one_body_operator(&cfg.grid, &pot)?.to_dense();
        let eig = SymmetricEigen::new(h.clone());
        Ok(HartreeSolver {
            eigvecs: eig.eigenvectors.map(|x| C64::new(x, 0.0)),
            eigvals: eig.eigenvalues.iter().copied().collect(),
            kinetic: h,
            cfg,
        })
    }

    pub fn config(&self) -> &EffectiveEquationConfig {
        &self.cfg
    }

    fn linear(&self, v: &mut DVector<C64>, dt: f64) {
        let mut c = self.eigvecs.adjoint() * &*v;
        for (ci, e) in c.iter_mut().zip(&self.eigvals) {
            *ci *= C64::from_polar(1.0, -e * dt);
        }
        *v = &self.eigvecs * c;
    }

    fn nonlinear(&self, v: &mut DVector<C64>, dt: f64) -> Result<()> {
        let density: Vec<f64> = v.iter().map(|z| z.norm_sqr()).collect();
        let w = self.cfg.mean_field(&density)?;
        for (z, wx) in v.iter_mut().zip(w) {
            *z *= C64::from_polar(1.0, -wx * dt);
        }
        Ok(())
    }

    /// `steps` Strang steps of equal length covering `t`.
    pub fn propagate_fixed(&self, phi: &LatticeWavefunction, t: f64, steps: usize) -> Result<LatticeWavefunction> {
        self.cfg.grid.check_same(phi.grid())?;
        if steps == 0 {
            return config("at least one step is needed");
        }
        let dt = t / steps as f64;
        let mut v = DVector::from_column_slice(phi.values());
        if t != 0.0 {
            self.linear(&mut v, dt / 2.0);
            for s in 0..steps {
                self.nonlinear(&mut v, dt)?;
                // merge adjacent linear half steps
                self.linear(&mut v, if s + 1 == steps { dt / 2.0 } else { dt });
            }
        }
        LatticeWavefunction::new(self.cfg.grid, v.iter().copied().collect())
    }

    /// Evolves over `t` halving the step until the result moves by less than
    /// `refine_tol`. Returns the finer solution and its step.
    pub fn propagate_adaptive(
        &self,
        phi: &LatticeWavefunction,
        t: f64,
        dt_target: f64,
        opts: &HartreeOptions,
    ) -> Result<(LatticeWavefunction, f64)> {
        if t == 0.0 {
            return Ok((phi.clone(), 0.0));
        }
        let mut steps = ((t.abs() / dt_target).ceil() as usize).max(1);
        let mut coarse = self.propagate_fixed(phi, t, steps)?;
        let mut last_change = f64::INFINITY;
        loop {
            let fine = self.propagate_fixed(phi, t, 2 * steps)?;
            let change = fine.max_abs_diff(&coarse);
            steps *= 2;
            let dt = t.abs() / steps as f64;
            if change < opts.refine_tol {
                return Ok((fine, dt));
            }
            if dt < opts.min_dt {
                return Err(Error::Convergence(format!("Hartree step fell below {:e} (change {change:e})", opts.min_dt)));
            }
            // halving should cut the change by four; past the rounding floor it grows
            if change >= last_change {
                return Err(Error::Convergence(format!(
                    "Hartree refinement stalled at change {change:e} above {:e}",
                    opts.refine_tol
                )));
            }
            last_change = change;
            coarse = fine;
        }
    }

    pub fn energy(&self, phi: &LatticeWavefunction) -> Result<f64> {
        effective_energy_with(&self.cfg, &self.kinetic, phi)
    }

    /// Trajectory through the given increasing sample times, starting at 0.
    pub fn trajectory(
        &self,
        phi0: &LatticeWavefunction,
        times: &[f64],
        dt_target: f64,
        opts: &HartreeOptions,
    ) -> Result<Trajectory> {
        check_normalized(phi0)?;
        if !(dt_target > 0.0) {
            return config("dt_target must be positive");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return config("sample times must be finite, non-negative and increasing");
        }
        let mut samples = vec![TrajectorySample {
            t: 0.0,
            mass: phi0.norm_sqr(),
            energy: self.energy(phi0)?,
            phi: phi0.clone(),
            dt: 0.0,
        }];
        let mut phi = phi0.clone();
        let mut now = 0.0;
        for &t in times {
            if t == 0.0 {
                continue;
            }
            let (next, dt) = self.propagate_adaptive(&phi, t - now, dt_target, opts)?;
            phi = next;
            now = t;
            samples.push(TrajectorySample { t, mass: phi.norm_sqr(), energy: self.energy(&phi)?, phi: phi.clone(), dt });
        }
        Ok(Trajectory { samples })
    }
}

fn check_normalized(phi: &LatticeWavefunction) -> Result<()> {
    if (phi.norm() - 1.0).abs() > 1e-12 {
        return config(format!("initial datum must be normalized, ‖φ‖ = {}", phi.norm()));
    }
    Ok(())
}

/// Uniformly sampled trajectory on `[0, t]` with spacing `dt_target`
/// (the last interval may be shorter).
pub fn effective_evolve(
    cfg: &EffectiveEquationConfig,
    phi0: &LatticeWavefunction,
    t: f64,
    dt_target: f64,
    opts: &HartreeOptions,
) -> Result<Trajectory> {
    if !(t >= 0.0 && t.is_finite()) {
        return config("final time must be finite and non-negative");
    }
    if !(dt_target > 0.0) {
        return config("dt_target must be positive");
    }
    let n = (t / dt_target - 1e-9).ceil().max(0.0) as usize;
    let times: Vec<f64> = (1..=n).map(|i| (i as f64 * dt_target).min(t)).collect();
    HartreeSolver::new(cfg.clone())?.trajectory(phi0, &times, dt_target, opts)
}

/// Kinetic plus external energy plus `½ Σ_x W(x)|φ(x)|²`.
pub fn effective_energy(cfg: &EffectiveEquationConfig, phi: &LatticeWavefunction) -> Result<f64> {
    let pot = PotentialSpec::zero(cfg.grid).with_external(cfg.external.clone())?;
    let h = one_body_operator(&cfg.grid, &pot)?.to_dense();
    effective_energy_with(cfg, &h, phi)
}

fn effective_energy_with(cfg: &EffectiveEquationConfig, h: &DMatrix<f64>, phi: &LatticeWavefunction) -> Result<f64> {
    cfg.grid.check_same(phi.grid())?;
    let v = phi.values();
    let mut lin = 0.0;
    for i in 0..v.len() {
        let mut row = C64::new(0.0, 0.0);
        for j in 0..v.len() {
            row += v[j] * h[(i, j)];
        }
        lin += (v[i].conj() * row).re;
    }
    let density = phi.density();
    let w = cfg.mean_field(&density)?;
    let inter: f64 = w.iter().zip(&density).map(|(a, b)| a * b).sum::<f64>() / 2.0;
    Ok(lin + inter)
}
