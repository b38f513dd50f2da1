//! Zero-energy scattering for radial potentials in three dimensions.
//!
//! With `u = r f` the equation `(-Δ + V/2) f = 0` becomes `u'' = (V/2) u`,
//! `u(0) = 0`. We shoot from the origin with `u'(0) = 1` using RK4 and read
//! the scattering length off the straight line `u ≈ c (r - a₀)` far out.
//! The integrals `∫V f`, `∫V` and `∫V/|x|` are carried along as extra
//! components of the same ODE so they inherit its order.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{config, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RadialFamily {
    /// `V₀ 1{r < R}`
    SquareBarrier { v0: f64, radius: f64 },
    /// `A exp(-r²/w²)`
    Gaussian { amplitude: f64, width: f64 },
    /// `A / (1 + (r/ℓ)^σ)`
    PowerLaw { amplitude: f64, range: f64, sigma: f64 },
}

/// `λ n² V(n r)` for a base family `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialPotential {
    pub family: RadialFamily,
    #[serde(default = "one")]
    pub strength: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl RadialPotential {
    pub fn new(family: RadialFamily) -> Result<Self> {
        let pot = RadialPotential { family, strength: 1.0, scale: 1.0 };
        pot.validate()?;
        Ok(pot)
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        let ok = match self.family {
            RadialFamily::SquareBarrier { v0, radius } => v0.is_finite() && finite_pos(radius),
            RadialFamily::Gaussian { amplitude, width } => amplitude.is_finite() && finite_pos(width),
            RadialFamily::PowerLaw { amplitude, range, sigma } => amplitude.is_finite() && finite_pos(range) && finite_pos(sigma),
        };
        if !ok {
            return config(format!("invalid radial potential parameters {:?}", self.family));
        }
        if !self.strength.is_finite() || !finite_pos(self.scale) {
            return config("strength must be finite and scale positive");
        }
        Ok(())
    }

    pub fn with_strength(&self, lambda: f64) -> Self {
        RadialPotential { strength: self.strength * lambda, ..self.clone() }
    }

    /// `V_n(r) = n² V(n r)`.
    pub fn scaled(&self, n: f64) -> Self {
        RadialPotential { scale: self.scale * n, ..self.clone() }
    }

    fn base(&self, r: f64) -> f64 {
        match self.family {
            RadialFamily::SquareBarrier { v0, radius } => {
                if r < radius {
                    v0
                } else {
                    0.0
                }
            }
            RadialFamily::Gaussian { amplitude, width } => amplitude * (-(r / width).powi(2)).exp(),
            RadialFamily::PowerLaw { amplitude, range, sigma } => amplitude / (1.0 + (r / range).powf(sigma)),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.strength * self.scale * self.scale * self.base(self.scale * r)
    }

    /// Radius beyond which the potential is treated as negligible; for the
    /// barrier it is the exact support and a mesh node.
    pub fn support(&self) -> f64 {
        let base = match self.family {
            RadialFamily::SquareBarrier { radius, .. } => radius,
            RadialFamily::Gaussian { width, .. } => 6.0 * width,
            RadialFamily::PowerLaw { range, .. } => 50.0 * range,
        };
        base / self.scale
    }

    /// Whether the mesh must have a node at `support()`.
    fn has_edge(&self) -> bool {
        matches!(self.family, RadialFamily::SquareBarrier { .. })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatteringOptions {
    /// `r_max / support`; at least 10.
    pub range_factor: f64,
    /// Starting number of cells per support length.
    pub cells_per_support: usize,
    /// Refinement stops when `a₀` moves by less than this (relative).
    pub refine_tol: f64,
    pub max_refinements: usize,
    /// Largest accepted RMS residual of the asymptotic fit, relative to `u(r_max)`.
    pub fit_tol: f64,
}

impl Default for ScatteringOptions {
    fn default() -> Self {
        ScatteringOptions { range_factor: 12.0, cells_per_support: 64, refine_tol: 1e-8, max_refinements: 12, fit_tol: 1e-9 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatteringResult {
    pub r: Vec<f64>,
    pub f_profile: Vec<f64>,
    pub a0: f64,
    /// `(1/8π) ∫ V f`
    pub a0_integral: f64,
    /// `∫ V`
    pub b0: f64,
    /// `sup |x|² V + ∫ V / |x|`
    pub rho: f64,
    pub r_max: f64,
    pub dr: f64,
    pub refinements: usize,
    pub fit_residual: f64,
    /// Tail exponent estimated between `r_max/2` and `r_max`; `None` when the
    /// potential vanishes there.
    pub decay_sigma: Option<f64>,
    pub warnings: Vec<String>,
}

impl ScatteringResult {
    pub fn integral_mismatch(&self) -> f64 {
        if self.a0 == 0.0 {
            self.a0_integral.abs()
        } else {
            ((self.a0 - self.a0_integral) / self.a0).abs()
        }
    }
}

struct Shot {
    r: Vec<f64>,
    u: Vec<f64>,
    integral: f64,
    b0: f64,
    inv_r: f64,
    sup_r2v: f64,
}

fn shoot(pot: &RadialPotential, r_max: f64, cells: usize) -> Result<Shot> {
    let dr = r_max / cells as f64;
    // state: u, u', ∫ V u r / 2, 4π ∫ V r², 4π ∫ V r
    let mut y = [0.0, 1.0, 0.0, 0.0, 0.0];
    let mut r_nodes = Vec::with_capacity(cells + 1);
    let mut u_nodes = Vec::with_capacity(cells + 1);
    r_nodes.push(0.0);
    u_nodes.push(0.0);
    let mut sup_r2v: f64 = 0.0;
    let edge = dr * 1e-9;
    for i in 0..cells {
        let lo = i as f64 * dr;
        let hi = (i + 1) as f64 * dr;
        // V is sampled strictly inside the cell so a jump at a node stays on one side
        let mut v_at = |r: f64| {
            let rc = r.clamp(lo + edge, hi - edge);
            let v = pot.eval(rc);
            sup_r2v = sup_r2v.max(rc * rc * v);
            v
        };
        let mut rhs = |r: f64, s: &[f64; 5]| -> [f64; 5] {
            let v = v_at(r);
            [s[1], 0.5 * v * s[0], 0.5 * v * s[0] * r, 4.0 * PI * v * r * r, 4.0 * PI * v * r]
        };
        let k1 = rhs(lo, &y);
        let k2 = rhs(lo + dr / 2.0, &add(&y, &k1, dr / 2.0));
        let k3 = rhs(lo + dr / 2.0, &add(&y, &k2, dr / 2.0));
        let k4 = rhs(hi, &add(&y, &k3, dr));
        for j in 0..5 {
            y[j] += dr / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if !(y[0] > 0.0) {
            return Err(Error::Attractive(format!("zero-energy solution crosses zero near r = {hi}")));
        }
        r_nodes.push(hi);
        u_nodes.push(y[0]);
    }
    Ok(Shot { r: r_nodes, u: u_nodes, integral: y[2], b0: y[3], inv_r: y[4], sup_r2v })
}

fn add(y: &[f64; 5], k: &[f64; 5], h: f64) -> [f64; 5] {
    let mut out = *y;
    for j in 0..5 {
        out[j] += h * k[j];
    }
    out
}

/// Least-squares line through `(r, u)`; returns slope, intercept and RMS residual.
fn line_fit(r: &[f64], u: &[f64]) -> (f64, f64, f64) {
    let n = r.len() as f64;
    let mr = r.iter().sum::<f64>() / n;
    let mu = u.iter().sum::<f64>() / n;
    let sxx: f64 = r.iter().map(|x| (x - mr).powi(2)).sum();
    let sxy: f64 = r.iter().zip(u).map(|(x, y)| (x - mr) * (y - mu)).sum();
    let slope = sxy / sxx;
    let intercept = mu - slope * mr;
    let rms = (r.iter().zip(u).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / n).sqrt();
    (slope, intercept, rms)
}

struct Solved {
    shot: Shot,
    a0: f64,
    slope: f64,
    rms: f64,
}

fn solve_on_mesh(pot: &RadialPotential, r_max: f64, cells: usize) -> Result<Solved> {
    let shot = shoot(pot, r_max, cells)?;
    let start = shot.r.partition_point(|&r| r < 0.7 * r_max);
    let (slope, intercept, rms) = line_fit(&shot.r[start..], &shot.u[start..]);
    Ok(Solved { a0: -intercept / slope, slope, rms, shot })
}

pub fn solve_zero_energy(pot: &RadialPotential, opts: &ScatteringOptions) -> Result<ScatteringResult> {
    pot.validate()?;
    if opts.range_factor < 10.0 {
        return config("the fit window must extend to at least ten times the potential's support");
    }
    if opts.cells_per_support < 2 {
        return config("need at least two cells per support length");
    }
    let support = pot.support();
    let r_max = opts.range_factor * support;
    let mut cells_per_support = opts.cells_per_support;
    // keep the support on a node: total cells = factor · cells_per_support
    let total = |c: usize| -> Result<usize> {
        let t = opts.range_factor * c as f64;
        if pot.has_edge() && (t - t.round()).abs() > 1e-9 {
            return config("range_factor times cells_per_support must be an integer for potentials with a sharp edge");
        }
        Ok(t.round() as usize)
    };
    let mut prev = solve_on_mesh(pot, r_max, total(cells_per_support)?)?;
    let mut refinements = 0;
    let solved = loop {
        cells_per_support *= 2;
        refinements += 1;
        let next = solve_on_mesh(pot, r_max, total(cells_per_support)?)?;
        let change = (next.a0 - prev.a0).abs();
        if change <= opts.refine_tol * next.a0.abs().max(f64::MIN_POSITIVE) || change == 0.0 {
            break next;
        }
        if refinements >= opts.max_refinements {
            return Err(Error::Convergence(format!("scattering length still moving by {change:e} after {refinements} refinements")));
        }
        prev = next;
    };

    let mut warnings = Vec::new();
    let u_end = *solved.shot.u.last().unwrap();
    let rel_rms = solved.rms / u_end;
    if rel_rms > opts.fit_tol {
        warnings.push(format!("asymptotic fit residual {rel_rms:e} exceeds {:e}", opts.fit_tol));
    }
    let (v_half, v_end) = (pot.eval(r_max / 2.0).abs(), pot.eval(r_max).abs());
    let decay_sigma = if v_end > 0.0 && v_half > 0.0 { Some((v_half / v_end).ln() / 2f64.ln()) } else { None };
    if let Some(s) = decay_sigma {
        if s <= 5.0 {
            warnings.push(format!("potential tail decays like r^-{s:.3}, not faster than r^-5"));
        }
    }
    let c = solved.slope;
    let dr = r_max / (solved.shot.r.len() - 1) as f64;
    let f_profile = solved
        .shot
        .r
        .iter()
        .zip(&solved.shot.u)
        .map(|(&r, &u)| if r == 0.0 { 1.0 / c } else { u / (c * r) })
        .collect();
    Ok(ScatteringResult {
        a0: solved.a0,
        a0_integral: solved.shot.integral / c,
        b0: solved.shot.b0,
        rho: solved.shot.sup_r2v + solved.shot.inv_r,
        r: solved.shot.r,
        f_profile,
        r_max,
        dr,
        refinements,
        fit_residual: rel_rms,
        decay_sigma,
        warnings,
    })
}

/// `R - tanh(κR)/κ` with `κ = sqrt(V₀/2)`.
pub fn square_barrier_a0(v0: f64, radius: f64) -> f64 {
    if v0 == 0.0 {
        return 0.0;
    }
    let kappa = (v0 / 2.0).sqrt();
    radius - (kappa * radius).tanh() / kappa
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaledScattering {
    pub n: f64,
    pub a0: f64,
    pub a_scaled: f64,
    pub relative_error: f64,
    /// Largest `|f_n(r) - f(n r)|` over the common mesh.
    pub profile_error: f64,
}

/// Scattering length of `n² V(n·)`, checked against `a₀/n` to relative 10⁻⁸.
pub fn scaled_scattering_length(pot: &RadialPotential, n: f64, opts: &ScatteringOptions) -> Result<ScaledScattering> {
    if !(n >= 1.0 && n.is_finite()) {
        return config(format!("scale must be at least 1, got {n}"));
    }
    let base = solve_zero_energy(pot, opts)?;
    let scaled = solve_zero_energy(&pot.scaled(n), opts)?;
    let relative_error = if base.a0 == 0.0 { scaled.a0.abs() } else { ((scaled.a0 - base.a0 / n) / (base.a0 / n)).abs() };
    let profile_error = if base.f_profile.len() == scaled.f_profile.len() {
        base.f_profile.iter().zip(&scaled.f_profile).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    if relative_error > 1e-8 {
        return Err(Error::Invariant(format!("scaled scattering length off by relative {relative_error:e}")));
    }
    Ok(ScaledScattering { n, a0: base.a0, a_scaled: scaled.a0, relative_error, profile_error })
}

/// `8πa₀` for `β = 1`, `b₀ = ∫V` for `0 < β < 1`.
pub fn coupling_for_beta(pot: &RadialPotential, beta: f64, opts: &ScatteringOptions) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return config(format!("beta must lie in (0, 1], got {beta}"));
    }
    let res = solve_zero_energy(pot, opts)?;
    if res.r.iter().any(|&r| pot.eval(r) < 0.0) {
        return config("coupling constants are defined here for non-negative potentials only");
    }
    Ok(if beta == 1.0 { 8.0 * PI * res.a0 } else { res.b0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn barrier(v0: f64, radius: f64) -> RadialPotential {
        RadialPotential::new(RadialFamily::SquareBarrier { v0, radius }).unwrap()
    }

    #[test]
    fn free_case() {
        let res = solve_zero_energy(&barrier(0.0, 1.0), &ScatteringOptions::default()).unwrap();
        assert_eq!(res.a0.abs(), 0.0);
        assert!(res.f_profile.iter().all(|f| (f - 1.0).abs() < 1e-14));
        assert_eq!(res.b0, 0.0);
    }

    #[test]
    fn square_barrier_closed_form() {
        for &(v0, r) in &[(1.0, 1.0), (10.0, 0.5), (0.3, 2.0)] {
            let res = solve_zero_energy(&barrier(v0, r), &ScatteringOptions::default()).unwrap();
            let exact = square_barrier_a0(v0, r);
            assert!(((res.a0 - exact) / exact).abs() < 1e-8, "{v0} {r}: {} vs {exact}", res.a0);
            assert!(res.integral_mismatch() < 1e-8);
            let b0 = 4.0 * PI * v0 * r.powi(3) / 3.0;
            assert!(((res.b0 - b0) / b0).abs() < 1e-10);
            let rho = v0 * r * r + 2.0 * PI * v0 * r * r;
            assert!(((res.rho - rho) / rho).abs() < 1e-6);
            assert!(res.f_profile.iter().all(|&f| f > 0.0 && f <= 1.0 + 1e-12));
            assert!((res.f_profile.last().unwrap() - (1.0 - exact / res.r_max)).abs() < 1e-8);
        }
    }

    #[test]
    fn gaussian_identity_and_bounds() {
        let pot = RadialPotential::new(RadialFamily::Gaussian { amplitude: 3.0, width: 0.7 }).unwrap();
        let res = solve_zero_energy(&pot, &ScatteringOptions::default()).unwrap();
        assert!(res.integral_mismatch() < 1e-8);
        let b0 = 3.0 * (PI * 0.49).powf(1.5);
        assert!(((res.b0 - b0) / b0).abs() < 1e-8);
        assert!(8.0 * PI * res.a0 <= res.b0);
        assert!(res.decay_sigma.map_or(true, |s| s > 5.0));
    }

    #[test]
    fn scaling() {
        let pot = barrier(2.0, 1.0);
        let s = scaled_scattering_length(&pot, 4.0, &ScatteringOptions::default()).unwrap();
        assert!(s.relative_error < 1e-8);
        assert!(s.profile_error < 1e-8);
        let s1 = scaled_scattering_length(&pot, 1.0, &ScatteringOptions::default()).unwrap();
        assert_eq!(s1.a_scaled, s1.a0);
        assert!(scaled_scattering_length(&pot, 0.5, &ScatteringOptions::default()).is_err());
    }

    #[test]
    fn couplings() {
        let pot = barrier(2.0, 1.0);
        let opts = ScatteringOptions::default();
        let gp = coupling_for_beta(&pot, 1.0, &opts).unwrap();
        assert!((gp - 8.0 * PI * square_barrier_a0(2.0, 1.0)).abs() < 1e-7);
        let born = coupling_for_beta(&pot, 0.5, &opts).unwrap();
        assert!((born - 4.0 * PI * 2.0 / 3.0).abs() < 1e-10);
        assert!(gp <= born);
        assert!(coupling_for_beta(&pot, 0.0, &opts).is_err());
        assert!(coupling_for_beta(&pot, 1.5, &opts).is_err());
    }

    #[test]
    fn monotone_in_strength_and_linear_rho() {
        let pot = barrier(1.0, 1.0);
        let opts = ScatteringOptions::default();
        let base = solve_zero_energy(&pot, &opts).unwrap();
        let mut last = 0.0;
        for i in 1..=6 {
            let lambda = i as f64 * 0.5;
            let res = solve_zero_energy(&pot.with_strength(lambda), &opts).unwrap();
            assert!(res.a0 >= last);
            last = res.a0;
            assert!((res.rho - lambda * base.rho).abs() < 1e-10 * res.rho);
        }
    }

    #[test]
    fn attractive_and_invalid_inputs() {
        let deep = barrier(-20.0, 1.0);
        assert!(matches!(solve_zero_energy(&deep, &ScatteringOptions::default()), Err(Error::Attractive(_))));
        assert!(RadialPotential::new(RadialFamily::SquareBarrier { v0: 1.0, radius: -1.0 }).is_err());
        let short = ScatteringOptions { range_factor: 5.0, ..Default::default() };
        assert!(solve_zero_energy(&barrier(1.0, 1.0), &short).is_err());
    }

    #[test]
    fn slow_tail_is_flagged() {
        let pot = RadialPotential::new(RadialFamily::PowerLaw { amplitude: 1.0, range: 0.2, sigma: 4.0 }).unwrap();
        let opts = ScatteringOptions { refine_tol: 1e-6, ..Default::default() };
        let res = solve_zero_energy(&pot, &opts).unwrap();
        assert!(res.decay_sigma.unwrap() < 5.0);
        assert!(res.warnings.iter().any(|w| w.contains("decays")));
    }
}
