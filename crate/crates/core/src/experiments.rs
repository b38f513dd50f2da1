//! Convergence experiments: exact many-body dynamics against the matching
//! one-body effective equation, with log-log rate fits in `N`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::fock::{
    apply_annihilate, apply_annihilate_site, apply_create, apply_number, coherent_cutoff, coherent_state, factorized_state, number_moment, weyl_apply,
    FockBasis, FockVector, ManyBodyHamiltonian, Sector, WeylOptions,
};
use crate::hartree::{EffectiveEquationConfig, HartreeOptions, HartreeSolver, Trajectory};
use crate::lattice::{one_body_operator, LatticeWavefunction, PotentialSpec, C64};
use crate::marginals::{observable_expectation, operator_norm, reduce, trace_distance, ReducedDensityMatrix};
use crate::propagate::{dense_expm_oracle, dense_matrix, evolve, evolve_state, EvolveOptions, EvolveStats};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFit {
    /// All `(N, D)` pairs offered to the fit.
    pub points: Vec<(f64, f64)>,
    /// Pairs excluded for lying within 10x of the numerical floor.
    pub excluded: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual of `ln D` about the fitted line.
    pub residual: f64,
    pub n_points: usize,
    pub floor: f64,
}

/// Ordinary least squares of `ln D` on `ln N`, dropping points with
/// `D <= 10 * floor`. Refuses with fewer than three usable points.
pub fn fit_rate(points: &[(f64, f64)], floor: f64) -> Result<RateFit> {
    let (used, excluded): (Vec<_>, Vec<_>) = points.iter().copied().partition(|&(_, d)| d > 10.0 * floor);
    if used.len() < 3 {
        return Err(Error::Insufficient(format!(
            "{} of {} points lie above the numerical floor {floor:e}; need 3",
            used.len(),
            points.len()
        )));
    }
    if used.iter().any(|&(n, _)| !(n > 0.0)) {
        return config("particle numbers must be positive");
    }
    let xs: Vec<f64> = used.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, residual) = least_squares(&xs, &ys)?;
    Ok(RateFit { points: points.to_vec(), excluded, slope, intercept, residual, n_points: used.len(), floor })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Insufficient("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    Ok((slope, intercept, rms))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub c: f64,
    pub k: f64,
    /// RMS of `value / fit - 1` over the fitted points.
    pub relative_residual: f64,
    pub n_points: usize,
}

/// `value ≈ C e^{K t}` by least squares on `ln value`.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<ExponentialFit> {
    if points.len() < 2 {
        return Err(Error::Insufficient("an exponential fit needs at least two points".into()));
    }
    if points.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(Error::Insufficient("an exponential fit needs positive values".into()));
    }
    let ts: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ls: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (k, lnc, _) = least_squares(&ts, &ls)?;
    let rel = (points.iter().map(|&(t, v)| (v / (lnc + k * t).exp() - 1.0).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
    Ok(ExponentialFit { c: lnc.exp(), k, relative_residual: rel, n_points: points.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Factorized,
    Coherent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum CutoffPolicy {
    /// `ceil(N + 8 sqrt(N) + 8)`
    Formula,
    Fixed { n_max: usize },
}

impl CutoffPolicy {
    pub fn n_max(&self, n: usize) -> usize {
        match self {
            CutoffPolicy::Formula => coherent_cutoff(n as f64),
            CutoffPolicy::Fixed { n_max } => *n_max,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub propagator: f64,
    pub leakage: f64,
    pub hartree_refine: f64,
    /// Initial step handed to the effective-equation solver.
    pub hartree_dt: f64,
    pub dense_cap: usize,
    /// Largest Fock basis a run may build.
    pub max_basis_dim: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            propagator: 1e-10,
            leakage: 1e-8,
            hartree_refine: 1e-10,
            hartree_dt: 0.01,
            dense_cap: crate::propagate::DEFAULT_DENSE_CAP,
            max_basis_dim: crate::fock::MAX_BASIS_DIM,
        }
    }
}

/// Which one-body equation the many-body marginals are compared against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EffectiveKind {
    /// Convolution with the many-body pair potential.
    Hartree,
    /// Local cubic nonlinearity with coupling `sigma`.
    Cubic { sigma: f64 },
}

#[derive(Clone, Debug)]
pub struct ConvergenceExperiment {
    pub pot: PotentialSpec,
    pub phi0: LatticeWavefunction,
    pub n_list: Vec<usize>,
    pub sample_times: Vec<f64>,
    pub state_kind: StateKind,
    pub cutoff: CutoffPolicy,
    pub tolerances: Tolerances,
    pub effective: EffectiveKind,
}

impl ConvergenceExperiment {
    pub fn validate(&self) -> Result<()> {
        self.pot.grid().check_same(self.phi0.grid())?;
        if (self.phi0.norm() - 1.0).abs() > 1e-12 {
            return config(format!("phi0 must be normalized, ‖φ0‖ = {}", self.phi0.norm()));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[1] <= w[0]) || self.n_list[0] == 0 {
            return config("n_list must be non-empty, positive and strictly increasing");
        }
        if self.sample_times.is_empty()
            || self.sample_times.windows(2).any(|w| w[1] <= w[0])
            || self.sample_times.iter().any(|t| !t.is_finite() || *t < 0.0)
        {
            return config("sample_times must be non-empty, finite, non-negative and strictly increasing");
        }
        let t = &self.tolerances;
        if !(t.propagator > 0.0 && t.leakage > 0.0 && t.hartree_refine > 0.0 && t.hartree_dt > 0.0) {
            return config("tolerances must be positive");
        }
        Ok(())
    }

    fn effective_config(&self) -> Result<EffectiveEquationConfig> {
        match self.effective {
            EffectiveKind::Hartree => Ok(EffectiveEquationConfig::hartree(&self.pot)),
            EffectiveKind::Cubic { sigma } => {
                EffectiveEquationConfig::cubic(*self.pot.grid(), self.pot.external_values().to_vec(), sigma)
            }
        }
    }

    /// Effective-equation trajectory through the sample times.
    pub fn effective_trajectory(&self) -> Result<Trajectory> {
        let solver = HartreeSolver::new(self.effective_config()?)?;
        let opts = HartreeOptions { refine_tol: self.tolerances.hartree_refine, ..Default::default() };
        solver.trajectory(&self.phi0, &self.sample_times, self.tolerances.hartree_dt, &opts)
    }

    /// `max(propagator tolerance, coherent leakage)`.
    pub fn floor(&self, leakage: f64) -> f64 {
        self.tolerances.propagator.max(leakage)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceRow {
    pub n: usize,
    pub t: f64,
    /// `Tr|γ⁽¹⁾_{N,t} - |φ_t⟩⟨φ_t||`
    pub distance: f64,
    /// Initial truncation leakage (probability weight) of the state.
    pub leakage: f64,
    pub norm_error: f64,
    pub energy_error: f64,
    pub number_error: f64,
    /// `max_J |Tr J(γ - P)| - ‖J‖ D` over the test observables; never positive.
    pub observable_excess: f64,
    /// Fluctuation number `⟨𝒩⟩` of `W(√N φ_t)* ψ_{N,t}` (coherent runs).
    pub fluctuation: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitEntry {
    pub t: f64,
    pub fit: Option<RateFit>,
    pub notice: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub state_kind: StateKind,
    pub rows: Vec<DistanceRow>,
    pub fits: Vec<FitEntry>,
    /// Particle numbers skipped with the reason.
    pub skipped: Vec<(usize, String)>,
    pub floor: f64,
    pub max_leakage: f64,
}

impl ExperimentReport {
    pub fn fit_at(&self, t: f64) -> Option<&RateFit> {
        self.fits.iter().find(|f| (f.t - t).abs() < 1e-12).and_then(|f| f.fit.as_ref())
    }

    pub fn distances_at(&self, t: f64) -> Vec<(usize, f64)> {
        self.rows.iter().filter(|r| (r.t - t).abs() < 1e-12).map(|r| (r.n, r.distance)).collect()
    }
}

/// Propagates `psi0` through increasing sample times (0 allowed) and
/// returns the state at each.
pub fn exact_trajectory(
    h: &ManyBodyHamiltonian,
    psi0: &FockVector,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<(f64, FockVector, EvolveStats)>> {
    let mut out = Vec::with_capacity(times.len());
    let mut psi = psi0.clone();
    let mut now = 0.0;
    for &t in times {
        let (next, stats) = if t == now { (psi.clone(), EvolveStats::default()) } else { evolve_state(h, &psi, t - now, opts)? };
        psi = next;
        now = t;
        out.push((t, psi.clone(), stats));
    }
    Ok(out)
}

/// Observables used for the `|Tr J(γ - P)| <= ‖J‖ D` check: the occupation
/// of site 0 and the one-body operator itself.
fn test_observables(pot: &PotentialSpec) -> Result<Vec<(DMatrix<C64>, f64)>> {
    let s = pot.grid().sites();
    let mut site = DMatrix::<C64>::zeros(s, s);
    site[(0, 0)] = C64::new(1.0, 0.0);
    let h = one_body_operator(pot.grid(), pot)?.to_dense().map(|x| C64::new(x, 0.0));
    Ok([site, h].into_iter().map(|j| {
        let n = operator_norm(&j);
        (j, n)
    }).collect())
}

struct Sampled {
    distance: f64,
    observable_excess: f64,
}

fn compare(psi: &FockVector, phi_t: &LatticeWavefunction, observables: &[(DMatrix<C64>, f64)], cap: usize) -> Result<Sampled> {
    let gamma = reduce(psi, 1, cap)?;
    let proj = ReducedDensityMatrix::product(phi_t, 1)?;
    let distance = trace_distance(&gamma, &proj)?;
    let diff = gamma.sub(&proj)?;
    let mut excess = f64::NEG_INFINITY;
    for (j, norm) in observables {
        let e = observable_expectation(&diff, j)?.norm();
        excess = excess.max(e - norm * distance);
    }
    Ok(Sampled { distance, observable_excess: excess })
}

fn fits_for(rows: &[DistanceRow], times: &[f64], floor: f64) -> Vec<FitEntry> {
    times
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| {
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.t == t).map(|r| (r.n as f64, r.distance)).collect();
            match fit_rate(&pts, floor) {
                Ok(fit) => FitEntry { t, fit: Some(fit), notice: None },
                Err(e) => FitEntry { t, fit: None, notice: Some(e.to_string()) },
            }
        })
        .collect()
}

fn over_budget(exp: &ConvergenceExperiment, sector: Sector) -> Option<String> {
    let cap = exp.tolerances.max_basis_dim.min(crate::fock::MAX_BASIS_DIM);
    match FockBasis::count(exp.pot.grid().sites(), sector) {
        Some(d) if d <= cap => None,
        Some(d) => Some(format!("{sector} basis dimension {d} exceeds the budget {cap}")),
        None => Some(format!("{sector} basis dimension overflows")),
    }
}

/// Factorized initial data `φ^{⊗N}` on fixed-N bases.
pub fn run_factorized(exp: &ConvergenceExperiment) -> Result<ExperimentReport> {
    exp.validate()?;
    if exp.state_kind != StateKind::Factorized {
        return config("run_factorized needs state_kind = factorized");
    }
    let traj = exp.effective_trajectory()?;
    let observables = test_observables(&exp.pot)?;
    let opts = EvolveOptions::with_tol(exp.tolerances.propagator);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &n in &exp.n_list {
        if let Some(reason) = over_budget(exp, Sector::FixedN(n)) {
            skipped.push((n, reason));
            continue;
        }
        let psi0 = factorized_state(&exp.phi0, n)?;
        let h = ManyBodyHamiltonian::new(psi0.basis().clone(), exp.pot.clone(), None)?;
        let e0 = h.energy(&psi0)?;
        for (t, psi, _) in exact_trajectory(&h, &psi0, &exp.sample_times, &opts)? {
            let phi_t = traj.at(t).ok_or_else(|| Error::Invariant(format!("no effective sample at t = {t}")))?;
            let s = compare(&psi, phi_t, &observables, exp.tolerances.dense_cap)?;
            rows.push(DistanceRow {
                n,
                t,
                distance: s.distance,
                leakage: 0.0,
                norm_error: (psi.norm() - 1.0).abs(),
                energy_error: (h.energy(&psi)? - e0).abs(),
                number_error: (number_moment(&psi, 1) - n as f64).abs(),
                observable_excess: s.observable_excess,
                fluctuation: None,
            });
        }
    }
    let floor = exp.floor(0.0);
    let fits = fits_for(&rows, &exp.sample_times, floor);
    Ok(ExperimentReport { state_kind: StateKind::Factorized, rows, fits, skipped, floor, max_leakage: 0.0 })
}

/// Pair potential `g δ_{x,0}` against the cubic equation with `σ = g`.
pub fn run_delta_limit(exp: &ConvergenceExperiment) -> Result<ExperimentReport> {
    let pv = exp.pot.pair_values();
    if pv.iter().skip(1).any(|&v| v != 0.0) {
        return config("the delta-limit run needs an on-site (Kronecker delta) pair potential");
    }
    let mut exp = exp.clone();
    exp.effective = EffectiveKind::Cubic { sigma: pv[0] };
    run_factorized(&exp)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluctuationRow {
    pub n: usize,
    pub t: f64,
    /// `⟨𝒩⟩` from `Σ_x ‖(a_x - √N φ_t(x)) ψ_t‖²`.
    pub number: f64,
    /// `⟨𝒩²⟩` of the fluctuation vector, `‖Σ_x b*_x b_x ψ_t‖²` with
    /// `b_x = a_x - √N φ_t(x)`.
    pub number_sq: f64,
    /// `⟨𝒩^j⟩`, j = 1..=j_max, of `W(-√N φ_t) ψ_t` built explicitly; only
    /// for `N <= weyl_max_n`.
    pub weyl_moments: Option<Vec<f64>>,
    /// Top-sector weight of the explicit conjugation.
    pub weyl_leakage: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub rows: Vec<FluctuationRow>,
    /// Exponential fit of `⟨𝒩⟩(t)` over the positive sample times, per N.
    pub fits: Vec<(usize, Option<ExponentialFit>, Option<String>)>,
    /// `max_N ⟨𝒩⟩ / min_N ⟨𝒩⟩` per positive sample time.
    pub spread: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FluctuationOptions {
    pub j_max: u32,
    pub weyl_max_n: usize,
    /// Extra particle numbers added to the cutoff for the explicit conjugation.
    pub weyl_headroom: usize,
}

impl Default for FluctuationOptions {
    fn default() -> Self {
        FluctuationOptions { j_max: 2, weyl_max_n: 2, weyl_headroom: 12 }
    }
}

/// Coherent initial data `W(√N φ)Ω` on cutoff bases; optionally also the
/// fluctuation moments.
pub fn run_coherent_full(
    exp: &ConvergenceExperiment,
    fluct: Option<&FluctuationOptions>,
) -> Result<(ExperimentReport, Option<FluctuationReport>)> {
    exp.validate()?;
    if exp.state_kind != StateKind::Coherent {
        return config("run_coherent needs state_kind = coherent");
    }
    let traj = exp.effective_trajectory()?;
    let observables = test_observables(&exp.pot)?;
    let opts = EvolveOptions::with_tol(exp.tolerances.propagator);
    let mut rows = Vec::new();
    let mut frows = Vec::new();
    let mut skipped = Vec::new();
    let mut max_leakage: f64 = 0.0;
    for &n in &exp.n_list {
        let n_max = exp.cutoff.n_max(n);
        if let Some(reason) = over_budget(exp, Sector::Cutoff(n_max)) {
            skipped.push((n, reason));
            continue;
        }
        let basis = FockBasis::new(*exp.pot.grid(), Sector::Cutoff(n_max))?;
        let sqrt_n = (n as f64).sqrt();
        let f = exp.phi0.scaled(C64::new(sqrt_n, 0.0));
        let psi0 = match coherent_state(&basis, &f, exp.tolerances.leakage) {
            Ok(p) => p,
            Err(Error::Truncation { leaked, tol }) => {
                skipped.push((n, format!("coherent-state leakage {leaked:e} exceeds {tol:e}")));
                continue;
            }
            Err(e) => return Err(e),
        };
        let leakage = psi0.leaked;
        max_leakage = max_leakage.max(leakage);
        let h = ManyBodyHamiltonian::new(basis.clone(), exp.pot.clone(), Some(n as f64))?;
        let psi0 = psi0.value;
        let norm0 = psi0.norm();
        let e0 = h.energy(&psi0)?;
        let n0 = number_moment(&psi0, 1);
        // The truncated Weyl generator reflects amplitude at the top sector;
        // the explicit conjugation runs on a wider cutoff.
        let wide = match fluct {
            Some(fo) if n <= fo.weyl_max_n => Some(FockBasis::new(*exp.pot.grid(), Sector::Cutoff(n_max + fo.weyl_headroom))?),
            _ => None,
        };
        for (t, psi, _) in exact_trajectory(&h, &psi0, &exp.sample_times, &opts)? {
            let phi_t = traj.at(t).ok_or_else(|| Error::Invariant(format!("no effective sample at t = {t}")))?;
            let s = compare(&psi, phi_t, &observables, exp.tolerances.dense_cap)?;
            let fluctuation = fluctuation_number(&psi, phi_t, n as f64)?;
            rows.push(DistanceRow {
                n,
                t,
                distance: s.distance,
                leakage,
                norm_error: (psi.norm() - norm0).abs(),
                energy_error: (h.energy(&psi)? - e0).abs(),
                number_error: (number_moment(&psi, 1) - n0).abs(),
                observable_excess: s.observable_excess,
                fluctuation: Some(fluctuation),
            });
            if let Some(fo) = fluct {
                let (weyl_moments, weyl_leakage) = if let Some(wide) = &wide {
                    let minus = phi_t.scaled(C64::new(-sqrt_n, 0.0));
                    let w = weyl_apply(&minus, &psi.embed(wide)?, &WeylOptions { tol: 1e-12, leak_tol: exp.tolerances.leakage })?;
                    let moments = (1..=fo.j_max).map(|j| number_moment(&w.value, j)).collect();
                    (Some(moments), Some(w.leaked))
                } else {
                    (None, None)
                };
                let number_sq = fluctuation_second_moment(&psi, phi_t, n as f64)?;
                frows.push(FluctuationRow { n, t, number: fluctuation, number_sq, weyl_moments, weyl_leakage });
            }
        }
    }
    let floor = exp.floor(max_leakage);
    let fits = fits_for(&rows, &exp.sample_times, floor);
    let report = ExperimentReport { state_kind: StateKind::Coherent, rows, fits, skipped, floor, max_leakage };
    let freport = fluct.map(|_| summarize_fluctuations(frows, &exp.sample_times));
    Ok((report, freport))
}

pub fn run_coherent(exp: &ConvergenceExperiment) -> Result<ExperimentReport> {
    Ok(run_coherent_full(exp, None)?.0)
}

pub fn fluctuation_growth(exp: &ConvergenceExperiment, opts: &FluctuationOptions) -> Result<FluctuationReport> {
    Ok(run_coherent_full(exp, Some(opts))?.1.expect("fluctuations requested"))
}

/// `Σ_x ‖(a_x - √N φ(x)) ψ‖² / ‖ψ‖²`, summed site by site so the result
/// carries no cancellation between O(N) terms.
pub fn fluctuation_number(psi: &FockVector, phi: &LatticeWavefunction, n: f64) -> Result<f64> {
    let sqrt_n = n.sqrt();
    let mut total = 0.0;
    for (x, p) in phi.values().iter().enumerate() {
        let lowered = apply_annihilate_site(x, psi)?;
        let shift = p * sqrt_n;
        total += lowered.coeffs().iter().zip(psi.coeffs()).map(|(l, q)| (l - shift * q).norm_sqr()).sum::<f64>();
    }
    Ok(total / psi.norm_sqr())
}

/// `‖Σ_x (a*_x - conj f(x))(a_x - f(x)) ψ‖² / ‖ψ‖²` with `f = √N φ`. The
/// component pushed above the cutoff comes only from `a*(f)` acting on the
/// top sector, and its norm is added back exactly.
pub fn fluctuation_second_moment(psi: &FockVector, phi: &LatticeWavefunction, n: f64) -> Result<f64> {
    let f = phi.scaled(C64::new(n.sqrt(), 0.0));
    let raised = apply_create(&f, psi)?;
    let lowered = apply_annihilate(&f, psi)?;
    let mut chi = apply_number(psi);
    let fsq = f.norm_sqr();
    chi.coeffs_mut()
        .iter_mut()
        .zip(psi.coeffs())
        .zip(raised.value.coeffs().iter().zip(lowered.coeffs()))
        .for_each(|((c, p), (r, l))| *c += p * fsq - r - l);
    Ok((chi.norm_sqr() + raised.leaked * raised.leaked) / psi.norm_sqr())
}

fn summarize_fluctuations(rows: Vec<FluctuationRow>, times: &[f64]) -> FluctuationReport {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.dedup();
    let fits = ns
        .iter()
        .map(|&n| {
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.n == n && r.t > 0.0).map(|r| (r.t, r.number)).collect();
            match fit_exponential(&pts) {
                Ok(f) => (n, Some(f), None),
                Err(e) => (n, None, Some(e.to_string())),
            }
        })
        .collect();
    let spread = times
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| {
            let vals: Vec<f64> = rows.iter().filter(|r| r.t == t).map(|r| r.number).collect();
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            (t, max / min)
        })
        .collect();
    FluctuationReport { rows, fits, spread }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleRow {
    pub t: f64,
    pub max_amplitude_error: f64,
    pub norm_error: f64,
    pub energy_error: f64,
}

/// Krylov propagation of `psi0` against the dense eigendecomposition oracle.
pub fn oracle_comparison(
    h: &ManyBodyHamiltonian,
    psi0: &FockVector,
    times: &[f64],
    opts: &EvolveOptions,
    cap: usize,
) -> Result<Vec<OracleRow>> {
    let dense = dense_matrix(h);
    let e0 = h.energy(psi0)?;
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let exact = dense_expm_oracle(&dense, psi0.coeffs(), t, cap)?;
        let (krylov, _) = evolve(h, psi0.coeffs(), t, opts)?;
        let err = krylov.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let v = FockVector::new(psi0.basis().clone(), krylov)?;
        rows.push(OracleRow {
            t,
            max_amplitude_error: err,
            norm_error: (v.norm() - psi0.norm()).abs(),
            energy_error: (h.energy(&v)? - e0).abs(),
        });
    }
    Ok(rows)
}
