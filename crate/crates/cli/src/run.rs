//! Experiment bodies: each turns a validated config into tables, a summary
//! and the outcome of the configured assertions.

use meanfield::experiments::{
    exact_trajectory, oracle_comparison, run_coherent_full, run_delta_limit, run_factorized, ConvergenceExperiment,
    EffectiveKind, ExperimentReport, FluctuationOptions, FluctuationReport, StateKind, Tolerances,
};
use meanfield::fock::{coherent_state, factorized_state, number_moment, FockBasis, FockVector, ManyBodyHamiltonian, Sector};
use meanfield::hartree::{EffectiveEquationConfig, HartreeOptions, HartreeSolver, Trajectory};
use meanfield::hierarchy::{collision_bound_trials, contraction_time, infinite_hierarchy_residual, picard_iterate, DensityFamily};
use meanfield::lattice::{Grid, LatticeWavefunction, PairFamily, PotentialSpec};
use meanfield::probes::{default_ladder, probe_nabla_dot, probe_poincare, probe_sobolev_l1};
use meanfield::scattering::{scaled_scattering_length, solve_zero_energy, square_barrier_a0, RadialFamily, RadialPotential};
use meanfield::{Error, Result};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::*;

/// Streams of the run seed.
const POTENTIAL_STREAM: u64 = 1;
const STATE_STREAM: u64 = 2;

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Opt(Option<f64>),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::Opt(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$(Cell::from($x)),*] };
}

#[derive(Clone, Debug)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &'static str, header: &[&'static str]) -> Self {
        Table { name, header: header.to_vec(), rows: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Value,
    pub checks: Vec<Check>,
    /// Floors and leakage actually used.
    pub floors: Value,
    /// Parts of the run dropped because they exceeded a resource budget.
    pub budget: Vec<String>,
}

impl Outcome {
    fn new(summary: Value) -> Self {
        Outcome { tables: Vec::new(), summary, checks: Vec::new(), floors: json!({}), budget: Vec::new() }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    fn at_most(&mut self, name: &str, bound: Option<f64>, value: f64) {
        if let Some(b) = bound {
            self.check(name, value <= b, format!("{value:e} <= {b:e}"));
        }
    }

    fn below(&mut self, name: &str, bound: Option<f64>, value: f64) {
        if let Some(b) = bound {
            self.check(name, value < b, format!("{value:e} < {b:e}"));
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub seed: u64,
    pub dense_cap: usize,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn build_grid(cfg: &Config) -> Result<Grid> {
    let g = cfg.grid.as_ref().ok_or_else(|| Error::Config("missing [grid]".into()))?;
    Grid::new(g.dim as usize, g.m as usize, g.spacing)
}

pub fn build_potential(cfg: &Config, grid: Grid, seed: u64) -> Result<PotentialSpec> {
    let p = cfg.potential.as_ref().ok_or_else(|| Error::Config("missing [potential]".into()))?;
    let external = match &p.external {
        ExternalConfig::Zero => vec![0.0; grid.sites()],
        ExternalConfig::Values { values } => values.clone(),
    };
    let family = |f: PairFamily| PotentialSpec::from_family(grid, &f, external.clone());
    let pot = match &p.pair {
        PairConfig::Zero => PotentialSpec::zero(grid).with_external(external.clone())?,
        PairConfig::Gaussian { amplitude, width } => family(PairFamily::Gaussian { amplitude: *amplitude, width: *width })?,
        PairConfig::Box { amplitude, radius } => family(PairFamily::Box { amplitude: *amplitude, radius: *radius })?,
        PairConfig::KroneckerDelta { strength } => family(PairFamily::KroneckerDelta { strength: *strength })?,
        PairConfig::RandomEven { amplitude } => {
            PotentialSpec::random_even(grid, *amplitude, &mut seeded(seed, POTENTIAL_STREAM)).with_external(external.clone())?
        }
        PairConfig::Table { values } => PotentialSpec::new(grid, values.clone(), external.clone())?,
    };
    match p.sup_norm {
        Some(s) => pot.with_sup_norm(s),
        None => Ok(pot),
    }
}

pub fn build_initial(cfg: &Config, grid: Grid) -> Result<LatticeWavefunction> {
    let init = cfg.initial.as_ref().ok_or_else(|| Error::Config("missing [initial]".into()))?;
    let phi = match init {
        InitialConfig::Packet { center, width, k } => LatticeWavefunction::packet(grid, center, *width, k)?,
        InitialConfig::PlaneWave { k } => LatticeWavefunction::plane_wave(grid, k),
        InitialConfig::Modes { modes } => {
            let m: Vec<(Vec<i64>, C64)> = modes.iter().map(|m| (m.k.clone(), C64::new(m.re, m.im))).collect();
            LatticeWavefunction::from_modes(grid, &m)?
        }
    };
    phi.normalized()
}

pub fn tolerances(cfg: &Config, settings: &RunSettings) -> Tolerances {
    let t = cfg.tolerances.as_ref().expect("validated config carries tolerances");
    Tolerances {
        propagator: t.propagator,
        leakage: t.leakage,
        hartree_refine: t.hartree_refine,
        hartree_dt: t.hartree_dt,
        dense_cap: settings.dense_cap,
        max_basis_dim: usize::try_from(t.max_basis_dim).unwrap_or(usize::MAX),
    }
}

fn hartree_options(tol: &Tolerances) -> HartreeOptions {
    HartreeOptions { refine_tol: tol.hartree_refine, min_dt: 1e-9 }
}

pub fn execute(cfg: &Config, settings: &RunSettings) -> Result<Outcome> {
    match cfg.experiment {
        ExperimentKind::EvolveExact => evolve_exact(cfg, settings),
        ExperimentKind::EvolveHartree => evolve_hartree(cfg, settings),
        ExperimentKind::ConvergeFactorized | ExperimentKind::ConvergeCoherent => converge(cfg, settings),
        ExperimentKind::Fluctuations => fluctuations(cfg, settings),
        ExperimentKind::Hierarchy => hierarchy(cfg, settings),
        ExperimentKind::Scattering => scattering(cfg),
        ExperimentKind::Probes => probes(cfg, settings),
    }
}

fn budget_check(grid: &Grid, sector: Sector, tol: &Tolerances) -> Result<()> {
    match FockBasis::count(grid.sites(), sector) {
        Some(d) if d <= tol.max_basis_dim => Ok(()),
        Some(d) => Err(Error::Budget(format!("{sector} basis dimension {d} exceeds max_basis_dim {}", tol.max_basis_dim))),
        None => Err(Error::Budget(format!("{sector} basis dimension overflows"))),
    }
}

fn random_state(basis: std::sync::Arc<FockBasis>, seed: u64) -> Result<FockVector> {
    let mut rng = seeded(seed, STATE_STREAM);
    let coeffs: Vec<C64> = (0..basis.dim())
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(re, im)
        })
        .collect();
    let v = FockVector::new(basis, coeffs)?;
    let norm = v.norm();
    Ok(v.scaled(C64::new(1.0 / norm, 0.0)))
}

fn evolve_exact(cfg: &Config, settings: &RunSettings) -> Result<Outcome> {
    let ex = cfg.exact.as_ref().unwrap();
    let grid = build_grid(cfg)?;
    let pot = build_potential(cfg, grid, settings.seed)?;
    let tol = tolerances(cfg, settings);
    let (psi0, h, leakage, state) = match &ex.state {
        ExactState::Factorized { n } => {
            let n = *n as usize;
            budget_check(&grid, Sector::FixedN(n), &tol)?;
            let psi = factorized_state(&build_initial(cfg, grid)?, n)?;
            let h = ManyBodyHamiltonian::new(psi.basis().clone(), pot.clone(), None)?;
            (psi, h, 0.0, "factorized")
        }
        ExactState::Random { n } => {
            let n = *n as usize;
            budget_check(&grid, Sector::FixedN(n), &tol)?;
            let basis = FockBasis::new(grid, Sector::FixedN(n))?;
            let psi = random_state(basis.clone(), settings.seed)?;
            let h = ManyBodyHamiltonian::new(basis, pot.clone(), None)?;
            (psi, h, 0.0, "random")
        }
        ExactState::Coherent { n, cutoff } => {
            let n = *n as usize;
            let n_max = cutoff.n_max(n);
            budget_check(&grid, Sector::Cutoff(n_max), &tol)?;
            let basis = FockBasis::new(grid, Sector::Cutoff(n_max))?;
            let f = build_initial(cfg, grid)?.scaled(C64::new((n as f64).sqrt(), 0.0));
            let psi = coherent_state(&basis, &f, tol.leakage)?;
            let h = ManyBodyHamiltonian::new(basis, pot.clone(), Some(n as f64))?;
            (psi.value, h, psi.leaked, "coherent")
        }
    };
    let opts = meanfield::propagate::EvolveOptions::with_tol(tol.propagator);
    let norm0 = psi0.norm();
    let number0 = number_moment(&psi0, 1);
    let energy0 = h.energy(&psi0)?;
    let traj = exact_trajectory(&h, &psi0, &ex.times, &opts)?;
    let oracle = if ex.oracle { Some(oracle_comparison(&h, &psi0, &ex.times, &opts, settings.dense_cap)?) } else { None };

    let mut table = Table::new(
        "trajectory",
        &["t", "norm", "number", "energy", "norm_error", "number_error", "energy_error", "amplitude_error", "substeps", "matvecs"],
    );
    let (mut max_norm, mut max_number, mut max_energy, mut max_amp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (i, (t, psi, stats)) in traj.iter().enumerate() {
        let norm = psi.norm();
        let number = number_moment(psi, 1);
        let energy = h.energy(psi)?;
        let amp = oracle.as_ref().map(|o| o[i].max_amplitude_error);
        let (ne, nu, en) = ((norm - norm0).abs(), (number - number0).abs(), (energy - energy0).abs());
        max_norm = max_norm.max(ne);
        max_number = max_number.max(nu);
        max_energy = max_energy.max(en);
        max_amp = max_amp.max(amp.unwrap_or(0.0));
        table.rows.push(row![*t, norm, number, energy, ne, nu, en, amp, stats.substeps, stats.matvecs]);
    }
    let mut out = Outcome::new(json!({
        "state": state,
        "dimension": h.basis().dim(),
        "sector": h.basis().sector().to_string(),
        "leakage": leakage,
        "max_norm_error": max_norm,
        "max_number_error": max_number,
        "max_energy_error": max_energy,
        "max_amplitude_error": oracle.as_ref().map(|_| max_amp),
    }));
    out.floors = json!({ "propagator": tol.propagator, "leakage": leakage });
    let a = &cfg.assertions;
    out.at_most("max_amplitude_error", a.max_amplitude_error, max_amp);
    out.at_most("max_norm_error", a.max_norm_error, max_norm);
    out.at_most("max_number_error", a.max_number_error, max_number);
    out.at_most("max_energy_error", a.max_energy_error, max_energy);
    out.below("max_leakage", a.max_leakage, leakage);
    out.tables.push(table);
    Ok(out)
}

fn effective_config(pot: &PotentialSpec, nl: &NonlinearityConfig) -> Result<EffectiveEquationConfig> {
    match nl {
        NonlinearityConfig::Convolution => Ok(EffectiveEquationConfig::hartree(pot)),
        NonlinearityConfig::Cubic { sigma } => EffectiveEquationConfig::cubic(*pot.grid(), pot.external_values().to_vec(), *sigma),
    }
}

fn evolve_hartree(cfg: &Config, settings: &RunSettings) -> Result<Outcome> {
    let hc = cfg.hartree.as_ref().unwrap();
    let grid = build_grid(cfg)?;
    let pot = build_potential(cfg, grid, settings.seed)?;
    let tol = tolerances(cfg, settings);
    let phi0 = build_initial(cfg, grid)?;
    let solver = HartreeSolver::new(effective_config(&pot, &hc.nonlinearity)?)?;
    let traj = solver.trajectory(&phi0, &hc.times, tol.hartree_dt, &hartree_options(&tol))?;
    let s0 = &traj.samples[0];
    let mut table = Table::new("trajectory", &["t", "mass", "energy", "dt", "mass_drift", "relative_energy_drift"]);
    let scale = s0.energy.abs().max(f64::MIN_POSITIVE);
    for s in &traj.samples {
        table.rows.push(row![s.t, s.mass, s.energy, s.dt, (s.mass - s0.mass).abs(), (s.energy - s0.energy).abs() / scale]);
    }
    let mass = traj.max_mass_drift();
    let energy = traj.max_relative_energy_drift();
    let mut out = Outcome::new(json!({
        "samples": traj.samples.len(),
        "initial_energy": s0.energy,
        "max_mass_drift": mass,
        "max_relative_energy_drift": energy,
    }));
    out.floors = json!({ "hartree_refine": tol.hartree_refine });
    out.at_most("max_mass_drift", cfg.assertions.max_mass_drift, mass);
    out.at_most("max_relative_energy_drift", cfg.assertions.max_relative_energy_drift, energy);
    out.tables.push(table);
    Ok(out)
}

fn convergence_experiment(cfg: &Config, settings: &RunSettings, state_kind: StateKind) -> Result<ConvergenceExperiment> {
    let c = cfg.convergence.as_ref().unwrap();
    let grid = build_grid(cfg)?;
    let pot = build_potential(cfg, grid, settings.seed)?;
    Ok(ConvergenceExperiment {
        phi0: build_initial(cfg, grid)?,
        pot,
        n_list: c.n_list.iter().map(|&n| n as usize).collect(),
        sample_times: c.sample_times.clone(),
        state_kind,
        cutoff: c.cutoff.unwrap_or(meanfield::experiments::CutoffPolicy::Formula),
        tolerances: tolerances(cfg, settings),
        effective: EffectiveKind::Hartree,
    })
}

fn distance_tables(report: &ExperimentReport) -> (Table, Table) {
    let mut d = Table::new(
        "distances",
        &[
            "n",
            "t",
            "distance",
            "leakage",
            "norm_error",
            "energy_error",
            "number_error",
            "observable_excess",
            "fluctuation",
        ],
    );
    for r in &report.rows {
        d.rows.push(row![
            r.n,
            r.t,
            r.distance,
            r.leakage,
            r.norm_error,
            r.energy_error,
            r.number_error,
            r.observable_excess,
            r.fluctuation
        ]);
    }
    let mut f = Table::new("fits", &["t", "slope", "intercept", "residual", "n_points", "n_excluded", "floor", "notice"]);
    for e in &report.fits {
        match &e.fit {
            Some(fit) => f.rows.push(row![
                e.t,
                fit.slope,
                fit.intercept,
                fit.residual,
                fit.n_points,
                fit.excluded.len(),
                fit.floor,
                e.notice.as_deref().unwrap_or("")
            ]),
            None => f.rows.push(row![e.t, None, None, None, 0usize, 0usize, report.floor, e.notice.as_deref().unwrap_or("")]),
        }
    }
    (d, f)
}

fn convergence_checks(out: &mut Outcome, a: &Assertions, report: &ExperimentReport) {
    if a.strictly_decreasing == Some(true) {
        let mut bad = Vec::new();
        for e in &report.fits {
            let mut ds = report.distances_at(e.t);
            ds.sort_by_key(|p| p.0);
            if let Some(w) = ds.windows(2).find(|w| w[1].1 >= w[0].1) {
                bad.push(format!("t={}: D({})={:e} >= D({})={:e}", e.t, w[1].0, w[1].1, w[0].0, w[0].1));
            }
        }
        let detail = if bad.is_empty() { "distance strictly decreasing in N".to_string() } else { bad.join("; ") };
        out.check("strictly_decreasing", bad.is_empty(), detail);
    }
    for e in &report.fits {
        match &e.fit {
            Some(fit) => {
                out.at_most(&format!("max_slope(t={})", e.t), a.max_slope, fit.slope);
                out.below(&format!("max_fit_residual(t={})", e.t), a.max_fit_residual, fit.residual);
            }
            None => {
                let msg = e.notice.clone().unwrap_or_else(|| "no fit".into());
                if a.max_slope.is_some() {
                    out.check(&format!("max_slope(t={})", e.t), false, msg.clone());
                }
                if a.max_fit_residual.is_some() {
                    out.check(&format!("max_fit_residual(t={})", e.t), false, msg);
                }
            }
        }
    }
    let max = |f: fn(&meanfield::experiments::DistanceRow) -> f64| report.rows.iter().map(f).fold(0.0, f64::max);
    out.at_most("max_norm_error", a.max_norm_error, max(|r| r.norm_error));
    out.at_most("max_number_error", a.max_number_error, max(|r| r.number_error));
    out.at_most("max_energy_error", a.max_energy_error, max(|r| r.energy_error));
    out.below("max_leakage", a.max_leakage, report.max_leakage);
}

fn report_summary(report: &ExperimentReport) -> Value {
    json!({
        "state_kind": report.state_kind,
        "fits": report.fits,
        "skipped": report.skipped,
        "floor": report.floor,
        "max_leakage": report.max_leakage,
        "max_observable_excess": report.rows.iter().map(|r| r.observable_excess).fold(f64::NEG_INFINITY, f64::max),
    })
}

fn converge(cfg: &Config, settings: &RunSettings) -> Result<Outcome> {
    let c = cfg.convergence.as_ref().unwrap();
    let report = match cfg.experiment {
        ExperimentKind::ConvergeFactorized => {
            let exp = convergence_experiment(cfg, settings, StateKind::Factorized)?;
            match c.effective {
                EffectiveMode::Hartree => run_factorized(&exp)?,
                EffectiveMode::DeltaLimit => run_delta_limit(&exp)?,
            }
        }
        _ => {
            let exp = convergence_experiment(cfg, settings, StateKind::Coherent)?;
            run_coherent_full(&exp, None)?.0
        }
    };
    let mut out = Outcome::new(report_summary(&report));
    out.floors = json!({ "floor": report.floor, "max_leakage": report.max_leakage, "propagator": tolerances(cfg, settings).propagator });
    out.budget = report.skipped.iter().map(|(n, r)| format!("N={n}: {r}")).collect();
    convergence_checks(&mut out, &cfg.assertions, &report);
    let (d, f) = distance_tables(&report);
    out.tables.push(d);
    out.tables.push(f);
    Ok(out)
}

fn fluctuation_tables(fr: &FluctuationReport, j_max: u32) -> Vec<Table> {
    let mut header: Vec<&'static str> = vec!["n", "t", "number", "number_sq", "weyl_leakage"];
    const WEYL: [&str; 4] = ["weyl_moment_1", "weyl_moment_2", "weyl_moment_3", "weyl_moment_4"];
    header.extend(WEYL.iter().take(j_max as usize));
    let mut rows = Table::new("fluctuations", &header);
    for r in &fr.rows {
        let mut v = row![r.n, r.t, r.number, r.number_sq, r.weyl_leakage];
        for j in 0..j_max as usize {
            v.push(Cell::Opt(r.weyl_moments.as_ref().map(|m| m[j])));
        }
        rows.rows.push(v);
    }
    let mut growth = Table::new("growth", &["n", "c", "k", "relative_residual", "n_points", "notice"]);
    for (n, fit, notice) in &fr.fits {
        let notice = notice.as_deref().unwrap_or("");
        match fit {
            Some(f) => growth.rows.push(row![*n, f.c, f.k, f.relative_residual, f.n_points, notice]),
            None => growth.rows.push(row![*n, None, None, None, 0usize, notice]),
        }
    }
    let mut spread = Table::new("spread", &["t", "spread"]);
    for (t, s) in &fr.spread {
        spread.rows.push(row![*t, *s]);
    }
    vec![rows, growth, spread]
}

fn fluctuations(cfg: &Config, settings: &RunSettings) -> Result<Outcome> {
    let fc = cfg.fluctuations.as_ref().unwrap();
    let exp = convergence_experiment(cfg, settings, StateKind::Coherent)?;
    let opts = FluctuationOptions { j_max: fc.j_max, weyl_max_n: fc.weyl_max_n, weyl_headroom: fc.weyl_headroom };
    let (report, fr) = run_coherent_full(&exp, Some(&opts))?;
    let fr = fr.expect("fluctuation report requested");
    let mut summary = report_summary(&report);
    summary["fluctuation_fits"] = json!(fr.fits);
    summary["spread"] = json!(fr.spread);
    let weyl_mismatch = fr
        .rows
        .iter()
        .filter_map(|r| {
            r.weyl_moments.as_ref().map(|m| {
                let d1 = (m[0] - r.number).abs();
                let d2 = m.get(1).map(|x| (x - r.number_sq).abs()).unwrap_or(0.0);
                d1.max(d2)
            })
        })
        .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
    summary["max_weyl_mismatch"] = json!(weyl_mismatch);
    let mut out = Outcome::new(summary);
    out.floors = json!({ "floor": report.floor, "max_leakage": report.max_leakage, "propagator": exp.tolerances.propagator });
    out.budget = report.skipped.iter().map(|(n, r)| format!("N={n}: {r}")).collect();
    let a = &cfg.assertions;
    for (t, s) in &fr.spread {
        out.below(&format!("max_spread(t={t})"), a.max_spread, *s);
    }
    if let Some(b) = a.max_growth_residual {
        for (n, fit, notice) in &fr.fits {
            match fit {
                Some(f) => out.below(&format!("max_growth_residual(N={n})"), Some(b), f.relative_residual),
                None => out.check(&format!("max_growth_residual(N={n})"), false, notice.clone().unwrap_or_default()),
            }
        }
    }
    out.below("max_leakage", a.max_leakage, report.max_leakage);
    let (d, f) = distance_tables(&report);
    out.tables.push(d);
    out.tables.push(f);
    out.tables.extend(fluctuation_tables(&fr, fc.j_max));
    Ok(out)
}

/// Hartree samples on the uniform nodes `i t / n`, i = 0..=n.
fn uniform_trajectory(pot: &PotentialSpec, phi0: &LatticeWavefunction, t: f64, n: usize, tol: &Tolerances) -> Result<Trajectory> {
    let solver = HartreeSolver::new(EffectiveEquationConfig::hartree(pot))?;
    let times: Vec<f64> = (1..=n).map(|i| t * i as f64 / n as f64).collect();
    solver.trajectory(phi0, &times, (t / n as f64).min(tol.hartree_dt), &hartree_options(tol))
}

fn hierarchy(cfg: &Config, settings: &RunSettings) -> Result<Outcome> {
    let hc = cfg.hierarchy.as_ref().unwrap();
    let grid = build_grid(cfg)?;
    let pot = build_potential(cfg, grid, settings.seed)?;
    let phi0 = build_initial(cfg, grid)?;
    let tol = tolerances(cfg, settings);

    let mut residuals = Table::new("residuals", &["nodes", "dt", "residual", "order"]);
    let mut values: Vec<(usize, f64)> = Vec::new();
    let mut orders = Vec::new();
    for &n in &hc.node_counts {
        let traj = uniform_trajectory(&pot, &phi0, hc.t, n, &tol)?;
        let r = infinite_hierarchy_residual(&pot, &traj, hc.k, hc.t)?;
        let order = values.last().map(|&(n0, r0)| (r0 / r).ln() / (n as f64 / n0 as f64).ln());
        if let Some(o) = order {
            orders.push(o);
        }
        residuals.rows.push(row![n, hc.t / n as f64, r, order]);
        values.push((n, r));
    }

    let t0 = contraction_time(&pot)?;
    let tp = hc.picard_time_fraction * t0;
    let closure = uniform_trajectory(&pot, &phi0, tp, hc.picard_nodes, &tol)?;
    let family0 = DensityFamily::factorized(&phi0, hc.picard_k_max)?;
    let picard = picard_iterate(&family0, &pot, &closure, tp, hc.picard_order)?.report;
    let mut ptable = Table::new("picard", &["iteration", "increment"]);
    for (i, inc) in picard.increments.iter().enumerate() {
        ptable.rows.push(row![i, *inc]);
    }
    let max_ratio = picard.ratios.iter().cloned().fold(0.0, f64::max);

    let bounds = collision_bound_trials(&pot, &hc.bound_orders, hc.bound_trials, settings.seed)?;
    let mut btable = Table::new("bounds", &["trial", "kind", "k", "lhs", "rhs", "holds"]);
    for b in &bounds {
        btable.rows.push(row![b.trial, b.kind, b.k, b.lhs, b.rhs, b.holds()]);
    }
    let failed = bounds.iter().filter(|b| !b.holds()).count();

    let final_residual = values.last().map(|v| v.1).unwrap_or(f64::NAN);
    let mut out = Outcome::new(json!({
        "k": hc.k,
        "t": hc.t,
        "residuals": values,
        "orders": orders,
        "contraction_time": t0,
        "picard_time": tp,
        "picard": picard,
        "max_picard_ratio": max_ratio,
        "bound_rows": bounds.len(),
        "bound_failures": failed,
    }));
    out.floors = json!({ "hartree_refine": tol.hartree_refine });
    let a = &cfg.assertions;
    if let Some([lo, hi]) = a.residual_order {
        let ok = !orders.is_empty() && orders.iter().all(|o| (lo..=hi).contains(o));
        out.check("residual_order", ok, format!("orders {orders:?} within [{lo}, {hi}]"));
    }
    out.at_most("max_final_residual", a.max_final_residual, final_residual);
    if let Some(b) = a.max_picard_ratio {
        let ok = !picard.ratios.is_empty() && max_ratio <= b;
        out.check("max_picard_ratio", ok, format!("ratios {:?} <= {b}", picard.ratios));
    }
    if a.bounds_hold == Some(true) {
        out.check("bounds_hold", failed == 0, format!("{failed} of {} rows violate their bound", bounds.len()));
    }
    out.tables.push(residuals);
    out.tables.push(ptable);
    out.tables.push(btable);
    Ok(out)
}

fn scattering(cfg: &Config) -> Result<Outcome> {
    let sc = cfg.scattering.as_ref().unwrap();
    let pot = RadialPotential { family: sc.potential.clone(), strength: sc.strength, scale: sc.scale };
    let opts = sc.options.clone().unwrap_or_default();
    let res = solve_zero_energy(&pot, &opts)?;
    let closed_form = match sc.potential {
        RadialFamily::SquareBarrier { v0, radius } if sc.scale == 1.0 => Some(square_barrier_a0(sc.strength * v0, radius)),
        _ => None,
    };
    let closed_form_error = closed_form.map(|a| (res.a0 - a).abs() / a.abs());
    let mismatch = res.integral_mismatch();
    let scaled = sc.scaled_n.map(|n| scaled_scattering_length(&pot, n, &opts)).transpose()?;

    let mut profile = Table::new("profile", &["r", "f"]);
    for (r, f) in res.r.iter().zip(&res.f_profile) {
        profile.rows.push(row![*r, *f]);
    }
    let mut family = Table::new("family", &["lambda", "a0", "b0", "eight_pi_a0", "born_bound"]);
    let mut born_ok = true;
    for &l in sc.lambdas.as_deref().unwrap_or(&[]) {
        let p = pot.with_strength(l * sc.strength);
        let r = solve_zero_energy(&p, &opts)?;
        let lhs = 8.0 * std::f64::consts::PI * r.a0;
        let holds = lhs <= r.b0 * (1.0 + 1e-12);
        born_ok &= holds;
        family.rows.push(row![l, r.a0, r.b0, lhs, holds]);
    }

    let mut out = Outcome::new(json!({
        "a0": res.a0,
        "a0_integral": res.a0_integral,
        "b0": res.b0,
        "rho": res.rho,
        "closed_form_a0": closed_form,
        "closed_form_relative_error": closed_form_error,
        "integral_mismatch": mismatch,
        "r_max": res.r_max,
        "dr": res.dr,
        "refinements": res.refinements,
        "fit_residual": res.fit_residual,
        "decay_sigma": res.decay_sigma,
        "warnings": res.warnings,
        "scaled": scaled,
    }));
    out.floors = json!({ "refine_tol": opts.refine_tol, "fit_tol": opts.fit_tol });
    let a = &cfg.assertions;
    if let Some(b) = a.max_closed_form_error {
        match closed_form_error {
            Some(e) => out.at_most("max_closed_form_error", Some(b), e),
            None => out.check("max_closed_form_error", false, "no closed form for this potential".into()),
        }
    }
    out.at_most("max_integral_mismatch", a.max_integral_mismatch, mismatch);
    if let Some(b) = a.max_scaled_error {
        match &scaled {
            Some(s) => out.at_most("max_scaled_error", Some(b), s.relative_error),
            None => out.check("max_scaled_error", false, "scaled_n not configured".into()),
        }
    }
    if a.born_bound == Some(true) {
        let n = family.rows.len();
        out.check("born_bound", n > 0 && born_ok, format!("8πa₀ <= b₀ on {n} strengths"));
    }
    out.tables.push(profile);
    if sc.lambdas.is_some() {
        out.tables.push(family);
    }
    Ok(out)
}

fn probes(cfg: &Config, settings: &RunSettings) -> Result<Outcome> {
    let pc = cfg.probes.as_ref().unwrap();
    let grid = build_grid(cfg)?;
    let pot = build_potential(cfg, grid, settings.seed)?;
    let seed = settings.seed;
    let sob = probe_sobolev_l1(&pot, pc.band, pc.trials, seed)?;
    let nab = probe_nabla_dot(&pot, pc.band, pc.trials, seed)?;
    let mut stab = Table::new("stability", &["probe", "trials", "max_ratio", "doubled_max_ratio", "drift"]);
    stab.rows.push(row!["sobolev-l1", sob.trials, sob.max_ratio, sob.doubled_max_ratio, sob.drift]);
    stab.rows.push(row!["nabla-dot", nab.trials, nab.max_ratio, nab.doubled_max_ratio, nab.drift]);
    let ladder = default_ladder(&grid, pc.ladder_levels);
    let mut ladder_table = Table::new("poincare", &["kappa", "alpha", "max_numerator", "max_ratio", "doubled_max_ratio"]);
    let mut tables = Vec::new();
    let mut max_drift = sob.drift.max(nab.drift);
    let mut max_inflation = 0.0f64;
    for &kappa in &pc.kappas {
        let t = probe_poincare(&grid, &ladder, kappa, pc.band, pc.trials, seed)?;
        for r in &t.rows {
            ladder_table.rows.push(row![kappa, r.alpha, r.max_numerator, r.max_ratio, r.doubled_max_ratio]);
        }
        max_drift = max_drift.max(t.max_drift);
        max_inflation = max_inflation.max(t.max_inflation());
        tables.push(t);
    }
    let finite = [sob.max_ratio, nab.max_ratio].iter().all(|x| x.is_finite())
        && tables.iter().all(|t| t.rows.iter().all(|r| r.max_ratio.is_finite()));
    let mut out = Outcome::new(json!({
        "sobolev_l1": sob,
        "nabla_dot": nab,
        "poincare": tables,
        "max_drift": max_drift,
        "max_inflation": max_inflation,
        "finite": finite,
    }));
    out.floors = json!({ "spacing": grid.spacing(), "smallest_alpha": ladder.first() });
    let a = &cfg.assertions;
    if let Some(b) = a.max_drift {
        out.check("max_drift", finite && max_drift < b, format!("{max_drift} < {b}, ratios finite: {finite}"));
    }
    out.at_most("max_inflation", a.max_inflation, max_inflation);
    out.tables.push(stab);
    out.tables.push(ladder_table);
    Ok(out)
}
