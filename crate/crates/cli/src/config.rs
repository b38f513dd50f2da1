//! Run configuration: one TOML file per run. Physical parameters and
//! tolerances have no defaults; only solver internals do.

use std::fmt;
use std::path::Path;

use meanfield::experiments::CutoffPolicy;
use meanfield::scattering::{RadialFamily, ScatteringOptions};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(field: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { field: field.to_string(), message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EvolveExact,
    EvolveHartree,
    ConvergeFactorized,
    ConvergeCoherent,
    Fluctuations,
    Hierarchy,
    Scattering,
    Probes,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::EvolveExact => "evolve-exact",
            ExperimentKind::EvolveHartree => "evolve-hartree",
            ExperimentKind::ConvergeFactorized => "converge-factorized",
            ExperimentKind::ConvergeCoherent => "converge-coherent",
            ExperimentKind::Fluctuations => "fluctuations",
            ExperimentKind::Hierarchy => "hierarchy",
            ExperimentKind::Scattering => "scattering",
            ExperimentKind::Probes => "probes",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: u32,
    pub experiment: ExperimentKind,
    pub seed: Option<u64>,
    pub grid: Option<GridConfig>,
    pub potential: Option<PotentialConfig>,
    pub initial: Option<InitialConfig>,
    pub tolerances: Option<ToleranceConfig>,
    pub exact: Option<ExactConfig>,
    pub hartree: Option<HartreeConfig>,
    pub convergence: Option<ConvergenceConfig>,
    pub fluctuations: Option<FluctuationConfig>,
    pub hierarchy: Option<HierarchyConfig>,
    pub scattering: Option<ScatteringConfig>,
    pub probes: Option<ProbeConfig>,
    #[serde(default, rename = "assert")]
    pub assertions: Assertions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: i64,
    pub m: i64,
    pub spacing: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub pair: PairConfig,
    /// Rescale the pair potential to this sup norm.
    pub sup_norm: Option<f64>,
    pub external: ExternalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PairConfig {
    Zero,
    Gaussian { amplitude: f64, width: f64 },
    Box { amplitude: f64, radius: f64 },
    KroneckerDelta { strength: f64 },
    /// Even random samples in `[-amplitude, amplitude]`, drawn from the run seed.
    RandomEven { amplitude: f64 },
    /// One value per displacement site.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExternalConfig {
    Zero,
    Values { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub k: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    Packet { center: Vec<f64>, width: f64, k: Vec<i64> },
    PlaneWave { k: Vec<i64> },
    Modes { modes: Vec<ModeConfig> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub propagator: f64,
    pub leakage: f64,
    pub hartree_refine: f64,
    pub hartree_dt: f64,
    pub max_basis_dim: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExactState {
    /// `φ^{⊗n}` from `[initial]`.
    Factorized { n: i64 },
    /// `W(√n φ)Ω` from `[initial]`.
    Coherent { n: i64, cutoff: CutoffPolicy },
    /// Random normalized vector in the fixed-n sector, drawn from the run seed.
    Random { n: i64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub state: ExactState,
    pub times: Vec<f64>,
    /// Compare against the dense eigendecomposition propagator.
    pub oracle: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    Convolution,
    Cubic { sigma: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HartreeConfig {
    pub nonlinearity: NonlinearityConfig,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectiveMode {
    Hartree,
    /// On-site pair potential against the cubic equation with the same coupling.
    DeltaLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub n_list: Vec<i64>,
    pub sample_times: Vec<f64>,
    pub effective: EffectiveMode,
    pub cutoff: Option<CutoffPolicy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationConfig {
    pub j_max: u32,
    pub weyl_max_n: usize,
    pub weyl_headroom: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub k: usize,
    pub t: f64,
    /// Quadrature intervals per residual evaluation, increasing.
    pub node_counts: Vec<usize>,
    pub picard_order: usize,
    pub picard_k_max: usize,
    pub picard_nodes: usize,
    /// Picard time as a fraction of `1/(8‖V‖_∞)`.
    pub picard_time_fraction: f64,
    pub bound_trials: usize,
    pub bound_orders: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatteringConfig {
    pub potential: RadialFamily,
    pub strength: f64,
    pub scale: f64,
    pub options: Option<ScatteringOptions>,
    pub scaled_n: Option<f64>,
    /// Strengths for the `8πa₀ ≤ b₀` family.
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub band: i64,
    pub trials: usize,
    pub kappas: Vec<f64>,
    pub ladder_levels: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    pub max_amplitude_error: Option<f64>,
    pub max_norm_error: Option<f64>,
    pub max_number_error: Option<f64>,
    pub max_energy_error: Option<f64>,
    pub max_mass_drift: Option<f64>,
    pub max_relative_energy_drift: Option<f64>,
    pub strictly_decreasing: Option<bool>,
    pub max_slope: Option<f64>,
    pub max_fit_residual: Option<f64>,
    pub max_leakage: Option<f64>,
    pub max_spread: Option<f64>,
    pub max_growth_residual: Option<f64>,
    pub residual_order: Option<[f64; 2]>,
    pub max_final_residual: Option<f64>,
    pub max_picard_ratio: Option<f64>,
    pub bounds_hold: Option<bool>,
    pub max_closed_form_error: Option<f64>,
    pub max_integral_mismatch: Option<f64>,
    pub max_scaled_error: Option<f64>,
    pub born_bound: Option<bool>,
    pub max_drift: Option<f64>,
    pub max_inflation: Option<f64>,
}

impl Assertions {
    fn set_fields(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        macro_rules! probe {
            ($($f:ident),*) => {$( if self.$f.is_some() { v.push(stringify!($f)); } )*};
        }
        probe!(
            max_amplitude_error, max_norm_error, max_number_error, max_energy_error, max_mass_drift,
            max_relative_energy_drift, strictly_decreasing, max_slope, max_fit_residual, max_leakage, max_spread,
            max_growth_residual, residual_order, max_final_residual, max_picard_ratio, bounds_hold,
            max_closed_form_error, max_integral_mismatch, max_scaled_error, born_bound, max_drift, max_inflation
        );
        v
    }
}

fn allowed_assertions(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::EvolveExact => &["max_amplitude_error", "max_norm_error", "max_number_error", "max_energy_error", "max_leakage"],
        ExperimentKind::EvolveHartree => &["max_mass_drift", "max_relative_energy_drift"],
        ExperimentKind::ConvergeFactorized => {
            &["strictly_decreasing", "max_slope", "max_fit_residual", "max_norm_error", "max_number_error", "max_energy_error"]
        }
        ExperimentKind::ConvergeCoherent => &[
            "strictly_decreasing",
            "max_slope",
            "max_fit_residual",
            "max_leakage",
            "max_norm_error",
            "max_number_error",
            "max_energy_error",
        ],
        ExperimentKind::Fluctuations => &["max_spread", "max_growth_residual", "max_leakage"],
        ExperimentKind::Hierarchy => &["residual_order", "max_final_residual", "max_picard_ratio", "bounds_hold"],
        ExperimentKind::Scattering => &["max_closed_form_error", "max_integral_mismatch", "max_scaled_error", "born_bound"],
        ExperimentKind::Probes => &["max_drift", "max_inflation"],
    }
}

/// Parses and validates; the error names the offending field.
pub fn parse(text: &str) -> Result<Config, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        ConfigError { field, message: e.into_inner().message().trim().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { field: "<file>".into(), message: format!("cannot read {}: {e}", path.display()) })?;
    parse(&text)
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(field, format!("must be positive and finite, got {v}"))
    }
}

fn increasing_times(field: &str, ts: &[f64]) -> Result<(), ConfigError> {
    if ts.is_empty() {
        return bad(field, "must not be empty");
    }
    if ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return bad(field, "times must be finite and non-negative");
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return bad(field, "times must be strictly increasing");
    }
    Ok(())
}

fn require<'a, T>(section: &'a Option<T>, name: &str, kind: ExperimentKind) -> Result<&'a T, ConfigError> {
    section.as_ref().ok_or_else(|| ConfigError {
        field: name.to_string(),
        message: format!("section is required for experiment {}", kind.name()),
    })
}

fn particle_count(field: &str, n: i64) -> Result<usize, ConfigError> {
    if n < 1 {
        return bad(field, format!("must be at least 1, got {n}"));
    }
    Ok(n as usize)
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return bad("schema", format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema));
        }
        let kind = self.experiment;
        let lattice = !matches!(kind, ExperimentKind::Scattering);
        if lattice {
            let g = require(&self.grid, "grid", kind)?;
            self.validate_grid(g)?;
            let p = require(&self.potential, "potential", kind)?;
            self.validate_potential(g, p)?;
        }
        let sections: [(&str, bool, bool); 7] = [
            ("exact", self.exact.is_some(), kind == ExperimentKind::EvolveExact),
            ("hartree", self.hartree.is_some(), kind == ExperimentKind::EvolveHartree),
            (
                "convergence",
                self.convergence.is_some(),
                matches!(kind, ExperimentKind::ConvergeFactorized | ExperimentKind::ConvergeCoherent | ExperimentKind::Fluctuations),
            ),
            ("fluctuations", self.fluctuations.is_some(), kind == ExperimentKind::Fluctuations),
            ("hierarchy", self.hierarchy.is_some(), kind == ExperimentKind::Hierarchy),
            ("scattering", self.scattering.is_some(), kind == ExperimentKind::Scattering),
            ("probes", self.probes.is_some(), kind == ExperimentKind::Probes),
        ];
        for (name, present, needed) in sections {
            if needed && !present {
                return bad(name, format!("section is required for experiment {}", kind.name()));
            }
            if present && !needed {
                return bad(name, format!("section does not apply to experiment {}", kind.name()));
            }
        }
        let needs_initial = matches!(
            kind,
            ExperimentKind::EvolveHartree
                | ExperimentKind::ConvergeFactorized
                | ExperimentKind::ConvergeCoherent
                | ExperimentKind::Fluctuations
                | ExperimentKind::Hierarchy
        ) || matches!(&self.exact, Some(ExactConfig { state: ExactState::Factorized { .. } | ExactState::Coherent { .. }, .. }));
        if needs_initial {
            let init = require(&self.initial, "initial", kind)?;
            self.validate_initial(self.grid.as_ref().unwrap(), init)?;
        } else if self.initial.is_some() {
            return bad("initial", format!("section does not apply to this {} run", kind.name()));
        }
        let needs_tol = matches!(
            kind,
            ExperimentKind::EvolveExact
                | ExperimentKind::EvolveHartree
                | ExperimentKind::ConvergeFactorized
                | ExperimentKind::ConvergeCoherent
                | ExperimentKind::Fluctuations
                | ExperimentKind::Hierarchy
        );
        if needs_tol {
            let t = require(&self.tolerances, "tolerances", kind)?;
            positive("tolerances.propagator", t.propagator)?;
            positive("tolerances.leakage", t.leakage)?;
            positive("tolerances.hartree_refine", t.hartree_refine)?;
            positive("tolerances.hartree_dt", t.hartree_dt)?;
            if t.max_basis_dim == 0 {
                return bad("tolerances.max_basis_dim", "must be positive");
            }
        } else if self.tolerances.is_some() {
            return bad("tolerances", format!("section does not apply to experiment {}", kind.name()));
        }
        if let Some(e) = &self.exact {
            increasing_times("exact.times", &e.times)?;
            if self.assertions.max_amplitude_error.is_some() && !e.oracle {
                return bad("assert.max_amplitude_error", "needs exact.oracle = true");
            }
            match &e.state {
                ExactState::Factorized { n } | ExactState::Random { n } => {
                    particle_count("exact.state.n", *n)?;
                }
                ExactState::Coherent { n, cutoff } => {
                    let n = particle_count("exact.state.n", *n)?;
                    if let CutoffPolicy::Fixed { n_max } = cutoff {
                        if (*n_max as f64) < n as f64 {
                            return bad("exact.state.cutoff.n_max", format!("cutoff {n_max} is below the mean particle number {n}"));
                        }
                    }
                }
            }
        }
        if let Some(h) = &self.hartree {
            increasing_times("hartree.times", &h.times)?;
            if let NonlinearityConfig::Cubic { sigma } = h.nonlinearity {
                if !sigma.is_finite() {
                    return bad("hartree.nonlinearity.sigma", "must be finite");
                }
            }
        }
        if let Some(c) = &self.convergence {
            if c.n_list.len() < 3 && kind != ExperimentKind::Fluctuations {
                return bad("convergence.n_list", "needs at least 3 particle numbers for a rate fit");
            }
            if c.n_list.is_empty() {
                return bad("convergence.n_list", "must not be empty");
            }
            for n in &c.n_list {
                particle_count("convergence.n_list", *n)?;
            }
            if c.n_list.windows(2).any(|w| w[1] <= w[0]) {
                return bad("convergence.n_list", "must be strictly increasing");
            }
            increasing_times("convergence.sample_times", &c.sample_times)?;
            let coherent = kind != ExperimentKind::ConvergeFactorized;
            if coherent && c.cutoff.is_none() {
                return bad("convergence.cutoff", "coherent runs need a cutoff policy");
            }
            if !coherent && c.cutoff.is_some() {
                return bad("convergence.cutoff", "factorized runs use fixed-N bases; remove the cutoff");
            }
            if c.effective == EffectiveMode::DeltaLimit {
                if kind != ExperimentKind::ConvergeFactorized {
                    return bad("convergence.effective", "the delta limit is run with factorized data");
                }
                if !matches!(self.potential.as_ref().map(|p| &p.pair), Some(PairConfig::KroneckerDelta { .. })) {
                    return bad("potential.pair.family", "the delta limit needs family = \"kronecker-delta\"");
                }
            }
        }
        if let Some(f) = &self.fluctuations {
            if f.j_max == 0 || f.j_max > 4 {
                return bad("fluctuations.j_max", format!("must be in 1..=4, got {}", f.j_max));
            }
        }
        if let Some(h) = &self.hierarchy {
            if !(1..=2).contains(&h.k) {
                return bad("hierarchy.k", format!("must be 1 or 2, got {}", h.k));
            }
            positive("hierarchy.t", h.t)?;
            if h.node_counts.len() < 2 || h.node_counts.windows(2).any(|w| w[1] <= w[0]) || h.node_counts[0] == 0 {
                return bad("hierarchy.node_counts", "needs at least two positive, increasing counts");
            }
            if !(1..=2).contains(&h.picard_k_max) {
                return bad("hierarchy.picard_k_max", format!("must be 1 or 2, got {}", h.picard_k_max));
            }
            if h.picard_nodes == 0 {
                return bad("hierarchy.picard_nodes", "must be positive");
            }
            positive("hierarchy.picard_time_fraction", h.picard_time_fraction)?;
            if h.bound_orders.iter().any(|k| !(1..=2).contains(k)) {
                return bad("hierarchy.bound_orders", "orders must be 1 or 2");
            }
        }
        if let Some(s) = &self.scattering {
            let pot = meanfield::scattering::RadialPotential { family: s.potential.clone(), strength: s.strength, scale: s.scale };
            if let Err(e) = pot.validate() {
                return bad("scattering.potential", e.to_string());
            }
            if let Some(n) = s.scaled_n {
                positive("scattering.scaled_n", n)?;
            }
            if let Some(ls) = &s.lambdas {
                if ls.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                    return bad("scattering.lambdas", "strengths must be finite and non-negative");
                }
            }
        }
        if let Some(p) = &self.probes {
            if self.grid.as_ref().map(|g| g.dim) != Some(3) {
                return bad("grid.dim", "probes run on 3D grids");
            }
            if p.band < 0 {
                return bad("probes.band", format!("must be non-negative, got {}", p.band));
            }
            if p.trials < meanfield::probes::MIN_TRIALS {
                return bad("probes.trials", format!("must be at least {}", meanfield::probes::MIN_TRIALS));
            }
            if p.kappas.iter().any(|k| !(0.0..0.5).contains(k)) {
                return bad("probes.kappas", "each kappa must lie in [0, 0.5)");
            }
            if p.ladder_levels == 0 {
                return bad("probes.ladder_levels", "must be positive");
            }
        }
        let allowed = allowed_assertions(kind);
        for f in self.assertions.set_fields() {
            if !allowed.contains(&f) {
                return bad(&format!("assert.{f}"), format!("does not apply to experiment {}", kind.name()));
            }
        }
        Ok(())
    }

    fn validate_grid(&self, g: &GridConfig) -> Result<(), ConfigError> {
        if !(1..=3).contains(&g.dim) {
            return bad("grid.dim", format!("must be 1, 2 or 3, got {}", g.dim));
        }
        if g.m < 2 {
            return bad("grid.m", format!("must be at least 2, got {}", g.m));
        }
        positive("grid.spacing", g.spacing)
    }

    fn validate_potential(&self, g: &GridConfig, p: &PotentialConfig) -> Result<(), ConfigError> {
        let sites = (g.m as usize).pow(g.dim as u32);
        match &p.pair {
            PairConfig::Gaussian { amplitude, width } => {
                if !amplitude.is_finite() {
                    return bad("potential.pair.amplitude", "must be finite");
                }
                positive("potential.pair.width", *width)?;
            }
            PairConfig::Box { amplitude, radius } => {
                if !amplitude.is_finite() {
                    return bad("potential.pair.amplitude", "must be finite");
                }
                positive("potential.pair.radius", *radius)?;
            }
            PairConfig::KroneckerDelta { strength } => {
                if !strength.is_finite() {
                    return bad("potential.pair.strength", "must be finite");
                }
            }
            PairConfig::RandomEven { amplitude } => positive("potential.pair.amplitude", *amplitude)?,
            PairConfig::Table { values } => {
                if values.len() != sites {
                    return bad("potential.pair.values", format!("needs {sites} values, got {}", values.len()));
                }
            }
            PairConfig::Zero => {}
        }
        if let Some(s) = p.sup_norm {
            positive("potential.sup_norm", s)?;
            if matches!(p.pair, PairConfig::Zero) {
                return bad("potential.sup_norm", "cannot rescale the zero potential");
            }
        }
        if let ExternalConfig::Values { values } = &p.external {
            if values.len() != sites {
                return bad("potential.external.values", format!("needs {sites} values, got {}", values.len()));
            }
        }
        Ok(())
    }

    fn validate_initial(&self, g: &GridConfig, init: &InitialConfig) -> Result<(), ConfigError> {
        let dim = g.dim as usize;
        match init {
            InitialConfig::Packet { center, width, k } => {
                if center.len() != dim {
                    return bad("initial.center", format!("needs {dim} components"));
                }
                if k.len() != dim {
                    return bad("initial.k", format!("needs {dim} components"));
                }
                positive("initial.width", *width)?;
            }
            InitialConfig::PlaneWave { k } => {
                if k.len() != dim {
                    return bad("initial.k", format!("needs {dim} components"));
                }
            }
            InitialConfig::Modes { modes } => {
                if modes.is_empty() {
                    return bad("initial.modes", "must not be empty");
                }
                if modes.iter().any(|m| m.k.len() != dim) {
                    return bad("initial.modes.k", format!("needs {dim} components"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = 1
experiment = "scattering"

[scattering]
potential = { family = "square-barrier", v0 = 2.0, radius = 1.0 }
strength = 1.0
scale = 1.0
"#;

    #[test]
    fn minimal_scattering_parses() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Scattering);
    }

    #[test]
    fn negative_m_names_the_field() {
        let text = r#"
schema = 1
experiment = "evolve-hartree"
[grid]
dim = 1
m = -4
spacing = 1.0
"#;
        let err = parse(text).unwrap_err();
        assert_eq!(err.field, "grid.m");
    }

    #[test]
    fn unknown_and_missing_fields() {
        let err = parse(&MINIMAL.replace("scale = 1.0", "scale = 1.0\nspeed = 3")).unwrap_err();
        assert!(err.field.starts_with("scattering"), "{err}");
        let err = parse(&MINIMAL.replace("strength = 1.0\n", "")).unwrap_err();
        assert!(err.message.contains("strength"), "{err}");
        let err = parse(&MINIMAL.replace("schema = 1", "schema = 2")).unwrap_err();
        assert_eq!(err.field, "schema");
    }

    #[test]
    fn assertions_must_match_the_experiment() {
        let err = parse(&format!("{MINIMAL}\n[assert]\nmax_slope = -0.5\n")).unwrap_err();
        assert_eq!(err.field, "assert.max_slope");
        assert!(parse(&format!("{MINIMAL}\n[assert]\nborn_bound = true\n")).is_ok());
    }
}
