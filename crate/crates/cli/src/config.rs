//! Scenario files.
//!
//! A scenario is a TOML document. Every table rejects unknown keys, and
//! `--override key=value` pairs are applied to the parsed document before it
//! is checked, so an override can set any leaf, including array entries
//! addressed by index (`model.species.0.cap=2`).

use gclab::dynamics::{BasisMode, EquilibrationConfig, InitialState, Statement5Config};
use gclab::ensembles::{EnsembleSpec, Window};
use gclab::model::{
    binding_model, hard_core_chain, Interaction, LatticeFockModel, ModelSpec, Perturbation, Species,
};
use gclab::qcore::{c, Operator, DEFAULT_MAX_DIM};
use gclab::stoich::{check_reaction_energies, solve_ground_energies, Reaction, ReactionNetwork};
use gclab::condwf::{MixtureMode, Statement3Config, Statement4Config, TypicalityConfig, DEFAULT_ETA};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: Option<ModelConfig>,
    pub region: Option<RegionConfig>,
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Exactly one of `chain`, `binding` and `species` describes the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub chain: Option<ChainConfig>,
    pub binding: Option<BindingConfig>,
    pub species: Option<Vec<SpeciesConfig>>,
    #[serde(default)]
    pub reactions: Vec<ReactionConfig>,
    /// Ground energies; solved from the reaction energies when absent.
    pub e0: Option<Vec<f64>>,
    #[serde(default)]
    pub interactions: Vec<InteractionConfig>,
    pub perturbation: Option<PerturbationConfig>,
    pub max_dim: Option<usize>,
}

/// One hard-core species on a chain of sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub onsite: Vec<f64>,
    #[serde(default)]
    pub hopping: f64,
}

/// `A + B ⇌ C` on one hard-core mode per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingConfig {
    pub omega: [f64; 3],
    pub released_energy: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub name: String,
    pub cap: u32,
    /// On-site energies of a chain; alternative to `h1`.
    pub onsite: Option<Vec<f64>>,
    #[serde(default)]
    pub hopping: f64,
    /// Real symmetric one-particle Hamiltonian, row by row.
    pub h1: Option<Vec<Vec<f64>>>,
    pub regions: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionConfig {
    pub lhs: Vec<u32>,
    pub rhs: Vec<u32>,
    #[serde(default)]
    pub released_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionConfig {
    pub reaction: usize,
    pub amplitude: f64,
    pub site_tuples: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub strength: f64,
    pub seed: u64,
}

/// Exactly one of `sites`, `modes` and `label` selects the region S.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub sites: Option<Vec<usize>>,
    pub modes: Option<Vec<usize>>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// `[upper − width, upper]` per conserved quantity, energy last.
    pub windows: Vec<WindowConfig>,
    /// Explicit moment targets; the micro-canonical means are used otherwise.
    pub targets: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub upper: f64,
    #[serde(default)]
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub equilibrium: EquilibriumParams,
    #[serde(default)]
    pub typicality: TypicalityParams,
    #[serde(default)]
    pub statement3: Statement3Params,
    #[serde(default)]
    pub statement4: Statement4Params,
    #[serde(default)]
    pub dynamics: DynamicsParams,
    #[serde(default)]
    pub gap_sample: GapSampleParams,
}

/// Fixed `(β, μ0)`; when absent both are solved from the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumParams {
    pub beta: Option<f64>,
    pub mu0: Option<Vec<f64>>,
    /// Step of the central differences in `μ0`.
    pub fd_step: f64,
}

impl Default for EquilibriumParams {
    fn default() -> Self {
        Self { beta: None, mu0: None, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypicalityParams {
    pub n_states: usize,
    pub eta: Vec<f64>,
}

impl Default for TypicalityParams {
    fn default() -> Self {
        Self { n_states: 64, eta: DEFAULT_ETA.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Statement3Params {
    pub n_states: usize,
    pub n_bases: usize,
    pub n_draws: usize,
    pub epsilon: f64,
    pub reference_samples: usize,
    pub sigmas: f64,
}

impl Default for Statement3Params {
    fn default() -> Self {
        let d = Statement3Config::default();
        Self {
            n_states: d.n_states,
            n_bases: d.n_bases,
            n_draws: d.n_draws,
            epsilon: d.epsilon,
            reference_samples: d.reference_samples,
            sigmas: d.sigmas,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Statement4Params {
    pub mode: MixtureMode,
    pub n_states: usize,
    pub n_bases: usize,
    pub n_draws: usize,
    pub sigmas: f64,
    pub min_sector_draws: usize,
    pub chi_square_alpha: f64,
}

impl Default for Statement4Params {
    fn default() -> Self {
        let d = Statement4Config::default();
        Self {
            mode: MixtureMode::Ndiag,
            n_states: d.n_states,
            n_bases: d.n_bases,
            n_draws: d.n_draws,
            sigmas: d.sigmas,
            min_sector_draws: d.min_sector_draws,
            chi_square_alpha: d.chi_square_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    pub delta: f64,
    pub n_times: usize,
    pub horizon_cycles: f64,
    pub average_factor: f64,
    pub check_dephasing: bool,
    pub dephasing_max_steps: usize,
    pub slack: f64,
    pub initial: InitialState,
    /// Also run the conditional-wave-function experiment with this bath basis.
    pub conditional: Option<BasisMode>,
    pub conditional_times: usize,
    pub conditional_draws: usize,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        let d = EquilibrationConfig::default();
        let s = Statement5Config::default();
        Self {
            delta: d.delta,
            n_times: d.n_times,
            horizon_cycles: d.horizon_cycles,
            average_factor: d.average_factor,
            check_dephasing: d.check_dephasing,
            dephasing_max_steps: d.dephasing_max_steps,
            slack: d.slack,
            initial: d.initial,
            conditional: None,
            conditional_times: s.n_times,
            conditional_draws: s.n_draws,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapSource {
    /// Reduced micro-canonical state of the region.
    ReducedGmc,
    /// The region's generalized Gibbs state at the matched parameters.
    ReducedGibbs,
    /// `diag(diagonal)`, no model needed.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GapSampleParams {
    pub source: GapSource,
    pub diagonal: Option<Vec<f64>>,
    pub n: usize,
    pub n_probes: usize,
}

impl Default for GapSampleParams {
    fn default() -> Self {
        Self { source: GapSource::ReducedGmc, diagonal: None, n: 20_000, n_probes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub series: bool,
    pub samples: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { series: true, samples: false }
    }
}

/// Parse a scenario, apply overrides and check it against the schema.
pub fn load(text: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut doc: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| CliError::Schema(e.to_string()))?;
    for ov in overrides {
        apply_override(&mut doc, ov)?;
    }
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::Schema(format!("{path}: {}", e.into_inner()))
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::Schema(format!(
            "schema_version: expected {SCHEMA_VERSION}, found {}",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set the leaf at a dotted path, creating intermediate tables.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Schema(format!("override `{spec}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Schema(format!("override key `{key}` has an empty segment")));
    }
    let value = parse_value(raw.trim());
    let mut node = doc;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        let here = parts[..=depth].join(".");
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize =
                    part.parse().map_err(|_| CliError::Schema(format!("override `{here}`: expected an array index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Schema(format!("override `{here}`: index out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Schema(format!("override `{here}`: parent is not a table or array"))),
        };
    }
    Ok(())
}

fn species_from(cfg: &SpeciesConfig, path: &str) -> Result<Species, CliError> {
    let mut sp = match (&cfg.onsite, &cfg.h1) {
        (Some(e), None) => Species::chain(&cfg.name, cfg.cap, e, cfg.hopping),
        (None, Some(rows)) => {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(CliError::Schema(format!("{path}.h1: matrix is not square")));
            }
            let h1 = Operator::from_fn(n, n, |i, j| c(rows[i][j]));
            Species { name: cfg.name.clone(), cap: cfg.cap, h1, regions: vec!["bulk".into(); n] }
        }
        _ => return Err(CliError::Schema(format!("{path}: give exactly one of `onsite` and `h1`"))),
    };
    if let Some(r) = &cfg.regions {
        sp.regions = r.clone();
    }
    Ok(sp)
}

impl ModelConfig {
    pub fn build(&self) -> Result<LatticeFockModel, CliError> {
        let perturbation = self.perturbation.map(|p| Perturbation { strength: p.strength, seed: p.seed });
        let given = [self.chain.is_some(), self.binding.is_some(), self.species.is_some()];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(CliError::Schema("model: give exactly one of `chain`, `binding` and `species`".into()));
        }
        let extras = !self.reactions.is_empty() || self.e0.is_some() || !self.interactions.is_empty();
        if let Some(ch) = &self.chain {
            if extras {
                return Err(CliError::Schema("model: a chain model takes no reactions, e0 or interactions".into()));
            }
            return Ok(hard_core_chain(&ch.onsite, ch.hopping, perturbation)?);
        }
        if let Some(b) = &self.binding {
            if extras || perturbation.is_some() {
                return Err(CliError::Schema(
                    "model: the binding model takes no reactions, e0, interactions or perturbation".into(),
                ));
            }
            return Ok(binding_model(b.omega, b.released_energy, b.amplitude)?);
        }
        let list = self.species.as_ref().expect("checked above");
        let species = list
            .iter()
            .enumerate()
            .map(|(i, s)| species_from(s, &format!("model.species[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let reactions = self
            .reactions
            .iter()
            .map(|r| Reaction { lhs: r.lhs.clone(), rhs: r.rhs.clone(), released_energy: r.released_energy })
            .collect();
        let network = ReactionNetwork::new(species.len(), reactions)?;
        let e0 = match &self.e0 {
            Some(e) => {
                if e.len() != species.len() {
                    return Err(CliError::Schema(format!("model.e0: {} entries for {} species", e.len(), species.len())));
                }
                let worst = check_reaction_energies(&network, e).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
                if worst > 1e-9 {
                    return Err(CliError::Schema(format!(
                        "model.e0: ground energies violate the reaction energies (residual {worst:e})"
                    )));
                }
                e.clone()
            }
            None => solve_ground_energies(&network, &vec![None; species.len()])?.e0,
        };
        let interactions = self
            .interactions
            .iter()
            .map(|i| Interaction { reaction: i.reaction, amplitude: i.amplitude, site_tuples: i.site_tuples.clone() })
            .collect();
        Ok(LatticeFockModel::new(ModelSpec {
            species,
            network,
            e0,
            interactions,
            perturbation,
            max_dim: self.max_dim.unwrap_or(DEFAULT_MAX_DIM),
        })?)
    }
}

impl RegionConfig {
    pub fn modes(&self, model: &LatticeFockModel) -> Result<Vec<usize>, CliError> {
        let modes = match (&self.sites, &self.modes, &self.label) {
            (Some(s), None, None) => model.modes_at_sites(s),
            (None, Some(m), None) => {
                if let Some(bad) = m.iter().find(|&&x| x >= model.n_modes()) {
                    return Err(CliError::Schema(format!("region.modes: mode {bad} out of range")));
                }
                m.clone()
            }
            (None, None, Some(l)) => model.modes_in_region(l),
            _ => return Err(CliError::Schema("region: give exactly one of `sites`, `modes` and `label`".into())),
        };
        if modes.is_empty() {
            return Err(CliError::Schema("region: selects no modes".into()));
        }
        Ok(modes)
    }
}

impl EnsembleConfig {
    pub fn spec(&self) -> EnsembleSpec {
        EnsembleSpec { windows: self.windows.iter().map(|w| Window::new(w.upper, w.width)).collect() }
    }
}

impl ScenarioConfig {
    pub fn model(&self) -> Result<LatticeFockModel, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Schema("model: missing table".into()))?.build()
    }

    pub fn region(&self) -> Result<&RegionConfig, CliError> {
        self.region.as_ref().ok_or_else(|| CliError::Schema("region: missing table".into()))
    }

    pub fn ensemble(&self) -> Result<&EnsembleConfig, CliError> {
        self.ensemble.as_ref().ok_or_else(|| CliError::Schema("ensemble: missing table".into()))
    }

    pub fn typicality(&self) -> TypicalityConfig {
        let p = &self.experiment.typicality;
        TypicalityConfig { n_states: p.n_states, eta: p.eta.clone(), seed: self.seed }
    }

    pub fn statement3(&self) -> Statement3Config {
        let p = &self.experiment.statement3;
        Statement3Config {
            n_states: p.n_states,
            n_bases: p.n_bases,
            n_draws: p.n_draws,
            epsilon: p.epsilon,
            reference_samples: p.reference_samples,
            sigmas: p.sigmas,
            seed: self.seed,
        }
    }

    pub fn statement4(&self) -> Statement4Config {
        let p = &self.experiment.statement4;
        Statement4Config {
            n_states: p.n_states,
            n_bases: p.n_bases,
            n_draws: p.n_draws,
            sigmas: p.sigmas,
            min_sector_draws: p.min_sector_draws,
            chi_square_alpha: p.chi_square_alpha,
            seed: self.seed,
        }
    }

    pub fn equilibration(&self) -> EquilibrationConfig {
        let p = &self.experiment.dynamics;
        EquilibrationConfig {
            delta: p.delta,
            n_times: p.n_times,
            horizon_cycles: p.horizon_cycles,
            average_factor: p.average_factor,
            check_dephasing: p.check_dephasing,
            dephasing_max_steps: p.dephasing_max_steps,
            slack: p.slack,
            initial: p.initial.clone(),
            seed: self.seed,
        }
    }

    pub fn conditional(&self) -> Option<Statement5Config> {
        let p = &self.experiment.dynamics;
        p.conditional.map(|basis| Statement5Config {
            basis,
            n_times: p.conditional_times,
            n_draws: p.conditional_draws,
            horizon_cycles: p.horizon_cycles,
            initial: p.initial.clone(),
            seed: self.seed,
            ..Statement5Config::default()
        })
    }
}
