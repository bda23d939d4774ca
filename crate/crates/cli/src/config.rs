//! The declarative run configuration, read from a TOML file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mixhmm::estimation::FitConfig;
use mixhmm::{CovariateEffect, EmissionParams, Family, Model, ModelSpec, NaturalParams, StateDensity, Variable};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    pub family: Family,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateDecl {
    pub contexts: usize,
    #[serde(default = "no_covariate")]
    pub covariate: CovariateEffect,
}

fn no_covariate() -> CovariateEffect {
    CovariateEffect::None
}

fn default_candidates() -> Vec<CandidateDecl> {
    vec![CandidateDecl { contexts: 1, covariate: CovariateEffect::None }]
}

fn default_level() -> f64 {
    0.95
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceDecl {
    #[serde(default = "default_level")]
    pub level: f64,
    /// Recompute intervals of flagged parameters by profile likelihood.
    #[serde(default = "yes")]
    pub profile_flagged: bool,
    #[serde(default)]
    pub viterbi: bool,
}

impl Default for InferenceDecl {
    fn default() -> Self {
        Self { level: default_level(), profile_flagged: true, viterbi: false }
    }
}

/// Generating parameters and layout for the `simulate` verb.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateDecl {
    pub lengths: Vec<usize>,
    #[serde(default = "one")]
    pub contexts: usize,
    #[serde(default = "no_covariate")]
    pub covariate: CovariateEffect,
    /// Per variable, one parameter table per state, keyed by parameter name.
    pub emissions: BTreeMap<String, Vec<BTreeMap<String, f64>>>,
    /// Row-major transition matrices, one per context.
    pub tpms: Vec<Vec<f64>>,
    /// Row-major covariate effects with zero diagonal, one per effect block.
    #[serde(default)]
    pub betas: Vec<Vec<f64>>,
    /// Initial distributions per context; uniform when omitted.
    #[serde(default)]
    pub initial: Option<Vec<Vec<f64>>>,
    /// Mixture weights; uniform when omitted.
    #[serde(default)]
    pub mixture: Option<Vec<f64>>,
    /// Inclusive 1-based exposure windows applied to every series.
    #[serde(default)]
    pub exposure: Vec<(usize, usize)>,
    /// Per-series exposure windows; overrides `exposure`.
    #[serde(default)]
    pub exposure_per_series: Option<Vec<Vec<(usize, usize)>>>,
    /// Probability that an observation is missing, for every variable.
    #[serde(default)]
    pub missing_probability: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub variables: Vec<VariableDecl>,
    pub n_states: usize,
    #[serde(default)]
    pub ordering_variable: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_candidates")]
    pub candidates: Vec<CandidateDecl>,
    /// Reference model for the AIC differences; single context without
    /// covariate effects when omitted.
    #[serde(default)]
    pub base: Option<CandidateDecl>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub inference: InferenceDecl,
    #[serde(default)]
    pub simulate: Option<SimulateDecl>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.variables.is_empty() {
            return Err(CliError::Config("at least one variable must be declared".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(CliError::Config(format!("variable '{}' declared twice", v.name)));
            }
            if ["series_id", "event_index", "exposed"].contains(&v.name.as_str()) {
                return Err(CliError::Config(format!("'{}' is a reserved column name", v.name)));
            }
        }
        if self.candidates.is_empty() {
            return Err(CliError::Config("no candidate models".into()));
        }
        if !(self.inference.level > 0.0 && self.inference.level < 1.0) {
            return Err(CliError::Config("inference.level must lie in (0, 1)".into()));
        }
        self.fit.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn schema(&self) -> Vec<Variable> {
        self.variables.iter().map(|v| Variable::new(v.name.clone(), v.family)).collect()
    }

    pub fn spec(&self, contexts: usize, covariate: CovariateEffect) -> Result<ModelSpec, CliError> {
        let mut spec = ModelSpec::new(self.schema(), self.n_states, contexts, covariate).map_err(config_err)?;
        if let Some(name) = &self.ordering_variable {
            let p = self
                .variables
                .iter()
                .position(|v| &v.name == name)
                .ok_or_else(|| CliError::Config(format!("ordering variable '{name}' is not declared")))?;
            spec = spec.with_ordering_variable(p).map_err(config_err)?;
        }
        Ok(spec)
    }

    pub fn candidate_specs(&self) -> Result<Vec<ModelSpec>, CliError> {
        self.candidates.iter().map(|c| self.spec(c.contexts, c.covariate)).collect()
    }

    pub fn base(&self) -> CandidateDecl {
        self.base.unwrap_or(CandidateDecl { contexts: 1, covariate: CovariateEffect::None })
    }

    /// Fitting configuration with the seed override applied.
    pub fn fit_config(&self, seed: Option<u64>) -> FitConfig {
        let mut f = self.fit.clone();
        if let Some(s) = seed.or(self.seed) {
            f.rng_seed = s;
        }
        f
    }

    /// The generating model of the `simulate` section.
    pub fn simulation_model(&self) -> Result<(Model, &SimulateDecl), CliError> {
        let sim = self.simulate.as_ref().ok_or_else(|| CliError::Config("missing [simulate] section".into()))?;
        let spec = self.spec(sim.contexts, sim.covariate)?;
        let n = self.n_states;
        let mut blocks = Vec::with_capacity(self.variables.len());
        for v in &self.variables {
            let states = sim
                .emissions
                .get(&v.name)
                .ok_or_else(|| CliError::Config(format!("no simulation parameters for '{}'", v.name)))?;
            if states.len() != n {
                return Err(CliError::Config(format!("'{}' needs parameters for {n} states", v.name)));
            }
            let block = states
                .iter()
                .map(|table| density_from_table(v.family, &v.name, table))
                .collect::<Result<Vec<_>, _>>()?;
            blocks.push(Some(block));
        }
        if let Some(extra) = sim.emissions.keys().find(|k| !self.variables.iter().any(|v| &v.name == *k)) {
            return Err(CliError::Config(format!("simulation parameters for undeclared variable '{extra}'")));
        }
        let k = sim.contexts;
        let natural = NaturalParams {
            emissions: EmissionParams { blocks },
            tpms: sim.tpms.clone(),
            betas: sim.betas.clone(),
            initial: sim.initial.clone().unwrap_or_else(|| vec![vec![1.0 / n as f64; n]; k]),
            mixture: sim.mixture.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]),
        };
        let model = Model::from_natural(spec, &natural).map_err(config_err)?;
        Ok((model, sim))
    }
}

fn density_from_table(family: Family, name: &str, table: &BTreeMap<String, f64>) -> Result<StateDensity, CliError> {
    let names = family.param_names();
    if let Some(k) = table.keys().find(|k| !names.contains(&k.as_str())) {
        return Err(CliError::Config(format!("'{name}': unknown {} parameter '{k}'", family.name())));
    }
    let values = names
        .iter()
        .map(|p| table.get(*p).copied().ok_or_else(|| CliError::Config(format!("'{name}': missing parameter '{p}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    let d = StateDensity::from_values(family, &values);
    d.validate().map_err(config_err)?;
    Ok(d)
}

fn config_err(e: mixhmm::Error) -> CliError {
    CliError::Config(e.to_string())
}
