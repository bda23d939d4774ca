//! Command implementations behind the `mixhmm` binary.

pub mod config;
pub mod io;
pub mod report;

use std::path::{Path, PathBuf};

use mixhmm::estimation::select_model;
use mixhmm::inference::{confidence_intervals, decode_local, fisher_confidence_intervals, profile_ci, viterbi};
use mixhmm::simulate::{simulate, Missingness, SimConfig};
use mixhmm::{Model, SeriesSet};
use serde::Serialize;
use thiserror::Error;

use config::Config;
use report::{FitReport, IntervalRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl From<mixhmm::Error> for CliError {
    fn from(e: mixhmm::Error) -> Self {
        use mixhmm::Error as E;
        match e {
            E::Domain(_) | E::OutOfSupport { .. } => CliError::Data(e.to_string()),
            E::Numerical(_) | E::Estimation(_) => CliError::Estimation(e.to_string()),
            E::InvalidSpec(_) => CliError::Config(e.to_string()),
        }
    }
}

/// Resolves the output directory from the flag or the config, creating it.
pub fn output_dir(flag: Option<&Path>, config: &Config) -> Result<PathBuf, CliError> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory given (--out or output_dir)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_report(path: &Path) -> Result<FitReport, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Loads the model of a previous fit and checks it against the declared schema.
fn load_model(path: &Path, config: &Config) -> Result<Model, CliError> {
    let model = read_report(path)?.model;
    if model.spec.schema != config.schema() {
        return Err(CliError::Config(format!("model in {} was fitted to a different variable schema", path.display())));
    }
    Ok(Model::new(model.spec, model.theta)?)
}

#[derive(Serialize)]
struct Truth<'a> {
    series: Vec<TruthSeries<'a>>,
}

#[derive(Serialize)]
struct TruthSeries<'a> {
    series_id: &'a str,
    /// 1-based.
    context: usize,
    /// 1-based, one per event.
    states: Vec<usize>,
}

/// `simulate`: draws a dataset from the `[simulate]` section, writing
/// `data.csv` and the latent truth to `truth.json`.
pub fn run_simulate(config: &Config, out: Option<&Path>, seed: Option<u64>) -> Result<PathBuf, CliError> {
    let (model, sim) = config.simulation_model()?;
    let n_series = sim.lengths.len();
    let exposure = match &sim.exposure_per_series {
        Some(per) => per.clone(),
        None => vec![sim.exposure.clone(); n_series],
    };
    let missingness = if sim.missing_probability > 0.0 {
        Missingness::Probability(vec![sim.missing_probability; config.variables.len()])
    } else {
        Missingness::None
    };
    let cfg = SimConfig {
        model,
        lengths: sim.lengths.clone(),
        exposure,
        missingness,
        rng_seed: seed.or(config.seed).unwrap_or(0),
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (data, truth) = simulate(&cfg)?;
    let dir = output_dir(out, config)?;
    io::write_series(&dir.join("data.csv"), &data)?;
    let truth = Truth {
        series: data
            .series
            .iter()
            .zip(truth.contexts.iter().zip(&truth.states))
            .map(|(s, (&k, states))| TruthSeries {
                series_id: &s.id,
                context: k + 1,
                states: states.iter().map(|i| i + 1).collect(),
            })
            .collect(),
    };
    write_json(&dir.join("truth.json"), &truth)?;
    Ok(dir)
}

fn write_decoded(dir: &Path, data: &SeriesSet, model: &Model, with_viterbi: bool) -> Result<(), CliError> {
    let decoded = decode_local(data, model)?;
    let paths = if with_viterbi { Some(viterbi(data, model)?) } else { None };
    let (header, rows) = report::decoded_rows(&decoded, paths.as_deref());
    io::write_table(&dir.join("decoded.csv"), &header, &rows)
}

/// `fit`: model selection over the candidate grid, then intervals, decoding
/// and density tables for the selected model.
pub fn run_fit(
    data_path: &Path,
    config: &Config,
    out: Option<&Path>,
    seed: Option<u64>,
    with_viterbi: bool,
) -> Result<PathBuf, CliError> {
    let data = io::ingest(data_path, &config.schema())?;
    let specs = config.candidate_specs()?;
    let base = config.base();
    let base_index = config.candidates.iter().position(|c| *c == base);
    let fit_config = config.fit_config(seed);
    let selection = select_model(&data, &specs, &fit_config)?;
    let mut table = selection.table.clone();
    match base_index {
        Some(b) => {
            let reference = table[b].aic;
            for r in table.iter_mut() {
                r.delta_aic = r.aic.zip(reference).map(|(a, b)| a - b);
            }
        }
        None => {
            return Err(CliError::Config(format!(
                "base model ({} contexts, covariate {}) is not among the candidates",
                base.contexts,
                base.covariate.label()
            )))
        }
    }
    let best = &selection.best;
    let inf = &config.inference;
    let cis = if inf.profile_flagged {
        confidence_intervals(&data, &best.model, inf.level, &fit_config.optimizer)?
    } else {
        fisher_confidence_intervals(&data, &best.model, inf.level)?
    };
    let aic_rows = report::aic_table(&table);
    let base_label = specs[base_index.unwrap_or(0)].label();
    let rep = FitReport {
        data: report::summary(&data),
        fit_config,
        confidence_level: inf.level,
        base_model: base_label,
        aic_table: aic_rows.clone(),
        selected: report::selected(best),
        estimates: report::estimates(&best.model),
        confidence_intervals: cis.iter().map(IntervalRow::from).collect(),
        model: best.model.clone(),
    };
    let dir = output_dir(out, config)?;
    write_json(&dir.join("report.json"), &rep)?;
    let (h, rows) = report::aic_rows(&aic_rows);
    io::write_table(&dir.join("aic_table.csv"), &h, &rows)?;
    write_decoded(&dir, &data, &best.model, with_viterbi || inf.viterbi)?;
    let (h, rows) = report::density_rows(&best.model, &data);
    io::write_table(&dir.join("densities.csv"), &h, &rows)?;
    Ok(dir)
}

/// `decode`: state posteriors for a dataset under a previously fitted model.
pub fn run_decode(
    data_path: &Path,
    config: &Config,
    model_path: &Path,
    out: Option<&Path>,
    with_viterbi: bool,
) -> Result<PathBuf, CliError> {
    let data = io::ingest(data_path, &config.schema())?;
    let model = load_model(model_path, config)?;
    let dir = output_dir(out, config)?;
    write_decoded(&dir, &data, &model, with_viterbi || config.inference.viterbi)?;
    Ok(dir)
}

/// `profile-ci`: a profile-likelihood interval for one named parameter.
pub fn run_profile_ci(
    data_path: &Path,
    config: &Config,
    model_path: &Path,
    parameter: &str,
    level: Option<f64>,
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let data = io::ingest(data_path, &config.schema())?;
    let model = load_model(model_path, config)?;
    let ids = model.layout().ids();
    let index = ids.iter().position(|id| id.name(&model.spec) == parameter).ok_or_else(|| {
        let names: Vec<String> = ids.iter().map(|id| id.name(&model.spec)).collect();
        CliError::Config(format!("unknown parameter '{parameter}'; available: {}", names.join(", ")))
    })?;
    let level = level.unwrap_or(config.inference.level);
    let ci = profile_ci(&data, &model, index, level, &config.fit.optimizer)?;
    let dir = output_dir(out, config)?;
    write_json(&dir.join("profile_ci.json"), &IntervalRow::from(&ci))?;
    Ok(dir)
}
