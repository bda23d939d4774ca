//! The machine-readable fit report and the plot-ready tables.

use std::collections::BTreeMap;

use mixhmm::estimation::{ComparisonRow, FitConfig, FitResult, Provenance};
use mixhmm::inference::{CiFlag, CiMethod, ConfidenceInterval, DecodeResult};
use mixhmm::{CovariateEffect, Family, Model, SeriesSet, StateDensity, Variable};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::io::fmt_num;

/// A float that serialises infinities as the strings `"inf"` and `"-inf"`,
/// which plain JSON numbers cannot carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&fmt_num(self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(x) => Ok(Num(x)),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(Num(f64::INFINITY)),
                "-inf" => Ok(Num(f64::NEG_INFINITY)),
                "nan" => Ok(Num(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("not a number: '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSummary {
    pub n_series: usize,
    pub n_events: usize,
    pub variables: Vec<Variable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableEstimates {
    pub variable: String,
    pub family: Family,
    /// Natural parameters by state, keyed by parameter name.
    pub states: Vec<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextEstimates {
    pub context: usize,
    pub mixture_weight: f64,
    pub initial: Vec<f64>,
    pub tpm_unexposed: Vec<Vec<f64>>,
    /// Present when the covariate enters this context's transitions.
    pub tpm_exposed: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimates {
    pub emissions: Vec<VariableEstimates>,
    pub contexts: Vec<ContextEstimates>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalRow {
    pub parameter: String,
    pub estimate: Num,
    pub lower: Num,
    pub upper: Num,
    pub method: CiMethod,
    pub flag: Option<CiFlag>,
}

impl From<&ConfidenceInterval> for IntervalRow {
    fn from(ci: &ConfidenceInterval) -> Self {
        Self {
            parameter: ci.parameter.clone(),
            estimate: Num(ci.estimate),
            lower: Num(ci.lower),
            upper: Num(ci.upper),
            method: ci.method,
            flag: ci.flag,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AicRow {
    pub model: String,
    pub contexts: usize,
    pub covariate: CovariateEffect,
    pub n_params: usize,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub delta_aic: Option<f64>,
    pub converged: bool,
    pub min_aic: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selected {
    pub model: String,
    pub contexts: usize,
    pub covariate: CovariateEffect,
    pub n_params: usize,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub data: DataSummary,
    pub fit_config: FitConfig,
    pub confidence_level: f64,
    pub base_model: String,
    pub aic_table: Vec<AicRow>,
    pub selected: Selected,
    pub estimates: Estimates,
    pub confidence_intervals: Vec<IntervalRow>,
    /// The selected model in working space, reusable by `decode` and `profile-ci`.
    pub model: Model,
}

fn matrix(flat: &[f64], n: usize) -> Vec<Vec<f64>> {
    flat.chunks(n).map(<[f64]>::to_vec).collect()
}

pub fn estimates(model: &Model) -> Estimates {
    let spec = &model.spec;
    let n = spec.n_states;
    let em = model.emissions();
    let emissions = spec
        .schema
        .iter()
        .zip(&em.blocks)
        .filter_map(|(v, block)| {
            block.as_ref().map(|b| VariableEstimates {
                variable: v.name.clone(),
                family: v.family,
                states: b
                    .iter()
                    .map(|d| v.family.param_names().iter().map(|p| p.to_string()).zip(d.values()).collect())
                    .collect(),
            })
        })
        .collect();
    let mixture = model.mixture();
    let contexts = (0..spec.n_contexts)
        .map(|k| ContextEstimates {
            context: k + 1,
            mixture_weight: mixture[k],
            initial: model.initial(k),
            tpm_unexposed: matrix(&model.tpm(k, false), n),
            tpm_exposed: model.beta_block(k).map(|_| matrix(&model.tpm(k, true), n)),
        })
        .collect();
    Estimates { emissions, contexts }
}

pub fn aic_table(table: &[ComparisonRow]) -> Vec<AicRow> {
    let min = table.iter().filter(|r| r.converged).filter_map(|r| r.aic).fold(f64::INFINITY, f64::min);
    let mut flagged = false;
    table
        .iter()
        .map(|r| {
            let is_min = !flagged && r.converged && r.aic == Some(min);
            flagged |= is_min;
            AicRow {
                model: r.label.clone(),
                contexts: r.n_contexts,
                covariate: r.covariate,
                n_params: r.n_params,
                loglik: r.loglik,
                aic: r.aic,
                delta_aic: r.delta_aic,
                converged: r.converged,
                min_aic: is_min,
                error: r.error.clone(),
            }
        })
        .collect()
}

pub fn aic_rows(rows: &[AicRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["model", "contexts", "covariate", "n_params", "loglik", "aic", "delta_aic", "converged", "min_aic"];
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.contexts.to_string(),
                r.covariate.label().to_string(),
                r.n_params.to_string(),
                opt(r.loglik),
                opt(r.aic),
                opt(r.delta_aic),
                (r.converged as u8).to_string(),
                (r.min_aic as u8).to_string(),
            ]
        })
        .collect();
    (header.iter().map(|h| h.to_string()).collect(), body)
}

pub fn selected(fit: &FitResult) -> Selected {
    let spec = fit.spec();
    Selected {
        model: spec.label(),
        contexts: spec.n_contexts,
        covariate: spec.covariate,
        n_params: fit.n_params,
        loglik: fit.loglik,
        aic: fit.aic,
        converged: fit.converged,
        provenance: fit.provenance,
    }
}

pub fn summary(data: &SeriesSet) -> DataSummary {
    DataSummary { n_series: data.series.len(), n_events: data.n_events(), variables: data.schema.clone() }
}

/// One row per event: state posteriors, the local MAP state (1-based),
/// context posteriors and optionally the Viterbi state.
pub fn decoded_rows(decoded: &[DecodeResult], viterbi: Option<&[Vec<usize>]>) -> (Vec<String>, Vec<Vec<String>>) {
    let n = decoded.first().map_or(0, |d| d.posterior.first().map_or(0, Vec::len));
    let k = decoded.first().map_or(0, |d| d.context_posterior.len());
    let mut header = vec!["series_id".to_string(), "event_index".to_string()];
    header.extend((1..=n).map(|i| format!("p_state{i}")));
    header.push("map_state".into());
    header.extend((1..=k).map(|c| format!("p_context{c}")));
    if viterbi.is_some() {
        header.push("viterbi_state".into());
    }
    let mut rows = Vec::new();
    for (w, dr) in decoded.iter().enumerate() {
        for (d, post) in dr.posterior.iter().enumerate() {
            let mut r = vec![dr.series_id.clone(), (d + 1).to_string()];
            r.extend(post.iter().map(|&p| fmt_num(p)));
            r.push((dr.map_states[d] + 1).to_string());
            r.extend(dr.context_posterior.iter().map(|&p| fmt_num(p)));
            if let Some(v) = viterbi {
                r.push((v[w][d] + 1).to_string());
            }
            rows.push(r);
        }
    }
    (header, rows)
}

const GRID: usize = 200;

/// Evaluation points for a variable's density plot.
fn grid(family: Family, states: &[StateDensity], observed_max: f64) -> Vec<f64> {
    match family {
        Family::Gamma => {
            let top = states
                .iter()
                .map(|d| match *d {
                    StateDensity::Gamma { mean, sd } => mean + 4.0 * sd,
                    _ => 0.0,
                })
                .fold(observed_max, f64::max);
            (1..=GRID).map(|i| top * i as f64 / GRID as f64).collect()
        }
        Family::Poisson => {
            let top = states
                .iter()
                .map(|d| match *d {
                    StateDensity::Poisson { rate } => rate + 5.0 * rate.sqrt() + 5.0,
                    _ => 0.0,
                })
                .fold(observed_max, f64::max);
            (0..=top.ceil() as u64).map(|x| x as f64).collect()
        }
        Family::VonMises => {
            let pi = std::f64::consts::PI;
            (1..=GRID).map(|i| -pi + 2.0 * pi * i as f64 / GRID as f64).collect()
        }
        Family::Beta => (1..GRID).map(|i| i as f64 / GRID as f64).collect(),
    }
}

/// Long-format state-dependent densities: variable, state, x, density.
pub fn density_rows(model: &Model, data: &SeriesSet) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["variable", "state", "x", "density"].iter().map(|h| h.to_string()).collect();
    let em = model.emissions();
    let mut rows = Vec::new();
    for (p, (var, block)) in model.spec.schema.iter().zip(&em.blocks).enumerate() {
        let Some(states) = block else { continue };
        let observed_max = data
            .series
            .iter()
            .flat_map(|s| s.events.iter().filter_map(|e| e.values[p]))
            .fold(0.0, f64::max);
        let xs = grid(var.family, states, observed_max);
        for (i, d) in states.iter().enumerate() {
            for &x in &xs {
                let dens = d.log_density(x).map(f64::exp).unwrap_or(0.0);
                rows.push(vec![var.name.clone(), (i + 1).to_string(), fmt_num(x), fmt_num(dens)]);
            }
        }
    }
    (header, rows)
}
