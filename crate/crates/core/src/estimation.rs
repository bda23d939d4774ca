//! Maximum-likelihood fitting in stages, AIC and model selection.
//!
//! Stage I fits a single-context model without covariate effects from
//! data-driven starting values. Stage II freezes those emission parameters
//! and optimises only the Markov parameters from many random starts. The best
//! survivors then get a full optimisation followed by jittered re-runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{EmissionTable, Evaluator, PreparedData};
use crate::model::{CovariateEffect, Model, ModelSpec, NaturalParams};
use crate::obsmodel::{EmissionParams, Family, SeriesSet, StateDensity};
use crate::optim::{self, OptimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_random_starts: usize,
    pub n_survivors: usize,
    pub n_jitters_per_survivor: usize,
    /// Jitter sd is `jitter_scale * max(|theta|, 1)` per working coordinate.
    pub jitter_scale: f64,
    pub optimizer: OptimConfig,
    pub rng_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_random_starts: 15000,
            n_survivors: 100,
            n_jitters_per_survivor: 5,
            jitter_scale: 0.1,
            optimizer: OptimConfig::default(),
            rng_seed: 1,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_random_starts == 0 || self.n_survivors == 0 {
            return Err(Error::InvalidSpec("restart and survivor counts must be at least 1".into()));
        }
        if self.n_survivors > self.n_random_starts {
            return Err(Error::InvalidSpec(format!(
                "n_survivors ({}) exceeds n_random_starts ({})",
                self.n_survivors, self.n_random_starts
            )));
        }
        if !(self.jitter_scale > 0.0 && self.jitter_scale.is_finite()) {
            return Err(Error::InvalidSpec("jitter_scale must be positive".into()));
        }
        if self.optimizer.max_iterations == 0 {
            return Err(Error::InvalidSpec("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where a fitted parameter set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Provenance {
    /// The single stage-I optimisation.
    Stage1,
    /// Stage-II random start `start_index`.
    Stage2 { start_index: usize },
    /// Full optimisation from survivor `survivor` (its rank in the survivor
    /// list). `start_index` is the stage-II start it came from, `None` for a
    /// supplied candidate. Jitter 0 is the un-jittered run.
    Full { survivor: usize, start_index: Option<usize>, jitter: usize },
}

/// A stage-II result.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub theta: Vec<f64>,
    pub loglik: f64,
    /// Stage-II start index; `None` for candidates supplied from elsewhere.
    pub start_index: Option<usize>,
    pub converged: bool,
}

impl Candidate {
    /// Wraps an existing model as an extra survivor, for example a smaller
    /// model's optimum embedded into a larger spec.
    pub fn supplied(model: &Model, data: &SeriesSet) -> Result<Self> {
        let ll = crate::likelihood::total_loglik(data, model)?.total;
        Ok(Self { theta: model.theta.clone(), loglik: ll, start_index: None, converged: true })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub provenance: Provenance,
    pub loglik: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Estimates in canonical labelling.
    pub model: Model,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub provenance: Provenance,
    /// Every optimisation of the final stage, in run order.
    pub loglik_trace: Vec<TraceEntry>,
}

impl FitResult {
    pub fn spec(&self) -> &ModelSpec {
        &self.model.spec
    }
}

/// `-2 loglik + 2 n_params`.
pub fn compute_aic(loglik: f64, n_params: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_params as f64
}

const PURPOSE_STAGE2: u64 = 2;
const PURPOSE_JITTER: u64 = 3;

fn rng_for(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

struct Optimised {
    theta: Vec<f64>,
    loglik: f64,
    converged: bool,
}

/// Maximises over all coordinates from `start`.
fn optimise_full(ev: &Evaluator, start: &[f64], cfg: &OptimConfig) -> Optimised {
    let (lo, hi) = ev.layout().bounds();
    let objective = |x: &[f64], g: &mut [f64]| {
        let v = ev.value_and_gradient(x, None, g);
        g.iter_mut().for_each(|gi| *gi = -*gi);
        -v
    };
    let r = optim::minimize(&objective, start, &lo, &hi, cfg);
    Optimised { theta: r.x, loglik: -r.value, converged: r.converged && r.value.is_finite() }
}

/// Maximises over the Markov coordinates only, emissions held at `table`.
fn optimise_markov(ev: &Evaluator, start: &[f64], table: &EmissionTable, cfg: &OptimConfig) -> Optimised {
    let (lo, hi) = ev.layout().bounds();
    let m0 = ev.layout().markov_start();
    let len = start.len();
    let objective = |x: &[f64], g: &mut [f64]| {
        let mut theta = start.to_vec();
        theta[m0..].copy_from_slice(x);
        let mut full = vec![0.0; len];
        let v = ev.value_and_gradient(&theta, Some(table), &mut full);
        for (gi, fi) in g.iter_mut().zip(&full[m0..]) {
            *gi = -fi;
        }
        -v
    };
    let r = optim::minimize(&objective, &start[m0..], &lo[m0..], &hi[m0..], cfg);
    let mut theta = start.to_vec();
    theta[m0..].copy_from_slice(&r.x);
    Optimised { theta, loglik: -r.value, converged: r.converged && r.value.is_finite() }
}

fn result_from(
    ev: &Evaluator,
    theta: &[f64],
    converged: bool,
    provenance: Provenance,
    loglik_trace: Vec<TraceEntry>,
) -> Result<FitResult> {
    let model = Model::new(ev.spec().clone(), theta.to_vec())?.canonicalized();
    let loglik = ev.forward(&model.theta).total;
    if !loglik.is_finite() {
        return Err(Error::Estimation("fitted log-likelihood is not finite".into()));
    }
    let n_params = model.n_free_parameters();
    Ok(FitResult { aic: compute_aic(loglik, n_params), model, loglik, n_params, converged, provenance, loglik_trace })
}

/// One-dimensional k-means with quantile initialisation. Returns the group
/// of each value, groups ordered by centre.
fn kmeans_1d(values: &[f64], k: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    let mut centres: Vec<f64> = (0..k).map(|i| q((i as f64 + 0.5) / k as f64)).collect();
    let mut groups = vec![0; values.len()];
    for _ in 0..200 {
        let mut changed = false;
        for (g, &x) in groups.iter_mut().zip(values) {
            let best = (0..k).min_by(|&a, &b| (x - centres[a]).abs().total_cmp(&(x - centres[b]).abs())).unwrap();
            changed |= *g != best;
            *g = best;
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let (s, m) = groups.iter().zip(values).filter(|(g, _)| **g == c).fold((0.0, 0), |(s, m), (_, x)| (s + x, m + 1));
            if m > 0 {
                *centre = s / m as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centres[a].total_cmp(&centres[b]));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    groups.into_iter().map(|g| rank[g]).collect()
}

/// Inverse of the mean resultant length `I1(k) / I0(k)`, by the usual
/// piecewise approximation.
fn von_mises_concentration(r: f64) -> f64 {
    let k = if r < 0.53 {
        2.0 * r + r.powi(3) + 5.0 * r.powi(5) / 6.0
    } else if r < 0.85 {
        -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    } else {
        1.0 / (r.powi(3) - 4.0 * r * r + 3.0 * r)
    };
    k.clamp(0.05, 500.0)
}

fn moment_match(family: Family, xs: &[f64]) -> Option<StateDensity> {
    if xs.is_empty() {
        return None;
    }
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    Some(match family {
        Family::Gamma => {
            if !(mean > 0.0) || !(var > 0.0) {
                return None;
            }
            StateDensity::Gamma { mean, sd: var.sqrt() }
        }
        Family::Poisson => StateDensity::Poisson { rate: mean.max(0.01) },
        Family::VonMises => {
            let r = xs.iter().map(|x| x.cos()).sum::<f64>() / m;
            StateDensity::VonMises { concentration: von_mises_concentration(r.max(0.0)) }
        }
        Family::Beta => {
            let xm = mean.clamp(0.01, 0.99);
            let c = if var > 0.0 { xm * (1.0 - xm) / var - 1.0 } else { 0.0 };
            let c = if c > 0.0 { c.clamp(0.1, 1e3) } else { 2.0 };
            StateDensity::Beta { a: xm * c, b: (1.0 - xm) * c }
        }
    })
}

/// Stage-I starting model: events are split into N groups by 1-D k-means on
/// the ordering variable, then each variable's parameters are matched to the
/// moments of its group. Persistent transition matrix, uniform initial
/// distribution.
pub fn stage1_start(data: &SeriesSet, spec: &ModelSpec) -> Result<Model> {
    stage1_start_by(data, spec, spec.ordering_variable)
}

/// As [`stage1_start`], partitioning by variable `o` instead.
pub fn stage1_start_by(data: &SeriesSet, spec: &ModelSpec, o: usize) -> Result<Model> {
    let n = spec.n_states;
    let mut ord_values = Vec::new();
    let mut event_of = Vec::new();
    for (w, s) in data.series.iter().enumerate() {
        for (d, e) in s.events.iter().enumerate() {
            if let Some(x) = e.values[o] {
                ord_values.push(x);
                event_of.push((w, d));
            }
        }
    }
    if ord_values.len() < n {
        return Err(Error::Estimation(format!(
            "partition variable '{}' has {} observations, fewer than {n} states",
            spec.schema[o].name,
            ord_values.len()
        )));
    }
    let groups = kmeans_1d(&ord_values, n);
    let mut blocks = Vec::with_capacity(spec.schema.len());
    for (p, v) in spec.schema.iter().enumerate() {
        if !spec.active[p] {
            blocks.push(None);
            continue;
        }
        let all: Vec<f64> = data.series.iter().flat_map(|s| s.events.iter().filter_map(move |e| e.values[p])).collect();
        let fallback = moment_match(v.family, &all).unwrap_or(match v.family {
            Family::Gamma => StateDensity::Gamma { mean: 1.0, sd: 1.0 },
            Family::Poisson => StateDensity::Poisson { rate: 1.0 },
            Family::VonMises => StateDensity::VonMises { concentration: 1.0 },
            Family::Beta => StateDensity::Beta { a: 1.0, b: 1.0 },
        });
        let mut block = Vec::with_capacity(n);
        for i in 0..n {
            let xs: Vec<f64> = groups
                .iter()
                .zip(&event_of)
                .filter(|(g, _)| **g == i)
                .filter_map(|(_, &(w, d))| data.series[w].events[d].values[p])
                .collect();
            block.push(if xs.len() >= 2 { moment_match(v.family, &xs).unwrap_or(fallback) } else { fallback });
        }
        blocks.push(Some(block));
    }
    let k1 = spec.variant(1, CovariateEffect::None)?;
    let mut tpm = vec![0.2 / (n.max(2) - 1) as f64; n * n];
    for i in 0..n {
        tpm[i * n + i] = if n == 1 { 1.0 } else { 0.8 };
    }
    let natural = NaturalParams {
        emissions: EmissionParams { blocks },
        tpms: vec![tpm],
        betas: vec![],
        initial: vec![vec![1.0 / n as f64; n]],
        mixture: vec![1.0],
    };
    Model::from_natural(k1, &natural)
}

/// Stage I: the single-context, covariate-free fit whose emission block
/// seeds every later stage. `spec` supplies the schema, state count, active
/// variables and ordering variable; its context count and covariate mode are
/// ignored.
pub fn fit_stage1_emissions(data: &SeriesSet, spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    spec.check_data(data)?;
    // The ordering variable is always tried first; the other variables add
    // partitions that can separate states the ordering variable overlaps.
    let mut starts = vec![stage1_start(data, spec)?];
    starts.extend(
        (0..spec.schema.len())
            .filter(|&p| p != spec.ordering_variable && spec.active[p] && spec.schema[p].family != Family::VonMises)
            .filter_map(|p| stage1_start_by(data, spec, p).ok()),
    );
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(&starts[0].spec, &prepared);
    let runs: Vec<Optimised> = starts.par_iter().map(|m| optimise_full(&ev, &m.theta, &config.optimizer)).collect();
    let r = runs
        .into_iter()
        .filter(|o| o.loglik.is_finite())
        .reduce(|b, o| if (o.converged, o.loglik) > (b.converged, b.loglik) { o } else { b })
        .ok_or_else(|| Error::Estimation("stage I optimisation produced no finite likelihood".into()))?;
    let trace = vec![TraceEntry { provenance: Provenance::Stage1, loglik: r.loglik, converged: r.converged }];
    result_from(&ev, &r.theta, r.converged, Provenance::Stage1, trace)
}

fn check_emission_compatible(source: &ModelSpec, target: &ModelSpec) -> Result<()> {
    if source.n_states != target.n_states || source.schema != target.schema || source.active != target.active {
        return Err(Error::InvalidSpec(format!(
            "emission parameters of {} do not fit {}",
            source.label(),
            target.label()
        )));
    }
    Ok(())
}

/// Stage-II starting vector for random start `index`.
fn stage2_start(spec: &ModelSpec, emission_theta: &[f64], seed: u64, index: usize) -> Vec<f64> {
    let lay = spec.layout();
    let mut rng = rng_for(seed, PURPOSE_STAGE2, index as u64);
    let mut theta = vec![0.0; lay.len];
    theta[..lay.alpha].copy_from_slice(emission_theta);
    for t in &mut theta[lay.alpha..lay.beta] {
        *t = rng.random_range(-4.0..1.0);
    }
    for t in &mut theta[lay.delta..] {
        *t = rng.random_range(-1.0..1.0);
    }
    theta
}

/// Stage II: random-start optimisation of the Markov parameters with the
/// emission parameters of `frozen` held fixed. Returns the best
/// `n_survivors` candidates by log-likelihood, ties broken by start index.
pub fn fit_stage2_markov(data: &SeriesSet, spec: &ModelSpec, frozen: &Model, config: &FitConfig) -> Result<Vec<Candidate>> {
    config.validate()?;
    spec.validate()?;
    spec.check_data(data)?;
    check_emission_compatible(&frozen.spec, spec)?;
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let emission_theta = &frozen.theta[..frozen.layout().alpha];
    let mut probe = vec![0.0; spec.layout().len];
    probe[..emission_theta.len()].copy_from_slice(emission_theta);
    let table = ev.emission_table(&probe);
    if table.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("frozen emission parameters give non-finite densities".into()));
    }

    let mut results: Vec<Candidate> = (0..config.n_random_starts)
        .into_par_iter()
        .map(|s| {
            let start = stage2_start(spec, emission_theta, config.rng_seed, s);
            let r = optimise_markov(&ev, &start, &table, &config.optimizer);
            Candidate { theta: r.theta, loglik: r.loglik, start_index: Some(s), converged: r.converged }
        })
        .collect();
    results.retain(|c| c.loglik.is_finite());
    if results.is_empty() {
        return Err(Error::Estimation(format!("all {} stage II starts failed", config.n_random_starts)));
    }
    // Stable sort keeps start order among ties.
    results.sort_by(|a, b| b.loglik.total_cmp(&a.loglik));
    results.truncate(config.n_survivors);
    Ok(results)
}

/// Starting vector of jittered run `jitter` (1-based) around `theta`.
fn jittered(theta: &[f64], lo: &[f64], hi: &[f64], config: &FitConfig, survivor: usize, jitter: usize) -> Vec<f64> {
    let mut rng = rng_for(config.rng_seed, PURPOSE_JITTER, ((survivor as u64) << 32) | jitter as u64);
    theta
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&t, (&l, &h))| {
            let e: f64 = rng.sample(StandardNormal);
            (t + config.jitter_scale * t.abs().max(1.0) * e).clamp(l, h)
        })
        .collect()
}

/// Full optimisation of every survivor, each followed by
/// `n_jitters_per_survivor` jittered re-optimisations. Returns the best
/// converged run, or the best run if none converged.
pub fn fit_full(data: &SeriesSet, spec: &ModelSpec, survivors: &[Candidate], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    spec.check_data(data)?;
    if survivors.is_empty() {
        return Err(Error::Estimation("no survivors to optimise".into()));
    }
    let len = spec.layout().len;
    if let Some(c) = survivors.iter().find(|c| c.theta.len() != len) {
        return Err(Error::InvalidSpec(format!("survivor has {} parameters, expected {len}", c.theta.len())));
    }
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let (lo, hi) = ev.layout().bounds();

    let runs: Vec<Vec<(Provenance, Optimised)>> = survivors
        .par_iter()
        .enumerate()
        .map(|(r, c)| {
            let mut out = Vec::with_capacity(config.n_jitters_per_survivor + 1);
            let base = optimise_full(&ev, &c.theta, &config.optimizer);
            for j in 1..=config.n_jitters_per_survivor {
                let start = jittered(&base.theta, &lo, &hi, config, r, j);
                let o = optimise_full(&ev, &start, &config.optimizer);
                out.push((Provenance::Full { survivor: r, start_index: c.start_index, jitter: j }, o));
            }
            out.insert(0, (Provenance::Full { survivor: r, start_index: c.start_index, jitter: 0 }, base));
            out
        })
        .collect();

    let mut trace = Vec::new();
    let mut best: Option<(Provenance, &Optimised)> = None;
    for (prov, o) in runs.iter().flatten() {
        trace.push(TraceEntry { provenance: *prov, loglik: o.loglik, converged: o.converged });
        // A converged run beats any unconverged one, which may be climbing a
        // degenerate spike (a gamma state shrinking onto one observation).
        let better = |b: &Optimised| (o.converged, o.loglik) > (b.converged, b.loglik);
        if o.loglik.is_finite() && best.is_none_or(|(_, b)| better(b)) {
            best = Some((*prov, o));
        }
    }
    let (prov, o) = best.ok_or_else(|| Error::Estimation("every full optimisation failed".into()))?;
    result_from(&ev, &o.theta, o.converged, prov, trace)
}

/// Re-runs the single optimisation identified by `provenance` and returns its
/// (non-canonicalised) estimate and log-likelihood.
pub fn replay(
    data: &SeriesSet,
    spec: &ModelSpec,
    survivors: &[Candidate],
    config: &FitConfig,
    provenance: Provenance,
) -> Result<(Vec<f64>, f64)> {
    let Provenance::Full { survivor, jitter, .. } = provenance else {
        return Err(Error::Estimation("only full-stage provenance can be replayed against survivors".into()));
    };
    let c = survivors.get(survivor).ok_or_else(|| Error::Estimation(format!("no survivor {survivor}")))?;
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let (lo, hi) = ev.layout().bounds();
    let mut o = optimise_full(&ev, &c.theta, &config.optimizer);
    if jitter > 0 {
        let start = jittered(&o.theta, &lo, &hi, config, survivor, jitter);
        o = optimise_full(&ev, &start, &config.optimizer);
    }
    Ok((o.theta, o.loglik))
}

/// Stages II and full optimisation for `spec`, seeded by a stage-I fit.
/// `extra` candidates are appended to the survivor list.
pub fn fit_from_stage1(
    data: &SeriesSet,
    spec: &ModelSpec,
    stage1: &FitResult,
    extra: &[Candidate],
    config: &FitConfig,
) -> Result<FitResult> {
    let mut survivors = fit_stage2_markov(data, spec, &stage1.model, config)?;
    survivors.extend_from_slice(extra);
    fit_full(data, spec, &survivors, config)
}

/// The whole pipeline for one spec.
pub fn fit(data: &SeriesSet, spec: &ModelSpec, config: &FitConfig) -> Result<FitResult> {
    let s1 = fit_stage1_emissions(data, spec, config)?;
    fit_from_stage1(data, spec, &s1, &[], config)
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub n_contexts: usize,
    pub covariate: CovariateEffect,
    pub n_params: usize,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    /// AIC minus the AIC of the single-context, covariate-free candidate.
    pub delta_aic: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: FitResult,
    pub best_index: usize,
    pub fits: Vec<Option<FitResult>>,
    pub table: Vec<ComparisonRow>,
}

/// Fits every candidate and selects the minimum-AIC converged fit. Stage I is
/// run once per distinct emission structure.
pub fn select_model(data: &SeriesSet, candidates: &[ModelSpec], config: &FitConfig) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::InvalidSpec("no candidate models".into()));
    }
    let mut stage1: Vec<(ModelSpec, FitResult)> = Vec::new();
    let mut fits = Vec::with_capacity(candidates.len());
    let mut errors = Vec::with_capacity(candidates.len());
    for spec in candidates {
        let key = spec.variant(1, CovariateEffect::None)?;
        let s1 = match stage1.iter().find(|(k, _)| *k == key) {
            Some((_, f)) => Ok(f.clone()),
            None => fit_stage1_emissions(data, spec, config).inspect(|f| stage1.push((key, f.clone()))),
        };
        match s1.and_then(|s1| fit_from_stage1(data, spec, &s1, &[], config)) {
            Ok(f) => {
                fits.push(Some(f));
                errors.push(None);
            }
            Err(e) => {
                fits.push(None);
                errors.push(Some(e.to_string()));
            }
        }
    }
    let base_aic = candidates
        .iter()
        .zip(&fits)
        .find(|(s, _)| s.n_contexts == 1 && s.covariate == CovariateEffect::None)
        .and_then(|(_, f)| f.as_ref().map(|f| f.aic));
    let table = candidates
        .iter()
        .zip(&fits)
        .zip(errors)
        .map(|((spec, f), error)| ComparisonRow {
            label: spec.label(),
            n_contexts: spec.n_contexts,
            covariate: spec.covariate,
            n_params: crate::markov::count_free_parameters(spec),
            loglik: f.as_ref().map(|f| f.loglik),
            aic: f.as_ref().map(|f| f.aic),
            delta_aic: f.as_ref().and_then(|f| base_aic.map(|b| f.aic - b)),
            converged: f.as_ref().is_some_and(|f| f.converged),
            error,
        })
        .collect();
    let best_index = fits
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.as_ref().filter(|f| f.converged).map(|f| (i, f.aic)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Estimation("no candidate model converged".into()))?;
    Ok(Selection { best: fits[best_index].clone().unwrap(), best_index, fits, table })
}
