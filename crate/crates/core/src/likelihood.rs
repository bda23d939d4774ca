//! Exact log-likelihood of the mixed HMM.
//!
//! For each series and context the scaled forward recursion evaluates
//! `log(delta_k Q(x_1) Gamma_k(z_2) Q(x_2) ... Gamma_k(z_D) Q(x_D) 1)`, the
//! contexts are combined with `logsumexp_k(log pi_k + log L_k)`, and series
//! contributions are summed in series order.
//!
//! The gradient comes from the same quantities: with scaled forward vectors
//! `a_d`, backward vectors `b_d` and scale factors `c_d`, the smoothed state
//! probabilities `a_d(i) b_d(i)` are the derivative with respect to the
//! state log-densities, and the two-slice probabilities
//! `a_{d-1}(i) gamma_ij q_d(j) b_d(j) / c_d` give the derivatives with respect
//! to the transition logits.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov;
use crate::model::{Layout, Model, ModelSpec};
use crate::obsmodel::SeriesSet;

/// Observation features of one series, stored sparsely per variable.
#[derive(Debug, Clone)]
pub struct PreparedSeries {
    pub len: usize,
    pub exposed: Vec<bool>,
    /// `obs[p]` lists `(event index, features)` for the events where variable `p` is present.
    pub obs: Vec<Vec<(usize, [f64; 2])>>,
}

/// A dataset with the per-observation features precomputed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub series: Vec<PreparedSeries>,
}

impl PreparedData {
    pub fn new(data: &SeriesSet) -> Self {
        let series = data
            .series
            .iter()
            .map(|s| {
                let mut obs = vec![Vec::new(); data.schema.len()];
                for (d, ev) in s.events.iter().enumerate() {
                    for (p, v) in ev.values.iter().enumerate() {
                        if let Some(x) = v {
                            obs[p].push((d, data.schema[p].family.features(*x)));
                        }
                    }
                }
                PreparedSeries { len: s.events.len(), exposed: s.events.iter().map(|e| e.exposed).collect(), obs }
            })
            .collect();
        Self { series }
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }
}

/// Per-series state log-densities, `table[w][d * n + i] = log f(x_wd | S = i)`.
pub type EmissionTable = Vec<Vec<f64>>;

/// Transition, initial and mixture quantities for one parameter point.
#[derive(Debug, Clone)]
pub struct MarkovParts {
    /// `tpm[k][z]`, row-major `n * n`.
    pub tpm: Vec<[Vec<f64>; 2]>,
    pub delta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
}

/// Log-likelihood broken down by series and context.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// `log L_k^(w)`, indexed `[w][k]`.
    pub per_series_per_context: Vec<Vec<f64>>,
    /// `log L^(w) = logsumexp_k(log pi_k + log L_k^(w))`.
    pub per_series: Vec<f64>,
    pub total: f64,
}

/// `log(sum(exp(v)))`, returning `-inf` when every entry is `-inf`.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Evaluates likelihoods and gradients of one model structure on one dataset.
pub struct Evaluator<'a> {
    spec: &'a ModelSpec,
    layout: Layout,
    data: &'a PreparedData,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a PreparedData) -> Self {
        Self { spec, layout: spec.layout(), data }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &PreparedData {
        self.data
    }

    /// Linear-form coefficients per variable and state: `coef[p][i]`.
    fn coefficients(&self, theta: &[f64]) -> Vec<Option<Vec<[f64; 3]>>> {
        let em = crate::model::emissions_from_theta(self.spec, &self.layout, theta);
        em.blocks.iter().map(|b| b.as_ref().map(|b| b.iter().map(|d| d.linear_form()).collect())).collect()
    }

    pub fn emission_table(&self, theta: &[f64]) -> EmissionTable {
        let n = self.spec.n_states;
        let coef = self.coefficients(theta);
        self.data
            .series
            .iter()
            .map(|s| {
                let mut t = vec![0.0; s.len * n];
                for (p, obs) in s.obs.iter().enumerate() {
                    let Some(c) = &coef[p] else { continue };
                    for &(d, [f0, f1]) in obs {
                        let row = &mut t[d * n..(d + 1) * n];
                        for (i, [c0, c1, c2]) in c.iter().enumerate() {
                            row[i] += c0 + c1 * f0 + c2 * f1;
                        }
                    }
                }
                t
            })
            .collect()
    }

    pub fn markov(&self, theta: &[f64]) -> MarkovParts {
        let lay = &self.layout;
        let n = self.spec.n_states;
        let k = self.spec.n_contexts;
        let mut tpm = Vec::with_capacity(k);
        let mut delta = Vec::with_capacity(k);
        for c in 0..k {
            let mut alpha = vec![0.0; n * n];
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    alpha[i * n + j] = theta[lay.alpha_index(c, i, j)];
                }
            }
            let beta = lay.beta_block(c).map(|b| {
                let mut beta = vec![0.0; n * n];
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        beta[i * n + j] = theta[lay.beta_index(b, i, j)];
                    }
                }
                beta
            });
            tpm.push([
                markov::tpm_from_logits(&alpha, beta.as_deref(), false, n),
                markov::tpm_from_logits(&alpha, beta.as_deref(), true, n),
            ]);
            let rest: Vec<f64> = (1..n).map(|s| theta[lay.delta_index(c, s)]).collect();
            delta.push(markov::probs_from_reference_logits(&rest));
        }
        let rest: Vec<f64> = (1..k).map(|c| theta[lay.pi_index(c)]).collect();
        MarkovParts { tpm, delta, pi: markov::probs_from_reference_logits(&rest) }
    }

    /// Log-likelihood of every series under every context.
    pub fn forward(&self, theta: &[f64]) -> ForwardResult {
        let table = self.emission_table(theta);
        self.forward_with_table(theta, &table)
    }

    pub fn forward_with_table(&self, theta: &[f64], table: &EmissionTable) -> ForwardResult {
        let mk = self.markov(theta);
        let per: Vec<Vec<f64>> =
            self.data.series.iter().zip(table).map(|(s, t)| self.series_contexts(s, t, &mk)).collect();
        combine(per, &mk.pi)
    }

    /// Same result as [`Evaluator::forward`], evaluating series on the rayon pool.
    /// Contributions are summed in series order, so the result is bitwise identical.
    pub fn forward_parallel(&self, theta: &[f64]) -> ForwardResult {
        let table = self.emission_table(theta);
        let mk = self.markov(theta);
        let per: Vec<Vec<f64>> =
            self.data.series.par_iter().zip(table.par_iter()).map(|(s, t)| self.series_contexts(s, t, &mk)).collect();
        combine(per, &mk.pi)
    }

    fn series_contexts(&self, s: &PreparedSeries, logf: &[f64], mk: &MarkovParts) -> Vec<f64> {
        let n = self.spec.n_states;
        let mut a = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        (0..self.spec.n_contexts)
            .map(|k| forward_scaled(logf, &s.exposed, n, &mk.tpm[k], &mk.delta[k], &mut a, &mut tmp, None))
            .collect()
    }

    /// Total log-likelihood and its gradient in working space.
    ///
    /// With `frozen = Some(table)` the emission table is taken as given and the
    /// emission components of `grad` are left at zero.
    pub fn value_and_gradient(&self, theta: &[f64], frozen: Option<&EmissionTable>, grad: &mut [f64]) -> f64 {
        let n = self.spec.n_states;
        let k = self.spec.n_contexts;
        let lay = &self.layout;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let owned;
        let table = match frozen {
            Some(t) => t,
            None => {
                owned = self.emission_table(theta);
                &owned
            }
        };
        let mk = self.markov(theta);
        let mut ws = Workspace::new(n);
        let mut total = 0.0;
        // Accumulated over series, weighted by context posteriors.
        let mut g_eta = vec![[vec![0.0; n * n], vec![0.0; n * n]]; k];
        let mut g_delta = vec![vec![0.0; n]; k];
        let mut g_pi = vec![0.0; k];
        let coef_grads = frozen.is_none().then(|| self.coefficient_gradients(theta));
        let mut stats: Vec<Option<Vec<[f64; 3]>>> = self
            .spec
            .active
            .iter()
            .map(|&a| (a && frozen.is_none()).then(|| vec![[0.0; 3]; n]))
            .collect();

        for (s, logf) in self.data.series.iter().zip(table) {
            let len = s.len;
            ws.resize(len, k);
            let mut lls = vec![0.0; k];
            for c in 0..k {
                lls[c] = forward_scaled(
                    logf,
                    &s.exposed,
                    n,
                    &mk.tpm[c],
                    &mk.delta[c],
                    &mut ws.a,
                    &mut ws.tmp,
                    Some(&mut ws.forward[c]),
                );
            }
            let mut weighted: Vec<f64> = lls.iter().zip(&mk.pi).map(|(l, p)| l + p.ln()).collect();
            let ll = logsumexp(&weighted);
            total += ll;
            if !ll.is_finite() {
                continue;
            }
            for w in &mut weighted {
                *w = (*w - ll).exp();
            }
            let rho = weighted;
            ws.posterior.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..k {
                g_pi[c] += rho[c] - mk.pi[c];
                if rho[c] == 0.0 || !lls[c].is_finite() {
                    continue;
                }
                backward_accumulate(
                    logf,
                    &s.exposed,
                    n,
                    &mk.tpm[c],
                    &ws.forward[c],
                    rho[c],
                    &mut ws.b,
                    &mut ws.b_next,
                    &mut ws.posterior,
                    &mut g_eta[c],
                    &mut ws.first,
                );
                for l in 0..n {
                    g_delta[c][l] += rho[c] * (ws.first[l] - mk.delta[c][l]);
                }
            }
            if coef_grads.is_some() {
                for (p, obs) in s.obs.iter().enumerate() {
                    let Some(acc) = &mut stats[p] else { continue };
                    for &(d, [f0, f1]) in obs {
                        let post = &ws.posterior[d * n..(d + 1) * n];
                        for i in 0..n {
                            let w = post[i];
                            acc[i][0] += w;
                            acc[i][1] += w * f0;
                            acc[i][2] += w * f1;
                        }
                    }
                }
            }
        }

        if let Some(cg) = &coef_grads {
            for (p, acc) in stats.iter().enumerate() {
                let (Some(acc), Some(cg)) = (acc, &cg[p]) else { continue };
                for i in 0..n {
                    for (j, dc) in cg[i].iter().enumerate() {
                        let idx = lay.emission_index(p, i, j).unwrap();
                        grad[idx] = dc[0] * acc[i][0] + dc[1] * acc[i][1] + dc[2] * acc[i][2];
                    }
                }
            }
        }
        for c in 0..k {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let g0 = g_eta[c][0][i * n + j];
                    let g1 = g_eta[c][1][i * n + j];
                    grad[lay.alpha_index(c, i, j)] += g0 + g1;
                    if let Some(b) = lay.beta_block(c) {
                        grad[lay.beta_index(b, i, j)] += g1;
                    }
                }
            }
            for l in 1..n {
                grad[lay.delta_index(c, l)] += g_delta[c][l];
            }
        }
        for c in 1..k {
            grad[lay.pi_index(c)] += g_pi[c];
        }
        total
    }

    fn coefficient_gradients(&self, theta: &[f64]) -> Vec<Option<Vec<Vec<[f64; 3]>>>> {
        let em = crate::model::emissions_from_theta(self.spec, &self.layout, theta);
        em.blocks
            .iter()
            .map(|b| b.as_ref().map(|b| b.iter().map(|d| d.linear_form_log_gradient()).collect()))
            .collect()
    }
}

fn combine(per: Vec<Vec<f64>>, pi: &[f64]) -> ForwardResult {
    let log_pi: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    let per_series: Vec<f64> = per
        .iter()
        .map(|lls| {
            let v: Vec<f64> = lls.iter().zip(&log_pi).map(|(l, p)| l + p).collect();
            logsumexp(&v)
        })
        .collect();
    let total = per_series.iter().sum();
    ForwardResult { per_series_per_context: per, per_series, total }
}

/// Stored forward pass of one series under one context.
#[derive(Debug, Clone, Default)]
pub(crate) struct ForwardStore {
    /// Normalised forward vectors, `len * n`.
    pub a: Vec<f64>,
    /// `c_d`, the normaliser of the scaled forward vector at event `d`.
    pub c: Vec<f64>,
}

struct Workspace {
    a: Vec<f64>,
    tmp: Vec<f64>,
    b: Vec<f64>,
    b_next: Vec<f64>,
    forward: Vec<ForwardStore>,
    posterior: Vec<f64>,
    first: Vec<f64>,
    n: usize,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            tmp: vec![0.0; n],
            b: vec![0.0; n],
            b_next: vec![0.0; n],
            forward: Vec::new(),
            posterior: Vec::new(),
            first: vec![0.0; n],
            n,
        }
    }

    fn resize(&mut self, len: usize, k: usize) {
        let n = self.n;
        self.forward.resize_with(k, ForwardStore::default);
        for f in &mut self.forward {
            f.a.resize(len * n, 0.0);
            f.c.resize(len, 0.0);
        }
        self.posterior.resize(len * n, 0.0);
    }
}

/// Scaled forward recursion. Returns `log L`; `-inf` if the data are impossible.
///
/// `q_d(i) = exp(logf_d(i) - max_i logf_d(i))` keeps each event's densities in
/// range before the normalised vector is propagated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_scaled(
    logf: &[f64],
    exposed: &[bool],
    n: usize,
    tpm: &[Vec<f64>; 2],
    delta: &[f64],
    a: &mut [f64],
    tmp: &mut [f64],
    mut store: Option<&mut ForwardStore>,
) -> f64 {
    let len = exposed.len();
    let mut ll = 0.0;
    for d in 0..len {
        let row = &logf[d * n..(d + 1) * n];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return if m.is_nan() { f64::NAN } else { f64::NEG_INFINITY };
        }
        if d == 0 {
            for i in 0..n {
                tmp[i] = delta[i] * (row[i] - m).exp();
            }
        } else {
            let g = &tpm[exposed[d] as usize];
            for j in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += a[i] * g[i * n + j];
                }
                tmp[j] = s * (row[j] - m).exp();
            }
        }
        let c: f64 = tmp.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return if c.is_nan() { f64::NAN } else { f64::NEG_INFINITY };
        }
        for i in 0..n {
            a[i] = tmp[i] / c;
        }
        ll += c.ln() + m;
        if let Some(st) = store.as_deref_mut() {
            st.a[d * n..(d + 1) * n].copy_from_slice(a);
            st.c[d] = c;
        }
    }
    ll
}

/// Backward pass over a stored forward pass. Adds `weight` times the smoothed
/// state probabilities into `posterior` and `weight` times the logit
/// gradients into `g_eta[z]`; writes the unweighted smoothed probabilities of
/// the first event into `first`.
#[allow(clippy::too_many_arguments)]
fn backward_accumulate(
    logf: &[f64],
    exposed: &[bool],
    n: usize,
    tpm: &[Vec<f64>; 2],
    store: &ForwardStore,
    weight: f64,
    b: &mut Vec<f64>,
    b_next: &mut Vec<f64>,
    posterior: &mut [f64],
    g_eta: &mut [Vec<f64>; 2],
    first: &mut [f64],
) {
    let len = exposed.len();
    b.iter_mut().for_each(|v| *v = 1.0);
    let mut qb = vec![0.0; n];
    for d in (0..len).rev() {
        let a_d = &store.a[d * n..(d + 1) * n];
        for i in 0..n {
            posterior[d * n + i] += weight * a_d[i] * b[i];
        }
        if d == 0 {
            for i in 0..n {
                first[i] = a_d[i] * b[i];
            }
            break;
        }
        // Transition into event d.
        let row = &logf[d * n..(d + 1) * n];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = store.c[d];
        for j in 0..n {
            qb[j] = (row[j] - m).exp() * b[j] / c;
        }
        let z = exposed[d] as usize;
        let g = &tpm[z];
        let a_prev = &store.a[(d - 1) * n..d * n];
        for i in 0..n {
            let mut bi = 0.0;
            for j in 0..n {
                bi += g[i * n + j] * qb[j];
            }
            b_next[i] = bi;
        }
        for i in 0..n {
            // sum_j xi(i, j) equals the smoothed probability of state i at d - 1.
            let p_prev = a_prev[i] * b_next[i];
            for l in 0..n {
                let xi = a_prev[i] * g[i * n + l] * qb[l];
                g_eta[z][i * n + l] += weight * (xi - g[i * n + l] * p_prev);
            }
        }
        std::mem::swap(b, b_next);
    }
}

/// Smoothed state probabilities of one series under one context, with its log-likelihood.
pub(crate) fn smooth_series(
    logf: &[f64],
    exposed: &[bool],
    n: usize,
    tpm: &[Vec<f64>; 2],
    delta: &[f64],
) -> (f64, Vec<f64>) {
    let len = exposed.len();
    let mut store = ForwardStore { a: vec![0.0; len * n], c: vec![0.0; len] };
    let mut a = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let ll = forward_scaled(logf, exposed, n, tpm, delta, &mut a, &mut tmp, Some(&mut store));
    let mut post = vec![0.0; len * n];
    if ll.is_finite() {
        let mut g = [vec![0.0; n * n], vec![0.0; n * n]];
        let mut b = vec![0.0; n];
        let mut b_next = vec![0.0; n];
        let mut first = vec![0.0; n];
        backward_accumulate(logf, exposed, n, tpm, &store, 1.0, &mut b, &mut b_next, &mut post, &mut g, &mut first);
    }
    (ll, post)
}

/// Log-likelihood of one series given its context.
pub fn forward_loglik_one_series(data: &SeriesSet, series: usize, context: usize, model: &Model) -> Result<f64> {
    let spec = &model.spec;
    spec.check_data(data)?;
    if series >= data.series.len() || context >= spec.n_contexts {
        return Err(Error::Domain(format!("no series {series} / context {context}")));
    }
    model.emissions().validate(&spec.schema)?;
    let single = SeriesSet { schema: data.schema.clone(), series: vec![data.series[series].clone()] };
    let prepared = PreparedData::new(&single);
    let ev = Evaluator::new(spec, &prepared);
    let table = ev.emission_table(&model.theta);
    check_table(&table, &single)?;
    let r = ev.forward_with_table(&model.theta, &table);
    let ll = r.per_series_per_context[0][context];
    if ll.is_nan() {
        return Err(Error::Numerical(format!("non-finite likelihood for series '{}'", data.series[series].id)));
    }
    Ok(ll)
}

/// Total log-likelihood with per-series, per-context breakdown.
pub fn total_loglik(data: &SeriesSet, model: &Model) -> Result<ForwardResult> {
    let spec = &model.spec;
    spec.check_data(data)?;
    model.emissions().validate(&spec.schema)?;
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let table = ev.emission_table(&model.theta);
    check_table(&table, data)?;
    let r = ev.forward_with_table(&model.theta, &table);
    if r.total.is_nan() {
        return Err(Error::Numerical("log-likelihood is NaN".into()));
    }
    Ok(r)
}

fn check_table(table: &EmissionTable, data: &SeriesSet) -> Result<()> {
    for (t, s) in table.iter().zip(&data.series) {
        if let Some(pos) = t.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite state density in series '{}' at event {}",
                s.id,
                pos / (t.len() / s.events.len()) + 1
            )));
        }
    }
    Ok(())
}
