//! State decoding, context posteriors and confidence intervals for a fitted
//! model.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::likelihood::{self, Evaluator, PreparedData};
use crate::model::{Model, ParamId};
use crate::obsmodel::SeriesSet;
use crate::optim::{self, OptimConfig};

/// Decoding output for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub series_id: String,
    /// `posterior[d][j] = Pr(S_d = j | data)`, mixed over contexts.
    pub posterior: Vec<Vec<f64>>,
    /// Per-event argmax of `posterior`, lowest index on ties.
    pub map_states: Vec<usize>,
    /// `Pr(context = k | data)`.
    pub context_posterior: Vec<f64>,
}

/// `softmax(log L_k + log pi_k)`.
pub fn context_posterior(series_logliks: &[f64], pi: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = series_logliks.iter().zip(pi).map(|(l, p)| l + p.ln()).collect();
    let total = likelihood::logsumexp(&w);
    w.iter().map(|v| (v - total).exp()).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Local decoding: per-context forward–backward smoothing, mixed by the
/// context posteriors.
pub fn decode_local(data: &SeriesSet, model: &Model) -> Result<Vec<DecodeResult>> {
    let spec = &model.spec;
    spec.check_data(data)?;
    model.emissions().validate(&spec.schema)?;
    let n = spec.n_states;
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let table = ev.emission_table(&model.theta);
    let mk = ev.markov(&model.theta);
    data.series
        .par_iter()
        .zip(prepared.series.par_iter())
        .zip(table.par_iter())
        .map(|((series, s), logf)| {
            let smoothed: Vec<(f64, Vec<f64>)> = (0..spec.n_contexts)
                .map(|k| likelihood::smooth_series(logf, &s.exposed, n, &mk.tpm[k], &mk.delta[k]))
                .collect();
            let lls: Vec<f64> = smoothed.iter().map(|(l, _)| *l).collect();
            let rho = context_posterior(&lls, &mk.pi);
            if rho.iter().any(|r| !r.is_finite()) {
                return Err(Error::Numerical(format!("series '{}' has zero likelihood under every context", series.id)));
            }
            let mut post = vec![vec![0.0; n]; s.len];
            for ((_, sm), &r) in smoothed.iter().zip(&rho) {
                if r == 0.0 {
                    continue;
                }
                for (d, row) in post.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += r * sm[d * n + j];
                    }
                }
            }
            for (d, row) in post.iter().enumerate() {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite smoothing probability in series '{}' at event {}",
                        series.id,
                        d + 1
                    )));
                }
            }
            let map_states = post.iter().map(|r| argmax(r)).collect();
            Ok(DecodeResult { series_id: series.id.clone(), posterior: post, map_states, context_posterior: rho })
        })
        .collect()
}

/// Global decoding: the jointly most likely (context, state path) per series.
pub fn viterbi(data: &SeriesSet, model: &Model) -> Result<Vec<Vec<usize>>> {
    let spec = &model.spec;
    spec.check_data(data)?;
    model.emissions().validate(&spec.schema)?;
    let n = spec.n_states;
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let table = ev.emission_table(&model.theta);
    let mk = ev.markov(&model.theta);
    let log_tpm: Vec<[Vec<f64>; 2]> =
        mk.tpm.iter().map(|t| [t[0].iter().map(|p| p.ln()).collect(), t[1].iter().map(|p| p.ln()).collect()]).collect();
    Ok(prepared
        .series
        .par_iter()
        .zip(table.par_iter())
        .map(|(s, logf)| {
            let mut best = (f64::NEG_INFINITY, vec![0; s.len]);
            for k in 0..spec.n_contexts {
                let mut score: Vec<f64> = (0..n).map(|i| mk.delta[k][i].ln() + logf[i]).collect();
                let mut back = vec![0usize; s.len * n];
                for d in 1..s.len {
                    let lg = &log_tpm[k][s.exposed[d] as usize];
                    let mut next = vec![f64::NEG_INFINITY; n];
                    for j in 0..n {
                        for i in 0..n {
                            let v = score[i] + lg[i * n + j];
                            if v > next[j] {
                                next[j] = v;
                                back[d * n + j] = i;
                            }
                        }
                        next[j] += logf[d * n + j];
                    }
                    score = next;
                }
                let last = argmax(&score);
                let total = score[last] + mk.pi[k].ln();
                if total > best.0 {
                    let mut path = vec![0; s.len];
                    path[s.len - 1] = last;
                    for d in (1..s.len).rev() {
                        path[d - 1] = back[d * n + path[d]];
                    }
                    best = (total, path);
                }
            }
            best.1
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Fisher,
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiFlag {
    /// The observed information is not positive in this direction.
    NonpositiveCurvature,
    /// The estimate sits on its working-space bound.
    AtBound,
}

/// An interval on the natural scale of a parameter. Endpoints may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub parameter: String,
    /// Working-space index, `None` for derived quantities.
    pub index: Option<usize>,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: CiMethod,
    pub flag: Option<CiFlag>,
}

fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} is not in (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(0.5 + level / 2.0))
}

/// Observed information (Hessian of the negative log-likelihood) by central
/// differences of the analytic gradient, `h = 1e-4 max(|theta|, 1)`.
pub fn observed_information(ev: &Evaluator, theta: &[f64]) -> DMatrix<f64> {
    let len = theta.len();
    let cols: Vec<Vec<f64>> = (0..len)
        .into_par_iter()
        .map(|j| {
            let h = 1e-4 * theta[j].abs().max(1.0);
            let mut x = theta.to_vec();
            let mut gp = vec![0.0; len];
            let mut gm = vec![0.0; len];
            x[j] = theta[j] + h;
            ev.value_and_gradient(&x, None, &mut gp);
            x[j] = theta[j] - h;
            ev.value_and_gradient(&x, None, &mut gm);
            gp.iter().zip(&gm).map(|(p, m)| -(p - m) / (2.0 * h)).collect()
        })
        .collect();
    let h = DMatrix::from_fn(len, len, |r, c| cols[c][r]);
    (&h + h.transpose()) * 0.5
}

/// Inverts the information matrix on the parameters that are not flagged.
/// Parameters at a bound or with nonpositive curvature are flagged and
/// removed until the remaining block is positive definite.
fn covariance(info: &DMatrix<f64>, mut flags: Vec<Option<CiFlag>>) -> (Vec<Option<CiFlag>>, DMatrix<f64>) {
    let len = info.nrows();
    for j in 0..len {
        if flags[j].is_none() && !(info[(j, j)] > 0.0) {
            flags[j] = Some(CiFlag::NonpositiveCurvature);
        }
    }
    loop {
        let keep: Vec<usize> = (0..len).filter(|&j| flags[j].is_none()).collect();
        let mut cov = DMatrix::from_element(len, len, f64::NAN);
        if keep.is_empty() {
            return (flags, cov);
        }
        let sub = DMatrix::from_fn(keep.len(), keep.len(), |r, c| info[(keep[r], keep[c])]);
        let eig = SymmetricEigen::new(sub.clone());
        let max_ev = eig.eigenvalues.amax();
        let (imin, min_ev) = eig.eigenvalues.argmin();
        if !(min_ev > 1e-10 * max_ev) {
            let v = eig.eigenvectors.column(imin);
            flags[keep[v.iamax()]] = Some(CiFlag::NonpositiveCurvature);
            continue;
        }
        let inv = match sub.cholesky() {
            Some(ch) => ch.inverse(),
            None => {
                let v = eig.eigenvectors.column(imin);
                flags[keep[v.iamax()]] = Some(CiFlag::NonpositiveCurvature);
                continue;
            }
        };
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                cov[(i, j)] = inv[(r, c)];
            }
        }
        return (flags, cov);
    }
}

fn to_natural(id: &ParamId, v: f64) -> f64 {
    crate::model::natural_from_working(id, v)
}

/// Wald intervals from the observed information, transformed to the natural
/// scale by mapping the endpoints. Flagged parameters get `(-inf, inf)`.
/// Mixture weights and initial probabilities are added as derived intervals
/// built on their own logit scale by the delta method.
pub fn fisher_confidence_intervals(data: &SeriesSet, model: &Model, level: f64) -> Result<Vec<ConfidenceInterval>> {
    let z = z_value(level)?;
    let spec = &model.spec;
    spec.check_data(data)?;
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let lay = ev.layout();
    let (lo, hi) = lay.bounds();
    let theta = &model.theta;
    let info = observed_information(&ev, theta);
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("observed information has non-finite entries".into()));
    }
    let at_bound: Vec<Option<CiFlag>> = (0..theta.len())
        .map(|j| {
            let tol = 1e-6 * theta[j].abs().max(1.0);
            ((theta[j] - lo[j]).abs() < tol || (hi[j] - theta[j]).abs() < tol).then_some(CiFlag::AtBound)
        })
        .collect();
    let (flags, cov) = covariance(&info, at_bound);
    let ids = lay.ids();
    let mut out = Vec::with_capacity(theta.len());
    for (j, id) in ids.iter().enumerate() {
        let est = to_natural(id, theta[j]);
        let (lower, upper) = match flags[j] {
            Some(_) => (f64::NEG_INFINITY, f64::INFINITY),
            None => {
                let se = cov[(j, j)].sqrt();
                (to_natural(id, theta[j] - z * se), to_natural(id, theta[j] + z * se))
            }
        };
        out.push(ConfidenceInterval {
            parameter: id.name(spec),
            index: Some(j),
            estimate: est,
            lower,
            upper,
            method: CiMethod::Fisher,
            flag: flags[j],
        });
    }

    // Derived probability vectors: softmax of (0, l_1, ..., l_m) over the
    // given working indices.
    let mut derived = |name: String, idx: Vec<usize>| {
        let rest: Vec<f64> = idx.iter().map(|&i| theta[i]).collect();
        let p = crate::markov::probs_from_reference_logits(&rest);
        for (k, &pk) in p.iter().enumerate() {
            let label = format!("{name}[{}]", k + 1);
            let ok = idx.iter().all(|&i| flags[i].is_none()) && pk < 1.0 && pk > 0.0;
            let (lower, upper) = if ok {
                // d logit(p_k) / d l_j = ([j == k] - p_j) / (1 - p_k)
                let grad: Vec<f64> = idx
                    .iter()
                    .enumerate()
                    .map(|(m, _)| (f64::from(u8::from(m + 1 == k)) - p[m + 1]) / (1.0 - pk))
                    .collect();
                let mut var = 0.0;
                for (a, &ia) in idx.iter().enumerate() {
                    for (b, &ib) in idx.iter().enumerate() {
                        var += grad[a] * cov[(ia, ib)] * grad[b];
                    }
                }
                let eta = (pk / (1.0 - pk)).ln();
                let se = var.max(0.0).sqrt();
                let expit = |x: f64| 1.0 / (1.0 + (-x).exp());
                (expit(eta - z * se), expit(eta + z * se))
            } else {
                (0.0, 1.0)
            };
            out.push(ConfidenceInterval {
                parameter: label,
                index: None,
                estimate: pk,
                lower,
                upper,
                method: CiMethod::Fisher,
                flag: (!ok).then_some(CiFlag::NonpositiveCurvature),
            });
        }
    };
    if spec.n_contexts > 1 {
        derived("pi".into(), (1..spec.n_contexts).map(|c| lay.pi_index(c)).collect());
    }
    for c in 0..spec.n_contexts {
        let suffix = if spec.n_contexts > 1 { format!("@k{}", c + 1) } else { String::new() };
        derived(format!("delta{suffix}"), (1..spec.n_states).map(|s| lay.delta_index(c, s)).collect());
    }
    Ok(out)
}

/// Locates the two points where `profile` drops `threshold` below `max_ll`,
/// stepping outward from `estimate` with growing steps and refining by
/// bisection. An endpoint is infinite when the bound is reached first.
/// `profile(x)` returns `None` when its inner optimisation fails; isolated
/// failures are stepped over, pervasive ones are an error.
#[allow(clippy::too_many_arguments)]
pub fn profile_interval<F>(
    profile: F,
    estimate: f64,
    max_ll: f64,
    lower_bound: f64,
    upper_bound: f64,
    threshold: f64,
    initial_step: f64,
    tolerance: f64,
) -> Result<(f64, f64)>
where
    F: Fn(f64, f64) -> Option<f64> + Sync,
{
    let search = |dir: f64| -> Result<f64> {
        let bound = if dir < 0.0 { lower_bound } else { upper_bound };
        let mut step = initial_step;
        let mut inside = estimate;
        let mut failures = 0;
        let mut evaluations = 0;
        loop {
            if inside == bound {
                return Ok(dir * f64::INFINITY);
            }
            let x = (inside + dir * step).clamp(lower_bound, upper_bound);
            evaluations += 1;
            match profile(x, inside) {
                None => {
                    failures += 1;
                    if failures > 3 && failures * 2 > evaluations {
                        return Err(Error::Estimation(format!("profile optimisation failed at {failures} points")));
                    }
                    if x == bound {
                        return Ok(dir * f64::INFINITY);
                    }
                    // Step over the failed point.
                    step *= 1.5;
                    continue;
                }
                Some(v) if max_ll - v > threshold => {
                    let (mut a, mut b) = (inside, x);
                    while (b - a).abs() > tolerance * a.abs().max(1.0) {
                        let m = 0.5 * (a + b);
                        match profile(m, a) {
                            Some(v) if max_ll - v <= threshold => a = m,
                            _ => b = m,
                        }
                    }
                    return Ok(0.5 * (a + b));
                }
                Some(_) => {
                    inside = x;
                    step *= 1.6;
                    if evaluations > 200 {
                        return Ok(dir * f64::INFINITY);
                    }
                }
            }
        }
    };
    let (lo, hi) = rayon::join(|| search(-1.0), || search(1.0));
    Ok((lo?, hi?))
}

/// Profile-likelihood interval for working coordinate `index`, reported on
/// the parameter's natural scale.
pub fn profile_ci(
    data: &SeriesSet,
    model: &Model,
    index: usize,
    level: f64,
    optimizer: &OptimConfig,
) -> Result<ConfidenceInterval> {
    let z = z_value(level)?;
    let spec = &model.spec;
    spec.check_data(data)?;
    let prepared = PreparedData::new(data);
    let ev = Evaluator::new(spec, &prepared);
    let lay = ev.layout();
    if index >= lay.len {
        return Err(Error::Domain(format!("parameter index {index} out of range")));
    }
    let (lo, hi) = lay.bounds();
    let theta = &model.theta;
    let max_ll = ev.forward(theta).total;
    if !max_ll.is_finite() {
        return Err(Error::Numerical("log-likelihood at the estimate is not finite".into()));
    }
    // Warm starts: the optimum found at the last inside point in each direction.
    let warm = std::sync::Mutex::new(Vec::<(f64, Vec<f64>)>::new());
    let profile = |x: f64, near: f64| -> Option<f64> {
        let start = {
            let w = warm.lock().unwrap();
            w.iter()
                .filter(|(v, _)| (*v - near).abs() < 1e-12 * near.abs().max(1.0))
                .map(|(_, t)| t.clone())
                .next_back()
                .unwrap_or_else(|| theta.clone())
        };
        let mut start = start;
        start[index] = x;
        let (mut l, mut h) = (lo.clone(), hi.clone());
        l[index] = x;
        h[index] = x;
        let objective = |t: &[f64], g: &mut [f64]| {
            let v = ev.value_and_gradient(t, None, g);
            g.iter_mut().for_each(|gi| *gi = -*gi);
            -v
        };
        let r = optim::minimize(&objective, &start, &l, &h, optimizer);
        if !r.value.is_finite() {
            return None;
        }
        warm.lock().unwrap().push((x, r.x));
        Some(-r.value)
    };
    let step = 0.25 * theta[index].abs().max(1.0);
    let (a, b) = profile_interval(profile, theta[index], max_ll, lo[index], hi[index], 0.5 * z * z, step, 1e-3)?;
    let id = &lay.ids()[index];
    let at_bound = theta[index] <= lo[index] || theta[index] >= hi[index];
    let nat = |v: f64| if v.is_infinite() { if id.is_log_scale() && v < 0.0 { 0.0 } else { v } } else { to_natural(id, v) };
    Ok(ConfidenceInterval {
        parameter: id.name(spec),
        index: Some(index),
        estimate: to_natural(id, theta[index]),
        lower: nat(a),
        upper: nat(b),
        method: CiMethod::Profile,
        flag: at_bound.then_some(CiFlag::AtBound),
    })
}

/// Fisher intervals, with every flagged working parameter recomputed by
/// profile likelihood.
pub fn confidence_intervals(
    data: &SeriesSet,
    model: &Model,
    level: f64,
    optimizer: &OptimConfig,
) -> Result<Vec<ConfidenceInterval>> {
    let mut cis = fisher_confidence_intervals(data, model, level)?;
    for ci in cis.iter_mut() {
        if let (Some(j), Some(_)) = (ci.index, ci.flag) {
            let flag = ci.flag;
            *ci = profile_ci(data, model, j, level, optimizer)?;
            ci.flag = ci.flag.or(flag);
        }
    }
    Ok(cis)
}
