//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use mixhmm::model::LOGIT_BOUND;
use mixhmm::simulate::{simulate, Missingness, SimConfig, SimTruth};
use mixhmm::{CovariateEffect, EmissionParams, Family, Model, ModelSpec, NaturalParams, SeriesSet, StateDensity, Variable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, Continuous, Discrete, Gamma, Poisson};

pub fn whale_schema() -> Vec<Variable> {
    vec![
        Variable::new("duration", Family::Gamma),
        Variable::new("surface_duration", Family::Gamma),
        Variable::new("max_depth", Family::Gamma),
        Variable::new("lunges", Family::Poisson),
        Variable::new("step_length", Family::Gamma),
        Variable::new("turning_angle", Family::VonMises),
        Variable::new("heading_variance", Family::Beta),
    ]
}

/// Events per series of the reference blue whale dataset.
pub const DIVE_COUNTS: [usize; 37] = [
    26, 31, 24, 26, 53, 54, 16, 27, 16, 22, 22, 11, 17, 36, 27, 15, 26, 44, 17, 17, 33, 24, 51, 93, 17, 23, 10, 6, 15,
    33, 17, 14, 41, 37, 21, 13, 67,
];

/// Reference single-context transition matrix, printed to three decimals.
pub const FITTED_TPM: [f64; 9] = [0.931, 0.014, 0.055, 0.018, 0.785, 0.197, 0.071, 0.100, 0.829];

/// State-dependent parameters of the three-state single-context fit, by state.
pub fn table2_emissions() -> EmissionParams {
    let g = |m: [f64; 3], s: [f64; 3]| Some((0..3).map(|i| StateDensity::Gamma { mean: m[i], sd: s[i] }).collect());
    EmissionParams {
        blocks: vec![
            g([135.4, 350.5, 508.2], [75.3, 216.1, 135.8]),
            g([70.5, 86.4, 148.3], [68.4, 53.9, 69.1]),
            g([30.5, 71.3, 166.7], [21.8, 67.2, 62.0]),
            Some([0.60, 0.01, 3.30].iter().map(|&rate| StateDensity::Poisson { rate }).collect()),
            g([193.8, 710.7, 401.3], [139.1, 294.4, 281.2]),
            Some([1.04, 3.11, 0.83].iter().map(|&concentration| StateDensity::VonMises { concentration }).collect()),
            Some(
                [(0.88, 2.05), (0.52, 6.16), (1.68, 1.59)].iter().map(|&(a, b)| StateDensity::Beta { a, b }).collect(),
            ),
        ],
    }
}

/// The three-state single-context model with the fitted parameters, started
/// from its stationary distribution. States are ordered by max depth.
pub fn whale_model() -> Model {
    let spec = ModelSpec::new(whale_schema(), 3, 1, CovariateEffect::None).unwrap().with_ordering_variable(2).unwrap();
    let delta = mixhmm::markov::stationary_distribution(&FITTED_TPM, 3).unwrap();
    Model::from_natural(
        spec,
        &NaturalParams {
            emissions: table2_emissions(),
            tpms: vec![FITTED_TPM.to_vec()],
            betas: vec![],
            initial: vec![delta],
            mixture: vec![1.0],
        },
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_density<R: Rng>(rng: &mut R, family: Family) -> StateDensity {
    match family {
        Family::Gamma => StateDensity::Gamma { mean: rng.random_range(1.0..10.0), sd: rng.random_range(0.5..5.0) },
        Family::Poisson => StateDensity::Poisson { rate: rng.random_range(0.1..5.0) },
        Family::VonMises => StateDensity::VonMises { concentration: rng.random_range(0.1..5.0) },
        Family::Beta => StateDensity::Beta { a: rng.random_range(0.5..5.0), b: rng.random_range(0.5..5.0) },
    }
}

const FAMILIES: [Family; 4] = [Family::Gamma, Family::Poisson, Family::VonMises, Family::Beta];

/// A random model with the given structure and a random schema of `p` variables.
pub fn random_model<R: Rng>(rng: &mut R, n: usize, k: usize, p: usize, covariate: CovariateEffect) -> Model {
    let schema: Vec<Variable> =
        (0..p).map(|i| Variable::new(format!("v{i}"), FAMILIES[rng.random_range(0..FAMILIES.len())])).collect();
    let spec = ModelSpec::new(schema, n, k, covariate).unwrap();
    random_parameters(rng, &spec)
}

/// Random parameters for `spec`: natural emission values, logits in (-2, 2).
pub fn random_parameters<R: Rng>(rng: &mut R, spec: &ModelSpec) -> Model {
    let lay = spec.layout();
    let mut theta: Vec<f64> = (0..lay.len).map(|_| rng.random_range(-2.0..2.0)).collect();
    for (p, v) in spec.schema.iter().enumerate() {
        if lay.emission[p].is_none() {
            continue;
        }
        for i in 0..spec.n_states {
            let d = random_density(rng, v.family);
            for (j, val) in d.values().iter().enumerate() {
                theta[lay.emission_index(p, i, j).unwrap()] = val.ln();
            }
        }
    }
    Model::new(spec.clone(), theta).unwrap()
}

/// Simulates `lengths` series with random exposure windows and missing values.
pub fn random_data<R: Rng>(rng: &mut R, model: &Model, lengths: Vec<usize>, missing: f64) -> (SeriesSet, SimTruth) {
    let exposure = lengths
        .iter()
        .map(|&l| {
            let a = rng.random_range(1..=l);
            let b = rng.random_range(a..=l);
            if rng.random_bool(0.7) {
                vec![(a, b)]
            } else {
                vec![]
            }
        })
        .collect();
    let cfg = SimConfig {
        model: model.clone(),
        lengths,
        exposure,
        missingness: Missingness::Probability(vec![missing; model.spec.schema.len()]),
        rng_seed: rng.random(),
    };
    simulate(&cfg).unwrap()
}

/// `log I0(kappa)` by the trapezoid rule over a full period, which converges
/// geometrically for this periodic integrand.
pub fn ln_i0_quadrature(kappa: f64) -> f64 {
    let m = 400;
    let s: f64 = (0..m).map(|j| (kappa * ((2.0 * PI * j as f64 / m as f64).cos() - 1.0)).exp()).sum();
    kappa + (s / m as f64).ln()
}

/// Log-density from textbook parameterisations.
pub fn oracle_log_density(d: &StateDensity, x: f64) -> f64 {
    match *d {
        StateDensity::Gamma { mean, sd } => {
            let shape = mean * mean / (sd * sd);
            let rate = mean / (sd * sd);
            Gamma::new(shape, rate).unwrap().ln_pdf(x)
        }
        StateDensity::Poisson { rate } => Poisson::new(rate).unwrap().ln_pmf(x as u64),
        StateDensity::VonMises { concentration } => {
            concentration * x.cos() - (2.0 * PI).ln() - ln_i0_quadrature(concentration)
        }
        StateDensity::Beta { a, b } => Beta::new(a, b).unwrap().ln_pdf(x.clamp(1e-6, 1.0 - 1e-6)),
    }
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-densities of every event under every state, `[d][i]`.
fn oracle_event_table(model: &Model, series: &mixhmm::Series) -> Vec<Vec<f64>> {
    let em = model.emissions();
    series
        .events
        .iter()
        .map(|e| {
            (0..model.spec.n_states)
                .map(|i| {
                    e.values
                        .iter()
                        .zip(&em.blocks)
                        .filter_map(|(v, b)| match (v, b) {
                            (Some(x), Some(b)) => Some(oracle_log_density(&b[i], *x)),
                            _ => None,
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Every state path of length `len` over `n` states.
fn paths(n: usize, len: usize) -> Vec<Vec<usize>> {
    let total = n.pow(len as u32);
    (0..total)
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let s = code % n;
                    code /= n;
                    s
                })
                .collect()
        })
        .collect()
}

/// Brute-force enumeration for one series: per-context log-likelihoods and,
/// per context, the log-probability of each path.
pub struct Enumeration {
    pub per_context: Vec<f64>,
    pub paths: Vec<Vec<usize>>,
    /// `path_logp[k][path]`, joint with the data given context `k`.
    pub path_logp: Vec<Vec<f64>>,
}

pub fn enumerate(model: &Model, series: &mixhmm::Series) -> Enumeration {
    let n = model.spec.n_states;
    let len = series.events.len();
    let table = oracle_event_table(model, series);
    let all = paths(n, len);
    let mut per_context = Vec::new();
    let mut path_logp = Vec::new();
    for k in 0..model.spec.n_contexts {
        let delta = model.initial(k);
        let g = [model.tpm(k, false), model.tpm(k, true)];
        let lp: Vec<f64> = all
            .iter()
            .map(|path| {
                let mut v = delta[path[0]].ln() + table[0][path[0]];
                for d in 1..len {
                    let z = series.events[d].exposed as usize;
                    v += g[z][path[d - 1] * n + path[d]].ln() + table[d][path[d]];
                }
                v
            })
            .collect();
        per_context.push(lse(&lp));
        path_logp.push(lp);
    }
    Enumeration { per_context, paths: all, path_logp }
}

/// Mixture log-likelihood of one series by enumeration.
pub fn oracle_series_loglik(model: &Model, series: &mixhmm::Series) -> f64 {
    let e = enumerate(model, series);
    let pi = model.mixture();
    let v: Vec<f64> = e.per_context.iter().zip(&pi).map(|(l, p)| l + p.ln()).collect();
    lse(&v)
}

/// `Pr(S_d = j | data)` by enumeration, mixed over contexts.
pub fn oracle_posteriors(model: &Model, series: &mixhmm::Series) -> Vec<Vec<f64>> {
    let n = model.spec.n_states;
    let e = enumerate(model, series);
    let pi = model.mixture();
    let total = oracle_series_loglik(model, series);
    let mut post = vec![vec![0.0; n]; series.events.len()];
    for (k, lp) in e.path_logp.iter().enumerate() {
        for (path, &l) in e.paths.iter().zip(lp) {
            let w = (l + pi[k].ln() - total).exp();
            for (d, &s) in path.iter().enumerate() {
                post[d][s] += w;
            }
        }
    }
    post
}

/// Relative difference with a floor of 1 on the scale.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// A logit value that effectively removes a transition.
pub const OFF: f64 = -LOGIT_BOUND;
