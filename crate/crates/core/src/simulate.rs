//! Synthetic data from a fully specified model.
//!
//! The latent contexts and states are returned next to the data, never
//! inside it, so that fitting code cannot consume them by accident.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::obsmodel::{gamma_mean_sd_to_shape_scale, EventObservation, Series, SeriesSet, StateDensity};

/// How observations are removed after drawing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum Missingness {
    #[default]
    None,
    /// Independent per-observation probability of being missing, per variable.
    Probability(Vec<f64>),
    /// `masks[w][d][p] = true` marks variable `p` of event `d` in series `w` missing.
    Masks(Vec<Vec<Vec<bool>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: Model,
    pub lengths: Vec<usize>,
    /// Per series, inclusive 1-based event ranges `(start, end)` with exposure on.
    pub exposure: Vec<Vec<(usize, usize)>>,
    pub missingness: Missingness,
    pub rng_seed: u64,
}

impl SimConfig {
    /// Fully observed, unexposed series of the given lengths.
    pub fn new(model: Model, lengths: Vec<usize>, rng_seed: u64) -> Self {
        let exposure = vec![Vec::new(); lengths.len()];
        Self { model, lengths, exposure, missingness: Missingness::None, rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        let spec = &self.model.spec;
        spec.validate()?;
        self.model.emissions().validate(&spec.schema)?;
        if self.lengths.contains(&0) {
            return Err(Error::Domain("series lengths must be at least 1".into()));
        }
        if self.exposure.len() != self.lengths.len() {
            return Err(Error::Domain(format!(
                "{} exposure lists for {} series",
                self.exposure.len(),
                self.lengths.len()
            )));
        }
        for (w, (windows, &len)) in self.exposure.iter().zip(&self.lengths).enumerate() {
            for &(a, b) in windows {
                if a == 0 || a > b || b > len {
                    return Err(Error::Domain(format!("exposure window ({a}, {b}) outside series {w} of length {len}")));
                }
            }
        }
        let p = spec.schema.len();
        match &self.missingness {
            Missingness::None => {}
            Missingness::Probability(probs) => {
                if probs.len() != p || probs.iter().any(|q| !(0.0..=1.0).contains(q)) {
                    return Err(Error::Domain("missingness needs one probability in [0, 1] per variable".into()));
                }
            }
            Missingness::Masks(masks) => {
                let ok = masks.len() == self.lengths.len()
                    && masks.iter().zip(&self.lengths).all(|(m, &l)| m.len() == l && m.iter().all(|e| e.len() == p));
                if !ok {
                    return Err(Error::Domain("missingness masks do not match the series shapes".into()));
                }
            }
        }
        Ok(())
    }
}

/// Latent quantities behind a simulated dataset. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub contexts: Vec<usize>,
    pub states: Vec<Vec<usize>>,
}

/// Per-series random stream: the master seed selects the key, the series
/// index selects the ChaCha stream. Independent of thread count.
fn series_rng(seed: u64, w: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(w as u64);
    rng
}

fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a little mass above the cumulative sum; take the last
    // category with positive probability.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws a von Mises variate centred at 0 with concentration `kappa`, using
/// the Best–Fisher rejection scheme. The result lies in `(-pi, pi]`.
pub fn sample_von_mises<R: Rng>(rng: &mut R, kappa: f64) -> f64 {
    if kappa < 1e-8 {
        let u: f64 = rng.random();
        return PI - 2.0 * PI * u;
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = f.clamp(-1.0, 1.0).acos();
            let x = if u3 < 0.5 { -theta } else { theta };
            return if x <= -PI { PI } else { x };
        }
    }
}

/// One draw from a state-dependent distribution.
pub fn sample_density<R: Rng>(rng: &mut R, density: &StateDensity) -> Result<f64> {
    let bad = |e: &dyn std::fmt::Display| Error::Domain(format!("cannot sample {density:?}: {e}"));
    Ok(match *density {
        StateDensity::Gamma { mean, sd } => {
            let (shape, scale) = gamma_mean_sd_to_shape_scale(mean, sd)?;
            let g = Gamma::new(shape, scale).map_err(|e| bad(&e))?;
            g.sample(rng).max(f64::MIN_POSITIVE)
        }
        StateDensity::Poisson { rate } => Poisson::new(rate).map_err(|e| bad(&e))?.sample(rng),
        StateDensity::VonMises { concentration } => sample_von_mises(rng, concentration),
        StateDensity::Beta { a, b } => Beta::new(a, b).map_err(|e| bad(&e))?.sample(rng),
    })
}

/// Simulates a dataset and its latent record.
pub fn simulate(config: &SimConfig) -> Result<(SeriesSet, SimTruth)> {
    config.validate()?;
    let model = &config.model;
    let spec = &model.spec;
    let n = spec.n_states;
    let pi = model.mixture();
    let emissions = model.emissions();
    let tpms: Vec<[Vec<f64>; 2]> =
        (0..spec.n_contexts).map(|k| [model.tpm(k, false), model.tpm(k, true)]).collect();
    let initial: Vec<Vec<f64>> = (0..spec.n_contexts).map(|k| model.initial(k)).collect();
    let n_series = config.lengths.len();
    let width = n_series.to_string().len();

    let drawn: Vec<Result<(Series, usize, Vec<usize>)>> = (0..n_series)
        .into_par_iter()
        .map(|w| {
            let mut rng = series_rng(config.rng_seed, w);
            let len = config.lengths[w];
            let mut exposed = vec![false; len];
            for &(a, b) in &config.exposure[w] {
                exposed[a - 1..b].iter_mut().for_each(|e| *e = true);
            }
            let k = categorical(&mut rng, &pi);
            let mut states = Vec::with_capacity(len);
            let mut s = categorical(&mut rng, &initial[k]);
            for d in 0..len {
                if d > 0 {
                    let g = &tpms[k][exposed[d] as usize];
                    s = categorical(&mut rng, &g[s * n..(s + 1) * n]);
                }
                states.push(s);
            }
            let mut events = Vec::with_capacity(len);
            for (d, &s) in states.iter().enumerate() {
                let mut values = Vec::with_capacity(spec.schema.len());
                for (p, block) in emissions.blocks.iter().enumerate() {
                    let x = match block {
                        Some(b) => Some(sample_density(&mut rng, &b[s])?),
                        None => None,
                    };
                    let missing = match &config.missingness {
                        Missingness::None => false,
                        Missingness::Probability(q) => rng.random::<f64>() < q[p],
                        Missingness::Masks(m) => m[w][d][p],
                    };
                    values.push(if missing { None } else { x });
                }
                events.push(EventObservation::new(values, exposed[d]));
            }
            let id = format!("s{:0width$}", w + 1);
            Ok((Series { id, events }, k, states))
        })
        .collect();

    let mut series = Vec::with_capacity(n_series);
    let mut truth = SimTruth { contexts: Vec::with_capacity(n_series), states: Vec::with_capacity(n_series) };
    for r in drawn {
        let (s, k, st) = r?;
        series.push(s);
        truth.contexts.push(k);
        truth.states.push(st);
    }
    Ok((SeriesSet::new(spec.schema.clone(), series)?, truth))
}
