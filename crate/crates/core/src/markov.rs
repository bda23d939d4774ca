//! Transition probability matrices, initial and mixture distributions built
//! from unconstrained multinomial-logit parameters.
//!
//! Matrices are stored row-major in flat slices of length `n * n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CovariateEffect, ModelSpec};

/// Softmax of a logit vector, stable for arbitrarily large magnitudes.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Probability vector from reference-cell logits: the first category has the
/// implicit logit 0 and `rest` holds the others.
pub fn probs_from_reference_logits(rest: &[f64]) -> Vec<f64> {
    let mut full = Vec::with_capacity(rest.len() + 1);
    full.push(0.0);
    full.extend_from_slice(rest);
    softmax(&full)
}

/// Inverse of [`probs_from_reference_logits`] for strictly positive vectors.
pub fn reference_logits_from_probs(probs: &[f64]) -> Vec<f64> {
    let l0 = probs[0].ln();
    probs[1..].iter().map(|p| p.ln() - l0).collect()
}

/// Transition probability matrix for one context and covariate value:
/// `gamma_ij = exp(alpha_ij + beta_ij z) / sum_l exp(alpha_il + beta_il z)`
/// with the diagonal logits fixed at zero.
pub fn tpm_from_logits(alpha: &[f64], beta: Option<&[f64]>, exposed: bool, n: usize) -> Vec<f64> {
    debug_assert_eq!(alpha.len(), n * n);
    let mut out = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            row[j] = if i == j {
                0.0
            } else {
                let b = match (exposed, beta) {
                    (true, Some(b)) => b[i * n + j],
                    _ => 0.0,
                };
                alpha[i * n + j] + b
            };
        }
        let p = softmax(&row);
        out[i * n..(i + 1) * n].copy_from_slice(&p);
    }
    out
}

/// Logits `alpha_ij = ln(gamma_ij / gamma_ii)` of a strictly positive matrix.
pub fn logits_from_tpm(tpm: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let diag = tpm[i * n + i].ln();
        for j in 0..n {
            if i != j {
                out[i * n + j] = tpm[i * n + j].ln() - diag;
            }
        }
    }
    out
}

/// Stationary distribution `delta` with `delta * tpm = delta`, `sum(delta) = 1`.
///
/// Solves `(tpm^T - I) delta^T = 0` with the last equation replaced by the
/// normalisation constraint.
pub fn stationary_distribution(tpm: &[f64], n: usize) -> Result<Vec<f64>> {
    if tpm.len() != n * n || n == 0 {
        return Err(Error::Domain(format!("expected a {n}x{n} matrix")));
    }
    for i in 0..n {
        let s: f64 = tpm[i * n..(i + 1) * n].iter().sum();
        if (s - 1.0).abs() > 1e-9 || tpm[i * n..(i + 1) * n].iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Domain(format!("row {} is not a probability vector", i + 1)));
        }
    }
    let mut a = DMatrix::from_fn(n, n, |r, c| tpm[c * n + r] - if r == c { 1.0 } else { 0.0 });
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.clone().lu();
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::Numerical("stationary system is singular; the chain is not irreducible".into()))?;
    let residual = (&a * &x - &b).amax();
    let min = x.min();
    if !residual.is_finite() || residual > 1e-9 || min < -1e-9 {
        return Err(Error::Numerical(format!(
            "stationary system is ill-conditioned (residual {residual:e}, min entry {min:e}); the chain is not irreducible"
        )));
    }
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

/// Number of free parameters of a model: emission parameters, off-diagonal
/// transition logits per context, initial-distribution logits per context,
/// mixture logits and covariate effects.
pub fn count_free_parameters(spec: &ModelSpec) -> usize {
    let n = spec.n_states;
    let k = spec.n_contexts;
    let offdiag = n * (n - 1);
    let emission: usize = spec
        .schema
        .iter()
        .zip(&spec.active)
        .filter(|(_, &a)| a)
        .map(|(v, _)| v.family.n_params() * n)
        .sum();
    let beta = match spec.covariate {
        CovariateEffect::None => 0,
        CovariateEffect::Common => offdiag,
        CovariateEffect::ContextSpecific => k * offdiag,
    };
    emission + k * offdiag + k * (n - 1) + (k - 1) + beta
}
