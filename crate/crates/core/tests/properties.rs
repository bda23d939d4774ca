mod common;

use common::{random_data, random_model, rel, rng};
use mixhmm::inference::decode_local;
use mixhmm::likelihood::total_loglik;
use mixhmm::markov::{logits_from_tpm, probs_from_reference_logits, reference_logits_from_probs, tpm_from_logits};
use mixhmm::obsmodel::event_log_density;
use mixhmm::{CovariateEffect, Model, NaturalParams};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn covariate(c: u8) -> CovariateEffect {
    [CovariateEffect::None, CovariateEffect::Common, CovariateEffect::ContextSpecific][c as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tpm_rows_sum_to_one(n in 2usize..6, logits in prop::collection::vec(-40.0f64..40.0, 50), exposed: bool) {
        let alpha = &logits[..n * n];
        let beta = &logits[25..25 + n * n];
        let g = tpm_from_logits(alpha, Some(beta), exposed, n);
        for row in g.chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn logits_round_trip(n in 2usize..6, logits in prop::collection::vec(-8.0f64..8.0, 25)) {
        let mut alpha = logits[..n * n].to_vec();
        for i in 0..n {
            alpha[i * n + i] = 0.0;
        }
        let back = logits_from_tpm(&tpm_from_logits(&alpha, None, false, n), n);
        for (a, b) in alpha.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let rest = &logits[..n - 1];
        let again = reference_logits_from_probs(&probs_from_reference_logits(rest));
        for (a, b) in rest.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn natural_parameters_round_trip(seed: u64, n in 1usize..4, k in 1usize..3, cov: u8) {
        let mut r = rng(seed);
        let cov = if n == 1 { CovariateEffect::None } else { covariate(cov) };
        let m = random_model(&mut r, n, k, 3, cov);
        let natural = NaturalParams {
            emissions: m.emissions(),
            tpms: (0..k).map(|c| m.tpm(c, false)).collect(),
            betas: (0..m.layout().n_beta_blocks())
                .map(|b| {
                    // Recover beta from the two matrices of a context using this block.
                    let c = (0..k).find(|&c| m.layout().beta_block(c) == Some(b)).unwrap();
                    let (l0, l1) = (logits_from_tpm(&m.tpm(c, false), n), logits_from_tpm(&m.tpm(c, true), n));
                    l1.iter().zip(&l0).map(|(a, b)| a - b).collect()
                })
                .collect(),
            initial: (0..k).map(|c| m.initial(c)).collect(),
            mixture: m.mixture(),
        };
        let back = Model::from_natural(m.spec.clone(), &natural).unwrap();
        for (a, b) in m.theta.iter().zip(&back.theta) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn relabelling_leaves_likelihood_unchanged(seed: u64, n in 2usize..4, k in 1usize..3, cov: u8) {
        let mut r = rng(seed);
        let m = random_model(&mut r, n, k, 2, covariate(cov));
        let (data, _) = random_data(&mut r, &m, vec![7, 4, 9], 0.2);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut ctx_perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        ctx_perm.shuffle(&mut r);
        let a = total_loglik(&data, &m).unwrap().total;
        let b = total_loglik(&data, &m.permuted(&perm, &ctx_perm)).unwrap().total;
        prop_assert!(rel(a, b) < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn posterior_rows_sum_to_one(seed: u64, n in 2usize..4, k in 1usize..3, cov: u8) {
        let mut r = rng(seed);
        let m = random_model(&mut r, n, k, 3, covariate(cov));
        let (data, _) = random_data(&mut r, &m, vec![30, 1, 12], 0.3);
        for d in decode_local(&data, &m).unwrap() {
            prop_assert!((d.context_posterior.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for row in &d.posterior {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    /// Forward and backward variables computed here without scaling: the
    /// sum over states of their product is the likelihood at every event,
    /// and the normalised product is the smoothed probability.
    #[test]
    fn smoothing_agrees_with_unscaled_forward_and_backward(seed: u64, n in 2usize..4, cov: u8) {
        let mut r = rng(seed);
        let m = random_model(&mut r, n, 1, 2, if cov % 2 == 0 { CovariateEffect::None } else { CovariateEffect::Common });
        let (data, _) = random_data(&mut r, &m, vec![6], 0.1);
        let s = &data.series[0];
        let len = s.len();
        let em = m.emissions();
        let f: Vec<Vec<f64>> = s.events.iter().map(|e| (0..n).map(|i| event_log_density(e, i, &em).unwrap().exp()).collect()).collect();
        let g = |d: usize| m.tpm(0, s.events[d].exposed);
        let delta = m.initial(0);
        let mut a = vec![(0..n).map(|i| delta[i] * f[0][i]).collect::<Vec<f64>>()];
        for d in 1..len {
            let gd = g(d);
            let prev = &a[d - 1];
            a.push((0..n).map(|j| (0..n).map(|i| prev[i] * gd[i * n + j]).sum::<f64>() * f[d][j]).collect());
        }
        let mut b = vec![vec![1.0; n]; len];
        for d in (1..len).rev() {
            let gd = g(d);
            b[d - 1] = (0..n).map(|i| (0..n).map(|j| gd[i * n + j] * f[d][j] * b[d][j]).sum()).collect();
        }
        let lik: f64 = a[len - 1].iter().sum();
        let post = &decode_local(&data, &m).unwrap()[0].posterior;
        for d in 0..len {
            let ab: Vec<f64> = (0..n).map(|i| a[d][i] * b[d][i]).collect();
            let sum: f64 = ab.iter().sum();
            prop_assert!(((sum - lik) / lik).abs() < 1e-10, "event {d}: {sum} vs {lik}");
            for i in 0..n {
                prop_assert!((post[d][i] - ab[i] / sum).abs() < 1e-10);
            }
        }
    }
}
