//! Model structure and the unconstrained ("working") parameter vector.
//!
//! Working-space layout, in order:
//! 1. emission parameters, as logs, `[active variable][state][family parameter]`;
//! 2. off-diagonal transition logits `alpha`, `[context][row][column != row]`;
//! 3. covariate effects `beta`, one or `K` off-diagonal blocks;
//! 4. initial-distribution logits, `[context][state 2..N]` (state 1 reference);
//! 5. mixture logits, `[context 2..K]` (context 1 reference).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov;
use crate::obsmodel::{EmissionParams, Family, SeriesSet, StateDensity, Variable};

/// Box bound on transition, covariate, initial and mixture logits.
pub const LOGIT_BOUND: f64 = 40.0;
/// Box bound on the log of emission parameters.
pub const LOG_PARAM_BOUND: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateEffect {
    /// Transition probabilities do not depend on the covariate.
    None,
    /// One set of effects shared by all contexts.
    Common,
    /// A separate set of effects per context.
    ContextSpecific,
}

impl CovariateEffect {
    pub fn label(self) -> &'static str {
        match self {
            CovariateEffect::None => "none",
            CovariateEffect::Common => "common",
            CovariateEffect::ContextSpecific => "context_specific",
        }
    }
}

impl std::str::FromStr for CovariateEffect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CovariateEffect::None),
            "common" => Ok(CovariateEffect::Common),
            "context_specific" | "context-specific" => Ok(CovariateEffect::ContextSpecific),
            other => Err(Error::InvalidSpec(format!("unknown covariate effect '{other}'"))),
        }
    }
}

/// Structural choices of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_states: usize,
    pub n_contexts: usize,
    pub covariate: CovariateEffect,
    pub schema: Vec<Variable>,
    /// Variables contributing to the likelihood; inactive ones are treated as missing.
    pub active: Vec<bool>,
    /// Variable whose state means define the canonical state order.
    pub ordering_variable: usize,
}

impl ModelSpec {
    /// All variables active; states ordered by the first gamma variable (or the first variable).
    pub fn new(schema: Vec<Variable>, n_states: usize, n_contexts: usize, covariate: CovariateEffect) -> Result<Self> {
        let ordering_variable = schema.iter().position(|v| v.family == Family::Gamma).unwrap_or(0);
        let spec = Self {
            n_states,
            n_contexts,
            covariate,
            active: vec![true; schema.len()],
            schema,
            ordering_variable,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_ordering_variable(mut self, p: usize) -> Result<Self> {
        self.ordering_variable = p;
        self.validate()?;
        Ok(self)
    }

    pub fn with_active(mut self, active: Vec<bool>) -> Result<Self> {
        self.active = active;
        self.validate()?;
        Ok(self)
    }

    /// Same schema and states with a different context count and covariate mode.
    pub fn variant(&self, n_contexts: usize, covariate: CovariateEffect) -> Result<Self> {
        let mut s = self.clone();
        s.n_contexts = n_contexts;
        s.covariate = covariate;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::InvalidSpec("at least one state is required".into()));
        }
        if self.n_contexts == 0 {
            return Err(Error::InvalidSpec("at least one context is required".into()));
        }
        if self.schema.is_empty() {
            return Err(Error::InvalidSpec("schema must contain at least one variable".into()));
        }
        if self.active.len() != self.schema.len() {
            return Err(Error::InvalidSpec("active mask length differs from schema length".into()));
        }
        if !self.active.iter().any(|&a| a) {
            return Err(Error::InvalidSpec("no active variables".into()));
        }
        if self.ordering_variable >= self.schema.len() || !self.active[self.ordering_variable] {
            return Err(Error::InvalidSpec("ordering variable must be an active schema variable".into()));
        }
        Ok(())
    }

    /// Checks that a dataset carries this spec's schema.
    pub fn check_data(&self, data: &SeriesSet) -> Result<()> {
        if data.schema != self.schema {
            return Err(Error::InvalidSpec("dataset schema differs from model schema".into()));
        }
        if data.series.is_empty() {
            return Err(Error::InvalidSpec("dataset has no series".into()));
        }
        Ok(())
    }

    pub fn n_beta_blocks(&self) -> usize {
        match self.covariate {
            CovariateEffect::None => 0,
            CovariateEffect::Common => 1,
            CovariateEffect::ContextSpecific => self.n_contexts,
        }
    }

    /// Short human-readable label, e.g. `N=3 K=4 common`.
    pub fn label(&self) -> String {
        format!("N={} K={} {}", self.n_states, self.n_contexts, self.covariate.label())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Offsets of each parameter group in the working vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    n: usize,
    k: usize,
    /// Offset of each variable's emission block, `None` if inactive.
    pub emission: Vec<Option<usize>>,
    families: Vec<Family>,
    pub alpha: usize,
    pub beta: usize,
    n_beta_blocks: usize,
    pub delta: usize,
    pub pi: usize,
    pub len: usize,
}

impl Layout {
    fn new(spec: &ModelSpec) -> Self {
        let n = spec.n_states;
        let k = spec.n_contexts;
        let mut off = 0;
        let mut emission = Vec::with_capacity(spec.schema.len());
        for (v, &active) in spec.schema.iter().zip(&spec.active) {
            if active {
                emission.push(Some(off));
                off += v.family.n_params() * n;
            } else {
                emission.push(None);
            }
        }
        let offdiag = n * (n - 1);
        let alpha = off;
        let beta = alpha + k * offdiag;
        let n_beta_blocks = spec.n_beta_blocks();
        let delta = beta + n_beta_blocks * offdiag;
        let pi = delta + k * (n - 1);
        let len = pi + (k - 1);
        Self {
            n,
            k,
            emission,
            families: spec.schema.iter().map(|v| v.family).collect(),
            alpha,
            beta,
            n_beta_blocks,
            delta,
            pi,
            len,
        }
    }

    /// Position of `(i, j)`, `i != j`, within an off-diagonal block.
    pub fn offdiag(&self, i: usize, j: usize) -> usize {
        debug_assert_ne!(i, j);
        i * (self.n - 1) + if j < i { j } else { j - 1 }
    }

    pub fn emission_index(&self, variable: usize, state: usize, param: usize) -> Option<usize> {
        let np = self.families[variable].n_params();
        self.emission[variable].map(|o| o + state * np + param)
    }

    pub fn alpha_index(&self, context: usize, i: usize, j: usize) -> usize {
        self.alpha + context * self.n * (self.n - 1) + self.offdiag(i, j)
    }

    /// Block used by `context`, if the model has covariate effects.
    pub fn beta_block(&self, context: usize) -> Option<usize> {
        match self.n_beta_blocks {
            0 => None,
            1 => Some(0),
            _ => Some(context),
        }
    }

    pub fn n_beta_blocks(&self) -> usize {
        self.n_beta_blocks
    }

    pub fn beta_index(&self, block: usize, i: usize, j: usize) -> usize {
        self.beta + block * self.n * (self.n - 1) + self.offdiag(i, j)
    }

    /// Index of the logit of `state >= 1` in `context`'s initial distribution.
    pub fn delta_index(&self, context: usize, state: usize) -> usize {
        debug_assert!(state >= 1);
        self.delta + context * (self.n - 1) + state - 1
    }

    pub fn pi_index(&self, context: usize) -> usize {
        debug_assert!(context >= 1);
        self.pi + context - 1
    }

    /// Start of the Markov (non-emission) parameters; they occupy the tail.
    pub fn markov_start(&self) -> usize {
        self.alpha
    }

    /// Working-space box bounds.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![-LOGIT_BOUND; self.len];
        let mut hi = vec![LOGIT_BOUND; self.len];
        for i in 0..self.alpha {
            lo[i] = -LOG_PARAM_BOUND;
            hi[i] = LOG_PARAM_BOUND;
        }
        (lo, hi)
    }

    /// Identifier of every working-space coordinate, in order.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut out = Vec::with_capacity(self.len);
        for (p, off) in self.emission.iter().enumerate() {
            if off.is_some() {
                for state in 0..self.n {
                    for param in 0..self.families[p].n_params() {
                        out.push(ParamId::Emission { variable: p, state, param });
                    }
                }
            }
        }
        for context in 0..self.k {
            for from in 0..self.n {
                for to in (0..self.n).filter(|&j| j != from) {
                    out.push(ParamId::Alpha { context, from, to });
                }
            }
        }
        for block in 0..self.n_beta_blocks {
            let context = (self.n_beta_blocks > 1).then_some(block);
            for from in 0..self.n {
                for to in (0..self.n).filter(|&j| j != from) {
                    out.push(ParamId::Beta { context, from, to });
                }
            }
        }
        for context in 0..self.k {
            for state in 1..self.n {
                out.push(ParamId::InitialLogit { context, state });
            }
        }
        for context in 1..self.k {
            out.push(ParamId::MixtureLogit { context });
        }
        debug_assert_eq!(out.len(), self.len);
        out
    }
}

/// Identifies one working-space coordinate. Indices are zero-based; the
/// printed names are one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    Emission { variable: usize, state: usize, param: usize },
    Alpha { context: usize, from: usize, to: usize },
    /// `context` is `None` for a common effect.
    Beta { context: Option<usize>, from: usize, to: usize },
    InitialLogit { context: usize, state: usize },
    MixtureLogit { context: usize },
}

impl ParamId {
    /// Whether the working coordinate is the log of the natural parameter.
    pub fn is_log_scale(&self) -> bool {
        matches!(self, ParamId::Emission { .. })
    }

    pub fn name(&self, spec: &ModelSpec) -> String {
        ParamName { id: *self, spec }.to_string()
    }
}

struct ParamName<'a> {
    id: ParamId,
    spec: &'a ModelSpec,
}

impl fmt::Display for ParamName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ctx = |k: usize| if self.spec.n_contexts > 1 { format!("@k{}", k + 1) } else { String::new() };
        match self.id {
            ParamId::Emission { variable, state, param } => {
                let v = &self.spec.schema[variable];
                write!(f, "{}.{}[{}]", v.name, v.family.param_names()[param], state + 1)
            }
            ParamId::Alpha { context, from, to } => write!(f, "alpha[{},{}]{}", from + 1, to + 1, ctx(context)),
            ParamId::Beta { context, from, to } => {
                let suffix = context.map(|k| format!("@k{}", k + 1)).unwrap_or_default();
                write!(f, "beta[{},{}]{}", from + 1, to + 1, suffix)
            }
            ParamId::InitialLogit { context, state } => write!(f, "delta_logit[{}]{}", state + 1, ctx(context)),
            ParamId::MixtureLogit { context } => write!(f, "pi_logit[{}]", context + 1),
        }
    }
}

/// A model specification together with a point in working space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub theta: Vec<f64>,
}

/// Natural-scale description of a model, used to build working vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub emissions: EmissionParams,
    /// Baseline transition matrices, one `n * n` row-major matrix per context.
    /// Entries must be strictly positive.
    pub tpms: Vec<Vec<f64>>,
    /// Covariate effects, `n * n` with zero diagonal, one block per beta block.
    pub betas: Vec<Vec<f64>>,
    /// Initial distributions per context, strictly positive.
    pub initial: Vec<Vec<f64>>,
    /// Mixture weights, strictly positive.
    pub mixture: Vec<f64>,
}

impl Model {
    pub fn new(spec: ModelSpec, theta: Vec<f64>) -> Result<Self> {
        let len = spec.layout().len;
        if theta.len() != len {
            return Err(Error::InvalidSpec(format!("parameter vector has length {}, expected {len}", theta.len())));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("parameter vector contains non-finite values".into()));
        }
        Ok(Self { spec, theta })
    }

    /// Builds the working vector from natural-scale parameters.
    pub fn from_natural(spec: ModelSpec, natural: &NaturalParams) -> Result<Self> {
        let lay = spec.layout();
        let n = spec.n_states;
        let k = spec.n_contexts;
        natural.emissions.validate(&spec.schema)?;
        let mut theta = vec![0.0; lay.len];
        for (p, block) in natural.emissions.blocks.iter().enumerate() {
            if lay.emission[p].is_none() {
                continue;
            }
            let block = block
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec(format!("missing parameters for active variable {p}")))?;
            if block.len() != n {
                return Err(Error::InvalidSpec(format!("variable {p} has {} states, expected {n}", block.len())));
            }
            for (i, d) in block.iter().enumerate() {
                for (j, v) in d.values().iter().enumerate() {
                    theta[lay.emission_index(p, i, j).unwrap()] = v.ln();
                }
            }
        }
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what}: got {got}, expected {want}")))
            }
        };
        check("transition matrices", natural.tpms.len(), k)?;
        check("beta blocks", natural.betas.len(), lay.n_beta_blocks())?;
        check("initial distributions", natural.initial.len(), k)?;
        check("mixture weights", natural.mixture.len(), k)?;
        let positive_stochastic = |v: &[f64], what: &str| {
            let s: f64 = v.iter().sum();
            if v.iter().all(|&p| p > 0.0) && (s - 1.0).abs() < 1e-9 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{what} must be strictly positive and sum to 1")))
            }
        };
        for (c, tpm) in natural.tpms.iter().enumerate() {
            check("transition matrix size", tpm.len(), n * n)?;
            for i in 0..n {
                positive_stochastic(&tpm[i * n..(i + 1) * n], "transition matrix rows")?;
            }
            let logits = markov::logits_from_tpm(tpm, n);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    theta[lay.alpha_index(c, i, j)] = logits[i * n + j];
                }
            }
        }
        for (b, beta) in natural.betas.iter().enumerate() {
            check("beta block size", beta.len(), n * n)?;
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    theta[lay.beta_index(b, i, j)] = beta[i * n + j];
                }
            }
        }
        for (c, delta) in natural.initial.iter().enumerate() {
            check("initial distribution size", delta.len(), n)?;
            positive_stochastic(delta, "initial distributions")?;
            for (s, l) in markov::reference_logits_from_probs(delta).into_iter().enumerate() {
                theta[lay.delta_index(c, s + 1)] = l;
            }
        }
        positive_stochastic(&natural.mixture, "mixture weights")?;
        for (c, l) in markov::reference_logits_from_probs(&natural.mixture).into_iter().enumerate() {
            theta[lay.pi_index(c + 1)] = l;
        }
        Model::new(spec, theta)
    }

    pub fn layout(&self) -> Layout {
        self.spec.layout()
    }

    pub fn emissions(&self) -> EmissionParams {
        emissions_from_theta(&self.spec, &self.layout(), &self.theta)
    }

    /// `n * n` logit block of `alpha` for `context`, diagonal zero.
    pub fn alpha_block(&self, context: usize) -> Vec<f64> {
        let lay = self.layout();
        let n = self.spec.n_states;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                out[i * n + j] = self.theta[lay.alpha_index(context, i, j)];
            }
        }
        out
    }

    /// `n * n` covariate-effect block applying to `context`, if any.
    pub fn beta_block(&self, context: usize) -> Option<Vec<f64>> {
        let lay = self.layout();
        let b = lay.beta_block(context)?;
        let n = self.spec.n_states;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                out[i * n + j] = self.theta[lay.beta_index(b, i, j)];
            }
        }
        Some(out)
    }

    pub fn tpm(&self, context: usize, exposed: bool) -> Vec<f64> {
        let beta = self.beta_block(context);
        markov::tpm_from_logits(&self.alpha_block(context), beta.as_deref(), exposed, self.spec.n_states)
    }

    pub fn initial(&self, context: usize) -> Vec<f64> {
        let lay = self.layout();
        let rest: Vec<f64> = (1..self.spec.n_states).map(|s| self.theta[lay.delta_index(context, s)]).collect();
        markov::probs_from_reference_logits(&rest)
    }

    pub fn mixture(&self) -> Vec<f64> {
        let lay = self.layout();
        let rest: Vec<f64> = (1..self.spec.n_contexts).map(|c| self.theta[lay.pi_index(c)]).collect();
        markov::probs_from_reference_logits(&rest)
    }

    pub fn n_free_parameters(&self) -> usize {
        markov::count_free_parameters(&self.spec)
    }

    /// Natural-scale value of a working coordinate.
    pub fn natural_value(&self, index: usize) -> f64 {
        natural_from_working(&self.layout().ids()[index], self.theta[index])
    }

    /// Relabels states by `perm` (new state `s` is old state `perm[s]`) and
    /// contexts by `ctx_perm`. The likelihood is unchanged.
    pub fn permuted(&self, perm: &[usize], ctx_perm: &[usize]) -> Model {
        let lay = self.layout();
        let n = self.spec.n_states;
        let k = self.spec.n_contexts;
        let mut theta = self.theta.clone();
        for (p, off) in lay.emission.iter().enumerate() {
            if off.is_none() {
                continue;
            }
            let np = self.spec.schema[p].family.n_params();
            for (new, &old) in perm.iter().enumerate() {
                for j in 0..np {
                    theta[lay.emission_index(p, new, j).unwrap()] = self.theta[lay.emission_index(p, old, j).unwrap()];
                }
            }
        }
        for (new_c, &old_c) in ctx_perm.iter().enumerate() {
            for (ni, &oi) in perm.iter().enumerate() {
                for (nj, &oj) in perm.iter().enumerate() {
                    if ni != nj {
                        theta[lay.alpha_index(new_c, ni, nj)] = self.theta[lay.alpha_index(old_c, oi, oj)];
                    }
                }
            }
            // Initial distribution: permute full logit vector then re-reference.
            let mut full = vec![0.0; n];
            for s in 1..n {
                full[s] = self.theta[lay.delta_index(old_c, s)];
            }
            let permuted: Vec<f64> = perm.iter().map(|&o| full[o]).collect();
            for s in 1..n {
                theta[lay.delta_index(new_c, s)] = permuted[s] - permuted[0];
            }
        }
        for b in 0..lay.n_beta_blocks() {
            let old_b = if lay.n_beta_blocks() > 1 { ctx_perm[b] } else { b };
            for (ni, &oi) in perm.iter().enumerate() {
                for (nj, &oj) in perm.iter().enumerate() {
                    if ni != nj {
                        theta[lay.beta_index(b, ni, nj)] = self.theta[lay.beta_index(old_b, oi, oj)];
                    }
                }
            }
        }
        let mut full = vec![0.0; k];
        for c in 1..k {
            full[c] = self.theta[lay.pi_index(c)];
        }
        let permuted: Vec<f64> = ctx_perm.iter().map(|&o| full[o]).collect();
        for c in 1..k {
            theta[lay.pi_index(c)] = permuted[c] - permuted[0];
        }
        Model { spec: self.spec.clone(), theta }
    }

    /// Canonical labelling: states ascending by the ordering variable's state
    /// mean, contexts by descending mixture weight. Ties keep the current order.
    pub fn canonicalized(&self) -> Model {
        let em = self.emissions();
        let locs: Vec<f64> = em.blocks[self.spec.ordering_variable]
            .as_ref()
            .map(|b| b.iter().map(StateDensity::location).collect())
            .unwrap_or_else(|| vec![0.0; self.spec.n_states]);
        let mut perm: Vec<usize> = (0..self.spec.n_states).collect();
        perm.sort_by(|&a, &b| locs[a].total_cmp(&locs[b]));
        let pi = self.mixture();
        let mut ctx: Vec<usize> = (0..self.spec.n_contexts).collect();
        ctx.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]));
        self.permuted(&perm, &ctx)
    }

    /// Embeds this model's optimum into a larger nested spec: extra contexts
    /// copy context 1 and the new mixture weights are equal; new covariate
    /// effects are zero or copies of the common effect. Emissions carry over.
    pub fn embed_into(&self, target: &ModelSpec) -> Result<Model> {
        let src = &self.spec;
        if target.n_states != src.n_states
            || target.schema != src.schema
            || target.active != src.active
            || target.n_contexts < src.n_contexts
        {
            return Err(Error::InvalidSpec(format!("{} does not nest inside {}", src.label(), target.label())));
        }
        let nests = matches!(
            (src.covariate, target.covariate),
            (CovariateEffect::None, _)
                | (CovariateEffect::Common, CovariateEffect::Common)
                | (CovariateEffect::Common, CovariateEffect::ContextSpecific)
                | (CovariateEffect::ContextSpecific, CovariateEffect::ContextSpecific)
        );
        if !nests || (src.covariate == CovariateEffect::ContextSpecific && target.n_contexts != src.n_contexts) {
            return Err(Error::InvalidSpec(format!("{} does not nest inside {}", src.label(), target.label())));
        }
        let sl = src.layout();
        let tl = target.layout();
        let n = src.n_states;
        let mut theta = vec![0.0; tl.len];
        theta[..sl.alpha].copy_from_slice(&self.theta[..sl.alpha]);
        let old_pi = self.mixture();
        let src_k = src.n_contexts;
        let extra = target.n_contexts - src_k;
        // Split context 1's weight evenly across itself and the new copies.
        let mut new_pi = old_pi.clone();
        new_pi[0] = old_pi[0] / (extra as f64 + 1.0);
        new_pi.extend(std::iter::repeat_n(new_pi[0], extra));
        for c in 0..target.n_contexts {
            let from = if c < src_k { c } else { 0 };
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    theta[tl.alpha_index(c, i, j)] = self.theta[sl.alpha_index(from, i, j)];
                }
            }
            for s in 1..n {
                theta[tl.delta_index(c, s)] = self.theta[sl.delta_index(from, s)];
            }
        }
        for b in 0..tl.n_beta_blocks() {
            let from = match sl.n_beta_blocks() {
                0 => None,
                1 => Some(0),
                _ => Some(if b < src_k { b } else { 0 }),
            };
            if let Some(fb) = from {
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        theta[tl.beta_index(b, i, j)] = self.theta[sl.beta_index(fb, i, j)];
                    }
                }
            }
        }
        for (c, l) in markov::reference_logits_from_probs(&new_pi).into_iter().enumerate() {
            theta[tl.pi_index(c + 1)] = l;
        }
        Model::new(target.clone(), theta)
    }
}

pub(crate) fn emissions_from_theta(spec: &ModelSpec, lay: &Layout, theta: &[f64]) -> EmissionParams {
    let n = spec.n_states;
    let blocks = spec
        .schema
        .iter()
        .enumerate()
        .map(|(p, v)| {
            lay.emission[p].map(|_| {
                (0..n)
                    .map(|i| {
                        let vals: Vec<f64> = (0..v.family.n_params())
                            .map(|j| theta[lay.emission_index(p, i, j).unwrap()].exp())
                            .collect();
                        StateDensity::from_values(v.family, &vals)
                    })
                    .collect()
            })
        })
        .collect();
    EmissionParams { blocks }
}

/// Maps a working-space value to the natural scale of its parameter.
pub fn natural_from_working(id: &ParamId, value: f64) -> f64 {
    if id.is_log_scale() {
        value.exp()
    } else {
        value
    }
}
