//! Observation records and state-dependent emission distributions.
//!
//! Every family is written as a linear form in two per-observation features,
//! `log f(x) = c0 + c1 * f0(x) + c2 * f1(x)`, with the coefficients depending
//! only on the state's parameters. The features are computed once per
//! observation ([`Family::features`]) so that re-evaluating densities under new
//! parameters is a couple of multiply-adds per event.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::special::{bessel_i1_over_i0, ln_bessel_i0};

/// Boundary values of beta-distributed variables are pulled this far inside (0, 1).
pub const BETA_BOUNDARY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Positive reals, parameterised by mean and standard deviation.
    Gamma,
    /// Non-negative integer counts.
    Poisson,
    /// Angles in (-pi, pi], location fixed at 0.
    #[serde(rename = "vonmises", alias = "von_mises")]
    VonMises,
    /// Proportions in [0, 1].
    Beta,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gamma => "gamma",
            Family::Poisson => "poisson",
            Family::VonMises => "vonmises",
            Family::Beta => "beta",
        }
    }

    /// Number of free parameters per state.
    pub fn n_params(self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Gamma => &["mean", "sd"],
            Family::Poisson => &["rate"],
            Family::VonMises => &["concentration"],
            Family::Beta => &["a", "b"],
        }
    }

    /// Whether `x` lies in the support accepted at ingestion.
    pub fn in_support(self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self {
            Family::Gamma => x > 0.0,
            Family::Poisson => x >= 0.0 && x.fract() == 0.0,
            Family::VonMises => x > -PI && x <= PI,
            Family::Beta => (0.0..=1.0).contains(&x),
        }
    }

    pub fn check_support(self, variable: &str, x: f64) -> Result<()> {
        if self.in_support(x) {
            Ok(())
        } else {
            Err(Error::OutOfSupport {
                variable: variable.to_string(),
                family: self.name(),
                value: x,
            })
        }
    }

    /// Sufficient-statistic features of one observation. Assumes `x` is in support.
    pub fn features(self, x: f64) -> [f64; 2] {
        match self {
            Family::Gamma => [x, x.ln()],
            Family::Poisson => [x, ln_gamma(x + 1.0)],
            Family::VonMises => [x.cos(), 0.0],
            Family::Beta => {
                let x = x.clamp(BETA_BOUNDARY_EPS, 1.0 - BETA_BOUNDARY_EPS);
                [x.ln(), (-x).ln_1p()]
            }
        }
    }
}

/// A named observed variable and its distribution family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub family: Family,
}

impl Variable {
    pub fn new(name: impl Into<String>, family: Family) -> Self {
        Self { name: name.into(), family }
    }
}

/// One event (dive): per-variable values, `None` when missing, plus the
/// binary covariate governing the transition into this event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventObservation {
    pub values: Vec<Option<f64>>,
    pub exposed: bool,
}

impl EventObservation {
    pub fn new(values: Vec<Option<f64>>, exposed: bool) -> Self {
        Self { values, exposed }
    }
}

/// The ordered events of one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: String,
    pub events: Vec<EventObservation>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// All series of a dataset, sharing one variable schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSet {
    pub schema: Vec<Variable>,
    pub series: Vec<Series>,
}

impl SeriesSet {
    /// Builds a dataset after validating schema width, non-empty series and supports.
    pub fn new(schema: Vec<Variable>, series: Vec<Series>) -> Result<Self> {
        if schema.is_empty() {
            return Err(Error::InvalidSpec("schema must contain at least one variable".into()));
        }
        for s in &series {
            if s.events.is_empty() {
                return Err(Error::Domain(format!("series '{}' has no events", s.id)));
            }
            for (d, ev) in s.events.iter().enumerate() {
                if ev.values.len() != schema.len() {
                    return Err(Error::Domain(format!(
                        "series '{}' event {} has {} values, schema has {}",
                        s.id,
                        d + 1,
                        ev.values.len(),
                        schema.len()
                    )));
                }
                for (var, v) in schema.iter().zip(&ev.values) {
                    if let Some(x) = v {
                        var.family.check_support(&var.name, *x)?;
                    }
                }
            }
        }
        Ok(Self { schema, series })
    }

    pub fn n_variables(&self) -> usize {
        self.schema.len()
    }

    pub fn n_events(&self) -> usize {
        self.series.iter().map(Series::len).sum()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|v| v.name == name)
    }

    /// Copy with variable `p` removed from the schema and every event.
    pub fn without_variable(&self, p: usize) -> Self {
        let mut out = self.clone();
        out.schema.remove(p);
        for s in &mut out.series {
            for ev in &mut s.events {
                ev.values.remove(p);
            }
        }
        out
    }

    /// Copy with variable `p` marked missing in every event.
    pub fn with_variable_missing(&self, p: usize) -> Self {
        let mut out = self.clone();
        for s in &mut out.series {
            for ev in &mut s.events {
                ev.values[p] = None;
            }
        }
        out
    }
}

/// Parameters of one variable's distribution in one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum StateDensity {
    Gamma { mean: f64, sd: f64 },
    Poisson { rate: f64 },
    #[serde(rename = "vonmises")]
    VonMises { concentration: f64 },
    Beta { a: f64, b: f64 },
}

impl StateDensity {
    pub fn family(&self) -> Family {
        match self {
            StateDensity::Gamma { .. } => Family::Gamma,
            StateDensity::Poisson { .. } => Family::Poisson,
            StateDensity::VonMises { .. } => Family::VonMises,
            StateDensity::Beta { .. } => Family::Beta,
        }
    }

    /// Parameters in the order of [`Family::param_names`].
    pub fn values(&self) -> Vec<f64> {
        match *self {
            StateDensity::Gamma { mean, sd } => vec![mean, sd],
            StateDensity::Poisson { rate } => vec![rate],
            StateDensity::VonMises { concentration } => vec![concentration],
            StateDensity::Beta { a, b } => vec![a, b],
        }
    }

    pub fn from_values(family: Family, v: &[f64]) -> Self {
        match family {
            Family::Gamma => StateDensity::Gamma { mean: v[0], sd: v[1] },
            Family::Poisson => StateDensity::Poisson { rate: v[0] },
            Family::VonMises => StateDensity::VonMises { concentration: v[0] },
            Family::Beta => StateDensity::Beta { a: v[0], b: v[1] },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.values();
        if v.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(Error::Domain(format!("non-positive or non-finite parameters in {self:?}")))
        }
    }

    /// The mean of the distribution, used to order states. For the von Mises
    /// family (mean fixed at 0) the concentration stands in.
    pub fn location(&self) -> f64 {
        match *self {
            StateDensity::Gamma { mean, .. } => mean,
            StateDensity::Poisson { rate } => rate,
            StateDensity::VonMises { concentration } => concentration,
            StateDensity::Beta { a, b } => a / (a + b),
        }
    }

    /// Coefficients `(c0, c1, c2)` of the linear form in the family's features.
    pub fn linear_form(&self) -> [f64; 3] {
        match *self {
            StateDensity::Gamma { mean, sd } => {
                let (shape, scale) = shape_scale_unchecked(mean, sd);
                let rate = 1.0 / scale;
                [shape * rate.ln() - ln_gamma(shape), -rate, shape - 1.0]
            }
            StateDensity::Poisson { rate } => [-rate, rate.ln(), -1.0],
            StateDensity::VonMises { concentration } => {
                [-(2.0 * PI).ln() - ln_bessel_i0(concentration), concentration, 0.0]
            }
            StateDensity::Beta { a, b } => {
                let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
                [-ln_beta, a - 1.0, b - 1.0]
            }
        }
    }

    /// Derivatives of the linear-form coefficients with respect to the log of
    /// each parameter, one `[dc0, dc1, dc2]` per parameter.
    pub fn linear_form_log_gradient(&self) -> Vec<[f64; 3]> {
        match *self {
            StateDensity::Gamma { mean, sd } => {
                let shape = mean * mean / (sd * sd);
                let rate = mean / (sd * sd);
                let lr = rate.ln();
                let psi = digamma(shape);
                vec![
                    [2.0 * shape * (lr - psi) + shape, -rate, 2.0 * shape],
                    [-2.0 * shape * (lr - psi) - 2.0 * shape, 2.0 * rate, -2.0 * shape],
                ]
            }
            StateDensity::Poisson { rate } => vec![[-rate, 1.0, 0.0]],
            StateDensity::VonMises { concentration } => {
                vec![[-concentration * bessel_i1_over_i0(concentration), concentration, 0.0]]
            }
            StateDensity::Beta { a, b } => {
                let psi_ab = digamma(a + b);
                vec![
                    [-a * (digamma(a) - psi_ab), a, 0.0],
                    [-b * (digamma(b) - psi_ab), 0.0, b],
                ]
            }
        }
    }

    /// `log f(x)`; errors when `x` is outside the family's support.
    pub fn log_density(&self, x: f64) -> Result<f64> {
        let family = self.family();
        if !family.in_support(x) {
            return Err(Error::OutOfSupport { variable: String::new(), family: family.name(), value: x });
        }
        self.validate()?;
        let [c0, c1, c2] = self.linear_form();
        let [f0, f1] = family.features(x);
        Ok(c0 + c1 * f0 + c2 * f1)
    }
}

fn shape_scale_unchecked(mean: f64, sd: f64) -> (f64, f64) {
    let var = sd * sd;
    (mean * mean / var, var / mean)
}

/// Converts the mean/sd parameterisation of a gamma distribution to shape/scale.
pub fn gamma_mean_sd_to_shape_scale(mean: f64, sd: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0 && sd > 0.0 && mean.is_finite() && sd.is_finite()) {
        return Err(Error::Domain(format!("gamma mean and sd must be positive, got ({mean}, {sd})")));
    }
    Ok(shape_scale_unchecked(mean, sd))
}

/// State-dependent distribution parameters, indexed `[variable][state]`.
/// A `None` entry marks a variable excluded from the model; it is treated as
/// missing in every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub blocks: Vec<Option<Vec<StateDensity>>>,
}

impl EmissionParams {
    pub fn n_states(&self) -> usize {
        self.blocks.iter().flatten().map(Vec::len).next().unwrap_or(0)
    }

    pub fn validate(&self, schema: &[Variable]) -> Result<()> {
        if self.blocks.len() != schema.len() {
            return Err(Error::InvalidSpec(format!(
                "emission blocks cover {} variables, schema has {}",
                self.blocks.len(),
                schema.len()
            )));
        }
        let n = self.n_states();
        for (var, block) in schema.iter().zip(&self.blocks) {
            if let Some(block) = block {
                if block.len() != n {
                    return Err(Error::InvalidSpec(format!("variable '{}' has {} states", var.name, block.len())));
                }
                for d in block {
                    if d.family() != var.family {
                        return Err(Error::InvalidSpec(format!(
                            "variable '{}' is {} but parameters are {}",
                            var.name,
                            var.family.name(),
                            d.family().name()
                        )));
                    }
                    d.validate()?;
                }
            }
        }
        Ok(())
    }
}

/// `log f(x | S = state)` for variable `variable_index`.
pub fn log_density(variable_index: usize, state: usize, value: f64, params: &EmissionParams) -> Result<f64> {
    let block = params
        .blocks
        .get(variable_index)
        .ok_or_else(|| Error::Domain(format!("no variable with index {variable_index}")))?
        .as_ref()
        .ok_or_else(|| Error::Domain(format!("variable {variable_index} is not modelled")))?;
    let dens = block.get(state).ok_or_else(|| Error::Domain(format!("no state {state}")))?;
    dens.log_density(value)
}

/// Joint log-density of one event's present values given the state.
/// Missing values (and unmodelled variables) contribute exactly zero.
pub fn event_log_density(event: &EventObservation, state: usize, params: &EmissionParams) -> Result<f64> {
    let mut total = 0.0;
    for (p, value) in event.values.iter().enumerate() {
        let (Some(x), Some(Some(block))) = (value, params.blocks.get(p)) else {
            continue;
        };
        total += block
            .get(state)
            .ok_or_else(|| Error::Domain(format!("no state {state}")))?
            .log_density(*x)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_conversion_examples() {
        let (k, theta) = gamma_mean_sd_to_shape_scale(135.4, 75.3).unwrap();
        assert!((k - 3.2334).abs() < 1e-4, "{k}");
        assert!((theta - 41.8766).abs() < 1e-4, "{theta}");
        assert_eq!(gamma_mean_sd_to_shape_scale(1.0, 1.0).unwrap(), (1.0, 1.0));
        let (k, theta) = gamma_mean_sd_to_shape_scale(508.2, 135.8).unwrap();
        assert!((k - 14.004).abs() < 1e-3);
        assert!((theta - 36.289).abs() < 1e-3);
        assert!((k * theta - 508.2).abs() < 1e-9);
        assert!((k * theta * theta - 135.8 * 135.8).abs() < 1e-6);
    }

    #[test]
    fn gamma_conversion_rejects_nonpositive() {
        assert!(gamma_mean_sd_to_shape_scale(0.0, 1.0).is_err());
        assert!(gamma_mean_sd_to_shape_scale(1.0, -2.0).is_err());
        assert!(gamma_mean_sd_to_shape_scale(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn poisson_zero_count() {
        let d = StateDensity::Poisson { rate: 3.30 };
        assert!((d.log_density(0.0).unwrap() + 3.30).abs() < 1e-15);
        let d = StateDensity::Poisson { rate: 0.01 };
        assert!((d.log_density(0.0).unwrap() + 0.01).abs() < 1e-15);
    }

    #[test]
    fn von_mises_small_concentration_is_uniform() {
        let d = StateDensity::VonMises { concentration: 1e-12 };
        for &x in &[-3.0, -1.0, 0.0, 0.5, PI] {
            assert!((d.log_density(x).unwrap() + (2.0 * PI).ln()).abs() < 1e-11);
        }
    }

    #[test]
    fn gamma_matches_shape_scale_pdf() {
        // Independent closed form with shape/scale.
        let (k, theta) = gamma_mean_sd_to_shape_scale(135.4, 75.3).unwrap();
        let x: f64 = 135.4;
        let expected = (k - 1.0) * x.ln() - x / theta - ln_gamma(k) - k * theta.ln();
        let d = StateDensity::Gamma { mean: 135.4, sd: 75.3 };
        assert!((d.log_density(x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn support_errors() {
        let g = StateDensity::Gamma { mean: 1.0, sd: 1.0 };
        assert!(matches!(g.log_density(-1.0), Err(Error::OutOfSupport { .. })));
        let p = StateDensity::Poisson { rate: 1.0 };
        assert!(p.log_density(1.5).is_err());
        let v = StateDensity::VonMises { concentration: 1.0 };
        assert!(v.log_density(-PI).is_err());
        assert!(v.log_density(PI).is_ok());
        let b = StateDensity::Beta { a: 2.0, b: 2.0 };
        assert!(b.log_density(1.2).is_err());
        assert!(b.log_density(0.0).unwrap().is_finite());
        assert!(b.log_density(1.0).unwrap().is_finite());
    }

    #[test]
    fn beta_boundary_is_clamped() {
        let b = StateDensity::Beta { a: 0.52, b: 6.16 };
        assert_eq!(b.log_density(0.0).unwrap(), b.log_density(BETA_BOUNDARY_EPS).unwrap());
        assert_eq!(b.log_density(1.0).unwrap(), b.log_density(1.0 - BETA_BOUNDARY_EPS).unwrap());
    }

    fn params_two_vars() -> EmissionParams {
        EmissionParams {
            blocks: vec![
                Some(vec![StateDensity::Poisson { rate: 0.6 }, StateDensity::Poisson { rate: 0.01 }]),
                Some(vec![
                    StateDensity::Gamma { mean: 30.5, sd: 21.8 },
                    StateDensity::Gamma { mean: 71.3, sd: 67.2 },
                ]),
            ],
        }
    }

    #[test]
    fn event_density_missing_and_additivity() {
        let params = params_two_vars();
        let none = EventObservation::new(vec![None, None], false);
        for s in 0..2 {
            assert_eq!(event_log_density(&none, s, &params).unwrap(), 0.0);
        }
        let one = EventObservation::new(vec![Some(0.0), None], false);
        assert!((event_log_density(&one, 1, &params).unwrap() + 0.01).abs() < 1e-15);
        let both = EventObservation::new(vec![Some(2.0), Some(40.0)], true);
        for s in 0..2 {
            let sum = log_density(0, s, 2.0, &params).unwrap() + log_density(1, s, 40.0, &params).unwrap();
            assert_eq!(event_log_density(&both, s, &params).unwrap(), sum);
        }
        let bad = EventObservation::new(vec![Some(-1.0), None], false);
        assert!(event_log_density(&bad, 0, &params).is_err());
    }

    #[test]
    fn event_density_ignores_schema_order() {
        let params = params_two_vars();
        let swapped = EmissionParams { blocks: vec![params.blocks[1].clone(), params.blocks[0].clone()] };
        let ev = EventObservation::new(vec![Some(3.0), Some(55.0)], false);
        let ev_swapped = EventObservation::new(vec![Some(55.0), Some(3.0)], false);
        for s in 0..2 {
            let a = event_log_density(&ev, s, &params).unwrap();
            let b = event_log_density(&ev_swapped, s, &swapped).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn densities_normalise() {
        // Poisson: direct summation.
        for &rate in &[0.01, 0.6, 3.3, 25.0] {
            let d = StateDensity::Poisson { rate };
            let total: f64 = (0..400).map(|x| d.log_density(x as f64).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-6, "rate {rate}: {total}");
        }
        // Von Mises: composite Simpson over (-pi, pi].
        for &kappa in &[0.83, 1.04, 3.11, 40.0] {
            let d = StateDensity::VonMises { concentration: kappa };
            let total = simpson(|x| d.log_density(x.min(PI)).unwrap().exp(), -PI + 1e-12, PI, 20_000);
            assert!((total - 1.0).abs() < 1e-6, "kappa {kappa}: {total}");
        }
        // Gamma: Simpson on a substitution x = t^2 that removes the endpoint singularity.
        for &(mean, sd) in &[(135.4, 75.3), (30.5, 21.8), (508.2, 135.8), (70.5, 68.4)] {
            let d = StateDensity::Gamma { mean, sd };
            let upper = (mean + 40.0 * sd).sqrt();
            let total = simpson(|t| if t <= 0.0 { 0.0 } else { 2.0 * t * d.log_density(t * t).unwrap().exp() }, 0.0, upper, 200_000);
            assert!((total - 1.0).abs() < 1e-6, "gamma ({mean},{sd}): {total}");
        }
        // Beta with a, b >= 1: plain Simpson on the open interval.
        for &(a, b) in &[(1.68, 1.59), (2.0, 5.0)] {
            let d = StateDensity::Beta { a, b };
            let total = simpson(|x| if x <= 0.0 || x >= 1.0 { 0.0 } else { d.log_density(x).unwrap().exp() }, 0.0, 1.0, 200_000);
            assert!((total - 1.0).abs() < 1e-6, "beta ({a},{b}): {total}");
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn unimodal_densities_decrease_away_from_mode() {
        let g = StateDensity::Gamma { mean: 166.7, sd: 62.0 };
        let (k, theta) = gamma_mean_sd_to_shape_scale(166.7, 62.0).unwrap();
        let mode = (k - 1.0) * theta;
        let mut prev = g.log_density(mode).unwrap();
        for i in 1..50 {
            let cur = g.log_density(mode + i as f64 * 5.0).unwrap();
            assert!(cur < prev);
            prev = cur;
        }
        let v = StateDensity::VonMises { concentration: 3.11 };
        let mut prev = v.log_density(0.0).unwrap();
        for i in 1..30 {
            let cur = v.log_density(-(i as f64) * 0.1).unwrap();
            assert!(cur < prev);
            prev = cur;
        }
        let p = StateDensity::Poisson { rate: 3.3 };
        let mode = 3.0;
        let mut prev = p.log_density(mode).unwrap();
        for x in 4..20 {
            let cur = p.log_density(x as f64).unwrap();
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn log_gradient_matches_finite_differences() {
        let cases = [
            StateDensity::Gamma { mean: 135.4, sd: 75.3 },
            StateDensity::Poisson { rate: 0.6 },
            StateDensity::VonMises { concentration: 3.11 },
            StateDensity::Beta { a: 0.88, b: 2.05 },
        ];
        for d in cases {
            let grad = d.linear_form_log_gradient();
            let vals = d.values();
            for (j, g) in grad.iter().enumerate() {
                let h = 1e-6;
                let mut up = vals.clone();
                up[j] *= f64::exp(h);
                let mut dn = vals.clone();
                dn[j] *= f64::exp(-h);
                let fu = StateDensity::from_values(d.family(), &up).linear_form();
                let fd = StateDensity::from_values(d.family(), &dn).linear_form();
                for c in 0..3 {
                    let num = (fu[c] - fd[c]) / (2.0 * h);
                    assert!((num - g[c]).abs() < 1e-6 * (1.0 + g[c].abs()), "{d:?} param {j} coef {c}: {num} vs {}", g[c]);
                }
            }
        }
    }
}
