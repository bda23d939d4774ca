//! Box-constrained minimisation: projected BFGS with backtracking line search,
//! a Nelder–Mead fallback when the line search cannot make progress, and a
//! final pass that moves coordinates on flat ridges onto their bounds.

use serde::{Deserialize, Serialize};

/// A differentiable objective to be minimised.
pub trait Objective {
    /// Value at `x`; writes the gradient into `grad`. Non-finite values mark
    /// infeasible points.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.value_grad(x, &mut g)
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for F {
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub max_iterations: usize,
    /// Converged when every free projected-gradient component is below this.
    pub gradient_tolerance: f64,
    /// Relative decrease below which an iteration counts as stalled.
    pub function_tolerance: f64,
    /// Largest coordinate change per iteration.
    pub max_step: f64,
    /// Objective evaluations allowed before giving up unconverged. Runs
    /// heading into an unbounded likelihood spike end here.
    pub max_evaluations: usize,
    /// Try moving coordinates onto their bounds after convergence.
    pub snap_to_bounds: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            gradient_tolerance: 1e-5,
            function_tolerance: 1e-13,
            max_step: 5.0,
            max_evaluations: 20_000,
            snap_to_bounds: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub used_fallback: bool,
}

struct Counted<'a, O: Objective + ?Sized> {
    obj: &'a O,
    evals: std::cell::Cell<usize>,
}

impl<O: Objective + ?Sized> Counted<'_, O> {
    fn eval(&self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals.set(self.evals.get() + 1);
        let f = self.obj.value_grad(x, g);
        if f.is_finite() && g.iter().all(|v| v.is_finite()) {
            f
        } else {
            f64::INFINITY
        }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Minimises `obj` over the box `[lower, upper]` starting from `x0`.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &OptimConfig,
) -> OptimResult {
    let n = x0.len();
    let counted = Counted { obj, evals: std::cell::Cell::new(0) };
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = counted.eval(&x, &mut g);
    if !f.is_finite() {
        return OptimResult {
            x,
            value: f,
            iterations: 0,
            evaluations: counted.evals.get(),
            converged: false,
            used_fallback: false,
        };
    }
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut used_fallback = false;
    let mut converged = false;
    let mut stalls = 0;
    let mut snaps = 0;
    let mut iterations = 0;
    let mut d = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];

    while iterations < cfg.max_iterations && counted.evals.get() < cfg.max_evaluations {
        iterations += 1;
        let free: Vec<bool> =
            (0..n).map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0))).collect();
        let pg = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg < cfg.gradient_tolerance || stalls >= 3 {
            if cfg.snap_to_bounds && snaps < 2 && snap_to_bounds(&counted, &mut x, &mut f, &mut g, lower, upper) {
                snaps += 1;
                stalls = 0;
                h = identity(n);
                h_is_identity = true;
                continue;
            }
            converged = true;
            break;
        }
        for i in 0..n {
            d[i] = if free[i] { -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>() } else { 0.0 };
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(n);
            h_is_identity = true;
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dmax > cfg.max_step {
            let r = cfg.max_step / dmax;
            d.iter_mut().for_each(|v| *v *= r);
            slope *= r;
        }

        // Backtracking along the projected path.
        let mut t = 1.0;
        let mut accepted = false;
        let mut fnew = f64::INFINITY;
        for _ in 0..60 {
            for i in 0..n {
                xn[i] = x[i] + t * d[i];
            }
            project(&mut xn, lower, upper);
            let mut moved = false;
            let mut decrease = 0.0;
            for i in 0..n {
                s[i] = xn[i] - x[i];
                moved |= s[i] != 0.0;
                decrease += g[i] * s[i];
            }
            if !moved {
                break;
            }
            fnew = counted.eval(&xn, &mut gn);
            if fnew.is_finite() && fnew <= f + 1e-4 * decrease.min(0.0).max(t * slope) {
                accepted = true;
                break;
            }
            t *= if fnew.is_finite() && t == 1.0 { 0.25 } else { 0.5 };
        }

        if !accepted {
            if !h_is_identity {
                h = identity(n);
                h_is_identity = true;
                continue;
            }
            let budget = (200 * n.max(1)).min(cfg.max_evaluations.saturating_sub(counted.evals.get()));
            let (xf, ff) = nelder_mead(&counted, &x, f, lower, upper, budget);
            used_fallback = true;
            if ff < f - cfg.function_tolerance * (1.0 + f.abs()) {
                x = xf;
                f = counted.eval(&x, &mut g);
                h = identity(n);
                continue;
            }
            converged = pg < 1e3 * cfg.gradient_tolerance;
            break;
        }

        for i in 0..n {
            y[i] = gn[i] - g[i];
        }
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-12 * (ss * yy).sqrt() && sy > 0.0 {
            if h_is_identity {
                let scale = sy / yy;
                h.iter_mut().for_each(|v| *v *= scale);
                h_is_identity = false;
            }
            bfgs_update(&mut h, &s, &y, sy, n);
        }
        let rel = (f - fnew) / (1.0 + f.abs());
        stalls = if rel < cfg.function_tolerance { stalls + 1 } else { 0 };
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fnew;
    }

    OptimResult { x, value: f, iterations, evaluations: counted.evals.get(), converged, used_fallback }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// Inverse-Hessian BFGS update `H <- (I - r s y^T) H (I - r y s^T) + r s s^T`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let c = (1.0 + r * yhy) * r;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Moves each coordinate whose gradient points toward a bound onto that
/// bound when doing so does not increase the objective. Returns whether any
/// coordinate moved.
fn snap_to_bounds<O: Objective + ?Sized>(
    obj: &Counted<'_, O>,
    x: &mut Vec<f64>,
    f: &mut f64,
    g: &mut [f64],
    lower: &[f64],
    upper: &[f64],
) -> bool {
    let n = x.len();
    let mut moved = false;
    let mut trial_g = vec![0.0; n];
    for i in 0..n {
        let target = if g[i] > 0.0 {
            lower[i]
        } else if g[i] < 0.0 {
            upper[i]
        } else {
            continue;
        };
        if x[i] == target || !target.is_finite() {
            continue;
        }
        let mut trial = x.clone();
        trial[i] = target;
        let ft = obj.eval(&trial, &mut trial_g);
        if ft.is_finite() && ft <= *f {
            *x = trial;
            *f = ft;
            g.copy_from_slice(&trial_g);
            moved = true;
        }
    }
    moved
}

/// Nelder–Mead on the box (points are projected). Returns the best vertex.
fn nelder_mead<O: Objective + ?Sized>(
    obj: &Counted<'_, O>,
    x0: &[f64],
    f0: f64,
    lower: &[f64],
    upper: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut scratch = vec![0.0; n];
    let mut eval = |p: &mut Vec<f64>| {
        project(p, lower, upper);
        obj.eval(p, &mut scratch)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        let mut p = x0.to_vec();
        let step = 0.05 * x0[i].abs().max(1.0);
        p[i] = if p[i] + step <= upper[i] { p[i] + step } else { p[i] - step };
        let fp = eval(&mut p);
        simplex.push((p, fp));
    }
    let mut evals = n;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= 1e-12 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v.0[j]).sum::<f64>() / n as f64).collect();
        let along = |c: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(m, w)| m + c * (m - w)).collect()
        };
        let mut xr = along(1.0, &simplex[n].0);
        let fr = eval(&mut xr);
        evals += 1;
        if fr < simplex[0].1 {
            let mut xe = along(2.0, &simplex[n].0);
            let fe = eval(&mut xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let mut xc = if fr < simplex[n].1 { along(0.5, &simplex[n].0) } else { along(-0.5, &simplex[n].0) };
            let fc = eval(&mut xc);
            evals += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let b = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = b.iter().zip(&v.0).map(|(bb, vv)| bb + 0.5 * (vv - bb)).collect();
                    let fp = eval(&mut p);
                    *v = (p, fp);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    (x, f)
}
