//! Dense BFGS minimizer with a strong-Wolfe line search.
//!
//! The objective may return `+∞` (or NaN) to mark infeasible points; the
//! line search treats those as overshoots and backs off.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when ‖∇f‖∞ ≤ grad_tol · max(1, |f|).
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Length of the first trial step along steepest descent, in the
    /// infinity norm.
    pub initial_step: f64,
    /// When the line search can make no further progress, or keeps landing
    /// within rounding of the current value, accept the point if the
    /// quasi-Newton decrement gᵀHg/2 is below `decrement_tol · max(1, |f|)`:
    /// the objective is then at its minimum to working precision even if
    /// rounding keeps ‖g‖ above `grad_tol`.
    pub decrement_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            initial_step: 0.1,
            decrement_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with f(x0).
    pub trace: Vec<f64>,
    pub message: &'static str,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

struct Point {
    alpha: f64,
    /// Accepted on slope information alone.
    noisy: bool,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct Search<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    opts: &'a BfgsOptions,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Search<'_, F> {
    fn eval(&mut self, alpha: f64) -> Point {
        self.evals += 1;
        let (f, g) = (self.f)(&axpy(self.x, alpha, self.d));
        let f = if f.is_nan() { f64::INFINITY } else { f };
        let slope = if f.is_finite() { dot(&g, self.d) } else { f64::NAN };
        Point {
            alpha,
            f,
            g,
            slope,
            noisy: false,
        }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f.is_finite() && p.f <= self.f0 + self.opts.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.opts.c2 * self.slope0
    }

    /// Within rounding of f0, function values no longer order points, so
    /// the search falls back on slopes alone (approximate Wolfe conditions).
    fn near(&self, p: &Point) -> bool {
        p.f.is_finite() && (p.f - self.f0).abs() <= 1e-11 * self.f0.abs().max(1.0)
    }

    /// Never accepts an increase, so accepted steps stay monotone.
    fn approx_wolfe(&self, p: &Point) -> bool {
        p.f <= self.f0
            && p.slope >= self.opts.c2 * self.slope0
            && p.slope <= (2.0 * self.opts.c1 - 1.0) * self.slope0
    }

    /// Returns an acceptable point, or the best Armijo point found.
    fn run(&mut self, alpha0: f64) -> Option<Point> {
        let mut prev = Point {
            alpha: 0.0,
            noisy: false,
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        for k in 0..60 {
            let p = self.eval(alpha);
            if !p.f.is_finite() {
                // Overshot into the infeasible region.
                if k > 0 && prev.alpha > 0.0 {
                    return self.zoom(prev, p);
                }
                alpha *= 0.25;
                continue;
            }
            if self.near(&p) {
                if self.approx_wolfe(&p) {
                    return Some(Point { noisy: true, ..p });
                }
                if p.slope >= 0.0 {
                    return self.zoom(prev, p);
                }
                alpha = p.alpha * 2.0;
                prev = p;
                continue;
            }
            if !self.armijo(&p) || (prev.alpha > 0.0 && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev);
            }
            alpha = p.alpha * 2.0;
            prev = p;
        }
        None
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        for _ in 0..60 {
            let (a, b) = (lo.alpha, hi.alpha);
            // Safeguarded quadratic interpolation from lo's value and slope.
            let mut trial = f64::NAN;
            if hi.f.is_finite() && lo.slope.is_finite() {
                let h = b - a;
                let denom = 2.0 * (hi.f - lo.f - lo.slope * h);
                if denom > 0.0 {
                    trial = a - lo.slope * h * h / denom;
                }
            }
            let (left, right) = if a < b { (a, b) } else { (b, a) };
            let margin = 0.1 * (right - left);
            if !(trial > left + margin && trial < right - margin) {
                trial = 0.5 * (a + b);
            }
            if (right - left) <= 1e-16 * right.abs().max(1e-300) {
                break;
            }
            let p = self.eval(trial);
            if self.near(&p) {
                if self.approx_wolfe(&p) {
                    return Some(Point { noisy: true, ..p });
                }
                if p.slope >= 0.0 {
                    hi = p;
                } else {
                    lo = p;
                }
                continue;
            }
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        let noisy = lo.f == self.f0;
        (lo.alpha > 0.0 && lo.f <= self.f0).then_some(Point { noisy, ..lo })
    }
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut trace = vec![fx];
    let done = |fx: f64, g: &[f64]| inf_norm(g) <= opts.grad_tol * fx.abs().max(1.0);
    if !fx.is_finite() {
        return BfgsOutcome {
            x,
            value: fx,
            grad: g,
            iterations: 0,
            evaluations,
            converged: false,
            trace,
            message: "objective not finite at the start",
        };
    }
    let identity = |scale: f64| {
        let mut h = vec![vec![0.0; n]; n];
        for (k, row) in h.iter_mut().enumerate() {
            row[k] = scale;
        }
        h
    };
    let mut h = identity(1.0);
    let mut fresh = true;
    let mut message = "iteration limit reached";
    let mut iterations = 0;
    let mut converged = done(fx, &g);
    let mut noisy_run = 0;
    while !converged && iterations < opts.max_iter {
        let mut d: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity(1.0);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if fresh {
            (opts.initial_step / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };
        let mut search = Search {
            f: &mut f,
            x: &x,
            d: &d,
            f0: fx,
            slope0: slope,
            opts,
            evals: 0,
        };
        let found = search.run(alpha0);
        evaluations += search.evals;
        let Some(p) = found else {
            let decrement = -0.5 * slope;
            if !fresh && decrement <= opts.decrement_tol * fx.abs().max(1.0) {
                converged = true;
                message = "no further progress possible; decrement below tolerance";
                break;
            }
            if fresh {
                message = "line search failed along steepest descent";
                break;
            }
            h = identity(1.0);
            fresh = true;
            continue;
        };
        iterations += 1;
        noisy_run = if p.noisy { noisy_run + 1 } else { 0 };
        let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x = axpy(&x, p.alpha, &d);
        fx = p.f;
        g = p.g;
        trace.push(fx);
        if noisy_run >= 3 && -0.5 * slope <= opts.decrement_tol * fx.abs().max(1.0) {
            converged = true;
            message = "stalled at working precision; decrement below tolerance";
            break;
        }
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                h = identity(sy / dot(&y, &y));
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        converged = done(fx, &g);
        if converged {
            message = "gradient tolerance met";
        }
    }
    if converged && iterations == 0 {
        message = "gradient tolerance met";
    }
    BfgsOutcome {
        x,
        value: fx,
        grad: g,
        iterations,
        evaluations,
        converged,
        trace,
        message,
    }
}
