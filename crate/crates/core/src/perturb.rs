//! Perturbation directions around a parameter point, trajectory
//! separations, the linearized lower bound and its error.
//!
//! Differences between nearby trajectories are tiny compared with `s ≈ 1`,
//! so separations are computed from the removed-or-infected complement
//! `u = 1 − s` rather than from `s` itself.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmt_f64;
use crate::sir::{complement_path, find_peak_time, InitialCondition, SirParams};

/// θ_ε(ω) = θ + ε (cos ω, sin ω).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    base: SirParams,
    epsilon: f64,
    omega: f64,
}

impl Perturbation {
    /// Requires `0 < epsilon < base.delta()`. `omega` is reduced to [0, 2π).
    pub fn new(base: SirParams, epsilon: f64, omega: f64) -> Result<Self> {
        check_epsilon(&base, epsilon)?;
        if epsilon == 0.0 {
            return Err(invalid("epsilon", "must be positive"));
        }
        if !omega.is_finite() {
            return Err(invalid("omega", "must be finite"));
        }
        Ok(Perturbation {
            base,
            epsilon,
            omega: omega.rem_euclid(2.0 * PI),
        })
    }

    pub fn base(&self) -> SirParams {
        self.base
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// f(ω) = cos ω − sin ω, so that δ_ε = δ + ε f(ω).
    pub fn f(&self) -> f64 {
        self.omega.cos() - self.omega.sin()
    }

    pub fn beta_eps(&self) -> f64 {
        self.base.beta() + self.epsilon * self.omega.cos()
    }
    pub fn gamma_eps(&self) -> f64 {
        self.base.gamma() + self.epsilon * self.omega.sin()
    }
    pub fn delta_eps(&self) -> f64 {
        self.base.delta() + self.epsilon * self.f()
    }

    /// The perturbed parameters. Fails when δ_ε ≤ 0 or γ_ε ≤ 0, which
    /// `epsilon < delta` alone does not rule out for every direction.
    pub fn perturbed(&self) -> Result<SirParams> {
        if self.delta_eps() <= 0.0 {
            return Err(Error::PerturbationTooLarge {
                epsilon: self.epsilon,
                delta: self.base.delta(),
            });
        }
        SirParams::new(self.beta_eps(), self.gamma_eps())
    }
}

fn check_epsilon(base: &SirParams, epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(invalid("epsilon", format!("must be nonnegative, got {epsilon}")));
    }
    if epsilon >= base.delta() {
        return Err(Error::PerturbationTooLarge {
            epsilon,
            delta: base.delta(),
        });
    }
    Ok(())
}

/// (ε / (δ√2)) (e^{δt} − 1) i0.
pub fn lower_bound(base: SirParams, init: InitialCondition, epsilon: f64, t: f64) -> Result<f64> {
    check_epsilon(&base, epsilon)?;
    if !(t >= 0.0) {
        return Err(invalid("t", "must be nonnegative"));
    }
    let d = base.delta();
    Ok(epsilon / (d * SQRT_2) * (d * t).exp_m1() * init.i0())
}

/// `omegas` evenly spaced angles covering [0, 2π).
pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| 2.0 * PI * k as f64 / count as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationCurve {
    pub omega: f64,
    pub times: Vec<f64>,
    pub distance: Vec<f64>,
    pub s_distance: Vec<f64>,
}

/// Direction-tagged failure.
fn tag(omega: f64) -> impl Fn(Error) -> Error {
    move |e| Error::DirectionFailure {
        omega,
        source: Box::new(e),
    }
}

/// One separation curve per angle, in the order given.
pub fn separation_sweep(
    base: SirParams,
    init: InitialCondition,
    epsilon: f64,
    omegas: &[f64],
    horizon: usize,
    steps_per_day: usize,
) -> Result<Vec<SeparationCurve>> {
    check_epsilon(&base, epsilon)?;
    if let Some(&bad) = omegas.iter().find(|w| !(0.0..2.0 * PI).contains(*w)) {
        return Err(invalid("omega", format!("{bad} outside [0, 2π)")));
    }
    let reference = complement_path(&base, &init, horizon, steps_per_day)?;
    omegas
        .par_iter()
        .map(|&omega| {
            let params = if epsilon == 0.0 {
                base
            } else {
                Perturbation::new(base, epsilon, omega)
                    .and_then(|p| p.perturbed())
                    .map_err(tag(omega))?
            };
            let path =
                complement_path(&params, &init, horizon, steps_per_day).map_err(tag(omega))?;
            let mut distance = Vec::with_capacity(horizon + 1);
            let mut s_distance = Vec::with_capacity(horizon + 1);
            for (a, b) in path.iter().zip(&reference) {
                let du = a[0] - b[0];
                let di = a[1] - b[1];
                distance.push(du.hypot(di));
                s_distance.push(du.abs());
            }
            Ok(SeparationCurve {
                omega,
                times: (0..=horizon).map(|d| d as f64).collect(),
                distance,
                s_distance,
            })
        })
        .collect()
}

/// Per-day minimum over curves and the angle achieving it.
pub fn min_separation(curves: &[SeparationCurve]) -> Vec<(f64, f64)> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    (0..first.distance.len())
        .map(|d| {
            curves
                .iter()
                .map(|c| (c.distance[d], c.omega))
                .fold((f64::INFINITY, f64::NAN), |best, x| {
                    if x.0 < best.0 {
                        x
                    } else {
                        best
                    }
                })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(curves: &[SeparationCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["omega", "t", "distance", "s_distance"])?;
    for c in curves {
        for (d, t) in c.times.iter().enumerate() {
            w.write_record([
                fmt_f64(c.omega),
                (*t as usize).to_string(),
                fmt_f64(c.distance[d]),
                fmt_f64(c.s_distance[d]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One day of the exact-versus-linearized comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorPoint {
    pub t: usize,
    /// ‖φ_t^ε − φ_t‖ on the exact flow.
    pub exact_norm: f64,
    /// ‖φ̃_t^ε − φ̃_t‖ on the linearized flow.
    pub linear_norm: f64,
    /// E_t^ε = exact_norm − linear_norm.
    pub error: f64,
    /// log|E_t^ε| − log exact_norm; `None` where a norm vanishes.
    pub rel_log_error: Option<f64>,
}

/// Linearized separation at time t, evaluated without subtracting the
/// two nearly equal solutions.
pub fn linearized_separation(pert: &Perturbation, init: &InitialCondition, t: f64) -> [f64; 2] {
    let base = pert.base();
    let (b, d) = (base.beta(), base.delta());
    let (be, de) = (pert.beta_eps(), pert.delta_eps());
    let grow = (d * t).exp_m1();
    let grow_e = (de * t).exp_m1();
    let du = (be / de * grow_e - b / d * grow) * init.i0();
    // e^{δ_ε t} − e^{δ t} = e^{δt} (e^{ε f t} − 1)
    let di = (d * t).exp() * (pert.epsilon() * pert.f() * t).exp_m1() * init.i0();
    [du, di]
}

pub fn approximation_error(
    init: InitialCondition,
    pert: &Perturbation,
    horizon: usize,
    steps_per_day: usize,
) -> Result<Vec<ErrorPoint>> {
    let base = pert.base();
    let perturbed = pert.perturbed()?;
    let a = complement_path(&base, &init, horizon, steps_per_day)?;
    let b = complement_path(&perturbed, &init, horizon, steps_per_day)?;
    Ok(error_points(pert, &init, &a, &b))
}

fn error_points(
    pert: &Perturbation,
    init: &InitialCondition,
    base_path: &[[f64; 2]],
    pert_path: &[[f64; 2]],
) -> Vec<ErrorPoint> {
    base_path
        .iter()
        .zip(pert_path)
        .enumerate()
        .map(|(t, (x, y))| {
            let exact_norm = (y[0] - x[0]).hypot(y[1] - x[1]);
            let [du, di] = linearized_separation(pert, init, t as f64);
            let linear_norm = du.hypot(di);
            let error = exact_norm - linear_norm;
            let rel_log_error = (exact_norm > 0.0 && linear_norm > 0.0 && error != 0.0)
                .then(|| error.abs().ln() - exact_norm.ln());
            ErrorPoint {
                t,
                exact_norm,
                linear_norm,
                error,
                rel_log_error,
            }
        })
        .collect()
}

/// Right-hand side of the a-priori bound on |E_t^ε|.
pub fn theoretical_error_bound(
    init: InitialCondition,
    pert: &Perturbation,
    t: f64,
) -> Result<f64> {
    let de = pert.delta_eps();
    if de <= 0.0 {
        return Err(Error::PerturbationTooLarge {
            epsilon: pert.epsilon(),
            delta: pert.base().delta(),
        });
    }
    let base = pert.base();
    let (b, g, d) = (base.beta(), base.gamma(), base.delta());
    let (be, ge) = (pert.beta_eps(), pert.gamma_eps());
    let term_e = (2.0 * be * be + ge * ge).sqrt() / de * (de * t).exp_m1();
    let term = (2.0 * b * b + g * g).sqrt() / d * (d * t).exp_m1();
    Ok((term_e + term) * init.i0())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleLine {
    pub omega: f64,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorFit {
    pub slope: f64,
    pub intercept: f64,
    /// −intercept/slope; infinite when the averaged slope is not positive.
    pub crossing_time: f64,
    pub percent_of_peak: f64,
    pub peak_time: f64,
    pub lines: Vec<AngleLine>,
}

/// 25 angles in [π/4 − π/12, π/4 + π/12) followed by 25 around 5π/4.
pub fn error_fit_angles() -> Vec<f64> {
    let width = PI / 6.0;
    [FRAC_PI_4, 5.0 * FRAC_PI_4]
        .iter()
        .flat_map(|&c| (0..25).map(move |k| c - PI / 12.0 + width * k as f64 / 25.0))
        .collect()
}

/// Fraction of t* defining the end of the fit window.
pub const FIT_WINDOW: f64 = 0.95;

fn ols(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Averaged least-squares line of the log relative error against t over
/// whole days in [1, 0.95·t*].
pub fn error_fit(
    base: SirParams,
    init: InitialCondition,
    epsilon: f64,
    steps_per_day: usize,
) -> Result<ErrorFit> {
    check_epsilon(&base, epsilon)?;
    let peak = find_peak_time(base, init, steps_per_day)?;
    let last = (FIT_WINDOW * peak).floor() as usize;
    let horizon = last.max(1);
    let reference = complement_path(&base, &init, horizon, steps_per_day)?;
    let lines = error_fit_angles()
        .par_iter()
        .map(|&omega| {
            let pert = Perturbation::new(base, epsilon, omega).map_err(tag(omega))?;
            let params = pert.perturbed().map_err(tag(omega))?;
            let path =
                complement_path(&params, &init, horizon, steps_per_day).map_err(tag(omega))?;
            let pts: Vec<(f64, f64)> = error_points(&pert, &init, &reference, &path)
                .into_iter()
                .filter(|e| (1..=last).contains(&e.t))
                .filter_map(|e| e.rel_log_error.map(|r| (e.t as f64, r)))
                .collect();
            if pts.len() < 5 {
                return Err(Error::FitDegenerate {
                    omega,
                    points: pts.len(),
                });
            }
            let (slope, intercept) = ols(&pts);
            Ok(AngleLine {
                omega,
                slope,
                intercept,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = lines.len() as f64;
    let slope = lines.iter().map(|l| l.slope).sum::<f64>() / n;
    let intercept = lines.iter().map(|l| l.intercept).sum::<f64>() / n;
    let crossing_time = if slope > 0.0 {
        -intercept / slope
    } else {
        f64::INFINITY
    };
    Ok(ErrorFit {
        slope,
        intercept,
        crossing_time,
        percent_of_peak: 100.0 * crossing_time / peak,
        peak_time: peak,
        lines,
    })
}

pub fn write_fit_csv<W: Write>(fit: &ErrorFit, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["omega", "slope", "intercept"])?;
    for l in &fit.lines {
        w.write_record([fmt_f64(l.omega), fmt_f64(l.slope), fmt_f64(l.intercept)])?;
    }
    w.flush()?;
    Ok(())
}

/// One entry of the reference grid of parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub population: u64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl GridConfig {
    pub fn params(&self) -> SirParams {
        SirParams::new(self.beta, self.gamma).expect("grid parameters are valid")
    }
    pub fn init(&self) -> InitialCondition {
        InitialCondition::from_population(self.population).expect("grid population is positive")
    }
}

/// N ∈ {10^4, …, 10^7} × four (β, γ, ε) triples.
pub fn reference_grid() -> Vec<GridConfig> {
    const TRIPLES: [(f64, f64, f64); 4] = [
        (0.21, 0.14, 0.03),
        (0.21, 0.07, 0.03),
        (0.42, 0.07, 0.06),
        (1.68, 0.14, 0.1),
    ];
    TRIPLES
        .iter()
        .flat_map(|&(beta, gamma, epsilon)| {
            [10_000u64, 100_000, 1_000_000, 10_000_000]
                .into_iter()
                .map(move |population| GridConfig {
                    population,
                    beta,
                    gamma,
                    epsilon,
                })
        })
        .collect()
}
