//! Gaussian log-likelihood of SIR parameters, its gradient from forward
//! sensitivities, multi-start maximum likelihood and replicate studies.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bfgs::{self, BfgsOptions};
use crate::error::{invalid, Error, Result};
use crate::fmt_f64;
use crate::simulate::{observe_with, sigma_sequence, NoiseModel, ObservationSeries};
use crate::sir::{incidence, integrate_days, integrate_exact, InitialCondition, SirParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSpec {
    pub obs: ObservationSeries,
    pub init: InitialCondition,
    pub noise: NoiseModel,
    pub sigma_inferred: bool,
    /// Treat σ_t as constant in θ when differentiating.
    pub plug_in: bool,
    pub steps_per_day: usize,
}

impl LikelihoodSpec {
    pub fn new(
        obs: ObservationSeries,
        init: InitialCondition,
        noise: NoiseModel,
        sigma_inferred: bool,
    ) -> Result<Self> {
        noise.validate()?;
        if obs.is_empty() {
            return Err(Error::InsufficientData("no observations".into()));
        }
        if sigma_inferred && !noise.depends_on_infected() {
            return Err(invalid(
                "noise",
                "inferring sigma needs a noise model proportional to infections",
            ));
        }
        if let NoiseModel::KnownSequence { sigma_t } = &noise {
            if sigma_t.len() < obs.len() {
                return Err(Error::InsufficientData(format!(
                    "sigma_t has {} entries for {} observations",
                    sigma_t.len(),
                    obs.len()
                )));
            }
        }
        Ok(LikelihoodSpec {
            obs,
            init,
            noise,
            sigma_inferred,
            plug_in: false,
            steps_per_day: crate::sir::DEFAULT_STEPS_PER_DAY,
        })
    }

    pub fn with_plug_in(mut self, plug_in: bool) -> Self {
        self.plug_in = plug_in;
        self
    }

    pub fn with_steps_per_day(mut self, steps: usize) -> Self {
        self.steps_per_day = steps;
        self
    }

    pub fn days(&self) -> usize {
        self.obs.len()
    }

    fn noise_for(&self, sigma: Option<f64>) -> Result<NoiseModel> {
        match sigma {
            Some(s) if self.noise.sigma().is_some() => {
                let m = self.noise.with_sigma(s);
                m.validate()?;
                Ok(m)
            }
            Some(_) => Err(invalid("sigma", "this noise model has no scale parameter")),
            None if self.sigma_inferred => Err(invalid("sigma", "required when inferred")),
            None => Ok(self.noise.clone()),
        }
    }
}

/// Day samples of (u, i) with u = 1 − s, and their derivatives in β and γ.
/// Working with u keeps early incidences free of cancellation against 1.
struct Sensitivities {
    state: Vec<[f64; 6]>,
}

fn sensitivities(params: &SirParams, init: &InitialCondition, days: usize, spd: usize) -> Result<Sensitivities> {
    let (b, g) = (params.beta(), params.gamma());
    let mut state = Vec::with_capacity(days + 1);
    integrate_days(
        |y: &[f64; 6]| {
            let (s, i) = (1.0 - y[0], y[1]);
            let si = s * i;
            let inf = b * si;
            let db = b * (y[3] * s - i * y[2]);
            let dg = b * (y[5] * s - i * y[4]);
            [
                inf,
                inf - g * i,
                db + si,
                db + si - g * y[3],
                dg,
                dg - g * y[5] - i,
            ]
        },
        [1.0 - init.s0(), init.i0(), 0.0, 0.0, 0.0, 0.0],
        days,
        spd,
        |_, y| state.push(*y),
    )?;
    Ok(Sensitivities { state })
}

/// Log-likelihood and its gradient in (β, γ[, σ]).
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodValue {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    /// Per-day contributions ℓ_1..ℓ_T.
    pub terms: Vec<f64>,
}

fn evaluate(params: &SirParams, sigma: Option<f64>, spec: &LikelihoodSpec) -> Result<LikelihoodValue> {
    let noise = spec.noise_for(sigma)?;
    let days = spec.days();
    let sens = sensitivities(params, &spec.init, days, spec.steps_per_day)?;
    let n = spec.init.n();
    let p = spec.obs.reporting_rate;
    // ∂ log σ_t / ∂ log i_t
    let log_sigma_on_i = match noise {
        NoiseModel::Case2 { .. } => 1.0,
        NoiseModel::SqrtInfected { .. } => 0.5,
        _ => 0.0,
    };
    let log_sigma_on_i = if spec.plug_in { 0.0 } else { log_sigma_on_i };
    let mut terms = Vec::with_capacity(days);
    let mut grad = vec![0.0; if sigma.is_some() { 3 } else { 2 }];
    for t in 1..=days {
        let (a, b) = (&sens.state[t - 1], &sens.state[t]);
        let delta = n * (b[0] - a[0]);
        let d_beta = n * (b[2] - a[2]);
        let d_gamma = n * (b[4] - a[4]);
        let i = b[1];
        let sd = noise.sigma_at(t, n, i);
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::DegenerateVariance { day: t, sigma: sd });
        }
        let var = sd * sd;
        let r = spec.obs.values[t - 1] - p * delta;
        terms.push(-0.5 * (2.0 * PI * var).ln() - 0.5 * r * r / var);
        let z2m1 = r * r / var - 1.0;
        let (ls_beta, ls_gamma) = if log_sigma_on_i != 0.0 {
            (log_sigma_on_i * b[3] / i, log_sigma_on_i * b[5] / i)
        } else {
            (0.0, 0.0)
        };
        grad[0] += p * r * d_beta / var + z2m1 * ls_beta;
        grad[1] += p * r * d_gamma / var + z2m1 * ls_gamma;
        if let Some(s) = sigma {
            grad[2] += z2m1 / s;
        }
    }
    Ok(LikelihoodValue {
        loglik: terms.iter().sum(),
        gradient: grad,
        terms,
    })
}

/// Full Gaussian log-likelihood, including the −½ log(2πσ_t²) terms.
pub fn log_likelihood(params: SirParams, sigma: Option<f64>, spec: &LikelihoodSpec) -> Result<f64> {
    Ok(evaluate(&params, sigma, spec)?.loglik)
}

/// Per-day log-likelihood contributions.
pub fn log_likelihood_terms(
    params: SirParams,
    sigma: Option<f64>,
    spec: &LikelihoodSpec,
) -> Result<Vec<f64>> {
    Ok(evaluate(&params, sigma, spec)?.terms)
}

/// Gradient with respect to (β, γ) or (β, γ, σ).
pub fn log_likelihood_gradient(
    params: SirParams,
    sigma: Option<f64>,
    spec: &LikelihoodSpec,
) -> Result<Vec<f64>> {
    Ok(evaluate(&params, sigma, spec)?.gradient)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    pub starts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            bfgs: BfgsOptions::default(),
            starts: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleResult {
    pub beta_hat: f64,
    pub gamma_hat: f64,
    pub sigma_hat: Option<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub r0_hat: f64,
    pub delta_hat: f64,
    /// Infinity norm of the log-coordinate gradient at the optimum.
    pub grad_norm: f64,
    pub start: usize,
    pub status: &'static str,
    /// Log-likelihood after each accepted step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Start {
    pub params: SirParams,
    pub sigma: Option<f64>,
}

/// Growth rate from a least-squares line through log Y_t over days with
/// positive counts; `None` with fewer than two such days or no growth.
pub fn log_slope(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, &y)| y > 0.0)
        .map(|(k, &y)| ((k + 1) as f64, y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope.is_finite() && slope > 0.0).then_some(slope)
}

/// σ maximizing the likelihood at fixed (β, γ): σ_t = σ c_t gives
/// σ̂² = mean of (r_t / c_t)².
pub fn profile_sigma(params: SirParams, spec: &LikelihoodSpec) -> Result<f64> {
    let days = spec.days();
    let traj = integrate_exact(params, spec.init, days, spec.steps_per_day)?;
    let unit = sigma_sequence(&spec.noise.with_sigma(1.0), &traj, days)?;
    let delta = incidence(&traj)?;
    let p = spec.obs.reporting_rate;
    let ms = (0..days)
        .map(|k| ((spec.obs.values[k] - p * delta.values()[k]) / unit[k]).powi(2))
        .sum::<f64>()
        / days as f64;
    let s = ms.sqrt();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegenerateVariance { day: 0, sigma: s });
    }
    Ok(s)
}

/// Log-spaced starting points around the log-slope initializer.
pub fn default_starts(spec: &LikelihoodSpec, count: usize) -> Vec<Start> {
    let delta0 = log_slope(&spec.obs.values).unwrap_or(0.1);
    let beta0 = 2.0 * delta0;
    (0..count)
        .filter_map(|k| {
            let beta = beta0 * 2f64.powi(k as i32 - 2);
            let gamma = if beta > delta0 { beta - delta0 } else { 0.5 * beta };
            let params = SirParams::new(beta, gamma).ok()?;
            let sigma = if spec.sigma_inferred {
                Some(profile_sigma(params, spec).ok()?)
            } else {
                None
            };
            Some(Start { params, sigma })
        })
        .collect()
}

fn fit_from(spec: &LikelihoodSpec, start: &Start, index: usize, opts: &BfgsOptions) -> std::result::Result<MleResult, String> {
    let inferred = start.sigma.is_some();
    let mut x0 = vec![start.params.beta().ln(), start.params.gamma().ln()];
    if let Some(s) = start.sigma {
        x0.push(s.ln());
    }
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let (b, g) = (x[0].exp(), x[1].exp());
        let Ok(params) = SirParams::new(b, g) else {
            return (f64::INFINITY, vec![0.0; x.len()]);
        };
        let sigma = inferred.then(|| x[2].exp());
        match evaluate(&params, sigma, spec) {
            Ok(v) if v.loglik.is_finite() => {
                let mut grad = vec![-v.gradient[0] * b, -v.gradient[1] * g];
                if let Some(s) = sigma {
                    grad.push(-v.gradient[2] * s);
                }
                (-v.loglik, grad)
            }
            _ => (f64::INFINITY, vec![0.0; x.len()]),
        }
    };
    let out = bfgs::minimize(objective, &x0, opts);
    if !out.value.is_finite() {
        return Err(format!("start {index}: {}", out.message));
    }
    let (b, g) = (out.x[0].exp(), out.x[1].exp());
    Ok(MleResult {
        beta_hat: b,
        gamma_hat: g,
        sigma_hat: inferred.then(|| out.x[2].exp()),
        loglik: -out.value,
        converged: out.converged,
        iterations: out.iterations,
        r0_hat: b / g,
        delta_hat: b - g,
        grad_norm: out.grad.iter().fold(0.0, |m, v| m.max(v.abs())),
        start: index,
        status: out.message,
        trace: out.trace.iter().map(|v| -v).collect(),
    })
}

/// Best converged local maximum over the given starts.
pub fn fit_mle(spec: &LikelihoodSpec, starts: &[Start], opts: &FitOptions) -> Result<MleResult> {
    if starts.is_empty() {
        return Err(invalid("starts", "at least one start is required"));
    }
    if let Some(s) = starts.iter().find(|s| s.sigma.is_some() != spec.sigma_inferred) {
        return Err(invalid(
            "starts",
            format!("sigma start {:?} inconsistent with sigma_inferred", s.sigma),
        ));
    }
    let mut diagnostics = Vec::new();
    let mut best: Option<MleResult> = None;
    for (k, start) in starts.iter().enumerate() {
        match fit_from(spec, start, k, &opts.bfgs) {
            Ok(r) if r.converged => {
                if best.as_ref().is_none_or(|b| r.loglik > b.loglik) {
                    best = Some(r);
                }
            }
            Ok(r) => diagnostics.push(format!(
                "start {k}: {} after {} iterations (|grad| = {:.3e}, loglik = {})",
                r.status, r.iterations, r.grad_norm, r.loglik
            )),
            Err(e) => diagnostics.push(e),
        }
    }
    best.ok_or(Error::OptimizationFailure { diagnostics })
}

/// `fit_mle` with `default_starts`.
pub fn fit_mle_default(spec: &LikelihoodSpec, opts: &FitOptions) -> Result<MleResult> {
    let starts = default_starts(spec, opts.starts);
    if starts.is_empty() {
        return Err(Error::OptimizationFailure {
            diagnostics: vec!["no valid starting point".into()],
        });
    }
    fit_mle(spec, &starts, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSpec {
    pub true_params: SirParams,
    pub init: InitialCondition,
    pub noise: NoiseModel,
    pub p: f64,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MleEnsemble {
    pub replicates: Vec<(usize, MleResult)>,
    pub failures: Vec<(usize, String)>,
    pub seed_base: u64,
    pub spec: EnsembleSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub count: usize,
    /// Least-squares slope of β̂ regressed on γ̂.
    pub slope_beta_on_gamma: f64,
    pub r0_min: f64,
    pub r0_max: f64,
    pub sd_beta: f64,
    pub sd_gamma: f64,
    pub sd_delta: f64,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

impl MleEnsemble {
    pub fn summary(&self) -> EnsembleSummary {
        let rs = || self.replicates.iter().map(|(_, r)| r);
        let (mb, sd_beta) = mean_sd(rs().map(|r| r.beta_hat));
        let (mg, sd_gamma) = mean_sd(rs().map(|r| r.gamma_hat));
        let (_, sd_delta) = mean_sd(rs().map(|r| r.delta_hat));
        let sxy: f64 = rs().map(|r| (r.gamma_hat - mg) * (r.beta_hat - mb)).sum();
        let sxx: f64 = rs().map(|r| (r.gamma_hat - mg).powi(2)).sum();
        EnsembleSummary {
            count: self.replicates.len(),
            slope_beta_on_gamma: sxy / sxx,
            r0_min: rs().map(|r| r.r0_hat).fold(f64::INFINITY, f64::min),
            r0_max: rs().map(|r| r.r0_hat).fold(f64::NEG_INFINITY, f64::max),
            sd_beta,
            sd_gamma,
            sd_delta,
        }
    }

    /// CSV `replicate,beta_hat,gamma_hat,sigma_hat,loglik,converged`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "beta_hat", "gamma_hat", "sigma_hat", "loglik", "converged"])?;
        for (k, r) in &self.replicates {
            w.write_record([
                k.to_string(),
                fmt_f64(r.beta_hat),
                fmt_f64(r.gamma_hat),
                r.sigma_hat.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.loglik),
                r.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates `replicates` data sets from `spec.true_params` and fits each.
/// Replicate k draws its noise from (seed, k).
pub fn mle_ensemble(
    spec: &EnsembleSpec,
    replicates: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<MleEnsemble> {
    if replicates == 0 {
        return Err(invalid("replicates", "must be at least 1"));
    }
    spec.noise.validate()?;
    let traj = integrate_exact(spec.true_params, spec.init, spec.days, crate::sir::DEFAULT_STEPS_PER_DAY)?;
    let sigma = sigma_sequence(&spec.noise, &traj, spec.days)?;
    let delta = incidence(&traj)?;
    let results: Vec<Result<MleResult>> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let obs = observe_with(
                delta.values(),
                &sigma,
                spec.p,
                seed,
                k as u64,
                &spec.noise,
                spec.init.population(),
            );
            let fit_spec = LikelihoodSpec::new(obs, spec.init, spec.noise.clone(), false)?;
            fit_mle_default(&fit_spec, opts)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => ok.push((k, r)),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    if failures.len() * 20 > replicates {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: replicates,
        });
    }
    Ok(MleEnsemble {
        replicates: ok,
        failures,
        seed_base: seed,
        spec: spec.clone(),
    })
}
