//! Likelihood-ratio test of θ_0 against θ_ε(ω): exact and closed-form
//! type II error, inversions, and Monte Carlo power.

use std::f64::consts::{FRAC_PI_4, SQRT_2};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fmt_f64;
use crate::normal;
use crate::perturb::Perturbation;
use crate::simulate::{check_rate, normal_draw, NoiseModel, ObservationSeries};
use crate::sir::{complement_incidence, complement_path, find_peak_time, InitialCondition, SirParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestSpec {
    pub null_params: SirParams,
    pub pert: Perturbation,
    pub alpha: f64,
    pub days: usize,
    pub p: f64,
    pub noise: NoiseModel,
    pub init: InitialCondition,
    pub steps_per_day: usize,
}

impl TestSpec {
    /// Validates the test and that `days` precedes the null peak.
    pub fn new(
        pert: Perturbation,
        alpha: f64,
        days: usize,
        p: f64,
        noise: NoiseModel,
        init: InitialCondition,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
        }
        if days < 1 {
            return Err(invalid("T", "must be at least 1 day"));
        }
        check_rate(p)?;
        noise.validate()?;
        let null_params = pert.base();
        let peak = find_peak_time(null_params, init, crate::sir::DEFAULT_STEPS_PER_DAY)?;
        if days as f64 >= peak {
            return Err(invalid(
                "T",
                format!("must precede the null peak time {peak:.2}, got {days}"),
            ));
        }
        Ok(TestSpec {
            null_params,
            pert,
            alpha,
            days,
            p,
            noise,
            init,
            steps_per_day: crate::sir::DEFAULT_STEPS_PER_DAY,
        })
    }

    /// Same test in another direction or at another size.
    pub fn with_perturbation(&self, epsilon: f64, omega: f64) -> Result<Self> {
        let pert = Perturbation::new(self.null_params, epsilon, omega)?;
        Ok(TestSpec { pert, ..self.clone() })
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        Ok(TestSpec { noise, ..self.clone() })
    }
}

/// Exact incidences under both hypotheses and σ_t from the null path.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub delta_null: Vec<f64>,
    pub delta_alt: Vec<f64>,
    pub sigma: Vec<f64>,
    pub v_t: f64,
}

pub fn prepare(spec: &TestSpec) -> Result<Prepared> {
    let n = spec.init.n();
    let alt = spec.pert.perturbed()?;
    let null_path = complement_path(&spec.null_params, &spec.init, spec.days, spec.steps_per_day)?;
    let alt_path = complement_path(&alt, &spec.init, spec.days, spec.steps_per_day)?;
    let (delta_null, i_null) = complement_incidence(&null_path, n);
    let (delta_alt, _) = complement_incidence(&alt_path, n);
    let sigma = sigmas(&spec.noise, &i_null, n)?;
    let v_t = delta_null
        .iter()
        .zip(&delta_alt)
        .zip(&sigma)
        .map(|((a, b), s)| (spec.p * (b - a) / s).powi(2))
        .sum();
    Ok(Prepared {
        delta_null,
        delta_alt,
        sigma,
        v_t,
    })
}

fn sigmas(noise: &NoiseModel, infected: &[f64], n: f64) -> Result<Vec<f64>> {
    if let NoiseModel::KnownSequence { sigma_t } = noise {
        if sigma_t.len() < infected.len() {
            return Err(Error::InsufficientData(format!(
                "sigma_t has {} entries, {} needed",
                sigma_t.len(),
                infected.len()
            )));
        }
    }
    infected
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let s = noise.sigma_at(k + 1, n, i);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateVariance { day: k + 1, sigma: s });
            }
            Ok(s)
        })
        .collect()
}

/// V_T = Σ p² (Δ_t^ε − Δ_t^0)² / σ_t².
pub fn v_t(spec: &TestSpec) -> Result<f64> {
    Ok(prepare(spec)?.v_t)
}

/// log η = −√V Φ⁻¹(α) − V/2.
pub fn threshold_from_v(v: f64, alpha: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::IndistinguishableHypotheses);
    }
    Ok(-v.sqrt() * normal::quantile(alpha) - 0.5 * v)
}

pub fn lrt_threshold(spec: &TestSpec) -> Result<f64> {
    threshold_from_v(v_t(spec)?, spec.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrtDecision {
    pub log_lr: f64,
    pub threshold: f64,
    pub reject: bool,
}

fn log_lr(y: &[f64], prep: &Prepared, p: f64) -> f64 {
    y.iter()
        .zip(&prep.delta_null)
        .zip(&prep.delta_alt)
        .zip(&prep.sigma)
        .map(|(((y, d0), d1), s)| {
            let r0 = y - p * d0;
            let r1 = y - p * d1;
            // r0² − r1² factored to avoid cancellation.
            (r0 - r1) * (r0 + r1) / (2.0 * s * s)
        })
        .sum()
}

pub fn lrt_decide(obs: &ObservationSeries, spec: &TestSpec) -> Result<LrtDecision> {
    if obs.len() < spec.days {
        return Err(Error::InsufficientData(format!(
            "{} observations for a {}-day test",
            obs.len(),
            spec.days
        )));
    }
    let prep = prepare(spec)?;
    let threshold = threshold_from_v(prep.v_t, spec.alpha)?;
    let log_lr = log_lr(&obs.values[..spec.days], &prep, spec.p);
    Ok(LrtDecision {
        log_lr,
        threshold,
        reject: log_lr >= threshold,
    })
}

/// 1 − Φ(Φ⁻¹(α) + √V).
pub fn type2_from_v(v: f64, alpha: f64) -> f64 {
    normal::sf(normal::quantile(alpha) + v.max(0.0).sqrt())
}

/// Type II error of the level-α test using integrated incidences.
pub fn type2_exact(spec: &TestSpec) -> Result<f64> {
    let v = v_t(spec)?;
    if !(v > 0.0) {
        return Err(Error::IndistinguishableHypotheses);
    }
    Ok(type2_from_v(v, spec.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    /// Keeps the one-day factors (1 − e^{−δ})/δ.
    First,
    /// Drops them.
    Second,
}

/// (1 − e^{−x})/x.
fn day_factor(x: f64) -> f64 {
    -(-x).exp_m1() / x
}

/// V_T from linearized incidences, with σ_t evaluated at i_t = e^{δt} i0.
pub fn v_t_approx(spec: &TestSpec, variant: Approximation) -> Result<f64> {
    let pert = &spec.pert;
    let de = pert.delta_eps();
    if de <= 0.0 {
        return Err(Error::PerturbationTooLarge {
            epsilon: pert.epsilon(),
            delta: spec.null_params.delta(),
        });
    }
    let (b, d) = (spec.null_params.beta(), spec.null_params.delta());
    let n = spec.init.n();
    let i0 = spec.init.i0();
    let ef = pert.epsilon() * pert.f();
    let infected: Vec<f64> = (1..=spec.days).map(|t| (d * t as f64).exp() * i0).collect();
    let sigma = sigmas(&spec.noise, &infected, n)?;
    Ok((1..=spec.days)
        .map(|t| {
            let t_f = t as f64;
            let bracket = match variant {
                Approximation::First => {
                    pert.beta_eps() * day_factor(de) * (ef * t_f).exp() - b * day_factor(d)
                }
                Approximation::Second => {
                    pert.beta_eps() * (ef * t_f).exp() - b
                }
            };
            let diff = n * i0 * (d * t_f).exp() * bracket;
            (spec.p * diff / sigma[t - 1]).powi(2)
        })
        .sum())
}

pub fn type2_approx(spec: &TestSpec, variant: Approximation) -> Result<f64> {
    Ok(type2_from_v(v_t_approx(spec, variant)?, spec.alpha))
}

/// Case 2 noise at ω = π/4: 1 − Φ(Φ⁻¹(α) + pε√T/(σ√2)).
pub fn case2_closed_form(alpha: f64, p: f64, epsilon: f64, sigma: f64, days: usize) -> f64 {
    normal::sf(normal::quantile(alpha) + p * epsilon * (days as f64).sqrt() / (sigma * SQRT_2))
}

/// Direction on `omegas` maximizing the first approximation.
pub fn worst_case_direction(spec: &TestSpec, omegas: &[f64]) -> Result<(f64, f64)> {
    if omegas.is_empty() {
        return Err(invalid("omegas", "empty grid"));
    }
    let values = omegas
        .iter()
        .map(|&w| {
            let s = spec.with_perturbation(spec.pert.epsilon(), w)?;
            Ok((w, type2_approx(&s, Approximation::First)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values
        .into_iter()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best }))
}

/// Perturbation size at which the Case 2, ω = π/4 test has type II error
/// `target`, keeping the one-day factor (1 − e^{−δ})/δ.
pub fn epsilon_for_power(
    target: f64,
    alpha: f64,
    sigma: f64,
    p: f64,
    days: usize,
    delta: f64,
) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(invalid("target_type2", "must lie in (0, 1)"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    if days < 1 {
        return Err(invalid("T", "must be at least 1 day"));
    }
    if !(delta > 0.0) {
        return Err(Error::DegenerateParameters(format!("delta = {delta}")));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "must be positive"));
    }
    check_rate(p)?;
    if target >= 1.0 - alpha {
        return Err(Error::NoDetectablePerturbation {
            target,
            limit: 1.0 - alpha,
        });
    }
    let z = normal::quantile(1.0 - target) - normal::quantile(alpha);
    Ok(z * sigma * delta * delta.exp() * SQRT_2 / (delta.exp_m1() * p * (days as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaTest {
    pub type2: f64,
    /// Equivalent perturbation size |ε̂|√2.
    pub epsilon: f64,
    /// π/4 for ε̂ > 0, 5π/4 for ε̂ < 0.
    pub omega: f64,
}

/// Test of γ = γ_0 against γ_0 + ε̂ in the (δ, γ) parametrization.
pub fn gamma_test_power(
    epsilon_hat: f64,
    alpha: f64,
    sigma: f64,
    p: f64,
    days: usize,
) -> Result<GammaTest> {
    if epsilon_hat == 0.0 || !epsilon_hat.is_finite() {
        return Err(Error::IndistinguishableHypotheses);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "must be positive"));
    }
    check_rate(p)?;
    let a = epsilon_hat.abs();
    Ok(GammaTest {
        type2: normal::sf(normal::quantile(alpha) + p * a * (days as f64).sqrt() / sigma),
        epsilon: a * SQRT_2,
        omega: if epsilon_hat > 0.0 { FRAC_PI_4 } else { 5.0 * FRAC_PI_4 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Empirical {
    pub rate: f64,
    pub stderr: f64,
    pub replicates: usize,
}

fn rejection_count(prep: &Prepared, spec: &TestSpec, under_alt: bool, replicates: usize, seed: u64) -> Result<usize> {
    let threshold = threshold_from_v(prep.v_t, spec.alpha)?;
    let mean = if under_alt { &prep.delta_alt } else { &prep.delta_null };
    Ok((0..replicates)
        .into_par_iter()
        .filter(|&r| {
            let y: Vec<f64> = mean
                .iter()
                .zip(&prep.sigma)
                .enumerate()
                .map(|(k, (d, s))| spec.p * d + s * normal_draw(seed, r as u64, (k + 1) as u64))
                .collect();
            log_lr(&y, prep, spec.p) >= threshold
        })
        .count())
}

fn binomial(k: usize, n: usize) -> Empirical {
    let rate = k as f64 / n as f64;
    Empirical {
        rate,
        stderr: (rate * (1.0 - rate) / n as f64).sqrt(),
        replicates: n,
    }
}

/// Fraction of data sets simulated under θ_ε that the test fails to
/// reject. Noise uses the null σ_t sequence.
pub fn empirical_type2(spec: &TestSpec, replicates: usize, seed: u64) -> Result<Empirical> {
    if replicates < 100 {
        return Err(invalid("replicates", "at least 100 are required"));
    }
    let prep = prepare(spec)?;
    let rejected = rejection_count(&prep, spec, true, replicates, seed)?;
    Ok(binomial(replicates - rejected, replicates))
}

/// Fraction of data sets simulated under θ_0 that the test rejects.
pub fn empirical_type1(spec: &TestSpec, replicates: usize, seed: u64) -> Result<Empirical> {
    if replicates < 100 {
        return Err(invalid("replicates", "at least 100 are required"));
    }
    let prep = prepare(spec)?;
    let rejected = rejection_count(&prep, spec, false, replicates, seed)?;
    Ok(binomial(rejected, replicates))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerResult {
    pub omega: f64,
    pub epsilon: f64,
    pub sigma: Option<f64>,
    pub v_t: f64,
    pub type2_exact: f64,
    pub type2_approx1: f64,
    pub type2_approx2: f64,
    pub type2_empirical: Option<Empirical>,
}

/// Every type II error estimate for one test; Monte Carlo only when
/// `empirical` gives (replicates, seed).
pub fn power(spec: &TestSpec, empirical: Option<(usize, u64)>) -> Result<PowerResult> {
    let v = v_t(spec)?;
    if !(v > 0.0) {
        return Err(Error::IndistinguishableHypotheses);
    }
    Ok(PowerResult {
        omega: spec.pert.omega(),
        epsilon: spec.pert.epsilon(),
        sigma: spec.noise.sigma(),
        v_t: v,
        type2_exact: type2_from_v(v, spec.alpha),
        type2_approx1: type2_approx(spec, Approximation::First)?,
        type2_approx2: type2_approx(spec, Approximation::Second)?,
        type2_empirical: empirical
            .map(|(reps, seed)| empirical_type2(spec, reps, seed))
            .transpose()?,
    })
}

/// CSV `omega,epsilon,sigma,type2_exact,type2_approx1,type2_approx2,type2_empirical,stderr`.
pub fn write_power_csv<W: Write>(rows: &[PowerResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "omega",
        "epsilon",
        "sigma",
        "type2_exact",
        "type2_approx1",
        "type2_approx2",
        "type2_empirical",
        "stderr",
    ])?;
    for r in rows {
        w.write_record([
            fmt_f64(r.omega),
            fmt_f64(r.epsilon),
            r.sigma.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.type2_exact),
            fmt_f64(r.type2_approx1),
            fmt_f64(r.type2_approx2),
            r.type2_empirical.map(|e| fmt_f64(e.rate)).unwrap_or_default(),
            r.type2_empirical.map(|e| fmt_f64(e.stderr)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{log_likelihood, LikelihoodSpec};
    use crate::perturb::uniform_angles;
    use std::f64::consts::PI;

    fn spec(eps: f64, omega: f64, sigma: f64) -> TestSpec {
        let base = SirParams::new(0.21, 0.07).unwrap();
        TestSpec::new(
            Perturbation::new(base, eps, omega).unwrap(),
            0.05,
            60,
            1.0,
            NoiseModel::Case2 { sigma },
            InitialCondition::from_population(10_000_000).unwrap(),
        )
        .unwrap()
    }

    fn obs_from(values: Vec<f64>, s: &TestSpec) -> ObservationSeries {
        ObservationSeries::from_values(values, s.p, s.noise.clone(), s.init.population()).unwrap()
    }

    #[test]
    fn horizon_must_precede_peak() {
        let base = SirParams::new(0.21, 0.07).unwrap();
        let r = TestSpec::new(
            Perturbation::new(base, 0.03, 0.0).unwrap(),
            0.05,
            130,
            1.0,
            NoiseModel::Case2 { sigma: 0.3 },
            InitialCondition::from_population(10_000_000).unwrap(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn threshold_properties() {
        assert_eq!(threshold_from_v(4.0, 0.5).unwrap(), -2.0);
        let a = threshold_from_v(3.0, 0.01).unwrap();
        let b = threshold_from_v(3.0, 0.05).unwrap();
        let c = threshold_from_v(3.0, 0.2).unwrap();
        assert!(a > b && b > c);
        assert!(matches!(
            threshold_from_v(0.0, 0.05),
            Err(Error::IndistinguishableHypotheses)
        ));
    }

    #[test]
    fn noiseless_substitutions() {
        let s = spec(0.03, 1.0, 0.01);
        let prep = prepare(&s).unwrap();
        let null: Vec<f64> = prep.delta_null.iter().map(|d| s.p * d).collect();
        let alt: Vec<f64> = prep.delta_alt.iter().map(|d| s.p * d).collect();
        let d0 = lrt_decide(&obs_from(null, &s), &s).unwrap();
        let d1 = lrt_decide(&obs_from(alt, &s), &s).unwrap();
        assert!((d0.log_lr + 0.5 * prep.v_t).abs() < 1e-9 * prep.v_t);
        assert!((d1.log_lr - 0.5 * prep.v_t).abs() < 1e-9 * prep.v_t);
        assert!(!d0.reject);
        assert!(d1.reject);
        assert!(lrt_decide(&obs_from(vec![1.0; 10], &s), &s).is_err());
    }

    #[test]
    fn log_lr_equals_likelihood_difference() {
        // Fixed σ_t so both likelihoods share the same variances.
        let s0 = spec(0.03, 2.0, 0.3);
        let prep = prepare(&s0).unwrap();
        let noise = NoiseModel::KnownSequence { sigma_t: prep.sigma.clone() };
        let s = s0.with_noise(noise.clone()).unwrap();
        let y: Vec<f64> = prep
            .delta_null
            .iter()
            .enumerate()
            .map(|(k, d)| d + prep.sigma[k] * normal_draw(5, 0, k as u64 + 1))
            .collect();
        let obs = obs_from(y.clone(), &s);
        let ls = LikelihoodSpec::new(obs.clone(), s.init, noise, false).unwrap();
        let l0 = log_likelihood(s.null_params, None, &ls).unwrap();
        let l1 = log_likelihood(s.pert.perturbed().unwrap(), None, &ls).unwrap();
        let d = lrt_decide(&obs, &s).unwrap();
        assert!(((l1 - l0) - d.log_lr).abs() < 1e-6 * d.log_lr.abs().max(1.0));
        // Expanded form 2pY(Δε − Δ0) − p²(Δε² − Δ0²), over 2σ².
        let expanded: f64 = (0..60)
            .map(|k| {
                let (a, b) = (prep.delta_null[k], prep.delta_alt[k]);
                (2.0 * y[k] * (b - a) - (b * b - a * a)) / (2.0 * prep.sigma[k].powi(2))
            })
            .sum();
        assert!((expanded - d.log_lr).abs() < 1e-6 * d.log_lr.abs().max(1.0));
    }

    #[test]
    fn exact_limits() {
        let tiny = spec(1e-7, FRAC_PI_4, 0.3);
        assert!((type2_exact(&tiny).unwrap() - 0.95).abs() < 1e-3);
        let quiet = spec(0.03, FRAC_PI_4, 1e-4);
        assert!(type2_exact(&quiet).unwrap() < 1e-3);
    }

    #[test]
    fn approx2_matches_case2_closed_form_at_pi_over_4() {
        for (eps, sigma) in [(0.01, 0.3), (0.03, 0.3), (0.03, 0.8), (0.05, 0.2)] {
            let s = spec(eps, FRAC_PI_4, sigma);
            let got = type2_approx(&s, Approximation::Second).unwrap();
            let want = case2_closed_form(0.05, 1.0, eps, sigma, 60);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            let general = normal::sf(
                normal::quantile(0.05)
                    + 1.0 * 1e7 * 1e-7 * eps / SQRT_2
                        * (1..=60)
                            .map(|t| {
                                let e = (0.14 * t as f64).exp();
                                let sd = 1e7 * sigma * e * 1e-7;
                                e * e / (sd * sd)
                            })
                            .sum::<f64>()
                            .sqrt(),
            );
            assert!((got - general).abs() < 1e-12);
        }
    }

    #[test]
    fn approx1_carries_day_factor_at_pi_over_4() {
        let s = spec(0.03, FRAC_PI_4, 0.3);
        let v1 = v_t_approx(&s, Approximation::First).unwrap();
        let v2 = v_t_approx(&s, Approximation::Second).unwrap();
        let f = day_factor(0.14);
        assert!((v1 / v2 - f * f).abs() < 1e-10);
    }

    #[test]
    fn case2_closed_form_invariant_to_population_and_params() {
        let want = case2_closed_form(0.05, 0.6, 0.02, 0.4, 30);
        for n in [10_000u64, 100_000, 1_000_000, 10_000_000] {
            for (b, g) in [(0.21, 0.14), (0.21, 0.07), (0.42, 0.07), (1.68, 0.14)] {
                let base = SirParams::new(b, g).unwrap();
                let s = TestSpec {
                    null_params: base,
                    pert: Perturbation::new(base, 0.02, FRAC_PI_4).unwrap(),
                    alpha: 0.05,
                    days: 30,
                    p: 0.6,
                    noise: NoiseModel::Case2 { sigma: 0.4 },
                    init: InitialCondition::from_population(n).unwrap(),
                    steps_per_day: 50,
                };
                let got = type2_approx(&s, Approximation::Second).unwrap();
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn worst_direction_is_grid_argmax() {
        let s = spec(0.03, 0.0, 0.3);
        let grid = uniform_angles(150);
        let (w, e2) = worst_case_direction(&s, &grid).unwrap();
        for &o in &grid {
            let v = type2_approx(&s.with_perturbation(0.03, o).unwrap(), Approximation::First).unwrap();
            assert!(v <= e2);
        }
        // Near the diagonal, not necessarily on it.
        assert!((w - FRAC_PI_4).abs() < PI / 12.0 || (w - 5.0 * FRAC_PI_4).abs() < PI / 12.0);
        let at = |o: f64| type2_approx(&spec(0.03, o, 0.3), Approximation::First).unwrap();
        assert!(at(3.0 * FRAC_PI_4) < at(FRAC_PI_4));
        assert!((at(FRAC_PI_4) - at(5.0 * FRAC_PI_4)).abs() < 1e-12);
    }

    #[test]
    fn inversion_values_and_round_trip() {
        let a = epsilon_for_power(0.5, 0.05, 0.2, 1.0, 60, 0.14).unwrap();
        let b = epsilon_for_power(0.5, 0.05, 0.2, 1.0, 60, 0.07).unwrap();
        assert!((a - 0.064).abs() < 1e-3, "{a}");
        assert!((b - 0.062).abs() < 1e-3, "{b}");
        let s = spec(a, FRAC_PI_4, 0.2);
        assert!((type2_approx(&s, Approximation::First).unwrap() - 0.5).abs() < 1e-6);
        assert!(matches!(
            epsilon_for_power(0.96, 0.05, 0.2, 1.0, 60, 0.14),
            Err(Error::NoDetectablePerturbation { .. })
        ));
    }

    #[test]
    fn gamma_test_consistency() {
        let g = gamma_test_power(0.01, 0.05, 0.3, 1.0, 60).unwrap();
        let h = gamma_test_power(-0.01, 0.05, 0.3, 1.0, 60).unwrap();
        assert_eq!(g.type2, h.type2);
        assert_eq!(h.omega, 5.0 * FRAC_PI_4);
        let want = case2_closed_form(0.05, 1.0, g.epsilon, 0.3, 60);
        assert!((g.type2 - want).abs() < 1e-14);
        assert!(gamma_test_power(1e3, 0.05, 0.3, 1.0, 60).unwrap().type2 < 1e-12);
        assert!(gamma_test_power(0.0, 0.05, 0.3, 1.0, 60).is_err());
    }

    #[test]
    fn monotonicity_of_exact_error() {
        let e = |eps: f64, sigma: f64| type2_exact(&spec(eps, FRAC_PI_4, sigma)).unwrap();
        let eps: Vec<f64> = (1..=12).map(|k| 0.005 * k as f64).collect();
        assert!(eps.windows(2).all(|w| e(w[1], 0.3) <= e(w[0], 0.3)));
        let sig: Vec<f64> = (1..=20).map(|k| 0.05 * k as f64).collect();
        assert!(sig.windows(2).all(|w| e(0.03, w[1]) >= e(0.03, w[0])));
        let base = spec(0.03, FRAC_PI_4, 0.3);
        let by_t = |t: usize| type2_exact(&TestSpec { days: t, ..base.clone() }).unwrap();
        assert!((10..60).step_by(5).all(|t| by_t(t + 5) <= by_t(t)));
        let by_p = |p: f64| type2_exact(&TestSpec { p, ..base.clone() }).unwrap();
        assert!([0.1, 0.3, 0.5, 0.9].windows(2).all(|w| by_p(w[1]) <= by_p(w[0])));
        assert!((by_p(1e-6) - 0.95).abs() < 1e-3);
    }

    #[test]
    fn type1_calibration() {
        let s = spec(0.03, 2.0, 0.3);
        let e = empirical_type1(&s, 10_000, 17).unwrap();
        assert!((e.rate - 0.05).abs() < 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn near_noiseless_empirical_type2() {
        let s = spec(0.03, 1.0, 1e-6);
        assert_eq!(empirical_type2(&s, 200, 3).unwrap().rate, 0.0);
        assert!(empirical_type2(&s, 50, 3).is_err());
    }

    #[test]
    fn empirical_is_deterministic() {
        let s = spec(0.03, FRAC_PI_4, 0.3);
        let a = empirical_type2(&s, 500, 8).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| empirical_type2(&s, 500, 8).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn power_csv_header() {
        let r = power(&spec(0.03, 0.0, 0.3), Some((100, 1))).unwrap();
        let mut buf = Vec::new();
        write_power_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "omega,epsilon,sigma,type2_exact,type2_approx1,type2_approx2,type2_empirical,stderr\n"
        ));
    }
}
