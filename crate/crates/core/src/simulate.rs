//! Gaussian observation model Y_t = p Δ_t + σ_t Z_t.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmt_f64;
use crate::sir::{incidence, Trajectory};

/// Per-day observation standard deviation σ_t, in persons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// Explicit σ_1..σ_T. Zeros are allowed here for noiseless simulation,
    /// but the likelihood rejects them.
    KnownSequence { sigma_t: Vec<f64> },
    /// σ_t = N σ.
    Case1 { sigma: f64 },
    /// σ_t = N σ i_t.
    Case2 { sigma: f64 },
    /// σ_t = σ √(N i_t), i.e. variance N i_t σ².
    SqrtInfected { sigma: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::KnownSequence { sigma_t } => {
                if let Some(bad) = sigma_t.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
                    return Err(invalid("sigma_t", format!("entries must be >= 0, got {bad}")));
                }
            }
            NoiseModel::Case1 { sigma } => {
                if !(*sigma > 0.0 && *sigma < 1.0) {
                    return Err(invalid("sigma", format!("case1 needs 0 < sigma < 1, got {sigma}")));
                }
            }
            NoiseModel::Case2 { sigma } | NoiseModel::SqrtInfected { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(invalid("sigma", format!("must be positive, got {sigma}")));
                }
            }
        }
        Ok(())
    }

    /// Scale parameter for the parametric kinds.
    pub fn sigma(&self) -> Option<f64> {
        match self {
            NoiseModel::KnownSequence { .. } => None,
            NoiseModel::Case1 { sigma }
            | NoiseModel::Case2 { sigma }
            | NoiseModel::SqrtInfected { sigma } => Some(*sigma),
        }
    }

    /// Same kind with a different scale. Known sequences are returned as is.
    pub fn with_sigma(&self, sigma: f64) -> NoiseModel {
        match self {
            NoiseModel::KnownSequence { .. } => self.clone(),
            NoiseModel::Case1 { .. } => NoiseModel::Case1 { sigma },
            NoiseModel::Case2 { .. } => NoiseModel::Case2 { sigma },
            NoiseModel::SqrtInfected { .. } => NoiseModel::SqrtInfected { sigma },
        }
    }

    /// Whether σ_t depends on the trajectory's i_t.
    pub fn depends_on_infected(&self) -> bool {
        matches!(self, NoiseModel::Case2 { .. } | NoiseModel::SqrtInfected { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseModel::KnownSequence { .. } => "known_sequence",
            NoiseModel::Case1 { .. } => "case1",
            NoiseModel::Case2 { .. } => "case2",
            NoiseModel::SqrtInfected { .. } => "sqrt_infected",
        }
    }

    /// σ_t for a single day given the infected proportion that day.
    pub(crate) fn sigma_at(&self, day: usize, n: f64, i: f64) -> f64 {
        match self {
            NoiseModel::KnownSequence { sigma_t } => sigma_t[day - 1],
            NoiseModel::Case1 { sigma } => n * sigma,
            NoiseModel::Case2 { sigma } => n * sigma * i,
            NoiseModel::SqrtInfected { sigma } => sigma * (n * i).sqrt(),
        }
    }
}

/// σ_1..σ_T evaluated along `traj`.
pub fn sigma_sequence(noise: &NoiseModel, traj: &Trajectory, days: usize) -> Result<Vec<f64>> {
    noise.validate()?;
    if days > traj.horizon() {
        return Err(Error::InsufficientData(format!(
            "{days} days requested, trajectory has {}",
            traj.horizon()
        )));
    }
    if let NoiseModel::KnownSequence { sigma_t } = noise {
        if sigma_t.len() < days {
            return Err(Error::InsufficientData(format!(
                "sigma_t has {} entries, {days} needed",
                sigma_t.len()
            )));
        }
    }
    let n = traj.init().n();
    (1..=days)
        .map(|t| {
            let i = traj.i()[t];
            if noise.depends_on_infected() && !(i > 0.0) {
                return Err(Error::DegenerateVariance { day: t, sigma: 0.0 });
            }
            Ok(noise.sigma_at(t, n, i))
        })
        .collect()
}

/// Standard normal draw for (seed, replicate, day), independent of the
/// order in which draws are requested.
pub fn normal_draw(seed: u64, replicate: u64, day: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    // 256 words per day is far more than a ziggurat draw ever consumes.
    rng.set_word_pos(u128::from(day) << 8);
    StandardNormal.sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub values: Vec<f64>,
    pub reporting_rate: f64,
    pub noise: NoiseModel,
    pub population: u64,
    pub seed: u64,
    pub replicate: u64,
}

impl ObservationSeries {
    /// Wraps observed counts; `seed` and `replicate` are recorded as 0.
    pub fn from_values(
        values: Vec<f64>,
        reporting_rate: f64,
        noise: NoiseModel,
        population: u64,
    ) -> Result<Self> {
        check_rate(reporting_rate)?;
        if values.is_empty() {
            return Err(Error::InsufficientData("no observations".into()));
        }
        Ok(ObservationSeries {
            values,
            reporting_rate,
            noise,
            population,
            seed: 0,
            replicate: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "y"])?;
        for (k, y) in self.values.iter().enumerate() {
            w.write_record([(k + 1).to_string(), fmt_f64(*y)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON sidecar: p, noise kind, σ, N and seed.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "reporting_rate": self.reporting_rate,
            "noise_kind": self.noise.kind_name(),
            "sigma": self.noise.sigma(),
            "population": self.population,
            "seed": self.seed,
            "replicate": self.replicate,
        })
    }
}

pub(crate) fn check_rate(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("p", format!("reporting rate must lie in (0, 1], got {p}")));
    }
    Ok(())
}

/// Y_t = p Δ_t + σ_t Z_t for t = 1..=days, replicate 0.
pub fn observe(
    traj: &Trajectory,
    noise: &NoiseModel,
    p: f64,
    days: usize,
    seed: u64,
) -> Result<ObservationSeries> {
    observe_replicate(traj, noise, p, days, seed, 0)
}

pub fn observe_replicate(
    traj: &Trajectory,
    noise: &NoiseModel,
    p: f64,
    days: usize,
    seed: u64,
    replicate: u64,
) -> Result<ObservationSeries> {
    check_rate(p)?;
    if days < 1 {
        return Err(invalid("T", "must be at least 1 day"));
    }
    let sigma = sigma_sequence(noise, traj, days)?;
    let delta = incidence(traj)?;
    Ok(observe_with(delta.values(), &sigma, p, seed, replicate, noise, traj.init().population()))
}

/// Simulation from precomputed means and standard deviations.
pub(crate) fn observe_with(
    delta: &[f64],
    sigma: &[f64],
    p: f64,
    seed: u64,
    replicate: u64,
    noise: &NoiseModel,
    population: u64,
) -> ObservationSeries {
    let values = sigma
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let t = k + 1;
            p * delta[k] + s * normal_draw(seed, replicate, t as u64)
        })
        .collect();
    ObservationSeries {
        values,
        reporting_rate: p,
        noise: noise.clone(),
        population,
        seed,
        replicate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal;
    use crate::sir::{integrate_exact, InitialCondition, SirParams};
    use rayon::prelude::*;

    fn traj() -> Trajectory {
        integrate_exact(
            SirParams::new(0.21, 0.07).unwrap(),
            InitialCondition::from_population(10_000_000).unwrap(),
            130,
            50,
        )
        .unwrap()
    }

    #[test]
    fn case1_is_constant() {
        let s = sigma_sequence(&NoiseModel::Case1 { sigma: 0.3 }, &traj(), 60).unwrap();
        assert!(s.iter().all(|&v| (v - 3e6).abs() < 1e-6));
    }

    #[test]
    fn known_sequence_illustration() {
        let sd = (100.0 * 1e7_f64).sqrt();
        assert!((sd - 31622.776).abs() < 1e-3);
        let noise = NoiseModel::KnownSequence { sigma_t: vec![sd; 120] };
        let s = sigma_sequence(&noise, &traj(), 120).unwrap();
        assert_eq!(s, vec![sd; 120]);
        assert!(sigma_sequence(&noise, &traj(), 125).is_err());
    }

    #[test]
    fn case2_tracks_infected() {
        let tr = traj();
        let s = sigma_sequence(&NoiseModel::Case2 { sigma: 0.2 }, &tr, 60).unwrap();
        assert_eq!(s[59], 1e7 * 0.2 * tr.i()[60]);
        let lin = 1e7 * 0.2 * (8.4_f64).exp() / 1e7;
        assert!((s[59] - lin).abs() / lin < 0.05);
    }

    #[test]
    fn case2_rejects_zero_infected() {
        let tr = integrate_exact(
            SirParams::new(0.21, 0.07).unwrap(),
            InitialCondition::new(1.0, 0.0, 100).unwrap(),
            10,
            5,
        )
        .unwrap();
        assert!(matches!(
            sigma_sequence(&NoiseModel::Case2 { sigma: 0.2 }, &tr, 5),
            Err(Error::DegenerateVariance { day: 1, .. })
        ));
    }

    #[test]
    fn noiseless_limit() {
        let tr = traj();
        let noise = NoiseModel::KnownSequence { sigma_t: vec![0.0; 100] };
        let obs = observe(&tr, &noise, 0.5, 100, 9).unwrap();
        let d = incidence(&tr).unwrap();
        for t in 1..=100 {
            assert_eq!(obs.values[t - 1], 0.5 * d.day(t));
        }
    }

    #[test]
    fn horizon_and_rate_checks() {
        let tr = traj();
        let noise = NoiseModel::Case1 { sigma: 0.1 };
        assert!(matches!(
            observe(&tr, &noise, 1.0, 131, 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(observe(&tr, &noise, 0.0, 10, 1).is_err());
        assert!(observe(&tr, &noise, 1.5, 10, 1).is_err());
    }

    #[test]
    fn draws_are_order_independent() {
        let a: Vec<f64> = (0..50).map(|r| normal_draw(7, r, 3)).collect();
        let b: Vec<f64> = (0..50u32)
            .into_par_iter()
            .rev()
            .map(|r| normal_draw(7, u64::from(r), 3))
            .collect();
        let mut b = b;
        b.reverse();
        assert_eq!(a, b);
        assert_ne!(normal_draw(7, 0, 3), normal_draw(7, 0, 4));
        assert_ne!(normal_draw(7, 0, 3), normal_draw(7, 1, 3));
        assert_ne!(normal_draw(7, 0, 3), normal_draw(8, 0, 3));
    }

    #[test]
    fn monte_carlo_moments() {
        let tr = traj();
        let noise = NoiseModel::Case2 { sigma: 0.2 };
        let t = 40;
        let reps = 10_000u64;
        let ys: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| observe_replicate(&tr, &noise, 0.8, t, 11, r).unwrap().values[t - 1])
            .collect();
        let mean = ys.iter().sum::<f64>() / reps as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let mu = 0.8 * incidence(&tr).unwrap().day(t);
        let sd = 1e7 * 0.2 * tr.i()[t];
        let se = sd / (reps as f64).sqrt();
        assert!((mean - mu).abs() < 4.0 * se, "mean {mean} vs {mu}");
        assert!((var / (sd * sd) - 1.0).abs() < 0.1);
    }

    #[test]
    fn standardized_residuals_pass_ks() {
        let tr = traj();
        let noise = NoiseModel::Case1 { sigma: 0.01 };
        let d = incidence(&tr).unwrap();
        let mut z: Vec<f64> = (0..100u64)
            .flat_map(|r| {
                let obs = observe_replicate(&tr, &noise, 1.0, 100, 2024, r).unwrap();
                let d = &d;
                obs.values
                    .into_iter()
                    .enumerate()
                    .map(move |(k, y)| (y - d.values()[k]) / 1e5)
            })
            .collect();
        z.sort_by(f64::total_cmp);
        let n = z.len() as f64;
        let stat = z
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = normal::cdf(x);
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic 1% critical value of the one-sample KS statistic.
        assert!(stat < 1.628 / n.sqrt(), "D = {stat}");
    }

    #[test]
    fn noise_model_json() {
        let m: NoiseModel = serde_json::from_str(r#"{"kind":"case2","sigma":0.3}"#).unwrap();
        assert_eq!(m, NoiseModel::Case2 { sigma: 0.3 });
        assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"case2","sigma":0.3,"x":1}"#).is_err());
        assert!(NoiseModel::Case1 { sigma: 1.2 }.validate().is_err());
    }

    #[test]
    fn csv_and_sidecar() {
        let obs = observe(&traj(), &NoiseModel::Case1 { sigma: 0.1 }, 1.0, 3, 5).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,y\n1,"));
        assert_eq!(obs.sidecar()["noise_kind"], "case1");
        assert_eq!(obs.sidecar()["seed"], 5);
    }
}
