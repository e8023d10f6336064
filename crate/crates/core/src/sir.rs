//! SIR parameters, trajectories and epidemic metrics.
//!
//! The exact system is integrated with classical fixed-step RK4 and sampled
//! at whole days. The linearized system (s held at 1 inside the infection
//! term) has a closed form and is evaluated directly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmt_f64;

pub const DEFAULT_STEPS_PER_DAY: usize = 50;

/// Infectious head-count below which an epidemic counts as over.
pub const END_OF_EPIDEMIC_COUNT: f64 = 10.0;

/// Transmission and recovery rates, per day. Always satisfies
/// `beta > gamma > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct SirParams {
    beta: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    beta: f64,
    gamma: f64,
}

impl TryFrom<RawParams> for SirParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        SirParams::new(raw.beta, raw.gamma)
    }
}

impl From<SirParams> for RawParams {
    fn from(p: SirParams) -> Self {
        RawParams {
            beta: p.beta,
            gamma: p.gamma,
        }
    }
}

impl SirParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(invalid("beta", format!("must be positive, got {beta}")));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid("gamma", format!("must be positive, got {gamma}")));
        }
        if beta - gamma <= 0.0 {
            return Err(Error::DegenerateParameters(format!(
                "delta = beta - gamma = {} must be positive (R0 > 1)",
                beta - gamma
            )));
        }
        Ok(SirParams { beta, gamma })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Early exponential growth rate, beta - gamma.
    pub fn delta(&self) -> f64 {
        self.beta - self.gamma
    }

    pub fn r0(&self) -> f64 {
        self.beta / self.gamma
    }
}

/// Initial proportions and population size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInit", into = "RawInit")]
pub struct InitialCondition {
    s0: f64,
    i0: f64,
    population: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    population: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    i0: Option<f64>,
}

impl TryFrom<RawInit> for InitialCondition {
    type Error = Error;
    fn try_from(raw: RawInit) -> Result<Self> {
        match (raw.s0, raw.i0) {
            (None, None) => InitialCondition::from_population(raw.population),
            (Some(s0), Some(i0)) => InitialCondition::new(s0, i0, raw.population),
            _ => Err(invalid("init", "give both s0 and i0, or neither")),
        }
    }
}

impl From<InitialCondition> for RawInit {
    fn from(c: InitialCondition) -> Self {
        RawInit {
            population: c.population,
            s0: Some(c.s0),
            i0: Some(c.i0),
        }
    }
}

impl InitialCondition {
    pub fn new(s0: f64, i0: f64, population: u64) -> Result<Self> {
        if population == 0 {
            return Err(invalid("population", "must be positive"));
        }
        if !(0.0..=1.0).contains(&s0) {
            return Err(invalid("s0", format!("must lie in [0, 1], got {s0}")));
        }
        if !(0.0..=1.0).contains(&i0) {
            return Err(invalid("i0", format!("must lie in [0, 1], got {i0}")));
        }
        if s0 + i0 > 1.0 + 1e-15 {
            return Err(invalid("s0 + i0", format!("exceeds 1: {}", s0 + i0)));
        }
        Ok(InitialCondition { s0, i0, population })
    }

    /// One initial infection: s0 = 1 - 1/N, i0 = 1/N.
    pub fn from_population(population: u64) -> Result<Self> {
        if population == 0 {
            return Err(invalid("population", "must be positive"));
        }
        let n = population as f64;
        InitialCondition::new(1.0 - 1.0 / n, 1.0 / n, population)
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn i0(&self) -> f64 {
        self.i0
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn n(&self) -> f64 {
        self.population as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Exact,
    Linearized,
}

/// Day-sampled (s, i) path. `r` is never stored.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    s: Vec<f64>,
    i: Vec<f64>,
    params: SirParams,
    init: InitialCondition,
    kind: TrajectoryKind,
    steps_per_day: usize,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn s(&self) -> &[f64] {
        &self.s
    }
    pub fn i(&self) -> &[f64] {
        &self.i
    }
    pub fn r(&self, day: usize) -> f64 {
        1.0 - self.s[day] - self.i[day]
    }
    pub fn params(&self) -> SirParams {
        self.params
    }
    pub fn init(&self) -> InitialCondition {
        self.init
    }
    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }
    /// Last sampled day.
    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }
    /// Substeps per day (exact trajectories only; 0 for linearized).
    pub fn steps_per_day(&self) -> usize {
        self.steps_per_day
    }

    /// State at an arbitrary time in `[0, horizon]`.
    ///
    /// Exact trajectories are re-integrated from the preceding day sample on
    /// the same substep grid, finishing with one partial step, so sampled
    /// days reproduce bit-for-bit.
    pub fn state_at(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=self.horizon() as f64).contains(&t) {
            return Err(Error::HorizonTooShort {
                reason: format!("t = {t} outside [0, {}]", self.horizon()),
                required: t.ceil().max(0.0) as usize,
            });
        }
        match self.kind {
            TrajectoryKind::Linearized => Ok(linearized_state(&self.params, &self.init, t)),
            TrajectoryKind::Exact => {
                let day = (t.floor() as usize).min(self.horizon());
                let h = 1.0 / self.steps_per_day as f64;
                let mut y = [self.s[day], self.i[day]];
                let mut elapsed = day as f64;
                while elapsed + h <= t {
                    y = rk4_step(|x| sir_rhs(&self.params, x), &y, h);
                    elapsed = day as f64 + ((elapsed - day as f64) / h).round() * h + h;
                }
                let rest = t - elapsed;
                if rest > 0.0 {
                    y = rk4_step(|x| sir_rhs(&self.params, x), &y, rest);
                }
                Ok((y[0], y[1]))
            }
        }
    }

    /// CSV with header `t,s,i,r`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "s", "i", "r"])?;
        for d in 0..self.times.len() {
            w.write_record([
                d.to_string(),
                fmt_f64(self.s[d]),
                fmt_f64(self.i[d]),
                fmt_f64(self.r(d)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Expected new infections per day, Δ_t = N (s_{t-1} - s_t), t = 1..=T.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    values: Vec<f64>,
}

impl Incidence {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    /// Δ_t for 1-based day `t`.
    pub fn day(&self, t: usize) -> f64 {
        self.values[t - 1]
    }

    /// CSV with header `t,delta`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "delta"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([(k + 1).to_string(), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicSummary {
    pub peak_time: f64,
    pub attack_fraction_at_peak_plus_10: f64,
    pub duration: usize,
}

#[inline]
pub(crate) fn sir_rhs(p: &SirParams, y: &[f64; 2]) -> [f64; 2] {
    let inf = p.beta * y[0] * y[1];
    [-inf, inf - p.gamma * y[1]]
}

/// One classical RK4 step for an autonomous system.
#[inline]
pub(crate) fn rk4_step<const D: usize>(
    f: impl Fn(&[f64; D]) -> [f64; D],
    y: &[f64; D],
    h: f64,
) -> [f64; D] {
    let k1 = f(y);
    let mut tmp = [0.0; D];
    for j in 0..D {
        tmp[j] = y[j] + 0.5 * h * k1[j];
    }
    let k2 = f(&tmp);
    for j in 0..D {
        tmp[j] = y[j] + 0.5 * h * k2[j];
    }
    let k3 = f(&tmp);
    for j in 0..D {
        tmp[j] = y[j] + h * k3[j];
    }
    let k4 = f(&tmp);
    let mut out = [0.0; D];
    for j in 0..D {
        out[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    out
}

/// Integrates a system on the fixed substep grid and hands each whole-day
/// state to `on_day`. Fails on the first non-finite state.
pub(crate) fn integrate_days<const D: usize>(
    f: impl Fn(&[f64; D]) -> [f64; D],
    y0: [f64; D],
    horizon: usize,
    steps_per_day: usize,
    mut on_day: impl FnMut(usize, &[f64; D]),
) -> Result<()> {
    let h = 1.0 / steps_per_day as f64;
    let mut y = y0;
    on_day(0, &y);
    for day in 1..=horizon {
        for k in 0..steps_per_day {
            y = rk4_step(&f, &y, h);
            if y.iter().any(|v| !v.is_finite()) {
                let step = (day - 1) * steps_per_day + k + 1;
                return Err(Error::IntegrationFailure {
                    step,
                    time: step as f64 * h,
                });
            }
        }
        on_day(day, &y);
    }
    Ok(())
}

/// Day-sampled (u, i) with u = 1 − s. Differences between nearby
/// trajectories and early incidences keep full relative precision in u.
pub(crate) fn complement_path(
    params: &SirParams,
    init: &InitialCondition,
    horizon: usize,
    steps_per_day: usize,
) -> Result<Vec<[f64; 2]>> {
    if horizon < 1 {
        return Err(invalid("horizon", "must be at least 1 day"));
    }
    if steps_per_day < 1 {
        return Err(invalid("steps_per_day", "must be at least 1"));
    }
    let (b, g) = (params.beta(), params.gamma());
    let mut out = Vec::with_capacity(horizon + 1);
    integrate_days(
        |y: &[f64; 2]| {
            let inf = b * (1.0 - y[0]) * y[1];
            [inf, inf - g * y[1]]
        },
        [1.0 - init.s0(), init.i0()],
        horizon,
        steps_per_day,
        |_, y| out.push(*y),
    )?;
    Ok(out)
}

/// Δ_1..Δ_T and i_1..i_T from a complement path.
pub(crate) fn complement_incidence(path: &[[f64; 2]], n: f64) -> (Vec<f64>, Vec<f64>) {
    path.windows(2)
        .map(|w| (n * (w[1][0] - w[0][0]), w[1][1]))
        .unzip()
}

fn check_grid(horizon: usize, steps_per_day: usize) -> Result<()> {
    if horizon < 1 {
        return Err(invalid("horizon", "must be at least 1 day"));
    }
    if steps_per_day < 1 {
        return Err(invalid("steps_per_day", "must be at least 1"));
    }
    Ok(())
}

/// RK4 integration of the nonlinear SIR system, sampled at days `0..=horizon`.
pub fn integrate_exact(
    params: SirParams,
    init: InitialCondition,
    horizon: usize,
    steps_per_day: usize,
) -> Result<Trajectory> {
    check_grid(horizon, steps_per_day)?;
    let mut s = Vec::with_capacity(horizon + 1);
    let mut i = Vec::with_capacity(horizon + 1);
    integrate_days(
        |y| sir_rhs(&params, y),
        [init.s0, init.i0],
        horizon,
        steps_per_day,
        |_, y| {
            s.push(y[0]);
            i.push(y[1]);
        },
    )?;
    Ok(Trajectory {
        times: (0..=horizon).map(|d| d as f64).collect(),
        s,
        i,
        params,
        init,
        kind: TrajectoryKind::Exact,
        steps_per_day,
    })
}

pub(crate) fn linearized_state(p: &SirParams, init: &InitialCondition, t: f64) -> (f64, f64) {
    let d = p.delta();
    let growth = (d * t).exp();
    (
        init.s0 - p.beta / d * (d * t).exp_m1() * init.i0,
        growth * init.i0,
    )
}

/// Closed-form solution of ds/dt = -βi, di/dt = δi at days `0..=horizon`.
pub fn integrate_linearized(
    params: SirParams,
    init: InitialCondition,
    horizon: usize,
) -> Result<Trajectory> {
    if params.delta() == 0.0 {
        return Err(Error::DegenerateParameters("delta = 0".into()));
    }
    if horizon < 1 {
        return Err(invalid("horizon", "must be at least 1 day"));
    }
    let (s, i) = (0..=horizon)
        .map(|d| linearized_state(&params, &init, d as f64))
        .unzip();
    Ok(Trajectory {
        times: (0..=horizon).map(|d| d as f64).collect(),
        s,
        i,
        params,
        init,
        kind: TrajectoryKind::Linearized,
        steps_per_day: 0,
    })
}

pub fn incidence(traj: &Trajectory) -> Result<Incidence> {
    if traj.s.len() < 2 {
        return Err(Error::InsufficientData(
            "incidence needs at least two day samples".into(),
        ));
    }
    let n = traj.init.n();
    Ok(Incidence {
        values: traj.s.windows(2).map(|w| n * (w[0] - w[1])).collect(),
    })
}

/// Time of maximal infected proportion.
///
/// Located on the substep grid, then refined by the vertex of the parabola
/// through the three bracketing substeps.
pub fn peak_time(traj: &Trajectory) -> Result<f64> {
    if traj.kind != TrajectoryKind::Exact {
        return Err(invalid("trajectory", "peak time needs an exact trajectory"));
    }
    let horizon = traj.horizon();
    let (day, _) = traj
        .i
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (d, &v)| {
            if v > best.1 {
                (d, v)
            } else {
                best
            }
        });
    if day == horizon {
        return Err(Error::HorizonTooShort {
            reason: "infected proportion still rising at the horizon".into(),
            required: 2 * horizon.max(1),
        });
    }
    if day == 0 && traj.i.get(1).is_none_or(|&v| v <= traj.i[0]) {
        if traj.i[0] == 0.0 || traj.params.delta() <= 0.0 {
            return Err(Error::NoEpidemic);
        }
        if traj.i[0] == traj.i[1] {
            return Err(Error::NoEpidemic);
        }
    }

    let start = day.saturating_sub(1);
    let spd = traj.steps_per_day;
    let h = 1.0 / spd as f64;
    let mut fine = Vec::with_capacity(2 * spd + 1);
    let mut y = [traj.s[start], traj.i[start]];
    fine.push(y[1]);
    let steps = (day + 1 - start) * spd;
    for _ in 0..steps {
        y = rk4_step(|x| sir_rhs(&traj.params, x), &y, h);
        fine.push(y[1]);
    }
    let j = fine
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
        .0;
    let base = start as f64 + j as f64 * h;
    if j == 0 || j + 1 == fine.len() {
        return Ok(base);
    }
    let (a, b, c) = (fine[j - 1], fine[j], fine[j + 1]);
    let curv = a - 2.0 * b + c;
    if curv >= 0.0 {
        return Ok(base);
    }
    Ok(base + 0.5 * h * (a - c) / curv)
}

/// Peak time, attack fraction ten days past the peak, and duration.
pub fn epidemic_summary(traj: &Trajectory) -> Result<EpidemicSummary> {
    let peak = peak_time(traj)?;
    let horizon = traj.horizon();
    let ten_after = peak + 10.0;
    if ten_after > horizon as f64 {
        return Err(Error::HorizonTooShort {
            reason: "trajectory ends before peak + 10 days".into(),
            required: ten_after.ceil() as usize,
        });
    }
    let (s_after, _) = traj.state_at(ten_after)?;
    let n = traj.init.n();
    let first = peak.floor() as usize + 1;
    let duration = (first..=horizon).find(|&d| n * traj.i[d] < END_OF_EPIDEMIC_COUNT);
    let Some(duration) = duration else {
        return Err(Error::HorizonTooShort {
            reason: format!("fewer than {END_OF_EPIDEMIC_COUNT} infectious never reached"),
            required: 2 * horizon,
        });
    };
    Ok(EpidemicSummary {
        peak_time: peak,
        attack_fraction_at_peak_plus_10: 1.0 - s_after,
        duration,
    })
}

/// Integrates with a doubling horizon until the summary is computable.
pub fn summarize_epidemic(
    params: SirParams,
    init: InitialCondition,
    steps_per_day: usize,
) -> Result<EpidemicSummary> {
    let mut horizon = 256;
    loop {
        let traj = integrate_exact(params, init, horizon, steps_per_day)?;
        match epidemic_summary(&traj) {
            Err(Error::HorizonTooShort { required, .. }) if horizon < 1 << 20 => {
                horizon = required.max(2 * horizon);
            }
            other => return other,
        }
    }
}

/// Integrates with a doubling horizon until the peak is bracketed.
pub fn find_peak_time(
    params: SirParams,
    init: InitialCondition,
    steps_per_day: usize,
) -> Result<f64> {
    let mut horizon = 128;
    loop {
        let traj = integrate_exact(params, init, horizon, steps_per_day)?;
        match peak_time(&traj) {
            Err(Error::HorizonTooShort { .. }) if horizon < 1 << 20 => horizon *= 2,
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> (SirParams, InitialCondition) {
        (
            SirParams::new(0.21, 0.07).unwrap(),
            InitialCondition::from_population(10_000_000).unwrap(),
        )
    }

    #[test]
    fn params_reject_non_growing() {
        assert!(SirParams::new(0.1, 0.1).is_err());
        assert!(SirParams::new(0.07, 0.21).is_err());
        assert!(SirParams::new(-0.1, 0.05).is_err());
        let p = SirParams::new(0.21, 0.07).unwrap();
        assert!((p.delta() - 0.14).abs() < 1e-15);
        assert!((p.r0() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn initial_condition_default() {
        let c = InitialCondition::from_population(10_000).unwrap();
        assert_eq!(c.i0(), 1e-4);
        assert_eq!(c.s0(), 1.0 - 1e-4);
        assert!(InitialCondition::new(0.7, 0.4, 10).is_err());
        assert!(InitialCondition::from_population(0).is_err());
    }

    #[test]
    fn disease_free_equilibrium() {
        let (p, _) = base();
        let init = InitialCondition::new(0.9, 0.0, 1000).unwrap();
        let tr = integrate_exact(p, init, 30, 10).unwrap();
        assert!(tr.s().iter().all(|&s| s == 0.9));
        assert!(tr.i().iter().all(|&i| i == 0.0));
        assert!(incidence(&tr).unwrap().values().iter().all(|&d| d == 0.0));
        assert!(matches!(peak_time(&tr), Err(Error::NoEpidemic)));
    }

    #[test]
    fn step_refinement_oracle() {
        let (p, c) = base();
        let coarse = integrate_exact(p, c, 200, 10).unwrap();
        let fine = integrate_exact(p, c, 200, 100).unwrap();
        for d in 0..=200 {
            assert!((coarse.s()[d] - fine.s()[d]).abs() < 1e-6);
            assert!((coarse.i()[d] - fine.i()[d]).abs() < 1e-6);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        // Successive halvings of the substep should shrink the error ~16x.
        let (p, c) = base();
        let runs: Vec<_> = [5, 10, 20]
            .iter()
            .map(|&spd| integrate_exact(p, c, 150, spd).unwrap())
            .collect();
        let diff = |a: &Trajectory, b: &Trajectory| {
            (0..=150)
                .map(|d| (a.i()[d] - b.i()[d]).abs().max((a.s()[d] - b.s()[d]).abs()))
                .fold(0.0, f64::max)
        };
        let ratio = diff(&runs[0], &runs[1]) / diff(&runs[1], &runs[2]);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn conservation_and_monotonicity() {
        let (p, c) = base();
        let tr = integrate_exact(p, c, 400, DEFAULT_STEPS_PER_DAY).unwrap();
        // Removed fraction integrated separately as an independent check.
        let mut r_track = Vec::new();
        integrate_days(
            |y: &[f64; 3]| {
                let inf = p.beta() * y[0] * y[1];
                [-inf, inf - p.gamma() * y[1], p.gamma() * y[1]]
            },
            [c.s0(), c.i0(), 0.0],
            400,
            DEFAULT_STEPS_PER_DAY,
            |_, y| r_track.push(y[2]),
        )
        .unwrap();
        for d in 0..=400 {
            assert!((tr.s()[d] + tr.i()[d] + r_track[d] - 1.0).abs() < 1e-9);
            assert!((tr.r(d) - r_track[d]).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&tr.s()[d]));
            assert!((0.0..=1.0).contains(&tr.i()[d]));
            if d > 0 {
                assert!(tr.r(d) >= tr.r(d - 1) - 1e-15);
                if tr.i()[d - 1] > 1e-15 {
                    assert!(tr.s()[d] < tr.s()[d - 1]);
                }
            }
        }
    }

    #[test]
    fn linearized_closed_form() {
        let (p, c) = base();
        let tr = integrate_linearized(p, c, 100).unwrap();
        assert_eq!(tr.s()[0], c.s0());
        assert_eq!(tr.i()[0], c.i0());
        let want = (0.14_f64 * 60.0).exp() / 1e7;
        // 0.21 - 0.07 is one ulp away from 0.14.
        assert!((tr.i()[60] - want).abs() <= 1e-13 * want);
        let s60 = c.s0() - (0.21 / 0.14) * ((0.14_f64 * 60.0).exp() - 1.0) * 1e-7;
        assert!((tr.s()[60] - s60).abs() < 1e-15);
    }

    #[test]
    fn linearized_incidence_identity() {
        let (p, c) = base();
        let tr = integrate_linearized(p, c, 80).unwrap();
        let inc = incidence(&tr).unwrap();
        let d = p.delta();
        for t in 1..=80 {
            let want = p.beta() * ((-d).exp() - 1.0) / (-d) * c.n() * c.i0() * (d * t as f64).exp();
            // The day difference of s cancels in its leading digits.
            let tol = 8.0 * f64::EPSILON * c.n();
            assert!((inc.day(t) - want).abs() < tol, "t={t}");
        }
    }

    #[test]
    fn linearized_tracks_exact_early() {
        let (p, c) = base();
        let ex = integrate_exact(p, c, 60, 200).unwrap();
        let li = integrate_linearized(p, c, 60).unwrap();
        let rel: Vec<f64> = (1..=60)
            .map(|t| (li.i()[t] - ex.i()[t]).abs() / ex.i()[t])
            .collect();
        assert!(rel[59] < 0.05);
        assert!(rel[59] > rel[29] && rel[29] > rel[9]);
    }

    #[test]
    fn telescoping_incidence() {
        let (p, c) = base();
        let tr = integrate_exact(p, c, 600, DEFAULT_STEPS_PER_DAY).unwrap();
        let inc = incidence(&tr).unwrap();
        assert!(inc.values().iter().all(|&v| v >= 0.0));
        let total: f64 = inc.values().iter().sum();
        let want = c.n() * (c.s0() - tr.s()[600]);
        assert!((total - want).abs() < 1e-6 * want);
    }

    #[test]
    fn incidence_needs_two_samples() {
        let (p, c) = base();
        let mut tr = integrate_exact(p, c, 1, 1).unwrap();
        tr.s.truncate(1);
        assert!(matches!(incidence(&tr), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn peak_time_and_threshold() {
        let (p, c) = base();
        let tr = integrate_exact(p, c, 130, DEFAULT_STEPS_PER_DAY).unwrap();
        let t = peak_time(&tr).unwrap();
        assert!((t - 120.0).abs() < 2.0, "{t}");
        let (s, _) = tr.state_at(t).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-4);
        let short = integrate_exact(p, c, 100, 10).unwrap();
        assert!(matches!(
            peak_time(&short),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn state_at_reproduces_samples() {
        let (p, c) = base();
        let tr = integrate_exact(p, c, 50, 7).unwrap();
        for d in [0usize, 3, 17, 49] {
            let (s, i) = tr.state_at(d as f64 + 1.0).unwrap();
            assert_eq!(s, tr.s()[d + 1]);
            assert_eq!(i, tr.i()[d + 1]);
        }
    }

    #[test]
    fn summary_of_unperturbed_is_stable() {
        let (p, c) = base();
        let a = summarize_epidemic(p, c, DEFAULT_STEPS_PER_DAY).unwrap();
        let b = summarize_epidemic(p, c, DEFAULT_STEPS_PER_DAY).unwrap();
        assert_eq!(a, b);
        assert!(a.duration as f64 >= a.peak_time);
    }

    #[test]
    fn csv_headers() {
        let (p, c) = base();
        let tr = integrate_exact(p, c, 3, 5).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,s,i,r\n0,"));
        let mut buf = Vec::new();
        incidence(&tr).unwrap().write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,delta\n1,"));
    }
}
