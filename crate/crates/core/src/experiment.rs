//! Declarative experiment configs, their dispatch, and the output manifest.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cases::{self, DateRange};
use crate::error::{Error, Result};
use crate::inference::{self, EnsembleSpec, FitOptions};
use crate::perturb::{self, Perturbation};
use crate::simulate::{self, NoiseModel};
use crate::sir::{self, InitialCondition, SirParams, DEFAULT_STEPS_PER_DAY};
use crate::testing::{self, TestSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    SweepDirections,
    ErrorFit,
    Fit,
    Ensemble,
    Power,
    PowerEmpirical,
    EpsilonInvert,
    NycTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: Option<SirParams>,
    #[serde(default)]
    pub init: Option<InitialCondition>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub steps_per_day: Option<usize>,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
    #[serde(default)]
    pub test: Option<TestBlock>,
    #[serde(default)]
    pub ensemble: Option<EnsembleBlock>,
    #[serde(default)]
    pub fit: Option<FitBlock>,
    #[serde(default)]
    pub data: Option<DataBlock>,
    #[serde(default)]
    pub inversion: Option<InversionBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub days: usize,
    pub p: f64,
    #[serde(default)]
    pub linearized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub epsilon: f64,
    #[serde(default = "default_angles")]
    pub angles: usize,
    #[serde(default)]
    pub horizon: Option<usize>,
}

fn default_angles() -> usize {
    90
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestBlock {
    pub alpha: f64,
    pub days: usize,
    pub p: f64,
    pub omegas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Noise scales to sweep; defaults to the scale in `noise`.
    #[serde(default)]
    pub sigmas: Option<Vec<f64>>,
    #[serde(default)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    pub replicates: usize,
    pub days: usize,
    pub p: f64,
    #[serde(default)]
    pub starts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitBlock {
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub p_values: Option<Vec<f64>>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub starts: Option<usize>,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default = "default_nyc_population")]
    pub population: u64,
    #[serde(default)]
    pub start: Option<NaiveDate>,
    #[serde(default)]
    pub end: Option<NaiveDate>,
}

/// 2019 estimate for New York City.
pub const NYC_POPULATION: u64 = 8_399_000;

fn default_nyc_population() -> u64 {
    NYC_POPULATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionBlock {
    pub target_type2: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub p: f64,
    pub days: usize,
    pub delta: f64,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn need<'a, T>(block: &'a Option<T>, name: &str, command: Command) -> Result<&'a T> {
    block
        .as_ref()
        .ok_or_else(|| config_err(format!("`{name}` block is required for {command:?}")))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Checks that the blocks the command needs are present and sane.
    pub fn validate(&self) -> Result<()> {
        let c = self.command;
        if self.steps_per_day == Some(0) {
            return Err(config_err("steps_per_day must be positive"));
        }
        match c {
            Command::Simulate => {
                need(&self.params, "params", c)?;
                need(&self.init, "init", c)?;
                need(&self.noise, "noise", c)?;
                if need(&self.simulate, "simulate", c)?.days == 0 {
                    return Err(config_err("simulate.days must be positive"));
                }
            }
            Command::SweepDirections | Command::ErrorFit => {
                need(&self.params, "params", c)?;
                need(&self.init, "init", c)?;
                if need(&self.sweep, "sweep", c)?.angles == 0 {
                    return Err(config_err("sweep.angles must be positive"));
                }
            }
            Command::Fit | Command::NycTable => {
                need(&self.data, "data", c)?;
                let fit = need(&self.fit, "fit", c)?;
                match c {
                    Command::Fit if fit.p.is_none() => {
                        return Err(config_err("fit.p is required for fit"))
                    }
                    Command::NycTable if fit.p_values.as_ref().is_none_or(|v| v.is_empty()) => {
                        return Err(config_err("fit.p_values must be a nonempty list"))
                    }
                    _ => {}
                }
            }
            Command::Ensemble => {
                need(&self.params, "params", c)?;
                need(&self.init, "init", c)?;
                need(&self.noise, "noise", c)?;
                let e = need(&self.ensemble, "ensemble", c)?;
                if e.replicates == 0 {
                    return Err(config_err("ensemble.replicates must be at least 1"));
                }
                if e.days == 0 {
                    return Err(config_err("ensemble.days must be positive"));
                }
            }
            Command::Power | Command::PowerEmpirical => {
                need(&self.params, "params", c)?;
                need(&self.init, "init", c)?;
                need(&self.noise, "noise", c)?;
                let t = need(&self.test, "test", c)?;
                if t.omegas.is_empty() || t.epsilons.is_empty() {
                    return Err(config_err("test.omegas and test.epsilons must be nonempty"));
                }
                if c == Command::PowerEmpirical && t.replicates.is_none() {
                    return Err(config_err("test.replicates is required for power-empirical"));
                }
                if t.sigmas.is_some() && self.noise.as_ref().and_then(NoiseModel::sigma).is_none() {
                    return Err(config_err("test.sigmas needs a noise model with a scale"));
                }
            }
            Command::EpsilonInvert => {
                need(&self.inversion, "inversion", c)?;
            }
        }
        Ok(())
    }

    fn spd(&self) -> usize {
        self.steps_per_day.unwrap_or(DEFAULT_STEPS_PER_DAY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: Command,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<OutputEntry>,
    pub version: String,
    pub outputs: Vec<OutputEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Outputs<'a> {
    dir: &'a Path,
    entries: Vec<OutputEntry>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        fs::write(self.dir.join(name), &bytes)?;
        self.entries.push(OutputEntry {
            file: name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(name, buf)
    }
}

/// Runs `cfg`, writing outputs and `manifest.json` into `out`.
/// `base_dir` resolves relative data paths.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut o = Outputs {
        dir: out,
        entries: Vec::new(),
    };
    let mut inputs = Vec::new();
    let spd = cfg.spd();
    let c = cfg.command;
    match c {
        Command::Simulate => {
            let (params, init, noise) = model(cfg)?;
            let b = need(&cfg.simulate, "simulate", c)?;
            let traj = if b.linearized {
                sir::integrate_linearized(params, init, b.days)?
            } else {
                sir::integrate_exact(params, init, b.days, spd)?
            };
            let obs = simulate::observe(&traj, &noise, b.p, b.days, cfg.seed)?;
            o.csv("trajectory.csv", |w| traj.write_csv(w))?;
            o.csv("incidence.csv", |w| sir::incidence(&traj)?.write_csv(w))?;
            o.csv("observations.csv", |w| obs.write_csv(w))?;
            o.json("observations.json", &obs.sidecar())?;
        }
        Command::SweepDirections => {
            let (params, init) = (need(&cfg.params, "params", c)?, need(&cfg.init, "init", c)?);
            let b = need(&cfg.sweep, "sweep", c)?;
            let horizon = match b.horizon {
                Some(h) => h,
                None => sir::find_peak_time(*params, *init, spd)?.ceil() as usize,
            };
            let curves = perturb::separation_sweep(
                *params,
                *init,
                b.epsilon,
                &perturb::uniform_angles(b.angles),
                horizon,
                spd,
            )?;
            o.csv("separation.csv", |w| perturb::write_sweep_csv(&curves, w))?;
            let minima = perturb::min_separation(&curves);
            o.csv("minimum.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["t", "min_distance", "argmin_omega", "lower_bound"])?;
                for (t, (m, arg)) in minima.iter().enumerate() {
                    let lb = perturb::lower_bound(*params, *init, b.epsilon, t as f64)?;
                    c.write_record([
                        t.to_string(),
                        crate::fmt_f64(*m),
                        crate::fmt_f64(*arg),
                        crate::fmt_f64(lb),
                    ])?;
                }
                c.flush()?;
                Ok(())
            })?;
        }
        Command::ErrorFit => {
            let (params, init) = (need(&cfg.params, "params", c)?, need(&cfg.init, "init", c)?);
            let b = need(&cfg.sweep, "sweep", c)?;
            let fit = perturb::error_fit(*params, *init, b.epsilon, spd)?;
            o.csv("error_fit.csv", |w| perturb::write_fit_csv(&fit, w))?;
            o.json(
                "error_fit.json",
                &serde_json::json!({
                    "slope": fit.slope,
                    "intercept": fit.intercept,
                    "crossing_time": fit.crossing_time,
                    "percent_of_peak": fit.percent_of_peak,
                    "peak_time": fit.peak_time,
                }),
            )?;
        }
        Command::Fit | Command::NycTable => {
            let data_block = need(&cfg.data, "data", c)?;
            let (data, entry) = load_data(data_block, base_dir)?;
            inputs.push(entry);
            let fb = need(&cfg.fit, "fit", c)?;
            let opts = fit_options(fb.starts);
            if c == Command::Fit {
                let p = fb.p.unwrap_or_default();
                let fit = inference::fit_mle_default(&data.likelihood(p)?, &opts)?;
                let band = cases::fitted_band(&data, &fit, p, fb.level)?;
                o.json("fit.json", &fit)?;
                o.csv("band.csv", |w| cases::write_band_csv(&band, w))?;
            } else {
                let rows = cases::reporting_rate_sweep(&data, fb.p_values.as_deref().unwrap_or(&[]), &opts)?;
                o.csv("table.csv", |w| cases::write_sweep_csv(&rows, w))?;
            }
        }
        Command::Ensemble => {
            let (params, init, noise) = model(cfg)?;
            let b = need(&cfg.ensemble, "ensemble", c)?;
            let spec = EnsembleSpec {
                true_params: params,
                init,
                noise,
                p: b.p,
                days: b.days,
            };
            let ens = inference::mle_ensemble(&spec, b.replicates, cfg.seed, &fit_options(b.starts))?;
            o.csv("ensemble.csv", |w| ens.write_csv(w))?;
            o.json(
                "summary.json",
                &serde_json::json!({
                    "summary": ens.summary(),
                    "failures": ens.failures,
                }),
            )?;
        }
        Command::Power | Command::PowerEmpirical => {
            let (params, init, noise) = model(cfg)?;
            let t = need(&cfg.test, "test", c)?;
            let sigmas: Vec<Option<f64>> = match &t.sigmas {
                Some(v) => v.iter().copied().map(Some).collect(),
                None => vec![None],
            };
            let empirical = match c {
                Command::PowerEmpirical => t.replicates.map(|r| (r, cfg.seed)),
                _ => None,
            };
            let mut rows = Vec::new();
            for &omega in &t.omegas {
                for &sigma in &sigmas {
                    for &eps in &t.epsilons {
                        let noise = sigma.map_or(noise.clone(), |s| noise.with_sigma(s));
                        let spec = TestSpec::new(
                            Perturbation::new(params, eps, omega)?,
                            t.alpha,
                            t.days,
                            t.p,
                            noise,
                            init,
                        )?;
                        rows.push(testing::power(&spec, empirical)?);
                    }
                }
            }
            o.csv("power.csv", |w| testing::write_power_csv(&rows, w))?;
        }
        Command::EpsilonInvert => {
            let b = need(&cfg.inversion, "inversion", c)?;
            let eps = testing::epsilon_for_power(b.target_type2, b.alpha, b.sigma, b.p, b.days, b.delta)?;
            o.json("epsilon.json", &serde_json::json!({ "inputs": b, "epsilon": eps }))?;
        }
    }
    let manifest = Manifest {
        command: c,
        seed: cfg.seed,
        config_sha256: sha256_hex(&serde_json::to_vec(cfg)?),
        inputs,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: o.entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(out.join("manifest.json"), bytes)?;
    Ok(manifest)
}

fn model(cfg: &ExperimentConfig) -> Result<(SirParams, InitialCondition, NoiseModel)> {
    let c = cfg.command;
    Ok((
        *need(&cfg.params, "params", c)?,
        *need(&cfg.init, "init", c)?,
        need(&cfg.noise, "noise", c)?.clone(),
    ))
}

fn fit_options(starts: Option<usize>) -> FitOptions {
    let mut opts = FitOptions::default();
    if let Some(s) = starts {
        opts.starts = s;
    }
    opts
}

fn load_data(b: &DataBlock, base_dir: &Path) -> Result<(cases::CaseData, OutputEntry)> {
    let path = if b.path.is_absolute() {
        b.path.clone()
    } else {
        base_dir.join(&b.path)
    };
    let range = match (b.start, b.end) {
        (Some(start), Some(end)) => Some(DateRange { start, end }),
        (None, None) => None,
        _ => return Err(config_err("data.start and data.end must be given together")),
    };
    let data = cases::load_cases(&path, b.population, range)?;
    let bytes = fs::read(&path)?;
    let entry = OutputEntry {
        file: b.path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    };
    Ok((data, entry))
}
