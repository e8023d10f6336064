//! Daily case-count series: loading, the reporting-rate sweep and
//! prediction bands around a fitted trajectory.
//!
//! The first row of a series anchors t = 0 (one infected individual,
//! i0 = 1/N); the remaining rows are the observations Y_1..Y_T.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmt_f64;
use crate::inference::{fit_mle_default, FitOptions, LikelihoodSpec, MleResult};
use crate::normal;
use crate::simulate::{check_rate, NoiseModel, ObservationSeries};
use crate::sir::{incidence, integrate_exact, InitialCondition, SirParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseData {
    pub dates: Vec<NaiveDate>,
    pub counts: Vec<u64>,
    pub population: u64,
    pub label: String,
}

/// Inclusive range of calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Deserialize)]
struct Row {
    date: String,
    count: String,
}

/// Reads a `date,count` CSV and keeps rows inside `range`, which must
/// then be complete: every calendar day present exactly once.
pub fn load_cases(path: &Path, population: u64, range: Option<DateRange>) -> Result<CaseData> {
    let file = std::fs::File::open(path)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_cases(file, path, population, range, label)
}

pub fn read_cases<R: Read>(
    input: R,
    path: &Path,
    population: u64,
    range: Option<DateRange>,
    label: String,
) -> Result<CaseData> {
    if population == 0 {
        return Err(invalid("N", "population must be positive"));
    }
    let malformed = |line: u64, reason: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    for col in ["date", "count"] {
        if !headers.iter().any(|h| h == col) {
            return Err(malformed(1, format!("missing column `{col}`")));
        }
    }
    let mut rows: Vec<(NaiveDate, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec
            .deserialize(Some(&headers))
            .map_err(|e| malformed(line, e.to_string()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| malformed(line, format!("bad date `{}`: {e}", row.date)))?;
        let count: i64 = row
            .count
            .parse()
            .map_err(|_| malformed(line, format!("bad count `{}`", row.count)))?;
        if count < 0 {
            return Err(Error::NegativeCount {
                path: path.to_path_buf(),
                date,
                count,
            });
        }
        if range.is_none_or(|r| r.start <= date && date <= r.end) {
            rows.push((date, count as u64));
        }
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateDate {
            path: path.to_path_buf(),
            date: w[0].0,
        });
    }
    let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
        return Err(Error::EmptySeries);
    };
    let (start, end) = range.map_or((first.0, last.0), |r| (r.start, r.end));
    let mut expected = start;
    for &(date, _) in &rows {
        if date != expected {
            return Err(Error::MissingDate {
                path: path.to_path_buf(),
                date: expected,
            });
        }
        expected = next_day(date);
    }
    if expected <= end {
        return Err(Error::MissingDate {
            path: path.to_path_buf(),
            date: expected,
        });
    }
    let (dates, counts) = rows.into_iter().unzip();
    Ok(CaseData {
        dates,
        counts,
        population,
        label,
    })
}

fn next_day(d: NaiveDate) -> NaiveDate {
    d.checked_add_days(Days::new(1)).unwrap_or(NaiveDate::MAX)
}

impl CaseData {
    /// Number of observation days T (rows after the anchor day).
    pub fn days(&self) -> usize {
        self.counts.len().saturating_sub(1)
    }

    /// CSV `date,count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "count"])?;
        for (d, c) in self.dates.iter().zip(&self.counts) {
            w.write_record([d.format("%Y-%m-%d").to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn init(&self) -> Result<InitialCondition> {
        InitialCondition::from_population(self.population)
    }

    /// Likelihood over Y_1..Y_T with σ_t = σ√(N i_t) and σ inferred.
    pub fn likelihood(&self, p: f64) -> Result<LikelihoodSpec> {
        if self.days() < 2 {
            return Err(Error::InsufficientData(format!(
                "{} observation days after the anchor day",
                self.days()
            )));
        }
        let noise = NoiseModel::SqrtInfected { sigma: 1.0 };
        let values = self.counts[1..].iter().map(|&c| c as f64).collect();
        let obs = ObservationSeries::from_values(values, p, noise.clone(), self.population)?;
        LikelihoodSpec::new(obs, self.init()?, noise, true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub fit: Option<MleResult>,
    pub error: Option<String>,
}

/// One fit per reporting rate. Failed fits are kept as rows with an error.
pub fn reporting_rate_sweep(data: &CaseData, p_values: &[f64], opts: &FitOptions) -> Result<Vec<SweepRow>> {
    for &p in p_values {
        check_rate(p)?;
    }
    Ok(p_values
        .par_iter()
        .map(|&p| match data.likelihood(p).and_then(|s| fit_mle_default(&s, opts)) {
            Ok(fit) => SweepRow {
                p,
                fit: Some(fit),
                error: None,
            },
            Err(e) => SweepRow {
                p,
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// CSV `p,beta_hat,gamma_hat,sigma_hat,r0_hat,loglik,status`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "beta_hat", "gamma_hat", "sigma_hat", "r0_hat", "loglik", "status"])?;
    for r in rows {
        let mut rec = vec![fmt_f64(r.p)];
        match &r.fit {
            Some(f) => rec.extend([
                fmt_f64(f.beta_hat),
                fmt_f64(f.gamma_hat),
                f.sigma_hat.map(fmt_f64).unwrap_or_default(),
                fmt_f64(f.r0_hat),
                fmt_f64(f.loglik),
                f.status.to_string(),
            ]),
            None => {
                rec.extend(std::iter::repeat_n(String::new(), 5));
                rec.push(r.error.clone().unwrap_or_default());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandPoint {
    pub t: usize,
    pub date: NaiveDate,
    pub observed: u64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// pNΔ_k ± z σ̂ √(N i_k) along the fitted trajectory.
pub fn fitted_band(data: &CaseData, fit: &MleResult, p: f64, level: f64) -> Result<Vec<BandPoint>> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    check_rate(p)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("level", format!("must lie in (0, 1), got {level}")));
    }
    let sigma = fit
        .sigma_hat
        .ok_or_else(|| invalid("fit", "band needs an inferred sigma"))?;
    let days = data.days();
    let params = SirParams::new(fit.beta_hat, fit.gamma_hat)?;
    let traj = integrate_exact(params, data.init()?, days, crate::sir::DEFAULT_STEPS_PER_DAY)?;
    let delta = incidence(&traj)?;
    let n = data.population as f64;
    let z = normal::two_sided_z(level);
    Ok((1..=days)
        .map(|k| {
            let mean = p * delta.values()[k - 1];
            let half = z * sigma * (n * traj.i()[k]).sqrt();
            BandPoint {
                t: k,
                date: data.dates[k],
                observed: data.counts[k],
                mean,
                lower: mean - half,
                upper: mean + half,
            }
        })
        .collect())
}

/// CSV `t,date,observed,mean,lower,upper`.
pub fn write_band_csv<W: Write>(band: &[BandPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "date", "observed", "mean", "lower", "upper"])?;
    for b in band {
        w.write_record([
            b.t.to_string(),
            b.date.format("%Y-%m-%d").to_string(),
            b.observed.to_string(),
            fmt_f64(b.mean),
            fmt_f64(b.lower),
            fmt_f64(b.upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Location of a file in the repository's `data/` directory.
pub fn data_path(relative: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(relative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::normal_draw;

    fn read(text: &str, range: Option<DateRange>) -> Result<CaseData> {
        read_cases(text.as_bytes(), Path::new("mem.csv"), 1000, range, "mem".into())
    }

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn parses_and_filters() {
        let text = "date,count,extra\n2020-03-01,0,x\n2020-03-02,4,y\n2020-03-03,9,z\n";
        let all = read(text, None).unwrap();
        assert_eq!(all.counts, vec![0, 4, 9]);
        assert_eq!(all.days(), 2);
        let r = DateRange { start: d("2020-03-02"), end: d("2020-03-03") };
        assert_eq!(read(text, Some(r)).unwrap().counts, vec![4, 9]);
    }

    #[test]
    fn unsorted_rows_are_ordered() {
        let c = read("date,count\n2020-03-02,4\n2020-03-01,1\n", None).unwrap();
        assert_eq!(c.dates, vec![d("2020-03-01"), d("2020-03-02")]);
        assert_eq!(c.counts, vec![1, 4]);
    }

    #[test]
    fn distinct_errors() {
        let kind = |t: &str, r| read(t, r).unwrap_err().kind();
        assert_eq!(kind("date,cases\n2020-03-01,1\n", None), "malformed-csv");
        assert_eq!(kind("date,count\n2020-13-01,1\n", None), "malformed-csv");
        assert_eq!(kind("date,count\n2020-03-01,1.5\n", None), "malformed-csv");
        assert_eq!(kind("date,count\n2020-03-01,-3\n", None), "negative-count");
        assert_eq!(kind("date,count\n2020-03-01,1\n2020-03-01,2\n", None), "duplicate-date");
        assert_eq!(kind("date,count\n2020-03-01,1\n2020-03-03,2\n", None), "missing-date");
        let past = DateRange { start: d("2020-03-01"), end: d("2020-03-04") };
        assert_eq!(kind("date,count\n2020-03-01,1\n2020-03-02,2\n", Some(past)), "missing-date");
        let empty = DateRange { start: d("2020-03-05"), end: d("2020-03-04") };
        assert_eq!(kind("date,count\n2020-03-01,1\n", Some(empty)), "empty-series");
    }

    #[test]
    fn round_trip() {
        let c = read("date,count\n2021-12-31,3\n2022-01-01,0\n2022-01-02,17\n", None).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(read(std::str::from_utf8(&buf).unwrap(), None).unwrap(), c);
    }

    fn synthetic(beta: f64, gamma: f64, sigma: f64, p: f64, days: usize, seed: u64, rep: u64) -> CaseData {
        let n = 1_000_000u64;
        let init = InitialCondition::from_population(n).unwrap();
        let traj = integrate_exact(SirParams::new(beta, gamma).unwrap(), init, days, 50).unwrap();
        let delta = incidence(&traj).unwrap();
        let mut counts = vec![1];
        for k in 1..=days {
            let y = p * delta.values()[k - 1]
                + sigma * (n as f64 * traj.i()[k]).sqrt() * normal_draw(seed, rep, k as u64);
            counts.push(y.round().max(0.0) as u64);
        }
        let start = d("2020-01-01");
        CaseData {
            dates: (0..=days as u64).map(|k| start.checked_add_days(Days::new(k)).unwrap()).collect(),
            counts,
            population: n,
            label: "synthetic".into(),
        }
    }

    #[test]
    fn band_width_and_z() {
        assert!((normal::two_sided_z(0.95) - 1.959964).abs() < 1e-6);
        let data = synthetic(0.9, 0.4, 1.0, 0.2, 20, 1, 0);
        let fit = fit_mle_default(&data.likelihood(0.2).unwrap(), &FitOptions::default()).unwrap();
        let band = fitted_band(&data, &fit, 0.2, 0.95).unwrap();
        assert_eq!(band.len(), 20);
        let widths: Vec<f64> = band.iter().map(|b| b.upper - b.lower).collect();
        assert!(widths.windows(2).all(|w| w[1] > w[0]));
        let bad = MleResult { converged: false, ..fit };
        assert!(matches!(fitted_band(&data, &bad, 0.2, 0.95), Err(Error::NotConverged)));
    }

    #[test]
    fn band_coverage_under_fitted_model() {
        let data = synthetic(0.9, 0.4, 2.0, 0.2, 25, 2, 0);
        let fit = fit_mle_default(&data.likelihood(0.2).unwrap(), &FitOptions::default()).unwrap();
        let band = fitted_band(&data, &fit, 0.2, 0.95).unwrap();
        let params = SirParams::new(fit.beta_hat, fit.gamma_hat).unwrap();
        let traj = integrate_exact(params, data.init().unwrap(), 25, 50).unwrap();
        let (mut inside, mut total) = (0usize, 0usize);
        for rep in 0..400u64 {
            for b in &band {
                let sd = fit.sigma_hat.unwrap() * (data.population as f64 * traj.i()[b.t]).sqrt();
                let y = b.mean + sd * normal_draw(99, rep, b.t as u64);
                inside += usize::from(b.lower <= y && y <= b.upper);
                total += 1;
            }
        }
        let rate = inside as f64 / total as f64;
        let se = (0.95 * 0.05 / total as f64).sqrt();
        assert!((rate - 0.95).abs() < 3.0 * se, "{rate}");
    }

    #[test]
    fn sweep_keeps_rows_for_failures() {
        let data = synthetic(0.9, 0.4, 1.0, 0.2, 20, 3, 0);
        assert!(reporting_rate_sweep(&data, &[0.0], &FitOptions::default()).is_err());
        let short = CaseData {
            dates: data.dates[..2].to_vec(),
            counts: data.counts[..2].to_vec(),
            ..data.clone()
        };
        let rows = reporting_rate_sweep(&short, &[0.1, 0.2], &FitOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.fit.is_none() && r.error.is_some()));
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("p,beta_hat,gamma_hat,sigma_hat,r0_hat,loglik,status\n"));
    }
}
