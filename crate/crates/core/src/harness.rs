//! Seeded multi-trial experiments over sample-size grids.
//!
//! Model roles are fixed by name in `models`:
//! - `gof`: `null` is the hypothesized law, `data` (default: `null`) generates the samples.
//! - `classify`: `x` and `y` are the candidate laws; the test sample `z` comes
//!   from `x` in even trials and from `y` in odd trials.
//! - `changepoint`: the first `round(change_fraction * n)` values come from
//!   `before`, the rest from `after`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{estimate_changepoint_with, Boundary};
use crate::classify::classify;
use crate::distance::{PreparedModel, WeightScheme};
use crate::error::{Error, Result};
use crate::gof::{calibrate_gamma, decide, Calibration, GofConfig};
use crate::models::ProcessModel;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Gof,
    Classify,
    Changepoint,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Gof => "gof",
            TestKind::Classify => "classify",
            TestKind::Changepoint => "changepoint",
        }
    }

    fn roles(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            TestKind::Gof => (&["null"], &["data"]),
            TestKind::Classify => (&["x", "y"], &[]),
            TestKind::Changepoint => (&["before", "after"], &[]),
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_n_cal() -> usize {
    999
}

fn default_boundary() -> String {
    "sqrt(n)".into()
}

/// Experiment configuration; file keys mirror the field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub test: TestKind,
    /// Model specifications by role name.
    pub models: BTreeMap<String, serde_json::Value>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: WeightScheme,
    /// Change location as a fraction of `n` (changepoint only).
    #[serde(default)]
    pub change_fraction: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    /// Search boundary expression in `n` (changepoint only).
    #[serde(default = "default_boundary")]
    pub boundary: String,
    /// Calibrate γ̂ afresh in every gof trial instead of once per `n`.
    #[serde(default)]
    pub fresh_calibration: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json { Self::from_json(&text) } else { Self::from_toml(&text) };
        parsed.map_err(|e| match e {
            Error::Config(c) => Error::Config(format!("{}: {c}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid must not be empty".into()));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be positive and strictly increasing".into()));
        }
        self.scheme.validate()?;
        let (required, optional) = self.test.roles();
        for role in required {
            if !self.models.contains_key(*role) {
                return Err(Error::Config(format!("models.{role} is required for test {}", self.test.name())));
            }
        }
        if let Some(extra) = self
            .models
            .keys()
            .find(|k| !required.contains(&k.as_str()) && !optional.contains(&k.as_str()))
        {
            return Err(Error::Config(format!("models.{extra} is not a role of test {}", self.test.name())));
        }
        match self.test {
            TestKind::Gof => {
                for &n in &self.n_grid {
                    self.gof_config(n, 0).validate()?;
                }
            }
            TestKind::Changepoint => {
                let f = self
                    .change_fraction
                    .ok_or_else(|| Error::Config("change_fraction is required for changepoint".into()))?;
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::Config(format!("change_fraction must lie in (0, 1), got {f}")));
                }
                let boundary: Boundary = self.boundary.parse()?;
                for &n in &self.n_grid {
                    let b = boundary.at(n)?;
                    if n < 4 || 2 * b > n {
                        return Err(Error::Config(format!("n = {n} leaves no split inside boundary {b}")));
                    }
                }
            }
            TestKind::Classify => {}
        }
        if self.test != TestKind::Changepoint && self.change_fraction.is_some() {
            return Err(Error::Config("change_fraction only applies to changepoint".into()));
        }
        Ok(())
    }

    fn gof_config(&self, n: usize, seed: u64) -> GofConfig {
        GofConfig {
            alpha: self.alpha,
            n,
            n_cal: self.n_cal,
            seed,
            scheme: self.scheme,
        }
    }

    fn build_models(&self) -> Result<BTreeMap<String, ProcessModel>> {
        self.models
            .iter()
            .map(|(name, v)| {
                let model = ProcessModel::from_value(v.clone()).map_err(|e| match e {
                    Error::InvalidModel { key, reason } => Error::InvalidModel {
                        key: format!("models.{name}.{key}"),
                        reason,
                    },
                    Error::Config(c) => Error::Config(format!("models.{name}: {c}")),
                    other => other,
                })?;
                Ok((name.clone(), model))
            })
            .collect()
    }
}

/// One trial. Fields that do not apply to the test are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub test: TestKind,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    /// `accept_H0`/`reject_H0`, the classification label, or `k_hat`.
    pub outcome: String,
    /// Correct classification label, or the true change location.
    pub truth: Option<usize>,
    /// gof: d̂(X, ρ); classify: d̂(X, Z); changepoint: scan maximum.
    pub stat_a: f64,
    /// gof: γ̂; classify: d̂(Y, Z).
    pub stat_b: Option<f64>,
    /// gof: rejection indicator; classify: misclassification indicator;
    /// changepoint: `|k_hat - k| / n`.
    pub error: f64,
    pub duration_s: f64,
}

impl TrialRecord {
    /// Equality ignoring wall-clock duration.
    pub fn same_result(&self, other: &TrialRecord) -> bool {
        TrialRecord {
            duration_s: 0.0,
            ..self.clone()
        } == TrialRecord {
            duration_s: 0.0,
            ..other.clone()
        }
    }
}

/// Aggregate over the trials at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub test: TestKind,
    pub n: usize,
    pub trials: usize,
    /// Mean of `error`: rejection rate, misclassification rate, or mean
    /// relative location error.
    pub mean_error: f64,
    pub median_error: f64,
    pub mean_duration_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<Summary>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

fn summarize(test: TestKind, n: usize, records: &[TrialRecord]) -> Summary {
    let errors: Vec<f64> = records.iter().map(|r| r.error).collect();
    let k = records.len() as f64;
    Summary {
        test,
        n,
        trials: records.len(),
        mean_error: errors.iter().sum::<f64>() / k,
        median_error: median(&errors),
        mean_duration_s: records.iter().map(|r| r.duration_s).sum::<f64>() / k,
    }
}

/// Runs `trials` trials at every grid point. Trials run in parallel on the
/// current rayon pool; records come back in `(n, trial)` order and do not
/// depend on the degree of parallelism.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let models = spec.build_models()?;
    let boundary: Boundary = spec.boundary.parse()?;
    let test = spec.test;
    let mut records = Vec::with_capacity(spec.trials * spec.n_grid.len());
    let mut summaries = Vec::with_capacity(spec.n_grid.len());
    for &n in &spec.n_grid {
        let shared = match test {
            TestKind::Gof if !spec.fresh_calibration => {
                let seed = seeds::derive(spec.seed, &["gof-calibration".into(), n.into()]);
                Some(calibrate_gamma(&models["null"], &spec.gof_config(n, seed))?)
            }
            _ => None,
        };
        let prepared = match test {
            TestKind::Gof => Some(PreparedModel::new(&models["null"], &spec.scheme)?),
            _ => None,
        };
        let batch = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = seeds::trial_seed(spec.seed, test.name(), n, trial);
                let started = Instant::now();
                let mut rec = match test {
                    TestKind::Gof => {
                        gof_trial(spec, &models, prepared.as_ref().unwrap(), shared.as_ref(), n, seed)?
                    }
                    TestKind::Classify => classify_trial(spec, &models, n, trial, seed)?,
                    TestKind::Changepoint => changepoint_trial(spec, &models, &boundary, n, seed)?,
                };
                rec.trial = trial;
                rec.duration_s = started.elapsed().as_secs_f64();
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        summaries.push(summarize(test, n, &batch));
        records.extend(batch);
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        records,
        summaries,
    })
}

fn record(test: TestKind, n: usize, seed: u64) -> TrialRecord {
    TrialRecord {
        test,
        n,
        trial: 0,
        seed,
        outcome: String::new(),
        truth: None,
        stat_a: 0.0,
        stat_b: None,
        error: 0.0,
        duration_s: 0.0,
    }
}

fn gof_trial(
    spec: &ExperimentSpec,
    models: &BTreeMap<String, ProcessModel>,
    prepared: &PreparedModel<'_>,
    shared: Option<&Calibration>,
    n: usize,
    seed: u64,
) -> Result<TrialRecord> {
    let null = &models["null"];
    let data = models.get("data").unwrap_or(null);
    let fresh;
    let cal = match shared {
        Some(c) => c,
        None => {
            let cal_seed = seeds::derive(seed, &["calibration".into()]);
            fresh = calibrate_gamma(null, &spec.gof_config(n, cal_seed))?;
            &fresh
        }
    };
    let x = data.sample(n, seeds::derive(seed, &["data".into()]))?;
    let out = decide(prepared.distance(&x)?, cal);
    let mut rec = record(TestKind::Gof, n, seed);
    rec.outcome = if out.rejected() { "reject_H0" } else { "accept_H0" }.into();
    rec.stat_a = out.statistic.value;
    rec.stat_b = Some(out.gamma_hat);
    rec.error = if out.rejected() { 1.0 } else { 0.0 };
    Ok(rec)
}

fn classify_trial(
    spec: &ExperimentSpec,
    models: &BTreeMap<String, ProcessModel>,
    n: usize,
    trial: usize,
    seed: u64,
) -> Result<TrialRecord> {
    let truth: u8 = if trial.is_multiple_of(2) { 1 } else { 2 };
    let x = models["x"].sample(n, seeds::derive(seed, &["x".into()]))?;
    let y = models["y"].sample(n, seeds::derive(seed, &["y".into()]))?;
    let source = if truth == 1 { &models["x"] } else { &models["y"] };
    let z = source.sample(n, seeds::derive(seed, &["z".into()]))?;
    let out = classify(&x, &y, &z, &spec.scheme)?;
    let mut rec = record(TestKind::Classify, n, seed);
    rec.outcome = out.label.to_string();
    rec.truth = Some(truth as usize);
    rec.stat_a = out.d_xz.value;
    rec.stat_b = Some(out.d_yz.value);
    rec.error = if out.label == truth { 0.0 } else { 1.0 };
    Ok(rec)
}

/// True change location `round(f n)` used by the changepoint experiments.
pub fn change_location(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

fn changepoint_trial(
    spec: &ExperimentSpec,
    models: &BTreeMap<String, ProcessModel>,
    boundary: &Boundary,
    n: usize,
    seed: u64,
) -> Result<TrialRecord> {
    let k = change_location(spec.change_fraction.unwrap_or(0.5), n).clamp(1, n - 1);
    let before = models["before"].sample(k, seeds::derive(seed, &["before".into()]))?;
    let after = models["after"].sample(n - k, seeds::derive(seed, &["after".into()]))?;
    let z = before.concat(&after);
    let est = estimate_changepoint_with(&z, &spec.scheme, boundary)?;
    let best = est.scan.iter().find(|p| p.t == est.k_hat).map_or(0.0, |p| p.dhat);
    let mut rec = record(TestKind::Changepoint, n, seed);
    rec.outcome = est.k_hat.to_string();
    rec.truth = Some(k);
    rec.stat_a = best;
    rec.error = est.k_hat.abs_diff(k) as f64 / n as f64;
    Ok(rec)
}

fn write_atomic(path: &Path, fill: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes raw records as CSV, one row per trial with header
/// `test,n,trial,seed,outcome,truth,stat_a,stat_b,error,duration_s`.
pub fn write_records_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    write_atomic(path, |f| {
        let mut w = csv::Writer::from_writer(f);
        for r in records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Writes the summaries (with the spec echoed) as JSON.
pub fn write_summary_json(result: &ExperimentResult, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a> {
        spec: &'a ExperimentSpec,
        summaries: &'a [Summary],
    }
    write_atomic(path, |f| {
        serde_json::to_writer_pretty(
            &mut *f,
            &Out {
                spec: &result.spec,
                summaries: &result.summaries,
            },
        )?;
        f.write_all(b"\n")?;
        Ok(())
    })
}
