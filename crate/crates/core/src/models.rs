//! Stationary ergodic process models.
//!
//! Every model is both a sampler and a cylinder-probability oracle ρ(B). The
//! shipped families have exact formulas for the probability of each dyadic
//! cell and can enumerate the cells carrying positive mass, which is what
//! the exact model-to-model distance needs.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::cylinder::{self, cell_unchecked, CellIndex, FreqTable, PartitionLevel};
use crate::error::{Error, Result};
use crate::sample::Sample;

/// Upper bound on the number of cells a mass-cell enumeration may produce.
pub const MAX_MASS_CELLS: usize = 1 << 22;

/// Largest state space accepted for Markov models.
pub const MAX_STATES: usize = 64;

/// Default length of the internal run backing a Monte Carlo oracle.
pub const DEFAULT_MC_LENGTH: usize = 1_000_000;

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;

/// Parameters of a model, as read from a model specification file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// I.i.d. draws from finitely many atoms.
    IidDiscrete { atoms: Vec<f64>, probs: Vec<f64> },
    /// I.i.d. draws from a density that is constant between consecutive
    /// breakpoints; `probs[k]` is the mass of `[breakpoints[k], breakpoints[k+1])`.
    IidPiecewiseUniform { breakpoints: Vec<f64>, probs: Vec<f64> },
    /// Observed Markov chain: distinct emission value per state.
    FiniteMarkov {
        transition: Vec<Vec<f64>>,
        emissions: Vec<f64>,
    },
    /// Hidden Markov chain seen through an arbitrary emission map.
    FunctionOfMarkov {
        transition: Vec<Vec<f64>>,
        emissions: Vec<f64>,
    },
    /// `X_i = frac(theta + i * alpha)` with `theta` uniform on `[0, 1)`.
    Rotation { alpha: f64 },
}

/// How a model answers cell-probability queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub exact_cell_prob: bool,
    pub enumerate_mass_cells: bool,
}

/// A cell probability estimated from a long run, with its standard error
/// under an independence approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub prob: f64,
    pub std_err: f64,
    pub run_length: usize,
}

/// Transition structure of a finite ergodic Markov chain with its emission
/// values and stationary distribution.
#[derive(Debug, Clone)]
pub struct MarkovSpec {
    transition: Vec<Vec<f64>>,
    emission: Vec<f64>,
    stationary: Vec<f64>,
    initial: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl MarkovSpec {
    /// Validates a row-stochastic, irreducible, aperiodic transition matrix
    /// and solves for its stationary distribution.
    pub fn new(transition: Vec<Vec<f64>>, emission: Vec<f64>) -> Result<Self> {
        let s = transition.len();
        if s == 0 {
            return Err(Error::model("transition", "needs at least one state"));
        }
        if s > MAX_STATES {
            return Err(Error::model("transition", format!("{s} states exceed the limit of {MAX_STATES}")));
        }
        if emission.len() != s {
            return Err(Error::model(
                "emissions",
                format!("{} emissions for {s} states", emission.len()),
            ));
        }
        if let Some(e) = emission.iter().find(|e| !e.is_finite()) {
            return Err(Error::model("emissions", format!("non-finite emission {e}")));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != s {
                return Err(Error::model("transition", format!("row {i} has {} entries, expected {s}", row.len())));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::model("transition", format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::model("transition", format!("row {i} sums to {sum}")));
            }
        }
        check_ergodic(&transition)?;
        let stationary = stationary_distribution(&transition)?;

        let initial = WeightedIndex::new(&stationary)
            .map_err(|e| Error::model("transition", format!("stationary law: {e}")))?;
        let rows = transition
            .iter()
            .map(|r| WeightedIndex::new(r).map_err(|e| Error::model("transition", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarkovSpec {
            transition,
            emission,
            stationary,
            initial,
            rows,
        })
    }

    pub fn states(&self) -> usize {
        self.transition.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn emission(&self) -> &[f64] {
        &self.emission
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// One step of the chain applied to a distribution over states.
    pub fn step(&self, dist: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.states()];
        for (i, &p) in dist.iter().enumerate() {
            for (j, &q) in self.transition[i].iter().enumerate() {
                out[j] += p * q;
            }
        }
        out
    }

    /// Probability that `m` consecutive emissions, started from state
    /// distribution `initial`, fall in `cell` at resolution `l`.
    pub fn window_prob(&self, initial: &[f64], cell: &CellIndex, l: u32) -> f64 {
        let s = self.states();
        let state_cells: Vec<i64> = self.emission.iter().map(|&e| cell_unchecked(e, l)).collect();
        let coords = cell.coords();
        let mut alpha: Vec<f64> = (0..s)
            .map(|i| if state_cells[i] == coords[0] { initial[i] } else { 0.0 })
            .collect();
        for &target in &coords[1..] {
            let mut next = vec![0.0; s];
            for (i, &a) in alpha.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &p) in self.transition[i].iter().enumerate() {
                    if state_cells[j] == target {
                        next[j] += a * p;
                    }
                }
            }
            alpha = next;
        }
        alpha.iter().sum()
    }

    fn sample_into<R: Rng>(&self, rng: &mut R, n: usize, out: &mut Vec<f64>) {
        let mut state = self.initial.sample(rng);
        for i in 0..n {
            if i > 0 {
                state = self.rows[state].sample(rng);
            }
            out.push(self.emission[state]);
        }
    }

    fn mass_distribution(&self, level: PartitionLevel) -> Result<Vec<(CellIndex, f64)>> {
        let l = level.l;
        let state_cells: Vec<i64> = self.emission.iter().map(|&e| cell_unchecked(e, l)).collect();
        // (cells so far, current state) -> probability
        let mut frontier: FxHashMap<(CellIndex, usize), f64> = FxHashMap::default();
        for (i, &p) in self.stationary.iter().enumerate() {
            if p > 0.0 {
                *frontier
                    .entry((CellIndex::new(&[state_cells[i]]), i))
                    .or_insert(0.0) += p;
            }
        }
        for _ in 1..level.m {
            let mut next: FxHashMap<(CellIndex, usize), f64> = FxHashMap::default();
            for ((cells, i), p) in frontier {
                for (j, &q) in self.transition[i].iter().enumerate() {
                    if q > 0.0 {
                        let mut c = cells.clone();
                        c.0.push(state_cells[j]);
                        *next.entry((c, j)).or_insert(0.0) += p * q;
                    }
                }
            }
            if next.len() > MAX_MASS_CELLS {
                return Err(too_many_cells(level));
            }
            frontier = next;
        }
        let mut out: FxHashMap<CellIndex, f64> = FxHashMap::default();
        for ((cells, _), p) in frontier {
            *out.entry(cells).or_insert(0.0) += p;
        }
        Ok(sorted(out))
    }
}

fn too_many_cells(level: PartitionLevel) -> Error {
    Error::Capability(format!(
        "mass-cell enumeration at level ({level}) exceeds {MAX_MASS_CELLS} cells"
    ))
}

fn sorted(map: FxHashMap<CellIndex, f64>) -> Vec<(CellIndex, f64)> {
    let mut v: Vec<_> = map.into_iter().filter(|(_, p)| *p > 0.0).collect();
    v.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    v
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut depth = vec![None; adj.len()];
    depth[start] = Some(0);
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let d = depth[u].unwrap();
        for &v in &adj[u] {
            if depth[v].is_none() {
                depth[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    depth
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Irreducibility by forward and backward reachability from state 0;
/// aperiodicity by the gcd of BFS-level discrepancies along edges.
fn check_ergodic(transition: &[Vec<f64>]) -> Result<()> {
    let s = transition.len();
    let mut fwd = vec![Vec::new(); s];
    let mut bwd = vec![Vec::new(); s];
    for (i, row) in transition.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                fwd[i].push(j);
                bwd[j].push(i);
            }
        }
    }
    let depth = reachable(&fwd, 0);
    if depth.iter().any(Option::is_none) || reachable(&bwd, 0).iter().any(Option::is_none) {
        return Err(Error::model("transition", "chain is not irreducible"));
    }
    let mut period = 0;
    for (i, targets) in fwd.iter().enumerate() {
        for &j in targets {
            let di = depth[i].unwrap();
            let dj = depth[j].unwrap();
            period = gcd(period, (di + 1).abs_diff(dj));
        }
    }
    if period != 1 {
        return Err(Error::model("transition", format!("chain is periodic with period {period}")));
    }
    Ok(())
}

/// Solves `(P^T - I) pi = 0` with the last equation replaced by `sum(pi) = 1`.
fn stationary_distribution(transition: &[Vec<f64>]) -> Result<Vec<f64>> {
    let s = transition.len();
    let mut a = DMatrix::<f64>::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            a[(i, j)] = transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..s {
        a[(s - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(s);
    b[s - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::model("transition", "stationary equations are singular"))?;
    let mut pi: Vec<f64> = pi.iter().map(|&p| if p < 0.0 && p > -1e-14 { 0.0 } else { p }).collect();
    if pi.iter().any(|&p| p < 0.0) {
        return Err(Error::model("transition", "stationary solution has negative mass"));
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    for j in 0..s {
        let flowed: f64 = (0..s).map(|i| pi[i] * transition[i][j]).sum();
        if (flowed - pi[j]).abs() > STATIONARY_TOL {
            return Err(Error::model("transition", "stationary solve did not converge"));
        }
    }
    Ok(pi)
}

#[derive(Debug, Clone)]
enum Kind {
    IidDiscrete {
        atoms: Vec<f64>,
        probs: Vec<f64>,
        picker: WeightedIndex<f64>,
    },
    PiecewiseUniform {
        breakpoints: Vec<f64>,
        probs: Vec<f64>,
        picker: WeightedIndex<f64>,
    },
    Markov(MarkovSpec),
    Rotation {
        alpha: f64,
    },
}

#[derive(Debug, Clone)]
enum Oracle {
    Exact,
    MonteCarlo { reference: Arc<Sample> },
}

/// A stationary ergodic process law. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ProcessModel {
    spec: ModelSpec,
    kind: Kind,
    oracle: Oracle,
}

fn validate_probs(key: &str, probs: &[f64]) -> Result<WeightedIndex<f64>> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::model(key, "probabilities must be finite and non-negative"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::model(key, format!("probabilities sum to {sum}, expected 1")));
    }
    WeightedIndex::new(probs).map_err(|e| Error::model(key, e.to_string()))
}

/// Rejects angles within `1e-9` of a rational with denominator at most 1000.
fn check_irrational(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::model("alpha", format!("{alpha} is not in (0, 1)")));
    }
    for q in 1..=1000u32 {
        let qa = alpha * q as f64;
        if (qa - qa.round()).abs() < 1e-9 {
            return Err(Error::model(
                "alpha",
                format!("{alpha} is numerically rational (~{}/{q}); rotation would not be ergodic", qa.round()),
            ));
        }
    }
    Ok(())
}

impl ProcessModel {
    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let kind = match &spec {
            ModelSpec::IidDiscrete { atoms, probs } => {
                if atoms.is_empty() {
                    return Err(Error::model("atoms", "at least one atom required"));
                }
                if atoms.len() != probs.len() {
                    return Err(Error::model("probs", format!("{} probs for {} atoms", probs.len(), atoms.len())));
                }
                if let Some(a) = atoms.iter().find(|a| !a.is_finite()) {
                    return Err(Error::model("atoms", format!("non-finite atom {a}")));
                }
                let picker = validate_probs("probs", probs)?;
                Kind::IidDiscrete {
                    atoms: atoms.clone(),
                    probs: probs.clone(),
                    picker,
                }
            }
            ModelSpec::IidPiecewiseUniform { breakpoints, probs } => {
                if breakpoints.len() < 2 {
                    return Err(Error::model("breakpoints", "at least two breakpoints required"));
                }
                if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::model("breakpoints", "must be finite and strictly increasing"));
                }
                if probs.len() != breakpoints.len() - 1 {
                    return Err(Error::model(
                        "probs",
                        format!("{} probs for {} pieces", probs.len(), breakpoints.len() - 1),
                    ));
                }
                let picker = validate_probs("probs", probs)?;
                Kind::PiecewiseUniform {
                    breakpoints: breakpoints.clone(),
                    probs: probs.clone(),
                    picker,
                }
            }
            ModelSpec::FiniteMarkov { transition, emissions } => {
                let mut sorted = emissions.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::model("emissions", "finite-markov emissions must be distinct"));
                }
                Kind::Markov(MarkovSpec::new(transition.clone(), emissions.clone())?)
            }
            ModelSpec::FunctionOfMarkov { transition, emissions } => {
                Kind::Markov(MarkovSpec::new(transition.clone(), emissions.clone())?)
            }
            ModelSpec::Rotation { alpha } => {
                check_irrational(*alpha)?;
                Kind::Rotation { alpha: *alpha }
            }
        };
        Ok(ProcessModel {
            spec,
            kind,
            oracle: Oracle::Exact,
        })
    }

    /// Replaces the exact oracle by frequencies of one internal run of
    /// length `run_length`, generated from `seed`.
    pub fn with_monte_carlo_oracle(mut self, run_length: usize, seed: u64) -> Result<Self> {
        if run_length == 0 {
            return Err(Error::model("mc_length", "must be positive"));
        }
        let reference = self.sample(run_length, seed)?;
        self.oracle = Oracle::MonteCarlo {
            reference: Arc::new(reference),
        };
        Ok(self)
    }

    /// Parses a JSON model specification. Besides the kind-specific keys,
    /// `oracle` (`"exact"` or `"monte-carlo"`), `mc_length` and `mc_seed`
    /// are accepted.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let value = serde_json::to_value(value)?;
        Self::from_value(value)
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json { Self::from_json(&text) } else { Self::from_toml(&text) };
        parsed.map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            Error::Config(c) => Error::Config(format!("{}: {c}", path.display())),
            other => other,
        })
    }

    pub fn from_value(mut value: serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("model specification must be a table/object".into()))?;
        let oracle = obj.remove("oracle");
        let mc_length = obj.remove("mc_length");
        let mc_seed = obj.remove("mc_seed");
        let spec: ModelSpec = serde_json::from_value(value).map_err(|e| Error::Config(format!("model: {e}")))?;
        let model = Self::from_spec(spec)?;
        let oracle: OracleKind = match oracle {
            None => OracleKind::Exact,
            Some(v) => serde_json::from_value(v).map_err(|e| Error::model("oracle", e.to_string()))?,
        };
        match oracle {
            OracleKind::Exact => {
                if mc_length.is_some() || mc_seed.is_some() {
                    return Err(Error::model("mc_length", "only meaningful with oracle = \"monte-carlo\""));
                }
                Ok(model)
            }
            OracleKind::MonteCarlo => {
                let len = match mc_length {
                    None => DEFAULT_MC_LENGTH,
                    Some(v) => v
                        .as_u64()
                        .ok_or_else(|| Error::model("mc_length", "must be a positive integer"))?
                        as usize,
                };
                let seed = match mc_seed {
                    None => 0,
                    Some(v) => v.as_u64().ok_or_else(|| Error::model("mc_seed", "must be a non-negative integer"))?,
                };
                model.with_monte_carlo_oracle(len, seed)
            }
        }
    }

    pub fn iid_discrete(atoms: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Self::from_spec(ModelSpec::IidDiscrete { atoms, probs })
    }

    /// I.i.d. coin on `{0, 1}` with `P(1) = p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        Self::iid_discrete(vec![0.0, 1.0], vec![1.0 - p, p])
    }

    pub fn fair_coin() -> Self {
        Self::bernoulli(0.5).expect("valid")
    }

    pub fn piecewise_uniform(breakpoints: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Self::from_spec(ModelSpec::IidPiecewiseUniform { breakpoints, probs })
    }

    pub fn uniform_unit() -> Self {
        Self::piecewise_uniform(vec![0.0, 1.0], vec![1.0]).expect("valid")
    }

    pub fn finite_markov(transition: Vec<Vec<f64>>, emissions: Vec<f64>) -> Result<Self> {
        Self::from_spec(ModelSpec::FiniteMarkov { transition, emissions })
    }

    pub fn function_of_markov(transition: Vec<Vec<f64>>, emissions: Vec<f64>) -> Result<Self> {
        Self::from_spec(ModelSpec::FunctionOfMarkov { transition, emissions })
    }

    /// Two-state chain on `{0, 1}` that keeps its state with probability
    /// `p_stay`; its marginal is uniform for every `p_stay`.
    pub fn symmetric_markov(p_stay: f64) -> Result<Self> {
        Self::finite_markov(
            vec![vec![p_stay, 1.0 - p_stay], vec![1.0 - p_stay, p_stay]],
            vec![0.0, 1.0],
        )
    }

    pub fn rotation(alpha: f64) -> Result<Self> {
        Self::from_spec(ModelSpec::Rotation { alpha })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn oracle_kind(&self) -> OracleKind {
        match self.oracle {
            Oracle::Exact => OracleKind::Exact,
            Oracle::MonteCarlo { .. } => OracleKind::MonteCarlo,
        }
    }

    pub fn capabilities(&self) -> Capabilities {
        let exact = matches!(self.oracle, Oracle::Exact);
        Capabilities {
            exact_cell_prob: exact,
            enumerate_mass_cells: exact,
        }
    }

    pub fn markov(&self) -> Option<&MarkovSpec> {
        match &self.kind {
            Kind::Markov(spec) => Some(spec),
            _ => None,
        }
    }

    /// Length-`n` sample from the stationary law; a deterministic function
    /// of the model parameters, `n` and `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(Error::Range("sample length must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_with(&mut rng, n))
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R, n: usize) -> Sample {
        let mut out = Vec::with_capacity(n);
        match &self.kind {
            Kind::IidDiscrete { atoms, picker, .. } => {
                out.extend((0..n).map(|_| atoms[picker.sample(rng)]));
            }
            Kind::PiecewiseUniform {
                breakpoints, picker, ..
            } => {
                for _ in 0..n {
                    let k = picker.sample(rng);
                    let (lo, hi) = (breakpoints[k], breakpoints[k + 1]);
                    let u: f64 = rng.random();
                    // guard against rounding up to the excluded right end
                    let x = lo + u * (hi - lo);
                    out.push(if x < hi { x } else { lo });
                }
            }
            Kind::Markov(spec) => spec.sample_into(rng, n, &mut out),
            Kind::Rotation { alpha } => {
                let theta: f64 = rng.random();
                out.extend((1..=n).map(|i| (theta + i as f64 * alpha).rem_euclid(1.0)));
            }
        }
        Sample::from_finite(out)
    }

    /// Exact stationary probability that an `m`-tuple falls in `cell`.
    pub fn cell_prob(&self, cell: &CellIndex, level: PartitionLevel) -> Result<f64> {
        if !matches!(self.oracle, Oracle::Exact) {
            return Err(Error::Capability(
                "model has only a Monte Carlo oracle; use approx_cell_prob".into(),
            ));
        }
        if cell.len() != level.m {
            return Err(Error::LevelMismatch(format!("cell {cell}"), level.to_string()));
        }
        Ok(self.exact_cell_prob(cell, level))
    }

    fn exact_cell_prob(&self, cell: &CellIndex, level: PartitionLevel) -> f64 {
        let l = level.l;
        match &self.kind {
            Kind::IidDiscrete { atoms, probs, .. } => cell
                .coords()
                .iter()
                .map(|&j| {
                    atoms
                        .iter()
                        .zip(probs)
                        .filter(|(&a, _)| cell_unchecked(a, l) == j)
                        .map(|(_, &p)| p)
                        .sum::<f64>()
                })
                .product(),
            Kind::PiecewiseUniform {
                breakpoints, probs, ..
            } => {
                let w = level.width();
                cell.coords()
                    .iter()
                    .map(|&j| piecewise_mass(breakpoints, probs, j as f64 * w, (j + 1) as f64 * w))
                    .product()
            }
            Kind::Markov(spec) => spec.window_prob(spec.stationary(), cell, l),
            Kind::Rotation { alpha } => rotation_cell_prob(*alpha, cell, l),
        }
    }

    /// Frequency of `cell` in a fresh run of length `run_length`.
    pub fn monte_carlo_cell_prob(
        &self,
        cell: &CellIndex,
        level: PartitionLevel,
        run_length: usize,
        seed: u64,
    ) -> Result<McEstimate> {
        let run = self.sample(run_length, seed)?;
        estimate_from(&run, cell, level)
    }

    /// Exact probability when available, otherwise the Monte Carlo oracle's
    /// estimate with its standard error.
    pub fn approx_cell_prob(&self, cell: &CellIndex, level: PartitionLevel) -> Result<McEstimate> {
        match &self.oracle {
            Oracle::Exact => Ok(McEstimate {
                prob: self.cell_prob(cell, level)?,
                std_err: 0.0,
                run_length: 0,
            }),
            Oracle::MonteCarlo { reference } => estimate_from(reference, cell, level),
        }
    }

    /// Every cell with positive stationary mass at `level`.
    pub fn mass_cells(&self, level: PartitionLevel) -> Result<Vec<CellIndex>> {
        Ok(self.mass_distribution(level)?.into_iter().map(|(c, _)| c).collect())
    }

    /// Mass-bearing cells with their probabilities, sorted by cell.
    pub fn mass_distribution(&self, level: PartitionLevel) -> Result<Vec<(CellIndex, f64)>> {
        if !self.capabilities().enumerate_mass_cells {
            return Err(Error::Capability("model cannot enumerate mass-bearing cells".into()));
        }
        let l = level.l;
        match &self.kind {
            Kind::IidDiscrete { atoms, probs, .. } => {
                let mut marginal: FxHashMap<i64, f64> = FxHashMap::default();
                for (&a, &p) in atoms.iter().zip(probs) {
                    if p > 0.0 {
                        *marginal.entry(cell_unchecked(a, l)).or_insert(0.0) += p;
                    }
                }
                let mut marginal: Vec<_> = marginal.into_iter().collect();
                marginal.sort_unstable_by_key(|e| e.0);
                product_cells(&marginal, level)
            }
            Kind::PiecewiseUniform {
                breakpoints, probs, ..
            } => {
                let w = level.width();
                let first = cell_unchecked(breakpoints[0], l);
                let last = (breakpoints[breakpoints.len() - 1] / w).ceil() as i64 - 1;
                let count = (last - first + 1).max(0) as usize;
                if count > MAX_MASS_CELLS {
                    return Err(too_many_cells(level));
                }
                let marginal: Vec<(i64, f64)> = (first..=last)
                    .map(|j| (j, piecewise_mass(breakpoints, probs, j as f64 * w, (j + 1) as f64 * w)))
                    .filter(|(_, p)| *p > 0.0)
                    .collect();
                product_cells(&marginal, level)
            }
            Kind::Markov(spec) => spec.mass_distribution(level),
            Kind::Rotation { alpha } => rotation_mass_distribution(*alpha, level),
        }
    }

    /// The per-level probability source used by the model-based distance.
    pub(crate) fn level_oracle(&self, level: PartitionLevel) -> Result<LevelOracle<'_>> {
        match &self.oracle {
            Oracle::Exact => Ok(LevelOracle::Exact(self, level)),
            Oracle::MonteCarlo { reference } => Ok(LevelOracle::Table(cylinder::freq_table(
                reference, level.m, level.l,
            )?)),
        }
    }
}

pub(crate) enum LevelOracle<'a> {
    Exact(&'a ProcessModel, PartitionLevel),
    Table(FreqTable),
}

impl LevelOracle<'_> {
    pub(crate) fn prob(&self, cell: &CellIndex) -> f64 {
        match self {
            LevelOracle::Exact(model, level) => model.exact_cell_prob(cell, *level),
            LevelOracle::Table(t) => t.frequency(cell),
        }
    }
}

fn estimate_from(run: &Sample, cell: &CellIndex, level: PartitionLevel) -> Result<McEstimate> {
    let table = cylinder::freq_table(run, level.m, level.l)?;
    let prob = table.frequency(cell);
    let denom = table.denominator().max(1) as f64;
    Ok(McEstimate {
        prob,
        std_err: (prob * (1.0 - prob) / denom).sqrt(),
        run_length: run.len(),
    })
}

/// Mass of `[lo, hi)` under a piecewise-uniform density.
fn piecewise_mass(breakpoints: &[f64], probs: &[f64], lo: f64, hi: f64) -> f64 {
    breakpoints
        .windows(2)
        .zip(probs)
        .map(|(piece, &p)| {
            let overlap = hi.min(piece[1]) - lo.max(piece[0]);
            if overlap > 0.0 {
                p * overlap / (piece[1] - piece[0])
            } else {
                0.0
            }
        })
        .sum()
}

/// Cartesian power of a per-coordinate marginal for i.i.d. models.
fn product_cells(marginal: &[(i64, f64)], level: PartitionLevel) -> Result<Vec<(CellIndex, f64)>> {
    let total = (marginal.len() as f64).powi(level.m as i32);
    if total > MAX_MASS_CELLS as f64 {
        return Err(too_many_cells(level));
    }
    let mut out: Vec<(CellIndex, f64)> = vec![(CellIndex(SmallVec::new()), 1.0)];
    for _ in 0..level.m {
        let mut next = Vec::with_capacity(out.len() * marginal.len());
        for (cell, p) in &out {
            for &(j, q) in marginal {
                let mut c = cell.clone();
                c.0.push(j);
                next.push((c, p * q));
            }
        }
        out = next;
    }
    out.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Half-open arcs of the unit circle as disjoint subintervals of `[0, 1)`.
fn arc(start: f64, len: f64) -> SmallVec<[(f64, f64); 2]> {
    let s = start.rem_euclid(1.0);
    let e = s + len;
    if e <= 1.0 {
        SmallVec::from_slice(&[(s, e)])
    } else {
        SmallVec::from_slice(&[(s, 1.0), (0.0, e - 1.0)])
    }
}

/// Lebesgue measure of the set of phases `theta` for which
/// `frac(theta + k alpha)` lies in coordinate `k`'s interval for every `k`.
fn rotation_cell_prob(alpha: f64, cell: &CellIndex, l: u32) -> f64 {
    let cells_per_unit = 1i64 << l;
    let w = f64::powi(2.0, -(l as i32));
    if cell.coords().iter().any(|&j| j < 0 || j >= cells_per_unit) {
        return 0.0;
    }
    let mut set: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    for (k, &j) in cell.coords().iter().enumerate() {
        let constraint = arc(j as f64 * w - k as f64 * alpha, w);
        let mut next = Vec::new();
        for &(a, b) in &set {
            for &(c, d) in &constraint {
                let lo = a.max(c);
                let hi = b.min(d);
                if hi > lo {
                    next.push((lo, hi));
                }
            }
        }
        if next.is_empty() {
            return 0.0;
        }
        set = next;
    }
    set.iter().map(|(a, b)| b - a).sum()
}

/// Partitions the circle of phases at every point where some coordinate
/// crosses a dyadic boundary; each resulting arc maps to a single cell.
fn rotation_mass_distribution(alpha: f64, level: PartitionLevel) -> Result<Vec<(CellIndex, f64)>> {
    let l = level.l;
    let cells_per_unit = 1usize << l;
    let points = level.m.saturating_mul(cells_per_unit);
    if points > MAX_MASS_CELLS {
        return Err(too_many_cells(level));
    }
    let w = level.width();
    let mut cuts = Vec::with_capacity(points + 2);
    cuts.push(0.0);
    cuts.push(1.0);
    for k in 0..level.m {
        for j in 0..cells_per_unit {
            cuts.push((j as f64 * w - k as f64 * alpha).rem_euclid(1.0));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut mass: FxHashMap<CellIndex, f64> = FxHashMap::default();
    for pair in cuts.windows(2) {
        let len = pair[1] - pair[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (pair[0] + pair[1]);
        let cell = CellIndex(
            (0..level.m)
                .map(|k| cell_unchecked((mid + k as f64 * alpha).rem_euclid(1.0), l))
                .collect(),
        );
        *mass.entry(cell).or_insert(0.0) += len;
    }
    Ok(sorted(mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lvl(m: usize, l: u32) -> PartitionLevel {
        PartitionLevel::new(m, l).unwrap()
    }

    #[test]
    fn fair_coin_cells() {
        let coin = ProcessModel::fair_coin();
        assert_eq!(coin.cell_prob(&CellIndex::new(&[0, 1]), lvl(2, 0)).unwrap(), 0.25);
        let cells = coin.mass_cells(lvl(2, 0)).unwrap();
        let want: Vec<_> = [[0, 0], [0, 1], [1, 0], [1, 1]].iter().map(|c| CellIndex::new(c)).collect();
        assert_eq!(cells, want);
    }

    #[test]
    fn two_state_chain_hand_values() {
        let chain = ProcessModel::finite_markov(vec![vec![0.8, 0.2], vec![0.2, 0.8]], vec![0.0, 1.0]).unwrap();
        let pi = chain.markov().unwrap().stationary();
        assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
        let p = chain.cell_prob(&CellIndex::new(&[0, 0]), lvl(2, 0)).unwrap();
        assert!((p - 0.4).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_chain_stationary() {
        let chain = ProcessModel::finite_markov(vec![vec![0.9, 0.1], vec![0.3, 0.7]], vec![0.0, 1.0]).unwrap();
        let pi = chain.markov().unwrap().stationary();
        assert!((pi[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rotation_uniform_marginal() {
        let rot = ProcessModel::rotation(2f64.sqrt() - 1.0).unwrap();
        let p = rot.cell_prob(&CellIndex::new(&[0]), lvl(1, 1)).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        let total: f64 = rot.mass_distribution(lvl(2, 1)).unwrap().iter().map(|c| c.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn piecewise_cells() {
        let u = ProcessModel::uniform_unit();
        let cells = u.mass_cells(lvl(1, 2)).unwrap();
        assert_eq!(cells, (0..4).map(|j| CellIndex::new(&[j])).collect::<Vec<_>>());
        assert_eq!(u.cell_prob(&CellIndex::new(&[3]), lvl(1, 2)).unwrap(), 0.25);
        assert_eq!(u.cell_prob(&CellIndex::new(&[4]), lvl(1, 2)).unwrap(), 0.0);
    }

    #[test]
    fn validation_errors_name_the_key() {
        let err = ProcessModel::finite_markov(vec![vec![0.5, 0.4], vec![0.5, 0.5]], vec![0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidModel { ref key, .. } if key == "transition"), "{err}");
        // periodic
        let err = ProcessModel::finite_markov(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("periodic"), "{err}");
        // reducible
        let err = ProcessModel::finite_markov(vec![vec![1.0, 0.0], vec![0.5, 0.5]], vec![0.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("irreducible"), "{err}");
        let err = ProcessModel::finite_markov(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidModel { ref key, .. } if key == "emissions"));
        assert!(ProcessModel::function_of_markov(vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![1.0, 1.0]).is_ok());
        assert!(ProcessModel::rotation(0.5).is_err());
        assert!(ProcessModel::rotation(0.25 + 1e-12).is_err());
        assert!(ProcessModel::bernoulli(1.5).is_err());
        assert!(ProcessModel::piecewise_uniform(vec![1.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_supported() {
        let coin = ProcessModel::fair_coin();
        let a = coin.sample(5, 11).unwrap();
        assert_eq!(a.len(), 5);
        assert!(a.values().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(a, coin.sample(5, 11).unwrap());
        assert!(coin.sample(0, 1).is_err());
    }

    #[test]
    fn markov_stay_frequency() {
        let chain = ProcessModel::symmetric_markov(0.9).unwrap();
        let x = chain.sample(100_000, 3).unwrap();
        let stays = x.values().windows(2).filter(|w| w[0] == w[1]).count();
        let freq = stays as f64 / (x.len() - 1) as f64;
        assert!((freq - 0.9).abs() < 0.01, "{freq}");
    }

    #[test]
    fn spec_parsing() {
        let m = ProcessModel::from_toml(
            "kind = \"finite-markov\"\ntransition = [[0.8, 0.2], [0.2, 0.8]]\nemissions = [0.0, 1.0]\n",
        )
        .unwrap();
        assert!(m.markov().is_some());
        let m = ProcessModel::from_json(r#"{"kind": "rotation", "alpha": 0.41421356237309503}"#).unwrap();
        assert_eq!(m.oracle_kind(), OracleKind::Exact);
        let err = ProcessModel::from_json(r#"{"kind": "rotation", "alpha": 0.414, "beta": 1}"#).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
        let err = ProcessModel::from_json(r#"{"kind": "iid-discrete", "atoms": [0, 1], "probs": [0.5]}"#).unwrap_err();
        assert!(err.to_string().contains("probs"), "{err}");
        assert!(ProcessModel::from_json(r#"{"kind": "garch"}"#).is_err());
    }

    #[test]
    fn monte_carlo_oracle() {
        let m = ProcessModel::from_json(
            r#"{"kind": "iid-discrete", "atoms": [0, 1], "probs": [0.5, 0.5], "oracle": "monte-carlo", "mc_length": 20000}"#,
        )
        .unwrap();
        assert!(!m.capabilities().exact_cell_prob);
        assert!(matches!(m.cell_prob(&CellIndex::new(&[0]), lvl(1, 0)), Err(Error::Capability(_))));
        assert!(matches!(m.mass_cells(lvl(1, 0)), Err(Error::Capability(_))));
        let est = m.approx_cell_prob(&CellIndex::new(&[0]), lvl(1, 0)).unwrap();
        assert!((est.prob - 0.5).abs() < 4.0 * est.std_err + 1e-12, "{est:?}");
        assert!(est.std_err > 0.0);
    }

    #[test]
    fn mass_cell_cap() {
        let u = ProcessModel::uniform_unit();
        assert!(matches!(u.mass_cells(lvl(4, 8)), Err(Error::Capability(_))));
    }
}
