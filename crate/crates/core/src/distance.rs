//! Empirical distributional distance.
//!
//! Cylinders are weighted level by level: every cell of level `(m, l)`
//! carries the weight `w(m, l) = 2^-(m+l)`, and the per-level statistic is
//! the L1 distance between the two frequency vectors (at most 2). Only the
//! levels `1 <= m <= m_max`, `0 <= l <= l_max` are evaluated; the bound on
//! everything omitted travels with every result as `tail_bound`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cylinder::{check_cell_range, FreqTable, PartitionLevel, WindowTuples};
use crate::error::{Error, Result};
use crate::models::{LevelOracle, ProcessModel};
use crate::sample::Sample;

pub const DEFAULT_M_MAX: usize = 3;
pub const DEFAULT_L_MAX: u32 = 8;
pub const MAX_M: usize = 64;
pub const MAX_L: u32 = 52;

/// Truncation of the weighted cylinder sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightScheme {
    #[serde(alias = "m-max")]
    pub m_max: usize,
    #[serde(alias = "l-max")]
    pub l_max: u32,
}

impl Default for WeightScheme {
    fn default() -> Self {
        WeightScheme {
            m_max: DEFAULT_M_MAX,
            l_max: DEFAULT_L_MAX,
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m_max={}, l_max={}", self.m_max, self.l_max)
    }
}

impl WeightScheme {
    pub fn new(m_max: usize, l_max: u32) -> Result<Self> {
        let s = WeightScheme { m_max, l_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_max == 0 {
            return Err(Error::InvalidScheme("m_max must be at least 1".into()));
        }
        if self.m_max > MAX_M {
            return Err(Error::InvalidScheme(format!("m_max must be at most {MAX_M}")));
        }
        if self.l_max > MAX_L {
            return Err(Error::InvalidScheme(format!("l_max must be at most {MAX_L}")));
        }
        Ok(())
    }

    /// `2^-(m+l)`.
    pub fn weight(m: usize, l: u32) -> f64 {
        f64::powi(2.0, -(m as i32 + l as i32))
    }

    /// In-scheme levels in the fixed summation order (m outer, l inner).
    pub fn levels(&self) -> impl Iterator<Item = PartitionLevel> + '_ {
        (1..=self.m_max).flat_map(move |m| (0..=self.l_max).map(move |l| PartitionLevel { m, l }))
    }

    /// Total weight of the in-scheme levels.
    pub fn included_weight(&self) -> f64 {
        (1.0 - f64::powi(2.0, -(self.m_max as i32))) * (2.0 - f64::powi(2.0, -(self.l_max as i32)))
    }

    /// `2 * sum of omitted weights`: each omitted level contributes at most 2.
    pub fn tail_bound(&self) -> f64 {
        2.0 * (2.0 - self.included_weight())
    }

    /// Upper bound on any in-scheme distance value.
    pub fn max_value(&self) -> f64 {
        2.0 * self.included_weight()
    }

    /// A strictly deeper scheme.
    pub fn deepen(&self, dm: usize, dl: u32) -> Result<WeightScheme> {
        WeightScheme::new(self.m_max + dm, self.l_max + dl)
    }
}

/// A truncated distance together with the bound on what truncation omitted:
/// the untruncated distance lies in `[value, value + tail_bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceValue {
    pub value: f64,
    pub tail_bound: f64,
    pub m_max: usize,
    pub l_max: u32,
}

impl DistanceValue {
    fn new(value: f64, scheme: &WeightScheme) -> Self {
        DistanceValue {
            value,
            tail_bound: scheme.tail_bound(),
            m_max: scheme.m_max,
            l_max: scheme.l_max,
        }
    }

    pub fn scheme(&self) -> WeightScheme {
        WeightScheme {
            m_max: self.m_max,
            l_max: self.l_max,
        }
    }

    pub fn upper(&self) -> f64 {
        self.value + self.tail_bound
    }
}

/// Outcome of comparing two truncated distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertifiedOrder {
    Less,
    Greater,
    Undecided,
}

/// Orders `a` and `b` only when the truncation intervals cannot overlap.
pub fn compare_certified(a: &DistanceValue, b: &DistanceValue) -> Result<CertifiedOrder> {
    if a.scheme() != b.scheme() {
        return Err(Error::SchemeMismatch(a.scheme().to_string(), b.scheme().to_string()));
    }
    Ok(if a.upper() < b.value {
        CertifiedOrder::Less
    } else if b.upper() < a.value {
        CertifiedOrder::Greater
    } else {
        CertifiedOrder::Undecided
    })
}

/// `sum_c |a_c * S - b_c * P|` over the union of occupied cells, where
/// `P`, `S` are the two denominators. Exact integer arithmetic.
fn cross_abs_sum(f: &FreqTable, g: &FreqTable) -> u128 {
    let p = f.denominator() as u128;
    let s = g.denominator() as u128;
    let (fc, gc) = (f.cells(), g.cells());
    let (mut i, mut j) = (0, 0);
    let mut total: u128 = 0;
    while i < fc.len() || j < gc.len() {
        let ord = match (fc.get(i), gc.get(j)) {
            (Some(a), Some(b)) => a.0.cmp(&b.0),
            (Some(_), None) => Ordering::Less,
            _ => Ordering::Greater,
        };
        let (a, b) = match ord {
            Ordering::Less => {
                i += 1;
                (fc[i - 1].1 as u128, 0)
            }
            Ordering::Greater => {
                j += 1;
                (0, gc[j - 1].1 as u128)
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
                (fc[i - 1].1 as u128, gc[j - 1].1 as u128)
            }
        };
        total += (a * s).abs_diff(b * p);
    }
    total
}

/// Level statistic from the exact cross sum and the two denominators.
/// An empty side has frequency 0 everywhere, so against a non-empty side
/// the statistic is that side's total mass, 1.
#[inline]
pub(crate) fn level_stat(cross: u128, p: u64, s: u64) -> f64 {
    match (p, s) {
        (0, 0) => 0.0,
        (0, _) | (_, 0) => 1.0,
        _ => cross as f64 / (p as f64 * s as f64),
    }
}

/// `sum_c |nu_F(c) - nu_G(c)|` over one partition level.
pub fn level_tv(f: &FreqTable, g: &FreqTable) -> Result<f64> {
    if f.level() != g.level() {
        return Err(Error::LevelMismatch(f.level().to_string(), g.level().to_string()));
    }
    Ok(level_stat(cross_abs_sum(f, g), f.denominator(), g.denominator()))
}

/// `sum_c |nu(c) - rho(c)|` over one level. Unoccupied cells are accounted
/// for in closed form as `1 - sum_{occupied} rho(c)`.
pub fn level_tv_vs_model(f: &FreqTable, model: &ProcessModel) -> Result<f64> {
    let oracle = model.level_oracle(f.level())?;
    Ok(tv_against(f, &oracle))
}

fn tv_against(f: &FreqTable, oracle: &LevelOracle<'_>) -> f64 {
    if f.is_empty() {
        return 1.0;
    }
    let denom = f.denominator() as f64;
    let mut occupied_diff = 0.0;
    let mut occupied_mass = 0.0;
    for (cell, count) in f.cells() {
        let rho = oracle.prob(cell);
        occupied_diff += (*count as f64 / denom - rho).abs();
        occupied_mass += rho;
    }
    occupied_diff + (1.0 - occupied_mass).max(0.0)
}

/// Weighted sum of level statistics in the scheme's fixed order.
pub(crate) fn combine<I: IntoIterator<Item = f64>>(scheme: &WeightScheme, stats: I) -> f64 {
    scheme
        .levels()
        .zip(stats)
        .fold(0.0, |acc, (lvl, stat)| acc + WeightScheme::weight(lvl.m, lvl.l) * stat)
}

/// All frequency tables of a scheme for one sample, in `levels()` order.
pub(crate) fn scheme_tables(x: &Sample, scheme: &WeightScheme) -> Result<Vec<FreqTable>> {
    check_cell_range(x.values(), scheme.l_max)?;
    let tuples = WindowTuples::build(x.values(), scheme.m_max);
    let mut out = Vec::with_capacity(scheme.m_max * (scheme.l_max as usize + 1));
    for m in 1..=scheme.m_max {
        let counts = tuples.tuple_counts(m);
        for l in 0..=scheme.l_max {
            out.push(tuples.table(&counts, m, l));
        }
    }
    Ok(out)
}

/// d̂(X, Y): symmetric, zero on identical samples.
pub fn dhat(x: &Sample, y: &Sample, scheme: &WeightScheme) -> Result<DistanceValue> {
    scheme.validate()?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::Range("distance needs non-empty samples".into()));
    }
    let tx = scheme_tables(x, scheme)?;
    let ty = scheme_tables(y, scheme)?;
    let stats = tx
        .iter()
        .zip(&ty)
        .map(|(f, g)| level_stat(cross_abs_sum(f, g), f.denominator(), g.denominator()));
    Ok(DistanceValue::new(combine(scheme, stats), scheme))
}

/// d̂(X, ρ) against a known process law.
pub fn dhat_model(x: &Sample, model: &ProcessModel, scheme: &WeightScheme) -> Result<DistanceValue> {
    PreparedModel::new(model, scheme)?.distance(x)
}

/// A model with its per-level oracles built once for a fixed scheme, for
/// evaluating d̂(X, ρ) on many samples.
pub struct PreparedModel<'a> {
    scheme: WeightScheme,
    oracles: Vec<LevelOracle<'a>>,
}

impl<'a> PreparedModel<'a> {
    pub fn new(model: &'a ProcessModel, scheme: &WeightScheme) -> Result<Self> {
        scheme.validate()?;
        let oracles = scheme
            .levels()
            .map(|lvl| model.level_oracle(lvl))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedModel {
            scheme: *scheme,
            oracles,
        })
    }

    pub fn scheme(&self) -> &WeightScheme {
        &self.scheme
    }

    pub fn distance(&self, x: &Sample) -> Result<DistanceValue> {
        if x.is_empty() {
            return Err(Error::Range("distance needs a non-empty sample".into()));
        }
        let tables = scheme_tables(x, &self.scheme)?;
        let stats = tables.iter().zip(&self.oracles).map(|(f, o)| tv_against(f, o));
        Ok(DistanceValue::new(combine(&self.scheme, stats), &self.scheme))
    }
}

/// Exact truncated distance d(ρ1, ρ2) between two laws, from their
/// mass-bearing cells.
pub fn model_distance(a: &ProcessModel, b: &ProcessModel, scheme: &WeightScheme) -> Result<DistanceValue> {
    scheme.validate()?;
    let mut stats = Vec::new();
    for level in scheme.levels() {
        let pa = a.mass_distribution(level)?;
        let pb = b.mass_distribution(level)?;
        let (mut i, mut j) = (0, 0);
        let mut total = 0.0;
        while i < pa.len() || j < pb.len() {
            let ord = match (pa.get(i), pb.get(j)) {
                (Some(x), Some(y)) => x.0.cmp(&y.0),
                (Some(_), None) => Ordering::Less,
                _ => Ordering::Greater,
            };
            total += match ord {
                Ordering::Less => {
                    i += 1;
                    pa[i - 1].1
                }
                Ordering::Greater => {
                    j += 1;
                    pb[j - 1].1
                }
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                    (pa[i - 1].1 - pb[j - 1].1).abs()
                }
            };
        }
        stats.push(total);
    }
    Ok(DistanceValue::new(combine(scheme, stats), scheme))
}
