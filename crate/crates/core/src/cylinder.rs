//! Dyadic cylinder sets and sliding-window frequencies.
//!
//! The countable generating family of cylinders is realized as a doubly
//! indexed hierarchy: at level `(m, l)` the cells are products of `m`
//! half-open intervals `[j 2^-l, (j+1) 2^-l)`. Cells at a fixed level
//! partition `R^m`, so a value lying exactly on a dyadic boundary belongs to
//! the cell on its right.

use std::cmp::Ordering;
use std::fmt;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::sample::Sample;

/// Largest magnitude a scaled coordinate may reach before `cell_of` refuses it.
const CELL_LIMIT: f64 = 4_611_686_018_427_387_904.0; // 2^62

/// Index `j` of the dyadic interval `[j 2^-l, (j+1) 2^-l)` containing `x`.
pub fn cell_of(x: f64, l: u32) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::NonFinite { index: 0, value: x });
    }
    let scaled = scale(x, l);
    if scaled.abs() >= CELL_LIMIT {
        return Err(Error::CellOutOfRange { value: x, level: l });
    }
    Ok(scaled.floor() as i64)
}

// Multiplication by a power of two is exact barring overflow/underflow.
#[inline]
fn scale(x: f64, l: u32) -> f64 {
    x * f64::powi(2.0, l as i32)
}

#[inline]
pub(crate) fn cell_unchecked(x: f64, l: u32) -> i64 {
    scale(x, l).floor() as i64
}

/// Validates that every value of `values` has a representable cell at
/// resolution `l_max` (and hence at every coarser one).
pub(crate) fn check_cell_range(values: &[f64], l_max: u32) -> Result<()> {
    match values.iter().find(|&&x| scale(x, l_max).abs() >= CELL_LIMIT) {
        Some(&value) => Err(Error::CellOutOfRange { value, level: l_max }),
        None => Ok(()),
    }
}

/// Tuple length `m` and resolution `l` of one partition of `R^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionLevel {
    pub m: usize,
    pub l: u32,
}

impl PartitionLevel {
    pub fn new(m: usize, l: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidScheme("tuple length m must be at least 1".into()));
        }
        Ok(PartitionLevel { m, l })
    }

    /// Side length `2^-l` of a cell.
    pub fn width(&self) -> f64 {
        f64::powi(2.0, -(self.l as i32))
    }

    /// The `2^m` cells one resolution finer that tile `cell`.
    pub fn children(&self, cell: &CellIndex) -> Vec<CellIndex> {
        assert_eq!(cell.len(), self.m);
        (0..1usize << self.m)
            .map(|mask| {
                CellIndex(
                    cell.0
                        .iter()
                        .enumerate()
                        .map(|(k, &j)| 2 * j + ((mask >> k) & 1) as i64)
                        .collect(),
                )
            })
            .collect()
    }

    pub fn finer(&self) -> PartitionLevel {
        PartitionLevel { m: self.m, l: self.l + 1 }
    }
}

impl fmt::Display for PartitionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m={}, l={}", self.m, self.l)
    }
}

/// Integer coordinates of one cell within a [`PartitionLevel`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex(pub SmallVec<[i64; 4]>);

impl CellIndex {
    pub fn new(coords: &[i64]) -> Self {
        CellIndex(SmallVec::from_slice(coords))
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Cell of the window `xs` at resolution `l`; the caller has range-checked `xs`.
    pub(crate) fn of_window(xs: &[f64], l: u32) -> Self {
        CellIndex(xs.iter().map(|&x| cell_unchecked(x, l)).collect())
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, ")")
    }
}

/// A real interval with per-endpoint closedness. Infinite endpoints are
/// always treated as open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidCylinder("NaN endpoint".into()));
        }
        let iv = Interval {
            lo,
            hi,
            lo_closed: lo_closed && lo.is_finite(),
            hi_closed: hi_closed && hi.is_finite(),
        };
        let nonempty = match lo.partial_cmp(&hi) {
            Some(Ordering::Less) => true,
            Some(Ordering::Equal) => iv.lo_closed && iv.hi_closed,
            _ => false,
        };
        if !nonempty {
            return Err(Error::InvalidCylinder(format!("empty interval {iv}")));
        }
        Ok(iv)
    }

    pub fn closed(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo, hi, true, true)
    }

    /// `[lo, hi)`.
    pub fn half_open(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo, hi, true, false)
    }

    pub fn real_line() -> Self {
        Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lo_closed { '[' } else { '(' };
        let close = if self.hi_closed { ']' } else { ')' };
        write!(f, "{open}{}, {}{close}", self.lo, self.hi)
    }
}

/// A product `A_1 x ... x A_m` of intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    intervals: Vec<Interval>,
}

impl Cylinder {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidCylinder("a cylinder needs at least one interval".into()));
        }
        Ok(Cylinder { intervals })
    }

    /// The dyadic cell `cell` at `level` as a cylinder of half-open intervals.
    pub fn from_cell(level: PartitionLevel, cell: &CellIndex) -> Result<Self> {
        if cell.len() != level.m {
            return Err(Error::InvalidCylinder(format!(
                "cell {cell} has {} coordinates, level has m={}",
                cell.len(),
                level.m
            )));
        }
        let w = level.width();
        let intervals = cell
            .coords()
            .iter()
            .map(|&j| Interval::half_open(j as f64 * w, (j + 1) as f64 * w))
            .collect::<Result<Vec<_>>>()?;
        Cylinder::new(intervals)
    }

    /// `|B|`, the number of coordinates constrained.
    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn contains(&self, window: &[f64]) -> bool {
        window.len() == self.dim()
            && self.intervals.iter().zip(window).all(|(iv, &x)| iv.contains(x))
    }
}

/// Window counts of one sample at one partition level. Only occupied cells
/// are stored, sorted by coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqTable {
    level: PartitionLevel,
    cells: Vec<(CellIndex, u64)>,
    denominator: u64,
}

impl FreqTable {
    pub(crate) fn from_map(level: PartitionLevel, map: FxHashMap<CellIndex, u64>, denominator: u64) -> Self {
        let mut cells: Vec<_> = map.into_iter().collect();
        cells.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        debug_assert_eq!(cells.iter().map(|c| c.1).sum::<u64>(), denominator);
        FreqTable {
            level,
            cells,
            denominator,
        }
    }

    pub fn level(&self) -> PartitionLevel {
        self.level
    }

    /// `n - m + 1`, or 0 when the sample is shorter than `m`.
    pub fn denominator(&self) -> u64 {
        self.denominator
    }

    pub fn is_empty(&self) -> bool {
        self.denominator == 0
    }

    /// Occupied cells in ascending coordinate order.
    pub fn cells(&self) -> &[(CellIndex, u64)] {
        &self.cells
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    pub fn count(&self, cell: &CellIndex) -> u64 {
        self.cells
            .binary_search_by(|(c, _)| c.cmp(cell))
            .map(|i| self.cells[i].1)
            .unwrap_or(0)
    }

    /// ν(X, c).
    pub fn frequency(&self, cell: &CellIndex) -> f64 {
        if self.denominator == 0 {
            0.0
        } else {
            self.count(cell) as f64 / self.denominator as f64
        }
    }
}

/// Counts the `n - m + 1` consecutive length-`m` windows of `x` by cell.
pub fn freq_table(x: &Sample, m: usize, l: u32) -> Result<FreqTable> {
    let level = PartitionLevel::new(m, l)?;
    let xs = x.values();
    check_cell_range(xs, l)?;
    if xs.len() < m {
        return Ok(FreqTable::from_map(level, FxHashMap::default(), 0));
    }
    let cells: Vec<i64> = xs.iter().map(|&v| cell_unchecked(v, l)).collect();
    let mut map: FxHashMap<CellIndex, u64> = FxHashMap::default();
    for w in cells.windows(m) {
        *map.entry(CellIndex::new(w)).or_insert(0) += 1;
    }
    Ok(FreqTable::from_map(level, map, (xs.len() - m + 1) as u64))
}

/// ν(X, B): the fraction of length-`|B|` windows of `x` lying in `b`, or 0
/// when `x` is shorter than `|B|`.
pub fn nu(x: &Sample, b: &Cylinder) -> f64 {
    let xs = x.values();
    let m = b.dim();
    if xs.len() < m {
        return 0.0;
    }
    let hits = xs.windows(m).filter(|w| b.contains(w)).count();
    hits as f64 / (xs.len() - m + 1) as f64
}

/// Distinct value-tuples of a sample, interned per tuple length.
///
/// Windows are first identified by the exact values they contain, which is
/// independent of the resolution `l`. Building all tables of a scheme then
/// costs one pass per tuple length plus one pass per level over the distinct
/// tuples only, which is what makes discrete-valued data cheap.
pub(crate) struct WindowTuples<'a> {
    values: &'a [f64],
    /// `ids[m-1][i]`: tuple id of the window starting at `i`.
    ids: Vec<Vec<u32>>,
    /// `reps[m-1][id]`: first start position of tuple `id`.
    reps: Vec<Vec<usize>>,
}

impl<'a> WindowTuples<'a> {
    pub(crate) fn build(values: &'a [f64], m_max: usize) -> Self {
        let n = values.len();
        let mut ids = Vec::with_capacity(m_max);
        let mut reps = Vec::with_capacity(m_max);

        let mut value_ids: FxHashMap<u64, u32> = FxHashMap::default();
        let mut first = Vec::new();
        let mut base = Vec::with_capacity(n);
        for (i, v) in values.iter().enumerate() {
            let next = value_ids.len() as u32;
            let id = *value_ids.entry(v.to_bits()).or_insert_with(|| {
                first.push(i);
                next
            });
            base.push(id);
        }
        ids.push(base);
        reps.push(first);

        for m in 2..=m_max {
            if n < m {
                ids.push(Vec::new());
                reps.push(Vec::new());
                continue;
            }
            let prev = &ids[m - 2];
            let single = &ids[0];
            let mut table: FxHashMap<u64, u32> = FxHashMap::default();
            let mut first = Vec::new();
            let mut cur = Vec::with_capacity(n - m + 1);
            for i in 0..n - m + 1 {
                let key = ((prev[i] as u64) << 32) | single[i + m - 1] as u64;
                let next = table.len() as u32;
                let id = *table.entry(key).or_insert_with(|| {
                    first.push(i);
                    next
                });
                cur.push(id);
            }
            ids.push(cur);
            reps.push(first);
        }
        WindowTuples { values, ids, reps }
    }

    pub(crate) fn ids(&self, m: usize) -> &[u32] {
        &self.ids[m - 1]
    }

    pub(crate) fn distinct(&self, m: usize) -> usize {
        self.reps[m - 1].len()
    }

    /// Cell of tuple `id` (of length `m`) at resolution `l`.
    pub(crate) fn cell(&self, m: usize, id: u32, l: u32) -> CellIndex {
        let start = self.reps[m - 1][id as usize];
        CellIndex::of_window(&self.values[start..start + m], l)
    }

    pub(crate) fn tuple_counts(&self, m: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.distinct(m)];
        for &id in self.ids(m) {
            counts[id as usize] += 1;
        }
        counts
    }

    /// Same table as [`freq_table`], assembled from tuple counts.
    pub(crate) fn table(&self, counts: &[u64], m: usize, l: u32) -> FreqTable {
        let level = PartitionLevel { m, l };
        let mut map: FxHashMap<CellIndex, u64> = FxHashMap::default();
        for (id, &c) in counts.iter().enumerate() {
            *map.entry(self.cell(m, id as u32, l)).or_insert(0) += c;
        }
        let denominator = self.values.len().saturating_sub(m - 1) as u64;
        FreqTable::from_map(level, map, denominator)
    }
}
