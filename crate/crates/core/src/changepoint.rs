//! Offline single change-point estimation.
//!
//! The estimate is the split `t` maximizing d̂ between the prefix
//! `U^t = Z[..t]` and the suffix `V^t = Z[t..]`, searched over
//! `[b(n), n - b(n)]` for a boundary `b(n)` that is `o(n)` and grows without
//! bound (`ceil(sqrt(n))` by default). Windows are counted inside the prefix
//! or inside the suffix only; windows straddling `t` belong to neither.

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::cylinder::{check_cell_range, CellIndex, FreqTable, PartitionLevel, WindowTuples};
use crate::distance::{combine, level_stat, WeightScheme};
use crate::error::{Error, Result};
use crate::sample::Sample;

/// Largest series length the scan accepts; keeps the per-level cross sums
/// inside `u64`.
pub const MAX_SCAN_LEN: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub t: usize,
    pub dhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangePointEstimate {
    pub k_hat: usize,
    pub boundary: usize,
    pub n: usize,
    pub scan: Vec<ScanPoint>,
}

/// Boundary function `b(n)`, given as an arithmetic expression in `n`.
///
/// Supported: numbers, `n`, `+ - * / ^`, parentheses, and the functions
/// `sqrt`, `log` (natural), `ln`, `log2`. The value at `n` is rounded up and
/// floored at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    source: String,
    expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    N,
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sqrt,
    Ln,
    Log2,
}

impl Expr {
    fn eval(&self, n: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::N => n,
            Expr::Neg(e) => -e.eval(n),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(n), b.eval(n));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(n);
                match f {
                    Func::Sqrt => v.sqrt(),
                    Func::Ln => v.ln(),
                    Func::Log2 => v.log2(),
                }
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Config(format!(
            "boundary expression {:?}: {msg} at offset {}",
            String::from_utf8_lossy(self.src),
            self.pos
        ))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(op as char, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.power()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(op as char, Box::new(lhs), Box::new(self.power()?));
        }
        Ok(lhs)
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.power()?;
            return Ok(Expr::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_digit() || matches!(self.src[self.pos], b'.' | b'e' | b'E'))
                {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                text.parse().map(Expr::Num).map_err(|_| self.err("bad number"))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                let func = match name {
                    "n" => return Ok(Expr::N),
                    "sqrt" => Func::Sqrt,
                    "log" | "ln" => Func::Ln,
                    "log2" => Func::Log2,
                    _ => return Err(self.err(&format!("unknown name {name:?}"))),
                };
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.expect(b')')?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            _ => Err(self.err("expected a number, `n`, a function or '('")),
        }
    }
}

impl Boundary {
    pub fn sqrt() -> Self {
        "sqrt(n)".parse().expect("valid")
    }

    /// `b(n)` for a series of length `n`.
    pub fn at(&self, n: usize) -> Result<usize> {
        let v = self.expr.eval(n as f64);
        if !v.is_finite() {
            return Err(Error::Config(format!("boundary {:?} is not finite at n = {n}", self.source)));
        }
        Ok(v.ceil().max(1.0) as usize)
    }
}

impl Default for Boundary {
    fn default() -> Self {
        Boundary::sqrt()
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser {
            src: s.as_bytes(),
            pos: 0,
        };
        let expr = p.expr()?;
        if p.peek().is_some() {
            return Err(p.err("trailing input"));
        }
        Ok(Boundary {
            source: s.trim().to_string(),
            expr,
        })
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Prefix and suffix counts of one partition level over a dense numbering
/// of the cells that occur anywhere in the series.
///
/// The cross sum `sum_c |a_c S - b_c P|` splits into cells occupied only in
/// the prefix (contributing `a_c S`), only in the suffix (`b_c P`), and on
/// both sides. The one-sided totals are kept as running sums, so each split
/// costs time proportional to the number of two-sided cells only.
struct LevelCounts {
    level: PartitionLevel,
    window_cell: Vec<u32>,
    cells: Vec<CellIndex>,
    prefix: Vec<u64>,
    suffix: Vec<u64>,
    /// Sum of `a_c` over cells with `b_c = 0`.
    prefix_only: u64,
    /// Sum of `b_c` over cells with `a_c = 0`.
    suffix_only: u64,
    shared: Vec<u32>,
    /// Position of each cell in `shared`, or `NONE`.
    slot: Vec<u32>,
}

const NONE: u32 = u32::MAX;

impl LevelCounts {
    fn new(level: PartitionLevel, window_cell: Vec<u32>, cells: Vec<CellIndex>) -> Self {
        let k = cells.len();
        LevelCounts {
            level,
            window_cell,
            cells,
            prefix: vec![0; k],
            suffix: vec![0; k],
            prefix_only: 0,
            suffix_only: 0,
            shared: Vec::new(),
            slot: vec![NONE; k],
        }
    }

    fn share(&mut self, c: usize) {
        self.slot[c] = self.shared.len() as u32;
        self.shared.push(c as u32);
    }

    fn unshare(&mut self, c: usize) {
        let pos = self.slot[c] as usize;
        self.shared.swap_remove(pos);
        if let Some(&moved) = self.shared.get(pos) {
            self.slot[moved as usize] = pos as u32;
        }
        self.slot[c] = NONE;
    }

    fn add_prefix(&mut self, c: usize) {
        let (a, b) = (self.prefix[c], self.suffix[c]);
        if b == 0 {
            self.prefix_only += 1;
        } else if a == 0 {
            self.suffix_only -= b;
            self.share(c);
        }
        self.prefix[c] = a + 1;
    }

    fn add_suffix(&mut self, c: usize) {
        let (a, b) = (self.prefix[c], self.suffix[c]);
        if a == 0 {
            self.suffix_only += 1;
        } else if b == 0 {
            self.prefix_only -= a;
            self.share(c);
        }
        self.suffix[c] = b + 1;
    }

    fn remove_suffix(&mut self, c: usize) {
        let (a, b) = (self.prefix[c], self.suffix[c]);
        if a == 0 {
            self.suffix_only -= 1;
        } else if b == 1 {
            self.prefix_only += a;
            self.unshare(c);
        }
        self.suffix[c] = b - 1;
    }

    fn cross_sum(&self, p: u64, s: u64) -> u64 {
        let two_sided: u64 = self
            .shared
            .iter()
            .map(|&c| (self.prefix[c as usize] * s).abs_diff(self.suffix[c as usize] * p))
            .sum();
        self.prefix_only * s + self.suffix_only * p + two_sided
    }

    fn table(&self, counts: &[u64], denominator: u64) -> FreqTable {
        let map: FxHashMap<CellIndex, u64> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (self.cells[i].clone(), c))
            .collect();
        FreqTable::from_map(self.level, map, denominator)
    }
}

/// Prefix/suffix frequency tables of every scheme level, updated in place
/// as the split point advances.
pub struct IncrementalScan {
    n: usize,
    t: usize,
    scheme: WeightScheme,
    levels: Vec<LevelCounts>,
}

impl IncrementalScan {
    /// Tables for the split at `t` (`1 <= t < n`).
    pub fn new(z: &Sample, scheme: &WeightScheme, t: usize) -> Result<Self> {
        scheme.validate()?;
        let n = z.len();
        if n > MAX_SCAN_LEN {
            return Err(Error::Range(format!("series length {n} exceeds {MAX_SCAN_LEN}")));
        }
        if t == 0 || t >= n {
            return Err(Error::Range(format!("split {t} outside 1..{n}")));
        }
        check_cell_range(z.values(), scheme.l_max)?;
        let tuples = WindowTuples::build(z.values(), scheme.m_max);
        let mut levels = Vec::with_capacity(scheme.levels().count());
        for level in scheme.levels() {
            let m = level.m;
            let mut dense: FxHashMap<CellIndex, u32> = FxHashMap::default();
            let mut cells = Vec::new();
            let tuple_cell: Vec<u32> = (0..tuples.distinct(m))
                .map(|id| {
                    let cell = tuples.cell(m, id as u32, level.l);
                    *dense.entry(cell.clone()).or_insert_with(|| {
                        cells.push(cell);
                        cells.len() as u32 - 1
                    })
                })
                .collect();
            let window_cell: Vec<u32> = tuples.ids(m).iter().map(|&id| tuple_cell[id as usize]).collect();
            let mut lc = LevelCounts::new(level, window_cell, cells);
            for i in 0..lc.window_cell.len() {
                let c = lc.window_cell[i] as usize;
                if i + m <= t {
                    lc.add_prefix(c);
                } else if i >= t {
                    lc.add_suffix(c);
                }
            }
            levels.push(lc);
        }
        Ok(IncrementalScan {
            n,
            t,
            scheme: *scheme,
            levels,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Total number of cells tracked over all levels. Each level tracks at
    /// most one cell per window, so this is at most `levels * n`.
    pub fn tracked_cells(&self) -> usize {
        self.levels.iter().map(|lc| lc.cells.len()).sum()
    }

    fn denominators(&self, m: usize) -> (u64, u64) {
        let p = (self.t + 1).saturating_sub(m) as u64;
        let s = (self.n - self.t + 1).saturating_sub(m) as u64;
        (p, s)
    }

    /// Moves the split from `t` to `t + 1`: the window ending at `t + 1`
    /// joins the prefix and the window starting at `t + 1` leaves the suffix
    /// (1-based positions).
    pub fn advance(&mut self) -> Result<()> {
        if self.t + 1 >= self.n {
            return Err(Error::Range(format!("cannot advance past split {}", self.t)));
        }
        let t = self.t;
        for lc in &mut self.levels {
            let m = lc.level.m;
            if t + 1 >= m {
                let c = lc.window_cell[t + 1 - m] as usize;
                lc.add_prefix(c);
            }
            if t + m <= self.n {
                let c = lc.window_cell[t] as usize;
                lc.remove_suffix(c);
            }
        }
        self.t += 1;
        Ok(())
    }

    /// d̂(U^t, V^t) at the current split.
    pub fn value(&self) -> f64 {
        let stats = self.levels.iter().map(|lc| {
            let (p, s) = self.denominators(lc.level.m);
            let cross = if p == 0 || s == 0 { 0 } else { lc.cross_sum(p, s) };
            level_stat(cross as u128, p, s)
        });
        combine(&self.scheme, stats)
    }

    /// Prefix table of the `idx`-th scheme level (in `WeightScheme::levels` order).
    pub fn prefix_table(&self, idx: usize) -> FreqTable {
        let lc = &self.levels[idx];
        lc.table(&lc.prefix, self.denominators(lc.level.m).0)
    }

    pub fn suffix_table(&self, idx: usize) -> FreqTable {
        let lc = &self.levels[idx];
        lc.table(&lc.suffix, self.denominators(lc.level.m).1)
    }
}

/// `(t, d̂(U^t, V^t))` for every `t` in `[lo, hi]`.
pub fn scan_range(z: &Sample, scheme: &WeightScheme, lo: usize, hi: usize) -> Result<Vec<ScanPoint>> {
    if lo > hi {
        return Err(Error::Range(format!("empty scan range [{lo}, {hi}]")));
    }
    let mut state = IncrementalScan::new(z, scheme, lo)?;
    let mut out = Vec::with_capacity(hi - lo + 1);
    loop {
        out.push(ScanPoint {
            t: state.t(),
            dhat: state.value(),
        });
        if state.t() == hi {
            break;
        }
        state.advance()?;
    }
    Ok(out)
}

fn search_range(n: usize, boundary: &Boundary) -> Result<(usize, usize)> {
    let b = boundary.at(n)?;
    if n < 2 * b || n - b < b || n < 4 {
        return Err(Error::Range(format!(
            "series of length {n} leaves no split in [{b}, n - {b}]"
        )));
    }
    Ok((b, n - b))
}

/// Scan over the default search range `[ceil(sqrt n), n - ceil(sqrt n)]`.
pub fn incremental_scan(z: &Sample, scheme: &WeightScheme) -> Result<Vec<ScanPoint>> {
    let (lo, hi) = search_range(z.len(), &Boundary::default())?;
    scan_range(z, scheme, lo, hi)
}

pub fn estimate_changepoint(z: &Sample, scheme: &WeightScheme) -> Result<ChangePointEstimate> {
    estimate_changepoint_with(z, scheme, &Boundary::default())
}

/// Smallest maximizer of the scan over `[b(n), n - b(n)]`.
pub fn estimate_changepoint_with(
    z: &Sample,
    scheme: &WeightScheme,
    boundary: &Boundary,
) -> Result<ChangePointEstimate> {
    let n = z.len();
    let (lo, hi) = search_range(n, boundary)?;
    let scan = scan_range(z, scheme, lo, hi)?;
    let mut best = scan[0];
    for p in &scan[1..] {
        if p.dhat > best.dhat {
            best = *p;
        }
    }
    Ok(ChangePointEstimate {
        k_hat: best.t,
        boundary: lo,
        n,
        scan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::dhat;

    #[test]
    fn boundary_grammar() {
        let b: Boundary = "sqrt(n)".parse().unwrap();
        assert_eq!(b.at(100).unwrap(), 10);
        assert_eq!(b.at(101).unwrap(), 11);
        let b: Boundary = "2*log(n) + 1".parse().unwrap();
        assert_eq!(b.at(1000).unwrap(), (2.0 * 1000f64.ln() + 1.0).ceil() as usize);
        let b: Boundary = "n^0.4".parse().unwrap();
        assert_eq!(b.at(1024).unwrap(), 1024f64.powf(0.4).ceil() as usize);
        let b: Boundary = "5".parse().unwrap();
        assert_eq!(b.at(1000).unwrap(), 5);
        let b: Boundary = "-(3)".parse().unwrap();
        assert_eq!(b.at(10).unwrap(), 1);
        assert!("sqrt(n".parse::<Boundary>().is_err());
        assert!("exp(n)".parse::<Boundary>().is_err());
        assert!("n n".parse::<Boundary>().is_err());
        assert!("1/(n-n)".parse::<Boundary>().unwrap().at(4).is_err());
    }

    #[test]
    fn constant_series() {
        let z = Sample::new(vec![0.25; 64]).unwrap();
        let est = estimate_changepoint(&z, &WeightScheme::default()).unwrap();
        assert!(est.scan.iter().all(|p| p.dhat == 0.0));
        assert_eq!(est.k_hat, 8);
        assert_eq!(est.boundary, 8);
    }

    #[test]
    fn too_short() {
        let z = Sample::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(estimate_changepoint(&z, &WeightScheme::default()), Err(Error::Range(_))));
        let z = Sample::new(vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let est = estimate_changepoint(&z, &WeightScheme::default()).unwrap();
        assert_eq!(est.k_hat, 2);
        assert_eq!(est.scan.len(), 1);
    }

    #[test]
    fn short_windows_match_naive() {
        let z = Sample::new(vec![0.1, 0.9, 0.4, 0.4, 0.8, 0.05, 0.6, 0.3]).unwrap();
        let sc = WeightScheme::new(4, 3).unwrap();
        let scan = scan_range(&z, &sc, 1, 7).unwrap();
        for p in scan {
            let naive = dhat(&z.slice(0, p.t), &z.slice(p.t, z.len()), &sc).unwrap().value;
            assert_eq!(p.dhat.to_bits(), naive.to_bits(), "t={}", p.t);
        }
    }

    #[test]
    fn obvious_change() {
        let mut v = vec![0.1; 40];
        v.extend(vec![0.9; 60]);
        let z = Sample::new(v).unwrap();
        let est = estimate_changepoint(&z, &WeightScheme::default()).unwrap();
        assert_eq!(est.k_hat, 40);
        assert!(est.k_hat >= est.boundary && est.k_hat <= est.n - est.boundary);
    }
}
