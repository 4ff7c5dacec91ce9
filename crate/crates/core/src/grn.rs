//! Patterns, networks and the synchronous threshold dynamics.
//!
//! Orientation: `W[i][j]` is the influence of regulator gene `j` on regulated gene `i`, and one
//! update step computes `s'_i = sigma(sum_j W[i][j] * s_j)` with `sigma(x) = +1` for `x > 0` and
//! `-1` otherwise. The regulators of gene `u` are the nonzero entries of row `u`.
//!
//! Internally states are packed into `u32` bit sets, bit `j` set iff gene `j` is active (`+1`),
//! which limits networks to [`MAX_GENES`] genes.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest supported gene count; the exact fitness enumerates `2^N` states.
pub const MAX_GENES: usize = 16;

/// Regulation horizon used throughout the model.
pub const DEFAULT_HORIZON: usize = 20;

/// How a perturbed start is judged against its target.
///
/// Under [`Recovery::Visit`] a start counts as recovered as soon as its trajectory passes through
/// the target before the horizon, even if it then moves on; a trajectory cycling through several
/// targets is credited for each. Under [`Recovery::Settle`] only where the trajectory stands at the
/// horizon matters, so a start maps to one end state whichever target it is scored against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recovery {
    Visit,
    #[default]
    Settle,
}

impl FromStr for Recovery {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "visit" => Ok(Self::Visit),
            "settle" => Ok(Self::Settle),
            other => Err(format!("unknown recovery rule {other:?} (expected visit|settle)")),
        }
    }
}

impl fmt::Display for Recovery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Visit => "visit",
            Self::Settle => "settle",
        })
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 || n > MAX_GENES {
        return Err(Error::UnsupportedSize(n));
    }
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// A gene activation state over `{-1, +1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pattern {
    states: Vec<i8>,
}

impl Pattern {
    pub fn new(states: Vec<i8>) -> Result<Self> {
        check_size(states.len())?;
        if let Some(&bad) = states.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::InvalidState(bad as i64));
        }
        Ok(Self { states })
    }

    pub fn from_bits(bits: u32, n: usize) -> Result<Self> {
        check_size(n)?;
        let states = (0..n).map(|j| if bits >> j & 1 == 1 { 1 } else { -1 }).collect();
        Ok(Self { states })
    }

    pub fn bits(&self) -> u32 {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .fold(0, |acc, (j, _)| acc | 1 << j)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[i8] {
        &self.states
    }

    pub fn negated(&self) -> Self {
        Self { states: self.states.iter().map(|s| -s).collect() }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<&str> = self.states.iter().map(|&s| if s > 0 { "+1" } else { "-1" }).collect();
        f.write_str(&tokens.join(" "))
    }
}

impl FromStr for Pattern {
    type Err = Error;

    /// Parses whitespace-separated `+1`/`-1` (also `1`, `+`, `-`, and the Unicode minus).
    fn from_str(s: &str) -> Result<Self> {
        let states = s
            .split_whitespace()
            .map(|tok| match tok.replace('\u{2212}', "-").as_str() {
                "+1" | "1" | "+" => Ok(1),
                "-1" | "-" => Ok(-1),
                _ => Err(Error::PatternToken(tok.to_string())),
            })
            .collect::<Result<Vec<i8>>>()?;
        Pattern::new(states)
    }
}

/// A ternary `N x N` interaction matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Grn {
    n: usize,
    weights: Vec<i8>,
}

impl Grn {
    pub fn zeros(n: usize) -> Result<Self> {
        check_size(n)?;
        Ok(Self { n, weights: vec![0; n * n] })
    }

    pub fn new(n: usize, weights: Vec<i8>) -> Result<Self> {
        check_size(n)?;
        check_len(n * n, weights.len())?;
        if let Some(&bad) = weights.iter().find(|w| !(-1..=1).contains(*w)) {
            return Err(Error::InvalidWeight(bad as i64));
        }
        Ok(Self { n, weights })
    }

    pub fn from_rows<R: AsRef<[i8]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut weights = Vec::with_capacity(n * n);
        for row in rows {
            check_len(n, row.as_ref().len())?;
            weights.extend_from_slice(row.as_ref());
        }
        Self::new(n, weights)
    }

    /// `value` on the diagonal, zero elsewhere.
    pub fn diagonal(n: usize, value: i8) -> Result<Self> {
        let mut g = Self::zeros(n)?;
        for i in 0..n {
            g.set(i, i, value);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[i8] {
        &self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.weights[row * self.n + col]
    }

    /// Panics if `value` is not ternary or indices are out of bounds.
    pub fn set(&mut self, row: usize, col: usize, value: i8) {
        assert!((-1..=1).contains(&value), "non-ternary weight {value}");
        self.weights[row * self.n + col] = value;
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.weights[row * self.n..(row + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.weights.chunks(self.n)
    }

    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0).count()
    }

    /// Number of regulators of gene `u` (nonzero entries of row `u`).
    pub fn regulator_count(&self, u: usize) -> usize {
        self.row(u).iter().filter(|&&w| w != 0).count()
    }

    pub fn negated(&self) -> Self {
        Self { n: self.n, weights: self.weights.iter().map(|w| -w).collect() }
    }

    /// The square sub-matrix with rows and columns in `range`.
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<Vec<i8>> {
        rows.map(|i| cols.clone().map(|j| self.get(i, j)).collect()).collect()
    }

    /// Copies `block` into this matrix with its top-left corner at `(row, col)`.
    pub fn place_block<R: AsRef<[i8]>>(&mut self, row: usize, col: usize, block: &[R]) {
        for (di, r) in block.iter().enumerate() {
            for (dj, &w) in r.as_ref().iter().enumerate() {
                self.set(row + di, col + dj, w);
            }
        }
    }

    pub(crate) fn wiring(&self) -> Wiring {
        Wiring::new(self)
    }
}

impl Grn {
    /// One-line encoding: rows of `+`, `-` and `0` separated by `/`.
    pub fn to_compact(&self) -> String {
        let rows: Vec<String> = self
            .rows()
            .map(|row| {
                row.iter()
                    .map(|&w| match w {
                        1 => '+',
                        -1 => '-',
                        _ => '0',
                    })
                    .collect()
            })
            .collect();
        rows.join("/")
    }

    pub fn from_compact(s: &str) -> Result<Self> {
        let rows = s
            .trim()
            .split('/')
            .map(|row| {
                row.chars()
                    .map(|c| match c {
                        '+' => Ok(1),
                        '-' => Ok(-1),
                        '0' => Ok(0),
                        other => Err(Error::PatternToken(other.to_string())),
                    })
                    .collect::<Result<Vec<i8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

impl fmt::Display for Grn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|w| format!("{w:>2}")).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// A `{-1, +1}` mask multiplied elementwise into a pattern. Its weight is the number of `-1`s.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ElementaryPerturbation {
    mask: Vec<i8>,
}

impl ElementaryPerturbation {
    pub fn new(mask: Vec<i8>) -> Result<Self> {
        Pattern::new(mask.clone())?;
        Ok(Self { mask })
    }

    /// Mask flipping exactly the genes whose bits are set in `flips`.
    pub fn from_flips(flips: u32, n: usize) -> Result<Self> {
        check_size(n)?;
        let mask = (0..n).map(|j| if flips >> j & 1 == 1 { -1 } else { 1 }).collect();
        Ok(Self { mask })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_flips(0, n)
    }

    pub fn mask(&self) -> &[i8] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.mask.iter().filter(|&&m| m == -1).count()
    }

    /// Weight restricted to the positions in `range` (e.g. the second module).
    pub fn weight_in(&self, range: std::ops::Range<usize>) -> usize {
        self.mask[range].iter().filter(|&&m| m == -1).count()
    }

    /// Bit set of flipped positions.
    pub fn flips(&self) -> u32 {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == -1)
            .fold(0, |acc, (j, _)| acc | 1 << j)
    }
}

/// Per-row bit masks of activating and repressing regulators.
#[derive(Clone, Debug)]
pub(crate) struct Wiring {
    n: usize,
    activators: Vec<u32>,
    repressors: Vec<u32>,
}

impl Wiring {
    fn new(g: &Grn) -> Self {
        let mut activators = vec![0u32; g.n];
        let mut repressors = vec![0u32; g.n];
        for (i, row) in g.rows().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                match w {
                    1 => activators[i] |= 1 << j,
                    -1 => repressors[i] |= 1 << j,
                    _ => {}
                }
            }
        }
        Self { n: g.n, activators, repressors }
    }

    #[inline]
    pub(crate) fn step(&self, state: u32) -> u32 {
        let inactive = !state;
        let mut next = 0u32;
        for i in 0..self.n {
            let (a, r) = (self.activators[i], self.repressors[i]);
            // +1 contributions minus -1 contributions of the weighted sum.
            let up = (a & state).count_ones() + (r & inactive).count_ones();
            let down = (a & inactive).count_ones() + (r & state).count_ones();
            if up > down {
                next |= 1 << i;
            }
        }
        next
    }

    /// Runs the dynamics from `start`; returns `target` as soon as it is visited within the
    /// first `horizon` states, otherwise the state after `horizon` steps.
    #[inline]
    pub(crate) fn regulate(&self, start: u32, target: u32, horizon: usize) -> u32 {
        let mut state = start;
        for _ in 0..horizon {
            if state == target {
                return target;
            }
            state = self.step(state);
        }
        state
    }

    /// State after `horizon` steps, stopping early at a fixed point.
    pub(crate) fn settle(&self, start: u32, horizon: usize) -> u32 {
        let mut state = start;
        for _ in 0..horizon {
            let next = self.step(state);
            if next == state {
                break;
            }
            state = next;
        }
        state
    }

    pub(crate) fn recover(&self, start: u32, target: u32, horizon: usize, rule: Recovery) -> u32 {
        match rule {
            Recovery::Visit => self.regulate(start, target, horizon),
            Recovery::Settle => self.settle(start, horizon),
        }
    }

    /// Successor of every one of the `2^N` states.
    pub(crate) fn transition_table(&self) -> Vec<u32> {
        (0..1u32 << self.n).map(|s| self.step(s)).collect()
    }
}

/// One synchronous update `sigma(W s)`.
pub fn step(g: &Grn, s: &Pattern) -> Result<Pattern> {
    check_len(g.n, s.len())?;
    let next = g.wiring().step(s.bits());
    Pattern::from_bits(next, g.n)
}

/// Iterates the dynamics for at most `horizon` steps, returning `target` early when reached.
pub fn regulate(g: &Grn, start: &Pattern, target: &Pattern, horizon: usize) -> Result<Pattern> {
    check_len(g.n, start.len())?;
    check_len(g.n, target.len())?;
    if horizon == 0 {
        return Err(Error::OutOfRange { what: "horizon", value: 0.0, min: 1.0, max: f64::INFINITY });
    }
    let end = g.wiring().regulate(start.bits(), target.bits(), horizon);
    Pattern::from_bits(end, g.n)
}

/// End state of `start` under `rule`: [`regulate`] for [`Recovery::Visit`], the state after
/// `horizon` steps for [`Recovery::Settle`].
pub fn recover(g: &Grn, start: &Pattern, target: &Pattern, horizon: usize, rule: Recovery) -> Result<Pattern> {
    check_len(g.n, start.len())?;
    check_len(g.n, target.len())?;
    if horizon == 0 {
        return Err(Error::OutOfRange { what: "horizon", value: 0.0, min: 1.0, max: f64::INFINITY });
    }
    let end = g.wiring().recover(start.bits(), target.bits(), horizon, rule);
    Pattern::from_bits(end, g.n)
}

/// Elementwise product `e ⊙ s`.
pub fn apply_perturbation(e: &ElementaryPerturbation, s: &Pattern) -> Result<Pattern> {
    check_len(e.len(), s.len())?;
    Ok(Pattern { states: e.mask.iter().zip(&s.states).map(|(m, x)| m * x).collect() })
}

/// Hamming distance divided by the pattern length.
pub fn hamming_fraction(a: &Pattern, b: &Pattern) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let differing = a.states.iter().zip(&b.states).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / a.len() as f64)
}
