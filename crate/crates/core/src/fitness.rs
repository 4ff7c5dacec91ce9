//! Robustness fitness of a network: exact expectation over the binomial perturbation
//! distribution, its Monte-Carlo estimate, and the analytic two-target bound.
//!
//! For a target `s`, a perturbation `e` of weight `n` occurs with probability
//! `p_n / C(N, n)` where `p_n = B(n; N, p)`. The network regulates `e ⊙ s` for up to 20 steps
//! (see [`Recovery`] for how the end state is read), the outcome scores `gamma(H) = (1 - H)^5` on the normalized Hamming distance `H`, and the
//! expected score passes through `f(x) = 1 - exp(-3x)`. Several targets are combined by the
//! arithmetic mean of their per-target fitness.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grn::{ElementaryPerturbation, Grn, Pattern, Recovery, DEFAULT_HORIZON, MAX_GENES};

pub const PERTURBATION_RATE: f64 = 0.15;
pub const STOCHASTIC_SAMPLES: usize = 500;
pub const CACHE_CAPACITY: usize = 1_000_000;

fn check_rate(what: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange { what, value: p, min: 0.0, max: 1.0 });
    }
    Ok(())
}

fn check_weight(weight: usize, n: usize) -> Result<()> {
    if weight > n {
        return Err(Error::OutOfRange { what: "perturbation weight", value: weight as f64, min: 0.0, max: n as f64 });
    }
    Ok(())
}

pub fn binomial_coefficient(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// `C(n, k) p^k (1-p)^(n-k)`.
pub fn binomial_pmf(k: usize, n: usize, p: f64) -> Result<f64> {
    check_weight(k, n)?;
    check_rate("perturbation rate", p)?;
    Ok(binomial_coefficient(n, k) as f64 * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
}

/// Probabilities of each perturbation weight `0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinomialTable {
    n: usize,
    p: f64,
    pmf: Vec<f64>,
}

impl BinomialTable {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        let pmf = (0..=n).map(|k| binomial_pmf(k, n, p)).collect::<Result<_>>()?;
        Ok(Self { n, p, pmf })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }
}

/// Flip masks of weight `weight`, ordered lexicographically by their sorted position sets.
pub(crate) fn flip_masks(n: usize, weight: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(binomial_coefficient(n, weight) as usize);
    let mut positions: Vec<usize> = (0..weight).collect();
    loop {
        out.push(positions.iter().fold(0u32, |acc, &j| acc | 1 << j));
        // advance to the next combination
        let Some(i) = (0..weight).rev().find(|&i| positions[i] < n - weight + i) else {
            return out;
        };
        positions[i] += 1;
        for k in i + 1..weight {
            positions[k] = positions[k - 1] + 1;
        }
    }
}

/// All `C(n, weight)` elementary perturbations of the given weight, in lexicographic order of
/// the flipped positions.
pub fn enumerate_perturbations(n: usize, weight: usize) -> Result<Vec<ElementaryPerturbation>> {
    if n == 0 || n > MAX_GENES {
        return Err(Error::UnsupportedSize(n));
    }
    check_weight(weight, n)?;
    flip_masks(n, weight).into_iter().map(|m| ElementaryPerturbation::from_flips(m, n)).collect()
}

/// Recovery score `(1 - h)^5`.
pub fn gamma(h: f64) -> Result<f64> {
    check_rate("hamming fraction", h)?;
    Ok((1.0 - h).powi(5))
}

/// Fitness transform `1 - exp(-3x)`.
pub fn f_scale(x: f64) -> f64 {
    1.0 - (-3.0 * x).exp()
}

/// Patterns that must currently be restored. Order matters only for reproducible sampling.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TargetSet {
    targets: Vec<Pattern>,
}

impl TargetSet {
    pub fn new(targets: Vec<Pattern>) -> Result<Self> {
        let first = targets.first().ok_or(Error::Empty("target set"))?;
        if let Some(t) = targets.iter().find(|t| t.len() != first.len()) {
            return Err(Error::DimensionMismatch { expected: first.len(), found: t.len() });
        }
        Ok(Self { targets })
    }

    pub fn single(target: Pattern) -> Self {
        Self { targets: vec![target] }
    }

    /// The two standard activation patterns: identical first module, opposite second module.
    pub fn standard_pair() -> Self {
        let (a, b) = standard_targets();
        Self { targets: vec![a, b] }
    }

    pub fn targets(&self) -> &[Pattern] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n(&self) -> usize {
        self.targets[0].len()
    }
}

/// `+1 -1 +1 -1 +1 -1 +1 -1 +1 -1` and `+1 -1 +1 -1 +1 +1 -1 +1 -1 +1`.
pub fn standard_targets() -> (Pattern, Pattern) {
    let first: Vec<i8> = (0..10).map(|j| if j % 2 == 0 { 1 } else { -1 }).collect();
    let second: Vec<i8> = first.iter().enumerate().map(|(j, &s)| if j < 5 { s } else { -s }).collect();
    (Pattern::new(first).unwrap(), Pattern::new(second).unwrap())
}

/// Per-weight flip masks plus the gamma value of every Hamming distance.
#[derive(Clone, Debug)]
struct PerturbationSpace {
    n: usize,
    by_weight: Vec<Vec<u32>>,
    gamma_by_distance: Vec<f64>,
}

impl PerturbationSpace {
    fn new(n: usize) -> Self {
        let by_weight = (0..=n).map(|w| flip_masks(n, w)).collect();
        let gamma_by_distance = (0..=n).map(|d| gamma(d as f64 / n as f64).unwrap()).collect();
        Self { n, by_weight, gamma_by_distance }
    }

    /// Inner expectation (before `f`) for one target given the full transition table.
    fn expected_recovery(&self, next: &[u32], target: u32, horizon: usize, rule: Recovery, pmf: &[f64]) -> f64 {
        let mut total = 0.0;
        for (masks, &pn) in self.by_weight.iter().zip(pmf) {
            let mut acc = 0.0;
            for &m in masks {
                let end = end_state(next, target ^ m, target, horizon, rule);
                acc += self.gamma_by_distance[(end ^ target).count_ones() as usize];
            }
            total += pn * (acc / masks.len() as f64);
        }
        total
    }
}

/// Trajectory end of `start` read off a transition table.
fn end_state(next: &[u32], start: u32, target: u32, horizon: usize, rule: Recovery) -> u32 {
    let mut state = start;
    let mut steps = 0;
    match rule {
        Recovery::Visit => {
            while steps < horizon && state != target {
                state = next[state as usize];
                steps += 1;
            }
        }
        Recovery::Settle => {
            while steps < horizon && next[state as usize] != state {
                state = next[state as usize];
                steps += 1;
            }
        }
    }
    state
}

pub(crate) fn sample_flips<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> u32 {
    (0..n).fold(0u32, |acc, j| if rng.random_bool(p) { acc | 1 << j } else { acc })
}

#[allow(clippy::too_many_arguments)]
fn stochastic_with_table<R: Rng + ?Sized>(
    next: &[u32],
    ts: &TargetSet,
    samples: usize,
    p: f64,
    horizon: usize,
    rule: Recovery,
    gamma_by_distance: &[f64],
    rng: &mut R,
) -> f64 {
    let n = ts.n();
    let per_target = ts.targets().iter().map(|t| {
        let target = t.bits();
        let acc: f64 = (0..samples)
            .map(|_| {
                let start = target ^ sample_flips(n, p, rng);
                let end = end_state(next, start, target, horizon, rule);
                gamma_by_distance[(end ^ target).count_ones() as usize]
            })
            .sum();
        f_scale(acc / samples as f64)
    });
    per_target.sum::<f64>() / ts.len() as f64
}

/// Exact fitness of `g` for a single target under the default [`Recovery`] rule.
pub fn distributional_fitness(g: &Grn, s: &Pattern, table: &BinomialTable) -> Result<f64> {
    multi_target_fitness(g, &TargetSet::single(s.clone()), table)
}

/// Mean over targets of the exact per-target fitness.
pub fn multi_target_fitness(g: &Grn, ts: &TargetSet, table: &BinomialTable) -> Result<f64> {
    let ev = Evaluator::new(table.clone(), EvaluationMode::Distributional)?;
    ev.distributional(g, ts)
}

/// Monte-Carlo fitness under the default [`Recovery`] rule: per target, `samples` perturbations
/// flipping each gene independently with probability `p`; gamma is averaged before `f`, then
/// targets are averaged.
pub fn stochastic_fitness<R: Rng + ?Sized>(
    g: &Grn,
    ts: &TargetSet,
    samples: usize,
    p: f64,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Empty("perturbation sample"));
    }
    check_rate("perturbation rate", p)?;
    if g.n() != ts.n() {
        return Err(Error::DimensionMismatch { expected: g.n(), found: ts.n() });
    }
    let n = g.n();
    let gammas: Vec<f64> = (0..=n).map(|d| gamma(d as f64 / n as f64)).collect::<Result<_>>()?;
    let next = g.wiring().transition_table();
    Ok(stochastic_with_table(&next, ts, samples, p, DEFAULT_HORIZON, Recovery::default(), &gammas, rng))
}

/// Unrecoverable weight-`weight` perturbations for the standard pair of 10-gene targets:
/// masks whose second-module weight is at least 3, `sum_{a+b=weight, b>=3} C(5,a) C(5,b)`.
pub fn unrecoverable_count(weight: usize) -> Result<u64> {
    check_weight(weight, 10)?;
    Ok(unrecoverable_in_module(5, weight))
}

fn unrecoverable_in_module(module: usize, weight: usize) -> u64 {
    let threshold = module / 2 + 1;
    (threshold..=module.min(weight))
        .filter(|&b| weight - b <= module)
        .map(|b| binomial_coefficient(module, weight - b) * binomial_coefficient(module, b))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub weight: usize,
    pub perturbations: u64,
    pub unrecoverable: u64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundBreakdown {
    pub rows: Vec<BoundRow>,
    /// Expected recovery score before the `f` transform.
    pub inner: f64,
    pub bound: f64,
}

/// Expected recovery when each weight class has the given number of unrecoverable masks,
/// each scoring `gamma(1/2)`, and all others recover fully.
pub fn bound_from_unrecoverable(table: &BinomialTable, unrecoverable: &[u64]) -> Result<f64> {
    if unrecoverable.len() != table.n() + 1 {
        return Err(Error::DimensionMismatch { expected: table.n() + 1, found: unrecoverable.len() });
    }
    let half = gamma(0.5)?;
    let inner = table
        .pmf()
        .iter()
        .zip(unrecoverable)
        .enumerate()
        .map(|(w, (&pn, &bad))| {
            let total = binomial_coefficient(table.n(), w);
            let good = total - bad;
            pn * (good as f64 + bad as f64 * half) / total as f64
        })
        .sum();
    Ok(inner)
}

/// Per-weight breakdown of the best attainable fitness for two targets sharing the first
/// module and opposite on the second (module size `n / 2`, which must be odd).
pub fn bound_breakdown(n: usize, p: f64) -> Result<BoundBreakdown> {
    if !n.is_multiple_of(2) || (n / 2).is_multiple_of(2) || n > MAX_GENES {
        return Err(Error::UnsupportedSize(n));
    }
    let table = BinomialTable::new(n, p)?;
    let counts: Vec<u64> = (0..=n).map(|w| unrecoverable_in_module(n / 2, w)).collect();
    let inner = bound_from_unrecoverable(&table, &counts)?;
    let rows = counts
        .iter()
        .enumerate()
        .map(|(w, &bad)| BoundRow {
            weight: w,
            perturbations: binomial_coefficient(n, w),
            unrecoverable: bad,
            probability: table.pmf()[w],
        })
        .collect();
    Ok(BoundBreakdown { rows, inner, bound: f_scale(inner) })
}

pub fn upper_bound_two_target(n: usize, p: f64) -> Result<f64> {
    Ok(bound_breakdown(n, p)?.bound)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    Distributional,
    Stochastic,
}

impl std::str::FromStr for EvaluationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dist" | "distributional" => Ok(Self::Distributional),
            "stoch" | "stochastic" => Ok(Self::Stochastic),
            other => Err(format!("unknown evaluation mode {other:?} (expected dist|stoch)")),
        }
    }
}

impl std::fmt::Display for EvaluationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Distributional => "distributional",
            Self::Stochastic => "stochastic",
        })
    }
}

/// Fitness seen by selection together with its exact equivalent, which is what gets reported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub selection_fitness: f64,
    pub distributional_fitness: f64,
    pub evaluation_mode: EvaluationMode,
}

/// Memo of exact fitness values for one target set.
#[derive(Debug, Default)]
pub struct FitnessCache {
    targets: Option<TargetSet>,
    values: HashMap<Grn, f64>,
    capacity: usize,
    hits: u64,
    misses: u64,
}

impl FitnessCache {
    pub fn new() -> Self {
        Self::with_capacity(CACHE_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self { capacity, ..Default::default() }
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.targets = None;
    }

    fn bind(&mut self, ts: &TargetSet) {
        if self.targets.as_ref() != Some(ts) {
            self.values.clear();
            self.targets = Some(ts.clone());
        }
    }

    fn lookup(&mut self, g: &Grn, ts: &TargetSet) -> Option<f64> {
        self.bind(ts);
        let hit = self.values.get(g).copied();
        if hit.is_some() {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        hit
    }

    fn store(&mut self, g: &Grn, value: f64) {
        if self.values.len() >= self.capacity {
            self.values.clear();
        }
        self.values.insert(g.clone(), value);
    }
}

/// Exact multi-target fitness through `cache`.
pub fn cached_fitness(g: &Grn, ts: &TargetSet, table: &BinomialTable, cache: &mut FitnessCache) -> Result<f64> {
    if let Some(v) = cache.lookup(g, ts) {
        return Ok(v);
    }
    let v = multi_target_fitness(g, ts, table)?;
    cache.store(g, v);
    Ok(v)
}

/// Reusable fitness evaluator holding the binomial weights and the enumerated perturbations.
#[derive(Clone, Debug)]
pub struct Evaluator {
    table: BinomialTable,
    space: PerturbationSpace,
    mode: EvaluationMode,
    samples: usize,
    horizon: usize,
    recovery: Recovery,
}

impl Evaluator {
    pub fn new(table: BinomialTable, mode: EvaluationMode) -> Result<Self> {
        if table.n() == 0 || table.n() > MAX_GENES {
            return Err(Error::UnsupportedSize(table.n()));
        }
        let space = PerturbationSpace::new(table.n());
        Ok(Self { table, space, mode, samples: STOCHASTIC_SAMPLES, horizon: DEFAULT_HORIZON, recovery: Recovery::default() })
    }

    pub fn with_samples(mut self, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Empty("perturbation sample"));
        }
        self.samples = samples;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::OutOfRange { what: "horizon", value: 0.0, min: 1.0, max: f64::INFINITY });
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: EvaluationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_recovery(mut self, recovery: Recovery) -> Self {
        self.recovery = recovery;
        self
    }

    pub fn recovery(&self) -> Recovery {
        self.recovery
    }

    pub fn mode(&self) -> EvaluationMode {
        self.mode
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn table(&self) -> &BinomialTable {
        &self.table
    }

    fn check(&self, g: &Grn, ts: &TargetSet) -> Result<()> {
        if g.n() != self.space.n {
            return Err(Error::DimensionMismatch { expected: self.space.n, found: g.n() });
        }
        if ts.n() != self.space.n {
            return Err(Error::DimensionMismatch { expected: self.space.n, found: ts.n() });
        }
        Ok(())
    }

    fn recovery_from_table(&self, next: &[u32], ts: &TargetSet) -> Vec<f64> {
        ts.targets()
            .iter()
            .map(|t| self.space.expected_recovery(next, t.bits(), self.horizon, self.recovery, self.table.pmf()))
            .collect()
    }

    fn distributional_from_table(&self, next: &[u32], ts: &TargetSet) -> f64 {
        let inner = self.recovery_from_table(next, ts);
        inner.iter().map(|&x| f_scale(x)).sum::<f64>() / inner.len() as f64
    }

    fn stochastic_from_table<R: Rng + ?Sized>(&self, next: &[u32], ts: &TargetSet, rng: &mut R) -> f64 {
        let p = self.table.rate();
        stochastic_with_table(next, ts, self.samples, p, self.horizon, self.recovery, &self.space.gamma_by_distance, rng)
    }

    /// Expected recovery score of each target, before the `f` transform.
    pub fn expected_recovery(&self, g: &Grn, ts: &TargetSet) -> Result<Vec<f64>> {
        self.check(g, ts)?;
        Ok(self.recovery_from_table(&g.wiring().transition_table(), ts))
    }

    /// Exact mean-over-targets fitness.
    pub fn distributional(&self, g: &Grn, ts: &TargetSet) -> Result<f64> {
        self.check(g, ts)?;
        Ok(self.distributional_from_table(&g.wiring().transition_table(), ts))
    }

    pub fn distributional_cached(&self, g: &Grn, ts: &TargetSet, cache: &mut FitnessCache) -> Result<f64> {
        if let Some(v) = cache.lookup(g, ts) {
            return Ok(v);
        }
        let v = self.distributional(g, ts)?;
        cache.store(g, v);
        Ok(v)
    }

    /// One fresh Monte-Carlo estimate with this evaluator's sample count and horizon.
    pub fn stochastic<R: Rng + ?Sized>(&self, g: &Grn, ts: &TargetSet, rng: &mut R) -> Result<f64> {
        self.check(g, ts)?;
        Ok(self.stochastic_from_table(&g.wiring().transition_table(), ts, rng))
    }

    /// Fitness report in the configured mode; the exact value is always filled in.
    pub fn evaluate<R: Rng + ?Sized>(
        &self,
        g: &Grn,
        ts: &TargetSet,
        cache: Option<&mut FitnessCache>,
        rng: &mut R,
    ) -> Result<FitnessReport> {
        self.check(g, ts)?;
        // the transition table is built at most once and only when something needs it
        let mut next: Option<Vec<u32>> = None;
        let table = || g.wiring().transition_table();
        let exact = match cache {
            Some(c) => match c.lookup(g, ts) {
                Some(v) => v,
                None => {
                    let v = self.distributional_from_table(next.insert(table()), ts);
                    c.store(g, v);
                    v
                }
            },
            None => self.distributional_from_table(next.insert(table()), ts),
        };
        let selection = match self.mode {
            EvaluationMode::Distributional => exact,
            EvaluationMode::Stochastic => {
                let next = next.get_or_insert_with(table);
                self.stochastic_from_table(next, ts, rng)
            }
        };
        Ok(FitnessReport { selection_fitness: selection, distributional_fitness: exact, evaluation_mode: self.mode })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grn::{apply_perturbation, hamming_fraction, recover};
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table() -> BinomialTable {
        BinomialTable::new(10, 0.15).unwrap()
    }

    /// Exact fitness straight from the definition: enumerate every perturbation of every
    /// weight, regulate it from scratch, score, weight, transform.
    fn reference_fitness(g: &Grn, s: &Pattern, p: f64) -> f64 {
        reference_fitness_with(g, s, p, Recovery::default())
    }

    fn reference_fitness_with(g: &Grn, s: &Pattern, p: f64, rule: Recovery) -> f64 {
        let n = s.len();
        let mut total = 0.0;
        for w in 0..=n {
            let es = enumerate_perturbations(n, w).unwrap();
            let mut acc = 0.0;
            for e in &es {
                let start = apply_perturbation(e, s).unwrap();
                let end = recover(g, &start, s, 20, rule).unwrap();
                acc += gamma(hamming_fraction(&end, s).unwrap()).unwrap();
            }
            let pn = binomial_pmf(w, n, p).unwrap();
            total += pn * (acc / es.len() as f64);
        }
        f_scale(total)
    }

    fn patterned_block() -> Vec<Vec<i8>> {
        (0..5).map(|r| (0..5).map(|c| if (r + c) % 2 == 0 { 1 } else { -1 }).collect()).collect()
    }

    /// Shared module always driven to `+1 -1 +1 -1 +1`, patterned majority block on the second.
    fn optimum() -> Grn {
        let mut g = Grn::zeros(10).unwrap();
        for i in [0, 2, 4] {
            g.set(i, 1, -1);
            g.set(i, 3, -1);
            g.set(i, i, 1);
        }
        g.place_block(5, 5, &patterned_block());
        g
    }

    #[test]
    fn pmf_examples() {
        assert_abs_diff_eq!(binomial_pmf(1, 10, 0.15).unwrap(), 0.35, epsilon = 0.005);
        assert_abs_diff_eq!(binomial_pmf(0, 10, 0.15).unwrap(), 0.85f64.powi(10), epsilon = 1e-15);
        assert_abs_diff_eq!(binomial_pmf(0, 10, 0.15).unwrap(), 0.19687, epsilon = 1e-5);
        assert!(binomial_pmf(11, 10, 0.15).is_err());
        assert!(binomial_pmf(1, 10, 1.5).is_err());
        // rounded weight probabilities listed for the standard setting
        let rounded: Vec<f64> = table().pmf().iter().map(|p| (p * 100.0).round() / 100.0).collect();
        assert_eq!(rounded, vec![0.20, 0.35, 0.28, 0.13, 0.04, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn enumeration_counts_and_order() {
        let zero = enumerate_perturbations(10, 0).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].weight(), 0);
        assert_eq!(enumerate_perturbations(10, 3).unwrap().len(), 120);
        let all: std::collections::HashSet<u32> =
            (0..=10).flat_map(|w| enumerate_perturbations(10, w).unwrap()).map(|e| e.flips()).collect();
        assert_eq!(all.len(), 1024);
        let two: Vec<u32> = flip_masks(4, 2);
        assert_eq!(two, vec![0b0011, 0b0101, 0b1001, 0b0110, 0b1010, 0b1100]);
        assert!(enumerate_perturbations(10, 11).is_err());
    }

    #[test]
    fn gamma_and_f_examples() {
        assert_eq!(gamma(0.0).unwrap(), 1.0);
        assert_eq!(gamma(0.5).unwrap(), 0.03125);
        assert_eq!(gamma(1.0).unwrap(), 0.0);
        assert!(gamma(1.5).is_err());
        assert_eq!(f_scale(0.0), 0.0);
        assert_abs_diff_eq!(f_scale(1.0), 1.0 - (-3.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(f_scale(1.0), 0.95021, epsilon = 1e-5);
        assert_abs_diff_eq!(f_scale(0.97422), 0.9462, epsilon = 1e-4);
    }

    fn visiting(mode: EvaluationMode) -> Evaluator {
        Evaluator::new(table(), mode).unwrap().with_recovery(Recovery::Visit)
    }

    #[test]
    fn zero_network_lands_half_way() {
        let (s1, _) = standard_targets();
        let g = Grn::zeros(10).unwrap();
        let v = distributional_fitness(&g, &s1, &table()).unwrap();
        // every start collapses to all -1, half way from the target
        assert_abs_diff_eq!(v, f_scale(0.03125), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.08949, epsilon = 1e-5);
        assert_eq!(v, reference_fitness(&g, &s1, 0.15));

        // counting the passing visit at t = 0 credits the unperturbed start in full
        let ts = TargetSet::single(s1.clone());
        let v = visiting(EvaluationMode::Distributional).distributional(&g, &ts).unwrap();
        let p0 = 0.85f64.powi(10);
        assert_abs_diff_eq!(v, f_scale(p0 + (1.0 - p0) * 0.03125), epsilon = 1e-12);
        assert_eq!(v, reference_fitness_with(&g, &s1, 0.15, Recovery::Visit));
    }

    #[test]
    fn optimum_matches_reference_and_bound() {
        let (s1, s2) = standard_targets();
        let g = optimum();
        let t = table();
        let single = distributional_fitness(&g, &s1, &t).unwrap();
        assert_eq!(single, reference_fitness(&g, &s1, 0.15));
        assert!(single >= 0.94);
        let pair = multi_target_fitness(&g, &TargetSet::standard_pair(), &t).unwrap();
        let bound = upper_bound_two_target(10, 0.15).unwrap();
        assert_abs_diff_eq!(pair, bound, epsilon = 1e-9);
        assert_abs_diff_eq!(pair, 0.9462, epsilon = 1e-4);
        assert_eq!(distributional_fitness(&g, &s2, &t).unwrap(), reference_fitness(&g, &s2, 0.15));
    }

    #[test]
    fn patterned_blocks_in_both_quadrants_fall_short() {
        // majority vote in the shared module also loses first-half weight >= 3
        let mut g = Grn::zeros(10).unwrap();
        g.place_block(0, 0, &patterned_block());
        g.place_block(5, 5, &patterned_block());
        let v = multi_target_fitness(&g, &TargetSet::standard_pair(), &table()).unwrap();
        assert_abs_diff_eq!(v, 0.941999884, epsilon = 1e-9);
        assert!(v < upper_bound_two_target(10, 0.15).unwrap());
    }

    #[test]
    fn two_cycle_between_targets_exceeds_the_bound() {
        // The negated patterned block flips the second module every step, so the state alternates
        // between both targets and each is "reached" before the horizon: every perturbation
        // scores gamma = 1 for both targets.
        let mut g = optimum();
        let neg: Vec<Vec<i8>> = patterned_block().iter().map(|r| r.iter().map(|w| -w).collect()).collect();
        g.place_block(5, 5, &neg);
        let ts = TargetSet::standard_pair();
        let v = visiting(EvaluationMode::Distributional).distributional(&g, &ts).unwrap();
        assert_abs_diff_eq!(v, f_scale(1.0), epsilon = 1e-12);
        assert!(v > upper_bound_two_target(10, 0.15).unwrap());
        // judged by where it stands after an even number of steps, it is just the majority vote
        let settled = multi_target_fitness(&g, &ts, &table()).unwrap();
        assert_abs_diff_eq!(settled, upper_bound_two_target(10, 0.15).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn single_and_multi_agree() {
        let (s1, s2) = standard_targets();
        let g = Grn::zeros(10).unwrap();
        let t = table();
        let a = multi_target_fitness(&g, &TargetSet::single(s1.clone()), &t).unwrap();
        assert_eq!(a, distributional_fitness(&g, &s1, &t).unwrap());
        let b = distributional_fitness(&g, &s2, &t).unwrap();
        let pair = multi_target_fitness(&g, &TargetSet::standard_pair(), &t).unwrap();
        assert_abs_diff_eq!(pair, (a + b) / 2.0, epsilon = 1e-15);
        assert!(TargetSet::new(vec![]).is_err());
    }

    #[test]
    fn unrecoverable_counts_match_brute_force() {
        let expected = [0, 0, 0, 10, 55, 126, 155, 110, 45, 10, 1];
        for (w, &e) in expected.iter().enumerate() {
            assert_eq!(unrecoverable_count(w).unwrap(), e, "weight {w}");
            let brute = (0u32..1024)
                .filter(|m| m.count_ones() as usize == w && (m >> 5).count_ones() >= 3)
                .count() as u64;
            assert_eq!(brute, e);
            assert!(e <= binomial_coefficient(10, w));
        }
        assert!(unrecoverable_count(11).is_err());
    }

    #[test]
    fn bound_values() {
        let b = bound_breakdown(10, 0.15).unwrap();
        assert_abs_diff_eq!(b.bound, 0.9462, epsilon = 1e-4);
        // hand sum of the per-weight weighting
        let mut inner = 0.0;
        for w in 0..=10 {
            let total = binomial_coefficient(10, w) as f64;
            let bad = unrecoverable_count(w).unwrap() as f64;
            inner += binomial_pmf(w, 10, 0.15).unwrap() * ((total - bad) + bad * 0.03125) / total;
        }
        assert_abs_diff_eq!(b.inner, inner, epsilon = 1e-15);
        assert_abs_diff_eq!(b.inner, 0.97422, epsilon = 1e-5);
        let none = bound_from_unrecoverable(&table(), &[0; 11]).unwrap();
        assert_abs_diff_eq!(f_scale(none), 0.95021, epsilon = 1e-5);
        assert!(bound_breakdown(9, 0.15).is_err());
    }

    #[test]
    fn cache_semantics() {
        let ts = TargetSet::standard_pair();
        let t = table();
        let mut cache = FitnessCache::new();
        let g = optimum();
        let a = cached_fitness(&g, &ts, &t, &mut cache).unwrap();
        let b = cached_fitness(&g, &ts, &t, &mut cache).unwrap();
        assert_eq!(a, b);
        assert_eq!((cache.misses(), cache.hits()), (1, 1));
        let mut h = g.clone();
        h.set(0, 9, 1);
        cached_fitness(&h, &ts, &t, &mut cache).unwrap();
        assert_eq!(cache.misses(), 2);
        // switching the target set invalidates everything
        let (s1, _) = standard_targets();
        cached_fitness(&g, &TargetSet::single(s1), &t, &mut cache).unwrap();
        assert_eq!(cache.misses(), 3);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn cache_capacity_clears() {
        let ts = TargetSet::standard_pair();
        let mut cache = FitnessCache::with_capacity(2);
        for k in 0..3 {
            let mut g = Grn::zeros(10).unwrap();
            g.set(k, 0, 1);
            cached_fitness(&g, &ts, &table(), &mut cache).unwrap();
        }
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn stochastic_is_replayable_and_matches_evaluator() {
        let ts = TargetSet::standard_pair();
        let g = optimum();
        let a = stochastic_fitness(&g, &ts, 500, 0.15, &mut rng_from_seed(3)).unwrap();
        let b = stochastic_fitness(&g, &ts, 500, 0.15, &mut rng_from_seed(3)).unwrap();
        assert_eq!(a, b);
        let ev = Evaluator::new(table(), EvaluationMode::Stochastic).unwrap();
        assert_eq!(ev.stochastic(&g, &ts, &mut rng_from_seed(3)).unwrap(), a);
        assert!((a - 0.9462).abs() < 0.02);
        assert!(stochastic_fitness(&g, &ts, 0, 0.15, &mut rng_from_seed(3)).is_err());
    }

    #[test]
    fn report_fields() {
        let ts = TargetSet::standard_pair();
        let g = optimum();
        let ev = Evaluator::new(table(), EvaluationMode::Stochastic).unwrap();
        let r = ev.evaluate(&g, &ts, None, &mut rng_from_seed(1)).unwrap();
        assert_eq!(r.evaluation_mode, EvaluationMode::Stochastic);
        assert_abs_diff_eq!(r.distributional_fitness, 0.946209545, epsilon = 1e-9);
        assert_ne!(r.selection_fitness, r.distributional_fitness);
        let ev = ev.with_mode(EvaluationMode::Distributional);
        let r = ev.evaluate(&g, &ts, None, &mut rng_from_seed(1)).unwrap();
        assert_eq!(r.selection_fitness, r.distributional_fitness);
    }

    fn arb_grn() -> impl Strategy<Value = Grn> {
        prop::collection::vec(prop_oneof![6 => Just(0i8), 1 => Just(1i8), 1 => Just(-1i8)], 100)
            .prop_map(|w| Grn::new(10, w).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fast_path_is_bit_identical_to_reference(g in arb_grn()) {
            let (s1, s2) = standard_targets();
            let t = table();
            prop_assert_eq!(distributional_fitness(&g, &s1, &t).unwrap(), reference_fitness(&g, &s1, 0.15));
            prop_assert_eq!(distributional_fitness(&g, &s2, &t).unwrap(), reference_fitness(&g, &s2, 0.15));
            let ev = visiting(EvaluationMode::Distributional);
            let v = ev.distributional(&g, &TargetSet::single(s1.clone())).unwrap();
            prop_assert_eq!(v, reference_fitness_with(&g, &s1, 0.15, Recovery::Visit));
        }

        #[test]
        fn fitness_is_bounded(g in arb_grn()) {
            let v = multi_target_fitness(&g, &TargetSet::standard_pair(), &table()).unwrap();
            prop_assert!(v >= 0.0 && v <= f_scale(1.0));
            prop_assert!(v <= upper_bound_two_target(10, 0.15).unwrap() + 1e-9);
            prop_assert_eq!(v, multi_target_fitness(&g, &TargetSet::standard_pair(), &table()).unwrap());
        }

        #[test]
        fn pmf_normalizes(n in 1usize..=16, p in 0.0f64..=1.0) {
            let t = BinomialTable::new(n, p).unwrap();
            prop_assert!(t.pmf().iter().all(|&x| x >= 0.0));
            prop_assert!((t.pmf().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
