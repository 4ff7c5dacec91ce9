//! Modularity of a network against a fixed gene partition.
//!
//! `Q = sum_i [ l_i / L - (d_i / 2L)^2 ]` where `L` counts nonzero entries, `l_i` the entries
//! with both genes in module `i`, and `d_i` the summed in- plus out-degree of module `i` (a
//! self-loop contributes 2). `Q_n` rescales `Q` between the mean and the maximum `Q` of random
//! networks with the same number of edges.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitness::{Evaluator, TargetSet};
use crate::grn::{Grn, MAX_GENES};
use crate::rng::{rng_from_seed, splitmix64};

pub const QNORM_SAMPLES: usize = 10_000;

/// Assignment of every gene to a module.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModulePartition {
    assignment: Vec<usize>,
    modules: usize,
}

impl ModulePartition {
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() || assignment.len() > MAX_GENES {
            return Err(Error::UnsupportedSize(assignment.len()));
        }
        let modules = assignment.iter().max().unwrap() + 1;
        if (0..modules).any(|m| !assignment.contains(&m)) {
            return Err(Error::Empty("module"));
        }
        Ok(Self { assignment, modules })
    }

    /// Genes `0..n/2` and `n/2..n`.
    pub fn halves(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::UnsupportedSize(n));
        }
        Self::new((0..n).map(|j| usize::from(j >= n / 2)).collect())
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn modules(&self) -> usize {
        self.modules
    }

    pub fn module_of(&self, gene: usize) -> usize {
        self.assignment[gene]
    }

    pub fn is_intra(&self, row: usize, col: usize) -> bool {
        self.assignment[row] == self.assignment[col]
    }
}

fn check_dims(g: &Grn, partition: &ModulePartition) -> Result<()> {
    if g.n() != partition.n() {
        return Err(Error::DimensionMismatch { expected: partition.n(), found: g.n() });
    }
    Ok(())
}

/// Q over an explicit list of occupied `(row, col)` slots.
fn q_of_slots(slots: impl Iterator<Item = (usize, usize)>, partition: &ModulePartition) -> Option<f64> {
    let mut intra = vec![0usize; partition.modules()];
    let mut degree = vec![0usize; partition.modules()];
    let mut total = 0usize;
    for (i, j) in slots {
        total += 1;
        let (mi, mj) = (partition.module_of(i), partition.module_of(j));
        degree[mi] += 1;
        degree[mj] += 1;
        if mi == mj {
            intra[mi] += 1;
        }
    }
    if total == 0 {
        return None;
    }
    let l = total as f64;
    Some(intra.iter().zip(&degree).map(|(&li, &di)| li as f64 / l - (di as f64 / (2.0 * l)).powi(2)).sum())
}

pub fn q_score(g: &Grn, partition: &ModulePartition) -> Result<f64> {
    check_dims(g, partition)?;
    let n = g.n();
    let slots = g.weights().iter().enumerate().filter(|(_, &w)| w != 0).map(|(k, _)| (k / n, k % n));
    q_of_slots(slots, partition).ok_or(Error::NoEdges)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNormEntry {
    pub q_ran: f64,
    pub q_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct QNormRow {
    edges: usize,
    q_ran: f64,
    q_max: f64,
    samples: usize,
    seed: u64,
}

/// Mean and maximum Q of uniformly random networks, per edge count.
#[derive(Clone, Debug, PartialEq)]
pub struct QNormTable {
    n: usize,
    samples: usize,
    seed: u64,
    entries: BTreeMap<usize, QNormEntry>,
}

impl QNormTable {
    /// Samples `samples` networks for every edge count in `edge_counts`: exactly `E` distinct
    /// slots among the `N^2` (self-loops allowed), unsigned. Entry `E` uses its own stream
    /// seeded from `(seed, E)`.
    pub fn build(
        partition: &ModulePartition,
        samples: usize,
        seed: u64,
        edge_counts: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Empty("random network sample"));
        }
        let n = partition.n();
        let counts: Vec<usize> = edge_counts.into_iter().collect();
        if let Some(&bad) = counts.iter().find(|&&e| e == 0 || e > n * n) {
            return Err(Error::OutOfRange { what: "edge count", value: bad as f64, min: 1.0, max: (n * n) as f64 });
        }
        let entries = counts
            .par_iter()
            .map(|&edges| {
                let mut rng = rng_from_seed(splitmix64(seed ^ splitmix64(edges as u64)));
                let mut sum = 0.0;
                let mut max = f64::NEG_INFINITY;
                for _ in 0..samples {
                    let picks = sample(&mut rng, n * n, edges);
                    let q = q_of_slots(picks.iter().map(|k| (k / n, k % n)), partition).unwrap();
                    sum += q;
                    max = max.max(q);
                }
                (edges, QNormEntry { q_ran: sum / samples as f64, q_max: max })
            })
            .collect();
        Ok(Self { n, samples, seed, entries })
    }

    /// Table for every edge count `1..=N^2`.
    pub fn build_full(partition: &ModulePartition, samples: usize, seed: u64) -> Result<Self> {
        let n = partition.n();
        Self::build(partition, samples, seed, 1..=n * n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, edges: usize) -> Option<QNormEntry> {
        self.entries.get(&edges).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, QNormEntry)> + '_ {
        self.entries.iter().map(|(&e, &q)| (e, q))
    }

    /// CSV with columns `edges,q_ran,q_max,samples,seed`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (&edges, e) in &self.entries {
            out.serialize(QNormRow { edges, q_ran: e.q_ran, q_max: e.q_max, samples: self.samples, seed: self.seed })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(n: usize, r: R) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let (mut samples, mut seed) = (0, 0);
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: QNormRow = row?;
            samples = row.samples;
            seed = row.seed;
            entries.insert(row.edges, QNormEntry { q_ran: row.q_ran, q_max: row.q_max });
        }
        if entries.is_empty() {
            return Err(Error::Empty("Q normalization table"));
        }
        Ok(Self { n, samples, seed, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_csv(w))
    }

    pub fn load(n: usize, path: &Path) -> Result<Self> {
        Self::read_csv(n, std::fs::File::open(path)?)
    }
}

/// `(Q - Q_ran) / (Q_max - Q_ran)`, unclamped.
pub fn normalized_q(g: &Grn, partition: &ModulePartition, table: &QNormTable) -> Result<f64> {
    let q = q_score(g, partition)?;
    let edges = g.edge_count();
    let e = table.entry(edges).ok_or(Error::MissingNormalization(edges))?;
    let span = e.q_max - e.q_ran;
    if span.abs() < 1e-12 {
        return Err(Error::DegenerateNormalization { edges, q: e.q_max });
    }
    Ok((q - e.q_ran) / span)
}

/// Zeroes every entry linking genes of different modules.
pub fn remove_inter_module_edges(g: &Grn, partition: &ModulePartition) -> Result<Grn> {
    check_dims(g, partition)?;
    let mut out = g.clone();
    for i in 0..g.n() {
        for j in 0..g.n() {
            if !partition.is_intra(i, j) {
                out.set(i, j, 0);
            }
        }
    }
    Ok(out)
}

/// Inter-module slots holding an edge, row-major.
pub fn inter_module_edges(g: &Grn, partition: &ModulePartition) -> Vec<(usize, usize)> {
    let n = g.n();
    (0..n * n)
        .map(|k| (k / n, k % n))
        .filter(|&(i, j)| g.get(i, j) != 0 && !partition.is_intra(i, j))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalOrder {
    /// Each step removes the edge whose removal gives the highest fitness (lowest row-major
    /// index on ties).
    Greedy,
    /// Row-major order.
    Fixed,
}

impl std::str::FromStr for RemovalOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "fixed" => Ok(Self::Fixed),
            other => Err(format!("unknown removal order {other:?} (expected greedy|fixed)")),
        }
    }
}

/// Removes inter-module edges one at a time and records `(removed so far, exact fitness)`,
/// starting from the untouched network.
pub fn stepwise_edge_removal_path(
    g: &Grn,
    partition: &ModulePartition,
    ts: &TargetSet,
    evaluator: &Evaluator,
    order: RemovalOrder,
) -> Result<Vec<(usize, f64)>> {
    check_dims(g, partition)?;
    let mut current = g.clone();
    let mut path = vec![(0, evaluator.distributional(&current, ts)?)];
    loop {
        let remaining = inter_module_edges(&current, partition);
        if remaining.is_empty() {
            return Ok(path);
        }
        let (next, fitness) = match order {
            RemovalOrder::Fixed => {
                let (i, j) = remaining[0];
                let mut cand = current.clone();
                cand.set(i, j, 0);
                let f = evaluator.distributional(&cand, ts)?;
                (cand, f)
            }
            RemovalOrder::Greedy => {
                let mut best: Option<(Grn, f64)> = None;
                for (i, j) in remaining {
                    let mut cand = current.clone();
                    cand.set(i, j, 0);
                    let f = evaluator.distributional(&cand, ts)?;
                    if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                        best = Some((cand, f));
                    }
                }
                best.unwrap()
            }
        };
        current = next;
        path.push((path.len(), fitness));
    }
}

/// True iff every nonzero entry of `quadrant` equals the corresponding entry of `reference`.
pub fn is_discrete_shadow(quadrant: &Grn, reference: &Grn) -> Result<bool> {
    if quadrant.n() != reference.n() {
        return Err(Error::DimensionMismatch { expected: reference.n(), found: quadrant.n() });
    }
    Ok(quadrant.weights().iter().zip(reference.weights()).all(|(&q, &r)| q == 0 || q == r))
}

/// Dense real `n x n` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealMatrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl RealMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    /// Sub-matrix with rows and columns starting at `offset`.
    pub fn quadrant(&self, offset: usize, size: usize) -> RealMatrix {
        let values = (0..size).flat_map(|i| (0..size).map(move |j| (i, j))).map(|(i, j)| self.get(offset + i, offset + j)).collect();
        RealMatrix { n: size, values }
    }
}

/// Elementwise arithmetic mean.
pub fn mean_matrix(grns: &[Grn]) -> Result<RealMatrix> {
    let first = grns.first().ok_or(Error::Empty("network list"))?;
    let n = first.n();
    let mut values = vec![0.0; n * n];
    for g in grns {
        if g.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: g.n() });
        }
        for (v, &w) in values.iter_mut().zip(g.weights()) {
            *v += w as f64;
        }
    }
    values.iter_mut().for_each(|v| *v /= grns.len() as f64);
    Ok(RealMatrix { n, values })
}

/// The 5x5 checkerboard `M[r][c] = +1` if `r + c` is even, else `-1`: a majority vote that
/// sends a 5-gene state to whichever of `+-+-+` / `-+-+-` it is closer to.
pub fn patterned_block() -> Grn {
    let w = (0..25).map(|k| if (k / 5 + k % 5) % 2 == 0 { 1 } else { -1 }).collect();
    Grn::new(5, w).unwrap()
}

/// Shared-module network that drives any state of genes `0..5` to `+1 -1 +1 -1 +1` within two
/// steps: genes 1 and 3 have no regulators (so become `-1`), genes 0, 2 and 4 are repressed by
/// genes 1 and 3 and self-activate.
pub fn shared_module_restorer() -> Grn {
    let mut g = Grn::zeros(5).unwrap();
    for i in [0, 2, 4] {
        g.set(i, 1, -1);
        g.set(i, 3, -1);
        g.set(i, i, 1);
    }
    g
}

fn block_rows(g: &Grn) -> Vec<Vec<i8>> {
    g.rows().map(<[i8]>::to_vec).collect()
}

/// Fully modular 10-gene optimum for the standard target pair: the shared-module restorer on
/// genes `0..5` and the patterned majority block on genes `5..10`.
pub fn optimal_modular_grn() -> Grn {
    let mut g = Grn::zeros(10).unwrap();
    g.place_block(0, 0, &block_rows(&shared_module_restorer()));
    g.place_block(5, 5, &block_rows(&patterned_block()));
    g
}

/// The patterned block in both diagonal quadrants.
pub fn patterned_block_diagonal() -> Grn {
    let block = block_rows(&patterned_block());
    let mut g = Grn::zeros(10).unwrap();
    g.place_block(0, 0, &block);
    g.place_block(5, 5, &block);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn halves() -> ModulePartition {
        ModulePartition::halves(10).unwrap()
    }

    #[test]
    fn q_of_balanced_intra_network() {
        let mut g = Grn::zeros(10).unwrap();
        g.set(0, 1, 1);
        g.set(6, 7, -1);
        // 2 * (1/2 - (2/4)^2)
        assert_abs_diff_eq!(q_score(&g, &halves()).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn q_of_single_inter_edge() {
        let mut g = Grn::zeros(10).unwrap();
        g.set(0, 7, 1);
        // l = 0 and d = 1 in each module with L = 1: -2 * (1/2)^2
        assert_abs_diff_eq!(q_score(&g, &halves()).unwrap(), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn q_requires_edges() {
        assert!(matches!(q_score(&Grn::zeros(10).unwrap(), &halves()), Err(Error::NoEdges)));
    }

    #[test]
    fn self_loop_degree_counts_twice() {
        let mut g = Grn::zeros(10).unwrap();
        g.set(2, 2, 1);
        g.set(8, 8, 1);
        assert_abs_diff_eq!(q_score(&g, &halves()).unwrap(), 0.5, epsilon = 1e-15);
        g.set(2, 8, 1);
        // l = (1, 1), d = (3, 3), L = 3
        assert_abs_diff_eq!(q_score(&g, &halves()).unwrap(), 2.0 / 3.0 - 2.0 * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn partition_validation() {
        assert!(ModulePartition::new(vec![0, 2]).is_err());
        assert!(ModulePartition::new(vec![]).is_err());
        assert_eq!(halves().modules(), 2);
    }

    #[test]
    fn inter_module_surgery() {
        let g = Grn::new(10, vec![1; 100]).unwrap();
        let cut = remove_inter_module_edges(&g, &halves()).unwrap();
        assert_eq!(g.edge_count() - cut.edge_count(), 50);
        assert_abs_diff_eq!(q_score(&cut, &halves()).unwrap(), 0.5, epsilon = 1e-15);
        let modular = optimal_modular_grn();
        assert_eq!(remove_inter_module_edges(&modular, &halves()).unwrap(), modular);
    }

    #[test]
    fn shadows() {
        let m = patterned_block();
        assert!(is_discrete_shadow(&m, &m).unwrap());
        assert!(is_discrete_shadow(&Grn::zeros(5).unwrap(), &m).unwrap());
        let mut off = Grn::zeros(5).unwrap();
        off.set(0, 0, -1);
        assert!(!is_discrete_shadow(&off, &m).unwrap());
        assert!(is_discrete_shadow(&Grn::zeros(4).unwrap(), &m).is_err());
    }

    #[test]
    fn mean_matrix_examples() {
        let g = optimal_modular_grn();
        let single = mean_matrix(std::slice::from_ref(&g)).unwrap();
        assert!(single.values.iter().zip(g.weights()).all(|(&v, &w)| v == w as f64));
        let zero = mean_matrix(&[g.clone(), g.negated()]).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert!(mean_matrix(&[]).is_err());
        assert_eq!(single.quadrant(5, 5).values, patterned_block().weights().iter().map(|&w| w as f64).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_endpoints() {
        let table = QNormTable::build(&halves(), 2000, 11, [2, 34]).unwrap();
        let e = table.entry(34).unwrap();
        assert!(e.q_max >= e.q_ran);
        let g = optimal_modular_grn();
        assert_eq!(g.edge_count(), 34);
        let q = q_score(&g, &halves()).unwrap();
        let qn = normalized_q(&g, &halves(), &table).unwrap();
        assert_abs_diff_eq!(qn, (q - e.q_ran) / (e.q_max - e.q_ran), epsilon = 1e-15);
        // a frozen table whose max is this network's Q gives 1, whose mean is its Q gives 0
        let mut frozen = table.clone();
        frozen.entries.insert(34, QNormEntry { q_ran: 0.0, q_max: q });
        assert_abs_diff_eq!(normalized_q(&g, &halves(), &frozen).unwrap(), 1.0, epsilon = 1e-15);
        frozen.entries.insert(34, QNormEntry { q_ran: q, q_max: q + 0.1 });
        assert_abs_diff_eq!(normalized_q(&g, &halves(), &frozen).unwrap(), 0.0, epsilon = 1e-15);
        frozen.entries.insert(34, QNormEntry { q_ran: q, q_max: q });
        assert!(matches!(normalized_q(&g, &halves(), &frozen), Err(Error::DegenerateNormalization { .. })));
        frozen.entries.remove(&34);
        assert!(matches!(normalized_q(&g, &halves(), &frozen), Err(Error::MissingNormalization(34))));
    }

    #[test]
    fn full_network_is_degenerate() {
        let table = QNormTable::build(&halves(), 50, 1, [100]).unwrap();
        let g = Grn::new(10, vec![1; 100]).unwrap();
        assert!(normalized_q(&g, &halves(), &table).is_err());
    }

    #[test]
    fn table_csv_round_trip() {
        let table = QNormTable::build(&halves(), 100, 5, [1, 20, 50]).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("edges,q_ran,q_max,samples,seed\n"));
        assert_eq!(QNormTable::read_csv(10, buf.as_slice()).unwrap(), table);
    }

    #[test]
    fn table_is_seed_deterministic() {
        let a = QNormTable::build(&halves(), 200, 9, [10, 20]).unwrap();
        let b = QNormTable::build(&halves(), 200, 9, [20, 10]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn removal_path_shapes() {
        let ev = Evaluator::new(crate::fitness::BinomialTable::new(10, 0.15).unwrap(), crate::fitness::EvaluationMode::Distributional).unwrap();
        let ts = TargetSet::standard_pair();
        let modular = optimal_modular_grn();
        let path = stepwise_edge_removal_path(&modular, &halves(), &ts, &ev, RemovalOrder::Greedy).unwrap();
        assert_eq!(path.len(), 1);
        let mut g = modular.clone();
        g.set(0, 7, 1);
        g.set(8, 2, -1);
        g.set(9, 0, 1);
        for order in [RemovalOrder::Greedy, RemovalOrder::Fixed] {
            let path = stepwise_edge_removal_path(&g, &halves(), &ts, &ev, order).unwrap();
            assert_eq!(path.len(), 4);
            assert_eq!(path[0].1, ev.distributional(&g, &ts).unwrap());
            let end = remove_inter_module_edges(&g, &halves()).unwrap();
            assert_eq!(path.last().unwrap().1, ev.distributional(&end, &ts).unwrap());
        }
    }

    fn arb_grn() -> impl Strategy<Value = Grn> {
        prop::collection::vec(prop_oneof![3 => Just(0i8), 1 => Just(1i8), 1 => Just(-1i8)], 100)
            .prop_map(|w| Grn::new(10, w).unwrap())
    }

    proptest! {
        #[test]
        fn q_invariants(g in arb_grn()) {
            prop_assume!(g.edge_count() > 0);
            let p = halves();
            let q = q_score(&g, &p).unwrap();
            prop_assert!((-0.5 - 1e-12..=0.5 + 1e-12).contains(&q));
            // sign blind
            let abs = Grn::new(10, g.weights().iter().map(|w| w.abs()).collect()).unwrap();
            prop_assert_eq!(q, q_score(&abs, &p).unwrap());
            prop_assert_eq!(q, q_score(&g.negated(), &p).unwrap());
            let cut = remove_inter_module_edges(&g, &p).unwrap();
            prop_assert_eq!(&remove_inter_module_edges(&cut, &p).unwrap(), &cut);
            if cut.edge_count() > 0 {
                let qc = q_score(&cut, &p).unwrap();
                prop_assert!(qc >= q - 1e-12);
                // all edges intra: Q = 1 - sum (d_i / 2L)^2
                let l = cut.edge_count() as f64;
                let d0 = 2.0 * (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).filter(|&(i, j)| cut.get(i, j) != 0).count() as f64;
                let d1 = 2.0 * l - d0;
                prop_assert!((qc - (1.0 - (d0 / (2.0 * l)).powi(2) - (d1 / (2.0 * l)).powi(2))).abs() < 1e-12);
            }
        }
    }
}
