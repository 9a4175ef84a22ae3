//! Correlation-aware grouping of RIS elements.
//!
//! The grouping problem asks for an equal-size partition of the RIS columns
//! of `F_hat` minimizing the worst group-wise Gram condition number. The
//! greedy solver works on the surrogate instead: keep the summed pairwise
//! column coherence inside each group small. It seeds `Q` groups with the
//! endpoints of the `Q/2` most coherent disjoint column pairs, then places
//! the remaining columns one by one into the open group with the lowest mean
//! coherence to its current members.
//!
//! Ties are broken towards the lowest element index and the lowest group
//! index everywhere, so results are reproducible.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{cgemm_adjoint, condition_number, hadamard, ComplexMatrix, Conditioning};
use crate::phase::Partition;

/// Largest `M` accepted by [`brute_force_partition`].
pub const BRUTE_FORCE_MAX_ELEMENTS: usize = 12;

/// Normalized column coherences `w(i, j) = |f_i^H f_j| / (||f_i|| ||f_j||)`,
/// zero on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationWeights {
    w: DMatrix<f64>,
}

impl CorrelationWeights {
    /// Wraps a hand-built weight matrix. It must be square, symmetric and
    /// within `[0, 1]`; the diagonal is forced to zero.
    pub fn from_matrix(mut w: DMatrix<f64>) -> Result<CorrelationWeights> {
        if w.nrows() != w.ncols() {
            return Err(Error::NotSquare { rows: w.nrows(), cols: w.ncols() });
        }
        let m = w.nrows();
        for i in 0..m {
            w[(i, i)] = 0.0;
            for j in 0..m {
                let x = w[(i, j)];
                if !(0.0..=1.0 + 1e-12).contains(&x) || x != w[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "weight ({i}, {j}) = {x} is out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(CorrelationWeights { w })
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Mean off-diagonal weight.
    pub fn mean_coherence(&self) -> f64 {
        let m = self.len();
        if m < 2 {
            return 0.0;
        }
        self.w.sum() / (m * (m - 1)) as f64
    }
}

/// Pairwise column coherences of `f_hat`, `O(N M^2)`.
pub fn correlation_weights(f_hat: &ComplexMatrix) -> Result<CorrelationWeights> {
    let m = f_hat.ncols();
    let norms: Vec<f64> = (0..m).map(|j| f_hat.column(j).norm()).collect();
    if let Some(j) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroColumn(j));
    }
    let gram = cgemm_adjoint(f_hat, f_hat);
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let x = gram[(i, j)].norm() / (norms[i] * norms[j]);
            w[(i, j)] = x;
            w[(j, i)] = x;
        }
    }
    Ok(CorrelationWeights { w })
}

/// Picks the `Q/2` most coherent pairwise-disjoint column pairs and returns
/// `Q` singleton groups; pair `k` seeds groups `2k` (smaller index) and
/// `2k + 1` (larger index).
pub fn seed_init(weights: &CorrelationWeights, q: usize) -> Result<Vec<Vec<usize>>> {
    if q == 0 || q % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "seeding needs an even, positive group count, got Q={q}"
        )));
    }
    let m = weights.len();
    if m < q {
        return Err(Error::InvalidArgument(format!("M={m} is smaller than Q={q}")));
    }
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push((i, j));
        }
    }
    // Descending weight, then lexicographic on (i, j).
    pairs.sort_by(|&(a, b), &(c, d)| {
        weights.get(c, d).total_cmp(&weights.get(a, b)).then((a, b).cmp(&(c, d)))
    });
    let mut used = vec![false; m];
    let mut seeds = Vec::with_capacity(q);
    for (i, j) in pairs {
        if seeds.len() == q {
            break;
        }
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        seeds.push(vec![i]);
        seeds.push(vec![j]);
    }
    if seeds.len() < q {
        return Err(Error::InvalidArgument(format!(
            "only {} disjoint seed pairs available, need {}",
            seeds.len() / 2,
            q / 2
        )));
    }
    Ok(seeds)
}

/// Sequentially assigns every non-seed column to the open group (fewer than
/// `m_prime` members) with the smallest mean coherence to its members.
///
/// Columns are processed most-constrained first: the next column is the
/// unassigned one with the largest coherence to any assigned column.
pub fn greedy_assign(
    weights: &CorrelationWeights,
    seeds: &[Vec<usize>],
    q: usize,
    m_prime: usize,
) -> Result<Partition> {
    let m = weights.len();
    if q == 0 || m_prime == 0 || q * m_prime != m {
        return Err(Error::InvalidArgument(format!(
            "Q={q} groups of M'={m_prime} do not cover M={m}"
        )));
    }
    if q == 1 {
        return Partition::new(vec![(0..m).collect()], m);
    }
    if seeds.len() != q {
        return Err(Error::InvalidArgument(format!("{} seed groups for Q={q}", seeds.len())));
    }
    let mut state = GreedyState {
        weights,
        q,
        label: vec![None; m],
        groups: vec![Vec::with_capacity(m_prime); q],
        sums: vec![0.0; m * q],
        max_to_assigned: vec![f64::NEG_INFINITY; m],
    };
    for (g, seed) in seeds.iter().enumerate() {
        if seed.is_empty() || seed.len() > m_prime {
            return Err(Error::InvalidArgument(format!(
                "seed group {g} has {} members",
                seed.len()
            )));
        }
        for &u in seed {
            if u >= m || state.label[u].is_some() {
                return Err(Error::InvalidArgument(format!("seed index {u} invalid or repeated")));
            }
            state.assign(u, g);
        }
    }
    while let Some(u) = state.most_constrained() {
        let mut target = None;
        let mut best_mean = f64::INFINITY;
        for g in 0..q {
            let size = state.groups[g].len();
            if size >= m_prime {
                continue;
            }
            let mean = state.sums[u * q + g] / size as f64;
            if target.is_none() || mean < best_mean {
                target = Some(g);
                best_mean = mean;
            }
        }
        let g = target.expect("capacity leaves an open group");
        state.assign(u, g);
    }
    Partition::new(state.groups, m)
}

struct GreedyState<'a> {
    weights: &'a CorrelationWeights,
    q: usize,
    label: Vec<Option<usize>>,
    groups: Vec<Vec<usize>>,
    // sums[u * q + g]: summed weight from u to the members of group g
    sums: Vec<f64>,
    max_to_assigned: Vec<f64>,
}

impl GreedyState<'_> {
    fn assign(&mut self, u: usize, g: usize) {
        self.label[u] = Some(g);
        self.groups[g].push(u);
        for v in 0..self.label.len() {
            if self.label[v].is_none() {
                let x = self.weights.get(v, u);
                self.sums[v * self.q + g] += x;
                if x > self.max_to_assigned[v] {
                    self.max_to_assigned[v] = x;
                }
            }
        }
    }

    /// Unassigned column with the largest weight to any assigned column.
    fn most_constrained(&self) -> Option<usize> {
        let mut next = None;
        let mut best = f64::NEG_INFINITY;
        for (u, l) in self.label.iter().enumerate() {
            if l.is_none() && (next.is_none() || self.max_to_assigned[u] > best) {
                next = Some(u);
                best = self.max_to_assigned[u];
            }
        }
        next
    }
}

/// Seeding followed by greedy assignment; `Q = 1` yields the single group.
pub fn greedy_partition(weights: &CorrelationWeights, q: usize) -> Result<Partition> {
    let m = weights.len();
    if q == 0 || m % q != 0 {
        return Err(Error::InvalidArgument(format!("Q={q} does not divide M={m}")));
    }
    if q == 1 {
        return greedy_assign(weights, &[], 1, m);
    }
    let seeds = seed_init(weights, q)?;
    greedy_assign(weights, &seeds, q, m / q)
}

/// Largest intra-group sum of pairwise weights.
pub fn surrogate_objective(weights: &CorrelationWeights, partition: &Partition) -> f64 {
    partition
        .groups()
        .iter()
        .map(|g| {
            let mut s = 0.0;
            for (a, &i) in g.iter().enumerate() {
                for &j in &g[a + 1..] {
                    s += weights.get(i, j);
                }
            }
            s
        })
        .fold(0.0, f64::max)
}

/// Group Gram matrix `sum_b (F_hat(:, members) diag(v_b))^H (...)` for real
/// `+-1` codes `v_b`.
///
/// Since the codes are real, entry `(i, j)` is `A(i, j) * sum_b v_b(i) v_b(j)`
/// with `A = F_q^H F_q`.
pub fn group_gram(f_hat: &ComplexMatrix, members: &[usize], codes: &[Vec<f64>]) -> ComplexMatrix {
    let fq = f_hat.select_columns(members);
    let mut g = fq.adjoint() * &fq;
    let k = members.len();
    for i in 0..k {
        for j in 0..k {
            let s: f64 = codes.iter().map(|v| v[i] * v[j]).sum();
            g[(i, j)] *= Complex64::new(s, 0.0);
        }
    }
    g
}

/// The first `b` columns of the `M' x M'` Hadamard matrix.
pub fn subframe_codes(m_prime: usize, b: usize) -> Result<Vec<Vec<f64>>> {
    let h = hadamard(m_prime)?;
    if b == 0 || b > m_prime {
        return Err(Error::InvalidArgument(format!(
            "B={b} must satisfy 1 <= B <= M'={m_prime}"
        )));
    }
    Ok((0..b).map(|c| h.column(c).iter().map(|&x| f64::from(x)).collect()).collect())
}

/// Condition number of every group Gram under `b` subframes.
pub fn group_conditions(f_hat: &ComplexMatrix, partition: &Partition, b: usize) -> Result<Vec<Conditioning>> {
    if partition.element_count() != f_hat.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} elements, F_hat has {} columns",
            partition.element_count(),
            f_hat.ncols()
        )));
    }
    let codes = subframe_codes(partition.group_size(), b)?;
    partition
        .groups()
        .iter()
        .map(|g| condition_number(&group_gram(f_hat, g, &codes)))
        .collect()
}

/// Worst group-wise condition number, the quantity the grouping minimizes.
pub fn worst_condition(f_hat: &ComplexMatrix, partition: &Partition, b: usize) -> Result<Conditioning> {
    Ok(group_conditions(f_hat, partition, b)?
        .into_iter()
        .fold(Conditioning::Finite(0.0), Conditioning::worst))
}

/// Group `q` holds `q M' .. (q + 1) M'`.
pub fn contiguous_partition(m: usize, q: usize) -> Result<Partition> {
    if q == 0 || m % q != 0 {
        return Err(Error::InvalidArgument(format!("Q={q} does not divide M={m}")));
    }
    let mp = m / q;
    Partition::new((0..q).map(|g| (g * mp..(g + 1) * mp).collect()).collect(), m)
}

/// Exhaustive minimization of [`surrogate_objective`] over equal-size
/// partitions. Only for `M <= 12`.
pub fn brute_force_partition(weights: &CorrelationWeights, q: usize) -> Result<(Partition, f64)> {
    let m = weights.len();
    if m > BRUTE_FORCE_MAX_ELEMENTS {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to M <= {BRUTE_FORCE_MAX_ELEMENTS}, got {m}"
        )));
    }
    if q == 0 || m == 0 || m % q != 0 {
        return Err(Error::InvalidArgument(format!("Q={q} does not divide M={m}")));
    }
    let mp = m / q;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); q];
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    enumerate(0, m, mp, weights, &mut groups, &mut best);
    let (groups, value) = best.expect("at least one partition exists");
    Ok((Partition::new(groups, m)?, value))
}

fn enumerate(
    next: usize,
    m: usize,
    mp: usize,
    weights: &CorrelationWeights,
    groups: &mut Vec<Vec<usize>>,
    best: &mut Option<(Vec<Vec<usize>>, f64)>,
) {
    if next == m {
        let value = groups
            .iter()
            .map(|g| {
                let mut s = 0.0;
                for (a, &i) in g.iter().enumerate() {
                    for &j in &g[a + 1..] {
                        s += weights.get(i, j);
                    }
                }
                s
            })
            .fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(_, v)| value < *v) {
            *best = Some((groups.clone(), value));
        }
        return;
    }
    for g in 0..groups.len() {
        if groups[g].len() >= mp {
            continue;
        }
        let opening = groups[g].is_empty();
        groups[g].push(next);
        enumerate(next + 1, m, mp, weights, groups, best);
        groups[g].pop();
        // Empty groups are interchangeable; only try the first one.
        if opening {
            break;
        }
    }
}
