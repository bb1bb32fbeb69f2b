//! Maximum-weight rank assignment.
//!
//! Weight matrices are `m1 x m2`: rows are items, columns are rank
//! positions, `m1 >= m2`. Every rank receives exactly one item and every
//! item at most one rank. Four backends are available:
//!
//! * [`sorted_identity_assign`] for factored weights `s gamma^T`, exact by
//!   the rearrangement inequality, `O(m1 log m1)`;
//! * [`hungarian_assign`], exact, `O(m1 m2^2)`, with dual potentials;
//! * [`greedy_assign`], a 1/2-approximation;
//! * [`brute_force_assign`], exhaustive, for verification on tiny inputs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{weights_scale, Assignment, DiscountVector, Matrix, DEFAULT_TOL};

/// Largest item count accepted by [`brute_force_assign`].
pub const BRUTE_FORCE_MAX_ITEMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignStrategy {
    SortMonge,
    Hungarian,
    GreedyHalf,
    BruteForce,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    /// Dense inputs with more items than this use the greedy backend under `Auto`.
    pub greedy_threshold: usize,
    pub tol: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            greedy_threshold: 4096,
            tol: DEFAULT_TOL,
        }
    }
}

/// Input to the dispatcher: either the factored pair `(s, gamma)` or a dense matrix.
#[derive(Debug, Clone, Copy)]
pub enum AssignInput<'a> {
    Factored {
        scores: &'a [f64],
        gamma: &'a DiscountVector,
    },
    Dense(&'a Matrix),
}

impl AssignInput<'_> {
    pub fn m1(&self) -> usize {
        match self {
            AssignInput::Factored { scores, .. } => scores.len(),
            AssignInput::Dense(m) => m.rows(),
        }
    }

    pub fn m2(&self) -> usize {
        match self {
            AssignInput::Factored { gamma, .. } => gamma.len(),
            AssignInput::Dense(m) => m.cols(),
        }
    }

    fn to_matrix(self) -> Matrix {
        match self {
            AssignInput::Factored { scores, gamma } => {
                let g = gamma.values();
                Matrix::from_fn(scores.len(), g.len(), |i, j| scores[i] * g[j])
            }
            AssignInput::Dense(m) => m.clone(),
        }
    }
}

fn check_weights(weights: &Matrix) -> Result<()> {
    if weights.cols() == 0 || weights.rows() < weights.cols() {
        return Err(Error::Shape {
            rows: weights.rows(),
            cols: weights.cols(),
        });
    }
    if let Some((row, col)) = weights.first_non_finite() {
        return Err(Error::NonFinite { row, col });
    }
    Ok(())
}

/// Exact maximum-weight assignment by shortest augmenting paths.
///
/// Ranks are augmented one at a time, so the cost is `O(m2^2 m1)` without
/// padding to a square matrix. The returned potentials satisfy
/// `row[i] + col[j] >= w[i][j]` everywhere, with equality on assigned pairs
/// and zero for unassigned items.
pub fn hungarian_assign(weights: &Matrix) -> Result<Assignment> {
    check_weights(weights)?;
    let n = weights.cols();
    let m = weights.rows();
    // Minimization over cost[rank][item] = -w[item][rank], 1-based with a
    // dummy column 0.
    let cost = |rank: usize, item: usize| -weights.get(item - 1, rank - 1);

    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0_f64; m + 1];
    let mut used = vec![false; m + 1];

    for rank in 1..=n {
        p[0] = rank;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut item_at_rank = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            item_at_rank[p[j] - 1] = j - 1;
        }
    }
    let total_weight = weights.assignment_weight(&item_at_rank);
    Ok(Assignment {
        item_at_rank,
        total_weight,
        row_potentials: Some(v[1..].iter().map(|x| -x).collect()),
        col_potentials: Some(u[1..].iter().map(|x| -x).collect()),
    })
}

/// Greedy matching: repeatedly take the heaviest cell whose item and rank
/// are both free. Ties go to the lower item index, then the lower rank.
pub fn greedy_assign(weights: &Matrix) -> Result<Assignment> {
    check_weights(weights)?;
    let (m1, m2) = (weights.rows(), weights.cols());
    let mut cells: Vec<usize> = (0..m1 * m2).collect();
    // Row-major cell index order is (item, rank) lexicographic order.
    cells.sort_unstable_by(|&x, &y| {
        let (wx, wy) = (weights.get(x / m2, x % m2), weights.get(y / m2, y % m2));
        wy.partial_cmp(&wx).unwrap_or(Ordering::Equal).then(x.cmp(&y))
    });
    let mut item_used = vec![false; m1];
    let mut item_at_rank = vec![usize::MAX; m2];
    let mut filled = 0;
    for c in cells {
        let (i, j) = (c / m2, c % m2);
        if item_used[i] || item_at_rank[j] != usize::MAX {
            continue;
        }
        item_used[i] = true;
        item_at_rank[j] = i;
        filled += 1;
        if filled == m2 {
            break;
        }
    }
    let total_weight = weights.assignment_weight(&item_at_rank);
    Ok(Assignment::new(item_at_rank, total_weight))
}

/// The `take` highest-scoring items in descending order; equal scores keep
/// ascending item index.
pub fn descending_order(scores: &[f64], take: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let take = take.min(idx.len());
    if take == 0 {
        return Vec::new();
    }
    if take < idx.len() {
        idx.select_nth_unstable_by(take - 1, cmp);
        idx.truncate(take);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Optimal assignment for `S = s gamma^T`: the `j`-th largest score goes to
/// rank `j`.
pub fn sorted_identity_assign(scores: &[f64], gamma: &DiscountVector) -> Result<Assignment> {
    let m2 = gamma.len();
    if scores.len() < m2 {
        return Err(Error::Shape {
            rows: scores.len(),
            cols: m2,
        });
    }
    if let Some(row) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row, col: 0 });
    }
    let order = descending_order(scores, m2);
    let total_weight = order
        .iter()
        .zip(gamma.values())
        .map(|(&i, g)| scores[i] * g)
        .sum();
    Ok(Assignment::new(order, total_weight))
}

/// Inverse Monge test: `w[i][j] + w[i+1][j+1] >= w[i][j+1] + w[i+1][j] - tol`
/// over adjacent pairs, which implies the inequality for all quadruples.
pub fn is_inverse_monge(weights: &Matrix, tol: f64) -> bool {
    let (m1, m2) = (weights.rows(), weights.cols());
    for i in 0..m1.saturating_sub(1) {
        let (r0, r1) = (weights.row(i), weights.row(i + 1));
        for j in 0..m2.saturating_sub(1) {
            if r0[j] + r1[j + 1] < r0[j + 1] + r1[j] - tol {
                return false;
            }
        }
    }
    true
}

/// Row order (by descending first column) under which a square matrix is
/// inverse Monge, if one exists.
fn permuted_monge_order(weights: &Matrix, tol: f64) -> Option<Vec<usize>> {
    if weights.rows() != weights.cols() || weights.cols() == 0 {
        return None;
    }
    let first: Vec<f64> = (0..weights.rows()).map(|i| weights.get(i, 0)).collect();
    let order = descending_order(&first, first.len());
    let sorted = Matrix::from_fn(weights.rows(), weights.cols(), |i, j| weights.get(order[i], j));
    is_inverse_monge(&sorted, tol * weights_scale(weights)).then_some(order)
}

fn sorted_rows_assign(weights: &Matrix, order: &[usize]) -> Assignment {
    let item_at_rank = order[..weights.cols()].to_vec();
    let total_weight = weights.assignment_weight(&item_at_rank);
    Assignment::new(item_at_rank, total_weight)
}

/// Linear side constraint `tr(A^T P) >= bound` over a dense coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: Matrix,
    pub bound: f64,
}

/// Exhaustive search over all injective rank -> item maps. With constraints,
/// only compliant maps are considered and [`Error::Infeasible`] signals that
/// none exists. Ties keep the lexicographically first map.
pub fn brute_force_assign(
    weights: &Matrix,
    constraints: Option<&[LinearConstraint]>,
) -> Result<Assignment> {
    check_weights(weights)?;
    if weights.rows() > BRUTE_FORCE_MAX_ITEMS {
        return Err(Error::SizeCap {
            m1: weights.rows(),
            cap: BRUTE_FORCE_MAX_ITEMS,
        });
    }
    let constraints = constraints.unwrap_or(&[]);
    for c in constraints {
        if c.coeffs.rows() != weights.rows() || c.coeffs.cols() != weights.cols() {
            return Err(Error::DimensionMismatch(
                "constraint coefficients do not match the weight matrix".into(),
            ));
        }
    }

    struct Search<'a> {
        weights: &'a Matrix,
        constraints: &'a [LinearConstraint],
        current: Vec<usize>,
        used: Vec<bool>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn run(&mut self) {
            let rank = self.current.len();
            if rank == self.weights.cols() {
                let compliant = self.constraints.iter().all(|c| {
                    c.coeffs.assignment_weight(&self.current)
                        >= c.bound - DEFAULT_TOL * c.bound.abs().max(1.0)
                });
                if !compliant {
                    return;
                }
                let w = self.weights.assignment_weight(&self.current);
                if self.best.as_ref().is_none_or(|(bw, _)| w > *bw) {
                    self.best = Some((w, self.current.clone()));
                }
                return;
            }
            for item in 0..self.weights.rows() {
                if self.used[item] {
                    continue;
                }
                self.used[item] = true;
                self.current.push(item);
                self.run();
                self.current.pop();
                self.used[item] = false;
            }
        }
    }

    let mut search = Search {
        weights,
        constraints,
        current: Vec::with_capacity(weights.cols()),
        used: vec![false; weights.rows()],
        best: None,
    };
    search.run();
    let (total_weight, item_at_rank) = search.best.ok_or(Error::Infeasible)?;
    Ok(Assignment::new(item_at_rank, total_weight))
}

/// Backend `Auto` would pick for this input.
pub fn choose_strategy(input: AssignInput<'_>, config: &AssignConfig) -> AssignStrategy {
    match input {
        AssignInput::Factored { .. } => AssignStrategy::SortMonge,
        AssignInput::Dense(m) => {
            if permuted_monge_order(m, config.tol).is_some() {
                AssignStrategy::SortMonge
            } else if m.rows() > config.greedy_threshold {
                AssignStrategy::GreedyHalf
            } else {
                AssignStrategy::Hungarian
            }
        }
    }
}

/// Dispatch to a backend. `SortMonge` on a dense input sorts rows by their
/// first column and takes the leading rows, which is exact only when the
/// sorted matrix is inverse Monge.
pub fn assign(
    input: AssignInput<'_>,
    strategy: AssignStrategy,
    config: &AssignConfig,
) -> Result<Assignment> {
    let strategy = match strategy {
        AssignStrategy::Auto => choose_strategy(input, config),
        s => s,
    };
    match (strategy, input) {
        (AssignStrategy::SortMonge, AssignInput::Factored { scores, gamma }) => {
            sorted_identity_assign(scores, gamma)
        }
        (AssignStrategy::SortMonge, AssignInput::Dense(m)) => {
            check_weights(m)?;
            let first: Vec<f64> = (0..m.rows()).map(|i| m.get(i, 0)).collect();
            Ok(sorted_rows_assign(m, &descending_order(&first, m.cols())))
        }
        (AssignStrategy::Hungarian, AssignInput::Dense(m)) => hungarian_assign(m),
        (AssignStrategy::GreedyHalf, AssignInput::Dense(m)) => greedy_assign(m),
        (AssignStrategy::BruteForce, AssignInput::Dense(m)) => brute_force_assign(m, None),
        (s, factored) => assign(AssignInput::Dense(&factored.to_matrix()), s, config),
    }
}
