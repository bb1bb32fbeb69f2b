//! Problem data model shared by every solver.
//!
//! A ranking instance places `m2` of `m1` candidate items into rank
//! positions. Utilities and constraint coefficients are either *discounted*
//! (an item vector `v` combined with the shared discount vector, so the cell
//! for item `i` at rank `j` is `v[i] * gamma[j]`) or *dense* (an explicit
//! `m1 x m2` matrix). The discounted form is the one the fast sort path
//! relies on; dense weights exist for problems without that structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for comparisons of reals.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default cap on the number of cells `materialize_weight_matrix` allocates.
pub const DEFAULT_CELL_BUDGET: usize = 1 << 26;

/// Row-major dense matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Location of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols, p % self.cols))
    }

    /// Total weight `tr(W^T P)` of an assignment given as rank -> item.
    pub fn assignment_weight(&self, item_at_rank: &[usize]) -> f64 {
        item_at_rank
            .iter()
            .enumerate()
            .map(|(j, &i)| self.get(i, j))
            .sum()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

/// Exposure weights per rank position: strictly positive and non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscountVector(Vec<f64>);

impl DiscountVector {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::InvalidDiscount("needs at least one rank".into()));
        }
        if let Some(j) = gamma.iter().position(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::InvalidDiscount(format!(
                "gamma[{j}] = {} is not strictly positive",
                gamma[j]
            )));
        }
        if let Some(j) = gamma.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidDiscount(format!(
                "gamma increases at rank {}",
                j + 1
            )));
        }
        Ok(DiscountVector(gamma))
    }

    /// DCG discounting, `gamma_j = 1 / log2(j + 1)` for ranks `j = 1..=m2`.
    pub fn dcg(m2: usize) -> Result<Self> {
        DiscountVector::new((1..=m2).map(|j| 1.0 / ((j + 1) as f64).log2()).collect())
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total exposure across all ranks.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for DiscountVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        DiscountVector::new(v)
    }
}

impl From<DiscountVector> for Vec<f64> {
    fn from(d: DiscountVector) -> Self {
        d.0
    }
}

/// Per-cell weights over (item, rank) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    /// Item vector; cell `(i, j)` is `v[i] * gamma[j]`.
    Discounted(Vec<f64>),
    /// Explicit `m1 x m2` matrix.
    Dense(Matrix),
}

impl Weights {
    pub fn m1(&self) -> usize {
        match self {
            Weights::Discounted(v) => v.len(),
            Weights::Dense(m) => m.rows(),
        }
    }

    #[inline]
    pub fn cell(&self, item: usize, rank: usize, gamma: &DiscountVector) -> f64 {
        match self {
            Weights::Discounted(v) => v[item] * gamma.values()[rank],
            Weights::Dense(m) => m.get(item, rank),
        }
    }

    pub fn as_discounted(&self) -> Option<&[f64]> {
        match self {
            Weights::Discounted(v) => Some(v),
            Weights::Dense(_) => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Weights::Discounted(v) => v.iter().all(|x| x.is_finite()),
            Weights::Dense(m) => m.first_non_finite().is_none(),
        }
    }

    pub fn negated(&self) -> Weights {
        match self {
            Weights::Discounted(v) => Weights::Discounted(v.iter().map(|x| -x).collect()),
            Weights::Dense(m) => Weights::Dense(Matrix::from_fn(m.rows(), m.cols(), |i, j| {
                -m.get(i, j)
            })),
        }
    }

    /// `tr(W^T P)` for the assignment `item_at_rank`.
    pub fn total(&self, item_at_rank: &[usize], gamma: &DiscountVector) -> f64 {
        item_at_rank
            .iter()
            .enumerate()
            .map(|(j, &i)| self.cell(i, j, gamma))
            .sum()
    }

    fn check_shape(&self, m1: usize, m2: usize, what: &str) -> Result<()> {
        let ok = match self {
            Weights::Discounted(v) => v.len() == m1,
            Weights::Dense(m) => m.rows() == m1 && m.cols() == m2,
        };
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "{what} does not match {m1} items x {m2} ranks"
            )));
        }
        if !self.is_finite() {
            return Err(Error::InvalidInstance(format!("{what} has non-finite entries")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Ge,
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Absolute,
    /// Bound is a share of the total exposure `sum_j gamma[j]`.
    FractionOfTotalExposure,
}

/// One side constraint `tr(A^T P) (>= | <=) b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub label: String,
    pub a: Weights,
    pub sense: Sense,
    pub bound: f64,
    pub bound_kind: BoundKind,
}

impl ConstraintSpec {
    pub fn new(
        label: impl Into<String>,
        a: Weights,
        sense: Sense,
        bound: f64,
        bound_kind: BoundKind,
    ) -> Result<Self> {
        let c = ConstraintSpec {
            label: label.into(),
            a,
            sense,
            bound,
            bound_kind,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if !self.bound.is_finite() {
            return Err(Error::InvalidInstance(format!(
                "constraint '{}' has a non-finite bound",
                self.label
            )));
        }
        if self.bound_kind == BoundKind::FractionOfTotalExposure
            && !(0.0..=1.0).contains(&self.bound)
        {
            return Err(Error::InvalidInstance(format!(
                "constraint '{}' fraction bound {} outside [0, 1]",
                self.label, self.bound
            )));
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidInstance(format!(
                "constraint '{}' has non-finite coefficients",
                self.label
            )));
        }
        Ok(())
    }

    pub fn is_canonical(&self) -> bool {
        self.sense == Sense::Ge && self.bound_kind == BoundKind::Absolute
    }

    /// Equivalent `(>=, absolute)` constraint for the given discount vector.
    pub fn canonical(&self, gamma: &DiscountVector) -> ConstraintSpec {
        let bound = match self.bound_kind {
            BoundKind::Absolute => self.bound,
            BoundKind::FractionOfTotalExposure => self.bound * gamma.total(),
        };
        let (a, bound) = match self.sense {
            Sense::Ge => (self.a.clone(), bound),
            Sense::Le => (self.a.negated(), -bound),
        };
        ConstraintSpec {
            label: self.label.clone(),
            a,
            sense: Sense::Ge,
            bound,
            bound_kind: BoundKind::Absolute,
        }
    }

    /// `tr(A^T P)` for the assignment.
    pub fn exposure(&self, item_at_rank: &[usize], gamma: &DiscountVector) -> f64 {
        self.a.total(item_at_rank, gamma)
    }
}

/// One user's ranking problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingInstance {
    user_id: String,
    u: Weights,
    gamma: DiscountVector,
    constraints: Vec<ConstraintSpec>,
    covariates: Vec<f64>,
}

impl RankingInstance {
    pub fn new(
        user_id: impl Into<String>,
        u: Weights,
        gamma: DiscountVector,
        constraints: Vec<ConstraintSpec>,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        let inst = RankingInstance {
            user_id: user_id.into(),
            u,
            gamma,
            constraints,
            covariates,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let m1 = self.u.m1();
        let m2 = self.gamma.len();
        if m1 < m2 {
            return Err(Error::InvalidInstance(format!(
                "user '{}': {m1} items cannot fill {m2} ranks",
                self.user_id
            )));
        }
        self.u.check_shape(m1, m2, "utility")?;
        for c in &self.constraints {
            c.validate()?;
            c.a.check_shape(m1, m2, &format!("constraint '{}'", c.label))?;
        }
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "user '{}' has non-finite covariates",
                self.user_id
            )));
        }
        Ok(())
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn utility(&self) -> &Weights {
        &self.u
    }

    pub fn gamma(&self) -> &DiscountVector {
        &self.gamma
    }

    pub fn constraints(&self) -> &[ConstraintSpec] {
        &self.constraints
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn m1(&self) -> usize {
        self.u.m1()
    }

    pub fn m2(&self) -> usize {
        self.gamma.len()
    }

    pub fn k(&self) -> usize {
        self.constraints.len()
    }

    pub fn d(&self) -> usize {
        self.covariates.len()
    }

    /// True when utilities and every constraint use discounted weights.
    pub fn is_factored(&self) -> bool {
        matches!(self.u, Weights::Discounted(_))
            && self
                .constraints
                .iter()
                .all(|c| matches!(c.a, Weights::Discounted(_)))
    }

    pub fn is_canonical(&self) -> bool {
        self.constraints.iter().all(ConstraintSpec::is_canonical)
    }

    /// Canonical form: every constraint is `>=` with an absolute bound.
    pub fn normalized(&self) -> RankingInstance {
        RankingInstance {
            user_id: self.user_id.clone(),
            u: self.u.clone(),
            gamma: self.gamma.clone(),
            constraints: self
                .constraints
                .iter()
                .map(|c| c.canonical(&self.gamma))
                .collect(),
            covariates: self.covariates.clone(),
        }
    }

    /// Raw utility `tr(U^T P)`.
    pub fn utility_of(&self, item_at_rank: &[usize]) -> f64 {
        self.u.total(item_at_rank, &self.gamma)
    }

    /// Constraint bounds `b`.
    pub fn bounds(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.bound).collect()
    }

    /// `tr(A_k^T P)` for every constraint.
    pub fn exposures(&self, item_at_rank: &[usize]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| c.exposure(item_at_rank, &self.gamma))
            .collect()
    }

    /// Copy with different utilities, e.g. a request that brings its own scores.
    pub fn with_utility(&self, user_id: impl Into<String>, u: Weights, covariates: Vec<f64>) -> Result<Self> {
        RankingInstance::new(
            user_id,
            u,
            self.gamma.clone(),
            self.constraints.clone(),
            covariates,
        )
    }
}

/// Canonicalize an instance's constraints (see [`RankingInstance::normalized`]).
pub fn normalize_constraints(instance: &RankingInstance) -> RankingInstance {
    instance.normalized()
}

fn check_lambda(instance: &RankingInstance, lambda: &[f64], epsilon: f64) -> Result<()> {
    if lambda.len() != instance.k() {
        return Err(Error::DimensionMismatch(format!(
            "lambda has {} entries for {} constraints",
            lambda.len(),
            instance.k()
        )));
    }
    if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidInstance("lambda must be finite and nonnegative".into()));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Config(format!("epsilon {epsilon} must be >= 0")));
    }
    if !instance.is_canonical() {
        return Err(Error::NotCanonical);
    }
    Ok(())
}

/// Item scores `s = u + sum_k (1 + eps) lambda_k a_k` for a factored instance.
///
/// The adjusted matrix is `s gamma^T`; it is never built on this path.
pub fn score_vector(instance: &RankingInstance, lambda: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    check_lambda(instance, lambda, epsilon)?;
    let mut s = instance
        .u
        .as_discounted()
        .ok_or(Error::NotFactored)?
        .to_vec();
    for (c, &l) in instance.constraints.iter().zip(lambda) {
        let a = c.a.as_discounted().ok_or(Error::NotFactored)?;
        let w = (1.0 + epsilon) * l;
        if w == 0.0 {
            continue;
        }
        for (si, ai) in s.iter_mut().zip(a) {
            *si += w * ai;
        }
    }
    Ok(s)
}

/// Dense adjusted matrix `S = U + sum_k (1 + eps) lambda_k A_k`.
///
/// Factored instances produce exactly `s[i] * gamma[j]`. Fails with
/// [`Error::MemoryBudget`] when `m1 * m2` exceeds `cell_budget`.
pub fn materialize_weight_matrix(
    instance: &RankingInstance,
    lambda: &[f64],
    epsilon: f64,
    cell_budget: usize,
) -> Result<Matrix> {
    check_lambda(instance, lambda, epsilon)?;
    let (m1, m2) = (instance.m1(), instance.m2());
    let cells = m1.saturating_mul(m2);
    if cells > cell_budget {
        return Err(Error::MemoryBudget {
            cells,
            budget: cell_budget,
        });
    }
    let gamma = instance.gamma.values();
    if instance.is_factored() {
        let s = score_vector(instance, lambda, epsilon)?;
        return Ok(Matrix::from_fn(m1, m2, |i, j| s[i] * gamma[j]));
    }
    let mut out = Matrix::from_fn(m1, m2, |i, j| instance.u.cell(i, j, &instance.gamma));
    for (c, &l) in instance.constraints.iter().zip(lambda) {
        let w = (1.0 + epsilon) * l;
        if w == 0.0 {
            continue;
        }
        for i in 0..m1 {
            for j in 0..m2 {
                let v = out.get(i, j) + w * c.a.cell(i, j, &instance.gamma);
                out.set(i, j, v);
            }
        }
    }
    Ok(out)
}

/// Rank -> item map with its weight and, when produced by an exact solver,
/// the dual potentials that certify optimality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub item_at_rank: Vec<usize>,
    pub total_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_potentials: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_potentials: Option<Vec<f64>>,
}

impl Assignment {
    pub fn new(item_at_rank: Vec<usize>, total_weight: f64) -> Self {
        Assignment {
            item_at_rank,
            total_weight,
            row_potentials: None,
            col_potentials: None,
        }
    }

    /// Entries are distinct and below `m1`.
    pub fn is_valid(&self, m1: usize) -> bool {
        let mut seen = vec![false; m1];
        self.item_at_rank.iter().all(|&i| {
            i < m1 && !std::mem::replace(&mut seen[i], true)
        })
    }

    /// Checks complementary slackness and dual feasibility of the potentials
    /// against `weights`, with tolerance `tol` scaled by the largest weight.
    /// Returns `false` when potentials are absent.
    pub fn certifies_optimality(&self, weights: &Matrix, tol: f64) -> bool {
        let (Some(rows), Some(cols)) = (&self.row_potentials, &self.col_potentials) else {
            return false;
        };
        if rows.len() != weights.rows() || cols.len() != weights.cols() {
            return false;
        }
        let scale = weights_scale(weights);
        let tol = tol * scale;
        let mut assigned = vec![false; weights.rows()];
        for (j, &i) in self.item_at_rank.iter().enumerate() {
            assigned[i] = true;
            if (rows[i] + cols[j] - weights.get(i, j)).abs() > tol {
                return false;
            }
        }
        for i in 0..weights.rows() {
            // Unassigned items carry zero potential; assigned ones are nonnegative.
            if rows[i] < -tol || (!assigned[i] && rows[i].abs() > tol) {
                return false;
            }
            for (j, c) in cols.iter().enumerate() {
                if rows[i] + c < weights.get(i, j) - tol {
                    return false;
                }
            }
        }
        let dual: f64 = rows.iter().sum::<f64>() + cols.iter().sum::<f64>();
        (dual - self.total_weight).abs() <= tol * (weights.rows() + weights.cols()) as f64
    }
}

pub(crate) fn weights_scale(weights: &Matrix) -> f64 {
    weights.data.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()))
}

/// Nonnegative shadow prices with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowPriceVector {
    pub lambda: Vec<f64>,
    pub dual_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub infeasible_flag: bool,
}
