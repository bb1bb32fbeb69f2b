//! Shadow prices from the Lagrangian dual.
//!
//! For a canonical instance (all constraints `tr(A_k^T P) >= b_k`) the dual
//! function is
//!
//! ```text
//! g(lambda) = max_P tr((U + sum_k lambda_k A_k)^T P) - lambda^T b,   lambda >= 0
//! ```
//!
//! It is convex and piecewise linear; `tr(A_k^T P*) - b_k` at the inner
//! maximizer `P*` is a subgradient. [`solve_dual`] minimizes it with projected
//! subgradient steps, using the assignment module as the inner oracle. The
//! row/column duals of the full linear program are the inner assignment's
//! potentials and are not needed here.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{assign, brute_force_assign, AssignConfig, AssignInput, AssignStrategy, LinearConstraint};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{
    materialize_weight_matrix, score_vector, Assignment, Matrix, RankingInstance,
    ShadowPriceVector, Weights, DEFAULT_CELL_BUDGET, DEFAULT_TOL,
};

/// `{0} ∪ {i * 10^-j : i in 1..=9, j in 1..=4}`, ascending.
pub fn default_epsilon_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    for j in 1..=4 {
        for i in 1..=9 {
            grid.push(i as f64 / 10f64.powi(j));
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// Polyak steps towards an adaptively lowered target level.
    PolyakEstimate,
    /// Normalized steps of length `c / t`.
    Harmonic(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub max_iterations: usize,
    pub step_schedule: StepSchedule,
    /// Stop when the best dual value improves by less than this (relative)
    /// over `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    /// Upper bound on every `lambda_k`; reaching it flags infeasibility.
    pub lambda_cap: f64,
    pub epsilon_grid: Vec<f64>,
    pub assign: AssignConfig,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig {
            max_iterations: 5000,
            step_schedule: StepSchedule::PolyakEstimate,
            tolerance: 1e-6,
            patience: 50,
            lambda_cap: 1e6,
            epsilon_grid: default_epsilon_grid(),
            assign: AssignConfig::default(),
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_cap.is_nan() || self.lambda_cap <= 0.0 {
            return Err(Error::Config("lambda_cap must be positive".into()));
        }
        if self.epsilon_grid.is_empty() {
            return Err(Error::Config("epsilon grid is empty".into()));
        }
        if self.epsilon_grid.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::Config("epsilon grid values must be >= 0".into()));
        }
        if let StepSchedule::Harmonic(c) = self.step_schedule {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("harmonic step constant must be positive".into()));
            }
        }
        if self.max_iterations == 0 || self.patience == 0 {
            return Err(Error::Config("max_iterations and patience must be positive".into()));
        }
        Ok(())
    }
}

/// Constraint slack of a ranking against canonical constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    /// `tr(A_k^T P) - b_k`.
    pub slack: Vec<f64>,
    pub compliant: bool,
    /// Raw `tr(U^T P)`.
    pub utility: f64,
}

/// Evaluates a ranking against a canonical instance.
pub fn compliance(instance: &RankingInstance, item_at_rank: &[usize]) -> ComplianceReport {
    let slack: Vec<f64> = instance
        .exposures(item_at_rank)
        .iter()
        .zip(instance.constraints())
        .map(|(e, c)| e - c.bound)
        .collect();
    ComplianceReport {
        compliant: slack.iter().all(|s| *s >= -DEFAULT_TOL),
        slack,
        utility: instance.utility_of(item_at_rank),
    }
}

/// Best assignment for `S = U + sum_k (1 + eps) lambda_k A_k`.
pub fn adjusted_assignment(
    instance: &RankingInstance,
    lambda: &[f64],
    epsilon: f64,
    config: &AssignConfig,
) -> Result<Assignment> {
    if instance.is_factored() {
        let s = score_vector(instance, lambda, epsilon)?;
        assign(
            AssignInput::Factored {
                scores: &s,
                gamma: instance.gamma(),
            },
            AssignStrategy::Auto,
            config,
        )
    } else {
        let s = materialize_weight_matrix(instance, lambda, epsilon, DEFAULT_CELL_BUDGET)?;
        assign(AssignInput::Dense(&s), AssignStrategy::Auto, config)
    }
}

/// One evaluation of the dual function.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEvaluation {
    pub value: f64,
    pub inner: Assignment,
    /// `tr(A_k^T P*) - b_k`, a subgradient of `g` at `lambda`.
    pub subgradient: Vec<f64>,
}

pub fn dual_value(instance: &RankingInstance, lambda: &[f64]) -> Result<DualEvaluation> {
    dual_value_with(instance, lambda, &AssignConfig::default())
}

pub fn dual_value_with(
    instance: &RankingInstance,
    lambda: &[f64],
    config: &AssignConfig,
) -> Result<DualEvaluation> {
    let inner = adjusted_assignment(instance, lambda, 0.0, config)?;
    let report = compliance(instance, &inner.item_at_rank);
    let value = report.utility
        + lambda
            .iter()
            .zip(&report.slack)
            .map(|(l, s)| l * s)
            .sum::<f64>();
    Ok(DualEvaluation {
        value,
        inner,
        subgradient: report.slack,
    })
}

/// Feasible descent direction: the subgradient with components zeroed where
/// the bound `lambda_k >= 0` blocks movement.
fn projected_direction(lambda: &[f64], subgradient: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .zip(subgradient)
        .map(|(&l, &s)| if l <= 0.0 && s > 0.0 { 0.0 } else { s })
        .collect()
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}

/// Rough size of the shadow prices: utility spread over coefficient spread.
fn lambda_scale(instance: &RankingInstance) -> f64 {
    let (m1, m2) = (instance.m1(), instance.m2());
    let gamma = instance.gamma();
    let cells = |w: &crate::model::Weights| {
        (0..m1).flat_map(move |i| (0..m2).map(move |j| (i, j)))
            .map(move |(i, j)| w.cell(i, j, gamma))
            .collect::<Vec<_>>()
    };
    let u_spread = spread(cells(instance.utility()).into_iter());
    let a_spread = instance
        .constraints()
        .iter()
        .map(|c| spread(cells(&c.a).into_iter()))
        .fold(0.0, f64::max);
    if u_spread > 0.0 && a_spread > 0.0 {
        u_spread / a_spread
    } else {
        1.0
    }
}

/// Minimizes the dual function. See [`solve_dual_observed`].
pub fn solve_dual(instance: &RankingInstance, config: &DualConfig) -> Result<ShadowPriceVector> {
    solve_dual_observed(instance, config, |_, _| {})
}

/// Projected subgradient minimization of `g` over `[0, lambda_cap]^K`,
/// calling `observer(lambda, g(lambda))` for every evaluated iterate.
///
/// Returns the best iterate found. The run stops when the projected
/// subgradient vanishes, when the best value stalls for `patience`
/// iterations, when any price reaches `lambda_cap` (an unbounded dual means
/// the relaxed primal is infeasible), or after `max_iterations`.
pub fn solve_dual_observed(
    instance: &RankingInstance,
    config: &DualConfig,
    mut observer: impl FnMut(&[f64], f64),
) -> Result<ShadowPriceVector> {
    config.validate()?;
    if !instance.is_canonical() {
        return Err(Error::NotCanonical);
    }
    let k = instance.k();
    let mut lambda = vec![0.0; k];
    let mut eval = dual_value_with(instance, &lambda, &config.assign)?;
    observer(&lambda, eval.value);
    let mut iterations = 1;
    if k == 0 || eval.subgradient.iter().all(|s| *s >= -DEFAULT_TOL) {
        return Ok(ShadowPriceVector {
            lambda,
            dual_value: eval.value,
            iterations,
            converged: true,
            infeasible_flag: false,
        });
    }

    let certify = InfeasibilityCheck::new(instance, config)?;
    for c in 0..k {
        if eval.subgradient[c] < 0.0 {
            let mut d = vec![0.0; k];
            d[c] = 1.0;
            if let Some(out) = certify.diverge(&d, iterations, &mut observer)? {
                return Ok(out);
            }
        }
    }

    let mut best_value = eval.value;
    let mut best_lambda = lambda.clone();
    let mut best_eval = eval.clone();
    let mut history = vec![best_value];
    let initial_deficit: f64 = eval.subgradient.iter().map(|s| s.abs()).sum();
    let mut level_gap = (0.5 * initial_deficit * lambda_scale(instance)).max(f64::MIN_POSITIVE);
    let mut misses = 0usize;
    let mut converged = false;
    let mut capped = false;
    let mut cuts = Cuts::default();
    cuts.add(&lambda, &eval);

    for t in 1..config.max_iterations {
        let dir = projected_direction(&lambda, &eval.subgradient);
        let norm2: f64 = dir.iter().map(|d| d * d).sum();
        if norm2 <= f64::EPSILON * f64::EPSILON {
            // 0 lies in the projected subdifferential.
            converged = true;
            break;
        }
        let step = match config.step_schedule {
            StepSchedule::PolyakEstimate => (eval.value - (best_value - level_gap)) / norm2,
            StepSchedule::Harmonic(c) => c / (t as f64 * norm2.sqrt()),
        };
        let next: Vec<f64> = lambda
            .iter()
            .zip(&dir)
            .map(|(l, d)| (l - step * d).clamp(0.0, config.lambda_cap))
            .collect();
        let next_eval = dual_value_with(instance, &next, &config.assign)?;
        observer(&next, next_eval.value);
        iterations += 1;
        cuts.add(&next, &next_eval);

        if next_eval.value < best_value {
            if next_eval.value <= best_value - level_gap {
                level_gap *= 1.5;
            }
            best_value = next_eval.value;
            best_lambda = next.clone();
            best_eval = next_eval.clone();
            misses = 0;
            lambda = next;
            eval = next_eval;
        } else {
            misses += 1;
            if config.step_schedule == StepSchedule::PolyakEstimate && misses >= 3 {
                level_gap *= 0.5;
                misses = 0;
                lambda = best_lambda.clone();
                eval = best_eval.clone();
            } else {
                lambda = next;
                eval = next_eval;
            }
        }

        if best_lambda.iter().any(|l| *l >= config.lambda_cap) {
            capped = true;
            break;
        }
        if t % CERTIFICATE_PERIOD == 0 {
            if let Some(out) = certify.diverge(&best_lambda, iterations, &mut observer)? {
                return Ok(out);
            }
        }
        history.push(best_value);
        if t >= config.patience {
            let before = history[t - config.patience];
            if before - best_value <= config.tolerance * best_value.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }

    if !capped && !converged {
        if let Some(out) = certify.diverge(&best_lambda, iterations, &mut observer)? {
            return Ok(out);
        }
    }
    if !capped {
        for candidate in cuts.kink_candidates(&best_lambda, best_value, config.lambda_cap) {
            let e = dual_value_with(instance, &candidate, &config.assign)?;
            observer(&candidate, e.value);
            iterations += 1;
            if e.value <= best_value {
                best_value = e.value;
                best_lambda = candidate;
            }
        }
    }

    Ok(ShadowPriceVector {
        lambda: best_lambda,
        dual_value: best_value,
        iterations,
        converged,
        infeasible_flag: capped,
    })
}

/// Iterations between recession-direction checks.
const CERTIFICATE_PERIOD: usize = 64;

/// Detects primal infeasibility from a direction `d >= 0` with
/// `max_P sum_k d_k (tr(A_k^T P) - b_k) < 0`: along such a ray the dual
/// decreases without bound, so no ranking meets all constraints.
struct InfeasibilityCheck<'a> {
    instance: &'a RankingInstance,
    /// Copy of the instance with zero utility, or `None` when the inner
    /// solver would not be exact and no certificate can be trusted.
    zero: Option<RankingInstance>,
    config: &'a DualConfig,
}

impl<'a> InfeasibilityCheck<'a> {
    fn new(instance: &'a RankingInstance, config: &'a DualConfig) -> Result<Self> {
        let exact = instance.is_factored() || instance.m1() <= config.assign.greedy_threshold;
        let zero = if exact {
            let u = if instance.is_factored() {
                Weights::Discounted(vec![0.0; instance.m1()])
            } else {
                Weights::Dense(Matrix::zeros(instance.m1(), instance.m2()))
            };
            Some(instance.with_utility(instance.user_id(), u, instance.covariates().to_vec())?)
        } else {
            None
        };
        Ok(InfeasibilityCheck { instance, zero, config })
    }

    /// If `direction` certifies infeasibility, the result of moving along
    /// it to the price cap.
    fn diverge(
        &self,
        direction: &[f64],
        iterations: usize,
        observer: &mut impl FnMut(&[f64], f64),
    ) -> Result<Option<ShadowPriceVector>> {
        let Some(zero) = &self.zero else {
            return Ok(None);
        };
        let top = direction.iter().fold(0.0f64, |m, v| m.max(*v));
        if top <= 0.0 {
            return Ok(None);
        }
        let d: Vec<f64> = direction.iter().map(|v| v / top).collect();
        let inner = adjusted_assignment(zero, &d, 0.0, &self.config.assign)?;
        let slack = compliance(self.instance, &inner.item_at_rank).slack;
        let worst: f64 = dot(&d, &slack);
        let scale: f64 = d
            .iter()
            .zip(self.instance.bounds())
            .map(|(w, b)| w * b.abs())
            .sum::<f64>()
            .max(1.0);
        if worst >= -1e-9 * scale {
            return Ok(None);
        }
        let lambda: Vec<f64> = d.iter().map(|v| v * self.config.lambda_cap).collect();
        let e = dual_value_with(self.instance, &lambda, &self.config.assign)?;
        observer(&lambda, e.value);
        Ok(Some(ShadowPriceVector {
            lambda,
            dual_value: e.value,
            iterations: iterations + 1,
            converged: false,
            infeasible_flag: true,
        }))
    }
}

/// Affine minorants `g(l) >= intercept + slope . l` collected from
/// evaluated iterates, one per distinct subgradient.
#[derive(Default)]
struct Cuts {
    by_slope: HashMap<Vec<u64>, usize>,
    cuts: Vec<(f64, Vec<f64>)>,
}

impl Cuts {
    fn add(&mut self, lambda: &[f64], eval: &DualEvaluation) {
        let slope = &eval.subgradient;
        let intercept = eval.value - dot(slope, lambda);
        let key: Vec<u64> = slope.iter().map(|v| v.to_bits()).collect();
        match self.by_slope.get(&key) {
            Some(&i) => self.cuts[i].0 = self.cuts[i].0.max(intercept),
            None => {
                self.by_slope.insert(key, self.cuts.len());
                self.cuts.push((intercept, slope.clone()));
            }
        }
    }

    /// Points where `|J| + 1` nearly active cuts meet, `J` being the
    /// positive coordinates of `best`. The dual is piecewise linear, so its
    /// minimizer is such an intersection; this removes the residual error
    /// of the subgradient phase.
    fn kink_candidates(&self, best: &[f64], best_value: f64, cap: f64) -> Vec<Vec<f64>> {
        const MAX_NEAR: usize = 8;
        let support: Vec<usize> = (0..best.len()).filter(|&k| best[k] > 0.0).collect();
        if support.is_empty() {
            return Vec::new();
        }
        let eta = 1e-6 * best_value.abs().max(1.0);
        let mut near: Vec<(f64, &(f64, Vec<f64>))> = self
            .cuts
            .iter()
            .map(|c| (c.0 + dot(&c.1, best), c))
            .filter(|(v, _)| *v >= best_value - eta)
            .collect();
        near.sort_by(|a, b| b.0.total_cmp(&a.0));
        near.truncate(MAX_NEAR);
        let n = support.len() + 1;
        let mut out = Vec::new();
        for combo in combinations(near.len(), n) {
            // Unknowns: lambda_J and the common level t.
            let mut a = vec![vec![0.0; n]; n];
            let mut rhs = vec![0.0; n];
            for (row, &ci) in combo.iter().enumerate() {
                let (intercept, slope) = near[ci].1;
                for (col, &k) in support.iter().enumerate() {
                    a[row][col] = slope[k];
                }
                a[row][n - 1] = -1.0;
                rhs[row] = -intercept;
            }
            if let Some(x) = solve_linear(a, rhs) {
                let mut lambda = vec![0.0; best.len()];
                for (col, &k) in support.iter().enumerate() {
                    lambda[k] = x[col];
                }
                if lambda.iter().all(|l| l.is_finite() && *l >= 0.0 && *l <= cap) {
                    out.push(lambda);
                }
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All `r`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if r <= n {
        go(0, n, r, &mut Vec::with_capacity(r), &mut out);
    }
    out
}

/// Gaussian elimination with partial pivoting; `None` if (near) singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Ranks with `S = U + sum_k (1 + eps) lambda_k A_k` and scores the result
/// against the (canonical) constraints and the raw utilities.
pub fn rank_with_lambda(
    instance: &RankingInstance,
    lambda: &[f64],
    epsilon: f64,
    config: &AssignConfig,
) -> Result<(Assignment, ComplianceReport)> {
    let a = adjusted_assignment(instance, lambda, epsilon, config)?;
    let report = compliance(instance, &a.item_at_rank);
    Ok((a, report))
}

/// Grid value minimizing the share of non-compliant training rankings.
/// Ties go to the higher mean raw utility, then to the smaller epsilon.
pub fn tune_epsilon(
    instances: &[RankingInstance],
    lambdas: &[Vec<f64>],
    grid: &[f64],
    config: &AssignConfig,
    exec: Execution,
) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if instances.len() != lambdas.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} instances but {} lambda rows",
            instances.len(),
            lambdas.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::Config("epsilon grid is empty".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best: Option<(usize, f64, f64)> = None;
    for &eps in &grid {
        let outcomes = exec.map_range(instances.len(), |i| {
            rank_with_lambda(&instances[i], &lambdas[i], eps, config).map(|(_, r)| r)
        });
        let mut violations = 0usize;
        let mut utility = 0.0;
        for r in outcomes {
            let r = r?;
            violations += usize::from(!r.compliant);
            utility += r.utility;
        }
        let mean_utility = utility / instances.len() as f64;
        let better = match best {
            None => true,
            Some((v, u, _)) => violations < v || (violations == v && mean_utility > u),
        };
        if better {
            best = Some((violations, mean_utility, eps));
        }
    }
    Ok(best.map(|(_, _, e)| e).unwrap())
}

/// Dense `U` and constraint matrices of an instance.
pub fn dense_terms(instance: &RankingInstance) -> (Matrix, Vec<LinearConstraint>) {
    let (m1, m2) = (instance.m1(), instance.m2());
    let gamma = instance.gamma();
    let u = Matrix::from_fn(m1, m2, |i, j| instance.utility().cell(i, j, gamma));
    let cons = instance
        .constraints()
        .iter()
        .map(|c| LinearConstraint {
            coeffs: Matrix::from_fn(m1, m2, |i, j| c.a.cell(i, j, gamma)),
            bound: c.bound,
        })
        .collect();
    (u, cons)
}

/// Exact constrained optimum by enumeration (at most eight items).
pub fn exhaustive_optimum(instance: &RankingInstance) -> Result<Assignment> {
    if !instance.is_canonical() {
        return Err(Error::NotCanonical);
    }
    let (u, cons) = dense_terms(instance);
    brute_force_assign(&u, Some(&cons))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundKind, ConstraintSpec, DiscountVector, Sense, Weights};

    fn fig1() -> RankingInstance {
        let u = Matrix::from_rows(vec![
            vec![5.0, 4.0, 2.0, 1.0],
            vec![5.0, 3.0, 3.0, 2.0],
            vec![3.0, 3.0, 3.0, 3.0],
            vec![2.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let a = Matrix::from_rows(vec![
            vec![0.0; 4],
            vec![0.0; 4],
            vec![1.0, 0.6, 0.5, 0.4],
            vec![0.0; 4],
        ])
        .unwrap();
        let c = ConstraintSpec::new("A1", Weights::Dense(a), Sense::Ge, 0.7, BoundKind::Absolute)
            .unwrap();
        RankingInstance::new(
            "fig1",
            Weights::Dense(u),
            DiscountVector::new(vec![1.0; 4]).unwrap(),
            vec![c],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn epsilon_grid_contents() {
        let g = default_epsilon_grid();
        assert_eq!(g.len(), 37);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 1e-4);
        assert_eq!(*g.last().unwrap(), 0.9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dual_value_figure_one() {
        let inst = fig1();
        let e = dual_value(&inst, &[4.0]).unwrap();
        assert!((e.inner.total_weight - 14.0).abs() < 1e-12);
        assert!((e.value - 11.2).abs() < 1e-12);
        let e0 = dual_value(&inst, &[0.0]).unwrap();
        assert_eq!(e0.value, 12.0);
    }

    #[test]
    fn solve_dual_figure_one() {
        let sp = solve_dual(&fig1(), &DualConfig::default()).unwrap();
        assert!(!sp.infeasible_flag);
        assert!((sp.lambda[0] - 4.0).abs() < 1e-12, "lambda = {:?}", sp.lambda);
        assert!((sp.dual_value - 11.2).abs() < 1e-12);
    }

    #[test]
    fn rank_with_lambda_breaks_tie_towards_compliance() {
        let (a, r) = rank_with_lambda(&fig1(), &[4.0], 1e-4, &AssignConfig::default()).unwrap();
        assert_eq!(a.item_at_rank[0], 2);
        assert!(r.compliant);
        assert!((r.slack[0] - 0.3).abs() < 1e-12);
        assert_eq!(r.utility, 10.0);
    }

    #[test]
    fn zero_lambda_is_pure_utility_ranking() {
        let (a, r) = rank_with_lambda(&fig1(), &[0.0], 0.0, &AssignConfig::default()).unwrap();
        assert_eq!(r.utility, 12.0);
        assert!(!r.compliant);
        assert_eq!(a.item_at_rank, vec![1, 0, 2, 3]);
    }

    fn two_item_tie() -> RankingInstance {
        // s = (2, 1 + lambda) ties at lambda = 1; the lower index wins at eps = 0.
        let c = ConstraintSpec::new(
            "c",
            Weights::Discounted(vec![0.0, 1.0]),
            Sense::Ge,
            0.75,
            BoundKind::Absolute,
        )
        .unwrap();
        RankingInstance::new(
            "tie",
            Weights::Discounted(vec![2.0, 1.0]),
            DiscountVector::new(vec![1.0, 0.5]).unwrap(),
            vec![c],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn tune_epsilon_picks_smallest_breaking_value() {
        let inst = two_item_tie();
        let cfg = AssignConfig::default();
        let (_, r0) = rank_with_lambda(&inst, &[1.0], 0.0, &cfg).unwrap();
        assert!(!r0.compliant);
        let eps = tune_epsilon(
            &[inst],
            &[vec![1.0]],
            &default_epsilon_grid(),
            &cfg,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(eps, 1e-4);
    }

    #[test]
    fn two_item_tie_dual_optimum() {
        let sp = solve_dual(&two_item_tie(), &DualConfig::default()).unwrap();
        assert!((sp.lambda[0] - 1.0).abs() < 1e-12, "{:?}", sp);
        assert!((sp.dual_value - 2.25).abs() < 1e-12);
    }

    #[test]
    fn tune_epsilon_figure_one_is_compliant() {
        let inst = fig1();
        let cfg = AssignConfig::default();
        let eps = tune_epsilon(
            std::slice::from_ref(&inst),
            &[vec![4.0]],
            &default_epsilon_grid(),
            &cfg,
            Execution::Sequential,
        )
        .unwrap();
        let (_, r) = rank_with_lambda(&inst, &[4.0], eps, &cfg).unwrap();
        assert!(r.compliant);
        assert_eq!(r.utility, 10.0);
    }

    #[test]
    fn tune_epsilon_prefers_zero_when_everything_complies() {
        let gamma = DiscountVector::new(vec![1.0, 0.5]).unwrap();
        let c = ConstraintSpec::new(
            "c",
            Weights::Discounted(vec![1.0, 0.0, 0.0]),
            Sense::Ge,
            0.5,
            BoundKind::Absolute,
        )
        .unwrap();
        let inst = RankingInstance::new(
            "x",
            Weights::Discounted(vec![3.0, 2.0, 1.0]),
            gamma,
            vec![c],
            vec![],
        )
        .unwrap();
        let eps = tune_epsilon(
            &[inst],
            &[vec![0.0]],
            &default_epsilon_grid(),
            &AssignConfig::default(),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(eps, 0.0);
        assert!(matches!(
            tune_epsilon(&[], &[], &[0.0], &AssignConfig::default(), Execution::Sequential),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn unconstrained_compliant_instance_has_zero_prices() {
        let gamma = DiscountVector::dcg(3).unwrap();
        let c = ConstraintSpec::new(
            "c",
            Weights::Discounted(vec![1.0, 0.0, 1.0, 0.0]),
            Sense::Ge,
            1.0,
            BoundKind::Absolute,
        )
        .unwrap();
        let inst = RankingInstance::new(
            "x",
            Weights::Discounted(vec![4.0, 3.0, 2.0, 1.0]),
            gamma,
            vec![c],
            vec![],
        )
        .unwrap();
        let sp = solve_dual(&inst, &DualConfig::default()).unwrap();
        assert_eq!(sp.lambda, vec![0.0]);
        assert!(sp.converged);
        assert_eq!(sp.iterations, 1);
    }

    #[test]
    fn unreachable_bound_flags_infeasibility() {
        let gamma = DiscountVector::new(vec![1.0, 0.5]).unwrap();
        // Max achievable exposure is 1.0 * 1 + 0.5 * 0 = 1.0.
        let c = ConstraintSpec::new(
            "c",
            Weights::Discounted(vec![1.0, 0.0, 0.0]),
            Sense::Ge,
            1.2,
            BoundKind::Absolute,
        )
        .unwrap();
        let inst = RankingInstance::new(
            "x",
            Weights::Discounted(vec![3.0, 2.0, 1.0]),
            gamma,
            vec![c],
            vec![],
        )
        .unwrap();
        assert!(matches!(exhaustive_optimum(&inst), Err(Error::Infeasible)));
        let sp = solve_dual(&inst, &DualConfig::default()).unwrap();
        assert!(sp.infeasible_flag);
        assert!(sp.lambda.iter().all(|l| *l <= 1e6));
    }

    #[test]
    fn no_constraints_returns_empty_lambda() {
        let inst = RankingInstance::new(
            "x",
            Weights::Discounted(vec![1.0, 2.0]),
            DiscountVector::new(vec![1.0]).unwrap(),
            vec![],
            vec![],
        )
        .unwrap();
        let sp = solve_dual(&inst, &DualConfig::default()).unwrap();
        assert!(sp.lambda.is_empty());
        assert!(sp.converged);
        assert_eq!(sp.dual_value, 2.0);
    }

    #[test]
    fn linear_solve_and_combinations() {
        let x = solve_linear(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        assert!(solve_linear(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(2, 3).len(), 0);
    }

    #[test]
    fn config_validation() {
        let c = DualConfig {
            lambda_cap: 0.0,
            ..DualConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = DualConfig::default();
        c.epsilon_grid.clear();
        assert!(c.validate().is_err());
    }
}
