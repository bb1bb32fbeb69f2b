mod common;

use proptest::prelude::*;
use shadowrank::assignment::{
    assign, brute_force_assign, greedy_assign, hungarian_assign, is_inverse_monge,
    sorted_identity_assign, AssignConfig, AssignInput, AssignStrategy,
};
use shadowrank::{DiscountVector, Matrix};

fn matrix(max_rows: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows)
        .prop_flat_map(|m1| (Just(m1), 1..=m1))
        .prop_flat_map(|(m1, m2)| {
            proptest::collection::vec(-20i32..20, m1 * m2)
                .prop_map(move |v| Matrix::from_fn(m1, m2, |i, j| f64::from(v[i * m2 + j])))
        })
}

fn non_increasing(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..5.0, len).prop_map(|steps| {
        let mut acc = 100.0;
        steps
            .into_iter()
            .map(|s| {
                acc -= s;
                acc
            })
            .collect()
    })
}

fn monge_matrix(m: usize, n: usize) -> impl Strategy<Value = Matrix> {
    (non_increasing(m), non_increasing(n))
        .prop_map(|(u, g)| Matrix::from_fn(u.len(), g.len(), |i, j| u[i] * g[j]))
}

fn add(a: &Matrix, b: &Matrix, wa: f64, wb: f64) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| wa * a.get(i, j) + wb * b.get(i, j))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn hungarian_matches_brute_force(w in matrix(7)) {
        let h = hungarian_assign(&w).unwrap();
        let b = brute_force_assign(&w, None).unwrap();
        prop_assert_eq!(h.total_weight, b.total_weight);
        prop_assert!(h.is_valid(w.rows()));
        prop_assert_eq!(w.assignment_weight(&h.item_at_rank), h.total_weight);
    }

    #[test]
    fn potentials_certify_optimality(w in matrix(7)) {
        let h = hungarian_assign(&w).unwrap();
        prop_assert!(h.certifies_optimality(&w, 1e-9));
        let rows = h.row_potentials.as_ref().unwrap();
        let cols = h.col_potentials.as_ref().unwrap();
        let dual: f64 = rows.iter().sum::<f64>() + cols.iter().sum::<f64>();
        prop_assert!((dual - h.total_weight).abs() <= 1e-9 * h.total_weight.abs().max(1.0));
    }

    #[test]
    fn greedy_is_half_approximate(w in matrix(8)) {
        let w = Matrix::from_fn(w.rows(), w.cols(), |i, j| w.get(i, j).abs());
        let g = greedy_assign(&w).unwrap();
        let h = hungarian_assign(&w).unwrap();
        prop_assert!(g.is_valid(w.rows()));
        prop_assert!(g.total_weight >= 0.5 * h.total_weight - 1e-12);
    }

    #[test]
    fn sort_matches_hungarian_on_factored(
        (s, g) in (1usize..24).prop_flat_map(|m1| (1..=m1).prop_flat_map(move |m2| (
            proptest::collection::vec(-10.0f64..10.0, m1),
            non_increasing(m2).prop_map(|g| g.into_iter().map(|v| v.max(0.01)).collect::<Vec<_>>()),
        )))
    ) {
        let gamma = DiscountVector::new(g).unwrap();
        let sorted = sorted_identity_assign(&s, &gamma).unwrap();
        let dense = Matrix::from_fn(s.len(), gamma.len(), |i, j| s[i] * gamma.values()[j]);
        let h = hungarian_assign(&dense).unwrap();
        prop_assert!((sorted.total_weight - h.total_weight).abs() <= 1e-9 * h.total_weight.abs().max(1.0));
        prop_assert!(sorted.is_valid(s.len()));
    }

    #[test]
    fn monge_closure(
        a in monge_matrix(6, 5),
        b in monge_matrix(6, 5),
        wa in 0.0f64..3.0,
        wb in 0.0f64..3.0,
        alpha in proptest::collection::vec(-5.0f64..5.0, 6),
        beta in proptest::collection::vec(-5.0f64..5.0, 5),
    ) {
        prop_assert!(is_inverse_monge(&a, 1e-9));
        prop_assert!(is_inverse_monge(&a.transpose(), 1e-9));
        let sum = add(&a, &b, wa, wb);
        prop_assert!(is_inverse_monge(&sum, 1e-9));
        let shifted = Matrix::from_fn(6, 5, |i, j| sum.get(i, j) + alpha[i] + beta[j]);
        prop_assert!(is_inverse_monge(&shifted, 1e-9));
    }

    #[test]
    fn every_backend_returns_distinct_items(w in matrix(8)) {
        let cfg = AssignConfig::default();
        for strategy in [AssignStrategy::Hungarian, AssignStrategy::GreedyHalf, AssignStrategy::BruteForce, AssignStrategy::Auto] {
            let a = assign(AssignInput::Dense(&w), strategy, &cfg).unwrap();
            prop_assert!(a.is_valid(w.rows()));
            prop_assert_eq!(a.item_at_rank.len(), w.cols());
        }
    }
}

#[test]
fn sorted_identity_example() {
    let gamma = DiscountVector::new(vec![1.0, 0.63]).unwrap();
    let a = sorted_identity_assign(&[3.0, 1.0, 2.0], &gamma).unwrap();
    assert_eq!(a.item_at_rank, vec![0, 2]);
    assert!((a.total_weight - 4.26).abs() < 1e-12);
}

#[test]
fn greedy_two_by_two() {
    let w = Matrix::from_rows(vec![vec![2.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let g = greedy_assign(&w).unwrap();
    assert_eq!(g.item_at_rank, vec![0, 1]);
    assert_eq!(g.total_weight, 2.0);
}

#[test]
fn diagonal_dominant_is_identity() {
    let m = 12;
    let w = Matrix::from_fn(m, m, |i, j| if i == j { 10.0 } else { 0.0 });
    let ident: Vec<usize> = (0..m).collect();
    for a in [hungarian_assign(&w).unwrap(), greedy_assign(&w).unwrap()] {
        assert_eq!(a.item_at_rank, ident);
        assert_eq!(a.total_weight, 10.0 * m as f64);
    }
}

#[test]
fn figure_one_utility_is_not_monge() {
    assert!(!is_inverse_monge(&common::figure_one_utility(), 1e-9));
}

#[test]
fn dispatcher_choices() {
    use shadowrank::assignment::choose_strategy;
    let cfg = AssignConfig::default();
    let gamma = DiscountVector::dcg(3).unwrap();
    let s = [0.5, 2.0, 1.0, 3.0];
    let input = AssignInput::Factored { scores: &s, gamma: &gamma };
    assert_eq!(choose_strategy(input, &cfg), AssignStrategy::SortMonge);
    assert_eq!(
        assign(input, AssignStrategy::Auto, &cfg).unwrap(),
        sorted_identity_assign(&s, &gamma).unwrap()
    );
    let u = common::figure_one_utility();
    assert_eq!(choose_strategy(AssignInput::Dense(&u), &cfg), AssignStrategy::Hungarian);
    let big = Matrix::zeros(5000, 500);
    assert_eq!(choose_strategy(AssignInput::Dense(&big), &cfg), AssignStrategy::GreedyHalf);
}
