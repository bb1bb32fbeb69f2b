//! Fixtures and generators shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shadowrank::dataset::load_dataset;
use shadowrank::{
    BoundKind, ConstraintSpec, DiscountVector, Matrix, RankingInstance, Sense, Weights,
};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn figure_one() -> RankingInstance {
    load_dataset(data_path("figure1.jsonl")).unwrap().remove(0)
}

pub fn figure_one_utility() -> Matrix {
    Matrix::from_rows(vec![
        vec![5.0, 4.0, 2.0, 1.0],
        vec![5.0, 3.0, 3.0, 2.0],
        vec![3.0, 3.0, 3.0, 3.0],
        vec![2.0, 1.0, 0.0, 0.0],
    ])
    .unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn integer_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, hi: i32) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| f64::from(rng.random_range(0..=hi)))
}

/// A random permutation prefix of length `take`.
pub fn random_ranking(rng: &mut ChaCha8Rng, m1: usize, take: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..m1).collect();
    for i in 0..take {
        let j = rng.random_range(i..m1);
        items.swap(i, j);
    }
    items.truncate(take);
    items
}

/// Fixed-discounting instance: utilities in [1, 5], binary topic
/// memberships, and bounds equal to the exposure of a random ranking, so
/// at least that ranking is compliant.
pub fn feasible_topic_instance(rng: &mut ChaCha8Rng, m1: usize, m2: usize, k: usize) -> RankingInstance {
    let gamma = DiscountVector::dcg(m2).unwrap();
    let u: Vec<f64> = (0..m1).map(|_| rng.random_range(1.0..5.0)).collect();
    let witness = random_ranking(rng, m1, m2);
    let constraints = (0..k)
        .map(|c| {
            let a: Vec<f64> = (0..m1)
                .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
                .collect();
            let b: f64 = witness
                .iter()
                .zip(gamma.values())
                .map(|(&i, g)| a[i] * g)
                .sum();
            ConstraintSpec::new(format!("c{c}"), Weights::Discounted(a), Sense::Ge, b, BoundKind::Absolute)
                .unwrap()
        })
        .collect();
    RankingInstance::new("r", Weights::Discounted(u), gamma, constraints, vec![]).unwrap()
}
