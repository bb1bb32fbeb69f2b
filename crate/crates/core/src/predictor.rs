//! Covariate to shadow-price regression.
//!
//! Three predictors are available: an inverse-distance weighted k-nearest
//! neighbour regressor, the training mean, and the constant zero vector.
//! Neighbour search is exact and brute force; training populations here are
//! a few thousand users at most.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Knn,
    Mean,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub k: usize,
    /// Z-score each covariate with the training mean and standard deviation.
    pub standardize: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            k: DEFAULT_NEIGHBORS,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Scaler {
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Scaler {
    fn fit(x: &[Vec<f64>], d: usize) -> Self {
        let n = x.len() as f64;
        let means: Vec<f64> = (0..d).map(|c| x.iter().map(|r| r[c]).sum::<f64>() / n).collect();
        let scales = (0..d)
            .map(|c| {
                let var = x.iter().map(|r| (r[c] - means[c]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Scaler { means, scales }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A fitted predictor. Immutable after fitting; `predict` takes `&self`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPredictor {
    kind: PredictorKind,
    k: usize,
    n_constraints: usize,
    n_covariates: usize,
    train_x: Vec<Vec<f64>>,
    train_lambda: Vec<Vec<f64>>,
    mean_lambda: Vec<f64>,
    scaler: Option<Scaler>,
}

impl LambdaPredictor {
    /// The predictor that always returns zero prices.
    pub fn zero(n_constraints: usize, n_covariates: usize) -> Self {
        LambdaPredictor {
            kind: PredictorKind::Zero,
            k: 0,
            n_constraints,
            n_covariates,
            train_x: Vec::new(),
            train_lambda: Vec::new(),
            mean_lambda: vec![0.0; n_constraints],
            scaler: None,
        }
    }

    pub fn fit(
        kind: PredictorKind,
        x: &[Vec<f64>],
        lambda: &[Vec<f64>],
        config: &PredictorConfig,
    ) -> Result<Self> {
        let n = lambda.len();
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate rows but {} lambda rows",
                x.len(),
                n
            )));
        }
        let kc = lambda[0].len();
        let d = x[0].len();
        if let Some(i) = lambda.iter().position(|r| r.len() != kc) {
            return Err(Error::DimensionMismatch(format!(
                "lambda row {i} has {} entries, expected {kc}",
                lambda[i].len()
            )));
        }
        if let Some(i) = x.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "covariate row {i} has {} entries, expected {d}",
                x[i].len()
            )));
        }
        if lambda.iter().flatten().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidInstance(
                "training prices must be finite and nonnegative".into(),
            ));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("covariates must be finite".into()));
        }

        let mean_lambda: Vec<f64> = (0..kc)
            .map(|c| lambda.iter().map(|r| r[c]).sum::<f64>() / n as f64)
            .collect();

        match kind {
            PredictorKind::Zero => Ok(Self::zero(kc, d)),
            PredictorKind::Mean => Ok(LambdaPredictor {
                kind,
                k: 0,
                n_constraints: kc,
                n_covariates: d,
                train_x: Vec::new(),
                train_lambda: Vec::new(),
                mean_lambda,
                scaler: None,
            }),
            PredictorKind::Knn => {
                if config.k == 0 || config.k > n {
                    return Err(Error::Config(format!(
                        "k = {} neighbours requested with {n} training points",
                        config.k
                    )));
                }
                let scaler = config.standardize.then(|| Scaler::fit(x, d));
                let train_x = match &scaler {
                    Some(s) => x.iter().map(|r| s.apply(r)).collect(),
                    None => x.to_vec(),
                };
                Ok(LambdaPredictor {
                    kind,
                    k: config.k,
                    n_constraints: kc,
                    n_covariates: d,
                    train_x,
                    train_lambda: lambda.to_vec(),
                    mean_lambda,
                    scaler,
                })
            }
        }
    }

    pub fn kind(&self) -> PredictorKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn mean_lambda(&self) -> &[f64] {
        &self.mean_lambda
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_covariates {
            return Err(Error::DimensionMismatch(format!(
                "query has {} covariates, predictor expects {}",
                x.len(),
                self.n_covariates
            )));
        }
        match self.kind {
            PredictorKind::Zero => Ok(vec![0.0; self.n_constraints]),
            PredictorKind::Mean => Ok(self.mean_lambda.clone()),
            PredictorKind::Knn => Ok(self.knn(x)),
        }
    }

    fn knn(&self, x: &[f64]) -> Vec<f64> {
        let q = match &self.scaler {
            Some(s) => s.apply(x),
            None => x.to_vec(),
        };
        let mut dist: Vec<(f64, usize)> = self
            .train_x
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let d2: f64 = r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        // Canonical order (distance, then label, then position) makes the
        // result independent of training row order.
        let canonical = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0)
                .then_with(|| lex(&self.train_lambda[a.1], &self.train_lambda[b.1]))
                .then_with(|| lex(&self.train_x[a.1], &self.train_x[b.1]))
        };
        dist.sort_by(canonical);

        let kth = dist[self.k - 1].0;
        let neighbours = dist.iter().take_while(|(d, _)| *d <= kth);

        let mut out = vec![0.0; self.n_constraints];
        if dist[0].0 == 0.0 {
            let zeros: Vec<usize> = dist.iter().take_while(|(d, _)| *d == 0.0).map(|p| p.1).collect();
            for &i in &zeros {
                for (o, l) in out.iter_mut().zip(&self.train_lambda[i]) {
                    *o += l;
                }
            }
            out.iter_mut().for_each(|o| *o /= zeros.len() as f64);
            return out;
        }
        let mut total = 0.0;
        for &(d, i) in neighbours {
            let w = 1.0 / d;
            total += w;
            for (o, l) in out.iter_mut().zip(&self.train_lambda[i]) {
                *o += w * l;
            }
        }
        out.iter_mut().for_each(|o| *o = (*o / total).max(0.0));
        out
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize) -> PredictorConfig {
        PredictorConfig {
            k,
            standardize: false,
        }
    }

    #[test]
    fn mean_of_two_rows() {
        let x = vec![vec![0.0], vec![1.0]];
        let l = vec![vec![1.0, 0.0], vec![3.0, 2.0]];
        let p = LambdaPredictor::fit(PredictorKind::Mean, &x, &l, &cfg(1)).unwrap();
        assert_eq!(p.predict(&[42.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn zero_ignores_input() {
        let p = LambdaPredictor::zero(3, 2);
        assert_eq!(p.predict(&[5.0, -1.0]).unwrap(), vec![0.0; 3]);
        assert!(p.predict(&[1.0]).is_err());
    }

    #[test]
    fn equidistant_pair() {
        let x = vec![vec![0.0], vec![1.0], vec![10.0]];
        let l = vec![vec![0.0], vec![2.0], vec![8.0]];
        let p = LambdaPredictor::fit(PredictorKind::Knn, &x, &l, &cfg(2)).unwrap();
        assert!((p.predict(&[0.5]).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_training_point() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![3.0, 0.0]];
        let l = vec![vec![0.5], vec![2.0], vec![8.0]];
        let p = LambdaPredictor::fit(PredictorKind::Knn, &x, &l, &cfg(3)).unwrap();
        assert_eq!(p.predict(&[1.0, 1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn duplicate_points_average() {
        let x = vec![vec![1.0], vec![1.0], vec![2.0]];
        let l = vec![vec![1.0], vec![3.0], vec![9.0]];
        let p = LambdaPredictor::fit(PredictorKind::Knn, &x, &l, &cfg(1)).unwrap();
        assert_eq!(p.predict(&[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn ties_at_kth_distance_are_all_included() {
        // k = 1 but both neighbours are at distance 1.
        let x = vec![vec![0.0], vec![2.0]];
        let l = vec![vec![0.0], vec![4.0]];
        let p = LambdaPredictor::fit(PredictorKind::Knn, &x, &l, &cfg(1)).unwrap();
        assert_eq!(p.predict(&[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        let x = vec![vec![0.0]];
        let l = vec![vec![1.0]];
        assert!(LambdaPredictor::fit(PredictorKind::Knn, &x, &l, &cfg(2)).is_err());
        assert!(LambdaPredictor::fit(PredictorKind::Knn, &x, &l, &cfg(0)).is_err());
        assert!(LambdaPredictor::fit(PredictorKind::Mean, &[], &[], &cfg(1)).is_err());
        assert!(LambdaPredictor::fit(PredictorKind::Mean, &x, &[vec![-1.0]], &cfg(1)).is_err());
    }

    #[test]
    fn standardize_rescales_dimensions() {
        // Dimension 1 spans 1000x the range of dimension 0.
        let x = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1000.0],
        ];
        let l = vec![vec![0.0], vec![1.0], vec![5.0]];
        let raw = LambdaPredictor::fit(PredictorKind::Knn, &x, &l, &cfg(1)).unwrap();
        let std = LambdaPredictor::fit(
            PredictorKind::Knn,
            &x,
            &l,
            &PredictorConfig {
                k: 1,
                standardize: true,
            },
        )
        .unwrap();
        let q = [1.0, 600.0];
        assert_eq!(raw.predict(&q).unwrap(), vec![5.0]);
        assert_eq!(std.predict(&q).unwrap(), vec![1.0]);
    }
}
