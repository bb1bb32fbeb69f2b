//! Seeded synthetic populations.
//!
//! Items carry at most one binary topic label; each topic has a minimum
//! exposure share. Bounds are set to 80% of what a fixed reference ranking
//! achieves, so every user has at least one compliant ranking.
//!
//! Users are built from utility prototypes plus a per-user constant shift.
//! A constant shift never changes which ranking is best, so users sharing a
//! prototype share their shadow prices exactly; covariates then decide how
//! much of that structure a predictor can recover:
//!
//! * `Clustered`: one covariate centroid per prototype, users scattered
//!   tightly around their centroid;
//! * `Constant`: a single prototype and pure-noise covariates;
//! * `Linear`: one prototype whose topic-0 items are pushed down by an
//!   amount linear in the covariates, so prices vary smoothly with them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment::descending_order;
use crate::dataset::{ConstraintRow, DatasetFile, DatasetHeader, GammaSpec, GammaToken, UserRecord};
use crate::error::{Error, Result};
use crate::model::{BoundKind, DiscountVector, Sense, Weights};

const U_LOW: f64 = 1.25;
const U_HIGH: f64 = 4.75;
const SHIFT: f64 = 0.25;
const BOUND_FACTOR: f64 = 0.8;
const SLACK_MARGIN: f64 = 1.1;
const VIOLATION_MARGIN: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LambdaLaw {
    Clustered,
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub m1: usize,
    pub m2: usize,
    pub k: usize,
    pub d: usize,
    pub law: LambdaLaw,
    /// Share of users whose unconstrained ranking violates a constraint.
    pub binding_fraction: f64,
    /// Number of prototypes under `Clustered`.
    pub clusters: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_users: 200,
            m1: 100,
            m2: 20,
            k: 3,
            d: 20,
            law: LambdaLaw::Clustered,
            binding_fraction: 0.5,
            clusters: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_users == 0 {
            return err("n_users must be positive");
        }
        if self.m2 == 0 || self.m1 < self.m2 {
            return err("need m1 >= m2 >= 1");
        }
        if !(0.0..=1.0).contains(&self.binding_fraction) {
            return err("binding_fraction must lie in [0, 1]");
        }
        if self.binding_fraction > 0.0 && self.k == 0 {
            return err("binding users need at least one constraint");
        }
        if self.law == LambdaLaw::Constant
            && self.binding_fraction != 0.0
            && self.binding_fraction != 1.0
        {
            return err("the constant law shares one price vector; binding_fraction must be 0 or 1");
        }
        if self.law == LambdaLaw::Clustered {
            let mixed = self.binding_fraction > 0.0 && self.binding_fraction < 1.0;
            if self.clusters == 0 || (mixed && self.clusters < 2) {
                return err("clustered law needs >= 1 cluster, >= 2 when binding_fraction is fractional");
            }
        }
        Ok(())
    }
}

struct World {
    gamma: DiscountVector,
    topics: Vec<Vec<f64>>,
    fractions: Vec<f64>,
    bounds: Vec<f64>,
    /// Least exposure any ranking can give each topic.
    floors: Vec<f64>,
    reference_scores: Vec<f64>,
}

impl World {
    fn exposures(&self, u: &[f64]) -> Vec<f64> {
        let top = descending_order(u, self.gamma.len());
        self.topics
            .iter()
            .map(|a| top.iter().zip(self.gamma.values()).map(|(&i, g)| a[i] * g).sum())
            .collect()
    }

    fn comfortably_compliant(&self, u: &[f64]) -> bool {
        self.exposures(u)
            .iter()
            .zip(self.bounds.iter().zip(&self.floors))
            .all(|(e, (b, f))| e - f >= SLACK_MARGIN * (b - f))
    }

    /// Blends `v` towards the reference scores until every constraint has slack.
    fn compliant(&self, v: &[f64]) -> Vec<f64> {
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let w: Vec<f64> = v
                .iter()
                .zip(&self.reference_scores)
                .map(|(a, r)| (1.0 - t) * a + t * r)
                .collect();
            if self.comfortably_compliant(&w) {
                return w;
            }
        }
        self.reference_scores.clone()
    }

    /// Pushes items of `topic` towards the utility floor by `1 - theta`.
    fn penalize(&self, base: &[f64], topic: usize, theta: f64) -> Vec<f64> {
        base.iter()
            .zip(&self.topics[topic])
            .map(|(v, a)| if *a > 0.0 { U_LOW + theta * (v - U_LOW) } else { *v })
            .collect()
    }

    /// Largest grid value of theta at which `topic` is clearly violated.
    fn violating_theta(&self, base: &[f64], topic: usize) -> Option<f64> {
        (0..=9).rev().map(|s| s as f64 / 10.0).find(|&theta| {
            let e = self.exposures(&self.penalize(base, topic, theta))[topic];
            let f = self.floors[topic];
            e - f < VIOLATION_MARGIN * (self.bounds[topic] - f)
        })
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(U_LOW..U_HIGH)).collect()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn build_world(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<World> {
    let gamma = DiscountVector::dcg(cfg.m2)?;
    let share = if cfg.k == 0 { 0.0 } else { (0.9 / cfg.k as f64).min(0.15) };
    let mut topics = vec![vec![0.0; cfg.m1]; cfg.k];
    #[allow(clippy::needless_range_loop)]
    for i in 0..cfg.m1 {
        let r: f64 = rng.random();
        let t = (r / share.max(f64::MIN_POSITIVE)) as usize;
        if t < cfg.k {
            topics[t][i] = 1.0;
        }
    }
    let mut reference: Vec<usize> = (0..cfg.m1).collect();
    reference.shuffle(rng);
    let denom = (cfg.m1.max(2) - 1) as f64;
    let mut reference_scores = vec![0.0; cfg.m1];
    for (pos, &item) in reference.iter().enumerate() {
        reference_scores[item] = U_HIGH - (U_HIGH - U_LOW) * pos as f64 / denom;
    }
    let mut world = World {
        gamma,
        topics,
        fractions: Vec::new(),
        bounds: Vec::new(),
        floors: Vec::new(),
        reference_scores,
    };
    let total = world.gamma.total();
    // When few items stay unranked, a topic keeps some exposure even at the
    // bottom of the list; bounds and margins are taken above that floor.
    world.floors = world
        .topics
        .iter()
        .map(|a| {
            let members = a.iter().filter(|v| **v > 0.0).count();
            let forced = members.saturating_sub(cfg.m1 - cfg.m2);
            world.gamma.values()[cfg.m2 - forced..].iter().sum()
        })
        .collect();
    world.fractions = world
        .exposures(&world.reference_scores)
        .iter()
        .zip(&world.floors)
        .map(|(e, f)| (f + BOUND_FACTOR * (e - f)) / total)
        .collect();
    // Same arithmetic as canonicalization, so checks match what users load.
    world.bounds = world.fractions.iter().map(|f| f * total).collect();
    Ok(world)
}

/// Generates a population. Identical configs give identical datasets.
pub fn synth_generate(cfg: &SynthConfig) -> Result<DatasetFile> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = build_world(cfg, &mut rng)?;
    let bindable: Vec<usize> = (0..cfg.k).filter(|&k| world.bounds[k] > world.floors[k]).collect();
    if cfg.binding_fraction > 0.0 && bindable.is_empty() {
        return Err(Error::Config(
            "no topic reaches the ranked positions; cannot create binding users".into(),
        ));
    }
    let n_binding = (cfg.binding_fraction * cfg.n_users as f64).round() as usize;

    let mut users: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(cfg.n_users);
    match cfg.law {
        LambdaLaw::Clustered | LambdaLaw::Constant => {
            let (n_proto, n_bind_proto) = if cfg.law == LambdaLaw::Constant {
                (1, usize::from(cfg.binding_fraction == 1.0))
            } else if n_binding == 0 {
                (cfg.clusters, 0)
            } else if n_binding == cfg.n_users {
                (cfg.clusters, cfg.clusters)
            } else {
                let b = (cfg.binding_fraction * cfg.clusters as f64).round() as usize;
                (cfg.clusters, b.clamp(1, cfg.clusters - 1))
            };
            let mut protos = Vec::with_capacity(n_proto);
            for c in 0..n_proto {
                let base = world.compliant(&uniform_vec(&mut rng, cfg.m1));
                if c < n_bind_proto {
                    let topic = bindable[c % bindable.len()];
                    let theta = world.violating_theta(&base, topic).ok_or_else(|| {
                        Error::Config(format!(
                            "topic {topic} cannot be made binding with m1 = {}, m2 = {}",
                            cfg.m1, cfg.m2
                        ))
                    })?;
                    protos.push(world.penalize(&base, topic, theta));
                } else {
                    protos.push(base);
                }
            }
            let centroids: Vec<Vec<f64>> =
                (0..n_proto).map(|_| normal_vec(&mut rng, cfg.d, 2.0)).collect();

            let mut is_binding = vec![false; cfg.n_users];
            if cfg.law == LambdaLaw::Constant {
                is_binding.fill(n_bind_proto == 1);
            } else {
                let mut order: Vec<usize> = (0..cfg.n_users).collect();
                order.shuffle(&mut rng);
                for &i in order.iter().take(n_binding) {
                    is_binding[i] = true;
                }
            }
            for &binding in &is_binding {
                let c = if cfg.law == LambdaLaw::Constant {
                    0
                } else if binding {
                    rng.random_range(0..n_bind_proto)
                } else {
                    rng.random_range(n_bind_proto..n_proto)
                };
                let shift = rng.random_range(-SHIFT..SHIFT);
                let u = protos[c].iter().map(|v| v + shift).collect();
                let x = match cfg.law {
                    LambdaLaw::Constant => normal_vec(&mut rng, cfg.d, 1.0),
                    _ => {
                        let noise = normal_vec(&mut rng, cfg.d, 0.5);
                        centroids[c].iter().zip(noise).map(|(m, e)| m + e).collect()
                    }
                };
                users.push((u, x));
            }
        }
        LambdaLaw::Linear => {
            let base = world.compliant(&uniform_vec(&mut rng, cfg.m1));
            let topic = bindable.first().copied();
            let theta_star = match topic {
                Some(t) if n_binding > 0 => world.violating_theta(&base, t).ok_or_else(|| {
                    Error::Config(format!("topic {t} cannot be made binding"))
                })?,
                _ => 0.0,
            };
            let w = normal_vec(&mut rng, cfg.d, 1.0 / (cfg.d.max(1) as f64).sqrt());
            let xs: Vec<Vec<f64>> = (0..cfg.n_users).map(|_| normal_vec(&mut rng, cfg.d, 1.0)).collect();
            let z: Vec<f64> = xs
                .iter()
                .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum())
                .collect();
            // Offset so that the n_binding largest scores reach the violating penalty.
            let mut sorted = z.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let offset = if n_binding == 0 {
                -sorted[0] - 1.0
            } else {
                (1.0 - theta_star) - sorted[n_binding - 1]
            };
            for (x, zi) in xs.into_iter().zip(z) {
                let t = (zi + offset).clamp(0.0, 1.0);
                let mut u = match topic {
                    Some(k) => world.penalize(&base, k, 1.0 - t),
                    None => base.clone(),
                };
                let shift = rng.random_range(-SHIFT..SHIFT);
                u.iter_mut().for_each(|v| *v += shift);
                users.push((u, x));
            }
        }
    }

    let constraints = (0..cfg.k)
        .map(|k| ConstraintRow {
            label: format!("topic{k}"),
            sense: Sense::Ge,
            bound: world.fractions[k],
            bound_kind: BoundKind::FractionOfTotalExposure,
            a: Some(Weights::Discounted(world.topics[k].clone())),
        })
        .collect();
    let header = DatasetHeader::new(cfg.m1, cfg.m2, cfg.d, GammaSpec::Token(GammaToken::Dcg), constraints);
    let records = users
        .into_iter()
        .enumerate()
        .map(|(i, (u, x))| UserRecord {
            user_id: format!("u{i:06}"),
            u: Weights::Discounted(u),
            covariates: x,
            overrides: Default::default(),
        })
        .collect();
    Ok(DatasetFile { header, records })
}
