//! Offline training and online ranking.
//!
//! Offline, every training user's dual is solved, the tie-break `epsilon` is
//! tuned on the solved users and a price predictor is fitted to their
//! covariates. Online, a user's prices come from one of four strategies and
//! the ranking is a single sort (or assignment) on the adjusted scores.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetHeader;
use crate::dual::{rank_with_lambda, solve_dual, tune_epsilon, ComplianceReport, DualConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Assignment, RankingInstance};
use crate::predictor::{LambdaPredictor, PredictorConfig, PredictorKind};

pub const ARTIFACT_FORMAT: &str = "shadowrank-artifact";
pub const ARTIFACT_VERSION: u32 = 1;

/// How online prices are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Zero prices: rank by utility alone.
    #[value(name = "no_opt")]
    NoOpt,
    /// Solve the user's dual live.
    Optimal,
    /// Training-average prices.
    Mean,
    /// Nearest-neighbour prices from covariates.
    Knn,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::NoOpt, Strategy::Mean, Strategy::Knn, Strategy::Optimal];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoOpt => "no_opt",
            Strategy::Optimal => "optimal",
            Strategy::Mean => "mean",
            Strategy::Knn => "knn",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainConfig {
    pub dual: DualConfig,
    pub predictor: PredictorConfig,
    #[serde(skip)]
    pub exec: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedArtifact {
    pub format: String,
    pub format_version: u32,
    /// Nearest-neighbour predictor over the solved training users.
    pub predictor: LambdaPredictor,
    pub epsilon: f64,
    pub train_user_ids: Vec<String>,
    pub train_lambdas: Vec<Vec<f64>>,
    pub skipped_users: Vec<String>,
    pub config: TrainConfig,
    /// Constraint table and discounts used to build instances from bare
    /// serving requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<DatasetHeader>,
}

impl TrainedArtifact {
    pub fn n_constraints(&self) -> usize {
        self.predictor.n_constraints()
    }

    pub fn n_covariates(&self) -> usize {
        self.predictor.n_covariates()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let a: TrainedArtifact = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::Parse {
                line: e.line(),
                msg: format!("artifact: {e}"),
            })?;
        if a.format != ARTIFACT_FORMAT {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unknown artifact format {:?}", a.format),
            });
        }
        if a.format_version != ARTIFACT_VERSION {
            return Err(Error::Version {
                found: a.format_version,
                expected: ARTIFACT_VERSION,
            });
        }
        Ok(a)
    }
}

fn canonical(instances: &[RankingInstance]) -> Vec<RankingInstance> {
    instances
        .iter()
        .map(|i| if i.is_canonical() { i.clone() } else { i.normalized() })
        .collect()
}

/// Solves every training user's dual, skips infeasible users, tunes
/// `epsilon` and fits the predictor.
pub fn offline_train(train: &[RankingInstance], config: &TrainConfig) -> Result<TrainedArtifact> {
    let first = train.first().ok_or(Error::EmptyTrainingSet)?;
    let (k, d) = (first.k(), first.d());
    if let Some(bad) = train.iter().find(|i| i.k() != k || i.d() != d) {
        return Err(Error::DimensionMismatch(format!(
            "user {:?} has K = {}, d = {}; expected K = {k}, d = {d}",
            bad.user_id(),
            bad.k(),
            bad.d()
        )));
    }
    config.dual.validate()?;
    let train = canonical(train);

    let solved = config.exec.map(&train, |inst| solve_dual(inst, &config.dual));
    let mut kept = Vec::new();
    let mut lambdas = Vec::new();
    let mut skipped = Vec::new();
    for (inst, sp) in train.iter().zip(solved) {
        let sp = sp?;
        if sp.infeasible_flag {
            warn!("user {:?}: constraints cannot be met, skipped", inst.user_id());
            skipped.push(inst.user_id().to_string());
        } else {
            kept.push(inst.clone());
            lambdas.push(sp.lambda);
        }
    }
    if kept.is_empty() {
        return Err(Error::AllInfeasible(skipped.len()));
    }

    let epsilon = tune_epsilon(
        &kept,
        &lambdas,
        &config.dual.epsilon_grid,
        &config.dual.assign,
        config.exec,
    )?;

    let mut pcfg = config.predictor;
    if pcfg.k > kept.len() {
        warn!(
            "only {} solved training users; using k = {} neighbours instead of {}",
            kept.len(),
            kept.len(),
            pcfg.k
        );
        pcfg.k = kept.len();
    }
    let x: Vec<Vec<f64>> = kept.iter().map(|i| i.covariates().to_vec()).collect();
    let predictor = LambdaPredictor::fit(PredictorKind::Knn, &x, &lambdas, &pcfg)?;

    Ok(TrainedArtifact {
        format: ARTIFACT_FORMAT.to_string(),
        format_version: ARTIFACT_VERSION,
        predictor,
        epsilon,
        train_user_ids: kept.iter().map(|i| i.user_id().to_string()).collect(),
        train_lambdas: lambdas,
        skipped_users: skipped,
        config: config.clone(),
        schema: None,
    })
}

/// Result of ranking one user online.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineResult {
    pub lambda: Vec<f64>,
    pub assignment: Assignment,
    pub report: ComplianceReport,
    /// Time spent on price prediction, scoring and assignment.
    pub latency_ms: f64,
}

/// Serving-side view of an artifact. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct OnlineRanker<'a> {
    artifact: &'a TrainedArtifact,
}

impl<'a> OnlineRanker<'a> {
    pub fn new(artifact: &'a TrainedArtifact) -> Self {
        OnlineRanker { artifact }
    }

    pub fn artifact(&self) -> &TrainedArtifact {
        self.artifact
    }

    fn check(&self, instance: &RankingInstance) -> Result<()> {
        if instance.k() != self.artifact.n_constraints() || instance.d() != self.artifact.n_covariates() {
            return Err(Error::DimensionMismatch(format!(
                "user {:?} has K = {}, d = {}; artifact expects K = {}, d = {}",
                instance.user_id(),
                instance.k(),
                instance.d(),
                self.artifact.n_constraints(),
                self.artifact.n_covariates()
            )));
        }
        if !instance.is_canonical() {
            return Err(Error::NotCanonical);
        }
        Ok(())
    }

    fn prices(&self, instance: &RankingInstance, strategy: Strategy) -> Result<Vec<f64>> {
        let p = &self.artifact.predictor;
        match strategy {
            Strategy::NoOpt => Ok(vec![0.0; p.n_constraints()]),
            Strategy::Mean => Ok(p.mean_lambda().to_vec()),
            Strategy::Knn => p.predict(instance.covariates()),
            Strategy::Optimal => Ok(solve_dual(instance, &self.artifact.config.dual)?.lambda),
        }
    }

    /// Ranks a canonical instance. Only prediction, scoring and assignment
    /// are timed.
    pub fn rank(&self, instance: &RankingInstance, strategy: Strategy) -> Result<OnlineResult> {
        self.check(instance)?;
        let start = Instant::now();
        let lambda = self.prices(instance, strategy)?;
        let (assignment, report) = rank_with_lambda(
            instance,
            &lambda,
            self.artifact.epsilon,
            &self.artifact.config.dual.assign,
        )?;
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(OnlineResult {
            lambda,
            assignment,
            report,
            latency_ms,
        })
    }
}

/// Ranks one user with the artifact. See [`OnlineRanker::rank`].
pub fn online_rank(
    artifact: &TrainedArtifact,
    instance: &RankingInstance,
    strategy: Strategy,
) -> Result<OnlineResult> {
    OnlineRanker::new(artifact).rank(instance, strategy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub n_users: usize,
    pub compliance_probability: f64,
    pub mean_utility: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_p99_ms: f64,
    pub latency_max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFailure {
    pub strategy: Strategy,
    pub user_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<StrategyRow>,
    pub failures: Vec<UserFailure>,
}

impl EvaluationReport {
    pub fn row(&self, strategy: Strategy) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

struct Measurement {
    compliant: bool,
    utility: f64,
    latencies: Vec<f64>,
}

fn measure(
    ranker: &OnlineRanker<'_>,
    instance: &RankingInstance,
    strategy: Strategy,
    repeats: usize,
) -> Result<Measurement> {
    // Warm-up run, discarded.
    let first = ranker.rank(instance, strategy)?;
    let mut latencies = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        latencies.push(ranker.rank(instance, strategy)?.latency_ms);
    }
    Ok(Measurement {
        compliant: first.report.compliant,
        utility: first.report.utility,
        latencies,
    })
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    compliant: usize,
    utility: f64,
    latencies: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, m: Measurement) {
        self.n += 1;
        self.compliant += usize::from(m.compliant);
        self.utility += m.utility;
        self.latencies.extend(m.latencies);
    }

    fn finish(mut self, strategy: Strategy) -> StrategyRow {
        self.latencies.sort_by(f64::total_cmp);
        let n = self.n.max(1) as f64;
        StrategyRow {
            strategy,
            n_users: self.n,
            compliance_probability: self.compliant as f64 / n,
            mean_utility: self.utility / n,
            latency_p50_ms: percentile(&self.latencies, 50.0),
            latency_p95_ms: percentile(&self.latencies, 95.0),
            latency_p99_ms: percentile(&self.latencies, 99.0),
            latency_max_ms: self.latencies.last().copied().unwrap_or(0.0),
        }
    }
}

/// Compliance, mean raw utility and latency percentiles per strategy.
///
/// Each user gets one discarded warm-up run and `repeats` timed runs; the
/// percentiles pool all timed runs. With [`Execution::Parallel`] users are
/// spread over threads, which can inflate latencies through contention.
/// Users that fail are recorded in `failures` and left out of the row.
pub fn evaluate(
    artifact: &TrainedArtifact,
    test: &[RankingInstance],
    strategies: &[Strategy],
    repeats: usize,
    exec: Execution,
) -> Result<EvaluationReport> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let test = canonical(test);
    let ranker = OnlineRanker::new(artifact);
    let mut report = EvaluationReport::default();
    for &strategy in strategies {
        let results = exec.map(&test, |inst| measure(&ranker, inst, strategy, repeats.max(1)));
        let mut acc = Accumulator::default();
        for (inst, r) in test.iter().zip(results) {
            match r {
                Ok(m) => acc.add(m),
                Err(e) => report.failures.push(UserFailure {
                    strategy,
                    user_id: inst.user_id().to_string(),
                    error: e.to_string(),
                }),
            }
        }
        report.rows.push(acc.finish(strategy));
    }
    Ok(report)
}

/// Sequential evaluation over a stream of users, for sources that do I/O.
/// Fetching the next user happens outside the timed region.
pub fn evaluate_stream<I>(
    artifact: &TrainedArtifact,
    source: I,
    strategies: &[Strategy],
    repeats: usize,
) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = Result<RankingInstance>>,
{
    let ranker = OnlineRanker::new(artifact);
    let mut accs: Vec<Accumulator> = strategies.iter().map(|_| Accumulator::default()).collect();
    let mut report = EvaluationReport::default();
    let mut seen = 0usize;
    for inst in source {
        let inst = inst?;
        let inst = if inst.is_canonical() { inst } else { inst.normalized() };
        seen += 1;
        for (acc, &strategy) in accs.iter_mut().zip(strategies) {
            match measure(&ranker, &inst, strategy, repeats.max(1)) {
                Ok(m) => acc.add(m),
                Err(e) => report.failures.push(UserFailure {
                    strategy,
                    user_id: inst.user_id().to_string(),
                    error: e.to_string(),
                }),
            }
        }
    }
    if seen == 0 {
        return Err(Error::Config("test set is empty".into()));
    }
    report.rows = accs
        .into_iter()
        .zip(strategies)
        .map(|(a, &s)| a.finish(s))
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
        }
        assert!("fastest".parse::<Strategy>().is_err());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
        let w = [1.0, 2.0, 3.0];
        assert_eq!(percentile(&w, 50.0), 2.0);
        assert_eq!(percentile(&w, 95.0), 3.0);
    }
}
