//! Line-delimited JSON dataset files.
//!
//! The first line is a [`DatasetHeader`]; every following non-empty line is
//! a [`UserRecord`]. Constraint coefficient vectors live in the header's
//! constraint table and are shared by all users unless a record overrides
//! them by label.
//!
//! ```text
//! {"format":"shadowrank-dataset","version":1,"m1":4,"m2":2,"k":1,"d":1,
//!  "gamma":"DCG","constraints":[{"label":"t","sense":"ge","bound":0.1,
//!  "bound_kind":"fraction_of_total_exposure","a":[1,0,0,1]}]}
//! {"user_id":"u1","u":[4,3,2,1],"covariates":[0.5]}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundKind, ConstraintSpec, DiscountVector, RankingInstance, Sense, Weights};

pub const FORMAT_NAME: &str = "shadowrank-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaToken {
    #[serde(rename = "DCG")]
    Dcg,
}

/// Either the token `"DCG"` or explicit discount values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Token(GammaToken),
    Values(Vec<f64>),
}

impl GammaSpec {
    pub fn resolve(&self, m2: usize) -> Result<DiscountVector> {
        match self {
            GammaSpec::Token(GammaToken::Dcg) => DiscountVector::dcg(m2),
            GammaSpec::Values(v) => {
                if v.len() != m2 {
                    return Err(Error::DimensionMismatch(format!(
                        "gamma has {} values but m2 = {m2}",
                        v.len()
                    )));
                }
                DiscountVector::new(v.clone())
            }
        }
    }
}

/// One row of the constraint table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub label: String,
    pub sense: Sense,
    pub bound: f64,
    pub bound_kind: BoundKind,
    /// Shared coefficients; records without an override use these.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Weights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub m1: usize,
    pub m2: usize,
    pub k: usize,
    pub d: usize,
    pub gamma: GammaSpec,
    pub constraints: Vec<ConstraintRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub u: Weights,
    pub covariates: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, Weights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub records: Vec<UserRecord>,
}

impl DatasetHeader {
    pub fn new(m1: usize, m2: usize, d: usize, gamma: GammaSpec, constraints: Vec<ConstraintRow>) -> Self {
        DatasetHeader {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            m1,
            m2,
            k: constraints.len(),
            d,
            gamma,
            constraints,
        }
    }

    /// Checks the header on its own: format tag, version, sizes, labels.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::Parse { line: 1, msg };
        if self.format != FORMAT_NAME {
            return Err(bad(format!("unknown format tag {:?}", self.format)));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: FORMAT_VERSION,
            });
        }
        if self.m2 == 0 || self.m1 < self.m2 {
            return Err(Error::Shape {
                rows: self.m1,
                cols: self.m2,
            });
        }
        if self.k != self.constraints.len() {
            return Err(bad(format!(
                "header declares k = {} but lists {} constraints",
                self.k,
                self.constraints.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.constraints {
            if !seen.insert(c.label.as_str()) {
                return Err(bad(format!("duplicate constraint label {:?}", c.label)));
            }
            if let Some(a) = &c.a {
                check_weights(a, self.m1, self.m2, &format!("constraint {:?}", c.label))
                    .map_err(|e| bad(e.to_string()))?;
            }
        }
        self.gamma.resolve(self.m2).map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    /// Builds an instance from per-user data against this header. The
    /// result keeps the constraint table's senses and bound kinds.
    pub fn instance(
        &self,
        user_id: &str,
        u: Weights,
        covariates: Vec<f64>,
        overrides: &BTreeMap<String, Weights>,
    ) -> Result<RankingInstance> {
        let gamma = self.gamma.resolve(self.m2)?;
        check_weights(&u, self.m1, self.m2, "utility")?;
        if covariates.len() != self.d {
            return Err(Error::DimensionMismatch(format!(
                "{} covariates, header says d = {}",
                covariates.len(),
                self.d
            )));
        }
        if let Some(label) = overrides
            .keys()
            .find(|l| !self.constraints.iter().any(|c| &c.label == *l))
        {
            return Err(Error::InvalidInstance(format!("override for unknown constraint {label:?}")));
        }
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for row in &self.constraints {
            let a = match (overrides.get(&row.label), &row.a) {
                (Some(a), _) => {
                    check_weights(a, self.m1, self.m2, &format!("override {:?}", row.label))?;
                    a.clone()
                }
                (None, Some(a)) => a.clone(),
                (None, None) => {
                    return Err(Error::InvalidInstance(format!(
                        "constraint {:?} has no shared coefficients and no override",
                        row.label
                    )))
                }
            };
            constraints.push(ConstraintSpec::new(
                row.label.clone(),
                a,
                row.sense,
                row.bound,
                row.bound_kind,
            )?);
        }
        RankingInstance::new(user_id, u, gamma, constraints, covariates)
    }
}

fn check_weights(w: &Weights, m1: usize, m2: usize, what: &str) -> Result<()> {
    let ok = match w {
        Weights::Discounted(v) => v.len() == m1,
        Weights::Dense(m) => m.rows() == m1 && m.cols() == m2,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{what} does not match m1 = {m1}, m2 = {m2}"
        )))
    }
}

impl DatasetFile {
    pub fn read_from(reader: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let header: DatasetHeader = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        msg: "missing header".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("header: {e}"),
                    })?;
                }
            }
        };
        header.validate()?;

        let mut records = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: UserRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            header
                .instance(&rec.user_id, rec.u.clone(), rec.covariates.clone(), &rec.overrides)
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("user {:?}: {e}", rec.user_id),
                })?;
            records.push(rec);
        }
        Ok(DatasetFile { header, records })
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        serde_json::to_writer(&mut w, &self.header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    /// Canonical instances, ordered by user id.
    pub fn instances(&self) -> Result<Vec<RankingInstance>> {
        let mut out = Vec::with_capacity(self.records.len());
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if !seen.insert(r.user_id.as_str()) {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("duplicate user id {:?}", r.user_id),
                });
            }
            let inst = self
                .header
                .instance(&r.user_id, r.u.clone(), r.covariates.clone(), &r.overrides)
                .map_err(|e| Error::Parse {
                    line: i + 2,
                    msg: e.to_string(),
                })?;
            out.push(inst.normalized());
        }
        out.sort_by(|a, b| a.user_id().cmp(b.user_id()));
        Ok(out)
    }
}

/// Reads a dataset file and returns its canonical instances ordered by user id.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<RankingInstance>> {
    DatasetFile::read(path)?.instances()
}

/// Builds a dataset from long-format CSV exports.
///
/// `utilities` has columns `user_id,item,utility` with `item` in
/// `0..header.m1`; every user must rate every item. `covariates` has a
/// `user_id` column followed by `header.d` numeric columns. Users are
/// emitted in order of first appearance in `utilities`.
pub fn import_csv(header: DatasetHeader, utilities: impl Read, covariates: impl Read) -> Result<DatasetFile> {
    header.validate()?;
    let mut order: Vec<String> = Vec::new();
    let mut utils: HashMap<String, Vec<Option<f64>>> = HashMap::new();
    let mut rdr = csv::Reader::from_reader(utilities);
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |j: usize| -> Result<&str> {
            row.get(j).ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing column {j}"),
            })
        };
        let user = field(0)?.to_string();
        let item: usize = field(1)?.trim().parse().map_err(|e| Error::Parse {
            line,
            msg: format!("item: {e}"),
        })?;
        let value: f64 = field(2)?.trim().parse().map_err(|e| Error::Parse {
            line,
            msg: format!("utility: {e}"),
        })?;
        if item >= header.m1 {
            return Err(Error::Parse {
                line,
                msg: format!("item {item} out of range 0..{}", header.m1),
            });
        }
        let slot = utils.entry(user.clone()).or_insert_with(|| {
            order.push(user.clone());
            vec![None; header.m1]
        });
        slot[item] = Some(value);
    }

    let mut covs: HashMap<String, Vec<f64>> = HashMap::new();
    let mut rdr = csv::Reader::from_reader(covariates);
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let user = row.get(0).unwrap_or_default().to_string();
        let x = row
            .iter()
            .skip(1)
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("covariate: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        covs.insert(user, x);
    }

    let mut records = Vec::with_capacity(order.len());
    for user in order {
        let u = utils[&user]
            .iter()
            .enumerate()
            .map(|(item, v)| {
                v.ok_or_else(|| Error::InvalidInstance(format!("user {user:?} has no utility for item {item}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let covariates = covs
            .remove(&user)
            .ok_or_else(|| Error::InvalidInstance(format!("user {user:?} has no covariates")))?;
        let rec = UserRecord {
            user_id: user,
            u: Weights::Discounted(u),
            covariates,
            overrides: BTreeMap::new(),
        };
        header.instance(&rec.user_id, rec.u.clone(), rec.covariates.clone(), &rec.overrides)?;
        records.push(rec);
    }
    Ok(DatasetFile { header, records })
}
