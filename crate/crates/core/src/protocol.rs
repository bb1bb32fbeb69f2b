//! Newline-delimited JSON serving protocol.
//!
//! Each input line is one request; each request gets exactly one response
//! line, in input order. Malformed requests get an error response.
//!
//! ```text
//! > {"user_id":"u1","u":[4,3,2,1],"covariates":[0.5],"strategy":"knn"}
//! < {"user_id":"u1","ranking":[0,3],"slacks":[0.13],"compliant":true,"utility":5.3,"latency_ms":0.02}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::net::TcpListener;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::Weights;
use crate::pipeline::{OnlineRanker, Strategy, TrainedArtifact};

/// Lines handled per batch in parallel mode.
const BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub user_id: String,
    pub u: Weights,
    pub covariates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, Weights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub user_id: String,
    /// Item indices, best rank first.
    pub ranking: Vec<usize>,
    pub slacks: Vec<f64>,
    pub compliant: bool,
    pub utility: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failed {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Ranked(Ranked),
    Failed(Failed),
}

impl Response {
    pub fn is_error(&self) -> bool {
        matches!(self, Response::Failed(_))
    }
}

/// Answers one request line.
pub fn handle_line(ranker: &OnlineRanker<'_>, line: &str, default_strategy: Strategy) -> Response {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            // Recover the id if the line is at least a JSON object.
            let user_id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("user_id").and_then(|u| u.as_str()).map(str::to_string));
            return Response::Failed(Failed {
                user_id,
                error: format!("malformed request: {e}"),
            });
        }
    };
    let user_id = req.user_id.clone();
    match answer(ranker, req, default_strategy) {
        Ok(r) => Response::Ranked(r),
        Err(e) => Response::Failed(Failed {
            user_id: Some(user_id),
            error: e.to_string(),
        }),
    }
}

fn answer(ranker: &OnlineRanker<'_>, req: Request, default_strategy: Strategy) -> Result<Ranked> {
    let schema = ranker
        .artifact()
        .schema
        .as_ref()
        .ok_or_else(|| Error::Config("artifact carries no constraint schema".into()))?;
    let instance = schema
        .instance(&req.user_id, req.u, req.covariates, &req.overrides)?
        .normalized();
    let out = ranker.rank(&instance, req.strategy.unwrap_or(default_strategy))?;
    Ok(Ranked {
        user_id: req.user_id,
        ranking: out.assignment.item_at_rank,
        slacks: out.report.slack,
        compliant: out.report.compliant,
        utility: out.report.utility,
        latency_ms: out.latency_ms,
    })
}

fn write_response(writer: &mut impl Write, r: &Response) -> Result<()> {
    serde_json::to_writer(&mut *writer, r).map_err(std::io::Error::from)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Serves requests from `reader` until end of input. Returns the number of
/// requests answered.
///
/// Sequential mode answers and flushes one line at a time. Parallel mode
/// reads batches of lines and ranks each batch across threads, still
/// writing responses in request order.
pub fn serve_lines(
    reader: impl BufRead,
    mut writer: impl Write,
    artifact: &TrainedArtifact,
    default_strategy: Strategy,
    exec: Execution,
) -> Result<usize> {
    let ranker = OnlineRanker::new(artifact);
    let mut count = 0;
    let mut lines = reader.lines();
    if !exec.is_parallel() {
        for line in lines {
            let r = handle_line(&ranker, &line?, default_strategy);
            write_response(&mut writer, &r)?;
            writer.flush()?;
            count += 1;
        }
        return Ok(count);
    }
    loop {
        let mut batch = Vec::with_capacity(BATCH);
        for line in lines.by_ref().take(BATCH) {
            batch.push(line?);
        }
        if batch.is_empty() {
            return Ok(count);
        }
        let responses = exec.map(&batch, |l| handle_line(&ranker, l, default_strategy));
        for r in &responses {
            write_response(&mut writer, r)?;
        }
        writer.flush()?;
        count += responses.len();
    }
}

/// Accepts TCP connections and serves each on its own thread. Stops after
/// `max_connections` connections when given, otherwise runs forever.
pub fn serve_tcp(
    listener: TcpListener,
    artifact: &TrainedArtifact,
    default_strategy: Strategy,
    exec: Execution,
    max_connections: Option<usize>,
) -> Result<()> {
    std::thread::scope(|scope| {
        for (n, stream) in listener.incoming().enumerate() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            info!("connection from {peer}");
            scope.spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(s) => std::io::BufReader::new(s),
                    Err(e) => {
                        warn!("{peer}: {e}");
                        return;
                    }
                };
                if let Err(e) = serve_lines(reader, stream, artifact, default_strategy, exec) {
                    warn!("{peer}: {e}");
                }
            });
            if max_connections.is_some_and(|m| n + 1 >= m) {
                break;
            }
        }
    });
    Ok(())
}
