mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};

use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use shadowrank::dataset::{ConstraintRow, DatasetFile, DatasetHeader, GammaSpec, GammaToken, UserRecord};
use shadowrank::pipeline::{offline_train, Strategy, TrainConfig, TrainedArtifact};
use shadowrank::protocol::{serve_lines, serve_tcp, Request, Response};
use shadowrank::synth::{synth_generate, LambdaLaw, SynthConfig};
use shadowrank::{BoundKind, Error, Execution, Sense, Weights};

fn dataset() -> impl proptest::strategy::Strategy<Value = DatasetFile> {
    (2usize..8, 0usize..4, 0usize..3, any::<bool>())
        .prop_flat_map(|(m1, k, d, dcg)| {
            let m2 = 1.max(m1 / 2);
            let gamma = if dcg {
                Just(GammaSpec::Token(GammaToken::Dcg)).boxed()
            } else {
                proptest::collection::vec(0.01f64..1.0, m2)
                    .prop_map(|mut g| {
                        g.sort_by(|a, b| b.total_cmp(a));
                        GammaSpec::Values(g)
                    })
                    .boxed()
            };
            let row = (
                any::<bool>(),
                -2.0f64..2.0,
                any::<bool>(),
                proptest::collection::vec(0.0f64..1.0, m1),
            )
                .prop_map(|(ge, bound, absolute, a)| (ge, bound, absolute, a));
            let rows = proptest::collection::vec(row, k);
            let user = (
                proptest::collection::vec(1.0f64..5.0, m1),
                proptest::collection::vec(-3.0f64..3.0, d),
                proptest::option::of(proptest::collection::vec(0.0f64..1.0, m1)),
            );
            let users = proptest::collection::vec(user, 1..6);
            (Just((m1, m2, d)), gamma, rows, users)
        })
        .prop_map(|((m1, m2, d), gamma, rows, users)| {
            let constraints: Vec<ConstraintRow> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (ge, bound, absolute, a))| ConstraintRow {
                    label: format!("c{i}"),
                    sense: if ge { Sense::Ge } else { Sense::Le },
                    bound: if absolute { bound } else { bound.abs() / 4.0 },
                    bound_kind: if absolute { BoundKind::Absolute } else { BoundKind::FractionOfTotalExposure },
                    a: Some(Weights::Discounted(a)),
                })
                .collect();
            let first_label = constraints.first().map(|c| c.label.clone());
            let records = users
                .into_iter()
                .enumerate()
                .map(|(i, (u, x, over))| {
                    let mut overrides = BTreeMap::new();
                    if let (Some(label), Some(a)) = (&first_label, over) {
                        overrides.insert(label.clone(), Weights::Discounted(a));
                    }
                    UserRecord {
                        user_id: format!("user{i:03}"),
                        u: Weights::Discounted(u),
                        covariates: x,
                        overrides,
                    }
                })
                .collect();
            DatasetFile {
                header: DatasetHeader::new(m1, m2, d, gamma, constraints),
                records,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn save_then_load_is_identity(ds in dataset()) {
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let back = DatasetFile::read_from(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.instances().unwrap(), ds.instances().unwrap());
        prop_assert!(ds.instances().unwrap().iter().all(|i| i.is_canonical()));
    }
}

#[test]
fn empty_constraint_table_is_accepted() {
    let ds = DatasetFile {
        header: DatasetHeader::new(3, 2, 0, GammaSpec::Token(GammaToken::Dcg), vec![]),
        records: vec![UserRecord {
            user_id: "a".into(),
            u: Weights::Discounted(vec![1.0, 2.0, 3.0]),
            covariates: vec![],
            overrides: BTreeMap::new(),
        }],
    };
    let inst = ds.instances().unwrap();
    assert_eq!(inst[0].k(), 0);
}

#[test]
fn parse_errors_carry_a_line_number() {
    let good = std::fs::read_to_string(common::data_path("figure1.jsonl")).unwrap();
    let mut lines: Vec<&str> = good.lines().collect();
    lines.push("{\"user_id\": \"x\", \"u\": [1, 2");
    let err = DatasetFile::read_from(lines.join("\n").as_bytes()).unwrap_err();
    match err {
        Error::Parse { line, .. } => assert_eq!(line, lines.len()),
        e => panic!("unexpected {e:?}"),
    }
    let bumped = good.replacen("\"version\":1", "\"version\":99", 1);
    assert!(matches!(DatasetFile::read_from(bumped.as_bytes()), Err(Error::Version { .. })));
}

#[test]
fn generator_is_byte_deterministic() {
    for law in [LambdaLaw::Clustered, LambdaLaw::Linear, LambdaLaw::Constant] {
        let cfg = SynthConfig {
            seed: 99,
            n_users: 40,
            law,
            binding_fraction: 1.0,
            ..SynthConfig::default()
        };
        let bytes = |c: &SynthConfig| {
            let mut b = Vec::new();
            synth_generate(c).unwrap().write_to(&mut b).unwrap();
            b
        };
        assert_eq!(bytes(&cfg), bytes(&cfg));
        let other = SynthConfig { seed: 100, ..cfg.clone() };
        assert_ne!(bytes(&cfg), bytes(&other));
    }
}

fn served_artifact() -> (TrainedArtifact, DatasetFile) {
    let ds = synth_generate(&SynthConfig {
        n_users: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut art = offline_train(&ds.instances().unwrap(), &TrainConfig::default()).unwrap();
    art.schema = Some(ds.header.clone());
    (art, ds)
}

fn request_lines(ds: &DatasetFile) -> (String, Vec<(Option<String>, bool)>) {
    let mut text = String::new();
    let mut expected = Vec::new();
    for (i, r) in ds.records.iter().take(8).enumerate() {
        let req = Request {
            user_id: r.user_id.clone(),
            u: r.u.clone(),
            covariates: r.covariates.clone(),
            strategy: [None, Some(Strategy::NoOpt), Some(Strategy::Mean), Some(Strategy::Optimal)][i % 4],
            overrides: BTreeMap::new(),
        };
        text.push_str(&serde_json::to_string(&req).unwrap());
        text.push('\n');
        expected.push((Some(r.user_id.clone()), false));
        match i {
            2 => {
                text.push_str("not json\n");
                expected.push((None, true));
            }
            4 => {
                text.push_str("{\"user_id\":\"short\",\"u\":[1.0],\"covariates\":[]}\n");
                expected.push((Some("short".into()), true));
            }
            5 => {
                text.push('\n');
                expected.push((None, true));
            }
            _ => {}
        }
    }
    (text, expected)
}

fn check_responses(out: &str, expected: &[(Option<String>, bool)], m2: usize) {
    let responses: Vec<Response> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(responses.len(), expected.len());
    for (r, (id, is_err)) in responses.iter().zip(expected) {
        assert_eq!(r.is_error(), *is_err, "{r:?}");
        match r {
            Response::Ranked(x) => {
                assert_eq!(Some(&x.user_id), id.as_ref());
                assert_eq!(x.ranking.len(), m2);
                assert!(x.latency_ms >= 0.0);
            }
            Response::Failed(f) => {
                assert_eq!(&f.user_id, id);
                assert!(!f.error.is_empty());
            }
        }
    }
}

#[test]
fn serve_answers_every_line_in_order() {
    let (art, ds) = served_artifact();
    let (input, expected) = request_lines(&ds);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let mut out = Vec::new();
        let n = serve_lines(input.as_bytes(), &mut out, &art, Strategy::Knn, exec).unwrap();
        assert_eq!(n, expected.len());
        check_responses(&String::from_utf8(out).unwrap(), &expected, ds.header.m2);
    }
}

#[test]
fn serve_over_tcp() {
    let (art, ds) = served_artifact();
    let (input, expected) = request_lines(&ds);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::scope(|s| {
        s.spawn(|| serve_tcp(listener, &art, Strategy::Knn, Execution::Sequential, Some(1)).unwrap());
        let mut stream = TcpStream::connect(addr).unwrap();
        stream.write_all(input.as_bytes()).unwrap();
        stream.shutdown(std::net::Shutdown::Write).unwrap();
        let mut out = String::new();
        for line in BufReader::new(stream).lines() {
            out.push_str(&line.unwrap());
            out.push('\n');
        }
        check_responses(&out, &expected, ds.header.m2);
    });
}
