mod common;

use common::warehouse;
use star_core::agent::{self, AgentError, HttpGenerator, Query};
use star_core::config::RetrievalConfig;
use star_core::eval::{DescriptiveJudge, EvalError, HttpJudge};
use star_core::evidence::{MidpointSelector, RetrievalIndex};
use star_core::synth::{GroundTruth, QATask, TaskKind};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

/// Serves `replies` to consecutive requests and returns each request body.
fn serve(replies: Vec<&'static str>) -> (String, thread::JoinHandle<Vec<serde_json::Value>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for reply in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            bodies.push(serde_json::from_slice(&body).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn task() -> QATask {
    QATask {
        id: 3,
        kind: TaskKind::Descriptive,
        query: Query::new("What is on shelf bravo?", 1200.0),
        ground_truth: GroundTruth::KeyTokens(vec!["fragile".into()]),
        gt_timestamps: vec![],
        target: None,
        spatial_threshold: None,
        temporal_threshold: None,
    }
}

#[test]
fn generator_posts_evidence_and_reads_answer() {
    let (snap, _) = warehouse(42);
    let index = RetrievalIndex::build(&snap).unwrap();
    let (url, server) = serve(vec![r#"{"text":"by the wall","position":[1.0,2.0,0.5]}"#]);
    let generator = HttpGenerator::new(url, Duration::from_secs(5));
    let q = Query::new("Where is the nearest police call pole?", 1200.0);
    let r = agent::answer_query(&q, &snap, &index, &RetrievalConfig::default(), &generator, &MidpointSelector::default())
        .unwrap();
    assert_eq!(r.answer.text, "by the wall");
    assert_eq!(r.answer.position, Some([1.0, 2.0, 0.5]));
    let bodies = server.join().unwrap();
    assert_eq!(bodies[0]["kind"], "spatial");
    assert_eq!(bodies[0]["query"], "Where is the nearest police call pole?");
    assert!(!bodies[0]["evidence"]["text_evidence"].as_array().unwrap().is_empty());
}

#[test]
fn generator_rejects_bad_positions_and_dead_endpoints() {
    let (snap, _) = warehouse(42);
    let index = RetrievalIndex::build(&snap).unwrap();
    let q = Query::new("Where is the nearest police call pole?", 1200.0);
    let cfg = RetrievalConfig::default();
    let (url, server) = serve(vec![r#"{"text":"x","position":[1.0,2.0]}"#]);
    let bad = HttpGenerator::new(url, Duration::from_secs(5));
    let err = agent::answer_query(&q, &snap, &index, &cfg, &bad, &MidpointSelector::default()).unwrap_err();
    assert!(matches!(err, AgentError::Generator(_)));
    server.join().unwrap();

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dead = HttpGenerator::new(format!("http://127.0.0.1:{port}/"), Duration::from_secs(2));
    let err = agent::answer_query(&q, &snap, &index, &cfg, &dead, &MidpointSelector::default()).unwrap_err();
    assert!(matches!(err, AgentError::Generator(_)));
}

#[test]
fn judge_reads_verdicts() {
    let (url, server) = serve(vec![r#"{"text":"Yes, it matches"}"#, r#"{"text":"no"}"#, r#"{"text":"maybe"}"#]);
    let judge = HttpJudge::new(url, Duration::from_secs(5));
    let keys = vec!["fragile".to_string()];
    assert!(judge.judge(&task(), "fragile goods", &keys).unwrap());
    assert!(!judge.judge(&task(), "spare parts", &keys).unwrap());
    assert!(matches!(judge.judge(&task(), "?", &keys), Err(EvalError::Judge(_))));
    let bodies = server.join().unwrap();
    assert_eq!(bodies[0]["kind"], "judge");
    assert_eq!(bodies[0]["evidence"]["answer"], "fragile goods");
}
