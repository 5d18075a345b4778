use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use causescope::execution::adapter::{echo, AdapterError, WireOutcome};
use causescope::execution::{
    build_sim, AdapterOptions, AdapterRequest, AdapterResponse, HttpSut, Outcome, SimPipelineSpec, SystemUnderTest,
};
use causescope::model::Problem;
use serde_json::json;

/// Minimal one-request-per-connection HTTP server; `handle` maps the POST
/// body to the response body.
fn serve<F>(handle: F) -> String
where
    F: Fn(&str) -> String + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = Arc::new(handle);
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let handle = Arc::clone(&handle);
            thread::spawn(move || respond(stream, &*handle));
        }
    });
    format!("http://{addr}/run")
}

fn respond(mut stream: TcpStream, handle: &dyn Fn(&str) -> String) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let out = handle(std::str::from_utf8(&body).unwrap());
    let _ = write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
        out.len()
    );
}

fn echo_handler(body: &str) -> String {
    let request: AdapterRequest = serde_json::from_str(body).unwrap();
    serde_json::to_string(&echo(request)).unwrap()
}

fn request(i: u64) -> AdapterRequest {
    AdapterRequest {
        problem_id: format!("p{i}"),
        interventions: BTreeMap::from([("PRD".to_string(), format!("value {i} ✓"))]),
        run_seed: i,
    }
}

#[test]
fn echo_round_trip() {
    let sut = HttpSut::new(serve(echo_handler), AdapterOptions::default());
    for i in 0..50 {
        let req = request(i);
        let resp = sut.call(&req).unwrap();
        assert_eq!(resp.outcome, WireOutcome::Pass);
        assert_eq!(resp.observed, req.interventions);
        assert_eq!(resp.tokens, req.interventions["PRD"].chars().count() as u64);
    }
}

#[test]
fn failures_map_to_adapter_errors() {
    let slow = serve(|body| {
        thread::sleep(Duration::from_millis(400));
        echo_handler(body)
    });
    let sut = HttpSut::new(slow, AdapterOptions { timeout_ms: 50, ..Default::default() });
    assert!(matches!(sut.call(&request(1)), Err(AdapterError::AdapterTimeout(_))));

    let garbage = HttpSut::new(serve(|_| "not json".into()), AdapterOptions::default());
    assert!(matches!(garbage.call(&request(1)), Err(AdapterError::MalformedResponse(_))));

    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let down = HttpSut::new(format!("http://127.0.0.1:{port}/run"), AdapterOptions::default());
    assert!(matches!(down.call(&request(1)), Err(AdapterError::Unavailable(_))));
    let problem = Problem { id: "p".into(), specification: String::new(), baseline: BTreeMap::new() };
    let record = down.execute(&problem, &BTreeMap::new(), 0);
    assert!(matches!(record.outcome, Outcome::ExecError(_)));
}

#[test]
fn served_simulator_behaves_like_local() {
    let spec: SimPipelineSpec = serde_json::from_value(json!({
        "features": ["A", "B", "C", "D"],
        "influence": {"A": ["B", "C"], "B": ["C"]},
        "planted_causes": [["C"], ["A", "D"]],
        "token_weights": {"A": 1, "B": 2, "C": 3, "D": 4},
        "seed": 9
    }))
    .unwrap();
    let local = build_sim(&spec).unwrap();
    let remote_sim = local.clone();
    let problem = Problem {
        id: "p".into(),
        specification: String::new(),
        baseline: ["A", "B", "C", "D"].iter().map(|f| (f.to_string(), format!("{f} baseline"))).collect(),
    };
    let served = problem.clone();
    let url = serve(move |body| {
        let request: AdapterRequest = serde_json::from_str(body).unwrap();
        let record = remote_sim.execute(&served, &request.interventions, request.run_seed);
        serde_json::to_string(&AdapterResponse::from_record(&record)).unwrap()
    });
    let remote = HttpSut::new(url, AdapterOptions::default());
    for mask in 0u32..16 {
        let intervention: BTreeMap<String, String> = ["A", "B", "C", "D"]
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, f)| (f.to_string(), format!("broken {f}")))
            .collect();
        let a = local.execute(&problem, &intervention, 3);
        let b = remote.execute(&problem, &intervention, 3);
        assert_eq!(a, b, "mask {mask:04b}");
    }
}
