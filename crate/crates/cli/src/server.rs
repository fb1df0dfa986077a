//! Minimal JSON endpoint over the loaded pipeline.
//!
//! - `POST /v1/couplet` with `{"input": "<4 characters>"}` returns the
//!   selected heads, the best couplet, and the ranked candidate pool.
//! - `GET /v1/health` reports status and checkpoint fingerprints.
//!
//! Requests are handled on a small thread pool; the pipeline is immutable
//! and shared, so concurrent requests are independent.

use std::sync::Arc;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Response, Server};

use crate::pipeline::{CoupletDto, Pipeline};

#[derive(Deserialize)]
struct GenerateRequest {
    input: String,
    #[serde(default)]
    sample: bool,
}

#[derive(Serialize)]
struct GenerateResponse {
    heads: [String; 2],
    best: CoupletDto,
    candidates: Vec<CoupletDto>,
}

#[derive(Serialize)]
struct HealthResponse {
    status: &'static str,
    lm_checkpoint: String,
    s2s_checkpoint: String,
    vocab_size: usize,
}

#[derive(Serialize)]
struct ErrorResponse {
    error: String,
}

fn json_response(status: u32, body: &impl Serialize) -> Response<std::io::Cursor<Vec<u8>>> {
    let payload = serde_json::to_vec(body).unwrap_or_else(|_| b"{}".to_vec());
    Response::from_data(payload)
        .with_status_code(status as u16)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn handle(pipeline: &Pipeline, request: &mut tiny_http::Request) -> Response<std::io::Cursor<Vec<u8>>> {
    match (request.method(), request.url()) {
        (Method::Get, "/v1/health") => json_response(
            200,
            &HealthResponse {
                status: "ok",
                lm_checkpoint: pipeline.lm_fingerprint.clone(),
                s2s_checkpoint: pipeline.s2s_fingerprint.clone(),
                vocab_size: pipeline.vocab.size(),
            },
        ),
        (Method::Post, "/v1/couplet") => {
            let mut body = String::new();
            if request.as_reader().read_to_string(&mut body).is_err() {
                return json_response(400, &ErrorResponse { error: "unreadable request body".into() });
            }
            let parsed: GenerateRequest = match serde_json::from_str(&body) {
                Ok(p) => p,
                Err(e) => {
                    return json_response(400, &ErrorResponse { error: format!("bad request: {e}") })
                }
            };
            match pipeline.run_generate(&parsed.input, parsed.sample) {
                Ok(out) => json_response(
                    200,
                    &GenerateResponse {
                        heads: [out.heads.k1.to_string(), out.heads.k2.to_string()],
                        best: CoupletDto::from_scored(&out.best),
                        candidates: out.pool.iter().map(CoupletDto::from_scored).collect(),
                    },
                ),
                Err(e) => {
                    // Input-shaped problems are the caller's fault.
                    let msg = e.to_string();
                    let status = if msg.contains("head selection") { 400 } else { 500 };
                    json_response(status, &ErrorResponse { error: msg })
                }
            }
        }
        _ => json_response(404, &ErrorResponse { error: "not found".into() }),
    }
}

/// Run the HTTP service until the process exits. `bind` may use port 0 to
/// pick an ephemeral port; the bound address is printed on startup.
pub fn serve(pipeline: Arc<Pipeline>, bind: &str) -> Result<()> {
    let server = Server::http(bind)
        .map_err(|e| anyhow::anyhow!("cannot bind {bind}: {e}"))?;
    let addr = server.server_addr();
    println!("listening on http://{addr}");
    serve_on(pipeline, Arc::new(server), 4)
}

/// Accept loop over an existing server handle; used directly by tests.
pub fn serve_on(pipeline: Arc<Pipeline>, server: Arc<Server>, workers: usize) -> Result<()> {
    let mut handles = Vec::new();
    for _ in 0..workers.max(1) {
        let server = Arc::clone(&server);
        let pipeline = Arc::clone(&pipeline);
        handles.push(std::thread::spawn(move || {
            for mut request in server.incoming_requests() {
                let response = handle(&pipeline, &mut request);
                let _ = request.respond(response);
            }
        }));
    }
    for h in handles {
        h.join().map_err(|_| anyhow::anyhow!("worker thread panicked"))?;
    }
    Ok(())
}

/// Spawn the accept loop in the background and return the bound address;
/// the test harness talks to it over plain TCP.
pub fn spawn_for_tests(pipeline: Arc<Pipeline>) -> Result<std::net::SocketAddr> {
    let server = Arc::new(
        Server::http("127.0.0.1:0").map_err(|e| anyhow::anyhow!("cannot bind test server: {e}"))?,
    );
    let addr = match server.server_addr() {
        tiny_http::ListenAddr::IP(addr) => addr,
        other => anyhow::bail!("unexpected listen address {other:?}"),
    };
    std::thread::spawn(move || {
        let _ = serve_on(pipeline, server, 4);
    });
    Ok(addr)
}
