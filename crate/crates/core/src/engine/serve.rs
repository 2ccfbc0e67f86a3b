//! Read-only HTTP query service.
//!
//! * `GET /health`
//! * `GET /query?id=ID[&top_k=T][&exact=1][&rerank=0]`
//! * `POST /query?format=off|obj[&top_k=T][&exact=1][&rerank=0]` with the
//!   mesh text as the body
//!
//! Responses are JSON. Malformed requests get 400, unknown shapes 404.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;
use tiny_http::{Header, Method, Response, Server};

use super::{Hit, IndexBundle, Matcher, Query, SearchOptions};
use crate::mesh::{parse_mesh, MeshFormat};
use crate::{Error, Result};

const MAX_BODY: u64 = 64 << 20;

#[derive(Debug, Serialize)]
struct QueryResponse<'a> {
    query: &'a str,
    results: Vec<Hit>,
}

#[derive(Debug, Serialize)]
struct ErrorResponse {
    error: String,
}

/// Request handling, independent of the transport.
#[derive(Debug, Clone)]
pub struct QueryService {
    bundle: Arc<IndexBundle>,
}

fn json<T: Serialize>(status: u16, value: &T) -> (u16, String) {
    (
        status,
        serde_json::to_string(value).expect("response serializes"),
    )
}

fn error_response(e: &Error) -> (u16, String) {
    let status = match e {
        Error::UnknownShape(_) => 404,
        _ => 400,
    };
    json(
        status,
        &ErrorResponse {
            error: e.to_string(),
        },
    )
}

fn parse_bool(name: &str, v: &str) -> Result<bool> {
    match v {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(Error::BadRequest(format!(
            "{name} must be a boolean, got {v:?}"
        ))),
    }
}

impl QueryService {
    pub fn new(bundle: Arc<IndexBundle>) -> Self {
        QueryService { bundle }
    }

    pub fn bundle(&self) -> &IndexBundle {
        &self.bundle
    }

    /// Returns `(status, json body)`.
    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> (u16, String) {
        match self.route(method, url, body) {
            Ok(r) => r,
            Err(e) => error_response(&e),
        }
    }

    fn route(&self, method: &str, url: &str, body: &[u8]) -> Result<(u16, String)> {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let params: Vec<(String, String)> = form_urlencoded::parse(query.as_bytes())
            .into_owned()
            .collect();
        let param = |name: &str| {
            params
                .iter()
                .rev()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.as_str())
        };

        let mut opts = SearchOptions::default();
        if let Some(t) = param("top_k") {
            opts.top_k = t.parse().map_err(|_| {
                Error::BadRequest(format!("top_k must be a non-negative integer, got {t:?}"))
            })?;
        }
        if let Some(v) = param("exact") {
            if parse_bool("exact", v)? {
                opts.matcher = Matcher::Exact;
            }
        }
        if let Some(v) = param("rerank") {
            opts.rerank = parse_bool("rerank", v)?;
        }

        match (method, path) {
            ("GET", "/health") => Ok(json(
                200,
                &serde_json::json!({ "status": "ok", "shapes": self.bundle.len() }),
            )),
            ("GET", "/query") => {
                let id =
                    param("id").ok_or_else(|| Error::BadRequest("missing id parameter".into()))?;
                let results = self.bundle.search(Query::Id(id), &opts)?;
                Ok(json(200, &QueryResponse { query: id, results }))
            }
            ("POST", "/query") => {
                let format = match param("format") {
                    None => MeshFormat::Off,
                    Some(f) => MeshFormat::parse_name(f)
                        .ok_or_else(|| Error::BadRequest(format!("unknown mesh format {f:?}")))?,
                };
                let text = std::str::from_utf8(body)
                    .map_err(|_| Error::BadRequest("body is not UTF-8".into()))?;
                let mesh = parse_mesh(text, format, "query")
                    .map_err(|e| Error::BadRequest(e.to_string()))?;
                let results = self.bundle.search_mesh(&mesh, &opts)?;
                Ok(json(
                    200,
                    &QueryResponse {
                        query: "query",
                        results,
                    },
                ))
            }
            (_, "/health" | "/query") => Err(Error::BadRequest(format!(
                "method {method} not allowed on {path}"
            ))),
            _ => Ok(json(
                404,
                &ErrorResponse {
                    error: format!("no route for {path}"),
                },
            )),
        }
    }
}

/// A running server. Dropping the handle without calling
/// [`ServerHandle::shutdown`] leaves the workers running.
pub struct ServerHandle {
    addr: Option<SocketAddr>,
    server: Arc<Server>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> Option<SocketAddr> {
        self.addr
    }

    /// Blocks until every worker exits.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn respond(service: &QueryService, mut request: tiny_http::Request) {
    let mut body = Vec::new();
    let read = request.as_reader().take(MAX_BODY).read_to_end(&mut body);
    let (status, text) = match read {
        Ok(_) => service.handle(request.method().as_str(), request.url(), &body),
        Err(e) => error_response(&Error::BadRequest(format!("reading body: {e}"))),
    };
    log::info!("{} {} -> {status}", request.method(), request.url());
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_string(text)
        .with_status_code(status)
        .with_header(header);
    if let Err(e) = request.respond(response) {
        log::warn!("failed to send response: {e}");
    }
}

/// Starts `workers` threads answering requests on `addr`.
pub fn serve(bundle: Arc<IndexBundle>, addr: &str, workers: usize) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Bind {
        addr: addr.to_owned(),
        msg: e.to_string(),
    })?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    let service = QueryService::new(bundle);
    let workers = (0..workers.max(1))
        .map(|_| {
            let (server, stop, service) = (server.clone(), stop.clone(), service.clone());
            std::thread::spawn(move || loop {
                match server.recv() {
                    Ok(rq) => {
                        if rq.method() == &Method::Head {
                            let _ = rq.respond(Response::empty(200));
                            continue;
                        }
                        respond(&service, rq)
                    }
                    Err(e) => {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        log::warn!("accept failed: {e}");
                    }
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        addr: server.server_addr().to_ip(),
        server,
        stop,
        workers,
    })
}
