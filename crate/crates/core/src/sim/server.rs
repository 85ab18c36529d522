//! HTTP front end for the simulated backends.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tiny_http::{Header, Method, Response, Server};

use crate::http::{ErrorBody, TEXT_LM_PATH, VIDEO_QA_PATH};
use crate::protocol::{TextLmRequest, VideoQaRequest};

use super::{sim_text_lm, sim_video_qa, SimError, World};

#[derive(Debug, Default)]
pub struct RequestStats {
    pub video_qa: AtomicU64,
    pub text_lm: AtomicU64,
    pub errors: AtomicU64,
}

/// Routes one request body; returns the status code and JSON reply.
pub fn handle(world: &World, method: &str, path: &str, body: &str) -> (u16, String) {
    fn error(status: u16, message: String) -> (u16, String) {
        (
            status,
            serde_json::to_string(&ErrorBody { error: message }).expect("error body serializes"),
        )
    }
    fn status_of(e: &SimError) -> u16 {
        match e {
            SimError::UnknownVideo(_) => 404,
            SimError::UnrecognizedPrompt(_) => 422,
            _ => 400,
        }
    }
    if method != "POST" {
        return error(405, format!("{method} not allowed"));
    }
    match path {
        VIDEO_QA_PATH => match serde_json::from_str::<VideoQaRequest>(body) {
            Ok(req) => match sim_video_qa(&req, world) {
                Ok(resp) => (200, serde_json::to_string(&resp).expect("response serializes")),
                Err(e) => error(status_of(&e), e.to_string()),
            },
            Err(e) => error(400, format!("malformed request: {e}")),
        },
        TEXT_LM_PATH => match serde_json::from_str::<TextLmRequest>(body) {
            Ok(req) => match sim_text_lm(&req, world) {
                Ok(resp) => (200, serde_json::to_string(&resp).expect("response serializes")),
                Err(e) => error(status_of(&e), e.to_string()),
            },
            Err(e) => error(400, format!("malformed request: {e}")),
        },
        other => error(404, format!("no route {other}")),
    }
}

/// A running simulation server; stops when dropped.
pub struct SimServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<RequestStats>,
    workers: Vec<JoinHandle<()>>,
}

impl SimServer {
    /// Binds `addr` (use port 0 for any free port) and serves on `threads` workers.
    pub fn start(world: Arc<World>, addr: &str, threads: usize) -> Result<Self, SimError> {
        let server = Arc::new(Server::http(addr).map_err(|e| SimError::Server(format!("{addr}: {e}")))?);
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| SimError::Server("not an IP listener".into()))?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(RequestStats::default());
        let workers = (0..threads.max(1))
            .map(|_| {
                let (server, world, stop, stats) = (server.clone(), world.clone(), stop.clone(), stats.clone());
                std::thread::spawn(move || serve_loop(&server, &world, &stop, &stats))
            })
            .collect();
        log::info!("sim server listening on http://{local}");
        Ok(SimServer {
            addr: local,
            stop,
            stats,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stats(&self) -> &RequestStats {
        &self.stats
    }

    /// Blocks until the server is stopped from another thread.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        drop(self);
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        log::info!(
            "sim server stopped: {} video_qa, {} text_lm, {} errors",
            self.stats.video_qa.load(Ordering::Relaxed),
            self.stats.text_lm.load(Ordering::Relaxed),
            self.stats.errors.load(Ordering::Relaxed)
        );
    }
}

fn serve_loop(server: &Server, world: &World, stop: &AtomicBool, stats: &RequestStats) {
    let json = Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    while !stop.load(Ordering::SeqCst) {
        let mut request = match server.recv_timeout(Duration::from_millis(50)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("sim server receive failed: {e}");
                continue;
            }
        };
        let mut body = String::new();
        let (status, reply) = match request.as_reader().read_to_string(&mut body) {
            Ok(_) => {
                let method = if *request.method() == Method::Post {
                    "POST"
                } else {
                    "OTHER"
                };
                handle(world, method, request.url(), &body)
            }
            Err(e) => (
                400,
                serde_json::to_string(&ErrorBody { error: e.to_string() }).expect("serializes"),
            ),
        };
        let counter = match request.url() {
            VIDEO_QA_PATH => &stats.video_qa,
            TEXT_LM_PATH => &stats.text_lm,
            _ => &stats.errors,
        };
        let total = counter.fetch_add(1, Ordering::Relaxed) + 1;
        if status != 200 {
            stats.errors.fetch_add(1, Ordering::Relaxed);
        }
        if total % 1000 == 0 {
            log::info!("sim server: {total} requests on {}", request.url());
        }
        let response = Response::from_string(reply)
            .with_status_code(status)
            .with_header(json.clone());
        if let Err(e) = request.respond(response) {
            log::warn!("sim server reply failed: {e}");
        }
    }
}
